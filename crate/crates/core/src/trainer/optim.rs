//! Adam with an optional switch to AMSGrad, plus gradient clipping.

use crate::autodiff::{Gradients, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Adam,
    AmsGrad,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::AmsGrad => "amsgrad",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    v_max: Vec<Tensor>,
    t: u64,
    phase: Phase,
}

impl Optimizer {
    pub fn new(params: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Optimizer {
            cfg,
            m: zeros.clone(),
            v: zeros.clone(),
            v_max: zeros,
            t: 0,
            phase: Phase::Adam,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// From now on the second moment used in updates never decreases.
    pub fn switch_to_amsgrad(&mut self) {
        if self.phase == Phase::Adam {
            self.v_max = self.v.clone();
            self.phase = Phase::AmsGrad;
        }
    }

    /// One update. `l2` adds `2·l2·θ` to each gradient; parameters that do
    /// not require gradients are left alone.
    #[allow(clippy::needless_range_loop)]
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64, l2: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let idx = id.index();
            let param = params.get_mut(id);
            if !param.requires_grad {
                continue;
            }
            let g = grads.get(id);
            let (m, v, vm) = (&mut self.m[idx], &mut self.v[idx], &mut self.v_max[idx]);
            let theta = param.value.data_mut();
            for k in 0..theta.len() {
                let gk = g.map_or(0.0, |g| g.data()[k]) + 2.0 * l2 * theta[k];
                let mk = &mut m.data_mut()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let second = match self.phase {
                    Phase::Adam => *vk,
                    Phase::AmsGrad => {
                        let x = &mut vm.data_mut()[k];
                        *x = x.max(*vk);
                        *x
                    }
                };
                let m_hat = *mk / bc1;
                let v_hat = second / bc2;
                theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
