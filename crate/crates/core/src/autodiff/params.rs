//! Named trainable tensors and their gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::rng::stream;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Frozen parameters never receive gradients or optimizer updates.
    pub requires_grad: bool,
}

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Glorot-uniform over the last two extents.
    Glorot,
    Uniform(f64),
    Normal(f64),
}

/// Owns every parameter of a model. Initialization draws from a stream
/// derived from `(seed, name)` so adding or removing a parameter leaves
/// the initial values of all others unchanged.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let mut rng = stream(self.seed, &["init", name]);
        let value = init_tensor(shape, init, &mut rng);
        self.insert(name, value, true)
    }

    pub fn insert(&mut self, name: &str, value: Tensor, requires_grad: bool) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter name {name:?}");
        self.params.push(Param {
            name: name.to_string(),
            value,
            requires_grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_requires_grad(&mut self, id: ParamId, flag: bool) {
        self.params[id.0].requires_grad = flag;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrite every trainable parameter with `N(0, scale²)` draws.
    /// Used by verification harnesses that need non-degenerate weights.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        for p in &mut self.params {
            if !p.requires_grad {
                continue;
            }
            let mut rng = stream(seed, &["randomize", &p.name]);
            let shape = p.value.shape().to_vec();
            p.value = init_tensor(&shape, Init::Normal(scale), &mut rng);
        }
    }
}

fn init_tensor(shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Zeros => vec![0.0; n],
        Init::Constant(c) => vec![c; n],
        Init::Glorot => {
            let (fan_in, fan_out) = match shape.len() {
                0 => (1, 1),
                1 => (shape[0], shape[0]),
                k => (shape[k - 2], shape[k - 1]),
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        }
        Init::Uniform(b) => (0..n).map(|_| rng.gen_range(-b..b)).collect(),
        Init::Normal(s) => (0..n).map(|_| s * standard_normal(rng)).collect(),
    };
    Tensor::new(shape, data).expect("shape product matches")
}

/// Box-Muller; avoids pulling in a distributions crate for one sampler.
pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-parameter gradient buffers produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub(crate) fn set(&mut self, id: ParamId, g: Tensor) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0] = Some(g);
    }

    /// Add `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::all_finite)
    }
}
