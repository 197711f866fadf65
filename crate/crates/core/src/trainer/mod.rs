//! Training loop shared by the role labeler and the predicate tagger.
//!
//! Each sentence gets its own tape and dropout stream derived from
//! `(seed, step, sentence)`. Per-sentence gradients may be computed in
//! parallel; they are summed in batch order, so results are identical for
//! any thread count.

pub mod losses;
pub mod optim;
pub mod tagger;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Gradients, ParamStore, Tape, Tensor};
use crate::config::{RunConfig, TrainConfig};
use crate::corpus::{Embeddings, FeatureFile, SemanticGraph, Sentence, Vocab};
use crate::encoder::SentenceInput;
use crate::error::{Error, Result};
use crate::eval::{semantic_f1, EvalResult};
use crate::model::{LossParts, ModelSpec, SrlModel};
use crate::rng::stream;
use optim::{clip_global_norm, AdamConfig, Optimizer, Phase};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Start {
        seed: u64,
        config: serde_json::Value,
    },
    Step {
        step: usize,
        loss: f64,
        arc_loss: Option<f64>,
        label_loss: Option<f64>,
        lr: f64,
        phase: &'static str,
    },
    Eval {
        step: usize,
        precision: f64,
        recall: f64,
        f1: f64,
        best_f1: f64,
        best_step: usize,
    },
    PhaseSwitch {
        step: usize,
        phase: &'static str,
    },
    Stop {
        step: usize,
        reason: String,
        best_f1: Option<f64>,
        best_step: Option<usize>,
    },
}

impl LogEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log events serialize")
    }
}

/// Something trainable with per-example losses and a dev metric.
pub trait Objective: Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn num_examples(&self) -> usize;
    fn example_tokens(&self, i: usize) -> usize;
    fn example_loss(&self, tape: &mut Tape, i: usize) -> Result<LossParts>;
    /// `None` when there is no development data.
    fn evaluate(&self) -> Result<Option<EvalResult>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub steps: usize,
    pub best: Option<(usize, EvalResult)>,
    pub stop_reason: String,
    pub final_phase: Phase,
}

/// Groups example indices into batches of about `batch_tokens` tokens,
/// after shuffling with `rng`. Every batch holds at least one example.
pub fn make_batches(tokens: &[usize], batch_tokens: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut size = 0;
    for i in order {
        if !cur.is_empty() && size + tokens[i] > batch_tokens {
            batches.push(std::mem::take(&mut cur));
            size = 0;
        }
        size += tokens[i];
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

struct ExampleGrad {
    grads: Gradients,
    loss: f64,
    arc: Option<f64>,
    label: Option<f64>,
}

fn example_grad<O: Objective>(obj: &O, seed: u64, step: usize, i: usize) -> Result<ExampleGrad> {
    let rng = stream(seed, &["dropout", &step.to_string(), &i.to_string()]);
    let mut tape = Tape::training(obj.params(), rng);
    let parts = obj.example_loss(&mut tape, i)?;
    let loss = tape.value(parts.total).item();
    let arc = parts.arc.map(|v| tape.value(v).item());
    let label = parts.label.map(|v| tape.value(v).item());
    let grads = tape.backward(parts.total)?;
    Ok(ExampleGrad {
        grads,
        loss,
        arc,
        label,
    })
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>, n: f64) -> Option<f64> {
    let mut total = 0.0;
    for x in xs {
        total += x?;
    }
    Some(total / n)
}

/// Trains `obj` until `max_steps`, early stopping, or the target dev F1.
/// The parameters with the best dev F1 are restored at the end.
pub fn fit<O: Objective>(
    obj: &mut O,
    cfg: &TrainConfig,
    seed: u64,
    threads: usize,
    log: &mut dyn FnMut(&LogEvent),
) -> Result<FitOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Model(format!("thread pool: {e}")))?;
    let tokens: Vec<usize> = (0..obj.num_examples()).map(|i| obj.example_tokens(i)).collect();
    if tokens.is_empty() {
        return Err(Error::Model("no training examples".into()));
    }
    let mut opt = Optimizer::new(
        obj.params(),
        AdamConfig {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        },
    );
    let mut best: Option<(usize, EvalResult, ParamStore)> = None;
    let mut epoch = 0;
    let mut queue: std::collections::VecDeque<Vec<usize>> = Default::default();
    let mut step = 0;
    let mut stop_reason = "max_steps".to_string();

    while step < cfg.max_steps {
        if queue.is_empty() {
            let mut rng = stream(seed, &["shuffle", &epoch.to_string()]);
            queue.extend(make_batches(&tokens, cfg.batch_tokens, &mut rng));
            epoch += 1;
        }
        let batch = queue.pop_front().expect("non-empty queue");
        step += 1;

        let results: Vec<Result<ExampleGrad>> = {
            let obj_ref: &O = obj;
            pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| example_grad(obj_ref, seed, step, i))
                    .collect()
            })
        };
        let mut grads = Gradients::new(obj.params().len());
        let mut per = Vec::with_capacity(results.len());
        for r in results {
            let r = r?;
            grads.merge(&r.grads);
            per.push((r.loss, r.arc, r.label));
        }
        let n = per.len() as f64;
        grads.scale(1.0 / n);
        let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss {loss}"),
            });
        }
        let arc = mean_opt(per.iter().map(|p| p.1), n);
        let label = mean_opt(per.iter().map(|p| p.2), n);
        clip_global_norm(&mut grads, cfg.clip_norm);
        let lr = cfg.lr * cfg.lr_decay.powi(((step - 1) / cfg.lr_decay_steps) as i32);
        opt.step(obj.params_mut(), &grads, lr, cfg.l2);
        log(&LogEvent::Step {
            step,
            loss,
            arc_loss: arc,
            label_loss: label,
            lr,
            phase: opt.phase().name(),
        });

        let at_end = step == cfg.max_steps;
        if step % cfg.eval_every == 0 || at_end {
            if let Some(res) = obj.evaluate()? {
                if best.as_ref().is_none_or(|b| res.f1 > b.1.f1) {
                    best = Some((step, res, obj.params().clone()));
                }
                let (bs, br, _) = best.as_ref().unwrap();
                log(&LogEvent::Eval {
                    step,
                    precision: res.precision,
                    recall: res.recall,
                    f1: res.f1,
                    best_f1: br.f1,
                    best_step: *bs,
                });
                let since = step - bs;
                if cfg.target_dev_f1.is_some_and(|t| br.f1 >= t) {
                    stop_reason = "target_dev_f1".into();
                    break;
                }
                if opt.phase() == Phase::Adam && since >= cfg.phase_switch_patience {
                    opt.switch_to_amsgrad();
                    log(&LogEvent::PhaseSwitch {
                        step,
                        phase: opt.phase().name(),
                    });
                }
                if since >= cfg.early_stop_patience {
                    stop_reason = "early_stop".into();
                    break;
                }
            }
        }
    }
    let best_summary = best.as_ref().map(|(s, r, _)| (*s, *r));
    if let Some((_, _, params)) = best {
        *obj.params_mut() = params;
    }
    log(&LogEvent::Stop {
        step,
        reason: stop_reason.clone(),
        best_f1: best_summary.map(|b| b.1.f1),
        best_step: best_summary.map(|b| b.0),
    });
    Ok(FitOutcome {
        steps: step,
        best: best_summary,
        stop_reason,
        final_phase: opt.phase(),
    })
}

/// A sentence ready for the role labeler.
#[derive(Clone, Debug)]
pub struct Example {
    pub sentence: Sentence,
    pub gold: SemanticGraph,
    pub input: SentenceInput,
}

/// Builds model inputs, attaching feature rows when the model expects them.
pub fn prepare(
    model: &SrlModel,
    corpus: &[(Sentence, SemanticGraph)],
    features: Option<&FeatureFile>,
) -> Result<Vec<Example>> {
    if let Some(f) = features {
        f.check_alignment(corpus.iter().map(|(s, _)| s))?;
    }
    let wants = model.spec.encoder.plm_input_dim;
    if wants.is_some() && features.is_none() {
        return Err(Error::Model(
            "model uses precomputed features but none were given".into(),
        ));
    }
    if let (Some(d), Some(f)) = (wants, features) {
        if f.dim() != d {
            return Err(Error::Model(format!(
                "features have dimension {}, model expects {d}",
                f.dim()
            )));
        }
    }
    corpus
        .iter()
        .enumerate()
        .map(|(i, (s, g))| {
            let feats: Option<Tensor> = match (wants, features) {
                (Some(_), Some(f)) => Some(f.tensor(i)?),
                _ => None,
            };
            Ok(Example {
                sentence: s.clone(),
                gold: g.clone(),
                input: model.input(s, feats),
            })
        })
        .collect()
}

/// Predicts a graph for every example.
pub fn predict_all(model: &SrlModel, examples: &[Example]) -> Result<Vec<(Sentence, SemanticGraph)>> {
    examples
        .par_iter()
        .map(|e| Ok((e.sentence.clone(), model.predict(&e.input)?)))
        .collect()
}

/// Role labeling objective; the dev metric is labeled arc F1 without senses.
pub struct SrlObjective<'a> {
    pub model: &'a mut SrlModel,
    pub train: &'a [Example],
    pub dev: &'a [Example],
    pub lambda: f64,
}

impl Objective for SrlObjective<'_> {
    fn params(&self) -> &ParamStore {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.params
    }

    fn num_examples(&self) -> usize {
        self.train.len()
    }

    fn example_tokens(&self, i: usize) -> usize {
        self.train[i].input.len()
    }

    fn example_loss(&self, tape: &mut Tape, i: usize) -> Result<LossParts> {
        let e = &self.train[i];
        self.model.loss(tape, &e.input, &e.gold, self.lambda)
    }

    fn evaluate(&self) -> Result<Option<EvalResult>> {
        if self.dev.is_empty() {
            return Ok(None);
        }
        let pred = predict_all(self.model, self.dev)?;
        let gold: Vec<_> = self.dev.iter().map(|e| (e.sentence.clone(), e.gold.clone())).collect();
        Ok(Some(semantic_f1(&gold, &pred, false)?))
    }
}

/// Inputs of a full training run.
pub struct TrainRun<'a> {
    pub config: &'a RunConfig,
    pub train: &'a [(Sentence, SemanticGraph)],
    pub dev: &'a [(Sentence, SemanticGraph)],
    pub embeddings: Option<&'a Embeddings>,
    pub train_features: Option<&'a FeatureFile>,
    pub dev_features: Option<&'a FeatureFile>,
    /// Keep every triaffine tensor at zero and out of training.
    pub freeze_triaffine: bool,
}

/// Builds the vocabulary and model from the training corpus, then fits
/// it. The first log event records the seed and the full configuration.
pub fn train(run: &TrainRun, log: &mut dyn FnMut(&LogEvent)) -> Result<(SrlModel, FitOutcome)> {
    let cfg = run.config;
    cfg.validate()?;
    let vocab = Vocab::build(run.train.iter().map(|(s, g)| (s, g)));
    let mut encoder = cfg.encoder.clone();
    if encoder.plm_input_dim.is_none() {
        encoder.plm_input_dim = run.train_features.map(FeatureFile::dim);
    }
    let spec = ModelSpec {
        encoder,
        parts: cfg.parts,
        decode: cfg.effective_decode(),
        vocab,
    };
    log(&LogEvent::Start {
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
    });
    let mut model = SrlModel::new(spec, run.embeddings, cfg.seed)?;
    if run.freeze_triaffine {
        model.freeze_triaffine_at_zero();
    }
    let train = prepare(&model, run.train, run.train_features)?;
    let dev = prepare(&model, run.dev, run.dev_features)?;
    let mut obj = SrlObjective {
        model: &mut model,
        train: &train,
        dev: &dev,
        lambda: cfg.train.lambda,
    };
    let outcome = fit(&mut obj, &cfg.train, cfg.seed, cfg.threads, log)?;
    Ok((model, outcome))
}

/// Trains the predicate tagger on the sentences of `run`.
pub fn train_tagger(run: &TrainRun, log: &mut dyn FnMut(&LogEvent)) -> Result<(tagger::PredicateTagger, FitOutcome)> {
    let cfg = run.config;
    cfg.validate()?;
    let train: Vec<Sentence> = run.train.iter().map(|(s, _)| s.clone()).collect();
    let dev: Vec<Sentence> = run.dev.iter().map(|(s, _)| s.clone()).collect();
    log(&LogEvent::Start {
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
    });
    let mut t = tagger::PredicateTagger::new(&cfg.encoder, &train, cfg.seed)?;
    let mut obj = tagger::TaggerObjective {
        tagger: &mut t,
        train: &train,
        dev: &dev,
    };
    let outcome = fit(&mut obj, &cfg.train, cfg.seed, cfg.threads, log)?;
    Ok((t, outcome))
}
