//! Model, decoding, training, and run configuration.
//!
//! Defaults follow the published hyper-parameter table for the full-size
//! model; [`EncoderConfig::tiny`] is a small variant used by tests and the
//! gradient checker.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub lemma_dim: usize,
    pub indicator_dim: usize,
    pub plm_linear_dim: usize,
    /// Width of the precomputed feature vectors, when features are used.
    pub plm_input_dim: Option<usize>,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub mlp_arc_label_dim: usize,
    pub mlp_triaffine_dim: usize,
    /// Sense projection width inside the predicate tagger.
    pub sense_dim: usize,
    pub embed_dropout: f64,
    pub lstm_ff_dropout: f64,
    pub lstm_recurrent_dropout: f64,
    pub arc_dropout: f64,
    pub label_dropout: f64,
    pub triaffine_dropout: f64,
    pub leaky_slope: f64,
    /// Update pretrained word vectors during training.
    pub tune_word_embeddings: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 100,
            lemma_dim: 100,
            indicator_dim: 50,
            plm_linear_dim: 100,
            plm_input_dim: None,
            lstm_layers: 3,
            lstm_hidden: 600,
            mlp_arc_label_dim: 600,
            mlp_triaffine_dim: 150,
            sense_dim: 50,
            embed_dropout: 0.20,
            lstm_ff_dropout: 0.45,
            lstm_recurrent_dropout: 0.25,
            arc_dropout: 0.25,
            label_dropout: 0.33,
            triaffine_dropout: 0.25,
            leaky_slope: 0.1,
            tune_word_embeddings: false,
        }
    }
}

impl EncoderConfig {
    /// Small dimensions for tests and gradient checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            word_dim: 4,
            lemma_dim: 3,
            indicator_dim: 2,
            plm_linear_dim: 3,
            plm_input_dim: None,
            lstm_layers: 1,
            lstm_hidden: 4,
            mlp_arc_label_dim: 5,
            mlp_triaffine_dim: 3,
            sense_dim: 4,
            ..Self::default()
        }
    }

    pub fn without_dropout(mut self) -> Self {
        self.embed_dropout = 0.0;
        self.lstm_ff_dropout = 0.0;
        self.lstm_recurrent_dropout = 0.0;
        self.arc_dropout = 0.0;
        self.label_dropout = 0.0;
        self.triaffine_dropout = 0.0;
        self
    }

    /// Width of the concatenated token embedding.
    pub fn input_dim(&self) -> usize {
        let plm = if self.plm_input_dim.is_some() {
            self.plm_linear_dim
        } else {
            0
        };
        self.word_dim + self.lemma_dim + self.indicator_dim + plm
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let dims = [
            ("word_dim", self.word_dim),
            ("lemma_dim", self.lemma_dim),
            ("indicator_dim", self.indicator_dim),
            ("plm_linear_dim", self.plm_linear_dim),
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("mlp_arc_label_dim", self.mlp_arc_label_dim),
            ("mlp_triaffine_dim", self.mlp_triaffine_dim),
            ("sense_dim", self.sense_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(ConfigError::Invalid(format!("encoder.{name} must be positive")));
        }
        let rates = [
            self.embed_dropout,
            self.lstm_ff_dropout,
            self.lstm_recurrent_dropout,
            self.arc_dropout,
            self.label_dropout,
            self.triaffine_dropout,
        ];
        if rates.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(ConfigError::Invalid("dropout rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Mean-field iterations; 0 gives the first-order model.
    pub iterations: usize,
    pub arc_threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            iterations: 3,
            arc_threshold: 0.5,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations > 10 {
            return Err(ConfigError::Invalid("decode.iterations must be in 0..=10".into()));
        }
        if !(self.arc_threshold > 0.0 && self.arc_threshold < 1.0) {
            return Err(ConfigError::Invalid("decode.arc_threshold must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the arc loss against the label loss.
    pub lambda: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr: f64,
    /// Multiplicative decay applied every `lr_decay_steps`.
    pub lr_decay: f64,
    pub lr_decay_steps: usize,
    pub l2: f64,
    /// Steps without dev improvement before switching to AMSGrad.
    pub phase_switch_patience: usize,
    /// Steps without dev improvement before stopping.
    pub early_stop_patience: usize,
    pub max_steps: usize,
    pub batch_tokens: usize,
    pub eval_every: usize,
    pub clip_norm: f64,
    /// Stop as soon as dev F1 reaches this value.
    pub target_dev_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            adam_beta1: 0.0,
            adam_beta2: 0.95,
            adam_eps: 1e-12,
            lr: 1e-2,
            lr_decay: 0.5,
            lr_decay_steps: 10_000,
            l2: 3e-9,
            phase_switch_patience: 5_000,
            early_stop_patience: 10_000,
            max_steps: 100_000,
            batch_tokens: 4_000,
            eval_every: 100,
            clip_norm: 5.0,
            target_dev_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::Invalid("train.lambda must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(ConfigError::Invalid("adam betas must be in [0, 1)".into()));
        }
        let positive = [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("adam_eps", self.adam_eps),
            ("clip_norm", self.clip_norm),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v <= 0.0) {
            return Err(ConfigError::Invalid(format!("train.{name} must be positive")));
        }
        if self.l2 < 0.0 {
            return Err(ConfigError::Invalid("train.l2 must be non-negative".into()));
        }
        if self.lr_decay_steps == 0 || self.eval_every == 0 || self.batch_tokens == 0 || self.max_steps == 0 {
            return Err(ConfigError::Invalid(
                "train step counts and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A second-order part type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    /// Two arguments of one predicate.
    Sib,
    /// Two predicates sharing one argument.
    Cop,
    /// A predicate that is itself an argument.
    Gp,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Sib, Part::Cop, Part::Gp];

    pub fn name(self) -> &'static str {
        match self {
            Part::Sib => "sib",
            Part::Cop => "cop",
            Part::Gp => "gp",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Part {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sib" => Ok(Part::Sib),
            "cop" => Ok(Part::Cop),
            "gp" => Ok(Part::Gp),
            other => Err(ConfigError::Invalid(format!("unknown part {other:?}"))),
        }
    }
}

/// Subset of second-order parts the model scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct PartSet {
    pub sib: bool,
    pub cop: bool,
    pub gp: bool,
}

impl PartSet {
    pub const NONE: PartSet = PartSet {
        sib: false,
        cop: false,
        gp: false,
    };
    pub const ALL: PartSet = PartSet {
        sib: true,
        cop: true,
        gp: true,
    };

    pub fn contains(self, p: Part) -> bool {
        match p {
            Part::Sib => self.sib,
            Part::Cop => self.cop,
            Part::Gp => self.gp,
        }
    }

    pub fn with(mut self, p: Part) -> Self {
        match p {
            Part::Sib => self.sib = true,
            Part::Cop => self.cop = true,
            Part::Gp => self.gp = true,
        }
        self
    }

    pub fn is_empty(self) -> bool {
        !(self.sib || self.cop || self.gp)
    }

    pub fn iter(self) -> impl Iterator<Item = Part> {
        Part::ALL.into_iter().filter(move |&p| self.contains(p))
    }

    /// All eight subsets, smallest first.
    pub fn all_subsets() -> Vec<PartSet> {
        (0..8u8)
            .map(|m| PartSet {
                sib: m & 1 != 0,
                cop: m & 2 != 0,
                gp: m & 4 != 0,
            })
            .collect()
    }
}

impl fmt::Display for PartSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.iter().map(Part::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl Serialize for PartSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let names: Vec<&str> = self.iter().map(Part::name).collect();
        names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PartSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names.iter().try_fold(PartSet::NONE, |set, n| {
            n.parse::<Part>().map(|p| set.with(p)).map_err(serde::de::Error::custom)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Gold predicates and senses are given at inference.
    #[default]
    WithPredicates,
    /// Predicates and senses are tagged before argument labeling.
    WithoutPredicates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub train_features: Option<PathBuf>,
    pub dev_features: Option<PathBuf>,
    /// Directory receiving checkpoints, logs, and the config echo.
    pub output_dir: Option<PathBuf>,
}

/// Everything a run needs, merged from defaults, a config file, and overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub decode: DecodeConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub mode: Mode,
    pub parts: PartSet,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::default(),
            decode: DecodeConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
            mode: Mode::default(),
            parts: PartSet::ALL,
            seed: 1,
            threads: 1,
        }
    }
}

impl RunConfig {
    /// Merge `overrides` (dotted `key=value` pairs) into `base`, which
    /// is a (possibly partial) JSON config; missing fields take defaults.
    /// Values parse as JSON when possible and as strings otherwise.
    pub fn from_json_with_overrides(
        base: Option<serde_json::Value>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(base) = base {
            merge_json(&mut value, base);
        }
        for (key, raw) in overrides {
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            set_dotted(&mut value, key, parsed)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.encoder.validate()?;
        self.decode.validate()?;
        self.train.validate()?;
        if self.threads == 0 {
            return Err(ConfigError::Invalid("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Decoding settings actually used: no parts means no mean-field steps.
    pub fn effective_decode(&self) -> DecodeConfig {
        let mut d = self.decode.clone();
        if self.parts.is_empty() {
            d.iterations = 0;
        }
        d
    }
}

fn merge_json(dst: &mut serde_json::Value, src: serde_json::Value) {
    match (dst, src) {
        (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_dotted(root: &mut serde_json::Value, key: &str, v: serde_json::Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        if !obj.contains_key(*p) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), v);
            return Ok(());
        }
        cur = obj.get_mut(*p).unwrap();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_settings() {
        let c = RunConfig::default();
        assert_eq!(c.encoder.input_dim(), 250);
        assert_eq!(c.train.lambda, 0.1);
        assert_eq!(c.train.adam_beta2, 0.95);
        assert_eq!(c.decode.iterations, 3);
    }

    #[test]
    fn overrides_beat_file_beat_defaults() {
        let base = serde_json::json!({"train": {"lr": 0.5, "lambda": 0.3}, "parts": ["sib"]});
        let c = RunConfig::from_json_with_overrides(
            Some(base),
            &[
                ("train.lr".into(), "0.25".into()),
                ("mode".into(), "without_predicates".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.train.lr, 0.25);
        assert_eq!(c.train.lambda, 0.3);
        assert_eq!(c.train.max_steps, 100_000);
        assert_eq!(c.parts, PartSet::NONE.with(Part::Sib));
        assert_eq!(c.mode, Mode::WithoutPredicates);
    }

    #[test]
    fn unknown_override_key_rejected() {
        let err = RunConfig::from_json_with_overrides(None, &[("train.nope".into(), "1".into())]);
        assert!(matches!(err, Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn empty_part_set_forces_first_order() {
        let c = RunConfig {
            parts: PartSet::NONE,
            ..RunConfig::default()
        };
        assert_eq!(c.effective_decode().iterations, 0);
    }

    #[test]
    fn part_set_serde() {
        let s = serde_json::to_string(&PartSet::ALL).unwrap();
        assert_eq!(s, r#"["sib","cop","gp"]"#);
        assert_eq!(PartSet::all_subsets().len(), 8);
    }
}
