//! Token embeddings, the stacked BiLSTM, and role-specific MLP views.

use crate::autodiff::{AutodiffError, Init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::config::{EncoderConfig, Part, PartSet};
use crate::corpus::{Embeddings, SymbolTable};

type Res<T> = Result<T, AutodiffError>;

/// Affine map `x·W + b` over rows.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        Linear {
            weight: store.add(&format!("{name}.weight"), &[input, output], Init::Glorot),
            bias: store.add(&format!("{name}.bias"), &[output], Init::Zeros),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Res<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Single hidden layer with a leaky rectifier and output dropout.
#[derive(Clone, Debug)]
pub struct Mlp {
    linear: Linear,
    slope: f64,
    dropout: f64,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, slope: f64, dropout: f64) -> Self {
        Mlp {
            linear: Linear::new(store, name, input, output),
            slope,
            dropout,
        }
    }

    pub fn linear(&self) -> &Linear {
        &self.linear
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Res<Var> {
        let y = self.linear.forward(tape, x)?;
        let y = tape.leaky_relu(y, self.slope);
        Ok(tape.dropout(y, self.dropout))
    }
}

/// Row-shared ("variational") dropout: one mask of width `cols` reused
/// for every row.
fn shared_row_mask(tape: &mut Tape, rows: usize, cols: usize, p: f64) -> Option<Tensor> {
    let row = tape.dropout_mask(&[1, cols], p)?;
    let data = row.data().repeat(rows);
    Some(Tensor::new(&[rows, cols], data).expect("tiled mask"))
}

#[derive(Clone, Debug)]
struct LstmDirection {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

impl LstmDirection {
    fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Self {
        let bias = store.add(&format!("{name}.bias"), &[4 * hidden], Init::Zeros);
        // forget-gate bias starts at 1
        store.get_mut(bias).value.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmDirection {
            w_ih: store.add(&format!("{name}.w_ih"), &[input, 4 * hidden], Init::Glorot),
            w_hh: store.add(&format!("{name}.w_hh"), &[hidden, 4 * hidden], Init::Glorot),
            bias,
        }
    }

    /// Hidden states for every position, in sentence order.
    fn run(&self, tape: &mut Tape, x: Var, hidden: usize, reverse: bool, rec_dropout: f64) -> Res<Vec<Var>> {
        let n = tape.shape(x)[0];
        let w_ih = tape.param(self.w_ih);
        let w_hh = tape.param(self.w_hh);
        let bias = tape.param(self.bias);
        let proj = tape.matmul(x, w_ih)?;
        let proj = tape.add_bias(proj, bias)?;
        let rec_mask = tape.dropout_mask(&[1, hidden], rec_dropout);
        let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut c = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut states = vec![h; n];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..n).rev())
        } else {
            Box::new(0..n)
        };
        for t in order {
            let xt = tape.slice(proj, 0, t, t + 1)?;
            let h_in = match &rec_mask {
                Some(m) => tape.mul_const(h, m)?,
                None => h,
            };
            (h, c) = tape.lstm_step(xt, h_in, c, w_hh)?;
            states[t] = h;
        }
        Ok(states)
    }
}

/// Stacked bidirectional LSTM.
#[derive(Clone, Debug)]
pub struct BiLstm {
    layers: Vec<(LstmDirection, LstmDirection)>,
    hidden: usize,
    ff_dropout: f64,
    rec_dropout: f64,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, cfg: &EncoderConfig) -> Self {
        let mut layers = Vec::with_capacity(cfg.lstm_layers);
        let mut width = input;
        for l in 0..cfg.lstm_layers {
            layers.push((
                LstmDirection::new(store, &format!("{name}.l{l}.fwd"), width, cfg.lstm_hidden),
                LstmDirection::new(store, &format!("{name}.l{l}.bwd"), width, cfg.lstm_hidden),
            ));
            width = 2 * cfg.lstm_hidden;
        }
        BiLstm {
            layers,
            hidden: cfg.lstm_hidden,
            ff_dropout: cfg.lstm_ff_dropout,
            rec_dropout: cfg.lstm_recurrent_dropout,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// `E [n, d_in] -> H [n, 2·hidden]`.
    pub fn forward(&self, tape: &mut Tape, e: Var) -> Res<Var> {
        let n = tape.shape(e)[0];
        if n == 0 {
            return Err(AutodiffError::Shape {
                op: "encode",
                detail: "empty sentence".into(),
            });
        }
        let mut x = e;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                x = self.ff_dropout(tape, x)?;
            }
            let f = fwd.run(tape, x, self.hidden, false, self.rec_dropout)?;
            let b = bwd.run(tape, x, self.hidden, true, self.rec_dropout)?;
            let f = tape.concat(&f, 0)?;
            let b = tape.concat(&b, 0)?;
            x = tape.concat(&[f, b], 1)?;
        }
        self.ff_dropout(tape, x)
    }

    fn ff_dropout(&self, tape: &mut Tape, x: Var) -> Res<Var> {
        let (rows, cols) = (tape.shape(x)[0], tape.shape(x)[1]);
        match shared_row_mask(tape, rows, cols, self.ff_dropout) {
            Some(m) => tape.mul_const(x, &m),
            None => Ok(x),
        }
    }
}

/// Model-ready view of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceInput {
    pub word_ids: Vec<usize>,
    pub lemma_ids: Vec<usize>,
    pub predicate_flags: Vec<bool>,
    /// `[n, plm_input_dim]` precomputed features, if the model uses them.
    pub features: Option<Tensor>,
}

impl SentenceInput {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    /// 1-based predicate positions.
    pub fn predicates(&self) -> Vec<usize> {
        self.predicate_flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// `e_i = word ⊕ lemma ⊕ indicator ⊕ projected features`.
#[derive(Clone, Debug)]
pub struct Embedder {
    word: ParamId,
    lemma: ParamId,
    indicator: Option<ParamId>,
    plm: Option<Linear>,
    plm_input_dim: Option<usize>,
    dropout: f64,
    output_dim: usize,
}

impl Embedder {
    /// Word vectors are copied from `pretrained` where available (exact,
    /// then lowercase match); when a pretrained file is given the table is
    /// frozen unless `tune_word_embeddings` is set.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        words: &SymbolTable,
        lemmas: &SymbolTable,
        pretrained: Option<&Embeddings>,
        with_indicator: bool,
    ) -> Self {
        let word = store.add(&format!("{name}.word"), &[words.len(), cfg.word_dim], Init::Normal(0.1));
        if let Some(emb) = pretrained.filter(|e| e.dim() == cfg.word_dim) {
            let table = &mut store.get_mut(word).value;
            let data = table.data_mut();
            for (id, w) in words.symbols().iter().enumerate() {
                if let Some(v) = emb.lookup(w) {
                    data[id * cfg.word_dim..(id + 1) * cfg.word_dim].copy_from_slice(v);
                }
            }
            store.set_requires_grad(word, cfg.tune_word_embeddings);
        }
        let lemma = store.add(
            &format!("{name}.lemma"),
            &[lemmas.len(), cfg.lemma_dim],
            Init::Normal(0.1),
        );
        let indicator =
            with_indicator.then(|| store.add(&format!("{name}.indicator"), &[2, cfg.indicator_dim], Init::Normal(0.1)));
        let plm = cfg
            .plm_input_dim
            .map(|d| Linear::new(store, &format!("{name}.plm"), d, cfg.plm_linear_dim));
        let output_dim = cfg.word_dim
            + cfg.lemma_dim
            + if with_indicator { cfg.indicator_dim } else { 0 }
            + if plm.is_some() { cfg.plm_linear_dim } else { 0 };
        Embedder {
            word,
            lemma,
            indicator,
            plm,
            plm_input_dim: cfg.plm_input_dim,
            dropout: cfg.embed_dropout,
            output_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn word_table(&self) -> ParamId {
        self.word
    }

    pub fn forward(&self, tape: &mut Tape, input: &SentenceInput) -> Res<Var> {
        let n = input.len();
        if input.lemma_ids.len() != n || input.predicate_flags.len() != n {
            return Err(AutodiffError::Shape {
                op: "embed",
                detail: format!(
                    "{} words, {} lemmas, {} predicate flags",
                    n,
                    input.lemma_ids.len(),
                    input.predicate_flags.len()
                ),
            });
        }
        let wt = tape.param(self.word);
        let w = tape.embedding(wt, &input.word_ids)?;
        let w = tape.dropout(w, self.dropout);
        let lt = tape.param(self.lemma);
        let l = tape.embedding(lt, &input.lemma_ids)?;
        let l = tape.dropout(l, self.dropout);
        let mut blocks = vec![w, l];
        if let Some(ind) = self.indicator {
            let flags: Vec<usize> = input.predicate_flags.iter().map(|&f| usize::from(f)).collect();
            let it = tape.param(ind);
            let i = tape.embedding(it, &flags)?;
            blocks.push(tape.dropout(i, self.dropout));
        }
        match (&self.plm, &input.features) {
            (Some(proj), Some(f)) => {
                if f.shape() != [n, self.plm_input_dim.unwrap_or(0)] {
                    return Err(AutodiffError::Shape {
                        op: "embed",
                        detail: format!(
                            "features {:?} for {n} tokens, projection expects width {:?}",
                            f.shape(),
                            self.plm_input_dim
                        ),
                    });
                }
                let fv = tape.constant(f.clone());
                blocks.push(proj.forward(tape, fv)?);
            }
            (Some(_), None) => {
                return Err(AutodiffError::Shape {
                    op: "embed",
                    detail: "model expects precomputed features but none were supplied".into(),
                })
            }
            (None, Some(_)) => {
                return Err(AutodiffError::Shape {
                    op: "embed",
                    detail: "features supplied to a model without a feature projection".into(),
                })
            }
            (None, None) => {}
        }
        tape.concat(&blocks, 1)
    }
}

/// Head/dependent views for one second-order part type.
#[derive(Clone, Copy, Debug)]
pub struct PartViews {
    pub head: Var,
    pub dep: Var,
}

/// Role-specific representations of one encoded sentence.
#[derive(Clone, Copy, Debug)]
pub struct EncodedSentence {
    pub h: Var,
    pub arc_head: Var,
    pub arc_dep: Var,
    pub label_head: Var,
    pub label_dep: Var,
    pub sib: Option<PartViews>,
    pub cop: Option<PartViews>,
    pub gp: Option<PartViews>,
    /// Middle token of a grandparent chain; present with `gp`.
    pub head_dep: Option<Var>,
}

/// The MLPs producing every view in [`EncodedSentence`].
#[derive(Clone, Debug)]
pub struct RoleViews {
    arc_head: Mlp,
    arc_dep: Mlp,
    label_head: Mlp,
    label_dep: Mlp,
    parts: Vec<(Part, Mlp, Mlp)>,
    head_dep: Option<Mlp>,
}

impl RoleViews {
    pub fn new(store: &mut ParamStore, input: usize, cfg: &EncoderConfig, parts: PartSet) -> Self {
        let d1 = cfg.mlp_arc_label_dim;
        let d2 = cfg.mlp_triaffine_dim;
        let s = cfg.leaky_slope;
        let mut v = RoleViews {
            arc_head: Mlp::new(store, "mlp.arc_head", input, d1, s, cfg.arc_dropout),
            arc_dep: Mlp::new(store, "mlp.arc_dep", input, d1, s, cfg.arc_dropout),
            label_head: Mlp::new(store, "mlp.label_head", input, d1, s, cfg.label_dropout),
            label_dep: Mlp::new(store, "mlp.label_dep", input, d1, s, cfg.label_dropout),
            parts: Vec::new(),
            head_dep: None,
        };
        for p in parts.iter() {
            v.parts.push((
                p,
                Mlp::new(store, &format!("mlp.{p}_head"), input, d2, s, cfg.triaffine_dropout),
                Mlp::new(store, &format!("mlp.{p}_dep"), input, d2, s, cfg.triaffine_dropout),
            ));
        }
        if parts.gp {
            v.head_dep = Some(Mlp::new(store, "mlp.head_dep", input, d2, s, cfg.triaffine_dropout));
        }
        v
    }

    pub fn forward(&self, tape: &mut Tape, h: Var) -> Res<EncodedSentence> {
        let mut out = EncodedSentence {
            h,
            arc_head: self.arc_head.forward(tape, h)?,
            arc_dep: self.arc_dep.forward(tape, h)?,
            label_head: self.label_head.forward(tape, h)?,
            label_dep: self.label_dep.forward(tape, h)?,
            sib: None,
            cop: None,
            gp: None,
            head_dep: None,
        };
        for (p, head, dep) in &self.parts {
            let views = PartViews {
                head: head.forward(tape, h)?,
                dep: dep.forward(tape, h)?,
            };
            match p {
                Part::Sib => out.sib = Some(views),
                Part::Cop => out.cop = Some(views),
                Part::Gp => out.gp = Some(views),
            }
        }
        if let Some(m) = &self.head_dep {
            out.head_dep = Some(m.forward(tape, h)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::autodiff::gradcheck::DEFAULT_EPS as DEFAULT_EPS_FOR_TESTS;

    fn tables(n: usize) -> (SymbolTable, SymbolTable) {
        let mut w = SymbolTable::with_pad_unk();
        let mut l = SymbolTable::with_pad_unk();
        for i in 0..n {
            w.insert(&format!("w{i}"));
            l.insert(&format!("l{i}"));
        }
        (w, l)
    }

    fn input(n: usize, flags: Vec<bool>) -> SentenceInput {
        SentenceInput {
            word_ids: (0..n).map(|i| 2 + i % 5).collect(),
            lemma_ids: (0..n).map(|i| 2 + (i * 3) % 5).collect(),
            predicate_flags: flags,
            features: None,
        }
    }

    #[test]
    fn embedding_width_defaults() {
        let cfg = EncoderConfig::default();
        let (w, l) = tables(5);
        let mut store = ParamStore::new(0);
        let emb = Embedder::new(&mut store, "emb", &cfg, &w, &l, None, true);
        let mut tape = Tape::new(&store);
        let e = emb.forward(&mut tape, &input(4, vec![false; 4])).unwrap();
        assert_eq!(tape.shape(e), &[4, 250]);
        // every row uses the "not predicate" indicator vector
        let ind = store.value(emb.indicator.unwrap()).row(0).to_vec();
        for r in 0..4 {
            assert_eq!(&tape.value(e).row(r)[200..], &ind[..]);
        }
    }

    #[test]
    fn embedding_width_with_features() {
        let cfg = EncoderConfig {
            plm_input_dim: Some(1024),
            ..EncoderConfig::default()
        };
        let (w, l) = tables(5);
        let mut store = ParamStore::new(0);
        let emb = Embedder::new(&mut store, "emb", &cfg, &w, &l, None, true);
        let mut inp = input(4, vec![false, true, false, false]);
        inp.features = Some(Tensor::full(&[4, 1024], 0.01));
        let mut tape = Tape::new(&store);
        let e = emb.forward(&mut tape, &inp).unwrap();
        assert_eq!(tape.shape(e), &[4, 350]);
        inp.features = Some(Tensor::zeros(&[4, 512]));
        assert!(emb.forward(&mut tape, &inp).is_err());
    }

    #[test]
    fn pretrained_vectors_are_copied_and_frozen() {
        let cfg = EncoderConfig::tiny();
        let (w, l) = tables(3);
        let emb = Embeddings::from_pairs(4, [("w1".to_string(), vec![1.0, 2.0, 3.0, 4.0])]);
        let mut store = ParamStore::new(0);
        let e = Embedder::new(&mut store, "emb", &cfg, &w, &l, Some(&emb), true);
        let table = store.get(e.word);
        assert!(!table.requires_grad);
        assert_eq!(table.value.row(w.id("w1").unwrap()), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn encode_single_token_shape() {
        let cfg = EncoderConfig {
            lstm_hidden: 600,
            ..EncoderConfig::tiny()
        };
        let mut store = ParamStore::new(0);
        let lstm = BiLstm::new(&mut store, "lstm", 7, &cfg);
        let mut tape = Tape::new(&store);
        let e = tape.constant(Tensor::full(&[1, 7], 0.3));
        let h = lstm.forward(&mut tape, e).unwrap();
        assert_eq!(tape.shape(h), &[1, 1200]);
        let empty = tape.constant(Tensor::zeros(&[0, 7]));
        assert!(lstm.forward(&mut tape, empty).is_err());
    }

    #[test]
    fn sentences_do_not_interact() {
        let cfg = EncoderConfig::tiny();
        let mut store = ParamStore::new(3);
        let lstm = BiLstm::new(&mut store, "lstm", 2, &cfg);
        let a = Tensor::new(&[3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let b = Tensor::new(&[2, 2], vec![1.0, -1.0, 0.5, 0.25]).unwrap();
        let run = |order: &[&Tensor]| {
            let mut tape = Tape::new(&store);
            order
                .iter()
                .map(|t| {
                    let e = tape.constant((*t).clone());
                    let h = lstm.forward(&mut tape, e).unwrap();
                    tape.value(h).clone()
                })
                .collect::<Vec<_>>()
        };
        let ab = run(&[&a, &b]);
        let ba = run(&[&b, &a]);
        assert_eq!(ab[0], ba[1]);
        assert_eq!(ab[1], ba[0]);
    }

    #[test]
    fn views_have_configured_dims_and_differ() {
        let cfg = EncoderConfig::tiny();
        let mut store = ParamStore::new(0);
        let views = RoleViews::new(&mut store, 8, &cfg, PartSet::ALL);
        let mut tape = Tape::new(&store);
        let h = tape.constant(Tensor::new(&[3, 8], (0..24).map(|x| (x as f64 * 0.37).sin()).collect()).unwrap());
        let v = views.forward(&mut tape, h).unwrap();
        assert_eq!(tape.shape(v.arc_head), &[3, 5]);
        assert_eq!(tape.shape(v.sib.unwrap().dep), &[3, 3]);
        assert_eq!(tape.shape(v.head_dep.unwrap()), &[3, 3]);
        assert_ne!(tape.value(v.arc_head), tape.value(v.arc_dep));
        assert_ne!(tape.value(v.label_head), tape.value(v.arc_head));
        assert_ne!(tape.value(v.sib.unwrap().head), tape.value(v.cop.unwrap().head));
    }

    #[test]
    fn gradcheck_through_bilstm_and_mlp() {
        let cfg = EncoderConfig {
            lstm_layers: 3,
            lstm_hidden: 2,
            ..EncoderConfig::tiny()
        };
        let mut store = ParamStore::new(5);
        let lstm = BiLstm::new(&mut store, "lstm", 2, &cfg);
        let mlp = Mlp::new(&mut store, "mlp", 4, 3, 0.1, 0.0);
        store.randomize(11, 0.5);
        let x = Tensor::new(&[3, 2], vec![0.3, -0.2, 0.8, 0.1, -0.5, 0.4]).unwrap();
        let r = gradcheck::<AutodiffError>(&store, DEFAULT_EPS_FOR_TESTS, |tape| {
            let e = tape.constant(x.clone());
            let h = lstm.forward(tape, e)?;
            let y = mlp.forward(tape, h)?;
            let y = tape.tanh(y);
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }
}
