use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srl_core::autodiff::{ParamStore, Tape, Tensor};
use srl_core::config::{DecodeConfig, EncoderConfig, Part, PartSet};
use srl_core::mfvi::mfvi;
use srl_core::scorers::{candidate_mask, part_mask, ScoreTensors};
use srl_core::synth::synthetic_corpus;
use srl_core::{ModelSpec, SrlModel, Vocab};

fn random_masked(mask: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = mask.clone();
    for x in out.data_mut() {
        *x *= rng.gen_range(-2.0..2.0);
    }
    out
}

fn mean_field(c: &mut Criterion) {
    let params = ParamStore::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("mfvi");
    for &n in &[10usize, 30, 60] {
        let preds: Vec<usize> = (1..=n).step_by(4).collect();
        let mask = candidate_mask(n, &preds);
        let arc = random_masked(&mask, &mut rng);
        let [sib, cop, gp] = [Part::Sib, Part::Cop, Part::Gp].map(|p| random_masked(&part_mask(p, &mask), &mut rng));
        for &iters in &[1usize, 3] {
            group.bench_with_input(BenchmarkId::new(format!("T{iters}"), n), &n, |b, _| {
                b.iter(|| {
                    let mut t = Tape::new(&params);
                    let scores = ScoreTensors {
                        n,
                        s_arc: t.constant(arc.clone()),
                        s_label: t.constant(Tensor::zeros(&[n, n, 1])),
                        sib: Some(t.constant(sib.clone())),
                        cop: Some(t.constant(cop.clone())),
                        gp: Some(t.constant(gp.clone())),
                        mask: mask.clone(),
                    };
                    mfvi(&mut t, &scores, iters).unwrap().iterations()
                })
            });
        }
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let corpus = synthetic_corpus(20, 4);
    let vocab = Vocab::build(corpus.iter().map(|(s, g)| (s, g)));
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for (label, parts) in [("first_order", PartSet::NONE), ("all_parts", PartSet::ALL)] {
        let spec = ModelSpec {
            encoder: EncoderConfig::default(),
            parts,
            decode: DecodeConfig::default(),
            vocab: vocab.clone(),
        };
        let model = SrlModel::new(spec, None, 5).unwrap();
        let input = model.input(&corpus[0].0, None);
        group.bench_function(BenchmarkId::new("predict", label), |b| {
            b.iter(|| model.predict(&input).unwrap())
        });
        group.bench_function(BenchmarkId::new("loss_and_backward", label), |b| {
            b.iter(|| {
                let mut t = Tape::training(&model.params, ChaCha8Rng::seed_from_u64(1));
                let l = model.loss(&mut t, &input, &corpus[0].1, 0.1).unwrap();
                t.backward(l.total).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, mean_field, forward);
criterion_main!(benches);
