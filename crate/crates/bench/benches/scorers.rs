use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srl_core::autodiff::{ParamStore, Tape, Tensor};
use srl_core::scorers::{batched_biaffine, batched_biaffine_labels, batched_triaffine};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn biaffine(c: &mut Criterion) {
    let params = ParamStore::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("biaffine");
    for &n in &[10usize, 30, 60] {
        let d = 300;
        let (h, dep, u) = (
            random(&[n, d], &mut rng),
            random(&[n, d], &mut rng),
            random(&[d + 1, d], &mut rng),
        );
        group.bench_with_input(BenchmarkId::new("arc", n), &n, |b, _| {
            b.iter(|| {
                let mut t = Tape::new(&params);
                let (h, dep, u) = (t.constant(h.clone()), t.constant(dep.clone()), t.constant(u.clone()));
                batched_biaffine(&mut t, h, dep, u).unwrap()
            })
        });
        let roles = 20;
        let ul = random(&[d + 1, roles, d], &mut rng);
        group.bench_with_input(BenchmarkId::new("labels", n), &n, |b, _| {
            b.iter(|| {
                let mut t = Tape::new(&params);
                let (h, dep, u) = (t.constant(h.clone()), t.constant(dep.clone()), t.constant(ul.clone()));
                batched_biaffine_labels(&mut t, h, dep, u).unwrap()
            })
        });
    }
    group.finish();
}

fn triaffine(c: &mut Criterion) {
    let params = ParamStore::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("triaffine");
    for &n in &[10usize, 30] {
        let d = 150;
        let (vi, vj, vk) = (
            random(&[n, d], &mut rng),
            random(&[n, d], &mut rng),
            random(&[n, d], &mut rng),
        );
        let u = random(&[d, d + 1, d + 1], &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut t = Tape::new(&params);
                let vars = [vi.clone(), vj.clone(), vk.clone(), u.clone()].map(|x| t.constant(x));
                batched_triaffine(&mut t, vars[0], vars[1], vars[2], vars[3]).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, biaffine, triaffine);
criterion_main!(benches);
