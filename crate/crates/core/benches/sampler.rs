use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mixinv::models::{default_bumps, synth_slip, ForwardModel, ModelSpec, SourceGrid};
use mixinv::posterior::{PosteriorSettings, PriorSpec};
use mixinv::sampler::{run_parallel_chain, BoxPrior, PosteriorTarget, SamplerConfig};
use mixinv::Execution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn planar_problem() -> (ForwardModel, nalgebra::DVector<f64>, PriorSpec) {
    let spec = ModelSpec {
        grid: SourceGrid::new(12, 12, (-10.0, 10.0), (-10.0, 10.0)).unwrap(),
        ..ModelSpec::planar_default()
    };
    let model = ForwardModel::new(spec).unwrap();
    let m_true = model.scaled([-0.12, -0.26, -14.0]);
    let g = synth_slip(model.grid(), &default_bumps()).unwrap();
    let u = model.assemble_a(&m_true).unwrap().matrix() * g;
    (model, u, PriorSpec::planar_default())
}

fn parallel_vs_sequential(c: &mut Criterion) {
    let (model, u, prior) = planar_problem();
    let target = PosteriorTarget {
        model: &model,
        u,
        prior: prior.clone(),
        settings: PosteriorSettings::default(),
    };
    let box_prior = BoxPrior::from(&prior);
    let mut group = c.benchmark_group("multi_proposal_chain");
    group.sample_size(10);
    for n_par in [4usize, 16] {
        for (label, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let cfg = SamplerConfig {
                n1: 20,
                n2: 40,
                n3: 80,
                n_par,
                execution,
                ..SamplerConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(label, n_par), &cfg, |b, cfg| {
                b.iter(|| run_parallel_chain(cfg, &target, &box_prior, &mut ChaCha8Rng::seed_from_u64(1)).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, parallel_vs_sequential);
criterion_main!(benches);
