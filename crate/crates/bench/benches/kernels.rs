use criterion::{black_box, criterion_group, criterion_main, Criterion};

use sgmlab_core::bounds::{half_order_bound, operating_point, BoundInputs};
use sgmlab_core::sampler::{backward_em, SamplerConfig, ScoreFn};
use sgmlab_core::scorenet::{fit, FeatureSpec, FitConfig};
use sgmlab_core::wasserstein::{w2_1d, w2_assignment};
use sgmlab_core::{ExactScore, Potential, ScoreModel};

fn score_eval(c: &mut Criterion) {
    let p = Potential::benchmark_mixture();
    let exact = ExactScore::new(&p).unwrap();
    let xs = p.sample(4096, 1).unwrap().into_vec();
    let mut out = vec![0.0; xs.len()];
    c.bench_function("exact_score_batch_4096", |b| {
        b.iter(|| exact.eval_batch(black_box(0.7), &xs, &mut out))
    });

    let spec = FeatureSpec {
        x_features: 16,
        t_features: 8,
        seed: 1,
        ..FeatureSpec::default()
    };
    let mut model = ScoreModel::for_potential(&spec, &p).unwrap();
    let cfg = FitConfig {
        horizon: 8.0,
        epsilon: 1e-3,
        n_data: 4000,
        seed: 1,
    };
    fit(&mut model, &p, &cfg).unwrap();
    c.bench_function("model_score_batch_4096", |b| {
        b.iter(|| model.eval_batch(black_box(0.7), &xs, &mut out))
    });
}

fn em_run(c: &mut Criterion) {
    let p = Potential::benchmark_mixture();
    let exact = ExactScore::new(&p).unwrap();
    let cfg = SamplerConfig::new(1.0, 0.01, 0.01, 10_000, 3).unwrap();
    c.bench_function("em_exact_99_steps_n10000", |b| {
        b.iter(|| backward_em(&exact, black_box(&cfg)).unwrap())
    });
}

fn wasserstein(c: &mut Criterion) {
    let p = Potential::benchmark_mixture();
    let a = p.sample(100_000, 1).unwrap();
    let b = p.sample(100_000, 2).unwrap();
    c.bench_function("w2_1d_n100000", |bch| bch.iter(|| w2_1d(black_box(&a), &b).unwrap()));

    let g = Potential::new(sgmlab_core::potentials::Family::DoubleWell, 2).unwrap();
    let a = g.sample(512, 1).unwrap();
    let b = g.sample(512, 2).unwrap();
    c.bench_function("w2_assignment_n512_d2", |bch| {
        bch.iter(|| w2_assignment(black_box(&a), &b).unwrap())
    });
}

fn bound_eval(c: &mut Criterion) {
    let b = BoundInputs {
        d: 1,
        second_moment: 13.0,
        k: 8.0 / 81.0,
        mu: 1.0 / 81.0,
        horizon: 8.0,
        epsilon: 1e-2,
        gamma: 1e-3,
        alpha: 1.0,
        zeta: 0.5,
        k1: 1.0,
        k3: 1.0,
        k4: 1.0,
        k_total: 2.0,
        theta_star_norm2: 0.0,
        eps_al: 0.0,
        theta_hat_m4: 0.0,
        eps_sn: 0.0,
    };
    c.bench_function("bound_half_order", |bch| {
        bch.iter(|| half_order_bound(black_box(&b)).unwrap())
    });
    c.bench_function("operating_point", |bch| {
        bch.iter(|| operating_point(black_box(&b), 0.5).unwrap())
    });
}

criterion_group!(benches, score_eval, em_run, wasserstein, bound_eval);
criterion_main!(benches);
