use amplitude_flow::bench::{self, BenchSpec, Experiment};
use amplitude_flow::init::{
    initialize, norm_estimate, orthogonality_promoting_init, power_iteration, InitConfig, InitMethod,
    NormEstimator,
};
use amplitude_flow::metrics::relative_error;
use amplitude_flow::model::{
    cdp_operator, gaussian_operator, generate_measurements, random_signal, CdpOperator, DenseOperator,
    MeasurementSet, SensingOperator,
};
use amplitude_flow::rng::{StreamRole, TrialSeed};
use amplitude_flow::solver::{amplitude_loss, solve, solve_from, taf_direction, SolverConfig, SolverMethod};
use amplitude_flow::Scalar;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use proptest::prelude::*;

fn random_vec<S: Scalar>(n: usize, seed: u64) -> Array1<S> {
    let mut rng = TrialSeed::single(seed).rng(StreamRole::Auxiliary);
    Array1::from_shape_simple_fn(n, || S::sample_standard(&mut rng))
}

fn inner<S: Scalar>(a: &Array1<S>, b: &Array1<S>) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&p, &q)| acc + p.conj() * q)
}

fn norm<S: Scalar>(a: &Array1<S>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn adjoint_holds<S: Scalar, O: SensingOperator<S>>(op: &O, pairs: u64) {
    for k in 0..pairs {
        let u = random_vec::<S>(op.dim(), 2 * k);
        let v = random_vec::<S>(op.measurements(), 2 * k + 1);
        let lhs = inner(&op.apply(u.view()), &v);
        let rhs = inner(&u, &op.adjoint(v.view()));
        assert!((lhs - rhs).abs() <= 1e-10 * norm(&u) * norm(&v), "pair {k}: {lhs} vs {rhs}");
    }
}

#[test]
fn adjoint_identity_for_every_operator() {
    adjoint_holds(&gaussian_operator::<f64>(30, 90, TrialSeed::single(1)).unwrap(), 100);
    adjoint_holds(&gaussian_operator::<Complex64>(30, 90, TrialSeed::single(2)).unwrap(), 100);
    adjoint_holds(&cdp_operator(64, 4, TrialSeed::single(3)).unwrap(), 100);
    adjoint_holds(&cdp_operator(45, 3, TrialSeed::single(4)).unwrap(), 100);
}

#[test]
fn cdp_measurements_preserve_energy() {
    for (n, k) in [(64, 6), (100, 3), (17, 1)] {
        let seed = TrialSeed::single(n as u64);
        let op = cdp_operator(n, k, seed).unwrap();
        let x = random_signal::<Complex64>(n, seed).unwrap();
        let ms = generate_measurements(&op, x.view(), 0.0, seed).unwrap();
        let energy = norm(&x).powi(2);
        assert!((ms.y.sum() - k as f64 * energy).abs() <= 1e-10 * k as f64 * energy);
    }
}

#[test]
fn gaussian_mean_intensity_concentrates() {
    for seed in 0..5 {
        let n = 8;
        let s = TrialSeed::single(seed);
        let op = gaussian_operator::<f64>(n, 500 * n, s).unwrap();
        let x = random_signal::<f64>(n, s).unwrap();
        let ms = generate_measurements(&op, x.view(), 0.0, s).unwrap();
        let ratio = ms.y.mean().unwrap() / norm(&x).powi(2);
        assert!((0.9..=1.1).contains(&ratio), "seed {seed}: {ratio}");
    }
}

#[test]
fn generation_is_deterministic() {
    let s = TrialSeed::new(9, 3, 2);
    let a = gaussian_operator::<Complex64>(16, 64, s).unwrap();
    let b = gaussian_operator::<Complex64>(16, 64, s).unwrap();
    assert_eq!(a.matrix(), b.matrix());
    let x = random_signal::<Complex64>(16, s).unwrap();
    let m1 = generate_measurements(&a, x.view(), 0.1, s).unwrap();
    let m2 = generate_measurements(&b, x.view(), 0.1, s).unwrap();
    assert_eq!(m1.psi, m2.psi);
    let c1 = cdp_operator(32, 3, s).unwrap();
    let c2 = cdp_operator(32, 3, s).unwrap();
    assert_eq!(c1.masks(), c2.masks());
}

fn gaussian<S: Scalar>(n: usize, m: usize, sigma_rel: f64, seed: u64) -> (DenseOperator<S>, Array1<S>, MeasurementSet<S>) {
    let inst = bench::gaussian_instance::<S>(n, m, sigma_rel, TrialSeed::single(seed)).unwrap();
    (inst.op, inst.x, inst.ms)
}

#[test]
fn solve_from_truth_stays_put() {
    let (op, x, ms) = gaussian::<f64>(32, 256, 0.0, 5);
    let cfg = SolverConfig { trace_every: 1, max_iters: 20, ..SolverConfig::default() };
    let res = solve_from(&ms, &op, &cfg, x.clone()).unwrap();
    assert_eq!(res.estimate, x);
    assert!(res.trace.loss.iter().all(|&l| l == 0.0));
    assert_eq!(res.trace.len(), res.iters_run + 1);
}

#[test]
fn complex_solutions_commute_with_global_phase() {
    let (op, _, ms) = gaussian::<Complex64>(32, 200, 0.0, 11);
    let cfg = SolverConfig { max_iters: 300, ..SolverConfig::default() };
    let init = initialize(&ms, &op, &cfg.init, TrialSeed::single(11)).unwrap();
    let base = solve_from(&ms, &op, &cfg, init.z0.clone()).unwrap();
    for phi in [0.3, 1.7, -2.5] {
        let r = Complex64::from_polar(1.0, phi);
        let rotated = solve_from(&ms, &op, &cfg, init.z0.mapv(|v| v * r)).unwrap();
        let (a, b) = (base.final_error.unwrap(), rotated.final_error.unwrap());
        assert!((a - b).abs() <= 1e-10, "phi {phi}: {a} vs {b}");
    }
}

#[test]
fn af_descends_with_small_steps() {
    let (n, m) = (20, 160);
    for seed in 0..5 {
        let (op, x, ms) = gaussian::<f64>(n, m, 0.0, 40 + seed);
        let mut z = &x + &random_vec::<f64>(n, seed).mapv(|v| 0.3 * v);
        let mut loss = amplitude_loss(z.view(), &ms, &op).unwrap();
        let mut checked = 0;
        for _ in 0..200 {
            let g = taf_direction(z.view(), &ms, &op, f64::INFINITY).unwrap();
            let next = &z - &g.mapv(|v| 0.1 * v);
            let (u0, u1) = (op.apply(z.view()), op.apply(next.view()));
            let flipped = u0.iter().zip(&u1).any(|(a, b)| a.signum() != b.signum());
            let next_loss = amplitude_loss(next.view(), &ms, &op).unwrap();
            if !flipped {
                assert!(next_loss <= loss * (1.0 + 1e-12), "seed {seed}: {loss} -> {next_loss}");
                checked += 1;
            }
            z = next;
            loss = next_loss;
        }
        assert!(checked > 100);
    }
}

#[test]
fn converged_runs_keep_every_measurement() {
    let (op, _, ms) = gaussian::<f64>(64, 512, 0.0, 21);
    let cfg = SolverConfig { trace_every: 1, ..SolverConfig::default() };
    let res = solve(&ms, &op, &cfg, TrialSeed::single(21)).unwrap();
    assert!(res.converged);
    let tr = &res.trace;
    let mut seen = 0;
    for (e, &k) in tr.relative_error.iter().zip(&tr.truncation_size) {
        if *e < 1e-8 {
            assert_eq!(k, 512);
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn noisy_recovery_is_stable() {
    let n = 64;
    let mut floor = 0.0f64;
    let mut noisy = 0.0f64;
    for seed in 0..5 {
        let (op, _, ms) = gaussian::<f64>(n, 8 * n, 0.0, 60 + seed);
        floor = floor.max(solve(&ms, &op, &SolverConfig::default(), TrialSeed::single(seed)).unwrap().final_error.unwrap());
        let (op, _, ms) = gaussian::<f64>(n, 8 * n, 0.01, 60 + seed);
        noisy = noisy.max(solve(&ms, &op, &SolverConfig::default(), TrialSeed::single(seed)).unwrap().final_error.unwrap());
    }
    assert!(noisy <= 10.0 * floor + 0.05, "noisy {noisy}, floor {floor}");
}

#[test]
fn geometric_convergence_after_entering_the_basin() {
    let spec = BenchSpec {
        experiment: Experiment::ConvergenceTrace,
        n: 64,
        ratios: vec![8.0],
        trials: 4,
        ..BenchSpec::default()
    };
    let report = bench::convergence_trace(&spec).unwrap();
    for rec in &report.traces {
        assert_eq!(rec.trace.len(), rec.iters_run + 1);
        assert!(rec.final_error < 1e-5);
        let w = bench::worst_contraction(&rec.trace, 100, 0.1).unwrap();
        assert!(w <= 0.5, "trial {}: {w}", rec.trial);
    }
}

#[test]
fn cdp_recovers_a_constant_image_with_plain_masks() {
    let n = 16;
    // with every mask equal to one, |F x| of a constant is a single spike,
    // which pins x down to a global phase
    let x = Array1::from_elem(n, Complex64::new(0.5, 0.0));
    let dft: Vec<f64> = (0..n)
        .map(|k| {
            (0..n)
                .map(|t| x[t] * Complex64::from_polar(1.0 / (n as f64).sqrt(), -std::f64::consts::TAU * (k * t) as f64 / n as f64))
                .sum::<Complex64>()
                .norm()
        })
        .collect();
    assert!((dft[0] - 0.5 * (n as f64).sqrt()).abs() < 1e-12);
    assert!(dft[1..].iter().all(|&v| v < 1e-12));

    let op = CdpOperator::from_masks(Array2::from_elem((6, n), Complex64::new(1.0, 0.0))).unwrap();
    let ms = generate_measurements(&op, x.view(), 0.0, TrialSeed::single(0)).unwrap();
    let mut cfg = SolverConfig { max_iters: 100, ..SolverConfig::default() };
    cfg.init.power_iters = 100;
    let res = solve(&ms, &op, &cfg, TrialSeed::single(0)).unwrap();
    assert!(res.final_error.unwrap() <= 1e-8);
}

#[test]
fn norm_estimators_on_identity_design() {
    let op = DenseOperator::from_matrix(Array2::<f64>::eye(2)).unwrap();
    let ms = generate_measurements(&op, ndarray::array![3.0, 4.0].view(), 0.0, TrialSeed::single(0)).unwrap();
    let mean = norm_estimate(&ms, &op, NormEstimator::MeanIntensity).unwrap();
    assert!((mean - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);
    assert_eq!(norm_estimate(&ms, &op, NormEstimator::RowNormRatio).unwrap(), 5.0);
}

#[test]
fn power_iteration_fixed_point_on_separated_spectrum() {
    let d = Array1::from_iter((0..10).map(|k| 1.0 / (1.0 + k as f64)));
    let mv = |u: ndarray::ArrayView1<'_, f64>| &u * &d;
    let v = power_iteration(mv, 10, 200, TrialSeed::single(3)).unwrap();
    let w = mv(v.view());
    let w = &w / w.dot(&w).sqrt();
    let change = (&w - &v).mapv(|a| a * a).sum().sqrt();
    assert!(change <= 1e-6);
}

#[test]
fn seeded_bench_reports_repeat_exactly_on_any_pool() {
    let spec = BenchSpec { n: 32, ratios: vec![4.0, 6.0], trials: 6, solvers: vec![SolverMethod::Taf, SolverMethod::Af], master_seed: 17, ..BenchSpec::default() };
    let a = bench::run(&spec).unwrap().csv_string().unwrap();
    let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| bench::run(&spec).unwrap().csv_string().unwrap());
    assert_eq!(a, b);
}

#[test]
fn trial_order_does_not_change_aggregates() {
    let (n, m) = (32, 192);
    let errs: Vec<f64> = (0..8)
        .map(|t| {
            let seed = TrialSeed::new(3, 0, t);
            let inst = bench::gaussian_instance::<f64>(n, m, 0.0, seed).unwrap();
            solve(&inst.ms, &inst.op, &SolverConfig::default(), seed).unwrap().final_error.unwrap()
        })
        .collect();
    let spec = BenchSpec { n, ratios: vec![6.0], trials: 8, master_seed: 3, ..BenchSpec::default() };
    let report = bench::success_rate_grid(&spec).unwrap();
    let mut reversed = errs.clone();
    reversed.reverse();
    let rate = amplitude_flow::metrics::success_rate(&reversed, 1e-5).unwrap();
    assert_eq!(report.find("success_rate", 6.0, None, None).unwrap().value, rate);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn init_direction_ignores_amplitude_scale(seed in 0u64..1000, c in 0.01f64..100.0) {
        let (op, _, ms) = gaussian::<f64>(12, 72, 0.0, seed);
        let cfg = InitConfig::default();
        let a = orthogonality_promoting_init(&ms, &op, &cfg, TrialSeed::single(seed)).unwrap();
        let b = orthogonality_promoting_init(&ms.scaled(c), &op, &cfg, TrialSeed::single(seed)).unwrap();
        prop_assert_eq!(&a.selected_indices, &b.selected_indices);
        prop_assert_eq!(&a.direction, &b.direction);
        prop_assert!((b.norm_estimate - c * a.norm_estimate).abs() <= 1e-12 * c * a.norm_estimate);
    }

    #[test]
    fn init_outputs_unit_directions(seed in 0u64..1000, method in 0usize..4) {
        let (op, _, ms) = gaussian::<Complex64>(10, 60, 0.0, seed);
        let cfg = InitConfig::with_method(InitMethod::ALL[method]);
        let est = initialize(&ms, &op, &cfg, TrialSeed::single(seed)).unwrap();
        prop_assert!((norm(&est.direction) - 1.0).abs() <= 1e-10);
        prop_assert_eq!(est.z0, est.direction.mapv(|v| v.scale(est.norm_estimate)));
    }

    #[test]
    fn relative_error_is_phase_blind(seed in 0u64..1000, phi in -3.2f64..3.2) {
        let x = random_vec::<Complex64>(8, seed);
        let z = random_vec::<Complex64>(8, seed + 7);
        let r = Complex64::from_polar(1.0, phi);
        let a = relative_error(z.view(), x.view()).unwrap();
        let b = relative_error(z.mapv(|v| v * r).view(), x.view()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}
