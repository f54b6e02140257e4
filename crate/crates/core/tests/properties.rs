//! Property suites for every module, with fixed seeds.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

use rlstep::meta::{LearnerPool, MetaLearner, PoolEntry, integrate_with_meta};
use rlstep::neural::{AdamConfig, Mlp, MlpSpec, TrainBatch};
use rlstep::ode::{
    ButcherTableau, FnRhs, Mode, Rk45Options, rk45_adaptive, rk_step, step_dynamics,
};
use rlstep::optweights::{BasisEvaluations, fit_weights};
use rlstep::problems::{FunctionClass, FunctionClassSpec, OdeSystem, sample_function};
use rlstep::quad::{QuadratureRule, composite_simpson, composite_simpson_evaluations, simpson, subdivide};
use rlstep::rl::{
    BaseLearner, EncoderConfig, InitialCondition, MemoryBuffer, OdeEnv, ProblemKind, QuadEnv, RewardConfig,
    RewardVariant, Scaler, StepEnv, batch_from_episode, encode_quadrature, reward, run_episode,
};
use rlstep::{Rng, seeded_rng};

fn cfg(cases: u32, seed: u64) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(seed), failure_persistence: None, ..Config::default() }
}

fn random_net(input_dim: usize, output_dim: usize, seed: u64) -> Mlp {
    Mlp::init(MlpSpec::standard(input_dim, output_dim), &mut seeded_rng(seed)).unwrap()
}

fn scaled_rms(err: &[f64], x: &[f64], y: &[f64], rtol: f64, atol: f64) -> f64 {
    let s: f64 = err
        .iter()
        .zip(x.iter().zip(y))
        .map(|(e, (a, b))| (e / (atol + rtol * a.abs().max(b.abs()))).powi(2))
        .sum();
    (s / err.len() as f64).sqrt()
}

// problems

proptest! {
    #![proptest_config(cfg(32, 1))]

    #[test]
    fn broken_poly_is_zero_past_the_break(seed in any::<u64>()) {
        let spec = FunctionClassSpec::new(FunctionClass::BrokenPoly5);
        let f = sample_function(&spec, &mut seeded_rng(seed)).unwrap();
        let brk = f.break_point().expect("broken polynomial has a break");
        for i in 0..=400 {
            let x = -1.0 + 2.0 * i as f64 / 400.0;
            if x > brk {
                prop_assert_eq!(f.eval(x), 0.0);
            }
        }
    }

    #[test]
    fn rhs_is_mode_pure(t in -5.0..60.0f64, x0 in -4.0..4.0f64, x1 in -4.0..4.0f64, mode in 0usize..2) {
        let sys = OdeSystem::hybrid_pendulum();
        let m = Mode::new(mode, 0.0);
        let a = sys.eval_rhs(t, &[x0, x1], m).unwrap();
        let b = sys.eval_rhs(t, &[x0, x1], m).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

// quad

proptest! {
    #![proptest_config(cfg(100, 2))]

    #[test]
    fn simpson_weights_rule_equals_kernel_bitwise(
        c in prop::array::uniform4(-3.0..3.0f64),
        a in -5.0..5.0f64,
        len in 0.01..4.0f64,
    ) {
        let f = |x: f64| c[0] + x * (c[1] + x * (c[2] + x * c[3].sin()));
        let b = a + len;
        prop_assert_eq!(QuadratureRule::simpson().apply(&f, a, b).to_bits(), simpson(&f, a, b).to_bits());
    }

    #[test]
    fn composite_evaluation_count_matches_formula(a in -10.0..10.0f64, len in 0.1..20.0f64, h in 0.01..3.0f64) {
        let b = a + len;
        let count = std::cell::Cell::new(0usize);
        let f = |x: f64| {
            count.set(count.get() + 1);
            x.cos()
        };
        let (_, reported) = composite_simpson(&f, a, b, h);
        prop_assert_eq!(count.get(), reported);
        prop_assert_eq!(reported, composite_simpson_evaluations(a, b, h));
    }
}

proptest! {
    #![proptest_config(cfg(24, 3))]

    #[test]
    fn subdivision_total_is_sum_of_fine_estimates(seed in any::<u64>(), budget in 5usize..400) {
        let spec = FunctionClassSpec::new(FunctionClass::SuperposedSines5);
        let f = sample_function(&spec, &mut seeded_rng(seed)).unwrap();
        let g = |x: f64| f.eval(x);
        let res = subdivide(&g, 0.0, 20.0, budget).unwrap();
        let sum: f64 = res.intervals.iter().map(|iv| iv.fine).sum();
        prop_assert_eq!(res.integral.to_bits(), sum.to_bits());
        prop_assert!(res.evaluations_used <= budget.max(5));
    }
}

#[test]
fn composite_simpson_error_falls_at_least_fifteenfold_per_halving() {
    let err = |h: f64| (composite_simpson(&f64::sin, 0.0, std::f64::consts::PI, h).0 - 2.0).abs();
    let hs = [std::f64::consts::PI / 8.0, std::f64::consts::PI / 16.0, std::f64::consts::PI / 32.0, std::f64::consts::PI / 64.0];
    for w in hs.windows(2) {
        assert!(err(w[0]) / err(w[1]) >= 15.0, "h = {}: ratio {}", w[1], err(w[0]) / err(w[1]));
    }
}

// ode

proptest! {
    #![proptest_config(cfg(12, 4))]

    #[test]
    fn accepted_rk45_steps_have_error_norm_at_most_one(
        x in prop::array::uniform3(-15.0..15.0f64),
        log_tol in -8.0..-3.0f64,
    ) {
        let tol = 10f64.powf(log_tol);
        let sys = OdeSystem::lorenz();
        let tab = ButcherTableau::dormand_prince();
        let run = rk45_adaptive(&tab, &sys, (0.0, 2.0), &x, &Rk45Options::with_tolerances(tol, tol)).unwrap();
        for i in 0..run.times.len() - 1 {
            let h = run.times[i + 1] - run.times[i];
            let (step, _) = step_dynamics(&tab, &sys, run.times[i], &run.states[i], run.modes[i], h, None).unwrap();
            let e = scaled_rms(&step.error_vector(), &run.states[i], &step.x_next, tol, tol);
            prop_assert!(e <= 1.0 + 1e-9, "step {} at t = {}: norm {}", i, run.times[i], e);
        }
    }

    #[test]
    fn rk45_evaluations_are_stages_times_attempts_less_fsal_reuse(
        x in prop::array::uniform3(-15.0..15.0f64),
        log_tol in -8.0..-3.0f64,
    ) {
        let tol = 10f64.powf(log_tol);
        let tab = ButcherTableau::dormand_prince();
        let run = rk45_adaptive(&tab, &OdeSystem::lorenz(), (0.0, 2.0), &x, &Rk45Options::with_tolerances(tol, tol)).unwrap();
        let attempts = run.log.len();
        // One initial k1, one probe of the starting-step heuristic, then six fresh stages per attempt.
        prop_assert_eq!(run.evaluations, (tab.stage_count() - 1) * attempts + 2);
        prop_assert_eq!(run.log.iter().map(|r| r.evaluations).sum::<usize>() + 1, run.evaluations);
    }
}

#[test]
fn dormand_prince_local_order_is_six() {
    let tab = ButcherTableau::dormand_prince();
    let rhs = FnRhs::new(1, |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = -x[0]);
    let hs = [0.4, 0.2, 0.1, 0.05];
    let errs: Vec<f64> = hs
        .iter()
        .map(|&h| (rk_step(&tab, &rhs, 0.0, &[1.0], h, None).unwrap().x_next[0] - (-h).exp()).abs())
        .collect();
    let n = hs.len() as f64;
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 6.0).abs() <= 0.2, "slope {slope}");
    assert!(tab.validate(1e-14).is_ok());
}

// neural

proptest! {
    #![proptest_config(cfg(10, 5))]

    #[test]
    fn gradient_matches_central_differences(
        seed in any::<u64>(),
        input_dim in 1usize..4,
        output_dim in 1usize..4,
        width in 2usize..6,
    ) {
        let mut rng = seeded_rng(seed);
        let spec = MlpSpec { input_dim, hidden_layers: 2, hidden_width: width, output_dim };
        let net = Mlp::init(spec, &mut rng).unwrap();
        let mut batch = TrainBatch::default();
        for k in 0..4 {
            let x: Vec<f64> = (0..input_dim).map(|i| ((seed as f64 + 1.0) * 0.37 * (i + k + 1) as f64).sin()).collect();
            batch.push(x, k % output_dim, (k as f64 * 0.9).cos());
        }
        let (_, grads) = net.loss_and_gradient(&batch).unwrap();
        let h = 1e-5;
        for (li, layer) in net.layers.iter().enumerate() {
            for wi in 0..layer.weights.len() + layer.bias.len() {
                let perturbed = |delta: f64| {
                    let mut n = net.clone();
                    if wi < layer.weights.len() {
                        n.layers[li].weights[wi] += delta;
                    } else {
                        n.layers[li].bias[wi - layer.weights.len()] += delta;
                    }
                    n.loss(&batch).unwrap()
                };
                let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let an = if wi < layer.weights.len() {
                    grads[li].weights[wi]
                } else {
                    grads[li].bias[wi - layer.weights.len()]
                };
                let scale = an.abs().max(fd.abs()).max(1e-6);
                prop_assert!((an - fd).abs() / scale < 1e-4 || (an - fd).abs() < 1e-9,
                    "layer {} param {}: analytic {} vs numeric {}", li, wi, an, fd);
            }
        }
    }

    #[test]
    fn only_the_selected_output_row_gets_gradient(seed in any::<u64>(), action in 0usize..5) {
        let net = random_net(3, 5, seed);
        let mut batch = TrainBatch::default();
        batch.push(vec![0.2, -0.4, 0.9], action, 1.5);
        let (_, grads) = net.loss_and_gradient(&batch).unwrap();
        let out = grads.last().unwrap();
        for o in (0..5).filter(|&o| o != action) {
            prop_assert!(out.weights[o * out.inputs..(o + 1) * out.inputs].iter().all(|g| *g == 0.0));
            prop_assert_eq!(out.bias[o], 0.0);
        }
    }

    #[test]
    fn training_is_reproducible(seed in any::<u64>()) {
        let run = || {
            let mut net = random_net(2, 3, seed);
            let mut rng = seeded_rng(seed ^ 1);
            for step in 0..20 {
                let mut batch = TrainBatch::default();
                let x = vec![rand::Rng::random_range(&mut rng, -1.0..1.0), step as f64 / 20.0];
                batch.push(x, step % 3, 0.5);
                net.train_step(&batch, &AdamConfig::default()).unwrap();
            }
            net.layers
        };
        prop_assert_eq!(run(), run());
    }
}

// rl

proptest! {
    #![proptest_config(cfg(200, 6))]

    #[test]
    fn piecewise_reward_is_calibrated_for_any_tolerance(log_tol in -12.0..0.0f64, h in 0.01..1.0f64) {
        let tol = 10f64.powf(log_tol);
        let c = RewardConfig::new(tol, RewardVariant::Piecewise).unwrap();
        prop_assert!(reward(&c, tol, h, 1.0).abs() <= 1e-12);
        prop_assert!((reward(&c, 2.0 * tol, h, 1.0) + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rewards_fall_strictly_with_error_above_tolerance(
        log_tol in -8.0..-2.0f64,
        r1 in 1.0..50.0f64,
        gap in 0.01..10.0f64,
        h in 0.05..1.0f64,
    ) {
        let tol = 10f64.powf(log_tol);
        for v in [RewardVariant::Piecewise, RewardVariant::Continuous, RewardVariant::Log] {
            let c = RewardConfig::new(tol, v).unwrap();
            let e1 = r1 * tol;
            let e2 = (r1 + gap) * tol;
            prop_assert!(reward(&c, e2, h, 1.0) < reward(&c, e1, h, 1.0), "{:?} at {} vs {}", v, e1, e2);
        }
    }

    #[test]
    fn rewards_are_bounded(log_tol in -8.0..-2.0f64, log_ratio in -6.0..12.0f64, h in 0.0..1.0f64) {
        let tol = 10f64.powf(log_tol);
        let eps = tol * 10f64.powf(log_ratio);
        let p = RewardConfig::new(tol, RewardVariant::Piecewise).unwrap();
        let r = reward(&p, eps, h, 1.0);
        prop_assert!(r <= 1.0 && r >= -p.l, "{}", r);
        // Strict once a e^{-b eps} is representable next to L.
        if eps <= 20.0 * tol {
            prop_assert!(r > -p.l, "{}", r);
        }
        let r = reward(&RewardConfig::new(tol, RewardVariant::Log).unwrap(), eps, h, 1.0);
        prop_assert!(r <= 1.0);
    }
}

#[test]
fn continuous_reward_peaks_at_the_shape_maximum() {
    // gain * (a e^{-b eps} - L) tends to L / (L - 1) times the gain as eps -> 0.
    let c = RewardConfig::new(1e-3, RewardVariant::Continuous).unwrap();
    let peak = reward(&c, 0.0, 1.0, 1.0);
    assert!((peak - c.l / (c.l - 1.0)).abs() < 1e-12);
}

proptest! {
    #![proptest_config(cfg(64, 7))]

    #[test]
    fn quadrature_policy_ignores_constant_offsets(
        seed in 0u64..1000,
        vals in prop::array::uniform3(-2.0..2.0f64),
        c in -4.0..4.0f64,
        h in 0.05..0.75f64,
    ) {
        let encoder = EncoderConfig { kind: ProblemKind::Quadrature, memory: 0 };
        let actions = rlstep::rl::ActionSet::new(vec![0.05, 0.1, 0.2, 0.4]).unwrap();
        let learner = BaseLearner::new(
            random_net(encoder.input_dim(), 4, seed),
            actions,
            encoder,
            Scaler::identity(encoder.input_dim()),
            RewardConfig::new(5e-4, RewardVariant::Piecewise).unwrap(),
            0.0,
        )
        .unwrap();
        // Offsets representable exactly alongside the values keep differences bit-identical.
        let c = (c * 64.0).round() / 64.0;
        let vals = vals.map(|v| (v * 1024.0).round() / 1024.0);
        let shifted = vals.map(|v| v + c);
        let s1 = encode_quadrature(h, vals, &mut MemoryBuffer::new(0, 2));
        let s2 = encode_quadrature(h, shifted, &mut MemoryBuffer::new(0, 2));
        prop_assert_eq!(&s1, &s2);
        prop_assert_eq!(learner.greedy_action(&s1), learner.greedy_action(&s2));
    }
}

fn random_episode(env: &mut dyn StepEnv, steps: &[f64], rng: &mut Rng) -> rlstep::rl::Episode {
    let cfg = RewardConfig::new(1e-4, RewardVariant::Piecewise).unwrap();
    let h_max = steps.iter().copied().fold(0.0, f64::max);
    let mut choose = |_: &rlstep::rl::StepState, rng: &mut Rng| {
        let a = rand::Rng::random_range(rng, 0..steps.len());
        (a, steps[a])
    };
    run_episode(env, &mut choose, &cfg, h_max, rng).unwrap()
}

proptest! {
    #![proptest_config(cfg(16, 8))]

    #[test]
    fn episodes_chain_and_gamma_zero_targets_are_rewards(seed in any::<u64>(), memory in 0usize..3, ode in any::<bool>()) {
        let mut rng = seeded_rng(seed);
        let ep = if ode {
            let steps = [0.025, 0.05, 0.07];
            let ic = InitialCondition::UniformBox { lo: -10.0, hi: 10.0 };
            let mut env = OdeEnv::new(OdeSystem::lorenz(), (0.0, 1.0), ic, 0.025, memory).unwrap();
            random_episode(&mut env, &steps, &mut rng)
        } else {
            let steps = [0.05, 0.2, 0.75];
            let mut env = QuadEnv::new(FunctionClassSpec::new(FunctionClass::SingleSine), 0.05, memory).unwrap();
            random_episode(&mut env, &steps, &mut rng)
        };
        prop_assert_eq!(&ep.transitions[0].state, &ep.warmup.state);
        for w in ep.transitions.windows(2) {
            prop_assert_eq!(&w[0].next_state, &w[1].state);
        }
        let dim = ep.warmup.state.to_input().len();
        let net = random_net(dim, 3, seed);
        let scaler = Scaler::identity(dim);
        let batch = batch_from_episode(&ep, &|s| scaler.apply(&s.to_input()), &net, 0.0);
        let rewards: Vec<f64> = ep.transitions.iter().filter(|t| !t.excluded).map(|t| t.reward).collect();
        prop_assert_eq!(batch.targets.iter().map(|t| t.1).collect::<Vec<_>>(), rewards);
    }
}

// meta

fn constant_meta(steps: &[f64], seed: u64, env: &dyn StepEnv) -> MetaLearner {
    let encoder = env.encoder();
    let pool = LearnerPool::new(steps.iter().map(|&h| PoolEntry::Constant(h)).collect()).unwrap();
    MetaLearner::new(
        random_net(encoder.input_dim(), steps.len(), seed),
        pool,
        encoder,
        Scaler::identity(encoder.input_dim()),
        RewardConfig::new(1e-4, RewardVariant::Log).unwrap(),
        0.0,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(cfg(12, 9))]

    #[test]
    fn meta_reward_is_the_base_reward_of_the_executed_step(seed in any::<u64>()) {
        let steps = [0.01, 0.03, 0.06];
        let ic = InitialCondition::Fixed { x0: vec![10.0, 10.0, 10.0] };
        let mut env = OdeEnv::new(OdeSystem::lorenz(), (0.0, 1.0), ic, 0.01, 0).unwrap();
        let meta = constant_meta(&steps, seed, &env);
        let run = integrate_with_meta(&meta, &mut env, &mut seeded_rng(seed)).unwrap();
        prop_assert!(!run.dispatch.is_empty());
        for d in &run.dispatch {
            let base = reward(&meta.reward, d.local_error, d.h, meta.pool.h_norm());
            prop_assert_eq!(d.reward.to_bits(), base.to_bits());
        }
    }

    #[test]
    fn permuting_pool_and_output_rows_keeps_dispatch(seed in any::<u64>(), perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let steps = [0.01, 0.03, 0.06];
        let ic = InitialCondition::Fixed { x0: vec![10.0, 10.0, 10.0] };
        let mut env = OdeEnv::new(OdeSystem::lorenz(), (0.0, 1.0), ic.clone(), 0.01, 0).unwrap();
        let meta = constant_meta(&steps, seed, &env);
        let permuted_steps: Vec<f64> = perm.iter().map(|&i| steps[i]).collect();
        let mut permuted = constant_meta(&permuted_steps, seed, &env);
        let src = meta.net.layers.last().unwrap();
        let dst = permuted.net.layers.last_mut().unwrap();
        for (new, &old) in perm.iter().enumerate() {
            dst.weights[new * src.inputs..(new + 1) * src.inputs]
                .copy_from_slice(&src.weights[old * src.inputs..(old + 1) * src.inputs]);
            dst.bias[new] = src.bias[old];
        }
        for (l, layer) in meta.net.layers.iter().enumerate().take(meta.net.layers.len() - 1) {
            permuted.net.layers[l] = layer.clone();
        }
        let a = integrate_with_meta(&meta, &mut env, &mut seeded_rng(0)).unwrap();
        let mut env2 = OdeEnv::new(OdeSystem::lorenz(), (0.0, 1.0), ic, 0.01, 0).unwrap();
        let b = integrate_with_meta(&permuted, &mut env2, &mut seeded_rng(0)).unwrap();
        prop_assert_eq!(a.dispatch.len(), b.dispatch.len());
        for (x, y) in a.dispatch.iter().zip(&b.dispatch) {
            prop_assert_eq!(x.h, y.h);
            prop_assert_eq!(perm[y.learner_index], x.learner_index);
        }
    }
}

// optweights

proptest! {
    #![proptest_config(cfg(16, 10))]

    #[test]
    fn fitted_rule_has_eps_at_least_eps_abs_and_orthogonal_residual(
        seed in any::<u64>(),
        nodes in prop::collection::btree_set(0u32..=20, 2..5),
    ) {
        let nodes: Vec<f64> = nodes.into_iter().map(|k| k as f64 / 20.0).collect();
        let spec = FunctionClassSpec::new(FunctionClass::PolyDeg { degree: 4 });
        let data = BasisEvaluations::sample(&spec, &nodes, 2000, &mut seeded_rng(seed)).unwrap();
        let rule = fit_weights(&data).unwrap();
        prop_assert!(rule.eps >= rule.eps_abs, "{} < {}", rule.eps, rule.eps_abs);
        let res = data.residuals(&rule.weights);
        for j in 0..nodes.len() {
            let col: Vec<f64> = data.rows.iter().map(|r| r[j]).collect();
            let dot: f64 = col.iter().zip(&res).map(|(c, r)| c * r).sum();
            let scale = col.iter().map(|c| c * c).sum::<f64>().sqrt() * res.iter().map(|r| r * r).sum::<f64>().sqrt();
            prop_assert!(dot.abs() <= 1e-8 * scale.max(1e-300), "column {}: {} vs {}", j, dot, scale);
        }
    }
}

fn weight_spread(samples: usize) -> Vec<f64> {
    let spec = FunctionClassSpec::new(FunctionClass::PolyDeg { degree: 4 });
    let fits: Vec<Vec<f64>> = (0..10)
        .map(|s| {
            let data = BasisEvaluations::sample(&spec, &[0.0, 0.5, 1.0], samples, &mut seeded_rng(100 + s)).unwrap();
            fit_weights(&data).unwrap().weights
        })
        .collect();
    (0..3)
        .map(|j| {
            let m = fits.iter().map(|w| w[j]).sum::<f64>() / 10.0;
            (fits.iter().map(|w| (w[j] - m).powi(2)).sum::<f64>() / 9.0).sqrt()
        })
        .collect()
}

#[test]
fn tenfold_samples_shrink_weight_spread_by_root_ten() {
    let small = weight_spread(2_000);
    let large = weight_spread(20_000);
    for j in 0..3 {
        let ratio = small[j] / large[j];
        let target = 10f64.sqrt();
        assert!(ratio > target / 2.0 && ratio < target * 2.0, "component {j}: ratio {ratio}");
    }
}

#[test]
fn reflection_symmetric_quadratics_get_symmetric_end_weights() {
    // {A x^2 + B (1 - x)^2 + C}: the measure is invariant under x -> 1 - x, so
    // the optimal rule at (0, 0.5, 1) weights both ends equally.
    let mut rng = seeded_rng(11);
    let n = 50_000;
    let nodes = vec![0.0, 0.5, 1.0];
    let mut rows = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        let b: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        let c: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        let f = |x: f64| a * x * x + b * (1.0 - x) * (1.0 - x) + c;
        rows.push(nodes.iter().map(|&x| f(x)).collect());
        targets.push((a + b) / 3.0 + c);
    }
    let rule = fit_weights(&BasisEvaluations::new(nodes, rows, targets).unwrap()).unwrap();
    let w = &rule.weights;
    // Standard error of the end weights at this sample size is about 0.005.
    assert!((w[0] - w[2]).abs() < 0.02, "{w:?}");
}

#[test]
fn pure_quadratic_family_is_rank_deficient_at_the_origin() {
    // Every A x^2 vanishes at x = 0, so that column carries no information.
    let mut rng = seeded_rng(12);
    let nodes = vec![0.0, 0.5, 1.0];
    let (mut rows, mut targets) = (Vec::new(), Vec::new());
    for _ in 0..1000 {
        let a: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        rows.push(nodes.iter().map(|&x| a * x * x).collect());
        targets.push(a / 3.0);
    }
    let err = fit_weights(&BasisEvaluations::new(nodes, rows, targets).unwrap()).unwrap_err();
    assert!(matches!(err, rlstep::Error::Singular { .. }), "{err}");
}

// bench

#[test]
fn benchmark_families_are_monotone_and_reproducible() {
    use rlstep::bench::{rk45_point, rk45_runs, simpson_sweep, subdivision_sweep};
    let spec = FunctionClassSpec::new(FunctionClass::SingleSine);
    let mut rng = seeded_rng(21);
    let fs: Vec<_> = (0..40).map(|_| sample_function(&spec, &mut rng).unwrap()).collect();
    let simpson_pts = simpson_sweep(&spec, &fs, &[0.05, 0.1, 0.15, 0.2, 0.3]);
    let sub_pts = subdivision_sweep(&spec, &fs, &[401, 201, 101, 61]).unwrap();
    for pts in [&simpson_pts, &sub_pts] {
        assert!(pts.windows(2).all(|w| w[1].avg_evaluations < w[0].avg_evaluations), "{pts:?}");
    }
    assert_eq!(simpson_sweep(&spec, &fs, &[0.05, 0.1, 0.15, 0.2, 0.3]), simpson_pts);
    assert_eq!(subdivision_sweep(&spec, &fs, &[401, 201, 101, 61]).unwrap(), sub_pts);

    let sys = OdeSystem::hybrid_pendulum();
    let ics = vec![sys.initial_condition()];
    let rk: Vec<_> = [1e-7, 1e-6, 1e-5]
        .iter()
        .map(|&t| rk45_point((0.0, 20.0), t, &rk45_runs(&sys, (0.0, 20.0), &ics, t).unwrap()))
        .collect();
    assert!(rk.windows(2).all(|w| w[1].avg_evaluations < w[0].avg_evaluations), "{rk:?}");
}
