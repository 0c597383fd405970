//! Quick property checks of the estimator, bound, controller, model and
//! round driver against the brute-force oracles. Backs the `selftest`
//! command; the full-size versions live in the acceptance suite.

use rand::Rng;

use crate::bound::{self, BoundParams};
use crate::compressor::{self, AtomicDecomposition};
use crate::controller::{self, Clamps, ControllerState};
use crate::exec::Execution;
use crate::io::synthetic::{generate_synthetic, SyntheticSpec};
use crate::model::{partition, Architecture, ModelSpec, ParamVector, PartitionScheme};
use crate::oracle;
use crate::rng::{self, Purpose, StreamRng};
use crate::sim::{run_round, ControllerSettings, Environment, RunSettings, StrategyConfig, StrategyState, TimeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error or a short failure note.
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check { name, passed: worst.is_finite() && worst <= tol, detail: format!("worst {worst:.3e} (tolerance {tol:.0e})") }
}

fn random_decomposition(k: usize, rng: &mut StreamRng) -> AtomicDecomposition {
    let v: Vec<f64> = (0..k)
        .map(|_| {
            let mag = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    compressor::decompose(&ParamVector::new(v))
}

fn estimator_checks(rng: &mut StreamRng) -> Vec<Check> {
    let (mut bias, mut var_gap, mut lemma_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..30 {
        let k = rng.random_range(1..=10);
        let d = random_decomposition(k, rng);
        let eps = rng.random_range(1..=k) as f64;
        let plan = match compressor::optimal_probabilities(&d, eps) {
            Ok(p) => p,
            Err(_) => return vec![Check { name: "estimator", passed: false, detail: "probabilities failed".into() }],
        };
        let e = oracle::enumerate_estimator(&d.weights, &d.signs, &plan.probs);
        for j in 0..k {
            bias = bias.max((e.mean[j] - d.signs[j] * d.weights[j]).abs());
        }
        let closed = compressor::variance_closed_form(&d, &plan).unwrap_or(f64::NAN);
        var_gap = var_gap.max((e.variance - closed).abs());
        if d.is_balanced(eps) {
            lemma_gap = lemma_gap.max((closed - compressor::delta_terms(&d).variance_at(eps)).abs());
        }
    }
    vec![
        check("estimator is unbiased", bias, 1e-10),
        check("variance matches closed form", var_gap, 1e-10),
        check("balanced variance splits into delta terms", lemma_gap, 1e-10),
    ]
}

fn optimality_check(rng: &mut StreamRng) -> Check {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    while cases < 10 {
        let k = rng.random_range(2..=5);
        let d = random_decomposition(k, rng);
        let eps = rng.random_range(1..k) as f64;
        if !d.is_balanced(eps) {
            continue;
        }
        cases += 1;
        let closed = compressor::optimal_probabilities(&d, eps).and_then(|p| compressor::variance_closed_form(&d, &p)).unwrap_or(f64::NAN);
        worst = worst.max(closed - oracle::grid_min_variance(&d.weights, eps, 0.01));
    }
    check("closed-form probabilities beat the grid", worst.max(0.0), 1e-8)
}

fn bound_params(rng: &mut StreamRng) -> BoundParams {
    let gamma = rng.random_range(0.01..1.0);
    BoundParams {
        lipschitz: rng.random_range(0.5..5.0),
        eta: rng.random_range(0.001..0.05),
        horizon_s: rng.random_range(10.0..1000.0),
        t_comp: rng.random_range(0.01..1.0),
        t_comm: rng.random_range(0.01..1.0),
        gamma,
        delta1: rng.random_range(1.0..100.0),
        delta2: -rng.random_range(0.0..1.0),
        lambda: 0.0,
        num_clients: rng.random_range(1..64) as f64,
        f_inf: 0.0,
        alpha: gamma,
    }
}

fn bound_check(rng: &mut StreamRng) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = bound_params(rng);
        let (f, i, e) = (rng.random_range(0.5..3.0), rng.random_range(1.0..30.0), rng.random_range(1.0..10.0));
        let g = bound::bound_joint_gradient(f, i, e, &p).unwrap_or([f64::NAN; 2]);
        let fi = oracle::central_difference(|x| bound::bound_joint(f, x, e, &p).map(|b| b.value).unwrap_or(f64::NAN), i, 1e-5 * i);
        let fe = oracle::central_difference(|x| bound::bound_joint(f, i, x, &p).map(|b| b.value).unwrap_or(f64::NAN), e, 1e-5 * e);
        for (a, n) in [(g[0], fi), (g[1], fe)] {
            worst = worst.max((a - n).abs() / n.abs().max(1e-8));
        }
    }
    check("bound gradient matches finite differences", worst, 1e-6)
}

fn controller_check(rng: &mut StreamRng) -> Check {
    let state = match ControllerState::new(30.0, 4.0, 2.3, Clamps::default()) {
        Ok(s) => s,
        Err(e) => return Check { name: "controller", passed: false, detail: e.to_string() },
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let f = rng.random_range(1e-3..10.0);
        let s = controller::schedule(&state, f).unwrap_or(controller::Schedule {
            local_steps: 0,
            eps: 0.0,
            raw_i: f64::NAN,
            raw_eps: f64::NAN,
        });
        worst = worst.max((s.raw_i * s.raw_eps - 120.0).abs() / 120.0);
    }
    check("controller keeps I*eps constant", worst, 1e-12)
}

fn gradient_check(rng: &mut StreamRng) -> Check {
    let mut worst = 0.0f64;
    for case in 0..5u64 {
        let (d, c) = (rng.random_range(2..6), rng.random_range(2..5));
        let arch =
            if case % 2 == 0 { Architecture::LogisticRegression } else { Architecture::Mlp { hidden: vec![rng.random_range(2..6)] } };
        let spec = match ModelSpec::new(arch, d, c) {
            Ok(s) => s,
            Err(e) => return Check { name: "model gradient", passed: false, detail: e.to_string() },
        };
        let w = ParamVector::new((0..spec.dim()).map(|_| rng.random_range(-0.5..0.5)).collect());
        let x: Vec<Vec<f64>> = (0..4).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<usize> = (0..4).map(|_| rng.random_range(0..c)).collect();
        let batch: Vec<_> = x.iter().zip(&y).map(|(f, &l)| crate::model::Example { features: f, label: l }).collect();
        let Ok((_, g)) = spec.loss_and_gradient(&w, &batch) else {
            return Check { name: "model gradient", passed: false, detail: "gradient failed".into() };
        };
        let num = oracle::central_difference_gradient(|p| spec.loss(p, &batch).unwrap_or(f64::NAN), &w, 1e-6);
        for (a, n) in g.as_slice().iter().zip(&num) {
            worst = worst.max((a - n).abs() / n.abs().max(1e-4));
        }
    }
    check("model gradient matches finite differences", worst, 1e-5)
}

fn fedavg_check(seed: u64) -> Check {
    let fail = |e: crate::Error| Check { name: "lossless single-step rounds equal dense FedAvg", passed: false, detail: e.to_string() };
    let spec_data = SyntheticSpec {
        num_examples: 200,
        num_eval: 50,
        num_classes: 3,
        feature_dim: 4,
        cluster_spread: 0.5,
        centroid_scale: 1.0,
        feature_offset: 0.0,
    };
    let data = match generate_synthetic(&spec_data, seed) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let model = match ModelSpec::new(Architecture::Mlp { hidden: vec![5] }, 4, 3) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let shards = match partition(&data.train, 4, PartitionScheme::Iid, &mut rng::stream(seed, 0, 0, Purpose::Partition)) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let env = Environment { init: model.init_params(seed), spec: model, train: data.train, eval: data.eval, shards };
    let settings = RunSettings { seed, lr: 0.1, batch_size: 8, time_model: TimeModel::default(), execution: Execution::Parallel };
    let strategy: StrategyConfig = StrategyConfig::FixedBoth { local_steps: 1, budget: crate::sim::Budget::Lossless };
    let mut state = match StrategyState::new(strategy, &ControllerSettings::default()) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let (mut w, mut reference, mut worst) = (env.init.clone(), env.init.clone(), 0.0f64);
    for round in 1..=5 {
        let out = match run_round(&env, &settings, &mut state, &w, round, 0.0) {
            Ok(o) => o,
            Err(e) => return fail(e),
        };
        reference =
            oracle::dense_fedavg_round(&env.spec, &reference, &env.train, &env.shards, 1, settings.lr, settings.batch_size, seed, round);
        w = out.params;
        worst = worst.max(w.max_abs_diff(&reference));
    }
    check("lossless single-step rounds equal dense FedAvg", worst, 1e-10)
}

/// Run every check with randomness derived from `seed`.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut rng = rng::stream(seed, 0, 0, Purpose::Oracle);
    let mut out = estimator_checks(&mut rng);
    out.push(optimality_check(&mut rng));
    out.push(bound_check(&mut rng));
    out.push(controller_check(&mut rng));
    out.push(gradient_check(&mut rng));
    out.push(fedavg_check(seed));
    out
}
