//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always
//! visible under `cargo test`. Exits non-zero if any criterion fails.
//!
//! Set `EAFO_FMNIST_DIR` to a directory holding the four uncompressed
//! Fashion-MNIST IDX files to add the real-data variant of criterion 9.

use std::path::{Path, PathBuf};
use std::time::Instant;

use eafo_core::bound::{self, BoundParams};
use eafo_core::compressor::{self, AtomicDecomposition};
use eafo_core::controller::{schedule, Clamps, ControllerState};
use eafo_core::exec::Execution;
use eafo_core::io::config::{DatasetConfig, ExperimentConfig};
use eafo_core::io::metrics::{MetricsHeader, MetricsRecord, MetricsWriter};
use eafo_core::io::synthetic::{generate_synthetic, SyntheticSpec};
use eafo_core::model::{partition, Architecture, Example, ModelSpec, ParamVector, PartitionScheme};
use eafo_core::oracle;
use eafo_core::sim::{
    build_environment, run_round, run_strategy, time_to_target, Budget, ControllerSettings, Environment, RunSettings, StrategyConfig,
    StrategyState, TimeModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Signed values with magnitudes log-uniform in [0.05, 5].
fn random_decomposition(k: usize, rng: &mut ChaCha8Rng) -> AtomicDecomposition {
    let v: Vec<f64> = (0..k)
        .map(|_| {
            let mag = (rng.random_range(0.05f64.ln()..5f64.ln())).exp();
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    compressor::decompose(&ParamVector::new(v))
}

/// Corpus shared by criteria 1, 2 and 4.
fn estimator_corpus() -> Vec<(AtomicDecomposition, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    (0..100)
        .map(|_| {
            let k = rng.random_range(1..=12);
            let eps = rng.random_range(1..=k) as f64;
            (random_decomposition(k, &mut rng), eps)
        })
        .collect()
}

fn criterion_1(corpus: &[(AtomicDecomposition, f64)]) -> Outcome {
    let mut worst = 0.0f64;
    for (d, eps) in corpus {
        let plan = compressor::optimal_probabilities(d, *eps).expect("probabilities");
        let e = oracle::enumerate_estimator(&d.weights, &d.signs, &plan.probs);
        for j in 0..d.len() {
            worst = worst.max((e.mean[j] - d.signs[j] * d.weights[j]).abs());
        }
    }
    outcome(worst <= 1e-10, format!("worst coordinate error {worst:.3e} <= 1e-10 over {} cases", corpus.len()))
}

fn criterion_2(corpus: &[(AtomicDecomposition, f64)]) -> Outcome {
    let mut worst = 0.0f64;
    for (d, eps) in corpus {
        let plan = compressor::optimal_probabilities(d, *eps).expect("probabilities");
        let e = oracle::enumerate_estimator(&d.weights, &d.signs, &plan.probs);
        // Independent closed form.
        let closed: f64 = d.weights.iter().zip(&plan.probs).map(|(w, p)| w * w * (1.0 / p - 1.0)).sum();
        worst = worst.max((e.variance - closed).abs());
    }
    outcome(worst <= 1e-10, format!("worst variance gap {worst:.3e} <= 1e-10"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    while cases < 50 {
        let k = rng.random_range(2..=6);
        let d = random_decomposition(k, &mut rng);
        // Budget on the 0.01 grid, at least one atom's worth below K.
        let eps = rng.random_range(100..(k * 100 - 50)) as f64 / 100.0;
        let l1: f64 = d.weights.iter().sum();
        if d.weights.iter().any(|&w| w * eps > l1) {
            continue;
        }
        cases += 1;
        let plan = compressor::optimal_probabilities(&d, eps).expect("probabilities");
        let closed: f64 = d.weights.iter().zip(&plan.probs).map(|(w, p)| w * w * (1.0 / p - 1.0)).sum();
        let grid = oracle::grid_min_variance(&d.weights, eps, 0.01);
        worst = worst.max(closed - grid);
    }
    outcome(worst <= 1e-8, format!("grid beats closed form by at most {worst:.3e} <= 1e-8 over {cases} balanced cases"))
}

fn criterion_4(corpus: &[(AtomicDecomposition, f64)]) -> Outcome {
    let mut worst = 0.0f64;
    let mut balanced = 0;
    for (d, eps) in corpus {
        let l1: f64 = d.weights.iter().sum();
        if d.weights.iter().any(|&w| w * eps > l1) {
            continue;
        }
        balanced += 1;
        let plan = compressor::optimal_probabilities(d, *eps).expect("probabilities");
        let closed: f64 = d.weights.iter().zip(&plan.probs).map(|(w, p)| w * w * (1.0 / p - 1.0)).sum();
        let delta1 = l1 * l1;
        let delta2: f64 = -d.weights.iter().map(|w| w * w).sum::<f64>();
        worst = worst.max((closed - (delta1 / eps + delta2)).abs());
    }
    outcome(balanced > 0 && worst <= 1e-10, format!("worst gap {worst:.3e} <= 1e-10 over {balanced} balanced cases"))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_grad = 0.0f64;
    for _ in 0..200 {
        let gamma = log_uniform(&mut rng, 1e-3, 1.0);
        let p = BoundParams {
            lipschitz: log_uniform(&mut rng, 0.1, 10.0),
            eta: log_uniform(&mut rng, 1e-3, 1e-1),
            horizon_s: log_uniform(&mut rng, 10.0, 1e4),
            t_comp: log_uniform(&mut rng, 1e-3, 1.0),
            t_comm: 0.0,
            gamma,
            delta1: log_uniform(&mut rng, 0.1, 100.0),
            delta2: -log_uniform(&mut rng, 1e-3, 1.0),
            lambda: 0.0,
            num_clients: rng.random_range(1..=64) as f64,
            f_inf: 0.0,
            alpha: gamma,
        };
        let f = rng.random_range(0.1..5.0);
        let i = rng.random_range(1.5..30.0);
        let e = rng.random_range(1.0..10.0);
        // Difference each term of the bound separately and measure the error
        // against the summed term magnitudes, so partials that nearly cancel
        // are not judged by finite-difference round-off.
        let terms = |i: f64, e: f64| {
            let b = bound::bound_joint(f, i, e, &p).expect("interior point");
            [b.optimization, b.noise, b.drift]
        };
        let g = bound::bound_joint_gradient(f, i, e, &p).expect("gradient");
        for (c, (x, h)) in [(i, 1e-4 * i), (e, 1e-4 * e)].into_iter().enumerate() {
            let shifted = |t: f64| if c == 0 { terms(t, e) } else { terms(i, t) };
            let (up, down) = (shifted(x + h), shifted(x - h));
            let parts: Vec<f64> = (0..3).map(|k| (up[k] - down[k]) / (2.0 * h)).collect();
            let fd: f64 = parts.iter().sum();
            let scale: f64 = parts.iter().map(|v| v.abs()).sum();
            worst_grad = worst_grad.max((g[c] - fd).abs() / scale.max(1e-300));
        }
    }
    // Determinant under (i) I >= 2, (ii)+(iii) negligible fourth-order term,
    // (iv) drift dominates.
    let mut accepted = 0;
    let mut attempts = 0;
    let mut min_det = f64::INFINITY;
    while accepted < 1000 && attempts < 2_000_000 {
        attempts += 1;
        let alpha = log_uniform(&mut rng, 1e-4, 1e-1);
        let p = BoundParams {
            lipschitz: log_uniform(&mut rng, 0.01, 1.0),
            eta: log_uniform(&mut rng, 1e-3, 1e-2),
            horizon_s: log_uniform(&mut rng, 1e3, 1e6),
            t_comp: 0.1,
            t_comm: 0.0,
            gamma: alpha,
            delta1: log_uniform(&mut rng, 0.1, 100.0),
            delta2: -rng.random_range(0.0..1.0),
            lambda: 0.0,
            num_clients: rng.random_range(1..=64) as f64,
            f_inf: 0.0,
            alpha,
        };
        let i: f64 = rng.random_range(2.0..30.0);
        let e: f64 = rng.random_range(1.0..10.0);
        let f0 = rng.random_range(0.1..3.0);
        let el = p.eta * p.lipschitz;
        let fourth = el.powi(4) * p.delta1 * p.delta1 / e.powi(4);
        let drift = 2.0 * p.eta * p.eta * p.lipschitz * p.horizon_s * p.delta1 * i >= alpha * p.num_clients * e * e * f0;
        if !(i >= 2.0 && fourth <= 1e-10 && drift) {
            continue;
        }
        accepted += 1;
        let h = bound::hessian(i, e, f0, &p).expect("hessian");
        min_det = min_det.min(h[0][0] * h[1][1] - h[0][1] * h[1][0]);
    }
    let passed = worst_grad <= 1e-6 && accepted == 1000 && min_det >= -1e-9;
    outcome(
        passed,
        format!(
            "gradient worst relative error {worst_grad:.3e} <= 1e-6 at 200 points; min det {min_det:.3e} >= -1e-9 over {accepted} samples"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let wide = Clamps { i_min: 1, i_max: u32::MAX, eps_min: 1e-300, eps_max: 1e300 };
    let mut worst_product = 0.0f64;
    let mut worst_eighth = 0.0f64;
    for _ in 0..1000 {
        let i0 = rng.random_range(1.0..50.0);
        let e0 = rng.random_range(1.0..10.0);
        let f0 = log_uniform(&mut rng, 1e-2, 10.0);
        let state = ControllerState::new(i0, e0, f0, wide).expect("state");
        let f = log_uniform(&mut rng, 1e-4, 10.0);
        let s = schedule(&state, f).expect("schedule");
        worst_product = worst_product.max((s.raw_i * s.raw_eps - i0 * e0).abs() / (i0 * e0));
        let t = schedule(&state, f / 8.0).expect("schedule");
        worst_eighth = worst_eighth.max((t.raw_i - s.raw_i / 2.0).abs() / s.raw_i).max((t.raw_eps - 2.0 * s.raw_eps).abs() / s.raw_eps);
    }
    outcome(
        worst_product <= 1e-12 && worst_eighth <= 1e-12,
        format!(
            "I*eps relative drift {worst_product:.3e} <= 1e-12; F/8 halving/doubling error {worst_eighth:.3e} <= 1e-12 over 1000 losses"
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut worst = 0.0f64;
    for (seed, arch) in [(71u64, Architecture::LogisticRegression), (72, Architecture::Mlp { hidden: vec![8] })] {
        let spec = SyntheticSpec {
            num_examples: 800,
            num_eval: 100,
            num_classes: 4,
            feature_dim: 6,
            cluster_spread: 0.7,
            centroid_scale: 1.0,
            feature_offset: 1.0,
        };
        let data = generate_synthetic(&spec, seed).expect("data");
        let model = ModelSpec::new(arch, 6, 4).expect("model");
        let mut part_rng = ChaCha8Rng::seed_from_u64(seed);
        let shards = partition(&data.train, 8, PartitionScheme::Iid, &mut part_rng).expect("partition");
        let env = Environment { init: model.init_params(seed), spec: model, train: data.train, eval: data.eval, shards };
        let settings = RunSettings { seed, lr: 0.05, batch_size: 16, time_model: TimeModel::default(), execution: Execution::Parallel };
        let mut state =
            StrategyState::new(StrategyConfig::FixedBoth { local_steps: 1, budget: Budget::Lossless }, &ControllerSettings::default())
                .expect("strategy");
        let (mut w, mut reference, mut clock) = (env.init.clone(), env.init.clone(), 0.0);
        for round in 1..=20 {
            let out = run_round(&env, &settings, &mut state, &w, round, clock).expect("round");
            reference = oracle::dense_fedavg_round(
                &env.spec,
                &reference,
                &env.train,
                &env.shards,
                1,
                settings.lr,
                settings.batch_size,
                seed,
                round,
            );
            worst = worst.max(out.params.max_abs_diff(&reference));
            clock = out.metrics.cumulative_time_s;
            w = out.params;
        }
    }
    outcome(worst <= 1e-10, format!("max parameter gap {worst:.3e} <= 1e-10 over 20 rounds (logistic and MLP)"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let d = rng.random_range(2..8);
        let c = rng.random_range(2..6);
        let arch = match case % 3 {
            0 => Architecture::LogisticRegression,
            1 => Architecture::Mlp { hidden: vec![rng.random_range(2..8)] },
            _ => Architecture::Mlp { hidden: vec![rng.random_range(2..6), rng.random_range(2..6)] },
        };
        let spec = ModelSpec::new(arch, d, c).expect("model");
        let w = ParamVector::new((0..spec.dim()).map(|_| rng.random_range(-0.8..0.8)).collect());
        let n = rng.random_range(1..10);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let batch: Vec<Example<'_>> = xs.iter().zip(&ys).map(|(x, &y)| Example { features: x, label: y }).collect();
        let (_, g) = spec.loss_and_gradient(&w, &batch).expect("gradient");
        let fd = oracle::central_difference_gradient(|p| spec.loss(p, &batch).expect("loss"), &w, 1e-5);
        let diff: f64 = g.as_slice().iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    outcome(worst <= 1e-5, format!("worst relative gradient error {worst:.3e} <= 1e-5 over 20 model/batch pairs"))
}

fn bundled_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.toml");
    ExperimentConfig::load(&path).expect("bundled config")
}

/// Time-to-target of each strategy on one shared environment; `None`
/// when the target is never reached.
fn times(config: &ExperimentConfig, strategies: &[StrategyConfig], target: f64) -> Vec<Option<f64>> {
    config.validate().expect("valid config");
    let env = build_environment(config).expect("environment");
    strategies
        .iter()
        .map(|&s| {
            let out = run_strategy(&env, &config.run_settings(), &config.controller_settings(), s, config.stop_rule(), &mut |_| Ok(()))
                .expect("run");
            time_to_target(&out.metrics, target)
        })
        .collect()
}

fn strictly_faster(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x < y,
        (Some(_), None) => true,
        _ => false,
    }
}

fn no_slower(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x <= y,
        (Some(_), None) => true,
        _ => false,
    }
}

fn fmt_times(t: &[Option<f64>]) -> String {
    t.iter().map(|x| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "never".into())).collect::<Vec<_>>().join("/")
}

const FIXED_BOTH: StrategyConfig = StrategyConfig::FixedBoth { local_steps: 1, budget: Budget::Lossless };
const FIXED_EPS: StrategyConfig = StrategyConfig::FixedEpsOnly { eps: 6.0 };
const ADAPTIVE_I: StrategyConfig = StrategyConfig::AdaptiveIOnly { i0: 4 };
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn criterion_9(base: &ExperimentConfig) -> Outcome {
    let target = base.target_accuracy.expect("target in bundled config");
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let mut c = base.clone();
        c.seed = seed;
        c.time.uplink_bps = 100e3;
        c.time.downlink_bps = 100e3;
        let t = times(&c, &[StrategyConfig::Eafo, FIXED_BOTH, FIXED_EPS], target);
        if strictly_faster(t[0], t[1]) && strictly_faster(t[0], t[2]) {
            wins += 1;
        }
        per_seed.push(fmt_times(&t));
    }
    outcome(
        wins >= 4,
        format!("EAFO first to {target} on {wins}/5 seeds (>= 4); eafo/fixed-both/fixed-eps seconds: {}", per_seed.join(" ")),
    )
}

fn criterion_9_fashion(dir: &Path) -> Outcome {
    let mut base = bundled_config();
    base.dataset = DatasetConfig::Idx {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        eval_images: dir.join("t10k-images-idx3-ubyte"),
        eval_labels: dir.join("t10k-labels-idx1-ubyte"),
        num_classes: 10,
    };
    base.time.per_step_compute_s = 1e-3;
    base.target_accuracy = Some(0.8);
    criterion_9(&base)
}

fn criterion_10(base: &ExperimentConfig) -> Outcome {
    let target = base.target_accuracy.expect("target in bundled config");
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let mut ok = true;
        let mut shown = Vec::new();
        for (up, down, compression_wins) in [(10e3, 100e3, true), (10e6, 10e6, false)] {
            let mut c = base.clone();
            c.seed = seed;
            c.time.uplink_bps = up;
            c.time.downlink_bps = down;
            let t = times(&c, &[StrategyConfig::Eafo, FIXED_EPS, ADAPTIVE_I], target);
            let (eafo, eps_only, i_only) = (t[0], t[1], t[2]);
            let ordering = if compression_wins { strictly_faster(eps_only, i_only) } else { strictly_faster(i_only, eps_only) };
            let best = if strictly_faster(eps_only, i_only) { eps_only } else { i_only };
            ok &= ordering && no_slower(eafo, best);
            shown.push(fmt_times(&t));
        }
        if ok {
            wins += 1;
        }
        per_seed.push(shown.join("|"));
    }
    outcome(
        wins >= 4,
        format!(
            "ordering flips and EAFO <= best on {wins}/5 seeds (>= 4); eafo/fixed-eps/adaptive-i seconds at 10/100K|10/10M: {}",
            per_seed.join(" ")
        ),
    )
}

fn criterion_11(base: &ExperimentConfig) -> Outcome {
    let target = base.target_accuracy.expect("target in bundled config");
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let mut c = base.clone();
        c.seed = seed;
        c.partition = PartitionScheme::NonIid { shards_per_client: 2 };
        let t = times(&c, &[StrategyConfig::Eafo, FIXED_EPS, ADAPTIVE_I], target);
        if no_slower(t[0], t[1]) && no_slower(t[0], t[2]) {
            wins += 1;
        }
        per_seed.push(fmt_times(&t));
    }
    outcome(
        wins >= 3,
        format!("EAFO <= both baselines on {wins}/5 non-IID seeds (>= 3); eafo/fixed-eps/adaptive-i seconds: {}", per_seed.join(" ")),
    )
}

fn write_run(config: &ExperimentConfig, execution: Execution, path: &Path) {
    let mut config = config.clone();
    config.execution = execution;
    let env = build_environment(&config).expect("environment");
    let hash = config.config_hash().expect("hash");
    let header =
        MetricsHeader { strategy: config.strategy.to_string(), config_hash: hash.clone(), config: config.to_toml().expect("toml") };
    let file = std::fs::File::create(path).expect("create");
    let mut w = MetricsWriter::new(file, config.output.format, &header).expect("writer");
    let label = config.strategy.label();
    run_strategy(&env, &config.run_settings(), &config.controller_settings(), config.strategy, config.stop_rule(), &mut |m| {
        w.write(&MetricsRecord::new(&label, &hash, m))
    })
    .expect("run");
}

fn criterion_12(base: &ExperimentConfig) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut identical = 0;
    let mut total = 0;
    for (strategy, format) in [(StrategyConfig::Eafo, "csv"), (FIXED_EPS, "jsonl"), (ADAPTIVE_I, "csv")] {
        let mut c = base.with_strategy(strategy);
        c.rounds = 40;
        c.output.format = format.parse().expect("format");
        let paths: Vec<PathBuf> = (0..3).map(|k| dir.path().join(format!("{}_{k}.{format}", strategy.label()))).collect();
        write_run(&c, Execution::Parallel, &paths[0]);
        write_run(&c, Execution::Parallel, &paths[1]);
        write_run(&c, Execution::Sequential, &paths[2]);
        let bytes: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).expect("read")).collect();
        total += 1;
        // The sequential file differs only in its echoed `execution` line.
        let records = |b: &[u8]| -> Vec<String> {
            String::from_utf8_lossy(b)
                .lines()
                .filter(|l| !l.starts_with('#') && !l.starts_with("{\"header\""))
                .map(str::to_string)
                .collect()
        };
        if bytes[0] == bytes[1] && !bytes[0].is_empty() && records(&bytes[0]) == records(&bytes[2]) {
            identical += 1;
        }
    }
    outcome(
        identical == total,
        format!("{identical}/{total} configs byte-identical across repeated runs, records identical sequential vs parallel"),
    )
}

fn main() {
    let base = bundled_config();
    let corpus = estimator_corpus();
    let mut criteria: Vec<Criterion<'_>> = vec![
        ("1 estimator unbiasedness", Box::new(|| criterion_1(&corpus))),
        ("2 variance identity", Box::new(|| criterion_2(&corpus))),
        ("3 probability optimality", Box::new(criterion_3)),
        ("4 balanced variance decomposition", Box::new(|| criterion_4(&corpus))),
        ("5 bound derivatives and convexity", Box::new(criterion_5)),
        ("6 controller law", Box::new(criterion_6)),
        ("7 dense FedAvg equivalence", Box::new(criterion_7)),
        ("8 model gradients", Box::new(criterion_8)),
        ("9 accuracy-vs-time ordering", Box::new(|| criterion_9(&base))),
        ("10 link-regime flip", Box::new(|| criterion_10(&base))),
        ("11 non-IID robustness", Box::new(|| criterion_11(&base))),
        ("12 determinism", Box::new(|| criterion_12(&base))),
    ];
    if let Some(dir) = std::env::var_os("EAFO_FMNIST_DIR") {
        let dir = PathBuf::from(dir);
        criteria.push(("9 accuracy-vs-time ordering (Fashion-MNIST)", Box::new(move || criterion_9_fashion(&dir))));
    }
    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!("[{}] {name}: {} ({:.2} s)", if o.passed { "PASS" } else { "FAIL" }, o.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
