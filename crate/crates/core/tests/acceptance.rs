//! Acceptance suite. Runs every acceptance criterion at its stated tolerance,
//! prints one PASS/FAIL line per criterion, and exits non-zero if any fail.

use std::time::{Duration, Instant};

use gcnstab::datasets::{generate_synthetic, GraphKind, SyntheticSpec};
use gcnstab::ego::{extract_ego, g_lambda_empirical, node_output, normalize_features, FeatureMatrix};
use gcnstab::graph::{FilterKind, FilterMatrix, Graph};
use gcnstab::model::{forward_full, grad_from_aggregate, Activation, Label, Loss};
use gcnstab::spectral::{interlacing_check, lambda_max, lambda_max_dense, PowerConfig};
use gcnstab::stability::{
    beta_bound, empirical_gap, empirical_stability, expected_divergence_bound, gen_gap_bound, BoundInputs,
    LambdaSource, SpectralInputs, StabilityConfig,
};
use gcnstab::model::Constants;
use gcnstab::trainer::{twin_train, Objective, Perturbation, Sample, SequenceMode, SgdConfig, Violations};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

const STUDIED: [FilterKind; 3] = [FilterKind::Unnormalized, FilterKind::SymNormalized, FilterKind::RandomWalk];

fn test_graphs() -> Vec<(&'static str, Graph)> {
    vec![
        ("ER(200,0.05)", GraphKind::ErdosRenyi { n: 200, p: 0.05 }.generate(0).unwrap()),
        ("Star(50)", GraphKind::Star { n: 50 }.generate(0).unwrap()),
        ("Complete(20)", GraphKind::Complete { n: 20 }.generate(0).unwrap()),
        ("Cycle(30)", GraphKind::Cycle { n: 30 }.generate(0).unwrap()),
    ]
}

fn interlacing() -> Outcome {
    let start = Instant::now();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for (_, g) in test_graphs() {
        for kind in STUDIED {
            let r = interlacing_check(&FilterMatrix::build(&g, kind), 1e-9, &PowerConfig::default()).unwrap();
            violations += r.violations.len();
            worst = worst.max(r.max_ratio);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && elapsed < Duration::from_secs(30),
        format!("{violations} violations over 12 graph/filter pairs, max lambda_ego/lambda_G = {worst:.6}, {elapsed:.2?}"),
    )
}

fn spectral_facts() -> Outcome {
    let cfg = PowerConfig::default();
    let mut graphs = test_graphs();
    graphs.push(("Complete(10)", GraphKind::Complete { n: 10 }.generate(0).unwrap()));
    graphs.push(("Star(5)", GraphKind::Star { n: 5 }.generate(0).unwrap()));

    let mut failures = Vec::new();
    let mut worst_gap: f64 = 0.0;
    for (name, g) in &graphs {
        for kind in FilterKind::ALL {
            let f = FilterMatrix::build(g, kind);
            let power = lambda_max(&f, &cfg).unwrap().lambda_max;
            let dense = lambda_max_dense(&f.to_dense().unwrap()).unwrap().lambda_max;
            worst_gap = worst_gap.max((power - dense).abs());
            if (power - dense).abs() > 1e-8 {
                failures.push(format!("{name}/{kind}: power {power} vs dense {dense}"));
            }
            if kind == FilterKind::SymNormalized && power > 2.0 + 1e-9 {
                failures.push(format!("{name}/symnorm: {power} > 2"));
            }
        }
    }
    let unnorm = |g: &Graph| lambda_max(&FilterMatrix::build(g, FilterKind::Unnormalized), &cfg).unwrap().lambda_max;
    let k10 = unnorm(&graphs[4].1);
    let s5 = unnorm(&graphs[5].1);
    if (k10 - 10.0).abs() > 1e-6 {
        failures.push(format!("Complete(10) unnorm = {k10}"));
    }
    if (s5 - 3.0).abs() > 1e-6 {
        failures.push(format!("Star(5) unnorm = {s5}"));
    }
    let detail = format!("K10 unnorm {k10:.9}, S5 unnorm {s5:.9}, max |power - dense| = {worst_gap:.2e}");
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {}", failures.join("; ")))
    }
}

// Independent scalar model for the finite-difference oracle. Differences
// ℓ(θ + h e_k) − ℓ(θ − h e_k) are formed through expm1/ln1p identities so the
// quotient keeps full precision at saturated units.

fn act_value(act: Activation, u: f64) -> f64 {
    match act {
        Activation::Elu1 => {
            if u > 0.0 {
                u
            } else {
                u.exp_m1()
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-u).exp()),
        Activation::Tanh => u.tanh(),
    }
}

// 1 − σ(u)
fn act_complement(act: Activation, u: f64) -> f64 {
    match act {
        Activation::Elu1 => {
            if u > 0.0 {
                1.0 - u
            } else {
                2.0 - u.exp()
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + u.exp()),
        Activation::Tanh => 2.0 / (1.0 + (2.0 * u).exp()),
    }
}

// σ(a) − σ(b)
fn act_diff(act: Activation, a: f64, b: f64) -> f64 {
    match act {
        Activation::Elu1 if a > 0.0 && b > 0.0 => a - b,
        Activation::Elu1 if a <= 0.0 && b <= 0.0 => b.exp() * (a - b).exp_m1(),
        Activation::Elu1 => act_value(act, a) - act_value(act, b),
        Activation::Sigmoid => act_value(act, a) * act_value(act, -b) * -(b - a).exp_m1(),
        Activation::Tanh => (a - b).sinh() / (a.cosh() * b.cosh()),
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

// ℓ(σ(a)) − ℓ(σ(b))
fn loss_diff(act: Activation, loss: Loss, positive: bool, a: f64, b: f64) -> f64 {
    let d = act_diff(act, a, b);
    let (fa, fb) = (act_value(act, a), act_value(act, b));
    match loss {
        Loss::Logistic => {
            let y = if positive { 1.0 } else { -1.0 };
            let zb = -y * fb;
            let weight = 1.0 / (1.0 + (-zb).exp());
            (weight * (-y * d).exp_m1()).ln_1p()
        }
        Loss::ClampedCrossEntropy { eps } => {
            let inside = |f: f64| f > eps && f < 1.0 - eps;
            let value = |f: f64| {
                let p = f.clamp(eps, 1.0 - eps);
                if positive {
                    -p.ln()
                } else {
                    -(-p).ln_1p()
                }
            };
            match (inside(fa), inside(fb)) {
                (true, true) if positive => -(d / fb).ln_1p(),
                (true, true) => -(-d / act_complement(act, b)).ln_1p(),
                (false, false) if (fa <= eps) == (fb <= eps) => 0.0,
                _ => value(fa) - value(fb),
            }
        }
    }
}

fn oracle_fd(a: &[f64], theta: &[f64], act: Activation, loss: Loss, positive: bool, h: f64) -> Vec<f64> {
    let u: f64 = a.iter().zip(theta).map(|(x, t)| x * t).sum();
    a.iter()
        .map(|&ak| loss_diff(act, loss, positive, u + ak * h, u - ak * h) / (2.0 * h))
        .collect()
}

// Plain evaluation, used to cross-check the difference identities.
fn oracle_loss(u: f64, act: Activation, loss: Loss, positive: bool) -> f64 {
    let f = act_value(act, u);
    match loss {
        Loss::Logistic => softplus(if positive { -f } else { f }),
        Loss::ClampedCrossEntropy { eps } => {
            let p = f.clamp(eps, 1.0 - eps);
            if positive {
                -p.ln()
            } else {
                -(-p).ln_1p()
            }
        }
    }
}

fn gradient_oracle() -> Outcome {
    let h = 1e-6;
    let losses = [Loss::Logistic, Loss::ClampedCrossEntropy { eps: 1e-6 }];
    let acts = [Activation::Elu1, Activation::Sigmoid, Activation::Tanh];
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut identity_gap: f64 = 0.0;
    for act in acts {
        for loss in losses {
            let mut rng = ChaCha8Rng::seed_from_u64(0x6ad);
            for _ in 0..100 {
                let d = rng.gen_range(1..=6);
                let a: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let theta: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let positive = rng.gen_bool(0.5);
                let mut grad = vec![0.0; d];
                grad_from_aggregate(&a, &theta, act, loss, Label::from_positive(positive), &mut grad);
                let fd = oracle_fd(&a, &theta, act, loss, positive, h);
                let diff = grad.iter().zip(&fd).map(|(g, f)| (g - f).powi(2)).sum::<f64>().sqrt();
                let scale = l2(&grad).max(l2(&fd));
                let rel = if scale == 0.0 { 0.0 } else { diff / scale };
                worst = worst.max(rel);
                failures += usize::from(rel > 1e-6);

                let (ua, ub) = (0.3 * theta[0], -0.2 * theta[0]);
                let direct = oracle_loss(ua, act, loss, positive) - oracle_loss(ub, act, loss, positive);
                identity_gap = identity_gap.max((loss_diff(act, loss, positive, ua, ub) - direct).abs());
            }
        }
    }
    outcome(
        failures == 0 && identity_gap < 1e-9,
        format!("600 instances, {failures} above 1e-6, worst relative error {worst:.2e}"),
    )
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    normalize_features(&FeatureMatrix::new(n, d, raw).unwrap()).features
}

fn ego_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for (gi, (_, g)) in test_graphs().into_iter().enumerate() {
        let x = random_features(g.n(), 5, gi as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + gi as u64);
        let theta: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        for kind in STUDIED {
            let f = FilterMatrix::build(&g, kind);
            for act in [Activation::Elu1, Activation::Sigmoid, Activation::Tanh] {
                let full = forward_full(&f, &x, &theta, act).unwrap();
                for (node, &want) in full.iter().enumerate() {
                    let got = node_output(&extract_ego(&f, &x, node).unwrap(), &theta, act).unwrap();
                    worst = worst.max((got - want).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("max |ego - full| = {worst:.2e} over 4 graphs x 3 filters x 3 activations"))
}

struct TwinSetup {
    train: Vec<Sample>,
    pert: Perturbation,
    g_lambda: f64,
}

fn twin_setup(kind: FilterKind, n: usize, p: f64, d_in: usize, seed: u64) -> TwinSetup {
    let syn = generate_synthetic(&SyntheticSpec::new(GraphKind::ErdosRenyi { n, p }, d_in, seed)).unwrap();
    let f = FilterMatrix::build(&syn.dataset.graph, kind);
    let (train, test) = syn.dataset.split_samples(&f).unwrap();
    let g_lambda = g_lambda_empirical(&f, &syn.dataset.features).unwrap().value;
    TwinSetup { train, pert: Perturbation { index: 0, replacement: test[0].clone() }, g_lambda }
}

fn add(total: &mut Violations, v: Violations) {
    total.same_sample += v.same_sample;
    total.differing_sample += v.differing_sample;
    total.envelope += v.envelope;
}

fn lemma_suite() -> (Outcome, Outcome) {
    let obj = Objective { act: Activation::Elu1, loss: Loss::Logistic };
    let mut stated = Violations::default();
    let mut chain = Violations::default();
    let (mut same_steps, mut differing_steps) = (0, 0);
    for run in 0..20u64 {
        let kind = STUDIED[run as usize % 3];
        let setup = twin_setup(kind, 100, 0.05, 8, run);
        let cfg = SgdConfig { eta: 0.1, epochs: 5, seed: run, mode: SequenceMode::UniformWithReplacement };
        let trace = twin_train(&setup.train, &setup.pert, &obj, &cfg, &[0.0; 8], Some(setup.g_lambda)).unwrap();
        same_steps += trace.steps.iter().filter(|s| s.same_sample.is_some()).count();
        differing_steps += trace.steps.iter().filter(|s| s.differing_sample.is_some()).count();
        add(&mut stated, trace.violations(1e-9));
        add(&mut chain, trace.chain_rule_violations(1e-9));
    }
    let describe = |v: &Violations| {
        format!(
            "same-sample {}/{same_steps}, differing-sample {}/{differing_steps}, envelope {}/{}",
            v.same_sample,
            v.differing_sample,
            v.envelope,
            same_steps + differing_steps
        )
    };
    (
        outcome(stated.total() == 0, format!("20 twin runs, violations: {}", describe(&stated))),
        outcome(chain.total() == 0, format!("same runs with Lipschitz-derived right-hand sides, violations: {}", describe(&chain))),
    )
}

fn expectation_bound() -> Outcome {
    let obj = Objective { act: Activation::Elu1, loss: Loss::Logistic };
    let setup = twin_setup(FilterKind::SymNormalized, 100, 0.05, 8, 7);
    let deltas: Vec<f64> = (0..100u64)
        .map(|seed| {
            let cfg = SgdConfig { eta: 0.1, epochs: 5, seed, mode: SequenceMode::UniformWithReplacement };
            twin_train(&setup.train, &setup.pert, &obj, &cfg, &[0.0; 8], Some(setup.g_lambda)).unwrap().final_delta()
        })
        .collect();
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let se = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let m = setup.train.len();
    let bound = expected_divergence_bound(0.1, obj.loss_constants(), obj.act_constants(), setup.g_lambda, m, 5 * m);
    outcome(
        mean <= bound + 3.0 * se,
        format!("mean |dtheta_T| = {mean:.6} (se {se:.6}) vs bound {bound:.6e}, m = {m}"),
    )
}

fn bound_arithmetic() -> Outcome {
    let b = |steps| BoundInputs {
        eta: 0.1,
        loss: Constants { alpha: 1.0, nu: 0.25 },
        act: Constants { alpha: 1.0, nu: 1.0 },
        lambda: 2.0,
        lambda_source: LambdaSource::LambdaMax,
        steps,
        m: 100,
        loss_bound: 1.0,
        delta: 0.1,
    };
    let b1 = beta_bound(&b(1)).unwrap();
    let b2 = beta_bound(&b(2)).unwrap();
    let gap = gen_gap_bound(0.001, 100, 1.0, 0.1).unwrap();
    // 2 * 0.001 + (4 * 100 * 0.001 + 1) * sqrt(ln 10 / 200), evaluated by hand
    let gap_ref = 0.002 + 1.4 * (std::f64::consts::LN_10 / 200.0).sqrt();
    let pass = (b1 - 0.001).abs() <= 1e-12
        && (b2 - 0.0021).abs() <= 1e-12
        && (gap - gap_ref).abs() <= 1e-12
        && (gap - 0.1522177).abs() < 1e-7;
    outcome(pass, format!("beta(T=1) = {b1:.15}, beta(T=2) = {b2:.15}, gap bound = {gap:.12}"))
}

fn figure_ordering() -> Outcome {
    let start = Instant::now();
    let obj = Objective::default();
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let syn = generate_synthetic(&SyntheticSpec::new(GraphKind::ErdosRenyi { n: 300, p: 0.03 }, 16, seed)).unwrap();
        let cfg = SgdConfig { eta: 1.0, epochs: 100, seed, mode: SequenceMode::UniformWithReplacement };
        let mut finals = Vec::new();
        for kind in STUDIED {
            let f = FilterMatrix::build(&syn.dataset.graph, kind);
            let (train, test) = syn.dataset.split_samples(&f).unwrap();
            let g = g_lambda_empirical(&f, &syn.dataset.features).unwrap().value;
            let spectral = SpectralInputs { g_lambda: g, lambda_max: g, source: LambdaSource::GLambda };
            let report = empirical_gap(&train, &test, &obj, &cfg, &[0.0; 16], spectral, 0.1, None).unwrap();
            let gap = match report.diverged_at {
                Some(_) => f64::INFINITY,
                None => report.final_gap().unwrap(),
            };
            let pert = Perturbation { index: 0, replacement: test[0].clone() };
            let delta = twin_train(&train, &pert, &obj, &cfg, &[0.0; 16], Some(g)).map_or(f64::INFINITY, |t| t.final_delta());
            finals.push((gap, delta));
        }
        let [(gu, du), (gs, ds), (gr, dr)] = [finals[0], finals[1], finals[2]];
        if !(gu > gs && gu > gr && du > ds && du > dr) {
            failures.push(seed);
        }
        lines.push(format!("seed {seed}: gap {gu:.3}/{gs:.3}/{gr:.3} dtheta {du:.3}/{ds:.3}/{dr:.3}"));
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(300),
        format!("unnorm/symnorm/rw {}; failing seeds {failures:?}, {elapsed:.2?}", lines.join(", ")),
    )
}

fn stability_domination() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut count = 0;
    for act in [Activation::Elu1, Activation::Sigmoid, Activation::Tanh] {
        for kind in STUDIED {
            for (eta, epochs) in [(0.1, 5), (0.05, 3), (0.1, 1)] {
                let syn = generate_synthetic(&SyntheticSpec::new(GraphKind::ErdosRenyi { n: 60, p: 0.08 }, 4, 3)).unwrap();
                let f = FilterMatrix::build(&syn.dataset.graph, kind);
                let (train, test) = syn.dataset.split_samples(&f).unwrap();
                let g = g_lambda_empirical(&f, &syn.dataset.features).unwrap().value;
                let lm = lambda_max(&f, &PowerConfig::default()).unwrap().lambda_max;
                let eval: Vec<Sample> = train.iter().chain(&test).cloned().collect();
                let cfg = StabilityConfig {
                    sgd: SgdConfig { eta, epochs, seed: 1, mode: SequenceMode::UniformWithReplacement },
                    perturbations: 5,
                    seeds: 20,
                    delta: 0.1,
                };
                let obj = Objective { act, loss: Loss::Logistic };
                let spectral = SpectralInputs { g_lambda: g, lambda_max: lm, source: LambdaSource::GLambda };
                let r = empirical_stability(&train, &test, &eval, &obj, &cfg, &[0.0; 4], spectral).unwrap();
                count += 1;
                worst = worst.max(r.ratio);
                if !r.dominated(1e-9) {
                    failures.push(format!("{act:?}/{kind}/eta={eta}/epochs={epochs}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("{count} configurations, max beta_hat/(2 beta_m) = {worst:.4}, failing {failures:?}"),
    )
}

fn main() {
    let (lemmas, chain_rule) = lemma_suite();
    let results = [
        ("interlacing", interlacing()),
        ("spectral-facts", spectral_facts()),
        ("gradient-oracle", gradient_oracle()),
        ("ego-full-equivalence", ego_equivalence()),
        ("lemma-suite", lemmas),
        ("expectation-bound", expectation_bound()),
        ("bound-arithmetic", bound_arithmetic()),
        ("filter-ordering", figure_ordering()),
        ("empirical-stability", stability_domination()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "{} lemma-suite (Lipschitz-derived forms, supplementary): {}",
        if chain_rule.pass { "PASS" } else { "FAIL" },
        chain_rule.detail
    );
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
