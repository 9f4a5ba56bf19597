//! Closed-form stability and generalization bounds, and their empirical
//! counterparts.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::Constants;
use crate::trainer::{sgd_train, Objective, Sample, SgdConfig, TrainRun};
use crate::{Error, Result, RunError};

/// Which spectral quantity stands in for `λ` in the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSource {
    /// Largest aggregated-feature norm, the tighter choice.
    GLambda,
    LambdaMax,
}

impl LambdaSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaSource::GLambda => "g-lambda",
            LambdaSource::LambdaMax => "lambda-max",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "g-lambda" | "g_lambda" => Some(LambdaSource::GLambda),
            "lambda-max" | "lambda_max" => Some(LambdaSource::LambdaMax),
            _ => None,
        }
    }
}

impl fmt::Display for LambdaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub eta: f64,
    pub loss: Constants,
    pub act: Constants,
    pub lambda: f64,
    pub lambda_source: LambdaSource,
    /// `T`, the number of SGD steps.
    pub steps: usize,
    pub m: usize,
    /// `M`, an upper bound on the loss.
    pub loss_bound: f64,
    pub delta: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("eta", self.eta),
            ("alpha_ell", self.loss.alpha),
            ("nu_ell", self.loss.nu),
            ("alpha_sigma", self.act.alpha),
            ("nu_sigma", self.act.nu),
            ("lambda", self.lambda),
            ("M", self.loss_bound),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.m == 0 {
            return Err(Error::param("m must be at least 1"));
        }
        check_delta(self.delta)
    }

    /// `η ν_ℓ ν_σ λ²`, the per-step growth of the divergence envelope.
    pub fn growth(&self) -> f64 {
        self.eta * self.loss.nu * self.act.nu * self.lambda * self.lambda
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `Σ_{t=1}^{T} (1 + c)^{t−1}`; `+∞` once the sum overflows.
pub fn geometric_sum(c: f64, steps: usize) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    if c == 0.0 {
        return steps as f64;
    }
    // (r^T − 1)/(r − 1) without cancellation for small c
    (steps as f64 * c.ln_1p()).exp_m1() / c
}

/// `β_m = η α_ℓ α_σ ν_ℓ λ² Σ_{t=1}^{T} (1 + η ν_ℓ ν_σ λ²)^{t−1} / m`.
/// Returns `+∞` when the bound is vacuous through overflow.
pub fn beta_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    let scale = b.eta * b.loss.alpha * b.act.alpha * b.loss.nu * b.lambda * b.lambda;
    if scale == 0.0 || b.steps == 0 {
        return Ok(0.0);
    }
    Ok(scale * geometric_sum(b.growth(), b.steps) / b.m as f64)
}

/// `2β + (4mβ + M) √(ln(1/δ) / (2m))`.
pub fn gen_gap_bound(beta: f64, m: usize, loss_bound: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if m == 0 {
        return Err(Error::param("m must be at least 1"));
    }
    if beta.is_nan() || beta < 0.0 || loss_bound.is_nan() || loss_bound < 0.0 {
        return Err(Error::param(format!("beta and M must be non-negative, got {beta} and {loss_bound}")));
    }
    let m = m as f64;
    Ok(2.0 * beta + (4.0 * m * beta + loss_bound) * ((1.0 / delta).ln() / (2.0 * m)).sqrt())
}

/// Bound on `E|Δθ_T|` for one replaced sample under uniform sampling:
/// `(2 η ν_ℓ α_σ g / m) Σ_{t=1}^{T} (1 + η ν_ℓ ν_σ g²)^{t−1}`.
pub fn expected_divergence_bound(eta: f64, loss: Constants, act: Constants, g: f64, m: usize, steps: usize) -> f64 {
    let c = eta * loss.nu * act.nu * g * g;
    2.0 * eta * loss.nu * act.alpha * g / m as f64 * geometric_sum(c, steps)
}

/// Spectral inputs shared by every bound a report attaches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralInputs {
    pub g_lambda: f64,
    pub lambda_max: f64,
    pub source: LambdaSource,
}

impl SpectralInputs {
    pub fn lambda(&self) -> f64 {
        match self.source {
            LambdaSource::GLambda => self.g_lambda,
            LambdaSource::LambdaMax => self.lambda_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
    pub train_err01: f64,
    pub test_err01: f64,
}

/// Per-epoch `|train loss − test loss|` of a finished (or aborted) run.
/// Epochs without a test evaluation are skipped.
pub fn gap_rows(run: &TrainRun) -> Vec<GapRow> {
    run.epochs
        .iter()
        .filter_map(|e| {
            Some(GapRow {
                epoch: e.epoch,
                train_loss: e.train_loss,
                test_loss: e.test_loss?,
                gap: (e.train_loss - e.test_loss?).abs(),
                train_err01: e.train_err01,
                test_err01: e.test_err01?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub bound_inputs: BoundInputs,
    pub spectral: SpectralInputs,
    pub beta_m: f64,
    pub gap_bound: f64,
    /// Final empirical gap over the theoretical bound.
    pub ratio: f64,
    /// Step at which training stopped on a non-finite value.
    pub diverged_at: Option<usize>,
    pub final_theta: Vec<f64>,
}

impl GapReport {
    pub fn final_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.gap)
    }
}

fn check_disjoint(train: &[Sample], test: &[Sample]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let nodes: HashSet<usize> = train.iter().map(|s| s.node).collect();
    if let Some(s) = test.iter().find(|s| nodes.contains(&s.node)) {
        return Err(Error::param(format!("node {} is in both the training and test splits", s.node)));
    }
    Ok(())
}

/// Trains on `train`, measures the per-epoch loss gap against `test`, and
/// attaches `β_m` and the gap bound for the realized `T`, `m` and `M`.
///
/// `M` defaults to `max(ℓ-bound at ‖θ_T‖, largest observed loss)`. A run that
/// diverges is still reported, with `diverged_at` set and infinite bounds.
#[allow(clippy::too_many_arguments)]
pub fn empirical_gap(
    train: &[Sample],
    test: &[Sample],
    obj: &Objective,
    cfg: &SgdConfig,
    init: &[f64],
    spectral: SpectralInputs,
    delta: f64,
    loss_bound: Option<f64>,
) -> Result<GapReport> {
    check_disjoint(train, test)?;
    check_delta(delta)?;
    let (run, diverged_at) = match sgd_train(train, test, obj, cfg, init) {
        Ok(run) => (run, None),
        Err(RunError::Diverged { step, partial }) => (*partial, Some(step)),
        Err(RunError::Invalid(e)) => return Err(e),
    };
    let rows = gap_rows(&run);
    let m = train.len();

    let observed = if diverged_at.is_some() {
        f64::INFINITY
    } else {
        train.iter().chain(test).map(|s| obj.loss(s, &run.theta)).fold(0.0, f64::max)
    };
    let theta_norm = run.theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let m_bound = loss_bound.unwrap_or_else(|| obj.loss.default_bound(spectral.g_lambda, theta_norm).max(observed));

    let bound_inputs = BoundInputs {
        eta: cfg.eta,
        loss: obj.loss_constants(),
        act: obj.act_constants(),
        lambda: spectral.lambda(),
        lambda_source: spectral.source,
        steps: cfg.steps(m),
        m,
        loss_bound: if m_bound.is_finite() { m_bound } else { 0.0 },
        delta,
    };
    let (beta_m, gap_bound) = if m_bound.is_finite() {
        let beta = beta_bound(&bound_inputs)?;
        (beta, gen_gap_bound(beta, m, m_bound, delta)?)
    } else {
        (beta_bound(&bound_inputs)?, f64::INFINITY)
    };
    let bound_inputs = BoundInputs { loss_bound: m_bound, ..bound_inputs };
    let ratio = rows.last().map_or(f64::NAN, |r| r.gap / gap_bound);
    Ok(GapReport { rows, bound_inputs, spectral, beta_m, gap_bound, ratio, diverged_at, final_theta: run.theta })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationResult {
    /// Training position that was replaced.
    pub index: usize,
    /// Node of the replacement sample.
    pub replacement_node: usize,
    /// Largest `|mean_R ℓ(A_S, z) − mean_R ℓ(A_{S^i}, z)|` over `z`.
    pub beta_hat: f64,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub beta_hat: f64,
    pub beta_m: f64,
    pub two_beta_m: f64,
    /// `β̂ / (2 β_m)`.
    pub ratio: f64,
    pub perturbations: Vec<PerturbationResult>,
    pub seeds: usize,
    pub eval_points: usize,
    pub bound_inputs: BoundInputs,
}

impl StabilityReport {
    pub fn dominated(&self, tol: f64) -> bool {
        self.beta_hat <= self.two_beta_m + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConfig {
    /// Learning rate, epoch count and sequence mode; the seed is the base for
    /// the per-run seeds.
    pub sgd: SgdConfig,
    /// `P`, how many training positions get replaced.
    pub perturbations: usize,
    /// `R`, how many SGD seeds each expectation averages over.
    pub seeds: usize,
    pub delta: f64,
}

/// Picks `P` distinct training positions and, for each, a replacement from
/// `pool`, all from `seed`.
pub fn draw_perturbations(m: usize, pool: &[Sample], count: usize, seed: u64) -> Result<Vec<(usize, Sample)>> {
    if pool.is_empty() {
        return Err(Error::Empty("held-out replacement pool"));
    }
    if count == 0 || count > m {
        return Err(Error::param(format!("perturbation count must lie in [1, {m}], got {count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample_indices(&mut rng, m, count).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| (i, pool[rng.gen_range(0..pool.len())].clone())).collect())
}

/// Estimates uniform stability with replacements drawn from `pool`.
/// Losses are evaluated at every sample in `eval`.
pub fn empirical_stability(
    train: &[Sample],
    pool: &[Sample],
    eval: &[Sample],
    obj: &Objective,
    cfg: &StabilityConfig,
    init: &[f64],
    spectral: SpectralInputs,
) -> Result<StabilityReport> {
    let perts = draw_perturbations(train.len(), pool, cfg.perturbations, cfg.sgd.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    empirical_stability_with(train, &perts, eval, obj, cfg, init, spectral)
}

/// As [`empirical_stability`] with explicit `(index, replacement)` pairs.
pub fn empirical_stability_with(
    train: &[Sample],
    perts: &[(usize, Sample)],
    eval: &[Sample],
    obj: &Objective,
    cfg: &StabilityConfig,
    init: &[f64],
    spectral: SpectralInputs,
) -> Result<StabilityReport> {
    cfg.sgd.validate()?;
    check_delta(cfg.delta)?;
    if cfg.seeds == 0 {
        return Err(Error::param("seed count must be at least 1"));
    }
    if perts.is_empty() {
        return Err(Error::Empty("perturbation list"));
    }
    if eval.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let m = train.len();
    if let Some((i, _)) = perts.iter().find(|(i, _)| *i >= m) {
        return Err(Error::IndexOutOfRange { index: *i, size: m });
    }

    let run_seed = |r: usize| cfg.sgd.seed.wrapping_add(r as u64);
    // Per-seed loss vectors at every evaluation point; `None` on divergence.
    let losses = |set: &[Sample], r: usize| -> Result<Option<Vec<f64>>> {
        let sgd = SgdConfig { seed: run_seed(r), ..cfg.sgd };
        match sgd_train(set, &[], obj, &sgd, init) {
            Ok(run) => Ok(Some(eval.iter().map(|z| obj.loss(z, &run.theta)).collect())),
            Err(RunError::Diverged { .. }) => Ok(None),
            Err(RunError::Invalid(e)) => Err(e),
        }
    };
    let mean_over_seeds = |runs: &[Option<Vec<f64>>]| -> (Vec<f64>, usize) {
        let mut sum = vec![0.0; eval.len()];
        let mut diverged = 0;
        for run in runs {
            match run {
                Some(l) => sum.iter_mut().zip(l).for_each(|(s, v)| *s += v),
                None => diverged += 1,
            }
        }
        if diverged > 0 {
            sum.iter_mut().for_each(|s| *s = f64::INFINITY);
        }
        (sum.into_iter().map(|s| s / runs.len() as f64).collect(), diverged)
    };

    let base: Vec<Option<Vec<f64>>> = (0..cfg.seeds).into_par_iter().map(|r| losses(train, r)).collect::<Result<_>>()?;
    let (base_mean, base_diverged) = mean_over_seeds(&base);

    let jobs: Vec<(usize, usize)> = (0..perts.len()).flat_map(|p| (0..cfg.seeds).map(move |r| (p, r))).collect();
    let runs: Vec<Option<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let (i, ref z) = perts[p];
            let mut set = train.to_vec();
            set[i] = z.clone();
            losses(&set, r)
        })
        .collect::<Result<_>>()?;

    let perturbations: Vec<PerturbationResult> = perts
        .iter()
        .zip(runs.chunks(cfg.seeds))
        .map(|((index, z), runs)| {
            let (mean, diverged) = mean_over_seeds(runs);
            let beta_hat = if diverged + base_diverged > 0 {
                f64::INFINITY
            } else {
                base_mean.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            };
            PerturbationResult { index: *index, replacement_node: z.node, beta_hat, diverged_runs: diverged }
        })
        .collect();
    let beta_hat = perturbations.iter().map(|p| p.beta_hat).fold(0.0, f64::max);

    let bound_inputs = BoundInputs {
        eta: cfg.sgd.eta,
        loss: obj.loss_constants(),
        act: obj.act_constants(),
        lambda: spectral.lambda(),
        lambda_source: spectral.source,
        steps: cfg.sgd.steps(m),
        m,
        loss_bound: 0.0,
        delta: cfg.delta,
    };
    let beta_m = beta_bound(&bound_inputs)?;
    Ok(StabilityReport {
        beta_hat,
        beta_m,
        two_beta_m: 2.0 * beta_m,
        ratio: beta_hat / (2.0 * beta_m),
        perturbations,
        seeds: cfg.seeds,
        eval_points: eval.len(),
        bound_inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Label, Loss};
    use crate::trainer::SequenceMode;

    fn inputs(steps: usize) -> BoundInputs {
        BoundInputs {
            eta: 0.1,
            loss: Constants { alpha: 1.0, nu: 0.25 },
            act: Constants { alpha: 1.0, nu: 1.0 },
            lambda: 2.0,
            lambda_source: LambdaSource::LambdaMax,
            steps,
            m: 100,
            loss_bound: 1.0,
            delta: 0.1,
        }
    }

    #[test]
    fn worked_bound_values() {
        assert!((beta_bound(&inputs(1)).unwrap() - 0.001).abs() < 1e-12);
        assert!((beta_bound(&inputs(2)).unwrap() - 0.0021).abs() < 1e-12);
        assert_eq!(beta_bound(&inputs(0)).unwrap(), 0.0);
        let expected = 0.002 + 1.4 * (10f64.ln() / 200.0).sqrt();
        assert!((gen_gap_bound(0.001, 100, 1.0, 0.1).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.1522177).abs() < 1e-7);
        assert_eq!(gen_gap_bound(0.0, 100, 0.0, 0.1).unwrap(), 0.0);
        let near_one = gen_gap_bound(0.003, 100, 1.0, 1.0 - 1e-12).unwrap();
        assert!((near_one - 0.006).abs() < 1e-5);
    }

    #[test]
    fn geometric_sum_matches_direct_summation() {
        for &(c, t) in &[(0.1, 1usize), (0.1, 7), (1e-12, 50), (2.0, 10), (0.0, 4)] {
            let direct: f64 = (0..t).map(|k| (1.0f64 + c).powi(k as i32)).sum();
            assert!((geometric_sum(c, t) - direct).abs() <= 1e-10 * direct, "{c} {t}");
        }
        assert_eq!(geometric_sum(10.0, 10_000), f64::INFINITY);
    }

    #[test]
    fn overflow_is_vacuous_not_an_error() {
        let b = BoundInputs { lambda: 100.0, steps: 100_000, ..inputs(1) };
        assert_eq!(beta_bound(&b).unwrap(), f64::INFINITY);
    }

    #[test]
    fn invalid_inputs() {
        assert!(beta_bound(&BoundInputs { delta: 1.0, ..inputs(1) }).is_err());
        assert!(beta_bound(&BoundInputs { m: 0, ..inputs(1) }).is_err());
        assert!(beta_bound(&BoundInputs { eta: -0.1, ..inputs(1) }).is_err());
        assert!(gen_gap_bound(0.1, 10, 1.0, 0.0).is_err());
        assert!(gen_gap_bound(-0.1, 10, 1.0, 0.5).is_err());
    }

    #[test]
    fn monotone_in_parameters() {
        let base = inputs(20);
        let b0 = beta_bound(&base).unwrap();
        for scaled in [
            BoundInputs { eta: 0.2, ..base },
            BoundInputs { lambda: 3.0, ..base },
            BoundInputs { steps: 21, ..base },
        ] {
            assert!(beta_bound(&scaled).unwrap() >= b0);
        }
        assert!(beta_bound(&BoundInputs { m: 200, ..base }).unwrap() < b0);
    }

    fn sample(node: usize, a: Vec<f64>, positive: bool) -> Sample {
        Sample { node, aggregate: a, label: Label::from_positive(positive) }
    }

    fn task() -> (Vec<Sample>, Vec<Sample>) {
        let train = vec![
            sample(0, vec![0.9, 0.1], true),
            sample(1, vec![-0.7, 0.3], false),
            sample(2, vec![0.2, -0.8], true),
            sample(3, vec![-0.5, -0.4], false),
        ];
        let test = vec![sample(4, vec![0.6, 0.6], true), sample(5, vec![-0.3, 0.9], false)];
        (train, test)
    }

    fn spectral() -> SpectralInputs {
        SpectralInputs { g_lambda: 1.0, lambda_max: 2.0, source: LambdaSource::GLambda }
    }

    fn cfg(eta: f64) -> SgdConfig {
        SgdConfig { eta, epochs: 5, seed: 1, mode: SequenceMode::UniformWithReplacement }
    }

    #[test]
    fn identical_sets_have_zero_gap() {
        let (train, _) = task();
        let obj = Objective::default();
        let run = sgd_train(&train, &train, &obj, &cfg(0.5), &[0.0, 0.0]).unwrap();
        assert!(gap_rows(&run).iter().all(|r| r.gap == 0.0));
        assert!(empirical_gap(&train, &train, &obj, &cfg(0.5), &[0.0; 2], spectral(), 0.1, None).is_err());
        assert!(empirical_gap(&train, &[], &obj, &cfg(0.5), &[0.0; 2], spectral(), 0.1, None).is_err());
    }

    #[test]
    fn frozen_weights_give_a_constant_gap() {
        let (train, test) = task();
        let obj = Objective::default();
        let r = empirical_gap(&train, &test, &obj, &cfg(0.0), &[0.3, 0.1], spectral(), 0.1, None).unwrap();
        assert!(r.rows.windows(2).all(|w| w[0].gap == w[1].gap));
        assert_eq!(r.final_theta, vec![0.3, 0.1]);
        assert_eq!(r.beta_m, 0.0);
    }

    #[test]
    fn frozen_weights_are_perfectly_stable() {
        let (train, test) = task();
        let obj = Objective::default();
        let c = StabilityConfig { sgd: cfg(0.0), perturbations: 3, seeds: 2, delta: 0.1 };
        let r = empirical_stability(&train, &test, &test, &obj, &c, &[0.2, -0.1], spectral()).unwrap();
        assert_eq!(r.beta_hat, 0.0);
    }

    #[test]
    fn gap_report_attaches_bounds() {
        let (train, test) = task();
        let obj = Objective::default();
        let r = empirical_gap(&train, &test, &obj, &cfg(0.1), &[0.0; 2], spectral(), 0.1, None).unwrap();
        assert_eq!(r.rows.len(), 5);
        assert_eq!(r.bound_inputs.steps, 20);
        assert!(r.rows.iter().all(|row| row.gap >= 0.0));
        assert!(r.gap_bound >= 0.0 && r.gap_bound.is_finite());
        let expected_beta = beta_bound(&r.bound_inputs).unwrap();
        assert_eq!(r.beta_m, expected_beta);
        assert!(r.bound_inputs.loss_bound >= (2f64).ln());
        assert!(r.final_gap().unwrap() <= r.gap_bound);
    }

    #[test]
    fn self_replacement_is_perfectly_stable() {
        let (train, test) = task();
        let obj = Objective { act: Activation::Tanh, loss: Loss::Logistic };
        let c = StabilityConfig { sgd: cfg(0.1), perturbations: 1, seeds: 3, delta: 0.1 };
        let perts = vec![(1, train[1].clone())];
        let r = empirical_stability_with(&train, &perts, &test, &obj, &c, &[0.0; 2], spectral()).unwrap();
        assert_eq!(r.beta_hat, 0.0);
    }

    #[test]
    fn stability_estimate_is_dominated_on_a_toy_task() {
        let (train, test) = task();
        let obj = Objective::default();
        let c = StabilityConfig { sgd: cfg(0.1), perturbations: 2, seeds: 8, delta: 0.1 };
        let eval: Vec<Sample> = train.iter().chain(&test).cloned().collect();
        let a = empirical_stability(&train, &test, &eval, &obj, &c, &[0.0; 2], spectral()).unwrap();
        let b = empirical_stability(&train, &test, &eval, &obj, &c, &[0.0; 2], spectral()).unwrap();
        assert_eq!(a, b);
        assert!(a.beta_hat > 0.0);
        assert!(a.dominated(1e-9), "{} vs {}", a.beta_hat, a.two_beta_m);
        assert!(empirical_stability(&train, &[], &eval, &obj, &c, &[0.0; 2], spectral()).is_err());
    }
}
