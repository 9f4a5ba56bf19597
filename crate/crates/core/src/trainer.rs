//! Batch-size-one SGD and the coupled twin runs used to measure parameter
//! divergence between training on `S` and on `S^i`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ego::{dot, l2};
use crate::model::{grad_from_aggregate, Activation, Constants, Label, Loss};
use crate::{Error, Result, RunError};

/// One training example: the aggregated feature vector `Σ_j e_{·j} x_j` of a
/// node's ego-graph and the node's label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub node: usize,
    pub aggregate: Vec<f64>,
    pub label: Label,
}

impl Sample {
    pub fn pre_activation(&self, theta: &[f64]) -> f64 {
        dot(&self.aggregate, theta)
    }

    /// Prediction is positive when the pre-activation is; this matches a 0.5
    /// threshold for sigmoid outputs and a 0 threshold for ELU and tanh.
    pub fn misclassified(&self, theta: &[f64]) -> bool {
        (self.pre_activation(theta) > 0.0) != self.label.is_positive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub act: Activation,
    pub loss: Loss,
}

impl Default for Objective {
    fn default() -> Self {
        Objective { act: Activation::Elu1, loss: Loss::Logistic }
    }
}

impl Objective {
    pub fn loss(&self, s: &Sample, theta: &[f64]) -> f64 {
        self.loss.value(self.act.value(s.pre_activation(theta)), s.label)
    }

    pub fn grad(&self, s: &Sample, theta: &[f64], out: &mut [f64]) {
        grad_from_aggregate(&s.aggregate, theta, self.act, self.loss, s.label, out);
    }

    pub fn act_constants(&self) -> Constants {
        self.act.constants()
    }

    pub fn loss_constants(&self) -> Constants {
        self.loss.constants()
    }

    pub fn mean_loss(&self, set: &[Sample], theta: &[f64]) -> f64 {
        set.iter().map(|s| self.loss(s, theta)).sum::<f64>() / set.len() as f64
    }
}

pub fn error_rate(set: &[Sample], theta: &[f64]) -> f64 {
    set.iter().filter(|s| s.misclassified(theta)).count() as f64 / set.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    /// `i_t` drawn uniformly from `{0, …, m-1}` at every step.
    UniformWithReplacement,
    /// A fresh random permutation of the training set every epoch.
    PermutationPerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: SequenceMode,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { eta: 1.0, epochs: 100, seed: 0, mode: SequenceMode::UniformWithReplacement }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::param(format!("learning rate must be finite and non-negative, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        Ok(())
    }

    /// Total SGD steps `T = epochs · m`.
    pub fn steps(&self, m: usize) -> usize {
        self.epochs * m
    }
}

/// Deterministic sample-index sequence of length `steps` over `[0, m)`.
pub fn make_sequence(m: usize, steps: usize, seed: u64, mode: SequenceMode) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match mode {
        SequenceMode::UniformWithReplacement => (0..steps).map(|_| rng.gen_range(0..m)).collect(),
        SequenceMode::PermutationPerEpoch => {
            let mut out = Vec::with_capacity(steps);
            let mut perm: Vec<usize> = (0..m).collect();
            while out.len() < steps {
                perm.shuffle(&mut rng);
                let take = (steps - out.len()).min(m);
                out.extend_from_slice(&perm[..take]);
            }
            out
        }
    })
}

/// Initial weights: zero, or seeded uniform on `(-0.01, 0.01)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    Uniform { seed: u64 },
}

impl Init {
    pub fn weights(self, d_in: usize) -> Vec<f64> {
        match self {
            Init::Zero => vec![0.0; d_in],
            Init::Uniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..d_in).map(|_| rng.gen_range(-0.01..0.01)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub train_err01: f64,
    pub test_err01: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub theta: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
}

fn check_inputs(train: &[Sample], init: &[f64]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if let Some(s) = train.iter().find(|s| s.aggregate.len() != init.len()) {
        return Err(Error::DimensionMismatch { expected: init.len(), actual: s.aggregate.len() });
    }
    Ok(())
}

fn step_in_place(theta: &mut [f64], grad: &[f64], eta: f64) -> bool {
    let mut finite = true;
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= eta * g;
        finite &= t.is_finite();
    }
    finite
}

/// Runs `θ_{t+1} = θ_t − η ∇ℓ(f(x_{i_t}, θ_t), y_{i_t})` for `epochs · m` steps,
/// recording mean losses and 0-1 errors after every epoch. `test` may be empty.
pub fn sgd_train(
    train: &[Sample],
    test: &[Sample],
    obj: &Objective,
    cfg: &SgdConfig,
    init: &[f64],
) -> Result<TrainRun, RunError<TrainRun>> {
    cfg.validate()?;
    check_inputs(train, init)?;
    let m = train.len();
    let steps = cfg.steps(m);
    let seq = make_sequence(m, steps, cfg.seed, cfg.mode)?;

    let mut run = TrainRun { theta: init.to_vec(), epochs: Vec::with_capacity(cfg.epochs), steps: 0 };
    let mut grad = vec![0.0; init.len()];
    for (t, &i) in seq.iter().enumerate() {
        obj.grad(&train[i], &run.theta, &mut grad);
        run.steps = t + 1;
        if !step_in_place(&mut run.theta, &grad, cfg.eta) {
            return Err(RunError::Diverged { step: t + 1, partial: Box::new(run) });
        }
        if (t + 1) % m == 0 {
            let record = evaluate(obj, train, test, &run.theta, (t + 1) / m);
            let finite = record.train_loss.is_finite() && record.test_loss.is_none_or(f64::is_finite);
            run.epochs.push(record);
            if !finite {
                return Err(RunError::Diverged { step: t + 1, partial: Box::new(run) });
            }
        }
    }
    Ok(run)
}

fn evaluate(obj: &Objective, train: &[Sample], test: &[Sample], theta: &[f64], epoch: usize) -> EpochRecord {
    let (test_loss, test_err01) = if test.is_empty() {
        (None, None)
    } else {
        (Some(obj.mean_loss(test, theta)), Some(error_rate(test, theta)))
    };
    EpochRecord {
        epoch,
        train_loss: obj.mean_loss(train, theta),
        test_loss,
        train_err01: error_rate(train, theta),
        test_err01,
    }
}

/// Replace training sample `index` by `replacement` to obtain `S^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub index: usize,
    pub replacement: Sample,
}

/// Deterministic worst-case recursion
/// `b_{t+1} = (1 + η ν_ℓ ν_σ g²) b_t + [i_t = i] · 2 η ν_ℓ α_σ g`, `b_0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    growth: f64,
    jump: f64,
    value: f64,
}

impl Envelope {
    pub fn from_coefficients(growth: f64, jump: f64) -> Self {
        Envelope { growth, jump, value: 0.0 }
    }

    pub fn new(eta: f64, loss: Constants, act: Constants, g_lambda: f64) -> Self {
        Self::from_lemma(eta, &LemmaCoefficients::stated(loss, act, g_lambda))
    }

    pub fn from_lemma(eta: f64, c: &LemmaCoefficients) -> Self {
        Self::from_coefficients(eta * c.same, eta * c.differing)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn advance(&mut self, differing: bool) -> f64 {
        self.value = (1.0 + self.growth) * self.value + if differing { self.jump } else { 0.0 };
        self.value
    }
}

/// Right-hand sides of the per-step gradient-difference inequalities:
/// `same · ‖Δθ_t‖` on shared samples and `differing` on the replaced one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaCoefficients {
    pub same: f64,
    pub differing: f64,
}

impl LemmaCoefficients {
    /// `ν_ℓ ν_σ g²` and `2 ν_ℓ α_σ g`.
    pub fn stated(loss: Constants, act: Constants, g: f64) -> Self {
        LemmaCoefficients { same: loss.nu * act.nu * g * g, differing: 2.0 * loss.nu * act.alpha * g }
    }

    /// `(α_ℓ ν_σ + ν_ℓ α_σ²) g²` and `2 α_ℓ α_σ g`: the chain rule applied to
    /// `∇ℓ = ℓ'(σ(u)) σ'(u) a` with `ℓ` α_ℓ-Lipschitz and ν_ℓ-smooth in `f`.
    pub fn chain_rule(loss: Constants, act: Constants, g: f64) -> Self {
        LemmaCoefficients {
            same: (loss.alpha * act.nu + loss.nu * act.alpha * act.alpha) * g * g,
            differing: 2.0 * loss.alpha * act.alpha * g,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Same,
    Differing,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Same => "same",
            Branch::Differing => "differing",
        }
    }
}

/// One side of a per-step gradient-difference inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl LemmaCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwinStep {
    /// 1-based step number.
    pub step: usize,
    pub index: usize,
    pub branch: Branch,
    /// `‖θ_{S,t} − θ_{S^i,t}‖` after this step's update.
    pub delta_theta_l2: f64,
    /// Same-sample check `‖∇ℓ(θ_S) − ∇ℓ(θ_{S^i})‖ ≤ ν_ℓ ν_σ g² ‖Δθ‖`.
    pub same_sample: Option<LemmaCheck>,
    /// Differing-sample check `‖∇ℓ(x_i, θ_S) − ∇ℓ(x'_i, θ_{S^i})‖ ≤ 2 ν_ℓ α_σ g`.
    pub differing_sample: Option<LemmaCheck>,
    pub envelope: f64,
    /// The same checks with [`LemmaCoefficients::chain_rule`].
    pub chain_rule: ChainRuleStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleStep {
    pub same_sample: Option<LemmaCheck>,
    pub differing_sample: Option<LemmaCheck>,
    pub envelope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Violations {
    pub same_sample: usize,
    pub differing_sample: usize,
    pub envelope: usize,
}

impl Violations {
    pub fn total(&self) -> usize {
        self.same_sample + self.differing_sample + self.envelope
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinTrace {
    pub g_lambda: f64,
    pub eta: f64,
    pub act_constants: Constants,
    pub loss_constants: Constants,
    pub steps: Vec<TwinStep>,
    /// `‖Δθ‖` at the end of each epoch.
    pub epoch_delta: Vec<f64>,
    pub theta_s: Vec<f64>,
    pub theta_si: Vec<f64>,
}

impl TwinTrace {
    pub fn final_delta(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.delta_theta_l2)
    }

    pub fn same_sample_violations(&self, tol: f64) -> usize {
        self.steps.iter().filter_map(|s| s.same_sample).filter(|c| !c.holds(tol)).count()
    }

    pub fn differing_sample_violations(&self, tol: f64) -> usize {
        self.steps.iter().filter_map(|s| s.differing_sample).filter(|c| !c.holds(tol)).count()
    }

    pub fn envelope_violations(&self, tol: f64) -> usize {
        self.steps.iter().filter(|s| s.delta_theta_l2 > s.envelope + tol).count()
    }

    pub fn violations(&self, tol: f64) -> Violations {
        Violations {
            same_sample: self.same_sample_violations(tol),
            differing_sample: self.differing_sample_violations(tol),
            envelope: self.envelope_violations(tol),
        }
    }

    pub fn chain_rule_violations(&self, tol: f64) -> Violations {
        let bad = |c: Option<LemmaCheck>| c.is_some_and(|c| !c.holds(tol));
        Violations {
            same_sample: self.steps.iter().filter(|s| bad(s.chain_rule.same_sample)).count(),
            differing_sample: self.steps.iter().filter(|s| bad(s.chain_rule.differing_sample)).count(),
            envelope: self.steps.iter().filter(|s| s.delta_theta_l2 > s.chain_rule.envelope + tol).count(),
        }
    }
}

/// `max ‖a‖` over the training aggregates and the replacement.
pub fn g_lambda_of(train: &[Sample], pert: &Perturbation) -> f64 {
    train
        .iter()
        .chain(std::iter::once(&pert.replacement))
        .map(|s| l2(&s.aggregate))
        .fold(0.0, f64::max)
}

/// Trains on `S` and `S^i` in lockstep over one shared index sequence and
/// records the per-step gradient-difference checks and the divergence
/// envelope. `g_lambda` defaults to [`g_lambda_of`].
pub fn twin_train(
    train: &[Sample],
    pert: &Perturbation,
    obj: &Objective,
    cfg: &SgdConfig,
    init: &[f64],
    g_lambda: Option<f64>,
) -> Result<TwinTrace, RunError<TwinTrace>> {
    cfg.validate()?;
    check_inputs(train, init)?;
    let m = train.len();
    if pert.index >= m {
        return Err(Error::IndexOutOfRange { index: pert.index, size: m }.into());
    }
    if pert.replacement.aggregate.len() != init.len() {
        return Err(Error::DimensionMismatch {
            expected: init.len(),
            actual: pert.replacement.aggregate.len(),
        }
        .into());
    }
    let g = g_lambda.unwrap_or_else(|| g_lambda_of(train, pert));
    let act_c = obj.act_constants();
    let loss_c = obj.loss_constants();
    let stated = LemmaCoefficients::stated(loss_c, act_c, g);
    let chain = LemmaCoefficients::chain_rule(loss_c, act_c, g);
    let mut envelope = Envelope::from_lemma(cfg.eta, &stated);
    let mut chain_envelope = Envelope::from_lemma(cfg.eta, &chain);

    let steps = cfg.steps(m);
    let seq = make_sequence(m, steps, cfg.seed, cfg.mode)?;
    let mut trace = TwinTrace {
        g_lambda: g,
        eta: cfg.eta,
        act_constants: act_c,
        loss_constants: loss_c,
        steps: Vec::with_capacity(steps),
        epoch_delta: Vec::with_capacity(cfg.epochs),
        theta_s: init.to_vec(),
        theta_si: init.to_vec(),
    };
    let d = init.len();
    let (mut grad_s, mut grad_si) = (vec![0.0; d], vec![0.0; d]);
    let mut delta = 0.0;

    for (t, &i) in seq.iter().enumerate() {
        let sample = &train[i];
        let differing = i == pert.index;
        let other = if differing { &pert.replacement } else { sample };
        obj.grad(sample, &trace.theta_s, &mut grad_s);
        obj.grad(other, &trace.theta_si, &mut grad_si);
        let grad_gap = grad_s.iter().zip(&grad_si).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();

        let check = |c: &LemmaCoefficients| {
            if differing {
                (None, Some(LemmaCheck { lhs: grad_gap, rhs: c.differing }))
            } else {
                (Some(LemmaCheck { lhs: grad_gap, rhs: c.same * delta }), None)
            }
        };
        let branch = if differing { Branch::Differing } else { Branch::Same };
        let (same_sample, differing_sample) = check(&stated);
        let (chain_same, chain_differing) = check(&chain);

        let ok_s = step_in_place(&mut trace.theta_s, &grad_s, cfg.eta);
        let ok_si = step_in_place(&mut trace.theta_si, &grad_si, cfg.eta);
        delta = trace
            .theta_s
            .iter()
            .zip(&trace.theta_si)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        trace.steps.push(TwinStep {
            step: t + 1,
            index: i,
            branch,
            delta_theta_l2: delta,
            same_sample,
            differing_sample,
            envelope: envelope.advance(differing),
            chain_rule: ChainRuleStep {
                same_sample: chain_same,
                differing_sample: chain_differing,
                envelope: chain_envelope.advance(differing),
            },
        });
        if !(ok_s && ok_si) {
            return Err(RunError::Diverged { step: t + 1, partial: Box::new(trace) });
        }
        if (t + 1) % m == 0 {
            trace.epoch_delta.push(delta);
        }
    }
    Ok(trace)
}
