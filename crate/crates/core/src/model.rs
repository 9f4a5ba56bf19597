//! The single-layer model `f = σ(g(L) X θ)`, its activations and losses, and
//! the closed-form gradient of the per-node loss.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::ego::{dot, EgoGraph, FeatureMatrix};
use crate::graph::FilterMatrix;
use crate::{Error, Result};

/// Lipschitz constant of a function (`alpha`) and of its derivative (`nu`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub alpha: f64,
    pub nu: f64,
}

/// Smooth activations. ReLU is deliberately absent: its derivative is not
/// Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// ELU with α = 1.
    Elu1,
    Sigmoid,
    Tanh,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Elu1, Activation::Sigmoid, Activation::Tanh];

    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Elu1 => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu1 => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative; at the ELU kink the left limit `e^0 = 1` is used so
    /// that grid maximization sees the supremum.
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu1 => {
                if x > 0.0 {
                    0.0
                } else {
                    x.exp()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// Certified `(α_σ, ν_σ)`; see [`certify_on_grid`].
    pub fn constants(self) -> Constants {
        static CACHE: [OnceLock<Constants>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        let slot = match self {
            Activation::Elu1 => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
        };
        *CACHE[slot].get_or_init(|| {
            certify_on_grid(|x| self.derivative(x), |x| self.second_derivative(x))
        })
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Activation::Elu1 => "elu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.short_name() == s)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Binary label. Logistic loss encodes it as ±1, cross-entropy as 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// ±1 encoding.
    pub fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }

    fn indicator(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    /// `log(1 + e^{-y f})` with `y ∈ {−1, +1}`.
    #[default]
    Logistic,
    /// Binary cross-entropy on the output clamped to `[ε, 1 − ε]`, `y ∈ {0, 1}`.
    ClampedCrossEntropy { eps: f64 },
}

pub const DEFAULT_XENT_EPS: f64 = 1e-6;

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::Logistic => "logistic",
            Loss::ClampedCrossEntropy { .. } => "xent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logistic" => Some(Loss::Logistic),
            "xent" => Some(Loss::ClampedCrossEntropy { eps: DEFAULT_XENT_EPS }),
            _ => None,
        }
    }

    /// Whether the loss meets the global Lipschitz/smoothness assumptions the
    /// stability bounds rely on. Clamped cross-entropy only does so with
    /// constants that scale like `1/ε`.
    pub fn satisfies_assumptions(self) -> bool {
        matches!(self, Loss::Logistic)
    }

    /// Validates a raw label against this loss's encoding.
    pub fn label(self, raw: i64) -> Result<Label> {
        match (self, raw) {
            (Loss::Logistic, 1) | (Loss::ClampedCrossEntropy { .. }, 1) => Ok(Label::Positive),
            (Loss::Logistic, -1) | (Loss::ClampedCrossEntropy { .. }, 0) => Ok(Label::Negative),
            _ => Err(Error::InvalidLabel { label: raw, loss: self.name() }),
        }
    }

    pub fn value(self, f: f64, y: Label) -> f64 {
        match self {
            Loss::Logistic => softplus(-y.sign() * f),
            Loss::ClampedCrossEntropy { eps } => {
                let p = f.clamp(eps, 1.0 - eps);
                let t = y.indicator();
                -(t * p.ln() + (1.0 - t) * (-p).ln_1p())
            }
        }
    }

    /// `∂ℓ/∂f`
    pub fn derivative(self, f: f64, y: Label) -> f64 {
        match self {
            Loss::Logistic => {
                let s = y.sign();
                -s * sigmoid(-s * f)
            }
            Loss::ClampedCrossEntropy { eps } => {
                if f < eps || f > 1.0 - eps {
                    return 0.0;
                }
                let t = y.indicator();
                -t / f + (1.0 - t) / (1.0 - f)
            }
        }
    }

    pub fn second_derivative(self, f: f64, y: Label) -> f64 {
        match self {
            Loss::Logistic => sigmoid(f) * sigmoid(-f),
            Loss::ClampedCrossEntropy { eps } => {
                if f < eps || f > 1.0 - eps {
                    return 0.0;
                }
                let t = y.indicator();
                t / (f * f) + (1.0 - t) / ((1.0 - f) * (1.0 - f))
            }
        }
    }

    /// Certified `(α_ℓ, ν_ℓ)` in the model output `f`.
    pub fn constants(self) -> Constants {
        match self {
            Loss::Logistic => {
                static CACHE: OnceLock<Constants> = OnceLock::new();
                *CACHE.get_or_init(|| {
                    certify_on_grid(
                        |f| self.derivative(f, Label::Positive),
                        |f| self.second_derivative(f, Label::Positive),
                    )
                })
            }
            // |ℓ'| = 1/p and ℓ'' = 1/p² on the clamped domain, worst at p = ε
            Loss::ClampedCrossEntropy { eps } => Constants { alpha: 1.0 / eps, nu: 1.0 / (eps * eps) },
        }
    }

    /// Upper bound on the loss once `|pre-activation| ≤ g_λ ‖θ‖`.
    /// Logistic uses `log(1 + e^{g_λ ‖θ‖})`; cross-entropy uses its clamp cap.
    pub fn default_bound(self, g_lambda: f64, theta_norm: f64) -> f64 {
        match self {
            Loss::Logistic => softplus(g_lambda * theta_norm),
            Loss::ClampedCrossEntropy { eps } => -eps.ln(),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const GRID_MIN: f64 = -50.0;
pub const GRID_MAX: f64 = 50.0;
pub const GRID_STEP: f64 = 1e-4;

fn ceil_6(v: f64) -> f64 {
    (v * 1e6).ceil() / 1e6
}

/// Maximizes `|d1|` and `|d2|` over `[-50, 50]` at step `1e-4` and rounds both
/// up at the sixth decimal.
pub fn certify_on_grid(d1: impl Fn(f64) -> f64, d2: impl Fn(f64) -> f64) -> Constants {
    let half = ((GRID_MAX - GRID_MIN) / GRID_STEP / 2.0).round() as i64;
    let (mut alpha, mut nu) = (0.0f64, 0.0f64);
    for k in -half..=half {
        // k / 10^4 keeps x = 0 exactly on the grid
        let x = k as f64 / (1.0 / GRID_STEP);
        alpha = alpha.max(d1(x).abs());
        nu = nu.max(d2(x).abs());
    }
    Constants { alpha: ceil_6(alpha), nu: ceil_6(nu) }
}

/// Activation, loss and current weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub theta: Vec<f64>,
    pub act: Activation,
    pub loss: Loss,
}

impl ModelState {
    pub fn new(theta: Vec<f64>, act: Activation, loss: Loss) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(ModelState { theta, act, loss })
    }

    pub fn output(&self, aggregate: &[f64]) -> f64 {
        self.act.value(dot(aggregate, &self.theta))
    }

    pub fn loss_at(&self, aggregate: &[f64], y: Label) -> f64 {
        loss_at(aggregate, &self.theta, self.act, self.loss, y)
    }
}

/// `ℓ(σ(a·θ), y)` for an aggregated feature vector `a`.
pub fn loss_at(aggregate: &[f64], theta: &[f64], act: Activation, loss: Loss, y: Label) -> f64 {
    loss.value(act.value(dot(aggregate, theta)), y)
}

/// `∇_θ ℓ = ℓ'(f, y) σ'(u) a` with `u = a·θ`, written into `out`.
pub fn grad_from_aggregate(
    aggregate: &[f64],
    theta: &[f64],
    act: Activation,
    loss: Loss,
    y: Label,
    out: &mut [f64],
) {
    let u = dot(aggregate, theta);
    let scale = loss.derivative(act.value(u), y) * act.derivative(u);
    for (o, &a) in out.iter_mut().zip(aggregate) {
        *o = scale * a;
    }
}

/// Closed-form gradient of the loss at one ego-graph.
pub fn node_loss_grad(e: &EgoGraph, theta: &[f64], act: Activation, loss: Loss, y: i64) -> Result<Vec<f64>> {
    if theta.len() != e.d_in() {
        return Err(Error::DimensionMismatch { expected: e.d_in(), actual: theta.len() });
    }
    let label = loss.label(y)?;
    let mut out = vec![0.0; theta.len()];
    grad_from_aggregate(&e.aggregate(), theta, act, loss, label, &mut out);
    Ok(out)
}

/// `σ(g(L) (X θ))` via one sparse matrix-vector product.
pub fn forward_full(f: &FilterMatrix, x: &FeatureMatrix, theta: &[f64], act: Activation) -> Result<Vec<f64>> {
    if x.n() != f.n() {
        return Err(Error::DimensionMismatch { expected: f.n(), actual: x.n() });
    }
    if theta.len() != x.d_in() {
        return Err(Error::DimensionMismatch { expected: x.d_in(), actual: theta.len() });
    }
    let projected: Vec<f64> = x.rows().map(|r| dot(r, theta)).collect();
    let mut pre = vec![0.0; f.n()];
    f.matvec(&projected, &mut pre);
    Ok(pre.into_iter().map(|u| act.value(u)).collect())
}
