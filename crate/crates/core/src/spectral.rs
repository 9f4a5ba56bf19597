//! Operator norm of graph filters.
//!
//! For symmetric filters the operator norm is the largest absolute eigenvalue
//! and is found by power iteration on `g(L)` itself. Asymmetric filters
//! (random walk on irregular graphs) use power iteration on `g(L)ᵀ g(L)`
//! and report the spectral radius alongside.
//!
//! A cyclic Jacobi eigensolver serves as the dense oracle for small matrices
//! and for ego-graph blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{DenseMatrix, FilterMatrix, DENSE_GUARD};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig { tol: 1e-10, max_iters: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralMethod {
    PowerIteration,
    DenseOracle,
}

impl SpectralMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SpectralMethod::PowerIteration => "power",
            SpectralMethod::DenseOracle => "dense",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    /// Operator norm (largest singular value; equal to the largest absolute
    /// eigenvalue for symmetric input).
    pub lambda_max: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub method: SpectralMethod,
    /// Largest absolute eigenvalue, reported separately only for asymmetric input.
    pub spectral_radius: Option<f64>,
}

struct PowerOutcome {
    rho: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // positive entries: never orthogonal to a Perron vector
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Rayleigh-quotient power iteration for a linear operator on `R^n`.
fn power_iterate<F>(n: usize, apply: F, cfg: &PowerConfig) -> PowerOutcome
where
    F: Fn(&[f64], &mut [f64]),
{
    if n == 0 {
        return PowerOutcome { rho: 0.0, iterations: 0, residual: 0.0, converged: true };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut v = random_unit(n, &mut rng);
    let mut w = vec![0.0; n];
    let mut prev_rho = f64::NAN;
    let mut restarted = false;
    let mut rho = 0.0;
    let mut residual = f64::INFINITY;

    for iter in 1..=cfg.max_iters {
        apply(&v, &mut w);
        rho = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        residual = v
            .iter()
            .zip(&w)
            .map(|(vi, wi)| (wi - rho * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= cfg.tol {
            return PowerOutcome { rho, iterations: iter, residual, converged: true };
        }

        let wn = norm(&w);
        let stagnant = (rho - prev_rho).abs() < cfg.tol * 1e-3
            && residual > 1e-3 * rho.abs().max(1.0);
        if wn == 0.0 || (stagnant && !restarted) {
            if restarted && wn == 0.0 {
                // the operator annihilates two independent random vectors
                return PowerOutcome { rho: 0.0, iterations: iter, residual: 0.0, converged: true };
            }
            restarted = true;
            v = random_unit(n, &mut rng);
            prev_rho = f64::NAN;
            continue;
        }
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / wn);
        prev_rho = rho;
    }
    PowerOutcome { rho, iterations: cfg.max_iters, residual, converged: false }
}

/// Operator norm of `f` by power iteration. Non-convergence is reported
/// through `converged = false` rather than as an error.
pub fn lambda_max(f: &FilterMatrix, cfg: &PowerConfig) -> Result<SpectralResult> {
    if cfg.tol.is_nan() || cfg.tol <= 0.0 || cfg.max_iters == 0 {
        return Err(Error::param("power iteration needs tol > 0 and max_iters >= 1"));
    }
    let n = f.n();
    if f.is_symmetric() {
        let out = power_iterate(n, |x, y| f.matvec(x, y), cfg);
        return Ok(SpectralResult {
            lambda_max: out.rho.abs(),
            iterations: out.iterations,
            residual: out.residual,
            converged: out.converged,
            method: SpectralMethod::PowerIteration,
            spectral_radius: None,
        });
    }

    let normal = power_iterate(
        n,
        |x, y| {
            let mut tmp = vec![0.0; x.len()];
            f.matvec(x, &mut tmp);
            f.matvec_transpose(&tmp, y);
        },
        cfg,
    );
    let radius = power_iterate(n, |x, y| f.matvec(x, y), cfg);
    Ok(SpectralResult {
        lambda_max: normal.rho.max(0.0).sqrt(),
        iterations: normal.iterations,
        residual: normal.residual,
        converged: normal.converged && radius.converged,
        method: SpectralMethod::PowerIteration,
        spectral_radius: Some(radius.rho.abs()),
    })
}

/// Operator norm of a dense matrix from its full spectrum.
pub fn lambda_max_dense(m: &DenseMatrix) -> Result<SpectralResult> {
    let spectrum = dense_spectrum(m)?;
    let top = spectrum.first().map_or(0.0, |v| v.abs());
    let spectral_radius = if m.is_symmetric() {
        None
    } else {
        Some(dense_spectral_radius_nonneg(m))
    };
    Ok(SpectralResult {
        lambda_max: top,
        iterations: 0,
        residual: 0.0,
        converged: true,
        method: SpectralMethod::DenseOracle,
        spectral_radius,
    })
}

// Perron root of an entrywise nonnegative matrix via many dense power steps;
// only used for reporting, never as an oracle.
fn dense_spectral_radius_nonneg(m: &DenseMatrix) -> f64 {
    let n = m.rows();
    let cfg = PowerConfig { max_iters: 20_000, ..PowerConfig::default() };
    power_iterate(
        n,
        |x, y| {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = m.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
            }
        },
        &cfg,
    )
    .rho
    .abs()
}

/// Full spectrum sorted by descending absolute value: eigenvalues for
/// symmetric input, singular values otherwise.
pub fn dense_spectrum(m: &DenseMatrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { expected: m.rows(), actual: m.cols() });
    }
    if m.rows() > DENSE_GUARD {
        return Err(Error::SizeGuard { size: m.rows(), limit: DENSE_GUARD });
    }
    if !m.all_finite() {
        return Err(Error::NonFinite("dense matrix"));
    }
    let mut values = if m.is_symmetric() {
        jacobi_eigenvalues(m)
    } else {
        let gram = m.transpose().matmul(m)?;
        jacobi_eigenvalues(&gram)
            .into_iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    };
    values.sort_by(|a, b| b.abs().total_cmp(&a.abs()).then(b.total_cmp(a)));
    Ok(values)
}

/// Cyclic Jacobi diagonalization of a symmetric matrix. Terminates once the
/// off-diagonal Frobenius norm is at most `1e-12 · ‖M‖_F`.
pub fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.clone();
    let target = 1e-12 * m.frobenius();

    for _sweep in 0..100 {
        let off = off_diagonal_norm(&a);
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).collect()
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j).powi(2);
            }
        }
    }
    s.sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeInterlacing {
    pub node: usize,
    pub ego_size: usize,
    pub lambda_ego: f64,
    pub ratio: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterlacingReport {
    pub lambda_global: f64,
    pub tol: f64,
    pub nodes: Vec<NodeInterlacing>,
    pub max_ratio: f64,
    pub violations: Vec<usize>,
}

impl InterlacingReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `λ_{G_x}^max ≤ λ_G^max + tol` for every node `x`, where `G_x` is the
/// principal submatrix over `x` and its filter neighbors.
pub fn interlacing_check(f: &FilterMatrix, tol: f64, cfg: &PowerConfig) -> Result<InterlacingReport> {
    let global = lambda_max(f, cfg)?;
    let lambda_global = global.lambda_max;

    let nodes = (0..f.n())
        .into_par_iter()
        .map(|x| {
            let (cols, _) = f.row(x);
            let block = f.principal_submatrix(cols)?;
            let spectrum = dense_spectrum(&block)?;
            let lambda_ego = spectrum.first().map_or(0.0, |v| v.abs());
            Ok(NodeInterlacing {
                node: x,
                ego_size: cols.len(),
                lambda_ego,
                ratio: if lambda_global > 0.0 { lambda_ego / lambda_global } else { f64::INFINITY },
                violation: lambda_ego > lambda_global + tol,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let max_ratio = nodes.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let violations = nodes.iter().filter(|r| r.violation).map(|r| r.node).collect();
    Ok(InterlacingReport { lambda_global, tol, nodes, max_ratio, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FilterKind, Graph};

    fn dense(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn star(leaves: usize) -> Graph {
        let edges: Vec<_> = (1..=leaves).map(|j| (0, j)).collect();
        Graph::unweighted(leaves + 1, &edges).unwrap()
    }

    #[test]
    fn dense_spectrum_closed_forms() {
        let s = dense_spectrum(&dense(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-14 && s[1].abs() < 1e-14);

        assert_eq!(dense_spectrum(&DenseMatrix::identity(3)).unwrap(), vec![1.0; 3]);

        let k3 = dense(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        let s = dense_spectrum(&k3).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-14);
        assert!(s[1].abs() < 1e-14 && s[2].abs() < 1e-14);
    }

    #[test]
    fn dense_spectrum_guards() {
        let mut m = DenseMatrix::identity(2);
        m.set(0, 1, f64::NAN);
        assert!(matches!(dense_spectrum(&m), Err(Error::NonFinite(_))));
        assert!(dense_spectrum(&DenseMatrix::zeros(2, 3)).is_err());
        assert!(matches!(
            dense_spectrum(&DenseMatrix::zeros(DENSE_GUARD + 1, DENSE_GUARD + 1)),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn jacobi_meets_its_off_diagonal_contract() {
        let m = dense(&[&[4.0, 1.0, 2.0], &[1.0, 3.0, 0.5], &[2.0, 0.5, 1.0]]);
        let eig = jacobi_eigenvalues(&m);
        let trace: f64 = eig.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
        let sq: f64 = eig.iter().map(|v| v * v).sum();
        assert!((sq - m.frobenius().powi(2)).abs() < 1e-10);
    }

    #[test]
    fn singular_values_of_asymmetric_input() {
        // [[1,1],[0,1]] has singular values (1±√5)/2 in absolute value
        let s = dense_spectrum(&dense(&[&[1.0, 1.0], &[0.0, 1.0]])).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s[0] - phi).abs() < 1e-12);
        assert!((s[1] - 1.0 / phi).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_examples() {
        let cfg = PowerConfig::default();
        let p3 = Graph::unweighted(3, &[(0, 1), (1, 2)]).unwrap();
        let r = lambda_max(&FilterMatrix::build(&p3, FilterKind::Unnormalized), &cfg).unwrap();
        assert!(r.converged);
        assert!((r.lambda_max - (1.0 + 2f64.sqrt())).abs() < 1e-9);

        let r = lambda_max(&FilterMatrix::build(&star(4), FilterKind::Unnormalized), &cfg).unwrap();
        assert!((r.lambda_max - 3.0).abs() < 1e-9);

        let k3 = Graph::unweighted(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let r = lambda_max(&FilterMatrix::build(&k3, FilterKind::SymNormalized), &cfg).unwrap();
        assert!((r.lambda_max - 2.0).abs() < 1e-9);
    }

    #[test]
    fn random_walk_reports_norm_and_radius() {
        let cfg = PowerConfig::default();
        let f = FilterMatrix::build(&star(4), FilterKind::RandomWalk);
        let r = lambda_max(&f, &cfg).unwrap();
        let oracle = lambda_max_dense(&f.to_dense().unwrap()).unwrap();
        assert!((r.lambda_max - oracle.lambda_max).abs() < 1e-8);
        // D^{-1}A + I is similar to the symmetric normalized filter
        assert!((r.spectral_radius.unwrap() - 2.0).abs() < 1e-8);
        assert!(r.lambda_max >= 2.0 - 1e-9);
    }

    #[test]
    fn rejects_bad_config() {
        let f = FilterMatrix::build(&star(2), FilterKind::Unnormalized);
        assert!(lambda_max(&f, &PowerConfig { tol: 0.0, ..Default::default() }).is_err());
        assert!(lambda_max(&f, &PowerConfig { max_iters: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let c = Graph::unweighted(30, &(0..30).map(|i| (i, (i + 1) % 30)).collect::<Vec<_>>()).unwrap();
        let f = FilterMatrix::build(&c, FilterKind::Unnormalized);
        let r = lambda_max(&f, &PowerConfig { max_iters: 3, ..Default::default() }).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert!(r.residual > 0.0);
    }

    #[test]
    fn star_interlacing() {
        let f = FilterMatrix::build(&star(4), FilterKind::Unnormalized);
        let report = interlacing_check(&f, 1e-9, &PowerConfig::default()).unwrap();
        assert!(report.holds());
        assert!((report.lambda_global - 3.0).abs() < 1e-9);
        assert!((report.nodes[0].lambda_ego - 3.0).abs() < 1e-12);
        for leaf in &report.nodes[1..] {
            assert_eq!(leaf.ego_size, 2);
            assert!((leaf.lambda_ego - 2.0).abs() < 1e-12);
        }
        assert!((report.max_ratio - 1.0).abs() < 1e-9);
    }
}
