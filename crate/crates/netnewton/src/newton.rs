//! The algorithm's computational kernel.
//!
//! The penalized Hessian `H = (I - W) ox I + alpha blockdiag(hess f_i)` is
//! split as `H = D - B` with
//!
//! ```text
//!   D_ii = alpha hess f_i(x_i) + 2 (1 - W_ii) I      (block diagonal)
//!   B_ii = (1 - W_ii) I,   B_ij = W_ij I  on edges
//! ```
//!
//! Each agent inverts only its own `D_ii`; the two-term approximation
//! `hatH^{-1} = D^{-1} + D^{-1} B D^{-1}` is what one round of neighbor
//! exchange can realize. This module computes the per-agent quantities the
//! simulator drives, dense same-math oracles for testing, the truncated
//! Neumann series behind the synchronous baseline, and the closed-form
//! constants of the convergence theory.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::objectives::{LocalObjective, ProblemSpec};
use crate::topology::ConsensusMatrix;
use crate::{Error, Result};

/// Upper bound on the stacked dimension for the dense oracles; everything
/// here materializes `(n dim)^2` entries.
pub const DENSE_SIZE_BUDGET: usize = 500;

/// One agent's view of the computation: its own block plus the latest
/// neighbor messages. Buffer keys are exactly the graph neighbors.
#[derive(Debug, Clone)]
pub struct AgentState {
    /// Local iterate block `x_i`.
    pub x: DVector<f64>,
    /// Splitting block `D_ii`, kept consistent with `x`.
    pub d_mat: DMatrix<f64>,
    /// Gradient block `g_i` from the latest buffered neighbor iterates.
    pub g: DVector<f64>,
    /// Zeroth-order direction `d_i^(0) = -D_ii^{-1} g_i`.
    pub d0: DVector<f64>,
    /// Latest `x_j` received from each neighbor.
    pub buf_x: BTreeMap<usize, DVector<f64>>,
    /// Latest `d_j^(0)` received from each neighbor.
    pub buf_d0: BTreeMap<usize, DVector<f64>>,
}

/// `D_ii = alpha hess f_i(x_i) + 2 (1 - W_ii) I`.
pub fn compute_d_block(
    f: &LocalObjective,
    x_i: &DVector<f64>,
    alpha: f64,
    w_ii: f64,
) -> Result<DMatrix<f64>> {
    let dim = x_i.len();
    let mut d = f.hessian(x_i)? * alpha;
    let shift = 2.0 * (1.0 - w_ii);
    for k in 0..dim {
        d[(k, k)] += shift;
    }
    Ok(d)
}

/// `g_i = (1 - W_ii) x_i - sum_{j in N_i} W_ij x_j(buffered) + alpha grad f_i(x_i)`.
pub fn compute_g_i(
    f: &LocalObjective,
    x_i: &DVector<f64>,
    alpha: f64,
    w: &ConsensusMatrix,
    i: usize,
    buf_x: &BTreeMap<usize, DVector<f64>>,
) -> Result<DVector<f64>> {
    let mut g = x_i * (1.0 - w.diag(i));
    for &j in w.neighbors(i) {
        let x_j = buf_x.get(&j).ok_or_else(|| {
            Error::Solve(format!("agent {i} has no buffered iterate from neighbor {j}"))
        })?;
        g.axpy(-w.entry(i, j), x_j, 1.0);
    }
    g.axpy(alpha, &f.gradient(x_i)?, 1.0);
    Ok(g)
}

/// `d_i^(0) = -D_ii^{-1} g_i` by a direct Cholesky solve.
pub fn compute_d0_i(d_mat: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = d_mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solve("splitting block D_ii is not positive definite".into()))?;
    Ok(-chol.solve(g))
}

/// `d_i = D_ii^{-1} [ (1 - W_ii) d_i^(0) - g_i + sum_{j in N_i} W_ij d_j^(0) ]`.
pub fn compute_newton_dir_i(
    d_mat: &DMatrix<f64>,
    g: &DVector<f64>,
    d0: &DVector<f64>,
    w: &ConsensusMatrix,
    i: usize,
    buf_d0: &BTreeMap<usize, DVector<f64>>,
) -> Result<DVector<f64>> {
    let mut rhs = d0 * (1.0 - w.diag(i));
    rhs -= g;
    for &j in w.neighbors(i) {
        let d0_j = buf_d0.get(&j).ok_or_else(|| {
            Error::Solve(format!("agent {i} has no buffered direction from neighbor {j}"))
        })?;
        rhs.axpy(w.entry(i, j), d0_j, 1.0);
    }
    let chol = d_mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solve("splitting block D_ii is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// `x_i + (eps / p_i) d_i` when `scaled`, else `x_i + eps d_i`.
pub fn step_active_agent(
    x_i: &DVector<f64>,
    d_i: &DVector<f64>,
    eps: f64,
    p_i: f64,
    scaled: bool,
) -> DVector<f64> {
    let step = if scaled { eps / p_i } else { eps };
    x_i + d_i * step
}

fn check_budget(spec: &ProblemSpec, op: &'static str) -> Result<()> {
    if spec.stacked_len() > DENSE_SIZE_BUDGET {
        return Err(Error::Solve(format!(
            "{op} assembles a {0}x{0} matrix; budget is {DENSE_SIZE_BUDGET}",
            spec.stacked_len()
        )));
    }
    Ok(())
}

/// Dense `H(x) = (I - W) ox I + alpha blockdiag(hess f_i(x_i))`.
pub fn assemble_hessian(spec: &ProblemSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_budget(spec, "assemble_hessian")?;
    let (n, dim) = (spec.n(), spec.dim());
    let w = spec.w();
    let mut h = DMatrix::zeros(n * dim, n * dim);
    for i in 0..n {
        let xi = x.rows(i * dim, dim).into_owned();
        let local = spec.local(i).hessian(&xi)? * spec.alpha();
        let shift = 1.0 - w.diag(i);
        for r in 0..dim {
            for c in 0..dim {
                h[(i * dim + r, i * dim + c)] = local[(r, c)];
            }
            h[(i * dim + r, i * dim + r)] += shift;
        }
        for &j in w.neighbors(i) {
            let coupling = -w.entry(i, j);
            for r in 0..dim {
                h[(i * dim + r, j * dim + r)] = coupling;
            }
        }
    }
    Ok(h)
}

/// Dense splitting `(D, B)` with `H = D - B`.
pub fn assemble_splitting(
    spec: &ProblemSpec,
    x: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_budget(spec, "assemble_splitting")?;
    let (n, dim) = (spec.n(), spec.dim());
    let w = spec.w();
    let mut d = DMatrix::zeros(n * dim, n * dim);
    let mut b = DMatrix::zeros(n * dim, n * dim);
    for i in 0..n {
        let xi = x.rows(i * dim, dim).into_owned();
        let block = compute_d_block(spec.local(i), &xi, spec.alpha(), w.diag(i))?;
        for r in 0..dim {
            for c in 0..dim {
                d[(i * dim + r, i * dim + c)] = block[(r, c)];
            }
            b[(i * dim + r, i * dim + r)] = 1.0 - w.diag(i);
        }
        for &j in w.neighbors(i) {
            for r in 0..dim {
                b[(i * dim + r, j * dim + r)] = w.entry(i, j);
            }
        }
    }
    Ok((d, b))
}

/// Inverts a block-diagonal SPD matrix block by block.
fn block_diag_inverse(d: &DMatrix<f64>, n: usize, dim: usize) -> Result<DMatrix<f64>> {
    let mut inv = DMatrix::zeros(n * dim, n * dim);
    for i in 0..n {
        let block = d.view((i * dim, i * dim), (dim, dim)).into_owned();
        let block_inv = block
            .cholesky()
            .ok_or_else(|| Error::Solve("splitting block D_ii is not positive definite".into()))?
            .inverse();
        for r in 0..dim {
            for c in 0..dim {
                inv[(i * dim + r, i * dim + c)] = block_inv[(r, c)];
            }
        }
    }
    Ok(inv)
}

/// `D^{-1/2}` of a block-diagonal SPD matrix via per-block eigendecomposition.
pub(crate) fn block_diag_inv_sqrt(d: &DMatrix<f64>, n: usize, dim: usize) -> Result<DMatrix<f64>> {
    let mut inv_sqrt = DMatrix::zeros(n * dim, n * dim);
    for i in 0..n {
        let block = d.view((i * dim, i * dim), (dim, dim)).into_owned();
        let eig = block.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::Solve(
                "splitting block D_ii is not positive definite".into(),
            ));
        }
        let scaled = {
            let mut u = eig.eigenvectors.clone();
            for (c, &l) in eig.eigenvalues.iter().enumerate() {
                let s = 1.0 / l.sqrt();
                u.column_mut(c).scale_mut(s);
            }
            u * eig.eigenvectors.transpose()
        };
        for r in 0..dim {
            for c in 0..dim {
                inv_sqrt[(i * dim + r, i * dim + c)] = scaled[(r, c)];
            }
        }
    }
    Ok(inv_sqrt)
}

/// Dense two-term approximation `hatH^{-1} = D^{-1} + D^{-1} B D^{-1}`.
pub fn dense_hat_h_inverse(spec: &ProblemSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_budget(spec, "dense_hat_h_inverse")?;
    let (d, b) = assemble_splitting(spec, x)?;
    let d_inv = block_diag_inverse(&d, spec.n(), spec.dim())?;
    Ok(&d_inv + &d_inv * b * &d_inv)
}

/// Truncated Neumann series for the Hessian inverse:
/// `sum_{l=0..k} D^{-1/2} (D^{-1/2} B D^{-1/2})^l D^{-1/2}`.
/// `k = 1` coincides with [`dense_hat_h_inverse`]; as `k` grows the result
/// converges to `H^{-1}` geometrically at rate `rho`.
pub fn series_inverse_k(spec: &ProblemSpec, x: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
    check_budget(spec, "series_inverse_k")?;
    let (n, dim) = (spec.n(), spec.dim());
    let (d, b) = assemble_splitting(spec, x)?;
    let inv_sqrt = block_diag_inv_sqrt(&d, n, dim)?;
    let e = &inv_sqrt * b * &inv_sqrt;
    let size = n * dim;
    let mut sum = DMatrix::identity(size, size);
    let mut power = DMatrix::identity(size, size);
    for _ in 1..=k {
        power = &power * &e;
        sum += &power;
    }
    Ok(&inv_sqrt * sum * &inv_sqrt)
}

/// Spectral norm (max |eigenvalue|) of a symmetric matrix.
#[cfg(test)]
pub(crate) fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0, |acc, &l| acc.max(l.abs()))
}

/// Closed-form constants of the convergence theory for one problem family,
/// consensus matrix, activation schedule, and stepsize.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConstants {
    /// Spectral bound on `D^{-1/2} B D^{-1/2}`: `2(1-delta) / (2(1-delta) + alpha m)`.
    pub rho: f64,
    /// Eigenvalue floor of the approximation: `1 / (2(1-delta) + alpha M)`.
    pub lambda: f64,
    /// Eigenvalue ceiling: `(1 + rho) / (2(1-Delta) + alpha m)`.
    pub big_lambda: f64,
    /// Smallest activation probability.
    pub pi_min: f64,
    /// Largest activation probability.
    pub pi_max: f64,
    /// The stepsize these constants were evaluated at.
    pub eps: f64,
    /// Largest stepsize with almost-sure descent: `2 pi (lambda/Lambda)^2`.
    pub eps_as_max: f64,
    /// Largest stepsize for the linear-rate theory: `min(1/2, eps_as_max)`.
    pub eps_lin_max: f64,
    /// `eps` lies in `(0, eps_as_max]`.
    pub eps_valid_as: bool,
    /// `eps` lies in `(0, eps_lin_max)`.
    pub eps_valid_lin: bool,
    /// Linear contraction factor `alpha m eps (2 pi lambda^2 - eps Lambda^2) / (lambda pi)`.
    pub beta: f64,
    /// Weighted-error recursion constant; below 1 for valid stepsizes.
    pub c1: f64,
    /// Curvature-coupling constant; zero for quadratics.
    pub c2: f64,
    /// Quadratic-term weight in the error recursion; zero for quadratics.
    pub gamma1: f64,
}

/// Evaluates every constant from the primitive inputs. Validity of the
/// stepsize is reported through the flags rather than an error, so invalid
/// stepsizes can still be inspected.
#[allow(clippy::too_many_arguments)]
pub fn theory_constants(
    m: f64,
    big_m: f64,
    lipschitz: f64,
    delta: f64,
    big_delta: f64,
    alpha: f64,
    p: &[f64],
    eps: f64,
) -> Result<TheoryConstants> {
    if !(m > 0.0) || big_m < m {
        return Err(Error::Objective(format!(
            "curvature bounds need 0 < m <= M, got m={m}, M={big_m}"
        )));
    }
    if !(lipschitz >= 0.0) {
        return Err(Error::Objective(format!(
            "Hessian Lipschitz constant must be >= 0, got {lipschitz}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::Objective(format!(
            "theory constants need a positive penalty weight, got {alpha}"
        )));
    }
    if !(delta > 0.0 && delta <= big_delta && big_delta < 1.0) {
        return Err(Error::Topology(format!(
            "diagonal bounds need 0 < delta <= Delta < 1, got delta={delta}, Delta={big_delta}"
        )));
    }
    if p.is_empty() {
        return Err(Error::Schedule("empty activation probabilities".into()));
    }
    let mut pi_min = f64::INFINITY;
    let mut pi_max = 0.0f64;
    let mut total = 0.0;
    for &pi in p {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::Schedule(format!(
                "activation probabilities must lie in (0, 1], got {pi}"
            )));
        }
        pi_min = pi_min.min(pi);
        pi_max = pi_max.max(pi);
        total += pi;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Schedule(format!(
            "activation probabilities must sum to 1, got {total}"
        )));
    }

    let rho = 2.0 * (1.0 - delta) / (2.0 * (1.0 - delta) + alpha * m);
    let lambda = 1.0 / (2.0 * (1.0 - delta) + alpha * big_m);
    let big_lambda = (1.0 + rho) / (2.0 * (1.0 - big_delta) + alpha * m);
    let ratio = lambda / big_lambda;
    let eps_as_max = 2.0 * pi_min * ratio * ratio;
    let eps_lin_max = 0.5f64.min(eps_as_max);
    let eps_valid_as = eps > 0.0 && eps <= eps_as_max;
    let eps_valid_lin = eps > 0.0 && eps < eps_lin_max;

    let beta = alpha * m * eps * (2.0 * pi_min * lambda * lambda - eps * big_lambda * big_lambda)
        / (lambda * pi_min);
    let one_minus_rho_sq = 1.0 - rho * rho;
    let c1_arg = (eps / pi_min - 2.0)
        .max(eps * one_minus_rho_sq * one_minus_rho_sq / pi_min - 2.0 * one_minus_rho_sq);
    let c1 = (1.0 + eps * c1_arg).sqrt();
    let c2 = (eps * alpha * lipschitz * big_lambda
        / (pi_min * (2.0 * (1.0 - big_delta) + alpha * m)))
        .sqrt();
    let gamma1 = (2.0 * (1.0 - delta) + alpha * big_m).sqrt() * alpha * lipschitz * eps
        * big_lambda
        / (2.0 * pi_min * pi_min * (2.0 * (1.0 - big_delta) + alpha * m));

    Ok(TheoryConstants {
        rho,
        lambda,
        big_lambda,
        pi_min,
        pi_max,
        eps,
        eps_as_max,
        eps_lin_max,
        eps_valid_as,
        eps_valid_lin,
        beta,
        c1,
        c2,
        gamma1,
    })
}

impl TheoryConstants {
    /// Builds constants straight from a problem and schedule.
    pub fn for_problem(spec: &ProblemSpec, p: &[f64], eps: f64) -> Result<TheoryConstants> {
        theory_constants(
            spec.m(),
            spec.big_m(),
            spec.lipschitz(),
            spec.w().delta(),
            spec.w().big_delta(),
            spec.alpha(),
            p,
            eps,
        )
    }

    /// `C3 = C2 (2 gap0 / (lambda pi^2))^{1/4}` for an initial optimality gap.
    pub fn c3(&self, gap0: f64) -> f64 {
        self.c2 * (2.0 * gap0 / (self.lambda * self.pi_min * self.pi_min)).powf(0.25)
    }

    /// Error-contraction envelope `Gamma(t) = C1 (1 + C3 (1-beta)^{(t-2)/4})`.
    pub fn gamma_t(&self, t: f64, gap0: f64) -> f64 {
        self.c1 * (1.0 + self.c3(gap0) * (1.0 - self.beta).powf((t - 2.0) / 4.0))
    }

    /// Iteration bound after which the weighted error contracts
    /// quadratically: `4 ln((1-C1)/(C3 C1)) / ln(1-beta) + 2`. For
    /// quadratics `C3 = 0` and this is `-inf` (the quadratic phase is
    /// immediate); stepsizes outside the linear-rate range propagate to
    /// non-finite values rather than erroring.
    pub fn t_quad_onset(&self, gap0: f64) -> f64 {
        let c3 = self.c3(gap0);
        4.0 * ((1.0 - self.c1) / (c3 * self.c1)).ln() / (1.0 - self.beta).ln() + 2.0
    }

    /// Every scalar constant as ordered key/value pairs; booleans as 0/1.
    pub fn flat_report(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("rho", self.rho),
            ("lambda", self.lambda),
            ("big_lambda", self.big_lambda),
            ("pi_min", self.pi_min),
            ("pi_max", self.pi_max),
            ("eps", self.eps),
            ("eps_as_max", self.eps_as_max),
            ("eps_lin_max", self.eps_lin_max),
            ("eps_valid_as", f64::from(u8::from(self.eps_valid_as))),
            ("eps_valid_lin", f64::from(u8::from(self.eps_valid_lin))),
            ("beta", self.beta),
            ("c1", self.c1),
            ("c2", self.c2),
            ("gamma1", self.gamma1),
        ]
    }
}
