//! Local objective families, the stacked penalized objective, and data input.
//!
//! Two families are supported. Quadratic agents hold `f_i(x) = c_i ||x - b_i||^2`.
//! Logistic agents hold a regularized logistic loss over their private sample
//! shard:
//!
//! ```text
//!   f_i(x) = (upsilon / 2n) ||x||^2 + (1/K) sum_j log(1 + exp(-v_ij <u_ij, x>))
//! ```
//!
//! with `K` the *global* sample count, so that the sum over agents of the
//! local losses reproduces the centralized average loss. The curvature
//! constants `(m, M, L)` returned here are closed-form global bounds: every
//! local Hessian eigenvalue lies in `[m, M]` and every local Hessian is
//! `L`-Lipschitz in `x`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::topology::ConsensusMatrix;
use crate::{Error, Result};

/// Feature-index cap for LIBSVM input, so a hostile `1:1 999999999:1` line
/// cannot force a huge dense allocation.
const MAX_FEATURE_INDEX: usize = 1_000_000;

/// sup |sigma''| for the standard sigmoid, attained at sigma = (3 +- sqrt(3))/6.
const SIGMOID_SECOND_DERIV_SUP: f64 = 0.09622504486493764; // 1/(6 sqrt(3))

/// One labeled sample: dense feature vector and a label in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: DVector<f64>,
    pub label: f64,
}

/// A parsed dataset with a consistent feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    dim: usize,
}

impl Dataset {
    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Reads and parses a LIBSVM file from disk.
    pub fn from_path(path: &std::path::Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        parse_libsvm(&text)
    }
}

/// Parses LIBSVM text: one `label idx:val idx:val ...` line per sample,
/// indices 1-based. The feature dimension is the maximum index seen in the
/// file. Labels `+1`/`1` and `-1` are accepted as given; label `0` is mapped
/// to `-1` (common in binary dumps that use {0,1} coding). Indices may
/// appear in any order; a repeated index overwrites (last one wins). Blank
/// lines are skipped; an input with no samples is an error.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut raw: Vec<(f64, Vec<(usize, f64)>, usize)> = Vec::new();
    let mut dim = 0usize;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_token = tokens.next().expect("non-empty line has a first token");
        let label_value: f64 = label_token.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid label `{label_token}`"),
        })?;
        let label = if label_value == 1.0 {
            1.0
        } else if label_value == -1.0 || label_value == 0.0 {
            -1.0
        } else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("label must be +1, -1, or 0, got `{label_token}`"),
            });
        };
        let mut pairs = Vec::new();
        for token in tokens {
            let (index_str, value_str) = token.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `index:value`, got `{token}`"),
            })?;
            let index: usize = index_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid feature index `{index_str}`"),
            })?;
            if index == 0 || index > MAX_FEATURE_INDEX {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("feature index {index} outside 1..={MAX_FEATURE_INDEX}"),
                });
            }
            let value: f64 = value_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid feature value `{value_str}`"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite feature value `{value_str}`"),
                });
            }
            dim = dim.max(index);
            pairs.push((index, value));
        }
        raw.push((label, pairs, line_no));
    }
    if raw.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no samples in input".into(),
        });
    }
    let samples = raw
        .into_iter()
        .map(|(label, pairs, _)| {
            let mut features = DVector::zeros(dim);
            for (index, value) in pairs {
                features[index - 1] = value;
            }
            LabeledSample { features, label }
        })
        .collect();
    Ok(Dataset { samples, dim })
}

/// A single agent's objective.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalObjective {
    Quadratic {
        /// Curvature weight `c_i > 0`.
        c: f64,
        /// Target vector `b_i`; its length is the block dimension.
        b: DVector<f64>,
    },
    Logistic {
        /// This agent's sample shard.
        rows: Vec<LabeledSample>,
        /// Regularizer weight `upsilon > 0`.
        upsilon: f64,
        /// Global sample count `K` used in the `1/K` loss weighting.
        k_total: usize,
        /// Agent count `n` used in the `upsilon/n` regularizer split.
        n_agents: usize,
        dim: usize,
    },
}

impl LocalObjective {
    pub fn quadratic(c: f64, b: DVector<f64>) -> Result<LocalObjective> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Objective(format!(
                "quadratic weight must be positive and finite, got {c}"
            )));
        }
        if b.is_empty() {
            return Err(Error::Objective("quadratic target must be nonempty".into()));
        }
        Ok(LocalObjective::Quadratic { c, b })
    }

    pub fn logistic(
        rows: Vec<LabeledSample>,
        upsilon: f64,
        k_total: usize,
        n_agents: usize,
        dim: usize,
    ) -> Result<LocalObjective> {
        if !(upsilon > 0.0) || !upsilon.is_finite() {
            return Err(Error::Objective(format!(
                "regularizer weight must be positive and finite, got {upsilon}"
            )));
        }
        if k_total == 0 || n_agents == 0 {
            return Err(Error::Objective(
                "logistic objective needs k_total >= 1 and n_agents >= 1".into(),
            ));
        }
        for sample in &rows {
            if sample.features.len() != dim {
                return Err(Error::Dimension {
                    context: "logistic sample",
                    expected: dim,
                    got: sample.features.len(),
                });
            }
            if sample.label != 1.0 && sample.label != -1.0 {
                return Err(Error::Objective(format!(
                    "labels must be +-1, got {}",
                    sample.label
                )));
            }
        }
        Ok(LocalObjective::Logistic {
            rows,
            upsilon,
            k_total,
            n_agents,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            LocalObjective::Quadratic { b, .. } => b.len(),
            LocalObjective::Logistic { dim, .. } => *dim,
        }
    }

    fn check_dim(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                context,
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `f_i(x)`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x, "local_value")?;
        Ok(match self {
            LocalObjective::Quadratic { c, b } => {
                let r = x - b;
                c * r.dot(&r)
            }
            LocalObjective::Logistic {
                rows,
                upsilon,
                k_total,
                n_agents,
                ..
            } => {
                let reg = 0.5 * upsilon / *n_agents as f64 * x.dot(x);
                let loss: f64 = rows
                    .iter()
                    .map(|s| softplus(-s.label * s.features.dot(x)))
                    .sum();
                reg + loss / *k_total as f64
            }
        })
    }

    /// `grad f_i(x)`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x, "local_gradient")?;
        Ok(match self {
            LocalObjective::Quadratic { c, b } => (x - b) * (2.0 * c),
            LocalObjective::Logistic {
                rows,
                upsilon,
                k_total,
                n_agents,
                ..
            } => {
                let mut g = x * (upsilon / *n_agents as f64);
                let scale = 1.0 / *k_total as f64;
                for s in rows {
                    let coeff = -s.label * sigmoid(-s.label * s.features.dot(x)) * scale;
                    g.axpy(coeff, &s.features, 1.0);
                }
                g
            }
        })
    }

    /// `hess f_i(x)`, always symmetric positive definite.
    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x, "local_hessian")?;
        let dim = self.dim();
        Ok(match self {
            LocalObjective::Quadratic { c, .. } => DMatrix::identity(dim, dim) * (2.0 * c),
            LocalObjective::Logistic {
                rows,
                upsilon,
                k_total,
                n_agents,
                ..
            } => {
                let mut h = DMatrix::identity(dim, dim) * (upsilon / *n_agents as f64);
                let scale = 1.0 / *k_total as f64;
                for s in rows {
                    let sig = sigmoid(s.features.dot(x));
                    // Rank-1 update with x = y, so entrywise symmetry is exact.
                    h.ger(sig * (1.0 - sig) * scale, &s.features, &s.features, 1.0);
                }
                h
            }
        })
    }
}

/// Numerically stable `log(1 + exp(z))`.
fn softplus(z: f64) -> f64 {
    if z > 35.0 {
        z + (-z).exp()
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Numerically stable standard sigmoid.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Global curvature bounds `(m, M, L)` for a family of local objectives:
/// `m I <= hess f_i(x) <= M I` for all agents and states, and every
/// `hess f_i` is `L`-Lipschitz. Mixing families in one problem is not
/// supported because a single set of constants must cover every agent.
pub fn curvature_constants(locals: &[LocalObjective]) -> Result<(f64, f64, f64)> {
    if locals.is_empty() {
        return Err(Error::Objective("no local objectives".into()));
    }
    let all_quadratic = locals
        .iter()
        .all(|f| matches!(f, LocalObjective::Quadratic { .. }));
    let all_logistic = locals
        .iter()
        .all(|f| matches!(f, LocalObjective::Logistic { .. }));
    if all_quadratic {
        let mut m = f64::INFINITY;
        let mut big_m = 0.0f64;
        for f in locals {
            if let LocalObjective::Quadratic { c, .. } = f {
                m = m.min(2.0 * c);
                big_m = big_m.max(2.0 * c);
            }
        }
        Ok((m, big_m, 0.0))
    } else if all_logistic {
        let mut m = f64::INFINITY;
        let mut big_m = 0.0f64;
        let mut lipschitz = 0.0f64;
        for f in locals {
            if let LocalObjective::Logistic {
                rows,
                upsilon,
                k_total,
                n_agents,
                ..
            } = f
            {
                let floor = upsilon / *n_agents as f64;
                let scale = 1.0 / *k_total as f64;
                let sq: f64 = rows.iter().map(|s| s.features.norm_squared()).sum();
                let cube: f64 = rows.iter().map(|s| s.features.norm().powi(3)).sum();
                m = m.min(floor);
                big_m = big_m.max(floor + 0.25 * scale * sq);
                lipschitz = lipschitz.max(SIGMOID_SECOND_DERIV_SUP * scale * cube);
            }
        }
        Ok((m, big_m, lipschitz))
    } else {
        Err(Error::Objective(
            "mixed quadratic/logistic families in one problem are unsupported".into(),
        ))
    }
}

/// Splits a dataset uniformly over `n` agents: a seed-deterministic shuffle,
/// then `floor(K/n)` samples per agent with the remainder dropped. The
/// global `K` is kept in each agent's `1/K` weighting.
pub fn partition_uniform(
    ds: &Dataset,
    n: usize,
    seed: u64,
    upsilon: f64,
) -> Result<Vec<LocalObjective>> {
    if n == 0 {
        return Err(Error::Objective("agent count must be >= 1".into()));
    }
    if n > ds.len() {
        return Err(Error::Objective(format!(
            "cannot split {} samples over {n} agents",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let per_agent = ds.len() / n;
    (0..n)
        .map(|a| {
            let rows = order[a * per_agent..(a + 1) * per_agent]
                .iter()
                .map(|&idx| ds.samples()[idx].clone())
                .collect();
            LocalObjective::logistic(rows, upsilon, ds.len(), n, ds.dim())
        })
        .collect()
}

/// The full penalized problem: local objectives, the penalty weight, the
/// consensus matrix, and the family's curvature constants.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    locals: Vec<LocalObjective>,
    alpha: f64,
    w: ConsensusMatrix,
    m: f64,
    big_m: f64,
    lipschitz: f64,
}

impl ProblemSpec {
    /// `alpha = 0` is allowed for penalty-only sanity checks, but the
    /// convergence theory needs `alpha > 0`.
    pub fn new(locals: Vec<LocalObjective>, alpha: f64, w: ConsensusMatrix) -> Result<ProblemSpec> {
        if locals.len() != w.n() {
            return Err(Error::Objective(format!(
                "{} local objectives for a {}-node consensus matrix",
                locals.len(),
                w.n()
            )));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Objective(format!(
                "penalty weight must be finite and >= 0, got {alpha}"
            )));
        }
        let dim = locals[0].dim();
        for (i, f) in locals.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::Dimension {
                    context: "problem spec locals",
                    expected: dim,
                    got: locals[i].dim(),
                });
            }
        }
        let (m, big_m, lipschitz) = curvature_constants(&locals)?;
        Ok(ProblemSpec {
            locals,
            alpha,
            w,
            m,
            big_m,
            lipschitz,
        })
    }

    pub fn n(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.locals[0].dim()
    }

    pub fn stacked_len(&self) -> usize {
        self.n() * self.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn w(&self) -> &ConsensusMatrix {
        &self.w
    }

    pub fn locals(&self) -> &[LocalObjective] {
        &self.locals
    }

    pub fn local(&self, i: usize) -> &LocalObjective {
        &self.locals[i]
    }

    /// Hessian lower bound `m` over all agents.
    pub fn m(&self) -> f64 {
        self.m
    }

    /// Hessian upper bound `M` over all agents.
    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    /// Hessian Lipschitz constant `L` (0 for quadratics).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn check_stacked(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.stacked_len() {
            return Err(Error::Dimension {
                context,
                expected: self.stacked_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `F(x) = 1/2 x' ((I - W) ox I) x + alpha sum_i f_i(x_i)`.
    pub fn penalized_value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_stacked(x, "penalized_value")?;
        let dim = self.dim();
        let mut quad = 0.0;
        for i in 0..self.n() {
            let xi = x.rows(i * dim, dim);
            quad += (1.0 - self.w.diag(i)) * xi.dot(&xi);
            for &j in self.w.neighbors(i) {
                quad -= self.w.entry(i, j) * xi.dot(&x.rows(j * dim, dim));
            }
        }
        let mut local = 0.0;
        for (i, f) in self.locals.iter().enumerate() {
            local += f.value(&x.rows(i * dim, dim).into_owned())?;
        }
        Ok(0.5 * quad + self.alpha * local)
    }

    /// Stacked gradient; block `i` is
    /// `(1 - W_ii) x_i - sum_{j in N_i} W_ij x_j + alpha grad f_i(x_i)`.
    pub fn penalized_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_stacked(x, "penalized_gradient")?;
        let dim = self.dim();
        let mut g = DVector::zeros(x.len());
        for (i, f) in self.locals.iter().enumerate() {
            let xi = x.rows(i * dim, dim).into_owned();
            let mut gi = xi.clone() * (1.0 - self.w.diag(i));
            for &j in self.w.neighbors(i) {
                gi.axpy(-self.w.entry(i, j), &x.rows(j * dim, dim).into_owned(), 1.0);
            }
            gi.axpy(self.alpha, &f.gradient(&xi)?, 1.0);
            g.rows_mut(i * dim, dim).copy_from(&gi);
        }
        Ok(g)
    }
}
