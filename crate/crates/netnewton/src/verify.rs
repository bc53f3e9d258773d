//! Numerical invariant suites: algebraic identities of the splitting,
//! spectral bounds, the expected-descent and weighted-error inequalities,
//! the mean-gap envelope, and finite-difference oracles for the objective
//! derivatives. Each suite returns a [`ValidationReport`] so the command
//! line and the test suite share one implementation.
//!
//! Theorem-level checks only apply when the stepsize sits inside the range
//! the theory covers. Outside it they report a passing "not applicable"
//! entry rather than failing: an out-of-range stepsize is a property of
//! the configuration, not a defect in the solver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::analysis::{aggregate_rates, Reference, MIN_SEEDS_FOR_STATS};
use crate::engine::{
    enumerate_one_step, fresh_directions, run_async_newton, ActivationMode, ActivationSchedule,
    RunConfig,
};
use crate::newton::{
    assemble_hessian, assemble_splitting, block_diag_inv_sqrt, dense_hat_h_inverse,
    TheoryConstants,
};
use crate::objectives::{LocalObjective, ProblemSpec};
use crate::report::{CheckResult, ValidationReport};
use crate::topology::{validate_consensus, ConsensusMatrix};
use crate::Result;

pub const SPLITTING_TOL: f64 = 1e-14;
pub const SPECTRUM_TOL: f64 = 1e-10;
pub const APPROX_IDENTITY_TOL: f64 = 1e-10;
pub const DIRECTION_TOL: f64 = 1e-10;
pub const DESCENT_TOL: f64 = 1e-10;
pub const RECURSION_TOL: f64 = 1e-9;
pub const GRADIENT_FD_STEP: f64 = 1e-6;
pub const GRADIENT_FD_TOL: f64 = 1e-5;
pub const HESSIAN_FD_STEP: f64 = 1e-4;
pub const HESSIAN_FD_TOL: f64 = 1e-4;

/// Draws `count` stacked states with entries uniform in `[-scale, scale]`.
pub fn random_states(len: usize, count: usize, scale: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(len, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * scale))
        .collect()
}

/// Structural checks on the consensus matrix (delegates to the topology
/// module's validator).
pub fn check_consensus(cm: &ConsensusMatrix) -> ValidationReport {
    validate_consensus(cm)
}

fn not_applicable(name: &str, reason: String) -> CheckResult {
    CheckResult::new(name, true, 0.0, 0.0, format!("not applicable: {reason}"))
}

/// The scaled-mode stepsize equivalent to `eps` under `schedule`, or the
/// reason there is none.
fn scaled_eps(schedule: &ActivationSchedule, eps: f64) -> std::result::Result<f64, String> {
    match schedule.mode() {
        ActivationMode::Scaled => Ok(eps),
        ActivationMode::Unscaled => {
            if schedule.pi_max() - schedule.pi_min() > 1e-12 {
                Err("unscaled runs with nonuniform probabilities have no scaled equivalent".into())
            } else {
                Ok(eps * schedule.p()[0])
            }
        }
    }
}

/// Identities that hold at every state regardless of the stepsize: the
/// splitting reassembles the Hessian, the coupling matrix and approximate
/// inverse stay inside their spectral ranges, the approximation-error
/// identity holds, and the per-agent direction matches the dense formula.
pub fn check_algebra(spec: &ProblemSpec, states: &[DVector<f64>]) -> Result<ValidationReport> {
    let (n, dim) = (spec.n(), spec.dim());
    let uniform = vec![1.0 / n as f64; n];
    // Only the stepsize-free constants (rho, lambda, Lambda) are read.
    let constants = TheoryConstants::for_problem(spec, &uniform, 1.0)?;

    let mut worst_split = 0.0f64;
    let mut e_low = f64::INFINITY;
    let mut e_high = f64::NEG_INFINITY;
    let mut hinv_low = f64::INFINITY;
    let mut hinv_high = f64::NEG_INFINITY;
    let mut worst_lemma = 0.0f64;
    let mut worst_dir = 0.0f64;

    for x in states {
        let h = assemble_hessian(spec, x)?;
        let (d, b) = assemble_splitting(spec, x)?;

        let split = (&d - &b) - &h;
        worst_split = worst_split.max(split.amax());

        let d_inv_sqrt = block_diag_inv_sqrt(&d, n, dim)?;
        let e = {
            let raw = &d_inv_sqrt * &b * &d_inv_sqrt;
            (&raw + raw.transpose()) * 0.5
        };
        for ev in e.clone().symmetric_eigen().eigenvalues.iter() {
            e_low = e_low.min(*ev);
            e_high = e_high.max(*ev);
        }

        let hat_inv = dense_hat_h_inverse(spec, x)?;
        let hat_sym = (&hat_inv + hat_inv.transpose()) * 0.5;
        for ev in hat_sym.symmetric_eigen().eigenvalues.iter() {
            hinv_low = hinv_low.min(*ev);
            hinv_high = hinv_high.max(*ev);
        }

        // D^{1/2} (I - hatH^{-1} H) = E^2 D^{1/2}.
        let d_sqrt = {
            let mut s = DMatrix::zeros(n * dim, n * dim);
            for i in 0..n {
                let block = d.view((i * dim, i * dim), (dim, dim)).into_owned();
                let eig = block.symmetric_eigen();
                let mut rebuilt = DMatrix::zeros(dim, dim);
                for (k, ev) in eig.eigenvalues.iter().enumerate() {
                    let v = eig.eigenvectors.column(k);
                    rebuilt += v * v.transpose() * ev.max(0.0).sqrt();
                }
                s.view_mut((i * dim, i * dim), (dim, dim)).copy_from(&rebuilt);
            }
            s
        };
        let identity = DMatrix::identity(n * dim, n * dim);
        let lhs = &d_sqrt * (&identity - &hat_inv * &h);
        let rhs = &e * &e * &d_sqrt;
        worst_lemma = worst_lemma.max((lhs - rhs).norm());

        let g = spec.penalized_gradient(x)?;
        let dense_dir = -(&hat_inv * &g);
        let agent_dir = fresh_directions(spec, x)?;
        worst_dir = worst_dir.max((agent_dir - dense_dir).norm());
    }

    let mut report = ValidationReport::new();
    report.push(
        CheckResult::from_residual("splitting_identity", worst_split, SPLITTING_TOL)
            .with_detail(format!("{} states, entrywise max |(D - B) - H|", states.len())),
    );
    report.push(
        CheckResult::from_residual("coupling_spectrum_floor", -e_low, SPECTRUM_TOL)
            .with_detail(format!("min eig(E) = {e_low}")),
    );
    report.push(
        CheckResult::from_residual(
            "coupling_spectrum_ceiling",
            e_high - constants.rho,
            SPECTRUM_TOL,
        )
        .with_detail(format!("max eig(E) = {e_high}, rho = {}", constants.rho)),
    );
    report.push(
        CheckResult::from_residual(
            "approx_inverse_spectrum_floor",
            constants.lambda - hinv_low,
            SPECTRUM_TOL,
        )
        .with_detail(format!("min eig = {hinv_low}, lambda = {}", constants.lambda)),
    );
    report.push(
        CheckResult::from_residual(
            "approx_inverse_spectrum_ceiling",
            hinv_high - constants.big_lambda,
            SPECTRUM_TOL,
        )
        .with_detail(format!(
            "max eig = {hinv_high}, Lambda = {}",
            constants.big_lambda
        )),
    );
    report.push(
        CheckResult::from_residual("approx_error_identity", worst_lemma, APPROX_IDENTITY_TOL)
            .with_detail(format!("{} states, Frobenius residual", states.len())),
    );
    report.push(
        CheckResult::from_residual("direction_equivalence", worst_dir, DIRECTION_TOL)
            .with_detail(format!(
                "{} states, per-agent vs dense direction",
                states.len()
            )),
    );
    Ok(report)
}

/// Expected one-step descent and gap contraction, enumerated exactly over
/// all activation outcomes at each state.
pub fn check_descent(
    spec: &ProblemSpec,
    schedule: &ActivationSchedule,
    eps: f64,
    reference: &Reference,
    states: &[DVector<f64>],
) -> Result<ValidationReport> {
    let mut report = ValidationReport::new();
    let names = ["expected_descent", "expected_gap_contraction"];
    let eps_eff = match scaled_eps(schedule, eps) {
        Ok(v) => v,
        Err(reason) => {
            for name in names {
                report.push(not_applicable(name, reason.clone()));
            }
            return Ok(report);
        }
    };
    let constants = TheoryConstants::for_problem(spec, schedule.p(), eps_eff)?;
    if !constants.eps_valid_as {
        let reason = format!(
            "stepsize {eps_eff} outside the almost-sure descent range (0, {}]",
            constants.eps_as_max
        );
        for name in names {
            report.push(not_applicable(name, reason.clone()));
        }
        return Ok(report);
    }

    let f_star = spec.penalized_value(&reference.x_star)?;
    let mut worst_descent = f64::NEG_INFINITY;
    let mut worst_contraction = f64::NEG_INFINITY;
    for x in states {
        let one = enumerate_one_step(spec, schedule, eps, x, &reference.x_star)?;
        worst_descent = worst_descent.max(one.expected_f - one.descent_rhs);
        let contraction =
            (one.expected_f - f_star) - (1.0 - constants.beta) * (one.f_at_x - f_star);
        worst_contraction = worst_contraction.max(contraction);
    }
    report.push(
        CheckResult::from_residual(names[0], worst_descent, DESCENT_TOL)
            .with_detail(format!("{} states, worst E[F+] - rhs", states.len())),
    );
    report.push(
        CheckResult::from_residual(names[1], worst_contraction, DESCENT_TOL)
            .with_detail(format!(
                "{} states, worst E[gap+] - (1-beta) gap",
                states.len()
            )),
    );
    Ok(report)
}

/// The expected weighted-error recursion at synchronized states.
pub fn check_recursion(
    spec: &ProblemSpec,
    schedule: &ActivationSchedule,
    eps: f64,
    reference: &Reference,
    states: &[DVector<f64>],
) -> Result<ValidationReport> {
    let mut report = ValidationReport::new();
    let name = "weighted_error_recursion";
    let eps_eff = match scaled_eps(schedule, eps) {
        Ok(v) => v,
        Err(reason) => {
            report.push(not_applicable(name, reason));
            return Ok(report);
        }
    };
    let constants = TheoryConstants::for_problem(spec, schedule.p(), eps_eff)?;
    if !constants.eps_valid_lin {
        report.push(not_applicable(
            name,
            format!(
                "stepsize {eps_eff} outside the linear-rate range (0, {})",
                constants.eps_lin_max
            ),
        ));
        return Ok(report);
    }

    let mut worst = f64::NEG_INFINITY;
    for x in states {
        let one = enumerate_one_step(spec, schedule, eps, x, &reference.x_star)?;
        worst = worst.max(one.recursion_lhs - one.recursion_rhs);
    }
    report.push(
        CheckResult::from_residual(name, worst, RECURSION_TOL)
            .with_detail(format!("{} states, worst E[w+] - rhs", states.len())),
    );
    Ok(report)
}

/// Runs `n_seeds` independent trajectories and checks the mean optimality
/// gap against the `(1 - beta)^t` envelope (multiplicative slack 1.05 for
/// sampling noise).
pub fn check_envelope(
    spec: &ProblemSpec,
    schedule: &ActivationSchedule,
    eps: f64,
    reference: &Reference,
    n_seeds: usize,
    t_max: usize,
) -> Result<ValidationReport> {
    let mut report = ValidationReport::new();
    let name = "mean_gap_envelope";
    let eps_eff = match scaled_eps(schedule, eps) {
        Ok(v) => v,
        Err(reason) => {
            report.push(not_applicable(name, reason));
            return Ok(report);
        }
    };
    let constants = TheoryConstants::for_problem(spec, schedule.p(), eps_eff)?;
    if !constants.eps_valid_lin {
        report.push(not_applicable(
            name,
            format!(
                "stepsize {eps_eff} outside the linear-rate range (0, {})",
                constants.eps_lin_max
            ),
        ));
        return Ok(report);
    }
    if n_seeds < MIN_SEEDS_FOR_STATS {
        report.push(not_applicable(
            name,
            format!("needs at least {MIN_SEEDS_FOR_STATS} seeds, got {n_seeds}"),
        ));
        return Ok(report);
    }

    let mut traces = Vec::with_capacity(n_seeds);
    for s in 0..n_seeds {
        let mut cfg = RunConfig::new(
            spec.clone(),
            schedule.with_seed(schedule.seed().wrapping_add(s as u64)),
            eps,
            t_max,
        );
        cfg.record_every = t_max.max(1);
        traces.push(run_async_newton(&cfg)?);
    }
    let rates = aggregate_rates(spec, &traces, &constants, reference)?;
    let inside = rates.bound_satisfied.unwrap_or(0.0);
    report.push(CheckResult::new(
        name,
        rates.envelope_ok == Some(true),
        1.0 - inside,
        0.0,
        format!(
            "{n_seeds} seeds, {t_max} activations, fraction inside = {inside}, fitted rate = {}, bound = {}",
            rates.empirical_rate, rates.beta_bound
        ),
    ));
    Ok(report)
}

/// Central finite-difference checks of every local objective's gradient
/// and Hessian at random states.
pub fn check_finite_differences(
    locals: &[LocalObjective],
    states_per_local: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;

    for f in locals {
        let dim = f.dim();
        for _ in 0..states_per_local {
            let x = DVector::from_fn(dim, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * 2.0);

            let grad = f.gradient(&x)?;
            let mut fd_grad = DVector::zeros(dim);
            for k in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += GRADIENT_FD_STEP;
                xm[k] -= GRADIENT_FD_STEP;
                fd_grad[k] = (f.value(&xp)? - f.value(&xm)?) / (2.0 * GRADIENT_FD_STEP);
            }
            worst_grad = worst_grad.max((&fd_grad - &grad).norm() / grad.norm().max(1.0));

            let hess = f.hessian(&x)?;
            let mut fd_hess = DMatrix::zeros(dim, dim);
            for k in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += HESSIAN_FD_STEP;
                xm[k] -= HESSIAN_FD_STEP;
                let col = (f.gradient(&xp)? - f.gradient(&xm)?) / (2.0 * HESSIAN_FD_STEP);
                fd_hess.set_column(k, &col);
            }
            worst_hess = worst_hess.max((&fd_hess - &hess).norm() / hess.norm().max(1.0));
        }
    }

    let mut report = ValidationReport::new();
    report.push(
        CheckResult::from_residual("gradient_finite_difference", worst_grad, GRADIENT_FD_TOL)
            .with_detail(format!(
                "{} locals x {states_per_local} states, central step {GRADIENT_FD_STEP}",
                locals.len()
            )),
    );
    report.push(
        CheckResult::from_residual("hessian_finite_difference", worst_hess, HESSIAN_FD_TOL)
            .with_detail(format!(
                "{} locals x {states_per_local} states, central step {HESSIAN_FD_STEP}",
                locals.len()
            )),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::solve_reference;
    use crate::objectives::{parse_libsvm, partition_uniform};
    use crate::topology::{build_consensus, build_graph, GraphKind};

    fn quad_k5() -> ProblemSpec {
        let graph = build_graph(GraphKind::Complete, 5, 0).unwrap();
        let locals = (0..5)
            .map(|i| {
                LocalObjective::quadratic(1.0, DVector::from_element(1, (i + 1) as f64)).unwrap()
            })
            .collect();
        ProblemSpec::new(locals, 1.0, build_consensus(&graph)).unwrap()
    }

    fn logistic_ring() -> ProblemSpec {
        let text = "\
+1 1:0.5 2:-1.2
-1 1:-0.3 2:0.8
+1 1:1.1 2:0.4
-1 1:-0.9 2:-0.6
+1 1:0.2 2:1.5
-1 1:-1.4 2:0.1
+1 1:0.7 2:-0.2
-1 1:-0.5 2:0.9
+1 1:1.3 2:0.3
-1 1:-0.8 2:-1.1
+1 1:0.4 2:0.6
-1 1:-0.2 2:-0.4
";
        let ds = parse_libsvm(text).unwrap();
        let locals = partition_uniform(&ds, 4, 0, 1.0).unwrap();
        let graph = build_graph(GraphKind::Ring, 4, 0).unwrap();
        ProblemSpec::new(locals, 1.0, build_consensus(&graph)).unwrap()
    }

    #[test]
    fn algebra_suite_passes_on_both_families() {
        for spec in [quad_k5(), logistic_ring()] {
            let states = random_states(spec.stacked_len(), 20, 5.0, 3);
            let report = check_algebra(&spec, &states).unwrap();
            assert!(report.all_passed(), "algebra failures:\n{report}");
            assert_eq!(report.checks.len(), 7);
        }
    }

    #[test]
    fn descent_and_recursion_pass_with_valid_stepsize() {
        let spec = quad_k5();
        let reference = solve_reference(&spec).unwrap();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let eps = 0.9 * 0.4 * 81.0 / 169.0;
        let states = random_states(5, 25, 10.0, 4);
        let descent = check_descent(&spec, &schedule, eps, &reference, &states).unwrap();
        assert!(descent.all_passed(), "descent failures:\n{descent}");
        let recursion = check_recursion(&spec, &schedule, eps, &reference, &states).unwrap();
        assert!(recursion.all_passed(), "recursion failures:\n{recursion}");
    }

    #[test]
    fn oversized_stepsize_marks_theorem_checks_not_applicable() {
        let spec = quad_k5();
        let reference = solve_reference(&spec).unwrap();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let states = random_states(5, 3, 5.0, 5);
        for report in [
            check_descent(&spec, &schedule, 0.9, &reference, &states).unwrap(),
            check_recursion(&spec, &schedule, 0.9, &reference, &states).unwrap(),
            check_envelope(&spec, &schedule, 0.9, &reference, 30, 10).unwrap(),
        ] {
            assert!(report.all_passed());
            for check in &report.checks {
                assert!(
                    check.detail.starts_with("not applicable"),
                    "expected not-applicable marker, got `{}`",
                    check.detail
                );
            }
        }
    }

    #[test]
    fn nonuniform_unscaled_is_not_applicable() {
        let spec = quad_k5();
        let reference = solve_reference(&spec).unwrap();
        let schedule = ActivationSchedule::new(
            vec![0.4, 0.15, 0.15, 0.15, 0.15],
            ActivationMode::Unscaled,
            0,
        )
        .unwrap();
        let states = random_states(5, 2, 5.0, 6);
        let report = check_descent(&spec, &schedule, 0.1, &reference, &states).unwrap();
        assert!(report.all_passed());
        assert!(report.checks[0].detail.contains("no scaled equivalent"));
    }

    #[test]
    fn envelope_holds_on_the_reference_instance() {
        let spec = quad_k5();
        let reference = solve_reference(&spec).unwrap();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 40).unwrap();
        let eps = 0.005;
        let report = check_envelope(&spec, &schedule, eps, &reference, 30, 400).unwrap();
        assert!(report.all_passed(), "envelope failures:\n{report}");
        assert!(!report.checks[0].detail.starts_with("not applicable"));
    }

    #[test]
    fn finite_differences_validate_both_families() {
        for spec in [quad_k5(), logistic_ring()] {
            let report = check_finite_differences(spec.locals(), 5, 7).unwrap();
            assert!(report.all_passed(), "fd failures:\n{report}");
        }
    }

    #[test]
    fn consensus_check_delegates() {
        let graph = build_graph(GraphKind::Ring, 6, 0).unwrap();
        let cm = build_consensus(&graph);
        assert!(check_consensus(&cm).all_passed());
    }
}
