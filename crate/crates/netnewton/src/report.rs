use std::fmt;

/// Outcome of a single named check with its measured residual.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured violation magnitude (0 for exact passes).
    pub residual: f64,
    /// Tolerance the residual was compared against.
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn new(
        name: impl Into<String>,
        passed: bool,
        residual: f64,
        tolerance: f64,
        detail: impl Into<String>,
    ) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            residual,
            tolerance,
            detail: detail.into(),
        }
    }

    /// Check that passes iff `residual <= tolerance`.
    pub fn from_residual(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        // NaN residuals must fail, so compare negated.
        let passed = !(residual > tolerance) && residual.is_finite();
        CheckResult::new(name, passed, residual, tolerance, String::new())
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {name} residual={residual:.3e} tol={tol:.3e}",
            name = self.name,
            residual = self.residual,
            tol = self.tolerance,
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// A list of check outcomes, printable one line per check.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn new() -> Self {
        ValidationReport { checks: Vec::new() }
    }

    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(f, "{check}")?;
        }
        Ok(())
    }
}
