//! Finite-difference gradient checking.

/// Outcome of comparing one analytic partial derivative with its central
/// difference estimate.
#[derive(Clone, Debug)]
pub struct Probe {
    pub label: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// Passes when either the absolute or the relative error is within
    /// tolerance. The relative error is taken against the larger magnitude.
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        let diff = (self.analytic - self.numeric).abs();
        if !diff.is_finite() {
            return false;
        }
        let scale = self.analytic.abs().max(self.numeric.abs());
        diff <= abs_tol || diff <= rel_tol * scale
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`, restoring `x[i]` afterwards.
pub fn central_difference(
    x: &mut [f64],
    index: usize,
    step: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let orig = x[index];
    x[index] = orig + step;
    let plus = f(x);
    x[index] = orig - step;
    let minus = f(x);
    x[index] = orig;
    (plus - minus) / (2.0 * step)
}

/// Summary over many probes.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub probes: Vec<Probe>,
}

impl Report {
    pub fn failures(&self, rel_tol: f64, abs_tol: f64) -> Vec<&Probe> {
        self.probes
            .iter()
            .filter(|p| !p.passes(rel_tol, abs_tol))
            .collect()
    }

    pub fn all_pass(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.failures(rel_tol, abs_tol).is_empty()
    }
}
