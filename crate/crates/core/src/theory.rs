//! Convergence-condition constants and learning-rate prescriptions.
//!
//! Pure arithmetic over the run parameters `(n, M, L, T, rho, sigma^2,
//! varsigma^2, gamma, K)`: the derived mixing constant `bar_rho`, the three
//! validity constants `C1 > 0`, `C2 >= 0`, `C3 <= 1`, the prescribed step
//! size, the minimum iteration budget, and the bound on the running average
//! of `||grad f(mean model)||^2`.
//!
//! The minimum-iteration expression mixes terms of very different magnitude;
//! its fourth term is evaluated through the bracket
//! `B = 1/(1-rho) + 2 sqrt(rho)/(1-sqrt(rho))^2` (equal to
//! `bar_rho * n/(n-1)`) so that the single-worker case stays finite.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("rho = {0} outside [0, 1)")]
    RhoOutOfRange(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("constants invalid: {0}")]
    InvalidConstants(String),
    #[error("noise term sigma^2 + 6 M varsigma^2 is zero; minimum iteration bound not applicable")]
    ZeroNoise,
}

/// Inputs to the convergence checker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryInputs {
    /// Worker count n.
    pub workers: usize,
    /// Batch size M.
    pub batch_size: usize,
    /// Gradient Lipschitz constant L.
    pub lipschitz: f64,
    /// Staleness cap T.
    pub staleness_cap: u32,
    /// Spectral gap of E[W'W].
    pub rho: f64,
    /// Within-worker gradient variance sigma^2.
    pub sigma_sq: f64,
    /// Across-worker gradient variance varsigma^2.
    pub varsigma_sq: f64,
    /// Step size gamma.
    pub gamma: f64,
    /// Iteration budget K.
    pub iterations: u64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<(), TheoryError> {
        if self.workers == 0 || self.batch_size == 0 || self.iterations == 0 {
            return Err(TheoryError::InvalidInput(
                "n, M, K must all be at least 1".into(),
            ));
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(TheoryError::RhoOutOfRange(self.rho));
        }
        for (name, v) in [
            ("L", self.lipschitz),
            ("sigma_sq", self.sigma_sq),
            ("varsigma_sq", self.varsigma_sq),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(TheoryError::InvalidInput(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// `sigma^2 + 6 M varsigma^2`, the noise term of the corollary.
    pub fn noise_term(&self) -> f64 {
        self.sigma_sq + 6.0 * self.batch_size as f64 * self.varsigma_sq
    }
}

/// `bar_rho = (n-1)/n * (1/(1-rho) + 2 sqrt(rho)/(1-sqrt(rho))^2)`.
pub fn bar_rho(rho: f64, n: usize) -> Result<f64, TheoryError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(TheoryError::RhoOutOfRange(rho));
    }
    if n == 0 {
        return Err(TheoryError::InvalidInput("n = 0".into()));
    }
    Ok((n as f64 - 1.0) / n as f64 * mixing_bracket(rho))
}

/// `1/(1-rho) + 2 sqrt(rho)/(1-sqrt(rho))^2`, i.e. `bar_rho * n/(n-1)`.
fn mixing_bracket(rho: f64) -> f64 {
    let sq = rho.sqrt();
    1.0 / (1.0 - rho) + 2.0 * sq / ((1.0 - sq) * (1.0 - sq))
}

/// The three validity constants of the convergence theorem.
pub fn constants(inputs: &TheoryInputs) -> Result<(f64, f64, f64), TheoryError> {
    inputs.validate()?;
    let n = inputs.workers as f64;
    let m = inputs.batch_size as f64;
    let l = inputs.lipschitz;
    let t = inputs.staleness_cap as f64;
    let g = inputs.gamma;
    let br = bar_rho(inputs.rho, inputs.workers)?;

    let mix = t * (n - 1.0) / n + br;
    let c1 = 1.0 - 24.0 * m * m * l * l * g * g * mix;
    if c1 <= 0.0 {
        return Err(TheoryError::InvalidConstants(format!(
            "C1 = {c1} <= 0: step size {g} too large for mixing term {mix}"
        )));
    }

    let c2 = g * m / (2.0 * n)
        - g * g * l * m * m / (n * n)
        - 2.0 * m.powi(3) * l * l * t * t * g.powi(3) / n.powi(3)
        - (6.0 * g * g * l.powi(3) * m * m / (n * n)
            + g * m / n * l * l
            + 12.0 * m.powi(3) * l.powi(4) * t * t * g.powi(3) / n.powi(3))
            * 4.0
            * m
            * m
            * g
            * g
            * mix
            / c1;

    let c3 = 0.5
        + 2.0 / c1
            * (6.0 * g * g * l * l * m * m
                + g * n * m * l
                + 12.0 * m.powi(3) * l.powi(3) * t * t * g.powi(3) / n)
            * br
        + l * t * t * g * m / n;

    Ok((c1, c2, c3))
}

/// Prescribed step size `gamma = n / (10 M L + sqrt(sigma^2 + 6 M varsigma^2) sqrt(K M))`.
///
/// `iterations` is a real so that budgets from [`min_iterations`] (which can
/// exceed integer range on badly mixing topologies) can be fed back in.
pub fn corollary_gamma(
    n: usize,
    m: usize,
    lipschitz: f64,
    sigma_sq: f64,
    varsigma_sq: f64,
    iterations: f64,
) -> f64 {
    let noise = sigma_sq + 6.0 * m as f64 * varsigma_sq;
    n as f64 / (10.0 * m as f64 * lipschitz + noise.sqrt() * (iterations * m as f64).sqrt())
}

/// Minimum iteration budget for the prescribed step size to be valid: the max
/// of four bracketed terms scaled by `M L^2 n^2 / (sigma^2 + 6 M varsigma^2)`.
pub fn min_iterations(inputs: &TheoryInputs) -> Result<f64, TheoryError> {
    inputs.validate()?;
    let noise = inputs.noise_term();
    if noise <= 0.0 {
        return Err(TheoryError::ZeroNoise);
    }
    let n = inputs.workers as f64;
    let m = inputs.batch_size as f64;
    let l = inputs.lipschitz;
    let t = inputs.staleness_cap as f64;
    let br = bar_rho(inputs.rho, inputs.workers)?;
    let bracket = mixing_bracket(inputs.rho);

    let term1 = 192.0 * (t * (n - 1.0) / n + br);
    let term2 = 64.0 * t.powi(4) / (n * n);
    let term3 = 1024.0 * n * n * br * br;
    let term4 = {
        let a = 8.0 * 6.0_f64.sqrt() * t.powf(2.0 / 3.0) + 8.0;
        a * a * (t + bracket).powf(2.0 / 3.0) * (n - 1.0).sqrt() / n.powf(1.0 / 6.0)
    };
    let max_term = term1.max(term2).max(term3).max(term4);
    Ok(m * l * l * n * n / noise * max_term)
}

/// Theorem right-hand side `2 (f0 - f*) n / (gamma K M) + 2 gamma L (sigma^2 + 6 M varsigma^2) / n`.
///
/// Refuses when the validity constants do not hold; use [`bound_rhs`] for the
/// raw value regardless of validity.
pub fn theorem_bound(inputs: &TheoryInputs, f0_minus_fstar: f64) -> Result<f64, TheoryError> {
    let (c1, c2, c3) = constants(inputs)?;
    if c2 < 0.0 || c3 > 1.0 {
        return Err(TheoryError::InvalidConstants(format!(
            "C1 = {c1}, C2 = {c2}, C3 = {c3}: need C1 > 0, C2 >= 0, C3 <= 1"
        )));
    }
    Ok(bound_rhs(inputs, f0_minus_fstar))
}

/// Raw theorem right-hand side, evaluated without the validity gate.
pub fn bound_rhs(inputs: &TheoryInputs, f0_minus_fstar: f64) -> f64 {
    let n = inputs.workers as f64;
    let m = inputs.batch_size as f64;
    let k = inputs.iterations as f64;
    2.0 * f0_minus_fstar * n / (inputs.gamma * k * m)
        + 2.0 * inputs.gamma * inputs.lipschitz * inputs.noise_term() / n
}

/// Full validity report for a run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub inputs: TheoryInputs,
    pub bar_rho: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub gamma_corollary: f64,
    /// Minimum iterations for corollary validity; `None` when noiseless.
    pub k_min: Option<f64>,
    pub valid: bool,
    /// Theorem right-hand side at the given K (evaluated unconditionally;
    /// meaningful as a guarantee only when `valid`).
    pub bound_rhs: f64,
}

impl TheoryReport {
    pub fn evaluate(inputs: &TheoryInputs, f0_minus_fstar: f64) -> Result<Self, TheoryError> {
        inputs.validate()?;
        let br = bar_rho(inputs.rho, inputs.workers)?;
        let (c1, c2, c3) = match constants(inputs) {
            Ok(c) => c,
            Err(TheoryError::InvalidConstants(_)) => {
                // C1 <= 0; reconstruct it for the report, C2/C3 are undefined.
                let n = inputs.workers as f64;
                let m = inputs.batch_size as f64;
                let mix = inputs.staleness_cap as f64 * (n - 1.0) / n + br;
                let c1 = 1.0
                    - 24.0
                        * m
                        * m
                        * inputs.lipschitz
                        * inputs.lipschitz
                        * inputs.gamma
                        * inputs.gamma
                        * mix;
                (c1, f64::NAN, f64::NAN)
            }
            Err(e) => return Err(e),
        };
        let valid = c1 > 0.0 && c2 >= 0.0 && c3 <= 1.0;
        let gamma_corollary = corollary_gamma(
            inputs.workers,
            inputs.batch_size,
            inputs.lipschitz,
            inputs.sigma_sq,
            inputs.varsigma_sq,
            inputs.iterations as f64,
        );
        let k_min = match min_iterations(inputs) {
            Ok(k) => Some(k),
            Err(TheoryError::ZeroNoise) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            inputs: *inputs,
            bar_rho: br,
            c1,
            c2,
            c3,
            gamma_corollary,
            k_min,
            valid,
            bound_rhs: bound_rhs(inputs, f0_minus_fstar),
        })
    }

    /// Aligned one-value-per-line rendering for the CLI.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let i = &self.inputs;
        let mut push = |k: &str, v: String| {
            s.push_str(&format!("{k:<18} {v}\n"));
        };
        push("workers (n)", i.workers.to_string());
        push("batch size (M)", i.batch_size.to_string());
        push("lipschitz (L)", format!("{:.6e}", i.lipschitz));
        push("staleness cap (T)", i.staleness_cap.to_string());
        push("rho", format!("{:.6e}", i.rho));
        push("sigma^2", format!("{:.6e}", i.sigma_sq));
        push("varsigma^2", format!("{:.6e}", i.varsigma_sq));
        push("gamma", format!("{:.6e}", i.gamma));
        push("iterations (K)", i.iterations.to_string());
        push("bar_rho", format!("{:.6e}", self.bar_rho));
        push("C1", format!("{:.6e}", self.c1));
        push("C2", format!("{:.6e}", self.c2));
        push("C3", format!("{:.6e}", self.c3));
        push("gamma (corollary)", format!("{:.6e}", self.gamma_corollary));
        push(
            "K_min",
            match self.k_min {
                Some(k) => format!("{k:.6e}"),
                None => "n/a (noiseless)".to_string(),
            },
        );
        push("bound RHS", format!("{:.6e}", self.bound_rhs));
        push("valid", self.valid.to_string());
        s
    }
}
