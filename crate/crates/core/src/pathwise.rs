//! Forward integrals, pathwise quadratic variation and an Itô-formula check.

use crate::error::{Error, Result};
use crate::fbm::SamplePath;

/// Left-point Riemann sum together with its final summand, which is the
/// term that an improper limit at the horizon would have to control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardIntegral {
    pub value: f64,
    pub last_term: f64,
}

/// `Σ_{i < up_to} Y_{t_i} (X_{t_{i+1}} − X_{t_i})`.
pub fn forward_integral(
    integrand: &[f64],
    integrator: &SamplePath,
    up_to: usize,
) -> Result<ForwardIntegral> {
    let x = integrator.values();
    if integrand.len() != x.len() && integrand.len() + 1 != x.len() {
        return Err(Error::Usage(format!(
            "integrand has {} values for an integrator of {} points",
            integrand.len(),
            x.len()
        )));
    }
    if up_to >= x.len() {
        return Err(Error::Usage(format!(
            "cutoff index {up_to} beyond last grid index {}",
            x.len() - 1
        )));
    }
    let mut value = 0.0;
    let mut last_term = 0.0;
    for i in 0..up_to {
        last_term = integrand[i] * (x[i + 1] - x[i]);
        value += last_term;
    }
    Ok(ForwardIntegral { value, last_term })
}

/// Running forward integral at every grid point (starts at 0).
pub fn running_forward_integral(integrand: &[f64], integrator: &SamplePath) -> Result<Vec<f64>> {
    let x = integrator.values();
    if integrand.len() + 1 < x.len() {
        return Err(Error::Usage("integrand shorter than the integrator grid".into()));
    }
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(acc);
    for i in 0..x.len() - 1 {
        acc += integrand[i] * (x[i + 1] - x[i]);
        out.push(acc);
    }
    Ok(out)
}

/// One fine dyadic realization viewed at coarser levels by subsampling.
#[derive(Debug, Clone)]
pub struct DyadicRefinement {
    base: SamplePath,
    level: u32,
}

impl DyadicRefinement {
    pub fn new(base: SamplePath) -> Result<Self> {
        let level = base
            .grid()
            .dyadic_level()
            .ok_or_else(|| Error::Usage("dyadic refinement needs a dyadic path".into()))?;
        Ok(Self { base, level })
    }

    pub fn stored_level(&self) -> u32 {
        self.level
    }

    pub fn base(&self) -> &SamplePath {
        &self.base
    }

    pub fn at(&self, level: u32) -> Result<SamplePath> {
        self.base.subsample(level)
    }
}

/// Running sums of squared increments along the level-`level` dyadic
/// partition, one value per coarse time.
pub fn quadratic_variation(path: &SamplePath, level: u32) -> Result<Vec<f64>> {
    Ok(realized_qv(&path.subsample(level)?))
}

/// Running sums of squared increments on the path's own grid.
pub fn realized_qv(path: &SamplePath) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.values().len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in path.values().windows(2) {
        acc += (w[1] - w[0]) * (w[1] - w[0]);
        out.push(acc);
    }
    out
}

/// Trapezoid rule for `∫ g(t, x_t) dt` along a path.
pub fn trapezoid<F: Fn(f64, f64) -> f64>(path: &SamplePath, g: F) -> f64 {
    let t = path.times();
    let x = path.values();
    (0..t.len() - 1)
        .map(|i| 0.5 * (t[i + 1] - t[i]) * (g(t[i], x[i]) + g(t[i + 1], x[i + 1])))
        .sum()
}

/// A function of time and space with the derivatives used by the Itô
/// formula. Unimplemented derivatives fall back to central differences.
pub trait ItoFunction {
    fn value(&self, t: f64, x: f64) -> f64;

    fn dt(&self, t: f64, x: f64) -> f64 {
        let h = 1e-6 * t.abs().max(1.0);
        (self.value(t + h, x) - self.value(t - h, x)) / (2.0 * h)
    }

    fn dx(&self, t: f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (self.value(t, x + h) - self.value(t, x - h)) / (2.0 * h)
    }

    fn dxx(&self, t: f64, x: f64) -> f64 {
        let h = 1e-4 * x.abs().max(1.0);
        (self.value(t, x + h) - 2.0 * self.value(t, x) + self.value(t, x - h)) / (h * h)
    }
}

/// Wraps a plain closure so that every derivative uses finite differences.
pub struct FiniteDifference<F>(pub F);

impl<F: Fn(f64, f64) -> f64> ItoFunction for FiniteDifference<F> {
    fn value(&self, t: f64, x: f64) -> f64 {
        (self.0)(t, x)
    }
}

/// Where the bracket `⟨X⟩` in the Itô correction comes from.
pub enum QvSource<'a> {
    /// Squared increments of the path at the evaluation level.
    Pathwise,
    /// The path is known to have zero quadratic variation.
    Zero,
    /// A known deterministic bracket `t ↦ ⟨X⟩_t`.
    Given(&'a dyn Fn(f64) -> f64),
}

/// `|f(T,X_T) − f(0,X_0) − Σ f_t Δt − Σ f_x ΔX − ½ Σ f_xx Δ⟨X⟩|` along the
/// level-`level` dyadic partition.
pub fn ito_residual(
    f: &dyn ItoFunction,
    path: &SamplePath,
    level: u32,
    qv: QvSource<'_>,
) -> Result<f64> {
    let p = path.subsample(level)?;
    let t = p.times();
    let x = p.values();
    let n = t.len() - 1;
    let mut sum = 0.0;
    for i in 0..n {
        let dt = t[i + 1] - t[i];
        let dx = x[i + 1] - x[i];
        let dq = match &qv {
            QvSource::Pathwise => dx * dx,
            QvSource::Zero => 0.0,
            QvSource::Given(g) => g(t[i + 1]) - g(t[i]),
        };
        sum += f.dt(t[i], x[i]) * dt + f.dx(t[i], x[i]) * dx + 0.5 * f.dxx(t[i], x[i]) * dq;
    }
    Ok((f.value(t[n], x[n]) - f.value(t[0], x[0]) - sum).abs())
}
