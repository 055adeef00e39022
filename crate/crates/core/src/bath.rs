//! Bath spectral densities, the partial-transformation weighting function and
//! the panel quadrature used for every frequency integral.
//!
//! All frequencies are energies ħω in cm⁻¹. With that convention the Ohmic
//! density reads `π η x exp(−x/x_c)` in cm⁻¹ and the ħ factors of the
//! continuum correlation integrals cancel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional form of the single-site density 𝓙(ω).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DensityFamily {
    /// π η ω e^{−ω/ω_c}
    OhmicExponential,
    /// π η ω³/ω_c² e^{−ω/ω_c}; converges under the full transformation.
    SuperOhmicCubic,
    /// Linear interpolation of (ω, 𝓙) samples, zero outside the table and
    /// pinned to 𝓙(0) = 0.
    Tabulated { samples: Vec<(f64, f64)> },
}

/// Site-resolved spectral density 𝓙_jj'(ω) = c_jj' · 𝓙(ω).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensityModel {
    pub family: DensityFamily,
    /// Dimensionless prefactor η_K.
    pub eta: f64,
    /// Cutoff ω_c in cm⁻¹ (also the frequency scale for tabulated tables).
    pub omega_c: f64,
    /// Symmetric site-correlation matrix c, row-major N×N. Diagonal entries
    /// scale each site's own density; off-diagonal entries correlate baths.
    correlation: Vec<f64>,
    n_sites: usize,
}

impl SpectralDensityModel {
    /// Independent identical baths on `n_sites` sites.
    pub fn independent(family: DensityFamily, eta: f64, omega_c: f64, n_sites: usize) -> Result<Self> {
        let mut correlation = vec![0.0; n_sites * n_sites];
        for j in 0..n_sites {
            correlation[j * n_sites + j] = 1.0;
        }
        Self::with_correlation(family, eta, omega_c, n_sites, correlation)
    }

    pub fn ohmic(eta: f64, omega_c: f64, n_sites: usize) -> Result<Self> {
        Self::independent(DensityFamily::OhmicExponential, eta, omega_c, n_sites)
    }

    pub fn with_correlation(
        family: DensityFamily,
        eta: f64,
        omega_c: f64,
        n_sites: usize,
        correlation: Vec<f64>,
    ) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::config("system.n_sites", "at least one site is required"));
        }
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::config("bath.eta", format!("must be finite and non-negative, got {eta}")));
        }
        if !(omega_c > 0.0) || !omega_c.is_finite() {
            return Err(Error::config("bath.omega_c_cm1", format!("must be positive, got {omega_c}")));
        }
        if correlation.len() != n_sites * n_sites {
            return Err(Error::config("bath.cross", "correlation matrix has the wrong size"));
        }
        if let DensityFamily::Tabulated { samples } = &family {
            if samples.len() < 2 {
                return Err(Error::config("bath.table", "need at least two samples"));
            }
            for w in samples.windows(2) {
                if !(w[1].0 > w[0].0) {
                    return Err(Error::config("bath.table", "frequencies must be strictly increasing"));
                }
            }
            if samples.iter().any(|&(x, v)| x < 0.0 || v < 0.0 || !v.is_finite()) {
                return Err(Error::config("bath.table", "samples must be non-negative"));
            }
        }
        for j in 0..n_sites {
            for k in 0..n_sites {
                let (a, b) = (correlation[j * n_sites + k], correlation[k * n_sites + j]);
                if (a - b).abs() > 1e-14 * (1.0 + a.abs()) {
                    return Err(Error::config("bath.cross", format!("not symmetric at ({}, {})", j + 1, k + 1)));
                }
            }
            if correlation[j * n_sites + j] < 0.0 {
                return Err(Error::config("bath.cross", "diagonal entries must be non-negative"));
            }
        }
        // 𝓙_jj' = π Σ δ(ω−ω_n) ω_n² g_j g_j' is a Gram matrix, so c must be PSD.
        let c = nalgebra::DMatrix::from_row_slice(n_sites, n_sites, &correlation);
        let min_ev = c.symmetric_eigenvalues().min();
        if min_ev < -1e-12 {
            return Err(Error::config(
                "bath.cross",
                format!("site correlation matrix is not positive semidefinite (min eigenvalue {min_ev})"),
            ));
        }
        Ok(Self { family, eta, omega_c, correlation, n_sites })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn correlation(&self, j: usize, k: usize) -> f64 {
        self.correlation[j * self.n_sites + k]
    }

    /// True when all sites carry the same density and no pair is correlated.
    pub fn is_independent_identical(&self) -> bool {
        (0..self.n_sites).all(|j| {
            (0..self.n_sites).all(|k| {
                let c = self.correlation(j, k);
                if j == k {
                    (c - 1.0).abs() < 1e-14
                } else {
                    c == 0.0
                }
            })
        })
    }

    /// Low-frequency power s in 𝓙 ∝ ω^s.
    pub fn low_frequency_exponent(&self) -> f64 {
        match self.family {
            DensityFamily::OhmicExponential => 1.0,
            DensityFamily::SuperOhmicCubic => 3.0,
            // conservative: tables are assumed to start linearly
            DensityFamily::Tabulated { .. } => 1.0,
        }
    }

    /// Upper end of the frequency support, if finite.
    pub fn support_end(&self) -> Option<f64> {
        match &self.family {
            DensityFamily::Tabulated { samples } => samples.last().map(|s| s.0),
            _ => None,
        }
    }

    /// Single-site profile 𝓙(ω) (cm⁻¹).
    pub fn profile(&self, x: f64) -> f64 {
        let oc = self.omega_c;
        match &self.family {
            DensityFamily::OhmicExponential => PI * self.eta * x * (-x / oc).exp(),
            DensityFamily::SuperOhmicCubic => PI * self.eta * x * x * x / (oc * oc) * (-x / oc).exp(),
            DensityFamily::Tabulated { samples } => self.eta * interpolate(samples, x),
        }
    }

    /// 𝓙_jj'(ω).
    pub fn density(&self, j: usize, jp: usize, x: f64) -> Result<f64> {
        self.check_site(j)?;
        self.check_site(jp)?;
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("spectral density needs ω ≥ 0, got {x}")));
        }
        let c = self.correlation(j, jp);
        if c == 0.0 {
            return Ok(0.0);
        }
        Ok(c * self.profile(x))
    }

    /// 𝓙⁽¹⁾_{j,j'k'} = 𝓙_jj' − 𝓙_jk'.
    pub fn aux_density_1(&self, j: usize, jp: usize, kp: usize, x: f64) -> Result<f64> {
        Ok(self.density(j, jp, x)? - self.density(j, kp, x)?)
    }

    /// 𝓙⁽²⁾_{jk,j'k'} = 𝓙_jj' + 𝓙_kk' − 𝓙_jk' − 𝓙_kj'.
    pub fn aux_density_2(&self, j: usize, k: usize, jp: usize, kp: usize, x: f64) -> Result<f64> {
        Ok(self.density(j, jp, x)? + self.density(k, kp, x)? - self.density(j, kp, x)? - self.density(k, jp, x)?)
    }

    fn check_site(&self, j: usize) -> Result<()> {
        if j >= self.n_sites {
            return Err(Error::Domain(format!("site index {} out of range 1..={}", j + 1, self.n_sites)));
        }
        Ok(())
    }
}

fn interpolate(samples: &[(f64, f64)], x: f64) -> f64 {
    let last = samples[samples.len() - 1];
    if x > last.0 {
        return 0.0;
    }
    let first = samples[0];
    if x <= first.0 {
        return if first.0 > 0.0 { first.1 * x / first.0 } else { first.1 };
    }
    let i = samples.partition_point(|s| s.0 < x);
    let (x0, y0) = samples[i - 1];
    let (x1, y1) = samples[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Weighting W_h(ω) that selects which modes are polaron transformed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightingFunction {
    /// Full transformation.
    Unity,
    /// No transformation.
    Zero,
    /// 0 below ω_h, 1 at and above.
    Step { omega_h: f64 },
    /// 1 − exp(−(ω/ω_h)^α).
    Smooth { omega_h: f64, alpha: f64 },
}

impl WeightingFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightingFunction::Unity | WeightingFunction::Zero => Ok(()),
            WeightingFunction::Step { omega_h } => check_omega_h(omega_h),
            WeightingFunction::Smooth { omega_h, alpha } => {
                check_omega_h(omega_h)?;
                if !(alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::config("weighting.alpha", format!("must be positive, got {alpha}")));
                }
                Ok(())
            }
        }
    }

    /// Rejects smooth weightings whose low-frequency power is too small for
    /// the density unless explicitly allowed.
    pub fn ensure_supported(&self, density: &SpectralDensityModel, allow_divergent_alpha: bool) -> Result<()> {
        self.validate()?;
        if let WeightingFunction::Smooth { alpha, .. } = *self {
            if alpha <= 1.0 && density.low_frequency_exponent() <= 1.0 && !allow_divergent_alpha {
                return Err(Error::config(
                    "weighting.alpha",
                    format!("alpha = {alpha} <= 1 with an Ohmic-type density leads to divergent dynamics; pass --allow-divergent-alpha to run anyway"),
                ));
            }
        }
        Ok(())
    }

    /// W_h(ω) and 1 − W_h(ω), each computed without cancellation.
    #[inline]
    pub fn weight_pair(&self, x: f64) -> (f64, f64) {
        match *self {
            WeightingFunction::Unity => (1.0, 0.0),
            WeightingFunction::Zero => (0.0, 1.0),
            WeightingFunction::Step { omega_h } => {
                if x < omega_h {
                    (0.0, 1.0)
                } else {
                    (1.0, 0.0)
                }
            }
            WeightingFunction::Smooth { omega_h, alpha } => {
                let u = (x / omega_h).powf(alpha);
                (-(-u).exp_m1(), (-u).exp())
            }
        }
    }

    /// W_h(ω) ∈ [0, 1].
    pub fn weight(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("weighting needs ω ≥ 0, got {x}")));
        }
        self.validate()?;
        Ok(self.weight_pair(x).0)
    }

    pub fn omega_h(&self) -> Option<f64> {
        match *self {
            WeightingFunction::Step { omega_h } | WeightingFunction::Smooth { omega_h, .. } => Some(omega_h),
            _ => None,
        }
    }

    /// True when W(1 − W) vanishes for every ω, which closes the
    /// 𝓜/h channels.
    pub fn is_binary(&self) -> bool {
        !matches!(self, WeightingFunction::Smooth { .. })
    }
}

fn check_omega_h(omega_h: f64) -> Result<()> {
    if !(omega_h > 0.0) || !omega_h.is_finite() {
        return Err(Error::config("weighting.omega_h_cm1", format!("must be positive, got {omega_h}")));
    }
    Ok(())
}

/// Gauss-Legendre nodes and weights on [−1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Panel layout parameters for frequency integrals over [0, ω_max].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureScheme {
    /// Gauss-Legendre nodes per panel.
    pub nodes_per_panel: usize,
    /// ω_max as a multiple of ω_c.
    pub omega_max_factor: f64,
    /// Number of geometrically shrinking panels towards ω = 0.
    pub refinement_levels: usize,
    /// Largest phase (t_max·Δω/ħ, radians) allowed across one panel.
    pub max_panel_phase: f64,
    /// Upper bound on panel width as a fraction of ω_c.
    pub max_panel_width_factor: f64,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self {
            nodes_per_panel: 16,
            omega_max_factor: 50.0,
            refinement_levels: 30,
            max_panel_phase: 8.0,
            max_panel_width_factor: 0.25,
        }
    }
}

impl QuadratureScheme {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_panel < 2 {
            return Err(Error::config("quadrature.nodes_per_panel", "must be at least 2"));
        }
        if !(self.omega_max_factor > 1.0) {
            return Err(Error::config("quadrature.omega_max_factor", "must exceed 1"));
        }
        if self.refinement_levels < 4 {
            return Err(Error::config("quadrature.refinement_levels", "must be at least 4"));
        }
        if !(self.max_panel_phase > 0.0) || !(self.max_panel_width_factor > 0.0) {
            return Err(Error::config("quadrature", "panel limits must be positive"));
        }
        Ok(())
    }

    /// Same layout with twice the nodes per panel.
    pub fn refined(&self) -> Self {
        Self { nodes_per_panel: 2 * self.nodes_per_panel, ..*self }
    }

    /// Same node count with every uniform panel halved.
    pub fn halved_panels(&self) -> Self {
        Self {
            max_panel_phase: 0.5 * self.max_panel_phase,
            max_panel_width_factor: 0.5 * self.max_panel_width_factor,
            ..*self
        }
    }

    /// Builds the node set for a density and weighting. `t_max_fs` bounds
    /// the oscillation phase across each panel.
    pub fn grid(
        &self,
        density: &SpectralDensityModel,
        weighting: &WeightingFunction,
        t_max_fs: f64,
    ) -> Result<QuadratureGrid> {
        self.validate()?;
        let scale = density.omega_c;
        let mut omega_max = self.omega_max_factor * scale;
        if let Some(end) = density.support_end() {
            omega_max = omega_max.min(end);
        }
        let mut inner = 0.25 * scale;
        if let Some(h) = weighting.omega_h() {
            inner = inner.min(0.25 * h);
        }
        inner = inner.min(0.5 * omega_max);

        let mut width = self.max_panel_width_factor * scale;
        if t_max_fs > 0.0 {
            width = width.min(self.max_panel_phase * crate::units::HBAR_CM_FS / t_max_fs);
        }

        let mut breaks = vec![inner];
        if let Some(h) = weighting.omega_h() {
            if h > inner && h < omega_max {
                breaks.push(h);
            }
        }
        if let DensityFamily::Tabulated { samples } = &density.family {
            breaks.extend(samples.iter().map(|s| s.0).filter(|&x| x > inner && x < omega_max));
        }
        breaks.push(omega_max);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);

        let (gx, gw) = gauss_legendre(self.nodes_per_panel);
        let mut grid = QuadratureGrid::default();

        // geometric panels [inner/2^{k+1}, inner/2^k], outermost first
        let mut hi = inner;
        for _ in 0..self.refinement_levels {
            let lo = 0.5 * hi;
            let start = grid.nodes.len();
            grid.push_panel(lo, hi, &gx, &gw);
            grid.geometric.push(start..grid.nodes.len());
            hi = lo;
        }
        let start = grid.nodes.len();
        grid.push_panel(0.0, hi, &gx, &gw);
        grid.origin = start..grid.nodes.len();

        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let n = ((b - a) / width).ceil().max(1.0) as usize;
            let step = (b - a) / n as f64;
            for i in 0..n {
                let lo = a + i as f64 * step;
                let up = if i + 1 == n { b } else { lo + step };
                grid.push_panel(lo, up, &gx, &gw);
            }
        }
        grid.omega_max = omega_max;
        Ok(grid)
    }
}

/// Concrete quadrature nodes over [0, ω_max].
#[derive(Debug, Clone, Default)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Node ranges of the geometric panels, outermost first.
    geometric: Vec<std::ops::Range<usize>>,
    /// Node range of the panel touching ω = 0.
    origin: std::ops::Range<usize>,
    pub omega_max: f64,
}

impl QuadratureGrid {
    fn push_panel(&mut self, a: f64, b: f64, gx: &[f64], gw: &[f64]) {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, w) in gx.iter().zip(gw) {
            self.nodes.push(mid + half * x);
            self.weights.push(half * w);
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫₀^{ω_max} f(ω) dω. `name` labels a divergence error.
    pub fn integrate(&self, name: &str, f: impl Fn(f64) -> f64) -> Result<f64> {
        let values: Vec<f64> = self.nodes.iter().map(|&x| f(x)).collect();
        self.integrate_values(name, &values)
    }

    /// Same as [`integrate`](Self::integrate) for integrand values already
    /// sampled at `self.nodes`.
    pub fn integrate_values(&self, name: &str, values: &[f64]) -> Result<f64> {
        assert_eq!(values.len(), self.nodes.len(), "one value per node");
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DivergentIntegral {
                integral: name.to_string(),
                diagnostic: format!("integrand is not finite at ω = {:e} cm^-1", self.nodes[i]),
            });
        }
        let panel_sum = |r: &std::ops::Range<usize>| -> f64 {
            r.clone().map(|i| values[i] * self.weights[i]).sum()
        };
        let total: f64 = values.iter().zip(&self.weights).map(|(v, w)| v * w).sum();
        let n = self.geometric.len();
        if n >= 2 {
            let last = panel_sum(&self.geometric[n - 1]);
            let prev = panel_sum(&self.geometric[n - 2]);
            let scale = total.abs().max(f64::MIN_POSITIVE);
            if last.abs() >= 0.9 * prev.abs() && last.abs() > 1e-12 * scale && last != 0.0 {
                return Err(Error::DivergentIntegral {
                    integral: name.to_string(),
                    diagnostic: format!(
                        "panel contributions grow towards ω → 0 (ratio {:.3} between the two innermost panels)",
                        last.abs() / prev.abs().max(f64::MIN_POSITIVE)
                    ),
                });
            }
        }
        Ok(total)
    }

    /// Sum without divergence checks, for integrands already known to converge.
    pub fn sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, w)| f(x) * w).sum()
    }

    pub fn origin_panel(&self) -> std::ops::Range<usize> {
        self.origin.clone()
    }
}
