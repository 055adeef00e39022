//! Independent reference implementations used to validate the engine:
//! finite-mode baths, direct correlation sums, a truncated Fock-space bath
//! with exact bath traces and exact dynamics, and a conventional
//! second-order tensor built in operator form.
//!
//! Nothing here reuses the coefficient tables or kernel recipes of the
//! engine; only the frame (U, energies) and the basic types are shared.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::bath::{gauss_legendre, SpectralDensityModel, WeightingFunction};
use crate::correlations::{CorrelationSource, SpectralMeasure};
use crate::error::{Error, Result};
use crate::polaron::{CMatrix, PolaronFrame, SiteHamiltonian};
use crate::relaxation::RelaxationTensor;
use crate::units::{coth_unchecked, HBAR_CM_FS};

/// Default upper bound on the exact-dynamics Hilbert space dimension.
pub const DEFAULT_DIMENSION_BOUND: usize = 512;

type Pair = (usize, usize);

fn czero() -> C64 {
    C64::new(0.0, 0.0)
}

/// A finite set of harmonic modes. `couplings` is mode-major, g[n·N + j],
/// dimensionless displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBath {
    pub frequencies: Vec<f64>,
    pub couplings: Vec<f64>,
    pub n_sites: usize,
}

impl DiscreteBath {
    pub fn new(frequencies: Vec<f64>, couplings: Vec<f64>, n_sites: usize) -> Result<Self> {
        if couplings.len() != frequencies.len() * n_sites {
            return Err(Error::Model("one coupling per mode and site is required".into()));
        }
        if frequencies.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Model("mode frequencies must be positive".into()));
        }
        Ok(Self { frequencies, couplings, n_sites })
    }

    pub fn n_modes(&self) -> usize {
        self.frequencies.len()
    }

    pub fn g(&self, n: usize, j: usize) -> f64 {
        self.couplings[n * self.n_sites + j]
    }

    /// Engine-side measure of the same modes.
    pub fn measure(&self, weighting: &WeightingFunction, beta: f64) -> Result<SpectralMeasure> {
        SpectralMeasure::discrete(&self.frequencies, &self.couplings, self.n_sites, weighting, beta)
    }

    /// Σ_n x_n g_nj g_nk, equal to (1/π)∫ 𝓙_jk/ω for a faithful discretization.
    pub fn first_moment(&self, j: usize, k: usize) -> f64 {
        (0..self.n_modes()).map(|n| self.frequencies[n] * self.g(n, j) * self.g(n, k)).sum()
    }
}

/// Low-frequency power of W_h.
fn weighting_exponent(weighting: &WeightingFunction) -> Option<f64> {
    match *weighting {
        WeightingFunction::Unity => Some(0.0),
        WeightingFunction::Smooth { alpha, .. } => Some(alpha),
        WeightingFunction::Zero | WeightingFunction::Step { .. } => None,
    }
}

/// Splits [0, 10 ω_c] into `n_bins` equal bins plus one tail bin up to
/// 50 ω_c (or the support end of a tabulated density). Each bin becomes one
/// mode per nonzero eigenvalue of the site-correlation matrix, placed at
/// the 𝓙/ω centroid so that ∫𝓙/ω and ∫𝓙 are reproduced bin by bin. A step
/// breakpoint inside a bin splits it.
pub fn discretize(density: &SpectralDensityModel, weighting: &WeightingFunction, n_bins: usize) -> Result<DiscreteBath> {
    weighting.validate()?;
    if n_bins == 0 {
        return Err(Error::config("oracle.n_modes", "must be at least 1"));
    }
    if let Some(p) = weighting_exponent(weighting) {
        let s = density.low_frequency_exponent();
        if s + 2.0 * p <= 1.0 {
            return Err(Error::DivergentIntegral {
                integral: "∫ 𝓙 W²/ω²".into(),
                diagnostic: format!("integrand ~ ω^{} at ω → 0", s + 2.0 * p - 2.0),
            });
        }
    }
    let oc = density.omega_c;
    let (body_end, tail_end) = match density.support_end() {
        Some(e) => (e.min(10.0 * oc), e.min(50.0 * oc)),
        None => (10.0 * oc, 50.0 * oc),
    };
    let width = body_end / n_bins as f64;
    let mut edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 * width).collect();
    if let WeightingFunction::Step { omega_h } = *weighting {
        if omega_h > 0.0 && omega_h < body_end && edges.iter().all(|e| (e - omega_h).abs() > 1e-9 * oc) {
            edges.push(omega_h);
            edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
    }
    if tail_end > body_end * (1.0 + 1e-12) {
        edges.push(tail_end);
    }

    let (gx, gw) = gauss_legendre(24);
    let integrate = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        let panels = (((b - a) / (0.05 * oc)).ceil() as usize).max(1);
        let step = (b - a) / panels as f64;
        let mut s = 0.0;
        for p in 0..panels {
            let (lo, hi) = (a + p as f64 * step, a + (p + 1) as f64 * step);
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            s += gx.iter().zip(&gw).map(|(x, w)| w * half * f(mid + half * x)).sum::<f64>();
        }
        s
    };

    let n = density.n_sites();
    let c = DMatrix::from_fn(n, n, |j, k| density.correlation(j, k));
    let eig = SymmetricEigen::new(c);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let components: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-14 * scale).collect();

    let mut frequencies = Vec::new();
    let mut couplings = Vec::new();
    for e in edges.windows(2) {
        let m0 = integrate(e[0], e[1], &|x| density.profile(x) / x);
        let m1 = integrate(e[0], e[1], &|x| density.profile(x));
        if !(m0 > 0.0) || !(m1 > 0.0) {
            continue;
        }
        let x = m1 / m0;
        let g2 = m0 / (PI * x);
        for &i in &components {
            frequencies.push(x);
            let amp = (g2 * eig.eigenvalues[i]).sqrt();
            couplings.extend((0..n).map(|j| amp * eig.eigenvectors[(j, i)]));
        }
    }
    DiscreteBath::new(frequencies, couplings, n)
}

/// Correlation functions of a [`DiscreteBath`] as direct mode sums at
/// arbitrary times.
#[derive(Debug, Clone)]
pub struct DiscreteCorrelations {
    bath: DiscreteBath,
    weight: Vec<f64>,
    complement: Vec<f64>,
    coth: Vec<f64>,
}

impl DiscreteCorrelations {
    pub fn new(bath: &DiscreteBath, weighting: &WeightingFunction, beta: f64) -> Result<Self> {
        weighting.validate()?;
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("inverse temperature must be positive, got {beta}")));
        }
        let mut weight = Vec::new();
        let mut complement = Vec::new();
        let mut coth = Vec::new();
        for &x in &bath.frequencies {
            let w = match *weighting {
                WeightingFunction::Unity => 1.0,
                WeightingFunction::Zero => 0.0,
                WeightingFunction::Step { omega_h } => f64::from(x >= omega_h),
                WeightingFunction::Smooth { omega_h, alpha } => 1.0 - (-(x / omega_h).powf(alpha)).exp(),
            };
            weight.push(w);
            complement.push(1.0 - w);
            coth.push(coth_unchecked(0.5 * beta * x));
        }
        Ok(Self { bath: bath.clone(), weight, complement, coth })
    }

    fn dg(&self, n: usize, j: usize, k: usize) -> f64 {
        self.bath.g(n, j) - self.bath.g(n, k)
    }

    fn phase(&self, n: usize, t: f64) -> (f64, f64) {
        (self.bath.frequencies[n] * t / HBAR_CM_FS).sin_cos()
    }
}

impl CorrelationSource for DiscreteCorrelations {
    type Time = f64;

    fn n_sites(&self) -> usize {
        self.bath.n_sites
    }

    fn origin(&self) -> f64 {
        0.0
    }

    fn elapsed(&self, t: f64, tau: f64) -> f64 {
        t - tau
    }

    fn k(&self, t: f64, j: usize, k: usize, jp: usize, kp: usize) -> C64 {
        let mut v = czero();
        for n in 0..self.bath.n_modes() {
            let a = self.dg(n, j, k) * self.dg(n, jp, kp) * self.weight[n] * self.weight[n];
            let (s, c) = self.phase(n, t);
            v += C64::new(a * self.coth[n] * c, -a * s);
        }
        v
    }

    fn m(&self, t: f64, j: usize, jp: usize, kp: usize) -> C64 {
        let mut v = czero();
        for n in 0..self.bath.n_modes() {
            let x = self.bath.frequencies[n];
            let a = x * self.bath.g(n, j) * self.dg(n, jp, kp) * self.weight[n] * self.complement[n];
            let (s, c) = self.phase(n, t);
            v += C64::new(a * c, -a * self.coth[n] * s);
        }
        v
    }

    fn c(&self, t: f64, j: usize, jp: usize) -> C64 {
        let mut v = czero();
        for n in 0..self.bath.n_modes() {
            let x = self.bath.frequencies[n];
            let a = x * x * self.bath.g(n, j) * self.bath.g(n, jp) * self.complement[n] * self.complement[n];
            let (s, c) = self.phase(n, t);
            v += C64::new(a * self.coth[n] * c, -a * s);
        }
        v
    }

    fn f(&self, t: f64, j: usize, k: usize, kp: usize) -> C64 {
        let mut phi = 0.0;
        for n in 0..self.bath.n_modes() {
            let (s, _) = self.phase(n, t);
            phi += 2.0 * self.bath.g(n, kp) * self.dg(n, j, k) * self.weight[n] * self.weight[n] * s;
        }
        C64::from_polar(1.0, phi)
    }

    fn h(&self, t: f64, j: usize, kp: usize) -> f64 {
        let mut v = 0.0;
        for n in 0..self.bath.n_modes() {
            let x = self.bath.frequencies[n];
            let (_, c) = self.phase(n, t);
            v += 2.0 * x * self.bath.g(n, j) * self.bath.g(n, kp) * self.complement[n] * self.weight[n] * c;
        }
        v
    }

    fn ln_w(&self, j: usize, k: usize) -> f64 {
        let mut v = 0.0;
        for n in 0..self.bath.n_modes() {
            let d = self.dg(n, j, k) * self.weight[n];
            v += d * d * self.coth[n];
        }
        -0.5 * v
    }
}

/// A bath operator in the interaction picture of H_b.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BathOperator {
    /// θ_j†θ_k − w_jk.
    Hop(usize, usize),
    /// D_j = Σ_n x_n g_nj (1 − W_n)(b_n + b_n†).
    Displacement(usize),
}

/// The modes of a [`DiscreteBath`] truncated to `cutoff` levels each.
#[derive(Debug, Clone)]
pub struct FockSpaceModel {
    bath: DiscreteBath,
    cutoff: usize,
    dim: usize,
    /// Σ_n x_n k_n for each basis state (zero-point energy dropped).
    levels: Vec<f64>,
    /// Diagonal of the truncated, renormalized thermal state.
    rho: Vec<f64>,
    /// b_n embedded in the full bath space.
    annihilators: Vec<DMatrix<f64>>,
    /// θ_j = exp(−Σ_n g_nj W_n (b_n† − b_n)).
    theta: Vec<CMatrix>,
    displacement: Vec<CMatrix>,
    /// w_jk = Tr{ρ_b θ_j†θ_k} in the truncated space.
    w: Vec<C64>,
    /// θ_j†θ_k − w_jk.
    hops: Vec<CMatrix>,
    /// δρ̃_jk = θ_j†ρ_bθ_k − w_jk ρ_b.
    delta_rho: Vec<CMatrix>,
}

impl FockSpaceModel {
    pub fn new(bath: &DiscreteBath, cutoff: usize, weighting: &WeightingFunction, beta: f64) -> Result<Self> {
        Self::with_bound(bath, cutoff, weighting, beta, usize::MAX)
    }

    /// Fails with [`Error::DimensionBound`] when cutoff^modes exceeds `bound`.
    pub fn with_bound(
        bath: &DiscreteBath,
        cutoff: usize,
        weighting: &WeightingFunction,
        beta: f64,
        bound: usize,
    ) -> Result<Self> {
        weighting.validate()?;
        if cutoff < 2 {
            return Err(Error::config("oracle.cutoff", "must be at least 2"));
        }
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("inverse temperature must be positive, got {beta}")));
        }
        let modes = bath.n_modes();
        let dim = (0..modes).try_fold(1usize, |d, _| d.checked_mul(cutoff)).unwrap_or(usize::MAX);
        if dim > bound || dim > 1 << 14 {
            return Err(Error::DimensionBound { dimension: dim, bound: bound.min(1 << 14) });
        }

        let b = DMatrix::from_fn(cutoff, cutoff, |r, c| if c == r + 1 { (c as f64).sqrt() } else { 0.0 });
        let embed = |op: &DMatrix<f64>, n: usize| -> DMatrix<f64> {
            let left = DMatrix::<f64>::identity(cutoff.pow(n as u32), cutoff.pow(n as u32));
            let right_dim = cutoff.pow((modes - n - 1) as u32);
            let right = DMatrix::<f64>::identity(right_dim, right_dim);
            left.kronecker(op).kronecker(&right)
        };
        let annihilators: Vec<DMatrix<f64>> = (0..modes).map(|n| embed(&b, n)).collect();

        let mut levels = vec![0.0; dim];
        let mut rho = vec![1.0; dim];
        for (idx, (e, r)) in levels.iter_mut().zip(rho.iter_mut()).enumerate() {
            let mut rest = idx;
            for n in (0..modes).rev() {
                let k = (rest % cutoff) as f64;
                rest /= cutoff;
                *e += bath.frequencies[n] * k;
                *r *= (-beta * bath.frequencies[n] * k).exp();
            }
        }
        let z: f64 = rho.iter().sum();
        rho.iter_mut().for_each(|r| *r /= z);

        // exp(c(b† − b)) per mode from the eigenvectors of i(b† − b)
        let gen = DMatrix::from_fn(cutoff, cutoff, |r, c| C64::new(0.0, b[(c, r)] - b[(r, c)]));
        let eig = SymmetricEigen::new(gen);
        let expo = |c: f64| -> CMatrix {
            let d = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, -c * l)));
            &eig.eigenvectors * d * eig.eigenvectors.adjoint()
        };
        let ns = bath.n_sites;
        let mut theta = Vec::with_capacity(ns);
        let mut displacement = Vec::with_capacity(ns);
        for j in 0..ns {
            let mut th = CMatrix::identity(1, 1);
            let mut d = CMatrix::zeros(dim, dim);
            #[allow(clippy::needless_range_loop)]
            for n in 0..modes {
                let x = bath.frequencies[n];
                let (wn, cn) = weighting.weight_pair(x);
                th = th.kronecker(&expo(-bath.g(n, j) * wn));
                let q = &annihilators[n] + annihilators[n].transpose();
                d += q.map(|v| C64::new(v * x * bath.g(n, j) * cn, 0.0));
            }
            theta.push(th);
            displacement.push(d);
        }

        let mut model = Self {
            bath: bath.clone(),
            cutoff,
            dim,
            levels,
            rho,
            annihilators,
            theta,
            displacement,
            w: Vec::new(),
            hops: Vec::new(),
            delta_rho: Vec::new(),
        };
        for j in 0..ns {
            for k in 0..ns {
                let mut prod = model.theta[j].adjoint() * &model.theta[k];
                let w = model.thermal_trace(&prod);
                for i in 0..dim {
                    prod[(i, i)] -= w;
                }
                model.w.push(w);
                model.hops.push(prod);
            }
        }
        let rho = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            dim,
            model.rho.iter().map(|&r| C64::new(r, 0.0)),
        ));
        for j in 0..ns {
            for k in 0..ns {
                let d = model.theta[j].adjoint() * &rho * &model.theta[k] - &rho * model.w[j * ns + k];
                model.delta_rho.push(d);
            }
        }
        Ok(model)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    fn thermal_trace(&self, op: &CMatrix) -> C64 {
        (0..self.dim).map(|i| op[(i, i)] * self.rho[i]).sum()
    }

    /// Tr{ρ_b θ_j†θ_k}.
    pub fn debye_waller(&self, j: usize, k: usize) -> C64 {
        self.w[j * self.bath.n_sites + k]
    }

    /// max |θ_j†θ_j − 1|.
    pub fn unitarity_defect(&self, j: usize) -> f64 {
        let p = self.theta[j].adjoint() * &self.theta[j];
        (p - CMatrix::identity(self.dim, self.dim)).iter().fold(0.0, |a, v| a.max(v.norm()))
    }

    /// max |[b_n, b_n†] − 1| over states below the top level of every mode.
    pub fn commutator_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for b in &self.annihilators {
            let comm = b * b.transpose() - b.transpose() * b;
            for i in 0..self.dim {
                if self.below_top(i) {
                    worst = worst.max((comm[(i, i)] - 1.0).abs());
                }
            }
        }
        worst
    }

    fn below_top(&self, mut i: usize) -> bool {
        for _ in 0..self.bath.n_modes() {
            if i % self.cutoff == self.cutoff - 1 {
                return false;
            }
            i /= self.cutoff;
        }
        true
    }

    /// Largest thermal occupation of the top level of any mode.
    pub fn truncation_weight(&self) -> f64 {
        (0..self.dim).filter(|&i| !self.below_top(i)).map(|i| self.rho[i]).sum()
    }

    fn operator(&self, op: BathOperator) -> &CMatrix {
        match op {
            BathOperator::Hop(j, k) => &self.hops[j * self.bath.n_sites + k],
            BathOperator::Displacement(j) => &self.displacement[j],
        }
    }

    /// O(t) = e^{iH_b t/ħ} O e^{−iH_b t/ħ}.
    fn evolve(&self, op: &CMatrix, t: f64) -> CMatrix {
        CMatrix::from_fn(self.dim, self.dim, |a, b| {
            op[(a, b)] * C64::from_polar(1.0, (self.levels[a] - self.levels[b]) * t / HBAR_CM_FS)
        })
    }

    fn delta_rho(&self, c: Pair) -> &CMatrix {
        &self.delta_rho[c.0 * self.bath.n_sites + c.1]
    }

    /// Σ_xy O_xy e^{i(E_x − E_y)t/ħ} P_yx.
    fn phased_trace(&self, o: &CMatrix, t: f64, p: &CMatrix) -> C64 {
        let mut s = czero();
        for x in 0..self.dim {
            for y in 0..self.dim {
                let v = o[(x, y)];
                if v != czero() {
                    s += v * p[(y, x)] * C64::from_polar(1.0, (self.levels[x] - self.levels[y]) * t / HBAR_CM_FS);
                }
            }
        }
        s
    }

    /// Tr_b{O_a(t) δρ̃_c}.
    pub fn trace1(&self, a: BathOperator, t: f64, c: Pair) -> C64 {
        self.phased_trace(self.operator(a), t, self.delta_rho(c))
    }

    /// Tr_b{O_a(t) O_b(τ) δρ̃_c} for every τ in `taus`.
    pub fn trace2_series(&self, a: BathOperator, t: f64, b: BathOperator, taus: &[f64], c: Pair) -> Vec<C64> {
        let p = self.delta_rho(c) * self.evolve(self.operator(a), t);
        let ob = self.operator(b);
        taus.iter().map(|&tau| self.phased_trace(ob, tau, &p)).collect()
    }

    /// Tr_b{ρ_b O_a(t) O_b(0)}.
    pub fn correlation(&self, a: BathOperator, t: f64, b: BathOperator) -> C64 {
        let (oa, ob) = (self.operator(a), self.operator(b));
        let mut s = czero();
        for x in 0..self.dim {
            for y in 0..self.dim {
                let v = oa[(x, y)];
                if v != czero() {
                    s += v * ob[(y, x)] * C64::from_polar(self.rho[x], (self.levels[x] - self.levels[y]) * t / HBAR_CM_FS);
                }
            }
        }
        s
    }

    /// B̃_jk as a combination of operators: (J_jk, Hop) and (1, Displacement).
    fn expand(&self, couplings: &[f64], a: Pair) -> Vec<(f64, BathOperator)> {
        let n = self.bath.n_sites;
        let mut out = Vec::new();
        let j = couplings[a.0 * n + a.1];
        if j != 0.0 {
            out.push((j, BathOperator::Hop(a.0, a.1)));
        }
        if a.0 == a.1 {
            out.push((1.0, BathOperator::Displacement(a.0)));
        }
        out
    }

    /// Tr_b{B̃_a(t) δρ̃_c}.
    pub fn b_trace1(&self, couplings: &[f64], t: f64, a: Pair, c: Pair) -> C64 {
        self.expand(couplings, a).into_iter().map(|(s, op)| self.trace1(op, t, c) * s).sum()
    }

    /// Tr_b{B̃_a(t) B̃_b(τ) δρ̃_c} for every τ.
    pub fn b_trace2_series(&self, couplings: &[f64], t: f64, a: Pair, b: Pair, taus: &[f64], c: Pair) -> Vec<C64> {
        let mut out = vec![czero(); taus.len()];
        for (sa, oa) in self.expand(couplings, a) {
            for (sb, ob) in self.expand(couplings, b) {
                for (o, v) in out.iter_mut().zip(self.trace2_series(oa, t, ob, taus, c)) {
                    *o += v * (sa * sb);
                }
            }
        }
        out
    }

    /// Tr_b{ρ_b B̃_a(t) B̃_b(0)}.
    pub fn b_correlation(&self, couplings: &[f64], t: f64, a: Pair, b: Pair) -> C64 {
        let mut v = czero();
        for (sa, oa) in self.expand(couplings, a) {
            for (sb, ob) in self.expand(couplings, b) {
                v += self.correlation(oa, t, ob) * (sa * sb);
            }
        }
        v
    }

    /// Exact site populations of H_s + H_b + Σ_j |j⟩⟨j| Σ_n x_n g_nj (b_n + b_n†)
    /// from σ(0)ρ_b, at each time in `times`. `bound` caps the total dimension.
    pub fn exact_populations(
        &self,
        h: &SiteHamiltonian,
        sigma0: &CMatrix,
        times: &[f64],
        bound: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let ns = self.bath.n_sites;
        if h.n_sites() != ns || sigma0.nrows() != ns || sigma0.ncols() != ns {
            return Err(Error::Model("system and bath site counts differ".into()));
        }
        let total = ns * self.dim;
        if total > bound {
            return Err(Error::DimensionBound { dimension: total, bound });
        }
        let d = self.dim;
        let mut hm = DMatrix::<f64>::zeros(total, total);
        for j in 0..ns {
            for k in 0..ns {
                let v = if j == k { h.energy(j) } else { h.coupling(j, k) };
                if v != 0.0 {
                    for i in 0..d {
                        hm[(j * d + i, k * d + i)] += v;
                    }
                }
            }
            for i in 0..d {
                hm[(j * d + i, j * d + i)] += self.levels[i];
            }
            let mut q = DMatrix::<f64>::zeros(d, d);
            for (n, b) in self.annihilators.iter().enumerate() {
                q += (b + b.transpose()) * (self.bath.frequencies[n] * self.bath.g(n, j));
            }
            let mut blk = hm.view_mut((j * d, j * d), (d, d));
            blk += &q;
        }
        let eig = SymmetricEigen::new(hm);
        let v = eig.eigenvectors;
        let e = eig.eigenvalues;

        let rho0 = CMatrix::from_fn(total, total, |a, b| {
            let (ja, ia) = (a / d, a % d);
            let (jb, ib) = (b / d, b % d);
            if ia == ib {
                sigma0[(ja, jb)] * self.rho[ia]
            } else {
                czero()
            }
        });
        let vc = v.map(|x| C64::new(x, 0.0));
        let rho_hat = vc.transpose() * rho0 * &vc;

        let mut weights = Vec::with_capacity(ns);
        for j in 0..ns {
            let block = v.rows(j * d, d);
            let q = block.transpose() * block;
            weights.push(CMatrix::from_fn(total, total, |a, b| rho_hat[(a, b)] * q[(b, a)]));
        }
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let ph: Vec<C64> = e.iter().map(|&x| C64::from_polar(1.0, -x * t / HBAR_CM_FS)).collect();
            let pops = weights
                .iter()
                .map(|w| {
                    let mut s = czero();
                    for a in 0..total {
                        let mut row = czero();
                        for b in 0..total {
                            row += w[(a, b)] * ph[b].conj();
                        }
                        s += row * ph[a];
                    }
                    s.re
                })
                .collect();
            out.push(pops);
        }
        Ok(out)
    }
}

/// Composite Simpson over equally spaced samples; the sample count must be odd.
pub fn simpson(values: &[C64], h: f64) -> C64 {
    assert!(values.len() % 2 == 1, "Simpson needs an even number of intervals");
    let n = values.len() - 1;
    if n == 0 {
        return czero();
    }
    let mut s = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        s += v * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * (h / 3.0)
}

/// |j⟩⟨k| at time t in the interaction picture of H0, expressed in the
/// frame's eigenbasis, with H0 diagonalized independently.
struct Interaction {
    n: usize,
    energies: Vec<f64>,
    vectors: DMatrix<f64>,
    to_frame: DMatrix<f64>,
}

impl Interaction {
    fn new(frame: &PolaronFrame) -> Self {
        let h0 = frame.zeroth_order_hamiltonian();
        let eig = SymmetricEigen::new(h0);
        let to_frame = frame.u_matrix();
        Self { n: frame.n_sites(), energies: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors, to_frame }
    }

    fn transition(&self, a: Pair, t: f64) -> CMatrix {
        let n = self.n;
        let v = self.vectors.map(|x| C64::new(x, 0.0));
        let prop = |sign: f64| {
            let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                self.energies.iter().map(|&e| C64::from_polar(1.0, sign * e * t / HBAR_CM_FS)),
            ));
            &v * d * v.adjoint()
        };
        let mut e = CMatrix::zeros(n, n);
        e[(a.0, a.1)] = C64::new(1.0, 0.0);
        let site = prop(1.0) * e * prop(-1.0);
        let u = self.to_frame.map(|x| C64::new(x, 0.0));
        u.transpose() * site * u
    }
}

/// Second-order time-local tensor in operator form for H_sb = Σ_a T_a ⊗ B̃_a
/// over all site pairs a, given G_ab(τ) = ⟨B̃_a(τ)B̃_b(0)⟩ with B̃_a† = B̃_ā.
/// Time integrals use Simpson over `m` (even) intervals of width `h_fs`.
pub fn tcl2_tensor(
    frame: &PolaronFrame,
    h_fs: f64,
    m: usize,
    mut corr: impl FnMut(Pair, Pair, f64) -> Result<C64>,
) -> Result<RelaxationTensor> {
    if m % 2 != 0 {
        return Err(Error::Domain("the reference tensor needs an even sample count".into()));
    }
    let n = frame.n_sites();
    let it = Interaction::new(frame);
    let t = m as f64 * h_fs;
    let taus: Vec<f64> = (0..=m).map(|i| i as f64 * h_fs).collect();
    let pairs: Vec<Pair> = all_pairs(n).collect();
    let np = pairs.len();
    // g[a][b][i] = G_ab(τ_i)
    let mut g = vec![vec![vec![czero(); m + 1]; np]; np];
    for (ia, &a) in pairs.iter().enumerate() {
        for (ib, &b) in pairs.iter().enumerate() {
            for (i, &tau) in taus.iter().enumerate() {
                g[ia][ib][i] = corr(a, b, tau)?;
            }
        }
    }
    let bar = |a: Pair| a.1 * n + a.0;
    let ta: Vec<CMatrix> = pairs.iter().map(|&a| it.transition(a, t)).collect();
    let tb: Vec<Vec<CMatrix>> = pairs.iter().map(|&b| taus.iter().map(|&tau| it.transition(b, t - tau)).collect()).collect();

    let mut r = RelaxationTensor::zeros(n);
    for pp in 0..n {
        for qp in 0..n {
            let mut e = CMatrix::zeros(n, n);
            e[(pp, qp)] = C64::new(1.0, 0.0);
            let mut total = CMatrix::zeros(n, n);
            for (ia, &a) in pairs.iter().enumerate() {
                for (ib, &b) in pairs.iter().enumerate() {
                    let fwd = &g[ia][ib];
                    let bwd = &g[bar(a)][bar(b)];
                    if fwd.iter().chain(bwd.iter()).all(|v| *v == czero()) {
                        continue;
                    }
                    let samples: Vec<CMatrix> = (0..=m)
                        .map(|i| {
                            let s = &tb[ib][i];
                            (&ta[ia] * s * &e - s * &e * &ta[ia]) * fwd[i]
                                + (&e * s * &ta[ia] - &ta[ia] * &e * s) * bwd[i].conj()
                        })
                        .collect();
                    for p in 0..n {
                        for q in 0..n {
                            let series: Vec<C64> = samples.iter().map(|x| x[(p, q)]).collect();
                            total[(p, q)] += simpson(&series, h_fs);
                        }
                    }
                }
            }
            for p in 0..n {
                for q in 0..n {
                    r.set(p, q, pp, qp, total[(p, q)] / (HBAR_CM_FS * HBAR_CM_FS));
                }
            }
        }
    }
    Ok(r)
}

/// Conventional second-order tensor for the untransformed model from
/// 𝓒_jj'(τ) alone; valid when W_h ≡ 0. `m` must be even.
pub fn redfield_tensor(frame: &PolaronFrame, measure: &SpectralMeasure, h_fs: f64, m: usize) -> Result<RelaxationTensor> {
    tcl2_tensor(frame, h_fs, m, |a, b, tau| {
        if a.0 == a.1 && b.0 == b.1 {
            measure.corr_c(tau, a.0, b.0)
        } else {
            Ok(czero())
        }
    })
}

/// 𝓘⁽¹⁾(t) in the eigenbasis from Fock-space bath traces.
pub fn inhom1_reference(frame: &PolaronFrame, fock: &FockSpaceModel, sigma0: &CMatrix, t: f64) -> CMatrix {
    let n = frame.n_sites();
    let it = Interaction::new(frame);
    let mut out = CMatrix::zeros(n, n);
    for a in all_pairs(n) {
        let ta = it.transition(a, t);
        for c in all_pairs(n) {
            let s = sigma0[(c.0, c.1)];
            if s == czero() {
                continue;
            }
            let v = fock.b_trace1(&frame.couplings, t, a, c);
            let tc = it.transition(c, 0.0);
            out += (&ta * &tc - &tc * &ta) * (v * s);
        }
    }
    out * C64::new(0.0, -1.0 / HBAR_CM_FS)
}

/// 𝓘⁽²⁾(t) in the eigenbasis from Fock-space bath traces, with Simpson over
/// `m` (even) intervals of τ ∈ [0, t].
pub fn inhom2_reference(frame: &PolaronFrame, fock: &FockSpaceModel, sigma0: &CMatrix, t: f64, m: usize) -> CMatrix {
    let n = frame.n_sites();
    let it = Interaction::new(frame);
    if m == 0 || t == 0.0 {
        return CMatrix::zeros(n, n);
    }
    let h = t / m as f64;
    let taus: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    let tb: Vec<Vec<CMatrix>> = all_pairs(n).map(|b| taus.iter().map(|&tau| it.transition(b, tau)).collect()).collect();
    let mut y = CMatrix::zeros(n, n);
    for a in all_pairs(n) {
        let ta = it.transition(a, t);
        for b in all_pairs(n) {
            for c in all_pairs(n) {
                let s = sigma0[(c.0, c.1)];
                if s == czero() {
                    continue;
                }
                let bath = fock.b_trace2_series(&frame.couplings, t, a, b, &taus, c);
                if bath.iter().all(|v| *v == czero()) {
                    continue;
                }
                let series = &tb[b.0 * n + b.1];
                let mut theta = CMatrix::zeros(n, n);
                for p in 0..n {
                    for q in 0..n {
                        let vals: Vec<C64> = bath.iter().zip(series).map(|(v, tm)| v * tm[(p, q)]).collect();
                        theta[(p, q)] = simpson(&vals, h);
                    }
                }
                let inner = theta * it.transition(c, 0.0) * s;
                y += &ta * &inner - &inner * &ta;
            }
        }
    }
    (&y + y.adjoint()) * C64::new(-1.0 / (HBAR_CM_FS * HBAR_CM_FS), 0.0)
}

fn all_pairs(n: usize) -> impl Iterator<Item = Pair> {
    (0..n).flat_map(move |j| (0..n).map(move |k| (j, k)))
}
