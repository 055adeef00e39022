//! Bath correlation functions 𝓚, 𝓜, 𝓒, f, h on the propagation grid and the
//! cumulative kernel integrals 𝓦, 𝓨, 𝓧 built from them.
//!
//! Every frequency integral is written against a [`SpectralMeasure`]: a set
//! of nodes x_n with a symmetric site matrix a_n[j][j'] and a quadrature
//! weight. For a continuum density a_n = 𝓙_jj'(x_n)/π; for a discrete bath
//! a_n = x_n² g_nj g_nj' with unit weight. The same code therefore evaluates
//! both the quadrature and the finite mode sums.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bath::{QuadratureGrid, QuadratureScheme, SpectralDensityModel, WeightingFunction};
use crate::error::{Error, Result};
use crate::units::{coth_unchecked, HBAR_CM_FS};

/// Uniform propagation grid; correlation tables live on its half steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt_fs: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt_fs: f64, t_max_fs: f64) -> Result<Self> {
        if !(dt_fs > 0.0) || !dt_fs.is_finite() {
            return Err(Error::config("run.dt_fs", format!("must be positive, got {dt_fs}")));
        }
        if !(t_max_fs > 0.0) || !t_max_fs.is_finite() {
            return Err(Error::config("run.t_max_fs", format!("must be positive, got {t_max_fs}")));
        }
        let steps = t_max_fs / dt_fs;
        let n_steps = steps.round();
        if (steps - n_steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::config("run.t_max_fs", "must be an integer multiple of dt_fs"));
        }
        Ok(Self { dt_fs, n_steps: n_steps as usize })
    }

    pub fn half_step(&self) -> f64 {
        0.5 * self.dt_fs
    }

    /// Number of half-step samples, t = 0 to t_max inclusive.
    pub fn n_half(&self) -> usize {
        2 * self.n_steps + 1
    }

    pub fn t_max(&self) -> f64 {
        self.n_steps as f64 * self.dt_fs
    }

    /// Time of half-step index m.
    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.half_step()
    }
}

/// Nodes, weights and site amplitudes shared by every correlation function.
#[derive(Debug, Clone)]
pub struct SpectralMeasure {
    n_sites: usize,
    nodes: Vec<f64>,
    qweights: Vec<f64>,
    amps: Vec<f64>,
    weight: Vec<f64>,
    complement: Vec<f64>,
    coth: Vec<f64>,
    grid: Option<QuadratureGrid>,
    weighting: WeightingFunction,
    beta: f64,
}

impl SpectralMeasure {
    /// Quadrature measure for a continuum density. `t_max_fs` bounds the
    /// phase variation across each panel.
    pub fn continuum(
        density: &SpectralDensityModel,
        weighting: &WeightingFunction,
        beta: f64,
        scheme: &QuadratureScheme,
        t_max_fs: f64,
    ) -> Result<Self> {
        weighting.validate()?;
        let grid = scheme.grid(density, weighting, t_max_fs)?;
        let n = density.n_sites();
        let mut amps = Vec::with_capacity(grid.len() * n * n);
        for &x in &grid.nodes {
            let p = density.profile(x) / PI;
            for j in 0..n {
                for k in 0..n {
                    amps.push(density.correlation(j, k) * p);
                }
            }
        }
        let (nodes, qweights) = (grid.nodes.clone(), grid.weights.clone());
        Self::assemble(n, nodes, qweights, amps, *weighting, beta, Some(grid))
    }

    /// Finite set of modes. `couplings` is mode-major: g[n·N + j].
    pub fn discrete(
        frequencies: &[f64],
        couplings: &[f64],
        n_sites: usize,
        weighting: &WeightingFunction,
        beta: f64,
    ) -> Result<Self> {
        weighting.validate()?;
        if couplings.len() != frequencies.len() * n_sites {
            return Err(Error::Model("one coupling per mode and site is required".into()));
        }
        if frequencies.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Model("mode frequencies must be positive".into()));
        }
        let mut amps = Vec::with_capacity(frequencies.len() * n_sites * n_sites);
        for (n, &x) in frequencies.iter().enumerate() {
            let g = &couplings[n * n_sites..(n + 1) * n_sites];
            for j in 0..n_sites {
                for k in 0..n_sites {
                    amps.push(x * x * g[j] * g[k]);
                }
            }
        }
        let qweights = vec![1.0; frequencies.len()];
        Self::assemble(n_sites, frequencies.to_vec(), qweights, amps, *weighting, beta, None)
    }

    fn assemble(
        n_sites: usize,
        nodes: Vec<f64>,
        qweights: Vec<f64>,
        amps: Vec<f64>,
        weighting: WeightingFunction,
        beta: f64,
        grid: Option<QuadratureGrid>,
    ) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("inverse temperature must be positive, got {beta}")));
        }
        let mut weight = Vec::with_capacity(nodes.len());
        let mut complement = Vec::with_capacity(nodes.len());
        let mut coth = Vec::with_capacity(nodes.len());
        for &x in &nodes {
            let (w, c) = weighting.weight_pair(x);
            weight.push(w);
            complement.push(c);
            coth.push(coth_unchecked(0.5 * beta * x));
        }
        Ok(Self { n_sites, nodes, qweights, amps, weight, complement, coth, grid, weighting, beta })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weighting(&self) -> &WeightingFunction {
        &self.weighting
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_continuum(&self) -> bool {
        self.grid.is_some()
    }

    #[inline]
    fn a(&self, n: usize, j: usize, k: usize) -> f64 {
        self.amps[(n * self.n_sites + j) * self.n_sites + k]
    }

    #[inline]
    fn a1(&self, n: usize, j: usize, jp: usize, kp: usize) -> f64 {
        self.a(n, j, jp) - self.a(n, j, kp)
    }

    #[inline]
    fn a2(&self, n: usize, j: usize, k: usize, jp: usize, kp: usize) -> f64 {
        self.a(n, j, jp) + self.a(n, k, kp) - self.a(n, j, kp) - self.a(n, k, jp)
    }

    /// Σ_n w_n v_n with divergence detection on continuum measures.
    fn integrate(&self, name: &str, values: &[f64]) -> Result<f64> {
        match &self.grid {
            Some(g) => g.integrate_values(name, values),
            None => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::DivergentIntegral {
                        integral: name.to_string(),
                        diagnostic: "mode sum is not finite".into(),
                    });
                }
                Ok(values.iter().zip(&self.qweights).map(|(v, w)| v * w).sum())
            }
        }
    }

    fn check_site(&self, j: usize) -> Result<()> {
        if j >= self.n_sites {
            return Err(Error::Domain(format!("site index {} out of range 1..={}", j + 1, self.n_sites)));
        }
        Ok(())
    }

    /// Unweighted cosine and sine coefficient vectors of one function: the
    /// function equals Σ_n w_n (p_n cos(x_n t/ħ) + i q_n sin(x_n t/ħ)).
    fn coefficients(&self, key: CorrKey) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let (x, w, c, ct) = (self.nodes[i], self.weight[i], self.complement[i], self.coth[i]);
            match key {
                CorrKey::K(j, k, jp, kp) => {
                    let amp = self.a2(i, j, k, jp, kp) / (x * x) * w * w;
                    p[i] = amp * ct;
                    q[i] = -amp;
                }
                CorrKey::M(j, jp, kp) => {
                    let amp = self.a1(i, j, jp, kp) / x * c * w;
                    p[i] = amp;
                    q[i] = -amp * ct;
                }
                CorrKey::C(j, jp) => {
                    let amp = self.a(i, j, jp) * c * c;
                    p[i] = amp * ct;
                    q[i] = -amp;
                }
                CorrKey::F(j, k, kp) => {
                    q[i] = 2.0 * self.a1(i, kp, j, k) / (x * x) * w * w;
                }
                CorrKey::H(j, kp) => {
                    p[i] = 2.0 * self.a(i, j, kp) / x * c * w;
                }
            }
        }
        (p, q)
    }

    fn evaluate(&self, key: CorrKey, t_fs: f64) -> Result<C64> {
        if !(t_fs >= 0.0) {
            return Err(Error::Domain(format!("correlation functions need t ≥ 0, got {t_fs}")));
        }
        let (p, q) = self.coefficients(key);
        let name = key.to_string();
        let re: Vec<f64> = p.iter().zip(&self.nodes).map(|(p, x)| p * (x * t_fs / HBAR_CM_FS).cos()).collect();
        let im: Vec<f64> = q.iter().zip(&self.nodes).map(|(q, x)| q * (x * t_fs / HBAR_CM_FS).sin()).collect();
        Ok(C64::new(self.integrate(&name, &re)?, self.integrate(&name, &im)?))
    }

    /// 𝓚_{jk,j'k'}(t).
    pub fn corr_k(&self, t_fs: f64, j: usize, k: usize, jp: usize, kp: usize) -> Result<C64> {
        for s in [j, k, jp, kp] {
            self.check_site(s)?;
        }
        self.evaluate(CorrKey::K(j, k, jp, kp), t_fs)
    }

    /// 𝓜_{j,j'k'}(t) in cm⁻¹.
    pub fn corr_m(&self, t_fs: f64, j: usize, jp: usize, kp: usize) -> Result<C64> {
        for s in [j, jp, kp] {
            self.check_site(s)?;
        }
        self.evaluate(CorrKey::M(j, jp, kp), t_fs)
    }

    /// 𝓒_{jj'}(t) in cm⁻².
    pub fn corr_c(&self, t_fs: f64, j: usize, jp: usize) -> Result<C64> {
        self.check_site(j)?;
        self.check_site(jp)?;
        self.evaluate(CorrKey::C(j, jp), t_fs)
    }

    /// f_{jk,k'}(t), a pure phase. Fails when w_jk collapses.
    pub fn phase_f(&self, t_fs: f64, j: usize, k: usize, kp: usize) -> Result<C64> {
        for s in [j, k, kp] {
            self.check_site(s)?;
        }
        self.ln_debye_waller(j, k)?;
        Ok(self.evaluate(CorrKey::F(j, k, kp), t_fs)?.exp())
    }

    /// h_{j,k'}(t) in cm⁻¹.
    pub fn real_h(&self, t_fs: f64, j: usize, kp: usize) -> Result<f64> {
        self.check_site(j)?;
        self.check_site(kp)?;
        Ok(self.evaluate(CorrKey::H(j, kp), t_fs)?.re)
    }

    /// ln w_jk = −𝓚_{jk,jk}(0)/2.
    pub fn ln_debye_waller(&self, j: usize, k: usize) -> Result<f64> {
        self.check_site(j)?;
        self.check_site(k)?;
        if j == k {
            return Ok(0.0);
        }
        let values: Vec<f64> = (0..self.len())
            .map(|i| {
                let (x, w) = (self.nodes[i], self.weight[i]);
                self.a2(i, j, k, j, k) / (x * x) * w * w * self.coth[i]
            })
            .collect();
        let name = format!("Debye-Waller exponent w_{}{}", j + 1, k + 1);
        match self.integrate(&name, &values) {
            Ok(v) => Ok(-0.5 * v),
            Err(Error::DivergentIntegral { integral, diagnostic }) => Err(Error::DivergentIntegral {
                integral,
                diagnostic: format!("{diagnostic}; the Debye-Waller factor collapses to w = 0"),
            }),
            Err(e) => Err(e),
        }
    }

    /// Polaron shift Σ a_jj/x · W(2−W), so that Ẽ_j = E_j − shift.
    pub fn energy_shift(&self, j: usize) -> Result<f64> {
        self.check_site(j)?;
        let values: Vec<f64> =
            (0..self.len()).map(|i| self.a(i, j, j) / self.nodes[i] * self.weight[i] * (2.0 - self.weight[i])).collect();
        self.integrate(&format!("energy shift of site {}", j + 1), &values)
    }
}

/// Identifies one correlation function by kind and site indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrKey {
    K(usize, usize, usize, usize),
    M(usize, usize, usize),
    C(usize, usize),
    F(usize, usize, usize),
    H(usize, usize),
}

impl CorrKey {
    fn kind(&self) -> usize {
        match self {
            CorrKey::K(..) => 0,
            CorrKey::M(..) => 1,
            CorrKey::C(..) => 2,
            CorrKey::F(..) => 3,
            CorrKey::H(..) => 4,
        }
    }
}

impl std::fmt::Display for CorrKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            CorrKey::K(j, k, a, b) => write!(f, "K_{}{},{}{}", j + 1, k + 1, a + 1, b + 1),
            CorrKey::M(j, a, b) => write!(f, "M_{},{}{}", j + 1, a + 1, b + 1),
            CorrKey::C(j, a) => write!(f, "C_{}{}", j + 1, a + 1),
            CorrKey::F(j, k, a) => write!(f, "f_{}{},{}", j + 1, k + 1, a + 1),
            CorrKey::H(j, a) => write!(f, "h_{},{}", j + 1, a + 1),
        }
    }
}

/// Where one indexed function lives in the table storage.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SlotRef {
    Missing,
    Zero,
    Slot(usize, f64),
}

/// Number of distinct stored series per function kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FunctionCounts {
    pub k: usize,
    pub m: usize,
    pub c: usize,
    pub f: usize,
    pub h: usize,
}

impl FunctionCounts {
    pub fn total(&self) -> usize {
        self.k + self.m + self.c + self.f + self.h
    }
}

/// Common read interface for tabulated and directly summed correlations.
pub trait CorrelationSource {
    type Time: Copy;
    fn n_sites(&self) -> usize;
    fn origin(&self) -> Self::Time;
    /// t − τ for t ≥ τ.
    fn elapsed(&self, t: Self::Time, tau: Self::Time) -> Self::Time;
    fn k(&self, t: Self::Time, j: usize, k: usize, jp: usize, kp: usize) -> C64;
    fn m(&self, t: Self::Time, j: usize, jp: usize, kp: usize) -> C64;
    fn c(&self, t: Self::Time, j: usize, jp: usize) -> C64;
    fn f(&self, t: Self::Time, j: usize, k: usize, kp: usize) -> C64;
    fn h(&self, t: Self::Time, j: usize, kp: usize) -> f64;
    fn ln_w(&self, j: usize, k: usize) -> f64;
}

/// Correlation functions sampled at every half step of a [`TimeGrid`].
///
/// Each distinct function is stored once; index permutations related by the
/// symmetry relations, and functions with identical or opposite spectral
/// amplitudes, point to the same series with a sign.
#[derive(Debug, Clone)]
pub struct CorrelationTables {
    grid: TimeGrid,
    n_sites: usize,
    pairs: Vec<(usize, usize)>,
    series: Vec<Vec<C64>>,
    slot_kind: Vec<usize>,
    refs: HashMap<CorrKey, SlotRef>,
    k_ref: Vec<SlotRef>,
    m_ref: Vec<SlotRef>,
    c_ref: Vec<SlotRef>,
    f_ref: Vec<SlotRef>,
    h_ref: Vec<SlotRef>,
    ln_w: Vec<f64>,
}

const RESYNC_INTERVAL: usize = 64;

impl CorrelationTables {
    /// Samples every function reachable from the site pairs in `pairs`
    /// (unordered, j ≠ k): 𝓚 between those pairs, 𝓜 and f for those pairs
    /// against every site, and all 𝓒 and h.
    pub fn build(measure: &SpectralMeasure, grid: TimeGrid, pairs: &[(usize, usize)]) -> Result<Self> {
        let n = measure.n_sites();
        let mut canon: Vec<(usize, usize)> = pairs
            .iter()
            .map(|&(j, k)| if j < k { (j, k) } else { (k, j) })
            .filter(|&(j, k)| j != k && k < n)
            .collect();
        canon.sort_unstable();
        canon.dedup();

        let mut ln_w = vec![0.0; n * n];
        for j in 0..n {
            for k in (j + 1)..n {
                let v = measure.ln_debye_waller(j, k)?;
                ln_w[j * n + k] = v;
                ln_w[k * n + j] = v;
            }
        }

        let mut keys = Vec::new();
        for (a, &(j, k)) in canon.iter().enumerate() {
            for &(jp, kp) in &canon[a..] {
                keys.push(CorrKey::K(j, k, jp, kp));
            }
        }
        for j in 0..n {
            for &(jp, kp) in &canon {
                keys.push(CorrKey::M(j, jp, kp));
            }
        }
        for j in 0..n {
            for jp in j..n {
                keys.push(CorrKey::C(j, jp));
            }
        }
        for &(j, k) in &canon {
            for kp in 0..n {
                keys.push(CorrKey::F(j, k, kp));
            }
        }
        for j in 0..n {
            for kp in j..n {
                keys.push(CorrKey::H(j, kp));
            }
        }

        let mut dedup: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
        let mut coeffs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut slot_kind = Vec::new();
        let mut refs = HashMap::new();
        for key in keys {
            let (p, q) = measure.coefficients(key);
            if p.iter().chain(&q).all(|&v| v == 0.0) {
                refs.insert(key, SlotRef::Zero);
                continue;
            }
            if let CorrKey::K(..) = key {
                // the t = 0 real part carries the strongest small-ω weight
                measure.integrate(&key.to_string(), &p)?;
            }
            if let CorrKey::F(..) | CorrKey::M(..) | CorrKey::H(..) = key {
                measure.integrate(&key.to_string(), &p)?;
                measure.integrate(&key.to_string(), &q)?;
            }
            let bits = |s: f64| -> Vec<u64> {
                p.iter().chain(&q).map(|&v| (s * v + 0.0).to_bits()).collect()
            };
            let kind = key.kind();
            if let Some(&slot) = dedup.get(&(kind, bits(1.0))) {
                refs.insert(key, SlotRef::Slot(slot, 1.0));
            } else if let Some(&slot) = dedup.get(&(kind, bits(-1.0))) {
                refs.insert(key, SlotRef::Slot(slot, -1.0));
            } else {
                let slot = coeffs.len();
                dedup.insert((kind, bits(1.0)), slot);
                let pw: Vec<f64> = p.iter().zip(&measure.qweights).map(|(a, w)| a * w).collect();
                let qw: Vec<f64> = q.iter().zip(&measure.qweights).map(|(a, w)| a * w).collect();
                coeffs.push((pw, qw));
                slot_kind.push(kind);
                refs.insert(key, SlotRef::Slot(slot, 1.0));
            }
        }

        let series = sample(measure, &coeffs, grid);
        let mut tables = Self {
            grid,
            n_sites: n,
            pairs: canon,
            series,
            slot_kind,
            refs,
            k_ref: Vec::new(),
            m_ref: Vec::new(),
            c_ref: Vec::new(),
            f_ref: Vec::new(),
            h_ref: Vec::new(),
            ln_w,
        };
        tables.index();
        Ok(tables)
    }

    /// Expands the canonical references into dense per-index lookups.
    fn index(&mut self) {
        let n = self.n_sites;
        let canon_pair = |j: usize, k: usize| -> (usize, usize, f64) {
            if j < k {
                (j, k, 1.0)
            } else {
                (k, j, -1.0)
            }
        };
        let lookup = |refs: &HashMap<CorrKey, SlotRef>, key: CorrKey, sign: f64| match refs.get(&key) {
            None => SlotRef::Missing,
            Some(SlotRef::Slot(s, g)) => SlotRef::Slot(*s, g * sign),
            Some(r) => *r,
        };
        self.k_ref = vec![SlotRef::Zero; n * n * n * n];
        for j in 0..n {
            for k in 0..n {
                for jp in 0..n {
                    for kp in 0..n {
                        if j == k || jp == kp {
                            continue;
                        }
                        let (a, b, s1) = canon_pair(j, k);
                        let (c, d, s2) = canon_pair(jp, kp);
                        let key = if (a, b) <= (c, d) { CorrKey::K(a, b, c, d) } else { CorrKey::K(c, d, a, b) };
                        self.k_ref[((j * n + k) * n + jp) * n + kp] = lookup(&self.refs, key, s1 * s2);
                    }
                }
            }
        }
        self.m_ref = vec![SlotRef::Zero; n * n * n];
        self.f_ref = vec![SlotRef::Zero; n * n * n];
        for j in 0..n {
            for a in 0..n {
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let (c, d, s) = canon_pair(a, b);
                    self.m_ref[(j * n + a) * n + b] = lookup(&self.refs, CorrKey::M(j, c, d), s);
                    // f_{kj,k'} = f_{jk,k'}*: the stored exponent changes sign
                    self.f_ref[(a * n + b) * n + j] = lookup(&self.refs, CorrKey::F(c, d, j), s);
                }
            }
        }
        self.c_ref = vec![SlotRef::Zero; n * n];
        self.h_ref = vec![SlotRef::Zero; n * n];
        for j in 0..n {
            for k in 0..n {
                let (a, b) = if j <= k { (j, k) } else { (k, j) };
                self.c_ref[j * n + k] = lookup(&self.refs, CorrKey::C(a, b), 1.0);
                self.h_ref[j * n + k] = lookup(&self.refs, CorrKey::H(a, b), 1.0);
            }
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_times(&self) -> usize {
        self.grid.n_half()
    }

    /// Canonical (j < k) site pairs the tables were built for.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Distinct stored series per kind.
    pub fn distinct_functions(&self) -> FunctionCounts {
        let mut c = FunctionCounts::default();
        for &k in &self.slot_kind {
            match k {
                0 => c.k += 1,
                1 => c.m += 1,
                2 => c.c += 1,
                3 => c.f += 1,
                _ => c.h += 1,
            }
        }
        c
    }

    pub fn debye_waller(&self, j: usize, k: usize) -> f64 {
        self.ln_w[j * self.n_sites + k].exp()
    }

    /// Replaces one Debye-Waller factor. Only used to check that validation
    /// notices inconsistent tables.
    pub fn corrupt_debye_waller(&mut self, j: usize, k: usize, w: f64) {
        let n = self.n_sites;
        self.ln_w[j * n + k] = w.ln();
        self.ln_w[k * n + j] = w.ln();
    }

    /// True if two functions share storage up to sign.
    pub fn same_series(&self, a: CorrKey, b: CorrKey) -> Option<f64> {
        match (self.reference(a), self.reference(b)) {
            (SlotRef::Zero, SlotRef::Zero) => Some(1.0),
            (SlotRef::Slot(x, s), SlotRef::Slot(y, t)) if x == y => Some(s * t),
            _ => None,
        }
    }

    /// True if the function is identically zero by its amplitudes.
    pub fn is_zero(&self, key: CorrKey) -> bool {
        self.reference(key) == SlotRef::Zero
    }

    fn reference(&self, key: CorrKey) -> SlotRef {
        let n = self.n_sites;
        match key {
            CorrKey::K(j, k, a, b) => self.k_ref[((j * n + k) * n + a) * n + b],
            CorrKey::M(j, a, b) => {
                if a == b {
                    SlotRef::Zero
                } else {
                    self.m_ref[(j * n + a) * n + b]
                }
            }
            CorrKey::C(j, a) => self.c_ref[j * n + a],
            CorrKey::F(j, k, a) => {
                if j == k {
                    SlotRef::Zero
                } else {
                    self.f_ref[(j * n + k) * n + a]
                }
            }
            CorrKey::H(j, a) => self.h_ref[j * n + a],
        }
    }

    #[inline]
    fn value(&self, r: SlotRef, m: usize, key: impl Fn() -> CorrKey) -> C64 {
        match r {
            SlotRef::Zero => C64::new(0.0, 0.0),
            SlotRef::Slot(s, g) => self.series[s][m] * g,
            SlotRef::Missing => panic!("{} was not tabulated", key()),
        }
    }

    /// Raw f exponent i·φ(t), so that f = exp(φ).
    fn f_exponent(&self, m: usize, j: usize, k: usize, kp: usize) -> C64 {
        if j == k {
            return C64::new(0.0, 0.0);
        }
        let n = self.n_sites;
        self.value(self.f_ref[(j * n + k) * n + kp], m, || CorrKey::F(j, k, kp))
    }
}

/// Samples every coefficient pair on the half-step grid. Node phases advance
/// by complex rotation and are recomputed exactly every few steps.
fn sample(measure: &SpectralMeasure, coeffs: &[(Vec<f64>, Vec<f64>)], grid: TimeGrid) -> Vec<Vec<C64>> {
    let nt = grid.n_half();
    let h = grid.half_step();
    let nodes = &measure.nodes;
    let step: Vec<(f64, f64)> = nodes.iter().map(|x| (x * h / HBAR_CM_FS).sin_cos()).collect();
    let mut sn = vec![0.0; nodes.len()];
    let mut cs = vec![0.0; nodes.len()];
    let mut out: Vec<Vec<C64>> = coeffs.iter().map(|_| Vec::with_capacity(nt)).collect();
    let has_p: Vec<bool> = coeffs.iter().map(|(p, _)| p.iter().any(|&v| v != 0.0)).collect();
    let has_q: Vec<bool> = coeffs.iter().map(|(_, q)| q.iter().any(|&v| v != 0.0)).collect();
    for m in 0..nt {
        if m % RESYNC_INTERVAL == 0 {
            let t = grid.time(m);
            for (i, x) in nodes.iter().enumerate() {
                let (s, c) = (x * t / HBAR_CM_FS).sin_cos();
                sn[i] = s;
                cs[i] = c;
            }
        } else {
            for i in 0..nodes.len() {
                let (ds, dc) = step[i];
                let (s, c) = (sn[i], cs[i]);
                cs[i] = c * dc - s * ds;
                sn[i] = s * dc + c * ds;
            }
        }
        for (slot, (p, q)) in coeffs.iter().enumerate() {
            let re = if has_p[slot] { dot(p, &cs) } else { 0.0 };
            let im = if has_q[slot] { dot(q, &sn) } else { 0.0 };
            out[slot].push(C64::new(re, im));
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CorrelationSource for CorrelationTables {
    type Time = usize;

    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn origin(&self) -> usize {
        0
    }

    fn elapsed(&self, t: usize, tau: usize) -> usize {
        t - tau
    }

    fn k(&self, m: usize, j: usize, k: usize, jp: usize, kp: usize) -> C64 {
        let n = self.n_sites;
        self.value(self.k_ref[((j * n + k) * n + jp) * n + kp], m, || CorrKey::K(j, k, jp, kp))
    }

    fn m(&self, m: usize, j: usize, jp: usize, kp: usize) -> C64 {
        if jp == kp {
            return C64::new(0.0, 0.0);
        }
        let n = self.n_sites;
        self.value(self.m_ref[(j * n + jp) * n + kp], m, || CorrKey::M(j, jp, kp))
    }

    fn c(&self, m: usize, j: usize, jp: usize) -> C64 {
        self.value(self.c_ref[j * self.n_sites + jp], m, || CorrKey::C(j, jp))
    }

    fn f(&self, m: usize, j: usize, k: usize, kp: usize) -> C64 {
        self.f_exponent(m, j, k, kp).exp()
    }

    fn h(&self, m: usize, j: usize, kp: usize) -> f64 {
        self.value(self.h_ref[j * self.n_sites + kp], m, || CorrKey::H(j, kp)).re
    }

    fn ln_w(&self, j: usize, k: usize) -> f64 {
        self.ln_w[j * self.n_sites + k]
    }
}

/// ⟨B̃_jk(t) B̃_j'k'(0)⟩ in cm⁻² from the closed forms; `couplings` is the
/// bare row-major J.
pub fn bath_correlation<S: CorrelationSource>(
    src: &S,
    couplings: &[f64],
    t: S::Time,
    a: (usize, usize),
    b: (usize, usize),
) -> C64 {
    let n = src.n_sites();
    let (ja, jb) = (couplings[a.0 * n + a.1], couplings[b.0 * n + b.1]);
    let mut v = C64::new(0.0, 0.0);
    if ja != 0.0 && jb != 0.0 {
        let ln2 = src.ln_w(a.0, a.1) + src.ln_w(b.0, b.1);
        v += ((C64::new(ln2, 0.0) - src.k(t, a.0, a.1, b.0, b.1)).exp() - ln2.exp()) * (ja * jb);
    }
    if a.0 == a.1 && jb != 0.0 {
        v += src.m(t, a.0, b.0, b.1) * (jb * src.ln_w(b.0, b.1).exp());
    }
    if b.0 == b.1 && ja != 0.0 {
        v += src.m(t, b.0, a.1, a.0) * (ja * src.ln_w(a.0, a.1).exp());
    }
    if a.0 == a.1 && b.0 == b.1 {
        v += src.c(t, a.0, b.0);
    }
    v
}

/// Which part of the bath correlation a kernel term comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Channel {
    /// J̃J̃'(e^{−𝓚} − 1): the polaron-transformed part (𝓦).
    Polaron,
    /// J̃'𝓜: cross terms between the two parts (𝓨).
    Cross,
    /// 𝓒: the untransformed linear coupling (𝓧).
    Linear,
}

/// Selects which channels enter an assembled tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelMask {
    pub polaron: bool,
    pub cross: bool,
    pub linear: bool,
}

impl ChannelMask {
    pub const ALL: Self = Self { polaron: true, cross: true, linear: true };
    pub const POLARON: Self = Self { polaron: true, cross: false, linear: false };
    pub const CROSS: Self = Self { polaron: false, cross: true, linear: false };
    pub const LINEAR: Self = Self { polaron: false, cross: false, linear: true };

    pub fn admits(&self, c: Channel) -> bool {
        match c {
            Channel::Polaron => self.polaron,
            Channel::Cross => self.cross,
            Channel::Linear => self.linear,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Term {
    series: usize,
    coef: f64,
    channel: Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum SeriesKey {
    Polaron { slot: usize, negate: bool, ln_ww: u64 },
    Cross { slot: usize },
    Linear { slot: usize },
}

/// Cumulative integrals ∫₀ᵗ ds e^{iΔ s/ħ} G_{jk,j'k'}(s) for every eigen-gap Δ
/// and every pair of active site pairs, split by channel.
#[derive(Debug, Clone)]
pub struct KernelIntegrals {
    grid: TimeGrid,
    n_sites: usize,
    gaps: Vec<f64>,
    gap_of: Vec<usize>,
    active: Vec<(usize, usize)>,
    active_index: Vec<Option<usize>>,
    series: Vec<Vec<C64>>,
    recipes: Vec<Vec<Term>>,
}

impl KernelIntegrals {
    /// `couplings` is the bare N×N coupling matrix (row-major) and
    /// `eigenvalues` the eigen-energies 𝓔_p.
    pub fn build(tables: &CorrelationTables, couplings: &[f64], eigenvalues: &[f64]) -> Self {
        let n = tables.n_sites();
        assert_eq!(couplings.len(), n * n);
        assert_eq!(eigenvalues.len(), n);
        let grid = tables.grid();

        let mut gaps: Vec<f64> = Vec::new();
        let mut gap_of = vec![0; n * n];
        for p in 0..n {
            for q in 0..n {
                let d = eigenvalues[p] - eigenvalues[q];
                let g = match gaps.iter().position(|&x| x.to_bits() == d.to_bits()) {
                    Some(g) => g,
                    None => {
                        gaps.push(d);
                        gaps.len() - 1
                    }
                };
                gap_of[p * n + q] = g;
            }
        }

        let mut active = Vec::new();
        let mut active_index = vec![None; n * n];
        for j in 0..n {
            for k in 0..n {
                if j == k || couplings[j * n + k] != 0.0 {
                    active_index[j * n + k] = Some(active.len());
                    active.push((j, k));
                }
            }
        }

        let ln_w = |j: usize, k: usize| tables.ln_w(j, k);
        let jt = |j: usize, k: usize| couplings[j * n + k] * ln_w(j, k).exp();

        let mut keys: Vec<SeriesKey> = Vec::new();
        let mut key_index: HashMap<SeriesKey, usize> = HashMap::new();
        let mut intern = |key: SeriesKey| -> usize {
            *key_index.entry(key).or_insert_with(|| {
                keys.push(key);
                keys.len() - 1
            })
        };

        let mut recipes = Vec::with_capacity(active.len() * active.len());
        for &(j, k) in &active {
            for &(jp, kp) in &active {
                let mut terms = Vec::new();
                match (j == k, jp == kp) {
                    (false, false) => {
                        if let SlotRef::Slot(slot, s) = tables.k_ref[((j * n + k) * n + jp) * n + kp] {
                            let ln_ww = ln_w(j, k) + ln_w(jp, kp);
                            let key = SeriesKey::Polaron { slot, negate: s < 0.0, ln_ww: ln_ww.to_bits() };
                            terms.push(Term {
                                series: intern(key),
                                coef: couplings[j * n + k] * couplings[jp * n + kp],
                                channel: Channel::Polaron,
                            });
                        }
                    }
                    (true, false) => {
                        if let SlotRef::Slot(slot, s) = tables.m_ref[(j * n + jp) * n + kp] {
                            terms.push(Term {
                                series: intern(SeriesKey::Cross { slot }),
                                coef: s * jt(jp, kp),
                                channel: Channel::Cross,
                            });
                        }
                    }
                    (false, true) => {
                        if let SlotRef::Slot(slot, s) = tables.m_ref[(jp * n + k) * n + j] {
                            terms.push(Term {
                                series: intern(SeriesKey::Cross { slot }),
                                coef: s * jt(j, k),
                                channel: Channel::Cross,
                            });
                        }
                    }
                    (true, true) => {
                        if let SlotRef::Slot(slot, s) = tables.c_ref[j * n + jp] {
                            terms.push(Term {
                                series: intern(SeriesKey::Linear { slot }),
                                coef: s,
                                channel: Channel::Linear,
                            });
                        }
                    }
                }
                recipes.push(terms);
            }
        }

        let nt = grid.n_half();
        let h = grid.half_step();
        let phases: Vec<Vec<C64>> = gaps
            .iter()
            .map(|&d| (0..nt).map(|m| C64::from_polar(1.0, d * grid.time(m) / HBAR_CM_FS)).collect())
            .collect();
        let mut series = Vec::with_capacity(keys.len() * gaps.len());
        for key in &keys {
            let integrand: Vec<C64> = match *key {
                SeriesKey::Polaron { slot, negate, ln_ww } => {
                    let ln_ww = f64::from_bits(ln_ww);
                    let base = ln_ww.exp();
                    let sign = if negate { -1.0 } else { 1.0 };
                    tables.series[slot].iter().map(|&kv| (C64::from(ln_ww) - kv * sign).exp() - base).collect()
                }
                SeriesKey::Cross { slot } | SeriesKey::Linear { slot } => tables.series[slot].clone(),
            };
            for ph in &phases {
                let g: Vec<C64> = integrand.iter().zip(ph).map(|(a, b)| a * b).collect();
                series.push(cumulative_simpson(&g, h));
            }
        }

        Self { grid, n_sites: n, gaps, gap_of, active, active_index, series, recipes }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Ordered site pairs (j, k) with j = k or J_jk ≠ 0.
    pub fn active_pairs(&self) -> &[(usize, usize)] {
        &self.active
    }

    pub fn active_index(&self, j: usize, k: usize) -> Option<usize> {
        self.active_index[j * self.n_sites + k]
    }

    pub fn distinct_gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// Gap slot of δ𝓔_pq.
    pub fn gap_index(&self, p: usize, q: usize) -> usize {
        self.gap_of[p * self.n_sites + q]
    }

    /// Combined kernel Σ_channels for active pairs `a`, `b` (indices into
    /// [`active_pairs`](Self::active_pairs)) at gap slot `g` and half step `m`.
    #[inline]
    pub fn combined(&self, a: usize, b: usize, g: usize, m: usize, mask: ChannelMask) -> C64 {
        let ng = self.gaps.len();
        let mut acc = C64::new(0.0, 0.0);
        for t in &self.recipes[a * self.active.len() + b] {
            if mask.admits(t.channel) {
                acc += self.series[t.series * ng + g][m] * t.coef;
            }
        }
        acc
    }

    fn channel_value(&self, a: (usize, usize), b: (usize, usize), p: usize, q: usize, m: usize, c: Channel) -> C64 {
        match (self.active_index(a.0, a.1), self.active_index(b.0, b.1)) {
            (Some(x), Some(y)) => {
                let mask = ChannelMask { polaron: c == Channel::Polaron, cross: c == Channel::Cross, linear: c == Channel::Linear };
                self.combined(x, y, self.gap_index(p, q), m, mask)
            }
            _ => C64::new(0.0, 0.0),
        }
    }

    /// 𝓦^{pq}_{jk,j'k'}(t_m).
    pub fn w_kernel(&self, jk: (usize, usize), jpkp: (usize, usize), p: usize, q: usize, m: usize) -> C64 {
        self.channel_value(jk, jpkp, p, q, m, Channel::Polaron)
    }

    /// 𝓨^{pq}_{j,j'k'}(t_m).
    pub fn y_kernel(&self, j: usize, jpkp: (usize, usize), p: usize, q: usize, m: usize) -> C64 {
        self.channel_value((j, j), jpkp, p, q, m, Channel::Cross)
    }

    /// 𝓧^{pq}_{jj'}(t_m).
    pub fn x_kernel(&self, j: usize, jp: usize, p: usize, q: usize, m: usize) -> C64 {
        self.channel_value((j, j), (jp, jp), p, q, m, Channel::Linear)
    }
}

/// Running ∫₀^{t_m} g on a uniform grid of spacing h with an odd number of
/// samples: Simpson's rule to even indices, a three-point partial panel to
/// odd ones.
pub fn cumulative_simpson(g: &[C64], h: f64) -> Vec<C64> {
    let n = g.len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    let mut i = 0;
    while i + 2 < n {
        let (f0, f1, f2) = (g[i], g[i + 1], g[i + 2]);
        out[i + 1] = out[i] + (f0 * 5.0 + f1 * 8.0 - f2) * (h / 12.0);
        out[i + 2] = out[i] + (f0 + f1 * 4.0 + f2) * (h / 3.0);
        i += 2;
    }
    if i + 1 < n {
        out[i + 1] = out[i] + (g[i] + g[i + 1]) * (0.5 * h);
    }
    out
}

/// Composite quadrature weights for samples 0..=m at spacing h: Simpson
/// where the interval count is even, a trailing 3/8 panel when it is odd,
/// the trapezoid for a single interval.
pub fn composite_weights(m: usize, h: f64, out: &mut Vec<f64>) {
    out.clear();
    out.resize(m + 1, 0.0);
    match m {
        0 => {}
        1 => {
            out[0] = 0.5 * h;
            out[1] = 0.5 * h;
        }
        _ => {
            let simpson_end = if m % 2 == 0 { m } else { m - 3 };
            let mut i = 0;
            while i + 2 <= simpson_end {
                out[i] += h / 3.0;
                out[i + 1] += 4.0 * h / 3.0;
                out[i + 2] += h / 3.0;
                i += 2;
            }
            if m % 2 == 1 {
                let s = simpson_end;
                out[s] += 3.0 * h / 8.0;
                out[s + 1] += 9.0 * h / 8.0;
                out[s + 2] += 9.0 * h / 8.0;
                out[s + 3] += 3.0 * h / 8.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::beta_from_temperature;
    use proptest::prelude::*;

    fn dimer_measure(weighting: WeightingFunction, t_max: f64) -> SpectralMeasure {
        let d = SpectralDensityModel::ohmic(1.0, 200.0, 2).unwrap();
        let beta = beta_from_temperature(300.0).unwrap();
        SpectralMeasure::continuum(&d, &weighting, beta, &QuadratureScheme::default(), t_max).unwrap()
    }

    fn two_state_tables(weighting: WeightingFunction) -> CorrelationTables {
        let grid = TimeGrid::new(0.5, 100.0).unwrap();
        CorrelationTables::build(&dimer_measure(weighting, grid.t_max()), grid, &[(0, 1)]).unwrap()
    }

    #[test]
    fn time_grid_layout() {
        let g = TimeGrid::new(0.1, 1000.0).unwrap();
        assert_eq!(g.n_steps, 10_000);
        assert_eq!(g.n_half(), 20_001);
        assert!((g.time(20_000) - 1000.0).abs() < 1e-9);
        assert!(TimeGrid::new(0.3, 1.0).is_err());
        assert!(TimeGrid::new(0.0, 1.0).is_err());
    }

    #[test]
    fn two_state_needs_five_functions() {
        let t = two_state_tables(WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 });
        let c = t.distinct_functions();
        assert_eq!(c, FunctionCounts { k: 1, m: 1, c: 1, f: 1, h: 1 });
        assert_eq!(t.same_series(CorrKey::M(0, 0, 1), CorrKey::M(1, 1, 0)), Some(1.0));
        assert_eq!(t.same_series(CorrKey::M(0, 0, 1), CorrKey::M(0, 1, 0)), Some(-1.0));
        assert!(t.is_zero(CorrKey::C(0, 1)));
        assert!(t.is_zero(CorrKey::H(0, 1)));
    }

    #[test]
    fn step_weighting_closes_cross_channel() {
        let t = two_state_tables(WeightingFunction::Step { omega_h: 200.0 });
        assert!(t.is_zero(CorrKey::M(0, 0, 1)));
        assert!(t.is_zero(CorrKey::H(0, 0)));
        for m in [0, 7, 100] {
            assert_eq!(t.m(m, 0, 0, 1), C64::new(0.0, 0.0));
            assert_eq!(t.h(m, 1, 1), 0.0);
        }
    }

    #[test]
    fn zero_weighting_tables() {
        let t = two_state_tables(WeightingFunction::Zero);
        for m in [0, 3, 200] {
            assert_eq!(t.k(m, 0, 1, 0, 1), C64::new(0.0, 0.0));
            assert_eq!(t.m(m, 0, 0, 1), C64::new(0.0, 0.0));
            assert_eq!(t.f(m, 0, 1, 0), C64::new(1.0, 0.0));
            assert_eq!(t.h(m, 0, 0), 0.0);
        }
        assert!(t.c(0, 0, 0).re > 0.0);
        assert_eq!(t.debye_waller(0, 1), 1.0);
    }

    #[test]
    fn symmetries_and_origin() {
        let t = two_state_tables(WeightingFunction::Smooth { omega_h: 200.0, alpha: 3.0 });
        for m in [0, 1, 50, 200] {
            let k = t.k(m, 0, 1, 0, 1);
            assert_eq!(t.k(m, 1, 0, 1, 0), k);
            assert_eq!(t.k(m, 0, 1, 1, 0), -k);
            assert_eq!(t.k(m, 1, 0, 0, 1), -k);
            assert_eq!(t.m(m, 0, 1, 0), -t.m(m, 0, 0, 1));
            assert_eq!(t.c(m, 0, 1), t.c(m, 1, 0));
            assert!((t.f(m, 0, 1, 0).norm() - 1.0).abs() < 1e-14);
            assert_eq!(t.f(m, 1, 0, 0), t.f(m, 0, 1, 0).conj());
        }
        assert_eq!(t.k(0, 0, 1, 0, 1).im, 0.0);
        assert_eq!(t.m(0, 0, 0, 1).im, 0.0);
        assert_eq!(t.c(0, 0, 0).im, 0.0);
        assert_eq!(t.f(0, 0, 1, 0), C64::new(1.0, 0.0));
    }

    #[test]
    fn debye_waller_matches_k_at_origin() {
        let t = two_state_tables(WeightingFunction::Step { omega_h: 200.0 });
        let w = (-0.5 * t.k(0, 0, 1, 0, 1).re).exp();
        assert!((w - t.debye_waller(0, 1)).abs() < 1e-12 * w);
    }

    #[test]
    fn tables_match_direct_evaluation() {
        let weighting = WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 };
        let grid = TimeGrid::new(0.5, 100.0).unwrap();
        let measure = dimer_measure(weighting, grid.t_max());
        let t = CorrelationTables::build(&measure, grid, &[(0, 1)]).unwrap();
        // index 130 is off the resync lattice, so rotation drift is exercised
        for m in [0, 63, 130, 400] {
            let tf = grid.time(m);
            let k = measure.corr_k(tf, 0, 1, 0, 1).unwrap();
            assert!((t.k(m, 0, 1, 0, 1) - k).norm() < 1e-12 * k.norm().max(1.0));
            let mm = measure.corr_m(tf, 0, 0, 1).unwrap();
            assert!((t.m(m, 0, 0, 1) - mm).norm() < 1e-11 * mm.norm().max(1.0));
            let c = measure.corr_c(tf, 1, 1).unwrap();
            assert!((t.c(m, 1, 1) - c).norm() < 1e-11 * c.norm().max(1.0));
            let f = measure.phase_f(tf, 0, 1, 1).unwrap();
            assert!((t.f(m, 0, 1, 1) - f).norm() < 1e-12);
            let h = measure.real_h(tf, 0, 0).unwrap();
            assert!((t.h(m, 0, 0) - h).abs() < 1e-11 * h.abs().max(1.0));
        }
    }

    #[test]
    fn zero_weighting_zero_temperature_c0() {
        let d = SpectralDensityModel::ohmic(1.0, 200.0, 1).unwrap();
        let m = SpectralMeasure::continuum(&d, &WeightingFunction::Zero, 1e6, &QuadratureScheme::default(), 100.0)
            .unwrap();
        let c0 = m.corr_c(0.0, 0, 0).unwrap();
        assert!((c0.re - 200.0 * 200.0).abs() < 1e-8 * 4e4, "{c0}");
        assert_eq!(c0.im, 0.0);
        let unity =
            SpectralMeasure::continuum(&d, &WeightingFunction::Unity, 1.0, &QuadratureScheme::default(), 100.0)
                .unwrap();
        assert_eq!(unity.corr_c(3.0, 0, 0).unwrap(), C64::new(0.0, 0.0));
        assert_eq!(unity.corr_m(3.0, 0, 0, 0).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn single_mode_k_is_a_phase() {
        // one mode, δg = 1, W = 1, T → 0
        let x0 = 150.0;
        let m = SpectralMeasure::discrete(&[x0], &[1.0, 0.0], 2, &WeightingFunction::Unity, 1e3).unwrap();
        for t in [0.0, 13.0, 77.7] {
            let k = m.corr_k(t, 0, 1, 0, 1).unwrap();
            let expect = C64::from_polar(1.0, -x0 * t / HBAR_CM_FS);
            assert!((k - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn ohmic_unity_weighting_diverges() {
        let d = SpectralDensityModel::ohmic(1.0, 200.0, 2).unwrap();
        let beta = beta_from_temperature(300.0).unwrap();
        let m = SpectralMeasure::continuum(&d, &WeightingFunction::Unity, beta, &QuadratureScheme::default(), 100.0)
            .unwrap();
        assert!(matches!(m.corr_k(0.0, 0, 1, 0, 1), Err(Error::DivergentIntegral { .. })));
        assert!(matches!(m.phase_f(10.0, 0, 1, 0), Err(Error::DivergentIntegral { .. })));
        let grid = TimeGrid::new(1.0, 10.0).unwrap();
        assert!(matches!(CorrelationTables::build(&m, grid, &[(0, 1)]), Err(Error::DivergentIntegral { .. })));
    }

    #[test]
    fn simpson_rules_integrate_cubics() {
        let h = 0.1;
        let g: Vec<C64> = (0..21).map(|i| C64::new((i as f64 * h).powi(3), 0.0)).collect();
        let c = cumulative_simpson(&g, h);
        for (i, v) in c.iter().enumerate().step_by(2) {
            let t = i as f64 * h;
            assert!((v.re - t.powi(4) / 4.0).abs() < 1e-12, "i={i}");
        }
        // the half-panel rule is exact for quadratics only
        let q: Vec<C64> = (0..21).map(|i| C64::new((i as f64 * h).powi(2), 0.0)).collect();
        for (i, v) in cumulative_simpson(&q, h).iter().enumerate() {
            let t = i as f64 * h;
            assert!((v.re - t.powi(3) / 3.0).abs() < 1e-12, "i={i}");
        }
        let mut w = Vec::new();
        for m in 0..12 {
            composite_weights(m, h, &mut w);
            let s: f64 = w.iter().enumerate().map(|(i, w)| w * (i as f64 * h).powi(3)).sum();
            let t = m as f64 * h;
            let tol = if m == 1 { 1e-3 } else { 1e-12 };
            assert!((s - t.powi(4) / 4.0).abs() < tol, "m={m}");
        }
    }

    #[test]
    fn kernel_recipes_integrate_the_bath_correlation() {
        let weighting = WeightingFunction::Smooth { omega_h: 150.0, alpha: 2.0 };
        let d = SpectralDensityModel::with_correlation(
            crate::bath::DensityFamily::OhmicExponential,
            0.7,
            200.0,
            3,
            vec![1.0, 0.2, 0.1, 0.2, 0.9, 0.0, 0.1, 0.0, 1.1],
        )
        .unwrap();
        let beta = beta_from_temperature(200.0).unwrap();
        let grid = TimeGrid::new(1.0, 40.0).unwrap();
        let m = SpectralMeasure::continuum(&d, &weighting, beta, &QuadratureScheme::default(), grid.t_max()).unwrap();
        let couplings = [0.0, 120.0, 0.0, 120.0, 0.0, -80.0, 0.0, -80.0, 0.0];
        let t = CorrelationTables::build(&m, grid, &[(0, 1), (1, 2)]).unwrap();
        let e = [-150.0, 20.0, 170.0];
        let k = KernelIntegrals::build(&t, &couplings, &e);
        let h = grid.half_step();
        for (ia, &a) in k.active_pairs().iter().enumerate() {
            for (ib, &b) in k.active_pairs().iter().enumerate() {
                for (p, q) in [(0, 2), (1, 1), (2, 0)] {
                    let gap = e[p] - e[q];
                    let g: Vec<C64> = (0..grid.n_half())
                        .map(|i| bath_correlation(&t, &couplings, i, a, b) * C64::from_polar(1.0, gap * grid.time(i) / HBAR_CM_FS))
                        .collect();
                    let direct = cumulative_simpson(&g, h);
                    for mm in [1, 30, 80] {
                        let v = k.combined(ia, ib, k.gap_index(p, q), mm, ChannelMask::ALL);
                        assert!((v - direct[mm]).norm() <= 1e-10 * (1.0 + direct[mm].norm()), "{a:?} {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_integrals_match_direct_quadrature() {
        let weighting = WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 };
        let t = two_state_tables(weighting);
        let couplings = [0.0, 300.0, 300.0, 0.0];
        let e = [-250.0, 250.0];
        let k = KernelIntegrals::build(&t, &couplings, &e);
        let grid = t.grid();
        for (p, q) in [(0, 1), (1, 0), (0, 0)] {
            assert_eq!(k.x_kernel(0, 0, p, q, 0), C64::new(0.0, 0.0));
            let m = grid.n_half() - 1;
            // 4x finer direct quadrature of the defining integral
            let measure = dimer_measure(weighting, grid.t_max());
            let fine = 4 * m;
            let hf = grid.t_max() / fine as f64;
            let d = e[p] - e[q];
            let g: Vec<C64> = (0..=fine)
                .map(|i| {
                    let s = i as f64 * hf;
                    measure.corr_c(s, 0, 0).unwrap() * C64::from_polar(1.0, d * s / HBAR_CM_FS)
                })
                .collect();
            let direct = *cumulative_simpson(&g, hf).last().unwrap();
            let x = k.x_kernel(0, 0, p, q, m);
            assert!((x - direct).norm() < 1e-8 * direct.norm(), "{x} vs {direct}");
        }
        // W with K ≡ 0 vanishes
        let z = two_state_tables(WeightingFunction::Zero);
        let kz = KernelIntegrals::build(&z, &couplings, &e);
        for m in [0, 10, 400] {
            assert_eq!(kz.w_kernel((0, 1), (0, 1), 0, 1, m), C64::new(0.0, 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn f_is_unimodular(t in 0.0f64..500.0, alpha in 1.5f64..5.0, wh in 50.0f64..800.0) {
            let m = dimer_measure(WeightingFunction::Smooth { omega_h: wh, alpha }, 500.0);
            let f = m.phase_f(t, 0, 1, 0).unwrap();
            prop_assert!((f.norm() - 1.0).abs() < 1e-13);
            prop_assert_eq!(m.phase_f(t, 1, 1, 0).unwrap(), C64::new(1.0, 0.0));
        }
    }
}
