//! First- and second-order inhomogeneous terms, which carry the correlation
//! between system and bath in the transformed initial state.
//!
//! The bath factors are generic over [`CorrelationSource`] so that the same
//! closed forms can be evaluated from tables or from direct mode sums.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::correlations::{composite_weights, CorrelationSource, CorrelationTables};
use crate::polaron::{CMatrix, PolaronFrame};
use crate::units::HBAR_CM_FS;

/// Which inhomogeneous terms enter the propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum InhomOrder {
    #[default]
    None,
    First,
    Second,
}

impl InhomOrder {
    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            0 => Some(Self::None),
            1 => Some(Self::First),
            2 => Some(Self::Second),
            _ => None,
        }
    }

    pub fn level(self) -> u8 {
        match self {
            Self::None => 0,
            Self::First => 1,
            Self::Second => 2,
        }
    }
}

type Pair = (usize, usize);

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// f_{jk,k'}(t)·e^{−𝓚_{jk,j'k'}(t)} scaled by exp(ln_scale), formed in logs so
/// that tiny Debye-Waller factors do not overflow the exponential.
fn dressed<S: CorrelationSource>(src: &S, t: S::Time, a: Pair, c: Pair, ln_scale: f64) -> C64 {
    let k = src.k(t, a.0, a.1, c.0, c.1);
    src.f(t, a.0, a.1, c.1) * (C64::new(ln_scale, 0.0) - k).exp()
}

/// F^{j''k''}_{jk,j'k'}(t, τ).
pub fn kernel_f<S: CorrelationSource>(src: &S, t: S::Time, tau: S::Time, a: Pair, b: Pair, c: Pair) -> C64 {
    let ln3 = src.ln_w(a.0, a.1) + src.ln_w(b.0, b.1) + src.ln_w(c.0, c.1);
    let kab = src.k(src.elapsed(t, tau), a.0, a.1, b.0, b.1);
    let fa = src.f(t, a.0, a.1, c.1);
    let fb = src.f(tau, b.0, b.1, c.1);
    let kac = src.k(t, a.0, a.1, c.0, c.1);
    let kbc = src.k(tau, b.0, b.1, c.0, c.1);
    let l = C64::new(ln3, 0.0);
    fa * fb * (l - kab - kac - kbc).exp() - (l - kab).exp() - fa * (l - kac).exp() - fb * (l - kbc).exp()
        + 2.0 * ln3.exp()
}

/// H^{(1),j''k''}_{j,j'k'}(t, τ), cm⁻¹.
pub fn kernel_h1<S: CorrelationSource>(src: &S, t: S::Time, tau: S::Time, j: usize, b: Pair, c: Pair) -> C64 {
    let ln2 = src.ln_w(b.0, b.1) + src.ln_w(c.0, c.1);
    let left = dressed(src, tau, b, c, ln2) - ln2.exp();
    let right = src.m(src.elapsed(t, tau), j, b.0, b.1) + src.m(t, j, c.0, c.1) + src.h(t, j, c.1);
    left * right
}

/// Tr_b{(θ_j†(t)θ_k(t) − w_jk) D_j'(τ) δρ̃_{j''k''}}, cm⁻¹: the third channel
/// of the second-order bath trace.
pub fn kernel_h2<S: CorrelationSource>(src: &S, t: S::Time, tau: S::Time, a: Pair, jp: usize, c: Pair) -> C64 {
    let ln2 = src.ln_w(a.0, a.1) + src.ln_w(c.0, c.1);
    let left = dressed(src, t, a, c, ln2) - ln2.exp();
    let right = src.m(src.elapsed(t, tau), jp, a.1, a.0) + src.m(tau, jp, c.0, c.1) + src.h(tau, jp, c.1);
    left * right
}

/// The third channel with the time-τ factor written as 𝓜*_{j',k''j''}(τ) +
/// h_{j',j''}(τ); mode by mode this equals the form used in [`kernel_h2`].
pub fn kernel_h2_alternative<S: CorrelationSource>(
    src: &S,
    t: S::Time,
    tau: S::Time,
    a: Pair,
    jp: usize,
    c: Pair,
) -> C64 {
    let ln2 = src.ln_w(a.0, a.1) + src.ln_w(c.0, c.1);
    let left = dressed(src, t, a, c, ln2) - ln2.exp();
    let right = src.m(src.elapsed(t, tau), jp, a.1, a.0) + src.m(tau, jp, c.1, c.0).conj() + src.h(tau, jp, c.0);
    left * right
}

/// L^{j''k''}_{j,j'}(t, τ), cm⁻².
pub fn kernel_l<S: CorrelationSource>(src: &S, t: S::Time, tau: S::Time, j: usize, jp: usize, c: Pair) -> C64 {
    let w = src.ln_w(c.0, c.1).exp();
    (src.m(t, j, c.0, c.1) + src.h(t, j, c.1)) * (src.m(tau, jp, c.0, c.1) + src.h(tau, jp, c.1)) * w
}

/// Tr_b{B̃_jk(t) δρ̃_{j'k'}}, cm⁻¹. `couplings` is the bare row-major J.
pub fn bath_inhom1<S: CorrelationSource>(src: &S, couplings: &[f64], t: S::Time, a: Pair, b: Pair) -> C64 {
    let n = src.n_sites();
    let mut v = zero();
    let jab = couplings[a.0 * n + a.1];
    if jab != 0.0 {
        let ln2 = src.ln_w(a.0, a.1) + src.ln_w(b.0, b.1);
        v += (dressed(src, t, a, b, ln2) - ln2.exp()) * jab;
    }
    if a.0 == a.1 {
        v += (src.m(t, a.0, b.0, b.1) + src.h(t, a.0, b.1)) * src.ln_w(b.0, b.1).exp();
    }
    v
}

/// Tr_b{B̃_jk(t) B̃_j'k'(τ) δρ̃_{j''k''}}, cm⁻².
pub fn bath_inhom2<S: CorrelationSource>(
    src: &S,
    couplings: &[f64],
    t: S::Time,
    tau: S::Time,
    a: Pair,
    b: Pair,
    c: Pair,
) -> C64 {
    let n = src.n_sites();
    let ja = couplings[a.0 * n + a.1];
    let jb = couplings[b.0 * n + b.1];
    let (da, db) = (a.0 == a.1, b.0 == b.1);
    let mut v = zero();
    if ja != 0.0 && jb != 0.0 {
        v += kernel_f(src, t, tau, a, b, c) * (ja * jb);
    }
    if da && jb != 0.0 {
        v += kernel_h1(src, t, tau, a.0, b, c) * jb;
    }
    if ja != 0.0 && db {
        v += kernel_h2(src, t, tau, a, b.0, c) * ja;
    }
    if da && db {
        v += kernel_l(src, t, tau, a.0, b.0, c);
    }
    v
}

/// Evaluates 𝓘⁽¹⁾(t) and 𝓘⁽²⁾(t) in the eigenbasis on the table grid for a
/// fixed initial site-basis state σ(0).
pub struct InhomogeneousTerms<'a> {
    frame: &'a PolaronFrame,
    tables: &'a CorrelationTables,
    n: usize,
    /// Pairs (j, k) with j = k or J_jk ≠ 0.
    active: Vec<Pair>,
    /// Pairs (j'', k'') with σ_j''k''(0) ≠ 0, and their values.
    initial: Vec<(Pair, C64)>,
    /// Uᵀ|j⟩⟨k|U for every pair, row-major by pair.
    projectors: Vec<CMatrix>,
}

impl<'a> InhomogeneousTerms<'a> {
    /// The tables must cover every coupled pair and every pair with a
    /// nonzero initial coherence.
    pub fn new(frame: &'a PolaronFrame, tables: &'a CorrelationTables, sigma0: &CMatrix) -> Self {
        let n = frame.n_sites();
        let mut active = Vec::new();
        let mut initial = Vec::new();
        let mut projectors = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                if j == k || frame.coupling(j, k) != 0.0 {
                    active.push((j, k));
                }
                if sigma0[(j, k)] != zero() {
                    initial.push(((j, k), sigma0[(j, k)]));
                }
                projectors.push(CMatrix::from_fn(n, n, |p, q| C64::new(frame.u(j, p) * frame.u(k, q), 0.0)));
            }
        }
        Self { frame, tables, n, active, initial, projectors }
    }

    /// T_jk(t) in the eigenbasis.
    fn transition(&self, a: Pair, t: f64) -> CMatrix {
        let f = self.frame;
        CMatrix::from_fn(self.n, self.n, |p, q| {
            C64::from_polar(f.u(a.0, p) * f.u(a.1, q), f.gap(p, q) * t / HBAR_CM_FS)
        })
    }

    fn projector(&self, a: Pair) -> &CMatrix {
        &self.projectors[a.0 * self.n + a.1]
    }

    /// 𝓘⁽¹⁾ at half step m.
    pub fn inhom1(&self, m: usize) -> CMatrix {
        let n = self.n;
        let t = self.tables.grid().time(m);
        let couplings = &self.frame.couplings;
        let mut out = CMatrix::zeros(n, n);
        for &a in &self.active {
            let mut acc = CMatrix::zeros(n, n);
            for &(b, s) in &self.initial {
                let v = bath_inhom1(self.tables, couplings, m, a, b);
                if v != zero() {
                    acc += self.projector(b) * (v * s);
                }
            }
            let ta = self.transition(a, t);
            out += &ta * &acc - &acc * &ta;
        }
        out * C64::new(0.0, -1.0 / HBAR_CM_FS)
    }

    /// 𝓘⁽²⁾ at half step m; costs O(m).
    pub fn inhom2(&self, m: usize) -> CMatrix {
        let n = self.n;
        if m == 0 {
            return CMatrix::zeros(n, n);
        }
        let grid = self.tables.grid();
        let t = grid.time(m);
        let couplings = &self.frame.couplings;
        let mut weights = Vec::new();
        composite_weights(m, grid.half_step(), &mut weights);

        // phases e^{iδ𝓔_pa τ_i/ħ}
        let phases: Vec<Vec<C64>> = (0..n * n)
            .map(|pa| {
                let gap = self.frame.gap(pa / n, pa % n);
                (0..=m).map(|i| C64::from_polar(weights[i], gap * grid.time(i) / HBAR_CM_FS)).collect()
            })
            .collect();

        let mut y = CMatrix::zeros(n, n);
        let mut bath = vec![zero(); m + 1];
        for &a in &self.active {
            let ta = self.transition(a, t);
            for &b in &self.active {
                for &(c, s) in &self.initial {
                    let mut any = false;
                    for (i, v) in bath.iter_mut().enumerate() {
                        *v = bath_inhom2(self.tables, couplings, m, i, a, b, c);
                        any |= *v != zero();
                    }
                    if !any {
                        continue;
                    }
                    let theta = CMatrix::from_fn(n, n, |p, q| {
                        let phi: C64 = bath.iter().zip(&phases[p * n + q]).map(|(v, e)| v * e).sum();
                        phi * (self.frame.u(b.0, p) * self.frame.u(b.1, q))
                    });
                    let inner = theta * self.projector(c) * s;
                    y += &ta * &inner - &inner * &ta;
                }
            }
        }
        let total = &y + y.adjoint();
        total * C64::new(-1.0 / (HBAR_CM_FS * HBAR_CM_FS), 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{QuadratureScheme, SpectralDensityModel, WeightingFunction};
    use crate::correlations::{SpectralMeasure, TimeGrid};
    use crate::polaron::{build_frame, SiteHamiltonian};
    use crate::units::beta_from_temperature;

    fn setup(weighting: WeightingFunction, t_max: f64) -> (PolaronFrame, CorrelationTables) {
        let h = SiteHamiltonian::from_pairs(vec![100.0, 0.0], &[(0, 1, 300.0)]).unwrap();
        let d = SpectralDensityModel::ohmic(1.0, 200.0, 2).unwrap();
        let beta = beta_from_temperature(300.0).unwrap();
        let grid = TimeGrid::new(0.5, t_max).unwrap();
        let m = SpectralMeasure::continuum(&d, &weighting, beta, &QuadratureScheme::default(), t_max).unwrap();
        let frame = build_frame(&h, &m).unwrap();
        let tables = CorrelationTables::build(&m, grid, &[(0, 1)]).unwrap();
        (frame, tables)
    }

    fn site_one() -> CMatrix {
        CMatrix::from_fn(2, 2, |a, b| if a == 0 && b == 0 { C64::new(1.0, 0.0) } else { zero() })
    }

    fn mixed() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[C64::new(0.6, 0.0), C64::new(0.2, 0.1), C64::new(0.2, -0.1), C64::new(0.4, 0.0)])
    }

    #[test]
    fn order_levels_round_trip() {
        for l in 0..3 {
            assert_eq!(InhomOrder::from_level(l).unwrap().level(), l);
        }
        assert!(InhomOrder::from_level(3).is_none());
    }

    #[test]
    fn kernels_vanish_without_transformation() {
        let (_, t) = setup(WeightingFunction::Zero, 20.0);
        let c = [0.0, 300.0, 300.0, 0.0];
        for &(a, b, cc) in &[((0, 1), (1, 0), (0, 1)), ((0, 0), (0, 1), (1, 0)), ((1, 1), (0, 0), (1, 1))] {
            assert!(kernel_f(&t, 30, 10, a, b, cc).norm() <= 1e-14);
            assert!(kernel_h1(&t, 30, 10, 0, b, cc).norm() <= 1e-14);
            assert!(kernel_h2(&t, 30, 10, a, 1, cc).norm() <= 1e-14);
            assert!(kernel_l(&t, 30, 10, 0, 1, cc).norm() <= 1e-14);
            assert!(bath_inhom2(&t, &c, 30, 10, a, b, cc).norm() <= 1e-14);
            assert!(bath_inhom1(&t, &c, 30, a, b).norm() <= 1e-14);
        }
    }

    #[test]
    fn f_vanishes_for_diagonal_pairs() {
        let (_, t) = setup(WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 }, 20.0);
        assert!(kernel_f(&t, 30, 10, (0, 0), (1, 1), (0, 1)).norm() < 1e-14);
    }

    #[test]
    fn step_and_unity_weighting_close_linear_channels() {
        let (_, t) = setup(WeightingFunction::Step { omega_h: 200.0 }, 20.0);
        assert!(kernel_h1(&t, 30, 10, 0, (0, 1), (1, 0)).norm() < 1e-14);
        assert!(kernel_h2(&t, 30, 10, (0, 1), 1, (1, 0)).norm() < 1e-14);
        assert!(kernel_l(&t, 30, 10, 0, 1, (0, 0)).norm() < 1e-14);

        let d = SpectralDensityModel::independent(crate::bath::DensityFamily::SuperOhmicCubic, 0.2, 200.0, 2).unwrap();
        let beta = beta_from_temperature(300.0).unwrap();
        let m = SpectralMeasure::continuum(&d, &WeightingFunction::Unity, beta, &QuadratureScheme::default(), 20.0).unwrap();
        let t = CorrelationTables::build(&m, TimeGrid::new(0.5, 20.0).unwrap(), &[(0, 1)]).unwrap();
        assert_eq!(kernel_h1(&t, 30, 10, 0, (0, 1), (1, 0)), zero());
        assert_eq!(kernel_l(&t, 30, 10, 0, 1, (0, 1)), zero());
    }

    #[test]
    fn l_kernel_factorizes() {
        let (_, t) = setup(WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 }, 20.0);
        let c = (0, 1);
        let a = kernel_l(&t, 30, 10, 0, 1, c) * kernel_l(&t, 25, 4, 0, 1, c);
        let b = kernel_l(&t, 30, 4, 0, 1, c) * kernel_l(&t, 25, 10, 0, 1, c);
        assert!((a - b).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn inhomogeneous_terms_are_traceless_and_hermitian() {
        let (frame, tables) = setup(WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 }, 20.0);
        for sigma in [site_one(), mixed()] {
            let terms = InhomogeneousTerms::new(&frame, &tables, &sigma);
            for m in [1, 17, 40] {
                let i1 = terms.inhom1(m);
                let i2 = terms.inhom2(m);
                assert!(i1.norm() > 0.0 && i2.norm() > 0.0);
                assert!(i1.trace().norm() < 1e-12 * i1.norm());
                assert!(i2.trace().norm() < 1e-12 * i2.norm());
                assert!((&i1 - i1.adjoint()).norm() < 1e-12 * i1.norm());
                assert!((&i2 - i2.adjoint()).norm() < 1e-12 * i2.norm());
            }
        }
    }

    #[test]
    fn inhomogeneous_terms_vanish_without_transformation() {
        let (frame, tables) = setup(WeightingFunction::Zero, 20.0);
        let terms = InhomogeneousTerms::new(&frame, &tables, &mixed());
        for m in [0, 9, 40] {
            assert!(terms.inhom1(m).iter().all(|v| v.norm() <= 1e-14));
            assert!(terms.inhom2(m).iter().all(|v| v.norm() <= 1e-14));
        }
    }

    #[test]
    fn second_order_term_is_zero_at_origin() {
        let (frame, tables) = setup(WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 }, 20.0);
        let terms = InhomogeneousTerms::new(&frame, &tables, &site_one());
        assert_eq!(terms.inhom2(0).norm(), 0.0);
    }
}
