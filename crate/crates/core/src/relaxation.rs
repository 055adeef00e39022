//! The relaxation tensor 𝓡_pq^{p'q'}(t) acting on the interaction-picture
//! density matrix S(t) as dS/dt = −𝓡S + 𝓘.

use num_complex::Complex64 as C64;

use crate::correlations::{ChannelMask, CorrKey, CorrelationTables, KernelIntegrals};
use crate::error::{Error, Result};
use crate::polaron::{CMatrix, PolaronFrame};
use crate::units::HBAR_CM_FS;

/// Dense N²×N² tensor, element (p, q, p', q') at ((p·N + q)·N + p')·N + q'.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationTensor {
    n: usize,
    data: Vec<C64>,
}

impl RelaxationTensor {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![C64::new(0.0, 0.0); n * n * n * n] }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, p: usize, q: usize, pp: usize, qp: usize) -> usize {
        ((p * self.n + q) * self.n + pp) * self.n + qp
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, pp: usize, qp: usize) -> C64 {
        self.data[self.idx(p, q, pp, qp)]
    }

    pub fn set(&mut self, p: usize, q: usize, pp: usize, qp: usize, v: C64) {
        let i = self.idx(p, q, pp, qp);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// (𝓡S)_pq = Σ 𝓡_pq^{p'q'} S_p'q'.
    pub fn apply(&self, s: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                let row = &self.data[(p * n + q) * n * n..(p * n + q + 1) * n * n];
                let mut acc = C64::new(0.0, 0.0);
                for pp in 0..n {
                    for qp in 0..n {
                        acc += row[pp * n + qp] * s[(pp, qp)];
                    }
                }
                out[(p, q)] = acc;
            }
        }
        out
    }

    /// max over (p', q') of |Σ_p 𝓡_pp^{p'q'}|.
    pub fn trace_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for pp in 0..n {
            for qp in 0..n {
                let s: C64 = (0..n).map(|p| self.get(p, p, pp, qp)).sum();
                worst = worst.max(s.norm());
            }
        }
        worst
    }

    /// max |𝓡_qp^{q'p'} − conj 𝓡_pq^{p'q'}|.
    pub fn conj_symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for p in 0..n {
            for q in 0..n {
                for pp in 0..n {
                    for qp in 0..n {
                        worst = worst.max((self.get(q, p, qp, pp) - self.get(p, q, pp, qp).conj()).norm());
                    }
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.norm()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n);
        self.data.iter().zip(&other.data).fold(0.0, |a, (x, y)| a.max((x - y).norm()))
    }
}

impl std::ops::Add for &RelaxationTensor {
    type Output = RelaxationTensor;

    fn add(self, rhs: Self) -> RelaxationTensor {
        assert_eq!(self.n, rhs.n);
        RelaxationTensor { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

#[inline]
fn phase(gap: f64, t: f64) -> C64 {
    C64::from_polar(1.0, gap * t / HBAR_CM_FS)
}

/// Adds the conjugate-swapped block to the one-sided tensor R1.
fn symmetrize(n: usize, r1: Vec<C64>) -> RelaxationTensor {
    let mut r = RelaxationTensor { n, data: r1.clone() };
    for p in 0..n {
        for q in 0..n {
            for pp in 0..n {
                for qp in 0..n {
                    let i = r.idx(p, q, pp, qp);
                    let k = r.idx(q, p, qp, pp);
                    r.data[i] += r1[k].conj();
                }
            }
        }
    }
    r
}

/// 𝓡(t_m) for any N from the channels selected by `mask`.
pub fn assemble_r(m: usize, frame: &PolaronFrame, kernels: &KernelIntegrals, mask: ChannelMask) -> RelaxationTensor {
    let n = frame.n_sites();
    let t = kernels.grid().time(m);
    let active = kernels.active_pairs();
    let na = active.len();
    let u = |j: usize, p: usize| frame.u(j, p);

    // Z[a][x][p'] = Σ_b U_j'x U_k'p' Γ_ab^{p'x}
    let mut z = vec![C64::new(0.0, 0.0); na * n * n];
    for a in 0..na {
        for x in 0..n {
            for pp in 0..n {
                let g = kernels.gap_index(pp, x);
                let mut acc = C64::new(0.0, 0.0);
                for (b, &(jp, kp)) in active.iter().enumerate() {
                    let c = u(jp, x) * u(kp, pp);
                    if c != 0.0 {
                        acc += kernels.combined(a, b, g, m, mask) * c;
                    }
                }
                z[(a * n + x) * n + pp] = acc;
            }
        }
    }

    // F1[p][p'] = Σ_a Σ_r U_jp U_kr Z[a][r][p']
    let mut f1 = vec![C64::new(0.0, 0.0); n * n];
    for p in 0..n {
        for pp in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for (a, &(j, k)) in active.iter().enumerate() {
                for r in 0..n {
                    acc += z[(a * n + r) * n + pp] * (u(j, p) * u(k, r));
                }
            }
            f1[p * n + pp] = acc;
        }
    }

    let scale = 1.0 / (HBAR_CM_FS * HBAR_CM_FS);
    let mut r1 = vec![C64::new(0.0, 0.0); n * n * n * n];
    for p in 0..n {
        for q in 0..n {
            for pp in 0..n {
                let e_pp = phase(frame.gap(p, pp), t);
                for qp in 0..n {
                    // F2 = Σ_a U_jq' U_kq Z[a][p][p']
                    let mut f2 = C64::new(0.0, 0.0);
                    for (a, &(j, k)) in active.iter().enumerate() {
                        f2 += z[(a * n + p) * n + pp] * (u(j, qp) * u(k, q));
                    }
                    let mut v = -phase(frame.gap(p, pp) - frame.gap(q, qp), t) * f2;
                    if q == qp {
                        v += e_pp * f1[p * n + pp];
                    }
                    r1[((p * n + q) * n + pp) * n + qp] = v * scale;
                }
            }
        }
    }
    symmetrize(n, r1)
}

/// Two-state coefficient tensors built from U.
struct TwoStateCoefficients {
    u: [[f64; 2]; 2],
}

impl TwoStateCoefficients {
    fn a(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let u = &self.u;
        u[0][p] * u[0][q] * u[0][r] * u[0][s] + u[1][p] * u[1][q] * u[1][r] * u[1][s]
    }

    fn b1(&self, p: usize, q: usize) -> f64 {
        self.u[0][p] * self.u[0][q] - self.u[1][p] * self.u[1][q]
    }

    fn b2(&self, p: usize, q: usize) -> f64 {
        self.u[0][p] * self.u[1][q] - self.u[1][p] * self.u[0][q]
    }

    fn c1(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let u = &self.u;
        u[0][p] * u[1][q] * u[0][r] * u[1][s] + u[1][p] * u[0][q] * u[1][r] * u[0][s]
    }

    fn c2(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let u = &self.u;
        u[0][p] * u[1][q] * u[1][r] * u[0][s] + u[1][p] * u[0][q] * u[0][r] * u[1][s]
    }
}

/// Checks that the tables describe two sites with independent identical
/// baths, the precondition of the two-state form.
pub fn check_two_state(tables: &CorrelationTables) -> Result<()> {
    if tables.n_sites() != 2 {
        return Err(Error::Model(format!("the two-state form needs N = 2, got {}", tables.n_sites())));
    }
    let same = |a, b| tables.same_series(a, b) == Some(1.0);
    let identical = same(CorrKey::C(0, 0), CorrKey::C(1, 1))
        && tables.is_zero(CorrKey::C(0, 1))
        && tables.is_zero(CorrKey::H(0, 1))
        && same(CorrKey::H(0, 0), CorrKey::H(1, 1));
    let coupled = tables.pairs().is_empty() || same(CorrKey::M(0, 0, 1), CorrKey::M(1, 1, 0));
    if !identical || !coupled {
        return Err(Error::Model("the two-state form needs independent identical baths on both sites".into()));
    }
    Ok(())
}

/// 𝓡(t_m) for N = 2 through the 𝓐, 𝓑, 𝓒 coefficient form.
pub fn assemble_r_two_state(
    m: usize,
    frame: &PolaronFrame,
    tables: &CorrelationTables,
    kernels: &KernelIntegrals,
) -> Result<RelaxationTensor> {
    check_two_state(tables)?;
    let t = kernels.grid().time(m);
    let co = TwoStateCoefficients { u: [[frame.u(0, 0), frame.u(0, 1)], [frame.u(1, 0), frame.u(1, 1)]] };
    let x = |p, q| kernels.x_kernel(0, 0, p, q, m);
    let y = |p, q| kernels.y_kernel(0, (0, 1), p, q, m);
    let wm = |p, q| kernels.w_kernel((0, 1), (0, 1), p, q, m);
    let wp = |p, q| kernels.w_kernel((0, 1), (1, 0), p, q, m);

    let scale = 1.0 / (HBAR_CM_FS * HBAR_CM_FS);
    let mut r1 = vec![C64::new(0.0, 0.0); 16];
    for p in 0..2 {
        for q in 0..2 {
            for pp in 0..2 {
                for qp in 0..2 {
                    let mut v = C64::new(0.0, 0.0);
                    if q == qp {
                        let mut s = C64::new(0.0, 0.0);
                        for r in 0..2 {
                            s += x(pp, r) * co.a(p, r, r, pp)
                                + y(pp, r) * (co.b1(p, r) * co.b2(r, pp) - co.b2(p, r) * co.b1(r, pp))
                                + wm(pp, r) * co.c1(p, r, r, pp)
                                + wp(pp, r) * co.c2(p, r, r, pp);
                        }
                        v += phase(frame.gap(p, pp), t) * s;
                    }
                    let s = x(pp, p) * co.a(qp, q, p, pp)
                        + y(pp, p) * (co.b1(qp, q) * co.b2(p, pp) - co.b2(qp, q) * co.b1(p, pp))
                        + wm(pp, p) * co.c1(qp, q, p, pp)
                        + wp(pp, p) * co.c2(qp, q, p, pp);
                    v -= phase(frame.gap(p, pp) - frame.gap(q, qp), t) * s;
                    r1[((p * 2 + q) * 2 + pp) * 2 + qp] = v * scale;
                }
            }
        }
    }
    Ok(symmetrize(2, r1))
}
