//! Site Hamiltonian and the partial-polaron frame: renormalized energies,
//! Debye-Waller factors, renormalized couplings and the eigenbasis of the
//! zeroth-order system Hamiltonian.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::correlations::SpectralMeasure;
use crate::error::{Error, Result};

/// Complex N×N matrix used for density matrices and their derivatives.
pub type CMatrix = DMatrix<C64>;

/// H_s = Σ E_j |j⟩⟨j| + Σ J_jk |j⟩⟨k|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteHamiltonian {
    energies: Vec<f64>,
    couplings: Vec<f64>,
}

impl SiteHamiltonian {
    /// `couplings` is row-major N×N, symmetric with zero diagonal.
    pub fn new(energies: Vec<f64>, couplings: Vec<f64>) -> Result<Self> {
        let n = energies.len();
        if n == 0 {
            return Err(Error::config("system.n_sites", "at least one site is required"));
        }
        if couplings.len() != n * n {
            return Err(Error::config("system.couplings", "coupling matrix has the wrong size"));
        }
        if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
            return Err(Error::config("system.energies_cm1", format!("non-finite energy {e}")));
        }
        for j in 0..n {
            if couplings[j * n + j] != 0.0 {
                return Err(Error::config("system.couplings", format!("site {} couples to itself", j + 1)));
            }
            for k in 0..n {
                let v = couplings[j * n + k];
                if !v.is_finite() {
                    return Err(Error::config("system.couplings", "non-finite coupling"));
                }
                if v != couplings[k * n + j] {
                    return Err(Error::config(
                        "system.couplings",
                        format!("J_{}{} differs from J_{}{}", j + 1, k + 1, k + 1, j + 1),
                    ));
                }
            }
        }
        Ok(Self { energies, couplings })
    }

    /// From a list of (j, k, J_jk) with 0-based indices; each pair sets both
    /// J_jk and J_kj.
    pub fn from_pairs(energies: Vec<f64>, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let n = energies.len();
        let mut couplings = vec![0.0; n * n];
        for &(j, k, v) in pairs {
            if j >= n || k >= n {
                return Err(Error::config(
                    "system.couplings",
                    format!("pair ({}, {}) outside 1..={n}", j + 1, k + 1),
                ));
            }
            if j == k {
                return Err(Error::config("system.couplings", format!("site {} couples to itself", j + 1)));
            }
            couplings[j * n + k] = v;
            couplings[k * n + j] = v;
        }
        Self::new(energies, couplings)
    }

    pub fn n_sites(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, j: usize) -> f64 {
        self.energies[j]
    }

    /// Row-major coupling matrix.
    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn coupling(&self, j: usize, k: usize) -> f64 {
        self.couplings[j * self.n_sites() + k]
    }

    /// Unordered coupled pairs (j < k, J_jk ≠ 0).
    pub fn coupled_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_sites();
        let mut out = Vec::new();
        for j in 0..n {
            for k in (j + 1)..n {
                if self.coupling(j, k) != 0.0 {
                    out.push((j, k));
                }
            }
        }
        out
    }

    /// Same Hamiltonian with sites relabelled: new site i is old site perm[i].
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_sites();
        let energies = perm.iter().map(|&p| self.energies[p]).collect();
        let mut couplings = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                couplings[a * n + b] = self.coupling(perm[a], perm[b]);
            }
        }
        Self::new(energies, couplings)
    }
}

/// Debye-Waller factor w_jk = ⟨θ_j†θ_k⟩.
pub fn debye_waller(measure: &SpectralMeasure, j: usize, k: usize) -> Result<f64> {
    Ok(measure.ln_debye_waller(j, k)?.exp())
}

/// Ẽ_j = E_j − Σ ħω g² W(2 − W).
pub fn renormalized_energy(h: &SiteHamiltonian, measure: &SpectralMeasure, j: usize) -> Result<f64> {
    Ok(h.energy(j) - measure.energy_shift(j)?)
}

/// The partial-polaron frame of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolaronFrame {
    n_sites: usize,
    pub site_energies: Vec<f64>,
    pub renormalized_energies: Vec<f64>,
    /// Row-major N×N, unit diagonal.
    pub debye_waller: Vec<f64>,
    #[serde(skip)]
    ln_w: Vec<f64>,
    pub couplings: Vec<f64>,
    pub renormalized_couplings: Vec<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Row-major, U[j·N + p] = ⟨j|φ_p⟩.
    pub eigenvectors: Vec<f64>,
}

/// Builds H̃_{0,s} and diagonalizes it.
pub fn build_frame(h: &SiteHamiltonian, measure: &SpectralMeasure) -> Result<PolaronFrame> {
    let n = h.n_sites();
    if measure.n_sites() != n {
        return Err(Error::config(
            "bath",
            format!("bath describes {} sites but the system has {n}", measure.n_sites()),
        ));
    }
    let mut shifts = Vec::with_capacity(n);
    for j in 0..n {
        shifts.push(measure.energy_shift(j)?);
    }
    let mut ln_w = vec![0.0; n * n];
    for j in 0..n {
        for k in (j + 1)..n {
            let v = measure.ln_debye_waller(j, k)?;
            ln_w[j * n + k] = v;
            ln_w[k * n + j] = v;
        }
    }
    Ok(frame_from_parts(h, &shifts, ln_w))
}

/// Frame from precomputed polaron shifts and ln w.
pub fn frame_from_parts(h: &SiteHamiltonian, shifts: &[f64], ln_w: Vec<f64>) -> PolaronFrame {
    let n = h.n_sites();
    let renormalized_energies: Vec<f64> = (0..n).map(|j| h.energy(j) - shifts[j]).collect();
    let debye_waller: Vec<f64> = ln_w.iter().map(|v| v.exp()).collect();
    let renormalized_couplings: Vec<f64> =
        h.couplings().iter().zip(&debye_waller).map(|(j, w)| j * w).collect();

    let h0 = DMatrix::from_fn(n, n, |a, b| if a == b { renormalized_energies[a] } else { renormalized_couplings[a * n + b] });
    let (eigenvalues, eigenvectors) = sorted_eigen(h0);
    PolaronFrame {
        n_sites: n,
        site_energies: h.energies().to_vec(),
        renormalized_energies,
        debye_waller,
        ln_w,
        couplings: h.couplings().to_vec(),
        renormalized_couplings,
        eigenvalues,
        eigenvectors,
    }
}

/// Eigenpairs in ascending order; the largest-magnitude component of each
/// eigenvector is positive.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut u = vec![0.0; n * n];
    for (p, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let mut big = 0;
        for j in 1..n {
            // ties go to the lower site index
            if col[j].abs() > col[big].abs() * (1.0 + 1e-12) {
                big = j;
            }
        }
        let s = if col[big] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            u[j * n + p] = s * col[j];
        }
    }
    (values, u)
}

impl PolaronFrame {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// U_jp.
    #[inline]
    pub fn u(&self, j: usize, p: usize) -> f64 {
        self.eigenvectors[j * self.n_sites + p]
    }

    pub fn w(&self, j: usize, k: usize) -> f64 {
        self.debye_waller[j * self.n_sites + k]
    }

    pub fn ln_w(&self, j: usize, k: usize) -> f64 {
        self.ln_w[j * self.n_sites + k]
    }

    pub fn coupling(&self, j: usize, k: usize) -> f64 {
        self.couplings[j * self.n_sites + k]
    }

    pub fn renormalized_coupling(&self, j: usize, k: usize) -> f64 {
        self.renormalized_couplings[j * self.n_sites + k]
    }

    /// δ𝓔_pq = 𝓔_p − 𝓔_q.
    #[inline]
    pub fn gap(&self, p: usize, q: usize) -> f64 {
        self.eigenvalues[p] - self.eigenvalues[q]
    }

    pub fn u_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_sites, self.n_sites, &self.eigenvectors)
    }

    /// H̃_{0,s} in the site basis.
    pub fn zeroth_order_hamiltonian(&self) -> DMatrix<f64> {
        let n = self.n_sites;
        DMatrix::from_fn(n, n, |a, b| {
            if a == b {
                self.renormalized_energies[a]
            } else {
                self.renormalized_couplings[a * n + b]
            }
        })
    }

    /// max |UᵀU − I|.
    pub fn orthogonality_defect(&self) -> f64 {
        let u = self.u_matrix();
        let n = self.n_sites;
        (u.transpose() * &u - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// max |U diag(𝓔) Uᵀ − H̃_{0,s}| in cm⁻¹.
    pub fn reconstruction_defect(&self) -> f64 {
        let u = self.u_matrix();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.eigenvalues.clone()));
        (&u * d * u.transpose() - self.zeroth_order_hamiltonian()).amax()
    }

    /// Uᵀ σ U.
    pub fn to_eigenbasis(&self, sigma: &CMatrix) -> CMatrix {
        let u = self.u_matrix().map(|v| C64::new(v, 0.0));
        u.transpose() * sigma * u
    }

    /// U S Uᵀ.
    pub fn to_site_basis(&self, s: &CMatrix) -> CMatrix {
        let u = self.u_matrix().map(|v| C64::new(v, 0.0));
        &u * s * u.transpose()
    }
}

/// The two-state frame in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoStateFrame {
    /// Mixing angle η.
    pub mixing_angle: f64,
    /// 𝓔₁ (the + branch) and 𝓔₂.
    pub energies: [f64; 2],
    /// U[j][p].
    pub u: [[f64; 2]; 2],
}

/// Closed-form diagonalization of [[Ẽ₁, Jw], [Jw, Ẽ₂]], with
/// |φ₁⟩ = cos η|1⟩ + sin η|2⟩ and |φ₂⟩ = −sin η|1⟩ + cos η|2⟩.
pub fn two_state_closed_form(e1: f64, e2: f64, coupling: f64, w: f64) -> TwoStateFrame {
    let c = coupling * w;
    let mean = 0.5 * (e1 + e2);
    let delta = e1 - e2;
    let (eta, energies) = if delta == 0.0 {
        if c == 0.0 {
            (0.0, [e1, e2])
        } else {
            let eta = std::f64::consts::FRAC_PI_4.copysign(c);
            (eta, [mean + c.abs(), mean - c.abs()])
        }
    } else {
        let eta = 0.5 * (2.0 * c / delta).atan();
        let half = 0.5 * delta / (2.0 * eta).cos();
        (eta, [mean + half, mean - half])
    };
    let (s, co) = eta.sin_cos();
    TwoStateFrame { mixing_angle: eta, energies, u: [[co, -s], [s, co]] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{QuadratureScheme, SpectralDensityModel, WeightingFunction};
    use crate::units::beta_from_temperature;

    fn measure(weighting: WeightingFunction) -> SpectralMeasure {
        let d = SpectralDensityModel::ohmic(1.0, 200.0, 2).unwrap();
        let beta = beta_from_temperature(300.0).unwrap();
        SpectralMeasure::continuum(&d, &weighting, beta, &QuadratureScheme::default(), 100.0).unwrap()
    }

    fn dimer(e1: f64, e2: f64, j: f64) -> SiteHamiltonian {
        SiteHamiltonian::from_pairs(vec![e1, e2], &[(0, 1, j)]).unwrap()
    }

    #[test]
    fn hamiltonian_validation() {
        assert!(SiteHamiltonian::new(vec![0.0, 0.0], vec![0.0, 1.0, 2.0, 0.0]).unwrap_err().is_config());
        assert!(SiteHamiltonian::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(SiteHamiltonian::from_pairs(vec![0.0], &[(0, 0, 1.0)]).is_err());
        assert!(SiteHamiltonian::from_pairs(vec![0.0, 1.0], &[(0, 2, 1.0)]).is_err());
        let h = dimer(0.0, 100.0, 50.0);
        assert_eq!(h.coupling(1, 0), 50.0);
        assert_eq!(h.coupled_pairs(), vec![(0, 1)]);
    }

    #[test]
    fn debye_waller_conventions() {
        let m = measure(WeightingFunction::Step { omega_h: 200.0 });
        assert_eq!(debye_waller(&m, 0, 0).unwrap(), 1.0);
        let w = debye_waller(&m, 0, 1).unwrap();
        assert!(w > 0.0 && w < 1.0, "w = {w}");
        assert_eq!(debye_waller(&measure(WeightingFunction::Zero), 0, 1).unwrap(), 1.0);
    }

    #[test]
    fn debye_waller_increases_with_smooth_cutoff() {
        let mut last = 0.0;
        for oh in [50.0, 100.0, 200.0, 400.0, 800.0] {
            let w = debye_waller(&measure(WeightingFunction::Smooth { omega_h: oh, alpha: 2.0 }), 0, 1).unwrap();
            assert!(w > last, "ω_h = {oh}: {w} after {last}");
            last = w;
        }
    }

    #[test]
    fn renormalized_energy_limits() {
        let h = dimer(1000.0, 0.0, 300.0);
        assert_eq!(renormalized_energy(&h, &measure(WeightingFunction::Zero), 0).unwrap(), 1000.0);
        let e = renormalized_energy(&h, &measure(WeightingFunction::Unity), 0).unwrap();
        assert!((e - 800.0).abs() < 1e-8, "{e}");
        let m = measure(WeightingFunction::Smooth { omega_h: 150.0, alpha: 3.0 });
        let (a, b) = (renormalized_energy(&h, &m, 0).unwrap(), renormalized_energy(&h, &m, 1).unwrap());
        assert!(a < 1000.0);
        assert!(((a - b) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_dimer_frame() {
        let m = measure(WeightingFunction::Step { omega_h: 200.0 });
        let f = build_frame(&dimer(0.0, 0.0, 300.0), &m).unwrap();
        let w = f.w(0, 1);
        let e = f.renormalized_energies[0];
        assert!((f.eigenvalues[0] - (e - 300.0 * w)).abs() < 1e-10);
        assert!((f.eigenvalues[1] - (e + 300.0 * w)).abs() < 1e-10);
        for j in 0..2 {
            for p in 0..2 {
                assert!((f.u(j, p).abs() - 0.5f64.sqrt()).abs() < 1e-12);
            }
        }
        assert!(f.orthogonality_defect() < 1e-12);
        assert!(f.reconstruction_defect() < 1e-10);
        assert_eq!(f.gap(0, 1), -f.gap(1, 0));
    }

    #[test]
    fn uncoupled_frame_is_identity() {
        let m = measure(WeightingFunction::Step { omega_h: 200.0 });
        let f = build_frame(&dimer(500.0, -100.0, 0.0), &m).unwrap();
        assert_eq!(f.u_matrix(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert!(f.eigenvalues[0] < f.eigenvalues[1]);
    }

    #[test]
    fn zero_weighting_gives_bare_frame() {
        let h = dimer(100.0, -50.0, 80.0);
        let f = build_frame(&h, &measure(WeightingFunction::Zero)).unwrap();
        assert_eq!(f.renormalized_energies, h.energies());
        assert_eq!(f.renormalized_couplings, h.couplings());
        let bare = frame_from_parts(&h, &[0.0, 0.0], vec![0.0; 4]);
        assert_eq!(f.eigenvalues, bare.eigenvalues);
        assert_eq!(f.eigenvectors, bare.eigenvectors);
    }

    #[test]
    fn step_splitting_is_twice_renormalized_coupling() {
        let m = measure(WeightingFunction::Step { omega_h: 20.0 });
        let f = build_frame(&dimer(0.0, 0.0, 300.0), &m).unwrap();
        let w = debye_waller(&m, 0, 1).unwrap();
        assert!((f.gap(1, 0) - 600.0 * w).abs() < 1e-9);
    }

    #[test]
    fn closed_form_matches_eigensolver() {
        // fixed pseudo-random instances
        let mut s: u64 = 0x2545_f491_4f6c_dd1d;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let (e1, e2) = (1000.0 * (next() - 0.5), 1000.0 * (next() - 0.5));
            let (j, w) = (600.0 * (next() - 0.5), 0.05 + 0.95 * next());
            let c = two_state_closed_form(e1, e2, j, w);
            let f = frame_from_parts(&dimer(e1, e2, j), &[0.0, 0.0], vec![0.0, w.ln(), w.ln(), 0.0]);
            let mut ce = c.energies;
            ce.sort_by(f64::total_cmp);
            for p in 0..2 {
                assert!((ce[p] - f.eigenvalues[p]).abs() < 1e-12 * 1000.0, "{ce:?} {:?}", f.eigenvalues);
            }
            // match columns by eigenvalue
            for cp in 0..2 {
                let p = if (c.energies[cp] - f.eigenvalues[0]).abs() < (c.energies[cp] - f.eigenvalues[1]).abs() { 0 } else { 1 };
                for jj in 0..2 {
                    assert!((c.u[jj][cp].abs() - f.u(jj, p).abs()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn closed_form_limits() {
        let c = two_state_closed_form(1e6, 0.0, 1.0, 1.0);
        assert!(c.mixing_angle.abs() < 1e-5);
        assert!((c.u[0][0] - 1.0).abs() < 1e-10);
        let c = two_state_closed_form(10.0, 10.0, 300.0, 0.5);
        assert_eq!(c.energies, [160.0, -140.0]);
        assert!((c.mixing_angle - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let c = two_state_closed_form(10.0, 10.0, -300.0, 0.5);
        assert_eq!(c.energies, [160.0, -140.0]);
    }

    #[test]
    fn basis_round_trip() {
        let m = measure(WeightingFunction::Step { omega_h: 200.0 });
        let f = build_frame(&dimer(100.0, 0.0, 300.0), &m).unwrap();
        let sigma = CMatrix::from_row_slice(2, 2, &[C64::new(0.7, 0.0), C64::new(0.1, 0.2), C64::new(0.1, -0.2), C64::new(0.3, 0.0)]);
        let back = f.to_site_basis(&f.to_eigenbasis(&sigma));
        assert!((back - sigma).iter().all(|v| v.norm() < 1e-15));
    }
}
