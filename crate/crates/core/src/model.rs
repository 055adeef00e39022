//! One-stop construction of everything a run needs: frame, correlation
//! tables and kernel integrals for a model on a time grid.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::bath::{QuadratureScheme, SpectralDensityModel, WeightingFunction};
use crate::correlations::{CorrelationTables, KernelIntegrals, SpectralMeasure, TimeGrid};
use crate::error::{Error, Result};
use crate::polaron::{build_frame, CMatrix, PolaronFrame, SiteHamiltonian};
use crate::propagator::{propagate, PropagationOptions, Trajectory};
use crate::relaxation::{assemble_r, RelaxationTensor};
use crate::units::beta_from_temperature;

/// Physical model and numerical quadrature settings.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub hamiltonian: SiteHamiltonian,
    pub density: SpectralDensityModel,
    pub weighting: WeightingFunction,
    pub temperature_k: f64,
    pub quadrature: QuadratureScheme,
    pub allow_divergent_alpha: bool,
}

impl ModelSpec {
    pub fn beta(&self) -> Result<f64> {
        beta_from_temperature(self.temperature_k)
    }

    /// Continuum measure covering phases up to `t_max_fs`.
    pub fn measure(&self, t_max_fs: f64) -> Result<SpectralMeasure> {
        if self.density.n_sites() != self.hamiltonian.n_sites() {
            return Err(Error::config(
                "bath",
                format!(
                    "bath covers {} sites but the system has {}",
                    self.density.n_sites(),
                    self.hamiltonian.n_sites()
                ),
            ));
        }
        self.weighting.ensure_supported(&self.density, self.allow_divergent_alpha)?;
        SpectralMeasure::continuum(&self.density, &self.weighting, self.beta()?, &self.quadrature, t_max_fs)
    }
}

/// Site-basis σ(0).
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// |j⟩⟨j|, 0-based.
    Site(usize),
    Matrix(CMatrix),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Site(0)
    }
}

impl InitialState {
    /// The density matrix, checked for shape, unit trace and Hermiticity.
    pub fn matrix(&self, n: usize) -> Result<CMatrix> {
        match self {
            InitialState::Site(j) => {
                if *j >= n {
                    return Err(Error::config("run.initial_site", format!("must be in 1..={n}, got {}", j + 1)));
                }
                let mut m = CMatrix::zeros(n, n);
                m[(*j, *j)] = C64::new(1.0, 0.0);
                Ok(m)
            }
            InitialState::Matrix(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::config("run.initial_matrix", format!("must be {n}×{n}")));
                }
                if (m.trace() - 1.0).norm() > 1e-10 {
                    return Err(Error::config("run.initial_matrix", format!("trace is {}, not 1", m.trace())));
                }
                if (m - m.adjoint()).iter().any(|v| v.norm() > 1e-12) {
                    return Err(Error::config("run.initial_matrix", "must be Hermitian"));
                }
                Ok(m.clone())
            }
        }
    }
}

/// Frame, tables and kernels for one model, weighting and grid.
#[derive(Debug, Clone)]
pub struct Engine {
    hamiltonian: SiteHamiltonian,
    measure: SpectralMeasure,
    frame: PolaronFrame,
    tables: CorrelationTables,
    kernels: KernelIntegrals,
}

/// Summary of the frame for run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct FrameSummary {
    pub renormalized_energies_cm1: Vec<f64>,
    pub debye_waller: Vec<Vec<f64>>,
    pub renormalized_couplings_cm1: Vec<Vec<f64>>,
    pub eigenvalues_cm1: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub orthogonality_defect: f64,
    pub reconstruction_defect: f64,
}

impl Engine {
    /// Tables cover every coupled pair and every pair with a nonzero
    /// coherence in `sigma0`.
    pub fn build(spec: &ModelSpec, grid: TimeGrid, sigma0: &CMatrix) -> Result<Self> {
        let measure = spec.measure(grid.t_max())?;
        Self::from_measure(&spec.hamiltonian, measure, grid, sigma0)
    }

    pub fn from_measure(
        hamiltonian: &SiteHamiltonian,
        measure: SpectralMeasure,
        grid: TimeGrid,
        sigma0: &CMatrix,
    ) -> Result<Self> {
        let n = hamiltonian.n_sites();
        if measure.n_sites() != n {
            return Err(Error::config("bath", "bath and system site counts differ"));
        }
        let frame = build_frame(hamiltonian, &measure)?;
        let mut pairs = hamiltonian.coupled_pairs();
        for j in 0..n.min(sigma0.nrows()) {
            for k in 0..n.min(sigma0.ncols()) {
                if j != k && sigma0[(j, k)] != C64::new(0.0, 0.0) {
                    pairs.push((j, k));
                }
            }
        }
        let tables = CorrelationTables::build(&measure, grid, &pairs)?;
        let kernels = KernelIntegrals::build(&tables, hamiltonian.couplings(), &frame.eigenvalues);
        Ok(Self { hamiltonian: hamiltonian.clone(), measure, frame, tables, kernels })
    }

    pub fn hamiltonian(&self) -> &SiteHamiltonian {
        &self.hamiltonian
    }

    pub fn measure(&self) -> &SpectralMeasure {
        &self.measure
    }

    pub fn frame(&self) -> &PolaronFrame {
        &self.frame
    }

    pub fn tables(&self) -> &CorrelationTables {
        &self.tables
    }

    pub fn kernels(&self) -> &KernelIntegrals {
        &self.kernels
    }

    pub fn grid(&self) -> TimeGrid {
        self.tables.grid()
    }

    /// 𝓡 at half step m with every channel.
    pub fn relaxation(&self, m: usize) -> RelaxationTensor {
        assemble_r(m, &self.frame, &self.kernels, crate::correlations::ChannelMask::ALL)
    }

    pub fn propagate(&self, sigma0: &CMatrix, options: &PropagationOptions) -> Result<Trajectory> {
        propagate(&self.frame, &self.tables, &self.kernels, sigma0, options)
    }

    pub fn frame_summary(&self) -> FrameSummary {
        let f = &self.frame;
        let n = f.n_sites();
        let grid = |g: &dyn Fn(usize, usize) -> f64| (0..n).map(|j| (0..n).map(|k| g(j, k)).collect()).collect();
        FrameSummary {
            renormalized_energies_cm1: f.renormalized_energies.clone(),
            debye_waller: grid(&|j, k| f.w(j, k)),
            renormalized_couplings_cm1: grid(&|j, k| f.renormalized_coupling(j, k)),
            eigenvalues_cm1: f.eigenvalues.clone(),
            eigenvectors: grid(&|j, p| f.u(j, p)),
            orthogonality_defect: f.orthogonality_defect(),
            reconstruction_defect: f.reconstruction_defect(),
        }
    }
}
