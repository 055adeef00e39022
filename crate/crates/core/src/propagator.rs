//! Fixed-step RK4 integration of dS/dt = −𝓡(t)S + 𝓘(t) and conversion of
//! the interaction-picture eigenbasis state to site-basis observables.

use nalgebra::SymmetricEigen;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::correlations::{ChannelMask, CorrelationTables, KernelIntegrals};
use crate::error::{Error, Result};
use crate::inhomogeneous::{InhomOrder, InhomogeneousTerms};
use crate::polaron::{CMatrix, PolaronFrame};
use crate::relaxation::{assemble_r, RelaxationTensor};
use crate::units::HBAR_CM_FS;

/// Largest tolerated |Tr S − 1| before the run is declared failed.
pub const TRACE_DRIFT_BOUND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    /// Emit every `stride`-th step.
    pub stride: usize,
    pub inhom_order: InhomOrder,
    pub channels: ChannelMask,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self { stride: 10, inhom_order: InhomOrder::None, channels: ChannelMask::ALL }
    }
}

/// One emitted time point.
#[derive(Debug, Clone)]
pub struct Sample {
    pub t_fs: f64,
    /// Interaction-picture S_pq(t) in the eigenbasis.
    pub eigen_state: CMatrix,
    /// Schrödinger-picture σ̃(t) in the site basis.
    pub site_state: CMatrix,
    pub populations: Vec<f64>,
    pub trace: C64,
    /// max |S − S†|.
    pub hermiticity_defect: f64,
    /// Smallest eigenvalue of σ̃(t); negative values flag lost positivity.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

/// Summary diagnostics over a whole trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryDiagnostics {
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    pub max_population_imaginary: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t_fs).collect()
    }

    /// P_j(t) over all samples.
    pub fn population(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.populations[j]).collect()
    }

    pub fn diagnostics(&self) -> TrajectoryDiagnostics {
        let mut d = TrajectoryDiagnostics {
            max_trace_drift: 0.0,
            max_hermiticity_defect: 0.0,
            min_eigenvalue: f64::INFINITY,
            max_population_imaginary: 0.0,
        };
        for s in &self.samples {
            d.max_trace_drift = d.max_trace_drift.max((s.trace - 1.0).norm());
            d.max_hermiticity_defect = d.max_hermiticity_defect.max(s.hermiticity_defect);
            d.min_eigenvalue = d.min_eigenvalue.min(s.min_eigenvalue);
            for j in 0..s.site_state.nrows() {
                d.max_population_imaginary = d.max_population_imaginary.max(s.site_state[(j, j)].im.abs());
            }
        }
        d
    }

    /// Depth of the first population minimum of site `j` below the mean of
    /// the second half of the trajectory.
    pub fn coherence_metric(&self, j: usize) -> f64 {
        coherence_metric(&self.population(j))
    }
}

/// S(0) = Uᵀ(w∘σ(0))U: the reduced state of the transformed initial
/// density σ(0)ρ_b.
pub fn initial_state(frame: &PolaronFrame, sigma0: &CMatrix) -> CMatrix {
    let n = frame.n_sites();
    let dressed = CMatrix::from_fn(n, n, |j, k| sigma0[(j, k)] * frame.w(j, k));
    frame.to_eigenbasis(&dressed)
}

/// σ̃(t) = U (e^{−iδ𝓔_pq t/ħ} S_pq) Uᵀ and its diagonal.
pub fn to_site_basis(s: &CMatrix, t_fs: f64, frame: &PolaronFrame) -> (CMatrix, Vec<f64>) {
    let n = frame.n_sites();
    let rotated = CMatrix::from_fn(n, n, |p, q| s[(p, q)] * C64::from_polar(1.0, -frame.gap(p, q) * t_fs / HBAR_CM_FS));
    let site = frame.to_site_basis(&rotated);
    let pops = (0..n).map(|j| site[(j, j)].re).collect();
    (site, pops)
}

/// max(0, late mean − value at the first local minimum); zero when the
/// series never turns upward.
pub fn coherence_metric(p: &[f64]) -> f64 {
    if p.len() < 3 {
        return 0.0;
    }
    let late = &p[p.len() / 2..];
    let mean = late.iter().sum::<f64>() / late.len() as f64;
    for i in 1..p.len() - 1 {
        if p[i] < p[i - 1] && p[i] <= p[i + 1] {
            return (mean - p[i]).max(0.0);
        }
    }
    0.0
}

fn sample(t: f64, s: &CMatrix, frame: &PolaronFrame) -> Sample {
    let (site, populations) = to_site_basis(s, t, frame);
    let hermitian = (&site + site.adjoint()) * C64::new(0.5, 0.0);
    let min_eigenvalue = SymmetricEigen::new(hermitian).eigenvalues.min();
    Sample {
        t_fs: t,
        eigen_state: s.clone(),
        trace: s.trace(),
        hermiticity_defect: (s - s.adjoint()).iter().fold(0.0, |a, v| a.max(v.norm())),
        site_state: site,
        populations,
        min_eigenvalue,
    }
}

/// Integrates from S(0) over the whole table grid.
pub fn propagate(
    frame: &PolaronFrame,
    tables: &CorrelationTables,
    kernels: &KernelIntegrals,
    sigma0: &CMatrix,
    options: &PropagationOptions,
) -> Result<Trajectory> {
    let n = frame.n_sites();
    if sigma0.nrows() != n || sigma0.ncols() != n {
        return Err(Error::config("run.initial_matrix", format!("must be {n}×{n}")));
    }
    if options.stride == 0 {
        return Err(Error::config("run.stride", "must be at least 1"));
    }
    let grid = kernels.grid();
    let dt = grid.dt_fs;
    let inhom = (options.inhom_order > InhomOrder::None).then(|| InhomogeneousTerms::new(frame, tables, sigma0));

    let rates = |m: usize| -> (RelaxationTensor, CMatrix) {
        let r = assemble_r(m, frame, kernels, options.channels);
        let mut i = CMatrix::zeros(n, n);
        if let Some(terms) = &inhom {
            i += terms.inhom1(m);
            if options.inhom_order == InhomOrder::Second {
                i += terms.inhom2(m);
            }
        }
        (r, i)
    };
    let deriv = |(r, i): &(RelaxationTensor, CMatrix), s: &CMatrix| -> CMatrix { i - r.apply(s) };

    let mut s = initial_state(frame, sigma0);
    let mut traj = Trajectory { samples: vec![sample(0.0, &s, frame)] };
    let mut at_start = rates(0);
    for step in 0..grid.n_steps {
        let mid = rates(2 * step + 1);
        let end = rates(2 * step + 2);
        let k1 = deriv(&at_start, &s);
        let k2 = deriv(&mid, &(&s + &k1 * C64::new(0.5 * dt, 0.0)));
        let k3 = deriv(&mid, &(&s + &k2 * C64::new(0.5 * dt, 0.0)));
        let k4 = deriv(&end, &(&s + &k3 * C64::new(dt, 0.0)));
        let next = &s + (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0);

        let t_prev = grid.time(2 * step);
        if next.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::IntegrationFailure { last_good_time_fs: t_prev, reason: "state is not finite".into() });
        }
        let drift = (next.trace() - 1.0).norm();
        if drift > TRACE_DRIFT_BOUND {
            return Err(Error::IntegrationFailure {
                last_good_time_fs: t_prev,
                reason: format!("trace drifted by {drift:.3e}"),
            });
        }
        s = next;
        at_start = end;
        if (step + 1) % options.stride == 0 || step + 1 == grid.n_steps {
            traj.samples.push(sample(grid.time(2 * step + 2), &s, frame));
        }
    }
    Ok(traj)
}
