//! Self-contained invariant and oracle suite reported by `ppqme validate`.

use std::fmt;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::bath::{DensityFamily, QuadratureScheme, SpectralDensityModel, WeightingFunction};
use crate::correlations::{
    bath_correlation, ChannelMask, CorrelationSource, CorrelationTables, KernelIntegrals, SpectralMeasure, TimeGrid,
};
use crate::error::Result;
use crate::inhomogeneous::{InhomOrder, InhomogeneousTerms};
use crate::model::{Engine, InitialState, ModelSpec};
use crate::oracle::{
    discretize, inhom1_reference, redfield_tensor, DiscreteBath, DiscreteCorrelations, FockSpaceModel,
    DEFAULT_DIMENSION_BOUND,
};
use crate::polaron::{build_frame, CMatrix, SiteHamiltonian};
use crate::propagator::PropagationOptions;
use crate::relaxation::{assemble_r, assemble_r_two_state};
use crate::units::beta_from_temperature;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn record(&mut self, name: &str, residual: f64, tolerance: f64) {
        let passed = residual.is_finite() && residual <= tolerance;
        self.checks.push(Check { name: name.to_string(), passed, residual, tolerance });
    }

    fn record_error(&mut self, name: &str, e: crate::error::Error) {
        self.checks.push(Check { name: format!("{name} ({e})"), passed: false, residual: f64::NAN, tolerance: 0.0 });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<52} residual {:>10.3e}  tolerance {:.1e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.residual,
                c.tolerance
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Test hooks for negative controls.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationOptions {
    /// Overwrite the stored w_12 so that the w-consistency check must fail.
    pub corrupt_debye_waller: bool,
}

fn dimer_spec(weighting: WeightingFunction) -> Result<ModelSpec> {
    Ok(ModelSpec {
        hamiltonian: SiteHamiltonian::from_pairs(vec![0.0, 0.0], &[(0, 1, 300.0)])?,
        density: SpectralDensityModel::ohmic(1.0, 200.0, 2)?,
        weighting,
        temperature_k: 300.0,
        quadrature: QuadratureScheme::default(),
        allow_divergent_alpha: false,
    })
}

fn max_norm(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.norm()))
}

/// Runs every check; failures are recorded, never raised.
pub fn run_suite(options: ValidationOptions) -> ValidationReport {
    let mut r = ValidationReport::default();
    type Step = fn(&mut ValidationReport, ValidationOptions) -> Result<()>;
    let steps: [(&str, Step); 8] = [
        ("correlation tables", tables_checks),
        ("frame", frame_checks),
        ("relaxation tensor", tensor_checks),
        ("untransformed limit", redfield_checks),
        ("trajectory", trajectory_checks),
        ("discrete bath", discrete_checks),
        ("Fock-space bath", fock_checks),
        ("exact dynamics", dynamics_checks),
    ];
    for (name, step) in steps {
        if let Err(e) = step(&mut r, options) {
            r.record_error(name, e);
        }
    }
    r
}

fn tables_checks(r: &mut ValidationReport, options: ValidationOptions) -> Result<()> {
    let spec = dimer_spec(WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 })?;
    let grid = TimeGrid::new(0.5, 200.0)?;
    let measure = spec.measure(grid.t_max())?;
    let mut t = CorrelationTables::build(&measure, grid, &[(0, 1)])?;
    if options.corrupt_debye_waller {
        let w = t.debye_waller(0, 1);
        t.corrupt_debye_waller(0, 1, 0.5 * w);
    }
    let (mut sym, mut modulus) = (0.0_f64, 0.0_f64);
    for m in 0..grid.n_half() {
        let k = t.k(m, 0, 1, 0, 1);
        for v in [t.k(m, 1, 0, 1, 0) - k, t.k(m, 0, 1, 1, 0) + k, t.k(m, 1, 0, 0, 1) + k] {
            sym = sym.max(v.norm());
        }
        for j in 0..2 {
            sym = sym.max((t.m(m, j, 0, 1) + t.m(m, j, 1, 0)).norm());
            modulus = modulus.max((t.f(m, 0, 1, j).norm() - 1.0).abs());
        }
        sym = sym.max((t.c(m, 0, 1) - t.c(m, 1, 0)).norm());
    }
    r.record("K, M, C index symmetries", sym, 1e-14);
    r.record("f unit modulus", modulus, 1e-14);
    let im0 = [t.k(0, 0, 1, 0, 1).im, t.m(0, 0, 0, 1).im, t.c(0, 0, 0).im].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    r.record("Im K, M, C at t = 0", im0, 1e-14);
    let from_k = (-0.5 * t.k(0, 0, 1, 0, 1).re).exp();
    r.record("w consistency exp(-K(0)/2) = w", (from_k - t.debye_waller(0, 1)).abs(), 1e-12);
    Ok(())
}

fn frame_checks(r: &mut ValidationReport, _: ValidationOptions) -> Result<()> {
    let d = SpectralDensityModel::ohmic(0.6, 180.0, 3)?;
    let w = WeightingFunction::Smooth { omega_h: 150.0, alpha: 3.0 };
    let m = SpectralMeasure::continuum(&d, &w, beta_from_temperature(250.0)?, &QuadratureScheme::default(), 100.0)?;
    let h = SiteHamiltonian::from_pairs(vec![200.0, 0.0, 90.0], &[(0, 1, 60.0), (1, 2, -35.0), (0, 2, 12.0)])?;
    let f = build_frame(&h, &m)?;
    r.record("U orthogonality", f.orthogonality_defect(), 1e-12);
    r.record("U diagonalizes the zeroth-order Hamiltonian", f.reconstruction_defect(), 1e-10);
    Ok(())
}

fn tensor_checks(r: &mut ValidationReport, _: ValidationOptions) -> Result<()> {
    let grid = TimeGrid::new(0.5, 100.0)?;
    let mut two_state = 0.0_f64;
    let mut invariants = 0.0_f64;
    for (oh, alpha) in [(40.0, 2.0), (200.0, 3.0), (700.0, 4.0)] {
        let spec = dimer_spec(WeightingFunction::Smooth { omega_h: oh, alpha })?;
        let sigma0 = InitialState::Site(0).matrix(2)?;
        let e = Engine::build(&spec, grid, &sigma0)?;
        for m in [3, 77, 400] {
            let general = e.relaxation(m);
            let special = assemble_r_two_state(m, e.frame(), e.tables(), e.kernels())?;
            two_state = two_state.max(general.max_abs_diff(&special) / general.max_abs().max(1e-300));
            invariants = invariants.max(general.trace_defect().max(general.conj_symmetry_defect()) / general.max_abs());
        }
    }
    r.record("two-state tensor = general tensor (relative)", two_state, 1e-12);
    r.record("tensor trace-free and conjugate-symmetric", invariants, 1e-12);

    let spec = dimer_spec(WeightingFunction::Step { omega_h: 200.0 })?;
    let e = Engine::build(&spec, grid, &InitialState::Site(0).matrix(2)?)?;
    let mut add = 0.0_f64;
    let mut cross = 0.0_f64;
    for m in [10, 200, 400] {
        let all = assemble_r(m, e.frame(), e.kernels(), ChannelMask::ALL);
        let parts = &assemble_r(m, e.frame(), e.kernels(), ChannelMask::POLARON)
            + &assemble_r(m, e.frame(), e.kernels(), ChannelMask::LINEAR);
        add = add.max(all.max_abs_diff(&parts) / all.max_abs());
        cross = cross.max(assemble_r(m, e.frame(), e.kernels(), ChannelMask::CROSS).max_abs());
    }
    r.record("step weighting: R = R_PT + R_linear (relative)", add, 1e-12);
    r.record("step weighting: cross channel", cross, 0.0);
    Ok(())
}

fn redfield_checks(r: &mut ValidationReport, _: ValidationOptions) -> Result<()> {
    let spec = dimer_spec(WeightingFunction::Zero)?;
    let grid = TimeGrid::new(0.5, 60.0)?;
    let mut sigma0 = InitialState::Site(0).matrix(2)?;
    sigma0[(0, 1)] = C64::new(0.2, 0.1);
    sigma0[(1, 0)] = C64::new(0.2, -0.1);
    let e = Engine::build(&spec, grid, &sigma0)?;
    let mut worst = 0.0_f64;
    for m in [2, 64, 240] {
        let reference = redfield_tensor(e.frame(), e.measure(), grid.half_step(), m)?;
        worst = worst.max(e.relaxation(m).max_abs_diff(&reference));
    }
    r.record("W = 0 Redfield equivalence (fs^-1)", worst, 1e-10);
    let terms = InhomogeneousTerms::new(e.frame(), e.tables(), &sigma0);
    let inh = [10, 240].iter().fold(0.0_f64, |a, &m| a.max(max_norm(&terms.inhom1(m))).max(max_norm(&terms.inhom2(m))));
    r.record("W = 0 inhomogeneous terms", inh, 1e-14);
    Ok(())
}

fn trajectory_checks(r: &mut ValidationReport, _: ValidationOptions) -> Result<()> {
    let spec = dimer_spec(WeightingFunction::Step { omega_h: 200.0 })?;
    let grid = TimeGrid::new(0.1, 300.0)?;
    let sigma0 = InitialState::Site(0).matrix(2)?;
    let e = Engine::build(&spec, grid, &sigma0)?;
    let tr = e.propagate(&sigma0, &PropagationOptions::default())?;
    let d = tr.diagnostics();
    r.record("trace drift", d.max_trace_drift, 1e-8);
    r.record("Hermiticity defect", d.max_hermiticity_defect, 1e-10);

    let sigma1 = InitialState::Site(1).matrix(2)?;
    let e1 = Engine::build(&spec, grid, &sigma1)?;
    let swapped = e1.propagate(&sigma1, &PropagationOptions::default())?;
    let ex = tr
        .population(0)
        .iter()
        .zip(swapped.population(1))
        .fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()));
    r.record("exchange symmetry P1 <-> P2", ex, 1e-12);
    Ok(())
}

fn discrete_checks(r: &mut ValidationReport, _: ValidationOptions) -> Result<()> {
    let beta = beta_from_temperature(300.0)?;
    let d = SpectralDensityModel::ohmic(1.0, 200.0, 2)?;
    let w = WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 };
    let bath = discretize(&d, &w, 2000)?;
    r.record("discretization sum rule (relative)", (bath.first_moment(0, 0) / 200.0 - 1.0).abs(), 1e-6);
    let dc = DiscreteCorrelations::new(&bath, &w, beta)?;
    let m = SpectralMeasure::continuum(&d, &w, beta, &QuadratureScheme::default(), 500.0)?;
    let times: Vec<f64> = (0..=100).map(|i| 5.0 * i as f64).collect();
    let mut worst = 0.0_f64;
    let mut compare = |f: &dyn Fn(f64) -> Result<(C64, C64)>| -> Result<()> {
        let mut scale = 0.0_f64;
        let mut err = 0.0_f64;
        for &t in &times {
            let (a, b) = f(t)?;
            scale = scale.max(a.norm());
            err = err.max((a - b).norm());
        }
        worst = worst.max(err / scale);
        Ok(())
    };
    compare(&|t| Ok((m.corr_k(t, 0, 1, 0, 1)?, dc.k(t, 0, 1, 0, 1))))?;
    compare(&|t| Ok((m.corr_m(t, 0, 0, 1)?, dc.m(t, 0, 0, 1))))?;
    compare(&|t| Ok((m.corr_c(t, 0, 0)?, dc.c(t, 0, 0))))?;
    compare(&|t| Ok((m.phase_f(t, 0, 1, 0)?, dc.f(t, 0, 1, 0))))?;
    compare(&|t| Ok((C64::new(m.real_h(t, 0, 0)?, 0.0), C64::new(dc.h(t, 0, 0), 0.0))))?;
    r.record("continuum vs 2000-bin discrete correlations", worst, 1e-3);
    Ok(())
}

fn small_bath() -> Result<DiscreteBath> {
    DiscreteBath::new(vec![150.0, 300.0], vec![0.1, -0.05, 0.05, 0.1], 2)
}

fn fock_checks(r: &mut ValidationReport, _: ValidationOptions) -> Result<()> {
    let bath = DiscreteBath::new(vec![150.0, 300.0], vec![0.35, -0.1, 0.15, 0.3], 2)?;
    let beta = beta_from_temperature(77.0)?;
    let w = WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 };
    let f = FockSpaceModel::new(&bath, 12, &w, beta)?;
    let dc = DiscreteCorrelations::new(&bath, &w, beta)?;
    r.record("theta unitarity", f.unitarity_defect(0).max(f.unitarity_defect(1)), 1e-10);
    r.record("[b, b+] = 1 below the cutoff", f.commutator_defect(), 1e-12);
    r.record("Fock w_12 vs closed form", (f.debye_waller(0, 1) - dc.ln_w(0, 1).exp()).norm(), 1e-8);

    let couplings = [0.0, 80.0, 80.0, 0.0];
    let pairs = [(0, 0), (1, 1), (0, 1), (1, 0)];
    let mut worst = 0.0_f64;
    for t in [0.0, 40.0, 130.0] {
        for a in pairs {
            for b in pairs {
                let exact = f.b_correlation(&couplings, t, a, b);
                worst = worst.max((exact - bath_correlation(&dc, &couplings, t, a, b)).norm() / (1.0 + exact.norm()));
            }
        }
    }
    r.record("bath correlation vs Fock trace", worst, 1e-7);

    let measure = bath.measure(&w, beta)?;
    let h = SiteHamiltonian::from_pairs(vec![120.0, 0.0], &[(0, 1, 80.0)])?;
    let frame = build_frame(&h, &measure)?;
    let grid = TimeGrid::new(2.0, 40.0)?;
    let tables = CorrelationTables::build(&measure, grid, &[(0, 1)])?;
    let mut sigma0 = CMatrix::zeros(2, 2);
    sigma0[(0, 0)] = C64::new(0.6, 0.0);
    sigma0[(1, 1)] = C64::new(0.4, 0.0);
    sigma0[(0, 1)] = C64::new(0.2, 0.3);
    sigma0[(1, 0)] = C64::new(0.2, -0.3);
    let terms = InhomogeneousTerms::new(&frame, &tables, &sigma0);
    let mut worst = 0.0_f64;
    for m in [7, 40] {
        let reference = inhom1_reference(&frame, &f, &sigma0, grid.time(m));
        worst = worst.max(max_norm(&(terms.inhom1(m) - &reference)) / max_norm(&reference));
    }
    r.record("first-order inhomogeneous term vs Fock traces", worst, 1e-6);
    Ok(())
}

fn dynamics_checks(r: &mut ValidationReport, _: ValidationOptions) -> Result<()> {
    let bath = small_bath()?;
    let beta = beta_from_temperature(77.0)?;
    let w = WeightingFunction::Smooth { omega_h: 200.0, alpha: 2.0 };
    let h = SiteHamiltonian::from_pairs(vec![50.0, 0.0], &[(0, 1, 100.0)])?;
    let sigma0 = InitialState::Site(0).matrix(2)?;
    let f = FockSpaceModel::new(&bath, 8, &w, beta)?;
    let e = Engine::from_measure(&h, bath.measure(&w, beta)?, TimeGrid::new(0.5, 500.0)?, &sigma0)?;
    let opts = PropagationOptions { stride: 4, inhom_order: InhomOrder::First, ..Default::default() };
    let tr = e.propagate(&sigma0, &opts)?;
    let exact = f.exact_populations(&h, &sigma0, &tr.times(), DEFAULT_DIMENSION_BOUND)?;
    let dev = tr.population(0).iter().zip(&exact).fold(0.0_f64, |a, (p, x)| a.max((p - x[0]).abs()));
    r.record("p-PQME vs exact Fock dynamics (2 modes)", dev, 0.05);
    let trace = exact.iter().fold(0.0_f64, |a, p| a.max((p.iter().sum::<f64>() - 1.0).abs()));
    r.record("exact dynamics trace", trace, 1e-10);

    let super_ohmic = SpectralDensityModel::independent(DensityFamily::SuperOhmicCubic, 1.0, 200.0, 2)?;
    let m = SpectralMeasure::continuum(&super_ohmic, &WeightingFunction::Unity, beta_from_temperature(300.0)?, &QuadratureScheme::default(), 50.0)?;
    let grid = TimeGrid::new(0.5, 50.0)?;
    let t = CorrelationTables::build(&m, grid, &[(0, 1)])?;
    let k = KernelIntegrals::build(&t, &[0.0, 300.0, 300.0, 0.0], &[-100.0, 100.0]);
    let f = build_frame(&SiteHamiltonian::from_pairs(vec![0.0, 0.0], &[(0, 1, 300.0)])?, &m)?;
    let mut closed = 0.0_f64;
    for mm in 0..grid.n_half() {
        closed = closed.max(t.m(mm, 0, 0, 1).norm()).max(t.c(mm, 0, 0).norm()).max(t.c(mm, 0, 1).norm());
    }
    closed = closed.max(assemble_r(100, &f, &k, ChannelMask { polaron: false, ..ChannelMask::ALL }).max_abs());
    r.record("W = 1 super-Ohmic: only polaron channels", closed, 1e-14);
    Ok(())
}
