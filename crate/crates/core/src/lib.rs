//! Partially polaron-transformed second-order master equation for
//! excitonic systems coupled to harmonic baths.
//!
//! Energies are in cm⁻¹ and times in fs throughout.
//!
//! Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod correlations;
pub mod error;
pub mod inhomogeneous;
pub mod model;
pub mod oracle;
pub mod polaron;
pub mod propagator;
pub mod relaxation;
pub mod units;
pub mod validate;

pub use bath::{DensityFamily, QuadratureScheme, SpectralDensityModel, WeightingFunction};
pub use correlations::{
    ChannelMask, CorrelationSource, CorrelationTables, KernelIntegrals, SpectralMeasure, TimeGrid,
};
pub use error::{Error, Result};
pub use inhomogeneous::{InhomOrder, InhomogeneousTerms};
pub use model::{Engine, FrameSummary, InitialState, ModelSpec};
pub use polaron::{build_frame, CMatrix, PolaronFrame, SiteHamiltonian};
pub use propagator::{propagate, PropagationOptions, Trajectory};
pub use relaxation::{assemble_r, assemble_r_two_state, RelaxationTensor};
pub use num_complex::Complex64 as C64;
