//! Shared fixtures for the benchmarks.

use ppqme::{CMatrix, InitialState, ModelSpec, QuadratureScheme, SiteHamiltonian, SpectralDensityModel, WeightingFunction};

/// Two sites, E1 = E2, J = 300 cm^-1, Ohmic bath with omega_c = 200 cm^-1 at 300 K.
pub fn dimer(weighting: WeightingFunction) -> ModelSpec {
    ModelSpec {
        hamiltonian: SiteHamiltonian::from_pairs(vec![0.0, 0.0], &[(0, 1, 300.0)]).unwrap(),
        density: SpectralDensityModel::ohmic(1.0, 200.0, 2).unwrap(),
        weighting,
        temperature_k: 300.0,
        quadrature: QuadratureScheme::default(),
        allow_divergent_alpha: false,
    }
}

/// Four sites on a ring with nearest-neighbour coupling.
pub fn ring(weighting: WeightingFunction) -> ModelSpec {
    let pairs = [(0, 1, 120.0), (1, 2, 80.0), (2, 3, 120.0), (3, 0, 80.0)];
    ModelSpec {
        hamiltonian: SiteHamiltonian::from_pairs(vec![200.0, 100.0, 0.0, 150.0], &pairs).unwrap(),
        density: SpectralDensityModel::ohmic(0.5, 200.0, 4).unwrap(),
        weighting,
        temperature_k: 300.0,
        quadrature: QuadratureScheme::default(),
        allow_divergent_alpha: false,
    }
}

pub fn donor(n: usize) -> CMatrix {
    InitialState::Site(0).matrix(n).unwrap()
}
