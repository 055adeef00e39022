//! TOML run configuration. Site indices are 1-based; every physical quantity
//! carries its unit in the key name.

use std::path::{Path, PathBuf};

use ppqme::{
    CMatrix, DensityFamily, Error, InhomOrder, InitialState, ModelSpec, QuadratureScheme, SiteHamiltonian,
    SpectralDensityModel, TimeGrid, WeightingFunction, C64,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemBlock,
    pub bath: BathBlock,
    pub weighting: WeightingBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub n_sites: usize,
    pub energies_cm1: Vec<f64>,
    /// `[j, k, J_cm1]` entries.
    #[serde(default)]
    pub couplings: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    OhmicExponential,
    SuperOhmicCubic,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathBlock {
    pub family: FamilyName,
    #[serde(default = "one")]
    pub eta: f64,
    pub omega_c_cm1: f64,
    /// `[omega_cm1, J_cm1]` samples for the tabulated family.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples_cm1: Vec<(f64, f64)>,
    /// `[j, k, c_jk]` bath correlations between sites.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cross_pairs: Vec<(usize, usize, f64)>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingKind {
    Unity,
    Zero,
    Step,
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingBlock {
    pub kind: WeightingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_h_cm1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// Matrix entry given as a real number or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    #[serde(default = "default_t_max")]
    pub t_max_fs: f64,
    pub dt_fs: f64,
    /// 0: none, 1: first order, 2: first and second order.
    #[serde(default = "default_inhom")]
    pub inhom_order: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_site: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_matrix: Option<Vec<Vec<Entry>>>,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_t_max() -> f64 {
    1000.0
}

fn default_inhom() -> u8 {
    1
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_csv")]
    pub csv_path: PathBuf,
    #[serde(default = "default_json")]
    pub json_path: PathBuf,
}

fn default_csv() -> PathBuf {
    "trajectory.csv".into()
}

fn default_json() -> PathBuf {
    "trajectory.json".into()
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { csv_path: default_csv(), json_path: default_json() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(schema_error)?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), Error> {
        let n = self.system.n_sites;
        if n == 0 {
            return Err(Error::config("system.n_sites", "at least one site is required"));
        }
        if self.system.energies_cm1.len() != n {
            return Err(Error::config(
                "system.energies_cm1",
                format!("expected {n} entries, got {}", self.system.energies_cm1.len()),
            ));
        }
        let site = |key: &str, j: usize| {
            if j == 0 || j > n {
                Err(Error::config(key, format!("site index {j} outside 1..={n}")))
            } else {
                Ok(())
            }
        };
        for &(j, k, _) in &self.system.couplings {
            site("system.couplings", j)?;
            site("system.couplings", k)?;
        }
        for &(j, k, _) in &self.bath.cross_pairs {
            site("bath.cross_pairs", j)?;
            site("bath.cross_pairs", k)?;
            if j == k {
                return Err(Error::config("bath.cross_pairs", "pairs must join two different sites"));
            }
        }
        if (self.bath.family == FamilyName::Tabulated) == self.bath.samples_cm1.is_empty() {
            return Err(Error::config("bath.samples_cm1", "required for the tabulated family and only for it"));
        }
        if self.run.initial_site.is_some() && self.run.initial_matrix.is_some() {
            return Err(Error::config("run.initial_matrix", "give initial_site or initial_matrix, not both"));
        }
        if let Some(j) = self.run.initial_site {
            site("run.initial_site", j)?;
        }
        if self.run.stride == 0 {
            return Err(Error::config("run.stride", "must be at least 1"));
        }
        self.inhom_order()?;
        self.weighting_function()?;
        Ok(())
    }

    pub fn inhom_order(&self) -> Result<InhomOrder, Error> {
        InhomOrder::from_level(self.run.inhom_order)
            .ok_or_else(|| Error::config("run.inhom_order", format!("must be 0, 1 or 2, got {}", self.run.inhom_order)))
    }

    pub fn weighting_function(&self) -> Result<WeightingFunction, Error> {
        let w = &self.weighting;
        let omega_h = || w.omega_h_cm1.ok_or_else(|| Error::config("weighting.omega_h_cm1", "required for this kind"));
        let f = match w.kind {
            WeightingKind::Unity => WeightingFunction::Unity,
            WeightingKind::Zero => WeightingFunction::Zero,
            WeightingKind::Step => WeightingFunction::Step { omega_h: omega_h()? },
            WeightingKind::Smooth => WeightingFunction::Smooth {
                omega_h: omega_h()?,
                alpha: w.alpha.ok_or_else(|| Error::config("weighting.alpha", "required for the smooth kind"))?,
            },
        };
        f.validate()?;
        Ok(f)
    }

    pub fn hamiltonian(&self) -> Result<SiteHamiltonian, Error> {
        let pairs: Vec<(usize, usize, f64)> = self.system.couplings.iter().map(|&(j, k, v)| (j - 1, k - 1, v)).collect();
        SiteHamiltonian::from_pairs(self.system.energies_cm1.clone(), &pairs)
    }

    pub fn density(&self) -> Result<SpectralDensityModel, Error> {
        let b = &self.bath;
        let n = self.system.n_sites;
        let family = match b.family {
            FamilyName::OhmicExponential => DensityFamily::OhmicExponential,
            FamilyName::SuperOhmicCubic => DensityFamily::SuperOhmicCubic,
            FamilyName::Tabulated => DensityFamily::Tabulated { samples: b.samples_cm1.clone() },
        };
        let mut c = vec![0.0; n * n];
        for j in 0..n {
            c[j * n + j] = 1.0;
        }
        for &(j, k, v) in &b.cross_pairs {
            c[(j - 1) * n + (k - 1)] = v;
            c[(k - 1) * n + (j - 1)] = v;
        }
        SpectralDensityModel::with_correlation(family, b.eta, b.omega_c_cm1, n, c)
    }

    pub fn model(&self, allow_divergent_alpha: bool) -> Result<ModelSpec, Error> {
        Ok(ModelSpec {
            hamiltonian: self.hamiltonian()?,
            density: self.density()?,
            weighting: self.weighting_function()?,
            temperature_k: self.run.temperature_k,
            quadrature: QuadratureScheme::default(),
            allow_divergent_alpha,
        })
    }

    pub fn grid(&self) -> Result<TimeGrid, Error> {
        TimeGrid::new(self.run.dt_fs, self.run.t_max_fs)
    }

    pub fn initial_state(&self) -> InitialState {
        match (&self.run.initial_matrix, self.run.initial_site) {
            (Some(rows), _) => {
                let n = rows.len();
                let m = rows.first().map_or(0, Vec::len);
                InitialState::Matrix(CMatrix::from_fn(n, m, |j, k| match rows[j].get(k) {
                    Some(Entry::Real(x)) => C64::new(*x, 0.0),
                    Some(Entry::Complex([re, im])) => C64::new(*re, *im),
                    None => C64::new(f64::NAN, 0.0),
                }))
            }
            (None, Some(j)) => InitialState::Site(j - 1),
            (None, None) => InitialState::default(),
        }
    }

    pub fn sigma0(&self) -> Result<CMatrix, Error> {
        self.initial_state().matrix(self.system.n_sites)
    }
}

/// Turns a TOML deserialization failure into a keyed config error.
fn schema_error(e: toml::de::Error) -> Error {
    let message = e.message().to_string();
    let key = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string)
        .or_else(|| message.split('`').nth(1).map(str::to_string))
        .unwrap_or_else(|| "config".to_string());
    let reason = match e.span() {
        Some(span) => format!("{message} (bytes {}..{})", span.start, span.end),
        None => message,
    };
    Error::config(key, reason)
}
