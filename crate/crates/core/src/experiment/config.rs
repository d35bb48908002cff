use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::Tensor;
use crate::optimizer::GnConfig;

/// Conductivity correlation structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Isotropic,
    Anisotropic,
}

impl Case {
    pub fn as_str(self) -> &'static str {
        match self {
            Case::Isotropic => "isotropic",
            Case::Anisotropic => "anisotropic",
        }
    }

    /// Default conductivity correlation tensor diagonal.
    pub fn a_gamma(self) -> Vec<f64> {
        match self {
            Case::Isotropic => vec![1e-3; 3],
            Case::Anisotropic => vec![1e-2, 1e-2, 1e-8],
        }
    }

    /// `(inversion, synthesis)` meshes at the published resolution.
    pub fn published_meshes(self) -> ([usize; 3], [usize; 3]) {
        match self {
            Case::Isotropic => ([30, 30, 6], [50, 50, 10]),
            Case::Anisotropic => ([30, 30, 30], [50, 50, 50]),
        }
    }

    /// `(inversion, synthesis)` meshes for desk-scale runs: the published
    /// horizontal inversion resolution (needed to resolve the conductivity
    /// correlation length) with few layers through the thin slab.
    pub fn desk_meshes(self) -> ([usize; 3], [usize; 3]) {
        ([30, 30, 2], [60, 60, 3])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPriorConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub mean: f64,
}

impl Default for BetaPriorConfig {
    fn default() -> Self {
        BetaPriorConfig {
            alpha: 7.0,
            gamma: 0.01,
            kappa: 0.0,
            mean: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductivityPriorConfig {
    pub alpha: f64,
    /// Diagonal of the correlation tensor; the case default when absent.
    pub gamma: Option<Vec<f64>>,
    pub mean: f64,
}

impl Default for ConductivityPriorConfig {
    fn default() -> Self {
        ConductivityPriorConfig {
            alpha: 100.0,
            gamma: None,
            mean: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: Case,
    pub length: f64,
    pub height: f64,
    /// Cell counts `[nx, ny, nz]`; case defaults when absent.
    pub inversion_mesh: Option<[usize; 3]>,
    pub synthesis_mesh: Option<[usize; 3]>,
    pub beta_prior: BetaPriorConfig,
    pub a_prior: ConductivityPriorConfig,
    pub noise_percent: f64,
    /// Horizontal `(x, y)` measurement positions on the top; default layout when absent.
    pub observation_points: Option<Vec<[f64; 2]>>,
    /// Constant top flux.
    pub flux: f64,
    pub bae_samples: usize,
    pub master_seed: u64,
    pub optimizer: GnConfig,
    /// Eigensolver probes; `q + 10` when absent.
    pub n_probe: Option<usize>,
    pub truncation: f64,
    pub cross_section_samples: usize,
    /// Eigenvectors exported per model.
    pub exported_eigenvectors: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            case: Case::Isotropic,
            length: 1.0,
            height: 0.01,
            inversion_mesh: None,
            synthesis_mesh: None,
            beta_prior: BetaPriorConfig::default(),
            a_prior: ConductivityPriorConfig::default(),
            noise_percent: 1.0,
            observation_points: None,
            flux: 1.0,
            bae_samples: 1000,
            master_seed: 2019,
            optimizer: GnConfig::default(),
            n_probe: None,
            truncation: crate::posterior::DEFAULT_TRUNCATION,
            cross_section_samples: 101,
            exported_eigenvectors: 4,
        }
    }
}

/// Smallest accepted sample count, and the count below which a warning is logged.
pub const MIN_BAE_SAMPLES: usize = 50;
pub const WARN_BAE_SAMPLES: usize = 200;

/// 4 rows of 8 points on `[0.1, 0.9]^2` plus the centre, scaled to the slab width.
pub fn default_observation_layout(length: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(33);
    for row in 0..4 {
        let y = 0.1 + 0.8 * row as f64 / 3.0;
        for col in 0..8 {
            let x = 0.1 + 0.8 * col as f64 / 7.0;
            pts.push([x * length, y * length]);
        }
    }
    pts.push([0.5 * length, 0.5 * length]);
    pts
}

impl ExperimentConfig {
    pub fn for_case(case: Case) -> Self {
        ExperimentConfig {
            case,
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Switch to the published mesh sizes.
    pub fn paper_scale(mut self) -> Self {
        let (inv, syn) = self.case.published_meshes();
        self.inversion_mesh = Some(inv);
        self.synthesis_mesh = Some(syn);
        self
    }

    /// Fill every optional field with its default so the stored config is explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let (inv, syn) = c.case.desk_meshes();
        c.inversion_mesh.get_or_insert(inv);
        c.synthesis_mesh.get_or_insert(syn);
        if c.a_prior.gamma.is_none() {
            c.a_prior.gamma = Some(c.case.a_gamma());
        }
        if c.observation_points.is_none() {
            c.observation_points = Some(default_observation_layout(c.length));
        }
        if c.n_probe.is_none() {
            c.n_probe = Some(c.q() + 10);
        }
        c
    }

    pub fn inversion(&self) -> [usize; 3] {
        self.inversion_mesh.unwrap_or(self.case.desk_meshes().0)
    }

    pub fn synthesis(&self) -> [usize; 3] {
        self.synthesis_mesh.unwrap_or(self.case.desk_meshes().1)
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.observation_points
            .clone()
            .unwrap_or_else(|| default_observation_layout(self.length))
    }

    pub fn q(&self) -> usize {
        self.points().len()
    }

    /// Observation points in slab coordinates (on the top surface).
    pub fn points_3d(&self) -> Vec<Vec<f64>> {
        self.points().iter().map(|p| vec![p[0], p[1], self.height]).collect()
    }

    pub fn a_tensor(&self) -> Result<Tensor> {
        let g = self.a_prior.gamma.clone().unwrap_or_else(|| self.case.a_gamma());
        if g.len() != 3 {
            return Err(Error::Config(format!("a_prior.gamma needs 3 entries, got {}", g.len())));
        }
        Ok(Tensor::diagonal(&g))
    }

    pub fn n_probe(&self) -> usize {
        self.n_probe.unwrap_or(self.q() + 10)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let inv = self.inversion();
        let syn = self.synthesis();
        if inv.contains(&0) {
            return bad("inversion mesh needs at least one cell per axis".into());
        }
        if (0..3).any(|k| syn[k] <= inv[k]) {
            return bad(format!(
                "synthesis mesh {syn:?} must be strictly finer than the inversion mesh {inv:?} on every axis"
            ));
        }
        if !(self.length > 0.0 && self.height > 0.0) {
            return bad("slab dimensions must be positive".into());
        }
        if !(self.noise_percent >= 0.0 && self.noise_percent.is_finite()) {
            return bad(format!("noise_percent must be nonnegative, got {}", self.noise_percent));
        }
        if self.bae_samples < MIN_BAE_SAMPLES {
            return bad(format!(
                "bae_samples must be at least {MIN_BAE_SAMPLES}, got {}",
                self.bae_samples
            ));
        }
        let b = &self.beta_prior;
        if !(b.alpha > 0.0 && b.gamma > 0.0 && b.kappa >= 0.0) {
            return bad("beta prior needs alpha > 0, gamma > 0, kappa >= 0".into());
        }
        if !(self.a_prior.alpha > 0.0) {
            return bad("conductivity prior needs alpha > 0".into());
        }
        let g = self.a_tensor()?;
        if !g.is_spd() {
            return bad("conductivity correlation tensor must be positive".into());
        }
        let pts = self.points();
        if pts.is_empty() {
            return bad("at least one observation point is required".into());
        }
        if pts
            .iter()
            .any(|p| !(0.0..=self.length).contains(&p[0]) || !(0.0..=self.length).contains(&p[1]))
        {
            return bad("observation points must lie on the top surface".into());
        }
        if !self.flux.is_finite() || self.flux == 0.0 {
            return bad("flux must be finite and nonzero".into());
        }
        if self.cross_section_samples < 2 {
            return bad("cross sections need at least 2 samples".into());
        }
        if !(self.truncation >= 0.0) {
            return bad("truncation must be nonnegative".into());
        }
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.bae_samples < WARN_BAE_SAMPLES {
            log::warn!("only {} error samples; statistics will be noisy", self.bae_samples);
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.resolved()).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Independent seed for a named stream, derived from the master seed.
    pub fn seed(&self, stream: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.master_seed.to_le_bytes());
        h.update(stream.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_has_33_points_inside() {
        let pts = default_observation_layout(1.0);
        assert_eq!(pts.len(), 33);
        let inside = |v: f64| (0.1 - 1e-12..=0.9 + 1e-12).contains(&v);
        assert!(pts.iter().all(|p| inside(p[0]) && inside(p[1])));
        assert_eq!(pts[32], [0.5, 0.5]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"bogus": 1}"#), Err(Error::Config(_))));
        let c = ExperimentConfig::from_json(r#"{"case": "anisotropic", "bae_samples": 200}"#).unwrap();
        assert_eq!(c.case, Case::Anisotropic);
        assert_eq!(c.a_tensor().unwrap().get(2, 2), 1e-8);
    }

    #[test]
    fn inverse_crime_guard() {
        let c = ExperimentConfig {
            synthesis_mesh: Some([24, 24, 3]),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn hash_and_seeds_are_stable() {
        let a = ExperimentConfig::default();
        assert_eq!(a.hash(), a.resolved().hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.seed("truth"), a.seed("noise"));
        let b = ExperimentConfig {
            master_seed: 7,
            ..Default::default()
        };
        assert_ne!(a.hash(), b.hash());
    }
}
