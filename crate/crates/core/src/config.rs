//! TOML experiment configuration.
//!
//! Vectors shorter than the truncation dimension are padded with zeros, so
//! `b = [1.0]` means the first basis vector at any `dim`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::noise::{JumpDensity, SecondaryNoise};
use crate::spectral::{CmSign, HVector, SpectralModel};
use crate::system::System;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceConfig,
    pub noise: NoiseConfig,
    pub drift: DriftConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub scenarios: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub dim: usize,
    /// Explicit generator eigenvalues; `gamma_k = gamma_scale * k` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub gamma_scale: f64,
    /// `q_k = gamma_k^(-frac_delta)`; exclusive with `q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frac_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    Constant,
    TiltedSine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub density: DensityKind,
    pub lambda0: f64,
    #[serde(default = "half")]
    pub epsilon: f64,
    #[serde(default = "first_axis")]
    pub b: Vec<f64>,
    #[serde(default)]
    pub secondary: SecondaryNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftKind {
    Zero,
    BoundedTanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub kind: DriftKind,
    #[serde(default)]
    pub kappa: f64,
    /// Seed of the random coupling matrix, used when `w` is absent.
    #[serde(default = "default_coupling_seed")]
    pub coupling_seed: u64,
    /// Explicit coupling matrix, row by row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Base step; `1e-3 min(1, 1/gamma_d)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    pub contraction_checkpoints: Vec<f64>,
    pub tv_checkpoints: Vec<f64>,
    pub gradient_times: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: 1.0,
            contraction_checkpoints: vec![0.5, 1.0, 2.0, 4.0],
            tv_checkpoints: vec![1.0, 2.0, 4.0, 6.0, 8.0],
            gradient_times: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
    pub tv_samples: u64,
    pub contraction_samples: u64,
    pub gradient_bound_samples: u64,
    pub jacobian_paths: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 200_000,
            seed: 42,
            workers: 4,
            tv_samples: 100_000,
            contraction_samples: 20_000,
            gradient_bound_samples: 20_000,
            jacobian_paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    pub paper_sign: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Seed for random test-function frequencies, directions and probes.
    pub seed: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub fd_eps: f64,
    pub girsanov_v: Vec<f64>,
    pub girsanov_eps: Vec<f64>,
    pub sweep_eps: Vec<f64>,
    pub probes: usize,
    pub truncation_dims: Vec<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            x: vec![1.0],
            y: vec![-1.0],
            fd_eps: 1e-2,
            girsanov_v: vec![0.5],
            girsanov_eps: vec![0.1, 0.5],
            sweep_eps: vec![1e-3, 1e-2, 1e-1, 1.0],
            probes: 8,
            truncation_dims: vec![4, 8],
        }
    }
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn first_axis() -> Vec<f64> {
    vec![1.0]
}

fn default_coupling_seed() -> u64 {
    7
}

/// Pads `v` with zeros to `dim`; longer vectors are an error.
pub fn pad(v: &[f64], dim: usize, name: &'static str) -> Result<HVector> {
    if v.len() > dim {
        return Err(Error::param(
            name,
            format!("has {} entries for dimension {dim}", v.len()),
        ));
    }
    let mut out = HVector::zeros(dim);
    out.rows_mut(0, v.len()).copy_from_slice(v);
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every violated hypothesis or parameter, one per line.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let s = &self.space;
        if s.dim == 0 {
            out.push("(H3) space.dim must be positive".to_string());
            return out;
        }
        let gamma = self.gamma();
        if let Some(g) = &s.gamma {
            if g.len() != s.dim {
                out.push(format!("(H3) space.gamma has {} entries, dim is {}", g.len(), s.dim));
            }
        }
        if !(s.gamma_scale > 0.0) {
            out.push(format!(
                "(H3) space.gamma_scale must be positive, got {}",
                s.gamma_scale
            ));
        }
        if gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            out.push("(H3) generator eigenvalues must be positive".to_string());
        }
        if gamma.windows(2).any(|w| w[1] < w[0]) {
            out.push("(H3) generator eigenvalues must be non-decreasing".to_string());
        }
        match (&s.frac_delta, &s.q) {
            (Some(_), Some(_)) => out.push("space: give either frac_delta or q, not both".to_string()),
            (None, None) => out.push("space: one of frac_delta or q is required".to_string()),
            (Some(d), None) if !(*d > 0.0 && *d < 0.5) => {
                out.push(format!("space.frac_delta must lie in (0, 1/2), got {d}"))
            }
            (None, Some(q)) => {
                if q.len() != s.dim {
                    out.push(format!("(H2) space.q has {} entries, dim is {}", q.len(), s.dim));
                }
                if q.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    out.push("(H2) covariance eigenvalues must be positive".to_string());
                }
            }
            _ => {}
        }
        let n = &self.noise;
        if !(n.lambda0 > 0.0 && n.lambda0.is_finite()) {
            out.push(format!(
                "(H1) noise.lambda0 must be positive and finite, got {}",
                n.lambda0
            ));
        }
        if n.density == DensityKind::TiltedSine {
            if !(n.epsilon > 0.0 && n.epsilon < 1.0) {
                out.push(format!("(H1) noise.epsilon must lie in (0, 1), got {}", n.epsilon));
            }
            if n.b.len() > s.dim {
                out.push(format!("noise.b has {} entries, dim is {}", n.b.len(), s.dim));
            }
        }
        if let Err(e) = n.secondary.validate() {
            out.push(e.to_string());
        }
        let d = &self.drift;
        if d.kind == DriftKind::BoundedTanh {
            if !d.kappa.is_finite() {
                out.push("(H4) drift.kappa must be finite".to_string());
            }
            if let Some(w) = &d.w {
                if w.len() != s.dim || w.iter().any(|r| r.len() != s.dim) {
                    out.push(format!("(H4) drift.w must be {0} x {0}", s.dim));
                }
            }
        }
        if out.is_empty() {
            match self.drift_field() {
                Ok(f) if f.lip_bound() >= gamma[0] => out.push(format!(
                    "(H4) convergence needs gamma_1 > ||F||_Lip, got gamma_1 = {}, Lip = {}",
                    gamma[0],
                    f.lip_bound()
                )),
                Err(e) => out.push(e.to_string()),
                _ => {}
            }
        }
        if let Some(dt) = self.sim.dt {
            if !(dt > 0.0) {
                out.push(format!("sim.dt must be positive, got {dt}"));
            }
        }
        if !(self.sim.t_end > 0.0) {
            out.push("sim.t_end must be positive".to_string());
        }
        for (name, ts) in [
            ("sim.contraction_checkpoints", &self.sim.contraction_checkpoints),
            ("sim.tv_checkpoints", &self.sim.tv_checkpoints),
            ("sim.gradient_times", &self.sim.gradient_times),
        ] {
            if ts.is_empty() || !(ts[0] > 0.0) || ts.windows(2).any(|w| w[1] <= w[0]) {
                out.push(format!("{name} must be increasing positive times"));
            }
        }
        let sc = &self.scenarios;
        for (name, v) in [
            ("scenarios.x", &sc.x),
            ("scenarios.y", &sc.y),
            ("scenarios.girsanov_v", &sc.girsanov_v),
        ] {
            if v.len() > s.dim {
                out.push(format!("{name} has {} entries, dim is {}", v.len(), s.dim));
            }
        }
        if !(1e-4..=1e-1).contains(&sc.fd_eps) {
            out.push(format!("scenarios.fd_eps must lie in [1e-4, 1e-1], got {}", sc.fd_eps));
        }
        for e in sc.girsanov_eps.iter().chain(&sc.sweep_eps) {
            if !(*e > 0.0 && *e <= 1.0) {
                out.push(format!("Girsanov epsilon must lie in (0, 1], got {e}"));
            }
        }
        if sc.truncation_dims.windows(2).any(|w| w[1] < w[0]) || sc.truncation_dims.contains(&0) {
            out.push("scenarios.truncation_dims must be increasing positive".to_string());
        }
        if self.mc.samples < 1000 {
            out.push(format!("mc.samples must be at least 1000, got {}", self.mc.samples));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    fn gamma(&self) -> Vec<f64> {
        match &self.space.gamma {
            Some(g) => g.clone(),
            None => SpectralModel::linear_gamma(self.space.dim, self.space.gamma_scale),
        }
    }

    pub fn model(&self) -> Result<SpectralModel> {
        let gamma = self.gamma();
        match (&self.space.frac_delta, &self.space.q) {
            (Some(d), None) => SpectralModel::fractional(gamma, *d),
            (None, Some(q)) => SpectralModel::new(gamma, q.clone()),
            _ => Err(Error::Config(
                "space: exactly one of frac_delta or q is required".into(),
            )),
        }
    }

    pub fn density(&self) -> Result<JumpDensity> {
        match self.noise.density {
            DensityKind::Constant => JumpDensity::constant(self.noise.lambda0),
            DensityKind::TiltedSine => JumpDensity::tilted_sine(
                self.noise.lambda0,
                self.noise.epsilon,
                pad(&self.noise.b, self.space.dim, "noise.b")?,
            ),
        }
    }

    pub fn drift_field(&self) -> Result<DriftField> {
        let dim = self.space.dim;
        match self.drift.kind {
            DriftKind::Zero => Ok(DriftField::Zero),
            DriftKind::BoundedTanh => match &self.drift.w {
                Some(rows) => {
                    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: rows.len(),
                        });
                    }
                    let w = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
                    DriftField::bounded_tanh(vec![self.drift.kappa; dim], w)
                }
                None => DriftField::random_tanh(dim, self.drift.kappa, self.drift.coupling_seed),
            },
        }
    }

    pub fn sign(&self) -> CmSign {
        if self.flags.paper_sign {
            CmSign::Paper
        } else {
            CmSign::Corrected
        }
    }

    pub fn system(&self) -> Result<System> {
        let sys = System::new(self.model()?, self.density()?, self.drift_field()?)?
            .with_secondary(self.noise.secondary)?
            .with_sign(self.sign());
        match self.sim.dt {
            Some(dt) => sys.with_dt(dt),
            None => Ok(sys),
        }
    }

    /// The same configuration at another truncation dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        let mut c = self.clone();
        c.space.dim = dim;
        if c.space.gamma.is_some() || c.space.q.is_some() {
            return Err(Error::Config(
                "truncation sweeps need generated eigenvalues (gamma_scale and frac_delta)".into(),
            ));
        }
        c.drift.w = None;
        c.validate()?;
        Ok(c)
    }
}

/// The reference configuration shipped as `reference.toml`.
pub const REFERENCE_TOML: &str = include_str!("../../../reference.toml");

pub fn reference() -> ExperimentConfig {
    ExperimentConfig::from_toml(REFERENCE_TOML).expect("reference.toml is valid")
}
