//! Model tags, physical constants, and the versioned constants file.
//!
//! All dynamics are nondimensionalized by the Earth-Moon distance (length),
//! the sum of the primary masses (mass), and the inverse of the primaries'
//! angular rate about their barycenter (time), so the Earth-Moon
//! gravitational parameter is unity.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

pub const CONSTANTS_FILE_VERSION: u32 = 1;

/// Earth-Moon distance, km.
pub const LENGTH_UNIT_KM: f64 = 384_400.0;
/// GM of Earth + Moon, km^3/s^2.
pub const GM_EM_KM3S2: f64 = 403_503.24;

/// Dynamics model tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "CR3BP")]
    Cr3bp,
    #[serde(rename = "ER3BP")]
    Er3bp,
    #[serde(rename = "BCR4BP")]
    Bcr4bp,
}

impl Model {
    pub fn parse(label: &str) -> Result<Model> {
        match label.to_ascii_lowercase().as_str() {
            "cr3bp" => Ok(Model::Cr3bp),
            "er3bp" => Ok(Model::Er3bp),
            "bcr4bp" => Ok(Model::Bcr4bp),
            other => Err(Error::Config(format!("unknown model tag '{other}'"))),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Cr3bp => write!(f, "CR3BP"),
            Model::Er3bp => write!(f, "ER3BP"),
            Model::Bcr4bp => write!(f, "BCR4BP"),
        }
    }
}

/// Rotating-frame tag. Both frames share axes; the Moon synodic frame is
/// anchored to the Moon's center instead of the Earth-Moon barycenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    #[serde(rename = "barycenter-synodic")]
    BarycenterSynodic,
    #[serde(rename = "moon-synodic")]
    MoonSynodic,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::BarycenterSynodic => write!(f, "barycenter-synodic"),
            Frame::MoonSynodic => write!(f, "moon-synodic"),
        }
    }
}

/// Nondimensional parameters of the Earth-Moon(-Sun) system.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mass ratio m_m / (m_e + m_m).
    pub mu: f64,
    /// Sun mass ratio m_s / (m_e + m_m) (BCR4BP only).
    pub mu_s: f64,
    /// Earth-Moon eccentricity (ER3BP only).
    pub e: f64,
    /// Sun to Earth-Moon barycenter distance, nondim (BCR4BP only).
    pub r_b1s: f64,
    /// Sun angular rate in the synodic frame, nondim (BCR4BP only).
    pub omega_s: f64,
    /// Sun angle at t = 0, rad (BCR4BP only).
    pub theta_s0: f64,
    /// Moon mean anomaly at t = 0, rad (ER3BP only).
    pub mtilde0: f64,
    /// Length unit, km.
    pub length_unit_km: f64,
    /// Time unit, s.
    pub time_unit_s: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            mu: 0.012150584,
            mu_s: 328_900.56,
            e: 0.0549,
            r_b1s: 388.81,
            omega_s: -0.9251959855,
            theta_s0: 0.0,
            mtilde0: 0.0,
            length_unit_km: LENGTH_UNIT_KM,
            time_unit_s: (LENGTH_UNIT_KM.powi(3) / GM_EM_KM3S2).sqrt(),
        }
    }
}

impl ModelParams {
    pub fn validate(&self, model: Model) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Config(format!("mu = {} outside (0, 1)", self.mu)));
        }
        if model == Model::Er3bp && !(self.e >= 0.0 && self.e < 1.0) {
            return Err(Error::Config(format!("e = {} outside [0, 1)", self.e)));
        }
        if model == Model::Bcr4bp {
            // mu_s = 0 is the degenerate four-body case (equivalent to CR3BP)
            if self.mu_s < 0.0 {
                return Err(Error::Config(format!("mu_s = {} must be >= 0", self.mu_s)));
            }
            if self.r_b1s <= 1.0 {
                return Err(Error::Config(format!("r_b1s = {} must be > 1", self.r_b1s)));
            }
        }
        Ok(())
    }

    /// Velocity unit, km/s.
    pub fn vu_kms(&self) -> f64 {
        self.length_unit_km / self.time_unit_s
    }

    /// Nondimensional length from meters.
    pub fn m_to_nd(&self, m: f64) -> f64 {
        m / (self.length_unit_km * 1e3)
    }

    /// Meters from nondimensional length.
    pub fn nd_to_m(&self, nd: f64) -> f64 {
        nd * self.length_unit_km * 1e3
    }

    /// Nondimensional velocity from m/s.
    pub fn mps_to_nd(&self, mps: f64) -> f64 {
        mps * 1e-3 / self.vu_kms()
    }

    /// m/s from nondimensional velocity.
    pub fn nd_to_mps(&self, nd: f64) -> f64 {
        nd * self.vu_kms() * 1e3
    }

    /// Days from nondimensional time.
    pub fn nd_to_days(&self, nd: f64) -> f64 {
        nd * self.time_unit_s / 86_400.0
    }

    /// Synodic month (one Sun revolution in the synodic frame), nondim.
    pub fn synodic_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega_s.abs()
    }

    /// Write the versioned key-value constants file.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# ltcswarm model constants\n");
        out.push_str(&format!("version = {CONSTANTS_FILE_VERSION}\n"));
        out.push_str(&format!("mu = {:e}\n", self.mu));
        out.push_str(&format!("mu_s = {:e}\n", self.mu_s));
        out.push_str(&format!("e = {:e}\n", self.e));
        out.push_str(&format!("r_b1s = {:e}\n", self.r_b1s));
        out.push_str(&format!("omega_s = {:e}\n", self.omega_s));
        out.push_str(&format!("theta_s0 = {:e}\n", self.theta_s0));
        out.push_str(&format!("mtilde0 = {:e}\n", self.mtilde0));
        out.push_str(&format!("length_unit_km = {:e}\n", self.length_unit_km));
        out.push_str(&format!("time_unit_s = {:e}\n", self.time_unit_s));
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Parse the key-value constants file. Unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<ModelParams> {
        let text = std::fs::read_to_string(path)?;
        let mut params = ModelParams::default();
        let mut version: Option<u32> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let parse = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("line {}: bad number '{v}'", lineno + 1)))
            };
            match key {
                "version" => {
                    version = Some(value.parse().map_err(|_| {
                        Error::Config(format!("line {}: bad version '{value}'", lineno + 1))
                    })?)
                }
                "mu" => params.mu = parse(value)?,
                "mu_s" => params.mu_s = parse(value)?,
                "e" => params.e = parse(value)?,
                "r_b1s" => params.r_b1s = parse(value)?,
                "omega_s" => params.omega_s = parse(value)?,
                "theta_s0" => params.theta_s0 = parse(value)?,
                "mtilde0" => params.mtilde0 = parse(value)?,
                "length_unit_km" => params.length_unit_km = parse(value)?,
                "time_unit_s" => params.time_unit_s = parse(value)?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        match version {
            Some(CONSTANTS_FILE_VERSION) => Ok(params),
            Some(v) => Err(Error::Config(format!(
                "constants file version {v} unsupported (expected {CONSTANTS_FILE_VERSION})"
            ))),
            None => Err(Error::Config("constants file missing version".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_all_models() {
        let p = ModelParams::default();
        for m in [Model::Cr3bp, Model::Er3bp, Model::Bcr4bp] {
            p.validate(m).unwrap();
        }
        // time unit consistent with GM and LU
        assert!((p.time_unit_s - 375_190.0).abs() < 5.0);
    }

    #[test]
    fn constants_file_roundtrip() {
        let dir = std::env::temp_dir().join("ltcswarm_const_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("constants.txt");
        let p = ModelParams::default();
        p.write_file(&path).unwrap();
        let q = ModelParams::from_file(&path).unwrap();
        assert_eq!(p.mu, q.mu);
        assert_eq!(p.omega_s, q.omega_s);
        assert_eq!(p.time_unit_s, q.time_unit_s);
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = std::env::temp_dir().join("ltcswarm_const_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("constants_bad.txt");
        std::fs::write(&path, "version = 1\nmu = 0.01\nbogus = 3\n").unwrap();
        assert!(ModelParams::from_file(&path).is_err());
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = ModelParams::default();
        p.mu = 1.5;
        assert!(p.validate(Model::Cr3bp).is_err());
        let mut p = ModelParams::default();
        p.e = 1.0;
        assert!(p.validate(Model::Er3bp).is_err());
        assert!(p.validate(Model::Cr3bp).is_ok());
        let mut p = ModelParams::default();
        p.r_b1s = 0.5;
        assert!(p.validate(Model::Bcr4bp).is_err());
        let mut p = ModelParams::default();
        p.mu_s = 0.0;
        assert!(p.validate(Model::Bcr4bp).is_ok());
    }
}
