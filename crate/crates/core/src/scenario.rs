//! Scenario files: the JSON-compatible configuration that ties a transfer,
//! its safety envelopes, the noise model, and the campaign setup together.
//! Unknown keys are rejected; the schema is versioned.

use crate::constants::Model;
use crate::error::{Error, Result};
use crate::ocp::{KozSpec, QpritSafetySpec, TransferSpec};
use crate::simkit::NoiseSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcScenario {
    pub replan_indices: Vec<usize>,
    pub truth_model: Model,
    pub carry_basis: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignScenario {
    pub n_runs: usize,
    /// Also evaluate the one-revolution nonlinear drift-safety post-check.
    pub check_safety: bool,
    /// Keep per-run trajectory logs in the output directory.
    #[serde(default)]
    pub save_run_trajectories: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub model: Model,
    pub resonance: String,
    pub transfer: TransferSpec,
    #[serde(default)]
    pub koz: Option<KozSpec>,
    #[serde(default)]
    pub qprit: Option<QpritSafetySpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub mpc: Option<MpcScenario>,
    #[serde(default)]
    pub campaign: Option<CampaignScenario>,
    /// Epsilon for torus meshes emitted alongside plans, km.
    #[serde(default)]
    pub mesh_eps_km: Option<f64>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        let sc: Scenario = serde_json::from_str(&text)?;
        if sc.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "scenario schema version {} unsupported (expected {SCENARIO_SCHEMA_VERSION})",
                sc.schema_version
            )));
        }
        sc.transfer.validate()?;
        if let Some(k) = &sc.koz {
            k.validate()?;
        }
        if let Some(q) = &sc.qprit {
            q.validate(sc.transfer.n_deputies)?;
        }
        if let Some(n) = &sc.noise {
            n.validate()?;
        }
        Ok(sc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{CircleBc, SafetyMode};

    fn sample() -> Scenario {
        Scenario {
            schema_version: SCENARIO_SCHEMA_VERSION,
            name: "test".into(),
            model: Model::Cr3bp,
            resonance: "9:2-synodic".into(),
            transfer: TransferSpec {
                orbit_id: "CR3BP-9:2-synodic".into(),
                n_deputies: 1,
                bc_initial: vec![CircleBc { eps_km: 0.5, theta_rad: 4.2 }],
                bc_terminal: vec![CircleBc { eps_km: 0.2, theta_rad: 0.0 }],
                tf_revs: 2.0,
                n_nodes: 30,
                no_control_windows: vec![(6, 9), (21, 24)],
                safety_mode: SafetyMode::Qprit,
                sundman_alpha: 1.0,
            },
            koz: Some(KozSpec {
                semi_axes_m: [200.0, 95.0, 95.0],
                n_safe: 30,
                t_safe_revs: 1.0,
            }),
            qprit: Some(QpritSafetySpec {
                delta_h_m: 1.0,
                delta_alpha_dot_mmps: 50.0,
                delta_beta_dot_mmps: 50.0,
                delta_h_dot_mmps: 50.0,
                eps_floor_km: vec![0.2],
            }),
            noise: None,
            mpc: None,
            campaign: None,
            mesh_eps_km: Some(0.2),
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        let sc = sample();
        let dir = std::env::temp_dir().join("ltcswarm_scenario_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.json");
        sc.save(&path).unwrap();
        let re = Scenario::load(&path).unwrap();
        let again = dir.join("s2.json");
        re.save(&again).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&again).unwrap()
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = std::env::temp_dir().join("ltcswarm_scenario_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        let mut v: serde_json::Value =
            serde_json::to_value(sample()).unwrap();
        v["bogus_key"] = serde_json::json!(1);
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(Scenario::load(&path).is_err());
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = std::env::temp_dir().join("ltcswarm_scenario_test3");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("v.json");
        let mut sc = sample();
        sc.schema_version = 99;
        sc.save(&path).unwrap();
        assert!(Scenario::load(&path).is_err());
    }
}
