//! CSV and report writers for trajectories, torus meshes, separation
//! histories, plans, and campaign statistics.

use crate::constants::ModelParams;
use crate::dynamics::Trajectory;
use crate::error::Result;
use crate::ltc::QpritMesh;
use crate::ocp::{DeputyPlan, Discretization};
use crate::relmotion::Stm;
use crate::simkit::{DriftSafetyRecord, McResult};
use std::fmt::Write as _;
use std::path::Path;

/// Trajectory CSV: a comment header naming model and frame, then
/// t,x,y,z,vx,vy,vz in nondimensional units.
pub fn write_trajectory_csv(
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    n: usize,
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# model={} frame=barycenter-synodic", traj.model).ok();
    writeln!(out, "t,x,y,z,vx,vy,vz").ok();
    for i in 0..=n {
        let t = t0 + (t1 - t0) * i as f64 / n as f64;
        let s = traj.state_bary(t);
        writeln!(
            out,
            "{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            s.r.x, s.r.y, s.r.z, s.v.x, s.v.y, s.v.z
        )
        .ok();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Torus mesh CSV: ring epoch, circle phase, position in meters (VNB).
pub fn write_mesh_csv(mesh: &QpritMesh, params: &ModelParams, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "t,theta,x_m,y_m,z_m").ok();
    let n_theta = mesh.n_theta;
    for (ring, &t) in mesh.epochs.iter().enumerate() {
        for j in 0..n_theta {
            let p = mesh.points[ring * n_theta + j];
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_theta as f64;
            writeln!(
                out,
                "{t:.9e},{theta:.9e},{:.6e},{:.6e},{:.6e}",
                params.nd_to_m(p.x),
                params.nd_to_m(p.y),
                params.nd_to_m(p.z)
            )
            .ok();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-plane separation history CSV (meters per unit-epsilon circle).
pub fn write_separation_csv(
    rows: &[(f64, [f64; 6])],
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "t,vn,nb,bv,xy,yz,zx").ok();
    for (t, s) in rows {
        writeln!(
            out,
            "{t:.9e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            s[0], s[1], s[2], s[3], s[4], s[5]
        )
        .ok();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-axis amplitude/phase history of the unit invariant circle.
pub fn write_amplitude_csv(rows: &[(f64, [f64; 6])], path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "t,amp_v,amp_n,amp_b,phase_v,phase_n,phase_b").ok();
    for (t, s) in rows {
        writeln!(
            out,
            "{t:.9e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            s[0], s[1], s[2], s[3], s[4], s[5]
        )
        .ok();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Plan CSV: node epoch, impulse (mm/s), LTC state, Cartesian VNB state.
pub fn write_plan_csv(plan: &DeputyPlan, disc: &Discretization, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "node,t,u_v_mmps,u_n_mmps,u_b_mmps,alpha,beta,h,alpha_dot,beta_dot,h_dot,rho_v_m,rho_n_m,rho_b_m"
    )
    .ok();
    for (k, (&t, u)) in plan.epochs.iter().zip(&plan.impulses_mmps).enumerate() {
        let z = plan.zeta[k].as_vec6();
        let x = disc.t_maps[k].0 * z;
        let p = &disc.params;
        writeln!(
            out,
            "{k},{t:.9e},{:.6e},{:.6e},{:.6e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.4e},{:.4e},{:.4e}",
            u.x, u.y, u.z, z[0], z[1], z[2], z[3], z[4], z[5],
            p.nd_to_m(x[0]), p.nd_to_m(x[1]), p.nd_to_m(x[2])
        )
        .ok();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// STM history CSV: one row per matrix, t0, t1 then the 36 entries row-major.
pub fn write_stm_history_csv(stms: &[Stm], path: &Path) -> Result<()> {
    let mut out = String::new();
    write!(out, "t0,t1").ok();
    for r in 0..6 {
        for c in 0..6 {
            write!(out, ",phi_{r}{c}").ok();
        }
    }
    writeln!(out).ok();
    for stm in stms {
        write!(out, "{:.12e},{:.12e}", stm.t0, stm.t1).ok();
        for r in 0..6 {
            for c in 0..6 {
                write!(out, ",{:.12e}", stm.phi[(r, c)]).ok();
            }
        }
        writeln!(out).ok();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read back an STM history CSV.
pub fn read_stm_history_csv(path: &Path) -> Result<Vec<Stm>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        if vals.len() != 38 {
            continue;
        }
        let mut phi = crate::Mat6::zeros();
        for r in 0..6 {
            for c in 0..6 {
                phi[(r, c)] = vals[2 + 6 * r + c];
            }
        }
        out.push(Stm {
            phi,
            t0: vals[0],
            t1: vals[1],
            chief_id: String::new(),
        });
    }
    Ok(out)
}

/// Drift-safety record CSV.
pub fn write_safety_csv(records: &[DriftSafetyRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "node_epoch,worst_violation,safe").ok();
    for r in records {
        writeln!(out, "{:.9e},{:.6e},{}", r.node_epoch, r.worst_violation, r.safe).ok();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Campaign statistics CSV, one row per deputy per control mode.
pub fn write_campaign_csv(label: &str, mc: &McResult, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "mode,deputy,cost_mean_mmps,cost_sd_mmps,pos_err_mean_m,pos_err_sd_m,vel_err_mean_mmps,vel_err_sd_mmps,h_mean_m,h_sd_m,alpha_mean_m,alpha_sd_m,beta_mean_m,beta_sd_m,h_dot_mean_mmps,h_dot_sd_mmps,alpha_dot_mean_mmps,alpha_dot_sd_mmps,beta_dot_mean_mmps,beta_dot_sd_mmps,n_completed,n_failed,safety_pass_fraction"
    )
    .ok();
    for d in &mc.per_deputy {
        writeln!(
            out,
            "{label},{},{:.4},{:.4},{:.3},{:.3},{:.4},{:.4},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{:.3}",
            d.deputy,
            d.cost_mmps.mean, d.cost_mmps.sd,
            d.pos_err_m.mean, d.pos_err_m.sd,
            d.vel_err_mmps.mean, d.vel_err_mmps.sd,
            d.h_m.mean, d.h_m.sd,
            d.alpha_m.mean, d.alpha_m.sd,
            d.beta_m.mean, d.beta_m.sd,
            d.h_dot_mmps.mean, d.h_dot_mmps.sd,
            d.alpha_dot_mmps.mean, d.alpha_dot_mmps.sd,
            d.beta_dot_mmps.mean, d.beta_dot_mmps.sd,
            mc.n_completed, mc.n_failed, mc.safety_pass_fraction
        )
        .ok();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Separation envelope CSV: nominal and worst-case minimum separations.
pub fn write_separation_envelope_csv(mc: &McResult, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "pair_a,pair_b,nominal_min_m,worst_min_m,worst_epoch").ok();
    for (n, w) in mc.nominal_separation.iter().zip(&mc.worst_separation) {
        writeln!(
            out,
            "{},{},{:.3},{:.3},{:.6e}",
            n.a, n.b, n.min_m, w.min_m, w.min_epoch
        )
        .ok();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat6;

    #[test]
    fn stm_csv_roundtrip() {
        let dir = std::env::temp_dir().join("ltcswarm_export_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stm.csv");
        let mut phi = Mat6::identity();
        phi[(3, 1)] = -0.25;
        let stms = vec![Stm {
            phi,
            t0: 0.5,
            t1: 1.25,
            chief_id: String::new(),
        }];
        write_stm_history_csv(&stms, &path).unwrap();
        let back = read_stm_history_csv(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].t0, 0.5);
        assert_eq!(back[0].t1, 1.25);
        assert!((back[0].phi - phi).norm() < 1e-12);
    }
}
