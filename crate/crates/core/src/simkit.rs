//! Open-loop nonlinear rollout of plans, drift-safety evaluation,
//! shrinking-horizon MPC under model mismatch and process noise, and
//! Monte-Carlo campaigns with deterministic aggregation.

use crate::constants::Model;
use crate::dynamics::{self, propagate, SynodicState, Trajectory};
use crate::error::{Error, Result};
use crate::frames::{from_local, to_local, vnb_basis};
use crate::ltc::LtcState;
use crate::ocp::{
    conic_subproblem, scp_solve, sundman_nodes, BoxBounds, DeputyPlan, Discretization, DriftData,
    KozSpec, QpritSafetySpec, SafetyConfig, SafetyMode, ScpParams, SubproblemInputs,
    SubproblemStatus, TransferSpec,
};
use crate::orbits::{OscillatoryMode, PeriodicOrbit};
use crate::relmotion::RelState;
use crate::{Vec3, Vec6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Discrete process noise: 1-sigma kick rates applied per node interval in
/// VNB axes (position in m/s of elapsed time, velocity in m/s^2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub q_pos_mps: f64,
    pub q_vel_mps2: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.q_pos_mps < 0.0 || self.q_vel_mps2 < 0.0 {
            return Err(Error::Config("noise rates must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Shrinking-horizon MPC configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcSpec {
    /// Node indices at which the remaining horizon is re-solved.
    pub replan_indices: Vec<usize>,
    pub truth_model: Model,
    /// The LTC basis is carried over, never re-initialized.
    pub carry_basis: bool,
}

impl MpcSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut prev = 0usize;
        for &k in &self.replan_indices {
            if k == 0 || k >= n {
                return Err(Error::Config(format!("replan index {k} outside [1, N-1]")));
            }
            if k <= prev && prev != 0 {
                return Err(Error::Config("replan indices must be strictly increasing".into()));
            }
            prev = k;
        }
        if self.truth_model == Model::Cr3bp {
            return Err(Error::Config("truth model must be ER3BP or BCR4BP".into()));
        }
        Ok(())
    }
}

/// Everything needed to execute and re-solve one transfer.
pub struct PlanContext<'a> {
    pub orbit: &'a PeriodicOrbit,
    pub disc: &'a Discretization,
    pub spec: &'a TransferSpec,
    pub koz: Option<&'a KozSpec>,
    pub qprit: Option<&'a QpritSafetySpec>,
    pub drift: Option<&'a DriftData>,
    pub scp: ScpParams,
}

/// A truth world for execution: possibly a different dynamics model with its
/// own continued chief orbit.
pub struct TruthWorld<'a> {
    pub chief: &'a Trajectory,
    /// Truth epoch corresponding to the plan's first node.
    pub t0: f64,
}

impl<'a> TruthWorld<'a> {
    /// Execute in the planning model itself.
    pub fn same_as_plan(orbit: &'a PeriodicOrbit, disc: &Discretization) -> TruthWorld<'a> {
        TruthWorld {
            chief: &orbit.dense,
            t0: disc.epochs[0],
        }
    }

    fn epoch(&self, plan_epochs: &[f64], t: f64) -> f64 {
        self.t0 + (t - plan_epochs[0])
    }
}

/// Rollout outcome for a single deputy.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// Achieved pre-impulse relative states at the plan nodes (VNB of the
    /// truth chief, nondim).
    pub node_states: Vec<RelState>,
    /// Sampled relative positions between nodes (shared grid across
    /// deputies), VNB axes, nondim.
    pub samples: Vec<(f64, Vec3)>,
    /// Terminal errors against the plan target.
    pub terminal_pos_err_m: f64,
    pub terminal_vel_err_mmps: f64,
    /// Terminal LTC error through the carried basis (unscaled nondim).
    pub terminal_zeta_err: Vec6,
    /// Total applied delta-v, mm/s.
    pub cost_mmps: f64,
    /// Impulses actually applied, mm/s.
    pub applied_mmps: Vec<Vec3>,
    /// Replans that fell back to the previous plan.
    pub replan_failures: u32,
}

const SEP_SAMPLES_PER_INTERVAL: usize = 12;

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open intervals
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deputy absolute barycentric state realized from a VNB relative state
/// about the truth chief at truth epoch `t`.
fn deputy_abs_from_rel(truth: &Trajectory, t: f64, rel: &RelState) -> Result<Vec6> {
    let kin = truth.kin(t)?;
    let frame = vnb_basis(&kin)?;
    let dep_moon = from_local(&kin, &rel.rho, &rel.rho_dot, &frame, truth.model);
    Ok(dynamics::moon_to_bary(&dep_moon, &truth.params)?.as_vec6())
}

fn rel_from_deputy_abs(truth: &Trajectory, t: f64, dep_bary: &Vec6) -> Result<RelState> {
    let kin = truth.kin(t)?;
    let frame = vnb_basis(&kin)?;
    let dep = dynamics::bary_to_moon(
        &SynodicState::new_bary(truth.model, t, dep_bary),
        &truth.params,
    )?;
    let (rho, rho_dot) = to_local(&kin, &dep, &frame)?;
    Ok(RelState { rho, rho_dot, t })
}

/// Apply an impulse (mm/s, VNB axes of the truth chief) to an absolute
/// deputy state.
fn apply_impulse(truth: &Trajectory, t: f64, dep: &mut Vec6, u_mmps: &Vec3) -> Result<()> {
    let kin = truth.kin(t)?;
    let frame = vnb_basis(&kin)?;
    let dv = frame.basis * (u_mmps * truth.params.mps_to_nd(1e-3));
    dep[3] += dv.x;
    dep[4] += dv.y;
    dep[5] += dv.z;
    Ok(())
}

fn apply_noise(
    truth: &Trajectory,
    t: f64,
    dep: &mut Vec6,
    noise: &NoiseSpec,
    dt_nd: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let dt_s = dt_nd * truth.params.time_unit_s;
    let sigma_pos_m = noise.q_pos_mps * dt_s;
    let sigma_vel_mps = noise.q_vel_mps2 * dt_s;
    let kin = truth.kin(t)?;
    let frame = vnb_basis(&kin)?;
    let dpos = Vec3::from_fn(|_, _| standard_normal(rng) * truth.params.m_to_nd(sigma_pos_m));
    let dvel = Vec3::from_fn(|_, _| standard_normal(rng) * truth.params.mps_to_nd(sigma_vel_mps));
    let dp = frame.basis * dpos;
    let dv = frame.basis * dvel;
    for i in 0..3 {
        dep[i] += dp[i];
        dep[3 + i] += dv[i];
    }
    Ok(())
}

/// Execute a plan's impulses at its nodes, integrating the nonlinear
/// dynamics of the truth world between nodes, with optional process noise.
pub fn rollout(
    plan: &DeputyPlan,
    ctx: &PlanContext,
    truth: &TruthWorld,
    noise: Option<&NoiseSpec>,
    run_seed: u64,
) -> Result<RolloutResult> {
    execute(plan, ctx, truth, noise, run_seed, None)
}

/// Shrinking-horizon MPC: at each replan index, the achieved state is
/// measured (perfect knowledge), mapped to LTC through the carried basis,
/// and the remaining horizon re-solved.
pub fn mpc_run(
    plan: &DeputyPlan,
    ctx: &PlanContext,
    mpc: &MpcSpec,
    truth: &TruthWorld,
    noise: Option<&NoiseSpec>,
    run_seed: u64,
    deputy: usize,
) -> Result<RolloutResult> {
    mpc.validate(ctx.disc.n_intervals())?;
    execute(plan, ctx, truth, noise, run_seed, Some((mpc, deputy)))
}

fn execute(
    plan: &DeputyPlan,
    ctx: &PlanContext,
    truth: &TruthWorld,
    noise: Option<&NoiseSpec>,
    run_seed: u64,
    mpc: Option<(&MpcSpec, usize)>,
) -> Result<RolloutResult> {
    let disc = ctx.disc;
    let n = disc.n_intervals();
    let epochs = &plan.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let tol = 1e-11;

    // realize the initial condition about the truth chief
    let x0 = disc.t_maps[0].0 * plan.zeta[0].as_vec6();
    let rel0 = RelState::from_vec6(truth.t0, &x0);
    let mut dep = deputy_abs_from_rel(truth.chief, truth.t0, &rel0)?;

    let mut impulses = plan.impulses_mmps.clone();
    let mut node_states = Vec::with_capacity(n + 1);
    let mut samples = Vec::new();
    let mut cost = 0.0;
    let mut replan_failures = 0u32;

    for k in 0..=n {
        let t_truth = truth.epoch(epochs, epochs[k]);
        let rel_k = rel_from_deputy_abs(truth.chief, t_truth, &dep)?;
        node_states.push(rel_k);

        // replan the remaining horizon at the designated indices
        if let Some((mpc_spec, deputy)) = mpc {
            if mpc_spec.replan_indices.contains(&k) {
                match replan(ctx, deputy, k, &rel_k) {
                    Ok(new_tail) => {
                        for (j, u) in new_tail.iter().enumerate() {
                            impulses[k + j] = *u;
                        }
                    }
                    Err(_) => replan_failures += 1,
                }
            }
        }

        apply_impulse(truth.chief, t_truth, &mut dep, &impulses[k])?;
        cost += impulses[k].norm();
        if k == n {
            break;
        }
        // integrate to the next node, sampling for separation analysis
        let dt = epochs[k + 1] - epochs[k];
        for s in 0..SEP_SAMPLES_PER_INTERVAL {
            let tau = epochs[k] + dt * s as f64 / SEP_SAMPLES_PER_INTERVAL as f64;
            let t_tau = truth.epoch(epochs, tau);
            let sol = propagate_abs(truth, &dep, t_truth, t_tau, tol)?;
            let rel = rel_from_deputy_abs(truth.chief, t_tau, &sol)?;
            samples.push((tau, rel.rho));
        }
        dep = propagate_abs(truth, &dep, t_truth, truth.epoch(epochs, epochs[k + 1]), tol)?;
        if let Some(nz) = noise {
            apply_noise(
                truth.chief,
                truth.epoch(epochs, epochs[k + 1]),
                &mut dep,
                nz,
                dt,
                &mut rng,
            )?;
        }
    }
    // terminal comparison: post-impulse achieved state vs the plan target
    let t_end = truth.epoch(epochs, epochs[n]);
    let rel_end = rel_from_deputy_abs(truth.chief, t_end, &dep)?;
    samples.push((epochs[n], rel_end.rho));
    let zeta_f_plan = disc.a_mats.last().map(|_| ()).and(Some(())).map(|_| {
        // target = zeta_N + B_N u_N from the nominal plan
        let z = plan.zeta[n].as_vec6() + scaled_impulse_effect(disc, n, &plan.impulses_mmps[n]);
        z
    });
    let zeta_target = zeta_f_plan.expect("target");
    let x_target = disc.t_maps[n].0 * zeta_target;
    let dx = rel_end.as_vec6() - x_target;
    let pos_err_m = disc
        .params
        .nd_to_m((dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt());
    let vel_err_mmps =
        disc.params.nd_to_mps((dx[3] * dx[3] + dx[4] * dx[4] + dx[5] * dx[5]).sqrt()) * 1e3;
    let zeta_end = disc.t_maps[n].1 * rel_end.as_vec6();
    Ok(RolloutResult {
        node_states,
        samples,
        terminal_pos_err_m: pos_err_m,
        terminal_vel_err_mmps: vel_err_mmps,
        terminal_zeta_err: zeta_end - zeta_target,
        cost_mmps: cost,
        applied_mmps: impulses,
        replan_failures,
    })
}

/// Unscaled LTC rate change from an impulse at node k.
fn scaled_impulse_effect(disc: &Discretization, k: usize, u_mmps: &Vec3) -> Vec6 {
    let scaled = disc.b_mats[k] * u_mmps;
    disc.unscale_state(&scaled)
}

fn propagate_abs(truth: &TruthWorld, dep: &Vec6, t0: f64, t1: f64, tol: f64) -> Result<Vec6> {
    if t0 == t1 {
        return Ok(*dep);
    }
    let s0 = SynodicState::new_bary(truth.chief.model, t0, dep);
    let traj = propagate(truth.chief.model, &s0, t0, t1, tol, &truth.chief.params)?;
    Ok(traj.state_bary(t1).as_vec6())
}

/// Re-solve the remaining horizon from node k with the measured LTC state.
fn replan(ctx: &PlanContext, deputy: usize, k: usize, rel_meas: &RelState) -> Result<Vec<Vec3>> {
    let disc = ctx.disc;
    let n = disc.n_intervals();
    let tail = Discretization {
        epochs: disc.epochs[k..].to_vec(),
        a_mats: disc.a_mats[k..].to_vec(),
        b_mats: disc.b_mats[k..].to_vec(),
        t_maps: disc.t_maps[k..].to_vec(),
        bases: crate::ltc::BasisHistory {
            epochs: disc.bases.epochs[k..].to_vec(),
            bases: disc.bases.bases[k..].to_vec(),
            w_re: disc.bases.w_re[k..].to_vec(),
            w_im: disc.bases.w_im[k..].to_vec(),
            chief_id: disc.bases.chief_id.clone(),
        },
        params: disc.params,
    };
    // measured state through the carried basis
    let zeta_meas = disc.t_maps[k].1 * rel_meas.as_vec6();
    let bc0 = tail.scale_state(&zeta_meas);
    let bcf = crate::ocp::bc_to_scaled(
        &ctx.spec.bc_terminal[deputy],
        tail.epochs[tail.n_intervals()],
        &disc.params,
    )?;
    // windows shifted into the tail index space
    let windows: Vec<(usize, usize)> = ctx
        .spec
        .no_control_windows
        .iter()
        .filter_map(|&(lo, hi)| {
            if hi < k {
                None
            } else {
                Some((lo.saturating_sub(k), hi - k))
            }
        })
        .collect();
    let plan = match ctx.spec.safety_mode {
        SafetyMode::None => {
            let sol = crate::ocp::solve_cvx(&tail, &bc0, &bcf, &windows, [None; 6])?;
            return Ok(sol.impulses);
        }
        SafetyMode::Qprit => {
            let spec = ctx
                .qprit
                .ok_or_else(|| Error::Config("QPRIT replan needs the safety spec".into()))?;
            scp_solve(
                &tail,
                &bc0,
                &bcf,
                &windows,
                &SafetyConfig::Qprit { spec, deputy },
                &ctx.scp,
            )?
        }
        SafetyMode::Drift => {
            let koz = ctx
                .koz
                .ok_or_else(|| Error::Config("DRIFT replan needs the KOZ spec".into()))?;
            let drift = ctx
                .drift
                .ok_or_else(|| Error::Config("DRIFT replan needs drift data".into()))?;
            let tail_drift = DriftData {
                stms: drift.stms[k..].to_vec(),
            };
            scp_solve(
                &tail,
                &bc0,
                &bcf,
                &windows,
                &SafetyConfig::Drift {
                    koz,
                    drift: &tail_drift,
                },
                &ctx.scp,
            )?
        }
    };
    let _ = n;
    Ok(plan.impulses_mmps)
}

// ---------------------------------------------------------------------------
// Drift-safety evaluation (nonlinear)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DriftSafetyRecord {
    pub node_epoch: f64,
    /// max over the drift of sqrt(x'Px) - x'Px (positive = violation).
    pub worst_violation: f64,
    pub safe: bool,
}

/// Free-drift each node state through the nonlinear truth dynamics over the
/// horizon and evaluate the KOZ exclusion gauge along the way.
pub fn evaluate_drift_safety(
    node_states: &[RelState],
    node_epochs_truth: &[f64],
    truth: &Trajectory,
    koz: &KozSpec,
    horizon_revs: f64,
    rev_period: f64,
) -> Result<Vec<DriftSafetyRecord>> {
    if node_states.len() != node_epochs_truth.len() {
        return Err(Error::GridMismatch("node states vs epochs".into()));
    }
    let p = koz.p_matrix(&truth.params);
    let horizon = horizon_revs * rev_period;
    let tol = 1e-10;
    let n_samples = 240;
    let mut out = Vec::with_capacity(node_states.len());
    for (rel, &t_node) in node_states.iter().zip(node_epochs_truth) {
        let rel_t = RelState { t: t_node, ..*rel };
        let dep0 = deputy_abs_from_rel(truth, t_node, &rel_t)?;
        let s0 = SynodicState::new_bary(truth.model, t_node, &dep0);
        let drift = propagate(truth.model, &s0, t_node, t_node + horizon, tol, &truth.params)?;
        let mut worst = f64::MIN;
        for i in 0..=n_samples {
            let t = t_node + horizon * i as f64 / n_samples as f64;
            let rel_i = rel_from_deputy_abs(truth, t, &drift.state_bary(t).as_vec6())?;
            let x = rel_i.as_vec6();
            let q = (p * x).dot(&x);
            worst = worst.max(q.sqrt() - q);
        }
        out.push(DriftSafetyRecord {
            node_epoch: t_node,
            worst_violation: worst,
            safe: worst <= 0.0,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pairwise separation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSeparation {
    /// 0 is the chief; deputies are 1-based.
    pub a: usize,
    pub b: usize,
    pub min_m: f64,
    pub min_epoch: f64,
}

/// Minimum pairwise Euclidean separation over a shared epoch grid; index 0
/// is the chief at the origin.
pub fn min_separation_matrix(
    trajectories: &[Vec<(f64, Vec3)>],
    params: &crate::constants::ModelParams,
) -> Result<Vec<PairSeparation>> {
    if trajectories.is_empty() {
        return Ok(Vec::new());
    }
    let n_pts = trajectories[0].len();
    for tr in trajectories {
        if tr.len() != n_pts {
            return Err(Error::GridMismatch("separation grids differ in length".into()));
        }
        for (p, q) in tr.iter().zip(&trajectories[0]) {
            if (p.0 - q.0).abs() > 1e-9 {
                return Err(Error::GridMismatch("separation epochs differ".into()));
            }
        }
    }
    let n = trajectories.len();
    let mut out = Vec::new();
    for a in 0..=n {
        for b in (a + 1)..=n {
            let mut best = f64::MAX;
            let mut best_t = 0.0;
            for i in 0..n_pts {
                let pa = if a == 0 {
                    Vec3::zeros()
                } else {
                    trajectories[a - 1][i].1
                };
                let pb = trajectories[b - 1][i].1;
                let d = (pa - pb).norm();
                if d < best {
                    best = d;
                    best_t = trajectories[b - 1][i].0;
                }
            }
            out.push(PairSeparation {
                a,
                b,
                min_m: params.nd_to_m(best),
                min_epoch: best_t,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Monte-Carlo campaigns
// ---------------------------------------------------------------------------

/// Mean and sample standard deviation accumulated with pairwise summation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
}

pub fn stats_of(values: &[f64]) -> Stats {
    let n = values.len();
    if n == 0 {
        return Stats { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return Stats { mean, sd: 0.0 };
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    Stats {
        mean,
        sd: (pairwise_sum(&sq) / (n as f64 - 1.0)).sqrt(),
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeputyCampaignStats {
    pub deputy: usize,
    pub cost_mmps: Stats,
    pub pos_err_m: Stats,
    pub vel_err_mmps: Stats,
    pub h_m: Stats,
    pub alpha_m: Stats,
    pub beta_m: Stats,
    pub h_dot_mmps: Stats,
    pub alpha_dot_mmps: Stats,
    pub beta_dot_mmps: Stats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McResult {
    pub n_runs: usize,
    pub n_completed: usize,
    pub n_failed: usize,
    pub per_deputy: Vec<DeputyCampaignStats>,
    /// Nominal (no-noise plan rollout) pairwise minimum separations.
    pub nominal_separation: Vec<PairSeparation>,
    /// Worst (minimum over runs) pairwise separations.
    pub worst_separation: Vec<PairSeparation>,
    /// Fraction of completed runs whose every node passed the one-rev
    /// nonlinear drift-safety check.
    pub safety_pass_fraction: f64,
}

pub struct CampaignConfig<'a> {
    pub plans: &'a [DeputyPlan],
    pub ctx: &'a PlanContext<'a>,
    pub truth: &'a TruthWorld<'a>,
    pub mpc: Option<&'a MpcSpec>,
    pub noise: NoiseSpec,
    pub n_runs: usize,
    pub koz: &'a KozSpec,
    /// Evaluate the nonlinear drift-safety post-check for every run.
    pub check_safety: bool,
}

struct RunOutcome {
    rollouts: Vec<RolloutResult>,
    all_safe: bool,
}

/// Independent seeded runs of the whole swarm; statistics are computed over
/// completed runs only, in run order, so results are identical across worker
/// counts.
pub fn monte_carlo(cfg: &CampaignConfig) -> Result<McResult> {
    if cfg.n_runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let outcomes: Vec<Result<RunOutcome>> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| single_run(cfg, run as u64))
        .collect();
    let mut completed = Vec::new();
    let mut n_failed = 0usize;
    for oc in outcomes {
        match oc {
            Ok(r) => completed.push(r),
            Err(_) => n_failed += 1,
        }
    }
    if completed.is_empty() {
        return Err(Error::Infeasible("every campaign run failed".into()));
    }
    let n_dep = cfg.plans.len();
    let params = &cfg.ctx.disc.params;
    let mut per_deputy = Vec::with_capacity(n_dep);
    for d in 0..n_dep {
        let collect = |f: &dyn Fn(&RolloutResult) -> f64| -> Vec<f64> {
            completed.iter().map(|r| f(&r.rollouts[d])).collect()
        };
        per_deputy.push(DeputyCampaignStats {
            deputy: d + 1,
            cost_mmps: stats_of(&collect(&|r| r.cost_mmps)),
            pos_err_m: stats_of(&collect(&|r| r.terminal_pos_err_m)),
            vel_err_mmps: stats_of(&collect(&|r| r.terminal_vel_err_mmps)),
            h_m: stats_of(&collect(&|r| params.nd_to_m(r.terminal_zeta_err[2].abs()))),
            alpha_m: stats_of(&collect(&|r| params.nd_to_m(r.terminal_zeta_err[0].abs()))),
            beta_m: stats_of(&collect(&|r| params.nd_to_m(r.terminal_zeta_err[1].abs()))),
            h_dot_mmps: stats_of(
                &collect(&|r| params.nd_to_mps(r.terminal_zeta_err[5].abs()) * 1e3),
            ),
            alpha_dot_mmps: stats_of(
                &collect(&|r| params.nd_to_mps(r.terminal_zeta_err[3].abs()) * 1e3),
            ),
            beta_dot_mmps: stats_of(
                &collect(&|r| params.nd_to_mps(r.terminal_zeta_err[4].abs()) * 1e3),
            ),
        });
    }
    // nominal separations from a noise-free open-loop rollout
    let nominal_runs: Vec<RolloutResult> = cfg
        .plans
        .iter()
        .map(|p| rollout(p, cfg.ctx, cfg.truth, None, 0))
        .collect::<Result<_>>()?;
    let nominal_trajs: Vec<Vec<(f64, Vec3)>> =
        nominal_runs.iter().map(|r| r.samples.clone()).collect();
    let nominal_separation = min_separation_matrix(&nominal_trajs, params)?;
    // worst separations across runs
    let mut worst_separation = nominal_separation.clone();
    for run in &completed {
        let trajs: Vec<Vec<(f64, Vec3)>> = run.rollouts.iter().map(|r| r.samples.clone()).collect();
        for (w, s) in worst_separation
            .iter_mut()
            .zip(min_separation_matrix(&trajs, params)?)
        {
            if s.min_m < w.min_m {
                *w = s;
            }
        }
    }
    let n_safe = completed.iter().filter(|r| r.all_safe).count();
    Ok(McResult {
        n_runs: cfg.n_runs,
        n_completed: completed.len(),
        n_failed,
        per_deputy,
        nominal_separation,
        worst_separation,
        safety_pass_fraction: n_safe as f64 / completed.len() as f64,
    })
}

fn single_run(cfg: &CampaignConfig, run: u64) -> Result<RunOutcome> {
    let mut rollouts = Vec::with_capacity(cfg.plans.len());
    let mut all_safe = true;
    for (d, plan) in cfg.plans.iter().enumerate() {
        // decorrelate deputies and runs deterministically
        let seed = cfg
            .noise
            .seed
            .wrapping_add(run)
            .wrapping_add((d as u64) << 32);
        let rr = match cfg.mpc {
            Some(mpc) => mpc_run(plan, cfg.ctx, mpc, cfg.truth, Some(&cfg.noise), seed, d)?,
            None => rollout(plan, cfg.ctx, cfg.truth, Some(&cfg.noise), seed)?,
        };
        if cfg.check_safety {
            let epochs_truth: Vec<f64> = plan
                .epochs
                .iter()
                .map(|&t| cfg.truth.epoch(&plan.epochs, t))
                .collect();
            let recs = evaluate_drift_safety(
                &rr.node_states,
                &epochs_truth,
                cfg.truth.chief,
                cfg.koz,
                1.0,
                cfg.ctx.orbit.rev_period(),
            )?;
            if recs.iter().any(|r| !r.safe) {
                all_safe = false;
            }
        }
        rollouts.push(rr);
    }
    Ok(RunOutcome { rollouts, all_safe })
}

// ---------------------------------------------------------------------------
// Whole-transfer solve (decentralized over deputies)
// ---------------------------------------------------------------------------

/// Solve the transfer for every deputy independently and return the plans.
pub fn solve_transfer(
    orbit: &PeriodicOrbit,
    mode: &OscillatoryMode,
    spec: &TransferSpec,
    koz: Option<&KozSpec>,
    qprit: Option<&QpritSafetySpec>,
    scp: &ScpParams,
    tol: f64,
) -> Result<(Discretization, Option<DriftData>, Vec<DeputyPlan>)> {
    spec.validate()?;
    let t0 = orbit.t0_anchor;
    let tf = t0 + spec.tf_revs * orbit.rev_period();
    let epochs = sundman_nodes(
        |t| orbit.dense.r_moon(t),
        spec.n_nodes,
        spec.sundman_alpha,
        t0,
        tf,
    )?;
    let disc = discretize_checked(orbit, mode, &epochs, tol)?;
    let drift = match spec.safety_mode {
        SafetyMode::Drift => {
            let koz = koz.ok_or_else(|| Error::Config("DRIFT safety needs a KOZ spec".into()))?;
            koz.validate()?;
            Some(crate::ocp::drift_data(orbit, &epochs, koz, spec.sundman_alpha, tol)?)
        }
        _ => None,
    };
    if spec.safety_mode == SafetyMode::Qprit {
        qprit
            .ok_or_else(|| Error::Config("QPRIT safety needs its spec".into()))?
            .validate(spec.n_deputies)?;
    }
    let mut plans = Vec::with_capacity(spec.n_deputies);
    for d in 0..spec.n_deputies {
        let bc0 = crate::ocp::bc_to_scaled(&spec.bc_initial[d], t0, &orbit.params)?;
        let bcf = crate::ocp::bc_to_scaled(&spec.bc_terminal[d], tf, &orbit.params)?;
        let plan = match spec.safety_mode {
            SafetyMode::None => scp_solve(
                &disc,
                &bc0,
                &bcf,
                &spec.no_control_windows,
                &SafetyConfig::None,
                scp,
            )?,
            SafetyMode::Qprit => scp_solve(
                &disc,
                &bc0,
                &bcf,
                &spec.no_control_windows,
                &SafetyConfig::Qprit {
                    spec: qprit.unwrap(),
                    deputy: d,
                },
                scp,
            )?,
            SafetyMode::Drift => scp_solve(
                &disc,
                &bc0,
                &bcf,
                &spec.no_control_windows,
                &SafetyConfig::Drift {
                    koz: koz.unwrap(),
                    drift: drift.as_ref().unwrap(),
                },
                scp,
            )?,
        };
        plans.push(plan);
    }
    Ok((disc, drift, plans))
}

fn discretize_checked(
    orbit: &PeriodicOrbit,
    mode: &OscillatoryMode,
    epochs: &[f64],
    tol: f64,
) -> Result<Discretization> {
    if (mode.fixed_point_t - epochs[0]).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "mode anchored at {} but the node grid starts at {}",
            mode.fixed_point_t, epochs[0]
        )));
    }
    crate::ocp::discretize(orbit, mode, epochs, tol)
}

/// Zero-impulse coasting subproblem feasibility helper used by tests: the
/// discrete model must keep an on-torus state on the torus.
pub fn coast_states(disc: &Discretization, bc0_scaled: &Vec6) -> Vec<Vec6> {
    let mut states = vec![*bc0_scaled];
    for a in &disc.a_mats {
        let next = a * states.last().unwrap();
        states.push(next);
    }
    states
}

/// Feasibility probe: can the boundary conditions be met with everything
/// else relaxed (used for spec-level diagnostics).
pub fn reachable(disc: &Discretization, bc0: &Vec6, bcf: &Vec6) -> Result<bool> {
    let sol = conic_subproblem(&SubproblemInputs {
        disc,
        bc0: *bc0,
        bcf: *bcf,
        windows: &[],
        boxes: [None; 6],
        constraints: &[],
        trust_region: None,
        reference: None,
        penalty_weight: 0.0,
    })?;
    Ok(sol.status != SubproblemStatus::Infeasible)
}

#[allow(unused_imports)]
use BoxBounds as _BoxBoundsUsedInDocs;
