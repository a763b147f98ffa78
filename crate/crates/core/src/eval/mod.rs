//! Monte Carlo evaluation: run trials with a controller, judge success from
//! the recorded trace, aggregate per log diameter, export tables.

pub mod oracle;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{ActionCommand, EnvSettings, GraspEnv, Observation, TerminationReason, OBS_DIM};
use crate::error::{Error, Result};
use crate::kinematics::{JAW, N_ACTUATED};
use crate::policy::{ActMode, Policy};
use crate::sim::trajectory::TrajectoryWriter;
use crate::sim::SimState;
use crate::train::trainer::derive_seed;

pub use oracle::OracleController;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessCriteria {
    /// Proximity (`d_combine < proximity_threshold`) must happen by this time (s).
    pub reach_deadline: f64,
    /// The log must be held at the lift target by this time (s).
    pub grasp_deadline: f64,
    pub proximity_threshold: f64,
    /// Largest allowed axial offset (m) of the grapple from the log center at grasp.
    pub center_miss_threshold: f64,
    pub lift_target: f64,
    pub lift_tolerance: f64,
    /// Minimum `q8/q̄8` counted as fully closed.
    pub grip_fraction: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            reach_deadline: 6.0,
            grasp_deadline: 9.0,
            proximity_threshold: 0.2,
            center_miss_threshold: 0.5,
            lift_target: 1.5,
            lift_tolerance: 0.25,
            grip_fraction: 0.95,
        }
    }
}

impl SuccessCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.reach_deadline > 0.0 && self.reach_deadline < self.grasp_deadline) {
            return Err(Error::config("criteria.reach_deadline", "must be positive and below grasp_deadline"));
        }
        if !(self.center_miss_threshold >= 0.0 && self.lift_tolerance >= 0.0) {
            return Err(Error::config("criteria", "thresholds must be non-negative"));
        }
        Ok(())
    }
}

/// Why a trial failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    Timeout,
    CenterMiss,
    NeverReached,
    JointLimit,
    OutOfRange,
    VelocityLimit,
}

impl FailureReason {
    pub const ALL: [FailureReason; 6] = [
        FailureReason::Timeout,
        FailureReason::CenterMiss,
        FailureReason::NeverReached,
        FailureReason::JointLimit,
        FailureReason::OutOfRange,
        FailureReason::VelocityLimit,
    ];

    pub fn column(self) -> &'static str {
        match self {
            FailureReason::Timeout => "timeout",
            FailureReason::CenterMiss => "center_miss",
            FailureReason::NeverReached => "never_reached",
            FailureReason::JointLimit => "joint_limit",
            FailureReason::OutOfRange => "out_of_range",
            FailureReason::VelocityLimit => "velocity_limit",
        }
    }
}

/// What the judge needs from one environment step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub time: f64,
    pub d_combine: f64,
    /// Axial offset of the current attachment, if the log is held.
    pub attachment_axial: Option<f64>,
    /// `q8/q̄8`.
    pub grip: f64,
    pub log_height: f64,
    pub termination: Option<TerminationReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    pub failure: Option<FailureReason>,
    pub reach_time: Option<f64>,
    /// Time the held log first sat at the lift target.
    pub grasp_time: Option<f64>,
    /// |axial offset| of the grapple from the log center at attachment.
    pub miss_distance: Option<f64>,
    pub steps: usize,
}

const TIME_EPS: f64 = 1e-9;

fn hard_failure(reason: TerminationReason) -> Option<FailureReason> {
    match reason {
        TerminationReason::JointLimit => Some(FailureReason::JointLimit),
        TerminationReason::LogOutOfRange => Some(FailureReason::OutOfRange),
        TerminationReason::VelocityLimit => Some(FailureReason::VelocityLimit),
        _ => None,
    }
}

/// Pure success judgement over a recorded trace.
///
/// Success needs proximity by the reach deadline, then the log held closed
/// within the lift tolerance by the grasp deadline with the attachment
/// inside the center-miss threshold, all before any hard termination.
/// Failures are ranked: hard termination, center miss, never reached,
/// timeout.
pub fn judge(trace: &[TraceStep], criteria: &SuccessCriteria) -> TrialResult {
    let hard = trace
        .iter()
        .enumerate()
        .find_map(|(i, s)| s.termination.and_then(hard_failure).map(|r| (i, r)));
    let horizon = hard.map_or(trace.len(), |(i, _)| i + 1);
    let window = &trace[..horizon];
    let reach_time = window
        .iter()
        .find(|s| s.d_combine < criteria.proximity_threshold)
        .map(|s| s.time);
    let reached = reach_time.is_some_and(|t| t <= criteria.reach_deadline + TIME_EPS);

    let lifted = window.iter().find(|s| {
        s.time <= criteria.grasp_deadline + TIME_EPS
            && s.grip >= criteria.grip_fraction
            && (s.log_height - criteria.lift_target).abs() <= criteria.lift_tolerance
            && s.attachment_axial
                .is_some_and(|a| a.abs() <= criteria.center_miss_threshold)
            && reach_time.is_some_and(|r| r <= s.time)
    });
    let last_axial = window.iter().rev().find_map(|s| s.attachment_axial);
    let steps = trace.len();

    if let (true, Some(s)) = (reached, lifted) {
        return TrialResult {
            success: true,
            failure: None,
            reach_time,
            grasp_time: Some(s.time),
            miss_distance: s.attachment_axial.map(f64::abs),
            steps,
        };
    }
    let failure = if let Some((_, r)) = hard {
        r
    } else if last_axial.is_some_and(|a| a.abs() > criteria.center_miss_threshold) {
        FailureReason::CenterMiss
    } else if !reached {
        FailureReason::NeverReached
    } else {
        FailureReason::Timeout
    };
    TrialResult {
        success: false,
        failure: Some(failure),
        reach_time,
        grasp_time: None,
        miss_distance: last_axial.map(f64::abs),
        steps,
    }
}

/// Anything that turns observations into commands.
pub trait Controller {
    /// Called once per trial after the environment is reset.
    fn reset(&mut self, _env: &GraspEnv) {}

    fn command(&mut self, env: &GraspEnv, obs: &Observation) -> Result<ActionCommand>;
}

/// Deterministic (mean-action) policy.
pub struct PolicyController<'a> {
    pub policy: &'a Policy,
}

impl Controller for PolicyController<'_> {
    fn command(&mut self, env: &GraspEnv, obs: &Observation) -> Result<ActionCommand> {
        let f = env.features(obs);
        let x = Array2::from_shape_vec((1, OBS_DIM), f.to_vec()).expect("row shape");
        // The rng is never touched in deterministic mode.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let out = self.policy.act(&x, ActMode::Deterministic, &mut unused)?;
        let mut cmd = [0.0; N_ACTUATED];
        cmd.copy_from_slice(&out[0].command);
        Ok(ActionCommand(cmd))
    }
}

fn trace_step(env: &GraspEnv, state: &SimState, termination: Option<TerminationReason>) -> TraceStep {
    TraceStep {
        time: state.sim_time,
        d_combine: env.d_combine(),
        attachment_axial: state.attachment.map(|a| a.axial_offset),
        grip: state.joints[JAW] / env.sim.kinematics.jaw_closed(),
        log_height: state.log.position.z,
        termination,
    }
}

/// Runs one trial from the environment's current (freshly reset) state.
/// Stops at termination or as soon as the judge would call it a success.
pub fn run_trial(
    controller: &mut dyn Controller,
    env: &mut GraspEnv,
    criteria: &SuccessCriteria,
    mut on_step: Option<&mut dyn FnMut(&GraspEnv)>,
) -> Result<(TrialResult, Vec<TraceStep>)> {
    let mut obs = env.observe();
    controller.reset(env);
    let mut trace = vec![trace_step(env, env.state().expect("reset first"), None)];
    loop {
        let cmd = controller.command(env, &obs)?;
        let out = env.step(&cmd)?;
        obs = out.observation;
        let st = env.state().expect("reset first");
        trace.push(trace_step(env, st, out.termination));
        if let Some(cb) = on_step.as_mut() {
            cb(env);
        }
        if out.termination.is_some() {
            break;
        }
        let last = trace.last().expect("non-empty");
        if last.attachment_axial.is_some() && judge(&trace, criteria).success {
            break;
        }
    }
    Ok((judge(&trace, criteria), trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub diameter: f64,
    pub n_trials: usize,
    pub successes: usize,
    /// Percent; absent for an empty batch.
    pub success_rate: Option<f64>,
    pub failures: BTreeMap<FailureReason, usize>,
}

impl BatchStats {
    pub fn from_results(diameter: f64, results: &[TrialResult]) -> Self {
        let successes = results.iter().filter(|r| r.success).count();
        let mut failures: BTreeMap<FailureReason, usize> = FailureReason::ALL.iter().map(|&r| (r, 0)).collect();
        for r in results {
            if let Some(f) = r.failure {
                *failures.get_mut(&f).expect("all reasons present") += 1;
            }
        }
        Self {
            diameter,
            n_trials: results.len(),
            successes,
            success_rate: (!results.is_empty()).then(|| 100.0 * successes as f64 / results.len() as f64),
            failures,
        }
    }
}

/// The scene of trial `k` at diameter index `i`.
pub fn trial_seed(seed: u64, diameter_index: usize, trial: usize) -> u64 {
    derive_seed(seed, ((diameter_index as u64) << 32) | trial as u64)
}

fn run_one<'a>(
    factory: &(dyn Fn() -> Box<dyn Controller + 'a> + Sync),
    settings: &EnvSettings,
    diameter: f64,
    seed: u64,
    trial: usize,
    criteria: &SuccessCriteria,
    trajectory: Option<&Path>,
) -> Result<TrialResult> {
    let mut s = settings.clone();
    s.scenario = s.scenario.with_fixed_diameter(diameter);
    let mut env = GraspEnv::new(s, seed, trial)?;
    env.reset()?;
    let mut controller = factory();
    let Some(path) = trajectory else {
        return run_trial(controller.as_mut(), &mut env, criteria, None).map(|(r, _)| r);
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut writer = TrajectoryWriter::new(std::io::BufWriter::new(file)).map_err(csv_err)?;
    let st = env.state().expect("reset above");
    writer.record(st, &env.sim.grapple(st)).map_err(csv_err)?;
    let mut failed = None;
    let mut record = |e: &GraspEnv| {
        let st = e.state().expect("reset above");
        if let Err(err) = writer.record(st, &e.sim.grapple(st)) {
            failed.get_or_insert(err);
        }
    };
    let (result, _) = run_trial(controller.as_mut(), &mut env, criteria, Some(&mut record))?;
    if let Some(e) = failed {
        return Err(csv_err(e));
    }
    writer.finish().map_err(|e| Error::io(path, e))?;
    Ok(result)
}

/// Runs `n_per_batch` trials for each diameter. Trials are independent and
/// run in parallel; results are ordered by (diameter, trial) regardless.
/// With `trajectory_dir` set, every trial's trajectory is written there as
/// `d{d}_trial{k}.csv`.
pub fn monte_carlo<'a>(
    factory: &(dyn Fn() -> Box<dyn Controller + 'a> + Sync),
    settings: &EnvSettings,
    diameters: &[f64],
    n_per_batch: usize,
    criteria: &SuccessCriteria,
    seed: u64,
    trajectory_dir: Option<&Path>,
) -> Result<Vec<BatchStats>> {
    criteria.validate()?;
    if let Some(dir) = trajectory_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let jobs: Vec<(usize, usize)> = (0..diameters.len())
        .flat_map(|i| (0..n_per_batch).map(move |k| (i, k)))
        .collect();
    let results: Vec<Result<TrialResult>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let d = diameters[i];
            let path = trajectory_dir.map(|dir| dir.join(format!("d{d:.2}_trial{k:04}.csv")));
            run_one(factory, settings, d, trial_seed(seed, i, k), k, criteria, path.as_deref())
        })
        .collect();
    let mut per_d: Vec<Vec<TrialResult>> = vec![Vec::new(); diameters.len()];
    for (&(i, _), r) in jobs.iter().zip(results) {
        per_d[i].push(r?);
    }
    Ok(diameters
        .iter()
        .zip(per_d)
        .map(|(&d, rs)| BatchStats::from_results(d, &rs))
        .collect())
}

/// CSV with one row per batch, ordered by diameter.
pub fn export_csv(stats: &[BatchStats]) -> String {
    let mut rows: Vec<&BatchStats> = stats.iter().collect();
    rows.sort_by(|a, b| a.diameter.total_cmp(&b.diameter));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["d", "n", "success_rate"];
    header.extend(FailureReason::ALL.iter().map(|r| r.column()));
    w.write_record(&header).expect("in-memory write");
    for s in rows {
        let mut rec = vec![
            format!("{:.2}", s.diameter),
            s.n_trials.to_string(),
            s.success_rate.map(|r| format!("{r:.1}")).unwrap_or_default(),
        ];
        rec.extend(FailureReason::ALL.iter().map(|r| s.failures.get(r).copied().unwrap_or(0).to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// Human-readable table of the same content.
pub fn export_text(stats: &[BatchStats]) -> String {
    let mut rows: Vec<&BatchStats> = stats.iter().collect();
    rows.sort_by(|a, b| a.diameter.total_cmp(&b.diameter));
    let mut out = String::new();
    let _ = write!(out, "{:>6} {:>5} {:>9}", "d [m]", "n", "success");
    for r in FailureReason::ALL {
        let _ = write!(out, " {:>14}", r.column());
    }
    out.push('\n');
    for s in rows {
        let rate = s.success_rate.map(|r| format!("{r:.1}%")).unwrap_or_else(|| "-".into());
        let _ = write!(out, "{:>6.2} {:>5} {:>9}", s.diameter, s.n_trials, rate);
        for r in FailureReason::ALL {
            let _ = write!(out, " {:>14}", s.failures.get(&r).copied().unwrap_or(0));
        }
        out.push('\n');
    }
    out
}
