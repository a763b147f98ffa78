//! Independent oracles and criterion checks shared by the integration tests
//! and the acceptance target.

#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use crane_grasp::config::RunConfig;
use crane_grasp::env::geometry::{angle_distance, log_axis_vector};
use crane_grasp::env::{
    check_termination, inject_pose_noise, noise_scale, reward, reward_terms, ActionCommand, EnvSettings, GraspEnv,
    NoiseConfig, TerminationConfig, TerminationReason,
};
use crane_grasp::eval::{
    export_csv, monte_carlo, BatchStats, Controller, OracleController, PolicyController, SuccessCriteria,
};
use crane_grasp::kinematics::{forward_kinematics, JointLimits, JointVector, KinematicsConfig, N_JOINTS};
use crane_grasp::policy::dist::{beta_log_prob, beta_log_prob_grad, beta_mean, beta_sample};
use crane_grasp::policy::network::{ActorCritic, HeadKind, NetworkShape};
use crane_grasp::policy::evaluate_head;
use crane_grasp::sim::{LogSpec, SimState, Simulator};
use crane_grasp::train::buffer::gae;
use crane_grasp::train::ppo::{ppo_loss, Batch, PpoHyper};
use crane_grasp::train::trainer::metrics_hash;
use crane_grasp::train::{Algo, Trainer};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($arg)+));
        }
    };
}
#[allow(unused_imports)]
pub(crate) use ensure;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a − b| / max(|a|, |b|)`, with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------- kinematics

pub type M4 = [[f64; 4]; 4];

pub fn mat_mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn mat_identity() -> M4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// `Rot_z(θ)·Trans_z(d)·Trans_x(a)·Rot_x(α)` as four separate products.
pub fn elementary(theta: f64, d: f64, a: f64, alpha: f64) -> M4 {
    let (sz, cz) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    let rz = [[cz, -sz, 0.0, 0.0], [sz, cz, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let mut tz = mat_identity();
    tz[2][3] = d;
    let mut tx = mat_identity();
    tx[0][3] = a;
    let rx = [[1.0, 0.0, 0.0, 0.0], [0.0, ca, -sa, 0.0], [0.0, sa, ca, 0.0], [0.0, 0.0, 0.0, 1.0]];
    mat_mul(&mat_mul(&mat_mul(&rz, &tz), &tx), &rx)
}

/// The crane table written out by hand, independent of the library's table.
/// Returns the grapple center and the grapple rotation.
pub fn fk_oracle(q: &[f64; 8]) -> ([f64; 3], [[f64; 3]; 3]) {
    let rows = [
        (q[0], 2.4, 0.18, FRAC_PI_2),
        (q[1], 0.0, 3.5, 0.0),
        (q[2], 0.0, -0.4, FRAC_PI_2),
        (0.0, q[3] + 3.1, 0.0, 0.0),
        (0.0, q[3], 0.0, -FRAC_PI_2),
        (q[4], 0.0, -0.21, -FRAC_PI_2),
        (q[5], 0.0, 0.0, -FRAC_PI_2),
        (q[6], 0.58, 0.0, 0.0),
    ];
    let mut h = mat_identity();
    for (t, d, a, al) in rows {
        h = mat_mul(&h, &elementary(t, d, a, al));
    }
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = h[i][j];
        }
    }
    let p = [h[0][3] + 0.3 * h[0][2], h[1][3] + 0.3 * h[1][2], h[2][3] + 0.3 * h[2][2]];
    (p, r)
}

pub fn random_q(rng: &mut ChaCha8Rng) -> JointVector {
    let lim = JointLimits::default();
    let mut q = JointVector::zeros();
    for j in 0..N_JOINTS {
        q[j] = if lim.is_bounded(j) {
            rng.random_range(lim.lower[j]..=lim.upper[j])
        } else {
            rng.random_range(-10.0..10.0)
        };
    }
    q
}

pub fn check_kinematics() -> Check {
    let cfg = KinematicsConfig::default();
    let mut r = rng(4);
    let (mut worst, mut ortho) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let q = random_q(&mut r);
        let g = forward_kinematics(&q, &cfg).map_err(|e| e.to_string())?;
        let (p, rot) = fk_oracle(&q.0);
        for i in 0..3 {
            worst = worst
                .max((g.position[i] - p[i]).abs())
                .max((g.x_axis[i] - rot[i][0]).abs())
                .max((g.y_axis[i] - rot[i][1]).abs())
                .max((g.z_axis[i] - rot[i][2]).abs());
        }
        ortho = ortho.max(g.orthonormality_error());
        let det = g.rotation().determinant();
        ensure!((det - 1.0).abs() <= 1e-9, "det R = {det}");
    }
    ensure!(worst <= 1e-9, "max deviation from oracle {worst:e} > 1e-9");
    ensure!(ortho <= 1e-9, "orthonormality error {ortho:e} > 1e-9");
    Ok(format!("100 configs, max |FK − oracle| = {worst:.1e}, max ‖RᵀR − I‖ = {ortho:.1e}"))
}

// ------------------------------------------------------------- distributions

pub const SHAPE_GRID: [f64; 4] = [1.2, 2.0, 5.0, 20.0];

/// Composite Gauss–Legendre (5 nodes per panel) of the Beta density on [0, 1].
pub fn beta_pdf_integral(alpha: f64, beta: f64, panels: usize) -> f64 {
    let nodes = [
        (0.0, 128.0 / 225.0),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let h = 1.0 / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (x, w) in nodes {
            let a = mid + 0.5 * h * x;
            total += 0.5 * h * w * beta_log_prob(a, alpha, beta).expect("valid args").exp();
        }
    }
    total
}

pub fn check_distributions() -> Check {
    let mut worst_int = 0.0f64;
    for &a in &SHAPE_GRID {
        for &b in &SHAPE_GRID {
            let i = beta_pdf_integral(a, b, 20_000);
            worst_int = worst_int.max((i - 1.0).abs());
        }
    }
    ensure!(worst_int <= 1e-6, "pdf integral off by {worst_int:e}");

    let n = 100_000;
    let mut worst_ks = 0.0f64;
    let mut worst_z = 0.0f64;
    for (k, &(a, b)) in [(1.2, 1.2), (2.0, 5.0), (5.0, 2.0), (20.0, 20.0), (1.5, 8.0)].iter().enumerate() {
        let mut r = rng(100 + k as u64);
        let mut xs: Vec<f64> = (0..n).map(|_| beta_sample(a, b, &mut r).unwrap()).collect();
        let mean = beta_mean(a, b).unwrap();
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let z_mean = (m - mean).abs() / (var / n as f64).sqrt();
        let z_var = (v - var).abs() / ((m4 - var * var) / n as f64).sqrt();
        ensure!(z_mean <= 3.0, "Beta({a},{b}) mean {m} vs {mean}: {z_mean:.2}σ");
        ensure!(z_var <= 3.0, "Beta({a},{b}) variance {v} vs {var}: {z_var:.2}σ");
        worst_z = worst_z.max(z_mean).max(z_var);
        xs.sort_by(f64::total_cmp);
        let ks = ks_statistic(&xs, |x| statrs::function::beta::beta_reg(a, b, x));
        ensure!(ks < 0.01, "Beta({a},{b}) KS = {ks}");
        worst_ks = worst_ks.max(ks);
    }
    Ok(format!(
        "∫pdf − 1 ≤ {worst_int:.1e} on 4×4 grid; moments within {worst_z:.2}σ; KS ≤ {worst_ks:.4} (n = 1e5)"
    ))
}

/// Two-sided KS statistic of sorted samples against a CDF.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

// --------------------------------------------------------------- gradients

pub fn check_beta_gradient() -> Result<f64, String> {
    let mut r = rng(11);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = r.random_range(0.02..0.98);
        let al = r.random_range(1.05..15.0);
        let be = r.random_range(1.05..15.0);
        let (ga, gb, gx) = beta_log_prob_grad(a, al, be);
        let f = |x: f64, p: f64, q: f64| beta_log_prob(x, p, q).unwrap();
        let fa = (f(a, al + h, be) - f(a, al - h, be)) / (2.0 * h);
        let fb = (f(a, al, be + h) - f(a, al, be - h)) / (2.0 * h);
        let fx = (f(a + h, al, be) - f(a - h, al, be)) / (2.0 * h);
        for (g, fd) in [(ga, fa), (gb, fb), (gx, fx)] {
            let e = rel_err(g, fd, 1e-3);
            ensure!(e <= 1e-4, "beta log-prob grad {g} vs fd {fd} at ({a}, {al}, {be})");
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

pub struct TinyProblem {
    pub net: ActorCritic,
    pub x: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// A 2×8 network and a batch of four samples whose probability ratios sit
/// near 1, away from the clip kinks.
pub fn tiny_problem(head: HeadKind, seed: u64) -> TinyProblem {
    let mut r = rng(seed);
    let shape = NetworkShape {
        input: 5,
        hidden: vec![8, 8],
        actions: 3,
        head,
    };
    let mut net = ActorCritic::new(shape, 0.5f64.ln(), &mut r).unwrap();
    // Larger actor weights than the near-zero init so head gradients are not tiny.
    let l = net.n_layers();
    net.params[2 * l].mapv_inplace(|v| v * 50.0);
    let x = Array2::from_shape_simple_fn((4, 5), || r.random_range(-1.0..1.0));
    let actions = match head {
        HeadKind::Beta => Array2::from_shape_simple_fn((4, 3), || r.random_range(0.05..0.95)),
        HeadKind::Gaussian => Array2::from_shape_simple_fn((4, 3), || r.random_range(-1.0..1.0)),
    };
    let cache = net.forward(x.view()).unwrap();
    let log_std = net.log_std().map(|p| p.row(0).to_vec());
    let old_log_probs = (0..4)
        .map(|i| {
            let head_row = cache.head.row(i).to_vec();
            let e = evaluate_head(head, &head_row, log_std.as_deref(), &actions.row(i).to_vec());
            e.log_prob + r.random_range(-0.05..0.05)
        })
        .collect();
    TinyProblem {
        net,
        x,
        actions,
        old_log_probs,
        advantages: (0..4).map(|_| r.random_range(-2.0..2.0)).collect(),
        returns: (0..4).map(|_| r.random_range(-2.0..2.0)).collect(),
    }
}

impl TinyProblem {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            features: self.x.view(),
            actions: self.actions.view(),
            old_log_probs: &self.old_log_probs,
            advantages: &self.advantages,
            returns: &self.returns,
        }
    }
}

/// Worst relative error of analytic vs central-difference gradients of the
/// PPO loss over `points` randomly chosen parameters.
pub fn network_gradient_error(head: HeadKind, hyper: PpoHyper, seed: u64, points: usize) -> Result<f64, String> {
    let p = tiny_problem(head, seed);
    let out = ppo_loss(&p.net, &p.batch(), &hyper).map_err(|e| e.to_string())?;
    let mut r = rng(seed ^ 0xabc);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let t = r.random_range(0..p.net.params.len());
        let shape = p.net.params[t].dim();
        let (i, j) = (r.random_range(0..shape.0), r.random_range(0..shape.1));
        let loss_at = |delta: f64| {
            let mut net = p.net.clone();
            net.params[t][[i, j]] += delta;
            let probe = TinyProblem { net, ..clone_problem(&p) };
            ppo_loss(&probe.net, &probe.batch(), &hyper).unwrap().loss
        };
        let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        let g = out.grads[t][[i, j]];
        let e = rel_err(g, fd, 1e-6);
        ensure!(e <= 1e-3, "{head:?} tensor {t} [{i},{j}]: analytic {g:e} vs fd {fd:e}");
        worst = worst.max(e);
    }
    Ok(worst)
}

fn clone_problem(p: &TinyProblem) -> TinyProblem {
    TinyProblem {
        net: p.net.clone(),
        x: p.x.clone(),
        actions: p.actions.clone(),
        old_log_probs: p.old_log_probs.clone(),
        advantages: p.advantages.clone(),
        returns: p.returns.clone(),
    }
}

pub fn check_gradients() -> Check {
    let beta = check_beta_gradient()?;
    let full = PpoHyper {
        clip_ratio: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
    };
    let mut worst = 0.0f64;
    for (k, head) in [HeadKind::Beta, HeadKind::Gaussian].into_iter().enumerate() {
        worst = worst.max(network_gradient_error(head, full, 20 + k as u64, 100)?);
    }
    Ok(format!(
        "Beta log-prob rel. err ≤ {beta:.1e} (100 pts); network loss rel. err ≤ {worst:.1e} (100 pts per head)"
    ))
}

// -------------------------------------------------------------------- GAE

/// Advantage from its λ-return definition: a (1 − λ)-weighted mix of n-step
/// advantages, with the tail weight on the longest one available.
pub fn gae_brute_force(
    rewards: &[f64],
    values: &[f64],
    terminal: bool,
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let boot = if terminal { 0.0 } else { last_value };
    let n_step = |t: usize, k: usize| {
        let mut ret = 0.0;
        for i in 0..k {
            ret += gamma.powi(i as i32) * rewards[t + i];
        }
        let end = t + k;
        let v_end = if end < n { values[end] } else { boot };
        ret + gamma.powi(k as i32) * v_end - values[t]
    };
    (0..n)
        .map(|t| {
            let m = n - t;
            let mut a = 0.0;
            for k in 1..m {
                a += (1.0 - lambda) * lambda.powi(k as i32 - 1) * n_step(t, k);
            }
            a + lambda.powi(m as i32 - 1) * n_step(t, m)
        })
        .collect()
}

pub fn check_gae() -> Check {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..=5);
        let rewards: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let terminal = r.random_bool(0.5);
        let last = r.random_range(-3.0..3.0);
        let gamma = r.random_range(0.8..1.0);
        let lambda = r.random_range(0.0..=1.0);
        let mut dones = vec![false; n];
        dones[n - 1] = terminal;
        let got = gae(&rewards, &values, &dones, last, gamma, lambda);
        let want = gae_brute_force(&rewards, &values, terminal, last, gamma, lambda);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure!(worst <= 1e-10, "max |GAE − brute force| = {worst:e}");
    Ok(format!("1000 episodes (len ≤ 5), max diff {worst:.1e}"))
}

// ----------------------------------------------------------------- rewards

pub fn check_rewards() -> Check {
    let cfg = crane_grasp::env::RewardConfig::default();
    let mut r = rng(5);
    let mut worst_total = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100_000 {
        let t = reward_terms(
            r.random_range(0.0..20.0),
            r.random_range(-0.5..1.5),
            r.random_range(-1.0..10.0),
            r.random_range(0.0..10.0),
            &cfg,
        );
        for v in [t.distance, t.grapple, t.lift, t.balance] {
            ensure!((0.0..=1.0).contains(&v), "term {v} outside [0, 1] in {t:?}");
        }
        ensure!((0.0..=4.0).contains(&t.total), "R = {} outside [0, 4]", t.total);
        worst_total = (worst_total.0.min(t.total), worst_total.1.max(t.total));
    }

    // Full environment reward on random states.
    let settings = EnvSettings::default();
    let sim = Simulator::new(settings.kinematics.clone(), settings.sim.clone()).unwrap();
    for _ in 0..2_000 {
        let st = random_state(&sim, &mut r);
        let cmd = ActionCommand(std::array::from_fn(|_| r.random_range(-2.0..2.0)));
        let b = reward(&sim, &st, &cmd, &settings.reward);
        for v in [b.distance, b.grapple, b.lift, b.balance] {
            ensure!((0.0..=1.0).contains(&v), "env term {v} outside [0, 1]");
        }
    }

    // Flip symmetry: the log axis and its reverse give bit-equal Δψ.
    for _ in 0..10_000 {
        let x = random_unit(&mut r);
        let psi = r.random_range(-PI..PI);
        let axis = log_axis_vector(psi);
        let a = angle_distance(&x, &axis);
        ensure!(a == angle_distance(&x, &(-axis)), "flip changes Δψ at ψ = {psi}");
        ensure!(a == angle_distance(&(-x), &axis), "negating e_Cx changes Δψ");
        let shifted = angle_distance(&x, &log_axis_vector(psi + PI));
        ensure!((a - shifted).abs() <= 1e-15, "Δψ(ψ) − Δψ(ψ + π) = {}", a - shifted);
    }

    // Strictly decreasing r_distance.
    let mut prev = f64::INFINITY;
    for k in 0..10_000 {
        let d = k as f64 * 1e-3;
        let t = reward_terms(d, 0.5, 0.0, 0.0, &cfg);
        ensure!(t.distance < prev, "r_distance not decreasing at d = {d}");
        prev = t.distance;
    }
    Ok(format!(
        "1e5 samples, terms in [0,1], R ∈ [{:.3}, {:.3}]; flip symmetry exact; r_distance strictly decreasing",
        worst_total.0, worst_total.1
    ))
}

pub fn random_unit(r: &mut ChaCha8Rng) -> nalgebra::Vector3<f64> {
    loop {
        let v = nalgebra::Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if v.norm() > 1e-3 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

pub fn random_state(sim: &Simulator, r: &mut ChaCha8Rng) -> SimState {
    let q = random_q(r);
    let d = r.random_range(0.3..0.8);
    let log = LogSpec::on_ground(d, 2.75, r.random_range(-8.0..8.0), r.random_range(-8.0..8.0), r.random_range(0.0..PI), 800.0);
    let mut st = sim.resting_state(q, log);
    st.joints[4] = q[4];
    st.joints[5] = q[5];
    st.log.position.z = r.random_range(0.0..4.0);
    st
}

// -------------------------------------------------------------- termination

/// A mid-episode state that triggers nothing, for proximity already reached.
pub fn quiet_state(sim: &Simulator) -> SimState {
    let mut q = JointVector([-1.57, 0.0, 2.0, 0.1, 0.0, 0.0, 0.0, 0.25]);
    let eq = sim.hanging_equilibrium(&q);
    q[4] = eq[0];
    q[5] = eq[1];
    let g = sim.grapple_for(&q);
    let mut st = sim.resting_state(q, LogSpec::on_ground(0.5, 2.75, g.position.x, g.position.y + 1.0, 0.0, 800.0));
    st.sim_time = 3.0;
    st
}

/// Each rule alone, on the same base state: `(name, expected, reason)`.
pub fn termination_cases() -> Vec<(&'static str, TerminationReason, Option<TerminationReason>)> {
    let settings = EnvSettings::default();
    let sim = Simulator::new(settings.kinematics.clone(), settings.sim.clone()).unwrap();
    let cfg = TerminationConfig::default();
    let base = quiet_state(&sim);
    let max = sim.kinematics.limits.max_speed;
    let mut out = Vec::new();

    let mut s = base.clone();
    s.limit_hits[2] = true;
    out.push(("joint limit", TerminationReason::JointLimit, check_termination(&sim, &s, true, &cfg)));

    let mut s = base.clone();
    s.actuated_velocities[1] = max[1] * 1.01;
    out.push(("velocity limit", TerminationReason::VelocityLimit, check_termination(&sim, &s, true, &cfg)));

    let mut s = base.clone();
    s.log.position.x += 9.0;
    out.push(("log out of range", TerminationReason::LogOutOfRange, check_termination(&sim, &s, true, &cfg)));

    let mut s = base.clone();
    s.sim_time = 6.0;
    out.push(("proximity timeout", TerminationReason::ProximityTimeout, check_termination(&sim, &s, false, &cfg)));

    let mut s = base;
    s.sim_time = 9.0;
    out.push(("time limit", TerminationReason::TimeLimit, check_termination(&sim, &s, true, &cfg)));
    out
}

pub fn check_terminations() -> Check {
    let settings = EnvSettings::default();
    let sim = Simulator::new(settings.kinematics.clone(), settings.sim.clone()).unwrap();
    let cfg = TerminationConfig::default();
    let base = quiet_state(&sim);
    ensure!(check_termination(&sim, &base, true, &cfg).is_none(), "base state terminates");
    ensure!(
        check_termination(&sim, &base, false, &cfg).is_none(),
        "base state terminates before the deadline"
    );
    for (name, want, got) in termination_cases() {
        ensure!(got == Some(want), "{name}: expected {want:?}, got {got:?}");
    }

    // The proximity rule fires on the exact step through the environment.
    let mut env = GraspEnv::new(settings, 9, 0).map_err(|e| e.to_string())?;
    env.reset().map_err(|e| e.to_string())?;
    let mut steps = 0;
    loop {
        steps += 1;
        let out = env.step(&ActionCommand::default()).map_err(|e| e.to_string())?;
        if let Some(reason) = out.termination {
            ensure!(reason == TerminationReason::ProximityTimeout, "idle episode ended by {reason:?}");
            break;
        }
    }
    ensure!(steps == 1200, "idle episode ended after {steps} steps, not 1200");
    Ok("5 rules each trigger alone on a constructed state; idle episode ends at step 1200".into())
}

// -------------------------------------------------------------------- noise

pub fn check_noise() -> Check {
    let cfg = NoiseConfig::default();
    for (d, s) in [(0.0, 0.0), (4.0, 0.25), (8.0, 1.0)] {
        let got = noise_scale(d, &cfg);
        ensure!(got == s, "s({d}) = {got}, expected {s}");
    }
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let dp = random_unit(&mut r) * r.random_range(0.0..12.0);
        let dpsi = r.random_range(0.0..1.0);
        let (noisy, _) = inject_pose_noise(&dp, dpsi, &cfg, &mut r);
        let dev = (noisy - dp).norm();
        let bound = 0.1 * dp.norm() * noise_scale(dp.norm(), &cfg);
        ensure!(dev <= bound * (1.0 + 1e-12), "|Δp′ − Δp| = {dev} > {bound}");
        if bound > 0.0 {
            worst = worst.max(dev / bound);
        }
    }
    Ok(format!("s(0)=0, s(4)=0.25, s(8)=1; 1e5 draws, max |Δp′−Δp| / bound = {worst:.4}"))
}

// ------------------------------------------------------------- determinism

pub fn tiny_run_config(seed: u64) -> RunConfig {
    let mut c = RunConfig {
        seed,
        ..RunConfig::default()
    };
    c.env.action_repeat = 4;
    c.train.n_envs = 2;
    c.train.rollout_len = 32;
    c.train.total_steps = 3 * 2 * 32;
    c.train.epochs = 2;
    c.train.minibatch_size = 32;
    c.train.hidden = vec![32, 32];
    c
}

pub fn train_hash(seed: u64) -> Result<(String, Trainer), String> {
    let c = tiny_run_config(seed);
    let mut t = Trainer::new(c.env_settings(), c.resolved_train(), c.seed).map_err(|e| e.to_string())?;
    t.run(None, &mut |_| {}).map_err(|e| e.to_string())?;
    ensure!(t.updates_done() == 3, "{} updates instead of 3", t.updates_done());
    Ok((metrics_hash(t.metrics()), t))
}

pub fn eval_csv(trainer: &Trainer, trials: usize, seed: u64) -> Result<String, String> {
    let p = &trainer.policy;
    let factory = || Box::new(PolicyController { policy: p }) as Box<dyn Controller>;
    let stats = monte_carlo(&factory, &trainer.settings, &[0.5], trials, &SuccessCriteria::default(), seed, None)
        .map_err(|e| e.to_string())?;
    Ok(export_csv(&stats))
}

pub fn check_resume(dir: &Path) -> Check {
    let mut c = tiny_run_config(17);
    c.train.total_steps = 4 * 2 * 32;
    let mut full = Trainer::new(c.env_settings(), c.resolved_train(), c.seed).map_err(|e| e.to_string())?;
    full.run(None, &mut |_| {}).map_err(|e| e.to_string())?;

    let mut first = Trainer::new(c.env_settings(), c.resolved_train(), c.seed).map_err(|e| e.to_string())?;
    first.step_update().map_err(|e| e.to_string())?;
    first.step_update().map_err(|e| e.to_string())?;
    let path = dir.join("half.ckpt");
    first.save(&path).map_err(|e| e.to_string())?;
    drop(first);
    let mut resumed = Trainer::resume(&path).map_err(|e| e.to_string())?;
    resumed.run(None, &mut |_| {}).map_err(|e| e.to_string())?;

    ensure!(metrics_hash(full.metrics()) == metrics_hash(resumed.metrics()), "metrics differ after resume");
    ensure!(full.policy.net.params == resumed.policy.net.params, "weights differ after resume");
    ensure!(full.adam == resumed.adam, "optimizer state differs after resume");
    Ok("4 updates vs 2 + checkpoint + 2: metrics, weights and optimizer identical".into())
}

pub fn check_determinism(dir: &Path) -> Check {
    let (h1, t1) = train_hash(7)?;
    let (h2, _) = train_hash(7)?;
    ensure!(h1 == h2, "metrics hash differs: {h1} vs {h2}");
    let (h3, _) = train_hash(8)?;
    ensure!(h1 != h3, "different seeds gave the same metrics");
    let e1 = eval_csv(&t1, 10, 5)?;
    let e2 = eval_csv(&t1, 10, 5)?;
    ensure!(e1 == e2, "eval CSV differs between runs");
    let resume = check_resume(dir)?;
    Ok(format!("train hash {}…, eval CSV {} bytes identical; {resume}", &h1[..12], e1.len()))
}

// ------------------------------------------------------------------- oracle

pub fn oracle_stats(n: usize, seed: u64) -> Result<BatchStats, String> {
    let settings = EnvSettings::default();
    let factory = || Box::new(OracleController::default()) as Box<dyn Controller>;
    let mut stats = monte_carlo(&factory, &settings, &[0.5], n, &SuccessCriteria::default(), seed, None)
        .map_err(|e| e.to_string())?;
    Ok(stats.remove(0))
}

pub fn check_oracle_controller() -> Check {
    let s = oracle_stats(50, 2024)?;
    let rate = s.success_rate.unwrap_or(0.0);
    ensure!(rate >= 90.0, "oracle success {rate:.1}% < 90% ({:?})", s.failures);
    Ok(format!("{}/{} scenes at d = 0.5 ({rate:.1}%)", s.successes, s.n_trials))
}

// ---------------------------------------------------------------- desk runs

/// The desk-scale protocol: 8 envs, rollout 512, 2·10⁶ steps, repeat 4.
pub fn desk_config(algo: Algo) -> RunConfig {
    let mut c = RunConfig {
        seed: 1,
        algo: Some(algo),
        ..RunConfig::default()
    };
    c.env.action_repeat = 4;
    c.train.n_envs = 8;
    c.train.rollout_len = 512;
    c.train.total_steps = 2_000_000;
    c.train.checkpoint_interval = 0;
    c
}

pub const DESK_EVAL_SEED: u64 = 4242;
