//! Simulated arm under joint-space PD tracking.
//!
//! Each joint is an independent rotor with lumped inertia and viscous
//! damping (no inertial coupling). Integration is semi-implicit Euler with
//! velocity and position clamping.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arm_model::{JointVector, RobotModel};
use crate::error::{from_versioned_json, Error, Result};
use crate::teleop::{
    apply_inertia, resolve_velocity, FaultKind, MotionRequest, TeleopConfig, TeleopState,
};
use crate::timeline::{sample_intervals, Sequence, Target};
use crate::trajlog::{LogRow, TrajectoryLog};

/// Default physics step (s).
pub const DEFAULT_DT: f64 = 0.001;
/// Default recording rate (Hz).
pub const DEFAULT_RECORD_RATE: f64 = 100.0;
/// Gripper reference rate limit (1/s).
pub const GRIPPER_RATE: f64 = 2.0;

pub const GAINS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    /// N·m/rad per joint
    pub kp: Vec<f64>,
    /// N·m·s/rad per joint
    pub kd: Vec<f64>,
    /// N·m per joint
    pub torque_limit: Vec<f64>,
}

impl ControllerGains {
    /// `kp = 100·I`, `kd = 20·I` (critically damped at 10 rad/s) and a
    /// torque limit of `1000·I`.
    pub fn for_model(model: &RobotModel) -> Self {
        let per = |k: f64| model.joints.iter().map(|j| k * j.inertia).collect();
        ControllerGains {
            kp: per(100.0),
            kd: per(20.0),
            torque_limit: per(1000.0),
        }
    }

    pub fn uniform(n: usize, kp: f64, kd: f64, torque_limit: f64) -> Self {
        ControllerGains {
            kp: vec![kp; n],
            kd: vec![kd; n],
            torque_limit: vec![torque_limit; n],
        }
    }

    /// Parses `{"version": 1, "kp": [...], "kd": [...], "torque_limit": [...]}`;
    /// `version` is optional.
    pub fn from_json(s: &str) -> Result<Self> {
        from_versioned_json(s, "gains", GAINS_SCHEMA_VERSION)
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        let n = model.dof();
        for (name, v) in [
            ("kp", &self.kp),
            ("kd", &self.kd),
            ("torque_limit", &self.torque_limit),
        ] {
            if v.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "gains.{name} has {} entries, model has {n} joints",
                    v.len()
                )));
            }
        }
        let ok = self.kp.iter().all(|k| k.is_finite() && *k >= 0.0)
            && self.kd.iter().all(|k| k.is_finite() && *k >= 0.0)
            && self.torque_limit.iter().all(|k| k.is_finite() && *k > 0.0);
        if !ok {
            return Err(Error::InvalidArgument(
                "gains must be finite with kp >= 0, kd >= 0, torque_limit > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    Idle,
    Teleop,
    Playing {
        sequence: String,
        t_play: f64,
    },
    /// Point-to-point move to a preset.
    Moving {
        preset: String,
        t_move: f64,
    },
}

impl SimMode {
    pub fn is_busy(&self) -> bool {
        matches!(self, SimMode::Playing { .. } | SimMode::Moving { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub q: JointVector,
    pub qd: JointVector,
    /// Reference the controller currently tracks.
    pub q_ref: JointVector,
    pub gripper: f64,
    pub gripper_ref: f64,
    pub mode: SimMode,
    pub fault: Option<FaultKind>,
}

impl SimState {
    /// At rest at `q`, holding it.
    pub fn at_rest(model: &RobotModel, q: &[f64]) -> Self {
        let q = model.clamp_to_limits(q);
        let g = model.gripper_range[0];
        SimState {
            t: 0.0,
            qd: JointVector::zeros(q.len()),
            q_ref: q.clone(),
            q,
            gripper: g,
            gripper_ref: g,
            mode: SimMode::Idle,
            fault: None,
        }
    }

    /// At rest at the model's initial configuration.
    pub fn initial(model: &RobotModel) -> Self {
        Self::at_rest(model, &model.initial_configuration())
    }

    /// Kinetic-energy proxy `Σ inertia·qd²`.
    pub fn kinetic_proxy(&self, model: &RobotModel) -> f64 {
        self.qd
            .iter()
            .zip(&model.joints)
            .map(|(v, j)| j.inertia * v * v)
            .sum()
    }
}

/// Joint reference for one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub q: JointVector,
    pub qd: JointVector,
    /// `None` keeps the current gripper reference.
    pub gripper: Option<f64>,
}

impl Reference {
    pub fn hold(q: &[f64]) -> Self {
        Reference {
            q: JointVector(q.to_vec()),
            qd: JointVector::zeros(q.len()),
            gripper: None,
        }
    }
}

/// One semi-implicit Euler step of the PD-controlled joints.
pub fn step(
    state: &SimState,
    model: &RobotModel,
    gains: &ControllerGains,
    reference: &Reference,
    dt: f64,
) -> Result<SimState> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::InvalidArgument(format!(
            "dt {dt} outside (0, 0.01] s"
        )));
    }
    model.check_dims(&state.q)?;
    model.check_dims(&reference.q)?;
    model.check_dims(&reference.qd)?;
    let mut next = state.clone();
    for (i, joint) in model.joints.iter().enumerate() {
        let (q, qd) = (state.q[i], state.qd[i]);
        let limit = gains.torque_limit[i];
        let tau = (gains.kp[i] * (reference.q[i] - q) + gains.kd[i] * (reference.qd[i] - qd))
            .clamp(-limit, limit);
        let acc = (tau - joint.damping * qd - joint.gravity_torque) / joint.inertia;
        let mut new_qd = (qd + acc * dt).clamp(-joint.vel_limit, joint.vel_limit);
        let mut new_q = q + new_qd * dt;
        if new_q > joint.max() {
            new_q = joint.max();
            new_qd = 0.0;
        } else if new_q < joint.min() {
            new_q = joint.min();
            new_qd = 0.0;
        }
        next.q[i] = new_q;
        next.qd[i] = new_qd;
    }
    next.q_ref = reference.q.clone();
    if let Some(g) = reference.gripper {
        next.gripper_ref = g;
    }
    let [g_lo, g_hi] = model.gripper_range;
    let target = next.gripper_ref.clamp(g_lo, g_hi);
    let max_move = GRIPPER_RATE * dt;
    next.gripper =
        (state.gripper + (target - state.gripper).clamp(-max_move, max_move)).clamp(g_lo, g_hi);
    next.t = state.t + dt;
    Ok(next)
}

/// Source of a time-varying reference.
#[derive(Clone, Debug, PartialEq)]
pub enum Trajectory {
    Sequence(Arc<Sequence>),
    MinJerk(MotionRequest),
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        match self {
            Trajectory::Sequence(s) => s.duration(),
            Trajectory::MinJerk(m) => m.duration,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Trajectory::Sequence(s) => &s.name,
            Trajectory::MinJerk(m) => &m.preset,
        }
    }

    /// Reference at `t`; `h` is the finite-difference step for velocities.
    pub fn reference(&self, dof: usize, t: f64, h: f64) -> Reference {
        match self {
            Trajectory::Sequence(seq) => {
                let frame = seq.evaluate(dof, t);
                let gripper = seq.channel(Target::Gripper).map(|_| frame.gripper);
                Reference {
                    q: frame.joints,
                    qd: seq.velocity(dof, t, h),
                    gripper,
                }
            }
            Trajectory::MinJerk(m) => {
                let tau = (t / m.duration).clamp(0.0, 1.0);
                let s = tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
                let ds = 30.0 * tau * tau * (1.0 - tau) * (1.0 - tau) / m.duration;
                let q = m
                    .start
                    .iter()
                    .zip(m.target.iter())
                    .map(|(a, b)| a + (b - a) * s)
                    .collect::<Vec<_>>();
                let qd = m
                    .start
                    .iter()
                    .zip(m.target.iter())
                    .map(|(a, b)| (b - a) * ds)
                    .collect::<Vec<_>>();
                Reference {
                    q: q.into(),
                    qd: qd.into(),
                    gripper: None,
                }
            }
        }
    }
}

/// Incremental executor of a [`Trajectory`]; one call to [`Player::advance`]
/// performs one physics step and records rows on the log grid.
#[derive(Clone, Debug)]
pub struct Player {
    trajectory: Trajectory,
    dt: f64,
    rate: f64,
    steps: u64,
    next_row: usize,
    last_row: usize,
    log: TrajectoryLog,
}

impl Player {
    pub fn new(trajectory: Trajectory, model: &RobotModel, dt: f64, rate: f64) -> Result<Self> {
        if !(dt > 0.0 && dt <= 0.01) {
            return Err(Error::InvalidArgument(format!(
                "dt {dt} outside (0, 0.01] s"
            )));
        }
        if !(rate.is_finite() && rate > 0.0 && rate <= 1.0 / dt) {
            return Err(Error::InvalidArgument(format!(
                "record rate {rate} Hz must be in (0, {}]",
                1.0 / dt
            )));
        }
        let log = TrajectoryLog::new(rate, trajectory.name(), model.name.clone());
        Ok(Player {
            last_row: sample_intervals(trajectory.duration(), rate),
            trajectory,
            dt,
            rate,
            steps: 0,
            next_row: 0,
            log,
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    /// Playback clock (s).
    pub fn elapsed(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    fn row_step(&self, row: usize) -> u64 {
        (row as f64 / (self.rate * self.dt)).round() as u64
    }

    fn mode(&self, t: f64) -> SimMode {
        match &self.trajectory {
            Trajectory::Sequence(s) => SimMode::Playing {
                sequence: s.name.clone(),
                t_play: t,
            },
            Trajectory::MinJerk(m) => SimMode::Moving {
                preset: m.preset.clone(),
                t_move: t,
            },
        }
    }

    /// Advances one step. Returns `true` once the final row is recorded; the
    /// state is then Idle and holds the last reference.
    pub fn advance(
        &mut self,
        state: &mut SimState,
        model: &RobotModel,
        gains: &ControllerGains,
    ) -> Result<bool> {
        let dof = model.dof();
        if self.steps == self.row_step(self.next_row) {
            let t = self.next_row as f64 / self.rate;
            let reference = self.trajectory.reference(dof, self.elapsed(), self.dt);
            self.log.rows.push(LogRow {
                t,
                q_ref: reference.q,
                q: state.q.clone(),
                qd: state.qd.clone(),
                gripper: state.gripper,
            });
            self.next_row += 1;
            if self.next_row > self.last_row {
                let end = self
                    .trajectory
                    .reference(dof, self.trajectory.duration(), self.dt);
                state.q_ref = end.q;
                if let Some(g) = end.gripper {
                    state.gripper_ref = g;
                }
                state.mode = SimMode::Idle;
                return Ok(true);
            }
        }
        let t = self.elapsed();
        let reference = self.trajectory.reference(dof, t, self.dt);
        *state = step(state, model, gains, &reference, self.dt)?;
        self.steps += 1;
        state.mode = self.mode(self.elapsed());
        Ok(false)
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    pub fn into_log(self) -> TrajectoryLog {
        self.log
    }
}

/// Plays `seq` from `state` to completion at the default 1 ms step.
pub fn play_sequence(
    state: &SimState,
    model: &RobotModel,
    gains: &ControllerGains,
    seq: &Sequence,
    record_rate: f64,
) -> Result<(TrajectoryLog, SimState)> {
    play_sequence_with_dt(state, model, gains, seq, record_rate, DEFAULT_DT)
}

pub fn play_sequence_with_dt(
    state: &SimState,
    model: &RobotModel,
    gains: &ControllerGains,
    seq: &Sequence,
    record_rate: f64,
    dt: f64,
) -> Result<(TrajectoryLog, SimState)> {
    if state.mode.is_busy() {
        return Err(Error::Busy("a trajectory is already playing".into()));
    }
    seq.validate(model)?;
    gains.validate(model)?;
    let mut player = Player::new(
        Trajectory::Sequence(Arc::new(seq.clone())),
        model,
        dt,
        record_rate,
    )?;
    let mut st = state.clone();
    while !player.advance(&mut st, model, gains)? {}
    Ok((player.into_log(), st))
}

/// One teleop control tick: resolve the sticks, smooth, integrate the
/// reference (clamped at the limits) and step the plant.
pub fn run_teleop_tick(
    state: &SimState,
    model: &RobotModel,
    gains: &ControllerGains,
    teleop: &TeleopState,
    cfg: &TeleopConfig,
    dt: f64,
) -> Result<(SimState, TeleopState)> {
    let mut tele = teleop.clone();
    let resolved = resolve_velocity(&tele, model, &state.q, cfg)?;
    if let Some(f) = resolved.fault {
        tele = tele.raise(f);
    }
    if !resolved.velocity.is_zero() && state.t - tele.last_event_t > cfg.command_timeout {
        tele = tele.raise(FaultKind::CommandTimeout);
    }

    let n = model.dof();
    let mut v = if tele.fault.is_some() {
        JointVector::zeros(n)
    } else {
        let mut v = apply_inertia(
            &tele.commanded_vel,
            &resolved.velocity,
            dt,
            tele.inertia_tau,
            tele.inertia_enabled,
        );
        if resolved.velocity.is_zero() && v.iter().all(|x| x.abs() < 1e-9) {
            v = JointVector::zeros(n);
        }
        v
    };

    let mut q_ref = state.q_ref.clone();
    let mut hit_limit = false;
    for (i, joint) in model.joints.iter().enumerate() {
        v[i] = v[i].clamp(-joint.vel_limit, joint.vel_limit);
        let next = q_ref[i] + v[i] * dt;
        if next > joint.max() || next < joint.min() {
            q_ref[i] = joint.clamp(next);
            if v[i] != 0.0 {
                hit_limit = true;
            }
        } else {
            q_ref[i] = next;
        }
    }
    if hit_limit {
        tele = tele.raise(FaultKind::JointLimit);
        v = JointVector::zeros(n);
    }
    tele.commanded_vel = v.clone();

    let [g_lo, g_hi] = model.gripper_range;
    let reference = Reference {
        q: q_ref,
        qd: v,
        gripper: Some(g_lo + tele.gripper_cmd.clamp(0.0, 1.0) * (g_hi - g_lo)),
    };
    let mut next = step(state, model, gains, &reference, dt)?;
    next.fault = tele.fault;
    Ok((next, tele))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_model::JointSpec;
    use crate::timeline::{Channel, Keyframe};

    fn rotor(damping: f64) -> RobotModel {
        let mut j = JointSpec::planar(0.5);
        j.damping = damping;
        j.vel_limit = 50.0;
        j.limits = [-10.0, 10.0];
        RobotModel::new("rotor", vec![j]).unwrap()
    }

    #[test]
    fn equilibrium_is_preserved() {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::for_model(&m);
        let s = SimState::at_rest(&m, &[0.3, -0.4]);
        let n = step(&s, &m, &g, &Reference::hold(&s.q), DEFAULT_DT).unwrap();
        assert_eq!(n.q, s.q);
        assert_eq!(n.qd, s.qd);
    }

    #[test]
    fn zero_gains_no_motion() {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::uniform(2, 0.0, 0.0, 1.0);
        let mut s = SimState::at_rest(&m, &[0.0, 0.0]);
        let r = Reference::hold(&[1.0, 1.0]);
        for _ in 0..100 {
            s = step(&s, &m, &g, &r, DEFAULT_DT).unwrap();
        }
        assert_eq!(s.q.0, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_dt() {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::for_model(&m);
        let s = SimState::initial(&m);
        assert!(step(&s, &m, &g, &Reference::hold(&s.q), 0.0).is_err());
        assert!(step(&s, &m, &g, &Reference::hold(&s.q), 0.02).is_err());
    }

    #[test]
    fn critically_damped_step_reaches_target() {
        let m = rotor(0.0);
        let g = ControllerGains::uniform(1, 100.0, 20.0, 1e6);
        let mut s = SimState::at_rest(&m, &[0.0]);
        let r = Reference::hold(&[1.0]);
        let mut peak = 0.0f64;
        for _ in 0..1000 {
            s = step(&s, &m, &g, &r, DEFAULT_DT).unwrap();
            peak = peak.max(s.q[0]);
        }
        assert!((s.q[0] - 1.0).abs() < 0.02);
        assert!(peak - 1.0 <= 1e-3);
    }

    #[test]
    fn velocity_and_position_clamps() {
        let mut j = JointSpec::planar(1.0);
        j.limits = [-0.5, 0.5];
        j.vel_limit = 0.3;
        let m = RobotModel::new("c", vec![j]).unwrap();
        let g = ControllerGains::uniform(1, 1000.0, 10.0, 1e6);
        let mut s = SimState::at_rest(&m, &[0.0]);
        let r = Reference::hold(&[2.0]);
        for _ in 0..5000 {
            s = step(&s, &m, &g, &r, DEFAULT_DT).unwrap();
            assert!(s.qd[0].abs() <= 0.3);
            assert!(s.q[0] <= 0.5);
        }
        assert_eq!(s.q[0], 0.5);
        assert_eq!(s.qd[0], 0.0);
    }

    #[test]
    fn gripper_is_rate_limited() {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::for_model(&m);
        let s = SimState::initial(&m);
        let mut r = Reference::hold(&s.q);
        r.gripper = Some(1.0);
        let n = step(&s, &m, &g, &r, 0.01).unwrap();
        assert!((n.gripper - 0.02).abs() < 1e-15);
    }

    #[test]
    fn constant_sequence_tracks_exactly() {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::for_model(&m);
        let home = m.initial_configuration();
        let seq = Sequence::new(
            "hold",
            "planar2",
            vec![
                Channel::new(
                    Target::Joint(0),
                    vec![
                        Keyframe::linear(0.0, home[0]),
                        Keyframe::linear(1.0, home[0]),
                    ],
                ),
                Channel::new(
                    Target::Joint(1),
                    vec![
                        Keyframe::linear(0.0, home[1]),
                        Keyframe::linear(1.0, home[1]),
                    ],
                ),
            ],
        )
        .unwrap();
        let (log, end) = play_sequence(&SimState::initial(&m), &m, &g, &seq, 100.0).unwrap();
        assert_eq!(log.rows.len(), 101);
        for row in &log.rows {
            for (a, b) in row.q.iter().zip(row.q_ref.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert_eq!(end.mode, SimMode::Idle);
    }

    #[test]
    fn model_mismatch_and_busy() {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::for_model(&m);
        let seq = Sequence::empty("x", "other");
        assert!(matches!(
            play_sequence(&SimState::initial(&m), &m, &g, &seq, 100.0),
            Err(Error::ModelMismatch { .. })
        ));
        let mut busy = SimState::initial(&m);
        busy.mode = SimMode::Playing {
            sequence: "y".into(),
            t_play: 0.0,
        };
        let seq = Sequence::empty("x", "planar2");
        assert!(matches!(
            play_sequence(&busy, &m, &g, &seq, 100.0),
            Err(Error::Busy(_))
        ));
    }

    #[test]
    fn min_jerk_reference_endpoints() {
        let req = MotionRequest {
            preset: "p".into(),
            start: vec![0.0, 1.0].into(),
            target: vec![1.0, -1.0].into(),
            duration: 2.0,
        };
        let tr = Trajectory::MinJerk(req);
        let r0 = tr.reference(2, 0.0, 1e-3);
        let r1 = tr.reference(2, 2.0, 1e-3);
        let mid = tr.reference(2, 1.0, 1e-3);
        assert_eq!(r0.q.0, vec![0.0, 1.0]);
        assert_eq!(r1.q.0, vec![1.0, -1.0]);
        assert!((mid.q[0] - 0.5).abs() < 1e-15);
        // peak speed 15/8 · Δ / T
        assert!((mid.qd[0] - 15.0 / 8.0 / 2.0).abs() < 1e-12);
        assert_eq!(r0.qd[0], 0.0);
    }
}
