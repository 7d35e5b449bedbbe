//! The simulation owner: plant state, teleop state and the active
//! trajectory, advanced one tick at a time. Used by the server loop and by
//! headless event replay so both follow the same code path.

use std::sync::Arc;

use crate::arm_model::RobotModel;
use crate::error::{Error, Result};
use crate::sim_exec::{
    run_teleop_tick, ControllerGains, Player, SimMode, SimState, Trajectory, DEFAULT_DT,
};
use crate::teleop::{
    goto_preset, process_input, BindingMap, FaultKind, InputEvent, TeleopConfig, TeleopMode,
    TeleopState,
};
use crate::timeline::{sample_intervals, Sequence};
use crate::trajlog::{LogRow, TrajectoryLog};

/// Something that finished during a tick.
#[derive(Clone, Debug, PartialEq)]
pub enum RigEvent {
    PlayDone { log: TrajectoryLog },
    PresetReached { preset: String },
}

#[derive(Clone, Debug)]
pub struct Rig {
    model: RobotModel,
    gains: ControllerGains,
    bindings: BindingMap,
    cfg: TeleopConfig,
    dt: f64,
    record_rate: f64,
    steps: u64,
    sim: SimState,
    teleop: TeleopState,
    player: Option<Player>,
    pilot: bool,
    journal: Vec<InputEvent>,
}

impl Rig {
    pub fn new(
        model: RobotModel,
        gains: ControllerGains,
        bindings: BindingMap,
        cfg: TeleopConfig,
    ) -> Result<Self> {
        model.validate()?;
        gains.validate(&model)?;
        let sim = SimState::initial(&model);
        let teleop = TeleopState::new(model.dof(), &cfg);
        Ok(Rig {
            model,
            gains,
            bindings,
            cfg,
            dt: DEFAULT_DT,
            record_rate: crate::sim_exec::DEFAULT_RECORD_RATE,
            steps: 0,
            sim,
            teleop,
            player: None,
            pilot: false,
            journal: Vec::new(),
        })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn bindings(&self) -> &BindingMap {
        &self.bindings
    }

    pub fn teleop_config(&self) -> &TeleopConfig {
        &self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Simulation clock (s), `steps · dt`.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn sim(&self) -> &SimState {
        &self.sim
    }

    pub fn teleop(&self) -> &TeleopState {
        &self.teleop
    }

    pub fn is_busy(&self) -> bool {
        self.player.is_some()
    }

    /// Inputs applied so far, stamped with the time they took effect.
    pub fn journal(&self) -> &[InputEvent] {
        &self.journal
    }

    /// Marks whether a pilot currently holds teleop authority.
    pub fn set_pilot(&mut self, present: bool) {
        if !present {
            self.teleop = self.teleop.released();
        }
        self.pilot = present;
        if !self.sim.mode.is_busy() {
            self.sim.mode = self.resting_mode();
        }
    }

    fn resting_mode(&self) -> SimMode {
        if self.pilot {
            SimMode::Teleop
        } else {
            SimMode::Idle
        }
    }

    /// Applies an input. The event takes effect at its own timestamp, which
    /// must not lie in the future of the simulation clock.
    pub fn input(&mut self, event: &InputEvent) -> Result<()> {
        self.teleop = process_input(&self.teleop, event, &self.bindings, &self.cfg);
        self.journal.push(event.clone());
        if let Some(name) = self.teleop.pending_preset.take() {
            self.goto_preset(&name)?;
        }
        Ok(())
    }

    /// Applies an input stamped with the current simulation time.
    pub fn input_now(&mut self, event: &InputEvent) -> Result<()> {
        let stamped = event.clone().with_time(self.time());
        self.input(&stamped)
    }

    pub fn set_teleop_mode(&mut self, mode: TeleopMode) {
        self.teleop = self.teleop.set_mode(mode);
    }

    pub fn clear_fault(&mut self) {
        self.teleop = self.teleop.clear_fault();
        self.sim.fault = None;
    }

    pub fn goto_preset(&mut self, name: &str) -> Result<()> {
        if self.player.is_some() {
            return Err(Error::Busy("a trajectory is already playing".into()));
        }
        if let Some(f) = self.teleop.fault {
            return Err(Error::InvalidArgument(format!(
                "fault `{f}` is latched; clear it before moving"
            )));
        }
        let req = goto_preset(&self.model, &self.sim.q, name)?;
        self.start(Trajectory::MinJerk(req), self.record_rate)
    }

    pub fn play(&mut self, seq: Arc<Sequence>, record_rate: f64) -> Result<()> {
        if self.player.is_some() {
            return Err(Error::Busy("a trajectory is already playing".into()));
        }
        seq.validate(&self.model)?;
        self.start(Trajectory::Sequence(seq), record_rate)
    }

    fn start(&mut self, trajectory: Trajectory, rate: f64) -> Result<()> {
        let player = Player::new(trajectory, &self.model, self.dt, rate)?;
        self.teleop.commanded_vel = crate::arm_model::JointVector::zeros(self.model.dof());
        self.player = Some(player);
        Ok(())
    }

    /// Aborts the active trajectory, holding the current pose. Returns the
    /// partial log of an aborted sequence.
    pub fn stop(&mut self) -> Option<TrajectoryLog> {
        let player = self.player.take()?;
        self.sim.q_ref = self.sim.q.clone();
        self.sim.mode = self.resting_mode();
        match player.trajectory() {
            Trajectory::Sequence(_) => Some(player.into_log()),
            Trajectory::MinJerk(_) => None,
        }
    }

    /// Advances one physics step.
    pub fn tick(&mut self) -> Result<Option<RigEvent>> {
        let mut done = None;
        if let Some(player) = self.player.as_mut() {
            let mut sim = self.sim.clone();
            let finished = player.advance(&mut sim, &self.model, &self.gains)?;
            if finished {
                let player = self.player.take().expect("active player");
                done = Some(match player.trajectory() {
                    Trajectory::Sequence(_) => RigEvent::PlayDone {
                        log: player.into_log(),
                    },
                    Trajectory::MinJerk(m) => RigEvent::PresetReached {
                        preset: m.preset.clone(),
                    },
                });
                // the finishing call records the last row without stepping
                let (next, tele) = run_teleop_tick(
                    &sim,
                    &self.model,
                    &self.gains,
                    &self.teleop,
                    &self.cfg,
                    self.dt,
                )?;
                sim = next;
                sim.mode = self.resting_mode();
                self.teleop = tele;
            }
            self.sim = sim;
        } else {
            let (sim, tele) = run_teleop_tick(
                &self.sim,
                &self.model,
                &self.gains,
                &self.teleop,
                &self.cfg,
                self.dt,
            )?;
            self.sim = sim;
            self.teleop = tele;
        }
        self.steps += 1;
        self.sim.t = self.time();
        self.sim.fault = self.teleop.fault;
        Ok(done)
    }

    /// Current row for a teleop recording.
    pub fn log_row(&self, t: f64) -> LogRow {
        LogRow {
            t,
            q_ref: self.sim.q_ref.clone(),
            q: self.sim.q.clone(),
            qd: self.sim.qd.clone(),
            gripper: self.sim.gripper,
        }
    }

    pub fn fault(&self) -> Option<FaultKind> {
        self.teleop.fault
    }
}

/// Settling time appended after the last event of a replay (s).
pub const REPLAY_TAIL: f64 = 1.0;

/// Re-simulates a teleop session from a fresh rig. Events take effect at the
/// first tick whose time is at or after their timestamp. The run lasts until
/// the last event plus `tail` seconds; rows are recorded at `rate`.
pub fn replay(
    model: &RobotModel,
    gains: &ControllerGains,
    bindings: &BindingMap,
    cfg: &TeleopConfig,
    events: &[InputEvent],
    tail: f64,
    rate: f64,
) -> Result<(TrajectoryLog, SimState)> {
    if !(tail.is_finite() && tail >= 0.0) {
        return Err(Error::InvalidArgument(format!("tail {tail} must be >= 0")));
    }
    let mut rig = Rig::new(model.clone(), gains.clone(), bindings.clone(), cfg.clone())?;
    if !(rate.is_finite() && rate > 0.0 && rate <= 1.0 / rig.dt()) {
        return Err(Error::InvalidArgument(format!(
            "record rate {rate} Hz out of range"
        )));
    }
    rig.set_pilot(true);
    let last = events.iter().map(InputEvent::t).fold(0.0, f64::max);
    let duration = last + tail;
    let rows = sample_intervals(duration, rate);
    let steps_per_row = 1.0 / (rate * rig.dt());
    let mut log = TrajectoryLog::new(rate, "replay", model.name.clone());
    let mut next_event = 0;
    let mut step: u64 = 0;
    for k in 0..=rows {
        let row_step = (k as f64 * steps_per_row).round() as u64;
        while step < row_step {
            apply_due(&mut rig, events, &mut next_event)?;
            rig.tick()?;
            step += 1;
        }
        apply_due(&mut rig, events, &mut next_event)?;
        log.rows.push(rig.log_row(k as f64 / rate));
    }
    Ok((log, rig.sim().clone()))
}

fn apply_due(rig: &mut Rig, events: &[InputEvent], next: &mut usize) -> Result<()> {
    let now = rig.time();
    while *next < events.len() && events[*next].t() <= now + 1e-12 {
        match rig.input(&events[*next]) {
            Ok(()) => {}
            // a preset request that cannot start is dropped, as it would be live
            Err(Error::Busy(_)) | Err(Error::UnknownPreset(_)) | Err(Error::InvalidArgument(_)) => {
                log::debug!("replay: preset request at t={} dropped", events[*next].t())
            }
            Err(e) => return Err(e),
        }
        *next += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> Rig {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::for_model(&m);
        Rig::new(m, g, BindingMap::default_gamepad(), TeleopConfig::default()).unwrap()
    }

    #[test]
    fn idle_rig_holds_pose() {
        let mut r = rig();
        let q0 = r.sim().q.clone();
        for _ in 0..1000 {
            r.tick().unwrap();
        }
        assert_eq!(r.sim().q, q0);
        assert!((r.time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preset_button_moves_to_preset() {
        let mut r = rig();
        r.set_pilot(true);
        r.input(&InputEvent::press(0.0, "dpad_down")).unwrap();
        assert!(r.is_busy());
        let mut reached = None;
        for _ in 0..10_000 {
            if let Some(ev) = r.tick().unwrap() {
                reached = Some(ev);
                break;
            }
        }
        assert_eq!(
            reached,
            Some(RigEvent::PresetReached {
                preset: "zero".into()
            })
        );
        for _ in 0..1000 {
            r.tick().unwrap();
        }
        for v in r.sim().q.iter() {
            assert!(v.abs() < 1e-3);
        }
    }

    #[test]
    fn empty_replay_is_stationary() {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::for_model(&m);
        let (log, end) = replay(
            &m,
            &g,
            &BindingMap::default_gamepad(),
            &TeleopConfig::default(),
            &[],
            REPLAY_TAIL,
            100.0,
        )
        .unwrap();
        assert_eq!(log.rows.len(), 101);
        let q0 = m.initial_configuration();
        for row in &log.rows {
            assert_eq!(row.q, q0);
        }
        assert_eq!(end.q, q0);
    }

    #[test]
    fn joint_jog_replay_moves_selected_joint() {
        let m = RobotModel::planar_two_link();
        let g = ControllerGains::for_model(&m);
        let events = vec![
            InputEvent::axis(0.0, "stick_y", 1.0),
            InputEvent::axis(1.0, "stick_y", 0.0),
        ];
        let (_, end) = replay(
            &m,
            &g,
            &BindingMap::default_gamepad(),
            &TeleopConfig::default(),
            &events,
            1.0,
            100.0,
        )
        .unwrap();
        let q0 = m.initial_configuration();
        // 1 s at half of 2 rad/s
        assert!((end.q[0] - q0[0] - 1.0).abs() < 0.02, "{:?}", end.q);
        assert!((end.q[1] - q0[1]).abs() < 1e-9);
    }
}
