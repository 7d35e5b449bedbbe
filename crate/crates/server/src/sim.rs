//! The simulation thread. It owns the rig, the pilot role, uploaded
//! sequences and recorded logs; connection tasks talk to it only through
//! the command queue, and observe it through replies and snapshots.

use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use motion_studio_core::moa_metrics::analyze;
use motion_studio_core::protocol::{ClientMessage, ServerMessage, StateSnapshot, TeleopIndicators};
use motion_studio_core::session::{Rig, RigEvent};
use motion_studio_core::sim_exec::DEFAULT_RECORD_RATE;
use motion_studio_core::{Error, Sequence, TrajectoryLog};
use tokio::sync::{mpsc, watch};

use crate::ServerConfig;

/// A reply or broadcast, with the client `seq_no` it answers.
pub(crate) type Outgoing = (Option<u64>, ServerMessage);

pub(crate) enum SimCommand {
    Connect {
        client: u64,
        tx: mpsc::UnboundedSender<Outgoing>,
    },
    Disconnect {
        client: u64,
    },
    Message {
        client: u64,
        seq_no: u64,
        message: ClientMessage,
    },
    Shutdown,
}

pub(crate) type SnapshotCell = watch::Sender<Option<Arc<StateSnapshot>>>;

pub(crate) struct Sim {
    cfg: ServerConfig,
    rig: Rig,
    clients: HashMap<u64, mpsc::UnboundedSender<Outgoing>>,
    pilot: Option<u64>,
    sequences: HashMap<u64, Arc<Sequence>>,
    next_seq_id: u64,
    logs: BTreeMap<u64, TrajectoryLog>,
    next_log_id: u64,
    playing: Option<u64>,
    snapshots: SnapshotCell,
    last_published: Option<f64>,
}

/// Outcome of handling one command.
enum Flow {
    Continue,
    Stop,
}

impl Sim {
    pub(crate) fn new(cfg: ServerConfig, snapshots: SnapshotCell) -> Result<Self, Error> {
        let rig = Rig::new(
            cfg.model.clone(),
            cfg.gains.clone(),
            cfg.bindings.clone(),
            cfg.teleop.clone(),
        )?;
        Ok(Sim {
            cfg,
            rig,
            clients: HashMap::new(),
            pilot: None,
            sequences: HashMap::new(),
            next_seq_id: 1,
            logs: BTreeMap::new(),
            next_log_id: 1,
            playing: None,
            snapshots,
            last_published: None,
        })
    }

    pub(crate) fn run(mut self, rx: Receiver<SimCommand>) {
        self.publish();
        if self.cfg.fast {
            self.run_fast(rx)
        } else {
            self.run_realtime(rx)
        }
    }

    fn run_fast(&mut self, rx: Receiver<SimCommand>) {
        while let Ok(cmd) = rx.recv() {
            if let Flow::Stop = self.handle(cmd) {
                return;
            }
            self.run_to_idle();
            self.publish();
        }
    }

    /// Executes the active trajectory unpaced, publishing on the
    /// simulation-time broadcast grid.
    fn run_to_idle(&mut self) {
        let every = ((1.0 / self.cfg.broadcast_rate) / self.rig.dt())
            .round()
            .max(1.0) as u64;
        let mut n = 0u64;
        while self.rig.is_busy() {
            self.tick();
            n += 1;
            if n.is_multiple_of(every) {
                self.publish();
            }
        }
    }

    fn run_realtime(&mut self, rx: Receiver<SimCommand>) {
        let dt = self.rig.dt();
        let period = Duration::from_secs_f64(1.0 / self.cfg.broadcast_rate);
        let mut epoch = Instant::now();
        let mut epoch_steps: u64 = 0;
        let mut steps: u64 = 0;
        let mut next_broadcast = epoch + period;
        loop {
            let now = Instant::now();
            let target = epoch_steps + (now.duration_since(epoch).as_secs_f64() / dt) as u64;
            if target > steps + (1.0 / dt) as u64 {
                // more than a second behind: drop the backlog instead of racing
                log::warn!("simulation fell behind wall clock; resynchronising");
                epoch = now;
                epoch_steps = steps;
            } else {
                while steps < target {
                    self.tick();
                    steps += 1;
                }
            }
            if now >= next_broadcast {
                self.publish();
                next_broadcast += period;
                if next_broadcast < now {
                    next_broadcast = now + period;
                }
            }
            let wait = next_broadcast
                .saturating_duration_since(Instant::now())
                .min(Duration::from_millis(1));
            match rx.recv_timeout(wait) {
                Ok(cmd) => {
                    if let Flow::Stop = self.handle(cmd) {
                        return;
                    }
                    while let Ok(cmd) = rx.try_recv() {
                        if let Flow::Stop = self.handle(cmd) {
                            return;
                        }
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }

    fn tick(&mut self) {
        match self.rig.tick() {
            Ok(Some(RigEvent::PlayDone { log })) => self.finish_play(log, true),
            Ok(Some(RigEvent::PresetReached { preset })) => {
                self.broadcast(ServerMessage::PresetReached { name: preset }, None)
            }
            Ok(None) => {}
            Err(e) => {
                log::error!("simulation step failed: {e}");
                self.rig.stop();
                self.playing = None;
            }
        }
    }

    fn finish_play(&mut self, log: TrajectoryLog, completed: bool) {
        let log_id = self.next_log_id;
        self.next_log_id += 1;
        self.logs.insert(log_id, log);
        while self.logs.len() > self.cfg.max_logs.max(1) {
            self.logs.pop_first();
        }
        let seq_id = self.playing.take().unwrap_or(0);
        self.broadcast(
            ServerMessage::PlayDone {
                seq_id,
                log_id,
                completed,
            },
            None,
        );
    }

    fn snapshot(&self) -> StateSnapshot {
        let sim = self.rig.sim();
        let model = self.rig.model();
        let tele = self.rig.teleop();
        StateSnapshot {
            t: self.rig.time(),
            q: sim.q.clone(),
            qd: sim.qd.clone(),
            q_ref: sim.q_ref.clone(),
            ee_pose: model.forward_kinematics(&sim.q).unwrap_or_default(),
            mode: sim.mode.clone(),
            fault: tele.fault,
            manipulability: model.manipulability(&sim.q).unwrap_or(0.0),
            gripper: sim.gripper,
            teleop: TeleopIndicators {
                mode: tele.mode,
                selected_joint: tele.selected_joint,
                joint_speed_scale: tele.joint_speed_scale,
                cart_speed_scale: tele.cart_speed_scale,
                inertia_enabled: tele.inertia_enabled,
            },
            pilot: self.pilot,
        }
    }

    /// Publishes a snapshot unless simulation time has not moved.
    fn publish(&mut self) {
        let t = self.rig.time();
        if self.last_published.is_some_and(|last| t <= last) {
            return;
        }
        self.last_published = Some(t);
        let snap = Arc::new(self.snapshot());
        self.snapshots.send_replace(Some(snap));
    }

    fn send(&self, client: u64, re: Option<u64>, msg: ServerMessage) {
        if let Some(tx) = self.clients.get(&client) {
            let _ = tx.send((re, msg));
        }
    }

    /// Sends to everyone; `origin` gets its `re` attached.
    fn broadcast(&self, msg: ServerMessage, origin: Option<(u64, u64)>) {
        for (id, tx) in &self.clients {
            let re = origin.filter(|(c, _)| c == id).map(|(_, re)| re);
            let _ = tx.send((re, msg.clone()));
        }
    }

    fn handle(&mut self, cmd: SimCommand) -> Flow {
        match cmd {
            SimCommand::Connect { client, tx } => {
                self.clients.insert(client, tx);
            }
            SimCommand::Disconnect { client } => {
                self.clients.remove(&client);
                if self.pilot == Some(client) {
                    self.pilot = None;
                    self.rig.set_pilot(false);
                    self.broadcast(ServerMessage::PilotReleased { client_id: client }, None);
                }
            }
            SimCommand::Message {
                client,
                seq_no,
                message,
            } => self.handle_message(client, seq_no, message),
            SimCommand::Shutdown => return Flow::Stop,
        }
        Flow::Continue
    }

    fn error(&self, client: u64, re: u64, e: impl std::fmt::Display) {
        self.send(
            client,
            Some(re),
            ServerMessage::Error {
                reason: e.to_string(),
                seq_no: Some(re),
            },
        );
    }

    fn core_error(&self, client: u64, re: u64, e: Error) {
        match e {
            Error::Busy(reason) => self.send(client, Some(re), ServerMessage::Busy { reason }),
            other => self.error(client, re, other),
        }
    }

    fn handle_message(&mut self, client: u64, re: u64, message: ClientMessage) {
        use ClientMessage as C;
        let needs_pilot = matches!(
            message,
            C::Input(_)
                | C::ModeSet { .. }
                | C::PresetGoto { .. }
                | C::FaultClear {}
                | C::SeqPlay { .. }
                | C::SeqStop {}
        );
        if needs_pilot && self.pilot != Some(client) {
            self.send(client, Some(re), ServerMessage::NotPilot {});
            return;
        }
        let ack = |s: &Self| s.send(client, Some(re), ServerMessage::Ack {});
        match message {
            C::Hello { .. } => self.send(
                client,
                Some(re),
                crate::hello(&self.cfg, client, self.rig.dt()),
            ),
            C::PilotAcquire {} => match self.pilot {
                Some(holder) if holder != client => {
                    self.send(client, Some(re), ServerMessage::PilotDenied { holder })
                }
                _ => {
                    self.pilot = Some(client);
                    self.rig.set_pilot(true);
                    self.broadcast(
                        ServerMessage::PilotGranted { client_id: client },
                        Some((client, re)),
                    );
                }
            },
            C::PilotRelease {} => {
                if self.pilot == Some(client) {
                    self.pilot = None;
                    self.rig.set_pilot(false);
                    self.broadcast(
                        ServerMessage::PilotReleased { client_id: client },
                        Some((client, re)),
                    );
                } else {
                    self.send(client, Some(re), ServerMessage::NotPilot {});
                }
            }
            C::Input(event) => {
                if let Err(e) = self.rig.input_now(&event) {
                    self.core_error(client, re, e);
                }
            }
            C::ModeSet { mode } => {
                self.rig.set_teleop_mode(mode);
                ack(self);
            }
            C::PresetGoto { name } => match self.rig.goto_preset(&name) {
                Ok(()) => ack(self),
                Err(e) => self.core_error(client, re, e),
            },
            C::FaultClear {} => {
                self.rig.clear_fault();
                ack(self);
            }
            C::SeqUpload { sequence } => match sequence.validate(self.rig.model()) {
                Ok(()) => {
                    let seq_id = self.next_seq_id;
                    self.next_seq_id += 1;
                    let reply = ServerMessage::SeqUploaded {
                        seq_id,
                        name: sequence.name.clone(),
                        duration: sequence.duration(),
                    };
                    self.sequences.insert(seq_id, Arc::new(sequence));
                    self.send(client, Some(re), reply);
                }
                Err(e) => self.error(client, re, e),
            },
            C::SeqPlay { seq_id, rate } => {
                let Some(seq) = self.sequences.get(&seq_id).cloned() else {
                    self.error(client, re, format!("unknown seq_id {seq_id}"));
                    return;
                };
                match self
                    .rig
                    .play(seq.clone(), rate.unwrap_or(DEFAULT_RECORD_RATE))
                {
                    Ok(()) => {
                        self.playing = Some(seq_id);
                        self.broadcast(
                            ServerMessage::PlayStarted {
                                seq_id,
                                name: seq.name.clone(),
                            },
                            Some((client, re)),
                        );
                    }
                    Err(e) => self.core_error(client, re, e),
                }
            }
            C::SeqStop {} => match self.rig.stop() {
                Some(log) => {
                    ack(self);
                    self.finish_play(log, false);
                }
                None => ack(self),
            },
            C::LogFetch { log_id } => match self.logs.get(&log_id) {
                Some(log) => self.send(
                    client,
                    Some(re),
                    ServerMessage::Log {
                        log_id,
                        log: log.clone(),
                    },
                ),
                None => self.error(client, re, format!("unknown log_id {log_id}")),
            },
            C::Analyze {
                log_id,
                config,
                impressions,
                meaning,
                intended,
            } => {
                let Some(log) = self.logs.get(&log_id) else {
                    self.error(client, re, format!("unknown log_id {log_id}"));
                    return;
                };
                let cfg = config.unwrap_or_else(|| self.cfg.metrics.clone());
                let result = cfg.validate().and_then(|()| {
                    analyze(log, self.rig.model(), &cfg, impressions, meaning, intended)
                });
                match result {
                    Ok(report) => {
                        self.send(client, Some(re), ServerMessage::Report { log_id, report })
                    }
                    Err(e) => self.error(client, re, e),
                }
            }
            C::ConfigGet {} => self.send(
                client,
                Some(re),
                ServerMessage::Config {
                    model: self.cfg.model.clone(),
                    gains: self.cfg.gains.clone(),
                    bindings: self.cfg.bindings.clone(),
                    teleop: self.cfg.teleop.clone(),
                    metrics: self.cfg.metrics.clone(),
                },
            ),
        }
    }
}
