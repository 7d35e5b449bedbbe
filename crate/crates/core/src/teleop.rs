//! Gamepad teleoperation as a deterministic state machine.
//!
//! Input events update a [`TeleopState`]; once per control tick the state is
//! resolved into a joint velocity (joint mode: the selected joint only;
//! Cartesian mode: a twist mapped through the Jacobian), optionally smoothed
//! by a first-order "inertia" lag. Faults latch: while one is set no motion
//! resolves until a `fault_clear` press.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector6;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arm_model::{JointVector, RobotModel};
use crate::error::{check_version, from_versioned_json, Error, Result};

pub const BINDINGS_SCHEMA_VERSION: u32 = 1;
pub const EVENTS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeleopMode {
    #[default]
    Joint,
    Cartesian,
}

impl TeleopMode {
    pub fn toggled(self) -> Self {
        match self {
            TeleopMode::Joint => TeleopMode::Cartesian,
            TeleopMode::Cartesian => TeleopMode::Joint,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    NearSingularity,
    JointLimit,
    CommandTimeout,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultKind::NearSingularity => "near_singularity",
            FaultKind::JointLimit => "joint_limit",
            FaultKind::CommandTimeout => "command_timeout",
        })
    }
}

/// One gamepad/keyboard event. Axis values are clamped to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputEvent {
    #[serde(rename = "axis")]
    AxisMove { t: f64, id: String, value: f64 },
    #[serde(rename = "press")]
    ButtonPress { t: f64, id: String },
    #[serde(rename = "release")]
    ButtonRelease { t: f64, id: String },
}

impl InputEvent {
    pub fn axis(t: f64, id: impl Into<String>, value: f64) -> Self {
        InputEvent::AxisMove {
            t,
            id: id.into(),
            value,
        }
    }

    pub fn press(t: f64, id: impl Into<String>) -> Self {
        InputEvent::ButtonPress { t, id: id.into() }
    }

    pub fn release(t: f64, id: impl Into<String>) -> Self {
        InputEvent::ButtonRelease { t, id: id.into() }
    }

    pub fn t(&self) -> f64 {
        match self {
            InputEvent::AxisMove { t, .. }
            | InputEvent::ButtonPress { t, .. }
            | InputEvent::ButtonRelease { t, .. } => *t,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            InputEvent::AxisMove { id, .. }
            | InputEvent::ButtonPress { id, .. }
            | InputEvent::ButtonRelease { id, .. } => id,
        }
    }

    pub fn with_time(mut self, new_t: f64) -> Self {
        match &mut self {
            InputEvent::AxisMove { t, .. }
            | InputEvent::ButtonPress { t, .. }
            | InputEvent::ButtonRelease { t, .. } => *t = new_t,
        }
        self
    }
}

/// Recorded teleop session: `{"version": 1, "events": [...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub version: u32,
    pub events: Vec<InputEvent>,
}

impl EventLog {
    pub fn new(events: Vec<InputEvent>) -> Self {
        EventLog {
            version: EVENTS_SCHEMA_VERSION,
            events,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let log: EventLog = serde_json::from_str(s)?;
        check_version("event log", log.version, EVENTS_SCHEMA_VERSION)?;
        let mut prev = f64::NEG_INFINITY;
        for (i, ev) in log.events.iter().enumerate() {
            let t = ev.t();
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Parse(format!("events[{i}]: bad timestamp {t}")));
            }
            if t < prev {
                return Err(Error::Parse(format!(
                    "events[{i}]: timestamps must be non-decreasing"
                )));
            }
            if let InputEvent::AxisMove { value, .. } = ev {
                if !value.is_finite() {
                    return Err(Error::Parse(format!("events[{i}]: non-finite axis value")));
                }
            }
            prev = t;
        }
        Ok(log)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("events serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AxisAction {
    /// Velocity of the selected joint (joint mode).
    JointJog,
    TranslateX,
    TranslateY,
    TranslateZ,
    RotateX,
    RotateY,
    RotateZ,
}

impl AxisAction {
    const ALL: [(AxisAction, &'static str); 7] = [
        (AxisAction::JointJog, "joint_jog"),
        (AxisAction::TranslateX, "translate_x"),
        (AxisAction::TranslateY, "translate_y"),
        (AxisAction::TranslateZ, "translate_z"),
        (AxisAction::RotateX, "rotate_x"),
        (AxisAction::RotateY, "rotate_y"),
        (AxisAction::RotateZ, "rotate_z"),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL
            .iter()
            .find(|(a, _)| *a == self)
            .expect("listed")
            .1
    }

    fn twist_index(self) -> Option<usize> {
        match self {
            AxisAction::JointJog => None,
            AxisAction::TranslateX => Some(0),
            AxisAction::TranslateY => Some(1),
            AxisAction::TranslateZ => Some(2),
            AxisAction::RotateX => Some(3),
            AxisAction::RotateY => Some(4),
            AxisAction::RotateZ => Some(5),
        }
    }
}

impl FromStr for AxisAction {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(a, _)| *a)
            .ok_or_else(|| format!("unknown axis action `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ButtonAction {
    ModeToggle,
    /// Raise the speed scale of the current mode by one step.
    SpeedUp,
    SpeedDown,
    JointNext,
    JointPrev,
    /// Request a move to a named preset (`preset:<name>`).
    Preset(String),
    FaultClear,
    InertiaToggle,
    GripperOpen,
    GripperClose,
}

impl ButtonAction {
    pub fn name(&self) -> String {
        match self {
            ButtonAction::ModeToggle => "mode_toggle".into(),
            ButtonAction::SpeedUp => "speed_up".into(),
            ButtonAction::SpeedDown => "speed_down".into(),
            ButtonAction::JointNext => "joint_next".into(),
            ButtonAction::JointPrev => "joint_prev".into(),
            ButtonAction::Preset(p) => format!("preset:{p}"),
            ButtonAction::FaultClear => "fault_clear".into(),
            ButtonAction::InertiaToggle => "inertia_toggle".into(),
            ButtonAction::GripperOpen => "gripper_open".into(),
            ButtonAction::GripperClose => "gripper_close".into(),
        }
    }
}

impl FromStr for ButtonAction {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "mode_toggle" => ButtonAction::ModeToggle,
            "speed_up" => ButtonAction::SpeedUp,
            "speed_down" => ButtonAction::SpeedDown,
            "joint_next" => ButtonAction::JointNext,
            "joint_prev" => ButtonAction::JointPrev,
            "fault_clear" => ButtonAction::FaultClear,
            "inertia_toggle" => ButtonAction::InertiaToggle,
            "gripper_open" => ButtonAction::GripperOpen,
            "gripper_close" => ButtonAction::GripperClose,
            _ => match s.strip_prefix("preset:") {
                Some(name) if !name.is_empty() => ButtonAction::Preset(name.to_string()),
                _ => return Err(format!("unknown button action `{s}`")),
            },
        })
    }
}

/// What an input id does: an analog axis feeding one or more axis actions
/// (each only meaningful in its mode), or a button.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Binding {
    Axis(Vec<AxisAction>),
    Button(ButtonAction),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BindingRepr {
    One(String),
    Many(Vec<String>),
}

impl Serialize for Binding {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Binding::Axis(actions) if actions.len() == 1 => {
                BindingRepr::One(actions[0].name().to_string())
            }
            Binding::Axis(actions) => {
                BindingRepr::Many(actions.iter().map(|a| a.name().to_string()).collect())
            }
            Binding::Button(b) => BindingRepr::One(b.name()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Binding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match BindingRepr::deserialize(d)? {
            BindingRepr::One(s) => {
                if let Ok(a) = s.parse::<AxisAction>() {
                    Ok(Binding::Axis(vec![a]))
                } else {
                    s.parse::<ButtonAction>()
                        .map(Binding::Button)
                        .map_err(D::Error::custom)
                }
            }
            BindingRepr::Many(list) => list
                .iter()
                .map(|s| s.parse::<AxisAction>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Binding::Axis)
                .map_err(D::Error::custom),
        }
    }
}

/// Input id → action. File form is a flat JSON object
/// `{"<input id>": "<action>" | ["<axis action>", ...]}` with an optional
/// numeric `"version"` entry.
#[derive(Clone, Debug, PartialEq)]
pub struct BindingMap {
    pub bindings: BTreeMap<String, Binding>,
}

impl BindingMap {
    /// The bundled gamepad layout.
    pub fn default_gamepad() -> Self {
        Self::from_json(include_str!("../config/bindings.default.json")).expect("bundled bindings")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_raw(serde_json::from_str(s)?)
    }

    fn from_raw(mut raw: BTreeMap<String, serde_json::Value>) -> Result<Self> {
        if let Some(v) = raw.remove("version") {
            let found = v
                .as_u64()
                .ok_or_else(|| Error::Parse("bindings: version must be an integer".into()))?;
            check_version("bindings", found as u32, BINDINGS_SCHEMA_VERSION)?;
        }
        let bindings = raw
            .into_iter()
            .map(|(id, v)| {
                serde_json::from_value::<Binding>(v)
                    .map(|b| (id.clone(), b))
                    .map_err(|e| Error::Parse(format!("binding `{id}`: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(BindingMap { bindings })
    }

    pub fn to_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("version".into(), BINDINGS_SCHEMA_VERSION.into());
        for (id, b) in &self.bindings {
            obj.insert(id.clone(), serde_json::to_value(b).expect("binding"));
        }
        serde_json::to_string_pretty(&obj).expect("bindings serialize")
    }

    pub fn get(&self, id: &str) -> Option<&Binding> {
        self.bindings.get(id)
    }

    /// Input id bound to `action`, if any.
    pub fn button_for(&self, action: &ButtonAction) -> Option<&str> {
        self.bindings.iter().find_map(|(id, b)| match b {
            Binding::Button(a) if a == action => Some(id.as_str()),
            _ => None,
        })
    }
}

impl Serialize for BindingMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.bindings.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BindingMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, serde_json::Value>::deserialize(d)?;
        Self::from_raw(raw).map_err(serde::de::Error::custom)
    }
}

/// Tunables of the teleop layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleopConfig {
    /// Inertia lag time constant (s).
    pub inertia_tau: f64,
    /// Manipulability below which Cartesian motion faults.
    pub singularity_threshold: f64,
    /// Dead-man timeout (s) while motion is requested.
    pub command_timeout: f64,
    /// Speed-scale increment per button press.
    pub speed_step: f64,
    /// Full-deflection linear speed (m/s) at scale 1.
    pub max_linear_speed: f64,
    /// Full-deflection angular speed (rad/s) at scale 1.
    pub max_angular_speed: f64,
    /// Singular value under which the Cartesian pseudo-inverse is damped.
    pub sigma_threshold: f64,
    pub max_damping: f64,
}

pub const TELEOP_CONFIG_VERSION: u32 = 1;

impl TeleopConfig {
    /// Parses a config object; missing keys take defaults, `version` is
    /// optional.
    pub fn from_json(s: &str) -> Result<Self> {
        from_versioned_json(s, "teleop config", TELEOP_CONFIG_VERSION)
    }
}

impl Default for TeleopConfig {
    fn default() -> Self {
        TeleopConfig {
            inertia_tau: 0.4,
            singularity_threshold: 1e-3,
            command_timeout: 2.0,
            speed_step: 0.1,
            max_linear_speed: 0.25,
            max_angular_speed: 0.5,
            sigma_threshold: 0.05,
            max_damping: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopState {
    pub mode: TeleopMode,
    pub selected_joint: usize,
    pub joint_speed_scale: f64,
    pub cart_speed_scale: f64,
    pub inertia_enabled: bool,
    /// s
    pub inertia_tau: f64,
    pub fault: Option<FaultKind>,
    /// Post-smoothing joint velocity command (rad/s).
    pub commanded_vel: JointVector,
    pub gripper_cmd: f64,
    /// Current deflection of every bound axis action.
    pub axes: BTreeMap<AxisActionKey, f64>,
    /// Time of the last accepted input event (s).
    pub last_event_t: f64,
    /// Preset requested by a button press, consumed by the owning loop.
    pub pending_preset: Option<String>,
}

/// Serializable key wrapper for [`AxisAction`] maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AxisActionKey(pub AxisAction);

impl Serialize for AxisActionKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.0.name())
    }
}

impl<'de> Deserialize<'de> for AxisActionKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map(AxisActionKey)
            .map_err(serde::de::Error::custom)
    }
}

impl TeleopState {
    pub fn new(dof: usize, cfg: &TeleopConfig) -> Self {
        TeleopState {
            mode: TeleopMode::Joint,
            selected_joint: 0,
            joint_speed_scale: 0.5,
            cart_speed_scale: 0.5,
            inertia_enabled: false,
            inertia_tau: cfg.inertia_tau,
            fault: None,
            commanded_vel: JointVector::zeros(dof),
            gripper_cmd: 0.0,
            axes: BTreeMap::new(),
            last_event_t: 0.0,
            pending_preset: None,
        }
    }

    pub fn dof(&self) -> usize {
        self.commanded_vel.len()
    }

    pub fn axis(&self, action: AxisAction) -> f64 {
        self.axes
            .get(&AxisActionKey(action))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set_mode(&self, mode: TeleopMode) -> Self {
        TeleopState {
            mode,
            ..self.clone()
        }
    }

    /// Latches `fault` and zeroes the command.
    pub fn raise(&self, fault: FaultKind) -> Self {
        let mut s = self.clone();
        if s.fault.is_none() {
            s.fault = Some(fault);
        }
        s.commanded_vel = JointVector::zeros(s.dof());
        s
    }

    pub fn clear_fault(&self) -> Self {
        let mut s = self.clone();
        s.fault = None;
        s.axes.clear();
        s.commanded_vel = JointVector::zeros(s.dof());
        s
    }

    /// Neutral sticks, zero command; used when the pilot leaves.
    pub fn released(&self) -> Self {
        let mut s = self.clone();
        s.axes.clear();
        s.commanded_vel = JointVector::zeros(s.dof());
        s.pending_preset = None;
        s
    }

    fn speed_scale_mut(&mut self) -> &mut f64 {
        match self.mode {
            TeleopMode::Joint => &mut self.joint_speed_scale,
            TeleopMode::Cartesian => &mut self.cart_speed_scale,
        }
    }
}

/// Applies one input event. Unknown ids leave the state untouched.
pub fn process_input(
    state: &TeleopState,
    event: &InputEvent,
    bindings: &BindingMap,
    cfg: &TeleopConfig,
) -> TeleopState {
    let binding = bindings.get(event.id());
    let mut s = state.clone();
    match (event, binding) {
        (InputEvent::AxisMove { value, .. }, Some(Binding::Axis(actions))) => {
            let v = if value.is_finite() {
                value.clamp(-1.0, 1.0)
            } else {
                0.0
            };
            for a in actions {
                s.axes.insert(AxisActionKey(*a), v);
            }
        }
        (InputEvent::ButtonPress { .. }, Some(Binding::Button(action))) => {
            apply_button(&mut s, action, cfg);
        }
        (InputEvent::ButtonRelease { .. }, Some(Binding::Button(_))) => {}
        _ => {
            log::debug!("ignoring input `{}`: no matching binding", event.id());
            return state.clone();
        }
    }
    s.last_event_t = event.t();
    if s.fault.is_some() {
        s.commanded_vel = JointVector::zeros(s.dof());
    }
    s
}

fn apply_button(s: &mut TeleopState, action: &ButtonAction, cfg: &TeleopConfig) {
    match action {
        ButtonAction::ModeToggle => s.mode = s.mode.toggled(),
        ButtonAction::SpeedUp => {
            let scale = s.speed_scale_mut();
            *scale = (*scale + cfg.speed_step).clamp(0.0, 1.0);
        }
        ButtonAction::SpeedDown => {
            let scale = s.speed_scale_mut();
            *scale = (*scale - cfg.speed_step).clamp(0.0, 1.0);
        }
        ButtonAction::JointNext => {
            let n = s.dof().max(1);
            s.selected_joint = (s.selected_joint + 1) % n;
        }
        ButtonAction::JointPrev => {
            let n = s.dof().max(1);
            s.selected_joint = (s.selected_joint + n - 1) % n;
        }
        ButtonAction::Preset(name) => {
            if s.fault.is_none() {
                s.pending_preset = Some(name.clone());
            }
        }
        ButtonAction::FaultClear => *s = s.clear_fault(),
        ButtonAction::InertiaToggle => s.inertia_enabled = !s.inertia_enabled,
        ButtonAction::GripperOpen => s.gripper_cmd = 1.0,
        ButtonAction::GripperClose => s.gripper_cmd = 0.0,
    }
}

/// Velocity requested by the sticks before smoothing, plus any fault the
/// request raised.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub velocity: JointVector,
    pub fault: Option<FaultKind>,
}

/// Maps the current stick state to a joint velocity within the limits.
pub fn resolve_velocity(
    state: &TeleopState,
    model: &RobotModel,
    q: &[f64],
    cfg: &TeleopConfig,
) -> Result<Resolved> {
    model.check_dims(q)?;
    let n = model.dof();
    let zero = || JointVector::zeros(n);
    if state.fault.is_some() {
        return Ok(Resolved {
            velocity: zero(),
            fault: None,
        });
    }
    match state.mode {
        TeleopMode::Joint => {
            let mut v = zero();
            let j = state.selected_joint.min(n - 1);
            let limit = model.joints[j].vel_limit;
            v[j] = (state.axis(AxisAction::JointJog) * state.joint_speed_scale * limit)
                .clamp(-limit, limit);
            Ok(Resolved {
                velocity: v,
                fault: None,
            })
        }
        TeleopMode::Cartesian => {
            let mut twist = Vector6::zeros();
            for (key, value) in &state.axes {
                if let Some(i) = key.0.twist_index() {
                    let full = if i < 3 {
                        cfg.max_linear_speed
                    } else {
                        cfg.max_angular_speed
                    };
                    twist[i] = value * state.cart_speed_scale * full;
                }
            }
            if twist.iter().all(|v| *v == 0.0) {
                return Ok(Resolved {
                    velocity: zero(),
                    fault: None,
                });
            }
            if model.manipulability(q)? < cfg.singularity_threshold {
                return Ok(Resolved {
                    velocity: zero(),
                    fault: Some(FaultKind::NearSingularity),
                });
            }
            let mut v =
                model.twist_to_joint_velocity(q, &twist, cfg.sigma_threshold, cfg.max_damping)?;
            // uniform scaling keeps the Cartesian direction
            let over = v
                .iter()
                .zip(&model.joints)
                .map(|(vi, j)| vi.abs() / j.vel_limit)
                .fold(0.0, f64::max);
            if over > 1.0 {
                for vi in v.iter_mut() {
                    *vi /= over;
                }
            }
            for (vi, j) in v.iter_mut().zip(&model.joints) {
                *vi = vi.clamp(-j.vel_limit, j.vel_limit);
            }
            Ok(Resolved {
                velocity: v,
                fault: None,
            })
        }
    }
}

/// First-order velocity lag: `v + (dt/tau)(target - v)` with `dt/tau <= 1`.
pub fn apply_inertia(
    prev: &JointVector,
    target: &JointVector,
    dt: f64,
    tau: f64,
    enabled: bool,
) -> JointVector {
    if !enabled {
        return target.clone();
    }
    let alpha = if tau > 0.0 { (dt / tau).min(1.0) } else { 1.0 };
    prev.iter()
        .zip(target.iter())
        .map(|(v, t)| v + alpha * (t - v))
        .collect::<Vec<_>>()
        .into()
}

/// A point-to-point move to a preset, executed with a minimum-jerk profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionRequest {
    pub preset: String,
    pub start: JointVector,
    pub target: JointVector,
    /// s
    pub duration: f64,
}

/// Builds the move from `q` to preset `name`. Duration is the slowest
/// joint's travel at half its velocity limit, at least one second.
pub fn goto_preset(model: &RobotModel, q: &[f64], name: &str) -> Result<MotionRequest> {
    model.check_dims(q)?;
    let target = model.preset(name)?.clone();
    let duration = target
        .iter()
        .zip(q)
        .zip(&model.joints)
        .map(|((t, c), j)| (t - c).abs() / (0.5 * j.vel_limit))
        .fold(1.0, f64::max);
    Ok(MotionRequest {
        preset: name.to_string(),
        start: JointVector(q.to_vec()),
        target,
        duration,
    })
}
