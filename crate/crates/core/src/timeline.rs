//! Keyframe timeline: one curve per joint (plus an optional gripper curve),
//! evaluation, editing, segment duplication, time scaling and sampling.
//!
//! Sequences are immutable values; every edit returns a new [`Sequence`].
//!
//! Bezier handles are stored relative to their key as `(dt, dv)` pairs. The
//! in-handle sits at `(t - dt, v - dv)` and the out-handle at
//! `(t + dt, v + dv)`, so equal `dv/dt` ratios on both sides of a key give a
//! C1 join. A missing handle means a flat tangent one third of the way to the
//! neighbouring key.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arm_model::{JointVector, RobotModel};
use crate::error::{check_version, Error, Result};
use crate::trajlog::{LogRow, TrajectoryLog};

pub const SEQUENCE_SCHEMA_VERSION: u32 = 1;

/// Time tolerance used to match existing keyframes (s).
const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Joint(usize),
    Gripper,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Joint(i) => write!(f, "joint {i}"),
            Target::Gripper => write!(f, "gripper"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRepr {
    Joint(usize),
    Named(String),
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Target::Joint(i) => TargetRepr::Joint(*i),
            Target::Gripper => TargetRepr::Named("gripper".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match TargetRepr::deserialize(d)? {
            TargetRepr::Joint(i) => Ok(Target::Joint(i)),
            TargetRepr::Named(s) if s == "gripper" => Ok(Target::Gripper),
            TargetRepr::Named(s) => Err(serde::de::Error::custom(format!(
                "unknown channel target `{s}` (expected a joint index or \"gripper\")"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Step,
    #[default]
    Linear,
    #[serde(rename = "bezier", alias = "cubic_bezier")]
    CubicBezier,
}

/// Bezier handle offset relative to its key: `dt` seconds (≥ 0) and `dv`
/// value units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Handle {
    pub dt: f64,
    pub dv: f64,
}

impl From<[f64; 2]> for Handle {
    fn from([dt, dv]: [f64; 2]) -> Self {
        Handle { dt, dv }
    }
}

impl From<Handle> for [f64; 2] {
    fn from(h: Handle) -> Self {
        [h.dt, h.dv]
    }
}

impl Handle {
    pub fn new(dt: f64, dv: f64) -> Self {
        Handle { dt, dv }
    }

    /// Shrinks the handle so `dt <= max_dt`, keeping its slope.
    fn clamped(self, max_dt: f64) -> Self {
        if self.dt <= max_dt {
            return self;
        }
        if self.dt <= 0.0 {
            return Handle::new(0.0, 0.0);
        }
        let k = max_dt.max(0.0) / self.dt;
        Handle::new(self.dt * k, self.dv * k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    #[serde(rename = "v")]
    pub value: f64,
    #[serde(default)]
    pub interp: Interp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_in: Option<Handle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_out: Option<Handle>,
}

impl Keyframe {
    pub fn new(t: f64, value: f64, interp: Interp) -> Self {
        Keyframe {
            t,
            value,
            interp,
            h_in: None,
            h_out: None,
        }
    }

    pub fn linear(t: f64, value: f64) -> Self {
        Self::new(t, value, Interp::Linear)
    }

    pub fn step(t: f64, value: f64) -> Self {
        Self::new(t, value, Interp::Step)
    }

    pub fn bezier(t: f64, value: f64, h_in: Option<Handle>, h_out: Option<Handle>) -> Self {
        Keyframe {
            t,
            value,
            interp: Interp::CubicBezier,
            h_in,
            h_out,
        }
    }

    fn check_own(&self, path: &str) -> Result<()> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(seq_err(
                path,
                format!("time {} must be finite and >= 0", self.t),
            ));
        }
        if !self.value.is_finite() {
            return Err(seq_err(path, "value must be finite"));
        }
        for (name, h) in [("h_in", self.h_in), ("h_out", self.h_out)] {
            if let Some(h) = h {
                if !(h.dt.is_finite() && h.dv.is_finite() && h.dt >= 0.0) {
                    return Err(seq_err(path, format!("{name} needs finite dt >= 0")));
                }
            }
        }
        Ok(())
    }

    fn shifted(&self, dt: f64) -> Self {
        Keyframe {
            t: self.t + dt,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub target: Target,
    pub keys: Vec<Keyframe>,
}

impl Channel {
    pub fn new(target: Target, keys: Vec<Keyframe>) -> Self {
        Channel { target, keys }
    }

    /// Curve value at `t`; an empty channel reads 0.
    pub fn evaluate(&self, t: f64) -> f64 {
        let keys = &self.keys;
        let (Some(first), Some(last)) = (keys.first(), keys.last()) else {
            return 0.0;
        };
        if t <= first.t {
            return first.value;
        }
        if t >= last.t {
            return last.value;
        }
        // index of the first key strictly after t
        let right = keys.partition_point(|k| k.t <= t);
        let a = &keys[right - 1];
        let b = &keys[right];
        if t == a.t {
            return a.value;
        }
        match a.interp {
            Interp::Step => a.value,
            Interp::Linear => a.value + (b.value - a.value) * (t - a.t) / (b.t - a.t),
            Interp::CubicBezier => bezier_segment(a, b, t),
        }
    }

    fn check(&self, path: &str) -> Result<()> {
        for (i, k) in self.keys.iter().enumerate() {
            let kp = format!("{path}.keys[{i}]");
            k.check_own(&kp)?;
            if i > 0 && k.t <= self.keys[i - 1].t {
                return Err(seq_err(&kp, "key times must be strictly increasing"));
            }
        }
        for (i, pair) in self.keys.windows(2).enumerate() {
            let gap = pair[1].t - pair[0].t;
            if pair[0].h_out.is_some_and(|h| h.dt > gap + TIME_EPS) {
                return Err(seq_err(
                    &format!("{path}.keys[{i}]"),
                    "h_out crosses the next keyframe",
                ));
            }
            if pair[1].h_in.is_some_and(|h| h.dt > gap + TIME_EPS) {
                return Err(seq_err(
                    &format!("{path}.keys[{}]", i + 1),
                    "h_in crosses the previous keyframe",
                ));
            }
        }
        Ok(())
    }

    /// Clamps handles that reach past a neighbouring key.
    fn normalize_handles(&mut self) {
        let n = self.keys.len();
        for i in 0..n {
            if i + 1 < n {
                let gap = self.keys[i + 1].t - self.keys[i].t;
                if let Some(h) = self.keys[i].h_out {
                    self.keys[i].h_out = Some(h.clamped(gap));
                }
            }
            if i > 0 {
                let gap = self.keys[i].t - self.keys[i - 1].t;
                if let Some(h) = self.keys[i].h_in {
                    self.keys[i].h_in = Some(h.clamped(gap));
                }
            }
        }
    }

    fn is_sorted_unique(&self) -> bool {
        self.keys.windows(2).all(|w| w[0].t < w[1].t)
    }
}

fn bezier_segment(a: &Keyframe, b: &Keyframe, t: f64) -> f64 {
    let span = b.t - a.t;
    let default = Handle::new(span / 3.0, 0.0);
    let out = a.h_out.unwrap_or(default).clamped(span);
    let inn = b.h_in.unwrap_or(default).clamped(span);
    let xs = [a.t, a.t + out.dt, b.t - inn.dt, b.t];
    let ys = [a.value, a.value + out.dv, b.value - inn.dv, b.value];

    // handle times lie inside [a.t, b.t], which makes x(s) non-decreasing
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..128 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cubic(&xs, mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    cubic(&ys, 0.5 * (lo + hi))
}

fn cubic(p: &[f64; 4], s: f64) -> f64 {
    let u = 1.0 - s;
    u * u * u * p[0] + 3.0 * u * u * s * p[1] + 3.0 * u * s * s * p[2] + s * s * s * p[3]
}

fn seq_err(path: &str, reason: impl Into<String>) -> Error {
    Error::InvalidSequence {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Evaluated pose of a sequence at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub joints: JointVector,
    pub gripper: f64,
}

#[derive(Serialize, Deserialize)]
struct SequenceFile {
    version: u32,
    name: String,
    robot: String,
    #[serde(default)]
    channels: Vec<Channel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceFile", into = "SequenceFile")]
pub struct Sequence {
    pub name: String,
    /// Name of the robot model this sequence was authored for.
    pub robot: String,
    channels: Vec<Channel>,
}

impl TryFrom<SequenceFile> for Sequence {
    type Error = Error;
    fn try_from(f: SequenceFile) -> Result<Self> {
        check_version("sequence", f.version, SEQUENCE_SCHEMA_VERSION)?;
        Sequence::new(f.name, f.robot, f.channels)
    }
}

impl From<Sequence> for SequenceFile {
    fn from(s: Sequence) -> Self {
        SequenceFile {
            version: SEQUENCE_SCHEMA_VERSION,
            name: s.name,
            robot: s.robot,
            channels: s.channels,
        }
    }
}

impl Sequence {
    /// Builds a sequence, checking structure (ordering, uniqueness, handle
    /// placement). Limits need a model; see [`Sequence::validate`].
    pub fn new(
        name: impl Into<String>,
        robot: impl Into<String>,
        channels: Vec<Channel>,
    ) -> Result<Self> {
        let seq = Sequence {
            name: name.into(),
            robot: robot.into(),
            channels,
        };
        seq.check_structure()?;
        Ok(seq)
    }

    pub fn empty(name: impl Into<String>, robot: impl Into<String>) -> Self {
        Sequence {
            name: name.into(),
            robot: robot.into(),
            channels: Vec::new(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sequence serializes")
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, target: Target) -> Option<&Channel> {
        self.channels.iter().find(|c| c.target == target)
    }

    /// Latest keyframe time over all channels.
    pub fn duration(&self) -> f64 {
        self.channels
            .iter()
            .filter_map(|c| c.keys.last().map(|k| k.t))
            .fold(0.0, f64::max)
    }

    fn check_structure(&self) -> Result<()> {
        for (i, c) in self.channels.iter().enumerate() {
            let path = format!("channels[{i}]");
            if self.channels[..i].iter().any(|o| o.target == c.target) {
                return Err(seq_err(&path, format!("second channel for {}", c.target)));
            }
            c.check(&path)?;
        }
        Ok(())
    }

    /// Full validation against `model`: robot name, channel targets and
    /// value limits.
    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if self.robot != model.name {
            return Err(Error::ModelMismatch {
                sequence: self.robot.clone(),
                model: model.name.clone(),
            });
        }
        self.check_structure()?;
        for (i, c) in self.channels.iter().enumerate() {
            let path = format!("channels[{i}]");
            let (lo, hi) = target_range(model, c.target).map_err(|e| seq_err(&path, e))?;
            for (k, key) in c.keys.iter().enumerate() {
                if key.value < lo || key.value > hi {
                    return Err(seq_err(
                        &format!("{path}.keys[{k}]"),
                        format!(
                            "value {} outside {} range [{lo}, {hi}]",
                            key.value, c.target
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Joint values (absent channels hold 0) and gripper value at `t`.
    pub fn evaluate(&self, dof: usize, t: f64) -> Frame {
        let mut joints = JointVector::zeros(dof);
        let mut gripper = 0.0;
        for c in &self.channels {
            match c.target {
                Target::Joint(i) if i < dof => joints[i] = c.evaluate(t),
                Target::Joint(_) => {}
                Target::Gripper => gripper = c.evaluate(t),
            }
        }
        Frame { joints, gripper }
    }

    /// Central-difference joint velocity of the curves at `t` with step `h`.
    pub fn velocity(&self, dof: usize, t: f64, h: f64) -> JointVector {
        let ahead = self.evaluate(dof, t + h).joints;
        let behind = self.evaluate(dof, (t - h).max(0.0)).joints;
        let span = t + h - (t - h).max(0.0);
        ahead
            .iter()
            .zip(behind.iter())
            .map(|(a, b)| (a - b) / span)
            .collect::<Vec<_>>()
            .into()
    }

    /// Inserts `key` on `target`, replacing any key at the same time.
    pub fn insert_keyframe(
        &self,
        model: &RobotModel,
        target: Target,
        key: Keyframe,
    ) -> Result<Sequence> {
        let path = format!("{target}@t={}", key.t);
        key.check_own(&path)?;
        let (lo, hi) = target_range(model, target).map_err(|e| seq_err(&path, e))?;
        if key.value < lo || key.value > hi {
            return Err(seq_err(
                &path,
                format!("value {} outside {target} range [{lo}, {hi}]", key.value),
            ));
        }
        let mut next = self.clone();
        let idx = match next.channels.iter().position(|c| c.target == target) {
            Some(i) => i,
            None => {
                next.channels.push(Channel::new(target, Vec::new()));
                next.channels.len() - 1
            }
        };
        let ch = &mut next.channels[idx];
        match ch.keys.iter().position(|k| (k.t - key.t).abs() <= TIME_EPS) {
            Some(i) => ch.keys[i] = key,
            None => {
                let at = ch.keys.partition_point(|k| k.t < key.t);
                ch.keys.insert(at, key);
            }
        }
        ch.normalize_handles();
        Ok(next)
    }

    /// Removes the key at time `t` on `target`.
    pub fn delete_keyframe(&self, target: Target, t: f64) -> Result<Sequence> {
        let missing = || Error::NoSuchKeyframe {
            target: target.to_string(),
            t,
        };
        let mut next = self.clone();
        let ch = next
            .channels
            .iter_mut()
            .find(|c| c.target == target)
            .ok_or_else(missing)?;
        let i = ch
            .keys
            .iter()
            .position(|k| (k.t - t).abs() <= TIME_EPS)
            .ok_or_else(missing)?;
        ch.keys.remove(i);
        Ok(next)
    }

    /// Copies every key with time in `[t0, t1]` to start at `paste_at`.
    /// Fails if a channel already has keys inside the paste window.
    pub fn duplicate_segment(&self, t0: f64, t1: f64, paste_at: f64) -> Result<Sequence> {
        if !(t0.is_finite() && t1.is_finite() && paste_at.is_finite()) || t0 < 0.0 || t0 >= t1 {
            return Err(Error::InvalidArgument(format!(
                "segment [{t0}, {t1}] must satisfy 0 <= t0 < t1"
            )));
        }
        if paste_at < 0.0 {
            return Err(Error::InvalidArgument("paste time must be >= 0".into()));
        }
        let shift = paste_at - t0;
        let (w0, w1) = (paste_at, paste_at + (t1 - t0));
        let mut next = self.clone();
        for ch in &mut next.channels {
            let copies: Vec<Keyframe> = ch
                .keys
                .iter()
                .filter(|k| k.t >= t0 && k.t <= t1)
                .map(|k| k.shifted(shift))
                .collect();
            if copies.is_empty() {
                continue;
            }
            if let Some(k) = ch
                .keys
                .iter()
                .find(|k| k.t >= w0 - TIME_EPS && k.t <= w1 + TIME_EPS)
            {
                return Err(Error::PasteOverlap {
                    target: ch.target.to_string(),
                    t: k.t,
                });
            }
            ch.keys.extend(copies);
            ch.keys.sort_by(|a, b| a.t.total_cmp(&b.t));
            ch.normalize_handles();
        }
        Ok(next)
    }

    /// Stretches (`factor > 1`) or compresses the window `[t0, t1]`; keys
    /// after `t1` shift by `(factor - 1)(t1 - t0)`.
    pub fn time_scale(&self, t0: f64, t1: f64, factor: f64) -> Result<Sequence> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidScaleFactor(factor));
        }
        if !(t0.is_finite() && t1.is_finite()) || t0 < 0.0 || t0 >= t1 {
            return Err(Error::InvalidArgument(format!(
                "window [{t0}, {t1}] must satisfy 0 <= t0 < t1"
            )));
        }
        if factor == 1.0 {
            return Ok(self.clone());
        }
        let tail_shift = (factor - 1.0) * (t1 - t0);
        let mut next = self.clone();
        for ch in &mut next.channels {
            for k in &mut ch.keys {
                if k.t >= t0 && k.t <= t1 {
                    k.t = t0 + factor * (k.t - t0);
                    for h in [&mut k.h_in, &mut k.h_out].into_iter().flatten() {
                        h.dt *= factor;
                    }
                } else if k.t > t1 {
                    k.t += tail_shift;
                }
            }
            if !ch.is_sorted_unique() {
                return Err(Error::InvalidArgument(format!(
                    "scaling by {factor} collapses keyframes on {}",
                    ch.target
                )));
            }
            ch.normalize_handles();
        }
        Ok(next)
    }

    /// Uniform samples of the curves over `[0, duration]` at `rate` Hz,
    /// both endpoints included. Actual and reference columns are equal;
    /// velocities are central differences of the curves.
    pub fn sample(&self, dof: usize, rate: f64) -> Result<TrajectoryLog> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rate {rate} must be > 0"
            )));
        }
        let intervals = sample_intervals(self.duration(), rate);
        let h = 0.5 / rate;
        let mut log = TrajectoryLog::new(rate, self.name.clone(), self.robot.clone());
        for k in 0..=intervals {
            let t = k as f64 / rate;
            let frame = self.evaluate(dof, t);
            log.rows.push(LogRow {
                t,
                q_ref: frame.joints.clone(),
                q: frame.joints,
                qd: self.velocity(dof, t, h),
                gripper: frame.gripper,
            });
        }
        Ok(log)
    }
}

/// Number of sampling intervals covering `duration` at `rate`.
pub fn sample_intervals(duration: f64, rate: f64) -> usize {
    (duration * rate - 1e-9).ceil().max(0.0) as usize
}

fn target_range(model: &RobotModel, target: Target) -> std::result::Result<(f64, f64), String> {
    match target {
        Target::Joint(i) => model
            .joints
            .get(i)
            .map(|j| (j.min(), j.max()))
            .ok_or_else(|| {
                format!(
                    "joint index {i} does not exist (model `{}` has {} joints)",
                    model.name,
                    model.dof()
                )
            }),
        Target::Gripper => Ok((model.gripper_range[0], model.gripper_range[1])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> RobotModel {
        RobotModel::planar_two_link()
    }

    fn ramp() -> Sequence {
        Sequence::new(
            "ramp",
            "planar2",
            vec![Channel::new(
                Target::Joint(0),
                vec![Keyframe::linear(0.0, 0.0), Keyframe::linear(2.0, 1.0)],
            )],
        )
        .unwrap()
    }

    #[test]
    fn linear_midpoint_and_keys() {
        let s = ramp();
        assert_eq!(s.evaluate(2, 1.0).joints[0], 0.5);
        assert_eq!(s.evaluate(2, 0.0).joints[0], 0.0);
        assert_eq!(s.evaluate(2, 2.0).joints[0], 1.0);
        assert_eq!(s.evaluate(2, 5.0).joints[0], 1.0);
        // absent channel holds 0
        assert_eq!(s.evaluate(2, 1.0).joints[1], 0.0);
    }

    #[test]
    fn symmetric_flat_bezier_midpoint() {
        let h = Some(Handle::new(0.5, 0.0));
        let s = Sequence::new(
            "b",
            "planar2",
            vec![Channel::new(
                Target::Joint(0),
                vec![
                    Keyframe::bezier(0.0, 0.0, None, h),
                    Keyframe::bezier(2.0, 1.0, h, None),
                ],
            )],
        )
        .unwrap();
        assert!((s.evaluate(2, 1.0).joints[0] - 0.5).abs() < 1e-12);
        // eased: slower near the ends than linear
        assert!(s.evaluate(2, 0.2).joints[0] < 0.1);
    }

    #[test]
    fn step_holds_left_value() {
        let s = Sequence::new(
            "s",
            "planar2",
            vec![Channel::new(
                Target::Gripper,
                vec![Keyframe::step(0.0, 0.0), Keyframe::step(1.0, 1.0)],
            )],
        )
        .unwrap();
        assert_eq!(s.evaluate(2, 0.999).gripper, 0.0);
        assert_eq!(s.evaluate(2, 1.0).gripper, 1.0);
    }

    #[test]
    fn insert_and_replace() {
        let m = model();
        let s = ramp();
        let s2 = s
            .insert_keyframe(&m, Target::Joint(0), Keyframe::linear(1.0, 0.2))
            .unwrap();
        assert_eq!(s2.channel(Target::Joint(0)).unwrap().keys.len(), 3);
        assert!(s2.channel(Target::Joint(0)).unwrap().is_sorted_unique());
        let s3 = s2
            .insert_keyframe(&m, Target::Joint(0), Keyframe::linear(1.0, 0.7))
            .unwrap();
        let keys = &s3.channel(Target::Joint(0)).unwrap().keys;
        assert_eq!(keys.len(), 3);
        assert_eq!(keys[1].value, 0.7);
    }

    #[test]
    fn insert_out_of_limits_rejected() {
        let m = model();
        let err = ramp()
            .insert_keyframe(&m, Target::Joint(1), Keyframe::linear(1.0, 4.0))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidSequence { .. }));
        assert!(ramp()
            .insert_keyframe(&m, Target::Gripper, Keyframe::linear(1.0, 1.5))
            .is_err());
        assert!(ramp()
            .insert_keyframe(&m, Target::Joint(5), Keyframe::linear(1.0, 0.0))
            .is_err());
    }

    #[test]
    fn delete_missing_key_fails() {
        assert!(matches!(
            ramp().delete_keyframe(Target::Joint(0), 1.0),
            Err(Error::NoSuchKeyframe { .. })
        ));
        assert!(ramp().delete_keyframe(Target::Gripper, 0.0).is_err());
        let s = ramp().delete_keyframe(Target::Joint(0), 2.0).unwrap();
        assert_eq!(s.duration(), 0.0);
    }

    #[test]
    fn duplicate_shifts_keys() {
        let m = model();
        let s = ramp()
            .insert_keyframe(&m, Target::Joint(0), Keyframe::linear(1.0, 0.3))
            .unwrap();
        let d = s.duplicate_segment(0.0, 2.0, 4.0).unwrap();
        let keys = &d.channel(Target::Joint(0)).unwrap().keys;
        assert!(keys.iter().any(|k| k.t == 5.0 && k.value == 0.3));
        assert_eq!(d.duration(), 6.0);
    }

    #[test]
    fn duplicate_empty_segment_is_noop() {
        let s = ramp();
        assert_eq!(s.duplicate_segment(0.5, 1.5, 10.0).unwrap(), s);
    }

    #[test]
    fn duplicate_overlap_rejected() {
        let err = ramp().duplicate_segment(0.0, 1.0, 1.5).unwrap_err();
        assert!(matches!(err, Error::PasteOverlap { .. }));
    }

    #[test]
    fn time_scale_cases() {
        let s = ramp();
        let scaled = s.time_scale(0.0, 2.0, 2.0).unwrap();
        assert_eq!(scaled.channel(Target::Joint(0)).unwrap().keys[1].t, 4.0);
        assert_eq!(s.time_scale(0.0, 2.0, 1.0).unwrap(), s);
        assert!(matches!(
            s.time_scale(0.0, 2.0, 0.0),
            Err(Error::InvalidScaleFactor(_))
        ));
        assert!(s.time_scale(0.0, 2.0, -1.0).is_err());
    }

    #[test]
    fn sample_counts_and_values() {
        let log = ramp().sample(2, 100.0).unwrap();
        assert_eq!(log.rows.len(), 201);
        for row in &log.rows {
            assert!((row.q[0] - row.t / 2.0).abs() < 1e-12);
        }
        let constant = Sequence::new(
            "c",
            "planar2",
            vec![Channel::new(
                Target::Joint(1),
                vec![Keyframe::linear(0.0, 0.4), Keyframe::linear(1.0, 0.4)],
            )],
        )
        .unwrap();
        let log = constant.sample(2, 100.0).unwrap();
        assert!(log.rows.iter().all(|r| r.q == log.rows[0].q));
        assert!(ramp().sample(2, 0.0).is_err());
    }

    #[test]
    fn file_format_round_trip_and_errors() {
        let json = r#"{"version":1,"name":"n","robot":"planar2","channels":[
            {"target":0,"keys":[{"t":0,"v":0,"interp":"bezier","h_out":[0.3,0.1]},{"t":1,"v":0.5,"interp":"linear","h_in":[0.2,0]}]},
            {"target":"gripper","keys":[{"t":0,"v":1,"interp":"step"}]}]}"#;
        let s = Sequence::from_json(json).unwrap();
        assert_eq!(s.channels().len(), 2);
        assert_eq!(Sequence::from_json(&s.to_json()).unwrap(), s);
        s.validate(&model()).unwrap();

        let bad_version = json.replace("\"version\":1", "\"version\":3");
        assert!(Sequence::from_json(&bad_version)
            .unwrap_err()
            .to_string()
            .contains("version 3"));

        let unsorted = r#"{"version":1,"name":"n","robot":"planar2","channels":[
            {"target":1,"keys":[{"t":1,"v":0},{"t":0.5,"v":0}]}]}"#;
        let err = Sequence::from_json(unsorted).unwrap_err().to_string();
        assert!(err.contains("channels[0].keys[1]"), "{err}");

        let crossing = r#"{"version":1,"name":"n","robot":"planar2","channels":[
            {"target":1,"keys":[{"t":0,"v":0,"interp":"bezier","h_out":[2.0,0]},{"t":1,"v":0}]}]}"#;
        assert!(Sequence::from_json(crossing).is_err());
    }

    #[test]
    fn validate_names_bad_channel() {
        let json = r#"{"version":1,"name":"n","robot":"planar2","channels":[
            {"target":0,"keys":[{"t":0,"v":0}]},
            {"target":4,"keys":[{"t":0,"v":0}]}]}"#;
        let err = Sequence::from_json(json)
            .unwrap()
            .validate(&model())
            .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("channels[1]") && msg.contains("joint index 4"),
            "{msg}"
        );
    }
}
