//! Serial-arm kinematics: forward kinematics, geometric Jacobian,
//! damped-least-squares inverse kinematics and manipulability.
//!
//! Every joint is revolute and described with the classic four link
//! parameters (link length `a`, link twist `alpha`, link offset `d` and the
//! joint angle). The joint transform is `Rz(q + angle_offset) Tz(d) Tx(a) Rx(alpha)`.

use std::collections::BTreeMap;
use std::ops::{Deref, DerefMut};

use nalgebra::{
    DMatrix, DVector, Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3, Vector6,
};
use serde::{Deserialize, Serialize};

use crate::error::{check_version, Error, Result};

pub const ROBOT_SCHEMA_VERSION: u32 = 1;

/// Joint-space configuration (rad) or joint velocity (rad/s).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

impl Deref for JointVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        JointVector(v)
    }
}

impl<const N: usize> From<[f64; N]> for JointVector {
    fn from(v: [f64; N]) -> Self {
        JointVector(v.to_vec())
    }
}

/// End-effector pose: position in metres, orientation as a unit quaternion.
///
/// Serialized as `{"position": [x, y, z], "orientation": [w, x, y, z]}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    orientation: [f64; 4],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = String;
    fn try_from(r: PoseRepr) -> std::result::Result<Self, String> {
        let [w, x, y, z] = r.orientation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(format!("orientation quaternion norm {norm} is not 1"));
        }
        if r.position.iter().any(|v| !v.is_finite()) {
            return Err("non-finite position".into());
        }
        Ok(Pose {
            position: Vector3::from(r.position),
            // already-unit input is kept bit for bit
            orientation: if (norm - 1.0).abs() <= 1e-12 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            },
        })
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.orientation.quaternion();
        PoseRepr {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Pose {
            position,
            orientation,
        }
    }

    /// Pose at `position` with identity orientation.
    pub fn from_position(x: f64, y: f64, z: f64) -> Self {
        Pose::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Pose::new(iso.translation.vector, iso.rotation)
    }

    pub fn position_error(&self, other: &Pose) -> f64 {
        (self.position - other.position).norm()
    }

    /// Angle (rad) of the rotation taking `other` onto `self`.
    pub fn orientation_error(&self, other: &Pose) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }
}

/// One revolute joint and the link that follows it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Link length `a` (m).
    pub link_length: f64,
    /// Link twist `alpha` (rad).
    pub link_twist: f64,
    /// Link offset `d` (m).
    pub link_offset: f64,
    /// Constant added to the joint variable (rad).
    #[serde(default)]
    pub angle_offset: f64,
    /// `[min, max]` in rad.
    pub limits: [f64; 2],
    /// rad/s
    pub vel_limit: f64,
    /// Lumped inertia about the joint axis (kg·m²).
    pub inertia: f64,
    /// Viscous damping (N·m·s/rad).
    #[serde(default)]
    pub damping: f64,
    /// Constant load torque pulling the joint towards negative angles (N·m),
    /// for "heavy" experiments. Zero by default.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub gravity_torque: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl JointSpec {
    /// Joint of a planar arm: revolute about z, link of `length` along x.
    pub fn planar(length: f64) -> Self {
        JointSpec {
            name: String::new(),
            link_length: length,
            link_twist: 0.0,
            link_offset: 0.0,
            angle_offset: 0.0,
            limits: [-std::f64::consts::PI, std::f64::consts::PI],
            vel_limit: 2.0,
            inertia: 1.0,
            damping: 1.0,
            gravity_torque: 0.0,
        }
    }

    pub fn min(&self) -> f64 {
        self.limits[0]
    }

    pub fn max(&self) -> f64 {
        self.limits[1]
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.limits[0], self.limits[1])
    }

    /// Rigid transform from this joint's frame to the next one at angle `q`.
    pub fn transform(&self, q: f64) -> Isometry3<f64> {
        let theta = q + self.angle_offset;
        let rz = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, self.link_offset),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta),
        );
        let rx = Isometry3::from_parts(
            Translation3::new(self.link_length, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.link_twist),
        );
        rz * rx
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let bad = |reason: &str| Err(Error::InvalidModel(format!("joints[{idx}]: {reason}")));
        let params = [
            self.link_length,
            self.link_twist,
            self.link_offset,
            self.angle_offset,
            self.gravity_torque,
        ];
        if params.iter().any(|v| !v.is_finite()) {
            return bad("non-finite link parameter");
        }
        let [lo, hi] = self.limits;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad("limits must be finite with min < max");
        }
        if !(self.vel_limit.is_finite() && self.vel_limit > 0.0) {
            return bad("vel_limit must be > 0");
        }
        if !(self.inertia.is_finite() && self.inertia > 0.0) {
            return bad("inertia must be > 0");
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return bad("damping must be >= 0");
        }
        Ok(())
    }
}

/// Which rows of the Jacobian a task constrains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpace {
    /// Position rows only (arms with fewer than six joints).
    Position,
    /// Position and orientation.
    Full,
}

impl TaskSpace {
    pub fn rows(self) -> usize {
        match self {
            TaskSpace::Position => 3,
            TaskSpace::Full => 6,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RobotModelFile {
    #[serde(default = "default_version")]
    version: u32,
    name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    description: String,
    joints: Vec<JointSpec>,
    #[serde(default = "default_gripper_range")]
    gripper_range: [f64; 2],
    #[serde(default)]
    presets: BTreeMap<String, JointVector>,
    #[serde(default, skip_serializing_if = "is_identity")]
    base: Pose,
}

fn default_version() -> u32 {
    1
}

fn default_gripper_range() -> [f64; 2] {
    [0.0, 1.0]
}

fn is_identity(p: &Pose) -> bool {
    *p == Pose::identity()
}

/// Kinematic and lumped-dynamic description of a serial arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RobotModelFile", into = "RobotModelFile")]
pub struct RobotModel {
    pub name: String,
    pub description: String,
    pub joints: Vec<JointSpec>,
    pub gripper_range: [f64; 2],
    pub presets: BTreeMap<String, JointVector>,
    /// Pose of the first joint frame in the world frame.
    pub base: Pose,
}

impl TryFrom<RobotModelFile> for RobotModel {
    type Error = Error;
    fn try_from(f: RobotModelFile) -> Result<Self> {
        check_version("robot config", f.version, ROBOT_SCHEMA_VERSION)?;
        let model = RobotModel {
            name: f.name,
            description: f.description,
            joints: f.joints,
            gripper_range: f.gripper_range,
            presets: f.presets,
            base: f.base,
        };
        model.validate()?;
        Ok(model)
    }
}

impl From<RobotModel> for RobotModelFile {
    fn from(m: RobotModel) -> Self {
        RobotModelFile {
            version: ROBOT_SCHEMA_VERSION,
            name: m.name,
            description: m.description,
            joints: m.joints,
            gripper_range: m.gripper_range,
            presets: m.presets,
            base: m.base,
        }
    }
}

/// Options for [`RobotModel::inverse_kinematics`].
#[derive(Clone, Debug, PartialEq)]
pub struct IkOptions {
    /// Position tolerance (m).
    pub pos_tol: f64,
    /// Orientation tolerance (rad).
    pub rot_tol: f64,
    pub max_iterations: usize,
    /// Damping factor λ of the least-squares update.
    pub damping: f64,
    /// `None` picks position-only for arms with fewer than six joints.
    pub task: Option<TaskSpace>,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            pos_tol: 1e-4,
            rot_tol: 1e-3,
            max_iterations: 200,
            damping: 0.05,
            task: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkResult {
    pub solution: JointVector,
    /// m
    pub position_error: f64,
    /// rad
    pub orientation_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RobotModel {
    pub fn new(name: impl Into<String>, joints: Vec<JointSpec>) -> Result<Self> {
        let model = RobotModel {
            name: name.into(),
            description: String::new(),
            joints,
            gripper_range: default_gripper_range(),
            presets: BTreeMap::new(),
            base: Pose::identity(),
        };
        model.validate()?;
        Ok(model)
    }

    /// The two-link planar test arm (link lengths 1.0 m and 0.5 m).
    pub fn planar_two_link() -> Self {
        Self::from_json(include_str!("../models/planar2.json")).expect("bundled planar2 model")
    }

    /// Approximate 6-DOF desktop arm; parameters are documentation-derived
    /// and uncalibrated.
    pub fn gen3lite_like() -> Self {
        Self::from_json(include_str!("../models/gen3lite_like.json"))
            .expect("bundled gen3lite-like model")
    }

    pub const BUILTIN_NAMES: [&'static str; 3] = ["planar2", "planar2-wall", "gen3lite-like"];

    /// Looks up one of the bundled models by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "planar2" => Some(Self::planar_two_link()),
            "gen3lite-like" => Some(Self::gen3lite_like()),
            "planar2-wall" => Some(crate::archetypes::archetype_model()),
            _ => None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn with_base(mut self, base: Pose) -> Self {
        self.base = base;
        self
    }

    pub fn with_preset(mut self, name: impl Into<String>, q: JointVector) -> Result<Self> {
        self.presets.insert(name.into(), q);
        self.validate()?;
        Ok(self)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidModel("at least one joint required".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            j.validate(i)?;
        }
        let [g0, g1] = self.gripper_range;
        if !(0.0..=1.0).contains(&g0) || !(0.0..=1.0).contains(&g1) || g0 > g1 {
            return Err(Error::InvalidModel(
                "gripper_range must lie within [0, 1] with min <= max".into(),
            ));
        }
        for (name, q) in &self.presets {
            if q.len() != self.dof() {
                return Err(Error::InvalidModel(format!(
                    "preset `{name}` has {} values, model has {} joints",
                    q.len(),
                    self.dof()
                )));
            }
            if !self.within_limits(q) {
                return Err(Error::InvalidModel(format!(
                    "preset `{name}` is outside the joint limits"
                )));
            }
        }
        Ok(())
    }

    pub fn check_dims(&self, q: &[f64]) -> Result<()> {
        if q.len() == self.dof() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            })
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof()
            && q.iter()
                .zip(&self.joints)
                .all(|(v, j)| v.is_finite() && *v >= j.min() && *v <= j.max())
    }

    pub fn clamp_to_limits(&self, q: &[f64]) -> JointVector {
        q.iter()
            .zip(&self.joints)
            .map(|(v, j)| j.clamp(*v))
            .collect::<Vec<_>>()
            .into()
    }

    pub fn vel_limits(&self) -> JointVector {
        self.joints
            .iter()
            .map(|j| j.vel_limit)
            .collect::<Vec<_>>()
            .into()
    }

    pub fn preset(&self, name: &str) -> Result<&JointVector> {
        self.presets
            .get(name)
            .ok_or_else(|| Error::UnknownPreset(name.to_string()))
    }

    /// Starting configuration: the `home` preset when present, otherwise
    /// zeros clamped into the limits.
    pub fn initial_configuration(&self) -> JointVector {
        match self.presets.get("home") {
            Some(q) => q.clone(),
            None => self.clamp_to_limits(&vec![0.0; self.dof()]),
        }
    }

    /// World-frame transforms of the base and of every joint frame; entry
    /// `i` is the frame joint `i` rotates in, the last entry is the
    /// end-effector frame.
    pub fn frames(&self, q: &[f64]) -> Result<Vec<Isometry3<f64>>> {
        self.check_dims(q)?;
        let mut frames = Vec::with_capacity(self.dof() + 1);
        let mut current = self.base.to_isometry();
        frames.push(current);
        for (joint, angle) in self.joints.iter().zip(q) {
            current *= joint.transform(*angle);
            frames.push(current);
        }
        Ok(frames)
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Pose> {
        let frames = self.frames(q)?;
        Ok(Pose::from_isometry(frames.last().expect("non-empty")))
    }

    /// Geometric Jacobian, 6×N: linear rows first, angular rows last.
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let frames = self.frames(q)?;
        let n = self.dof();
        let tip = frames[n].translation.vector;
        let mut jac = DMatrix::zeros(6, n);
        for (i, frame) in frames.iter().take(n).enumerate() {
            let axis = frame.rotation * Vector3::z();
            let origin = frame.translation.vector;
            let linear = axis.cross(&(tip - origin));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&linear);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
        }
        Ok(jac)
    }

    /// Task space used when a caller does not pick one.
    pub fn default_task(&self) -> TaskSpace {
        if self.dof() < 6 {
            TaskSpace::Position
        } else {
            TaskSpace::Full
        }
    }

    /// Yoshikawa manipulability: the product of the singular values of the
    /// task Jacobian (position rows for arms with fewer than six joints).
    /// Equals `sqrt(det(J Jᵀ))` when the task has no more rows than joints.
    pub fn manipulability(&self, q: &[f64]) -> Result<f64> {
        let jac = self.jacobian(q)?;
        Ok(manipulability_of(&task_rows(&jac, self.default_task())))
    }

    /// Damped-least-squares IK with per-step clamping to the joint limits.
    pub fn inverse_kinematics(
        &self,
        target: &Pose,
        seed: &[f64],
        opts: &IkOptions,
    ) -> Result<IkResult> {
        self.check_dims(seed)?;
        if !self.within_limits(seed) {
            return Err(Error::InvalidArgument(
                "IK seed outside the joint limits".into(),
            ));
        }
        let task = opts.task.unwrap_or_else(|| self.default_task());
        let rows = task.rows();
        let lambda2 = opts.damping * opts.damping;

        let mut q = JointVector(seed.to_vec());
        let mut best: Option<(f64, f64, JointVector)> = None;

        for iter in 0..=opts.max_iterations {
            let pose = self.forward_kinematics(&q)?;
            let pos_err_vec = target.position - pose.position;
            let rot_err_vec = (target.orientation * pose.orientation.inverse()).scaled_axis();
            let pos_err = pos_err_vec.norm();
            let rot_err = target.orientation_error(&pose);

            let better = match &best {
                None => true,
                Some((bp, br, _)) => score(pos_err, rot_err, task) < score(*bp, *br, task),
            };
            if better {
                best = Some((pos_err, rot_err, q.clone()));
            }

            let rot_ok = task == TaskSpace::Position || rot_err <= opts.rot_tol;
            if pos_err <= opts.pos_tol && rot_ok {
                return Ok(IkResult {
                    solution: q,
                    position_error: pos_err,
                    orientation_error: rot_err,
                    iterations: iter,
                    converged: true,
                });
            }
            if iter == opts.max_iterations {
                break;
            }

            let jac = task_rows(&self.jacobian(&q)?, task);
            let mut err = DVector::zeros(rows);
            err.fixed_rows_mut::<3>(0).copy_from(&pos_err_vec);
            if task == TaskSpace::Full {
                err.fixed_rows_mut::<3>(3).copy_from(&rot_err_vec);
            }
            let mut gram = &jac * jac.transpose();
            for k in 0..rows {
                gram[(k, k)] += lambda2;
            }
            let Some(chol) = gram.cholesky() else {
                break;
            };
            let dq = jac.transpose() * chol.solve(&err);
            for ((v, d), j) in q.iter_mut().zip(dq.iter()).zip(&self.joints) {
                *v = j.clamp(*v + d);
            }
        }

        let (pos_err, rot_err, solution) = best.expect("at least one iterate");
        let rot_bad = task == TaskSpace::Full && rot_err > 10.0 * opts.rot_tol;
        if pos_err > 10.0 * opts.pos_tol || rot_bad {
            return Err(Error::OutOfReach {
                position_error: pos_err,
                orientation_error: rot_err,
            });
        }
        Ok(IkResult {
            solution,
            position_error: pos_err,
            orientation_error: rot_err,
            iterations: opts.max_iterations,
            converged: false,
        })
    }

    /// Joint velocity realising `twist` (linear m/s then angular rad/s)
    /// through a damped pseudo-inverse of the task Jacobian. Damping is zero
    /// while the smallest singular value stays above `sigma_threshold` and
    /// rises smoothly to `max_damping` as it approaches zero.
    pub fn twist_to_joint_velocity(
        &self,
        q: &[f64],
        twist: &Vector6<f64>,
        sigma_threshold: f64,
        max_damping: f64,
    ) -> Result<JointVector> {
        let task = self.default_task();
        let jac = task_rows(&self.jacobian(q)?, task);
        let target = DVector::from_iterator(task.rows(), twist.iter().take(task.rows()).copied());
        let svd = jac.svd(true, true);
        let u = svd.u.as_ref().expect("u computed");
        let v_t = svd.v_t.as_ref().expect("v_t computed");
        let sigma_min = svd
            .singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let lambda2 = if sigma_min >= sigma_threshold {
            0.0
        } else {
            let r = sigma_min / sigma_threshold;
            max_damping * max_damping * (1.0 - r * r)
        };
        let mut dq = DVector::zeros(self.dof());
        for (k, sigma) in svd.singular_values.iter().enumerate() {
            let denom = sigma * sigma + lambda2;
            if denom <= f64::EPSILON {
                continue;
            }
            let coeff = sigma / denom * u.column(k).dot(&target);
            dq += v_t.row(k).transpose() * coeff;
        }
        Ok(dq.iter().copied().collect::<Vec<_>>().into())
    }
}

fn score(pos: f64, rot: f64, task: TaskSpace) -> f64 {
    match task {
        TaskSpace::Position => pos,
        TaskSpace::Full => pos + rot,
    }
}

/// The rows of a 6×N Jacobian that `task` constrains.
pub fn task_rows(jac: &DMatrix<f64>, task: TaskSpace) -> DMatrix<f64> {
    jac.rows(0, task.rows()).into_owned()
}

/// Product of the singular values of `jac`.
pub fn manipulability_of(jac: &DMatrix<f64>) -> f64 {
    jac.singular_values().iter().product::<f64>().max(0.0)
}
