//! Synthetic motion archetypes with known effort labels, used to check the
//! classifier. Each generator plans an end-effector path in the vertical
//! plane of a wall-mounted planar two-link arm, maps it to joint angles with
//! the closed-form elbow solution and returns a kinematic log (q = q_ref).

use std::f64::consts::FRAC_PI_2;

use nalgebra::{UnitQuaternion, Vector2, Vector3};

use crate::arm_model::{JointVector, Pose, RobotModel};
use crate::moa_metrics::{Flow, Spatial, Temporal, Weight};
use crate::trajlog::{LogRow, TrajectoryLog};

/// Archetype log sampling rate (Hz).
pub const ARCHETYPE_RATE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Archetype {
    /// Slow straight horizontal reach with a minimum-jerk profile.
    GentleDirect,
    /// Fast constant-speed zigzag with abrupt reversals.
    Darting,
    /// Downward fall in stop-and-go drops that grow in size.
    CollapsingHeavy,
}

/// Tonalities an archetype is generated to express.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Labels {
    pub spatial: Spatial,
    pub temporal: Temporal,
    pub weight: Weight,
    pub flow: Flow,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [
        Archetype::GentleDirect,
        Archetype::Darting,
        Archetype::CollapsingHeavy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::GentleDirect => "gentle-direct",
            Archetype::Darting => "darting",
            Archetype::CollapsingHeavy => "collapsing-heavy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn labels(self) -> Labels {
        match self {
            Archetype::GentleDirect => Labels {
                spatial: Spatial::Unidirectional,
                temporal: Temporal::Neutral,
                weight: Weight::Light,
                flow: Flow::Unhindered,
            },
            Archetype::Darting => Labels {
                spatial: Spatial::Multidirectional,
                temporal: Temporal::Neutral,
                weight: Weight::Strong,
                flow: Flow::Controlled,
            },
            Archetype::CollapsingHeavy => Labels {
                spatial: Spatial::Unidirectional,
                temporal: Temporal::Accelerated,
                weight: Weight::Heavy,
                flow: Flow::Controlled,
            },
        }
    }

    /// Path in the arm plane (horizontal, vertical), m, sampled at
    /// [`ARCHETYPE_RATE`].
    pub fn plane_path(self) -> Vec<Vector2<f64>> {
        let h = 1.0 / ARCHETYPE_RATE;
        match self {
            Archetype::GentleDirect => {
                let (a, b, t) = (Vector2::new(0.7, 0.4), Vector2::new(1.1, 0.4), 3.0);
                let n = (t * ARCHETYPE_RATE).round() as usize;
                (0..=n)
                    .map(|i| a + (b - a) * min_jerk(i as f64 * h / t))
                    .collect()
            }
            Archetype::Darting => {
                let centre = Vector2::new(1.0, 0.3);
                let waypoints = [
                    (0.0, 0.0),
                    (0.15, 0.1),
                    (-0.1, 0.12),
                    (0.12, -0.1),
                    (-0.15, -0.05),
                    (0.05, 0.15),
                    (0.1, -0.15),
                    (-0.12, 0.05),
                    (0.15, 0.02),
                    (-0.05, -0.14),
                    (0.0, 0.0),
                ]
                .map(|(x, y)| centre + Vector2::new(x, y));
                let speed = 0.8;
                let mut out = vec![waypoints[0]];
                let mut t = 0.0;
                let mut seg_start = 0.0;
                for w in waypoints.windows(2) {
                    let dur = (w[1] - w[0]).norm() / speed;
                    while t + h <= seg_start + dur + 1e-12 {
                        t += h;
                        let s = (t - seg_start) / dur;
                        out.push(w[0] + (w[1] - w[0]) * s);
                    }
                    seg_start += dur;
                }
                out
            }
            Archetype::CollapsingHeavy => {
                let start = Vector2::new(1.0, 0.5);
                let drops = [0.05, 0.1, 0.15, 0.2];
                let seg = 0.75;
                let per = (seg * ARCHETYPE_RATE).round() as usize;
                let mut out = vec![start];
                let mut z = start.y;
                for d in drops {
                    for i in 1..=per {
                        let s = min_jerk(i as f64 / per as f64);
                        out.push(Vector2::new(start.x, z - d * s));
                    }
                    z -= d;
                }
                out
            }
        }
    }

    /// Joint-space log on [`archetype_model`].
    pub fn log(self) -> TrajectoryLog {
        let path = self.plane_path();
        let mut log = TrajectoryLog::new(ARCHETYPE_RATE, self.name(), archetype_model().name);
        let qs: Vec<JointVector> = path.iter().map(|p| elbow_ik(*p)).collect();
        let h = 1.0 / ARCHETYPE_RATE;
        for (i, q) in qs.iter().enumerate() {
            let prev = &qs[i.saturating_sub(1)];
            let next = &qs[(i + 1).min(qs.len() - 1)];
            let span = ((i + 1).min(qs.len() - 1) - i.saturating_sub(1)) as f64 * h;
            let qd: Vec<f64> = next
                .iter()
                .zip(prev.iter())
                .map(|(a, b)| (a - b) / span)
                .collect();
            log.rows.push(LogRow {
                t: i as f64 * h,
                q_ref: q.clone(),
                q: q.clone(),
                qd: qd.into(),
                gripper: 0.0,
            });
        }
        log
    }
}

fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

/// The planar two-link arm mounted so its plane of motion is vertical:
/// the arm's local y axis points along world z. Named `planar2-wall`.
pub fn archetype_model() -> RobotModel {
    let base = Pose::new(
        Vector3::zeros(),
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2),
    );
    let mut m = RobotModel::planar_two_link().with_base(base);
    m.name = "planar2-wall".into();
    m.description = "planar2 mounted on a wall: motion in the world x-z plane".into();
    m
}

/// Closed-form elbow-up solution for the 1.0 m / 0.5 m planar arm.
fn elbow_ik(p: Vector2<f64>) -> JointVector {
    let (l1, l2) = (1.0, 0.5);
    let c2 = ((p.norm_squared() - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = -c2.acos();
    let q1 = p.y.atan2(p.x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    JointVector(vec![q1, q2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_log_reproduces_plane_path() {
        let model = archetype_model();
        for a in Archetype::ALL {
            let path = a.plane_path();
            let log = a.log();
            log.validate().unwrap();
            for (row, p) in log.rows.iter().zip(&path) {
                let x = model.forward_kinematics(&row.q).unwrap().position;
                assert!(
                    (x - Vector3::new(p.x, 0.0, p.y)).norm() < 1e-9,
                    "{}",
                    a.name()
                );
                assert!(model.within_limits(&row.q));
            }
        }
    }

    #[test]
    fn classifier_recovers_generation_labels() {
        let model = archetype_model();
        let cfg = crate::moa_metrics::MetricConfig::default();
        for a in Archetype::ALL {
            let p = crate::moa_metrics::compute_profile(&a.log(), &model, &cfg).unwrap();
            let c = crate::moa_metrics::classify(&p, &cfg);
            let got = Labels {
                spatial: c.spatial,
                temporal: c.temporal,
                weight: c.weight,
                flow: c.flow,
            };
            assert_eq!(got, a.labels(), "{}: {:?}", a.name(), p);
        }
    }
}
