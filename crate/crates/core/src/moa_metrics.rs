//! Effort qualities of an executed motion: quantitative metrics over the
//! end-effector path, a rule-based tonality classifier, and the three-part
//! observation report (impressions, parameter analysis, meaning).
//!
//! Directness, path length and vertical drop use the raw FK path. Speed and
//! jerk are taken from a zero-phase low-pass copy of it, because triple
//! differentiation of sampled data is noise-dominated.

use std::fmt::{self, Write as _};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::arm_model::RobotModel;
use crate::error::{check_version, Error, Result};
use crate::trajlog::{fmt_f64, TrajectoryLog};

pub const METRIC_CONFIG_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

/// Every threshold and filter parameter of the analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub version: u32,
    /// Low-pass cutoff (Hz) applied before differentiation; `null` disables.
    pub filter_hz: Option<f64>,
    /// Speed mapped to weight index 1 (m/s).
    pub speed_ref: f64,
    /// Paths shorter than this (m) count as stationary.
    pub min_path: f64,
    /// World direction treated as up.
    pub up: [f64; 3],
    pub spatial_direct: f64,
    pub spatial_multi: f64,
    pub temporal_threshold: f64,
    pub weight_strong: f64,
    pub heavy_drop: f64,
    pub flow_ldj: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            version: METRIC_CONFIG_VERSION,
            filter_hz: Some(10.0),
            speed_ref: 1.0,
            min_path: 1e-6,
            up: [0.0, 0.0, 1.0],
            spatial_direct: 0.8,
            spatial_multi: 0.5,
            temporal_threshold: 0.2,
            weight_strong: 0.6,
            heavy_drop: 0.5,
            flow_ldj: -8.0,
        }
    }
}

impl MetricConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: MetricConfig = serde_json::from_str(s)?;
        check_version("metric config", cfg.version, METRIC_CONFIG_VERSION)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("metric config: {what}")));
        if let Some(f) = self.filter_hz {
            if !(f.is_finite() && f > 0.0) {
                return bad("filter_hz must be positive or null");
            }
        }
        if !(self.speed_ref.is_finite() && self.speed_ref > 0.0) {
            return bad("speed_ref must be positive");
        }
        if !(self.min_path.is_finite() && self.min_path >= 0.0) {
            return bad("min_path must be >= 0");
        }
        let up = Vector3::from(self.up);
        if !(up.iter().all(|v| v.is_finite()) && up.norm() > 0.0) {
            return bad("up must be a non-zero vector");
        }
        if self.spatial_multi > self.spatial_direct {
            return bad("spatial_multi must not exceed spatial_direct");
        }
        let all = [
            self.spatial_direct,
            self.spatial_multi,
            self.temporal_threshold,
            self.weight_strong,
            self.heavy_drop,
            self.flow_ldj,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("thresholds must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffortProfile {
    pub directness: f64,
    pub temporal_skew: f64,
    pub weight_index: f64,
    pub smoothness_ldj: f64,
    pub vertical_drop_ratio: f64,
    /// m
    pub path_length: f64,
    /// m/s
    pub peak_speed: f64,
    /// s
    pub duration: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spatial {
    Unidirectional,
    Multidirectional,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Temporal {
    Accelerated,
    Decelerated,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weight {
    Light,
    Strong,
    Heavy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flow {
    Controlled,
    Unhindered,
}

macro_rules! display_debug {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Debug::fmt(self, f)
            }
        }
    )*};
}
display_debug!(Spatial, Temporal, Weight, Flow);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TonalityClassification {
    pub spatial: Spatial,
    pub temporal: Temporal,
    pub weight: Weight,
    pub flow: Flow,
    pub thresholds_used: MetricConfig,
}

/// Tonalities the designer intended; unset dimensions are not checked.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntendedTonalities {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<Spatial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal: Option<Temporal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Weight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<Flow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InconsistencyFlag {
    pub tonality: String,
    pub intended: String,
    pub classified: String,
}

/// Identifies the analysed log inside a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub sequence: String,
    pub model: String,
    pub rate: f64,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoaReport {
    pub version: u32,
    pub log: LogSummary,
    /// Step 1: subjective impressions, user-supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impressions: Option<String>,
    /// Step 2: movement parameter analysis.
    pub profile: EffortProfile,
    pub classification: TonalityClassification,
    /// Step 3: construction of meaning, user-supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meaning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intended: Option<IntendedTonalities>,
    #[serde(default)]
    pub flags: Vec<InconsistencyFlag>,
}

/// Speed and jerk magnitude per sample, as used by the profile.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    pub t: Vec<f64>,
    pub speed: Vec<f64>,
    pub jerk: Vec<f64>,
}

impl MetricSeries {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("t,speed,jerk\n");
        for i in 0..self.t.len() {
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt_f64(self.t[i]),
                fmt_f64(self.speed[i]),
                fmt_f64(self.jerk[i])
            );
        }
        s
    }
}

/// End-effector positions of the actual joint trajectory.
pub fn end_effector_path(log: &TrajectoryLog, model: &RobotModel) -> Result<Vec<Vector3<f64>>> {
    log.rows
        .iter()
        .map(|r| model.forward_kinematics(&r.q).map(|p| p.position))
        .collect()
}

fn check_log(log: &TrajectoryLog) -> Result<()> {
    if log.rows.len() < 3 {
        return Err(Error::LogTooShort(log.rows.len()));
    }
    let duration = log.duration();
    if duration.is_nan() || duration <= 0.0 {
        return Err(Error::ZeroDuration);
    }
    Ok(())
}

pub fn compute_profile(
    log: &TrajectoryLog,
    model: &RobotModel,
    cfg: &MetricConfig,
) -> Result<EffortProfile> {
    check_log(log)?;
    let path = end_effector_path(log, model)?;
    profile_from_positions(&path, log.rate, cfg)
}

pub fn metric_series(
    log: &TrajectoryLog,
    model: &RobotModel,
    cfg: &MetricConfig,
) -> Result<MetricSeries> {
    check_log(log)?;
    let path = end_effector_path(log, model)?;
    let k = Kinematics::new(&path, log.rate, cfg)?;
    Ok(MetricSeries {
        t: log.rows.iter().map(|r| r.t).collect(),
        speed: k.speed,
        jerk: k.jerk.iter().map(|j| j.norm()).collect(),
    })
}

struct Kinematics {
    speed: Vec<f64>,
    jerk: Vec<Vector3<f64>>,
}

impl Kinematics {
    fn new(path: &[Vector3<f64>], rate: f64, cfg: &MetricConfig) -> Result<Self> {
        let h = 1.0 / rate;
        let smooth = match cfg.filter_hz {
            Some(fc) if fc < 0.5 * rate => filter_path(path, fc, rate),
            _ => path.to_vec(),
        };
        let speed = first_derivative(&smooth, h)
            .iter()
            .map(|v| v.norm())
            .collect();
        let jerk = third_derivative(&smooth, h);
        Ok(Kinematics { speed, jerk })
    }
}

/// Profile of a path sampled uniformly at `rate` Hz.
pub fn profile_from_positions(
    path: &[Vector3<f64>],
    rate: f64,
    cfg: &MetricConfig,
) -> Result<EffortProfile> {
    cfg.validate()?;
    if path.len() < 3 {
        return Err(Error::LogTooShort(path.len()));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid sample rate {rate}"
        )));
    }
    let n = path.len();
    let h = 1.0 / rate;
    let duration = (n - 1) as f64 * h;
    let length: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let k = Kinematics::new(path, rate, cfg)?;
    let peak_speed = k.speed.iter().copied().fold(0.0, f64::max);
    let weight_index = (peak_speed / cfg.speed_ref).clamp(0.0, 1.0);
    let temporal_skew = if peak_speed > 0.0 {
        (regression_slope(&k.speed, h) * duration / peak_speed).clamp(-1.0, 1.0)
    } else {
        0.0
    };

    if length < cfg.min_path {
        return Ok(EffortProfile {
            directness: 0.0,
            temporal_skew,
            weight_index,
            smoothness_ldj: 0.0,
            vertical_drop_ratio: 0.0,
            path_length: length,
            peak_speed,
            duration,
        });
    }

    let chord = (path[n - 1] - path[0]).norm();
    let directness = (chord / length).clamp(0.0, 1.0);
    let up = Vector3::from(cfg.up).normalize();
    let drop = (path[0] - path[n - 1]).dot(&up);
    let vertical_drop_ratio = (drop / length).clamp(-1.0, 1.0);

    let sq: Vec<f64> = k.jerk.iter().map(|j| j.norm_squared()).collect();
    let integral = trapezoid(&sq, h);
    let dimensionless =
        (duration.powi(5) / (length * length) * integral).max(MIN_DIMENSIONLESS_JERK);
    let smoothness_ldj = -dimensionless.ln();

    Ok(EffortProfile {
        directness,
        temporal_skew,
        weight_index,
        smoothness_ldj,
        vertical_drop_ratio,
        path_length: length,
        peak_speed,
        duration,
    })
}

/// Floor keeping the log-jerk finite for jerk-free (constant-velocity) paths.
pub const MIN_DIMENSIONLESS_JERK: f64 = 1e-12;

pub fn classify(profile: &EffortProfile, cfg: &MetricConfig) -> TonalityClassification {
    let spatial = if profile.directness >= cfg.spatial_direct {
        Spatial::Unidirectional
    } else if profile.directness <= cfg.spatial_multi {
        Spatial::Multidirectional
    } else {
        Spatial::Neutral
    };
    let temporal = if profile.temporal_skew >= cfg.temporal_threshold {
        Temporal::Accelerated
    } else if profile.temporal_skew <= -cfg.temporal_threshold {
        Temporal::Decelerated
    } else {
        Temporal::Neutral
    };
    let weight = if profile.weight_index >= cfg.weight_strong {
        Weight::Strong
    } else if profile.vertical_drop_ratio >= cfg.heavy_drop && profile.smoothness_ldj < cfg.flow_ldj
    {
        Weight::Heavy
    } else {
        Weight::Light
    };
    let flow = if profile.smoothness_ldj >= cfg.flow_ldj {
        Flow::Unhindered
    } else {
        Flow::Controlled
    };
    TonalityClassification {
        spatial,
        temporal,
        weight,
        flow,
        thresholds_used: cfg.clone(),
    }
}

pub fn build_report(
    log: LogSummary,
    profile: EffortProfile,
    classification: TonalityClassification,
    impressions: Option<String>,
    meaning: Option<String>,
    intended: Option<IntendedTonalities>,
) -> MoaReport {
    let mut flags = Vec::new();
    if let Some(i) = &intended {
        let mut check = |name: &str, want: Option<String>, got: String| {
            if let Some(want) = want {
                if want != got {
                    flags.push(InconsistencyFlag {
                        tonality: name.to_string(),
                        intended: want,
                        classified: got,
                    });
                }
            }
        };
        let c = &classification;
        check(
            "spatial",
            i.spatial.map(|v| v.to_string()),
            c.spatial.to_string(),
        );
        check(
            "temporal",
            i.temporal.map(|v| v.to_string()),
            c.temporal.to_string(),
        );
        check(
            "weight",
            i.weight.map(|v| v.to_string()),
            c.weight.to_string(),
        );
        check("flow", i.flow.map(|v| v.to_string()), c.flow.to_string());
    }
    MoaReport {
        version: REPORT_VERSION,
        log,
        impressions: impressions.filter(|s| !s.trim().is_empty()),
        profile,
        classification,
        meaning: meaning.filter(|s| !s.trim().is_empty()),
        intended,
        flags,
    }
}

/// Profile, classification and report for a log in one call.
pub fn analyze(
    log: &TrajectoryLog,
    model: &RobotModel,
    cfg: &MetricConfig,
    impressions: Option<String>,
    meaning: Option<String>,
    intended: Option<IntendedTonalities>,
) -> Result<MoaReport> {
    let profile = compute_profile(log, model, cfg)?;
    let classification = classify(&profile, cfg);
    let summary = LogSummary {
        sequence: log.sequence.clone(),
        model: log.model.clone(),
        rate: log.rate,
        rows: log.rows.len(),
    };
    Ok(build_report(
        summary,
        profile,
        classification,
        impressions,
        meaning,
        intended,
    ))
}

impl MoaReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: MoaReport = serde_json::from_str(s)?;
        check_version("report", r.version, REPORT_VERSION)?;
        Ok(r)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Movement analysis: sequence `{}` on `{}` ({} samples at {} Hz)",
            self.log.sequence, self.log.model, self.log.rows, self.log.rate
        );
        if let Some(text) = &self.impressions {
            let _ = writeln!(s, "\n1. Subjective impressions\n   {text}");
        }
        let p = &self.profile;
        let c = &self.classification;
        let _ = writeln!(s, "\n2. Movement parameter analysis");
        let _ = writeln!(s, "   duration            {:.3} s", p.duration);
        let _ = writeln!(s, "   path length         {:.4} m", p.path_length);
        let _ = writeln!(s, "   peak speed          {:.4} m/s", p.peak_speed);
        let _ = writeln!(
            s,
            "   directness          {:.4}  -> spatial: {}",
            p.directness, c.spatial
        );
        let _ = writeln!(
            s,
            "   temporal skew       {:+.4}  -> temporal: {}",
            p.temporal_skew, c.temporal
        );
        let _ = writeln!(
            s,
            "   weight index        {:.4}  (vertical drop {:+.4})  -> weight: {}",
            p.weight_index, p.vertical_drop_ratio, c.weight
        );
        let _ = writeln!(
            s,
            "   smoothness (LDJ)    {:.4}  -> flow: {}",
            p.smoothness_ldj, c.flow
        );
        if let Some(text) = &self.meaning {
            let _ = writeln!(s, "\n3. Construction of meaning\n   {text}");
        }
        if !self.flags.is_empty() {
            let _ = writeln!(s, "\nInconsistencies with the intended tonalities:");
            for f in &self.flags {
                let _ = writeln!(
                    s,
                    "   {}: intended {}, observed {}",
                    f.tonality, f.intended, f.classified
                );
            }
        }
        s
    }
}

fn regression_slope(y: &[f64], h: f64) -> f64 {
    let n = y.len() as f64;
    let t_mean = (y.len() - 1) as f64 * h / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dt = i as f64 * h - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn trapezoid(y: &[f64], h: f64) -> f64 {
    match y {
        [] | [_] => 0.0,
        [first, .., last] => h * (y.iter().sum::<f64>() - 0.5 * (first + last)),
    }
}

/// Second-order accurate first derivative: central inside, one-sided at the ends.
fn first_derivative(x: &[Vector3<f64>], h: f64) -> Vec<Vector3<f64>> {
    let n = x.len();
    let mut d = vec![Vector3::zeros(); n];
    if n < 3 {
        if n == 2 {
            d[0] = (x[1] - x[0]) / h;
            d[1] = d[0];
        }
        return d;
    }
    d[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * h);
    d[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (x[i + 1] - x[i - 1]) / (2.0 * h);
    }
    d
}

/// Third derivative: five-point central differences inside, second-order
/// one-sided five-point stencils for the two samples at each end.
fn third_derivative(x: &[Vector3<f64>], h: f64) -> Vec<Vector3<f64>> {
    let n = x.len();
    let h3 = h * h * h;
    if n < 4 {
        return vec![Vector3::zeros(); n];
    }
    if n == 4 {
        let j = (x[3] - 3.0 * x[2] + 3.0 * x[1] - x[0]) / h3;
        return vec![j; n];
    }
    let mut d = vec![Vector3::zeros(); n];
    let fwd = |i: usize| {
        (-5.0 * x[i] + 18.0 * x[i + 1] - 24.0 * x[i + 2] + 14.0 * x[i + 3] - 3.0 * x[i + 4])
            / (2.0 * h3)
    };
    let bwd = |i: usize| {
        (5.0 * x[i] - 18.0 * x[i - 1] + 24.0 * x[i - 2] - 14.0 * x[i - 3] + 3.0 * x[i - 4])
            / (2.0 * h3)
    };
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (x[i + 2] - 2.0 * x[i + 1] + 2.0 * x[i - 1] - x[i - 2]) / (2.0 * h3)
        } else if i < 2 {
            // with five samples the second one has no stencil of its own
            fwd(i.min(n - 5))
        } else {
            bwd(i.max(4))
        };
    }
    d
}

/// Second-order Butterworth low-pass section (bilinear transform,
/// pre-warped cutoff), direct form II transposed.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff: f64, rate: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff / rate).tan();
        let s2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + s2 * k + k * k);
        let b0 = k * k * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - s2 * k + k * k) * norm],
        }
    }

    /// Runs the filter with state initialised to the steady state of a
    /// constant input equal to the first sample.
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let x0 = x.first().copied().unwrap_or(0.0);
        let mut z1 = x0 * (1.0 - b0);
        let mut z2 = x0 * (b2 - a2);
        x.iter()
            .map(|&v| {
                let y = b0 * v + z1;
                z1 = b1 * v - a1 * y + z2;
                z2 = b2 * v - a2 * y;
                y
            })
            .collect()
    }

    fn forward_backward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.run(x);
        y.reverse();
        let mut y = self.run(&y);
        y.reverse();
        y
    }
}

/// Zero-phase low-pass of one signal. Both pass orders are averaged so the
/// result commutes exactly with time reversal; the ends are padded by odd
/// reflection to suppress start-up transients.
pub fn zero_phase_lowpass(x: &[f64], cutoff: f64, rate: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let f = Biquad::lowpass(cutoff, rate);
    let pad = ((10.0 * rate / cutoff).ceil() as usize).max(9).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let fb = f.forward_backward(&ext);
    let mut rev = ext.clone();
    rev.reverse();
    let mut bf = f.forward_backward(&rev);
    bf.reverse();
    fb[pad..pad + n]
        .iter()
        .zip(&bf[pad..pad + n])
        .map(|(a, b)| 0.5 * (a + b))
        .collect()
}

fn filter_path(path: &[Vector3<f64>], cutoff: f64, rate: f64) -> Vec<Vector3<f64>> {
    let axes: Vec<Vec<f64>> = (0..3)
        .map(|k| {
            let col: Vec<f64> = path.iter().map(|p| p[k]).collect();
            zero_phase_lowpass(&col, cutoff, rate)
        })
        .collect();
    (0..path.len())
        .map(|i| Vector3::new(axes[0][i], axes[1][i], axes[2][i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize, rate: f64, speed: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| Vector3::new(speed * i as f64 / rate, 0.0, 0.0))
            .collect()
    }

    fn min_jerk(n: usize, length: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let p = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
                Vector3::new(length * p, 0.0, 0.0)
            })
            .collect()
    }

    #[test]
    fn straight_line_is_direct_and_even() {
        let cfg = MetricConfig::default();
        let p = profile_from_positions(&line(201, 100.0, 0.2), 100.0, &cfg).unwrap();
        assert!((p.directness - 1.0).abs() < 1e-12);
        assert!(p.temporal_skew.abs() < 1e-9);
        assert!(p.smoothness_ldj.is_finite());
    }

    #[test]
    fn semicircle_directness() {
        let n = 301;
        let path: Vec<_> = (0..n)
            .map(|i| {
                let a = PI * i as f64 / (n - 1) as f64;
                Vector3::new(0.3 * a.cos(), 0.3 * a.sin(), 0.0)
            })
            .collect();
        let p = profile_from_positions(&path, 100.0, &MetricConfig::default()).unwrap();
        assert!((p.directness - 2.0 / PI).abs() < 1e-3);
    }

    #[test]
    fn closed_loop_directness_zero() {
        let n = 201;
        let path: Vec<_> = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / (n - 1) as f64;
                Vector3::new(0.2 * a.cos(), 0.2 * a.sin(), 0.0)
            })
            .collect();
        let p = profile_from_positions(&path, 100.0, &MetricConfig::default()).unwrap();
        assert!(p.directness < 1e-12);
    }

    #[test]
    fn min_jerk_log_dimensionless_jerk() {
        let p =
            profile_from_positions(&min_jerk(201, 0.4), 100.0, &MetricConfig::default()).unwrap();
        assert!(
            (p.smoothness_ldj + 720f64.ln()).abs() < 0.05,
            "{}",
            p.smoothness_ldj
        );
    }

    #[test]
    fn filter_passes_constant_and_ramp() {
        let c = vec![3.5; 50];
        for v in zero_phase_lowpass(&c, 10.0, 100.0) {
            assert!((v - 3.5).abs() < 1e-12);
        }
        let r: Vec<f64> = (0..200).map(|i| 0.1 * i as f64).collect();
        for (a, b) in zero_phase_lowpass(&r, 10.0, 100.0).iter().zip(&r) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn classify_boundaries_go_to_stronger_category() {
        let cfg = MetricConfig::default();
        let p = EffortProfile {
            directness: 0.8,
            temporal_skew: 0.2,
            weight_index: 0.6,
            smoothness_ldj: -8.0,
            vertical_drop_ratio: 0.5,
            path_length: 1.0,
            peak_speed: 0.6,
            duration: 1.0,
        };
        let c = classify(&p, &cfg);
        assert_eq!(c.spatial, Spatial::Unidirectional);
        assert_eq!(c.temporal, Temporal::Accelerated);
        assert_eq!(c.weight, Weight::Strong);
        assert_eq!(c.flow, Flow::Unhindered);
        let p2 = EffortProfile {
            directness: 0.5,
            temporal_skew: -0.2,
            ..p
        };
        let c2 = classify(&p2, &cfg);
        assert_eq!(c2.spatial, Spatial::Multidirectional);
        assert_eq!(c2.temporal, Temporal::Decelerated);
    }

    #[test]
    fn gentle_profile_example() {
        let p = EffortProfile {
            directness: 1.0,
            temporal_skew: 0.0,
            weight_index: 0.1,
            smoothness_ldj: -6.6,
            vertical_drop_ratio: 0.0,
            path_length: 0.4,
            peak_speed: 0.1,
            duration: 3.0,
        };
        let c = classify(&p, &MetricConfig::default());
        assert_eq!(
            (c.spatial, c.temporal, c.weight, c.flow),
            (
                Spatial::Unidirectional,
                Temporal::Neutral,
                Weight::Light,
                Flow::Unhindered
            )
        );
    }

    #[test]
    fn report_flags_and_steps() {
        let cfg = MetricConfig::default();
        let p = profile_from_positions(&line(101, 100.0, 0.1), 100.0, &cfg).unwrap();
        let c = classify(&p, &cfg);
        let summary = LogSummary {
            sequence: "s".into(),
            model: "m".into(),
            rate: 100.0,
            rows: 101,
        };
        let r = build_report(summary.clone(), p, c.clone(), None, None, None);
        assert!(r.flags.is_empty());
        let text = r.render_text();
        assert!(text.contains("2. Movement parameter analysis"));
        assert!(!text.contains("1. Subjective"));
        assert!(!text.contains("3. Construction"));

        let wrong = IntendedTonalities {
            spatial: Some(Spatial::Multidirectional),
            ..Default::default()
        };
        let r = build_report(summary.clone(), p, c.clone(), None, None, Some(wrong));
        assert_eq!(r.flags.len(), 1);
        assert_eq!(r.flags[0].tonality, "spatial");

        let right = IntendedTonalities {
            spatial: Some(c.spatial),
            temporal: Some(c.temporal),
            weight: Some(c.weight),
            flow: Some(c.flow),
        };
        let r = build_report(
            summary,
            p,
            c,
            Some("soft".into()),
            Some("calm".into()),
            Some(right),
        );
        assert!(r.flags.is_empty());
        let back = MoaReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn short_paths_get_exact_cubic_jerk() {
        // x = t^3 has constant third derivative 6 at every length
        for n in 3..9 {
            let h = 0.01;
            let x: Vec<_> = (0..n)
                .map(|i| Vector3::new((i as f64 * h).powi(3), 0.0, 0.0))
                .collect();
            let j = third_derivative(&x, h);
            assert_eq!(j.len(), n);
            if n >= 4 {
                assert!(j.iter().all(|v| (v.x - 6.0).abs() < 1e-6), "n={n}: {j:?}");
            }
        }
    }

    #[test]
    fn too_short_and_zero_duration() {
        let mut log = TrajectoryLog::new(100.0, "s", "planar2");
        let m = RobotModel::planar_two_link();
        let cfg = MetricConfig::default();
        for k in 0..2 {
            log.rows.push(crate::trajlog::LogRow {
                t: k as f64 / 100.0,
                q_ref: vec![0.0, 0.0].into(),
                q: vec![0.0, 0.0].into(),
                qd: vec![0.0, 0.0].into(),
                gripper: 0.0,
            });
        }
        assert_eq!(compute_profile(&log, &m, &cfg), Err(Error::LogTooShort(2)));
        let mut flat = log.clone();
        flat.rows.push(flat.rows[0].clone());
        for r in flat.rows.iter_mut() {
            r.t = 0.0;
        }
        assert_eq!(compute_profile(&flat, &m, &cfg), Err(Error::ZeroDuration));
    }

    #[test]
    fn config_round_trip_and_rejection() {
        let cfg = MetricConfig::default();
        assert_eq!(MetricConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(MetricConfig::from_json("{}").unwrap(), cfg);
        assert!(matches!(
            MetricConfig::from_json(r#"{"version": 9}"#),
            Err(Error::UnsupportedVersion { .. })
        ));
        assert!(MetricConfig::from_json(r#"{"speed_reff": 1}"#).is_err());
    }
}
