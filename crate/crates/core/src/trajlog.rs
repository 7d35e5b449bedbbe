//! Time-stamped record of executed motion and its CSV + JSON-sidecar form.
//!
//! CSV columns: `t,q0..qN-1,ref0..refN-1,qd0..qdN-1,grip` (seconds, rad,
//! rad/s). Floats are written in shortest round-trip form, so reading a log
//! back yields bit-identical values.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arm_model::JointVector;
use crate::error::{check_version, Error, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub q_ref: JointVector,
    pub q: JointVector,
    pub qd: JointVector,
    pub gripper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    /// Hz
    pub rate: f64,
    pub sequence: String,
    pub model: String,
    pub rows: Vec<LogRow>,
}

/// Sidecar metadata written next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub version: u32,
    pub rate: f64,
    pub sequence: String,
    pub model: String,
    pub joints: usize,
    pub rows: usize,
}

impl TrajectoryLog {
    pub fn new(rate: f64, sequence: impl Into<String>, model: impl Into<String>) -> Self {
        TrajectoryLog {
            rate,
            sequence: sequence.into(),
            model: model.into(),
            rows: Vec::new(),
        }
    }

    pub fn joints(&self) -> usize {
        self.rows.first().map(|r| r.q.len()).unwrap_or(0)
    }

    pub fn duration(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn metadata(&self) -> LogMetadata {
        LogMetadata {
            version: LOG_SCHEMA_VERSION,
            rate: self.rate,
            sequence: self.sequence.clone(),
            model: self.model.clone(),
            joints: self.joints(),
            rows: self.rows.len(),
        }
    }

    /// Checks row widths and the uniform time grid.
    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::MalformedLog(format!("invalid rate {}", self.rate)));
        }
        let n = self.joints();
        for (k, row) in self.rows.iter().enumerate() {
            if row.q.len() != n || row.q_ref.len() != n || row.qd.len() != n {
                return Err(Error::MalformedLog(format!(
                    "row {k}: expected {n} joint values per column group"
                )));
            }
            let expected = self.rows[0].t + k as f64 / self.rate;
            if (row.t - expected).abs() > 1e-6 {
                return Err(Error::MalformedLog(format!(
                    "row {k}: timestamp {} off the {} Hz grid",
                    row.t, self.rate
                )));
            }
        }
        Ok(())
    }

    pub fn csv_header(joints: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..joints).map(|i| format!("q{i}")));
        h.extend((0..joints).map(|i| format!("ref{i}")));
        h.extend((0..joints).map(|i| format!("qd{i}")));
        h.push("grip".into());
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(self.joints()))
            .map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = Vec::with_capacity(2 + 3 * row.q.len());
            rec.push(fmt_f64(row.t));
            rec.extend(row.q.iter().map(|v| fmt_f64(*v)));
            rec.extend(row.q_ref.iter().map(|v| fmt_f64(*v)));
            rec.extend(row.qd.iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(row.gripper));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    /// Parses CSV rows. `rate` comes from the sidecar when available,
    /// otherwise it is inferred from the first two timestamps.
    pub fn read_csv<R: Read>(input: R, meta: Option<&LogMetadata>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 5 || !(header.len() - 2).is_multiple_of(3) {
            return Err(Error::MalformedLog(format!(
                "unexpected column count {}",
                header.len()
            )));
        }
        let n = (header.len() - 2) / 3;
        if header != Self::csv_header(n) {
            return Err(Error::MalformedLog(format!(
                "header must be `{}`",
                Self::csv_header(n).join(",")
            )));
        }
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::MalformedLog(format!("row {k}: bad number `{s}`")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != header.len() {
                return Err(Error::MalformedLog(format!("row {k}: wrong column count")));
            }
            rows.push(LogRow {
                t: vals[0],
                q: vals[1..1 + n].to_vec().into(),
                q_ref: vals[1 + n..1 + 2 * n].to_vec().into(),
                qd: vals[1 + 2 * n..1 + 3 * n].to_vec().into(),
                gripper: vals[1 + 3 * n],
            });
        }
        let (rate, sequence, model) = match meta {
            Some(m) => {
                check_version("trajectory log", m.version, LOG_SCHEMA_VERSION)?;
                if m.joints != n {
                    return Err(Error::MalformedLog(format!(
                        "sidecar says {} joints, CSV has {n}",
                        m.joints
                    )));
                }
                (m.rate, m.sequence.clone(), m.model.clone())
            }
            None => {
                let rate = match rows.as_slice() {
                    [a, b, ..] if b.t > a.t => 1.0 / (b.t - a.t),
                    _ => 100.0,
                };
                (rate, String::new(), String::new())
            }
        };
        let log = TrajectoryLog {
            rate,
            sequence,
            model,
            rows,
        };
        log.validate()?;
        Ok(log)
    }

    /// Sidecar path for a CSV path: `run.csv` → `run.meta.json`.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("meta.json")
    }

    /// Writes the CSV and its JSON sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let file = fs::File::create(csv_path)?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let meta = serde_json::to_string_pretty(&self.metadata())?;
        fs::write(Self::sidecar_path(csv_path), meta + "\n")?;
        Ok(())
    }

    /// Loads a CSV, using the sidecar next to it when present.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(csv_path);
        let meta = if side.exists() {
            Some(serde_json::from_str::<LogMetadata>(&fs::read_to_string(
                side,
            )?)?)
        } else {
            None
        };
        let file = fs::File::open(csv_path)?;
        Self::read_csv(std::io::BufReader::new(file), meta.as_ref())
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::MalformedLog(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> TrajectoryLog {
        let mut log = TrajectoryLog::new(100.0, "s", "planar2");
        for k in 0..4 {
            let t = k as f64 / 100.0;
            log.rows.push(LogRow {
                t,
                q_ref: vec![t, 0.1 + 1e-17].into(),
                q: vec![t * 0.3, -2.0 / 3.0].into(),
                qd: vec![1e-300, 0.0].into(),
                gripper: 0.5,
            });
        }
        log
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let log = sample_log();
        let csv = log.to_csv_string();
        assert!(csv.starts_with("t,q0,q1,ref0,ref1,qd0,qd1,grip\n"));
        let back = TrajectoryLog::read_csv(csv.as_bytes(), Some(&log.metadata())).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn rejects_bad_header() {
        let csv = "t,a,b,c,d\n0,0,0,0,0\n";
        assert!(TrajectoryLog::read_csv(csv.as_bytes(), None).is_err());
    }

    #[test]
    fn rejects_unknown_sidecar_version() {
        let log = sample_log();
        let mut meta = log.metadata();
        meta.version = 2;
        let err = TrajectoryLog::read_csv(log.to_csv_string().as_bytes(), Some(&meta)).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 2, .. }));
    }

    #[test]
    fn rate_inferred_without_sidecar() {
        let log = sample_log();
        let back = TrajectoryLog::read_csv(log.to_csv_string().as_bytes(), None).unwrap();
        assert!((back.rate - 100.0).abs() < 1e-9);
    }
}
