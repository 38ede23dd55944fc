//! JSON Lines log formats and helpers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::conflict::Warning;
use crate::error::{Error, Result};
use crate::geometry::{ObjectClass, Timestamp, Vec2};

/// Ground-truth position in the world frame. Id 0 is the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t: Timestamp,
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

impl TruthRecord {
    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

pub const EGO_TRUTH_ID: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningRecord {
    pub t: f64,
    pub id: u64,
    pub class: ObjectClass,
    pub severity: String,
    pub direction: String,
    pub utterance: String,
    pub t_veh: f64,
    pub s: f64,
}

impl From<&Warning> for WarningRecord {
    fn from(w: &Warning) -> Self {
        WarningRecord {
            t: w.t_issued.secs(),
            id: w.track_id,
            class: w.class,
            severity: w.severity.as_str().to_owned(),
            direction: w.direction.as_str().to_owned(),
            utterance: w.utterance.clone(),
            t_veh: w.conflict.t_veh,
            s: w.conflict.s_intercept,
        }
    }
}

/// Parses JSON Lines, skipping blank lines. Errors carry the 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl Read) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::MalformedLog {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(File::open(path)?)
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("log records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Checks that timestamps never decrease.
pub fn check_time_order<T>(records: &[T], t: impl Fn(&T) -> f64) -> Result<()> {
    for w in records.windows(2) {
        let (a, b) = (t(&w[0]), t(&w[1]));
        if b < a {
            return Err(Error::NonMonotonicTime { prev: a, next: b });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Detection;

    #[test]
    fn malformed_line_reports_number() {
        let text = "{\"t\":0.0,\"id\":1,\"x\":1.0,\"y\":2.0}\n\nnot json\n";
        let err = parse_jsonl::<TruthRecord>(text.as_bytes()).unwrap_err();
        match err {
            Error::MalformedLog { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detections_parse() {
        let text = r#"{"t":0.0,"id":4,"class":"pedestrian","x":20.0,"y":-3.0}"#;
        let d: Vec<Detection> = parse_jsonl(text.as_bytes()).unwrap();
        assert_eq!(d[0].track_id, 4);
        assert_eq!(d[0].class, ObjectClass::Pedestrian);
    }

    #[test]
    fn warning_record_has_exact_fields() {
        let rec = WarningRecord {
            t: 1.5,
            id: 2,
            class: ObjectClass::Pedestrian,
            severity: "early".into(),
            direction: "left".into(),
            utterance: "Watch out for the pedestrian on the left".into(),
            t_veh: 3.2,
            s: 21.0,
        };
        let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(
            sorted,
            ["class", "direction", "id", "s", "severity", "t", "t_veh", "utterance"]
        );
    }

    #[test]
    fn time_order_check() {
        assert!(check_time_order(&[0.0, 0.5, 0.5, 1.0], |t| *t).is_ok());
        assert!(check_time_order(&[0.0, 0.5, 0.4], |t| *t).is_err());
    }
}
