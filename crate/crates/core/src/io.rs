//! Dataset files: trajectory JSON Lines, split manifests and content hashes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, TransportMode, Trajectory};

/// One line of a trajectory dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub id: String,
    pub mode: String,
    pub departure_bin: i64,
    pub od: [i64; 2],
    pub points: Vec<[f64; 3]>,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            id: t.id.clone(),
            mode: t.mode.as_str().to_string(),
            departure_bin: i64::from(t.departure_bin),
            od: [i64::from(t.od_zone.0), i64::from(t.od_zone.1)],
            points: t.points.iter().map(|p| [p.lat, p.lon, p.t]).collect(),
        }
    }
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = Error;

    fn try_from(r: TrajectoryRecord) -> Result<Self> {
        let mode: TransportMode = r.mode.parse()?;
        let departure_bin = u16::try_from(r.departure_bin)
            .map_err(|_| Error::InvalidTrajectory(format!("departure bin {}", r.departure_bin)))?;
        let zone = |z: i64| {
            u32::try_from(z).map_err(|_| Error::InvalidTrajectory(format!("zone id {z}")))
        };
        let od_zone = (zone(r.od[0])?, zone(r.od[1])?);
        let points = r
            .points
            .into_iter()
            .map(|[lat, lon, t]| GeoPoint { lat, lon, t })
            .collect();
        Trajectory::new(r.id, points, mode, departure_bin, od_zone)
    }
}

pub fn trajectory_to_json(t: &Trajectory) -> Result<String> {
    Ok(serde_json::to_string(&TrajectoryRecord::from(t))?)
}

/// Parses JSONL text. Errors carry the 1-based line number.
pub fn parse_jsonl(text: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(t) = parse_line(line, i + 1)? {
            out.push(t);
        }
    }
    Ok(out)
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<Trajectory>> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let record: TrajectoryRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        msg: e.to_string(),
    })?;
    Trajectory::try_from(record)
        .map(Some)
        .map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        if let Some(t) = parse_line(&line?, i + 1)? {
            out.push(t);
        }
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in trajectories {
        t.validate()?;
        writeln!(w, "{}", trajectory_to_json(t)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Train/validation/test partition by trajectory id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Partitions `ids` in the given order: the first 80% train, the next
    /// 10% validation, the rest test.
    pub fn from_ordered_ids(ids: Vec<String>) -> Self {
        let n = ids.len();
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        let mut it = ids.into_iter();
        let train = it.by_ref().take(n_train).collect();
        let val = it.by_ref().take(n_val).collect();
        let test = it.collect();
        Self { train, val, test }
    }

    /// Selects the trajectories of each split, preserving dataset order.
    pub fn partition<'a>(
        &self,
        data: &'a [Trajectory],
    ) -> (Vec<&'a Trajectory>, Vec<&'a Trajectory>, Vec<&'a Trajectory>) {
        use std::collections::HashSet;
        let train: HashSet<&str> = self.train.iter().map(String::as_str).collect();
        let val: HashSet<&str> = self.val.iter().map(String::as_str).collect();
        let test: HashSet<&str> = self.test.iter().map(String::as_str).collect();
        let pick = |set: &HashSet<&str>| data.iter().filter(|t| set.contains(t.id.as_str())).collect();
        (pick(&train), pick(&val), pick(&test))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Fails with [`Error::HashMismatch`] when the file content differs from `expected`.
pub fn verify_hash(path: &Path, expected: &str) -> Result<()> {
    let found = sha256_file(path)?;
    if found != expected {
        return Err(Error::HashMismatch {
            path: path.display().to_string(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"a1","mode":"WALK","departure_bin":12,"od":[3,4],"points":[[35.0,139.0,0.0],[35.001,139.001,60.0]]}"#;

    #[test]
    fn parses_valid_record() {
        let v = parse_jsonl(GOOD).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].mode, TransportMode::Walk);
        assert_eq!(v[0].od_zone, (3, 4));
        let again = parse_jsonl(&trajectory_to_json(&v[0]).unwrap()).unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn rejects_invariant_violations_with_line_numbers() {
        let bad_time = r#"{"id":"b","mode":"CAR","departure_bin":1,"od":[0,0],"points":[[35.0,139.0,10.0],[35.0,139.0,5.0]]}"#;
        let text = format!("{GOOD}\n\n{bad_time}\n");
        match parse_jsonl(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_bin = r#"{"id":"b","mode":"CAR","departure_bin":288,"od":[0,0],"points":[[35.0,139.0,0.0],[35.0,139.0,5.0]]}"#;
        assert!(matches!(parse_jsonl(bad_bin), Err(Error::Parse { line: 1, .. })));
        let bad_mode = GOOD.replace("WALK", "BOAT");
        assert!(matches!(parse_jsonl(&bad_mode), Err(Error::Parse { line: 1, .. })));
        let one_point = r#"{"id":"b","mode":"CAR","departure_bin":1,"od":[0,0],"points":[[35.0,139.0,0.0]]}"#;
        assert!(parse_jsonl(one_point).is_err());
        let neg_zone = GOOD.replace("[3,4]", "[-1,4]");
        assert!(parse_jsonl(&neg_zone).is_err());
    }

    #[test]
    fn split_sizes() {
        let ids: Vec<String> = (0..1000).map(|i| i.to_string()).collect();
        let s = SplitManifest::from_ordered_ids(ids);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (800, 100, 100));
    }

    #[test]
    fn detects_corrupted_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, GOOD).unwrap();
        let h = sha256_file(&p).unwrap();
        verify_hash(&p, &h).unwrap();
        fs::write(&p, GOOD.replace("a1", "a2")).unwrap();
        assert!(matches!(verify_hash(&p, &h), Err(Error::HashMismatch { .. })));
    }
}
