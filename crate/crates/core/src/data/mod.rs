//! Labeled occupancy points and the ways they enter a run: CSV files,
//! converted LiDAR scans, synthetic maps, splits, partitions and replay.

mod lidar;
mod replay;
mod split;
pub mod synthetic;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lidar::{convert_scans, lidar_scan_to_points, read_scans, LidarScan};
pub use replay::{replay_draw, ReplayBuffer};
pub use split::{
    partition_dataset, split_train_test_verify, PartitionMode, RobotTagged, SplitMode, Splits,
};

/// Occupancy observation z = (x, y): a map coordinate and whether it is
/// occupied (1) or free (0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: [f64; 2],
    pub y: u8,
    /// Source robot when the data was recorded by several platforms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<usize>,
}

impl LabeledPoint {
    pub fn new(x: [f64; 2], y: u8) -> Self {
        Self { x, y, robot: None }
    }

    pub fn with_robot(x: [f64; 2], y: u8, robot: usize) -> Self {
        Self {
            x,
            y,
            robot: Some(robot),
        }
    }

    pub fn is_occupied(&self) -> bool {
        self.y == 1
    }
}

fn parse_label(field: &str) -> std::result::Result<u8, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("label {field:?} is not numeric"))?;
    if v == 1.0 {
        Ok(1)
    } else if v == 0.0 || v == -1.0 {
        Ok(0)
    } else {
        Err(format!("label {field:?} is not one of -1, 0, 1"))
    }
}

fn parse_coord(field: &str, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("{name} {field:?} is not numeric"))?;
    if !v.is_finite() {
        return Err(format!("{name} is not finite"));
    }
    Ok(v)
}

/// Reads `x,y,label[,robot]` rows. A first line that does not parse as
/// numbers is treated as a header. Labels −1 and 0 both map to free.
pub fn load_labeled_csv(path: impl AsRef<Path>) -> Result<Vec<LabeledPoint>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        if idx == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(format!("expected 3 or 4 columns, found {}", fields.len())));
        }
        let x = parse_coord(fields[0], "x").map_err(parse_err)?;
        let y = parse_coord(fields[1], "y").map_err(parse_err)?;
        let label = parse_label(fields[2]).map_err(parse_err)?;
        let robot = match fields.get(3) {
            Some(r) => Some(
                r.parse::<usize>()
                    .map_err(|_| parse_err(format!("robot id {r:?} is not an integer")))?,
            ),
            None => None,
        };
        points.push(LabeledPoint {
            x: [x, y],
            y: label,
            robot,
        });
    }
    Ok(points)
}

/// Writes points as `x,y,label` (plus `robot` when every point has one).
pub fn save_labeled_csv(path: impl AsRef<Path>, points: &[LabeledPoint]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_points(&mut w, points).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_points<W: Write>(w: &mut W, points: &[LabeledPoint]) -> std::io::Result<()> {
    let with_robot = !points.is_empty() && points.iter().all(|p| p.robot.is_some());
    if with_robot {
        writeln!(w, "x,y,label,robot")?;
    } else {
        writeln!(w, "x,y,label")?;
    }
    for p in points {
        match p.robot {
            Some(r) if with_robot => writeln!(w, "{},{},{},{}", p.x[0], p.x[1], p.y, r)?,
            _ => writeln!(w, "{},{},{}", p.x[0], p.x[1], p.y)?,
        }
    }
    w.flush()
}

/// Scalar regression sample: input coordinates and a target value.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    pub x: Vec<f64>,
    pub target: f64,
}

/// Reads rows whose last column is the target and the rest are inputs.
pub fn load_regression_csv(path: impl AsRef<Path>) -> Result<Vec<RegressionSample>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    let mut width = None;
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let values = rec
            .iter()
            .map(|f| parse_coord(f, "value"))
            .collect::<std::result::Result<Vec<f64>, String>>()
            .map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            })?;
        if values.len() < 2 || width.is_some_and(|w| w != values.len()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("unexpected column count {}", values.len()),
            });
        }
        width = Some(values.len());
        let (target, x) = values.split_last().expect("at least two columns");
        out.push(RegressionSample {
            x: x.to_vec(),
            target: *target,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_with_and_without_header() {
        let f = write_tmp("x,y,label\n0.5,1.0,1\n-2,3,-1\n4,4,0\n");
        let pts = load_labeled_csv(f.path()).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0], LabeledPoint::new([0.5, 1.0], 1));
        assert_eq!(pts[1].y, 0);
        assert_eq!(pts[2].y, 0);

        let f = write_tmp("1,2,1\n3,4,-1\n5,6,1\n");
        assert_eq!(load_labeled_csv(f.path()).unwrap().len(), 3);
    }

    #[test]
    fn csv_errors_report_line() {
        let f = write_tmp("x,y,label\n1,2,1\n1,abc,0\n");
        match load_labeled_csv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("1,2,7\n");
        assert!(matches!(load_labeled_csv(f.path()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            load_labeled_csv("/nonexistent/points.csv"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn csv_round_trip_with_robot() {
        let pts = vec![
            LabeledPoint::with_robot([0.25, -1.5], 1, 0),
            LabeledPoint::with_robot([3.0, 2.0], 0, 2),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        save_labeled_csv(&path, &pts).unwrap();
        assert_eq!(load_labeled_csv(&path).unwrap(), pts);
    }

    #[test]
    fn banana_file_has_5300_points() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/banana.csv");
        let pts = load_labeled_csv(path).unwrap();
        assert_eq!(pts.len(), 5300);
        assert_eq!(pts.iter().filter(|p| p.y == 1).count(), 2376);
    }

    #[test]
    fn regression_csv() {
        let f = write_tmp("x,t\n0.0,1.5\n2.0,-1\n");
        let s = load_regression_csv(f.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1], RegressionSample { x: vec![2.0], target: -1.0 });
    }
}
