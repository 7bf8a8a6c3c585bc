use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledPoint;
use crate::error::{Error, Result};

/// One range scan taken from a known pose. Stored as one JSON object per
/// line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarScan {
    /// (px, py, heading) in meters and radians.
    pub pose: [f64; 3],
    pub angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub max_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<usize>,
}

impl LidarScan {
    pub fn validate(&self) -> Result<()> {
        if self.angles.len() != self.ranges.len() {
            return Err(Error::DimensionMismatch {
                context: "scan ranges",
                expected: self.angles.len(),
                found: self.ranges.len(),
            });
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "max_range must be positive, got {}",
                self.max_range
            )));
        }
        if self.pose.iter().chain(&self.angles).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scan pose or angles not finite".into()));
        }
        Ok(())
    }
}

/// Splits every beam into free samples along the ray and, for beams that
/// returned before `max_range - hit_epsilon`, one occupied endpoint.
///
/// Zero, negative and non-finite ranges are skipped; ranges beyond
/// `max_range` are clipped to it.
pub fn lidar_scan_to_points(
    scan: &LidarScan,
    n_free_per_ray: usize,
    hit_epsilon: f64,
) -> Result<Vec<LabeledPoint>> {
    scan.validate()?;
    if n_free_per_ray == 0 {
        return Err(Error::InvalidArgument("n_free_per_ray must be at least 1".into()));
    }
    if !(hit_epsilon >= 0.0) {
        return Err(Error::InvalidArgument("hit_epsilon must be non-negative".into()));
    }
    let [px, py, heading] = scan.pose;
    let label = |x: [f64; 2], y: u8| LabeledPoint {
        x,
        y,
        robot: scan.robot,
    };
    let mut out = Vec::with_capacity(scan.ranges.len() * (n_free_per_ray + 1));
    for (&angle, &range) in scan.angles.iter().zip(&scan.ranges) {
        if !(range.is_finite() && range > 0.0) {
            continue;
        }
        let r = range.min(scan.max_range);
        let (s, c) = (heading + angle).sin_cos();
        for k in 1..=n_free_per_ray {
            let d = r * k as f64 / (n_free_per_ray + 1) as f64;
            out.push(label([px + d * c, py + d * s], 0));
        }
        if r < scan.max_range - hit_epsilon {
            out.push(label([px + r * c, py + r * s], 1));
        }
    }
    Ok(out)
}

/// Reads a JSON-lines scan file.
pub fn read_scans(path: impl AsRef<Path>) -> Result<Vec<LidarScan>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut scans = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scan: LidarScan = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        scans.push(scan);
    }
    Ok(scans)
}

/// Streams a scan file into a points CSV, one scan at a time. Returns the
/// number of points written.
pub fn convert_scans(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    n_free_per_ray: usize,
    hit_epsilon: f64,
) -> Result<usize> {
    let (input, output) = (input.as_ref(), output.as_ref());
    let file = File::open(input).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(input.to_path_buf())
        } else {
            Error::io(input, e)
        }
    })?;
    let out = File::create(output).map_err(|e| Error::io(output, e))?;
    let mut w = BufWriter::new(out);
    let io_err = |e| Error::io(output, e);
    let mut header_written = false;
    let mut count = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scan: LidarScan = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: input.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !header_written {
            let header = if scan.robot.is_some() { "x,y,label,robot" } else { "x,y,label" };
            writeln!(w, "{header}").map_err(io_err)?;
            header_written = true;
        }
        for p in lidar_scan_to_points(&scan, n_free_per_ray, hit_epsilon)? {
            match p.robot {
                Some(r) => writeln!(w, "{},{},{},{}", p.x[0], p.x[1], p.y, r),
                None => writeln!(w, "{},{},{}", p.x[0], p.x[1], p.y),
            }
            .map_err(io_err)?;
            count += 1;
        }
    }
    if !header_written {
        writeln!(w, "x,y,label").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scan(pose: [f64; 3], angles: Vec<f64>, ranges: Vec<f64>, max_range: f64) -> LidarScan {
        LidarScan {
            pose,
            angles,
            ranges,
            max_range,
            robot: None,
        }
    }

    #[test]
    fn axis_aligned_beam() {
        let pts = lidar_scan_to_points(&scan([0.0; 3], vec![0.0], vec![4.0], 10.0), 3, 0.0).unwrap();
        let expected = [([1.0, 0.0], 0), ([2.0, 0.0], 0), ([3.0, 0.0], 0), ([4.0, 0.0], 1)];
        assert_eq!(pts.len(), 4);
        for (p, (x, y)) in pts.iter().zip(expected) {
            assert_eq!(p.x, x);
            assert_eq!(p.y, y);
        }
    }

    #[test]
    fn max_range_beam_is_free_only() {
        let pts = lidar_scan_to_points(&scan([0.0; 3], vec![0.3], vec![5.0], 5.0), 4, 0.0).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| p.y == 0));
        // within hit_epsilon of max range also counts as no return
        let pts = lidar_scan_to_points(&scan([0.0; 3], vec![0.3], vec![4.95], 5.0), 4, 0.1).unwrap();
        assert!(pts.iter().all(|p| p.y == 0));
    }

    #[test]
    fn rotated_pose() {
        let s = scan([0.0, 0.0, std::f64::consts::FRAC_PI_2], vec![0.0], vec![2.0], 10.0);
        let pts = lidar_scan_to_points(&s, 1, 0.0).unwrap();
        let hit = pts.last().unwrap();
        assert_eq!(hit.y, 1);
        // hand-applied rotation [[c, -s], [s, c]] with c = 0, s = 1 on (2, 0)
        assert!((hit.x[0] - 0.0).abs() < 1e-12);
        assert!((hit.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_and_invalid_ranges_skipped() {
        let s = scan([1.0, 1.0, 0.0], vec![0.0, 1.0, 2.0], vec![0.0, f64::NAN, 1.0], 3.0);
        assert_eq!(lidar_scan_to_points(&s, 2, 0.0).unwrap().len(), 3);
        let bad = scan([0.0; 3], vec![0.0, 1.0], vec![1.0], 3.0);
        assert!(lidar_scan_to_points(&bad, 2, 0.0).is_err());
        assert!(lidar_scan_to_points(&scan([0.0; 3], vec![0.0], vec![1.0], 3.0), 0, 0.0).is_err());
    }

    #[test]
    fn convert_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("scans.jsonl");
        let s1 = scan([0.0, 0.0, 0.0], vec![0.0, 0.5], vec![2.0, 8.0], 8.0);
        let s2 = scan([1.0, -1.0, 1.0], vec![-0.5], vec![3.0], 8.0);
        let body = format!(
            "{}\n\n{}\n",
            serde_json::to_string(&s1).unwrap(),
            serde_json::to_string(&s2).unwrap()
        );
        std::fs::write(&input, body).unwrap();
        assert_eq!(read_scans(&input).unwrap(), vec![s1.clone(), s2.clone()]);

        let output = dir.path().join("points.csv");
        let n = convert_scans(&input, &output, 4, 0.0).unwrap();
        let direct: Vec<_> = [s1, s2]
            .iter()
            .flat_map(|s| lidar_scan_to_points(s, 4, 0.0).unwrap())
            .collect();
        assert_eq!(n, direct.len());
        let loaded = super::super::load_labeled_csv(&output).unwrap();
        assert_eq!(loaded.len(), direct.len());
        for (a, b) in loaded.iter().zip(&direct) {
            assert_eq!(a.y, b.y);
            assert!((a.x[0] - b.x[0]).abs() < 1e-12 && (a.x[1] - b.x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_json_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("scans.jsonl");
        std::fs::write(&input, "{\"pose\":[0,0,0],\"angles\":[],\"ranges\":[],\"max_range\":1}\nnot json\n")
            .unwrap();
        assert!(matches!(read_scans(&input), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn points_per_beam_and_free_inside_segment(
            px in -5.0..5.0f64, py in -5.0..5.0f64, th in -3.2..3.2f64,
            beams in prop::collection::vec((-3.2..3.2f64, 0.01..12.0f64), 1..20),
            n_free in 1usize..8,
        ) {
            let max_range = 10.0;
            let (angles, ranges): (Vec<_>, Vec<_>) = beams.iter().cloned().unzip();
            let s = scan([px, py, th], angles, ranges.clone(), max_range);
            let pts = lidar_scan_to_points(&s, n_free, 0.0).unwrap();
            let expected: usize = ranges
                .iter()
                .map(|&r| n_free + usize::from(r.min(max_range) < max_range))
                .sum();
            prop_assert_eq!(pts.len(), expected);

            let mut it = pts.iter();
            for (&a, &r) in s.angles.iter().zip(&ranges) {
                let r = r.min(max_range);
                let end = [px + r * (th + a).cos(), py + r * (th + a).sin()];
                for _ in 0..n_free {
                    let p = it.next().unwrap();
                    prop_assert_eq!(p.y, 0);
                    let t = ((p.x[0] - px) * (end[0] - px) + (p.x[1] - py) * (end[1] - py)) / (r * r);
                    prop_assert!(t > 0.0 && t < 1.0);
                    let cross = (p.x[0] - px) * (end[1] - py) - (p.x[1] - py) * (end[0] - px);
                    prop_assert!(cross.abs() < 1e-9);
                }
                if r < max_range {
                    prop_assert_eq!(it.next().unwrap().y, 1);
                }
            }
        }
    }
}
