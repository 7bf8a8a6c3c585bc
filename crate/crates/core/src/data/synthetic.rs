//! A small simulated indoor environment: two rooms joined by a doorway,
//! a box obstacle in each room, and robots driving fixed loops while
//! taking range scans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{lidar_scan_to_points, LabeledPoint, LidarScan};
use crate::error::{Error, Result};

type Segment = ([f64; 2], [f64; 2]);

pub const WIDTH: f64 = 20.0;
pub const HEIGHT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoRoomConfig {
    pub n_robots: usize,
    pub scans_per_robot: usize,
    pub beams_per_scan: usize,
    pub n_free_per_ray: usize,
    pub max_range: f64,
    /// Standard deviation of additive range noise (meters).
    pub range_noise: f64,
    pub seed: u64,
}

impl Default for TwoRoomConfig {
    fn default() -> Self {
        Self {
            n_robots: 4,
            scans_per_robot: 100,
            beams_per_scan: 20,
            n_free_per_ray: 4,
            max_range: 8.0,
            range_noise: 0.02,
            seed: 0,
        }
    }
}

/// (xmin, xmax, ymin, ymax) of the map.
pub fn bounds() -> [f64; 4] {
    [0.0, WIDTH, 0.0, HEIGHT]
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> [Segment; 4] {
    [
        ([x0, y0], [x1, y0]),
        ([x1, y0], [x1, y1]),
        ([x1, y1], [x0, y1]),
        ([x0, y1], [x0, y0]),
    ]
}

/// Wall segments of the map.
pub fn walls() -> Vec<Segment> {
    let mut w = rect(0.0, 0.0, WIDTH, HEIGHT).to_vec();
    // dividing wall with a doorway between y = 4 and y = 6
    w.push(([10.0, 0.0], [10.0, 4.0]));
    w.push(([10.0, 6.0], [10.0, HEIGHT]));
    w.extend(rect(4.0, 5.8, 5.0, 6.8));
    w.extend(rect(14.0, 5.8, 16.0, 6.6));
    w
}

fn routes() -> Vec<Vec<[f64; 2]>> {
    vec![
        vec![[2.0, 2.0], [8.0, 2.0], [8.0, 8.0], [2.0, 8.0], [2.0, 2.0]],
        vec![[12.0, 2.0], [18.0, 2.0], [18.0, 8.0], [12.0, 8.0], [12.0, 2.0]],
        vec![[2.0, 5.0], [18.0, 5.0], [2.0, 5.0]],
        vec![
            [3.0, 3.0],
            [9.0, 3.0],
            [9.0, 5.0],
            [11.0, 5.0],
            [11.0, 3.0],
            [17.0, 3.0],
            [17.0, 7.5],
            [11.0, 7.5],
            [11.0, 5.0],
            [9.0, 5.0],
            [9.0, 7.5],
            [3.0, 7.5],
            [3.0, 3.0],
        ],
    ]
}

/// Distance along the ray from `origin` in direction `dir` (unit) to the
/// nearest wall, or `None` when nothing is hit within `max_range`.
pub fn cast_ray(walls: &[Segment], origin: [f64; 2], dir: [f64; 2], max_range: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &(a, b) in walls {
        let e = [b[0] - a[0], b[1] - a[1]];
        let denom = dir[0] * e[1] - dir[1] * e[0];
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = [a[0] - origin[0], a[1] - origin[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / denom;
        let s = (w[0] * dir[1] - w[1] * dir[0]) / denom;
        if t > 1e-9 && (0.0..=1.0).contains(&s) && t <= max_range && best.is_none_or(|bt| t < bt) {
            best = Some(t);
        }
    }
    best
}

/// Poses spaced evenly along a closed route by arc length, heading along
/// the direction of travel.
fn poses_along(route: &[[f64; 2]], count: usize) -> Vec<[f64; 3]> {
    let lengths: Vec<f64> = route
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .collect();
    let total: f64 = lengths.iter().sum();
    (0..count)
        .map(|k| {
            let mut d = total * k as f64 / count as f64;
            let mut seg = 0;
            while seg + 1 < lengths.len() && d > lengths[seg] {
                d -= lengths[seg];
                seg += 1;
            }
            let (a, b) = (route[seg], route[seg + 1]);
            let f = if lengths[seg] > 0.0 { d / lengths[seg] } else { 0.0 };
            [
                a[0] + f * (b[0] - a[0]),
                a[1] + f * (b[1] - a[1]),
                (b[1] - a[1]).atan2(b[0] - a[0]),
            ]
        })
        .collect()
}

/// Simulated scans, ordered by robot then time.
pub fn two_room_scans(cfg: &TwoRoomConfig) -> Result<Vec<LidarScan>> {
    let all_routes = routes();
    if cfg.n_robots == 0 || cfg.n_robots > all_routes.len() {
        return Err(Error::InvalidArgument(format!(
            "two-room map supports 1 to {} robots, got {}",
            all_routes.len(),
            cfg.n_robots
        )));
    }
    if cfg.beams_per_scan == 0 || cfg.scans_per_robot == 0 {
        return Err(Error::InvalidArgument("scan counts must be positive".into()));
    }
    if !(cfg.max_range > 0.0) {
        return Err(Error::InvalidArgument("max_range must be positive".into()));
    }
    let noise = Normal::new(0.0, cfg.range_noise)
        .map_err(|e| Error::InvalidArgument(format!("range_noise: {e}")))?;
    let walls = walls();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step = std::f64::consts::TAU / cfg.beams_per_scan as f64;
    let mut scans = Vec::with_capacity(cfg.n_robots * cfg.scans_per_robot);
    for (robot, route) in all_routes.iter().take(cfg.n_robots).enumerate() {
        for pose in poses_along(route, cfg.scans_per_robot) {
            let offset = rng.random_range(0.0..step);
            let angles: Vec<f64> = (0..cfg.beams_per_scan)
                .map(|b| -std::f64::consts::PI + offset + b as f64 * step)
                .collect();
            let ranges = angles
                .iter()
                .map(|a| {
                    let (s, c) = (pose[2] + a).sin_cos();
                    match cast_ray(&walls, [pose[0], pose[1]], [c, s], cfg.max_range) {
                        Some(t) => (t + noise.sample(&mut rng)).clamp(1e-3, cfg.max_range),
                        None => cfg.max_range,
                    }
                })
                .collect();
            scans.push(LidarScan {
                pose,
                angles,
                ranges,
                max_range: cfg.max_range,
                robot: Some(robot),
            });
        }
    }
    Ok(scans)
}

/// Labeled points from [`two_room_scans`], tagged with robot ids.
pub fn two_room_points(cfg: &TwoRoomConfig) -> Result<Vec<LabeledPoint>> {
    let mut out = Vec::new();
    for scan in two_room_scans(cfg)? {
        out.extend(lidar_scan_to_points(&scan, cfg.n_free_per_ray, 0.0)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist_to_segment(p: [f64; 2], (a, b): Segment) -> f64 {
        let e = [b[0] - a[0], b[1] - a[1]];
        let t = (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / (e[0] * e[0] + e[1] * e[1])).clamp(0.0, 1.0);
        let q = [a[0] + t * e[0], a[1] + t * e[1]];
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    #[test]
    fn cast_ray_hits_outer_wall() {
        let w = walls();
        assert!((cast_ray(&w, [2.0, 2.0], [-1.0, 0.0], 10.0).unwrap() - 2.0).abs() < 1e-12);
        // through the doorway into the right room's far wall
        assert!((cast_ray(&w, [2.0, 5.0], [1.0, 0.0], 30.0).unwrap() - 18.0).abs() < 1e-12);
        assert!(cast_ray(&w, [2.0, 5.0], [1.0, 0.0], 10.0).is_none());
    }

    #[test]
    fn default_map_size_and_labels() {
        let cfg = TwoRoomConfig::default();
        let pts = two_room_points(&cfg).unwrap();
        assert!(pts.len() > 35_000 && pts.len() <= 40_000, "{}", pts.len());
        let w = walls();
        let occ: Vec<_> = pts.iter().filter(|p| p.y == 1).collect();
        assert!(occ.len() > 5000);
        for p in &occ {
            let d = w.iter().map(|&s| dist_to_segment(p.x, s)).fold(f64::INFINITY, f64::min);
            assert!(d < 0.15, "occupied point {:?} is {d} from a wall", p.x);
        }
        assert!(pts.iter().all(|p| p.robot.is_some_and(|r| r < 4)));
        assert_eq!(pts, two_room_points(&cfg).unwrap());
    }

    #[test]
    fn routes_stay_in_free_space() {
        let w = walls();
        for route in routes() {
            for pose in poses_along(&route, 200) {
                let d = w.iter().map(|&s| dist_to_segment([pose[0], pose[1]], s)).fold(f64::INFINITY, f64::min);
                assert!(d > 0.4, "pose {pose:?}");
            }
        }
    }
}
