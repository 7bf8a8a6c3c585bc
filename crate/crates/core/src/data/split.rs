use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledPoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Consecutive slices of the input order, sizes differing by at most one.
    ContiguousTrajectory,
    /// Shuffled, then sliced like the contiguous mode.
    Random,
    /// Point with robot id r goes to agent r.
    PerRobot,
}

/// Samples that may carry the id of the robot that recorded them.
pub trait RobotTagged {
    fn robot(&self) -> Option<usize>;
}

impl RobotTagged for LabeledPoint {
    fn robot(&self) -> Option<usize> {
        self.robot
    }
}

impl RobotTagged for super::RegressionSample {
    fn robot(&self) -> Option<usize> {
        None
    }
}

/// Splits `points` into `n_agents` disjoint lists covering the input.
pub fn partition_dataset<T: Clone + RobotTagged>(
    points: &[T],
    n_agents: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    if n_agents == 0 {
        return Err(Error::InvalidArgument("n_agents must be at least 1".into()));
    }
    match mode {
        PartitionMode::ContiguousTrajectory => Ok(contiguous(points, n_agents)),
        PartitionMode::Random => {
            let mut shuffled = points.to_vec();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            Ok(contiguous(&shuffled, n_agents))
        }
        PartitionMode::PerRobot => {
            let mut parts = vec![Vec::new(); n_agents];
            for (i, p) in points.iter().enumerate() {
                let r = p.robot().ok_or_else(|| {
                    Error::InvalidArgument(format!("point {i} has no robot id for per_robot partitioning"))
                })?;
                if r >= n_agents {
                    return Err(Error::InvalidArgument(format!(
                        "robot id {r} out of range for {n_agents} agents"
                    )));
                }
                parts[r].push(p.clone());
            }
            Ok(parts)
        }
    }
}

fn contiguous<T: Clone>(points: &[T], n: usize) -> Vec<Vec<T>> {
    let (base, extra) = (points.len() / n, points.len() % n);
    let mut start = 0;
    (0..n)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let part = points[start..start + len].to_vec();
            start += len;
            part
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    Random,
    /// Cut the ordered data into slices and split each slice in proportion,
    /// so every set covers the whole trajectory.
    ByTrajectorySlices { n_slices: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T = LabeledPoint> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub verify: Vec<T>,
}

/// Largest-remainder rounding of `quotas` (non-negative, summing to an
/// integer `total`).
fn apportion(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Splits into disjoint train/test/verify sets of sizes within one of
/// fraction·N. `verify_cap` bounds the verification set absolutely.
pub fn split_train_test_verify<T: Clone>(
    points: &[T],
    fractions: (f64, f64, f64),
    mode: SplitMode,
    seed: u64,
    verify_cap: Option<usize>,
) -> Result<Splits<T>> {
    let (ftr, fte, fve) = fractions;
    let fs = [ftr, fte, fve];
    if fs.iter().any(|f| !(0.0..=1.0).contains(f)) || ftr + fte + fve > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "infeasible split fractions ({ftr}, {fte}, {fve})"
        )));
    }
    let n = points.len();
    let nf = n as f64;
    let unused = (1.0 - ftr - fte - fve).max(0.0);
    let mut totals = apportion(&[ftr * nf, fte * nf, fve * nf, unused * nf], n);
    if let Some(cap) = verify_cap {
        if totals[2] > cap {
            totals[3] += totals[2] - cap;
            totals[2] = cap;
        }
    }

    let mut sets: [Vec<T>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    match mode {
        SplitMode::Random => {
            let mut shuffled = points.to_vec();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut it = shuffled.into_iter();
            for (set, &count) in sets.iter_mut().zip(&totals) {
                set.extend(it.by_ref().take(count));
            }
        }
        SplitMode::ByTrajectorySlices { n_slices } => {
            if n_slices == 0 {
                return Err(Error::InvalidArgument("n_slices must be at least 1".into()));
            }
            let mut remaining = totals;
            let mut left = n;
            for slice in contiguous(points, n_slices.min(n.max(1))) {
                if slice.is_empty() {
                    continue;
                }
                let share = slice.len() as f64 / left as f64;
                let quotas: Vec<f64> = remaining.iter().map(|&r| r as f64 * share).collect();
                let counts = apportion(&quotas, slice.len());
                let mut it = slice.into_iter();
                for k in 0..4 {
                    sets[k].extend(it.by_ref().take(counts[k]));
                    remaining[k] -= counts[k];
                }
                left -= counts.iter().sum::<usize>();
            }
        }
    }
    let [train, test, verify, _] = sets;
    Ok(Splits {
        train,
        test,
        verify,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn pts(n: usize) -> Vec<LabeledPoint> {
        (0..n)
            .map(|i| LabeledPoint::new([i as f64, 0.0], (i % 2) as u8))
            .collect()
    }

    fn ids(v: &[LabeledPoint]) -> Vec<usize> {
        v.iter().map(|p| p.x[0] as usize).collect()
    }

    #[test]
    fn partition_examples() {
        let p = pts(8);
        assert_eq!(partition_dataset(&p, 1, PartitionMode::Random, 0).unwrap().len(), 1);
        assert_eq!(partition_dataset(&p, 1, PartitionMode::ContiguousTrajectory, 0).unwrap()[0], p);
        let parts = partition_dataset(&p, 4, PartitionMode::ContiguousTrajectory, 0).unwrap();
        assert!(parts.iter().all(|s| s.len() == 2));
        assert_eq!(ids(&parts[1]), vec![2, 3]);
        assert!(partition_dataset(&p, 2, PartitionMode::PerRobot, 0).is_err());
        assert!(partition_dataset(&p, 0, PartitionMode::Random, 0).is_err());

        let robots: Vec<_> = (0..6).map(|i| LabeledPoint::with_robot([i as f64, 0.0], 0, i % 3)).collect();
        let parts = partition_dataset(&robots, 3, PartitionMode::PerRobot, 0).unwrap();
        assert_eq!(ids(&parts[2]), vec![2, 5]);
    }

    #[test]
    fn split_examples() {
        let p = pts(5300);
        let s = split_train_test_verify(&p, (0.5, 0.5, 0.0), SplitMode::Random, 1, None).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.verify.len()), (2650, 2650, 0));
        let s = split_train_test_verify(&p, (1.0, 0.0, 0.0), SplitMode::Random, 1, None).unwrap();
        assert_eq!(s.train.len(), 5300);
        assert!(split_train_test_verify(&p, (0.6, 0.5, 0.0), SplitMode::Random, 1, None).is_err());
        assert!(split_train_test_verify(&p, (-0.1, 0.5, 0.0), SplitMode::Random, 1, None).is_err());
    }

    #[test]
    fn dinno_fractions_on_a_million() {
        let p = pts(1_000_000);
        let f = (1.0 / 3.0, 1.0 / 11.0, 1.0 / 80.0);
        for mode in [SplitMode::Random, SplitMode::ByTrajectorySlices { n_slices: 7 }] {
            let s = split_train_test_verify(&p, f, mode, 3, None).unwrap();
            assert!(s.train.len().abs_diff(333_333) <= 1);
            assert!(s.test.len().abs_diff(90_909) <= 1);
            assert!(s.verify.len().abs_diff(12_500) <= 1);
        }
    }

    #[test]
    fn verify_cap_applies() {
        let p = pts(20_000);
        let s = split_train_test_verify(&p, (0.9, 0.0, 0.1), SplitMode::Random, 0, Some(1000)).unwrap();
        assert_eq!(s.verify.len(), 1000);
        assert_eq!(s.train.len(), 18_000);
    }

    #[test]
    fn trajectory_slices_span_the_data() {
        let p = pts(1000);
        let s = split_train_test_verify(&p, (0.5, 0.3, 0.1), SplitMode::ByTrajectorySlices { n_slices: 10 }, 0, None)
            .unwrap();
        let test = ids(&s.test);
        assert!(*test.first().unwrap() < 100 && *test.last().unwrap() >= 900);
        assert!(test.windows(2).all(|w| w[0] < w[1]));
    }

    fn check_disjoint(parts: &[&[LabeledPoint]], n: usize, full_cover: bool) -> bool {
        let mut seen = HashSet::new();
        let mut total = 0;
        for part in parts {
            for i in ids(part) {
                if !seen.insert(i) {
                    return false;
                }
                total += 1;
            }
        }
        !full_cover || total == n
    }

    proptest! {
        #[test]
        fn partitions_are_exact(n in 0usize..300, agents in 1usize..9, seed in any::<u64>(), random in any::<bool>()) {
            let p = pts(n);
            let mode = if random { PartitionMode::Random } else { PartitionMode::ContiguousTrajectory };
            let parts = partition_dataset(&p, agents, mode, seed).unwrap();
            prop_assert_eq!(parts.len(), agents);
            let refs: Vec<&[LabeledPoint]> = parts.iter().map(|v| v.as_slice()).collect();
            prop_assert!(check_disjoint(&refs, n, true));
            let (lo, hi) = (n / agents, n.div_ceil(agents));
            prop_assert!(parts.iter().all(|s| s.len() >= lo && s.len() <= hi));
        }

        #[test]
        fn splits_are_disjoint_and_sized(
            n in 0usize..2000,
            a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64,
            slices in 1usize..20, seed in any::<u64>(), random in any::<bool>(),
        ) {
            let s = a + b + c + 0.2;
            let f = (a / s, b / s, c / s);
            let mode = if random { SplitMode::Random } else { SplitMode::ByTrajectorySlices { n_slices: slices } };
            let out = split_train_test_verify(&pts(n), f, mode, seed, None).unwrap();
            let nf = n as f64;
            prop_assert!((out.train.len() as f64 - f.0 * nf).abs() <= 1.0);
            prop_assert!((out.test.len() as f64 - f.1 * nf).abs() <= 1.0);
            prop_assert!((out.verify.len() as f64 - f.2 * nf).abs() <= 1.0);
            prop_assert!(check_disjoint(&[&out.train, &out.test, &out.verify], n, false));
        }
    }
}
