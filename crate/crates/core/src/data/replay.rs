use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledPoint;
use crate::error::{Error, Result};

/// Per-class stores of past observations, sampled with replacement to
/// decorrelate streaming trajectory data.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    free: VecDeque<LabeledPoint>,
    occupied: VecDeque<LabeledPoint>,
    capacity: Option<usize>,
    /// Probability that a draw comes from the free store. `None` draws
    /// uniformly over everything stored.
    target_ratio: Option<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: Option<usize>, target_ratio: Option<f64>) -> Result<Self> {
        if capacity == Some(0) {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        if let Some(r) = target_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!(
                    "replay ratio must lie in [0, 1], got {r}"
                )));
            }
        }
        Ok(Self {
            free: VecDeque::new(),
            occupied: VecDeque::new(),
            capacity,
            target_ratio,
        })
    }

    pub fn from_points(
        points: impl IntoIterator<Item = LabeledPoint>,
        capacity: Option<usize>,
        target_ratio: Option<f64>,
    ) -> Result<Self> {
        let mut b = Self::new(capacity, target_ratio)?;
        b.extend(points);
        Ok(b)
    }

    /// Stores a point, evicting the oldest of its class when full.
    pub fn push(&mut self, p: LabeledPoint) {
        let store = if p.is_occupied() {
            &mut self.occupied
        } else {
            &mut self.free
        };
        if self.capacity.is_some_and(|c| store.len() == c) {
            store.pop_front();
        }
        store.push_back(p);
    }

    pub fn extend(&mut self, points: impl IntoIterator<Item = LabeledPoint>) {
        for p in points {
            self.push(p);
        }
    }

    pub fn free_len(&self) -> usize {
        self.free.len()
    }

    pub fn occupied_len(&self) -> usize {
        self.occupied.len()
    }

    pub fn len(&self) -> usize {
        self.free.len() + self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target_ratio(&self) -> Option<f64> {
        self.target_ratio
    }

    fn check_drawable(&self) -> Result<()> {
        let need_free = self.target_ratio.is_some_and(|r| r > 0.0);
        let need_occ = self.target_ratio.is_some_and(|r| r < 1.0);
        if self.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        if need_free && self.free.is_empty() {
            return Err(Error::Empty("replay buffer free store"));
        }
        if need_occ && self.occupied.is_empty() {
            return Err(Error::Empty("replay buffer occupied store"));
        }
        Ok(())
    }

    /// One draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LabeledPoint> {
        self.check_drawable()?;
        Ok(self.sample_unchecked(rng))
    }

    fn sample_unchecked<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledPoint {
        match self.target_ratio {
            Some(r) => {
                let store = if rng.random::<f64>() < r {
                    &self.free
                } else {
                    &self.occupied
                };
                store[rng.random_range(0..store.len())]
            }
            None => {
                let i = rng.random_range(0..self.len());
                if i < self.free.len() {
                    self.free[i]
                } else {
                    self.occupied[i - self.free.len()]
                }
            }
        }
    }

    /// Like [`ReplayBuffer::sample`], but while one class store is still
    /// empty it draws from whatever has been stored so far.
    pub fn sample_available<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LabeledPoint> {
        if self.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        if self.free.is_empty() || self.occupied.is_empty() {
            let store = if self.free.is_empty() { &self.occupied } else { &self.free };
            return Ok(store[rng.random_range(0..store.len())]);
        }
        Ok(self.sample_unchecked(rng))
    }

    pub fn draw_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<LabeledPoint>> {
        self.check_drawable()?;
        Ok((0..count).map(|_| self.sample_unchecked(rng)).collect())
    }
}

/// `count` independent draws from `buffer` under a fixed seed.
pub fn replay_draw(buffer: &ReplayBuffer, count: usize, seed: u64) -> Result<Vec<LabeledPoint>> {
    buffer.draw_with(&mut ChaCha8Rng::seed_from_u64(seed), count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer(n_free: usize, n_occ: usize, ratio: Option<f64>) -> ReplayBuffer {
        let pts = (0..n_free)
            .map(|i| LabeledPoint::new([i as f64, 0.0], 0))
            .chain((0..n_occ).map(|i| LabeledPoint::new([i as f64, 1.0], 1)));
        ReplayBuffer::from_points(pts, None, ratio).unwrap()
    }

    #[test]
    fn ratio_band() {
        let b = buffer(50, 50, Some(0.8));
        let draws = replay_draw(&b, 1000, 3).unwrap();
        let free = draws.iter().filter(|p| p.y == 0).count();
        assert!((750..=850).contains(&free), "free {free}");
    }

    #[test]
    fn degenerate_ratios() {
        let b = buffer(5, 0, Some(1.0));
        assert!(replay_draw(&b, 100, 1).unwrap().iter().all(|p| p.y == 0));
        let b = buffer(0, 5, Some(0.0));
        assert!(replay_draw(&b, 100, 1).unwrap().iter().all(|p| p.y == 1));
        assert!(matches!(replay_draw(&buffer(5, 0, Some(0.8)), 1, 1), Err(Error::Empty(_))));
        assert!(matches!(replay_draw(&buffer(0, 0, None), 1, 1), Err(Error::Empty(_))));
    }

    #[test]
    fn seeded_repeatability() {
        let b = buffer(30, 20, Some(0.8));
        assert_eq!(replay_draw(&b, 200, 9).unwrap(), replay_draw(&b, 200, 9).unwrap());
        assert_ne!(replay_draw(&b, 200, 9).unwrap(), replay_draw(&b, 200, 10).unwrap());
    }

    #[test]
    fn sample_available_falls_back_to_filled_store() {
        let b = buffer(0, 3, Some(0.8));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(&mut rng).is_err());
        assert_eq!(b.sample_available(&mut rng).unwrap().y, 1);
        assert!(buffer(0, 0, None).sample_available(&mut rng).is_err());
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut b = ReplayBuffer::new(Some(3), Some(0.5)).unwrap();
        for i in 0..5 {
            b.push(LabeledPoint::new([i as f64, 0.0], 0));
        }
        b.push(LabeledPoint::new([9.0, 9.0], 1));
        assert_eq!(b.free_len(), 3);
        assert_eq!(b.occupied_len(), 1);
        let xs: Vec<f64> = b.free.iter().map(|p| p.x[0]).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
        assert!(ReplayBuffer::new(Some(0), None).is_err());
        assert!(ReplayBuffer::new(None, Some(1.5)).is_err());
    }

    #[test]
    fn natural_mix_draws_uniformly_over_union() {
        let b = buffer(10, 30, None);
        let draws = replay_draw(&b, 40_000, 4).unwrap();
        let occ = draws.iter().filter(|p| p.y == 1).count() as f64 / 40_000.0;
        assert!((occ - 0.75).abs() < 0.015);
    }

    #[test]
    fn store_indices_chi_square() {
        // 20 free points, all draws free; index = x coordinate
        let b = buffer(20, 0, Some(1.0));
        for seed in 0..3 {
            let draws = replay_draw(&b, 20_000, seed).unwrap();
            let mut counts = [0usize; 20];
            for p in &draws {
                counts[p.x[0] as usize] += 1;
            }
            let e = 1000.0;
            let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
            // 19 degrees of freedom, upper 0.001 quantile
            assert!(chi2 < 43.82, "seed {seed}: chi2 {chi2}");
        }
    }
}
