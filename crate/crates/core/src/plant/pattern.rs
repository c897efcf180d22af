use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target levels as fractions of the maximum force.
pub const PATTERN_LEVELS: [f64; 3] = [0.25, 0.50, 0.60];

/// Piecewise-constant force target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePattern {
    pub hold: f64,
    pub duration: f64,
    /// One level per segment, N.
    pub levels: Vec<f64>,
}

impl ForcePattern {
    /// Target at time `t` (s); zero outside `[0, duration)`.
    pub fn value_at(&self, t: f64) -> f64 {
        if !(0.0..self.duration).contains(&t) {
            return 0.0;
        }
        let i = ((t / self.hold).floor() as usize).min(self.levels.len() - 1);
        self.levels[i]
    }
}

/// Seeded random sequence of holds at 25, 50 and 60 % of `max_force`, with
/// no level repeated back to back.
pub fn pattern_generate(max_force: f64, duration: f64, hold: f64, seed: u64) -> Result<ForcePattern> {
    if !(hold > 0.0 && duration > hold && max_force > 0.0) {
        return Err(Error::Config(format!(
            "pattern needs duration > hold > 0 and positive force (got {duration}, {hold}, {max_force})"
        )));
    }
    let segments = (duration / hold).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rng.random_range(0..PATTERN_LEVELS.len());
    let mut levels = Vec::with_capacity(segments);
    for _ in 0..segments {
        levels.push(PATTERN_LEVELS[idx] * max_force);
        idx = (idx + rng.random_range(1..PATTERN_LEVELS.len())) % PATTERN_LEVELS.len();
    }
    Ok(ForcePattern {
        hold,
        duration,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_protocol_shape() {
        let p = pattern_generate(8.0, 250.0, 5.0, 1).unwrap();
        assert_eq!(p.levels.len(), 50);
        for l in &p.levels {
            assert!([2.0, 4.0, 4.8].iter().any(|v| (v - l).abs() < 1e-12), "{l}");
        }
        for w in p.levels.windows(2) {
            assert_ne!(w[0], w[1]);
        }
        assert_eq!(p, pattern_generate(8.0, 250.0, 5.0, 1).unwrap());
        assert_ne!(p, pattern_generate(8.0, 250.0, 5.0, 2).unwrap());
    }

    #[test]
    fn lookup() {
        let p = pattern_generate(10.0, 12.0, 5.0, 3).unwrap();
        assert_eq!(p.levels.len(), 3);
        assert_eq!(p.value_at(0.0), p.levels[0]);
        assert_eq!(p.value_at(5.0), p.levels[1]);
        assert_eq!(p.value_at(11.99), p.levels[2]);
        assert_eq!(p.value_at(12.0), 0.0);
        assert_eq!(p.value_at(-0.1), 0.0);
    }

    #[test]
    fn rejects_bad_timing() {
        assert!(pattern_generate(8.0, 5.0, 5.0, 0).is_err());
        assert!(pattern_generate(8.0, 10.0, 0.0, 0).is_err());
    }
}
