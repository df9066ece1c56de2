//! Synthetic cloud generator: normal clusters scattered uniformly in a
//! box plus a uniform background, aimed at the locally-dense,
//! globally-sparse regime the analysis module measures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::ply::RawCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub clusters: usize,
    /// Inclusive range of points drawn per cluster. With zero clusters (or
    /// background fraction 1) one draw from this range is the total count
    /// of uniform points.
    pub points_per_cluster: (usize, usize),
    /// Isotropic standard deviation of each cluster, world units.
    pub sigma: f64,
    /// Points live in [0, extent]^3 (cluster tails may stick out).
    pub extent: f64,
    /// Fraction of the final cloud drawn uniformly from the box.
    pub background_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.points_per_cluster;
        if lo > hi {
            return Err(Error::ConfigMismatch(format!(
                "points-per-cluster range {}..{} is inverted",
                lo, hi
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::ConfigMismatch("sigma must be positive".into()));
        }
        if !(self.extent > 0.0) {
            return Err(Error::ConfigMismatch("extent must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.background_fraction) {
            return Err(Error::ConfigMismatch("background fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Deterministic per seed. Draw order: per cluster its center, count,
/// then points; background points last. A cluster point is
/// center + sigma * standard normal per axis (Box-Muller).
pub fn generate(spec: &SyntheticSpec) -> RawCloud {
    spec.validate().expect("invalid synthetic spec");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.points_per_cluster;
    let mut positions = Vec::new();
    let uniform_point = |rng: &mut ChaCha8Rng| {
        [
            rng.gen::<f64>() * spec.extent,
            rng.gen::<f64>() * spec.extent,
            rng.gen::<f64>() * spec.extent,
        ]
    };
    if spec.clusters == 0 || spec.background_fraction >= 1.0 {
        let n = rng.gen_range(lo..=hi);
        for _ in 0..n {
            let p = uniform_point(&mut rng);
            positions.push(p);
        }
    } else {
        let mut clustered = 0usize;
        for _ in 0..spec.clusters {
            let center = uniform_point(&mut rng);
            let n = rng.gen_range(lo..=hi);
            clustered += n;
            for _ in 0..n {
                let mut p = [0.0f64; 3];
                for (axis, c) in p.iter_mut().enumerate() {
                    // u1 in (0, 1] keeps the log finite.
                    let u1 = 1.0 - rng.gen::<f64>();
                    let u2: f64 = rng.gen();
                    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    *c = center[axis] + spec.sigma * z;
                }
                positions.push(p);
            }
        }
        let f = spec.background_fraction;
        let background = (f / (1.0 - f) * clustered as f64).round() as usize;
        for _ in 0..background {
            let p = uniform_point(&mut rng);
            positions.push(p);
        }
    }
    RawCloud { positions, source: format!("synthetic(seed={})", spec.seed) }
}
