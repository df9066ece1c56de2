//! Distribution diagnostics for voxelized clouds: local-density
//! histograms over L-infinity neighborhoods, KL divergence between
//! histograms, and per-scale box-counting fractal dimension.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geometry::{Hierarchy, Voxel};

/// count[v] = occupied voxels u with max-norm distance <= k/2 from v,
/// v itself included. 1 <= count <= k^3.
pub fn neighbor_counts(level: &[Voxel], k: usize) -> Vec<u32> {
    assert!(k % 2 == 1 && k >= 1, "kernel size must be odd");
    let r = (k / 2) as i32;
    let occupied: HashSet<Voxel> = level.iter().copied().collect();
    let mut counts = Vec::with_capacity(level.len());
    for &v in level {
        let mut c = 0u32;
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if occupied.contains(&[v[0] + dx, v[1] + dy, v[2] + dz]) {
                        c += 1;
                    }
                }
            }
        }
        counts.push(c);
    }
    counts
}

/// Normalized local-density histogram over [0, k^3], equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistogram {
    /// Hierarchy scale the counts came from; informational.
    pub scale: usize,
    pub kernel: usize,
    /// B+1 edges spanning [0, k^3].
    pub edges: Vec<f64>,
    /// B densities; integral over the edges is 1.
    pub densities: Vec<f64>,
}

impl DensityHistogram {
    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }
}

pub fn density_histogram(counts: &[u32], k: usize, bins: usize) -> Result<DensityHistogram> {
    if counts.is_empty() {
        return Err(Error::EmptyCounts);
    }
    if bins == 0 {
        return Err(Error::ConfigMismatch("histogram needs at least one bin".into()));
    }
    assert!(k % 2 == 1, "kernel size must be odd");
    let top = (k * k * k) as f64;
    let width = top / bins as f64;
    let mut freq = vec![0u64; bins];
    for &c in counts {
        debug_assert!(c >= 1 && c as f64 <= top);
        let mut idx = (c as f64 / width) as usize;
        // The top edge belongs to the last bin.
        if idx >= bins {
            idx = bins - 1;
        }
        freq[idx] += 1;
    }
    let total = counts.len() as f64;
    let densities = freq.iter().map(|&f| f as f64 / (total * width)).collect();
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    Ok(DensityHistogram { scale: 0, kernel: k, edges, densities })
}

fn check_same_bins(p: &DensityHistogram, q: &DensityHistogram) -> Result<()> {
    if p.kernel != q.kernel || p.edges != q.edges {
        return Err(Error::BinMismatch(format!(
            "histograms differ in binning (k {} vs {}, {} vs {} bins)",
            p.kernel,
            q.kernel,
            p.densities.len(),
            q.densities.len()
        )));
    }
    Ok(())
}

/// Discrete KL in bits: sum over bins with p > 0 of
/// p_j * log2(p_j / max(q_j, 1e-12)) * width.
pub fn kl_divergence(p: &DensityHistogram, q: &DensityHistogram) -> Result<f64> {
    check_same_bins(p, q)?;
    let w = p.bin_width();
    let mut kl = 0.0;
    for (&pj, &qj) in p.densities.iter().zip(&q.densities) {
        if pj > 0.0 {
            kl += pj * (pj / qj.max(1e-12)).log2() * w;
        }
    }
    Ok(kl)
}

/// 0.5 * (KL(p||q) + KL(q||p)).
pub fn kl_symmetric(p: &DensityHistogram, q: &DensityHistogram) -> Result<f64> {
    Ok(0.5 * (kl_divergence(p, q)? + kl_divergence(q, p)?))
}

/// Box-counting dimension between adjacent scales, finest to coarsest:
/// values[i] = log2(counts[i] / counts[i+1]) with counts[0] the finest
/// level. 0 <= value <= 3 for 3D clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct FractalProfile {
    /// Occupied-voxel count per scale, finest first.
    pub counts: Vec<usize>,
    /// One value per adjacent scale pair, finest pair first.
    pub values: Vec<f64>,
}

pub fn fractal_profile(h: &Hierarchy) -> FractalProfile {
    let counts: Vec<usize> = h.levels.iter().rev().map(|l| l.len()).collect();
    let values = counts
        .windows(2)
        .map(|w| (w[0] as f64 / w[1] as f64).log2())
        .collect();
    FractalProfile { counts, values }
}

/// CSV emitters, one value-bearing column each, for downstream plotting.
impl DensityHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,density\n");
        for (i, &d) in self.densities.iter().enumerate() {
            out.push_str(&format!("{},{},{:.9}\n", self.edges[i], self.edges[i + 1], d));
        }
        out
    }

    pub fn to_json(&self) -> String {
        format!(
            "{{\"scale\":{},\"kernel\":{},\"edges\":{:?},\"densities\":{:?}}}",
            self.scale, self.kernel, self.edges, self.densities
        )
    }
}

impl FractalProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,value\n");
        for (i, &v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{:.6}\n", i, v));
        }
        out
    }

    pub fn to_json(&self) -> String {
        format!("{{\"counts\":{:?},\"values\":{:?}}}", self.counts, self.values)
    }
}
