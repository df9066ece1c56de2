//! Coordinate algebra for the voxel hierarchy: quantization to integer voxel
//! coordinates, stride-2 downsampling, occupancy-code extraction and the
//! inverse expansion used by the decoder.
//!
//! Conventions fixed here and relied on everywhere else:
//! - canonical voxel order is lexicographic (x, then y, then z);
//! - a child voxel is `2 * parent + (dx, dy, dz)` with octant offsets in
//!   {0, 1}^3, and octant (dx, dy, dz) maps to bit `4*dx + 2*dy + dz` of the
//!   parent's 8-bit occupancy code;
//! - downsampling is component-wise floor division by 2 (the inverse of the
//!   child identity above; round-to-nearest would break it).

use crate::error::{Error, Result};

pub type Voxel = [i32; 3];

/// Deduplicated voxel coordinates plus the mapping back to world units.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCloud {
    /// Sorted lexicographically, unique, every component >= 0.
    pub coords: Vec<Voxel>,
    /// World units per voxel (the quantization step tau).
    pub step: f64,
    /// Offset subtracted from raw quantized coordinates during
    /// normalization, in voxel units.
    pub origin: [i64; 3],
}

/// Per-scale occupied-voxel sets plus the occupancy codes linking them.
///
/// `levels[0]` is the single root voxel (0,0,0); `levels[L]` equals the
/// quantized cloud. `codes[s]` holds one 8-bit code per voxel of `levels[s]`
/// (in that level's sort order) describing which of its octants are occupied
/// at `levels[s+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub levels: Vec<Vec<Voxel>>,
    pub codes: Vec<Vec<u8>>,
}

impl Hierarchy {
    /// Number of coded scales L; `levels` has L + 1 entries.
    pub fn scale_count(&self) -> usize {
        self.codes.len()
    }

    pub fn finest(&self) -> &[Voxel] {
        self.levels.last().expect("hierarchy has at least one level")
    }

    pub fn point_count(&self) -> usize {
        self.finest().len()
    }
}

/// An 8-bit occupancy code split into the four prediction segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccupancyBits {
    pub code: u8,
}

impl OccupancyBits {
    pub fn b1(self) -> u8 {
        self.code >> 7
    }

    pub fn b2(self) -> u8 {
        (self.code >> 6) & 1
    }

    pub fn b34(self) -> u8 {
        (self.code >> 4) & 3
    }

    pub fn b58(self) -> u8 {
        self.code & 15
    }

    pub fn recompose(b1: u8, b2: u8, b34: u8, b58: u8) -> u8 {
        b1 * 128 + b2 * 64 + b34 * 16 + b58
    }
}

/// Octant of a voxel within its parent, as a code bit index in 0..8.
#[inline]
pub fn octant(v: Voxel) -> u8 {
    (((v[0] & 1) << 2) | ((v[1] & 1) << 1) | (v[2] & 1)) as u8
}

#[inline]
fn parent_of(v: Voxel) -> Voxel {
    [v[0].div_euclid(2), v[1].div_euclid(2), v[2].div_euclid(2)]
}

/// Maps world points to voxel coordinates: round-to-nearest of p/step with
/// ties away from zero, duplicates merged, then normalized so the minimum
/// per axis is zero (the subtracted minimum becomes `origin`).
pub fn quantize(points: &[[f64; 3]], step: f64) -> Result<QuantizedCloud> {
    assert!(step > 0.0 && step.is_finite(), "quantization step must be positive");
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut raw: Vec<[i64; 3]> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut v = [0i64; 3];
        for a in 0..3 {
            if !p[a].is_finite() {
                return Err(Error::InvalidPoint(i));
            }
            let q = p[a] / step;
            // f64::round ties away from zero, which is the declared rule.
            if !q.is_finite() || q.abs() >= 9.0e18 {
                return Err(Error::InvalidPoint(i));
            }
            v[a] = q.round() as i64;
        }
        raw.push(v);
    }
    let mut origin = [i64::MAX; 3];
    for v in &raw {
        for a in 0..3 {
            origin[a] = origin[a].min(v[a]);
        }
    }
    let mut coords: Vec<Voxel> = Vec::with_capacity(raw.len());
    for v in &raw {
        let mut c = [0i32; 3];
        for a in 0..3 {
            let d = v[a] - origin[a];
            if d >= 1i64 << 31 {
                return Err(Error::CoordinateOverflow);
            }
            c[a] = d as i32;
        }
        coords.push(c);
    }
    coords.sort_unstable();
    coords.dedup();
    Ok(QuantizedCloud { coords, step, origin })
}

/// Inverse of [`quantize`] up to the merged duplicates: world position of
/// each voxel center, `(coord + origin) * step`.
pub fn dequantize(cloud: &QuantizedCloud) -> Vec<[f64; 3]> {
    cloud
        .coords
        .iter()
        .map(|c| {
            [
                (c[0] as i64 + cloud.origin[0]) as f64 * cloud.step,
                (c[1] as i64 + cloud.origin[1]) as f64 * cloud.step,
                (c[2] as i64 + cloud.origin[2]) as f64 * cloud.step,
            ]
        })
        .collect()
}

/// One coarsening step: floor division of every coordinate by 2, duplicates
/// merged, output sorted.
pub fn downsample(level: &[Voxel]) -> Vec<Voxel> {
    let mut out: Vec<Voxel> = level.iter().map(|&v| parent_of(v)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn assert_canonical(coords: &[Voxel]) {
    debug_assert!(
        coords.windows(2).all(|w| w[0] < w[1]),
        "coordinates must be sorted and unique"
    );
    debug_assert!(
        coords.iter().all(|c| c.iter().all(|&x| x >= 0)),
        "coordinates must be non-negative"
    );
}

/// Builds the full hierarchy over a quantized cloud. The scale count is
/// L = max(1, ceil(log2(max_coord + 1))), the smallest depth whose repeated
/// halving collapses the cloud to the single root voxel.
pub fn build_hierarchy(cloud: &QuantizedCloud) -> Result<Hierarchy> {
    build_hierarchy_from_coords(&cloud.coords)
}

/// [`build_hierarchy`] on bare coordinates (sorted, unique, non-negative).
pub fn build_hierarchy_from_coords(coords: &[Voxel]) -> Result<Hierarchy> {
    if coords.is_empty() {
        return Err(Error::EmptyCloud);
    }
    assert_canonical(coords);
    let max_c = coords
        .iter()
        .flat_map(|c| c.iter())
        .copied()
        .max()
        .expect("non-empty");
    let scale_count = bits_needed(max_c).max(1);
    let mut levels = vec![Vec::new(); scale_count + 1];
    levels[scale_count] = coords.to_vec();
    for s in (0..scale_count).rev() {
        levels[s] = downsample(&levels[s + 1]);
    }
    debug_assert_eq!(levels[0], vec![[0, 0, 0]]);
    let mut codes = Vec::with_capacity(scale_count);
    for s in 0..scale_count {
        codes.push(occupancy_codes(&levels[s], &levels[s + 1])?);
    }
    Ok(Hierarchy { levels, codes })
}

/// ceil(log2(m + 1)) for m >= 0, i.e. the bit length of m.
fn bits_needed(m: i32) -> usize {
    debug_assert!(m >= 0);
    (32 - (m as u32).leading_zeros()) as usize
}

/// One occupancy code per parent (in parent sort order): bit 4dx+2dy+dz is
/// set iff child `2*parent + (dx,dy,dz)` is occupied.
pub fn occupancy_codes(parents: &[Voxel], children: &[Voxel]) -> Result<Vec<u8>> {
    assert_canonical(parents);
    assert_canonical(children);
    let mut codes = vec![0u8; parents.len()];
    for &ch in children {
        let idx = parents.binary_search(&parent_of(ch)).map_err(|_| {
            Error::HierarchyMismatch(format!("child {:?} has no parent voxel", ch))
        })?;
        codes[idx] |= 1 << octant(ch);
    }
    if codes.iter().any(|&c| c == 0) {
        return Err(Error::HierarchyMismatch(
            "a parent voxel has no children".into(),
        ));
    }
    Ok(codes)
}

/// Inverse of [`occupancy_codes`]: emits `2*parent + octant` for every set
/// bit. Output is re-sorted because doubling does not preserve lexicographic
/// order across parents.
pub fn expand(parents: &[Voxel], codes: &[u8]) -> Result<Vec<Voxel>> {
    if parents.len() != codes.len() {
        return Err(Error::HierarchyMismatch(format!(
            "{} parents but {} codes",
            parents.len(),
            codes.len()
        )));
    }
    let total: usize = codes.iter().map(|c| c.count_ones() as usize).sum();
    let mut out = Vec::with_capacity(total);
    for (p, &code) in parents.iter().zip(codes) {
        if code == 0 {
            return Err(Error::EmptyCode);
        }
        for b in 0..8u8 {
            if code & (1 << b) != 0 {
                out.push([
                    2 * p[0] + ((b >> 2) & 1) as i32,
                    2 * p[1] + ((b >> 1) & 1) as i32,
                    2 * p[2] + (b & 1) as i32,
                ]);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// For each child, the index of its parent within `parents`.
pub fn child_parent_indices(parents: &[Voxel], children: &[Voxel]) -> Result<Vec<u32>> {
    children
        .iter()
        .map(|&ch| {
            parents
                .binary_search(&parent_of(ch))
                .map(|i| i as u32)
                .map_err(|_| {
                    Error::HierarchyMismatch(format!("child {:?} has no parent voxel", ch))
                })
        })
        .collect()
}
