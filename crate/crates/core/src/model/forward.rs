//! Deterministic forward passes: prior features, sparse convolution over
//! occupied neighbors, per-stage prediction, and bit-cost evaluation.
//!
//! All reductions run in a fixed order (voxels ascending, kernel offsets
//! lexicographic) so encoder and decoder reproduce bit-identical floats.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{child_parent_indices, octant, Hierarchy, Voxel};
use crate::model::{FeatureMap, Fop, Scalar, StageDistribution, COST_EPS};

/// Kernel offsets for an odd k, lexicographic in (dx, dy, dz).
pub fn kernel_offsets(k: usize) -> Vec<[i32; 3]> {
    assert!(k % 2 == 1, "kernel size must be odd");
    let r = (k / 2) as i32;
    let mut out = Vec::with_capacity(k * k * k);
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                out.push([dx, dy, dz]);
            }
        }
    }
    out
}

/// Occupied-neighbor index per voxel and kernel offset; -1 where the
/// offset voxel is unoccupied. Built once per scale and shared by every
/// stage and block at that scale.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    pub k3: usize,
    /// Row-major |coords| x k3.
    pub idx: Vec<i32>,
}

impl NeighborTable {
    #[inline]
    pub fn row(&self, v: usize) -> &[i32] {
        &self.idx[v * self.k3..][..self.k3]
    }
}

pub fn neighbor_table(coords: &[Voxel], k: usize) -> NeighborTable {
    let offsets = kernel_offsets(k);
    let k3 = offsets.len();
    let mut pos: HashMap<Voxel, u32> = HashMap::with_capacity(coords.len() * 2);
    for (i, &v) in coords.iter().enumerate() {
        pos.insert(v, i as u32);
    }
    let mut idx = vec![-1i32; coords.len() * k3];
    for (i, &v) in coords.iter().enumerate() {
        let row = &mut idx[i * k3..][..k3];
        for (oi, o) in offsets.iter().enumerate() {
            let q = [v[0] + o[0], v[1] + o[1], v[2] + o[2]];
            if let Some(&j) = pos.get(&q) {
                row[oi] = j as i32;
            }
        }
    }
    NeighborTable { k3, idx }
}

/// Prior feature of each voxel at one scale: embedding of the parent's
/// occupancy code plus embedding of the voxel's own octant within that
/// parent. The root scale has no parent; pass `None` to use the learned
/// root embedding instead.
pub fn prior_features<T: Scalar>(
    coords: &[Voxel],
    parent: Option<(&[u8], &[u32])>,
    model: &Fop<T>,
) -> Result<FeatureMap<T>> {
    let c = model.config.channels;
    let n = coords.len();
    let mut features = vec![T::zero(); n * c];
    match parent {
        None => {
            let root = model.p(&model.layout.root_emb);
            for v in 0..n {
                features[v * c..][..c].copy_from_slice(root);
            }
        }
        Some((codes, pidx)) => {
            if pidx.len() != n {
                return Err(Error::ConfigMismatch(format!(
                    "parent index count {} does not match {} voxels",
                    pidx.len(),
                    n
                )));
            }
            let emb = model.p(&model.layout.prior_code_emb);
            let oct = model.p(&model.layout.octant_emb);
            for v in 0..n {
                let pi = pidx[v] as usize;
                if pi >= codes.len() {
                    return Err(Error::ConfigMismatch(format!(
                        "parent index {} out of range ({} codes)",
                        pi,
                        codes.len()
                    )));
                }
                let erow = &emb[codes[pi] as usize * c..][..c];
                let orow = &oct[octant(coords[v]) as usize * c..][..c];
                let out = &mut features[v * c..][..c];
                for i in 0..c {
                    out[i] = erow[i] + orow[i];
                }
            }
        }
    }
    Ok(FeatureMap { coords: coords.to_vec(), features, channels: c })
}

/// out[v] = bias + sum over kernel offsets o with v+o occupied of
/// kernel[o] . in[v+o]. Kernel layout: [offset][c_in][c_out].
pub(crate) fn conv_apply<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    w: &[T],
    bias: &[T],
    nt: &NeighborTable,
    out: &mut [T],
) {
    debug_assert_eq!(w.len(), nt.k3 * c * c);
    debug_assert_eq!(input.len(), n * c);
    for v in 0..n {
        let orow = &mut out[v * c..][..c];
        orow.copy_from_slice(bias);
        for (oi, &nb) in nt.row(v).iter().enumerate() {
            if nb < 0 {
                continue;
            }
            let src = &input[nb as usize * c..][..c];
            let wofs = &w[oi * c * c..][..c * c];
            for (ci, &x) in src.iter().enumerate() {
                let wrow = &wofs[ci * c..][..c];
                for (co, o) in orow.iter_mut().enumerate() {
                    *o += x * wrow[co];
                }
            }
        }
    }
}

/// Per-voxel linear layer, the neighbor-prior-off stand-in for a conv.
pub(crate) fn linear_apply<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    w: &[T],
    bias: &[T],
    out: &mut [T],
) {
    debug_assert_eq!(w.len(), c * c);
    for v in 0..n {
        let src = &input[v * c..][..c];
        let orow = &mut out[v * c..][..c];
        orow.copy_from_slice(bias);
        for (ci, &x) in src.iter().enumerate() {
            let wrow = &w[ci * c..][..c];
            for (co, o) in orow.iter_mut().enumerate() {
                *o += x * wrow[co];
            }
        }
    }
}

fn mix_apply<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    w: &[T],
    bias: &[T],
    nt: Option<&NeighborTable>,
    out: &mut [T],
) {
    match nt {
        Some(nt) => conv_apply(input, n, c, w, bias, nt, out),
        None => linear_apply(input, n, c, w, bias, out),
    }
}

/// Standalone sparse convolution over a feature map.
pub fn sparse_conv<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &[T],
    bias: &[T],
    kernel_size: usize,
) -> Result<FeatureMap<T>> {
    let c = input.channels;
    if kernel_size % 2 == 0 {
        return Err(Error::ConfigMismatch(format!("kernel size {} must be odd", kernel_size)));
    }
    if kernel.len() != kernel_size.pow(3) * c * c || bias.len() != c {
        return Err(Error::ConfigMismatch("kernel/bias shape does not match feature map".into()));
    }
    let nt = neighbor_table(&input.coords, kernel_size);
    let n = input.coords.len();
    let mut out = vec![T::zero(); n * c];
    conv_apply(&input.features, n, c, kernel, bias, &nt, &mut out);
    Ok(FeatureMap { coords: input.coords.clone(), features: out, channels: c })
}

fn head_apply<T: Scalar>(input: &[T], n: usize, c: usize, w: &[T], bias: &[T], s: usize) -> Vec<T> {
    debug_assert_eq!(w.len(), c * s);
    let mut out = vec![T::zero(); n * s];
    for v in 0..n {
        let src = &input[v * c..][..c];
        let orow = &mut out[v * s..][..s];
        orow.copy_from_slice(bias);
        for (ci, &x) in src.iter().enumerate() {
            let wrow = &w[ci * s..][..s];
            for (k, o) in orow.iter_mut().enumerate() {
                *o += x * wrow[k];
            }
        }
    }
    out
}

fn softmax_rows<T: Scalar>(m: &mut [T], n: usize, s: usize) {
    for v in 0..n {
        let row = &mut m[v * s..][..s];
        let mut mx = row[0];
        for &x in row.iter() {
            if x > mx {
                mx = x;
            }
        }
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - mx).exp();
            sum += *x;
        }
        let inv = T::one() / sum;
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
}

/// Retained activations of one stage pass, enough to replay the backward
/// pass without recomputation.
pub(crate) struct StageActs<T> {
    /// Input to the first block (prior features, plus the bit embedding
    /// when stage refresh is on).
    pub x0: Vec<T>,
    /// Per block: (post-ReLU activation, second-mix output).
    pub blocks: Vec<(Vec<T>, Vec<T>)>,
    /// Head input when it differs from the last block output (stage
    /// refresh off: last output plus bit embedding).
    pub head_extra: Option<Vec<T>>,
    pub probs: Vec<T>,
}

impl<T: Scalar> StageActs<T> {
    pub fn head_input(&self) -> &[T] {
        match &self.head_extra {
            Some(h) => h,
            None => &self.blocks.last().expect("at least one block").1,
        }
    }
}

fn add_bit_embedding<T: Scalar>(x: &mut [T], decoded: &[u16], emb: &[T], c: usize) {
    for (v, &d) in decoded.iter().enumerate() {
        let row = &emb[d as usize * c..][..c];
        let dst = &mut x[v * c..][..c];
        for i in 0..c {
            dst[i] += row[i];
        }
    }
}

pub(crate) fn stage_forward_acts<T: Scalar>(
    base: &[T],
    n: usize,
    decoded: &[u16],
    stage: usize,
    model: &Fop<T>,
    nt: Option<&NeighborTable>,
) -> Result<StageActs<T>> {
    let cfg = &model.config;
    let c = cfg.channels;
    if stage >= model.num_stages() {
        return Err(Error::ConfigMismatch(format!("stage {} out of range", stage)));
    }
    let st = &model.layout.stages[stage];
    if stage > 0 {
        if decoded.len() != n {
            return Err(Error::InvalidContext(format!(
                "{} decoded-bit entries for {} voxels",
                decoded.len(),
                n
            )));
        }
        let limit = 1u32 << st.prefix_bits;
        if let Some(&bad) = decoded.iter().find(|&&d| (d as u32) >= limit) {
            return Err(Error::InvalidContext(format!(
                "decoded bits {} exceed {} prefix bits of stage {}",
                bad, st.prefix_bits, stage
            )));
        }
    }
    debug_assert_eq!(base.len(), n * c);

    let mut x0 = base.to_vec();
    if stage > 0 && cfg.stage_refresh {
        add_bit_embedding(&mut x0, decoded, model.p(&st.bit_emb), c);
    }
    let mut blocks: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(st.blocks.len());
    for (bi, bl) in st.blocks.iter().enumerate() {
        let mut u = vec![T::zero(); n * c];
        {
            let input: &[T] = if bi == 0 { &x0 } else { &blocks[bi - 1].1 };
            mix_apply(input, n, c, model.p(&bl.w1), model.p(&bl.b1), nt, &mut u);
        }
        for x in u.iter_mut() {
            if *x < T::zero() {
                *x = T::zero();
            }
        }
        let a = u;
        let mut y = vec![T::zero(); n * c];
        mix_apply(&a, n, c, model.p(&bl.w2), model.p(&bl.b2), nt, &mut y);
        blocks.push((a, y));
    }
    let head_extra = if stage > 0 && !cfg.stage_refresh {
        let mut h = blocks.last().expect("at least one block").1.clone();
        add_bit_embedding(&mut h, decoded, model.p(&st.bit_emb), c);
        Some(h)
    } else {
        None
    };
    let s = 1usize << st.width;
    let head_in: &[T] = match &head_extra {
        Some(h) => h,
        None => &blocks.last().expect("at least one block").1,
    };
    let mut probs = head_apply(head_in, n, c, model.p(&st.head_w), model.p(&st.head_b), s);
    softmax_rows(&mut probs, n, s);
    Ok(StageActs { x0, blocks, head_extra, probs })
}

/// One stage's segment distribution for every voxel of a scale.
/// `decoded_bits[v]` holds the value of all code bits fixed before this
/// stage (empty for the first stage).
pub fn stage_forward<T: Scalar>(
    base: &FeatureMap<T>,
    decoded_bits: &[u16],
    stage: usize,
    model: &Fop<T>,
) -> Result<StageDistribution<T>> {
    if base.channels != model.config.channels {
        return Err(Error::ConfigMismatch(format!(
            "feature map has {} channels, model {}",
            base.channels, model.config.channels
        )));
    }
    let nt = if model.config.neighbor_prior {
        Some(neighbor_table(&base.coords, model.config.kernel_size))
    } else {
        None
    };
    let acts = stage_forward_acts(
        &base.features,
        base.coords.len(),
        decoded_bits,
        stage,
        model,
        nt.as_ref(),
    )?;
    let alphabet = 1usize << model.layout.stages[stage].width;
    Ok(StageDistribution { probs: acts.probs, alphabet })
}

/// Total bits to code `codes` under per-stage distributions:
/// sum of -log2(p(true segment) + 1e-10), accumulated in f64.
pub fn code_bit_cost<T: Scalar>(
    dists: &[StageDistribution<T>],
    codes: &[u8],
    grouping: crate::model::Grouping,
) -> f64 {
    assert_eq!(dists.len(), grouping.num_stages());
    let mut bits = 0.0f64;
    for (j, d) in dists.iter().enumerate() {
        assert_eq!(d.rows(), codes.len());
        let s = d.alphabet;
        for (v, &code) in codes.iter().enumerate() {
            let seg = grouping.segment(code, j) as usize;
            bits -= (d.probs[v * s + seg].to_f64() + COST_EPS).log2();
        }
    }
    bits
}

/// Everything one scale's forward pass produced, retained for backward.
/// The prior features themselves live on as each stage's x0.
pub(crate) struct ScaleForward<T> {
    pub n: usize,
    /// Per voxel: parent occupancy code (empty at the root scale).
    pub parent_codes: Vec<u8>,
    /// Per voxel: own octant (empty at the root scale).
    pub octants: Vec<u8>,
    pub nt: Option<NeighborTable>,
    /// Per stage: true prefix value per voxel.
    pub prefixes: Vec<Vec<u16>>,
    /// Per stage: true segment per voxel.
    pub segments: Vec<Vec<u8>>,
    pub stages: Vec<StageActs<T>>,
}

/// Forward pass over a whole hierarchy under teacher forcing (prefixes
/// taken from the true codes). Returns total raw model bits and the
/// retained per-scale activations.
pub(crate) fn hierarchy_forward<T: Scalar>(
    model: &Fop<T>,
    h: &Hierarchy,
) -> Result<(f64, Vec<ScaleForward<T>>)> {
    let grouping = model.config.grouping;
    let m = grouping.num_stages();
    let c = model.config.channels;
    let mut total_bits = 0.0f64;
    let mut scales = Vec::with_capacity(h.codes.len());
    for i in 0..h.codes.len() {
        let coords = &h.levels[i];
        let codes = &h.codes[i];
        let n = coords.len();
        let (base, parent_codes, octants) = if i == 0 {
            let fm = prior_features(coords, None, model)?;
            (fm.features, Vec::new(), Vec::new())
        } else {
            let pidx = child_parent_indices(&h.levels[i - 1], coords)?;
            let fm = prior_features(coords, Some((&h.codes[i - 1], &pidx)), model)?;
            let pcodes = pidx.iter().map(|&p| h.codes[i - 1][p as usize]).collect();
            let octs = coords.iter().map(|&v| octant(v)).collect();
            (fm.features, pcodes, octs)
        };
        let nt = if model.config.neighbor_prior {
            Some(neighbor_table(coords, model.config.kernel_size))
        } else {
            None
        };
        let mut prefixes = Vec::with_capacity(m);
        let mut segments = Vec::with_capacity(m);
        let mut stages = Vec::with_capacity(m);
        for j in 0..m {
            let prefix: Vec<u16> = codes.iter().map(|&cd| grouping.prefix(cd, j)).collect();
            let segs: Vec<u8> = codes.iter().map(|&cd| grouping.segment(cd, j)).collect();
            let acts = stage_forward_acts(&base, n, &prefix, j, model, nt.as_ref())?;
            let s = 1usize << model.layout.stages[j].width;
            for (v, &seg) in segs.iter().enumerate() {
                total_bits -= (acts.probs[v * s + seg as usize].to_f64() + COST_EPS).log2();
            }
            prefixes.push(prefix);
            segments.push(segs);
            stages.push(acts);
        }
        debug_assert_eq!(base.len(), n * c);
        scales.push(ScaleForward { n, parent_codes, octants, nt, prefixes, segments, stages });
    }
    Ok((total_bits, scales))
}

/// Raw model bit cost of a hierarchy (Bpp numerator): total bits over all
/// scales and stages under the true-prefix forward pass.
pub fn hierarchy_bits<T: Scalar>(model: &Fop<T>, h: &Hierarchy) -> Result<f64> {
    Ok(hierarchy_forward(model, h)?.0)
}
