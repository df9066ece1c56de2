//! End-to-end codec: container header, coarse-to-fine scale loop with
//! whole-scale stage passes, and bit accounting.
//!
//! Scheduling contract: at each scale, stage j runs over every voxel (one
//! forward pass) and all of that stage's segments are entropy-coded in
//! lexicographic voxel order before stage j+1 starts. Decoded bits
//! therefore reach neighboring voxels' convolutions in the next pass on
//! both sides of the pipe, which is what makes encode and decode replay
//! identical float computations.

mod eval;

pub use eval::{
    ablation_configs, evaluate, run_ablation, AblationTable, EvalRow, EvalTable,
};

use std::time::Instant;

use crate::coder::{quantize_probs, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::geometry::{
    build_hierarchy, child_parent_indices, expand, QuantizedCloud, Voxel,
};
use crate::hash::Fnv64;
use crate::model::{
    neighbor_table, prior_features, stage_forward_acts, FopModel, Grouping, COST_EPS,
};

pub const STREAM_MAGIC: &[u8; 4] = b"GPCG";
pub const STREAM_VERSION: u16 = 1;
/// magic 4 + version 2 + step 8 + origin 24 + points 8 + scales 2 +
/// grouping 1 + neighbor-prior 1 + digest 8.
pub const HEADER_LEN: usize = 58;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub version: u16,
    pub step: f64,
    pub origin: [i64; 3],
    pub point_count: u64,
    /// Number of coded scales (octree depth).
    pub scale_count: u16,
    pub grouping: Grouping,
    pub neighbor_prior: bool,
    pub model_digest: u64,
}

impl StreamHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(STREAM_MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..14].copy_from_slice(&self.step.to_le_bytes());
        for (i, &o) in self.origin.iter().enumerate() {
            b[14 + 8 * i..22 + 8 * i].copy_from_slice(&o.to_le_bytes());
        }
        b[38..46].copy_from_slice(&self.point_count.to_le_bytes());
        b[46..48].copy_from_slice(&self.scale_count.to_le_bytes());
        b[48] = self.grouping.flag();
        b[49] = self.neighbor_prior as u8;
        b[50..58].copy_from_slice(&self.model_digest.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::CorruptStream("stream shorter than header".into()));
        }
        if &b[0..4] != STREAM_MAGIC {
            return Err(Error::CorruptStream("bad stream magic".into()));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != STREAM_VERSION {
            return Err(Error::CorruptStream(format!("unsupported stream version {}", version)));
        }
        let step = f64::from_le_bytes(b[6..14].try_into().unwrap());
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::CorruptStream("invalid quantization step".into()));
        }
        let mut origin = [0i64; 3];
        for (i, o) in origin.iter_mut().enumerate() {
            *o = i64::from_le_bytes(b[14 + 8 * i..22 + 8 * i].try_into().unwrap());
        }
        let point_count = u64::from_le_bytes(b[38..46].try_into().unwrap());
        let scale_count = u16::from_le_bytes(b[46..48].try_into().unwrap());
        let grouping = Grouping::from_flag(b[48])
            .map_err(|_| Error::CorruptStream(format!("unknown grouping flag {}", b[48])))?;
        let neighbor_prior = match b[49] {
            0 => false,
            1 => true,
            v => return Err(Error::CorruptStream(format!("bad neighbor-prior flag {}", v))),
        };
        let model_digest = u64::from_le_bytes(b[50..58].try_into().unwrap());
        Ok(StreamHeader {
            version,
            step,
            origin,
            point_count,
            scale_count,
            grouping,
            neighbor_prior,
            model_digest,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncodeReport {
    pub point_count: u64,
    pub header_bytes: usize,
    pub payload_bytes: usize,
    /// Payload size in bits.
    pub total_bits: f64,
    /// total_bits / point_count.
    pub bpp: f64,
    /// Raw model cost: sum of -log2(p + 1e-10) over all coded segments.
    pub model_bits: f64,
    pub model_bpp: f64,
    /// Cost under the quantized tables actually fed to the range coder.
    pub quantized_bits: f64,
    /// Quantized bits per scale and stage; sums to quantized_bits.
    pub scale_stage_bits: Vec<Vec<f64>>,
    /// Running digest over every frequency table the encoder used.
    pub table_digest: u64,
    pub enc_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct DecodeDiagnostics {
    /// Running digest over every frequency table the decoder used; equals
    /// the encoder's digest when both sides agreed at every symbol.
    pub table_digest: u64,
    pub dec_seconds: f64,
}

pub fn encode(cloud: &QuantizedCloud, model: &FopModel) -> Result<(Vec<u8>, EncodeReport)> {
    let t0 = Instant::now();
    let h = build_hierarchy(cloud)?;
    let grouping = model.config.grouping;
    let widths = grouping.widths();
    let m = widths.len();
    let header = StreamHeader {
        version: STREAM_VERSION,
        step: cloud.step,
        origin: cloud.origin,
        point_count: h.point_count() as u64,
        scale_count: h.codes.len() as u16,
        grouping,
        neighbor_prior: model.config.neighbor_prior,
        model_digest: model.digest(),
    };
    let mut enc = RangeEncoder::new();
    let mut tdigest = Fnv64::new();
    let mut model_bits = 0.0f64;
    let mut quantized_bits = 0.0f64;
    let mut scale_stage_bits = vec![vec![0.0f64; m]; h.codes.len()];
    for i in 0..h.codes.len() {
        let coords = &h.levels[i];
        let codes = &h.codes[i];
        let n = coords.len();
        let base = if i == 0 {
            prior_features(coords, None, model)?
        } else {
            let pidx = child_parent_indices(&h.levels[i - 1], coords)?;
            prior_features(coords, Some((&h.codes[i - 1], &pidx)), model)?
        };
        let nt = if model.config.neighbor_prior {
            Some(neighbor_table(coords, model.config.kernel_size))
        } else {
            None
        };
        let mut prefix = vec![0u16; n];
        for j in 0..m {
            let acts = stage_forward_acts(&base.features, n, &prefix, j, model, nt.as_ref())?;
            let s = 1usize << widths[j];
            for v in 0..n {
                let row = &acts.probs[v * s..][..s];
                let table = quantize_probs(row);
                table.digest_into(&mut tdigest);
                let seg = grouping.segment(codes[v], j) as usize;
                enc.encode(&table, seg);
                let qb = table.cost_bits(seg);
                quantized_bits += qb;
                scale_stage_bits[i][j] += qb;
                model_bits -= (row[seg] as f64 + COST_EPS).log2();
                prefix[v] = (prefix[v] << widths[j]) | seg as u16;
            }
        }
    }
    let payload = enc.finish();
    let mut stream = Vec::with_capacity(HEADER_LEN + payload.len());
    stream.extend_from_slice(&header.to_bytes());
    stream.extend_from_slice(&payload);
    let n_points = header.point_count as f64;
    let total_bits = payload.len() as f64 * 8.0;
    let report = EncodeReport {
        point_count: header.point_count,
        header_bytes: HEADER_LEN,
        payload_bytes: payload.len(),
        total_bits,
        bpp: total_bits / n_points,
        model_bits,
        model_bpp: model_bits / n_points,
        quantized_bits,
        scale_stage_bits,
        table_digest: tdigest.finish(),
        enc_seconds: t0.elapsed().as_secs_f64(),
    };
    Ok((stream, report))
}

pub fn decode(stream: &[u8], model: &FopModel) -> Result<QuantizedCloud> {
    decode_with_diagnostics(stream, model).map(|(c, _)| c)
}

pub fn decode_with_diagnostics(
    stream: &[u8],
    model: &FopModel,
) -> Result<(QuantizedCloud, DecodeDiagnostics)> {
    let t0 = Instant::now();
    let header = StreamHeader::parse(stream)?;
    if header.model_digest != model.digest() {
        return Err(Error::WrongModel);
    }
    if header.grouping != model.config.grouping
        || header.neighbor_prior != model.config.neighbor_prior
    {
        return Err(Error::ConfigMismatch(
            "stream grouping/neighbor-prior flags do not match the model".into(),
        ));
    }
    let n_expect = header.point_count as usize;
    if n_expect == 0 {
        return Err(Error::CorruptStream("zero point count".into()));
    }
    let scales = header.scale_count as usize;
    if scales == 0 || scales > 31 {
        return Err(Error::CorruptStream(format!("scale count {} out of range", scales)));
    }
    let grouping = model.config.grouping;
    let widths = grouping.widths();
    let m = widths.len();
    let mut dec = RangeDecoder::new(&stream[HEADER_LEN..])?;
    let mut tdigest = Fnv64::new();
    let mut level: Vec<Voxel> = vec![[0, 0, 0]];
    let mut prev: Option<(Vec<Voxel>, Vec<u8>)> = None;
    for _ in 0..scales {
        let n = level.len();
        let base = match &prev {
            None => prior_features(&level, None, model)?,
            Some((pl, pc)) => {
                let pidx = child_parent_indices(pl, &level)?;
                prior_features(&level, Some((pc, &pidx)), model)?
            }
        };
        let nt = if model.config.neighbor_prior {
            Some(neighbor_table(&level, model.config.kernel_size))
        } else {
            None
        };
        let mut prefix = vec![0u16; n];
        for j in 0..m {
            let acts = stage_forward_acts(&base.features, n, &prefix, j, model, nt.as_ref())?;
            let s = 1usize << widths[j];
            for (v, p) in prefix.iter_mut().enumerate() {
                let table = quantize_probs(&acts.probs[v * s..][..s]);
                table.digest_into(&mut tdigest);
                let seg = dec.decode(&table)?;
                *p = (*p << widths[j]) | seg as u16;
            }
        }
        let codes: Vec<u8> = prefix.iter().map(|&p| p as u8).collect();
        if codes.contains(&0) {
            return Err(Error::CorruptStream("decoded an empty occupancy code".into()));
        }
        let next = expand(&level, &codes)?;
        if next.len() > n_expect {
            return Err(Error::CorruptStream(
                "decoded level exceeds declared point count".into(),
            ));
        }
        prev = Some((std::mem::take(&mut level), codes));
        level = next;
    }
    if level.len() != n_expect {
        return Err(Error::CorruptStream(format!(
            "decoded {} points, header declares {}",
            level.len(),
            n_expect
        )));
    }
    let cloud = QuantizedCloud { coords: level, step: header.step, origin: header.origin };
    let diag =
        DecodeDiagnostics { table_digest: tdigest.finish(), dec_seconds: t0.elapsed().as_secs_f64() };
    Ok((cloud, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quantize;
    use crate::io::{generate, SyntheticSpec};
    use crate::model::{Fop, ModelConfig};

    fn zero_model() -> FopModel {
        Fop::zeroed(ModelConfig::desk()).unwrap()
    }

    fn quantized(spec: &SyntheticSpec, step: f64) -> QuantizedCloud {
        quantize(&generate(spec).positions, step).unwrap()
    }

    fn clustered_spec(seed: u64, per_cluster: usize) -> SyntheticSpec {
        SyntheticSpec {
            clusters: 8,
            points_per_cluster: (per_cluster, per_cluster),
            sigma: 2.0,
            extent: 200.0,
            background_fraction: 0.1,
            seed,
        }
    }

    #[test]
    fn header_round_trip() {
        let h = StreamHeader {
            version: STREAM_VERSION,
            step: 0.001,
            origin: [-40, 7, 123456789],
            point_count: 987654,
            scale_count: 17,
            grouping: Grouping::FourStageNonUniform,
            neighbor_prior: true,
            model_digest: 0xDEADBEEF12345678,
        };
        let b = h.to_bytes();
        assert_eq!(b.len(), HEADER_LEN);
        assert_eq!(StreamHeader::parse(&b).unwrap(), h);
        let mut bad = b;
        bad[4] = 9;
        assert!(matches!(StreamHeader::parse(&bad), Err(Error::CorruptStream(_))));
    }

    #[test]
    fn single_voxel_cloud_zero_model() {
        let model = zero_model();
        let cloud = quantize(&[[5.0, 5.0, 5.0]], 1.0).unwrap();
        let (stream, report) = encode(&cloud, &model).unwrap();
        // One code (value 1) at 8 uniform bits, plus coder flush.
        assert!((report.model_bits - 8.0).abs() < 1e-6);
        assert_eq!(report.header_bytes, HEADER_LEN);
        assert!(report.payload_bytes >= 1 && report.payload_bytes <= 9);
        let back = decode(&stream, &model).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn full_cube_is_one_bpp_under_the_uniform_model() {
        let model = zero_model();
        let mut pts = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let cloud = quantize(&pts, 1.0).unwrap();
        let (stream, report) = encode(&cloud, &model).unwrap();
        // One code 255 costs 8 uniform bits for 8 points: exactly 1 bpp.
        assert!((report.model_bpp - 1.0).abs() < 1e-7, "model bpp {}", report.model_bpp);
        assert_eq!(decode(&stream, &model).unwrap(), cloud);
    }

    #[test]
    fn clustered_cloud_round_trips_with_consistent_accounting() {
        let model = Fop::seeded(ModelConfig::desk(), 3).unwrap();
        let cloud = quantized(&clustered_spec(3, 1250), 0.5);
        assert!(cloud.coords.len() > 5000);
        let (stream, report) = encode(&cloud, &model).unwrap();
        let (back, diag) = decode_with_diagnostics(&stream, &model).unwrap();
        assert_eq!(back, cloud);
        // Encoder and decoder built identical frequency tables.
        assert_eq!(diag.table_digest, report.table_digest);
        // bpp is defined as payload bits per point.
        let n = report.point_count as f64;
        assert!((report.bpp - report.payload_bytes as f64 * 8.0 / n).abs() < 1e-12);
        // Payload tracks the quantized cross-entropy within the flush slack.
        assert!(report.total_bits <= report.quantized_bits + 64.0);
        assert!(report.total_bits >= report.quantized_bits - 8.0);
        // Breakdown sums to the quantized total.
        let sum: f64 = report.scale_stage_bits.iter().flatten().sum();
        assert!((sum - report.quantized_bits).abs() < 1e-6);
    }

    #[test]
    fn all_config_variants_round_trip() {
        let base = ModelConfig { channels: 4, ..ModelConfig::desk() };
        let cloud = quantized(&clustered_spec(11, 120), 1.0);
        for cfg in [
            base,
            ModelConfig { neighbor_prior: false, ..base },
            ModelConfig { stage_refresh: false, ..base },
            ModelConfig { grouping: Grouping::TwoStage, ..base },
            ModelConfig { grouping: Grouping::FourStageUniform, ..base },
        ] {
            let model = Fop::seeded(cfg, 21).unwrap();
            let (stream, report) = encode(&cloud, &model).unwrap();
            let (back, diag) = decode_with_diagnostics(&stream, &model).unwrap();
            assert_eq!(back, cloud, "config {:?}", cfg);
            assert_eq!(diag.table_digest, report.table_digest);
        }
    }

    #[test]
    fn truncated_stream_is_corrupt_not_partial() {
        let model = zero_model();
        let cloud = quantized(&clustered_spec(5, 150), 1.0);
        let (stream, _) = encode(&cloud, &model).unwrap();
        for cut in [stream.len() / 2, HEADER_LEN + 2, HEADER_LEN, 10] {
            let err = decode(&stream[..cut], &model).unwrap_err();
            assert!(
                matches!(err, Error::CorruptStream(_)),
                "cut {} gave {:?}",
                cut,
                err
            );
        }
    }

    #[test]
    fn wrong_model_is_rejected_before_symbols() {
        let model_a = Fop::seeded(ModelConfig::desk(), 1).unwrap();
        let model_b = Fop::seeded(ModelConfig::desk(), 2).unwrap();
        let cloud = quantized(&clustered_spec(7, 100), 1.0);
        let (stream, _) = encode(&cloud, &model_a).unwrap();
        assert!(matches!(decode(&stream, &model_b), Err(Error::WrongModel)));
        // Same digest path: truncate payload to just the header so any
        // symbol read would fail; WrongModel must win over CorruptStream.
        assert!(matches!(decode(&stream[..HEADER_LEN], &model_b), Err(Error::WrongModel)));
    }

    #[test]
    fn decode_enforces_declared_point_count() {
        let model = zero_model();
        let cloud = quantized(&clustered_spec(9, 80), 1.0);
        let (stream, _) = encode(&cloud, &model).unwrap();
        let mut tampered = stream.clone();
        // Lower the declared point count; decode must notice.
        let n = u64::from_le_bytes(stream[38..46].try_into().unwrap());
        tampered[38..46].copy_from_slice(&(n - 1).to_le_bytes());
        assert!(matches!(decode(&tampered, &model), Err(Error::CorruptStream(_))));
    }

    #[test]
    fn trained_model_beats_the_uniform_baseline_on_its_training_cloud() {
        use crate::model::{train_step, AdamState, Hyper};
        let cloud = quantized(&clustered_spec(13, 400), 1.0);
        let h = build_hierarchy(&cloud).unwrap();
        let mut model = Fop::seeded(ModelConfig::desk(), 0).unwrap();
        let mut state = AdamState::new(model.params.len());
        for _ in 0..60 {
            train_step(&mut model, &h, &mut state, &Hyper::default()).unwrap();
        }
        let zero = zero_model();
        let (_, base_report) = encode(&cloud, &zero).unwrap();
        let (stream, report) = encode(&cloud, &model).unwrap();
        assert!(report.bpp < base_report.bpp, "{} !< {}", report.bpp, base_report.bpp);
        assert_eq!(decode(&stream, &model).unwrap(), cloud);
    }
}
