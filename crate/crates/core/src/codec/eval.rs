//! Corpus evaluation and the five-configuration ablation harness.
//!
//! Evaluation bpp charges the whole stream (header included) to the cloud,
//! i.e. file size over points. Ablation bpp uses payload bits only so the
//! constant header does not dilute model comparisons.

use crate::codec::{decode_with_diagnostics, encode};
use crate::error::{Error, Result};
use crate::geometry::{build_hierarchy, QuantizedCloud};
use crate::model::{train_step, AdamState, Fop, FopModel, Grouping, Hyper, ModelConfig};

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub name: String,
    pub points: u64,
    pub bpp: f64,
    pub enc_s: f64,
    pub dec_s: f64,
}

#[derive(Debug, Clone)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub mean_bpp: f64,
    pub mean_enc_s: f64,
    pub mean_dec_s: f64,
}

impl EvalTable {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_bpp = rows.iter().map(|r| r.bpp).sum::<f64>() / n;
        let mean_enc_s = rows.iter().map(|r| r.enc_s).sum::<f64>() / n;
        let mean_dec_s = rows.iter().map(|r| r.dec_s).sum::<f64>() / n;
        EvalTable { rows, mean_bpp, mean_enc_s, mean_dec_s }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,points,bpp,enc_s,dec_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.4},{:.4}\n",
                r.name, r.points, r.bpp, r.enc_s, r.dec_s
            ));
        }
        let total_points: u64 = self.rows.iter().map(|r| r.points).sum();
        out.push_str(&format!(
            "mean,{},{:.6},{:.4},{:.4}\n",
            total_points, self.mean_bpp, self.mean_enc_s, self.mean_dec_s
        ));
        out
    }
}

/// Encodes and decodes every cloud, verifying losslessness and table
/// agreement, and reports whole-stream bpp plus wall times.
pub fn evaluate(corpus: &[(String, QuantizedCloud)], model: &FopModel) -> Result<EvalTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rows = Vec::with_capacity(corpus.len());
    for (name, cloud) in corpus {
        let (stream, report) = encode(cloud, model)?;
        let (back, diag) = decode_with_diagnostics(&stream, model)?;
        if &back != cloud {
            return Err(Error::CorruptStream(format!(
                "decoded cloud differs from input for '{}'",
                name
            )));
        }
        if diag.table_digest != report.table_digest {
            return Err(Error::CorruptStream(format!(
                "encoder/decoder frequency tables diverged for '{}'",
                name
            )));
        }
        rows.push(EvalRow {
            name: name.clone(),
            points: report.point_count,
            bpp: stream.len() as f64 * 8.0 / report.point_count as f64,
            enc_s: report.enc_seconds,
            dec_s: diag.dec_seconds,
        });
    }
    Ok(EvalTable::from_rows(rows))
}

/// The five ablation configurations, in presentation order: grouping
/// granularity sweeps 2-stage to 4-stage, NP toggles the neighbor prior,
/// and UE is the non-uniform 1-1-2-4 grouping.
pub fn ablation_configs(base: ModelConfig) -> [(&'static str, ModelConfig); 5] {
    [
        (
            "2stage",
            ModelConfig { grouping: Grouping::TwoStage, neighbor_prior: false, ..base },
        ),
        (
            "2stage+np",
            ModelConfig { grouping: Grouping::TwoStage, neighbor_prior: true, ..base },
        ),
        (
            "4stage",
            ModelConfig { grouping: Grouping::FourStageUniform, neighbor_prior: false, ..base },
        ),
        (
            "4stage+np",
            ModelConfig { grouping: Grouping::FourStageUniform, neighbor_prior: true, ..base },
        ),
        (
            "4stage+ue+np",
            ModelConfig { grouping: Grouping::FourStageNonUniform, neighbor_prior: true, ..base },
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub points: u64,
    /// Payload bpp per configuration, in ablation_configs order.
    pub bpp: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub config_names: Vec<String>,
    pub rows: Vec<AblationRow>,
    /// Mean payload bpp per configuration.
    pub mean_bpp: Vec<f64>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,points");
        for c in &self.config_names {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.name, r.points));
            for b in &r.bpp {
                out.push_str(&format!(",{:.6}", b));
            }
            out.push('\n');
        }
        let total_points: u64 = self.rows.iter().map(|r| r.points).sum();
        out.push_str(&format!("mean,{}", total_points));
        for b in &self.mean_bpp {
            out.push_str(&format!(",{:.6}", b));
        }
        out.push('\n');
        out
    }
}

/// Trains every ablation configuration with an identical budget (iters
/// Adam steps cycling over the training clouds, same seed) and evaluates
/// payload bpp on the evaluation corpus.
pub fn run_ablation(
    train_corpus: &[QuantizedCloud],
    eval_corpus: &[(String, QuantizedCloud)],
    base: ModelConfig,
    iters: usize,
    seed: u64,
) -> Result<AblationTable> {
    if train_corpus.is_empty() || eval_corpus.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let configs = ablation_configs(base);
    let batches: Vec<_> =
        train_corpus.iter().map(build_hierarchy).collect::<Result<Vec<_>>>()?;
    let mut per_config_bpp: Vec<Vec<f64>> = Vec::with_capacity(configs.len());
    for (_, cfg) in &configs {
        let mut model = Fop::seeded(*cfg, seed)?;
        let mut state = AdamState::new(model.params.len());
        let hp = Hyper::default();
        for it in 0..iters {
            train_step(&mut model, &batches[it % batches.len()], &mut state, &hp)?;
        }
        let mut bpps = Vec::with_capacity(eval_corpus.len());
        for (name, cloud) in eval_corpus {
            let (stream, report) = encode(cloud, &model)?;
            let back = crate::codec::decode(&stream, &model)?;
            if &back != cloud {
                return Err(Error::CorruptStream(format!(
                    "decoded cloud differs from input for '{}'",
                    name
                )));
            }
            bpps.push(report.bpp);
        }
        per_config_bpp.push(bpps);
    }
    let rows: Vec<AblationRow> = eval_corpus
        .iter()
        .enumerate()
        .map(|(i, (name, cloud))| AblationRow {
            name: name.clone(),
            points: cloud.coords.len() as u64,
            bpp: per_config_bpp.iter().map(|c| c[i]).collect(),
        })
        .collect();
    let mean_bpp: Vec<f64> = (0..configs.len())
        .map(|c| per_config_bpp[c].iter().sum::<f64>() / eval_corpus.len() as f64)
        .collect();
    Ok(AblationTable {
        config_names: configs.iter().map(|(n, _)| n.to_string()).collect(),
        rows,
        mean_bpp,
    })
}
