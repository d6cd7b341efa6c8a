use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, Artifacts, TrainConfig};
use crate::arch::{Model, NetworkConfig};
use crate::data::Split;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub mkrc_on: bool,
    pub tam_on: bool,
    pub tag_on: bool,
    pub dual: bool,
}

impl AblationVariant {
    pub fn apply(&self, base: &NetworkConfig) -> NetworkConfig {
        NetworkConfig {
            mkrc_on: self.mkrc_on,
            tam_on: self.tam_on,
            tag_on: self.tag_on,
            dual: self.dual,
            ..base.clone()
        }
    }
}

const fn variant(name: &'static str, mkrc_on: bool, tam_on: bool, tag_on: bool, dual: bool) -> AblationVariant {
    AblationVariant {
        name,
        mkrc_on,
        tam_on,
        tag_on,
        dual,
    }
}

/// Baseline (one network, no MKRC/TAM/TAG), five removals, then the full model.
pub fn ablation_variants() -> [AblationVariant; 7] {
    [
        variant("baseline", false, false, false, false),
        variant("w/o MKRC", false, true, true, true),
        variant("w/o TAM", true, false, true, true),
        variant("w/o TAG", true, true, false, true),
        variant("w/o TAM&MKRC", false, false, true, true),
        variant("w/o TAM&MKRC&TAG", false, false, false, true),
        variant("full", true, true, true, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mkrc_on: bool,
    pub tam_on: bool,
    pub tag_on: bool,
    pub dual: bool,
    pub param_count: usize,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub dsc: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Train every variant from the same seed and score it on the test split
/// (validation split when the test split is empty).
pub fn ablate(base: &NetworkConfig, cfg: &TrainConfig, data: &Split) -> Result<Vec<AblationRow>> {
    let held_out = if data.test.is_empty() { &data.val } else { &data.test };
    ablation_variants()
        .iter()
        .map(|v| {
            let mut model = Model::build(&v.apply(base))?;
            let log = train(&mut model, &data.train, &data.val, cfg, &Artifacts::default())?;
            let scores = if held_out.is_empty() {
                evaluate(&model, &data.train, cfg.threshold)?
            } else {
                evaluate(&model, held_out, cfg.threshold)?
            }
            .aggregate(cfg.aggregation);
            Ok(AblationRow {
                variant: v.name.to_string(),
                mkrc_on: v.mkrc_on,
                tam_on: v.tam_on,
                tag_on: v.tag_on,
                dual: v.dual,
                param_count: model.param_count(),
                epochs: log.epochs.len(),
                final_train_loss: log.epochs.last().map_or(f64::NAN, |e| e.train_loss),
                best_val_loss: log.best_epoch.map_or(f64::NAN, |b| log.epochs[b].val_loss),
                dsc: scores.dsc,
                iou: scores.iou,
                precision: scores.precision,
                recall: scores.recall,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_is_smaller_than_full() {
        let base = NetworkConfig {
            levels: 2,
            base_channels: 4,
            input_size: (16, 16),
            in_channels: 1,
            ..Default::default()
        };
        let vs = ablation_variants();
        assert_eq!(vs.len(), 7);
        let full = Model::build(&vs[6].apply(&base)).unwrap().param_count();
        assert_eq!(full, Model::build(&base).unwrap().param_count());
        for v in &vs[..6] {
            assert!(Model::build(&v.apply(&base)).unwrap().param_count() < full, "{}", v.name);
        }
    }
}
