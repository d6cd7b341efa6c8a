//! Optimisation, evaluation and the ablation harness.

mod ablate;
mod adam;
mod schedule;

pub use ablate::{ablate, ablation_variants, write_ablation_csv, AblationRow, AblationVariant};
pub use adam::{Adam, BETA1, BETA2, EPS};
pub use schedule::ReduceOnPlateau;

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Model, OutputVars};
use crate::data::{augment, batch, AugmentOp, SegSample};
use crate::error::{ensure, Error, Result};
use crate::loss::hybrid_on_tape;
use crate::metrics::{confusion, Aggregation, MetricsReport, SampleMetrics};
use crate::nn::{Forward, Mode};
use crate::tape::Var;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub plateau_factor: f64,
    pub patience: usize,
    /// A monitored decrease must exceed this to count as improvement.
    pub min_delta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    pub aggregation: Aggregation,
    /// Each op adds one augmented copy of every training sample.
    pub augment: Vec<AugmentOp>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            plateau_factor: 0.1,
            patience: 10,
            min_delta: 1e-8,
            batch_size: 2,
            max_epochs: 100,
            seed: 0,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            aggregation: Aggregation::Macro,
            augment: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr0 > 0.0 && self.lr0.is_finite(), "lr0 must be positive, got {}", self.lr0);
        ensure!(
            self.plateau_factor > 0.0 && self.plateau_factor < 1.0,
            "plateau_factor must be in (0,1), got {}",
            self.plateau_factor
        );
        ensure!(self.patience >= 1, "patience must be >= 1");
        ensure!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure!(self.min_delta >= 0.0, "min_delta must be >= 0");
        ensure!(
            (0.0..=1.0).contains(&self.threshold),
            "threshold must be in [0,1], got {}",
            self.threshold
        );
        Ok(())
    }

    pub fn scheduler(&self) -> ReduceOnPlateau {
        ReduceOnPlateau::new(self.lr0, self.plateau_factor, self.patience, self.min_delta)
    }
}

/// `hybrid(mask2) + λ·hybrid(mask1)`, or `hybrid(mask1)` for a single network.
pub fn training_loss<T: Real>(f: &mut Forward<T>, out: &OutputVars, target: &Tensor<T>, lambda: f64) -> Result<Var> {
    let l1 = hybrid_on_tape(&mut f.tape, out.mask1, target)?;
    if out.net2_input.is_none() {
        return Ok(l1);
    }
    let l2 = hybrid_on_tape(&mut f.tape, out.mask2, target)?;
    let w = f.tape.scale(l1, T::of(lambda));
    f.tape.add(l2, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dsc: f64,
    pub val_iou: f64,
    pub val_precision: f64,
    pub val_recall: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.epochs {
            w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let epochs = r
            .deserialize()
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
        Ok(TrainLog {
            epochs,
            best_epoch: None,
        })
    }
}

/// Where to persist the best checkpoint and the epoch log as training runs.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

/// Mean training loss of one epoch over seed-shuffled batches.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut Adam<f32>,
    samples: &[SegSample],
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let lambda = model.config().deep_supervision_weight;
    let Model { network, params } = model;
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let items: Vec<&SegSample> = chunk.iter().map(|&i| &samples[i]).collect();
        let (x, y) = batch(&items)?;
        let mut f = Forward::new(params, Mode::Train);
        let xv = f.input(x);
        let out = network.forward(&mut f, xv)?;
        let loss = training_loss(&mut f, &out, &y, lambda)?;
        let value = f.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("training loss is {value}"),
            });
        }
        let grads = f.tape.backward(loss)?.into_params();
        drop(f);
        opt.update(params, &grads, lr).map_err(|e| Error::Diverged {
            epoch,
            detail: e.to_string(),
        })?;
        total += value * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Eval-mode training loss averaged over samples.
pub fn eval_loss(model: &Model, samples: &[SegSample], batch_size: usize) -> Result<f64> {
    ensure!(!samples.is_empty(), "cannot compute a loss over zero samples");
    let lambda = model.config().deep_supervision_weight;
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let items: Vec<&SegSample> = chunk.iter().collect();
        let (x, y) = batch(&items)?;
        let mut f = Forward::shared(&model.params, Mode::Eval);
        let xv = f.input(x);
        let out = model.network.forward(&mut f, xv)?;
        let loss = training_loss(&mut f, &out, &y, lambda)?;
        total += f.value(loss).item() as f64 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Per-sample metrics of mask 2 in eval mode.
pub fn evaluate(model: &Model, samples: &[SegSample], threshold: f64) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for s in samples {
        let (x, y) = batch(&[s])?;
        let out = model.predict(&x)?;
        report.push(SampleMetrics::new(s.id.clone(), confusion(&out.mask2, &y, threshold)?));
    }
    Ok(report)
}

fn expand(samples: &[SegSample], ops: &[AugmentOp]) -> Result<Vec<SegSample>> {
    let mut out = samples.to_vec();
    for op in ops {
        for s in samples {
            out.push(augment(s, *op)?);
        }
    }
    Ok(out)
}

/// Train with Adam under the plateau schedule, keeping the parameters of
/// the epoch with the lowest monitored loss. The monitored loss is the
/// validation loss, or the training loss when `val` is empty.
///
/// On divergence the best checkpoint written so far stays on disk and
/// `model` is restored to the best parameters before the error is returned.
pub fn train(
    model: &mut Model,
    train_set: &[SegSample],
    val: &[SegSample],
    cfg: &TrainConfig,
    artifacts: &Artifacts,
) -> Result<TrainLog> {
    cfg.validate()?;
    ensure!(!train_set.is_empty(), "training set is empty");
    let samples = expand(train_set, &cfg.augment)?;
    let mut opt = Adam::new();
    let mut sched = cfg.scheduler();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, crate::params::ParamStore<f32>)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = sched.lr;
        let train_loss = match train_epoch(model, &mut opt, &samples, cfg, epoch, lr) {
            Ok(v) => v,
            Err(e) => {
                if let Some((_, p)) = &best {
                    model.params = p.clone();
                }
                write_log(&log, artifacts)?;
                return Err(e);
            }
        };
        let (val_loss, scores) = if val.is_empty() {
            (train_loss, evaluate(model, &samples, cfg.threshold)?.aggregate(cfg.aggregation))
        } else {
            (
                eval_loss(model, val, cfg.batch_size)?,
                evaluate(model, val, cfg.threshold)?.aggregate(cfg.aggregation),
            )
        };
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_dsc: scores.dsc,
            val_iou: scores.iou,
            val_precision: scores.precision,
            val_recall: scores.recall,
        });
        if val_loss.is_finite() && best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params.clone()));
            log.best_epoch = Some(epoch);
            if let Some(path) = &artifacts.checkpoint {
                model.save(path)?;
            }
        }
        sched.observe(val_loss);
        write_log(&log, artifacts)?;
    }
    if let Some((_, p)) = best {
        model.params = p;
    }
    Ok(log)
}

fn write_log(log: &TrainLog, artifacts: &Artifacts) -> Result<()> {
    if let Some(path) = &artifacts.log {
        log.write_csv(std::fs::File::create(path)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::NetworkConfig;
    use crate::data::{generate_synthetic, ShapeKind};

    fn tiny() -> (Model, Vec<SegSample>) {
        let cfg = NetworkConfig {
            levels: 2,
            base_channels: 4,
            input_size: (16, 16),
            in_channels: 1,
            ..Default::default()
        };
        let data = generate_synthetic(4, (16, 16), ShapeKind::Disk, 1, 3).unwrap();
        (Model::build(&cfg).unwrap(), data)
    }

    #[test]
    fn loss_decreases_over_first_adam_steps() {
        let (mut model, data) = tiny();
        let items: Vec<&SegSample> = data.iter().take(2).collect();
        let (x, y) = batch(&items).unwrap();
        let mut opt = Adam::new();
        let mut prev = f64::INFINITY;
        for _ in 0..5 {
            let Model { network, params } = &mut model;
            let mut f = Forward::new(params, Mode::Train);
            let xv = f.input(x.clone());
            let out = network.forward(&mut f, xv).unwrap();
            let loss = training_loss(&mut f, &out, &y, 1.0).unwrap();
            let v = f.value(loss).item() as f64;
            assert!(v < prev, "{v} !< {prev}");
            prev = v;
            let g = f.tape.backward(loss).unwrap().into_params();
            drop(f);
            opt.update(params, &g, 1e-3).unwrap();
        }
    }

    #[test]
    fn same_seed_same_log_and_best_params_restored() {
        let cfg = TrainConfig {
            lr0: 1e-3,
            max_epochs: 3,
            seed: 5,
            ..Default::default()
        };
        let run = || {
            let (mut m, data) = tiny();
            let log = train(&mut m, &data[..3], &data[3..], &cfg, &Artifacts::default()).unwrap();
            (m, log)
        };
        let (m1, a) = run();
        let (_, b) = run();
        assert_eq!(a.epochs, b.epochs);
        let best = a.best_epoch.unwrap();
        let (_, data) = tiny();
        let v = eval_loss(&m1, &data[3..], 2).unwrap();
        assert_eq!(v, a.epochs[best].val_loss);
        let lrs: Vec<f64> = a.epochs.iter().map(|e| e.lr).collect();
        let hist: Vec<f64> = a.epochs.iter().map(|e| e.val_loss).collect();
        assert_eq!(lrs, ReduceOnPlateau::replay(1e-3, 0.1, 10, 1e-8, &hist));
    }

    #[test]
    fn epoch_csv_columns() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 0,
                lr: 1e-4,
                train_loss: 1.0,
                val_loss: 1.1,
                val_dsc: 0.5,
                val_iou: 0.3,
                val_precision: 0.4,
                val_recall: 0.6,
            }],
            best_epoch: Some(0),
        };
        let text = log.to_csv_string().unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "epoch,lr,train_loss,val_loss,val_dsc,val_iou,val_precision,val_recall"
        );
        assert_eq!(TrainLog::read_csv(text.as_bytes()).unwrap().epochs, log.epochs);
    }

    #[test]
    fn divergence_restores_best_and_keeps_checkpoint() {
        let (mut model, data) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts {
            checkpoint: Some(dir.path().join("best.dunp")),
            log: Some(dir.path().join("log.csv")),
        };
        let ok = TrainConfig {
            lr0: 1e-3,
            max_epochs: 1,
            ..Default::default()
        };
        train(&mut model, &data[..2], &[], &ok, &art).unwrap();
        let saved = std::fs::read(art.checkpoint.as_ref().unwrap()).unwrap();
        // Poison a weight so the next epoch produces a NaN loss.
        let id = model.params.trainable_ids().next().unwrap();
        model.params.get_mut(id).data_mut()[0] = f32::NAN;
        let err = train(&mut model, &data[..2], &[], &ok, &art).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, .. }), "{err}");
        assert_eq!(std::fs::read(art.checkpoint.as_ref().unwrap()).unwrap(), saved);
        assert!(Model::load(art.checkpoint.as_ref().unwrap()).is_ok());
    }
}
