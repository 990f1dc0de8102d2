//! Contrastive training of the projection head over cached backbone
//! features.

mod adamw;
mod config;
mod features;

pub use adamw::{adamw_step, AdamWHyper, OptimizerState};
pub use config::TrainConfig;
pub use features::FeatureStore;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_pairs, ConfusionCounts};
use crate::ingest::{Manifest, Split};
use crate::model::{decide, head_snap, loss_gradients, DecisionThreshold, FeaturePair, HeadParams, Margin};
use crate::pairs::{PairPool, PairSample, PairStream};
use crate::rng::SplitMix64;

/// Stream id for the head initialisation draw.
const HEAD_INIT_STREAM: u64 = 0x6865_6164;
/// Stream id for validation pairs when no fold is held out.
const VALIDATION_STREAM: u64 = 0x7661_6c69;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub type1: f64,
    pub type2: f64,
    /// Share of this epoch's training pairs decided Same. Not part of the CSV.
    pub train_same_rate: f64,
}

/// Which fold of the pair stream is held out for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldSpec {
    pub k: usize,
    pub test_fold: usize,
}

impl FoldSpec {
    pub fn new(k: usize, test_fold: usize) -> Result<Self> {
        if k < 2 || test_fold >= k {
            return Err(Error::invalid(format!(
                "fold {test_fold} of {k} is not a valid selection"
            )));
        }
        Ok(Self { k, test_fold })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final head, rounded to checkpoint precision.
    pub head: HeadParams,
    pub logs: Vec<EpochLog>,
    /// Fresh train-fold and test-fold draws scored with `head`.
    pub final_train: ConfusionCounts,
    pub final_test: ConfusionCounts,
}

/// Where train and validation pairs come from.
enum PairSource<'m> {
    Folds {
        stream: PairStream<'m>,
        next_index: usize,
        fold: FoldSpec,
    },
    Split {
        train: PairStream<'m>,
        val: PairStream<'m>,
    },
}

impl<'m> PairSource<'m> {
    fn new(manifest: &'m Manifest, cfg: &TrainConfig, fold: Option<FoldSpec>) -> Result<Self> {
        let train = PairStream::new(manifest, Split::Train, cfg.p_same, cfg.seed)?;
        Ok(match fold {
            Some(fold) => PairSource::Folds {
                stream: train,
                next_index: 0,
                fold,
            },
            None => {
                let val_seed = SplitMix64::derive(cfg.seed, VALIDATION_STREAM).next_u64();
                let heldout_ok = PairPool::new(manifest, Split::Heldout).check(cfg.p_same).is_ok();
                let split = if heldout_ok { Split::Heldout } else { Split::Train };
                PairSource::Split {
                    train,
                    val: PairStream::new(manifest, split, cfg.p_same, val_seed)?,
                }
            }
        })
    }

    /// Pair i of the fold stream goes to fold i mod k. Draws until both
    /// buffers are full; pairs beyond a full buffer are dropped.
    fn draw(&mut self, n_train: usize, n_test: usize) -> (Vec<PairSample>, Vec<PairSample>) {
        match self {
            PairSource::Folds {
                stream,
                next_index,
                fold,
            } => {
                let mut train = Vec::with_capacity(n_train);
                let mut test = Vec::with_capacity(n_test);
                while train.len() < n_train || test.len() < n_test {
                    let pair = stream.next_pair();
                    let is_test = *next_index % fold.k == fold.test_fold;
                    *next_index += 1;
                    if is_test && test.len() < n_test {
                        test.push(pair);
                    } else if !is_test && train.len() < n_train {
                        train.push(pair);
                    }
                }
                (train, test)
            }
            PairSource::Split { train, val } => (
                train.take(n_train).collect(),
                val.take(n_test).collect(),
            ),
        }
    }
}

/// Initial head for a run; deterministic in the seed.
pub fn initial_head(feature_dim: usize, cfg: &TrainConfig) -> HeadParams {
    HeadParams::init(
        feature_dim,
        cfg.latent_size,
        SplitMix64::derive(cfg.seed, HEAD_INIT_STREAM).next_u64(),
    )
}

/// Trains from [`initial_head`].
pub fn train(
    manifest: &Manifest,
    features: &FeatureStore,
    cfg: &TrainConfig,
    fold: Option<FoldSpec>,
) -> Result<TrainOutcome> {
    train_from(manifest, features, cfg, fold, initial_head(features.dim(), cfg))
}

/// Per epoch: `batches_per_epoch` AdamW steps on fresh training pairs, then
/// one validation pass. Single-threaded and deterministic.
pub fn train_from(
    manifest: &Manifest,
    features: &FeatureStore,
    cfg: &TrainConfig,
    fold: Option<FoldSpec>,
    init: HeadParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !cfg.freeze_backbone {
        return Err(Error::Unsupported(
            "backbone fine-tuning; set freeze_backbone to true".to_owned(),
        ));
    }
    init.validate()?;
    if init.feature_dim() != features.dim() || init.latent_size() != cfg.latent_size {
        return Err(Error::Dimension {
            expected: features.dim(),
            actual: init.feature_dim(),
            context: "head input vs cached features",
        });
    }
    let margin = Margin::new(cfg.margin)?;
    let tau = DecisionThreshold::for_margin(margin);
    let mut source = PairSource::new(manifest, cfg, fold)?;
    let mut head = init;
    let shapes: Vec<usize> = head.tensors().iter().map(|t| t.len()).collect();
    let mut state = OptimizerState::new(&shapes);
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let (train_pairs, test_pairs) =
            source.draw(cfg.train_pairs_per_epoch(), cfg.test_pairs_per_epoch());
        let mut loss_sum = 0.0;
        let mut train_counts = ConfusionCounts::default();
        for (b, batch) in train_pairs.chunks(cfg.batch_size).enumerate() {
            let fp = feature_pairs(features, batch)?;
            let out = loss_gradients(&head, &fp, margin).map_err(|e| at(e, epoch, b))?;
            loss_sum += out.loss;
            for (d, pair) in out.distances.iter().zip(batch) {
                train_counts.record(pair.label, decide(*d, tau));
            }
            let grads = out.grads.tensors();
            let mut params = head.tensors_mut();
            adamw_step(&mut params, &grads, &mut state, cfg.learning_rate, cfg.weight_decay)
                .map_err(|e| at(e, epoch, b))?;
        }
        let val = evaluate_pairs(&head, features, &test_pairs, tau)?;
        let rates = val.rates()?;
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / cfg.batches_per_epoch as f64,
            train_acc: train_counts.rates()?.accuracy,
            val_acc: rates.accuracy,
            type1: rates.type1,
            type2: rates.type2,
            train_same_rate: (train_counts.tp + train_counts.fp) as f64 / train_counts.total() as f64,
        });
        log::debug!(
            "epoch {epoch}: loss {:.4} train acc {:.4} val acc {:.4}",
            loss_sum / cfg.batches_per_epoch as f64,
            logs[epoch - 1].train_acc,
            rates.accuracy
        );
    }

    // Optimisation runs in f64; the exported head is what a checkpoint holds.
    for t in head.tensors_mut() {
        t.iter_mut().for_each(|v| *v = head_snap(*v));
    }
    let (train_pairs, test_pairs) =
        source.draw(cfg.train_pairs_per_epoch(), cfg.test_pairs_per_epoch());
    Ok(TrainOutcome {
        final_train: evaluate_pairs(&head, features, &train_pairs, tau)?,
        final_test: evaluate_pairs(&head, features, &test_pairs, tau)?,
        head,
        logs,
    })
}

fn at(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { layer } => Error::NonFinite {
            layer: format!("{layer} at epoch {epoch}, batch {batch}"),
        },
        other => other,
    }
}

pub(crate) fn feature_pairs<'a>(
    features: &'a FeatureStore,
    pairs: &[PairSample],
) -> Result<Vec<FeaturePair<'a>>> {
    pairs
        .iter()
        .map(|p| {
            Ok(FeaturePair {
                a: features.get(&p.a)?,
                b: features.get(&p.b)?,
                label: p.label,
            })
        })
        .collect()
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_acc,type1,type2";

pub fn epoch_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(EPOCH_CSV_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            l.epoch, l.train_loss, l.train_acc, l.val_acc, l.type1, l.type2
        ));
    }
    out
}

pub fn write_epoch_csv(logs: &[EpochLog], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(epoch_csv(logs).as_bytes())
        .map_err(|e| Error::io(path, e))
}
