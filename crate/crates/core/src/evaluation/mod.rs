//! Confusion accounting, k-fold cross-validation, held-out evaluation and
//! report emission.

mod metrics;
mod report;

pub use metrics::{metrics, ConfusionCounts, MetricsReport};
pub use report::{emit_report, smooth_logs, write_report, CrossValReport, HeldoutSummary, SMOOTHING_WINDOW};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{Manifest, Split};
use crate::model::{decide, distance, DecisionThreshold, HeadParams};
use crate::pairs::{pair_stream, Label, PairPool, PairSample};
use crate::rng::SplitMix64;
use crate::training::{train, EpochLog, FeatureStore, FoldSpec, TrainConfig};

/// Stream id for the held-out evaluation pairs.
const HELDOUT_STREAM: u64 = 0x6865_6c64;

/// Distance of every pair under `head`, in input order.
pub fn pair_distances(head: &HeadParams, features: &FeatureStore, pairs: &[PairSample]) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| {
            let a = head.forward(features.get(&p.a)?)?;
            let b = head.forward(features.get(&p.b)?)?;
            distance(&a, &b)
        })
        .collect()
}

/// Tally of `decide(d, tau)` against the true labels.
pub fn evaluate_pairs(
    head: &HeadParams,
    features: &FeatureStore,
    pairs: &[PairSample],
    tau: DecisionThreshold,
) -> Result<ConfusionCounts> {
    let distances = pair_distances(head, features, pairs)?;
    let mut counts = ConfusionCounts::default();
    for (d, p) in distances.into_iter().zip(pairs) {
        counts.record(p.label, decide(d, tau));
    }
    Ok(counts)
}

pub fn evaluate(
    head: &HeadParams,
    features: &FeatureStore,
    pairs: &[PairSample],
    tau: DecisionThreshold,
) -> Result<(ConfusionCounts, MetricsReport)> {
    if pairs.is_empty() {
        return Err(Error::invalid("evaluation needs at least one pair"));
    }
    let counts = evaluate_pairs(head, features, pairs, tau)?;
    Ok((counts, metrics(counts)?))
}

/// Threshold maximising F1 over scored pairs. Candidates sit midway between
/// consecutive distinct distances, plus one above the largest; ties keep the
/// smaller threshold.
pub fn calibrate_threshold(scored: &[(f64, Label)]) -> Result<(DecisionThreshold, f64)> {
    if scored.is_empty() {
        return Err(Error::invalid("calibration needs at least one pair"));
    }
    let mut ds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    if ds.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid("distances must be finite and non-negative"));
    }
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    let mut candidates: Vec<f64> = ds.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    candidates.insert(0, 0.5 * ds[0]);
    candidates.push(ds[ds.len() - 1] + 1.0);
    let mut best = (f64::NAN, -1.0);
    for tau in candidates {
        let t = DecisionThreshold::new(tau)?;
        let mut c = ConfusionCounts::default();
        for &(d, label) in scored {
            c.record(label, decide(d, t));
        }
        let f1 = metrics(c)?.f1;
        if f1 > best.1 {
            best = (tau, f1);
        }
    }
    Ok((DecisionThreshold::new(best.0)?, best.1))
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub head: HeadParams,
    pub logs: Vec<EpochLog>,
    pub train: MetricsReport,
    pub test: MetricsReport,
    pub heldout: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct CrossValOutcome {
    pub folds: Vec<FoldResult>,
    pub report: CrossValReport,
    /// Mean over folds of the training-fold metrics.
    pub train_mean: MetricsReport,
}

/// Pairs over held-out pets, or `None` when that split cannot supply them.
pub fn heldout_pairs(manifest: &Manifest, cfg: &TrainConfig) -> Result<Option<Vec<PairSample>>> {
    if PairPool::new(manifest, Split::Heldout).check(cfg.p_same).is_err() {
        return Ok(None);
    }
    let seed = SplitMix64::derive(cfg.seed, HELDOUT_STREAM).next_u64();
    pair_stream(manifest, Split::Heldout, cfg.p_same, seed, cfg.test_pairs_per_epoch()).map(Some)
}

/// k trainings over one pair stream, fold i held out in run i.
pub fn cross_validate(
    manifest: &Manifest,
    features: &FeatureStore,
    cfg: &TrainConfig,
    k: usize,
) -> Result<CrossValOutcome> {
    let heldout = heldout_pairs(manifest, cfg)?;
    let tau = DecisionThreshold::for_margin(crate::model::Margin::new(cfg.margin)?);
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let run = || -> Result<FoldResult> {
            let spec = FoldSpec::new(k, fold)?;
            let out = train(manifest, features, cfg, Some(spec))?;
            let heldout = match &heldout {
                Some(pairs) => Some(evaluate(&out.head, features, pairs, tau)?.1),
                None => None,
            };
            Ok(FoldResult {
                fold,
                train: metrics(out.final_train)?,
                test: metrics(out.final_test)?,
                head: out.head,
                logs: out.logs,
                heldout,
            })
        };
        let result = run().map_err(|e| Error::Fold {
            fold,
            source: Box::new(e),
        })?;
        log::info!("fold {fold}: test f1 {:.4}", result.test.f1);
        folds.push(result);
    }
    let tests: Vec<MetricsReport> = folds.iter().map(|f| f.test).collect();
    let trains: Vec<MetricsReport> = folds.iter().map(|f| f.train).collect();
    let heldouts: Option<Vec<MetricsReport>> = folds.iter().map(|f| f.heldout).collect();
    let heldout = match heldouts {
        Some(h) => Some(HeldoutSummary {
            mean: MetricsReport::mean(&h)?,
            std: MetricsReport::std(&h)?,
        }),
        None => None,
    };
    Ok(CrossValOutcome {
        report: CrossValReport {
            mean: MetricsReport::mean(&tests)?,
            folds: tests,
            heldout,
        },
        train_mean: MetricsReport::mean(&trains)?,
        folds,
    })
}
