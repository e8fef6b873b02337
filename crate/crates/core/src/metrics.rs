//! Segmentation and classification scores.
//!
//! Pixel scores follow the set definitions directly: with `X` the predicted
//! pixels and `Y` the reference pixels,
//! `DSI = 2|X∩Y| / (|X|+|Y|)`, `DCL = 1 − DSI` and
//! `IoU = |X∩Y| / (|X|+|Y|−|X∩Y|)`. No smoothing term is added.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geo::{BitMask, GeoError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("cannot aggregate an empty score list")]
    Empty,
    #[error("{weights} weights for {scores} scores")]
    WeightCount { weights: usize, scores: usize },
}

/// Raw pixel counts behind a [`SegScore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PixelCounts {
    pub intersection: u64,
    pub pred: u64,
    pub truth: u64,
}

impl PixelCounts {
    pub fn union(&self) -> u64 {
        self.pred + self.truth - self.intersection
    }

    pub fn score(&self) -> SegScore {
        if self.pred + self.truth == 0 {
            return SegScore::PERFECT;
        }
        let i = self.intersection as f64;
        let dsi = 2.0 * i / (self.pred + self.truth) as f64;
        let iou = i / self.union() as f64;
        SegScore {
            iou,
            dsi,
            dcl: 1.0 - dsi,
        }
    }

    pub fn add(&mut self, other: &PixelCounts) {
        self.intersection += other.intersection;
        self.pred += other.pred;
        self.truth += other.truth;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScore {
    pub iou: f64,
    pub dsi: f64,
    pub dcl: f64,
}

impl SegScore {
    /// Both masks empty: a correct empty prediction.
    pub const PERFECT: SegScore = SegScore {
        iou: 1.0,
        dsi: 1.0,
        dcl: 0.0,
    };
}

/// Pixel counts of `pred` vs `truth`, optionally restricted to `valid` pixels.
pub fn pixel_counts(pred: &BitMask, truth: &BitMask, valid: Option<&BitMask>) -> Result<PixelCounts, MetricsError> {
    let counts = match valid {
        None => PixelCounts {
            intersection: pred.intersection_count(truth)?,
            pred: pred.count_ones(),
            truth: truth.count_ones(),
        },
        Some(v) => PixelCounts {
            intersection: pred.intersection_count_within(truth, v)?,
            pred: pred.intersection_count(v)?,
            truth: truth.intersection_count(v)?,
        },
    };
    Ok(counts)
}

pub fn seg_score(pred: &BitMask, truth: &BitMask, valid: Option<&BitMask>) -> Result<SegScore, MetricsError> {
    Ok(pixel_counts(pred, truth, valid)?.score())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Rates from a confusion matrix; `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy, sensitivity `TP/(TP+FN)` and specificity `TN/(TN+FP)`.
pub fn classification_metrics(c: &ConfusionCounts) -> ClassificationMetrics {
    ClassificationMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

/// Default IoU cutoff for counting an object as detected.
pub const OBJECT_IOU_THRESHOLD: f64 = 0.5;

/// Object-level matching of connected components.
///
/// Candidate pairs are ranked by descending IoU (ties by truth index, then
/// prediction index) and matched greedily one-to-one. A truth matched at
/// `IoU ≥ thresh` is a TP; unmatched truths are FNs and unmatched predictions
/// FPs. `tn` is always 0.
pub fn object_match(
    pred_components: &[BitMask],
    truth_components: &[BitMask],
    thresh: f64,
) -> Result<ConfusionCounts, MetricsError> {
    let pred_area: Vec<u64> = pred_components.iter().map(BitMask::count_ones).collect();
    let truth_area: Vec<u64> = truth_components.iter().map(BitMask::count_ones).collect();
    let mut pairs = Vec::new();
    for (ti, t) in truth_components.iter().enumerate() {
        for (pi, p) in pred_components.iter().enumerate() {
            let inter = p.intersection_count(t)?;
            if inter == 0 {
                continue;
            }
            let iou = inter as f64 / (pred_area[pi] + truth_area[ti] - inter) as f64;
            if iou >= thresh {
                pairs.push((iou, ti, pi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut truth_used = vec![false; truth_components.len()];
    let mut pred_used = vec![false; pred_components.len()];
    let mut tp = 0;
    for (_, ti, pi) in pairs {
        if !truth_used[ti] && !pred_used[pi] {
            truth_used[ti] = true;
            pred_used[pi] = true;
            tp += 1;
        }
    }
    Ok(ConfusionCounts {
        tp,
        tn: 0,
        fp: pred_components.len() as u64 - tp,
        fn_: truth_components.len() as u64 - tp,
    })
}

/// Split a mask into one mask per 4-connected component.
pub fn components(mask: &BitMask) -> Vec<BitMask> {
    crate::geo::label_components(mask)
        .into_iter()
        .map(|pixels| {
            let mut m = BitMask::new(mask.width(), mask.height());
            for (c, r) in pixels {
                m.set(c, r, true);
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    /// Unweighted arithmetic mean over clips.
    pub mean: SegScore,
    /// Mean weighted by per-clip pixel counts, when weights were given.
    pub weighted: Option<SegScore>,
}

pub fn aggregate(scores: &[SegScore], weights: Option<&[u64]>) -> Result<AggregateScore, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = scores.len() as f64;
    let mean = SegScore {
        iou: scores.iter().map(|s| s.iou).sum::<f64>() / n,
        dsi: scores.iter().map(|s| s.dsi).sum::<f64>() / n,
        dcl: scores.iter().map(|s| s.dcl).sum::<f64>() / n,
    };
    let weighted = match weights {
        None => None,
        Some(w) if w.len() != scores.len() => {
            return Err(MetricsError::WeightCount {
                weights: w.len(),
                scores: scores.len(),
            })
        }
        Some(w) => {
            let total: u64 = w.iter().sum();
            if total == 0 {
                None
            } else {
                let t = total as f64;
                let wsum =
                    |f: fn(&SegScore) -> f64| scores.iter().zip(w).map(|(s, &k)| f(s) * k as f64).sum::<f64>() / t;
                Some(SegScore {
                    iou: wsum(|s| s.iou),
                    dsi: wsum(|s| s.dsi),
                    dcl: wsum(|s| s.dcl),
                })
            }
        }
    };
    Ok(AggregateScore { mean, weighted })
}

// ---------------------------------------------------------------------------
// Evaluation report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: String,
    pub iou: f64,
    pub dsi: f64,
    pub dcl: f64,
    #[serde(skip)]
    pub counts: PixelCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateBlock {
    pub mean_iou: f64,
    pub mean_dsi: f64,
    pub mean_dcl: f64,
    /// IoU of summed pixel counts over all clips.
    pub pooled_iou: f64,
    /// Clip IoU weighted by clip union size.
    pub weighted_iou: Option<f64>,
    pub object: ObjectCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub clips: Vec<ClipScore>,
    pub aggregate: AggregateBlock,
}

/// One clip to score: prediction, reference and optional validity mask.
pub struct EvalItem<'a> {
    pub clip_id: &'a str,
    pub pred: &'a BitMask,
    pub truth: &'a BitMask,
    pub valid: Option<&'a BitMask>,
}

pub fn evaluate(items: &[EvalItem<'_>], object_thresh: f64) -> Result<EvaluationReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut clips = Vec::with_capacity(items.len());
    let mut pooled = PixelCounts::default();
    let mut object = ObjectCounts { tp: 0, fp: 0, fn_: 0 };
    for it in items {
        let counts = pixel_counts(it.pred, it.truth, it.valid)?;
        let s = counts.score();
        pooled.add(&counts);
        let (pred, truth) = match it.valid {
            Some(v) => (it.pred.and(v)?, it.truth.and(v)?),
            None => (it.pred.clone(), it.truth.clone()),
        };
        let o = object_match(&components(&pred), &components(&truth), object_thresh)?;
        object.tp += o.tp;
        object.fp += o.fp;
        object.fn_ += o.fn_;
        clips.push(ClipScore {
            clip_id: it.clip_id.to_string(),
            iou: s.iou,
            dsi: s.dsi,
            dcl: s.dcl,
            counts,
        });
    }
    let scores: Vec<SegScore> = clips
        .iter()
        .map(|c| SegScore {
            iou: c.iou,
            dsi: c.dsi,
            dcl: c.dcl,
        })
        .collect();
    let weights: Vec<u64> = clips.iter().map(|c| c.counts.union()).collect();
    let agg = aggregate(&scores, Some(&weights))?;
    Ok(EvaluationReport {
        clips,
        aggregate: AggregateBlock {
            mean_iou: agg.mean.iou,
            mean_dsi: agg.mean.dsi,
            mean_dcl: agg.mean.dcl,
            pooled_iou: pooled.score().iou,
            weighted_iou: agg.weighted.map(|w| w.iou),
            object,
        },
    })
}

impl EvaluationReport {
    /// Aligned-column text rendering.
    pub fn to_table(&self) -> String {
        let w = self
            .clips
            .iter()
            .map(|c| c.clip_id.len())
            .max()
            .unwrap_or(0)
            .max("clip_id".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<w$}  {:>8}  {:>8}  {:>8}", "clip_id", "iou", "dsi", "dcl");
        for c in &self.clips {
            let _ = writeln!(out, "{:<w$}  {:>8.4}  {:>8.4}  {:>8.4}", c.clip_id, c.iou, c.dsi, c.dcl);
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "{:<w$}  {:>8.4}  {:>8.4}  {:>8.4}",
            "mean", a.mean_iou, a.mean_dsi, a.mean_dcl
        );
        let _ = writeln!(out, "pooled_iou {:.4}", a.pooled_iou);
        let _ = writeln!(out, "objects tp {} fp {} fn {}", a.object.tp, a.object.fp, a.object.fn_);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&str]) -> BitMask {
        BitMask::from_fn(rows[0].len() as u32, rows.len() as u32, |c, r| {
            rows[r as usize].as_bytes()[c as usize] == b'1'
        })
    }

    #[test]
    fn identical_masks_score_perfect() {
        let a = m(&["0110", "0110"]);
        let s = seg_score(&a, &a, None).unwrap();
        assert_eq!((s.iou, s.dcl), (1.0, 0.0));
    }

    #[test]
    fn two_by_two_example() {
        // |X∩Y| = 1, |X| = 2, |Y| = 2.
        let s = seg_score(&m(&["11", "00"]), &m(&["10", "10"]), None).unwrap();
        assert_eq!(s.dsi, 0.5);
        assert_eq!(s.dcl, 0.5);
        assert_eq!(s.iou, 1.0 / 3.0);
    }

    #[test]
    fn disjoint_and_empty() {
        let s = seg_score(&m(&["10"]), &m(&["01"]), None).unwrap();
        assert_eq!((s.iou, s.dcl), (0.0, 1.0));
        let e = seg_score(&m(&["00"]), &m(&["00"]), None).unwrap();
        assert_eq!(e, SegScore::PERFECT);
    }

    #[test]
    fn valid_mask_restricts_counting() {
        let s = seg_score(&m(&["11"]), &m(&["10"]), Some(&m(&["10"]))).unwrap();
        assert_eq!(s.iou, 1.0);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        assert!(seg_score(&m(&["11"]), &m(&["1", "1"]), None).is_err());
    }

    #[test]
    fn classification_examples() {
        let c = classification_metrics(&ConfusionCounts::new(1301, 1301, 0, 0));
        assert_eq!(c.accuracy, Some(1.0));
        let c = classification_metrics(&ConfusionCounts::new(97, 96, 4, 3));
        assert!((c.accuracy.unwrap() - 0.965).abs() < 1e-12);
        assert!((c.sensitivity.unwrap() - 0.97).abs() < 1e-12);
        assert!((c.specificity.unwrap() - 0.96).abs() < 1e-12);
        let c = classification_metrics(&ConfusionCounts::new(0, 5, 1, 0));
        assert_eq!(c.sensitivity, None);
        assert_eq!(classification_metrics(&ConfusionCounts::default()).accuracy, None);
    }

    #[test]
    fn aggregate_modes() {
        assert!(matches!(aggregate(&[], None), Err(MetricsError::Empty)));
        let a = SegScore {
            iou: 0.2,
            dsi: 2.0 * 0.2 / 1.2,
            dcl: 1.0 - 2.0 * 0.2 / 1.2,
        };
        let b = SegScore {
            iou: 0.8,
            dsi: 2.0 * 0.8 / 1.8,
            dcl: 1.0 - 2.0 * 0.8 / 1.8,
        };
        assert_eq!(aggregate(&[a], None).unwrap().mean, a);
        assert_eq!(aggregate(&[a, a], None).unwrap().mean, a);
        let agg = aggregate(&[a, b], Some(&[1, 3])).unwrap();
        assert!((agg.mean.iou - 0.5).abs() < 1e-12);
        assert!((agg.weighted.unwrap().iou - 0.65).abs() < 1e-12);
    }

    #[test]
    fn report_table_has_aligned_rows() {
        let a = m(&["11", "00"]);
        let r = evaluate(
            &[EvalItem {
                clip_id: "7_0_0",
                pred: &a,
                truth: &a,
                valid: None,
            }],
            OBJECT_IOU_THRESHOLD,
        )
        .unwrap();
        assert_eq!(r.aggregate.mean_iou, 1.0);
        assert_eq!(r.aggregate.object, ObjectCounts { tp: 1, fp: 0, fn_: 0 });
        let table = r.to_table();
        assert!(table.starts_with("clip_id"));
        assert!(table.contains("7_0_0"));
    }
}
