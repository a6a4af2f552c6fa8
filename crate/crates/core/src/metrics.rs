//! Recall@K and mean Recall@K for scene graph predictions.
//!
//! Per frame, predicted triplets are filtered by the graph constraint, ranked
//! by score, and truncated to the top K. A ground-truth triplet is recalled
//! when some kept prediction has matching subject, object and predicate.
//!
//! * `With` keeps one predicate per subject/object pair (highest score).
//! * `Semi` keeps predicates scoring strictly above a threshold (0.9 by default).
//! * `No` keeps everything.
//!
//! Filtering happens before ranking. Ties are broken deterministically: lower
//! predicate id wins inside a pair, and ranking falls back to subject id,
//! object id, then predicate id.
//!
//! Entities are matched by id in PREDCLS and SGCLS (SGCLS additionally
//! requires the predicted class to be right) and by class plus IoU in SGDET,
//! using a greedy highest-IoU-first one-to-one assignment.
//!
//! mR@K averages per-predicate recall over predicates that have at least one
//! ground-truth instance, which keeps rare predicates from being drowned out
//! by frequent ones. Frames without ground-truth relations are skipped and
//! counted separately.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BBox, Relation, SceneGraphFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Boxes and classes given; predicates predicted.
    PredCls,
    /// Boxes given; classes and predicates predicted.
    SgCls,
    /// Everything predicted.
    SgDet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    With,
    Semi,
    No,
}

/// How per-predicate recall is aggregated across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Instance-level counts pooled over the dataset.
    #[default]
    Micro,
    /// Recall computed per frame, then averaged over frames.
    Macro,
}

macro_rules! str_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidInput(format!(
                        "unknown {}: {other:?}", stringify!($ty)
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name,)+ })
            }
        }
    };
}

str_enum!(TaskMode, TaskMode::PredCls => "predcls", TaskMode::SgCls => "sgcls", TaskMode::SgDet => "sgdet");
str_enum!(Constraint, Constraint::With => "with", Constraint::Semi => "semi", Constraint::No => "no");
str_enum!(Aggregation, Aggregation::Micro => "micro", Aggregation::Macro => "macro");

pub const DEFAULT_SEMI_THRESHOLD: f64 = 0.9;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_KS: [usize; 3] = [10, 20, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: TaskMode,
    pub constraint: Constraint,
    pub semi_threshold: f64,
    pub ks: Vec<usize>,
    pub iou_threshold: f64,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: TaskMode::PredCls,
            constraint: Constraint::With,
            semi_threshold: DEFAULT_SEMI_THRESHOLD,
            ks: DEFAULT_KS.to_vec(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            aggregation: Aggregation::Micro,
        }
    }
}

impl EvalConfig {
    pub fn new(mode: TaskMode, constraint: Constraint) -> Self {
        EvalConfig {
            mode,
            constraint,
            ..EvalConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if !in_unit(self.semi_threshold) {
            return Err(Error::InvalidInput(format!(
                "semi threshold {} outside (0, 1)",
                self.semi_threshold
            )));
        }
        if !in_unit(self.iou_threshold) {
            return Err(Error::InvalidInput(format!(
                "IoU threshold {} outside (0, 1)",
                self.iou_threshold
            )));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidInput("K values must be positive".into()));
        }
        if self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("K values must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let w = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let h = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = w * h;
    Ok(inter / (a.area() + b.area() - inter))
}

/// Filters scored relations according to the graph constraint.
///
/// Input order is preserved for the kept relations.
pub fn apply_constraint(relations: &[Relation], constraint: Constraint, threshold: f64) -> Vec<Relation> {
    match constraint {
        Constraint::No => relations.to_vec(),
        Constraint::Semi => relations.iter().filter(|r| r.score > threshold).cloned().collect(),
        Constraint::With => {
            let mut best: HashMap<(u32, u32), usize> = HashMap::new();
            for (i, r) in relations.iter().enumerate() {
                best.entry(r.pair())
                    .and_modify(|j| {
                        let cur = &relations[*j];
                        if r.score > cur.score || (r.score == cur.score && r.predicate < cur.predicate) {
                            *j = i;
                        }
                    })
                    .or_insert(i);
            }
            let mut keep: Vec<usize> = best.into_values().collect();
            keep.sort_unstable();
            keep.into_iter().map(|i| relations[i].clone()).collect()
        }
    }
}

/// Score-descending order with id tie-breaks.
pub fn rank_order(a: &Relation, b: &Relation) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.subject.cmp(&b.subject))
        .then(a.object.cmp(&b.object))
        .then(a.predicate.cmp(&b.predicate))
}

/// One-to-one map from predicted entity id to ground-truth entity id.
pub fn match_entities(
    pred: &SceneGraphFrame,
    gt: &SceneGraphFrame,
    config: &EvalConfig,
) -> Result<HashMap<u32, u32>> {
    let mut map = HashMap::new();
    match config.mode {
        TaskMode::PredCls | TaskMode::SgCls => {
            for p in &pred.entities {
                if let Some(g) = gt.entity(p.id) {
                    if config.mode == TaskMode::PredCls || p.class == g.class {
                        map.insert(p.id, g.id);
                    }
                }
            }
        }
        TaskMode::SgDet => {
            let mut candidates = Vec::new();
            for g in &gt.entities {
                for p in &pred.entities {
                    if p.class != g.class {
                        continue;
                    }
                    let overlap = iou(&p.bbox, &g.bbox)?;
                    if overlap >= config.iou_threshold {
                        candidates.push((overlap, g.id, p.id));
                    }
                }
            }
            candidates.sort_by(|a, b| {
                b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
            });
            let mut used_gt = std::collections::HashSet::new();
            for (_, g, p) in candidates {
                if map.contains_key(&p) || used_gt.contains(&g) {
                    continue;
                }
                used_gt.insert(g);
                map.insert(p, g);
            }
        }
    }
    Ok(map)
}

/// For each predicted relation, the index of the ground-truth relation it
/// matches, if any.
pub fn match_triplets(
    pred: &SceneGraphFrame,
    gt: &SceneGraphFrame,
    config: &EvalConfig,
) -> Result<Vec<Option<usize>>> {
    if pred.video != gt.video || pred.frame != gt.frame {
        return Err(Error::FrameKeyMismatch {
            pred: pred.key(),
            gt: gt.key(),
        });
    }
    let entity_map = match_entities(pred, gt, config)?;
    let gt_index: HashMap<(u32, u32, usize), usize> = gt
        .relations
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.subject, r.object, r.predicate), i))
        .collect();
    Ok(pred
        .relations
        .iter()
        .map(|r| {
            let s = entity_map.get(&r.subject)?;
            let o = entity_map.get(&r.object)?;
            gt_index.get(&(*s, *o, r.predicate)).copied()
        })
        .collect())
}

/// For each ground-truth relation, the best (smallest) rank at which a kept
/// prediction matches it. The relation is recalled at K iff `rank < K`.
pub fn best_ranks(
    pred: &SceneGraphFrame,
    gt: &SceneGraphFrame,
    config: &EvalConfig,
) -> Result<Vec<Option<usize>>> {
    let mut kept = apply_constraint(&pred.relations, config.constraint, config.semi_threshold);
    kept.sort_by(rank_order);
    let ranked = SceneGraphFrame {
        video: pred.video.clone(),
        frame: pred.frame,
        entities: pred.entities.clone(),
        relations: kept,
    };
    let matches = match_triplets(&ranked, gt, config)?;
    let mut best = vec![None; gt.relations.len()];
    for (rank, m) in matches.into_iter().enumerate() {
        if let Some(g) = m {
            if best[g].is_none() {
                best[g] = Some(rank);
            }
        }
    }
    Ok(best)
}

/// Which ground-truth relations of one frame are recalled in the top K.
pub fn recall_at_k(
    pred: &SceneGraphFrame,
    gt: &SceneGraphFrame,
    config: &EvalConfig,
    k: usize,
) -> Result<Vec<bool>> {
    Ok(best_ranks(pred, gt, config)?
        .into_iter()
        .map(|r| r.is_some_and(|r| r < k))
        .collect())
}

/// Fraction of a frame's ground-truth relations recalled; `None` for frames
/// without ground truth.
pub fn frame_recall(hits: &[bool]) -> Option<f64> {
    if hits.is_empty() {
        None
    } else {
        Some(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateRecall {
    pub gt: u64,
    pub hits: u64,
    /// `None` when the predicate has no ground-truth instance.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    /// R@K.
    pub recall: f64,
    /// mR@K.
    pub mean_recall: f64,
    pub per_predicate: Vec<PredicateRecall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: TaskMode,
    pub constraint: Constraint,
    pub aggregation: Aggregation,
    pub num_predicates: usize,
    pub frames_evaluated: usize,
    pub frames_without_gt: usize,
    pub gt_instances: u64,
    pub results: Vec<RecallAtK>,
}

impl MetricReport {
    pub fn at(&self, k: usize) -> Option<&RecallAtK> {
        self.results.iter().find(|r| r.k == k)
    }
}

pub(crate) fn index_frames(frames: &[SceneGraphFrame]) -> HashMap<(&str, u64), usize> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| ((f.video.as_str(), f.frame), i))
        .collect()
}

struct FrameTally {
    /// `[k][predicate] -> (gt, hits)`
    counts: Vec<Vec<(u64, u64)>>,
}

fn tally_frame(
    pred: Option<&SceneGraphFrame>,
    gt: &SceneGraphFrame,
    config: &EvalConfig,
    num_predicates: usize,
) -> Result<FrameTally> {
    if let Some(r) = gt.relations.iter().find(|r| r.predicate >= num_predicates) {
        return Err(Error::Vocabulary(format!(
            "predicate {} outside vocabulary of {num_predicates}",
            r.predicate
        )));
    }
    let ranks = match pred {
        Some(p) => best_ranks(p, gt, config)?,
        None => vec![None; gt.relations.len()],
    };
    let counts = config
        .ks
        .iter()
        .map(|&k| {
            let mut row = vec![(0u64, 0u64); num_predicates];
            for (rel, rank) in gt.relations.iter().zip(&ranks) {
                row[rel.predicate].0 += 1;
                if rank.is_some_and(|r| r < k) {
                    row[rel.predicate].1 += 1;
                }
            }
            row
        })
        .collect();
    Ok(FrameTally { counts })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Evaluates a dataset of predictions against ground truth.
///
/// Frames are aligned by `(video, frame)`; a ground-truth frame without a
/// prediction recalls nothing, and predictions without ground truth are
/// ignored.
pub fn mean_recall_at_k(
    preds: &[SceneGraphFrame],
    gts: &[SceneGraphFrame],
    config: &EvalConfig,
    num_predicates: usize,
) -> Result<MetricReport> {
    config.validate()?;
    let index = index_frames(preds);
    let evaluated: Vec<&SceneGraphFrame> = gts.iter().filter(|g| !g.relations.is_empty()).collect();
    let tallies: Vec<FrameTally> = evaluated
        .par_iter()
        .map(|gt| {
            let pred = index.get(&(gt.video.as_str(), gt.frame)).map(|&i| &preds[i]);
            tally_frame(pred, gt, config, num_predicates)
        })
        .collect::<Result<_>>()?;

    let gt_instances: u64 = evaluated.iter().map(|g| g.relations.len() as u64).sum();
    if gt_instances == 0 {
        return Err(Error::EmptyDataset);
    }

    let results = config
        .ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let mut pooled = vec![(0u64, 0u64); num_predicates];
            for t in &tallies {
                for (acc, c) in pooled.iter_mut().zip(&t.counts[ki]) {
                    acc.0 += c.0;
                    acc.1 += c.1;
                }
            }
            let per_predicate: Vec<PredicateRecall> = match config.aggregation {
                Aggregation::Micro => pooled
                    .iter()
                    .map(|&(gt, hits)| PredicateRecall {
                        gt,
                        hits,
                        recall: (gt > 0).then(|| hits as f64 / gt as f64),
                    })
                    .collect(),
                Aggregation::Macro => (0..num_predicates)
                    .map(|p| PredicateRecall {
                        gt: pooled[p].0,
                        hits: pooled[p].1,
                        recall: mean(tallies.iter().filter_map(|t| {
                            let (gt, hits) = t.counts[ki][p];
                            (gt > 0).then(|| hits as f64 / gt as f64)
                        })),
                    })
                    .collect(),
            };
            let total_hits: u64 = pooled.iter().map(|c| c.1).sum();
            let recall = match config.aggregation {
                Aggregation::Micro => total_hits as f64 / gt_instances as f64,
                Aggregation::Macro => mean(tallies.iter().map(|t| {
                    let (gt, hits) = t.counts[ki]
                        .iter()
                        .fold((0, 0), |(g, h), c| (g + c.0, h + c.1));
                    hits as f64 / gt as f64
                }))
                .unwrap_or(0.0),
            };
            let mean_recall = mean(per_predicate.iter().filter_map(|p| p.recall)).unwrap_or(0.0);
            RecallAtK {
                k,
                recall,
                mean_recall,
                per_predicate,
            }
        })
        .collect();

    Ok(MetricReport {
        mode: config.mode,
        constraint: config.constraint,
        aggregation: config.aggregation,
        num_predicates,
        frames_evaluated: evaluated.len(),
        frames_without_gt: gts.len() - evaluated.len(),
        gt_instances,
        results,
    })
}

/// Training-sample count per predicate id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub counts: Vec<u64>,
}

/// Lower bound (inclusive) of the HEAD band.
pub const HEAD_MIN_SAMPLES: u64 = 100_000;
/// Upper bound (exclusive) of the TAIL band.
pub const TAIL_MAX_SAMPLES: u64 = 8_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Head,
    Body,
    Tail,
}

impl Band {
    pub fn of(count: u64) -> Band {
        if count >= HEAD_MIN_SAMPLES {
            Band::Head
        } else if count < TAIL_MAX_SAMPLES {
            Band::Tail
        } else {
            Band::Body
        }
    }
}

impl FrequencyTable {
    pub fn band(&self, predicate: usize) -> Option<Band> {
        self.counts.get(predicate).map(|&c| Band::of(c))
    }

    pub fn bands(&self) -> Vec<Band> {
        self.counts.iter().map(|&c| Band::of(c)).collect()
    }
}

/// mR@K restricted to one frequency band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRecall {
    /// Predicates of this band with at least one ground-truth instance.
    pub classes: usize,
    pub mean_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecall {
    pub k: usize,
    pub head: BandRecall,
    pub body: BandRecall,
    pub tail: BandRecall,
}

impl SplitRecall {
    /// Class-count-weighted mean of the three bands; equals the overall mR@K.
    pub fn weighted_mean(&self) -> Option<f64> {
        let bands = [&self.head, &self.body, &self.tail];
        let n: usize = bands.iter().map(|b| b.classes).sum();
        (n > 0).then(|| {
            bands
                .iter()
                .filter_map(|b| b.mean_recall.map(|m| m * b.classes as f64))
                .sum::<f64>()
                / n as f64
        })
    }
}

/// Splits each mR@K of `report` into HEAD / BODY / TAIL bands.
pub fn split_report(report: &MetricReport, freq: &FrequencyTable) -> Result<Vec<SplitRecall>> {
    if freq.counts.len() < report.num_predicates {
        return Err(Error::MissingFrequency(format!(
            "predicate id {}",
            freq.counts.len()
        )));
    }
    Ok(report
        .results
        .iter()
        .map(|r| {
            let band = |which: Band| {
                let members: Vec<f64> = r
                    .per_predicate
                    .iter()
                    .enumerate()
                    .filter(|(p, _)| Band::of(freq.counts[*p]) == which)
                    .filter_map(|(_, pr)| pr.recall)
                    .collect();
                BandRecall {
                    classes: members.len(),
                    mean_recall: mean(members.into_iter()),
                }
            };
            SplitRecall {
                k: r.k,
                head: band(Band::Head),
                body: band(Band::Body),
                tail: band(Band::Tail),
            }
        })
        .collect())
}
