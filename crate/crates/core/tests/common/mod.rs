//! Brute-force reference implementation of the evaluation protocol and
//! random fixture generators. Deliberately shares no code with the engine.

#![allow(dead_code)]

use debias_sgg::metrics::{Constraint, TaskMode};
use debias_sgg::numeric::RngStream;
use debias_sgg::{BBox, Entity, Relation, SceneGraphFrame};

pub const MODES: [TaskMode; 3] = [TaskMode::PredCls, TaskMode::SgCls, TaskMode::SgDet];
pub const CONSTRAINTS: [Constraint; 3] = [Constraint::With, Constraint::Semi, Constraint::No];

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.0;
    let [bx1, by1, bx2, by2] = b.0;
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    inter / union
}

/// Relations surviving the constraint, by repeated scanning.
pub fn oracle_filter(rels: &[Relation], constraint: Constraint, threshold: f64) -> Vec<Relation> {
    match constraint {
        Constraint::No => rels.to_vec(),
        Constraint::Semi => {
            let mut out = Vec::new();
            for r in rels {
                if r.score > threshold {
                    out.push(r.clone());
                }
            }
            out
        }
        Constraint::With => {
            let mut out: Vec<Relation> = Vec::new();
            for r in rels {
                // keep r iff no other relation of the same pair beats it
                let beaten = rels.iter().any(|q| {
                    q.subject == r.subject
                        && q.object == r.object
                        && (q.score > r.score || (q.score == r.score && q.predicate < r.predicate))
                });
                let dup = out
                    .iter()
                    .any(|q| q.subject == r.subject && q.object == r.object);
                if !beaten && !dup {
                    out.push(r.clone());
                }
            }
            out
        }
    }
}

fn precedes(a: &Relation, b: &Relation) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    (a.subject, a.object, a.predicate) < (b.subject, b.object, b.predicate)
}

/// Selection sort by the ranking rule.
pub fn oracle_rank(mut rels: Vec<Relation>) -> Vec<Relation> {
    let mut out = Vec::with_capacity(rels.len());
    while !rels.is_empty() {
        let mut best = 0;
        for i in 1..rels.len() {
            if precedes(&rels[i], &rels[best]) {
                best = i;
            }
        }
        out.push(rels.remove(best));
    }
    out
}

/// Enumerates every one-to-one matching over the admissible edges and keeps
/// the one whose sorted edge ranks are lexicographically smallest (a longer
/// matching beats its own prefix). Edges rank by IoU descending, then ground
/// truth id, then predicted id.
fn lexicographic_matching(pred: &SceneGraphFrame, gt: &SceneGraphFrame, iou_threshold: f64) -> Vec<(u32, u32)> {
    let mut edges: Vec<(f64, u32, u32)> = Vec::new();
    for g in &gt.entities {
        for p in &pred.entities {
            if p.class == g.class {
                let o = overlap(&p.bbox, &g.bbox);
                if o >= iou_threshold {
                    edges.push((o, g.id, p.id));
                }
            }
        }
    }
    // rank edges with a plain insertion sort
    let mut ranked: Vec<(f64, u32, u32)> = Vec::new();
    for e in edges {
        let pos = ranked
            .iter()
            .position(|r| e.0 > r.0 || (e.0 == r.0 && (e.1, e.2) < (r.1, r.2)))
            .unwrap_or(ranked.len());
        ranked.insert(pos, e);
    }

    fn better(a: &[usize], b: &[usize]) -> bool {
        for (x, y) in a.iter().zip(b) {
            if x != y {
                return x < y;
            }
        }
        a.len() > b.len()
    }

    fn search(
        ranked: &[(f64, u32, u32)],
        start: usize,
        chosen: &mut Vec<usize>,
        best: &mut Vec<usize>,
    ) {
        if better(chosen, best) {
            *best = chosen.clone();
        }
        for i in start..ranked.len() {
            let (_, g, p) = ranked[i];
            if chosen.iter().any(|&c| ranked[c].1 == g || ranked[c].2 == p) {
                continue;
            }
            chosen.push(i);
            search(ranked, i + 1, chosen, best);
            chosen.pop();
        }
    }

    let mut best = Vec::new();
    search(&ranked, 0, &mut Vec::new(), &mut best);
    best.into_iter().map(|i| (ranked[i].2, ranked[i].1)).collect()
}

/// `(predicted id, ground-truth id)` entity correspondences.
pub fn oracle_entity_map(pred: &SceneGraphFrame, gt: &SceneGraphFrame, mode: TaskMode, iou: f64) -> Vec<(u32, u32)> {
    match mode {
        TaskMode::SgDet => lexicographic_matching(pred, gt, iou),
        _ => {
            let mut out = Vec::new();
            for p in &pred.entities {
                for g in &gt.entities {
                    if p.id == g.id && (mode == TaskMode::PredCls || p.class == g.class) {
                        out.push((p.id, g.id));
                    }
                }
            }
            out
        }
    }
}

/// Per-ground-truth-relation hit flags for the top `k` predictions.
pub fn oracle_frame_hits(
    pred: &SceneGraphFrame,
    gt: &SceneGraphFrame,
    mode: TaskMode,
    constraint: Constraint,
    k: usize,
    semi: f64,
    iou: f64,
) -> Vec<bool> {
    let ranked = oracle_rank(oracle_filter(&pred.relations, constraint, semi));
    let map = oracle_entity_map(pred, gt, mode, iou);
    let lookup = |pid: u32| map.iter().find(|(p, _)| *p == pid).map(|(_, g)| *g);
    gt.relations
        .iter()
        .map(|g| {
            ranked.iter().take(k).any(|r| {
                lookup(r.subject) == Some(g.subject)
                    && lookup(r.object) == Some(g.object)
                    && r.predicate == g.predicate
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTally {
    pub gt: Vec<u64>,
    pub hits: Vec<u64>,
}

impl OracleTally {
    pub fn recall(&self) -> f64 {
        self.hits.iter().sum::<u64>() as f64 / self.gt.iter().sum::<u64>() as f64
    }

    pub fn mean_recall(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for (g, h) in self.gt.iter().zip(&self.hits) {
            if *g > 0 {
                sum += *h as f64 / *g as f64;
                n += 1;
            }
        }
        sum / n as f64
    }
}

/// Dataset-level counts; prediction frames are looked up by key with a scan.
#[allow(clippy::too_many_arguments)]
pub fn oracle_tally(
    preds: &[SceneGraphFrame],
    gts: &[SceneGraphFrame],
    mode: TaskMode,
    constraint: Constraint,
    k: usize,
    semi: f64,
    iou: f64,
    num_predicates: usize,
) -> OracleTally {
    let mut tally = OracleTally {
        gt: vec![0; num_predicates],
        hits: vec![0; num_predicates],
    };
    let empty = SceneGraphFrame::new("", 0);
    for g in gts {
        let p = preds
            .iter()
            .find(|p| p.video == g.video && p.frame == g.frame)
            .unwrap_or(&empty);
        let hits = if p.video.is_empty() && !g.video.is_empty() {
            vec![false; g.relations.len()]
        } else {
            oracle_frame_hits(p, g, mode, constraint, k, semi, iou)
        };
        for (r, h) in g.relations.iter().zip(hits) {
            tally.gt[r.predicate] += 1;
            if h {
                tally.hits[r.predicate] += 1;
            }
        }
    }
    tally
}

/// Random ground-truth / prediction frame pair with at most `max_entities`
/// entities and `max_relations` ground-truth relations. Few classes and
/// predicates keep collisions frequent.
pub fn random_frame_pair(
    rng: &mut RngStream,
    key: u64,
    max_entities: usize,
    max_relations: usize,
    num_classes: usize,
    num_predicates: usize,
) -> (SceneGraphFrame, SceneGraphFrame) {
    let n = 2 + rng.below(max_entities - 1);
    let mut gt = SceneGraphFrame::new("v", key);
    for id in 0..n as u32 {
        let x = 100.0 * rng.uniform();
        let y = 100.0 * rng.uniform();
        let w = 10.0 + 40.0 * rng.uniform();
        let h = 10.0 + 40.0 * rng.uniform();
        gt.entities.push(Entity::new(id, rng.below(num_classes), BBox::new(x, y, x + w, y + h)));
    }
    let target = rng.below(max_relations + 1);
    let mut attempts = 0;
    while gt.relations.len() < target && attempts < 200 {
        attempts += 1;
        let s = rng.below(n) as u32;
        let o = rng.below(n) as u32;
        if s == o {
            continue;
        }
        let p = rng.below(num_predicates);
        if gt
            .relations
            .iter()
            .any(|r| r.subject == s && r.object == o && r.predicate == p)
        {
            continue;
        }
        gt.relations.push(Relation::new(s, o, p, 1.0));
    }

    let mut pred = SceneGraphFrame::new("v", key);
    for e in &gt.entities {
        let class = if rng.uniform() < 0.2 { rng.below(num_classes) } else { e.class };
        let [x1, y1, x2, y2] = e.bbox.0;
        let j = |rng: &mut RngStream| 8.0 * (rng.uniform() - 0.5);
        let bbox = BBox::new(x1 + j(rng), y1 + j(rng), x2 + j(rng), y2 + j(rng));
        pred.entities.push(Entity {
            id: e.id,
            class,
            bbox,
            score: Some(rng.uniform()),
            class_scores: None,
        });
    }
    // an extra duplicate detection overlapping an existing box
    if rng.uniform() < 0.5 {
        let src = gt.entities[rng.below(n)].clone();
        let [x1, y1, x2, y2] = src.bbox.0;
        pred.entities.push(Entity::new(n as u32, src.class, BBox::new(x1 + 2.0, y1 - 1.0, x2 + 1.0, y2 + 2.0)));
    }
    let m = pred.entities.len();
    let mut count = 0;
    while count < 15 {
        count += 1;
        let (s, o, p) = if !gt.relations.is_empty() && rng.uniform() < 0.5 {
            let r = &gt.relations[rng.below(gt.relations.len())];
            let p = if rng.uniform() < 0.3 { rng.below(num_predicates) } else { r.predicate };
            (r.subject, r.object, p)
        } else {
            (rng.below(m) as u32, rng.below(m) as u32, rng.below(num_predicates))
        };
        if s == o {
            continue;
        }
        // coarse scores produce ties, which exercise tie-breaking
        let score = if rng.uniform() < 0.3 {
            [0.5, 0.91, 0.95][rng.below(3)]
        } else {
            rng.uniform()
        };
        pred.relations.push(Relation::new(s, o, p, score));
    }
    (gt, pred)
}
