//! Greedy IoU matching of detections to ground-truth boxes.

use debias_sgg::metrics::{iou, match_entities, recall_at_k, Constraint, EvalConfig, TaskMode};
use debias_sgg::{BBox, Entity, Relation, SceneGraphFrame};

fn main() -> debias_sgg::Result<()> {
    let mut gt = SceneGraphFrame::new("demo", 0);
    gt.entities = vec![
        Entity::new(0, 0, BBox::new(10.0, 10.0, 110.0, 210.0)),
        Entity::new(1, 7, BBox::new(90.0, 150.0, 200.0, 230.0)),
    ];
    gt.relations = vec![Relation::new(0, 1, 2, 1.0)];

    let mut pred = SceneGraphFrame::new("demo", 0);
    pred.entities = vec![
        Entity::new(5, 0, BBox::new(14.0, 8.0, 112.0, 205.0)),
        Entity::new(6, 0, BBox::new(30.0, 40.0, 120.0, 220.0)),
        Entity::new(7, 7, BBox::new(95.0, 145.0, 205.0, 228.0)),
    ];
    pred.relations = vec![Relation::new(6, 7, 2, 0.9), Relation::new(5, 7, 2, 0.7)];

    for p in &pred.entities {
        for g in &gt.entities {
            println!("iou(pred {}, gt {}) = {:.3}", p.id, g.id, iou(&p.bbox, &g.bbox)?);
        }
    }
    let config = EvalConfig::new(TaskMode::SgDet, Constraint::No);
    let mut matches: Vec<_> = match_entities(&pred, &gt, &config)?.into_iter().collect();
    matches.sort();
    println!("matches (pred -> gt): {matches:?}");
    for k in [1, 2] {
        println!("R@{k} hits: {:?}", recall_at_k(&pred, &gt, &config, k)?);
    }
    Ok(())
}
