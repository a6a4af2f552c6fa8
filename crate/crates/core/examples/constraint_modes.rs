//! WITH / SEMI / NO constraint filtering on one subject/object pair.

use debias_sgg::metrics::{apply_constraint, rank_order, Constraint};
use debias_sgg::Relation;

fn main() {
    let names = ["on", "beneath", "in_front_of"];
    let relations = vec![
        Relation::new(0, 1, 0, 0.95),
        Relation::new(0, 1, 1, 0.80),
        Relation::new(0, 1, 2, 0.91),
    ];
    for constraint in [Constraint::With, Constraint::Semi, Constraint::No] {
        let mut kept = apply_constraint(&relations, constraint, 0.9);
        kept.sort_by(rank_order);
        let labels: Vec<String> = kept.iter().map(|r| format!("{}:{}", names[r.predicate], r.score)).collect();
        println!("{:>5}: {}", constraint.to_string(), labels.join(", "));
    }
}
