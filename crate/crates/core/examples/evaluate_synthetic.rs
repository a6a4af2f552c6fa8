//! R@K, mR@K and the head/body/tail split on a synthetic long-tail dataset.

use debias_sgg::dataio::{generate_synthetic, SyntheticConfig, Vocabulary};
use debias_sgg::metrics::{mean_recall_at_k, split_report, Constraint, EvalConfig, TaskMode};

fn main() -> debias_sgg::Result<()> {
    let vocab = Vocabulary::action_genome();
    let config = SyntheticConfig {
        videos: 20,
        noise: 0.35,
        seed: 9,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&config, &vocab)?;
    for constraint in [Constraint::With, Constraint::Semi, Constraint::No] {
        let eval = EvalConfig::new(TaskMode::SgCls, constraint);
        let report = mean_recall_at_k(&data.predictions, &data.ground_truth, &eval, vocab.num_predicates())?;
        let splits = split_report(&report, &data.frequency)?;
        for (r, s) in report.results.iter().zip(&splits) {
            let band = |b: &debias_sgg::metrics::BandRecall| b.mean_recall.map_or("-".into(), |m| format!("{m:.3}"));
            println!(
                "{:>5} K={:<3} R={:.3} mR={:.3}  head {} body {} tail {}",
                constraint.to_string(),
                r.k,
                r.recall,
                r.mean_recall,
                band(&s.head),
                band(&s.body),
                band(&s.tail)
            );
        }
    }
    Ok(())
}
