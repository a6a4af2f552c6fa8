//! Writes a synthetic dataset to a directory and validates it on reload.
//!
//! Usage: `cargo run --example generate_dataset -- [out_dir]`

use debias_sgg::dataio::{
    generate_synthetic, load_scene_graphs, validate_file, write_scene_graphs, RecordKind, SyntheticConfig, Vocabulary,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map_or_else(std::env::temp_dir, Into::into).join("debias-sgg-example");
    std::fs::create_dir_all(&dir)?;
    let vocab = Vocabulary::action_genome();
    let data = generate_synthetic(&SyntheticConfig::default(), &vocab)?;
    let gt = dir.join("gt.jsonl");
    let pred = dir.join("pred.jsonl");
    write_scene_graphs(&gt, &data.ground_truth, &vocab, RecordKind::GroundTruth)?;
    write_scene_graphs(&pred, &data.predictions, &vocab, RecordKind::Prediction)?;
    for (path, kind) in [(&gt, RecordKind::GroundTruth), (&pred, RecordKind::Prediction)] {
        let report = validate_file(path, &vocab, kind)?;
        println!(
            "{}: {} frames, {} relations, valid: {}",
            path.display(),
            report.frames,
            report.relations,
            report.is_valid()
        );
    }
    assert_eq!(load_scene_graphs(&gt, &vocab, RecordKind::GroundTruth)?, data.ground_truth);
    let top: Vec<_> = vocab.predicates().iter().zip(&data.frequency.counts).take(5).collect();
    println!("most frequent predicates: {top:?}");
    Ok(())
}
