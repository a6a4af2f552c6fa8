use std::io::Cursor;

use debias_sgg::dataio::{
    format_float, generate_synthetic, load_scene_graphs, read_scene_graphs, write_report, write_scene_graphs,
    write_scene_graphs_to, Evaluation, RecordKind, Report, ReportFormat, SyntheticConfig, Vocabulary,
    EVALUATION_COLUMNS, EVALUATION_SCHEMA,
};
use debias_sgg::metrics::{mean_recall_at_k, split_report, Constraint, EvalConfig, TaskMode};
use proptest::prelude::*;
use serde_json::Value;

fn dataset(frames: usize, seed: u64) -> debias_sgg::dataio::SyntheticDataset {
    let config = SyntheticConfig {
        videos: frames / 10,
        frames_per_video: 10,
        noise: 0.3,
        seed,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&config, &Vocabulary::action_genome()).unwrap()
}

fn evaluation(seed: u64) -> (Evaluation, EvalConfig) {
    let vocab = Vocabulary::action_genome();
    let data = dataset(40, seed);
    let config = EvalConfig::new(TaskMode::SgDet, Constraint::Semi);
    let metrics = mean_recall_at_k(&data.predictions, &data.ground_truth, &config, vocab.num_predicates()).unwrap();
    let splits = split_report(&metrics, &data.frequency).unwrap();
    (
        Evaluation {
            predicates: vocab.predicates().to_vec(),
            metrics,
            splits: Some(splits),
        },
        config,
    )
}

#[test]
fn hundred_frames_survive_write_and_reload() {
    let vocab = Vocabulary::action_genome();
    let data = dataset(100, 3);
    assert_eq!(data.ground_truth.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    for (frames, kind, name) in [
        (&data.ground_truth, RecordKind::GroundTruth, "gt.jsonl"),
        (&data.predictions, RecordKind::Prediction, "pred.jsonl"),
    ] {
        let path = dir.path().join(name);
        write_scene_graphs(&path, frames, &vocab, kind).unwrap();
        let loaded = load_scene_graphs(&path, &vocab, kind).unwrap();
        assert_eq!(&loaded, frames);
        // and the text itself is a fixed point
        let again = dir.path().join(format!("again-{name}"));
        write_scene_graphs(&again, &loaded, &vocab, kind).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn report_json_is_a_fixed_point_of_parse_and_render() {
    let (eval, config) = evaluation(5);
    let report = Report::new("evaluate", &config, None, eval);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.json");
    write_report(&report, None, &path).unwrap();
    let first = std::fs::read_to_string(&path).unwrap();
    let parsed: Value = serde_json::from_str(&first).unwrap();
    let mut second = serde_json::to_string_pretty(&parsed).unwrap();
    second.push('\n');
    assert_eq!(first, second);
    assert_eq!(first, report.to_json());
}

#[test]
fn evaluation_report_conforms_to_schema() {
    let schema: Value = serde_json::from_str(EVALUATION_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for seed in 0..3 {
        let (eval, config) = evaluation(seed);
        let report = Report::new("evaluate", &config, None, eval);
        let value: Value = serde_json::from_str(&report.to_json()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
    }
    let mut broken: Value = serde_json::from_str(&Report::new("evaluate", &EvalConfig::default(), None, evaluation(0).0).to_json()).unwrap();
    broken["result"]["metrics"]["results"][0]["recall"] = Value::from(1.5);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn csv_report_has_provenance_then_header() {
    let (eval, config) = evaluation(1);
    let csv = Report::new("evaluate", &config, Some(4), eval).render(ReportFormat::Csv);
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# tool: "));
    assert_eq!(lines[2], "# seed: 4");
    let header = lines.iter().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(*header, EVALUATION_COLUMNS.join(","));
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv.as_bytes());
    let rows = reader.records().count();
    assert!(rows > 0);
    assert_eq!(ReportFormat::from_path(std::path::Path::new("x.csv")), ReportFormat::Csv);
}

#[test]
fn malformed_lines_are_located() {
    let vocab = Vocabulary::action_genome();
    let text = [
        r#"{"video":"a","frame":0,"entities":[{"id":0,"class":"person","box":[0,0,10,10]}],"relations":[]}"#,
        "",
        r#"{"video":"a","frame":1,"entities":[{"id":0,"class":"person","box":[0,0,10,10]}],"relations":[{"s":0,"o":7,"p":"holding"}]}"#,
        "not json",
    ]
    .join("\n");
    let (frames, report) = read_scene_graphs(Cursor::new(text), &vocab, RecordKind::GroundTruth).unwrap();
    // line 3 parses but breaks an invariant; line 4 does not parse
    assert_eq!(frames.len(), 2);
    let lines: Vec<usize> = report.issues.iter().map(|i| i.line).collect();
    assert_eq!(lines, vec![3, 4]);
    assert!(!report.is_valid());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_data_round_trips_in_memory(seed in any::<u64>(), noise in 0.0f64..1.0) {
        let vocab = Vocabulary::action_genome();
        let config = SyntheticConfig { videos: 2, frames_per_video: 3, noise, seed, ..SyntheticConfig::default() };
        let data = generate_synthetic(&config, &vocab).unwrap();
        prop_assert_eq!(&data, &generate_synthetic(&config, &vocab).unwrap());
        let mut buf = Vec::new();
        write_scene_graphs_to(&mut buf, &data.predictions, &vocab, RecordKind::Prediction).unwrap();
        let (back, report) = read_scene_graphs(Cursor::new(buf), &vocab, RecordKind::Prediction).unwrap();
        prop_assert!(report.is_valid());
        prop_assert_eq!(back, data.predictions);
    }

    #[test]
    fn formatted_floats_parse_back_to_twelve_digits(x in prop_oneof![-1e20f64..1e20, -1.0f64..1.0, 1e-12f64..1e-4]) {
        let s = format_float(x);
        let y: f64 = s.parse().unwrap();
        prop_assert!((x - y).abs() <= 1e-11 * x.abs());
    }
}
