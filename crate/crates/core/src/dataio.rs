//! Datasets on disk, vocabularies, synthetic long-tail data and report writers.
//!
//! Scene graphs are stored one JSON object per line:
//!
//! ```text
//! {"video":"v1","frame":3,
//!  "entities":[{"id":0,"class":"person","box":[x1,y1,x2,y2]}],
//!  "relations":[{"s":0,"o":1,"p":"sitting_on"}]}
//! ```
//!
//! Prediction lines add `"score"` on entities and relations and an optional
//! `"class_scores"` array on entities. Class and predicate names resolve
//! through a [`Vocabulary`].

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::Distribution as _;
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::FrequencyTable;
use crate::numeric::RngStream;
use crate::scene::{BBox, Entity, Relation, SceneGraphFrame};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateGroups {
    pub attention: Vec<String>,
    pub spatial: Vec<String>,
    pub contacting: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVocabulary {
    objects: Vec<String>,
    predicates: PredicateGroups,
}

/// Object classes and the three-way predicate partition.
///
/// Global predicate ids run through attention, then spatial, then contacting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct Vocabulary {
    objects: Vec<String>,
    groups: PredicateGroups,
    predicates: Vec<String>,
    object_index: HashMap<String, usize>,
    predicate_index: HashMap<String, usize>,
}

impl From<Vocabulary> for RawVocabulary {
    fn from(v: Vocabulary) -> Self {
        RawVocabulary {
            objects: v.objects,
            predicates: v.groups,
        }
    }
}

impl TryFrom<RawVocabulary> for Vocabulary {
    type Error = Error;

    fn try_from(raw: RawVocabulary) -> Result<Self> {
        Vocabulary::new(raw.objects, raw.predicates)
    }
}

fn index_names(kind: &str, names: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::Vocabulary(format!("empty {kind} name")));
        }
        if index.insert(n.clone(), i).is_some() {
            return Err(Error::Vocabulary(format!("duplicate {kind} name {n:?}")));
        }
    }
    Ok(index)
}

const AG_OBJECTS: [&str; 35] = [
    "person", "bag", "bed", "blanket", "book", "box", "broom", "chair", "closet/cabinet",
    "clothes", "cup/glass/bottle", "dish", "door", "doorway", "floor", "food", "groceries",
    "laptop", "light", "medicine", "mirror", "paper/notebook", "phone/camera", "picture",
    "pillow", "refrigerator", "sandwich", "shelf", "shoe", "sofa/couch", "table", "television",
    "towel", "vacuum", "window",
];
const AG_ATTENTION: [&str; 3] = ["looking_at", "not_looking_at", "unsure"];
const AG_SPATIAL: [&str; 6] = ["above", "beneath", "in_front_of", "behind", "on_the_side_of", "in"];
const AG_CONTACTING: [&str; 17] = [
    "carrying", "covered_by", "drinking_from", "eating", "have_it_on_the_back", "holding",
    "leaning_on", "lying_on", "not_contacting", "other_relationship", "sitting_on",
    "standing_on", "touching", "twisting", "wearing", "wiping", "writing_on",
];

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl Vocabulary {
    pub fn new(objects: Vec<String>, groups: PredicateGroups) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::Vocabulary("no object classes".into()));
        }
        if groups.attention.is_empty() || groups.spatial.is_empty() || groups.contacting.is_empty() {
            return Err(Error::Vocabulary("every predicate category needs at least one name".into()));
        }
        let predicates: Vec<String> = groups
            .attention
            .iter()
            .chain(&groups.spatial)
            .chain(&groups.contacting)
            .cloned()
            .collect();
        let object_index = index_names("object", &objects)?;
        let predicate_index = index_names("predicate", &predicates)?;
        Ok(Vocabulary {
            objects,
            groups,
            predicates,
            object_index,
            predicate_index,
        })
    }

    /// Built-in 35-object / 26-predicate vocabulary in the style of Action Genome.
    pub fn action_genome() -> Self {
        Vocabulary::new(
            strings(&AG_OBJECTS),
            PredicateGroups {
                attention: strings(&AG_ATTENTION),
                spatial: strings(&AG_SPATIAL),
                contacting: strings(&AG_CONTACTING),
            },
        )
        .expect("built-in vocabulary is valid")
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    /// Predicate names in global id order.
    pub fn predicates(&self) -> &[String] {
        &self.predicates
    }

    pub fn groups(&self) -> &PredicateGroups {
        &self.groups
    }

    pub fn category_sizes(&self) -> [usize; 3] {
        [self.groups.attention.len(), self.groups.spatial.len(), self.groups.contacting.len()]
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_index.get(name).copied()
    }

    pub fn predicate_id(&self, name: &str) -> Option<usize> {
        self.predicate_index.get(name).copied()
    }
}

/// Whether records are annotations or model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    GroundTruth,
    Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntity {
    id: u32,
    class: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRelation {
    s: u32,
    o: u32,
    p: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    video: String,
    frame: u64,
    entities: Vec<RawEntity>,
    relations: Vec<RawRelation>,
}

fn resolve(raw: RawFrame, vocab: &Vocabulary, kind: RecordKind) -> std::result::Result<SceneGraphFrame, String> {
    let mut frame = SceneGraphFrame::new(raw.video, raw.frame);
    for e in raw.entities {
        let class = vocab
            .object_id(&e.class)
            .ok_or_else(|| format!("unknown object class {:?}", e.class))?;
        frame.entities.push(Entity {
            id: e.id,
            class,
            bbox: BBox(e.bbox),
            score: e.score,
            class_scores: e.class_scores,
        });
    }
    for r in raw.relations {
        let predicate = vocab
            .predicate_id(&r.p)
            .ok_or_else(|| format!("unknown predicate {:?}", r.p))?;
        let score = match (kind, r.score) {
            (_, Some(s)) => s,
            (RecordKind::GroundTruth, None) => 1.0,
            (RecordKind::Prediction, None) => {
                return Err(format!("prediction relation ({}, {}, {}) has no score", r.s, r.o, r.p))
            }
        };
        frame.relations.push(Relation::new(r.s, r.o, predicate, score));
    }
    Ok(frame)
}

fn unit_score(what: &str, s: f64) -> std::result::Result<(), String> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(format!("{what} score {s} outside [0, 1]"))
    }
}

/// Every invariant violation in one frame.
pub fn frame_issues(frame: &SceneGraphFrame, vocab: &Vocabulary, kind: RecordKind) -> Vec<String> {
    let mut issues = Vec::new();
    let mut ids = HashSet::new();
    for e in &frame.entities {
        if !ids.insert(e.id) {
            issues.push(format!("duplicate entity id {}", e.id));
        }
        if e.class >= vocab.num_objects() {
            issues.push(format!("entity {}: class id {} out of range", e.id, e.class));
        }
        if !e.bbox.is_valid() {
            issues.push(format!("entity {}: degenerate box {:?}", e.id, e.bbox.0));
        }
        if let Some(s) = e.score {
            if let Err(m) = unit_score(&format!("entity {}", e.id), s) {
                issues.push(m);
            }
        }
        if let Some(cs) = &e.class_scores {
            if cs.len() != vocab.num_objects() {
                issues.push(format!(
                    "entity {}: {} class scores for {} classes",
                    e.id,
                    cs.len(),
                    vocab.num_objects()
                ));
            }
            if cs.iter().any(|s| !(0.0..=1.0).contains(s)) {
                issues.push(format!("entity {}: class score outside [0, 1]", e.id));
            }
        }
    }
    let mut triplets = HashSet::new();
    for r in &frame.relations {
        for end in [r.subject, r.object] {
            if !ids.contains(&end) {
                issues.push(format!(
                    "relation ({}, {}, {}) references missing entity {end}",
                    r.subject, r.object, r.predicate
                ));
            }
        }
        if r.predicate >= vocab.num_predicates() {
            issues.push(format!("predicate id {} out of range", r.predicate));
        }
        if let Err(m) = unit_score("relation", r.score) {
            issues.push(m);
        }
        if kind == RecordKind::GroundTruth && !triplets.insert((r.subject, r.object, r.predicate)) {
            issues.push(format!(
                "duplicate ground-truth triplet ({}, {}, {})",
                r.subject, r.object, r.predicate
            ));
        }
    }
    issues
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub kind: RecordKind,
    pub frames: usize,
    pub entities: usize,
    pub relations: usize,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Parses and validates a stream, keeping every frame that parsed.
///
/// Blank lines are skipped. Frame order follows line order.
pub fn read_scene_graphs(
    reader: impl BufRead,
    vocab: &Vocabulary,
    kind: RecordKind,
) -> Result<(Vec<SceneGraphFrame>, ValidationReport)> {
    let mut frames = Vec::new();
    let mut issues = Vec::new();
    let mut keys: HashMap<(String, u64), usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Data {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut issue = |message: String| issues.push(ValidationIssue { line: line_no, message });
        let raw: RawFrame = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                issue(format!("malformed record: {e}"));
                continue;
            }
        };
        let frame = match resolve(raw, vocab, kind) {
            Ok(f) => f,
            Err(m) => {
                issue(m);
                continue;
            }
        };
        for m in frame_issues(&frame, vocab, kind) {
            issue(m);
        }
        if let Some(first) = keys.insert(frame.key(), line_no) {
            issue(format!("duplicate frame {:?} (first seen on line {first})", frame.key()));
        }
        frames.push(frame);
    }
    let report = ValidationReport {
        kind,
        frames: frames.len(),
        entities: frames.iter().map(|f| f.entities.len()).sum(),
        relations: frames.iter().map(|f| f.relations.len()).sum(),
        issues,
    };
    Ok((frames, report))
}

/// Validates a file without failing on the first problem.
pub fn validate_file(path: impl AsRef<Path>, vocab: &Vocabulary, kind: RecordKind) -> Result<ValidationReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_scene_graphs(BufReader::new(file), vocab, kind)?.1)
}

/// Loads a file, failing with the first located problem.
pub fn load_scene_graphs(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    kind: RecordKind,
) -> Result<Vec<SceneGraphFrame>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (frames, report) = read_scene_graphs(BufReader::new(file), vocab, kind)?;
    match report.issues.into_iter().next() {
        Some(i) => Err(Error::Data {
            line: i.line,
            message: i.message,
        }),
        None => Ok(frames),
    }
}

fn to_raw(frame: &SceneGraphFrame, vocab: &Vocabulary, kind: RecordKind) -> Result<RawFrame> {
    let object = |c: usize| {
        vocab.objects().get(c).cloned().ok_or(Error::LabelOutOfRange {
            label: c,
            size: vocab.num_objects(),
        })
    };
    let predicate = |p: usize| {
        vocab.predicates().get(p).cloned().ok_or(Error::LabelOutOfRange {
            label: p,
            size: vocab.num_predicates(),
        })
    };
    Ok(RawFrame {
        video: frame.video.clone(),
        frame: frame.frame,
        entities: frame
            .entities
            .iter()
            .map(|e| {
                Ok(RawEntity {
                    id: e.id,
                    class: object(e.class)?,
                    bbox: e.bbox.0,
                    score: e.score,
                    class_scores: e.class_scores.clone(),
                })
            })
            .collect::<Result<_>>()?,
        relations: frame
            .relations
            .iter()
            .map(|r| {
                Ok(RawRelation {
                    s: r.subject,
                    o: r.object,
                    p: predicate(r.predicate)?,
                    score: (kind == RecordKind::Prediction).then_some(r.score),
                })
            })
            .collect::<Result<_>>()?,
    })
}

/// Writes frames as JSON lines. Ground-truth relations carry no score.
pub fn write_scene_graphs_to(
    mut writer: impl Write,
    frames: &[SceneGraphFrame],
    vocab: &Vocabulary,
    kind: RecordKind,
) -> Result<()> {
    for f in frames {
        let line = serde_json::to_string(&to_raw(f, vocab, kind)?).expect("frame serializes");
        writeln!(writer, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn write_scene_graphs(
    path: impl AsRef<Path>,
    frames: &[SceneGraphFrame],
    vocab: &Vocabulary,
    kind: RecordKind,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_scene_graphs_to(&mut w, frames, vocab, kind).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `{"predicate name": count}` map into id order.
pub fn load_frequency_table(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<FrequencyTable> {
    let map: HashMap<String, u64> = read_json(path.as_ref())?;
    frequency_from_names(&map, vocab)
}

pub fn frequency_from_names(map: &HashMap<String, u64>, vocab: &Vocabulary) -> Result<FrequencyTable> {
    if let Some(unknown) = map.keys().find(|k| vocab.predicate_id(k).is_none()) {
        return Err(Error::Vocabulary(format!("unknown predicate {unknown:?} in frequency table")));
    }
    let counts = vocab
        .predicates()
        .iter()
        .map(|p| map.get(p).copied().ok_or_else(|| Error::MissingFrequency(p.clone())))
        .collect::<Result<_>>()?;
    Ok(FrequencyTable { counts })
}

/// Name-keyed view of a frequency table, sorted by name.
pub fn frequency_to_names(freq: &FrequencyTable, vocab: &Vocabulary) -> std::collections::BTreeMap<String, u64> {
    vocab.predicates().iter().cloned().zip(freq.counts.iter().copied()).collect()
}

/// Parameters of the synthetic long-tail generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub videos: usize,
    pub frames_per_video: usize,
    /// Entities per frame; entity 0 is the person every relation starts from.
    pub entities_per_frame: usize,
    pub zipf_exponent: f64,
    /// Score perturbation, corruption probability and box jitter scale, in `[0, 1]`.
    pub noise: f64,
    /// Ground-truth predicates per subject/object pair.
    pub max_predicates_per_pair: usize,
    /// Low-score wrong predicates added per pair in predictions.
    pub distractors_per_pair: usize,
    pub frame_size: [f64; 2],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            videos: 10,
            frames_per_video: 10,
            entities_per_frame: 4,
            zipf_exponent: 1.0,
            noise: 0.0,
            max_predicates_per_pair: 1,
            distractors_per_pair: 2,
            frame_size: [640.0, 480.0],
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.videos == 0 || self.frames_per_video == 0 {
            return bad("videos and frames per video must be at least 1");
        }
        if self.entities_per_frame < 2 {
            return bad("at least two entities per frame are needed to form a relation");
        }
        if self.max_predicates_per_pair == 0 {
            return bad("max_predicates_per_pair must be at least 1");
        }
        // A corrupted label takes one more distinct predicate per ground-truth one.
        if 2 * self.max_predicates_per_pair + self.distractors_per_pair > vocab.num_predicates() {
            return bad("more predicates per pair than the vocabulary holds");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("zipf exponent must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1]");
        }
        if !self.frame_size.iter().all(|s| s.is_finite() && *s >= 16.0) {
            return bad("frame size must be at least 16 pixels per side");
        }
        if vocab.num_objects() < 2 {
            return bad("vocabulary needs at least two object classes");
        }
        Ok(())
    }
}

/// Rank-`k` (1-based) sampler with `P(k) ∝ k^{-s}` over `1..=n`.
pub fn zipf_sampler(n: usize, s: f64) -> Result<Zipf<f64>> {
    Zipf::new(n as f64, s).map_err(|e| Error::InvalidInput(format!("zipf({n}, {s}): {e}")))
}

/// Training-count table following `round(150000 · k^{-s'})` for rank `k = id + 1`.
///
/// `s'` is raised just enough that the last class falls below the TAIL bound,
/// so all three bands are populated.
pub fn synthetic_frequency_table(num_predicates: usize, zipf_exponent: f64) -> FrequencyTable {
    const TOP: f64 = 150_000.0;
    const BOTTOM: f64 = 7_500.0;
    let s = if num_predicates > 1 {
        zipf_exponent.max((TOP / BOTTOM).ln() / (num_predicates as f64).ln())
    } else {
        zipf_exponent
    };
    FrequencyTable {
        counts: (1..=num_predicates)
            .map(|k| (TOP * (k as f64).powf(-s)).round() as u64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub ground_truth: Vec<SceneGraphFrame>,
    pub predictions: Vec<SceneGraphFrame>,
    pub frequency: FrequencyTable,
}

fn random_box(rng: &mut RngStream, frame: [f64; 2]) -> BBox {
    let w = frame[0] * (0.1 + 0.3 * rng.uniform());
    let h = frame[1] * (0.1 + 0.3 * rng.uniform());
    let x = (frame[0] - w) * rng.uniform();
    let y = (frame[1] - h) * rng.uniform();
    BBox::new(x, y, x + w, y + h)
}

fn jitter(b: &BBox, scale: f64, rng: &mut RngStream) -> BBox {
    if scale == 0.0 {
        return *b;
    }
    let w = b.x2() - b.x1();
    let h = b.y2() - b.y1();
    let mut d = || scale * 0.1 * (2.0 * rng.uniform() - 1.0);
    let (dx1, dy1, dx2, dy2) = (d() * w, d() * h, d() * w, d() * h);
    BBox::new(b.x1() + dx1, b.y1() + dy1, b.x2() + dx2, b.y2() + dy2)
}

fn draw_unused(rng: &mut RngStream, used: &mut Vec<usize>, draw: impl Fn(&mut RngStream) -> usize) -> usize {
    loop {
        let p = draw(rng);
        if !used.contains(&p) {
            used.push(p);
            return p;
        }
    }
}

/// Generates a ground-truth / prediction pair with Zipf-distributed predicates.
///
/// Every frame draws from its own random stream, so the result is a pure
/// function of the config.
pub fn generate_synthetic(config: &SyntheticConfig, vocab: &Vocabulary) -> Result<SyntheticDataset> {
    config.validate(vocab)?;
    let n_pred = vocab.num_predicates();
    let zipf = zipf_sampler(n_pred, config.zipf_exponent)?;
    let draw_zipf = |rng: &mut RngStream| zipf.sample(rng) as usize - 1;
    let person = vocab.object_id("person").unwrap_or(0);
    let eta = config.noise;

    let mut ground_truth = Vec::new();
    let mut predictions = Vec::new();
    for v in 0..config.videos {
        let video = format!("video{v:04}");
        for f in 0..config.frames_per_video {
            let stream = (v * config.frames_per_video + f) as u64;
            let mut rng = RngStream::derive(config.seed, stream);
            let mut gt = SceneGraphFrame::new(video.clone(), f as u64);
            for id in 0..config.entities_per_frame as u32 {
                let class = if id == 0 {
                    person
                } else {
                    let c = rng.below(vocab.num_objects() - 1);
                    if c >= person {
                        c + 1
                    } else {
                        c
                    }
                };
                gt.entities.push(Entity::new(id, class, random_box(&mut rng, config.frame_size)));
            }

            let mut pred = SceneGraphFrame::new(video.clone(), f as u64);
            for e in &gt.entities {
                let class = if rng.uniform() < eta / 2.0 {
                    rng.below(vocab.num_objects())
                } else {
                    e.class
                };
                pred.entities.push(Entity {
                    id: e.id,
                    class,
                    bbox: jitter(&e.bbox, eta, &mut rng),
                    score: Some(1.0 - eta * rng.uniform()),
                    class_scores: None,
                });
            }

            for obj in 1..config.entities_per_frame as u32 {
                let mut used = Vec::new();
                let truth: Vec<usize> = (0..config.max_predicates_per_pair)
                    .map(|_| draw_unused(&mut rng, &mut used, &draw_zipf))
                    .collect();
                for &p in &truth {
                    gt.relations.push(Relation::new(0, obj, p, 1.0));
                    let predicted = if rng.uniform() < eta {
                        draw_unused(&mut rng, &mut used, |r| r.below(n_pred))
                    } else {
                        p
                    };
                    pred.relations.push(Relation::new(0, obj, predicted, 1.0 - eta * rng.uniform()));
                }
                for _ in 0..config.distractors_per_pair {
                    let p = draw_unused(&mut rng, &mut used, |r| r.below(n_pred));
                    pred.relations.push(Relation::new(0, obj, p, 0.45 * rng.uniform()));
                }
            }
            ground_truth.push(gt);
            predictions.push(pred);
        }
    }
    Ok(SyntheticDataset {
        ground_truth,
        predictions,
        frequency: synthetic_frequency_table(n_pred, config.zipf_exponent),
    })
}

/// Output encoding for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidInput(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    /// `.csv` selects CSV; everything else, including stdout, is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

/// Rounds to 12 significant digits.
pub fn round_sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Canonical number text used in every report.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        let r = round_sig12(x);
        if r != 0.0 && !(1e-5..1e15).contains(&r.abs()) {
            format!("{r:e}")
        } else {
            r.to_string()
        }
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round_sig12(x)).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// A result that can be written as a table.
pub trait Tabular {
    fn columns(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

/// Report wrapper carrying provenance: tool version, resolved config, seed.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: impl Into<String>, config: &impl Serialize, seed: Option<u64>, result: T) -> Self {
        Report {
            tool: env!("CARGO_PKG_NAME"),
            version: crate::VERSION,
            command: command.into(),
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            result,
        }
    }

    /// Pretty JSON with sorted keys and 12-significant-digit floats.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        round_value(&mut v);
        // Round-trip through Value sorts object keys.
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    }
}

impl<T: Serialize + Tabular> Report<T> {
    /// CSV with `#`-prefixed provenance lines before the header row.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# tool: {} {}\n# command: {}\n# seed: {}\n# config: {}\n",
            self.tool,
            self.version,
            self.command,
            self.seed.map_or("none".to_string(), |s| s.to_string()),
            {
                let mut c = self.config.clone();
                round_value(&mut c);
                serde_json::to_string(&c).expect("value serializes")
            }
        );
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.result.columns()).expect("in-memory csv");
        for row in self.result.rows() {
            w.write_record(row).expect("in-memory csv");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv"));
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

/// Writes `text` to `path`, or to stdout for `-`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if path.as_os_str() == "-" {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        lock.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        return lock.flush().map_err(|e| Error::io(path, e));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders and writes a report, choosing the format from the extension
/// unless one is given.
pub fn write_report<T: Serialize + Tabular>(report: &Report<T>, format: Option<ReportFormat>, path: &Path) -> Result<()> {
    let format = format.unwrap_or_else(|| ReportFormat::from_path(path));
    write_text(path, &report.render(format))
}

mod tables {
    use super::{format_float, Tabular};
    use crate::infotheory::{ConfusionMatrix, PriorRelianceReport};
    use crate::metrics::{MetricReport, SplitRecall};
    use crate::mgsm::{LambdaSweep, SimulationTrace};
    use serde::Serialize;

    fn opt(x: Option<f64>) -> String {
        x.map_or_else(String::new, format_float)
    }

    /// Evaluation output with predicate names and optional band split.
    #[derive(Debug, Clone, Serialize)]
    pub struct Evaluation {
        pub predicates: Vec<String>,
        pub metrics: MetricReport,
        pub splits: Option<Vec<SplitRecall>>,
    }

    pub const EVALUATION_COLUMNS: [&str; 6] = ["k", "metric", "predicate", "gt", "hits", "value"];

    impl Tabular for Evaluation {
        fn columns(&self) -> Vec<String> {
            EVALUATION_COLUMNS.iter().map(|s| s.to_string()).collect()
        }

        fn rows(&self) -> Vec<Vec<String>> {
            let mut rows = Vec::new();
            for r in &self.metrics.results {
                let k = r.k.to_string();
                let total_hits: u64 = r.per_predicate.iter().map(|p| p.hits).sum();
                rows.push(vec![
                    k.clone(),
                    "recall".into(),
                    String::new(),
                    self.metrics.gt_instances.to_string(),
                    total_hits.to_string(),
                    format_float(r.recall),
                ]);
                rows.push(vec![
                    k.clone(),
                    "mean_recall".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format_float(r.mean_recall),
                ]);
                for (name, p) in self.predicates.iter().zip(&r.per_predicate) {
                    rows.push(vec![
                        k.clone(),
                        "predicate_recall".into(),
                        name.clone(),
                        p.gt.to_string(),
                        p.hits.to_string(),
                        opt(p.recall),
                    ]);
                }
                if let Some(split) = self.splits.as_ref().and_then(|s| s.iter().find(|s| s.k == r.k)) {
                    for (band, b) in [("head", &split.head), ("body", &split.body), ("tail", &split.tail)] {
                        rows.push(vec![
                            k.clone(),
                            format!("mean_recall_{band}"),
                            String::new(),
                            b.classes.to_string(),
                            String::new(),
                            opt(b.mean_recall),
                        ]);
                    }
                }
            }
            rows
        }
    }

    pub const TRACE_COLUMNS: [&str; 5] = ["step", "coord", "mean", "variance", "bias"];

    impl Tabular for SimulationTrace {
        fn columns(&self) -> Vec<String> {
            TRACE_COLUMNS.iter().map(|s| s.to_string()).collect()
        }

        fn rows(&self) -> Vec<Vec<String>> {
            let mut rows = Vec::with_capacity(self.steps * self.width());
            for t in 0..self.mean.len() {
                for c in 0..self.width() {
                    rows.push(vec![
                        (t + 1).to_string(),
                        c.to_string(),
                        format_float(self.mean[t][c]),
                        format_float(self.variance[t][c]),
                        format_float(self.bias[t][c]),
                    ]);
                }
            }
            rows
        }
    }

    pub const SWEEP_COLUMNS: [&str; 7] = [
        "lambda",
        "bias_sq",
        "variance",
        "total",
        "empirical_bias_sq",
        "empirical_variance",
        "empirical_total",
    ];

    impl Tabular for LambdaSweep {
        fn columns(&self) -> Vec<String> {
            SWEEP_COLUMNS.iter().map(|s| s.to_string()).collect()
        }

        fn rows(&self) -> Vec<Vec<String>> {
            self.rows
                .iter()
                .map(|r| {
                    let e = r.empirical.as_ref();
                    vec![
                        format_float(r.lambda),
                        format_float(r.bias_sq),
                        format_float(r.variance),
                        format_float(r.total),
                        opt(e.map(|e| e.bias_sq)),
                        opt(e.map(|e| e.variance)),
                        opt(e.map(|e| e.total)),
                    ]
                })
                .collect()
        }
    }

    /// Confusion matrix with predicate names on both axes.
    #[derive(Debug, Clone, Serialize)]
    pub struct LabeledConfusion {
        pub predicates: Vec<String>,
        pub matrix: ConfusionMatrix,
    }

    impl Tabular for LabeledConfusion {
        fn columns(&self) -> Vec<String> {
            let mut c = vec!["true\\predicted".to_string()];
            c.extend(self.predicates.iter().cloned());
            c.push("none".into());
            c
        }

        fn rows(&self) -> Vec<Vec<String>> {
            self.predicates
                .iter()
                .zip(&self.matrix.counts)
                .map(|(name, row)| {
                    let mut r = vec![name.clone()];
                    r.extend(row.iter().map(|c| c.to_string()));
                    r
                })
                .collect()
        }
    }

    pub const RELIANCE_COLUMNS: [&str; 5] = ["instance", "kl", "cross_entropy", "posterior_entropy", "identity_gap"];

    impl Tabular for PriorRelianceReport {
        fn columns(&self) -> Vec<String> {
            RELIANCE_COLUMNS.iter().map(|s| s.to_string()).collect()
        }

        fn rows(&self) -> Vec<Vec<String>> {
            self.instances
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    vec![
                        i.to_string(),
                        format_float(r.kl),
                        format_float(r.cross_entropy),
                        format_float(r.posterior_entropy),
                        format_float(r.identity_gap),
                    ]
                })
                .collect()
        }
    }
}

pub use tables::{
    Evaluation, LabeledConfusion, EVALUATION_COLUMNS, RELIANCE_COLUMNS, SWEEP_COLUMNS, TRACE_COLUMNS,
};

/// JSON schema for evaluation reports.
pub const EVALUATION_SCHEMA: &str = include_str!("../schemas/evaluation.schema.json");
