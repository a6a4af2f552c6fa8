//! Iterative relation generation.
//!
//! For a subject `j` and object `i` the composite feature is
//!
//! ```text
//! p = f_v(v_j) ∥ f_v(v_i) ∥ (f_u(u_ji) + f_box(b_j, b_i)) ∥ s_j ∥ s_i
//! ```
//!
//! Three linear heads score attention, spatial and contacting predicates from
//! `p`. Each round then builds one triplet embedding per category,
//! `f_v(v_j) ∥ f_k ∥ f_v(v_i)` with `f_k` the embedding of that category's
//! argmax predicate, splits `p` and the triplets into subject/object views,
//! and fuses them by cross-attention against a downsampled query. The fused
//! context feeds a second set of heads whose logits are added to the direct
//! ones. `N = 0` rounds is plain prediction from `p`.
//!
//! Downsampling is stride-2 mean pooling unless a learned matrix is supplied.
//! The first round's query comes from `p`; later rounds use the previous fused
//! output, which has the same width as `p`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::infotheory::Distribution;
use crate::numeric::{argmax, attention, concat, ensure_width, softmax, Linear, Matrix, RngStream};
use crate::scene::BBox;

/// Number of predicate categories (attention, spatial, contacting).
pub const CATEGORIES: usize = 3;
pub const CATEGORY_NAMES: [&str; CATEGORIES] = ["attention", "spatial", "contacting"];

/// Deterministic unit-norm stand-in for a word embedding.
pub fn pseudo_glove(label: &str, width: usize, seed: u64) -> Result<Vec<f64>> {
    if width == 0 {
        return Err(Error::InvalidInput("embedding width must be positive".into()));
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let mut rng = RngStream::from_seed_bytes(hasher.finalize().into());
    let raw: Vec<f64> = (0..width).map(|_| rng.standard_normal()).collect();
    let n = crate::numeric::norm(&raw);
    Ok(raw.into_iter().map(|x| x / n).collect())
}

/// One detected entity as seen by the relation generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityFeature {
    pub id: u32,
    pub class: usize,
    pub bbox: BBox,
    pub visual: Vec<f64>,
    pub semantic: Vec<f64>,
}

fn normalized(b: &BBox, frame: [f64; 2]) -> [f64; 4] {
    [b.x1() / frame[0], b.y1() / frame[1], b.x2() / frame[0], b.y2() / frame[1]]
}

/// Union-region stand-in: mean of the two visual features followed by the
/// union box normalized by the frame size.
pub fn union_feature(
    b_j: &BBox,
    b_i: &BBox,
    v_j: &[f64],
    v_i: &[f64],
    frame: [f64; 2],
) -> Result<Vec<f64>> {
    b_j.validate()?;
    b_i.validate()?;
    ensure_width("union_feature", v_i, v_j.len())?;
    let mut u: Vec<f64> = v_j.iter().zip(v_i).map(|(a, b)| 0.5 * (a + b)).collect();
    u.extend(normalized(&b_j.union(b_i), frame));
    Ok(u)
}

/// Sinusoidal embedding of the 8 normalized box coordinates.
///
/// Element `q` uses coordinate `m = (q / 2) % 8` at frequency
/// `ω = 2^((q / 2) / 8) · π`: `sin(ω c_m)` for even `q`, `cos(ω c_m)` for odd.
pub fn box_embed(b_j: &BBox, b_i: &BBox, width: usize, frame: [f64; 2]) -> Result<Vec<f64>> {
    b_j.validate()?;
    b_i.validate()?;
    if width == 0 {
        return Err(Error::InvalidInput("box embedding width must be positive".into()));
    }
    let nj = normalized(b_j, frame);
    let ni = normalized(b_i, frame);
    let coords = [nj[0], nj[1], nj[2], nj[3], ni[0], ni[1], ni[2], ni[3]];
    Ok((0..width)
        .map(|q| {
            let pair = q / 2;
            let omega = 2f64.powi((pair / 8) as i32) * std::f64::consts::PI;
            let x = omega * coords[pair % 8];
            if q % 2 == 0 {
                x.sin()
            } else {
                x.cos()
            }
        })
        .collect())
}

/// Concatenated feature with recorded segment boundaries.
///
/// Segments: subject visual, object visual, union, subject semantic, object
/// semantic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeFeature {
    pub data: Vec<f64>,
    /// Start of each segment plus the end of the last one.
    pub offsets: [usize; 6],
}

impl CompositeFeature {
    pub fn from_segments(segments: [&[f64]; 5]) -> Result<Self> {
        let mut offsets = [0; 6];
        for (k, s) in segments.iter().enumerate() {
            offsets[k + 1] = offsets[k] + s.len();
        }
        let c = CompositeFeature {
            data: concat(&segments),
            offsets,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets[0] != 0
            || self.offsets.windows(2).any(|w| w[1] <= w[0])
            || self.offsets[5] != self.data.len()
        {
            return Err(Error::InvalidInput(format!(
                "malformed composite offsets {:?} for width {}",
                self.offsets,
                self.data.len()
            )));
        }
        if self.offsets[2] - self.offsets[1] != self.offsets[1]
            || self.offsets[5] - self.offsets[4] != self.offsets[4] - self.offsets[3]
        {
            return Err(Error::InvalidInput(
                "subject and object segments differ in width".into(),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.data.len()
    }

    pub fn segment(&self, k: usize) -> &[f64] {
        &self.data[self.offsets[k]..self.offsets[k + 1]]
    }
}

/// One distribution per predicate category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateDistributions {
    pub categories: [Distribution; CATEGORIES],
}

impl PredicateDistributions {
    /// Category-local argmax; ties go to the lowest id.
    pub fn argmax(&self) -> [usize; CATEGORIES] {
        std::array::from_fn(|k| argmax(self.categories[k].probs()).expect("non-empty distribution"))
    }
}

/// One row per category: `f_v(v_j) ∥ f_k ∥ f_v(v_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletEmbedding {
    pub rows: [Vec<f64>; CATEGORIES],
    /// `[start, end)` of the predicate segment in every row.
    pub middle: (usize, usize),
    /// Global predicate id embedded in each row.
    pub predicates: [usize; CATEGORIES],
}

impl TripletEmbedding {
    pub fn validate(&self) -> Result<()> {
        let w = self.rows[0].len();
        let (a, b) = self.middle;
        if self.rows.iter().any(|r| r.len() != w) || !(0 < a && a < b && b < w) || a != w - b {
            return Err(Error::InvalidInput(format!(
                "malformed triplet offsets {:?} for width {w}",
                self.middle
            )));
        }
        Ok(())
    }
}

/// Widths of every feature in the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrgDims {
    /// Input visual feature width.
    pub visual: usize,
    /// Output width of `f_v`.
    pub visual_proj: usize,
    /// Output width of `f_u` and `f_box`.
    pub union: usize,
    /// Entity semantic embedding width.
    pub semantic: usize,
    /// Predicate embedding width.
    pub predicate: usize,
    /// Predicates per category.
    pub categories: [usize; CATEGORIES],
}

impl IrgDims {
    pub fn composite(&self) -> usize {
        2 * self.visual_proj + self.union + 2 * self.semantic
    }

    /// Width of the downsampled query.
    pub fn pooled(&self) -> usize {
        self.composite().div_ceil(2)
    }

    /// Attention width; chosen so `attended ∥ pooled` matches the composite width.
    pub fn hidden(&self) -> usize {
        self.composite() / 2
    }

    pub fn subject_view(&self) -> usize {
        self.visual_proj + self.union + self.semantic
    }

    pub fn triplet_view(&self) -> usize {
        self.visual_proj + self.predicate
    }

    pub fn num_predicates(&self) -> usize {
        self.categories.iter().sum()
    }

    pub fn category_offset(&self, k: usize) -> usize {
        self.categories[..k].iter().sum()
    }

    fn validate(&self) -> Result<()> {
        let widths = [self.visual, self.visual_proj, self.union, self.semantic, self.predicate];
        if widths.contains(&0) || self.categories.contains(&0) {
            return Err(Error::InvalidInput("all IRG widths must be positive".into()));
        }
        Ok(())
    }
}

/// Hierarchical semantics extractor weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HseParams {
    /// Learned downsample (`pooled × composite`); stride-2 mean pooling when absent.
    #[serde(default)]
    pub downsample: Option<Matrix>,
    pub query: Matrix,
    pub key_p: Matrix,
    pub value_p: Matrix,
    pub key_c: Matrix,
    pub value_c: Matrix,
    pub heads: [Linear; CATEGORIES],
}

impl HseParams {
    pub fn zeros(dims: &IrgDims) -> Self {
        let h = dims.hidden();
        HseParams {
            downsample: None,
            query: Matrix::zeros(h, dims.pooled()),
            key_p: Matrix::zeros(h, dims.subject_view()),
            value_p: Matrix::zeros(h, dims.subject_view()),
            key_c: Matrix::zeros(h, dims.triplet_view()),
            value_c: Matrix::zeros(h, dims.triplet_view()),
            heads: std::array::from_fn(|k| Linear::zeros(dims.composite(), dims.categories[k])),
        }
    }

    pub fn seeded(dims: &IrgDims, rng: &mut RngStream) -> Self {
        let h = dims.hidden();
        let init = |rows: usize, cols: usize, rng: &mut RngStream| {
            Matrix::random(rows, cols, 1.0 / (cols as f64).sqrt(), rng)
        };
        HseParams {
            downsample: None,
            query: init(h, dims.pooled(), rng),
            key_p: init(h, dims.subject_view(), rng),
            value_p: init(h, dims.subject_view(), rng),
            key_c: init(h, dims.triplet_view(), rng),
            value_c: init(h, dims.triplet_view(), rng),
            heads: std::array::from_fn(|k| Linear::seeded(dims.composite(), dims.categories[k], rng)),
        }
    }

    pub fn is_zero(&self) -> bool {
        let zero = |m: &Matrix| m.as_slice().iter().all(|&x| x == 0.0);
        zero(&self.query)
            && zero(&self.key_p)
            && zero(&self.value_p)
            && zero(&self.key_c)
            && zero(&self.value_c)
            && self
                .heads
                .iter()
                .all(|l| zero(&l.weight) && l.bias.iter().all(|&b| b == 0.0))
    }
}

/// All generator weights plus the predicate and object embedding tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationHeadParams {
    pub dims: IrgDims,
    /// Frame `[width, height]` in pixels for box normalization.
    pub frame_size: [f64; 2],
    /// `f_v`: `visual_proj × visual`, no bias.
    pub visual_proj: Matrix,
    /// `f_u`: `union × (visual + 4)`, no bias.
    pub union_proj: Matrix,
    pub heads: [Linear; CATEGORIES],
    /// One row per global predicate id.
    pub predicate_embeddings: Matrix,
    /// One row per object class.
    pub object_embeddings: Matrix,
    pub hse: HseParams,
}

impl RelationHeadParams {
    /// Random weights; embedding tables come from [`pseudo_glove`] over the
    /// given label lists (predicates in global id order).
    pub fn seeded(
        dims: IrgDims,
        predicate_labels: &[String],
        object_labels: &[String],
        frame_size: [f64; 2],
        seed: u64,
    ) -> Result<Self> {
        dims.validate()?;
        if predicate_labels.len() != dims.num_predicates() {
            return Err(Error::Vocabulary(format!(
                "{} predicate labels for {} predicates",
                predicate_labels.len(),
                dims.num_predicates()
            )));
        }
        let table = |labels: &[String], width: usize| -> Result<Matrix> {
            let rows = labels
                .iter()
                .map(|l| pseudo_glove(l, width, seed))
                .collect::<Result<Vec<_>>>()?;
            if rows.is_empty() {
                Ok(Matrix::zeros(0, width))
            } else {
                Matrix::from_rows(&rows)
            }
        };
        let mut rng = RngStream::new(seed);
        let visual_proj = Matrix::random(
            dims.visual_proj,
            dims.visual,
            1.0 / (dims.visual as f64).sqrt(),
            &mut rng,
        );
        let union_proj = Matrix::random(
            dims.union,
            dims.visual + 4,
            1.0 / ((dims.visual + 4) as f64).sqrt(),
            &mut rng,
        );
        let heads = std::array::from_fn(|k| Linear::seeded(dims.composite(), dims.categories[k], &mut rng));
        let hse = HseParams::seeded(&dims, &mut rng);
        let params = RelationHeadParams {
            dims,
            frame_size,
            visual_proj,
            union_proj,
            heads,
            predicate_embeddings: table(predicate_labels, dims.predicate)?,
            object_embeddings: table(object_labels, dims.semantic)?,
            hse,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: RelationHeadParams = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        params.validate()?;
        Ok(params)
    }

    /// Checks every weight shape against `dims`.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        d.validate()?;
        if !(self.frame_size.iter().all(|s| s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput(format!("frame size {:?}", self.frame_size)));
        }
        let shape = |name: &'static str, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::shape(
                    name,
                    format!("{rows}x{cols}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
            if !m.is_finite() {
                return Err(Error::InvalidInput(format!("{name}: non-finite weight")));
            }
            Ok(())
        };
        let linear = |name: &'static str, l: &Linear, input: usize, output: usize| -> Result<()> {
            shape(name, &l.weight, output, input)?;
            l.check(name)
        };
        shape("visual_proj", &self.visual_proj, d.visual_proj, d.visual)?;
        shape("union_proj", &self.union_proj, d.union, d.visual + 4)?;
        shape("predicate_embeddings", &self.predicate_embeddings, d.num_predicates(), d.predicate)?;
        if self.object_embeddings.cols() != d.semantic {
            return Err(Error::shape(
                "object_embeddings",
                d.semantic,
                self.object_embeddings.cols(),
            ));
        }
        for k in 0..CATEGORIES {
            linear("heads", &self.heads[k], d.composite(), d.categories[k])?;
            linear("hse.heads", &self.hse.heads[k], d.composite(), d.categories[k])?;
        }
        let h = &self.hse;
        if let Some(m) = &h.downsample {
            shape("hse.downsample", m, d.pooled(), d.composite())?;
        }
        shape("hse.query", &h.query, d.hidden(), d.pooled())?;
        shape("hse.key_p", &h.key_p, d.hidden(), d.subject_view())?;
        shape("hse.value_p", &h.value_p, d.hidden(), d.subject_view())?;
        shape("hse.key_c", &h.key_c, d.hidden(), d.triplet_view())?;
        shape("hse.value_c", &h.value_c, d.hidden(), d.triplet_view())?;
        Ok(())
    }

    /// Builds an entity with the class's table embedding as semantic feature.
    pub fn entity(&self, id: u32, class: usize, bbox: BBox, visual: Vec<f64>) -> Result<EntityFeature> {
        if class >= self.object_embeddings.rows() {
            return Err(Error::LabelOutOfRange {
                label: class,
                size: self.object_embeddings.rows(),
            });
        }
        Ok(EntityFeature {
            id,
            class,
            bbox,
            visual,
            semantic: self.object_embeddings.row(class).to_vec(),
        })
    }
}

fn check_entity(e: &EntityFeature, dims: &IrgDims) -> Result<()> {
    ensure_width("entity visual feature", &e.visual, dims.visual)?;
    ensure_width("entity semantic feature", &e.semantic, dims.semantic)?;
    e.bbox.validate()
}

/// Assembles `p` for a subject/object pair.
pub fn composite_features(
    subj: &EntityFeature,
    obj: &EntityFeature,
    params: &RelationHeadParams,
) -> Result<CompositeFeature> {
    let d = &params.dims;
    check_entity(subj, d)?;
    check_entity(obj, d)?;
    let fv_j = params.visual_proj.matvec(&subj.visual)?;
    let fv_i = params.visual_proj.matvec(&obj.visual)?;
    let u = union_feature(&subj.bbox, &obj.bbox, &subj.visual, &obj.visual, params.frame_size)?;
    let fu = params.union_proj.matvec(&u)?;
    let fbox = box_embed(&subj.bbox, &obj.bbox, d.union, params.frame_size)?;
    let joint: Vec<f64> = fu.iter().zip(&fbox).map(|(a, b)| a + b).collect();
    CompositeFeature::from_segments([&fv_j, &fv_i, &joint, &subj.semantic, &obj.semantic])
}

fn distributions(logits: [Vec<f64>; CATEGORIES]) -> Result<PredicateDistributions> {
    let mut out = Vec::with_capacity(CATEGORIES);
    for l in logits {
        out.push(Distribution::new(softmax(&l)?)?);
    }
    let categories: [Distribution; CATEGORIES] = out.try_into().expect("three categories");
    Ok(PredicateDistributions { categories })
}

fn head_logits(heads: &[Linear; CATEGORIES], x: &[f64]) -> Result<[Vec<f64>; CATEGORIES]> {
    Ok([heads[0].forward(x)?, heads[1].forward(x)?, heads[2].forward(x)?])
}

/// Initial per-category predicate distributions from `p` alone.
pub fn predict_predicates(p: &CompositeFeature, params: &RelationHeadParams) -> Result<PredicateDistributions> {
    p.validate()?;
    ensure_width("predict_predicates", &p.data, params.dims.composite())?;
    distributions(head_logits(&params.heads, &p.data)?)
}

/// Triplet embeddings from the argmax predicate of each category.
pub fn triplet_embeddings(
    subj: &EntityFeature,
    obj: &EntityFeature,
    dists: &PredicateDistributions,
    params: &RelationHeadParams,
) -> Result<TripletEmbedding> {
    let d = &params.dims;
    check_entity(subj, d)?;
    check_entity(obj, d)?;
    for (k, dist) in dists.categories.iter().enumerate() {
        if dist.len() != d.categories[k] {
            return Err(Error::shape("triplet_embeddings", d.categories[k], dist.len()));
        }
    }
    let fv_j = params.visual_proj.matvec(&subj.visual)?;
    let fv_i = params.visual_proj.matvec(&obj.visual)?;
    let local = dists.argmax();
    let predicates: [usize; CATEGORIES] = std::array::from_fn(|k| d.category_offset(k) + local[k]);
    let rows = predicates.map(|q| concat(&[&fv_j, params.predicate_embeddings.row(q), &fv_i]));
    Ok(TripletEmbedding {
        rows,
        middle: (fv_j.len(), fv_j.len() + d.predicate),
        predicates,
    })
}

/// Splits `p` into subject and object views sharing the union segment.
pub fn decompose_composite(p: &CompositeFeature) -> Result<(Vec<f64>, Vec<f64>)> {
    p.validate()?;
    let s = concat(&[p.segment(0), p.segment(2), p.segment(3)]);
    let o = concat(&[p.segment(1), p.segment(2), p.segment(4)]);
    Ok((s, o))
}

/// Rebuilds `p` from its subject and object views.
pub fn recompose_composite(s: &[f64], o: &[f64], offsets: [usize; 6]) -> Result<CompositeFeature> {
    let v = offsets[1];
    let u = offsets[3] - offsets[2];
    if s.len() != o.len() || s.len() < v + u {
        return Err(Error::InvalidInput("subject/object views do not fit offsets".into()));
    }
    CompositeFeature::from_segments([&s[..v], &o[..v], &s[v..v + u], &s[v + u..], &o[v + u..]])
}

pub type TripletViews = ([Vec<f64>; CATEGORIES], [Vec<f64>; CATEGORIES]);

/// Splits each triplet row into `f_v(v_j) ∥ f_k` and `f_k ∥ f_v(v_i)`.
pub fn decompose_triplets(c: &TripletEmbedding) -> Result<TripletViews> {
    c.validate()?;
    let (a, _) = c.middle;
    let s = std::array::from_fn(|k| c.rows[k][..c.middle.1].to_vec());
    let o = std::array::from_fn(|k| c.rows[k][a..].to_vec());
    Ok((s, o))
}

/// Rebuilds triplet rows from their subject and object views.
pub fn recompose_triplets(s: &[Vec<f64>; CATEGORIES], o: &[Vec<f64>; CATEGORIES], left: usize) -> [Vec<f64>; CATEGORIES] {
    std::array::from_fn(|k| concat(&[&s[k], &o[k][s[k].len() - left..]]))
}

/// Stride-2 mean pooling; an odd trailing element is kept as is.
pub fn stride2_pool(x: &[f64]) -> Vec<f64> {
    x.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Cross-attention fusion of the subject/object views.
///
/// Returns `attended ∥ downsample(prev)`, the same width as `prev`.
pub fn hse_fuse(
    prev: &[f64],
    s_p: &[f64],
    o_p: &[f64],
    s_c: &[Vec<f64>; CATEGORIES],
    o_c: &[Vec<f64>; CATEGORIES],
    params: &RelationHeadParams,
) -> Result<Vec<f64>> {
    let d = &params.dims;
    let h = &params.hse;
    ensure_width("hse_fuse (previous embedding)", prev, d.composite())?;
    let pooled = match &h.downsample {
        Some(m) => m.matvec(prev)?,
        None => stride2_pool(prev),
    };
    let q = Matrix::from_rows(&[h.query.matvec(&pooled)?])?;
    let mut keys = Vec::with_capacity(2 + 2 * CATEGORIES);
    let mut values = Vec::with_capacity(2 + 2 * CATEGORIES);
    for x in [s_p, o_p] {
        keys.push(h.key_p.matvec(x)?);
        values.push(h.value_p.matvec(x)?);
    }
    for x in s_c.iter().chain(o_c) {
        keys.push(h.key_c.matvec(x)?);
        values.push(h.value_c.matvec(x)?);
    }
    let attended = attention(&q, &Matrix::from_rows(&keys)?, &Matrix::from_rows(&values)?)?;
    Ok(concat(&[attended.row(0), &pooled]))
}

/// Distributions after every round `0..=n`.
pub fn irg_rounds(
    subj: &EntityFeature,
    obj: &EntityFeature,
    params: &RelationHeadParams,
    n: usize,
) -> Result<Vec<PredicateDistributions>> {
    let p = composite_features(subj, obj, params)?;
    let direct = head_logits(&params.heads, &p.data)?;
    let mut rounds = vec![distributions(direct.clone())?];
    let (s_p, o_p) = decompose_composite(&p)?;
    let mut prev = p.data.clone();
    for _ in 0..n {
        let c = triplet_embeddings(subj, obj, rounds.last().expect("round 0"), params)?;
        let (s_c, o_c) = decompose_triplets(&c)?;
        let fused = hse_fuse(&prev, &s_p, &o_p, &s_c, &o_c, params)?;
        let ctx = head_logits(&params.hse.heads, &fused)?;
        let logits = std::array::from_fn(|k| {
            direct[k].iter().zip(&ctx[k]).map(|(a, b)| a + b).collect()
        });
        rounds.push(distributions(logits)?);
        prev = fused;
    }
    Ok(rounds)
}

/// Distributions after `n` generator rounds.
pub fn irg_iterate(
    subj: &EntityFeature,
    obj: &EntityFeature,
    params: &RelationHeadParams,
    n: usize,
) -> Result<PredicateDistributions> {
    Ok(irg_rounds(subj, obj, params, n)?.pop().expect("at least round 0"))
}

/// Runs [`irg_iterate`] over many pairs in parallel; output order follows input.
pub fn irg_iterate_pairs(
    pairs: &[(EntityFeature, EntityFeature)],
    params: &RelationHeadParams,
    n: usize,
) -> Result<Vec<PredicateDistributions>> {
    pairs.par_iter().map(|(s, o)| irg_iterate(s, o, params, n)).collect()
}

/// `-ln probs[label]`.
pub fn cross_entropy_loss(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or(Error::LabelOutOfRange {
        label,
        size: probs.len(),
    })?;
    Ok(-p.ln())
}

/// Predicate loss: per-category cross-entropy summed, then averaged over
/// instances. Labels are category-local ids.
pub fn predicate_loss(dists: &[PredicateDistributions], labels: &[[usize; CATEGORIES]]) -> Result<f64> {
    if dists.len() != labels.len() {
        return Err(Error::shape("predicate_loss", dists.len(), labels.len()));
    }
    if dists.is_empty() {
        return Err(Error::InvalidInput("predicate_loss over zero instances".into()));
    }
    let mut total = 0.0;
    for (d, l) in dists.iter().zip(labels) {
        for k in 0..CATEGORIES {
            total += cross_entropy_loss(d.categories[k].probs(), l[k])?;
        }
    }
    Ok(total / dists.len() as f64)
}

/// Entity classification loss from raw logits, averaged over instances.
pub fn entity_loss(class_logits: &[Vec<f64>], gt_class: &[usize]) -> Result<f64> {
    if class_logits.len() != gt_class.len() {
        return Err(Error::shape("entity_loss", class_logits.len(), gt_class.len()));
    }
    if class_logits.is_empty() {
        return Err(Error::InvalidInput("entity_loss over zero instances".into()));
    }
    let mut total = 0.0;
    for (l, &c) in class_logits.iter().zip(gt_class) {
        total += cross_entropy_loss(&softmax(l)?, c)?;
    }
    Ok(total / class_logits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> IrgDims {
        IrgDims {
            visual: 6,
            visual_proj: 4,
            union: 5,
            semantic: 3,
            predicate: 3,
            categories: [3, 6, 17],
        }
    }

    fn labels(n: usize, prefix: &str) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn params() -> RelationHeadParams {
        let d = dims();
        RelationHeadParams::seeded(d, &labels(26, "p"), &labels(35, "o"), [100.0, 50.0], 7).unwrap()
    }

    fn pair(params: &RelationHeadParams) -> (EntityFeature, EntityFeature) {
        let mut rng = RngStream::new(3);
        let v1: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
        let v2: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
        (
            params.entity(0, 1, BBox::new(10.0, 5.0, 40.0, 45.0), v1).unwrap(),
            params.entity(1, 4, BBox::new(30.0, 10.0, 90.0, 30.0), v2).unwrap(),
        )
    }

    #[test]
    fn pseudo_glove_properties() {
        let a = pseudo_glove("person", 50, 0).unwrap();
        assert_eq!(a, pseudo_glove("person", 50, 0).unwrap());
        assert!((crate::numeric::norm(&a) - 1.0).abs() < 1e-12);
        let b = pseudo_glove("sofa", 50, 0).unwrap();
        assert!(crate::numeric::dot(&a, &b) < 1.0 - 1e-6);
        assert_ne!(a, pseudo_glove("person", 50, 1).unwrap());
    }

    #[test]
    fn union_feature_cases() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0);
        let v = vec![0.5, -2.0];
        assert_eq!(union_feature(&b, &b, &v, &v, [1.0, 1.0]).unwrap(), vec![0.5, -2.0, 0.0, 0.0, 1.0, 1.0]);
        let u = union_feature(&b, &BBox::new(2.0, 2.0, 3.0, 3.0), &[1.0], &[3.0], [1.0, 1.0]).unwrap();
        assert_eq!(u, vec![2.0, 0.0, 0.0, 3.0, 3.0]);
        let u = union_feature(&b, &BBox::new(2.0, 2.0, 3.0, 3.0), &[1.0], &[3.0], [6.0, 3.0]).unwrap();
        assert_eq!(u, vec![2.0, 0.0, 0.0, 0.5, 1.0]);
        assert!(union_feature(&BBox::new(1.0, 0.0, 1.0, 1.0), &b, &v, &v, [1.0, 1.0]).is_err());
    }

    #[test]
    fn box_embed_reference_values() {
        let bj = BBox::new(0.0, 0.0, 0.5, 0.25);
        let bi = BBox::new(0.25, 0.5, 1.0, 1.0);
        let e = box_embed(&bj, &bi, 18, [1.0, 1.0]).unwrap();
        assert_eq!(e.len(), 18);
        let pi = std::f64::consts::PI;
        // coordinate 2 (x2 of subject = 0.5) at base frequency
        assert!((e[4] - (pi * 0.5).sin()).abs() < 1e-15);
        assert!((e[5] - (pi * 0.5).cos()).abs() < 1e-15);
        // pair 8 wraps to coordinate 0 at doubled frequency
        assert!((e[16] - 0.0).abs() < 1e-15);
        assert!((e[17] - 1.0).abs() < 1e-15);
        assert_eq!(e, box_embed(&bj, &bi, 18, [1.0, 1.0]).unwrap());
    }

    #[test]
    fn composite_width_and_segments() {
        let params = params();
        let (s, o) = pair(&params);
        let p = composite_features(&s, &o, &params).unwrap();
        assert_eq!(p.width(), 2 * 4 + 5 + 2 * 3);
        assert_eq!(p.offsets, [0, 4, 8, 13, 16, 19]);
        assert_eq!(p.segment(3), &s.semantic[..]);
        assert_eq!(p.segment(4), &o.semantic[..]);
    }

    #[test]
    fn zero_visual_input_leaves_geometry_only() {
        let mut params = params();
        let (mut s, mut o) = pair(&params);
        s.visual = vec![0.0; 6];
        o.visual = vec![0.0; 6];
        let p = composite_features(&s, &o, &params).unwrap();
        assert!(p.segment(0).iter().chain(p.segment(1)).all(|&x| x == 0.0));
        params.union_proj = Matrix::zeros(5, 10);
        let p = composite_features(&s, &o, &params).unwrap();
        let fbox = box_embed(&s.bbox, &o.bbox, 5, params.frame_size).unwrap();
        assert_eq!(p.segment(2), &fbox[..]);
    }

    #[test]
    fn zero_heads_give_uniform_distributions() {
        let mut params = params();
        params.heads = std::array::from_fn(|k| Linear::zeros(19, params.dims.categories[k]));
        let (s, o) = pair(&params);
        let p = composite_features(&s, &o, &params).unwrap();
        let d = predict_predicates(&p, &params).unwrap();
        for (k, dist) in d.categories.iter().enumerate() {
            let n = params.dims.categories[k] as f64;
            assert!(dist.probs().iter().all(|&x| (x - 1.0 / n).abs() < 1e-15));
        }
        assert_eq!(d.argmax(), [0, 0, 0]);
    }

    #[test]
    fn triplet_forced_argmax_and_ties() {
        let params = params();
        let (s, o) = pair(&params);
        let one_hot = |n: usize, q: usize| {
            let mut v = vec![0.0; n];
            v[q] = 1.0;
            Distribution::new(v).unwrap()
        };
        let dists = PredicateDistributions {
            categories: [one_hot(3, 2), Distribution::uniform(6).unwrap(), one_hot(17, 5)],
        };
        let c = triplet_embeddings(&s, &o, &dists, &params).unwrap();
        assert_eq!(c.predicates, [2, 3, 9 + 5]);
        assert_eq!(&c.rows[0][4..7], params.predicate_embeddings.row(2));
        assert_eq!(&c.rows[1][4..7], params.predicate_embeddings.row(3));
        assert_eq!(c.middle, (4, 7));
    }

    #[test]
    fn decompositions_round_trip() {
        let params = params();
        let (s, o) = pair(&params);
        let p = composite_features(&s, &o, &params).unwrap();
        let (sp, op) = decompose_composite(&p).unwrap();
        assert_eq!(sp.len(), 4 + 5 + 3);
        assert_eq!(recompose_composite(&sp, &op, p.offsets).unwrap(), p);
        let d = predict_predicates(&p, &params).unwrap();
        let c = triplet_embeddings(&s, &o, &d, &params).unwrap();
        let (sc, oc) = decompose_triplets(&c).unwrap();
        for k in 0..3 {
            assert_eq!(sc[k][4..], oc[k][..3]);
        }
        assert_eq!(recompose_triplets(&sc, &oc, 4), c.rows);
    }

    #[test]
    fn pooling_widths() {
        assert_eq!(stride2_pool(&[1.0, 3.0, 5.0, 7.0]), vec![2.0, 6.0]);
        assert_eq!(stride2_pool(&[1.0, 3.0, 5.0]), vec![2.0, 5.0]);
    }

    #[test]
    fn iterate_bypass_and_fixed_point() {
        let mut params = params();
        let (s, o) = pair(&params);
        let p = composite_features(&s, &o, &params).unwrap();
        let direct = predict_predicates(&p, &params).unwrap();
        assert_eq!(irg_iterate(&s, &o, &params, 0).unwrap(), direct);
        assert_ne!(irg_iterate(&s, &o, &params, 1).unwrap(), direct);
        assert_eq!(irg_iterate(&s, &o, &params, 2).unwrap(), irg_iterate(&s, &o, &params, 2).unwrap());
        params.hse = HseParams::zeros(&params.dims);
        let one = irg_iterate(&s, &o, &params, 1).unwrap();
        for n in 2..5 {
            assert_eq!(irg_iterate(&s, &o, &params, n).unwrap(), one);
        }
    }

    #[test]
    fn json_params_round_trip() {
        let params = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("irg.json");
        std::fs::write(&path, serde_json::to_string(&params).unwrap()).unwrap();
        assert_eq!(RelationHeadParams::from_json_file(&path).unwrap(), params);
        let mut bad = params.clone();
        bad.hse.query = Matrix::zeros(2, 2);
        std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
        assert!(RelationHeadParams::from_json_file(&path).is_err());
    }

    #[test]
    fn losses() {
        let d = |v: Vec<f64>| Distribution::new(v).unwrap();
        let fixture = PredicateDistributions {
            categories: [d(vec![0.7, 0.2, 0.1]), d(vec![1.0, 0.0]), d(vec![0.0, 1.0])],
        };
        let l = predicate_loss(&[fixture.clone()], &[[0, 0, 1]]).unwrap();
        assert!((l - (-(0.7f64).ln())).abs() < 1e-15);
        assert!((l - 0.356675).abs() < 1e-6);
        assert!(predicate_loss(&[fixture], &[[0, 2, 1]]).is_err());
        let uniform = entity_loss(&[vec![0.0; 35]], &[4]).unwrap();
        assert!((uniform - 35f64.ln()).abs() < 1e-12);
        let logits = vec![0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()];
        assert!((entity_loss(&[logits], &[0]).unwrap() - 0.356675).abs() < 1e-6);
    }
}
