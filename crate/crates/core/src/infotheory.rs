//! Entropy, Bayes posteriors and KL divergence for measuring how strongly
//! relation predictions lean on the predicate prior.
//!
//! Everything is in nats; use [`to_bits`] for reporting in bits. Zero-probability
//! terms follow `0 · ln 0 = 0`, and a KL support violation is an error rather
//! than being clamped away.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scene::SceneGraphFrame;

const SUM_TOLERANCE: f64 = 1e-9;

/// Probability vector over a finite vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "distribution entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "distribution sums to {total}, not 1"
            )));
        }
        Ok(Distribution(probs))
    }

    /// Normalises nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        Distribution::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Distribution::new(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Distribution::new(value)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.0
    }
}

/// Joint probabilities `P(r, c)`: rows are relation labels, columns context buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    table: Matrix,
}

impl JointTable {
    pub fn new(table: Matrix) -> Result<Self> {
        let values = table.as_slice();
        if values.is_empty() {
            return Err(Error::InvalidInput("empty joint table".into()));
        }
        if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "joint entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!("joint table sums to {total}")));
        }
        Ok(JointTable { table })
    }

    /// Normalises a table of co-occurrence counts.
    pub fn from_counts(counts: &Matrix) -> Result<Self> {
        let total: f64 = counts.as_slice().iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("joint counts sum to zero".into()));
        }
        JointTable::new(counts.scale(1.0 / total))
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    /// Marginal over relation labels (row sums).
    pub fn label_marginal(&self) -> Vec<f64> {
        (0..self.table.rows())
            .map(|r| self.table.row(r).iter().sum())
            .collect()
    }

    /// Marginal over context buckets (column sums).
    pub fn context_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.table.cols()];
        for r in 0..self.table.rows() {
            for (o, p) in out.iter_mut().zip(self.table.row(r)) {
                *o += p;
            }
        }
        out
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

pub fn to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// `-Σ p ln p`.
pub fn entropy(p: &Distribution) -> f64 {
    -p.probs().iter().copied().map(plogp).sum::<f64>()
}

/// `H(R | C) = -Σ_{r,c} P(r, c) ln P(r | c)`.
pub fn conditional_entropy(joint: &JointTable) -> f64 {
    let context = joint.context_marginal();
    let t = joint.table();
    let mut h = 0.0;
    for r in 0..t.rows() {
        for (c, &pc) in context.iter().enumerate() {
            let prc = t.get(r, c);
            if prc > 0.0 {
                h -= prc * (prc / pc).ln();
            }
        }
    }
    h
}

/// Posterior `∝ prior ⊙ likelihood`.
pub fn bayes_posterior(prior: &Distribution, likelihood: &[f64]) -> Result<Distribution> {
    if likelihood.len() != prior.len() {
        return Err(Error::shape("bayes_posterior", prior.len(), likelihood.len()));
    }
    if likelihood.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidInput(
            "likelihood must be finite and nonnegative".into(),
        ));
    }
    let joint: Vec<f64> = prior.probs().iter().zip(likelihood).map(|(p, l)| p * l).collect();
    let evidence: f64 = joint.iter().sum();
    if evidence <= 0.0 {
        return Err(Error::DegenerateEvidence);
    }
    Ok(Distribution(joint.into_iter().map(|j| j / evidence).collect()))
}

/// `Σ p ln(p / q)`; requires `q > 0` wherever `p > 0`.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl_divergence", p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::Support { index: i, p: pi });
            }
            kl += pi * (pi / qi).ln();
        }
    }
    // Rounding can leave a tiny negative value when p ≈ q.
    Ok(kl.max(0.0))
}

/// `-Σ p ln q`; requires `q > 0` wherever `p > 0`.
pub fn cross_entropy(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("cross_entropy", p.len(), q.len()));
    }
    let mut h = 0.0;
    for (i, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::Support { index: i, p: pi });
            }
            h -= pi * qi.ln();
        }
    }
    Ok(h)
}

/// Counts of (true predicate, top-1 predicted predicate).
///
/// Column `n` (one past the last predicate) counts ground-truth relations
/// whose subject/object pair received no prediction at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_predicates: usize,
    /// `counts[true][predicted]`, `num_predicates × (num_predicates + 1)`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_predicates: usize) -> Self {
        ConfusionMatrix {
            num_predicates,
            counts: vec![vec![0; num_predicates + 1]; num_predicates],
        }
    }

    pub fn missing_column(&self) -> usize {
        self.num_predicates
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }

    fn merge(mut self, other: &ConfusionMatrix) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }
}

/// Restricts a confusion matrix to one `(subject class, object class)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairFilter {
    pub subject_class: usize,
    pub object_class: usize,
}

fn frame_confusion(
    pred: Option<&SceneGraphFrame>,
    gt: &SceneGraphFrame,
    num_predicates: usize,
    filter: Option<PairFilter>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(num_predicates);
    for rel in &gt.relations {
        if rel.predicate >= num_predicates {
            return Err(Error::Vocabulary(format!(
                "ground-truth predicate {} outside vocabulary of {num_predicates}",
                rel.predicate
            )));
        }
        if let Some(f) = filter {
            let classes = gt
                .entity(rel.subject)
                .zip(gt.entity(rel.object))
                .map(|(s, o)| (s.class, o.class));
            if classes != Some((f.subject_class, f.object_class)) {
                continue;
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for p in pred.map_or(&[][..], |p| &p.relations) {
            if p.pair() != rel.pair() {
                continue;
            }
            if p.predicate >= num_predicates {
                return Err(Error::Vocabulary(format!(
                    "predicted predicate {} outside vocabulary of {num_predicates}",
                    p.predicate
                )));
            }
            let better = match best {
                None => true,
                Some((s, id)) => p.score > s || (p.score == s && p.predicate < id),
            };
            if better {
                best = Some((p.score, p.predicate));
            }
        }
        let col = best.map_or(num_predicates, |(_, id)| id);
        cm.counts[rel.predicate][col] += 1;
    }
    Ok(cm)
}

/// Tallies every ground-truth relation against the highest-scoring predicted
/// predicate for the same subject/object entity ids. Frames are aligned by
/// `(video, frame)`; a missing prediction frame counts as no prediction.
pub fn confusion_matrix(
    preds: &[SceneGraphFrame],
    gts: &[SceneGraphFrame],
    num_predicates: usize,
    filter: Option<PairFilter>,
) -> Result<ConfusionMatrix> {
    let index = crate::metrics::index_frames(preds);
    let parts: Vec<ConfusionMatrix> = gts
        .par_iter()
        .map(|gt| {
            let pred = index.get(&(gt.video.as_str(), gt.frame)).map(|&i| &preds[i]);
            frame_confusion(pred, gt, num_predicates, filter)
        })
        .collect::<Result<_>>()?;
    Ok(parts
        .iter()
        .fold(ConfusionMatrix::new(num_predicates), |acc, p| acc.merge(p)))
}

/// Prior-reliance figures for one posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReliance {
    /// `KL(posterior ‖ prior)`
    pub kl: f64,
    /// `-Σ posterior ln prior`: uncertainty when scoring with the prior alone.
    pub cross_entropy: f64,
    /// `H(posterior)`: uncertainty once context is included.
    pub posterior_entropy: f64,
    /// `(cross_entropy - posterior_entropy) - kl`, computed independently.
    pub identity_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRelianceReport {
    pub instances: Vec<InstanceReliance>,
    pub mean_kl: f64,
    pub prior_entropy: f64,
    pub mean_posterior_entropy: f64,
    /// `H(prior) - mean H(posterior)`.
    pub entropy_drop: f64,
    pub max_abs_identity_gap: f64,
}

/// KL of each posterior from the prior, alongside the entropy-difference
/// reading of the same quantity.
pub fn prior_reliance_report(
    posteriors: &[Distribution],
    prior: &Distribution,
) -> Result<PriorRelianceReport> {
    let instances: Vec<InstanceReliance> = posteriors
        .par_iter()
        .map(|post| {
            let kl = kl_divergence(post, prior)?;
            let ce = cross_entropy(post, prior)?;
            let h = entropy(post);
            Ok(InstanceReliance {
                kl,
                cross_entropy: ce,
                posterior_entropy: h,
                identity_gap: (ce - h) - kl,
            })
        })
        .collect::<Result<_>>()?;
    let n = instances.len().max(1) as f64;
    let mean_kl = instances.iter().map(|i| i.kl).sum::<f64>() / n;
    let mean_posterior_entropy = instances.iter().map(|i| i.posterior_entropy).sum::<f64>() / n;
    let prior_entropy = entropy(prior);
    let max_abs_identity_gap = instances
        .iter()
        .map(|i| i.identity_gap.abs())
        .fold(0.0, f64::max);
    Ok(PriorRelianceReport {
        mean_kl,
        prior_entropy,
        mean_posterior_entropy,
        entropy_drop: prior_entropy - mean_posterior_entropy,
        max_abs_identity_gap,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BBox, Entity, Relation};

    fn d(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy(&d(&[0.0, 1.0, 0.0])), 0.0);
        let u = Distribution::uniform(26).unwrap();
        assert!((entropy(&u) - 26f64.ln()).abs() < 1e-12);
        let oracle = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((oracle - 0.325_083).abs() < 1e-6);
        assert!((entropy(&d(&[0.9, 0.1])) - oracle).abs() < 1e-15);
        assert!((to_bits(2f64.ln()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::new(vec![]).is_err());
        assert!(Distribution::new(vec![0.5, 0.6]).is_err());
        assert!(Distribution::new(vec![1.5, -0.5]).is_err());
        assert!(serde_json::from_str::<Distribution>("[0.3, 0.3]").is_err());
        let ok: Distribution = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(ok.probs(), &[0.25, 0.75]);
    }

    #[test]
    fn conditional_entropy_cases() {
        let joint =
            JointTable::new(Matrix::from_rows(&[[0.4, 0.1], [0.1, 0.4]]).unwrap()).unwrap();
        // Direct summation: P(r|c) ∈ {0.8, 0.2}.
        let oracle = -(2.0 * 0.4 * 0.8f64.ln() + 2.0 * 0.1 * 0.2f64.ln());
        assert!((oracle - 0.500_402).abs() < 1e-6);
        assert!((conditional_entropy(&joint) - oracle).abs() < 1e-15);

        // Independent: outer product of marginals.
        let pr = [0.2, 0.5, 0.3];
        let pc = [0.6, 0.4];
        let rows: Vec<Vec<f64>> = pr.iter().map(|r| pc.iter().map(|c| r * c).collect()).collect();
        let indep = JointTable::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        assert!((conditional_entropy(&indep) - entropy(&d(&pr))).abs() < 1e-12);

        // Deterministic labels given context.
        let det = JointTable::new(Matrix::from_rows(&[[0.3, 0.0], [0.0, 0.7]]).unwrap()).unwrap();
        assert_eq!(conditional_entropy(&det), 0.0);
    }

    #[test]
    fn bayes_cases() {
        let post = bayes_posterior(&d(&[0.8, 0.2]), &[0.1, 0.9]).unwrap();
        let oracle: [f64; 2] = [0.08 / 0.26, 0.18 / 0.26];
        assert!((oracle[0] - 0.30769).abs() < 1e-5);
        for (g, w) in post.probs().iter().zip(oracle) {
            assert!((g - w).abs() < 1e-15);
        }
        let uniform = bayes_posterior(&Distribution::uniform(3).unwrap(), &[1.0, 2.0, 1.0]).unwrap();
        assert!((uniform.probs()[1] - 0.5).abs() < 1e-15);
        let prior = d(&[0.1, 0.6, 0.3]);
        let same = bayes_posterior(&prior, &[0.4, 0.4, 0.4]).unwrap();
        for (a, b) in same.probs().iter().zip(prior.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            bayes_posterior(&prior, &[0.0, 0.0, 0.0]),
            Err(Error::DegenerateEvidence)
        ));
    }

    #[test]
    fn kl_cases() {
        let p = d(&[0.9, 0.1]);
        let q = d(&[0.5, 0.5]);
        let oracle = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        assert!((oracle - 0.368_064).abs() < 1e-6);
        assert!((kl_divergence(&p, &q).unwrap() - oracle).abs() < 1e-15);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!(matches!(
            kl_divergence(&q, &d(&[1.0, 0.0])),
            Err(Error::Support { index: 1, .. })
        ));
        // q may vanish where p does.
        assert!(kl_divergence(&d(&[1.0, 0.0]), &q).is_ok());
    }

    fn ent(id: u32, class: usize) -> Entity {
        Entity::new(id, class, BBox::new(0.0, 0.0, 10.0, 10.0))
    }

    fn frame(relations: Vec<Relation>) -> SceneGraphFrame {
        let mut f = SceneGraphFrame::new("v", 0);
        f.entities = vec![ent(0, 0), ent(1, 1), ent(2, 2)];
        f.relations = relations;
        f
    }

    #[test]
    fn confusion_perfect_is_diagonal() {
        let gt = frame(vec![
            Relation::new(0, 1, 0, 1.0),
            Relation::new(0, 2, 2, 1.0),
            Relation::new(0, 1, 1, 1.0),
        ]);
        let cm = confusion_matrix(&[gt.clone()], &[gt.clone()], 3, None);
        // Pair (0,1) has two GT predicates; the top-1 prediction is the lower id on ties.
        let cm = cm.unwrap();
        assert_eq!(cm.counts[0][0], 1);
        assert_eq!(cm.counts[1][0], 1);
        assert_eq!(cm.counts[2][2], 1);

        let single = frame(vec![Relation::new(0, 1, 0, 1.0), Relation::new(0, 2, 2, 1.0)]);
        let cm = confusion_matrix(&[single.clone()], &[single], 3, None).unwrap();
        for (i, row) in cm.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if i != j {
                    assert_eq!(c, 0);
                }
            }
        }
    }

    #[test]
    fn confusion_ten_instance_fixture() {
        // Ten GT relations over five frames, three predicates.
        // (true, predicted) tally by hand:
        //   0→0 ×3, 0→1 ×1, 1→1 ×2, 1→2 ×1, 2→2 ×1, 2→none ×1, 2→0 ×1
        let mut gts = Vec::new();
        let mut preds = Vec::new();
        let cases: [&[(usize, Option<usize>)]; 5] = [
            &[(0, Some(0)), (1, Some(1))],
            &[(0, Some(0)), (2, None)],
            &[(0, Some(1)), (1, Some(2))],
            &[(0, Some(0)), (2, Some(2))],
            &[(1, Some(1)), (2, Some(0))],
        ];
        for (f, pairs) in cases.iter().enumerate() {
            let mut g = frame(vec![]);
            g.frame = f as u64;
            let mut p = g.clone();
            for (k, (truth, guess)) in pairs.iter().enumerate() {
                let obj = 1 + k as u32;
                g.relations.push(Relation::new(0, obj, *truth, 1.0));
                if let Some(guess) = guess {
                    p.relations.push(Relation::new(0, obj, *guess, 0.9));
                    // Lower-scored distractor never wins.
                    p.relations.push(Relation::new(0, obj, (*guess + 1) % 3, 0.2));
                }
            }
            gts.push(g);
            preds.push(p);
        }
        let cm = confusion_matrix(&preds, &gts, 3, None).unwrap();
        let want = vec![vec![3, 1, 0, 0], vec![0, 2, 1, 0], vec![1, 0, 1, 1]];
        assert_eq!(cm.counts, want);
        assert_eq!(cm.row_sums(), vec![4, 3, 3]);
        assert_eq!(cm.total(), 10);

        let only_obj2 = PairFilter {
            subject_class: 0,
            object_class: 2,
        };
        let filtered = confusion_matrix(&preds, &gts, 3, Some(only_obj2)).unwrap();
        assert_eq!(filtered.total(), 5);
        assert!(confusion_matrix(&preds, &gts, 2, None).is_err());
    }

    #[test]
    fn prior_reliance_cases() {
        let prior = d(&[0.5, 0.3, 0.2]);
        let same = prior_reliance_report(&[prior.clone(), prior.clone()], &prior).unwrap();
        assert_eq!(same.mean_kl, 0.0);

        let posts = [d(&[0.8, 0.1, 0.1]), d(&[0.1, 0.1, 0.8])];
        let report = prior_reliance_report(&posts, &prior).unwrap();
        let kl = |p: [f64; 3]| -> f64 {
            p.iter()
                .zip([0.5, 0.3, 0.2])
                .map(|(a, b)| a * (a / b).ln())
                .sum()
        };
        let oracle = (kl([0.8, 0.1, 0.1]) + kl([0.1, 0.1, 0.8])) / 2.0;
        assert!((report.mean_kl - oracle).abs() < 1e-15);
        assert!(report.max_abs_identity_gap < 1e-12);
        assert!(report.mean_kl >= 0.0);

        let bad_prior = d(&[1.0, 0.0, 0.0]);
        assert!(prior_reliance_report(&posts, &bad_prior).is_err());
    }
}
