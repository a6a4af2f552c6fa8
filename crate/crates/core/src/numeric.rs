//! Dense linear algebra, activations, attention and seeded sampling.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; [`Matrix`] is a row-major dense
//! matrix. Every public operation rejects non-finite input and returns finite
//! output for finite input.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} elements", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from a list of equal-width rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row width {cols}"),
                    format!("row {i} of width {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Matrix with entries drawn uniformly from `[-scale, scale)`.
    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Self {
        let data = (0..rows * cols)
            .map(|_| (2.0 * rng.uniform() - 1.0) * scale)
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("inner dimension {}", self.cols),
                other.rows,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_transpose",
                format!("width {}", self.cols),
                other.cols,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(self.row(i), other.row(j));
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

pub(crate) fn ensure_finite(op: &str, x: &[f64]) -> Result<()> {
    if all_finite(x) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{op}: non-finite element")))
    }
}

pub(crate) fn ensure_width(op: &'static str, x: &[f64], width: usize) -> Result<()> {
    if x.len() == width {
        Ok(())
    } else {
        Err(Error::shape(op, width, x.len()))
    }
}

/// Concatenates slices in order.
pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function.
pub fn sigmoid(x: &[f64]) -> Result<Vec<f64>> {
    ensure_finite("sigmoid", x)?;
    Ok(x.iter().copied().map(sigmoid_scalar).collect())
}

/// Softmax with max-subtraction.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    ensure_finite("softmax", x)?;
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in x.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Affine map `weight · x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Uniform init in `±1/sqrt(input)`, zero bias.
    pub fn seeded(input: usize, output: usize, rng: &mut RngStream) -> Self {
        let scale = 1.0 / (input.max(1) as f64).sqrt();
        Linear {
            weight: Matrix::random(output, input, scale, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x)?;
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        Ok(y)
    }

    pub(crate) fn check(&self, name: &'static str) -> Result<()> {
        if self.bias.len() != self.weight.rows() {
            return Err(Error::shape(name, self.weight.rows(), self.bias.len()));
        }
        Ok(())
    }
}

/// Two-layer perceptron with a sigmoid hidden layer whose widths all equal
/// the input width, so it can gate a feature vector elementwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(width: usize) -> Self {
        MlpParams {
            w1: Matrix::zeros(width, width),
            b1: vec![0.0; width],
            w2: Matrix::zeros(width, width),
            b2: vec![0.0; width],
        }
    }

    pub fn seeded(width: usize, rng: &mut RngStream) -> Self {
        let scale = 1.0 / (width.max(1) as f64).sqrt();
        MlpParams {
            w1: Matrix::random(width, width, scale, rng),
            b1: vec![0.0; width],
            w2: Matrix::random(width, width, scale, rng),
            b2: vec![0.0; width],
        }
    }

    /// Loads `{"w1": [[..]], "b1": [..], "w2": [[..]], "b2": [..]}`.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: MlpParams = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn width(&self) -> usize {
        self.w1.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w1.cols();
        let shapes = [
            (self.w1.rows(), "w1 rows"),
            (self.b1.len(), "b1"),
            (self.w2.rows(), "w2 rows"),
            (self.w2.cols(), "w2 cols"),
            (self.b2.len(), "b2"),
        ];
        for (got, what) in shapes {
            if got != d {
                return Err(Error::shape("MlpParams", format!("{what} = {d}"), got));
            }
        }
        let finite = self.w1.is_finite()
            && self.w2.is_finite()
            && all_finite(&self.b1)
            && all_finite(&self.b2);
        if !finite {
            return Err(Error::InvalidInput("MlpParams: non-finite parameter".into()));
        }
        Ok(())
    }
}

/// `w2 · sigmoid(w1 · x + b1) + b2`.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    ensure_width("mlp_forward", x, params.width())?;
    ensure_finite("mlp_forward", x)?;
    let mut hidden = params.w1.matvec(x)?;
    for (h, b) in hidden.iter_mut().zip(&params.b1) {
        *h = sigmoid_scalar(*h + b);
    }
    let mut out = params.w2.matvec(&hidden)?;
    for (o, b) in out.iter_mut().zip(&params.b2) {
        *o += b;
    }
    Ok(out)
}

/// Scaled dot-product attention `softmax(Q Kᵀ / sqrt(d_k)) V`.
///
/// `q` is `n_q × d_k`, `k` is `n_k × d_k`, `v` is `n_k × d_v`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(Error::shape("attention (key width)", q.cols(), k.cols()));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape("attention (value rows)", k.rows(), v.rows()));
    }
    if k.rows() == 0 {
        return Err(Error::InvalidInput("attention over zero keys".into()));
    }
    if !(q.is_finite() && k.is_finite() && v.is_finite()) {
        return Err(Error::InvalidInput("attention: non-finite element".into()));
    }
    let scale = 1.0 / (k.cols().max(1) as f64).sqrt();
    let scores = q.matmul_transpose(k)?.scale(scale);
    let mut weights = Vec::with_capacity(scores.rows() * scores.cols());
    for i in 0..scores.rows() {
        weights.extend(softmax(scores.row(i))?);
    }
    Matrix::from_vec(scores.rows(), scores.cols(), weights)?.matmul(v)
}

/// Deterministic random stream (xoshiro256++).
///
/// A stream is identified by a `(seed, stream)` pair whose SHA-256 digest is
/// the generator state; independent workers derive their own stream from a
/// master seed and their index.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream::derive(seed, 0)
    }

    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(stream.to_le_bytes());
        RngStream {
            seed,
            inner: Xoshiro256PlusPlus::from_seed(hasher.finalize().into()),
        }
    }

    /// Stream keyed directly by 32 bytes; `seed()` reports 0.
    pub fn from_seed_bytes(bytes: [u8; 32]) -> Self {
        RngStream {
            seed: 0,
            inner: Xoshiro256PlusPlus::from_seed(bytes),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `mean + sqrt(cov_diag) ⊙ z` with `z` standard normal.
pub fn gaussian_sample(rng: &mut RngStream, mean: &[f64], cov_diag: &[f64]) -> Result<Vec<f64>> {
    ensure_width("gaussian_sample", cov_diag, mean.len())?;
    ensure_finite("gaussian_sample", mean)?;
    ensure_finite("gaussian_sample", cov_diag)?;
    if let Some(i) = cov_diag.iter().position(|&c| c < 0.0) {
        return Err(Error::InvalidInput(format!(
            "gaussian_sample: negative variance at coordinate {i}"
        )));
    }
    Ok(mean
        .iter()
        .zip(cov_diag)
        .map(|(m, c)| m + c.sqrt() * rng.standard_normal())
        .collect())
}
