//! Blocked max-sum similarity between a multi-view image embedding and a text
//! embedding.
//!
//! Both embeddings are cut into contiguous meta-blocks of width `d2`. The image
//! yields `p = n * d1 / d2` blocks and the text `q = d1 / d2`. The affinity
//! matrix holds the cosine of every (image block, text block) pair, and the
//! score sums, over text blocks, the best image-block cosine:
//!
//! ```text
//! A[i][j] = <v_i, t_j> / (|v_i| |t_j|)
//! S       = sum_j max_i A[i][j]
//! ```
//!
//! Per-pair cost is `p * q * d2` multiply-adds, linear in the number of views.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AvseError, Result};
use crate::linalg::{dot, guarded_cosine, norm, Matrix, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaBlockConfig {
    pub d1: usize,
    pub d2: usize,
    pub n_views: usize,
}

impl MetaBlockConfig {
    pub fn new(d1: usize, d2: usize, n_views: usize) -> Result<Self> {
        let cfg = MetaBlockConfig { d1, d2, n_views };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 || self.n_views == 0 {
            return Err(AvseError::domain(format!(
                "d1, d2 and n_views must be positive (got {}, {}, {})",
                self.d1, self.d2, self.n_views
            )));
        }
        if self.d1 % self.d2 != 0 {
            return Err(AvseError::domain(format!(
                "block width d2={} does not divide d1={}",
                self.d2, self.d1
            )));
        }
        Ok(())
    }

    /// Number of image blocks.
    pub fn p(&self) -> usize {
        self.n_views * self.d1 / self.d2
    }

    /// Number of text blocks.
    pub fn q(&self) -> usize {
        self.d1 / self.d2
    }

    pub fn image_len(&self) -> usize {
        self.n_views * self.d1
    }

    /// Multiply-adds spent on the affinity matrix of one pair.
    pub fn ops_per_pair(&self) -> u64 {
        (self.p() * self.q() * self.d2) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Image,
    Text,
}

pub fn split_blocks<'a>(embedding: &'a [f64], cfg: &MetaBlockConfig, side: Side) -> Result<Vec<&'a [f64]>> {
    cfg.validate()?;
    let expected = match side {
        Side::Image => cfg.image_len(),
        Side::Text => cfg.d1,
    };
    if embedding.len() != expected {
        return Err(AvseError::domain(format!(
            "{side:?} embedding has length {}, expected {expected}",
            embedding.len()
        )));
    }
    Ok(embedding.chunks_exact(cfg.d2).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(pub Matrix);

impl AffinityMatrix {
    pub fn p(&self) -> usize {
        self.0.rows()
    }

    pub fn q(&self) -> usize {
        self.0.cols()
    }

    /// Row index of the maximum in column `j`; ties go to the lowest index.
    pub fn column_argmax(&self, j: usize) -> usize {
        let mut best = 0;
        for i in 1..self.p() {
            if self.0[(i, j)] > self.0[(best, j)] {
                best = i;
            }
        }
        best
    }

    /// Max-sum pooling: the sum over columns of the column maximum.
    pub fn max_sum(&self) -> f64 {
        (0..self.q()).map(|j| self.0[(self.column_argmax(j), j)]).sum()
    }
}

pub fn affinity_matrix(image_blocks: &[&[f64]], text_blocks: &[&[f64]]) -> Result<AffinityMatrix> {
    let width = image_blocks
        .first()
        .or(text_blocks.first())
        .map_or(0, |b| b.len());
    if image_blocks.is_empty()
        || text_blocks.is_empty()
        || image_blocks.iter().chain(text_blocks).any(|b| b.len() != width)
    {
        return Err(AvseError::domain("affinity needs nonempty blocks of one width"));
    }
    let mut a = Matrix::zeros(image_blocks.len(), text_blocks.len());
    for (i, v) in image_blocks.iter().enumerate() {
        for (j, t) in text_blocks.iter().enumerate() {
            a[(i, j)] = guarded_cosine(v, t).clamp(-1.0, 1.0);
        }
    }
    Ok(AffinityMatrix(a))
}

pub fn aeom_affinity(image_emb: &[f64], text_emb: &[f64], cfg: &MetaBlockConfig) -> Result<AffinityMatrix> {
    let v = split_blocks(image_emb, cfg, Side::Image)?;
    let t = split_blocks(text_emb, cfg, Side::Text)?;
    affinity_matrix(&v, &t)
}

pub fn aeom_score(image_emb: &[f64], text_emb: &[f64], cfg: &MetaBlockConfig) -> Result<f64> {
    Ok(aeom_affinity(image_emb, text_emb, cfg)?.max_sum())
}

/// Plain cosine of two equal-length vectors.
pub fn cosine_score(pooled_image_emb: &[f64], text_emb: &[f64]) -> Result<f64> {
    if pooled_image_emb.len() != text_emb.len() {
        return Err(AvseError::domain(format!(
            "cosine needs equal lengths, got {} and {}",
            pooled_image_emb.len(),
            text_emb.len()
        )));
    }
    Ok(guarded_cosine(pooled_image_emb, text_emb).clamp(-1.0, 1.0))
}

/// Mean of the `n_views` consecutive views of a flat image embedding.
pub fn mean_pool_views(image_emb: &[f64], n_views: usize) -> Result<Vec<f64>> {
    if n_views == 0 || image_emb.len() % n_views != 0 {
        return Err(AvseError::domain(format!(
            "image length {} is not a multiple of {n_views} views",
            image_emb.len()
        )));
    }
    let d1 = image_emb.len() / n_views;
    let mut out = vec![0.0; d1];
    for view in image_emb.chunks_exact(d1) {
        for (o, &x) in out.iter_mut().zip(view) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= n_views as f64);
    Ok(out)
}

/// Static-cosine baseline: views are mean-pooled before the cosine.
pub fn pooled_cosine_score(image_emb: &[f64], text_emb: &[f64], cfg: &MetaBlockConfig) -> Result<f64> {
    if image_emb.len() != cfg.image_len() {
        return Err(AvseError::domain(format!(
            "image embedding has length {}, expected {}",
            image_emb.len(),
            cfg.image_len()
        )));
    }
    cosine_score(&mean_pool_views(image_emb, cfg.n_views)?, text_emb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Aeom,
    Cosine,
    CrossAttention,
}

impl std::str::FromStr for ScoreMethod {
    type Err = AvseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aeom" => Ok(ScoreMethod::Aeom),
            "cosine" => Ok(ScoreMethod::Cosine),
            "xattn" | "cross_attention" => Ok(ScoreMethod::CrossAttention),
            other => Err(AvseError::domain(format!("unknown scoring method `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMethod::Aeom => "aeom",
            ScoreMethod::Cosine => "cosine",
            ScoreMethod::CrossAttention => "xattn",
        })
    }
}

/// Scores of every image (rows) against every text (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Matrix,
    pub method: ScoreMethod,
}

impl SimilarityMatrix {
    pub fn new(scores: Matrix, method: ScoreMethod) -> Self {
        SimilarityMatrix { scores, method }
    }

    pub fn num_images(&self) -> usize {
        self.scores.rows()
    }

    pub fn num_texts(&self) -> usize {
        self.scores.cols()
    }
}

/// Unit-normalized meta-blocks (guarded), flattened.
fn unit_blocks(emb: &[f64], d2: usize) -> Vec<f64> {
    let mut out = emb.to_vec();
    for block in out.chunks_exact_mut(d2) {
        let n = norm(block).max(NORM_EPS);
        block.iter_mut().for_each(|x| *x /= n);
    }
    out
}

/// Exhaustive batched scoring. Rows are scored in parallel on the current
/// rayon pool; each entry is computed independently so the result does not
/// depend on the thread count.
pub fn score_matrix<I, T>(
    images: &[I],
    texts: &[T],
    cfg: &MetaBlockConfig,
    method: ScoreMethod,
) -> Result<SimilarityMatrix>
where
    I: AsRef<[f64]> + Sync,
    T: AsRef<[f64]> + Sync,
{
    cfg.validate()?;
    if images.is_empty() || texts.is_empty() {
        return Err(AvseError::domain("score_matrix needs nonempty inputs"));
    }
    for im in images {
        if im.as_ref().len() != cfg.image_len() {
            return Err(AvseError::domain(format!(
                "image embedding has length {}, expected {}",
                im.as_ref().len(),
                cfg.image_len()
            )));
        }
    }
    for t in texts {
        if t.as_ref().len() != cfg.d1 {
            return Err(AvseError::domain(format!(
                "text embedding has length {}, expected {}",
                t.as_ref().len(),
                cfg.d1
            )));
        }
    }
    let (block, image_units, text_units): (usize, Vec<Vec<f64>>, Vec<Vec<f64>>) = match method {
        ScoreMethod::Aeom => (
            cfg.d2,
            images.iter().map(|v| unit_blocks(v.as_ref(), cfg.d2)).collect(),
            texts.iter().map(|t| unit_blocks(t.as_ref(), cfg.d2)).collect(),
        ),
        ScoreMethod::Cosine => (
            cfg.d1,
            images
                .iter()
                .map(|v| mean_pool_views(v.as_ref(), cfg.n_views).map(|m| unit_blocks(&m, cfg.d1)))
                .collect::<Result<_>>()?,
            texts.iter().map(|t| unit_blocks(t.as_ref(), cfg.d1)).collect(),
        ),
        ScoreMethod::CrossAttention => {
            return Err(AvseError::domain(
                "cross-attention scoring needs patch and word features, not pooled embeddings",
            ))
        }
    };
    let n_txt = texts.len();
    let rows: Vec<Vec<f64>> = image_units
        .par_iter()
        .map(|v| {
            text_units
                .iter()
                .map(|t| {
                    t.chunks_exact(block)
                        .map(|tb| {
                            v.chunks_exact(block)
                                .map(|vb| dot(vb, tb).clamp(-1.0, 1.0))
                                .fold(f64::NEG_INFINITY, f64::max)
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    let scores = Matrix::from_vec(images.len(), n_txt, rows.into_iter().flatten().collect())?;
    Ok(SimilarityMatrix::new(scores, method))
}
