//! Scoring throughput benchmark: blocked max-sum (AEOM), pooled cosine, and a
//! single-pass word-to-region cross-attention baseline.
//!
//! Each method scores one query exhaustively against `N` candidates. The timed
//! kernels run in `f32` on a single thread. Candidate embeddings are drawn once
//! into a fixed pool and cycled so that large `N` fits in memory while every
//! candidate still costs a full score evaluation.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aeom::MetaBlockConfig;
use crate::error::{AvseError, Result};
use crate::linalg::{guarded_cosine, Matrix, NORM_EPS};

pub const DEFAULT_TEMPERATURE: f64 = 9.0;

/// Reference cross-attention score in `f64`.
///
/// Every word attends over all regions with softmax weights on the
/// temperature-scaled cosine. The score is the average cosine between each
/// word and its attended vector.
pub fn cross_attention_score(patch_feats: &Matrix, word_feats: &Matrix, temperature: f64) -> Result<f64> {
    if patch_feats.rows() == 0 || word_feats.rows() == 0 {
        return Err(AvseError::domain("cross attention needs at least one region and one word"));
    }
    if patch_feats.cols() != word_feats.cols() {
        return Err(AvseError::domain(format!(
            "region width {} does not match word width {}",
            patch_feats.cols(),
            word_feats.cols()
        )));
    }
    if !patch_feats.is_finite() || !word_feats.is_finite() || !temperature.is_finite() {
        return Err(AvseError::domain("cross attention inputs must be finite"));
    }
    let d = patch_feats.cols();
    let mut total = 0.0;
    let mut logits = vec![0.0; patch_feats.rows()];
    for w in 0..word_feats.rows() {
        let word = word_feats.row(w);
        for (r, logit) in logits.iter_mut().enumerate() {
            *logit = temperature * guarded_cosine(word, patch_feats.row(r));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut attended = vec![0.0; d];
        for (r, &logit) in logits.iter().enumerate() {
            let weight = (logit - max).exp();
            z += weight;
            for (a, &x) in attended.iter_mut().zip(patch_feats.row(r)) {
                *a += weight * x;
            }
        }
        for a in &mut attended {
            *a /= z;
        }
        total += guarded_cosine(word, &attended);
    }
    Ok(total / word_feats.rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Aeom,
    Cosine,
    #[serde(rename = "xattn")]
    CrossAttention,
}

impl BenchMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMethod::Aeom => "aeom",
            BenchMethod::Cosine => "cosine",
            BenchMethod::CrossAttention => "xattn",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = AvseError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aeom" => Ok(BenchMethod::Aeom),
            "cosine" => Ok(BenchMethod::Cosine),
            "xattn" | "cross_attention" => Ok(BenchMethod::CrossAttention),
            other => Err(AvseError::domain(format!("unknown bench method '{other}'"))),
        }
    }
}

/// Shapes used by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchDims {
    pub d1: usize,
    pub d2: usize,
    pub n_views: usize,
    /// Image regions for the cross-attention baseline.
    pub regions: usize,
    /// Query words for the cross-attention baseline.
    pub words: usize,
    /// Distinct AEOM / cosine candidates kept in memory.
    pub pool: usize,
    /// Distinct cross-attention candidates kept in memory.
    pub xattn_pool: usize,
}

impl Default for BenchDims {
    fn default() -> Self {
        BenchDims { d1: 512, d2: 256, n_views: 2, regions: 196, words: 12, pool: 1024, xattn_pool: 64 }
    }
}

impl BenchDims {
    pub fn blocks(&self) -> Result<MetaBlockConfig> {
        MetaBlockConfig::new(self.d1, self.d2, self.n_views)
    }

    pub fn validate(&self) -> Result<()> {
        self.blocks()?;
        if self.regions == 0 || self.words == 0 || self.pool == 0 || self.xattn_pool == 0 {
            return Err(AvseError::domain("regions, words and pool sizes must be positive"));
        }
        Ok(())
    }

    /// Exact score-op count (multiply-adds) for one query against `count` candidates.
    pub fn ops(&self, method: BenchMethod, count: u64) -> Result<u64> {
        let per = match method {
            BenchMethod::Aeom => self.blocks()?.ops_per_pair(),
            BenchMethod::Cosine => self.d1 as u64,
            BenchMethod::CrossAttention => {
                let (r, w, d) = (self.regions as u64, self.words as u64, self.d1 as u64);
                2 * r * w * d + 2 * w * d
            }
        };
        Ok(count * per)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: BenchMethod,
    pub count: u64,
    pub median_ms: f64,
    pub ops: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn get(&self, method: BenchMethod, count: u64) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.count == count)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,count,median_ms,ops\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{:.6},{}\n", row.method, row.count, row.median_ms, row.ops));
        }
        out
    }

    /// Least-squares fit of log(time) against log(count) for one method.
    pub fn loglog_fit(&self, method: BenchMethod) -> Option<LogLogFit> {
        let points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.count as f64, r.median_ms))
            .collect();
        loglog_fit(&points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn loglog_fit(points: &[(f64, f64)]) -> Option<LogLogFit> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LogLogFit { slope, intercept: my - slope * mx, r_squared })
}

fn dot32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: f32 = chunks_a.remainder().iter().zip(chunks_b.remainder()).map(|(x, y)| x * y).sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

fn inv_norm32(a: &[f32]) -> f32 {
    1.0 / dot32(a, a).sqrt().max(NORM_EPS as f32)
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>().into_iter().map(|x| x as f32).collect()
}

/// Candidate pool for the blocked and pooled-cosine kernels.
struct EmbeddingPool {
    images: Vec<f32>,
    block_inv_norms: Vec<f32>,
    pooled: Vec<f32>,
    pooled_inv_norms: Vec<f32>,
    len: usize,
}

impl EmbeddingPool {
    fn new(dims: &BenchDims, rng: &mut ChaCha8Rng) -> Self {
        let width = dims.n_views * dims.d1;
        let p = width / dims.d2;
        let images = random_vec(rng, dims.pool * width);
        let mut block_inv_norms = Vec::with_capacity(dims.pool * p);
        let mut pooled = Vec::with_capacity(dims.pool * dims.d1);
        let mut pooled_inv_norms = Vec::with_capacity(dims.pool);
        for cand in images.chunks_exact(width) {
            block_inv_norms.extend(cand.chunks_exact(dims.d2).map(inv_norm32));
            let mut mean = vec![0.0f32; dims.d1];
            for view in cand.chunks_exact(dims.d1) {
                for (m, &x) in mean.iter_mut().zip(view) {
                    *m += x / dims.n_views as f32;
                }
            }
            pooled_inv_norms.push(inv_norm32(&mean));
            pooled.extend(mean);
        }
        EmbeddingPool { images, block_inv_norms, pooled, pooled_inv_norms, len: dims.pool }
    }
}

fn aeom_scan(pool: &EmbeddingPool, dims: &BenchDims, query: &[f32], count: u64) -> f32 {
    let width = dims.n_views * dims.d1;
    let p = width / dims.d2;
    let blocks: Vec<&[f32]> = query.chunks_exact(dims.d2).collect();
    let inv_q: Vec<f32> = blocks.iter().map(|b| inv_norm32(b)).collect();
    let mut best = f32::NEG_INFINITY;
    for c in 0..count as usize {
        let slot = c % pool.len;
        let cand = &pool.images[slot * width..(slot + 1) * width];
        let inv = &pool.block_inv_norms[slot * p..(slot + 1) * p];
        let mut score = 0.0f32;
        for (t, &iq) in blocks.iter().zip(&inv_q) {
            let mut col_max = f32::NEG_INFINITY;
            for (v, &iv) in cand.chunks_exact(dims.d2).zip(inv) {
                col_max = col_max.max(dot32(v, t) * iv * iq);
            }
            score += col_max;
        }
        best = best.max(score);
    }
    best
}

fn cosine_scan(pool: &EmbeddingPool, dims: &BenchDims, query: &[f32], count: u64) -> f32 {
    let iq = inv_norm32(query);
    let mut best = f32::NEG_INFINITY;
    for c in 0..count as usize {
        let slot = c % pool.len;
        let cand = &pool.pooled[slot * dims.d1..(slot + 1) * dims.d1];
        best = best.max(dot32(cand, query) * pool.pooled_inv_norms[slot] * iq);
    }
    best
}

struct RegionPool {
    regions: Vec<f32>,
    inv_norms: Vec<f32>,
    len: usize,
}

impl RegionPool {
    fn new(dims: &BenchDims, rng: &mut ChaCha8Rng) -> Self {
        let regions = random_vec(rng, dims.xattn_pool * dims.regions * dims.d1);
        let inv_norms = regions.chunks_exact(dims.d1).map(inv_norm32).collect();
        RegionPool { regions, inv_norms, len: dims.xattn_pool }
    }
}

fn xattn_scan(pool: &RegionPool, dims: &BenchDims, words: &[f32], count: u64, temperature: f32) -> f32 {
    let (r_n, d) = (dims.regions, dims.d1);
    let word_inv: Vec<f32> = words.chunks_exact(d).map(inv_norm32).collect();
    let mut logits = vec![0.0f32; r_n];
    let mut attended = vec![0.0f32; d];
    let mut best = f32::NEG_INFINITY;
    for c in 0..count as usize {
        let slot = c % pool.len;
        let regions = &pool.regions[slot * r_n * d..(slot + 1) * r_n * d];
        let inv = &pool.inv_norms[slot * r_n..(slot + 1) * r_n];
        let mut total = 0.0f32;
        for (word, &iw) in words.chunks_exact(d).zip(&word_inv) {
            let mut max = f32::NEG_INFINITY;
            for ((logit, region), &ir) in logits.iter_mut().zip(regions.chunks_exact(d)).zip(inv) {
                *logit = temperature * dot32(word, region) * iw * ir;
                max = max.max(*logit);
            }
            attended.iter_mut().for_each(|a| *a = 0.0);
            for (&logit, region) in logits.iter().zip(regions.chunks_exact(d)) {
                let weight = (logit - max).exp();
                for (a, &x) in attended.iter_mut().zip(region) {
                    *a += weight * x;
                }
            }
            let ia = inv_norm32(&attended);
            total += dot32(word, &attended) * iw * ia;
        }
        best = best.max(total / dims.words as f32);
    }
    best
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Minimum wall time of one repetition; short scans are repeated until it is reached.
const MIN_REP_SECS: f64 = 0.02;

fn time_per_query<F: FnMut(usize) -> f32>(mut scan: F) -> f64 {
    let start = Instant::now();
    let mut queries = 0usize;
    loop {
        black_box(scan(queries));
        queries += 1;
        let elapsed = start.elapsed().as_secs_f64();
        if elapsed >= MIN_REP_SECS {
            return elapsed * 1e3 / queries as f64;
        }
    }
}

/// Times exhaustive single-query scoring for every (method, count) pair.
pub fn bench_throughput(
    methods: &[BenchMethod],
    counts: &[u64],
    dims: &BenchDims,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    dims.validate()?;
    if counts.contains(&0) {
        return Err(AvseError::domain("candidate counts must be at least 1"));
    }
    if repetitions == 0 {
        return Err(AvseError::domain("repetitions must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let needs_pool = methods.iter().any(|m| *m != BenchMethod::CrossAttention);
    let pool = needs_pool.then(|| EmbeddingPool::new(dims, &mut rng));
    let regions = methods.contains(&BenchMethod::CrossAttention).then(|| RegionPool::new(dims, &mut rng));
    let queries: Vec<Vec<f32>> = (0..4).map(|_| random_vec(&mut rng, dims.d1)).collect();
    let word_sets: Vec<Vec<f32>> = (0..4).map(|_| random_vec(&mut rng, dims.words * dims.d1)).collect();
    let temperature = DEFAULT_TEMPERATURE as f32;

    let mut report = BenchReport::default();
    for &method in methods {
        for &count in counts {
            let mut times = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let ms = match method {
                    BenchMethod::Aeom => {
                        let pool = pool.as_ref().expect("pool built for aeom");
                        time_per_query(|i| aeom_scan(pool, dims, &queries[i % queries.len()], count))
                    }
                    BenchMethod::Cosine => {
                        let pool = pool.as_ref().expect("pool built for cosine");
                        time_per_query(|i| cosine_scan(pool, dims, &queries[i % queries.len()], count))
                    }
                    BenchMethod::CrossAttention => {
                        let regions = regions.as_ref().expect("regions built for xattn");
                        time_per_query(|i| {
                            xattn_scan(regions, dims, &word_sets[i % word_sets.len()], count, temperature)
                        })
                    }
                };
                times.push(ms);
            }
            report.rows.push(BenchRow { method, count, median_ms: median(&mut times), ops: dims.ops(method, count)? });
        }
    }
    Ok(report)
}
