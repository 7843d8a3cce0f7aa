//! Training objectives and their hand-derived gradients.
//!
//! * `reg_loss`: pushes the batch cross-correlation between every pair of views
//!   towards the identity, `sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2`.
//! * `triplet_loss`: bidirectional hinge loss on the hardest in-batch negatives.
//! * `total_loss`: the sum of both over a batch encoded by [`ToyEncoderParams`].
//!
//! Gradients route through the column max of the affinity matrix (lowest index
//! on ties) and treat a hinge sitting exactly at zero as inactive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aeom::{mean_pool_views, score_matrix, MetaBlockConfig, ScoreMethod, SimilarityMatrix};
use crate::encoder::ToyEncoderParams;
use crate::error::{AvseError, Result};
use crate::linalg::{axpy, dot, guarded_cosine, guarded_cosine_grad_into, norm, Matrix, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub lambda_reg: f64,
    /// When false the regularizer is dropped from the objective (ablation).
    #[serde(default = "default_true")]
    pub use_reg: bool,
}

fn default_true() -> bool {
    true
}

impl LossConfig {
    /// Margin 0.2 and `lambda = 1 / (d1 - 1)`.
    pub fn for_dim(d1: usize) -> Self {
        LossConfig {
            margin: 0.2,
            lambda_reg: default_lambda(d1),
            use_reg: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(AvseError::domain(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.lambda_reg > 0.0) || !self.lambda_reg.is_finite() {
            return Err(AvseError::domain(format!(
                "lambda_reg must be > 0, got {}",
                self.lambda_reg
            )));
        }
        Ok(())
    }
}

/// `1 / (d1 - 1)`, the weight that balances the diagonal and off-diagonal terms.
pub fn default_lambda(d1: usize) -> f64 {
    1.0 / (d1.max(2) - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_m: f64,
    pub l_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_m: f64, l_reg: f64) -> Self {
        LossBreakdown {
            l_m,
            l_reg,
            total: l_m + l_reg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub loss: LossConfig,
    pub blocks: MetaBlockConfig,
    pub method: ScoreMethod,
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.blocks.validate()?;
        if self.method == ScoreMethod::CrossAttention {
            return Err(AvseError::domain("training supports the aeom and cosine methods only"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation(pub Matrix);

pub fn cross_correlation(view_a: &Matrix, view_b: &Matrix) -> Result<CrossCorrelation> {
    check_view_pair(view_a, view_b)?;
    let a = normalize_columns(view_a);
    let b = normalize_columns(view_b);
    Ok(CrossCorrelation(a.transpose().matmul(&b)?))
}

fn check_view_pair(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() < 2 {
        return Err(AvseError::domain(format!(
            "cross-correlation needs a batch of at least 2, got {}",
            a.rows()
        )));
    }
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(AvseError::domain(format!(
            "view batches differ in shape: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn column_norms(m: &Matrix) -> Vec<f64> {
    (0..m.cols()).map(|c| norm(&m.column(c))).collect()
}

fn normalize_columns(m: &Matrix) -> Matrix {
    let norms = column_norms(m);
    let mut out = m.clone();
    for r in 0..m.rows() {
        for (x, n) in out.row_mut(r).iter_mut().zip(&norms) {
            *x /= n.max(NORM_EPS);
        }
    }
    out
}

/// Backpropagates `upstream` (gradient w.r.t. the column-normalized matrix)
/// through the guarded column normalization of `raw`.
fn normalize_columns_backward(raw: &Matrix, upstream: &Matrix) -> Matrix {
    let norms = column_norms(raw);
    let mut out = Matrix::zeros(raw.rows(), raw.cols());
    for (c, &n) in norms.iter().enumerate() {
        if n > NORM_EPS {
            let proj: f64 = (0..raw.rows()).map(|r| raw[(r, c)] / n * upstream[(r, c)]).sum();
            for r in 0..raw.rows() {
                out[(r, c)] = (upstream[(r, c)] - raw[(r, c)] / n * proj) / n;
            }
        } else {
            for r in 0..raw.rows() {
                out[(r, c)] = upstream[(r, c)] / NORM_EPS;
            }
        }
    }
    out
}

fn pair_reg(c: &Matrix, lambda_reg: f64) -> f64 {
    let d = c.rows();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = c[(i, j)];
            if i == j {
                diag += (1.0 - v) * (1.0 - v);
            } else {
                off += v * v;
            }
        }
    }
    diag + lambda_reg * off
}

/// Regularizer summed over every unordered pair of views.
pub fn reg_loss(views: &[Matrix], lambda_reg: f64) -> Result<f64> {
    if views.len() < 2 {
        return Err(AvseError::domain(format!(
            "regularizer needs at least 2 views, got {}",
            views.len()
        )));
    }
    let mut total = 0.0;
    for g in 0..views.len() {
        for h in g + 1..views.len() {
            total += pair_reg(&cross_correlation(&views[g], &views[h])?.0, lambda_reg);
        }
    }
    Ok(total)
}

/// Regularizer value and its gradient with respect to every view batch.
pub fn reg_loss_grad(views: &[Matrix], lambda_reg: f64) -> Result<(f64, Vec<Matrix>)> {
    if views.len() < 2 {
        return Err(AvseError::domain(format!(
            "regularizer needs at least 2 views, got {}",
            views.len()
        )));
    }
    let mut grads: Vec<Matrix> = views.iter().map(|v| Matrix::zeros(v.rows(), v.cols())).collect();
    let normalized: Vec<Matrix> = views.iter().map(normalize_columns).collect();
    let mut total = 0.0;
    for g in 0..views.len() {
        for h in g + 1..views.len() {
            check_view_pair(&views[g], &views[h])?;
            let (a, b) = (&normalized[g], &normalized[h]);
            let c = a.transpose().matmul(b)?;
            total += pair_reg(&c, lambda_reg);
            let d = c.rows();
            let mut dc = Matrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    dc[(i, j)] = if i == j {
                        -2.0 * (1.0 - c[(i, j)])
                    } else {
                        2.0 * lambda_reg * c[(i, j)]
                    };
                }
            }
            let da = b.matmul(&dc.transpose())?;
            let db = a.matmul(&dc)?;
            let ga = normalize_columns_backward(&views[g], &da);
            let gb = normalize_columns_backward(&views[h], &db);
            axpy(1.0, ga.as_slice(), grads[g].as_mut_slice());
            axpy(1.0, gb.as_slice(), grads[h].as_mut_slice());
        }
    }
    Ok((total, grads))
}

/// Hardest in-batch negatives for one positive pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HardNegatives {
    /// Hardest text for image k (column index).
    text: usize,
    /// Hardest image for text k (row index).
    image: usize,
}

fn hardest_negatives(s: &Matrix, k: usize) -> HardNegatives {
    let n = s.rows();
    let mut text = usize::MAX;
    let mut image = usize::MAX;
    for j in (0..n).filter(|&j| j != k) {
        if text == usize::MAX || s[(k, j)] > s[(k, text)] {
            text = j;
        }
        if image == usize::MAX || s[(j, k)] > s[(image, k)] {
            image = j;
        }
    }
    HardNegatives { text, image }
}

fn check_square(sim: &SimilarityMatrix) -> Result<()> {
    if sim.scores.rows() != sim.scores.cols() || sim.scores.rows() < 2 {
        return Err(AvseError::domain(format!(
            "triplet loss needs a square matrix of side >= 2, got {}x{}",
            sim.scores.rows(),
            sim.scores.cols()
        )));
    }
    Ok(())
}

/// `sum_k [m - S(k,k) + max_{j!=k} S(k,j)]+ + [m - S(k,k) + max_{i!=k} S(i,k)]+`
pub fn triplet_loss(sim: &SimilarityMatrix, margin: f64) -> Result<f64> {
    check_square(sim)?;
    let s = &sim.scores;
    let mut total = 0.0;
    for k in 0..s.rows() {
        let hn = hardest_negatives(s, k);
        total += (margin - s[(k, k)] + s[(k, hn.text)]).max(0.0);
        total += (margin - s[(k, k)] + s[(hn.image, k)]).max(0.0);
    }
    Ok(total)
}

/// Subgradient of [`triplet_loss`] with respect to every score.
pub fn triplet_loss_grad(sim: &SimilarityMatrix, margin: f64) -> Result<Matrix> {
    check_square(sim)?;
    let s = &sim.scores;
    let mut g = Matrix::zeros(s.rows(), s.cols());
    for k in 0..s.rows() {
        let hn = hardest_negatives(s, k);
        if margin - s[(k, k)] + s[(k, hn.text)] > 0.0 {
            g[(k, k)] -= 1.0;
            g[(k, hn.text)] += 1.0;
        }
        if margin - s[(k, k)] + s[(hn.image, k)] > 0.0 {
            g[(k, k)] -= 1.0;
            g[(hn.image, k)] += 1.0;
        }
    }
    Ok(g)
}

/// Pooled encoder inputs for a matched batch: row `b` of every matrix belongs
/// to pair `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// One `B x d_in` matrix per view holding the mean patch feature of that
    /// view's group.
    pub image_views: Vec<Matrix>,
    /// `B x d_in` mean token features.
    pub texts: Matrix,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.texts.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.rows() == 0
    }

    fn validate(&self, params: &ToyEncoderParams, cfg: &ObjectiveConfig) -> Result<()> {
        cfg.validate()?;
        if self.len() < 2 {
            return Err(AvseError::domain(format!("batch size must be >= 2, got {}", self.len())));
        }
        if self.image_views.len() != cfg.blocks.n_views {
            return Err(AvseError::domain(format!(
                "batch has {} views, block config expects {}",
                self.image_views.len(),
                cfg.blocks.n_views
            )));
        }
        if params.d1() != cfg.blocks.d1 {
            return Err(AvseError::domain(format!(
                "encoder width {} does not match d1={}",
                params.d1(),
                cfg.blocks.d1
            )));
        }
        for m in self.image_views.iter().chain(std::iter::once(&self.texts)) {
            if m.rows() != self.len() || m.cols() != params.d_in() {
                return Err(AvseError::domain(format!(
                    "batch matrix is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    self.len(),
                    params.d_in()
                )));
            }
        }
        Ok(())
    }
}

/// Encoded batch.
struct Forward {
    /// `B x d1` per view.
    views: Vec<Matrix>,
    /// `B x (n * d1)` flat multi-view embeddings.
    images: Vec<Vec<f64>>,
    /// `B x d1`.
    texts: Matrix,
}

fn project_rows(x: &Matrix, proj: &Matrix, bias: &[f64]) -> Result<Matrix> {
    let mut out = x.matmul(proj)?;
    for r in 0..out.rows() {
        axpy(1.0, bias, out.row_mut(r));
    }
    Ok(out)
}

fn forward(batch: &Batch, params: &ToyEncoderParams) -> Result<Forward> {
    let views = batch
        .image_views
        .iter()
        .map(|x| project_rows(x, &params.patch_proj, &params.patch_bias))
        .collect::<Result<Vec<_>>>()?;
    let texts = project_rows(&batch.texts, &params.text_proj, &params.text_bias)?;
    let images = (0..batch.len())
        .map(|b| views.iter().flat_map(|v| v.row(b).iter().copied()).collect())
        .collect();
    Ok(Forward { views, images, texts })
}

fn text_rows(m: &Matrix) -> Vec<&[f64]> {
    (0..m.rows()).map(|r| m.row(r)).collect()
}

/// Similarity matrix of the encoded batch.
pub fn batch_similarity(batch: &Batch, params: &ToyEncoderParams, cfg: &ObjectiveConfig) -> Result<SimilarityMatrix> {
    batch.validate(params, cfg)?;
    let fwd = forward(batch, params)?;
    score_matrix(&fwd.images, &text_rows(&fwd.texts), &cfg.blocks, cfg.method)
}

fn loss_from_forward(fwd: &Forward, cfg: &ObjectiveConfig) -> Result<LossBreakdown> {
    let sim = score_matrix(&fwd.images, &text_rows(&fwd.texts), &cfg.blocks, cfg.method)?;
    let l_m = triplet_loss(&sim, cfg.loss.margin)?;
    let l_reg = if cfg.loss.use_reg && fwd.views.len() >= 2 {
        reg_loss(&fwd.views, cfg.loss.lambda_reg)?
    } else {
        0.0
    };
    Ok(LossBreakdown::new(l_m, l_reg))
}

/// `L = L_m + L_reg` for one batch. With a single view there is no view pair
/// and `L_reg` is zero.
pub fn total_loss(batch: &Batch, params: &ToyEncoderParams, cfg: &ObjectiveConfig) -> Result<LossBreakdown> {
    batch.validate(params, cfg)?;
    loss_from_forward(&forward(batch, params)?, cfg)
}

/// Gradient of a pair score with respect to the image and text embeddings,
/// scaled by `upstream` and accumulated.
fn score_pair_grad(
    image: &[f64],
    text: &[f64],
    cfg: &MetaBlockConfig,
    method: ScoreMethod,
    upstream: f64,
    d_image: &mut [f64],
    d_text: &mut [f64],
) -> Result<()> {
    match method {
        ScoreMethod::Aeom => {
            let d2 = cfg.d2;
            let vb: Vec<&[f64]> = image.chunks_exact(d2).collect();
            for (j, tb) in text.chunks_exact(d2).enumerate() {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for (i, v) in vb.iter().enumerate() {
                    let a = guarded_cosine(v, tb);
                    if a > best_val {
                        best_val = a;
                        best = i;
                    }
                }
                let v = vb[best];
                guarded_cosine_grad_into(v, tb, upstream, &mut d_image[best * d2..(best + 1) * d2]);
                guarded_cosine_grad_into(tb, v, upstream, &mut d_text[j * d2..(j + 1) * d2]);
            }
        }
        ScoreMethod::Cosine => {
            let pooled = mean_pool_views(image, cfg.n_views)?;
            let mut d_pooled = vec![0.0; pooled.len()];
            guarded_cosine_grad_into(&pooled, text, upstream, &mut d_pooled);
            guarded_cosine_grad_into(text, &pooled, upstream, d_text);
            let inv = 1.0 / cfg.n_views as f64;
            for chunk in d_image.chunks_exact_mut(pooled.len()) {
                axpy(inv, &d_pooled, chunk);
            }
        }
        ScoreMethod::CrossAttention => {
            return Err(AvseError::domain("no gradient for cross-attention scoring"));
        }
    }
    Ok(())
}

/// Gradient with the same layout as the encoder parameters.
pub type Gradients = ToyEncoderParams;

/// Loss and analytic gradient of [`total_loss`] with respect to every encoder parameter.
pub fn grad_total_loss(
    batch: &Batch,
    params: &ToyEncoderParams,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, Gradients)> {
    batch.validate(params, cfg)?;
    let fwd = forward(batch, params)?;
    let bsz = batch.len();
    let d1 = cfg.blocks.d1;
    let n = cfg.blocks.n_views;

    let sim = score_matrix(&fwd.images, &text_rows(&fwd.texts), &cfg.blocks, cfg.method)?;
    let l_m = triplet_loss(&sim, cfg.loss.margin)?;
    let d_sim = triplet_loss_grad(&sim, cfg.loss.margin)?;

    let mut d_views: Vec<Matrix> = (0..n).map(|_| Matrix::zeros(bsz, d1)).collect();
    let mut d_texts = Matrix::zeros(bsz, d1);
    let mut d_image = vec![0.0; n * d1];
    for b in 0..bsz {
        for c in 0..bsz {
            let up = d_sim[(b, c)];
            if up == 0.0 {
                continue;
            }
            d_image.iter_mut().for_each(|x| *x = 0.0);
            score_pair_grad(
                &fwd.images[b],
                fwd.texts.row(c),
                &cfg.blocks,
                cfg.method,
                up,
                &mut d_image,
                d_texts.row_mut(c),
            )?;
            for (g, chunk) in d_image.chunks_exact(d1).enumerate() {
                axpy(1.0, chunk, d_views[g].row_mut(b));
            }
        }
    }

    let l_reg = if cfg.loss.use_reg && n >= 2 {
        let (value, grads) = reg_loss_grad(&fwd.views, cfg.loss.lambda_reg)?;
        for (dv, g) in d_views.iter_mut().zip(&grads) {
            axpy(1.0, g.as_slice(), dv.as_mut_slice());
        }
        value
    } else {
        0.0
    };

    let mut grads = ToyEncoderParams::zeros(params.d_in(), d1);
    for (x, dv) in batch.image_views.iter().zip(&d_views) {
        let dw = x.transpose().matmul(dv)?;
        axpy(1.0, dw.as_slice(), grads.patch_proj.as_mut_slice());
        for b in 0..bsz {
            axpy(1.0, dv.row(b), &mut grads.patch_bias);
        }
    }
    let dw = batch.texts.transpose().matmul(&d_texts)?;
    axpy(1.0, dw.as_slice(), grads.text_proj.as_mut_slice());
    for b in 0..bsz {
        axpy(1.0, d_texts.row(b), &mut grads.text_bias);
    }
    Ok((LossBreakdown::new(l_m, l_reg), grads))
}

/// Discrete state of every max and hinge in the loss: column argmax of every
/// pair's affinity, the hardest negatives, and which hinges are active.
/// Finite differences across a change of this signature straddle a kink.
pub fn kink_signature(batch: &Batch, params: &ToyEncoderParams, cfg: &ObjectiveConfig) -> Result<Vec<usize>> {
    batch.validate(params, cfg)?;
    let fwd = forward(batch, params)?;
    let sim = score_matrix(&fwd.images, &text_rows(&fwd.texts), &cfg.blocks, cfg.method)?;
    let s = &sim.scores;
    let mut sig = Vec::new();
    if cfg.method == ScoreMethod::Aeom {
        let d2 = cfg.blocks.d2;
        for img in &fwd.images {
            for c in 0..batch.len() {
                for tb in fwd.texts.row(c).chunks_exact(d2) {
                    let mut best = 0;
                    let mut best_val = f64::NEG_INFINITY;
                    for (i, v) in img.chunks_exact(d2).enumerate() {
                        let a = guarded_cosine(v, tb);
                        if a > best_val {
                            best_val = a;
                            best = i;
                        }
                    }
                    sig.push(best);
                }
            }
        }
    }
    for k in 0..s.rows() {
        let hn = hardest_negatives(s, k);
        sig.push(hn.text);
        sig.push(hn.image);
        sig.push(usize::from(cfg.loss.margin - s[(k, k)] + s[(k, hn.text)] > 0.0));
        sig.push(usize::from(cfg.loss.margin - s[(k, k)] + s[(hn.image, k)] > 0.0));
    }
    Ok(sig)
}

/// Relative error above which a coordinate is flagged.
pub const FLAG_THRESHOLD: f64 = 1e-3;

/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is zero are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// A max or hinge changes state within `±h` of this coordinate.
    pub kink_adjacent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub h: f64,
    pub coords: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    /// Largest relative error over smooth (non-kink) coordinates.
    pub fn max_rel_err(&self) -> f64 {
        self.coords
            .iter()
            .filter(|c| !c.kink_adjacent)
            .map(|c| c.rel_err)
            .fold(0.0, f64::max)
    }

    pub fn kink_count(&self) -> usize {
        self.coords.iter().filter(|c| c.kink_adjacent).count()
    }

    /// Smooth coordinates whose relative error exceeds [`FLAG_THRESHOLD`].
    pub fn flagged(&self) -> Vec<&CoordinateCheck> {
        self.coords
            .iter()
            .filter(|c| !c.kink_adjacent && c.rel_err > FLAG_THRESHOLD)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "coordinates: {}\nh: {:e}\nkink-adjacent (excluded): {}\nmax relative error: {:.3e}\nflagged (> {:e}): {}\n",
            self.coords.len(),
            self.h,
            self.kink_count(),
            self.max_rel_err(),
            FLAG_THRESHOLD,
            self.flagged().len()
        );
        for c in self.flagged() {
            out.push_str(&format!(
                "  flagged coord {}: analytic {:.6e} numeric {:.6e} rel {:.3e}\n",
                c.index, c.analytic, c.numeric, c.rel_err
            ));
        }
        for c in self.coords.iter().filter(|c| c.kink_adjacent) {
            out.push_str(&format!(
                "  kink coord {}: analytic {:.6e} numeric {:.6e}\n",
                c.index, c.analytic, c.numeric
            ));
        }
        out
    }
}

/// Random batch and perturbed encoder for gradient checking. Features are
/// uniform in `[-1, 1)`.
pub fn random_check_instance(
    seed: u64,
    batch_size: usize,
    d_in: usize,
    blocks: MetaBlockConfig,
    loss: LossConfig,
) -> (Batch, ToyEncoderParams, ObjectiveConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |r: usize, c: usize| {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .expect("shape matches data")
    };
    let image_views = (0..blocks.n_views).map(|_| uniform(batch_size, d_in)).collect();
    let texts = uniform(batch_size, d_in);
    let mut params = ToyEncoderParams::random(d_in, blocks.d1, seed.wrapping_add(100));
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
    }
    let cfg = ObjectiveConfig { loss, blocks, method: ScoreMethod::Aeom };
    (Batch { image_views, texts }, params, cfg)
}

/// Central differences `(L(θ+h) - L(θ-h)) / 2h` for every parameter coordinate,
/// compared against [`grad_total_loss`].
pub fn finite_difference_check(
    batch: &Batch,
    params: &ToyEncoderParams,
    cfg: &ObjectiveConfig,
    h: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(AvseError::domain(format!("step h must be positive, got {h}")));
    }
    let (_, analytic) = grad_total_loss(batch, params, cfg)?;
    let base_sig = kink_signature(batch, params, cfg)?;
    let mut probe = params.clone();
    let mut coords = Vec::with_capacity(params.num_params());
    for i in 0..params.num_params() {
        let orig = params.get_flat(i);
        probe.set_flat(i, orig + h);
        let plus = total_loss(batch, &probe, cfg)?.total;
        let sig_plus = kink_signature(batch, &probe, cfg)?;
        probe.set_flat(i, orig - h);
        let minus = total_loss(batch, &probe, cfg)?.total;
        let sig_minus = kink_signature(batch, &probe, cfg)?;
        probe.set_flat(i, orig);
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.get_flat(i);
        coords.push(CoordinateCheck {
            index: i,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
            kink_adjacent: sig_plus != base_sig || sig_minus != base_sig,
        });
    }
    Ok(GradCheckReport { h, coords })
}

/// Sum of squares of every gradient entry (used in diagnostics).
pub fn grad_norm(g: &Gradients) -> f64 {
    g.tensors().iter().map(|t| dot(t, t)).sum::<f64>().sqrt()
}
