//! Linear mean-pool encoder standing in for the image and text backbones.
//!
//! A view is `mean_k(x_k) · W_patch + b_patch`; a caption is
//! `mean_l(y_l) · W_text + b_text`. Pooling first and projecting once is the
//! same linear map as projecting every row and averaging.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AvseError, Result};
use crate::linalg::{axpy, Matrix};
use crate::sampler::SamplePlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoderParams {
    /// `d_in x d1`
    pub patch_proj: Matrix,
    /// `d_in x d1`
    pub text_proj: Matrix,
    pub patch_bias: Vec<f64>,
    pub text_bias: Vec<f64>,
}

impl ToyEncoderParams {
    pub fn zeros(d_in: usize, d1: usize) -> Self {
        ToyEncoderParams {
            patch_proj: Matrix::zeros(d_in, d1),
            text_proj: Matrix::zeros(d_in, d1),
            patch_bias: vec![0.0; d1],
            text_bias: vec![0.0; d1],
        }
    }

    /// Identity projections with zero bias (`d_in == d1`).
    pub fn identity(d: usize) -> Self {
        ToyEncoderParams {
            patch_proj: Matrix::identity(d),
            text_proj: Matrix::identity(d),
            patch_bias: vec![0.0; d],
            text_bias: vec![0.0; d],
        }
    }

    /// Gaussian projections with standard deviation `1/sqrt(d_in)` and zero bias.
    pub fn random(d_in: usize, d1: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).expect("valid std");
        let mut draw = |rows, cols| {
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            Matrix::from_vec(rows, cols, data).expect("shape")
        };
        let patch_proj = draw(d_in, d1);
        let text_proj = draw(d_in, d1);
        ToyEncoderParams {
            patch_proj,
            text_proj,
            patch_bias: vec![0.0; d1],
            text_bias: vec![0.0; d1],
        }
    }

    pub fn d_in(&self) -> usize {
        self.patch_proj.rows()
    }

    pub fn d1(&self) -> usize {
        self.patch_proj.cols()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in canonical order: patch_proj, patch_bias, text_proj, text_bias.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.patch_proj.as_slice(),
            &self.patch_bias,
            self.text_proj.as_slice(),
            &self.text_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.patch_proj.as_mut_slice(),
            &mut self.patch_bias,
            self.text_proj.as_mut_slice(),
            &mut self.text_bias,
        ]
    }

    /// Reads coordinate `i` of the flattened parameter vector.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    /// Euclidean norm of each tensor, in canonical order.
    pub fn norms(&self) -> [f64; 4] {
        self.tensors().map(crate::linalg::norm)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Projects an already mean-pooled patch feature.
    pub fn project_patch(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        project(&self.patch_proj, &self.patch_bias, pooled)
    }

    /// Projects an already mean-pooled token feature.
    pub fn project_text(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        project(&self.text_proj, &self.text_bias, pooled)
    }
}

fn project(proj: &Matrix, bias: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != proj.rows() {
        return Err(AvseError::domain(format!(
            "feature width {} does not match encoder input width {}",
            x.len(),
            proj.rows()
        )));
    }
    let mut out = bias.to_vec();
    for (k, &a) in x.iter().enumerate() {
        axpy(a, proj.row(k), &mut out);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(AvseError::domain("encoder produced a non-finite embedding"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewEmbedding(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding(pub Vec<f64>);

/// `n` view embeddings stored back to back, view 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewImageEmbedding {
    flat: Vec<f64>,
    n_views: usize,
}

impl MultiViewImageEmbedding {
    pub fn from_views(views: &[ViewEmbedding]) -> Result<Self> {
        let d1 = views.first().map_or(0, |v| v.0.len());
        if views.is_empty() || views.iter().any(|v| v.0.len() != d1) {
            return Err(AvseError::domain("views must be nonempty and of equal width"));
        }
        Ok(MultiViewImageEmbedding {
            flat: views.iter().flat_map(|v| v.0.iter().copied()).collect(),
            n_views: views.len(),
        })
    }

    pub fn from_flat(flat: Vec<f64>, n_views: usize) -> Result<Self> {
        if n_views == 0 || flat.len() % n_views != 0 {
            return Err(AvseError::domain(format!(
                "flat length {} is not a multiple of {n_views} views",
                flat.len()
            )));
        }
        Ok(MultiViewImageEmbedding { flat, n_views })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn d1(&self) -> usize {
        self.flat.len() / self.n_views
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn view(&self, i: usize) -> &[f64] {
        let d1 = self.d1();
        &self.flat[i * d1..(i + 1) * d1]
    }

    pub fn views(&self) -> impl Iterator<Item = &[f64]> {
        self.flat.chunks_exact(self.d1())
    }
}

pub fn encode_view(params: &ToyEncoderParams, group_patch_features: &Matrix) -> Result<ViewEmbedding> {
    if group_patch_features.rows() == 0 {
        return Err(AvseError::domain("cannot encode an empty patch group"));
    }
    check_width(params, group_patch_features)?;
    let pooled = group_patch_features.mean_of_rows(0..group_patch_features.rows())?;
    Ok(ViewEmbedding(params.project_patch(&pooled)?))
}

pub fn encode_image(
    params: &ToyEncoderParams,
    plan: &SamplePlan,
    all_patch_features: &Matrix,
) -> Result<MultiViewImageEmbedding> {
    check_width(params, all_patch_features)?;
    let views = pooled_groups(plan, all_patch_features)?
        .iter()
        .map(|pooled| params.project_patch(pooled).map(ViewEmbedding))
        .collect::<Result<Vec<_>>>()?;
    MultiViewImageEmbedding::from_views(&views)
}

/// Mean patch feature of every group of `plan`, in plan order.
pub fn pooled_groups(plan: &SamplePlan, all_patch_features: &Matrix) -> Result<Vec<Vec<f64>>> {
    if all_patch_features.rows() != plan.grid.cells() {
        return Err(AvseError::domain(format!(
            "expected {} patch rows, got {}",
            plan.grid.cells(),
            all_patch_features.rows()
        )));
    }
    plan.groups
        .iter()
        .map(|g| all_patch_features.mean_of_rows(g.iter().copied()))
        .collect()
}

pub fn encode_text(params: &ToyEncoderParams, token_features: &Matrix) -> Result<TextEmbedding> {
    if token_features.rows() == 0 {
        return Err(AvseError::domain("cannot encode an empty token list"));
    }
    check_width(params, token_features)?;
    let pooled = token_features.mean_of_rows(0..token_features.rows())?;
    Ok(TextEmbedding(params.project_text(&pooled)?))
}

fn check_width(params: &ToyEncoderParams, m: &Matrix) -> Result<()> {
    if m.cols() != params.d_in() {
        return Err(AvseError::domain(format!(
            "feature width {} does not match encoder input width {}",
            m.cols(),
            params.d_in()
        )));
    }
    Ok(())
}
