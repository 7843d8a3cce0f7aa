//! Synthetic two-half image/caption data.
//!
//! Each image owns a latent `z = [z_left, z_right]`. Patches in the left half
//! of the grid are noisy projections of `z_left` (through `P_left`), patches in
//! the right half of `z_right` (through `P_right`). Every caption picks one half
//! uniformly at random and emits tokens `Q z_half + noise`. An image therefore
//! carries strictly more content than any one of its captions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AvseError, Result};
use crate::eval::GroundTruth;
use crate::linalg::{axpy, Matrix};
use crate::sampler::PatchGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub num_images: usize,
    pub captions_per_image: usize,
    /// Width `m` of each latent half.
    pub latent_dim: usize,
    pub grid: PatchGrid,
    /// Width of patch and token features.
    pub d_in: usize,
    pub tokens_per_caption: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            num_images: 500,
            captions_per_image: 5,
            latent_dim: 16,
            grid: PatchGrid { rows: 8, cols: 8 },
            d_in: 32,
            tokens_per_caption: 8,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_images == 0 || self.latent_dim == 0 || self.d_in == 0 || self.tokens_per_caption == 0 {
            return Err(AvseError::domain(
                "num_images, latent_dim, d_in and tokens_per_caption must be positive",
            ));
        }
        if self.captions_per_image == 0 {
            return Err(AvseError::domain("captions_per_image must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(AvseError::domain(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        PatchGrid::new(self.grid.rows, self.grid.cols)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Half {
    Left,
    Right,
}

impl PatchGrid {
    /// Which latent half a patch column reads from.
    pub fn half_of(&self, flat: usize) -> Half {
        if 2 * (flat % self.cols) < self.cols {
            Half::Left
        } else {
            Half::Right
        }
    }
}

/// Fixed projections shared by every sample of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldProjections {
    /// `latent_dim x d_in`
    pub patch_left: Matrix,
    pub patch_right: Matrix,
    pub token: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticDatasetSpec,
    pub world: WorldProjections,
    /// `2m` latent per image.
    pub latents: Vec<Vec<f64>>,
    /// `cells x d_in` per image.
    pub images: Vec<Matrix>,
    /// `tokens x d_in` per caption.
    pub captions: Vec<Matrix>,
    pub caption_half: Vec<Half>,
    pub gt: GroundTruth,
}

impl Dataset {
    pub fn grid(&self) -> PatchGrid {
        self.spec.grid
    }

    pub fn d_in(&self) -> usize {
        self.spec.d_in
    }

    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn latent_half<'a>(&'a self, image: usize, half: Half) -> &'a [f64] {
        let m = self.spec.latent_dim;
        match half {
            Half::Left => &self.latents[image][..m],
            Half::Right => &self.latents[image][m..],
        }
    }

    /// Mean token feature of every caption.
    pub fn pooled_captions(&self) -> Vec<Vec<f64>> {
        self.captions
            .iter()
            .map(|c| c.mean_of_rows(0..c.rows()).expect("captions are nonempty"))
            .collect()
    }

    /// Splits into the first `n` images (with their captions) and the rest.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.num_images() {
            return Err(AvseError::domain(format!(
                "split point {n} must leave both parts nonempty ({} images)",
                self.num_images()
            )));
        }
        Ok((self.subset(0..n)?, self.subset(n..self.num_images())?))
    }

    fn subset(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        let caps: Vec<usize> = (0..self.captions.len())
            .filter(|&c| range.contains(&self.gt.caption_to_image[c]))
            .collect();
        let mut spec = self.spec.clone();
        spec.num_images = range.len();
        Ok(Dataset {
            spec,
            world: self.world.clone(),
            latents: self.latents[range.clone()].to_vec(),
            images: self.images[range.clone()].to_vec(),
            captions: caps.iter().map(|&c| self.captions[c].clone()).collect(),
            caption_half: caps.iter().map(|&c| self.caption_half[c]).collect(),
            gt: GroundTruth::new(
                range.len(),
                caps.iter().map(|&c| self.gt.caption_to_image[c] - range.start).collect(),
            )?,
        })
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("valid std");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect()).expect("shape")
}

fn noisy_projection(rng: &mut ChaCha8Rng, latent: &[f64], proj: &Matrix, sigma: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (k, &z) in latent.iter().enumerate() {
        axpy(z, proj.row(k), out);
    }
    if sigma > 0.0 {
        for x in out.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *x += sigma * e;
        }
    }
}

/// Generates a dataset; a pure function of `spec`.
pub fn synth_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.latent_dim;
    let proj_std = 1.0 / (m as f64).sqrt();
    let world = WorldProjections {
        patch_left: gaussian_matrix(&mut rng, m, spec.d_in, proj_std),
        patch_right: gaussian_matrix(&mut rng, m, spec.d_in, proj_std),
        token: gaussian_matrix(&mut rng, m, spec.d_in, proj_std),
    };
    let cells = spec.grid.cells();
    let mut latents = Vec::with_capacity(spec.num_images);
    let mut images = Vec::with_capacity(spec.num_images);
    let mut captions = Vec::with_capacity(spec.num_images * spec.captions_per_image);
    let mut caption_half = Vec::with_capacity(captions.capacity());
    let mut caption_to_image = Vec::with_capacity(captions.capacity());
    for img in 0..spec.num_images {
        let z: Vec<f64> = (0..2 * m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut patches = Matrix::zeros(cells, spec.d_in);
        for cell in 0..cells {
            let (latent, proj) = match spec.grid.half_of(cell) {
                Half::Left => (&z[..m], &world.patch_left),
                Half::Right => (&z[m..], &world.patch_right),
            };
            noisy_projection(&mut rng, latent, proj, spec.noise_sigma, patches.row_mut(cell));
        }
        images.push(patches);
        for _ in 0..spec.captions_per_image {
            let half = if rng.gen_bool(0.5) { Half::Left } else { Half::Right };
            let latent = match half {
                Half::Left => &z[..m],
                Half::Right => &z[m..],
            };
            let mut tokens = Matrix::zeros(spec.tokens_per_caption, spec.d_in);
            for t in 0..spec.tokens_per_caption {
                noisy_projection(&mut rng, latent, &world.token, spec.noise_sigma, tokens.row_mut(t));
            }
            captions.push(tokens);
            caption_half.push(half);
            caption_to_image.push(img);
        }
        latents.push(z);
    }
    Ok(Dataset {
        spec: spec.clone(),
        world,
        latents,
        images,
        captions,
        caption_half,
        gt: GroundTruth::new(spec.num_images, caption_to_image)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::guarded_cosine;

    #[test]
    fn noiseless_captions_are_exact_projections() {
        let spec = SyntheticDatasetSpec {
            num_images: 20,
            captions_per_image: 2,
            noise_sigma: 0.0,
            ..Default::default()
        };
        let data = synth_dataset(&spec).unwrap();
        let pooled = data.pooled_captions();
        let mut covered_both = 0;
        for img in 0..20 {
            let caps = [2 * img, 2 * img + 1];
            if data.caption_half[caps[0]] != data.caption_half[caps[1]] {
                covered_both += 1;
            }
            for c in caps {
                let z = data.latent_half(img, data.caption_half[c]);
                let expected = Matrix::from_rows(&[z]).unwrap().matmul(&data.world.token).unwrap();
                for (a, b) in pooled[c].iter().zip(expected.row(0)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        assert!(covered_both > 0);
    }

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticDatasetSpec {
            num_images: 7,
            ..Default::default()
        };
        let a = synth_dataset(&spec).unwrap();
        assert_eq!(a, synth_dataset(&spec).unwrap());
        assert_eq!(a.images.len(), 7);
        assert_eq!(a.captions.len(), 35);
        assert_eq!(a.images[0].rows(), 64);
        assert_eq!(a.gt.caption_to_image[6], 1);
        let other = synth_dataset(&SyntheticDatasetSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.latents, other.latents);
    }

    #[test]
    fn halves_split_columns() {
        let g = PatchGrid::new(2, 4).unwrap();
        let halves: Vec<Half> = (0..8).map(|i| g.half_of(i)).collect();
        assert_eq!(&halves[..4], &[Half::Left, Half::Left, Half::Right, Half::Right]);
    }

    #[test]
    fn different_half_captions_are_less_similar() {
        let spec = SyntheticDatasetSpec {
            num_images: 1000,
            captions_per_image: 5,
            noise_sigma: 0.1,
            seed: 3,
            ..Default::default()
        };
        let data = synth_dataset(&spec).unwrap();
        let pooled = data.pooled_captions();
        let (mut same, mut same_n, mut diff, mut diff_n) = (0.0, 0, 0.0, 0);
        for caps in data.gt.captions_of() {
            for (x, &a) in caps.iter().enumerate() {
                for &b in &caps[x + 1..] {
                    let c = guarded_cosine(&pooled[a], &pooled[b]);
                    if data.caption_half[a] == data.caption_half[b] {
                        same += c;
                        same_n += 1;
                    } else {
                        diff += c;
                        diff_n += 1;
                    }
                }
            }
        }
        let (same, diff) = (same / same_n as f64, diff / diff_n as f64);
        assert!(diff < same, "different-half {diff} vs same-half {same}");
    }

    #[test]
    fn split_keeps_captions_with_images() {
        let data = synth_dataset(&SyntheticDatasetSpec {
            num_images: 10,
            ..Default::default()
        })
        .unwrap();
        let (a, b) = data.split(6).unwrap();
        assert_eq!(a.num_images(), 6);
        assert_eq!(b.num_images(), 4);
        assert_eq!(b.captions.len(), 20);
        assert_eq!(b.captions[0], data.captions[30]);
        assert_eq!(b.gt.caption_to_image[0], 0);
        assert!(data.split(10).is_err());
    }

    #[test]
    fn invalid_spec() {
        let bad = SyntheticDatasetSpec {
            captions_per_image: 0,
            ..Default::default()
        };
        assert!(synth_dataset(&bad).is_err());
        let bad = SyntheticDatasetSpec {
            noise_sigma: -1.0,
            ..Default::default()
        };
        assert!(synth_dataset(&bad).is_err());
    }
}
