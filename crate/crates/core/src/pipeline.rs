//! Glue between a trained encoder, a dataset and the evaluator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aeom::{MetaBlockConfig, ScoreMethod};
use crate::encoder::{encode_image, encode_text, ToyEncoderParams};
use crate::error::Result;
use crate::eval::{evaluate_protocol, Protocol, RetrievalReport};
use crate::sampler::{sample_plan_with_rng, SamplingConfig};
use crate::store::{EmbeddingIndex, IndexKind};
use crate::synth::Dataset;
use crate::trainer::TrainState;

/// Sample plan RNG for image `i`: seeded by `seed`, stream `i`, so every image
/// gets its own plan regardless of evaluation order.
pub fn image_plan_rng(seed: u64, image: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(image as u64);
    rng
}

/// Flat multi-view embeddings of every image.
pub fn embed_images(
    params: &ToyEncoderParams,
    dataset: &Dataset,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    dataset
        .images
        .iter()
        .enumerate()
        .map(|(i, patches)| {
            let plan = sample_plan_with_rng(dataset.grid(), sampling, &mut image_plan_rng(seed, i))?;
            Ok(encode_image(params, &plan, patches)?.flat().to_vec())
        })
        .collect()
}

pub fn embed_texts(params: &ToyEncoderParams, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    dataset
        .captions
        .iter()
        .map(|c| Ok(encode_text(params, c)?.0))
        .collect()
}

/// Image and text indexes for a dataset.
pub fn build_indexes(
    params: &ToyEncoderParams,
    dataset: &Dataset,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<(EmbeddingIndex, EmbeddingIndex)> {
    let d1 = params.d1() as u32;
    let images = embed_images(params, dataset, sampling, seed)?;
    let texts = embed_texts(params, dataset)?;
    Ok((
        EmbeddingIndex::from_rows(IndexKind::Image, sampling.group_count as u32, d1, &images)?,
        EmbeddingIndex::from_rows(IndexKind::Text, 1, d1, &texts)?,
    ))
}

/// Embeds `dataset` with a trained state and evaluates it with the state's
/// block configuration.
pub fn evaluate_state(
    state: &TrainState,
    dataset: &Dataset,
    seed: u64,
    method: ScoreMethod,
    protocol: Protocol,
) -> Result<RetrievalReport> {
    let images = embed_images(&state.params, dataset, &state.config.sampling_cfg, seed)?;
    let texts = embed_texts(&state.params, dataset)?;
    let cfg: MetaBlockConfig = state.config.block_cfg;
    evaluate_protocol(&images, &texts, &dataset.gt, protocol, &cfg, method)
}
