//! Synthetic dataset files (`AVSD`): a generic container holding the
//! generator spec, the world projections and every generated array as `f64`.

use std::path::Path;

use super::codec::{container, format_err, open_container, read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{FormatError, Result};
use crate::eval::GroundTruth;
use crate::synth::{Dataset, Half, SyntheticDatasetSpec, WorldProjections};

pub const DATASET_MAGIC: [u8; 4] = *b"AVSD";
pub const DATASET_VERSION: u32 = 1;

pub fn dataset_to_bytes(data: &Dataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.blob(serde_json::to_string(&data.spec)?.as_bytes());
    w.matrix(&data.world.patch_left);
    w.matrix(&data.world.patch_right);
    w.matrix(&data.world.token);
    w.u64(data.latents.len() as u64);
    for z in &data.latents {
        w.u64(z.len() as u64);
        w.f64s(z);
    }
    w.u64(data.images.len() as u64);
    for m in &data.images {
        w.matrix(m);
    }
    w.u64(data.captions.len() as u64);
    for (m, (&half, &img)) in data
        .captions
        .iter()
        .zip(data.caption_half.iter().zip(&data.gt.caption_to_image))
    {
        w.matrix(m);
        w.u8(match half {
            Half::Left => 0,
            Half::Right => 1,
        });
        w.u64(img as u64);
    }
    Ok(container(DATASET_MAGIC, DATASET_VERSION, &w.buf))
}

fn decode(r: &mut ByteReader<'_>) -> std::result::Result<Dataset, FormatError> {
    let at = r.offset();
    let spec: SyntheticDatasetSpec = serde_json::from_slice(r.blob()?).map_err(|e| FormatError::InvalidField {
        offset: at,
        reason: format!("spec json: {e}"),
    })?;
    let world = WorldProjections {
        patch_left: r.matrix()?,
        patch_right: r.matrix()?,
        token: r.matrix()?,
    };
    let n = r.len(8)?;
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.len(8)?;
        latents.push(r.f64s(len)?);
    }
    let n = r.len(8)?;
    let images = (0..n).map(|_| r.matrix()).collect::<std::result::Result<Vec<_>, _>>()?;
    let n = r.len(8)?;
    let mut captions = Vec::with_capacity(n);
    let mut caption_half = Vec::with_capacity(n);
    let mut caption_to_image = Vec::with_capacity(n);
    for _ in 0..n {
        captions.push(r.matrix()?);
        caption_half.push(match r.u8()? {
            0 => Half::Left,
            1 => Half::Right,
            b => return Err(r.invalid(format!("half tag {b}"))),
        });
        caption_to_image.push(r.u64()? as usize);
    }
    r.finish()?;
    if images.len() != spec.num_images || latents.len() != images.len() {
        return Err(r.invalid("image count disagrees with spec"));
    }
    let gt = GroundTruth::new(images.len(), caption_to_image).map_err(|e| r.invalid(e.to_string()))?;
    Ok(Dataset {
        spec,
        world,
        latents,
        images,
        captions,
        caption_half,
        gt,
    })
}

pub fn dataset_from_bytes(bytes: &[u8]) -> std::result::Result<Dataset, FormatError> {
    let mut r = open_container(bytes, DATASET_MAGIC, DATASET_VERSION)?;
    decode(&mut r)
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_to_bytes(data)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&read_file(path)?).map_err(|e| format_err(path, e))
}
