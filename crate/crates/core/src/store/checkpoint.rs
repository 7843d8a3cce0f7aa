//! Training checkpoints (`AVCK`).
//!
//! Payload, inside the generic container (`magic | version | len | checksum`):
//! config JSON blob, `d_in`, `d1`, parameters, both Adam moment sets, step,
//! RNG position (seed, stream, word position) and the loss history. Every
//! float is stored as a little-endian `f64`, so a round trip is bit-exact.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::codec::{container, format_err, open_container, read_file, write_atomic, ByteReader, ByteWriter};
use crate::encoder::ToyEncoderParams;
use crate::error::{FormatError, Result};
use crate::linalg::Matrix;
use crate::objectives::LossBreakdown;
use crate::trainer::{StepRecord, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_params(w: &mut ByteWriter, p: &ToyEncoderParams) {
    for t in p.tensors() {
        w.f64s(t);
    }
}

fn get_params(r: &mut ByteReader<'_>, d_in: usize, d1: usize) -> std::result::Result<ToyEncoderParams, FormatError> {
    let patch_proj = Matrix::from_vec(d_in, d1, r.f64s(d_in * d1)?).expect("shape");
    let patch_bias = r.f64s(d1)?;
    let text_proj = Matrix::from_vec(d_in, d1, r.f64s(d_in * d1)?).expect("shape");
    let text_bias = r.f64s(d1)?;
    Ok(ToyEncoderParams {
        patch_proj,
        text_proj,
        patch_bias,
        text_bias,
    })
}

pub fn checkpoint_to_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.blob(serde_json::to_string(&state.config)?.as_bytes());
    w.u32(state.params.d_in() as u32);
    w.u32(state.params.d1() as u32);
    put_params(&mut w, &state.params);
    put_params(&mut w, &state.moment1);
    put_params(&mut w, &state.moment2);
    w.u64(state.step);
    w.bytes(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.u128(state.rng.get_word_pos());
    w.u64(state.history.len() as u64);
    for rec in &state.history {
        w.f64(rec.loss.l_m);
        w.f64(rec.loss.l_reg);
        w.f64(rec.loss.total);
        w.f64(rec.lr);
    }
    Ok(container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &w.buf))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> std::result::Result<TrainState, FormatError> {
    let mut r = open_container(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let at = r.offset();
    let config: TrainConfig = serde_json::from_slice(r.blob()?).map_err(|e| FormatError::InvalidField {
        offset: at,
        reason: format!("config json: {e}"),
    })?;
    let at = r.offset();
    let d_in = r.u32()? as usize;
    let d1 = r.u32()? as usize;
    if d1 != config.block_cfg.d1 || d_in == 0 {
        return Err(FormatError::InvalidField {
            offset: at,
            reason: format!("parameter shape {d_in}x{d1} disagrees with config"),
        });
    }
    let params = get_params(&mut r, d_in, d1)?;
    let moment1 = get_params(&mut r, d_in, d1)?;
    let moment2 = get_params(&mut r, d_in, d1)?;
    let step = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let n = r.len(32)?;
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        let l_m = r.f64()?;
        let l_reg = r.f64()?;
        let total = r.f64()?;
        let lr = r.f64()?;
        history.push(StepRecord {
            loss: LossBreakdown { l_m, l_reg, total },
            lr,
        });
    }
    r.finish()?;
    Ok(TrainState {
        config,
        params,
        moment1,
        moment2,
        step,
        rng,
        history,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_to_bytes(state)?)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    checkpoint_from_bytes(&read_file(path)?).map_err(|e| format_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::PatchGrid;
    use rand::Rng;

    fn state() -> TrainState {
        let mut s = TrainState::new(TrainConfig::desk(PatchGrid::new(4, 4).unwrap(), 3), 6);
        s.step = 17;
        let _: u64 = s.rng.gen();
        s.history.push(StepRecord {
            loss: LossBreakdown::new(0.3, 0.1),
            lr: 5e-4,
        });
        s.moment2.text_bias[3] = 1e-300;
        s
    }

    #[test]
    fn roundtrip_is_exact() {
        let s = state();
        let bytes = checkpoint_to_bytes(&s).unwrap();
        let mut back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        let mut orig = s.clone();
        assert_eq!(back.rng.gen::<u64>(), orig.rng.gen::<u64>());
    }

    #[test]
    fn fresh_state_roundtrip() {
        let s = TrainState::new(TrainConfig::desk(PatchGrid::new(8, 8).unwrap(), 0), 32);
        assert_eq!(checkpoint_from_bytes(&checkpoint_to_bytes(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = checkpoint_to_bytes(&state()).unwrap();
        let mut flipped = bytes.clone();
        flipped[200] ^= 0x01;
        assert!(matches!(checkpoint_from_bytes(&flipped), Err(FormatError::ChecksumMismatch { .. })));
        let mut magic = bytes.clone();
        magic[..4].copy_from_slice(b"AVSE");
        assert!(matches!(checkpoint_from_bytes(&magic), Err(FormatError::BadMagic { .. })));
        match checkpoint_from_bytes(&bytes[..100]) {
            Err(FormatError::Truncated { offset, .. }) => assert_eq!(offset, 100),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let s = state();
        save_checkpoint(&s, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), s);
        std::fs::write(&path, b"garbage").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
