//! Binary persistence: embedding indexes, datasets and checkpoints.
//!
//! All integers and floats are little-endian. Embeddings are stored as `f32`;
//! datasets and checkpoints keep full `f64` precision. Writers go through a
//! temp file and an atomic rename.

mod checkpoint;
mod codec;
mod dataset;
mod index;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use codec::{fnv1a64, read_file, write_atomic};
pub use dataset::{dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset, DATASET_MAGIC};
pub use index::{
    read_index, write_index, EmbeddingFileHeader, EmbeddingIndex, IndexKind, INDEX_HEADER_LEN, INDEX_MAGIC,
    INDEX_VERSION,
};
