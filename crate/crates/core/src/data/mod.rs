//! Video chunks, the `MARC` file format, dataset manifests and the synthetic
//! dataset generator.

pub mod chunk;
pub mod manifest;
pub mod synth;

pub use chunk::{read_chunk, write_chunk, VideoChunk};
pub use manifest::{load_manifest, DatasetManifest, ManifestEntry, Split};
pub use synth::{synth_clip, synth_dataset, SynthConfig};
