//! Desk-scale artifact generator: block-DCT quantization of 8-bit images
//! with an entropy rate proxy, plus paired patch datasets.

mod dataset;
mod dct;
mod image;
mod quant;

pub use dataset::{
    extract_patches, gen_dataset, read_source_dir, synth_image, DatasetConfig, DatasetManifest,
    ManifestEntry, PatchPair, Sample, Split, MANIFEST_FILE,
};
pub use dct::{dct8, idct8, Block};
pub use image::Image8;
pub use quant::{degrade, entropy_bits, quantize, quantized_indices, rate_proxy, QuantSpec};
