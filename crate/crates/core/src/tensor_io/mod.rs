//! Dense tensor types, FMAP files, manifests and the numeric primitives
//! shared by the rest of the pipeline.

mod fmap;
mod manifest;
mod ops;
mod pgm;
mod types;

pub use fmap::{
    decode_feature_maps, encode_block, load_feature_maps, read_block, store_feature_maps, write_block, Block,
};
pub use manifest::{write_records, ImageRecord, Manifest, SplitTag, Viewpoint};
pub use ops::{concat, gap, l2_distance, masked_gap, upsample_bilinear, upsample_nearest_mask};
pub use pgm::{encode_pgm, read_mask_pgm, read_pgm, to_gray, write_mask_pgm, write_probability_pgm};
pub use types::{BinaryMask, FeatureMaps, FeatureVector, LayerTag, ProbabilityMatrix};
