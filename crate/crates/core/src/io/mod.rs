//! On-disk formats: the checkpoint, the dataset directory, label maps and
//! raw feature rasters.

pub(crate) mod bytes;
mod checkpoint;
mod dataset;
mod raster;

pub use checkpoint::{
    decode_checkpoint, decode_layout, encode_checkpoint, encode_layout, load_checkpoint, load_layout,
    save_checkpoint, save_layout, Checkpoint, CHECKPOINT_VERSION,
};
pub use dataset::{
    encode_png, load_dataset, read_cameras, read_png, save_dataset, write_cameras, write_png, AugmentedRecord,
    CameraRecord, Manifest, MANIFEST_VERSION,
};
pub use dataset::encode_rgb8_png;
pub use raster::{
    decode_features, decode_labels, encode_features, encode_labels, read_labels, write_labels, FeatureRaster,
};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
