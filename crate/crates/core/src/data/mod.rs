//! Dataset ingestion and persistence: VOC-style annotations, binary PPM
//! images, the on-disk layout and the train/test split.

mod dataset;
mod ppm;
mod voc;

pub use dataset::{split_dataset, ClassRegistry, DatasetIndex, Sample, ANNOTATIONS_DIR, CLASSES_FILE, IMAGES_DIR};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use voc::{parse_voc, write_voc, Annotation, Object};

/// PPM files to run detection on: `path` itself when it is a file, else the
/// `.ppm` files of `path/JPEGImages` (or of `path` when that is absent),
/// sorted by name.
pub fn image_files(path: impl AsRef<std::path::Path>) -> crate::Result<Vec<std::path::PathBuf>> {
    let path = path.as_ref();
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let sub = path.join(IMAGES_DIR);
    let dir = if sub.is_dir() { sub } else { path.to_path_buf() };
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| crate::Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    files.sort();
    Ok(files)
}
