use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::groundtruth::ScalarMap;
use crate::simulator::SyntheticSequence;

pub const DENSITY: &str = "density";
pub const LOCALIZATION: &str = "localization";
pub const DETECTIONS: &str = "detections.csv";
pub const TRACKLETS: &str = "tracklets.csv";

/// `(name, path)` of every sequence under `root`: `root` itself when it
/// holds a `meta.json`, otherwise its sub-directories that do, by name.
pub fn dataset_sequences(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if root.join("meta.json").is_file() {
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        return Ok(vec![(name, root.to_path_buf())]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join("meta.json").is_file() {
            let name = path
                .file_name()
                .expect("dir entry")
                .to_string_lossy()
                .into_owned();
            out.push((name, path));
        }
    }
    if out.is_empty() {
        return Err(Error::format(
            "dataset",
            format!("{}: no sequence directories", root.display()),
        ));
    }
    out.sort();
    Ok(out)
}

pub fn load_dataset(root: &Path) -> Result<Vec<(String, SyntheticSequence)>> {
    dataset_sequences(root)?
        .into_iter()
        .map(|(name, path)| Ok((name, SyntheticSequence::load(&path)?)))
        .collect()
}

pub fn map_path(seq_dir: &Path, kind: &str, frame: usize) -> PathBuf {
    seq_dir.join(kind).join(format!("{frame:06}.cfmp"))
}

/// Coarser pyramid levels live beside the finest maps as `<kind>_s<k>`.
pub fn level_kind(kind: &str, scale: usize) -> String {
    format!("{kind}_s{scale}")
}

pub fn write_map(seq_dir: &Path, kind: &str, frame: usize, map: &ScalarMap) -> Result<()> {
    let dir = seq_dir.join(kind);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    map.save(&map_path(seq_dir, kind, frame))
}

/// All maps of one kind, in frame order; `None` when the folder is absent.
pub fn read_maps(seq_dir: &Path, kind: &str, frames: usize) -> Result<Option<Vec<ScalarMap>>> {
    if !seq_dir.join(kind).is_dir() {
        return Ok(None);
    }
    (0..frames)
        .map(|f| ScalarMap::load(&map_path(seq_dir, kind, f)))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}
