//! On-disk layout for trained model grids.
//!
//! A grid directory holds a `manifest.json` describing every cell plus one
//! binary checkpoint per model:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/part_a/band0_fold0.bin ...
//! <dir>/part_b/face_fold0.bin ...
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::mlp::{load_checkpoint, save_checkpoint};
use crate::model::Modality;
use crate::router::{PartAGrid, PartBGrid};

pub const MODEL_GRID_FORMAT_VERSION: u32 = 1;

/// One frame-quality-band model in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartAEntry {
    pub band_index: usize,
    pub band: f64,
    pub fold: usize,
    pub file: String,
}

/// One clip-modality model in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartBEntry {
    pub modality: Modality,
    pub fold: usize,
    pub file: String,
}

/// Index of a saved model grid directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGridManifest {
    pub format_version: u32,
    pub n_classes: usize,
    pub folds: usize,
    pub quality_bands: Vec<f64>,
    pub part_a: Vec<PartAEntry>,
    pub part_b: Vec<PartBEntry>,
}

fn part_a_file(band_index: usize, fold: usize) -> String {
    format!("part_a/band{band_index}_fold{fold}.bin")
}

fn part_b_file(modality: Modality, fold: usize) -> String {
    format!("part_b/{modality}_fold{fold}.bin")
}

/// Writes both grids under `dir`, creating the directory tree as needed.
pub fn save_grids(dir: &Path, part_a: &PartAGrid, part_b: &PartBGrid) -> Result<(), IoError> {
    if part_a.n_classes != part_b.n_classes || part_a.folds != part_b.folds {
        return Err(IoError::ManifestMismatch(format!(
            "grid shapes disagree: part a has {} classes / {} folds, part b has {} / {}",
            part_a.n_classes, part_a.folds, part_b.n_classes, part_b.folds
        )));
    }
    fs::create_dir_all(dir.join("part_a"))?;
    fs::create_dir_all(dir.join("part_b"))?;

    let mut manifest = ModelGridManifest {
        format_version: MODEL_GRID_FORMAT_VERSION,
        n_classes: part_a.n_classes,
        folds: part_a.folds,
        quality_bands: part_a.bands.clone(),
        part_a: Vec::new(),
        part_b: Vec::new(),
    };

    for ((band_index, fold), params) in &part_a.models {
        let file = part_a_file(*band_index, *fold);
        save_checkpoint(params, &dir.join(&file))?;
        manifest.part_a.push(PartAEntry {
            band_index: *band_index,
            band: part_a.bands[*band_index],
            fold: *fold,
            file,
        });
    }
    for ((modality, fold), params) in &part_b.models {
        let file = part_b_file(*modality, *fold);
        save_checkpoint(params, &dir.join(&file))?;
        manifest.part_b.push(PartBEntry { modality: *modality, fold: *fold, file });
    }

    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| IoError::MalformedManifest(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Reads the manifest for `dir` without touching any checkpoints.
pub fn read_grid_manifest(dir: &Path) -> Result<ModelGridManifest, IoError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IoError::MissingManifest { path: manifest_path.display().to_string() }
        } else {
            IoError::Io(e)
        }
    })?;
    let manifest: ModelGridManifest =
        serde_json::from_str(&text).map_err(|e| IoError::MalformedManifest(e.to_string()))?;
    if manifest.format_version != MODEL_GRID_FORMAT_VERSION {
        return Err(IoError::VersionMismatch {
            found: manifest.format_version,
            expected: MODEL_GRID_FORMAT_VERSION,
        });
    }
    Ok(manifest)
}

/// Loads both grids back from `dir`, verifying each checkpoint against the
/// manifest.
pub fn load_grids(dir: &Path) -> Result<(PartAGrid, PartBGrid), IoError> {
    let manifest = read_grid_manifest(dir)?;

    let mut part_a = PartAGrid {
        bands: manifest.quality_bands.clone(),
        folds: manifest.folds,
        n_classes: manifest.n_classes,
        models: std::collections::BTreeMap::new(),
    };
    for entry in &manifest.part_a {
        if entry.band_index >= manifest.quality_bands.len()
            || entry.fold >= manifest.folds
        {
            return Err(IoError::ManifestMismatch(format!(
                "band {} fold {} is outside the declared grid",
                entry.band_index, entry.fold
            )));
        }
        let params = load_checkpoint(&dir.join(&entry.file))?;
        if params.dims.classes != manifest.n_classes {
            return Err(IoError::ManifestMismatch(format!(
                "{} was trained for {} classes, manifest says {}",
                entry.file, params.dims.classes, manifest.n_classes
            )));
        }
        if part_a
            .models
            .insert((entry.band_index, entry.fold), params)
            .is_some()
        {
            return Err(IoError::ManifestMismatch(format!(
                "band {} fold {} listed twice",
                entry.band_index, entry.fold
            )));
        }
    }

    let mut part_b = PartBGrid {
        folds: manifest.folds,
        n_classes: manifest.n_classes,
        models: std::collections::BTreeMap::new(),
    };
    for entry in &manifest.part_b {
        if entry.fold >= manifest.folds {
            return Err(IoError::ManifestMismatch(format!(
                "{} fold {} is outside the declared grid",
                entry.modality, entry.fold
            )));
        }
        let params = load_checkpoint(&dir.join(&entry.file))?;
        if params.dims.classes != manifest.n_classes {
            return Err(IoError::ManifestMismatch(format!(
                "{} was trained for {} classes, manifest says {}",
                entry.file, params.dims.classes, manifest.n_classes
            )));
        }
        if part_b
            .models
            .insert((entry.modality, entry.fold), params)
            .is_some()
        {
            return Err(IoError::ManifestMismatch(format!(
                "{} fold {} listed twice",
                entry.modality, entry.fold
            )));
        }
    }

    Ok((part_a, part_b))
}
