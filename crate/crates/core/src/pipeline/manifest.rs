use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{downscale_pair, RasterPair, Split};
use crate::error::{Error, Result};
use crate::raster::{read_labels, read_rgb};
use crate::taxonomy::ClassTaxonomy;

/// Path references to one image/label pair inside a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRef {
    pub id: String,
    pub image: PathBuf,
    pub labels: PathBuf,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    zoom_level: i32,
    annotation_rules_id: String,
    meters_per_pixel_image: f64,
    meters_per_pixel_label: f64,
    taxonomy: Vec<String>,
    unknown_index: u8,
    pairs: Vec<PairRef>,
}

/// Dataset-level metadata plus references to its raster pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDescriptor {
    pub name: String,
    pub zoom_level: i32,
    pub taxonomy: ClassTaxonomy,
    pub annotation_rules_id: String,
    pub meters_per_pixel_image: f64,
    pub meters_per_pixel_label: f64,
    pub pairs: Vec<PairRef>,
    /// Linear downscale factor applied to every pair at load time.
    pub downscale: u32,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("dataset `{}`: {m}", self.name)));
        if self.zoom_level < 0 {
            return bad(format!("zoom_level {} is negative", self.zoom_level));
        }
        if !(self.meters_per_pixel_image > 0.0 && self.meters_per_pixel_label > 0.0) {
            return bad("meters_per_pixel values must be positive".into());
        }
        if self.annotation_rules_id.is_empty() {
            return bad("annotation_rules_id is empty".into());
        }
        if self.downscale == 0 {
            return bad("downscale factor must be at least 1".into());
        }
        Ok(())
    }

    /// Declares a linear resolution reduction; each factor of two drops one zoom level.
    pub fn downscaled(&self, factor: u32) -> Result<Self> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "dataset downscale factor must be a power of two, got {factor}"
            )));
        }
        let mut out = self.clone();
        out.downscale = self.downscale * factor;
        out.zoom_level = self.zoom_level - factor.trailing_zeros() as i32;
        out.meters_per_pixel_image *= factor as f64;
        out.meters_per_pixel_label *= factor as f64;
        Ok(out)
    }

    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = &PairRef> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    /// Reads one pair from disk and applies the declared downscale.
    pub fn load_pair(&self, pair: &PairRef) -> Result<RasterPair> {
        let image = read_rgb(&pair.image)?;
        let labels = read_labels(&pair.labels)?;
        let raw = RasterPair {
            id: pair.id.clone(),
            image,
            labels,
            meters_per_pixel_image: self.meters_per_pixel_image / self.downscale as f64,
            meters_per_pixel_label: self.meters_per_pixel_label / self.downscale as f64,
            split: pair.split,
            trimmed: (0, 0),
        };
        raw.validate(&self.taxonomy)?;
        if self.downscale == 1 {
            Ok(raw)
        } else {
            downscale_pair(&raw, self.downscale)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ManifestFile {
            name: self.name.clone(),
            zoom_level: self.zoom_level,
            annotation_rules_id: self.annotation_rules_id.clone(),
            meters_per_pixel_image: self.meters_per_pixel_image,
            meters_per_pixel_label: self.meters_per_pixel_label,
            taxonomy: self.taxonomy.names().to_vec(),
            unknown_index: self.taxonomy.unknown_index(),
            pairs: self.pairs.clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parses a manifest and validates every pair it references.
///
/// Relative raster paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetDescriptor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let taxonomy = ClassTaxonomy::new(file.taxonomy, file.unknown_index).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let pairs = file
        .pairs
        .into_iter()
        .map(|p| PairRef {
            image: base.join(&p.image),
            labels: base.join(&p.labels),
            ..p
        })
        .collect();
    let descriptor = DatasetDescriptor {
        name: file.name,
        zoom_level: file.zoom_level,
        taxonomy,
        annotation_rules_id: file.annotation_rules_id,
        meters_per_pixel_image: file.meters_per_pixel_image,
        meters_per_pixel_label: file.meters_per_pixel_label,
        pairs,
        downscale: 1,
    };
    descriptor.validate().map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut ids = std::collections::HashSet::new();
    for pair in &descriptor.pairs {
        if !ids.insert(pair.id.as_str()) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                message: format!("duplicate pair id `{}`", pair.id),
            });
        }
        descriptor.load_pair(pair)?;
    }
    Ok(descriptor)
}

/// Loads every pair of `split`, in manifest order.
pub fn load_pairs(descriptor: &DatasetDescriptor, split: Split) -> Result<Vec<RasterPair>> {
    descriptor.pairs_in(split).map(|p| descriptor.load_pair(p)).collect()
}
