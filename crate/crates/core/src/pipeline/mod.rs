//! Raster ingestion, tiling, sliding-window inference support, and resolution matching.

mod manifest;
mod resample;
mod tiling;
mod windows;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMap, RgbImage};
use crate::taxonomy::{remap_labels, ClassTaxonomy, RemapTable};

pub use manifest::{load_manifest, load_pairs, DatasetDescriptor, PairRef};
pub use resample::downscale_pair;
pub use tiling::{crop_origin, grid_tiles, random_crop, TileGrid};
pub use windows::{sliding_windows, stitch_predictions, window_origins, Window, WindowPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// An RGB raster with its aligned class-index raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPair {
    pub id: String,
    pub image: RgbImage,
    pub labels: LabelMap,
    pub meters_per_pixel_image: f64,
    pub meters_per_pixel_label: f64,
    pub split: Split,
    /// Rows and columns trimmed from the bottom/right edge by resolution matching.
    pub trimmed: (usize, usize),
}

impl RasterPair {
    pub fn new(id: impl Into<String>, image: RgbImage, labels: LabelMap, split: Split) -> Result<Self> {
        let pair = Self {
            id: id.into(),
            image,
            labels,
            meters_per_pixel_image: 1.0,
            meters_per_pixel_label: 1.0,
            split,
            trimmed: (0, 0),
        };
        pair.check_shape()?;
        Ok(pair)
    }

    pub fn with_resolution(mut self, image_mpp: f64, label_mpp: f64) -> Self {
        self.meters_per_pixel_image = image_mpp;
        self.meters_per_pixel_label = label_mpp;
        self
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    pub fn check_shape(&self) -> Result<()> {
        let (ih, iw, ic) = self.image.dim();
        let (lh, lw) = self.labels.dim();
        if ic != 3 {
            return Err(Error::Shape(format!("pair `{}`: image has {ic} channels, expected 3", self.id)));
        }
        if (ih, iw) != (lh, lw) {
            return Err(Error::ShapeMismatch {
                id: self.id.clone(),
                image_h: ih,
                image_w: iw,
                label_h: lh,
                label_w: lw,
            });
        }
        Ok(())
    }

    pub fn validate(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        self.check_shape()?;
        taxonomy
            .check_labels(self.labels.view())
            .map_err(|e| Error::InvalidPair {
                id: self.id.clone(),
                source: Box::new(e),
            })
    }

    pub fn remapped(mut self, table: &RemapTable) -> Result<Self> {
        self.labels = remap_labels(self.labels.view(), table).map_err(|e| Error::InvalidPair {
            id: self.id.clone(),
            source: Box::new(e),
        })?;
        Ok(self)
    }
}
