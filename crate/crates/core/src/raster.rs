//! In-memory raster types and lossless PNG I/O.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};

/// Single-channel class-index raster, indexed `[row, col]`.
pub type LabelMap = Array2<u8>;

/// Three-channel 8-bit image raster, indexed `[row, col, channel]`.
pub type RgbImage = Array3<u8>;

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let raw = img.into_raw();
    Ok(Array3::from_shape_vec((h as usize, w as usize, 3), raw).expect("rgb buffer length"))
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let raw = img.into_raw();
    Ok(Array2::from_shape_vec((h as usize, w as usize), raw).expect("label buffer length"))
}

pub fn write_rgb(path: &Path, image: ArrayView3<u8>) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let raw: Vec<u8> = image.iter().copied().collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("rgb buffer length");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_labels(path: &Path, labels: ArrayView2<u8>) -> Result<()> {
    let (h, w) = labels.dim();
    let raw: Vec<u8> = labels.iter().copied().collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, raw).expect("label buffer length");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array3::from_shape_fn((5, 7, 3), |(r, c, k)| (r * 31 + c * 7 + k * 101) as u8);
        let labels = Array2::from_shape_fn((5, 7), |(r, c)| ((r + c) % 5) as u8);
        let ip = dir.path().join("i.png");
        let lp = dir.path().join("l.png");
        write_rgb(&ip, img.view()).unwrap();
        write_labels(&lp, labels.view()).unwrap();
        assert_eq!(read_rgb(&ip).unwrap(), img);
        assert_eq!(read_labels(&lp).unwrap(), labels);
    }
}
