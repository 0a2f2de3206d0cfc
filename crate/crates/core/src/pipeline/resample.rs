use ndarray::{s, Array2, Array3};

use super::RasterPair;
use crate::error::{Error, Result};

/// Reduces linear resolution by `factor`.
///
/// Image pixels are block means; labels take the top-left pixel of each block.
/// Dimensions that are not a multiple of `factor` are trimmed at the bottom/right
/// and the trim is recorded on the returned pair.
pub fn downscale_pair(pair: &RasterPair, factor: u32) -> Result<RasterPair> {
    if factor < 1 {
        return Err(Error::InvalidArgument("downscale factor must be at least 1".into()));
    }
    let f = factor as usize;
    if f == 1 {
        return Ok(pair.clone());
    }
    let (h, w) = (pair.height(), pair.width());
    let (oh, ow) = (h / f, w / f);
    if oh == 0 || ow == 0 {
        return Err(Error::TooLarge {
            op: "downscale_pair",
            size: f,
            height: h,
            width: w,
        });
    }
    let area = (f * f) as u32;
    let image = Array3::from_shape_fn((oh, ow, 3), |(r, c, k)| {
        let block = pair.image.slice(s![r * f..(r + 1) * f, c * f..(c + 1) * f, k]);
        let sum: u32 = block.iter().map(|&v| v as u32).sum();
        ((sum + area / 2) / area) as u8
    });
    let labels = Array2::from_shape_fn((oh, ow), |(r, c)| pair.labels[[r * f, c * f]]);
    Ok(RasterPair {
        id: pair.id.clone(),
        image,
        labels,
        meters_per_pixel_image: pair.meters_per_pixel_image * factor as f64,
        meters_per_pixel_label: pair.meters_per_pixel_label * factor as f64,
        split: pair.split,
        trimmed: (pair.trimmed.0 + h - oh * f, pair.trimmed.1 + w - ow * f),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Split;
    use ndarray::array;

    fn pair(image: Array3<u8>, labels: Array2<u8>) -> RasterPair {
        RasterPair::new("p", image, labels, Split::Train).unwrap().with_resolution(0.5, 2.0)
    }

    #[test]
    fn factor_one_is_identity() {
        let p = pair(Array3::from_elem((3, 5, 3), 9), Array2::from_elem((3, 5), 2));
        assert_eq!(downscale_pair(&p, 1).unwrap(), p);
        assert!(downscale_pair(&p, 0).is_err());
    }

    #[test]
    fn resolution_scales() {
        let p = pair(Array3::zeros((400, 400, 3)), Array2::zeros((400, 400)));
        let d = downscale_pair(&p, 4).unwrap();
        assert_eq!(d.labels.dim(), (100, 100));
        assert_eq!(d.meters_per_pixel_image, 2.0);
        assert_eq!(d.meters_per_pixel_label, 8.0);
    }

    #[test]
    fn labels_nearest_top_left_and_image_mean() {
        let labels = array![[1u8, 1], [1, 2]];
        let image = Array3::from_shape_vec((2, 2, 3), vec![0, 10, 255, 4, 10, 255, 8, 10, 0, 12, 11, 0]).unwrap();
        let d = downscale_pair(&pair(image, labels), 2).unwrap();
        assert_eq!(d.labels, array![[1u8]]);
        assert_eq!(d.image.into_raw_vec_and_offset().0, vec![6, 10, 128]);
    }

    #[test]
    fn trims_remainder() {
        let p = pair(Array3::zeros((10, 9, 3)), Array2::zeros((10, 9)));
        let d = downscale_pair(&p, 4).unwrap();
        assert_eq!(d.labels.dim(), (2, 2));
        assert_eq!(d.trimmed, (2, 1));
    }
}
