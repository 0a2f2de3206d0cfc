use ndarray::s;
use rand::Rng;

use super::RasterPair;
use crate::error::{Error, Result};

/// Non-overlapping square tiles covering the largest tile-multiple sub-rectangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub source_dims: (usize, usize),
}

impl TileGrid {
    pub fn new(height: usize, width: usize, tile_size: usize) -> Result<Self> {
        if tile_size == 0 || tile_size > height || tile_size > width {
            return Err(Error::TooLarge {
                op: "grid_tiles",
                size: tile_size,
                height,
                width,
            });
        }
        Ok(Self {
            tile_size,
            rows: height / tile_size,
            cols: width / tile_size,
            source_dims: (height, width),
        })
    }

    /// Tile origins in row-major order.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r * self.tile_size, c * self.tile_size)))
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn crop(pair: &RasterPair, id: String, row: usize, col: usize, h: usize, w: usize) -> RasterPair {
    RasterPair {
        id,
        image: pair.image.slice(s![row..row + h, col..col + w, ..]).to_owned(),
        labels: pair.labels.slice(s![row..row + h, col..col + w]).to_owned(),
        meters_per_pixel_image: pair.meters_per_pixel_image,
        meters_per_pixel_label: pair.meters_per_pixel_label,
        split: pair.split,
        trimmed: pair.trimmed,
    }
}

/// Cuts `pair` into `tile_size` squares; partial tiles at the bottom/right are dropped.
pub fn grid_tiles(pair: &RasterPair, tile_size: usize) -> Result<Vec<RasterPair>> {
    let grid = TileGrid::new(pair.height(), pair.width(), tile_size)?;
    Ok(grid
        .origins()
        .map(|(r, c)| {
            let id = format!("{}_r{}_c{}", pair.id, r / tile_size, c / tile_size);
            crop(pair, id, r, c, tile_size, tile_size)
        })
        .collect())
}

/// Draws a top-left corner uniformly over every valid `crop_size` placement.
pub fn crop_origin<R: Rng + ?Sized>(height: usize, width: usize, crop_size: usize, rng: &mut R) -> Result<(usize, usize)> {
    if crop_size == 0 || crop_size > height || crop_size > width {
        return Err(Error::TooLarge {
            op: "random_crop",
            size: crop_size,
            height,
            width,
        });
    }
    let row = rng.gen_range(0..=height - crop_size);
    let col = rng.gen_range(0..=width - crop_size);
    Ok((row, col))
}

/// A `crop_size` square at a uniformly drawn origin; image and labels share the origin.
pub fn random_crop<R: Rng + ?Sized>(tile: &RasterPair, crop_size: usize, rng: &mut R) -> Result<RasterPair> {
    let (row, col) = crop_origin(tile.height(), tile.width(), crop_size, rng)?;
    Ok(crop(tile, format!("{}@{row},{col}", tile.id), row, col, crop_size, crop_size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Split;
    use ndarray::{Array2, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn pair(h: usize, w: usize) -> RasterPair {
        let image = Array3::from_shape_fn((h, w, 3), |(r, c, k)| ((r * 7 + c * 13 + k) % 251) as u8);
        let labels = Array2::from_shape_fn((h, w), |(r, c)| ((r / 3 + c / 5) % 5) as u8);
        RasterPair::new("scene", image, labels, Split::Train).unwrap()
    }

    #[test]
    fn tile_counts() {
        assert_eq!(TileGrid::new(5000, 6000, 1000).unwrap().len(), 30);
        let p = pair(40, 30);
        assert_eq!(grid_tiles(&p, 10).unwrap().len(), 12);
        let single = grid_tiles(&pair(20, 20), 20).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].image, pair(20, 20).image);
        assert!(grid_tiles(&p, 31).is_err());
    }

    #[test]
    fn margins_are_dropped() {
        let g = TileGrid::new(1024, 1024, 1000).unwrap();
        assert_eq!(g.origins().collect::<Vec<_>>(), vec![(0, 0)]);
        let p = pair(26, 26);
        let tiles = grid_tiles(&p, 25).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].labels, p.labels.slice(s![0..25, 0..25]));
    }

    #[test]
    fn crop_full_tile_is_identity() {
        let p = pair(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_crop(&p, 16, &mut rng).unwrap();
        assert_eq!(c.image, p.image);
        assert_eq!(c.labels, p.labels);
    }

    #[test]
    fn crop_is_seed_deterministic_and_aligned() {
        let p = pair(50, 60);
        let a = random_crop(&p, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_crop(&p, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let (r, c) = a.id.rsplit('@').next().unwrap().split_once(',').unwrap();
        let (r, c): (usize, usize) = (r.parse().unwrap(), c.parse().unwrap());
        assert_eq!(a.labels, p.labels.slice(s![r..r + 20, c..c + 20]));
        assert_eq!(a.image, p.image.slice(s![r..r + 20, c..c + 20, ..]));
        assert!(random_crop(&p, 51, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }
}
