use std::collections::HashMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, Rgb, RgbImage};

use super::{colormap, Result, SpectrogramError, SpectrogramMatrix};

pub const IMAGE_SIZE: usize = 256;

/// Dense `height × width` raster in image orientation: `x` is time, `y` is
/// frequency, row `y = 0` is the lowest frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Per-axis area weights: for every destination cell, the source cells it
/// overlaps and the overlap fraction of the destination cell.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut cells: Vec<(usize, f64)> = (first..last)
                .filter_map(|j| {
                    let overlap = (hi.min((j + 1) as f64) - lo.max(j as f64)).max(0.0);
                    (overlap > 0.0).then_some((j, overlap))
                })
                .collect();
            let total: f64 = cells.iter().map(|c| c.1).sum();
            for c in &mut cells {
                c.1 /= total;
            }
            cells
        })
        .collect()
}

/// Area-averaging resample of a row-major `rows × cols` raster.
pub fn resample_area(
    src: &[f64],
    rows: usize,
    cols: usize,
    dst_rows: usize,
    dst_cols: usize,
) -> Vec<f64> {
    let col_w = area_weights(cols, dst_cols);
    let row_w = area_weights(rows, dst_rows);
    let mut partial = vec![0.0; rows * dst_cols];
    for r in 0..rows {
        let line = &src[r * cols..(r + 1) * cols];
        for (c, weights) in col_w.iter().enumerate() {
            partial[r * dst_cols + c] = weights.iter().map(|&(j, w)| line[j] * w).sum();
        }
    }
    let mut out = vec![0.0; dst_rows * dst_cols];
    for (r, weights) in row_w.iter().enumerate() {
        for c in 0..dst_cols {
            out[r * dst_cols + c] = weights
                .iter()
                .map(|&(j, w)| partial[j * dst_cols + c] * w)
                .sum();
        }
    }
    out
}

/// Resamples `values` (time-major, as stored in the spectrogram) to a
/// `size × size` grid in image orientation.
fn to_grid(values: &[f64], spec: &SpectrogramMatrix, size: usize) -> Grid {
    let time_major = resample_area(values, spec.n_frames, spec.n_bins, size, size);
    let mut out = vec![0.0; size * size];
    for x in 0..size {
        for y in 0..size {
            out[y * size + x] = time_major[x * size + y];
        }
    }
    Grid {
        width: size,
        height: size,
        values: out,
    }
}

/// Area-averaged dB values on a `size × size` grid, unclipped.
pub fn db_grid(spec: &SpectrogramMatrix, size: usize) -> Result<Grid> {
    if spec.is_empty() {
        return Err(SpectrogramError::Empty);
    }
    Ok(to_grid(&spec.values_db, spec, size))
}

fn check_range(db_range: (f64, f64)) -> Result<()> {
    if db_range.0 >= db_range.1 || !db_range.0.is_finite() || !db_range.1.is_finite() {
        return Err(SpectrogramError::DegenerateRange {
            floor_db: db_range.0,
            ceil_db: db_range.1,
        });
    }
    Ok(())
}

/// Clips to `db_range`, normalizes to `[0, 1]`, area-resamples to
/// `size × size` and applies the colormap.
pub fn to_image(spec: &SpectrogramMatrix, size: usize, db_range: (f64, f64)) -> Result<RgbImage> {
    check_range(db_range)?;
    if spec.is_empty() {
        return Err(SpectrogramError::Empty);
    }
    let (floor, ceil) = db_range;
    let normalized: Vec<f64> = spec
        .values_db
        .iter()
        .map(|v| (v.clamp(floor, ceil) - floor) / (ceil - floor))
        .collect();
    let grid = to_grid(&normalized, spec, size);
    Ok(RgbImage::from_fn(size as u32, size as u32, |x, y| {
        Rgb(colormap::color(grid.at(x as usize, y as usize)))
    }))
}

/// Recovers approximate dB values from a rendered image.
pub fn grid_from_image(img: &RgbImage, db_range: (f64, f64)) -> Result<Grid> {
    check_range(db_range)?;
    let (floor, ceil) = db_range;
    let mut cache: HashMap<[u8; 3], f64> = HashMap::new();
    let (width, height) = (img.width() as usize, img.height() as usize);
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let rgb = img.get_pixel(x as u32, y as u32).0;
            let v = *cache.entry(rgb).or_insert_with(|| colormap::value_of(rgb));
            values.push(floor + v * (ceil - floor));
        }
    }
    Ok(Grid {
        width,
        height,
        values,
    })
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn save_jpeg(img: &RgbImage, path: &Path, quality: u8) -> Result<()> {
    let file = BufWriter::new(fs::File::create(path)?);
    JpegEncoder::new_with_quality(file, quality).encode_image(img)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(values_db: Vec<f64>, n_frames: usize, n_bins: usize) -> SpectrogramMatrix {
        SpectrogramMatrix {
            values_db,
            n_frames,
            n_bins,
            frame_hop: 1,
            window_len: 1,
            sample_rate_hz: 1.0,
            t0_s: 0.0,
            n_samples: n_frames,
        }
    }

    #[test]
    fn area_resample_preserves_mean() {
        let src: Vec<f64> = (0..7 * 13).map(|i| (i * 37 % 11) as f64).collect();
        let out = resample_area(&src, 7, 13, 5, 4);
        let mean_src = src.iter().sum::<f64>() / src.len() as f64;
        let mean_out = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean_src - mean_out).abs() < 1e-12);
    }

    #[test]
    fn area_resample_integer_ratio_is_block_mean() {
        let src = vec![1.0, 3.0, 5.0, 7.0];
        assert_eq!(resample_area(&src, 1, 4, 1, 2), vec![2.0, 6.0]);
        assert_eq!(resample_area(&[4.0], 1, 1, 2, 3), vec![4.0; 6]);
    }

    #[test]
    fn constant_matrix_renders_one_color() {
        let spec = matrix(vec![-60.0; 30 * 40], 30, 40);
        let img = to_image(&spec, 256, (-110.0, -10.0)).unwrap();
        let first = *img.get_pixel(0, 0);
        assert!(img.pixels().all(|p| *p == first));
        assert_eq!(first.0, colormap::color(0.5));
    }

    #[test]
    fn degenerate_range_is_rejected() {
        let spec = matrix(vec![0.0; 4], 2, 2);
        assert!(matches!(
            to_image(&spec, 8, (-10.0, -10.0)),
            Err(SpectrogramError::DegenerateRange { .. })
        ));
    }

    #[test]
    fn frequency_runs_along_y() {
        // Two frames, four bins: only the highest bin is bright.
        let mut values = vec![-110.0; 8];
        values[3] = -10.0;
        values[7] = -10.0;
        let grid = db_grid(&matrix(values, 2, 4), 4).unwrap();
        for x in 0..4 {
            assert_eq!(grid.at(x, 3), -10.0);
            assert_eq!(grid.at(x, 0), -110.0);
        }
    }

    #[test]
    fn image_round_trips_through_inverse_colormap() {
        let values: Vec<f64> = (0..16 * 16).map(|i| -110.0 + (i % 16) as f64 * 6.0).collect();
        let spec = matrix(values, 16, 16);
        let img = to_image(&spec, 16, (-110.0, -10.0)).unwrap();
        let back = grid_from_image(&img, (-110.0, -10.0)).unwrap();
        let direct = db_grid(&spec, 16).unwrap();
        for (a, b) in back.values.iter().zip(&direct.values) {
            assert!((a - b).abs() < 2.0, "{a} vs {b}");
        }
    }
}
