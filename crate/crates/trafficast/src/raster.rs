//! Binary image encoding of normalized sub-series.
//!
//! A series of R values in [0, 1] becomes an R x R image with exactly one
//! white pixel per column at row `max(1, ceil(R * x))`, counting rows from
//! the bottom. Inputs of a different length are first resampled to R
//! columns by linear interpolation.

use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("empty sub-series")]
    Empty,
    #[error("resolution must be at least 1")]
    ZeroResolution,
    #[error("column {column} has {count} white pixels, expected exactly 1")]
    NotOneHot { column: usize, count: usize },
    #[error("pixel value {0} is neither 0 nor 255")]
    BadPixelValue(u8),
    #[error("pixel buffer length {got} does not match {expected}")]
    BadBufferLength { got: usize, expected: usize },
    #[error("position {0} outside 1..=resolution")]
    PositionOutOfRange(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a binary PGM with maxval 255")]
    BadPgm { path: String },
}

/// Square binary image; pixel values are 0 or 255, stored row-major with
/// row 0 at the bottom (lowest speed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    resolution: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    /// Build from 1-based column positions (`positions[i]` is the white row
    /// of column `i`, counted from the bottom).
    pub fn from_positions(positions: &[usize], resolution: usize) -> Result<Self, RasterError> {
        if resolution == 0 {
            return Err(RasterError::ZeroResolution);
        }
        if positions.len() != resolution {
            return Err(RasterError::BadBufferLength {
                got: positions.len(),
                expected: resolution,
            });
        }
        let mut pixels = vec![0_u8; resolution * resolution];
        for (col, &p) in positions.iter().enumerate() {
            if p < 1 || p > resolution {
                return Err(RasterError::PositionOutOfRange(p));
            }
            pixels[(p - 1) * resolution + col] = 255;
        }
        Ok(Self { resolution, pixels })
    }

    /// Build from a raw pixel buffer (row-major, bottom row first). Values
    /// must be 0 or 255; the one-hot-per-column invariant is checked on use.
    pub fn from_pixels(resolution: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if resolution == 0 {
            return Err(RasterError::ZeroResolution);
        }
        if pixels.len() != resolution * resolution {
            return Err(RasterError::BadBufferLength {
                got: pixels.len(),
                expected: resolution * resolution,
            });
        }
        if let Some(&bad) = pixels.iter().find(|&&v| v != 0 && v != 255) {
            return Err(RasterError::BadPixelValue(bad));
        }
        Ok(Self { resolution, pixels })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Pixel at (row counted from bottom, column), both 0-based.
    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.resolution + col]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// 1-based white row per column; errors if any column is not one-hot.
    pub fn column_positions(&self) -> Result<Vec<usize>, RasterError> {
        let r = self.resolution;
        let mut out = Vec::with_capacity(r);
        for col in 0..r {
            let mut white = None;
            let mut count = 0;
            for row in 0..r {
                if self.pixel(row, col) == 255 {
                    white = Some(row + 1);
                    count += 1;
                }
            }
            match (white, count) {
                (Some(p), 1) => out.push(p),
                _ => return Err(RasterError::NotOneHot { column: col, count }),
            }
        }
        Ok(out)
    }
}

/// Resample to `target` points by linear interpolation. Identity when the
/// length already matches.
pub fn resample_linear(values: &[f64], target: usize) -> Vec<f64> {
    if values.len() == target {
        return values.to_vec();
    }
    if values.len() == 1 {
        return vec![values[0]; target];
    }
    if target == 1 {
        return vec![values[0]];
    }
    let n = values.len();
    (0..target)
        .map(|i| {
            let pos = i as f64 * (n - 1) as f64 / (target - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = lo.min(n - 2) + 1;
            let frac = pos - lo as f64;
            values[lo] * (1.0 - frac) + values[hi.min(n - 1)] * frac
        })
        .collect()
}

/// Scale a sub-series to [0, 1] for rasterization. A constant sub-series
/// maps to a flat line at mid-scale instead of erroring.
pub fn normalize_for_raster(values: &[f64]) -> Result<Vec<f64>, RasterError> {
    if values.is_empty() {
        return Err(RasterError::Empty);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(min.is_finite() && max.is_finite()) {
        return Err(RasterError::ValueOutOfRange(f64::NAN));
    }
    if max == min {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / (max - min)).collect())
}

/// Encode a normalized sub-series as a one-hot-per-column binary image.
pub fn rasterize(sub: &[f64], resolution: usize) -> Result<RasterImage, RasterError> {
    if sub.is_empty() {
        return Err(RasterError::Empty);
    }
    if resolution == 0 {
        return Err(RasterError::ZeroResolution);
    }
    for &v in sub {
        if !(0.0..=1.0).contains(&v) {
            return Err(RasterError::ValueOutOfRange(v));
        }
    }
    let resampled;
    let columns = if sub.len() == resolution {
        sub
    } else {
        resampled = resample_linear(sub, resolution);
        &resampled
    };
    let positions: Vec<usize> = columns
        .iter()
        .map(|&x| {
            let p = (resolution as f64 * x).ceil() as usize;
            p.clamp(1, resolution)
        })
        .collect();
    RasterImage::from_positions(&positions, resolution)
}

/// Recover the quantized sub-series: `x_i = (p_i - 0.5) / R`.
pub fn derasterize(img: &RasterImage) -> Result<Vec<f64>, RasterError> {
    let r = img.resolution() as f64;
    Ok(img
        .column_positions()?
        .into_iter()
        .map(|p| (p as f64 - 0.5) / r)
        .collect())
}

/// Write a binary PGM (P5, maxval 255). Rows are emitted top to bottom, so
/// the highest speed is the top row of the file.
pub fn write_pgm(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let wrap = |source: std::io::Error| RasterError::Io {
        path: path.display().to_string(),
        source,
    };
    let r = img.resolution();
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "P5\n{r} {r}\n255\n").map_err(wrap)?;
    for row_from_top in 0..r {
        let row = r - 1 - row_from_top;
        w.write_all(&img.pixels()[row * r..(row + 1) * r]).map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}

/// Read a PGM written by [`write_pgm`].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<RasterImage, RasterError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let wrap = |source: std::io::Error| RasterError::Io {
        path: path_str.clone(),
        source,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(wrap)?
        .read_to_end(&mut bytes)
        .map_err(wrap)?;
    let bad = || RasterError::BadPgm {
        path: path_str.clone(),
    };
    // header: three whitespace-separated tokens after the magic
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<String, RasterError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(bad());
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| bad())?;
    let height: usize = token(&bytes)?.parse().map_err(|_| bad())?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| bad())?;
    if width != height || maxval != 255 {
        return Err(bad());
    }
    pos += 1; // single whitespace after maxval
    let payload = bytes.get(pos..pos + width * height).ok_or_else(bad)?;
    let mut pixels = vec![0_u8; width * height];
    for row_from_top in 0..height {
        let row = height - 1 - row_from_top;
        pixels[row * width..(row + 1) * width]
            .copy_from_slice(&payload[row_from_top * width..(row_from_top + 1) * width]);
    }
    RasterImage::from_pixels(width, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn positions_from_hand_applied_formula() {
        // ceil(4*0) = 0 -> clamped to 1; ceil(4*1) = 4; ceil(4*0.5) = 2;
        // ceil(4*0.25) = 1
        let img = rasterize(&[0.0, 1.0, 0.5, 0.25], 4).unwrap();
        assert_eq!(img.column_positions().unwrap(), vec![1, 4, 2, 1]);
    }

    #[test]
    fn full_day_needs_no_resampling() {
        let sub: Vec<f64> = (0..288).map(|i| i as f64 / 287.0).collect();
        let img = rasterize(&sub, 288).unwrap();
        assert_eq!(img.resolution(), 288);
        let positions = img.column_positions().unwrap();
        assert_eq!(positions[0], 1);
        assert_eq!(positions[287], 288);
    }

    #[test]
    fn constant_half_is_flat_line() {
        let img = rasterize(&[0.5; 4], 4).unwrap();
        assert_eq!(img.column_positions().unwrap(), vec![2; 4]);
    }

    #[test]
    fn out_of_range_value_errors() {
        assert!(matches!(
            rasterize(&[0.2, 1.5], 4),
            Err(RasterError::ValueOutOfRange(_))
        ));
        assert!(matches!(
            rasterize(&[-0.1], 4),
            Err(RasterError::ValueOutOfRange(_))
        ));
    }

    #[test]
    fn column_sums_are_exactly_255() {
        let sub: Vec<f64> = (0..32).map(|i| ((i * 13) % 32) as f64 / 31.0).collect();
        let img = rasterize(&sub, 32).unwrap();
        for col in 0..32 {
            let sum: u32 = (0..32).map(|row| u32::from(img.pixel(row, col))).sum();
            assert_eq!(sum, 255);
        }
    }

    #[test]
    fn derasterize_rejects_multi_white_column() {
        let mut pixels = vec![0_u8; 16];
        pixels[0] = 255; // col 0 twice
        pixels[4] = 255;
        pixels[1] = 255;
        pixels[2] = 255;
        pixels[3] = 255;
        let img = RasterImage::from_pixels(4, pixels).unwrap();
        assert!(matches!(
            derasterize(&img),
            Err(RasterError::NotOneHot { column: 0, count: 2 })
        ));
    }

    #[test]
    fn resample_identity_when_lengths_match() {
        let x: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(resample_linear(&x, 17), x);
    }

    #[test]
    fn pgm_layout_and_round_trip() {
        let img = rasterize(&[0.0, 1.0, 0.5, 0.25], 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        write_pgm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 16);
        // p = [1,4,2,1] -> white at 1-based rows from top (4,1,3,4)
        let payload = &bytes[header.len()..];
        let white_rows_from_top: Vec<usize> = (0..4)
            .map(|col| (0..4).find(|row| payload[row * 4 + col] == 255).unwrap() + 1)
            .collect();
        assert_eq!(white_rows_from_top, vec![4, 1, 3, 4]);
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn normalize_constant_maps_to_mid_scale() {
        let normalized = normalize_for_raster(&[42.0; 6]).unwrap();
        assert_eq!(normalized, vec![0.5; 6]);
        // at R = 4 the flat line sits at ceil(4 * 0.5) = 2 ~ ceil(R/2)
        let img = rasterize(&normalized, 4).unwrap();
        assert_eq!(img.column_positions().unwrap(), vec![2; 4]);
    }

    proptest! {
        #[test]
        fn round_trip_error_within_one_pixel(seed in 0_u64..1000) {
            let mut rng = crate::rng::stage_rng(seed, "raster-roundtrip");
            let r = 64;
            let sub: Vec<f64> = (0..r).map(|_| rng.gen::<f64>()).collect();
            let img = rasterize(&sub, r).unwrap();
            let back = derasterize(&img).unwrap();
            for (orig, rec) in sub.iter().zip(&back) {
                prop_assert!((orig - rec).abs() <= 1.0 / r as f64 + 1e-12);
            }
        }

        #[test]
        fn monotone_positions(seed in 0_u64..200) {
            let mut rng = crate::rng::stage_rng(seed, "raster-monotone");
            let r = 48;
            let sub: Vec<f64> = (0..r).map(|_| rng.gen::<f64>()).collect();
            let img = rasterize(&sub, r).unwrap();
            let pos = img.column_positions().unwrap();
            for i in 0..r {
                for j in 0..r {
                    if sub[i] < sub[j] - 1.0 / r as f64 {
                        prop_assert!(pos[i] <= pos[j]);
                    }
                }
            }
        }

        #[test]
        fn vertical_flip_symmetry(seed in 0_u64..200) {
            let mut rng = crate::rng::stage_rng(seed, "raster-flip");
            let r = 32;
            // keep values off the quantization boundaries k/R
            let sub: Vec<f64> = (0..r)
                .map(|_| {
                    let mut x: f64 = rng.gen();
                    while (x * r as f64 - (x * r as f64).round()).abs() < 1e-6 {
                        x = rng.gen();
                    }
                    x
                })
                .collect();
            let mirrored: Vec<f64> = sub.iter().map(|x| 1.0 - x).collect();
            let a = rasterize(&sub, r).unwrap().column_positions().unwrap();
            let b = rasterize(&mirrored, r).unwrap().column_positions().unwrap();
            for (pa, pb) in a.iter().zip(&b) {
                prop_assert_eq!(pa + pb, r + 1);
            }
        }
    }
}
