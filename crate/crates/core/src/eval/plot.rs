use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const SIZE: u32 = 512;
const MARGIN: f64 = 24.0;

/// Scatter plot of two point clouds (reference grey, prediction red) on
/// shared axes, saved as PNG.
pub fn write_scatter_png(
    reference: &[[f64; 2]],
    predicted: &[[f64; 2]],
    path: impl AsRef<Path>,
) -> Result<[f64; 4]> {
    let path = path.as_ref();
    let all = reference.iter().chain(predicted);
    let mut bounds = [f64::MAX, f64::MIN, f64::MAX, f64::MIN];
    for p in all {
        bounds[0] = bounds[0].min(p[0]);
        bounds[1] = bounds[1].max(p[0]);
        bounds[2] = bounds[2].min(p[1]);
        bounds[3] = bounds[3].max(p[1]);
    }
    if bounds[0] > bounds[1] {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let span_x = (bounds[1] - bounds[0]).max(1e-12);
    let span_y = (bounds[3] - bounds[2]).max(1e-12);
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let inner = SIZE as f64 - 2.0 * MARGIN;
    let mut dot = |p: &[f64; 2], color: Rgb<u8>| {
        let x = MARGIN + (p[0] - bounds[0]) / span_x * inner;
        let y = SIZE as f64 - MARGIN - (p[1] - bounds[2]) / span_y * inner;
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                let (px, py) = (x as i64 + dx, y as i64 + dy);
                if (0..SIZE as i64).contains(&px) && (0..SIZE as i64).contains(&py) {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    };
    reference.iter().for_each(|p| dot(p, Rgb([150, 150, 150])));
    predicted.iter().for_each(|p| dot(p, Rgb([200, 30, 30])));
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("cannot encode {}: {other}", path.display())),
    })?;
    Ok(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tica.png");
        let b = write_scatter_png(&[[0.0, 0.0], [1.0, 2.0]], &[[0.5, 0.5]], &path).unwrap();
        assert_eq!(b, [0.0, 1.0, 0.0, 2.0]);
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), SIZE);
        assert!(write_scatter_png(&[], &[], &path).is_err());
    }
}
