//! Heatmap rendering of spectrum magnitudes to portable anymap images.

use crate::{NvmrError, Result};
use std::io::Write;
use std::path::Path;

/// Map a magnitude to [0, 1] with optional log compression.
fn normalize(values: &[f64], log_scale: bool) -> Vec<f64> {
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| {
            let r = (v / max).max(0.0);
            if log_scale {
                // Two decades of dynamic range.
                ((r.max(1e-2)).log10() / 2.0 + 1.0).clamp(0.0, 1.0)
            } else {
                r.min(1.0)
            }
        })
        .collect()
}

/// Write an n x n magnitude map as an 8-bit binary PGM image.
///
/// Row 0 of `values` becomes the bottom row of the image so that frequency
/// increases upward and to the right.
pub fn write_pgm(path: &Path, values: &[f64], n: usize, log_scale: bool) -> Result<()> {
    if values.len() != n * n {
        return Err(NvmrError::DimensionMismatch(format!(
            "render: {} values for a {n}x{n} image",
            values.len()
        )));
    }
    let norm = normalize(values, log_scale);
    let mut out = Vec::with_capacity(n * n + 32);
    write!(out, "P5\n{n} {n}\n255\n")?;
    for row in (0..n).rev() {
        for col in 0..n {
            out.push((norm[row * n + col] * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Simple dark-blue -> cyan -> yellow colormap.
fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t * 2.0;
        (0.0, u, 0.3 + 0.7 * u)
    } else {
        let u = (t - 0.5) * 2.0;
        (u, 1.0, 1.0 - u)
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Write an n x n magnitude map as an 8-bit binary PPM image.
pub fn write_ppm(path: &Path, values: &[f64], n: usize, log_scale: bool) -> Result<()> {
    if values.len() != n * n {
        return Err(NvmrError::DimensionMismatch(format!(
            "render: {} values for a {n}x{n} image",
            values.len()
        )));
    }
    let norm = normalize(values, log_scale);
    let mut out = Vec::with_capacity(3 * n * n + 32);
    write!(out, "P6\n{n} {n}\n255\n")?;
    for row in (0..n).rev() {
        for col in 0..n {
            out.extend_from_slice(&colormap(norm[row * n + col]));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        write_pgm(&p, &vals, 4, false).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(bytes.len(), b"P5\n4 4\n255\n".len() + 16);
        let body = &bytes[b"P5\n4 4\n255\n".len()..];
        // The maximum sits at row 3, col 3, which renders as the top-right
        // pixel; the bottom-left pixel is the zero.
        assert_eq!(body[3], 255);
        assert_eq!(body[12], 0);
    }

    #[test]
    fn ppm_size_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ppm");
        let p2 = dir.path().join("b.ppm");
        let vals: Vec<f64> = (0..64).map(|i| (i as f64).sin().abs()).collect();
        write_ppm(&p1, &vals, 8, true).unwrap();
        write_ppm(&p2, &vals, 8, true).unwrap();
        let a = std::fs::read(&p1).unwrap();
        assert!(a.starts_with(b"P6\n8 8\n255\n"));
        assert_eq!(a.len(), b"P6\n8 8\n255\n".len() + 3 * 64);
        assert_eq!(a, std::fs::read(&p2).unwrap());
    }

    #[test]
    fn wrong_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_pgm(&dir.path().join("x.pgm"), &[1.0; 5], 4, false).is_err());
    }

    #[test]
    fn all_zero_image_is_black() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.pgm");
        write_pgm(&p, &[0.0; 16], 4, false).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes[b"P5\n4 4\n255\n".len()..].iter().all(|&b| b == 0));
    }
}
