//! 8-bit grayscale images and binary PGM (P5) output.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `round(255 · v)` after clamping `v` to `[0, 1]`.
pub fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Reads the P5 files written by [`GrayImage::to_pgm`] (single
    /// whitespace separators, no comments, maxval 255).
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format(pos, "PGM header truncated"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(Error::format(0, "not an 8-bit binary PGM"));
        }
        let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::format(0, "bad PGM dimensions"));
        let (width, height) = (dim(&fields[1])?, dim(&fields[2])?);
        let pixels = bytes.get(pos..).unwrap_or_default().to_vec();
        if pixels.len() != width * height {
            return Err(Error::format(bytes.len(), "PGM payload has the wrong size"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Tiles `side × side` images (values in `[0, 1]`) row-major into a grid
/// `cols` wide and `rows` high.
pub fn tile(images: &[Vec<f64>], cols: usize, rows: usize, side: usize) -> Result<GrayImage> {
    if images.len() != cols * rows {
        return Err(Error::contract(format!("{} images do not fill a {cols}×{rows} grid", images.len())));
    }
    let mut img = GrayImage::new(cols * side, rows * side);
    for (n, cell) in images.iter().enumerate() {
        if cell.len() != side * side {
            return Err(Error::dim(format!("image {n} has {} pixels, expected {}", cell.len(), side * side)));
        }
        let (ox, oy) = ((n % cols) * side, (n / cols) * side);
        for y in 0..side {
            for x in 0..side {
                img.set(ox + x, oy + y, to_byte(cell[y * side + x]));
            }
        }
    }
    Ok(img)
}

/// One `cell × cell` block per matrix entry, shaded by `value / max`
/// (negative and undefined entries render black).
pub fn heatmap(values: &[f64], k: usize, max: f64, cell: usize) -> GrayImage {
    let mut img = GrayImage::new(k * cell, k * cell);
    for i in 0..k {
        for j in 0..k {
            let v = values[i * k + j];
            let shade = if v.is_finite() && max > 0.0 { to_byte(v / max) } else { 0 };
            for y in 0..cell {
                for x in 0..cell {
                    img.set(j * cell + x, i * cell + y, shade);
                }
            }
        }
    }
    img
}
