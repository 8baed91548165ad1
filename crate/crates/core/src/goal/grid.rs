use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel lattice over the world plane. Pixel `(row, col)` has its centre at
/// `origin + (col, row) * resolution`; rows run along +y, columns along +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub origin: [f64; 2],
    pub resolution: f64,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, origin: [f64; 2], resolution: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::Config(format!("grid resolution must be positive, got {resolution}")));
        }
        Ok(Self {
            height,
            width,
            origin,
            resolution,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + col as f64 * self.resolution,
            self.origin[1] + row as f64 * self.resolution,
        ]
    }

    pub fn index_center(&self, index: usize) -> [f64; 2] {
        self.pixel_center(index / self.width, index % self.width)
    }

    /// Continuous pixel coordinates `(row, col)` of a world point.
    pub fn to_pixel_f(&self, pos: [f64; 2]) -> [f64; 2] {
        [
            (pos[1] - self.origin[1]) / self.resolution,
            (pos[0] - self.origin[0]) / self.resolution,
        ]
    }

    pub fn contains(&self, pos: [f64; 2]) -> bool {
        let [r, c] = self.to_pixel_f(pos);
        r >= -0.5 && c >= -0.5 && r < self.height as f64 - 0.5 && c < self.width as f64 - 0.5
    }

    /// Pixel whose cell contains `pos`.
    pub fn to_pixel(&self, pos: [f64; 2]) -> Result<(usize, usize)> {
        if !pos[0].is_finite() || !pos[1].is_finite() || !self.contains(pos) {
            return Err(Error::Invalid(format!("position ({}, {}) is outside the grid extent", pos[0], pos[1])));
        }
        let [r, c] = self.to_pixel_f(pos);
        let clamp = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
        Ok((clamp(r, self.height), clamp(c, self.width)))
    }

    /// Extent of the grid as `([x_min, y_min], [x_max, y_max])` over pixel cells.
    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        let half = 0.5 * self.resolution;
        let far = self.pixel_center(self.height - 1, self.width - 1);
        ([self.origin[0] - half, self.origin[1] - half], [far[0] + half, far[1] + half])
    }
}

/// Per-pixel class scores, channel-major (`scores[c][row][col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    pub grid: GridSpec,
    pub classes: usize,
    pub scores: Vec<f64>,
}

const SEM_MAGIC: &[u8; 4] = b"TLSG";
const SEM_VERSION: u32 = 1;

impl SemanticGrid {
    pub fn new(grid: GridSpec, classes: usize, scores: Vec<f64>) -> Result<Self> {
        if classes < 1 {
            return Err(Error::Invalid("semantic grid needs at least one class".into()));
        }
        if scores.len() != classes * grid.pixels() {
            return Err(Error::shape("semantic grid payload", classes * grid.pixels(), scores.len()));
        }
        if let Some(v) = scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("semantic score {v} outside [0, 1]")));
        }
        Ok(Self { grid, classes, scores })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.pixels();
        &self.scores[c * n..(c + 1) * n]
    }

    /// Serializes to the semantic grid file format:
    ///
    /// ```text
    /// magic "TLSG" | version u32 | height u32 | width u32 | classes u32
    /// | origin_x f64 | origin_y f64 | resolution f64
    /// | payload f32 x (height * width * classes), row-major [row][col][class]
    /// ```
    ///
    /// All fields little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        w.write_all(SEM_MAGIC)?;
        for v in [SEM_VERSION, g.height as u32, g.width as u32, self.classes as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [g.origin[0], g.origin[1], g.resolution] {
            w.write_all(&v.to_le_bytes())?;
        }
        let n = g.pixels();
        for p in 0..n {
            for c in 0..self.classes {
                w.write_all(&(self.scores[c * n + p] as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SEM_MAGIC {
            return Err(Error::Invalid("not a semantic grid file (bad magic)".into()));
        }
        let mut u = [0u32; 4];
        for v in &mut u {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        if u[0] != SEM_VERSION {
            return Err(Error::Invalid(format!("unsupported semantic grid version {}", u[0])));
        }
        let mut f = [0f64; 3];
        for v in &mut f {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let grid = GridSpec::new(u[1] as usize, u[2] as usize, [f[0], f[1]], f[2])?;
        let classes = u[3] as usize;
        let n = grid.pixels();
        let mut scores = vec![0.0; n * classes];
        for p in 0..n {
            for c in 0..classes {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                scores[c * n + p] = f32::from_le_bytes(b) as f64;
            }
        }
        Self::new(grid, classes, scores)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_from(fs::read(path)?.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(24, 20, [0.25, -3.0], 0.5).unwrap()
    }

    proptest! {
        #[test]
        fn world_pixel_round_trip(x in 0.0f64..9.99, y in -3.24f64..8.74) {
            let g = grid();
            let pos = [x, y];
            let (r, c) = g.to_pixel(pos).unwrap();
            let back = g.pixel_center(r, c);
            prop_assert!((back[0] - pos[0]).abs() <= g.resolution / 2.0 + 1e-12);
            prop_assert!((back[1] - pos[1]).abs() <= g.resolution / 2.0 + 1e-12);
        }
    }

    #[test]
    fn outside_points_rejected() {
        let g = grid();
        assert!(g.to_pixel([-0.1, 0.0]).is_err());
        assert!(g.to_pixel([0.0, 100.0]).is_err());
        assert!(g.to_pixel([f64::NAN, 0.0]).is_err());
        assert_eq!(g.to_pixel(g.pixel_center(3, 7)).unwrap(), (3, 7));
        assert!(GridSpec::new(2, 2, [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn semantic_file_round_trip() {
        let g = GridSpec::new(2, 3, [1.0, 2.0], 0.25).unwrap();
        let scores = vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.125, 1.0, 0.5, 0.0, 0.75, 0.25, 0.875];
        let sem = SemanticGrid::new(g, 2, scores).unwrap();
        let mut buf = Vec::new();
        sem.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 16 + 24 + 12 * 4);
        // First payload value is pixel 0 class 0, then pixel 0 class 1.
        assert_eq!(&buf[44..48], &0.0f32.to_le_bytes());
        assert_eq!(&buf[48..52], &1.0f32.to_le_bytes());
        assert_eq!(SemanticGrid::read_from(buf.as_slice()).unwrap(), sem);
        assert!(SemanticGrid::new(g, 2, vec![0.0; 3]).is_err());
    }
}
