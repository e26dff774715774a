//! Dense optical flow fields and the Middlebury `.flo` file format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Magic number opening every `.flo` file (bytes `PIEH`).
pub const FLO_MAGIC: f32 = 202021.25;

/// Per-pixel `(dx, dy)` displacements in pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    vectors: Vec<[f32; 2]>,
}

impl FlowField {
    /// Rejects mismatched lengths and non-finite vectors.
    pub fn new(width: u32, height: u32, vectors: Vec<[f32; 2]>) -> Result<Self> {
        if vectors.len() != width as usize * height as usize {
            return Err(Error::Config(format!(
                "{} flow vectors for a {width}x{height} field",
                vectors.len()
            )));
        }
        if let Some(i) = vectors
            .iter()
            .position(|v| !(v[0].is_finite() && v[1].is_finite()))
        {
            return Err(Error::NonFiniteFlow {
                x: (i % width as usize) as u32,
                y: (i / width as usize) as u32,
            });
        }
        Ok(FlowField {
            width,
            height,
            vectors,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        FlowField {
            width,
            height,
            vectors: vec![[0.0; 2]; width as usize * height as usize],
        }
    }

    pub fn constant(width: u32, height: u32, dx: f32, dy: f32) -> Self {
        FlowField {
            width,
            height,
            vectors: vec![[dx, dy]; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    /// Stored vector of pixel `(x, y)`.
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> (f64, f64) {
        let v = self.vectors[y as usize * self.width as usize + x as usize];
        (f64::from(v[0]), f64::from(v[1]))
    }

    /// Bilinear interpolation between pixel centers at the continuous point
    /// `(x, y)`. Sample coordinates are clamped into the grid of centers, so
    /// the outer half-pixel ring repeats the border vectors.
    ///
    /// Points outside `[0, W) x [0, H)` report [`Error::LeftImage`].
    pub fn sample(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        if !(x >= 0.0 && x < w && y >= 0.0 && y < h) {
            return Err(Error::LeftImage { x, y });
        }
        let u = (x - 0.5).clamp(0.0, w - 1.0);
        let v = (y - 0.5).clamp(0.0, h - 1.0);
        let (c0, r0) = (u.floor(), v.floor());
        let (fx, fy) = (u - c0, v - r0);
        let (c0, r0) = (c0 as u32, r0 as u32);
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let lerp = |a: (f64, f64), b: (f64, f64), t: f64| {
            if t == 0.0 {
                a
            } else {
                (a.0 * (1.0 - t) + b.0 * t, a.1 * (1.0 - t) + b.1 * t)
            }
        };
        let top = lerp(self.at(c0, r0), self.at(c1, r0), fx);
        let bottom = lerp(self.at(c0, r1), self.at(c1, r1), fx);
        Ok(lerp(top, bottom, fy))
    }

    /// Encodes the field in `.flo` layout: magic, width, height, then
    /// interleaved little-endian `f32` pairs in row-major order.
    pub fn to_flo_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.vectors.len() * 8);
        out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        out.extend_from_slice(&(self.width as i32).to_le_bytes());
        out.extend_from_slice(&(self.height as i32).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v[0].to_le_bytes());
            out.extend_from_slice(&v[1].to_le_bytes());
        }
        out
    }

    pub fn from_flo_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::BadFlow {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 12 {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
        let magic = f32::from_le_bytes(word(0));
        if magic != FLO_MAGIC {
            return Err(bad(format!("bad magic {magic}")));
        }
        let width = i32::from_le_bytes(word(4));
        let height = i32::from_le_bytes(word(8));
        if width <= 0 || height <= 0 {
            return Err(bad(format!("bad dimensions {width}x{height}")));
        }
        let n = width as usize * height as usize;
        if bytes.len() != 12 + 8 * n {
            return Err(bad(format!(
                "expected {} bytes for {width}x{height}, found {}",
                12 + 8 * n,
                bytes.len()
            )));
        }
        let vectors = (0..n)
            .map(|i| {
                let at = 12 + 8 * i;
                [
                    f32::from_le_bytes(word(at)),
                    f32::from_le_bytes(word(at + 4)),
                ]
            })
            .collect();
        FlowField::new(width as u32, height as u32, vectors).map_err(|e| bad(e.to_string()))
    }

    pub fn read_flo(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FlowField::from_flo_bytes(&bytes, path)
    }

    pub fn write_flo(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_flo_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Free-function form of [`FlowField::sample`].
pub fn sample_flow(f: &FlowField, x: f64, y: f64) -> Result<(f64, f64)> {
    f.sample(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_in_x(width: u32, height: u32) -> FlowField {
        let mut v = Vec::new();
        for _ in 0..height {
            for c in 0..width {
                v.push([0.25 * c as f32 - 1.0, 2.0]);
            }
        }
        FlowField::new(width, height, v).unwrap()
    }

    #[test]
    fn constant_field_samples_constant() {
        let f = FlowField::constant(7, 5, 1.5, -2.0);
        for &(x, y) in &[(0.0, 0.0), (3.3, 2.7), (6.99, 4.99), (0.5, 0.5)] {
            assert_eq!(f.sample(x, y).unwrap(), (1.5, -2.0));
        }
    }

    #[test]
    fn pixel_centers_are_exact() {
        let mut v = Vec::new();
        for r in 0..6 {
            for c in 0..9 {
                v.push([(c * 31 + r * 7) as f32 * 0.37, (r as f32).sin()]);
            }
        }
        let f = FlowField::new(9, 6, v).unwrap();
        for r in 0..6 {
            for c in 0..9 {
                let s = f.sample(c as f64 + 0.5, r as f64 + 0.5).unwrap();
                assert_eq!(s, f.at(c, r));
            }
        }
    }

    #[test]
    fn midway_between_columns_is_the_mean() {
        let f = linear_in_x(10, 4);
        // halfway between centers of columns 3 and 4
        let (dx, dy) = f.sample(4.0, 1.5).unwrap();
        let expected = 0.5 * (f.at(3, 1).0 + f.at(4, 1).0);
        assert!((dx - expected).abs() < 1e-12);
        assert_eq!(dy, 2.0);
    }

    #[test]
    fn borders_clamp() {
        let f = linear_in_x(10, 4);
        assert_eq!(f.sample(0.1, 0.1).unwrap(), f.at(0, 0));
        assert_eq!(f.sample(9.9, 3.9).unwrap(), f.at(9, 3));
    }

    #[test]
    fn outside_points_leave_the_image() {
        let f = FlowField::zeros(4, 4);
        for &(x, y) in &[(-0.1, 1.0), (4.0, 1.0), (1.0, 4.0), (f64::NAN, 0.0)] {
            assert!(matches!(f.sample(x, y), Err(Error::LeftImage { .. })));
        }
    }

    #[test]
    fn rejects_non_finite() {
        let err = FlowField::new(2, 1, vec![[0.0, 0.0], [f32::NAN, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteFlow { x: 1, y: 0 }));
    }

    #[test]
    fn flo_round_trip_and_layout() {
        let f = linear_in_x(3, 2);
        let bytes = f.to_flo_bytes();
        assert_eq!(&bytes[0..4], b"PIEH");
        assert_eq!(bytes.len(), 12 + 3 * 2 * 8);
        // second vector, dx component
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), -0.75);
        let back = FlowField::from_flo_bytes(&bytes, Path::new("x.flo")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn flo_rejects_bad_magic_and_truncation() {
        let mut bytes = FlowField::zeros(2, 2).to_flo_bytes();
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            FlowField::from_flo_bytes(truncated, Path::new("t.flo")),
            Err(Error::BadFlow { .. })
        ));
        bytes[0] = 0;
        assert!(matches!(
            FlowField::from_flo_bytes(&bytes, Path::new("m.flo")),
            Err(Error::BadFlow { .. })
        ));
    }
}
