//! Binary instance masks.
//!
//! [`BinaryMask`] is the storage and interchange form: uncompressed
//! run-length counts over a column-major scan (pixel `(x, y)` has scan index
//! `x * height + y`). The first count is background; runs alternate from
//! there, so an all-foreground mask starts with a `0`. The JSON form is
//! `{"w": int, "h": int, "counts": [int, ...]}`.
//!
//! [`Bitmap`] is the dense row-major working form used where per-pixel random
//! access is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Dense row-major bit image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Bitmap {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    /// Wraps row-major bits; the length must be `width * height`.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::MalformedMask(format!(
                "{} bits for a {width}x{height} bitmap",
                bits.len()
            )));
        }
        Ok(Bitmap {
            width,
            height,
            bits,
        })
    }

    /// Every pixel whose center lies inside `b` is set.
    pub fn from_box(width: u32, height: u32, b: &BBox) -> Self {
        let mut bm = Bitmap::new(width, height);
        let (c0, c1) = pixel_span(b.x0, b.x1, width);
        let (r0, r1) = pixel_span(b.y0, b.y1, height);
        for r in r0..r1 {
            for c in c0..c1 {
                bm.set(c, r, true);
            }
        }
        bm
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground pixels in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn and(&self, other: &Bitmap) -> Result<Bitmap> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Bitmap) -> Result<Bitmap> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Bitmap) -> Result<Bitmap> {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &Bitmap, f: impl Fn(bool, bool) -> bool) -> Result<Bitmap> {
        check_dims(self.dims(), other.dims())?;
        Ok(Bitmap {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Half-open range of pixel indices whose centers fall in `[lo, hi)`.
fn pixel_span(lo: f64, hi: f64, n: u32) -> (u32, u32) {
    // center c + 0.5 >= lo  <=>  c >= lo - 0.5
    let first = (lo - 0.5).ceil().max(0.0);
    // center c + 0.5 < hi  <=>  c < hi - 0.5
    let end = (hi - 0.5).ceil().max(0.0);
    let n = f64::from(n);
    (first.min(n) as u32, end.min(n).max(first.min(n)) as u32)
}

pub(crate) fn check_dims(expected: (u32, u32), actual: (u32, u32)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Run-length encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleJson", into = "RleJson")]
pub struct BinaryMask {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct RleJson {
    w: u32,
    h: u32,
    counts: Vec<u32>,
}

impl TryFrom<RleJson> for BinaryMask {
    type Error = Error;

    fn try_from(j: RleJson) -> Result<Self> {
        BinaryMask::from_counts(j.w, j.h, j.counts)
    }
}

impl From<BinaryMask> for RleJson {
    fn from(m: BinaryMask) -> Self {
        RleJson {
            w: m.width,
            h: m.height,
            counts: m.counts,
        }
    }
}

impl BinaryMask {
    /// All-background mask.
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width * height;
        BinaryMask {
            width,
            height,
            counts: if n == 0 { vec![] } else { vec![n] },
        }
    }

    /// Validates and canonicalizes raw counts. Zero-length runs after the
    /// first are folded into their neighbours, so equal bit patterns always
    /// compare equal.
    pub fn from_counts(width: u32, height: u32, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let expected = u64::from(width) * u64::from(height);
        if total != expected {
            return Err(Error::MalformedMask(format!(
                "counts sum to {total}, expected {width}x{height} = {expected}"
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            counts: canonical(counts),
        })
    }

    /// Column-major run-length encoding of a dense bitmap.
    pub fn encode(bm: &Bitmap) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..bm.width {
            for y in 0..bm.height {
                let v = bm.get(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        if bm.width * bm.height > 0 {
            counts.push(run);
        }
        BinaryMask {
            width: bm.width,
            height: bm.height,
            counts,
        }
    }

    pub fn decode(&self) -> Bitmap {
        let mut bm = Bitmap::new(self.width, self.height);
        let h = self.height as usize;
        for (start, end) in self.fg_intervals() {
            for i in start..end {
                let i = i as usize;
                bm.set((i / h) as u32, (i % h) as u32, true);
            }
        }
        bm
    }

    pub fn from_box(width: u32, height: u32, b: &BBox) -> Self {
        BinaryMask::encode(&Bitmap::from_box(width, height, b))
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

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| u64::from(c))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Foreground runs as half-open scan-index intervals.
    fn fg_intervals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += u64::from(c);
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    /// Exact `|a ∩ b|` computed on the runs.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64> {
        check_dims(self.dims(), other.dims())?;
        let a: Vec<_> = self.fg_intervals().collect();
        let b: Vec<_> = other.fg_intervals().collect();
        let (mut i, mut j, mut total) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                total += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(total)
    }

    /// `|a ∩ b| / |a ∪ b|`, defined as 0 when both masks are empty.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        Ok(if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        })
    }

    /// Smallest box containing every foreground pixel; pixel `(c, r)`
    /// contributes `[c, c+1] x [r, r+1]`.
    pub fn tight_box(&self) -> Result<BBox> {
        let h = u64::from(self.height);
        let mut bounds: Option<(u64, u64, u64, u64)> = None;
        for (start, end) in self.fg_intervals() {
            let (c_first, c_last) = (start / h, (end - 1) / h);
            let (r_first, r_last) = if c_first == c_last {
                (start % h, (end - 1) % h)
            } else {
                // the run wraps a column boundary, so it spans every row
                (0, h - 1)
            };
            bounds = Some(match bounds {
                None => (c_first, r_first, c_last, r_last),
                Some((c0, r0, c1, r1)) => {
                    (c0.min(c_first), r0.min(r_first), c1.max(c_last), r1.max(r_last))
                }
            });
        }
        let (c0, r0, c1, r1) = bounds.ok_or(Error::EmptyMask)?;
        Ok(BBox {
            x0: c0 as f64,
            y0: r0 as f64,
            x1: (c1 + 1) as f64,
            y1: (r1 + 1) as f64,
        })
    }

    /// Keeps only the foreground pixels whose centers fall inside `b`.
    pub fn clip_to_box(&self, b: &BBox) -> BinaryMask {
        let keep = Bitmap::from_box(self.width, self.height, b);
        let bm = self.decode().and(&keep).expect("same dimensions");
        BinaryMask::encode(&bm)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        Ok(BinaryMask::encode(&self.decode().or(&other.decode())?))
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        Ok(BinaryMask::encode(&self.decode().and(&other.decode())?))
    }
}

fn canonical(counts: Vec<u32>) -> Vec<u32> {
    if counts.iter().all(|&c| c == 0) {
        return Vec::new();
    }
    // out[k] holds background for even k and foreground for odd k
    let mut out: Vec<u32> = vec![0];
    for (i, c) in counts.into_iter().enumerate() {
        if c == 0 {
            continue;
        }
        if (out.len() - 1) % 2 == i % 2 {
            *out.last_mut().unwrap() += c;
        } else {
            out.push(c);
        }
    }
    out
}

/// Free-function form of [`BinaryMask::iou`].
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.iou(b)
}

/// Free-function form of [`BinaryMask::tight_box`].
pub fn tight_box(m: &BinaryMask) -> Result<BBox> {
    m.tight_box()
}
