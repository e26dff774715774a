//! Flow-driven box motion.
//!
//! A tracked mask is propagated in three steps:
//!
//! 1. [`fb_consistency`] keeps the foreground pixels whose forward flow,
//!    followed by the backward flow at the landing point, returns inside the
//!    original mask. The fraction of kept pixels is the track's consistency
//!    ratio.
//! 2. [`fit_transform`] fits a per-axis linear map `x' = ax*x + bx`,
//!    `y' = ay*y + by` to the kept pixels by least squares. This is the
//!    four-parameter translation plus per-axis scale model.
//! 3. [`warp_box`] applies the map to the box corners and clips the result.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::BBox;
use crate::mask::{check_dims, BinaryMask, Bitmap};

/// Per-axis linear box motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionTransform {
    pub ax: f64,
    pub bx: f64,
    pub ay: f64,
    pub by: f64,
}

impl MotionTransform {
    pub const IDENTITY: MotionTransform = MotionTransform {
        ax: 1.0,
        bx: 0.0,
        ay: 1.0,
        by: 0.0,
    };

    pub fn translation(dx: f64, dy: f64) -> Self {
        MotionTransform {
            ax: 1.0,
            bx: dx,
            ay: 1.0,
            by: dy,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.ax * x + self.bx, self.ay * y + self.by)
    }

    /// Width and height scale factors.
    pub fn scale(&self) -> (f64, f64) {
        (self.ax, self.ay)
    }

    /// Displacement of the center of `b` under this map.
    pub fn center_displacement(&self, b: &BBox) -> (f64, f64) {
        let (cx, cy) = b.center();
        let (nx, ny) = self.apply(cx, cy);
        (nx - cx, ny - cy)
    }
}

/// Outcome of the forward-backward test on one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyResult {
    /// Foreground pixels that passed.
    pub consistent: Bitmap,
    pub consistent_count: u64,
    pub foreground_count: u64,
    /// `consistent_count / foreground_count`.
    pub ratio: f64,
}

impl ConsistencyResult {
    /// Centers of the consistent pixels, row-major.
    pub fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.consistent
            .foreground()
            .map(|(x, y)| (f64::from(x) + 0.5, f64::from(y) + 0.5))
    }
}

/// Segmentation-level forward-backward consistency.
///
/// For each foreground pixel `p`, `q = center(p) + fwd(p)`. The pixel is
/// consistent when `q` stays in the image and the pixel containing
/// `r = q + bwd(q)` (bilinear `bwd`) is foreground in `mask`. Landing
/// points that leave the image count as inconsistent.
pub fn fb_consistency(
    mask: &BinaryMask,
    fwd: &FlowField,
    bwd: &FlowField,
) -> Result<ConsistencyResult> {
    check_dims(mask.dims(), fwd.dims())?;
    check_dims(mask.dims(), bwd.dims())?;
    let bm = mask.decode();
    let (w, h) = (f64::from(mask.width()), f64::from(mask.height()));
    let mut consistent = Bitmap::new(mask.width(), mask.height());
    let (mut fg, mut ok) = (0u64, 0u64);
    for (x, y) in bm.foreground() {
        fg += 1;
        let (dx, dy) = fwd.at(x, y);
        let qx = f64::from(x) + 0.5 + dx;
        let qy = f64::from(y) + 0.5 + dy;
        let Ok((bx, by)) = bwd.sample(qx, qy) else {
            continue;
        };
        let (rx, ry) = (qx + bx, qy + by);
        if rx >= 0.0 && rx < w && ry >= 0.0 && ry < h && bm.get(rx as u32, ry as u32) {
            consistent.set(x, y, true);
            ok += 1;
        }
    }
    if fg == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(ConsistencyResult {
        consistent,
        consistent_count: ok,
        foreground_count: fg,
        ratio: ok as f64 / fg as f64,
    })
}

/// Least-squares per-axis fit of `target = scale * coord + offset` where
/// `target = coord + displacement`.
///
/// An axis whose coordinates are all equal has no observable scale and gets
/// scale 1 with the mean displacement as offset. The same fallback applies
/// when the regression slope is not positive, since a box may never flip.
pub fn fit_transform(points: &[(f64, f64)], displacements: &[(f64, f64)]) -> Result<MotionTransform> {
    assert_eq!(
        points.len(),
        displacements.len(),
        "one displacement per point"
    );
    if points.is_empty() {
        return Err(Error::NoSupport);
    }
    let (ax, bx) = fit_axis(points.iter().zip(displacements).map(|(p, d)| (p.0, d.0)));
    let (ay, by) = fit_axis(points.iter().zip(displacements).map(|(p, d)| (p.1, d.1)));
    Ok(MotionTransform { ax, bx, ay, by })
}

fn fit_axis(samples: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let n = samples.clone().count() as f64;
    let (sum_c, sum_d) = samples
        .clone()
        .fold((0.0, 0.0), |(sc, sd), (c, d)| (sc + c, sd + d));
    let (mean_c, mean_d) = (sum_c / n, sum_d / n);
    // regress displacement on centered coordinate; target slope is 1 + that
    let (sxx, sxd) = samples.fold((0.0, 0.0), |(sxx, sxd), (c, d)| {
        let dc = c - mean_c;
        (sxx + dc * dc, sxd + dc * (d - mean_d))
    });
    let translation = (1.0, mean_d);
    if sxx == 0.0 {
        return translation;
    }
    let slope = 1.0 + sxd / sxx;
    if !(slope > 0.0) || !slope.is_finite() {
        return translation;
    }
    // target = slope * c + offset passes through (mean_c, mean_c + mean_d)
    (slope, mean_d - (slope - 1.0) * mean_c)
}

/// Fits the transform to the consistent pixels of `result`, using the
/// forward flow at each pixel as its displacement.
pub fn fit_from_consistency(result: &ConsistencyResult, fwd: &FlowField) -> Result<MotionTransform> {
    let mut points = Vec::with_capacity(result.consistent_count as usize);
    let mut disp = Vec::with_capacity(result.consistent_count as usize);
    for (x, y) in result.consistent.foreground() {
        points.push((f64::from(x) + 0.5, f64::from(y) + 0.5));
        disp.push(fwd.at(x, y));
    }
    fit_transform(&points, &disp)
}

/// Maps the corners of `b` through `t` and clips to the image. A result
/// without area reports [`Error::LeftFrame`].
pub fn warp_box(b: &BBox, t: &MotionTransform, width: u32, height: u32) -> Result<BBox> {
    let (x0, y0) = t.apply(b.x0, b.y0);
    let (x1, y1) = t.apply(b.x1, b.y1);
    let warped = BBox::new(x0, y0, x1, y1)?.clip(width, height);
    if warped.area() <= 0.0 {
        return Err(Error::LeftFrame);
    }
    Ok(warped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_mask(w: u32, h: u32, x0: u32, y0: u32, size: u32) -> BinaryMask {
        BinaryMask::from_box(
            w,
            h,
            &BBox {
                x0: f64::from(x0),
                y0: f64::from(y0),
                x1: f64::from(x0 + size),
                y1: f64::from(y0 + size),
            },
        )
    }

    /// Brute-force oracle: count mask pixels that stay inside the image
    /// under an integer translation and land back on themselves.
    fn translated_ratio(mask: &BinaryMask, dx: i64, dy: i64) -> f64 {
        let bm = mask.decode();
        let (w, h) = (i64::from(mask.width()), i64::from(mask.height()));
        let (mut ok, mut n) = (0, 0);
        for (x, y) in bm.foreground() {
            n += 1;
            let (qx, qy) = (i64::from(x) + dx, i64::from(y) + dy);
            if qx >= 0 && qx < w && qy >= 0 && qy < h {
                ok += 1;
            }
        }
        ok as f64 / n as f64
    }

    #[test]
    fn exact_inverse_flows_are_consistent() {
        let m = square_mask(64, 64, 20, 20, 10);
        let fwd = FlowField::constant(64, 64, 5.0, 0.0);
        let bwd = FlowField::constant(64, 64, -5.0, 0.0);
        let r = fb_consistency(&m, &fwd, &bwd).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert_eq!(r.consistent_count, 100);
    }

    #[test]
    fn flow_leaving_the_image_is_inconsistent() {
        let m = square_mask(64, 64, 20, 20, 10);
        let fwd = FlowField::constant(64, 64, 100.0, 0.0);
        let bwd = FlowField::constant(64, 64, -100.0, 0.0);
        assert_eq!(fb_consistency(&m, &fwd, &bwd).unwrap().ratio, 0.0);
    }

    #[test]
    fn right_border_exit_matches_pixel_count() {
        // square touching the right border: columns 56..64
        let m = square_mask(64, 64, 56, 10, 8);
        let fwd = FlowField::constant(64, 64, 5.0, 0.0);
        let bwd = FlowField::constant(64, 64, -5.0, 0.0);
        let r = fb_consistency(&m, &fwd, &bwd).unwrap();
        let expected = translated_ratio(&m, 5, 0);
        assert_eq!(expected, 3.0 / 8.0);
        assert_eq!(r.ratio, expected);
    }

    #[test]
    fn return_point_must_hit_the_mask() {
        let m = square_mask(32, 32, 8, 8, 6);
        let fwd = FlowField::constant(32, 32, 3.0, 0.0);
        // backward flow overshoots by a full mask width
        let bwd = FlowField::constant(32, 32, -9.0, 0.0);
        assert_eq!(fb_consistency(&m, &fwd, &bwd).unwrap().ratio, 0.0);
    }

    #[test]
    fn consistency_rejects_bad_input() {
        let fwd = FlowField::zeros(8, 8);
        assert!(matches!(
            fb_consistency(&BinaryMask::empty(8, 8), &fwd, &fwd),
            Err(Error::EmptyMask)
        ));
        let m = square_mask(9, 8, 1, 1, 2);
        assert!(matches!(
            fb_consistency(&m, &fwd, &fwd),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn grid_points() -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for r in 10..20 {
            for c in 30..45 {
                pts.push((c as f64 + 0.5, r as f64 + 0.5));
            }
        }
        pts
    }

    #[test]
    fn pure_translation() {
        let pts = grid_points();
        let d = vec![(5.0, 3.0); pts.len()];
        let t = fit_transform(&pts, &d).unwrap();
        assert_eq!(t, MotionTransform::translation(5.0, 3.0));
        let z = fit_transform(&pts, &vec![(0.0, 0.0); pts.len()]).unwrap();
        assert_eq!(z, MotionTransform::IDENTITY);
    }

    #[test]
    fn scaling_about_the_centroid() {
        let pts = grid_points();
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let d: Vec<_> = pts
            .iter()
            .map(|p| (0.1 * (p.0 - cx), 0.1 * (p.1 - cy)))
            .collect();
        let t = fit_transform(&pts, &d).unwrap();
        assert!((t.ax - 1.1).abs() < 1e-9);
        assert!((t.ay - 1.1).abs() < 1e-9);
        assert!((t.bx + 0.1 * cx).abs() < 1e-9);
        assert!((t.by + 0.1 * cy).abs() < 1e-9);

        // warping agrees with direct evaluation of the closed form
        let b = BBox::new(30.0, 10.0, 45.0, 20.0).unwrap();
        let w = warp_box(&b, &t, 200, 200).unwrap();
        let f = |v: f64, c: f64| 1.1 * v - 0.1 * c;
        assert!((w.x0 - f(30.0, cx)).abs() < 1e-9);
        assert!((w.x1 - f(45.0, cx)).abs() < 1e-9);
        assert!((w.y0 - f(10.0, cy)).abs() < 1e-9);
        assert!((w.y1 - f(20.0, cy)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_axis_falls_back_to_translation() {
        let pts: Vec<_> = (0..5).map(|r| (7.5, r as f64 + 0.5)).collect();
        let d: Vec<_> = pts.iter().map(|p| (2.0 + p.1, 0.5 * p.1)).collect();
        let t = fit_transform(&pts, &d).unwrap();
        assert_eq!(t.ax, 1.0);
        assert!((t.bx - (2.0 + 2.5)).abs() < 1e-12);
        assert!((t.ay - 1.5).abs() < 1e-12);
    }

    #[test]
    fn flipping_fit_falls_back_to_translation() {
        let pts: Vec<_> = (0..6).map(|c| (c as f64 + 0.5, 1.5)).collect();
        // target = -x: slope would be negative
        let d: Vec<_> = pts.iter().map(|p| (-2.0 * p.0, 0.0)).collect();
        let t = fit_transform(&pts, &d).unwrap();
        assert_eq!(t.ax, 1.0);
        assert!(t.ay > 0.0);
    }

    #[test]
    fn no_points_no_support() {
        assert!(matches!(fit_transform(&[], &[]), Err(Error::NoSupport)));
    }

    #[test]
    fn warp_cases() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(warp_box(&b, &MotionTransform::IDENTITY, 100, 100).unwrap(), b);
        assert_eq!(
            warp_box(&b, &MotionTransform::translation(5.0, 3.0), 100, 100).unwrap(),
            BBox::new(5.0, 3.0, 15.0, 13.0).unwrap()
        );
        assert_eq!(
            warp_box(&b, &MotionTransform::translation(95.0, 0.0), 100, 100).unwrap(),
            BBox::new(95.0, 0.0, 100.0, 10.0).unwrap()
        );
        assert!(matches!(
            warp_box(&b, &MotionTransform::translation(120.0, 0.0), 100, 100),
            Err(Error::LeftFrame)
        ));
    }

    #[test]
    fn center_displacement_recovers_dx_dy() {
        let t = MotionTransform { ax: 1.2, bx: -4.0, ay: 0.9, by: 2.0 };
        let b = BBox::new(10.0, 10.0, 20.0, 30.0).unwrap();
        let (dx, dy) = t.center_displacement(&b);
        assert!((dx - (1.2 * 15.0 - 4.0 - 15.0)).abs() < 1e-12);
        assert!((dy - (0.9 * 20.0 + 2.0 - 20.0)).abs() < 1e-12);
        assert_eq!(t.scale(), (1.2, 0.9));
    }

    proptest! {
        #[test]
        fn fit_is_exact_for_linear_motion(
            ax in 0.5f64..2.0, bx in -20.0f64..20.0,
            ay in 0.5f64..2.0, by in -20.0f64..20.0,
        ) {
            let pts = grid_points();
            let d: Vec<_> = pts.iter().map(|p| (ax * p.0 + bx - p.0, ay * p.1 + by - p.1)).collect();
            let t = fit_transform(&pts, &d).unwrap();
            prop_assert!((t.ax - ax).abs() < 1e-9 && (t.bx - bx).abs() < 1e-9);
            prop_assert!((t.ay - ay).abs() < 1e-9 && (t.by - by).abs() < 1e-9);
        }

        #[test]
        fn fit_is_translation_equivariant(
            ax in 0.5f64..2.0, bx in -20.0f64..20.0,
            ay in 0.5f64..2.0, by in -20.0f64..20.0,
            u in -50.0f64..50.0, v in -50.0f64..50.0,
        ) {
            let pts = grid_points();
            let d: Vec<_> = pts.iter().map(|p| (ax * p.0 + bx - p.0, ay * p.1 + by - p.1)).collect();
            let t = fit_transform(&pts, &d).unwrap();
            // same motion observed in coordinates shifted by (u, v)
            let shifted: Vec<_> = pts.iter().map(|p| (p.0 + u, p.1 + v)).collect();
            let t2 = fit_transform(&shifted, &d).unwrap();
            prop_assert!((t.ax - t2.ax).abs() < 1e-9 && (t.ay - t2.ay).abs() < 1e-9);
        }

        #[test]
        fn warp_keeps_boxes_valid(
            ax in 0.01f64..10.0, bx in -200.0f64..200.0,
            ay in 0.01f64..10.0, by in -200.0f64..200.0,
            x0 in 0.0f64..100.0, w in 0.0f64..50.0,
            y0 in 0.0f64..100.0, h in 0.0f64..50.0,
        ) {
            let b = BBox::new(x0, y0, x0 + w, y0 + h).unwrap();
            let t = MotionTransform { ax, bx, ay, by };
            if let Ok(out) = warp_box(&b, &t, 128, 128) {
                prop_assert!(out.is_valid());
                prop_assert!(out.x0 >= 0.0 && out.x1 <= 128.0 && out.y0 >= 0.0 && out.y1 <= 128.0);
            }
        }
    }
}
