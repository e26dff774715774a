use crate::error::Result;
use crate::mask::{check_dims, BinaryMask, Bitmap};
use crate::records::TableTrack;

/// Foreground pixels with a 4-neighbor in the background or on the image
/// edge.
pub fn boundary(mask: &BinaryMask) -> Bitmap {
    let bm = mask.decode();
    let (w, h) = bm.dims();
    let mut out = Bitmap::new(w, h);
    for (x, y) in bm.foreground() {
        let edge = x == 0
            || y == 0
            || x + 1 == w
            || y + 1 == h
            || !bm.get(x - 1, y)
            || !bm.get(x + 1, y)
            || !bm.get(x, y - 1)
            || !bm.get(x, y + 1);
        if edge {
            out.set(x, y, true);
        }
    }
    out
}

/// Boundary tolerance in pixels for a frame: 0.8% of the diagonal, rounded
/// up.
pub fn boundary_tolerance(width: u32, height: u32) -> u32 {
    let diag = f64::from(width).hypot(f64::from(height));
    (0.008 * diag).ceil() as u32
}

/// `bm` grown by a Euclidean disk of radius `r`.
fn dilate(bm: &Bitmap, r: u32) -> Bitmap {
    let (w, h) = bm.dims();
    let r = i64::from(r);
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = Bitmap::new(w, h);
    for (x, y) in bm.foreground() {
        for &(dx, dy) in &offsets {
            let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
            if nx >= 0 && ny >= 0 && nx < i64::from(w) && ny < i64::from(h) {
                out.set(nx as u32, ny as u32, true);
            }
        }
    }
    out
}

/// Contour accuracy of one frame.
///
/// A predicted boundary pixel counts as precise if a ground-truth boundary
/// pixel lies within the tolerance, and symmetrically for recall. Two empty
/// boundaries score 1, exactly one empty boundary scores 0.
pub fn f_frame(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(gt.dims(), pred.dims())?;
    let (w, h) = gt.dims();
    let bp = boundary(pred);
    let bg = boundary(gt);
    let (np, ng) = (bp.count(), bg.count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let r = boundary_tolerance(w, h);
    let precision = bp.and(&dilate(&bg, r))?.count() as f64 / np as f64;
    let recall = bg.and(&dilate(&bp, r))?.count() as f64 / ng as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Region similarity of one frame: mask IoU, with two empty masks scoring 1
/// here since the frame is then trivially right.
pub fn j_frame(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if pred.is_empty() && gt.is_empty() {
        check_dims(gt.dims(), pred.dims())?;
        return Ok(1.0);
    }
    pred.iou(gt)
}

/// Mean J and F of a prediction over the frames of a ground-truth track; a
/// missing prediction frame scores 0 on both.
pub fn track_j_f(pred: Option<&TableTrack>, gt: &TableTrack) -> Result<(f64, f64)> {
    let n = gt.frames.len();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let (mut j, mut f) = (0.0, 0.0);
    for (t, g) in &gt.frames {
        if let Some(p) = pred.and_then(|p| p.frames.get(t)) {
            j += j_frame(p, g)?;
            f += f_frame(p, g)?;
        }
    }
    Ok((j / n as f64, f / n as f64))
}

/// Summed intersections over summed unions across both lifespans.
///
/// ```
/// use flowtrack::metrics::st_mask_iou;
/// use flowtrack::records::TableTrack;
/// use flowtrack::{BBox, BinaryMask};
///
/// let m = BinaryMask::from_box(8, 8, &BBox::from([0.0, 0.0, 4.0, 4.0]));
/// let gt = TableTrack { frames: (0..4).map(|t| (t, m.clone())).collect(), ..Default::default() };
/// let half = TableTrack { frames: (0..2).map(|t| (t, m.clone())).collect(), ..Default::default() };
/// assert_eq!(st_mask_iou(&half, &gt).unwrap(), 0.5);
/// ```
pub fn st_mask_iou(a: &TableTrack, b: &TableTrack) -> Result<f64> {
    let (mut inter, mut union) = (0u64, 0u64);
    for (t, m) in &a.frames {
        match b.frames.get(t) {
            Some(o) => {
                let i = m.intersection_area(o)?;
                inter += i;
                union += m.area() + o.area() - i;
            }
            None => union += m.area(),
        }
    }
    for (t, o) in &b.frames {
        if !a.frames.contains_key(t) {
            union += o.area();
        }
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}
