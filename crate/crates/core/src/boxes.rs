//! 2D and 7-DoF 3D box algebra: IoU/GIoU, corner geometry, 3D→2D box
//! projection and rotated 3D non-maximum suppression.
//!
//! A [`Box3D`] is center + size + yaw about the vertical (z) axis; the
//! rotated overlap is computed exactly as a convex polygon intersection in
//! the bird's-eye view times the vertical interval overlap.

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{project_points, CameraModel};

/// Axis-aligned 2D box, `x1 ≤ x2`, `y1 ≤ y2`, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("box coordinates must be finite"));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::invalid(format!(
                "box corners out of order: [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x1 && u <= self.x2 && v >= self.y1 && v <= self.y2
    }

    fn intersection_area(a: &Box2D, b: &Box2D) -> f64 {
        let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
        let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
        w * h
    }
}

/// Intersection over union of two 2D boxes; 0 when both are degenerate.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = Box2D::intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: IoU minus the fraction of the enclosing box not covered
/// by the union. Falls in (-1, 1], equal to IoU when the enclosing box is
/// the union itself.
pub fn giou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = Box2D::intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    let enclosing = (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1));
    let iou = inter / union;
    if enclosing <= 0.0 {
        return iou;
    }
    iou - (enclosing - union) / enclosing
}

/// 7-DoF oriented 3D box: center, sizes and yaw about the z axis,
/// normalized to [-π, π). Sizes must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

/// Wraps an angle into [-π, π).
pub fn normalize_yaw(yaw: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut a = yaw % tau;
    if a >= std::f64::consts::PI {
        a -= tau;
    } else if a < -std::f64::consts::PI {
        a += tau;
    }
    a
}

impl Box3D {
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self> {
        if ![cx, cy, cz, l, w, h, yaw].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("box parameters must be finite"));
        }
        if !(l > 0.0 && w > 0.0 && h > 0.0) {
            return Err(Error::invalid(format!(
                "box sizes must be positive, got l={l} w={w} h={h}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn z_min(&self) -> f64 {
        self.cz - self.h / 2.0
    }

    pub fn z_max(&self) -> f64 {
        self.cz + self.h / 2.0
    }

    /// Bird's-eye-view footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [Point2<f64>; 4] {
        let (sin, cos) = self.yaw.sin_cos();
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        // CCW before rotation: (+,-), (+,+), (-,+), (-,-)
        let local = [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)];
        local.map(|(x, y)| {
            Point2::new(
                self.cx + x * cos - y * sin,
                self.cy + x * sin + y * cos,
            )
        })
    }
}

/// The 8 vertices of the oriented box. Corner `k` takes the -/+ half-size
/// along x, y, z according to bits 0, 1, 2 of `k` (bit set = +), with the
/// yaw rotation applied to the x/y offsets about the center.
pub fn corners_3d(b: &Box3D) -> [Point3<f64>; 8] {
    let (sin, cos) = b.yaw.sin_cos();
    let mut corners = [Point3::origin(); 8];
    for (k, corner) in corners.iter_mut().enumerate() {
        let sx = if k & 1 == 0 { -b.l / 2.0 } else { b.l / 2.0 };
        let sy = if k & 2 == 0 { -b.w / 2.0 } else { b.w / 2.0 };
        let sz = if k & 4 == 0 { -b.h / 2.0 } else { b.h / 2.0 };
        *corner = Point3::new(
            b.cx + sx * cos - sy * sin,
            b.cy + sx * sin + sy * cos,
            b.cz + sz,
        );
    }
    corners
}

/// Area of a convex polygon given in order (shoelace).
fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p.x * q.y - q.x * p.y;
    }
    acc.abs() / 2.0
}

/// Sutherland–Hodgman clip of a convex `subject` polygon against a convex
/// counter-clockwise `clipper`.
fn clip_convex(subject: &[Point2<f64>], clipper: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut output: Vec<Point2<f64>> = subject.to_vec();
    for i in 0..clipper.len() {
        if output.is_empty() {
            break;
        }
        let a = clipper[i];
        let b = clipper[(i + 1) % clipper.len()];
        let edge = (b.x - a.x, b.y - a.y);
        let side = |p: &Point2<f64>| edge.0 * (p.y - a.y) - edge.1 * (p.x - a.x);

        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let next = input[(j + 1) % input.len()];
            let d_cur = side(&cur);
            let d_next = side(&next);
            if d_cur >= 0.0 {
                output.push(cur);
            }
            if (d_cur > 0.0 && d_next < 0.0) || (d_cur < 0.0 && d_next > 0.0) {
                let t = d_cur / (d_cur - d_next);
                output.push(Point2::new(
                    cur.x + t * (next.x - cur.x),
                    cur.y + t * (next.y - cur.y),
                ));
            }
        }
    }
    output
}

/// Exact rotated 3D IoU: convex clipping of the two yaw-rotated BEV
/// rectangles times the vertical interval overlap, over the union volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let z_overlap = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
    if z_overlap <= 0.0 {
        return 0.0;
    }
    let inter_bev = polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()));
    let inter = inter_bev * z_overlap;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Closed-form IoU treating both boxes as axis-aligned (yaw ignored).
/// Used as the independent second route for checking `iou_3d` at yaw 0.
pub fn iou_3d_axis_aligned(a: &Box3D, b: &Box3D) -> f64 {
    let overlap = |c_a: f64, s_a: f64, c_b: f64, s_b: f64| {
        ((c_a + s_a / 2.0).min(c_b + s_b / 2.0) - (c_a - s_a / 2.0).max(c_b - s_b / 2.0)).max(0.0)
    };
    let inter = overlap(a.cx, a.l, b.cx, b.l)
        * overlap(a.cy, a.w, b.cy, b.w)
        * overlap(a.cz, a.h, b.cz, b.h);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Where a detection came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Predicted by the detection model.
    Model,
    /// Lifted from a 2D detection through the point cloud.
    Lifted,
    /// Assembled by 3D→2D pseudo-labeling.
    Pseudo,
}

/// A scored, classified 3D box, optionally with its 2D footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub box3d: Box3D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box2d: Option<Box2D>,
    pub class_id: usize,
    pub score: f64,
    pub source: Source,
}

impl Detection {
    pub fn new(
        box3d: Box3D,
        box2d: Option<Box2D>,
        class_id: usize,
        score: f64,
        source: Source,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            box3d,
            box2d,
            class_id,
            score,
            source,
        })
    }
}

/// Projects all 8 corners and returns their axis-aligned bounding rectangle
/// clipped to the image. `None` when any corner is behind the camera:
/// partial-frustum boxes give misleading 2D footprints.
pub fn project_box3d_to_2d(b: &Box3D, camera: &CameraModel) -> Option<Box2D> {
    let corners = corners_3d(b);
    let projections = project_points(&corners, camera);
    if projections.iter().any(|p| !p.valid) {
        return None;
    }
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for p in &projections {
        min_u = min_u.min(p.u);
        max_u = max_u.max(p.u);
        min_v = min_v.min(p.v);
        max_v = max_v.max(p.v);
    }
    let w = f64::from(camera.width());
    let h = f64::from(camera.height());
    Some(Box2D {
        x1: min_u.clamp(0.0, w),
        y1: min_v.clamp(0.0, h),
        x2: max_u.clamp(0.0, w),
        y2: max_v.clamp(0.0, h),
    })
}

/// Greedy score-descending 3D NMS.
///
/// A detection is suppressed when its rotated IoU with an already kept one
/// exceeds `iou_threshold` (strictly). Output is sorted by descending
/// score; equal scores keep their input order.
pub fn nms_3d(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    debug_assert!((0.0..=1.0).contains(&iou_threshold));
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .partial_cmp(&dets[i].score)
            .expect("detection scores are never NaN")
            .then(i.cmp(&j))
    });

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept
            .iter()
            .any(|&k| iou_3d(&dets[k].box3d, &dets[i].box3d) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}
