//! 2D→3D knowledge propagation: turn per-view 2D detections plus a point
//! cloud into 3D boxes, and fuse the lifted boxes with model predictions.
//!
//! The lifting chain per 2D box is: collect the cloud points whose
//! projection falls inside the box, keep one density cluster to shed
//! outliers, then fit an oriented 3D box to the survivors. Per-box
//! failures are reported, never fatal.

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::boxes::{nms_3d, normalize_yaw, Box2D, Box3D, Detection, Source};
use crate::error::{Error, Result};
use crate::geom::{project_point, CameraModel};

/// World-frame point cloud with an optional per-point validity mask.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub valid: Option<Vec<bool>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            valid: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn is_valid(&self, idx: usize) -> bool {
        self.valid.as_ref().map_or(true, |mask| mask[idx])
    }
}

/// Which density cluster survives outlier removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepRule {
    /// The cluster with the most members.
    Largest,
    /// The cluster whose centroid is closest to the anchor (camera center).
    Nearest,
}

/// Density clustering parameters (eps / min-points semantics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Neighborhood radius in meters.
    pub eps: f64,
    /// Minimum neighborhood size (the point itself counts) for a core point.
    pub min_points: usize,
    pub keep: KeepRule,
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::invalid("cluster eps must be positive"));
        }
        if self.min_points == 0 {
            return Err(Error::invalid("cluster min_points must be at least 1"));
        }
        Ok(())
    }
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 0.3,
            min_points: 5,
            keep: KeepRule::Largest,
        }
    }
}

/// Indices of cloud points whose projection is valid and falls inside the
/// closed 2D box.
pub fn points_in_box2d(cloud: &PointCloud, rect: &Box2D, camera: &CameraModel) -> Vec<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            if !cloud.is_valid(*i) {
                return false;
            }
            let proj = project_point(p, camera);
            proj.valid && rect.contains(proj.u, proj.v)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Density-based clustering over `points`; returns the indices of the
/// retained cluster per `params.keep`, empty when no cluster reaches
/// `min_points`. `anchor` is the reference point for [`KeepRule::Nearest`]
/// (the world origin when absent).
pub fn cluster_points(
    points: &[Point3<f64>],
    params: &ClusterParams,
    anchor: Option<Point3<f64>>,
) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let eps2 = params.eps * params.eps;
    let n = points.len();

    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| (points[i] - points[j]).norm_squared() <= eps2)
                .collect()
        })
        .collect();

    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut label = vec![UNVISITED; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();

    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        if neighbors[i].len() < params.min_points {
            label[i] = NOISE;
            continue;
        }
        let cluster_id = clusters.len();
        let mut members = vec![i];
        label[i] = cluster_id;
        let mut frontier = neighbors[i].clone();
        let mut cursor = 0;
        while cursor < frontier.len() {
            let j = frontier[cursor];
            cursor += 1;
            if label[j] == NOISE {
                // Border point reachable from a core point.
                label[j] = cluster_id;
                members.push(j);
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cluster_id;
            members.push(j);
            if neighbors[j].len() >= params.min_points {
                frontier.extend_from_slice(&neighbors[j]);
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }

    if clusters.is_empty() {
        return Vec::new();
    }
    let chosen = match params.keep {
        KeepRule::Largest => clusters
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap(),
        KeepRule::Nearest => {
            let anchor = anchor.unwrap_or_else(Point3::origin);
            let dist = |members: &[usize]| {
                let mut centroid = Point3::origin();
                for &m in members {
                    centroid += points[m].coords;
                }
                (centroid / members.len() as f64 - anchor).norm()
            };
            clusters
                .iter()
                .enumerate()
                .min_by(|(ia, a), (ib, b)| {
                    dist(a)
                        .partial_cmp(&dist(b))
                        .expect("finite centroid distances")
                        .then(ia.cmp(ib))
                })
                .map(|(i, _)| i)
                .unwrap()
        }
    };
    clusters.swap_remove(chosen)
}

/// How the fitted box's yaw is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawMode {
    /// Axis-aligned min/max box, yaw 0.
    Zero,
    /// Minimum-area rotated rectangle of the BEV hull.
    BevMinArea,
}

/// Floor applied to every fitted dimension so planar clusters cannot
/// produce zero-volume boxes.
pub const MIN_BOX_SIZE: f64 = 0.02;

/// Andrew monotone-chain convex hull, counter-clockwise, strict turns only.
/// Returns fewer than 3 points for degenerate inputs.
fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts: Vec<Point2<f64>> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).expect("finite coords"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let build = |iter: &mut dyn Iterator<Item = &Point2<f64>>| {
        let mut chain: Vec<Point2<f64>> = Vec::new();
        for p in iter {
            while chain.len() >= 2
                && cross(&chain[chain.len() - 2], &chain[chain.len() - 1], p) <= 0.0
            {
                chain.pop();
            }
            chain.push(*p);
        }
        chain
    };
    let mut lower = build(&mut pts.iter());
    let mut upper = build(&mut pts.iter().rev());
    lower.pop();
    upper.pop();
    lower.append(&mut upper);
    lower
}

/// Fits an oriented 3D box to a point set.
///
/// `Zero` mode needs at least one point; `BevMinArea` needs three
/// non-collinear points in the bird's-eye view and minimizes footprint
/// area over the hull edge directions. Every dimension is floored at
/// `min_size` afterwards, keeping the center fixed.
pub fn fit_box3d(points: &[Point3<f64>], yaw_mode: YawMode, min_size: f64) -> Result<Box3D> {
    if points.is_empty() {
        return Err(Error::TooFewPoints { got: 0, need: 1 });
    }
    let z_min = points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_max = points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);

    let (cx, cy, l, w, yaw) = match yaw_mode {
        YawMode::Zero => {
            let x_min = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let x_max = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let y_min = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let y_max = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            (
                (x_min + x_max) / 2.0,
                (y_min + y_max) / 2.0,
                x_max - x_min,
                y_max - y_min,
                0.0,
            )
        }
        YawMode::BevMinArea => {
            let bev: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p.x, p.y)).collect();
            let hull = convex_hull(&bev);
            if hull.len() < 3 {
                return Err(Error::TooFewPoints {
                    got: hull.len(),
                    need: 3,
                });
            }
            // The minimum-area enclosing rectangle is flush with a hull edge.
            let mut best: Option<(f64, f64, f64, f64, f64, f64)> = None;
            for i in 0..hull.len() {
                let a = hull[i];
                let b = hull[(i + 1) % hull.len()];
                let angle = (b.y - a.y).atan2(b.x - a.x);
                let (sin, cos) = angle.sin_cos();
                let mut u_min = f64::INFINITY;
                let mut u_max = f64::NEG_INFINITY;
                let mut v_min = f64::INFINITY;
                let mut v_max = f64::NEG_INFINITY;
                for p in &hull {
                    let u = p.x * cos + p.y * sin;
                    let v = -p.x * sin + p.y * cos;
                    u_min = u_min.min(u);
                    u_max = u_max.max(u);
                    v_min = v_min.min(v);
                    v_max = v_max.max(v);
                }
                let area = (u_max - u_min) * (v_max - v_min);
                if best.as_ref().map_or(true, |(b, ..)| area < *b) {
                    best = Some((area, angle, u_min, u_max, v_min, v_max));
                }
            }
            let (_, angle, u_min, u_max, v_min, v_max) = best.unwrap();
            let (sin, cos) = angle.sin_cos();
            let uc = (u_min + u_max) / 2.0;
            let vc = (v_min + v_max) / 2.0;
            // Rectangles have π symmetry; fold the yaw into [-π/2, π/2).
            let mut yaw = normalize_yaw(angle);
            if yaw >= std::f64::consts::FRAC_PI_2 {
                yaw -= std::f64::consts::PI;
            } else if yaw < -std::f64::consts::FRAC_PI_2 {
                yaw += std::f64::consts::PI;
            }
            (
                uc * cos - vc * sin,
                uc * sin + vc * cos,
                u_max - u_min,
                v_max - v_min,
                yaw,
            )
        }
    };

    Box3D::new(
        cx,
        cy,
        (z_min + z_max) / 2.0,
        l.max(min_size),
        w.max(min_size),
        (z_max - z_min).max(min_size),
        yaw,
    )
}

/// One 2D detection from an external open-vocabulary detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Det2D {
    pub box2d: Box2D,
    pub class_id: usize,
    pub score: f64,
}

/// Parameters of the full lifting chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftParams {
    pub cluster: ClusterParams,
    pub yaw_mode: YawMode,
    /// Floor for fitted box dimensions, meters.
    pub min_size: f64,
}

impl Default for LiftParams {
    fn default() -> Self {
        Self {
            cluster: ClusterParams::default(),
            yaw_mode: YawMode::Zero,
            min_size: MIN_BOX_SIZE,
        }
    }
}

/// Why a 2D detection produced no lifted box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// No projected point fell inside the 2D box.
    Empty,
    /// No density cluster reached `min_points`.
    ClusterTooSmall,
    /// The retained cluster could not support the box fit.
    FitFailed,
}

/// Sidecar record for a skipped 2D detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub view: usize,
    pub det: usize,
    pub reason: SkipReason,
}

/// Lifts per-view 2D detections into 3D boxes through the point cloud.
///
/// Views are processed in order and their outputs concatenated; duplicate
/// boxes from multiple views are left for fusion-time NMS. Scores are
/// copied unchanged — thresholding is the caller's business.
pub fn lift_detections(
    cloud: &PointCloud,
    cameras: &[CameraModel],
    dets2d: &[Vec<Det2D>],
    params: &LiftParams,
) -> (Vec<Detection>, Vec<SkipRecord>) {
    debug_assert_eq!(cameras.len(), dets2d.len());
    let mut lifted = Vec::new();
    let mut skips = Vec::new();

    for (view, (camera, dets)) in cameras.iter().zip(dets2d).enumerate() {
        let anchor = camera.pose.camera_center();
        for (det_idx, det) in dets.iter().enumerate() {
            let indices = points_in_box2d(cloud, &det.box2d, camera);
            if indices.is_empty() {
                skips.push(SkipRecord {
                    view,
                    det: det_idx,
                    reason: SkipReason::Empty,
                });
                continue;
            }
            let subset: Vec<Point3<f64>> = indices.iter().map(|&i| cloud.points[i]).collect();
            let kept = cluster_points(&subset, &params.cluster, Some(anchor));
            if kept.is_empty() {
                skips.push(SkipRecord {
                    view,
                    det: det_idx,
                    reason: SkipReason::ClusterTooSmall,
                });
                continue;
            }
            let cluster: Vec<Point3<f64>> = kept.iter().map(|&i| subset[i]).collect();
            match fit_box3d(&cluster, params.yaw_mode, params.min_size) {
                Ok(box3d) => lifted.push(
                    Detection::new(
                        box3d,
                        Some(det.box2d),
                        det.class_id,
                        det.score,
                        Source::Lifted,
                    )
                    .expect("2D detection scores are validated on load"),
                ),
                Err(_) => skips.push(SkipRecord {
                    view,
                    det: det_idx,
                    reason: SkipReason::FitFailed,
                }),
            }
        }
    }
    (lifted, skips)
}

/// Inference-time fusion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// Lifted-box scores are divided by this before pooling.
    pub score_divisor: f64,
    /// Minimum score kept after NMS.
    pub confidence_threshold: f64,
    /// Per-class NMS overlap threshold.
    pub nms_iou: f64,
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.score_divisor > 1.0) {
            return Err(Error::invalid("score_divisor must be greater than 1"));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::invalid("confidence_threshold must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::invalid("nms_iou must be in [0, 1]"));
        }
        Ok(())
    }
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            score_divisor: 2.0,
            confidence_threshold: 0.4,
            nms_iou: 0.25,
        }
    }
}

/// Pools model predictions with lifted boxes (their scores divided by
/// `score_divisor`), runs per-class 3D NMS over the pool, then applies the
/// confidence threshold. Output is sorted by descending score; ties keep
/// per-class order, model detections ahead of lifted ones within a class.
pub fn fuse_inference(
    model_dets: &[Detection],
    lifted_dets: &[Detection],
    params: &FusionParams,
) -> Vec<Detection> {
    let mut pool: Vec<Detection> = model_dets.to_vec();
    pool.extend(lifted_dets.iter().map(|d| {
        let mut d = d.clone();
        d.score /= params.score_divisor;
        d
    }));

    let mut class_ids: Vec<usize> = pool.iter().map(|d| d.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();

    let mut fused = Vec::new();
    for class_id in class_ids {
        let group: Vec<Detection> = pool
            .iter()
            .filter(|d| d.class_id == class_id)
            .cloned()
            .collect();
        fused.extend(
            nms_3d(&group, params.nms_iou)
                .into_iter()
                .filter(|d| d.score >= params.confidence_threshold),
        );
    }
    fused.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("detection scores are never NaN")
    });
    fused
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::iou_3d;
    use crate::geom::{estimate_intrinsics, Pose};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_camera() -> CameraModel {
        CameraModel::new(
            estimate_intrinsics(480, 640).unwrap(),
            Pose::identity(),
            (480, 640),
        )
        .unwrap()
    }

    #[test]
    fn points_in_box_cases() {
        let camera = identity_camera();
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 2.0),  // projects to (320, 240)
            Point3::new(0.0, 0.0, -1.0), // behind the camera
        ]);
        let hit = Box2D::new(300.0, 220.0, 340.0, 260.0).unwrap();
        assert_eq!(points_in_box2d(&cloud, &hit, &camera), vec![0]);

        let miss = Box2D::new(0.0, 0.0, 100.0, 100.0).unwrap();
        assert!(points_in_box2d(&cloud, &miss, &camera).is_empty());

        let everything = Box2D::new(0.0, 0.0, 640.0, 480.0).unwrap();
        assert_eq!(points_in_box2d(&cloud, &everything, &camera), vec![0]);
    }

    #[test]
    fn points_in_box_honors_validity_mask() {
        let camera = identity_camera();
        let mut cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 2.0),
            Point3::new(0.01, 0.0, 2.0),
        ]);
        cloud.valid = Some(vec![false, true]);
        let rect = Box2D::new(0.0, 0.0, 640.0, 480.0).unwrap();
        assert_eq!(points_in_box2d(&cloud, &rect, &camera), vec![1]);
    }

    fn ball(
        center: Point3<f64>,
        radius: f64,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Point3<f64>> {
        (0..count)
            .map(|_| {
                center
                    + Vector3::new(
                        rng.random_range(-radius..radius),
                        rng.random_range(-radius..radius),
                        rng.random_range(-radius..radius),
                    )
            })
            .collect()
    }

    #[test]
    fn clustering_keeps_dense_ball_and_drops_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = ball(Point3::new(0.0, 0.0, 0.0), 0.1, 50, &mut rng);
        pts.extend(ball(Point3::new(10.0, 0.0, 0.0), 0.1, 5, &mut rng));
        let params = ClusterParams {
            eps: 0.5,
            min_points: 5,
            keep: KeepRule::Largest,
        };
        let kept = cluster_points(&pts, &params, None);
        assert_eq!(kept, (0..50).collect::<Vec<_>>());

        // Exhaustive neighborhood check: every retained point has at least
        // min_points neighbors within eps inside the retained set.
        for &i in &kept {
            let n = kept
                .iter()
                .filter(|&&j| (pts[i] - pts[j]).norm() <= params.eps)
                .count();
            assert!(n >= params.min_points);
        }
    }

    #[test]
    fn clustering_identical_points_and_empty_input() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0); 10];
        let params = ClusterParams::default();
        assert_eq!(
            cluster_points(&pts, &params, None),
            (0..10).collect::<Vec<_>>()
        );
        assert!(cluster_points(&[], &params, None).is_empty());
        // Too few points for a core: nothing survives.
        let few = vec![Point3::new(0.0, 0.0, 0.0); 3];
        assert!(cluster_points(&few, &params, None).is_empty());
    }

    #[test]
    fn clustering_nearest_prefers_anchor_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let far = ball(Point3::new(9.0, 0.0, 0.0), 0.1, 30, &mut rng);
        let near = ball(Point3::new(1.0, 0.0, 0.0), 0.1, 10, &mut rng);
        let mut pts = far;
        pts.extend(near);
        let params = ClusterParams {
            eps: 0.5,
            min_points: 5,
            keep: KeepRule::Nearest,
        };
        let kept = cluster_points(&pts, &params, Some(Point3::origin()));
        // The smaller but closer ball wins under the nearest rule.
        assert_eq!(kept, (30..40).collect::<Vec<_>>());
    }

    #[test]
    fn fit_axis_aligned_cube() {
        let cube = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let corners = crate::boxes::corners_3d(&cube).to_vec();
        let fitted = fit_box3d(&corners, YawMode::Zero, MIN_BOX_SIZE).unwrap();
        assert_eq!(fitted, cube);
    }

    #[test]
    fn fit_min_area_recovers_rotation() {
        let yaw = 30f64.to_radians();
        let cube = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, yaw).unwrap();
        let corners = crate::boxes::corners_3d(&cube).to_vec();
        let fitted = fit_box3d(&corners, YawMode::BevMinArea, MIN_BOX_SIZE).unwrap();
        assert!((fitted.l - 1.0).abs() < 1e-9);
        assert!((fitted.w - 1.0).abs() < 1e-9);
        // A square footprint is invariant mod π/2.
        let delta = (fitted.yaw - yaw).rem_euclid(std::f64::consts::FRAC_PI_2);
        let dist = delta.min(std::f64::consts::FRAC_PI_2 - delta);
        assert!(dist < 1e-9, "yaw {} vs {}", fitted.yaw, yaw);

        // Min-area rectangle beats (or matches) a dense angle sweep.
        let hull_area = fitted.l * fitted.w;
        for k in 0..1000 {
            let angle = k as f64 / 1000.0 * std::f64::consts::FRAC_PI_2;
            let (sin, cos) = angle.sin_cos();
            let (mut u0, mut u1, mut v0, mut v1) = (
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
            );
            for p in &corners {
                let u = p.x * cos + p.y * sin;
                let v = -p.x * sin + p.y * cos;
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
            assert!(hull_area <= (u1 - u0) * (v1 - v0) + 1e-9);
        }
    }

    #[test]
    fn fit_single_point_gets_floored_box() {
        let fitted =
            fit_box3d(&[Point3::new(1.0, 2.0, 3.0)], YawMode::Zero, MIN_BOX_SIZE).unwrap();
        assert_eq!((fitted.cx, fitted.cy, fitted.cz), (1.0, 2.0, 3.0));
        assert_eq!((fitted.l, fitted.w, fitted.h), (0.02, 0.02, 0.02));

        assert!(matches!(
            fit_box3d(&[], YawMode::Zero, MIN_BOX_SIZE),
            Err(Error::TooFewPoints { .. })
        ));
        // Collinear BEV points cannot support a rotated fit.
        let line: Vec<Point3<f64>> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            fit_box3d(&line, YawMode::BevMinArea, MIN_BOX_SIZE),
            Err(Error::TooFewPoints { .. })
        ));
    }

    fn surface_points(b: &Box3D, count: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
        let areas = [
            b.w * b.h,
            b.w * b.h,
            b.l * b.h,
            b.l * b.h,
            b.l * b.w,
            b.l * b.w,
        ];
        let total: f64 = areas.iter().sum();
        let (sin, cos) = b.yaw.sin_cos();
        (0..count)
            .map(|_| {
                let mut pick = rng.random_range(0.0..total);
                let mut face = 0;
                for (f, a) in areas.iter().enumerate() {
                    if pick < *a {
                        face = f;
                        break;
                    }
                    pick -= a;
                }
                let (x, y, z) = match face {
                    0 | 1 => (
                        if face == 0 { -b.l / 2.0 } else { b.l / 2.0 },
                        rng.random_range(-b.w / 2.0..b.w / 2.0),
                        rng.random_range(-b.h / 2.0..b.h / 2.0),
                    ),
                    2 | 3 => (
                        rng.random_range(-b.l / 2.0..b.l / 2.0),
                        if face == 2 { -b.w / 2.0 } else { b.w / 2.0 },
                        rng.random_range(-b.h / 2.0..b.h / 2.0),
                    ),
                    _ => (
                        rng.random_range(-b.l / 2.0..b.l / 2.0),
                        rng.random_range(-b.w / 2.0..b.w / 2.0),
                        if face == 4 { -b.h / 2.0 } else { b.h / 2.0 },
                    ),
                };
                Point3::new(b.cx + x * cos - y * sin, b.cy + x * sin + y * cos, b.cz + z)
            })
            .collect()
    }

    fn scene_camera() -> CameraModel {
        CameraModel::new(
            estimate_intrinsics(480, 640).unwrap(),
            Pose::look_at(
                Point3::new(10.0, 0.0, 1.0),
                Point3::new(0.0, 0.0, 0.5),
                Vector3::z(),
            )
            .unwrap(),
            (480, 640),
        )
        .unwrap()
    }

    #[test]
    fn lift_recovers_sampled_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gt = Box3D::new(0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 0.0).unwrap();
        let camera = scene_camera();
        let cloud = PointCloud::new(surface_points(&gt, 500, &mut rng));
        let rect = crate::boxes::project_box3d_to_2d(&gt, &camera).unwrap();
        let dets = vec![vec![Det2D {
            box2d: rect,
            class_id: 2,
            score: 0.9,
        }]];
        let (lifted, skips) = lift_detections(&cloud, &[camera], &dets, &LiftParams::default());
        assert!(skips.is_empty());
        assert_eq!(lifted.len(), 1);
        assert_eq!(lifted[0].class_id, 2);
        assert_eq!(lifted[0].score, 0.9);
        assert_eq!(lifted[0].source, Source::Lifted);
        assert!(iou_3d(&lifted[0].box3d, &gt) >= 0.7);
    }

    #[test]
    fn lift_skips_empty_boxes_and_concatenates_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let gt = Box3D::new(0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 0.0).unwrap();
        let camera = scene_camera();
        let cloud = PointCloud::new(surface_points(&gt, 400, &mut rng));
        let rect = crate::boxes::project_box3d_to_2d(&gt, &camera).unwrap();
        let empty_rect = Box2D::new(0.0, 0.0, 5.0, 5.0).unwrap();

        let det = |b: Box2D| Det2D {
            box2d: b,
            class_id: 0,
            score: 1.0,
        };
        let dets = vec![
            vec![det(rect), det(empty_rect)],
            vec![det(rect)], // second view of the same object
        ];
        let cameras = vec![camera.clone(), camera];
        let (lifted, skips) = lift_detections(&cloud, &cameras, &dets, &LiftParams::default());
        assert_eq!(lifted.len(), 2); // deduplication is fusion's business
        assert_eq!(
            skips,
            vec![SkipRecord {
                view: 0,
                det: 1,
                reason: SkipReason::Empty
            }]
        );
    }

    #[test]
    fn lift_ignores_outliers_outside_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let gt = Box3D::new(0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 0.0).unwrap();
        let camera = scene_camera();
        let base = surface_points(&gt, 400, &mut rng);
        let rect = crate::boxes::project_box3d_to_2d(&gt, &camera).unwrap();
        let dets = vec![vec![Det2D {
            box2d: rect,
            class_id: 0,
            score: 1.0,
        }]];

        let (lifted_clean, _) = lift_detections(
            &PointCloud::new(base.clone()),
            std::slice::from_ref(&camera),
            &dets,
            &LiftParams::default(),
        );
        // Points that project outside every 2D box change nothing.
        let mut noisy = base;
        noisy.push(Point3::new(-30.0, 25.0, 4.0));
        noisy.push(Point3::new(12.0, -40.0, -3.0));
        let (lifted_noisy, _) = lift_detections(
            &PointCloud::new(noisy),
            std::slice::from_ref(&camera),
            &dets,
            &LiftParams::default(),
        );
        assert_eq!(lifted_clean, lifted_noisy);
    }

    fn det3(b: Box3D, class_id: usize, score: f64, source: Source) -> Detection {
        Detection::new(b, None, class_id, score, source).unwrap()
    }

    #[test]
    fn fusion_divides_scores_and_thresholds() {
        let cube = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let lifted = vec![det3(cube, 0, 0.8, Source::Lifted)];
        let fused = fuse_inference(&[], &lifted, &FusionParams::default());
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].score, 0.4);

        // Below the confidence threshold after division: dropped.
        let weak = vec![det3(cube, 0, 0.5, Source::Lifted)];
        assert!(fuse_inference(&[], &weak, &FusionParams::default()).is_empty());
    }

    #[test]
    fn fusion_empty_lifted_pool_reduces_to_nms() {
        let cube = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let model = vec![
            det3(cube, 0, 0.9, Source::Model),
            det3(cube, 0, 0.8, Source::Model),
        ];
        let fused = fuse_inference(&model, &[], &FusionParams::default());
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].score, 0.9);
    }

    #[test]
    fn fusion_suppresses_lifted_duplicates_per_class() {
        let cube = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let model = vec![det3(cube, 0, 0.95, Source::Model)];
        let lifted = vec![
            det3(cube, 0, 0.9, Source::Lifted), // duplicate of the model box
            det3(cube, 1, 0.9, Source::Lifted), // different class survives
        ];
        let params = FusionParams {
            confidence_threshold: 0.1,
            ..FusionParams::default()
        };
        let fused = fuse_inference(&model, &lifted, &params);
        assert_eq!(fused.len(), 2);
        assert_eq!(fused[0].source, Source::Model);
        assert_eq!(fused[1].class_id, 1);

        // Scores come only from the two pools (lifted ones divided).
        for d in &fused {
            assert!(d.score == 0.95 || d.score == 0.45);
        }
    }
}
