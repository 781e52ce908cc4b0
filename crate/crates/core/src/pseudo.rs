//! 3D→2D knowledge propagation: class tags for class-agnostic 3D
//! predictions via minimum-cost bipartite matching of 2D footprints.
//!
//! Annotated 2D boxes are matched against the 2D footprints of predicted
//! 3D boxes with cost `1 - IoU`; the matching that minimizes the total
//! cost hands each ground-truth class to its best-overlapping prediction,
//! producing 3D pseudo-labels routed to the noisy output branch.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::boxes::{iou_2d, normalize_yaw, project_box3d_to_2d, Box2D, Box3D};
use crate::geom::CameraModel;

/// A class-agnostic 3D prediction together with its projected 2D footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgnosticPrediction {
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub score: f64,
}

/// Output-head routing tag. Pseudo-labels go to the noisy branch so they
/// cannot interfere with accurate human annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Primary,
    Noisy,
}

/// A class-specific 3D pseudo-label: ground-truth class and 2D box paired
/// with the matched prediction's 3D box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub class_id: usize,
    pub box2d: Box2D,
    pub box3d: Box3D,
    pub match_iou: f64,
    pub branch: Branch,
}

/// Row-major M×N cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

/// `cost[i][j] = 1 - IoU(gt[i], preds[j].box2d)`.
pub fn build_cost_matrix(gt2d: &[Box2D], preds: &[AgnosticPrediction]) -> CostMatrix {
    let mut values = Vec::with_capacity(gt2d.len() * preds.len());
    for gt in gt2d {
        for pred in preds {
            values.push(1.0 - iou_2d(gt, &pred.box2d));
        }
    }
    CostMatrix::new(gt2d.len(), preds.len(), values)
}

/// Padding cost for rectangular problems; never competes with real costs
/// in the `1 - IoU` range and cancels out of every complete assignment.
const PAD_COST: f64 = 10.0;

/// Shortest-augmenting-path solver for the square assignment problem.
/// Returns the column assigned to each row.
fn solve_square(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // Potentials over rows and columns; column n is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![n; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 0..n {
        row_of_col[n] = i;
        let mut j0 = n;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 0..n {
                if !used[j] {
                    let reduced = cost(i0, j) - u[i0] - v[j];
                    if reduced < min_to[j] {
                        min_to[j] = reduced;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == n {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == n {
                break;
            }
        }
    }

    let mut col_of_row = vec![n; n];
    for j in 0..n {
        if row_of_col[j] < n {
            col_of_row[row_of_col[j]] = j;
        }
    }
    col_of_row
}

/// Total cost of an assignment over the real (unpadded) entries, summed in
/// ascending row order so ties compare deterministically.
fn real_total(cost: &CostMatrix, assign: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &j) in assign.iter().enumerate().take(cost.rows) {
        if j < cost.cols {
            total += cost.at(i, j);
        }
    }
    total
}

/// Minimum-cost bipartite assignment of rows to columns.
///
/// Exactly `min(M, N)` rows are assigned; the rest map to `None`.
/// Rectangular matrices are padded internally with [`PAD_COST`], which
/// shifts every complete assignment equally and so never changes the
/// optimum. Among assignments of equal total cost the lexicographically
/// smallest one (comparing assigned columns row by row, `None` last) is
/// returned, which makes the result invariant to column permutations up to
/// the documented tie rule.
pub fn hungarian(cost: &CostMatrix) -> Vec<Option<usize>> {
    let (m, n) = (cost.rows, cost.cols);
    if m == 0 {
        return Vec::new();
    }
    if n == 0 {
        return vec![None; m];
    }
    let size = m.max(n);
    let padded = |i: usize, j: usize| {
        if i < m && j < n {
            cost.at(i, j)
        } else {
            PAD_COST
        }
    };

    let mut current = solve_square(size, padded);
    let mut best_total = real_total(cost, &current);

    // Lexicographic refinement: for each row in turn, adopt the smallest
    // column that still admits a completion of minimal total cost. Fixed
    // pairs shrink the problem, so each probe solves a smaller square.
    let mut fixed_col_of_row: Vec<Option<usize>> = vec![None; size];
    let mut col_taken = vec![false; size];
    for i in 0..m {
        let free_rows: Vec<usize> = (0..size)
            .filter(|&r| r != i && fixed_col_of_row[r].is_none())
            .collect();

        let mut candidates: Vec<usize> = (0..n).filter(|&j| !col_taken[j]).collect();
        if let Some(pad) = (n..size).find(|&j| !col_taken[j]) {
            candidates.push(pad);
        }

        let mut adopted = false;
        let mut fallback: Option<(f64, usize, Vec<usize>)> = None;
        for &j in &candidates {
            let free_cols: Vec<usize> = (0..size)
                .filter(|&c| c != j && !col_taken[c])
                .collect();
            let sub =
                solve_square(free_rows.len(), |a, b| padded(free_rows[a], free_cols[b]));

            let mut full = vec![0usize; size];
            for (r, c) in fixed_col_of_row.iter().enumerate() {
                if let Some(c) = c {
                    full[r] = *c;
                }
            }
            full[i] = j;
            for (a, &b) in sub.iter().enumerate() {
                full[free_rows[a]] = free_cols[b];
            }
            let total = real_total(cost, &full);
            if total <= best_total {
                best_total = total;
                current = full;
                fixed_col_of_row[i] = Some(j);
                col_taken[j] = true;
                adopted = true;
                break;
            }
            if fallback.as_ref().map_or(true, |(t, _, _)| total < *t) {
                fallback = Some((total, j, full));
            }
        }
        // Floating-point tie noise can leave every probe a hair above the
        // incumbent; adopt the cheapest probe to stay deterministic.
        if !adopted {
            let (total, j, full) = fallback.expect("at least one candidate column");
            best_total = total;
            current = full;
            fixed_col_of_row[i] = Some(j);
            col_taken[j] = true;
        }
    }

    current
        .into_iter()
        .take(m)
        .map(|j| if j < n { Some(j) } else { None })
        .collect()
}

/// Hungarian matching of ground-truth 2D boxes to predictions, gated at
/// `max_cost`. Returns the pseudo-labels (in ground-truth order) and the
/// indices of ground-truth boxes left unmatched.
pub fn make_pseudo_labels(
    gt: &[(usize, Box2D)],
    preds: &[AgnosticPrediction],
    max_cost: f64,
) -> (Vec<PseudoLabel>, Vec<usize>) {
    if gt.is_empty() {
        return (Vec::new(), Vec::new());
    }
    if preds.is_empty() {
        return (Vec::new(), (0..gt.len()).collect());
    }
    let boxes: Vec<Box2D> = gt.iter().map(|(_, b)| *b).collect();
    let cost = build_cost_matrix(&boxes, preds);
    let assignment = hungarian(&cost);

    let mut labels = Vec::new();
    let mut unmatched = Vec::new();
    for (i, assigned) in assignment.iter().enumerate() {
        match assigned {
            Some(j) if cost.at(i, *j) <= max_cost => {
                labels.push(PseudoLabel {
                    class_id: gt[i].0,
                    box2d: gt[i].1,
                    box3d: preds[*j].box3d,
                    match_iou: 1.0 - cost.at(i, *j),
                    branch: Branch::Noisy,
                });
            }
            _ => unmatched.push(i),
        }
    }
    (labels, unmatched)
}

/// Perturbation model standing in for a class-agnostic 3D detector:
/// jitter, drops and spurious boxes, all drawn from a seeded stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    /// Isotropic center jitter, meters (standard deviation).
    pub center_sigma: f64,
    /// Additive size jitter, meters (standard deviation).
    pub size_sigma: f64,
    /// Yaw jitter, radians (standard deviation).
    pub yaw_sigma: f64,
    /// Probability of dropping each ground-truth box.
    pub drop_prob: f64,
    /// Probability of emitting one spurious box per ground-truth box.
    pub spurious_rate: f64,
    /// Axis-aligned region spurious centers are drawn from.
    pub spurious_region: ([f64; 3], [f64; 3]),
    /// Uniform size range for spurious boxes.
    pub spurious_size: (f64, f64),
    /// Uniform score range assigned to every prediction.
    pub score_range: (f64, f64),
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            center_sigma: 0.0,
            size_sigma: 0.0,
            yaw_sigma: 0.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            spurious_region: ([-3.0, -3.0, 0.0], [3.0, 3.0, 2.0]),
            spurious_size: (0.3, 1.5),
            score_range: (1.0, 1.0),
        }
    }
}

/// Simulated predictions plus, for every prediction, the index of the
/// ground-truth box it was perturbed from (`None` for spurious ones).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPredictions {
    pub preds: Vec<AgnosticPrediction>,
    pub origins: Vec<Option<usize>>,
}

fn draw_score(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Perturbs ground-truth boxes into class-agnostic predictions with exact
/// projected footprints. Boxes whose footprint is invalid for `camera`
/// (any corner behind it) are omitted. Seeded and reproducible.
pub fn simulate_agnostic_predictions(
    gt3d: &[Box3D],
    camera: &CameraModel,
    spec: &PerturbSpec,
    seed: u64,
) -> SimulatedPredictions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = Vec::new();
    let mut origins = Vec::new();

    for (idx, gt) in gt3d.iter().enumerate() {
        if rng.random_range(0.0..1.0) < spec.drop_prob {
            continue;
        }
        let jitter = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * spec.center_sigma;
        let center = Vector3::new(gt.cx, gt.cy, gt.cz) + jitter;
        let sizes = [gt.l, gt.w, gt.h]
            .map(|s| (s + rng.sample::<f64, _>(StandardNormal) * spec.size_sigma).max(0.05));
        let yaw =
            normalize_yaw(gt.yaw + rng.sample::<f64, _>(StandardNormal) * spec.yaw_sigma);
        let score = draw_score(&mut rng, spec.score_range);
        let box3d = Box3D::new(
            center.x, center.y, center.z, sizes[0], sizes[1], sizes[2], yaw,
        )
        .expect("perturbed sizes are clamped positive");
        if let Some(box2d) = project_box3d_to_2d(&box3d, camera) {
            preds.push(AgnosticPrediction { box3d, box2d, score });
            origins.push(Some(idx));
        }
    }

    for _ in 0..gt3d.len() {
        if rng.random_range(0.0..1.0) >= spec.spurious_rate {
            continue;
        }
        let (lo, hi) = spec.spurious_region;
        let center = [
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
            rng.random_range(lo[2]..hi[2]),
        ];
        let sizes = [
            rng.random_range(spec.spurious_size.0..spec.spurious_size.1),
            rng.random_range(spec.spurious_size.0..spec.spurious_size.1),
            rng.random_range(spec.spurious_size.0..spec.spurious_size.1),
        ];
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let score = draw_score(&mut rng, spec.score_range);
        let box3d = Box3D::new(
            center[0], center[1], center[2], sizes[0], sizes[1], sizes[2], yaw,
        )
        .expect("spurious sizes are positive");
        if let Some(box2d) = project_box3d_to_2d(&box3d, camera) {
            preds.push(AgnosticPrediction { box3d, box2d, score });
            origins.push(None);
        }
    }

    SimulatedPredictions { preds, origins }
}
