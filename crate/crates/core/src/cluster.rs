//! Fixed-centroid k-means, silhouette scoring and radar-chart payloads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SECTOR_NAMES: [&str; 3] = ["Urban", "Residential", "Commercial"];
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("init rows {0} and {1} are identical")]
    DegenerateInit(usize, usize),
    #[error("sector {0} is empty at convergence")]
    EmptyClusterAtConvergence(usize),
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown DA id {0}")]
    UnknownDa(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub init_centroids: Vec<Vec<f64>>,
    pub final_centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Σ squared distances of each iteration's assignment to that iteration's centroids.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `(iteration, sector)` for every sector that lost all members mid-run.
    pub empty_events: Vec<(usize, usize)>,
}

/// State handed to an observer after each assignment step.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub centroids: &'a [Vec<f64>],
    pub assignments: &'a [usize],
    pub inertia: f64,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn check_points(points: &[Vec<f64>], dim: usize) -> Result<(), ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::ShapeMismatch("no points".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(ClusterError::ShapeMismatch(format!(
                "row {i} has {} columns, expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::ShapeMismatch(format!("row {i} is not finite")));
        }
    }
    Ok(())
}

pub fn kmeans_fixed(
    points: &[Vec<f64>],
    init: &[Vec<f64>],
    params: &KMeansParams,
) -> Result<ClusterModel, ClusterError> {
    kmeans_fixed_observed(points, init, params, |_| {})
}

/// Lloyd iterations starting from exactly `init`. Ties go to the lowest
/// sector index; an emptied sector keeps its previous centroid.
pub fn kmeans_fixed_observed(
    points: &[Vec<f64>],
    init: &[Vec<f64>],
    params: &KMeansParams,
    mut observer: impl FnMut(&IterationState),
) -> Result<ClusterModel, ClusterError> {
    if init.is_empty() {
        return Err(ClusterError::ShapeMismatch("no initial centroids".into()));
    }
    let dim = init[0].len();
    check_points(init, dim)?;
    check_points(points, dim)?;
    for i in 0..init.len() {
        for j in i + 1..init.len() {
            if init[i] == init[j] {
                return Err(ClusterError::DegenerateInit(i, j));
            }
        }
    }
    let k = init.len();
    let mut centroids = init.to_vec();
    let mut assignments = vec![0; points.len()];
    let mut inertia_history = Vec::new();
    let mut empty_events = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iter.max(1) {
        let mut inertia = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let mut best = (0, squared_distance(p, &centroids[0]));
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = squared_distance(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            *a = best.0;
            inertia += best.1;
        }
        observer(&IterationState {
            iteration: iterations,
            centroids: &centroids,
            assignments: &assignments,
            inertia,
        });
        inertia_history.push(inertia);
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                empty_events.push((iterations - 1, c));
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            movement = movement.max(distance(&next, &centroids[c]));
            centroids[c] = next;
        }
        if movement < params.tol {
            converged = true;
            break;
        }
    }

    let mut counts = vec![0usize; k];
    for &a in &assignments {
        counts[a] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(ClusterError::EmptyClusterAtConvergence(c));
    }
    Ok(ClusterModel {
        k,
        init_centroids: init.to_vec(),
        final_centroids: centroids,
        assignments,
        inertia_history,
        iterations,
        converged,
        empty_events,
    })
}

/// Index of the point with the smallest total distance to its own group,
/// for each label `0..k`; ties go to the lower index.
pub fn medoids(points: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Vec<usize>, ClusterError> {
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..points.len()).filter(|&i| labels[i] == c).collect();
            let mut best: Option<(usize, f64)> = None;
            for &i in &members {
                let total: f64 = members.iter().map(|&j| distance(&points[i], &points[j])).sum();
                if best.is_none_or(|(_, b)| total < b) {
                    best = Some((i, total));
                }
            }
            best.map(|(i, _)| i)
                .ok_or(ClusterError::EmptyClusterAtConvergence(c))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    pub values: Vec<f64>,
    /// Per-cluster values sorted in descending order.
    pub per_cluster: Vec<Vec<f64>>,
    pub mean: f64,
    /// Indices of points with a negative score.
    pub negative: Vec<usize>,
}

/// s(i) = (b − a) / max(a, b). Members of singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize]) -> Result<SilhouetteReport, ClusterError> {
    if points.len() != assignments.len() {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} points, {} assignments",
            points.len(),
            assignments.len()
        )));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let n = points.len();
    let mut values = vec![0.0; n];
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += distance(&points[i], &points[j]);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        values[i] = if m == 0.0 { 0.0 } else { (b - a) / m };
    }
    let mut per_cluster = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        per_cluster[a].push(values[i]);
    }
    for c in &mut per_cluster {
        c.sort_by(|x, y| y.total_cmp(x));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let negative = (0..n).filter(|&i| values[i] < 0.0).collect();
    Ok(SilhouetteReport {
        values,
        per_cluster,
        mean,
        negative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSector {
    pub sector: usize,
    pub name: String,
    pub members: Vec<String>,
    pub polylines: Vec<Vec<f64>>,
    pub centroid: Vec<f64>,
    /// Mean over axes of the members' population standard deviation.
    pub dispersion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPayload {
    pub axes: Vec<String>,
    pub sectors: Vec<RadarSector>,
}

pub fn dispersion(rows: &[&Vec<f64>], dim: usize) -> f64 {
    if rows.is_empty() || dim == 0 {
        return 0.0;
    }
    let n = rows.len() as f64;
    let total: f64 = (0..dim)
        .map(|d| {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            (rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .sum();
    total / dim as f64
}

pub fn radar_data(
    model: &ClusterModel,
    points: &[Vec<f64>],
    da_ids: &[String],
    axes: &[String],
    sector_names: &[String],
) -> RadarPayload {
    let dim = axes.len();
    let sectors = (0..model.k)
        .map(|c| {
            let idx: Vec<usize> = (0..points.len()).filter(|&i| model.assignments[i] == c).collect();
            let rows: Vec<&Vec<f64>> = idx.iter().map(|&i| &points[i]).collect();
            RadarSector {
                sector: c,
                name: sector_names.get(c).cloned().unwrap_or_else(|| format!("Sector {c}")),
                members: idx.iter().map(|&i| da_ids[i].clone()).collect(),
                polylines: rows.iter().map(|r| r.to_vec()).collect(),
                centroid: model.final_centroids[c].clone(),
                dispersion: dispersion(&rows, dim),
            }
        })
        .collect();
    RadarPayload {
        axes: axes.to_vec(),
        sectors,
    }
}

/// Clustering of one processed panel, keyed by DA id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub da_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    pub sector_names: Vec<String>,
    pub init_da_ids: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub model: ClusterModel,
    pub silhouette: SilhouetteReport,
    pub radar: RadarPayload,
}

impl ClusterOutput {
    pub fn sector_of(&self, da_id: &str) -> Option<usize> {
        self.da_ids
            .iter()
            .position(|d| d == da_id)
            .map(|i| self.model.assignments[i])
    }

    pub fn negative_das(&self) -> Vec<&str> {
        self.silhouette
            .negative
            .iter()
            .map(|&i| self.da_ids[i].as_str())
            .collect()
    }

    pub fn assignments_csv(&self) -> String {
        let mut out = String::from("da_id,sector\n");
        for (id, &a) in self.da_ids.iter().zip(&self.model.assignments) {
            out.push_str(&format!("{id},{}\n", self.sector_names[a]));
        }
        out
    }
}

/// Runs k-means seeded from the feature vectors of `init_da_ids`, then
/// scores and summarizes the result.
pub fn cluster_points(
    da_ids: &[String],
    points: Vec<Vec<f64>>,
    feature_ids: &[String],
    init_da_ids: &[String],
    sector_names: &[String],
    params: &KMeansParams,
) -> Result<ClusterOutput, ClusterError> {
    if da_ids.len() != points.len() {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} ids, {} points",
            da_ids.len(),
            points.len()
        )));
    }
    if sector_names.len() != init_da_ids.len() {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} sector names for {} initial DAs",
            sector_names.len(),
            init_da_ids.len()
        )));
    }
    let init = init_da_ids
        .iter()
        .map(|id| {
            da_ids
                .iter()
                .position(|d| d == id)
                .map(|i| points[i].clone())
                .ok_or_else(|| ClusterError::UnknownDa(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let model = kmeans_fixed(&points, &init, params)?;
    let silhouette = silhouette(&points, &model.assignments)?;
    let radar = radar_data(&model, &points, da_ids, feature_ids, sector_names);
    Ok(ClusterOutput {
        da_ids: da_ids.to_vec(),
        feature_ids: feature_ids.to_vec(),
        sector_names: sector_names.to_vec(),
        init_da_ids: init_da_ids.to_vec(),
        points,
        model,
        silhouette,
        radar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embed(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x, 0.0, 0.0, 0.0]).collect()
    }

    #[test]
    fn one_dimensional_example() {
        let points = embed(&[0.0, 0.1, 0.5, 0.6, 1.0]);
        let init = embed(&[0.0, 0.5, 1.0]);
        let m = kmeans_fixed(&points, &init, &KMeansParams::default()).unwrap();
        assert_eq!(m.assignments, [0, 0, 1, 1, 2]);
        let c: Vec<f64> = m.final_centroids.iter().map(|c| c[0]).collect();
        assert!((c[0] - 0.05).abs() < 1e-15 && (c[1] - 0.55).abs() < 1e-15 && c[2] == 1.0);
        assert_eq!(m.iterations, 2);
        assert!(m.converged);
    }

    #[test]
    fn fixed_point_converges_immediately() {
        let init = embed(&[0.0, 0.5, 1.0]);
        let m = kmeans_fixed(&init, &init, &KMeansParams::default()).unwrap();
        assert_eq!(m.iterations, 1);
        assert_eq!(m.inertia_history, [0.0]);
    }

    #[test]
    fn first_assignment_uses_init_verbatim() {
        let points = embed(&[0.0, 0.1, 0.5, 0.6, 1.0]);
        let init = embed(&[0.0, 0.5, 1.0]);
        let mut seen = Vec::new();
        kmeans_fixed_observed(&points, &init, &KMeansParams::default(), |s| {
            seen.push((s.iteration, s.centroids.to_vec()))
        })
        .unwrap();
        assert_eq!(seen[0], (0, init));
    }

    #[test]
    fn ties_go_to_lowest_sector() {
        let m = kmeans_fixed(
            &embed(&[0.5, 0.0, 1.0]),
            &embed(&[0.0, 1.0]),
            &KMeansParams { max_iter: 1, tol: 0.0 },
        )
        .unwrap();
        assert_eq!(m.assignments[0], 0);
    }

    #[test]
    fn init_errors() {
        let init = embed(&[0.2, 0.2, 1.0]);
        assert_eq!(
            kmeans_fixed(&embed(&[0.0]), &init, &KMeansParams::default()),
            Err(ClusterError::DegenerateInit(0, 1))
        );
        // third centroid is never nearest to anything
        assert_eq!(
            kmeans_fixed(&embed(&[0.0, 0.1]), &embed(&[0.0, 0.1, 5.0]), &KMeansParams::default()),
            Err(ClusterError::EmptyClusterAtConvergence(2))
        );
    }

    #[test]
    fn silhouette_example() {
        let r = silhouette(&[vec![0.0], vec![0.1], vec![1.0]], &[0, 0, 1]).unwrap();
        assert!((r.values[0] - 0.9).abs() < 1e-12);
        assert!((r.values[1] - 0.8 / 0.9).abs() < 1e-12);
        assert_eq!(r.values[2], 0.0);
        assert!((r.mean - 0.596_296_296_296_296_3).abs() < 1e-12);
        assert_eq!(r.per_cluster[0], [r.values[0], r.values[1]]);
    }

    #[test]
    fn silhouette_perfect_separation_and_single_cluster() {
        let pts = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
        let r = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.values, [1.0; 4]);
        assert_eq!(silhouette(&pts, &[0; 4]), Err(ClusterError::SingleCluster));
    }

    #[test]
    fn radar_identical_points_have_zero_dispersion() {
        let points = vec![vec![0.2, 0.4], vec![0.2, 0.4], vec![0.9, 0.9]];
        let m = kmeans_fixed(&points, &[vec![0.2, 0.4], vec![0.9, 0.9]], &KMeansParams::default()).unwrap();
        let ids: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let axes: Vec<String> = ["x", "y"].map(String::from).to_vec();
        let names: Vec<String> = ["A", "B"].map(String::from).to_vec();
        let r = radar_data(&m, &points, &ids, &axes, &names);
        assert_eq!(r.axes, axes);
        assert_eq!(r.sectors[0].dispersion, 0.0);
        assert_eq!(r.sectors[0].members, ["a", "b"]);
    }

    #[test]
    fn medoid_picks_central_point() {
        let pts = embed(&[0.0, 0.5, 0.6, 1.0]);
        assert_eq!(medoids(&pts, &[0, 0, 0, 1], 2).unwrap(), [1, 3]);
        // equal totals resolve to the lower index
        let pts = embed(&[0.0, 0.4, 0.5, 0.6]);
        assert_eq!(medoids(&pts, &[0; 4], 1).unwrap(), [1]);
    }
}
