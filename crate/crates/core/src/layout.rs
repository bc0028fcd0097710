//! Placing topics on a square grid: a 2D PCA embedding of the topics,
//! followed by the split-diffuse mapping that spreads them evenly over the
//! grid cells while keeping their relative order along both axes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::metrics::{MetricSeries, MetricTensor, TensorManifest, TopicalMetricVector};
use crate::topics::LdaModel;

/// One planar point per topic, plus the principal axes that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEmbedding2D {
    pub points: Vec<[f64; 2]>,
    /// Unit-length projection axes in feature space.
    pub axes: [Vec<f64>; 2],
    /// Covariance eigenvalues, descending; at most `min(K, D)` of them.
    pub eigenvalues: Vec<f64>,
}

impl TopicEmbedding2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Element-wise square root of every `phi` row.
pub fn hellinger_features(model: &LdaModel) -> Vec<Vec<f64>> {
    (0..model.topics)
        .map(|t| model.phi_row(t).iter().map(|p| p.sqrt()).collect())
        .collect()
}

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

fn symmetric_eigen_desc(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = m
        .try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok((values, vectors))
}

/// Projects `features` (one row per topic) onto their top two principal
/// axes.
///
/// When there are fewer topics than feature dimensions the axes come from
/// the `K x K` Gram matrix of the centred rows, which has the same non-zero
/// spectrum as the covariance. Each axis is signed so that its largest
/// magnitude loading is positive.
pub fn pca_embed(features: &[Vec<f64>]) -> Result<TopicEmbedding2D> {
    let k = features.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "PCA embedding needs at least 2 topics, got {k}"
        )));
    }
    let d = features[0].len();
    if d < 2 {
        return Err(Error::Config(format!(
            "PCA embedding needs at least 2 features, got {d}"
        )));
    }
    if let Some(row) = features.iter().find(|r| r.len() != d) {
        return Err(Error::shape("pca features", &[k, d], &[k, row.len()]));
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite PCA feature".into()));
    }

    let x = DMatrix::from_fn(k, d, |r, c| features[r][c]);
    let means: Vec<f64> = (0..d).map(|c| x.column(c).sum() / k as f64).collect();
    let xc = DMatrix::from_fn(k, d, |r, c| x[(r, c)] - means[c]);
    let scale = 1.0 / (k - 1) as f64;

    let (eigenvalues, mut axes) = if d <= k {
        let cov = xc.transpose() * &xc * scale;
        let (vals, vecs) = symmetric_eigen_desc(cov)?;
        let axes: Vec<DVector<f64>> = (0..2).map(|i| vecs.column(i).into_owned()).collect();
        (vals, axes)
    } else {
        let gram = &xc * xc.transpose() * scale;
        let (vals, vecs) = symmetric_eigen_desc(gram)?;
        let mut axes: Vec<DVector<f64>> = Vec::with_capacity(2);
        for i in 0..2 {
            let lifted = xc.transpose() * vecs.column(i);
            let norm = lifted.norm();
            let tiny = 1e-12 * vals[0].abs().max(1.0);
            if vals[i] > tiny && norm > 0.0 {
                axes.push(lifted / norm);
            } else {
                axes.push(orthogonal_completion(&axes, d));
            }
        }
        (vals, axes)
    };

    for axis in &mut axes {
        let (imax, _) = axis
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            });
        if axis[imax] < 0.0 {
            *axis = -axis.clone();
        }
    }

    let points = (0..k)
        .map(|r| {
            let row = xc.row(r);
            [row.dot(&axes[0].transpose()), row.dot(&axes[1].transpose())]
        })
        .collect();
    let eigenvalues = eigenvalues.into_iter().map(|v| v.max(0.0)).collect();
    Ok(TopicEmbedding2D {
        points,
        axes: [
            axes[0].iter().copied().collect(),
            axes[1].iter().copied().collect(),
        ],
        eigenvalues,
    })
}

// Unit vector orthogonal to `existing`, from the first standard basis
// vector that is not already spanned.
fn orthogonal_completion(existing: &[DVector<f64>], d: usize) -> DVector<f64> {
    for i in 0..d {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        for e in existing {
            let dot = v.dot(e);
            v -= e * dot;
        }
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
    unreachable!("d >= 2 always admits a completion")
}

/// Square grid of side `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k: usize,
}

impl GridSpec {
    /// Grid whose cell count equals `topics`, if `topics` is a perfect square.
    pub fn for_topics(topics: usize) -> Result<Self> {
        let k = (topics as f64).sqrt().round() as usize;
        if k == 0 || k * k != topics {
            return Err(Error::Config(format!(
                "topic count {topics} is not a perfect square"
            )));
        }
        Ok(GridSpec { k })
    }

    pub fn cells(&self) -> usize {
        self.k * self.k
    }
}

/// Bijection from topic index to `(row, col)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridAssignment {
    pub k: usize,
    cells: Vec<(usize, usize)>,
}

impl GridAssignment {
    pub fn new(k: usize, cells: Vec<(usize, usize)>) -> Result<Self> {
        if cells.len() != k * k {
            return Err(Error::Data(format!(
                "assignment has {} topics for a {k}x{k} grid",
                cells.len()
            )));
        }
        let mut seen = vec![false; k * k];
        for &(r, c) in &cells {
            if r >= k || c >= k {
                return Err(Error::Data(format!("cell ({r}, {c}) outside {k}x{k} grid")));
            }
            if std::mem::replace(&mut seen[r * k + c], true) {
                return Err(Error::Data(format!("cell ({r}, {c}) assigned twice")));
            }
        }
        Ok(GridAssignment { k, cells })
    }

    /// Topic `i` goes to `(i / k, i % k)`.
    pub fn identity(k: usize) -> Self {
        GridAssignment {
            k,
            cells: (0..k * k).map(|i| (i / k, i % k)).collect(),
        }
    }

    pub fn topics(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, topic: usize) -> (usize, usize) {
        self.cells[topic]
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    /// Row-major cell index -> topic.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.cells.len()];
        for (t, &(r, c)) in self.cells.iter().enumerate() {
            inv[r * self.k + c] = t;
        }
        inv
    }

    /// Rearranges a topic-indexed vector into row-major grid order.
    pub fn to_grid(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.cells.len() {
            return Err(Error::shape(
                "grid assignment input",
                &[self.cells.len()],
                &[values.len()],
            ));
        }
        let mut out = vec![0.0; values.len()];
        for (t, &(r, c)) in self.cells.iter().enumerate() {
            out[r * self.k + c] = values[t];
        }
        Ok(out)
    }

    /// Inverse of [`GridAssignment::to_grid`].
    pub fn to_topics(&self, grid: &[f64]) -> Result<Vec<f64>> {
        if grid.len() != self.cells.len() {
            return Err(Error::shape(
                "grid frame",
                &[self.cells.len()],
                &[grid.len()],
            ));
        }
        Ok(self
            .cells
            .iter()
            .map(|&(r, c)| grid[r * self.k + c])
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<[usize; 3]> = self
            .cells
            .iter()
            .enumerate()
            .map(|(t, &(r, c))| [t, r, c])
            .collect();
        write_json(path, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<[usize; 3]> = read_json(path)?;
        let grid = GridSpec::for_topics(rows.len()).map_err(|e| Error::Data(e.to_string()))?;
        let mut cells = vec![None; rows.len()];
        for [t, r, c] in rows {
            let slot = cells
                .get_mut(t)
                .ok_or_else(|| Error::Data(format!("topic {t} out of range")))?;
            if slot.replace((r, c)).is_some() {
                return Err(Error::Data(format!("topic {t} listed twice")));
            }
        }
        let cells = cells
            .into_iter()
            .map(|c| c.expect("every topic listed"))
            .collect();
        GridAssignment::new(grid.k, cells)
    }
}

/// Split-diffuse placement of `embedding` on `grid`.
///
/// Each node owns a `rows x cols` block of cells and exactly `rows * cols`
/// topics. The block is cut in half along its wider side (columns on a tie;
/// the low half gets `floor(n / 2)` lines); topics are ranked along the
/// matching embedding coordinate (first coordinate for columns, second for
/// rows, ties by topic index) and the lowest-ranked ones fill the low half.
/// Column indices therefore grow with the first coordinate and row indices
/// with the second.
pub fn split_diffuse_map(embedding: &TopicEmbedding2D, grid: GridSpec) -> Result<GridAssignment> {
    let n = embedding.len();
    if n != grid.cells() {
        return Err(Error::Config(format!(
            "{n} topics cannot fill a {k}x{k} grid",
            k = grid.k
        )));
    }
    if embedding.points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite embedding coordinate".into()));
    }
    let mut topics: Vec<usize> = (0..n).collect();
    let mut cells = vec![(0, 0); n];
    split_block(
        &embedding.points,
        &mut topics,
        (0, 0),
        (grid.k, grid.k),
        &mut cells,
    );
    GridAssignment::new(grid.k, cells)
}

fn split_block(
    points: &[[f64; 2]],
    topics: &mut [usize],
    origin: (usize, usize),
    size: (usize, usize),
    cells: &mut [(usize, usize)],
) {
    let (row0, col0) = origin;
    let (rows, cols) = size;
    debug_assert_eq!(topics.len(), rows * cols);
    if rows * cols == 1 {
        cells[topics[0]] = (row0, col0);
        return;
    }
    let split_cols = cols >= rows;
    let axis = if split_cols { 0 } else { 1 };
    topics.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    if split_cols {
        let low = cols / 2;
        let (left, right) = topics.split_at_mut(rows * low);
        split_block(points, left, (row0, col0), (rows, low), cells);
        split_block(points, right, (row0, col0 + low), (rows, cols - low), cells);
    } else {
        let low = rows / 2;
        let (top, bottom) = topics.split_at_mut(low * cols);
        split_block(points, top, (row0, col0), (low, cols), cells);
        split_block(
            points,
            bottom,
            (row0 + low, col0),
            (rows - low, cols),
            cells,
        );
    }
}

/// One entity's metrics for one period laid out on the grid (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFrame {
    pub entity_id: String,
    pub period_index: usize,
    pub k: usize,
    pub cells: Vec<f64>,
}

impl MetricFrame {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.k + col]
    }
}

pub fn apply_assignment(
    vector: &TopicalMetricVector,
    assignment: &GridAssignment,
) -> Result<MetricFrame> {
    Ok(MetricFrame {
        entity_id: vector.entity_id.clone(),
        period_index: vector.period_index,
        k: assignment.k,
        cells: assignment.to_grid(&vector.values)?,
    })
}

/// Frames of every entity and period, in the metric dump format with a
/// `[entity][period][row][col]` layout.
pub fn frames_tensor(
    series: &BTreeMap<String, MetricSeries>,
    assignment: &GridAssignment,
) -> Result<MetricTensor> {
    let base = MetricTensor::from_series(series)?;
    let mut data = Vec::with_capacity(base.data.len());
    for s in series.values() {
        for v in &s.vectors {
            data.extend(assignment.to_grid(&v.values)?);
        }
    }
    Ok(MetricTensor {
        manifest: TensorManifest {
            inner_shape: vec![assignment.k, assignment.k],
            layout: "[entity][period][row][col]".into(),
            ..base.manifest
        },
        data,
    })
}
