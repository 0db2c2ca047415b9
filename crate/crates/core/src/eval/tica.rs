use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::align::kabsch;
use super::metrics::TicaSummary;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::protein::Trajectory;

pub const TICA_LAG: usize = 10;
pub const TICA_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct TicaModel {
    pub lag: usize,
    pub mean: DVector<f64>,
    /// Columns are the leading components, `D × k`.
    pub projection: DMatrix<f64>,
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
}

/// Flattened Cα coordinates of every state after superposition on the
/// first state, `L × 3N`.
pub fn tica_features(traj: &Trajectory) -> Result<DMatrix<f64>> {
    tica_features_on(traj, &traj.states[0].ca_positions())
}

/// Like [`tica_features`] but superposes every state on `anchor`.
pub fn tica_features_on(traj: &Trajectory, anchor: &[Vec3]) -> Result<DMatrix<f64>> {
    let first = anchor;
    let n = first.len();
    if traj.n_residues() != n {
        return Err(Error::Shape(format!(
            "{} residues against an anchor of {n}",
            traj.n_residues()
        )));
    }
    let mut out = DMatrix::zeros(traj.len(), 3 * n);
    for (row, s) in traj.states.iter().enumerate() {
        let ca = s.ca_positions();
        let t = kabsch(&ca, first)?;
        for (i, p) in ca.iter().enumerate() {
            let q: Vec3 = t.apply(p);
            for c in 0..3 {
                out[(row, 3 * i + c)] = q[c];
            }
        }
    }
    Ok(out)
}

/// Fits the symmetrized time-lagged covariance problem
/// `C_lag v = λ (C_0 + εI) v` and keeps the top `k` components.
pub fn tica_fit(features: &DMatrix<f64>, lag: usize, k: usize) -> Result<TicaModel> {
    let (len, dim) = features.shape();
    if lag == 0 || len <= lag + dim {
        return Err(Error::InvalidArgument(format!(
            "TICA needs more than lag + D = {} frames, got {len}",
            lag + dim
        )));
    }
    if k == 0 || k > dim {
        return Err(Error::InvalidArgument(format!("cannot keep {k} of {dim} components")));
    }
    let mean = features.row_mean().transpose();
    let centered = DMatrix::from_fn(len, dim, |r, c| features[(r, c)] - mean[c]);
    let pairs = len - lag;
    let x0 = centered.rows(0, pairs);
    let xt = centered.rows(lag, pairs);
    let norm = 1.0 / (2.0 * pairs as f64);
    let c0 = (x0.transpose() * x0 + xt.transpose() * xt) * norm
        + DMatrix::identity(dim, dim) * TICA_EPSILON;
    let cross = x0.transpose() * xt;
    let ct = (&cross + cross.transpose()) * norm;
    let chol = c0.cholesky().ok_or_else(|| {
        Error::DegenerateGeometry("instantaneous covariance is not positive definite".into())
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry("covariance factor is singular".into()))?;
    let m = &l_inv * ct * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let back = l_inv.transpose();
    let mut projection = DMatrix::zeros(dim, k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        let v = &back * eig.eigenvectors.column(idx);
        projection.set_column(j, &v);
    }
    Ok(TicaModel {
        lag,
        mean,
        projection,
        eigenvalues: order.iter().take(k).map(|&i| eig.eigenvalues[i]).collect(),
    })
}

/// Projects features onto the model's components, `L × k`.
pub fn tica_project(model: &TicaModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != model.mean.len() {
        return Err(Error::Shape(format!(
            "{} feature columns for a model of dimension {}",
            features.ncols(),
            model.mean.len()
        )));
    }
    let centered =
        DMatrix::from_fn(features.nrows(), features.ncols(), |r, c| features[(r, c)] - model.mean[c]);
    Ok(centered * &model.projection)
}

/// Normalized 2-D histogram of the first two columns over `bounds`
/// `[x_min, x_max, y_min, y_max]`; points outside are dropped.
pub fn tica_histogram(points: &[[f64; 2]], bins: usize, bounds: [f64; 4]) -> Vec<Vec<f64>> {
    let mut h = vec![vec![0.0; bins]; bins];
    let [x0, x1, y0, y1] = bounds;
    let mut count = 0.0;
    for p in points {
        let fx = (p[0] - x0) / (x1 - x0);
        let fy = (p[1] - y0) / (y1 - y0);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            continue;
        }
        let bx = ((fx * bins as f64) as usize).min(bins - 1);
        let by = ((fy * bins as f64) as usize).min(bins - 1);
        h[by][bx] += 1.0;
        count += 1.0;
    }
    if count > 0.0 {
        h.iter_mut().flatten().for_each(|v| *v /= count);
    }
    h
}

/// Fits TICA on `reference`, projects it and every predicted trajectory
/// (superposed on the reference's first state) onto the two leading
/// components and bins both clouds on shared bounds.
pub fn tica_summary(
    reference: &Trajectory,
    predicted: &[Trajectory],
    lag: usize,
    bins: usize,
) -> Result<TicaSummary> {
    let feats = tica_features(reference)?;
    let model = tica_fit(&feats, lag, 2)?;
    let rows = |m: DMatrix<f64>| -> Vec<[f64; 2]> {
        (0..m.nrows()).map(|r| [m[(r, 0)], m[(r, 1)]]).collect()
    };
    let ref_pts = rows(tica_project(&model, &feats)?);
    let anchor = reference.states[0].ca_positions();
    let mut pred_pts = Vec::new();
    for p in predicted {
        pred_pts.extend(rows(tica_project(&model, &tica_features_on(p, &anchor)?)?));
    }
    let mut bounds = [f64::MAX, f64::MIN, f64::MAX, f64::MIN];
    for p in ref_pts.iter().chain(&pred_pts) {
        bounds[0] = bounds[0].min(p[0]);
        bounds[1] = bounds[1].max(p[0]);
        bounds[2] = bounds[2].min(p[1]);
        bounds[3] = bounds[3].max(p[1]);
    }
    Ok(TicaSummary {
        eigenvalues: model.eigenvalues.clone(),
        reference_histogram: tica_histogram(&ref_pts, bins, bounds),
        predicted_histogram: tica_histogram(&pred_pts, bins, bounds),
        reference: ref_pts,
        predicted: pred_pts,
        bounds,
    })
}
