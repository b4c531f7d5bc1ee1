//! Nearest-neighbor based distances between point sets.

use crate::assignment::solve_assignment;
use crate::error::{invalid, Error, Result};
use crate::geometry::{dist_sq3, PointCloud};
use crate::spatial::{knn_all, Neighbor};

/// Largest set size accepted by [`hungarian_distance`].
pub const HUNGARIAN_MAX: usize = 512;

pub fn nearest_neighbors(query: &PointCloud, target: &PointCloud, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if k == 0 || k > target.len() {
        return invalid(format!("k = {k} but target has {} points", target.len()));
    }
    Ok(knn_all(query.points(), target.points(), k))
}

/// Mean over predicted points of the mean distance to their `k` nearest
/// target points.
pub fn knn_loss(pred: &PointCloud, target: &PointCloud, k: usize) -> Result<f64> {
    let nn = nearest_neighbors(pred, target, k)?;
    Ok(knn_loss_from_neighbors(&nn, k))
}

pub(crate) fn knn_loss_from_neighbors(nn: &[Vec<Neighbor>], k: usize) -> f64 {
    let total: f64 = nn
        .iter()
        .map(|row| row.iter().map(Neighbor::dist).sum::<f64>() / k as f64)
        .sum();
    total / nn.len() as f64
}

fn one_sided(a: &PointCloud, b: &PointCloud) -> f64 {
    let nn = knn_all(a.points(), b.points(), 1);
    nn.iter().map(|row| row[0].dist()).sum::<f64>() / a.len() as f64
}

/// Unsquared chamfer distance: the two one-sided mean nearest distances, summed.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("chamfer distance of an empty cloud");
    }
    Ok(one_sided(a, b) + one_sided(b, a))
}

/// The one-sided terms of [`chamfer`], `(a -> b, b -> a)`.
pub fn chamfer_terms(a: &PointCloud, b: &PointCloud) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return invalid("chamfer distance of an empty cloud");
    }
    Ok((one_sided(a, b), one_sided(b, a)))
}

/// Mean matched distance under the optimal bijection between `a` and `b`.
/// Undefined for sets of different sizes.
pub fn hungarian_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.len() != b.len() {
        return invalid(format!(
            "hungarian distance needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    if a.len() > HUNGARIAN_MAX {
        return Err(Error::UnsupportedSize(format!(
            "{} points exceeds the exact solver bound of {HUNGARIAN_MAX}",
            a.len()
        )));
    }
    let cost: Vec<Vec<f64>> = a
        .points()
        .iter()
        .map(|p| b.points().iter().map(|q| dist_sq3(*p, *q).sqrt()).collect())
        .collect();
    let col = solve_assignment(&cost);
    let total: f64 = col.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(total / a.len() as f64)
}
