//! Deterministic 2-D PCA export of trained embeddings for external plotting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::NodeId;

fn normalize(v: &mut [f64]) -> f64 {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

fn canonical_sign(v: &mut [f64]) {
    // largest-|coefficient| entry positive, lowest index breaking ties
    let pivot = v
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.abs().partial_cmp(&b.abs()).unwrap().then(j.cmp(i)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if v[pivot] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Top principal direction of centered data by power iteration on the
/// covariance operator, plus its eigenvalue estimate. Deterministic: fixed
/// start vector, fixed tolerance, canonical sign.
fn power_iteration(centered: &[f64], dim: usize, deflate: Option<&[f64]>) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..dim).map(|j| 1.0 + j as f64 * 1e-3).collect();
    if let Some(prev) = deflate {
        project_out(&mut v, prev);
    }
    normalize(&mut v);
    let mut next = vec![0.0f64; dim];
    let mut lambda = 0.0f64;
    for _ in 0..300 {
        // next = X^T (X v)
        next.fill(0.0);
        for row in centered.chunks_exact(dim) {
            let score: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (nx, &r) in next.iter_mut().zip(row) {
                *nx += score * r;
            }
        }
        if let Some(prev) = deflate {
            project_out(&mut next, prev);
        }
        lambda = normalize(&mut next);
        if lambda == 0.0 {
            break; // direction exhausted; keep the previous vector
        }
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v.copy_from_slice(&next);
        if delta < 1e-13 {
            break;
        }
    }
    canonical_sign(&mut v);
    (v, lambda)
}

/// Deterministic unit vector orthogonal to `axis`: Gram-Schmidt applied to
/// the basis vector least aligned with it. Zero when dim == 1.
fn orthonormal_complement(axis: &[f64]) -> Vec<f64> {
    let dim = axis.len();
    let k = axis
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.abs().partial_cmp(&b.abs()).unwrap().then(i.cmp(j)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut v = vec![0.0f64; dim];
    v[k] = 1.0;
    project_out(&mut v, axis);
    if normalize(&mut v) == 0.0 {
        return vec![0.0; dim];
    }
    canonical_sign(&mut v);
    v
}

fn project_out(v: &mut [f64], axis: &[f64]) {
    let dot: f64 = v.iter().zip(axis).map(|(a, b)| a * b).sum();
    for (x, &a) in v.iter_mut().zip(axis) {
        *x -= dot * a;
    }
}

/// Project rows of an `n x dim` matrix onto the top two principal
/// components of the centered data. Returns (x, y) per row.
pub fn pca2(matrix: &[f64], dim: usize) -> Result<Vec<(f64, f64)>> {
    if dim < 1 || matrix.len() % dim != 0 {
        return Err(Error::Dimension(format!("matrix of {} values is not n x {dim}", matrix.len())));
    }
    let n = matrix.len() / dim;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut mean = vec![0.0f64; dim];
    for row in matrix.chunks_exact(dim) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<f64> = matrix
        .chunks_exact(dim)
        .flat_map(|row| row.iter().zip(&mean).map(|(&x, &m)| x - m).collect::<Vec<_>>())
        .collect();

    let (c1, lambda1) = power_iteration(&centered, dim, None);
    let (c2, lambda2) = power_iteration(&centered, dim, Some(&c1));
    // a numerically vanishing second eigenvalue means the deflated iteration
    // only amplifies rounding noise; use a clean orthogonal direction instead
    let c2 = if lambda2 <= lambda1 * 1e-9 { orthonormal_complement(&c1) } else { c2 };
    Ok(centered
        .chunks_exact(dim)
        .map(|row| {
            let x: f64 = row.iter().zip(&c1).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&c2).map(|(a, b)| a * b).sum();
            (x, y)
        })
        .collect())
}

/// Write the projection CSV: `video,clip,cluster,x,y`.
pub fn write_projection_csv(
    ids: &[NodeId],
    clusters: &[u32],
    coords: &[(f64, f64)],
    path: &Path,
) -> Result<()> {
    if ids.len() != clusters.len() || ids.len() != coords.len() {
        return Err(Error::Dimension("ids, clusters and coordinates differ in length".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "video,clip,cluster,x,y")?;
    for ((id, &c), &(x, y)) in ids.iter().zip(clusters).zip(coords) {
        writeln!(w, "{},{},{},{},{}", id.video_index, id.clip_index, c, x, y)?;
    }
    w.flush()?;
    Ok(())
}
