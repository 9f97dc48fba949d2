//! KMeans over the refined node embeddings: k-means++ seeding, Lloyd
//! iterations with empty-cluster repair, and best-of-restarts selection.
//! All distances are squared Euclidean computed in f64.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::io::{expect_eof, expect_magic, read_f32, read_u32};

const CENTROID_MAGIC: &[u8; 4] = b"UGC1";

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Per-point cluster id in 0..k.
    pub assignments: Vec<u32>,
    /// Row-major k x dim.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    pub iterations: u32,
    /// Inertia after each Lloyd iteration; non-increasing.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows(x: &[f64], dim: usize) -> impl Iterator<Item = &[f64]> {
    x.chunks_exact(dim)
}

/// k-means++ seeding: first centroid uniform over rows, each next drawn with
/// probability proportional to the squared distance to the nearest chosen
/// centroid. When every remaining distance is zero (duplicate rows), the
/// lowest-index unchosen row is taken.
pub fn kmeanspp_init(x: &[f64], dim: usize, k: usize, seed: u64) -> Result<Vec<f64>> {
    let n = x.len() / dim;
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut best_d2: Vec<f64> = rows(x, dim).map(|r| sq_dist(r, row(x, dim, first))).collect();
    while chosen.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in best_d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                target -= w;
                if target <= 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // guard against accumulated rounding at the tail
            pick.unwrap_or_else(|| {
                best_d2.iter().rposition(|&w| w > 0.0).expect("positive weight exists")
            })
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n leaves an unchosen row")
        };
        chosen.push(next);
        for (i, r) in rows(x, dim).enumerate() {
            let d2 = sq_dist(r, row(x, dim, next));
            if d2 < best_d2[i] {
                best_d2[i] = d2;
            }
        }
    }
    let mut centroids = Vec::with_capacity(k * dim);
    for &i in &chosen {
        centroids.extend_from_slice(row(x, dim, i));
    }
    Ok(centroids)
}

fn row(x: &[f64], dim: usize, i: usize) -> &[f64] {
    &x[i * dim..(i + 1) * dim]
}

fn assign(x: &[f64], dim: usize, centroids: &[f64], assignments: &mut [u32]) {
    let k = centroids.len() / dim;
    for (i, r) in rows(x, dim).enumerate() {
        let mut best = 0usize;
        let mut best_d = sq_dist(r, row(centroids, dim, 0));
        for c in 1..k {
            let d = sq_dist(r, row(centroids, dim, c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignments[i] = best as u32;
    }
}

fn inertia_of(x: &[f64], dim: usize, centroids: &[f64], assignments: &[u32]) -> f64 {
    rows(x, dim)
        .zip(assignments)
        .map(|(r, &a)| sq_dist(r, row(centroids, dim, a as usize)))
        .sum()
}

/// Lloyd iterations until the largest centroid displacement drops below
/// `tol` or `max_iter` is reached. Nearest-centroid ties go to the lowest
/// cluster id; a cluster left empty seizes the point farthest from its
/// current centroid (donors keep at least one point).
pub fn kmeans(
    x: &[f64],
    dim: usize,
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: u32,
) -> Result<ClusterResult> {
    let n = x.len() / dim;
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kmeans input contains non-finite values".into()));
    }
    let mut centroids = kmeanspp_init(x, dim, k, seed)?;
    let mut assignments = vec![0u32; n];
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0u32;

    for _ in 0..max_iter {
        iterations += 1;
        assign(x, dim, &centroids, &mut assignments);

        // repair empty clusters in ascending id order
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a as usize] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut far: Option<(f64, usize)> = None;
            for (i, r) in rows(x, dim).enumerate() {
                let owner = assignments[i] as usize;
                if sizes[owner] < 2 {
                    continue;
                }
                let d = sq_dist(r, row(&centroids, dim, owner));
                if far.map_or(true, |(fd, _)| d > fd) {
                    far = Some((d, i));
                }
            }
            let (_, grab) = far.expect("k <= n guarantees a donor with >= 2 points");
            sizes[assignments[grab] as usize] -= 1;
            assignments[grab] = empty as u32;
            sizes[empty] = 1;
        }

        let mut new_centroids = vec![0.0f64; k * dim];
        for (i, r) in rows(x, dim).enumerate() {
            let c = assignments[i] as usize;
            for j in 0..dim {
                new_centroids[c * dim + j] += r[j];
            }
        }
        for c in 0..k {
            for j in 0..dim {
                new_centroids[c * dim + j] /= sizes[c] as f64;
            }
        }

        let shift = (0..k)
            .map(|c| sq_dist(row(&centroids, dim, c), row(&new_centroids, dim, c)).sqrt())
            .fold(0.0f64, f64::max);
        centroids = new_centroids;

        let inertia = inertia_of(x, dim, &centroids, &assignments);
        if let Some(&prev) = trace.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * prev.abs().max(1.0),
                "inertia increased: {prev} -> {inertia}"
            );
        }
        trace.push(inertia);

        if shift < tol {
            break;
        }
    }

    let inertia = *trace.last().expect("at least one iteration ran");
    Ok(ClusterResult { assignments, centroids, inertia, iterations, inertia_trace: trace })
}

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: u32 = 300;

/// Run `kmeans` once per seed and keep the lowest-inertia result, earliest
/// seed winning ties.
pub fn best_of_restarts(x: &[f64], dim: usize, k: usize, seeds: &[u64]) -> Result<ClusterResult> {
    if seeds.is_empty() {
        return Err(Error::Config("best_of_restarts needs at least one seed".into()));
    }
    let mut best: Option<ClusterResult> = None;
    for &seed in seeds {
        let result = kmeans(x, dim, k, seed, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        if best.as_ref().map_or(true, |b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one seed"))
}

/// Write cluster assignments as `video,clip,cluster`, rows in id order.
pub fn write_assignments_csv(ids: &[NodeId], assignments: &[u32], path: &Path) -> Result<()> {
    if ids.len() != assignments.len() {
        return Err(Error::Dimension(format!(
            "{} ids vs {} assignments",
            ids.len(),
            assignments.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "video,clip,cluster")?;
    for (id, &a) in ids.iter().zip(assignments) {
        writeln!(w, "{},{},{}", id.video_index, id.clip_index, a)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignments_csv(path: &Path) -> Result<Vec<(NodeId, u32)>> {
    let raw = fs::read_to_string(path)?;
    let mut lines = raw.lines();
    match lines.next() {
        Some("video,clip,cluster") => {}
        other => return Err(Error::Format(format!("assignment csv: bad header {other:?}"))),
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format("assignment csv: expected 3 fields".into()));
        }
        let num = |s: &str| -> Result<u32> {
            s.parse().map_err(|_| Error::Format(format!("assignment csv: bad integer {s:?}")))
        };
        out.push((
            NodeId { video_index: num(fields[0])?, clip_index: num(fields[1])? },
            num(fields[2])?,
        ));
    }
    Ok(out)
}

/// Centroid file: magic `UGC1`, `K` u32, `dim` u32, `K*dim` f32 LE.
pub fn write_centroids(centroids: &[f64], dim: usize, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CENTROID_MAGIC)?;
    let k = centroids.len() / dim;
    w.write_all(&(k as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for &c in centroids {
        w.write_all(&(c as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_centroids(path: &Path) -> Result<(Vec<f64>, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, CENTROID_MAGIC, "centroid file")?;
    let k = read_u32(&mut r, "centroid count")? as usize;
    let dim = read_u32(&mut r, "centroid dim")? as usize;
    let mut out = Vec::with_capacity(k * dim);
    for _ in 0..k * dim {
        out.push(f64::from(read_f32(&mut r, "centroid payload")?));
    }
    expect_eof(&mut r, "centroid file")?;
    Ok((out, dim))
}
