//! Framewise evaluation: expand clip clusters to frames, match predicted
//! clusters one-to-one to ground-truth key-steps by maximum frame overlap
//! (Hungarian on negated overlaps) and report precision, recall, F1 and IoU
//! averaged over ground-truth key-steps, unmatched steps scoring zero.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::ClipSpan;

/// Background / filtered-out label on the prediction side.
pub const UNLABELED: i32 = -1;

/// Per-video label sequences. Predicted labels are cluster ids or
/// [`UNLABELED`]; ground truth uses 0 for background and key-step ids >= 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabeling {
    pub predicted: Vec<i32>,
    pub ground_truth: Vec<u32>,
}

/// Expand kept-clip cluster assignments to per-frame labels.
///
/// A frame covered by several kept spans takes the cluster of the span whose
/// mid frame is nearest, earlier clip winning ties. Frames outside every
/// kept span stay [`UNLABELED`].
pub fn expand_to_frames(clips: &[(ClipSpan, u32)], m: u32) -> Vec<i32> {
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.sort_by_key(|&i| clips[i].0.clip_index);
    let mut labels = vec![UNLABELED; m as usize];
    let mut owner_dist = vec![u32::MAX; m as usize];
    for i in order {
        let (span, cluster) = &clips[i];
        for f in span.start_frame..span.end_frame.min(m) {
            let dist = span.mid_frame.abs_diff(f);
            // strict <: spans visited in clip order, so earlier clips win ties
            if dist < owner_dist[f as usize] {
                owner_dist[f as usize] = dist;
                labels[f as usize] = *cluster as i32;
            }
        }
    }
    labels
}

/// Minimum-cost one-to-one assignment of size `min(rows, cols)`.
///
/// Rectangular inputs are padded to square with zero-cost dummies. Returns
/// `row -> Some(col)` for real pairs only, plus the total cost over them.
pub fn hungarian(cost: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let rows = cost.len();
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    let cols = cost[0].len();
    if cols == 0 {
        return (vec![None; rows], 0.0);
    }
    let dim = rows.max(cols);

    // potentials-based shortest augmenting path, 1-indexed internals
    let mut u = vec![0.0f64; dim + 1];
    let mut v = vec![0.0f64; dim + 1];
    let mut p = vec![0usize; dim + 1]; // column -> row
    let mut way = vec![0usize; dim + 1];
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            0.0
        }
    };
    for i in 1..=dim {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; dim + 1];
        let mut used = vec![false; dim + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=dim {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=dim {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=dim {
        let i = p[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            assignment[i - 1] = Some(j - 1);
            total += cost[i - 1][j - 1];
        }
    }
    (assignment, total)
}

/// Scores for one matched (cluster, key-step) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub cluster: u32,
    pub keystep_id: u32,
    pub overlap: u64,
    pub predicted_frames: u64,
    pub gt_frames: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// cluster id -> matched ground-truth key-step id.
    pub matching: BTreeMap<u32, u32>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// Number of ground-truth key-steps present in the data.
    pub gt_keysteps: usize,
    pub matched_pairs: usize,
    pub per_keystep: Vec<PairScore>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Score pooled frame labelings against ground truth.
///
/// Overlap counts frames where the prediction is cluster `c` and the ground
/// truth is step `s` (never background). Predicted frames labeled
/// [`UNLABELED`] can match nothing but still count in recall denominators;
/// ground-truth background counts in precision denominators.
pub fn evaluate_task(labelings: &[FrameLabeling], k: u32) -> Result<EvalReport> {
    for l in labelings {
        if l.predicted.len() != l.ground_truth.len() {
            return Err(Error::Dimension(format!(
                "predicted {} frames vs ground truth {}",
                l.predicted.len(),
                l.ground_truth.len()
            )));
        }
    }
    let mut gt_ids: Vec<u32> = labelings
        .iter()
        .flat_map(|l| l.ground_truth.iter().copied())
        .filter(|&s| s > 0)
        .collect();
    gt_ids.sort_unstable();
    gt_ids.dedup();

    let k = k as usize;
    let k_gt = gt_ids.len();
    if k_gt == 0 {
        return Ok(EvalReport {
            matching: BTreeMap::new(),
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            iou: 0.0,
            gt_keysteps: 0,
            matched_pairs: 0,
            per_keystep: Vec::new(),
        });
    }
    let gt_col: BTreeMap<u32, usize> =
        gt_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    let mut overlap = vec![vec![0u64; k_gt]; k];
    let mut pred_frames = vec![0u64; k];
    let mut gt_frames = vec![0u64; k_gt];
    for l in labelings {
        for (&p, &g) in l.predicted.iter().zip(&l.ground_truth) {
            if p >= 0 {
                let p = p as usize;
                if p >= k {
                    return Err(Error::Range(format!("predicted cluster {p} >= k {k}")));
                }
                pred_frames[p] += 1;
            }
            if g > 0 {
                gt_frames[gt_col[&g]] += 1;
                if p >= 0 {
                    overlap[p as usize][gt_col[&g]] += 1;
                }
            }
        }
    }

    let cost: Vec<Vec<f64>> =
        overlap.iter().map(|row| row.iter().map(|&o| -(o as f64)).collect()).collect();
    let (assignment, _) = hungarian(&cost);

    let mut matching = BTreeMap::new();
    let mut per_keystep = Vec::new();
    let (mut sum_p, mut sum_r, mut sum_f1, mut sum_iou) = (0.0, 0.0, 0.0, 0.0);
    for (cluster, col) in assignment.iter().enumerate() {
        let Some(col) = *col else { continue };
        let keystep_id = gt_ids[col];
        matching.insert(cluster as u32, keystep_id);
        let ov = overlap[cluster][col];
        let precision = ratio(ov, pred_frames[cluster]);
        let recall = ratio(ov, gt_frames[col]);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let union = pred_frames[cluster] + gt_frames[col] - ov;
        let iou = ratio(ov, union);
        sum_p += precision;
        sum_r += recall;
        sum_f1 += f1;
        sum_iou += iou;
        per_keystep.push(PairScore {
            cluster: cluster as u32,
            keystep_id,
            overlap: ov,
            predicted_frames: pred_frames[cluster],
            gt_frames: gt_frames[col],
            precision,
            recall,
            f1,
            iou,
        });
    }
    per_keystep.sort_by_key(|p| p.keystep_id);
    let denom = k_gt as f64;
    Ok(EvalReport {
        matching,
        precision: sum_p / denom,
        recall: sum_r / denom,
        f1: sum_f1 / denom,
        iou: sum_iou / denom,
        gt_keysteps: k_gt,
        matched_pairs: per_keystep.len(),
        per_keystep,
    })
}

/// Text report plus `report.csv` and the per-keystep breakdown CSV.
pub fn write_eval_reports(report: &EvalReport, task: &str, dir: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("report.txt"))?);
    writeln!(w, "# framewise evaluation, clusters matched one-to-one to key-steps by max overlap")?;
    writeln!(w, "# metrics averaged over ground-truth key-steps; unmatched steps contribute 0")?;
    writeln!(w, "# gt background frames count toward precision denominators only")?;
    writeln!(w, "# unlabeled predictions (-1) count toward recall denominators only")?;
    writeln!(w, "task: {task}")?;
    writeln!(w, "gt_keysteps: {}", report.gt_keysteps)?;
    writeln!(w, "matched_pairs: {}", report.matched_pairs)?;
    writeln!(w, "precision: {:.6}", report.precision)?;
    writeln!(w, "recall: {:.6}", report.recall)?;
    writeln!(w, "f1: {:.6}", report.f1)?;
    writeln!(w, "iou: {:.6}", report.iou)?;
    for p in &report.per_keystep {
        writeln!(
            w,
            "keystep {} <- cluster {}: overlap {} precision {:.6} recall {:.6} f1 {:.6} iou {:.6}",
            p.keystep_id, p.cluster, p.overlap, p.precision, p.recall, p.f1, p.iou
        )?;
    }
    w.flush()?;

    // full-precision values; they parse back bit-exact
    let mut w = BufWriter::new(File::create(dir.join("report.csv"))?);
    writeln!(w, "task,precision,recall,f1,iou,matched_pairs")?;
    writeln!(
        w,
        "{task},{},{},{},{},{}",
        report.precision, report.recall, report.f1, report.iou, report.matched_pairs
    )?;
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("per_keystep.csv"))?);
    writeln!(w, "keystep_id,cluster,overlap,predicted_frames,gt_frames,precision,recall,f1,iou")?;
    for p in &report.per_keystep {
        writeln!(
            w,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            p.keystep_id,
            p.cluster,
            p.overlap,
            p.predicted_frames,
            p.gt_frames,
            p.precision,
            p.recall,
            p.f1,
            p.iou
        )?;
    }
    w.flush()?;
    Ok(())
}
