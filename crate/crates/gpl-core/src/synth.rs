//! Synthetic task generator with planted key-steps, plus brute-force
//! reference implementations for clustering and assignment. The generator
//! makes the full pipeline verifiable at desk scale: embeddings live on the
//! unit sphere so cosine similarity is the natural geometry, and a larger
//! center separation makes the task monotonically easier.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::background::{write_mask, InteractionMask};
use crate::error::{Error, Result};
use crate::io::{write_annotations, write_features, write_manifest};
use crate::types::{
    ClipSpan, GroundTruth, ManifestEntry, SamplerConfig, Segment, TaskManifest, VideoFeatures,
};

/// Parameters of a planted-key-step task.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthSpec {
    pub task_name: String,
    /// Number of planted key-steps.
    pub k_true: u32,
    pub videos: u32,
    /// Inclusive range of clips drawn per key-step segment.
    pub clips_per_step: (u32, u32),
    /// Embedding dimension.
    pub dim: u32,
    /// Minimum pairwise Euclidean distance between unit-norm centers.
    pub separation: f64,
    /// Gaussian noise std added per component before re-normalizing.
    pub noise: f64,
    /// Fraction of clips that are background, in [0, 1).
    pub background: f64,
    /// Probability of swapping each adjacent step pair in a video's order.
    pub jitter: f64,
    pub seed: u64,
    /// Frames per clip; clips tile the video without overlap.
    pub frames_per_clip: u32,
    pub fps: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            task_name: "synth".into(),
            k_true: 4,
            videos: 6,
            clips_per_step: (4, 8),
            dim: 32,
            separation: 1.0,
            noise: 0.1,
            background: 0.2,
            jitter: 0.1,
            seed: 42,
            frames_per_clip: 10,
            fps: 30.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_true < 1 {
            return Err(Error::Config("k_true must be >= 1".into()));
        }
        if self.videos < 1 {
            return Err(Error::Config("videos must be >= 1".into()));
        }
        if self.clips_per_step.0 < 1 || self.clips_per_step.0 > self.clips_per_step.1 {
            return Err(Error::Config("clips_per_step range must be 1 <= lo <= hi".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be >= 2".into()));
        }
        if self.separation <= 0.0 {
            return Err(Error::Config("separation must be positive".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.background) {
            return Err(Error::Config("background fraction must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::Config("jitter must be in [0, 1]".into()));
        }
        if self.frames_per_clip < 1 {
            return Err(Error::Config("frames_per_clip must be >= 1".into()));
        }
        Ok(())
    }

    /// Sampler that reproduces the generator's non-overlapping clip tiling.
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { sigma: 1, omega: self.frames_per_clip, psi: self.frames_per_clip }
    }
}

/// One generated task, in memory.
#[derive(Debug, Clone)]
pub struct SynthTask {
    pub features: Vec<VideoFeatures>,
    pub ground_truth: Vec<GroundTruth>,
    pub masks: Vec<InteractionMask>,
}

fn unit_normal_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn place_centers(rng: &mut ChaCha8Rng, k: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0u32;
    while centers.len() < k {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InfeasibleSeparation(format!(
                "placed {} of {k} centers at separation {separation} in d={dim}",
                centers.len()
            )));
        }
        let candidate = unit_normal_vector(rng, dim);
        let ok = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= separation
        });
        if ok {
            centers.push(candidate);
        }
    }
    Ok(centers)
}

/// Generate all videos of a task deterministically from the spec seed.
/// Video `i` always comes out the same regardless of how many videos are
/// requested, so tasks with different `videos` counts share a prefix.
pub fn generate_task(spec: &SynthSpec) -> Result<SynthTask> {
    spec.validate()?;
    let dim = spec.dim as usize;
    let k = spec.k_true as usize;
    let mut center_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    center_rng.set_stream(u64::MAX);
    let centers = place_centers(&mut center_rng, k, dim, spec.separation)?;

    let mut features = Vec::with_capacity(spec.videos as usize);
    let mut ground_truth = Vec::with_capacity(spec.videos as usize);
    let mut masks = Vec::with_capacity(spec.videos as usize);

    for video in 0..spec.videos {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(video as u64);
        let video_id = format!("{}-{:03}", spec.task_name, video);

        // step order: canonical with seeded adjacent swaps
        let mut order: Vec<usize> = (0..k).collect();
        for i in 0..k.saturating_sub(1) {
            if rng.random::<f64>() < spec.jitter {
                order.swap(i, i + 1);
            }
        }

        // step label per foreground clip, in order
        let mut fg_steps: Vec<usize> = Vec::new();
        for &step in &order {
            let count = rng.random_range(spec.clips_per_step.0..=spec.clips_per_step.1);
            fg_steps.extend(std::iter::repeat_n(step, count as usize));
        }
        let fg = fg_steps.len();
        let bg = (fg as f64 * spec.background / (1.0 - spec.background)).round() as usize;
        let total = fg + bg;

        // choose background positions among the clip sequence
        let mut is_background = vec![false; total];
        {
            let mut slots: Vec<usize> = (0..total).collect();
            for pick in 0..bg {
                let j = rng.random_range(pick..total);
                slots.swap(pick, j);
            }
            for &s in &slots[..bg] {
                is_background[s] = true;
            }
        }

        let fpc = spec.frames_per_clip;
        let m = total as u32 * fpc;
        let mut spans = Vec::with_capacity(total);
        let mut embeddings = Vec::with_capacity(total * dim);
        let mut flags = vec![true; m as usize];
        let mut clip_steps: Vec<Option<usize>> = Vec::with_capacity(total);
        let mut fg_cursor = 0usize;
        for clip in 0..total {
            let start = clip as u32 * fpc;
            spans.push(ClipSpan::new(clip as u32, start, start + fpc));
            let row: Vec<f64> = if is_background[clip] {
                clip_steps.push(None);
                for f in start..start + fpc {
                    flags[f as usize] = false;
                }
                unit_normal_vector(&mut rng, dim)
            } else {
                let step = fg_steps[fg_cursor];
                fg_cursor += 1;
                clip_steps.push(Some(step));
                let noisy: Vec<f64> = centers[step]
                    .iter()
                    .map(|&c| {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        c + spec.noise * n
                    })
                    .collect();
                let norm: f64 = noisy.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-9 {
                    noisy.into_iter().map(|x| x / norm).collect()
                } else {
                    centers[step].clone()
                }
            };
            embeddings.extend(row.into_iter().map(|x| x as f32));
        }

        // annotation segments: maximal runs of foreground clips of one step
        let mut segments = Vec::new();
        let mut run: Option<(usize, u32)> = None; // (step, start frame)
        for (clip, step) in clip_steps.iter().enumerate() {
            let frame = clip as u32 * fpc;
            match (run, step) {
                (None, Some(s)) => run = Some((*s, frame)),
                (Some((rs, start)), Some(s)) if *s != rs => {
                    segments.push((rs, start, frame));
                    run = Some((*s, frame));
                }
                (Some((rs, start)), None) => {
                    segments.push((rs, start, frame));
                    run = None;
                }
                _ => {}
            }
        }
        if let Some((rs, start)) = run {
            segments.push((rs, start, m));
        }
        let segments = segments
            .into_iter()
            .map(|(step, start, end)| Segment {
                start_frame: start,
                end_frame: end,
                keystep_id: step as u32 + 1,
                keystep_name: format!("step_{}", step + 1),
            })
            .collect();

        let mut gt = GroundTruth { video_id: video_id.clone(), segments };
        gt.normalize()?;
        let vf = VideoFeatures {
            video_id: video_id.clone(),
            m,
            fps: spec.fps,
            d: spec.dim,
            spans,
            embeddings,
        };
        vf.validate()?;
        features.push(vf);
        ground_truth.push(gt);
        masks.push(InteractionMask { video_id, flags });
    }

    Ok(SynthTask { features, ground_truth, masks })
}

/// Write a generated task as a complete directory consumable by the
/// pipeline: manifest plus one feature, annotation and mask file per video.
pub fn write_task_dir(spec: &SynthSpec, dir: &Path) -> Result<TaskManifest> {
    let task = generate_task(spec)?;
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for ((vf, gt), mask) in task.features.iter().zip(&task.ground_truth).zip(&task.masks) {
        let base = vf.video_id.clone();
        write_features(vf, &dir.join(format!("{base}.ugf")))?;
        write_annotations(gt, &dir.join(format!("{base}.csv")))?;
        write_mask(mask, &dir.join(format!("{base}.ugm")))?;
        entries.push(ManifestEntry {
            features: format!("{base}.ugf").into(),
            annotations: Some(format!("{base}.csv").into()),
            mask: Some(format!("{base}.ugm").into()),
        });
    }
    let manifest = TaskManifest {
        task_name: spec.task_name.clone(),
        k: spec.k_true,
        egocentric: spec.background > 0.0,
        sampler: spec.sampler(),
        videos: entries,
    };
    write_manifest(&manifest, &dir.join("manifest.toml"))?;
    Ok(manifest)
}

/// Exhaustive minimum-inertia partition into at most `k` parts, for
/// instances of up to 12 points. Returns (assignments, inertia).
pub fn brute_force_kmeans(x: &[f64], dim: usize, k: usize) -> Result<(Vec<u32>, f64)> {
    let n = x.len() / dim;
    if n > 12 {
        return Err(Error::TooLarge(format!("{n} points exceeds the 12-point brute-force cap")));
    }
    if k < 1 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut assignment = vec![0u32; n];
    let mut best: Option<(Vec<u32>, f64)> = None;

    fn inertia(x: &[f64], dim: usize, assignment: &[u32], k: usize) -> f64 {
        let n = assignment.len();
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i] as usize;
            counts[c] += 1;
            for j in 0..dim {
                sums[c * dim + j] += x[i * dim + j];
            }
        }
        let mut total = 0.0;
        for i in 0..n {
            let c = assignment[i] as usize;
            for j in 0..dim {
                let mean = sums[c * dim + j] / counts[c] as f64;
                let diff = x[i * dim + j] - mean;
                total += diff * diff;
            }
        }
        total
    }

    // restricted-growth strings enumerate set partitions into <= k parts
    fn recurse(
        i: usize,
        max_used: usize,
        k: usize,
        n: usize,
        assignment: &mut Vec<u32>,
        x: &[f64],
        dim: usize,
        best: &mut Option<(Vec<u32>, f64)>,
    ) {
        if i == n {
            let cost = inertia(x, dim, assignment, max_used + 1);
            if best.as_ref().map_or(true, |(_, b)| cost < *b) {
                *best = Some((assignment.clone(), cost));
            }
            return;
        }
        let limit = (max_used + 1).min(k - 1);
        for c in 0..=limit {
            assignment[i] = c as u32;
            recurse(i + 1, max_used.max(c), k, n, assignment, x, dim, best);
        }
    }

    recurse(1, 0, k, n, &mut assignment, x, dim, &mut best);
    Ok(best.expect("at least one partition"))
}

/// Exhaustive minimum over one-to-one assignments of size
/// `min(rows, cols)`, for matrices whose smaller side is at most 8.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> Result<f64> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(0.0);
    }
    let cols = cost[0].len();
    if cols == 0 {
        return Ok(0.0);
    }
    if rows.min(cols) > 8 {
        return Err(Error::TooLarge("smaller side exceeds the 8-element cap".into()));
    }
    let size = rows.min(cols);
    let mut best = f64::INFINITY;
    let mut pool: Vec<usize> = if rows <= cols { (0..cols).collect() } else { (0..rows).collect() };

    fn recurse(
        pool: &mut Vec<usize>,
        depth: usize,
        size: usize,
        rows_small: bool,
        cost: &[Vec<f64>],
        best: &mut f64,
    ) {
        if depth == size {
            let total: f64 = (0..size)
                .map(|i| if rows_small { cost[i][pool[i]] } else { cost[pool[i]][i] })
                .sum();
            if total < *best {
                *best = total;
            }
            return;
        }
        for i in depth..pool.len() {
            pool.swap(depth, i);
            recurse(pool, depth + 1, size, rows_small, cost, best);
            pool.swap(depth, i);
        }
    }

    recurse(&mut pool, 0, size, rows <= cols, cost, &mut best);
    Ok(best)
}
