//! Stage orchestration: a single TOML config drives resumable stages that
//! communicate only through files. Each stage records input hashes, its
//! config-slice hash and wall time; rerunning with unchanged inputs is a
//! no-op unless forced. With `deterministic = true` (the default) artifact
//! bytes are reproducible run to run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::background::{filter_background, load_mask};
use crate::cluster::{
    best_of_restarts, read_assignments_csv, write_assignments_csv, write_centroids,
};
use crate::embedding::{
    dump_embeddings, dump_walks, generate_walks, load_embeddings, train_skipgram,
    TrainConfig, TransitionTables, WalkConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_task, expand_to_frames, write_eval_reports, FrameLabeling};
use crate::graph::{
    build_unity_graph, read_graph, write_edges_csv, write_nodes_csv, NodeId, SpatialWeight,
};
use crate::io::{load_annotations, load_features, load_manifest, resolve_path};
use crate::ordering::{order_keysteps, write_order_report, ClusterMember, OrderingMode};
use crate::projection::{pca2, write_projection_csv};
use crate::types::{compute_clip_spans, SamplerConfig, TaskManifest, VideoFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Filter,
    Graph,
    Embed,
    Cluster,
    Order,
    Eval,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::Graph => "graph",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Order => "order",
            Stage::Eval => "eval",
            Stage::All => "all",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(Stage::Filter),
            "graph" => Ok(Stage::Graph),
            "embed" => Ok(Stage::Embed),
            "cluster" => Ok(Stage::Cluster),
            "order" => Ok(Stage::Order),
            "eval" => Ok(Stage::Eval),
            "all" => Ok(Stage::All),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundConfig {
    /// Defaults to the manifest's `egocentric` flag when unset.
    pub enabled: Option<bool>,
    pub tau: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig { enabled: None, tau: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub spatial_weight: SpatialWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Overrides the manifest's hypothesized key-step count.
    pub k: Option<u32>,
    pub restarts: u32,
    pub seed: u64,
    /// Explicit restart seeds; when empty, `seed..seed+restarts` is used.
    pub seeds: Vec<u64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { k: None, restarts: 10, seed: 7, seeds: Vec::new() }
    }
}

impl ClusterConfig {
    pub fn restart_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.restarts as u64).map(|i| self.seed.wrapping_add(i)).collect()
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderConfig {
    pub mode: OrderingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub deterministic: bool,
    /// Optional expected sampling geometry; loaded feature spans are checked
    /// against it and mismatches logged.
    pub sampler: Option<SamplerConfig>,
    pub background: BackgroundConfig,
    pub graph: GraphConfig,
    pub walk: WalkConfig,
    pub train: TrainConfig,
    pub cluster: ClusterConfig,
    pub order: OrderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: PathBuf::from("manifest.toml"),
            output_dir: PathBuf::from("out"),
            deterministic: true,
            sampler: None,
            background: BackgroundConfig::default(),
            graph: GraphConfig::default(),
            walk: WalkConfig::default(),
            train: TrainConfig::default(),
            cluster: ClusterConfig::default(),
            order: OrderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.background.tau) {
            return Err(Error::Config(format!("tau must be in [0, 1], got {}", self.background.tau)));
        }
        self.walk.validate()?;
        self.train.validate()?;
        if self.train.epochs < 1 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.cluster.restarts < 1 && self.cluster.seeds.is_empty() {
            return Err(Error::Config("cluster needs restarts >= 1 or explicit seeds".into()));
        }
        if let Some(k) = self.cluster.k {
            if k < 1 {
                return Err(Error::Config("cluster.k must be >= 1".into()));
            }
        }
        if let Some(sampler) = &self.sampler {
            sampler.validate()?;
        }
        Ok(())
    }

    /// Hash of every semantically meaningful field; paths are excluded
    /// (input content is hashed separately per stage).
    pub fn config_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for stage in [Stage::Filter, Stage::Graph, Stage::Embed, Stage::Cluster, Stage::Order, Stage::Eval] {
            hasher.update(self.stage_config_hash(stage).as_bytes());
        }
        hex(&hasher.finalize())
    }

    /// Hash of the config slice one stage depends on.
    fn stage_config_hash(&self, stage: Stage) -> String {
        let json = match stage {
            Stage::Filter => serde_json::to_string(&(&self.sampler, &self.background)),
            Stage::Graph => serde_json::to_string(&self.graph),
            Stage::Embed => serde_json::to_string(&(&self.walk, &self.train, self.deterministic)),
            Stage::Cluster => serde_json::to_string(&(&self.cluster, self.deterministic)),
            Stage::Order => serde_json::to_string(&self.order),
            Stage::Eval => serde_json::to_string(&self.cluster.k),
            Stage::All => unreachable!("all is dispatched, never hashed"),
        }
        .expect("config slices serialize");
        sha256_hex(json.as_bytes())
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.output_dir.join(stage.name())
    }

    fn meta_path(&self, stage: Stage) -> PathBuf {
        self.output_dir.join("meta").join(format!("{}.json", stage.name()))
    }
}

/// Load a pipeline config, resolving `manifest` and `output_dir` relative to
/// the config file's directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: PipelineConfig =
        toml::from_str(&raw).map_err(|e| Error::Config(format!("config parse: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if cfg.manifest.is_relative() {
        cfg.manifest = base.join(&cfg.manifest);
    }
    if cfg.output_dir.is_relative() {
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)
        .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

#[derive(Debug, Serialize, Deserialize)]
struct StageMeta {
    stage: String,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    wall_ms: u64,
}

/// Removes the output-directory lock on drop, including on panic.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(output_dir: &Path) -> Result<Self> {
        fs::create_dir_all(output_dir)?;
        let path = output_dir.join(".gpl.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory is locked by another run ({}); remove the file if stale",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub ran: bool,
}

/// Run one stage (or `all`). Returns what actually ran versus was skipped.
pub fn run(cfg: &PipelineConfig, stage: Stage, force: bool) -> Result<Vec<StageOutcome>> {
    cfg.validate()?;
    let _lock = LockGuard::acquire(&cfg.output_dir)?;
    let manifest = load_manifest(&cfg.manifest)?;
    let mut outcomes = Vec::new();
    let stages: Vec<Stage> = match stage {
        Stage::All => {
            let mut s = vec![Stage::Filter, Stage::Graph, Stage::Embed, Stage::Cluster, Stage::Order];
            let annotated = manifest.videos.iter().filter(|v| v.annotations.is_some()).count();
            if annotated == manifest.videos.len() {
                s.push(Stage::Eval);
            } else {
                log::warn!(
                    "skipping eval: {} of {} videos have annotations",
                    annotated,
                    manifest.videos.len()
                );
            }
            s
        }
        s => vec![s],
    };
    for s in stages {
        outcomes.push(run_one(cfg, &manifest, s, force)?);
    }
    Ok(outcomes)
}

fn run_one(cfg: &PipelineConfig, manifest: &TaskManifest, stage: Stage, force: bool) -> Result<StageOutcome> {
    let inputs = stage_inputs(cfg, manifest, stage)?;
    let mut input_hashes = BTreeMap::new();
    for path in &inputs {
        input_hashes.insert(path.display().to_string(), hash_file(path)?);
    }
    let config_hash = cfg.stage_config_hash(stage);

    if !force {
        if let Some(meta) = read_meta(&cfg.meta_path(stage)) {
            let outputs_intact = meta.outputs.iter().all(|(path, hash)| {
                hash_file(Path::new(path)).map(|h| h == *hash).unwrap_or(false)
            });
            if meta.config_hash == config_hash && meta.inputs == input_hashes && outputs_intact {
                log::info!("stage {}: inputs unchanged, skipping", stage.name());
                return Ok(StageOutcome { stage, ran: false });
            }
        }
    }

    let dir = cfg.stage_dir(stage);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;

    let start = Instant::now();
    let outputs = match stage {
        Stage::Filter => stage_filter(cfg, manifest, &dir)?,
        Stage::Graph => stage_graph(cfg, manifest, &dir)?,
        Stage::Embed => stage_embed(cfg, &dir)?,
        Stage::Cluster => stage_cluster(cfg, manifest, &dir)?,
        Stage::Order => stage_order(cfg, manifest, &dir)?,
        Stage::Eval => stage_eval(cfg, manifest, &dir)?,
        Stage::All => unreachable!("all is expanded by run()"),
    };
    let wall_ms = start.elapsed().as_millis() as u64;

    let mut output_hashes = BTreeMap::new();
    for path in &outputs {
        output_hashes.insert(path.display().to_string(), hash_file(path)?);
    }
    let meta = StageMeta {
        stage: stage.name().to_string(),
        config_hash,
        inputs: input_hashes,
        outputs: output_hashes,
        wall_ms,
    };
    fs::create_dir_all(cfg.output_dir.join("meta"))?;
    fs::write(cfg.meta_path(stage), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    log::info!("stage {}: done in {} ms", stage.name(), wall_ms);
    Ok(StageOutcome { stage, ran: true })
}

fn read_meta(path: &Path) -> Option<StageMeta> {
    let raw = fs::read_to_string(path).ok()?;
    serde_json::from_str(&raw).ok()
}

/// Files a stage reads; missing ones surface as MissingArtifact.
fn stage_inputs(cfg: &PipelineConfig, manifest: &TaskManifest, stage: Stage) -> Result<Vec<PathBuf>> {
    let mut inputs = vec![cfg.manifest.clone()];
    let feature_paths =
        || manifest.videos.iter().map(|v| resolve_path(&cfg.manifest, &v.features));
    match stage {
        Stage::Filter => {
            inputs.extend(feature_paths());
            if background_enabled(cfg, manifest) {
                for v in &manifest.videos {
                    if let Some(mask) = &v.mask {
                        inputs.push(resolve_path(&cfg.manifest, mask));
                    }
                }
            }
        }
        Stage::Graph => {
            inputs.extend(feature_paths());
            inputs.push(cfg.stage_dir(Stage::Filter).join("kept.csv"));
        }
        Stage::Embed => {
            inputs.push(cfg.stage_dir(Stage::Graph).join("nodes.csv"));
            inputs.push(cfg.stage_dir(Stage::Graph).join("edges.csv"));
        }
        Stage::Cluster => {
            inputs.push(cfg.stage_dir(Stage::Embed).join("embeddings.uge"));
        }
        Stage::Order => {
            inputs.push(cfg.stage_dir(Stage::Cluster).join("assignments.csv"));
            inputs.push(cfg.stage_dir(Stage::Graph).join("nodes.csv"));
        }
        Stage::Eval => {
            inputs.extend(feature_paths());
            inputs.push(cfg.stage_dir(Stage::Filter).join("kept.csv"));
            inputs.push(cfg.stage_dir(Stage::Cluster).join("assignments.csv"));
            let missing: Vec<&str> = manifest
                .videos
                .iter()
                .enumerate()
                .filter(|(_, v)| v.annotations.is_none())
                .map(|(i, _)| manifest.videos[i].features.to_str().unwrap_or("?"))
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingArtifact(format!(
                    "eval requires annotations for every video; missing for: {}",
                    missing.join(", ")
                )));
            }
            for v in &manifest.videos {
                inputs.push(resolve_path(&cfg.manifest, v.annotations.as_ref().expect("checked")));
            }
        }
        Stage::All => unreachable!(),
    }
    for path in &inputs {
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "stage {} needs {}",
                stage.name(),
                path.display()
            )));
        }
    }
    Ok(inputs)
}

fn background_enabled(cfg: &PipelineConfig, manifest: &TaskManifest) -> bool {
    cfg.background.enabled.unwrap_or(manifest.egocentric)
}

fn load_all_features(cfg: &PipelineConfig, manifest: &TaskManifest) -> Result<Vec<VideoFeatures>> {
    manifest
        .videos
        .iter()
        .map(|v| load_features(&resolve_path(&cfg.manifest, &v.features)))
        .collect()
}

#[derive(Debug, Serialize)]
struct FilterVideoReport {
    video: u32,
    video_id: String,
    total_clips: usize,
    kept_clips: usize,
    removed_fraction: f64,
}

fn stage_filter(cfg: &PipelineConfig, manifest: &TaskManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let features = load_all_features(cfg, manifest)?;
    let sampler = cfg.sampler.as_ref().unwrap_or(&manifest.sampler);
    for vf in &features {
        match compute_clip_spans(vf.m, sampler) {
            Ok(spans) => {
                let matches = spans.len() == vf.z()
                    && spans.iter().zip(&vf.spans).all(|(a, b)| {
                        (a.start_frame, a.end_frame) == (b.start_frame, b.end_frame)
                    });
                if !matches {
                    log::warn!(
                        "video {}: stored spans do not match sampler (sigma={}, omega={}, psi={})",
                        vf.video_id,
                        sampler.sigma,
                        sampler.omega,
                        sampler.psi
                    );
                }
            }
            Err(_) => log::warn!("video {}: sampler yields no clips for m={}", vf.video_id, vf.m),
        }
    }

    let enabled = background_enabled(cfg, manifest);
    let mut kept_rows: Vec<(u32, String, u32)> = Vec::new();
    let mut reports = Vec::new();
    for (i, (vf, entry)) in features.iter().zip(&manifest.videos).enumerate() {
        let (kept, removed_fraction) = if enabled {
            let mask_path = entry.mask.as_ref().ok_or_else(|| {
                Error::MissingArtifact(format!(
                    "background filtering is enabled but video {} has no mask",
                    vf.video_id
                ))
            })?;
            let mask = load_mask(&resolve_path(&cfg.manifest, mask_path), vf.m)?;
            filter_background(vf, &mask, cfg.background.tau)?
        } else {
            (vf.clone(), 0.0)
        };
        for span in &kept.spans {
            kept_rows.push((i as u32, vf.video_id.clone(), span.clip_index));
        }
        reports.push(FilterVideoReport {
            video: i as u32,
            video_id: vf.video_id.clone(),
            total_clips: vf.z(),
            kept_clips: kept.z(),
            removed_fraction,
        });
    }

    let kept_path = dir.join("kept.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(File::create(&kept_path)?);
        writeln!(w, "video,video_id,clip")?;
        for (video, id, clip) in &kept_rows {
            writeln!(w, "{video},{id},{clip}")?;
        }
        w.flush()?;
    }
    let report_path = dir.join("filter_report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&reports).expect("report serializes"))?;
    Ok(vec![kept_path, report_path])
}

/// Parse kept.csv into per-video original clip index lists.
fn read_kept_csv(path: &Path, n_videos: usize) -> Result<Vec<Vec<u32>>> {
    let raw = fs::read_to_string(path)?;
    let mut lines = raw.lines();
    match lines.next() {
        Some("video,video_id,clip") => {}
        other => return Err(Error::Format(format!("kept csv: bad header {other:?}"))),
    }
    let mut kept = vec![Vec::new(); n_videos];
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format("kept csv: expected 3 fields".into()));
        }
        let video: usize = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("kept csv: bad video {:?}", fields[0])))?;
        let clip: u32 = fields[2]
            .parse()
            .map_err(|_| Error::Format(format!("kept csv: bad clip {:?}", fields[2])))?;
        if video >= n_videos {
            return Err(Error::Format(format!("kept csv: video {video} out of range")));
        }
        kept[video].push(clip);
    }
    Ok(kept)
}

/// Subset features to the kept clips recorded by the filter stage.
fn apply_kept(vf: &VideoFeatures, kept: &[u32]) -> Result<VideoFeatures> {
    let d = vf.d as usize;
    let index_of: BTreeMap<u32, usize> =
        vf.spans.iter().enumerate().map(|(i, s)| (s.clip_index, i)).collect();
    let mut spans = Vec::with_capacity(kept.len());
    let mut embeddings = Vec::with_capacity(kept.len() * d);
    for &clip in kept {
        let &i = index_of.get(&clip).ok_or_else(|| {
            Error::Format(format!("kept csv references clip {clip} absent from {}", vf.video_id))
        })?;
        spans.push(vf.spans[i]);
        embeddings.extend_from_slice(vf.row(i));
    }
    if spans.is_empty() {
        return Err(Error::Format(format!("kept csv leaves video {} empty", vf.video_id)));
    }
    Ok(VideoFeatures {
        video_id: vf.video_id.clone(),
        m: vf.m,
        fps: vf.fps,
        d: vf.d,
        spans,
        embeddings,
    })
}

fn stage_graph(cfg: &PipelineConfig, manifest: &TaskManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let features = load_all_features(cfg, manifest)?;
    let kept = read_kept_csv(&cfg.stage_dir(Stage::Filter).join("kept.csv"), features.len())?;
    let subset: Vec<VideoFeatures> = features
        .iter()
        .zip(&kept)
        .map(|(vf, k)| apply_kept(vf, k))
        .collect::<Result<_>>()?;
    let (graph, build_stats) = build_unity_graph(&subset, cfg.graph.spatial_weight)?;

    let edges_path = dir.join("edges.csv");
    let nodes_path = dir.join("nodes.csv");
    let stats_path = dir.join("stats.json");
    write_edges_csv(&graph, &edges_path)?;
    write_nodes_csv(&graph, &nodes_path)?;
    let stats = graph.stats(&build_stats);
    fs::write(&stats_path, serde_json::to_string_pretty(&stats).expect("stats serialize"))?;
    Ok(vec![edges_path, nodes_path, stats_path])
}

fn effective_seed(base: u64, deterministic: bool) -> u64 {
    if deterministic {
        base
    } else {
        rand::random()
    }
}

fn stage_embed(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let graph_dir = cfg.stage_dir(Stage::Graph);
    let graph = read_graph(&graph_dir.join("nodes.csv"), &graph_dir.join("edges.csv"))?;

    let mut walk_cfg = cfg.walk;
    walk_cfg.rng_seed = effective_seed(walk_cfg.rng_seed, cfg.deterministic);
    let tables = TransitionTables::build(&graph, walk_cfg.p, walk_cfg.q, walk_cfg.on_the_fly)?;
    let corpus = generate_walks(&graph, &tables, &walk_cfg)?;
    let walks_path = dir.join("walks.txt");
    dump_walks(&corpus, &graph, &walks_path)?;

    let mut train_cfg = cfg.train;
    train_cfg.rng_seed = effective_seed(train_cfg.rng_seed, cfg.deterministic);
    let emb = train_skipgram(&corpus, &train_cfg, graph.node_count())?;
    let matrix: Vec<f32> = emb.input.iter().map(|&x| x as f32).collect();
    let ids: Vec<NodeId> = graph.nodes.iter().map(|n| n.id).collect();
    let emb_path = dir.join("embeddings.uge");
    dump_embeddings(&matrix, emb.dim, &ids, &emb_path)?;
    Ok(vec![walks_path, emb_path])
}

#[derive(Debug, Serialize)]
struct ClusterStageReport {
    k: u32,
    restart_seeds: Vec<u64>,
    inertia: f64,
    iterations: u32,
}

fn stage_cluster(cfg: &PipelineConfig, manifest: &TaskManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let (matrix, dim, ids) =
        load_embeddings(&cfg.stage_dir(Stage::Embed).join("embeddings.uge"))?;
    let x: Vec<f64> = matrix.iter().map(|&v| f64::from(v)).collect();
    let k = cfg.cluster.k.unwrap_or(manifest.k);
    let seeds: Vec<u64> = if cfg.deterministic {
        cfg.cluster.restart_seeds()
    } else {
        cfg.cluster.restart_seeds().iter().map(|_| rand::random()).collect()
    };
    let result = best_of_restarts(&x, dim, k as usize, &seeds)?;

    let assignments_path = dir.join("assignments.csv");
    write_assignments_csv(&ids, &result.assignments, &assignments_path)?;
    let centroids_path = dir.join("centroids.ugc");
    write_centroids(&result.centroids, dim, &centroids_path)?;
    let report_path = dir.join("cluster_report.json");
    let report = ClusterStageReport {
        k,
        restart_seeds: seeds,
        inertia: result.inertia,
        iterations: result.iterations,
    };
    fs::write(&report_path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(vec![assignments_path, centroids_path, report_path])
}

fn node_times(cfg: &PipelineConfig) -> Result<BTreeMap<NodeId, f64>> {
    let nodes = crate::graph::read_nodes_csv(&cfg.stage_dir(Stage::Graph).join("nodes.csv"))?;
    Ok(nodes.into_iter().collect())
}

fn video_names(cfg: &PipelineConfig, manifest: &TaskManifest) -> Result<BTreeMap<u32, String>> {
    let features = load_all_features(cfg, manifest)?;
    Ok(features.iter().enumerate().map(|(i, vf)| (i as u32, vf.video_id.clone())).collect())
}

fn stage_order(cfg: &PipelineConfig, manifest: &TaskManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let assignments =
        read_assignments_csv(&cfg.stage_dir(Stage::Cluster).join("assignments.csv"))?;
    let times = node_times(cfg)?;
    let k = cfg.cluster.k.unwrap_or(manifest.k);
    let members: Vec<ClusterMember> = assignments
        .iter()
        .map(|&(id, cluster)| {
            let time = *times.get(&id).ok_or_else(|| {
                Error::MissingArtifact(format!("node {id} missing from graph nodes.csv"))
            })?;
            Ok(ClusterMember { id, time, cluster })
        })
        .collect::<Result<_>>()?;
    let result = order_keysteps(&members, k, cfg.order.mode)?;

    let report_path = dir.join("order.txt");
    write_order_report(&result, &video_names(cfg, manifest)?, &report_path)?;
    let json_path = dir.join("order.json");
    #[derive(Serialize)]
    struct OrderJson<'a> {
        global_order: &'a [u32],
        cluster_avg_time: &'a BTreeMap<u32, f64>,
        per_video_orders: &'a BTreeMap<u32, Vec<u32>>,
        empty_clusters: &'a [u32],
    }
    let json = OrderJson {
        global_order: &result.global_order,
        cluster_avg_time: &result.cluster_avg_time,
        per_video_orders: &result.per_video_orders,
        empty_clusters: &result.empty_clusters,
    };
    fs::write(&json_path, serde_json::to_string_pretty(&json).expect("order serializes"))?;
    Ok(vec![report_path, json_path])
}

fn stage_eval(cfg: &PipelineConfig, manifest: &TaskManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let features = load_all_features(cfg, manifest)?;
    let assignments =
        read_assignments_csv(&cfg.stage_dir(Stage::Cluster).join("assignments.csv"))?;
    let k = cfg.cluster.k.unwrap_or(manifest.k);

    let mut per_video: Vec<Vec<(u32, u32)>> = vec![Vec::new(); features.len()];
    for &(id, cluster) in &assignments {
        let video = id.video_index as usize;
        if video >= features.len() {
            return Err(Error::Format(format!("assignment references video {video}")));
        }
        per_video[video].push((id.clip_index, cluster));
    }

    let mut labelings = Vec::with_capacity(features.len());
    for ((vf, entry), clips) in features.iter().zip(&manifest.videos).zip(&per_video) {
        let gt_path = resolve_path(&cfg.manifest, entry.annotations.as_ref().expect("validated"));
        let gt = load_annotations(&gt_path)?;
        gt.check_bounds(vf.m)?;
        let span_of: BTreeMap<u32, crate::types::ClipSpan> =
            vf.spans.iter().map(|s| (s.clip_index, *s)).collect();
        let mut spans = Vec::with_capacity(clips.len());
        for &(clip, cluster) in clips {
            let span = span_of.get(&clip).ok_or_else(|| {
                Error::Format(format!("assignment references clip {clip} of {}", vf.video_id))
            })?;
            spans.push((*span, cluster));
        }
        spans.sort_by_key(|(s, _)| s.clip_index);
        labelings.push(FrameLabeling {
            predicted: expand_to_frames(&spans, vf.m),
            ground_truth: gt.frame_labels(vf.m),
        });
    }

    let report = evaluate_task(&labelings, k)?;
    write_eval_reports(&report, &manifest.task_name, dir)?;
    Ok(vec![dir.join("report.txt"), dir.join("report.csv"), dir.join("per_keystep.csv")])
}

/// Project trained embeddings to 2-D and write `project/projection.csv`.
/// Requires the embed and cluster stages.
pub fn export_projection(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let _lock = LockGuard::acquire(&cfg.output_dir)?;
    let emb_path = cfg.stage_dir(Stage::Embed).join("embeddings.uge");
    let assignments_path = cfg.stage_dir(Stage::Cluster).join("assignments.csv");
    for p in [&emb_path, &assignments_path] {
        if !p.exists() {
            return Err(Error::MissingArtifact(format!("projection needs {}", p.display())));
        }
    }
    let (matrix, dim, ids) = load_embeddings(&emb_path)?;
    let assignments = read_assignments_csv(&assignments_path)?;
    let cluster_of: BTreeMap<NodeId, u32> = assignments.into_iter().collect();
    let clusters: Vec<u32> = ids
        .iter()
        .map(|id| {
            cluster_of.get(id).copied().ok_or_else(|| {
                Error::MissingArtifact(format!("node {id} missing from assignments.csv"))
            })
        })
        .collect::<Result<_>>()?;
    let x: Vec<f64> = matrix.iter().map(|&v| f64::from(v)).collect();
    let coords = pca2(&x, dim)?;
    let dir = cfg.output_dir.join("project");
    fs::create_dir_all(&dir)?;
    let out = dir.join("projection.csv");
    write_projection_csv(&ids, &clusters, &coords, &out)?;
    Ok(out)
}

/// Read the headline metrics back from an eval stage's report.csv.
pub fn read_report_csv(path: &Path) -> Result<(f64, f64, f64, f64)> {
    let raw = fs::read_to_string(path)?;
    let mut lines = raw.lines();
    match lines.next() {
        Some("task,precision,recall,f1,iou,matched_pairs") => {}
        other => return Err(Error::Format(format!("report csv: bad header {other:?}"))),
    }
    let line = lines.next().ok_or_else(|| Error::Format("report csv: no data row".into()))?;
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 6 {
        return Err(Error::Format("report csv: expected 6 fields".into()));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Format(format!("report csv: bad number {s:?}")))
    };
    Ok((num(fields[1])?, num(fields[2])?, num(fields[3])?, num(fields[4])?))
}
