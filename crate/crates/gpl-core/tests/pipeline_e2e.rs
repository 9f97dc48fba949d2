//! End-to-end pipeline tests over generated synthetic tasks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gpl_core::pipeline::{self, hash_file, PipelineConfig, Stage};
use gpl_core::synth::{write_task_dir, SynthSpec};
use gpl_core::Error;

fn fixture_spec() -> SynthSpec {
    SynthSpec { task_name: "synth-A".into(), ..SynthSpec::default() }
}

fn config_for(task_dir: &Path, out: &Path) -> PipelineConfig {
    PipelineConfig {
        manifest: task_dir.join("manifest.toml"),
        output_dir: out.to_path_buf(),
        ..PipelineConfig::default()
    }
}

fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<PathBuf> =
            fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, hash_file(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn full_pipeline_recovers_planted_steps() {
    let dir = tempfile::tempdir().unwrap();
    let task_dir = dir.path().join("task");
    write_task_dir(&fixture_spec(), &task_dir).unwrap();
    let cfg = config_for(&task_dir, &dir.path().join("out"));
    let outcomes = pipeline::run(&cfg, Stage::All, false).unwrap();
    assert_eq!(outcomes.len(), 6);
    assert!(outcomes.iter().all(|o| o.ran));

    let (precision, recall, f1, iou) =
        pipeline::read_report_csv(&cfg.output_dir.join("eval/report.csv")).unwrap();
    eprintln!("synth-A: precision={precision} recall={recall} f1={f1} iou={iou}");
    assert!(f1 >= 0.85, "f1 = {f1}");
    assert!(iou >= 0.70, "iou = {iou}");

    // the order stage emits the global line plus one line per video
    let order = fs::read_to_string(cfg.output_dir.join("order/order.txt")).unwrap();
    assert!(order.lines().any(|l| l.starts_with("global: ")));
    assert_eq!(order.lines().filter(|l| l.starts_with("synth-A-")).count(), 6);
}

#[test]
fn rerun_skips_unchanged_stages() {
    let dir = tempfile::tempdir().unwrap();
    let task_dir = dir.path().join("task");
    // a smaller task keeps this test quick
    let spec = SynthSpec {
        task_name: "small".into(),
        videos: 3,
        clips_per_step: (2, 4),
        ..SynthSpec::default()
    };
    write_task_dir(&spec, &task_dir).unwrap();
    let cfg = config_for(&task_dir, &dir.path().join("out"));

    let first = pipeline::run(&cfg, Stage::All, false).unwrap();
    assert!(first.iter().all(|o| o.ran));
    let before = hash_tree(&cfg.output_dir.join("graph"));

    let second = pipeline::run(&cfg, Stage::All, false).unwrap();
    assert!(second.iter().all(|o| !o.ran), "{second:?}");
    assert_eq!(before, hash_tree(&cfg.output_dir.join("graph")));

    // force reruns everything and reproduces identical bytes
    let forced = pipeline::run(&cfg, Stage::Graph, true).unwrap();
    assert!(forced[0].ran);
    assert_eq!(before, hash_tree(&cfg.output_dir.join("graph")));

    // changing a semantic config field invalidates downstream stages
    let mut changed = cfg.clone();
    changed.walk.walks_per_node = 5;
    let rerun = pipeline::run(&changed, Stage::All, false).unwrap();
    let ran: Vec<&str> = rerun.iter().filter(|o| o.ran).map(|o| o.stage.name()).collect();
    assert!(!rerun[0].ran, "filter config unchanged");
    assert!(!rerun[1].ran, "graph config unchanged");
    assert!(ran.contains(&"embed"));
    assert!(ran.contains(&"cluster"));
}

#[test]
fn eval_without_annotations_is_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let task_dir = dir.path().join("task");
    let spec = SynthSpec {
        task_name: "noann".into(),
        videos: 2,
        clips_per_step: (2, 3),
        ..SynthSpec::default()
    };
    write_task_dir(&spec, &task_dir).unwrap();
    // strip annotations from the manifest
    let manifest_path = task_dir.join("manifest.toml");
    let raw = fs::read_to_string(&manifest_path).unwrap();
    let stripped: String = raw.lines().filter(|l| !l.starts_with("annotations")).map(|l| format!("{l}\n")).collect();
    fs::write(&manifest_path, stripped).unwrap();

    let cfg = config_for(&task_dir, &dir.path().join("out"));
    // `all` runs without eval and warns
    let outcomes = pipeline::run(&cfg, Stage::All, false).unwrap();
    assert_eq!(outcomes.len(), 5);
    let err = pipeline::run(&cfg, Stage::Eval, false).unwrap_err();
    match err {
        Error::MissingArtifact(msg) => assert!(msg.contains("noann"), "{msg}"),
        other => panic!("expected MissingArtifact, got {other}"),
    }
}

#[test]
fn stage_needs_upstream_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let task_dir = dir.path().join("task");
    let spec = SynthSpec {
        task_name: "tiny".into(),
        videos: 2,
        clips_per_step: (2, 3),
        ..SynthSpec::default()
    };
    write_task_dir(&spec, &task_dir).unwrap();
    let cfg = config_for(&task_dir, &dir.path().join("out"));
    let err = pipeline::run(&cfg, Stage::Cluster, false).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact(_)));
}

#[test]
fn config_hash_tracks_semantic_fields_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_for(&dir.path().join("task"), &dir.path().join("out"));
    let base = cfg.config_hash();

    let mut moved = cfg.clone();
    moved.output_dir = dir.path().join("elsewhere");
    moved.manifest = dir.path().join("other/manifest.toml");
    assert_eq!(base, moved.config_hash());

    let mut tau = cfg.clone();
    tau.background.tau = 0.25;
    assert_ne!(base, tau.config_hash());

    let mut seed = cfg.clone();
    seed.walk.rng_seed = 1;
    assert_ne!(base, seed.config_hash());

    let mut k = cfg.clone();
    k.cluster.k = Some(3);
    assert_ne!(base, k.config_hash());
}

#[test]
fn projection_export_separates_planted_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let task_dir = dir.path().join("task");
    let spec = SynthSpec { task_name: "proj".into(), videos: 4, ..SynthSpec::default() };
    write_task_dir(&spec, &task_dir).unwrap();
    let cfg = config_for(&task_dir, &dir.path().join("out"));
    pipeline::run(&cfg, Stage::All, false).unwrap();
    let path = pipeline::export_projection(&cfg).unwrap();

    let raw = fs::read_to_string(&path).unwrap();
    let mut by_cluster: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for line in raw.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        by_cluster
            .entry(f[2].parse().unwrap())
            .or_default()
            .push((f[3].parse().unwrap(), f[4].parse().unwrap()));
    }
    assert!(by_cluster.len() > 1);
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut intra = (0.0, 0u64);
    let mut inter = (0.0, 0u64);
    let all: Vec<(u32, (f64, f64))> = by_cluster
        .iter()
        .flat_map(|(c, pts)| pts.iter().map(move |&p| (*c, p)))
        .collect();
    for i in 0..all.len() {
        for j in (i + 1)..all.len() {
            let d = dist(all[i].1, all[j].1);
            if all[i].0 == all[j].0 {
                intra.0 += d;
                intra.1 += 1;
            } else {
                inter.0 += d;
                inter.1 += 1;
            }
        }
    }
    let intra_mean = intra.0 / intra.1 as f64;
    let inter_mean = inter.0 / inter.1 as f64;
    assert!(
        intra_mean < inter_mean,
        "intra {intra_mean} >= inter {inter_mean}"
    );
}

#[test]
fn trained_embeddings_preserve_graph_neighborhoods() {
    use gpl_core::background::filter_background;
    use gpl_core::embedding::{generate_walks, train_skipgram, TransitionTables};
    use gpl_core::graph::{build_unity_graph, SpatialWeight};
    use gpl_core::synth::generate_task;
    use rand::{Rng, SeedableRng};

    let task = generate_task(&fixture_spec()).unwrap();
    let kept: Vec<_> = task
        .features
        .iter()
        .zip(&task.masks)
        .map(|(vf, mask)| filter_background(vf, mask, 0.5).unwrap().0)
        .collect();
    let (graph, _) = build_unity_graph(&kept, SpatialWeight::Unit).unwrap();
    let walk_cfg = gpl_core::embedding::WalkConfig::default();
    let tables = TransitionTables::build(&graph, walk_cfg.p, walk_cfg.q, false).unwrap();
    let corpus = generate_walks(&graph, &tables, &walk_cfg).unwrap();
    let emb =
        train_skipgram(&corpus, &gpl_core::embedding::TrainConfig::default(), graph.node_count())
            .unwrap();

    let cosine = |a: &[f64], b: &[f64]| -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let ordinal = |id| graph.ordinal_of(id).unwrap();
    let mut edge_sum = 0.0;
    for e in &graph.edges {
        edge_sum += cosine(emb.input_row(ordinal(e.a)), emb.input_row(ordinal(e.b)));
    }
    let edge_mean = edge_sum / graph.edges.len() as f64;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let n = graph.node_count();
    let mut non_adjacent_sum = 0.0;
    let mut sampled = 0;
    while sampled < 1000 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || graph.adjacency[a].iter().any(|nb| nb.node == b) {
            continue;
        }
        non_adjacent_sum += cosine(emb.input_row(a), emb.input_row(b));
        sampled += 1;
    }
    let non_adjacent_mean = non_adjacent_sum / 1000.0;
    assert!(
        edge_mean > non_adjacent_mean,
        "edge mean {edge_mean} <= non-adjacent mean {non_adjacent_mean}"
    );
    eprintln!("neighborhood preservation: edges {edge_mean:.4} vs non-adjacent {non_adjacent_mean:.4}");
}

#[test]
fn locked_output_dir_rejects_second_run() {
    let dir = tempfile::tempdir().unwrap();
    let task_dir = dir.path().join("task");
    let spec = SynthSpec {
        task_name: "lock".into(),
        videos: 2,
        clips_per_step: (2, 3),
        ..SynthSpec::default()
    };
    write_task_dir(&spec, &task_dir).unwrap();
    let cfg = config_for(&task_dir, &dir.path().join("out"));
    fs::create_dir_all(&cfg.output_dir).unwrap();
    fs::write(cfg.output_dir.join(".gpl.lock"), b"").unwrap();
    let err = pipeline::run(&cfg, Stage::Filter, false).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    fs::remove_file(cfg.output_dir.join(".gpl.lock")).unwrap();
    pipeline::run(&cfg, Stage::Filter, false).unwrap();
}
