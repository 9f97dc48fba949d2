//! Order discovered clusters by average normalized time, globally and per
//! video.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Whether per-video orders use that video's own average times or the
/// global averages restricted to the clusters present in the video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    #[default]
    Global,
    PerVideo,
}

/// One clustered clip with its normalized time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterMember {
    pub id: NodeId,
    pub time: f64,
    pub cluster: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyStepResult {
    pub mode: OrderingMode,
    /// Non-empty clusters sorted by ascending average time, ties by id.
    pub global_order: Vec<u32>,
    /// Keyed by video index; each lists the clusters present in that video.
    pub per_video_orders: BTreeMap<u32, Vec<u32>>,
    pub cluster_avg_time: BTreeMap<u32, f64>,
    pub per_video_avg_time: BTreeMap<u32, BTreeMap<u32, f64>>,
    /// Clusters with no members anywhere, reported for diagnostics.
    pub empty_clusters: Vec<u32>,
}

fn order_by_time(avg: &BTreeMap<u32, f64>) -> Vec<u32> {
    let mut order: Vec<u32> = avg.keys().copied().collect();
    order.sort_by(|a, b| {
        avg[a].partial_cmp(&avg[b]).expect("times are finite").then(a.cmp(b))
    });
    order
}

/// Average member times per cluster and sort ascending.
pub fn order_keysteps(members: &[ClusterMember], k: u32, mode: OrderingMode) -> Result<KeyStepResult> {
    for m in members {
        if !(0.0..=1.0).contains(&m.time) {
            return Err(Error::Range(format!("normalized time {} outside [0, 1]", m.time)));
        }
        if m.cluster >= k {
            return Err(Error::Range(format!("cluster id {} >= k {}", m.cluster, k)));
        }
    }

    let mut global_sum: BTreeMap<u32, (f64, u64)> = BTreeMap::new();
    let mut video_sum: BTreeMap<u32, BTreeMap<u32, (f64, u64)>> = BTreeMap::new();
    for m in members {
        let e = global_sum.entry(m.cluster).or_insert((0.0, 0));
        e.0 += m.time;
        e.1 += 1;
        let e = video_sum
            .entry(m.id.video_index)
            .or_default()
            .entry(m.cluster)
            .or_insert((0.0, 0));
        e.0 += m.time;
        e.1 += 1;
    }

    let cluster_avg_time: BTreeMap<u32, f64> =
        global_sum.iter().map(|(&c, &(s, n))| (c, s / n as f64)).collect();
    let global_order = order_by_time(&cluster_avg_time);
    let empty_clusters: Vec<u32> =
        (0..k).filter(|c| !cluster_avg_time.contains_key(c)).collect();
    if !empty_clusters.is_empty() {
        log::info!("{} cluster(s) have no members: {:?}", empty_clusters.len(), empty_clusters);
    }

    let mut per_video_orders = BTreeMap::new();
    let mut per_video_avg_time = BTreeMap::new();
    for (video, sums) in &video_sum {
        let avg: BTreeMap<u32, f64> =
            sums.iter().map(|(&c, &(s, n))| (c, s / n as f64)).collect();
        let order = match mode {
            OrderingMode::PerVideo => order_by_time(&avg),
            OrderingMode::Global => {
                global_order.iter().copied().filter(|c| avg.contains_key(c)).collect()
            }
        };
        per_video_orders.insert(*video, order);
        per_video_avg_time.insert(*video, avg);
    }

    Ok(KeyStepResult {
        mode,
        global_order,
        per_video_orders,
        cluster_avg_time,
        per_video_avg_time,
        empty_clusters,
    })
}

/// Structured text report: the global line, then one line per video with
/// average times to four decimals.
pub fn write_order_report(
    result: &KeyStepResult,
    video_names: &BTreeMap<u32, String>,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mode = match result.mode {
        OrderingMode::Global => "global",
        OrderingMode::PerVideo => "per_video",
    };
    writeln!(w, "# key-step order (per-video mode: {mode})")?;
    if !result.empty_clusters.is_empty() {
        writeln!(w, "# empty clusters: {:?}", result.empty_clusters)?;
    }
    let line = |order: &[u32], avg: &BTreeMap<u32, f64>| -> String {
        order
            .iter()
            .map(|c| format!("{}({:.4})", c, avg[c]))
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(w, "global: {}", line(&result.global_order, &result.cluster_avg_time))?;
    for (video, order) in &result.per_video_orders {
        let name = video_names
            .get(video)
            .cloned()
            .unwrap_or_else(|| format!("video{video}"));
        writeln!(w, "{}: {}", name, line(order, &result.per_video_avg_time[video]))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(video: u32, clip: u32, time: f64, cluster: u32) -> ClusterMember {
        ClusterMember { id: NodeId { video_index: video, clip_index: clip }, time, cluster }
    }

    #[test]
    fn averages_and_order() {
        let members = [
            member(0, 0, 0.1, 0),
            member(0, 1, 0.2, 0),
            member(0, 2, 0.5, 1),
        ];
        let res = order_keysteps(&members, 2, OrderingMode::Global).unwrap();
        assert!((res.cluster_avg_time[&0] - 0.15).abs() < 1e-12);
        assert!((res.cluster_avg_time[&1] - 0.5).abs() < 1e-12);
        assert_eq!(res.global_order, vec![0, 1]);
        assert!(res.empty_clusters.is_empty());
    }

    #[test]
    fn ties_fall_back_to_cluster_id() {
        let members = [
            member(0, 0, 0.4, 2),
            member(0, 1, 0.4, 0),
            member(0, 2, 0.4, 1),
        ];
        let res = order_keysteps(&members, 3, OrderingMode::Global).unwrap();
        assert_eq!(res.global_order, vec![0, 1, 2]);
    }

    #[test]
    fn per_video_orders_diverge() {
        let members = [
            member(0, 0, 0.8, 0),
            member(0, 1, 0.1, 1),
            member(1, 0, 0.1, 0),
            member(1, 1, 0.8, 1),
        ];
        let res = order_keysteps(&members, 2, OrderingMode::PerVideo).unwrap();
        assert_eq!(res.per_video_orders[&0], vec![1, 0]);
        assert_eq!(res.per_video_orders[&1], vec![0, 1]);
        // global averages tie at 0.45, id order breaks the tie
        assert_eq!(res.global_order, vec![0, 1]);

        let global_mode = order_keysteps(&members, 2, OrderingMode::Global).unwrap();
        assert_eq!(global_mode.per_video_orders[&0], vec![0, 1]);
        assert_eq!(global_mode.per_video_orders[&1], vec![0, 1]);
    }

    #[test]
    fn empty_clusters_reported_and_omitted() {
        let members = [member(0, 0, 0.3, 1)];
        let res = order_keysteps(&members, 3, OrderingMode::Global).unwrap();
        assert_eq!(res.global_order, vec![1]);
        assert_eq!(res.empty_clusters, vec![0, 2]);
    }

    #[test]
    fn single_video_global_equals_per_video() {
        let members = [
            member(0, 0, 0.9, 0),
            member(0, 1, 0.2, 1),
            member(0, 2, 0.4, 2),
        ];
        let g = order_keysteps(&members, 3, OrderingMode::Global).unwrap();
        let p = order_keysteps(&members, 3, OrderingMode::PerVideo).unwrap();
        assert_eq!(g.global_order, p.per_video_orders[&0]);
        assert_eq!(g.global_order, g.per_video_orders[&0]);
    }

    #[test]
    fn shifting_cluster_later_never_moves_it_earlier() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let k = rng.random_range(2..5u32);
            let members: Vec<ClusterMember> = (0..20)
                .map(|i| member(0, i, rng.random_range(0.0..0.8), rng.random_range(0..k)))
                .collect();
            let res = order_keysteps(&members, k, OrderingMode::Global).unwrap();
            let target = rng.random_range(0..k);
            if !res.cluster_avg_time.contains_key(&target) {
                continue;
            }
            let delta = rng.random_range(0.0..0.2);
            let shifted: Vec<ClusterMember> = members
                .iter()
                .map(|m| {
                    let mut m = *m;
                    if m.cluster == target {
                        m.time += delta;
                    }
                    m
                })
                .collect();
            let res2 = order_keysteps(&shifted, k, OrderingMode::Global).unwrap();
            let pos = |order: &[u32]| order.iter().position(|&c| c == target).unwrap();
            assert!(pos(&res2.global_order) >= pos(&res.global_order));
        }
    }

    #[test]
    fn report_format() {
        let members = [member(0, 0, 0.125, 0), member(0, 1, 0.75, 1)];
        let res = order_keysteps(&members, 2, OrderingMode::Global).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("order.txt");
        let names = BTreeMap::from([(0u32, "vid-a".to_string())]);
        write_order_report(&res, &names, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("global: 0(0.1250) 1(0.7500)"));
        assert!(text.contains("vid-a: 0(0.1250) 1(0.7500)"));
    }
}
