//! Unsupervised refinement of node embeddings: biased random walks over the
//! unity graph feed a skip-gram trainer with negative sampling. The learned
//! vectors replace the original clip features for clustering.

pub mod alias;
pub mod sgns;
pub mod walks;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, UnityGraph};
use crate::io::{expect_eof, expect_magic, read_f32, read_u32};

pub use alias::AliasTable;
pub use sgns::{init_embeddings, pair_grads, pair_loss, train_skipgram};
pub use walks::{
    biased_weights, generate_walks, single_walk, transition_distribution, TransitionTables,
    WalkCorpus,
};

const EMBEDDING_MAGIC: &[u8; 4] = b"UGE1";
const EMBEDDING_VERSION: u32 = 1;

/// Biased-walk parameters: return bias `p`, in-out bias `q`, walk length and
/// walks per start node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    pub p: f64,
    pub q: f64,
    pub walk_length: u32,
    pub walks_per_node: u32,
    pub rng_seed: u64,
    /// Recompute transition tables per step instead of caching them all.
    /// Trades CPU for memory; the sampled walks are identical.
    pub on_the_fly: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p: 1.0,
            q: 0.5,
            walk_length: 80,
            walks_per_node: 10,
            rng_seed: 42,
            on_the_fly: false,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p <= 0.0 || self.q <= 0.0 {
            return Err(Error::Config(format!("p and q must be positive (p={}, q={})", self.p, self.q)));
        }
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be >= 2".into()));
        }
        if self.walks_per_node < 1 {
            return Err(Error::Config("walks_per_node must be >= 1".into()));
        }
        Ok(())
    }
}

/// Skip-gram training parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub out_dim: u32,
    pub window: u32,
    pub negatives: u32,
    pub epochs: u32,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            out_dim: 128,
            window: 10,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            rng_seed: 42,
        }
    }
}

impl TrainConfig {
    /// Zero epochs is allowed here (training is then the identity on the
    /// seeded init); the pipeline config additionally requires epochs >= 1.
    pub fn validate(&self) -> Result<()> {
        if self.out_dim < 2 {
            return Err(Error::Config("out_dim must be >= 2".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.negatives < 1 {
            return Err(Error::Config("negatives must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Trained node vectors: the input matrix is the output of the stage, the
/// context matrix only exists during training.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub n: usize,
    pub dim: usize,
    /// Row-major n x dim.
    pub input: Vec<f64>,
    /// Row-major n x dim.
    pub context: Vec<f64>,
}

impl NodeEmbeddings {
    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn context_row(&self, i: usize) -> &[f64] {
        &self.context[i * self.dim..(i + 1) * self.dim]
    }
}

/// Write an embedding matrix with its node ids: magic `UGE1`, version, `N`,
/// `d`, `N` id records of (video, clip) u32 pairs, `N*d` f32 LE values.
/// Values are stored in f32; training precision beyond that is dropped.
pub fn dump_embeddings(matrix: &[f32], dim: usize, ids: &[NodeId], path: &Path) -> Result<()> {
    if matrix.len() != ids.len() * dim {
        return Err(Error::Dimension(format!(
            "{} values for {} ids of dim {}",
            matrix.len(),
            ids.len(),
            dim
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(ids.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for id in ids {
        w.write_all(&id.video_index.to_le_bytes())?;
        w.write_all(&id.clip_index.to_le_bytes())?;
    }
    for x in matrix {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<(Vec<f32>, usize, Vec<NodeId>)> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, EMBEDDING_MAGIC, "embedding file")?;
    let version = read_u32(&mut r, "version")?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("embedding file: unsupported version {version}")));
    }
    let n = read_u32(&mut r, "node count")? as usize;
    let dim = read_u32(&mut r, "embedding dim")? as usize;
    if dim < 1 {
        return Err(Error::Format("embedding file: dim must be >= 1".into()));
    }
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let video_index = read_u32(&mut r, "node video")?;
        let clip_index = read_u32(&mut r, "node clip")?;
        ids.push(NodeId { video_index, clip_index });
    }
    let mut matrix = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        matrix.push(read_f32(&mut r, "embedding payload")?);
    }
    expect_eof(&mut r, "embedding file")?;
    Ok((matrix, dim, ids))
}

/// Debug dump: one walk per line, space-separated `video:clip` tokens.
pub fn dump_walks(corpus: &WalkCorpus, graph: &UnityGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for walk in &corpus.walks {
        let mut first = true;
        for &ordinal in walk {
            if !first {
                write!(w, " ")?;
            }
            write!(w, "{}", graph.nodes[ordinal].id)?;
            first = false;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.uge");
        let ids = vec![
            NodeId { video_index: 0, clip_index: 0 },
            NodeId { video_index: 0, clip_index: 3 },
            NodeId { video_index: 1, clip_index: 1 },
        ];
        let matrix: Vec<f32> = (0..6).map(|i| i as f32 * 0.25 - 0.7).collect();
        dump_embeddings(&matrix, 2, &ids, &path).unwrap();
        let (loaded, dim, loaded_ids) = load_embeddings(&path).unwrap();
        assert_eq!(loaded, matrix);
        assert_eq!(dim, 2);
        assert_eq!(loaded_ids, ids);
    }

    #[test]
    fn embedding_file_truncation_is_dimension_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.uge");
        let ids = vec![NodeId { video_index: 0, clip_index: 0 }];
        dump_embeddings(&[1.0, 2.0], 2, &ids, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::Dimension(_))));
    }

    #[test]
    fn dump_rejects_mismatched_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.uge");
        let ids = vec![NodeId { video_index: 0, clip_index: 0 }];
        assert!(matches!(
            dump_embeddings(&[1.0, 2.0, 3.0], 2, &ids, &path),
            Err(Error::Dimension(_))
        ));
    }
}
