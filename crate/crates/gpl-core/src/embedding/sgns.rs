//! Skip-gram with negative sampling over walk corpora.
//!
//! For a center node c and context node o the step maximizes
//! `ln sigmoid(u_o . v_c) + sum_i ln sigmoid(-u_{n_i} . v_c)` with negatives
//! n_i drawn from the corpus unigram distribution raised to 3/4. Training is
//! plain SGD with the learning rate decaying linearly to 1/100 of its start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::alias::AliasTable;
use super::walks::WalkCorpus;
use super::{NodeEmbeddings, TrainConfig};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective value for one (center, positive, negatives) triple.
pub fn pair_loss(v_c: &[f64], u_o: &[f64], u_neg: &[&[f64]]) -> f64 {
    let mut loss = sigmoid(dot(u_o, v_c)).ln();
    for u_n in u_neg {
        loss += sigmoid(-dot(u_n, v_c)).ln();
    }
    loss
}

/// Analytic gradients of `pair_loss` with respect to v_c, u_o and each u_n.
pub fn pair_grads(v_c: &[f64], u_o: &[f64], u_neg: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let d = v_c.len();
    let g_pos = 1.0 - sigmoid(dot(u_o, v_c));
    let mut grad_v: Vec<f64> = u_o.iter().map(|&x| g_pos * x).collect();
    let grad_o: Vec<f64> = v_c.iter().map(|&x| g_pos * x).collect();
    let mut grads_neg = Vec::with_capacity(u_neg.len());
    for u_n in u_neg {
        let g_neg = -sigmoid(dot(u_n, v_c));
        for j in 0..d {
            grad_v[j] += g_neg * u_n[j];
        }
        grads_neg.push(v_c.iter().map(|&x| g_neg * x).collect());
    }
    (grad_v, grad_o, grads_neg)
}

/// Deterministic uniform init of the input matrix in [-0.5/d, 0.5/d];
/// the context matrix starts at zero.
pub fn init_embeddings(n: usize, dim: usize, seed: u64) -> NodeEmbeddings {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 / dim as f64;
    let input = (0..n * dim).map(|_| rng.random_range(-half..half)).collect();
    NodeEmbeddings { n, dim, input, context: vec![0.0; n * dim] }
}

fn unigram_table(corpus: &WalkCorpus, n: usize) -> Result<AliasTable> {
    let mut counts = vec![0u64; n];
    for walk in &corpus.walks {
        for &node in walk {
            if node >= n {
                return Err(Error::Dimension(format!(
                    "corpus references node {node}, but only {n} nodes exist"
                )));
            }
            counts[node] += 1;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config("walk corpus is empty".into()));
    }
    Ok(AliasTable::new(&weights))
}

/// Train embeddings for `n` nodes from a walk corpus.
pub fn train_skipgram(corpus: &WalkCorpus, cfg: &TrainConfig, n: usize) -> Result<NodeEmbeddings> {
    cfg.validate()?;
    if corpus.walks.is_empty() {
        return Err(Error::Config("walk corpus is empty".into()));
    }
    let dim = cfg.out_dim as usize;
    let mut emb = init_embeddings(n, dim, cfg.rng_seed);
    if cfg.epochs == 0 {
        return Ok(emb);
    }
    let negatives_table = unigram_table(corpus, n)?;
    let mut neg_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    neg_rng.set_stream(u64::MAX); // distinct from init stream 0

    let window = cfg.window as usize;
    let total_tokens = (cfg.epochs as usize * corpus.token_count()) as f64;
    let mut processed = 0usize;
    let mut grad_v = vec![0.0f64; dim];
    let mut negs: Vec<usize> = Vec::with_capacity(cfg.negatives as usize);

    for _epoch in 0..cfg.epochs {
        for walk in &corpus.walks {
            for (i, &center) in walk.iter().enumerate() {
                let lr = cfg.learning_rate * (1.0 - 0.99 * processed as f64 / total_tokens);
                let lo = i.saturating_sub(window);
                let hi = (i + window).min(walk.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let positive = walk[j];
                    negs.clear();
                    while negs.len() < cfg.negatives as usize {
                        let cand = negatives_table.sample(&mut neg_rng);
                        if cand != positive {
                            negs.push(cand);
                        }
                    }
                    sgd_step(&mut emb, center, positive, &negs, lr, &mut grad_v);
                }
                processed += 1;
            }
        }
    }
    if emb.input.iter().chain(emb.context.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "non-finite embedding parameter after training; lower the learning rate".into(),
        ));
    }
    Ok(emb)
}

fn sgd_step(
    emb: &mut NodeEmbeddings,
    center: usize,
    positive: usize,
    negatives: &[usize],
    lr: f64,
    grad_v: &mut [f64],
) {
    let d = emb.dim;
    grad_v.fill(0.0);
    {
        let v_c = &emb.input[center * d..(center + 1) * d];
        let u_o = &emb.context[positive * d..(positive + 1) * d];
        let g = (1.0 - sigmoid(dot(u_o, v_c))) * lr;
        for j in 0..d {
            grad_v[j] += g * u_o[j];
        }
        let scaled: Vec<f64> = v_c.iter().map(|&x| g * x).collect();
        for (j, s) in scaled.into_iter().enumerate() {
            emb.context[positive * d + j] += s;
        }
    }
    for &neg in negatives {
        let v_c = &emb.input[center * d..(center + 1) * d];
        let u_n = &emb.context[neg * d..(neg + 1) * d];
        let g = -sigmoid(dot(u_n, v_c)) * lr;
        for j in 0..d {
            grad_v[j] += g * u_n[j];
        }
        let scaled: Vec<f64> = v_c.iter().map(|&x| g * x).collect();
        for (j, s) in scaled.into_iter().enumerate() {
            emb.context[neg * d + j] += s;
        }
    }
    for j in 0..d {
        emb.input[center * d + j] += grad_v[j];
    }
}
