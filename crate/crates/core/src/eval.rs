//! Accuracy, k-fold cross-validation and nearest-neighbor queries over the
//! learned word vectors.

use std::fmt::Write as _;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, Dataset, Example, FoldPlan, Vocabulary, PAD_ID};
use crate::embed::EmbeddingChannel;
use crate::net::{self, argmax_first, Mode, ModelParams, NetError};
use crate::optim::{self, TrainConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty example set")]
    Empty,
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("dataset has a standard test split; cross-validation does not apply")]
    HasTestSplit,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<optim::OptimError> },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Predicted class (smallest index on ties) and class probabilities.
pub fn predict(params: &ModelParams, token_ids: &[u32]) -> Result<(usize, Vec<f64>)> {
    let (logits, _) = net::forward(params, token_ids, Mode::Inference)?;
    let (_, class) = argmax_first(&logits);
    Ok((class, net::softmax(&logits)))
}

/// Fraction of `examples` whose predicted class equals the label.
pub fn accuracy(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = examples
        .par_iter()
        .map(|ex| predict(params, &ex.token_ids).map(|(class, _)| usize::from(class == ex.label)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / examples.len() as f64)
}

fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Stable identifier of a fold plan.
pub fn fold_plan_hash(plan: &FoldPlan) -> String {
    short_hash(plan.to_tsv().as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub config_fingerprint: String,
    pub fold_plan_hash: String,
    pub seed: u64,
}

impl CvReport {
    pub fn from_folds(fold_accuracies: Vec<f64>, config: &TrainConfig, plan: &FoldPlan) -> Self {
        let mean = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
        CvReport {
            fold_accuracies,
            mean,
            config_fingerprint: short_hash(config.to_text().as_bytes()),
            fold_plan_hash: fold_plan_hash(plan),
            seed: config.seed,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# seed={} config={} folds={}\nfold,accuracy\n", self.seed, self.config_fingerprint, self.fold_plan_hash);
        for (f, a) in self.fold_accuracies.iter().enumerate() {
            let _ = writeln!(s, "{f},{a:.6}");
        }
        let _ = writeln!(s, "mean,{:.6}", self.mean);
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "seed\t{}\nconfig\t{}\nfold_plan\t{}\n",
            self.seed, self.config_fingerprint, self.fold_plan_hash
        );
        for (f, a) in self.fold_accuracies.iter().enumerate() {
            let _ = writeln!(s, "fold{f}\t{a:.6}");
        }
        let _ = writeln!(s, "mean\t{:.6}", self.mean);
        s
    }
}

/// k-fold cross-validation. Every fold starts from a copy of `initial`,
/// trains on the other folds minus a dev split carved from them, and is
/// scored on its own examples. The fold plan depends only on the dataset
/// size and `config.seed`, so every variant sees the same folds.
pub fn run_cross_validation(dataset: &Dataset, initial: &ModelParams, config: &TrainConfig) -> Result<CvReport> {
    if dataset.split.as_ref().is_some_and(|s| !s.test.is_empty()) {
        return Err(EvalError::HasTestSplit);
    }
    let plan = corpus::assign_folds(dataset.len(), config.folds, config.seed)?;
    let accuracies = (0..plan.n_folds())
        .into_par_iter()
        .map(|fold| {
            let wrap = |e: optim::OptimError| EvalError::Fold { fold, source: Box::new(e) };
            let (train_idx, dev_idx) = corpus::select_dev_split(&plan.train_indices(fold), config.dev_fraction, config.seed)?;
            let train = dataset.subset(&train_idx);
            let dev = dataset.subset(&dev_idx);
            let outcome = optim::fit(initial.clone(), &train, &dev, config).map_err(wrap)?;
            let acc = accuracy(&outcome.params, &dataset.subset(&plan.test_indices(fold)))?;
            log::info!("fold {fold}: best epoch {} test accuracy {acc:.4}", outcome.best_epoch);
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CvReport::from_folds(accuracies, config, &plan))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub word: String,
    pub cosine: f64,
}

/// Cosine similarity, defined as -1 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = net::l2_norm(a);
    let nb = net::l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return -1.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// The `count` words most cosine-similar to `query` in `channel`, excluding
/// the query and the padding token. Ties rank the smaller id first.
pub fn nearest_neighbors(channel: &EmbeddingChannel, vocab: &Vocabulary, query: &str, count: usize) -> Result<Vec<Neighbor>> {
    let qid = vocab.id(query).filter(|&id| id != PAD_ID).ok_or_else(|| EvalError::UnknownWord(query.to_string()))?;
    let q = channel.row(qid);
    let mut scored: Vec<(f64, u32)> = (1..channel.vocab_size() as u32)
        .filter(|&id| id != qid)
        .map(|id| (cosine(q, channel.row(id)), id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(count)
        .map(|(cosine, id)| Neighbor { word: vocab.word(id).unwrap_or_default().to_string(), cosine })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborColumn {
    pub label: String,
    pub neighbors: Vec<Neighbor>,
}

/// Side-by-side neighbor lists of one query word, one column per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborReport {
    pub query: String,
    pub columns: Vec<NeighborColumn>,
}

impl NeighborReport {
    /// Columns are labelled `static` / `non-static` by trainability.
    pub fn for_model(params: &ModelParams, vocab: &Vocabulary, query: &str, count: usize) -> Result<Self> {
        let columns = params
            .channels
            .iter()
            .map(|ch| {
                Ok(NeighborColumn {
                    label: if ch.trainable { "non-static" } else { "static" }.to_string(),
                    neighbors: nearest_neighbors(ch, vocab, query, count)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(NeighborReport { query: query.to_string(), columns })
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("rank");
        for col in &self.columns {
            let _ = write!(s, "\t{}\tcosine", col.label);
        }
        s.push('\n');
        let rows = self.columns.iter().map(|c| c.neighbors.len()).max().unwrap_or(0);
        for r in 0..rows {
            let _ = write!(s, "{}", r + 1);
            for col in &self.columns {
                match col.neighbors.get(r) {
                    Some(n) => {
                        let _ = write!(s, "\t{}\t{:.3}", n.word, n.cosine);
                    }
                    None => s.push_str("\t\t"),
                }
            }
            s.push('\n');
        }
        s
    }
}
