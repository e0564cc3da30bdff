//! Synthetic citation-like datasets: a planted partition with homophilous
//! edges and sparse binary bag-of-words features drawn from per-class topics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::io::{DatasetMeta, NodeDataset, Split};
use crate::linalg::SparseMatrix;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub name: String,
    pub n: usize,
    pub classes: usize,
    pub vocabulary: usize,
    pub words_per_node: usize,
    /// Probability that a word comes from the node's class topic rather than
    /// the whole vocabulary.
    pub topic_purity: f64,
    pub mean_degree: f64,
    /// Fraction of edges joining nodes of the same class.
    pub homophily: f64,
    pub train_per_class: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            n: 600,
            classes: 5,
            vocabulary: 300,
            words_per_node: 12,
            topic_purity: 0.3,
            mean_degree: 4.0,
            homophily: 0.8,
            train_per_class: 20,
            n_val: 150,
            n_test: 300,
            seed: 0,
        }
    }
}

/// A generated dataset and its observed graph.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: NodeDataset,
    pub graph: AdjacencyMatrix,
}

pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    let c = cfg.classes;
    if c == 0 || cfg.n < c || cfg.vocabulary < c || cfg.words_per_node == 0 {
        return Err(Error::Config("synthetic: need n >= classes >= 1, vocabulary >= classes, words >= 1".into()));
    }
    if cfg.train_per_class * c + cfg.n_val + cfg.n_test > cfg.n {
        return Err(Error::Config("synthetic: split larger than n".into()));
    }
    if !(0.0..=1.0).contains(&cfg.topic_purity) || !(0.0..=1.0).contains(&cfg.homophily) {
        return Err(Error::Config("synthetic: purity and homophily must lie in [0, 1]".into()));
    }
    let mut rng = rng::seeded(cfg.seed);
    let n = cfg.n;
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let topic = cfg.vocabulary / c;
    let mut triplets = Vec::with_capacity(n * cfg.words_per_node);
    for (i, &l) in labels.iter().enumerate() {
        let mut words: Vec<usize> = (0..cfg.words_per_node)
            .map(|_| {
                if rng.gen::<f64>() < cfg.topic_purity {
                    l * topic + rng.gen_range(0..topic)
                } else {
                    rng.gen_range(0..cfg.vocabulary)
                }
            })
            .collect();
        words.sort_unstable();
        words.dedup();
        triplets.extend(words.into_iter().map(|w| (i, w, 1.0)));
    }
    let features = SparseMatrix::from_triplets(n, cfg.vocabulary, &triplets)?;

    let target = (cfg.mean_degree * n as f64 / 2.0).round() as usize;
    let max_edges = n * (n - 1) / 2;
    let mut edges = std::collections::BTreeSet::new();
    let mut attempts = 0;
    while edges.len() < target.min(max_edges) && attempts < 50 * target + 100 {
        attempts += 1;
        let u = rng.gen_range(0..n);
        let v = if rng.gen::<f64>() < cfg.homophily {
            *by_class[labels[u]].choose(&mut rng).expect("nonempty class")
        } else {
            rng.gen_range(0..n)
        };
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let edge_list: Vec<_> = edges.into_iter().map(|(u, v)| (u, v, 1.0)).collect();
    let graph = AdjacencyMatrix::from_undirected_edges(n, &edge_list)?;

    let mut split = vec![Split::Unused; n];
    let mut rest = Vec::new();
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            if k < cfg.train_per_class {
                split[i] = Split::Train;
            } else {
                rest.push(i);
            }
        }
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    for &i in &rest[..cfg.n_val] {
        split[i] = Split::Val;
    }
    for &i in &rest[cfg.n_val..cfg.n_val + cfg.n_test] {
        split[i] = Split::Test;
    }

    let dataset = NodeDataset {
        meta: DatasetMeta {
            n,
            d: cfg.vocabulary,
            c,
            n_train: cfg.train_per_class * c,
            n_val: cfg.n_val,
            n_test: cfg.n_test,
            name: cfg.name.clone(),
        },
        features,
        labels: labels.into_iter().map(Some).collect(),
        split,
    };
    dataset
        .validate()
        .map_err(|m| Error::Config(format!("synthetic dataset invalid: {m}")))?;
    Ok(Synthetic { dataset, graph })
}

/// Writes the dataset files and `graph.adj` into `dir`.
pub fn write(s: &Synthetic, dir: impl AsRef<std::path::Path>) -> Result<()> {
    let dir = dir.as_ref();
    crate::io::save_dataset(&s.dataset, dir)?;
    crate::io::export_adjacency(&s.graph, crate::io::graph_path(dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generates_consistent_datasets() {
        let cfg = SynthConfig {
            n: 200,
            classes: 4,
            n_val: 40,
            n_test: 80,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let ds = &s.dataset;
        assert_eq!(ds.train().len(), 80);
        assert_eq!(ds.val().len(), 40);
        assert_eq!(ds.test().len(), 80);
        assert!(s.graph.is_symmetric());
        let labels = ds.dense_labels();
        let same: usize = s.graph.weights().iter().filter(|&(i, j, _)| labels[i] == labels[j]).count();
        assert!(same as f64 / s.graph.nnz() as f64 > 0.7);
        let again = generate(&cfg).unwrap();
        assert_eq!(again.dataset, s.dataset);
        assert_eq!(again.graph, s.graph);
    }

    #[test]
    fn round_trips_through_files() {
        let s = generate(&SynthConfig {
            n: 60,
            classes: 3,
            n_val: 10,
            n_test: 10,
            train_per_class: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write(&s, dir.path()).unwrap();
        assert_eq!(crate::io::load_dataset(dir.path()).unwrap(), s.dataset);
        let (g, _) = crate::io::import_adjacency(crate::io::graph_path(dir.path()), Some(60)).unwrap();
        assert_eq!(g, s.graph);
    }
}
