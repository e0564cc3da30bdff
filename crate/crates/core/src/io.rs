//! Text formats for datasets and graphs.
//!
//! A dataset directory holds:
//!
//! ```text
//! meta.json     {"n":..,"d":..,"c":..,"n_train":..,"n_val":..,"n_test":..,"name":".."}
//! features.tsv  node<TAB>feat_index<TAB>value   (omitted entries are 0)
//! labels.tsv    node<TAB>label
//! split.tsv     node<TAB>{train|val|test|unused}
//! graph.adj     the observed graph, in the .adj format below
//! ```
//!
//! An `.adj` file starts with `# n=<n> sym={0|1}` and continues with
//! `i<TAB>j<TAB>weight` lines, 0-indexed. Symmetric graphs store the upper
//! triangle only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, AdjacencyMatrix, Diagnostics};
use crate::linalg::SparseMatrix;

pub const META_FILE: &str = "meta.json";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const GRAPH_FILE: &str = "graph.adj";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unused,
}

impl Split {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "unused" => Some(Split::Unused),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unused => "unused",
        }
    }
}

/// Node features, labels and the transductive split.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDataset {
    pub meta: DatasetMeta,
    pub features: SparseMatrix,
    pub labels: Vec<Option<usize>>,
    pub split: Vec<Split>,
}

impl NodeDataset {
    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn num_features(&self) -> usize {
        self.meta.d
    }

    pub fn num_classes(&self) -> usize {
        self.meta.c
    }

    pub fn nodes_in(&self, which: Split) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn train(&self) -> Vec<usize> {
        self.nodes_in(Split::Train)
    }

    pub fn val(&self) -> Vec<usize> {
        self.nodes_in(Split::Val)
    }

    pub fn test(&self) -> Vec<usize> {
        self.nodes_in(Split::Test)
    }

    /// Labels with unlabeled nodes mapped to class 0. Only meaningful on the
    /// labeled masks.
    pub fn dense_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.unwrap_or(0)).collect()
    }

    /// Copy with every feature row scaled to sum to one.
    pub fn with_row_normalized_features(&self) -> NodeDataset {
        NodeDataset {
            features: self.features.row_normalized(),
            ..self.clone()
        }
    }

    /// Checks mask disjointness, split sizes against the metadata, and that
    /// every node in a labeled mask has a label in `[0, c)`.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let m = &self.meta;
        if self.features.shape() != (m.n, m.d) {
            return Err(format!("features are {:?}, metadata says {}x{}", self.features.shape(), m.n, m.d));
        }
        if self.labels.len() != m.n || self.split.len() != m.n {
            return Err("labels/split length differs from n".into());
        }
        let counts = [
            (Split::Train, m.n_train),
            (Split::Val, m.n_val),
            (Split::Test, m.n_test),
        ];
        for (which, expected) in counts {
            let got = self.split.iter().filter(|&&s| s == which).count();
            if got != expected {
                return Err(format!("{} split has {got} nodes, metadata says {expected}", which.as_str()));
            }
        }
        for (i, s) in self.split.iter().enumerate() {
            if *s != Split::Unused {
                match self.labels[i] {
                    Some(l) if l < m.c => {}
                    Some(l) => return Err(format!("node {i} has label {l} outside [0, {})", m.c)),
                    None => return Err(format!("node {i} is in the {} split but has no label", s.as_str())),
                }
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn fields<'a>(path: &Path, line_no: usize, line: &'a str, expected: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("expected {expected} tab-separated fields, found {}", parts.len()),
        });
    }
    Ok(parts)
}

fn parse_num<T: std::str::FromStr>(path: &Path, line_no: usize, s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("invalid {what} {s:?}"),
    })
}

fn invalid(path: &Path, msg: impl Into<String>) -> Error {
    Error::Invalid {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<NodeDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta: DatasetMeta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| invalid(&meta_path, e.to_string()))?;
    let n = meta.n;

    let feat_path = dir.join(FEATURES_FILE);
    let text = read(&feat_path)?;
    let mut triplets = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let f = fields(&feat_path, line_no, line, 3)?;
        let i: usize = parse_num(&feat_path, line_no, f[0], "node")?;
        let j: usize = parse_num(&feat_path, line_no, f[1], "feature index")?;
        let v: f64 = parse_num(&feat_path, line_no, f[2], "value")?;
        if i >= n || j >= meta.d {
            return Err(Error::Parse {
                path: feat_path,
                line: line_no,
                msg: format!("entry ({i}, {j}) outside {n}x{}", meta.d),
            });
        }
        if !v.is_finite() {
            return Err(Error::Parse {
                path: feat_path,
                line: line_no,
                msg: "non-finite value".into(),
            });
        }
        triplets.push((i, j, v));
    }
    let features = SparseMatrix::from_triplets(n, meta.d, &triplets)?;

    let label_path = dir.join(LABELS_FILE);
    let text = read(&label_path)?;
    let mut labels = vec![None; n];
    for (line_no, line) in data_lines(&text) {
        let f = fields(&label_path, line_no, line, 2)?;
        let i: usize = parse_num(&label_path, line_no, f[0], "node")?;
        let l: usize = parse_num(&label_path, line_no, f[1], "label")?;
        if i >= n || l >= meta.c {
            return Err(Error::Parse {
                path: label_path,
                line: line_no,
                msg: format!("node {i} / label {l} out of range"),
            });
        }
        labels[i] = Some(l);
    }

    let split_path = dir.join(SPLIT_FILE);
    let text = read(&split_path)?;
    let mut split = vec![Split::Unused; n];
    for (line_no, line) in data_lines(&text) {
        let f = fields(&split_path, line_no, line, 2)?;
        let i: usize = parse_num(&split_path, line_no, f[0], "node")?;
        if i >= n {
            return Err(Error::Parse {
                path: split_path,
                line: line_no,
                msg: format!("node {i} out of range"),
            });
        }
        split[i] = Split::parse(f[1].trim()).ok_or_else(|| Error::Parse {
            path: split_path.clone(),
            line: line_no,
            msg: format!("unknown split {:?}", f[1]),
        })?;
    }

    let ds = NodeDataset {
        meta,
        features,
        labels,
        split,
    };
    ds.validate().map_err(|msg| invalid(dir, msg))?;
    Ok(ds)
}

/// Writes the four dataset files (not the graph).
pub fn save_dataset(ds: &NodeDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = serde_json::to_string(&ds.meta).expect("meta serializes");
    write(&dir.join(META_FILE), &(meta + "\n"))?;

    let mut out = String::new();
    for (i, j, v) in ds.features.iter() {
        writeln!(out, "{i}\t{j}\t{}", fmt_weight(v)).unwrap();
    }
    write(&dir.join(FEATURES_FILE), &out)?;

    out.clear();
    for (i, l) in ds.labels.iter().enumerate() {
        if let Some(l) = l {
            writeln!(out, "{i}\t{l}").unwrap();
        }
    }
    write(&dir.join(LABELS_FILE), &out)?;

    out.clear();
    for (i, s) in ds.split.iter().enumerate() {
        writeln!(out, "{i}\t{}", s.as_str()).unwrap();
    }
    write(&dir.join(SPLIT_FILE), &out)
}

/// Shortest form for integers, otherwise 17 significant digits.
pub(crate) fn fmt_weight(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.16e}")
    }
}

/// Reads an `.adj` file. Symmetric files (`sym=1`) store each undirected edge
/// once; `sym=0` files are symmetrized as `(M + M^T) / 2`. Diagonal entries are
/// dropped and reported in the returned diagnostics.
pub fn import_adjacency(path: impl AsRef<Path>, expected_n: Option<usize>) -> Result<(AdjacencyMatrix, Diagnostics)> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let (n, sym) = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break parse_header(path, i + 1, l)?,
            None => return Err(Error::Parse { path: path.into(), line: 1, msg: "missing header".into() }),
        }
    };
    if let Some(expected) = expected_n {
        if expected != n {
            return Err(invalid(path, format!("graph has n={n}, expected {expected}")));
        }
    }

    let mut raw = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(['\t', ' ']).filter(|s| !s.is_empty()).collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("expected 3 fields, found {}", f.len()),
            });
        }
        let i: usize = parse_num(path, line_no, f[0], "row index")?;
        let j: usize = parse_num(path, line_no, f[1], "column index")?;
        let w: f64 = parse_num(path, line_no, f[2], "weight")?;
        if i >= n || j >= n {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("index ({i}, {j}) out of range for n={n}"),
            });
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("weight {w} rejected (must be finite and nonnegative)"),
            });
        }
        raw.push((i, j, w));
    }

    let raw_matrix = SparseMatrix::from_triplets(n, n, &raw)?;
    let diagnostics = graph::validate_adjacency(&raw_matrix, !sym);
    let off_diag: Vec<(usize, usize, f64)> = raw.into_iter().filter(|&(i, j, w)| i != j && w > 0.0).collect();
    let adjacency = if sym {
        AdjacencyMatrix::from_undirected_edges(n, &off_diag)?
    } else {
        let mut last = off_diag;
        last.sort_by_key(|e| (e.0, e.1));
        last.dedup_by(|b, a| {
            if a.0 == b.0 && a.1 == b.1 {
                a.2 = b.2;
                true
            } else {
                false
            }
        });
        graph::symmetrize(&AdjacencyMatrix::new(SparseMatrix::from_triplets(n, n, &last)?)?)
    };
    Ok((adjacency, diagnostics))
}

fn parse_header(path: &Path, line_no: usize, line: &str) -> Result<(usize, bool)> {
    let bad = |msg: &str| Error::Parse {
        path: path.into(),
        line: line_no,
        msg: format!("{msg}; expected '# n=<n> sym={{0|1}}'"),
    };
    let body = line.trim().strip_prefix('#').ok_or_else(|| bad("missing header"))?;
    let mut n = None;
    let mut sym = None;
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = Some(v.parse::<usize>().map_err(|_| bad("invalid n"))?);
        } else if let Some(v) = tok.strip_prefix("sym=") {
            sym = Some(match v {
                "0" => false,
                "1" => true,
                _ => return Err(bad("invalid sym")),
            });
        }
    }
    match (n, sym) {
        (Some(n), Some(sym)) => Ok((n, sym)),
        _ => Err(bad("incomplete header")),
    }
}

/// Writes `a` in `.adj` format with 17 significant digits per weight, so
/// reading it back reproduces every weight bit for bit.
pub fn export_adjacency(a: &AdjacencyMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let sym = a.is_symmetric();
    let mut out = String::with_capacity(a.nnz() * 32 + 32);
    writeln!(out, "# n={} sym={}", a.n(), u8::from(sym)).unwrap();
    for (i, j, w) in a.weights().iter() {
        if sym && j < i {
            continue;
        }
        writeln!(out, "{i}\t{j}\t{w:.16e}").unwrap();
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write(path, &out)
}

pub fn graph_path(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join(GRAPH_FILE)
}
