use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;

/// Entries smaller than this are left out of spy exports.
pub const SPY_THRESHOLD: f64 = 1e-4;

/// Position of every node when nodes are sorted by class (stable in node
/// index). Unlabelled nodes come last.
pub fn class_order(labels: &[Option<usize>]) -> Vec<usize> {
    let mut nodes: Vec<usize> = (0..labels.len()).collect();
    nodes.sort_by_key(|&i| (labels[i].is_none(), labels[i], i));
    let mut pos = vec![0; labels.len()];
    for (p, &i) in nodes.iter().enumerate() {
        pos[i] = p;
    }
    pos
}

/// `row,col,weight` for every stored entry with `|weight| >= threshold`,
/// with both triangles written and indices mapped through `perm`.
pub fn spy_csv(a: &AdjacencyMatrix, perm: &[usize], threshold: f64) -> Result<String> {
    let n = a.n();
    if perm.len() != n {
        return Err(Error::contract("export_spy_csv", format!("permutation has {} entries for {n} nodes", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::contract("export_spy_csv", "permutation is not a bijection"));
        }
    }
    let mut rows: Vec<(usize, usize, f64)> = a
        .weights()
        .iter()
        .filter(|&(_, _, w)| w.abs() >= threshold)
        .map(|(i, j, w)| (perm[i], perm[j], w))
        .collect();
    rows.sort_by_key(|&(i, j, _)| (i, j));
    let mut out = String::from("row,col,weight\n");
    for (i, j, w) in rows {
        writeln!(out, "{i},{j},{}", crate::io::fmt_weight(w)).unwrap();
    }
    Ok(out)
}

pub fn export_spy_csv(a: &AdjacencyMatrix, perm: &[usize], path: impl AsRef<Path>, threshold: f64) -> Result<()> {
    let body = spy_csv(a, perm, threshold)?;
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
