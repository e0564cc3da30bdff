//! Two-layer GCN classifier: `Z = softmax(P relu(P X W0) W1)` with the
//! propagation matrix `P = I + D^{-1/2} A D^{-1/2}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, AdjacencyMatrix};
use crate::io::NodeDataset;
use crate::linalg::tape::{gradients, Tape, Var};
use crate::linalg::{row_softmax, DenseMatrix, SparseMatrix};
use crate::rng::{self, StageRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Training stops once the loss exceeds the mean of this many previous epochs.
    pub stop_window: usize,
    /// Use `D~^{-1/2} (A + I) D~^{-1/2}` instead of `I + D^{-1/2} A D^{-1/2}`.
    pub renormalize: bool,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            dropout: 0.5,
            weight_decay: 5e-4,
            max_epochs: 5000,
            stop_window: 10,
            renormalize: false,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("gcn.hidden must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("gcn.learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("gcn.dropout must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("gcn.weight_decay >= 0 and gcn.momentum in [0, 1) required".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("gcn.max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w0: DenseMatrix,
    pub w1: DenseMatrix,
}

impl GcnParams {
    pub fn glorot(d: usize, h: usize, c: usize, rng: &mut StageRng) -> Self {
        let w0 = rng::glorot(d, h, rng);
        let w1 = rng::glorot(h, c, rng);
        Self { w0, w1 }
    }
}

/// `I + D^{-1/2} A D^{-1/2}`; isolated nodes keep only the identity entry.
pub fn propagation_matrix(a: &AdjacencyMatrix) -> SparseMatrix {
    let n = a.n();
    graph::normalized_adjacency(a)
        .add(&SparseMatrix::identity(n))
        .expect("same shape")
}

/// `D~^{-1/2} (A + I) D~^{-1/2}` with `D~` the degrees of `A + I`.
pub fn renormalized_propagation(a: &AdjacencyMatrix) -> SparseMatrix {
    let n = a.n();
    let with_loops = a.weights().add(&SparseMatrix::identity(n)).expect("same shape");
    let dinv = graph::inv_sqrt_degrees(&with_loops.row_sums());
    let values = with_loops.iter().map(|(i, j, w)| dinv[i] * w * dinv[j]).collect();
    with_loops.with_values(values)
}

pub fn propagation_for(a: &AdjacencyMatrix, cfg: &GcnConfig) -> SparseMatrix {
    if cfg.renormalize {
        renormalized_propagation(a)
    } else {
        propagation_matrix(a)
    }
}

/// How a recorded forward pass propagates features over the graph.
pub(crate) enum Propagation {
    Fixed(Arc<SparseMatrix>),
    /// Edge weights on `pattern`, optionally plus the identity.
    Edge {
        weights: Var,
        pattern: Arc<SparseMatrix>,
        identity: bool,
    },
    /// Dense `n x n` weights plus the identity.
    Dense(Var),
}

impl Propagation {
    pub(crate) fn apply(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        match self {
            Propagation::Fixed(p) => tape.sparse_matmul(p.clone(), h),
            Propagation::Edge {
                weights,
                pattern,
                identity,
            } => {
                let out = tape.edge_spmm(*weights, pattern.clone(), h)?;
                if *identity {
                    tape.add(h, out)
                } else {
                    Ok(out)
                }
            }
            Propagation::Dense(w) => {
                let out = tape.matmul(*w, h)?;
                tape.add(h, out)
            }
        }
    }
}

/// Records `P relu(P X W0) W1` (pre-softmax) with optional inverted dropout on
/// the inputs of both layers.
pub(crate) fn record_logits(
    tape: &mut Tape,
    prop: &Propagation,
    x: &SparseMatrix,
    w0: Var,
    w1: Var,
    mut dropout: Option<(f64, &mut StageRng)>,
) -> Result<Var> {
    let x = match dropout.as_mut() {
        Some((rate, rng)) if *rate > 0.0 => x.dropout(*rate, *rng),
        _ => x.clone(),
    };
    let xw = tape.sparse_matmul(Arc::new(x), w0)?;
    let h = prop.apply(tape, xw)?;
    let mut h = tape.relu(h);
    if let Some((rate, rng)) = dropout.as_mut() {
        if *rate > 0.0 {
            let (r, c) = tape.value(h).shape();
            let mask = tape.constant(rng::dropout_mask(r, c, *rate, rng));
            h = tape.mul(h, mask)?;
        }
    }
    let hw = tape.matmul(h, w1)?;
    prop.apply(tape, hw)
}

/// Row-softmax outputs `Z` for fixed weights. Dropout applies only when
/// `train` is given.
pub fn gcn_forward(
    prop: &SparseMatrix,
    x: &SparseMatrix,
    params: &GcnParams,
    train: Option<(f64, &mut StageRng)>,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let w0 = tape.constant(params.w0.clone());
    let w1 = tape.constant(params.w1.clone());
    let p = Propagation::Fixed(Arc::new(prop.clone()));
    let logits = record_logits(&mut tape, &p, x, w0, w1, train)?;
    row_softmax(tape.value(logits), None)
}

/// Mean of `-ln z[i, y_i]` over `mask`, with probabilities floored at
/// `1e-12`. Returns the loss and the number of floored entries.
pub fn cross_entropy_loss(z: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<(f64, usize)> {
    if mask.is_empty() {
        return Err(Error::contract("cross_entropy_loss", "empty mask"));
    }
    let mut total = 0.0;
    let mut floored = 0;
    for &i in mask {
        let p = z.get(i, labels[i]);
        if p < crate::linalg::tape::PROB_FLOOR {
            floored += 1;
        }
        total -= p.max(crate::linalg::tape::PROB_FLOOR).ln();
    }
    Ok((total / mask.len() as f64, floored))
}

/// Lowest index among the row maxima.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn evaluate_accuracy(z: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::contract("evaluate_accuracy", "empty mask"));
    }
    let correct = mask.iter().filter(|&&i| argmax(z.row(i)) == labels[i]).count();
    Ok(correct as f64 / mask.len() as f64)
}

/// True when the newest loss exceeds the mean of the `window` losses before it.
pub fn should_stop(history: &[f64], window: usize) -> bool {
    if window == 0 || history.len() <= window {
        return false;
    }
    let last = history[history.len() - 1];
    let prev = &history[history.len() - 1 - window..history.len() - 1];
    last > prev.iter().sum::<f64>() / window as f64
}

/// Heavy-ball gradient descent: `v <- mu v + g`, `w <- w - lr v`.
#[derive(Clone, Debug)]
pub struct Momentum {
    lr: f64,
    mu: f64,
    velocity: Vec<DenseMatrix>,
}

impl Momentum {
    pub fn new(lr: f64, mu: f64, params: &[&DenseMatrix]) -> Self {
        let velocity = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        Self { lr, mu, velocity }
    }

    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[DenseMatrix]) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.mu * *vi + gi;
                *w -= self.lr * *vi;
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainState {
    pub epochs_run: usize,
    /// Loss with dropout, as differentiated at each epoch.
    pub batch_losses: Vec<f64>,
    /// Loss of the updated weights without dropout; drives early stopping.
    pub losses: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedGcn {
    pub params: GcnParams,
    pub state: TrainState,
}

impl TrainedGcn {
    pub fn predict(&self, prop: &SparseMatrix, x: &SparseMatrix) -> Result<DenseMatrix> {
        gcn_forward(prop, x, &self.params, None)
    }
}

/// Node subsets and labels used by one training run.
#[derive(Clone, Debug)]
pub struct Supervision {
    pub labels: Arc<Vec<usize>>,
    pub train: Arc<Vec<usize>>,
    pub val: Vec<usize>,
}

impl Supervision {
    pub fn from_dataset(ds: &NodeDataset) -> Self {
        Self {
            labels: Arc::new(ds.dense_labels()),
            train: Arc::new(ds.train()),
            val: ds.val(),
        }
    }
}

fn loss_with_gradients(
    prop: &Propagation,
    x: &SparseMatrix,
    params: &GcnParams,
    sup: &Supervision,
    weight_decay: f64,
    dropout: Option<(f64, &mut StageRng)>,
) -> Result<(f64, [DenseMatrix; 2])> {
    let mut tape = Tape::new();
    let w0 = tape.param(params.w0.clone());
    let w1 = tape.param(params.w1.clone());
    let logits = record_logits(&mut tape, prop, x, w0, w1, dropout)?;
    let z = tape.row_softmax(logits);
    let mut loss = tape.masked_nll(z, sup.labels.clone(), sup.train.clone())?;
    if weight_decay > 0.0 {
        loss = add_weight_decay(&mut tape, loss, &[w0, w1], weight_decay)?;
    }
    let g = gradients(&tape, loss)?;
    Ok((
        tape.scalar(loss),
        [g.get_or_zeros(w0, &params.w0), g.get_or_zeros(w1, &params.w1)],
    ))
}

/// Training loss without dropout (mean cross-entropy on `sup.train` plus
/// `weight_decay / 2 * sum ||W||^2`) and its gradients for `W0` and `W1`.
pub fn gcn_loss_gradients(
    prop: &SparseMatrix,
    x: &SparseMatrix,
    params: &GcnParams,
    sup: &Supervision,
    weight_decay: f64,
) -> Result<(f64, [DenseMatrix; 2])> {
    let p = Propagation::Fixed(Arc::new(prop.clone()));
    loss_with_gradients(&p, x, params, sup, weight_decay, None)
}

/// Full-batch training on the train mask. Keeps the weights from the epoch
/// with the best validation accuracy (first one on ties).
pub fn train_gcn(
    prop: &SparseMatrix,
    x: &SparseMatrix,
    num_classes: usize,
    sup: &Supervision,
    cfg: &GcnConfig,
    seed: u64,
) -> Result<TrainedGcn> {
    cfg.validate()?;
    let mut rng = rng::seeded(seed);
    let mut params = GcnParams::glorot(x.cols(), cfg.hidden, num_classes, &mut rng);
    let mut opt = Momentum::new(cfg.learning_rate, cfg.momentum, &[&params.w0, &params.w1]);
    let prop_arc = Propagation::Fixed(Arc::new(prop.clone()));
    let mut state = TrainState::default();
    let mut best = params.clone();
    state.best_val_accuracy = f64::NEG_INFINITY;

    for epoch in 0..cfg.max_epochs {
        let (value, grads) = loss_with_gradients(&prop_arc, x, &params, sup, cfg.weight_decay, Some((cfg.dropout, &mut rng)))?;
        if !value.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("loss is {value}"),
            });
        }
        opt.step(&mut [&mut params.w0, &mut params.w1], &grads);

        state.batch_losses.push(value);
        state.epochs_run = epoch + 1;
        let z = gcn_forward(prop, x, &params, None)?;
        let decay = 0.5 * cfg.weight_decay * (params.w0.frobenius_norm().powi(2) + params.w1.frobenius_norm().powi(2));
        state.losses.push(cross_entropy_loss(&z, &sup.labels, &sup.train)?.0 + decay);
        if !sup.val.is_empty() {
            let acc = evaluate_accuracy(&z, &sup.labels, &sup.val)?;
            state.val_accuracy.push(acc);
            if acc > state.best_val_accuracy {
                state.best_val_accuracy = acc;
                state.best_epoch = epoch;
                best = params.clone();
            }
        } else {
            best = params.clone();
            state.best_epoch = epoch;
        }
        if should_stop(&state.losses, cfg.stop_window) {
            break;
        }
    }
    log::debug!(
        "gcn: {} epochs, best validation accuracy {} at epoch {}",
        state.epochs_run,
        state.best_val_accuracy,
        state.best_epoch
    );
    if state.best_val_accuracy == f64::NEG_INFINITY {
        state.best_val_accuracy = f64::NAN;
    }
    Ok(TrainedGcn { params: best, state })
}

/// `loss + decay / 2 * sum ||w||^2`.
pub(crate) fn add_weight_decay(tape: &mut Tape, loss: Var, weights: &[Var], decay: f64) -> Result<Var> {
    let mut out = loss;
    for &w in weights {
        let sq = tape.sum_squares(w);
        let term = tape.scale(sq, 0.5 * decay);
        out = tape.add(out, term)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    Average,
    Max,
}

/// Combines per-model class probabilities. `Max` takes the entrywise maximum
/// and renormalizes each row.
pub fn ensemble_predict(zs: &[DenseMatrix], mode: EnsembleMode) -> Result<DenseMatrix> {
    let first = zs
        .first()
        .ok_or_else(|| Error::contract("ensemble_predict", "no models"))?;
    let mut out = first.clone();
    for z in &zs[1..] {
        out = match mode {
            EnsembleMode::Average => out.add(z)?,
            EnsembleMode::Max => out.zip_map(z, f64::max)?,
        };
    }
    match mode {
        EnsembleMode::Average => Ok(out.scale(1.0 / zs.len() as f64)),
        EnsembleMode::Max => {
            let cols = out.cols();
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                } else {
                    row.iter_mut().for_each(|v| *v = 1.0 / cols as f64);
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> (AdjacencyMatrix, SparseMatrix, Vec<usize>) {
        let mut edges = Vec::new();
        for block in [0usize, 4] {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    edges.push((block + i, block + j, 1.0));
                }
            }
        }
        let a = AdjacencyMatrix::from_undirected_edges(8, &edges).unwrap();
        let x = SparseMatrix::from_triplets(8, 2, &(0..8).map(|i| (i, i / 4, 1.0)).collect::<Vec<_>>()).unwrap();
        let labels = (0..8).map(|i| i / 4).collect();
        (a, x, labels)
    }

    #[test]
    fn propagation_examples() {
        let k2 = AdjacencyMatrix::from_undirected_edges(2, &[(0, 1, 1.0)]).unwrap();
        assert_eq!(propagation_matrix(&k2).to_dense(), DenseMatrix::filled(2, 2, 1.0));
        assert_eq!(
            propagation_matrix(&AdjacencyMatrix::empty(3)).to_dense(),
            DenseMatrix::identity(3)
        );
        let p3 = AdjacencyMatrix::from_undirected_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let p = propagation_matrix(&p3).to_dense();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expected = DenseMatrix::from_rows(&[[1.0, r, 0.0], [r, 1.0, r], [0.0, r, 1.0]]);
        assert!(p.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn forward_examples() {
        let (a, x, _) = two_cliques();
        let prop = propagation_matrix(&a);
        let params = GcnParams {
            w0: DenseMatrix::zeros(2, 3),
            w1: DenseMatrix::zeros(3, 4),
        };
        let z = gcn_forward(&prop, &x, &params, None).unwrap();
        assert!(z.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let single = SparseMatrix::identity(1);
        let params = GcnParams {
            w0: DenseMatrix::filled(1, 1, 1.0),
            w1: DenseMatrix::from_rows(&[[0.0, 1.0, 0.0]]),
        };
        let z = gcn_forward(&single, &single, &params, None).unwrap();
        assert_eq!(argmax(z.row(0)), 1);
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(cross_entropy_loss(&onehot, &[0, 1], &[0, 1]).unwrap(), (0.0, 0));
        let uniform = DenseMatrix::filled(3, 7, 1.0 / 7.0);
        let (loss, _) = cross_entropy_loss(&uniform, &[0, 3, 6], &[0, 1, 2]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        let (_, floored) = cross_entropy_loss(&onehot, &[1, 1], &[0]).unwrap();
        assert_eq!(floored, 1);
    }

    #[test]
    fn accuracy_examples() {
        let z = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(evaluate_accuracy(&z, &[0, 1, 0, 1], &[0, 1, 2, 3]).unwrap(), 1.0);
        assert_eq!(evaluate_accuracy(&z, &[1, 0, 1, 0], &[0, 1, 2, 3]).unwrap(), 0.0);
        assert_eq!(evaluate_accuracy(&z, &[0, 1, 1, 0], &[0, 1, 2, 3]).unwrap(), 0.5);
        let tie = DenseMatrix::from_rows(&[[0.5, 0.5]]);
        assert_eq!(evaluate_accuracy(&tie, &[0], &[0]).unwrap(), 1.0);
    }

    #[test]
    fn stop_rule() {
        let mut h = vec![3.0, 2.0];
        h.extend(std::iter::repeat_n(1.0, 10));
        assert!(!should_stop(&h, 10));
        h.push(1.5);
        assert!(should_stop(&h, 10));
        assert!(!should_stop(&[1.0, 2.0], 10));
    }

    #[test]
    fn separable_toy_trains_and_is_deterministic() {
        let (a, x, labels) = two_cliques();
        let prop = propagation_matrix(&a);
        let sup = Supervision {
            labels: Arc::new(labels.clone()),
            train: Arc::new((0..8).collect()),
            val: (0..8).collect(),
        };
        let cfg = GcnConfig {
            hidden: 8,
            max_epochs: 200,
            learning_rate: 0.1,
            ..GcnConfig::default()
        };
        let run = train_gcn(&prop, &x, 2, &sup, &cfg, 7).unwrap();
        let z = run.predict(&prop, &x).unwrap();
        assert_eq!(evaluate_accuracy(&z, &labels, &sup.train).unwrap(), 1.0);
        let again = train_gcn(&prop, &x, 2, &sup, &cfg, 7).unwrap();
        assert_eq!(run.state.losses, again.state.losses);
        assert_eq!(run.params, again.params);
    }

    #[test]
    fn ensemble_examples() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(ensemble_predict(std::slice::from_ref(&a), EnsembleMode::Average).unwrap(), a);
        let avg = ensemble_predict(&[a.clone(), b.clone()], EnsembleMode::Average).unwrap();
        assert_eq!(avg, DenseMatrix::filled(2, 2, 0.5));
        let max = ensemble_predict(&[a, b], EnsembleMode::Max).unwrap();
        assert!(max.row_sums().iter().all(|s| (s - 1.0).abs() < 1e-15));
        assert!(ensemble_predict(&[], EnsembleMode::Max).is_err());
    }
}
