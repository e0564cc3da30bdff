//! Single-view graph structure learners.
//!
//! Each learner maps features `X` and an observed graph `A` to a learned
//! weighted graph. Training minimizes
//! `lambda_cls * CE + graph_weight * graph_loss / pairs`, where the
//! cross-entropy comes from a two-layer GCN run over the learned graph and
//! `pairs` is the number of candidate node pairs the learner scores.

mod gat;
mod glcn;
mod grcn;
mod progcn;
mod rgln;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gat::{gat_adjacency, GatParams};
pub use glcn::{glcn_adjacency, glcn_loss, GlcnParams};
pub use grcn::{grcn_adjacency, grcn_revise, GrcnParams};
pub use progcn::{progcn_loss, ProgcnParams};
pub use rgln::{rgln_adjacency, rgln_loss, RglnParams};

use crate::error::{Error, Result};
use crate::gcn::{self, add_weight_decay, record_logits, Momentum, Propagation, Supervision};
use crate::graph::{self, AdjacencyMatrix};
use crate::io::NodeDataset;
use crate::linalg::tape::{gradients, Tape, Var};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::rng::{self, StageRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Gat,
    Glcn,
    Rgln,
    Grcn,
    Progcn,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 5] = [
        LearnerKind::Gat,
        LearnerKind::Glcn,
        LearnerKind::Rgln,
        LearnerKind::Grcn,
        LearnerKind::Progcn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Gat => "gat",
            LearnerKind::Glcn => "glcn",
            LearnerKind::Rgln => "rgln",
            LearnerKind::Grcn => "grcn",
            LearnerKind::Progcn => "progcn",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown learner kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub momentum: f64,
    pub lambda_cls: f64,
    pub graph_weight: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub row_normalize: bool,
    pub gat_slope: f64,
    pub glcn_alpha: f64,
    /// Width of the low-rank projection; defaults to the class count.
    pub rgln_rank: Option<usize>,
    pub grcn_k: usize,
    pub grcn_embed: usize,
    pub progcn_alpha: f64,
    pub progcn_beta: f64,
    pub progcn_gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 200,
            seed: 0,
            momentum: 0.9,
            lambda_cls: 1.0,
            graph_weight: 1.0,
            hidden: 64,
            dropout: 0.5,
            weight_decay: 5e-4,
            row_normalize: false,
            gat_slope: 0.2,
            glcn_alpha: 0.01,
            rgln_rank: None,
            grcn_k: 30,
            grcn_embed: 16,
            progcn_alpha: 5e-4,
            progcn_beta: 0.0,
            progcn_gamma: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learner learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learner dropout and momentum must lie in [0, 1)".into()));
        }
        if self.hidden == 0 || self.grcn_k == 0 || self.grcn_embed == 0 || self.rgln_rank == Some(0) {
            return Err(Error::Config("learner widths and grcn_k must be at least 1".into()));
        }
        let weights = [
            self.lambda_cls,
            self.graph_weight,
            self.weight_decay,
            self.glcn_alpha,
            self.progcn_alpha,
            self.progcn_beta,
            self.progcn_gamma,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("learner loss weights must be finite and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.gat_slope) {
            return Err(Error::Config("gat_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A learned graph after cleanup, with the total training loss per epoch.
#[derive(Clone, Debug)]
pub struct LearnedGraph {
    pub adjacency: AdjacencyMatrix,
    pub losses: Vec<f64>,
}

/// Inputs shared by every learner during one training run.
pub(crate) struct Context {
    pub x: Arc<SparseMatrix>,
    pub a0: AdjacencyMatrix,
    pub num_classes: usize,
    pub cfg: TrainConfig,
}

/// `a0`'s pattern with all values set to one, optionally with the diagonal.
pub(crate) fn unit_pattern(a0: &AdjacencyMatrix, self_loops: bool) -> SparseMatrix {
    let n = a0.n();
    let per_row = (0..n)
        .map(|i| {
            let mut cols: Vec<usize> = a0.weights().row(i).0.to_vec();
            if self_loops {
                cols.push(i);
                cols.sort_unstable();
            }
            cols.into_iter().map(|j| (j, 1.0)).collect()
        })
        .collect();
    SparseMatrix::from_rows_unchecked(n, n, per_row)
}

/// Squared feature distances over the entries of `pattern`, as an edge column.
pub(crate) fn pattern_sq_dists(x: &SparseMatrix, pattern: &SparseMatrix) -> DenseMatrix {
    let v: Vec<f64> = pattern.iter().map(|(i, j, _)| x.row_sq_dist(i, j)).collect();
    DenseMatrix::column_vector(&v)
}

/// Dense `n x n` squared feature distances.
pub(crate) fn dense_sq_dists(x: &SparseMatrix) -> DenseMatrix {
    let n = x.rows();
    let mut out = DenseMatrix::zeros(n, n);
    crate::par::for_each_row(out.data_mut(), n, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            if j != i {
                *v = x.row_sq_dist(i, j);
            }
        }
    });
    out
}

/// What a learner records for one forward pass.
pub(crate) struct Recorded {
    pub prop: Propagation,
    pub graph_loss: Option<Var>,
    /// Normalizer for `graph_loss` (number of scored pairs).
    pub pairs: usize,
}

pub(crate) trait Learner {
    fn params(&self) -> Vec<&DenseMatrix>;
    fn params_mut(&mut self) -> Vec<&mut DenseMatrix>;
    fn record(&self, tape: &mut Tape, vars: &[Var], ctx: &Context) -> Result<Recorded>;
    /// The learned graph at the current parameters, before cleanup.
    fn learned(&self, ctx: &Context) -> Result<RawGraph>;
    /// Applied after every optimizer step.
    fn project(&mut self) {}
}

pub(crate) enum RawGraph {
    Sparse(SparseMatrix),
    Dense(DenseMatrix),
}

/// Symmetrize, drop the diagonal and clip negative weights.
pub fn cleanup_sparse(raw: &SparseMatrix) -> Result<AdjacencyMatrix> {
    let n = raw.rows();
    let per_row = (0..n)
        .map(|i| {
            let (cols, vals) = raw.row(i);
            cols.iter()
                .zip(vals)
                .filter(|&(&j, &v)| j != i && v > 0.0 && v.is_finite())
                .map(|(&j, &v)| (j, v))
                .collect()
        })
        .collect();
    let a = AdjacencyMatrix::new(SparseMatrix::from_rows_unchecked(n, n, per_row))?;
    Ok(graph::symmetrize(&a))
}

pub fn cleanup_dense(raw: &DenseMatrix) -> Result<AdjacencyMatrix> {
    Ok(graph::symmetrize(&AdjacencyMatrix::from_dense_clipped(raw)?))
}

fn cleanup(raw: RawGraph) -> Result<AdjacencyMatrix> {
    match raw {
        RawGraph::Sparse(s) => cleanup_sparse(&s),
        RawGraph::Dense(d) => cleanup_dense(&d),
    }
}

fn build(kind: LearnerKind, ctx: &Context, rng: &mut StageRng) -> Box<dyn Learner> {
    let d = ctx.x.cols();
    let h = ctx.cfg.hidden;
    match kind {
        LearnerKind::Gat => Box::new(gat::GatParams::init(d, h, ctx.cfg.gat_slope, rng)),
        LearnerKind::Glcn => Box::new(glcn::GlcnParams::init(d, h, ctx.cfg.glcn_alpha, rng)),
        LearnerKind::Rgln => {
            let s = ctx.cfg.rgln_rank.unwrap_or(ctx.num_classes.max(1));
            Box::new(rgln::RglnParams::init(d, s, rng))
        }
        LearnerKind::Grcn => Box::new(grcn::GrcnParams::init(d, h, ctx.cfg.grcn_embed, ctx.cfg.grcn_k, rng)),
        LearnerKind::Progcn => Box::new(progcn::ProgcnParams::init(&ctx.a0, &ctx.cfg)),
    }
}

/// Total training loss and its gradients, learner parameters first and the
/// two head weights last. Dropout applies only when `rng` is given.
fn objective(
    model: &dyn Learner,
    head: &gcn::GcnParams,
    ctx: &Context,
    sup: &Supervision,
    rng: Option<&mut StageRng>,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let cfg = &ctx.cfg;
    let mut tape = Tape::new();
    let vars: Vec<Var> = model.params().into_iter().map(|p| tape.param(p.clone())).collect();
    let w0 = tape.param(head.w0.clone());
    let w1 = tape.param(head.w1.clone());
    let rec = model.record(&mut tape, &vars, ctx)?;
    let mut loss = if cfg.lambda_cls > 0.0 {
        let dropout = rng.map(|r| (cfg.dropout, r));
        let logits = record_logits(&mut tape, &rec.prop, &ctx.x, w0, w1, dropout)?;
        let z = tape.row_softmax(logits);
        let ce = tape.masked_nll(z, sup.labels.clone(), sup.train.clone())?;
        let ce = tape.scale(ce, cfg.lambda_cls);
        add_weight_decay(&mut tape, ce, &[w0, w1], cfg.weight_decay)?
    } else {
        tape.constant(DenseMatrix::zeros(1, 1))
    };
    if let Some(g) = rec.graph_loss {
        let scaled = tape.scale(g, cfg.graph_weight / rec.pairs.max(1) as f64);
        loss = tape.add(loss, scaled)?;
    }
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let g = gradients(&tape, loss)?;
    let mut grads: Vec<DenseMatrix> = model
        .params()
        .iter()
        .zip(&vars)
        .map(|(p, &v)| g.get_or_zeros(v, p))
        .collect();
    grads.push(g.get_or_zeros(w0, &head.w0));
    grads.push(g.get_or_zeros(w1, &head.w1));
    Ok((value, grads))
}

/// Trains one learner on `ds` starting from the observed graph `a0` and
/// returns the cleaned learned graph.
pub fn train_learner(
    kind: LearnerKind,
    ds: &NodeDataset,
    a0: &AdjacencyMatrix,
    cfg: &TrainConfig,
) -> Result<LearnedGraph> {
    let sup = Supervision::from_dataset(ds);
    let x = if cfg.row_normalize {
        ds.features.row_normalized()
    } else {
        ds.features.clone()
    };
    train_on(kind, x, a0, ds.num_classes(), &sup, cfg)
}

pub fn train_on(
    kind: LearnerKind,
    x: SparseMatrix,
    a0: &AdjacencyMatrix,
    num_classes: usize,
    sup: &Supervision,
    cfg: &TrainConfig,
) -> Result<LearnedGraph> {
    cfg.validate()?;
    if x.rows() != a0.n() {
        return Err(Error::shape(
            "train_learner",
            format!("{} feature rows for {} nodes", x.rows(), a0.n()),
        ));
    }
    if sup.train.is_empty() && cfg.epochs > 0 && cfg.lambda_cls > 0.0 {
        return Err(Error::contract("train_learner", "empty training mask"));
    }
    let ctx = Context {
        x: Arc::new(x),
        a0: graph::symmetrize(a0),
        num_classes,
        cfg: cfg.clone(),
    };
    let mut rng = rng::seeded(cfg.seed);
    let mut model = build(kind, &ctx, &mut rng);
    let mut head = gcn::GcnParams::glorot(ctx.x.cols(), cfg.hidden, num_classes, &mut rng);
    let mut shapes: Vec<&DenseMatrix> = model.params();
    shapes.push(&head.w0);
    shapes.push(&head.w1);
    let mut opt = Momentum::new(cfg.learning_rate, cfg.momentum, &shapes);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (value, grads) = objective(model.as_ref(), &head, &ctx, sup, Some(&mut rng))?;
        if !value.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("{kind} loss is {value}"),
            });
        }
        losses.push(value);
        let mut params = model.params_mut();
        params.push(&mut head.w0);
        params.push(&mut head.w1);
        opt.step(&mut params, &grads);
        model.project();
    }
    let adjacency = cleanup(model.learned(&ctx)?)?;
    Ok(LearnedGraph { adjacency, losses })
}
