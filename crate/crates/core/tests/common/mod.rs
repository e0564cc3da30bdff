#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvgsl::graph::AdjacencyMatrix;
use mvgsl::linalg::{gradients, Tape, Var};
use mvgsl::synth::{self, SynthConfig};
use mvgsl::{DenseMatrix, SparseMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dense(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Entries in `[-1, -lo] U [lo, 1]`, away from the kinks at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| {
        let v = rng.gen_range(lo..1.0);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    })
}

pub fn positive(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(0.1..1.0))
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> AdjacencyMatrix {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < density {
                edges.push((i, j, rng.gen_range(0.05..2.0)));
            }
        }
    }
    AdjacencyMatrix::from_undirected_edges(n, &edges).unwrap()
}

/// Unit-valued pattern in which every row has at least one entry.
pub fn random_pattern(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Arc<SparseMatrix> {
    let mut t = Vec::new();
    for i in 0..n {
        let forced = rng.gen_range(0..n);
        for j in 0..n {
            if j == forced || rng.gen::<f64>() < density {
                t.push((i, j, 1.0));
            }
        }
    }
    Arc::new(SparseMatrix::from_triplets(n, n, &t).unwrap())
}

pub fn random_sparse(rng: &mut ChaCha8Rng, r: usize, c: usize, density: f64) -> SparseMatrix {
    let mut t = Vec::new();
    for i in 0..r {
        for j in 0..c {
            if rng.gen::<f64>() < density {
                t.push((i, j, rng.gen_range(-1.0..1.0)));
            }
        }
    }
    SparseMatrix::from_triplets(r, c, &t).unwrap()
}

/// Worst `|analytic - numeric| / max(1, |analytic|, |numeric|)` over every
/// input entry, with central differences of step `h`. Non-scalar outputs are
/// reduced to `sum(C * out)` with a fixed random `C`.
pub fn grad_check(inputs: &[DenseMatrix], seed: u64, h: f64, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[DenseMatrix]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars);
        let (r, c) = tape.value(out).shape();
        let loss = if (r, c) == (1, 1) {
            out
        } else {
            let mut g = rng(seed ^ 0x5eed);
            let w = tape.constant(random_dense(&mut g, r, c));
            let prod = tape.mul(out, w).unwrap();
            tape.sum(prod)
        };
        (tape, vars, loss)
    };
    let value = |xs: &[DenseMatrix]| {
        let (tape, _, loss) = eval(xs);
        tape.scalar(loss)
    };
    let (tape, vars, loss) = eval(inputs);
    let grads = gradients(&tape, loss).unwrap();
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], x);
        for idx in 0..x.data().len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= h;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
            let a = analytic.data()[idx];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

pub fn small_synthetic(n: usize, classes: usize, seed: u64) -> synth::Synthetic {
    synth::generate(&SynthConfig {
        n,
        classes,
        vocabulary: 20 * classes,
        words_per_node: 8,
        topic_purity: 0.3,
        mean_degree: 4.0,
        homophily: 0.7,
        train_per_class: 5,
        n_val: n / 5,
        n_test: n / 3,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}
