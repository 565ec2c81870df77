#![allow(dead_code)]

use glider::graph::{Adjacency, DomainGraph};
use glider::nn::Parameters;
use glider::rng::{rng_from_seed, Rng};
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Every symmetric zero-diagonal binary matrix on `n` nodes.
pub fn all_simple_graphs(n: usize) -> Vec<Adjacency> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    (0..1u32 << pairs.len())
        .map(|bits| {
            let mut a = Array2::zeros((n, n));
            for (k, &(i, j)) in pairs.iter().enumerate() {
                if bits >> k & 1 == 1 {
                    a[[i, j]] = 1;
                    a[[j, i]] = 1;
                }
            }
            a
        })
        .collect()
}

pub fn random_adjacency(rng: &mut Rng, n: usize, p: f64) -> Adjacency {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                a[[i, j]] = 1;
                a[[j, i]] = 1;
            }
        }
    }
    a
}

pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn random_graph(seed: u64, n: usize, p: f64, d: usize, c: usize) -> DomainGraph {
    let mut rng = rng_from_seed(seed);
    let a = random_adjacency(&mut rng, n, p);
    let x = gaussian(&mut rng, n, d);
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    DomainGraph::new(a, x, labels, c, format!("g{seed}")).unwrap()
}

/// Applies the node permutation `perm` (new index i holds old node `perm[i]`).
pub fn permute_graph(g: &DomainGraph, perm: &[usize]) -> DomainGraph {
    let n = perm.len();
    let a = Array2::from_shape_fn((n, n), |(i, j)| g.adjacency[[perm[i], perm[j]]]);
    let x = Array2::from_shape_fn((n, g.feature_dim()), |(i, k)| g.features[[perm[i], k]]);
    let labels = perm.iter().map(|&p| g.labels[p]).collect();
    DomainGraph::new(a, x, labels, g.num_classes, g.domain_id.clone()).unwrap()
}

/// Central finite differences of `f` over every parameter entry.
pub fn finite_difference<M: Parameters + Clone>(model: &M, step: f64, f: impl Fn(&M) -> f64) -> Vec<Array2<f64>> {
    let mut probe = model.clone();
    let shapes: Vec<_> = model.named_params().iter().map(|(_, p)| p.raw_dim()).collect();
    let mut out: Vec<Array2<f64>> = shapes.into_iter().map(Array2::zeros).collect();
    for (k, grad) in out.iter_mut().enumerate() {
        let cols = grad.ncols();
        for idx in 0..grad.len() {
            let (r, c) = (idx / cols, idx % cols);
            let orig = probe.params_mut()[k][[r, c]];
            probe.params_mut()[k][[r, c]] = orig + step;
            let up = f(&probe);
            probe.params_mut()[k][[r, c]] = orig - step;
            let down = f(&probe);
            probe.params_mut()[k][[r, c]] = orig;
            grad[[r, c]] = (up - down) / (2.0 * step);
        }
    }
    out
}

/// `max |a − n| / max |n|` over all entries.
pub fn relative_error(analytic: &[Array2<f64>], numeric: &[Array2<f64>]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.dim(), n.dim());
        for (&x, &y) in a.iter().zip(n) {
            num = num.max((x - y).abs());
            den = den.max(y.abs());
        }
    }
    num / den.max(1e-8)
}

/// Breadth-first ball computed by repeated neighbor expansion, without a queue.
pub fn brute_ball(a: &Adjacency, v: usize, hops: usize) -> Vec<usize> {
    let n = a.nrows();
    let mut inside = vec![false; n];
    inside[v] = true;
    for _ in 0..hops {
        let prev = inside.clone();
        for i in 0..n {
            if prev[i] {
                for j in 0..n {
                    if a[[i, j]] == 1 {
                        inside[j] = true;
                    }
                }
            }
        }
    }
    (0..n).filter(|&i| inside[i]).collect()
}
