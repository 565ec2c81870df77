//! Graph data model: domain graphs, ego-graphs and adjacency algebra.

mod io;
mod split;
mod synth;

pub use io::{
    load_domain, load_edge_list, load_node_table, write_edge_list, write_node_table,
};
pub use split::{split_nodes, NodeSplit};
pub use synth::{
    domain_distributions, empirical_class_means, synth_multi_domain, DomainDistribution,
    SynthShiftConfig,
};

use std::collections::VecDeque;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Dense binary adjacency, entries 0 or 1.
pub type Adjacency = Array2<u8>;

/// One domain `G^e = (A^e, X^e)` with node labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainGraph {
    pub adjacency: Adjacency,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub domain_id: String,
}

impl DomainGraph {
    pub fn new(
        adjacency: Adjacency,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        domain_id: impl Into<String>,
    ) -> Result<Self> {
        check_simple(&adjacency)?;
        let n = adjacency.nrows();
        if features.nrows() != n {
            return Err(Error::shape("feature rows", n, features.nrows()));
        }
        if labels.len() != n {
            return Err(Error::shape("label count", n, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Contract(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            adjacency,
            features,
            labels,
            num_classes,
            domain_id: domain_id.into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        edge_count(&self.adjacency)
    }

    /// Same labels and features, different topology.
    pub fn with_adjacency(&self, adjacency: Adjacency, domain_id: impl Into<String>) -> Self {
        Self {
            adjacency,
            features: self.features.clone(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            domain_id: domain_id.into(),
        }
    }

    pub fn with_features(&self, features: Array2<f64>, domain_id: impl Into<String>) -> Self {
        Self {
            adjacency: self.adjacency.clone(),
            features,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            domain_id: domain_id.into(),
        }
    }
}

/// Induced subgraph around a center node.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoGraph {
    pub center: usize,
    /// Original indices, ascending.
    pub node_ids: Vec<usize>,
    pub adjacency: Adjacency,
    pub features: Array2<f64>,
    /// Degree of each member in the parent graph, aligned with `node_ids`.
    pub parent_degrees: Vec<usize>,
    pub hops: usize,
}

impl EgoGraph {
    /// Position of the center inside `node_ids`.
    pub fn center_position(&self) -> usize {
        self.node_ids
            .binary_search(&self.center)
            .expect("ego-graph always contains its center")
    }
}

/// Checks symmetry, binary entries and zero diagonal.
pub fn check_simple(a: &Adjacency) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::shape(
            "adjacency",
            format!("{n}x{n}"),
            format!("{}x{}", n, a.ncols()),
        ));
    }
    for i in 0..n {
        if a[[i, i]] != 0 {
            return Err(Error::Contract(format!("nonzero diagonal at node {i}")));
        }
        for j in (i + 1)..n {
            let (x, y) = (a[[i, j]], a[[j, i]]);
            if x > 1 || y > 1 {
                return Err(Error::Contract(format!("non-binary entry at ({i},{j})")));
            }
            if x != y {
                return Err(Error::Contract(format!("asymmetric entry at ({i},{j})")));
            }
        }
    }
    Ok(())
}

pub fn edge_count(a: &Adjacency) -> usize {
    let n = a.nrows();
    (0..n)
        .map(|i| ((i + 1)..n).filter(|&j| a[[i, j]] != 0).count())
        .sum()
}

/// Edge complement without self-loops: `11ᵀ − I − A`.
pub fn supplement(a: &Adjacency) -> Result<Adjacency> {
    let n = a.nrows();
    if let Some(i) = (0..n.min(a.ncols())).find(|&i| a[[i, i]] != 0) {
        return Err(Error::Contract(format!(
            "supplement requires a zero diagonal (node {i})"
        )));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        u8::from(i != j && a[[i, j]] == 0)
    }))
}

/// GCN propagation matrix `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn normalize_adjacency(a: &Adjacency) -> Array2<f64> {
    let n = a.nrows();
    let deg: Array1<f64> = a
        .map(|&x| x as f64)
        .sum_axis(Axis(1))
        .mapv(|d| (d + 1.0).sqrt().recip());
    Array2::from_shape_fn((n, n), |(i, j)| {
        let aij = if i == j { 1.0 } else { a[[i, j]] as f64 };
        if aij == 0.0 {
            0.0
        } else {
            deg[i] * aij * deg[j]
        }
    })
}

/// Nodes within `hops` of `center`, ascending.
pub fn bfs_ball(a: &Adjacency, center: usize, hops: usize) -> Vec<usize> {
    let n = a.nrows();
    let mut dist = vec![usize::MAX; n];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == hops {
            continue;
        }
        for v in 0..n {
            if a[[u, v]] != 0 && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (0..n).filter(|&v| dist[v] != usize::MAX).collect()
}

pub fn ego_graph(g: &DomainGraph, center: usize, hops: usize) -> Result<EgoGraph> {
    let n = g.num_nodes();
    if center >= n {
        return Err(Error::OutOfBounds {
            index: center,
            size: n,
        });
    }
    let node_ids = bfs_ball(&g.adjacency, center, hops);
    let m = node_ids.len();
    let adjacency = Array2::from_shape_fn((m, m), |(i, j)| g.adjacency[[node_ids[i], node_ids[j]]]);
    let features = g.features.select(Axis(0), &node_ids);
    let parent_degrees = node_ids
        .iter()
        .map(|&v| g.adjacency.row(v).iter().filter(|&&x| x != 0).count())
        .collect();
    Ok(EgoGraph {
        center,
        node_ids,
        adjacency,
        features,
        parent_degrees,
        hops,
    })
}
