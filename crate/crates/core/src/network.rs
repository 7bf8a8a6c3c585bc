//! Communication graphs and doubly-stochastic weight matrices.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const SINKHORN_TOL: f64 = 1e-10;
pub const SINKHORN_MAX_ITER: usize = 10_000;
/// Row/column sums of a normalized matrix lie within this band around 1.
pub const NORMALIZED_TOL: f64 = 1e-9;

/// Non-negative n×n weighted adjacency matrix. `A[(i, j)] > 0` means agent
/// `i` receives from agent `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    normalized: bool,
}

impl WeightMatrix {
    /// Wraps a non-negative square matrix without normalizing it.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        check_square(&entries)?;
        check_nonnegative(&entries)?;
        let normalized = is_doubly_stochastic(&entries, NORMALIZED_TOL);
        Ok(Self {
            entries,
            normalized,
        })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Row and column sums all within 1e-9 of one.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// In-neighbours of `i` with their weights, including `i` itself when
    /// it carries a self-loop.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.size())
            .filter_map(|j| {
                let w = self.entries[(i, j)];
                (w > 0.0).then_some((j, w))
            })
            .collect()
    }

    /// Directed edges (i, j), i ≠ j, with positive weight.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.size();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.entries[(i, j)] > 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Largest deviation of any row or column sum from one.
    pub fn stochasticity_residual(&self) -> f64 {
        residual(&self.entries)
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    check_dim("weight matrix columns", m.nrows(), m.ncols())?;
    if m.nrows() == 0 {
        return Err(Error::Empty("weight matrix"));
    }
    Ok(())
}

fn check_nonnegative(m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

fn residual(m: &DMatrix<f64>) -> f64 {
    let rows = m.column_sum();
    let cols = m.row_sum();
    rows.iter()
        .chain(cols.iter())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

fn is_doubly_stochastic(m: &DMatrix<f64>, tol: f64) -> bool {
    residual(m) <= tol
}

/// Alternating row/column scaling until every row and column sums to one
/// within `tol`. The zero pattern of `m` is preserved.
pub fn sinkhorn_normalize(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<WeightMatrix> {
    check_square(m)?;
    check_nonnegative(m)?;
    let n = m.nrows();
    if let Some(i) = (0..n).find(|&i| m[(i, i)] <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sinkhorn needs a positive diagonal, entry ({i}, {i}) is zero"
        )));
    }
    let mut a = m.clone();
    let mut res = residual(&a);
    for _ in 0..max_iter {
        if res <= tol {
            return Ok(WeightMatrix {
                entries: a,
                normalized: true,
            });
        }
        for i in 0..n {
            let s = a.row(i).sum();
            a.row_mut(i).scale_mut(1.0 / s);
        }
        for j in 0..n {
            let s = a.column(j).sum();
            a.column_mut(j).scale_mut(1.0 / s);
        }
        res = residual(&a);
    }
    if res <= tol {
        return Ok(WeightMatrix {
            entries: a,
            normalized: true,
        });
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Symmetric Metropolis–Hastings weights for an undirected graph:
/// A_ij = 1/(1 + max(deg_i, deg_j)) on edges, A_ii = 1 − Σ_j A_ij.
pub fn metropolis_weights(edges: &[(usize, usize)], n: usize) -> Result<WeightMatrix> {
    if n == 0 {
        return Err(Error::Empty("graph"));
    }
    let adjacency = undirected_adjacency(edges, n)?;
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut a = DMatrix::zeros(n, n);
    for (i, nbrs) in adjacency.iter().enumerate() {
        for &j in nbrs {
            a[(i, j)] = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    let w = WeightMatrix {
        normalized: is_doubly_stochastic(&a, NORMALIZED_TOL),
        entries: a,
    };
    if !is_strongly_connected(&w) {
        return Err(Error::Disconnected);
    }
    Ok(w)
}

fn undirected_adjacency(edges: &[(usize, usize)], n: usize) -> Result<Vec<Vec<usize>>> {
    let mut adjacency = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) out of range for {n} nodes"
            )));
        }
        if i == j {
            continue;
        }
        if !adjacency[i].contains(&j) {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
    }
    Ok(adjacency)
}

/// Every node reaches every other along positive off-diagonal entries.
pub fn is_strongly_connected(a: &WeightMatrix) -> bool {
    let n = a.size();
    let m = a.entries();
    // Edge (i, j) with A_ij > 0 carries information from j to i.
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let w = if forward { m[(v, u)] } else { m[(u, v)] };
                if v != u && w > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Per-agent Σ_k |μ_ik − (1/n) Σ_j μ_jk|.
pub fn consensus_error(means: &[&DVector<f64>]) -> Result<Vec<f64>> {
    let first = means.first().ok_or(Error::Empty("consensus means"))?;
    let dim = first.len();
    let mut avg = DVector::zeros(dim);
    for m in means {
        check_dim("consensus means", dim, m.len())?;
        avg += *m;
    }
    avg /= means.len() as f64;
    Ok(means.iter().map(|m| (*m - &avg).abs().sum()).collect())
}

/// Graph file: `{"n": 4, "edges": [[0, 1], ...], "weights": [[...], ...]}`.
/// Explicit weights are Sinkhorn-normalized; otherwise the edges get
/// Metropolis weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub n: usize,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

impl GraphSpec {
    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push([i, j]);
            }
        }
        Self {
            n,
            edges,
            weights: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn build(&self) -> Result<WeightMatrix> {
        match &self.weights {
            Some(rows) => {
                check_dim("graph weight rows", self.n, rows.len())?;
                for r in rows {
                    check_dim("graph weight columns", self.n, r.len())?;
                }
                let m = DMatrix::from_fn(self.n, self.n, |i, j| rows[i][j]);
                sinkhorn_normalize(&m, SINKHORN_TOL, SINKHORN_MAX_ITER)
            }
            None => {
                let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
                metropolis_weights(&edges, self.n)
            }
        }
    }
}
