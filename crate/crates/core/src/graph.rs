//! Cross-session item graph, symmetric-normalized propagation, and the
//! local/global mutual-information objective with node-shuffling negatives.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::SessionCorpus;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, relu, sigmoid, DenseMatrix, ParamTensor, INIT_STD};

/// Lower/upper clamp applied to discriminator outputs before taking logs.
pub const XI_CLAMP: f64 = 1e-12;

/// Normalized adjacency `D^-1/2 (A + I) D^-1/2` in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Stored entries, self-loops included.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Degree of node `i` in `A + I`.
    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        match self.col_indices[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Sparse × dense product `self · h`.
    pub fn spmm(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if h.rows() != self.n {
            return Err(Error::Dimension {
                op: "spmm",
                left: (self.n, self.n),
                right: h.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.n, h.cols());
        for i in 0..self.n {
            let row = out.row_mut(i);
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                axpy(self.values[k], h.row(self.col_indices[k]), row);
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                m.set(i, self.col_indices[k], self.values[k]);
            }
        }
        m
    }

    /// `i j value` per stored entry.
    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let _ = writeln!(s, "{} {} {}", i, self.col_indices[k], self.values[k]);
            }
        }
        s
    }
}

/// Symmetric normalization of a binary pattern that already contains
/// self-loops. `neighbors[i]` lists the columns of row `i` of `Â`.
pub fn normalize(neighbors: &[BTreeSet<usize>]) -> SparseAdjacency {
    let n = neighbors.len();
    let degree: Vec<f64> = neighbors
        .iter()
        .enumerate()
        .map(|(i, row)| {
            assert!(row.contains(&i), "node {i} has no self-loop");
            row.len() as f64
        })
        .collect();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for (i, row) in neighbors.iter().enumerate() {
        for &j in row {
            col_indices.push(j);
            values.push(1.0 / (degree[i] * degree[j]).sqrt());
        }
        row_offsets.push(col_indices.len());
    }
    SparseAdjacency {
        n,
        row_offsets,
        col_indices,
        values,
    }
}

/// Symmetrizes `edges`, adds self-loops, and normalizes.
pub fn adjacency_from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> SparseAdjacency {
    let mut neighbors: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    for (a, b) in edges {
        neighbors[a].insert(b);
        neighbors[b].insert(a);
    }
    normalize(&neighbors)
}

/// Binary, undirected transition graph over consecutive items of every
/// training session.
pub fn build_adjacency(corpus: &SessionCorpus) -> SparseAdjacency {
    let edges = corpus
        .sessions
        .iter()
        .flat_map(|s| s.windows(2).map(|w| (w[0], w[1])));
    adjacency_from_edges(corpus.num_items(), edges)
}

/// Per-layer propagation weights plus the bilinear discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    pub layers: Vec<ParamTensor>,
    pub w_g: ParamTensor,
}

impl GraphParams {
    pub fn init<R: Rng + ?Sized>(d: usize, num_layers: usize, rng: &mut R) -> Self {
        Self::init_with_std(d, num_layers, INIT_STD, rng)
    }

    pub fn init_with_std<R: Rng + ?Sized>(d: usize, num_layers: usize, std: f64, rng: &mut R) -> Self {
        assert!(num_layers >= 1, "at least one propagation layer");
        let layers = (0..num_layers)
            .map(|l| ParamTensor::gaussian(format!("gcn_w{l}"), d, d, std, rng))
            .collect();
        Self {
            layers,
            w_g: ParamTensor::gaussian("w_g", d, d, std, rng),
        }
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        self.layers.iter().chain(std::iter::once(&self.w_g)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().chain(std::iter::once(&mut self.w_g)).collect()
    }
}

struct Propagation {
    /// Layer inputs `H^l`.
    inputs: Vec<DenseMatrix>,
    /// Pre-activations `Â H^l W^l`.
    pre: Vec<DenseMatrix>,
    out: DenseMatrix,
}

fn propagate(adj: &SparseAdjacency, h0: &DenseMatrix, layers: &[ParamTensor]) -> Result<Propagation> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut h = h0.clone();
    for w in layers {
        let p = adj.spmm(&h.matmul(&w.value)?)?;
        let next = p.map(relu);
        inputs.push(h);
        pre.push(p);
        h = next;
    }
    Ok(Propagation {
        inputs,
        pre,
        out: h,
    })
}

/// Backward through the propagation stack; accumulates weight grads and
/// returns the gradient w.r.t. the input features.
fn propagate_backward(
    adj: &SparseAdjacency,
    prop: &Propagation,
    d_out: DenseMatrix,
    layers: &mut [ParamTensor],
) -> Result<DenseMatrix> {
    let mut d_h = d_out;
    for l in (0..layers.len()).rev() {
        for (g, &p) in d_h.data_mut().iter_mut().zip(prop.pre[l].data()) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        // Â is symmetric, so Âᵀ dP = Â dP.
        let d_t = adj.spmm(&d_h)?;
        layers[l].grad.add_assign(&prop.inputs[l].matmul_tn(&d_t)?)?;
        d_h = d_t.matmul_nt(&layers[l].value)?;
    }
    Ok(d_h)
}

/// `L` rounds of `H ← relu(Â H W^l)`.
pub fn gcn_forward(adj: &SparseAdjacency, h0: &DenseMatrix, params: &GraphParams) -> Result<DenseMatrix> {
    Ok(propagate(adj, h0, &params.layers)?.out)
}

/// Column mean of `h`.
pub fn readout(h: &DenseMatrix) -> Vec<f64> {
    let mut z = h.column_sums();
    let m = h.rows() as f64;
    z.iter_mut().for_each(|x| *x /= m);
    z
}

/// Shuffles the rows of `h0` with a uniformly drawn non-identity
/// permutation. Returns the shuffled features and `perm`, where row `m`
/// of the output is row `perm[m]` of the input.
pub fn corrupt<R: Rng + ?Sized>(h0: &DenseMatrix, rng: &mut R) -> Result<(DenseMatrix, Vec<usize>)> {
    let m = h0.rows();
    if m < 2 {
        return Err(Error::Corruption(m));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            break;
        }
    }
    Ok((permute_rows(h0, &perm), perm))
}

fn permute_rows(h: &DenseMatrix, perm: &[usize]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(h.rows(), h.cols());
    for (dst, &src) in perm.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(h.row(src));
    }
    out
}

/// `σ(hᵀ W_g z)`.
pub fn discriminate(h: &[f64], z: &[f64], w_g: &DenseMatrix) -> Result<f64> {
    Ok(sigmoid(dot(h, &w_g.matvec(z)?)))
}

/// Loss value and gradients of the binary cross-entropy over positive
/// `(h_m, z)` and negative `(h̃_m, z)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MiLoss {
    pub loss: f64,
    pub d_h: DenseMatrix,
    pub d_h_tilde: DenseMatrix,
    pub d_z: Vec<f64>,
    pub d_w_g: DenseMatrix,
    pub pos_scores: Vec<f64>,
    pub neg_scores: Vec<f64>,
}

/// Mutual-information loss with `z` treated as an input; the caller
/// chains `d_z` back through the readout.
pub fn mi_loss(h: &DenseMatrix, h_tilde: &DenseMatrix, z: &[f64], w_g: &DenseMatrix) -> Result<MiLoss> {
    if h.shape() != h_tilde.shape() {
        return Err(Error::Dimension {
            op: "mi_loss",
            left: h.shape(),
            right: h_tilde.shape(),
        });
    }
    let (m, d) = h.shape();
    let count = (2 * m) as f64;
    let wz = w_g.matvec(z)?;
    let mut out = MiLoss {
        loss: 0.0,
        d_h: DenseMatrix::zeros(m, d),
        d_h_tilde: DenseMatrix::zeros(m, d),
        d_z: vec![0.0; d],
        d_w_g: DenseMatrix::zeros(d, d),
        pos_scores: Vec::with_capacity(m),
        neg_scores: Vec::with_capacity(m),
    };
    let mut wt_acc = vec![0.0; d];
    for (positive, feats) in [(true, h), (false, h_tilde)] {
        for i in 0..m {
            let row = feats.row(i);
            let xi = sigmoid(dot(row, &wz));
            let clamped = xi.clamp(XI_CLAMP, 1.0 - XI_CLAMP);
            let inside = clamped == xi;
            // dL/dlogit: log σ(l)' = 1 - σ, log(1 - σ(l))' = -σ
            let d_logit = if positive {
                out.loss -= clamped.ln();
                out.pos_scores.push(xi);
                if inside { -(1.0 - xi) / count } else { 0.0 }
            } else {
                out.loss -= (1.0 - clamped).ln();
                out.neg_scores.push(xi);
                if inside { xi / count } else { 0.0 }
            };
            if d_logit == 0.0 {
                continue;
            }
            let target = if positive { &mut out.d_h } else { &mut out.d_h_tilde };
            axpy(d_logit, &wz, target.row_mut(i));
            out.d_w_g.add_outer(d_logit, row, z);
            axpy(d_logit, row, &mut wt_acc);
        }
    }
    out.loss /= count;
    out.d_z = w_g.matvec_t(&wt_acc)?;
    Ok(out)
}

/// Result of one evaluation of the full graph objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MiStep {
    pub loss: f64,
    pub mean_pos: f64,
    pub mean_neg: f64,
}

/// Full mutual-information objective for features `table` under a fixed
/// corruption `perm`. With a non-zero `grad_scale` the scaled gradient is
/// accumulated into the propagation weights, `W_g` and `table.grad`.
pub fn mi_objective(
    adj: &SparseAdjacency,
    table: &mut ParamTensor,
    params: &mut GraphParams,
    perm: &[usize],
    grad_scale: f64,
) -> Result<MiStep> {
    let m = table.value.rows();
    if m < 2 {
        return Err(Error::Corruption(m));
    }
    let pos = propagate(adj, &table.value, &params.layers)?;
    let shuffled = permute_rows(&table.value, perm);
    let neg = propagate(adj, &shuffled, &params.layers)?;
    let z = readout(&pos.out);
    let mut res = mi_loss(&pos.out, &neg.out, &z, &params.w_g.value)?;
    let step = MiStep {
        loss: res.loss,
        mean_pos: res.pos_scores.iter().sum::<f64>() / m as f64,
        mean_neg: res.neg_scores.iter().sum::<f64>() / m as f64,
    };
    if grad_scale == 0.0 {
        return Ok(step);
    }
    res.d_w_g.scale(grad_scale);
    params.w_g.grad.add_assign(&res.d_w_g)?;
    let mut d_h = res.d_h;
    let d_z_row: Vec<f64> = res.d_z.iter().map(|g| g / m as f64).collect();
    for i in 0..m {
        axpy(1.0, &d_z_row, d_h.row_mut(i));
    }
    d_h.scale(grad_scale);
    let mut d_ht = res.d_h_tilde;
    d_ht.scale(grad_scale);
    let d_table = propagate_backward(adj, &pos, d_h, &mut params.layers)?;
    let d_shuffled = propagate_backward(adj, &neg, d_ht, &mut params.layers)?;
    table.grad.add_assign(&d_table)?;
    for (dst, &src) in perm.iter().enumerate() {
        axpy(1.0, d_shuffled.row(dst), table.grad.row_mut(src));
    }
    Ok(step)
}
