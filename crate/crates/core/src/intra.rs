//! Intra-session encoder: self-attention, feed-forward, attentive
//! aggregation and positional decay fusion, scored against the item table.
//!
//! Conventions: item states are rows. `W_Q`, `W_K`, `W_V`, `W_1`, `W_2`
//! right-multiply row states; `W_3`, `W_4` and `W_c` act on column vectors.

use rand::Rng;

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::numerics::{
    axpy, dot, sigmoid, softmax_in_place, softmax_rows, DenseMatrix, ParamTensor, INIT_STD,
};

/// Weighting used to fuse item states by position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositionalMode {
    /// `ω_i ∝ exp(-(|i - I| + 1))`: the last item weighs most.
    #[default]
    Decay,
    /// `ω_i ∝ exp(|i - I| + 1)`: the literal ascending form, kept for comparison.
    RawAscending,
}

impl std::str::FromStr for PositionalMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "decay" => Ok(PositionalMode::Decay),
            "raw" | "raw-ascending" => Ok(PositionalMode::RawAscending),
            other => Err(format!("unknown positional mode `{other}` (expected decay|raw)")),
        }
    }
}

impl std::fmt::Display for PositionalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PositionalMode::Decay => "decay",
            PositionalMode::RawAscending => "raw",
        })
    }
}

/// Encoder options that are not learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntraConfig {
    pub positional: PositionalMode,
    /// Inverted-dropout rate on the feed-forward output during training.
    pub dropout: f64,
    /// Prefixes longer than this keep only their most recent items.
    pub max_len: usize,
}

impl Default for IntraConfig {
    fn default() -> Self {
        Self {
            positional: PositionalMode::Decay,
            dropout: 0.2,
            max_len: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraParams {
    pub w_q: ParamTensor,
    pub w_k: ParamTensor,
    pub w_v: ParamTensor,
    pub w_1: ParamTensor,
    pub b_1: ParamTensor,
    pub w_2: ParamTensor,
    pub b_2: ParamTensor,
    pub w_3: ParamTensor,
    pub w_4: ParamTensor,
    pub g: ParamTensor,
    pub w_c: ParamTensor,
}

impl IntraParams {
    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self::init_with_std(d, INIT_STD, rng)
    }

    pub fn init_with_std<R: Rng + ?Sized>(d: usize, std: f64, rng: &mut R) -> Self {
        let mut sq = |name: &str| ParamTensor::gaussian(name, d, d, std, rng);
        let w_q = sq("w_q");
        let w_k = sq("w_k");
        let w_v = sq("w_v");
        let w_1 = sq("w_1");
        let w_2 = sq("w_2");
        let w_3 = sq("w_3");
        let w_4 = sq("w_4");
        Self {
            w_q,
            w_k,
            w_v,
            w_1,
            b_1: ParamTensor::gaussian("b_1", 1, d, std, rng),
            w_2,
            b_2: ParamTensor::gaussian("b_2", 1, d, std, rng),
            w_3,
            w_4,
            g: ParamTensor::gaussian("g", 1, d, std, rng),
            w_c: ParamTensor::gaussian("w_c", d, 3 * d, std, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.value.rows()
    }

    /// Fixed order: `w_q w_k w_v w_1 b_1 w_2 b_2 w_3 w_4 g w_c`.
    pub fn tensors(&self) -> [&ParamTensor; 11] {
        [
            &self.w_q, &self.w_k, &self.w_v, &self.w_1, &self.b_1, &self.w_2, &self.b_2,
            &self.w_3, &self.w_4, &self.g, &self.w_c,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut ParamTensor; 11] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_1,
            &mut self.b_1,
            &mut self.w_2,
            &mut self.b_2,
            &mut self.w_3,
            &mut self.w_4,
            &mut self.g,
            &mut self.w_c,
        ]
    }
}

/// Everything the encoder computes for one prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionEncoding {
    /// Feed-forward item states `X̃_s`, one row per prefix item.
    pub states: DenseMatrix,
    pub alpha: Vec<f64>,
    pub x_star: Vec<f64>,
    pub p_s: Vec<f64>,
    pub q_s: Vec<f64>,
}

fn gather_rows(table: &DenseMatrix, items: &[usize]) -> DenseMatrix {
    let d = table.cols();
    let mut e = DenseMatrix::zeros(items.len(), d);
    for (r, &it) in items.iter().enumerate() {
        e.row_mut(r).copy_from_slice(table.row(it));
    }
    e
}

/// `softmax(Q Kᵀ / √d) V` with `Q, K, V = E W_Q, E W_K, E W_V`. No mask.
pub fn self_attention(e: &DenseMatrix, p: &IntraParams) -> Result<DenseMatrix> {
    Ok(attention_parts(e, p)?.out)
}

struct AttentionParts {
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    probs: DenseMatrix,
    out: DenseMatrix,
}

fn attention_parts(e: &DenseMatrix, p: &IntraParams) -> Result<AttentionParts> {
    if e.rows() == 0 {
        return Err(Error::EmptySession);
    }
    let q = e.matmul(&p.w_q.value)?;
    let k = e.matmul(&p.w_k.value)?;
    let v = e.matmul(&p.w_v.value)?;
    let mut logits = q.matmul_nt(&k)?;
    logits.scale(1.0 / (e.cols() as f64).sqrt());
    let probs = softmax_rows(&logits);
    let out = probs.matmul(&v)?;
    Ok(AttentionParts {
        q,
        k,
        v,
        probs,
        out,
    })
}

/// `relu(X W_1 + b_1) W_2 + b_2`.
pub fn ffn(x: &DenseMatrix, p: &IntraParams) -> Result<DenseMatrix> {
    let (_, _, out) = ffn_parts(x, p)?;
    Ok(out)
}

fn ffn_parts(x: &DenseMatrix, p: &IntraParams) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    let mut u = x.matmul(&p.w_1.value)?;
    u.add_row_broadcast(p.b_1.value.data())?;
    let r = u.map(crate::numerics::relu);
    let mut out = r.matmul(&p.w_2.value)?;
    out.add_row_broadcast(p.b_2.value.data())?;
    Ok((u, r, out))
}

struct AggregateParts {
    /// `σ(W_3 x_I + W_4 x_i)` per item.
    gates: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    x_star: Vec<f64>,
}

fn aggregate_parts(states: &DenseMatrix, p: &IntraParams) -> Result<AggregateParts> {
    let n = states.rows();
    if n == 0 {
        return Err(Error::EmptySession);
    }
    let last_proj = p.w_3.value.matvec(states.row(n - 1))?;
    let mut gates = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for i in 0..n {
        let mut a = p.w_4.value.matvec(states.row(i))?;
        for (ai, li) in a.iter_mut().zip(&last_proj) {
            *ai = sigmoid(*ai + li);
        }
        alpha.push(dot(p.g.value.data(), &a));
        gates.push(a);
    }
    softmax_in_place(&mut alpha);
    let mut x_star = vec![0.0; states.cols()];
    for (i, &w) in alpha.iter().enumerate() {
        axpy(w, states.row(i), &mut x_star);
    }
    Ok(AggregateParts {
        gates,
        alpha,
        x_star,
    })
}

/// Attentive aggregation conditioned on the last item. Returns `(x_s*, α)`.
pub fn aggregate(states: &DenseMatrix, p: &IntraParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let parts = aggregate_parts(states, p)?;
    Ok((parts.x_star, parts.alpha))
}

/// Normalized positional weights for a prefix of length `len`.
pub fn positional_weights(len: usize, mode: PositionalMode) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    // 1-based position i, distance from the end |i - I| = len - 1 - idx.
    let mut w: Vec<f64> = (0..len)
        .map(|idx| {
            let k = (len - 1 - idx) as f64 + 1.0;
            match mode {
                PositionalMode::Decay => -k,
                PositionalMode::RawAscending => k,
            }
        })
        .collect();
    softmax_in_place(&mut w);
    w
}

/// `Σ ω_i x_i`.
pub fn positional_fusion(states: &DenseMatrix, mode: PositionalMode) -> Vec<f64> {
    let omega = positional_weights(states.rows(), mode);
    let mut p = vec![0.0; states.cols()];
    for (i, &w) in omega.iter().enumerate() {
        axpy(w, states.row(i), &mut p);
    }
    p
}

/// `W_c [x_I; x_s*; p_s]`.
pub fn session_embedding(
    last: &[f64],
    x_star: &[f64],
    p_s: &[f64],
    w_c: &DenseMatrix,
) -> Result<Vec<f64>> {
    let mut c = Vec::with_capacity(last.len() * 3);
    c.extend_from_slice(last);
    c.extend_from_slice(x_star);
    c.extend_from_slice(p_s);
    w_c.matvec(&c)
}

/// Inner-product score of `q_s` against every item embedding.
pub fn score_items(q_s: &[f64], table: &DenseMatrix) -> Result<Vec<f64>> {
    table.matvec(q_s)
}

fn truncate(prefix: &[usize], max_len: usize) -> &[usize] {
    let start = prefix.len().saturating_sub(max_len.max(1));
    &prefix[start..]
}

/// Inference-time encoding (no dropout).
pub fn encode_session(
    prefix: &[usize],
    table: &DenseMatrix,
    p: &IntraParams,
    cfg: &IntraConfig,
) -> Result<SessionEncoding> {
    let fwd = Forward::run(prefix, table, p, cfg, None)?;
    Ok(SessionEncoding {
        states: fwd.states,
        alpha: fwd.agg.alpha,
        x_star: fwd.agg.x_star,
        p_s: fwd.p_s,
        q_s: fwd.q_s,
    })
}

/// Scores over the whole vocabulary for one prefix.
pub fn predict_scores(
    prefix: &[usize],
    table: &DenseMatrix,
    p: &IntraParams,
    cfg: &IntraConfig,
) -> Result<Vec<f64>> {
    let enc = encode_session(prefix, table, p, cfg)?;
    score_items(&enc.q_s, table)
}

/// Forward pass with every intermediate kept for the backward pass.
struct Forward<'a> {
    items: &'a [usize],
    e: DenseMatrix,
    att: AttentionParts,
    u: DenseMatrix,
    r: DenseMatrix,
    mask: Option<DenseMatrix>,
    /// Post-dropout item states.
    states: DenseMatrix,
    agg: AggregateParts,
    omega: Vec<f64>,
    p_s: Vec<f64>,
    concat: Vec<f64>,
    q_s: Vec<f64>,
}

impl<'a> Forward<'a> {
    fn run(
        prefix: &'a [usize],
        table: &DenseMatrix,
        p: &IntraParams,
        cfg: &IntraConfig,
        mask: Option<DenseMatrix>,
    ) -> Result<Self> {
        let items = truncate(prefix, cfg.max_len);
        if items.is_empty() {
            return Err(Error::EmptySession);
        }
        if let Some(&bad) = items.iter().find(|&&i| i >= table.rows()) {
            return Err(Error::Data(format!(
                "item id {bad} out of range for {} items",
                table.rows()
            )));
        }
        let e = gather_rows(table, items);
        let att = attention_parts(&e, p)?;
        let (u, r, mut states) = ffn_parts(&att.out, p)?;
        if let Some(m) = &mask {
            for (s, k) in states.data_mut().iter_mut().zip(m.data()) {
                *s *= k;
            }
        }
        let agg = aggregate_parts(&states, p)?;
        let omega = positional_weights(items.len(), cfg.positional);
        let mut p_s = vec![0.0; states.cols()];
        for (i, &w) in omega.iter().enumerate() {
            axpy(w, states.row(i), &mut p_s);
        }
        let last = states.row(states.rows() - 1);
        let mut concat = Vec::with_capacity(3 * last.len());
        concat.extend_from_slice(last);
        concat.extend_from_slice(&agg.x_star);
        concat.extend_from_slice(&p_s);
        let q_s = p.w_c.value.matvec(&concat)?;
        Ok(Self {
            items,
            e,
            att,
            u,
            r,
            mask,
            states,
            agg,
            omega,
            p_s,
            concat,
            q_s,
        })
    }

    /// Backpropagates `dq` (gradient w.r.t. `q_s`) into parameter grads
    /// and the item-table grad.
    fn backward(&self, dq: &[f64], p: &mut IntraParams, table_grad: &mut DenseMatrix) -> Result<()> {
        let d = self.q_s.len();
        let n = self.items.len();

        p.w_c.grad.add_outer(1.0, dq, &self.concat);
        let dc = p.w_c.value.matvec_t(dq)?;
        let (d_last, rest) = dc.split_at(d);
        let (d_xstar, d_ps) = rest.split_at(d);

        let mut d_states = DenseMatrix::zeros(n, d);
        axpy(1.0, d_last, d_states.row_mut(n - 1));
        for (i, &w) in self.omega.iter().enumerate() {
            axpy(w, d_ps, d_states.row_mut(i));
        }

        // x* = Σ α_i x_i
        let mut d_alpha = vec![0.0; n];
        for (i, (da, &a)) in d_alpha.iter_mut().zip(&self.agg.alpha).enumerate() {
            axpy(a, d_xstar, d_states.row_mut(i));
            *da = dot(d_xstar, self.states.row(i));
        }
        let mean: f64 = self.agg.alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
        let last_state = self.states.row(n - 1).to_vec();
        let mut d_last_from_gates = vec![0.0; d];
        for (i, (&a, &da)) in self.agg.alpha.iter().zip(&d_alpha).enumerate() {
            let d_logit = a * (da - mean);
            if d_logit == 0.0 {
                continue;
            }
            let gate = &self.agg.gates[i];
            axpy(d_logit, gate, p.g.grad.row_mut(0));
            let d_pre: Vec<f64> = gate
                .iter()
                .zip(p.g.value.data())
                .map(|(s, gj)| d_logit * gj * s * (1.0 - s))
                .collect();
            p.w_3.grad.add_outer(1.0, &d_pre, &last_state);
            p.w_4.grad.add_outer(1.0, &d_pre, self.states.row(i));
            let from_w3 = p.w_3.value.matvec_t(&d_pre)?;
            axpy(1.0, &from_w3, &mut d_last_from_gates);
            let from_w4 = p.w_4.value.matvec_t(&d_pre)?;
            axpy(1.0, &from_w4, d_states.row_mut(i));
        }
        axpy(1.0, &d_last_from_gates, d_states.row_mut(n - 1));

        if let Some(m) = &self.mask {
            for (g, k) in d_states.data_mut().iter_mut().zip(m.data()) {
                *g *= k;
            }
        }

        // X̃ = R W_2 + b_2, R = relu(U), U = X W_1 + b_1
        p.w_2.grad.add_assign(&self.r.matmul_tn(&d_states)?)?;
        axpy(1.0, &d_states.column_sums(), p.b_2.grad.row_mut(0));
        let mut d_u = d_states.matmul_nt(&p.w_2.value)?;
        for (g, &u) in d_u.data_mut().iter_mut().zip(self.u.data()) {
            if u <= 0.0 {
                *g = 0.0;
            }
        }
        p.w_1.grad.add_assign(&self.att.out.matmul_tn(&d_u)?)?;
        axpy(1.0, &d_u.column_sums(), p.b_1.grad.row_mut(0));
        let d_x = d_u.matmul_nt(&p.w_1.value)?;

        // X = P V, P = softmax(Q Kᵀ / √d)
        let d_probs = d_x.matmul_nt(&self.att.v)?;
        let d_v = self.att.probs.matmul_tn(&d_x)?;
        let scale = 1.0 / (d as f64).sqrt();
        let mut d_logits = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let pr = self.att.probs.row(i);
            let gr = d_probs.row(i);
            let inner = dot(pr, gr);
            for (j, out) in d_logits.row_mut(i).iter_mut().enumerate() {
                *out = pr[j] * (gr[j] - inner) * scale;
            }
        }
        let d_q = d_logits.matmul(&self.att.k)?;
        let d_k = d_logits.matmul_tn(&self.att.q)?;

        p.w_q.grad.add_assign(&self.e.matmul_tn(&d_q)?)?;
        p.w_k.grad.add_assign(&self.e.matmul_tn(&d_k)?)?;
        p.w_v.grad.add_assign(&self.e.matmul_tn(&d_v)?)?;
        let mut d_e = d_q.matmul_nt(&p.w_q.value)?;
        d_e.add_assign(&d_k.matmul_nt(&p.w_k.value)?)?;
        d_e.add_assign(&d_v.matmul_nt(&p.w_v.value)?)?;
        for (r, &it) in self.items.iter().enumerate() {
            axpy(1.0, d_e.row(r), table_grad.row_mut(it));
        }
        Ok(())
    }
}

fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> DenseMatrix {
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    DenseMatrix::new(rows, cols, data).expect("mask shape")
}

/// Mean softmax cross-entropy of a batch of instances.
///
/// When `grad_scale` is non-zero, `grad_scale / N` times the gradient is
/// accumulated into `params` and `table.grad`. Dropout is applied only when
/// `rng` is given and the configured rate is positive.
pub fn intra_loss<R: Rng + ?Sized>(
    batch: &[&Instance],
    table: &mut ParamTensor,
    params: &mut IntraParams,
    cfg: &IntraConfig,
    grad_scale: f64,
    mut rng: Option<&mut R>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let m = table.value.rows();
    let d = table.value.cols();
    let n = batch.len() as f64;
    let mut total = 0.0;
    for inst in batch {
        if inst.target >= m {
            return Err(Error::Data(format!(
                "target {} out of range for {m} items",
                inst.target
            )));
        }
        let len = truncate(&inst.prefix, cfg.max_len).len();
        let mask = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => Some(dropout_mask(len, d, cfg.dropout, r)),
            _ => None,
        };
        let fwd = Forward::run(&inst.prefix, &table.value, params, cfg, mask)?;
        let mut probs = table.value.matvec(&fwd.q_s)?;
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + probs.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - probs[inst.target];
        if grad_scale != 0.0 {
            softmax_in_place(&mut probs);
            probs[inst.target] -= 1.0;
            let w = grad_scale / n;
            probs.iter_mut().for_each(|g| *g *= w);
            // z = T q: dT += dz qᵀ, dq = Tᵀ dz
            table.grad.add_outer(1.0, &probs, &fwd.q_s);
            let dq = table.value.matvec_t(&probs)?;
            fwd.backward(&dq, params, &mut table.grad)?;
        }
    }
    Ok(total / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, seeded_rng, Parameterized, SeededRng};
    use approx::assert_abs_diff_eq;

    fn params(d: usize, seed: u64) -> IntraParams {
        IntraParams::init_with_std(d, 0.5, &mut seeded_rng(seed))
    }

    fn set_identity(t: &mut ParamTensor) {
        t.value = DenseMatrix::identity(t.value.rows());
    }

    #[test]
    fn single_item_attention_is_value_projection() {
        let p = params(4, 1);
        let e = DenseMatrix::random_normal(1, 4, 1.0, &mut seeded_rng(2));
        let x = self_attention(&e, &p).unwrap();
        let v = e.matmul(&p.w_v.value).unwrap();
        for (a, b) in x.data().iter().zip(v.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let p = params(3, 1);
        let row = vec![0.3, -0.2, 0.9];
        let e = DenseMatrix::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let x = self_attention(&e, &p).unwrap();
        for r in 1..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(x.get(r, c), x.get(0, c), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let p = params(5, 3);
        let e = DenseMatrix::random_normal(4, 5, 1.0, &mut seeded_rng(4));
        let perm = [2, 0, 3, 1];
        let pe = DenseMatrix::from_rows(&perm.iter().map(|&i| e.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let x = self_attention(&e, &p).unwrap();
        let px = self_attention(&pe, &p).unwrap();
        for (r, &src) in perm.iter().enumerate() {
            for c in 0..5 {
                assert_abs_diff_eq!(px.get(r, c), x.get(src, c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn empty_session_rejected() {
        let p = params(2, 1);
        assert!(matches!(self_attention(&DenseMatrix::zeros(0, 2), &p), Err(Error::EmptySession)));
        let table = DenseMatrix::zeros(3, 2);
        assert!(matches!(
            encode_session(&[], &table, &p, &IntraConfig::default()),
            Err(Error::EmptySession)
        ));
    }

    #[test]
    fn ffn_identity_and_all_negative() {
        let mut p = params(3, 5);
        set_identity(&mut p.w_1);
        set_identity(&mut p.w_2);
        p.b_1.value.fill(0.0);
        p.b_2.value.fill(0.0);
        let x = DenseMatrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![3.0, 0.5, 0.25]]).unwrap();
        assert_eq!(ffn(&x, &p).unwrap(), x);
        p.b_2.value = DenseMatrix::row_vector(vec![0.1, 0.2, 0.3]);
        let neg = x.map(|v| -v - 1.0);
        let out = ffn(&neg, &p).unwrap();
        for r in 0..2 {
            assert_eq!(out.row(r), &[0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn ffn_matches_direct_formula() {
        let p = params(4, 8);
        let x = DenseMatrix::random_normal(3, 4, 1.0, &mut seeded_rng(9));
        let out = ffn(&x, &p).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let mut acc = p.b_2.value.get(0, c);
                for k in 0..4 {
                    let mut h = p.b_1.value.get(0, k);
                    for j in 0..4 {
                        h += x.get(r, j) * p.w_1.value.get(j, k);
                    }
                    acc += h.max(0.0) * p.w_2.value.get(k, c);
                }
                assert_abs_diff_eq!(out.get(r, c), acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_cases() {
        let mut p = params(3, 2);
        let one = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (xs, a) = aggregate(&one, &p).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(xs, vec![1.0, 2.0, 3.0]);

        let many = DenseMatrix::random_normal(4, 3, 1.0, &mut seeded_rng(1));
        let (_, a) = aggregate(&many, &p).unwrap();
        assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-10);

        let same = DenseMatrix::from_rows(&vec![vec![0.4, -0.1, 2.0]; 5]).unwrap();
        let (xs, _) = aggregate(&same, &p).unwrap();
        for (x, y) in xs.iter().zip([0.4, -0.1, 2.0]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }

        p.g.value.fill(0.0);
        let (_, a) = aggregate(&many, &p).unwrap();
        for w in a {
            assert_abs_diff_eq!(w, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn positional_weight_values() {
        assert_eq!(positional_weights(1, PositionalMode::Decay), vec![1.0]);
        let w = positional_weights(3, PositionalMode::Decay);
        // exp(-3), exp(-2), exp(-1) normalized
        let z = (-3f64).exp() + (-2f64).exp() + (-1f64).exp();
        let expect = [(-3f64).exp() / z, (-2f64).exp() / z, (-1f64).exp() / z];
        for (a, b) in w.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(w[0], 0.09003, epsilon = 1e-5);
        assert_abs_diff_eq!(w[1], 0.24473, epsilon = 1e-5);
        assert_abs_diff_eq!(w[2], 0.66524, epsilon = 1e-5);
        let raw = positional_weights(3, PositionalMode::RawAscending);
        assert!(raw[0] > raw[1] && raw[1] > raw[2]);
    }

    #[test]
    fn positional_weights_sum_to_one_and_increase() {
        for len in 1..40 {
            let w = positional_weights(len, PositionalMode::Decay);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(w.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn positional_fusion_of_identical_rows() {
        let same = DenseMatrix::from_rows(&vec![vec![1.5, -3.0]; 4]).unwrap();
        let p = positional_fusion(&same, PositionalMode::Decay);
        assert_abs_diff_eq!(p[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], -3.0, epsilon = 1e-12);
        let one = DenseMatrix::from_rows(&[vec![2.0, 7.0]]).unwrap();
        assert_eq!(positional_fusion(&one, PositionalMode::Decay), vec![2.0, 7.0]);
    }

    #[test]
    fn session_embedding_cases() {
        let d = 3;
        let last = vec![1.0, 2.0, 3.0];
        let xs = vec![-1.0, 0.5, 4.0];
        let ps = vec![0.1, 0.2, 0.3];
        let mut selector = DenseMatrix::zeros(d, 3 * d);
        for i in 0..d {
            selector.set(i, i, 1.0);
        }
        assert_eq!(session_embedding(&last, &xs, &ps, &selector).unwrap(), last);
        let zero = DenseMatrix::zeros(d, 3 * d);
        assert_eq!(session_embedding(&last, &xs, &ps, &zero).unwrap(), vec![0.0; 3]);
        let w = DenseMatrix::random_normal(d, 3 * d, 1.0, &mut seeded_rng(4));
        let q = session_embedding(&last, &xs, &ps, &w).unwrap();
        let concat: Vec<f64> = last.iter().chain(&xs).chain(&ps).copied().collect();
        for (r, qr) in q.iter().enumerate() {
            let direct: f64 = (0..3 * d).map(|c| w.get(r, c) * concat[c]).sum();
            assert_abs_diff_eq!(*qr, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn score_cases() {
        let table = DenseMatrix::random_normal(6, 3, 1.0, &mut seeded_rng(1));
        assert_eq!(score_items(&[0.0; 3], &table).unwrap(), vec![0.0; 6]);
        let q = vec![0.3, -0.7, 1.1];
        assert_eq!(score_items(&q, &DenseMatrix::identity(3)).unwrap(), q);
        let z = score_items(&q, &table).unwrap();
        for (m, &zm) in z.iter().enumerate() {
            let direct: f64 = (0..3).map(|j| q[j] * table.get(m, j)).sum();
            assert_abs_diff_eq!(zm, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn order_matters() {
        let p = params(4, 21);
        let table = DenseMatrix::random_normal(6, 4, 1.0, &mut seeded_rng(22));
        let cfg = IntraConfig::default();
        let a = encode_session(&[1, 2, 3], &table, &p, &cfg).unwrap();
        let b = encode_session(&[2, 1, 3], &table, &p, &cfg).unwrap();
        assert!(a.q_s.iter().zip(&b.q_s).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn uniform_scores_give_log_m() {
        let mut p = params(3, 1);
        p.w_c.value.fill(0.0);
        let mut table = ParamTensor::gaussian("item_table", 4, 3, 1.0, &mut seeded_rng(2));
        let inst = Instance { prefix: vec![0, 1], target: 2 };
        let loss = intra_loss::<SeededRng>(&[&inst], &mut table, &mut p, &IntraConfig::default(), 0.0, None).unwrap();
        assert_abs_diff_eq!(loss, 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_target_is_data_error() {
        let mut p = params(3, 1);
        let mut table = ParamTensor::zeros("item_table", 4, 3);
        let inst = Instance { prefix: vec![0], target: 9 };
        let err = intra_loss::<SeededRng>(&[&inst], &mut table, &mut p, &IntraConfig::default(), 1.0, None)
            .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn truncates_long_prefixes() {
        let p = params(3, 1);
        let table = DenseMatrix::random_normal(10, 3, 1.0, &mut seeded_rng(5));
        let cfg = IntraConfig { max_len: 2, ..Default::default() };
        let long = encode_session(&[5, 6, 7, 8, 9], &table, &p, &cfg).unwrap();
        let short = encode_session(&[8, 9], &table, &p, &cfg).unwrap();
        assert_eq!(long, short);
    }

    struct Bundle {
        table: ParamTensor,
        intra: IntraParams,
    }

    impl Parameterized for Bundle {
        fn params(&self) -> Vec<&ParamTensor> {
            let mut v = vec![&self.table];
            v.extend(self.intra.tensors());
            v
        }
        fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
            let mut v = vec![&mut self.table];
            v.extend(self.intra.tensors_mut());
            v
        }
    }

    fn oracle_loss(b: &Bundle, batch: &[(Vec<usize>, usize)], decay: bool) -> mtd_oracle::Dd {
        let t = b.intra.tensors();
        let v = |i: usize| t[i].value.data();
        let raw = mtd_oracle::intra::IntraRaw {
            d: b.intra.dim(),
            table: b.table.value.data(),
            w_q: v(0),
            w_k: v(1),
            w_v: v(2),
            w_1: v(3),
            b_1: v(4),
            w_2: v(5),
            b_2: v(6),
            w_3: v(7),
            w_4: v(8),
            g: v(9),
            w_c: v(10),
            decay,
        };
        mtd_oracle::intra::intra_loss(&raw, batch)
    }

    fn check_against_oracle(seed: u64, m: usize, d: usize, std: f64, mode: PositionalMode, batch: Vec<Instance>) {
        let mut rng = seeded_rng(seed);
        let mut b = Bundle {
            table: ParamTensor::gaussian("item_table", m, d, std, &mut rng),
            intra: IntraParams::init_with_std(d, std, &mut rng),
        };
        let pairs: Vec<(Vec<usize>, usize)> = batch.iter().map(|i| (i.prefix.clone(), i.target)).collect();
        let refs: Vec<&Instance> = batch.iter().collect();
        let cfg = IntraConfig { positional: mode, ..Default::default() };
        let decay = mode == PositionalMode::Decay;
        let base = oracle_loss(&b, &pairs, decay);
        let plain = intra_loss::<SeededRng>(&refs, &mut b.table, &mut b.intra, &cfg, 0.0, None).unwrap();
        assert!((plain - base.to_f64()).abs() < 1e-12);
        let report = grad_check(&mut b, 1e-5, |s, acc| {
            if acc {
                intra_loss::<SeededRng>(&refs, &mut s.table, &mut s.intra, &cfg, 1.0, None).unwrap()
            } else {
                (oracle_loss(s, &pairs, decay) - base).to_f64()
            }
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked * 2 > b.num_scalars(), "{report:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let batch = vec![
            Instance { prefix: vec![1, 4, 2, 7], target: 3 },
            Instance { prefix: vec![9], target: 0 },
            Instance { prefix: vec![5, 5, 8], target: 5 },
        ];
        check_against_oracle(77, 10, 6, 0.5, PositionalMode::Decay, batch);
    }

    #[test]
    fn gradients_match_finite_differences_raw_positions() {
        let batch = vec![
            Instance { prefix: vec![0, 1, 2, 3, 4, 5], target: 6 },
            Instance { prefix: vec![3, 3], target: 1 },
        ];
        check_against_oracle(5, 8, 4, 0.1, PositionalMode::RawAscending, batch);
    }

    #[test]
    fn gradients_with_fixed_dropout_mask() {
        // Re-seeding the RNG on every call freezes the mask across evaluations.
        let (m, d) = (7, 4);
        let mut rng = seeded_rng(12);
        let mut b = Bundle {
            table: ParamTensor::gaussian("item_table", m, d, 0.5, &mut rng),
            intra: IntraParams::init_with_std(d, 0.5, &mut rng),
        };
        let inst = Instance { prefix: vec![0, 3, 6, 2, 1], target: 4 };
        let cfg = IntraConfig { dropout: 0.3, ..Default::default() };
        let report = grad_check(&mut b, 1e-5, |s, acc| {
            let mut r = seeded_rng(99);
            intra_loss(&[&inst], &mut s.table, &mut s.intra, &cfg, if acc { 1.0 } else { 0.0 }, Some(&mut r))
                .unwrap()
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
