//! Browser bindings: positional weights, the normalized item graph of a
//! pasted corpus, and a small planted-cycle model trained in the page.

use mtd_core::data::{build_vocab, make_instances, parse_corpus, Instance};
use mtd_core::graph::{build_adjacency, SparseAdjacency};
use mtd_core::intra::{encode_session, score_items, PositionalMode};
use mtd_core::numerics::seeded_rng;
use mtd_core::synth::cycle_sessions;
use mtd_core::trainer::{TrainConfig, Trainer};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

pub fn weights(len: usize, mode: &str) -> Result<Vec<f64>, String> {
    let mode: PositionalMode = mode.parse()?;
    Ok(mtd_core::intra::positional_weights(len, mode))
}

/// Normalized positional weights for a session of `len` items; `mode` is
/// `decay` or `raw`.
#[wasm_bindgen(js_name = positionalWeights)]
pub fn positional_weights(len: usize, mode: &str) -> Result<Vec<f64>, JsError> {
    weights(len, mode).map_err(js_err)
}

/// Normalized transition graph of a corpus, flattened for drawing.
#[wasm_bindgen]
pub struct GraphView {
    tokens: Vec<String>,
    rows: Vec<u32>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

impl GraphView {
    pub fn from_corpus(text: &str) -> Result<Self, String> {
        let raw = parse_corpus(text).map_err(|e| e.to_string())?;
        let corpus = build_vocab(&raw, 1, 2).map_err(|e| e.to_string())?;
        let adj = build_adjacency(&corpus);
        Ok(Self::new(corpus.vocab.tokens().iter().map(u64::to_string).collect(), &adj))
    }

    fn new(tokens: Vec<String>, adj: &SparseAdjacency) -> Self {
        let mut rows = Vec::with_capacity(adj.nnz());
        for i in 0..adj.num_nodes() {
            rows.extend(std::iter::repeat_n(i as u32, adj.degree(i)));
        }
        Self {
            tokens,
            rows,
            cols: adj.col_indices().iter().map(|&c| c as u32).collect(),
            values: adj.values().to_vec(),
        }
    }
}

#[wasm_bindgen]
impl GraphView {
    /// Parses one session per line and builds the graph over all items.
    #[wasm_bindgen(constructor)]
    pub fn parse(text: &str) -> Result<GraphView, JsError> {
        Self::from_corpus(text).map_err(js_err)
    }

    #[wasm_bindgen(getter, js_name = numNodes)]
    pub fn num_nodes(&self) -> usize {
        self.tokens.len()
    }

    /// External tokens, space-separated, in node order.
    #[wasm_bindgen(getter)]
    pub fn tokens(&self) -> String {
        self.tokens.join(" ")
    }

    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> Vec<u32> {
        self.rows.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> Vec<u32> {
        self.cols.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

/// Scores and attention for one session.
#[wasm_bindgen]
pub struct Recommendation {
    items: Vec<u32>,
    scores: Vec<f64>,
    alpha: Vec<f64>,
    session: Vec<u32>,
}

#[wasm_bindgen]
impl Recommendation {
    /// Recommended items, best first.
    #[wasm_bindgen(getter)]
    pub fn items(&self) -> Vec<u32> {
        self.items.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn scores(&self) -> Vec<f64> {
        self.scores.clone()
    }

    /// Attention weight of each session item that was used.
    #[wasm_bindgen(getter)]
    pub fn alpha(&self) -> Vec<f64> {
        self.alpha.clone()
    }

    /// The session items the weights refer to.
    #[wasm_bindgen(getter)]
    pub fn session(&self) -> Vec<u32> {
        self.session.clone()
    }
}

/// A model trained in the page on walks over the cycle `i -> i+1 mod n`.
#[wasm_bindgen]
pub struct CycleDemo {
    trainer: Trainer,
    instances: Vec<Instance>,
    adj: SparseAdjacency,
    to_internal: Vec<usize>,
    to_item: Vec<u32>,
    last_loss: f64,
}

impl CycleDemo {
    pub fn build(items: usize, dim: usize, use_graph: bool, seed: u64) -> Result<Self, String> {
        if items < 3 {
            return Err("need at least 3 items".into());
        }
        let mut rng = seeded_rng(seed);
        let sessions = cycle_sessions(items, 6, 10 * items, &mut rng);
        let corpus = build_vocab(&sessions, 1, 2).map_err(|e| e.to_string())?;
        let m = corpus.num_items();
        let mut to_internal = vec![usize::MAX; items];
        let mut to_item = vec![0; m];
        for (id, &tok) in corpus.vocab.tokens().iter().enumerate() {
            to_internal[tok as usize] = id;
            to_item[id] = tok as u32;
        }
        let cfg = TrainConfig {
            dim,
            batch: 64,
            lr: 5e-3,
            seed,
            disable_graph: !use_graph,
            ..Default::default()
        };
        Ok(Self {
            trainer: Trainer::new(cfg, m).map_err(|e| e.to_string())?,
            instances: make_instances(&corpus),
            adj: build_adjacency(&corpus),
            to_internal,
            to_item,
            last_loss: f64::NAN,
        })
    }

    pub fn run_epochs(&mut self, n: usize) -> Result<f64, String> {
        for _ in 0..n {
            if !self.trainer.config.disable_graph {
                self.trainer.graph_phase(&self.adj).map_err(|e| e.to_string())?;
            }
            self.last_loss = self.trainer.intra_pass(&self.instances).map_err(|e| e.to_string())?;
        }
        Ok(self.last_loss)
    }

    pub fn rank(&self, session: &[u32], topk: usize) -> Result<Recommendation, String> {
        let prefix: Vec<usize> = session
            .iter()
            .filter_map(|&i| self.to_internal.get(i as usize).copied().filter(|&x| x != usize::MAX))
            .collect();
        if prefix.is_empty() {
            return Err("session has no known items".into());
        }
        let state = &self.trainer.state;
        let cfg = self.trainer.config.intra_config();
        let enc = encode_session(&prefix, state.table(), &state.intra, &cfg).map_err(|e| e.to_string())?;
        let scores = score_items(&enc.q_s, state.table()).map_err(|e| e.to_string())?;
        let top = mtd_core::eval::top_k(&scores, topk.max(1));
        let used = &prefix[prefix.len() - enc.alpha.len()..];
        Ok(Recommendation {
            items: top.iter().map(|&i| self.to_item[i]).collect(),
            scores: top.iter().map(|&i| scores[i]).collect(),
            alpha: enc.alpha,
            session: used.iter().map(|&i| self.to_item[i]).collect(),
        })
    }
}

#[wasm_bindgen]
impl CycleDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(items: usize, dim: usize, use_graph: bool, seed: u32) -> Result<CycleDemo, JsError> {
        Self::build(items, dim, use_graph, seed as u64).map_err(js_err)
    }

    /// Trains `n` more epochs; returns the last intra-session loss.
    pub fn train(&mut self, n: usize) -> Result<f64, JsError> {
        self.run_epochs(n).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn epochs(&self) -> usize {
        self.trainer.epochs_done()
    }

    #[wasm_bindgen(getter, js_name = lastLoss)]
    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Ranks items after `session` (item numbers on the cycle).
    pub fn recommend(&self, session: Vec<u32>, topk: usize) -> Result<Recommendation, JsError> {
        self.rank(&session, topk).map_err(js_err)
    }
}
