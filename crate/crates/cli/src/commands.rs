use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mtd_core::baselines::{ItemKnnModel, PopModel, Ranker, SPopModel};
use mtd_core::data::{build_vocab, encode_sessions, format_corpus, load_corpus, make_instances, SessionCorpus, Vocab};
use mtd_core::eval::{parse_k_list, ranks_csv, MetricReport, RankingResult};
use mtd_core::graph::build_adjacency;
use mtd_core::intra::{IntraConfig, PositionalMode};
use mtd_core::trainer::{TrainConfig, Trainer};
use mtd_core::{checkpoint, evaluate_model, evaluate_ranker, write_atomic, Error, ModelState};

use crate::args::{BaselineArgs, EvalArgs, Method, Positional, PrepareArgs, RecommendArgs, TrainArgs};
use crate::config::KeyValues;
use crate::error::{usage, CliResult};

/// `path` with `.ext` appended to the full file name.
pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn read_text(path: &Path) -> mtd_core::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

impl From<Positional> for PositionalMode {
    fn from(p: Positional) -> Self {
        match p {
            Positional::Decay => PositionalMode::Decay,
            Positional::Raw => PositionalMode::RawAscending,
        }
    }
}

/// Reads a prepared file of dense IDs. `m` bounds the IDs when known.
fn load_ids(path: &Path, m: Option<usize>) -> mtd_core::Result<Vec<Vec<usize>>> {
    let raw = load_corpus(path)?;
    let mut out = Vec::with_capacity(raw.len());
    for (line, s) in raw.into_iter().enumerate() {
        let mut ids = Vec::with_capacity(s.len());
        for t in s {
            let id = usize::try_from(t).map_err(|_| Error::Parse {
                line: line + 1,
                msg: format!("item id {t} out of range"),
            })?;
            if let Some(m) = m {
                if id >= m {
                    return Err(Error::Data(format!(
                        "{} line {}: item id {id} is outside the vocabulary (M={m})",
                        path.display(),
                        line + 1
                    )));
                }
            }
            ids.push(id);
        }
        out.push(ids);
    }
    Ok(out)
}

fn load_vocab(path: &Path) -> mtd_core::Result<Vocab> {
    Vocab::parse_dump(&read_text(path)?)
}

/// Prepared training corpus; the vocabulary comes from `<train>.vocab`
/// when present and is otherwise the identity over `0..=max id`.
fn load_train_corpus(path: &Path) -> mtd_core::Result<SessionCorpus> {
    let vocab_path = sidecar(path, "vocab");
    let (sessions, vocab) = if vocab_path.exists() {
        let vocab = load_vocab(&vocab_path)?;
        (load_ids(path, Some(vocab.len()))?, vocab)
    } else {
        let sessions = load_ids(path, None)?;
        let m = sessions.iter().flatten().max().map_or(0, |&x| x + 1);
        (sessions, Vocab::from_tokens(0..m as u64))
    };
    if sessions.iter().all(|s| s.len() < 2) {
        return Err(Error::Data(format!("{}: no session with at least two items", path.display())));
    }
    Ok(SessionCorpus { sessions, vocab })
}

fn load_test_instances(path: &Path, m: usize, vocab: &Vocab) -> mtd_core::Result<Vec<mtd_core::data::Instance>> {
    let corpus = SessionCorpus {
        sessions: load_ids(path, Some(m))?,
        vocab: vocab.clone(),
    };
    let inst = make_instances(&corpus);
    if inst.is_empty() {
        return Err(Error::Data(format!("{}: no test instances", path.display())));
    }
    Ok(inst)
}

fn parse_ks(list: &str, m: usize) -> CliResult<Vec<usize>> {
    let ks = parse_k_list(list).map_err(usage)?;
    if let Some(&k) = ks.iter().find(|&&k| k > m) {
        return Err(usage(format!("K={k} exceeds the number of items M={m}")));
    }
    Ok(ks)
}

fn emit_report(
    results: &[RankingResult],
    ks: &[usize],
    report: Option<&Path>,
    ranks: Option<&Path>,
) -> CliResult<()> {
    let rep = MetricReport::from_results(results, ks);
    let lines = rep.to_machine_lines();
    print!("{}", rep.to_table());
    print!("{lines}");
    if let Some(p) = report {
        write_atomic(p, lines.as_bytes())?;
    }
    if let Some(p) = ranks {
        write_atomic(p, ranks_csv(results).as_bytes())?;
    }
    Ok(())
}

pub fn prepare(a: &PrepareArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.split_frac) {
        return Err(usage(format!("--split-frac must lie in [0, 1], got {}", a.split_frac)));
    }
    if a.min_freq == 0 || a.min_len < 2 {
        return Err(usage("--min-freq must be at least 1 and --min-len at least 2"));
    }
    let raw = load_corpus(&a.input)?;
    let filtered = build_vocab(&raw, a.min_freq, a.min_len)?.decoded_sessions();
    let n_train = (a.split_frac * filtered.len() as f64).round() as usize;
    let (train_raw, test_raw) = filtered.split_at(n_train);
    if train_raw.is_empty() {
        return Err(Error::Data("training split is empty".into()).into());
    }
    let train = build_vocab(train_raw, 1, a.min_len)?;
    let test = encode_sessions(test_raw, &train.vocab);
    let vocab_out = a.vocab_out.clone().unwrap_or_else(|| sidecar(&a.train_out, "vocab"));
    write_atomic(&a.train_out, format_corpus(&train.sessions).as_bytes())?;
    write_atomic(&a.test_out, format_corpus(&test).as_bytes())?;
    write_atomic(&vocab_out, train.vocab.to_dump().as_bytes())?;
    println!(
        "sessions: {} read, {} kept; train {} sessions ({} clicks), test {} sessions; items M={}",
        raw.len(),
        filtered.len(),
        train.sessions.len(),
        train.num_clicks(),
        test.len(),
        train.num_items()
    );
    Ok(())
}

struct ResolvedTrain {
    train: PathBuf,
    ckpt_out: PathBuf,
    cfg: TrainConfig,
}

fn resolve_train(a: &TrainArgs) -> CliResult<ResolvedTrain> {
    let kv = match &a.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    let d = TrainConfig::default();
    let positional = match a.positional {
        Some(p) => p.into(),
        None => match kv.get_str("positional") {
            Some(s) => s.parse::<PositionalMode>().map_err(usage)?,
            None => d.positional,
        },
    };
    let cfg = TrainConfig {
        dim: a.dim.or(kv.get("dim")?).unwrap_or(d.dim),
        lr: a.lr.or(kv.get("lr")?).unwrap_or(d.lr),
        batch: a.batch.or(kv.get("batch")?).unwrap_or(d.batch),
        epochs: a.epochs.or(kv.get("epochs")?).unwrap_or(d.epochs),
        lambda1: a.lambda1.or(kv.get("lambda1")?).unwrap_or(d.lambda1),
        lambda2: a.lambda2.or(kv.get("lambda2")?).unwrap_or(d.lambda2),
        freq: a.freq.or(kv.get("freq")?).unwrap_or(d.freq),
        dropout: a.dropout.or(kv.get("dropout")?).unwrap_or(d.dropout),
        seed: a.seed.or(kv.get("seed")?).unwrap_or(d.seed),
        gcn_layers: a.gcn_layers.or(kv.get("gcn_layers")?).unwrap_or(d.gcn_layers),
        disable_graph: a.no_graph || kv.get("no_graph")?.unwrap_or(false),
        positional,
        max_len: a.max_len.or(kv.get("max_len")?).unwrap_or(d.max_len),
    };
    cfg.validate().map_err(usage)?;
    let train = a
        .train
        .clone()
        .or_else(|| kv.get_str("train").map(PathBuf::from))
        .ok_or_else(|| usage("--train is required"))?;
    let ckpt_out = a
        .ckpt_out
        .clone()
        .or_else(|| kv.get_str("ckpt_out").map(PathBuf::from))
        .ok_or_else(|| usage("--ckpt-out is required"))?;
    Ok(ResolvedTrain { train, ckpt_out, cfg })
}

fn run_id(seed: u64) -> String {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}{:09}-{seed:x}", now.as_secs(), now.subsec_nanos())
}

fn manifest(r: &ResolvedTrain, m: usize, instances: usize) -> KeyValues {
    let c = &r.cfg;
    let mut kv = KeyValues::default();
    kv.insert("train", r.train.display());
    kv.insert("ckpt_out", r.ckpt_out.display());
    kv.insert("dim", c.dim);
    kv.insert("lr", c.lr);
    kv.insert("batch", c.batch);
    kv.insert("epochs", c.epochs);
    kv.insert("lambda1", c.lambda1);
    kv.insert("lambda2", c.lambda2);
    kv.insert("freq", c.freq);
    kv.insert("dropout", c.dropout);
    kv.insert("seed", c.seed);
    kv.insert("gcn_layers", c.gcn_layers);
    kv.insert("no_graph", c.disable_graph);
    kv.insert("positional", c.positional);
    kv.insert("max_len", c.max_len);
    kv.insert("num_items", m);
    kv.insert("instances", instances);
    kv.insert("run_id", run_id(c.seed));
    kv
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let r = resolve_train(a)?;
    let corpus = load_train_corpus(&r.train)?;
    let instances = make_instances(&corpus);
    let m = corpus.num_items();
    if m < 2 {
        return Err(Error::Data(format!("need at least two items, found M={m}")).into());
    }
    let adj = build_adjacency(&corpus);
    println!(
        "training: M={m} instances={} adjacency_entries={} d={} epochs={} graph={}",
        instances.len(),
        adj.nnz(),
        r.cfg.dim,
        r.cfg.epochs,
        if r.cfg.disable_graph { "off" } else { "on" }
    );
    let mut trainer = Trainer::new(r.cfg.clone(), m)?;
    for _ in 0..r.cfg.epochs {
        let rep = trainer.train_epoch(&instances, &adj)?;
        let graph = rep.graph_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.6}"));
        println!(
            "epoch {:>3}  graph_loss={graph}  intra_loss={:.6}  graph_ms={:.1}  intra_ms={:.1}  intra_steps={}",
            rep.epoch,
            rep.intra_loss,
            rep.graph_time.as_secs_f64() * 1e3,
            rep.intra_time.as_secs_f64() * 1e3,
            rep.intra_steps
        );
    }
    let state = trainer.into_state();
    checkpoint::save(&state, &r.ckpt_out)?;
    write_atomic(sidecar(&r.ckpt_out, "vocab"), corpus.vocab.to_dump().as_bytes())?;
    write_atomic(
        sidecar(&r.ckpt_out, "manifest"),
        manifest(&r, m, instances.len()).to_text().as_bytes(),
    )?;
    println!("checkpoint written to {}", r.ckpt_out.display());
    Ok(())
}

/// Encoder settings: explicit flag, then the checkpoint manifest, then defaults.
fn intra_config_for(ckpt: &Path, flag: Option<Positional>) -> CliResult<IntraConfig> {
    let kv = KeyValues::load_optional(&sidecar(ckpt, "manifest"))?;
    let d = IntraConfig::default();
    let positional = match flag {
        Some(p) => p.into(),
        None => match kv.get_str("positional") {
            Some(s) => s.parse::<PositionalMode>().map_err(usage)?,
            None => d.positional,
        },
    };
    Ok(IntraConfig {
        positional,
        dropout: 0.0,
        max_len: kv.get("max_len")?.unwrap_or(d.max_len),
    })
}

fn checkpoint_vocab(ckpt: &Path, explicit: Option<&Path>, state: &ModelState) -> CliResult<Option<Vocab>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let p = sidecar(ckpt, "vocab");
            if !p.exists() {
                return Ok(None);
            }
            p
        }
    };
    let vocab = load_vocab(&path)?;
    if vocab.len() != state.num_items() {
        return Err(Error::Data(format!(
            "vocabulary mismatch: {} has M={} items but the checkpoint has M={}",
            path.display(),
            vocab.len(),
            state.num_items()
        ))
        .into());
    }
    Ok(Some(vocab))
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let state = checkpoint::load(&a.ckpt)?;
    let m = state.num_items();
    let vocab = checkpoint_vocab(&a.ckpt, a.vocab.as_deref(), &state)?
        .unwrap_or_else(|| Vocab::from_tokens(0..m as u64));
    let ks = parse_ks(&a.k, m)?;
    let cfg = intra_config_for(&a.ckpt, a.positional)?;
    let instances = load_test_instances(&a.test, m, &vocab)?;
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let results = evaluate_model(&state, &cfg, &instances, kmax)?;
    emit_report(&results, &ks, a.report.as_deref(), a.ranks.as_deref())
}

pub fn recommend(a: &RecommendArgs) -> CliResult<()> {
    let state = checkpoint::load(&a.ckpt)?;
    let vocab = checkpoint_vocab(&a.ckpt, a.vocab.as_deref(), &state)?.ok_or_else(|| {
        Error::Data(format!(
            "no vocabulary: pass --vocab or provide {}",
            sidecar(&a.ckpt, "vocab").display()
        ))
    })?;
    let mut prefix = Vec::new();
    for tok in a.session.split_whitespace() {
        match tok.parse::<u64>().ok().and_then(|t| vocab.encode(t)) {
            Some(id) => prefix.push(id),
            None => eprintln!("warning: unknown token `{tok}` ignored"),
        }
    }
    if prefix.is_empty() {
        return Err(usage("the session has no known items"));
    }
    if a.topk == 0 {
        return Err(usage("--topk must be at least 1"));
    }
    let cfg = intra_config_for(&a.ckpt, a.positional)?;
    let scores = mtd_core::intra::predict_scores(&prefix, state.table(), &state.intra, &cfg)?;
    let top = mtd_core::eval::top_k(&scores, a.topk.min(scores.len()));
    for (rank, id) in top.into_iter().enumerate() {
        let token = vocab.decode(id).expect("vocabulary covers every item");
        println!("{}\t{token}\t{:.6}", rank + 1, scores[id]);
    }
    Ok(())
}

pub fn baseline(a: &BaselineArgs) -> CliResult<()> {
    let corpus = load_train_corpus(&a.train)?;
    let m = corpus.num_items();
    let ks = parse_ks(&a.k, m)?;
    let instances = load_test_instances(&a.test, m, &corpus.vocab)?;
    let ranker: Box<dyn Ranker> = match a.method {
        Method::Pop => Box::new(PopModel::fit(&corpus)),
        Method::Spop => Box::new(SPopModel::fit(&corpus)),
        Method::Itemknn => {
            if a.neighbors == 0 {
                return Err(usage("--neighbors must be at least 1"));
            }
            Box::new(ItemKnnModel::fit(&corpus, a.neighbors))
        }
    };
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let results = evaluate_ranker(ranker.as_ref(), &instances, kmax);
    emit_report(&results, &ks, a.report.as_deref(), a.ranks.as_deref())
}
