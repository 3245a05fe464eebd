//! Session corpus parsing, vocabulary filtering, and prefix expansion.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A session as read from disk: external item tokens in click order.
pub type RawSession = Vec<u64>;

/// Minimum item frequency kept by default.
pub const DEFAULT_MIN_FREQ: usize = 5;
/// Minimum session length kept by default.
pub const DEFAULT_MIN_LEN: usize = 2;

/// Bijection between external tokens and contiguous internal IDs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    to_internal: HashMap<u64, usize>,
    to_external: Vec<u64>,
}

impl Vocab {
    /// Builds a vocabulary from tokens in first-appearance order.
    /// Duplicates are ignored.
    pub fn from_tokens(tokens: impl IntoIterator<Item = u64>) -> Self {
        let mut v = Vocab::default();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, token: u64) -> usize {
        let next = self.to_external.len();
        *self.to_internal.entry(token).or_insert_with(|| {
            self.to_external.push(token);
            next
        })
    }

    pub fn len(&self) -> usize {
        self.to_external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_external.is_empty()
    }

    pub fn encode(&self, token: u64) -> Option<usize> {
        self.to_internal.get(&token).copied()
    }

    pub fn decode(&self, id: usize) -> Option<u64> {
        self.to_external.get(id).copied()
    }

    pub fn tokens(&self) -> &[u64] {
        &self.to_external
    }

    /// `external_token<TAB>internal_id` per line, in ID order.
    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        for (id, tok) in self.to_external.iter().enumerate() {
            let _ = writeln!(s, "{tok}\t{id}");
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut v = Vocab::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `token<TAB>id`"))?;
            let tok: u64 = tok.trim().parse().map_err(|_| parse_err("bad token"))?;
            let id: usize = id.trim().parse().map_err(|_| parse_err("bad id"))?;
            if id != v.len() || v.to_internal.contains_key(&tok) {
                return Err(parse_err("ids must be contiguous and tokens unique"));
            }
            v.insert(tok);
        }
        Ok(v)
    }
}

/// Filtered, remapped training sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionCorpus {
    pub sessions: Vec<Vec<usize>>,
    pub vocab: Vocab,
}

impl SessionCorpus {
    /// Vocabulary size `M`.
    pub fn num_items(&self) -> usize {
        self.vocab.len()
    }

    /// The sessions in external tokens.
    pub fn decoded_sessions(&self) -> Vec<RawSession> {
        self.sessions
            .iter()
            .map(|s| s.iter().map(|&i| self.vocab.to_external[i]).collect())
            .collect()
    }

    /// Total item occurrences.
    pub fn num_clicks(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }
}

/// A (prefix, next item) supervision pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// Parses corpus text: one session per line, whitespace-separated integer
/// tokens. Blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<RawSession>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let session = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<u64>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("invalid item token `{tok}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(session);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<RawSession>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

/// Renders sessions back into the corpus text format.
pub fn format_corpus<T: std::fmt::Display>(sessions: &[Vec<T>]) -> String {
    let mut s = String::new();
    for sess in sessions {
        let mut first = true;
        for t in sess {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{t}");
        }
        s.push('\n');
    }
    s
}

/// Drops items seen fewer than `min_freq` times, then drops sessions
/// shorter than `min_len`, then assigns IDs in first-appearance order.
///
/// Dropping a session lowers the counts of the items it held, so the two
/// filters are repeated until nothing changes; this makes the result a
/// fixed point of itself.
pub fn build_vocab(raw: &[RawSession], min_freq: usize, min_len: usize) -> Result<SessionCorpus> {
    let min_len = min_len.max(1);
    let mut current: Vec<RawSession> = raw.to_vec();
    loop {
        let mut freq: HashMap<u64, usize> = HashMap::new();
        for &t in current.iter().flatten() {
            *freq.entry(t).or_insert(0) += 1;
        }
        let before = current.iter().map(Vec::len).sum::<usize>();
        current = current
            .into_iter()
            .map(|s| s.into_iter().filter(|t| freq[t] >= min_freq).collect::<Vec<_>>())
            .filter(|s| s.len() >= min_len)
            .collect();
        if current.iter().map(Vec::len).sum::<usize>() == before {
            break;
        }
    }
    if current.is_empty() {
        return Err(Error::Data(format!(
            "no sessions survive filtering (min_freq={min_freq}, min_len={min_len})"
        )));
    }
    let mut vocab = Vocab::default();
    let sessions = current
        .into_iter()
        .map(|s| s.into_iter().map(|t| vocab.insert(t)).collect())
        .collect();
    Ok(SessionCorpus { sessions, vocab })
}

fn expand(session: &[usize], out: &mut Vec<Instance>) {
    for i in 1..session.len() {
        out.push(Instance {
            prefix: session[..i].to_vec(),
            target: session[i],
        });
    }
}

/// Each session `[v1..vI]` yields `([v1..vi], v(i+1))` for `i = 1..I-1`.
pub fn make_instances(corpus: &SessionCorpus) -> Vec<Instance> {
    let mut out = Vec::new();
    for s in &corpus.sessions {
        expand(s, &mut out);
    }
    out
}

/// Maps test sessions through a training vocabulary, removing unknown
/// items and sessions that fall below two items.
pub fn encode_sessions(raw: &[RawSession], vocab: &Vocab) -> Vec<Vec<usize>> {
    raw.iter()
        .map(|s| s.iter().filter_map(|&t| vocab.encode(t)).collect::<Vec<_>>())
        .filter(|s| s.len() >= 2)
        .collect()
}

/// Test-side counterpart of [`make_instances`].
pub fn apply_vocab(raw: &[RawSession], vocab: &Vocab) -> Vec<Instance> {
    let mut out = Vec::new();
    for s in encode_sessions(raw, vocab) {
        expand(&s, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_lines_in_order() {
        let raw = parse_corpus("5 3 5 9\n\n1 2\n  \n7 7 7\n").unwrap();
        assert_eq!(raw, vec![vec![5, 3, 5, 9], vec![1, 2], vec![7, 7, 7]]);
    }

    #[test]
    fn garbage_reports_line_number() {
        let err = parse_corpus("1 2\n3 x4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus("/definitely/not/here.txt").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn no_filtering_assigns_first_appearance_ids() {
        let c = build_vocab(&[vec![7, 8], vec![8, 9]], 1, 2).unwrap();
        assert_eq!(c.num_items(), 3);
        assert_eq!(c.vocab.encode(7), Some(0));
        assert_eq!(c.vocab.encode(8), Some(1));
        assert_eq!(c.vocab.encode(9), Some(2));
        assert_eq!(c.sessions, vec![vec![0, 1], vec![1, 2]]);
    }

    #[test]
    fn rare_items_removed_and_short_sessions_dropped() {
        // 1 appears 6 times, 2 appears 5 times, 3 appears 4 times, 4 once.
        let raw = vec![
            vec![1, 2, 3],
            vec![1, 2, 3],
            vec![1, 2, 3],
            vec![1, 2, 3],
            vec![1, 2],
            vec![4, 1],
        ];
        let c = build_vocab(&raw, 5, 2).unwrap();
        assert_eq!(c.vocab.encode(3), None);
        assert_eq!(c.num_items(), 2);
        assert_eq!(c.vocab.encode(4), None);
        // [4, 1] shrinks to [1] and is dropped.
        assert_eq!(c.sessions.len(), 5);
        assert!(c.sessions.iter().all(|s| s.len() >= 2));
    }

    #[test]
    fn everything_filtered_is_data_error() {
        let err = build_vocab(&[vec![1, 2]], 5, 2).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn prefix_expansion() {
        let c = build_vocab(&[vec![10, 11, 12]], 1, 2).unwrap();
        let inst = make_instances(&c);
        assert_eq!(
            inst,
            vec![
                Instance { prefix: vec![0], target: 1 },
                Instance { prefix: vec![0, 1], target: 2 },
            ]
        );
        let c = build_vocab(&[vec![1, 2], vec![1, 2, 3], vec![1, 2, 3, 4]], 1, 2).unwrap();
        assert_eq!(make_instances(&c).len(), 6);
        let c = build_vocab(&[vec![1, 2]], 1, 2).unwrap();
        assert_eq!(make_instances(&c).len(), 1);
    }

    #[test]
    fn apply_vocab_cases() {
        let train = build_vocab(&[vec![1, 2, 3]], 1, 2).unwrap();
        let v = &train.vocab;
        assert_eq!(
            apply_vocab(&[vec![99, 1, 2]], v),
            vec![Instance { prefix: vec![0], target: 1 }]
        );
        assert!(apply_vocab(&[vec![98, 99]], v).is_empty());
        let known = vec![vec![1, 2, 3], vec![3, 2]];
        let c2 = SessionCorpus {
            sessions: encode_sessions(&known, v),
            vocab: v.clone(),
        };
        assert_eq!(apply_vocab(&known, v), make_instances(&c2));
    }

    #[test]
    fn vocab_dump_round_trip() {
        let v = Vocab::from_tokens([42, 7, 1000]);
        let dump = v.to_dump();
        assert_eq!(dump, "42\t0\n7\t1\n1000\t2\n");
        assert_eq!(Vocab::parse_dump(&dump).unwrap(), v);
        assert!(Vocab::parse_dump("1\t1\n").is_err());
    }

    fn arb_raw() -> impl Strategy<Value = Vec<RawSession>> {
        proptest::collection::vec(proptest::collection::vec(0u64..15, 0..8), 1..30)
    }

    proptest! {
        #[test]
        fn corpus_invariants(raw in arb_raw(), min_freq in 1usize..4, min_len in 1usize..4) {
            if let Ok(c) = build_vocab(&raw, min_freq, min_len) {
                let m = c.num_items();
                prop_assert!(c.sessions.iter().all(|s| s.len() >= min_len.max(1)));
                prop_assert!(c.sessions.iter().flatten().all(|&i| i < m));
                for &t in c.vocab.tokens() {
                    prop_assert_eq!(c.vocab.decode(c.vocab.encode(t).unwrap()), Some(t));
                }
                let expected: usize = c.sessions.iter().map(|s| s.len() - 1).sum();
                prop_assert_eq!(make_instances(&c).len(), expected);
                // idempotence
                let again = build_vocab(&c.decoded_sessions(), min_freq, min_len).unwrap();
                prop_assert_eq!(&again, &c);
            }
        }
    }
}
