//! Labeled plain-text corpora, tokenization, budgets and held-out splits.
//!
//! On disk a corpus root holds one directory per label, each containing
//! `.txt` documents: `<root>/<label>/*.txt`. Every document becomes its own
//! token sequence, opened by a document-start marker.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::digest_hex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Language,
    Culture,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Language => "language",
            Self::Culture => "culture",
        })
    }
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "language" => Ok(Self::Language),
            "culture" => Ok(Self::Culture),
            other => Err(Error::Config(format!("unknown label kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelId {
    pub kind: LabelKind,
    pub name: String,
}

impl LabelId {
    pub fn new(kind: LabelKind, name: impl Into<String>) -> Self {
        Self {
            kind,
            name: name.into(),
        }
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.name)
    }
}

/// Culture label -> associated language label.
pub type CultureMap = BTreeMap<String, String>;

pub fn load_culture_map(path: &Path) -> Result<CultureMap> {
    crate::io::read_json(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub label: LabelId,
    pub documents: Vec<String>,
    /// Source file of each document, parallel to `documents`.
    pub paths: Vec<PathBuf>,
    pub token_budget: Option<usize>,
}

/// One `LabeledCorpus` per subdirectory of `root`, in name order; documents
/// in path order.
pub fn ingest_dir(root: &Path, kind: LabelKind) -> Result<Vec<LabeledCorpus>> {
    let mut label_dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            label_dirs.push(entry.path());
        }
    }
    if label_dirs.is_empty() {
        return Err(Error::Corpus(format!("{}: no label directories", root.display())));
    }
    label_dirs.sort();

    label_dirs
        .into_iter()
        .map(|dir| {
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut files = Vec::new();
            for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
                    files.push(path);
                }
            }
            if files.is_empty() {
                return Err(Error::Corpus(format!("label {name:?} has no .txt documents")));
            }
            files.sort();
            let documents = files
                .par_iter()
                .map(|p| {
                    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                    String::from_utf8(bytes).map_err(|_| Error::Utf8 { path: p.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LabeledCorpus {
                label: LabelId::new(kind, name),
                documents,
                paths: files,
                token_budget: None,
            })
        })
        .collect()
}

/// Token ids grouped into documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    tokens: Vec<u32>,
    /// Document offsets into `tokens`; always starts with 0, one more entry
    /// than there are documents.
    bounds: Vec<usize>,
}

impl TokenStream {
    pub fn new() -> Self {
        Self {
            tokens: Vec::new(),
            bounds: vec![0],
        }
    }

    pub fn from_documents<I, D>(docs: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: AsRef<[u32]>,
    {
        let mut s = Self::new();
        for d in docs {
            s.push_document(d.as_ref());
        }
        s
    }

    pub fn push_document(&mut self, doc: &[u32]) {
        self.tokens.extend_from_slice(doc);
        self.bounds.push(self.tokens.len());
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_documents(&self) -> usize {
        self.bounds.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn document(&self, i: usize) -> &[u32] {
        &self.tokens[self.bounds[i]..self.bounds[i + 1]]
    }

    pub fn documents(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.bounds.windows(2).map(|w| &self.tokens[w[0]..w[1]])
    }

    /// Forward-pass sequences: each document split into chunks of at most
    /// `max_len`, tagged with whether the chunk opens its document.
    pub fn sequences(&self, max_len: usize) -> impl Iterator<Item = (&[u32], bool)> + '_ {
        let max_len = max_len.max(1);
        self.documents()
            .flat_map(move |d| d.chunks(max_len).enumerate().map(|(i, c)| (c, i == 0)))
    }

    pub fn max_id(&self) -> Option<u32> {
        self.tokens.iter().copied().max()
    }

    /// Contiguous slices of whole documents, `n` roughly equal parts.
    pub fn shards(&self, n: usize) -> Vec<TokenStream> {
        let n = n.max(1);
        let docs = self.n_documents();
        (0..n)
            .map(|k| {
                let (lo, hi) = (k * docs / n, (k + 1) * docs / n);
                TokenStream::from_documents((lo..hi).map(|i| self.document(i)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TokenizerSpec {
    /// UTF-8 byte `b` maps to id `b + 1`; id 0 marks document start.
    Byte,
    /// One token string per line, id = line number; input split on whitespace.
    /// A line reading `<s>` is the document-start marker, otherwise the
    /// marker takes the next free id.
    VocabMap {
        path: PathBuf,
        #[serde(default)]
        unknown_id: Option<u32>,
    },
}

impl FromStr for TokenizerSpec {
    type Err = Error;

    /// `byte` or `vocab:<path>[:unk=<id>]`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "byte" {
            return Ok(Self::Byte);
        }
        let rest = s
            .strip_prefix("vocab:")
            .ok_or_else(|| Error::Config(format!("tokenizer must be `byte` or `vocab:<path>`, got {s:?}")))?;
        let (path, unknown_id) = match rest.rsplit_once(":unk=") {
            Some((p, id)) => (
                p,
                Some(id.parse().map_err(|_| Error::Config(format!("bad unknown id {id:?}")))?),
            ),
            None => (rest, None),
        };
        Ok(Self::VocabMap {
            path: PathBuf::from(path),
            unknown_id,
        })
    }
}

pub const BOS_TOKEN: &str = "<s>";

#[derive(Debug, Clone)]
enum Mode {
    Byte,
    Vocab {
        ids: HashMap<String, u32>,
        unknown_id: Option<u32>,
    },
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    mode: Mode,
    bos: u32,
    vocab_size: usize,
    fingerprint: String,
}

impl Tokenizer {
    pub fn byte() -> Self {
        Self {
            mode: Mode::Byte,
            bos: 0,
            vocab_size: 257,
            fingerprint: digest_hex(b"byte"),
        }
    }

    pub fn from_vocab(tokens: &[String], unknown_id: Option<u32>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Corpus(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        let (bos, vocab_size) = match ids.get(BOS_TOKEN) {
            Some(&id) => (id, tokens.len()),
            None => (tokens.len() as u32, tokens.len() + 1),
        };
        if let Some(u) = unknown_id {
            if u as usize >= vocab_size {
                return Err(Error::Corpus(format!("unknown id {u} outside vocabulary")));
            }
        }
        let mut canon = format!("vocab_map\nunk={unknown_id:?}\n");
        for t in tokens {
            canon.push_str(t);
            canon.push('\n');
        }
        Ok(Self {
            mode: Mode::Vocab { ids, unknown_id },
            bos,
            vocab_size,
            fingerprint: digest_hex(canon.as_bytes()),
        })
    }

    pub fn from_spec(spec: &TokenizerSpec) -> Result<Self> {
        match spec {
            TokenizerSpec::Byte => Ok(Self::byte()),
            TokenizerSpec::VocabMap { path, unknown_id } => {
                let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                let text = String::from_utf8(text).map_err(|_| Error::Utf8 { path: path.clone() })?;
                let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
                Self::from_vocab(&tokens, *unknown_id)
            }
        }
    }

    pub fn bos_id(&self) -> u32 {
        self.bos
    }

    /// Number of ids this tokenizer can emit (a model needs at least this many).
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Token ids of one document, document-start marker first.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = vec![self.bos];
        match &self.mode {
            Mode::Byte => out.extend(text.bytes().map(|b| u32::from(b) + 1)),
            Mode::Vocab { ids, unknown_id } => {
                for word in text.split_whitespace() {
                    match ids.get(word).copied().or(*unknown_id) {
                        Some(id) => out.push(id),
                        None => return Err(Error::UnknownToken(word.to_owned())),
                    }
                }
            }
        }
        Ok(out)
    }

    /// Inverse of byte-mode `encode`; `None` for vocab mode or invalid ids.
    pub fn decode_bytes(&self, ids: &[u32]) -> Option<Vec<u8>> {
        if !matches!(self.mode, Mode::Byte) || ids.first() != Some(&self.bos) {
            return None;
        }
        ids[1..]
            .iter()
            .map(|&id| u8::try_from(id.checked_sub(1)?).ok())
            .collect()
    }

    pub fn tokenize(&self, corpus: &LabeledCorpus) -> Result<TokenStream> {
        let docs = corpus
            .documents
            .par_iter()
            .map(|d| self.encode(d))
            .collect::<Result<Vec<_>>>()?;
        let stream = TokenStream::from_documents(docs);
        Ok(match corpus.token_budget {
            Some(b) => cap_budget(&stream, b),
            None => stream,
        })
    }
}

/// Keeps whole documents while the running total stays within `budget`; a
/// first document longer than the budget is cut at exactly `budget` tokens.
pub fn cap_budget(stream: &TokenStream, budget: usize) -> TokenStream {
    if budget >= stream.n_tokens() {
        return stream.clone();
    }
    let mut out = TokenStream::new();
    for doc in stream.documents() {
        if out.n_tokens() + doc.len() <= budget {
            out.push_document(doc);
        } else {
            if out.n_documents() == 0 {
                out.push_document(&doc[..budget]);
            }
            break;
        }
    }
    out
}

/// Document-level split: documents are shuffled with `seed`, then taken into
/// the held-out side under the [`cap_budget`] rule. Both sides keep the
/// original document order.
pub fn split_holdout(stream: &TokenStream, holdout_tokens: usize, seed: u64) -> Result<(TokenStream, TokenStream)> {
    if holdout_tokens >= stream.n_tokens() {
        return Err(Error::InsufficientTokens {
            needed: holdout_tokens,
            available: stream.n_tokens(),
        });
    }
    let n = stream.n_documents();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut held = vec![None::<usize>; n];
    let mut used = 0;
    for &i in &order {
        let len = stream.document(i).len();
        if used + len <= holdout_tokens {
            held[i] = Some(len);
            used += len;
        } else {
            if used == 0 {
                held[i] = Some(holdout_tokens);
            }
            break;
        }
    }

    let mut train = TokenStream::new();
    let mut heldout = TokenStream::new();
    for (i, doc) in stream.documents().enumerate() {
        match held[i] {
            Some(len) => heldout.push_document(&doc[..len]),
            None => train.push_document(doc),
        }
    }
    Ok((train, heldout))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream_of(lens: &[usize]) -> TokenStream {
        let mut next = 0u32;
        TokenStream::from_documents(lens.iter().map(|&l| {
            let d: Vec<u32> = (next..next + l as u32).collect();
            next += l as u32;
            d
        }))
    }

    #[test]
    fn byte_mode_encoding() {
        let t = Tokenizer::byte();
        assert_eq!(t.encode("A").unwrap(), vec![0, 66]);
        assert_eq!(t.encode("").unwrap(), vec![0]);
        let ids = t.encode("grüß dich").unwrap();
        assert_eq!(t.decode_bytes(&ids).unwrap(), "grüß dich".as_bytes());
        assert!(ids.iter().all(|&i| (i as usize) < t.vocab_size()));
    }

    #[test]
    fn vocab_map_encoding() {
        let t = Tokenizer::from_vocab(&["the".into(), "cat".into()], None).unwrap();
        let bos = t.bos_id();
        assert_eq!(bos, 2);
        assert_eq!(t.encode("the cat").unwrap(), vec![bos, 0, 1]);
        assert!(matches!(t.encode("the dog"), Err(Error::UnknownToken(w)) if w == "dog"));
        let t = Tokenizer::from_vocab(&["the".into(), "cat".into(), "<unk>".into()], Some(2)).unwrap();
        assert_eq!(t.encode("the dog").unwrap(), vec![3, 0, 2]);
    }

    #[test]
    fn vocab_map_uses_explicit_marker_line() {
        let t = Tokenizer::from_vocab(&["<s>".into(), "a".into()], None).unwrap();
        assert_eq!(t.bos_id(), 0);
        assert_eq!(t.vocab_size(), 2);
        assert_eq!(t.encode("a a").unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn tokenizer_spec_parsing() {
        assert_eq!("byte".parse::<TokenizerSpec>().unwrap(), TokenizerSpec::Byte);
        assert_eq!(
            "vocab:/tmp/v.txt:unk=3".parse::<TokenizerSpec>().unwrap(),
            TokenizerSpec::VocabMap {
                path: "/tmp/v.txt".into(),
                unknown_id: Some(3)
            }
        );
        assert!("bpe".parse::<TokenizerSpec>().is_err());
    }

    #[test]
    fn cap_budget_boundary_rule() {
        let s = stream_of(&[40, 40, 40]);
        let c = cap_budget(&s, 100);
        assert_eq!(c.n_tokens(), 80);
        assert_eq!(c.n_documents(), 2);

        let s = stream_of(&[500]);
        let c = cap_budget(&s, 100);
        assert_eq!(c.n_tokens(), 100);
        assert_eq!(c.document(0), &s.document(0)[..100]);

        let s = stream_of(&[10, 20]);
        assert_eq!(cap_budget(&s, 1000), s);
    }

    #[test]
    fn holdout_of_equal_documents() {
        let s = stream_of(&[10; 10]);
        let (train, held) = split_holdout(&s, 20, 7).unwrap();
        assert_eq!(held.n_documents(), 2);
        assert_eq!(train.n_documents(), 8);
        let mut all: Vec<u32> = train.tokens().iter().chain(held.tokens()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, s.tokens());
    }

    #[test]
    fn holdout_is_deterministic() {
        let s = stream_of(&[7, 3, 9, 12, 4, 8, 5, 6]);
        assert_eq!(split_holdout(&s, 15, 42).unwrap(), split_holdout(&s, 15, 42).unwrap());
    }

    #[test]
    fn holdout_matches_shuffle_replay_and_depends_on_seed() {
        let s = stream_of(&[5; 100]);
        let held_docs = |seed: u64| {
            let (_, held) = split_holdout(&s, 50, seed).unwrap();
            let mut firsts: Vec<u32> = held.documents().map(|d| d[0] / 5).collect();
            firsts.sort_unstable();
            firsts
        };
        for seed in [1u64, 2] {
            // replay: the first ten documents of the seeded shuffle
            let mut order: Vec<u32> = (0..100).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut expected = order[..10].to_vec();
            expected.sort_unstable();
            assert_eq!(held_docs(seed), expected);
        }
        assert_ne!(held_docs(1), held_docs(2));
    }

    #[test]
    fn holdout_needs_enough_tokens() {
        let s = stream_of(&[10, 10]);
        assert!(matches!(
            split_holdout(&s, 20, 0),
            Err(Error::InsufficientTokens { .. })
        ));
    }

    #[test]
    fn sequences_chunk_documents() {
        let s = stream_of(&[5, 2]);
        let seqs: Vec<_> = s.sequences(2).map(|(c, first)| (c.len(), first)).collect();
        assert_eq!(seqs, vec![(2, true), (2, false), (1, false), (2, true)]);
    }

    #[test]
    fn ingest_layout() {
        let dir = tempfile::tempdir().unwrap();
        for (label, docs) in [("fa", vec!["b.txt", "a.txt"]), ("de", vec!["x.txt"])] {
            std::fs::create_dir(dir.path().join(label)).unwrap();
            for d in docs {
                std::fs::write(dir.path().join(label).join(d), format!("{label} {d}")).unwrap();
            }
        }
        std::fs::write(dir.path().join("fa").join("skip.md"), "ignored").unwrap();
        let corpora = ingest_dir(dir.path(), LabelKind::Culture).unwrap();
        let names: Vec<_> = corpora.iter().map(|c| c.label.name.as_str()).collect();
        assert_eq!(names, ["de", "fa"]);
        assert_eq!(corpora[1].documents, ["fa a.txt", "fa b.txt"]);
        assert_eq!(corpora[1].label.kind, LabelKind::Culture);
    }

    #[test]
    fn ingest_six_labels() {
        let dir = tempfile::tempdir().unwrap();
        for label in ["en", "de", "da", "zh", "ru", "fa"] {
            std::fs::create_dir(dir.path().join(label)).unwrap();
            std::fs::write(dir.path().join(label).join("0.txt"), "text").unwrap();
        }
        assert_eq!(ingest_dir(dir.path(), LabelKind::Language).unwrap().len(), 6);
    }

    #[test]
    fn ingest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest_dir(dir.path(), LabelKind::Language).is_err());
        std::fs::create_dir(dir.path().join("de")).unwrap();
        let err = ingest_dir(dir.path(), LabelKind::Language).unwrap_err();
        assert!(err.to_string().contains("\"de\""), "{err}");
        std::fs::write(dir.path().join("de").join("bad.txt"), [0xff, 0xfe]).unwrap();
        let err = ingest_dir(dir.path(), LabelKind::Language).unwrap_err();
        assert!(matches!(&err, Error::Utf8 { path } if path.ends_with("bad.txt")));
    }
}
