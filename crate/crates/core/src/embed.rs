//! Statement tokenization and skip-gram embeddings with negative sampling.
//!
//! Each graph node's statement text becomes a token sequence; a small
//! word2vec-style model trained over the whole corpus turns tokens into
//! vectors, and a statement vector is the mean of its token vectors.
//! Training is single-threaded and fully determined by the config seed.

use crate::decimal::sig9;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("unterminated string literal in statement text: `{text}`")]
    UnterminatedString { text: String },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("malformed embedding file {path}: {message}")]
    MalformedFile { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Splits statement text into tokens: whitespace separates; the characters
/// `( ) { } , = ;` stand alone; a double-quoted literal is one token with
/// its quotes; dotted call targets stay whole.
pub fn tokenize(raw: &str) -> Result<Vec<String>, EmbedError> {
    let chars: Vec<char> = raw.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            _ if c.is_whitespace() => {
                flush(&mut current, &mut tokens);
                i += 1;
            }
            '(' | ')' | '{' | '}' | ',' | '=' | ';' => {
                flush(&mut current, &mut tokens);
                // `==` would split under a naive rule; the grammar only
                // produces it surrounded by spaces, but keep it whole anyway.
                if c == '=' && chars.get(i + 1) == Some(&'=') {
                    tokens.push("==".to_string());
                    i += 2;
                } else {
                    tokens.push(c.to_string());
                    i += 1;
                }
            }
            '"' => {
                flush(&mut current, &mut tokens);
                let mut j = i + 1;
                while j < chars.len() && chars[j] != '"' {
                    j += 1;
                }
                if j == chars.len() {
                    return Err(EmbedError::UnterminatedString {
                        text: raw.to_string(),
                    });
                }
                let tok: String = chars[i..=j].iter().collect();
                tokens.push(tok);
                i = j + 1;
            }
            _ => {
                current.push(c);
                i += 1;
            }
        }
    }
    flush(&mut current, &mut tokens);
    Ok(tokens)
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

/// Index 0 is always the out-of-vocabulary token.
pub const OOV_TOKEN: &str = "<oov>";

/// Dense token -> index map with a reserved out-of-vocabulary slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index_of: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of a token, folding unknowns onto the OOV slot.
    pub fn index(&self, token: &str) -> usize {
        self.index_of.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index_of.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { index_of, tokens }
    }
}

/// Tokens with at least `min_count` occurrences, indexed in descending
/// frequency order (ties lexicographic) after the OOV slot.
pub fn build_vocab(corpus: &[Vec<String>], min_count: usize) -> Result<Vocabulary, EmbedError> {
    if corpus.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sentence in corpus {
        for tok in sentence {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != OOV_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![OOV_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Ok(Vocabulary::from_tokens(tokens))
}

/// Skip-gram training hyperparameters. All randomness flows from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct W2vConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub rate: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for W2vConfig {
    fn default() -> Self {
        W2vConfig {
            dim: 32,
            window: 2,
            negatives: 5,
            epochs: 15,
            rate: 0.025,
            min_count: 1,
            seed: 1,
        }
    }
}

impl W2vConfig {
    fn check(&self) {
        assert!(self.dim >= 2, "embedding dimension must be >= 2");
        assert!(self.window >= 1, "context window must be >= 1");
        assert!(self.negatives >= 1, "negative samples must be >= 1");
        assert!(self.epochs >= 1, "epochs must be >= 1");
        assert!(self.rate > 0.0, "learning rate must be positive");
        assert!(self.min_count >= 1, "min_count must be >= 1");
    }
}

/// Token vectors: the input-side matrix of the trained skip-gram model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocabulary,
    pub dim: usize,
    rows: Vec<f64>, // vocab.len() x dim, row-major
}

impl EmbeddingTable {
    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vector(&self, token: &str) -> &[f64] {
        self.row(self.vocab.index(token))
    }

    /// Mean of the token vectors; the zero vector for an empty sequence.
    /// Mean aggregation makes the result order-free by construction.
    pub fn embed_statement(&self, tokens: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if tokens.is_empty() {
            return out;
        }
        for tok in tokens {
            for (o, &v) in out.iter_mut().zip(self.vector(tok)) {
                *o += v;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        dot / (na * nb)
    }

    /// Writes `W2V <V> <d>` then one `<token> <d floats>` line per token,
    /// nine significant digits per value. Spaces and backslashes inside
    /// tokens are escaped so the format stays line- and space-delimited.
    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut out = String::new();
        out.push_str(&format!("W2V {} {}\n", self.vocab.len(), self.dim));
        for i in 0..self.vocab.len() {
            out.push_str(&escape_token(self.vocab.token(i)));
            for v in self.row(i) {
                out.push(' ');
                out.push_str(&sig9(*v));
            }
            out.push('\n');
        }
        write_file(path, &out)
    }

    pub fn load(path: &Path) -> Result<EmbeddingTable, EmbedError> {
        let file = std::fs::File::open(path).map_err(|e| EmbedError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut lines = BufReader::new(file).lines();
        let bad = |message: &str| EmbedError::MalformedFile {
            path: path.display().to_string(),
            message: message.to_string(),
        };
        let header = lines
            .next()
            .ok_or_else(|| bad("missing header"))?
            .map_err(|e| EmbedError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "W2V" {
            return Err(bad("header must be `W2V <V> <d>`"));
        }
        let v: usize = parts[1].parse().map_err(|_| bad("bad vocabulary size"))?;
        let d: usize = parts[2].parse().map_err(|_| bad("bad dimension"))?;
        let mut tokens = Vec::with_capacity(v);
        let mut rows = Vec::with_capacity(v * d);
        for line in lines {
            let line = line.map_err(|e| EmbedError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let tok = fields.next().ok_or_else(|| bad("empty row"))?;
            tokens.push(unescape_token(tok));
            let mut count = 0;
            for f in fields {
                let x: f64 = f
                    .parse()
                    .map_err(|_| bad(&format!("bad float `{f}`")))?;
                rows.push(x);
                count += 1;
            }
            if count != d {
                return Err(bad(&format!("row has {count} values, expected {d}")));
            }
        }
        if tokens.len() != v {
            return Err(bad(&format!("{} rows, expected {v}", tokens.len())));
        }
        if tokens.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(bad("first token must be the OOV slot"));
        }
        Ok(EmbeddingTable {
            vocab: Vocabulary::from_tokens(tokens),
            dim: d,
            rows,
        })
    }
}

fn escape_token(t: &str) -> String {
    t.replace('\\', "\\\\").replace(' ', "\\s")
}

fn unescape_token(t: &str) -> String {
    let mut out = String::with_capacity(t.len());
    let mut chars = t.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('s') => out.push(' '),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn write_file(path: &Path, content: &str) -> Result<(), EmbedError> {
    let mut f = std::fs::File::create(path).map_err(|e| EmbedError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(content.as_bytes()).map_err(|e| EmbedError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Trains skip-gram embeddings with negative sampling and returns the
/// input-side table.
pub fn train_word2vec(
    corpus: &[Vec<String>],
    cfg: &W2vConfig,
) -> Result<EmbeddingTable, EmbedError> {
    train_word2vec_detailed(corpus, cfg).map(|(table, _)| table)
}

/// As [`train_word2vec`], also returning the mean per-epoch objective
/// (positive plus negative log losses averaged over training pairs).
pub fn train_word2vec_detailed(
    corpus: &[Vec<String>],
    cfg: &W2vConfig,
) -> Result<(EmbeddingTable, Vec<f64>), EmbedError> {
    cfg.check();
    let vocab = build_vocab(corpus, cfg.min_count)?;
    let v = vocab.len();
    let d = cfg.dim;

    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().map(|t| vocab.index(t)).collect())
        .collect();

    // Unigram^0.75 noise distribution over vocabulary indices.
    let mut counts = vec![0usize; v];
    for s in &sentences {
        for &i in s {
            counts[i] += 1;
        }
    }
    let mut cum = Vec::with_capacity(v);
    let mut total = 0.0;
    for &c in &counts {
        total += (c as f64).powf(0.75);
        cum.push(total);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w_in: Vec<f64> = (0..v * d)
        .map(|_| (rng.random::<f64>() - 0.5) / d as f64)
        .collect();
    let mut w_out = vec![0.0f64; v * d];

    let mut history = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for sentence in &sentences {
            for (i, &center) in sentence.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(sentence.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = sentence[j];
                    loss_sum += train_pair(
                        &mut w_in,
                        &mut w_out,
                        center,
                        context,
                        d,
                        cfg.negatives,
                        cfg.rate,
                        &cum,
                        total,
                        &mut rng,
                    );
                    pairs += 1;
                }
            }
        }
        history.push(if pairs == 0 {
            0.0
        } else {
            loss_sum / pairs as f64
        });
    }

    Ok((
        EmbeddingTable {
            vocab,
            dim: d,
            rows: w_in,
        },
        history,
    ))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[allow(clippy::too_many_arguments)]
fn train_pair(
    w_in: &mut [f64],
    w_out: &mut [f64],
    center: usize,
    context: usize,
    d: usize,
    negatives: usize,
    rate: f64,
    cum: &[f64],
    total: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    const EPS: f64 = 1e-10;
    let mut grad_center = vec![0.0; d];
    let mut loss = 0.0;

    // Positive target plus k noise draws; a draw equal to the positive
    // target is re-drawn a bounded number of times.
    for k in 0..=negatives {
        let (target, label) = if k == 0 {
            (context, 1.0)
        } else {
            let mut t = sample_noise(cum, total, rng);
            let mut tries = 0;
            while t == context && tries < 8 {
                t = sample_noise(cum, total, rng);
                tries += 1;
            }
            if t == context {
                continue;
            }
            (t, 0.0)
        };
        let vin = center * d;
        let vout = target * d;
        let mut dot = 0.0;
        for x in 0..d {
            dot += w_in[vin + x] * w_out[vout + x];
        }
        let f = sigmoid(dot);
        loss -= if label == 1.0 {
            f.max(EPS).ln()
        } else {
            (1.0 - f).max(EPS).ln()
        };
        let g = (f - label) * rate;
        for x in 0..d {
            grad_center[x] += g * w_out[vout + x];
            w_out[vout + x] -= g * w_in[vin + x];
        }
    }
    let vin = center * d;
    for x in 0..d {
        w_in[vin + x] -= grad_center[x];
    }
    loss
}

fn sample_noise(cum: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let u = rng.random::<f64>() * total;
    match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) => (i + 1).min(cum.len() - 1),
        Err(i) => i.min(cum.len() - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_assignment() {
        assert_eq!(
            tokenize("x = const \"AES\"").unwrap(),
            toks(&["x", "=", "const", "\"AES\""])
        );
    }

    #[test]
    fn tokenize_call_with_arrow() {
        assert_eq!(
            tokenize("call crypto.Cipher.getInstance(\"AES\") -> c").unwrap(),
            toks(&[
                "call",
                "crypto.Cipher.getInstance",
                "(",
                "\"AES\"",
                ")",
                "->",
                "c"
            ])
        );
    }

    #[test]
    fn tokenize_empty_and_unterminated() {
        assert!(tokenize("").unwrap().is_empty());
        assert!(matches!(
            tokenize("x = const \"AES"),
            Err(EmbedError::UnterminatedString { .. })
        ));
    }

    #[test]
    fn tokenize_round_trips_on_literal_free_text() {
        let texts = ["if c goto L", "y = a + b", "call a.b.c(x, y) -> r", "nop"];
        for t in texts {
            let tokens = tokenize(t).unwrap();
            let joined = tokens.join(" ");
            assert_eq!(tokenize(&joined).unwrap(), tokens, "{t}");
        }
    }

    #[test]
    fn vocab_frequency_order() {
        let corpus = vec![toks(&["a", "b"]), toks(&["a"])];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.index(OOV_TOKEN), 0);
        assert_eq!(v.index("a"), 1);
        assert_eq!(v.index("b"), 2);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn vocab_min_count_folds_to_oov() {
        let corpus = vec![toks(&["a", "b"]), toks(&["a"])];
        let v = build_vocab(&corpus, 2).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.index("b"), 0);
    }

    #[test]
    fn vocab_empty_corpus_errors() {
        assert!(matches!(build_vocab(&[], 1), Err(EmbedError::EmptyCorpus)));
    }

    fn paired_corpus() -> Vec<Vec<String>> {
        let mut corpus = Vec::new();
        for _ in 0..200 {
            corpus.push(toks(&["aes", "cbc"]));
            corpus.push(toks(&["rsa", "oaep"]));
        }
        corpus
    }

    fn small_cfg() -> W2vConfig {
        W2vConfig {
            dim: 16,
            seed: 7,
            ..W2vConfig::default()
        }
    }

    #[test]
    fn training_shape_and_finiteness() {
        let table = train_word2vec(&paired_corpus(), &small_cfg()).unwrap();
        assert_eq!(table.dim, 16);
        assert_eq!(table.vocab.len(), 5); // oov + 4 tokens
        for i in 0..table.vocab.len() {
            assert!(table.row(i).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn cooccurring_tokens_end_up_closer() {
        let table = train_word2vec(&paired_corpus(), &small_cfg()).unwrap();
        assert!(
            table.cosine("aes", "cbc") > table.cosine("aes", "oaep"),
            "cos(aes,cbc)={} cos(aes,oaep)={}",
            table.cosine("aes", "cbc"),
            table.cosine("aes", "oaep")
        );
    }

    #[test]
    fn training_is_deterministic() {
        let a = train_word2vec(&paired_corpus(), &small_cfg()).unwrap();
        let b = train_word2vec(&paired_corpus(), &small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_over_training() {
        let (_, history) = train_word2vec_detailed(&paired_corpus(), &small_cfg()).unwrap();
        assert_eq!(history.len(), small_cfg().epochs);
        assert!(
            history.last().unwrap() < history.first().unwrap(),
            "history: {history:?}"
        );
    }

    #[test]
    fn embed_statement_rules() {
        let table = train_word2vec(&paired_corpus(), &small_cfg()).unwrap();
        let zero = table.embed_statement(&[]);
        assert!(zero.iter().all(|&v| v == 0.0));
        let single = table.embed_statement(&toks(&["aes"]));
        assert_eq!(single.as_slice(), table.vector("aes"));
        let repeated = table.embed_statement(&toks(&["aes", "aes"]));
        for (a, b) in repeated.iter().zip(&single) {
            assert!((a - b).abs() < 1e-15);
        }
        // Mean aggregation is permutation invariant.
        let ab = table.embed_statement(&toks(&["aes", "cbc"]));
        let ba = table.embed_statement(&toks(&["cbc", "aes"]));
        assert_eq!(ab, ba);
        // Unknown tokens use the OOV row.
        let unk = table.embed_statement(&toks(&["zzz"]));
        assert_eq!(unk.as_slice(), table.row(0));
    }

    #[test]
    fn save_load_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.w2v");
        let table = train_word2vec(&paired_corpus(), &small_cfg()).unwrap();
        table.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = EmbeddingTable::load(&path).unwrap();
        loaded.save(&path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        assert_eq!(loaded.vocab, table.vocab);
    }

    #[test]
    fn token_escaping_round_trips() {
        for t in ["\"two words\"", "back\\slash", "plain"] {
            assert_eq!(unescape_token(&escape_token(t)), t);
        }
    }
}
