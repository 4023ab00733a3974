//! Tokenization, vocabulary construction and pretrained embeddings.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Emoticons kept as single tokens. Matched after lowercasing, so `:D`
/// appears as `:d`.
const EMOTICONS: &[&str] = &[
    ":-)", ":-(", ":-d", ":-p", ":'(", ":')", ";-)", "^_^", "-_-", ":)", ":(", ":d", ":p", ":/",
    ":o", ":|", ":]", ":[", ";)", "=)", "=(", "<3", "</3",
];

const URL_PREFIXES: &[&str] = &["http://", "https://", "www."];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn match_emoticon(rest: &str) -> Option<&'static str> {
    EMOTICONS
        .iter()
        .filter(|e| rest.starts_with(**e))
        .max_by_key(|e| e.len())
        .copied()
        .filter(|e| !rest[e.len()..].starts_with(is_word_char))
}

/// Length in bytes of `@name` or `#tag` at the start of `rest`, if any.
fn match_prefixed_word(rest: &str, sigil: char) -> Option<usize> {
    let body = rest.strip_prefix(sigil)?;
    let n: usize = body
        .chars()
        .take_while(|&c| is_word_char(c))
        .map(char::len_utf8)
        .sum();
    (n > 0).then_some(sigil.len_utf8() + n)
}

fn is_special_start(rest: &str) -> bool {
    match_emoticon(rest).is_some()
        || match_prefixed_word(rest, '@').is_some()
        || match_prefixed_word(rest, '#').is_some()
}

fn tokenize_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut rest = chunk;
    while let Some(c) = rest.chars().next() {
        if URL_PREFIXES.iter().any(|p| rest.starts_with(p)) {
            // A URL runs to the end of the chunk, minus trailing punctuation.
            let end = rest.trim_end_matches(|c: char| !is_word_char(c) && c != '/').len();
            out.push(URL_TOKEN.to_string());
            rest = &rest[end..];
        } else if let Some(e) = match_emoticon(rest) {
            out.push(e.to_string());
            rest = &rest[e.len()..];
        } else if let Some(n) = match_prefixed_word(rest, '@') {
            out.push(USER_TOKEN.to_string());
            rest = &rest[n..];
        } else if let Some(n) = match_prefixed_word(rest, '#') {
            out.push(rest[..n].to_string());
            rest = &rest[n..];
        } else if is_word_char(c) {
            // Word, allowing inner apostrophes ("don't").
            let mut end = 0;
            let mut chars = rest.char_indices().peekable();
            while let Some((i, c)) = chars.next() {
                if is_word_char(c) {
                    end = i + c.len_utf8();
                } else if c == '\'' && chars.peek().is_some_and(|&(_, n)| is_word_char(n)) {
                    continue;
                } else {
                    break;
                }
            }
            out.push(rest[..end].to_string());
            rest = &rest[end..];
        } else {
            let mut end = c.len_utf8();
            for (i, c) in rest.char_indices().skip(1) {
                if is_word_char(c) || is_special_start(&rest[i..]) {
                    break;
                }
                end = i + c.len_utf8();
            }
            out.push(rest[..end].to_string());
            rest = &rest[end..];
        }
    }
}

/// Rule-based tweet tokenizer.
///
/// Lowercases, maps URLs to `<url>` and @-mentions to `<user>`, keeps
/// hashtags and a fixed list of emoticons whole, and splits punctuation runs
/// off words.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        tokenize_chunk(chunk, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_index: HashMap<String, usize>,
    index_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from an index-ordered token list. The first two
    /// entries must be the pad and unk tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD_TOKEN || tokens[UNK_INDEX] != UNK_TOKEN {
            return Err(Error::CorruptCheckpoint(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut token_to_index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_index.insert(t.clone(), i).is_some() {
                return Err(Error::CorruptCheckpoint(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary {
            token_to_index,
            index_to_token: tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.index_to_token
    }
}

/// Keeps the `max_size - 2` most frequent tokens after pad and unk, ordered
/// by descending count with ties broken lexicographically.
pub fn build_vocabulary<I, S>(corpus: I, max_size: usize) -> Vocabulary
where
    I: IntoIterator,
    I::Item: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    assert!(max_size >= 2, "vocabulary needs room for <pad> and <unk>");
    let mut counts: HashMap<String, u64> = HashMap::new();
    for seq in corpus {
        for tok in seq {
            let tok = tok.as_ref();
            if tok == PAD_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            *counts.entry(tok.to_string()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
        .into_iter()
        .chain(ranked.into_iter().take(max_size - 2).map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens).expect("constructed with specials first")
}

/// Maps tokens to indices, substituting `<unk>` for out-of-vocabulary tokens.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| vocab.index(t.as_ref()).unwrap_or(UNK_INDEX))
        .collect()
}

/// Row-major `rows x dim` embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Vec<f32>,
    pub dim: usize,
}

impl EmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Uniform `[-0.05, 0.05]` initialization with a zero pad row.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f32> = (0..rows * dim).map(|_| rng.gen_range(-0.05..=0.05)).collect();
        values[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(0.0);
        EmbeddingMatrix { values, dim }
    }
}

/// Loads `word v1 ... v_dim` lines into a vocabulary-aligned matrix. Rows of
/// words absent from the file, and the unk row, keep their seeded random
/// initialization; the pad row is zero.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    dim: usize,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let mut m = EmbeddingMatrix::random(vocab.len(), dim, seed);
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::EmbeddingDim {
                path: path.to_path_buf(),
                line: i + 1,
                expected: dim,
                found: values.len(),
            });
        }
        let Some(row) = vocab.index(word) else { continue };
        if row == PAD_INDEX || row == UNK_INDEX {
            continue;
        }
        for (j, v) in values.iter().enumerate() {
            let x: f32 = v.parse().map_err(|_| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("invalid number `{v}`"),
            })?;
            if !x.is_finite() {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("non-finite value `{v}`"),
                });
            }
            m.values[row * dim + j] = x;
        }
    }
    Ok(m)
}
