//! Labeled-tweet and reply-thread corpora.
//!
//! Both file formats are JSON Lines: one UTF-8 JSON object per line. Blank
//! lines are skipped but still counted, so error line numbers always match
//! what an editor shows.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Three-way polarity. The discriminants are the canonical class indices
/// used for loss weights, confusion-matrix axes and tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SentimentLabel {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

pub const NUM_CLASSES: usize = 3;

impl SentimentLabel {
    pub const ALL: [SentimentLabel; NUM_CLASSES] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Positive => "positive",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "negative" => Ok(SentimentLabel::Negative),
            "neutral" => Ok(SentimentLabel::Neutral),
            "positive" => Ok(SentimentLabel::Positive),
            _ => Err(format!("unknown label `{s}`")),
        }
    }
}

impl Serialize for SentimentLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SentimentLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTweet {
    pub id: String,
    pub text: String,
    pub label: SentimentLabel,
}

/// A source tweet together with its first-order replies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadRecord {
    pub source_id: String,
    pub source_text: String,
    pub replies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<SentimentLabel>,
}

/// Record format of a corpus file. Only JSON Lines is supported today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordFormat {
    #[default]
    JsonLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: [usize; NUM_CLASSES],
    pub fractions: [f64; NUM_CLASSES],
}

impl ClassDistribution {
    pub fn from_counts(counts: [usize; NUM_CLASSES]) -> Self {
        let total: usize = counts.iter().sum();
        let mut fractions = [0.0; NUM_CLASSES];
        if total > 0 {
            for (f, &c) in fractions.iter_mut().zip(&counts) {
                *f = c as f64 / total as f64;
            }
        }
        ClassDistribution { counts, fractions }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, label: SentimentLabel) -> usize {
        self.counts[label.index()]
    }

    pub fn fraction(&self, label: SentimentLabel) -> f64 {
        self.fractions[label.index()]
    }
}

/// Per-class loss weights, indexed by [`SentimentLabel::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; NUM_CLASSES])
    }

    pub fn get(&self, label: SentimentLabel) -> f64 {
        self.0[label.index()]
    }
}

fn for_each_record(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> std::result::Result<(), Error>,
) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}

fn record_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Record {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

#[derive(Deserialize)]
struct RawLabeled {
    id: String,
    text: String,
    label: String,
}

/// Reads a labeled-tweet corpus, preserving file order.
pub fn load_labeled_corpus(path: impl AsRef<Path>, format: RecordFormat) -> Result<Vec<LabeledTweet>> {
    let path = path.as_ref();
    let RecordFormat::JsonLines = format;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for_each_record(path, |line, raw| {
        let rec: RawLabeled =
            serde_json::from_str(raw).map_err(|e| record_error(path, line, e.to_string()))?;
        let label: SentimentLabel = rec.label.parse().map_err(|e: String| record_error(path, line, e))?;
        if rec.text.trim().is_empty() {
            return Err(record_error(path, line, "empty text"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: rec.id,
            });
        }
        out.push(LabeledTweet {
            id: rec.id,
            text: rec.text,
            label,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Reads a reply-thread file. A missing `gold_label` means the thread is
/// unlabeled; an empty `replies` array is accepted here.
pub fn load_threads(path: impl AsRef<Path>) -> Result<Vec<ThreadRecord>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for_each_record(path, |line, raw| {
        let rec: ThreadRecord =
            serde_json::from_str(raw).map_err(|e| record_error(path, line, e.to_string()))?;
        if !seen.insert(rec.source_id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: rec.source_id,
            });
        }
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("corpus records always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_labeled_corpus(path: impl AsRef<Path>, records: &[LabeledTweet]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

pub fn write_threads(path: impl AsRef<Path>, threads: &[ThreadRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), threads)
}

/// Applies the minimum-reply and minimum-token constraints.
///
/// With `min_tokens > 0`, short replies are dropped first, the source text
/// must itself reach `min_tokens`, and the reply-count check is applied to
/// the surviving replies.
pub fn filter_threads<F>(
    threads: &[ThreadRecord],
    min_replies: usize,
    min_tokens: usize,
    tokenize: F,
) -> Vec<ThreadRecord>
where
    F: Fn(&str) -> Vec<String>,
{
    threads
        .iter()
        .filter_map(|t| {
            if min_tokens == 0 {
                return (t.replies.len() >= min_replies).then(|| t.clone());
            }
            if tokenize(&t.source_text).len() < min_tokens {
                return None;
            }
            let replies: Vec<String> = t
                .replies
                .iter()
                .filter(|r| tokenize(r).len() >= min_tokens)
                .cloned()
                .collect();
            (replies.len() >= min_replies).then(|| ThreadRecord {
                replies,
                ..t.clone()
            })
        })
        .collect()
}

/// Deterministic shuffle-and-split. The validation part holds
/// `floor(val_fraction * n)` items.
pub fn split<T: Clone>(examples: &[T], val_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    assert!(
        (0.0..1.0).contains(&val_fraction),
        "val_fraction must lie in [0, 1), got {val_fraction}"
    );
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (val_fraction * examples.len() as f64).floor() as usize;
    let val = order[..n_val].iter().map(|&i| examples[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| examples[i].clone()).collect();
    (train, val)
}

pub fn class_distribution(examples: &[LabeledTweet]) -> ClassDistribution {
    let mut counts = [0usize; NUM_CLASSES];
    for ex in examples {
        counts[ex.label.index()] += 1;
    }
    ClassDistribution::from_counts(counts)
}

/// Inverse-frequency weights `N / (C * n_c)`; balanced counts give 1.0 each.
pub fn class_weights(dist: &ClassDistribution) -> Result<ClassWeights> {
    let total = dist.total() as f64;
    let mut w = [0.0; NUM_CLASSES];
    for label in SentimentLabel::ALL {
        let n = dist.count(label);
        if n == 0 {
            return Err(Error::MissingClass(label.as_str()));
        }
        w[label.index()] = total / (NUM_CLASSES as f64 * n as f64);
    }
    Ok(ClassWeights(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn thread(id: &str, n_replies: usize, reply_len: usize) -> ThreadRecord {
        ThreadRecord {
            source_id: id.into(),
            source_text: vec!["w"; 25].join(" "),
            replies: (0..n_replies).map(|_| vec!["r"; reply_len].join(" ")).collect(),
            gold_label: None,
        }
    }

    fn tweets(labels: &[SentimentLabel]) -> Vec<LabeledTweet> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| LabeledTweet {
                id: i.to_string(),
                text: format!("t{i}"),
                label,
            })
            .collect()
    }

    #[test]
    fn parses_single_record() {
        let f = write(r#"{"id":"1","text":"great day","label":"positive"}"#);
        let recs = load_labeled_corpus(f.path(), RecordFormat::JsonLines).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label.index(), 2);
    }

    #[test]
    fn labels_are_case_insensitive() {
        let f = write(r#"{"id":"1","text":"great day","label":"POSITIVE"}"#);
        let recs = load_labeled_corpus(f.path(), RecordFormat::JsonLines).unwrap();
        assert_eq!(recs[0].label, SentimentLabel::Positive);
    }

    #[test]
    fn unknown_label_names_line() {
        let f = write(
            "{\"id\":\"1\",\"text\":\"a\",\"label\":\"neutral\"}\n\n{\"id\":\"2\",\"text\":\"b\",\"label\":\"mixed\"}\n",
        );
        match load_labeled_corpus(f.path(), RecordFormat::JsonLines) {
            Err(Error::Record { line, reason, .. }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("mixed"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_and_duplicate_id() {
        let f = write(r#"{"id":"1","label":"neutral"}"#);
        let err = load_labeled_corpus(f.path(), RecordFormat::JsonLines).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("text"));

        let f = write(
            "{\"id\":\"1\",\"text\":\"a\",\"label\":\"neutral\"}\n{\"id\":\"1\",\"text\":\"b\",\"label\":\"neutral\"}\n",
        );
        let err = load_labeled_corpus(f.path(), RecordFormat::JsonLines).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn blank_text_rejected() {
        let f = write(r#"{"id":"1","text":"   ","label":"neutral"}"#);
        assert!(load_labeled_corpus(f.path(), RecordFormat::JsonLines).is_err());
    }

    #[test]
    fn threads_parse() {
        let f = write(concat!(
            r#"{"source_id":"s1","source_text":"hi","replies":["a","b","c"]}"#,
            "\n",
            r#"{"source_id":"s2","source_text":"hi","replies":["x"],"gold_label":"negative"}"#,
            "\n",
            r#"{"source_id":"s3","source_text":"hi","replies":[]}"#,
            "\n",
        ));
        let ts = load_threads(f.path()).unwrap();
        assert_eq!(ts[0].replies, vec!["a", "b", "c"]);
        assert_eq!(ts[0].gold_label, None);
        assert_eq!(ts[1].gold_label.map(SentimentLabel::index), Some(0));
        assert!(ts[2].replies.is_empty());
    }

    #[test]
    fn malformed_thread_names_line() {
        let f = write("{\"source_id\":\"s1\",\"source_text\":\"hi\",\"replies\":[]}\n{\"source_id\":\"s2\"");
        assert!(matches!(load_threads(f.path()), Err(Error::Record { line: 2, .. })));
    }

    #[test]
    fn filter_drops_short_threads() {
        let ts = vec![thread("a", 19, 3), thread("b", 20, 3)];
        let kept = filter_threads(&ts, 20, 0, words);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].source_id, "b");
    }

    #[test]
    fn filter_identity_at_zero() {
        let ts = vec![thread("a", 0, 1), thread("b", 3, 30)];
        assert_eq!(filter_threads(&ts, 0, 0, words), ts);
    }

    #[test]
    fn filter_counts_replies_after_token_filter() {
        let mut t = thread("a", 19, 20);
        t.replies.push("too short".into());
        t.replies.push("also short".into());
        assert_eq!(t.replies.len(), 21);
        assert!(filter_threads(&[t.clone()], 20, 20, words).is_empty());
        // Same thread passes without the token constraint.
        assert_eq!(filter_threads(&[t], 20, 0, words).len(), 1);
    }

    #[test]
    fn filter_requires_long_source() {
        let mut t = thread("a", 20, 20);
        t.source_text = "short source".into();
        assert!(filter_threads(&[t], 20, 20, words).is_empty());
    }

    #[test]
    fn split_sizes() {
        let xs: Vec<u32> = (0..100).collect();
        let (train, val) = split(&xs, 0.10, 7);
        assert_eq!((train.len(), val.len()), (90, 10));
        let (train, val) = split(&xs, 0.0, 7);
        assert_eq!((train.len(), val.len()), (100, 0));
        assert_eq!(split(&xs, 0.1, 3), split(&xs, 0.1, 3));
    }

    #[test]
    fn distribution_counts() {
        use SentimentLabel::*;
        let d = class_distribution(&tweets(&[Positive, Positive, Negative, Neutral]));
        assert_eq!(d.fractions, [0.25, 0.25, 0.5]);
        let d = class_distribution(&[]);
        assert_eq!(d.counts, [0, 0, 0]);
        assert_eq!(d.fractions, [0.0, 0.0, 0.0]);

        let d = ClassDistribution::from_counts([13, 15, 12]);
        assert!((d.fractions[0] - 0.325).abs() < 1e-12);
        assert!((d.fractions[1] - 0.375).abs() < 1e-12);
        assert!((d.fractions[2] - 0.30).abs() < 1e-12);
    }

    #[test]
    fn weights_inverse_frequency() {
        let w = class_weights(&ClassDistribution::from_counts([20, 30, 50])).unwrap();
        let expected = [100.0 / 60.0, 100.0 / 90.0, 100.0 / 150.0];
        for (a, b) in w.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!((w.0[0] - 1.6667).abs() < 1e-4);
        let w = class_weights(&ClassDistribution::from_counts([10, 10, 10])).unwrap();
        assert_eq!(w.0, [1.0, 1.0, 1.0]);
        assert!(matches!(
            class_weights(&ClassDistribution::from_counts([5, 0, 5])),
            Err(Error::MissingClass("neutral"))
        ));
    }

    fn arb_label() -> impl Strategy<Value = SentimentLabel> {
        (0usize..3).prop_map(|i| SentimentLabel::from_index(i).unwrap())
    }

    fn arb_thread() -> impl Strategy<Value = ThreadRecord> {
        (
            "[a-z]{1,6}",
            prop::collection::vec(1usize..6, 1..8),
            prop::collection::vec(prop::collection::vec(1usize..6, 0..8), 0..6),
            prop::option::of(arb_label()),
        )
            .prop_map(|(id, src, replies, gold)| ThreadRecord {
                source_id: id,
                source_text: src.iter().map(|n| "x".repeat(*n)).collect::<Vec<_>>().join(" "),
                replies: replies
                    .iter()
                    .map(|r| r.iter().map(|n| "y".repeat(*n)).collect::<Vec<_>>().join(" "))
                    .collect(),
                gold_label: gold,
            })
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(ts in prop::collection::vec(arb_thread(), 0..6), mr in 0usize..5, mt in 0usize..5) {
            let once = filter_threads(&ts, mr, mt, words);
            let twice = filter_threads(&once, mr, mt, words);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn split_partitions(n in 0usize..200, frac in 0.0f64..0.99, seed in any::<u64>()) {
            let xs: Vec<usize> = (0..n).collect();
            let (train, val) = split(&xs, frac, seed);
            prop_assert_eq!(train.len() + val.len(), n);
            prop_assert_eq!(val.len(), (frac * n as f64).floor() as usize);
            let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, xs);
            prop_assert_eq!(split(&(0..n).collect::<Vec<_>>(), frac, seed), (train, val));
        }

        #[test]
        fn weights_recover_total(c in prop::array::uniform3(1usize..10_000)) {
            let d = ClassDistribution::from_counts(c);
            let w = class_weights(&d).unwrap();
            let total: f64 = (0..3).map(|i| w.0[i] * c[i] as f64).sum();
            let n = d.total() as f64;
            prop_assert!(((total - n) / n).abs() < 1e-9);
            prop_assert!((d.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn corpus_round_trip(recs in prop::collection::vec(("[ -~]{1,20}", arb_label()), 0..10)) {
            let tweets: Vec<LabeledTweet> = recs
                .into_iter()
                .enumerate()
                .filter(|(_, (t, _))| !t.trim().is_empty())
                .map(|(i, (text, label))| LabeledTweet { id: format!("id{i}"), text, label })
                .collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_labeled_corpus(f.path(), &tweets).unwrap();
            let back = load_labeled_corpus(f.path(), RecordFormat::JsonLines).unwrap();
            prop_assert_eq!(back, tweets);
        }

        #[test]
        fn threads_round_trip(ts in prop::collection::vec(arb_thread(), 0..6)) {
            let mut seen = HashSet::new();
            let ts: Vec<ThreadRecord> = ts.into_iter().filter(|t| seen.insert(t.source_id.clone())).collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_threads(f.path(), &ts).unwrap();
            prop_assert_eq!(load_threads(f.path()).unwrap(), ts);
        }
    }
}
