//! Reply-label aggregation: one automatic label per source tweet.
//!
//! Every threshold test is done in exact integer arithmetic. Thresholds are
//! stored as reduced fractions, so `n_neu > 0.85 * total` becomes
//! `n_neu * 20 > 17 * total` and exact boundary cases never flip on rounding.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{LabeledTweet, SentimentLabel, ThreadRecord};
use crate::error::{Error, Result};
use crate::models::{predict_label, Predictor};

/// Largest denominator accepted when converting a decimal threshold.
const DECIMAL_SCALE: u64 = 1_000_000;

/// A non-negative rational threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Threshold {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Threshold {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Config("threshold denominator is zero".into()));
        }
        let g = gcd(num, den).max(1);
        Ok(Threshold {
            num: num / g,
            den: den / g,
        })
    }

    /// Converts a decimal such as `0.85` with at most six fractional digits.
    pub fn from_decimal(x: f64) -> Result<Self> {
        if !x.is_finite() || x < 0.0 || x > 1e9 {
            return Err(Error::Config(format!("threshold {x} is out of range")));
        }
        let scaled = (x * DECIMAL_SCALE as f64).round();
        if (scaled / DECIMAL_SCALE as f64 - x).abs() > 1e-12 {
            return Err(Error::Config(format!("threshold {x} has more than six decimal places")));
        }
        Threshold::new(scaled as u64, DECIMAL_SCALE)
    }

    pub fn numer(self) -> u64 {
        self.num
    }

    pub fn denom(self) -> u64 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `a > self * b`, exactly.
    pub fn exceeded_by(self, a: u64, b: u64) -> bool {
        a as u128 * self.den as u128 > self.num as u128 * b as u128
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let x = f64::deserialize(d)?;
        Threshold::from_decimal(x).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationThresholds {
    /// Share of neutral replies above which the thread is neutral.
    pub neutral_fraction: Threshold,
    pub pos_over_neg: Threshold,
    pub neg_over_pos: Threshold,
}

impl Default for AggregationThresholds {
    fn default() -> Self {
        AggregationThresholds {
            neutral_fraction: Threshold { num: 17, den: 20 },
            pos_over_neg: Threshold { num: 3, den: 2 },
            neg_over_pos: Threshold { num: 8, den: 5 },
        }
    }
}

impl AggregationThresholds {
    pub fn validate(&self) -> Result<()> {
        let theta = self.neutral_fraction;
        if theta.num == 0 || theta.num >= theta.den {
            return Err(Error::Config(format!("neutral_fraction must lie in (0, 1), got {theta}")));
        }
        for (name, r) in [("pos_over_neg", self.pos_over_neg), ("neg_over_pos", self.neg_over_pos)] {
            if r.num < r.den {
                return Err(Error::Config(format!("{name} must be at least 1, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyLabelCounts {
    pub n_pos: u64,
    pub n_neg: u64,
    pub n_neu: u64,
}

impl ReplyLabelCounts {
    pub fn new(n_pos: u64, n_neg: u64, n_neu: u64) -> Self {
        ReplyLabelCounts { n_pos, n_neg, n_neu }
    }

    pub fn from_labels(labels: impl IntoIterator<Item = SentimentLabel>) -> Self {
        let mut c = ReplyLabelCounts::default();
        for l in labels {
            match l {
                SentimentLabel::Positive => c.n_pos += 1,
                SentimentLabel::Negative => c.n_neg += 1,
                SentimentLabel::Neutral => c.n_neu += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.n_pos + self.n_neg + self.n_neu
    }
}

/// Maps reply label counts to a thread label. Guards are strict and checked
/// in order: mostly neutral, then positive dominance, then negative
/// dominance; anything else is neutral.
pub fn aggregate_label(counts: ReplyLabelCounts, th: &AggregationThresholds) -> Result<SentimentLabel> {
    let ReplyLabelCounts { n_pos, n_neg, n_neu } = counts;
    let total = counts.total();
    if total == 0 {
        return Err(Error::NoReplies);
    }
    Ok(if th.neutral_fraction.exceeded_by(n_neu, total) {
        SentimentLabel::Neutral
    } else if th.pos_over_neg.exceeded_by(n_pos, n_neg) {
        SentimentLabel::Positive
    } else if th.neg_over_pos.exceeded_by(n_neg, n_pos) {
        SentimentLabel::Negative
    } else {
        SentimentLabel::Neutral
    })
}

/// Labels each thread's source text by classifying its replies. The source
/// text itself is never shown to the classifier. Output order follows input
/// order.
pub fn autolabel_threads(
    threads: &[ThreadRecord],
    classifier: &dyn Predictor,
    th: &AggregationThresholds,
) -> Result<Vec<LabeledTweet>> {
    threads
        .par_iter()
        .map(|t| {
            let replies: Vec<&str> = t.replies.iter().map(String::as_str).collect();
            let label = classifier
                .predict(&replies)
                .and_then(|dists| aggregate_label(ReplyLabelCounts::from_labels(dists.iter().map(predict_label)), th))
                .map_err(|e| e.in_thread(&t.source_id))?;
            Ok(LabeledTweet {
                id: t.source_id.clone(),
                text: t.source_text.clone(),
                label,
            })
        })
        .collect()
}
