//! Two-stage prediction of the predominant sentiment among replies to a
//! tweet.
//!
//! A message-level classifier labels individual replies; [`aggregate`] turns
//! those per-reply labels into one automatic label per source tweet; a second
//! classifier is then trained to predict that label from the source text
//! alone. [`pipeline`] wires the stages together and evaluates them.

pub mod aggregate;
pub mod corpus;
pub mod error;
pub mod models;
pub mod nncore;
pub mod pipeline;
pub mod text;

pub use corpus::{LabeledTweet, SentimentLabel, ThreadRecord};
pub use error::{Error, ErrorClass, Result};
