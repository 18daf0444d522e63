//! Graph extrapolation model: parameters, score functions, and the
//! inductive / transductive embedding layers for unseen entities.

pub mod layers;
pub mod params;
pub mod score;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use layers::{
    apply_dropout, dropout_mask, embed_task, inductive_embed, sample_embedding, sigma_activation,
    stochastic_score, support_entries, transductive_embed, EmbeddingDist, EntityTrace, NeighborRef, Noise,
    SupportEntry, TaskTrace, SIGMA_FLOOR,
};
pub use params::{BasisBlock, LinearHead, ModelConfig, ModelParams, ParamSet, TransBlock};
pub use score::{score, triplet_score, triplet_score_f32, Score};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    TransE,
    DistMult,
    /// Two-layer relation classifier over `(h ⊕ t)`; trained with BCE.
    Linear,
}

/// Which layers produce the unseen-entity embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Seen neighbours only; other unseen entities are zero vectors.
    Inductive,
    /// Adds the transductive layer; the output is its mean head.
    Transductive,
    /// Transductive with a Gaussian output sampled per score, plus
    /// dropout kept on at test time.
    Stochastic,
}

impl Mode {
    pub fn is_transductive(self) -> bool {
        !matches!(self, Mode::Inductive)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropoutMode {
    Train,
    McTest,
    Off,
}

macro_rules! str_enum {
    ($ty:ty { $($name:literal => $variant:expr),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)*
                    _ => Err(format!("expected one of: {}", [$($name),*].join(", "))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })*
                unreachable!()
            }
        }
    };
}

str_enum!(ScoreKind { "transe" => ScoreKind::TransE, "distmult" => ScoreKind::DistMult, "linear" => ScoreKind::Linear });
str_enum!(Mode { "inductive" => Mode::Inductive, "transductive" => Mode::Transductive, "stochastic" => Mode::Stochastic });
