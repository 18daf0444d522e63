//! Few-shot out-of-graph link prediction with graph extrapolation networks.
//!
//! A knowledge graph is split into an in-graph of seen entities and
//! meta-sets of unseen entities, each revealed through a few support
//! triplets. The model embeds an unseen entity from its support
//! neighbourhood ([`model::inductive_embed`]), optionally refines the
//! embedding with the other unseen entities of the same task and a
//! Gaussian output ([`model::embed_task`]), and is meta-trained over
//! simulated episodes ([`train::meta_train`]). Evaluation uses filtered
//! ranking ([`eval::evaluate_split`]).
//!
//! ```
//! use oog_gen::graph::{build_graph, NameTriple};
//!
//! let rows: Vec<NameTriple> = [("a", "likes", "b"), ("b", "likes", "c")]
//!     .iter()
//!     .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
//!     .collect();
//! let (vocab, graph) = build_graph(&rows, true).unwrap();
//! assert_eq!(vocab.num_entities(), 3);
//! assert_eq!(graph.len(), 4); // two triplets and their inverses
//! ```

pub mod episode;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod split;
pub mod synthetic;
pub mod train;

pub use error::{GenError, Result};
