//! Runs the snippets of the guide in `book/` as doc-tests.
//!
//! mdbook cannot test against a workspace crate, so each chapter is pulled
//! in as the docs of its own module and `cargo test --doc` does the rest.
//! A failure names the module, which names the chapter.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub mod $name {}
    };
}

chapter!(introduction, "introduction.md");
chapter!(graphs, "graphs.md");
chapter!(splitting, "splitting.md");
chapter!(episodes, "episodes.md");
chapter!(layers, "layers.md");
chapter!(scores, "scores.md");
chapter!(training, "training.md");
chapter!(evaluation, "evaluation.md");
chapter!(cli, "cli.md");

/// The library example of the README.
#[doc = include_str!("../../../README.md")]
pub mod readme {}
