//! Explainable mid-term load forecasting: hourly ingest, declarative
//! features, three model families, Shapley attributions and a
//! config-driven refinement pipeline. The guide under `book/` covers each
//! stage; its code blocks run as doc-tests.

pub mod eval;
pub mod explain;
pub mod features;
pub mod fixture;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod time;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/explain.md")]
    mod explain {}
    #[doc = include_str!("../../../book/src/eval.md")]
    mod eval {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
