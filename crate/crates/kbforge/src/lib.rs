//! kbforge: knowledge-base construction from richly formatted documents.
//!
//! The pipeline mirrors the classic three-phase KBC workflow:
//!
//! 1. **Initialization** — parse HTML (plus optional visual sidecars) into a
//!    DAG document model ([`doc`]), and initialize an empty KB for a relation
//!    schema ([`pipeline`]).
//! 2. **Candidate generation** — matchers extract typed mentions, the
//!    cross-product forms candidates, throttlers prune them ([`cand`]).
//! 3. **Training and classification** — a multimodal feature library
//!    ([`feat`]) and labeling functions ([`supervise`]) feed a generative
//!    label model whose marginals train a noise-aware Bi-LSTM classifier with
//!    attention ([`learn`]); thresholded marginals populate the KB.
//!
//! Feature and label matrices use the sparse LIL/COO representations in
//! [`sparse`], with a COO→LIL switch between development and production
//! modes. Declarative rule files for matchers, throttlers, and labeling
//! functions are parsed by [`rules`].

pub mod cand;
pub mod doc;
pub mod feat;
pub mod learn;
pub mod pipeline;
pub mod rules;
pub mod sparse;
pub mod supervise;
