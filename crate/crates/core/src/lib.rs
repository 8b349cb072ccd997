//! Retrieval-enhanced abstractive summarization of long documents.

pub mod attention;
pub mod corpus;
pub mod eval;
pub mod index;
pub mod model;
pub mod nn;
pub mod text;
