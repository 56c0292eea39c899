//! Symbolic regression over an eleven-operator set, guided by a kind-level
//! adjacency matrix.
//!
//! The pipeline is: a [`pipeline::MatrixSource`] supplies an
//! [`graph::AdjacencyMatrix`]; [`search::Search`] decodes it into candidate
//! skeletons; [`fit`] optimizes their constants and decides recovery;
//! [`bench`] runs the repeated evaluation protocol over the shipped
//! benchmark suites.

pub mod expr;
pub mod graph;
pub mod search;
pub mod fit;
pub mod pipeline;
pub mod bench;
