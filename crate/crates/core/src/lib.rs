//! False-positive triage for static-analysis reports.
//!
//! The pipeline turns a small three-address IR into code property graphs,
//! featurizes the nodes with trained token embeddings, scores the graph of a
//! reported violation with a graph convolutional network, and evaluates the
//! predictions against ground truth.
//!
//! Stages, in dependency order:
//!
//! * [`mir`] — parse and validate the textual IR.
//! * [`graphs`] — build AST/CFG/data/control views and merge them into a CPG.
//! * [`embed`] — tokenize statements and train skip-gram embeddings.
//! * [`featurize`] — assemble per-node feature vectors into model inputs.
//! * [`gcn`] — the graph convolutional network, its gradients, and training.
//! * [`datasets`] — corpus format, synthetic generator, and the 80/20 split.
//! * [`reports`] — ingest violation reports and score them.
//! * [`eval`] — the four-way tally and the accuracy metric.
//!
//! [`batch`] holds the data-parallel entry points (rayon behind the
//! `parallel` feature, sequential fallback otherwise); [`bruteforce`] holds
//! the reference implementations the test suites compare against.

pub mod batch;
pub mod bruteforce;
pub mod datasets;
pub mod decimal;
pub mod embed;
pub mod eval;
pub mod featurize;
pub mod gcn;
pub mod graphs;
pub mod mat;
pub mod mir;
pub mod reports;
