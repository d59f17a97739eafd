//! Data-parallel batch entry points.
//!
//! Cases featurize independently and reports score against a read-only
//! model, so both map cleanly over rayon. With the default `parallel`
//! feature the dispatching functions fan out across threads; without it
//! they fall back to the sequential loops. Either way the output order is
//! the input order and results are bit-identical, because each item is a
//! pure function of its inputs.
//!
//! The `*_seq` variants stay available under the `parallel` feature so the
//! benchmark suite can compare the two paths directly.

use crate::datasets::Case;
use crate::embed::EmbeddingTable;
use crate::featurize::{to_example, GraphExample};
use crate::gcn::{forward, GcnError, GcnModel};
use crate::graphs::{build_cpg, mark_violation, GraphError};
use crate::mir::{parse_program, validate_program, ParseError};
use crate::reports::{classify, Verdict};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("case `{case_id}`: {source}")]
    Parse {
        case_id: String,
        #[source]
        source: ParseError,
    },
    #[error("case `{case_id}`: fails validation: {message}")]
    Invalid { case_id: String, message: String },
    #[error("case `{case_id}`: method `{method}` not found")]
    UnknownMethod { case_id: String, method: String },
    #[error("case `{case_id}`: {source}")]
    Graph {
        case_id: String,
        #[source]
        source: GraphError,
    },
    #[error("case `{case_id}`: {message}")]
    Featurize { case_id: String, message: String },
    #[error(transparent)]
    Gcn(#[from] GcnError),
}

/// Order-preserving map over examples, parallel when the feature is on.
#[cfg(feature = "parallel")]
pub fn map_examples<X: Sync, T: Send, F: Fn(&X) -> T + Sync>(items: &[X], f: F) -> Vec<T> {
    items.par_iter().map(f).collect()
}

/// Order-preserving map over examples, sequential fallback.
#[cfg(not(feature = "parallel"))]
pub fn map_examples<X, T, F: Fn(&X) -> T>(items: &[X], f: F) -> Vec<T> {
    items.iter().map(f).collect()
}

fn prepare_one(case: &Case, table: &EmbeddingTable) -> Result<GraphExample, PipelineError> {
    let program =
        parse_program(&case.mir_source, &case.case_id).map_err(|e| PipelineError::Parse {
            case_id: case.case_id.clone(),
            source: e,
        })?;
    let diags = validate_program(&program);
    if !diags.is_empty() {
        return Err(PipelineError::Invalid {
            case_id: case.case_id.clone(),
            message: diags[0].to_string(),
        });
    }
    let method =
        program
            .method(&case.method_name)
            .ok_or_else(|| PipelineError::UnknownMethod {
                case_id: case.case_id.clone(),
                method: case.method_name.clone(),
            })?;
    let graph_err = |e: GraphError| PipelineError::Graph {
        case_id: case.case_id.clone(),
        source: e,
    };
    let cpg = build_cpg(method).map_err(graph_err)?;
    let marked = mark_violation(&cpg, case.violation_line).map_err(graph_err)?;
    to_example(&marked, table, Some(case.label), &case.case_id).map_err(|e| {
        PipelineError::Featurize {
            case_id: case.case_id.clone(),
            message: e.to_string(),
        }
    })
}

/// Parse, validate, build, mark, and featurize each case; output order is
/// case order.
pub fn prepare_examples(
    cases: &[Case],
    table: &EmbeddingTable,
) -> Result<Vec<GraphExample>, PipelineError> {
    #[cfg(feature = "parallel")]
    {
        cases
            .par_iter()
            .map(|c| prepare_one(c, table))
            .collect::<Result<Vec<_>, _>>()
    }
    #[cfg(not(feature = "parallel"))]
    {
        prepare_examples_seq(cases, table)
    }
}

/// Sequential baseline of [`prepare_examples`].
pub fn prepare_examples_seq(
    cases: &[Case],
    table: &EmbeddingTable,
) -> Result<Vec<GraphExample>, PipelineError> {
    cases.iter().map(|c| prepare_one(c, table)).collect()
}

/// Embedding-training corpus: one token sentence per statement across all
/// cases.
pub fn corpus_token_lists(cases: &[Case]) -> Result<Vec<Vec<String>>, PipelineError> {
    let mut sentences = Vec::new();
    for case in cases {
        let program =
            parse_program(&case.mir_source, &case.case_id).map_err(|e| PipelineError::Parse {
                case_id: case.case_id.clone(),
                source: e,
            })?;
        for method in &program.methods {
            for stmt in &method.statements {
                let tokens = crate::embed::tokenize(&stmt.raw_text).map_err(|e| {
                    PipelineError::Featurize {
                        case_id: case.case_id.clone(),
                        message: e.to_string(),
                    }
                })?;
                if !tokens.is_empty() {
                    sentences.push(tokens);
                }
            }
        }
    }
    Ok(sentences)
}

fn score_one(
    model: &GcnModel,
    example: &GraphExample,
    threshold: f64,
) -> Result<Verdict, GcnError> {
    let (score, _) = forward(model, example)?;
    Ok(Verdict {
        case_id: example.case_id.clone(),
        score,
        predicted: classify(score, threshold),
        threshold,
    })
}

/// Scores prepared examples against a read-only model, preserving order.
pub fn score_examples(
    model: &GcnModel,
    examples: &[GraphExample],
    threshold: f64,
) -> Result<Vec<Verdict>, GcnError> {
    #[cfg(feature = "parallel")]
    {
        examples
            .par_iter()
            .map(|e| score_one(model, e, threshold))
            .collect::<Result<Vec<_>, _>>()
    }
    #[cfg(not(feature = "parallel"))]
    {
        score_examples_seq(model, examples, threshold)
    }
}

/// Sequential baseline of [`score_examples`].
pub fn score_examples_seq(
    model: &GcnModel,
    examples: &[GraphExample],
    threshold: f64,
) -> Result<Vec<Verdict>, GcnError> {
    examples
        .iter()
        .map(|e| score_one(model, e, threshold))
        .collect()
}
