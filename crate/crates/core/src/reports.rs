//! Violation-report ingestion, scoring, and the threshold rule.
//!
//! A report names a source file, a method, and a line. Scoring builds the
//! method's CPG, marks the reported line as the violation node, featurizes,
//! runs the model, and applies the decision threshold: strictly above means
//! the report is classified a false positive.

use crate::embed::EmbeddingTable;
use crate::featurize::to_example;
use crate::gcn::{forward, GcnError, GcnModel, Score};
use crate::graphs::{build_cpg, mark_violation, GraphError};
use crate::mir::Program;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}:{line}: malformed report record: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report {case_id}: method `{method}` not found in {source_file}")]
    UnknownMethod {
        case_id: String,
        method: String,
        source_file: String,
    },
    #[error("report {case_id}: {source}")]
    Graph {
        case_id: String,
        #[source]
        source: GraphError,
    },
    #[error("report {case_id}: {message}")]
    Scoring { case_id: String, message: String },
}

/// One record from a static-analysis report file. `rule_id` is carried
/// opaquely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub case_id: String,
    pub source: String,
    pub method: String,
    pub reported_line: u32,
    pub rule_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predicted {
    FalsePositive,
    TruePositive,
}

impl Predicted {
    pub fn name(self) -> &'static str {
        match self {
            Predicted::FalsePositive => "FP",
            Predicted::TruePositive => "TP",
        }
    }
}

/// Scored report: `predicted == FalsePositive` exactly when
/// `score > threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub case_id: String,
    pub score: Score,
    pub predicted: Predicted,
    pub threshold: f64,
}

/// Reads one JSON report per line, preserving input order.
pub fn ingest_reports(path: &Path) -> Result<Vec<ViolationReport>, ReportError> {
    let file = std::fs::File::open(path).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut reports = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ViolationReport =
            serde_json::from_str(&line).map_err(|e| ReportError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if record.reported_line < 1 {
            return Err(ReportError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: "reported_line must be at least 1".to_string(),
            });
        }
        reports.push(record);
    }
    Ok(reports)
}

/// Strictly-above threshold rule: a score equal to the threshold stays a
/// true positive.
pub fn classify(score: Score, threshold: f64) -> Predicted {
    if score.value() > threshold {
        Predicted::FalsePositive
    } else {
        Predicted::TruePositive
    }
}

/// Scores one report against a parsed program: CPG, violation mark,
/// features, forward pass, threshold.
pub fn score_report(
    report: &ViolationReport,
    program: &Program,
    table: &EmbeddingTable,
    model: &GcnModel,
    threshold: f64,
) -> Result<Verdict, ReportError> {
    let method = program
        .method(&report.method)
        .ok_or_else(|| ReportError::UnknownMethod {
            case_id: report.case_id.clone(),
            method: report.method.clone(),
            source_file: report.source.clone(),
        })?;
    let graph_err = |e: GraphError| ReportError::Graph {
        case_id: report.case_id.clone(),
        source: e,
    };
    let cpg = build_cpg(method).map_err(graph_err)?;
    let marked = mark_violation(&cpg, report.reported_line).map_err(graph_err)?;
    let example = to_example(&marked, table, None, &report.case_id).map_err(|e| {
        ReportError::Scoring {
            case_id: report.case_id.clone(),
            message: e.to_string(),
        }
    })?;
    let (score, _) = forward(model, &example).map_err(|e: GcnError| ReportError::Scoring {
        case_id: report.case_id.clone(),
        message: e.to_string(),
    })?;
    Ok(Verdict {
        case_id: report.case_id.clone(),
        score,
        predicted: classify(score, threshold),
        threshold,
    })
}

/// Renders a verdict as its canonical JSONL line: nine significant digits
/// for the score so files are byte-stable.
pub fn verdict_line(v: &Verdict) -> String {
    format!(
        "{{\"case_id\":{},\"score\":{},\"predicted\":\"{}\",\"threshold\":{}}}",
        serde_json::to_string(&v.case_id).expect("string serializes"),
        crate::decimal::sig9(v.score.value()),
        v.predicted.name(),
        v.threshold
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{train_word2vec, tokenize, W2vConfig};
    use crate::gcn::GcnModel;
    use crate::graphs::NodeKind;
    use crate::mir::parse_program;
    use std::io::Write;

    const SAMPLE: &str = "method m(c) {\n\
                          x = const \"AES\";\n\
                          k = const 42;\n\
                          if c goto L;\n\
                          x = const \"RSA\";\n\
                          L: nop;\n\
                          return x;\n\
                          }\n";

    fn table() -> EmbeddingTable {
        let corpus: Vec<Vec<String>> = SAMPLE
            .lines()
            .map(|l| tokenize(l.trim_end_matches(';')).unwrap())
            .filter(|t| !t.is_empty())
            .collect();
        train_word2vec(
            &corpus,
            &W2vConfig {
                dim: 8,
                epochs: 2,
                seed: 5,
                ..W2vConfig::default()
            },
        )
        .unwrap()
    }

    fn model_for(table: &EmbeddingTable) -> GcnModel {
        GcnModel::init(&[table.dim + NodeKind::COUNT + 1, 6, 6], 17)
    }

    #[test]
    fn classify_threshold_semantics() {
        let t = 0.8;
        assert_eq!(classify(Score::new(0.833), t), Predicted::FalsePositive);
        assert_eq!(classify(Score::new(0.9756), t), Predicted::FalsePositive);
        assert_eq!(classify(Score::new(0.8), t), Predicted::TruePositive);
        assert_eq!(classify(Score::new(0.79), t), Predicted::TruePositive);
        assert_eq!(classify(Score::new(0.1), t), Predicted::TruePositive);
        assert_eq!(classify(Score::new(0.0), t), Predicted::TruePositive);
    }

    #[test]
    fn classify_is_monotone() {
        let scores = [0.0, 0.1, 0.5, 0.79, 0.8, 0.8001, 0.9, 1.0];
        let mut seen_fp = false;
        for &s in &scores {
            let p = classify(Score::new(s), 0.8);
            if seen_fp {
                assert_eq!(p, Predicted::FalsePositive);
            }
            seen_fp = p == Predicted::FalsePositive;
        }
    }

    #[test]
    fn ingest_preserves_order_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        for i in 0..3 {
            writeln!(
                f,
                "{{\"case_id\":\"c{i}\",\"source\":\"c{i}.mir\",\"method\":\"m\",\"reported_line\":2,\"rule_id\":\"r\"}}"
            )
            .unwrap();
        }
        drop(f);
        let reports = ingest_reports(&path).unwrap();
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[0].case_id, "c0");
        assert_eq!(reports[2].case_id, "c2");
    }

    #[test]
    fn ingest_rejects_line_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.jsonl");
        std::fs::write(
            &path,
            "{\"case_id\":\"a\",\"source\":\"a.mir\",\"method\":\"m\",\"reported_line\":0,\"rule_id\":\"r\"}\n",
        )
        .unwrap();
        let err = ingest_reports(&path).unwrap_err();
        assert!(matches!(err, ReportError::Malformed { line: 1, .. }));
    }

    #[test]
    fn ingest_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(ingest_reports(&path).unwrap().is_empty());
    }

    #[test]
    fn score_report_runs_pipeline() {
        let program = parse_program(SAMPLE, "sample.mir").unwrap();
        let t = table();
        let model = model_for(&t);
        let report = ViolationReport {
            case_id: "sample".into(),
            source: "sample.mir".into(),
            method: "m".into(),
            reported_line: 2,
            rule_id: "crypto/weak-algorithm".into(),
        };
        let v1 = score_report(&report, &program, &t, &model, 0.8).unwrap();
        let v2 = score_report(&report, &program, &t, &model, 0.8).unwrap();
        assert_eq!(v1, v2); // deterministic
        assert_eq!(v1.predicted, classify(v1.score, 0.8));
    }

    #[test]
    fn score_report_errors() {
        let program = parse_program(SAMPLE, "sample.mir").unwrap();
        let t = table();
        let model = model_for(&t);
        let mut report = ViolationReport {
            case_id: "x".into(),
            source: "sample.mir".into(),
            method: "nope".into(),
            reported_line: 2,
            rule_id: "r".into(),
        };
        assert!(matches!(
            score_report(&report, &program, &t, &model, 0.8),
            Err(ReportError::UnknownMethod { .. })
        ));
        report.method = "m".into();
        report.reported_line = 1; // header line hosts no statement
        assert!(matches!(
            score_report(&report, &program, &t, &model, 0.8),
            Err(ReportError::Graph { .. })
        ));
    }

    #[test]
    fn verdict_line_format() {
        let v = Verdict {
            case_id: "c1".into(),
            score: Score::new(0.833),
            predicted: Predicted::FalsePositive,
            threshold: 0.8,
        };
        assert_eq!(
            verdict_line(&v),
            "{\"case_id\":\"c1\",\"score\":8.33000000e-1,\"predicted\":\"FP\",\"threshold\":0.8}"
        );
        // Still valid JSON.
        let parsed: serde_json::Value = serde_json::from_str(&verdict_line(&v)).unwrap();
        assert_eq!(parsed["predicted"], "FP");
        assert!((parsed["score"].as_f64().unwrap() - 0.833).abs() < 1e-12);
    }
}
