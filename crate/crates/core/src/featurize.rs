//! Per-node feature assembly: statement embedding | node-type one-hot |
//! violation flag, concatenated in that order. Rows follow node-id order,
//! so feature row `i` always describes CPG node `i`.

use crate::embed::{tokenize, EmbedError, EmbeddingTable};
use crate::graphs::{Cpg, NodeKind};
use crate::mat::Mat;

/// Node-feature matrix; row order equals CPG node-id order and the width is
/// `embedding dim + NodeKind::COUNT + 1`.
pub type FeatureMatrix = Mat;

/// A model-ready graph: features plus a deduplicated undirected edge list
/// over all four edge kinds. `label` is `true` when the case is ground-truth
/// secure (the report is a false positive); prediction-only examples carry
/// no label.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphExample {
    pub features: FeatureMatrix,
    pub adjacency: Vec<(u32, u32)>,
    pub label: Option<bool>,
    pub case_id: String,
}

/// Unit basis vector at the kind's declaration ordinal.
pub fn node_type_onehot(kind: NodeKind) -> Vec<f64> {
    let mut v = vec![0.0; NodeKind::COUNT];
    v[kind.ordinal()] = 1.0;
    v
}

/// Row `i` = `embed(tokens of node i) | onehot(kind of node i) | flag`.
pub fn assemble_features(g: &Cpg, table: &EmbeddingTable) -> Result<FeatureMatrix, EmbedError> {
    let mut nodes: Vec<_> = g.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    let f = table.dim + NodeKind::COUNT + 1;
    let mut rows = Vec::with_capacity(nodes.len());
    for n in nodes {
        let tokens = tokenize(&n.text)?;
        let mut row = Vec::with_capacity(f);
        row.extend(table.embed_statement(&tokens));
        row.extend(node_type_onehot(n.kind));
        row.push(f64::from(u8::from(n.is_violation)));
        rows.push(row);
    }
    Ok(Mat::from_rows(rows))
}

/// Packages a CPG for the model: features plus the flattened undirected
/// adjacency. Directions and edge kinds collapse; self-pairs drop (the
/// normalization step adds self-loops itself).
pub fn to_example(
    g: &Cpg,
    table: &EmbeddingTable,
    label: Option<bool>,
    case_id: &str,
) -> Result<GraphExample, EmbedError> {
    let features = assemble_features(g, table)?;
    let mut pairs: Vec<(u32, u32)> = g
        .edges
        .iter()
        .filter(|e| e.src != e.dst)
        .map(|e| (e.src.min(e.dst), e.src.max(e.dst)))
        .collect();
    pairs.sort();
    pairs.dedup();
    Ok(GraphExample {
        features,
        adjacency: pairs,
        label,
        case_id: case_id.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{train_word2vec, W2vConfig};
    use crate::graphs::{build_cpg, mark_violation, CpgEdge, EdgeKind};
    use crate::mir::parse_program;

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
                seed: 3,
                ..W2vConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn onehot_ordinals() {
        let first = node_type_onehot(NodeKind::StmtAssign);
        assert_eq!(first[0], 1.0);
        assert_eq!(first.iter().sum::<f64>(), 1.0);
        let last = node_type_onehot(NodeKind::MethodExit);
        assert_eq!(last[10], 1.0);
        // All eleven kinds give mutually orthogonal unit vectors.
        let kinds = [
            NodeKind::StmtAssign,
            NodeKind::StmtInvoke,
            NodeKind::StmtIf,
            NodeKind::StmtGoto,
            NodeKind::StmtReturn,
            NodeKind::StmtNop,
            NodeKind::AstOperand,
            NodeKind::AstOperator,
            NodeKind::AstLiteral,
            NodeKind::MethodEntry,
            NodeKind::MethodExit,
        ];
        for (i, a) in kinds.iter().enumerate() {
            for (j, b) in kinds.iter().enumerate() {
                let dot: f64 = node_type_onehot(*a)
                    .iter()
                    .zip(node_type_onehot(*b))
                    .map(|(x, y)| x * y)
                    .sum();
                assert_eq!(dot, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn entry_row_is_onehot_only() {
        let p = parse_program(SAMPLE, "s").unwrap();
        let g = build_cpg(&p.methods[0]).unwrap();
        let t = table();
        let feats = assemble_features(&g, &t).unwrap();
        assert_eq!(feats.cols, t.dim + NodeKind::COUNT + 1);
        let entry = feats.row(0);
        assert!(entry[..t.dim].iter().all(|&v| v == 0.0));
        assert_eq!(entry[t.dim + NodeKind::MethodEntry.ordinal()], 1.0);
        assert_eq!(entry[feats.cols - 1], 0.0);
    }

    #[test]
    fn violation_flag_column_sums() {
        let p = parse_program(SAMPLE, "s").unwrap();
        let g = build_cpg(&p.methods[0]).unwrap();
        let t = table();
        let unmarked = assemble_features(&g, &t).unwrap();
        let flag_col = |m: &Mat| -> f64 { (0..m.rows).map(|r| m.get(r, m.cols - 1)).sum() };
        assert_eq!(flag_col(&unmarked), 0.0);

        let marked = assemble_features(&mark_violation(&g, 2).unwrap(), &t).unwrap();
        assert_eq!(flag_col(&marked), 1.0);

        // Marking changes exactly one entry: the flag bit of that node.
        let mut diffs = 0;
        for i in 0..marked.data.len() {
            if marked.data[i] != unmarked.data[i] {
                diffs += 1;
            }
        }
        assert_eq!(diffs, 1);
    }

    #[test]
    fn default_width_arithmetic() {
        // d=32 embeddings + 11 node kinds + 1 flag = 44.
        assert_eq!(32 + NodeKind::COUNT + 1, 44);
    }

    #[test]
    fn adjacency_dedups_and_undirects() {
        let p = parse_program("method m() {\nreturn;\n}\n", "s").unwrap();
        let mut g = build_cpg(&p.methods[0]).unwrap();
        // Force a reciprocal pair; it must collapse to one undirected edge.
        g.edges.push(CpgEdge {
            src: 1,
            dst: 0,
            kind: EdgeKind::Data,
        });
        let ex = to_example(&g, &table(), None, "c").unwrap();
        assert_eq!(
            ex.adjacency.iter().filter(|&&(a, b)| (a, b) == (0, 1)).count(),
            1
        );
    }

    #[test]
    fn single_node_graph_has_empty_adjacency() {
        let g = Cpg {
            method_name: "m".into(),
            nodes: vec![crate::graphs::CpgNode {
                id: 0,
                kind: NodeKind::MethodEntry,
                stmt_index: None,
                line: None,
                text: String::new(),
                is_violation: false,
            }],
            edges: vec![],
        };
        let ex = to_example(&g, &table(), None, "c").unwrap();
        assert!(ex.adjacency.is_empty());
        assert_eq!(ex.features.rows, 1);
    }

    #[test]
    fn sample_example_covers_all_edge_kinds() {
        let p = parse_program(SAMPLE, "s").unwrap();
        let g = build_cpg(&p.methods[0]).unwrap();
        let ex = to_example(&g, &table(), Some(true), "sample").unwrap();
        for kind in [EdgeKind::Ast, EdgeKind::Cfg, EdgeKind::Data, EdgeKind::Control] {
            let covered = g.edges.iter().filter(|e| e.kind == kind).any(|e| {
                let pair = (e.src.min(e.dst), e.src.max(e.dst));
                ex.adjacency.contains(&pair)
            });
            assert!(covered, "{} endpoints missing", kind.name());
        }
        assert_eq!(ex.label, Some(true));
    }

    #[test]
    fn feature_width_constant_across_examples() {
        let t = table();
        let p1 = parse_program(SAMPLE, "s").unwrap();
        let p2 = parse_program("method m() {\nreturn;\n}\n", "s").unwrap();
        let e1 = to_example(&build_cpg(&p1.methods[0]).unwrap(), &t, None, "a").unwrap();
        let e2 = to_example(&build_cpg(&p2.methods[0]).unwrap(), &t, None, "b").unwrap();
        assert_eq!(e1.features.cols, e2.features.cols);
    }
}
