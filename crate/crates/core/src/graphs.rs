//! Code property graph construction.
//!
//! Per method, four views are built over the same statement set and merged
//! into a single graph:
//!
//! * AST edges — statement nodes fan out to operand/operator/literal leaves;
//! * CFG edges — entry, fallthrough, branches, and returns to exit;
//! * DATA edges — a definition reaches a use (forward may-analysis fixpoint);
//! * CONTROL edges — a predicate governs whether a statement executes
//!   (Ferrante-style rule over post-dominators).
//!
//! The reported violation line is then marked on exactly one statement node.

use crate::mir::{Arg, Method, Rhs, StatementBody, StatementKind};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Node classification, 11 values. Declaration order fixes the one-hot
/// ordinals used during featurization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    StmtAssign,
    StmtInvoke,
    StmtIf,
    StmtGoto,
    StmtReturn,
    StmtNop,
    AstOperand,
    AstOperator,
    AstLiteral,
    MethodEntry,
    MethodExit,
}

impl NodeKind {
    pub const COUNT: usize = 11;

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::StmtAssign => "STMT_ASSIGN",
            NodeKind::StmtInvoke => "STMT_INVOKE",
            NodeKind::StmtIf => "STMT_IF",
            NodeKind::StmtGoto => "STMT_GOTO",
            NodeKind::StmtReturn => "STMT_RETURN",
            NodeKind::StmtNop => "STMT_NOP",
            NodeKind::AstOperand => "AST_OPERAND",
            NodeKind::AstOperator => "AST_OPERATOR",
            NodeKind::AstLiteral => "AST_LITERAL",
            NodeKind::MethodEntry => "METHOD_ENTRY",
            NodeKind::MethodExit => "METHOD_EXIT",
        }
    }

    pub fn of_statement(kind: StatementKind) -> NodeKind {
        match kind {
            StatementKind::Assign => NodeKind::StmtAssign,
            StatementKind::Invoke => NodeKind::StmtInvoke,
            StatementKind::If => NodeKind::StmtIf,
            StatementKind::Goto => NodeKind::StmtGoto,
            StatementKind::Return => NodeKind::StmtReturn,
            StatementKind::Nop => NodeKind::StmtNop,
        }
    }

    pub fn is_statement(self) -> bool {
        (self as usize) < StatementKind::COUNT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Ast,
    Cfg,
    Data,
    Control,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Ast => "AST",
            EdgeKind::Cfg => "CFG",
            EdgeKind::Data => "DATA",
            EdgeKind::Control => "CONTROL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpgNode {
    pub id: u32,
    pub kind: NodeKind,
    pub stmt_index: Option<usize>,
    pub line: Option<u32>,
    pub text: String,
    pub is_violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CpgEdge {
    pub src: u32,
    pub dst: u32,
    pub kind: EdgeKind,
}

/// The merged code property graph of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpg {
    pub method_name: String,
    pub nodes: Vec<CpgNode>,
    pub edges: Vec<CpgEdge>,
}

impl Cpg {
    pub fn violation_node(&self) -> Option<&CpgNode> {
        self.nodes.iter().find(|n| n.is_violation)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("no statement at line {line} in method `{method}`")]
    NoStatementAtLine { method: String, line: u32 },
    #[error("statement {index} in method `{method}` cannot reach the method exit")]
    UnreachableExit { method: String, index: usize },
}

// ---------------------------------------------------------------------------
// CFG
// ---------------------------------------------------------------------------

/// A control-flow node: the synthetic entry, a statement, or the synthetic
/// exit. Orders entry < statements < exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CfgNode {
    Entry,
    Stmt(usize),
    Exit,
}

impl std::fmt::Display for CfgNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CfgNode::Entry => write!(f, "ENTRY"),
            CfgNode::Stmt(i) => write!(f, "{i}"),
            CfgNode::Exit => write!(f, "EXIT"),
        }
    }
}

/// Directed control-flow edges over statement indices plus entry/exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub n_statements: usize,
    pub edges: BTreeSet<(CfgNode, CfgNode)>,
}

impl Cfg {
    pub fn successors(&self, n: CfgNode) -> Vec<CfgNode> {
        self.edges
            .iter()
            .filter(|(s, _)| *s == n)
            .map(|&(_, d)| d)
            .collect()
    }

    pub fn predecessors(&self, n: CfgNode) -> Vec<CfgNode> {
        self.edges
            .iter()
            .filter(|(_, d)| *d == n)
            .map(|&(s, _)| s)
            .collect()
    }

    /// All nodes: entry, every statement, exit.
    pub fn nodes(&self) -> Vec<CfgNode> {
        let mut v = vec![CfgNode::Entry];
        v.extend((0..self.n_statements).map(CfgNode::Stmt));
        v.push(CfgNode::Exit);
        v
    }
}

/// Builds the control-flow graph of a validated method.
///
/// `ENTRY -> stmt0`; fallthrough `i -> i+1` for non-branching statements;
/// IF adds its branch target (deduplicated when the target is the
/// fallthrough); GOTO jumps only to its target; RETURN goes to `EXIT`.
pub fn build_cfg(m: &Method) -> Cfg {
    let mut edges = BTreeSet::new();
    if !m.statements.is_empty() {
        edges.insert((CfgNode::Entry, CfgNode::Stmt(0)));
    }
    for i in 0..m.statements.len() {
        let (succs, exits) = m.successor_indices(i);
        for j in succs {
            edges.insert((CfgNode::Stmt(i), CfgNode::Stmt(j)));
        }
        if exits {
            edges.insert((CfgNode::Stmt(i), CfgNode::Exit));
        }
    }
    Cfg {
        n_statements: m.statements.len(),
        edges,
    }
}

// ---------------------------------------------------------------------------
// Reaching definitions and data dependence
// ---------------------------------------------------------------------------

/// For each statement, the set of `(variable, defining statement)` pairs
/// that can reach its entry along some CFG path without an intervening
/// redefinition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachingDefs {
    pub at_entry: Vec<BTreeSet<(String, usize)>>,
}

/// Classical forward may-analysis fixpoint:
/// `IN(s) = union of OUT(pred)`, `OUT(s) = gen(s) + (IN(s) - kill(s))`.
pub fn compute_reaching_definitions(m: &Method, cfg: &Cfg) -> ReachingDefs {
    let n = m.statements.len();
    let mut in_sets: Vec<BTreeSet<(String, usize)>> = vec![BTreeSet::new(); n];
    let mut out_sets: Vec<BTreeSet<(String, usize)>> = vec![BTreeSet::new(); n];

    let preds: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            cfg.predecessors(CfgNode::Stmt(i))
                .into_iter()
                .filter_map(|p| match p {
                    CfgNode::Stmt(j) => Some(j),
                    _ => None,
                })
                .collect()
        })
        .collect();

    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            let mut new_in = BTreeSet::new();
            for &p in &preds[i] {
                new_in.extend(out_sets[p].iter().cloned());
            }
            let defs = &m.statements[i].defs;
            let mut new_out: BTreeSet<(String, usize)> = new_in
                .iter()
                .filter(|(v, _)| !defs.contains(v))
                .cloned()
                .collect();
            for v in defs {
                new_out.insert((v.clone(), i));
            }
            if new_in != in_sets[i] || new_out != out_sets[i] {
                changed = true;
                in_sets[i] = new_in;
                out_sets[i] = new_out;
            }
        }
    }

    ReachingDefs { at_entry: in_sets }
}

/// DATA edge `d -> s` for every variable used by `s` whose definition at
/// `d` reaches the entry of `s`.
pub fn build_data_dependence(m: &Method, rd: &ReachingDefs) -> Vec<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for (s, stmt) in m.statements.iter().enumerate() {
        for (var, d) in &rd.at_entry[s] {
            if stmt.uses.contains(var) {
                edges.insert((*d, s));
            }
        }
    }
    edges.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Post-dominators and control dependence
// ---------------------------------------------------------------------------

/// Post-dominator sets and the immediate post-dominator of every CFG node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostDominators {
    pub sets: BTreeMap<CfgNode, BTreeSet<CfgNode>>,
    pub ipdom: BTreeMap<CfgNode, CfgNode>,
}

impl PostDominators {
    pub fn post_dominates(&self, p: CfgNode, n: CfgNode) -> bool {
        self.sets.get(&n).is_some_and(|s| s.contains(&p))
    }

    /// Immediate post-dominator of a statement (`EXIT` when nothing closer).
    pub fn ipdom_of_stmt(&self, i: usize) -> CfgNode {
        self.ipdom[&CfgNode::Stmt(i)]
    }
}

/// Standard iterative post-dominance fixpoint on the reversed CFG:
/// `pdom(EXIT) = {EXIT}`, `pdom(n) = {n} + intersection of pdom(succ)`.
///
/// Errors when some node has no path to `EXIT`; the validator rules that
/// out for well-formed methods.
pub fn compute_postdominators(m: &Method, cfg: &Cfg) -> Result<PostDominators, GraphError> {
    let nodes = cfg.nodes();

    // Every node must reach EXIT for post-dominance to be defined.
    let mut reaches_exit: BTreeSet<CfgNode> = BTreeSet::new();
    reaches_exit.insert(CfgNode::Exit);
    let mut work = vec![CfgNode::Exit];
    while let Some(n) = work.pop() {
        for p in cfg.predecessors(n) {
            if reaches_exit.insert(p) {
                work.push(p);
            }
        }
    }
    for n in &nodes {
        if !reaches_exit.contains(n) {
            let index = match n {
                CfgNode::Stmt(i) => *i,
                _ => 0,
            };
            return Err(GraphError::UnreachableExit {
                method: m.name.clone(),
                index,
            });
        }
    }

    let all: BTreeSet<CfgNode> = nodes.iter().copied().collect();
    let mut sets: BTreeMap<CfgNode, BTreeSet<CfgNode>> = BTreeMap::new();
    for &n in &nodes {
        if n == CfgNode::Exit {
            sets.insert(n, [CfgNode::Exit].into_iter().collect());
        } else {
            sets.insert(n, all.clone());
        }
    }

    let mut changed = true;
    while changed {
        changed = false;
        for &n in &nodes {
            if n == CfgNode::Exit {
                continue;
            }
            let succs = cfg.successors(n);
            let mut inter: Option<BTreeSet<CfgNode>> = None;
            for s in succs {
                let ss = &sets[&s];
                inter = Some(match inter {
                    None => ss.clone(),
                    Some(acc) => acc.intersection(ss).copied().collect(),
                });
            }
            let mut new_set = inter.unwrap_or_default();
            new_set.insert(n);
            if new_set != sets[&n] {
                sets.insert(n, new_set);
                changed = true;
            }
        }
    }

    // The strict post-dominators of a node form a chain; the immediate one
    // is the chain element with the largest post-dominator set.
    let mut ipdom = BTreeMap::new();
    for &n in &nodes {
        if n == CfgNode::Exit {
            ipdom.insert(n, CfgNode::Exit);
            continue;
        }
        let best = sets[&n]
            .iter()
            .filter(|&&p| p != n)
            .max_by_key(|&&p| sets[&p].len())
            .copied()
            .expect("every non-exit node has a strict post-dominator");
        ipdom.insert(n, best);
    }

    Ok(PostDominators { sets, ipdom })
}

/// CONTROL edge `b -> s` when `s` post-dominates some successor of `b` but
/// not `b` itself: taking one edge out of `b` commits control to reaching
/// `s`, while another edge can avoid it.
pub fn build_control_dependence(
    m: &Method,
    cfg: &Cfg,
    pd: &PostDominators,
) -> Vec<(usize, usize)> {
    let n = m.statements.len();
    let mut edges = BTreeSet::new();
    for b in 0..n {
        let succs = cfg.successors(CfgNode::Stmt(b));
        if succs.len() < 2 {
            continue;
        }
        for s in 0..n {
            let sn = CfgNode::Stmt(s);
            if pd.post_dominates(sn, CfgNode::Stmt(b)) {
                continue;
            }
            if succs.iter().any(|&t| pd.post_dominates(sn, t)) {
                edges.insert((b, s));
            }
        }
    }
    edges.into_iter().collect()
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

/// Statement and AST leaf nodes with parent -> child edges. Node ids start
/// at 1; [`merge_cpg`] adds entry as id 0 and exit as the final id.
#[derive(Debug, Clone, PartialEq)]
pub struct AstParts {
    pub nodes: Vec<CpgNode>,
    pub edges: Vec<CpgEdge>,
    /// Node id of each statement, indexed by statement index.
    pub stmt_node_ids: Vec<u32>,
}

struct AstBuilder {
    nodes: Vec<CpgNode>,
    edges: Vec<CpgEdge>,
    next_id: u32,
}

impl AstBuilder {
    fn leaf(&mut self, stmt_id: u32, kind: NodeKind, text: String) {
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.push(CpgNode {
            id,
            kind,
            stmt_index: None,
            line: None,
            text,
            is_violation: false,
        });
        self.edges.push(CpgEdge {
            src: stmt_id,
            dst: id,
            kind: EdgeKind::Ast,
        });
    }

    fn arg_leaves(&mut self, stmt_id: u32, args: &[Arg]) {
        for a in args {
            match a {
                Arg::Name(n) => self.leaf(stmt_id, NodeKind::AstOperand, n.clone()),
                Arg::Lit(l) => self.leaf(stmt_id, NodeKind::AstLiteral, l.render()),
            }
        }
    }
}

/// One node per statement plus leaf nodes for its operands, operators, and
/// literals, in textual order.
pub fn build_ast(m: &Method) -> AstParts {
    let mut b = AstBuilder {
        nodes: Vec::new(),
        edges: Vec::new(),
        next_id: 1,
    };
    let mut stmt_node_ids = Vec::with_capacity(m.statements.len());

    for stmt in &m.statements {
        let stmt_id = b.next_id;
        b.next_id += 1;
        b.nodes.push(CpgNode {
            id: stmt_id,
            kind: NodeKind::of_statement(stmt.kind),
            stmt_index: Some(stmt.index),
            line: Some(stmt.line),
            text: stmt.raw_text.clone(),
            is_violation: false,
        });
        stmt_node_ids.push(stmt_id);

        match &stmt.body {
            StatementBody::Assign { target, rhs } => {
                b.leaf(stmt_id, NodeKind::AstOperand, target.clone());
                match rhs {
                    Rhs::Const(l) => b.leaf(stmt_id, NodeKind::AstLiteral, l.render()),
                    Rhs::Copy(src) => b.leaf(stmt_id, NodeKind::AstOperand, src.clone()),
                    Rhs::Binary { op, lhs, rhs } => {
                        b.leaf(stmt_id, NodeKind::AstOperator, op.clone());
                        b.leaf(stmt_id, NodeKind::AstOperand, lhs.clone());
                        b.leaf(stmt_id, NodeKind::AstOperand, rhs.clone());
                    }
                    Rhs::Call { callee, args } => {
                        b.leaf(stmt_id, NodeKind::AstOperator, callee.clone());
                        b.arg_leaves(stmt_id, args);
                    }
                }
            }
            StatementBody::Invoke { callee, args, out } => {
                b.leaf(stmt_id, NodeKind::AstOperator, callee.clone());
                b.arg_leaves(stmt_id, args);
                if let Some(o) = out {
                    b.leaf(stmt_id, NodeKind::AstOperand, o.clone());
                }
            }
            StatementBody::If { cond, .. } => {
                b.leaf(stmt_id, NodeKind::AstOperand, cond.clone());
            }
            StatementBody::Return { var: Some(v) } => {
                b.leaf(stmt_id, NodeKind::AstOperand, v.clone());
            }
            _ => {}
        }
    }

    AstParts {
        nodes: b.nodes,
        edges: b.edges,
        stmt_node_ids,
    }
}

// ---------------------------------------------------------------------------
// Merge and violation marking
// ---------------------------------------------------------------------------

/// Unions the four views into one graph. Statement nodes are shared across
/// views; entry/exit become real nodes (featurized with empty text); edges
/// are deduplicated by `(src, dst, kind)`.
pub fn merge_cpg(
    m: &Method,
    ast: AstParts,
    cfg: &Cfg,
    data: &[(usize, usize)],
    control: &[(usize, usize)],
) -> Cpg {
    let entry_id = 0u32;
    let exit_id = ast.nodes.iter().map(|n| n.id).max().unwrap_or(0) + 1;

    let mut nodes = Vec::with_capacity(ast.nodes.len() + 2);
    nodes.push(CpgNode {
        id: entry_id,
        kind: NodeKind::MethodEntry,
        stmt_index: None,
        line: None,
        text: String::new(),
        is_violation: false,
    });
    nodes.extend(ast.nodes);
    nodes.push(CpgNode {
        id: exit_id,
        kind: NodeKind::MethodExit,
        stmt_index: None,
        line: None,
        text: String::new(),
        is_violation: false,
    });
    nodes.sort_by_key(|n| n.id);

    let stmt_id = |i: usize| ast.stmt_node_ids[i];
    let cfg_id = |n: CfgNode| match n {
        CfgNode::Entry => entry_id,
        CfgNode::Stmt(i) => stmt_id(i),
        CfgNode::Exit => exit_id,
    };

    let mut edges: BTreeSet<CpgEdge> = ast.edges.into_iter().collect();
    for &(s, d) in &cfg.edges {
        edges.insert(CpgEdge {
            src: cfg_id(s),
            dst: cfg_id(d),
            kind: EdgeKind::Cfg,
        });
    }
    for &(d, s) in data {
        edges.insert(CpgEdge {
            src: stmt_id(d),
            dst: stmt_id(s),
            kind: EdgeKind::Data,
        });
    }
    for &(b, s) in control {
        edges.insert(CpgEdge {
            src: stmt_id(b),
            dst: stmt_id(s),
            kind: EdgeKind::Control,
        });
    }

    Cpg {
        method_name: m.name.clone(),
        nodes,
        edges: edges.into_iter().collect(),
    }
}

/// Builds the complete CPG of a validated method.
pub fn build_cpg(m: &Method) -> Result<Cpg, GraphError> {
    let ast = build_ast(m);
    let cfg = build_cfg(m);
    let rd = compute_reaching_definitions(m, &cfg);
    let data = build_data_dependence(m, &rd);
    let pd = compute_postdominators(m, &cfg)?;
    let control = build_control_dependence(m, &cfg, &pd);
    Ok(merge_cpg(m, ast, &cfg, &data, &control))
}

/// Returns a copy with the statement node at `line` flagged as the
/// violation node and every other flag cleared.
pub fn mark_violation(g: &Cpg, line: u32) -> Result<Cpg, GraphError> {
    let has_match = g
        .nodes
        .iter()
        .any(|n| n.kind.is_statement() && n.line == Some(line));
    if !has_match {
        return Err(GraphError::NoStatementAtLine {
            method: g.method_name.clone(),
            line,
        });
    }
    let mut out = g.clone();
    for n in &mut out.nodes {
        n.is_violation = n.kind.is_statement() && n.line == Some(line);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dump format
// ---------------------------------------------------------------------------

fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Line-oriented dump: `NODE <id> <kind> line=<n|-> viol=<0|1>
/// text=<escaped>` for every node in id order, then `EDGE <src> <dst>
/// <kind>` lines sorted lexicographically. Golden-file stable.
pub fn dump_cpg(g: &Cpg) -> String {
    let mut out = String::new();
    let mut nodes: Vec<&CpgNode> = g.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    for n in nodes {
        let line = n.line.map_or("-".to_string(), |l| l.to_string());
        out.push_str(&format!(
            "NODE {} {} line={} viol={} text={}\n",
            n.id,
            n.kind.name(),
            line,
            u8::from(n.is_violation),
            escape_text(&n.text)
        ));
    }
    let mut edge_lines: Vec<String> = g
        .edges
        .iter()
        .map(|e| format!("EDGE {} {} {}", e.src, e.dst, e.kind.name()))
        .collect();
    edge_lines.sort();
    for l in edge_lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::{parse_program, validate_program, Program};

    const SAMPLE: &str = "method m(c) {\n\
                          x = const \"AES\";\n\
                          k = const 42;\n\
                          if c goto L;\n\
                          x = const \"RSA\";\n\
                          L: nop;\n\
                          return x;\n\
                          }\n";

    fn sample() -> Program {
        let p = parse_program(SAMPLE, "sample.mir").unwrap();
        assert!(validate_program(&p).is_empty());
        p
    }

    fn parse_method(text: &str) -> Program {
        let p = parse_program(text, "t").unwrap();
        assert!(validate_program(&p).is_empty(), "{:?}", validate_program(&p));
        p
    }

    #[test]
    fn ast_const_assignment() {
        let p = parse_method("method m() {\nx = const 1;\nreturn x;\n}\n");
        let ast = build_ast(&p.methods[0]);
        // stmt node + [operand x, literal 1]
        let stmt_id = ast.stmt_node_ids[0];
        let children: Vec<&CpgNode> = ast
            .edges
            .iter()
            .filter(|e| e.src == stmt_id)
            .map(|e| ast.nodes.iter().find(|n| n.id == e.dst).unwrap())
            .collect();
        assert_eq!(children.len(), 2);
        assert_eq!(children[0].kind, NodeKind::AstOperand);
        assert_eq!(children[0].text, "x");
        assert_eq!(children[1].kind, NodeKind::AstLiteral);
        assert_eq!(children[1].text, "1");
    }

    #[test]
    fn ast_return_and_binary() {
        let p = parse_method("method m(a, b) {\ny = a + b;\nreturn y;\n}\n");
        let ast = build_ast(&p.methods[0]);
        let kinds_texts: Vec<(NodeKind, &str)> = ast
            .edges
            .iter()
            .filter(|e| e.src == ast.stmt_node_ids[0])
            .map(|e| {
                let n = ast.nodes.iter().find(|n| n.id == e.dst).unwrap();
                (n.kind, n.text.as_str())
            })
            .collect();
        assert_eq!(
            kinds_texts,
            vec![
                (NodeKind::AstOperand, "y"),
                (NodeKind::AstOperator, "+"),
                (NodeKind::AstOperand, "a"),
                (NodeKind::AstOperand, "b"),
            ]
        );
        let ret_children: Vec<&str> = ast
            .edges
            .iter()
            .filter(|e| e.src == ast.stmt_node_ids[1])
            .map(|e| ast.nodes.iter().find(|n| n.id == e.dst).unwrap().text.as_str())
            .collect();
        assert_eq!(ret_children, vec!["y"]);
    }

    #[test]
    fn cfg_straight_line() {
        let p = parse_method("method m() {\nx = const 1;\ny = x;\nreturn y;\n}\n");
        let cfg = build_cfg(&p.methods[0]);
        let expect: BTreeSet<(CfgNode, CfgNode)> = [
            (CfgNode::Entry, CfgNode::Stmt(0)),
            (CfgNode::Stmt(0), CfgNode::Stmt(1)),
            (CfgNode::Stmt(1), CfgNode::Stmt(2)),
            (CfgNode::Stmt(2), CfgNode::Exit),
        ]
        .into_iter()
        .collect();
        assert_eq!(cfg.edges, expect);
    }

    #[test]
    fn cfg_sample_if_successors() {
        let p = sample();
        let cfg = build_cfg(&p.methods[0]);
        let succ: BTreeSet<CfgNode> = cfg.successors(CfgNode::Stmt(2)).into_iter().collect();
        assert_eq!(
            succ,
            [CfgNode::Stmt(3), CfgNode::Stmt(4)].into_iter().collect()
        );
    }

    #[test]
    fn cfg_goto_has_no_fallthrough() {
        let p = parse_method("method m() {\ngoto L;\nL: nop;\nreturn;\n}\n");
        let cfg = build_cfg(&p.methods[0]);
        assert_eq!(cfg.successors(CfgNode::Stmt(0)), vec![CfgNode::Stmt(1)]);
    }

    #[test]
    fn reaching_defs_kill_and_merge() {
        let p = parse_method(
            "method m() {\nx = const 1;\ny = x;\nx = const 2;\nz = x;\nreturn z;\n}\n",
        );
        let m = &p.methods[0];
        let cfg = build_cfg(m);
        let rd = compute_reaching_definitions(m, &cfg);
        assert!(rd.at_entry[3].contains(&("x".to_string(), 2)));
        assert!(!rd.at_entry[3].contains(&("x".to_string(), 0)));
    }

    #[test]
    fn reaching_defs_single_return() {
        let p = parse_method("method m() {\nreturn;\n}\n");
        let m = &p.methods[0];
        let rd = compute_reaching_definitions(m, &build_cfg(m));
        assert!(rd.at_entry[0].is_empty());
    }

    #[test]
    fn reaching_defs_sample_join() {
        let p = sample();
        let m = &p.methods[0];
        let rd = compute_reaching_definitions(m, &build_cfg(m));
        assert!(rd.at_entry[5].contains(&("x".to_string(), 0)));
        assert!(rd.at_entry[5].contains(&("x".to_string(), 3)));
    }

    #[test]
    fn data_edges_simple_and_killed() {
        let p = parse_method("method m() {\nx = const 1;\ny = x;\nreturn y;\n}\n");
        let m = &p.methods[0];
        let rd = compute_reaching_definitions(m, &build_cfg(m));
        assert_eq!(build_data_dependence(m, &rd), vec![(0, 1), (1, 2)]);

        let p = parse_method(
            "method m() {\nx = const 1;\nx = const 2;\ny = x;\nreturn y;\n}\n",
        );
        let m = &p.methods[0];
        let rd = compute_reaching_definitions(m, &build_cfg(m));
        let data = build_data_dependence(m, &rd);
        assert!(data.contains(&(1, 2)));
        assert!(!data.contains(&(0, 2)));
    }

    #[test]
    fn data_edges_sample_both_defs_reach_return() {
        let p = sample();
        let m = &p.methods[0];
        let rd = compute_reaching_definitions(m, &build_cfg(m));
        let data = build_data_dependence(m, &rd);
        assert!(data.contains(&(0, 5)));
        assert!(data.contains(&(3, 5)));
    }

    #[test]
    fn postdominators_straight_line() {
        let p = parse_method("method m() {\nx = const 1;\ny = x;\nreturn y;\n}\n");
        let m = &p.methods[0];
        let pd = compute_postdominators(m, &build_cfg(m)).unwrap();
        assert_eq!(pd.ipdom_of_stmt(0), CfgNode::Stmt(1));
        assert_eq!(pd.ipdom_of_stmt(1), CfgNode::Stmt(2));
        assert_eq!(pd.ipdom_of_stmt(2), CfgNode::Exit);
        assert_eq!(pd.ipdom[&CfgNode::Exit], CfgNode::Exit);
        assert_eq!(
            pd.sets[&CfgNode::Exit],
            [CfgNode::Exit].into_iter().collect()
        );
    }

    #[test]
    fn postdominators_sample_join_point() {
        let p = sample();
        let m = &p.methods[0];
        let pd = compute_postdominators(m, &build_cfg(m)).unwrap();
        assert_eq!(pd.ipdom_of_stmt(2), CfgNode::Stmt(4));
    }

    #[test]
    fn control_dependence_sample() {
        let p = sample();
        let m = &p.methods[0];
        let cfg = build_cfg(m);
        let pd = compute_postdominators(m, &cfg).unwrap();
        let control = build_control_dependence(m, &cfg, &pd);
        assert_eq!(control, vec![(2, 3)]);
    }

    #[test]
    fn control_dependence_straight_line_empty() {
        let p = parse_method("method m() {\nx = const 1;\nreturn x;\n}\n");
        let m = &p.methods[0];
        let cfg = build_cfg(m);
        let pd = compute_postdominators(m, &cfg).unwrap();
        assert!(build_control_dependence(m, &cfg, &pd).is_empty());
    }

    #[test]
    fn control_dependence_nested_guards() {
        // x = const 1 runs only when both branches fall through: it is
        // control dependent on the inner IF, which in turn depends on the
        // outer IF.
        let p = parse_method(
            "method m(c, d) {\nif c goto L;\nif d goto L;\nx = const 1;\nL: nop;\nreturn;\n}\n",
        );
        let m = &p.methods[0];
        let cfg = build_cfg(m);
        let pd = compute_postdominators(m, &cfg).unwrap();
        let control = build_control_dependence(m, &cfg, &pd);
        assert_eq!(control, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn merge_sample_counts() {
        let p = sample();
        let m = &p.methods[0];
        let g = build_cpg(m).unwrap();
        let stmt_nodes = g.nodes.iter().filter(|n| n.kind.is_statement()).count();
        assert_eq!(stmt_nodes, 6);
        let cfg_between_stmts = g
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Cfg)
            .filter(|e| {
                let src = g.nodes.iter().find(|n| n.id == e.src).unwrap();
                let dst = g.nodes.iter().find(|n| n.id == e.dst).unwrap();
                src.kind.is_statement() && dst.kind.is_statement()
            })
            .count();
        assert!(cfg_between_stmts >= 5, "got {cfg_between_stmts}");
        assert_eq!(
            g.nodes
                .iter()
                .filter(|n| n.kind == NodeKind::MethodEntry)
                .count(),
            1
        );
        assert_eq!(
            g.nodes
                .iter()
                .filter(|n| n.kind == NodeKind::MethodExit)
                .count(),
            1
        );
    }

    #[test]
    fn merge_single_return_method() {
        let p = parse_method("method m() {\nreturn;\n}\n");
        let g = build_cpg(&p.methods[0]).unwrap();
        assert_eq!(g.nodes.iter().filter(|n| n.kind.is_statement()).count(), 1);
        assert!(!g.edges.iter().any(|e| e.kind == EdgeKind::Data));
        assert!(!g.edges.iter().any(|e| e.kind == EdgeKind::Control));
    }

    #[test]
    fn merge_is_idempotent_on_duplicate_edges() {
        let p = sample();
        let m = &p.methods[0];
        let ast = build_ast(m);
        let cfg = build_cfg(m);
        let rd = compute_reaching_definitions(m, &cfg);
        let mut data = build_data_dependence(m, &rd);
        let dup = data.clone();
        data.extend(dup); // duplicated inputs must not duplicate edges
        let pd = compute_postdominators(m, &cfg).unwrap();
        let control = build_control_dependence(m, &cfg, &pd);
        let g = merge_cpg(m, ast, &cfg, &data, &control);
        assert_eq!(g, build_cpg(m).unwrap());
    }

    #[test]
    fn mark_violation_flags_one_node() {
        let p = sample();
        let g = build_cpg(&p.methods[0]).unwrap();
        let g2 = mark_violation(&g, 2).unwrap();
        let flagged: Vec<&CpgNode> = g2.nodes.iter().filter(|n| n.is_violation).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].kind, NodeKind::StmtAssign);
        assert_eq!(flagged[0].text, "x = const \"AES\"");

        // Re-marking a different line moves the single flag.
        let g3 = mark_violation(&g2, 7).unwrap();
        let flagged: Vec<&CpgNode> = g3.nodes.iter().filter(|n| n.is_violation).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].kind, NodeKind::StmtReturn);
    }

    #[test]
    fn mark_violation_rejects_non_statement_line() {
        let p = sample();
        let g = build_cpg(&p.methods[0]).unwrap();
        let err = mark_violation(&g, 1).unwrap_err(); // header line
        assert!(matches!(err, GraphError::NoStatementAtLine { line: 1, .. }));
        assert!(mark_violation(&g, 99).is_err());
    }

    #[test]
    fn cfg_out_degree_rules() {
        let p = sample();
        let m = &p.methods[0];
        let cfg = build_cfg(m);
        for (i, s) in m.statements.iter().enumerate() {
            let deg = cfg.successors(CfgNode::Stmt(i)).len();
            match s.kind {
                StatementKind::Return => assert_eq!(deg, 1),
                StatementKind::Goto => assert_eq!(deg, 1),
                StatementKind::If => assert!(deg == 1 || deg == 2),
                _ => assert_eq!(deg, 1),
            }
        }
    }

    #[test]
    fn if_with_fallthrough_target_collapses() {
        let p = parse_method("method m(c) {\nif c goto L;\nL: nop;\nreturn;\n}\n");
        let cfg = build_cfg(&p.methods[0]);
        assert_eq!(cfg.successors(CfgNode::Stmt(0)), vec![CfgNode::Stmt(1)]);
    }

    #[test]
    fn ast_edges_form_a_forest() {
        let p = sample();
        let g = build_cpg(&p.methods[0]).unwrap();
        // Each AST_* node has exactly one incoming AST edge.
        for n in g.nodes.iter().filter(|n| {
            matches!(
                n.kind,
                NodeKind::AstOperand | NodeKind::AstOperator | NodeKind::AstLiteral
            )
        }) {
            let incoming = g
                .edges
                .iter()
                .filter(|e| e.kind == EdgeKind::Ast && e.dst == n.id)
                .count();
            assert_eq!(incoming, 1, "node {}", n.id);
        }
        // AST edges only leave statement nodes.
        for e in g.edges.iter().filter(|e| e.kind == EdgeKind::Ast) {
            let src = g.nodes.iter().find(|n| n.id == e.src).unwrap();
            assert!(src.kind.is_statement());
        }
    }

    #[test]
    fn every_node_lies_on_an_entry_exit_path() {
        let p = sample();
        let m = &p.methods[0];
        let cfg = build_cfg(m);
        for i in 0..m.statements.len() {
            let n = CfgNode::Stmt(i);
            // Forward from entry.
            let mut seen = BTreeSet::new();
            let mut work = vec![CfgNode::Entry];
            while let Some(x) = work.pop() {
                if seen.insert(x) {
                    work.extend(cfg.successors(x));
                }
            }
            assert!(seen.contains(&n));
            // Backward from exit.
            let mut seen = BTreeSet::new();
            let mut work = vec![CfgNode::Exit];
            while let Some(x) = work.pop() {
                if seen.insert(x) {
                    work.extend(cfg.predecessors(x));
                }
            }
            assert!(seen.contains(&n));
        }
    }

    #[test]
    fn dump_escapes_and_orders() {
        let p = parse_method("method m() {\nx = const \"AES\";\nreturn x;\n}\n");
        let g = build_cpg(&p.methods[0]).unwrap();
        let dump = dump_cpg(&g);
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines[0], "NODE 0 METHOD_ENTRY line=- viol=0 text=");
        assert!(lines
            .iter()
            .any(|l| l.contains("text=x\\s=\\sconst\\s\"AES\"")));
        let edge_lines: Vec<&&str> = lines.iter().filter(|l| l.starts_with("EDGE")).collect();
        let mut sorted = edge_lines.clone();
        sorted.sort();
        assert_eq!(edge_lines, sorted);
    }
}
