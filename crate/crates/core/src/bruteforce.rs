//! Reference implementations and random-program generation for the test
//! suites. Everything here recomputes results by exhaustive path
//! enumeration over the CFG, independently of the fixpoint algorithms in
//! [`crate::graphs`], so the two routes can be compared exactly.
//!
//! Path enumeration is exponential and intended for methods of at most a
//! dozen statements.

use crate::graphs::{Cfg, CfgNode};
use crate::mir::{parse_program, validate_program, Method, Program};
use rand::Rng;
use std::collections::BTreeSet;

/// Reaching definitions by enumerating acyclic CFG paths: `(v, d)` reaches
/// the entry of `s` when some simple path from `d` to `s` redefines `v` at
/// no intermediate statement. Removing a cycle from a witnessing path never
/// introduces a redefinition, so simple paths suffice.
pub fn reaching_defs_by_paths(m: &Method, cfg: &Cfg) -> Vec<BTreeSet<(String, usize)>> {
    let n = m.statements.len();
    let mut result: Vec<BTreeSet<(String, usize)>> = vec![BTreeSet::new(); n];

    for d in 0..n {
        for var in m.statements[d].defs.clone() {
            // DFS over simple paths starting at each successor of d.
            let mut on_path: Vec<usize> = Vec::new();
            let starts: Vec<usize> = stmt_successors(cfg, d);
            for s in starts {
                walk_def(m, cfg, &var, d, s, &mut on_path, &mut result);
            }
        }
    }
    result
}

fn stmt_successors(cfg: &Cfg, i: usize) -> Vec<usize> {
    cfg.successors(CfgNode::Stmt(i))
        .into_iter()
        .filter_map(|s| match s {
            CfgNode::Stmt(j) => Some(j),
            _ => None,
        })
        .collect()
}

fn walk_def(
    m: &Method,
    cfg: &Cfg,
    var: &str,
    def: usize,
    node: usize,
    on_path: &mut Vec<usize>,
    result: &mut Vec<BTreeSet<(String, usize)>>,
) {
    if on_path.contains(&node) {
        return;
    }
    // Arriving at `node` means (var, def) reaches its entry.
    result[node].insert((var.to_string(), def));
    // The path may only continue through `node` if it does not redefine var.
    if m.statements[node].defs.contains(var) {
        return;
    }
    on_path.push(node);
    for next in stmt_successors(cfg, node) {
        walk_def(m, cfg, var, def, next, on_path, result);
    }
    on_path.pop();
}

/// Post-dominator sets by path enumeration: `p` post-dominates `n` exactly
/// when `p` lies on every simple path from `n` to `EXIT`.
pub fn postdominators_by_paths(m: &Method, cfg: &Cfg) -> Vec<(CfgNode, BTreeSet<CfgNode>)> {
    let _ = m;
    let mut out = Vec::new();
    for n in cfg.nodes() {
        let mut intersection: Option<BTreeSet<CfgNode>> = None;
        let mut on_path = Vec::new();
        enumerate_paths_to_exit(cfg, n, &mut on_path, &mut intersection);
        let mut set = intersection.expect("node has a path to EXIT");
        set.insert(n);
        out.push((n, set));
    }
    out
}

fn enumerate_paths_to_exit(
    cfg: &Cfg,
    node: CfgNode,
    on_path: &mut Vec<CfgNode>,
    intersection: &mut Option<BTreeSet<CfgNode>>,
) {
    if on_path.contains(&node) {
        return;
    }
    if node == CfgNode::Exit {
        let mut nodes: BTreeSet<CfgNode> = on_path.iter().copied().collect();
        nodes.insert(CfgNode::Exit);
        *intersection = Some(match intersection.take() {
            None => nodes,
            Some(acc) => acc.intersection(&nodes).copied().collect(),
        });
        return;
    }
    on_path.push(node);
    for next in cfg.successors(node) {
        enumerate_paths_to_exit(cfg, next, on_path, intersection);
    }
    on_path.pop();
}

/// Immediate post-dominator derived from enumerated sets: the strict
/// post-dominator with the largest set (the closest element of the chain).
pub fn ipdom_from_sets(sets: &[(CfgNode, BTreeSet<CfgNode>)]) -> Vec<(CfgNode, CfgNode)> {
    let lookup = |n: CfgNode| -> &BTreeSet<CfgNode> {
        &sets.iter().find(|(m, _)| *m == n).unwrap().1
    };
    sets.iter()
        .map(|(n, set)| {
            if *n == CfgNode::Exit {
                return (*n, CfgNode::Exit);
            }
            let best = set
                .iter()
                .filter(|&&p| p != *n)
                .max_by_key(|&&p| lookup(p).len())
                .copied()
                .expect("non-exit node has a strict post-dominator");
            (*n, best)
        })
        .collect()
}

/// Control dependence from first principles: edge `b -> s` when `s`
/// post-dominates some successor of `b` but not `b` itself.
pub fn control_dependence_by_paths(m: &Method, cfg: &Cfg) -> Vec<(usize, usize)> {
    let sets = postdominators_by_paths(m, cfg);
    let pdom = |p: CfgNode, n: CfgNode| -> bool {
        sets.iter().find(|(x, _)| *x == n).unwrap().1.contains(&p)
    };
    let n = m.statements.len();
    let mut edges = BTreeSet::new();
    for b in 0..n {
        for s in 0..n {
            let sn = CfgNode::Stmt(s);
            if pdom(sn, CfgNode::Stmt(b)) {
                continue;
            }
            if cfg
                .successors(CfgNode::Stmt(b))
                .into_iter()
                .any(|t| pdom(sn, t))
            {
                edges.insert((b, s));
            }
        }
    }
    edges.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Random valid methods for fuzz-style comparisons
// ---------------------------------------------------------------------------

const VARS: [&str; 5] = ["a", "b", "v", "w", "x"];

/// Generates a random valid single-method program with at most `max_stmts`
/// statements. Candidates are drawn and re-validated until one passes, so
/// the output always satisfies every program invariant.
pub fn random_valid_method(rng: &mut impl Rng, max_stmts: usize) -> Program {
    loop {
        let n = rng.random_range(1..=max_stmts);
        let text = render_candidate(rng, n);
        if let Ok(p) = parse_program(&text, "random.mir") {
            if validate_program(&p).is_empty() {
                return p;
            }
        }
    }
}

fn render_candidate(rng: &mut impl Rng, n: usize) -> String {
    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let last = i + 1 == n;
        let body = if last {
            // Bias the tail toward returns so candidates often validate.
            if rng.random_bool(0.8) {
                render_return(rng)
            } else {
                format!("goto L{};", rng.random_range(0..n))
            }
        } else {
            match rng.random_range(0..10) {
                0 => format!("if {} goto L{};", pick(rng, &VARS), rng.random_range(0..n)),
                1 => format!("goto L{};", rng.random_range(0..n)),
                2 => render_return(rng),
                3 => "nop;".to_string(),
                4 => format!(
                    "call api.Op.run({}) -> {};",
                    pick(rng, &VARS),
                    pick(rng, &VARS)
                ),
                5 => format!("{} = {} + {};", pick(rng, &VARS), pick(rng, &VARS), pick(rng, &VARS)),
                6 => format!("{} = {};", pick(rng, &VARS), pick(rng, &VARS)),
                _ => format!("{} = const {};", pick(rng, &VARS), rng.random_range(0..100)),
            }
        };
        lines.push((format!("L{i}"), body));
    }
    let mut text = String::from("method m(a, b) {\n");
    for (label, body) in lines {
        text.push_str(&format!("{label}: {body}\n"));
    }
    text.push_str("}\n");
    text
}

fn render_return(rng: &mut impl Rng) -> String {
    if rng.random_bool(0.5) {
        format!("return {};", pick(rng, &VARS))
    } else {
        "return;".to_string()
    }
}

fn pick<'a>(rng: &mut impl Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

/// Statements where each random method stays comparable by brute force.
pub fn oracle_statement_cap() -> usize {
    12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{
        build_cfg, build_control_dependence, compute_postdominators,
        compute_reaching_definitions,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oracle_matches_fixpoint_on_sample() {
        let text = "method m(c) {\nx = const \"AES\";\nk = const 42;\nif c goto L;\n\
                    x = const \"RSA\";\nL: nop;\nreturn x;\n}\n";
        let p = parse_program(text, "s").unwrap();
        let m = &p.methods[0];
        let cfg = build_cfg(m);

        let rd = compute_reaching_definitions(m, &cfg);
        assert_eq!(rd.at_entry, reaching_defs_by_paths(m, &cfg));

        let pd = compute_postdominators(m, &cfg).unwrap();
        for (n, set) in postdominators_by_paths(m, &cfg) {
            assert_eq!(pd.sets[&n], set, "pdom({n}) differs");
        }
        assert_eq!(
            build_control_dependence(m, &cfg, &pd),
            control_dependence_by_paths(m, &cfg)
        );
    }

    #[test]
    fn random_methods_are_valid_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let p = random_valid_method(&mut rng, 10);
            assert!(validate_program(&p).is_empty());
            assert!(p.methods[0].statements.len() <= 10);
        }
    }

    #[test]
    fn oracle_matches_fixpoint_on_random_methods() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let p = random_valid_method(&mut rng, 10);
            let m = &p.methods[0];
            let cfg = build_cfg(m);
            let rd = compute_reaching_definitions(m, &cfg);
            assert_eq!(rd.at_entry, reaching_defs_by_paths(m, &cfg), "{}", crate::mir::print_program(&p));
            let pd = compute_postdominators(m, &cfg).unwrap();
            for (n, set) in postdominators_by_paths(m, &cfg) {
                assert_eq!(pd.sets[&n], set);
            }
            for (n, ip) in ipdom_from_sets(&postdominators_by_paths(m, &cfg)) {
                assert_eq!(pd.ipdom[&n], ip);
            }
        }
    }

    #[test]
    fn reaching_def_through_loop_back_edge() {
        let text = "method m(c) {\nx = const 1;\nL: y = x;\nx = const 2;\nif c goto L;\nreturn y;\n}\n";
        let p = parse_program(text, "s").unwrap();
        let m = &p.methods[0];
        let cfg = build_cfg(m);
        let oracle = reaching_defs_by_paths(m, &cfg);
        // Both the initial def and the loop-carried def reach the use at 1.
        assert!(oracle[1].contains(&("x".to_string(), 0)));
        assert!(oracle[1].contains(&("x".to_string(), 2)));
        assert_eq!(compute_reaching_definitions(m, &cfg).at_entry, oracle);
    }
}
