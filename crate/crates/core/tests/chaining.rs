//! Forward chaining with crisp weights against a shortest-path oracle.

use dnl_core::assets::asset_text;
use dnl_core::checkpoint::Checkpoint;
use dnl_core::deduction::Engine;
use dnl_core::interpret::{evaluate_crisp, Schedule};
use dnl_core::program::{parse_program, Program};
use petgraph::algo::floyd_warshall;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph_program(n: usize, edges: &[(usize, usize)]) -> String {
    let nodes: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut text = format!(
        "type node {{ {} }}\npred edge/2 (node,node) extensional\npred cnt/2 (node,node) target\n",
        nodes.join(" ")
    );
    for &(a, b) in edges {
        text += &format!("fact edge(n{a},n{b}).\n");
    }
    text + "target cnt(X:node, Y:node) vars(Z:node) rules(2)\n"
}

/// cnt(x,y) holds iff some path of at least one edge leads from x to y.
fn closure_oracle(n: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let g = DiGraph::<(), ()>::from_edges(edges.iter().map(|&(a, b)| (a as u32, b as u32)));
    let mut g = g;
    while g.node_count() < n {
        g.add_node(());
    }
    let dist = floyd_warshall(&g, |_| 1i32).unwrap();
    let reach = |a: usize, b: usize| dist.get(&(NodeIndex::new(a), NodeIndex::new(b))).is_some_and(|&d| d < i32::MAX);
    let mut out = vec![false; n * n];
    for &(x, z) in edges {
        for y in 0..n {
            if reach(z, y) {
                out[x * n + y] = true;
            }
        }
    }
    out
}

fn closure_params(engine: &Engine) -> Vec<f64> {
    let labels = engine.plan().candidates[0].labels();
    let idx = |s: &str| labels.iter().position(|l| l == s).unwrap();
    let units = engine
        .crisp_units(&[vec![vec![idx("edge(X,Y)")], vec![idx("edge(X,Z)"), idx("cnt(Z,Y)")]]])
        .unwrap();
    engine.params_from_units(&units).unwrap()
}

fn chained_cnt(engine: &Engine, params: &[f64]) -> Vec<f64> {
    let mut ws = engine.workspace();
    engine.chain(params, &engine.initial_store(), &mut ws).unwrap();
    engine.target_values(&ws, 0).to_vec()
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let density = rng.random_range(0.1..0.5);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if rng.random_bool(density) {
                edges.push((a, b));
            }
        }
    }
    edges
}

#[test]
fn example_graph_closure_is_exact() {
    let engine = Engine::new(parse_program(asset_text("graph_cnt").unwrap()).unwrap(), Some(4)).unwrap();
    let got = chained_cnt(&engine, &closure_params(&engine));
    let edges = [(0, 1), (1, 2), (2, 3), (3, 1)];
    let want = closure_oracle(4, &edges);
    assert_eq!(got.len(), 16);
    for (k, (&v, &w)) in got.iter().zip(&want).enumerate() {
        assert_eq!(v, if w { 1.0 } else { 0.0 }, "grounding {k}");
    }
}

#[test]
fn random_graphs_match_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..50 {
        let n = rng.random_range(2..=6);
        let edges = random_edges(&mut rng, n);
        let program: Program = parse_program(&graph_program(n, &edges)).unwrap();
        // a path visits at most n - 1 edges and each sweep extends paths by one
        let engine = Engine::new(program, Some(4.max(n - 1))).unwrap();
        let got = chained_cnt(&engine, &closure_params(&engine));
        let want = closure_oracle(n, &edges);
        for (k, (&v, &w)) in got.iter().zip(&want).enumerate() {
            assert_eq!(v, if w { 1.0 } else { 0.0 }, "trial {trial}, n={n}, edges {edges:?}, grounding {k}");
        }
    }
}

#[test]
fn too_few_sweeps_miss_long_paths() {
    // a simple chain of six nodes needs five sweeps to connect its ends
    let edges: Vec<_> = (0..5).map(|i| (i, i + 1)).collect();
    let engine = Engine::new(parse_program(&graph_program(6, &edges)).unwrap(), Some(4)).unwrap();
    let got = chained_cnt(&engine, &closure_params(&engine));
    assert_eq!(got[5], 0.0);
    assert_eq!(got[4], 1.0);
}

#[test]
fn symbolic_interpreter_agrees_at_the_fixpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let n = rng.random_range(2..=6);
        let edges = random_edges(&mut rng, n);
        let program = parse_program(&graph_program(n, &edges)).unwrap();
        let engine = Engine::new(program.clone(), Some(n)).unwrap();
        let rules = parse_program(&(graph_program(n, &[]).replace(" target\n", " auxiliary\n").replace(
            "target cnt(X:node, Y:node) vars(Z:node) rules(2)\n",
            "aux cnt(X,Y) :- edge(X,Y).\naux cnt(X,Y) :- edge(X,Z), cnt(Z,Y).\n",
        )))
        .unwrap()
        .aux_clauses;
        let store = evaluate_crisp(&program, engine.plan(), &rules, Schedule::Fixpoint).unwrap();
        let got: Vec<bool> = engine.slots("cnt").unwrap().map(|i| store[i]).collect();
        assert_eq!(got, closure_oracle(n, &edges));
    }
}

#[test]
fn hand_written_checkpoint_reproduces_the_closure() {
    let engine = Engine::new(parse_program(asset_text("graph_cnt").unwrap()).unwrap(), Some(4)).unwrap();
    let labels = engine.plan().candidates[0].labels();
    let row = |on: &[&str]| -> String {
        labels
            .iter()
            .map(|l| if on.contains(&l.as_str()) { "inf" } else { "-inf" })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let text = format!(
        "dnl-ckpt v1\n\ntarget cnt\nrules 2\nfingerprint {}\n{}\n{}\ninf inf\n",
        engine.plan().candidates[0].fingerprint(),
        row(&["edge(X,Y)"]),
        row(&["edge(X,Z)", "cnt(Z,Y)"]),
    );
    let units = Checkpoint::parse(&text).unwrap().units_for(&engine).unwrap();
    let got = chained_cnt(&engine, &engine.params_from_units(&units).unwrap());
    let want = closure_oracle(4, &[(0, 1), (1, 2), (2, 3), (3, 1)]);
    assert_eq!(got, want.iter().map(|&w| if w { 1.0 } else { 0.0 }).collect::<Vec<_>>());
}
