//! Analytic gradients against central finite differences.

use std::sync::Arc;

use dnl_core::assets::load_asset;
use dnl_core::learning::SupervisedModel;
use dnl_core::logic::INIT_RANGE;
use dnl_core::tape::{check_gradients, CheckStatus, ConjunctionPlan, Graph, LiteralBlock, NodeId, Workspace};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A DNF unit over `atoms` parameter-valued inputs with `subs` existential
/// substitutions. Inputs come first in the parameter vector.
fn dnf_graph(rules: usize, atoms: usize, subs: usize, negated: &[bool]) -> (Graph, NodeId) {
    let mut g = Graph::new();
    let x = g.parameter(0, atoms * subs);
    let w = g.parameter(atoms * subs, rules * atoms);
    let wd = g.parameter(atoms * subs + rules * atoms, rules);
    let m = g.sigmoid(w).unwrap();
    let md = g.sigmoid(wd).unwrap();
    let plan = ConjunctionPlan {
        heads: 1,
        substitutions: subs,
        atoms,
        joint: LiteralBlock {
            columns: (0..atoms as u32).collect(),
            negated: negated.to_vec(),
            index: (0..(atoms * subs) as u32).collect(),
        },
        ..Default::default()
    };
    let conj = g.conjunction(x, Some(m), Arc::new(plan), rules).unwrap();
    let out = g.disjunction(conj, Some(md), rules).unwrap();
    (g, out)
}

fn shape() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=6, 1usize..=8, 1usize..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dnf_units_match_finite_differences(
        (rules, atoms, subs) in shape(),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let negated: Vec<bool> = (0..atoms).map(|_| rng.random_bool(0.3)).collect();
        let (g, out) = dnf_graph(rules, atoms, subs, &negated);
        let mut params: Vec<f64> = (0..atoms * subs).map(|_| rng.random_range(0.1..0.9)).collect();
        params.extend((0..rules * atoms + rules).map(|_| rng.random_range(-3.0..3.0)));
        let mut ws = Workspace::new(&g);
        let report = check_gradients(&g, out, &params, &mut ws, 1e-6, 1e-4).unwrap();
        prop_assert_eq!(report.count(CheckStatus::Exceeded), 0, "{:?}", report);
    }
}

#[test]
fn supervised_loss_gradient() {
    let model = SupervisedModel::new(load_asset("graph_cnt").unwrap(), Some(2)).unwrap();
    let engine = model.engine();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let units = engine.random_units(INIT_RANGE, &mut rng).unwrap();
    let params = engine.params_from_units(&units).unwrap();
    let mut ws = model.workspace();
    model.loss(&params, 0.1, 1.0, &mut ws).unwrap();
    let report = check_gradients(engine.graph(), model.loss_node(), &params, &mut ws, 1e-6, 1e-4).unwrap();
    let checked = report.entries.len() - report.count(CheckStatus::SkippedNonsmooth);
    assert!(checked * 2 > report.entries.len(), "{report:?}");
    assert_eq!(report.count(CheckStatus::Exceeded), 0, "{report:?}");
}
