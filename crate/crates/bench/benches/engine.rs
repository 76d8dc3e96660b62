use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dnl_core::assets::load_asset;
use dnl_core::deduction::Engine;
use dnl_core::envs::{BoxWorld, BoxWorldConfig, Environment, GridWorld, GridWorldConfig};
use dnl_core::learning::SupervisedModel;
use dnl_core::rrl::Policy;

fn chain(c: &mut Criterion) {
    let engine = Engine::new(load_asset("graph_cnt").unwrap(), Some(4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let units = engine.random_units((-2.5, -1.5), &mut rng).unwrap();
    let params = engine.params_from_units(&units).unwrap();
    let store = engine.initial_store();
    let mut ws = engine.workspace();
    c.bench_function("chain/graph_cnt t_max 4", |b| {
        b.iter(|| engine.chain(&params, &store, &mut ws).unwrap())
    });
}

fn supervised_gradient(c: &mut Criterion) {
    let model = SupervisedModel::new(load_asset("graph_cnt").unwrap(), Some(4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let engine = model.engine();
    let params = engine.params_from_units(&engine.random_units((-2.5, -1.5), &mut rng).unwrap()).unwrap();
    let mut ws = model.workspace();
    c.bench_function("loss_and_grad/graph_cnt", |b| {
        b.iter(|| model.loss_and_grad(&params, 0.0, 1.0, &mut ws).unwrap())
    });
}

fn policy_observe(c: &mut Criterion) {
    let mut group = c.benchmark_group("policy_observe");
    let envs: Vec<(&str, Box<dyn Environment>)> = vec![
        ("boxworld_rrl3", Box::new(BoxWorld::new(BoxWorldConfig::default()).unwrap())),
        ("gridworld", Box::new(GridWorld::new(GridWorldConfig::default()).unwrap())),
    ];
    for (asset, mut env) in envs {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng).unwrap();
        let policy = Policy::new(load_asset(asset).unwrap(), env.as_ref(), None, None).unwrap();
        let params = policy.random_params(&mut rng).unwrap();
        let mut ws = policy.engine().workspace();
        group.bench_function(asset, |b| {
            b.iter_batched_ref(
                Vec::new,
                |store| policy.observe(env.as_ref(), &params, store, &mut ws).map(|v| v.len()).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, chain, supervised_gradient, policy_observe);
criterion_main!(benches);
