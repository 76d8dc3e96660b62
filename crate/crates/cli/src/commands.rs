use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dnl_core::assets::{boxworld_program, load_asset};
use dnl_core::checkpoint::Checkpoint;
use dnl_core::deduction::Engine;
use dnl_core::envs::{state_instance, BoxWorld, BoxWorldConfig, Environment, GridWorld, GridWorldConfig};
use dnl_core::extract::{extract_rules, random_facts, verify_crisp_equivalence};
use dnl_core::learning::{train_observed, EpochRecord, LearnError, SupervisedModel};
use dnl_core::logic::{DnfUnit, INIT_RANGE};
use dnl_core::program::{enumerate_candidate_atoms, parse_program, validate_program, Program};
use dnl_core::rrl::{evaluate_policy, train_policy_observed, trailing_success, EpisodeRecord, Policy};

use crate::config::{parse_pairs, ConfigError, EnvSpec, Mode, ProgramRef, RunConfig};

const META_PREFIX: &str = "config.";
const SUPERVISED_HEADER: &str = "epoch,loss,accuracy,crispness";
const RRL_HEADER: &str = "episode,return,success,steps,loss,entropy";
/// Fact density of the random instances used to verify supervised rules.
const VERIFY_DENSITY: f64 = 0.3;

fn load_program(program: &ProgramRef, env: Option<&EnvSpec>) -> Result<Program> {
    match program {
        ProgramRef::Asset(name) => match env {
            Some(EnvSpec::BoxWorld { boxes, .. }) if name.starts_with("boxworld") => {
                Ok(boxworld_program(name, *boxes)?)
            }
            _ => Ok(load_asset(name)?),
        },
        ProgramRef::Path(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_program(&text).with_context(|| format!("in {}", path.display()))
        }
    }
}

fn make_env(spec: &EnvSpec, max_steps: usize) -> Result<Box<dyn Environment>> {
    Ok(match *spec {
        EnvSpec::BoxWorld { boxes, goal } => Box::new(BoxWorld::new(BoxWorldConfig { boxes, max_steps, goal })?),
        EnvSpec::GridWorld {
            chain_length,
            branch,
            progress_reward,
        } => Box::new(GridWorld::new(GridWorldConfig {
            chain_length,
            branch,
            max_steps,
            progress_reward,
        })?),
    })
}

fn env_spec(cfg: &RunConfig) -> Result<&EnvSpec> {
    cfg.env.as_ref().ok_or_else(|| ConfigError("rrl mode needs an environment".into()).into())
}

fn checkpoint(engine: &Engine, units: &[DnfUnit], cfg: &RunConfig, step: usize) -> Checkpoint {
    let mut meta: Vec<(String, String)> =
        cfg.to_pairs().into_iter().map(|(k, v)| (format!("{META_PREFIX}{k}"), v)).collect();
    meta.push(("step".into(), step.to_string()));
    Checkpoint::from_units(engine, units, meta)
}

fn config_of(ck: &Checkpoint) -> Result<RunConfig> {
    let pairs: Vec<(String, String)> = ck
        .meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(META_PREFIX).map(|k| (k.to_string(), v.clone())))
        .collect();
    if pairs.is_empty() {
        return Err(ConfigError("checkpoint carries no run configuration".into()).into());
    }
    Ok(RunConfig::from_pairs(&pairs, Path::new("."))?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn train(config: &Path, seed: Option<u64>, episodes: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let mut pairs = parse_pairs(&text)?;
    if let Some(n) = episodes {
        let key = if pairs.iter().any(|(k, v)| k == "mode" && v == "rrl") { "episodes" } else { "epochs" };
        pairs.retain(|(k, _)| k != key);
        pairs.push((key.to_string(), n.to_string()));
    }
    let mut cfg = RunConfig::from_pairs(&pairs, base)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let resolved: String = cfg.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    write_file(&cfg.output.join("config.txt"), &resolved)?;
    match cfg.mode {
        Mode::Supervised => train_supervised(&cfg, out),
        Mode::Rrl => train_rrl(&cfg, out),
    }
}

fn train_supervised(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let program = load_program(&cfg.program, None)?;
    if program.positives.is_empty() && program.negatives.is_empty() {
        return Err(LearnError::NoExamples.into());
    }
    let sc = &cfg.supervised;
    let model = SupervisedModel::new(program, sc.t_max)?;
    let engine = model.engine();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let params = engine.params_from_units(&engine.random_units(INIT_RANGE, &mut rng)?)?;

    let mut csv = format!("{SUPERVISED_HEADER}\n");
    let mut failure = None;
    let mut observe = |r: &EpochRecord, params: &[f64]| {
        let _ = writeln!(csv, "{},{},{},{}", r.epoch, r.loss, r.accuracy, r.crispness);
        let done = r.epoch + 1;
        if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && failure.is_none() {
            let res = engine
                .units_from_params(params)
                .map_err(anyhow::Error::from)
                .and_then(|u| Ok(checkpoint(engine, &u, cfg, done).save(&cfg.output.join(format!("checkpoint-{done}.ckpt")))?));
            failure = res.err();
        }
    };
    let trained = train_observed(&model, params, sc, &mut observe);
    write_file(&cfg.output.join("metrics.csv"), &csv)?;
    let trained = trained?;
    if let Some(e) = failure {
        return Err(e);
    }
    checkpoint(engine, &trained.units, cfg, sc.epochs).save(&cfg.output.join("checkpoint.ckpt"))?;
    let last = trained.history.last().expect("at least one epoch");
    writeln!(
        out,
        "epochs {} loss {:.6} accuracy {} crispness {:.4}",
        trained.history.len(),
        last.loss,
        trained.accuracy,
        last.crispness
    )?;
    writeln!(out, "wrote {}", cfg.output.display())?;
    Ok(())
}

fn train_rrl(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let spec = env_spec(cfg)?;
    let program = load_program(&cfg.program, Some(spec))?;
    let pc = &cfg.policy;
    let mut env = make_env(spec, pc.max_steps)?;
    let policy = Policy::new(program, &*env, pc.target.as_deref(), pc.t_max)?;
    let engine = policy.engine();
    let mut rng = ChaCha8Rng::seed_from_u64(pc.seed);
    let params = policy.random_params(&mut rng)?;

    let mut csv = format!("{RRL_HEADER}\n");
    let mut failure = None;
    let mut observe = |r: &EpisodeRecord, params: &[f64]| {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.episode, r.ret, r.success as u8, r.steps, r.loss, r.entropy
        );
        let done = r.episode + 1;
        if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && failure.is_none() {
            let res = engine
                .units_from_params(params)
                .map_err(anyhow::Error::from)
                .and_then(|u| Ok(checkpoint(engine, &u, cfg, done).save(&cfg.output.join(format!("checkpoint-{done}.ckpt")))?));
            failure = res.err();
        }
    };
    let outcome = train_policy_observed(&policy, params, &mut *env, pc, &mut rng, &mut observe);
    write_file(&cfg.output.join("metrics.csv"), &csv)?;
    let outcome = outcome?;
    if let Some(e) = failure {
        return Err(e);
    }
    let ran = outcome.history.len();
    checkpoint(engine, &outcome.units, cfg, ran).save(&cfg.output.join("checkpoint.ckpt"))?;
    let window = ran.min(100);
    let trailing = trailing_success(&outcome.history, window).last().copied().unwrap_or(0.0);
    write!(out, "episodes {ran} trailing success ({window}) {trailing:.3}")?;
    match outcome.stopped_at {
        Some(n) => writeln!(out, " stopped at {n}")?,
        None => writeln!(out)?,
    }
    writeln!(out, "wrote {}", cfg.output.display())?;
    Ok(())
}

pub fn eval(path: &Path, episodes: usize, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let cfg = config_of(&ck)?;
    match cfg.mode {
        Mode::Supervised => {
            let sc = &cfg.supervised;
            let model = SupervisedModel::new(load_program(&cfg.program, None)?, sc.t_max)?;
            let units = ck.units_for(model.engine())?;
            let params = model.engine().params_from_units(&units)?;
            let mut ws = model.workspace();
            let loss = model.loss(&params, sc.lambda, sc.constraint_weight, &mut ws)?;
            writeln!(
                out,
                "examples {} loss {loss:.6} accuracy {}",
                model.example_count(),
                model.accuracy(&ws)
            )?;
        }
        Mode::Rrl => {
            let spec = env_spec(&cfg)?;
            let pc = &cfg.policy;
            let mut env = make_env(spec, pc.max_steps)?;
            let policy = Policy::new(load_program(&cfg.program, Some(spec))?, &*env, pc.target.as_deref(), pc.t_max)?;
            let units = ck.units_for(policy.engine())?;
            let params = policy.engine().params_from_units(&units)?;
            let s = evaluate_policy(
                &policy,
                &params,
                &mut *env,
                episodes,
                pc.c,
                pc.max_steps,
                seed.unwrap_or(pc.seed),
                |_, _| {},
            )?;
            writeln!(
                out,
                "episodes {} mean_return {:.4} success_rate {:.4} mean_steps {:.2}",
                s.episodes, s.mean_return, s.success_rate, s.mean_steps
            )?;
        }
    }
    Ok(())
}

pub fn extract(path: &Path, threshold: f64, trials: usize, out: &mut dyn Write) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ConfigError(format!("threshold must lie in [0, 1], got {threshold}")).into());
    }
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let cfg = config_of(&ck)?;
    let seed = cfg.seed();
    let (engine, mut env) = match cfg.mode {
        Mode::Supervised => (Engine::new(load_program(&cfg.program, None)?, cfg.supervised.t_max)?, None),
        Mode::Rrl => {
            let spec = env_spec(&cfg)?;
            let pc = &cfg.policy;
            let env = make_env(spec, pc.max_steps)?;
            let policy = Policy::new(load_program(&cfg.program, Some(spec))?, &*env, pc.target.as_deref(), pc.t_max)?;
            (policy.engine().clone(), Some(env))
        }
    };
    let units = ck.units_for(&engine)?;
    let program = engine.program().clone();
    let rules = extract_rules(&program.targets, &engine.plan().candidates, &units, threshold);
    for r in &rules {
        writeln!(out, "% {} ({} clauses, crispness {:.4})", r.target, r.clauses.len(), r.crispness)?;
        write!(out, "{r}")?;
    }
    let report = match env.as_mut() {
        None => {
            let mut sampler = |rng: &mut ChaCha8Rng| random_facts(&program, VERIFY_DENSITY, rng);
            verify_crisp_equivalence(&engine, &units, &rules, threshold, trials, seed, &mut sampler)?
        }
        Some(env) => {
            let mut sampler = |rng: &mut ChaCha8Rng| {
                env.reset(rng).expect("environment was constructed from a valid config");
                state_instance(&program, &**env).expect("schema checked by the policy")
            };
            verify_crisp_equivalence(&engine, &units, &rules, threshold, trials, seed, &mut sampler)?
        }
    };
    writeln!(out, "verification: {report}")?;
    Ok(())
}

pub fn check(program: &str, out: &mut dyn Write) -> Result<()> {
    let p = load_program(&ProgramRef::parse(program, Path::new(".")), None)?;
    let report = validate_program(&p);
    for w in report.warnings() {
        writeln!(out, "{w}")?;
    }
    writeln!(
        out,
        "ok: {} types, {} predicates, {} facts, {} clauses, {} targets",
        p.types.len(),
        p.predicates.len(),
        p.facts.len(),
        p.aux_clauses.len(),
        p.targets.len()
    )?;
    for t in &p.targets {
        let set = enumerate_candidate_atoms(&p, &t.predicate)?;
        writeln!(
            out,
            "target {}: {} rules, {} candidate literals, {} groundings",
            t.predicate,
            t.rules,
            set.len(),
            p.grounding_count(&t.predicate).unwrap_or(0)
        )?;
    }
    Ok(())
}
