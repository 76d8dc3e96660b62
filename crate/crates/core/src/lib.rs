//! Differentiable neural-logic inductive logic programming.
//!
//! Programs are written in a small Datalog-like DSL ([`program`]), compiled
//! into a static computation graph ([`deduction`]) whose learnable parts are
//! DNF units of fuzzy conjunction and disjunction neurons ([`logic`]). The
//! same engine backs supervised rule learning ([`learning`]) and relational
//! policy learning over symbolic environments ([`rrl`], [`envs`]).

pub mod assets;
pub mod checkpoint;
pub mod deduction;
pub mod envs;
pub mod extract;
pub mod interpret;
pub mod learning;
pub mod logic;
pub mod program;
pub mod rrl;
pub mod tape;

pub use assets::{asset_names, boxworld_program, load_asset, AssetError};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use deduction::{Engine, EngineError, UnitSlot};
pub use envs::{BoxWorld, BoxWorldConfig, EnvError, Environment, GoalOrder, GridWorld, GridWorldConfig};
pub use extract::{extract_rules, verify_crisp_equivalence, TargetRules, VerificationReport};
pub use interpret::{evaluate_crisp, Schedule};
pub use learning::{train_supervised, EpochRecord, LearnError, SupervisedConfig, TrainedProgram};
pub use logic::{DnfUnit, LogicError};
pub use program::{parse_program, print_program, validate_program, GroundAtom, Program, ProgramError};
pub use rrl::{evaluate_policy, train_policy, EpisodeRecord, EvalSummary, Policy, PolicyConfig, RrlError, StopRule};
pub use tape::{Graph, NodeId, TapeError, Workspace};
