use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, StateAtom, StatePredicate, StepOutcome};

/// Which stacks count as solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalOrder {
    /// Every box in one stack standing on box `a`.
    Any,
    /// `a` on the floor, then `b` on `a`, `c` on `b` and so on.
    Alphabetical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxWorldConfig {
    pub boxes: usize,
    pub max_steps: usize,
    pub goal: GoalOrder,
}

impl Default for BoxWorldConfig {
    fn default() -> Self {
        Self {
            boxes: 4,
            max_steps: 20,
            goal: GoalOrder::Any,
        }
    }
}

/// Box `i` sits at column `pos[i].0`, height `pos[i].1` (1 is on the floor).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoxWorldState {
    pub pos: Vec<(usize, usize)>,
}

impl BoxWorldState {
    pub fn boxes(&self) -> usize {
        self.pos.len()
    }

    /// Index of the floor in the box constants.
    pub fn floor(&self) -> usize {
        self.pos.len()
    }

    pub fn covered(&self, b: usize) -> bool {
        b < self.boxes() && {
            let (h, v) = self.pos[b];
            self.pos.iter().any(|&p| p == (h, v + 1))
        }
    }

    /// `x` rests directly on `y` (`y` may be the floor).
    pub fn on(&self, x: usize, y: usize) -> bool {
        if x >= self.boxes() {
            return false;
        }
        let (hx, vx) = self.pos[x];
        if y == self.floor() {
            return vx == 1;
        }
        let (hy, vy) = self.pos[y];
        hx == hy && vx == vy + 1
    }

    pub fn is_legal(&self, x: usize, y: usize) -> bool {
        x < self.boxes() && x != y && !self.covered(x) && !self.covered(y) && !self.on(x, y)
    }

    /// Applies `move(x, y)`; returns false and leaves the state untouched
    /// when the move is illegal.
    pub fn apply(&mut self, x: usize, y: usize) -> bool {
        if !self.is_legal(x, y) {
            return false;
        }
        self.pos[x] = if y == self.floor() {
            let free = (0..=self.boxes())
                .find(|&h| self.pos.iter().all(|p| p.0 != h))
                .expect("n boxes never fill n + 1 columns");
            (free, 1)
        } else {
            let (h, v) = self.pos[y];
            (h, v + 1)
        };
        true
    }

    pub fn is_goal(&self, order: GoalOrder) -> bool {
        let (ha, va) = self.pos[0];
        if va != 1 {
            return false;
        }
        match order {
            GoalOrder::Any => self.pos.iter().all(|p| p.0 == ha),
            GoalOrder::Alphabetical => self.pos.iter().enumerate().all(|(i, &p)| p == (ha, i + 1)),
        }
    }

    /// Support and uniqueness.
    pub fn is_consistent(&self) -> bool {
        let n = self.boxes();
        self.pos.iter().enumerate().all(|(i, &(h, v))| {
            h <= n
                && (1..=n).contains(&v)
                && self.pos.iter().skip(i + 1).all(|&q| q != (h, v))
                && (v == 1 || self.pos.contains(&(h, v - 1)))
        })
    }

    /// Rebuilds a state from its `posH` and `posV` groundings.
    pub fn from_groundings(n: usize, atoms: &[StateAtom]) -> Option<Self> {
        let mut h = vec![None; n];
        let mut v = vec![None; n];
        for a in atoms {
            let (b, c) = (a.args[0], a.args[1]);
            if b == n {
                continue;
            }
            let slot = if a.predicate == 0 { &mut h[b] } else { &mut v[b] };
            if slot.replace(c).is_some() {
                return None;
            }
        }
        let pos = h.into_iter().zip(v).map(|(h, v)| Some((h?, v?))).collect::<Option<_>>()?;
        Some(Self { pos })
    }
}

/// Stack the boxes on the blue box `a`. Actions are `move(x, y)` over the
/// `n + 1` box constants (floor last), indexed `x * (n + 1) + y`.
#[derive(Debug, Clone)]
pub struct BoxWorld {
    cfg: BoxWorldConfig,
    state: BoxWorldState,
    steps: usize,
}

impl BoxWorld {
    pub fn new(cfg: BoxWorldConfig) -> Result<Self, EnvError> {
        if !(3..=5).contains(&cfg.boxes) {
            return Err(EnvError::Parameter(format!("box count must be 3, 4 or 5, got {}", cfg.boxes)));
        }
        if cfg.max_steps == 0 {
            return Err(EnvError::Parameter("max steps must be at least 1".into()));
        }
        let state = BoxWorldState {
            pos: (0..cfg.boxes).map(|i| (i, 1)).collect(),
        };
        Ok(Self { cfg, state, steps: 0 })
    }

    pub fn config(&self) -> &BoxWorldConfig {
        &self.cfg
    }

    pub fn state(&self) -> &BoxWorldState {
        &self.state
    }

    pub fn set_state(&mut self, state: BoxWorldState) {
        self.state = state;
        self.steps = 0;
    }

    pub fn decode_action(&self, action: usize) -> (usize, usize) {
        (action / (self.cfg.boxes + 1), action % (self.cfg.boxes + 1))
    }

    pub fn encode_action(&self, x: usize, y: usize) -> usize {
        x * (self.cfg.boxes + 1) + y
    }
}

impl Environment for BoxWorld {
    fn state_predicates(&self) -> Vec<StatePredicate> {
        let d = vec![self.cfg.boxes + 1, self.cfg.boxes + 1];
        vec![
            StatePredicate {
                name: "posH",
                domains: d.clone(),
            },
            StatePredicate { name: "posV", domains: d },
        ]
    }

    fn action_count(&self) -> usize {
        (self.cfg.boxes + 1) * (self.cfg.boxes + 1)
    }

    /// Every box on the floor in distinct random columns.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
        let n = self.cfg.boxes;
        let cols = sample(rng, n + 1, n);
        self.state = BoxWorldState {
            pos: cols.iter().map(|h| (h, 1)).collect(),
        };
        self.steps = 0;
        Ok(())
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        if action >= self.action_count() {
            return Err(EnvError::ActionOutOfRange {
                action,
                count: self.action_count(),
            });
        }
        let (x, y) = self.decode_action(action);
        self.state.apply(x, y);
        self.steps += 1;
        let success = self.state.is_goal(self.cfg.goal);
        Ok(StepOutcome {
            reward: if success { 1.0 } else { 0.0 },
            done: success || self.steps >= self.cfg.max_steps,
            success,
        })
    }

    /// `posH`/`posV` one-hot per box; the floor spans every column at
    /// height 0.
    fn groundings(&self) -> Vec<StateAtom> {
        let n = self.cfg.boxes;
        let mut out = Vec::with_capacity(2 * n + n + 2);
        for (b, &(h, v)) in self.state.pos.iter().enumerate() {
            out.push(StateAtom {
                predicate: 0,
                args: vec![b, h],
            });
            out.push(StateAtom {
                predicate: 1,
                args: vec![b, v],
            });
        }
        for h in 0..=n {
            out.push(StateAtom {
                predicate: 0,
                args: vec![n, h],
            });
        }
        out.push(StateAtom {
            predicate: 1,
            args: vec![n, 0],
        });
        out
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }
}
