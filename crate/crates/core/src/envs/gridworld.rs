use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, StateAtom, StatePredicate, StepOutcome};

/// Side length of the square grid.
pub const GRID: usize = 12;
/// Colors usable for keys and locks.
pub const KEY_COLORS: std::ops::RangeInclusive<u8> = 3..=9;

const BACKGROUND: u8 = 0;
const AGENT: u8 = 1;
const GEM: u8 = 2;
const COLORS: usize = 10;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldConfig {
    /// Locks on the path to the gem, including the gem's own lock.
    pub chain_length: usize,
    pub branch: bool,
    pub max_steps: usize,
    /// Reward for picking up a key or opening a lock. The gem always pays 1.
    pub progress_reward: f64,
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        Self {
            chain_length: 2,
            branch: false,
            max_steps: 50,
            progress_reward: 0.0,
        }
    }
}

/// Classification of a non-empty, non-agent cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Item {
    /// No horizontally adjacent item: can be picked up.
    Loose,
    /// Has an item to its right, its lock.
    Locked,
    /// Has an item to its left, its content.
    Lock,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridWorldState {
    pub cells: [[u8; GRID]; GRID],
    pub held: Option<u8>,
}

impl GridWorldState {
    pub fn empty() -> Self {
        Self {
            cells: [[BACKGROUND; GRID]; GRID],
            held: None,
        }
    }

    fn is_item(&self, r: usize, c: usize) -> bool {
        self.cells[r][c] > AGENT
    }

    pub fn item(&self, r: usize, c: usize) -> Option<Item> {
        if !self.is_item(r, c) {
            return None;
        }
        if c > 0 && self.is_item(r, c - 1) {
            Some(Item::Lock)
        } else if c + 1 < GRID && self.is_item(r, c + 1) {
            Some(Item::Locked)
        } else {
            Some(Item::Loose)
        }
    }

    pub fn agent(&self) -> Option<(usize, usize)> {
        (0..GRID * GRID).map(|i| (i / GRID, i % GRID)).find(|&(r, c)| self.cells[r][c] == AGENT)
    }

    fn move_agent(&mut self, r: usize, c: usize) {
        if let Some((ar, ac)) = self.agent() {
            self.cells[ar][ac] = BACKGROUND;
        }
        self.cells[r][c] = AGENT;
    }

    /// Selects cell `(r, c)`. Returns the progress made: `Some(true)` for
    /// the gem, `Some(false)` for a key pickup or an opened lock, `None`
    /// for a no-op.
    pub fn select(&mut self, r: usize, c: usize) -> Option<bool> {
        let color = self.cells[r][c];
        match self.item(r, c)? {
            Item::Locked => None,
            Item::Lock => {
                if self.held != Some(color) {
                    return None;
                }
                self.held = None;
                self.move_agent(r, c);
                Some(false)
            }
            Item::Loose => {
                self.move_agent(r, c);
                if color == GEM {
                    return Some(true);
                }
                self.held = Some(color);
                Some(false)
            }
        }
    }

    pub fn has_gem(&self) -> bool {
        self.cells.iter().flatten().any(|&c| c == GEM)
    }

    /// Exactly one agent, valid colors, and no three items in a row.
    pub fn is_consistent(&self) -> bool {
        self.cells.iter().flatten().filter(|&&c| c == AGENT).count() == 1
            && self.cells.iter().flatten().all(|&c| (c as usize) < COLORS)
            && (0..GRID).all(|r| (0..GRID).all(|c| !(self.is_item(r, c) && c + 2 < GRID && self.is_item(r, c + 1) && self.is_item(r, c + 2))))
    }

    pub fn from_groundings(atoms: &[StateAtom]) -> Option<Self> {
        let mut s = Self::empty();
        let mut seen = [[false; GRID]; GRID];
        for a in atoms {
            match a.predicate {
                0 => {
                    let (r, c, k) = (a.args[0], a.args[1], a.args[2]);
                    if std::mem::replace(&mut seen[r][c], true) {
                        return None;
                    }
                    s.cells[r][c] = k as u8;
                }
                _ => {
                    if s.held.replace(a.args[0] as u8).is_some() {
                        return None;
                    }
                }
            }
        }
        seen.iter().flatten().all(|&b| b).then_some(s)
    }
}

/// Keys, locks and a gem on a grid. An action names a cell, `row * 12 +
/// column`; picking a loose key takes it, picking a lock while holding its
/// color opens it and uses the key up, and picking the freed content takes
/// the new key (or the gem).
#[derive(Debug, Clone)]
pub struct GridWorld {
    cfg: GridWorldConfig,
    state: GridWorldState,
    steps: usize,
}

impl GridWorld {
    pub fn new(cfg: GridWorldConfig) -> Result<Self, EnvError> {
        if !(2..=4).contains(&cfg.chain_length) {
            return Err(EnvError::Parameter(format!(
                "chain length must be 2, 3 or 4, got {}",
                cfg.chain_length
            )));
        }
        if cfg.max_steps == 0 {
            return Err(EnvError::Parameter("max steps must be at least 1".into()));
        }
        if !(cfg.progress_reward >= 0.0) {
            return Err(EnvError::Parameter("progress reward must be non-negative".into()));
        }
        let mut state = GridWorldState::empty();
        state.cells[0][0] = AGENT;
        Ok(Self { cfg, state, steps: 0 })
    }

    pub fn config(&self) -> &GridWorldConfig {
        &self.cfg
    }

    pub fn state(&self) -> &GridWorldState {
        &self.state
    }

    pub fn set_state(&mut self, state: GridWorldState) {
        self.state = state;
        self.steps = 0;
    }

    fn generate(&self, rng: &mut ChaCha8Rng) -> Option<GridWorldState> {
        let l = self.cfg.chain_length;
        let mut colors: Vec<u8> = KEY_COLORS.collect();
        colors.shuffle(rng);
        let keys = &colors[..l];
        // (content, lock) pairs; the loose key opens the first lock.
        let mut pairs: Vec<(u8, u8)> = (0..l).map(|i| (if i + 1 < l { keys[i + 1] } else { GEM }, keys[i])).collect();
        if self.cfg.branch {
            pairs.push((colors[l], keys[rng.random_range(0..l)]));
        }
        pairs.shuffle(rng);

        let mut s = GridWorldState::empty();
        let mut taken = [[false; GRID]; GRID];
        let mut reserve = |s: &mut GridWorldState, rng: &mut ChaCha8Rng, cells: &[u8]| -> bool {
            let w = cells.len();
            for _ in 0..PLACEMENT_ATTEMPTS {
                let r = rng.random_range(0..GRID);
                let c = rng.random_range(0..=GRID - w);
                let lo = c.saturating_sub(1);
                let hi = (c + w).min(GRID - 1);
                if (lo..=hi).any(|k| taken[r][k]) {
                    continue;
                }
                for (k, &color) in cells.iter().enumerate() {
                    s.cells[r][c + k] = color;
                }
                (lo..=hi).for_each(|k| taken[r][k] = true);
                return true;
            }
            false
        };
        if !reserve(&mut s, rng, &[keys[0]]) {
            return None;
        }
        for (content, lock) in pairs {
            if !reserve(&mut s, rng, &[content, lock]) {
                return None;
            }
        }
        let free: Vec<(usize, usize)> = (0..GRID * GRID)
            .map(|i| (i / GRID, i % GRID))
            .filter(|&(r, c)| s.cells[r][c] == BACKGROUND)
            .collect();
        let &(r, c) = free.get(rng.random_range(0..free.len()))?;
        s.cells[r][c] = AGENT;
        Some(s)
    }
}

impl Environment for GridWorld {
    fn state_predicates(&self) -> Vec<StatePredicate> {
        vec![
            StatePredicate {
                name: "color",
                domains: vec![GRID, GRID, COLORS],
            },
            StatePredicate {
                name: "hasKey",
                domains: vec![COLORS],
            },
        ]
    }

    fn action_count(&self) -> usize {
        GRID * GRID
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
        self.state = self.generate(rng).ok_or(EnvError::Placement(PLACEMENT_ATTEMPTS))?;
        self.steps = 0;
        Ok(())
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        if action >= GRID * GRID {
            return Err(EnvError::ActionOutOfRange {
                action,
                count: GRID * GRID,
            });
        }
        self.steps += 1;
        let progress = self.state.select(action / GRID, action % GRID);
        let success = progress == Some(true);
        let reward = match progress {
            Some(true) => 1.0,
            Some(false) => self.cfg.progress_reward,
            None => 0.0,
        };
        Ok(StepOutcome {
            reward,
            done: success || self.steps >= self.cfg.max_steps,
            success,
        })
    }

    /// `color(r, c, k)` for every cell and `hasKey(k)` for the held key.
    fn groundings(&self) -> Vec<StateAtom> {
        let mut out: Vec<StateAtom> = (0..GRID * GRID)
            .map(|i| StateAtom {
                predicate: 0,
                args: vec![i / GRID, i % GRID, self.state.cells[i / GRID][i % GRID] as usize],
            })
            .collect();
        if let Some(k) = self.state.held {
            out.push(StateAtom {
                predicate: 1,
                args: vec![k as usize],
            });
        }
        out
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }
}
