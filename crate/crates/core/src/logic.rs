//! Membership-gated fuzzy conjunction, disjunction and DNF units.

use rand::Rng;
use thiserror::Error;

use crate::tape::sigmoid;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("length mismatch: {inputs} inputs but {memberships} memberships")]
    LengthMismatch { inputs: usize, memberships: usize },
    #[error("a DNF unit needs at least one rule and one atom (got {rules} x {atoms})")]
    EmptyUnit { rules: usize, atoms: usize },
    #[error("weight vector has {got} entries, expected {expected}")]
    WeightCount { expected: usize, got: usize },
}

/// `prod_i (1 - m_i (1 - x_i))`.
pub fn conj_forward(x: &[f64], m: &[f64]) -> Result<f64, LogicError> {
    check_len(x, m)?;
    Ok(x.iter().zip(m).map(|(x, m)| 1.0 - m * (1.0 - x)).product())
}

/// `1 - prod_i (1 - x_i m_i)`.
pub fn disj_forward(x: &[f64], m: &[f64]) -> Result<f64, LogicError> {
    check_len(x, m)?;
    Ok(1.0 - x.iter().zip(m).map(|(x, m)| 1.0 - x * m).product::<f64>())
}

fn check_len(x: &[f64], m: &[f64]) -> Result<(), LogicError> {
    if x.len() != m.len() {
        return Err(LogicError::LengthMismatch {
            inputs: x.len(),
            memberships: m.len(),
        });
    }
    Ok(())
}

/// Range of the uniform distribution raw membership weights start from.
pub const INIT_RANGE: (f64, f64) = (-2.5, -1.5);

/// One DNF layer: `rules` conjunctions over `atoms` literals feeding a
/// single disjunction. Weights are raw; memberships are their sigmoids.
///
/// Columns marked `forced` have their conjunction membership pinned to 1 in
/// every rule regardless of the stored weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DnfUnit {
    rules: usize,
    atoms: usize,
    conj: Vec<f64>,
    disj: Vec<f64>,
    forced: Vec<bool>,
}

/// Inclusion masks produced by [`DnfUnit::threshold`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMasks {
    /// `include[j][i]`: literal `i` appears in rule `j`.
    pub include: Vec<Vec<bool>>,
    /// Rules whose disjunction membership reaches the threshold.
    pub active: Vec<bool>,
}

impl DnfUnit {
    /// All weights zero (memberships 0.5).
    pub fn zeros(rules: usize, atoms: usize) -> Result<Self, LogicError> {
        if rules == 0 || atoms == 0 {
            return Err(LogicError::EmptyUnit { rules, atoms });
        }
        Ok(Self {
            rules,
            atoms,
            conj: vec![0.0; rules * atoms],
            disj: vec![0.0; rules],
            forced: vec![false; atoms],
        })
    }

    /// Weights drawn uniformly from `range`.
    pub fn random<R: Rng>(rules: usize, atoms: usize, range: (f64, f64), rng: &mut R) -> Result<Self, LogicError> {
        let mut unit = Self::zeros(rules, atoms)?;
        for w in unit.conj.iter_mut().chain(unit.disj.iter_mut()) {
            *w = rng.random_range(range.0..range.1);
        }
        Ok(unit)
    }

    /// Builds a unit from raw weights laid out as `conj` (rules x atoms,
    /// row-major) followed by `disj` (rules).
    pub fn from_weights(rules: usize, atoms: usize, weights: &[f64]) -> Result<Self, LogicError> {
        let mut unit = Self::zeros(rules, atoms)?;
        unit.set_weights(weights)?;
        Ok(unit)
    }

    pub fn rules(&self) -> usize {
        self.rules
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    /// Total number of raw weights.
    pub fn weight_count(&self) -> usize {
        self.rules * (self.atoms + 1)
    }

    pub fn conj_weights(&self) -> &[f64] {
        &self.conj
    }

    pub fn disj_weights(&self) -> &[f64] {
        &self.disj
    }

    pub fn forced(&self) -> &[bool] {
        &self.forced
    }

    pub fn set_forced(&mut self, forced: Vec<bool>) -> Result<(), LogicError> {
        if forced.len() != self.atoms {
            return Err(LogicError::WeightCount {
                expected: self.atoms,
                got: forced.len(),
            });
        }
        self.forced = forced;
        Ok(())
    }

    /// Raw weights in checkpoint order.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = self.conj.clone();
        w.extend_from_slice(&self.disj);
        w
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> Result<(), LogicError> {
        if weights.len() != self.weight_count() {
            return Err(LogicError::WeightCount {
                expected: self.weight_count(),
                got: weights.len(),
            });
        }
        let (c, d) = weights.split_at(self.rules * self.atoms);
        self.conj.copy_from_slice(c);
        self.disj.copy_from_slice(d);
        Ok(())
    }

    /// Conjunction memberships, rules x atoms, with forced columns at 1.
    pub fn conj_memberships(&self) -> Vec<f64> {
        self.conj
            .iter()
            .enumerate()
            .map(|(k, &w)| if self.forced[k % self.atoms] { 1.0 } else { sigmoid(w) })
            .collect()
    }

    pub fn disj_memberships(&self) -> Vec<f64> {
        self.disj.iter().map(|&w| sigmoid(w)).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, LogicError> {
        if x.len() != self.atoms {
            return Err(LogicError::LengthMismatch {
                inputs: x.len(),
                memberships: self.atoms,
            });
        }
        let m = self.conj_memberships();
        let r: Vec<f64> = m
            .chunks(self.atoms)
            .map(|row| conj_forward(x, row))
            .collect::<Result<_, _>>()?;
        disj_forward(&r, &self.disj_memberships())
    }

    /// `sum m (1 - m)` over every membership of both layers.
    pub fn interpretability_penalty(&self) -> f64 {
        self.conj_memberships()
            .into_iter()
            .chain(self.disj_memberships())
            .map(|m| m * (1.0 - m))
            .sum()
    }

    /// Mean distance of the memberships from the nearest of {0, 1}.
    pub fn crispness(&self) -> f64 {
        let all: Vec<f64> = self.conj_memberships().into_iter().chain(self.disj_memberships()).collect();
        all.iter().map(|m| m.min(1.0 - m)).sum::<f64>() / all.len() as f64
    }

    pub fn threshold(&self, threshold: f64) -> RuleMasks {
        let m = self.conj_memberships();
        RuleMasks {
            include: m
                .chunks(self.atoms)
                .map(|row| row.iter().map(|&v| v >= threshold).collect())
                .collect(),
            active: self.disj_memberships().iter().map(|&v| v >= threshold).collect(),
        }
    }

    /// Switches rule `j` off by sending its disjunction weight to `-inf`.
    pub fn disable_rule(&mut self, j: usize) {
        self.disj[j] = f64::NEG_INFINITY;
    }

    /// Sets every weight to `+inf` or `-inf` so memberships are exactly
    /// 1 or 0. `include[j]` lists the literals of rule `j`; rules beyond
    /// `include.len()` are switched off.
    pub fn set_crisp(&mut self, include: &[Vec<usize>]) {
        self.conj.iter_mut().for_each(|w| *w = f64::NEG_INFINITY);
        self.disj.iter_mut().for_each(|w| *w = f64::NEG_INFINITY);
        for (j, lits) in include.iter().enumerate().take(self.rules) {
            self.disj[j] = f64::INFINITY;
            for &i in lits {
                self.conj[j * self.atoms + i] = f64::INFINITY;
            }
        }
    }
}
