//! Versioned text checkpoints of trained units.
//!
//! ```text
//! dnl-ckpt v1
//! meta program=asset:graph_cnt
//! target cnt
//! rules 2
//! fingerprint 3f0c...
//! <rule 0 weights>
//! <rule 1 weights>
//! <disjunction weights>
//! ```
//!
//! Weights are written with 17 significant digits; `inf` and `-inf` are
//! allowed for crisp memberships.

use std::fmt::Write;
use std::path::Path;

use thiserror::Error;

use crate::deduction::Engine;
use crate::logic::DnfUnit;

pub const HEADER: &str = "dnl-ckpt v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint header {0:?}")]
    Version(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("candidate literals of {target} changed since the checkpoint was written")]
    Fingerprint { target: String },
    #[error("checkpoint has targets {found:?}, program has {expected:?}")]
    Targets { expected: Vec<String>, found: Vec<String> },
    #[error("{target}: checkpoint has {found} rules, program expects {expected}")]
    Rules { target: String, expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form `key=value` pairs, in file order.
    pub meta: Vec<(String, String)>,
    pub targets: Vec<TargetWeights>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights {
    pub name: String,
    pub rules: usize,
    pub fingerprint: String,
    /// `rules` rows of conjunction weights.
    pub conj: Vec<Vec<f64>>,
    pub disj: Vec<f64>,
}

impl Checkpoint {
    pub fn from_units(engine: &Engine, units: &[DnfUnit], meta: Vec<(String, String)>) -> Self {
        let targets = engine
            .units()
            .iter()
            .zip(&engine.plan().candidates)
            .zip(units)
            .map(|((slot, set), u)| TargetWeights {
                name: slot.target.clone(),
                rules: u.rules(),
                fingerprint: set.fingerprint(),
                conj: u.conj_weights().chunks(u.atoms()).map(|r| r.to_vec()).collect(),
                disj: u.disj_weights().to_vec(),
            })
            .collect();
        Self { meta, targets }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k}={v}");
        }
        let row = |w: &[f64]| w.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        for t in &self.targets {
            let _ = writeln!(out, "target {}\nrules {}\nfingerprint {}", t.name, t.rules, t.fingerprint);
            for r in &t.conj {
                let _ = writeln!(out, "{}", row(r));
            }
            let _ = writeln!(out, "{}", row(&t.disj));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((_, other)) => return Err(CheckpointError::Version(other.to_string())),
            None => return Err(CheckpointError::Version(String::new())),
        }
        let bad = |line: usize, message: String| CheckpointError::Format { line, message };
        let mut meta = Vec::new();
        let mut targets = Vec::new();
        let mut lines = lines.peekable();
        while let Some((n, line)) = lines.next() {
            if let Some(kv) = line.strip_prefix("meta ") {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(n, "meta line without '='".into()))?;
                meta.push((k.to_string(), v.to_string()));
                continue;
            }
            let name = line
                .strip_prefix("target ")
                .ok_or_else(|| bad(n, format!("expected a target line, found {line:?}")))?;
            let mut field = |key: &str| -> Result<String, CheckpointError> {
                let (n, l) = lines.next().ok_or_else(|| bad(n, format!("missing {key} line")))?;
                l.strip_prefix(key)
                    .and_then(|r| r.strip_prefix(' '))
                    .map(str::to_string)
                    .ok_or_else(|| bad(n, format!("expected {key}, found {l:?}")))
            };
            let rules: usize = field("rules")?.parse().map_err(|_| bad(n, "bad rule count".into()))?;
            let fingerprint = field("fingerprint")?;
            let mut rows = Vec::new();
            for _ in 0..=rules {
                let (n, l) = lines.next().ok_or_else(|| bad(n, "missing weight row".into()))?;
                let row: Vec<f64> = l
                    .split_whitespace()
                    .map(|w| w.parse::<f64>().map_err(|_| bad(n, format!("bad weight {w:?}"))))
                    .collect::<Result<_, _>>()?;
                if row.iter().any(|w| w.is_nan()) {
                    return Err(bad(n, "NaN weight".into()));
                }
                rows.push((n, row));
            }
            let (dn, disj) = rows.pop().expect("rules + 1 rows");
            if disj.len() != rules {
                return Err(bad(dn, format!("disjunction row has {} weights, expected {rules}", disj.len())));
            }
            let width = rows.first().map_or(0, |r| r.1.len());
            if let Some((n, _)) = rows.iter().find(|r| r.1.len() != width || width == 0) {
                return Err(bad(*n, "conjunction rows must be non-empty and of equal length".into()));
            }
            targets.push(TargetWeights {
                name: name.to_string(),
                rules,
                fingerprint,
                conj: rows.into_iter().map(|r| r.1).collect(),
                disj,
            });
        }
        Ok(Self { meta, targets })
    }

    /// Units for `engine`, rejecting any drift in targets, rule counts or
    /// candidate literals.
    pub fn units_for(&self, engine: &Engine) -> Result<Vec<DnfUnit>, CheckpointError> {
        let expected: Vec<String> = engine.units().iter().map(|u| u.target.clone()).collect();
        let found: Vec<String> = self.targets.iter().map(|t| t.name.clone()).collect();
        if expected != found {
            return Err(CheckpointError::Targets { expected, found });
        }
        self.targets
            .iter()
            .zip(engine.units())
            .zip(&engine.plan().candidates)
            .map(|((t, slot), set)| {
                if t.fingerprint != set.fingerprint() || t.conj[0].len() != slot.atoms {
                    return Err(CheckpointError::Fingerprint { target: t.name.clone() });
                }
                if t.rules != slot.rules {
                    return Err(CheckpointError::Rules {
                        target: t.name.clone(),
                        expected: slot.rules,
                        found: t.rules,
                    });
                }
                let weights: Vec<f64> = t.conj.iter().flatten().chain(&t.disj).copied().collect();
                let mut u = DnfUnit::from_weights(t.rules, slot.atoms, &weights).expect("shape checked");
                u.set_forced(slot.forced.clone()).expect("shape checked");
                Ok(u)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
