//! Bundled programs.

use thiserror::Error;

use crate::program::{parse_program, validate_program, Fact, GroundAtom, Program, ProgramError};

const CATALOG: [(&str, &str); 6] = [
    ("graph_cnt", include_str!("../assets/graph_cnt.dnl")),
    ("boxworld_rrl1", include_str!("../assets/boxworld_rrl1.dnl")),
    ("boxworld_rrl2", include_str!("../assets/boxworld_rrl2.dnl")),
    ("boxworld_rrl3", include_str!("../assets/boxworld_rrl3.dnl")),
    ("gridworld", include_str!("../assets/gridworld.dnl")),
    ("gridworld_forced", include_str!("../assets/gridworld_forced.dnl")),
];

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("unknown asset {0:?}")]
    Unknown(String),
    #[error("box count must be between 1 and 25, got {0}")]
    BoxCount(usize),
    #[error("asset {name} is invalid: {source}")]
    Invalid {
        name: String,
        #[source]
        source: ProgramError,
    },
}

pub fn asset_names() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|(n, _)| *n)
}

/// Checked-in DSL text of an asset.
pub fn asset_text(name: &str) -> Result<&'static str, AssetError> {
    CATALOG
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| AssetError::Unknown(name.to_string()))
}

pub fn load_asset(name: &str) -> Result<Program, AssetError> {
    parse_program(asset_text(name)?).map_err(|source| AssetError::Invalid {
        name: name.to_string(),
        source,
    })
}

/// BoxWorld variant `name` rebuilt for `n` boxes: box constants `a..`, plus
/// `floor`, positions `0..=n`, and the matching extensional facts.
pub fn boxworld_program(name: &str, n: usize) -> Result<Program, AssetError> {
    if !name.starts_with("boxworld") {
        return Err(AssetError::Unknown(name.to_string()));
    }
    if !(1..=25).contains(&n) {
        return Err(AssetError::BoxCount(n));
    }
    let mut p = load_asset(name)?;
    let boxes = box_names(n);
    let positions: Vec<String> = (0..=n).map(|i| i.to_string()).collect();
    for t in &mut p.types {
        match t.name.as_str() {
            "box" => t.constants = boxes.clone(),
            "pos" => t.constants = positions.clone(),
            _ => {}
        }
    }
    p.facts = boxworld_facts(n);
    let report = validate_program(&p);
    if report.is_valid() {
        Ok(p)
    } else {
        Err(AssetError::Invalid {
            name: name.to_string(),
            source: ProgramError {
                diagnostics: report.errors().cloned().collect(),
            },
        })
    }
}

/// Box constants for `n` boxes, floor last.
pub fn box_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| ((b'a' + i as u8) as char).to_string())
        .chain(std::iter::once("floor".to_string()))
        .collect()
}

fn boxworld_facts(n: usize) -> Vec<Fact> {
    let fact = |p: &str, args: &[&str]| Fact {
        atom: GroundAtom::new(p, args),
        value: 1.0,
    };
    let num: Vec<String> = (0..=n).map(|i| i.to_string()).collect();
    let mut facts = vec![fact("isFloor", &["floor"]), fact("isBlue", &["a"]), fact("isV1", &["1"])];
    for i in 0..n {
        facts.push(fact("inc", &[&num[i], &num[i + 1]]));
    }
    for i in 0..=n {
        for j in i + 1..=n {
            facts.push(fact("lt", &[&num[i], &num[j]]));
        }
    }
    for b in box_names(n) {
        facts.push(fact("same", &[&b, &b]));
    }
    facts
}
