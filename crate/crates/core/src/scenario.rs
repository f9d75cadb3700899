//! `pCqO` / `pCqO_M` scenario names and their dataset budget presets.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::arch::{OpSet, MAX_CELLS};
use crate::data::DatasetKind;

pub const CIFAR10_BUDGET: u64 = 1_200_000;
pub const CIFAR100_BUDGET: u64 = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid scenario `{0}`: expected pCqO or pCqO_M with p in 1..=3 and q in {{2, 3, 5}}")]
pub struct ScenarioParseError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scenario {
    pub cells: usize,
    pub ops: usize,
    pub constrained: bool,
}

impl Scenario {
    pub fn new(
        cells: usize,
        ops: usize,
        constrained: bool,
    ) -> Result<Scenario, ScenarioParseError> {
        let s = Scenario {
            cells,
            ops,
            constrained,
        };
        if !(1..=MAX_CELLS).contains(&cells) || OpSet::preset(ops).is_none() {
            return Err(ScenarioParseError(s.to_string()));
        }
        Ok(s)
    }

    pub fn opset(&self) -> OpSet {
        OpSet::preset(self.ops).expect("validated on construction")
    }

    /// Parameter budget for `dataset` when constrained.
    pub fn budget_for(&self, dataset: DatasetKind) -> Option<u64> {
        self.constrained.then(|| budget_preset(dataset))
    }

    /// Every preset scenario from the evaluation grid plus the 2C5O baseline.
    pub fn presets() -> Vec<Scenario> {
        let mut out = Vec::new();
        for ops in [3, 2] {
            for cells in 1..=3 {
                for constrained in [false, true] {
                    out.push(Scenario {
                        cells,
                        ops,
                        constrained,
                    });
                }
            }
        }
        out.push(Scenario {
            cells: 2,
            ops: 5,
            constrained: false,
        });
        out
    }
}

pub fn budget_preset(dataset: DatasetKind) -> u64 {
    match dataset {
        DatasetKind::Cifar100 => CIFAR100_BUDGET,
        DatasetKind::Cifar10 | DatasetKind::Synthetic => CIFAR10_BUDGET,
    }
}

pub fn num_classes(dataset: DatasetKind) -> usize {
    match dataset {
        DatasetKind::Cifar100 => 100,
        DatasetKind::Cifar10 | DatasetKind::Synthetic => 10,
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}C{}O", self.cells, self.ops)?;
        if self.constrained {
            f.write_str("_M")?;
        }
        Ok(())
    }
}

impl FromStr for Scenario {
    type Err = ScenarioParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ScenarioParseError(s.to_string());
        let (body, constrained) = match s.strip_suffix("_M") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let b = body.as_bytes();
        if b.len() != 4 || b[1] != b'C' || b[3] != b'O' {
            return Err(err());
        }
        let digit = |c: u8| c.is_ascii_digit().then(|| (c - b'0') as usize);
        let cells = digit(b[0]).ok_or_else(err)?;
        let ops = digit(b[2]).ok_or_else(err)?;
        Scenario::new(cells, ops, constrained).map_err(|_| err())
    }
}
