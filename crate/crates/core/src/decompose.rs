//! Classification of every line into one of four basic elements by sensor
//! presence at its endpoints.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::topology::{GridTopology, Line, NodeId};

/// Sensor placement of a line's endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LineCase {
    /// Both parent and child measured.
    Case1,
    /// Only the child measured.
    Case2,
    /// Only the parent measured.
    Case3,
    /// Neither endpoint measured.
    Case4,
}

impl LineCase {
    pub fn number(self) -> u8 {
        match self {
            LineCase::Case1 => 1,
            LineCase::Case2 => 2,
            LineCase::Case3 => 3,
            LineCase::Case4 => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<LineCase> {
        match n {
            1 => Some(LineCase::Case1),
            2 => Some(LineCase::Case2),
            3 => Some(LineCase::Case3),
            4 => Some(LineCase::Case4),
            _ => None,
        }
    }

    /// Declarative rule: the case is a function of endpoint membership only.
    pub fn from_membership(parent_measured: bool, child_measured: bool) -> LineCase {
        match (parent_measured, child_measured) {
            (true, true) => LineCase::Case1,
            (false, true) => LineCase::Case2,
            (true, false) => LineCase::Case3,
            (false, false) => LineCase::Case4,
        }
    }
}

impl fmt::Display for LineCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineClassification {
    pub line: Line,
    pub case: LineCase,
}

pub fn classify(t: &GridTopology, line: &Line) -> LineCase {
    LineCase::from_membership(t.is_measured(&line.parent), t.is_measured(&line.child))
}

/// Walks measured nodes bottom-up, then unmeasured nodes bottom-up, and
/// classifies each node's parent line the first time it is reached. The
/// root has no parent line and is skipped.
pub fn decompose(t: &GridTopology) -> Vec<LineClassification> {
    let measured = t.bottom_up_order(&t.measured_nodes()).expect("nodes of topology");
    let unmeasured = t.bottom_up_order(&t.unmeasured_nodes()).expect("nodes of topology");
    decompose_in_order(t, &measured, &unmeasured)
}

/// Same traversal with caller-supplied orders for the two working sets.
pub fn decompose_in_order(t: &GridTopology, measured: &[NodeId], unmeasured: &[NodeId]) -> Vec<LineClassification> {
    let mut remaining: HashSet<&str> = t.lines().iter().map(|l| l.line_id.as_str()).collect();
    let mut out = Vec::with_capacity(t.lines().len());
    let mut first = measured.iter();
    let mut second = unmeasured.iter();
    while !remaining.is_empty() {
        let (j, from_measured) = match first.next() {
            Some(j) => (j, true),
            None => match second.next() {
                Some(j) => (j, false),
                None => break,
            },
        };
        let Some(line) = t.parent_line(j).expect("node of topology") else {
            continue;
        };
        if !remaining.remove(line.line_id.as_str()) {
            continue;
        }
        let parent_measured = t.is_measured(&line.parent);
        let case = match (from_measured, parent_measured) {
            (true, true) => LineCase::Case1,
            (true, false) => LineCase::Case2,
            (false, true) => LineCase::Case3,
            (false, false) => LineCase::Case4,
        };
        debug_assert_eq!(case, classify(t, line));
        out.push(LineClassification {
            line: line.clone(),
            case,
        });
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CaseCounts {
    pub case1: usize,
    pub case2: usize,
    pub case3: usize,
    pub case4: usize,
}

impl CaseCounts {
    pub fn of(classes: &[LineClassification]) -> CaseCounts {
        let mut c = CaseCounts::default();
        for lc in classes {
            match lc.case {
                LineCase::Case1 => c.case1 += 1,
                LineCase::Case2 => c.case2 += 1,
                LineCase::Case3 => c.case3 += 1,
                LineCase::Case4 => c.case4 += 1,
            }
        }
        c
    }

    pub fn all_present(&self) -> bool {
        self.case1 > 0 && self.case2 > 0 && self.case3 > 0 && self.case4 > 0
    }
}

impl fmt::Display for CaseCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "case1={} case2={} case3={} case4={}",
            self.case1, self.case2, self.case3, self.case4
        )
    }
}

/// Checks a classification list against the membership rule.
pub fn verify(t: &GridTopology, classes: &[LineClassification]) -> Result<(), String> {
    if classes.len() != t.lines().len() {
        return Err(format!("{} classifications for {} lines", classes.len(), t.lines().len()));
    }
    let mut seen = BTreeSet::new();
    for lc in classes {
        if !seen.insert(lc.line.line_id.as_str()) {
            return Err(format!("line {} classified twice", lc.line.line_id));
        }
        let expect = classify(t, &lc.line);
        if expect != lc.case {
            return Err(format!("line {}: got case {}, rule says {}", lc.line.line_id, lc.case, expect));
        }
    }
    Ok(())
}
