//! Radial grid topology: nodes, oriented lines and sensor placement.
//!
//! Lines are always stored parent → child, where the parent is the endpoint
//! nearer the root. Input orientation is ignored and recomputed by a
//! breadth-first walk from the root.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque node label, e.g. `"L09"`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// One of the three decoupled phase channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s.trim() {
            "A" | "a" => Some(Phase::A),
            "B" | "b" => Some(Phase::B),
            "C" | "c" => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

/// A line oriented so that power flows from `parent` (sending node i) to
/// `child` (receiving node j).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Line {
    pub line_id: String,
    pub parent: NodeId,
    pub child: NodeId,
}

impl Line {
    pub fn new(line_id: impl Into<String>, parent: impl Into<String>, child: impl Into<String>) -> Self {
        Line {
            line_id: line_id.into(),
            parent: NodeId::new(parent),
            child: NodeId::new(child),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("topology has no nodes")]
    Empty,
    #[error("node {0} listed more than once")]
    DuplicateNode(NodeId),
    #[error("line id {0} listed more than once")]
    DuplicateLine(String),
    #[error("reference to unknown node {0}")]
    UnknownNodeReference(NodeId),
    #[error("cycle detected through line {0}")]
    CycleDetected(String),
    #[error("graph is disconnected: {0} not reachable from root")]
    DisconnectedGraph(NodeId),
    #[error("root {0} has a parent line {1}")]
    RootHasParent(NodeId, String),
    #[error("cannot read topology: {0}")]
    Io(String),
    #[error("cannot parse topology: {0}")]
    Parse(String),
}

/// Validated, immutable radial topology.
///
/// Nodes are held in a dense index space; `order` is a breadth-first
/// ordering from the root, so every parent precedes its children.
#[derive(Clone, Debug)]
pub struct GridTopology {
    nodes: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    root: usize,
    /// Parent line index per node (`None` for root).
    parent_line: Vec<Option<usize>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    measured: Vec<bool>,
    lines: Vec<Line>,
    line_index: HashMap<String, usize>,
    order: Vec<usize>,
}

impl GridTopology {
    /// Validates the inputs and builds a topology with normalized orientation.
    pub fn build(
        nodes: &[NodeId],
        lines: &[Line],
        root: &NodeId,
        measured: &BTreeSet<NodeId>,
    ) -> Result<GridTopology, TopologyError> {
        if nodes.is_empty() {
            return Err(TopologyError::Empty);
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(TopologyError::DuplicateNode(n.clone()));
            }
        }
        let root_ix = *index
            .get(root)
            .ok_or_else(|| TopologyError::UnknownNodeReference(root.clone()))?;
        for m in measured {
            if !index.contains_key(m) {
                return Err(TopologyError::UnknownNodeReference(m.clone()));
            }
        }

        let n = nodes.len();
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut seen_ids = BTreeSet::new();
        for (li, line) in lines.iter().enumerate() {
            if !seen_ids.insert(line.line_id.as_str()) {
                return Err(TopologyError::DuplicateLine(line.line_id.clone()));
            }
            let a = *index
                .get(&line.parent)
                .ok_or_else(|| TopologyError::UnknownNodeReference(line.parent.clone()))?;
            let b = *index
                .get(&line.child)
                .ok_or_else(|| TopologyError::UnknownNodeReference(line.child.clone()))?;
            if a == b {
                if a == root_ix {
                    return Err(TopologyError::RootHasParent(root.clone(), line.line_id.clone()));
                }
                return Err(TopologyError::CycleDetected(line.line_id.clone()));
            }
            adjacency[a].push((b, li));
            adjacency[b].push((a, li));
        }

        let mut parent = vec![None; n];
        let mut parent_line = vec![None; n];
        let mut depth = vec![0usize; n];
        let mut visited = vec![false; n];
        let mut used_line = vec![false; lines.len()];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::new();
        visited[root_ix] = true;
        queue.push_back(root_ix);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, li) in &adjacency[u] {
                if used_line[li] {
                    continue;
                }
                used_line[li] = true;
                if visited[v] {
                    return Err(TopologyError::CycleDetected(lines[li].line_id.clone()));
                }
                visited[v] = true;
                parent[v] = Some(u);
                parent_line[v] = Some(li);
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
        if let Some(unreached) = visited.iter().position(|&v| !v) {
            return Err(TopologyError::DisconnectedGraph(nodes[unreached].clone()));
        }

        let mut children = vec![Vec::new(); n];
        let mut oriented = lines.to_vec();
        for v in 0..n {
            if let (Some(p), Some(li)) = (parent[v], parent_line[v]) {
                children[p].push(v);
                oriented[li].parent = nodes[p].clone();
                oriented[li].child = nodes[v].clone();
            }
        }
        for c in children.iter_mut() {
            c.sort_by(|&a, &b| nodes[a].cmp(&nodes[b]));
        }
        let line_index = oriented
            .iter()
            .enumerate()
            .map(|(i, l)| (l.line_id.clone(), i))
            .collect();
        let measured_flags = nodes.iter().map(|id| measured.contains(id)).collect();

        let topo = GridTopology {
            nodes: nodes.to_vec(),
            index,
            root: root_ix,
            parent_line,
            parent,
            children,
            depth,
            measured: measured_flags,
            lines: oriented,
            line_index,
            order,
        };
        debug_assert_eq!(topo.lines.len() + 1, topo.nodes.len());
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn root(&self) -> &NodeId {
        &self.nodes[self.root]
    }

    pub fn contains(&self, n: &NodeId) -> bool {
        self.index.contains_key(n)
    }

    pub fn is_measured(&self, n: &NodeId) -> bool {
        self.index.get(n).map(|&i| self.measured[i]).unwrap_or(false)
    }

    pub fn measured_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes
            .iter()
            .zip(&self.measured)
            .filter(|(_, &m)| m)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn unmeasured_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes
            .iter()
            .zip(&self.measured)
            .filter(|(_, &m)| !m)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn line(&self, line_id: &str) -> Option<&Line> {
        self.line_index.get(line_id).map(|&i| &self.lines[i])
    }

    pub fn parent(&self, n: &NodeId) -> Result<Option<&NodeId>, TopologyError> {
        let i = self.ix(n)?;
        Ok(self.parent[i].map(|p| &self.nodes[p]))
    }

    /// The line feeding `n` from its parent, `None` for the root.
    pub fn parent_line(&self, n: &NodeId) -> Result<Option<&Line>, TopologyError> {
        let i = self.ix(n)?;
        Ok(self.parent_line[i].map(|li| &self.lines[li]))
    }

    pub fn children(&self, n: &NodeId) -> Result<BTreeSet<NodeId>, TopologyError> {
        let i = self.ix(n)?;
        Ok(self.children[i].iter().map(|&c| self.nodes[c].clone()).collect())
    }

    /// Lines leaving `n` toward its children, sorted by child id.
    pub fn child_lines(&self, n: &NodeId) -> Result<Vec<&Line>, TopologyError> {
        let i = self.ix(n)?;
        Ok(self.children[i]
            .iter()
            .filter_map(|&c| self.parent_line[c].map(|li| &self.lines[li]))
            .collect())
    }

    pub fn depth(&self, n: &NodeId) -> Result<usize, TopologyError> {
        Ok(self.depth[self.ix(n)?])
    }

    /// Deepest nodes first; equal depth ordered by ascending id.
    pub fn bottom_up_order(&self, subset: &BTreeSet<NodeId>) -> Result<Vec<NodeId>, TopologyError> {
        let mut ids = Vec::with_capacity(subset.len());
        for n in subset {
            ids.push(self.ix(n)?);
        }
        ids.sort_by(|&a, &b| {
            self.depth[b]
                .cmp(&self.depth[a])
                .then_with(|| self.nodes[a].cmp(&self.nodes[b]))
        });
        Ok(ids.into_iter().map(|i| self.nodes[i].clone()).collect())
    }

    /// Root-first ordering (breadth-first) of all nodes.
    pub fn top_down(&self) -> impl Iterator<Item = &NodeId> + '_ {
        self.order.iter().map(move |&i| &self.nodes[i])
    }

    /// Dense index view used by the power-flow solver.
    pub fn indexed(&self) -> IndexedTree<'_> {
        IndexedTree { topo: self }
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            root: self.root().clone(),
            nodes: self.nodes.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord {
                    id: l.line_id.clone(),
                    from: l.parent.clone(),
                    to: l.child.clone(),
                })
                .collect(),
            measured: self.measured_nodes().into_iter().collect(),
            extra: BTreeMap::new(),
        }
    }

    fn ix(&self, n: &NodeId) -> Result<usize, TopologyError> {
        self.index
            .get(n)
            .copied()
            .ok_or_else(|| TopologyError::UnknownNodeReference(n.clone()))
    }
}

/// Index-based accessors over a [`GridTopology`].
#[derive(Clone, Copy)]
pub struct IndexedTree<'a> {
    topo: &'a GridTopology,
}

impl<'a> IndexedTree<'a> {
    pub fn len(&self) -> usize {
        self.topo.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topo.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.topo.root
    }

    pub fn index_of(&self, n: &NodeId) -> Option<usize> {
        self.topo.index.get(n).copied()
    }

    pub fn node(&self, i: usize) -> &'a NodeId {
        &self.topo.nodes[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.topo.parent[i]
    }

    pub fn parent_line(&self, i: usize) -> Option<&'a Line> {
        self.topo.parent_line[i].map(|li| &self.topo.lines[li])
    }

    pub fn children(&self, i: usize) -> &'a [usize] {
        &self.topo.children[i]
    }

    /// Breadth-first order from the root.
    pub fn order(&self) -> &'a [usize] {
        &self.topo.order
    }

    pub fn is_measured(&self, i: usize) -> bool {
        self.topo.measured[i]
    }
}

/// On-disk topology document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologyFile {
    pub root: NodeId,
    pub nodes: Vec<NodeId>,
    pub lines: Vec<LineRecord>,
    #[serde(default)]
    pub measured: Vec<NodeId>,
    #[serde(flatten, skip_serializing)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineRecord {
    pub id: String,
    pub from: NodeId,
    pub to: NodeId,
}

impl TopologyFile {
    pub fn from_json(text: &str) -> Result<TopologyFile, TopologyError> {
        let file: TopologyFile =
            serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
        for key in file.extra.keys() {
            log::warn!("ignoring unknown topology field `{key}`");
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<TopologyFile, TopologyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn build(&self) -> Result<GridTopology, TopologyError> {
        let lines: Vec<Line> = self
            .lines
            .iter()
            .map(|l| Line {
                line_id: l.id.clone(),
                parent: l.from.clone(),
                child: l.to.clone(),
            })
            .collect();
        let measured = self.measured.iter().cloned().collect();
        GridTopology::build(&self.nodes, &lines, &self.root, &measured)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<NodeId> {
        v.iter().map(|s| NodeId::from(*s)).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<NodeId> {
        v.iter().map(|s| NodeId::from(*s)).collect()
    }

    fn chain() -> GridTopology {
        GridTopology::build(
            &ids(&["R", "A", "B"]),
            &[Line::new("l1", "R", "A"), Line::new("l2", "A", "B")],
            &"R".into(),
            &set(&["R", "A", "B"]),
        )
        .unwrap()
    }

    fn star(children: &[&str]) -> GridTopology {
        let mut nodes = vec!["R"];
        nodes.extend_from_slice(children);
        let lines: Vec<Line> = children
            .iter()
            .map(|c| Line::new(format!("R-{c}"), "R", *c))
            .collect();
        GridTopology::build(&ids(&nodes), &lines, &"R".into(), &BTreeSet::new()).unwrap()
    }

    #[test]
    fn two_node_chain() {
        let t = GridTopology::build(
            &ids(&["R", "A"]),
            &[Line::new("l", "R", "A")],
            &"R".into(),
            &set(&["R", "A"]),
        )
        .unwrap();
        assert_eq!(t.parent(&"A".into()).unwrap(), Some(&NodeId::from("R")));
        assert_eq!(t.parent(&"R".into()).unwrap(), None);
        assert!(t.parent_line(&"R".into()).unwrap().is_none());
    }

    #[test]
    fn three_cycle_rejected() {
        let err = GridTopology::build(
            &ids(&["R", "A", "B"]),
            &[
                Line::new("l1", "R", "A"),
                Line::new("l2", "A", "B"),
                Line::new("l3", "B", "R"),
            ],
            &"R".into(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert!(matches!(err, TopologyError::CycleDetected(_)));
    }

    #[test]
    fn orientation_normalized() {
        let t = GridTopology::build(
            &ids(&["R", "A", "B"]),
            &[Line::new("l1", "A", "R"), Line::new("l2", "A", "B")],
            &"R".into(),
            &BTreeSet::new(),
        )
        .unwrap();
        let l1 = t.line("l1").unwrap();
        assert_eq!((l1.parent.as_str(), l1.child.as_str()), ("R", "A"));
        let l2 = t.line("l2").unwrap();
        assert_eq!((l2.parent.as_str(), l2.child.as_str()), ("A", "B"));
    }

    #[test]
    fn normalization_idempotent() {
        let t = GridTopology::build(
            &ids(&["R", "A", "B", "C"]),
            &[
                Line::new("l1", "A", "R"),
                Line::new("l2", "B", "A"),
                Line::new("l3", "R", "C"),
            ],
            &"R".into(),
            &set(&["A"]),
        )
        .unwrap();
        let again = t.to_file().build().unwrap();
        assert_eq!(t.lines(), again.lines());
        assert_eq!(t.measured_nodes(), again.measured_nodes());
    }

    #[test]
    fn build_errors() {
        let e = GridTopology::build(
            &ids(&["R", "R"]),
            &[],
            &"R".into(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert_eq!(e, TopologyError::DuplicateNode("R".into()));

        let e = GridTopology::build(
            &ids(&["R", "A"]),
            &[Line::new("l", "R", "X")],
            &"R".into(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert_eq!(e, TopologyError::UnknownNodeReference("X".into()));

        let e = GridTopology::build(
            &ids(&["R", "A", "B"]),
            &[Line::new("l", "R", "A")],
            &"R".into(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert_eq!(e, TopologyError::DisconnectedGraph("B".into()));

        let e = GridTopology::build(
            &ids(&["R", "A"]),
            &[Line::new("l", "R", "R")],
            &"R".into(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert!(matches!(e, TopologyError::RootHasParent(_, _)));

        let e = GridTopology::build(&[], &[], &"R".into(), &BTreeSet::new()).unwrap_err();
        assert_eq!(e, TopologyError::Empty);

        let e = GridTopology::build(
            &ids(&["R", "A"]),
            &[Line::new("l", "R", "A")],
            &"Z".into(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert_eq!(e, TopologyError::UnknownNodeReference("Z".into()));

        // parallel lines between the same pair form a 2-cycle
        let e = GridTopology::build(
            &ids(&["R", "A"]),
            &[Line::new("l1", "R", "A"), Line::new("l2", "A", "R")],
            &"R".into(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert!(matches!(e, TopologyError::CycleDetected(_)));
    }

    #[test]
    fn children_queries() {
        let t = chain();
        assert_eq!(t.children(&"A".into()).unwrap(), set(&["B"]));
        assert!(t.children(&"B".into()).unwrap().is_empty());
        let s = star(&["A", "B", "C"]);
        assert_eq!(s.children(&"R".into()).unwrap(), set(&["A", "B", "C"]));
        assert!(matches!(
            t.children(&"Q".into()),
            Err(TopologyError::UnknownNodeReference(_))
        ));
    }

    #[test]
    fn bottom_up() {
        let t = chain();
        assert_eq!(t.bottom_up_order(&set(&["R", "A", "B"])).unwrap(), ids(&["B", "A", "R"]));
        assert_eq!(t.bottom_up_order(&set(&["A"])).unwrap(), ids(&["A"]));
        let s = star(&["A", "B"]);
        assert_eq!(s.bottom_up_order(&set(&["A", "B", "R"])).unwrap(), ids(&["A", "B", "R"]));
        assert!(t.bottom_up_order(&set(&["Q"])).is_err());
    }

    #[test]
    fn unknown_fields_are_tolerated() {
        let json = r#"{"root":"R","nodes":["R","A"],"lines":[{"id":"l","from":"A","to":"R"}],
                       "measured":["A"],"comment":"x"}"#;
        let f = TopologyFile::from_json(json).unwrap();
        assert!(f.extra.contains_key("comment"));
        let t = f.build().unwrap();
        assert_eq!(t.line("l").unwrap().parent.as_str(), "R");
        assert!(t.is_measured(&"A".into()));
        assert!(!t.is_measured(&"R".into()));
    }
}
