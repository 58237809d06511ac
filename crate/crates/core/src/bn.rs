//! Binary Bayesian networks: structure, conditional probability tables,
//! ancestral sampling and the JSON network format.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::MarginalVector;
use crate::rng::{self, Rng};

pub const DEFAULT_MAX_PARENTS: usize = 8;

/// Lower clamp applied to non-deterministic CPT entries (upper is `1 - CPT_CLAMP`).
pub const CPT_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeState {
    True,
    False,
    Unobserved,
}

impl NodeState {
    pub fn value(self) -> Option<bool> {
        match self {
            NodeState::True => Some(true),
            NodeState::False => Some(false),
            NodeState::Unobserved => None,
        }
    }

    pub fn is_observed(self) -> bool {
        self != NodeState::Unobserved
    }
}

impl From<bool> for NodeState {
    fn from(v: bool) -> Self {
        if v {
            NodeState::True
        } else {
            NodeState::False
        }
    }
}

impl From<Option<bool>> for NodeState {
    fn from(v: Option<bool>) -> Self {
        v.map_or(NodeState::Unobserved, NodeState::from)
    }
}

/// Complete assignment of every node, indexed by [`NodeId`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FullAssignment(pub Vec<bool>);

impl FullAssignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, node: NodeId) -> bool {
        self.0[node.0]
    }

    pub fn values(&self) -> &[bool] {
        &self.0
    }
}

/// Per-node ternary state: observed true, observed false, or unobserved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialState(pub Vec<NodeState>);

impl PartialState {
    pub fn unobserved(n: usize) -> Self {
        Self(vec![NodeState::Unobserved; n])
    }

    pub fn from_assignment(x: &FullAssignment) -> Self {
        Self(x.0.iter().map(|&v| NodeState::from(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, node: NodeId) -> NodeState {
        self.0[node.0]
    }

    pub fn set(&mut self, node: NodeId, state: NodeState) {
        self.0[node.0] = state;
    }

    pub fn with(mut self, node: NodeId, value: bool) -> Self {
        self.set(node, value.into());
        self
    }

    pub fn observed_count(&self) -> usize {
        self.0.iter().filter(|s| s.is_observed()).count()
    }

    pub fn states(&self) -> &[NodeState] {
        &self.0
    }
}

/// Dense table of `P(X = 1 | parents)`. Entry `k` corresponds to the parent
/// configuration whose `j`-th parent takes bit `j` of `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpt {
    parent_count: usize,
    p_true: Vec<f64>,
}

impl Cpt {
    pub fn new(parent_count: usize, p_true: Vec<f64>) -> Result<Self> {
        if parent_count >= usize::BITS as usize || p_true.len() != 1usize << parent_count {
            return Err(Error::InvalidNetwork(format!(
                "CPT for {parent_count} parents needs {} entries, got {}",
                1u128 << parent_count.min(127),
                p_true.len()
            )));
        }
        if let Some(p) = p_true.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidNetwork(format!("CPT entry {p} is not a probability")));
        }
        Ok(Self { parent_count, p_true })
    }

    pub fn parent_count(&self) -> usize {
        self.parent_count
    }

    pub fn p_true(&self) -> &[f64] {
        &self.p_true
    }

    pub fn entry(&self, config: usize) -> f64 {
        self.p_true[config]
    }

    fn clamp(&mut self) {
        for p in &mut self.p_true {
            *p = p.clamp(CPT_CLAMP, 1.0 - CPT_CLAMP);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub parents: Vec<NodeId>,
    pub cpt: Cpt,
    pub deterministic: bool,
}

/// A DAG of binary nodes with their CPTs. Immutable after construction.
#[derive(Debug, Clone)]
pub struct BayesianNetwork {
    nodes: Vec<Node>,
    topo: Vec<NodeId>,
    children: Vec<Vec<NodeId>>,
    priors: OnceLock<MarginalVector>,
}

impl PartialEq for BayesianNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

/// Kahn's algorithm; ready nodes are released in ascending id order.
pub fn topological_order(parents: &[Vec<NodeId>]) -> Result<Vec<NodeId>> {
    let n = parents.len();
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (child, ps) in parents.iter().enumerate() {
        for p in ps {
            if p.0 >= n {
                return Err(Error::InvalidNetwork(format!(
                    "node {child} references missing parent {p}"
                )));
            }
            indegree[child] += 1;
            children[p.0].push(child);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(NodeId(i));
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(Error::CycleDetected(stuck));
    }
    Ok(order)
}

impl BayesianNetwork {
    /// Builds and validates a network. `nodes[i].id` must equal `i`.
    /// Non-deterministic CPT entries are clamped to `[1e-9, 1 - 1e-9]`.
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        Self::with_max_parents(nodes, DEFAULT_MAX_PARENTS)
    }

    pub fn with_max_parents(mut nodes: Vec<Node>, max_parents: usize) -> Result<Self> {
        let n = nodes.len();
        let mut names = BTreeSet::new();
        for (i, node) in nodes.iter_mut().enumerate() {
            if node.id.0 != i {
                return Err(Error::InvalidNetwork(format!(
                    "node ids must be 0..{n}; found id {} at position {i}",
                    node.id
                )));
            }
            if !names.insert(node.name.clone()) {
                return Err(Error::InvalidNetwork(format!("duplicate node name `{}`", node.name)));
            }
            if node.parents.len() > max_parents {
                return Err(Error::InvalidNetwork(format!(
                    "node {i} (`{}`) has {} parents, limit is {max_parents}",
                    node.name,
                    node.parents.len()
                )));
            }
            let distinct: BTreeSet<_> = node.parents.iter().collect();
            if distinct.len() != node.parents.len() {
                return Err(Error::InvalidNetwork(format!(
                    "node {i} (`{}`) lists a parent twice",
                    node.name
                )));
            }
            if node.cpt.parent_count() != node.parents.len() {
                return Err(Error::InvalidNetwork(format!(
                    "node {i} (`{}`) has {} parents but its CPT expects {}",
                    node.name,
                    node.parents.len(),
                    node.cpt.parent_count()
                )));
            }
            if !node.deterministic {
                node.cpt.clamp();
            }
        }
        let parents: Vec<Vec<NodeId>> = nodes.iter().map(|n| n.parents.clone()).collect();
        let topo = topological_order(&parents)?;
        let mut children = vec![Vec::new(); n];
        for node in &nodes {
            for p in &node.parents {
                children[p.0].push(node.id);
            }
        }
        Ok(Self { nodes, topo, children, priors: OnceLock::new() })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.0]
    }

    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub(crate) fn priors_cache(&self) -> &OnceLock<MarginalVector> {
        &self.priors
    }

    /// CPT entry `P(node = 1 | parents)` read from a complete value slice.
    #[inline]
    pub fn p_true_full(&self, node: NodeId, values: &[bool]) -> f64 {
        let n = &self.nodes[node.0];
        let mut config = 0usize;
        for (bit, p) in n.parents.iter().enumerate() {
            config |= usize::from(values[p.0]) << bit;
        }
        n.cpt.entry(config)
    }

    #[inline]
    pub fn conditional_prob_full(&self, node: NodeId, value: bool, values: &[bool]) -> f64 {
        let p = self.p_true_full(node, values);
        if value {
            p
        } else {
            1.0 - p
        }
    }

    /// `P(node = value | parents)` where the parents are read from `state`.
    pub fn conditional_prob(&self, node: NodeId, value: bool, state: &PartialState) -> Result<f64> {
        let n = &self.nodes[node.0];
        let mut config = 0usize;
        for (bit, &p) in n.parents.iter().enumerate() {
            match state.get(p).value() {
                Some(v) => config |= usize::from(v) << bit,
                None => return Err(Error::UnassignedParent { node: node.0, parent: p.0 }),
            }
        }
        let p = n.cpt.entry(config);
        Ok(if value { p } else { 1.0 - p })
    }

    pub fn ancestral_sample(&self, rng: &mut Rng) -> FullAssignment {
        let mut values = vec![false; self.len()];
        for &id in &self.topo {
            let p = self.p_true_full(id, &values);
            values[id.0] = rng.random::<f64>() < p;
        }
        FullAssignment(values)
    }

    /// `ln P(x)`; negative infinity when any factor is zero.
    pub fn log_joint(&self, x: &FullAssignment) -> f64 {
        self.topo
            .iter()
            .map(|&id| self.conditional_prob_full(id, x.get(id), x.values()).ln())
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id.0,
                    name: n.name.clone(),
                    parents: n.parents.iter().map(|p| p.0).collect(),
                    p_true: n.cpt.p_true().to_vec(),
                    deterministic: n.deterministic,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses the JSON network format. Problems with an individual node are
    /// reported with the line on which that node appears.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RawNetworkFile<'_> = serde_json::from_str(text)?;
        let mut records = Vec::with_capacity(doc.nodes.len());
        for raw in doc.nodes {
            let offset = raw.get().as_ptr() as usize - text.as_ptr() as usize;
            let line = 1 + text[..offset].bytes().filter(|&b| b == b'\n').count();
            let record: NodeRecord = serde_json::from_str(raw.get()).map_err(|e| {
                let at = line + e.line().saturating_sub(1);
                let msg = e.to_string();
                let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
                Error::InvalidNetwork(format!("line {at}: {msg}"))
            })?;
            records.push((line, record));
        }
        records.sort_by_key(|(_, r)| r.id);
        let mut names = BTreeSet::new();
        for (pos, (line, r)) in records.iter().enumerate() {
            if r.id != pos {
                return Err(Error::InvalidNetwork(format!(
                    "line {line}: node ids must be exactly 0..{}, found id {}",
                    records.len(),
                    r.id
                )));
            }
            if !names.insert(r.name.as_str()) {
                return Err(Error::InvalidNetwork(format!("line {line}: duplicate node name `{}`", r.name)));
            }
            if let Some(p) = r.parents.iter().find(|&&p| p >= records.len()) {
                return Err(Error::InvalidNetwork(format!("line {line}: node {} references missing parent {p}", r.id)));
            }
        }
        let nodes = records
            .into_iter()
            .map(|(_, r)| Node {
                id: NodeId(r.id),
                name: r.name,
                cpt: Cpt { parent_count: r.parents.len(), p_true: r.p_true },
                parents: r.parents.into_iter().map(NodeId).collect(),
                deterministic: r.deterministic,
            })
            .collect();
        Self::new(nodes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Deserialize)]
struct RawNetworkFile<'a> {
    #[serde(borrow)]
    nodes: Vec<&'a serde_json::value::RawValue>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    nodes: Vec<NodeRecord>,
}

/// One node of the JSON network format. Per-node checks run while parsing
/// so that the parser's error carries the offending line and column.
#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "RawNodeRecord")]
struct NodeRecord {
    id: usize,
    name: String,
    parents: Vec<usize>,
    p_true: Vec<f64>,
    deterministic: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNodeRecord {
    id: usize,
    name: String,
    #[serde(default)]
    parents: Vec<usize>,
    p_true: Vec<f64>,
    #[serde(default)]
    deterministic: bool,
}

impl TryFrom<RawNodeRecord> for NodeRecord {
    type Error = String;

    fn try_from(r: RawNodeRecord) -> std::result::Result<Self, String> {
        let k = r.parents.len();
        if k > DEFAULT_MAX_PARENTS {
            return Err(format!(
                "node {} has {k} parents, limit is {DEFAULT_MAX_PARENTS}",
                r.id
            ));
        }
        if r.p_true.len() != 1 << k {
            return Err(format!(
                "node {} has {k} parents so p_true needs {} entries, got {}",
                r.id,
                1 << k,
                r.p_true.len()
            ));
        }
        if let Some(p) = r.p_true.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(format!("node {}: p_true entry {p} is outside [0, 1]", r.id));
        }
        if r.parents.contains(&r.id) {
            return Err(format!("node {} lists itself as a parent", r.id));
        }
        let distinct: BTreeSet<_> = r.parents.iter().collect();
        if distinct.len() != k {
            return Err(format!("node {} lists a parent twice", r.id));
        }
        Ok(NodeRecord {
            id: r.id,
            name: r.name,
            parents: r.parents,
            p_true: r.p_true,
            deterministic: r.deterministic,
        })
    }
}

/// Random test network: node `i` draws each earlier node as a parent with
/// probability `edge_prob`, keeping at most `max_parents`; CPT entries are
/// uniform in `[0.05, 0.95]`.
pub fn random_bn(n_nodes: usize, max_parents: usize, edge_prob: f64, seed: u64) -> Result<BayesianNetwork> {
    if n_nodes == 0 {
        return Err(Error::InvalidConfig("random network needs at least one node".into()));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidConfig(format!("edge probability {edge_prob} is outside [0, 1]")));
    }
    if max_parents > DEFAULT_MAX_PARENTS {
        return Err(Error::InvalidConfig(format!(
            "max_parents {max_parents} exceeds the CPT limit {DEFAULT_MAX_PARENTS}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut nodes = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let mut candidates: Vec<usize> = (0..i).collect();
        candidates.shuffle(&mut rng);
        let mut parents: Vec<NodeId> = candidates
            .into_iter()
            .filter(|_| rng.random::<f64>() < edge_prob)
            .take(max_parents)
            .map(NodeId)
            .collect();
        parents.sort();
        let p_true = (0..1usize << parents.len())
            .map(|_| rng.random_range(0.05..=0.95))
            .collect();
        nodes.push(Node {
            id: NodeId(i),
            name: format!("X{i}"),
            cpt: Cpt::new(parents.len(), p_true)?,
            parents,
            deterministic: false,
        });
    }
    BayesianNetwork::new(nodes)
}

pub mod fixtures {
    //! Small hand-specified networks.

    use super::*;

    fn node(id: usize, name: &str, parents: &[usize], p_true: &[f64], deterministic: bool) -> Node {
        Node {
            id: NodeId(id),
            name: name.to_string(),
            parents: parents.iter().copied().map(NodeId).collect(),
            cpt: Cpt::new(parents.len(), p_true.to_vec()).expect("fixture CPT"),
            deterministic,
        }
    }

    /// `A -> B -> C` with `P(A)=0.3`, `P(B|A)=0.8 / 0.1`, `P(C|B)=0.9 / 0.2`.
    pub fn chain3() -> BayesianNetwork {
        BayesianNetwork::new(vec![
            node(0, "A", &[], &[0.3], false),
            node(1, "B", &[0], &[0.1, 0.8], false),
            node(2, "C", &[1], &[0.2, 0.9], false),
        ])
        .expect("chain3 is valid")
    }

    /// `Xj` copies `Xi` deterministically; observing `E = 1` drives the
    /// posterior of both to 0.001. Root prior 0.5 with
    /// `P(E=1 | Xi) = 0.001 / 0.999` gives `P(Xi=1 | E=1) = 0.001` exactly.
    pub fn appendix_b() -> BayesianNetwork {
        BayesianNetwork::new(vec![
            node(0, "Xi", &[], &[0.5], false),
            node(1, "Xj", &[0], &[0.0, 1.0], true),
            node(2, "E", &[0], &[0.999, 0.001], false),
        ])
        .expect("appendix_b is valid")
    }

    /// Evidence used with [`appendix_b`]: `E = 1`.
    pub fn appendix_b_evidence() -> PartialState {
        PartialState::unobserved(3).with(NodeId(2), true)
    }
}
