//! Exact posterior marginals by enumeration, for desk-scale networks.
//!
//! The enumeration walks nodes in topological order, branching on
//! unassigned nodes and multiplying in CPT factors as it goes. A node's
//! posterior mass is collected at its branch point from the subtree total,
//! so each tree node costs O(1). Conditional queries first drop barren
//! nodes (unassigned nodes with no assigned descendant), which sum to one.

use serde::{Deserialize, Serialize};

use crate::bn::{BayesianNetwork, NodeId, NodeState, PartialState};
use crate::error::{Error, Result};

pub const DEFAULT_EXACT_LIMIT: usize = 22;

/// Evidence probabilities below this are treated as impossible.
pub const IMPOSSIBLE_EVIDENCE: f64 = 1e-300;

/// Per-node `P(X_i = 1 | evidence)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarginalVector(pub Vec<f64>);

impl MarginalVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, node: NodeId) -> f64 {
        self.0[node.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Overwrites observed entries with their evidence values.
    pub fn pin(&mut self, evidence: &PartialState) {
        for (p, s) in self.0.iter_mut().zip(evidence.states()) {
            if let Some(v) = s.value() {
                *p = if v { 1.0 } else { 0.0 };
            }
        }
    }
}

struct Enumerator<'a> {
    bn: &'a BayesianNetwork,
    order: Vec<NodeId>,
    fixed: Vec<Option<bool>>,
    values: Vec<bool>,
    mass_true: Vec<f64>,
}

impl<'a> Enumerator<'a> {
    fn new(bn: &'a BayesianNetwork, state: &PartialState, keep: Option<&[bool]>) -> Self {
        let order = bn
            .topological_order()
            .iter()
            .copied()
            .filter(|id| keep.is_none_or(|k| k[id.0]))
            .collect();
        Self {
            bn,
            order,
            fixed: state.states().iter().map(|s| s.value()).collect(),
            values: vec![false; bn.len()],
            mass_true: vec![0.0; bn.len()],
        }
    }

    fn descend(&mut self, pos: usize, weight: f64) -> f64 {
        let Some(&id) = self.order.get(pos) else {
            return weight;
        };
        match self.fixed[id.0] {
            Some(v) => {
                let f = self.bn.conditional_prob_full(id, v, &self.values);
                if f == 0.0 {
                    return 0.0;
                }
                self.values[id.0] = v;
                self.descend(pos + 1, weight * f)
            }
            None => {
                let p = self.bn.p_true_full(id, &self.values);
                let mut total = 0.0;
                if p < 1.0 {
                    self.values[id.0] = false;
                    total += self.descend(pos + 1, weight * (1.0 - p));
                }
                if p > 0.0 {
                    self.values[id.0] = true;
                    let t = self.descend(pos + 1, weight * p);
                    self.mass_true[id.0] += t;
                    total += t;
                }
                total
            }
        }
    }
}

fn check_size(bn: &BayesianNetwork, limit: usize) -> Result<()> {
    if bn.len() > limit {
        return Err(Error::TooLarge { nodes: bn.len(), limit });
    }
    Ok(())
}

fn check_len(bn: &BayesianNetwork, state: &PartialState) -> Result<()> {
    if state.len() != bn.len() {
        return Err(Error::LengthMismatch(state.len(), bn.len()));
    }
    Ok(())
}

pub fn exact_posterior(bn: &BayesianNetwork, evidence: &PartialState) -> Result<MarginalVector> {
    exact_posterior_with_limit(bn, evidence, DEFAULT_EXACT_LIMIT)
}

pub fn exact_posterior_with_limit(
    bn: &BayesianNetwork,
    evidence: &PartialState,
    limit: usize,
) -> Result<MarginalVector> {
    check_size(bn, limit)?;
    check_len(bn, evidence)?;
    let mut e = Enumerator::new(bn, evidence, None);
    let z = e.descend(0, 1.0);
    if z < IMPOSSIBLE_EVIDENCE {
        return Err(Error::ImpossibleEvidence);
    }
    let mut out = MarginalVector(e.mass_true.iter().map(|m| (m / z).clamp(0.0, 1.0)).collect());
    out.pin(evidence);
    Ok(out)
}

/// `P(evidence)`, summing out every unobserved node.
pub fn evidence_probability(bn: &BayesianNetwork, evidence: &PartialState) -> Result<f64> {
    check_size(bn, DEFAULT_EXACT_LIMIT)?;
    check_len(bn, evidence)?;
    let keep = relevant_nodes(bn, evidence, None);
    Ok(Enumerator::new(bn, evidence, Some(&keep)).descend(0, 1.0))
}

/// Ancestors-or-self of the assigned nodes (and `target`); everything else
/// is barren for the query.
fn relevant_nodes(bn: &BayesianNetwork, state: &PartialState, target: Option<NodeId>) -> Vec<bool> {
    let mut keep: Vec<bool> = state.states().iter().map(|s| s.is_observed()).collect();
    if let Some(t) = target {
        keep[t.0] = true;
    }
    for &id in bn.topological_order().iter().rev() {
        if !keep[id.0] && bn.children(id).iter().any(|c| keep[c.0]) {
            keep[id.0] = true;
        }
    }
    keep
}

/// `P(node = 1 | every assigned entry of state)`.
pub fn exact_conditional(bn: &BayesianNetwork, node: NodeId, state: &PartialState) -> Result<f64> {
    check_size(bn, DEFAULT_EXACT_LIMIT)?;
    check_len(bn, state)?;
    match state.get(node) {
        NodeState::True => return Ok(1.0),
        NodeState::False => return Ok(0.0),
        NodeState::Unobserved => {}
    }
    let keep = relevant_nodes(bn, state, Some(node));
    let mut e = Enumerator::new(bn, state, Some(&keep));
    let z = e.descend(0, 1.0);
    if z < IMPOSSIBLE_EVIDENCE {
        return Err(Error::ImpossibleEvidence);
    }
    Ok((e.mass_true[node.0] / z).clamp(0.0, 1.0))
}
