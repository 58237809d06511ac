use std::collections::HashMap;

use crate::bn::{BayesianNetwork, NodeId, NodeState, PartialState};
use crate::error::{Error, Result};
use crate::exact::{exact_conditional, DEFAULT_EXACT_LIMIT};

/// Exact conditionals standing in for the trained network, memoised per
/// `(assigned nodes, their values, queried node)`. During sequential
/// sampling the early, expensive queries repeat across samples.
pub struct OracleCache<'a> {
    bn: &'a BayesianNetwork,
    memo: HashMap<(u32, u32, u32), f64>,
}

impl<'a> OracleCache<'a> {
    pub fn new(bn: &'a BayesianNetwork) -> Result<Self> {
        if bn.len() > DEFAULT_EXACT_LIMIT {
            return Err(Error::TooLarge { nodes: bn.len(), limit: DEFAULT_EXACT_LIMIT });
        }
        Ok(Self { bn, memo: HashMap::new() })
    }

    pub fn conditional(&mut self, node: NodeId, state: &PartialState) -> Result<f64> {
        let (mut assigned, mut values) = (0u32, 0u32);
        for (i, s) in state.states().iter().enumerate() {
            if let Some(v) = s.value() {
                assigned |= 1 << i;
                values |= u32::from(v) << i;
            }
        }
        let key = (assigned, values, node.0 as u32);
        if let Some(&p) = self.memo.get(&key) {
            return Ok(p);
        }
        let p = exact_conditional(self.bn, node, state)?;
        self.memo.insert(key, p);
        Ok(p)
    }

    /// Same query with the state given as a value slice plus assigned mask.
    pub fn conditional_from(&mut self, node: NodeId, values: &[bool], assigned: &[bool]) -> Result<f64> {
        let state = PartialState(
            values
                .iter()
                .zip(assigned)
                .map(|(&v, &a)| if a { NodeState::from(v) } else { NodeState::Unobserved })
                .collect(),
        );
        self.conditional(node, &state)
    }
}
