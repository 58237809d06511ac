//! Independent reference computations shared by the integration tests. These
//! read CPT tables directly and never call the library's inference code.

#![allow(dead_code)]

use umis::{BayesianNetwork, FullAssignment, NodeState, PartialState};

/// Joint probability from raw CPT tables.
pub fn joint(bn: &BayesianNetwork, x: &[bool]) -> f64 {
    let mut p = 1.0;
    for node in bn.nodes() {
        let mut config = 0usize;
        for (j, parent) in node.parents.iter().enumerate() {
            if x[parent.0] {
                config |= 1 << j;
            }
        }
        let t = node.cpt.p_true()[config];
        p *= if x[node.id.0] { t } else { 1.0 - t };
    }
    p
}

pub fn assignment(bits: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| bits >> i & 1 == 1).collect()
}

pub fn consistent(x: &[bool], evidence: &PartialState) -> bool {
    evidence.states().iter().zip(x).all(|(s, &v)| s.value().is_none_or(|e| e == v))
}

/// `(P(X_i = 1 | e), P(e))` by summing the joint over all `2^N` states.
pub fn brute_posterior(bn: &BayesianNetwork, evidence: &PartialState) -> (Vec<f64>, f64) {
    let n = bn.len();
    let mut z = 0.0;
    let mut mass = vec![0.0; n];
    for bits in 0..1u64 << n {
        let x = assignment(bits, n);
        if !consistent(&x, evidence) {
            continue;
        }
        let p = joint(bn, &x);
        z += p;
        for (m, &v) in mass.iter_mut().zip(&x) {
            if v {
                *m += p;
            }
        }
    }
    (mass.iter().map(|m| m / z).collect(), z)
}

/// Evidence revealing the nodes selected by `mask` with values from `x`.
pub fn reveal(x: &FullAssignment, mask: &[bool]) -> PartialState {
    PartialState(
        x.values()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { NodeState::from(v) } else { NodeState::Unobserved })
            .collect(),
    )
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
