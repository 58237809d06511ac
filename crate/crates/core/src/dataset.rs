//! Training data for the marginalizer: ancestral samples, random masking
//! and the two input encodings.

use std::io::Write;

use ndarray::{Array2, ArrayViewMut1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bn::{BayesianNetwork, FullAssignment, NodeState, PartialState};
use crate::error::Result;
use crate::exact::{exact_posterior, MarginalVector, DEFAULT_EXACT_LIMIT};
use crate::rng::{self, Rng};

/// Samples used for prior marginals when the network is too large to enumerate.
pub const PRIOR_SAMPLES: usize = 1_000_000;
const PRIOR_SEED: u64 = 0x5052_494F_5253;

/// How a partial state is presented to the network. Both use two inputs per
/// node at positions `(2i, 2i + 1)`: an observed flag and a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    /// Value input is the observed bit, or 0 when unobserved.
    TwoBit,
    /// Value input is the observed bit, or the node's prior marginal.
    FlagPlusPrior,
}

impl EncodingMode {
    pub fn label(self) -> &'static str {
        match self {
            EncodingMode::TwoBit => "two-bit",
            EncodingMode::FlagPlusPrior => "flag-plus-prior",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput(pub Vec<f64>);

impl EncodedInput {
    /// Which nodes the encoding marks as observed.
    pub fn observed_flags(&self) -> Vec<bool> {
        self.0.chunks_exact(2).map(|c| c[0] == 1.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Hides each node independently with probability `p`.
pub fn mask_with_probability(x: &FullAssignment, p: f64, rng: &mut Rng) -> PartialState {
    PartialState(
        x.values()
            .iter()
            .map(|&v| if rng.random::<f64>() < p { NodeState::Unobserved } else { v.into() })
            .collect(),
    )
}

/// Draws one masking probability `p ~ U[0, 1)` and masks every node with it,
/// which makes the number of observed nodes uniform on `0..=N`.
pub fn mask_assignment(x: &FullAssignment, rng: &mut Rng) -> PartialState {
    let p = rng.random::<f64>();
    mask_with_probability(x, p, rng)
}

/// Prior marginals `P(X_i = 1)`, cached on the network.
pub fn compute_priors(bn: &BayesianNetwork) -> &MarginalVector {
    bn.priors_cache().get_or_init(|| {
        if bn.len() <= DEFAULT_EXACT_LIMIT {
            exact_posterior(bn, &PartialState::unobserved(bn.len()))
                .expect("empty evidence always has probability one")
        } else {
            let mut rng = rng::seeded(PRIOR_SEED);
            let mut counts = vec![0usize; bn.len()];
            for _ in 0..PRIOR_SAMPLES {
                for (c, v) in counts.iter_mut().zip(bn.ancestral_sample(&mut rng).0) {
                    *c += usize::from(v);
                }
            }
            MarginalVector(counts.iter().map(|&c| c as f64 / PRIOR_SAMPLES as f64).collect())
        }
    })
}

/// Writes the encoding of `state` into a row of length `2N`.
pub fn encode_into(
    state: &[NodeState],
    mode: EncodingMode,
    priors: &MarginalVector,
    mut row: ArrayViewMut1<'_, f64>,
) {
    for (i, s) in state.iter().enumerate() {
        let (flag, value) = encode_node(*s, mode, priors.0[i]);
        row[2 * i] = flag;
        row[2 * i + 1] = value;
    }
}

#[inline]
pub(crate) fn encode_node(s: NodeState, mode: EncodingMode, prior: f64) -> (f64, f64) {
    match (s, mode) {
        (NodeState::True, _) => (1.0, 1.0),
        (NodeState::False, _) => (1.0, 0.0),
        (NodeState::Unobserved, EncodingMode::TwoBit) => (0.0, 0.0),
        (NodeState::Unobserved, EncodingMode::FlagPlusPrior) => (0.0, prior),
    }
}

pub fn encode(state: &PartialState, mode: EncodingMode, priors: &MarginalVector) -> EncodedInput {
    let mut v = ndarray::Array1::zeros(2 * state.len());
    encode_into(state.states(), mode, priors, v.view_mut());
    EncodedInput(v.to_vec())
}

pub fn encode_batch(states: &[PartialState], mode: EncodingMode, priors: &MarginalVector) -> Array2<f64> {
    let n = states.first().map_or(priors.len(), |s| s.len());
    let mut out = Array2::zeros((states.len(), 2 * n));
    for (s, row) in states.iter().zip(out.rows_mut()) {
        encode_into(s.states(), mode, priors, row);
    }
    out
}

/// `batch_size` rows of (encoded masked sample, unmasked sample).
pub fn training_batch(
    bn: &BayesianNetwork,
    batch_size: usize,
    mode: EncodingMode,
    priors: &MarginalVector,
    rng: &mut Rng,
) -> TrainingBatch {
    let n = bn.len();
    let mut inputs = Array2::zeros((batch_size, 2 * n));
    let mut targets = Array2::zeros((batch_size, n));
    for b in 0..batch_size {
        let x = bn.ancestral_sample(rng);
        let masked = mask_assignment(&x, rng);
        encode_into(masked.states(), mode, priors, inputs.row_mut(b));
        for (t, &v) in targets.row_mut(b).iter_mut().zip(x.values()) {
            *t = f64::from(u8::from(v));
        }
    }
    TrainingBatch { inputs, targets }
}

/// Debug dump: header of `<name>.flag,<name>.value` per node then target
/// columns, one row per sample.
pub fn write_batch_csv<W: Write>(bn: &BayesianNetwork, batch: &TrainingBatch, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = Vec::with_capacity(3 * bn.len());
    for node in bn.nodes() {
        header.push(format!("{}.flag", node.name));
        header.push(format!("{}.value", node.name));
    }
    header.extend(bn.nodes().iter().map(|n| format!("{}.target", n.name)));
    w.write_record(&header)?;
    for (input, target) in batch.inputs.rows().into_iter().zip(batch.targets.rows()) {
        let record: Vec<String> = input.iter().chain(target.iter()).map(|v| v.to_string()).collect();
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
