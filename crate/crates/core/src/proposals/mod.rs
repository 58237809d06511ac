//! Importance sampling for posterior marginals with four proposal families:
//! the prior (likelihood weighting), the product of marginalizer outputs,
//! sequential marginalizer proposals, and the hybrid mixture of the
//! marginalizer output with the graph conditional.
//!
//! Nodes are visited in topological order. Evidence nodes keep their value,
//! take `Q_i = 1` and contribute their likelihood `P_i`. Every other node
//! draws `x_i ~ Bernoulli(q_i)` and contributes `ln P_i - ln Q_i(x_i)` to the
//! sample's log-weight. Marginalizer outputs (trained or oracle) are clamped
//! to `[eps, 1 - eps]` before use; graph conditionals are used as is, so the
//! prior proposal reproduces likelihood weighting exactly.
//!
//! Samples are drawn in batches that advance node by node, so a sequential
//! proposal costs one batched network evaluation per node.

mod ess;
mod oracle;

use std::io::Write;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use ess::{kish_ess, kish_ess_log, WeightAccumulator};
pub use oracle::OracleCache;

use crate::bn::{BayesianNetwork, FullAssignment, NodeId, PartialState};
use crate::dataset::{encode_into, encode_node};
use crate::error::{Error, Result};
use crate::exact::{exact_posterior, MarginalVector};
use crate::parallel::Workers;
use crate::rng::{self, Rng};
use crate::um::MlpModel;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Samples advanced together through the node sequence.
pub const SAMPLE_BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum ProposalKind {
    Prior,
    MarginalProduct,
    Sequential,
    Hybrid { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalSource {
    TrainedUm,
    /// Exact conditionals in place of the network.
    OracleUm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    #[serde(flatten)]
    pub kind: ProposalKind,
    pub epsilon_clamp: f64,
    pub marginal_source: MarginalSource,
}

impl ProposalSpec {
    pub fn new(kind: ProposalKind) -> Self {
        Self { kind, epsilon_clamp: DEFAULT_EPSILON, marginal_source: MarginalSource::TrainedUm }
    }

    pub fn prior() -> Self {
        Self::new(ProposalKind::Prior)
    }

    pub fn marginal_product() -> Self {
        Self::new(ProposalKind::MarginalProduct)
    }

    pub fn sequential() -> Self {
        Self::new(ProposalKind::Sequential)
    }

    pub fn hybrid(beta: f64) -> Self {
        Self::new(ProposalKind::Hybrid { beta })
    }

    pub fn with_oracle(mut self) -> Self {
        self.marginal_source = MarginalSource::OracleUm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let ProposalKind::Hybrid { beta } = self.kind {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("beta {beta} is outside [0, 1]")));
            }
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 0.5) {
            return Err(Error::InvalidConfig(format!("epsilon {} is outside (0, 0.5)", self.epsilon_clamp)));
        }
        Ok(())
    }

    fn needs_marginalizer(&self) -> bool {
        self.kind != ProposalKind::Prior
    }

    pub fn label(&self) -> String {
        let base = match self.kind {
            ProposalKind::Prior => "prior".to_string(),
            ProposalKind::MarginalProduct => "marginal-product".to_string(),
            ProposalKind::Sequential => "sequential".to_string(),
            ProposalKind::Hybrid { beta } => format!("hybrid({beta})"),
        };
        match (self.needs_marginalizer(), self.marginal_source) {
            (true, MarginalSource::OracleUm) => format!("{base}-oracle"),
            _ => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub assignment: FullAssignment,
    pub log_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub marginals: MarginalVector,
    pub ess: f64,
    pub n_samples: usize,
    /// `sum exp(log_w - max_log_weight)`.
    pub sum_weights: f64,
    /// `sum exp(2 (log_w - max_log_weight))`.
    pub sum_sq_weights: f64,
    pub max_log_weight: f64,
}

impl EstimateResult {
    /// `ln` of the unbiased estimate of `P(evidence)`.
    pub fn log_evidence(&self) -> f64 {
        (self.sum_weights / self.n_samples as f64).ln() + self.max_log_weight
    }
}

/// `P_i` and `Q_i(x_i)` for one node of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFactor {
    pub p: f64,
    pub q: f64,
}

impl NodeFactor {
    pub fn ratio(&self) -> f64 {
        self.p / self.q
    }
}

/// A proposal bound to one network, evidence set and marginal source.
struct Sampler<'a> {
    bn: &'a BayesianNetwork,
    evidence: Vec<Option<bool>>,
    evidence_state: &'a PartialState,
    spec: ProposalSpec,
    model: Option<&'a MlpModel>,
    /// Clamped marginalizer output given the evidence alone.
    evidence_marginals: Vec<f64>,
}

/// Per-worker mutable state.
struct Scratch<'a> {
    oracle: Option<OracleCache<'a>>,
}

impl<'a> Sampler<'a> {
    fn new(
        bn: &'a BayesianNetwork,
        evidence: &'a PartialState,
        spec: &ProposalSpec,
        model: Option<&'a MlpModel>,
    ) -> Result<Self> {
        spec.validate()?;
        if evidence.len() != bn.len() {
            return Err(Error::LengthMismatch(evidence.len(), bn.len()));
        }
        let model = match (spec.needs_marginalizer(), spec.marginal_source) {
            (true, MarginalSource::TrainedUm) => {
                let m = model.ok_or(Error::ModelMissing)?;
                if m.node_count() != bn.len() {
                    return Err(Error::ShapeMismatch { expected: bn.len(), got: m.node_count() });
                }
                Some(m)
            }
            _ => None,
        };
        let mut sampler = Self {
            bn,
            evidence: evidence.states().iter().map(|s| s.value()).collect(),
            evidence_state: evidence,
            spec: *spec,
            model,
            evidence_marginals: Vec::new(),
        };
        if matches!(spec.kind, ProposalKind::MarginalProduct | ProposalKind::Hybrid { .. }) {
            let raw = match spec.marginal_source {
                MarginalSource::TrainedUm => sampler.model.expect("checked above").predict_marginals(evidence)?,
                MarginalSource::OracleUm => exact_posterior(bn, evidence)?,
            };
            sampler.evidence_marginals = raw.0.iter().map(|&p| sampler.clamp(p)).collect();
        }
        Ok(sampler)
    }

    fn scratch(&self) -> Result<Scratch<'a>> {
        let oracle = match (self.spec.kind, self.spec.marginal_source) {
            (ProposalKind::Sequential, MarginalSource::OracleUm) => Some(OracleCache::new(self.bn)?),
            _ => None,
        };
        Ok(Scratch { oracle })
    }

    #[inline]
    fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.spec.epsilon_clamp, 1.0 - self.spec.epsilon_clamp)
    }

    /// Proposal `q_i(true)` for every kind except trained sequential, which
    /// is evaluated batch-wide in [`Sampler::sample_batch`].
    fn q_true(&self, node: NodeId, values: &[bool], assigned: &[bool], scratch: &mut Scratch<'_>) -> Result<f64> {
        Ok(match self.spec.kind {
            ProposalKind::Prior => self.bn.p_true_full(node, values),
            ProposalKind::MarginalProduct => self.evidence_marginals[node.0],
            ProposalKind::Hybrid { beta } => {
                beta * self.evidence_marginals[node.0] + (1.0 - beta) * self.bn.p_true_full(node, values)
            }
            ProposalKind::Sequential => match (&mut scratch.oracle, self.model) {
                (Some(oracle), _) => self.clamp(oracle.conditional_from(node, values, assigned)?),
                (None, Some(model)) => {
                    let state = assigned_state(values, assigned);
                    self.clamp(model.predict_marginals(&state)?.get(node))
                }
                (None, None) => return Err(Error::ModelMissing),
            },
        })
    }

    fn trained_sequential(&self) -> Option<&'a MlpModel> {
        match self.spec.kind {
            ProposalKind::Sequential => self.model,
            _ => None,
        }
    }

    /// Draws `count` samples into `values` (row-major `count x N`) and `log_w`.
    fn sample_batch(
        &self,
        count: usize,
        rng: &mut Rng,
        scratch: &mut Scratch<'_>,
        values: &mut Vec<bool>,
        log_w: &mut Vec<f64>,
    ) -> Result<()> {
        let n = self.bn.len();
        values.clear();
        values.resize(count * n, false);
        log_w.clear();
        log_w.resize(count, 0.0);
        let mut assigned = vec![false; count * n];
        for (s, row) in assigned.chunks_exact_mut(n).enumerate() {
            for i in 0..n {
                if let Some(v) = self.evidence[i] {
                    row[i] = true;
                    values[s * n + i] = v;
                }
            }
        }
        let mut encoded = self.trained_sequential().map(|m| {
            let mut enc = Array2::zeros((count, 2 * n));
            for row in enc.rows_mut() {
                encode_into(self.evidence_state.states(), m.encoding(), m.priors(), row);
            }
            enc
        });

        for &node in self.bn.topological_order() {
            let i = node.0;
            if let Some(v) = self.evidence[i] {
                for s in 0..count {
                    let p = self.bn.conditional_prob_full(node, v, &values[s * n..(s + 1) * n]);
                    log_w[s] += p.ln();
                }
                continue;
            }
            let batch_q = match (&encoded, self.trained_sequential()) {
                (Some(enc), Some(model)) => Some(model.forward(enc.view())?.column(i).to_vec()),
                _ => None,
            };
            for s in 0..count {
                let row = &mut values[s * n..(s + 1) * n];
                let q = match &batch_q {
                    Some(qs) => self.clamp(qs[s]),
                    None => self.q_true(node, row, &assigned[s * n..(s + 1) * n], scratch)?,
                };
                let x = rng.random::<f64>() < q;
                let p = self.bn.conditional_prob_full(node, x, row);
                let q_x = if x { q } else { 1.0 - q };
                row[i] = x;
                assigned[s * n + i] = true;
                log_w[s] += p.ln() - q_x.ln();
            }
            if let (Some(enc), Some(model)) = (&mut encoded, self.trained_sequential()) {
                for s in 0..count {
                    let (f, v) = encode_node(values[s * n + i].into(), model.encoding(), model.priors().0[i]);
                    enc[[s, 2 * i]] = f;
                    enc[[s, 2 * i + 1]] = v;
                }
            }
        }
        Ok(())
    }

    /// Runs `total` samples in batches, handing each batch to `sink`.
    fn run<F>(&self, total: usize, rng: &mut Rng, mut sink: F) -> Result<()>
    where
        F: FnMut(&[bool], &[f64]),
    {
        let mut scratch = self.scratch()?;
        let (mut values, mut log_w) = (Vec::new(), Vec::new());
        let mut done = 0;
        while done < total {
            let count = SAMPLE_BATCH.min(total - done);
            self.sample_batch(count, rng, &mut scratch, &mut values, &mut log_w)?;
            sink(&values, &log_w);
            done += count;
        }
        Ok(())
    }
}

fn assigned_state(values: &[bool], assigned: &[bool]) -> PartialState {
    PartialState(values.iter().zip(assigned).map(|(&v, &a)| if a { v.into() } else { None.into() }).collect())
}

/// One weighted sample from the proposal.
pub fn draw_sample(
    bn: &BayesianNetwork,
    evidence: &PartialState,
    spec: &ProposalSpec,
    model: Option<&MlpModel>,
    rng: &mut Rng,
) -> Result<WeightedSample> {
    let sampler = Sampler::new(bn, evidence, spec, model)?;
    let mut scratch = sampler.scratch()?;
    let (mut values, mut log_w) = (Vec::new(), Vec::new());
    sampler.sample_batch(1, rng, &mut scratch, &mut values, &mut log_w)?;
    Ok(WeightedSample { assignment: FullAssignment(values), log_weight: log_w[0] })
}

/// Self-normalised importance-sampling estimate from `samples` draws. The
/// draws are split into one chunk per worker, chunk `w` using the stream
/// derived from `(seed, w)`; chunk statistics merge in worker order.
pub fn estimate(
    bn: &BayesianNetwork,
    evidence: &PartialState,
    spec: &ProposalSpec,
    model: Option<&MlpModel>,
    samples: usize,
    seed: u64,
    workers: &Workers,
) -> Result<EstimateResult> {
    if samples == 0 {
        return Err(Error::InvalidConfig("at least one sample is required".into()));
    }
    let sampler = Sampler::new(bn, evidence, spec, model)?;
    let n = bn.len();
    let chunks = workers.split(samples);
    let parts = workers.map(chunks.len(), |w| -> Result<WeightAccumulator> {
        let mut acc = WeightAccumulator::new(n);
        let mut rng = rng::derived(seed, w as u64);
        sampler.run(chunks[w], &mut rng, |values, log_w| {
            for (s, &lw) in log_w.iter().enumerate() {
                acc.add(lw, &values[s * n..(s + 1) * n]);
            }
        })?;
        Ok(acc)
    });
    let mut total = WeightAccumulator::new(n);
    for part in parts {
        total.merge(part?);
    }
    total.finish(evidence)
}

/// The same draws [`estimate`] would make, returned individually.
pub fn weighted_samples(
    bn: &BayesianNetwork,
    evidence: &PartialState,
    spec: &ProposalSpec,
    model: Option<&MlpModel>,
    samples: usize,
    seed: u64,
    workers: &Workers,
) -> Result<Vec<WeightedSample>> {
    let sampler = Sampler::new(bn, evidence, spec, model)?;
    let n = bn.len();
    let chunks = workers.split(samples);
    let parts = workers.map(chunks.len(), |w| -> Result<Vec<WeightedSample>> {
        let mut out = Vec::with_capacity(chunks[w]);
        let mut rng = rng::derived(seed, w as u64);
        sampler.run(chunks[w], &mut rng, |values, log_w| {
            for (s, &lw) in log_w.iter().enumerate() {
                out.push(WeightedSample {
                    assignment: FullAssignment(values[s * n..(s + 1) * n].to_vec()),
                    log_weight: lw,
                });
            }
        })?;
        Ok(out)
    });
    let mut all = Vec::with_capacity(samples);
    for part in parts {
        all.extend(part?);
    }
    Ok(all)
}

/// Evaluates `P_i` and `Q_i(x_i)` node by node for a given assignment.
pub fn proposal_factors(
    bn: &BayesianNetwork,
    evidence: &PartialState,
    spec: &ProposalSpec,
    model: Option<&MlpModel>,
    x: &FullAssignment,
) -> Result<Vec<NodeFactor>> {
    if x.len() != bn.len() {
        return Err(Error::LengthMismatch(x.len(), bn.len()));
    }
    let sampler = Sampler::new(bn, evidence, spec, model)?;
    let mut scratch = sampler.scratch()?;
    let mut assigned: Vec<bool> = sampler.evidence.iter().map(Option::is_some).collect();
    let mut factors = vec![NodeFactor { p: 1.0, q: 1.0 }; bn.len()];
    for &node in bn.topological_order() {
        let i = node.0;
        let v = x.get(node);
        let p = bn.conditional_prob_full(node, v, x.values());
        if let Some(e) = sampler.evidence[i] {
            if e != v {
                return Err(Error::InvalidConfig(format!("assignment disagrees with evidence at node {i}")));
            }
            factors[i] = NodeFactor { p, q: 1.0 };
            continue;
        }
        let q = sampler.q_true(node, x.values(), &assigned, &mut scratch)?;
        factors[i] = NodeFactor { p, q: if v { q } else { 1.0 - q } };
        assigned[i] = true;
    }
    Ok(factors)
}

pub fn weight_variance(samples: &[WeightedSample]) -> f64 {
    let n = samples.len() as f64;
    let w: Vec<f64> = samples.iter().map(|s| s.log_weight.exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

pub fn write_weights_csv<W: Write>(samples: &[WeightedSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "log_weight"])?;
    for (i, s) in samples.iter().enumerate() {
        w.write_record([i.to_string(), s.log_weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable summary of one inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec: ProposalSpec,
    #[serde(rename = "M")]
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
    pub ess: f64,
    pub max_log_weight: f64,
    pub log_evidence: f64,
    pub marginals: Vec<NamedMarginal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMarginal {
    pub node: String,
    pub p: f64,
}

impl RunReport {
    pub fn new(bn: &BayesianNetwork, spec: ProposalSpec, seed: u64, workers: usize, result: &EstimateResult) -> Self {
        Self {
            spec,
            samples: result.n_samples,
            seed,
            workers,
            ess: result.ess,
            max_log_weight: result.max_log_weight,
            log_evidence: result.log_evidence(),
            marginals: bn
                .nodes()
                .iter()
                .zip(&result.marginals.0)
                .map(|(node, &p)| NamedMarginal { node: node.name.clone(), p })
                .collect(),
            wall_time_ms: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bn::fixtures::{appendix_b, appendix_b_evidence, chain3};
    use crate::bn::random_bn;
    use crate::dataset::{compute_priors, EncodingMode};
    use crate::exact::evidence_probability;

    fn zero_model(bn: &BayesianNetwork) -> MlpModel {
        let n = bn.len();
        MlpModel::init(&[2 * n, 16, n], EncodingMode::FlagPlusPrior, compute_priors(bn).clone(), 9).unwrap()
    }

    #[test]
    fn prior_without_evidence_has_zero_log_weights() {
        let bn = random_bn(10, 3, 0.4, 3).unwrap();
        let ev = PartialState::unobserved(10);
        let s = weighted_samples(&bn, &ev, &ProposalSpec::prior(), None, 2000, 1, &Workers::default()).unwrap();
        assert!(s.iter().all(|s| s.log_weight == 0.0));
    }

    #[test]
    fn sequential_oracle_weights_are_constant() {
        let bn = random_bn(9, 3, 0.5, 12).unwrap();
        let ev = PartialState::unobserved(9).with(NodeId(8), true).with(NodeId(5), false);
        let pe = evidence_probability(&bn, &ev).unwrap();
        let spec = ProposalSpec::sequential().with_oracle();
        let s = weighted_samples(&bn, &ev, &spec, None, 300, 4, &Workers::default()).unwrap();
        for w in &s {
            assert!((w.log_weight - pe.ln()).abs() < 1e-9);
        }
        let r = estimate(&bn, &ev, &spec, None, 300, 4, &Workers::default()).unwrap();
        assert!((r.ess - 300.0).abs() < 300.0 * 1e-6);
    }

    #[test]
    fn appendix_b_factor_is_one_thousand() {
        let bn = appendix_b();
        let ev = appendix_b_evidence();
        let spec = ProposalSpec::marginal_product().with_oracle();
        let x = FullAssignment(vec![true, true, true]);
        let f = proposal_factors(&bn, &ev, &spec, None, &x).unwrap();
        assert_eq!(f[1].ratio(), 1000.0);
    }

    #[test]
    fn draw_sample_weight_matches_factors() {
        let bn = random_bn(8, 2, 0.5, 6).unwrap();
        let model = zero_model(&bn);
        let ev = PartialState::unobserved(8).with(NodeId(7), true);
        for spec in [ProposalSpec::prior(), ProposalSpec::hybrid(0.3), ProposalSpec::sequential(), ProposalSpec::marginal_product()] {
            let mut rng = rng::seeded(2);
            for _ in 0..20 {
                let s = draw_sample(&bn, &ev, &spec, Some(&model), &mut rng).unwrap();
                let f = proposal_factors(&bn, &ev, &spec, Some(&model), &s.assignment).unwrap();
                let lw: f64 = f.iter().map(|f| f.p.ln() - f.q.ln()).sum();
                assert!((lw - s.log_weight).abs() < 1e-12, "{}", spec.label());
                assert!(s.assignment.get(NodeId(7)));
            }
        }
    }

    #[test]
    fn single_sample_estimate() {
        let bn = chain3();
        let ev = PartialState::unobserved(3);
        let r = estimate(&bn, &ev, &ProposalSpec::prior(), None, 1, 5, &Workers::default()).unwrap();
        let s = weighted_samples(&bn, &ev, &ProposalSpec::prior(), None, 1, 5, &Workers::default()).unwrap();
        let expect: Vec<f64> = s[0].assignment.values().iter().map(|&v| f64::from(u8::from(v))).collect();
        assert_eq!(r.marginals.0, expect);
        assert_eq!(r.ess, 1.0);
    }

    #[test]
    fn missing_model_and_bad_specs() {
        let bn = chain3();
        let ev = PartialState::unobserved(3);
        assert!(matches!(
            estimate(&bn, &ev, &ProposalSpec::sequential(), None, 10, 1, &Workers::default()),
            Err(Error::ModelMissing)
        ));
        assert!(matches!(
            estimate(&bn, &ev, &ProposalSpec::hybrid(1.5), None, 10, 1, &Workers::default()),
            Err(Error::InvalidConfig(_))
        ));
        let mut spec = ProposalSpec::prior();
        spec.epsilon_clamp = 0.5;
        assert!(spec.validate().is_err());
        let other = zero_model(&random_bn(4, 1, 0.5, 1).unwrap());
        assert!(matches!(
            estimate(&bn, &ev, &ProposalSpec::hybrid(0.5), Some(&other), 10, 1, &Workers::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn spec_json_shape() {
        let json = serde_json::to_string(&ProposalSpec::hybrid(0.25)).unwrap();
        assert_eq!(json, r#"{"variant":"hybrid","beta":0.25,"epsilon_clamp":1e-6,"marginal_source":"trained-um"}"#);
    }
}
