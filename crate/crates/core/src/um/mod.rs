//! The universal marginalizer: one network mapping an encoded partial state
//! to estimates of every node's posterior marginal.

mod adam;
mod io;
mod mlp;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use adam::{adam_update, AdamConfig, AdamState};
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use mlp::{bce_loss, Dropout, ForwardPass, Layer, Mlp, PROB_CLAMP};

use crate::bn::{BayesianNetwork, PartialState};
use crate::dataset::{compute_priors, encode_batch, training_batch, EncodingMode, TrainingBatch};
use crate::error::{Error, Result};
use crate::exact::MarginalVector;
use crate::harness::{evaluate_model, EvidenceCase, ModelMetrics};
use crate::parallel::Workers;
use crate::rng::{self, Rng};

pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    net: Mlp,
    dropout_rate: f64,
    encoding: EncodingMode,
    priors: MarginalVector,
}

impl MlpModel {
    /// `layer_sizes` must run from `2N` to `N`, with `N = priors.len()`.
    pub fn init(layer_sizes: &[usize], encoding: EncodingMode, priors: MarginalVector, seed: u64) -> Result<Self> {
        Self::check_sizes(layer_sizes, priors.len())?;
        Ok(Self { net: Mlp::new(layer_sizes, seed)?, dropout_rate: DEFAULT_DROPOUT, encoding, priors })
    }

    /// All-zero parameters: every output is 0.5.
    pub fn zeroed(layer_sizes: &[usize], encoding: EncodingMode, priors: MarginalVector) -> Result<Self> {
        Self::check_sizes(layer_sizes, priors.len())?;
        Ok(Self { net: Mlp::zeros(layer_sizes)?, dropout_rate: DEFAULT_DROPOUT, encoding, priors })
    }

    pub(crate) fn from_parts(net: Mlp, dropout_rate: f64, encoding: EncodingMode, priors: MarginalVector) -> Result<Self> {
        Self::check_sizes(&net.layer_sizes(), priors.len())?;
        Ok(Self { net, dropout_rate, encoding, priors })
    }

    fn check_sizes(sizes: &[usize], n: usize) -> Result<()> {
        let (Some(&first), Some(&last)) = (sizes.first(), sizes.last()) else {
            return Err(Error::InvalidArchitecture("empty layer list".into()));
        };
        if sizes.len() < 2 || first != 2 * n || last != n {
            return Err(Error::InvalidArchitecture(format!(
                "layer sizes {sizes:?} must start at {} and end at {n}",
                2 * n
            )));
        }
        Ok(())
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} must be in [0, 1)")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn node_count(&self) -> usize {
        self.priors.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.net.layer_sizes()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn encoding(&self) -> EncodingMode {
        self.encoding
    }

    pub fn priors(&self) -> &MarginalVector {
        &self.priors
    }

    /// Evaluation-mode forward pass on already encoded rows.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.net.predict(inputs)
    }

    pub fn forward_train(&self, inputs: ArrayView2<'_, f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        Ok(self.net.forward(inputs, Dropout::Random { rate: self.dropout_rate, rng })?.output)
    }

    fn check_state(&self, state: &PartialState) -> Result<()> {
        if state.len() != self.node_count() {
            return Err(Error::ShapeMismatch { expected: self.node_count(), got: state.len() });
        }
        Ok(())
    }

    /// Marginal estimates with observed entries pinned to their evidence.
    pub fn predict_marginals(&self, state: &PartialState) -> Result<MarginalVector> {
        Ok(self.predict_batch(std::slice::from_ref(state))?.remove(0))
    }

    pub fn predict_batch(&self, states: &[PartialState]) -> Result<Vec<MarginalVector>> {
        for s in states {
            self.check_state(s)?;
        }
        let out = self.forward(encode_batch(states, self.encoding, &self.priors).view())?;
        Ok(states
            .iter()
            .zip(out.rows())
            .map(|(s, row)| {
                let mut m = MarginalVector(row.to_vec());
                m.pin(s);
                m
            })
            .collect())
    }
}

/// One optimisation step on `batch`; returns the batch loss before the update.
pub fn train_step(model: &mut MlpModel, adam: &mut AdamState, batch: &TrainingBatch, rng: &mut Rng) -> Result<f64> {
    let rate = model.dropout_rate;
    let dropout = if rate > 0.0 { Dropout::Random { rate, rng } } else { Dropout::Off };
    let pass = model.net.forward(batch.inputs.view(), dropout)?;
    let loss = bce_loss(pass.output.view(), batch.targets.view());
    let grads = model.net.backward(&pass, batch.targets.view())?;
    for (i, g) in grads.iter().enumerate() {
        if let Some(bad) = g.weights.iter().chain(g.biases.iter()).find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                iteration: adam.step as usize,
                detail: format!("layer {i} gradient entry {bad}, batch loss {loss}"),
            });
        }
    }
    adam.apply(model.net.layers_mut(), &grads);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths; input `2N` and output `N` are implied.
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub batch_size: usize,
    pub encoding: EncodingMode,
    pub seed: u64,
    pub dropout: f64,
    pub adam: AdamConfig,
    /// Loss is recorded as the mean over each window of this many iterations.
    pub log_every: usize,
    /// Size of a fixed held-out batch scored in eval mode at each log point (0 disables).
    pub heldout_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            iterations: 20_000,
            batch_size: 256,
            encoding: EncodingMode::FlagPlusPrior,
            seed: 0,
            dropout: DEFAULT_DROPOUT,
            adam: AdamConfig::default(),
            log_every: 100,
            heldout_size: 0,
        }
    }
}

impl TrainConfig {
    pub fn layer_sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes = vec![2 * n];
        sizes.extend(&self.hidden);
        sizes.push(n);
        sizes
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    /// `(iteration, mean training BCE over the preceding window)`.
    pub loss_curve: Vec<(usize, f64)>,
    /// `(iteration, eval-mode BCE on the held-out batch)`.
    pub heldout_curve: Vec<(usize, f64)>,
    pub eval: Option<ModelMetrics>,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (it, loss) in &self.loss_curve {
            s.push_str(&format!("{it},{loss}\n"));
        }
        s
    }
}

const BATCH_BLOCK: usize = 32;

/// Trains a fresh model on batches streamed from the network. Batch `t` is
/// generated from its own derived seed, so the run is reproducible for a
/// given seed whatever the worker count used to produce batches.
pub fn train(
    bn: &BayesianNetwork,
    config: &TrainConfig,
    test_set: Option<&[EvidenceCase]>,
    workers: &Workers,
) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    let n = bn.len();
    let priors = compute_priors(bn).clone();
    let mut model = MlpModel::init(&config.layer_sizes(n), config.encoding, priors.clone(), rng::derive_seed(config.seed, 0))?
        .with_dropout(config.dropout)?;
    let mut adam = AdamState::new(model.net.layers(), config.adam);
    let data_seed = rng::derive_seed(config.seed, 1);
    let mut dropout_rng = rng::derived(config.seed, 2);
    let heldout = (config.heldout_size > 0).then(|| {
        training_batch(bn, config.heldout_size, config.encoding, &priors, &mut rng::derived(config.seed, 3))
    });

    let mut report = TrainReport { iterations: config.iterations, loss_curve: Vec::new(), heldout_curve: Vec::new(), eval: None };
    let mut window_sum = 0.0;
    let mut window_len = 0usize;
    let mut it = 0usize;
    while it < config.iterations {
        let block = BATCH_BLOCK.min(config.iterations - it);
        let batches = workers.map(block, |k| {
            let mut r = rng::derived(data_seed, (it + k) as u64);
            training_batch(bn, config.batch_size, config.encoding, &priors, &mut r)
        });
        for batch in &batches {
            window_sum += train_step(&mut model, &mut adam, batch, &mut dropout_rng)?;
            window_len += 1;
            it += 1;
            if it.is_multiple_of(config.log_every) || it == config.iterations {
                report.loss_curve.push((it, window_sum / window_len as f64));
                window_sum = 0.0;
                window_len = 0;
                if let Some(h) = &heldout {
                    report.heldout_curve.push((it, model.net.loss(h.inputs.view(), h.targets.view())?));
                }
            }
        }
    }
    if let Some(cases) = test_set {
        if !cases.is_empty() {
            report.eval = Some(evaluate_model(&model, cases, true)?);
        }
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bn::{fixtures::chain3, NodeId};
    use ndarray::Array2;

    fn chain_priors() -> MarginalVector {
        compute_priors(&chain3()).clone()
    }

    #[test]
    fn init_contracts() {
        let m = MlpModel::init(&[6, 64, 3], EncodingMode::TwoBit, chain_priors(), 1).unwrap();
        assert_eq!(m, MlpModel::init(&[6, 64, 3], EncodingMode::TwoBit, chain_priors(), 1).unwrap());
        assert!(m.net().layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        assert!(matches!(
            MlpModel::init(&[5, 64, 3], EncodingMode::TwoBit, chain_priors(), 1),
            Err(Error::InvalidArchitecture(_))
        ));
        assert!(matches!(
            MlpModel::init(&[6, 64, 2], EncodingMode::TwoBit, chain_priors(), 1),
            Err(Error::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn init_outputs_near_half() {
        let bn = crate::bn::random_bn(20, 3, 0.3, 5).unwrap();
        let priors = compute_priors(&bn).clone();
        let m = MlpModel::init(&[40, 256, 20], EncodingMode::FlagPlusPrior, priors.clone(), 11).unwrap();
        let batch = training_batch(&bn, 200, EncodingMode::FlagPlusPrior, &priors, &mut rng::seeded(2));
        let out = m.forward(batch.inputs.view()).unwrap();
        assert!(out.iter().all(|&p| p > 0.2 && p < 0.8));
    }

    #[test]
    fn zeroed_model_and_pinning() {
        let m = MlpModel::zeroed(&[6, 8, 3], EncodingMode::TwoBit, chain_priors()).unwrap();
        assert_eq!(m.predict_marginals(&PartialState::unobserved(3)).unwrap().0, vec![0.5; 3]);
        let s = PartialState::unobserved(3).with(NodeId(1), true).with(NodeId(2), false);
        assert_eq!(m.predict_marginals(&s).unwrap().0, vec![0.5, 1.0, 0.0]);
        assert!(matches!(
            m.predict_marginals(&PartialState::unobserved(4)),
            Err(Error::ShapeMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let m = MlpModel::init(&[6, 16, 3], EncodingMode::TwoBit, chain_priors(), 3).unwrap();
        let x = Array2::from_shape_fn((4, 6), |(i, j)| ((i + j) % 2) as f64);
        assert_eq!(m.forward(x.view()).unwrap(), m.forward(x.view()).unwrap());
    }

    #[test]
    fn train_step_is_deterministic() {
        let bn = chain3();
        let priors = chain_priors();
        let batch = training_batch(&bn, 16, EncodingMode::TwoBit, &priors, &mut rng::seeded(1));
        let run = || {
            let mut m = MlpModel::init(&[6, 16, 3], EncodingMode::TwoBit, priors.clone(), 3).unwrap();
            let mut a = AdamState::new(m.net().layers(), AdamConfig::default());
            let loss = train_step(&mut m, &mut a, &batch, &mut rng::seeded(4)).unwrap();
            (m, a, loss)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let bn = chain3();
        let priors = chain_priors();
        let mut batch = training_batch(&bn, 4, EncodingMode::TwoBit, &priors, &mut rng::seeded(1));
        batch.inputs[[0, 0]] = f64::NAN;
        let mut m = MlpModel::init(&[6, 4, 3], EncodingMode::TwoBit, priors, 3).unwrap();
        let mut a = AdamState::new(m.net().layers(), AdamConfig::default());
        assert!(matches!(
            train_step(&mut m, &mut a, &batch, &mut rng::seeded(4)),
            Err(Error::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn zero_iterations_returns_init() {
        let bn = chain3();
        let cfg = TrainConfig { hidden: vec![8], iterations: 0, seed: 5, ..TrainConfig::default() };
        let (m, report) = train(&bn, &cfg, None, &Workers::default()).unwrap();
        assert!(report.loss_curve.is_empty());
        let fresh = MlpModel::init(&[6, 8, 3], cfg.encoding, chain_priors(), rng::derive_seed(5, 0)).unwrap();
        assert_eq!(m, fresh);
    }

    #[test]
    fn batch_producers_do_not_change_training() {
        let bn = chain3();
        let cfg = TrainConfig { hidden: vec![8], iterations: 70, batch_size: 8, seed: 2, ..TrainConfig::default() };
        let (a, ra) = train(&bn, &cfg, None, &Workers::sequential(1)).unwrap();
        let (b, rb) = train(&bn, &cfg, None, &Workers::threaded(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.loss_curve.iter().map(|p| p.0).collect::<Vec<_>>(), vec![70]);
    }

    #[test]
    fn single_node_learns_its_prior() {
        let bn = BayesianNetwork::new(vec![crate::bn::Node {
            id: NodeId(0),
            name: "A".into(),
            parents: vec![],
            cpt: crate::bn::Cpt::new(0, vec![0.7]).unwrap(),
            deterministic: false,
        }])
        .unwrap();
        let cfg = TrainConfig { hidden: vec![8], iterations: 3000, batch_size: 64, seed: 9, heldout_size: 4096, log_every: 500, ..TrainConfig::default() };
        let (m, report) = train(&bn, &cfg, None, &Workers::default()).unwrap();
        let p = m.predict_marginals(&PartialState::unobserved(1)).unwrap().0[0];
        assert!((p - 0.7).abs() < 0.02, "{p}");
        let entropy = -(0.7f64 * 0.7f64.ln() + 0.3 * 0.3f64.ln());
        let (_, last) = *report.heldout_curve.last().unwrap();
        // the held-out batch mixes observed and unobserved rows, so the loss sits below H(0.7)
        assert!(last < entropy + 0.01, "{last}");
    }

    #[test]
    fn chain_marginals_are_learned() {
        let bn = chain3();
        let cfg = TrainConfig { hidden: vec![64], iterations: 5000, seed: 4, ..TrainConfig::default() };
        let cases = crate::harness::build_test_set(&bn, 50, &mut rng::seeded(8)).unwrap();
        let (_, report) = train(&bn, &cfg, Some(&cases), &Workers::default()).unwrap();
        let eval = report.eval.unwrap();
        assert!(eval.mae < 0.05, "{eval:?}");
        let first = report.loss_curve.first().unwrap().1;
        let last = report.loss_curve.last().unwrap().1;
        assert!(last < first);
    }
}
