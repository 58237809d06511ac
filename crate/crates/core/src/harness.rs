//! Evaluation metrics, evidence test sets and the sweeps behind the
//! experiment tables.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bn::{fixtures, BayesianNetwork, FullAssignment, NodeId, PartialState};
use crate::dataset::EncodingMode;
use crate::error::{Error, Result};
use crate::exact::{exact_posterior, MarginalVector, DEFAULT_EXACT_LIMIT};
use crate::parallel::Workers;
use crate::proposals::{estimate, proposal_factors, weight_variance, weighted_samples, ProposalSpec};
use crate::rng::{self, Rng};
use crate::um::{train, MlpModel, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceCase {
    pub evidence: PartialState,
    pub truth: MarginalVector,
}

/// Evidence from forward samples: reveal `ceil(f N)` random nodes of an
/// ancestral sample, `f ~ U[0.1, 0.5]`, and score against the exact posterior.
pub fn build_test_set(bn: &BayesianNetwork, n_cases: usize, rng: &mut Rng) -> Result<Vec<EvidenceCase>> {
    if bn.len() > DEFAULT_EXACT_LIMIT {
        return Err(Error::TooLarge { nodes: bn.len(), limit: DEFAULT_EXACT_LIMIT });
    }
    let n = bn.len();
    let mut cases = Vec::with_capacity(n_cases);
    while cases.len() < n_cases {
        let x = bn.ancestral_sample(rng);
        let f: f64 = rng.random_range(0.1..=0.5);
        let k = ((f * n as f64).ceil() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut evidence = PartialState::unobserved(n);
        for &i in &order[..k] {
            evidence.set(NodeId(i), x.get(NodeId(i)).into());
        }
        match exact_posterior(bn, &evidence) {
            Ok(truth) => cases.push(EvidenceCase { evidence, truth }),
            Err(Error::ImpossibleEvidence) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(cases)
}

/// Which nodes a metric is computed over.
#[derive(Debug, Clone, Copy)]
pub enum Scope<'a> {
    AllNodes,
    Unobserved(&'a PartialState),
}

impl Scope<'_> {
    fn pairs<'v>(&self, pred: &'v MarginalVector, truth: &'v MarginalVector) -> Result<Vec<(f64, f64)>> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch(pred.len(), truth.len()));
        }
        let keep = |i: usize| match self {
            Scope::AllNodes => true,
            Scope::Unobserved(ev) => !ev.states()[i].is_observed(),
        };
        Ok((0..pred.len()).filter(|&i| keep(i)).map(|i| (pred.0[i], truth.0[i])).collect())
    }

    pub fn for_case(all_nodes: bool, case: &EvidenceCase) -> Scope<'_> {
        if all_nodes {
            Scope::AllNodes
        } else {
            Scope::Unobserved(&case.evidence)
        }
    }
}

pub fn mae(pred: &MarginalVector, truth: &MarginalVector, scope: Scope<'_>) -> Result<f64> {
    let pairs = scope.pairs(pred, truth)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / pairs.len() as f64)
}

pub fn max_abs_error(pred: &MarginalVector, truth: &MarginalVector, scope: Scope<'_>) -> Result<f64> {
    let pairs = scope.pairs(pred, truth)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(pairs.iter().map(|(p, t)| (p - t).abs()).fold(0.0, f64::max))
}

/// Per-case maximum absolute error, averaged over cases.
pub fn max_ae(items: &[(&MarginalVector, &MarginalVector, Scope<'_>)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (p, t, s) in items {
        total += max_abs_error(p, t, *s)?;
    }
    Ok(total / items.len() as f64)
}

pub fn pearson(pred: &MarginalVector, truth: &MarginalVector, scope: Scope<'_>) -> Result<f64> {
    let pairs = scope.pairs(pred, truth)?;
    if pairs.len() < 2 {
        return Err(Error::DegenerateInput);
    }
    let n = pairs.len() as f64;
    let (mp, mt) = pairs.iter().fold((0.0, 0.0), |(a, b), (p, t)| (a + p / n, b + t / n));
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in &pairs {
        cov += (p - mp) * (t - mt);
        vp += (p - mp).powi(2);
        vt += (t - mt).powi(2);
    }
    if vp <= 0.0 || vt <= 0.0 {
        return Err(Error::DegenerateInput);
    }
    Ok((cov / (vp.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub mae: f64,
    pub max_ae: f64,
    /// Mean over cases where the correlation is defined; NaN if none.
    pub pearson: f64,
    pub cases: usize,
}

pub fn evaluate_predictions(preds: &[MarginalVector], cases: &[EvidenceCase], all_nodes: bool) -> Result<ModelMetrics> {
    if preds.len() != cases.len() {
        return Err(Error::LengthMismatch(preds.len(), cases.len()));
    }
    if cases.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut mae_sum = 0.0;
    let mut items = Vec::with_capacity(cases.len());
    let (mut r_sum, mut r_count) = (0.0, 0usize);
    for (p, c) in preds.iter().zip(cases) {
        let scope = Scope::for_case(all_nodes, c);
        mae_sum += mae(p, &c.truth, scope)?;
        items.push((p, &c.truth, scope));
        match pearson(p, &c.truth, scope) {
            Ok(r) => {
                r_sum += r;
                r_count += 1;
            }
            Err(Error::DegenerateInput) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(ModelMetrics {
        mae: mae_sum / cases.len() as f64,
        max_ae: max_ae(&items)?,
        pearson: if r_count > 0 { r_sum / r_count as f64 } else { f64::NAN },
        cases: cases.len(),
    })
}

pub fn evaluate_model(model: &MlpModel, cases: &[EvidenceCase], unobserved_only: bool) -> Result<ModelMetrics> {
    let states: Vec<PartialState> = cases.iter().map(|c| c.evidence.clone()).collect();
    let preds = model.predict_batch(&states)?;
    evaluate_predictions(&preds, cases, !unobserved_only)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub encoding: EncodingMode,
}

impl ArchConfig {
    pub fn label(&self) -> String {
        let inner: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!("({})", inner.join(","))
    }

    /// Hidden widths {64, 256, (128, 128)} under both encodings.
    pub fn desk_grid() -> Vec<ArchConfig> {
        let mut out = Vec::new();
        for hidden in [vec![64], vec![256], vec![128, 128]] {
            for encoding in [EncodingMode::TwoBit, EncodingMode::FlagPlusPrior] {
                out.push(ArchConfig { hidden: hidden.clone(), encoding });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub encoding: Option<EncodingMode>,
    pub beta: Option<f64>,
    pub mae: f64,
    pub max_ae: f64,
    pub pearson: f64,
    pub ess: Option<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Sequential proposals with exact conditionals, as a sanity anchor.
    pub reference: Vec<SweepRow>,
}

/// Trains every configuration from the same base seed and scores it on the
/// test set.
pub fn architecture_sweep(
    bn: &BayesianNetwork,
    test_set: &[EvidenceCase],
    configs: &[ArchConfig],
    base: &TrainConfig,
    all_nodes: bool,
    workers: &Workers,
) -> Result<SweepResult> {
    let rows = workers.map(configs.len(), |k| -> Result<SweepRow> {
        let cfg = &configs[k];
        let tc = TrainConfig { hidden: cfg.hidden.clone(), encoding: cfg.encoding, ..base.clone() };
        let (model, _) = train(bn, &tc, None, &Workers::sequential(1))?;
        let states: Vec<PartialState> = test_set.iter().map(|c| c.evidence.clone()).collect();
        let m = evaluate_predictions(&model.predict_batch(&states)?, test_set, all_nodes)?;
        Ok(SweepRow {
            label: cfg.label(),
            encoding: Some(cfg.encoding),
            beta: None,
            mae: m.mae,
            max_ae: m.max_ae,
            pearson: m.pearson,
            ess: None,
            n_samples: tc.iterations * tc.batch_size,
        })
    });
    Ok(SweepResult { rows: rows.into_iter().collect::<Result<_>>()?, reference: Vec::new() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepOptions {
    pub betas: Vec<f64>,
    pub sample_counts: Vec<usize>,
    pub seed: u64,
    pub all_nodes: bool,
    /// Adds sequential-oracle rows at each sample count.
    pub oracle_reference: bool,
}

fn score_estimates(
    bn: &BayesianNetwork,
    model: Option<&MlpModel>,
    test_set: &[EvidenceCase],
    spec: ProposalSpec,
    samples: usize,
    opts: &BetaSweepOptions,
    workers: &Workers,
) -> Result<SweepRow> {
    let per_case = workers.map(test_set.len(), |c| {
        let case = &test_set[c];
        let seed = rng::derive_seed(opts.seed, c as u64);
        estimate(bn, &case.evidence, &spec, model, samples, seed, &Workers::sequential(1))
    });
    let mut preds = Vec::with_capacity(test_set.len());
    let mut ess = 0.0;
    for r in per_case {
        let r = r?;
        ess += r.ess;
        preds.push(r.marginals);
    }
    let m = evaluate_predictions(&preds, test_set, opts.all_nodes)?;
    Ok(SweepRow {
        label: spec.label(),
        encoding: None,
        beta: match spec.kind {
            crate::proposals::ProposalKind::Hybrid { beta } => Some(beta),
            _ => None,
        },
        mae: m.mae,
        max_ae: m.max_ae,
        pearson: m.pearson,
        ess: Some(ess / test_set.len() as f64),
        n_samples: samples,
    })
}

/// Hybrid proposals for every `(beta, M)` pair, averaged over the test set.
/// Case `c` uses the stream derived from `(seed, c)` for every pair.
pub fn beta_sweep(
    bn: &BayesianNetwork,
    model: &MlpModel,
    test_set: &[EvidenceCase],
    opts: &BetaSweepOptions,
    workers: &Workers,
) -> Result<SweepResult> {
    if test_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = SweepResult::default();
    for &beta in &opts.betas {
        for &m in &opts.sample_counts {
            out.rows.push(score_estimates(bn, Some(model), test_set, ProposalSpec::hybrid(beta), m, opts, workers)?);
        }
    }
    if opts.oracle_reference {
        for &m in &opts.sample_counts {
            let spec = ProposalSpec::sequential().with_oracle();
            out.reference.push(score_estimates(bn, None, test_set, spec, m, opts, workers)?);
        }
    }
    Ok(out)
}

fn encoding_label(e: Option<EncodingMode>) -> &'static str {
    e.map_or("", EncodingMode::label)
}

/// `config,encoding,mae,max_ae`
pub fn table1_csv(result: &SweepResult) -> String {
    let mut s = String::from("config,encoding,mae,max_ae\n");
    for r in &result.rows {
        let _ = writeln!(s, "\"{}\",{},{},{}", r.label, encoding_label(r.encoding), r.mae, r.max_ae);
    }
    s
}

/// `beta,samples,pearson,ess`
pub fn fig1_csv(result: &SweepResult) -> String {
    let mut s = String::from("beta,samples,pearson,ess\n");
    for r in &result.rows {
        let beta = r.beta.map_or_else(|| r.label.clone(), |b| b.to_string());
        let _ = writeln!(s, "{beta},{},{},{}", r.n_samples, r.pearson, r.ess.unwrap_or(f64::NAN));
    }
    s
}

/// `beta,ess` at the largest sample count.
pub fn ess_csv(result: &SweepResult) -> String {
    let max_m = result.rows.iter().map(|r| r.n_samples).max().unwrap_or(0);
    let mut s = String::from("beta,ess\n");
    for r in result.rows.iter().filter(|r| r.n_samples == max_m) {
        let beta = r.beta.map_or_else(|| r.label.clone(), |b| b.to_string());
        let _ = writeln!(s, "{beta},{}", r.ess.unwrap_or(f64::NAN));
    }
    s
}

/// Weight behaviour of the marginal-product proposal on the deterministic
/// copy fixture, against sequential proposals with exact conditionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathologyReport {
    /// `P(Xj=1 | Xi=1) / Q(Xj=1)` on the `(Xi, Xj) = (1, 1)` event.
    pub copy_factor: f64,
    pub samples: usize,
    pub variance_marginal_product: f64,
    pub variance_sequential: f64,
    pub variance_ratio: f64,
    pub ess_marginal_product: f64,
    pub ess_sequential: f64,
}

pub fn pathology(samples: usize, seed: u64, workers: &Workers) -> Result<PathologyReport> {
    let bn = fixtures::appendix_b();
    let ev = fixtures::appendix_b_evidence();
    let naive = ProposalSpec::marginal_product().with_oracle();
    let seq = ProposalSpec::sequential().with_oracle();
    let x11 = FullAssignment(vec![true, true, true]);
    let copy_factor = proposal_factors(&bn, &ev, &naive, None, &x11)?[1].ratio();
    let a = weighted_samples(&bn, &ev, &naive, None, samples, rng::derive_seed(seed, 0), workers)?;
    let b = weighted_samples(&bn, &ev, &seq, None, samples, rng::derive_seed(seed, 1), workers)?;
    let (va, vb) = (weight_variance(&a), weight_variance(&b));
    let logs = |s: &[crate::proposals::WeightedSample]| s.iter().map(|w| w.log_weight).collect::<Vec<_>>();
    Ok(PathologyReport {
        copy_factor,
        samples,
        variance_marginal_product: va,
        variance_sequential: vb,
        variance_ratio: if vb > 0.0 { va / vb } else { f64::INFINITY },
        ess_marginal_product: crate::proposals::kish_ess_log(&logs(&a))?,
        ess_sequential: crate::proposals::kish_ess_log(&logs(&b))?,
    })
}

pub fn pathology_csv(r: &PathologyReport) -> String {
    format!(
        "proposal,samples,weight_variance,ess\nmarginal-product,{},{},{}\nsequential-oracle,{},{},{}\n",
        r.samples, r.variance_marginal_product, r.ess_marginal_product, r.samples, r.variance_sequential, r.ess_sequential
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bn::random_bn;

    fn mv(v: &[f64]) -> MarginalVector {
        MarginalVector(v.to_vec())
    }

    #[test]
    fn mae_examples() {
        let t = mv(&[0.3, 0.1]);
        assert_eq!(mae(&t, &t, Scope::AllNodes).unwrap(), 0.0);
        assert_eq!(mae(&mv(&[0.0, 0.0]), &mv(&[1.0, 1.0]), Scope::AllNodes).unwrap(), 1.0);
        assert!((mae(&mv(&[0.2, 0.4]), &t, Scope::AllNodes).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(mae(&mv(&[0.2]), &t, Scope::AllNodes), Err(Error::LengthMismatch(1, 2))));
        let ev = PartialState::unobserved(2).with(NodeId(1), true);
        assert!((mae(&mv(&[0.2, 0.4]), &t, Scope::Unobserved(&ev)).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn max_ae_examples() {
        let t = mv(&[0.5, 0.5]);
        assert_eq!(max_ae(&[(&t, &t, Scope::AllNodes)]).unwrap(), 0.0);
        let p = mv(&[0.6, 0.1]);
        assert!((max_ae(&[(&p, &t, Scope::AllNodes)]).unwrap() - 0.4).abs() < 1e-15);
        let (p1, p2) = (mv(&[0.7, 0.5]), mv(&[0.5, 0.9]));
        let two = max_ae(&[(&p1, &t, Scope::AllNodes), (&p2, &t, Scope::AllNodes)]).unwrap();
        assert!((two - 0.3).abs() < 1e-15);
        assert!(matches!(max_ae(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn pearson_examples() {
        let t = mv(&[0.1, 0.5, 0.3, 0.9]);
        assert!((pearson(&t, &t, Scope::AllNodes).unwrap() - 1.0).abs() < 1e-12);
        let flipped = mv(&t.0.iter().map(|v| 1.0 - v).collect::<Vec<_>>());
        assert!((pearson(&flipped, &t, Scope::AllNodes).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&t, &mv(&[0.2; 4]), Scope::AllNodes), Err(Error::DegenerateInput)));
    }

    #[test]
    fn test_set_contracts() {
        let bn = random_bn(12, 3, 0.4, 1).unwrap();
        assert!(build_test_set(&bn, 0, &mut rng::seeded(1)).unwrap().is_empty());
        let a = build_test_set(&bn, 20, &mut rng::seeded(4)).unwrap();
        assert_eq!(a, build_test_set(&bn, 20, &mut rng::seeded(4)).unwrap());
        for c in &a {
            let k = c.evidence.observed_count();
            assert!((2..=6).contains(&k), "{k}");
            for (s, t) in c.evidence.states().iter().zip(&c.truth.0) {
                if let Some(v) = s.value() {
                    assert_eq!(*t, if v { 1.0 } else { 0.0 });
                }
            }
        }
        let big = random_bn(23, 1, 0.1, 1).unwrap();
        assert!(matches!(build_test_set(&big, 1, &mut rng::seeded(1)), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn untrained_baseline_matches_direct_computation() {
        let bn = random_bn(8, 2, 0.5, 3).unwrap();
        let cases = build_test_set(&bn, 15, &mut rng::seeded(2)).unwrap();
        let base = TrainConfig { hidden: vec![16], iterations: 0, ..TrainConfig::default() };
        let cfgs = [ArchConfig { hidden: vec![16], encoding: EncodingMode::TwoBit }];
        let sweep = architecture_sweep(&bn, &cases, &cfgs, &base, false, &Workers::default()).unwrap();
        let model = MlpModel::init(&[16, 16, 8], EncodingMode::TwoBit, crate::dataset::compute_priors(&bn).clone(), rng::derive_seed(0, 0)).unwrap();
        let direct: f64 = cases
            .iter()
            .map(|c| mae(&model.predict_marginals(&c.evidence).unwrap(), &c.truth, Scope::Unobserved(&c.evidence)).unwrap())
            .sum::<f64>()
            / cases.len() as f64;
        assert!((sweep.rows[0].mae - direct).abs() < 1e-12);
        let half: f64 = cases
            .iter()
            .map(|c| mae(&mv(&[0.5; 8]), &c.truth, Scope::Unobserved(&c.evidence)).unwrap())
            .sum::<f64>()
            / cases.len() as f64;
        assert!((sweep.rows[0].mae - half).abs() < 0.1);
    }

    #[test]
    fn csv_shapes() {
        let row = |beta: f64, m: usize| SweepRow {
            label: format!("hybrid({beta})"),
            encoding: None,
            beta: Some(beta),
            mae: 0.1,
            max_ae: 0.2,
            pearson: 0.9,
            ess: Some(10.0),
            n_samples: m,
        };
        let r = SweepResult { rows: vec![row(0.0, 10), row(0.0, 20), row(0.5, 10), row(0.5, 20)], reference: vec![] };
        assert_eq!(fig1_csv(&r).lines().count(), 5);
        assert_eq!(ess_csv(&r), "beta,ess\n0,10\n0.5,10\n");
    }
}
