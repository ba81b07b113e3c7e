//! Metrics and analyses: rank AUC, the episode evaluation harness, attribute
//! readout, transferability scores, random-split and shot sweeps, T-score
//! binning, correlation, and the kernel-projection heatmap.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::attrdata::AttributeMatrix;
use crate::embedders::{
    embed, finetune_ufta, train_contrastive, train_sa, Dissimilarity, Embedder, FsalSource,
    ProjectionHead, TrainConfig,
};
use crate::episodes::{
    sample_fsal_episode, sample_fsl_episode, sample_synth_fsal_episode, Context, Episode,
    EpisodeConfig, SplitSide,
};
use crate::error::{Error, Result};
use crate::fewshot::{fit_lr, predict_nc, predict_nn, FitConfig};
use crate::numkit::{mean, rng_derive, sample_std, Matrix, RngStream};
use crate::parallel::parallel_map;
use crate::synthgen::{GenerativeModel, ItemBank};

const LBL_EVAL_EP: u64 = 0x20;
const LBL_READOUT: u64 = 0x21;
const LBL_TSCORE: u64 = 0x22;
const LBL_SWEEP_SPLIT: u64 = 0x23;
const LBL_SWEEP_TRAIN: u64 = 0x25;
const LBL_RANDOM_EMB: u64 = 0x26;
const LBL_SHUFFLE: u64 = 0x27;

/// Rank-based (Mann-Whitney) AUC with average ranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidArgument(
            "scores and labels must be non-empty and equal length".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &k in &order[i..=j] {
            ranks[k] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One evaluated episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode_id: u64,
    pub accuracy: f64,
    pub context: Context,
    pub t_score: Option<f64>,
}

/// Mean accuracy with a normal-approximation 95% interval.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub ci95: f64,
    pub n_episodes: usize,
    pub per_episode: Vec<EpisodeRecord>,
}

impl MetricSummary {
    pub fn from_records(per_episode: Vec<EpisodeRecord>) -> Self {
        let accs: Vec<f64> = per_episode.iter().map(|r| r.accuracy).collect();
        let n = accs.len();
        let ci95 = if n > 1 {
            1.96 * sample_std(&accs) / (n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean: mean(&accs),
            ci95,
            n_episodes: n,
            per_episode,
        }
    }
}

/// Which Stage-II classifier to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Nn,
    Nc,
    Lr,
    Gt,
}

impl ClassifierKind {
    pub fn tag(self) -> &'static str {
        match self {
            ClassifierKind::Nn => "nn",
            ClassifierKind::Nc => "nc",
            ClassifierKind::Lr => "lr",
            ClassifierKind::Gt => "gt",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "nn" => Ok(ClassifierKind::Nn),
            "nc" => Ok(ClassifierKind::Nc),
            "lr" => Ok(ClassifierKind::Lr),
            "gt" => Ok(ClassifierKind::Gt),
            other => Err(Error::InvalidArgument(format!(
                "unknown classifier {other:?}"
            ))),
        }
    }
}

/// Where evaluation episodes come from.
pub enum EpisodeSource<'a> {
    /// Attribute matrix only (ground-truth pipelines).
    Matrix { matrix: &'a AttributeMatrix, pool: Vec<usize> },
    /// Matrix plus rendered inputs.
    Bank { bank: &'a ItemBank, pool: Vec<usize> },
    /// Fresh conjunction episodes from the generative model.
    Model { model: &'a GenerativeModel, side: SplitSide },
    /// Fresh one-hot control episodes from the generative model.
    ModelOneHot { model: &'a GenerativeModel, side: SplitSide },
}

impl EpisodeSource<'_> {
    pub fn sample(
        &self,
        n_shot: usize,
        n_query: usize,
        p_binary: f64,
        rng: &mut RngStream,
    ) -> Result<Episode> {
        match self {
            EpisodeSource::Matrix { matrix, pool } => {
                let mut cfg = EpisodeConfig::new(n_shot, n_query, pool.clone());
                cfg.p_binary_context = p_binary;
                sample_fsal_episode(matrix, &cfg, rng)
            }
            EpisodeSource::Bank { bank, pool } => {
                let mut cfg = EpisodeConfig::new(n_shot, n_query, pool.clone());
                cfg.p_binary_context = p_binary;
                let mut ep = sample_fsal_episode(&bank.matrix, &cfg, rng)?;
                ep.attach_inputs(&bank.xs);
                Ok(ep)
            }
            EpisodeSource::Model { model, side } => {
                let mut cfg = EpisodeConfig::new(n_shot, n_query, Vec::new());
                cfg.p_binary_context = p_binary;
                sample_synth_fsal_episode(model, *side, &cfg, rng)
            }
            EpisodeSource::ModelOneHot { model, side } => {
                let cfg = EpisodeConfig::new(n_shot, n_query, Vec::new());
                sample_fsl_episode(2, model, *side, &cfg, rng)
            }
        }
    }
}

/// Evaluation settings: representation, classifier, and solver.
pub struct EvalSpec<'a> {
    pub embedder: Option<&'a Embedder>,
    pub head: Option<&'a ProjectionHead>,
    /// Keep the projection head at test time (off by default: heads are
    /// discarded for Stage II).
    pub use_head: bool,
    pub classifier: ClassifierKind,
    pub fit: FitConfig,
    pub metric: Dissimilarity,
    /// Score against per-episode shuffled query labels (chance control).
    pub shuffle_labels: bool,
}

impl<'a> EvalSpec<'a> {
    pub fn gt() -> Self {
        Self {
            embedder: None,
            head: None,
            use_head: false,
            classifier: ClassifierKind::Gt,
            fit: FitConfig::for_gt(),
            metric: Dissimilarity::SquaredEuclidean,
            shuffle_labels: false,
        }
    }

    pub fn with_embedder(embedder: &'a Embedder, classifier: ClassifierKind) -> Self {
        Self {
            embedder: Some(embedder),
            head: None,
            use_head: false,
            classifier,
            fit: FitConfig::default(),
            metric: Dissimilarity::SquaredEuclidean,
            shuffle_labels: false,
        }
    }
}

/// Accuracy of one episode under the given spec.
pub fn episode_accuracy(spec: &EvalSpec, episode: &Episode, rng: &mut RngStream) -> Result<f64> {
    let query = episode.query();
    let mut qlabels: Vec<u8> = query.iter().map(|(_, y)| *y).collect();
    if spec.shuffle_labels {
        rng.shuffle(&mut qlabels);
    }

    let preds: Vec<u8> = match spec.classifier {
        ClassifierKind::Gt => {
            // The oracle consumes labels internally; for the shuffled control
            // re-score its fitted readout against the shuffled labels.
            let support = episode.support();
            let feats: Vec<Vec<f64>> = support
                .iter()
                .map(|(i, _)| {
                    if i.z.is_empty() {
                        Err(Error::InvalidArgument(
                            "ground-truth evaluation needs attribute vectors".into(),
                        ))
                    } else {
                        Ok(i.z.iter().map(|&b| b as f64).collect())
                    }
                })
                .collect::<Result<_>>()?;
            let labels: Vec<u8> = support.iter().map(|(_, y)| *y).collect();
            let clf = fit_lr(&feats, &labels, &spec.fit)?;
            query
                .iter()
                .map(|(i, _)| {
                    let x: Vec<f64> = i.z.iter().map(|&b| b as f64).collect();
                    clf.predict(&x)
                })
                .collect()
        }
        _ => {
            let embedder = spec.embedder.ok_or_else(|| {
                Error::InvalidArgument("classifier needs an embedder".into())
            })?;
            let embed_items = |items: &[(&crate::episodes::EpisodeItem, u8)]| -> Result<Vec<Vec<f64>>> {
                items
                    .iter()
                    .map(|(i, _)| {
                        let x = i.x.as_deref().ok_or_else(|| {
                            Error::InvalidArgument("episode item has no input vector".into())
                        })?;
                        embed(embedder, spec.head, x, spec.use_head)
                    })
                    .collect()
            };
            let support = episode.support();
            let sfeats = embed_items(&support)?;
            let slabels: Vec<u8> = support.iter().map(|(_, y)| *y).collect();
            let qfeats = embed_items(&query)?;
            match spec.classifier {
                ClassifierKind::Nn => predict_nn(&sfeats, &slabels, &qfeats, spec.metric)?,
                ClassifierKind::Nc => predict_nc(&sfeats, &slabels, &qfeats, spec.metric)?.0,
                ClassifierKind::Lr => {
                    let clf = fit_lr(&sfeats, &slabels, &spec.fit)?;
                    qfeats.iter().map(|x| clf.predict(x)).collect()
                }
                ClassifierKind::Gt => unreachable!(),
            }
        }
    };
    let correct = preds.iter().zip(&qlabels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / qlabels.len() as f64)
}

/// Evaluate `n_episodes` deterministic episodes, optionally in parallel.
///
/// Episode `i` is fully determined by `(seed, stream_tag, i)`, so results are
/// identical for any job count.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_tagged(
    spec: &EvalSpec,
    source: &EpisodeSource,
    n_shot: usize,
    n_query: usize,
    p_binary: f64,
    n_episodes: usize,
    seed: u64,
    stream_tag: u64,
    jobs: usize,
) -> Result<MetricSummary> {
    let results: Vec<Result<EpisodeRecord>> = parallel_map(n_episodes, jobs, |i| {
        let idx = i as u64;
        let mut rng = rng_derive(seed, &[LBL_EVAL_EP, stream_tag, idx]);
        let episode = source
            .sample(n_shot, n_query, p_binary, &mut rng)
            .map_err(|e| Error::Validation(format!("episode {idx}: {e}")))?;
        let mut shuffle_rng = rng_derive(seed, &[LBL_SHUFFLE, stream_tag, idx]);
        let accuracy = episode_accuracy(spec, &episode, &mut shuffle_rng)
            .map_err(|e| Error::Validation(format!("episode {idx}: {e}")))?;
        Ok(EpisodeRecord {
            episode_id: idx,
            accuracy,
            context: episode.context.clone(),
            t_score: None,
        })
    });
    let mut records = Vec::with_capacity(n_episodes);
    for r in results {
        records.push(r?);
    }
    Ok(MetricSummary::from_records(records))
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    spec: &EvalSpec,
    source: &EpisodeSource,
    n_shot: usize,
    n_query: usize,
    p_binary: f64,
    n_episodes: usize,
    seed: u64,
    jobs: usize,
) -> Result<MetricSummary> {
    evaluate_tagged(spec, source, n_shot, n_query, p_binary, n_episodes, seed, 0, jobs)
}

/// Per-attribute readout AUC record.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutRecord {
    pub attr: usize,
    /// `None` when the attribute is degenerate in either the train or the
    /// holdout portion (skipped with flag).
    pub auc: Option<f64>,
}

/// Linear readout of each attribute from frozen embeddings: fit an
/// unregularized logistic regression on a train portion, score AUC on the
/// holdout.
pub fn readout_auc(
    embedder: &Embedder,
    xs: &[Vec<f64>],
    zs: &[Vec<u8>],
    attrs: &[usize],
    holdout_fraction: f64,
    seed: u64,
) -> Result<Vec<ReadoutRecord>> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "holdout_fraction must lie in (0,1)".into(),
        ));
    }
    if xs.len() != zs.len() || xs.is_empty() {
        return Err(Error::InvalidArgument("empty or mismatched dataset".into()));
    }
    let embs: Vec<Vec<f64>> = xs.iter().map(|x| embedder.forward(x)).collect();
    let n = xs.len();
    let n_holdout = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);

    let mut out = Vec::with_capacity(attrs.len());
    for &attr in attrs {
        let mut rng = rng_derive(seed, &[LBL_READOUT, attr as u64]);
        let order = rng.sample_distinct(n, n);
        let (holdout_idx, train_idx) = order.split_at(n_holdout);
        let train_feats: Vec<Vec<f64>> = train_idx.iter().map(|&i| embs[i].clone()).collect();
        let train_labels: Vec<u8> = train_idx.iter().map(|&i| zs[i][attr]).collect();
        let hold_labels: Vec<u8> = holdout_idx.iter().map(|&i| zs[i][attr]).collect();
        let degenerate = !train_labels.contains(&0)
            || !train_labels.contains(&1)
            || !hold_labels.contains(&0)
            || !hold_labels.contains(&1);
        if degenerate {
            out.push(ReadoutRecord { attr, auc: None });
            continue;
        }
        let clf = fit_lr(
            &train_feats,
            &train_labels,
            &FitConfig { lambda: 0.0, ..FitConfig::default() },
        )?;
        let scores: Vec<f64> = holdout_idx.iter().map(|&i| clf.score(&embs[i])).collect();
        out.push(ReadoutRecord { attr, auc: Some(auc(&scores, &hold_labels)?) });
    }
    Ok(out)
}

/// Held-out AUC of predicting each target attribute from the train-attribute
/// vector, per attribute.
pub fn transfer_scores_per_attr(
    matrix: &AttributeMatrix,
    train_attrs: &[usize],
    target_attrs: &[usize],
    holdout_fraction: f64,
    seed: u64,
) -> Result<HashMap<usize, f64>> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "holdout_fraction must lie in (0,1)".into(),
        ));
    }
    if train_attrs.is_empty() || target_attrs.is_empty() {
        return Err(Error::InvalidArgument(
            "need train and target attributes".into(),
        ));
    }
    let n = matrix.n_items();
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|i| train_attrs.iter().map(|&a| matrix.label(i, a) as f64).collect())
        .collect();
    let n_holdout = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);
    let mut out = HashMap::new();
    for &target in target_attrs {
        let mut rng = rng_derive(seed, &[LBL_TSCORE, target as u64]);
        let order = rng.sample_distinct(n, n);
        let (holdout_idx, train_idx) = order.split_at(n_holdout);
        let train_feats: Vec<Vec<f64>> = train_idx.iter().map(|&i| feats[i].clone()).collect();
        let train_labels: Vec<u8> = train_idx.iter().map(|&i| matrix.label(i, target)).collect();
        let hold_labels: Vec<u8> = holdout_idx.iter().map(|&i| matrix.label(i, target)).collect();
        if !train_labels.contains(&0)
            || !train_labels.contains(&1)
            || !hold_labels.contains(&0)
            || !hold_labels.contains(&1)
        {
            continue; // degenerate target, excluded
        }
        let clf = fit_lr(
            &train_feats,
            &train_labels,
            &FitConfig { lambda: 0.0, ..FitConfig::default() },
        )?;
        let scores: Vec<f64> = holdout_idx.iter().map(|&i| clf.score(&feats[i])).collect();
        out.insert(target, auc(&scores, &hold_labels)?);
    }
    if out.is_empty() {
        return Err(Error::UndefinedMetric(
            "every target attribute is degenerate".into(),
        ));
    }
    Ok(out)
}

/// Mean transferability score over the target attributes.
pub fn transfer_score(
    matrix: &AttributeMatrix,
    train_attrs: &[usize],
    target_attrs: &[usize],
    holdout_fraction: f64,
    seed: u64,
) -> Result<f64> {
    let per = transfer_scores_per_attr(matrix, train_attrs, target_attrs, holdout_fraction, seed)?;
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

/// Stage-I pipeline families for the sweep harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipelineKind {
    Gt,
    Random,
    Sa,
    SaStar,
    U,
    Ufte,
    Ufta,
}

impl PipelineKind {
    pub fn tag(self) -> &'static str {
        match self {
            PipelineKind::Gt => "gt",
            PipelineKind::Random => "random",
            PipelineKind::Sa => "sa",
            PipelineKind::SaStar => "sastar",
            PipelineKind::U => "u",
            PipelineKind::Ufte => "ufte",
            PipelineKind::Ufta => "ufta",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "gt" => Ok(PipelineKind::Gt),
            "random" => Ok(PipelineKind::Random),
            "sa" => Ok(PipelineKind::Sa),
            "sastar" => Ok(PipelineKind::SaStar),
            "u" => Ok(PipelineKind::U),
            "ufte" => Ok(PipelineKind::Ufte),
            "ufta" => Ok(PipelineKind::Ufta),
            other => Err(Error::InvalidArgument(format!("unknown pipeline {other:?}"))),
        }
    }
}

/// One embedder-plus-classifier pipeline evaluated in a sweep.
#[derive(Clone, Debug)]
pub struct PipelineSpec {
    pub kind: PipelineKind,
    pub classifier: ClassifierKind,
    pub fit: FitConfig,
    /// Stage-I budget (supervised or contrastive pretraining).
    pub train: TrainConfig,
    /// Finetuning budget for the two-stage pipelines.
    pub finetune: TrainConfig,
}

/// A trained pipeline ready for evaluation.
pub struct TrainedPipeline {
    pub kind: PipelineKind,
    pub classifier: ClassifierKind,
    pub fit: FitConfig,
    pub embedder: Option<Embedder>,
}

/// Train one pipeline's Stage I on the bank restricted to `train_attrs`.
pub fn train_pipeline(
    spec: &PipelineSpec,
    bank: &ItemBank,
    train_attrs: &[usize],
    seed: u64,
) -> Result<TrainedPipeline> {
    let examples = bank.examples();
    let zs: Vec<Vec<u8>> = examples.iter().map(|e| e.z.clone()).collect();
    let mut train_cfg = spec.train.clone();
    train_cfg.seed = seed;
    let mut ft_cfg = spec.finetune.clone();
    ft_cfg.seed = seed ^ 0x5eed;

    let embedder = match spec.kind {
        PipelineKind::Gt => None,
        PipelineKind::Random => {
            let mut rng = rng_derive(seed, &[LBL_RANDOM_EMB]);
            Some(Embedder::init(
                train_cfg.backbone,
                bank.model.input_dim(),
                train_cfg.hidden_dim,
                train_cfg.embed_dim,
                &mut rng,
            ))
        }
        PipelineKind::Sa => Some(train_sa(&examples, train_attrs, &train_cfg)?.embedder),
        PipelineKind::SaStar => {
            let all: Vec<usize> = (0..bank.matrix.n_attrs()).collect();
            Some(train_sa(&examples, &all, &train_cfg)?.embedder)
        }
        PipelineKind::U => Some(train_contrastive(&bank.model, &zs, &train_cfg)?.0),
        PipelineKind::Ufte => {
            let (backbone, _, _) = train_contrastive(&bank.model, &zs, &train_cfg)?;
            let source = FsalSource::Bank { bank, pool: train_attrs.to_vec() };
            let (tuned, _, _) = crate::embedders::finetune_ufte(&backbone, &source, &ft_cfg)?;
            Some(tuned)
        }
        PipelineKind::Ufta => {
            let (backbone, _, _) = train_contrastive(&bank.model, &zs, &train_cfg)?;
            let (tuned, _, _, _) = finetune_ufta(&backbone, &examples, train_attrs, &ft_cfg)?;
            Some(tuned)
        }
    };
    Ok(TrainedPipeline {
        kind: spec.kind,
        classifier: spec.classifier,
        fit: spec.fit,
        embedder,
    })
}

impl TrainedPipeline {
    pub fn eval_spec(&self) -> EvalSpec<'_> {
        EvalSpec {
            embedder: self.embedder.as_ref(),
            head: None,
            use_head: false,
            classifier: self.classifier,
            fit: self.fit,
            metric: Dissimilarity::SquaredEuclidean,
            shuffle_labels: false,
        }
    }
}

/// One evaluated episode under several pipelines at once.
#[derive(Clone, Debug)]
pub struct MultiRecord {
    pub episode_id: u64,
    pub context: Context,
    pub t_score: Option<f64>,
    /// Parallel to the pipeline list passed to the sweep.
    pub accuracies: Vec<f64>,
}

/// Results for one random attribute split.
#[derive(Clone, Debug)]
pub struct SplitRecord {
    pub split_id: usize,
    pub train_attrs: Vec<usize>,
    pub test_attrs: Vec<usize>,
    pub per_episode: Vec<MultiRecord>,
}

/// Sweep outcome plus bookkeeping about resampled splits.
pub struct SweepOutcome {
    pub records: Vec<SplitRecord>,
    pub resampled_splits: usize,
}

/// Settings for `split_sweep` episodes.
#[derive(Clone, Copy, Debug)]
pub struct SweepEpisodeCfg {
    pub n_shot: usize,
    pub n_query: usize,
    pub p_binary: f64,
    pub holdout_fraction: f64,
}

/// For each random disjoint attribute split: train each pipeline on the train
/// side, evaluate all of them on identical test-side episode streams, and
/// attach per-episode transferability scores.
#[allow(clippy::too_many_arguments)]
pub fn split_sweep(
    bank: &ItemBank,
    pipelines: &[PipelineSpec],
    n_splits: usize,
    episodes_per_split: usize,
    ep_cfg: SweepEpisodeCfg,
    seed: u64,
    jobs: usize,
) -> Result<SweepOutcome> {
    if pipelines.is_empty() {
        return Err(Error::InvalidArgument("no pipelines given".into()));
    }
    let n_attrs = bank.matrix.n_attrs();
    if n_attrs < 2 {
        return Err(Error::InvalidArgument("need at least two attributes to split".into()));
    }
    let mut records = Vec::with_capacity(n_splits);
    let mut resampled = 0usize;

    for split_id in 0..n_splits {
        // Draw a split; resample while either side lacks a feasible context.
        let mut chosen: Option<(Vec<usize>, Vec<usize>)> = None;
        for attempt in 0..50u64 {
            let mut rng = rng_derive(seed, &[LBL_SWEEP_SPLIT, split_id as u64, attempt]);
            let mut attrs: Vec<usize> = (0..n_attrs).collect();
            rng.shuffle(&mut attrs);
            let (train, test) = attrs.split_at(n_attrs / 2);
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            let feasible = |pool: &[usize]| {
                let mut cfg = EpisodeConfig::new(ep_cfg.n_shot, ep_cfg.n_query, pool.to_vec());
                cfg.p_binary_context = ep_cfg.p_binary;
                crate::episodes::enumerate_contexts(&bank.matrix, &cfg).is_ok()
            };
            if feasible(&train) && feasible(&test) {
                chosen = Some((train, test));
                break;
            }
            resampled += 1;
        }
        let (train_attrs, test_attrs) = chosen.ok_or_else(|| Error::Sampling {
            tries: 50,
            msg: format!("split {split_id}: no feasible attribute split"),
        })?;

        let t_aucs = transfer_scores_per_attr(
            &bank.matrix,
            &train_attrs,
            &test_attrs,
            ep_cfg.holdout_fraction,
            rng_derive(seed, &[LBL_SWEEP_SPLIT, split_id as u64]).next_u64(),
        )?;

        let trained: Vec<TrainedPipeline> = pipelines
            .iter()
            .enumerate()
            .map(|(pi, p)| {
                let pseed = rng_derive(seed, &[LBL_SWEEP_TRAIN, split_id as u64, pi as u64]).next_u64();
                train_pipeline(p, bank, &train_attrs, pseed)
            })
            .collect::<Result<_>>()?;

        let source = EpisodeSource::Bank { bank, pool: test_attrs.clone() };
        let per_episode: Vec<Result<MultiRecord>> = parallel_map(episodes_per_split, jobs, |i| {
            let idx = i as u64;
            let mut rng = rng_derive(seed, &[LBL_EVAL_EP, split_id as u64, idx]);
            let episode = source.sample(ep_cfg.n_shot, ep_cfg.n_query, ep_cfg.p_binary, &mut rng)?;
            let mut accuracies = Vec::with_capacity(trained.len());
            for tp in &trained {
                let mut shuffle_rng = rng_derive(seed, &[LBL_SHUFFLE, split_id as u64, idx]);
                accuracies.push(episode_accuracy(&tp.eval_spec(), &episode, &mut shuffle_rng)?);
            }
            let ctx_scores: Vec<f64> = episode
                .context
                .indices()
                .iter()
                .filter_map(|a| t_aucs.get(a).copied())
                .collect();
            Ok(MultiRecord {
                episode_id: idx,
                context: episode.context.clone(),
                t_score: (!ctx_scores.is_empty()).then(|| mean(&ctx_scores)),
                accuracies,
            })
        });
        let mut eps = Vec::with_capacity(episodes_per_split);
        for r in per_episode {
            eps.push(r?);
        }
        records.push(SplitRecord { split_id, train_attrs, test_attrs, per_episode: eps });
    }
    Ok(SweepOutcome { records, resampled_splits: resampled })
}

/// Equal-count bin of (t_score, value) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct BinSummary {
    pub count: usize,
    pub t_mean: f64,
    pub value_mean: f64,
    pub value_stderr: f64,
}

/// Group records into `n_bins` equal-count bins by T-score and summarize the
/// values (accuracies or paired accuracy differences) per bin.
pub fn bin_by_tscore(pairs: &[(f64, f64)], n_bins: usize) -> Result<Vec<BinSummary>> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    if pairs.len() < n_bins {
        return Err(Error::InvalidArgument(format!(
            "{} records cannot fill {n_bins} bins",
            pairs.len()
        )));
    }
    let mut sorted: Vec<(f64, f64)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite t-scores"));
    let base = sorted.len() / n_bins;
    let rem = sorted.len() % n_bins;
    let mut out = Vec::with_capacity(n_bins);
    let mut pos = 0;
    for b in 0..n_bins {
        let size = base + usize::from(b < rem);
        let chunk = &sorted[pos..pos + size];
        pos += size;
        let ts: Vec<f64> = chunk.iter().map(|p| p.0).collect();
        let vs: Vec<f64> = chunk.iter().map(|p| p.1).collect();
        out.push(BinSummary {
            count: size,
            t_mean: mean(&ts),
            value_mean: mean(&vs),
            value_stderr: if size > 1 {
                sample_std(&vs) / (size as f64).sqrt()
            } else {
                0.0
            },
        });
    }
    Ok(out)
}

/// Evaluate the same spec at several shot counts with shared episode streams
/// (episode `i` draws its context from the same stream at every shot).
#[allow(clippy::too_many_arguments)]
pub fn shot_sweep(
    spec: &EvalSpec,
    source: &EpisodeSource,
    shots: &[usize],
    n_query: usize,
    p_binary: f64,
    n_episodes: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<(usize, MetricSummary)>> {
    if shots.is_empty() {
        return Err(Error::InvalidArgument("no shot counts given".into()));
    }
    shots
        .iter()
        .map(|&s| {
            evaluate(spec, source, s, n_query, p_binary, n_episodes, seed, jobs).map(|m| (s, m))
        })
        .collect()
}

/// Pearson and Spearman correlation coefficients.
pub fn readout_accuracy_correlation(readout: &[f64], accuracy: &[f64]) -> Result<(f64, f64)> {
    if readout.len() != accuracy.len() || readout.len() < 3 {
        return Err(Error::InvalidArgument(
            "need equal-length lists with at least 3 entries".into(),
        ));
    }
    let pearson = pearson_corr(readout, accuracy)?;
    let spearman = pearson_corr(&avg_ranks(readout), &avg_ranks(accuracy))?;
    Ok((pearson, spearman))
}

fn pearson_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedMetric(
            "correlation undefined for zero-variance input".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

fn avg_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// The projection of the generative columns into a linear embedder's space:
/// `abs(W A)` and the test/train column-norm ratio.
pub struct WaHeatmap {
    pub matrix: Matrix,
    /// mean L2 norm over test columns / mean L2 norm over train columns.
    pub ratio: f64,
}

pub fn wa_heatmap(embedder: &Embedder, model: &GenerativeModel) -> Result<WaHeatmap> {
    let w = embedder
        .linear_weight()
        .ok_or_else(|| Error::Unsupported("kernel heatmap needs a linear embedder".into()))?;
    if w.cols() != model.input_dim() {
        return Err(Error::Dimension("embedder and model dims disagree".into()));
    }
    let wa = w.matmul(model.matrix()).map(f64::abs);
    let norms = wa.col_norms();
    let d_train = model.d_train();
    let train_mean = mean(&norms[..d_train]);
    let test_mean = mean(&norms[d_train..]);
    Ok(WaHeatmap { matrix: wa, ratio: test_mean / train_mean })
}

// --- CSV rendering -----------------------------------------------------------

pub const EPISODE_CSV_HEADER: &str = "episode_id,context,shot,classifier,embedder,accuracy,t_score";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-episode rows under the fixed header.
pub fn episode_csv(records: &[EpisodeRecord], shot: usize, classifier: &str, embedder: &str) -> String {
    let mut out = String::from(EPISODE_CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{shot},{classifier},{embedder},{},{}",
            r.episode_id,
            r.context.label(),
            r.accuracy,
            fmt_opt(r.t_score)
        )
        .unwrap();
    }
    out
}

pub const SUMMARY_CSV_HEADER: &str = "classifier,embedder,shot,n_episodes,mean,ci95";

pub fn summary_csv(summary: &MetricSummary, shot: usize, classifier: &str, embedder: &str) -> String {
    format!(
        "{SUMMARY_CSV_HEADER}\n{classifier},{embedder},{shot},{},{},{}\n",
        summary.n_episodes, summary.mean, summary.ci95
    )
}

pub const SWEEP_CSV_HEADER: &str =
    "split_id,episode_id,context,shot,classifier,embedder,accuracy,t_score";

/// Raw sweep rows: one line per episode per pipeline.
pub fn sweep_csv(records: &[SplitRecord], pipelines: &[PipelineSpec], shot: usize) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for split in records {
        for ep in &split.per_episode {
            for (p, acc) in pipelines.iter().zip(&ep.accuracies) {
                writeln!(
                    out,
                    "{},{},{},{shot},{},{},{},{}",
                    split.split_id,
                    ep.episode_id,
                    ep.context.label(),
                    p.classifier.tag(),
                    p.kind.tag(),
                    acc,
                    fmt_opt(ep.t_score)
                )
                .unwrap();
            }
        }
    }
    out
}

pub const BINNED_CSV_HEADER: &str = "embedder,bin,count,t_mean,value_mean,value_stderr";

pub fn binned_csv(bins_per_pipeline: &[(String, Vec<BinSummary>)]) -> String {
    let mut out = String::from(BINNED_CSV_HEADER);
    out.push('\n');
    for (name, bins) in bins_per_pipeline {
        for (i, b) in bins.iter().enumerate() {
            writeln!(
                out,
                "{name},{i},{},{},{},{}",
                b.count, b.t_mean, b.value_mean, b.value_stderr
            )
            .unwrap();
        }
    }
    out
}

/// Comma-separated matrix rows (heatmap export).
pub fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}
