//! Evaluate a (representation, classifier) pair over deterministic episodes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fsal_core::analysis::{
    episode_csv, evaluate, summary_csv, ClassifierKind, EpisodeSource, EvalSpec,
};
use fsal_core::embedders::Dissimilarity;
use fsal_core::fewshot::FitConfig;

use crate::commands::common::{load_embedder, load_source, resolve_pool, Source};
use crate::config::{merge_config, write_manifest};
use crate::util::{ensure_dir, usage, write_file, CliResult};
use crate::CommonArgs;

#[derive(Clone, Serialize, Deserialize)]
pub struct EvalParams {
    pub episodes: usize,
    pub shot: usize,
    pub query: usize,
    pub p_binary: f64,
    pub lambda: Option<f64>,
    pub use_head: bool,
    pub shuffle_labels: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            episodes: 600,
            shot: 20,
            query: 20,
            p_binary: 0.5,
            lambda: None,
            use_head: false,
            shuffle_labels: false,
        }
    }
}

pub struct Overrides {
    pub episodes: Option<usize>,
    pub shot: Option<usize>,
    pub query: Option<usize>,
    pub p_binary: Option<f64>,
    pub lambda: Option<f64>,
    pub use_head: Option<bool>,
    pub shuffle_labels: Option<bool>,
}

impl Overrides {
    fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        macro_rules! put {
            ($k:ident) => {
                if let Some(v) = &self.$k {
                    map.insert(stringify!($k).into(), serde_json::json!(v));
                }
            };
        }
        put!(episodes);
        put!(shot);
        put!(query);
        put!(p_binary);
        put!(lambda);
        put!(use_head);
        put!(shuffle_labels);
        serde_json::Value::Object(map)
    }
}

/// Default L1 strength: 1e-3 on learned embeddings, 1e-2 on ground-truth
/// attribute features.
pub fn fit_config(classifier: ClassifierKind, lambda: Option<f64>) -> FitConfig {
    let mut fit = match classifier {
        ClassifierKind::Gt => FitConfig::for_gt(),
        _ => FitConfig::default(),
    };
    if let Some(l) = lambda {
        fit.lambda = l;
    }
    fit
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    common: CommonArgs,
    classifier: &str,
    embedder_ckpt: Option<PathBuf>,
    matrix: Option<PathBuf>,
    world: Option<PathBuf>,
    split: Option<String>,
    side: Option<&str>,
    overrides: Overrides,
) -> CliResult<()> {
    let params: EvalParams =
        merge_config(&EvalParams::default(), common.config.as_deref(), overrides.to_json())?;
    if params.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let classifier = ClassifierKind::from_tag(classifier).map_err(|e| usage(e.to_string()))?;
    let source = load_source(matrix.as_ref(), world.as_ref())?;
    let pool = resolve_pool(&source, split.as_deref(), side.unwrap_or("test"))?;

    let bundle = match (&embedder_ckpt, classifier) {
        (_, ClassifierKind::Gt) => None,
        (Some(path), _) => Some(load_embedder(path)?),
        (None, _) => {
            return Err(usage(format!(
                "classifier {} needs --embedder",
                classifier.tag()
            )))
        }
    };
    if classifier != ClassifierKind::Gt && source.bank().is_none() {
        return Err(usage(format!(
            "classifier {} needs a world with input vectors (--world)",
            classifier.tag()
        )));
    }

    ensure_dir(&common.out)?;
    write_manifest(
        &common.out,
        &format!("eval-{}", classifier.tag()),
        common.seed,
        common.jobs,
        &params,
    )?;

    let spec = EvalSpec {
        embedder: bundle.as_ref().map(|b| &b.backbone),
        head: bundle.as_ref().and_then(|b| b.head.as_ref()),
        use_head: params.use_head,
        classifier,
        fit: fit_config(classifier, params.lambda),
        metric: Dissimilarity::SquaredEuclidean,
        shuffle_labels: params.shuffle_labels,
    };
    let episode_source = match &source {
        Source::Bank(bank) => EpisodeSource::Bank { bank, pool },
        Source::MatrixOnly(m) => EpisodeSource::Matrix { matrix: m, pool },
    };
    let summary = evaluate(
        &spec,
        &episode_source,
        params.shot,
        params.query,
        params.p_binary,
        params.episodes,
        common.seed,
        common.jobs,
    )?;

    let embedder_name = bundle
        .as_ref()
        .and_then(|b| b.meta.get("kind"))
        .and_then(|v| v.as_str())
        .unwrap_or(if classifier == ClassifierKind::Gt { "gt" } else { "embedder" })
        .to_string();
    write_file(
        &common.out.join("episodes.csv"),
        &episode_csv(&summary.per_episode, params.shot, classifier.tag(), &embedder_name),
    )?;
    write_file(
        &common.out.join("summary.csv"),
        &summary_csv(&summary, params.shot, classifier.tag(), &embedder_name),
    )?;
    println!(
        "{} {}-shot over {} episodes: mean {:.4} +/- {:.4}",
        classifier.tag(),
        params.shot,
        summary.n_episodes,
        summary.mean,
        summary.ci95
    );
    Ok(())
}
