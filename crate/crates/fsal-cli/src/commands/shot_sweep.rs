//! Evaluate one spec at several shot counts with shared episode streams.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fsal_core::analysis::{
    episode_csv, shot_sweep, ClassifierKind, EpisodeSource, EvalSpec, SUMMARY_CSV_HEADER,
};
use fsal_core::embedders::Dissimilarity;

use crate::commands::common::{load_embedder, load_source, resolve_pool, Source};
use crate::commands::eval::fit_config;
use crate::config::{merge_config, write_manifest};
use crate::util::{ensure_dir, parse_usize_list, usage, write_file, CliResult};
use crate::CommonArgs;

#[derive(Clone, Serialize, Deserialize)]
pub struct SweepParams {
    pub shots: Vec<usize>,
    pub episodes: usize,
    pub query: usize,
    pub p_binary: f64,
    pub lambda: Option<f64>,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            shots: vec![2, 5, 10, 20],
            episodes: 600,
            query: 20,
            p_binary: 0.5,
            lambda: None,
        }
    }
}

pub struct Overrides {
    pub episodes: Option<usize>,
    pub query: Option<usize>,
    pub p_binary: Option<f64>,
    pub lambda: Option<f64>,
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
    shots: Option<String>,
    overrides: Overrides,
) -> CliResult<()> {
    let mut cli = serde_json::Map::new();
    if let Some(s) = &shots {
        cli.insert("shots".into(), serde_json::json!(parse_usize_list(s)?));
    }
    if let Some(v) = overrides.episodes {
        cli.insert("episodes".into(), serde_json::json!(v));
    }
    if let Some(v) = overrides.query {
        cli.insert("query".into(), serde_json::json!(v));
    }
    if let Some(v) = overrides.p_binary {
        cli.insert("p_binary".into(), serde_json::json!(v));
    }
    if let Some(v) = overrides.lambda {
        cli.insert("lambda".into(), serde_json::json!(v));
    }
    let params: SweepParams = merge_config(
        &SweepParams::default(),
        common.config.as_deref(),
        serde_json::Value::Object(cli),
    )?;
    if params.shots.is_empty() {
        return Err(usage("--shots must list at least one count"));
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
        return Err(usage("learned classifiers need a world with input vectors"));
    }

    ensure_dir(&common.out)?;
    write_manifest(&common.out, "shot-sweep", common.seed, common.jobs, &params)?;

    let spec = EvalSpec {
        embedder: bundle.as_ref().map(|b| &b.backbone),
        head: None,
        use_head: false,
        classifier,
        fit: fit_config(classifier, params.lambda),
        metric: Dissimilarity::SquaredEuclidean,
        shuffle_labels: false,
    };
    let episode_source = match &source {
        Source::Bank(bank) => EpisodeSource::Bank { bank, pool },
        Source::MatrixOnly(m) => EpisodeSource::Matrix { matrix: m, pool },
    };
    let sweeps = shot_sweep(
        &spec,
        &episode_source,
        &params.shots,
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
        .unwrap_or("gt")
        .to_string();
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for (shot, summary) in &sweeps {
        out.push_str(&format!(
            "{},{embedder_name},{shot},{},{},{}\n",
            classifier.tag(),
            summary.n_episodes,
            summary.mean,
            summary.ci95
        ));
        write_file(
            &common.out.join(format!("episodes_shot{shot}.csv")),
            &episode_csv(&summary.per_episode, *shot, classifier.tag(), &embedder_name),
        )?;
    }
    write_file(&common.out.join("shot_sweep.csv"), &out)
}
