//! Sample an episode archive (classifier view) plus its answer-key sidecar.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fsal_core::episodes::{
    render_answer_key, render_episodes, sample_fsal_episode, Episode, EpisodeConfig,
};
use fsal_core::numkit::rng_derive;

use crate::commands::common::{load_source, resolve_pool, Source};
use crate::config::{merge_config, write_manifest};
use crate::util::{ensure_dir, write_file, CliResult};
use crate::CommonArgs;

const LBL_SAMPLE_EP: u64 = 0x120;

#[derive(Clone, Serialize, Deserialize)]
pub struct SampleParams {
    pub episodes: usize,
    pub shot: usize,
    pub query: usize,
    pub p_binary: f64,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self { episodes: 100, shot: 20, query: 20, p_binary: 0.5 }
    }
}

pub struct Overrides {
    pub episodes: Option<usize>,
    pub shot: Option<usize>,
    pub query: Option<usize>,
    pub p_binary: Option<f64>,
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
        serde_json::Value::Object(map)
    }
}

pub fn run(
    common: CommonArgs,
    matrix: Option<PathBuf>,
    world: Option<PathBuf>,
    split: Option<String>,
    side: Option<&str>,
    overrides: Overrides,
) -> CliResult<()> {
    let params: SampleParams =
        merge_config(&SampleParams::default(), common.config.as_deref(), overrides.to_json())?;
    let source = load_source(matrix.as_ref(), world.as_ref())?;
    let pool = resolve_pool(&source, split.as_deref(), side.unwrap_or("all"))?;

    ensure_dir(&common.out)?;
    write_manifest(&common.out, "sample-episodes", common.seed, common.jobs, &params)?;

    let mut cfg = EpisodeConfig::new(params.shot, params.query, pool);
    cfg.p_binary_context = params.p_binary;
    let mut episodes: Vec<Episode> = Vec::with_capacity(params.episodes);
    for idx in 0..params.episodes as u64 {
        let mut rng = rng_derive(common.seed, &[LBL_SAMPLE_EP, idx]);
        let mut ep = sample_fsal_episode(source.matrix(), &cfg, &mut rng)?;
        if let Source::Bank(bank) = &source {
            ep.attach_inputs(&bank.xs);
        }
        episodes.push(ep);
    }
    write_file(&common.out.join("episodes.txt"), &render_episodes(&episodes))?;
    write_file(&common.out.join("answer_key.txt"), &render_answer_key(&episodes))
}
