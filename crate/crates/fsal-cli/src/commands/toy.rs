//! Linear toy experiment: train prototypical embedders in conjunction and
//! one-hot mode, report solved-episode rates and kernel-projection ratios.

use serde::{Deserialize, Serialize};

use fsal_core::analysis::{
    evaluate, matrix_csv, wa_heatmap, ClassifierKind, EpisodeSource, EvalSpec, MetricSummary,
};
use fsal_core::embedders::{train_protonet, BackboneKind, EpisodeMode, TrainConfig};
use fsal_core::episodes::SplitSide;
use fsal_core::numkit::rng_derive;
use fsal_core::synthgen::GenerativeModel;

use crate::config::{merge_config, write_manifest};
use crate::util::{ensure_dir, usage, write_file, CliResult};
use crate::CommonArgs;

const LBL_TOY_MODEL: u64 = 0x100;

#[derive(Clone, Serialize, Deserialize)]
pub struct ToyParams {
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub shot: usize,
    pub query: usize,
    pub noise_std: f64,
    pub input_dim: usize,
    pub attrs: usize,
    pub train_attrs: usize,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            train_episodes: 30_000,
            test_episodes: 1000,
            shot: 20,
            query: 20,
            noise_std: 0.1,
            input_dim: 30,
            attrs: 10,
            train_attrs: 5,
        }
    }
}

pub struct Overrides {
    pub train_episodes: Option<usize>,
    pub test_episodes: Option<usize>,
    pub shot: Option<usize>,
    pub query: Option<usize>,
    pub noise_std: Option<f64>,
    pub input_dim: Option<usize>,
    pub attrs: Option<usize>,
    pub train_attrs: Option<usize>,
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
        put!(train_episodes);
        put!(test_episodes);
        put!(shot);
        put!(query);
        put!(noise_std);
        put!(input_dim);
        put!(attrs);
        put!(train_attrs);
        serde_json::Value::Object(map)
    }
}

/// Fraction of episodes whose query set is classified better than chance
/// (an episode counts as solved when more than half its queries are right).
pub fn episodes_solved(summary: &MetricSummary) -> f64 {
    summary.per_episode.iter().filter(|r| r.accuracy > 0.5).count() as f64
        / summary.n_episodes.max(1) as f64
}

pub fn run(common: CommonArgs, overrides: Overrides) -> CliResult<()> {
    let params: ToyParams =
        merge_config(&ToyParams::default(), common.config.as_deref(), overrides.to_json())?;
    if params.train_episodes == 0 {
        return Err(usage("--train-episodes must be at least 1"));
    }
    if params.test_episodes == 0 {
        return Err(usage("--test-episodes must be at least 1"));
    }
    ensure_dir(&common.out)?;
    write_manifest(&common.out, "toy", common.seed, common.jobs, &params)?;

    let mut model_rng = rng_derive(common.seed, &[LBL_TOY_MODEL]);
    let model = GenerativeModel::sample_uniform(
        params.input_dim,
        params.attrs,
        params.train_attrs,
        params.noise_std,
        &mut model_rng,
    )?;

    let train_cfg = |steps: usize| TrainConfig {
        n_steps: steps,
        backbone: BackboneKind::Linear,
        embed_dim: params.attrs,
        n_shot: params.shot,
        n_query: params.query,
        p_binary_context: 1.0,
        seed: common.seed,
        ..TrainConfig::default()
    };

    let mut report = String::from("mode,measure,value\n");
    for (mode, mode_tag) in [
        (EpisodeMode::FsalConjunction, "fsal"),
        (EpisodeMode::FslOneHot, "fsl"),
    ] {
        let (untrained, _) = train_protonet(&model, mode, &train_cfg(0))?;
        let ratio_untrained = wa_heatmap(&untrained, &model)?.ratio;

        let (embedder, _) = train_protonet(&model, mode, &train_cfg(params.train_episodes))?;
        let heat = wa_heatmap(&embedder, &model)?;

        let spec = EvalSpec::with_embedder(&embedder, ClassifierKind::Nc);
        let source_for = |side: SplitSide| match mode {
            EpisodeMode::FsalConjunction => EpisodeSource::Model { model: &model, side },
            EpisodeMode::FslOneHot => EpisodeSource::ModelOneHot { model: &model, side },
        };
        let train_summary = evaluate(
            &spec,
            &source_for(SplitSide::Train),
            params.shot,
            params.query,
            1.0,
            params.test_episodes,
            common.seed,
            common.jobs,
        )?;
        let test_summary = evaluate(
            &spec,
            &source_for(SplitSide::Test),
            params.shot,
            params.query,
            1.0,
            params.test_episodes,
            common.seed,
            common.jobs,
        )?;

        for (measure, value) in [
            ("episodes_solved_train", episodes_solved(&train_summary)),
            ("episodes_solved_test", episodes_solved(&test_summary)),
            ("query_accuracy_train", train_summary.mean),
            ("query_accuracy_test", test_summary.mean),
            ("wa_ratio", heat.ratio),
            ("wa_ratio_untrained", ratio_untrained),
        ] {
            report.push_str(&format!("{mode_tag},{measure},{value}\n"));
        }
        write_file(
            &common.out.join(format!("wa_{mode_tag}.csv")),
            &matrix_csv(&heat.matrix),
        )?;
    }
    write_file(&common.out.join("toy_report.csv"), &report)
}
