//! Random-split sweep: per-split transferability scores, per-episode records,
//! and equal-count T-score bins.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fsal_core::analysis::{
    bin_by_tscore, binned_csv, split_sweep, sweep_csv, ClassifierKind, PipelineKind, PipelineSpec,
    SweepEpisodeCfg,
};
use fsal_core::embedders::{BackboneKind, TrainConfig};
use fsal_core::fewshot::FitConfig;

use crate::config::{merge_config, write_manifest};
use crate::util::{ensure_dir, usage, write_file, CliResult};
use crate::world::load_world;
use crate::CommonArgs;

#[derive(Clone, Serialize, Deserialize)]
pub struct TransferParams {
    pub splits: usize,
    pub episodes_per_split: usize,
    pub pipelines: String,
    pub bins: usize,
    pub shot: usize,
    pub query: usize,
    pub p_binary: f64,
    pub steps: usize,
    pub embed_dim: usize,
    pub holdout: f64,
}

impl Default for TransferParams {
    fn default() -> Self {
        Self {
            splits: 100,
            episodes_per_split: 600,
            pipelines: "sa".into(),
            bins: 3,
            shot: 20,
            query: 20,
            p_binary: 0.5,
            steps: 600,
            embed_dim: 8,
            holdout: 0.2,
        }
    }
}

pub struct Overrides {
    pub splits: Option<usize>,
    pub episodes_per_split: Option<usize>,
    pub pipelines: Option<String>,
    pub bins: Option<usize>,
    pub shot: Option<usize>,
    pub query: Option<usize>,
    pub p_binary: Option<f64>,
    pub steps: Option<usize>,
    pub embed_dim: Option<usize>,
    pub holdout: Option<f64>,
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
        put!(splits);
        put!(episodes_per_split);
        put!(pipelines);
        put!(bins);
        put!(shot);
        put!(query);
        put!(p_binary);
        put!(steps);
        put!(embed_dim);
        put!(holdout);
        serde_json::Value::Object(map)
    }
}

pub fn run(common: CommonArgs, world: PathBuf, overrides: Overrides) -> CliResult<()> {
    let params: TransferParams = merge_config(
        &TransferParams::default(),
        common.config.as_deref(),
        overrides.to_json(),
    )?;
    if params.splits == 0 || params.episodes_per_split == 0 {
        return Err(usage("--splits and --episodes-per-split must be at least 1"));
    }
    let bank = load_world(&crate::util::resolve_data_path(&world))?;

    let train_cfg = TrainConfig {
        n_steps: params.steps,
        batch_size: 32,
        backbone: BackboneKind::Mlp,
        embed_dim: params.embed_dim,
        hidden_dim: 64,
        n_shot: params.shot,
        n_query: params.query,
        p_binary_context: params.p_binary,
        ..TrainConfig::default()
    };
    let pipelines: Vec<PipelineSpec> = params
        .pipelines
        .split(',')
        .map(|tag| -> CliResult<PipelineSpec> {
            let kind = PipelineKind::from_tag(tag.trim()).map_err(|e| usage(e.to_string()))?;
            let (classifier, fit) = if kind == PipelineKind::Gt {
                (ClassifierKind::Gt, FitConfig::for_gt())
            } else {
                (ClassifierKind::Lr, FitConfig::default())
            };
            Ok(PipelineSpec {
                kind,
                classifier,
                fit,
                train: train_cfg.clone(),
                finetune: train_cfg.clone(),
            })
        })
        .collect::<CliResult<_>>()?;

    ensure_dir(&common.out)?;
    write_manifest(&common.out, "transfer-study", common.seed, common.jobs, &params)?;

    let ep_cfg = SweepEpisodeCfg {
        n_shot: params.shot,
        n_query: params.query,
        p_binary: params.p_binary,
        holdout_fraction: params.holdout,
    };
    let outcome = split_sweep(
        &bank,
        &pipelines,
        params.splits,
        params.episodes_per_split,
        ep_cfg,
        common.seed,
        common.jobs,
    )?;
    if outcome.resampled_splits > 0 {
        eprintln!(
            "note: resampled {} infeasible split draws",
            outcome.resampled_splits
        );
    }

    write_file(
        &common.out.join("sweep_records.csv"),
        &sweep_csv(&outcome.records, &pipelines, params.shot),
    )?;

    let mut splits_csv = String::from("split_id,train_attrs,test_attrs\n");
    for s in &outcome.records {
        let join = |xs: &[usize]| {
            xs.iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join("&")
        };
        splits_csv.push_str(&format!(
            "{},{},{}\n",
            s.split_id,
            join(&s.train_attrs),
            join(&s.test_attrs)
        ));
    }
    write_file(&common.out.join("splits.csv"), &splits_csv)?;

    let mut binned = Vec::new();
    for (pi, p) in pipelines.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = outcome
            .records
            .iter()
            .flat_map(|s| &s.per_episode)
            .filter_map(|e| e.t_score.map(|t| (t, e.accuracies[pi])))
            .collect();
        binned.push((p.kind.tag().to_string(), bin_by_tscore(&pairs, params.bins)?));
    }
    write_file(&common.out.join("binned.csv"), &binned_csv(&binned))
}
