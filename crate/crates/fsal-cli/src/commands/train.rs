//! Stage-I training on a synthetic world; writes a model checkpoint.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fsal_core::embedders::checkpoint::{save_bundle, ModelBundle};
use fsal_core::embedders::{
    finetune_ufta, finetune_ufte, train_contrastive, train_protonet, train_sa, BackboneKind,
    EpisodeMode, FsalSource, TrainConfig, TrainStats,
};

use crate::commands::common::load_embedder;
use crate::config::{merge_config, write_manifest};
use crate::util::{ensure_dir, runtime, usage, write_file, CliResult};
use crate::world::load_world;
use crate::CommonArgs;

#[derive(Clone, Serialize, Deserialize)]
pub struct TrainParams {
    pub steps: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_depth: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub backbone_lr_scale: f64,
    pub shot: usize,
    pub query: usize,
    pub p_binary: f64,
    pub linear_backbone: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            embed_dim: 8,
            hidden_dim: 64,
            head_depth: 2,
            temperature: 0.2,
            learning_rate: 0.001,
            backbone_lr_scale: 0.1,
            shot: 20,
            query: 20,
            p_binary: 0.5,
            linear_backbone: false,
        }
    }
}

pub struct Overrides {
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub head_depth: Option<usize>,
    pub temperature: Option<f64>,
    pub learning_rate: Option<f64>,
    pub backbone_lr_scale: Option<f64>,
    pub shot: Option<usize>,
    pub query: Option<usize>,
    pub p_binary: Option<f64>,
    pub linear_backbone: Option<bool>,
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
        put!(steps);
        put!(batch_size);
        put!(embed_dim);
        put!(hidden_dim);
        put!(head_depth);
        put!(temperature);
        put!(learning_rate);
        put!(backbone_lr_scale);
        put!(shot);
        put!(query);
        put!(p_binary);
        put!(linear_backbone);
        serde_json::Value::Object(map)
    }
}

fn train_config(params: &TrainParams, seed: u64) -> TrainConfig {
    TrainConfig {
        n_steps: params.steps,
        batch_size: params.batch_size,
        temperature: params.temperature,
        adam: fsal_core::numkit::AdamHyper {
            learning_rate: params.learning_rate,
            ..Default::default()
        },
        seed,
        head_depth: params.head_depth,
        backbone_lr_scale: params.backbone_lr_scale,
        backbone: if params.linear_backbone {
            BackboneKind::Linear
        } else {
            BackboneKind::Mlp
        },
        embed_dim: params.embed_dim,
        hidden_dim: params.hidden_dim,
        n_shot: params.shot,
        n_query: params.query,
        p_binary_context: params.p_binary,
        ..TrainConfig::default()
    }
}

fn loss_summary(stats: &TrainStats) -> String {
    // Disjoint head/tail windows even for short runs.
    let w = (stats.losses.len() / 2).clamp(1, 1000);
    format!(
        "measure,value\nsteps,{}\nloss_first_window,{}\nloss_last_window,{}\n",
        stats.losses.len(),
        stats.first_window_mean(w),
        stats.last_window_mean(w)
    )
}

pub fn run(
    common: CommonArgs,
    algo: &str,
    world_dir: PathBuf,
    backbone_ckpt: Option<PathBuf>,
    mode: Option<&str>,
    overrides: Overrides,
) -> CliResult<()> {
    let params: TrainParams =
        merge_config(&TrainParams::default(), common.config.as_deref(), overrides.to_json())?;
    let bank = load_world(&crate::util::resolve_data_path(&world_dir))?;
    ensure_dir(&common.out)?;
    write_manifest(&common.out, &format!("train-{algo}"), common.seed, common.jobs, &params)?;

    let cfg = train_config(&params, common.seed);
    let meta = serde_json::json!({
        "kind": algo,
        "seed": common.seed,
        "config": serde_json::to_value(&params).unwrap_or_default(),
    });
    let examples = bank.examples();
    let train_attrs = bank.model.train_attrs();
    let zs: Vec<Vec<u8>> = examples.iter().map(|e| e.z.clone()).collect();

    let (bundle, stats) = match algo {
        "protonet" => {
            let mode = match mode.unwrap_or("fsal") {
                "fsl" => EpisodeMode::FslOneHot,
                _ => EpisodeMode::FsalConjunction,
            };
            let mut cfg = cfg;
            if params.linear_backbone {
                cfg.embed_dim = bank.model.n_attrs();
            }
            let (embedder, stats) = train_protonet(&bank.model, mode, &cfg)?;
            (
                ModelBundle { meta, backbone: embedder, head: None, attr_head: None },
                stats,
            )
        }
        "contrastive" => {
            let (embedder, head, stats) = train_contrastive(&bank.model, &zs, &cfg)?;
            (
                ModelBundle { meta, backbone: embedder, head: Some(head), attr_head: None },
                stats,
            )
        }
        "sa" | "sastar" => {
            let attrs: Vec<usize> = if algo == "sa" {
                train_attrs
            } else {
                (0..bank.matrix.n_attrs()).collect()
            };
            let sa = train_sa(&examples, &attrs, &cfg)?;
            if !sa.skipped_attrs.is_empty() {
                eprintln!(
                    "warning: skipped single-class attributes {:?}",
                    sa.skipped_attrs
                );
            }
            (
                ModelBundle {
                    meta,
                    backbone: sa.embedder,
                    head: None,
                    attr_head: Some(sa.head),
                },
                sa.stats,
            )
        }
        "ufte" => {
            let ckpt = backbone_ckpt
                .ok_or_else(|| usage("--backbone checkpoint is required for ufte"))?;
            let base = load_embedder(&ckpt)?;
            let source = FsalSource::Bank { bank: &bank, pool: train_attrs };
            let (embedder, head, stats) = finetune_ufte(&base.backbone, &source, &cfg)?;
            (
                ModelBundle { meta, backbone: embedder, head: Some(head), attr_head: None },
                stats,
            )
        }
        "ufta" => {
            let ckpt = backbone_ckpt
                .ok_or_else(|| usage("--backbone checkpoint is required for ufta"))?;
            let base = load_embedder(&ckpt)?;
            let (embedder, head, attr_head, stats) =
                finetune_ufta(&base.backbone, &examples, &train_attrs, &cfg)?;
            (
                ModelBundle {
                    meta,
                    backbone: embedder,
                    head: Some(head),
                    attr_head: Some(attr_head),
                },
                stats,
            )
        }
        other => return Err(usage(format!("unknown training algorithm {other:?}"))),
    };

    save_bundle(&bundle, &common.out.join("model.ckpt")).map_err(|e| runtime(e.to_string()))?;
    write_file(&common.out.join("loss_summary.csv"), &loss_summary(&stats))
}
