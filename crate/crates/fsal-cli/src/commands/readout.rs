//! Per-attribute linear readout of a trained embedder.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fsal_core::analysis::readout_auc;

use crate::commands::common::{load_embedder, resolve_pool, Source};
use crate::config::{merge_config, write_manifest};
use crate::util::{ensure_dir, write_file, CliResult};
use crate::world::load_world;
use crate::CommonArgs;

#[derive(Clone, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub holdout: f64,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        Self { holdout: 0.2 }
    }
}

pub fn run(
    common: CommonArgs,
    embedder: PathBuf,
    world: PathBuf,
    side: Option<&str>,
    holdout: Option<f64>,
) -> CliResult<()> {
    let mut cli = serde_json::Map::new();
    if let Some(h) = holdout {
        cli.insert("holdout".into(), serde_json::json!(h));
    }
    let params: ReadoutParams = merge_config(
        &ReadoutParams::default(),
        common.config.as_deref(),
        serde_json::Value::Object(cli),
    )?;

    let bank = load_world(&crate::util::resolve_data_path(&world))?;
    let bundle = load_embedder(&embedder)?;
    let source = Source::Bank(bank);
    let attrs = resolve_pool(&source, None, side.unwrap_or("all"))?;
    let bank = source.bank().expect("bank source");

    ensure_dir(&common.out)?;
    write_manifest(&common.out, "readout", common.seed, common.jobs, &params)?;

    let zs: Vec<Vec<u8>> = (0..bank.matrix.n_items())
        .map(|i| bank.matrix.item_row(i).to_vec())
        .collect();
    let records = readout_auc(
        &bundle.backbone,
        &bank.xs,
        &zs,
        &attrs,
        params.holdout,
        common.seed,
    )?;

    let mut out = String::from("attr_index,attr_name,auc\n");
    for r in &records {
        let auc = r.auc.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{auc}\n",
            r.attr,
            bank.matrix.attr_names()[r.attr]
        ));
    }
    write_file(&common.out.join("readout.csv"), &out)
}
