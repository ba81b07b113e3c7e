//! Ingest annotation files into the canonical matrix format.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fsal_core::attrdata::{ingest_celeba, ingest_long_csv, write_matrix};

use crate::config::write_manifest;
use crate::util::{ensure_dir, resolve_data_path, runtime, usage, CliResult};
use crate::CommonArgs;

#[derive(Serialize, Deserialize)]
struct IngestParams {
    format: String,
    input: String,
    select: Option<String>,
}

pub fn run(
    common: CommonArgs,
    format: &str,
    input: PathBuf,
    select: Option<String>,
) -> CliResult<()> {
    ensure_dir(&common.out)?;
    let params = IngestParams {
        format: format.into(),
        input: input.display().to_string(),
        select: select.clone(),
    };
    write_manifest(&common.out, "ingest", common.seed, common.jobs, &params)?;

    let path = resolve_data_path(&input);
    let matrix = match format {
        "celeba" => {
            let selected: Option<Vec<String>> =
                select.map(|s| s.split(',').map(|t| t.trim().to_owned()).collect());
            ingest_celeba(&path, selected.as_deref()).map_err(|e| runtime(e.to_string()))?
        }
        "long-csv" => {
            if select.is_some() {
                return Err(usage("--select applies to the celeba format only"));
            }
            ingest_long_csv(&path).map_err(|e| runtime(e.to_string()))?
        }
        other => return Err(usage(format!("unknown ingest format {other:?}"))),
    };
    write_matrix(&matrix, &common.out.join("matrix.attr")).map_err(|e| runtime(e.to_string()))
}
