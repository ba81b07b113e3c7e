//! Synthetic world directories: canonical matrix + input vectors + model.

use std::path::Path;

use fsal_core::attrdata::{read_matrix, write_matrix};
use fsal_core::synthgen::{read_model, read_xfile, write_model, write_xfile, ItemBank};

use crate::util::{runtime, CliResult};

pub const MATRIX_FILE: &str = "world.attr";
pub const X_FILE: &str = "world.x";
pub const MODEL_FILE: &str = "world.model";

pub fn save_world(dir: &Path, bank: &ItemBank) -> CliResult<()> {
    write_matrix(&bank.matrix, &dir.join(MATRIX_FILE)).map_err(|e| runtime(e.to_string()))?;
    write_xfile(&bank.xs, &dir.join(X_FILE)).map_err(|e| runtime(e.to_string()))?;
    write_model(&bank.model, &dir.join(MODEL_FILE)).map_err(|e| runtime(e.to_string()))?;
    Ok(())
}

pub fn load_world(dir: &Path) -> CliResult<ItemBank> {
    let matrix = read_matrix(&dir.join(MATRIX_FILE)).map_err(|e| runtime(e.to_string()))?;
    let xs = read_xfile(&dir.join(X_FILE)).map_err(|e| runtime(e.to_string()))?;
    let model = read_model(&dir.join(MODEL_FILE)).map_err(|e| runtime(e.to_string()))?;
    if xs.len() != matrix.n_items() {
        return Err(runtime(format!(
            "world {} has {} items but {} input vectors",
            dir.display(),
            matrix.n_items(),
            xs.len()
        )));
    }
    Ok(ItemBank { matrix, xs, model })
}
