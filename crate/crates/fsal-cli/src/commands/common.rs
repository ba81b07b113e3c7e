//! Shared data-source plumbing for evaluation-style commands.

use std::path::{Path, PathBuf};

use fsal_core::attrdata::{builtin_split_json, parse_split, read_matrix, AttributeMatrix};
use fsal_core::embedders::checkpoint::{load_bundle, ModelBundle};
use fsal_core::synthgen::ItemBank;

use crate::util::{resolve_data_path, runtime, usage, CliResult};
use crate::world::load_world;

/// Either a full synthetic world or a bare attribute matrix.
pub enum Source {
    Bank(ItemBank),
    MatrixOnly(AttributeMatrix),
}

impl Source {
    pub fn matrix(&self) -> &AttributeMatrix {
        match self {
            Source::Bank(bank) => &bank.matrix,
            Source::MatrixOnly(m) => m,
        }
    }

    pub fn bank(&self) -> Option<&ItemBank> {
        match self {
            Source::Bank(bank) => Some(bank),
            Source::MatrixOnly(_) => None,
        }
    }
}

pub fn load_source(matrix: Option<&PathBuf>, world: Option<&PathBuf>) -> CliResult<Source> {
    match (matrix, world) {
        (Some(_), Some(_)) => Err(usage("give either --matrix or --world, not both")),
        (None, None) => Err(usage("a data source is required: --matrix or --world")),
        (Some(path), None) => {
            let path = resolve_data_path(path);
            Ok(Source::MatrixOnly(
                read_matrix(&path).map_err(|e| runtime(e.to_string()))?,
            ))
        }
        (None, Some(dir)) => {
            let dir = resolve_data_path(dir);
            Ok(Source::Bank(load_world(&dir)?))
        }
    }
}

/// Resolve the attribute pool for episode sampling.
///
/// A split (builtin name or config path) wins; otherwise worlds fall back to
/// the generative model's own train/test partition.
pub fn resolve_pool(source: &Source, split: Option<&str>, side: &str) -> CliResult<Vec<usize>> {
    let matrix = source.matrix();
    if side == "all" {
        return Ok((0..matrix.n_attrs()).collect());
    }
    if let Some(name) = split {
        let text = match builtin_split_json(name) {
            Some(text) => text.to_string(),
            None => {
                let path = resolve_data_path(Path::new(name));
                std::fs::read_to_string(&path)
                    .map_err(|e| usage(format!("split {}: {e}", path.display())))?
            }
        };
        let split = parse_split(&text).map_err(|e| usage(e.to_string()))?;
        split.validate(matrix).map_err(|e| usage(e.to_string()))?;
        return Ok(match side {
            "train" => split.train_indices(matrix),
            _ => split.test_indices(matrix),
        });
    }
    match source {
        Source::Bank(bank) => Ok(match side {
            "train" => bank.model.train_attrs(),
            _ => bank.model.test_attrs(),
        }),
        Source::MatrixOnly(_) => Err(usage(
            "a bare matrix needs --split to define train/test sides",
        )),
    }
}

pub fn load_embedder(path: &Path) -> CliResult<ModelBundle> {
    load_bundle(&resolve_data_path(path)).map_err(|e| runtime(e.to_string()))
}
