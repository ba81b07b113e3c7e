//! Config merging (defaults <- config file <- flags) and run manifests.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::util::{usage, write_file, CliResult};

/// Overlay JSON objects: file config over defaults, then CLI flags over both.
pub fn merge_config<T>(defaults: &T, config_file: Option<&Path>, cli: serde_json::Value) -> CliResult<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut base = serde_json::to_value(defaults)
        .map_err(|e| usage(format!("internal config serialization: {e}")))?;
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
        let overlay: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        apply_overlay(&mut base, &overlay)?;
    }
    apply_overlay(&mut base, &cli)?;
    serde_json::from_value(base).map_err(|e| usage(format!("invalid config: {e}")))
}

fn apply_overlay(base: &mut serde_json::Value, overlay: &serde_json::Value) -> CliResult<()> {
    let serde_json::Value::Object(over) = overlay else {
        return Err(usage("config must be a JSON object"));
    };
    let serde_json::Value::Object(map) = base else {
        return Err(usage("internal: config base is not an object"));
    };
    for (k, v) in over {
        if !map.contains_key(k) {
            return Err(usage(format!("unknown config key {k:?}")));
        }
        map.insert(k.clone(), v.clone());
    }
    Ok(())
}

/// Stable hex hash of the canonical config JSON.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let text = serde_json::to_string(config).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Write `manifest.json` into the output directory before any results.
pub fn write_manifest<T: Serialize>(
    out: &Path,
    command: &str,
    seed: u64,
    jobs: usize,
    config: &T,
) -> CliResult<()> {
    let manifest = serde_json::json!({
        "tool": "fsal",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "jobs": jobs,
        "out": out.display().to_string(),
        "config": serde_json::to_value(config).unwrap_or_default(),
        "config_hash": config_hash(config),
    });
    let text = serde_json::to_string_pretty(&manifest).unwrap_or_default();
    write_file(&out.join("manifest.json"), &(text + "\n"))
}
