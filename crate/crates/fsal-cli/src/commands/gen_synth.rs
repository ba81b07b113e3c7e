//! Generate a synthetic world directory: attribute matrix, rendered inputs,
//! and the generative model.

use serde::{Deserialize, Serialize};

use fsal_core::numkit::rng_derive;
use fsal_core::synthgen::{
    sample_independent_world, sample_transfer_world, GenerativeModel, ItemBank, SynthWorldConfig,
};

use crate::config::{merge_config, write_manifest};
use crate::util::{ensure_dir, usage, CliResult};
use crate::world::save_world;
use crate::CommonArgs;

const LBL_GEN_MODEL: u64 = 0x110;
const LBL_GEN_BANK: u64 = 0x111;

#[derive(Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub kind: String,
    pub items: usize,
    pub attrs: usize,
    pub train_attrs: usize,
    pub test_attrs: usize,
    pub dependency_noise: f64,
    pub prior: f64,
    pub noise_std: f64,
    pub input_dim: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            kind: "conjunction".into(),
            items: 2000,
            attrs: 12,
            train_attrs: 6,
            test_attrs: 6,
            dependency_noise: 0.1,
            prior: 0.5,
            noise_std: 0.1,
            input_dim: 24,
        }
    }
}

pub struct Overrides {
    pub kind: Option<String>,
    pub items: Option<usize>,
    pub attrs: Option<usize>,
    pub train_attrs: Option<usize>,
    pub test_attrs: Option<usize>,
    pub dependency_noise: Option<f64>,
    pub prior: Option<f64>,
    pub noise_std: Option<f64>,
    pub input_dim: Option<usize>,
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
        put!(kind);
        put!(items);
        put!(attrs);
        put!(train_attrs);
        put!(test_attrs);
        put!(dependency_noise);
        put!(prior);
        put!(noise_std);
        put!(input_dim);
        serde_json::Value::Object(map)
    }
}

pub fn run(common: CommonArgs, overrides: Overrides) -> CliResult<()> {
    let params: GenParams =
        merge_config(&GenParams::default(), common.config.as_deref(), overrides.to_json())?;
    ensure_dir(&common.out)?;
    write_manifest(&common.out, "gen-synth", common.seed, common.jobs, &params)?;

    let (matrix, d_train) = match params.kind.as_str() {
        "conjunction" => {
            if params.train_attrs == 0 || params.train_attrs >= params.attrs {
                return Err(usage("need 0 < --train-attrs < --attrs"));
            }
            let m = sample_independent_world(params.items, params.attrs, params.prior, common.seed)?;
            (m, params.train_attrs)
        }
        "transfer" => {
            let config = SynthWorldConfig {
                n_items: params.items,
                attr_prior: vec![params.prior],
                dependency_noise: params.dependency_noise,
                seed: common.seed,
            };
            let m = sample_transfer_world(&config, params.train_attrs, params.test_attrs)?;
            (m, params.train_attrs)
        }
        other => return Err(usage(format!("unknown world kind {other:?}"))),
    };

    let n_attrs = matrix.n_attrs();
    if params.input_dim < n_attrs {
        return Err(usage(format!(
            "--input-dim {} is smaller than the {} attributes",
            params.input_dim, n_attrs
        )));
    }
    let mut model_rng = rng_derive(common.seed, &[LBL_GEN_MODEL]);
    let model = GenerativeModel::sample_uniform(
        params.input_dim,
        n_attrs,
        d_train,
        params.noise_std,
        &mut model_rng,
    )?;
    let mut bank_rng = rng_derive(common.seed, &[LBL_GEN_BANK]);
    let bank = ItemBank::generate(matrix, model, &mut bank_rng)?;
    save_world(&common.out, &bank)
}
