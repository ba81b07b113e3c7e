//! Synthetic data from a linear generative model, plus configurable attribute
//! worlds with a transferability knob.
//!
//! Data points are `x = A z + noise` for a binary attribute string `z`; the
//! first `d_train` attributes are the training side, the rest the test side.

use std::fmt::Write as _;
use std::path::Path;

use crate::attrdata::AttributeMatrix;
use crate::error::{Error, Result};
use crate::numkit::{rng_derive, Matrix, RngStream};

const LBL_TW_WEIGHT: u64 = 0x7731;
const LBL_TW_FLIP: u64 = 0x7732;
const LBL_TW_TRAIN: u64 = 0x7733;

/// Linear generative model: full-column-rank map from attribute strings to
/// inputs, with Gaussian observation noise.
#[derive(Clone, Debug)]
pub struct GenerativeModel {
    a: Matrix, // m x d
    noise_std: f64,
    d_train: usize,
}

impl GenerativeModel {
    pub fn new(a: Matrix, noise_std: f64, d_train: usize) -> Result<Self> {
        if a.rows() < a.cols() {
            return Err(Error::InvalidArgument(format!(
                "need m >= d, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if d_train == 0 || d_train >= a.cols() {
            return Err(Error::InvalidArgument(format!(
                "need 0 < d_train < d, got d_train={d_train}, d={}",
                a.cols()
            )));
        }
        if !(noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        if !a.has_full_column_rank() {
            return Err(Error::Validation(
                "generative matrix must have full column rank".into(),
            ));
        }
        Ok(Self { a, noise_std, d_train })
    }

    /// Sample `A` with i.i.d. uniform(-1,1) entries and rank-verify it.
    pub fn sample_uniform(
        m: usize,
        d: usize,
        d_train: usize,
        noise_std: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        for _ in 0..16 {
            let data: Vec<f64> = (0..m * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let a = Matrix::new(m, d, data)?;
            if a.has_full_column_rank() {
                return Self::new(a, noise_std, d_train);
            }
        }
        Err(Error::Sampling {
            tries: 16,
            msg: "could not sample a full-column-rank matrix".into(),
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn input_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn n_attrs(&self) -> usize {
        self.a.cols()
    }

    pub fn d_train(&self) -> usize {
        self.d_train
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn train_attrs(&self) -> Vec<usize> {
        (0..self.d_train).collect()
    }

    pub fn test_attrs(&self) -> Vec<usize> {
        (self.d_train..self.n_attrs()).collect()
    }

    /// `x = A z + zeta` for a given attribute string.
    pub fn render(&self, z: &[u8], rng: &mut RngStream) -> Vec<f64> {
        assert_eq!(z.len(), self.n_attrs(), "attribute string length mismatch");
        let zf: Vec<f64> = z.iter().map(|&b| b as f64).collect();
        let mut x = self.a.matvec(&zf);
        if self.noise_std > 0.0 {
            for v in &mut x {
                *v += self.noise_std * rng.next_gaussian();
            }
        }
        x
    }
}

/// One synthetic data point: input vector and its attribute string.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub z: Vec<u8>,
}

/// Draw `n` examples with i.i.d. Bernoulli(0.5) attributes.
pub fn sample_dataset(model: &GenerativeModel, n: usize, rng: &mut RngStream) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let z: Vec<u8> = (0..model.n_attrs())
                .map(|_| rng.bernoulli(0.5) as u8)
                .collect();
            let x = model.render(&z, rng);
            Example { x, z }
        })
        .collect()
}

/// Configuration for synthetic attribute worlds.
#[derive(Clone, Debug)]
pub struct SynthWorldConfig {
    pub n_items: usize,
    /// Bernoulli prior per train attribute (single entry broadcasts).
    pub attr_prior: Vec<f64>,
    /// Probability that a test attribute's deterministic value is flipped:
    /// 0 gives fully predictable test attributes, 0.5 independent ones.
    pub dependency_noise: f64,
    pub seed: u64,
}

impl SynthWorldConfig {
    fn validate(&self, d_train: usize) -> Result<Vec<f64>> {
        if self.n_items == 0 {
            return Err(Error::InvalidArgument("n_items must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dependency_noise) {
            return Err(Error::InvalidArgument(
                "dependency_noise must lie in [0,1]".into(),
            ));
        }
        let priors = match self.attr_prior.len() {
            1 => vec![self.attr_prior[0]; d_train],
            n if n == d_train => self.attr_prior.clone(),
            n => {
                return Err(Error::InvalidArgument(format!(
                    "attr_prior has {n} entries, expected 1 or {d_train}"
                )))
            }
        };
        if priors.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::InvalidArgument(
                "attribute priors must lie in (0,1)".into(),
            ));
        }
        Ok(priors)
    }
}

/// Sample a world whose test attributes are noisy threshold functions of the
/// train attributes.
///
/// Each test attribute thresholds a random linear function of the train
/// attribute vector at its median, then flips each item independently with
/// probability `dependency_noise`.
pub fn sample_transfer_world(
    config: &SynthWorldConfig,
    d_train: usize,
    d_test: usize,
) -> Result<AttributeMatrix> {
    if d_train == 0 || d_test == 0 {
        return Err(Error::InvalidArgument(
            "need at least one train and one test attribute".into(),
        ));
    }
    let priors = config.validate(d_train)?;
    let n = config.n_items;

    let mut train_rng = rng_derive(config.seed, &[LBL_TW_TRAIN]);
    let mut rows: Vec<Vec<u8>> = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<u8> = priors.iter().map(|&p| train_rng.bernoulli(p) as u8).collect();
        rows.push(row);
    }

    for k in 0..d_test {
        let mut base = Vec::with_capacity(n);
        let mut found = false;
        for attempt in 0..100u64 {
            let mut wrng = rng_derive(config.seed, &[LBL_TW_WEIGHT, k as u64, attempt]);
            let w: Vec<f64> = (0..d_train).map(|_| wrng.uniform(-1.0, 1.0)).collect();
            let proj: Vec<f64> = rows
                .iter()
                .map(|r| r[..d_train].iter().zip(&w).map(|(&z, &wi)| z as f64 * wi).sum())
                .collect();
            let mut sorted = proj.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let theta = if n == 1 {
                sorted[0] - 1.0
            } else {
                0.5 * (sorted[(n - 1) / 2] + sorted[n / 2])
            };
            base = proj.iter().map(|&p| (p > theta) as u8).collect();
            if base.iter().any(|&b| b == 1) && base.iter().any(|&b| b == 0) {
                found = true;
                break;
            }
            // Median thresholding can degenerate under heavy ties; split at
            // the midpoint of the value range instead.
            let (lo, hi) = (sorted[0], sorted[n - 1]);
            if hi > lo {
                let mid = 0.5 * (lo + hi);
                base = proj.iter().map(|&p| (p > mid) as u8).collect();
                if base.iter().any(|&b| b == 1) && base.iter().any(|&b| b == 0) {
                    found = true;
                    break;
                }
            }
        }
        if !found && n > 1 {
            return Err(Error::Sampling {
                tries: 100,
                msg: format!("could not derive a non-degenerate test attribute {k}"),
            });
        }
        let mut frng = rng_derive(config.seed, &[LBL_TW_FLIP, k as u64]);
        for (i, row) in rows.iter_mut().enumerate() {
            let flip = frng.bernoulli(config.dependency_noise);
            row.push(base[i] ^ (flip as u8));
        }
    }

    let item_ids = (0..n).map(|i| format!("item{i:06}")).collect();
    let attr_names = (0..d_train)
        .map(|j| format!("train{j:02}"))
        .chain((0..d_test).map(|j| format!("test{j:02}")))
        .collect();
    AttributeMatrix::new(item_ids, attr_names, rows.concat())
}

/// Sample a world of independent Bernoulli attributes (no built-in
/// train-to-test structure).
pub fn sample_independent_world(
    n_items: usize,
    n_attrs: usize,
    prior: f64,
    seed: u64,
) -> Result<AttributeMatrix> {
    if n_items == 0 || n_attrs == 0 {
        return Err(Error::InvalidArgument("empty world".into()));
    }
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::InvalidArgument("prior must lie in (0,1)".into()));
    }
    let mut rng = rng_derive(seed, &[LBL_TW_TRAIN]);
    let labels: Vec<u8> = (0..n_items * n_attrs)
        .map(|_| rng.bernoulli(prior) as u8)
        .collect();
    let item_ids = (0..n_items).map(|i| format!("item{i:06}")).collect();
    let attr_names = (0..n_attrs).map(|j| format!("attr{j:02}")).collect();
    AttributeMatrix::new(item_ids, attr_names, labels)
}

/// A matrix of items with rendered input vectors; the sampling universe for
/// bank-based pipelines.
#[derive(Clone, Debug)]
pub struct ItemBank {
    pub matrix: AttributeMatrix,
    pub xs: Vec<Vec<f64>>,
    pub model: GenerativeModel,
}

impl ItemBank {
    /// Render every item of `matrix` through `model` once.
    pub fn generate(matrix: AttributeMatrix, model: GenerativeModel, rng: &mut RngStream) -> Result<Self> {
        if matrix.n_attrs() != model.n_attrs() {
            return Err(Error::Dimension(format!(
                "matrix has {} attributes, model expects {}",
                matrix.n_attrs(),
                model.n_attrs()
            )));
        }
        let xs = (0..matrix.n_items())
            .map(|i| model.render(matrix.item_row(i), rng))
            .collect();
        Ok(Self { matrix, xs, model })
    }

    pub fn examples(&self) -> Vec<Example> {
        (0..self.matrix.n_items())
            .map(|i| Example {
                x: self.xs[i].clone(),
                z: self.matrix.item_row(i).to_vec(),
            })
            .collect()
    }
}

// --- companion x-vector file ---------------------------------------------

const X_MAGIC: &str = "FSAL-X v1";

pub fn write_xfile(xs: &[Vec<f64>], path: &Path) -> Result<()> {
    std::fs::write(path, render_xfile(xs)?).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn render_xfile(xs: &[Vec<f64>]) -> Result<String> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::Validation("refusing to write an empty x file".into()));
    }
    let m = xs[0].len();
    if xs.iter().any(|x| x.len() != m) {
        return Err(Error::Dimension("ragged x vectors".into()));
    }
    let mut out = String::new();
    writeln!(out, "{X_MAGIC} {n} {m}").unwrap();
    for x in xs {
        let mut first = true;
        for v in x {
            if !first {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
            first = false;
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_xfile(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_xfile(&text)
}

pub fn parse_xfile(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty x file".into()))?;
    let rest = header
        .strip_prefix(X_MAGIC)
        .ok_or_else(|| Error::Format(format!("bad magic/version in {header:?}")))?;
    let dims: Vec<usize> = rest
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format("bad dimensions in x header".into()))?;
    if dims.len() != 2 {
        return Err(Error::Format("x header must state n and m".into()));
    }
    let (n, m) = (dims[0], dims[1]);
    let mut xs = Vec::with_capacity(n);
    for line in lines {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format("bad decimal in x file".into()))?;
        if row.len() != m {
            return Err(Error::Format(format!(
                "expected {m} values per row, found {}",
                row.len()
            )));
        }
        xs.push(row);
    }
    if xs.len() != n {
        return Err(Error::Format(format!("expected {n} rows, found {}", xs.len())));
    }
    Ok(xs)
}

// --- model file ------------------------------------------------------------

const MODEL_MAGIC: &str = "FSAL-MODEL v1";

pub fn write_model(model: &GenerativeModel, path: &Path) -> Result<()> {
    std::fs::write(path, render_model(model)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn render_model(model: &GenerativeModel) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{MODEL_MAGIC} {} {} {}",
        model.input_dim(),
        model.n_attrs(),
        model.d_train()
    )
    .unwrap();
    writeln!(out, "noise_std {}", model.noise_std()).unwrap();
    for i in 0..model.input_dim() {
        let row = model.matrix().row(i);
        let strs: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", strs.join(" ")).unwrap();
    }
    out
}

pub fn read_model(path: &Path) -> Result<GenerativeModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_model(&text)
}

pub fn parse_model(text: &str) -> Result<GenerativeModel> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty model file".into()))?;
    let rest = header
        .strip_prefix(MODEL_MAGIC)
        .ok_or_else(|| Error::Format(format!("bad magic/version in {header:?}")))?;
    let dims: Vec<usize> = rest
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format("bad dimensions in model header".into()))?;
    if dims.len() != 3 {
        return Err(Error::Format("model header must state m d d_train".into()));
    }
    let (m, d, d_train) = (dims[0], dims[1], dims[2]);
    let noise_line = lines
        .next()
        .ok_or_else(|| Error::Format("missing noise_std line".into()))?;
    let noise_std: f64 = noise_line
        .strip_prefix("noise_std ")
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| Error::Format("malformed noise_std line".into()))?;
    let mut data = Vec::with_capacity(m * d);
    for line in lines {
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::Format("bad decimal in model file".into()))?,
            );
        }
    }
    let a = Matrix::new(m, d, data)?;
    GenerativeModel::new(a, noise_std, d_train)
}
