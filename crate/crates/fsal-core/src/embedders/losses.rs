//! Loss functions over embeddings, each paired with its analytic gradient.
//!
//! Gradients are taken with respect to the embeddings (and attribute-head
//! parameters where applicable); callers chain them through the networks.

use crate::error::{Error, Result};
use crate::numkit::{bce_with_logit, dot, sigmoid, sq_dist, Matrix};

/// Contrastive batch loss over projected pairs, mean per example.
///
/// `L = -(1/B) sum_i log( exp(z_i . z'_i / tau) / sum_j exp(z_i . z'_j / tau) )`
pub fn infonce_loss(z: &[Vec<f64>], zp: &[Vec<f64>], tau: f64) -> Result<f64> {
    Ok(infonce_loss_grads(z, zp, tau)?.0)
}

/// Loss plus gradients with respect to both views.
pub fn infonce_loss_grads(
    z: &[Vec<f64>],
    zp: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = z.len();
    if b < 2 {
        return Err(Error::InvalidArgument(
            "contrastive batch needs at least two examples".into(),
        ));
    }
    if zp.len() != b {
        return Err(Error::Dimension("view batch sizes differ".into()));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let dim = z[0].len();
    let mut scores = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            scores[i * b + j] = dot(&z[i], &zp[j]) / tau;
        }
    }
    let mut loss = 0.0;
    let mut dscore = vec![0.0; b * b]; // d(mean loss)/d(score_ij)
    for i in 0..b {
        let row = &scores[i * b..(i + 1) * b];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += -(row[i] - m - sum.ln());
        for j in 0..b {
            let p = exps[j] / sum;
            dscore[i * b + j] = (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    loss /= b as f64;

    let mut dz = vec![vec![0.0; dim]; b];
    let mut dzp = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let g = dscore[i * b + j] / tau;
            if g == 0.0 {
                continue;
            }
            for k in 0..dim {
                dz[i][k] += g * zp[j][k];
                dzp[j][k] += g * z[i][k];
            }
        }
    }
    Ok((loss, dz, dzp))
}

/// Prototype binary cross-entropy over a balanced episode, mean per query.
///
/// The positive-class probability of a query embedding `g` is
/// `sigma(d(g, c-) - d(g, c+))` with `c+`/`c-` the support means and `d`
/// squared Euclidean distance.
pub fn proto_loss(
    support_pos: &[Vec<f64>],
    support_neg: &[Vec<f64>],
    queries: &[(Vec<f64>, u8)],
) -> Result<f64> {
    Ok(proto_loss_grads(support_pos, support_neg, queries)?.loss)
}

pub struct ProtoGrads {
    pub loss: f64,
    pub d_support_pos: Vec<Vec<f64>>,
    pub d_support_neg: Vec<Vec<f64>>,
    pub d_queries: Vec<Vec<f64>>,
}

pub fn proto_loss_grads(
    support_pos: &[Vec<f64>],
    support_neg: &[Vec<f64>],
    queries: &[(Vec<f64>, u8)],
) -> Result<ProtoGrads> {
    if support_pos.is_empty() || support_neg.is_empty() || queries.is_empty() {
        return Err(Error::InvalidArgument(
            "prototype loss needs support on both sides and at least one query".into(),
        ));
    }
    let dim = support_pos[0].len();
    let mean = |set: &[Vec<f64>]| -> Vec<f64> {
        let mut c = vec![0.0; dim];
        for g in set {
            for (ci, gi) in c.iter_mut().zip(g) {
                *ci += gi;
            }
        }
        for ci in &mut c {
            *ci /= set.len() as f64;
        }
        c
    };
    let c_pos = mean(support_pos);
    let c_neg = mean(support_neg);

    let m = queries.len() as f64;
    let mut loss = 0.0;
    let mut d_pos = vec![vec![0.0; dim]; support_pos.len()];
    let mut d_neg = vec![vec![0.0; dim]; support_neg.len()];
    let mut d_q = vec![vec![0.0; dim]; queries.len()];

    for (qi, (g, y)) in queries.iter().enumerate() {
        let d_to_pos = sq_dist(g, &c_pos);
        let d_to_neg = sq_dist(g, &c_neg);
        let logit = d_to_neg - d_to_pos;
        let y = *y as f64;
        loss += bce_with_logit(logit, y) / m;
        let e = (sigmoid(logit) - y) / m;
        for k in 0..dim {
            // d logit / d g = 2 (c+ - c-)
            d_q[qi][k] += e * 2.0 * (c_pos[k] - c_neg[k]);
            // d logit / d c+ = 2 (g - c+), shared equally by the support mean
            let dcp = e * 2.0 * (g[k] - c_pos[k]) / support_pos.len() as f64;
            for row in &mut d_pos {
                row[k] += dcp;
            }
            let dcn = -e * 2.0 * (g[k] - c_neg[k]) / support_neg.len() as f64;
            for row in &mut d_neg {
                row[k] += dcn;
            }
        }
    }
    Ok(ProtoGrads {
        loss,
        d_support_pos: d_pos,
        d_support_neg: d_neg,
        d_queries: d_q,
    })
}

/// Multi-label attribute binary cross-entropy through a linear head with
/// sigmoid activation, mean over batch and attributes.
pub struct AttributeBceGrads {
    pub loss: f64,
    pub d_embeddings: Vec<Vec<f64>>,
    pub d_weight: Matrix,
    pub d_bias: Vec<f64>,
}

pub fn attribute_bce_loss(
    weight: &Matrix,
    bias: &[f64],
    embeddings: &[Vec<f64>],
    labels: &[Vec<u8>],
) -> Result<f64> {
    Ok(attribute_bce_grads(weight, bias, embeddings, labels)?.loss)
}

pub fn attribute_bce_grads(
    weight: &Matrix,
    bias: &[f64],
    embeddings: &[Vec<f64>],
    labels: &[Vec<u8>],
) -> Result<AttributeBceGrads> {
    let b = embeddings.len();
    if b == 0 || labels.len() != b {
        return Err(Error::Dimension("batch and label counts disagree".into()));
    }
    let k = weight.rows();
    if bias.len() != k {
        return Err(Error::Dimension("attribute head bias length mismatch".into()));
    }
    let dim = weight.cols();
    let denom = (b * k) as f64;
    let mut loss = 0.0;
    let mut d_emb = vec![vec![0.0; dim]; b];
    let mut d_w = Matrix::zeros(k, dim);
    let mut d_b = vec![0.0; k];
    for (bi, (g, a)) in embeddings.iter().zip(labels).enumerate() {
        if g.len() != dim {
            return Err(Error::Dimension("embedding dim mismatch".into()));
        }
        if a.len() != k {
            return Err(Error::Dimension("label vector length mismatch".into()));
        }
        let mut logits = weight.matvec(g);
        for (l, bk) in logits.iter_mut().zip(bias) {
            *l += bk;
        }
        for (ki, (&l, &ak)) in logits.iter().zip(a.iter()).enumerate() {
            let y = ak as f64;
            loss += bce_with_logit(l, y) / denom;
            let delta = (sigmoid(l) - y) / denom;
            d_b[ki] += delta;
            let wrow = weight.row(ki);
            for (j, (&gj, &wj)) in g.iter().zip(wrow).enumerate() {
                d_w.data_mut()[ki * dim + j] += delta * gj;
                d_emb[bi][j] += delta * wj;
            }
        }
    }
    Ok(AttributeBceGrads {
        loss,
        d_embeddings: d_emb,
        d_weight: d_w,
        d_bias: d_b,
    })
}

/// Positive-class probabilities of queries against two class prototypes.
/// Shared by prototypical prediction and the nearest-centroid classifier.
pub fn proto_probs(
    c_pos: &[f64],
    c_neg: &[f64],
    queries: &[Vec<f64>],
    metric: Dissimilarity,
) -> Vec<f64> {
    queries
        .iter()
        .map(|q| {
            let logit = metric.eval(q, c_neg) - metric.eval(q, c_pos);
            sigmoid(logit)
        })
        .collect()
}

/// Dissimilarity used by prototype and neighbor classifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dissimilarity {
    SquaredEuclidean,
    Cosine,
}

impl Dissimilarity {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Dissimilarity::SquaredEuclidean => sq_dist(a, b),
            Dissimilarity::Cosine => {
                let na = dot(a, a).sqrt();
                let nb = dot(b, b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot(a, b) / (na * nb)
                }
            }
        }
    }
}
