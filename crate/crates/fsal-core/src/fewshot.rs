//! Stage-II classifiers applied per episode on frozen features: nearest
//! neighbor, nearest centroid, L1-regularized logistic regression, and the
//! ground-truth oracle that reads attribute vectors directly.

use crate::embedders::{proto_probs, Dissimilarity};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::numkit::{bce_with_logit, sigmoid, soft_threshold};

/// Sparse linear readout fit per episode.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
}

impl LinearClassifier {
    pub fn score(&self, x: &[f64]) -> f64 {
        crate::numkit::dot(&self.w, x) + self.b
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        (self.prob(x) > 0.5) as u8
    }

    pub fn n_nonzero(&self) -> usize {
        self.w.iter().filter(|v| **v != 0.0).count()
    }
}

/// Solver settings for the per-episode logistic regression.
#[derive(Clone, Copy, Debug)]
pub struct FitConfig {
    pub lambda: f64,
    pub n_iters: usize,
    pub step_size: f64,
    pub metric: Dissimilarity,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            n_iters: 500,
            step_size: 0.1,
            metric: Dissimilarity::SquaredEuclidean,
        }
    }
}

impl FitConfig {
    /// Defaults for ground-truth attribute features.
    pub fn for_gt() -> Self {
        Self { lambda: 1e-2, ..Self::default() }
    }
}

/// Mean binary cross-entropy plus the L1 penalty on `w` (bias unpenalized).
pub fn lr_objective(features: &[Vec<f64>], labels: &[u8], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = features.len() as f64;
    let bce: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| bce_with_logit(crate::numkit::dot(w, x) + b, y as f64))
        .sum::<f64>()
        / n;
    bce + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Proximal-gradient (ISTA) fit of the L1 logistic regression, returning the
/// classifier and the per-iteration objective trace.
///
/// Each iteration takes a gradient step on the smooth part, applies
/// soft-thresholding to `w`, and halves the step while the objective would
/// increase, so the trace is non-increasing.
pub fn fit_lr_traced(
    features: &[Vec<f64>],
    labels: &[u8],
    config: &FitConfig,
) -> Result<(LinearClassifier, Vec<f64>)> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InvalidArgument(
            "features and labels must be non-empty and equal length".into(),
        ));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::InvalidArgument(
            "need at least one example per class".into(),
        ));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature".into()));
    }
    if config.lambda < 0.0 || config.n_iters == 0 || config.step_size <= 0.0 {
        return Err(Error::InvalidArgument("bad solver settings".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|x| x.len() != dim) {
        return Err(Error::Dimension("ragged feature vectors".into()));
    }
    let n = features.len() as f64;

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut step = config.step_size;
    let mut obj = lr_objective(features, labels, &w, b, config.lambda);
    let mut trace = Vec::with_capacity(config.n_iters + 1);
    trace.push(obj);

    for _ in 0..config.n_iters {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let p = sigmoid(crate::numkit::dot(&w, x) + b);
            let e = (p - y as f64) / n;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += e * xi;
            }
            gb += e;
        }

        let mut accepted = false;
        for _ in 0..60 {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let cand_w = soft_threshold(&cand_w, step * config.lambda)?;
            let cand_b = b - step * gb;
            let cand_obj = lr_objective(features, labels, &cand_w, cand_b, config.lambda);
            if cand_obj <= obj + 1e-12 {
                w = cand_w;
                b = cand_b;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(obj);
        if !accepted {
            break;
        }
    }
    Ok((
        LinearClassifier { w, b, lambda: config.lambda },
        trace,
    ))
}

pub fn fit_lr(features: &[Vec<f64>], labels: &[u8], config: &FitConfig) -> Result<LinearClassifier> {
    fit_lr_traced(features, labels, config).map(|(c, _)| c)
}

/// Nearest-neighbor labels; exact distance ties go to the lowest support
/// index.
pub fn predict_nn(
    support: &[Vec<f64>],
    labels: &[u8],
    queries: &[Vec<f64>],
    metric: Dissimilarity,
) -> Result<Vec<u8>> {
    if support.is_empty() || support.len() != labels.len() {
        return Err(Error::InvalidArgument("empty or mismatched support".into()));
    }
    Ok(queries
        .iter()
        .map(|q| {
            let mut best = 0usize;
            let mut best_d = metric.eval(q, &support[0]);
            for (i, s) in support.iter().enumerate().skip(1) {
                let d = metric.eval(q, s);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            labels[best]
        })
        .collect())
}

/// Nearest-centroid predictions and positive-class probabilities; shares its
/// probability form with the prototypical predictor.
pub fn predict_nc(
    support: &[Vec<f64>],
    labels: &[u8],
    queries: &[Vec<f64>],
    metric: Dissimilarity,
) -> Result<(Vec<u8>, Vec<f64>)> {
    if support.is_empty() || support.len() != labels.len() {
        return Err(Error::InvalidArgument("empty or mismatched support".into()));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::InvalidArgument(
            "need at least one example per class".into(),
        ));
    }
    let dim = support[0].len();
    let mut c_pos = vec![0.0; dim];
    let mut c_neg = vec![0.0; dim];
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for (s, &y) in support.iter().zip(labels) {
        let (c, n) = if y == 1 {
            (&mut c_pos, &mut n_pos)
        } else {
            (&mut c_neg, &mut n_neg)
        };
        for (ci, si) in c.iter_mut().zip(s) {
            *ci += si;
        }
        *n += 1;
    }
    for v in &mut c_pos {
        *v /= n_pos as f64;
    }
    for v in &mut c_neg {
        *v /= n_neg as f64;
    }
    let probs = proto_probs(&c_pos, &c_neg, queries, metric);
    let preds = probs.iter().map(|&p| (p > 0.5) as u8).collect();
    Ok((preds, probs))
}

fn z_features(items: &[&crate::episodes::EpisodeItem]) -> Result<Vec<Vec<f64>>> {
    items
        .iter()
        .map(|item| {
            if item.z.is_empty() {
                Err(Error::InvalidArgument(
                    "ground-truth oracle needs attribute vectors".into(),
                ))
            } else {
                Ok(item.z.iter().map(|&b| b as f64).collect())
            }
        })
        .collect()
}

/// Query accuracy of the ground-truth oracle: a sparse logistic regression
/// fit directly on the support attribute vectors. Sparsity is what selects
/// the active attributes.
pub fn gt_oracle(episode: &Episode, config: &FitConfig) -> Result<f64> {
    let support = episode.support();
    let feats = z_features(&support.iter().map(|(i, _)| *i).collect::<Vec<_>>())?;
    let labels: Vec<u8> = support.iter().map(|(_, y)| *y).collect();
    let clf = fit_lr(&feats, &labels, config)?;
    let query = episode.query();
    let qfeats = z_features(&query.iter().map(|(i, _)| *i).collect::<Vec<_>>())?;
    let mut correct = 0usize;
    for (x, (_, y)) in qfeats.iter().zip(&query) {
        if clf.predict(x) == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / query.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{sample_fsal_episode, Context, EpisodeConfig, EpisodeItem};
    use crate::numkit::rng_derive;
    use crate::synthgen::sample_independent_world;

    #[test]
    fn separable_pair_is_learned_exactly() {
        let feats = vec![vec![-1.0], vec![1.0]];
        let labels = vec![0u8, 1u8];
        let cfg = FitConfig { lambda: 0.0, ..FitConfig::default() };
        let clf = fit_lr(&feats, &labels, &cfg).unwrap();
        assert_eq!(clf.predict(&[-1.0]), 0);
        assert_eq!(clf.predict(&[1.0]), 1);
    }

    #[test]
    fn huge_lambda_zeroes_weights() {
        let mut rng = rng_derive(1, &[5]);
        let feats: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let labels: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let cfg = FitConfig { lambda: 1e3, ..FitConfig::default() };
        let clf = fit_lr(&feats, &labels, &cfg).unwrap();
        assert!(clf.w.iter().all(|&v| v == 0.0), "w = {:?}", clf.w);
    }

    /// Shrinking-grid search over (w, b); independent of the ISTA path.
    fn grid_search_objective(feats: &[Vec<f64>], labels: &[u8], lambda: f64) -> f64 {
        let dim = feats[0].len();
        let mut center = vec![0.0; dim + 1]; // w..., b
        let mut radius = 5.0;
        let mut best_obj = f64::INFINITY;
        for _round in 0..8 {
            let steps = 10i64;
            let mut best_point = center.clone();
            // Coordinate sweeps over a dense local grid, several passes.
            for _pass in 0..6 {
                for d in 0..=dim {
                    let mut local_best = f64::INFINITY;
                    let mut local_val = best_point[d];
                    for s in -steps..=steps {
                        let mut cand = best_point.clone();
                        cand[d] = best_point[d] + s as f64 * radius / steps as f64;
                        let obj = lr_objective(feats, labels, &cand[..dim], cand[dim], lambda);
                        if obj < local_best {
                            local_best = obj;
                            local_val = cand[d];
                        }
                    }
                    best_point[d] = local_val;
                    best_obj = best_obj.min(local_best);
                }
            }
            center = best_point;
            radius *= 0.3;
        }
        best_obj
    }

    #[test]
    fn ista_matches_grid_search_oracle() {
        // Fixed 4-point 2-D instance.
        let feats = vec![
            vec![0.5, 1.2],
            vec![-0.7, 0.3],
            vec![0.9, -0.4],
            vec![-1.1, -0.8],
        ];
        let labels = vec![1u8, 0, 1, 0];
        let lambda = 0.01;
        let cfg = FitConfig { lambda, n_iters: 30_000, ..FitConfig::default() };
        let (clf, _) = fit_lr_traced(&feats, &labels, &cfg).unwrap();
        let got = lr_objective(&feats, &labels, &clf.w, clf.b, lambda);
        let oracle = grid_search_objective(&feats, &labels, lambda);
        assert!(
            (got - oracle).abs() < 1e-4,
            "ista {got} vs oracle {oracle}"
        );
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let mut rng = rng_derive(2, &[5]);
        for trial in 0..10u64 {
            let mut trng = rng_derive(trial, &[6]);
            let n = 8 + (trial as usize % 5);
            let feats: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| trng.uniform(-2.0, 2.0)).collect())
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            rng.shuffle(&mut labels);
            let cfg = FitConfig { lambda: 0.05, n_iters: 200, ..FitConfig::default() };
            let (_, trace) = fit_lr_traced(&feats, &labels, &cfg).unwrap();
            for pair in trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "objective increased: {pair:?}");
            }
        }
    }

    #[test]
    fn sparsity_is_monotone_in_lambda() {
        for trial in 0..20u64 {
            let mut rng = rng_derive(trial, &[7]);
            let n = 12;
            let feats: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..6).map(|_| rng.uniform(-1.5, 1.5)).collect())
                .collect();
            let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let mut prev_zeros = 0usize;
            for lambda in [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
                let cfg = FitConfig { lambda, ..FitConfig::default() };
                let clf = fit_lr(&feats, &labels, &cfg).unwrap();
                let zeros = clf.w.len() - clf.n_nonzero();
                assert!(
                    zeros >= prev_zeros,
                    "trial {trial}: zeros dropped {prev_zeros} -> {zeros} at lambda {lambda}"
                );
                prev_zeros = zeros;
            }
        }
    }

    #[test]
    fn nn_exact_match_and_tie_break() {
        let support = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let labels = vec![1u8, 0u8];
        // Query equal to a support point takes its label.
        let got = predict_nn(&support, &labels, &[vec![2.0, 0.0]], Dissimilarity::SquaredEuclidean)
            .unwrap();
        assert_eq!(got, vec![0]);
        // Exact tie between index 0 (label 1) and index 1 (label 0): lowest
        // index wins.
        let got = predict_nn(&support, &labels, &[vec![1.0, 0.0]], Dissimilarity::SquaredEuclidean)
            .unwrap();
        assert_eq!(got, vec![1]);
    }

    #[test]
    fn nn_matches_exhaustive_distance_table() {
        let support = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.5],
            vec![2.0, -1.0],
            vec![0.3, 0.9],
        ];
        let labels = vec![0u8, 1, 0, 1, 1];
        let queries = vec![vec![0.2, 0.1], vec![1.5, 0.0], vec![-0.9, 0.4]];
        let got = predict_nn(&support, &labels, &queries, Dissimilarity::SquaredEuclidean).unwrap();
        for (q, &pred) in queries.iter().zip(&got) {
            let mut best = (f64::INFINITY, 0usize);
            for (i, s) in support.iter().enumerate() {
                let d: f64 = q.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(pred, labels[best.1]);
        }
    }

    #[test]
    fn nc_symmetric_is_half_and_single_support_reduces_to_nn() {
        let support = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let labels = vec![1u8, 0u8];
        let (_, probs) =
            predict_nc(&support, &labels, &[vec![0.0, 5.0]], Dissimilarity::SquaredEuclidean)
                .unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-12);

        let mut rng = rng_derive(3, &[9]);
        let queries: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..2).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .collect();
        let (nc_pred, _) =
            predict_nc(&support, &labels, &queries, Dissimilarity::SquaredEuclidean).unwrap();
        let nn_pred =
            predict_nn(&support, &labels, &queries, Dissimilarity::SquaredEuclidean).unwrap();
        assert_eq!(nc_pred, nn_pred);
    }

    #[test]
    fn nc_matches_protonet_predict_bitwise() {
        use crate::embedders::{protonet_predict, BackboneKind, Embedder};
        let model = {
            let mut rng = rng_derive(4, &[9]);
            crate::synthgen::GenerativeModel::sample_uniform(12, 6, 3, 0.1, &mut rng).unwrap()
        };
        let mut rng = rng_derive(5, &[9]);
        let ep_cfg = EpisodeConfig::new(4, 3, Vec::new());
        let ep = crate::episodes::sample_synth_fsal_episode(
            &model,
            crate::episodes::SplitSide::Train,
            &ep_cfg,
            &mut rng,
        )
        .unwrap();

        let mut erng = rng_derive(6, &[9]);
        let embedder = Embedder::init(BackboneKind::Linear, 12, 4, 5, &mut erng);
        let proto = protonet_predict(&embedder, &ep).unwrap();

        let support: Vec<Vec<f64>> = ep
            .support()
            .iter()
            .map(|(i, _)| embedder.forward(i.x.as_ref().unwrap()))
            .collect();
        let slabels: Vec<u8> = ep.support().iter().map(|(_, y)| *y).collect();
        let queries: Vec<Vec<f64>> = ep
            .query()
            .iter()
            .map(|(i, _)| embedder.forward(i.x.as_ref().unwrap()))
            .collect();
        let (_, probs) =
            predict_nc(&support, &slabels, &queries, Dissimilarity::SquaredEuclidean).unwrap();
        assert_eq!(probs, proto);
    }

    #[test]
    fn scale_equivariance_of_decisions() {
        let mut rng = rng_derive(7, &[9]);
        let support: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let labels: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let queries: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let scale = |xs: &[Vec<f64>], c: f64| -> Vec<Vec<f64>> {
            xs.iter()
                .map(|x| x.iter().map(|v| v * c).collect())
                .collect()
        };
        for metric in [Dissimilarity::SquaredEuclidean, Dissimilarity::Cosine] {
            let base_nn = predict_nn(&support, &labels, &queries, metric).unwrap();
            let base_nc = predict_nc(&support, &labels, &queries, metric).unwrap().0;
            for c in [0.1, 3.7] {
                let s = scale(&support, c);
                let q = scale(&queries, c);
                assert_eq!(predict_nn(&s, &labels, &q, metric).unwrap(), base_nn);
                assert_eq!(predict_nc(&s, &labels, &q, metric).unwrap().0, base_nc);
            }
        }
    }

    #[test]
    fn gt_oracle_unary_noiseless_is_perfect() {
        let m = sample_independent_world(400, 6, 0.5, 41).unwrap();
        let mut cfg = EpisodeConfig::new(20, 10, (0..6).collect());
        cfg.p_binary_context = 0.0;
        for idx in 0..20u64 {
            let mut rng = rng_derive(42, &[idx]);
            let ep = sample_fsal_episode(&m, &cfg, &mut rng).unwrap();
            let acc = gt_oracle(&ep, &FitConfig::for_gt()).unwrap();
            assert_eq!(acc, 1.0, "episode {idx} context {}", ep.context.label());
        }
    }

    #[test]
    fn one_shot_conjunction_ambiguity_can_misclassify() {
        // Support: one all-ones positive, one all-zeros negative. Every pair
        // of attributes is a consistent binary-conjunction explanation.
        let item = |z: Vec<u8>| EpisodeItem { index: None, id: None, x: None, z };
        let episode = Episode {
            context: Context::binary(0, 1).unwrap(),
            support_pos: vec![item(vec![1, 1, 1])],
            support_neg: vec![item(vec![0, 0, 0])],
            // (1,1,0) satisfies the true context; (1,0,1) does not but is a
            // positive under the rival context {0,2}.
            query_pos: vec![item(vec![1, 1, 0])],
            query_neg: vec![item(vec![1, 0, 1])],
            n_shot: 1,
            n_query: 1,
        };

        // Exhaustively verify the ambiguity: more than one binary context is
        // consistent with the support labels.
        let mut consistent = 0;
        for a in 0..3usize {
            for b in (a + 1)..3 {
                let ctx = Context::binary(a, b).unwrap();
                let pos_ok = ctx.satisfied_by(&episode.support_pos[0].z);
                let neg_ok = !ctx.satisfied_by(&episode.support_neg[0].z);
                if pos_ok && neg_ok {
                    consistent += 1;
                }
            }
        }
        assert!(consistent > 1, "construction should be ambiguous");

        let acc = gt_oracle(&episode, &FitConfig { lambda: 1e-3, ..FitConfig::default() }).unwrap();
        assert!(acc < 1.0, "ambiguous episode scored {acc}");
    }

    #[test]
    fn chance_floor_on_label_shuffled_episodes() {
        let m = sample_independent_world(300, 8, 0.5, 43).unwrap();
        let cfg = EpisodeConfig::new(5, 5, (0..8).collect());
        let n_eps = 10_000u64;
        let mut sums = [0.0f64; 4]; // nn, nc, lr, gt
        for idx in 0..n_eps {
            let mut rng = rng_derive(44, &[idx]);
            let ep = sample_fsal_episode(&m, &cfg, &mut rng).unwrap();
            let feats = |items: &[EpisodeItem]| -> Vec<Vec<f64>> {
                items
                    .iter()
                    .map(|i| i.z.iter().map(|&b| b as f64).collect())
                    .collect()
            };
            let support: Vec<Vec<f64>> = feats(&ep.support_pos)
                .into_iter()
                .chain(feats(&ep.support_neg))
                .collect();
            let slabels: Vec<u8> = vec![1; 5].into_iter().chain(vec![0; 5]).collect();
            let queries: Vec<Vec<f64>> = feats(&ep.query_pos)
                .into_iter()
                .chain(feats(&ep.query_neg))
                .collect();
            let mut qlabels: Vec<u8> = vec![1; 5].into_iter().chain(vec![0; 5]).collect();
            rng.shuffle(&mut qlabels);

            let acc = |preds: &[u8]| -> f64 {
                preds
                    .iter()
                    .zip(&qlabels)
                    .filter(|(p, y)| p == y)
                    .count() as f64
                    / qlabels.len() as f64
            };
            let nn =
                predict_nn(&support, &slabels, &queries, Dissimilarity::SquaredEuclidean).unwrap();
            sums[0] += acc(&nn);
            let (nc, _) =
                predict_nc(&support, &slabels, &queries, Dissimilarity::SquaredEuclidean).unwrap();
            sums[1] += acc(&nc);
            let clf = fit_lr(&support, &slabels, &FitConfig::default()).unwrap();
            let lr: Vec<u8> = queries.iter().map(|q| clf.predict(q)).collect();
            sums[2] += acc(&lr);
            let gt = fit_lr(&support, &slabels, &FitConfig::for_gt()).unwrap();
            let gtp: Vec<u8> = queries.iter().map(|q| gt.predict(q)).collect();
            sums[3] += acc(&gtp);
        }
        for (name, sum) in ["nn", "nc", "lr", "gt"].iter().zip(&sums) {
            let mean = sum / n_eps as f64;
            assert!(
                (0.48..=0.52).contains(&mean),
                "{name} chance accuracy {mean}"
            );
        }
    }
}
