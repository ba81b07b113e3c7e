//! Episode sampling: balanced support/query sets labeled by a hidden
//! conjunction of one or two attributes, plus one-hot control episodes.

use std::fmt::Write as _;
use std::path::Path;

use crate::attrdata::AttributeMatrix;
use crate::error::{Error, Result};
use crate::numkit::RngStream;
use crate::synthgen::GenerativeModel;

const MAX_CONTEXT_TRIES: usize = 100;

/// Which side of an attribute partition to sample from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitSide {
    Train,
    Test,
}

impl SplitSide {
    pub fn pool(self, model: &GenerativeModel) -> Vec<usize> {
        match self {
            SplitSide::Train => model.train_attrs(),
            SplitSide::Test => model.test_attrs(),
        }
    }
}

/// The hidden set of attributes whose conjunction defines the positive class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Context {
    attr_indices: Vec<usize>,
}

impl Context {
    pub fn unary(a: usize) -> Self {
        Self { attr_indices: vec![a] }
    }

    pub fn binary(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidArgument(
                "binary context needs two distinct attributes".into(),
            ));
        }
        let mut attr_indices = vec![a, b];
        attr_indices.sort_unstable();
        Ok(Self { attr_indices })
    }

    /// Placeholder for episodes read back without their answer key.
    pub fn redacted() -> Self {
        Self { attr_indices: Vec::new() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.attr_indices
    }

    pub fn is_redacted(&self) -> bool {
        self.attr_indices.is_empty()
    }

    /// Stable text form, e.g. `3` or `3&7`.
    pub fn label(&self) -> String {
        if self.attr_indices.is_empty() {
            return "-".into();
        }
        self.attr_indices
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join("&")
    }

    pub fn parse_label(text: &str) -> Result<Self> {
        if text == "-" {
            return Ok(Self::redacted());
        }
        let idx: Vec<usize> = text
            .split('&')
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("bad context label {text:?}")))?;
        match idx.as_slice() {
            [a] => Ok(Self::unary(*a)),
            [a, b] => Self::binary(*a, *b),
            _ => Err(Error::Format(format!(
                "context must have 1 or 2 attributes: {text:?}"
            ))),
        }
    }

    pub fn satisfied_by(&self, z: &[u8]) -> bool {
        self.attr_indices.iter().all(|&a| z[a] == 1)
    }
}

/// One member of an episode. `z` is always present; `x` only when the source
/// provides input vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeItem {
    pub index: Option<usize>,
    pub id: Option<String>,
    pub x: Option<Vec<f64>>,
    pub z: Vec<u8>,
}

/// Balanced support/query sets with a hidden context.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub context: Context,
    pub support_pos: Vec<EpisodeItem>,
    pub support_neg: Vec<EpisodeItem>,
    pub query_pos: Vec<EpisodeItem>,
    pub query_neg: Vec<EpisodeItem>,
    pub n_shot: usize,
    pub n_query: usize,
}

impl Episode {
    /// Support items with their binary labels, positives first.
    pub fn support(&self) -> Vec<(&EpisodeItem, u8)> {
        self.support_pos
            .iter()
            .map(|i| (i, 1u8))
            .chain(self.support_neg.iter().map(|i| (i, 0u8)))
            .collect()
    }

    pub fn query(&self) -> Vec<(&EpisodeItem, u8)> {
        self.query_pos
            .iter()
            .map(|i| (i, 1u8))
            .chain(self.query_neg.iter().map(|i| (i, 0u8)))
            .collect()
    }

    pub fn has_inputs(&self) -> bool {
        self.support_pos
            .iter()
            .chain(&self.support_neg)
            .chain(&self.query_pos)
            .chain(&self.query_neg)
            .all(|i| i.x.is_some())
    }

    /// Fill `x` for matrix-sourced items from a per-item input table.
    pub fn attach_inputs(&mut self, xs: &[Vec<f64>]) {
        for item in self
            .support_pos
            .iter_mut()
            .chain(&mut self.support_neg)
            .chain(&mut self.query_pos)
            .chain(&mut self.query_neg)
        {
            if let Some(idx) = item.index {
                item.x = Some(xs[idx].clone());
            }
        }
    }
}

/// Sampler settings.
#[derive(Clone, Debug)]
pub struct EpisodeConfig {
    pub n_shot: usize,
    pub n_query: usize,
    /// Probability of drawing a two-attribute context.
    pub p_binary_context: f64,
    /// Attribute indices episodes may draw their context from.
    pub attr_pool: Vec<usize>,
    /// Feasibility floor; defaults to `n_shot + n_query` when `None`.
    pub min_positive_pool: Option<usize>,
}

impl EpisodeConfig {
    pub fn new(n_shot: usize, n_query: usize, attr_pool: Vec<usize>) -> Self {
        Self {
            n_shot,
            n_query,
            p_binary_context: 0.5,
            attr_pool,
            min_positive_pool: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_shot == 0 || self.n_query == 0 {
            return Err(Error::InvalidArgument(
                "n_shot and n_query must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_binary_context) {
            return Err(Error::InvalidArgument(
                "p_binary_context must lie in [0,1]".into(),
            ));
        }
        if self.attr_pool.is_empty() {
            return Err(Error::InvalidArgument("attribute pool is empty".into()));
        }
        Ok(())
    }

    fn min_pool(&self) -> usize {
        self.min_positive_pool
            .map_or(self.n_shot + self.n_query, |m| {
                m.max(self.n_shot + self.n_query)
            })
    }
}

fn context_counts(matrix: &AttributeMatrix, context: &Context) -> (usize, usize) {
    let mut pos = 0;
    for i in 0..matrix.n_items() {
        if context.satisfied_by(matrix.item_row(i)) {
            pos += 1;
        }
    }
    (pos, matrix.n_items() - pos)
}

/// All unary and pairwise contexts from the pool with enough positives and
/// negatives for one episode.
pub fn enumerate_contexts(
    matrix: &AttributeMatrix,
    config: &EpisodeConfig,
) -> Result<Vec<Context>> {
    config.validate()?;
    let need = config.min_pool();
    let pool = &config.attr_pool;
    for &a in pool {
        if a >= matrix.n_attrs() {
            return Err(Error::InvalidArgument(format!(
                "pool attribute {a} out of range"
            )));
        }
    }
    let mut out = Vec::new();
    for (i, &a) in pool.iter().enumerate() {
        let ctx = Context::unary(a);
        let (pos, neg) = context_counts(matrix, &ctx);
        if pos >= need && neg >= need {
            out.push(ctx);
        }
        for &b in &pool[i + 1..] {
            let ctx = Context::binary(a, b)?;
            let (pos, neg) = context_counts(matrix, &ctx);
            if pos >= need && neg >= need {
                out.push(ctx);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Infeasible(format!(
            "no context over {} pool attributes has {need} positives and negatives",
            pool.len()
        )));
    }
    Ok(out)
}

fn matrix_item(matrix: &AttributeMatrix, idx: usize) -> EpisodeItem {
    EpisodeItem {
        index: Some(idx),
        id: Some(matrix.item_ids()[idx].clone()),
        x: None,
        z: matrix.item_row(idx).to_vec(),
    }
}

/// Sample one episode from an attribute matrix.
///
/// A context is drawn (binary with probability `p_binary_context`), resampled
/// while infeasible; positives are drawn without replacement from the items
/// satisfying the full conjunction and negatives from the complement, so
/// support and query are disjoint by construction.
pub fn sample_fsal_episode(
    matrix: &AttributeMatrix,
    config: &EpisodeConfig,
    rng: &mut RngStream,
) -> Result<Episode> {
    config.validate()?;
    let need = config.n_shot + config.n_query;
    let pool = &config.attr_pool;
    for _ in 0..MAX_CONTEXT_TRIES {
        let want_binary = pool.len() >= 2 && rng.bernoulli(config.p_binary_context);
        let context = if want_binary {
            let picks = rng.sample_distinct(pool.len(), 2);
            Context::binary(pool[picks[0]], pool[picks[1]])?
        } else {
            Context::unary(pool[rng.next_below(pool.len() as u64) as usize])
        };
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for i in 0..matrix.n_items() {
            if context.satisfied_by(matrix.item_row(i)) {
                positives.push(i);
            } else {
                negatives.push(i);
            }
        }
        if positives.len() < need || negatives.len() < need {
            continue;
        }
        let pos_pick = rng.sample_distinct(positives.len(), need);
        let neg_pick = rng.sample_distinct(negatives.len(), need);
        let pos_items: Vec<EpisodeItem> = pos_pick
            .iter()
            .map(|&k| matrix_item(matrix, positives[k]))
            .collect();
        let neg_items: Vec<EpisodeItem> = neg_pick
            .iter()
            .map(|&k| matrix_item(matrix, negatives[k]))
            .collect();
        let (sp, qp) = pos_items.split_at(config.n_shot);
        let (sn, qn) = neg_items.split_at(config.n_shot);
        return Ok(Episode {
            context,
            support_pos: sp.to_vec(),
            support_neg: sn.to_vec(),
            query_pos: qp.to_vec(),
            query_neg: qn.to_vec(),
            n_shot: config.n_shot,
            n_query: config.n_query,
        });
    }
    Err(Error::Sampling {
        tries: MAX_CONTEXT_TRIES,
        msg: "no feasible context found".into(),
    })
}

/// Sample a fresh-data episode from the generative model: attribute strings
/// are drawn conditioned on the context rather than taken from a fixed item
/// bank.
pub fn sample_synth_fsal_episode(
    model: &GenerativeModel,
    side: SplitSide,
    config: &EpisodeConfig,
    rng: &mut RngStream,
) -> Result<Episode> {
    if config.n_shot == 0 || config.n_query == 0 {
        return Err(Error::InvalidArgument(
            "n_shot and n_query must be >= 1".into(),
        ));
    }
    let pool = side.pool(model);
    let want_binary = pool.len() >= 2 && rng.bernoulli(config.p_binary_context);
    let context = if want_binary {
        let picks = rng.sample_distinct(pool.len(), 2);
        Context::binary(pool[picks[0]], pool[picks[1]])?
    } else {
        Context::unary(pool[rng.next_below(pool.len() as u64) as usize])
    };
    let d = model.n_attrs();
    let need = config.n_shot + config.n_query;
    let ctx = context.indices().to_vec();

    let draw = |positive: bool, rng: &mut RngStream| -> EpisodeItem {
        let mut z: Vec<u8> = (0..d).map(|_| rng.bernoulli(0.5) as u8).collect();
        if positive {
            for &a in &ctx {
                z[a] = 1;
            }
        } else if ctx.len() == 1 {
            z[ctx[0]] = 0;
        } else {
            // Conditional law of two Bernoulli(0.5) bits given "not both 1":
            // uniform over the three remaining patterns.
            let pattern = [(0u8, 0u8), (0, 1), (1, 0)][rng.next_below(3) as usize];
            z[ctx[0]] = pattern.0;
            z[ctx[1]] = pattern.1;
        }
        let x = model.render(&z, rng);
        EpisodeItem {
            index: None,
            id: None,
            x: Some(x),
            z,
        }
    };

    let pos: Vec<EpisodeItem> = (0..need).map(|_| draw(true, rng)).collect();
    let neg: Vec<EpisodeItem> = (0..need).map(|_| draw(false, rng)).collect();
    let (sp, qp) = pos.split_at(config.n_shot);
    let (sn, qn) = neg.split_at(config.n_shot);
    Ok(Episode {
        context,
        support_pos: sp.to_vec(),
        support_neg: sn.to_vec(),
        query_pos: qp.to_vec(),
        query_neg: qn.to_vec(),
        n_shot: config.n_shot,
        n_query: config.n_query,
    })
}

/// One-hot control episode: the learner must separate two single-attribute
/// classes drawn from the given split side.
pub fn sample_fsl_episode(
    n_classes: usize,
    model: &GenerativeModel,
    side: SplitSide,
    config: &EpisodeConfig,
    rng: &mut RngStream,
) -> Result<Episode> {
    if n_classes != 2 {
        return Err(Error::Unsupported(format!(
            "one-hot episodes are binary only, got {n_classes} classes"
        )));
    }
    if config.n_shot == 0 || config.n_query == 0 {
        return Err(Error::InvalidArgument(
            "n_shot and n_query must be >= 1".into(),
        ));
    }
    let pool = side.pool(model);
    if pool.len() < 2 {
        return Err(Error::Infeasible(
            "need two attributes for a one-hot episode".into(),
        ));
    }
    let picks = rng.sample_distinct(pool.len(), 2);
    let (class_pos, class_neg) = (pool[picks[0]], pool[picks[1]]);
    let d = model.n_attrs();
    let need = config.n_shot + config.n_query;

    let draw = |attr: usize, rng: &mut RngStream| -> EpisodeItem {
        let mut z = vec![0u8; d];
        z[attr] = 1;
        let x = model.render(&z, rng);
        EpisodeItem {
            index: None,
            id: None,
            x: Some(x),
            z,
        }
    };
    let pos: Vec<EpisodeItem> = (0..need).map(|_| draw(class_pos, rng)).collect();
    let neg: Vec<EpisodeItem> = (0..need).map(|_| draw(class_neg, rng)).collect();
    let (sp, qp) = pos.split_at(config.n_shot);
    let (sn, qn) = neg.split_at(config.n_shot);
    Ok(Episode {
        context: Context::unary(class_pos),
        support_pos: sp.to_vec(),
        support_neg: sn.to_vec(),
        query_pos: qp.to_vec(),
        query_neg: qn.to_vec(),
        n_shot: config.n_shot,
        n_query: config.n_query,
    })
}

// --- episode archive ---------------------------------------------------------

const EPISODE_MAGIC: &str = "FSAL-EPISODES v1";
const KEY_MAGIC: &str = "FSAL-KEY v1";

fn render_item(out: &mut String, item: &EpisodeItem) {
    let id = item.id.as_deref().unwrap_or("-");
    let z: String = if item.z.is_empty() {
        "-".into()
    } else {
        item.z
            .iter()
            .map(|&b| if b == 1 { '1' } else { '0' })
            .collect()
    };
    write!(out, "ITEM {id} {z}").unwrap();
    if let Some(x) = &item.x {
        for v in x {
            write!(out, " {v}").unwrap();
        }
    }
    out.push('\n');
}

/// Serialize episodes without their contexts (the classifier-facing view).
pub fn render_episodes(episodes: &[Episode]) -> String {
    let mut out = String::new();
    writeln!(out, "{EPISODE_MAGIC} {}", episodes.len()).unwrap();
    for (idx, ep) in episodes.iter().enumerate() {
        writeln!(out, "EPISODE {idx} {} {}", ep.n_shot, ep.n_query).unwrap();
        for (tag, items) in [
            ("S+", &ep.support_pos),
            ("S-", &ep.support_neg),
            ("Q+", &ep.query_pos),
            ("Q-", &ep.query_neg),
        ] {
            writeln!(out, "{tag} {}", items.len()).unwrap();
            for item in items {
                render_item(&mut out, item);
            }
        }
    }
    out
}

pub fn write_episodes(episodes: &[Episode], path: &Path) -> Result<()> {
    std::fs::write(path, render_episodes(episodes))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Serialize the answer key: one context per episode id.
pub fn render_answer_key(episodes: &[Episode]) -> String {
    let mut out = String::new();
    writeln!(out, "{KEY_MAGIC} {}", episodes.len()).unwrap();
    for (idx, ep) in episodes.iter().enumerate() {
        writeln!(out, "{idx} {}", ep.context.label()).unwrap();
    }
    out
}

pub fn write_answer_key(episodes: &[Episode], path: &Path) -> Result<()> {
    std::fs::write(path, render_answer_key(episodes))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_episodes(archive: &Path, key: Option<&Path>) -> Result<Vec<Episode>> {
    let text =
        std::fs::read_to_string(archive).map_err(|e| Error::io(archive.display().to_string(), e))?;
    let key_text = match key {
        Some(p) => {
            Some(std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?)
        }
        None => None,
    };
    parse_episodes(&text, key_text.as_deref())
}

pub fn parse_episodes(text: &str, key_text: Option<&str>) -> Result<Vec<Episode>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty episode archive".into()))?;
    let count: usize = header
        .strip_prefix(EPISODE_MAGIC)
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad archive header {header:?}")))?;

    let contexts: Option<Vec<Context>> = match key_text {
        None => None,
        Some(kt) => {
            let mut klines = kt.lines();
            let kheader = klines
                .next()
                .ok_or_else(|| Error::Format("empty answer key".into()))?;
            let kcount: usize = kheader
                .strip_prefix(KEY_MAGIC)
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("bad key header {kheader:?}")))?;
            if kcount != count {
                return Err(Error::Format(format!(
                    "key lists {kcount} episodes, archive has {count}"
                )));
            }
            let mut ctxs = Vec::with_capacity(kcount);
            for line in klines {
                let mut parts = line.split_whitespace();
                let _idx = parts.next();
                let label = parts
                    .next()
                    .ok_or_else(|| Error::Format("missing context label in key".into()))?;
                ctxs.push(Context::parse_label(label)?);
            }
            if ctxs.len() != kcount {
                return Err(Error::Format("answer key row count mismatch".into()));
            }
            Some(ctxs)
        }
    };

    let mut episodes = Vec::with_capacity(count);
    for ep_idx in 0..count {
        let head = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing EPISODE {ep_idx}")))?;
        let toks: Vec<&str> = head.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "EPISODE" {
            return Err(Error::Format(format!("bad episode header {head:?}")));
        }
        let n_shot: usize = toks[2]
            .parse()
            .map_err(|_| Error::Format("bad n_shot".into()))?;
        let n_query: usize = toks[3]
            .parse()
            .map_err(|_| Error::Format("bad n_query".into()))?;
        let mut blocks: Vec<Vec<EpisodeItem>> = Vec::with_capacity(4);
        for tag in ["S+", "S-", "Q+", "Q-"] {
            let bh = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing {tag} block")))?;
            let bt: Vec<&str> = bh.split_whitespace().collect();
            if bt.len() != 2 || bt[0] != tag {
                return Err(Error::Format(format!(
                    "bad block header {bh:?}, expected {tag}"
                )));
            }
            let n: usize = bt[1]
                .parse()
                .map_err(|_| Error::Format("bad block count".into()))?;
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                let il = lines
                    .next()
                    .ok_or_else(|| Error::Format("missing ITEM line".into()))?;
                let mut f = il.split_whitespace();
                if f.next() != Some("ITEM") {
                    return Err(Error::Format(format!("bad item line {il:?}")));
                }
                let id_tok = f
                    .next()
                    .ok_or_else(|| Error::Format("missing item id".into()))?;
                let z_tok = f
                    .next()
                    .ok_or_else(|| Error::Format("missing item z".into()))?;
                let id = (id_tok != "-").then(|| id_tok.to_owned());
                let z: Vec<u8> = if z_tok == "-" {
                    Vec::new()
                } else {
                    z_tok
                        .chars()
                        .map(|c| match c {
                            '0' => Ok(0u8),
                            '1' => Ok(1u8),
                            other => Err(Error::Format(format!("bad z bit {other:?}"))),
                        })
                        .collect::<Result<_>>()?
                };
                let xs: Vec<f64> = f
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Format("bad x value".into()))?;
                items.push(EpisodeItem {
                    index: None,
                    id,
                    x: (!xs.is_empty()).then_some(xs),
                    z,
                });
            }
            blocks.push(items);
        }
        let context = contexts
            .as_ref()
            .map_or_else(Context::redacted, |c| c[ep_idx].clone());
        let mut it = blocks.into_iter();
        episodes.push(Episode {
            context,
            support_pos: it.next().unwrap(),
            support_neg: it.next().unwrap(),
            query_pos: it.next().unwrap(),
            query_neg: it.next().unwrap(),
            n_shot,
            n_query,
        });
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::rng_derive;
    use crate::synthgen::sample_independent_world;
    use std::collections::HashSet;

    fn six_item_matrix() -> AttributeMatrix {
        AttributeMatrix::new(
            (0..6).map(|i| format!("i{i}")).collect(),
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                1, 1, 0, //
                1, 0, 1, //
                0, 1, 1, //
                1, 1, 1, //
                0, 0, 0, //
                1, 0, 0,
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_attribute_single_context() {
        let m = AttributeMatrix::new(
            (0..4).map(|i| format!("i{i}")).collect(),
            vec!["only".into()],
            vec![1, 1, 0, 0],
        )
        .unwrap();
        let cfg = EpisodeConfig::new(1, 1, vec![0]);
        let ctxs = enumerate_contexts(&m, &cfg).unwrap();
        assert_eq!(ctxs, vec![Context::unary(0)]);
    }

    #[test]
    fn small_pool_excluded() {
        // Attribute with 3 positives cannot host a 5-shot episode.
        let mut labels = vec![0u8; 20];
        labels[0] = 1;
        labels[1] = 1;
        labels[2] = 1;
        let m = AttributeMatrix::new(
            (0..20).map(|i| format!("i{i}")).collect(),
            vec!["rare".into()],
            labels,
        )
        .unwrap();
        let cfg = EpisodeConfig::new(5, 1, vec![0]);
        assert!(matches!(
            enumerate_contexts(&m, &cfg),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn enumeration_matches_brute_force_on_six_items() {
        let m = six_item_matrix();
        let cfg = EpisodeConfig::new(1, 1, vec![0, 1, 2]);
        let got = enumerate_contexts(&m, &cfg).unwrap();

        // Brute-force over the label table.
        let all_ctx: Vec<Context> = vec![
            Context::unary(0),
            Context::unary(1),
            Context::unary(2),
            Context::binary(0, 1).unwrap(),
            Context::binary(0, 2).unwrap(),
            Context::binary(1, 2).unwrap(),
        ];
        let mut want = Vec::new();
        for ctx in all_ctx {
            let pos = (0..6).filter(|&i| ctx.satisfied_by(m.item_row(i))).count();
            if pos >= 2 && (6 - pos) >= 2 {
                want.push(ctx);
            }
        }
        let mut got_sorted = got.clone();
        got_sorted.sort_by_key(|c| c.indices().to_vec());
        let mut want_sorted = want;
        want_sorted.sort_by_key(|c| c.indices().to_vec());
        assert_eq!(got_sorted, want_sorted);
        assert_eq!(got.iter().filter(|c| c.indices().len() == 1).count(), 3);
        assert!(got.iter().any(|c| c.indices().len() == 2));
    }

    #[test]
    fn definition_check_over_many_episodes() {
        let m = sample_independent_world(200, 8, 0.5, 31).unwrap();
        let cfg = EpisodeConfig::new(5, 5, (0..8).collect());
        for idx in 0..10_000u64 {
            let mut rng = rng_derive(77, &[idx]);
            let ep = sample_fsal_episode(&m, &cfg, &mut rng).unwrap();
            for item in ep.support_pos.iter().chain(&ep.query_pos) {
                assert!(ep.context.satisfied_by(&item.z), "positive violates context");
            }
            for item in ep.support_neg.iter().chain(&ep.query_neg) {
                assert!(!ep.context.satisfied_by(&item.z), "negative satisfies context");
            }
        }
    }

    #[test]
    fn twenty_shot_sizes_and_disjointness() {
        let m = sample_independent_world(300, 5, 0.5, 32).unwrap();
        let cfg = EpisodeConfig::new(20, 7, (0..5).collect());
        let mut rng = rng_derive(5, &[1]);
        let ep = sample_fsal_episode(&m, &cfg, &mut rng).unwrap();
        assert_eq!(ep.support_pos.len() + ep.support_neg.len(), 40);
        assert_eq!(ep.query_pos.len() + ep.query_neg.len(), 14);
        let support: HashSet<usize> = ep
            .support_pos
            .iter()
            .chain(&ep.support_neg)
            .map(|i| i.index.unwrap())
            .collect();
        let query: HashSet<usize> = ep
            .query_pos
            .iter()
            .chain(&ep.query_neg)
            .map(|i| i.index.unwrap())
            .collect();
        assert!(support.is_disjoint(&query));
        assert_eq!(support.len(), 40);
        assert_eq!(query.len(), 14);
    }

    #[test]
    fn sampled_episode_is_in_exhaustive_enumeration() {
        let m = six_item_matrix();
        let cfg = EpisodeConfig::new(1, 1, vec![0, 1, 2]);

        // Enumerate every valid (context, s+, q+, s-, q-) tuple.
        let mut valid: HashSet<(Vec<usize>, usize, usize, usize, usize)> = HashSet::new();
        for ctx in enumerate_contexts(&m, &cfg).unwrap() {
            let pos: Vec<usize> = (0..6).filter(|&i| ctx.satisfied_by(m.item_row(i))).collect();
            let neg: Vec<usize> = (0..6)
                .filter(|&i| !ctx.satisfied_by(m.item_row(i)))
                .collect();
            for &sp in &pos {
                for &qp in &pos {
                    if sp == qp {
                        continue;
                    }
                    for &sn in &neg {
                        for &qn in &neg {
                            if sn == qn {
                                continue;
                            }
                            valid.insert((ctx.indices().to_vec(), sp, qp, sn, qn));
                        }
                    }
                }
            }
        }

        for idx in 0..200u64 {
            let mut rng = rng_derive(41, &[idx]);
            let ep = sample_fsal_episode(&m, &cfg, &mut rng).unwrap();
            let key = (
                ep.context.indices().to_vec(),
                ep.support_pos[0].index.unwrap(),
                ep.query_pos[0].index.unwrap(),
                ep.support_neg[0].index.unwrap(),
                ep.query_neg[0].index.unwrap(),
            );
            assert!(valid.contains(&key), "sampled episode outside enumeration: {key:?}");
        }
    }

    #[test]
    fn determinism_per_seed_and_index() {
        let m = sample_independent_world(100, 6, 0.5, 33).unwrap();
        let cfg = EpisodeConfig::new(3, 4, (0..6).collect());
        let sample = |seed: u64, idx: u64| {
            let mut rng = rng_derive(seed, &[idx]);
            sample_fsal_episode(&m, &cfg, &mut rng).unwrap()
        };
        assert_eq!(sample(9, 4), sample(9, 4));
        assert_ne!(sample(9, 4), sample(9, 5));
    }

    fn toy_model() -> GenerativeModel {
        let mut rng = rng_derive(1, &[100]);
        GenerativeModel::sample_uniform(30, 10, 5, 0.0, &mut rng).unwrap()
    }

    #[test]
    fn fsl_rejects_nonbinary() {
        let model = toy_model();
        let cfg = EpisodeConfig::new(2, 2, vec![]);
        let mut rng = rng_derive(2, &[0]);
        assert!(matches!(
            sample_fsl_episode(3, &model, SplitSide::Train, &cfg, &mut rng),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn fsl_noiseless_positives_share_x() {
        let model = toy_model();
        let cfg = EpisodeConfig::new(3, 2, vec![]);
        let mut rng = rng_derive(2, &[1]);
        let ep = sample_fsl_episode(2, &model, SplitSide::Train, &cfg, &mut rng).unwrap();
        let first = ep.support_pos[0].x.as_ref().unwrap();
        for item in ep.support_pos.iter().chain(&ep.query_pos) {
            assert_eq!(item.x.as_ref().unwrap(), first);
        }
        // x equals one column of A.
        let class = ep.context.indices()[0];
        assert_eq!(first, &model.matrix().col(class));
    }

    #[test]
    fn fsl_split_side_discipline() {
        let model = toy_model();
        let cfg = EpisodeConfig::new(2, 2, vec![]);
        for idx in 0..200u64 {
            let mut rng = rng_derive(3, &[idx]);
            let ep = sample_fsl_episode(2, &model, SplitSide::Test, &cfg, &mut rng).unwrap();
            for item in ep.support_pos.iter().chain(&ep.support_neg) {
                let hot: Vec<usize> = item
                    .z
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b == 1)
                    .map(|(i, _)| i)
                    .collect();
                assert_eq!(hot.len(), 1);
                assert!(hot[0] >= 5 && hot[0] < 10, "class {} outside test side", hot[0]);
            }
        }
    }

    #[test]
    fn synth_fsal_episode_respects_context() {
        let model = toy_model();
        let mut cfg = EpisodeConfig::new(4, 4, vec![]);
        cfg.p_binary_context = 1.0;
        for idx in 0..500u64 {
            let mut rng = rng_derive(4, &[idx]);
            let ep = sample_synth_fsal_episode(&model, SplitSide::Train, &cfg, &mut rng).unwrap();
            assert_eq!(ep.context.indices().len(), 2);
            assert!(ep.context.indices().iter().all(|&a| a < 5));
            for item in ep.support_pos.iter().chain(&ep.query_pos) {
                assert!(ep.context.satisfied_by(&item.z));
            }
            for item in ep.support_neg.iter().chain(&ep.query_neg) {
                assert!(!ep.context.satisfied_by(&item.z));
            }
        }
    }

    #[test]
    fn archive_roundtrip_and_hidden_context() {
        let m = six_item_matrix();
        let cfg = EpisodeConfig::new(1, 1, vec![0, 1, 2]);
        let eps: Vec<Episode> = (0..5u64)
            .map(|idx| {
                let mut rng = rng_derive(51, &[idx]);
                sample_fsal_episode(&m, &cfg, &mut rng).unwrap()
            })
            .collect();
        let archive = render_episodes(&eps);
        let key = render_answer_key(&eps);

        // The archive itself must not leak context indices.
        assert!(!archive.contains('&'));

        let back = parse_episodes(&archive, Some(&key)).unwrap();
        assert_eq!(back.len(), eps.len());
        for (a, b) in back.iter().zip(&eps) {
            assert_eq!(a.context, b.context);
            assert_eq!(a.n_shot, b.n_shot);
            assert_eq!(
                a.support_pos.iter().map(|i| &i.z).collect::<Vec<_>>(),
                b.support_pos.iter().map(|i| &i.z).collect::<Vec<_>>()
            );
            assert_eq!(
                a.query_neg.iter().map(|i| i.id.clone()).collect::<Vec<_>>(),
                b.query_neg.iter().map(|i| i.id.clone()).collect::<Vec<_>>()
            );
        }

        let redacted = parse_episodes(&archive, None).unwrap();
        assert!(redacted.iter().all(|e| e.context.is_redacted()));
    }

    #[test]
    fn archive_roundtrips_inline_x() {
        let model = toy_model();
        let cfg = EpisodeConfig::new(2, 2, vec![]);
        let mut rng = rng_derive(6, &[0]);
        let ep = sample_synth_fsal_episode(&model, SplitSide::Test, &cfg, &mut rng).unwrap();
        let text = render_episodes(std::slice::from_ref(&ep));
        let back = parse_episodes(&text, None).unwrap();
        assert_eq!(back[0].support_pos[0].x, ep.support_pos[0].x);
        assert_eq!(back[0].query_neg[1].x, ep.query_neg[1].x);
        assert_eq!(back[0].support_neg[0].z, ep.support_neg[0].z);
    }
}
