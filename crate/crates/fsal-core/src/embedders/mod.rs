//! Stage-I representation learning at toy scale: linear/MLP backbones trained
//! episodically (prototypical), contrastively, or on absolute attribute
//! labels, with optional projection heads that are discarded at test time.

pub mod checkpoint;
pub mod losses;
pub mod net;

pub use losses::{
    attribute_bce_grads, attribute_bce_loss, infonce_loss, infonce_loss_grads, proto_loss,
    proto_loss_grads, proto_probs, Dissimilarity,
};
pub use net::{DenseLayer, Net, NetGrads};

use crate::episodes::{
    sample_fsal_episode, sample_fsl_episode, sample_synth_fsal_episode, Episode, EpisodeConfig,
    SplitSide,
};
use crate::error::{Error, Result};
use crate::numkit::{adam_step, rng_derive, AdamHyper, AdamState, Matrix, RngStream};
use crate::synthgen::{Example, GenerativeModel, ItemBank};

const LBL_INIT: u64 = 0x01;
const LBL_PROTO: u64 = 0x10;
const LBL_CONTRAST: u64 = 0x11;
const LBL_SA: u64 = 0x12;
const LBL_UFTE: u64 = 0x13;
const LBL_UFTA: u64 = 0x14;
const LBL_VIEW: u64 = 0x15;

/// Backbone family. The linear map reproduces the analytic toy setting; the
/// perceptron is the default elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneKind {
    Linear,
    Mlp,
}

/// Parameterized map from inputs to representations.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedder {
    pub net: Net,
    pub input_dim: usize,
    pub embed_dim: usize,
}

impl Embedder {
    pub fn init(
        kind: BackboneKind,
        input_dim: usize,
        hidden: usize,
        embed_dim: usize,
        rng: &mut RngStream,
    ) -> Self {
        let net = match kind {
            BackboneKind::Linear => Net::linear(embed_dim, input_dim, rng),
            BackboneKind::Mlp => Net::mlp(&[input_dim, hidden, embed_dim], rng),
        };
        Self { net, input_dim, embed_dim }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn is_linear(&self) -> bool {
        self.net.is_pure_linear()
    }

    /// The weight matrix of a purely linear embedder.
    pub fn linear_weight(&self) -> Option<&Matrix> {
        self.is_linear().then(|| &self.net.layers[0].weight)
    }
}

/// Where a projection head sits in the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadRole {
    Contrastive,
    Finetune,
}

impl HeadRole {
    pub fn tag(self) -> &'static str {
        match self {
            HeadRole::Contrastive => "contrastive",
            HeadRole::Finetune => "finetune",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "contrastive" => Ok(HeadRole::Contrastive),
            "finetune" => Ok(HeadRole::Finetune),
            other => Err(Error::Format(format!("unknown head role {other:?}"))),
        }
    }
}

/// Small trainable map appended during pretraining or finetuning and
/// discarded at test time. Depth 0 is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    pub role: HeadRole,
    pub net: Net,
    pub output_dim: usize,
}

impl ProjectionHead {
    pub fn identity(role: HeadRole, dim: usize) -> Self {
        Self { role, net: Net::identity(), output_dim: dim }
    }

    pub fn init(
        role: HeadRole,
        input_dim: usize,
        depth: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let net = match depth {
            0 => return Ok(Self::identity(role, input_dim)),
            1 => Net {
                layers: vec![DenseLayer::init(out_dim, input_dim, true, false, rng)],
            },
            2 => Net::mlp(&[input_dim, hidden, out_dim], rng),
            d => {
                return Err(Error::InvalidArgument(format!(
                    "projection head depth must be 0..=2, got {d}"
                )))
            }
        };
        Ok(Self { role, net, output_dim: out_dim })
    }

    pub fn depth(&self) -> usize {
        self.net.layers.len()
    }

    pub fn forward(&self, h: &[f64]) -> Vec<f64> {
        self.net.forward(h)
    }
}

/// Linear multi-attribute classifier head (sigmoid applied in the loss).
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeHead {
    pub net: Net,
    /// Attribute indices the head predicts, in row order.
    pub attrs: Vec<usize>,
}

impl AttributeHead {
    pub fn init(n_attrs: usize, input_dim: usize, attrs: Vec<usize>, rng: &mut RngStream) -> Self {
        Self {
            net: Net {
                layers: vec![DenseLayer::init(n_attrs, input_dim, true, false, rng)],
            },
            attrs,
        }
    }

    pub fn weight(&self) -> &Matrix {
        &self.net.layers[0].weight
    }

    pub fn bias(&self) -> &[f64] {
        self.net.layers[0].bias.as_deref().expect("attribute head bias")
    }

    pub fn logits(&self, g: &[f64]) -> Vec<f64> {
        self.net.forward(g)
    }
}

/// Training settings shared by all Stage-I trainers.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub n_steps: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub adam: AdamHyper,
    pub seed: u64,
    pub head_depth: usize,
    pub discard_head_at_test: bool,
    /// Finetuning shrinks the backbone step relative to the head; 0 freezes
    /// the backbone.
    pub backbone_lr_scale: f64,
    pub backbone: BackboneKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden_dim: usize,
    pub head_out_dim: usize,
    pub n_shot: usize,
    pub n_query: usize,
    pub p_binary_context: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_steps: 1000,
            batch_size: 32,
            temperature: 0.2,
            adam: AdamHyper::default(),
            seed: 0,
            head_depth: 2,
            discard_head_at_test: true,
            backbone_lr_scale: 0.1,
            backbone: BackboneKind::Mlp,
            embed_dim: 16,
            hidden_dim: 64,
            head_hidden_dim: 64,
            head_out_dim: 32,
            n_shot: 20,
            n_query: 20,
            p_binary_context: 0.5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if !(self.backbone_lr_scale >= 0.0) {
            return Err(Error::InvalidArgument("backbone_lr_scale must be >= 0".into()));
        }
        Ok(())
    }

    fn scaled_adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.adam.learning_rate * self.backbone_lr_scale.max(f64::MIN_POSITIVE),
            ..self.adam
        }
    }
}

/// Per-step loss trace.
#[derive(Clone, Debug, Default)]
pub struct TrainStats {
    pub losses: Vec<f64>,
}

impl TrainStats {
    /// Mean loss over the first `w` steps.
    pub fn first_window_mean(&self, w: usize) -> f64 {
        let w = w.min(self.losses.len()).max(1);
        crate::numkit::mean(&self.losses[..w.min(self.losses.len())])
    }

    /// Mean loss over the last `w` steps.
    pub fn last_window_mean(&self, w: usize) -> f64 {
        let n = self.losses.len();
        let w = w.min(n).max(1);
        crate::numkit::mean(&self.losses[n.saturating_sub(w)..])
    }
}

/// Episode labeling mode for prototypical training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeMode {
    /// Conjunction-labeled attribute episodes.
    FsalConjunction,
    /// One-hot class episodes (control setting).
    FslOneHot,
}

/// Episode supply for episodic finetuning.
pub enum FsalSource<'a> {
    /// Fresh examples from the generative model each episode.
    Model { model: &'a GenerativeModel, side: SplitSide },
    /// Draws from a fixed item bank restricted to an attribute pool.
    Bank { bank: &'a ItemBank, pool: Vec<usize> },
}

impl FsalSource<'_> {
    pub fn input_dim(&self) -> usize {
        match self {
            FsalSource::Model { model, .. } => model.input_dim(),
            FsalSource::Bank { bank, .. } => bank.model.input_dim(),
        }
    }

    pub fn sample(
        &self,
        n_shot: usize,
        n_query: usize,
        p_binary: f64,
        rng: &mut RngStream,
    ) -> Result<Episode> {
        match self {
            FsalSource::Model { model, side } => {
                let mut cfg = EpisodeConfig::new(n_shot, n_query, Vec::new());
                cfg.p_binary_context = p_binary;
                sample_synth_fsal_episode(model, *side, &cfg, rng)
            }
            FsalSource::Bank { bank, pool } => {
                let mut cfg = EpisodeConfig::new(n_shot, n_query, pool.clone());
                cfg.p_binary_context = p_binary;
                let mut ep = sample_fsal_episode(&bank.matrix, &cfg, rng)?;
                ep.attach_inputs(&bank.xs);
                Ok(ep)
            }
        }
    }
}

fn apply_adam(net: &mut Net, grads: &NetGrads, adam: &mut AdamState) -> Result<()> {
    if net.n_params() == 0 {
        return Ok(());
    }
    let params = net.params_flat();
    let flat = net.grads_flat(grads);
    let (next, state) = adam_step(&params, &flat, adam)?;
    *adam = state;
    net.set_params_flat(&next);
    Ok(())
}

fn item_input(item: &crate::episodes::EpisodeItem) -> Result<&[f64]> {
    item.x
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("episode item has no input vector".into()))
}

/// Forward every episode member through backbone (and head), run the
/// prototype loss, and backpropagate into both networks.
fn proto_episode_step(
    backbone: &Net,
    head: Option<&Net>,
    episode: &Episode,
) -> Result<(f64, NetGrads, Option<NetGrads>)> {
    let mut caches = Vec::new();
    let mut embed_one = |x: &[f64]| -> Result<Vec<f64>> {
        backbone.check_input(x)?;
        let (h, cb) = backbone.forward_cached(x);
        match head {
            None => {
                caches.push((cb, None));
                Ok(h)
            }
            Some(hn) => {
                let (g, ch) = hn.forward_cached(&h);
                caches.push((cb, Some(ch)));
                Ok(g)
            }
        }
    };

    let mut sp = Vec::with_capacity(episode.support_pos.len());
    for item in &episode.support_pos {
        sp.push(embed_one(item_input(item)?)?);
    }
    let mut sn = Vec::with_capacity(episode.support_neg.len());
    for item in &episode.support_neg {
        sn.push(embed_one(item_input(item)?)?);
    }
    let mut queries = Vec::with_capacity(episode.query_pos.len() + episode.query_neg.len());
    for item in &episode.query_pos {
        queries.push((embed_one(item_input(item)?)?, 1u8));
    }
    for item in &episode.query_neg {
        queries.push((embed_one(item_input(item)?)?, 0u8));
    }

    let grads = proto_loss_grads(&sp, &sn, &queries)?;

    let mut gb = backbone.zero_grads();
    let mut gh = head.map(Net::zero_grads);
    let all_douts: Vec<&Vec<f64>> = grads
        .d_support_pos
        .iter()
        .chain(grads.d_support_neg.iter())
        .chain(grads.d_queries.iter())
        .collect();
    for ((cb, ch), d_out) in caches.iter().zip(all_douts) {
        let d_h = match (head, ch) {
            (Some(hn), Some(ch)) => hn.backward(ch, d_out, gh.as_mut().expect("head grads")),
            _ => d_out.to_vec(),
        };
        backbone.backward(cb, &d_h, &mut gb);
    }
    Ok((grads.loss, gb, gh))
}

/// Train a prototypical embedder on fresh synthetic episodes.
///
/// The loss is the episodic cross-entropy of the prototype likelihood; the
/// returned stats expose windowed means so callers can check that training
/// made progress.
pub fn train_protonet(
    model: &GenerativeModel,
    mode: EpisodeMode,
    config: &TrainConfig,
) -> Result<(Embedder, TrainStats)> {
    config.validate()?;
    let mut init_rng = rng_derive(config.seed, &[LBL_INIT, LBL_PROTO]);
    let mut backbone = Embedder::init(
        config.backbone,
        model.input_dim(),
        config.hidden_dim,
        config.embed_dim,
        &mut init_rng,
    );
    let mut adam = AdamState::new(backbone.net.n_params(), config.adam)?;
    let mut stats = TrainStats::default();
    let mut ep_cfg = EpisodeConfig::new(config.n_shot, config.n_query, Vec::new());
    ep_cfg.p_binary_context = config.p_binary_context;

    for step in 0..config.n_steps {
        let mut rng = rng_derive(config.seed, &[LBL_PROTO, step as u64]);
        let episode = match mode {
            EpisodeMode::FsalConjunction => {
                sample_synth_fsal_episode(model, SplitSide::Train, &ep_cfg, &mut rng)?
            }
            EpisodeMode::FslOneHot => {
                sample_fsl_episode(2, model, SplitSide::Train, &ep_cfg, &mut rng)?
            }
        };
        let (loss, gb, _) = proto_episode_step(&backbone.net, None, &episode)?;
        if !loss.is_finite() {
            return Err(Error::Training { step, msg: format!("loss became {loss}") });
        }
        apply_adam(&mut backbone.net, &gb, &mut adam)?;
        stats.losses.push(loss);
    }
    Ok((backbone, stats))
}

/// Positive-class probability per query under the prototype likelihood,
/// queries ordered positives-then-negatives.
pub fn protonet_predict(embedder: &Embedder, episode: &Episode) -> Result<Vec<f64>> {
    let embed_all = |items: &[crate::episodes::EpisodeItem]| -> Result<Vec<Vec<f64>>> {
        items
            .iter()
            .map(|i| {
                let x = item_input(i)?;
                embedder.net.check_input(x)?;
                Ok(embedder.forward(x))
            })
            .collect()
    };
    let sp = embed_all(&episode.support_pos)?;
    let sn = embed_all(&episode.support_neg)?;
    let dim = sp.first().map_or(0, Vec::len);
    let mean_of = |set: &[Vec<f64>]| -> Vec<f64> {
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
    let c_pos = mean_of(&sp);
    let c_neg = mean_of(&sn);
    let queries: Vec<Vec<f64>> = embed_all(&episode.query_pos)?
        .into_iter()
        .chain(embed_all(&episode.query_neg)?)
        .collect();
    Ok(proto_probs(&c_pos, &c_neg, &queries, Dissimilarity::SquaredEuclidean))
}

/// Contrastive pretraining on two model-rendered views per item.
pub fn train_contrastive(
    model: &GenerativeModel,
    zs: &[Vec<u8>],
    config: &TrainConfig,
) -> Result<(Embedder, ProjectionHead, TrainStats)> {
    config.validate()?;
    if config.batch_size < 2 {
        return Err(Error::InvalidArgument(
            "contrastive batch size must be at least 2".into(),
        ));
    }
    if zs.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "dataset of {} items is smaller than the batch size {}",
            zs.len(),
            config.batch_size
        )));
    }
    let mut init_rng = rng_derive(config.seed, &[LBL_INIT, LBL_CONTRAST]);
    let mut backbone = Embedder::init(
        config.backbone,
        model.input_dim(),
        config.hidden_dim,
        config.embed_dim,
        &mut init_rng,
    );
    let mut head = ProjectionHead::init(
        HeadRole::Contrastive,
        config.embed_dim,
        config.head_depth,
        config.head_hidden_dim,
        config.head_out_dim,
        &mut init_rng,
    )?;
    let mut adam_b = AdamState::new(backbone.net.n_params(), config.adam)?;
    let mut adam_h = AdamState::new(head.net.n_params(), config.adam)?;
    let mut stats = TrainStats::default();

    for step in 0..config.n_steps {
        let mut rng = rng_derive(config.seed, &[LBL_CONTRAST, step as u64]);
        let mut view_rng = rng_derive(config.seed, &[LBL_VIEW, step as u64]);
        let batch = rng.sample_distinct(zs.len(), config.batch_size);

        let mut z1 = Vec::with_capacity(batch.len());
        let mut z2 = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len() * 2);
        for &i in &batch {
            for view in 0..2 {
                let x = model.render(&zs[i], &mut view_rng);
                let (h, cb) = backbone.net.forward_cached(&x);
                let (g, ch) = head.net.forward_cached(&h);
                if view == 0 {
                    z1.push(g);
                } else {
                    z2.push(g);
                }
                caches.push((cb, ch));
            }
        }

        let (loss, dz1, dz2) = infonce_loss_grads(&z1, &z2, config.temperature)?;
        if !loss.is_finite() {
            return Err(Error::Training { step, msg: format!("loss became {loss}") });
        }
        let mut gb = backbone.net.zero_grads();
        let mut gh = head.net.zero_grads();
        for (slot, (cb, ch)) in caches.iter().enumerate() {
            let d_g = if slot % 2 == 0 { &dz1[slot / 2] } else { &dz2[slot / 2] };
            let d_h = head.net.backward(ch, d_g, &mut gh);
            backbone.net.backward(cb, &d_h, &mut gb);
        }
        apply_adam(&mut backbone.net, &gb, &mut adam_b)?;
        apply_adam(&mut head.net, &gh, &mut adam_h)?;
        stats.losses.push(loss);
    }
    Ok((backbone, head, stats))
}

/// Outcome of supervised attribute training.
pub struct SaModel {
    pub embedder: Embedder,
    pub head: AttributeHead,
    /// Attributes dropped because the dataset shows a single class for them.
    pub skipped_attrs: Vec<usize>,
    pub stats: TrainStats,
}

/// Supervised attribute training: multi-label BCE over the listed attributes.
/// The same operation backs both the train-split and the all-attribute
/// (oracle) variants.
pub fn train_sa(
    dataset: &[Example],
    supervised_attrs: &[usize],
    config: &TrainConfig,
) -> Result<SaModel> {
    config.validate()?;
    if supervised_attrs.is_empty() {
        return Err(Error::InvalidArgument("no supervised attributes given".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for &a in supervised_attrs {
        let first = dataset[0].z[a];
        if dataset.iter().any(|ex| ex.z[a] != first) {
            usable.push(a);
        } else {
            skipped.push(a);
        }
    }
    if usable.is_empty() {
        return Err(Error::Validation(
            "every supervised attribute has a single class in this dataset".into(),
        ));
    }

    let input_dim = dataset[0].x.len();
    let mut init_rng = rng_derive(config.seed, &[LBL_INIT, LBL_SA]);
    let mut backbone = Embedder::init(
        config.backbone,
        input_dim,
        config.hidden_dim,
        config.embed_dim,
        &mut init_rng,
    );
    let mut head = AttributeHead::init(usable.len(), config.embed_dim, usable.clone(), &mut init_rng);
    let mut adam_b = AdamState::new(backbone.net.n_params(), config.adam)?;
    let mut adam_h = AdamState::new(head.net.n_params(), config.adam)?;
    let mut stats = TrainStats::default();
    let batch_size = config.batch_size.min(dataset.len());

    for step in 0..config.n_steps {
        let mut rng = rng_derive(config.seed, &[LBL_SA, step as u64]);
        let batch = rng.sample_distinct(dataset.len(), batch_size);
        let mut embs = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len());
        for &i in &batch {
            let (h, cb) = backbone.net.forward_cached(&dataset[i].x);
            embs.push(h);
            caches.push(cb);
            labels.push(usable.iter().map(|&a| dataset[i].z[a]).collect::<Vec<u8>>());
        }
        let grads = attribute_bce_grads(head.weight(), head.bias(), &embs, &labels)?;
        if !grads.loss.is_finite() {
            return Err(Error::Training { step, msg: format!("loss became {}", grads.loss) });
        }
        let mut gb = backbone.net.zero_grads();
        for (cb, d_h) in caches.iter().zip(&grads.d_embeddings) {
            backbone.net.backward(cb, d_h, &mut gb);
        }
        let gh = NetGrads {
            layers: vec![(grads.d_weight.clone(), Some(grads.d_bias.clone()))],
        };
        apply_adam(&mut backbone.net, &gb, &mut adam_b)?;
        apply_adam(&mut head.net, &gh, &mut adam_h)?;
        stats.losses.push(grads.loss);
    }
    Ok(SaModel { embedder: backbone, head, skipped_attrs: skipped, stats })
}

/// Episodic finetuning: a fresh projection head trained with the prototype
/// loss on training-attribute episodes; the backbone moves at a reduced rate.
pub fn finetune_ufte(
    backbone: &Embedder,
    source: &FsalSource,
    config: &TrainConfig,
) -> Result<(Embedder, ProjectionHead, TrainStats)> {
    config.validate()?;
    if source.input_dim() != backbone.input_dim {
        return Err(Error::Dimension("episode inputs do not match the backbone".into()));
    }
    let mut backbone = backbone.clone();
    let mut init_rng = rng_derive(config.seed, &[LBL_INIT, LBL_UFTE]);
    let mut head = ProjectionHead::init(
        HeadRole::Finetune,
        backbone.embed_dim,
        config.head_depth,
        config.head_hidden_dim,
        config.head_out_dim,
        &mut init_rng,
    )?;
    let mut adam_b = AdamState::new(backbone.net.n_params(), config.scaled_adam())?;
    let mut adam_h = AdamState::new(head.net.n_params(), config.adam)?;
    let mut stats = TrainStats::default();

    for step in 0..config.n_steps {
        let mut rng = rng_derive(config.seed, &[LBL_UFTE, step as u64]);
        let episode = source.sample(config.n_shot, config.n_query, config.p_binary_context, &mut rng)?;
        let (loss, gb, gh) = proto_episode_step(&backbone.net, Some(&head.net), &episode)?;
        if !loss.is_finite() {
            return Err(Error::Training { step, msg: format!("loss became {loss}") });
        }
        if config.backbone_lr_scale > 0.0 {
            apply_adam(&mut backbone.net, &gb, &mut adam_b)?;
        }
        apply_adam(&mut head.net, &gh.expect("head grads"), &mut adam_h)?;
        stats.losses.push(loss);
    }
    Ok((backbone, head, stats))
}

/// Attribute finetuning: absolute attribute BCE through a fresh projection
/// head; the backbone moves at a reduced rate.
pub fn finetune_ufta(
    backbone: &Embedder,
    dataset: &[Example],
    train_attrs: &[usize],
    config: &TrainConfig,
) -> Result<(Embedder, ProjectionHead, AttributeHead, TrainStats)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if train_attrs.is_empty() {
        return Err(Error::InvalidArgument("no supervised attributes given".into()));
    }
    let mut usable = Vec::new();
    for &a in train_attrs {
        let first = dataset[0].z[a];
        if dataset.iter().any(|ex| ex.z[a] != first) {
            usable.push(a);
        }
    }
    if usable.is_empty() {
        return Err(Error::Validation(
            "every supervised attribute has a single class in this dataset".into(),
        ));
    }

    let mut backbone = backbone.clone();
    let mut init_rng = rng_derive(config.seed, &[LBL_INIT, LBL_UFTA]);
    let mut head = ProjectionHead::init(
        HeadRole::Finetune,
        backbone.embed_dim,
        config.head_depth,
        config.head_hidden_dim,
        config.head_out_dim,
        &mut init_rng,
    )?;
    let g_dim = if head.depth() == 0 { backbone.embed_dim } else { head.output_dim };
    let mut attr_head = AttributeHead::init(usable.len(), g_dim, usable.clone(), &mut init_rng);
    let mut adam_b = AdamState::new(backbone.net.n_params(), config.scaled_adam())?;
    let mut adam_h = AdamState::new(head.net.n_params(), config.adam)?;
    let mut adam_a = AdamState::new(attr_head.net.n_params(), config.adam)?;
    let mut stats = TrainStats::default();
    let batch_size = config.batch_size.min(dataset.len());

    for step in 0..config.n_steps {
        let mut rng = rng_derive(config.seed, &[LBL_UFTA, step as u64]);
        let batch = rng.sample_distinct(dataset.len(), batch_size);
        let mut gs = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len());
        for &i in &batch {
            let (h, cb) = backbone.net.forward_cached(&dataset[i].x);
            let (g, ch) = head.net.forward_cached(&h);
            gs.push(g);
            caches.push((cb, ch));
            labels.push(usable.iter().map(|&a| dataset[i].z[a]).collect::<Vec<u8>>());
        }
        let grads = attribute_bce_grads(attr_head.weight(), attr_head.bias(), &gs, &labels)?;
        if !grads.loss.is_finite() {
            return Err(Error::Training { step, msg: format!("loss became {}", grads.loss) });
        }
        let mut gb = backbone.net.zero_grads();
        let mut gh = head.net.zero_grads();
        for ((cb, ch), d_g) in caches.iter().zip(&grads.d_embeddings) {
            let d_h = head.net.backward(ch, d_g, &mut gh);
            backbone.net.backward(cb, &d_h, &mut gb);
        }
        let ga = NetGrads {
            layers: vec![(grads.d_weight.clone(), Some(grads.d_bias.clone()))],
        };
        if config.backbone_lr_scale > 0.0 {
            apply_adam(&mut backbone.net, &gb, &mut adam_b)?;
        }
        apply_adam(&mut head.net, &gh, &mut adam_h)?;
        apply_adam(&mut attr_head.net, &ga, &mut adam_a)?;
        stats.losses.push(grads.loss);
    }
    Ok((backbone, head, attr_head, stats))
}

/// Stage-II embedding: the backbone output by default, the head output only
/// when explicitly requested.
pub fn embed(
    embedder: &Embedder,
    head: Option<&ProjectionHead>,
    x: &[f64],
    use_head: bool,
) -> Result<Vec<f64>> {
    if x.len() != embedder.input_dim {
        return Err(Error::Dimension(format!(
            "input has {} entries, embedder expects {}",
            x.len(),
            embedder.input_dim
        )));
    }
    let h = embedder.forward(x);
    match (use_head, head) {
        (true, Some(head)) => {
            if let Some(d) = head.net.in_dim() {
                if h.len() != d {
                    return Err(Error::Dimension(format!(
                        "embedding has {} entries, head expects {d}",
                        h.len()
                    )));
                }
            }
            Ok(head.forward(&h))
        }
        _ => Ok(h),
    }
}
