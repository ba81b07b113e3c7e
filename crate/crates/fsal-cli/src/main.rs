//! `fsal`: reproducible few-shot attribute learning runs.
//!
//! Every subcommand seeds all randomness from `--seed`, writes a manifest
//! before any results, and produces byte-identical outputs for a given
//! `(config, seed)` regardless of `--jobs`.

mod commands;
mod config;
mod util;
mod world;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::util::CliError;

#[derive(Parser)]
#[command(name = "fsal", version, about = "Few-shot attribute learning at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Parallel episode evaluation workers.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// JSON config file; explicit flags win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Nn,
    Nc,
    Lr,
    Gt,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Protonet,
    Contrastive,
    Sa,
    Sastar,
    Ufte,
    Ufta,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtoModeArg {
    Fsal,
    Fsl,
}

#[derive(Clone, Copy, ValueEnum)]
enum IngestFormatArg {
    Celeba,
    LongCsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum WorldKindArg {
    Conjunction,
    Transfer,
}

#[derive(Subcommand)]
enum Command {
    /// Linear toy experiment: conjunction and one-hot training plus kernel
    /// heatmaps.
    Toy {
        #[command(flatten)]
        common: CommonArgs,
        /// Training episodes per mode.
        #[arg(long)]
        train_episodes: Option<usize>,
        /// Evaluation episodes per side.
        #[arg(long)]
        test_episodes: Option<usize>,
        #[arg(long)]
        shot: Option<usize>,
        #[arg(long)]
        query: Option<usize>,
        #[arg(long)]
        noise_std: Option<f64>,
        #[arg(long)]
        input_dim: Option<usize>,
        #[arg(long)]
        attrs: Option<usize>,
        #[arg(long)]
        train_attrs: Option<usize>,
    },
    /// Generate a synthetic attribute world (matrix, inputs, model).
    GenSynth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        kind: Option<WorldKindArg>,
        #[arg(long)]
        items: Option<usize>,
        /// Total attributes (conjunction worlds).
        #[arg(long)]
        attrs: Option<usize>,
        /// Train-side attributes (both world kinds).
        #[arg(long)]
        train_attrs: Option<usize>,
        /// Test-side attributes (transfer worlds).
        #[arg(long)]
        test_attrs: Option<usize>,
        #[arg(long)]
        dependency_noise: Option<f64>,
        #[arg(long)]
        prior: Option<f64>,
        #[arg(long)]
        noise_std: Option<f64>,
        #[arg(long)]
        input_dim: Option<usize>,
    },
    /// Ingest an annotation file into the canonical matrix format.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        format: IngestFormatArg,
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated attribute names to keep, in order.
        #[arg(long)]
        select: Option<String>,
    },
    /// Sample an episode archive plus its answer key.
    SampleEpisodes {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_enum)]
        side: Option<SideArg>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        shot: Option<usize>,
        #[arg(long)]
        query: Option<usize>,
        #[arg(long)]
        p_binary: Option<f64>,
    },
    /// Train a representation on a synthetic world.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        algo: AlgoArg,
        #[arg(long)]
        world: PathBuf,
        /// Pretrained checkpoint to start from (finetuning algorithms).
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// Episode labeling for prototypical training.
        #[arg(long, value_enum)]
        mode: Option<ProtoModeArg>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        head_depth: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        backbone_lr_scale: Option<f64>,
        #[arg(long)]
        shot: Option<usize>,
        #[arg(long)]
        query: Option<usize>,
        #[arg(long)]
        p_binary: Option<f64>,
        #[arg(long)]
        linear_backbone: bool,
    },
    /// Evaluate a classifier over sampled episodes.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        classifier: ClassifierArg,
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_enum)]
        side: Option<SideArg>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        shot: Option<usize>,
        #[arg(long)]
        query: Option<usize>,
        #[arg(long)]
        p_binary: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Keep the projection head at test time.
        #[arg(long)]
        use_head: bool,
        /// Score against shuffled query labels (chance control).
        #[arg(long)]
        shuffle_labels: bool,
    },
    /// Evaluate at several shot counts with shared episode streams.
    ShotSweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        classifier: ClassifierArg,
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_enum)]
        side: Option<SideArg>,
        /// Comma-separated shot counts.
        #[arg(long)]
        shots: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        query: Option<usize>,
        #[arg(long)]
        p_binary: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Per-attribute linear readout of a trained embedder.
    Readout {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        embedder: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long, value_enum)]
        side: Option<SideArg>,
        #[arg(long)]
        holdout: Option<f64>,
    },
    /// Random-split sweep with transferability scores and T-score binning.
    TransferStudy {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        episodes_per_split: Option<usize>,
        /// Comma-separated pipelines (gt, random, sa, sastar, u, ufte, ufta).
        #[arg(long)]
        pipelines: Option<String>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        shot: Option<usize>,
        #[arg(long)]
        query: Option<usize>,
        #[arg(long)]
        p_binary: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
        #[arg(long)]
        holdout: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Toy {
            common,
            train_episodes,
            test_episodes,
            shot,
            query,
            noise_std,
            input_dim,
            attrs,
            train_attrs,
        } => commands::toy::run(
            common,
            commands::toy::Overrides {
                train_episodes,
                test_episodes,
                shot,
                query,
                noise_std,
                input_dim,
                attrs,
                train_attrs,
            },
        ),
        Command::GenSynth {
            common,
            kind,
            items,
            attrs,
            train_attrs,
            test_attrs,
            dependency_noise,
            prior,
            noise_std,
            input_dim,
        } => commands::gen_synth::run(
            common,
            commands::gen_synth::Overrides {
                kind: kind.map(|k| match k {
                    WorldKindArg::Conjunction => "conjunction".into(),
                    WorldKindArg::Transfer => "transfer".into(),
                }),
                items,
                attrs,
                train_attrs,
                test_attrs,
                dependency_noise,
                prior,
                noise_std,
                input_dim,
            },
        ),
        Command::Ingest { common, format, input, select } => commands::ingest::run(
            common,
            match format {
                IngestFormatArg::Celeba => "celeba",
                IngestFormatArg::LongCsv => "long-csv",
            },
            input,
            select,
        ),
        Command::SampleEpisodes {
            common,
            matrix,
            world,
            split,
            side,
            episodes,
            shot,
            query,
            p_binary,
        } => commands::sample_episodes::run(
            common,
            matrix,
            world,
            split,
            side.map(side_tag),
            commands::sample_episodes::Overrides { episodes, shot, query, p_binary },
        ),
        Command::Train {
            common,
            algo,
            world,
            backbone,
            mode,
            steps,
            batch_size,
            embed_dim,
            hidden_dim,
            head_depth,
            temperature,
            learning_rate,
            backbone_lr_scale,
            shot,
            query,
            p_binary,
            linear_backbone,
        } => commands::train::run(
            common,
            match algo {
                AlgoArg::Protonet => "protonet",
                AlgoArg::Contrastive => "contrastive",
                AlgoArg::Sa => "sa",
                AlgoArg::Sastar => "sastar",
                AlgoArg::Ufte => "ufte",
                AlgoArg::Ufta => "ufta",
            },
            world,
            backbone,
            mode.map(|m| match m {
                ProtoModeArg::Fsal => "fsal",
                ProtoModeArg::Fsl => "fsl",
            }),
            commands::train::Overrides {
                steps,
                batch_size,
                embed_dim,
                hidden_dim,
                head_depth,
                temperature,
                learning_rate,
                backbone_lr_scale,
                shot,
                query,
                p_binary,
                linear_backbone: linear_backbone.then_some(true),
            },
        ),
        Command::Eval {
            common,
            classifier,
            embedder,
            matrix,
            world,
            split,
            side,
            episodes,
            shot,
            query,
            p_binary,
            lambda,
            use_head,
            shuffle_labels,
        } => commands::eval::run(
            common,
            classifier_tag(classifier),
            embedder,
            matrix,
            world,
            split,
            side.map(side_tag),
            commands::eval::Overrides {
                episodes,
                shot,
                query,
                p_binary,
                lambda,
                use_head: use_head.then_some(true),
                shuffle_labels: shuffle_labels.then_some(true),
            },
        ),
        Command::ShotSweep {
            common,
            classifier,
            embedder,
            matrix,
            world,
            split,
            side,
            shots,
            episodes,
            query,
            p_binary,
            lambda,
        } => commands::shot_sweep::run(
            common,
            classifier_tag(classifier),
            embedder,
            matrix,
            world,
            split,
            side.map(side_tag),
            shots,
            commands::shot_sweep::Overrides { episodes, query, p_binary, lambda },
        ),
        Command::Readout { common, embedder, world, side, holdout } => {
            commands::readout::run(common, embedder, world, side.map(side_tag), holdout)
        }
        Command::TransferStudy {
            common,
            world,
            splits,
            episodes_per_split,
            pipelines,
            bins,
            shot,
            query,
            p_binary,
            steps,
            embed_dim,
            holdout,
        } => commands::transfer::run(
            common,
            world,
            commands::transfer::Overrides {
                splits,
                episodes_per_split,
                pipelines,
                bins,
                shot,
                query,
                p_binary,
                steps,
                embed_dim,
                holdout,
            },
        ),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn classifier_tag(c: ClassifierArg) -> &'static str {
    match c {
        ClassifierArg::Nn => "nn",
        ClassifierArg::Nc => "nc",
        ClassifierArg::Lr => "lr",
        ClassifierArg::Gt => "gt",
    }
}

fn side_tag(s: SideArg) -> &'static str {
    match s {
        SideArg::Train => "train",
        SideArg::Test => "test",
        SideArg::All => "all",
    }
}
