use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seldkit::meta::Method;
use seldkit::model::AttenuationInput;

mod cli;

#[derive(Parser)]
#[command(name = "seldkit", version, about = "Spatial scene synthesis and environment-adaptive meta-learning for SELD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the dataset manifest path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Overrides the input checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    ReverbLadder,
    NoiseSet,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates and exports the SRIR bank of every room in a scene config.
    SynthSrir(Common),
    /// Generates a labeled FOA dataset from a scene config or a study preset.
    SynthScenes {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, conflicts_with = "config")]
        study: Option<Study>,
        /// Clips per room for study presets.
        #[arg(long, default_value_t = 64)]
        clips: usize,
        /// Reflection order for study presets.
        #[arg(long, default_value_t = 10)]
        max_order: usize,
        /// Number of rooms of the noise-set preset.
        #[arg(long, default_value_t = 6)]
        rooms: usize,
    },
    /// Trains the environment-independent backbone.
    TrainEi(Common),
    /// Meta-trains from a checkpoint (or from scratch for `meta`).
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long, value_enum)]
        attenuation_input: Option<AttenuationInput>,
    },
    /// Adapts a checkpoint to one environment and scores its query clips.
    Adapt(Common),
    /// Scores adapted predictions, or a directory of prediction CSVs.
    Evaluate(Common),
    /// Similarity maps, attenuation reports and steps/shots sweeps.
    Analyze(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = cli::init_threads() {
        eprintln!("error [{}]: {e}", e.category());
        return ExitCode::from(e.category().exit_code() as u8);
    }
    let args = Cli::parse();
    let res = match args.command {
        Command::SynthSrir(c) => cli::synth_srir(&c.into()),
        Command::SynthScenes { common, study, clips, max_order, rooms } => {
            let study = study.map(|s| match s {
                Study::ReverbLadder => cli::StudyPreset::ReverbLadder { clips, max_order },
                Study::NoiseSet => cli::StudyPreset::NoiseSet { rooms, clips, max_order },
            });
            cli::synth_scenes(&common.into(), study)
        }
        Command::TrainEi(c) => cli::train_ei(&c.into()),
        Command::MetaTrain { common, method, attenuation_input } => cli::meta_train(&common.into(), method, attenuation_input),
        Command::Adapt(c) => cli::adapt(&c.into()),
        Command::Evaluate(c) => cli::evaluate(&c.into()),
        Command::Analyze(c) => cli::analyze(&c.into()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

impl From<Common> for cli::RunArgs {
    fn from(c: Common) -> Self {
        cli::RunArgs { config: c.config, out: c.out, seed: c.seed, dataset: c.dataset, checkpoint: c.checkpoint }
    }
}
