use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, CommandFactory, Parser, Subcommand};
use fusenet::kv::KvMap;
use fusenet::train::{Precision, TrainConfig};
use fusenet::zoo::{NetKind, ScaleProfile};

#[derive(Debug, Parser)]
#[command(name = "fusenet", version, about = "Image + audio fusion CNN laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render WAV files into spectrogram images.
    Spectrogram(SpectrogramArgs),
    /// Pair image and spectrogram folders into a manifest and container.
    DatasetBuild(DatasetBuildArgs),
    /// Write the synthetic factorial dataset as a container.
    DatasetSynth(DatasetSynthArgs),
    /// Train one network.
    Train(TrainCmdArgs),
    /// Evaluate a checkpoint and dump per-sample predictions.
    Eval(EvalArgs),
    /// Two-stage fine-tuning: streams alone, then the fusion part.
    Finetune2(Finetune2Args),
    /// Train both unimodal baselines and all six fusion networks.
    Compare(CompareArgs),
    /// Tile a convolution layer's filters into one image.
    VizFilters(VizArgs),
    /// Merge learning-curve CSVs into one table.
    Curves(CurvesArgs),
}

#[derive(Debug, Args)]
pub struct SpectrogramArgs {
    /// Folder of WAV files, either flat or one subfolder per class.
    #[arg(long)]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 22_050)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 512)]
    pub window: usize,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    #[arg(long, default_value_t = 0.0)]
    pub band_low: f64,
    #[arg(long, default_value_t = 10_000.0)]
    pub band_high: f64,
    #[arg(long, default_value_t = 10.0)]
    pub segment_sec: f64,
}

#[derive(Debug, Args)]
pub struct DatasetBuildArgs {
    /// One subfolder of PNG/PPM images per class.
    #[arg(long)]
    pub images: PathBuf,
    /// One subfolder of spectrogram PNG/PPM images per class.
    #[arg(long)]
    pub spectrograms: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Side length images are resized to.
    #[arg(long, default_value_t = 32)]
    pub hw: usize,
    #[arg(long, env = "FUSENET_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "32")]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct DatasetSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub image_factors: usize,
    #[arg(long, default_value_t = 2)]
    pub audio_factors: usize,
    #[arg(long, default_value_t = 200)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = fusenet::dataset::DEFAULT_NOISE_SIGMA)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 32)]
    pub hw: usize,
    #[arg(long, env = "FUSENET_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "32")]
    pub precision: Precision,
}

/// Training flags shared by every command that trains.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long, default_value = "desk-32")]
    pub profile: ScaleProfile,
    /// Defaults depend on the profile and on the network kind.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, env = "FUSENET_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long)]
    pub no_shuffle: bool,
}

impl TrainFlags {
    pub fn resolve(&self, kind: NetKind, precision: Precision) -> anyhow::Result<TrainConfig> {
        let mut c = TrainConfig::for_profile(kind, self.profile);
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.momentum {
            c.momentum = v;
        }
        c.epochs = self.epochs;
        c.seed = self.seed;
        c.weight_decay = self.weight_decay;
        c.shuffle = !self.no_shuffle;
        c.precision = precision;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainCmdArgs {
    /// FZDS container.
    #[arg(long)]
    pub data: PathBuf,
    /// image, audio, net1, net2, net3-sum, net3-mul, fc7-concat, score-avg
    #[arg(long)]
    pub net: NetKind,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub net: NetKind,
    #[arg(long, default_value = "desk-32")]
    pub profile: ScaleProfile,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Per-sample prediction CSV.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Finetune2Args {
    #[arg(long)]
    pub data: PathBuf,
    /// mid-concat, late-sum, late-mul, late-fc7-concat or late-score-avg
    /// (report names such as net3-sum work too).
    #[arg(long)]
    pub strategy: NetKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after stage 1 and fuse the streams as trained.
    #[arg(long)]
    pub skip_stage2: bool,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layer such as `img.conv1` (or its `.weight` parameter).
    #[arg(long)]
    pub layer: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CurveColumn {
    Loss,
    TestAccuracy,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// Metrics CSVs (`epoch,loss,test_accuracy`); columns are named by file stem.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = CurveColumn::TestAccuracy)]
    pub column: CurveColumn,
}

/// Replaces `--config <file>` with the file's `key = value` entries as
/// long flags. Flags given on the command line win; a boolean key is
/// passed as a bare flag when `true` and dropped when `false`.
pub fn splice_config(argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let mut argv = argv;
    let path = if let Some(p) = argv[pos].strip_prefix("--config=") {
        let p = p.to_string();
        argv.remove(pos);
        p
    } else {
        if pos + 1 >= argv.len() {
            bail!("--config needs a file path");
        }
        let p = argv.remove(pos + 1);
        argv.remove(pos);
        p
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let map = KvMap::parse(&text).with_context(|| format!("parsing config {path}"))?;
    let cmd = Cli::command();
    let sub = argv
        .iter()
        .skip(1)
        .find_map(|a| cmd.find_subcommand(a))
        .with_context(|| "--config needs a subcommand before it")?;
    for (key, value) in map.entries() {
        let flag = key.replace('_', "-");
        let given = argv.iter().any(|a| *a == format!("--{flag}") || a.starts_with(&format!("--{flag}=")));
        if given {
            continue;
        }
        let takes_value = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(flag.as_str()))
            .map(|a| a.get_action().takes_values());
        match takes_value {
            // unknown keys are passed through so the parser rejects them
            Some(true) | None => {
                argv.push(format!("--{flag}"));
                argv.push(value.clone());
            }
            Some(false) => match value.as_str() {
                "true" => argv.push(format!("--{flag}")),
                "false" => {}
                other => bail!("config key `{key}` is a switch; expected true or false, got `{other}`"),
            },
        }
    }
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_fills_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.kv");
        std::fs::write(&cfg, "# desk run\nepochs = 3\nlr = 0.5\nno_shuffle = true\n").unwrap();
        let out = splice_config(argv(&format!(
            "fusenet train --config {} --data d --net image --out o --lr 0.1",
            cfg.display()
        )))
        .unwrap();
        let cli = Cli::try_parse_from(out).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.train.epochs, 3);
        assert_eq!(t.train.lr, Some(0.1));
        assert!(t.train.no_shuffle);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.kv");
        std::fs::write(&cfg, "colour = blue\n").unwrap();
        let out = splice_config(argv(&format!("fusenet train --data d --net image --out o --config {}", cfg.display())))
            .unwrap();
        assert!(Cli::try_parse_from(out).is_err());
    }
}
