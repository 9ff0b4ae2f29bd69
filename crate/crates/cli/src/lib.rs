//! `lpm` command line: dataset synthesis, training, latent editing,
//! generation, evaluation and the HTTP service.
//!
//! Every command resolves its settings from defaults, an optional
//! `--config` file and flags (in that order of precedence, lowest first)
//! and writes the resolved copy as `<out>/<command>.config`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lpm", version, about = "Part-aware point-cloud autoencoder toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra setting as `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled dataset and its manifest.
    Synth(SynthArgs),
    /// Train the autoencoder, or a generative head on top of a checkpoint.
    Train(TrainArgs),
    /// Apply a latent edit to input clouds and decode the result.
    Edit(EditArgs),
    /// Produce new shapes by recombination or from a generative head.
    Generate(GenerateArgs),
    /// Score generated clouds against a reference split.
    Eval(EvalArgs),
    /// Run the HTTP edit service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON shape-family description; the built-in chair family when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Train/val/test ratios, e.g. `0.8,0.1,0.1`.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Starting weights; required for `--head`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub feature_size: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub parts: Option<usize>,
    /// Reconstruction loss: `cd` or `emd`.
    #[arg(long)]
    pub metric: Option<String>,
    /// Part pooling: `max` or `mean`.
    #[arg(long)]
    pub pooling: Option<String>,
    /// KL weight; adds a variational head.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Generative head to train: `vae`, `gan` or `wgan`.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Center each cloud and scale it into the unit sphere on load.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub gan: Option<PathBuf>,
    #[arg(long)]
    pub wgan: Option<PathBuf>,
    /// Base URL of a running service; an in-process one is started otherwise.
    #[arg(long)]
    pub server: Option<String>,
    /// Edit description: a JSON file or inline JSON. Sources name inputs.
    #[arg(long)]
    pub op: Option<String>,
    /// Input cloud as `name=path` or `path` (named by file stem).
    #[arg(long = "input")]
    pub inputs: Vec<String>,
    /// Interpolation steps, e.g. `0,0.25,0.5,0.75,1`; one file per step.
    #[arg(long)]
    pub t: Option<String>,
    /// Also write `.pts`/`.seg` next to each JSON output.
    #[arg(long)]
    pub pts: bool,
    /// Center each cloud and scale it into the unit sphere on load.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub gan: Option<PathBuf>,
    #[arg(long)]
    pub wgan: Option<PathBuf>,
    #[arg(long)]
    pub server: Option<String>,
    /// `exchange`, `compose`, `vae`, `gan` or `wgan`.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Source shapes for `exchange` and `compose`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Number of base shapes varied by `exchange`.
    #[arg(long)]
    pub inputs: Option<usize>,
    #[arg(long)]
    pub parts_changed: Option<usize>,
    #[arg(long)]
    pub pts: bool,
    /// Center each cloud and scale it into the unit sphere on load.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of generated `.json` clouds; subdirectories group
    /// variants of one input for TMD.
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// EMD flavour: `emd` (approximate) or `emd-exact`.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Center each cloud and scale it into the unit sphere on load.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub gan: Option<PathBuf>,
    #[arg(long)]
    pub wgan: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// A present boolean flag overrides config; an absent one leaves it alone.
fn set_flag(c: &mut RunConfig, key: &str, on: bool) {
    if on {
        c.set(key, true);
    }
}

impl Common {
    /// Config file entries, then `--set` pairs, then the shared flags.
    fn resolve(&self, command: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::new(command);
        if let Some(path) = &self.config {
            cfg.merge(&RunConfig::load(path)?);
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got `{pair}`"))?;
            cfg.set(k.trim(), v.trim());
        }
        cfg.set_opt("seed", self.seed);
        cfg.set_opt("out", path_str(&self.out));
        Ok(cfg)
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Edit(_) => "edit",
            Command::Generate(_) => "generate",
            Command::Eval(_) => "eval",
            Command::Serve(_) => "serve",
        }
    }

    /// Settings after applying every override.
    pub fn settings(&self) -> Result<RunConfig> {
        let name = self.name();
        let mut c;
        match self {
            Command::Synth(a) => {
                c = a.common.resolve(name)?;
                c.set_opt("spec", path_str(&a.spec));
                c.set_opt("count", a.count);
                c.set_opt("points", a.points);
                c.set_opt("split", a.split.as_ref());
            }
            Command::Train(a) => {
                c = a.common.resolve(name)?;
                c.set_opt("manifest", path_str(&a.manifest));
                c.set_opt("checkpoint", path_str(&a.checkpoint));
                c.set_opt("feature-size", a.feature_size);
                c.set_opt("points", a.points);
                c.set_opt("parts", a.parts);
                c.set_opt("metric", a.metric.as_ref());
                c.set_opt("pooling", a.pooling.as_ref());
                c.set_opt("beta", a.beta);
                c.set_opt("head", a.head.as_ref());
                c.set_opt("epochs", a.epochs);
                c.set_opt("batch-size", a.batch_size);
                c.set_opt("lr", a.lr);
                set_flag(&mut c, "normalize", a.normalize);
            }
            Command::Edit(a) => {
                c = a.common.resolve(name)?;
                c.set_opt("checkpoint", path_str(&a.checkpoint));
                c.set_opt("gan", path_str(&a.gan));
                c.set_opt("wgan", path_str(&a.wgan));
                c.set_opt("server", a.server.as_ref());
                c.set_opt("op", a.op.as_ref());
                if !a.inputs.is_empty() {
                    c.set("input", a.inputs.join(","));
                }
                c.set_opt("t", a.t.as_ref());
                set_flag(&mut c, "pts", a.pts);
                set_flag(&mut c, "normalize", a.normalize);
            }
            Command::Generate(a) => {
                c = a.common.resolve(name)?;
                c.set_opt("checkpoint", path_str(&a.checkpoint));
                c.set_opt("gan", path_str(&a.gan));
                c.set_opt("wgan", path_str(&a.wgan));
                c.set_opt("server", a.server.as_ref());
                c.set_opt("head", a.head.as_ref());
                c.set_opt("count", a.count);
                c.set_opt("manifest", path_str(&a.manifest));
                c.set_opt("inputs", a.inputs);
                c.set_opt("parts-changed", a.parts_changed);
                set_flag(&mut c, "pts", a.pts);
                set_flag(&mut c, "normalize", a.normalize);
            }
            Command::Eval(a) => {
                c = a.common.resolve(name)?;
                c.set_opt("generated", path_str(&a.generated));
                c.set_opt("manifest", path_str(&a.manifest));
                c.set_opt("metric", a.metric.as_ref());
                c.set_opt("grid", a.grid);
                set_flag(&mut c, "normalize", a.normalize);
            }
            Command::Serve(a) => {
                c = a.common.resolve(name)?;
                c.set_opt("checkpoint", path_str(&a.checkpoint));
                c.set_opt("gan", path_str(&a.gan));
                c.set_opt("wgan", path_str(&a.wgan));
                c.set_opt("port", a.port);
                c.set_opt("host", a.host.as_ref());
                c.set_opt("cors-origin", a.cors_origin.as_ref());
            }
        }
        Ok(c)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let cfg = cli.command.settings()?;
    commands::dispatch(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_map_to_settings() {
        let cli = Cli::try_parse_from([
            "lpm",
            "train",
            "--manifest",
            "m.json",
            "--feature-size",
            "32",
            "--pooling",
            "mean",
            "--seed",
            "4",
            "--set",
            "seg-weight=2",
            "--out",
            "o",
        ])
        .unwrap();
        let c = cli.command.settings().unwrap();
        assert_eq!(c.raw("command"), Some("train"));
        assert_eq!(c.raw("feature-size"), Some("32"));
        assert_eq!(c.raw("pooling"), Some("mean"));
        assert_eq!(c.raw("seed"), Some("4"));
        assert_eq!(c.raw("seg-weight"), Some("2"));
        assert_eq!(c.raw("manifest"), Some("m.json"));
    }

    #[test]
    fn flags_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.config");
        std::fs::write(&file, "epochs = 7\nlr = 0.01\ncommand = synth\n").unwrap();
        let cli = Cli::try_parse_from(["lpm", "train", "--config", file.to_str().unwrap(), "--epochs", "3"]).unwrap();
        let c = cli.command.settings().unwrap();
        assert_eq!(c.raw("epochs"), Some("3"));
        assert_eq!(c.raw("lr"), Some("0.01"));
        assert_eq!(c.raw("command"), Some("train"));
    }

    #[test]
    fn absent_boolean_flag_keeps_config_value() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.config");
        std::fs::write(&file, "normalize = true\n").unwrap();
        let cli = Cli::try_parse_from(["lpm", "eval", "--config", file.to_str().unwrap()]).unwrap();
        assert_eq!(cli.command.settings().unwrap().raw("normalize"), Some("true"));
        let cli = Cli::try_parse_from(["lpm", "generate", "--normalize"]).unwrap();
        assert_eq!(cli.command.settings().unwrap().raw("normalize"), Some("true"));
    }

    #[test]
    fn malformed_set_is_rejected() {
        let cli = Cli::try_parse_from(["lpm", "eval", "--set", "novalue"]).unwrap();
        assert!(cli.command.settings().is_err());
    }
}
