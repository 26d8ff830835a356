use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use neurodenoise::config::ModelConfig;
use neurodenoise::datasynth::{self, MixSpec, ToyCorpusSpec};
use neurodenoise::model::{enhance_streaming, Model};
use neurodenoise::profiler::{build_report, PowerReport};
use neurodenoise::spectral::Stft;
use neurodenoise::trainer::{self, Example, GradCheckOptions, TrainingConfig};
use neurodenoise::{checkpoint, AudioBuffer, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_CHECKPOINT: u8 = 4;

/// Real-time speech enhancement with gated spiking neurons.
#[derive(Parser)]
#[command(name = "neurodenoise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance a WAV file.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Process hop-sized chunks with carried state.
        #[arg(long)]
        stream: bool,
        /// Write a power report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a manifest of noisy/clean pairs.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// manifest.jsonl written by `synthdata`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-epoch metrics log; defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Operation counts and energy estimate for one input.
    Profile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients with finite differences on a toy clip.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 0.12)]
        seconds: f64,
    },
    /// Synthesize a noisy/clean pair set with a manifest.
    Synthdata {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "out")]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Trainable parameter counts per module.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a freshly initialized checkpoint.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "out")]
        output: PathBuf,
        /// Zero network with unit-tap filters: output equals input.
        #[arg(long)]
        identity: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Marks errors in reading or validating configuration files.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::CheckpointMismatch(_) | Error::Checkpoint(_) => EXIT_CHECKPOINT,
                Error::Io(_) | Error::Wav(_) | Error::Json(_) => EXIT_IO,
                _ => EXIT_FAILURE,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_FAILURE
}

/// Model settings plus an optional `[training]` table.
#[derive(Debug, Default)]
struct RunConfig {
    model: ModelConfig,
    training: TrainingConfig,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let parse = || -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
        let training = match table.remove("training") {
            Some(t) => t.try_into().map_err(|e| format!("[training]: {e}"))?,
            None => TrainingConfig::default(),
        };
        let model_text = toml::to_string(&table).map_err(|e| e.to_string())?;
        let model = ModelConfig::from_toml_str(&model_text).map_err(|e| e.to_string())?;
        training.validate().map_err(|e| e.to_string())?;
        Ok(RunConfig { model, training })
    };
    parse().map_err(|e| ConfigError(e).into())
}

fn read_wav(path: &Path) -> anyhow::Result<AudioBuffer> {
    AudioBuffer::read_wav(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_model(config: &ModelConfig, path: &Path) -> anyhow::Result<Model> {
    checkpoint::load(config, path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn enhance(model: &Model, audio: &AudioBuffer, stream: bool) -> anyhow::Result<(AudioBuffer, PowerReport, f64)> {
    let start = Instant::now();
    let (out, acc) = if stream {
        let (out, _, acc) = enhance_streaming(model, audio)?;
        (out, acc)
    } else {
        let mut acc = model.new_accumulator();
        let out = model.enhance(audio, Some(&mut acc))?;
        (out, acc)
    };
    let elapsed = start.elapsed().as_secs_f64();
    let cfg = &model.config;
    let report = build_report(&model.topology(), &acc, audio.duration_secs(), cfg.latency_s(), &cfg.cost)?;
    Ok((out, report, elapsed))
}

/// JSON line written per epoch. Wall time is left out so a fixed seed gives
/// an identical log.
#[derive(Serialize)]
struct MetricsRecord {
    epoch: usize,
    steps: usize,
    train_loss: Option<f64>,
    heldout_si_snri: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn load_examples(manifest: &Path, stft: &Stft) -> anyhow::Result<Vec<Example>> {
    let records =
        datasynth::read_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    if records.is_empty() {
        bail!(ConfigError(format!("manifest {} lists no pairs", manifest.display())));
    }
    records
        .iter()
        .map(|r| Ok(Example::new(read_wav(&r.noisy)?, read_wav(&r.clean)?, stft)?))
        .collect()
}

fn train(
    config: Option<&Path>,
    data: &Path,
    output: &Path,
    epochs: Option<usize>,
    seed: Option<u64>,
    metrics: Option<PathBuf>,
) -> anyhow::Result<()> {
    let RunConfig { model: mcfg, mut training } = load_config(config)?;
    if let Some(e) = epochs {
        training.epochs = e;
    }
    if let Some(s) = seed {
        training.seed = s;
    }
    let stft = Stft::new(mcfg.stft)?;
    let examples = load_examples(data, &stft)?;
    let held = if examples.len() > 1 {
        ((examples.len() as f64 * training.holdout_fraction).ceil() as usize).min(examples.len() - 1)
    } else {
        0
    };
    let (train_set, heldout) = examples.split_at(examples.len() - held);
    let mut model = Model::new(mcfg, training.seed)?;

    let metrics = metrics.unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".metrics.jsonl");
        PathBuf::from(p)
    });
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&metrics).with_context(|| format!("creating {}", metrics.display()))?,
    );
    let mut write_err = None;
    trainer::train(&mut model, train_set, heldout, &training, |e| {
        eprintln!(
            "epoch {:>3}  steps {:>4}  loss {:>10.5}  held-out SI-SNRi {:>7.3} dB  ({:.1} s)",
            e.epoch, e.steps, e.train_loss, e.heldout_si_snri, e.seconds
        );
        let rec = MetricsRecord {
            epoch: e.epoch,
            steps: e.steps,
            train_loss: finite(e.train_loss),
            heldout_si_snri: finite(e.heldout_si_snri),
        };
        let line = serde_json::to_string(&rec).expect("metrics serialize");
        if let Err(err) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(err).with_context(|| format!("writing {}", metrics.display()));
    }
    checkpoint::save(&model, output).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {} and {}", output.display(), metrics.display());
    Ok(())
}

/// Pair-set description for `synthdata`. Without `sources_dir`/`noise_dir`
/// the built-in toy corpus is used.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SynthSpec {
    count: Option<usize>,
    out: Option<PathBuf>,
    sources_dir: Option<PathBuf>,
    noise_dir: Option<PathBuf>,
    mix: MixSpec,
    toy: ToyCorpusSpec,
}

fn synthdata(spec: Option<&Path>, output: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<()> {
    let mut s: SynthSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = seed {
        s.mix.seed = seed;
    }
    s.mix.validate()?;
    let out = output.or(s.out.clone()).ok_or_else(|| ConfigError("no output directory (--out)".into()))?;
    let (sources, noises) = match (&s.sources_dir, &s.noise_dir) {
        (Some(a), Some(b)) => (datasynth::load_wav_dir(a)?, datasynth::load_wav_dir(b)?),
        (None, None) => datasynth::toy_corpus(&s.toy),
        _ => bail!(ConfigError("give both sources_dir and noise_dir, or neither".into())),
    };
    let pairs = datasynth::synth_pairset(&sources, &noises, &s.mix, s.count.unwrap_or(64))?;
    let manifest = datasynth::write_pairset(&out, &pairs).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} pairs, manifest {}", pairs.len(), manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct ParamReport {
    modules: Vec<(String, usize)>,
    total: usize,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Enhance { model, config, input, output, stream, report, seed: _ } => {
            let cfg = load_config(config.as_deref())?.model;
            let model = load_model(&cfg, &model)?;
            let audio = read_wav(&input)?;
            let (out, rep, secs) = enhance(&model, &audio, stream)?;
            out.write_wav(&output).with_context(|| format!("writing {}", output.display()))?;
            eprintln!("enhanced {:.2} s of audio in {:.3} s (RTF {:.3})", audio.duration_secs(), secs, secs / audio.duration_secs());
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
        }
        Command::Train { config, data, output, epochs, seed, metrics } => {
            train(config.as_deref(), &data, &output, epochs, seed, metrics)?;
        }
        Command::Profile { model, config, input, report, seed: _ } => {
            let cfg = load_config(config.as_deref())?.model;
            let model = load_model(&cfg, &model)?;
            let audio = read_wav(&input)?;
            let (_, rep, _) = enhance(&model, &audio, false)?;
            print!("{}", rep.to_table());
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
        }
        Command::Gradcheck { config, seed, samples, eps, seconds } => {
            let cfg = load_config(config.as_deref())?.model;
            let stft = Stft::new(cfg.stft)?;
            let toy = ToyCorpusSpec { sources: 2, noises: 2, seconds: seconds.max(0.1), seed };
            let (src, noi) = datasynth::toy_corpus(&toy);
            let mix = MixSpec { clip_seconds: seconds, seed, ..Default::default() };
            let pair = datasynth::synth_pair(&src, &noi, &mix, 0)?;
            let ex = Example::new(pair.noisy, pair.clean, &stft)?;
            let model = Model::new(cfg, seed)?;
            let rep = trainer::grad_check(&model, &ex, &GradCheckOptions { eps, samples, seed, ..Default::default() })?;
            println!(
                "checked {} parameters ({} skipped near spike kinks), max relative error {:.3e}",
                rep.checked, rep.skipped, rep.max_rel_error
            );
            if rep.max_rel_error >= 1e-4 {
                bail!("gradient check failed: {:.3e} >= 1e-4", rep.max_rel_error);
            }
        }
        Command::Synthdata { spec, output, seed } => synthdata(spec.as_deref(), output, seed)?,
        Command::Params { config, json, seed } => {
            let cfg = load_config(config.as_deref())?.model;
            let model = Model::new(cfg, seed)?;
            let rep = ParamReport { modules: model.param_counts(), total: model.num_params() };
            if json {
                println!("{}", serde_json::to_string_pretty(&rep)?);
            } else {
                for (name, n) in &rep.modules {
                    println!("{name:<12}{n:>10}");
                }
                println!("{:<12}{:>10}", "total", rep.total);
            }
        }
        Command::Init { config, output, identity, seed } => {
            let cfg = load_config(config.as_deref())?.model;
            let model = if identity { Model::identity(cfg)? } else { Model::new(cfg, seed)? };
            checkpoint::save(&model, &output).with_context(|| format!("writing {}", output.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
