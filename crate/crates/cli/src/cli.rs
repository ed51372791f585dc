use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use midi_draw_core::contour::{ContourComponents, SERIES_LEN};
use midi_draw_core::dataset::{
    generate_dataset, load_dataset, save_dataset, PitchVocabulary, DEFAULT_TAU,
};
use midi_draw_core::generation::{
    evaluate, generate, GenerationRequest, DEFAULT_CANDIDATES, DEFAULT_TEMPERATURE,
};
use midi_draw_core::midi::{write_midi, MidiSettings};
use midi_draw_core::model::{load_checkpoint, save_checkpoint, train_with_progress, Hyperparams};

use crate::service::{self, ServiceConfig, DEFAULT_MAX_CANDIDATES, DEFAULT_PORT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "midi-draw",
    version,
    about = "Draw a contour, get a melody",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic melody corpus from the interval-decay Markov chain.
    Dataset(DatasetArgs),
    /// Train the conditional model on a corpus file.
    Train(TrainArgs),
    /// Generate one melody for a target contour.
    Generate(GenerateArgs),
    /// Measure contour fit on random targets.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = SERIES_LEN)]
    len: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Three comma-separated contour components, e.g. "1.5,-0.8,0.3".
    #[arg(long, allow_hyphen_values = true)]
    components: String,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    candidates: usize,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the chosen melody as a MIDI file.
    #[arg(long)]
    midi: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    candidates: usize,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Checkpoint to serve; without one, /api/generate answers 503.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_CANDIDATES)]
    max_candidates: usize,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            }
        }
    };
    let outcome = match cli.command {
        Command::Dataset(a) => dataset(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn dataset(a: DatasetArgs) -> Result<(), Failure> {
    if a.len != SERIES_LEN {
        return Err(Failure::Usage(format!(
            "--len must be {SERIES_LEN}, got {}",
            a.len
        )));
    }
    let d = generate_dataset(PitchVocabulary::default(), a.tau, a.n, a.seed).map_err(runtime)?;
    save_dataset(&d, &a.out).map_err(runtime)?;
    println!("wrote {} sequences to {}", d.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let data = load_dataset(&a.data).map_err(runtime)?;
    let h = Hyperparams {
        epochs: a.epochs,
        batch: a.batch,
        seed: a.seed,
        ..Default::default()
    };
    h.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (params, _) = train_with_progress(&data, &h, |epoch, l| {
        println!(
            "epoch {:>3}  total {:.6}  recon {:.6}  kl {:.6}",
            epoch + 1,
            l.total,
            l.recon,
            l.kl
        );
    })
    .map_err(runtime)?;
    save_checkpoint(&params, &a.out).map_err(runtime)?;
    println!("saved checkpoint to {}", a.out.display());
    Ok(())
}

fn parse_components(s: &str) -> Result<ContourComponents, Failure> {
    let values: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("--components: {e}")))?;
    ContourComponents::from_slice(&values).map_err(|e| Failure::Usage(format!("--components: {e}")))
}

fn generate_cmd(a: GenerateArgs) -> Result<(), Failure> {
    let target = parse_components(&a.components)?;
    let req = GenerationRequest {
        target,
        n_candidates: a.candidates,
        temperature: a.temperature,
        seed: a.seed,
    };
    req.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let params = load_checkpoint(&a.model).map_err(runtime)?;
    let res = generate(&params, &req).map_err(runtime)?;
    let pitches: Vec<String> = res
        .best
        .midi_pitches(&params.vocab)
        .iter()
        .map(|p| p.to_string())
        .collect();
    println!("pitches {}", pitches.join(" "));
    println!("fit_mse {:.6}", res.fit_mse);
    if let Some(path) = a.midi {
        let bytes =
            write_midi(&res.best, &params.vocab, &MidiSettings::default()).map_err(runtime)?;
        fs::write(&path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    if a.trials == 0 || a.candidates == 0 {
        return Err(Failure::Usage(
            "--trials and --candidates must be positive".into(),
        ));
    }
    let params = load_checkpoint(&a.model).map_err(runtime)?;
    let s = evaluate(&params, a.trials, a.candidates, a.temperature, a.seed).map_err(runtime)?;
    println!("mean_fit_mse {:.6}", s.mean_fit_mse);
    println!("mean_correlation {:.6}", s.mean_correlation);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let config = ServiceConfig {
        port: a.port,
        checkpoint_path: a.model,
        static_dir: a.static_dir,
        max_candidates: a.max_candidates,
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let model = match &config.checkpoint_path {
        Some(p) => Some(load_checkpoint(p).map_err(runtime)?),
        None => None,
    };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(service::serve(config, model)).map_err(runtime)
}
