//! `posetok`: data generation, training, evaluation and a text chat.
//!
//! Exit codes: 0 success, 2 configuration or data error (including
//! vocabulary mismatch), 3 I/O error, 4 non-finite loss during training.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use posetok_core::data::{write_records, DatasetKind, Generator};
use posetok_core::eval::{evaluate, EvalOptions, Task};
use posetok_core::metrics::format_table;
use posetok_core::model::{content_hash, generate, Checkpoint, DecodeMode};
use posetok_core::train::{default_log_path, train_loop, Stage, TrainConfig, TrainOutputs};
use posetok_core::{ChatRecord, Error, ObservationSeq, PoseParams, Vocab};

#[derive(Parser)]
#[command(name = "posetok", version, about = "Pose-token language model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and print its record count and hash.
    GenData {
        #[arg(long)]
        kind: DatasetKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a base model or fine-tune adapters and the pose head.
    Train {
        #[arg(long)]
        stage: Stage,
        /// `key = value` configuration file; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        base_ckpt: Option<PathBuf>,
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Metrics log; defaults to the checkpoint path plus `.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides a configuration key, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: u64,
    },
    /// Decode a dataset greedily and report pose metrics.
    Eval {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report file, one JSON record.
        #[arg(long)]
        out: PathBuf,
        /// Fraction of observation vectors zeroed before decoding.
        #[arg(long, default_value_t = 0.0)]
        mask: f64,
        #[arg(long, default_value_t = 0)]
        mask_seed: u64,
        /// Also write the decoded answers and poses as JSON lines.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Skip training the retrieval model for pose-gen recall.
        #[arg(long)]
        no_recall: bool,
    },
    /// Line-based chat. `:quit` exits, `:obs FILE` loads an observation,
    /// `:noobs` drops it.
    Chat {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Append every emitted pose to this file.
        #[arg(long)]
        pose_out: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        max_new: usize,
        /// Sample with this seed instead of decoding greedily.
        #[arg(long)]
        sample_seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::NonFiniteLoss { .. } => 4,
        _ => 2,
    }
}

fn file_hash(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(content_hash(&bytes))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data(kind: DatasetKind, n: usize, seed: u64, out: &Path) -> Result<(), Error> {
    let records = Generator::default().generate(kind, n, seed)?;
    write_records(out, &records)?;
    println!("{} records {}", records.len(), file_hash(out)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    stage: Stage,
    config: Option<&Path>,
    data: &[PathBuf],
    base_ckpt: Option<&Path>,
    out_ckpt: &Path,
    log: Option<PathBuf>,
    overrides: &[String],
    seed: u64,
) -> Result<(), Error> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.optim.rng_seed = seed;
    cfg.apply_overrides(overrides)?;
    let base = match (stage, base_ckpt) {
        (Stage::Finetune, None) => return Err(Error::Config("finetune needs --base-ckpt".into())),
        (Stage::Base, Some(_)) => return Err(Error::Config("the base stage starts from scratch; drop --base-ckpt".into())),
        (_, Some(p)) => Some(Checkpoint::load(p)?),
        (_, None) => None,
    };
    let mut records: Vec<ChatRecord> = Vec::new();
    for p in data {
        records.extend(posetok_core::data::read_records(p)?);
    }
    let log = log.unwrap_or_else(|| default_log_path(out_ckpt));
    let outputs = TrainOutputs {
        checkpoint: Some(out_ckpt.to_path_buf()),
        log: Some(log.clone()),
    };
    let outcome = train_loop(stage, &records, &cfg, base.as_ref(), &Vocab::shipped(), &outputs)?;
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "step {} ce {:.5} pose_l1 {:.5} total {:.5}",
            last.step, last.ce, last.pose_l1, last.total
        );
    }
    println!("checkpoint {} {}", out_ckpt.display(), file_hash(out_ckpt)?);
    println!("log {} {}", log.display(), file_hash(&log)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    task: Task,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    mask: f64,
    mask_seed: u64,
    predictions: Option<&Path>,
    no_recall: bool,
) -> Result<(), Error> {
    if !(0.0..=1.0).contains(&mask) {
        return Err(Error::Config(format!("--mask {mask} outside [0, 1]")));
    }
    let ckpt = Checkpoint::load(ckpt)?;
    let records = posetok_core::data::read_records(data)?;
    let opts = EvalOptions {
        mask_fraction: mask,
        mask_seed,
        with_recall: !no_recall,
        ..EvalOptions::default()
    };
    let result = evaluate(&ckpt, task, &records, &opts)?;
    write_text(out, &format!("{}\n", result.report.to_json_line()))?;
    if let Some(p) = predictions {
        let mut text = String::new();
        for (answer, pose) in result.answers.iter().zip(&result.poses) {
            let v = serde_json::json!({ "answer": answer, "pose": pose.as_ref().map(PoseParams::to_6d) });
            text.push_str(&v.to_string());
            text.push('\n');
        }
        write_text(p, &text)?;
    }
    print!("{}", format_table(std::slice::from_ref(&result.report)));
    println!("report {} {}", out.display(), file_hash(out)?);
    Ok(())
}

/// Accepts a bare observation or a chat record carrying one.
fn load_observation(path: &Path) -> Result<ObservationSeq, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let obs = match serde_json::from_str::<ObservationSeq>(line) {
        Ok(o) => o,
        Err(_) => ChatRecord::from_json_line(line)?
            .observation
            .ok_or_else(|| Error::InvalidRecord("record has no observation".into()))?,
    };
    obs.validate()?;
    Ok(obs)
}

fn print_pose(out: &mut impl Write, pose: &PoseParams) -> io::Result<()> {
    writeln!(out, "pose (24 joints x 6D):")?;
    for (j, r) in pose.to_6d().chunks(6).enumerate() {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:>8.4}")).collect();
        writeln!(out, "  {j:>2} {}", cells.join(" "))?;
    }
    Ok(())
}

fn chat(
    ckpt: &Path,
    obs: Option<&Path>,
    pose_out: Option<&Path>,
    max_new: usize,
    mode: DecodeMode,
) -> Result<(), Error> {
    let ckpt = Checkpoint::load(ckpt)?;
    let mut observation = None;
    if let Some(p) = obs {
        match load_observation(p) {
            Ok(o) => observation = Some(o),
            Err(e) => eprintln!("observation not loaded: {e}"),
        }
    }
    let mut pose_file = match pose_out {
        Some(p) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let io_err = |e| Error::io("<stdout>", e);
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == ":quit" {
            break;
        }
        if line == ":noobs" {
            observation = None;
            continue;
        }
        if let Some(p) = line.strip_prefix(":obs ") {
            match load_observation(Path::new(p.trim())) {
                Ok(o) => observation = Some(o),
                Err(e) => eprintln!("observation not loaded: {e}"),
            }
            continue;
        }
        let prompt = ckpt.vocab.prompt_ids(line);
        let reply = match generate(&ckpt.weights, observation.as_ref(), &prompt, max_new, mode) {
            Ok(g) => g,
            Err(e) => {
                eprintln!("{e}");
                continue;
            }
        };
        writeln!(out, "{}", ckpt.vocab.decode(&reply.tokens)).map_err(io_err)?;
        if let Some(pose) = &reply.pose {
            print_pose(&mut out, pose).map_err(io_err)?;
            if let (Some(f), Some(p)) = (pose_file.as_mut(), pose_out) {
                writeln!(f, "{}", posetok_core::data::record::poses_to_text(std::slice::from_ref(pose)).trim_end())
                    .map_err(|e| Error::io(p, e))?;
            }
        }
        out.flush().map_err(io_err)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData { kind, n, seed, out } => gen_data(kind, n, seed, &out),
        Command::Train {
            stage,
            config,
            data,
            base_ckpt,
            out_ckpt,
            log,
            overrides,
            seed,
        } => train(
            stage,
            config.as_deref(),
            &data,
            base_ckpt.as_deref(),
            &out_ckpt,
            log,
            &overrides,
            seed,
        ),
        Command::Eval {
            task,
            ckpt,
            data,
            out,
            mask,
            mask_seed,
            predictions,
            no_recall,
        } => eval(task, &ckpt, &data, &out, mask, mask_seed, predictions.as_deref(), no_recall),
        Command::Chat {
            ckpt,
            obs,
            pose_out,
            max_new,
            sample_seed,
            temperature,
        } => {
            let mode = match sample_seed {
                Some(seed) => DecodeMode::Sampled { seed, temperature },
                None => DecodeMode::Greedy,
            };
            chat(&ckpt, obs.as_deref(), pose_out.as_deref(), max_new, mode)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
