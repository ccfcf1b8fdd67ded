//! Command-line driver: corpus preparation, training, the ordering games,
//! and gradient verification.
//!
//! Exit codes: 0 on success, 1 for usage/config errors, 2 for data errors.
//! Machine-readable results go to stdout (JSON, one object or one record per
//! line); progress and per-song detail go to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use puzseq_core::audio::{load_wav, log_mel, resample, stft_magnitude, SAMPLE_RATE};
use puzseq_core::corpus::{
    boundaries_from_section_csv, list_song_ids, split_corpus, write_boundaries, write_mel,
    BoundaryList,
};
use puzseq_core::eval::{
    build_train_data, eval_puzzle_cache, eval_sequencing, export_embeddings, stats_from_cache,
    Segmentation,
};
use puzseq_core::medley::{order_medley, render_medley, MedleyJob};
use puzseq_core::models::verify::check_all;
use puzseq_core::models::{load_model, save_model, train, LoadedModel, ModelKind};
use puzseq_core::solver::OrderingReport;
use puzseq_core::synth::{write_corpus, SynthParams};
use puzseq_core::{Error, Model, Result, TrainConfig};

/// Presentation shuffles inside the ordering games are seeded, so repeated
/// evaluations of the same cache are reproducible.
const SHUFFLE_SEED: u64 = 0;

/// Every jigsaw game cuts songs into one of the published fragment counts.
const PUZZLE_SIZES: [usize; 4] = [3, 4, 6, 8];

#[derive(Parser)]
#[command(name = "puzseq", version, about = "Self-supervised fragment-ordering toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a spectrogram cache from a directory of WAV files.
    Preprocess {
        /// Directory of input `.wav` files.
        #[arg(long = "in")]
        input: PathBuf,
        /// Cache directory to create or extend.
        #[arg(long)]
        out: PathBuf,
        /// Directory of section annotations (`<song>.json` cut lists or
        /// `<song>.csv` section tables) to convert into cached boundaries.
        #[arg(long)]
        boundaries: Option<PathBuf>,
    },
    /// Generate a synthetic corpus into a spectrogram cache.
    Synth {
        /// Number of songs to generate.
        #[arg(long)]
        songs: usize,
        /// Corpus seed; song content is a pure function of (seed, index).
        #[arg(long)]
        seed: u64,
        /// Cache directory to create or extend.
        #[arg(long)]
        out: PathBuf,
        /// Render audio and run it through the full front end instead of
        /// generating spectrograms directly; keeps the WAV beside the cache.
        #[arg(long)]
        wav: bool,
    },
    /// Train an ordering model on a cached corpus; prints one JSON epoch
    /// record per line.
    Train {
        /// Spectrogram cache produced by `preprocess` or `synth`.
        #[arg(long)]
        cache: PathBuf,
        /// Architecture: `sen` (similarity-matrix classifier) or `sn`
        /// (pooled-feature baseline).
        #[arg(long)]
        model: String,
        /// JSON training config; missing fields take defaults.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reassemble shuffled fragments of every cached song; prints
    /// `{"pa": ..., "ga": ...}`.
    EvalPuzzle {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Fragments per song: 3, 4, 6, or 8.
        #[arg(long)]
        n: usize,
        /// `fixed` equal-length cuts or `boundary` annotation-informed cuts.
        #[arg(long, default_value = "fixed")]
        segmentation: String,
    },
    /// Reorder labeled sections of annotated songs; prints
    /// `{"pa": ..., "ga": ...}`.
    EvalSequencing {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of `<song>.csv` section tables.
        #[arg(long)]
        sections: PathBuf,
        /// Spectrogram cache holding the annotated songs.
        #[arg(long)]
        cache: PathBuf,
    },
    /// Order the clips of a medley job; prints the predicted play order.
    Medley {
        #[arg(long)]
        ckpt: PathBuf,
        /// JSON job: clip files with optional trim points and an optional
        /// reference order.
        #[arg(long)]
        job: PathBuf,
        /// Write the ordered, cross-faded medley as a WAV file.
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// Check every analytic gradient against finite differences.
    Gradcheck,
    /// Write pair embeddings for a cached corpus as CSV.
    ExportEmbeddings {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// CSV file to write (`class,dim0..dim1023`).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; only real parse
            // failures are usage errors.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Config(_) => 1,
                _ => 2,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess { input, out, boundaries } => {
            preprocess(&input, &out, boundaries.as_deref())
        }
        Command::Synth { songs, seed, out, wav } => synth(songs, seed, &out, wav),
        Command::Train { cache, model, config, out } => train_cmd(&cache, &model, &config, &out),
        Command::EvalPuzzle { ckpt, cache, n, segmentation } => {
            eval_puzzle_cmd(&ckpt, &cache, n, &segmentation)
        }
        Command::EvalSequencing { ckpt, sections, cache } => {
            eval_sequencing_cmd(&ckpt, &sections, &cache)
        }
        Command::Medley { ckpt, job, render } => medley_cmd(&ckpt, &job, render.as_deref()),
        Command::Gradcheck => gradcheck_cmd(),
        Command::ExportEmbeddings { ckpt, cache, out } => {
            let LoadedModel { model, stats, .. } = load_model(&ckpt)?;
            let ids = nonempty_ids(&cache)?;
            let rows = export_embeddings(&model, &stats, &cache, &ids, &out)?;
            println!("{}", json!({ "rows": rows, "out": out }));
            Ok(())
        }
    }
}

/// Sorted `.wav` files directly inside `dir`.
fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("wav") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .wav files in {}", dir.display())));
    }
    Ok(files)
}

fn nonempty_ids(cache: &Path) -> Result<Vec<String>> {
    let ids = list_song_ids(cache)?;
    if ids.is_empty() {
        return Err(Error::Data(format!("cache {} holds no songs", cache.display())));
    }
    Ok(ids)
}

/// Boundary annotations for one song: a `<stem>.json` cut list wins over a
/// `<stem>.csv` section table; neither file means no boundaries.
fn song_boundaries(dir: &Path, stem: &str) -> Result<Option<BoundaryList>> {
    let json = dir.join(format!("{stem}.json"));
    if json.is_file() {
        let bounds = BoundaryList::read_json(&json)?;
        if bounds.song_id != stem {
            return Err(Error::Data(format!(
                "{} annotates song {:?}, not {stem:?}",
                json.display(),
                bounds.song_id
            )));
        }
        return Ok(Some(bounds));
    }
    let csv = dir.join(format!("{stem}.csv"));
    if csv.is_file() {
        return Ok(Some(boundaries_from_section_csv(&csv, stem)?));
    }
    Ok(None)
}

fn preprocess(input: &Path, out: &Path, boundaries: Option<&Path>) -> Result<()> {
    let files = wav_files(input)?;
    let written: Result<Vec<bool>> = files
        .par_iter()
        .map(|path| {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Data(format!("unusable file name {}", path.display())))?;
            let clip = resample(&load_wav(path)?, SAMPLE_RATE)?;
            let mel = log_mel(&stft_magnitude(&clip)?)?;
            let file_name = path.file_name().and_then(|s| s.to_str()).unwrap_or(stem);
            write_mel(out, stem, &mel, file_name)?;
            let bounds = match boundaries {
                Some(dir) => song_boundaries(dir, stem)?,
                None => None,
            };
            if let Some(b) = &bounds {
                b.validate(mel.frames as f64 / mel.frame_rate as f64)?;
                write_boundaries(out, b)?;
            }
            eprintln!("cached {stem} ({} frames)", mel.frames);
            Ok(bounds.is_some())
        })
        .collect();
    let written = written?;
    println!(
        "{}",
        json!({ "songs": written.len(), "boundaries": written.iter().filter(|b| **b).count() })
    );
    Ok(())
}

fn synth(songs: usize, seed: u64, out: &Path, wav: bool) -> Result<()> {
    let params = SynthParams { seed, n_songs: songs, ..SynthParams::default() };
    write_corpus(&params, out, wav)?;
    println!("{}", json!({ "songs": songs, "wav": wav }));
    Ok(())
}

fn train_cmd(cache: &Path, model: &str, config: &Path, out: &Path) -> Result<()> {
    let kind: ModelKind = model.parse()?;
    let cfg: TrainConfig = serde_json::from_str(&std::fs::read_to_string(config)?)?;
    cfg.validate()?;

    let ids = nonempty_ids(cache)?;
    let splits = split_corpus(&ids, cfg.seed, 0.8, 0.1)?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(Error::Data(format!(
            "{} songs split into {} train / {} validation; both must be non-empty",
            ids.len(),
            splits.train.len(),
            splits.validation.len()
        )));
    }
    eprintln!(
        "{} songs: {} train, {} validation, {} held out",
        ids.len(),
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );

    // Normalization statistics come from the training split alone.
    let stats = stats_from_cache(cache, &splits.train)?;
    let train_data = build_train_data(cache, &splits.train, &stats, 3, &cfg.negatives)?;
    let val_data = build_train_data(cache, &splits.validation, &stats, 3, &cfg.negatives)?;
    eprintln!("{} training pairs, {} validation pairs", train_data.items.len(), val_data.items.len());

    let outcome = train(Model::init(kind, &cfg)?, &cfg, &train_data, &val_data, |rec| {
        println!("{}", serde_json::to_string(rec).expect("epoch records serialize"));
    })?;

    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let meta = json!({
        "best_epoch": outcome.best_epoch,
        "best_val_pa": outcome.best_val_pa,
        "threads": threads,
        "train_songs": splits.train.len(),
        "val_songs": splits.validation.len(),
    });
    save_model(out, &outcome.model, &stats, &cfg, meta)?;
    eprintln!(
        "saved {} (best epoch {}, validation pair accuracy {:.4})",
        out.display(),
        outcome.best_epoch,
        outcome.best_val_pa
    );
    Ok(())
}

fn report_lines(reports: &[OrderingReport]) {
    for r in reports {
        eprintln!("{}: pa={:.4} ga={} perm={:?}", r.song_id, r.pa, r.ga, r.perm);
    }
}

fn eval_puzzle_cmd(ckpt: &Path, cache: &Path, n: usize, segmentation: &str) -> Result<()> {
    if !PUZZLE_SIZES.contains(&n) {
        return Err(Error::Config(format!("n must be one of {PUZZLE_SIZES:?}, got {n}")));
    }
    let seg: Segmentation = segmentation.parse()?;
    let LoadedModel { model, stats, .. } = load_model(ckpt)?;
    let ids = nonempty_ids(cache)?;
    let (reports, summary) =
        eval_puzzle_cache(&model, &stats, cache, &ids, n, seg, SHUFFLE_SEED)?;
    report_lines(&reports);
    println!("{}", json!({ "pa": summary.mean_pa, "ga": summary.mean_ga }));
    Ok(())
}

fn eval_sequencing_cmd(ckpt: &Path, sections: &Path, cache: &Path) -> Result<()> {
    let LoadedModel { model, stats, .. } = load_model(ckpt)?;
    let (reports, summary) = eval_sequencing(&model, &stats, cache, sections, SHUFFLE_SEED)?;
    report_lines(&reports);
    println!("{}", json!({ "pa": summary.mean_pa, "ga": summary.mean_ga }));
    Ok(())
}

fn medley_cmd(ckpt: &Path, job: &Path, render: Option<&Path>) -> Result<()> {
    let LoadedModel { model, stats, .. } = load_model(ckpt)?;
    let job = MedleyJob::read_json(job)?;
    let (outcome, clips) = order_medley(&model, &stats, &job)?;
    if let Some(path) = render {
        let rendered = render_medley(&clips, &outcome.perm, path)?;
        eprintln!("rendered {} ({:.2} s)", path.display(), rendered.duration_sec());
    }
    println!("{}", serde_json::to_string(&outcome)?);
    Ok(())
}

fn gradcheck_cmd() -> Result<()> {
    let outcome = check_all()?;
    for report in &outcome.reports {
        let verdict = if report.passes(outcome.tol) { "pass" } else { "FAIL" };
        println!("{verdict}  {report}");
    }
    if !outcome.all_pass() {
        return Err(Error::Data(format!(
            "gradient checks exceeded the {:.0e} relative-error tolerance",
            outcome.tol
        )));
    }
    println!("all {} gradient checks pass (tol {:.0e})", outcome.reports.len(), outcome.tol);
    Ok(())
}
