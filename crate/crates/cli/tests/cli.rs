//! End-to-end tests of the command-line surface: exit codes, output
//! contracts, and rerun determinism. A single small checkpoint is trained
//! once and shared by every test that needs one.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::OnceLock;

use puzseq_core::audio::{load_wav, write_wav, SAMPLE_RATE};
use puzseq_core::synth::{gen_wav_song, write_corpus, SynthParams};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puzseq")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Fixture {
    dir: TempDir,
    cache: PathBuf,
    ckpt: PathBuf,
}

fn path(p: &PathBuf) -> &str {
    p.to_str().unwrap()
}

/// Six short synthetic songs and a two-epoch checkpoint trained through the
/// real `train` subcommand.
fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cache = dir.path().join("cache");
        let params =
            SynthParams { seed: 60, n_songs: 6, duration_sec: 8.6, ..SynthParams::default() };
        write_corpus(&params, &cache, false).unwrap();

        let config = dir.path().join("train.json");
        std::fs::write(&config, r#"{"epochs": 2, "batch_size": 8, "lr": 0.002}"#).unwrap();
        let ckpt = dir.path().join("model.ckpt");
        let out = run(&[
            "train",
            "--cache",
            path(&cache),
            "--model",
            "sen",
            "--config",
            path(&config),
            "--out",
            path(&ckpt),
        ]);
        assert_eq!(code(&out), 0, "train failed: {}", stderr_str(&out));
        assert!(ckpt.is_file());

        // stdout is one JSON record per epoch, nothing else.
        let records: Vec<serde_json::Value> =
            stdout_str(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), 2);
        for (i, rec) in records.iter().enumerate() {
            assert_eq!(rec["epoch"], i as u64 + 1);
            assert!(rec["train_loss"].as_f64().unwrap().is_finite());
            let pa = rec["val_pa"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&pa), "val_pa {pa}");
        }
        Fixture { dir, cache, ckpt }
    })
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["train", "--cache", "x"])), 1); // missing flags
    // Bad enum-like values are config errors, checked before any i/o.
    assert_eq!(code(&run(&["eval-puzzle", "--ckpt", "x", "--cache", "y", "--n", "5"])), 1);
    let out = run(&[
        "eval-puzzle", "--ckpt", "x", "--cache", "y", "--n", "3", "--segmentation", "smooth",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(code(&run(&["synth", "--songs", "0", "--seed", "1", "--out", "z"])), 1);
}

#[test]
fn missing_or_empty_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, "{}").unwrap();

    let out = run(&["preprocess", "--in", empty.to_str().unwrap(), "--out", "o"]);
    assert_eq!(code(&out), 2, "{}", stderr_str(&out));

    let out = run(&[
        "train",
        "--cache",
        empty.to_str().unwrap(),
        "--model",
        "sen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "o.ckpt",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr_str(&out));

    let out = run(&["medley", "--ckpt", "missing.ckpt", "--job", "missing.json"]);
    assert_eq!(code(&out), 2, "{}", stderr_str(&out));
}

#[test]
fn synth_caches_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = run(&["synth", "--songs", "2", "--seed", "5", "--out", path(out)]);
        assert_eq!(code(&res), 0, "{}", stderr_str(&res));
        let line: serde_json::Value = serde_json::from_str(stdout_str(&res).trim()).unwrap();
        assert_eq!(line["songs"], 2);
    }
    for name in ["synth00000.mel", "synth00001.mel"] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        let bytes_b = std::fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical synth runs");
    }
}

#[test]
fn puzzle_eval_prints_the_metrics_and_reruns_match() {
    let fix = fixture();
    let args = [
        "eval-puzzle",
        "--ckpt",
        path(&fix.ckpt),
        "--cache",
        path(&fix.cache),
        "--n",
        "3",
    ];
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let json: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    for key in ["pa", "ga"] {
        let v = json[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    // Per-song detail goes to stderr, one line per cached song.
    assert_eq!(stderr_str(&out).lines().filter(|l| l.contains("perm=")).count(), 6);
    let again = run(&args);
    assert_eq!(stdout_str(&out), stdout_str(&again));
}

#[test]
fn sequencing_eval_reads_section_tables() {
    let fix = fixture();
    let sections = fix.dir.path().join("sections");
    std::fs::create_dir_all(&sections).unwrap();
    std::fs::write(
        sections.join("synth00000.csv"),
        "start_sec,end_sec,label\n0.0,2.8,intro\n2.8,5.6,verse\n5.6,8.4,outro\n",
    )
    .unwrap();
    let out = run(&[
        "eval-sequencing",
        "--ckpt",
        path(&fix.ckpt),
        "--sections",
        path(&sections),
        "--cache",
        path(&fix.cache),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let json: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert!(json["pa"].is_f64() && json["ga"].is_f64());
}

#[test]
fn preprocess_builds_a_cache_that_boundary_eval_accepts() {
    let fix = fixture();
    let dir = TempDir::new().unwrap();
    let (wavs, notes) = (dir.path().join("wavs"), dir.path().join("notes"));
    std::fs::create_dir_all(&wavs).unwrap();
    std::fs::create_dir_all(&notes).unwrap();
    let params = SynthParams { seed: 71, n_songs: 2, duration_sec: 8.6, ..SynthParams::default() };
    for (i, stem) in ["songA", "songB"].iter().enumerate() {
        write_wav(&wavs.join(format!("{stem}.wav")), &gen_wav_song(&params, i).unwrap()).unwrap();
    }
    // One song annotated as a section table, the other as a JSON cut list.
    std::fs::write(notes.join("songA.csv"), "0.0,2.8,a\n2.8,5.6,b\n5.6,8.4,c\n").unwrap();
    std::fs::write(
        notes.join("songB.json"),
        r#"{"song_id": "songB", "boundaries_sec": [3.0, 6.0]}"#,
    )
    .unwrap();

    let cache = dir.path().join("cache");
    let out = run(&[
        "preprocess",
        "--in",
        path(&wavs),
        "--out",
        path(&cache),
        "--boundaries",
        path(&notes),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let json: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert_eq!(json["songs"], 2);
    assert_eq!(json["boundaries"], 2);
    assert!(cache.join("songA.mel").is_file());
    assert!(cache.join("songB.boundaries.json").is_file());

    let out = run(&[
        "eval-puzzle",
        "--ckpt",
        path(&fix.ckpt),
        "--cache",
        path(&cache),
        "--n",
        "3",
        "--segmentation",
        "boundary",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));

    // A cache without boundary files rejects boundary segmentation.
    let out = run(&[
        "eval-puzzle",
        "--ckpt",
        path(&fix.ckpt),
        "--cache",
        path(&fix.cache),
        "--n",
        "3",
        "--segmentation",
        "boundary",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn medley_orders_clips_and_renders_audio() {
    let fix = fixture();
    let dir = TempDir::new().unwrap();
    let params = SynthParams { seed: 80, n_songs: 2, duration_sec: 8.6, ..SynthParams::default() };
    let (a, b) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    let clip_a = gen_wav_song(&params, 0).unwrap();
    let clip_b = gen_wav_song(&params, 1).unwrap();
    write_wav(&a, &clip_a).unwrap();
    write_wav(&b, &clip_b).unwrap();
    let job = dir.path().join("job.json");
    std::fs::write(
        &job,
        serde_json::json!({
            "clips": [{"file": a}, {"file": b}],
            "reference": [0, 1],
        })
        .to_string(),
    )
    .unwrap();

    let rendered = dir.path().join("medley.wav");
    let out = run(&[
        "medley",
        "--ckpt",
        path(&fix.ckpt),
        "--job",
        path(&job),
        "--render",
        path(&rendered),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let json: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    let perm: Vec<u64> =
        json["perm"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let mut sorted = perm.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1]);
    assert!(json["fitness"].is_f64());
    assert!(json["pa"].is_f64() && json["ga"].is_f64());

    let medley = load_wav(&rendered).unwrap();
    assert_eq!(medley.sample_rate(), SAMPLE_RATE);
    assert_eq!(medley.len(), clip_a.len() + clip_b.len());
}

#[test]
fn embeddings_export_as_csv() {
    let fix = fixture();
    let out_csv = fix.dir.path().join("embed.csv");
    let out = run(&[
        "export-embeddings",
        "--ckpt",
        path(&fix.ckpt),
        "--cache",
        path(&fix.cache),
        "--out",
        path(&out_csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let json: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert_eq!(json["rows"], 36); // 6 songs x 6 pairs at n=3
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("class,dim0,"));
    assert_eq!(lines.count(), 36);
}

#[test]
fn gradcheck_reports_every_layer_and_passes() {
    let out = run(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stderr_str(&out));
    let text = stdout_str(&out);
    let lines: Vec<&str> = text.lines().collect();
    // 12 layer checks, 2 whole-model checks, one summary line.
    assert_eq!(lines.len(), 15, "{text}");
    assert!(lines[..14].iter().all(|l| l.starts_with("pass")), "{text}");
    assert!(lines[14].contains("all 14 gradient checks pass"), "{text}");
}
