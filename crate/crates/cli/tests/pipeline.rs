//! End to end on a tiny corpus through the binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use asv_vote::corpus_io::{read_csv, ManifestRow};
use asv_vote_core::metrics::{far, frr};
use serde::Deserialize;

const TINY: &str = r#"
seed = 3
[corpus]
n_speakers = 3
utterances_per_speaker = 4
duration_secs = 0.5
n_target_trials = 8
n_nontarget_trials = 8
dev_trials = 8
[train]
epochs = 2
batch_size = 4
crop_secs = 0.4
[attack]
knowledge = ["limited"]
epsilons = [1.0, 5.0, 10.0]
n_iters = [2]
[defense]
sigmas = [30.0]
k_votes = [2]
[[defense.filters]]
kind = "median"
kernel_size = 3
gaussian_std = 1.0
[sweep_votes]
n_iters = 2
k_values = [5, 0, 1]
[sweep_iters]
k_votes = 1
n_values = [2, 1]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asv-vote"))
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    let output = bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn stdout_hash(output: &Output) -> String {
    let text = String::from_utf8(output.stdout.clone()).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix("manifest sha256 "))
        .unwrap()
        .to_string()
}

struct Tiny {
    _dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn tiny_trained() -> Tiny {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let out = dir.path().join("out");
    run(&config, &out, &["gen-corpus"]);
    run(&config, &out, &["train"]);
    Tiny { _dir: dir, config, out }
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn corpus_generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let a = stdout_hash(&run(&config, &dir.path().join("a"), &["gen-corpus"]));
    let b = stdout_hash(&run(&config, &dir.path().join("b"), &["gen-corpus"]));
    let c = stdout_hash(&run(&config, &dir.path().join("c"), &["gen-corpus", "--seed", "4"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 64);

    let corpus = dir.path().join("a/corpus");
    let manifest: Vec<ManifestRow> = read_csv(&corpus.join("manifest.csv"), "test").unwrap();
    assert_eq!(manifest.len(), 12);
    assert_eq!(std::fs::read_dir(corpus.join("wav")).unwrap().count(), 12);
    assert_eq!(lines(&corpus.join("manifest.csv"))[0], "utterance_id,speaker_id,path,duration,seed");
    let trials = lines(&corpus.join("trials.csv"));
    assert_eq!(trials[0], "trial_id,enroll_id,test_id,is_target,partition");
    assert_eq!(trials.len(), 17);
    assert_eq!(trials.iter().filter(|l| l.ends_with(",dev")).count(), 8);
}

#[test]
fn default_desk_corpus_has_two_hundred_utterances() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin().arg("gen-corpus").arg("--out").arg(dir.path()).output().unwrap();
    assert!(output.status.success());
    assert_eq!(std::fs::read_dir(dir.path().join("corpus/wav")).unwrap().count(), 200);
}

#[test]
fn unwritable_output_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, b"file").unwrap();
    let out = blocker.join("sub");
    let output = bin().arg("gen-corpus").arg("--out").arg(&out).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("gen-corpus"), "{stderr}");
    assert!(stderr.contains(&*blocker.to_string_lossy()), "{stderr}");
}

#[test]
fn missing_inputs_fail_naming_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["train", "evaluate", "sweep-votes", "sweep-iters"] {
        let output = bin().arg(cmd).arg("--out").arg(dir.path()).output().unwrap();
        assert!(!output.status.success(), "{cmd}");
        let stderr = String::from_utf8_lossy(&output.stderr);
        assert!(stderr.contains("missing input"), "{cmd}: {stderr}");
        assert!(stderr.contains("manifest.csv"), "{cmd}: {stderr}");
    }
}

#[derive(Debug, Deserialize)]
struct Report {
    attack_kind: String,
    epsilon: Option<f64>,
    defense_kind: String,
    k_votes: Option<usize>,
    far: f64,
    frr: f64,
    n_trials: usize,
    wall_time: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ScoreDump {
    is_target: bool,
    partition: String,
    score: f64,
}

#[test]
fn full_pipeline_on_tiny_corpus() {
    let t = tiny_trained();
    let log = lines(&t.out.join("train_log.csv"));
    assert_eq!(log[0], "epoch,loss,learning_rate,dev_eer");
    assert_eq!(log.len(), 3);
    assert!(t.out.join("model.ckpt").exists());

    // Grid: (none + 3 ε) × (none + 1 vote + 1 filter).
    run(&t.config, &t.out, &["evaluate"]);
    assert_eq!(
        lines(&t.out.join("report.csv"))[0],
        "attack_kind,epsilon,n_iters,defense_kind,sigma,k_votes,far,frr,n_trials,wall_time"
    );
    let rows: Vec<Report> = read_csv(&t.out.join("report.csv"), "test").unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.n_trials == 8 && r.wall_time.is_some()));
    assert_eq!(rows[0].attack_kind, "none");
    assert_eq!(rows[0].defense_kind, "none");
    assert_eq!(rows[3].attack_kind, "limited");
    assert_eq!(rows[3].epsilon, Some(1.0));
    assert_eq!(rows[4].defense_kind, "vote");
    assert_eq!(rows[4].k_votes, Some(2));
    assert_eq!(rows[5].defense_kind, "median");

    // The no-attack/no-defense row is the metrics of the dumped raw scores
    // at the dev-calibrated threshold.
    let scores: Vec<ScoreDump> = read_csv(&t.out.join("scores.csv"), "test").unwrap();
    assert_eq!(scores.len(), 16);
    let side = |p: &str, target: bool| -> Vec<f64> {
        scores.iter().filter(|s| s.partition == p && s.is_target == target).map(|s| s.score).collect()
    };
    let th = asv_vote_core::metrics::calibrate_threshold(&side("dev", true), &side("dev", false)).unwrap();
    assert_eq!(rows[0].far, far(&side("eval", false), th.tau).unwrap());
    assert_eq!(rows[0].frr, frr(&side("eval", true), th.tau).unwrap());

    run(&t.config, &t.out, &["sweep-votes"]);
    let sv = lines(&t.out.join("sweep_votes.csv"));
    assert_eq!(
        sv[0],
        "k_votes,sigma,epsilon,n_iters,genuine_far,genuine_frr,adversarial_far,adversarial_frr,n_trials,wall_time"
    );
    let ks: Vec<&str> = sv[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, ["0", "1", "5"]);
    let k0: Vec<&str> = sv[1].split(',').collect();
    assert_eq!(k0[4].parse::<f64>().unwrap(), rows[0].far);
    assert_eq!(k0[5].parse::<f64>().unwrap(), rows[0].frr);

    run(&t.config, &t.out, &["sweep-iters"]);
    let si = lines(&t.out.join("sweep_iters.csv"));
    assert_eq!(si[0], "n_iters,epsilon,sigma,k_votes,budget,far,frr,n_trials,wall_time");
    let cols: Vec<Vec<&str>> = si[1..].iter().map(|l| l.split(',').collect()).collect();
    assert_eq!(cols.iter().map(|c| c[0]).collect::<Vec<_>>(), ["1", "2"]);
    for c in &cols {
        let n: usize = c[0].parse().unwrap();
        let k: usize = c[3].parse().unwrap();
        assert_eq!(c[4].parse::<usize>().unwrap(), n * (k + 1));
    }
}

#[test]
fn evaluate_is_byte_identical_across_runs_and_threads() {
    let t = tiny_trained();
    let mut reports = Vec::new();
    for threads in ["1", "4", "1"] {
        run(&t.config, &t.out, &["evaluate", "--no-timing", "--threads", threads]);
        reports.push(std::fs::read(t.out.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
    let text = String::from_utf8(reports.pop().unwrap()).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(',')), "wall_time left empty");
}

#[test]
fn adversarial_export_writes_wavs_within_budget() {
    let t = tiny_trained();
    let text = TINY.replace("[attack]\n", "[attack]\nexport_wav = true\n");
    std::fs::write(&t.config, text).unwrap();
    run(&t.config, &t.out, &["evaluate"]);
    #[derive(Deserialize)]
    struct Row {
        trial_id: usize,
        path: String,
        epsilon: f64,
        attack_kind: String,
    }
    let adv_dir = t.out.join("adversarial");
    let rows: Vec<Row> = read_csv(&adv_dir.join("manifest.csv"), "test").unwrap();
    assert_eq!(rows.len(), 3 * 8);
    let manifest: Vec<ManifestRow> = read_csv(&t.out.join("corpus/manifest.csv"), "test").unwrap();
    #[derive(Deserialize)]
    struct TrialRow {
        trial_id: usize,
        test_id: String,
    }
    let trials: Vec<TrialRow> = read_csv(&t.out.join("corpus/trials.csv"), "test").unwrap();
    for row in &rows {
        assert_eq!(row.attack_kind, "limited");
        let test_id = &trials.iter().find(|t| t.trial_id == row.trial_id).unwrap().test_id;
        let entry = manifest.iter().find(|m| &m.utterance_id == test_id).unwrap();
        let clean = asv_vote::wav::read_wav(&t.out.join("corpus").join(&entry.path)).unwrap();
        let adv = asv_vote::wav::read_wav(&adv_dir.join(&row.path)).unwrap();
        // Rounding to the 16-bit grid can add at most half a step on top of ε.
        let linf = clean.linf_distance(&adv.samples) * 32768.0;
        assert!(linf <= row.epsilon + 0.5 + 1e-9, "{linf} > {}", row.epsilon);
    }
}
