use std::fs;
use std::path::Path;
use std::process::Command;

use sfparse::config::RunConfig;
use sfparse::dataset::{Dataset, Entry};
use sfparse::eval::evaluate;
use sfparse::pipeline::{broadcast_labels, load_sets, run, Pipeline};
use sfparse::superpixel::GridPartitioner;
use sfparse::synth::{generate, make_synthetic, write_corpus, SynthSpec};

fn small_spec() -> SynthSpec {
    SynthSpec { train: 12, query: 3, width: 64, height: 64, ..Default::default() }
}

fn config_for(dir: &Path, spec: &SynthSpec) -> RunConfig {
    let paths = make_synthetic(spec, dir.join("corpus")).unwrap();
    RunConfig {
        train: Some(paths.train_manifest),
        query: Some(paths.query_manifest),
        out: dir.join("out"),
        ..RunConfig::default()
    }
}

#[test]
fn query_copied_from_training_set_is_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { train: 20, query: 0, ..Default::default() };
    let corpus = generate(&spec).unwrap();
    let paths = write_corpus(&corpus, dir.path()).unwrap();
    let cfg = RunConfig {
        train: Some(paths.train_manifest.clone()),
        query: Some(paths.train_manifest),
        no_crf: true,
        ideal_ranking: true,
        ..RunConfig::default()
    };
    let (train, queries) = load_sets(&cfg).unwrap();
    let pipeline = Pipeline::new(&cfg, &train).unwrap();
    // scenes whose region borders fall on cell borders; elsewhere the grid itself caps accuracy
    let aligned: Vec<&Entry> = queries
        .entries
        .iter()
        .filter(|e| {
            let majority: Vec<u8> = e.superpixel_labels.iter().map(|l| l.unwrap()).collect();
            &broadcast_labels(&e.partition, &majority, 4).unwrap() == e.labels.as_ref().unwrap()
        })
        .collect();
    assert!(!aligned.is_empty());
    for e in aligned {
        let out = pipeline.parse(e, 0).unwrap();
        let acc = evaluate(&e.name, &out.labels, e.labels.as_ref().unwrap()).unwrap().per_pixel().unwrap();
        assert!(acc >= 0.99, "{}: {acc}", e.name);
    }
}

#[test]
fn without_crf_output_is_broadcast_transfer_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { no_crf: true, ..config_for(dir.path(), &small_spec()) };
    let (train, queries) = load_sets(&cfg).unwrap();
    let pipeline = Pipeline::new(&cfg, &train).unwrap();
    for q in &queries.entries {
        let out = pipeline.parse(q, 1).unwrap();
        assert!(out.marginals.is_none());
        let expected = broadcast_labels(&q.partition, &out.scores.argmax(), 4).unwrap();
        assert_eq!(out.labels, expected);
    }
}

#[test]
fn ideal_ranking_changes_only_the_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let base = config_for(dir.path(), &small_spec());
    let ideal_cfg = RunConfig { ideal_ranking: true, ..base.clone() };
    let (train, queries) = load_sets(&base).unwrap();
    let descriptor = Pipeline::new(&base, &train).unwrap();
    let ideal = Pipeline::new(&ideal_cfg, &train).unwrap();
    for q in &queries.entries {
        let a = ideal.parse(q, 5).unwrap();
        let b = descriptor.parse_ranked(q, ideal.rank(q).unwrap(), 5).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.sample, b.sample);
    }
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pgm" || x == "png"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let first = config_for(dir.path(), &small_spec());
    let second = RunConfig { out: dir.path().join("out2"), ..first.clone() };
    let a = run(&first).unwrap();
    let b = run(&second).unwrap();
    assert!(a.failures.is_empty() && b.failures.is_empty());
    assert_eq!(a.report.correct, b.report.correct);
    let (fa, fb) = (read_outputs(&first.out), read_outputs(&second.out));
    assert_eq!(fa.len(), 6);
    assert_eq!(fa, fb);
}

#[test]
fn failing_query_is_reported_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { ideal_ranking: true, no_crf: true, ..config_for(dir.path(), &small_spec()) };
    let (train, queries) = load_sets(&cfg).unwrap();
    let mut entries = queries.entries.clone();
    let q = &entries[0];
    // ideal ranking needs ground truth, so an unlabeled query fails
    let unlabeled = Entry::new("unlabeled", q.image.clone(), None, &GridPartitioner::new(16).unwrap()).unwrap();
    entries.insert(1, unlabeled);
    let queries = Dataset::new(entries, 4, queries.palette.clone());
    let summary = sfparse::pipeline::run_on(&cfg, &train, &queries).unwrap();
    assert_eq!(summary.failures.len(), 1);
    assert_eq!(summary.failures[0].0, "unlabeled");
    assert_eq!(summary.report.queries, 3);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sfparse"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_for(dir.path(), &small_spec());
    let train = cfg.train.unwrap();
    let query = cfg.query.unwrap();
    let ok = cli()
        .args(["parse", "--no-crf", "--train"])
        .arg(&train)
        .arg("--query")
        .arg(&query)
        .arg("--out")
        .arg(dir.path().join("cli_out"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("cli_out/report.txt").exists());

    let bad_key = cli().args(["parse", "--set", "no_such_key=1"]).output().unwrap();
    assert_eq!(bad_key.status.code(), Some(2));
    let missing = cli().args(["parse", "--train", "missing.txt", "--query", "missing.txt"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    // an unlabeled query under ideal ranking fails on its own
    let manifest = dir.path().join("corpus/mixed.txt");
    let first = fs::read_to_string(&query).unwrap().lines().next().unwrap().to_string();
    let image_only = first.split('\t').next().unwrap().to_string();
    fs::write(&manifest, format!("{first}\n{image_only}\n")).unwrap();
    let partial = cli()
        .args(["parse", "--no-crf", "--ideal-ranking", "--train"])
        .arg(&train)
        .arg("--query")
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("cli_partial"))
        .output()
        .unwrap();
    assert_eq!(partial.status.code(), Some(1));

    let dump = cli().args(["dump-config", "--cap", "77"]).output().unwrap();
    assert_eq!(dump.status.code(), Some(0));
    let text = String::from_utf8(dump.stdout).unwrap();
    assert!(text.contains("cap = 77") && text.contains("crf.w_smooth = 3"));
}
