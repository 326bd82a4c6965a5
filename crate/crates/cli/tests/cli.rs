use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prokd_core::model::{Mode, NerModel};
use prokd_core::training::RunConfig;

fn quick_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml")
}

fn prokd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prokd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = prokd(args);
    assert!(
        out.status.success(),
        "prokd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generated corpus plus a trained teacher, shared by several tests.
fn teacher_run(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    ok(&[
        "--config",
        s(&quick_config()),
        "--out",
        s(&data),
        "generate-data",
    ]);
    let corpus = data.join("corpus.toml");
    let teacher = dir.join("teacher");
    ok(&[
        "--config",
        s(&corpus),
        "--out",
        s(&teacher),
        "train-teacher",
    ]);
    (corpus, teacher.join("teacher.ckpt"))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn generate_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "--config",
            s(&quick_config()),
            "--out",
            s(d),
            "--seed",
            "7",
            "generate-data",
        ]);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() >= 9);
    assert_eq!(fa, fb);

    let c = dir.path().join("c");
    ok(&[
        "--config",
        s(&quick_config()),
        "--out",
        s(&c),
        "--seed",
        "8",
        "generate-data",
    ]);
    let train = |d: &Path| fs::read(d.join("source_train.conll")).unwrap();
    assert_ne!(train(&a), train(&c));
}

#[test]
fn gold_as_predictions_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "--config",
        s(&quick_config()),
        "--out",
        s(&data),
        "generate-data",
    ]);
    let eval = dir.path().join("eval");
    ok(&[
        "--config",
        s(&data.join("corpus.toml")),
        "--out",
        s(&eval),
        "evaluate",
        "--predictions",
        s(&data.join("target_test.gold.conll")),
    ]);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(doc["format"], "prokd-metrics/1");
    assert_eq!(doc["metrics"]["f1"], 1.0);
    assert!(doc["metrics"]["tp"].as_u64().unwrap() > 0);
}

#[test]
fn pipeline_verbs_chain_and_reproduce_from_the_config_copy() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = teacher_run(dir.path());
    let snap = dir.path().join("snap");
    ok(&[
        "--config",
        s(&corpus),
        "--out",
        s(&snap),
        "snapshot",
        "--checkpoint",
        s(&ckpt),
    ]);
    let student = dir.path().join("student");
    ok(&[
        "--config",
        s(&corpus),
        "--out",
        s(&student),
        "distill",
        "--snapshot",
        s(&snap.join("snapshot.tsv")),
    ]);
    let eval = dir.path().join("eval");
    ok(&[
        "--config",
        s(&corpus),
        "--out",
        s(&eval),
        "evaluate",
        "--checkpoint",
        s(&student.join("student.ckpt")),
    ]);
    assert!(eval.join("predictions.conll").exists());

    // The copied config alone reproduces the teacher bit for bit.
    let copy = ckpt.parent().unwrap().join("config.toml");
    let again = dir.path().join("again");
    ok(&["--config", s(&copy), "--out", s(&again), "train-teacher"]);
    assert_eq!(
        fs::read(&ckpt).unwrap(),
        fs::read(again.join("teacher.ckpt")).unwrap()
    );
    let resolved = RunConfig::load(&copy).unwrap();
    assert_eq!(resolved.seed, 1);
}

#[test]
fn ablate_runs_every_variant_with_one_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ablate");
    ok(&[
        "--config",
        s(&quick_config()),
        "--out",
        s(&out),
        "ablate",
        "--seeds",
        "3",
    ]);
    let runs: Vec<String> = fs::read_dir(out.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(runs.len(), 5);
    for r in &runs {
        assert!(out.join("runs").join(r).join("seed-3.json").exists());
    }
    let table = fs::read_to_string(out.join("ablation.txt")).unwrap();
    for name in ["ProKD", "w/o CA", "w/o ST", "w/o PK", "w/o CL"] {
        assert!(table.contains(name), "{name} missing from\n{table}");
    }
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(doc["ablation"]["results"].as_array().unwrap().len(), 5);
}

#[test]
fn export_counts_and_exact_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = teacher_run(dir.path());
    let out = dir.path().join("export");
    ok(&[
        "--config",
        s(&corpus),
        "--out",
        s(&out),
        "export-prototypes",
        "--checkpoint",
        s(&ckpt),
    ]);

    let protos = fs::read_to_string(out.join("prototypes.tsv")).unwrap();
    let mut lines = protos.lines();
    assert_eq!(lines.next(), Some("# prokd-prototypes/1"));
    assert!(lines.next().unwrap().starts_with("language\tlabel\tdim_0"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 18);
    for lang in ["src", "tgt"] {
        assert_eq!(
            rows.iter()
                .filter(|r| r.starts_with(&format!("{lang}\t")))
                .count(),
            9
        );
    }

    let model = NerModel::load(&ckpt).unwrap();
    let cfg = RunConfig::load(&corpus).unwrap();
    let source = prokd_core::corpus::read_conll_file(
        cfg.data.source_train.as_ref().unwrap(),
        model.scheme(),
        &prokd_core::corpus::ConllOptions::new("src", prokd_core::corpus::Split::Train),
    )
    .unwrap();
    let tokens = fs::read_to_string(out.join("tokens.tsv")).unwrap();
    let mut lines = tokens.lines();
    assert_eq!(lines.next(), Some("# prokd-tokens/1"));
    lines.next();
    let mut per_lang = std::collections::BTreeMap::<(String, String), usize>::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        *per_lang
            .entry((cols[0].into(), cols[1].into()))
            .or_default() += 1;
        if cols[0] == "src" && i % 17 == 0 {
            let (sent, pos): (usize, usize) = (cols[2].parse().unwrap(), cols[3].parse().unwrap());
            let h = model
                .encode(&source.sentences[sent].sentence.tokens, Mode::Eval)
                .unwrap();
            let exported: Vec<f64> = cols[4..].iter().map(|v| v.parse().unwrap()).collect();
            assert_eq!(exported.as_slice(), h.row(pos));
        }
    }
    assert!(per_lang.values().all(|&n| n <= 50));
    for lang in ["src", "tgt"] {
        let total: usize = per_lang
            .iter()
            .filter(|((l, _), _)| l == lang)
            .map(|(_, n)| n)
            .sum();
        assert!(total > 0 && total <= 900, "{lang}: {total}");
    }
}

#[test]
fn exit_codes_separate_usage_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = prokd(&[
        "--config",
        "/definitely/not/here.toml",
        "--out",
        s(dir.path()),
        "train-teacher",
    ]);
    assert_eq!(missing.status.code(), Some(1));

    assert_eq!(prokd(&["no-such-verb"]).status.code(), Some(1));

    let occupied = dir.path().join("occupied");
    fs::create_dir_all(&occupied).unwrap();
    fs::write(occupied.join("keep"), "x").unwrap();
    let refused = prokd(&[
        "--config",
        s(&quick_config()),
        "--out",
        s(&occupied),
        "generate-data",
    ]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    ok(&[
        "--config",
        s(&quick_config()),
        "--out",
        s(&occupied),
        "--force",
        "generate-data",
    ]);

    let corpus = occupied.join("corpus.toml");
    let bad = prokd(&[
        "--config",
        s(&corpus),
        "--out",
        s(&dir.path().join("snap")),
        "snapshot",
        "--checkpoint",
        s(&occupied.join("stats.json")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("module model"));
}
