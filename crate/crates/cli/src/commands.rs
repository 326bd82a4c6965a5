use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use prokd_core::corpus::{
    flipped_shift_tokens, generate_synthetic, write_conll_file, write_unlabeled_file, Corpus,
    LabelScheme, LabeledCorpus, SEALED_TARGET_TEST,
};
use prokd_core::model::NerModel;
use prokd_core::training::{
    self, run_ablation, run_resampled_ablation, AblationReport, DataConfig, EvalSet, GridSpec,
    Hooks, Phase, RunConfig, TeacherSnapshot, TrainError, TrainingData, Variant,
};
use serde_json::json;

use crate::{CliError, Common};

pub type CliResult<T> = Result<T, CliError>;

pub struct Loaded {
    pub data: TrainingData,
    pub eval: Option<EvalSet>,
    pub surfaces: Vec<String>,
}

pub fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Creates the output directory (refusing a non-empty one unless forced)
/// and stores the resolved config in it.
pub fn prepare_out(common: &Common, cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = common
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    if out.exists() {
        let occupied = fs::read_dir(&out)
            .map_err(|e| CliError::io(out.display(), e))?
            .next()
            .is_some();
        if occupied && !common.force {
            return Err(CliError::Usage(format!(
                "{} is not empty; pass --force to write into it",
                out.display()
            )));
        }
    }
    fs::create_dir_all(&out).map_err(|e| CliError::io(out.display(), e))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    Ok(out)
}

pub fn load_data(cfg: &RunConfig) -> CliResult<Loaded> {
    match &cfg.data.synthetic {
        Some(spec) => {
            let corpora = generate_synthetic(spec).map_err(TrainError::from)?;
            let (data, eval) = TrainingData::from_synthetic(&corpora);
            let surfaces = if cfg.data.shift_tokens.is_empty() {
                flipped_shift_tokens(spec)
            } else {
                cfg.data.shift_tokens.clone()
            };
            Ok(Loaded {
                data,
                eval: Some(eval),
                surfaces,
            })
        }
        None => {
            let (data, eval) = TrainingData::load(&cfg.data, cfg.max_seq_len)?;
            Ok(Loaded {
                data,
                eval,
                surfaces: cfg.data.shift_tokens.clone(),
            })
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

/// Pretty JSON under a `format` tag, newline-terminated.
pub fn write_json(
    path: &Path,
    format: &str,
    key: &str,
    value: &impl serde::Serialize,
) -> CliResult<()> {
    let doc = json!({ "format": format, key: value });
    let mut text = serde_json::to_string_pretty(&doc).expect("reports serialize");
    text.push('\n');
    write_text(path, &text)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path.display(), e))
}

fn load_model(path: &Path) -> CliResult<NerModel> {
    NerModel::load(path).map_err(|e| TrainError::from(e).into())
}

pub fn generate_data(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let Some(mut spec) = cfg.data.synthetic.clone() else {
        return Err(CliError::Usage(
            "generate-data needs a [data.synthetic] section".into(),
        ));
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let mut resolved = cfg.clone();
    resolved.data.synthetic = Some(spec.clone());
    let out = prepare_out(common, &resolved)?;
    let c = generate_synthetic(&spec).map_err(TrainError::from)?;

    let io = |p: &Path, r: std::io::Result<()>| r.map_err(|e| CliError::io(p.display(), e));
    let path = |name: &str| out.join(name);
    io(
        &path("source_train.conll"),
        write_conll_file(&c.source_train, &c.scheme, &path("source_train.conll")),
    )?;
    io(
        &path("source_dev.conll"),
        write_conll_file(&c.source_dev, &c.scheme, &path("source_dev.conll")),
    )?;
    io(
        &path("source_test.conll"),
        write_conll_file(&c.source_test, &c.scheme, &path("source_test.conll")),
    )?;
    io(
        &path("target_train.conll"),
        write_unlabeled_file(&c.target_train, &path("target_train.conll")),
    )?;
    io(
        &path("target_test.conll"),
        write_unlabeled_file(&c.target_test, &path("target_test.conll")),
    )?;
    let gold = c
        .gold
        .open(SEALED_TARGET_TEST, "export gold for evaluation")
        .map_err(TrainError::from)?;
    let gold = LabeledCorpus::from_parts(&c.target_test, &gold).map_err(TrainError::from)?;
    io(
        &path("target_test.gold.conll"),
        write_conll_file(&gold, &c.scheme, &path("target_test.gold.conll")),
    )?;
    io(
        &path("embeddings.tsv"),
        c.embeddings.write_file(&path("embeddings.tsv")),
    )?;

    // A config that trains from the written files instead of regenerating.
    let mut files = cfg.clone();
    files.data = DataConfig {
        synthetic: None,
        source_train: Some("source_train.conll".into()),
        source_dev: Some("source_dev.conll".into()),
        target_train: Some("target_train.conll".into()),
        target_test: Some("target_test.conll".into()),
        target_test_gold: Some("target_test.gold.conll".into()),
        embeddings: Some("embeddings.tsv".into()),
        entity_types: Some(spec.entity_types.clone()),
        source_language: Some(spec.source_language.clone()),
        target_language: Some(spec.target_language.clone()),
        lenient: false,
        shift_tokens: flipped_shift_tokens(&spec),
    };
    write_text(&path("corpus.toml"), &files.to_toml())?;

    let stats = [
        c.source_train.stats(&c.scheme),
        c.source_dev.stats(&c.scheme),
        c.source_test.stats(&c.scheme),
        gold.stats(&c.scheme),
    ];
    write_json(&path("stats.json"), "prokd-stats/1", "corpora", &stats)?;
    println!(
        "wrote corpora for seed {} to {} (train with --config {})",
        spec.seed,
        out.display(),
        path("corpus.toml").display()
    );
    Ok(())
}

pub fn train_teacher(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let out = prepare_out(common, &cfg)?;
    let loaded = load_data(&cfg)?;
    let mut log = create(&out.join("teacher_log.jsonl"))?;
    let mut hooks = Hooks {
        log: Some(&mut log),
        target_eval: None,
    };
    let (teacher, report) = training::train_teacher(
        training::init_model(&cfg, &loaded.data, Phase::Teacher)?,
        &loaded.data.source_train,
        &loaded.data.source_dev,
        &loaded.data.target_train,
        &cfg,
        &mut hooks,
    )?;
    log.flush()
        .map_err(|e| CliError::io("teacher_log.jsonl", e))?;
    teacher
        .save(&out.join("teacher.ckpt"))
        .map_err(TrainError::from)?;
    write_json(
        &out.join("teacher_report.json"),
        "prokd-train-report/1",
        "report",
        &report,
    )?;
    let dev = report.epochs[report.selected_epoch].source_dev_f1;
    println!(
        "teacher: epoch {} selected, source dev F1 {}",
        report.selected_epoch,
        dev.map_or("n/a".into(), |f| format!("{f:.4}"))
    );
    Ok(())
}

pub fn snapshot(common: &Common, checkpoint: &Path) -> CliResult<()> {
    let cfg = load_config(common)?;
    let out = prepare_out(common, &cfg)?;
    let loaded = load_data(&cfg)?;
    let teacher = load_model(checkpoint)?;
    let snap = training::snapshot_teacher(&teacher, &loaded.data.target_train)?;
    snap.save(&out.join("snapshot.tsv"))?;
    println!("snapshot: {} target tokens", snap.num_tokens());
    Ok(())
}

pub fn distill(common: &Common, snapshot: &Path) -> CliResult<()> {
    let cfg = load_config(common)?;
    let out = prepare_out(common, &cfg)?;
    let loaded = load_data(&cfg)?;
    let snap = TeacherSnapshot::load(snapshot)?;
    let mut log = create(&out.join("student_log.jsonl"))?;
    let mut hooks = Hooks {
        log: Some(&mut log),
        target_eval: None,
    };
    let (student, report) = training::distill_student(
        training::init_model(&cfg, &loaded.data, Phase::Student)?,
        &snap,
        &loaded.data.target_train,
        Some(&loaded.data.source_dev),
        &cfg,
        &mut hooks,
    )?;
    log.flush()
        .map_err(|e| CliError::io("student_log.jsonl", e))?;
    student
        .save(&out.join("student.ckpt"))
        .map_err(TrainError::from)?;
    write_json(
        &out.join("student_report.json"),
        "prokd-train-report/1",
        "report",
        &report,
    )?;
    println!("student: {} epochs", report.epochs.len());
    Ok(())
}

/// Reads `token tag` lines without BIO validation: model output need not be
/// well formed to be scored token by token.
fn read_predictions(path: &Path, scheme: &LabelScheme) -> CliResult<Vec<(String, usize)>> {
    let file = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path.display(), e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let (tok, tag) = match cols.as_slice() {
            [tok, .., tag] if cols.len() >= 2 => (*tok, *tag),
            _ => {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected \"token tag\"",
                    path.display(),
                    i + 1
                )))
            }
        };
        let idx = scheme.index_of(tag).ok_or_else(|| {
            CliError::Usage(format!("{}:{}: unknown tag {tag:?}", path.display(), i + 1))
        })?;
        out.push((tok.to_string(), idx));
    }
    Ok(out)
}

pub fn evaluate(
    common: &Common,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
) -> CliResult<()> {
    let cfg = load_config(common)?;
    let out = prepare_out(common, &cfg)?;
    let loaded = load_data(&cfg)?;
    let eval = loaded.eval.ok_or_else(|| {
        CliError::Usage("evaluate needs data.target_test_gold or a synthetic corpus".into())
    })?;
    let scheme = &loaded.data.scheme;
    let predicted: Vec<Vec<usize>> = match (checkpoint, predictions) {
        (Some(ckpt), _) => {
            let model = load_model(ckpt)?;
            let pred = model.predict(&eval.sentences()).map_err(TrainError::from)?;
            let labeled = Corpus::from_parts(&eval.corpus, &pred).map_err(TrainError::from)?;
            write_conll_file(&labeled, scheme, &out.join("predictions.conll"))
                .map_err(|e| CliError::io("predictions.conll", e))?;
            pred
        }
        (None, Some(path)) => {
            // Re-split to the evaluation sentences, which may have been cut
            // at the maximum length when read.
            let flat = read_predictions(path, scheme)?;
            let expected: Vec<&String> = eval
                .corpus
                .sentences
                .iter()
                .flat_map(|s| &s.tokens)
                .collect();
            if flat.len() != expected.len() || flat.iter().zip(&expected).any(|((t, _), e)| t != *e)
            {
                return Err(CliError::Usage(format!(
                    "{} does not match the target test tokens",
                    path.display()
                )));
            }
            let mut tags = flat.into_iter().map(|(_, t)| t);
            eval.corpus
                .sentences
                .iter()
                .map(|s| tags.by_ref().take(s.len()).collect())
                .collect()
        }
        (None, None) => return Err(CliError::Usage("pass --checkpoint or --predictions".into())),
    };
    let report = eval.score(&predicted, scheme, &loaded.surfaces)?;
    write_json(
        &out.join("metrics.json"),
        "prokd-metrics/1",
        "metrics",
        &report,
    )?;
    println!(
        "token F1 {:.4} (P {:.4}, R {:.4}) over {} gold entity tokens",
        report.f1,
        report.precision,
        report.recall,
        report.tp + report.fn_
    );
    Ok(())
}

fn variant_slug(v: Variant) -> &'static str {
    match v {
        Variant::Full => "prokd",
        Variant::WithoutCa => "without-ca",
        Variant::WithoutSt => "without-st",
        Variant::WithoutPk => "without-pk",
        Variant::WithoutCl => "without-cl",
    }
}

pub fn ablate(common: &Common, seeds: &[u64], fixed_data: bool) -> CliResult<()> {
    let cfg = load_config(common)?;
    let seeds: Vec<u64> = if seeds.is_empty() {
        (cfg.seed..cfg.seed + 5).collect()
    } else {
        seeds.to_vec()
    };
    let out = prepare_out(common, &cfg)?;
    let report: AblationReport = match (&cfg.data.synthetic, fixed_data) {
        (Some(spec), false) => run_resampled_ablation(&cfg, spec, &seeds)?,
        _ => {
            let loaded = load_data(&cfg)?;
            let eval = loaded.eval.ok_or_else(|| {
                CliError::Usage("ablate needs data.target_test_gold or a synthetic corpus".into())
            })?;
            run_ablation(&cfg, &loaded.data, &eval, &seeds, &loaded.surfaces)?
        }
    };
    for v in Variant::ALL {
        let dir = out.join("runs").join(variant_slug(v));
        fs::create_dir_all(&dir).map_err(|e| CliError::io(dir.display(), e))?;
        write_text(&dir.join("config.toml"), &v.apply(&cfg).to_toml())?;
        for r in report.results.iter().filter(|r| r.variant == v) {
            write_json(
                &dir.join(format!("seed-{}.json", r.seed)),
                "prokd-seed-result/1",
                "result",
                r,
            )?;
        }
    }
    write_json(
        &out.join("ablation.json"),
        "prokd-ablation/1",
        "ablation",
        &report,
    )?;
    let table = report.render();
    write_text(&out.join("ablation.txt"), &table)?;
    println!("{table}");
    Ok(())
}

pub fn grid_search(common: &Common, grid: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(common)?;
    let spec = match grid {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            toml::from_str::<GridSpec>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => GridSpec::default(),
    };
    let out = prepare_out(common, &cfg)?;
    write_text(
        &out.join("grid.toml"),
        &toml::to_string(&spec).expect("grid serializes"),
    )?;
    let loaded = load_data(&cfg)?;
    let result = training::grid_search(&cfg, &loaded.data, &spec)?;
    write_json(&out.join("grid.json"), "prokd-grid/1", "grid", &result)?;
    write_text(&out.join("best_config.toml"), &result.best.to_toml())?;
    let table = result.render();
    write_text(&out.join("grid.txt"), &table)?;
    println!("{table}");
    Ok(())
}
