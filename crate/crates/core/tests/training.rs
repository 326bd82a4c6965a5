use std::collections::HashMap;

use prokd_core::corpus::{generate_synthetic, LabeledCorpus, SyntheticSpec, OUTSIDE};
use prokd_core::training::{
    derive_seed, distill_student, grid_search, init_model, labeled_f1, snapshot_teacher,
    train_teacher, GridSpec, Hooks, Phase, RunConfig, TrainingData,
};
use sha2::{Digest, Sha256};

fn toy_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        entity_types: vec!["ENT".into()],
        max_entity_len: 1,
        shift_table: Vec::new(),
        source_train: 200,
        source_dev: 100,
        source_test: 10,
        target_train: 200,
        target_test: 50,
        vocab_size: 120,
        num_templates: 12,
        seed,
        ..SyntheticSpec::default()
    }
}

fn toy_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.teacher.epochs = 5;
    cfg.student.epochs = 4;
    cfg.encoder.hidden_dim = 32;
    cfg
}

fn toy(seed: u64) -> TrainingData {
    TrainingData::from_synthetic(&generate_synthetic(&toy_spec(seed)).unwrap()).0
}

// Softmax regression on one-hot (offset, token) window features, trained by
// plain SGD. Independent of the crate's encoder and metrics.
fn oracle_dev_f1(train: &LabeledCorpus, dev: &LabeledCorpus, radius: usize, tags: usize) -> f64 {
    let features = |tokens: &[String], i: usize| -> Vec<String> {
        (0..=2 * radius)
            .map(|o| {
                let j = i as isize + o as isize - radius as isize;
                let tok = if j < 0 || j as usize >= tokens.len() {
                    "<pad>"
                } else {
                    tokens[j as usize].as_str()
                };
                format!("{o}:{tok}")
            })
            .collect()
    };
    let mut weights: HashMap<String, Vec<f64>> = HashMap::new();
    for _ in 0..5 {
        for s in &train.sentences {
            for (i, &gold) in s.labels.iter().enumerate() {
                let f = features(&s.sentence.tokens, i);
                let mut logits = vec![0.0; tags];
                for name in &f {
                    if let Some(w) = weights.get(name) {
                        for k in 0..tags {
                            logits[k] += w[k];
                        }
                    }
                }
                let max = logits.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                for name in &f {
                    let w = weights
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; tags]);
                    for k in 0..tags {
                        let p = (logits[k] - max).exp() / z;
                        let target = if k == gold { 1.0 } else { 0.0 };
                        w[k] -= 0.1 * (p - target);
                    }
                }
            }
        }
    }
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for s in &dev.sentences {
        for (i, &gold) in s.labels.iter().enumerate() {
            let mut logits = vec![0.0; tags];
            for name in features(&s.sentence.tokens, i) {
                if let Some(w) = weights.get(&name) {
                    for k in 0..tags {
                        logits[k] += w[k];
                    }
                }
            }
            let pred = (0..tags)
                .max_by(|&a, &b| logits[a].partial_cmp(&logits[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            if pred == gold && gold != OUTSIDE {
                tp += 1.0;
            } else {
                if pred != OUTSIDE {
                    fp += 1.0;
                }
                if gold != OUTSIDE {
                    fn_ += 1.0;
                }
            }
        }
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

#[test]
fn toy_task_is_separable_and_the_teacher_learns_it() {
    let data = toy(3);
    let cfg = toy_config(3);
    let tags = data.scheme.num_tags();
    let oracle = oracle_dev_f1(
        &data.source_train,
        &data.source_dev,
        cfg.encoder.window_radius,
        tags,
    );
    assert!(oracle >= 0.95, "oracle dev F1 {oracle}");

    let (teacher, report) = train_teacher(
        init_model(&cfg, &data, Phase::Teacher).unwrap(),
        &data.source_train,
        &data.source_dev,
        &data.target_train,
        &cfg,
        &mut Hooks::default(),
    )
    .unwrap();
    let f1 = labeled_f1(&teacher, &data.source_dev).unwrap();
    assert!(f1 >= 0.95, "teacher dev F1 {f1}");
    assert_eq!(report.epochs.len(), 5);
    for (i, e) in report.epochs.iter().enumerate() {
        assert_eq!(e.epoch, i);
    }
}

#[test]
fn cross_entropy_falls_over_the_first_epochs() {
    let mut curves = Vec::new();
    for seed in 1..=5 {
        let data = toy(seed);
        let cfg = toy_config(seed);
        let (_, report) = train_teacher(
            init_model(&cfg, &data, Phase::Teacher).unwrap(),
            &data.source_train,
            &data.source_dev,
            &data.target_train,
            &cfg,
            &mut Hooks::default(),
        )
        .unwrap();
        curves.push(
            report.epochs[..3]
                .iter()
                .map(|e| e.losses.ce_teacher.unwrap())
                .collect::<Vec<_>>(),
        );
    }
    let median = |e: usize| {
        let mut v: Vec<f64> = curves.iter().map(|c| c[e]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    assert!(median(1) <= median(0) && median(2) <= median(1));
}

#[test]
fn without_ca_ignores_alignment_settings() {
    let data = toy(4);
    let mut a = toy_config(4);
    a.teacher.epochs = 2;
    a.ablation.without_ca = true;
    let mut b = a.clone();
    b.fusion.tau1 = 0.9;
    b.prototypes.lambda = 0.3;
    let run = |cfg: &RunConfig| {
        train_teacher(
            init_model(cfg, &data, Phase::Teacher).unwrap(),
            &data.source_train,
            &data.source_dev,
            &data.target_train,
            cfg,
            &mut Hooks::default(),
        )
        .unwrap()
        .0
    };
    let (ta, tb) = (run(&a), run(&b));
    assert_eq!(ta.params(), tb.params());
}

#[test]
fn snapshot_rows_are_distributions_and_stable() {
    let data = toy(5);
    let mut cfg = toy_config(5);
    cfg.teacher.epochs = 2;
    let (teacher, _) = train_teacher(
        init_model(&cfg, &data, Phase::Teacher).unwrap(),
        &data.source_train,
        &data.source_dev,
        &data.target_train,
        &cfg,
        &mut Hooks::default(),
    )
    .unwrap();
    let snap = snapshot_teacher(&teacher, &data.target_train).unwrap();
    assert_eq!(snap.num_tokens(), data.target_train.token_count());
    for t in 0..snap.num_tokens() {
        let sum: f64 = snap.row(t).iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }
    let hash = |s: &prokd_core::training::TeacherSnapshot| {
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        Sha256::digest(&buf).to_vec()
    };
    let again = snapshot_teacher(&teacher, &data.target_train).unwrap();
    assert_eq!(hash(&snap), hash(&again));

    // The student reads the snapshot but never changes it.
    let before = hash(&snap);
    distill_student(
        init_model(&cfg, &data, Phase::Student).unwrap(),
        &snap,
        &data.target_train,
        None,
        &cfg,
        &mut Hooks::default(),
    )
    .unwrap();
    assert_eq!(hash(&snap), before);
}

#[test]
fn student_schedule_and_distillation_only_contract() {
    let data = toy(6);
    let mut cfg = toy_config(6);
    cfg.teacher.epochs = 2;
    let (teacher, _) = train_teacher(
        init_model(&cfg, &data, Phase::Teacher).unwrap(),
        &data.source_train,
        &data.source_dev,
        &data.target_train,
        &cfg,
        &mut Hooks::default(),
    )
    .unwrap();
    let snap = snapshot_teacher(&teacher, &data.target_train).unwrap();
    let distill = |cfg: &RunConfig| {
        distill_student(
            init_model(cfg, &data, Phase::Student).unwrap(),
            &snap,
            &data.target_train,
            None,
            cfg,
            &mut Hooks::default(),
        )
        .unwrap()
    };

    let (_, report) = distill(&cfg);
    let expected: Vec<f64> = (0..=cfg.student.epochs)
        .map(|e| prokd_core::losses::alpha_schedule(e, cfg.student.epochs).unwrap())
        .collect();
    assert_eq!(report.alpha_trajectory, expected);
    assert_eq!(report.alpha_trajectory[0], 1.0);
    assert_eq!(*report.alpha_trajectory.last().unwrap(), 0.0);

    // With alpha fixed at 1 the pseudo-label settings cannot matter.
    let mut kd_only = cfg.clone();
    kd_only.ablation.without_st = true;
    let mut other = kd_only.clone();
    other.fusion.gamma = 0.9;
    other.fusion.tau2 = 0.5;
    assert_eq!(distill(&kd_only).0.params(), distill(&other).0.params());
}

#[test]
fn grid_search_contracts() {
    let data = toy(7);
    let mut base = toy_config(7);
    base.teacher.epochs = 2;
    base.student.epochs = 2;
    let single = GridSpec {
        lambda: vec![0.5],
        tau1: vec![0.7],
        tau2: vec![0.6],
        gamma: vec![0.8],
    };
    let r = grid_search(&base, &data, &single).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.best.prototypes.lambda, 0.5);
    assert_eq!(r.best.fusion.tau1, 0.7);
    assert_eq!(r.best.fusion.tau2, 0.6);
    assert_eq!(r.best.fusion.gamma, 0.8);

    let pair = GridSpec {
        gamma: vec![0.7, 0.9],
        ..single.clone()
    };
    let r = grid_search(&base, &data, &pair).unwrap();
    assert_eq!(r.rows.len(), 2);
    let max = r
        .rows
        .iter()
        .map(|row| row.student_dev_f1)
        .fold(f64::MIN, f64::max);
    assert_eq!(r.rows[r.best_index].student_dev_f1, max);
    assert_eq!(r.best.fusion.gamma, r.rows[r.best_index].gamma);

    let empty = GridSpec {
        gamma: Vec::new(),
        ..single
    };
    assert!(grid_search(&base, &data, &empty).is_err());
}

#[test]
fn derived_seeds_separate_streams() {
    assert_ne!(derive_seed(1, &[1, 0]), derive_seed(1, &[2, 0]));
    assert_ne!(derive_seed(1, &[1, 0]), derive_seed(2, &[1, 0]));
    assert_eq!(derive_seed(9, &[3, 4]), derive_seed(9, &[3, 4]));
}
