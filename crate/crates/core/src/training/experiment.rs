use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{flipped_shift_tokens, generate_synthetic, SyntheticSpec};

use super::{
    distill_student, init_model, labeled_f1, snapshot_teacher, train_teacher, EvalSet, GridSpec,
    Hooks, Phase, RunConfig, TeacherSnapshot, TrainError, TrainReport, TrainingData,
};
use crate::evaluation::{
    compare_runs, median, pooled_accuracy, ComparisonTable, MetricsReport, RunGroup,
};
use crate::model::NerModel;

pub struct PipelineOutput {
    pub teacher: NerModel,
    pub teacher_report: TrainReport,
    pub snapshot: TeacherSnapshot,
    pub student: NerModel,
    pub student_report: TrainReport,
}

/// Teacher, snapshot, student.
pub fn run_pipeline(
    cfg: &RunConfig,
    data: &TrainingData,
    hooks: &mut Hooks<'_>,
) -> Result<PipelineOutput, TrainError> {
    let (teacher, teacher_report) = train_teacher(
        init_model(cfg, data, Phase::Teacher)?,
        &data.source_train,
        &data.source_dev,
        &data.target_train,
        cfg,
        hooks,
    )?;
    let snapshot = snapshot_teacher(&teacher, &data.target_train)?;
    let (student, student_report) = distill_student(
        init_model(cfg, data, Phase::Student)?,
        &snapshot,
        &data.target_train,
        Some(&data.source_dev),
        cfg,
        hooks,
    )?;
    Ok(PipelineOutput {
        teacher,
        teacher_report,
        snapshot,
        student,
        student_report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub teacher_dev_f1: f64,
    pub student_dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best_index: usize,
    pub best: RunConfig,
}

impl GridResult {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:>8} {:>5} {:>5} {:>5} {:>8} {:>8}\n",
            "lambda", "tau1", "tau2", "gamma", "teacher", "student"
        );
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{:>8} {:>5} {:>5} {:>5} {:>8.2} {:>8.2}{}\n",
                r.lambda,
                r.tau1,
                r.tau2,
                r.gamma,
                100.0 * r.teacher_dev_f1,
                100.0 * r.student_dev_f1,
                if i == self.best_index { "  *" } else { "" }
            ));
        }
        out
    }
}

/// Trains every grid point and keeps the one whose student scores best on
/// the source dev set. Teachers are shared between points that differ only
/// in student-side settings. Takes no evaluation set, so target labels
/// cannot influence the choice.
pub fn grid_search(
    base: &RunConfig,
    data: &TrainingData,
    grid: &GridSpec,
) -> Result<GridResult, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::Config("empty grid".into()));
    }
    let mut teachers: BTreeMap<(u64, u64), (f64, TeacherSnapshot)> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut best: Option<(f64, usize, RunConfig)> = None;
    for cfg in grid.configs(base) {
        cfg.validate()?;
        let key = (cfg.prototypes.lambda.to_bits(), cfg.fusion.tau1.to_bits());
        if let std::collections::btree_map::Entry::Vacant(e) = teachers.entry(key) {
            let (teacher, report) = train_teacher(
                init_model(&cfg, data, Phase::Teacher)?,
                &data.source_train,
                &data.source_dev,
                &data.target_train,
                &cfg,
                &mut Hooks::default(),
            )?;
            let dev = report.epochs[report.selected_epoch]
                .source_dev_f1
                .unwrap_or(0.0);
            e.insert((dev, snapshot_teacher(&teacher, &data.target_train)?));
        }
        let (teacher_dev, snapshot) = &teachers[&key];
        let (student, _) = distill_student(
            init_model(&cfg, data, Phase::Student)?,
            snapshot,
            &data.target_train,
            None,
            &cfg,
            &mut Hooks::default(),
        )?;
        let student_dev = labeled_f1(&student, &data.source_dev)?;
        log::info!(
            "grid lambda={} tau1={} tau2={} gamma={}: student dev F1 {student_dev:.4}",
            cfg.prototypes.lambda,
            cfg.fusion.tau1,
            cfg.fusion.tau2,
            cfg.fusion.gamma
        );
        rows.push(GridRow {
            lambda: cfg.prototypes.lambda,
            tau1: cfg.fusion.tau1,
            tau2: cfg.fusion.tau2,
            gamma: cfg.fusion.gamma,
            teacher_dev_f1: *teacher_dev,
            student_dev_f1: student_dev,
        });
        if best.as_ref().is_none_or(|(f, _, _)| student_dev > *f) {
            best = Some((student_dev, rows.len() - 1, cfg));
        }
    }
    let (_, best_index, best) = best.expect("non-empty grid");
    Ok(GridResult {
        rows,
        best_index,
        best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    WithoutCa,
    WithoutSt,
    WithoutPk,
    WithoutCl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::WithoutCa,
        Variant::WithoutSt,
        Variant::WithoutPk,
        Variant::WithoutCl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "ProKD",
            Variant::WithoutCa => "w/o CA",
            Variant::WithoutSt => "w/o ST",
            Variant::WithoutPk => "w/o PK",
            Variant::WithoutCl => "w/o CL",
        }
    }

    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.ablation = Default::default();
        match self {
            Variant::Full => {}
            Variant::WithoutCa => c.ablation.without_ca = true,
            Variant::WithoutSt => c.ablation.without_st = true,
            Variant::WithoutPk => c.ablation.without_pk = true,
            Variant::WithoutCl => c.ablation.without_cl = true,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub variant: Variant,
    /// The teacher this variant distilled from, scored on target test.
    pub teacher: MetricsReport,
    pub student: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub results: Vec<SeedResult>,
    pub students: ComparisonTable,
    pub teachers: ComparisonTable,
}

impl AblationReport {
    fn reports(&self, variant: Variant, teacher: bool) -> Vec<&MetricsReport> {
        self.results
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| if teacher { &r.teacher } else { &r.student })
            .collect()
    }

    /// Builds the comparison tables over `results`, which may come from
    /// several separate runs.
    pub fn from_results(seeds: Vec<u64>, results: Vec<SeedResult>) -> Result<Self, TrainError> {
        let group = |variant: Variant, teacher: bool, name: &str| RunGroup {
            name: name.to_string(),
            reports: results
                .iter()
                .filter(|r| r.variant == variant)
                .map(|r| {
                    if teacher {
                        r.teacher.clone()
                    } else {
                        r.student.clone()
                    }
                })
                .collect(),
        };
        let students = compare_runs(&Variant::ALL.map(|v| group(v, false, v.name())))?;
        let teachers = compare_runs(&[
            group(Variant::Full, true, "teacher"),
            group(Variant::WithoutCa, true, "teacher w/o CA"),
        ])?;
        Ok(Self {
            seeds,
            results,
            students,
            teachers,
        })
    }

    pub fn median_f1(&self, variant: Variant, teacher: bool) -> f64 {
        median(
            &self
                .reports(variant, teacher)
                .iter()
                .map(|r| r.f1)
                .collect::<Vec<_>>(),
        )
    }

    pub fn median_shift_accuracy(&self, variant: Variant, teacher: bool) -> f64 {
        median(
            &self
                .reports(variant, teacher)
                .iter()
                .map(|r| pooled_accuracy(&r.shift_tokens))
                .collect::<Vec<_>>(),
        )
    }

    pub fn render(&self) -> String {
        format!(
            "target-test token F1, students (median over {} seeds)\n{}\nteachers\n{}",
            self.seeds.len(),
            self.students.render(),
            self.teachers.render()
        )
    }
}

/// Full method and the four ablations over several seeds, scored on the
/// sealed target test set. Training never sees `eval`; it is opened only
/// after each model is final.
pub fn run_ablation(
    base: &RunConfig,
    data: &TrainingData,
    eval: &EvalSet,
    seeds: &[u64],
    surfaces: &[String],
) -> Result<AblationReport, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("no seeds".into()));
    }
    let mut results = Vec::new();
    for &seed in seeds {
        let mut seeded = base.clone();
        seeded.seed = seed;
        let mut teachers = BTreeMap::new();
        for with_ca in [true, false] {
            let cfg = if with_ca {
                Variant::Full
            } else {
                Variant::WithoutCa
            }
            .apply(&seeded);
            let (teacher, _) = train_teacher(
                init_model(&cfg, data, Phase::Teacher)?,
                &data.source_train,
                &data.source_dev,
                &data.target_train,
                &cfg,
                &mut Hooks::default(),
            )?;
            let snapshot = snapshot_teacher(&teacher, &data.target_train)?;
            let score = eval.evaluate(&teacher, surfaces)?;
            teachers.insert(with_ca, (snapshot, score));
        }
        for variant in Variant::ALL {
            let cfg = variant.apply(&seeded);
            let (snapshot, teacher_score) = &teachers[&(variant != Variant::WithoutCa)];
            let (student, _) = distill_student(
                init_model(&cfg, data, Phase::Student)?,
                snapshot,
                &data.target_train,
                None,
                &cfg,
                &mut Hooks::default(),
            )?;
            let score = eval.evaluate(&student, surfaces)?;
            log::info!("seed {seed} {}: student F1 {:.4}", variant.name(), score.f1);
            results.push(SeedResult {
                seed,
                variant,
                teacher: teacher_score.clone(),
                student: score,
            });
        }
    }
    AblationReport::from_results(seeds.to_vec(), results)
}

/// [`run_ablation`] with a freshly generated corpus per seed: seed `s`
/// draws its data from `spec` with `spec.seed = s`, so the spread across
/// seeds covers both initialization and sampling.
pub fn run_resampled_ablation(
    base: &RunConfig,
    spec: &SyntheticSpec,
    seeds: &[u64],
) -> Result<AblationReport, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("no seeds".into()));
    }
    let surfaces = flipped_shift_tokens(spec);
    let mut results = Vec::new();
    for &seed in seeds {
        let corpora = generate_synthetic(&SyntheticSpec {
            seed,
            ..spec.clone()
        })?;
        let (data, eval) = TrainingData::from_synthetic(&corpora);
        results.extend(run_ablation(base, &data, &eval, &[seed], &surfaces)?.results);
    }
    AblationReport::from_results(seeds.to_vec(), results)
}
