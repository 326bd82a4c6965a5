use std::time::Instant;

use super::{
    derive_seed, labeled_f1, Accumulator, EpochReport, Hooks, Phase, RunConfig, TeacherSnapshot,
    TrainError, TrainReport, STREAM_STUDENT,
};
use crate::corpus::{BatchPlan, LabeledCorpus, UnlabeledCorpus};
use crate::diffcore::{AdamState, Graph, Tensor};
use crate::losses::{hard_label, hybrid_label, kd_mse, self_train_ce, student_total, LossBundle};
use crate::model::{Mode, NerModel};
use crate::prototypes::{prototype_probabilities, target_centroids, PrototypeSet};

/// Distills the frozen teacher snapshot into `model` on unlabeled target
/// text. Runs epochs `0..=E` so the schedule covers both of its endpoints;
/// the final epoch's model is returned.
pub fn distill_student(
    mut model: NerModel,
    snapshot: &TeacherSnapshot,
    target_train: &UnlabeledCorpus,
    source_dev: Option<&LabeledCorpus>,
    cfg: &RunConfig,
    hooks: &mut Hooks<'_>,
) -> Result<(NerModel, TrainReport), TrainError> {
    cfg.validate()?;
    snapshot.check_matches(target_train)?;
    let phase = &cfg.student;
    let k = model.scheme().num_tags();
    if snapshot.num_tags() != k {
        return Err(TrainError::Snapshot(format!(
            "snapshot has {} tags, model {k}",
            snapshot.num_tags()
        )));
    }
    let dim = model.config().hidden_dim;
    let gamma = cfg.gamma();
    let tau2 = cfg.fusion.tau2;

    let mut protos =
        PrototypeSet::new(target_train.language.clone(), k, dim, cfg.prototypes.lambda)?;
    let plan = BatchPlan::new(
        target_train.len(),
        phase.batch_size,
        derive_seed(cfg.seed, &[STREAM_STUDENT, 1]),
    )?;
    let mut adam = AdamState::new(cfg.adam.adam(phase.learning_rate), model.params())?;
    let sentences: Vec<&[String]> = target_train
        .sentences
        .iter()
        .map(|s| s.tokens.as_slice())
        .collect();

    let mut report = TrainReport::new(Phase::Student, phase);
    for epoch in 0..=phase.epochs {
        let started = Instant::now();
        let alpha = cfg.alpha_at(epoch)?;
        let template = LossBundle {
            epoch,
            alpha: Some(alpha),
            gamma: Some(gamma),
            tau2: Some(tau2),
            ..LossBundle::default()
        };
        let mut acc = Accumulator::default();
        let mut fallbacks = 0;
        for (b, batch) in plan.epoch(epoch).into_iter().enumerate() {
            let mut g = Graph::new();
            let sents: Vec<&[String]> = batch.iter().map(|&i| sentences[i]).collect();
            let windows = model.windows(&sents)?;
            let seed = derive_seed(cfg.seed, &[STREAM_STUDENT, 2, epoch as u64, b as u64]);
            let f = model.forward(&mut g, &windows, Mode::Train { seed })?;
            let teacher_rows: Vec<f64> = batch
                .iter()
                .flat_map(|&i| snapshot.sentence(i).iter().copied())
                .collect();
            let teacher = Tensor::matrix(windows.len(), k, teacher_rows)?;
            let p = g.input(teacher.clone());
            let kd = kd_mse(&mut g, p, f.probs)?;

            let hidden = g.value(f.hidden).clone();
            let probs = g.value(f.probs).clone();
            protos.update(&target_centroids(&hidden, &probs)?)?;

            let mut bundle = LossBundle {
                batch: b,
                kd_mse: Some(g.value(kd).values()[0]),
                ..template.clone()
            };
            let missing = protos.uninitialized();
            let total = if missing.is_empty() {
                let rho = prototype_probabilities(&hidden, &protos, tau2)?;
                let mut pseudo = Vec::with_capacity(hidden.rows());
                for r in 0..hidden.rows() {
                    pseudo.push(hard_label(&hybrid_label(
                        rho.row(r),
                        teacher.row(r),
                        gamma,
                    )?));
                }
                let st = self_train_ce(&mut g, f.probs, &pseudo)?;
                bundle.self_train_ce = Some(g.value(st).values()[0]);
                student_total(&mut g, st, kd, alpha)?
            } else {
                if alpha < 1.0 {
                    fallbacks += 1;
                    bundle.fallback_to_kd = true;
                    bundle.alpha = Some(1.0);
                    log::debug!(
                        "epoch {epoch} batch {b}: no prototype for {missing:?}, distillation only"
                    );
                }
                kd
            };
            bundle.total = g.value(total).values()[0];
            g.gradient(total, model.params_mut())?;
            adam.step(model.params_mut());
            hooks.record(&bundle)?;
            acc.add(&bundle);
        }

        let dev_f1 = source_dev.map(|d| labeled_f1(&model, d)).transpose()?;
        let target_f1 = hooks.target_eval.map(|f| f(&model)).transpose()?;
        log::info!(
            "student epoch {epoch}: alpha {alpha:.3} loss {:.4}",
            acc.mean(&template).total
        );
        report.alpha_trajectory.push(alpha);
        report.epochs.push(EpochReport {
            epoch,
            losses: acc.mean(&template),
            source_dev_f1: dev_f1,
            target_f1,
            alpha: Some(alpha),
            ca_skipped_steps: 0,
            kd_fallback_steps: fallbacks,
            prototypes: vec![protos.clone()],
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    report.selected_epoch = phase.epochs;
    Ok((model, report))
}
