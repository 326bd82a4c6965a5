use std::time::Instant;

use super::{
    derive_seed, labeled_f1, Accumulator, EpochReport, Hooks, Phase, PrototypeGradient, RunConfig,
    TrainError, TrainReport, STREAM_TEACHER,
};
use crate::corpus::{BatchPlan, LabeledCorpus, UnlabeledCorpus, OUTSIDE};
use crate::diffcore::{AdamState, Graph, Tensor};
use crate::losses::{class_alignment, teacher_ce, teacher_total, LossBundle};
use crate::model::{Mode, NerModel};
use crate::prototypes::{source_centroids, Centroids, PrototypeSet};

/// Endless walk over shuffled target batches, reshuffled on each pass.
struct TargetBatches {
    plan: BatchPlan,
    pass: usize,
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl TargetBatches {
    fn new(plan: BatchPlan) -> Self {
        let batches = plan.epoch(0).into_iter();
        Self {
            plan,
            pass: 0,
            batches,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        loop {
            if let Some(b) = self.batches.next() {
                return b;
            }
            self.pass += 1;
            self.batches = self.plan.epoch(self.pass).into_iter();
        }
    }
}

/// Trains on labeled source text with cross-entropy plus, unless ablated,
/// the prototype alignment term against unlabeled target text. Returns the
/// epoch with the best source-dev F1 among those trained with alignment.
pub fn train_teacher(
    mut model: NerModel,
    source_train: &LabeledCorpus,
    source_dev: &LabeledCorpus,
    target_train: &UnlabeledCorpus,
    cfg: &RunConfig,
    hooks: &mut Hooks<'_>,
) -> Result<(NerModel, TrainReport), TrainError> {
    cfg.validate()?;
    let phase = &cfg.teacher;
    let k = model.scheme().num_tags();
    let dim = model.config().hidden_dim;
    let lambda = cfg.prototypes.lambda;
    let fusion = &cfg.fusion;
    let use_ca = !cfg.ablation.without_ca;

    let mut source_protos = PrototypeSet::new(source_train.language.clone(), k, dim, lambda)?;
    let mut target_protos = PrototypeSet::new(target_train.language.clone(), k, dim, lambda)?;
    let plan = BatchPlan::new(
        source_train.len(),
        phase.batch_size,
        derive_seed(cfg.seed, &[STREAM_TEACHER, 1]),
    )?;
    let mut targets = if use_ca {
        Some(TargetBatches::new(BatchPlan::new(
            target_train.len(),
            phase.batch_size,
            derive_seed(cfg.seed, &[STREAM_TEACHER, 2]),
        )?))
    } else {
        None
    };
    let mut adam = AdamState::new(cfg.adam.adam(phase.learning_rate), model.params())?;

    let src_tokens: Vec<&[String]> = source_train
        .sentences
        .iter()
        .map(|s| s.sentence.tokens.as_slice())
        .collect();
    let src_labels: Vec<usize> = source_train
        .sentences
        .iter()
        .flat_map(|s| s.labels.iter().copied())
        .collect();

    let mut report = TrainReport::new(Phase::Teacher, phase);
    let mut best: Option<(f64, NerModel)> = None;
    for epoch in 0..phase.epochs {
        let started = Instant::now();
        let ca_now = use_ca && epoch >= cfg.prototypes.alignment_warmup_epochs;
        if ca_now {
            let (hidden, _) = model.infer(&src_tokens)?;
            source_protos.update(&source_centroids(&hidden, &src_labels, k)?)?;
        }
        let template = LossBundle {
            epoch,
            tau1: use_ca.then_some(fusion.tau1),
            ..LossBundle::default()
        };
        let mut acc = Accumulator::default();
        let mut ca_skipped = 0;
        for (b, batch) in plan.epoch(epoch).into_iter().enumerate() {
            let mut g = Graph::new();
            let sents: Vec<&[String]> = batch.iter().map(|&i| src_tokens[i]).collect();
            let gold: Vec<usize> = batch
                .iter()
                .flat_map(|&i| source_train.sentences[i].labels.iter().copied())
                .collect();
            let windows = model.windows(&sents)?;
            let seed = derive_seed(cfg.seed, &[STREAM_TEACHER, 3, epoch as u64, b as u64]);
            let f = model.forward(&mut g, &windows, Mode::Train { seed })?;
            let ce = teacher_ce(&mut g, f.probs, &gold)?;
            let mut bundle = LossBundle {
                batch: b,
                ce_teacher: Some(g.value(ce).values()[0]),
                ..template.clone()
            };

            let mut ca = None;
            if let Some(targets) = targets.as_mut().filter(|_| ca_now) {
                let tb = targets.next_batch();
                let tsents: Vec<&[String]> = tb
                    .iter()
                    .map(|&i| target_train.sentences[i].tokens.as_slice())
                    .collect();
                let tw = model.windows(&tsents)?;
                let seed = derive_seed(cfg.seed, &[STREAM_TEACHER, 4, epoch as u64, b as u64]);
                let ft = model.forward(&mut g, &tw, Mode::Train { seed })?;
                // Probabilities weight the centroid but are not differentiated.
                let weights = g.input(g.value(ft.probs).clone());
                let batch_mean = g.masked_mean(ft.hidden, weights)?;
                let fresh = Centroids::from_graph(&g, batch_mean);
                let previous = target_protos.clone();
                target_protos.update(&fresh)?;

                let mut labels = Vec::new();
                for l in 0..k {
                    if fusion.exclude_outside && l == OUTSIDE {
                        continue;
                    }
                    if source_protos.is_initialized(l)
                        && target_protos.is_initialized(l)
                        && fresh.rows[l].is_some()
                    {
                        labels.push(l);
                    } else {
                        bundle.skipped_labels.push(l);
                    }
                }
                if labels.len() >= 2 {
                    let src = g.input(source_protos.select(&labels)?);
                    let picks: Vec<Vec<usize>> = labels.iter().map(|&l| vec![l]).collect();
                    let current = g.gather(batch_mean, &picks)?;
                    let tgt = match cfg.prototypes.gradient {
                        PrototypeGradient::StraightThrough => {
                            let ema = target_protos.select(&labels)?;
                            let shift: Vec<f64> = ema
                                .values()
                                .iter()
                                .zip(g.value(current).values())
                                .map(|(e, c)| e - c)
                                .collect();
                            let shift = g.input(Tensor::matrix(labels.len(), dim, shift)?);
                            g.add(current, shift)?
                        }
                        PrototypeGradient::Scaled => {
                            let mut scale = Vec::with_capacity(labels.len() * dim);
                            let mut offset = Vec::with_capacity(labels.len() * dim);
                            for &l in &labels {
                                match previous.get(l) {
                                    Some(old) => {
                                        scale.extend(std::iter::repeat_n(lambda, dim));
                                        offset.extend(old.iter().map(|v| (1.0 - lambda) * v));
                                    }
                                    None => {
                                        scale.extend(std::iter::repeat_n(1.0, dim));
                                        offset.extend(std::iter::repeat_n(0.0, dim));
                                    }
                                }
                            }
                            let scale = g.input(Tensor::matrix(labels.len(), dim, scale)?);
                            let offset = g.input(Tensor::matrix(labels.len(), dim, offset)?);
                            let scaled = g.mul(current, scale)?;
                            g.add(scaled, offset)?
                        }
                    };
                    let term = class_alignment(
                        &mut g,
                        src,
                        tgt,
                        fusion.tau1,
                        fusion.negatives,
                        fusion.form,
                    )?;
                    bundle.class_alignment = Some(g.value(term).values()[0]);
                    ca = Some(term);
                } else {
                    log::debug!(
                        "epoch {epoch} batch {b}: alignment skipped, labels {:?}",
                        bundle.skipped_labels
                    );
                    ca_skipped += 1;
                }
            }

            let total = teacher_total(&mut g, ce, ca)?;
            bundle.total = g.value(total).values()[0];
            g.gradient(total, model.params_mut())?;
            adam.step(model.params_mut());
            hooks.record(&bundle)?;
            acc.add(&bundle);
        }

        let dev_f1 = labeled_f1(&model, source_dev)?;
        let target_f1 = hooks.target_eval.map(|f| f(&model)).transpose()?;
        log::info!(
            "teacher epoch {epoch}: loss {:.4} dev F1 {:.4}",
            acc.mean(&template).total,
            dev_f1
        );
        let eligible = ca_now || !use_ca;
        if eligible && best.as_ref().is_none_or(|(f, _)| dev_f1 > *f) {
            best = Some((dev_f1, model.clone()));
            report.selected_epoch = epoch;
        }
        report.epochs.push(EpochReport {
            epoch,
            losses: acc.mean(&template),
            source_dev_f1: Some(dev_f1),
            target_f1,
            alpha: None,
            ca_skipped_steps: ca_skipped,
            kd_fallback_steps: 0,
            prototypes: if use_ca {
                vec![source_protos.clone(), target_protos.clone()]
            } else {
                Vec::new()
            },
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let (_, model) = best.expect("at least one epoch");
    Ok((model, report))
}
