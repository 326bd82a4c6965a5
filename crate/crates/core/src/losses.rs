//! Training objectives. The differentiable terms are built on a [`Graph`] so
//! one code path serves training and gradient checking; pseudo-label
//! construction and the schedule are plain numeric functions.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Graph, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("class alignment needs at least 2 labels with prototypes, got {0}")]
    TooFewLabels(usize),
    #[error("epoch {epoch} is past the last epoch {last}")]
    EpochOutOfRange { epoch: usize, last: usize },
    #[error("schedule needs at least one epoch")]
    NoEpochs,
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("{what} must lie in [0, 1], got {value}")]
    Weight { what: &'static str, value: f64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Which other-class prototypes serve as negatives for an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// Other classes of the anchor's own language.
    WithinLanguage,
    /// Other classes of the opposite language.
    CrossLanguage,
    /// Both of the above.
    BothLanguages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentForm {
    /// Sum over classes of `-log(pos / (pos + negatives))`.
    PerClass,
    /// `-log Σ_i pos_i / negatives_i`: one logarithm, positive pair left out
    /// of the denominator.
    PooledRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub negatives: NegativeMode,
    pub form: AlignmentForm,
    /// Leave the O tag out of the alignment term.
    pub exclude_outside: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau1: 0.5,
            tau2: 0.9,
            gamma: 0.7,
            negatives: NegativeMode::BothLanguages,
            form: AlignmentForm::PerClass,
            exclude_outside: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, t) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(LossError::Config(format!(
                    "{name} must be positive, got {t}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(LossError::Weight {
                what: "gamma",
                value: self.gamma,
            });
        }
        Ok(())
    }
}

/// Token-mean negative log-likelihood of the gold tags.
pub fn teacher_ce(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var, LossError> {
    Ok(g.cross_entropy(probs, labels)?)
}

/// Token-mean cross-entropy against hard pseudo-labels.
pub fn self_train_ce(g: &mut Graph, probs: Var, pseudo: &[usize]) -> Result<Var, LossError> {
    teacher_ce(g, probs, pseudo)
}

/// Mean over tokens of the squared distance between probability rows.
pub fn kd_mse(g: &mut Graph, teacher: Var, student: Var) -> Result<Var, LossError> {
    Ok(g.mse(teacher, student)?)
}

fn negative_masks(k: usize, mode: NegativeMode) -> Tensor {
    // Rows 0..k are source anchors, k..2k target anchors; columns index the
    // stacked [source; target] prototypes.
    let n = 2 * k;
    let mut m = vec![0.0; n * n];
    for i in 0..k {
        for j in (0..k).filter(|&j| j != i) {
            let (same, other) = match mode {
                NegativeMode::WithinLanguage => (1.0, 0.0),
                NegativeMode::CrossLanguage => (0.0, 1.0),
                NegativeMode::BothLanguages => (1.0, 1.0),
            };
            m[i * n + j] = same;
            m[i * n + k + j] = other;
            m[(k + i) * n + k + j] = same;
            m[(k + i) * n + j] = other;
        }
    }
    Tensor::matrix(n, n, m).expect("square mask")
}

/// Contrastive alignment between matched rows of two prototype matrices
/// (`[k, d]` each, row `i` of both belonging to the same label). Rows are
/// L2-normalized first. Each class contributes one positive pair; the
/// negatives of both its anchors are pooled into one denominator.
pub fn class_alignment(
    g: &mut Graph,
    source: Var,
    target: Var,
    tau1: f64,
    negatives: NegativeMode,
    form: AlignmentForm,
) -> Result<Var, LossError> {
    let (k, _) = g.value(source).dims();
    if g.value(source).dims() != g.value(target).dims() {
        return Err(DiffError::ShapeMismatch {
            op: "class_alignment",
            detail: format!(
                "{:?} vs {:?}",
                g.value(source).dims(),
                g.value(target).dims()
            ),
        }
        .into());
    }
    if k < 2 {
        return Err(LossError::TooFewLabels(k));
    }
    if !(tau1 > 0.0 && tau1.is_finite()) {
        return Err(LossError::Config(format!(
            "tau1 must be positive, got {tau1}"
        )));
    }
    let zs = g.l2_normalize(source)?;
    let zt = g.l2_normalize(target)?;
    let z = g.concat_rows(&[zs, zt])?;
    let sim = g.dot(z, z)?;
    let sim = g.scale(sim, 1.0 / tau1);
    let n = 2 * k;

    let mut pos_mask = vec![0.0; n * n];
    for i in 0..k {
        pos_mask[i * n + k + i] = 1.0;
    }
    let pos_mask = g.input(Tensor::matrix(n, n, pos_mask)?);
    let pos = g.mul(sim, pos_mask)?;
    let pos = g.sum_rows(pos)?;
    let mut pick = vec![0.0; k * n];
    for i in 0..k {
        pick[i * n + i] = 1.0;
    }
    let pick = g.input(Tensor::matrix(k, n, pick)?);
    let pos = g.affine(pick, pos, None)?;

    let exp_sim = g.exp(sim);
    let neg_mask = g.input(negative_masks(k, negatives));
    let neg = g.mul(exp_sim, neg_mask)?;
    let neg = g.sum_rows(neg)?;
    let mut pair = vec![0.0; k * n];
    for i in 0..k {
        pair[i * n + i] = 1.0;
        pair[i * n + k + i] = 1.0;
    }
    let pair = g.input(Tensor::matrix(k, n, pair)?);
    let neg = g.affine(pair, neg, None)?;

    match form {
        AlignmentForm::PerClass => {
            let pos_exp = g.exp(pos);
            let denom = g.add(pos_exp, neg)?;
            let log_denom = g.ln(denom)?;
            let neg_pos = g.scale(pos, -1.0);
            let terms = g.add(log_denom, neg_pos)?;
            Ok(g.sum_all(terms)?)
        }
        AlignmentForm::PooledRatio => {
            let log_neg = g.ln(neg)?;
            let log_neg = g.scale(log_neg, -1.0);
            let log_ratio = g.add(pos, log_neg)?;
            let ratio = g.exp(log_ratio);
            let total = g.sum_all(ratio)?;
            let log_total = g.ln(total)?;
            Ok(g.scale(log_total, -1.0))
        }
    }
}

/// `gamma * rho + (1 - gamma) * p`.
pub fn hybrid_label(rho: &[f64], p: &[f64], gamma: f64) -> Result<Vec<f64>, LossError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(LossError::Weight {
            what: "gamma",
            value: gamma,
        });
    }
    if rho.len() != p.len() {
        return Err(DiffError::ShapeMismatch {
            op: "hybrid_label",
            detail: format!("{} vs {}", rho.len(), p.len()),
        }
        .into());
    }
    Ok(rho
        .iter()
        .zip(p)
        .map(|(r, q)| gamma * r + (1.0 - gamma) * q)
        .collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn hard_label(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// `1 - (epoch / last)^2`, decreasing from 1 at epoch 0 to 0 at `last`.
pub fn alpha_schedule(epoch: usize, last: usize) -> Result<f64, LossError> {
    if last == 0 {
        return Err(LossError::NoEpochs);
    }
    if epoch > last {
        return Err(LossError::EpochOutOfRange { epoch, last });
    }
    let r = epoch as f64 / last as f64;
    Ok(1.0 - r * r)
}

/// Cross-entropy plus the (optional) alignment term, unit weights.
pub fn teacher_total(g: &mut Graph, ce: Var, ca: Option<Var>) -> Result<Var, LossError> {
    match ca {
        Some(ca) => Ok(g.add(ce, ca)?),
        None => Ok(ce),
    }
}

/// `(1 - alpha) * self_train + alpha * kd`.
pub fn student_total(
    g: &mut Graph,
    self_train: Var,
    kd: Var,
    alpha: f64,
) -> Result<Var, LossError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LossError::Weight {
            what: "alpha",
            value: alpha,
        });
    }
    let st = g.scale(self_train, 1.0 - alpha);
    let kd = g.scale(kd, alpha);
    Ok(g.add(st, kd)?)
}

/// Loss terms of one optimizer step, as written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBundle {
    pub epoch: usize,
    pub batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ce_teacher: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_alignment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kd_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_train_ce: Option<f64>,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
    /// Labels left out of the alignment term for lack of a prototype.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_labels: Vec<usize>,
    /// Set when self-training was suspended for this step.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback_to_kd: bool,
}

impl LossBundle {
    /// The total implied by the recorded terms and weights.
    pub fn combined(&self) -> f64 {
        match (self.kd_mse, self.alpha) {
            (Some(kd), Some(a)) => (1.0 - a) * self.self_train_ce.unwrap_or(0.0) + a * kd,
            _ => self.ce_teacher.unwrap_or(0.0) + self.class_alignment.unwrap_or(0.0),
        }
    }
}
