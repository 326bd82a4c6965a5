//! Per-label centroids of hidden representations: hard-label means on the
//! source side, probability-weighted means on the target side, smoothed with
//! an exponential moving average across batches.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::diffcore::{euclidean, softmax_in_place, DiffError, Graph, Tensor, MIN_GROUP_WEIGHT};

pub const TSV_HEADER: &str = "# prokd-prototypes/1";

#[derive(Debug, thiserror::Error)]
pub enum PrototypeError {
    #[error("moving-average rate must be in (0, 1), got {0}")]
    Rate(f64),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("labels without a prototype: {0:?}")]
    Uninitialized(Vec<usize>),
    #[error("label {label} is out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("prototype table: {0}")]
    Format(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Centroids of a single batch (or corpus pass). A label is absent when its
/// total weight fell below [`MIN_GROUP_WEIGHT`].
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub rows: Vec<Option<Vec<f64>>>,
    pub weights: Vec<f64>,
}

impl Centroids {
    pub fn num_labels(&self) -> usize {
        self.rows.len()
    }

    /// Reads the weighted means and group totals off a graph node built with
    /// [`Graph::masked_mean`].
    pub fn from_graph(g: &Graph, mean: crate::diffcore::Var) -> Self {
        let totals = g.group_totals(mean).expect("masked_mean node").to_vec();
        let value = g.value(mean);
        let rows = totals
            .iter()
            .enumerate()
            .map(|(k, &w)| (w >= MIN_GROUP_WEIGHT).then(|| value.row(k).to_vec()))
            .collect();
        Self {
            rows,
            weights: totals,
        }
    }
}

/// One-hot weight matrix for hard labels.
pub fn one_hot(labels: &[usize], num_labels: usize) -> Result<Tensor, PrototypeError> {
    let mut w = vec![0.0; labels.len() * num_labels];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_labels {
            return Err(PrototypeError::LabelOutOfRange {
                label: l,
                num_labels,
            });
        }
        w[i * num_labels + l] = 1.0;
    }
    Tensor::matrix(labels.len().max(1), num_labels, w).map_err(PrototypeError::from)
}

/// Mean hidden vector of the tokens carrying each gold label.
pub fn source_centroids(
    hidden: &Tensor,
    labels: &[usize],
    num_labels: usize,
) -> Result<Centroids, PrototypeError> {
    if hidden.rows() != labels.len() {
        return Err(PrototypeError::Dim {
            expected: hidden.rows(),
            got: labels.len(),
        });
    }
    let mut g = Graph::new();
    let h = g.input(hidden.clone());
    let w = g.input(one_hot(labels, num_labels)?);
    let m = g.masked_mean(h, w)?;
    Ok(Centroids::from_graph(&g, m))
}

/// Probability-weighted mean hidden vector per label.
pub fn target_centroids(hidden: &Tensor, probs: &Tensor) -> Result<Centroids, PrototypeError> {
    let mut g = Graph::new();
    let h = g.input(hidden.clone());
    let w = g.input(probs.clone());
    let m = g.masked_mean(h, w)?;
    Ok(Centroids::from_graph(&g, m))
}

/// Running prototypes for one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub language: String,
    pub dim: usize,
    pub rate: f64,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl PrototypeSet {
    pub fn new(
        language: impl Into<String>,
        num_labels: usize,
        dim: usize,
        rate: f64,
    ) -> Result<Self, PrototypeError> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(PrototypeError::Rate(rate));
        }
        Ok(Self {
            language: language.into(),
            dim,
            rate,
            rows: vec![None; num_labels],
        })
    }

    pub fn num_labels(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, label: usize) -> Option<&[f64]> {
        self.rows.get(label).and_then(|r| r.as_deref())
    }

    pub fn is_initialized(&self, label: usize) -> bool {
        self.get(label).is_some()
    }

    pub fn uninitialized(&self) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&k| self.rows[k].is_none())
            .collect()
    }

    /// `rate * new + (1 - rate) * old`. A label's first observation is taken
    /// as is; a label absent from `fresh` keeps its previous value.
    pub fn update(&mut self, fresh: &Centroids) -> Result<(), PrototypeError> {
        if fresh.num_labels() != self.num_labels() {
            return Err(PrototypeError::Dim {
                expected: self.num_labels(),
                got: fresh.num_labels(),
            });
        }
        let rate = self.rate;
        for (slot, new) in self.rows.iter_mut().zip(&fresh.rows) {
            let Some(new) = new else { continue };
            if new.len() != self.dim {
                return Err(PrototypeError::Dim {
                    expected: self.dim,
                    got: new.len(),
                });
            }
            match slot {
                None => *slot = Some(new.clone()),
                Some(old) => {
                    for (o, n) in old.iter_mut().zip(new) {
                        *o = rate * n + (1.0 - rate) * *o;
                    }
                }
            }
        }
        Ok(())
    }

    /// All prototypes as a `[labels, dim]` matrix; fails if any is missing.
    pub fn matrix(&self) -> Result<Tensor, PrototypeError> {
        let missing = self.uninitialized();
        if !missing.is_empty() {
            return Err(PrototypeError::Uninitialized(missing));
        }
        let values = self.rows.iter().flatten().flatten().copied().collect();
        Ok(Tensor::matrix(self.num_labels(), self.dim, values)?)
    }

    /// Rows for a subset of labels, in the given order.
    pub fn select(&self, labels: &[usize]) -> Result<Tensor, PrototypeError> {
        let mut values = Vec::with_capacity(labels.len() * self.dim);
        for &l in labels {
            let row = self
                .get(l)
                .ok_or_else(|| PrototypeError::Uninitialized(vec![l]))?;
            values.extend_from_slice(row);
        }
        Ok(Tensor::matrix(labels.len(), self.dim, values)?)
    }

    pub fn write_tsv_header<W: Write>(&self, mut w: W) -> Result<(), PrototypeError> {
        writeln!(w, "{TSV_HEADER}")?;
        write!(w, "language\tlabel")?;
        for d in 0..self.dim {
            write!(w, "\tdim_{d}")?;
        }
        writeln!(w)?;
        Ok(())
    }

    /// Tab-separated table: a format line, a column header, then
    /// `language label v_0 .. v_d` per initialized prototype.
    pub fn write_tsv<W: Write>(&self, tags: &[String], mut w: W) -> Result<(), PrototypeError> {
        self.write_tsv_rows(tags, true, &mut w)
    }

    /// Appends this set's rows, with the format and column headers only when
    /// `header` is set, so several languages can share one table.
    pub fn write_tsv_rows<W: Write>(
        &self,
        tags: &[String],
        header: bool,
        mut w: W,
    ) -> Result<(), PrototypeError> {
        if header {
            self.write_tsv_header(&mut w)?;
        }
        for (k, row) in self.rows.iter().enumerate() {
            let Some(row) = row else { continue };
            let tag = tags.get(k).map(String::as_str).unwrap_or("?");
            write!(w, "{}\t{tag}", self.language)?;
            for v in row {
                write!(w, "\t{v:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_tsv`](Self::write_tsv). Rows may appear in any order.
    pub fn read_tsv<R: BufRead>(r: R, tags: &[String], rate: f64) -> Result<Self, PrototypeError> {
        let mut lines = r
            .lines()
            .filter(|l| !matches!(l, Ok(l) if l.starts_with('#')));
        let header = lines
            .next()
            .ok_or_else(|| PrototypeError::Format("empty table".into()))??;
        let dim = header.split('\t').count().saturating_sub(2);
        let mut set: Option<PrototypeSet> = None;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != dim + 2 {
                return Err(PrototypeError::Format(format!(
                    "row {}: {} columns",
                    i + 2,
                    cols.len()
                )));
            }
            let label = tags
                .iter()
                .position(|t| t == cols[1])
                .ok_or_else(|| PrototypeError::Format(format!("unknown label {:?}", cols[1])))?;
            let values = cols[2..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PrototypeError::Format(e.to_string()))?;
            let s = match &mut set {
                Some(s) => s,
                None => set.insert(PrototypeSet::new(cols[0], tags.len(), dim, rate)?),
            };
            s.rows[label] = Some(values);
        }
        set.ok_or_else(|| PrototypeError::Format("no prototypes".into()))
    }
}

/// Softmax over negative Euclidean distances to each prototype, divided by
/// the temperature.
pub fn prototype_probability(
    h: &[f64],
    set: &PrototypeSet,
    temperature: f64,
) -> Result<Vec<f64>, PrototypeError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(PrototypeError::Temperature(temperature));
    }
    if h.len() != set.dim {
        return Err(PrototypeError::Dim {
            expected: set.dim,
            got: h.len(),
        });
    }
    let missing = set.uninitialized();
    if !missing.is_empty() {
        return Err(PrototypeError::Uninitialized(missing));
    }
    let mut logits: Vec<f64> = set
        .rows
        .iter()
        .flatten()
        .map(|c| -euclidean(h, c) / temperature)
        .collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Row-wise [`prototype_probability`].
pub fn prototype_probabilities(
    hidden: &Tensor,
    set: &PrototypeSet,
    temperature: f64,
) -> Result<Tensor, PrototypeError> {
    let mut values = Vec::with_capacity(hidden.rows() * set.num_labels());
    for r in 0..hidden.rows() {
        values.extend(prototype_probability(hidden.row(r), set, temperature)?);
    }
    Ok(Tensor::matrix(hidden.rows(), set.num_labels(), values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_with(rows: Vec<Vec<f64>>, rate: f64) -> PrototypeSet {
        let dim = rows[0].len();
        let mut s = PrototypeSet::new("xx", rows.len(), dim, rate).unwrap();
        s.rows = rows.into_iter().map(Some).collect();
        s
    }

    #[test]
    fn source_centroid_of_two_tokens() {
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0], vec![9.0, 9.0]]).unwrap();
        let c = source_centroids(&h, &[1, 1, 0], 3).unwrap();
        assert_eq!(c.rows[1].as_deref(), Some(&[2.0, 1.0][..]));
        assert_eq!(c.rows[0].as_deref(), Some(&[9.0, 9.0][..]));
        assert_eq!(c.rows[2], None);
    }

    #[test]
    fn target_centroid_equal_weights_is_the_mean() {
        let h = Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let c = target_centroids(&h, &p).unwrap();
        for row in c.rows {
            assert_eq!(row.unwrap(), vec![1.0, 1.0]);
        }
    }

    #[test]
    fn target_centroid_zero_weight_is_uninitialized() {
        let h = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let c = target_centroids(&h, &p).unwrap();
        assert!(c.rows[1].is_none());
    }

    #[test]
    fn ema_update() {
        let mut s = set_with(vec![vec![0.0, 0.0]], 0.1);
        s.update(&Centroids {
            rows: vec![Some(vec![1.0, 1.0])],
            weights: vec![1.0],
        })
        .unwrap();
        assert_eq!(s.get(0).unwrap(), &[0.1, 0.1]);
    }

    #[test]
    fn first_observation_is_taken_directly_and_missing_keeps_old() {
        let mut s = PrototypeSet::new("xx", 2, 1, 0.001).unwrap();
        s.update(&Centroids {
            rows: vec![Some(vec![5.0]), None],
            weights: vec![1.0, 0.0],
        })
        .unwrap();
        assert_eq!(s.get(0).unwrap(), &[5.0]);
        assert!(!s.is_initialized(1));
        s.update(&Centroids {
            rows: vec![None, Some(vec![2.0])],
            weights: vec![0.0, 1.0],
        })
        .unwrap();
        assert_eq!(s.get(0).unwrap(), &[5.0]);
        assert_eq!(s.get(1).unwrap(), &[2.0]);
    }

    #[test]
    fn rate_bounds() {
        for r in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(PrototypeSet::new("xx", 2, 2, r).is_err());
        }
    }

    #[test]
    fn equidistant_prototypes_give_uniform_probability() {
        let s = set_with(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], 0.5);
        let p = prototype_probability(&[0.0, 0.0], &s, 0.7).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closer_prototype_wins() {
        let s = set_with(vec![vec![0.0], vec![3.0]], 0.5);
        let p = prototype_probability(&[0.5], &s, 0.5).unwrap();
        assert!(p[0] > p[1]);
        let expected = 1.0 / (1.0 + (-(2.5 - 0.5) / 0.5f64).exp());
        assert!((p[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn probability_errors() {
        let s = set_with(vec![vec![0.0], vec![3.0]], 0.5);
        assert!(matches!(
            prototype_probability(&[0.0], &s, 0.0),
            Err(PrototypeError::Temperature(_))
        ));
        let mut partial = PrototypeSet::new("xx", 2, 1, 0.5).unwrap();
        partial.rows[0] = Some(vec![1.0]);
        assert!(matches!(
            prototype_probability(&[0.0], &partial, 0.5),
            Err(PrototypeError::Uninitialized(v)) if v == vec![1]
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let tags: Vec<String> = ["O", "B-X", "I-X"].iter().map(|s| s.to_string()).collect();
        let mut s = PrototypeSet::new("tgt", 3, 2, 0.25).unwrap();
        s.rows[0] = Some(vec![0.1, -2.5e-7]);
        s.rows[2] = Some(vec![1.0 / 3.0, 4.0]);
        let mut buf = Vec::new();
        s.write_tsv(&tags, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# prokd-prototypes/1\nlanguage\tlabel\tdim_0\tdim_1\n"));
        let back = PrototypeSet::read_tsv(buf.as_slice(), &tags, 0.25).unwrap();
        assert_eq!(back, s);
    }
}
