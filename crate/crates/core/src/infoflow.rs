//! Information flow: per-layer quadratic mutual information between
//! representations and class labels, flow vectors, layer matching and the
//! nearest-centroid discriminativeness probe.

use serde::Serialize;

use crate::error::{invalid, shape_err, Result};
use crate::kernels::KernelKind;
use crate::nn::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default evaluation batch size for flow vectors.
pub const FLOW_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelBatch {
    labels: Vec<usize>,
    classes: usize,
}

impl LabelBatch {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return invalid(format!("label {bad} outside [0, {classes})"));
        }
        Ok(Self { labels, classes })
    }

    /// Infers the class count as `max + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Self { labels, classes }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { labels: idx.iter().map(|&i| self.labels[i]).collect(), classes: self.classes }
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Quadratic mutual information estimate from information potentials:
/// `V_IN + V_ALL − 2·V_BTW` with
///
/// * `V_IN  = 1/N² Σ_c Σ_{i,j∈c} K(x_i, x_j)`
/// * `V_ALL = 1/N² (Σ_c (N_c/N)²) Σ_{i,j} K(x_i, x_j)`
/// * `V_BTW = 1/N² Σ_c (N_c/N) Σ_{i∈c} Σ_j K(x_i, x_j)`
pub fn qmi_estimate<T: Scalar>(values: &Tensor<T>, labels: &LabelBatch, kernel: KernelKind) -> Result<T> {
    let values = values.flatten_rows();
    let n = values.rows();
    if n != labels.len() {
        return shape_err(format!("{n} representations but {} labels", labels.len()));
    }
    if n < 2 {
        return invalid("QMI needs at least two samples");
    }
    let k = kernel.matrix(&values)?;
    let counts = labels.counts();
    let nf = T::from_usize_lossy(n);
    let prior: Vec<T> = counts.iter().map(|&c| T::from_usize_lossy(c) / nf).collect();

    let mut v_in = T::zero();
    let mut total = T::zero();
    let mut v_btw = T::zero();
    for i in 0..n {
        let ci = labels.labels[i];
        let mut row = T::zero();
        for j in 0..n {
            let kij = k[i * n + j];
            row += kij;
            if labels.labels[j] == ci {
                v_in += kij;
            }
        }
        total += row;
        v_btw += prior[ci] * row;
    }
    let prior_sq: T = prior.iter().map(|&p| p * p).sum();
    let norm = T::one() / (nf * nf);
    Ok(norm * (v_in + prior_sq * total - T::c(2.0) * v_btw))
}

/// Per-transfer-point mutual information estimates of one network.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowVector<T> {
    pub omega: Vec<T>,
    pub source: String,
}

impl<T: Scalar> FlowVector<T> {
    pub fn new(omega: Vec<T>, source: impl Into<String>) -> Self {
        Self { omega, source: source.into() }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// QMI per precomputed representation, averaged over consecutive
/// evaluation batches of `batch_size` (a trailing batch of one sample is
/// dropped).
pub fn flow_vector_from_representations<T: Scalar>(
    reps: &[Tensor<T>],
    labels: &LabelBatch,
    kernel: KernelKind,
    batch_size: usize,
    source: &str,
) -> Result<FlowVector<T>> {
    let n = labels.len();
    let batches: Vec<Vec<usize>> = (0..n)
        .step_by(batch_size.max(2))
        .map(|s| (s..(s + batch_size.max(2)).min(n)).collect::<Vec<_>>())
        .filter(|b| b.len() >= 2)
        .collect();
    if batches.is_empty() {
        return invalid("flow vector needs at least two labeled samples");
    }
    let mut omega = Vec::with_capacity(reps.len());
    for rep in reps {
        if rep.rows() != n {
            return shape_err("representation and label counts differ");
        }
        let mut acc = T::zero();
        for b in &batches {
            acc += qmi_estimate(&rep.select_rows(b), &labels.select(b), kernel)?;
        }
        omega.push(acc / T::from_usize_lossy(batches.len()));
    }
    Ok(FlowVector::new(omega, source))
}

/// Flow vector of `model` on `data`.
pub fn flow_vector<T: Scalar>(
    model: &mut Network<T>,
    data: &Tensor<T>,
    labels: &LabelBatch,
    kernel: KernelKind,
    batch_size: usize,
) -> Result<FlowVector<T>> {
    let reps = model.representations(data, batch_size)?;
    let name = model.graph().name.clone();
    flow_vector_from_representations(&reps, labels, kernel, batch_size, &name)
}

/// `kappa[i]` is the teacher layer paired with student layer `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerMatching {
    pub kappa: Vec<usize>,
}

/// Pairs every student layer but the last with the teacher layer of
/// closest mutual information (lowest index on ties); the last student
/// layer always maps to the last teacher layer.
pub fn match_layers<T: Scalar>(student: &FlowVector<T>, teacher: &FlowVector<T>) -> Result<LayerMatching> {
    if student.is_empty() || teacher.is_empty() {
        return invalid("flow vectors must be non-empty");
    }
    let last_t = teacher.len() - 1;
    let kappa = (0..student.len())
        .map(|i| {
            if i + 1 == student.len() {
                return last_t;
            }
            let mut best = 0;
            let mut best_d = T::infinity();
            for (j, &wt) in teacher.omega.iter().enumerate() {
                let d = (student.omega[i] - wt) * (student.omega[i] - wt);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    Ok(LayerMatching { kappa })
}

/// `Σ_i (ω_s[i] − ω_t[κ(i)])²`.
pub fn flow_divergence<T: Scalar>(student: &FlowVector<T>, teacher: &FlowVector<T>, matching: &LayerMatching) -> Result<T> {
    if matching.kappa.len() != student.len() {
        return shape_err(format!("matching covers {} layers, student has {}", matching.kappa.len(), student.len()));
    }
    let mut acc = T::zero();
    for (i, &j) in matching.kappa.iter().enumerate() {
        let Some(&wt) = teacher.omega.get(j) else {
            return shape_err(format!("teacher layer {j} out of range"));
        };
        acc += (student.omega[i] - wt) * (student.omega[i] - wt);
    }
    Ok(acc)
}

/// Accuracy of a nearest-centroid classifier (Euclidean, ties to the lowest
/// class id) fitted on `train` and evaluated on `test`.
pub fn ncc_probe<T: Scalar>(
    train: &Tensor<T>,
    train_labels: &LabelBatch,
    test: &Tensor<T>,
    test_labels: &LabelBatch,
) -> Result<f64> {
    let (train, test) = (train.flatten_rows(), test.flatten_rows());
    if train.rows() != train_labels.len() || test.rows() != test_labels.len() {
        return shape_err("representation and label counts differ");
    }
    if train.row_len() != test.row_len() {
        return shape_err("train and test dimensions differ");
    }
    if test.rows() == 0 {
        return invalid("empty test set");
    }
    let classes = train_labels.classes().max(test_labels.classes());
    let d = train.row_len();
    let mut centroids = vec![T::zero(); classes * d];
    let mut counts = vec![0usize; classes];
    for (i, &c) in train_labels.labels().iter().enumerate() {
        counts[c] += 1;
        for (acc, &v) in centroids[c * d..(c + 1) * d].iter_mut().zip(train.row(i)) {
            *acc += v;
        }
    }
    for c in 0..classes {
        if counts[c] > 0 {
            let inv = T::one() / T::from_usize_lossy(counts[c]);
            centroids[c * d..(c + 1) * d].iter_mut().for_each(|v| *v *= inv);
        }
    }
    if let Some(&unseen) = test_labels.labels().iter().find(|&&c| c >= classes || counts[c] == 0) {
        return invalid(format!("test class {unseen} not present in training data"));
    }
    let mut correct = 0usize;
    for (i, &truth) in test_labels.labels().iter().enumerate() {
        let x = test.row(i);
        let mut best = usize::MAX;
        let mut best_d = T::infinity();
        for c in (0..classes).filter(|&c| counts[c] > 0) {
            let dist: T = x.iter().zip(&centroids[c * d..(c + 1) * d]).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if dist < best_d {
                best = c;
                best_d = dist;
            }
        }
        if best == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.rows() as f64)
}
