//! Batch objectives: probability transfer, baselines and supervision terms.

use super::plan::{DistillPlan, Supervision};
use crate::error::{invalid, shape_err, Error, Result};
use crate::kernels::{hybrid_loss_against, ProbTargets};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Reports a non-finite forward value as a loss failure in `context`.
pub(crate) fn in_context<R>(r: Result<R>, context: impl FnOnce() -> String) -> Result<R> {
    r.map_err(|e| match e {
        Error::NonFinite(op) => Error::NanLoss { context: format!("{} ({op})", context()) },
        other => other,
    })
}

pub(crate) fn pair_context(plan: &DistillPlan, i: usize) -> String {
    let (t, s) = plan.pairs[i];
    format!("layer pair {i} (teacher point {t}, student point {s})")
}

pub(crate) fn check_finite<T: Scalar>(v: &Var<'_, T>, context: impl FnOnce() -> String) -> Result<()> {
    if v.item().is_finite() {
        Ok(())
    } else {
        Err(Error::NanLoss { context: context() })
    }
}

/// Transfer term of one batch.
pub struct KdTerm<'t, T> {
    /// `None` when no pair is active.
    pub loss: Option<Var<'t, T>>,
    /// Weighted contribution of every plan pair (zero when inactive).
    pub per_pair: Vec<T>,
}

fn sum_terms<'t, T: Scalar>(terms: impl IntoIterator<Item = Var<'t, T>>) -> Result<Option<Var<'t, T>>> {
    let mut acc: Option<Var<'t, T>> = None;
    for t in terms {
        acc = Some(match acc {
            Some(a) => a.add(&t)?,
            None => t,
        });
    }
    Ok(acc)
}

/// `Σ_i α_i(k) · hybrid(teacher_i, student_i)` over the active pairs of a
/// probability-matching plan. `teacher` and `student` are aligned with
/// `plan.pairs`.
pub fn distill_loss<'t, T: Scalar>(
    plan: &DistillPlan,
    teacher: &[Tensor<T>],
    student: &[Var<'t, T>],
    epoch: usize,
) -> Result<KdTerm<'t, T>> {
    let targets = teacher.iter().map(|t| ProbTargets::new(t, plan.degree)).collect::<Result<Vec<_>>>()?;
    distill_loss_against(plan, &targets, student, epoch)
}

/// As [`distill_loss`] with precomputed teacher probabilities.
pub fn distill_loss_against<'t, T: Scalar>(
    plan: &DistillPlan,
    targets: &[ProbTargets<T>],
    student: &[Var<'t, T>],
    epoch: usize,
) -> Result<KdTerm<'t, T>> {
    if targets.len() != plan.pairs.len() || student.len() != plan.pairs.len() {
        return shape_err(format!(
            "plan has {} pairs, got {} teacher and {} student batches",
            plan.pairs.len(),
            targets.len(),
            student.len()
        ));
    }
    weighted_pairs(plan, epoch, |i| hybrid_loss_against(&targets[i], &student[i]))
}

/// Weights the raw per-pair losses produced by `raw` for the active pairs.
pub(crate) fn weighted_pairs<'t, T: Scalar>(
    plan: &DistillPlan,
    epoch: usize,
    mut raw: impl FnMut(usize) -> Result<Var<'t, T>>,
) -> Result<KdTerm<'t, T>> {
    let mut per_pair = vec![T::zero(); plan.pairs.len()];
    let mut terms = Vec::new();
    for i in plan.active_pairs() {
        let loss = in_context(raw(i), || pair_context(plan, i))?;
        check_finite(&loss, || pair_context(plan, i))?;
        let alpha = plan.alpha(i, epoch);
        let weighted = if alpha == 1.0 { loss } else { loss.scale(T::c(alpha))? };
        per_pair[i] = weighted.item();
        terms.push(weighted);
    }
    Ok(KdTerm { loss: sum_terms(terms)?, per_pair })
}

/// `T² · mean_n KL(softmax(t_n/T) ‖ softmax(s_n/T))`.
pub fn softlabel_baseline<'t, T: Scalar>(teacher_logits: &Tensor<T>, student_logits: &Var<'t, T>, temperature: f64) -> Result<Var<'t, T>> {
    let s_shape = student_logits.shape();
    if teacher_logits.shape() != s_shape.as_slice() || s_shape.len() != 2 {
        return shape_err(format!("teacher logits {:?} vs student logits {:?}", teacher_logits.shape(), s_shape));
    }
    if !(temperature > 0.0) {
        return invalid("temperature must be positive");
    }
    let (n, c) = (s_shape[0], s_shape[1]);
    let inv_t = T::c(1.0 / temperature);
    // Teacher side is constant: log-probabilities computed directly.
    let mut t_logp = teacher_logits.data().to_vec();
    for row in t_logp.chunks_mut(c) {
        row.iter_mut().for_each(|z| *z *= inv_t);
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = mx + row.iter().map(|&z| (z - mx).exp()).sum::<T>().ln();
        row.iter_mut().for_each(|z| *z -= lse);
    }
    let t_p: Vec<T> = t_logp.iter().map(|&l| l.exp()).collect();
    let entropy_term: T = t_p.iter().zip(&t_logp).map(|(&p, &l)| p * l).sum();
    let tape = student_logits.tape();
    let s_logp = student_logits.scale(inv_t)?.log_softmax()?;
    let cross = s_logp.mul(&tape.constant(&Tensor::new(&[n, c], t_p)?))?.sum()?;
    // KL = Σ p log p − Σ p log q, averaged over rows and scaled by T².
    let scale = T::c(temperature * temperature) / T::from_usize_lossy(n);
    cross.affine(-scale, scale * entropy_term)
}

/// Mean squared error between teacher representations and the student's,
/// passed through `projection = (weight, bias)` when given.
pub fn hint_baseline<'t, T: Scalar>(
    teacher: &Tensor<T>,
    student: &Var<'t, T>,
    projection: Option<(&Var<'t, T>, &Var<'t, T>)>,
) -> Result<Var<'t, T>> {
    let student = student.flatten()?;
    let teacher = teacher.flatten_rows();
    let mapped = match projection {
        Some((w, b)) => student.matmul(w)?.add_bias(b)?,
        None => student,
    };
    if mapped.shape() != teacher.shape() {
        return shape_err(format!(
            "hint needs matching shapes, student maps to {:?}, teacher is {:?}",
            mapped.shape(),
            teacher.shape()
        ));
    }
    mapped.sub(&student.tape().constant(&teacher))?.square()?.mean()
}

/// Mean over pairs of `d²` (same) or `max(0, margin − d)²` (different),
/// `d` the euclidean distance between aligned rows of `a` and `b`.
pub fn contrastive_loss<'t, T: Scalar>(a: &Var<'t, T>, b: &Var<'t, T>, same: &[bool], margin: f64) -> Result<Var<'t, T>> {
    if same.is_empty() {
        return invalid("contrastive loss needs at least one pair");
    }
    let (a, b) = (a.flatten()?, b.flatten()?);
    if a.shape() != b.shape() || a.shape()[0] != same.len() {
        return shape_err(format!("contrastive pairs {:?} vs {:?} with {} labels", a.shape(), b.shape(), same.len()));
    }
    let tape = a.tape();
    let p = same.len();
    let pos = Tensor::new(&[p], same.iter().map(|&s| if s { T::one() } else { T::zero() }).collect())?;
    let neg = Tensor::new(&[p], same.iter().map(|&s| if s { T::zero() } else { T::one() }).collect())?;
    let diff = a.sub(&b)?;
    let d2 = diff.square()?.sum_last_axis()?;
    let hinge = diff.row_norm()?.affine(-T::one(), T::c(margin))?.relu()?.square()?;
    let per_pair = d2.mul(&tape.constant(&pos))?.add(&hinge.mul(&tape.constant(&neg))?)?;
    per_pair.mean()
}

/// All unordered within-batch pairs `(i, j)`, `i < j`, with label equality.
pub fn within_batch_pairs(labels: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<bool>) {
    let n = labels.len();
    let cap = n * n.saturating_sub(1) / 2;
    let (mut left, mut right, mut same) = (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
    for i in 0..n {
        for j in i + 1..n {
            left.push(i);
            right.push(j);
            same.push(labels[i] == labels[j]);
        }
    }
    (left, right, same)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy<'t, T: Scalar>(logits: &Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return shape_err(format!("logits {shape:?} for {} labels", labels.len()));
    }
    let c = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return shape_err(format!("label {bad} outside {c} classes"));
    }
    let mut onehot = vec![T::zero(); labels.len() * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = T::one();
    }
    let picked = logits.log_softmax()?.mul(&logits.tape().constant(&Tensor::new(&[labels.len(), c], onehot)?))?.sum()?;
    picked.scale(-T::one() / T::from_usize_lossy(labels.len()))
}

/// Weighted supervision term, `None` when the plan has no supervision.
pub fn supervision_loss<'t, T: Scalar>(
    supervision: &Supervision,
    representation: &Var<'t, T>,
    logits: Option<&Var<'t, T>>,
    labels: &[usize],
) -> Result<Option<Var<'t, T>>> {
    match *supervision {
        Supervision::None => Ok(None),
        Supervision::Contrastive { margin, weight } => {
            let (l, r, same) = within_batch_pairs(labels);
            if same.is_empty() {
                return invalid("contrastive supervision needs batches of at least two samples");
            }
            let rep = representation.flatten()?;
            let term = contrastive_loss(&rep.select_rows(&l)?, &rep.select_rows(&r)?, &same, margin)?;
            Ok(Some(term.scale(T::c(weight))?))
        }
        Supervision::Crossentropy => {
            let logits = logits.ok_or_else(|| Error::InvalidArgument("cross-entropy supervision needs a classification head".into()))?;
            Ok(Some(cross_entropy(logits, labels)?))
        }
    }
}

/// Sum of whichever terms are present; a zero constant when none is.
pub fn combine<'t, T: Scalar>(tape: &'t crate::tensor::Tape<T>, terms: &[Option<Var<'t, T>>]) -> Result<Var<'t, T>> {
    Ok(sum_terms(terms.iter().flatten().copied())?.unwrap_or_else(|| tape.constant(&Tensor::scalar(T::zero()))))
}
