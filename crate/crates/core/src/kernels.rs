//! Kernel similarities, conditional neighbor probabilities, the Jeffreys
//! divergence and the hybrid per-layer loss.
//!
//! Conditional probabilities are normalized per column: entry `(i, j)` is
//! the probability that sample `j` selects sample `i` as its neighbor, so
//! every column sums to one over `i ≠ j` and the diagonal is zero.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::{cond_prob_forward, cosine_kernel_forward, jeffreys_forward, tstudent_kernel_forward};
use crate::tensor::{linalg, Tape, Tensor, Var};

/// Floor applied to off-diagonal probabilities before renormalization.
pub const PROB_FLOOR: f64 = 1e-7;
/// Added to vector norms in the cosine kernel so zero vectors stay finite.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Cosine,
    TStudent { degree: u32 },
}

impl Default for KernelKind {
    fn default() -> Self {
        KernelKind::TStudent { degree: 1 }
    }
}

impl KernelKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelKind::TStudent { degree: 0 } => invalid("T-student degree must be at least 1"),
            _ => Ok(()),
        }
    }

    pub fn eval<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        match *self {
            KernelKind::Cosine => cosine_kernel(a, b),
            KernelKind::TStudent { degree } => tstudent_kernel(a, b, degree),
        }
    }

    /// Full `N×N` kernel matrix (diagonal included) of an `N×F` batch.
    pub fn matrix<T: Scalar>(&self, values: &Tensor<T>) -> Result<Vec<T>> {
        self.validate()?;
        if values.ndim() != 2 {
            return shape_err(format!("kernel matrix needs an N×F batch, got {:?}", values.shape()));
        }
        let (n, f) = (values.shape()[0], values.shape()[1]);
        Ok(match *self {
            KernelKind::Cosine => cosine_kernel_forward(values.data(), n, f, T::c(NORM_EPS)),
            KernelKind::TStudent { degree } => tstudent_kernel_forward(values.data(), n, f, degree),
        })
    }

    /// Differentiable kernel matrix.
    pub fn matrix_var<'t, T: Scalar>(&self, values: &Var<'t, T>) -> Result<Var<'t, T>> {
        match *self {
            KernelKind::Cosine => values.cosine_kernel_matrix(T::c(NORM_EPS)),
            KernelKind::TStudent { degree } => values.tstudent_kernel_matrix(degree),
        }
    }
}

/// `½ (aᵀb / ((‖a‖+ε)(‖b‖+ε)) + 1)`, in `[0, 1]`.
pub fn cosine_kernel<T: Scalar>(a: &[T], b: &[T]) -> T {
    let eps = T::c(NORM_EPS);
    let na = linalg::dot(a, a).sqrt() + eps;
    let nb = linalg::dot(b, b).sqrt() + eps;
    T::c(0.5) * (linalg::dot(a, b) / (na * nb) + T::one())
}

/// `1 / (1 + ‖a − b‖^degree)`, in `(0, 1]`.
pub fn tstudent_kernel<T: Scalar>(a: &[T], b: &[T], degree: u32) -> T {
    let d: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
    T::one() / (T::one() + d.powi(degree as i32))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Teacher,
    Auxiliary,
    Student,
}

/// Activations of one layer for a batch of `N ≥ 2` transfer samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationBatch<T> {
    values: Tensor<T>,
    pub layer_index: usize,
    pub source: Source,
}

impl<T: Scalar> RepresentationBatch<T> {
    /// Leading axis is the sample axis; trailing axes are flattened.
    pub fn new(values: Tensor<T>, layer_index: usize, source: Source) -> Result<Self> {
        if values.ndim() < 2 {
            return shape_err("representation batch needs a sample axis and a feature axis");
        }
        if values.rows() < 2 {
            return invalid("probabilities need at least two samples");
        }
        if !values.all_finite() {
            return invalid("representation batch holds non-finite values");
        }
        Ok(Self { values: values.flatten_rows(), layer_index, source })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.values.row_len()
    }
}

/// `N×N` matrix of `p_{i|j}`: zero diagonal, columns summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct CondProbMatrix<T> {
    p: Tensor<T>,
    pub kernel: KernelKind,
}

impl<T: Scalar> CondProbMatrix<T> {
    /// Wraps an existing matrix, checking the invariants.
    pub fn from_tensor(p: Tensor<T>, kernel: KernelKind) -> Result<Self> {
        if p.ndim() != 2 || p.shape()[0] != p.shape()[1] || p.shape()[0] < 2 {
            return shape_err(format!("conditional probabilities must be N×N with N ≥ 2, got {:?}", p.shape()));
        }
        let n = p.shape()[0];
        let tol = T::c(1e-6);
        for j in 0..n {
            if p.data()[j * n + j] != T::zero() {
                return invalid("diagonal must be zero");
            }
            let s: T = (0..n).map(|i| p.data()[i * n + j]).sum();
            if (s - T::one()).abs() > tol {
                return invalid(format!("column {j} sums to {s}"));
            }
        }
        Ok(Self { p, kernel })
    }

    pub fn n(&self) -> usize {
        self.p.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.p.data()[i * self.n() + j]
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.p
    }

    /// Row-major CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.n();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:.16e}", self.get(i, j).to_f64_lossy())).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Conditional probability matrix of a batch under `kernel`.
pub fn cond_prob_matrix<T: Scalar>(batch: &RepresentationBatch<T>, kernel: KernelKind) -> Result<CondProbMatrix<T>> {
    cond_prob_of(batch.values(), kernel)
}

pub(crate) fn cond_prob_of<T: Scalar>(values: &Tensor<T>, kernel: KernelKind) -> Result<CondProbMatrix<T>> {
    let n = values.rows();
    if n < 2 {
        return invalid("probabilities need at least two samples");
    }
    let k = kernel.matrix(values)?;
    let stages = cond_prob_forward(&k, n, T::c(PROB_FLOOR))?;
    Ok(CondProbMatrix { p: Tensor::new(&[n, n], stages.out)?, kernel })
}

/// Differentiable conditional probabilities of an `N×F` batch.
pub fn cond_prob_var<'t, T: Scalar>(values: &Var<'t, T>, kernel: KernelKind) -> Result<Var<'t, T>> {
    kernel.matrix_var(values)?.cond_prob(T::c(PROB_FLOOR))
}

/// `Σ_i Σ_{j≠i} (a_ji − b_ji)(ln a_ji − ln b_ji)`; symmetric and non-negative.
pub fn jeffreys_divergence<T: Scalar>(a: &CondProbMatrix<T>, b: &CondProbMatrix<T>) -> Result<T> {
    if a.n() != b.n() {
        return shape_err(format!("jeffreys: {0}×{0} vs {1}×{1}", a.n(), b.n()));
    }
    jeffreys_forward(a.p.data(), b.p.data(), a.n())
}

/// Teacher-side probabilities for the hybrid loss, computed once per batch.
#[derive(Clone, Debug)]
pub struct ProbTargets<T> {
    pub cosine: CondProbMatrix<T>,
    pub tstudent: CondProbMatrix<T>,
}

impl<T: Scalar> ProbTargets<T> {
    pub fn new(teacher: &Tensor<T>, degree: u32) -> Result<Self> {
        let values = teacher.flatten_rows();
        Ok(Self {
            cosine: cond_prob_of(&values, KernelKind::Cosine)?,
            tstudent: cond_prob_of(&values, KernelKind::TStudent { degree })?,
        })
    }

    pub fn n(&self) -> usize {
        self.cosine.n()
    }

    pub fn degree(&self) -> u32 {
        match self.tstudent.kernel {
            KernelKind::TStudent { degree } => degree,
            KernelKind::Cosine => unreachable!("constructed with a T-student kernel"),
        }
    }
}

/// Hybrid loss of a student batch against precomputed teacher targets:
/// `D(P_c^t ‖ P_c^s) + D(P_T^t ‖ P_T^s)`.
pub fn hybrid_loss_against<'t, T: Scalar>(targets: &ProbTargets<T>, student: &Var<'t, T>) -> Result<Var<'t, T>> {
    let student = student.flatten()?;
    let n = student.shape()[0];
    if n != targets.n() {
        return shape_err(format!("teacher batch has {} samples, student batch {n}", targets.n()));
    }
    let tape = student.tape();
    let pc = cond_prob_var(&student, KernelKind::Cosine)?;
    let pt = cond_prob_var(&student, KernelKind::TStudent { degree: targets.degree() })?;
    let dc = tape.constant(targets.cosine.as_tensor()).jeffreys(&pc)?;
    let dt = tape.constant(targets.tstudent.as_tensor()).jeffreys(&pt)?;
    dc.add(&dt)
}

/// Hybrid loss between a constant teacher batch and a differentiable student batch.
pub fn hybrid_layer_loss<'t, T: Scalar>(teacher: &Tensor<T>, student: &Var<'t, T>, degree: u32) -> Result<Var<'t, T>> {
    if teacher.rows() < 2 {
        return invalid("probabilities need at least two samples");
    }
    hybrid_loss_against(&ProbTargets::new(teacher, degree)?, student)
}

/// Value of the hybrid loss for two fixed batches.
pub fn hybrid_layer_loss_value<T: Scalar>(
    teacher: &RepresentationBatch<T>,
    student: &RepresentationBatch<T>,
    degree: u32,
) -> Result<T> {
    let tape = Tape::new();
    let s = tape.constant(student.values());
    Ok(hybrid_layer_loss(teacher.values(), &s, degree)?.item())
}
