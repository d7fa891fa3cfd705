//! Training loop shared by teacher, auxiliary and student training.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::losses::{
    check_finite, combine, hint_baseline, in_context, softlabel_baseline, supervision_loss, weighted_pairs, KdTerm,
};
use super::plan::{DistillPlan, Method, Supervision};
use super::teacher::Teacher;
use crate::data::{augment, AugmentSpec, Dataset};
use crate::error::{invalid, Error, Result};
use crate::eval::{accuracy_from_logits, retrieval_report, EvalReport};
use crate::kernels::{hybrid_loss_against, ProbTargets};
use crate::nn::{checkpoint, Mode, Network, ParamStore};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{keyed, Stream};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub augment: Option<AugmentSpec>,
    #[serde(default)]
    pub seed: u64,
    /// `k` of the top-k retrieval precision (capped at the database size).
    #[serde(default = "top_k")]
    pub eval_top_k: usize,
    /// Evaluate after every `eval_every` epochs and after the last; 0 never.
    #[serde(default = "one")]
    pub eval_every: usize,
    /// Write a student checkpoint every this many epochs; 0 never.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Diagnostic mode: evaluation-mode forward, fixed batch order and no
    /// parameter updates, so representations stay fixed across epochs.
    #[serde(default)]
    pub freeze_student: bool,
    #[serde(default = "yes")]
    pub shuffle: bool,
    /// Store measured epoch durations; 0 is written otherwise so that
    /// metrics files are reproducible byte for byte.
    #[serde(default)]
    pub record_wallclock: bool,
}

fn batch() -> usize {
    128
}
fn top_k() -> usize {
    100
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: batch(),
            optimizer: OptimizerConfig::default(),
            augment: None,
            seed: 0,
            eval_top_k: top_k(),
            eval_every: one(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            freeze_student: false,
            shuffle: true,
            record_wallclock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size < 2 {
            return invalid("batch size must be at least 2");
        }
        if self.eval_top_k == 0 {
            return invalid("eval_top_k must be positive");
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return invalid("checkpoint_every needs a checkpoint directory");
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    fn augmentation(&self) -> Option<&AugmentSpec> {
        self.augment.as_ref().filter(|a| !a.is_identity())
    }
}

/// Per-epoch means over batches of each loss component, plus evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// Number of completed epochs (1-based).
    pub epoch: usize,
    pub total_loss: f64,
    /// Weighted transfer loss of every plan pair.
    pub kd: Vec<f64>,
    pub supervision_loss: f64,
    pub eval: Option<EvalReport>,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
    /// Total loss of every optimization step, in order.
    pub step_losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainState {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.history.last()
    }
}

pub const METRICS_FIXED_COLUMNS: [&str; 2] = ["epoch", "total_loss"];

pub fn metrics_header(n_pairs: usize) -> Vec<String> {
    let mut cols: Vec<String> = METRICS_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend((0..n_pairs).map(|i| format!("kd_loss_pair{i}")));
    cols.extend(
        ["supervision_loss", "eval_mAP_e", "eval_mAP_c", "eval_top_k", "eval_accuracy", "wallclock_s"].map(String::from),
    );
    cols
}

/// Writes the metrics log; evaluation cells are empty when not measured.
/// `eval_top_k` is the euclidean top-k precision.
pub fn write_metrics_csv<W: Write>(mut w: W, n_pairs: usize, history: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(w, "{}", metrics_header(n_pairs).join(","))?;
    for m in history {
        let mut row = vec![m.epoch.to_string(), m.total_loss.to_string()];
        row.extend((0..n_pairs).map(|i| m.kd.get(i).copied().unwrap_or(0.0).to_string()));
        row.push(m.supervision_loss.to_string());
        match &m.eval {
            Some(e) => {
                row.extend([e.map_e, e.map_c, e.top_k_e].map(|v| v.to_string()));
                row.push(e.accuracy.map(|a| a.to_string()).unwrap_or_default());
            }
            None => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        row.push(m.wallclock_s.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Retrieval of `queries` against `database` with the network's final
/// transfer-point representation, plus accuracy on `queries` when the
/// network has a head.
pub fn evaluate<T: Scalar>(net: &mut Network<T>, database: &Dataset<T>, queries: &Dataset<T>, top_k: usize, batch_size: usize) -> Result<EvalReport> {
    let db_labels = database.require_labels()?.labels();
    let q_labels = queries.require_labels()?.labels();
    let db = net.representations(database.inputs(), batch_size)?.pop().expect("at least one transfer point");
    let q = net.representations(queries.inputs(), batch_size)?.pop().expect("at least one transfer point");
    let mut report = retrieval_report(&db, db_labels, &q, q_labels, top_k)?;
    if net.has_head() {
        report.accuracy = Some(accuracy_from_logits(&net.logits(queries.inputs(), batch_size)?, q_labels)?);
    }
    Ok(report)
}

/// Learned linear maps from student to teacher widths for the hint baseline.
struct HintMaps<T> {
    params: ParamStore<T>,
    /// `(weight, bias)` indices per plan pair, `None` when widths agree.
    slots: Vec<Option<(usize, usize)>>,
    optimizer: Optimizer<T>,
}

impl<T: Scalar> HintMaps<T> {
    fn new(plan: &DistillPlan, student_dims: &[usize], teacher_dims: &[usize], seed: u64, cfg: &OptimizerConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut slots = Vec::with_capacity(plan.pairs.len());
        for (i, &(t, s)) in plan.pairs.iter().enumerate() {
            let (fs, ft) = (student_dims[s], teacher_dims[t]);
            if fs == ft {
                slots.push(None);
                continue;
            }
            let mut rng = keyed(seed, Stream::Init, &[0x4_1e7, i as u64]);
            let normal = Normal::new(0.0, (1.0 / fs as f64).sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let w = Tensor::from_fn(&[fs, ft], |_| T::c(normal.sample(&mut rng))).with_grad();
            let wi = params.push(format!("hint{i}.weight"), w);
            let bi = params.push(format!("hint{i}.bias"), Tensor::zeros(&[ft]).with_grad());
            slots.push(Some((wi, bi)));
        }
        Ok(Self { params, slots, optimizer: Optimizer::new(cfg.clone())? })
    }
}

struct Cache<T> {
    teacher: Option<Vec<Tensor<T>>>,
    logits: Option<Tensor<T>>,
}

fn batches(n: usize, batch_size: usize, order: &[usize]) -> Vec<Vec<usize>> {
    // A trailing single sample cannot form probabilities or pairs.
    order.chunks(batch_size).filter(|c| c.len() >= 2 || n == 1).map(<[usize]>::to_vec).collect()
}

fn check_compatible<T: Scalar>(
    student: &Network<T>,
    teacher: Option<&Teacher<T>>,
    plan: &DistillPlan,
    train: &Dataset<T>,
) -> Result<()> {
    plan.validate()?;
    let n_student = student.graph().n_transfer_points();
    if plan.method.uses_pairs() || plan.method == Method::Softlabel {
        let Some(teacher) = teacher else {
            return invalid(format!("method {} needs a teacher", plan.method));
        };
        for &(t, s) in &plan.pairs {
            if t >= teacher.n_points() || s >= n_student {
                return invalid(format!(
                    "pair ({t}, {s}) out of range: teacher has {} transfer points, student {n_student}",
                    teacher.n_points()
                ));
            }
        }
        if plan.method == Method::Softlabel && !(teacher.has_logits() && student.has_head()) {
            return invalid("soft-label distillation needs classification heads on teacher and student");
        }
    }
    if plan.supervision.needs_labels() {
        train.require_labels()?;
    }
    if plan.supervision == Supervision::Crossentropy && !student.has_head() {
        return invalid("cross-entropy supervision needs a student with a classification head");
    }
    Ok(())
}

/// Trains `student` on `train` under `plan`, evaluating against `eval`
/// queries (database: `train`) after each epoch.
pub fn fit<T: Scalar>(
    student: &mut Network<T>,
    mut teacher: Option<&mut Teacher<T>>,
    plan: &DistillPlan,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    cfg.validate()?;
    check_compatible(student, teacher.as_deref(), plan, train)?;
    let n = train.len();
    let labels = train.labels().map(|l| l.labels().to_vec());
    let augmentation = cfg.augmentation().cloned();
    let mut state = TrainState { seed: cfg.seed, ..TrainState::default() };
    if cfg.epochs == 0 {
        return Ok(state);
    }

    let mut hint = match (plan.method, teacher.as_deref()) {
        (Method::Hint, Some(t)) => {
            Some(HintMaps::new(plan, &student.graph().representation_dims()?, &t.point_dims()?, cfg.seed, &cfg.optimizer)?)
        }
        _ => None,
    };
    let mut cache = Cache { teacher: None, logits: None };
    if augmentation.is_none() {
        if let Some(t) = teacher.as_deref_mut() {
            if plan.method.uses_pairs() {
                cache.teacher = Some(t.representations(train.inputs(), cfg.batch_size)?);
            }
            if plan.method == Method::Softlabel {
                cache.logits = Some(t.logits(train.inputs(), cfg.batch_size)?);
            }
        }
    }
    let mut optimizer = Optimizer::new(cfg.optimizer.clone())?;
    let mode = if cfg.freeze_student { Mode::Eval } else { Mode::Train };
    let trainable = !cfg.freeze_student;
    let n_pairs = plan.pairs.len();

    for k in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle && !cfg.freeze_student {
            order.shuffle(&mut keyed(cfg.seed, Stream::Shuffle, &[k as u64]));
        }
        let mut sum_total = 0.0;
        let mut sum_kd = vec![0.0; n_pairs];
        let mut sum_sup = 0.0;
        let chunks = batches(n, cfg.batch_size, &order);
        for idx in &chunks {
            let mut x = train.inputs().select_rows(idx);
            if let Some(spec) = &augmentation {
                x = augment(&x, idx, k, spec)?;
            }
            let teacher_reps: Option<Vec<Tensor<T>>> = match (&cache.teacher, teacher.as_deref_mut()) {
                (Some(all), _) => Some(all.iter().map(|t| t.select_rows(idx)).collect()),
                (None, Some(t)) if plan.method.uses_pairs() => Some(t.representations(&x, cfg.batch_size)?),
                _ => None,
            };
            let teacher_logits = match (&cache.logits, teacher.as_deref_mut()) {
                (Some(all), _) => Some(all.select_rows(idx)),
                (None, Some(t)) if plan.method == Method::Softlabel => Some(t.logits(&x, cfg.batch_size)?),
                _ => None,
            };
            let batch_labels: Option<Vec<usize>> = labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());

            let tape = Tape::new();
            let pass = in_context(student.forward(&tape, &x, mode, trainable), || format!("student {} forward", student.graph().name))?;
            let hint_bound: Vec<Var<'_, T>> = match &hint {
                Some(h) => h.params.iter().map(|p| tape.variable(&p.tensor)).collect(),
                None => Vec::new(),
            };
            let kd: KdTerm<'_, T> = match plan.method {
                Method::Proposed | Method::PktSingle | Method::PktMulti => {
                    let reps = teacher_reps.as_ref().expect("teacher representations");
                    weighted_pairs(plan, k, |i| {
                        let (t, s) = plan.pairs[i];
                        hybrid_loss_against(&ProbTargets::new(&reps[t], plan.degree)?, &pass.transfer[s])
                    })?
                }
                Method::Hint => {
                    let reps = teacher_reps.as_ref().expect("teacher representations");
                    let maps = hint.as_ref().expect("hint maps");
                    weighted_pairs(plan, k, |i| {
                        let (t, s) = plan.pairs[i];
                        let proj = maps.slots[i].map(|(w, b)| (&hint_bound[w], &hint_bound[b]));
                        hint_baseline(&reps[t], &pass.transfer[s], proj)
                    })?
                }
                Method::Softlabel => {
                    let tl = teacher_logits.as_ref().expect("teacher logits");
                    let sl = pass.logits.as_ref().expect("student head");
                    let loss = in_context(softlabel_baseline(tl, sl, plan.temperature), || "soft-label term".into())?;
                    check_finite(&loss, || "soft-label term".into())?;
                    let mut per_pair = vec![T::zero(); n_pairs];
                    if let Some(last) = per_pair.last_mut() {
                        *last = loss.item();
                    }
                    KdTerm { loss: Some(loss), per_pair }
                }
                Method::None => KdTerm { loss: None, per_pair: vec![T::zero(); n_pairs] },
            };
            let sup = match &batch_labels {
                Some(l) => in_context(
                    supervision_loss(&plan.supervision, pass.transfer.last().expect("transfer point"), pass.logits.as_ref(), l),
                    || "supervision term".into(),
                )?,
                None => None,
            };
            if let Some(s) = &sup {
                check_finite(s, || "supervision term".into())?;
            }
            let total = combine(&tape, &[kd.loss, sup])?;
            check_finite(&total, || "total loss".into())?;

            if trainable && total.requires_grad() {
                let grads = tape.backward(total)?;
                student.accumulate(&grads, &pass)?;
                optimizer.step(student.params_mut())?;
                student.params_mut().zero_grad();
                if let Some(h) = hint.as_mut() {
                    if !h.params.is_empty() {
                        h.params.accumulate(&grads, &hint_bound)?;
                        h.optimizer.step(&mut h.params)?;
                        h.params.zero_grad();
                    }
                }
            }
            let total_v = total.item().to_f64_lossy();
            state.step_losses.push(total_v);
            sum_total += total_v;
            for (acc, v) in sum_kd.iter_mut().zip(&kd.per_pair) {
                *acc += v.to_f64_lossy();
            }
            sum_sup += sup.map(|s| s.item().to_f64_lossy()).unwrap_or(0.0);
        }
        let nb = chunks.len().max(1) as f64;
        let epoch = k + 1;
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let eval_report = match eval {
            Some(q) if due => Some(evaluate(student, train, q, cfg.eval_top_k, cfg.batch_size)?),
            _ => None,
        };
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            let dir = cfg.checkpoint_dir.as_ref().expect("validated");
            let path = dir.join(format!("{}_epoch{epoch:03}.ckpt", student.graph().name));
            checkpoint::save(student, &path)?;
            state.checkpoints.push(path);
        }
        state.history.push(EpochMetrics {
            epoch,
            total_loss: sum_total / nb,
            kd: sum_kd.iter().map(|v| v / nb).collect(),
            supervision_loss: sum_sup / nb,
            eval: eval_report,
            wallclock_s: if cfg.record_wallclock { started.elapsed().as_secs_f64() } else { 0.0 },
        });
        state.epoch = epoch;
    }
    Ok(state)
}

/// Supervised training with cross-entropy on the network's head.
pub fn train_teacher<T: Scalar>(net: &mut Network<T>, train: &Dataset<T>, eval: Option<&Dataset<T>>, cfg: &TrainConfig) -> Result<TrainState> {
    let plan = DistillPlan::new(Method::None, Vec::new()).with_supervision(Supervision::Crossentropy);
    fit(net, None, &plan, train, eval, cfg)
}

/// Single-layer probability matching from the teacher's last transfer
/// point (its penultimate layer when the head is dropped) to the
/// auxiliary's last transfer point.
pub fn train_auxiliary<T: Scalar>(
    teacher: &mut Teacher<T>,
    aux: &mut Network<T>,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    degree: u32,
) -> Result<TrainState> {
    let plan = auxiliary_plan(teacher, aux, degree)?;
    fit(aux, Some(teacher), &plan, train, eval, cfg)
}

pub fn auxiliary_plan<T: Scalar>(teacher: &Teacher<T>, aux: &Network<T>, degree: u32) -> Result<DistillPlan> {
    let (t, s) = (teacher.n_points(), aux.graph().n_transfer_points());
    if t == 0 || s == 0 {
        return invalid("teacher and auxiliary need at least one transfer point");
    }
    let mut plan = DistillPlan::new(Method::PktSingle, vec![(t - 1, s - 1)]);
    plan.degree = degree;
    Ok(plan)
}

/// Distils `student` from a frozen teacher (typically the auxiliary).
pub fn distill_student<T: Scalar>(
    teacher: Option<&mut Teacher<T>>,
    student: &mut Network<T>,
    plan: &DistillPlan,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    fit(student, teacher, plan, train, eval, cfg)
}
