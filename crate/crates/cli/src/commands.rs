//! Subcommand implementations. Each command resolves and validates its
//! whole configuration, loads data and models, and only then creates the
//! output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flowkd::data::{load_cifar10, Dataset, Split};
use flowkd::distill::{
    distill_student, evaluate, train_auxiliary, train_teacher, write_metrics_csv, DistillPlan, Method, Supervision, Teacher,
    TrainConfig, TrainState,
};
use flowkd::eval::EvalReport;
use flowkd::infoflow::{flow_divergence, flow_vector_from_representations, match_layers, ncc_probe, FLOW_BATCH};
use flowkd::kernels::KernelKind;
use flowkd::nn::{checkpoint, Arch, Network};
use flowkd::rng::{stream, Stream};
use flowkd::Scalar;

use crate::args::{Command, DistillArgs, EvalArgs, FlowReportArgs, GradcheckArgs, TrainAuxArgs, TrainTeacherArgs};
use crate::config::{existing, Base, DataSpec, Pairing, TeacherSource};
use crate::error::{config, CliError, CliResult};
use crate::gradsuite;

pub const MODEL_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const FLOW_FILE: &str = "flow.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Runs a generic command in the selected precision.
macro_rules! dispatch {
    ($base:expr, $f:ident, $args:expr) => {
        if $base.f32 {
            $f::<f32>(&$base, $args)
        } else {
            $f::<f64>(&$base, $args)
        }
    };
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::TrainTeacher(a) => {
            let base = Base::resolve(&a.common, "train-teacher")?;
            dispatch!(base, train_teacher_cmd, &a)
        }
        Command::TrainAux(a) => {
            let base = Base::resolve(&a.common, "train-aux")?;
            dispatch!(base, train_aux_cmd, &a)
        }
        Command::Distill(a) => {
            let base = Base::resolve(&a.common, "distill")?;
            dispatch!(base, distill_cmd, &a)
        }
        Command::Eval(a) => {
            let base = Base::resolve(&a.common, "eval")?;
            dispatch!(base, eval_cmd, &a)
        }
        Command::FlowReport(a) => {
            let base = Base::resolve(&a.common, "flow-report")?;
            dispatch!(base, flow_report_cmd, &a)
        }
        Command::Gradcheck(a) => {
            let base = Base::resolve(&a.common, "gradcheck")?;
            gradcheck_cmd(&base, &a)
        }
    }
}

pub fn load_data<T: Scalar>(spec: &DataSpec) -> CliResult<(Dataset<T>, Dataset<T>)> {
    Ok(match spec {
        DataSpec::Blobs(s) => (s.generate(Split::Train)?, s.generate(Split::Test)?),
        DataSpec::ImageBlobs(s) => (s.generate(Split::Train)?, s.generate(Split::Test)?),
        DataSpec::Gratings(s) => (s.generate(Split::Train)?, s.generate(Split::Test)?),
        DataSpec::Cifar10 { dir, train_per_class, test_per_class, seed } => {
            load_cifar10(dir, *train_per_class, *test_per_class, *seed)?
        }
    })
}

fn classes<T: Scalar>(data: &Dataset<T>) -> CliResult<usize> {
    Ok(data.require_labels()?.classes())
}

fn init_network<T: Scalar>(arch: &Arch, data: &Dataset<T>, head: Option<usize>, seed: u64) -> CliResult<Network<T>> {
    let graph = arch.graph(data.sample_shape(), head)?;
    Ok(Network::init(graph, &mut stream(seed, Stream::Init))?)
}

fn load_network<T: Scalar>(path: &Path) -> CliResult<Network<T>> {
    existing(path, "checkpoint")?;
    Ok(checkpoint::load(path)?)
}

fn load_teacher<T: Scalar>(source: &TeacherSource, data: &Dataset<T>) -> CliResult<Teacher<T>> {
    match source {
        TeacherSource::Checkpoint(p) => {
            let net: Network<T> = load_network(p)?;
            if net.graph().input_shape != data.sample_shape() {
                return config(format!(
                    "teacher expects inputs {:?}, data has {:?}",
                    net.graph().input_shape,
                    data.sample_shape()
                ));
            }
            Ok(Teacher::Network(net))
        }
        TeacherSource::Hog(spec) => {
            if !data.is_image() {
                return config("the HoG teacher needs image data");
            }
            Ok(Teacher::Hog(spec.clone()))
        }
    }
}

/// Creates `out` (after all validation) and returns it.
fn prepare_out(base: &Base, cfg: Option<&TrainConfig>) -> CliResult<PathBuf> {
    let io = |e: std::io::Error| CliError::Config(format!("cannot create {}: {e}", base.out.display()));
    fs::create_dir_all(&base.out).map_err(io)?;
    if let Some(dir) = cfg.and_then(|c| c.checkpoint_dir.as_ref()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    Ok(base.out.clone())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn save_outputs<T: Scalar>(out: &Path, net: &Network<T>, n_pairs: usize, state: &TrainState) -> CliResult<()> {
    checkpoint::save(net, &out.join(MODEL_FILE))?;
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, n_pairs, &state.history).expect("writing to memory");
    write_file(&out.join(METRICS_FILE), &csv)
}

fn summarize(what: &str, out: &Path, state: &TrainState) {
    match state.last() {
        Some(m) => {
            let eval = m.eval.as_ref().map(|e| format!(", mAP(e) {:.4}, mAP(c) {:.4}", e.map_e, e.map_c)).unwrap_or_default();
            println!("{what}: {} epochs, final loss {:.6}{eval}", m.epoch, m.total_loss);
        }
        None => println!("{what}: 0 epochs"),
    }
    println!("wrote {}", out.display());
}

fn train_teacher_cmd<T: Scalar>(base: &Base, a: &TrainTeacherArgs) -> CliResult<()> {
    let spec = base.data()?;
    let arch = base.arch(a.arch.as_deref(), "cnn1-h")?;
    let cfg = base.train(&a.train)?;
    let (train, test) = load_data::<T>(&spec)?;
    let mut net = init_network(&arch, &train, Some(classes(&train)?), base.seed)?;
    let out = prepare_out(base, Some(&cfg))?;
    let state = train_teacher(&mut net, &train, Some(&test), &cfg)?;
    save_outputs(&out, &net, 0, &state)?;
    summarize("teacher", &out, &state);
    Ok(())
}

fn train_aux_cmd<T: Scalar>(base: &Base, a: &TrainAuxArgs) -> CliResult<()> {
    let spec = base.data()?;
    let arch = base.arch(a.arch.as_deref(), "cnn1-a")?;
    let cfg = base.train(&a.train)?;
    let source = base.teacher(&a.teacher)?;
    let degree = a.degree.or(base.file.plan.as_ref().and_then(|p| p.degree)).unwrap_or(1);
    if degree == 0 {
        return config("kernel degree must be at least 1");
    }
    let kernel = base.flow_kernel(None)?;
    let (train, test) = load_data::<T>(&spec)?;
    let mut teacher = load_teacher(&source, &train)?;
    let mut aux = init_network(&arch, &train, None, base.seed)?;
    let out = prepare_out(base, Some(&cfg))?;
    let state = train_auxiliary(&mut teacher, &mut aux, &train, Some(&test), &cfg, degree)?;
    save_outputs(&out, &aux, 1, &state)?;
    if a.flow_report {
        let rows = flow_rows(&mut aux, &train, &test, kernel)?;
        write_file(&out.join(FLOW_FILE), flow_csv(&[(aux.graph().name.clone(), rows)]).as_bytes())?;
    }
    summarize("auxiliary", &out, &state);
    Ok(())
}

fn distill_cmd<T: Scalar>(base: &Base, a: &DistillArgs) -> CliResult<()> {
    let spec = base.data()?;
    let arch = base.arch(a.arch.as_deref(), "cnn1")?;
    let mut cfg = base.train(&a.train)?;
    cfg.freeze_student |= a.freeze_student;
    let (mut plan, explicit_pairs, pairing) = base.plan(a)?;
    let needs_teacher = plan.method != Method::None;
    let source = if needs_teacher { Some(base.teacher(&a.teacher)?) } else { None };
    let kernel = base.flow_kernel(None)?;

    let (train, test) = load_data::<T>(&spec)?;
    let n_classes = classes(&train)?;
    let head = (plan.supervision == Supervision::Crossentropy || plan.method == Method::Softlabel).then_some(n_classes);
    let mut student = init_network(&arch, &train, head, base.seed)?;
    let mut teacher = source.as_ref().map(|s| load_teacher(s, &train)).transpose()?;
    plan.pairs = match (explicit_pairs, plan.method.uses_pairs(), teacher.as_mut()) {
        (Some(p), _, _) => p,
        (None, false, _) | (None, _, None) => Vec::new(),
        (None, true, Some(t)) => pair_layers(pairing, t, &mut student, &train, kernel, cfg.batch_size)?,
    };
    if plan.method == Method::None && plan.pairs.is_empty() {
        // Zero-valued KD columns keep the metrics schema of distilled runs.
        plan.pairs = (0..student.graph().n_transfer_points()).map(|i| (i, i)).collect();
    }
    if plan.method == Method::Softlabel && plan.pairs.is_empty() {
        // One metrics column carries the soft-label term.
        plan.pairs = vec![(0, 0)];
    }
    plan.validate()?;
    if let Some(ov) = &plan.alpha_override {
        if ov.len() != plan.pairs.len() {
            return config(format!("alpha_override has {} entries for {} pairs", ov.len(), plan.pairs.len()));
        }
    }
    let out = prepare_out(base, Some(&cfg))?;
    let state = distill_student(teacher.as_mut(), &mut student, &plan, &train, Some(&test), &cfg)?;
    save_outputs(&out, &student, plan.pairs.len(), &state)?;
    let pairs: Vec<String> = plan.pairs.iter().map(|(t, s)| format!("{t}->{s}")).collect();
    println!("method {}, pairs (teacher->student) [{}]", plan.method, pairs.join(", "));
    summarize("student", &out, &state);
    Ok(())
}

/// `(teacher point, student point)` pairs for probability matching.
fn pair_layers<T: Scalar>(
    pairing: Pairing,
    teacher: &mut Teacher<T>,
    student: &mut Network<T>,
    train: &Dataset<T>,
    kernel: KernelKind,
    batch_size: usize,
) -> CliResult<Vec<(usize, usize)>> {
    let (nt, ns) = (teacher.n_points(), student.graph().n_transfer_points());
    match pairing {
        Pairing::OneToOne => {
            if nt != ns {
                return config(format!(
                    "one_to_one pairing needs equal transfer-point counts (teacher {nt}, student {ns}); use pairing = \"flow\" or explicit pairs"
                ));
            }
            Ok((0..ns).map(|i| (i, i)).collect())
        }
        Pairing::Flow => {
            let labels = train.require_labels()?;
            let t_reps = teacher.representations(train.inputs(), batch_size)?;
            let s_reps = student.representations(train.inputs(), batch_size)?;
            let t_flow = flow_vector_from_representations(&t_reps, labels, kernel, FLOW_BATCH, &teacher.name())?;
            let s_flow = flow_vector_from_representations(&s_reps, labels, kernel, FLOW_BATCH, &student.graph().name)?;
            let m = match_layers(&s_flow, &t_flow)?;
            Ok(DistillPlan::from_matching(Method::Proposed, &m.kappa).pairs)
        }
    }
}

fn eval_cmd<T: Scalar>(base: &Base, a: &EvalArgs) -> CliResult<()> {
    let section = base.file.eval.clone().unwrap_or_default();
    let Some(path) = a.checkpoint.clone().or(section.checkpoint) else {
        return config("eval needs --checkpoint PATH or [eval] checkpoint");
    };
    existing(&path, "checkpoint")?;
    let top_k = a.top_k.or(section.top_k).unwrap_or(100);
    if top_k == 0 {
        return config("top_k must be positive");
    }
    let spec = base.data()?;
    let batch = base.file.train.as_ref().and_then(|t| t.batch_size).unwrap_or(128).max(2);
    let (train, test) = load_data::<T>(&spec)?;
    let mut net: Network<T> = load_network(&path)?;
    check_input(&net, &train)?;
    let report = evaluate(&mut net, &train, &test, top_k, batch)?;
    let out = prepare_out(base, None)?;
    let csv = eval_csv(&net.graph().name, &report);
    write_file(&out.join(EVAL_FILE), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

/// Quotes a field that contains a separator, such as `mlp:16,8`.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn eval_csv(model: &str, r: &EvalReport) -> String {
    let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
    format!(
        "model,mAP_e,mAP_c,top_k,top_k_e,top_k_c,accuracy\n{},{},{},{},{},{},{acc}\n",
        csv_field(model),
        r.map_e, r.map_c, r.top_k, r.top_k_e, r.top_k_c
    )
}

fn check_input<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> CliResult<()> {
    if net.graph().input_shape != data.sample_shape() {
        return config(format!("model expects inputs {:?}, data has {:?}", net.graph().input_shape, data.sample_shape()));
    }
    Ok(())
}

/// Per transfer point: QMI on the training split, NCC accuracy fitted on the
/// training split and scored on the test split.
pub fn flow_rows<T: Scalar>(net: &mut Network<T>, train: &Dataset<T>, test: &Dataset<T>, kernel: KernelKind) -> CliResult<Vec<(f64, f64)>> {
    let (tl, ql) = (train.require_labels()?, test.require_labels()?);
    let train_reps = net.representations(train.inputs(), FLOW_BATCH)?;
    let test_reps = net.representations(test.inputs(), FLOW_BATCH)?;
    let flow = flow_vector_from_representations(&train_reps, tl, kernel, FLOW_BATCH, &net.graph().name)?;
    let mut rows = Vec::with_capacity(flow.len());
    for (i, q) in flow.omega.iter().enumerate() {
        rows.push((q.to_f64_lossy(), ncc_probe(&train_reps[i], tl, &test_reps[i], ql)?));
    }
    Ok(rows)
}

pub fn flow_csv(models: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = String::from("model,layer_index,qmi,ncc_accuracy\n");
    for (name, rows) in models {
        for (i, (q, ncc)) in rows.iter().enumerate() {
            s.push_str(&format!("{},{i},{q},{ncc}\n", csv_field(name)));
        }
    }
    s
}

fn flow_report_cmd<T: Scalar>(base: &Base, a: &FlowReportArgs) -> CliResult<()> {
    let paths = if a.checkpoint.is_empty() {
        base.file.flow.as_ref().and_then(|f| f.checkpoints.clone()).unwrap_or_default()
    } else {
        a.checkpoint.clone()
    };
    if paths.is_empty() || paths.len() > 2 {
        return config("flow-report takes one or two checkpoints (--checkpoint PATH, student first)");
    }
    for p in &paths {
        existing(p, "checkpoint")?;
    }
    let kernel = base.flow_kernel(a.kernel.as_deref())?;
    let spec = base.data()?;
    let (train, test) = load_data::<T>(&spec)?;
    let mut nets = Vec::new();
    for p in &paths {
        let net: Network<T> = load_network(p)?;
        check_input(&net, &train)?;
        nets.push(net);
    }
    let mut models: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (k, net) in nets.iter_mut().enumerate() {
        let mut name = net.graph().name.clone();
        if k == 1 && name == models[0].0 {
            name.push_str("#2");
        }
        models.push((name, flow_rows(net, &train, &test, kernel)?));
    }
    let out = prepare_out(base, None)?;
    let csv = flow_csv(&models);
    write_file(&out.join(FLOW_FILE), csv.as_bytes())?;
    print!("{csv}");
    if models.len() == 2 {
        let vec_of = |i: usize| flowkd::infoflow::FlowVector::<f64>::new(models[i].1.iter().map(|r| r.0).collect(), models[i].0.clone());
        let (s, t) = (vec_of(0), vec_of(1));
        let m = match_layers(&s, &t)?;
        println!("kappa ({} -> {}): {:?}", s.source, t.source, m.kappa);
        println!("flow divergence: {}", flow_divergence(&s, &t, &m)?);
    }
    Ok(())
}

fn gradcheck_cmd(base: &Base, a: &GradcheckArgs) -> CliResult<()> {
    if base.f32 {
        return config("gradient checks run in 64-bit only");
    }
    let trials = a.trials.unwrap_or(20);
    let tol = a.tol.unwrap_or(gradsuite::TOLERANCE);
    if trials == 0 || !(tol > 0.0) {
        return config("--trials must be positive and --tol > 0");
    }
    let results = gradsuite::run(trials, base.seed, tol)?;
    let out = prepare_out(base, None)?;
    let mut csv = String::from("loss,trials,max_rel_error,passed\n");
    for r in &results {
        csv.push_str(&format!("{},{},{},{}\n", r.name, r.trials, r.max_rel_error, r.passed));
    }
    write_file(&out.join(GRADCHECK_FILE), csv.as_bytes())?;
    let mut stdout = std::io::stdout().lock();
    for r in &results {
        let _ = writeln!(stdout, "{:<20} trials {:>3}  max rel error {:.3e}  {}", r.name, r.trials, r.max_rel_error, if r.passed { "ok" } else { "FAIL" });
    }
    match results.iter().find(|r| !r.passed) {
        Some(r) => Err(CliError::Numerical(format!("{} gradient exceeds tolerance {tol:e}", r.name))),
        None => Ok(()),
    }
}
