//! Run configuration: TOML file schema, flag overrides and validation.

use std::fs;
use std::path::{Path, PathBuf};

use flowkd::data::{BlobSpec, GratingSpec, HogSpec, ImageBlobSpec};
use flowkd::distill::{DistillPlan, Method, Supervision, TrainConfig, DEFAULT_CONTRASTIVE_WEIGHT, DEFAULT_MARGIN};
use flowkd::kernels::KernelKind;
use flowkd::nn::Arch;
use flowkd::optim::OptimizerConfig;
use serde::Deserialize;

use crate::args::{Common, TeacherFlags, TrainFlags};
use crate::error::{config, CliError, CliResult};

pub const DEFAULT_EPOCHS: usize = 25;

/// Contents of a `--config` file. Every section is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub f32: Option<bool>,
    pub data: Option<DataSection>,
    pub model: Option<ModelSection>,
    pub train: Option<TrainSection>,
    pub teacher: Option<TeacherSection>,
    pub plan: Option<PlanSection>,
    pub eval: Option<EvalSection>,
    pub flow: Option<FlowSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    ImageBlobs,
    Gratings,
    Cifar10,
}

/// `source` picks the generator or loader; the remaining keys are its
/// parameters. `seed` defaults to the run seed.
#[derive(Clone, Debug, Deserialize)]
pub struct DataSection {
    pub source: DataSource,
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub params: toml::Table,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub optimizer: Option<OptimizerConfig>,
    pub augment: Option<flowkd::data::AugmentSpec>,
    pub eval_top_k: Option<usize>,
    pub eval_every: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub freeze_student: Option<bool>,
    pub shuffle: Option<bool>,
    pub record_wallclock: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    pub checkpoint: Option<PathBuf>,
    pub hog: Option<HogSpec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Transfer point `i` of the teacher to transfer point `i` of the student.
    #[default]
    OneToOne,
    /// Pairs chosen by matching mutual-information flow vectors.
    Flow,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub method: Option<Method>,
    pub alpha_init: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha_override: Option<Vec<f64>>,
    pub degree: Option<u32>,
    pub temperature: Option<f64>,
    pub supervision: Option<Supervision>,
    /// Explicit `(teacher point, student point)` pairs; overrides `pairing`.
    pub pairs: Option<Vec<(usize, usize)>>,
    pub pairing: Option<Pairing>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub top_k: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub checkpoints: Option<Vec<PathBuf>>,
    pub kernel: Option<KernelKind>,
}

/// Concrete transfer-set description.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Blobs(BlobSpec),
    ImageBlobs(ImageBlobSpec),
    Gratings(GratingSpec),
    Cifar10 { dir: PathBuf, train_per_class: Option<usize>, test_per_class: Option<usize>, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TeacherSource {
    Checkpoint(PathBuf),
    Hog(HogSpec),
}

/// Settings common to all subcommands after merging file and flags.
#[derive(Clone, Debug)]
pub struct Base {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub f32: bool,
    pub file: FileConfig,
}

impl Base {
    pub fn resolve(common: &Common, command: &str) -> CliResult<Self> {
        let file = match &common.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };
        let seed = common.seed.or(file.seed).unwrap_or(0);
        let out = common.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| Path::new("runs").join(command));
        let threads = common.threads.or(file.threads).unwrap_or(1);
        if threads == 0 {
            return config("--threads must be at least 1");
        }
        let f32 = common.f32 || file.f32.unwrap_or(false);
        Ok(Self { seed, out, threads, f32, file })
    }

    pub fn data(&self) -> CliResult<DataSpec> {
        let Some(section) = &self.file.data else {
            let mut spec = ImageBlobSpec::new(50, 10);
            spec.size = 8;
            spec.jitter = 1;
            spec.seed = self.seed;
            spec.task_seed = self.seed;
            return Ok(DataSpec::ImageBlobs(spec));
        };
        let seed = section.seed.unwrap_or(self.seed);
        let mut params = section.params.clone();
        let spec = match section.source {
            DataSource::Blobs => {
                params.insert("seed".into(), toml_u64(seed)?);
                let spec: BlobSpec = from_table(params, "data")?;
                spec.validate()?;
                DataSpec::Blobs(spec)
            }
            DataSource::ImageBlobs => {
                params.insert("seed".into(), toml_u64(seed)?);
                if !params.contains_key("task_seed") {
                    params.insert("task_seed".into(), toml_u64(seed)?);
                }
                let spec: ImageBlobSpec = from_table(params, "data")?;
                spec.validate()?;
                DataSpec::ImageBlobs(spec)
            }
            DataSource::Gratings => {
                params.insert("seed".into(), toml_u64(seed)?);
                let spec: GratingSpec = from_table(params, "data")?;
                spec.validate()?;
                DataSpec::Gratings(spec)
            }
            DataSource::Cifar10 => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Cifar {
                    dir: PathBuf,
                    train_per_class: Option<usize>,
                    test_per_class: Option<usize>,
                }
                let c: Cifar = from_table(params, "data")?;
                if !c.dir.is_dir() {
                    return Err(CliError::Data(format!("CIFAR-10 directory {} does not exist", c.dir.display())));
                }
                DataSpec::Cifar10 { dir: c.dir, train_per_class: c.train_per_class, test_per_class: c.test_per_class, seed }
            }
        };
        Ok(spec)
    }

    pub fn arch(&self, flag: Option<&str>, default: &str) -> CliResult<Arch> {
        let name = flag.map(str::to_owned).or_else(|| self.file.model.as_ref().and_then(|m| m.arch.clone()));
        Ok(name.as_deref().unwrap_or(default).parse::<Arch>()?)
    }

    pub fn train(&self, flags: &TrainFlags) -> CliResult<TrainConfig> {
        let s = self.file.train.clone().unwrap_or_default();
        let mut cfg = TrainConfig::new(flags.epochs.or(s.epochs).unwrap_or(DEFAULT_EPOCHS));
        cfg.seed = self.seed;
        if let Some(b) = flags.batch_size.or(s.batch_size) {
            cfg.batch_size = b;
        }
        if let Some(o) = s.optimizer {
            cfg.optimizer = o;
        }
        if let Some(lr) = flags.lr {
            cfg.optimizer.learning_rate = lr;
        }
        cfg.augment = s.augment;
        if let Some(mut a) = cfg.augment.take() {
            a.seed = self.seed;
            cfg.augment = Some(a);
        }
        if let Some(k) = s.eval_top_k {
            cfg.eval_top_k = k;
        }
        if let Some(e) = s.eval_every {
            cfg.eval_every = e;
        }
        cfg.checkpoint_every = flags.checkpoint_every.or(s.checkpoint_every).unwrap_or(0);
        if cfg.checkpoint_every > 0 {
            cfg.checkpoint_dir = Some(self.out.join("checkpoints"));
        }
        cfg.freeze_student = s.freeze_student.unwrap_or(false);
        cfg.shuffle = s.shuffle.unwrap_or(true);
        cfg.record_wallclock = s.record_wallclock.unwrap_or(false);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn teacher(&self, flags: &TeacherFlags) -> CliResult<TeacherSource> {
        let section = self.file.teacher.clone().unwrap_or_default();
        let source = if flags.hog {
            TeacherSource::Hog(section.hog.unwrap_or_default())
        } else if let Some(p) = &flags.teacher {
            TeacherSource::Checkpoint(p.clone())
        } else {
            match (section.checkpoint, section.hog) {
                (Some(_), Some(_)) => return config("[teacher] takes either checkpoint or hog, not both"),
                (Some(p), None) => TeacherSource::Checkpoint(p),
                (None, Some(h)) => TeacherSource::Hog(h),
                (None, None) => return config("a teacher is required: pass --teacher PATH or --hog, or set [teacher]"),
            }
        };
        match &source {
            TeacherSource::Checkpoint(p) => existing(p, "teacher checkpoint")?,
            TeacherSource::Hog(h) => {
                if h.cells.0 == 0 || h.cells.1 == 0 || h.orientation_bins == 0 {
                    return config("HoG needs at least one cell per axis and one orientation bin");
                }
            }
        }
        Ok(source)
    }

    /// Distillation plan before layer pairing; `pairs` is filled by the caller.
    pub fn plan(&self, args: &crate::args::DistillArgs) -> CliResult<(DistillPlan, Option<Vec<(usize, usize)>>, Pairing)> {
        let s = self.file.plan.clone().unwrap_or_default();
        let method = match &args.method {
            Some(m) => m.parse::<Method>()?,
            None => s.method.unwrap_or_default(),
        };
        let mut plan = DistillPlan::new(method, Vec::new());
        plan.alpha_init = args.alpha_init.or(s.alpha_init).unwrap_or(plan.alpha_init);
        plan.gamma = args.gamma.or(s.gamma).unwrap_or(plan.gamma);
        plan.alpha_override = s.alpha_override;
        plan.degree = args.degree.or(s.degree).unwrap_or(plan.degree);
        plan.temperature = args.temperature.or(s.temperature).unwrap_or(plan.temperature);
        plan.supervision = s.supervision.unwrap_or_else(Supervision::contrastive);
        if args.margin.is_some() || args.contrastive_weight.is_some() {
            match &mut plan.supervision {
                Supervision::Contrastive { margin, weight } => {
                    *margin = args.margin.unwrap_or(*margin);
                    *weight = args.contrastive_weight.unwrap_or(*weight);
                }
                _ => return config("--margin/--contrastive-weight need contrastive supervision"),
            }
        }
        if let Supervision::Contrastive { margin, weight } = plan.supervision {
            if !(margin > 0.0 && margin.is_finite()) || !(weight >= 0.0 && weight.is_finite()) {
                return config(format!(
                    "contrastive margin must be positive and weight non-negative (defaults {DEFAULT_MARGIN}, {DEFAULT_CONTRASTIVE_WEIGHT})"
                ));
            }
        }
        if plan.degree == 0 {
            return config("kernel degree must be at least 1");
        }
        if !(plan.temperature > 0.0 && plan.temperature.is_finite()) {
            return config("temperature must be positive");
        }
        if !(plan.alpha_init > 0.0 && plan.alpha_init.is_finite()) {
            return config("alpha_init must be positive");
        }
        if !(plan.gamma > 0.0 && plan.gamma < 1.0) {
            return config(format!("gamma must lie in (0, 1), got {}", plan.gamma));
        }
        let pairing = match &args.pairing {
            Some(p) => match p.as_str() {
                "one_to_one" => Pairing::OneToOne,
                "flow" => Pairing::Flow,
                other => return config(format!("unknown pairing {other:?} (one_to_one or flow)")),
            },
            None => s.pairing.unwrap_or_default(),
        };
        Ok((plan, s.pairs, pairing))
    }

    pub fn flow_kernel(&self, flag: Option<&str>) -> CliResult<KernelKind> {
        let kernel = match flag {
            Some("cosine") => KernelKind::Cosine,
            Some("t_student") | Some("tstudent") => KernelKind::TStudent { degree: 1 },
            Some(other) => return config(format!("unknown kernel {other:?} (cosine or t_student)")),
            None => self.file.flow.as_ref().and_then(|f| f.kernel).unwrap_or_default(),
        };
        kernel.validate()?;
        Ok(kernel)
    }
}

/// A missing input file is a data error, not a configuration error.
pub fn existing(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} {} does not exist", path.display())))
    }
}

fn load_file(path: &Path) -> CliResult<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn from_table<T: serde::de::DeserializeOwned>(table: toml::Table, section: &str) -> CliResult<T> {
    T::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(format!("[{section}]: {e}")))
}

fn toml_u64(v: u64) -> CliResult<toml::Value> {
    i64::try_from(v).map(toml::Value::Integer).map_err(|_| CliError::Config(format!("seed {v} does not fit a TOML integer")))
}
