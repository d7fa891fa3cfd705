//! Randomized finite-difference checks of every training loss.

use flowkd::distill::{contrastive_loss, distill_loss, hint_baseline, softlabel_baseline, DistillPlan, Method};
use flowkd::gradcheck::gradient_check;
use flowkd::kernels::hybrid_layer_loss;
use flowkd::rng::{keyed, Stream};
use flowkd::{Result, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LossCheck {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.random_range(-1.0..1.0))
}

pub fn run(trials: usize, seed: u64, tol: f64) -> Result<Vec<LossCheck>> {
    let mut out = Vec::new();
    let mut record = |name: &'static str, errors: Vec<f64>| {
        let max = errors.iter().copied().fold(0.0, f64::max);
        out.push(LossCheck { name, trials: errors.len(), max_rel_error: max, passed: max <= tol });
    };

    let mut rng = keyed(seed, Stream::Data, &[0x9c_01]);
    let mut errs = Vec::new();
    for _ in 0..trials {
        let n = rng.random_range(3..=8);
        // One-dimensional features turn the cosine kernel into a sign
        // function whose cross-sign entries sit at the probability floor.
        let (ft, fs) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let degree = rng.random_range(1..=3);
        let teacher = random(&[n, ft], &mut rng, 1.0);
        let student = random(&[n, fs], &mut rng, 1.0);
        errs.push(gradient_check(|_, v| hybrid_layer_loss(&teacher, &v[0], degree), &[student], STEP, tol)?.max_rel_error());
    }
    record("hybrid_layer_loss", errs);

    let mut rng = keyed(seed, Stream::Data, &[0x9c_02]);
    let mut errs = Vec::new();
    for _ in 0..trials {
        let n = rng.random_range(3..=8);
        let pairs = rng.random_range(1..=3);
        let teachers: Vec<Tensor<f64>> = (0..pairs).map(|_| random(&[n, rng.random_range(2..=5)], &mut rng, 1.0)).collect();
        let students: Vec<Tensor<f64>> = (0..pairs).map(|_| random(&[n, rng.random_range(2..=5)], &mut rng, 1.0)).collect();
        let epoch = rng.random_range(0..10);
        let plan = DistillPlan::one_to_one(Method::Proposed, pairs);
        let report = gradient_check(
            |_, v| distill_loss(&plan, &teachers, v, epoch).map(|kd| kd.loss.expect("active pairs")),
            &students,
            STEP,
            tol,
        )?;
        errs.push(report.max_rel_error());
    }
    record("distill_loss", errs);

    let mut rng = keyed(seed, Stream::Data, &[0x9c_03]);
    let mut errs = Vec::new();
    for _ in 0..trials {
        let (n, c) = (rng.random_range(1..=6), rng.random_range(2..=6));
        let teacher = random(&[n, c], &mut rng, 3.0);
        let student = random(&[n, c], &mut rng, 3.0);
        let t = rng.random_range(0.5..4.0);
        errs.push(gradient_check(|_, v| softlabel_baseline(&teacher, &v[0], t), &[student], STEP, tol)?.max_rel_error());
    }
    record("softlabel_baseline", errs);

    let mut rng = keyed(seed, Stream::Data, &[0x9c_04]);
    let mut errs = Vec::new();
    for _ in 0..trials {
        let (n, fs, ft) = (rng.random_range(1..=6), rng.random_range(1..=5), rng.random_range(1..=5));
        let teacher = random(&[n, ft], &mut rng, 1.0);
        let params = [random(&[n, fs], &mut rng, 1.0), random(&[fs, ft], &mut rng, 1.0), random(&[ft], &mut rng, 1.0)];
        errs.push(gradient_check(|_, v| hint_baseline(&teacher, &v[0], Some((&v[1], &v[2]))), &params, STEP, tol)?.max_rel_error());
    }
    record("hint_baseline", errs);

    let mut rng = keyed(seed, Stream::Data, &[0x9c_05]);
    let mut errs = Vec::new();
    while errs.len() < trials {
        let (p, d) = (rng.random_range(1..=8), rng.random_range(1..=4));
        let a = random(&[p, d], &mut rng, 1.0);
        let b = random(&[p, d], &mut rng, 1.0);
        let same: Vec<bool> = (0..p).map(|_| rng.random_bool(0.5)).collect();
        let margin = rng.random_range(0.5..2.0);
        // The hinge and the zero-distance point are not differentiable.
        let kink = (0..p).any(|i| {
            let dist = a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            (dist - margin).abs() < 1e-3 || dist < 1e-3
        });
        if kink {
            continue;
        }
        errs.push(gradient_check(|_, v| contrastive_loss(&v[0], &v[1], &same, margin), &[a, b], STEP, tol)?.max_rel_error());
    }
    record("contrastive_loss", errs);
    Ok(out)
}
