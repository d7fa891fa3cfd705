//! Brute-force references for the math core, compared on random small
//! instances (N ≤ 16, d ≤ 8) to 1e-10 absolute.

use flowkd::eval::{map_score, topk_precision, Metric, RetrievalIndex};
use flowkd::infoflow::{flow_divergence, match_layers, qmi_estimate, FlowVector, LabelBatch};
use flowkd::kernels::{cond_prob_matrix, jeffreys_divergence, KernelKind, RepresentationBatch, Source, NORM_EPS, PROB_FLOOR};
use flowkd::rng::{keyed, Stream};
use flowkd::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const INSTANCES: usize = 120;
const TOL: f64 = 1e-10;

type Rows = Vec<Vec<f64>>;

fn rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Rows {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn kernel_kind(rng: &mut ChaCha8Rng) -> KernelKind {
    match rng.random_range(0..4) {
        0 => KernelKind::Cosine,
        d => KernelKind::TStudent { degree: d },
    }
}

fn kernel(kind: KernelKind, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        KernelKind::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt() + NORM_EPS;
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt() + NORM_EPS;
            0.5 * (dot / (na * nb) + 1.0)
        }
        KernelKind::TStudent { degree } => {
            let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            1.0 / (1.0 + dist.powi(degree as i32))
        }
    }
}

/// `p[i][j] = p_{i|j}`: column-normalized kernel, floored, renormalized.
fn cond_prob_ref(x: &Rows, kind: KernelKind) -> Rows {
    let n = x.len();
    let mut p = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mass: f64 = (0..n).filter(|&i| i != j).map(|i| kernel(kind, &x[i], &x[j])).sum();
        for i in (0..n).filter(|&i| i != j) {
            p[i][j] = (kernel(kind, &x[i], &x[j]) / mass).max(PROB_FLOOR);
        }
        let total: f64 = (0..n).map(|i| p[i][j]).sum();
        for row in p.iter_mut() {
            row[j] /= total;
        }
    }
    p
}

fn jeffreys_ref(p: &Rows, q: &Rows) -> f64 {
    let n = p.len();
    let mut d = 0.0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            d += (p[i][j] - q[i][j]) * (p[i][j] / q[i][j]).ln();
        }
    }
    d
}

fn qmi_ref(x: &Rows, labels: &[usize], kind: KernelKind) -> f64 {
    let n = x.len() as f64;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for c in 0..classes {
        let pc = labels.iter().filter(|&&l| l == c).count() as f64 / n;
        for i in 0..x.len() {
            for j in 0..x.len() {
                let k = kernel(kind, &x[i], &x[j]);
                let (ic, jc) = ((labels[i] == c) as u8 as f64, (labels[j] == c) as u8 as f64);
                total += k * (ic * jc + pc * pc - 2.0 * pc * ic);
            }
        }
    }
    total / (n * n)
}

/// Nearest teacher entry for every student layer, lowest index on ties;
/// the last student layer goes to the last teacher layer.
fn kappa_ref(s: &[f64], t: &[f64]) -> Vec<usize> {
    (0..s.len())
        .map(|i| {
            if i + 1 == s.len() {
                return t.len() - 1;
            }
            let mut best = 0;
            for j in 1..t.len() {
                if (s[i] - t[j]).powi(2) < (s[i] - t[best]).powi(2) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn similarity(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>(),
        Metric::Cosine => 2.0 * kernel(KernelKind::Cosine, a, b) - 1.0,
    }
}

/// 1-based ranks: higher score first, lower database index on ties.
fn ranks(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .map(|i| 1 + (0..scores.len()).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count())
        .collect()
}

fn ap_ref(scores: &[f64], relevant: &[bool]) -> f64 {
    let r = ranks(scores);
    let rel: Vec<usize> = (0..scores.len()).filter(|&i| relevant[i]).collect();
    if rel.is_empty() {
        return 0.0;
    }
    let precision = |i: usize| rel.iter().filter(|&&j| r[j] <= r[i]).count() as f64 / r[i] as f64;
    rel.iter().map(|&i| precision(i)).sum::<f64>() / rel.len() as f64
}

fn topk_ref(scores: &[f64], relevant: &[bool], k: usize) -> f64 {
    let r = ranks(scores);
    (0..scores.len()).filter(|&i| r[i] <= k && relevant[i]).count() as f64 / k as f64
}

#[derive(Default)]
struct Tally {
    max_err: f64,
    mismatches: Vec<String>,
}

impl Tally {
    fn compare(&mut self, what: &str, instance: usize, got: f64, want: f64) {
        let err = (got - want).abs();
        self.max_err = self.max_err.max(if err.is_nan() { f64::INFINITY } else { err });
        if !(err <= TOL) {
            self.mismatches.push(format!("{what} instance {instance}: got {got}, reference {want}"));
        }
    }
}

fn batch(x: &Rows) -> RepresentationBatch<f64> {
    RepresentationBatch::new(Tensor::from_rows(x).unwrap(), 0, Source::Student).unwrap()
}

pub fn run() -> Outcome {
    let mut t = Tally::default();
    let mut rng = keyed(0, Stream::Data, &[0xacc1]);

    for k in 0..INSTANCES {
        let (n, d) = (rng.random_range(2..=16), rng.random_range(1..=8));
        let kind = kernel_kind(&mut rng);
        let x = rows(n, d, &mut rng);
        let p = cond_prob_matrix(&batch(&x), kind).unwrap();
        let r = cond_prob_ref(&x, kind);
        let err = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (p.get(i, j) - r[i][j]).abs()).fold(0.0, f64::max);
        t.compare("cond_prob_matrix", k, err, 0.0);
    }

    for k in 0..INSTANCES {
        let (n, kind) = (rng.random_range(2..=16), kernel_kind(&mut rng));
        let (xa, xb) = (rows(n, rng.random_range(1..=8), &mut rng), rows(n, rng.random_range(1..=8), &mut rng));
        let (pa, pb) = (cond_prob_matrix(&batch(&xa), kind).unwrap(), cond_prob_matrix(&batch(&xb), kind).unwrap());
        let got = jeffreys_divergence(&pa, &pb).unwrap();
        t.compare("jeffreys_divergence", k, got, jeffreys_ref(&cond_prob_ref(&xa, kind), &cond_prob_ref(&xb, kind)));
    }

    for k in 0..INSTANCES {
        let (n, d) = (rng.random_range(2..=16), rng.random_range(1..=8));
        let kind = kernel_kind(&mut rng);
        let classes = rng.random_range(1..=4);
        let x = rows(n, d, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let got = qmi_estimate(&Tensor::from_rows(&x).unwrap(), &LabelBatch::from_labels(labels.clone()), kind).unwrap();
        t.compare("qmi_estimate", k, got, qmi_ref(&x, &labels, kind));
    }

    for k in 0..INSTANCES {
        // Values on a coarse grid so that ties occur.
        let (ls, lt) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let mut flow = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(0..12) as f64 / 8.0).collect() };
        let (s, tv) = (flow(ls), flow(lt));
        let (fs, ft) = (FlowVector::new(s.clone(), "s"), FlowVector::new(tv.clone(), "t"));
        let m = match_layers(&fs, &ft).unwrap();
        let want = kappa_ref(&s, &tv);
        if m.kappa != want {
            t.mismatches.push(format!("match_layers instance {k}: got {:?}, reference {want:?}", m.kappa));
        }
        let direct: f64 = s.iter().zip(&want).map(|(a, &j)| (a - tv[j]).powi(2)).sum();
        t.compare("flow_divergence", k, flow_divergence(&fs, &ft, &m).unwrap(), direct);
    }

    for k in 0..INSTANCES {
        let metric = if k % 2 == 0 { Metric::Euclidean } else { Metric::Cosine };
        let (n, d) = (rng.random_range(2..=16), rng.random_range(1..=8));
        let classes = rng.random_range(1..=4);
        let db = rows(n, d, &mut rng);
        let db_l: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let nq = rng.random_range(1..=6);
        let q = rows(nq, d, &mut rng);
        let q_l: Vec<usize> = (0..nq).map(|_| db_l[rng.random_range(0..n)]).collect();
        let index = RetrievalIndex::new(Tensor::from_rows(&db).unwrap(), db_l.clone(), metric).unwrap();
        let qt = Tensor::from_rows(&q).unwrap();
        let per_query: Vec<(Vec<f64>, Vec<bool>)> = (0..nq)
            .map(|i| (db.iter().map(|v| similarity(metric, &q[i], v)).collect(), db_l.iter().map(|&l| l == q_l[i]).collect()))
            .collect();
        let map = per_query.iter().map(|(s, r)| ap_ref(s, r)).sum::<f64>() / nq as f64;
        t.compare("mAP", k, map_score(&index, &qt, &q_l).unwrap(), map);
        let kk = rng.random_range(1..=n);
        let top = per_query.iter().map(|(s, r)| topk_ref(s, r, kk)).sum::<f64>() / nq as f64;
        t.compare("top-K", k, topk_precision(&index, &qt, &q_l, kk).unwrap(), top);
    }

    let passed = t.mismatches.is_empty();
    let detail = format!(
        "{INSTANCES} instances each for cond_prob, jeffreys, qmi, flow_divergence, match_layers, mAP, top-K; max abs error {:.2e} (tol {TOL:e})",
        t.max_err
    );
    Outcome::new(passed, detail).with_notes(t.mismatches.into_iter().take(10).collect())
}
