//! Retrieval and classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::kernels::NORM_EPS;
use crate::nn::Network;
use crate::scalar::Scalar;
use crate::tensor::{linalg, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

/// Labeled database of representations ranked against queries.
#[derive(Clone, Debug)]
pub struct RetrievalIndex<T> {
    database: Tensor<T>,
    labels: Vec<usize>,
    pub metric: Metric,
}

impl<T: Scalar> RetrievalIndex<T> {
    pub fn new(database: Tensor<T>, labels: Vec<usize>, metric: Metric) -> Result<Self> {
        let database = database.flatten_rows();
        if database.rows() != labels.len() {
            return shape_err(format!("{} database rows but {} labels", database.rows(), labels.len()));
        }
        if labels.is_empty() {
            return invalid("empty database");
        }
        Ok(Self { database, labels, metric })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Database indices ordered from most to least similar; equal scores
    /// keep database order.
    pub fn rank(&self, query: &[T]) -> Vec<usize> {
        let n = self.len();
        let scores: Vec<T> = match self.metric {
            Metric::Euclidean => (0..n)
                .map(|i| -self.database.row(i).iter().zip(query).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>())
                .collect(),
            Metric::Cosine => {
                let eps = T::c(NORM_EPS);
                let qn = linalg::dot(query, query).sqrt() + eps;
                (0..n)
                    .map(|i| {
                        let r = self.database.row(i);
                        linalg::dot(r, query) / ((linalg::dot(r, r).sqrt() + eps) * qn)
                    })
                    .collect()
            }
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
        order
    }

    fn check_queries(&self, queries: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        let q = queries.flatten_rows();
        if q.rows() != labels.len() {
            return shape_err("query and label counts differ");
        }
        if q.row_len() != self.database.row_len() {
            return shape_err("query and database dimensions differ");
        }
        if q.rows() == 0 {
            return invalid("no queries");
        }
        Ok(q)
    }
}

/// Average precision of one ranked relevance list over the full list.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        acc / hits as f64
    }
}

/// Mean average precision; a database item is relevant iff it shares the
/// query's label.
pub fn map_score<T: Scalar>(index: &RetrievalIndex<T>, queries: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let q = index.check_queries(queries, labels)?;
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if !index.labels.contains(&label) {
            return invalid(format!("query label {label} absent from database"));
        }
        let rel: Vec<bool> = index.rank(q.row(i)).into_iter().map(|j| index.labels[j] == label).collect();
        total += average_precision(&rel);
    }
    Ok(total / labels.len() as f64)
}

/// Mean fraction of relevant items among each query's `k` nearest.
pub fn topk_precision<T: Scalar>(index: &RetrievalIndex<T>, queries: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    if k == 0 || k > index.len() {
        return invalid(format!("k = {k} must lie in [1, {}]", index.len()));
    }
    let q = index.check_queries(queries, labels)?;
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let hits = index.rank(q.row(i)).into_iter().take(k).filter(|&j| index.labels[j] == label).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / labels.len() as f64)
}

/// Arg-max class per row, lowest index on ties.
pub fn predict(logits: &Tensor<f64>) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    if logits.ndim() != 2 || logits.rows() != labels.len() {
        return shape_err("logits must be N×C with one label per row");
    }
    if labels.is_empty() {
        return invalid("no samples");
    }
    let pred = predict(&logits.cast::<f64>());
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

pub fn classification_accuracy<T: Scalar>(model: &mut Network<T>, inputs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let logits = model.logits(inputs, 256)?;
    accuracy_from_logits(&logits, labels)
}

/// All retrieval metrics plus optional accuracy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub map_e: f64,
    pub map_c: f64,
    pub top_k: usize,
    pub top_k_e: f64,
    pub top_k_c: f64,
    pub accuracy: Option<f64>,
}

/// Ranks `queries` against `database` under both metrics.
pub fn retrieval_report<T: Scalar>(
    database: &Tensor<T>,
    db_labels: &[usize],
    queries: &Tensor<T>,
    query_labels: &[usize],
    top_k: usize,
) -> Result<EvalReport> {
    let k = top_k.min(db_labels.len());
    let e = RetrievalIndex::new(database.clone(), db_labels.to_vec(), Metric::Euclidean)?;
    let c = RetrievalIndex::new(database.clone(), db_labels.to_vec(), Metric::Cosine)?;
    Ok(EvalReport {
        map_e: map_score(&e, queries, query_labels)?,
        map_c: map_score(&c, queries, query_labels)?,
        top_k: k,
        top_k_e: topk_precision(&e, queries, query_labels, k)?,
        top_k_c: topk_precision(&c, queries, query_labels, k)?,
        accuracy: None,
    })
}
