//! pass@k, build@k, token cost and expected token cost, with aggregation
//! over a task set.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::MetricRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("k must satisfy 1 <= k <= N (k = {k}, N = {n})")]
    KOutOfRange { n: u64, k: u64 },
    #[error("success count {c} exceeds sample count {n}")]
    CountExceedsSamples { n: u64, c: u64 },
    #[error("no samples")]
    Empty,
    #[error("expected token cost is undefined when pass@1 is zero")]
    Undefined,
    #[error("pass@1 must lie in (0, 1] and kappa must be finite and non-negative")]
    InvalidInput,
}

/// Probability that at least one of `k` samples drawn without replacement
/// from `n` (of which `c` are correct) is correct:
/// `1 - C(n-c, k) / C(n, k)`, evaluated as a running product.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricError> {
    if k == 0 || k > n {
        return Err(MetricError::KOutOfRange { n, k });
    }
    if c > n {
        return Err(MetricError::CountExceedsSamples { n, c });
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0f64;
    for i in 0..k {
        miss *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok((1.0 - miss).clamp(0.0, 1.0))
}

/// [`pass_at_k`] with buildable samples in place of correct ones.
pub fn build_at_k(n: u64, b: u64, k: u64) -> Result<f64, MetricError> {
    pass_at_k(n, b, k)
}

/// Mean of per-sample token totals (input + output).
pub fn mean_token_cost(totals: &[u64]) -> Result<f64, MetricError> {
    if totals.is_empty() {
        return Err(MetricError::Empty);
    }
    let sum: f64 = totals.iter().map(|&t| t as f64).sum();
    Ok(sum / totals.len() as f64)
}

/// Expected tokens until a correct translation: `kappa / pass1`.
pub fn expected_token_cost(pass1: f64, kappa: f64) -> Result<f64, MetricError> {
    if pass1 == 0.0 {
        return Err(MetricError::Undefined);
    }
    if !(pass1 > 0.0 && pass1 <= 1.0) || !kappa.is_finite() || kappa < 0.0 {
        return Err(MetricError::InvalidInput);
    }
    Ok(kappa / pass1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: String,
    pub n: u64,
    pub c: u64,
    pub b: u64,
    pub kappa: f64,
    /// Keyed by k; only k <= N are present.
    pub pass_at: BTreeMap<u64, f64>,
    pub build_at: BTreeMap<u64, f64>,
    /// Absent when pass@1 is zero.
    pub expected_token_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub tasks: usize,
    /// Mean over the tasks for which the value is defined (k <= N).
    pub pass_at: BTreeMap<u64, f64>,
    pub build_at: BTreeMap<u64, f64>,
    pub mean_kappa: Option<f64>,
    pub mean_expected_token_cost: Option<f64>,
    /// Tasks left out of the expected-cost mean because pass@1 was zero.
    pub expected_token_cost_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ks: Vec<u64>,
    pub per_task: Vec<TaskMetrics>,
    pub aggregate: AggregateMetrics,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-task metrics for every requested k, then unweighted means over the
/// task set.
pub fn aggregate(records: &[MetricRecord], ks: &[u64]) -> MetricReport {
    let mut ks: Vec<u64> = ks.iter().copied().filter(|&k| k > 0).collect();
    ks.sort_unstable();
    ks.dedup();
    let per_task: Vec<TaskMetrics> = records
        .iter()
        .map(|r| {
            let at = |x: u64| ks.iter().filter_map(|&k| pass_at_k(r.n, x, k).ok().map(|v| (k, v))).collect();
            let pass1 = pass_at_k(r.n, r.c, 1).unwrap_or(0.0);
            TaskMetrics {
                task_id: r.task_id.clone(),
                n: r.n,
                c: r.c,
                b: r.b,
                kappa: r.kappa,
                pass_at: at(r.c),
                build_at: at(r.b),
                expected_token_cost: expected_token_cost(pass1, r.kappa).ok(),
            }
        })
        .collect();
    let col = |f: &dyn Fn(&TaskMetrics) -> Option<f64>| per_task.iter().filter_map(f).collect::<Vec<f64>>();
    let mut pass_at = BTreeMap::new();
    let mut build_at = BTreeMap::new();
    for &k in &ks {
        if let Some(m) = mean(&col(&|t| t.pass_at.get(&k).copied())) {
            pass_at.insert(k, m);
        }
        if let Some(m) = mean(&col(&|t| t.build_at.get(&k).copied())) {
            build_at.insert(k, m);
        }
    }
    let costs = col(&|t| t.expected_token_cost);
    MetricReport {
        aggregate: AggregateMetrics {
            tasks: per_task.len(),
            pass_at,
            build_at,
            mean_kappa: mean(&col(&|t| Some(t.kappa))),
            mean_expected_token_cost: mean(&costs),
            expected_token_cost_excluded: per_task.len() - costs.len(),
        },
        ks,
        per_task,
    }
}
