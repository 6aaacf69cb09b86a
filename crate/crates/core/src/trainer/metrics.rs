use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Summary of evaluation episodes on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::Contract("no evaluation episodes".into()));
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            mean,
            std,
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            returns,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub interactions: u64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<EvalStats>,
    /// Mean over seeds of the per-seed means.
    pub mean: f64,
    /// Spread of the per-seed means.
    pub std: f64,
}

impl EvalRecord {
    pub fn new(iter: usize, interactions: u64, seeds: Vec<u64>, per_seed: Vec<EvalStats>) -> Self {
        let n = per_seed.len().max(1) as f64;
        let mean = per_seed.iter().map(|s| s.mean).sum::<f64>() / n;
        let std = (per_seed.iter().map(|s| (s.mean - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            iter,
            interactions,
            seeds,
            per_seed,
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRecord {
    pub iter: usize,
    pub interactions: u64,
    pub seed: u64,
    pub payload: Value,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricLine {
    pub kind: String,
    pub iter: usize,
    pub interactions: u64,
    pub seed: u64,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub evals: Vec<EvalRecord>,
    pub diags: Vec<DiagRecord>,
}

impl RunMetrics {
    /// Interactions at the first evaluation whose mean reaches `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<u64> {
        self.evals
            .iter()
            .find(|e| e.mean >= threshold)
            .map(|e| e.interactions)
    }

    pub fn best_mean(&self) -> Option<f64> {
        self.evals.iter().map(|e| e.mean).reduce(f64::max)
    }

    pub fn to_lines(&self) -> Result<Vec<MetricLine>> {
        let mut lines = Vec::new();
        let mut diags = self.diags.iter().peekable();
        for e in &self.evals {
            while let Some(d) = diags.next_if(|d| d.iter <= e.iter) {
                lines.push(diag_line(d));
            }
            for (seed, stats) in e.seeds.iter().zip(&e.per_seed) {
                lines.push(MetricLine {
                    kind: "eval".into(),
                    iter: e.iter,
                    interactions: e.interactions,
                    seed: *seed,
                    payload: serde_json::to_value(stats)?,
                });
            }
        }
        lines.extend(diags.map(diag_line));
        Ok(lines)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for l in self.to_lines()? {
            out.push_str(&serde_json::to_string(&l)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut metrics = RunMetrics::default();
        let mut evals: BTreeMap<usize, (u64, Vec<u64>, Vec<EvalStats>)> = BTreeMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let l: MetricLine = serde_json::from_str(line)
                .map_err(|e| Error::Contract(format!("metrics line {}: {e}", n + 1)))?;
            match l.kind.as_str() {
                "eval" => {
                    let stats: EvalStats = serde_json::from_value(l.payload)?;
                    let e = evals.entry(l.iter).or_insert((l.interactions, Vec::new(), Vec::new()));
                    e.1.push(l.seed);
                    e.2.push(stats);
                }
                "diag" => metrics.diags.push(DiagRecord {
                    iter: l.iter,
                    interactions: l.interactions,
                    seed: l.seed,
                    payload: l.payload,
                }),
                other => {
                    return Err(Error::Contract(format!(
                        "metrics line {}: unknown kind `{other}`",
                        n + 1
                    )))
                }
            }
        }
        metrics.evals = evals
            .into_iter()
            .map(|(iter, (inter, seeds, stats))| EvalRecord::new(iter, inter, seeds, stats))
            .collect();
        Ok(metrics)
    }
}

fn diag_line(d: &DiagRecord) -> MetricLine {
    MetricLine {
        kind: "diag".into(),
        iter: d.iter,
        interactions: d.interactions,
        seed: d.seed,
        payload: d.payload.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_episode_stats_collapse() {
        let s = EvalStats::from_returns(vec![-2.5]).unwrap();
        assert_eq!((s.mean, s.min, s.max, s.std), (-2.5, -2.5, -2.5, 0.0));
    }

    #[test]
    fn jsonl_roundtrip() {
        let stats = |m: f64| EvalStats::from_returns(vec![m, m + 1.0]).unwrap();
        let m = RunMetrics {
            evals: vec![
                EvalRecord::new(5, 100, vec![1, 2], vec![stats(-3.0), stats(-1.0)]),
                EvalRecord::new(10, 200, vec![1, 2], vec![stats(-2.0), stats(0.5)]),
            ],
            diags: vec![DiagRecord {
                iter: 3,
                interactions: 60,
                seed: 1,
                payload: serde_json::json!({"critic_l1": 0.25}),
            }],
        };
        let back = RunMetrics::from_jsonl(&m.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.first_reaching(-1.0), Some(200));
        assert_eq!(m.first_reaching(5.0), None);
    }
}
