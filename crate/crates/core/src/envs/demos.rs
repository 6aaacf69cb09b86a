use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rollout, Env, EnvKind, Expert, Pair};
use crate::error::{check_dim, Error, Result};

/// Per-trajectory return below which the expert is considered broken.
pub fn demo_floor(kind: EnvKind) -> f64 {
    match kind {
        EnvKind::DoubleIntegrator1d => -15.0,
        EnvKind::PointReach2d => -200.0,
        EnvKind::CartpoleBalance => kind.spec().horizon as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub ret: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub expert: String,
    pub seed: u64,
    /// Free-form generation date. Left empty by [`generate_demos`] so that
    /// datasets stay byte-reproducible.
    pub generated: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

impl ReturnStats {
    pub fn from_returns(returns: &[f64]) -> Option<Self> {
        if returns.is_empty() {
            return None;
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    env: EnvKind,
    trajectories: Vec<Trajectory>,
    meta: DemoMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    env: EnvKind,
    state_dim: usize,
    action_dim: usize,
    n_trajectories: usize,
    n_pairs: usize,
    seed: u64,
    expert: String,
    generated: Option<String>,
    return_stats: ReturnStats,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    length: usize,
    #[serde(rename = "return")]
    ret: f64,
    states: Vec<f64>,
    actions: Vec<f64>,
}

impl DemoDataset {
    pub fn new(env: EnvKind, trajectories: Vec<Trajectory>, meta: DemoMeta) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Contract("demo dataset needs at least one trajectory".into()));
        }
        let spec = env.spec();
        for t in &trajectories {
            if t.is_empty() || t.len() > spec.horizon {
                return Err(Error::Contract(format!(
                    "trajectory length {} outside 1..={}",
                    t.len(),
                    spec.horizon
                )));
            }
            check_dim("trajectory actions", t.states.len(), t.actions.len())?;
            for (s, a) in t.states.iter().zip(&t.actions) {
                check_dim("demo state", spec.state_dim, s.len())?;
                check_dim("demo action", spec.action_dim, a.len())?;
            }
        }
        Ok(Self {
            env,
            trajectories,
            meta,
        })
    }

    pub fn env(&self) -> EnvKind {
        self.env
    }

    pub fn meta(&self) -> &DemoMeta {
        &self.meta
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.ret).collect()
    }

    pub fn return_stats(&self) -> ReturnStats {
        ReturnStats::from_returns(&self.returns()).expect("dataset is never empty")
    }

    /// Every recorded state-action pair, in trajectory order.
    pub fn pairs(&self) -> Vec<Pair> {
        self.trajectories
            .iter()
            .flat_map(|t| {
                t.states.iter().zip(&t.actions).map(|(s, a)| Pair {
                    state: s.clone(),
                    action: a.clone(),
                })
            })
            .collect()
    }

    /// The first `n` trajectories.
    pub fn take(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Config(format!(
                "cannot take {n} of {} demonstrations",
                self.len()
            )));
        }
        Self::new(self.env, self.trajectories[..n].to_vec(), self.meta.clone())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let spec = self.env.spec();
        let header = Header {
            env: self.env,
            state_dim: spec.state_dim,
            action_dim: spec.action_dim,
            n_trajectories: self.len(),
            n_pairs: self.trajectories.iter().map(Trajectory::len).sum(),
            seed: self.meta.seed,
            expert: self.meta.expert.clone(),
            generated: self.meta.generated.clone(),
            return_stats: self.return_stats(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for t in &self.trajectories {
            let line = Line {
                length: t.len(),
                ret: t.ret,
                states: t.states.concat(),
                actions: t.actions.concat(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Contract("empty demo file".into()))?,
        )?;
        let spec = header.env.spec();
        check_dim("header state_dim", spec.state_dim, header.state_dim)?;
        check_dim("header action_dim", spec.action_dim, header.action_dim)?;
        let mut trajectories = Vec::with_capacity(header.n_trajectories);
        for l in lines {
            let line: Line = serde_json::from_str(l)?;
            check_dim("flat states", line.length * spec.state_dim, line.states.len())?;
            check_dim("flat actions", line.length * spec.action_dim, line.actions.len())?;
            trajectories.push(Trajectory {
                states: line.states.chunks(spec.state_dim).map(<[f64]>::to_vec).collect(),
                actions: line.actions.chunks(spec.action_dim).map(<[f64]>::to_vec).collect(),
                ret: line.ret,
            });
        }
        check_dim("trajectory count", header.n_trajectories, trajectories.len())?;
        Self::new(
            header.env,
            trajectories,
            DemoMeta {
                expert: header.expert,
                seed: header.seed,
                generated: header.generated,
            },
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

fn expert_name(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::DoubleIntegrator1d | EnvKind::CartpoleBalance => "discrete-time LQR",
        EnvKind::PointReach2d => "PD controller",
    }
}

/// Rolls the scripted expert out for `n` full episodes from a seeded start
/// distribution.
pub fn generate_demos(kind: EnvKind, n: usize, seed: u64) -> Result<DemoDataset> {
    if n == 0 {
        return Err(Error::Config("need at least one demonstration".into()));
    }
    let expert = Expert::new(kind)?;
    let mut env = Env::new(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = demo_floor(kind);
    let mut trajectories = Vec::with_capacity(n);
    for i in 0..n {
        let ep = rollout(&mut env, |s| expert.act(s), &mut rng)?;
        if ep.ret < floor {
            return Err(Error::DemoQuality(format!(
                "{kind} expert trajectory {i} returned {} (floor {floor})",
                ep.ret
            )));
        }
        trajectories.push(Trajectory {
            states: ep.states,
            actions: ep.actions,
            ret: ep.ret,
        });
    }
    DemoDataset::new(
        kind,
        trajectories,
        DemoMeta {
            expert: expert_name(kind).into(),
            seed,
            generated: None,
        },
    )
}
