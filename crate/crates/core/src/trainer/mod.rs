//! The full training loop: lockstep workers, per-module gradient averaging,
//! periodic evaluation of the unperturbed policy, metrics and checkpoints.

mod baselines;
mod config;
mod eval;
mod metrics;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::actor_critic::{
    critic_targets, dpg_actor_grad, reward_actor_grad, update_targets, window_inputs, Actor,
    ActorGrad, Critic, PopArt,
};
use crate::adversary::{
    two_phase_reward_update, Discriminator, DiscriminatorConfig, ExpertPool, RewardDiagnostics,
};
use crate::envs::{DemoDataset, Env, EnvKind, Pair};
use crate::error::{Error, Result};
use crate::exploration::{behavior_action, OuProcess, ParamNoise, ParamNoiseConfig};
use crate::nn::{batch_from_rows, AdamConfig, MlpNet, NetCheckpoint};
use crate::replay::{NStepSample, ReplayBuffer, RoundCollector, Transition};
use crate::sync::{AllReduce, GradSync, LocalSync, SyncTag};

pub use baselines::{bc_baseline, bc_loss, bc_train, onpolicy_ablation, OnPolicyOutcome};
pub use config::{ActorGradMode, RewardSource, TrainerConfig};
pub use eval::{evaluate, evaluate_actor};
pub use metrics::{DiagRecord, EvalRecord, EvalStats, MetricLine, RunMetrics};

// Stream ids for per-purpose random generators.
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;
const STREAM_EVAL: u64 = 4;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Reset seed for a worker's evaluation episodes. Fixed for the whole run so
/// successive evaluations see the same start states.
pub fn eval_seed(seed: u64) -> u64 {
    stream(seed, STREAM_EVAL).random()
}

/// How often each part of the schedule ran on one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ScheduleCounts {
    pub iterations: u64,
    pub collection_rounds: u64,
    pub disc_steps: u64,
    pub critic_steps: u64,
    pub actor_steps: u64,
    pub target_tracks: u64,
    pub evaluations: u64,
}

/// Final state of one worker.
#[derive(Debug, Clone)]
pub struct WorkerReport {
    pub rank: usize,
    pub seed: u64,
    pub env_steps: u64,
    pub counts: ScheduleCounts,
    pub actor: Actor,
    pub critic: Critic,
    pub disc: Discriminator,
    /// `(iter, interactions, stats)` for this worker's own evaluations.
    pub evals: WorkerEvals,
    /// Only filled on rank 0.
    pub diags: Vec<DiagRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub workers: Vec<WorkerReport>,
}

impl TrainOutcome {
    pub fn interactions(&self) -> u64 {
        self.workers.iter().map(|w| w.env_steps).sum()
    }
}

/// Serialized critic: online network plus its output normalization.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct CriticCheckpoint {
    pub net: NetCheckpoint,
    pub popart: PopArt,
}

#[derive(Debug, Clone, Default, Serialize)]
struct IterDiag {
    warmup: bool,
    mean_stored_reward: f64,
    noise_stddev: f64,
    noise_distance: Option<f64>,
    disc: Option<RewardDiagnostics>,
    critic_l1: Option<f64>,
    critic_ln: Option<f64>,
    critic_total: Option<f64>,
    mean_abs_dq_da: Option<f64>,
    popart_mu: Option<f64>,
    popart_sigma: Option<f64>,
}

pub(crate) fn check_demos(config: &TrainerConfig, demos: &DemoDataset) -> Result<()> {
    config.validate()?;
    if demos.env() != config.env {
        return Err(Error::Config(format!(
            "demonstrations are for {} but the run is configured for {}",
            demos.env(),
            config.env
        )));
    }
    Ok(())
}

pub(crate) fn disc_config(config: &TrainerConfig) -> DiscriminatorConfig {
    DiscriminatorConfig {
        hidden: config.disc_hidden.clone(),
        lambda: config.lambda,
        adam: AdamConfig::with_lr(config.disc_lr),
        reward_form: config.reward_form,
    }
}

/// Runs `work(rank, sync)` on every worker, in scoped threads when there is
/// more than one. The first error that is not a knock-on synchronization
/// fault wins.
pub(crate) fn run_group<T, F>(workers: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut dyn GradSync) -> Result<T> + Sync,
{
    if workers == 1 {
        return Ok(vec![work(0, &mut LocalSync::new())?]);
    }
    let group = AllReduce::group(workers)?;
    let results: Vec<Result<T>> = std::thread::scope(|s| {
        let handles: Vec<_> = group
            .into_iter()
            .enumerate()
            .map(|(rank, mut sync)| {
                let work = &work;
                s.spawn(move || {
                    let r = work(rank, &mut sync);
                    if let Err(e) = &r {
                        sync.abort(&e.to_string());
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::SyncFault("worker panicked".into())))
            })
            .collect()
    });
    let mut out = Vec::with_capacity(workers);
    let mut knock_on = None;
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(Error::SyncFault(m)) => {
                knock_on.get_or_insert(Error::SyncFault(m));
            }
            Err(e) => return Err(e),
        }
    }
    match knock_on {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Trains with `config.workers` lockstep workers and returns the merged
/// metrics. Nothing is written to disk.
pub fn train(config: &TrainerConfig, demos: &DemoDataset) -> Result<TrainOutcome> {
    train_with(config, demos, None)
}

/// Like [`train`], additionally writing `config.json`, `metrics.jsonl` and
/// per-evaluation checkpoints under `out_dir`.
pub fn train_with(
    config: &TrainerConfig,
    demos: &DemoDataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    check_demos(config, demos)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), config.to_json()?)?;
    }
    let workers = run_group(config.workers, |rank, sync| {
        run_worker(config, demos, rank, sync, out_dir)
    })?;
    let evals: Vec<&WorkerEvals> = workers.iter().map(|w| &w.evals).collect();
    let metrics = merge_metrics(config, &evals, workers[0].diags.clone())?;
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("metrics.jsonl"), metrics.to_jsonl()?)?;
    }
    Ok(TrainOutcome { metrics, workers })
}

pub(crate) type WorkerEvals = Vec<(usize, u64, EvalStats)>;

pub(crate) fn merge_metrics(
    config: &TrainerConfig,
    evals: &[&WorkerEvals],
    diags: Vec<DiagRecord>,
) -> Result<RunMetrics> {
    let n = evals[0].len();
    if evals.iter().any(|e| e.len() != n) {
        return Err(Error::SyncFault("workers disagree on the evaluation count".into()));
    }
    let evals = (0..n)
        .map(|j| {
            let (iter, interactions, _) = evals[0][j];
            let per_seed = evals.iter().map(|e| e[j].2.clone()).collect();
            EvalRecord::new(iter, interactions, config.seeds.clone(), per_seed)
        })
        .collect();
    Ok(RunMetrics { evals, diags })
}

/// Online networks of every module built identically on every worker from
/// the first seed.
pub fn init_modules(config: &TrainerConfig) -> Result<(Actor, Critic, Discriminator)> {
    let spec = config.env.spec();
    let (sd, ad) = (spec.state_dim, spec.action_dim);
    let mut rng = stream(config.seeds[0], STREAM_INIT);
    let actor = Actor::new(
        Actor::spec_for(sd, ad, &config.actor_hidden, config.layer_norm),
        spec.action_bound,
        AdamConfig::with_lr(config.actor_lr),
        &mut rng,
    )?;
    let critic = Critic::new(
        Critic::spec_for(sd, ad, &config.critic_hidden, config.layer_norm),
        config.nu,
        config.popart_rate,
        AdamConfig::with_lr(config.critic_lr),
        &mut rng,
    )?;
    let disc = Discriminator::new(sd, ad, &disc_config(config), &mut rng)?;
    Ok((actor, critic, disc))
}

struct Worker<'a> {
    config: &'a TrainerConfig,
    rank: usize,
    seed: u64,
    env: Env,
    obs: Vec<f64>,
    actor: Actor,
    critic: Critic,
    disc: Discriminator,
    buffer: ReplayBuffer,
    collector: RoundCollector,
    experts: ExpertPool,
    ou: OuProcess,
    noise: ParamNoise,
    env_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    env_steps: u64,
    counts: ScheduleCounts,
}

/// One worker's share of a run. `sync` must connect all `config.workers`
/// workers (or be a [`LocalSync`] when there is one).
pub fn run_worker(
    config: &TrainerConfig,
    demos: &DemoDataset,
    rank: usize,
    sync: &mut dyn GradSync,
    out_dir: Option<&Path>,
) -> Result<WorkerReport> {
    check_demos(config, demos)?;
    if sync.workers() != config.workers || rank >= config.workers {
        return Err(Error::Config(format!(
            "worker {rank} of {} on a barrier for {}",
            config.workers,
            sync.workers()
        )));
    }
    let spec = config.env.spec();
    let seed = config.seeds[rank];
    let (actor, critic, disc) = init_modules(config)?;
    let mut env_rng = stream(seed, STREAM_ENV);
    let mut env = Env::new(config.env);
    let obs = env.reset(&mut env_rng);
    let mut w = Worker {
        config,
        rank,
        seed,
        env,
        obs,
        actor,
        critic,
        disc,
        buffer: ReplayBuffer::new(config.buffer_capacity, spec.state_dim, spec.action_dim)?,
        collector: RoundCollector::new(),
        experts: ExpertPool::new(&demos.pairs())?,
        ou: OuProcess::new(spec.action_dim, config.ou_kappa, config.ou_sigma * spec.action_bound, 1.0)?,
        noise: ParamNoise::new(ParamNoiseConfig {
            initial_stddev: config.param_noise_stddev,
            target_delta: config.param_noise_delta,
            alpha: config.param_noise_alpha,
        })?,
        env_rng,
        noise_rng: stream(seed, STREAM_NOISE),
        sample_rng: stream(seed, STREAM_SAMPLE),
        env_steps: 0,
        counts: ScheduleCounts::default(),
    };
    let mut evals = Vec::new();
    let mut diags = Vec::new();
    let mut iter = 0;
    let result = (|| -> Result<()> {
        for i in 1..=config.i_max {
            iter = i;
            let diag = w.iteration(sync)?;
            let interactions = w.env_steps * config.workers as u64;
            if rank == 0 {
                diags.push(DiagRecord {
                    iter: i,
                    interactions,
                    seed,
                    payload: serde_json::to_value(&diag)?,
                });
            }
            let budget_hit = config.max_interactions.is_some_and(|m| interactions >= m);
            let last = i == config.i_max || budget_hit;
            let mut reached = false;
            if i % config.eval_every == 0 || last {
                let stats = evaluate_actor(&w.actor, config.env, config.eval_episodes, eval_seed(seed))?;
                w.counts.evaluations += 1;
                let mut avg = [stats.mean];
                sync.all_reduce(SyncTag::Eval, &mut avg)?;
                log::info!(
                    "worker {rank} iter {i} interactions {interactions}: eval mean {:.3} (all workers {:.3})",
                    stats.mean,
                    avg[0]
                );
                evals.push((i, interactions, stats));
                if rank == 0 {
                    if let Some(dir) = out_dir {
                        w.checkpoint(&dir.join("checkpoints").join(format!("iter_{i:06}")))?;
                    }
                }
                reached = config.target_return.is_some_and(|t| avg[0] >= t);
            }
            if budget_hit || reached {
                break;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        if !matches!(e, Error::SyncFault(_)) {
            log::error!("worker {rank} aborted at iteration {iter}: {e}");
            if let Some(dir) = out_dir {
                w.dump_abort(dir, iter, &e, diags.last());
            }
        }
        return Err(e);
    }
    if rank == 0 {
        if let Some(dir) = out_dir {
            w.checkpoint(&dir.join("checkpoints").join("final"))?;
        }
    }
    Ok(WorkerReport {
        rank,
        seed,
        env_steps: w.env_steps,
        counts: w.counts,
        actor: w.actor,
        critic: w.critic,
        disc: w.disc,
        evals,
        diags,
    })
}

impl Worker<'_> {
    fn iteration(&mut self, sync: &mut dyn GradSync) -> Result<IterDiag> {
        let c = self.config;
        self.counts.iterations += 1;
        let mut diag = IterDiag::default();
        let mut reward_sum = 0.0;
        for _ in 0..c.c_max {
            let (r, d) = self.collect_round()?;
            reward_sum += r;
            diag.noise_distance = d.or(diag.noise_distance);
        }
        diag.mean_stored_reward = reward_sum / (c.c_max * c.rollout_steps) as f64;
        diag.noise_stddev = self.noise.stddev();
        if self.env_steps < c.warmup_steps as u64 {
            diag.warmup = true;
            return Ok(diag);
        }
        let mut critic = [0.0; 3];
        let mut dq = 0.0;
        for _ in 0..c.t_max {
            let before = self.disc.optimizer_steps();
            let d = two_phase_reward_update(
                &mut self.disc,
                &self.collector,
                &self.buffer,
                &self.experts,
                c.d_max,
                c.disc_batch_size,
                &mut self.sample_rng,
                sync,
            )?;
            self.counts.disc_steps += self.disc.optimizer_steps() - before;
            diag.disc = Some(d);
            for _ in 0..c.g_max {
                let (l, q) = self.policy_step(sync)?;
                critic[0] += l[0];
                critic[1] += l[1];
                critic[2] += l[2];
                dq += q;
            }
        }
        let steps = (c.t_max * c.g_max) as f64;
        if steps > 0.0 {
            diag.critic_l1 = Some(critic[0] / steps);
            diag.critic_ln = Some(critic[1] / steps);
            diag.critic_total = Some(critic[2] / steps);
            diag.mean_abs_dq_da = Some(dq / steps);
            diag.popart_mu = Some(self.critic.popart().mu);
            diag.popart_sigma = Some(self.critic.popart().sigma);
        }
        Ok(diag)
    }

    /// One round of `rollout_steps` behavior-policy steps. Returns the summed
    /// stored reward and, outside warm-up, the measured noise distance.
    fn collect_round(&mut self) -> Result<(f64, Option<f64>)> {
        let c = self.config;
        let spec = *self.env.spec();
        let warm = self.env_steps < c.warmup_steps as u64;
        self.collector.start_round();
        if !warm {
            self.noise.refresh(&self.actor, &mut self.noise_rng)?;
        }
        let mut pending = Vec::with_capacity(c.rollout_steps);
        for _ in 0..c.rollout_steps {
            let action = if warm {
                (0..spec.action_dim)
                    .map(|_| self.noise_rng.random_range(-spec.action_bound..=spec.action_bound))
                    .collect()
            } else {
                behavior_action(&self.actor, &self.noise, &mut self.ou, &self.obs, &mut self.noise_rng)?
            };
            let step = self.env.step_blind(&self.obs, &action)?;
            self.env_steps += 1;
            let ended = step.terminal || step.truncated;
            let state = std::mem::replace(&mut self.obs, step.next_state);
            pending.push((state, action, self.obs.clone(), step.terminal, ended));
            if ended {
                self.obs = self.env.reset(&mut self.env_rng);
                self.ou.reset();
            }
        }
        let joined: Vec<Vec<f64>> = pending
            .iter()
            .map(|p| p.0.iter().chain(&p.1).copied().collect())
            .collect();
        let rows = batch_from_rows(joined.iter().map(Vec::as_slice), spec.state_dim + spec.action_dim);
        let rewards = self.disc.rewards(&rows)?;
        let mut visited = Vec::with_capacity(pending.len());
        for ((state, action, next_state, terminal, ended), r) in pending.into_iter().zip(&rewards) {
            self.collector.push(Pair {
                state: state.clone(),
                action: action.clone(),
            });
            visited.push(state.clone());
            self.buffer.push(Transition {
                state,
                action,
                syn_reward: *r,
                next_state,
                terminal,
            })?;
            if ended {
                self.buffer.mark_episode_end();
            }
        }
        self.counts.collection_rounds += 1;
        let distance = if warm {
            None
        } else {
            let probes = batch_from_rows(visited.iter().map(Vec::as_slice), spec.state_dim);
            Some(self.noise.adapt(&self.actor, &probes)?.0)
        };
        Ok((rewards.iter().sum(), distance))
    }

    /// Rewards for every transition of every window, stored or recomputed.
    fn window_rewards(&self, windows: &[NStepSample]) -> Result<Vec<Vec<f64>>> {
        match self.config.reward_source {
            RewardSource::Stored => Ok(windows.iter().map(NStepSample::rewards).collect()),
            RewardSource::Recomputed => {
                let rows: Vec<Vec<f64>> = windows
                    .iter()
                    .flat_map(|w| w.transitions())
                    .map(|t| t.state.iter().chain(&t.action).copied().collect())
                    .collect();
                let cols = rows.first().map_or(0, Vec::len);
                let flat = self.disc.rewards(&batch_from_rows(rows.iter().map(Vec::as_slice), cols))?;
                let mut it = flat.into_iter();
                Ok(windows.iter().map(|w| it.by_ref().take(w.k()).collect()).collect())
            }
        }
    }

    /// One critic step and one actor step with target tracking. Returns the
    /// critic loss parts and the mean action-gradient magnitude.
    fn policy_step(&mut self, sync: &mut dyn GradSync) -> Result<([f64; 3], f64)> {
        let c = self.config;
        let windows = self.buffer.sample_nstep(c.batch_size, c.n_step, &mut self.sample_rng)?;
        let rewards = self.window_rewards(&windows)?;
        let (y1, yn) = critic_targets(
            self.critic.target_view(),
            self.actor.target_view(),
            &windows,
            &rewards,
            c.gamma,
        )?;

        let all: Vec<f64> = y1.iter().chain(&yn).copied().collect();
        let mut moments = PopArt::batch_moments(&all)?;
        sync.all_reduce(SyncTag::PopArt, &mut moments)?;
        self.critic.popart_update_moments(moments)?;

        let (states, actions) = window_inputs(&windows);
        let (loss, grad) = self.critic.loss_and_grad(&states, &actions, &y1, &yn)?;
        self.critic.apply(grad.all_reduce(sync)?)?;
        self.counts.critic_steps += 1;

        let (grad, dq) = self.actor_grad(&states)?;
        self.actor.apply(grad.all_reduce(sync)?)?;
        self.counts.actor_steps += 1;

        update_targets(&mut self.actor, &mut self.critic, c.tau)?;
        self.counts.target_tracks += 1;
        Ok(([loss.l1, loss.ln, loss.total], dq))
    }

    fn actor_grad(&self, states: &Array2<f64>) -> Result<(ActorGrad, f64)> {
        let c = self.config;
        match c.actor_grad {
            ActorGradMode::Dpg => dpg_actor_grad(&self.actor, &self.critic, states),
            ActorGradMode::Reward => Ok((reward_actor_grad(&self.actor, &self.disc, states)?, 0.0)),
            ActorGradMode::Mix => {
                let (a, dq) = dpg_actor_grad(&self.actor, &self.critic, states)?;
                let b = reward_actor_grad(&self.actor, &self.disc, states)?;
                Ok((ActorGrad::mix(&a, &b, c.actor_grad_mix)?, dq))
            }
        }
    }

    fn checkpoint(&self, dir: &Path) -> Result<()> {
        write_checkpoint(dir, &self.actor, &self.critic, &self.disc)
    }

    fn dump_abort(&self, dir: &Path, iter: usize, e: &Error, last: Option<&DiagRecord>) {
        let snapshot = serde_json::json!({
            "rank": self.rank,
            "seed": self.seed,
            "iter": iter,
            "env_steps": self.env_steps,
            "error": e.to_string(),
            "last_diag": last.map(|d| d.payload.clone()).unwrap_or(Value::Null),
            "actor_finite": self.actor.net().params().is_finite(),
            "critic_finite": self.critic.net().params().is_finite(),
            "disc_finite": self.disc.net().params().is_finite(),
            "popart": self.critic.popart(),
        });
        let path: PathBuf = dir.join(format!("abort_worker{}.json", self.rank));
        if let Err(err) = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, snapshot.to_string()))
        {
            log::error!("could not write {}: {err}", path.display());
        }
    }
}

/// Writes `actor.json`, `critic.json` and `discriminator.json` into `dir`.
pub fn write_checkpoint(dir: &Path, actor: &Actor, critic: &Critic, disc: &Discriminator) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    actor.net().save(dir.join("actor.json"))?;
    let c = CriticCheckpoint {
        net: critic.net().to_checkpoint(),
        popart: *critic.popart(),
    };
    std::fs::write(dir.join("critic.json"), serde_json::to_string(&c)?)?;
    disc.net().save(dir.join("discriminator.json"))?;
    Ok(())
}

/// Loads an actor saved by [`write_checkpoint`] for `kind`.
pub fn load_actor(path: &Path, kind: EnvKind) -> Result<Actor> {
    let net = MlpNet::load(path)?;
    let spec = kind.spec();
    if net.input_dim() != spec.state_dim || net.output_dim() != spec.action_dim {
        return Err(Error::Config(format!(
            "checkpoint {} does not fit {kind}",
            path.display()
        )));
    }
    Actor::from_net(net, spec.action_bound, AdamConfig::default())
}
