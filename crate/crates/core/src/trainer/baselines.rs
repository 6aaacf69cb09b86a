//! Comparison baselines: behavioral cloning and an on-policy variant of the
//! adversarial learner without replay.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    check_demos, eval_seed, evaluate_actor, init_modules, merge_metrics, run_group, stream,
    DiagRecord, RunMetrics, TrainerConfig, WorkerEvals, STREAM_ENV, STREAM_NOISE,
    STREAM_SAMPLE,
};
use crate::actor_critic::Actor;
use crate::adversary::{pairs_to_batch, DiscLoss, ExpertPool};
use crate::envs::{DemoDataset, Env, Pair};
use crate::error::{Error, Result};
use crate::nn::{batch_from_rows, AdamConfig, AdamState, MlpNet, ParamLayout, ParamVector};
use crate::replay::{discounted_sum, RoundCollector};
use crate::sync::{GradSync, SyncTag};

/// Mean squared action error of `actor` on the demonstration pairs.
pub fn bc_loss(actor: &Actor, demos: &DemoDataset) -> Result<f64> {
    let (states, actions) = demo_batches(demos);
    let pred = actor.act_batch(&states)?;
    Ok((&pred - &actions).iter().map(|v| v * v).sum::<f64>() / pred.len() as f64)
}

fn demo_batches(demos: &DemoDataset) -> (Array2<f64>, Array2<f64>) {
    let pairs = demos.pairs();
    let spec = demos.env().spec();
    (
        batch_from_rows(pairs.iter().map(|p| p.state.as_slice()), spec.state_dim),
        batch_from_rows(pairs.iter().map(|p| p.action.as_slice()), spec.action_dim),
    )
}

/// Full-batch regression of the actor onto the demonstrated actions, starting
/// from the same initialization a training run would use. Touches no
/// environment.
pub fn bc_baseline(demos: &DemoDataset, epochs: usize, config: &TrainerConfig) -> Result<Actor> {
    Ok(bc_train(demos, epochs, config)?.0)
}

/// [`bc_baseline`] plus the mean squared error before each epoch.
pub fn bc_train(demos: &DemoDataset, epochs: usize, config: &TrainerConfig) -> Result<(Actor, Vec<f64>)> {
    check_demos(config, demos)?;
    let (actor, _, _) = init_modules(config)?;
    let bound = actor.bound();
    let mut net = actor.net().clone();
    let mut opt = AdamState::new(AdamConfig::with_lr(config.bc_lr), net.params().len());
    let (states, actions) = demo_batches(demos);
    let count = actions.len() as f64;
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (y, cache) = net.forward_batch(states.clone())?;
        let err = &y * bound - &actions;
        losses.push(err.iter().map(|v| v * v).sum::<f64>() / count);
        let (g, _) = net.backward_batch(&cache, &(err * (2.0 * bound / count)))?;
        opt.step(net.params_mut(), &g)?;
    }
    Ok((Actor::from_net(net, bound, AdamConfig::with_lr(config.actor_lr))?, losses))
}

#[derive(Debug, Clone)]
pub struct OnPolicyOutcome {
    pub metrics: RunMetrics,
    /// Total environment steps over all workers.
    pub interactions: u64,
    /// Transitions consumed by policy updates over all workers. Equals
    /// `interactions`: each transition is used exactly once.
    pub transitions_used: u64,
    pub actors: Vec<Actor>,
}

struct OnPolicyReport {
    env_steps: u64,
    used: u64,
    actor: Actor,
    evals: WorkerEvals,
    diags: Vec<DiagRecord>,
}

/// Gaussian policy-gradient learner on the same discriminator reward. Every
/// iteration collects `onpolicy_episodes` whole episodes per worker, trains
/// the discriminator on those pairs only, takes one policy step on their
/// normalized discounted returns-to-go and discards them.
pub fn onpolicy_ablation(
    config: &TrainerConfig,
    demos: &DemoDataset,
    out_dir: Option<&Path>,
) -> Result<OnPolicyOutcome> {
    check_demos(config, demos)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), config.to_json()?)?;
    }
    let reports = run_group(config.workers, |rank, sync| {
        onpolicy_worker(config, demos, rank, sync, out_dir)
    })?;
    let evals: Vec<&WorkerEvals> = reports.iter().map(|r| &r.evals).collect();
    let metrics = merge_metrics(config, &evals, reports[0].diags.clone())?;
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("metrics.jsonl"), metrics.to_jsonl()?)?;
    }
    Ok(OnPolicyOutcome {
        metrics,
        interactions: reports.iter().map(|r| r.env_steps).sum(),
        transitions_used: reports.iter().map(|r| r.used).sum(),
        actors: reports.into_iter().map(|r| r.actor).collect(),
    })
}

struct Step {
    state: Vec<f64>,
    raw: Vec<f64>,
    action: Vec<f64>,
}

fn onpolicy_worker(
    config: &TrainerConfig,
    demos: &DemoDataset,
    rank: usize,
    sync: &mut dyn GradSync,
    out_dir: Option<&Path>,
) -> Result<OnPolicyReport> {
    let spec = config.env.spec();
    let seed = config.seeds[rank];
    let (actor, _, mut disc) = init_modules(config)?;
    let bound = actor.bound();
    let mut net: MlpNet = actor.net().clone();
    let mut net_opt = AdamState::new(AdamConfig::with_lr(config.onpolicy_lr), net.params().len());
    let std_layout = Arc::new(ParamLayout::from_layers(&[(0, spec.action_dim, false)]));
    let mut log_std = ParamVector::from_values(
        std_layout.clone(),
        vec![(config.onpolicy_init_std * bound).ln(); spec.action_dim],
    )?;
    let mut std_opt = AdamState::new(AdamConfig::with_lr(config.onpolicy_lr), spec.action_dim);
    let (log_std_min, log_std_max) = ((1e-3 * bound).ln(), bound.ln());
    let experts = ExpertPool::new(&demos.pairs())?;
    let mut env = Env::new(config.env);
    let mut env_rng = stream(seed, STREAM_ENV);
    let mut noise_rng = stream(seed, STREAM_NOISE);
    let mut sample_rng = stream(seed, STREAM_SAMPLE);
    let mut collector = RoundCollector::new();
    let (mut env_steps, mut used) = (0u64, 0u64);
    let mut evals = Vec::new();
    let mut diags = Vec::new();

    for i in 1..=config.i_max {
        // whole episodes from the stochastic policy
        let mut episodes: Vec<Vec<Step>> = Vec::with_capacity(config.onpolicy_episodes);
        for _ in 0..config.onpolicy_episodes {
            let mut s = env.reset(&mut env_rng);
            let mut ep = Vec::new();
            loop {
                let mean = net.predict(&s)?;
                let raw: Vec<f64> = mean
                    .iter()
                    .zip(log_std.values())
                    .map(|(m, ls)| {
                        let z: f64 = noise_rng.sample(StandardNormal);
                        m * bound + ls.exp() * z
                    })
                    .collect();
                let action = spec.clip_action(&raw);
                let step = env.step_blind(&s, &action)?;
                env_steps += 1;
                let next = step.next_state;
                ep.push(Step {
                    state: std::mem::replace(&mut s, next),
                    raw,
                    action,
                });
                if step.terminal || step.truncated {
                    break;
                }
            }
            episodes.push(ep);
        }
        let steps: Vec<&Step> = episodes.iter().flatten().collect();

        // discriminator on this batch only
        collector.start_round();
        for st in &steps {
            collector.push(Pair {
                state: st.state.clone(),
                action: st.action.clone(),
            });
        }
        let mut disc_loss = DiscLoss::default();
        for _ in 0..config.d_max {
            let gen = pairs_to_batch(&collector.recent_batch(config.disc_batch_size, &mut sample_rng)?);
            let exp = experts.sample(config.disc_batch_size, &mut sample_rng);
            let (loss, grad) = disc.loss_and_grad(&gen, &exp, &mut sample_rng)?;
            disc.apply(grad.all_reduce(sync, SyncTag::DiscRecent)?)?;
            disc_loss = loss;
        }

        // returns-to-go of the synthetic reward, normalized per batch
        let rewards = disc.rewards(&pairs_to_batch(collector.pairs()))?;
        let mut adv = Vec::with_capacity(steps.len());
        let mut offset = 0;
        for ep in &episodes {
            let r = &rewards[offset..offset + ep.len()];
            adv.extend((0..ep.len()).map(|t| discounted_sum(&r[t..], config.gamma)));
            offset += ep.len();
        }
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        adv.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));

        // ascent on mean_t A_t log π(a_t | s_t)
        let states = batch_from_rows(steps.iter().map(|s| s.state.as_slice()), spec.state_dim);
        let (y, cache) = net.forward_batch(states)?;
        let sigma: Vec<f64> = log_std.values().iter().map(|l| l.exp()).collect();
        let mut dy = Array2::zeros(y.dim());
        let mut dls = vec![0.0; spec.action_dim];
        for (t, st) in steps.iter().enumerate() {
            for j in 0..spec.action_dim {
                let z = (st.raw[j] - bound * y[[t, j]]) / sigma[j];
                dy[[t, j]] = adv[t] * bound * z / sigma[j] / n;
                dls[j] += adv[t] * (z * z - 1.0) / n;
            }
        }
        let (g, _) = net.backward_batch(&cache, &dy)?;
        let mut flat: Vec<f64> = g.values().iter().chain(&dls).copied().collect();
        sync.all_reduce(SyncTag::Actor, &mut flat)?;
        flat.iter_mut().for_each(|v| *v = -*v);
        let split = g.len();
        net_opt.step(net.params_mut(), &g.with_values(flat[..split].to_vec())?)?;
        std_opt.step(&mut log_std, &ParamVector::from_values(std_layout.clone(), flat[split..].to_vec())?)?;
        log_std
            .values_mut()
            .iter_mut()
            .for_each(|l| *l = l.clamp(log_std_min, log_std_max));
        used += steps.len() as u64;
        if !net.params().is_finite() {
            return Err(Error::NonFinite(format!("on-policy parameters at iteration {i}")));
        }

        // counters agree across workers only if episode lengths do
        let mut total = [env_steps as f64];
        sync.all_reduce(SyncTag::Eval, &mut total)?;
        let interactions = (total[0] * config.workers as f64).round() as u64;
        if rank == 0 {
            diags.push(DiagRecord {
                iter: i,
                interactions,
                seed,
                payload: serde_json::json!({
                    "disc": disc_loss,
                    "mean_reward": rewards.iter().sum::<f64>() / n,
                    "policy_std": sigma,
                }),
            });
        }
        let budget_hit = config.max_interactions.is_some_and(|m| interactions >= m);
        let last = i == config.i_max || budget_hit;
        let mut reached = false;
        if i % config.eval_every == 0 || last {
            let policy = Actor::from_net(net.clone(), bound, AdamConfig::default())?;
            let stats = evaluate_actor(&policy, config.env, config.eval_episodes, eval_seed(seed))?;
            let mut avg = [stats.mean];
            sync.all_reduce(SyncTag::Eval, &mut avg)?;
            log::info!("on-policy worker {rank} iter {i} interactions {interactions}: eval mean {:.3}", stats.mean);
            evals.push((i, interactions, stats));
            if rank == 0 {
                if let Some(dir) = out_dir {
                    let cp = dir.join("checkpoints").join(format!("iter_{i:06}"));
                    std::fs::create_dir_all(&cp)?;
                    policy.net().save(cp.join("actor.json"))?;
                    disc.net().save(cp.join("discriminator.json"))?;
                }
            }
            reached = config.target_return.is_some_and(|t| avg[0] >= t);
        }
        if budget_hit || reached {
            break;
        }
    }
    Ok(OnPolicyReport {
        env_steps,
        used,
        actor: Actor::from_net(net, bound, AdamConfig::with_lr(config.actor_lr))?,
        evals,
        diags,
    })
}
