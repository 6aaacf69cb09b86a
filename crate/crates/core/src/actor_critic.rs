//! Deterministic actor, Pop-Art-normalized critic, TD targets from the target
//! networks, and the two deterministic policy gradients.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::Discriminator;
use crate::error::{check_dim, Error, Result};
use crate::nn::{
    polyak_track_in_place, AdamConfig, AdamState, ForwardCache, HiddenActivation, MlpNet, MlpSpec,
    OutputActivation, ParamVector, TensorRole,
};
use crate::replay::NStepSample;
use crate::sync::{GradSync, SyncTag};

/// Output-layer init range for the actor and critic.
pub const FINAL_LAYER_INIT: f64 = 3e-3;

macro_rules! sealed_grad {
    ($(#[$doc:meta])* $name:ident, $tag:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(ParamVector);

        impl $name {
            pub fn params(&self) -> &ParamVector {
                &self.0
            }

            pub fn all_reduce(mut self, sync: &mut dyn GradSync) -> Result<Self> {
                sync.all_reduce($tag, self.0.values_mut())?;
                Ok(self)
            }
        }
    };
}

sealed_grad!(
    /// Ascent direction of the actor objective.
    ActorGrad,
    SyncTag::Actor
);
sealed_grad!(
    /// Descent direction of the critic loss.
    CriticGrad,
    SyncTag::Critic
);

impl ActorGrad {
    /// `(1 - w)·a + w·b`
    pub fn mix(a: &ActorGrad, b: &ActorGrad, w: f64) -> Result<ActorGrad> {
        let mut out = a.0.clone();
        out.scale(1.0 - w);
        out.add_scaled(&b.0, w)?;
        Ok(ActorGrad(out))
    }
}

fn concat_rows(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(a);
    out.slice_mut(s![.., a.ncols()..]).assign(b);
    out
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// `bound · net(states)`.
fn scaled_actions(net: &MlpNet, bound: f64, states: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(net.predict_batch(states.clone())? * bound)
}

#[derive(Debug, Clone)]
pub struct Actor {
    online: MlpNet,
    target: MlpNet,
    bound: f64,
    opt: AdamState,
}

/// Read-only handle on the target policy.
#[derive(Debug, Clone, Copy)]
pub struct TargetPolicy<'a> {
    net: &'a MlpNet,
    bound: f64,
}

impl TargetPolicy<'_> {
    pub fn act_batch(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        scaled_actions(self.net, self.bound, states)
    }
}

impl Actor {
    pub fn spec_for(state_dim: usize, action_dim: usize, hidden: &[usize], layer_norm: bool) -> MlpSpec {
        MlpSpec::new(state_dim, hidden, action_dim)
            .with_hidden_activation(HiddenActivation::Relu)
            .with_output_activation(OutputActivation::Tanh)
            .with_layer_norm(layer_norm)
    }

    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, bound: f64, adam: AdamConfig, rng: &mut R) -> Result<Self> {
        Self::from_net(MlpNet::init(spec, Some(FINAL_LAYER_INIT), rng)?, bound, adam)
    }

    /// Online and target start as copies of `net`.
    pub fn from_net(net: MlpNet, bound: f64, adam: AdamConfig) -> Result<Self> {
        if net.spec().output_activation == OutputActivation::Sigmoid {
            return Err(Error::Contract("actor output must be tanh or identity".into()));
        }
        if !(bound > 0.0) {
            return Err(Error::Config(format!("action bound {bound}")));
        }
        let opt = AdamState::new(adam, net.params().len());
        Ok(Self {
            target: net.clone(),
            online: net,
            bound,
            opt,
        })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn net(&self) -> &MlpNet {
        &self.online
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.online
    }

    pub fn target_net(&self) -> &MlpNet {
        &self.target
    }

    pub fn target_view(&self) -> TargetPolicy<'_> {
        TargetPolicy {
            net: &self.target,
            bound: self.bound,
        }
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.opt.step_count()
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.online.predict(state)?.into_iter().map(|a| a * self.bound).collect())
    }

    pub fn act_batch(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        scaled_actions(&self.online, self.bound, states)
    }

    /// `μ` evaluated with substitute parameters of the same layout.
    pub fn act_with(&self, params: &ParamVector, state: &[f64]) -> Result<Vec<f64>> {
        let mut net = self.online.clone();
        net.set_params(params.clone())?;
        Ok(net.predict(state)?.into_iter().map(|a| a * self.bound).collect())
    }

    /// Ascent step along `grad`. No weight decay on this path.
    pub fn apply(&mut self, grad: ActorGrad) -> Result<()> {
        let mut descent = grad.0;
        descent.scale(-1.0);
        self.opt.step(self.online.params_mut(), &descent)
    }

    /// Actions for `states` plus the cache [`Actor::chain`] needs.
    fn act_traced(&self, states: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        let (y, cache) = self.online.forward_batch(states.clone())?;
        Ok((y * self.bound, cache))
    }

    /// Gradient of `mean_s w(s)·μ(s)` given per-state action weights `w`.
    fn chain(&self, cache: &ForwardCache, action_grads: &Array2<f64>) -> Result<ActorGrad> {
        let b = cache.batch_size() as f64;
        let dy = action_grads * (self.bound / b);
        let (g, _) = self.online.backward_batch(cache, &dy)?;
        Ok(ActorGrad(g))
    }
}

/// Running-moment output normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopArt {
    pub mu: f64,
    pub sigma: f64,
    pub m1: f64,
    pub m2: f64,
    pub rate: f64,
    pub sigma_min: f64,
}

impl PopArt {
    pub fn new(rate: f64) -> Self {
        Self {
            mu: 0.0,
            sigma: 1.0,
            m1: 0.0,
            m2: 1.0,
            rate,
            sigma_min: 1e-4,
        }
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mu) / self.sigma
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        self.sigma * z + self.mu
    }

    /// `(mean y, mean y²)` of a batch.
    pub fn batch_moments(targets: &[f64]) -> Result<[f64; 2]> {
        if targets.is_empty() {
            return Err(Error::Contract("no targets for normalization update".into()));
        }
        let n = targets.len() as f64;
        Ok([
            targets.iter().sum::<f64>() / n,
            targets.iter().map(|y| y * y).sum::<f64>() / n,
        ])
    }

    /// Blends in batch moments. Returns the old `(mu, sigma)`.
    fn absorb(&mut self, [mean, mean_sq]: [f64; 2]) -> (f64, f64) {
        let old = (self.mu, self.sigma);
        self.m1 += self.rate * (mean - self.m1);
        self.m2 += self.rate * (mean_sq - self.m2);
        self.mu = self.m1;
        self.sigma = (self.m2 - self.m1 * self.m1).max(0.0).sqrt().max(self.sigma_min);
        old
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    online: MlpNet,
    target: MlpNet,
    popart: PopArt,
    nu: f64,
    weight_mask: Vec<bool>,
    opt: AdamState,
}

/// Read-only handle on the target critic, denormalized with the shared stats.
#[derive(Debug, Clone, Copy)]
pub struct TargetCritic<'a> {
    net: &'a MlpNet,
    popart: &'a PopArt,
}

impl TargetCritic<'_> {
    pub fn q_batch(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Vec<f64>> {
        let z = self.net.predict_batch(concat_rows(states, actions))?;
        Ok(z.column(0).iter().map(|&z| self.popart.denormalize(z)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CriticLoss {
    pub l1: f64,
    pub ln: f64,
    /// `½‖W‖²` over weight matrices.
    pub weight_decay: f64,
    pub total: f64,
}

impl Critic {
    pub fn spec_for(state_dim: usize, action_dim: usize, hidden: &[usize], layer_norm: bool) -> MlpSpec {
        MlpSpec::new(state_dim + action_dim, hidden, 1)
            .with_hidden_activation(HiddenActivation::Relu)
            .with_output_activation(OutputActivation::Identity)
            .with_layer_norm(layer_norm)
    }

    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        nu: f64,
        popart_rate: f64,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Self::from_net(MlpNet::init(spec, Some(FINAL_LAYER_INIT), rng)?, nu, popart_rate, adam)
    }

    pub fn from_net(net: MlpNet, nu: f64, popart_rate: f64, adam: AdamConfig) -> Result<Self> {
        if net.output_dim() != 1 || net.spec().output_activation != OutputActivation::Identity {
            return Err(Error::Contract("critic needs one identity output".into()));
        }
        if !(nu >= 0.0) || !(popart_rate > 0.0 && popart_rate <= 1.0) {
            return Err(Error::Config(format!("critic decay {nu} / normalization rate {popart_rate}")));
        }
        let weight_mask = net.layout().mask(&[TensorRole::Weight]);
        let opt = AdamState::new(adam, net.params().len());
        Ok(Self {
            target: net.clone(),
            online: net,
            popart: PopArt::new(popart_rate),
            nu,
            weight_mask,
            opt,
        })
    }

    pub fn net(&self) -> &MlpNet {
        &self.online
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.online
    }

    pub fn target_net(&self) -> &MlpNet {
        &self.target
    }

    pub fn popart(&self) -> &PopArt {
        &self.popart
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn target_view(&self) -> TargetCritic<'_> {
        TargetCritic {
            net: &self.target,
            popart: &self.popart,
        }
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.opt.step_count()
    }

    /// Normalized online predictions.
    pub fn normalized_batch(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.online.predict_batch(concat_rows(states, actions))?.column(0).to_vec())
    }

    /// Denormalized online predictions.
    pub fn q_batch(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self
            .normalized_batch(states, actions)?
            .into_iter()
            .map(|z| self.popart.denormalize(z))
            .collect())
    }

    /// Updates the statistics from batch moments and rescales the output
    /// layer of both networks so denormalized predictions are unchanged.
    pub fn popart_update_moments(&mut self, moments: [f64; 2]) -> Result<()> {
        check_finite("normalization moments", &moments)?;
        let (mu_old, sigma_old) = self.popart.absorb(moments);
        let (mu, sigma) = (self.popart.mu, self.popart.sigma);
        for net in [&mut self.online, &mut self.target] {
            let last = net.layout().layers().last().expect("one layer").clone();
            let values = net.params_mut().values_mut();
            for w in &mut values[last.weight.clone()] {
                *w *= sigma_old / sigma;
            }
            for b in &mut values[last.bias.clone()] {
                *b = (sigma_old * *b + mu_old - mu) / sigma;
            }
        }
        Ok(())
    }

    pub fn popart_update(&mut self, targets: &[f64]) -> Result<()> {
        self.popart_update_moments(PopArt::batch_moments(targets)?)
    }

    pub fn weight_decay(&self) -> f64 {
        self.online
            .params()
            .values()
            .iter()
            .zip(&self.weight_mask)
            .filter(|(_, &m)| m)
            .map(|(w, _)| 0.5 * w * w)
            .sum()
    }

    /// `ℓ1 + ℓn + ν·½‖W‖²` with squared residuals in normalized space.
    pub fn loss_and_grad(
        &self,
        states: &Array2<f64>,
        actions: &Array2<f64>,
        y1: &[f64],
        yn: &[f64],
    ) -> Result<(CriticLoss, CriticGrad)> {
        let b = states.nrows();
        if b == 0 {
            return Err(Error::Contract("empty critic batch".into()));
        }
        check_dim("one-step targets", b, y1.len())?;
        check_dim("n-step targets", b, yn.len())?;
        let (out, cache) = self.online.forward_batch(concat_rows(states, actions))?;
        let bf = b as f64;
        let mut dy = Array2::zeros((b, 1));
        let mut loss = CriticLoss::default();
        for i in 0..b {
            let z = out[(i, 0)];
            let r1 = z - self.popart.normalize(y1[i]);
            let rn = z - self.popart.normalize(yn[i]);
            loss.l1 += r1 * r1 / bf;
            loss.ln += rn * rn / bf;
            dy[(i, 0)] = 2.0 * (r1 + rn) / bf;
        }
        let (mut grad, _) = self.online.backward_batch(&cache, &dy)?;
        for ((g, &w), &m) in grad
            .values_mut()
            .iter_mut()
            .zip(self.online.params().values())
            .zip(&self.weight_mask)
        {
            if m {
                *g += self.nu * w;
            }
        }
        loss.weight_decay = self.weight_decay();
        loss.total = loss.l1 + loss.ln + self.nu * loss.weight_decay;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("critic loss {loss:?}")));
        }
        Ok((loss, CriticGrad(grad)))
    }

    pub fn apply(&mut self, grad: CriticGrad) -> Result<()> {
        self.opt.step(self.online.params_mut(), &grad.0)
    }
}

/// One-step and n-step targets from the target networks. `rewards[i]` holds
/// the `k` synthetic rewards of window `i`.
pub fn critic_targets(
    critic: TargetCritic<'_>,
    actor: TargetPolicy<'_>,
    batch: &[NStepSample],
    rewards: &[Vec<f64>],
    gamma: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount {gamma} outside [0, 1]")));
    }
    check_dim("reward windows", batch.len(), rewards.len())?;
    if batch.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    for (w, r) in batch.iter().zip(rewards) {
        check_dim("window rewards", w.k(), r.len())?;
        check_finite("synthetic rewards", r)?;
    }
    // rows 0..B: s_{t+1}; rows B..2B: s_{t+k}
    let rows = batch
        .iter()
        .map(|w| w.first().next_state.as_slice())
        .chain(batch.iter().map(|w| w.bootstrap_state()));
    let boot = crate::nn::batch_from_rows(rows, batch[0].state().len());
    let q = critic.q_batch(&boot, &actor.act_batch(&boot)?)?;
    let n = batch.len();
    let mut y1 = Vec::with_capacity(n);
    let mut yn = Vec::with_capacity(n);
    for (i, (w, r)) in batch.iter().zip(rewards).enumerate() {
        let first_bootstrap = if w.first().terminal { 0.0 } else { gamma * q[i] };
        y1.push(r[0] + first_bootstrap);
        let gk = gamma.powi(w.k() as i32);
        let tail = if w.bootstrap_masked() { 0.0 } else { gk * q[n + i] };
        yn.push(crate::replay::discounted_sum(r, gamma) + tail);
    }
    check_finite("critic targets", &y1)?;
    check_finite("critic targets", &yn)?;
    Ok((y1, yn))
}

/// `mean_s ∇_θ μ(s) ∇_a Q(s, a)|_{a=μ(s)}` with the online denormalized critic.
pub fn dpg_actor_grad(actor: &Actor, critic: &Critic, states: &Array2<f64>) -> Result<(ActorGrad, f64)> {
    let (actions, trace) = actor.act_traced(states)?;
    let sdim = states.ncols();
    let (out, cache) = critic.online.forward_batch(concat_rows(states, &actions))?;
    let dx = critic
        .online
        .input_grad_batch(&cache, &Array2::from_elem(out.dim(), critic.popart.sigma))?;
    let da = dx.slice(s![.., sdim..]).to_owned();
    let mean_abs = da.iter().map(|v| v.abs()).sum::<f64>() / da.len().max(1) as f64;
    Ok((actor.chain(&trace, &da)?, mean_abs))
}

/// `mean_s ∇_θ μ(s) ∇_a r(s, a)|_{a=μ(s)}`.
pub fn reward_actor_grad(actor: &Actor, disc: &Discriminator, states: &Array2<f64>) -> Result<ActorGrad> {
    let (actions, trace) = actor.act_traced(states)?;
    let (_, dx) = disc.reward_input_grads(&concat_rows(states, &actions))?;
    let da = dx.slice(s![.., states.ncols()..]).to_owned();
    actor.chain(&trace, &da)
}

/// Polyak tracking of both target networks.
pub fn update_targets(actor: &mut Actor, critic: &mut Critic, tau: f64) -> Result<()> {
    polyak_track_in_place(actor.target.params_mut(), actor.online.params(), tau)?;
    polyak_track_in_place(critic.target.params_mut(), critic.online.params(), tau)
}

/// Stacks the first state and action of each window.
pub fn window_inputs(batch: &[NStepSample]) -> (Array2<f64>, Array2<f64>) {
    let sdim = batch.first().map_or(0, |w| w.state().len());
    let adim = batch.first().map_or(0, |w| w.action().len());
    (
        crate::nn::batch_from_rows(batch.iter().map(NStepSample::state), sdim),
        crate::nn::batch_from_rows(batch.iter().map(NStepSample::action), adim),
    )
}
