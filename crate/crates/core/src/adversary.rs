//! The reward module: a sigmoid discriminator over concatenated
//! state-action vectors, trained by cross-entropy against expert pairs with a
//! two-sided gradient penalty, and the synthetic reward it defines.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Pair;
use crate::error::{check_dim, Error, Result};
use crate::nn::{AdamConfig, AdamState, HiddenActivation, MlpNet, MlpSpec, OutputActivation, ParamVector};
use crate::replay::{ReplayBuffer, RoundCollector};
use crate::sync::{GradSync, SyncTag};

/// Clamp applied to `D` before any logarithm.
pub const D_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardForm {
    /// `-ln(1 - D)`
    #[default]
    NegLogOneMinusD,
    /// `ln D`
    LogD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub adam: AdamConfig,
    pub reward_form: RewardForm,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lambda: 10.0,
            adam: AdamConfig::with_lr(3e-4),
            reward_form: RewardForm::default(),
        }
    }
}

/// A discriminator gradient. Only [`Discriminator::loss_and_grad`] produces
/// one, so no other loss can reach the discriminator's optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscGrad(ParamVector);

impl DiscGrad {
    pub fn params(&self) -> &ParamVector {
        &self.0
    }

    /// Averages the gradient across workers without leaving the sealed type.
    pub fn all_reduce(mut self, sync: &mut dyn GradSync, tag: SyncTag) -> Result<Self> {
        sync.all_reduce(tag, self.0.values_mut())?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DiscLoss {
    pub total: f64,
    /// Mean `-ln(1 - D)` over generated pairs.
    pub gen_ce: f64,
    /// Mean `-ln D` over expert pairs.
    pub exp_ce: f64,
    pub penalty: f64,
    pub mean_d_gen: f64,
    pub mean_d_exp: f64,
    /// Fraction of pairs on the correct side of 0.5.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    net: MlpNet,
    lambda: f64,
    reward_form: RewardForm,
    opt: AdamState,
}

fn clamp_d(d: f64) -> f64 {
    d.clamp(D_CLAMP, 1.0 - D_CLAMP)
}

fn inside_clamp(d: f64) -> bool {
    (D_CLAMP..=1.0 - D_CLAMP).contains(&d)
}

/// Stacks pairs into `(n, state_dim + action_dim)` rows.
pub fn pairs_to_batch(pairs: &[Pair]) -> Array2<f64> {
    let width = pairs.first().map_or(0, |p| p.state.len() + p.action.len());
    let mut flat = Vec::with_capacity(pairs.len() * width);
    for p in pairs {
        flat.extend_from_slice(&p.state);
        flat.extend_from_slice(&p.action);
    }
    Array2::from_shape_vec((pairs.len(), width), flat).expect("pairs share dimensions")
}

impl Discriminator {
    pub fn spec_for(state_dim: usize, action_dim: usize, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(state_dim + action_dim, hidden, 1)
            .with_hidden_activation(HiddenActivation::Relu)
            .with_output_activation(OutputActivation::Sigmoid)
    }

    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        config: &DiscriminatorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let net = MlpNet::init(Self::spec_for(state_dim, action_dim, &config.hidden), None, rng)?;
        Self::from_net(net, config)
    }

    pub fn from_net(net: MlpNet, config: &DiscriminatorConfig) -> Result<Self> {
        if net.output_dim() != 1 || net.spec().output_activation != OutputActivation::Sigmoid {
            return Err(Error::Contract("discriminator needs one sigmoid output".into()));
        }
        if !(config.lambda >= 0.0) {
            return Err(Error::Config(format!("gradient penalty weight {}", config.lambda)));
        }
        let opt = AdamState::new(config.adam, net.params().len());
        Ok(Self {
            net,
            lambda: config.lambda,
            reward_form: config.reward_form,
            opt,
        })
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.net
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.opt.step_count()
    }

    /// Raw `D` on each row.
    pub fn probabilities(&self, inputs: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.predict_batch(inputs.clone())?.column(0).to_vec())
    }

    fn reward_of(&self, d: f64) -> f64 {
        let d = clamp_d(d);
        match self.reward_form {
            RewardForm::NegLogOneMinusD => -(1.0 - d).ln(),
            RewardForm::LogD => d.ln(),
        }
    }

    /// `dr/dD` at the clamped value; zero where the clamp is active.
    fn reward_slope(&self, d: f64) -> f64 {
        if !inside_clamp(d) {
            return 0.0;
        }
        match self.reward_form {
            RewardForm::NegLogOneMinusD => 1.0 / (1.0 - d),
            RewardForm::LogD => 1.0 / d,
        }
    }

    pub fn synthetic_reward(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_dim("discriminator input", self.net.input_dim(), state.len() + action.len())?;
        let x: Vec<f64> = state.iter().chain(action).copied().collect();
        Ok(self.reward_of(self.net.predict(&x)?[0]))
    }

    pub fn rewards(&self, inputs: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self
            .probabilities(inputs)?
            .into_iter()
            .map(|d| self.reward_of(d))
            .collect())
    }

    /// Rewards and their gradients with respect to each input row.
    pub fn reward_input_grads(&self, inputs: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let (out, cache) = self.net.forward_batch(inputs.clone())?;
        let d = out.column(0).to_vec();
        let slopes = Array2::from_shape_fn((d.len(), 1), |(i, _)| self.reward_slope(d[i]));
        let dx = self.net.input_grad_batch(&cache, &slopes)?;
        Ok((d.into_iter().map(|d| self.reward_of(d)).collect(), dx))
    }

    /// Penalty `mean_i (‖∇_x D(x̂_i)‖ − 1)²` at `x̂_i = u_i gen_i + (1 − u_i) exp_i`
    /// and its exact parameter gradient (unscaled by λ).
    pub fn gp_penalty(
        &self,
        gen: &Array2<f64>,
        exp: &Array2<f64>,
        u: &[f64],
    ) -> Result<(f64, ParamVector)> {
        self.check_batches(gen, exp)?;
        check_dim("interpolation weights", gen.nrows(), u.len())?;
        let b = gen.nrows() as f64;
        let mut hat = exp.clone();
        for (i, mut row) in hat.rows_mut().into_iter().enumerate() {
            row.zip_mut_with(&gen.row(i), |e, &g| *e = u[i] * g + (1.0 - u[i]) * *e);
        }
        let (_, cache) = self.net.forward_batch(hat.clone())?;
        let ones = Array2::ones((gen.nrows(), 1));
        let gx = self.net.input_grad_batch(&cache, &ones)?;
        let norms: Vec<f64> = gx.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let penalty = norms.iter().map(|n| (n - 1.0).powi(2)).sum::<f64>() / b;
        // d/dφ (n − 1)² = 2 (n − 1)/n · gᵀ ∂g/∂φ, the directional derivative
        // of ∇_φ D along g.
        let weights = Array2::from_shape_fn((norms.len(), 1), |(i, _)| {
            let n = norms[i];
            if n > 0.0 {
                2.0 * (n - 1.0) / (n * b)
            } else {
                0.0
            }
        });
        let (_, hvp) = self.net.input_directional_param_grad(&hat, &gx, &weights)?;
        Ok((penalty, hvp))
    }

    fn check_batches(&self, gen: &Array2<f64>, exp: &Array2<f64>) -> Result<()> {
        if gen.nrows() == 0 {
            return Err(Error::Contract("empty discriminator batch".into()));
        }
        check_dim("expert batch rows", gen.nrows(), exp.nrows())?;
        check_dim("generated pair width", self.net.input_dim(), gen.ncols())?;
        check_dim("expert pair width", self.net.input_dim(), exp.ncols())?;
        Ok(())
    }

    /// Full loss with fixed interpolation weights `u`.
    pub fn loss_and_grad_at(
        &self,
        gen: &Array2<f64>,
        exp: &Array2<f64>,
        u: &[f64],
    ) -> Result<(DiscLoss, DiscGrad)> {
        self.check_batches(gen, exp)?;
        let n = gen.nrows();
        let b = n as f64;
        let mut both = Array2::zeros((2 * n, gen.ncols()));
        both.slice_mut(s![..n, ..]).assign(gen);
        both.slice_mut(s![n.., ..]).assign(exp);
        let (out, cache) = self.net.forward_batch(both)?;
        let d = out.column(0);
        let mut dy = Array2::zeros((2 * n, 1));
        let mut loss = DiscLoss::default();
        let mut correct = 0usize;
        for i in 0..n {
            let (dg, de) = (d[i], d[n + i]);
            loss.gen_ce -= (1.0 - clamp_d(dg)).ln() / b;
            loss.exp_ce -= clamp_d(de).ln() / b;
            loss.mean_d_gen += dg / b;
            loss.mean_d_exp += de / b;
            correct += usize::from(dg < 0.5) + usize::from(de > 0.5);
            if inside_clamp(dg) {
                dy[(i, 0)] = 1.0 / ((1.0 - dg) * b);
            }
            if inside_clamp(de) {
                dy[(n + i, 0)] = -1.0 / (de * b);
            }
        }
        loss.accuracy = correct as f64 / (2 * n) as f64;
        let (mut grad, _) = self.net.backward_batch(&cache, &dy)?;
        let (penalty, gp_grad) = self.gp_penalty(gen, exp, u)?;
        grad.add_scaled(&gp_grad, self.lambda)?;
        loss.penalty = penalty;
        loss.total = loss.gen_ce + loss.exp_ce + self.lambda * penalty;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {loss:?}")));
        }
        Ok((loss, DiscGrad(grad)))
    }

    /// Full loss with `u_i ~ U(0, 1)` drawn per pair.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        gen: &Array2<f64>,
        exp: &Array2<f64>,
        rng: &mut R,
    ) -> Result<(DiscLoss, DiscGrad)> {
        let u: Vec<f64> = (0..gen.nrows()).map(|_| rng.random::<f64>()).collect();
        self.loss_and_grad_at(gen, exp, &u)
    }

    pub fn apply(&mut self, grad: DiscGrad) -> Result<()> {
        self.opt.step(self.net.params_mut(), &grad.0)
    }
}

/// Expert state-action pairs as a sampling pool.
#[derive(Debug, Clone)]
pub struct ExpertPool {
    rows: Array2<f64>,
}

impl ExpertPool {
    pub fn new(pairs: &[Pair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("no expert pairs".into()));
        }
        Ok(Self {
            rows: pairs_to_batch(pairs),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Array2<f64> {
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.len())).collect();
        self.rows.select(Axis(0), &idx)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RewardDiagnostics {
    pub recent: Vec<DiscLoss>,
    pub replay: Vec<DiscLoss>,
}

/// `d_max` rounds of one step on recent-round pairs followed by one step on
/// replay pairs, each against a fresh expert batch of the same size.
#[allow(clippy::too_many_arguments)]
pub fn two_phase_reward_update<R: Rng + ?Sized>(
    disc: &mut Discriminator,
    collector: &RoundCollector,
    buffer: &ReplayBuffer,
    experts: &ExpertPool,
    d_max: usize,
    batch: usize,
    rng: &mut R,
    sync: &mut dyn GradSync,
) -> Result<RewardDiagnostics> {
    let mut diag = RewardDiagnostics::default();
    for _ in 0..d_max {
        let gen = pairs_to_batch(&collector.recent_batch(batch, rng)?);
        let exp = experts.sample(batch, rng);
        let (loss, grad) = disc.loss_and_grad(&gen, &exp, rng)?;
        disc.apply(grad.all_reduce(sync, SyncTag::DiscRecent)?)?;
        diag.recent.push(loss);

        let replay: Vec<Pair> = buffer
            .sample_uniform(batch, rng)?
            .into_iter()
            .map(|t| Pair {
                state: t.state,
                action: t.action,
            })
            .collect();
        let gen = pairs_to_batch(&replay);
        let exp = experts.sample(batch, rng);
        let (loss, grad) = disc.loss_and_grad(&gen, &exp, rng)?;
        disc.apply(grad.all_reduce(sync, SyncTag::DiscReplay)?)?;
        diag.replay.push(loss);
    }
    Ok(diag)
}
