//! Behavior policy: the actor with perturbed weights plus temporally
//! correlated Ornstein-Uhlenbeck action noise.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actor_critic::Actor;
use crate::error::{Error, Result};
use crate::nn::{perturb, MlpNet};

pub const STDDEV_MIN: f64 = 1e-6;
pub const STDDEV_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OuProcess {
    x: Vec<f64>,
    kappa: f64,
    sigma: f64,
    dt: f64,
}

impl OuProcess {
    /// Mean-reverting toward zero. `sigma = 0` gives pure decay.
    pub fn new(dim: usize, kappa: f64, sigma: f64, dt: f64) -> Result<Self> {
        if !(kappa > 0.0 && dt > 0.0 && sigma >= 0.0) {
            return Err(Error::Config(format!(
                "OU parameters kappa={kappa} sigma={sigma} dt={dt}"
            )));
        }
        Ok(Self {
            x: vec![0.0; dim],
            kappa,
            sigma,
            dt,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn set_state(&mut self, x: &[f64]) {
        self.x.copy_from_slice(x);
    }

    pub fn reset(&mut self) {
        self.x.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `x ← x − κ x dt + σ √dt z`
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let sd = self.sigma * self.dt.sqrt();
        for x in &mut self.x {
            let z: f64 = rng.sample(StandardNormal);
            *x += -self.kappa * *x * self.dt + sd * z;
        }
        self.x.clone()
    }

    /// Stationary variance of the discrete recursion.
    pub fn stationary_variance(&self) -> f64 {
        let kd = self.kappa * self.dt;
        self.sigma * self.sigma * self.dt / (2.0 * kd - kd * kd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamNoiseConfig {
    pub initial_stddev: f64,
    pub target_delta: f64,
    pub alpha: f64,
}

impl Default for ParamNoiseConfig {
    fn default() -> Self {
        Self {
            initial_stddev: 0.05,
            target_delta: 0.1,
            alpha: 1.01,
        }
    }
}

/// Adaptive weight-space perturbation. A zero stddev switches it off.
#[derive(Debug, Clone)]
pub struct ParamNoise {
    stddev: f64,
    target_delta: f64,
    alpha: f64,
    perturbed: Option<MlpNet>,
}

impl ParamNoise {
    pub fn new(config: ParamNoiseConfig) -> Result<Self> {
        let ParamNoiseConfig {
            initial_stddev,
            target_delta,
            alpha,
        } = config;
        if !(target_delta > 0.0 && alpha > 1.0 && initial_stddev >= 0.0) {
            return Err(Error::Config(format!("parameter noise {config:?}")));
        }
        let stddev = if initial_stddev == 0.0 {
            0.0
        } else {
            initial_stddev.clamp(STDDEV_MIN, STDDEV_MAX)
        };
        Ok(Self {
            stddev,
            target_delta,
            alpha,
            perturbed: None,
        })
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    /// The perturbed policy network, once drawn.
    pub fn perturbed(&self) -> Option<&MlpNet> {
        self.perturbed.as_ref()
    }

    /// Draws fresh perturbed weights around the actor's current weights.
    pub fn refresh<R: Rng + ?Sized>(&mut self, actor: &Actor, rng: &mut R) -> Result<()> {
        let mut net = actor.net().clone();
        net.set_params(perturb(actor.net().params(), self.stddev, rng))?;
        self.perturbed = Some(net);
        Ok(())
    }

    /// RMS action distance between the actor and its perturbed copy.
    pub fn distance(&self, actor: &Actor, probes: &Array2<f64>) -> Result<f64> {
        if probes.nrows() == 0 {
            return Err(Error::Contract("no probe states".into()));
        }
        let Some(net) = &self.perturbed else {
            return Ok(0.0);
        };
        let a = actor.act_batch(probes)?;
        let b = net.predict_batch(probes.clone())? * actor.bound();
        let sq: f64 = (&a - &b).iter().map(|v| v * v).sum();
        Ok((sq / a.len() as f64).sqrt())
    }

    /// Shrinks the stddev when `d` exceeds the target, grows it otherwise.
    pub fn adapt_to(&mut self, d: f64) -> f64 {
        if self.stddev == 0.0 {
            return 0.0;
        }
        self.stddev = if d > self.target_delta {
            self.stddev / self.alpha
        } else {
            self.stddev * self.alpha
        }
        .clamp(STDDEV_MIN, STDDEV_MAX);
        self.stddev
    }

    /// Measures the distance on `probes` and adapts. Returns `(d, stddev)`.
    pub fn adapt(&mut self, actor: &Actor, probes: &Array2<f64>) -> Result<(f64, f64)> {
        let d = self.distance(actor, probes)?;
        Ok((d, self.adapt_to(d)))
    }
}

/// `clip(μ_θ̃(s) + OU)`. Falls back to the unperturbed actor before the first
/// refresh.
pub fn behavior_action<R: Rng + ?Sized>(
    actor: &Actor,
    noise: &ParamNoise,
    ou: &mut OuProcess,
    state: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let base = match noise.perturbed() {
        Some(net) => net.predict(state)?.into_iter().map(|a| a * actor.bound()).collect(),
        None => actor.act(state)?,
    };
    let b = actor.bound();
    Ok(base
        .iter()
        .zip(ou.step(rng))
        .map(|(a, n)| (a + n).clamp(-b, b))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn actor(rng: &mut ChaCha8Rng) -> Actor {
        let spec = Actor::spec_for(3, 2, &[16, 16], true);
        Actor::from_net(MlpNet::init(spec, Some(0.5), rng).unwrap(), 2.0, AdamConfig::default()).unwrap()
    }

    #[test]
    fn noiseless_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ou = OuProcess::new(1, 0.15, 0.0, 1.0).unwrap();
        ou.set_state(&[1.0]);
        assert!((ou.step(&mut rng)[0] - 0.85).abs() < 1e-15);
        ou.reset();
        assert_eq!(ou.step(&mut rng), vec![0.0]);
    }

    #[test]
    fn adapt_rule_and_tie_break() {
        let mut pn = ParamNoise::new(ParamNoiseConfig::default()).unwrap();
        let s0 = pn.stddev();
        assert!((pn.adapt_to(0.2) - s0 / 1.01).abs() < 1e-15);
        let s1 = pn.stddev();
        assert!((pn.adapt_to(0.1) - s1 * 1.01).abs() < 1e-15);
        let mut a = ParamNoise::new(ParamNoiseConfig::default()).unwrap();
        let mut b = a.clone();
        assert!(a.adapt_to(0.3) <= b.adapt_to(0.05));
    }

    #[test]
    fn stddev_stays_in_bounds() {
        let mut pn = ParamNoise::new(ParamNoiseConfig::default()).unwrap();
        for _ in 0..5000 {
            pn.adapt_to(0.0);
        }
        assert_eq!(pn.stddev(), STDDEV_MAX);
        for _ in 0..5000 {
            pn.adapt_to(10.0);
        }
        assert_eq!(pn.stddev(), STDDEV_MIN);
    }

    #[test]
    fn identical_weights_measure_zero_and_grow() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = actor(&mut rng);
        let mut pn = ParamNoise::new(ParamNoiseConfig {
            initial_stddev: 0.0,
            ..ParamNoiseConfig::default()
        })
        .unwrap();
        pn.refresh(&actor, &mut rng).unwrap();
        let probes = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
        assert_eq!(pn.distance(&actor, &probes).unwrap(), 0.0);
        let mut on = ParamNoise::new(ParamNoiseConfig::default()).unwrap();
        let s = on.stddev();
        on.perturbed = Some(actor.net().clone());
        let (d, after) = on.adapt(&actor, &probes).unwrap();
        assert_eq!(d, 0.0);
        assert!(after > s);
    }

    #[test]
    fn floor_stddev_barely_moves_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = actor(&mut rng);
        let mut pn = ParamNoise::new(ParamNoiseConfig {
            initial_stddev: STDDEV_MIN,
            ..ParamNoiseConfig::default()
        })
        .unwrap();
        pn.refresh(&actor, &mut rng).unwrap();
        let probes = Array2::from_shape_fn((50, 3), |_| rng.random_range(-1.0..1.0));
        let d = pn.distance(&actor, &probes).unwrap();
        assert!(d < 1e-4, "distance {d}");
    }

    #[test]
    fn same_seed_same_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = actor(&mut rng);
        let mut a = ParamNoise::new(ParamNoiseConfig::default()).unwrap();
        let mut b = a.clone();
        a.refresh(&actor, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        b.refresh(&actor, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.perturbed().unwrap().params(), b.perturbed().unwrap().params());
    }

    #[test]
    fn behavior_without_noise_is_the_actor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = actor(&mut rng);
        let mut pn = ParamNoise::new(ParamNoiseConfig {
            initial_stddev: 0.0,
            ..ParamNoiseConfig::default()
        })
        .unwrap();
        pn.refresh(&actor, &mut rng).unwrap();
        let mut ou = OuProcess::new(2, 0.15, 0.0, 1.0).unwrap();
        let s = [0.3, -0.2, 0.9];
        assert_eq!(behavior_action(&actor, &pn, &mut ou, &s, &mut rng).unwrap(), actor.act(&s).unwrap());
    }

    #[test]
    fn behavior_is_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = actor(&mut rng);
        let mut pn = ParamNoise::new(ParamNoiseConfig {
            initial_stddev: 1.0,
            ..ParamNoiseConfig::default()
        })
        .unwrap();
        pn.refresh(&actor, &mut rng).unwrap();
        let mut ou = OuProcess::new(2, 0.15, 50.0, 1.0).unwrap();
        for _ in 0..200 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = behavior_action(&actor, &pn, &mut ou, &s, &mut rng).unwrap();
            assert!(a.iter().all(|v| v.abs() <= 2.0));
        }
    }
}
