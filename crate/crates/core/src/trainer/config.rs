use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adversary::RewardForm;
use crate::envs::EnvKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// Rewards written into the buffer at collection time.
    Stored,
    /// Rewards recomputed with the current discriminator at update time.
    #[default]
    Recomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorGradMode {
    /// Through the critic only.
    #[default]
    Dpg,
    /// Through the synthetic reward only.
    Reward,
    /// `(1 - actor_grad_mix)·dpg + actor_grad_mix·reward`.
    Mix,
}

/// Every knob of a training run. Serialized as a flat JSON object; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub env: EnvKind,
    /// Outer iterations.
    pub i_max: usize,
    /// Collection rounds per iteration.
    pub c_max: usize,
    /// Environment steps per collection round, per worker.
    pub rollout_steps: usize,
    pub t_max: usize,
    /// Two-phase discriminator rounds per `t`.
    pub d_max: usize,
    /// Critic and actor steps per `t`.
    pub g_max: usize,
    pub workers: usize,
    /// One seed per worker.
    pub seeds: Vec<u64>,
    pub gamma: f64,
    pub n_step: usize,
    pub lambda: f64,
    pub nu: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub disc_batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub disc_lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    /// Layer norm on the actor and critic hidden layers.
    pub layer_norm: bool,
    pub buffer_capacity: usize,
    pub popart_rate: f64,
    pub reward_source: RewardSource,
    pub reward_form: RewardForm,
    pub actor_grad: ActorGradMode,
    pub actor_grad_mix: f64,
    pub ou_kappa: f64,
    /// OU volatility as a fraction of the action bound.
    pub ou_sigma: f64,
    pub param_noise_stddev: f64,
    pub param_noise_delta: f64,
    pub param_noise_alpha: f64,
    /// Uniform-random steps per worker before any update.
    pub warmup_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop once the seed-averaged evaluation mean reaches this value.
    pub target_return: Option<f64>,
    /// Stop once this many interactions have been collected.
    pub max_interactions: Option<u64>,
    /// Whole episodes per worker per on-policy iteration.
    pub onpolicy_episodes: usize,
    pub onpolicy_lr: f64,
    pub onpolicy_init_std: f64,
    pub bc_epochs: usize,
    pub bc_lr: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::DoubleIntegrator1d,
            i_max: 3000,
            c_max: 1,
            rollout_steps: 50,
            t_max: 1,
            d_max: 5,
            g_max: 50,
            workers: 4,
            seeds: vec![0, 1, 2, 3],
            gamma: 0.99,
            n_step: 5,
            lambda: 10.0,
            nu: 1e-4,
            tau: 0.005,
            batch_size: 128,
            disc_batch_size: 128,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            disc_lr: 1e-3,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            disc_hidden: vec![64, 64],
            layer_norm: true,
            buffer_capacity: 100_000,
            popart_rate: 1e-3,
            reward_source: RewardSource::Recomputed,
            reward_form: RewardForm::LogD,
            actor_grad: ActorGradMode::Dpg,
            actor_grad_mix: 0.0,
            ou_kappa: 0.15,
            ou_sigma: 0.2,
            param_noise_stddev: 0.05,
            param_noise_delta: 0.1,
            param_noise_alpha: 1.01,
            warmup_steps: 1000,
            eval_every: 20,
            eval_episodes: 10,
            target_return: None,
            max_interactions: None,
            onpolicy_episodes: 1,
            onpolicy_lr: 1e-3,
            onpolicy_init_std: 0.3,
            bc_epochs: 2000,
            bc_lr: 1e-3,
        }
    }
}

impl TrainerConfig {
    /// `workers` consecutive seeds starting at `base · 1000`.
    pub fn with_base_seed(mut self, base: u64) -> Self {
        self.seeds = (0..self.workers as u64).map(|r| base * 1000 + r).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("i_max", self.i_max),
            ("c_max", self.c_max),
            ("rollout_steps", self.rollout_steps),
            ("t_max", self.t_max),
            ("workers", self.workers),
            ("n_step", self.n_step),
            ("batch_size", self.batch_size),
            ("disc_batch_size", self.disc_batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("onpolicy_episodes", self.onpolicy_episodes),
        ] {
            if v == 0 {
                return bad(format!("`{name}` must be at least 1"));
            }
        }
        if self.seeds.len() != self.workers {
            return bad(format!(
                "`seeds` has {} entries for {} workers",
                self.seeds.len(),
                self.workers
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return bad(format!("`gamma` {} outside [0, 1]", self.gamma));
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return bad(format!("`tau` {} outside [0, 1]", self.tau));
        }
        if !(self.actor_grad_mix >= 0.0 && self.actor_grad_mix <= 1.0) {
            return bad(format!("`actor_grad_mix` {} outside [0, 1]", self.actor_grad_mix));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("disc_lr", self.disc_lr),
            ("popart_rate", self.popart_rate),
            ("ou_kappa", self.ou_kappa),
            ("onpolicy_lr", self.onpolicy_lr),
            ("onpolicy_init_std", self.onpolicy_init_std),
            ("bc_lr", self.bc_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("`{name}` must be positive, got {v}"));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("nu", self.nu), ("ou_sigma", self.ou_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("`{name}` must be non-negative, got {v}"));
            }
        }
        for (name, h) in [
            ("actor_hidden", &self.actor_hidden),
            ("critic_hidden", &self.critic_hidden),
            ("disc_hidden", &self.disc_hidden),
        ] {
            if h.is_empty() || h.contains(&0) {
                return bad(format!("`{name}` needs positive layer widths"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `key=value` overrides. Values parse as JSON, falling back to a
    /// bare string (so `env=cartpole_balance` works unquoted). Changing
    /// `workers` without `seeds` renumbers the seeds from the first one.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut map: BTreeMap<String, Value> = match serde_json::to_value(self)? {
            Value::Object(m) => m.into_iter().collect(),
            _ => unreachable!("config serializes to an object"),
        };
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            let key = key.trim();
            if !map.contains_key(key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            map.insert(key.to_string(), value);
        }
        let keys: Vec<&str> = overrides
            .iter()
            .filter_map(|o| o.as_ref().split_once('=').map(|(k, _)| k.trim()))
            .collect();
        if keys.contains(&"workers") && !keys.contains(&"seeds") {
            // keep one seed per worker, counting up from the current first seed
            if let Some(k) = map.get("workers").and_then(Value::as_u64) {
                let first = self.seeds.first().copied().unwrap_or(0);
                map.insert("seeds".into(), (0..k).map(|r| first + r).collect());
            }
        }
        let obj: serde_json::Map<String, Value> = map.into_iter().collect();
        let c: Self = serde_json::from_value(Value::Object(obj))
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = TrainerConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainerConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = TrainerConfig::from_json(r#"{"gama": 0.9}"#).unwrap_err();
        assert!(err.is_config() && err.to_string().contains("gama"), "{err}");
        let err = TrainerConfig::default().with_overrides(&["batchsize=3"]).unwrap_err();
        assert!(err.to_string().contains("batchsize"));
    }

    #[test]
    fn overrides_parse_json_and_bare_strings() {
        let c = TrainerConfig::default()
            .with_overrides(&["gamma=0.5", "env=cartpole_balance", "seeds=[7]", "workers=1", "target_return=-3.5"])
            .unwrap();
        assert_eq!(c.gamma, 0.5);
        assert_eq!(c.env, EnvKind::CartpoleBalance);
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.target_return, Some(-3.5));
    }

    #[test]
    fn seed_count_must_match_workers() {
        let c = TrainerConfig::default().with_overrides(&["workers=2"]).unwrap();
        assert_eq!(c.seeds, vec![0, 1]);
        let c = TrainerConfig::default().with_base_seed(3).with_overrides(&["workers=3"]).unwrap();
        assert_eq!(c.seeds, vec![3000, 3001, 3002]);
        let err = TrainerConfig::default()
            .with_overrides(&["workers=2", "seeds=[4]"])
            .unwrap_err();
        assert!(err.is_config());
    }
}
