use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::EvalStats;
use crate::actor_critic::Actor;
use crate::envs::{rollout, Env, EnvKind};
use crate::error::{Error, Result};

/// True-reward returns of `policy` over `episodes` episodes. Start states
/// come from a generator seeded with `seed`, drawn in the same order as
/// demonstration generation, so the expert reproduces its dataset here.
pub fn evaluate<P>(kind: EnvKind, episodes: usize, seed: u64, mut policy: P) -> Result<EvalStats>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut env = Env::new(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let returns = (0..episodes)
        .map(|_| rollout(&mut env, &mut policy, &mut rng).map(|ep| ep.ret))
        .collect::<Result<Vec<_>>>()?;
    EvalStats::from_returns(returns)
}

/// The unperturbed online policy, no exploration noise.
pub fn evaluate_actor(actor: &Actor, kind: EnvKind, episodes: usize, seed: u64) -> Result<EvalStats> {
    evaluate(kind, episodes, seed, |s| actor.act(s))
}
