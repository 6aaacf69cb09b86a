//! Cross-worker averaging barrier.
//!
//! Every worker calls [`GradSync::all_reduce`] with the same sequence of tags;
//! each call blocks until all workers have contributed and then replaces the
//! local values with the worker mean, reduced in a fixed pairwise order.

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::pairwise_mean;

/// What is being averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncTag {
    /// Discriminator gradient on recent-round pairs.
    DiscRecent,
    /// Discriminator gradient on replay pairs.
    DiscReplay,
    Critic,
    Actor,
    /// Target-moment statistics for output normalization.
    PopArt,
    /// Evaluation summary used for early stopping.
    Eval,
}

impl fmt::Display for SyncTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub trait GradSync {
    /// Number of participating workers.
    fn workers(&self) -> usize;

    /// Replaces `values` with their mean across workers.
    fn all_reduce(&mut self, tag: SyncTag, values: &mut [f64]) -> Result<()>;
}

/// Single worker: averaging is the identity.
#[derive(Debug, Clone, Default)]
pub struct LocalSync {
    calls: u64,
}

impl LocalSync {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

impl GradSync for LocalSync {
    fn workers(&self) -> usize {
        1
    }

    fn all_reduce(&mut self, _tag: SyncTag, _values: &mut [f64]) -> Result<()> {
        self.calls += 1;
        Ok(())
    }
}

struct HubState {
    generation: u64,
    arrived: usize,
    slots: Vec<Option<(SyncTag, u64, Vec<f64>)>>,
    result: Arc<Vec<f64>>,
    aborted: Option<String>,
}

struct Hub {
    workers: usize,
    state: Mutex<HubState>,
    ready: Condvar,
}

/// One worker's handle on a shared in-process barrier.
pub struct AllReduce {
    hub: Arc<Hub>,
    rank: usize,
    seq: u64,
}

impl AllReduce {
    /// Handles for `k` workers, indexed by rank.
    pub fn group(k: usize) -> Result<Vec<AllReduce>> {
        if k == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        let hub = Arc::new(Hub {
            workers: k,
            state: Mutex::new(HubState {
                generation: 0,
                arrived: 0,
                slots: vec![None; k],
                result: Arc::new(Vec::new()),
                aborted: None,
            }),
            ready: Condvar::new(),
        });
        Ok((0..k)
            .map(|rank| AllReduce {
                hub: hub.clone(),
                rank,
                seq: 0,
            })
            .collect())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Releases every waiting worker with a synchronization fault.
    pub fn abort(&self, reason: &str) {
        let mut st = self.hub.state.lock().unwrap_or_else(|p| p.into_inner());
        if st.aborted.is_none() {
            st.aborted = Some(format!("worker {}: {reason}", self.rank));
        }
        self.hub.ready.notify_all();
    }
}

impl Drop for AllReduce {
    fn drop(&mut self) {
        self.abort("left the group");
    }
}

impl GradSync for AllReduce {
    fn workers(&self) -> usize {
        self.hub.workers
    }

    fn all_reduce(&mut self, tag: SyncTag, values: &mut [f64]) -> Result<()> {
        let seq = self.seq;
        self.seq += 1;
        let hub = &*self.hub;
        let mut st = hub.state.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(why) = &st.aborted {
            return Err(Error::SyncFault(why.clone()));
        }
        st.slots[self.rank] = Some((tag, seq, values.to_vec()));
        st.arrived += 1;
        let generation = st.generation;
        if st.arrived == hub.workers {
            let slots: Vec<_> = st.slots.iter_mut().map(|s| s.take().expect("all arrived")).collect();
            st.arrived = 0;
            let (t0, s0, v0) = (&slots[0].0, slots[0].1, slots[0].2.len());
            if let Some((rank, (t, s, v))) = slots
                .iter()
                .enumerate()
                .find(|(_, (t, s, v))| t != t0 || *s != s0 || v.len() != v0)
            {
                let msg = format!(
                    "worker 0 at {t0}#{s0} (len {v0}) but worker {rank} at {t}#{s} (len {})",
                    v.len()
                );
                st.aborted = Some(msg.clone());
                hub.ready.notify_all();
                return Err(Error::SyncFault(msg));
            }
            let rows: Vec<&[f64]> = slots.iter().map(|s| s.2.as_slice()).collect();
            st.result = Arc::new(pairwise_mean(&rows));
            st.generation += 1;
            hub.ready.notify_all();
        } else {
            while st.generation == generation {
                if let Some(why) = &st.aborted {
                    return Err(Error::SyncFault(why.clone()));
                }
                st = hub.ready.wait(st).unwrap_or_else(|p| p.into_inner());
            }
        }
        values.copy_from_slice(&st.result);
        Ok(())
    }
}
