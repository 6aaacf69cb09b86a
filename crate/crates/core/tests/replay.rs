//! Replay sampling statistics and n-step assembly against a linear scan.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sam_core::replay::{discounted_sum, ReplayBuffer, Transition};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn tr(id: usize, reward: f64, terminal: bool) -> Transition {
    Transition {
        state: vec![id as f64],
        action: vec![0.0],
        syn_reward: reward,
        next_state: vec![id as f64 + 0.5],
        terminal,
    }
}

#[test]
fn uniform_sampling_passes_chi_square() {
    let mut b = ReplayBuffer::new(100, 1, 1).unwrap();
    for i in 0..100 {
        b.push(tr(i, 0.0, false)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    let mut counts = [0u64; 100];
    let draws = 1_000_000;
    for t in b.sample_uniform(draws, &mut rng).unwrap() {
        counts[t.state[0] as usize] += 1;
    }
    let expected = draws as f64 / 100.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square {stat}, p = {p}");
}

#[test]
fn fixed_seed_reproduces_batches() {
    let mut b = ReplayBuffer::new(100, 1, 1).unwrap();
    for i in 0..50 {
        b.push(tr(i, i as f64, false)).unwrap();
    }
    let a = b.sample_nstep(32, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let c = b.sample_nstep(32, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, c);
}

/// Random episodes, some ending in a true terminal and some truncated.
fn fill_episodes(rng: &mut ChaCha8Rng, b: &mut ReplayBuffer, episodes: usize) -> Vec<(usize, usize, bool)> {
    let mut spans = Vec::new();
    let mut id = 0;
    for _ in 0..episodes {
        let len = rng.random_range(1..=12);
        let terminal = rng.random_bool(0.5);
        let start = id;
        for j in 0..len {
            b.push(tr(id, rng.random_range(-3.0..3.0), terminal && j + 1 == len)).unwrap();
            id += 1;
        }
        b.mark_episode_end();
        spans.push((start, id, terminal));
    }
    spans
}

#[test]
fn nstep_windows_match_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut b = ReplayBuffer::new(10_000, 1, 1).unwrap();
    let spans = fill_episodes(&mut rng, &mut b, 100);
    let gamma: f64 = 0.97;
    for n in [1, 3, 5, 20] {
        for &(start, end, terminal) in &spans {
            for t in start..end {
                let w = b.window(t, n).unwrap();
                let k = n.min(end - t);
                assert_eq!(w.k(), k);
                let slice: Vec<&Transition> = (t..t + k).map(|i| b.get(i).unwrap()).collect();
                let rewards: Vec<f64> = slice.iter().map(|x| x.syn_reward).collect();
                assert_eq!(w.rewards(), rewards);
                assert_eq!(w.bootstrap_state(), slice[k - 1].next_state.as_slice());
                assert_eq!(w.bootstrap_masked(), terminal && t + k == end);
                let mut direct = 0.0;
                for (j, r) in rewards.iter().enumerate() {
                    direct += gamma.powi(j as i32) * r;
                }
                assert!((discounted_sum(&w.rewards(), gamma) - direct).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn sampled_windows_never_cross_marks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut b = ReplayBuffer::new(10_000, 1, 1).unwrap();
    let spans = fill_episodes(&mut rng, &mut b, 40);
    let episode_of = |id: usize| spans.iter().position(|&(s, e, _)| (s..e).contains(&id)).unwrap();
    for w in b.sample_nstep(2000, 5, &mut rng).unwrap() {
        let first = episode_of(w.state()[0] as usize);
        assert!(w.transitions().iter().all(|t| episode_of(t.state[0] as usize) == first));
    }
}

#[test]
fn short_episode_windows_are_truncated() {
    let mut b = ReplayBuffer::new(100, 1, 1).unwrap();
    for i in 0..3 {
        b.push(tr(i, 1.0, false)).unwrap();
    }
    b.mark_episode_end();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(b.sample_nstep(100, 5, &mut rng).unwrap().iter().all(|w| w.k() <= 3));
}

proptest! {
    #[test]
    fn size_is_bounded_and_fifo_survives(cap in 1usize..40, pushes in 0usize..120) {
        let mut b = ReplayBuffer::new(cap, 1, 1).unwrap();
        for i in 0..pushes {
            b.push(tr(i, 0.0, false)).unwrap();
            prop_assert_eq!(b.len(), (i + 1).min(cap));
        }
        let ids: Vec<usize> = b.iter().map(|t| t.state[0] as usize).collect();
        let expected: Vec<usize> = (pushes.saturating_sub(cap)..pushes).collect();
        prop_assert_eq!(ids, expected);
    }
}
