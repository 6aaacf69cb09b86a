//! Discriminator loss, penalty and reward checks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sam_core::adversary::{
    two_phase_reward_update, Discriminator, DiscriminatorConfig, ExpertPool,
};
use sam_core::envs::Pair;
use sam_core::nn::{AdamConfig, HiddenActivation, MlpNet, MlpSpec, OutputActivation};
use sam_core::replay::{ReplayBuffer, RoundCollector, Transition};
use sam_core::sync::{GradSync, SyncTag};
use sam_core::Result;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs().max(b.abs()))
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize, shift: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0) + shift)
}

fn random_disc(rng: &mut ChaCha8Rng, i: usize) -> Discriminator {
    let input = rng.random_range(2..=4);
    let act = if i.is_multiple_of(2) { HiddenActivation::Tanh } else { HiddenActivation::Relu };
    let spec = MlpSpec::new(input, &[rng.random_range(3..=6), rng.random_range(3..=6)], 1)
        .with_hidden_activation(act)
        .with_output_activation(OutputActivation::Sigmoid)
        .with_layer_norm(i.is_multiple_of(3));
    let net = MlpNet::init(spec, None, rng).unwrap();
    let config = DiscriminatorConfig {
        lambda: 10.0,
        ..DiscriminatorConfig::default()
    };
    Discriminator::from_net(net, &config).unwrap()
}

#[test]
fn loss_gradient_with_penalty_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let h = 1e-5;
    for i in 0..20 {
        let mut disc = random_disc(&mut rng, i);
        let w = disc.net().input_dim();
        let gen = random_batch(&mut rng, 5, w, -0.3);
        let exp = random_batch(&mut rng, 5, w, 0.3);
        let u: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let (_, grad) = disc.loss_and_grad_at(&gen, &exp, &u).unwrap();
        let base = disc.net().params().clone();
        for j in 0..base.len() {
            let mut eval = |delta: f64| {
                let mut p = base.clone();
                p.values_mut()[j] += delta;
                disc.net_mut().set_params(p).unwrap();
                disc.loss_and_grad_at(&gen, &exp, &u).unwrap().0.total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let g = grad.params().values()[j];
            assert!(rel_err(g, fd) <= 1e-5, "instance {i} coord {j}: {g} vs {fd}");
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn reward_matches_straight_line_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let spec = Discriminator::spec_for(2, 1, &[4]);
        let net = MlpNet::init(spec, None, &mut rng).unwrap();
        let v = net.params().values().to_vec();
        let disc = Discriminator::from_net(net, &DiscriminatorConfig::default()).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        // W1 (4x3, row-major), b1, W2 (1x4), b2
        let mut z = v[20];
        for j in 0..4 {
            let pre = v[3 * j] * x[0] + v[3 * j + 1] * x[1] + v[3 * j + 2] * x[2] + v[12 + j];
            z += v[16 + j] * pre.max(0.0);
        }
        let expected = -(1.0 - sigmoid(z)).ln();
        let r = disc.synthetic_reward(&x[..2], &x[2..]).unwrap();
        assert!((r - expected).abs() <= 1e-12, "{r} vs {expected}");
    }
}

#[test]
fn reward_is_increasing_in_d() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let disc = Discriminator::new(1, 1, &DiscriminatorConfig::default(), &mut rng).unwrap();
    let xs = Array2::from_shape_fn((200, 2), |_| rng.random_range(-3.0..3.0));
    let d = disc.probabilities(&xs).unwrap();
    let r = disc.rewards(&xs).unwrap();
    for i in 0..d.len() {
        for j in 0..d.len() {
            if d[i] < d[j] {
                assert!(r[i] <= r[j]);
            }
        }
    }
}

#[test]
fn penalty_matches_closed_form_for_a_single_unit() {
    // relu(w x) with a unit output weight: on x > 0, D = σ(w x) and
    // |dD/dx| = σ(z)(1 − σ(z)) |w|.
    for w in [0.5, 2.0, 7.0] {
        let spec = Discriminator::spec_for(1, 0, &[1]);
        let net = MlpNet::from_values(spec, vec![w, 0.0, 1.0, 0.0]).unwrap();
        let disc = Discriminator::from_net(net, &DiscriminatorConfig::default()).unwrap();
        let gen = Array2::from_shape_vec((3, 1), vec![0.2, 0.5, 1.0]).unwrap();
        let exp = Array2::from_shape_vec((3, 1), vec![0.8, 1.5, 0.1]).unwrap();
        let u = [0.1, 0.6, 0.9];
        let (p, _) = disc.gp_penalty(&gen, &exp, &u).unwrap();
        let mut expected = 0.0;
        for i in 0..3 {
            let x = u[i] * gen[(i, 0)] + (1.0 - u[i]) * exp[(i, 0)];
            let s = sigmoid(w * x);
            expected += (s * (1.0 - s) * w - 1.0).powi(2) / 3.0;
        }
        assert!((p - expected).abs() <= 1e-10, "{p} vs {expected}");
    }
}

#[test]
fn separated_batches_have_tiny_cross_entropy() {
    // a steep unit puts D at the clamp on both sides
    let spec = Discriminator::spec_for(1, 0, &[1]);
    let net = MlpNet::from_values(spec, vec![1.0, 0.0, 100.0, -50.0]).unwrap();
    let disc = Discriminator::from_net(net, &DiscriminatorConfig::default()).unwrap();
    let gen = Array2::from_elem((4, 1), 0.0);
    let exp = Array2::from_elem((4, 1), 1.0);
    let (loss, _) = disc.loss_and_grad_at(&gen, &exp, &[0.0; 4]).unwrap();
    assert!(loss.gen_ce + loss.exp_ce <= 2.0 * -(1.0f64 - 1e-8).ln() + 1e-15);
}

fn blobs(rng: &mut ChaCha8Rng, n: usize) -> (Array2<f64>, Array2<f64>) {
    let gen = Array2::from_shape_fn((n, 3), |(_, j)| rng.random_range(-0.5..0.5) - if j == 0 { 1.0 } else { 0.0 });
    let exp = Array2::from_shape_fn((n, 3), |(_, j)| rng.random_range(-0.5..0.5) + if j == 0 { 1.0 } else { 0.0 });
    (gen, exp)
}

#[test]
fn full_batch_loss_decreases_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let disc0 = Discriminator::new(2, 1, &DiscriminatorConfig::default(), &mut rng).unwrap();
    let mut net = disc0.net().clone();
    let (gen, exp) = blobs(&mut rng, 64);
    let u: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let disc = Discriminator::from_net(net.clone(), &DiscriminatorConfig::default()).unwrap();
        let (loss, grad) = disc.loss_and_grad_at(&gen, &exp, &u).unwrap();
        assert!(loss.total <= last, "{} > {last}", loss.total);
        last = loss.total;
        net.params_mut().add_scaled(grad.params(), -1e-3).unwrap();
    }
}

#[test]
fn separates_linearly_separable_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let config = DiscriminatorConfig {
        adam: AdamConfig::with_lr(1e-3),
        ..DiscriminatorConfig::default()
    };
    let mut disc = Discriminator::new(2, 1, &config, &mut rng).unwrap();
    let (gen, exp) = blobs(&mut rng, 256);
    let mut acc = 0.0;
    for _ in 0..500 {
        let (loss, grad) = disc.loss_and_grad(&gen, &exp, &mut rng).unwrap();
        acc = f64::max(acc, loss.accuracy);
        disc.apply(grad).unwrap();
    }
    assert!(acc > 0.9, "accuracy {acc}");
}

#[derive(Default)]
struct Spy {
    tags: Vec<SyncTag>,
}

impl GradSync for Spy {
    fn workers(&self) -> usize {
        1
    }

    fn all_reduce(&mut self, tag: SyncTag, _values: &mut [f64]) -> Result<()> {
        self.tags.push(tag);
        Ok(())
    }
}

fn fixtures(rng: &mut ChaCha8Rng) -> (RoundCollector, ReplayBuffer, ExpertPool) {
    let mut collector = RoundCollector::new();
    let mut buffer = ReplayBuffer::new(100, 2, 1).unwrap();
    collector.start_round();
    let mut experts = Vec::new();
    for _ in 0..20 {
        let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = vec![rng.random_range(-1.0..1.0)];
        collector.push(Pair { state: s.clone(), action: a.clone() });
        buffer
            .push(Transition { state: s.clone(), action: a.clone(), syn_reward: 0.0, next_state: s.clone(), terminal: false })
            .unwrap();
        experts.push(Pair { state: s, action: vec![0.5] });
    }
    (collector, buffer, ExpertPool::new(&experts).unwrap())
}

#[test]
fn two_phase_schedule_alternates_recent_then_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (collector, buffer, experts) = fixtures(&mut rng);
    let mut disc = Discriminator::new(2, 1, &DiscriminatorConfig::default(), &mut rng).unwrap();
    let mut spy = Spy::default();
    let diag = two_phase_reward_update(&mut disc, &collector, &buffer, &experts, 3, 8, &mut rng, &mut spy).unwrap();
    use SyncTag::{DiscRecent as C, DiscReplay as R};
    assert_eq!(spy.tags, vec![C, R, C, R, C, R]);
    assert_eq!(disc.optimizer_steps(), 6);
    assert_eq!((diag.recent.len(), diag.replay.len()), (3, 3));
}

#[test]
fn zero_inner_steps_leave_parameters_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (collector, buffer, experts) = fixtures(&mut rng);
    let mut disc = Discriminator::new(2, 1, &DiscriminatorConfig::default(), &mut rng).unwrap();
    let before = disc.net().params().clone();
    let mut spy = Spy::default();
    two_phase_reward_update(&mut disc, &collector, &buffer, &experts, 0, 8, &mut rng, &mut spy).unwrap();
    assert_eq!(disc.net().params(), &before);
    assert!(spy.tags.is_empty());
}
