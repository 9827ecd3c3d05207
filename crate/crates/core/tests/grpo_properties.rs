use rand::Rng;
use rand_distr::{Distribution, Normal};

use reasoner_core::grpo::{compute_advantages, objective_and_gradient, GrpoConfig, RolloutGroup};
use reasoner_core::params::ParamVector;
use reasoner_core::policy::{TabularPolicy, TokenId};
use reasoner_core::rng::{substream, ChaCha8Rng};

const V: usize = 16;

fn random_policy(rng: &mut ChaCha8Rng) -> TabularPolicy {
    let mut p = TabularPolicy::uniform(3, 5, V).unwrap();
    let n = Normal::new(0.0, 1.0).unwrap();
    let values = (0..p.params().dim()).map(|_| n.sample(rng)).collect();
    p.set_params(ParamVector::new(values).unwrap()).unwrap();
    p
}

/// On-policy group: sampling, current and reference policies coincide.
fn on_policy_group(rng: &mut ChaCha8Rng, p: &TabularPolicy, g: usize) -> RolloutGroup {
    let mut group = RolloutGroup {
        prompt_id: 0,
        responses: vec![],
        states: vec![],
        trainable: vec![],
        logp_old: vec![],
        logp_theta: vec![],
        logp_ref: vec![],
        rewards: (0..g).map(|_| f64::from(rng.random_range(0..3u8)) / 2.0).collect(),
    };
    for _ in 0..g {
        let len = rng.random_range(1..=5);
        let states: Vec<usize> = (0..len).map(|_| rng.random_range(0..p.num_states())).collect();
        let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..V as TokenId)).collect();
        let lp: Vec<f64> = states.iter().zip(&tokens).map(|(&s, &t)| p.token_logprob(s, t).unwrap()).collect();
        group.logp_old.push(lp.clone());
        group.logp_theta.push(lp.clone());
        group.logp_ref.push(lp);
        group.trainable.push(vec![true; len]);
        group.states.push(states);
        group.responses.push(tokens);
    }
    group
}

/// Softmax of a logit row, computed from scratch.
fn probs(p: &TabularPolicy, s: usize) -> Vec<f64> {
    let row = &p.params().as_slice()[s * V..(s + 1) * V];
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

#[test]
fn on_policy_without_kl_is_length_normalized_reinforce() {
    let mut rng = substream(31, "reinforce", 0);
    let cfg = GrpoConfig {
        beta: 0.0,
        ..GrpoConfig::default()
    };
    for trial in 0..50 {
        let p = random_policy(&mut rng);
        let g = [2, 4, 8][trial % 3];
        let mut group = on_policy_group(&mut rng, &p, g);
        let adv = compute_advantages(&group.rewards, cfg.delta_adv).unwrap();
        let (_, grad) = objective_and_gradient(&p, &mut group, &cfg).unwrap();
        let got = grad.to_dense(p.params().dim(), V);

        let mut want = vec![0.0; p.params().dim()];
        for i in 0..g {
            let n = group.responses[i].len() as f64;
            for (&s, &t) in group.states[i].iter().zip(&group.responses[i]) {
                let pr = probs(&p, s);
                for (v, q) in pr.iter().enumerate() {
                    let indicator = if v == t as usize { 1.0 } else { 0.0 };
                    want[s * V + v] += adv.values()[i] / (g as f64 * n) * (indicator - q);
                }
            }
        }
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn kl_gradient_vanishes_at_the_reference() {
    let mut rng = substream(32, "kl", 0);
    let p = random_policy(&mut rng);
    let mut group = on_policy_group(&mut rng, &p, 4);
    group.rewards = vec![0.0, 1.0, 0.0, 1.0];
    let with_kl = GrpoConfig::default();
    let without = GrpoConfig {
        beta: 0.0,
        ..GrpoConfig::default()
    };
    let (oa, ga) = objective_and_gradient(&p, &mut group.clone(), &with_kl).unwrap();
    let (ob, gb) = objective_and_gradient(&p, &mut group, &without).unwrap();
    assert!((oa.value - ob.value).abs() < 1e-15);
    let dim = p.params().dim();
    for (a, b) in ga.to_dense(dim, V).iter().zip(gb.to_dense(dim, V)) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn gradient_ascent_raises_the_objective() {
    let mut rng = substream(33, "ascent", 0);
    let cfg = GrpoConfig::default();
    for _ in 0..20 {
        let p = random_policy(&mut rng);
        let mut group = on_policy_group(&mut rng, &p, 8);
        if group.rewards.iter().all(|&r| r == group.rewards[0]) {
            continue;
        }
        let (before, grad) = objective_and_gradient(&p, &mut group, &cfg).unwrap();
        let mut q = p.clone();
        grad.apply(&mut q, 1e-3).unwrap();
        let (after, _) = objective_and_gradient(&q, &mut group, &cfg).unwrap();
        assert!(after.value > before.value, "{} -> {}", before.value, after.value);
    }
}
