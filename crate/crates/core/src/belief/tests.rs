use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::env::ObservationModel;
use crate::model::ServiceTypeSpec;
use crate::queueing::local_admitted_load;

/// Two-state, two-action MDP with full observation.
struct TinyMdp {
    reward: [[f64; 2]; 2],
    trans: [[[f64; 2]; 2]; 2],
}

impl BeliefModel for TinyMdp {
    type Belief = usize;
    fn actions(&self, _: &usize) -> Vec<u32> {
        vec![0, 1]
    }
    fn expected_reward(&self, s: &usize, a: u32) -> f64 {
        self.reward[*s][a as usize]
    }
    fn predict(&self, s: &usize, a: u32) -> Vec<(f64, usize)> {
        (0..2).map(|t| (self.trans[*s][a as usize][t], t)).collect()
    }
    fn key(&self, s: &usize) -> Vec<u64> {
        vec![*s as u64]
    }
}

fn tiny() -> TinyMdp {
    TinyMdp {
        reward: [[1.0, 0.0], [0.5, 3.0]],
        trans: [[[0.9, 0.1], [0.2, 0.8]], [[0.7, 0.3], [0.95, 0.05]]],
    }
}

fn value_iteration(m: &TinyMdp, sweeps: usize, gamma: f64) -> [f64; 2] {
    let mut v = [0.0; 2];
    for _ in 0..sweeps {
        let mut next = [f64::MIN; 2];
        for s in 0..2 {
            for a in 0..2 {
                let q = m.reward[s][a] + gamma * (m.trans[s][a][0] * v[0] + m.trans[s][a][1] * v[1]);
                next[s] = next[s].max(q);
            }
        }
        v = next;
    }
    v
}

fn single_service(reward: f64) -> Vec<ServiceTypeSpec> {
    vec![ServiceTypeSpec::new("svc", 0.1, reward, 10.0)]
}

/// One node, deterministic switch from 10 to 60 req/s, no harvest.
fn saving_agent(depth: usize, reward: f64) -> FogAgent {
    let net = Network::isolated(single_service(reward), vec![FogNodeSpec::new(10, 1, 10)]);
    let env = EnvModel {
        harvest: vec![MarkovChain::constant(0.0)],
        arrivals: vec![vec![MarkovChain::new(
            vec![10.0, 60.0],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        )
        .unwrap()]],
        battery_cap: vec![10],
        observation: ObservationModel::ExactLocal,
    };
    let config = AgentConfig {
        depth,
        ..AgentConfig::default()
    };
    FogAgent::new(&net, &env, 0, config).unwrap()
}

fn pair_agent(types: TypeSpace) -> (FogAgent, Network) {
    let nodes = vec![FogNodeSpec::new(10, 1, 10); 2];
    let net = Network::isolated(single_service(1.0), nodes).with_links(&[(0, 1), (1, 0)], 0.02);
    let chain = || MarkovChain::constant(30.0);
    let env = EnvModel {
        harvest: vec![MarkovChain::constant(1.0); 2],
        arrivals: vec![vec![chain()], vec![chain()]],
        battery_cap: vec![10; 2],
        observation: ObservationModel::ExactLocal,
    };
    let config = AgentConfig {
        types,
        ..AgentConfig::default()
    };
    (FogAgent::new(&net, &env, 0, config).unwrap(), net)
}

#[test]
fn bayes_step_by_hand() {
    let post = filter_step(&[0.5, 0.5], |v, u| if v == u { 1.0 } else { 0.0 }, &[0.9, 0.1]).unwrap();
    assert!((post[0] - 0.9).abs() < 1e-12 && (post[1] - 0.1).abs() < 1e-12);
}

#[test]
fn stationary_prior_is_a_fixed_point() {
    let chain = MarkovChain::new(vec![0.0, 1.0], vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
    let pi = chain.stationary();
    let post = filter_step(&pi, |v, u| chain.prob(v, u), &[1.0, 1.0]).unwrap();
    for (a, b) in post.iter().zip(&pi) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn impossible_observation_leaves_belief_unchanged() {
    assert_eq!(
        filter_step(&[1.0, 0.0], |v, u| if v == u { 1.0 } else { 0.0 }, &[0.0, 1.0]),
        Err(BeliefError::ImpossibleObservation)
    );
    let model = EnvModel {
        harvest: vec![MarkovChain::constant(2.0)],
        arrivals: vec![vec![MarkovChain::constant(5.0)]],
        battery_cap: vec![10],
        observation: ObservationModel::ExactLocal,
    };
    let start = EnvState {
        harvest: vec![0],
        arrivals: vec![vec![0]],
        battery: vec![4],
    };
    let mut belief = EnvBelief::point(start);
    let before = belief.clone();
    let action = EnvAction { consumed: vec![1] };
    let wrong = Observation {
        node: 0,
        battery: 9,
        arrivals: vec![0],
    };
    assert_eq!(
        belief.update(&model, &action, &wrong),
        Err(BeliefError::ImpossibleObservation)
    );
    assert_eq!(belief.support, before.support);
    assert_eq!(belief.rejected, 1);
}

#[test]
fn deterministic_chain_gives_point_mass() {
    let model = EnvModel {
        harvest: vec![MarkovChain::constant(2.0), MarkovChain::constant(0.0)],
        arrivals: vec![vec![MarkovChain::constant(5.0)], vec![MarkovChain::constant(7.0)]],
        battery_cap: vec![10, 10],
        observation: ObservationModel::ExactLocal,
    };
    let start = EnvState {
        harvest: vec![0, 0],
        arrivals: vec![vec![0], vec![0]],
        battery: vec![4, 3],
    };
    let mut belief = EnvBelief::point(start);
    let action = EnvAction { consumed: vec![1, 3] };
    let obs = Observation {
        node: 0,
        battery: 5,
        arrivals: vec![0],
    };
    belief.update(&model, &action, &obs).unwrap();
    let expected = EnvState {
        harvest: vec![0, 0],
        arrivals: vec![vec![0], vec![0]],
        battery: vec![5, 0],
    };
    assert_eq!(belief.support, vec![(expected, 1.0)]);
}

#[test]
fn dirichlet_conjugate_update() {
    let space = TypeSpace { levels: vec![5, 0] };
    let mut b = TypeBelief::new(1, 1, 2, 1.0).unwrap();
    assert_eq!(b.mean(0, 0), vec![0.5, 0.5]);
    b.observe(&space, 0, 0, 5.0).unwrap();
    let m = b.mean(0, 0);
    assert!((m[0] - 2.0 / 3.0).abs() < 1e-12 && (m[1] - 1.0 / 3.0).abs() < 1e-12);
    assert!(matches!(
        b.observe(&space, 0, 0, 3.0),
        Err(BeliefError::InconsistentOutcome { capability, .. }) if capability == 3.0
    ));
    assert_eq!(b.counts(0, 0), &[2.0, 1.0]);
    assert!(TypeBelief::new(1, 1, 2, 0.0).is_err());
}

#[test]
fn dirichlet_mean_converges_to_generating_distribution() {
    let truth = [0.2, 0.5, 0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut b = TypeBelief::new(1, 1, 3, 1.0).unwrap();
    for _ in 0..10_000 {
        let t = crate::env::sample_index(&truth, &mut rng);
        let mut lik = vec![0.0; 3];
        lik[t] = 1.0;
        b.update(0, 0, &lik).unwrap();
    }
    let tv: f64 = b.mean(0, 0).iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn type_space_classifies_to_nearest_level() {
    let s = TypeSpace::three_level(10);
    assert_eq!(s.classify(-7.0), 0);
    assert_eq!(s.classify(4.0), 1);
    assert_eq!(s.classify(5.0), 1);
    assert_eq!(s.classify(40.0), 2);
    assert!(s.validate(5).is_err());
    assert!(TypeSpace { levels: vec![] }.validate(5).is_err());
}

#[test]
fn isolated_expected_reward_is_the_game_reward() {
    let agent = saving_agent(0, 1.0);
    let view = agent.view(10, vec![1]);
    let net = Network::isolated(single_service(1.0), vec![FogNodeSpec::new(10, 1, 10)]);
    for e in [0, 3, 7, 10] {
        let direct = solve_social_welfare(&net, &[vec![60.0]], &[e], &WelfareOptions::default())
            .unwrap()
            .agreement
            .rewards[0];
        assert!((agent.expected_reward(&view, e) - direct).abs() < 1e-12);
    }
}

#[test]
fn equiprobable_types_average_their_rewards() {
    let (agent, _) = pair_agent(TypeSpace { levels: vec![2, 0] });
    let view = agent.view(10, vec![0]);
    let alone = Network::isolated(single_service(1.0), vec![FogNodeSpec::new(10, 1, 10)]);
    let mut helper = FogNodeSpec::new(2, 1, 2);
    helper.rate_multiplier = 1.0;
    let pair =
        Network::isolated(single_service(1.0), vec![FogNodeSpec::new(10, 1, 10), helper]).with_links(&[(0, 1)], 0.02);
    let opts = WelfareOptions::default();
    for e in [0, 2, 3] {
        let r0 = solve_social_welfare(&alone, &[vec![30.0]], &[e], &opts)
            .unwrap()
            .agreement
            .rewards[0];
        let r2 = solve_social_welfare(&pair, &[vec![30.0], vec![0.0]], &[e, 2], &opts)
            .unwrap()
            .agreement
            .rewards[0];
        let got = agent.expected_reward(&view, e);
        assert!((got - 0.5 * (r0 + r2)).abs() < 1e-9, "e={e}: {got} vs {r0}, {r2}");
    }
    // A surplus neighbour helps at least one of these budgets.
    assert!(agent.expected_reward(&view, 3) > agent.deterministic_reward(&[0], 3, 0));
}

#[test]
fn zero_budget_earns_nothing_without_surplus() {
    let (agent, _) = pair_agent(TypeSpace { levels: vec![-2, 0] });
    assert_eq!(agent.expected_reward(&agent.view(10, vec![0]), 0), 0.0);
}

#[test]
fn bellman_matches_value_iteration() {
    let m = tiny();
    for gamma in [0.0, 0.5, 0.9] {
        let vi = value_iteration(&m, 51, gamma);
        for s in 0..2 {
            let v = bellman_value(&m, &s, 50, gamma);
            assert!((v - vi[s]).abs() < 1e-6, "s={s} gamma={gamma}: {v} vs {}", vi[s]);
        }
    }
}

#[test]
fn zero_discount_is_myopic_and_depth_is_monotone() {
    let m = tiny();
    for s in 0..2 {
        let myopic = bellman_value(&m, &s, 0, 0.9);
        assert_eq!(bellman_value(&m, &s, 7, 0.0), myopic);
        let mut prev = myopic;
        for d in 1..10 {
            let v = bellman_value(&m, &s, d, 0.9);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }
}

/// Total discounted reward of spending `e0` then everything, from closed forms.
fn two_slot_oracle(battery: u32, gamma: f64) -> u32 {
    let admitted = |lambda: f64, e: u32| local_admitted_load(10.0 * e as f64, lambda, 0.1);
    (0..=battery)
        .map(|e0| (e0, admitted(10.0, e0) + gamma * admitted(60.0, battery - e0)))
        .fold(
            (0, f64::MIN),
            |best, (e, v)| if v > best.1 + 1e-12 { (e, v) } else { best },
        )
        .0
}

#[test]
fn lookahead_saves_energy_for_the_busy_slot() {
    assert_eq!(saving_agent(0, 1.0).choose(3, vec![0]), 2);
    let expected = two_slot_oracle(3, 0.9);
    assert_eq!(expected, 0);
    assert_eq!(saving_agent(1, 1.0).choose(3, vec![0]), expected);
    assert_eq!(saving_agent(2, 1.0).choose(3, vec![0]), expected);
}

#[test]
fn reward_scale_leaves_the_choice_unchanged() {
    for depth in 0..3 {
        for battery in 0..=6 {
            assert_eq!(
                saving_agent(depth, 1.0).choose(battery, vec![0]),
                saving_agent(depth, 7.5).choose(battery, vec![0])
            );
        }
    }
}

#[test]
fn empty_battery_has_one_action() {
    let agent = saving_agent(2, 1.0);
    assert_eq!(agent.actions(&agent.view(0, vec![0])), vec![0]);
    assert_eq!(agent.choose(0, vec![0]), 0);
}

#[test]
fn harvest_filter_beats_a_frozen_prior() {
    let harvest = MarkovChain::new(
        vec![0.0, 2.0, 4.0],
        vec![vec![0.8, 0.15, 0.05], vec![0.1, 0.8, 0.1], vec![0.05, 0.15, 0.8]],
    )
    .unwrap();
    let net = Network::isolated(single_service(1.0), vec![FogNodeSpec::new(10, 1, 6)]);
    let env = EnvModel {
        harvest: vec![harvest.clone()],
        arrivals: vec![vec![MarkovChain::constant(30.0)]],
        battery_cap: vec![6],
        observation: ObservationModel::ExactLocal,
    };
    let mut agent = FogAgent::new(&net, &env, 0, AgentConfig::default()).unwrap();
    let prior = agent.belief.harvest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut h, mut battery) = (1usize, 3u32);
    let (mut filtered, mut frozen) = (0.0, 0.0);
    let steps = 2000;
    for t in 0..steps {
        let spent = (t % 3) as u32 % (battery + 1);
        h = harvest.step(h, &mut rng);
        let next = battery_step(battery, harvest.levels[h] as u32, spent, 6).unwrap();
        agent.observe(battery, spent, next).unwrap();
        let sum: f64 = agent.belief.harvest.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        filtered += agent.belief.harvest[h];
        frozen += prior[h];
        battery = next;
    }
    assert!(filtered > frozen, "{filtered} vs {frozen}");
    assert_eq!(agent.rejected(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_output_is_normalized(
        prior in prop::collection::vec(0.01f64..1.0, 2..6),
        lik_seed in prop::collection::vec(0.0f64..1.0, 6),
        mix in 0.0f64..1.0,
    ) {
        let n = prior.len();
        let z: f64 = prior.iter().sum();
        let prior: Vec<f64> = prior.iter().map(|p| p / z).collect();
        let mut lik: Vec<f64> = lik_seed[..n].to_vec();
        lik[0] += 1e-3;
        let trans = |v: usize, u: usize| if v == u { mix } else { (1.0 - mix) / (n - 1) as f64 };
        let post = filter_step(&prior, trans, &lik).unwrap();
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(post.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn type_means_stay_normalized(obs in prop::collection::vec(0usize..3, 0..50)) {
        let space = TypeSpace::three_level(4);
        let mut b = TypeBelief::new(2, 2, 3, 0.5).unwrap();
        for (i, t) in obs.iter().enumerate() {
            b.observe(&space, i % 2, (i / 2) % 2, space.levels[*t] as f64).unwrap();
            let m = b.mean(i % 2, (i / 2) % 2);
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
