//! Sanity-checks the PPO machinery on a single-state bandit: a categorical
//! head over nine actions, one of which pays, converges to that action.

use traffic_curriculum::nn::adam::Adam;
use traffic_curriculum::nn::layers::{sample_categorical, CategoricalHead};
use traffic_curriculum::nn::params::ParameterStore;
use traffic_curriculum::nn::tape::Tape;
use traffic_curriculum::ppo::{compute_gae, ppo_update, PpoConfig, Transition};
use traffic_curriculum::rng::stream;

const REWARDED: usize = 3;

fn main() {
    let mut store = ParameterStore::new();
    let mut rng = stream(41, "example.bandit");
    let head = CategoricalHead::new(&mut store, &mut rng, "bandit", 1, 16, 9);
    let forward = |store: &ParameterStore, tape: &mut Tape, _obs: &()| {
        let x = tape.constant(vec![1.0]);
        head.forward(store, tape, x)
    };

    let cfg = PpoConfig {
        lr: 0.01,
        minibatch: 64,
        steps_per_iter: 64,
        entropy_coef: 0.001,
        ..PpoConfig::default()
    };
    let mut opt = Adam::new(cfg.lr);

    for update in 0..50 {
        let mut transitions: Vec<Transition<()>> = (0..64)
            .map(|_| {
                let mut tape = Tape::new();
                let (lp, v) = forward(&store, &mut tape, &());
                let log_probs = tape.value(lp).to_vec();
                let action = sample_categorical(&log_probs, &mut rng);
                Transition {
                    obs: (),
                    action,
                    log_prob: log_probs[action],
                    value: tape.scalar(v),
                    reward: if action == REWARDED { 1.0 } else { 0.0 },
                    done: true,
                    advantage: 0.0,
                    ret: 0.0,
                }
            })
            .collect();
        for t in transitions.iter_mut() {
            let (adv, ret) =
                compute_gae(&[t.reward], &[t.value], &[true], cfg.gamma, cfg.gae_lambda, 0.0);
            (t.advantage, t.ret) = (adv[0], ret[0]);
        }
        let stats = ppo_update(&mut store, &mut opt, forward, &mut transitions, &cfg, &mut rng);

        if update % 10 == 0 || update == 49 {
            let mut tape = Tape::new();
            let (lp, _) = forward(&store, &mut tape, &());
            let p = tape.value(lp)[REWARDED].exp();
            println!(
                "update {update:2}: P(rewarded action) = {p:.3}, policy loss {:+.4}, entropy {:.3}",
                stats.policy_loss, stats.entropy
            );
        }
    }

    let mut tape = Tape::new();
    let (lp, _) = forward(&store, &mut tape, &());
    let probs: Vec<f64> = tape.value(lp).iter().map(|l| l.exp()).collect();
    let modal = probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(modal, REWARDED);
    println!("converged: modal action {modal} with probability {:.3}", probs[modal]);
}
