use rismeta_core::baselines::{sfp_policy, zfr_policy, SfpSettings};
use rismeta_core::env::{
    decode_action, decode_state, encode_action, encode_state, make_task_batch, make_task_batch_in, EnvOptions, EVAL_NAMESPACE,
    TRAIN_NAMESPACE,
};
use rismeta_core::link::evaluate;
use rismeta_core::{Env, Error, Rng, SystemConfig};

fn env(len: usize) -> Env {
    let sys = SystemConfig::desk(4);
    let task = make_task_batch(4, 1, &sys).unwrap().remove(0);
    Env::new(
        sys,
        task,
        EnvOptions {
            episode_len: len,
            scale_observations: false,
        },
    )
    .unwrap()
}

#[test]
fn config_json_roundtrip_and_strictness() {
    let cfg = SystemConfig::table1(9);
    assert_eq!(SystemConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    v["extra"] = serde_json::json!(true);
    assert!(SystemConfig::from_json(&v.to_string()).is_err());
}

#[test]
fn classical_episode_scores_the_observed_channel() {
    let mut env = env(5);
    let sys = env.config().clone();
    let mut rng = Rng::new(1);
    let mut obs = env.reset();
    let mut steps = 0;
    loop {
        let state = decode_state(&obs, &sys).unwrap();
        assert_eq!(encode_state(&state), obs);
        let (w, phase) = zfr_policy(&state, &mut rng, &sys).unwrap();
        let expected = evaluate(&state, &w, &phase, sys.noise_power()).unwrap().sum_rate;
        let step = env.step(&encode_action(&w, &phase)).unwrap();
        assert!((step.reward - expected).abs() <= 1e-12 * expected.max(1.0));
        assert!(step.info.audit.ok());
        steps += 1;
        obs = step.obs;
        if step.done {
            break;
        }
    }
    assert_eq!(steps, 5);
    let (w, phase) = zfr_policy(env.state(), &mut rng, &sys).unwrap();
    assert!(matches!(env.step(&encode_action(&w, &phase)), Err(Error::EpisodeDone)));
}

#[test]
fn restart_replays_the_trajectory() {
    let mut env = env(8);
    let a = encode_action(
        &zfr_policy(env.state(), &mut Rng::new(2), env.config()).unwrap().0,
        &rismeta_core::PhaseShift::zeros(env.config().n_ris),
    );
    let run = |env: &mut Env| -> Vec<f64> {
        env.restart();
        (0..8).map(|_| env.step(&a).unwrap().reward).collect()
    };
    assert_eq!(run(&mut env), run(&mut env));
}

#[test]
fn optimized_design_survives_the_action_codec() {
    let mut e = env(1);
    e.reset();
    let sys = e.config().clone();
    let out = sfp_policy(e.state(), &SfpSettings::default(), &sys).unwrap();
    let a = encode_action(&out.w, &out.phase);
    let (w, phase) = decode_action(&a, &sys).unwrap();
    let back = encode_action(&w, &phase);
    for (x, y) in a.0.iter().zip(&back.0) {
        assert!((x - y).abs() <= 1e-12);
    }
    let step = e.step(&a).unwrap();
    assert!((step.reward - out.trace.last().unwrap()).abs() <= 1e-9);
}

#[test]
fn task_namespaces_do_not_overlap() {
    let sys = SystemConfig::desk(6);
    let train = make_task_batch(6, 50, &sys).unwrap();
    let eval = make_task_batch_in(EVAL_NAMESPACE, 6, 50, &sys).unwrap();
    assert!(train.iter().all(|t| t.namespace() == TRAIN_NAMESPACE));
    assert!(eval.iter().all(|t| t.namespace() == EVAL_NAMESPACE));
    for t in &train {
        assert!(eval.iter().all(|e| e.stream != t.stream && e.initial != t.initial));
    }
    // same seed, same tasks
    assert_eq!(make_task_batch(6, 50, &sys).unwrap(), train);
}
