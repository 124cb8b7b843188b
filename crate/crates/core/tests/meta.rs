mod common;

use common::{toy_env, toy_model_config};
use seldkit::meta::*;
use seldkit::model::{AttenuationInput, SeldModel};
use seldkit::nn::ParamSet;
use seldkit::{rng, Error};

const DIRS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -0.6, 0.8]];

fn bits(p: &ParamSet<f32>) -> Vec<u32> {
    p.flatten().iter().map(|v| v.to_bits()).collect()
}

fn envs(n: usize, clips: usize) -> Vec<EnvData> {
    (0..n).map(|i| toy_env(&format!("r{i}"), clips, i as u64 + 1, &DIRS, false)).collect()
}

fn quick(method: Method) -> MetaConfig {
    MetaConfig { method, k_support: 4, room_batch: 2, sample_batch: 10, inner_steps: 2, alpha: 0.05, beta: 1e-3, epochs: 2, seed: 3, ..Default::default() }
}

#[test]
fn episodes_cover_every_environment_once() {
    let e = envs(9, 130);
    let mc = MetaConfig::default();
    let mut r = rng::stream(1, 0);
    let eps = sample_episodes(&e, &mc, &mut r).unwrap();
    assert_eq!(eps.len(), 9);
    let mut ids: Vec<usize> = eps.iter().map(|x| x.env).collect();
    ids.sort();
    assert_eq!(ids, (0..9).collect::<Vec<_>>());
    assert!(eps.iter().all(|x| x.support.len() == 30 && x.query.len() == 98));
}

#[test]
fn support_and_query_are_disjoint() {
    let e = envs(2, 20);
    let mc = MetaConfig { k_support: 5, sample_batch: 12, ..Default::default() };
    let mut r = rng::stream(2, 0);
    for _ in 0..1000 {
        for ep in sample_episodes(&e, &mc, &mut r).unwrap() {
            assert!(ep.support.iter().all(|s| !ep.query.contains(s)));
            let mut all: Vec<usize> = ep.support.iter().chain(&ep.query).copied().collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 12);
        }
    }
}

#[test]
fn small_environments_shrink_or_fail() {
    let mc = MetaConfig { k_support: 5, sample_batch: 12, ..Default::default() };
    let mut r = rng::stream(3, 0);
    let eps = sample_episodes(&envs(1, 8), &mc, &mut r).unwrap();
    assert_eq!((eps[0].support.len(), eps[0].query.len()), (5, 3));
    assert!(matches!(sample_episodes(&envs(1, 5), &mc, &mut r), Err(Error::InsufficientClips { .. })));
}

#[test]
fn inner_adapt_contract() {
    let cfg = toy_model_config();
    let m = SeldModel::new(cfg.clone(), 1).unwrap();
    let e = toy_env("a", 6, 1, &DIRS, false);
    let clips: Vec<&Clip> = e.clips.iter().collect();
    let b = Batch::new(&cfg.backbone, &clips).unwrap();
    assert!(matches!(inner_adapt(&cfg.backbone, &m.theta, &b, 0.1, 0), Err(Error::InvalidArgument(_))));
    let before = bits(&m.theta);
    let (same, losses) = inner_adapt(&cfg.backbone, &m.theta, &b, 0.0, 3).unwrap();
    assert_eq!(bits(&same), before);
    assert_eq!(bits(&m.theta), before);
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| *l == losses[0]));
}

#[test]
fn inner_adapt_descends() {
    let cfg = toy_model_config();
    let mut ok = 0;
    for seed in 0..50 {
        let m = SeldModel::new(cfg.clone(), seed).unwrap();
        let e = toy_env("a", 8, seed + 100, &DIRS, false);
        let clips: Vec<&Clip> = e.clips.iter().collect();
        let b = Batch::new(&cfg.backbone, &clips).unwrap();
        let (adapted, losses) = inner_adapt(&cfg.backbone, &m.theta, &b, 0.05, 5).unwrap();
        let (end, _, _) = loss_and_grad(&cfg.backbone, &adapted, &b).unwrap();
        if end <= losses[0] {
            ok += 1;
        }
    }
    assert!(ok >= 45, "{ok}/50");
}

#[test]
fn first_order_gradient_is_query_gradient_at_adapted_point() {
    let cfg = toy_model_config();
    let m = SeldModel::new(cfg.clone(), 2).unwrap();
    let e = toy_env("a", 10, 7, &DIRS, false);
    let s: Vec<&Clip> = e.clips[..4].iter().collect();
    let q: Vec<&Clip> = e.clips[4..].iter().collect();
    let (sb, qb) = (Batch::new(&cfg.backbone, &s).unwrap(), Batch::new(&cfg.backbone, &q).unwrap());
    let mc = MetaConfig { method: Method::MetaPp, inner_steps: 1, alpha: 0.05, ..quick(Method::MetaPp) };
    let out = episode_meta_grads(&m, &sb, &qb, &mc).unwrap();
    let (_, gs, _) = loss_and_grad(&cfg.backbone, &m.theta, &sb).unwrap();
    let adapted = seldkit::nn::optim::sgd_step(&m.theta, &gs, 0.05).unwrap();
    let (ql, gq, _) = loss_and_grad(&cfg.backbone, &adapted, &qb).unwrap();
    assert_eq!(bits(&out.theta_grad), bits(&gq));
    assert_eq!(out.query_loss, ql);
}

#[test]
fn bypass_and_skip_reduce_to_meta_pp() {
    let cfg = toy_model_config();
    let e = envs(3, 14);
    let base = SeldModel::new(cfg, 4).unwrap();
    let mut a = base.clone();
    let la = meta_train(&mut a, &e, &quick(Method::MetaPp)).unwrap();
    let mut b = base.clone();
    let mc = MetaConfig { bypass_attenuation: true, skip_extractor: true, ..quick(Method::EnvAdaptive) };
    let lb = meta_train(&mut b, &e, &mc).unwrap();
    assert_eq!(bits(&a.theta), bits(&b.theta));
    assert_eq!(a.running, b.running);
    assert_eq!(b.omega, base.omega);
    assert_eq!(b.phi, base.phi);
    for (x, y) in la.iter().zip(&lb) {
        assert_eq!((x.inner_start_loss, x.query_loss), (y.inner_start_loss, y.query_loss));
    }
    let mut c = base.clone();
    meta_train(&mut c, &e, &quick(Method::Meta)).unwrap();
    assert_eq!(bits(&c.theta), bits(&a.theta));
}

#[test]
fn env_adaptive_updates_every_group() {
    for input in [AttenuationInput::Representations, AttenuationInput::Gradients, AttenuationInput::None] {
        let mut cfg = toy_model_config();
        cfg.attenuation.input = input;
        let e = envs(2, 12);
        let base = SeldModel::new(cfg, 5).unwrap();
        let mut m = base.clone();
        let log = meta_train(&mut m, &e, &quick(Method::EnvAdaptive)).unwrap();
        assert_eq!(log.len(), 2);
        assert_ne!(m.theta, base.theta);
        assert_ne!(m.phi, base.phi, "{input:?}");
        assert_eq!(m.omega != base.omega, input == AttenuationInput::Representations, "{input:?}");
    }
    let mut m = SeldModel::new(toy_model_config(), 5).unwrap();
    let bad = MetaConfig { skip_extractor: true, ..quick(Method::EnvAdaptive) };
    assert!(matches!(meta_train(&mut m, &envs(2, 12), &bad), Err(Error::Config(_))));
    assert!(meta_train(&mut m, &envs(2, 12), &quick(Method::Seld)).is_err());
}

#[test]
fn meta_training_is_deterministic() {
    let e = envs(3, 12);
    let base = SeldModel::new(toy_model_config(), 6).unwrap();
    let mut a = base.clone();
    let mut b = base.clone();
    meta_train(&mut a, &e, &quick(Method::EnvAdaptive)).unwrap();
    meta_train(&mut b, &e, &quick(Method::EnvAdaptive)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn supervised_training_learns_a_single_class_toy() {
    let cfg = toy_model_config();
    let mut rng = rng::stream(9, 0);
    let clips: Vec<Clip> = (0..50)
        .map(|k| {
            let f = common::toy_features(&mut rng, 0, DIRS[0], 0.2);
            let labels: Vec<_> = (0..5).map(|frame| seldkit::scene::LabelRow { frame, class_idx: 0, track_idx: 0, doa: DIRS[0] }).collect();
            Clip::new(format!("{k:03}"), f, &labels, &cfg.backbone).unwrap()
        })
        .collect();
    let e = vec![EnvData::new("toy", clips)];
    let mut m = SeldModel::new(cfg.clone(), 7).unwrap();
    let sc = SupervisedConfig { lr: 3e-3, epochs: 15, batch_size: 10, seed: 1, ..Default::default() };
    let log = train_supervised(&mut m, &e, &sc).unwrap();
    assert!(log.last().unwrap().inner_start_loss <= 0.5 * log[0].inner_start_loss, "{log:?}");

    let mut again = SeldModel::new(cfg.clone(), 7).unwrap();
    train_supervised(&mut again, &e, &sc).unwrap();
    assert_eq!(m.to_checkpoint("").to_bytes(), again.to_checkpoint("").to_bytes());

    let base = SeldModel::new(cfg, 7).unwrap();
    let mut frozen = base.clone();
    train_supervised(&mut frozen, &e, &SupervisedConfig { lr: 0.0, epochs: 2, ..sc }).unwrap();
    assert_eq!(bits(&frozen.theta), bits(&base.theta));
}

#[test]
fn meta_test_adaptation() {
    let cfg = toy_model_config();
    let m = SeldModel::new(cfg, 8).unwrap();
    let e = toy_env("t", 12, 3, &DIRS, false);
    let too_many = AdaptConfig { k_support: 12, ..Default::default() };
    assert!(matches!(meta_test_adapt(&m, &e, &too_many), Err(Error::InsufficientClips { .. })));

    let zero = meta_test_adapt(&m, &e, &AdaptConfig { k_support: 4, inner_steps: 0, ..Default::default() }).unwrap();
    assert_eq!(bits(&zero.theta), bits(&m.theta));
    assert!(zero.query_losses.is_empty());
    assert_eq!(zero.final_query_loss(), zero.initial_query_loss);
    assert_eq!(zero.query_ids, e.clips[4..].iter().map(|c| c.id.clone()).collect::<Vec<_>>());
    assert_eq!(zero.predictions.len(), 8);

    let ac = AdaptConfig { k_support: 4, inner_steps: 5, alpha: 0.05, attenuate: true, ..Default::default() };
    let r = meta_test_adapt(&m, &e, &ac).unwrap();
    assert_eq!((r.support_losses.len(), r.query_losses.len()), (5, 5));
    assert!(r.lambda.as_ref().unwrap().iter().all(|l| *l > 0.0 && *l < 1.0));
    assert!(r.query_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn attenuation_report_modes() {
    let m = SeldModel::new(toy_model_config(), 9).unwrap();
    let e = envs(3, 6);
    assert!(matches!(attenuation_report(&m, Method::MetaPp, false, &e, 4), Err(Error::Config(_))));
    let r = attenuation_report(&m, Method::EnvAdaptive, true, &e, 4).unwrap();
    assert!(r.lambda.iter().flatten().all(|v| *v == 1.0));
    let r = attenuation_report(&m, Method::EnvAdaptive, false, &e, 4).unwrap();
    assert_eq!(r.lambda.len(), 3);
    assert!(r.lambda.iter().flatten().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn run_log_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.csv");
    let rows = vec![LogRow { epoch: 0, inner_start_loss: 0.5, query_loss: Some(0.25), wall_s: 1.0 }];
    write_log_csv(&p, &rows).unwrap();
    let t = std::fs::read_to_string(&p).unwrap();
    assert_eq!(t, "epoch,inner_start_loss,query_loss\n0,0.50000000,0.25000000\n");
}
