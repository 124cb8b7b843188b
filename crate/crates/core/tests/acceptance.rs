//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each; exits nonzero when any criterion fails.
//!
//! `cargo test --test acceptance` (about ten minutes on one core).

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seldkit::acoustics::*;
use seldkit::eval::*;
use seldkit::features::{FeatureExtractor, FeatureParams};
use seldkit::meta::*;
use seldkit::model::*;
use seldkit::nn::gradcheck::{grad_check, GradCheckReport};
use seldkit::nn::optim::sgd_step;
use seldkit::nn::*;
use seldkit::scene::*;
use seldkit::srir::*;

use common::acoustic::{decoded_direction, far_field_foa, lattice_counts};
use common::*;

type Outcome = (bool, String);

const DIRS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -0.6, 0.8]];

fn median(mut v: Vec<usize>) -> usize {
    v.sort();
    v[v.len() / 2]
}

fn within(limit: Duration, t0: Instant, out: Outcome) -> Outcome {
    let el = t0.elapsed();
    let ok = out.0 && el < limit;
    (ok, format!("{} [{:.1}s, limit {}s]", out.1, el.as_secs_f64(), limit.as_secs()))
}

fn special_functions() -> Outcome {
    let t0 = Instant::now();
    let mut worst_rec: f64 = 0.0;
    for i in 0..=400 {
        let x = -1.0 + 2.0 * i as f64 / 400.0;
        let p = legendre_table(21, x);
        for n in 1..=20 {
            let nf = n as f64;
            let r = (nf + 1.0) * p[n + 1] - (2.0 * nf + 1.0) * x * p[n] + nf * p[n - 1];
            worst_rec = worst_rec.max(r.abs());
        }
    }
    let mut worst_end: f64 = 0.0;
    for n in 0..=40 {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        worst_end = worst_end.max((legendre(n, 1.0).unwrap() - 1.0).abs());
        worst_end = worst_end.max((legendre(n, -1.0).unwrap() - sign).abs());
    }
    // Sum over m of Y(a) Y*(b) equals (2n+1)/(4 pi) P_n(cos angle); a = b is the norm case.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_add: f64 = 0.0;
    for _ in 0..50 {
        let a = Direction::from_vector(random_dir(&mut rng)).unwrap();
        let b = Direction::from_vector(random_dir(&mut rng)).unwrap();
        let cos = a.to_vector().iter().zip(b.to_vector()).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0);
        for n in 0..=4usize {
            let m_range = -(n as i32)..=n as i32;
            let same: f64 = m_range.clone().map(|m| sph_harmonic(n, m, a).unwrap().norm_sqr()).sum();
            let cross: num_complex::Complex64 =
                m_range.map(|m| sph_harmonic(n, m, a).unwrap() * sph_harmonic(n, m, b).unwrap().conj()).sum();
            let want = (2 * n + 1) as f64 / (4.0 * PI);
            worst_add = worst_add.max((same - want).abs());
            worst_add = worst_add.max((cross - want * legendre(n, cos).unwrap()).norm());
        }
    }
    let mut worst_w: f64 = 0.0;
    let mut x = 0.1;
    while x <= 50.0 {
        let (j, y) = sph_bessel_jy(13, x).unwrap();
        for n in 0..12 {
            let jp = if n == 0 { -j[1] } else { j[n - 1] - (n + 1) as f64 / x * j[n] };
            let yp = if n == 0 { -y[1] } else { y[n - 1] - (n + 1) as f64 / x * y[n] };
            let want = 1.0 / (x * x);
            worst_w = worst_w.max(((j[n] * yp - jp * y[n] - want) / want).abs());
        }
        x *= 1.07;
    }
    let ok = worst_rec < 1e-10 && worst_end < 1e-12 && worst_add < 1e-10 && worst_w < 1e-9;
    let detail = format!(
        "recurrence {worst_rec:.1e}, endpoints {worst_end:.1e}, addition {worst_add:.1e}, wronskian {worst_w:.1e}"
    );
    within(Duration::from_secs(10), t0, (ok, detail))
}

fn aggregate_error_rows() -> Outcome {
    let a = e_seld(0.722, 0.232, 22.2, 0.395).unwrap();
    let b = e_seld(0.746, 0.209, 25.6, 0.414).unwrap();
    let ok = (a - 0.555).abs() < 5e-4 && (b - 0.566).abs() < 5e-4;
    (ok, format!("{a:.5} vs 0.555, {b:.5} vs 0.566"))
}

fn image_source_physics() -> Outcome {
    let t0 = Instant::now();
    let room = RoomSpec::uniform([6.0, 5.0, 3.0], 1.0, 10).unwrap();
    let array = MicArraySpec::tetrahedral([3.0, 2.5, 1.5]);
    let src = [1.2, 1.0, 1.7];
    let s = simulate_srir(&room, &array, src).unwrap();
    let d = ((src[0] - 3.0f64).powi(2) + (src[1] - 2.5f64).powi(2) + (src[2] - 1.5f64).powi(2)).sqrt();
    let t_direct = (24000.0 * d / SPEED_OF_SOUND).round() as usize;
    let leak = s
        .array_ir
        .iter()
        .map(|ch| {
            let total: f64 = ch.iter().map(|v| v * v).sum();
            let outside: f64 =
                ch.iter().enumerate().filter(|(i, _)| *i + 48 < t_direct || *i > t_direct + 48).map(|(_, v)| v * v).sum();
            outside / total
        })
        .fold(0.0, f64::max);

    let dims = [6.0, 4.0, 3.0];
    let alpha = absorption_for_rt60(dims, 0.4, SPEED_OF_SOUND).unwrap();
    let room = RoomSpec::uniform(dims, alpha, 28).unwrap();
    let s = simulate_srir(&room, &MicArraySpec::tetrahedral([3.6, 2.3, 1.4]), [1.3, 1.1, 1.7]).unwrap();
    let t60 = schroeder_t60(&s.foa_ir[0], 24000).unwrap();

    let mut counts_ok = true;
    for (dims, src, mic) in [
        ([5.3, 4.1, 2.9], [1.2, 3.0, 1.7], [3.1, 1.9, 1.4]),
        ([8.0, 6.5, 3.2], [0.4, 0.7, 2.9], [6.1, 5.0, 1.1]),
    ] {
        let oracle = lattice_counts(dims, src, 3);
        for order in 0..=3 {
            let imgs = enumerate_image_sources(&RoomSpec::uniform(dims, 0.3, order).unwrap(), src, mic).unwrap();
            counts_ok &= (0..=order).all(|o| imgs.iter().filter(|s| s.order == o).count() == oracle[o]);
        }
    }
    let ok = leak < 1e-6 && (0.3..=0.5).contains(&t60) && counts_ok;
    let detail = format!("anechoic leak {leak:.1e}, T60 {t60:.3}s, image counts match {counts_ok}");
    within(Duration::from_secs(60), t0, (ok, detail))
}

fn foa_round_trip() -> Outcome {
    let array = MicArraySpec::tetrahedral([50.0, 50.0, 50.0]);
    let nfft = 8192;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut errs: Vec<f64> = (0..24)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let dir = Direction::new(z.acos(), rng.gen_range(-PI..PI)).unwrap();
            let foa = far_field_foa(&array, dir, nfft);
            decoded_direction(&foa, nfft, 300.0, 4000.0).angle_to(&dir).to_degrees()
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    let med = errs[errs.len() / 2];
    (med < 3.0, format!("median {med:.2} deg over {} directions", errs.len()))
}

fn randn(shape: &[usize], scale: f64, seed: u64) -> Tensor<f64> {
    let mut r = seldkit::rng::stream(seed, 7);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * r.sample::<f64, _>(rand_distr::StandardNormal)).collect())
}

fn params(entries: &[(&str, Tensor<f64>)]) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (i, (n, t)) in entries.iter().enumerate() {
        p.insert(n, i + 1, t.clone()).unwrap();
    }
    p
}

fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let w = g.constant(randn(g.shape(y), 1.0, seed));
    let m = g.mul(y, w).unwrap();
    g.sum(m)
}

fn gradient_fidelity() -> Outcome {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, r: GradCheckReport| {
        ok &= r.passed() && r.max_abs_grad > 1e-8;
        lines.push(format!("{name} {:.1e} (max |grad| {:.1e})", r.max_rel_error, r.max_abs_grad));
    };

    let p = params(&[("x", randn(&[2, 3, 8, 8], 1.0, 1)), ("w", randn(&[4, 3, 3, 3], 0.3, 2)), ("b", randn(&[4], 0.1, 3))]);
    let conv = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], Some(v[2]))?;
        Ok(project(g, y, 4))
    };
    record("conv2d", grad_check(conv, &p, 1e-4, 1e-4, usize::MAX).unwrap());

    let p = params(&[("x", randn(&[3, 2, 4, 5], 2.0, 5)), ("g", randn(&[2], 1.0, 6)), ("b", randn(&[2], 1.0, 7))]);
    let bn = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.batch_norm(v[0], v[1], v[2], BnMode::Train)?;
        let sq = g.mul(y, y)?;
        let s = project(g, y, 8);
        let q = g.sum(sq);
        let q = g.scale(q, 0.1);
        g.add(s, q)
    };
    record("batchnorm", grad_check(bn, &p, 1e-4, 1e-4, usize::MAX).unwrap());

    let (d, h) = (6, 8);
    let mut entries = vec![("x", randn(&[2, 5, d], 1.0, 10))];
    let names = ["wi_f", "wh_f", "bi_f", "bh_f", "wi_b", "wh_b", "bi_b", "bh_b"];
    let shapes: [Vec<usize>; 4] = [vec![3 * h, d], vec![3 * h, h], vec![3 * h], vec![3 * h]];
    for (i, n) in names.iter().enumerate() {
        entries.push((n, randn(&shapes[i % 4], 0.4, 11 + i as u64)));
    }
    let gru = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.bigru(v[0], [v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]])?;
        Ok(project(g, y, 30))
    };
    record("gru", grad_check(gru, &params(&entries), 1e-4, 1e-3, usize::MAX).unwrap());

    let p = params(&[("x", randn(&[4, 3, 5], 1.0, 40)), ("w", randn(&[2, 5], 1.0, 41)), ("b", randn(&[2], 1.0, 42))]);
    let lin = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.linear(v[0], v[1], Some(v[2]))?;
        Ok(project(g, y, 43))
    };
    record("linear", grad_check(lin, &p, 1e-2, 1e-9, usize::MAX).unwrap());

    // Attenuation path and extractor, through a second backbone pass on the attenuated parameters.
    let mut c = ModelConfig::default();
    c.backbone.n_mels = 16;
    c.backbone.conv_channels = [4, 4, 6, 6];
    c.backbone.pool_freq = [2, 2, 2, 2];
    c.backbone.gru_hidden = 5;
    c.backbone.n_classes = 2;
    c.env_dim = 16;
    c.attenuation.hidden = 8;
    c.attenuation.input = AttenuationInput::Representations;
    let m = SeldModel::new(c.clone(), 12).unwrap();
    let b = c.backbone.clone();
    let x = randn(&[2, b.in_channels, 32, b.n_mels], 1.0, 13);
    let theta = m.theta.cast::<f64>();
    let n_om = m.omega.len();
    let mut p = m.omega.cast::<f64>();
    for (name, q) in m.phi.cast::<f64>().iter() {
        p.insert(name, q.layer + 4, q.value.clone()).unwrap();
    }
    let layers = m.theta_layers();
    let pool = frame_pool_matrix(&b, 32, label_frames(&b, 32));
    let path = |g: &mut Graph<f64>, v: &[Var]| {
        let tv = theta.to_vars(g, false);
        let xv = g.constant(x.clone());
        let out = backbone_forward(g, &b, &tv, xv, BnUse::Batch, &pool)?;
        let e = extract_env_representation(g, &v[..n_om], &out.maps)?;
        let lam = attenuation_forward(g, AttenuationInput::Representations, &v[n_om..], Some(e))?;
        let att = attenuate(g, &tv, &layers, lam)?;
        let xq = g.constant(x.clone());
        let q = backbone_forward(g, &b, &att, xq, BnUse::Batch, &pool)?;
        let t = Tensor::full(g.shape(q.accdoa), 0.3);
        g.mse(q.accdoa, t)
    };
    record("attenuation+extractor", grad_check(path, &p, 1e-4, 1e-5, 20).unwrap());

    within(Duration::from_secs(300), t0, (ok, format!("max rel error: {}", lines.join(", "))))
}

fn bits(p: &ParamSet<f32>) -> Vec<u32> {
    p.flatten().iter().map(|v| v.to_bits()).collect()
}

fn quick(method: Method) -> MetaConfig {
    MetaConfig { method, k_support: 4, room_batch: 2, sample_batch: 10, inner_steps: 2, alpha: 0.05, beta: 1e-3, epochs: 2, seed: 3, ..Default::default() }
}

fn first_order_identity() -> Outcome {
    let cfg = toy_model_config();
    let m = SeldModel::new(cfg.clone(), 2).unwrap();
    let e = toy_env("a", 10, 7, &DIRS, false);
    let s: Vec<&Clip> = e.clips[..4].iter().collect();
    let q: Vec<&Clip> = e.clips[4..].iter().collect();
    let (sb, qb) = (Batch::new(&cfg.backbone, &s).unwrap(), Batch::new(&cfg.backbone, &q).unwrap());
    let mc = MetaConfig { inner_steps: 1, ..quick(Method::MetaPp) };
    let out = episode_meta_grads(&m, &sb, &qb, &mc).unwrap();
    let (_, gs, _) = loss_and_grad(&cfg.backbone, &m.theta, &sb).unwrap();
    let adapted = sgd_step(&m.theta, &gs, 0.05).unwrap();
    let (ql, gq, _) = loss_and_grad(&cfg.backbone, &adapted, &qb).unwrap();
    let (a, b) = (bits(&out.theta_grad), bits(&gq));
    let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    let ok = a.len() == b.len() && diff == 0 && out.query_loss.to_bits() == ql.to_bits();
    (ok, format!("{diff} of {} gradient entries differ in bits", a.len()))
}

fn reduction_identity() -> Outcome {
    let envs: Vec<EnvData> = (0..3).map(|i| toy_env(&format!("r{i}"), 14, i as u64 + 1, &DIRS, false)).collect();
    let base = SeldModel::new(toy_model_config(), 4).unwrap();
    let mut a = base.clone();
    let la = meta_train(&mut a, &envs, &quick(Method::MetaPp)).unwrap();
    let mut b = base.clone();
    let mc = MetaConfig { bypass_attenuation: true, skip_extractor: true, ..quick(Method::EnvAdaptive) };
    let lb = meta_train(&mut b, &envs, &mc).unwrap();
    let same_log = la.len() == lb.len()
        && la.iter().zip(&lb).all(|(x, y)| {
            x.inner_start_loss.to_bits() == y.inner_start_loss.to_bits()
                && x.query_loss.map(f64::to_bits) == y.query_loss.map(f64::to_bits)
        });
    let same_theta = bits(&a.theta) == bits(&b.theta) && a.running == b.running;
    let frozen = b.omega == base.omega && b.phi == base.phi;
    (same_log && same_theta && frozen, format!("losses equal {same_log}, parameters equal {same_theta}, Ω/Φ untouched {frozen}"))
}

fn room_bank(seed: u64, clips: usize, offset: usize) -> SceneConfig {
    let mut r = seldkit::rng::stream(seed, 77 + offset as u64);
    let mut text = format!(
        "seed = {}\nclip_s = 1.0\nn_classes = 3\nmax_polyphony = 2\nevents_per_clip = [1, 2]\n\
         event_duration_s = [0.4, 0.8]\nsrirs_per_env = 4\nsource_distance_m = [1.0, 2.0]\n",
        seed * 31 + offset as u64
    );
    for i in 0..6 {
        let d = [r.gen_range(4.0..9.0), r.gen_range(3.5..7.0), r.gen_range(2.6..3.6)];
        let rt = r.gen_range(0.2..0.9);
        text += &format!(
            "[[environments]]\nid = \"e{}\"\ndims = [{:.2}, {:.2}, {:.2}]\nrt60 = {rt:.2}\nmax_order = 4\nclips = {clips}\n",
            i + offset,
            d[0],
            d[1],
            d[2]
        );
    }
    toml::from_str(&text).unwrap()
}

fn render(cfg: &SceneConfig, fe: &FeatureExtractor, b: &BackboneConfig) -> Vec<EnvData> {
    (0..cfg.environments.len())
        .map(|e| {
            let (_, clips) = generate_environment(cfg, e).unwrap();
            let clips = clips
                .iter()
                .enumerate()
                .map(|(k, c)| Clip::new(format!("{k:04}"), fe.extract(&c.audio).unwrap(), &c.labels, b).unwrap())
                .collect();
            EnvData::new(cfg.environments[e].id.clone(), clips)
        })
        .collect()
}

fn desk_model(env_dim: usize) -> ModelConfig {
    let mut mc = ModelConfig::default();
    mc.backbone.conv_channels = [8, 16, 32, 32];
    mc.backbone.gru_hidden = 32;
    mc.backbone.n_classes = 3;
    mc.env_dim = env_dim;
    mc.attenuation.hidden = 64;
    mc
}

fn adaptation_benefit() -> Outcome {
    let t0 = Instant::now();
    let fe = FeatureExtractor::new(FeatureParams::default()).unwrap();
    let mc = desk_model(64);
    let mut wins = Vec::new();
    for seed in 0..5 {
        let train = render(&room_bank(seed, 64, 0), &fe, &mc.backbone);
        let test = render(&room_bank(seed, 64, 100), &fe, &mc.backbone);
        let mut model = SeldModel::new(mc.clone(), seed).unwrap();
        let sc = SupervisedConfig { epochs: 5, batch_size: 16, lr: 3e-3, seed, ..Default::default() };
        train_supervised(&mut model, &train, &sc).unwrap();
        let meta = MetaConfig {
            method: Method::EnvAdaptive,
            k_support: 10,
            room_batch: 3,
            sample_batch: 32,
            inner_steps: 5,
            alpha: 0.05,
            beta: 1e-3,
            epochs: 3,
            seed,
            ..Default::default()
        };
        meta_train(&mut model, &train, &meta).unwrap();
        let zero = AdaptConfig { k_support: 10, inner_steps: 0, alpha: 0.05, ..Default::default() };
        let adapted = AdaptConfig { inner_steps: 5, attenuate: true, ..zero.clone() };
        let w = test
            .iter()
            .filter(|env| {
                let z = meta_test_adapt(&model, env, &zero).unwrap();
                let a = meta_test_adapt(&model, env, &adapted).unwrap();
                a.scores.e_seld < z.scores.e_seld
            })
            .count();
        wins.push(w);
    }
    let med = median(wins.clone());
    within(Duration::from_secs(1800), t0, (med >= 4, format!("wins per seed {wins:?}, median {med}/6")))
}

fn conflict_resolution() -> Outcome {
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 0..10u64 {
        let train = [toy_env("a", 40, seed * 7 + 1, &DIRS, false), toy_env("b", 40, seed * 7 + 1, &DIRS, true)];
        let test = [toy_env("ta", 30, seed * 7 + 2, &DIRS, false), toy_env("tb", 30, seed * 7 + 2, &DIRS, true)];
        let mut cfg = toy_model_config();
        cfg.attenuation.input = AttenuationInput::Representations;
        let mut base = SeldModel::new(cfg, seed).unwrap();
        let sc = SupervisedConfig { lr: 3e-3, epochs: 5, batch_size: 10, seed, ..Default::default() };
        train_supervised(&mut base, &train, &sc).unwrap();
        let loss = |method: Method| {
            let mut m = base.clone();
            let mc = MetaConfig {
                method,
                k_support: 5,
                room_batch: 2,
                sample_batch: 20,
                inner_steps: 5,
                alpha: 0.05,
                beta: 1e-3,
                epochs: 120,
                seed,
                ..Default::default()
            };
            meta_train(&mut m, &train, &mc).unwrap();
            let ac = AdaptConfig { k_support: 5, inner_steps: 5, alpha: 0.05, attenuate: method == Method::EnvAdaptive, ..Default::default() };
            test.iter().map(|e| meta_test_adapt(&m, e, &ac).unwrap().final_query_loss()).sum::<f64>() / test.len() as f64
        };
        let (pp, ea) = (loss(Method::MetaPp), loss(Method::EnvAdaptive));
        if ea < pp {
            wins += 1;
        }
        margins.push(format!("{:.3}", ea / pp));
    }
    (wins >= 7, format!("env_adaptive wins {wins}/10, loss ratios [{}]", margins.join(", ")))
}

fn representation_structure() -> Outcome {
    let fe = FeatureExtractor::new(FeatureParams::default()).unwrap();
    let mc = desk_model(512);
    let mut counts = Vec::new();
    for seed in 0..5 {
        let mut sc = reverb_ladder(seed, 96, 10);
        sc.clip_s = 1.0;
        sc.n_classes = 3;
        sc.event_duration_s = [0.4, 0.8];
        sc.events_per_clip = [1, 2];
        sc.max_polyphony = 2;
        sc.srirs_per_env = 4;
        let envs = render(&sc, &fe, &mc.backbone);
        let mut model = SeldModel::new(mc.clone(), seed).unwrap();
        let sup = SupervisedConfig { lr: 3e-3, epochs: 5, batch_size: 16, seed, ..Default::default() };
        train_supervised(&mut model, &envs, &sup).unwrap();
        let meta = MetaConfig {
            method: Method::EnvAdaptive,
            k_support: 10,
            room_batch: 4,
            sample_batch: 32,
            inner_steps: 5,
            alpha: 0.05,
            beta: 1e-3,
            epochs: 5,
            seed,
            ..Default::default()
        };
        meta_train(&mut model, &envs, &meta).unwrap();
        let rep = |clips: &[Clip]| {
            let refs: Vec<&Clip> = clips.iter().collect();
            env_representation(&model, &Batch::new(&mc.backbone, &refs).unwrap()).unwrap()
        };
        let support: Vec<Vec<f64>> = envs.iter().map(|e| rep(&e.clips[..30])).collect();
        let query: Vec<Vec<f64>> = envs.iter().map(|e| rep(&e.clips[30..])).collect();
        counts.push(diagonal_max_count(&similarity_map(&support, &query).unwrap()));
    }
    let med = median(counts.clone());
    (med >= 4, format!("diagonal maxima per seed {counts:?}, median {med}/8"))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for i in 0..200 {
        let n = rng.gen_range(10..=30);
        let reference = micro_scene(&mut rng, n, 3, 3);
        let pred = if i % 10 == 0 { micro_scene(&mut rng, n, 3, 3) } else { perturb(&mut rng, &reference, 3, 3) };
        let s = match_and_score(&pred, &reference, 3).unwrap();
        let want = brute_force_scores(&pred, &reference, 3);
        let got = [s.er20, s.f20, s.le_cd, s.lr_cd, s.e_seld];
        if got.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{mismatches} of 200 scenes disagree"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("special functions", special_functions),
        ("aggregate error rows", aggregate_error_rows),
        ("image source physics", image_source_physics),
        ("FOA round trip", foa_round_trip),
        ("gradient fidelity", gradient_fidelity),
        ("first-order meta-gradient identity", first_order_identity),
        ("bypass and skip reduce to meta_pp", reduction_identity),
        ("adaptation benefit", adaptation_benefit),
        ("conflict resolution", conflict_resolution),
        ("representation structure", representation_structure),
        ("metric oracle equivalence", metric_oracle),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| (false, "panicked".into()));
        failed += usize::from(!ok);
        println!(
            "{} {:>2} {name}: {detail} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
