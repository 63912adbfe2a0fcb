//! Gradient-check cases shared by the integration tests and the acceptance run.
//!
//! Each case builds a loss on a small random network, records it on the tape,
//! and compares the analytic gradient with central differences.

#![allow(dead_code)]

use codi_core::contrastive::{cross_entropy_distance_var, euclidean_distance_var, hinge_var};
use codi_core::data::{encode, generate_toy};
use codi_core::diffusion::continuous::{forward_sample_cont, loss_diff_c_var, predict_x0_var};
use codi_core::diffusion::discrete::{
    forward_marginal_cat, loss_diff_d_var, sample_cat, CategoricalState,
};
use codi_core::engine::{CoDiModel, TrainConfig};
use codi_core::nn::{DiffusionNet, Gradients, NetDims, Tape, Var};
use codi_core::rng::{stream_rng, Stream};
use codi_core::{NoiseSchedule, Tensor2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::oracles::{finite_difference_check, randn, GradCheck};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Hinge gaps closer to zero than this are too near the kink for central differences.
pub const KINK_GAP: f64 = 1e-3;

fn net(input: usize, cond: usize, seed: u64) -> DiffusionNet {
    let dims = NetDims {
        input,
        cond,
        output: input,
        hidden: [6, 8, 10],
        time_embed: 4,
    };
    DiffusionNet::new(dims, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn one_hot(sizes: &[usize], rows: usize, rng: &mut ChaCha8Rng) -> CategoricalState {
    sample_cat(
        &CategoricalState::uniform(sizes.to_vec(), rows).unwrap(),
        rng,
    )
}

fn check(
    net: &DiffusionNet,
    loss: impl Fn(&DiffusionNet, bool) -> (f64, Option<Gradients>),
) -> GradCheck {
    let g = loss(net, true).1.expect("gradient requested");
    finite_difference_check(net, &g, H, TOL, |p| loss(p, false).0)
}

fn hinge_gaps(tape: &Tape<'_>, dp: Var, dn: Var, margin: f64) -> Vec<f64> {
    let (p, n) = (tape.value(dp), tape.value(dn));
    p.data()
        .iter()
        .zip(n.data())
        .map(|(a, b)| a - b + margin)
        .collect()
}

/// Weighted sum of raw network outputs, with a different timestep per row.
pub fn network_output() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = net(3, 2, 11);
    let x = randn(5, 3, &mut rng);
    let c = randn(5, 2, &mut rng);
    let w = randn(5, 3, &mut rng);
    let ts = [3, 7, 7, 1, 20];
    check(&n, |net, grad| {
        let mut tape = Tape::new();
        let xv = tape.constant_ref(&x);
        let cv = tape.constant_ref(&c);
        let out = net.forward(&mut tape, xv, cv, &ts).unwrap();
        let total = tape.value(out).zip_map(&w, |a, b| a * b).sum();
        let weights = w.clone();
        let s = tape.custom(
            &[out],
            Tensor2::new(1, 1, vec![total]).unwrap(),
            move |up| vec![weights.scale(up.data()[0])],
        );
        (total, grad.then(|| tape.backward(s).unwrap()))
    })
}

/// Noise-prediction loss of the continuous model.
pub fn continuous_diffusion(t: usize) -> GradCheck {
    let s = NoiseSchedule::default_linear();
    let mut rng = ChaCha8Rng::seed_from_u64(2 + t as u64);
    let n = net(2, 3, 12);
    let x0 = randn(6, 2, &mut rng);
    let eps = randn(6, 2, &mut rng);
    let xt = forward_sample_cont(&x0, t, &eps, &s).unwrap();
    let cond = randn(6, 3, &mut rng);
    check(&n, |net, grad| {
        let mut tape = Tape::new();
        let xv = tape.constant_ref(&xt);
        let cv = tape.constant_ref(&cond);
        let e = net.forward(&mut tape, xv, cv, &[t]).unwrap();
        let l = loss_diff_c_var(&mut tape, e, &eps).unwrap();
        (tape.scalar(l), grad.then(|| tape.backward(l).unwrap()))
    })
}

/// Discrete variational term: KL for `t ≥ 2`, reconstruction likelihood at `t = 1`.
pub fn discrete_diffusion(t: usize) -> GradCheck {
    let s = NoiseSchedule::default_linear();
    let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
    let sizes = [2, 3];
    let n = net(5, 2, t as u64 + 100);
    let x0 = one_hot(&sizes, 6, &mut rng);
    let xt = sample_cat(&forward_marginal_cat(&x0, t, &s).unwrap(), &mut rng);
    let cond = randn(6, 2, &mut rng);
    check(&n, |net, grad| {
        let mut tape = Tape::new();
        let xv = tape.constant_ref(xt.probs());
        let cv = tape.constant_ref(&cond);
        let logits = net.forward(&mut tape, xv, cv, &[t]).unwrap();
        let l = loss_diff_d_var(&mut tape, &x0, &xt, logits, &[t], &s).unwrap();
        (tape.scalar(l), grad.then(|| tape.backward(l).unwrap()))
    })
}

/// Continuous triplet term. Returns the check and the smallest |hinge gap|.
pub fn continuous_triplet() -> (GradCheck, f64) {
    let s = NoiseSchedule::default_linear();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = net(2, 3, 14);
    let x0 = randn(8, 2, &mut rng);
    let xt = forward_sample_cont(&x0, 30, &randn(8, 2, &mut rng), &s).unwrap();
    let pos = randn(8, 3, &mut rng);
    let neg = randn(8, 3, &mut rng);
    let margin = 0.5;
    let record = |net: &DiffusionNet, grad: bool| {
        let mut tape = Tape::new();
        let xv = tape.constant_ref(&xt);
        let pv = tape.constant_ref(&pos);
        let nv = tape.constant_ref(&neg);
        let ep = net.forward(&mut tape, xv, pv, &[30]).unwrap();
        let en = net.forward(&mut tape, xv, nv, &[30]).unwrap();
        let ap = predict_x0_var(&mut tape, &xt, ep, &[30], &s).unwrap();
        let an = predict_x0_var(&mut tape, &xt, en, &[30], &s).unwrap();
        let dp = euclidean_distance_var(&mut tape, &x0, ap).unwrap();
        let dn = euclidean_distance_var(&mut tape, &x0, an).unwrap();
        let gaps = hinge_gaps(&tape, dp, dn, margin);
        let l = hinge_var(&mut tape, dp, dn, margin).unwrap();
        (
            tape.scalar(l),
            gaps,
            grad.then(|| tape.backward(l).unwrap()),
        )
    };
    let gap = record(&n, false)
        .1
        .iter()
        .fold(f64::INFINITY, |m, g| m.min(g.abs()));
    (
        check(&n, |net, grad| {
            let (v, _, g) = record(net, grad);
            (v, g)
        }),
        gap,
    )
}

/// Discrete triplet term. Returns the check and the smallest |hinge gap|.
pub fn discrete_triplet() -> (GradCheck, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sizes = [3, 2];
    let n = net(5, 2, 15);
    let x0 = one_hot(&sizes, 8, &mut rng);
    let xt = one_hot(&sizes, 8, &mut rng);
    let pos = randn(8, 2, &mut rng);
    let neg = randn(8, 2, &mut rng);
    let margin = 1.0;
    let record = |net: &DiffusionNet, grad: bool| {
        let mut tape = Tape::new();
        let xv = tape.constant_ref(xt.probs());
        let pv = tape.constant_ref(&pos);
        let nv = tape.constant_ref(&neg);
        let lp = net.forward(&mut tape, xv, pv, &[12]).unwrap();
        let ln = net.forward(&mut tape, xv, nv, &[12]).unwrap();
        let dp = cross_entropy_distance_var(&mut tape, &x0, lp).unwrap();
        let dn = cross_entropy_distance_var(&mut tape, &x0, ln).unwrap();
        let gaps = hinge_gaps(&tape, dp, dn, margin);
        let l = hinge_var(&mut tape, dp, dn, margin).unwrap();
        (
            tape.scalar(l),
            gaps,
            grad.then(|| tape.backward(l).unwrap()),
        )
    };
    let gap = record(&n, false)
        .1
        .iter()
        .fold(f64::INFINITY, |m, g| m.min(g.abs()));
    (
        check(&n, |net, grad| {
            let (v, _, g) = record(net, grad);
            (v, g)
        }),
        gap,
    )
}

/// Full per-network training objectives through `compute_gradients`, with re-seeded randomness.
pub fn combined_objectives() -> (GradCheck, GradCheck) {
    let (schema, table) = generate_toy(16, &mut stream_rng(3, Stream::Toy, 0)).unwrap();
    let cfg = TrainConfig {
        hidden: [4, 6, 6],
        emb_dim: 4,
        lambda_c: 0.3,
        lambda_d: 0.4,
        margin: 2.0,
        ..Default::default()
    };
    let batch = encode(&table, &schema).unwrap();
    let model = CoDiModel::new(schema, cfg.clone()).unwrap();
    let run = |m: &CoDiModel| {
        m.compute_gradients(
            &batch,
            &mut stream_rng(5, Stream::Train, 0),
            &mut stream_rng(5, Stream::Negative, 0),
        )
        .unwrap()
    };
    let (losses, gc, gd) = run(&model);
    assert!(
        losses.cl_c > 0.0 && losses.cl_d > 0.0,
        "contrastive terms inactive: {losses:?}"
    );
    let c = finite_difference_check(
        model.net_c().unwrap(),
        gc.as_ref().unwrap(),
        H,
        TOL,
        |net| {
            let mut m = model.clone();
            *m.net_c_mut().unwrap() = net.clone();
            run(&m).0.loss_c(cfg.lambda_c)
        },
    );
    let d = finite_difference_check(
        model.net_d().unwrap(),
        gd.as_ref().unwrap(),
        H,
        TOL,
        |net| {
            let mut m = model.clone();
            *m.net_d_mut().unwrap() = net.clone();
            run(&m).0.loss_d(cfg.lambda_d)
        },
    );
    (c, d)
}
