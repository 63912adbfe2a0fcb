mod oracles;

use codi_core::contrastive::{triplet_loss, Distance};
use codi_core::data::{encode, generate_toy, EncodedBatch};
use codi_core::diffusion::continuous::{forward_sample_cont, loss_diff_c_var};
use codi_core::diffusion::discrete::{forward_marginal_cat, loss_diff_d_var, sample_cat};
use codi_core::engine::{CoDiModel, TrainConfig};
use codi_core::nn::{Gradients, ParamId, Tape};
use codi_core::rng::{stream_rng, Stream};
use codi_core::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn toy(n: usize, seed: u64) -> (codi_core::data::TableSchema, EncodedBatch) {
    let (schema, table) = generate_toy(n, &mut stream_rng(seed, Stream::Toy, 0)).unwrap();
    let batch = encode(&table, &schema).unwrap();
    (schema, batch)
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden: [16, 32, 32],
        emb_dim: 8,
        batch_size: 32,
        ..Default::default()
    }
}

fn same_bits(a: &Gradients, b: &Gradients, params: usize) -> bool {
    (0..params).all(|p| {
        let (x, y) = (a.get(ParamId(p)).unwrap(), b.get(ParamId(p)).unwrap());
        x.data()
            .iter()
            .zip(y.data())
            .all(|(u, v)| u.to_bits() == v.to_bits())
    })
}

#[test]
fn triplet_loss_by_hand() {
    let anchor = Tensor2::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let pos = Tensor2::from_rows(&[vec![3.0, 4.0], vec![1.0, 1.0]]).unwrap();
    let neg = Tensor2::from_rows(&[vec![0.0, 0.0], vec![4.0, 5.0]]).unwrap();
    // d+ = (5, 0), d- = (0, 5): hinge terms 6 and 0
    let l = triplet_loss(&anchor, &pos, &neg, &Distance::Euclidean, 1.0).unwrap();
    assert!((l - 3.0).abs() < 1e-12);

    let anchor = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let pos = Tensor2::from_rows(&[vec![0.5, 0.5], vec![0.75, 0.25]]).unwrap();
    let neg = Tensor2::filled(2, 2, 0.5);
    // d+ = (ln 2, ln 4), d- = (ln 2, ln 2): hinge terms 1 and 1 + ln 2
    let l = triplet_loss(&anchor, &pos, &neg, &Distance::CrossEntropy(vec![2]), 1.0).unwrap();
    assert!((l - (2.0 + 2f64.ln()) / 2.0).abs() < 1e-12);
}

#[test]
fn zero_lambda_gradients_equal_plain_diffusion() {
    let (schema, batch) = toy(32, 1);
    let cfg = TrainConfig {
        lambda_c: 0.0,
        lambda_d: 0.0,
        ..small_config()
    };
    let model = CoDiModel::new(schema, cfg).unwrap();
    let mut neg_rng = ChaCha8Rng::seed_from_u64(77);
    let (losses, gc, gd) = model
        .compute_gradients(&batch, &mut ChaCha8Rng::seed_from_u64(5), &mut neg_rng)
        .unwrap();
    assert_eq!((losses.cl_c, losses.cl_d), (0.0, 0.0));
    assert_eq!(
        neg_rng.random::<u64>(),
        ChaCha8Rng::seed_from_u64(77).random::<u64>()
    );

    // the same draws, fed to the bare diffusion objectives
    let sched = model.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = rng.random_range(1..=sched.timesteps());
    let n = batch.rows();
    let eps = Tensor2::from_fn(n, batch.cont.cols(), |_, _| StandardNormal.sample(&mut rng));
    let x_t_c = forward_sample_cont(&batch.cont, t, &eps, sched).unwrap();
    let x_t_d = sample_cat(
        &forward_marginal_cat(&batch.disc, t, sched).unwrap(),
        &mut rng,
    );

    let net_c = model.net_c().unwrap();
    let mut tape = Tape::new();
    let (xv, cv) = (tape.constant_ref(&x_t_c), tape.constant_ref(x_t_d.probs()));
    let out = net_c.forward(&mut tape, xv, cv, &[t]).unwrap();
    let l = loss_diff_c_var(&mut tape, out, &eps).unwrap();
    assert_eq!(tape.scalar(l).to_bits(), losses.diff_c.to_bits());
    let plain_c = tape.backward(l).unwrap();
    assert!(same_bits(
        gc.as_ref().unwrap(),
        &plain_c,
        net_c.params().len()
    ));

    let net_d = model.net_d().unwrap();
    let mut tape = Tape::new();
    let (xv, cv) = (tape.constant_ref(x_t_d.probs()), tape.constant_ref(&x_t_c));
    let out = net_d.forward(&mut tape, xv, cv, &[t]).unwrap();
    let l = loss_diff_d_var(&mut tape, &batch.disc, &x_t_d, out, &[t], sched).unwrap();
    assert_eq!(tape.scalar(l).to_bits(), losses.diff_d.to_bits());
    let plain_d = tape.backward(l).unwrap();
    assert!(same_bits(
        gd.as_ref().unwrap(),
        &plain_d,
        net_d.params().len()
    ));
}

#[test]
fn nets_receive_no_gradient_from_each_other() {
    let (schema, batch) = toy(32, 2);
    let model = CoDiModel::new(schema, small_config()).unwrap();
    let (_, gc, gd) = model
        .compute_gradients(
            &batch,
            &mut ChaCha8Rng::seed_from_u64(1),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
    assert_eq!(gc.unwrap().len(), model.net_c().unwrap().params().len());
    assert_eq!(gd.unwrap().len(), model.net_d().unwrap().params().len());
}

#[test]
fn training_reduces_the_loss() {
    let (schema, batch) = toy(512, 3);
    let cfg = TrainConfig {
        batch_size: 64,
        ..small_config()
    };
    let mut model = CoDiModel::new(schema, cfg.clone()).unwrap();
    let mut curve = Vec::new();
    // 8 steps per epoch
    model
        .fit(&batch, 63, |p| {
            curve.push(p.losses.loss_c(cfg.lambda_c) + p.losses.loss_d(cfg.lambda_d))
        })
        .unwrap();
    assert_eq!(curve.len(), 504);
    let head: f64 = curve[..50].iter().sum::<f64>() / 50.0;
    let tail: f64 = curve[curve.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(tail < 0.8 * head, "loss went from {head} to {tail}");
}

#[test]
fn memorizes_a_single_record() {
    let (schema, batch) = toy(16, 4);
    let record = batch.select_rows(&[0]);
    let cfg = TrainConfig {
        batch_size: 32,
        lr: 2e-3,
        ..Default::default()
    };
    let mut model = CoDiModel::new(schema, cfg).unwrap();
    // one row wraps into a full batch, so each epoch is one step
    model.fit(&record, 2000, |_| {}).unwrap();
    assert_eq!(model.step(), 2000);

    let out = model.sample(1000, 9).unwrap();
    let want_d = record.disc.argmax()[0].clone();
    let got_d = out.disc.argmax();
    let disc_match = got_d.iter().filter(|r| **r == want_d).count() as f64 / 1000.0;
    let cont_match = (0..1000)
        .filter(|&r| {
            out.cont
                .row(r)
                .iter()
                .zip(record.cont.row(0))
                .all(|(a, b)| (a - b).abs() <= 0.1)
        })
        .count() as f64
        / 1000.0;
    assert!(disc_match >= 0.9, "discrete match {disc_match}");
    assert!(cont_match >= 0.8, "continuous match {cont_match}");
}

#[test]
fn checkpoint_round_trip_preserves_sampling_and_training() {
    let (schema, batch) = toy(64, 5);
    let mut a = CoDiModel::new(schema, small_config()).unwrap();
    a.fit(&batch, 3, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    a.save_checkpoint(&path).unwrap();
    let mut b = CoDiModel::load_checkpoint(&path).unwrap();
    assert_eq!((b.step(), b.epoch()), (a.step(), a.epoch()));

    let (sa, sb) = (a.sample(50, 3).unwrap(), b.sample(50, 3).unwrap());
    assert_eq!(sa.cont, sb.cont);
    assert_eq!(sa.disc, sb.disc);

    a.fit(&batch, 2, |_| {}).unwrap();
    b.fit(&batch, 2, |_| {}).unwrap();
    assert_eq!(a.net_c().unwrap().params(), b.net_c().unwrap().params());
    assert_eq!(a.net_d().unwrap().params(), b.net_d().unwrap().params());
}

#[test]
fn split_training_equals_uninterrupted_training() {
    let (schema, batch) = toy(64, 6);
    let mut a = CoDiModel::new(schema.clone(), small_config()).unwrap();
    a.fit(&batch, 4, |_| {}).unwrap();
    let mut b = CoDiModel::new(schema, small_config()).unwrap();
    b.fit(&batch, 1, |_| {}).unwrap();
    b.fit(&batch, 3, |_| {}).unwrap();
    assert_eq!(a.net_c().unwrap().params(), b.net_c().unwrap().params());
    assert_eq!(a.step(), 8);
}
