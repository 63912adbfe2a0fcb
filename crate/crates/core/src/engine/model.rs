use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::TrainConfig;
use crate::contrastive::{
    continuous_triplet_on_tape, discrete_triplet_on_tape, make_negative_condition_with,
    NegativePair,
};
use crate::data::{decode_batch, EncodedBatch, Table, TableSchema};
use crate::diffusion::continuous::{forward_sample_cont_rows, loss_diff_c_var, reverse_step_cont};
use crate::diffusion::discrete::{
    forward_marginal_cat_rows, loss_diff_d_var, reverse_dist_cat, sample_cat, CategoricalState,
};
use crate::nn::{adam_step, DiffusionNet, Gradients, NetDims, OptimizerState, Tape, Tensor2};
use crate::rng::{stream_rng, Stream};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// Rows generated per sampling chunk; each chunk has its own random streams.
pub const SAMPLE_CHUNK: usize = 1000;

/// Loss components of one training step. Contrastive terms are 0 when their weight is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    /// Shared timestep, `None` with per-row timesteps.
    pub t: Option<usize>,
    pub diff_c: f64,
    pub cl_c: f64,
    pub diff_d: f64,
    pub cl_d: f64,
}

impl StepLosses {
    pub fn loss_c(&self, lambda_c: f64) -> f64 {
        self.diff_c + lambda_c * self.cl_c
    }

    pub fn loss_d(&self, lambda_d: f64) -> f64 {
        self.diff_d + lambda_d * self.cl_d
    }

    fn is_finite(&self) -> bool {
        [self.diff_c, self.cl_c, self.diff_d, self.cl_d]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainProgress {
    pub step: u64,
    pub epoch: u64,
    pub losses: StepLosses,
}

impl TrainProgress {
    /// `key=value` log line.
    pub fn log_line(&self) -> String {
        let t = self
            .losses
            .t
            .map_or_else(|| "per_row".to_string(), |t| t.to_string());
        format!(
            "step={} epoch={} t={} loss_diff_c={:.6} loss_cl_c={:.6} loss_diff_d={:.6} loss_cl_d={:.6}",
            self.step, self.epoch, t, self.losses.diff_c, self.losses.cl_c, self.losses.diff_d, self.losses.cl_d
        )
    }
}

/// Which reverse update is computed first inside a sampling step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpdateOrder {
    #[default]
    ContinuousFirst,
    DiscreteFirst,
}

/// The pair of co-evolving diffusion models with their optimizers.
///
/// `net_c` predicts noise for the continuous block conditioned on the noisy
/// discrete block; `net_d` predicts `x_0` logits for the discrete block
/// conditioned on the noisy continuous block. A schema without continuous (or
/// discrete) columns has no `net_c` (or `net_d`), and the other network is
/// unconditioned.
#[derive(Clone, Debug)]
pub struct CoDiModel {
    pub(crate) net_c: Option<DiffusionNet>,
    pub(crate) net_d: Option<DiffusionNet>,
    pub(crate) opt_c: Option<OptimizerState>,
    pub(crate) opt_d: Option<OptimizerState>,
    pub(crate) schedule: NoiseSchedule,
    pub(crate) schema: TableSchema,
    pub(crate) config: TrainConfig,
    pub(crate) step: u64,
    pub(crate) epoch: u64,
}

pub(crate) fn net_dims(
    schema: &TableSchema,
    config: &TrainConfig,
) -> (Option<NetDims>, Option<NetDims>) {
    let n_c = schema.n_continuous();
    let w_d: usize = schema.category_sizes().iter().sum();
    let dims = |input, cond| NetDims {
        input,
        cond,
        output: input,
        hidden: config.hidden,
        time_embed: config.emb_dim,
    };
    (
        (n_c > 0).then(|| dims(n_c, w_d)),
        (w_d > 0).then(|| dims(w_d, n_c)),
    )
}

impl CoDiModel {
    pub fn new(schema: TableSchema, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let schedule = config.schedule()?;
        let (dc, dd) = net_dims(&schema, &config);
        let net_c = dc
            .map(|d| DiffusionNet::new(d, &mut stream_rng(config.seed, Stream::Init, 0)))
            .transpose()?;
        let net_d = dd
            .map(|d| DiffusionNet::new(d, &mut stream_rng(config.seed, Stream::Init, 1)))
            .transpose()?;
        let opt_c = net_c.as_ref().map(|n| OptimizerState::new(n, config.lr));
        let opt_d = net_d.as_ref().map(|n| OptimizerState::new(n, config.lr));
        Ok(Self {
            net_c,
            net_d,
            opt_c,
            opt_d,
            schedule,
            schema,
            config,
            step: 0,
            epoch: 0,
        })
    }

    pub fn net_c(&self) -> Option<&DiffusionNet> {
        self.net_c.as_ref()
    }

    pub fn net_d(&self) -> Option<&DiffusionNet> {
        self.net_d.as_ref()
    }

    pub fn net_c_mut(&mut self) -> Option<&mut DiffusionNet> {
        self.net_c.as_mut()
    }

    pub fn net_d_mut(&mut self) -> Option<&mut DiffusionNet> {
        self.net_d.as_mut()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Completed training epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn check_batch(&self, batch: &EncodedBatch) -> Result<()> {
        let n_c = self.schema.n_continuous();
        let sizes = self.schema.category_sizes();
        if batch.cont.cols() != n_c
            || batch.disc.sizes() != sizes.as_slice()
            || batch.disc.rows() != batch.rows()
        {
            return Err(Error::shape(
                "training batch",
                format!("{n_c} continuous and blocks {sizes:?}"),
                format!(
                    "{} continuous and blocks {:?}",
                    batch.cont.cols(),
                    batch.disc.sizes()
                ),
            ));
        }
        if batch.rows() < 2 {
            return Err(Error::Config(
                "a training batch needs at least 2 rows".into(),
            ));
        }
        Ok(())
    }

    /// Both loss gradients for one batch, without updating the parameters.
    ///
    /// `rng` drives the timestep and forward noise, `neg_rng` the negative shuffles.
    pub fn compute_gradients<R, Q>(
        &self,
        batch: &EncodedBatch,
        rng: &mut R,
        neg_rng: &mut Q,
    ) -> Result<(StepLosses, Option<Gradients>, Option<Gradients>)>
    where
        R: Rng + ?Sized,
        Q: Rng + ?Sized,
    {
        self.check_batch(batch)?;
        let n = batch.rows();
        let sched = &self.schedule;
        let big_t = sched.timesteps();
        let ts: Vec<usize> = if self.config.per_row_t {
            (0..n).map(|_| rng.random_range(1..=big_t)).collect()
        } else {
            vec![rng.random_range(1..=big_t)]
        };

        let eps = Tensor2::from_fn(n, batch.cont.cols(), |_, _| StandardNormal.sample(rng));
        let x_t_c = forward_sample_cont_rows(&batch.cont, &ts, &eps, sched)?;
        let x_t_d = if batch.disc.width() > 0 {
            sample_cat(&forward_marginal_cat_rows(&batch.disc, &ts, sched)?, rng)
        } else {
            CategoricalState::empty(n)
        };

        let (lc, ld, margin) = (
            self.config.lambda_c,
            self.config.lambda_d,
            self.config.margin,
        );
        let coupled = self.net_c.is_some() && self.net_d.is_some();
        let neg: Option<NegativePair> = if coupled && (lc > 0.0 || ld > 0.0) {
            Some(make_negative_condition_with(
                self.config.negative_method,
                &x_t_c,
                &x_t_d,
                neg_rng,
            )?)
        } else {
            None
        };

        let mut losses = StepLosses {
            t: (!self.config.per_row_t).then_some(ts[0]),
            diff_c: 0.0,
            cl_c: 0.0,
            diff_d: 0.0,
            cl_d: 0.0,
        };

        let grads_c = match &self.net_c {
            None => None,
            Some(net) => {
                let mut tape = Tape::new();
                let xv = tape.constant_ref(&x_t_c);
                let cv = tape.constant_ref(x_t_d.probs());
                let eps_pred = net.forward(&mut tape, xv, cv, &ts)?;
                let diff = loss_diff_c_var(&mut tape, eps_pred, &eps)?;
                losses.diff_c = tape.scalar(diff);
                let mut total = diff;
                if let (true, Some(neg)) = (lc > 0.0, &neg) {
                    let cl = continuous_triplet_on_tape(
                        &mut tape,
                        net,
                        &batch.cont,
                        &x_t_c,
                        eps_pred,
                        neg.neg_cond_d.probs(),
                        &ts,
                        sched,
                        margin,
                    )?;
                    losses.cl_c = tape.scalar(cl);
                    let weighted = tape.scale(cl, lc);
                    total = tape.add(diff, weighted)?;
                }
                Some(tape.backward(total)?)
            }
        };

        let grads_d = match &self.net_d {
            None => None,
            Some(net) => {
                let mut tape = Tape::new();
                let xv = tape.constant_ref(x_t_d.probs());
                let cv = tape.constant_ref(&x_t_c);
                let logits = net.forward(&mut tape, xv, cv, &ts)?;
                let diff = loss_diff_d_var(&mut tape, &batch.disc, &x_t_d, logits, &ts, sched)?;
                losses.diff_d = tape.scalar(diff);
                let mut total = diff;
                if let (true, Some(neg)) = (ld > 0.0, &neg) {
                    let cl = discrete_triplet_on_tape(
                        &mut tape,
                        net,
                        &batch.disc,
                        x_t_d.probs(),
                        logits,
                        &neg.neg_cond_c,
                        &ts,
                        margin,
                    )?;
                    losses.cl_d = tape.scalar(cl);
                    let weighted = tape.scale(cl, ld);
                    total = tape.add(diff, weighted)?;
                }
                Some(tape.backward(total)?)
            }
        };

        if !losses.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at step {} (t={:?}): loss_diff_c={} loss_cl_c={} loss_diff_d={} loss_cl_d={}",
                self.step + 1,
                losses.t,
                losses.diff_c,
                losses.cl_c,
                losses.diff_d,
                losses.cl_d
            )));
        }
        Ok((losses, grads_c, grads_d))
    }

    /// One joint optimisation step: both networks see the same timestep and the
    /// same noised states, and each is updated from its own combined loss only.
    pub fn train_step<R, Q>(
        &mut self,
        batch: &EncodedBatch,
        rng: &mut R,
        neg_rng: &mut Q,
    ) -> Result<StepLosses>
    where
        R: Rng + ?Sized,
        Q: Rng + ?Sized,
    {
        let (losses, gc, gd) = self.compute_gradients(batch, rng, neg_rng)?;
        let diag = |e: Error| match e {
            Error::NonFinite { what } => Error::Numerical(format!(
                "{what} at step {} (t={:?})",
                self.step + 1,
                losses.t
            )),
            other => other,
        };
        if let (Some(net), Some(opt), Some(g)) =
            (self.net_c.as_mut(), self.opt_c.as_mut(), gc.as_ref())
        {
            adam_step(net, g, opt).map_err(diag)?;
        }
        if let (Some(net), Some(opt), Some(g)) =
            (self.net_d.as_mut(), self.opt_d.as_mut(), gd.as_ref())
        {
            adam_step(net, g, opt).map_err(diag)?;
        }
        self.step += 1;
        Ok(losses)
    }

    /// Runs `epochs` more epochs over `data`. Each epoch reshuffles all rows; the
    /// last batch wraps around so every batch has `batch_size` rows.
    pub fn fit(
        &mut self,
        data: &EncodedBatch,
        epochs: usize,
        mut on_step: impl FnMut(&TrainProgress),
    ) -> Result<()> {
        let n = data.rows();
        if n == 0 {
            return Err(Error::Config("cannot train on an empty table".into()));
        }
        let bs = self.config.batch_size;
        let seed = self.config.seed;
        for _ in 0..epochs {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut stream_rng(seed, Stream::Shuffle, self.epoch));
            for b in 0..n.div_ceil(bs) {
                let idx: Vec<usize> = (0..bs).map(|i| perm[(b * bs + i) % n]).collect();
                let batch = data.select_rows(&idx);
                let mut rng = stream_rng(seed, Stream::Train, self.step);
                let mut neg_rng = stream_rng(seed, Stream::Negative, self.step);
                let losses = self.train_step(&batch, &mut rng, &mut neg_rng)?;
                on_step(&TrainProgress {
                    step: self.step,
                    epoch: self.epoch,
                    losses,
                });
            }
            self.epoch += 1;
        }
        Ok(())
    }

    /// Co-evolving reverse sampling of `n` rows.
    pub fn sample(&self, n: usize, seed: u64) -> Result<EncodedBatch> {
        self.sample_with_order(n, seed, UpdateOrder::ContinuousFirst)
    }

    /// [`CoDiModel::sample`] with an explicit evaluation order of the two
    /// updates. Both updates at step `i` read only step-`i` states, so the
    /// order does not change the result.
    pub fn sample_with_order(
        &self,
        n: usize,
        seed: u64,
        order: UpdateOrder,
    ) -> Result<EncodedBatch> {
        if n == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let mut cont = Vec::with_capacity(n * self.schema.n_continuous());
        let mut disc = Vec::new();
        for (chunk, start) in (0..n).step_by(SAMPLE_CHUNK).enumerate() {
            let rows = SAMPLE_CHUNK.min(n - start);
            let (c, d) = self.sample_chunk(rows, seed, chunk as u64, order)?;
            cont.extend_from_slice(c.data());
            disc.extend_from_slice(d.probs().data());
        }
        let sizes = self.schema.category_sizes();
        let width: usize = sizes.iter().sum();
        let cont = Tensor2::new(n, self.schema.n_continuous(), cont)?;
        let disc = if width == 0 {
            CategoricalState::empty(n)
        } else {
            CategoricalState::new(sizes, Tensor2::new(n, width, disc)?, true)?
        };
        Ok(EncodedBatch { cont, disc })
    }

    fn sample_chunk(
        &self,
        rows: usize,
        seed: u64,
        chunk: u64,
        order: UpdateOrder,
    ) -> Result<(Tensor2, CategoricalState)> {
        let sched = &self.schedule;
        let mut c_rng = stream_rng(seed, Stream::Sample, 2 * chunk);
        let mut d_rng = stream_rng(seed, Stream::Sample, 2 * chunk + 1);
        let n_c = self.schema.n_continuous();
        let sizes = self.schema.category_sizes();

        let mut x_c = Tensor2::from_fn(rows, n_c, |_, _| StandardNormal.sample(&mut c_rng));
        let mut x_d = if sizes.is_empty() {
            CategoricalState::empty(rows)
        } else {
            sample_cat(&CategoricalState::uniform(sizes, rows)?, &mut d_rng)
        };

        for t in (1..=sched.timesteps()).rev() {
            let step_c = |x_c: &Tensor2,
                          x_d: &CategoricalState,
                          rng: &mut rand_chacha::ChaCha8Rng|
             -> Result<Tensor2> {
                match &self.net_c {
                    None => Ok(x_c.clone()),
                    Some(net) => {
                        let eps = net.forward_values(x_c, x_d.probs(), &[t])?;
                        let z = if t > 1 {
                            Tensor2::from_fn(rows, n_c, |_, _| StandardNormal.sample(rng))
                        } else {
                            Tensor2::zeros(rows, n_c)
                        };
                        reverse_step_cont(x_c, &eps, t, &z, sched)
                    }
                }
            };
            let step_d = |x_c: &Tensor2,
                          x_d: &CategoricalState,
                          rng: &mut rand_chacha::ChaCha8Rng|
             -> Result<CategoricalState> {
                match &self.net_d {
                    None => Ok(x_d.clone()),
                    Some(net) => {
                        let logits = net.forward_values(x_d.probs(), x_c, &[t])?;
                        let dist = reverse_dist_cat(x_d, &logits, t, sched)?;
                        Ok(sample_cat(&dist, rng))
                    }
                }
            };
            let (next_c, next_d) = match order {
                UpdateOrder::ContinuousFirst => {
                    let c = step_c(&x_c, &x_d, &mut c_rng)?;
                    let d = step_d(&x_c, &x_d, &mut d_rng)?;
                    (c, d)
                }
                UpdateOrder::DiscreteFirst => {
                    let d = step_d(&x_c, &x_d, &mut d_rng)?;
                    let c = step_c(&x_c, &x_d, &mut c_rng)?;
                    (c, d)
                }
            };
            if !next_c.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite continuous sample at t={t}"
                )));
            }
            x_c = next_c;
            x_d = next_d;
        }
        Ok((x_c, x_d))
    }

    /// Samples `n` rows and decodes them into table values.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Table> {
        decode_batch(&self.sample(n, seed)?, &self.schema)
    }
}
