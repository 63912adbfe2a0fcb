//! U-Net style fully connected denoiser shared by the continuous and discrete models.
//!
//! ```text
//! t_emb = FC_emb2(ReLU(FC_emb1(Emb(t))))
//! h_c   = FC_c(cond)
//! h_0   = x ⊙ h_c                       (⊙ = column concatenation)
//! h_1   = FC_1(h_0)
//! h_i   = ReLU(FC_i2(ReLU(FC_i1(h_{i-1})) + ReLU(FC_it(t_emb))))           i = 2, 3
//! h_4   = ReLU(FC_4(h_3))
//! h_i   = ReLU(FC_i2(ReLU(FC_i1(h_{i-1} ⊙ h_{8-i})) + ReLU(FC_it(t_emb))))  i = 5, 6
//! out   = FC_7(h_6)
//! ```
//!
//! Hidden widths are symmetric: `dim(h_1) = dim(h_6)`, `dim(h_2) = dim(h_5)`,
//! `dim(h_3) = dim(h_4)`. The condition layer is omitted when the condition is
//! zero-width, in which case `h_0 = x`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::embed::sinusoidal_embed;
use super::tape::{ParamId, Tape, Var};
use super::tensor::Tensor2;
use crate::{Error, Result};

/// Layer widths of a [`DiffusionNet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub input: usize,
    pub cond: usize,
    pub output: usize,
    /// `dim(h_1), dim(h_2), dim(h_3)`.
    pub hidden: [usize; 3],
    /// Width of the sinusoidal embedding `Emb(t)`.
    pub time_embed: usize,
}

impl NetDims {
    /// Width of `h_c`: half the input width, rounded up; zero without a condition.
    pub fn cond_hidden(&self) -> usize {
        if self.cond == 0 {
            0
        } else {
            self.input.div_ceil(2)
        }
    }

    /// Width of `t_emb`, four times the sinusoidal embedding.
    pub fn time_hidden(&self) -> usize {
        4 * self.time_embed
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 {
            return Err(Error::Config(
                "network input and output widths must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.time_embed < 2 || !self.time_embed.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time embedding dimension must be even and at least 2, got {}",
                self.time_embed
            )));
        }
        Ok(())
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor2,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    fc1: Dense,
    fc2: Dense,
    fct: Dense,
}

#[derive(Clone, Debug)]
struct Layout {
    emb1: Dense,
    emb2: Dense,
    cond: Option<Dense>,
    input: Dense,
    enc2: Block,
    enc3: Block,
    bottom: Dense,
    dec5: Block,
    dec6: Block,
    output: Dense,
}

/// Parameter shapes in storage order; weights are `out × in`.
fn layer_specs(d: &NetDims) -> Vec<(String, usize, usize)> {
    let [h1, h2, h3] = d.hidden;
    let te = d.time_hidden();
    let mut layers: Vec<(&str, usize, usize)> =
        vec![("time_embed1", d.time_embed, te), ("time_embed2", te, te)];
    if d.cond > 0 {
        layers.push(("condition", d.cond, d.cond_hidden()));
    }
    layers.extend([
        ("input", d.input + d.cond_hidden(), h1),
        ("enc2.fc1", h1, h2),
        ("enc2.fc2", h2, h2),
        ("enc2.fct", te, h2),
        ("enc3.fc1", h2, h3),
        ("enc3.fc2", h3, h3),
        ("enc3.fct", te, h3),
        ("bottom", h3, h3),
        ("dec5.fc1", 2 * h3, h2),
        ("dec5.fc2", h2, h2),
        ("dec5.fct", te, h2),
        ("dec6.fc1", 2 * h2, h1),
        ("dec6.fc2", h1, h1),
        ("dec6.fct", te, h1),
        ("output", h1, d.output),
    ]);
    let mut out = Vec::with_capacity(layers.len() * 2);
    for (name, fan_in, fan_out) in layers {
        out.push((format!("{name}.weight"), fan_out, fan_in));
        out.push((format!("{name}.bias"), 1, fan_out));
    }
    out
}

impl Layout {
    fn new(d: &NetDims) -> Self {
        let mut next = 0usize;
        let mut dense = || {
            let layer = Dense {
                w: ParamId(next),
                b: ParamId(next + 1),
            };
            next += 2;
            layer
        };
        let emb1 = dense();
        let emb2 = dense();
        let cond = (d.cond > 0).then(&mut dense);
        let input = dense();
        fn block(dense: &mut impl FnMut() -> Dense) -> Block {
            Block {
                fc1: dense(),
                fc2: dense(),
                fct: dense(),
            }
        }
        let enc2 = block(&mut dense);
        let enc3 = block(&mut dense);
        let bottom = dense();
        let dec5 = block(&mut dense);
        let dec6 = block(&mut dense);
        let output = dense();
        Self {
            emb1,
            emb2,
            cond,
            input,
            enc2,
            enc3,
            bottom,
            dec5,
            dec6,
            output,
        }
    }
}

/// Denoising network: `ε`-predictor for continuous columns, logit predictor for discrete ones.
#[derive(Clone, Debug)]
pub struct DiffusionNet {
    dims: NetDims,
    params: Vec<Param>,
    layout: Layout,
}

impl PartialEq for DiffusionNet {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.params == other.params
    }
}

impl DiffusionNet {
    /// Kaiming-uniform weights (`±√(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(dims: NetDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let params = layer_specs(&dims)
            .into_iter()
            .map(|(name, rows, cols)| {
                let value = if name.ends_with(".weight") {
                    let bound = (6.0 / cols as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("valid uniform bounds");
                    Tensor2::from_fn(rows, cols, |_, _| dist.sample(rng))
                } else {
                    Tensor2::zeros(rows, cols)
                };
                Param { name, value }
            })
            .collect();
        Ok(Self {
            layout: Layout::new(&dims),
            dims,
            params,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(dims: NetDims) -> Result<Self> {
        dims.validate()?;
        let params = layer_specs(&dims)
            .into_iter()
            .map(|(name, rows, cols)| Param {
                name,
                value: Tensor2::zeros(rows, cols),
            })
            .collect();
        Ok(Self {
            layout: Layout::new(&dims),
            dims,
            params,
        })
    }

    /// Rebuilds a network from stored parameters, checking names and shapes.
    pub fn from_params(dims: NetDims, params: Vec<Param>) -> Result<Self> {
        dims.validate()?;
        let specs = layer_specs(&dims);
        if specs.len() != params.len() {
            return Err(Error::shape("parameter list", specs.len(), params.len()));
        }
        for ((name, rows, cols), p) in specs.iter().zip(&params) {
            if *name != p.name || p.value.shape() != (*rows, *cols) {
                return Err(Error::shape(
                    name.clone(),
                    format!("{name} {rows}x{cols}"),
                    format!("{} {:?}", p.name, p.value.shape()),
                ));
            }
            if !p.value.is_finite() {
                return Err(Error::NonFinite {
                    what: p.name.clone(),
                });
            }
        }
        Ok(Self {
            layout: Layout::new(&dims),
            dims,
            params,
        })
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn dense<'a>(&'a self, tape: &mut Tape<'a>, layer: Dense, x: Var) -> Result<Var> {
        let w = tape.param(layer.w, &self.params[layer.w.0].value);
        let b = tape.param(layer.b, &self.params[layer.b.0].value);
        tape.linear(x, w, b)
    }

    fn block<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        block: Block,
        h: Var,
        t_emb: Var,
        rows: usize,
    ) -> Result<Var> {
        let a = self.dense(tape, block.fc1, h)?;
        let a = tape.relu(a);
        let tf = self.dense(tape, block.fct, t_emb)?;
        let mut tf = tape.relu(tf);
        if tape.value(tf).rows() != rows {
            tf = tape.broadcast_rows(tf, rows)?;
        }
        let s = tape.add(a, tf)?;
        let out = self.dense(tape, block.fc2, s)?;
        Ok(tape.relu(out))
    }

    /// Records the forward pass on `tape`. `t` holds one timestep per row, or a
    /// single timestep shared by the batch.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        cond: Var,
        t: &[usize],
    ) -> Result<Var> {
        let d = &self.dims;
        let rows = tape.value(x).rows();
        if tape.value(x).cols() != d.input {
            return Err(Error::shape("input_layer", d.input, tape.value(x).cols()));
        }
        let (cond_rows, cond_cols) = tape.value(cond).shape();
        if cond_cols != d.cond {
            return Err(Error::shape("condition_layer", d.cond, cond_cols));
        }
        if cond_rows != rows {
            return Err(Error::shape("condition_layer rows", rows, cond_rows));
        }
        if t.len() != rows && t.len() != 1 {
            return Err(Error::shape("time_embedding rows", rows, t.len()));
        }

        let shared_t = t.iter().all(|&s| s == t[0]);
        let emb_rows: &[usize] = if shared_t { &t[..1] } else { t };
        let mut emb = Vec::with_capacity(emb_rows.len() * d.time_embed);
        for &s in emb_rows {
            emb.extend(sinusoidal_embed(s as f64, d.time_embed)?);
        }
        let emb = tape.constant(Tensor2::from_vec_unchecked(
            emb_rows.len(),
            d.time_embed,
            emb,
        ));
        let te = self.dense(tape, self.layout.emb1, emb)?;
        let te = tape.relu(te);
        let t_emb = self.dense(tape, self.layout.emb2, te)?;

        let h0 = match self.layout.cond {
            Some(layer) => {
                let hc = self.dense(tape, layer, cond)?;
                tape.concat(x, hc)?
            }
            None => x,
        };
        let h1 = self.dense(tape, self.layout.input, h0)?;
        let h2 = self.block(tape, self.layout.enc2, h1, t_emb, rows)?;
        let h3 = self.block(tape, self.layout.enc3, h2, t_emb, rows)?;
        let h4 = self.dense(tape, self.layout.bottom, h3)?;
        let h4 = tape.relu(h4);
        let s5 = tape.concat(h4, h3)?;
        let h5 = self.block(tape, self.layout.dec5, s5, t_emb, rows)?;
        let s6 = tape.concat(h5, h2)?;
        let h6 = self.block(tape, self.layout.dec6, s6, t_emb, rows)?;
        self.dense(tape, self.layout.output, h6)
    }

    /// Evaluates the network without keeping the graph.
    pub fn forward_values(&self, x: &Tensor2, cond: &Tensor2, t: &[usize]) -> Result<Tensor2> {
        let mut tape = Tape::new();
        let xv = tape.constant_ref(x);
        let cv = tape.constant_ref(cond);
        let out = self.forward(&mut tape, xv, cv, t)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> NetDims {
        NetDims {
            input: 3,
            cond: 4,
            output: 3,
            hidden: [4, 6, 8],
            time_embed: 4,
        }
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = DiffusionNet::zeros(dims()).unwrap();
        let out = net
            .forward_values(&random_input(5, 3, 1), &random_input(5, 4, 2), &[7])
            .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_follows_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DiffusionNet::new(dims(), &mut rng).unwrap();
        let out = net
            .forward_values(&random_input(3, 3, 1), &random_input(3, 4, 2), &[1, 2, 3])
            .unwrap();
        assert_eq!(out.shape(), (3, 3));
    }

    #[test]
    fn condition_width_is_half_input_rounded_up() {
        let d = NetDims { input: 5, ..dims() };
        assert_eq!(d.cond_hidden(), 3);
        let d = NetDims { input: 1, ..dims() };
        assert_eq!(d.cond_hidden(), 1);
        let d = NetDims { cond: 0, ..dims() };
        assert_eq!(d.cond_hidden(), 0);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let net = DiffusionNet::zeros(dims()).unwrap();
        let err = net
            .forward_values(&random_input(2, 2, 1), &random_input(2, 4, 2), &[1])
            .unwrap_err();
        assert!(err.to_string().contains("input_layer"), "{err}");
        let err = net
            .forward_values(&random_input(2, 3, 1), &random_input(2, 5, 2), &[1])
            .unwrap_err();
        assert!(err.to_string().contains("condition_layer"), "{err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            DiffusionNet::new(dims(), &mut rng).unwrap()
        };
        let (a, b) = (make(), make());
        let x = random_input(4, 3, 5);
        let c = random_input(4, 4, 6);
        let ya = a.forward_values(&x, &c, &[9]).unwrap();
        let yb = b.forward_values(&x, &c, &[9]).unwrap();
        assert_eq!(ya.data(), yb.data());
    }

    #[test]
    fn shared_and_per_row_timesteps_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DiffusionNet::new(dims(), &mut rng).unwrap();
        let x = random_input(3, 3, 5);
        let c = random_input(3, 4, 6);
        let shared = net.forward_values(&x, &c, &[12]).unwrap();
        let rows = net.forward_values(&x, &c, &[12, 12, 12]).unwrap();
        assert!(shared.max_abs_diff(&rows) < 1e-12);
    }

    #[test]
    fn unconditioned_net_has_no_condition_layer() {
        let d = NetDims { cond: 0, ..dims() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DiffusionNet::new(d, &mut rng).unwrap();
        assert!(net
            .params()
            .iter()
            .all(|p| !p.name.starts_with("condition")));
        let out = net
            .forward_values(&random_input(2, 3, 1), &Tensor2::zeros(2, 0), &[3])
            .unwrap();
        assert_eq!(out.shape(), (2, 3));
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let net = DiffusionNet::zeros(dims()).unwrap();
        let mut params = net.params().to_vec();
        params[0].value = Tensor2::zeros(1, 1);
        assert!(DiffusionNet::from_params(dims(), params).is_err());
    }
}
