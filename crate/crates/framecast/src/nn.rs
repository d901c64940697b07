//! Layer library on top of the autodiff tape: parameter sets, linear layers,
//! MLPs, batch normalization, and LSTM/GRU cells.
//!
//! Layers own only their names and dimensions; the tensors live in a
//! [`ParamSet`]. A forward pass binds parameters into the graph as named
//! leaves, so gradients come back keyed by the same names the checkpoint
//! manifest uses.

use indexmap::IndexMap;
use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tape::{Graph, TapeError, TapeResult, Var};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
}

/// One named tensor in a parameter set.
#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub tensor: Tensor<T>,
    /// Buffers such as batch-norm running statistics are not trainable but
    /// still persist in checkpoints.
    pub trainable: bool,
}

/// Ordered, named parameter storage. Insertion order defines the checkpoint
/// manifest order, so it must be deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) {
        assert!(
            !self.entries.contains_key(name),
            "parameter `{name}` registered twice"
        );
        self.entries
            .insert(name.to_string(), ParamEntry { tensor, trainable });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ParamError> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<(), ParamError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))?;
        if entry.tensor.shape() != tensor.shape() {
            return Err(ParamError::ShapeMismatch {
                name: name.to_string(),
                got: tensor.shape().to_vec(),
                expected: entry.tensor.shape().to_vec(),
            });
        }
        entry.tensor = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }
}

/// Forward-pass context: the graph being built, the parameters to bind, the
/// train/inference mode, and running-stat updates collected along the way.
pub struct FwdCtx<'a, T: Scalar> {
    pub g: &'a mut Graph<T>,
    pub ps: &'a ParamSet<T>,
    pub training: bool,
    /// `(running-stat parameter name, blended new value)` pairs; the training
    /// loop applies them after the step in collection order.
    pub stat_updates: Vec<(String, Tensor<T>)>,
}

impl<'a, T: Scalar> FwdCtx<'a, T> {
    pub fn new(g: &'a mut Graph<T>, ps: &'a ParamSet<T>, training: bool) -> Self {
        Self {
            g,
            ps,
            training,
            stat_updates: Vec::new(),
        }
    }

    /// Binds a named parameter into the graph.
    pub fn param(&mut self, name: &str) -> TapeResult<Var> {
        let t = self
            .ps
            .get(name)
            .unwrap_or_else(|e| panic!("forward pass referenced missing parameter: {e}"));
        self.g.leaf(name, t)
    }
}

/// Samples a tensor with entries uniform in `±bound`.
///
/// Values are drawn as `f64` and converted, so the stream is identical for
/// every scalar type.
pub fn uniform_tensor<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::lit(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape by construction")
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Pointwise nonlinearity choices used by the layer specs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Elu => g.elu(x),
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

/// Affine layer `x @ W + b` (bias optional).
#[derive(Clone, Debug)]
pub struct Linear {
    name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    bias: bool,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let bound = fan_in_bound(in_dim);
        ps.insert(
            &format!("{name}.w"),
            uniform_tensor(rng, &[in_dim, out_dim], bound),
            true,
        );
        if bias {
            ps.insert(
                &format!("{name}.b"),
                uniform_tensor(rng, &[out_dim], bound),
                true,
            );
        }
        Self {
            name: name.to_string(),
            in_dim,
            out_dim,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut FwdCtx<T>, x: Var) -> TapeResult<Var> {
        let w = ctx.param(&format!("{}.w", self.name))?;
        let y = ctx.g.matmul(x, w)?;
        if self.bias {
            let b = ctx.param(&format!("{}.b", self.name))?;
            ctx.g.add_bias(y, b)
        } else {
            Ok(y)
        }
    }
}

/// Batch normalization over rows with fixed `eps = 1e-5`, momentum `0.1`.
///
/// Training mode normalizes by batch statistics and records running-stat
/// updates on the context; inference mode is a frozen per-channel affine map.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    name: String,
    pub dim: usize,
    eps: f64,
    momentum: f64,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        ps.insert(&format!("{name}.gamma"), Tensor::ones(&[dim]), true);
        ps.insert(&format!("{name}.beta"), Tensor::zeros(&[dim]), true);
        ps.insert(
            &format!("{name}.running_mean"),
            Tensor::zeros(&[dim]),
            false,
        );
        ps.insert(&format!("{name}.running_var"), Tensor::ones(&[dim]), false);
        Self {
            name: name.to_string(),
            dim,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut FwdCtx<T>, x: Var) -> TapeResult<Var> {
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        if ctx.training {
            let (y, stats) = ctx.g.batch_norm_train(x, gamma, beta, T::lit(self.eps))?;
            let m = T::lit(self.momentum);
            let keep = T::one() - m;
            let rm_name = format!("{}.running_mean", self.name);
            let rv_name = format!("{}.running_var", self.name);
            let old_mean = ctx.ps.get(&rm_name).expect("registered at init");
            let old_var = ctx.ps.get(&rv_name).expect("registered at init");
            let new_mean = old_mean
                .scale(keep)
                .add(&stats.mean.scale(m))
                .expect("stat shapes fixed at init");
            let new_var = old_var
                .scale(keep)
                .add(&stats.var.scale(m))
                .expect("stat shapes fixed at init");
            ctx.stat_updates.push((rm_name, new_mean));
            ctx.stat_updates.push((rv_name, new_var));
            Ok(y)
        } else {
            // Frozen affine map: y = x*s + (beta - mean*s), s = gamma/sqrt(var+eps).
            let rm = ctx
                .ps
                .get(&format!("{}.running_mean", self.name))
                .expect("registered at init")
                .clone();
            let rv = ctx
                .ps
                .get(&format!("{}.running_var", self.name))
                .expect("registered at init")
                .clone();
            let inv_std = rv.map(|v| T::one() / (v + T::lit(self.eps)).sqrt());
            let inv = ctx.g.constant(inv_std);
            let mean = ctx.g.constant(rm);
            let s = ctx.g.mul(gamma, inv)?;
            let ms = ctx.g.mul(mean, s)?;
            let shift = ctx.g.sub(beta, ms)?;
            let scaled = ctx.g.mul_bias(x, s)?;
            ctx.g.add_bias(scaled, shift)
        }
    }
}

/// One layer of an MLP description: output width plus the activation applied
/// after the layer.
#[derive(Clone, Copy, Debug)]
pub struct MlpLayerSpec {
    pub out_dim: usize,
    pub activation: Activation,
}

impl MlpLayerSpec {
    pub fn new(out_dim: usize, activation: Activation) -> Self {
        Self {
            out_dim,
            activation,
        }
    }
}

/// Multi-layer perceptron with per-layer activations and an optional
/// trailing batch norm.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    activations: Vec<Activation>,
    batch_norm: Option<BatchNorm>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        layers: &[MlpLayerSpec],
        trailing_batch_norm: bool,
    ) -> Self {
        assert!(!layers.is_empty(), "MLP needs at least one layer");
        let mut linear = Vec::with_capacity(layers.len());
        let mut activations = Vec::with_capacity(layers.len());
        let mut cur = in_dim;
        for (i, spec) in layers.iter().enumerate() {
            linear.push(Linear::new(
                ps,
                rng,
                &format!("{name}.l{i}"),
                cur,
                spec.out_dim,
                true,
            ));
            activations.push(spec.activation);
            cur = spec.out_dim;
        }
        let batch_norm =
            trailing_batch_norm.then(|| BatchNorm::new(ps, &format!("{name}.bn"), cur));
        Self {
            layers: linear,
            activations,
            batch_norm,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut FwdCtx<T>, x: Var) -> TapeResult<Var> {
        let mut h = x;
        for (layer, act) in self.layers.iter().zip(self.activations.iter()) {
            h = layer.forward(ctx, h)?;
            h = act.apply(ctx.g, h);
        }
        if let Some(bn) = &self.batch_norm {
            h = bn.forward(ctx, h)?;
        }
        Ok(h)
    }
}

/// LSTM cell with the standard input/forget/cell/output gate equations.
#[derive(Clone, Debug)]
pub struct LstmCell {
    name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        ps.insert(
            &format!("{name}.w_ih"),
            uniform_tensor(rng, &[in_dim, 4 * hidden], fan_in_bound(in_dim)),
            true,
        );
        ps.insert(
            &format!("{name}.w_hh"),
            uniform_tensor(rng, &[hidden, 4 * hidden], fan_in_bound(hidden)),
            true,
        );
        ps.insert(
            &format!("{name}.b"),
            uniform_tensor(rng, &[4 * hidden], fan_in_bound(hidden)),
            true,
        );
        Self {
            name: name.to_string(),
            in_dim,
            hidden,
        }
    }

    pub fn zero_state<T: Scalar>(&self, rows: usize) -> (Tensor<T>, Tensor<T>) {
        (
            Tensor::zeros(&[rows, self.hidden]),
            Tensor::zeros(&[rows, self.hidden]),
        )
    }

    /// One step: gate order is input, forget, cell candidate, output.
    pub fn step<T: Scalar>(
        &self,
        ctx: &mut FwdCtx<T>,
        x: Var,
        h: Var,
        c: Var,
    ) -> TapeResult<(Var, Var)> {
        let w_ih = ctx.param(&format!("{}.w_ih", self.name))?;
        let w_hh = ctx.param(&format!("{}.w_hh", self.name))?;
        let b = ctx.param(&format!("{}.b", self.name))?;
        let gx = ctx.g.matmul(x, w_ih)?;
        let gh = ctx.g.matmul(h, w_hh)?;
        let pre = ctx.g.add(gx, gh)?;
        let pre = ctx.g.add_bias(pre, b)?;
        let hd = self.hidden;
        let i_pre = ctx.g.slice_cols(pre, 0, hd)?;
        let f_pre = ctx.g.slice_cols(pre, hd, hd)?;
        let g_pre = ctx.g.slice_cols(pre, 2 * hd, hd)?;
        let o_pre = ctx.g.slice_cols(pre, 3 * hd, hd)?;
        let i = ctx.g.sigmoid(i_pre);
        let f = ctx.g.sigmoid(f_pre);
        let gc = ctx.g.tanh(g_pre);
        let o = ctx.g.sigmoid(o_pre);
        let fc = ctx.g.mul(f, c)?;
        let ig = ctx.g.mul(i, gc)?;
        let c_new = ctx.g.add(fc, ig)?;
        let ct = ctx.g.tanh(c_new);
        let h_new = ctx.g.mul(o, ct)?;
        Ok((h_new, c_new))
    }
}

/// GRU cell with reset/update/candidate gates (separate hidden-side bias, so
/// the reset gate scales the hidden contribution including its bias).
#[derive(Clone, Debug)]
pub struct GruCell {
    name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        ps.insert(
            &format!("{name}.w_ih"),
            uniform_tensor(rng, &[in_dim, 3 * hidden], fan_in_bound(in_dim)),
            true,
        );
        ps.insert(
            &format!("{name}.w_hh"),
            uniform_tensor(rng, &[hidden, 3 * hidden], fan_in_bound(hidden)),
            true,
        );
        ps.insert(
            &format!("{name}.b_ih"),
            uniform_tensor(rng, &[3 * hidden], fan_in_bound(hidden)),
            true,
        );
        ps.insert(
            &format!("{name}.b_hh"),
            uniform_tensor(rng, &[3 * hidden], fan_in_bound(hidden)),
            true,
        );
        Self {
            name: name.to_string(),
            in_dim,
            hidden,
        }
    }

    pub fn zero_state<T: Scalar>(&self, rows: usize) -> Tensor<T> {
        Tensor::zeros(&[rows, self.hidden])
    }

    /// One step: gate order is reset, update, candidate.
    pub fn step<T: Scalar>(&self, ctx: &mut FwdCtx<T>, x: Var, h: Var) -> TapeResult<Var> {
        let w_ih = ctx.param(&format!("{}.w_ih", self.name))?;
        let w_hh = ctx.param(&format!("{}.w_hh", self.name))?;
        let b_ih = ctx.param(&format!("{}.b_ih", self.name))?;
        let b_hh = ctx.param(&format!("{}.b_hh", self.name))?;
        let gx = ctx.g.matmul(x, w_ih)?;
        let gx = ctx.g.add_bias(gx, b_ih)?;
        let gh = ctx.g.matmul(h, w_hh)?;
        let gh = ctx.g.add_bias(gh, b_hh)?;
        let hd = self.hidden;
        let r_pre = {
            let a = ctx.g.slice_cols(gx, 0, hd)?;
            let b = ctx.g.slice_cols(gh, 0, hd)?;
            ctx.g.add(a, b)?
        };
        let z_pre = {
            let a = ctx.g.slice_cols(gx, hd, hd)?;
            let b = ctx.g.slice_cols(gh, hd, hd)?;
            ctx.g.add(a, b)?
        };
        let r = ctx.g.sigmoid(r_pre);
        let z = ctx.g.sigmoid(z_pre);
        let n_pre = {
            let a = ctx.g.slice_cols(gx, 2 * hd, hd)?;
            let b = ctx.g.slice_cols(gh, 2 * hd, hd)?;
            let rb = ctx.g.mul(r, b)?;
            ctx.g.add(a, rb)?
        };
        let n = ctx.g.tanh(n_pre);
        // h' = (1 - z)⊙n + z⊙h = n + z⊙(h - n)
        let hn = ctx.g.sub(h, n)?;
        let zhn = ctx.g.mul(z, hn)?;
        ctx.g.add(n, zhn)
    }
}

/// Validates that `x` is rank-2 with the expected feature width.
pub fn expect_cols<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    cols: usize,
    what: &'static str,
) -> TapeResult<()> {
    let got = g.value(x).shape().to_vec();
    if got.len() != 2 || got[1] != cols {
        return Err(TapeError::Tensor(crate::tensor::TensorError::BadRank {
            op: what,
            expected: "rank-2 input with matching feature width",
            got,
        }));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_zero_weights_relu_gives_zero() {
        let mut g = Graph::<f64>::new();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(
            &mut ps,
            &mut rng,
            "m",
            3,
            &[MlpLayerSpec::new(4, Activation::Relu)],
            false,
        );
        ps.set("m.l0.w", Tensor::zeros(&[3, 4])).unwrap();
        ps.set("m.l0.b", Tensor::zeros(&[4])).unwrap();
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        let x = ctx
            .g
            .constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap());
        let y = mlp.forward(&mut ctx, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 8]);
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut g = Graph::<f64>::new();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(
            &mut ps,
            &mut rng,
            "id",
            2,
            &[MlpLayerSpec::new(2, Activation::Identity)],
            false,
        );
        ps.set(
            "id.l0.w",
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        ps.set("id.l0.b", Tensor::zeros(&[2])).unwrap();
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        let input = Tensor::new(vec![3, 2], vec![0.1, -0.7, 2.5, 1.0, -3.0, 0.0]).unwrap();
        let x = ctx.g.constant(input.clone());
        let y = mlp.forward(&mut ctx, x).unwrap();
        assert_eq!(g.value(y).data(), input.data());
    }

    #[test]
    fn two_layer_mlp_matches_hand_matrix_arithmetic() {
        let mut g = Graph::<f64>::new();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(
            &mut ps,
            &mut rng,
            "m",
            2,
            &[
                MlpLayerSpec::new(3, Activation::Tanh),
                MlpLayerSpec::new(2, Activation::Identity),
            ],
            false,
        );
        let x_in = [0.3, -1.2];
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        let x = ctx
            .g
            .constant(Tensor::new(vec![1, 2], x_in.to_vec()).unwrap());
        let y = mlp.forward(&mut ctx, x).unwrap();

        // Hand-rolled matrix arithmetic on the same seed-0 parameters.
        let w0 = ps.get("m.l0.w").unwrap();
        let b0 = ps.get("m.l0.b").unwrap();
        let w1 = ps.get("m.l1.w").unwrap();
        let b1 = ps.get("m.l1.b").unwrap();
        let mut h = [0.0f64; 3];
        for j in 0..3 {
            let mut acc = b0.data()[j];
            for i in 0..2 {
                acc += x_in[i] * w0.data()[i * 3 + j];
            }
            h[j] = acc.tanh();
        }
        let mut out = [0.0f64; 2];
        for j in 0..2 {
            let mut acc = b1.data()[j];
            for i in 0..3 {
                acc += h[i] * w1.data()[i * 2 + j];
            }
            out[j] = acc;
        }
        for (a, b) in g.value(y).data().iter().zip(out.iter()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn lstm_and_gru_zero_everything_give_zero_output() {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = LstmCell::new(&mut ps, &mut rng, "lstm", 3, 4);
        let gru = GruCell::new(&mut ps, &mut rng, "gru", 3, 4);
        for name in ["lstm.w_ih", "lstm.w_hh", "gru.w_ih", "gru.w_hh"] {
            let shape = ps.get(name).unwrap().shape().to_vec();
            ps.set(name, Tensor::zeros(&shape)).unwrap();
        }
        for name in ["lstm.b", "gru.b_ih", "gru.b_hh"] {
            let shape = ps.get(name).unwrap().shape().to_vec();
            ps.set(name, Tensor::zeros(&shape)).unwrap();
        }
        let mut g = Graph::new();
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        let x = ctx
            .g
            .constant(Tensor::new(vec![1, 3], vec![0.2, -0.4, 1.0]).unwrap());
        let (h0, c0) = lstm.zero_state::<f64>(1);
        let h = ctx.g.constant(h0);
        let c = ctx.g.constant(c0);
        let (h1, _c1) = lstm.step(&mut ctx, x, h, c).unwrap();
        // Gates at zero pre-activations: i=f=o=0.5, g=0 → c'=0, h'=0.
        assert_eq!(g.value(h1).data(), &[0.0; 4]);

        let mut g2 = Graph::new();
        let mut ctx = FwdCtx::new(&mut g2, &ps, false);
        let x = ctx
            .g
            .constant(Tensor::new(vec![1, 3], vec![0.2, -0.4, 1.0]).unwrap());
        let h = ctx.g.constant(gru.zero_state::<f64>(1));
        let h1 = gru.step(&mut ctx, x, h).unwrap();
        // r=z=0.5, n=tanh(0)=0 → h' = 0.5·0 + 0.5·0 = 0.
        assert_eq!(g2.value(h1).data(), &[0.0; 4]);
    }

    #[test]
    fn lstm_large_forget_bias_preserves_cell_state() {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = LstmCell::new(&mut ps, &mut rng, "lstm", 2, 3);
        // Saturate the forget gate and shut the input gate.
        let mut b = vec![0.0f64; 12];
        for j in 0..3 {
            b[j] = -50.0;
            b[3 + j] = 50.0;
        }
        ps.set("lstm.b", Tensor::from_vec(b)).unwrap();
        ps.set("lstm.w_ih", Tensor::zeros(&[2, 12])).unwrap();
        ps.set("lstm.w_hh", Tensor::zeros(&[3, 12])).unwrap();
        let c_init = Tensor::new(vec![1, 3], vec![0.7, -0.2, 1.5]).unwrap();
        let mut g = Graph::new();
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        let x = ctx
            .g
            .constant(Tensor::new(vec![1, 2], vec![0.3, 0.9]).unwrap());
        let h = ctx.g.constant(Tensor::zeros(&[1, 3]));
        let c = ctx.g.constant(c_init.clone());
        let (_h1, c1) = lstm.step(&mut ctx, x, h, c).unwrap();
        for (a, b) in g.value(c1).data().iter().zip(c_init.data().iter()) {
            assert!((a - b).abs() < 1e-12, "cell state drifted: {a} vs {b}");
        }
    }

    #[test]
    fn lstm_gru_match_direct_gate_formula_oracle() {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = LstmCell::new(&mut ps, &mut rng, "lstm", 2, 2);
        let gru = GruCell::new(&mut ps, &mut rng, "gru", 2, 2);

        let x_in = [0.5, -0.3];
        let h_in = [0.1, 0.2];
        let c_in = [-0.4, 0.6];

        let mut g = Graph::new();
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        let x = ctx
            .g
            .constant(Tensor::new(vec![1, 2], x_in.to_vec()).unwrap());
        let h = ctx
            .g
            .constant(Tensor::new(vec![1, 2], h_in.to_vec()).unwrap());
        let c = ctx
            .g
            .constant(Tensor::new(vec![1, 2], c_in.to_vec()).unwrap());
        let (h1, c1) = lstm.step(&mut ctx, x, h, c).unwrap();
        let h1g = gru.step(&mut ctx, x, h).unwrap();

        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let dot = |w: &Tensor<f64>, x: &[f64], col: usize, width: usize| -> f64 {
            (0..x.len()).map(|i| x[i] * w.data()[i * width + col]).sum()
        };

        // LSTM oracle: gate columns in (i, f, g, o) order.
        let w_ih = ps.get("lstm.w_ih").unwrap();
        let w_hh = ps.get("lstm.w_hh").unwrap();
        let b = ps.get("lstm.b").unwrap();
        for j in 0..2 {
            let pre = |k: usize| -> f64 {
                dot(w_ih, &x_in, k * 2 + j, 8)
                    + dot(w_hh, &h_in, k * 2 + j, 8)
                    + b.data()[k * 2 + j]
            };
            let i = sigmoid(pre(0));
            let f = sigmoid(pre(1));
            let gc = pre(2).tanh();
            let o = sigmoid(pre(3));
            let c_new = f * c_in[j] + i * gc;
            let h_new = o * c_new.tanh();
            assert!((g.value(c1).data()[j] - c_new).abs() < 1e-12);
            assert!((g.value(h1).data()[j] - h_new).abs() < 1e-12);
        }

        // GRU oracle: gate columns in (r, z, n) order with separate biases.
        let w_ih = ps.get("gru.w_ih").unwrap();
        let w_hh = ps.get("gru.w_hh").unwrap();
        let b_ih = ps.get("gru.b_ih").unwrap();
        let b_hh = ps.get("gru.b_hh").unwrap();
        for j in 0..2 {
            let gxk = |k: usize| dot(w_ih, &x_in, k * 2 + j, 6) + b_ih.data()[k * 2 + j];
            let ghk = |k: usize| dot(w_hh, &h_in, k * 2 + j, 6) + b_hh.data()[k * 2 + j];
            let r = sigmoid(gxk(0) + ghk(0));
            let z = sigmoid(gxk(1) + ghk(1));
            let n = (gxk(2) + r * ghk(2)).tanh();
            let h_new = (1.0 - z) * n + z * h_in[j];
            assert!((g.value(h1g).data()[j] - h_new).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_step_output_norm_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::<f64>::new();
        let gru = GruCell::new(&mut ps, &mut rng, "gru", 3, 3);
        let point = uniform_tensor::<f64, _>(&mut rng, &[2, 3], 1.0);
        let err = gradient_check(
            |g, x| {
                let mut ctx = FwdCtx::new(g, &ps, false);
                let h = ctx
                    .g
                    .constant(Tensor::new(vec![2, 3], vec![0.1; 6]).unwrap());
                let h1 = gru.step(&mut ctx, x, h)?;
                let sq = ctx.g.mul(h1, h1)?;
                Ok(ctx.g.sum_all(sq))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "error {err}");
    }

    #[test]
    fn batch_norm_inference_is_a_fixed_affine_map() {
        let mut ps = ParamSet::<f64>::new();
        let bn = BatchNorm::new(&mut ps, "bn", 2);
        ps.set("bn.gamma", Tensor::from_vec(vec![1.5, 0.5])).unwrap();
        ps.set("bn.beta", Tensor::from_vec(vec![-0.2, 0.8])).unwrap();
        ps.set("bn.running_mean", Tensor::from_vec(vec![0.3, -1.0]))
            .unwrap();
        ps.set("bn.running_var", Tensor::from_vec(vec![2.0, 0.7]))
            .unwrap();

        let input = Tensor::new(vec![3, 2], vec![0.5, 1.0, -2.0, 0.0, 4.0, -3.0]).unwrap();
        let mut g = Graph::new();
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        let x = ctx.g.constant(input.clone());
        let y1 = bn.forward(&mut ctx, x).unwrap();
        let y2 = bn.forward(&mut ctx, y1).unwrap();
        let twice = g.value(y2).clone();

        // Composing the affine maps by hand must agree exactly.
        let gamma = [1.5, 0.5];
        let beta = [-0.2, 0.8];
        let mean = [0.3, -1.0];
        let var = [2.0, 0.7];
        for c in 0..2 {
            // Mirror the layer's arithmetic exactly: γ·(1/√(v+ε)).
            let s = gamma[c] * (1.0 / (var[c] + BatchNorm::EPS).sqrt());
            let sh = beta[c] - mean[c] * s;
            for r in 0..3 {
                let one = input.data()[r * 2 + c] * s + sh;
                let two = one * s + sh;
                assert_eq!(twice.data()[r * 2 + c], two);
            }
        }

        // Training mode records two running-stat updates on the context.
        let mut g3 = Graph::new();
        let mut ctx = FwdCtx::new(&mut g3, &ps, true);
        let x = ctx.g.constant(input);
        bn.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.stat_updates.len(), 2);
    }

    #[test]
    fn batch_norm_training_rejects_single_row() {
        let mut ps = ParamSet::<f64>::new();
        let bn = BatchNorm::new(&mut ps, "bn", 2);
        let mut g = Graph::new();
        let mut ctx = FwdCtx::new(&mut g, &ps, true);
        let x = ctx
            .g
            .constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            bn.forward(&mut ctx, x),
            Err(TapeError::BatchTooSmall(1))
        ));
    }
}
