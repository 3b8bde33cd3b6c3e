//! Synthetic generative prior: a fixed-weight feed-forward decoder
//! `G : B_2^k(r) -> R^p` with an exact forward pass, reverse-mode
//! vector-Jacobian product and a Lipschitz upper bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, gaussian_vec, Matrix};
use crate::seed::rng_from;

/// Fraction of the latent radius used when drawing ground-truth latents.
pub const LATENT_INSET: f64 = 0.9;

const LIPSCHITZ_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, t: f64) -> f64 {
        match self {
            Activation::Tanh => t.tanh(),
            Activation::Relu => t.max(0.0),
            Activation::Identity => t,
        }
    }

    /// Derivative expressed through the pre-activation value. ReLU uses 0 at 0.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// How the weights of a serialized decoder are regenerated from its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderFamily {
    /// i.i.d. `N(0, (weight_scale)^2 / fan_in)` weights, zero biases.
    #[default]
    Gaussian,
    /// Single linear layer with orthonormal columns (Gram-Schmidt of a
    /// Gaussian draw). Its range projection has a closed form.
    OrthonormalLinear,
    /// `G(z) = z`; requires `k == p`.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// JSON form of a decoder. Weights are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub k: usize,
    pub p: usize,
    pub r: f64,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
    /// Full width chain `[k, hidden..., p]`.
    pub layer_dims: Vec<usize>,
    #[serde(default = "default_weight_scale")]
    pub weight_scale: f64,
    #[serde(default)]
    pub family: DecoderFamily,
}

fn default_weight_scale() -> f64 {
    1.0
}

impl DecoderSpec {
    pub fn build(&self) -> Result<GenerativeDecoder> {
        if self.layer_dims.len() < 2 {
            return Err(invalid("layer_dims must contain at least [k, p]"));
        }
        if self.layer_dims[0] != self.k || *self.layer_dims.last().unwrap() != self.p {
            return Err(invalid("layer_dims must start with k and end with p"));
        }
        match self.family {
            DecoderFamily::Gaussian => GenerativeDecoder::new(
                self.seed,
                self.k,
                &self.layer_dims[1..self.layer_dims.len() - 1],
                self.p,
                self.r,
                self.activation,
                self.weight_scale,
            ),
            DecoderFamily::OrthonormalLinear => {
                if self.layer_dims.len() != 2 {
                    return Err(invalid("orthonormal_linear decoders have no hidden layers"));
                }
                GenerativeDecoder::orthonormal_linear(self.seed, self.k, self.p, self.r)
            }
            DecoderFamily::Identity => {
                if self.layer_dims.len() != 2 || self.k != self.p {
                    return Err(invalid("identity decoders need layer_dims [k, k]"));
                }
                GenerativeDecoder::identity(self.k, self.r)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerativeDecoder {
    k: usize,
    p: usize,
    radius: f64,
    layers: Vec<Layer>,
    activation: Activation,
    lipschitz: f64,
    seed: u64,
    weight_scale: f64,
    family: Option<DecoderFamily>,
}

/// Output of [`GenerativeDecoder::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub output: Vec<f64>,
    pub out_of_ball: bool,
}

/// Activations recorded during a forward pass, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    // post-activation values per layer, starting with the input z
    values: Vec<Vec<f64>>,
    // pre-activation values per layer
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("tape holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }
}

impl GenerativeDecoder {
    /// Random decoder with i.i.d. Gaussian weights of standard deviation
    /// `weight_scale / sqrt(fan_in)` and zero biases.
    pub fn new(
        seed: u64,
        k: usize,
        hidden_dims: &[usize],
        p: usize,
        r: f64,
        activation: Activation,
        weight_scale: f64,
    ) -> Result<Self> {
        if k == 0 || p == 0 || hidden_dims.contains(&0) {
            return Err(invalid("decoder dimensions must be positive"));
        }
        if p < k {
            return Err(invalid(format!(
                "ambient dim p={p} must be >= latent dim k={k}"
            )));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid("latent radius must be positive"));
        }
        if !(weight_scale > 0.0 && weight_scale.is_finite()) {
            return Err(invalid("weight_scale must be positive"));
        }
        let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
        dims.push(k);
        dims.extend_from_slice(hidden_dims);
        dims.push(p);

        let mut rng = rng_from(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let std = weight_scale / (d_in as f64).sqrt();
                let data = gaussian_vec(&mut rng, d_in * d_out)
                    .into_iter()
                    .map(|v| v * std)
                    .collect();
                Layer {
                    weights: Matrix::from_row_major(d_out, d_in, data),
                    bias: vec![0.0; d_out],
                }
            })
            .collect();
        let mut dec = Self::from_layers(layers, activation, r)?;
        dec.seed = seed;
        dec.weight_scale = weight_scale;
        dec.family = Some(DecoderFamily::Gaussian);
        Ok(dec)
    }

    /// `G(z) = W z` where `W` (p x k) has orthonormal columns.
    pub fn orthonormal_linear(seed: u64, k: usize, p: usize, r: f64) -> Result<Self> {
        if k == 0 || p < k {
            return Err(invalid("orthonormal decoder needs 1 <= k <= p"));
        }
        let mut rng = rng_from(seed);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
        while cols.len() < k {
            let mut v = gaussian_vec(&mut rng, p);
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for c in &cols {
                    let proj = linalg::dot(&v, c);
                    linalg::axpy(-proj, c, &mut v);
                }
            }
            let nv = linalg::norm(&v);
            if nv > 1e-8 {
                v.iter_mut().for_each(|x| *x /= nv);
                cols.push(v);
            }
        }
        let mut w = Matrix::zeros(p, k);
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                w[(i, j)] = v;
            }
        }
        let layer = Layer {
            weights: w,
            bias: vec![0.0; p],
        };
        let mut dec = Self::from_layers(vec![layer], Activation::Identity, r)?;
        dec.seed = seed;
        dec.family = Some(DecoderFamily::OrthonormalLinear);
        Ok(dec)
    }

    pub fn identity(k: usize, r: f64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("decoder dimensions must be positive"));
        }
        let layer = Layer {
            weights: Matrix::identity(k),
            bias: vec![0.0; k],
        };
        let mut dec = Self::from_layers(vec![layer], Activation::Identity, r)?;
        dec.family = Some(DecoderFamily::Identity);
        Ok(dec)
    }

    /// Decoder from explicit layers. Such decoders cannot be serialized.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation, r: f64) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| invalid("decoder needs at least one layer"))?;
        let k = first.weights.cols();
        for l in &layers {
            if l.bias.len() != l.weights.rows() {
                return Err(invalid("bias length must equal layer output dim"));
            }
        }
        for w in layers.windows(2) {
            if w[0].weights.rows() != w[1].weights.cols() {
                return Err(invalid("adjacent layer dimensions do not compose"));
            }
        }
        let p = layers.last().unwrap().weights.rows();
        if k == 0 || p == 0 {
            return Err(invalid("decoder dimensions must be positive"));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid("latent radius must be positive"));
        }
        let lipschitz = layers
            .iter()
            .map(|l| l.weights.spectral_norm(LIPSCHITZ_TOL))
            .product();
        Ok(Self {
            k,
            p,
            radius: r,
            layers,
            activation,
            lipschitz,
            seed: 0,
            weight_scale: 1.0,
            family: None,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.k
    }

    pub fn ambient_dim(&self) -> usize {
        self.p
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Cached product of per-layer spectral norms.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.k];
        dims.extend(self.layers.iter().map(|l| l.weights.rows()));
        dims
    }

    /// True for a single identity-activation layer with zero bias whose
    /// columns are orthonormal (to 1e-10).
    pub fn is_linear_orthonormal(&self) -> bool {
        if self.layers.len() != 1 || self.activation != Activation::Identity {
            return false;
        }
        let l = &self.layers[0];
        if l.bias.iter().any(|&b| b != 0.0) {
            return false;
        }
        let w = &l.weights;
        let (p, k) = (w.rows(), w.cols());
        for a in 0..k {
            for b in a..k {
                let g: f64 = (0..p).map(|i| w[(i, a)] * w[(i, b)]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (g - want).abs() > 1e-10 {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_spec(&self) -> Result<DecoderSpec> {
        let family = self.family.ok_or_else(|| {
            Error::Unsupported("decoder built from explicit layers has no seed form".into())
        })?;
        Ok(DecoderSpec {
            k: self.k,
            p: self.p,
            r: self.radius,
            activation: self.activation,
            seed: self.seed,
            layer_dims: self.layer_dims(),
            weight_scale: self.weight_scale,
            family,
        })
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(z)?.output)
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<Evaluation> {
        check_len("latent vector", z.len(), self.k)?;
        let out_of_ball = linalg::norm(z) > self.radius;
        Ok(Evaluation {
            output: self.forward_unchecked(z),
            out_of_ball,
        })
    }

    pub(crate) fn forward_unchecked(&self, z: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = z.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.weights.matvec(&h);
            linalg::axpy(1.0, &layer.bias, &mut next);
            if i != last {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            h = next;
        }
        h
    }

    /// Forward pass that keeps the intermediate values for [`Self::backward`].
    pub fn record(&self, z: &[f64]) -> Result<Tape> {
        check_len("latent vector", z.len(), self.k)?;
        Ok(self.record_unchecked(z))
    }

    pub(crate) fn record_unchecked(&self, z: &[f64]) -> Tape {
        let last = self.layers.len() - 1;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        values.push(z.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = layer.weights.matvec(values.last().unwrap());
            linalg::axpy(1.0, &layer.bias, &mut a);
            let h = if i != last {
                a.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                a.clone()
            };
            pre.push(a);
            values.push(h);
        }
        Tape { values, pre }
    }

    /// Reverse accumulation of `∇_z <G(z), v>` through a recorded tape.
    pub fn backward(&self, tape: &Tape, v: &[f64]) -> Result<Vec<f64>> {
        check_len("ambient vector", v.len(), self.p)?;
        Ok(self.backward_unchecked(tape, v))
    }

    pub(crate) fn backward_unchecked(&self, tape: &Tape, v: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut grad = v.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i != last {
                let pre = &tape.pre[i];
                let post = &tape.values[i + 1];
                for ((g, &a), &h) in grad.iter_mut().zip(pre).zip(post) {
                    *g *= self.activation.derivative(a, h);
                }
            }
            grad = layer.weights.t_matvec(&grad);
        }
        grad
    }

    /// `∇_z <G(z), v>`.
    pub fn vjp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let tape = self.record(z)?;
        self.backward(&tape, v)
    }

    /// Uniform draw from the ball of radius `LATENT_INSET * r`.
    pub fn sample_latent(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed);
        sample_in_ball(&mut rng, self.k, LATENT_INSET * self.radius)
    }
}

pub(crate) fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, k: usize, radius: f64) -> Vec<f64> {
    let mut dir = gaussian_vec(rng, k);
    let mut nd = linalg::norm(&dir);
    while nd == 0.0 {
        dir = gaussian_vec(rng, k);
        nd = linalg::norm(&dir);
    }
    let u: f64 = rng.random();
    let rad = radius * u.powf(1.0 / k as f64);
    dir.iter().map(|v| v * rad / nd).collect()
}
