//! Approximate projection onto `K = G(B_2^k(r))` by first-order descent on
//! `½‖G(z) − x‖²` in latent space with restarts, plus the closed-form
//! projection for linear decoders with orthonormal columns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::genmodel::GenerativeDecoder;
use crate::linalg::{self, clip_to_ball, gaussian_vec};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Momentum {
        beta: f64,
    },
    AdamStyle {
        beta1: f64,
        beta2: f64,
        eps_adam: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::AdamStyle {
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    Zero,
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BallHandling {
    #[default]
    ProjectEachStep,
    ProjectAtEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    #[default]
    LatentDescent,
    /// Closed form; only valid for linear decoders with orthonormal columns.
    ExactLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub steps: usize,
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    pub restarts: usize,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub init: LatentInit,
    #[serde(default)]
    pub ball_handling: BallHandling,
    #[serde(default)]
    pub method: ProjectionMethod,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self::small_decoder()
    }
}

impl ProjectionConfig {
    /// Adam, 200 steps, learning rate 0.03, 5 restarts.
    pub fn small_decoder() -> Self {
        Self {
            steps: 200,
            learning_rate: 0.03,
            restarts: 5,
            optimizer: Optimizer::adam(),
            init: LatentInit::Gaussian,
            ball_handling: BallHandling::ProjectEachStep,
            method: ProjectionMethod::LatentDescent,
        }
    }

    /// Adam, 100 steps, learning rate 0.1, 2 restarts.
    pub fn large_decoder() -> Self {
        Self {
            steps: 100,
            learning_rate: 0.1,
            restarts: 2,
            ..Self::small_decoder()
        }
    }

    pub fn exact_linear() -> Self {
        Self {
            method: ProjectionMethod::ExactLinear,
            ..Self::small_decoder()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("projection steps must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("projection learning rate must be positive"));
        }
        if self.restarts == 0 {
            return Err(invalid("projection restarts must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub z_hat: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub residual: f64,
    pub restart_index: usize,
    pub out_of_ball_steps: usize,
}

/// `P_K(x)` per `cfg`. Equivalent to [`project_warm`] without a warm start.
pub fn project(
    decoder: &GenerativeDecoder,
    x: &[f64],
    cfg: &ProjectionConfig,
    seed: u64,
) -> Result<ProjectionResult> {
    project_warm(decoder, x, cfg, seed, None)
}

/// Projection with an optional warm start, which becomes restart 0.
/// Returns the restart with the smallest residual, lowest index on ties.
pub fn project_warm(
    decoder: &GenerativeDecoder,
    x: &[f64],
    cfg: &ProjectionConfig,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<ProjectionResult> {
    check_len("ambient vector", x.len(), decoder.ambient_dim())?;
    cfg.validate()?;
    if let Some(z0) = warm {
        check_len("warm start", z0.len(), decoder.latent_dim())?;
    }
    if cfg.method == ProjectionMethod::ExactLinear {
        return project_exact_linear(decoder, x);
    }
    let mut best: Option<ProjectionResult> = None;
    for restart in 0..cfg.restarts {
        let z0 = match (restart, warm) {
            (0, Some(z0)) => z0.to_vec(),
            _ => initial_latent(
                decoder,
                cfg.init,
                derive_seed(seed, "restart", restart as u64),
            ),
        };
        let mut res = descend(decoder, x, cfg, z0);
        res.restart_index = restart;
        if best.as_ref().is_none_or(|b| res.residual < b.residual) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub(crate) fn initial_latent(decoder: &GenerativeDecoder, init: LatentInit, seed: u64) -> Vec<f64> {
    match init {
        LatentInit::Zero => vec![0.0; decoder.latent_dim()],
        LatentInit::Gaussian => {
            let mut rng = rng_from(seed);
            let mut z = gaussian_vec(&mut rng, decoder.latent_dim());
            // keep the scale of a standard draw but stay feasible
            let jitter: f64 = rng.random_range(0.5..1.0);
            z.iter_mut().for_each(|v| *v *= jitter);
            clip_to_ball(&mut z, decoder.radius());
            z
        }
    }
}

// One descent from `z`. The best feasible point seen is returned, so the
// result is never worse than the (feasible) start.
fn descend(
    decoder: &GenerativeDecoder,
    x: &[f64],
    cfg: &ProjectionConfig,
    z: Vec<f64>,
) -> ProjectionResult {
    let run = minimize_latent(decoder, cfg, z, false, |x_hat| {
        let diff = linalg::sub(x_hat, x);
        (0.5 * linalg::dot(&diff, &diff), diff)
    });
    let x_hat = decoder.forward_unchecked(&run.z);
    let residual = linalg::dist(&x_hat, x);
    ProjectionResult {
        z_hat: run.z,
        x_hat,
        residual,
        restart_index: 0,
        out_of_ball_steps: run.out_of_ball_steps,
    }
}

pub(crate) struct LatentRun {
    pub z: Vec<f64>,
    pub loss: f64,
    pub out_of_ball_steps: usize,
    /// Objective at each evaluated step, when requested.
    pub history: Vec<f64>,
}

/// Minimizes `φ(G(z))` over the latent ball with the optimizer in `cfg`.
/// `objective` maps a decoder output to `(φ, ∇φ)`.
pub(crate) fn minimize_latent<F>(
    decoder: &GenerativeDecoder,
    cfg: &ProjectionConfig,
    mut z: Vec<f64>,
    keep_history: bool,
    objective: F,
) -> LatentRun
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let radius = decoder.radius();
    let each_step = cfg.ball_handling == BallHandling::ProjectEachStep;
    let mut out_of_ball_steps = 0;
    if clip_to_ball(&mut z, radius) {
        out_of_ball_steps += 1;
    }
    let k = z.len();
    let mut m = vec![0.0; k];
    let mut v = vec![0.0; k];
    let mut best_z = z.clone();
    let mut best = f64::INFINITY;
    let mut history = Vec::new();
    let (mut b1_pow, mut b2_pow) = (1.0, 1.0);

    for step in 0..=cfg.steps {
        let tape = decoder.record_unchecked(&z);
        let (value, out_grad) = objective(tape.output());
        if keep_history {
            history.push(value);
        }
        if (each_step || step == 0) && value < best {
            best = value;
            best_z.copy_from_slice(&z);
        }
        if step == cfg.steps {
            break;
        }
        let mut grad = decoder.backward_unchecked(&tape, &out_grad);
        if each_step {
            tangent_on_sphere(&z, radius, &mut grad);
        }
        match cfg.optimizer {
            Optimizer::GradientDescent => linalg::axpy(-cfg.learning_rate, &grad, &mut z),
            Optimizer::Momentum { beta } => {
                for ((mi, gi), zi) in m.iter_mut().zip(&grad).zip(z.iter_mut()) {
                    *mi = beta * *mi + gi;
                    *zi -= cfg.learning_rate * *mi;
                }
            }
            Optimizer::AdamStyle {
                beta1,
                beta2,
                eps_adam,
            } => {
                b1_pow *= beta1;
                b2_pow *= beta2;
                for i in 0..k {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / (1.0 - b1_pow);
                    let v_hat = v[i] / (1.0 - b2_pow);
                    z[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + eps_adam);
                }
            }
        }
        if linalg::norm(&z) > radius {
            out_of_ball_steps += 1;
            if each_step {
                clip_to_ball(&mut z, radius);
            }
        }
    }
    if !each_step {
        clip_to_ball(&mut z, radius);
        let (value, _) = objective(&decoder.forward_unchecked(&z));
        if keep_history {
            history.push(value);
        }
        if value < best {
            best = value;
            best_z = z;
        }
    }
    LatentRun {
        z: best_z,
        loss: best,
        out_of_ball_steps,
        history,
    }
}

// On the sphere ‖z‖ = r, drop the outward radial part of the descent
// direction so that preconditioned updates stop at constrained stationary
// points instead of sliding along the boundary.
fn tangent_on_sphere(z: &[f64], radius: f64, grad: &mut [f64]) {
    let nz = linalg::norm(z);
    if nz < radius * (1.0 - 1e-12) || nz == 0.0 {
        return;
    }
    let radial = linalg::dot(grad, z) / nz;
    if radial < 0.0 {
        linalg::axpy(-radial / nz, z, grad);
    }
}

/// Exact projection for `G(z) = W z` with orthonormal columns:
/// `z = clip_r(Wᵀ x)`, `x̂ = W z`.
pub fn project_exact_linear(decoder: &GenerativeDecoder, x: &[f64]) -> Result<ProjectionResult> {
    check_len("ambient vector", x.len(), decoder.ambient_dim())?;
    if !decoder.is_linear_orthonormal() {
        return Err(Error::Unsupported(
            "exact projection needs a linear decoder with orthonormal columns".into(),
        ));
    }
    let w = &decoder.layers()[0].weights;
    let mut z = w.t_matvec(x);
    let clipped = clip_to_ball(&mut z, decoder.radius());
    let x_hat = w.matvec(&z);
    let residual = linalg::dist(&x_hat, x);
    Ok(ProjectionResult {
        z_hat: z,
        x_hat,
        residual,
        restart_index: 0,
        out_of_ball_steps: usize::from(clipped),
    })
}
