//! Projected gradient descent on the linear (`PGD-GLasso`) and nonlinear
//! (`PGD-NLasso`) least-squares losses, and latent descent (CSGM).
//!
//! Updates, with `P_K` the projection onto the decoder range:
//! - `x ← P_K(x − (ν/n) Aᵀ(Ax − ỹ))`
//! - `x ← P_K(x − (ζ/n) Aᵀ((f(Ax) − ỹ) ⊙ f′(Ax)))`

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::genmodel::GenerativeDecoder;
use crate::linalg;
use crate::measurement::LinkModel;
use crate::projection::{self, initial_latent, project_warm, ProjectionConfig};
use crate::seed::derive_seed;
use crate::sensing::SensingOperator;

/// Paper defaults for the experiments.
pub const DEFAULT_NU: f64 = 1.0;
pub const DEFAULT_ZETA: f64 = 0.2;
pub const DEFAULT_ITERATIONS: usize = 30;
/// Step size for theory-validation runs of PGD-N with `l = 1.5`, `u = 2.5`;
/// lies in `(1/(2l²), 3/(2u²)) = (0.2222, 0.24)` so `2μ₂ < 1`.
pub const THEORY_ZETA: f64 = 0.23;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "x0", rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Zero,
    RandomRangePoint,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub step_size: f64,
    pub iterations: usize,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub x0_mode: InitMode,
    #[serde(default = "yes")]
    pub record_trajectory: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl SolverConfig {
    pub fn glasso() -> Self {
        Self {
            step_size: DEFAULT_NU,
            iterations: DEFAULT_ITERATIONS,
            projection: ProjectionConfig::default(),
            x0_mode: InitMode::Zero,
            record_trajectory: true,
            seed: 0,
        }
    }

    pub fn nlasso() -> Self {
        Self {
            step_size: DEFAULT_ZETA,
            ..Self::glasso()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step size must be positive"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations must be >= 1"));
        }
        self.projection.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `x^(t)` for `t = 0..=T`, when recorded.
    pub iterates: Option<Vec<Vec<f64>>>,
    /// Loss at each `x^(t)`.
    pub loss_values: Vec<f64>,
    /// `‖x^(t) − target‖₂`, empty without a target.
    pub error_to_target: Vec<f64>,
    /// `error_{t+1} / error_t`.
    pub contraction_ratios: Vec<f64>,
}

impl Trajectory {
    fn push(&mut self, x: &[f64], loss: f64, target: Option<&[f64]>, keep_iterates: bool) {
        if keep_iterates {
            self.iterates.get_or_insert_with(Vec::new).push(x.to_vec());
        }
        self.loss_values.push(loss);
        if let Some(t) = target {
            let e = linalg::dist(x, t);
            if let Some(&prev) = self.error_to_target.last() {
                self.contraction_ratios
                    .push(if prev > 0.0 { e / prev } else { 0.0 });
            }
            self.error_to_target.push(e);
        }
    }

    /// CSV with columns `t, loss, error, ratio`; missing values are empty.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "loss", "error", "ratio"])?;
        for (t, loss) in self.loss_values.iter().enumerate() {
            let err = self
                .error_to_target
                .get(t)
                .map(|e| format!("{e:e}"))
                .unwrap_or_default();
            let ratio = t
                .checked_sub(1)
                .and_then(|i| self.contraction_ratios.get(i))
                .map(|r| format!("{r:e}"))
                .unwrap_or_default();
            w.write_record([t.to_string(), format!("{loss:e}"), err, ratio])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(1/2n) ‖ỹ − Ax‖²`
pub fn loss_glasso(op: &SensingOperator, y_tilde: &[f64], x: &[f64]) -> Result<f64> {
    check_dims(op, y_tilde, x)?;
    Ok(glasso_parts(op, y_tilde, x).0)
}

/// `(1/n) Aᵀ(Ax − ỹ)`
pub fn grad_glasso(op: &SensingOperator, y_tilde: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_dims(op, y_tilde, x)?;
    Ok(glasso_parts(op, y_tilde, x).1)
}

/// `(1/2n) ‖ỹ − f(Ax)‖²`
pub fn loss_nlasso(
    op: &SensingOperator,
    y_tilde: &[f64],
    link: &LinkModel,
    x: &[f64],
) -> Result<f64> {
    link.require_differentiable()?;
    check_dims(op, y_tilde, x)?;
    Ok(nlasso_parts(op, y_tilde, link, x).0)
}

/// `(1/n) Aᵀ((f(Ax) − ỹ) ⊙ f′(Ax))`
pub fn grad_nlasso(
    op: &SensingOperator,
    y_tilde: &[f64],
    link: &LinkModel,
    x: &[f64],
) -> Result<Vec<f64>> {
    link.require_differentiable()?;
    check_dims(op, y_tilde, x)?;
    Ok(nlasso_parts(op, y_tilde, link, x).1)
}

fn check_dims(op: &SensingOperator, y_tilde: &[f64], x: &[f64]) -> Result<()> {
    check_len("measurement vector", y_tilde.len(), op.n())?;
    check_len("ambient vector", x.len(), op.p())
}

fn glasso_parts(op: &SensingOperator, y_tilde: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let inv_n = 1.0 / op.n() as f64;
    let resid: Vec<f64> = op
        .apply_unchecked(x)
        .iter()
        .zip(y_tilde)
        .map(|(a, y)| a - y)
        .collect();
    let loss = 0.5 * inv_n * linalg::dot(&resid, &resid);
    let grad = linalg::scale(inv_n, &op.adjoint_unchecked(&resid));
    (loss, grad)
}

fn nlasso_parts(
    op: &SensingOperator,
    y_tilde: &[f64],
    link: &LinkModel,
    x: &[f64],
) -> (f64, Vec<f64>) {
    let inv_n = 1.0 / op.n() as f64;
    let ax = op.apply_unchecked(x);
    let mut loss = 0.0;
    let weighted: Vec<f64> = ax
        .iter()
        .zip(y_tilde)
        .map(|(&t, &y)| {
            let r = link.eval_deterministic(t) - y;
            loss += r * r;
            r * link.deriv_unchecked(t)
        })
        .collect();
    let grad = linalg::scale(inv_n, &op.adjoint_unchecked(&weighted));
    (0.5 * inv_n * loss, grad)
}

fn check_setup(
    op: &SensingOperator,
    y_tilde: &[f64],
    decoder: &GenerativeDecoder,
    cfg: &SolverConfig,
) -> Result<()> {
    cfg.validate()?;
    check_len("measurement vector", y_tilde.len(), op.n())?;
    if decoder.ambient_dim() != op.p() {
        return Err(invalid(format!(
            "decoder ambient dim {} does not match operator p={}",
            decoder.ambient_dim(),
            op.p()
        )));
    }
    Ok(())
}

// Starting point and the latent code to warm-start the first projection.
fn initial_point(
    decoder: &GenerativeDecoder,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    match &cfg.x0_mode {
        InitMode::Zero => Ok((vec![0.0; decoder.ambient_dim()], None)),
        InitMode::RandomRangePoint => {
            let z = decoder.sample_latent(derive_seed(cfg.seed, "x0", 0));
            Ok((decoder.forward_unchecked(&z), Some(z)))
        }
        InitMode::Given(x0) => {
            check_len("initial vector", x0.len(), decoder.ambient_dim())?;
            Ok((x0.clone(), None))
        }
    }
}

fn run_pgd<F>(
    decoder: &GenerativeDecoder,
    cfg: &SolverConfig,
    target: Option<&[f64]>,
    loss_and_grad: F,
) -> Result<(Vec<f64>, Trajectory)>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if let Some(t) = target {
        check_len("target", t.len(), decoder.ambient_dim())?;
    }
    let (mut x, mut warm) = initial_point(decoder, cfg)?;
    let mut traj = Trajectory::default();
    for t in 0..cfg.iterations {
        let (loss, grad) = loss_and_grad(&x);
        traj.push(&x, loss, target, cfg.record_trajectory);
        let mut step = x;
        linalg::axpy(-cfg.step_size, &grad, &mut step);
        let proj = project_warm(
            decoder,
            &step,
            &cfg.projection,
            derive_seed(cfg.seed, "projection", t as u64),
            warm.as_deref(),
        )?;
        x = proj.x_hat;
        warm = Some(proj.z_hat);
    }
    let (loss, _) = loss_and_grad(&x);
    traj.push(&x, loss, target, cfg.record_trajectory);
    Ok((x, traj))
}

/// PGD on the linear least-squares loss. `target` is typically `μx*`.
pub fn pgd_glasso(
    op: &SensingOperator,
    y_tilde: &[f64],
    decoder: &GenerativeDecoder,
    cfg: &SolverConfig,
    target: Option<&[f64]>,
) -> Result<(Vec<f64>, Trajectory)> {
    check_setup(op, y_tilde, decoder, cfg)?;
    run_pgd(decoder, cfg, target, |x| glasso_parts(op, y_tilde, x))
}

/// PGD on the nonlinear least-squares loss with a known differentiable link.
/// `target` is typically `x*`.
pub fn pgd_nlasso(
    op: &SensingOperator,
    y_tilde: &[f64],
    link: &LinkModel,
    decoder: &GenerativeDecoder,
    cfg: &SolverConfig,
    target: Option<&[f64]>,
) -> Result<(Vec<f64>, Trajectory)> {
    link.require_differentiable()?;
    check_setup(op, y_tilde, decoder, cfg)?;
    run_pgd(decoder, cfg, target, |x| nlasso_parts(op, y_tilde, link, x))
}

/// Latent-space descent on `(1/2n)‖ỹ − A G(z)‖²` with the optimizer,
/// step count and restarts of `cfg.projection`.
pub fn csgm_baseline(
    op: &SensingOperator,
    y_tilde: &[f64],
    decoder: &GenerativeDecoder,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Trajectory)> {
    csgm_baseline_warm(op, y_tilde, decoder, cfg, None, None)
}

/// [`csgm_baseline`] with an optional warm latent (restart 0) and target.
pub fn csgm_baseline_warm(
    op: &SensingOperator,
    y_tilde: &[f64],
    decoder: &GenerativeDecoder,
    cfg: &SolverConfig,
    warm: Option<&[f64]>,
    target: Option<&[f64]>,
) -> Result<(Vec<f64>, Trajectory)> {
    check_setup(op, y_tilde, decoder, cfg)?;
    if let Some(z) = warm {
        check_len("warm start", z.len(), decoder.latent_dim())?;
    }
    if let Some(t) = target {
        check_len("target", t.len(), decoder.ambient_dim())?;
    }
    let pcfg = &cfg.projection;
    let start_latent = match (&cfg.x0_mode, warm) {
        (_, Some(z)) => Some(z.to_vec()),
        (InitMode::RandomRangePoint, None) => {
            Some(decoder.sample_latent(derive_seed(cfg.seed, "x0", 0)))
        }
        _ => None,
    };
    let mut best: Option<projection::LatentRun> = None;
    for restart in 0..pcfg.restarts {
        let z0 = match (restart, &start_latent) {
            (0, Some(z)) => z.clone(),
            _ => initial_latent(
                decoder,
                pcfg.init,
                derive_seed(cfg.seed, "csgm", restart as u64),
            ),
        };
        let run = projection::minimize_latent(decoder, pcfg, z0, true, |x_hat| {
            glasso_parts(op, y_tilde, x_hat)
        });
        if best.as_ref().is_none_or(|b| run.loss < b.loss) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let x = decoder.forward_unchecked(&best.z);
    let mut traj = Trajectory {
        loss_values: best.history,
        ..Trajectory::default()
    };
    if let Some(t) = target {
        // only the endpoint is known in ambient space
        traj.error_to_target.push(linalg::dist(&x, t));
    }
    if cfg.record_trajectory {
        traj.iterates = Some(vec![x.clone()]);
    }
    Ok((x, traj))
}

fn check_eps(eps: f64) -> Result<()> {
    // ε = 0 is accepted as the ε → 0 limit
    if !(0.0..1.0).contains(&eps) {
        return Err(invalid("ε must lie in [0, 1)"));
    }
    Ok(())
}

/// `μ₁ = max{1 − ν(1 − ε), ν(1 + ε) − 1}`
pub fn mu1_of(nu: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok((1.0 - nu * (1.0 - eps)).max(nu * (1.0 + eps) - 1.0))
}

/// `μ₂ = max{1 − ζl²(1 − ε), ζu²(1 + ε) − 1}`
pub fn mu2_of(zeta: f64, l: f64, u: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok((1.0 - zeta * l * l * (1.0 - eps)).max(zeta * u * u * (1.0 + eps) - 1.0))
}

/// A signal for the single index model: `x*` with `‖x*‖₂ = 1` and
/// `μx* = G(z*)` exactly in the decoder range.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSignal {
    pub x_star: Vec<f64>,
    pub z_star: Vec<f64>,
    /// `μ x*`, the target of PGD-GLasso.
    pub target: Vec<f64>,
}

/// Plants `μx* = G(z*)` with `‖G(z*)‖₂ = μ` by bisection on the radius along
/// the ray through `sample_latent(seed)`, then sets `x* = G(z*)/μ`.
pub fn plant_sim_signal(decoder: &GenerativeDecoder, mu: f64, seed: u64) -> Result<PlantedSignal> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid("planting needs μ > 0"));
    }
    let dir = decoder.sample_latent(seed);
    let nd = linalg::norm(&dir);
    if nd == 0.0 {
        return Err(invalid("degenerate latent direction"));
    }
    let unit: Vec<f64> = dir.iter().map(|v| v / nd).collect();
    let norm_at = |s: f64| linalg::norm(&decoder.forward_unchecked(&linalg::scale(s, &unit)));
    let smax = crate::genmodel::LATENT_INSET * decoder.radius();
    if norm_at(0.0) >= mu {
        return Err(Error::Unsupported(
            "decoder output at the origin already exceeds μ".into(),
        ));
    }
    // first crossing on a coarse grid, then bisection
    let grid = 64;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=grid {
        let s = smax * i as f64 / grid as f64;
        if norm_at(s) >= mu {
            hi = Some(s);
            break;
        }
        lo = s;
    }
    let mut hi = hi.ok_or_else(|| {
        Error::Unsupported(format!("‖G(z)‖ stays below μ={mu} along the sampled ray"))
    })?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) >= mu {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let z_star = linalg::scale(hi, &unit);
    let target = decoder.forward_unchecked(&z_star);
    let nt = linalg::norm(&target);
    let x_star = linalg::scale(1.0 / nt, &target);
    Ok(PlantedSignal {
        x_star,
        z_star,
        target,
    })
}
