//! Empirical checks of the recovery conditions (TS-REC, JLE, the `W_ν`
//! inner-product bound, MVT sandwich), convergence-slope fitting and the
//! Monte Carlo error-vs-n experiment.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::genmodel::{sample_in_ball, GenerativeDecoder};
use crate::linalg::{self, gaussian_vec};
use crate::measurement::{observe_known, observe_sim, LinkModel};
use crate::seed::{derive_seed, rng_from};
use crate::sensing::{SensingKind, SensingOperator};
use crate::solvers::{self, mu1_of, plant_sim_signal, SolverConfig, Trajectory};

/// Largest `n` accepted by [`rate_experiment`].
pub const MAX_RATE_N: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest slack over all trials; negative means a violation.
    pub worst_margin: f64,
    pub params: BTreeMap<String, f64>,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: &str, allowed: usize) -> Self {
        let mut params = BTreeMap::new();
        params.insert("allowed_violations".to_string(), allowed as f64);
        Self {
            name: name.to_string(),
            trials: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            params,
            passed: false,
        }
    }

    fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn record(&mut self, margin: f64) {
        self.trials += 1;
        if margin < 0.0 {
            self.violations += 1;
        }
        self.worst_margin = self.worst_margin.min(margin);
    }

    fn finish(mut self) -> Self {
        let allowed = self.params["allowed_violations"] as usize;
        self.passed = self.violations <= allowed;
        self
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: {} ({} violations / {} trials, worst margin {:.3e})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.violations,
            self.trials,
            self.worst_margin
        )
    }
}

/// `⟨a, b⟩ / (‖a‖₂ ‖b‖₂)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("vector", b.len(), a.len())?;
    let (na, nb) = (linalg::norm(a), linalg::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(invalid("cosine similarity of a zero vector"));
    }
    Ok((linalg::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn range_point<R: Rng>(decoder: &GenerativeDecoder, rng: &mut R) -> Vec<f64> {
    let z = sample_in_ball(rng, decoder.latent_dim(), decoder.radius());
    decoder.forward_unchecked(&z)
}

/// Two-sided set-restricted eigenvalue condition on `pairs` random pairs of
/// range points: `(1−ε)‖d‖ − δ ≤ ‖A d‖/√n ≤ (1+ε)‖d‖ + δ`, `d = x₁ − x₂`.
/// `max_distortion` records `max |‖Ad‖/√n − ‖d‖| / ‖d‖`.
pub fn tsrec_check(
    op: &SensingOperator,
    decoder: &GenerativeDecoder,
    eps: f64,
    delta: f64,
    pairs: usize,
    seed: u64,
) -> Result<CheckReport> {
    check_eps_open(eps)?;
    if delta.is_nan() || delta <= 0.0 {
        return Err(invalid("δ must be positive"));
    }
    check_pair(op, decoder)?;
    let scale = 1.0 / (op.n() as f64).sqrt();
    let mut rng = rng_from(seed);
    let mut report = CheckReport::new("tsrec", 0)
        .param("eps", eps)
        .param("delta", delta);
    let mut distortion: f64 = 0.0;
    for _ in 0..pairs {
        let d = linalg::sub(
            &range_point(decoder, &mut rng),
            &range_point(decoder, &mut rng),
        );
        let nd = linalg::norm(&d);
        let nad = scale * linalg::norm(&op.apply_unchecked(&d));
        let lower = nad - ((1.0 - eps) * nd - delta);
        let upper = (1.0 + eps) * nd + delta - nad;
        report.record(lower.min(upper));
        if nd > 0.0 {
            distortion = distortion.max((nad - nd).abs() / nd);
        }
    }
    Ok(report
        .param("max_distortion", distortion)
        .param("n", op.n() as f64)
        .finish())
}

/// Johnson–Lindenstrauss property on a finite point set:
/// `(1−ε)‖x‖² ≤ ‖Ax‖²/n ≤ (1+ε)‖x‖²`.
pub fn jle_check(op: &SensingOperator, points: &[Vec<f64>], eps: f64) -> Result<CheckReport> {
    check_eps_open(eps)?;
    let inv_n = 1.0 / op.n() as f64;
    let mut report = CheckReport::new("jle", 0).param("eps", eps);
    for x in points {
        check_len("point", x.len(), op.p())?;
        let nx2 = linalg::dot(x, x);
        let ax = op.apply_unchecked(x);
        let nax2 = inv_n * linalg::dot(&ax, &ax);
        report.record(((1.0 + eps) * nx2 - nax2).min(nax2 - (1.0 - eps) * nx2));
    }
    Ok(report.param("n", op.n() as f64).finish())
}

/// Bound on `|⟨(I − (ν/n)AᵀA)x₁, x₂⟩| ≤ (μ₁ + 0.05)‖x₁‖‖x₂‖` for differences
/// of range points, with `μ₁ = max{1 − ν(1−ε), ν(1+ε) − 1}`.
pub fn wnu_check(
    op: &SensingOperator,
    decoder: &GenerativeDecoder,
    nu: f64,
    eps: f64,
    pairs: usize,
    seed: u64,
) -> Result<CheckReport> {
    const SLACK: f64 = 0.05;
    check_eps_open(eps)?;
    check_pair(op, decoder)?;
    let mu1 = mu1_of(nu, eps)?;
    let inv_n = 1.0 / op.n() as f64;
    let mut rng = rng_from(seed);
    let mut report = CheckReport::new("wnu", 0)
        .param("nu", nu)
        .param("eps", eps)
        .param("mu1", mu1)
        .param("slack", SLACK);
    for _ in 0..pairs {
        let x1 = linalg::sub(
            &range_point(decoder, &mut rng),
            &range_point(decoder, &mut rng),
        );
        let x2 = linalg::sub(
            &range_point(decoder, &mut rng),
            &range_point(decoder, &mut rng),
        );
        let a1 = op.apply_unchecked(&x1);
        let a2 = op.apply_unchecked(&x2);
        let value = linalg::dot(&x1, &x2) - nu * inv_n * linalg::dot(&a1, &a2);
        let bound = (mu1 + SLACK) * linalg::norm(&x1) * linalg::norm(&x2);
        report.record(bound - value.abs());
    }
    Ok(report.param("n", op.n() as f64).finish())
}

/// Polarization identity `xᵀAᵀAy = (‖A(x+y)‖² − ‖A(x−y)‖²)/4` on random
/// Gaussian pairs, to relative tolerance `1e-9` of `‖Ax‖‖Ay‖`.
pub fn polarization_check(op: &SensingOperator, pairs: usize, seed: u64) -> CheckReport {
    const TOL: f64 = 1e-9;
    let mut rng = rng_from(seed);
    let mut report = CheckReport::new("polarization", 0).param("rel_tol", TOL);
    for _ in 0..pairs {
        let x = gaussian_vec(&mut rng, op.p());
        let y = gaussian_vec(&mut rng, op.p());
        let ax = op.apply_unchecked(&x);
        let ay = op.apply_unchecked(&y);
        let plus: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let minus = linalg::sub(&x, &y);
        let ap = op.apply_unchecked(&plus);
        let am = op.apply_unchecked(&minus);
        let lhs = linalg::dot(&ax, &ay);
        let rhs = 0.25 * (linalg::dot(&ap, &ap) - linalg::dot(&am, &am));
        let scale = linalg::norm(&ax) * linalg::norm(&ay);
        report.record(TOL * scale - (lhs - rhs).abs());
    }
    report.finish()
}

/// Mean-value sandwich `l‖A(x₁−x₂)‖ ≤ ‖f(Ax₁) − f(Ax₂)‖ ≤ u‖A(x₁−x₂)‖` for
/// random Gaussian `x₁, x₂`, with zero tolerance.
pub fn mvt_check(
    op: &SensingOperator,
    link: &LinkModel,
    triples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let (l, u) = link.require_differentiable()?;
    let mut rng = rng_from(seed);
    let mut report = CheckReport::new("mvt", 0).param("l", l).param("u", u);
    for _ in 0..triples {
        let x1 = gaussian_vec(&mut rng, op.p());
        let x2 = gaussian_vec(&mut rng, op.p());
        report.record(mvt_margin(op, link, &x1, &x2, l, u));
    }
    Ok(report.finish())
}

/// `min(‖f(Ax₁) − f(Ax₂)‖ − l‖Δ‖, u‖Δ‖ − ‖f(Ax₁) − f(Ax₂)‖)` with
/// `Δ = Ax₁ − Ax₂`.
pub fn mvt_margin(
    op: &SensingOperator,
    link: &LinkModel,
    x1: &[f64],
    x2: &[f64],
    l: f64,
    u: f64,
) -> f64 {
    let a1 = op.apply_unchecked(x1);
    let a2 = op.apply_unchecked(x2);
    let diff = linalg::norm(&linalg::sub(&a1, &a2));
    let f1: Vec<f64> = a1.iter().map(|&t| link.eval_deterministic(t)).collect();
    let f2: Vec<f64> = a2.iter().map(|&t| link.eval_deterministic(t)).collect();
    let fdiff = linalg::norm(&linalg::sub(&f1, &f2));
    (fdiff - l * diff).min(u * diff - fdiff)
}

/// Adjoint identity `⟨Ax, v⟩ = ⟨x, Aᵀv⟩` to relative tolerance `1e-10`.
pub fn adjoint_check(op: &SensingOperator, trials: usize, seed: u64) -> CheckReport {
    const TOL: f64 = 1e-10;
    let mut rng = rng_from(seed);
    let mut report = CheckReport::new("adjoint", 0).param("rel_tol", TOL);
    for _ in 0..trials {
        let x = gaussian_vec(&mut rng, op.p());
        let v = gaussian_vec(&mut rng, op.n());
        let ax = op.apply_unchecked(&x);
        let atv = op.adjoint_unchecked(&v);
        let lhs = linalg::dot(&ax, &v);
        let rhs = linalg::dot(&x, &atv);
        let scale = linalg::norm(&ax) * linalg::norm(&v);
        report.record(TOL * scale - (lhs - rhs).abs());
    }
    report.param("n", op.n() as f64).finish()
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn relative_error(approx: &[f64], exact: &[f64]) -> f64 {
    let scale = linalg::norm(exact).max(1e-300);
    linalg::dist(approx, exact) / scale
}

/// Analytic gradients of both losses against central differences at
/// `points` random locations (tolerance 1e-5 relative), and the decoder
/// vector-Jacobian product against differences of `⟨G(z), v⟩` (1e-4).
pub fn gradient_check(
    op: &SensingOperator,
    link: &LinkModel,
    decoder: &GenerativeDecoder,
    points: usize,
    seed: u64,
) -> Result<CheckReport> {
    const LOSS_TOL: f64 = 1e-5;
    const VJP_TOL: f64 = 1e-4;
    const STEP: f64 = 1e-5;
    link.require_differentiable()?;
    check_pair(op, decoder)?;
    let mut rng = rng_from(seed);
    let mut report = CheckReport::new("gradients", 0)
        .param("loss_rel_tol", LOSS_TOL)
        .param("vjp_rel_tol", VJP_TOL);
    for _ in 0..points {
        let x = gaussian_vec(&mut rng, op.p());
        let y = gaussian_vec(&mut rng, op.n());
        let g1 = solvers::grad_glasso(op, &y, &x)?;
        let fd1 = central_difference(|v| solvers::loss_glasso(op, &y, v).unwrap(), &x, STEP);
        report.record(LOSS_TOL - relative_error(&fd1, &g1));
        let g2 = solvers::grad_nlasso(op, &y, link, &x)?;
        let fd2 = central_difference(|v| solvers::loss_nlasso(op, &y, link, v).unwrap(), &x, STEP);
        report.record(LOSS_TOL - relative_error(&fd2, &g2));

        let z = sample_in_ball(&mut rng, decoder.latent_dim(), decoder.radius());
        let w = gaussian_vec(&mut rng, decoder.ambient_dim());
        let gz = decoder.vjp(&z, &w)?;
        let fdz = central_difference(|u| linalg::dot(&decoder.forward_unchecked(u), &w), &z, STEP);
        report.record(VJP_TOL - relative_error(&fdz, &gz));
    }
    Ok(report.finish())
}

fn check_eps_open(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("ε must lie in (0, 1)"));
    }
    Ok(())
}

fn check_pair(op: &SensingOperator, decoder: &GenerativeDecoder) -> Result<()> {
    if op.p() != decoder.ambient_dim() {
        return Err(invalid("operator and decoder ambient dimensions differ"));
    }
    Ok(())
}

/// Least-squares slope of `ln(error_t)` against `t` over the iterations with
/// `error_t > floor`, and the smallest recorded error.
pub fn contraction_fit(traj: &Trajectory, floor: f64) -> Result<(f64, f64)> {
    let errs = &traj.error_to_target;
    let pts: Vec<(f64, f64)> = errs
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > floor)
        .map(|(t, &e)| (t as f64, e.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points above floor {floor:e}, need 3",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let tbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lbar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.1 - lbar)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tbar).powi(2)).sum();
    let floor_error = errs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((sxy / sxx, floor_error))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    PgdGlasso,
    PgdNlasso,
    Csgm,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::PgdGlasso => "pgd_glasso",
            SolverKind::PgdNlasso => "pgd_nlasso",
            SolverKind::Csgm => "csgm",
        }
    }
}

/// How ground truth and observations are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationModel {
    /// `‖x*‖ = 1`, `μx* = G(z*)`, `y = f(Ax*)`; target `μx*`.
    Sim,
    /// `x* = G(z*)` with `z*` uniform in the inset ball, `y = f(Ax*) + η`;
    /// target `x*`.
    Known,
}

impl ObservationModel {
    pub fn default_for(solver: SolverKind) -> Self {
        match solver {
            SolverKind::PgdNlasso => ObservationModel::Known,
            _ => ObservationModel::Sim,
        }
    }
}

/// Everything needed to draw and solve one recovery instance.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub decoder: GenerativeDecoder,
    pub sensing: SensingKind,
    pub link: LinkModel,
    pub solver: SolverKind,
    pub solver_config: SolverConfig,
    pub observation: ObservationModel,
    /// Additive slack in `√(k log(Lr/δ)/n)`.
    pub delta: f64,
}

/// A drawn instance with its ground truth.
#[derive(Debug, Clone)]
pub struct Instance {
    pub op: SensingOperator,
    pub y_tilde: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub x_star: Vec<f64>,
    pub z_star: Vec<f64>,
    pub target: Vec<f64>,
}

/// Outcome of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub error: f64,
    pub cosine_similarity: f64,
    pub final_loss: f64,
}

impl ExperimentSetup {
    /// Draws operator, signal and observations from `seed`.
    pub fn instance(&self, n: usize, seed: u64) -> Result<Instance> {
        let p = self.decoder.ambient_dim();
        let op = SensingOperator::new(self.sensing, n, p, derive_seed(seed, "sensing", 0))?;
        let signal_seed = derive_seed(seed, "signal", 0);
        let obs_seed = derive_seed(seed, "observation", 0);
        match self.observation {
            ObservationModel::Sim => {
                let planted = plant_sim_signal(&self.decoder, self.link.mu(), signal_seed)?;
                let obs = observe_sim(&self.link, &op, &planted.x_star, obs_seed)?;
                Ok(Instance {
                    op,
                    y_tilde: obs.y_tilde,
                    y_clean: obs.y_clean,
                    x_star: planted.x_star,
                    z_star: planted.z_star,
                    target: planted.target,
                })
            }
            ObservationModel::Known => {
                let z_star = self.decoder.sample_latent(signal_seed);
                let x_star = self.decoder.forward_unchecked(&z_star);
                let obs = observe_known(&self.link, &op, &x_star, obs_seed)?;
                Ok(Instance {
                    op,
                    y_tilde: obs.y_tilde,
                    y_clean: obs.y_clean,
                    target: x_star.clone(),
                    x_star,
                    z_star,
                })
            }
        }
    }

    /// Runs the configured solver on `inst`.
    pub fn solve(&self, inst: &Instance, solver_seed: u64) -> Result<(Vec<f64>, Trajectory)> {
        let cfg = SolverConfig {
            seed: solver_seed,
            ..self.solver_config.clone()
        };
        match self.solver {
            SolverKind::PgdGlasso => solvers::pgd_glasso(
                &inst.op,
                &inst.y_tilde,
                &self.decoder,
                &cfg,
                Some(&inst.target),
            ),
            SolverKind::PgdNlasso => solvers::pgd_nlasso(
                &inst.op,
                &inst.y_tilde,
                &self.link,
                &self.decoder,
                &cfg,
                Some(&inst.target),
            ),
            SolverKind::Csgm => solvers::csgm_baseline_warm(
                &inst.op,
                &inst.y_tilde,
                &self.decoder,
                &cfg,
                None,
                Some(&inst.target),
            ),
        }
    }

    pub fn final_loss(&self, inst: &Instance, x: &[f64]) -> Result<f64> {
        match self.solver {
            SolverKind::PgdNlasso => solvers::loss_nlasso(&inst.op, &inst.y_tilde, &self.link, x),
            _ => solvers::loss_glasso(&inst.op, &inst.y_tilde, x),
        }
    }

    pub fn trial(&self, n: usize, trial: usize, seed: u64) -> Result<TrialRecord> {
        let inst = self.instance(n, seed)?;
        let (x, _) = self.solve(&inst, derive_seed(seed, "solver", 0))?;
        // a zero estimate carries no direction
        let cosine_similarity = cosine_similarity(&x, &inst.x_star).unwrap_or(0.0);
        Ok(TrialRecord {
            n,
            trial,
            seed,
            error: linalg::dist(&x, &inst.target),
            cosine_similarity,
            final_loss: self.final_loss(&inst, &x)?,
        })
    }

    /// `√(k log(Lr/δ)/n)`
    pub fn rate_scale(&self, n: usize) -> f64 {
        let k = self.decoder.latent_dim() as f64;
        let lr = self.decoder.lipschitz_bound() * self.decoder.radius();
        (k * (lr / self.delta).ln().max(1.0) / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub trials: usize,
    pub median_error: f64,
    pub q25: f64,
    pub q75: f64,
    /// `c √(k log(Lr/δ)/n)` with the fitted `c`.
    pub predicted: f64,
    /// `median_error` of the previous row over this row's; `None` on the first row.
    pub ratio: Option<f64>,
    pub median_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub fitted_constant: f64,
    pub k: usize,
    pub p: usize,
    pub lipschitz: f64,
    pub r: f64,
    pub delta: f64,
    pub link: String,
    pub solver: String,
    pub records: Vec<TrialRecord>,
}

impl RateTable {
    /// Number of adjacent row pairs where the median error does not decrease.
    pub fn inversions(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[1].median_error >= w[0].median_error)
            .count()
    }

    pub fn row(&self, n: usize) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// CSV with columns
    /// `n,trials,median_error,q25,q75,predicted,ratio,median_cosine`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "trials",
            "median_error",
            "q25",
            "q75",
            "predicted",
            "ratio",
            "median_cosine",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.trials.to_string(),
                format!("{:e}", r.median_error),
                format!("{:e}", r.q25),
                format!("{:e}", r.q75),
                format!("{:e}", r.predicted),
                r.ratio.map(|v| format!("{v:e}")).unwrap_or_default(),
                format!("{:e}", r.median_cosine),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs `trials` independent draws per grid value and summarizes the
/// error-vs-n behaviour. Trial `i` at size `n` uses seed
/// `derive_seed(seed, "trial-<n>", i)`; trials run on the rayon pool and are
/// folded in index order.
pub fn rate_experiment(
    grid: &[usize],
    trials: usize,
    setup: &ExperimentSetup,
    seed: u64,
) -> Result<RateTable> {
    if trials < 10 {
        return Err(invalid("rate experiment needs at least 10 trials per n"));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("grid must be nonempty and strictly increasing"));
    }
    let p = setup.decoder.ambient_dim();
    for &n in grid {
        if n == 0 || n > MAX_RATE_N {
            return Err(invalid(format!("grid value {n} outside 1..={MAX_RATE_N}")));
        }
        if setup.sensing == SensingKind::PartialCirculant && n > p {
            return Err(invalid(format!("partial circulant needs n <= p, got {n}")));
        }
    }
    setup.solver_config.validate()?;

    let mut records = Vec::with_capacity(grid.len() * trials);
    let mut rows = Vec::with_capacity(grid.len());
    for &n in grid {
        let label = format!("trial-{n}");
        let batch: Vec<TrialRecord> = (0..trials)
            .into_par_iter()
            .map(|i| setup.trial(n, i, derive_seed(seed, &label, i as u64)))
            .collect::<Result<_>>()?;
        let mut errs: Vec<f64> = batch.iter().map(|r| r.error).collect();
        errs.sort_by(f64::total_cmp);
        let mut cos: Vec<f64> = batch.iter().map(|r| r.cosine_similarity).collect();
        cos.sort_by(f64::total_cmp);
        let median_error = quantile(&errs, 0.5);
        let ratio = rows
            .last()
            .map(|prev: &RateRow| prev.median_error / median_error);
        rows.push(RateRow {
            n,
            trials,
            median_error,
            q25: quantile(&errs, 0.25),
            q75: quantile(&errs, 0.75),
            predicted: 0.0,
            ratio,
            median_cosine: quantile(&cos, 0.5),
        });
        records.extend(batch);
    }
    // least-squares c in median ≈ c · scale(n)
    let (num, den) = rows.iter().fold((0.0, 0.0), |(a, b), r| {
        let s = setup.rate_scale(r.n);
        (a + r.median_error * s, b + s * s)
    });
    let fitted_constant = if den > 0.0 { num / den } else { 0.0 };
    for r in &mut rows {
        r.predicted = fitted_constant * setup.rate_scale(r.n);
    }
    Ok(RateTable {
        rows,
        fitted_constant,
        k: setup.decoder.latent_dim(),
        p,
        lipschitz: setup.decoder.lipschitz_bound(),
        r: setup.decoder.radius(),
        delta: setup.delta,
        link: setup.link.kind().name().to_string(),
        solver: setup.solver.name().to_string(),
        records,
    })
}
