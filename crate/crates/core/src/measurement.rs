//! Link functions, observation synthesis and the link scalars `μ`, `ψ`.
//!
//! Two observation models are supported:
//! - single index model `y_i = f_i(a_iᵀ x*)` with `‖x*‖₂ = 1` and a possibly
//!   random link ([`observe_sim`]);
//! - known monotone link `y_i = f(a_iᵀ x*) + η_i` ([`observe_known`]).
//!
//! Both finish with a bounded adversarial corruption ([`corrupt`]).

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, gaussian_vec};
use crate::seed::{derive_seed, rng_from};
use crate::sensing::SensingOperator;

/// Number of Gauss–Hermite nodes used for `μ` of deterministic links.
pub const HERMITE_NODES: usize = 200;
/// Monte Carlo sample count for `μ` of randomized links.
pub const MU_MC_SAMPLES: usize = 1_000_000;
const MU_MC_SEED: u64 = 0x006d_755f_6d63;
const PSI_SAMPLES: usize = 100_000;
const PSI_SEED: u64 = 0x0070_7369;
const MONOTONE_GRID: usize = 10_000;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied monotone link with its derivative.
#[derive(Clone)]
pub struct CustomLink {
    pub name: String,
    pub f: ScalarFn,
    pub df: ScalarFn,
}

impl fmt::Debug for CustomLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLink")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum LinkKind {
    Linear,
    /// `f(t) = 2t + 0.5 cos t`
    ShiftedCosine,
    /// `f(t) = sign(t + e)`, `e ~ N(0, sigma_d²)`
    SignDithered {
        sigma_d: f64,
    },
    CustomMonotone(CustomLink),
}

impl LinkKind {
    pub fn name(&self) -> &str {
        match self {
            LinkKind::Linear => "linear",
            LinkKind::ShiftedCosine => "shifted_cosine",
            LinkKind::SignDithered { .. } => "sign_dithered",
            LinkKind::CustomMonotone(c) => &c.name,
        }
    }
}

/// `μ` together with its Monte Carlo standard error (0 for quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct LinkModel {
    kind: LinkKind,
    bounds: Option<(f64, f64)>,
    sigma: f64,
    tau: f64,
    mu: MuEstimate,
    psi: f64,
}

/// JSON form: `{kind, sigma_d?, sigma?, tau}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub tau: f64,
}

impl LinkSpec {
    pub fn build(&self) -> Result<LinkModel> {
        let sigma = self.sigma.unwrap_or(0.0);
        let base = match self.kind.as_str() {
            "linear" => LinkModel::linear(),
            "shifted_cosine" => LinkModel::shifted_cosine(),
            "sign_dithered" | "sign" => LinkModel::sign_dithered(self.sigma_d.unwrap_or(0.0))?,
            other => return Err(invalid(format!("unknown link kind '{other}'"))),
        };
        base.with_noise(sigma)?.with_tau(self.tau)
    }
}

impl LinkModel {
    fn from_kind(kind: LinkKind, bounds: Option<(f64, f64)>) -> Self {
        let mut link = Self {
            kind,
            bounds,
            sigma: 0.0,
            tau: 0.0,
            mu: MuEstimate {
                value: 0.0,
                std_error: 0.0,
            },
            psi: 0.0,
        };
        link.mu = mu_of_link(&link);
        link.psi = psi_estimate(&link, PSI_SAMPLES, PSI_SEED).expect("sample count above minimum");
        link
    }

    pub fn linear() -> Self {
        Self::from_kind(LinkKind::Linear, Some((1.0, 1.0)))
    }

    pub fn shifted_cosine() -> Self {
        Self::from_kind(LinkKind::ShiftedCosine, Some((1.5, 2.5)))
    }

    pub fn sign_dithered(sigma_d: f64) -> Result<Self> {
        if !(sigma_d >= 0.0 && sigma_d.is_finite()) {
            return Err(invalid("dither level must be nonnegative"));
        }
        Ok(Self::from_kind(LinkKind::SignDithered { sigma_d }, None))
    }

    /// Custom link with declared derivative bounds `0 < l <= u`. The bounds
    /// and strict monotonicity are verified on a grid over `[-10, 10]`.
    pub fn custom_monotone(link: CustomLink, l: f64, u: f64) -> Result<Self> {
        if !(l > 0.0 && u >= l && u.is_finite()) {
            return Err(invalid("custom link needs 0 < l <= u"));
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..MONOTONE_GRID {
            let t = -10.0 + 20.0 * i as f64 / (MONOTONE_GRID - 1) as f64;
            let d = (link.df)(t);
            if !(d >= l && d <= u) {
                return Err(invalid(format!(
                    "custom link derivative {d} at t={t} outside [{l}, {u}]"
                )));
            }
            let v = (link.f)(t);
            if v <= prev {
                return Err(invalid(format!("custom link not increasing at t={t}")));
            }
            prev = v;
        }
        Ok(Self::from_kind(
            LinkKind::CustomMonotone(link),
            Some((l, u)),
        ))
    }

    /// Standard deviation of the additive noise in the known-link model.
    pub fn with_noise(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid("noise level must be nonnegative"));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(invalid("adversarial budget must be nonnegative"));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn kind(&self) -> &LinkKind {
        &self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mu(&self) -> f64 {
        self.mu.value
    }

    pub fn mu_estimate(&self) -> MuEstimate {
        self.mu
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    /// `(l, u)` for differentiable links.
    pub fn deriv_bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn is_differentiable(&self) -> bool {
        self.bounds.is_some()
    }

    pub fn to_spec(&self) -> Result<LinkSpec> {
        let (kind, sigma_d) = match &self.kind {
            LinkKind::Linear => ("linear", None),
            LinkKind::ShiftedCosine => ("shifted_cosine", None),
            LinkKind::SignDithered { sigma_d } => ("sign_dithered", Some(*sigma_d)),
            LinkKind::CustomMonotone(_) => {
                return Err(Error::Unsupported("custom links have no JSON form".into()))
            }
        };
        Ok(LinkSpec {
            kind: kind.to_string(),
            sigma_d,
            sigma: (self.sigma > 0.0).then_some(self.sigma),
            tau: self.tau,
        })
    }

    /// `f(t)`. Randomized links draw their dither from `seed` and require it.
    pub fn eval(&self, t: f64, seed: Option<u64>) -> Result<f64> {
        match self.kind {
            LinkKind::SignDithered { .. } => {
                let seed = seed.ok_or_else(|| invalid("sign_dithered link needs a seed"))?;
                Ok(self.eval_rng(t, &mut rng_from(seed)))
            }
            _ => Ok(self.eval_deterministic(t)),
        }
    }

    pub(crate) fn eval_rng<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        match &self.kind {
            LinkKind::SignDithered { sigma_d } => {
                let e: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_d;
                sign(t + e)
            }
            _ => self.eval_deterministic(t),
        }
    }

    // callers guarantee a deterministic kind; sign returns the undithered value
    pub(crate) fn eval_deterministic(&self, t: f64) -> f64 {
        match &self.kind {
            LinkKind::Linear => t,
            LinkKind::ShiftedCosine => 2.0 * t + 0.5 * t.cos(),
            LinkKind::SignDithered { .. } => sign(t),
            LinkKind::CustomMonotone(c) => (c.f)(t),
        }
    }

    /// `f′(t)`.
    pub fn deriv(&self, t: f64) -> Result<f64> {
        match &self.kind {
            LinkKind::SignDithered { .. } => Err(Error::Unsupported(
                "sign_dithered link is not differentiable".into(),
            )),
            _ => Ok(self.deriv_unchecked(t)),
        }
    }

    pub(crate) fn deriv_unchecked(&self, t: f64) -> f64 {
        match &self.kind {
            LinkKind::Linear => 1.0,
            LinkKind::ShiftedCosine => 2.0 - 0.5 * t.sin(),
            LinkKind::SignDithered { .. } => f64::NAN,
            LinkKind::CustomMonotone(c) => (c.df)(t),
        }
    }

    pub(crate) fn require_differentiable(&self) -> Result<(f64, f64)> {
        self.bounds.ok_or_else(|| {
            Error::Unsupported(format!("link '{}' is not differentiable", self.kind.name()))
        })
    }
}

fn sign(t: f64) -> f64 {
    // sign(0) = +1 keeps outputs in {-1, +1}
    if t >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Record of the seeds used to synthesize an [`Observation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSeeds {
    pub master: u64,
    pub link: u64,
    pub noise: u64,
    pub corruption: u64,
}

impl ObservationSeeds {
    fn derive(master: u64) -> Self {
        Self {
            master,
            link: derive_seed(master, "link", 0),
            noise: derive_seed(master, "noise", 0),
            corruption: derive_seed(master, "corruption", 0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub y_tilde: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub x_star: Vec<f64>,
    /// Latent code of the planted signal; `None` when the signal is off the
    /// decoder range.
    pub z_star: Option<Vec<f64>>,
    pub seeds: ObservationSeeds,
    pub tau_used: f64,
}

impl Observation {
    /// CSV with columns `i, y_clean, y_tilde`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "y_clean", "y_tilde"])?;
        for (i, (c, t)) in self.y_clean.iter().zip(&self.y_tilde).enumerate() {
            w.write_record([i.to_string(), c.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Single index model observations `y_i = f_i(a_iᵀ x*)`, then corruption.
pub fn observe_sim(
    link: &LinkModel,
    op: &SensingOperator,
    x_star: &[f64],
    seed: u64,
) -> Result<Observation> {
    check_len("signal", x_star.len(), op.p())?;
    let nx = linalg::norm(x_star);
    if (nx - 1.0).abs() > 1e-9 {
        return Err(invalid(format!(
            "single index model needs ‖x*‖₂ = 1, got {nx}"
        )));
    }
    let seeds = ObservationSeeds::derive(seed);
    let mut rng = rng_from(seeds.link);
    let y_clean: Vec<f64> = op
        .apply_unchecked(x_star)
        .into_iter()
        .map(|t| link.eval_rng(t, &mut rng))
        .collect();
    let y_tilde = corrupt(&y_clean, link.tau, seeds.corruption)?;
    Ok(Observation {
        y_tilde,
        y_clean,
        x_star: x_star.to_vec(),
        z_star: None,
        seeds,
        tau_used: link.tau,
    })
}

/// Known-link observations `y_i = f(a_iᵀ x*) + η_i`, `η_i ~ N(0, σ²)`.
pub fn observe_known(
    link: &LinkModel,
    op: &SensingOperator,
    x_star: &[f64],
    seed: u64,
) -> Result<Observation> {
    link.require_differentiable()?;
    check_len("signal", x_star.len(), op.p())?;
    let seeds = ObservationSeeds::derive(seed);
    let mut rng = rng_from(seeds.noise);
    let noise = gaussian_vec(&mut rng, op.n());
    let y_clean: Vec<f64> = op
        .apply_unchecked(x_star)
        .into_iter()
        .zip(noise)
        .map(|(t, e)| link.eval_deterministic(t) + link.sigma * e)
        .collect();
    let y_tilde = corrupt(&y_clean, link.tau, seeds.corruption)?;
    Ok(Observation {
        y_tilde,
        y_clean,
        x_star: x_star.to_vec(),
        z_star: None,
        seeds,
        tau_used: link.tau,
    })
}

/// Adds a perturbation of norm exactly `τ√n` in a random direction.
pub fn corrupt(y: &[f64], tau: f64, seed: u64) -> Result<Vec<f64>> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(invalid("adversarial budget must be nonnegative"));
    }
    if tau == 0.0 || y.is_empty() {
        return Ok(y.to_vec());
    }
    let mut rng = rng_from(seed);
    let mut dir = gaussian_vec(&mut rng, y.len());
    let mut nd = linalg::norm(&dir);
    while nd == 0.0 {
        dir = gaussian_vec(&mut rng, y.len());
        nd = linalg::norm(&dir);
    }
    let scale = tau * (y.len() as f64).sqrt() / nd;
    Ok(y.iter().zip(&dir).map(|(a, d)| a + scale * d).collect())
}

// Orthonormal Hermite recurrence: returns (p_n(z), p_{n-1}(z)).
fn hermite_pair(n: usize, z: f64) -> (f64, f64) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut p1 = PIM4;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}

/// Gauss–Hermite rule for the weight `e^{-x²}`. Roots of the degree-`n`
/// Hermite polynomial are bracketed by a sign-change scan over `[0, √(2n+1)]`
/// and refined by bisection; nodes are returned in descending order.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    let nf = n as f64;
    let deriv = |z: f64| (2.0 * nf).sqrt() * hermite_pair(n, z).1;
    let mut positive = Vec::with_capacity(n / 2);
    // the smallest root spacing is about π/√(2n), so this grid separates all roots
    let zmax = (2.0 * nf + 1.0).sqrt() + 1.0;
    let steps = ((zmax / (0.05 / (2.0 * nf).sqrt())).ceil() as usize).max(100);
    let h = zmax / steps as f64;
    let mut lo = h * 0.5;
    let mut f_lo = hermite_pair(n, lo).0;
    for i in 1..=steps {
        let hi = h * 0.5 + i as f64 * h;
        let f_hi = hermite_pair(n, hi).0;
        if f_lo.signum() != f_hi.signum() {
            let (mut a, mut b, mut fa) = (lo, hi, f_lo);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                let fm = hermite_pair(n, mid).0;
                if fm.signum() == fa.signum() {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            positive.push(0.5 * (a + b));
        }
        lo = hi;
        f_lo = f_hi;
    }
    debug_assert_eq!(positive.len(), n / 2, "missed Hermite roots");
    let mut nodes: Vec<f64> = positive.iter().rev().copied().collect();
    if n % 2 == 1 {
        nodes.push(0.0);
    }
    nodes.extend(positive.iter().map(|z| -z));
    let weights = nodes
        .iter()
        .map(|&z| {
            let d = deriv(z);
            2.0 / (d * d)
        })
        .collect();
    (nodes, weights)
}

/// `E_{g~N(0,1)}[h(g)]` by Gauss–Hermite quadrature.
pub fn gaussian_expectation(nodes: usize, h: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    let s: f64 = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| wi * h(std::f64::consts::SQRT_2 * xi))
        .sum();
    s / std::f64::consts::PI.sqrt()
}

/// `μ = E[f(g) g]`: quadrature for deterministic links, Monte Carlo with
/// [`MU_MC_SAMPLES`] draws for randomized ones.
pub fn mu_of_link(link: &LinkModel) -> MuEstimate {
    match link.kind {
        LinkKind::SignDithered { .. } => {
            let mut rng = rng_from(MU_MC_SEED);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..MU_MC_SAMPLES {
                let g: f64 = rng.sample(StandardNormal);
                let v = link.eval_rng(g, &mut rng) * g;
                sum += v;
                sum_sq += v * v;
            }
            let nf = MU_MC_SAMPLES as f64;
            let mean = sum / nf;
            let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
            MuEstimate {
                value: mean,
                std_error: (var / nf).sqrt(),
            }
        }
        _ => MuEstimate {
            value: gaussian_expectation(HERMITE_NODES, |g| link.eval_deterministic(g) * g),
            std_error: 0.0,
        },
    }
}

/// Empirical sub-Gaussian norm `max_{q=1..10} q^{-1/2} (E|f(g)|^q)^{1/q}`.
pub fn psi_estimate(link: &LinkModel, samples: usize, seed: u64) -> Result<f64> {
    if samples < 10_000 {
        return Err(invalid("psi_estimate needs at least 10^4 samples"));
    }
    let mut rng = rng_from(seed);
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            link.eval_rng(g, &mut rng).abs()
        })
        .collect();
    Ok(subgaussian_norm_estimate(&values))
}

pub fn subgaussian_norm_estimate(abs_values: &[f64]) -> f64 {
    let nf = abs_values.len() as f64;
    (1..=10)
        .map(|q| {
            let qf = q as f64;
            let moment = abs_values.iter().map(|v| v.powi(q)).sum::<f64>() / nf;
            moment.powf(1.0 / qf) / qf.sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::SensingKind;

    #[test]
    fn link_values() {
        assert_eq!(LinkModel::shifted_cosine().eval(0.0, None).unwrap(), 0.5);
        assert_eq!(LinkModel::linear().eval(1.7, None).unwrap(), 1.7);
        let s = LinkModel::sign_dithered(0.0).unwrap();
        assert_eq!(s.eval(-0.2, Some(3)).unwrap(), -1.0);
        assert!(s.eval(-0.2, None).is_err());
        assert_eq!(LinkModel::shifted_cosine().deriv(0.0).unwrap(), 2.0);
        assert_eq!(LinkModel::linear().deriv(-4.2).unwrap(), 1.0);
        assert!(matches!(s.deriv(0.1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn shifted_cosine_derivative_sweep() {
        let link = LinkModel::shifted_cosine();
        let (l, u) = link.deriv_bounds().unwrap();
        assert_eq!((l, u), (1.5, 2.5));
        for i in 0..10_000 {
            let t = -10.0 + 20.0 * i as f64 / 9_999.0;
            let d = link.deriv(t).unwrap();
            assert!((l..=u).contains(&d), "f'({t}) = {d}");
        }
    }

    #[test]
    fn differentiable_links_are_increasing() {
        for link in [LinkModel::linear(), LinkModel::shifted_cosine()] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..10_000 {
                let t = -10.0 + 20.0 * i as f64 / 9_999.0;
                let v = link.eval(t, None).unwrap();
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn hermite_rule_integrates_polynomials() {
        assert!((gaussian_expectation(HERMITE_NODES, |_| 1.0) - 1.0).abs() < 1e-12);
        assert!((gaussian_expectation(HERMITE_NODES, |g| g * g) - 1.0).abs() < 1e-12);
        assert!((gaussian_expectation(HERMITE_NODES, |g| g.powi(4)) - 3.0).abs() < 1e-11);
        // E[cos g] = e^{-1/2}
        assert!((gaussian_expectation(HERMITE_NODES, f64::cos) - (-0.5f64).exp()).abs() < 1e-12);
        let (x, _) = gauss_hermite(20);
        assert!(x.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn mu_values() {
        assert!((LinkModel::linear().mu() - 1.0).abs() < 1e-12);
        assert!((LinkModel::shifted_cosine().mu() - 2.0).abs() < 1e-8);
        let s = LinkModel::sign_dithered(0.1).unwrap();
        let closed = (2.0 / (std::f64::consts::PI * 1.01)).sqrt();
        assert!((s.mu() - 0.7939).abs() < 0.003);
        assert!((s.mu() - closed).abs() < 3.0 * s.mu_estimate().std_error);
    }

    #[test]
    fn psi_values() {
        let s = LinkModel::sign_dithered(0.0).unwrap();
        assert!((psi_estimate(&s, 20_000, 1).unwrap() - 1.0).abs() < 0.01);
        let psi_c = LinkModel::shifted_cosine().psi();
        assert!(psi_c.is_finite() && psi_c < 4.0);
        assert!(psi_estimate(&s, 100, 1).is_err());
    }

    #[test]
    fn linear_psi_matches_raw_gaussian_estimate() {
        let mut rng = rng_from(77);
        let raw: Vec<f64> = (0..100_000)
            .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
            .collect();
        let reference = subgaussian_norm_estimate(&raw);
        let psi = psi_estimate(&LinkModel::linear(), 100_000, 5).unwrap();
        assert!((psi - reference).abs() < 0.1 * reference);
    }

    #[test]
    fn corrupt_has_exact_norm() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(corrupt(&y, 0.0, 3).unwrap(), y.to_vec());
        let c = corrupt(&y, 0.5, 3).unwrap();
        assert!((linalg::dist(&c, &y) - 1.0).abs() < 1e-12);
        let mut dirs = Vec::new();
        for s in 0..100 {
            let c = corrupt(&y, 0.1, s).unwrap();
            assert!((linalg::dist(&c, &y) - 0.2).abs() < 1e-12);
            dirs.push(c);
        }
        assert_ne!(dirs[0], dirs[1]);
        assert!(corrupt(&y, -0.1, 0).is_err());
    }

    #[test]
    fn observation_models() {
        let op = SensingOperator::new(SensingKind::DenseGaussian, 20, 6, 2).unwrap();
        let mut x = vec![1.0, -2.0, 0.5, 0.0, 1.0, 1.0];
        let nx = linalg::norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let ax = op.apply(&x).unwrap();

        let obs = observe_sim(&LinkModel::linear(), &op, &x, 1).unwrap();
        assert_eq!(obs.y_tilde, ax);
        let obs = observe_known(&LinkModel::linear(), &op, &x, 1).unwrap();
        assert_eq!(obs.y_tilde, ax);

        let sign = LinkModel::sign_dithered(0.1).unwrap();
        let obs = observe_sim(&sign, &op, &x, 1).unwrap();
        assert!(obs.y_tilde.iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(matches!(
            observe_known(&sign, &op, &x, 1),
            Err(Error::Unsupported(_))
        ));

        let unnormalized = vec![1.0; 6];
        assert!(observe_sim(&LinkModel::linear(), &op, &unnormalized, 1).is_err());
        assert!(observe_known(&LinkModel::linear(), &op, &unnormalized, 1).is_ok());
    }

    #[test]
    fn corruption_budget_holds() {
        let op = SensingOperator::new(SensingKind::DenseGaussian, 50, 10, 2).unwrap();
        let x = crate::linalg::scale(1.0 / 10f64.sqrt(), &[1.0; 10]);
        let link = LinkModel::shifted_cosine()
            .with_noise(0.1)
            .unwrap()
            .with_tau(0.3)
            .unwrap();
        let obs = observe_known(&link, &op, &x, 9).unwrap();
        let dev = linalg::dist(&obs.y_tilde, &obs.y_clean) / 50f64.sqrt();
        assert!(dev <= 0.3 + 1e-12);
        assert_eq!(obs.tau_used, 0.3);
    }

    #[test]
    fn custom_link_is_verified() {
        let ok = CustomLink {
            name: "affine".into(),
            f: Arc::new(|t| 3.0 * t + 1.0),
            df: Arc::new(|_| 3.0),
        };
        let link = LinkModel::custom_monotone(ok.clone(), 2.0, 4.0).unwrap();
        assert!((link.mu() - 3.0).abs() < 1e-10);
        assert!(LinkModel::custom_monotone(ok, 3.5, 4.0).is_err());
        let bad = CustomLink {
            name: "tanh".into(),
            f: Arc::new(f64::tanh),
            df: Arc::new(|t| 1.0 - t.tanh().powi(2)),
        };
        assert!(LinkModel::custom_monotone(bad, 0.5, 1.0).is_err());
    }

    #[test]
    fn link_spec_round_trip() {
        let json = r#"{"kind":"sign_dithered","sigma_d":0.1,"tau":0.0}"#;
        let spec: LinkSpec = serde_json::from_str(json).unwrap();
        let link = spec.build().unwrap();
        assert!(matches!(link.kind(), LinkKind::SignDithered { sigma_d } if *sigma_d == 0.1));
        assert_eq!(link.to_spec().unwrap(), spec);
        let bad: LinkSpec = serde_json::from_str(r#"{"kind":"cubic"}"#).unwrap();
        assert!(bad.build().is_err());
    }
}
