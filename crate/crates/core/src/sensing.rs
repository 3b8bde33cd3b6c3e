//! Random measurement operators `A ∈ R^{n×p}`.
//!
//! The operator stores the unnormalized matrix; `1/n` and `1/√n` factors are
//! applied at the loss and check call sites.

use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{gaussian_vec, power_iteration, Matrix};
use crate::seed::rng_from;

/// Upper limit on `n * p` for [`SensingOperator::materialize`].
pub const MATERIALIZE_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingKind {
    DenseGaussian,
    PartialCirculant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingSpec {
    pub kind: SensingKind,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl SensingSpec {
    pub fn build(&self) -> Result<SensingOperator> {
        SensingOperator::new(self.kind, self.n, self.p, self.seed)
    }
}

/// Row-subsampled circular convolution with column sign flips:
/// `(Ax)_j = (circ(g) (ξ ⊙ x))_{Ω(j)}`.
#[derive(Clone)]
pub struct Circulant {
    generator: Vec<f64>,
    signs: Vec<f64>,
    rows: Vec<usize>,
    generator_hat: Vec<Complex<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Circulant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Circulant")
            .field("p", &self.generator.len())
            .field("rows", &self.rows)
            .finish_non_exhaustive()
    }
}

impl Circulant {
    fn new(generator: Vec<f64>, signs: Vec<f64>, rows: Vec<usize>) -> Self {
        let p = generator.len();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(p);
        let inv = planner.plan_fft_inverse(p);
        let mut generator_hat: Vec<Complex<f64>> =
            generator.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fwd.process(&mut generator_hat);
        Self {
            generator,
            signs,
            rows,
            generator_hat,
            fwd,
            inv,
        }
    }

    pub fn generator(&self) -> &[f64] {
        &self.generator
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    // cyclic convolution (conjugate = false) or correlation (conjugate = true) with g
    fn filter(&self, input: &[f64], conjugate: bool) -> Vec<f64> {
        let p = input.len();
        let mut buf: Vec<Complex<f64>> = input.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&self.generator_hat) {
            *b *= if conjugate { g.conj() } else { *g };
        }
        self.inv.process(&mut buf);
        let inv_p = 1.0 / p as f64;
        buf.iter().map(|c| c.re * inv_p).collect()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let flipped: Vec<f64> = x.iter().zip(&self.signs).map(|(a, s)| a * s).collect();
        let full = self.filter(&flipped, false);
        self.rows.iter().map(|&i| full[i]).collect()
    }

    fn adjoint(&self, v: &[f64]) -> Vec<f64> {
        let mut filled = vec![0.0; self.generator.len()];
        for (&i, &vi) in self.rows.iter().zip(v) {
            filled[i] = vi;
        }
        let corr = self.filter(&filled, true);
        corr.iter().zip(&self.signs).map(|(a, s)| a * s).collect()
    }
}

#[derive(Debug, Clone)]
pub enum Payload {
    Dense(Matrix),
    Circulant(Circulant),
}

#[derive(Debug, Clone)]
pub struct SensingOperator {
    kind: SensingKind,
    n: usize,
    p: usize,
    seed: Option<u64>,
    payload: Payload,
}

impl SensingOperator {
    pub fn new(kind: SensingKind, n: usize, p: usize, seed: u64) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(invalid("sensing dimensions must be positive"));
        }
        let mut rng = rng_from(seed);
        let payload = match kind {
            SensingKind::DenseGaussian => {
                Payload::Dense(Matrix::from_row_major(n, p, gaussian_vec(&mut rng, n * p)))
            }
            SensingKind::PartialCirculant => {
                if n > p {
                    return Err(invalid(format!(
                        "partial circulant needs n <= p (got n={n}, p={p})"
                    )));
                }
                let generator = gaussian_vec(&mut rng, p);
                let signs = (0..p)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                let mut rows = index::sample(&mut rng, p, n).into_vec();
                rows.sort_unstable();
                Payload::Circulant(Circulant::new(generator, signs, rows))
            }
        };
        Ok(Self {
            kind,
            n,
            p,
            seed: Some(seed),
            payload,
        })
    }

    /// Dense operator with an explicit matrix. Not serializable.
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        let (n, p) = (matrix.rows(), matrix.cols());
        if n == 0 || p == 0 {
            return Err(invalid("sensing dimensions must be positive"));
        }
        Ok(Self {
            kind: SensingKind::DenseGaussian,
            n,
            p,
            seed: None,
            payload: Payload::Dense(matrix),
        })
    }

    /// Partial circulant operator with explicit generator, signs and row set.
    pub fn circulant_from_parts(
        generator: Vec<f64>,
        signs: Vec<f64>,
        mut rows: Vec<usize>,
    ) -> Result<Self> {
        let p = generator.len();
        if p == 0 {
            return Err(invalid("sensing dimensions must be positive"));
        }
        check_len("sign vector", signs.len(), p)?;
        rows.sort_unstable();
        rows.dedup();
        if rows.is_empty() || rows.last().is_some_and(|&r| r >= p) {
            return Err(invalid("row indices must be a nonempty subset of 0..p"));
        }
        let n = rows.len();
        Ok(Self {
            kind: SensingKind::PartialCirculant,
            n,
            p,
            seed: None,
            payload: Payload::Circulant(Circulant::new(generator, signs, rows)),
        })
    }

    pub fn kind(&self) -> SensingKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn to_spec(&self) -> Result<SensingSpec> {
        let seed = self.seed.ok_or_else(|| {
            Error::Unsupported("operator built from explicit parts has no seed form".into())
        })?;
        Ok(SensingSpec {
            kind: self.kind,
            n: self.n,
            p: self.p,
            seed,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("ambient vector", x.len(), self.p)?;
        Ok(self.apply_unchecked(x))
    }

    pub fn adjoint_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("measurement vector", v.len(), self.n)?;
        Ok(self.adjoint_unchecked(v))
    }

    pub(crate) fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match &self.payload {
            Payload::Dense(m) => m.matvec(x),
            Payload::Circulant(c) => c.apply(x),
        }
    }

    pub(crate) fn adjoint_unchecked(&self, v: &[f64]) -> Vec<f64> {
        match &self.payload {
            Payload::Dense(m) => m.t_matvec(v),
            Payload::Circulant(c) => c.adjoint(v),
        }
    }

    /// Dense `n × p` matrix whose column `j` is `apply(e_j)`.
    pub fn materialize(&self) -> Result<Matrix> {
        if self.n.saturating_mul(self.p) > MATERIALIZE_LIMIT {
            return Err(Error::Refused(format!(
                "materializing {}x{} exceeds {MATERIALIZE_LIMIT} entries",
                self.n, self.p
            )));
        }
        if let Payload::Dense(m) = &self.payload {
            return Ok(m.clone());
        }
        let mut out = Matrix::zeros(self.n, self.p);
        let mut e = vec![0.0; self.p];
        for j in 0..self.p {
            e[j] = 1.0;
            let col = self.apply_unchecked(&e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    /// `‖A‖_{2→2}` by power iteration on `AᵀA`.
    pub fn spectral_norm_estimate(&self, tol: f64) -> f64 {
        power_iteration(
            self.p,
            |x| self.apply_unchecked(x),
            |v| self.adjoint_unchecked(v),
            tol,
            100_000,
        )
    }
}
