//! Training distributions: isotropic and attractor-aligned Gaussians,
//! per-coordinate Gamma with prescribed mode, and empirical-covariance
//! Gaussians built by evolving samples forward in time.

use crate::dynamics::{self, Attractor, SystemSpec};
use crate::error::{Error, Result};
use crate::par;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as RandDistribution, Gamma, LogNormal, StandardNormal};

/// Call index reserved for forward-invariance adjustment draws so they never
/// collide with training batches.
const ADJUST_CALL: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub enum DistKind {
    Isotropic { sigma: f64 },
    /// Covariance σ_B²I + (σ_A²−σ_B²)uuᵀ with unit u.
    Anisotropic { u: Array1<f64>, sigma_a: f64, sigma_b: f64 },
    /// Independent coordinates; x[i] has mode mean[i] and variance σ².
    GammaPerCoord { sigma: f64 },
    Empirical { cov: Array2<f64>, chol: Array2<f64> },
}

#[derive(Debug, Clone)]
pub struct Distribution {
    pub mean: Array1<f64>,
    pub kind: DistKind,
    pub seed: u64,
}

/// Lower-triangular L with LLᵀ = A; fails on non-positive-definite input.
fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::InvalidInput(
                        "covariance is not positive definite".into(),
                    ));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Lognormal (μ_ln, s) with the given mode and variance. Solves
/// k³(k−1) = σ²/mode² for k = e^{s²} by bisection.
fn lognormal_from_mode_var(mode: f64, var: f64) -> (f64, f64) {
    let c = var / (mode * mode);
    let f = |k: f64| k * k * k * (k - 1.0);
    let mut lo = 1.0;
    let mut hi = 2.0;
    while f(hi) < c {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = 0.5 * (lo + hi);
    let s2 = k.ln();
    (mode.ln() + s2, s2.sqrt())
}

impl Distribution {
    pub fn isotropic(mean: Array1<f64>, sigma: f64, seed: u64) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Distribution { mean, kind: DistKind::Isotropic { sigma }, seed })
    }

    pub fn anisotropic(
        mean: Array1<f64>,
        u: Array1<f64>,
        sigma_a: f64,
        sigma_b: f64,
        seed: u64,
    ) -> Result<Self> {
        if sigma_a <= 0.0 || sigma_b <= 0.0 {
            return Err(Error::InvalidInput("sigma_a and sigma_b must be > 0".into()));
        }
        if u.len() != mean.len() {
            return Err(Error::InvalidInput("axis dimension mismatch".into()));
        }
        let norm = u.dot(&u).sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidInput("axis vector is numerically zero".into()));
        }
        let u = u / norm;
        Ok(Distribution { mean, kind: DistKind::Anisotropic { u, sigma_a, sigma_b }, seed })
    }

    /// Per-coordinate Gamma with mode `mode[i]` and variance σ². Negative
    /// modes fall back to a lognormal with mode clamped to 1e-3.
    pub fn gamma_per_coord(mode: Array1<f64>, sigma: f64, seed: u64) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Distribution { mean: mode, kind: DistKind::GammaPerCoord { sigma }, seed })
    }

    pub fn empirical(mean: Array1<f64>, cov: Array2<f64>, seed: u64) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::InvalidInput("covariance shape mismatch".into()));
        }
        // Symmetrize before factoring; estimators leave tiny asymmetry.
        let cov = 0.5 * (&cov + &cov.t());
        let chol = cholesky(&cov)?;
        Ok(Distribution { mean, kind: DistKind::Empirical { cov, chol }, seed })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_mean(mut self, mean: Array1<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::InvalidInput("mean dimension mismatch".into()));
        }
        self.mean = mean;
        Ok(self)
    }

    /// Scales the covariance by factor² (Gamma keeps its mode, the Gaussian
    /// kinds keep their mean).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if factor <= 0.0 || !factor.is_finite() {
            return Err(Error::InvalidInput("scale factor must be > 0".into()));
        }
        let kind = match &self.kind {
            DistKind::Isotropic { sigma } => DistKind::Isotropic { sigma: sigma * factor },
            DistKind::Anisotropic { u, sigma_a, sigma_b } => DistKind::Anisotropic {
                u: u.clone(),
                sigma_a: sigma_a * factor,
                sigma_b: sigma_b * factor,
            },
            DistKind::GammaPerCoord { sigma } => {
                DistKind::GammaPerCoord { sigma: sigma * factor }
            }
            DistKind::Empirical { cov, chol } => DistKind::Empirical {
                cov: cov * (factor * factor),
                chol: chol * factor,
            },
        };
        Ok(Distribution { mean: self.mean.clone(), kind, seed: self.seed })
    }

    /// Explicit covariance matrix of the distribution.
    pub fn covariance(&self) -> Array2<f64> {
        let n = self.dim();
        match &self.kind {
            DistKind::Isotropic { sigma } => Array2::eye(n) * (sigma * sigma),
            DistKind::Anisotropic { u, sigma_a, sigma_b } => {
                let mut cov = Array2::eye(n) * (sigma_b * sigma_b);
                let d = sigma_a * sigma_a - sigma_b * sigma_b;
                for i in 0..n {
                    for j in 0..n {
                        cov[[i, j]] += d * u[i] * u[j];
                    }
                }
                cov
            }
            DistKind::GammaPerCoord { sigma } => Array2::eye(n) * (sigma * sigma),
            DistKind::Empirical { cov, .. } => cov.clone(),
        }
    }

    /// Draws B points as rows. Deterministic in (seed, call): a fresh stream
    /// of the counter-based generator per call index, so concurrent callers
    /// with distinct indices reproduce independently.
    pub fn sample(&self, b: usize, call: u64) -> Result<Array2<f64>> {
        if b < 1 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(call);
        let mut out = Array2::zeros((b, n));
        match &self.kind {
            DistKind::Isotropic { sigma } => {
                for r in 0..b {
                    for i in 0..n {
                        let z: f64 = rng.sample(StandardNormal);
                        out[[r, i]] = self.mean[i] + sigma * z;
                    }
                }
            }
            DistKind::Anisotropic { u, sigma_a, sigma_b } => {
                // x = μ + σ_B z + (σ_A − σ_B)(uᵀz)u reproduces the stated
                // covariance and degenerates to the isotropic draw when
                // σ_A = σ_B (bitwise: same normal stream, same order).
                let mut z = vec![0.0; n];
                for r in 0..b {
                    for zi in z.iter_mut() {
                        *zi = rng.sample(StandardNormal);
                    }
                    let proj: f64 = (0..n).map(|i| u[i] * z[i]).sum();
                    for i in 0..n {
                        out[[r, i]] =
                            self.mean[i] + sigma_b * z[i] + (sigma_a - sigma_b) * proj * u[i];
                    }
                }
            }
            DistKind::GammaPerCoord { sigma } => {
                let var = sigma * sigma;
                enum Coord {
                    Gamma(Gamma<f64>),
                    LogNormal(LogNormal<f64>),
                }
                let mut coords = Vec::with_capacity(n);
                for i in 0..n {
                    let mode = self.mean[i];
                    if mode >= 0.0 {
                        // rate β from mode (α−1)/β = μ and variance α/β² = σ²
                        let beta = (mode + (mode * mode + 4.0 * var).sqrt()) / (2.0 * var);
                        let alpha = 1.0 + mode * beta;
                        coords.push(Coord::Gamma(
                            Gamma::new(alpha, 1.0 / beta)
                                .map_err(|e| Error::InvalidInput(format!("gamma: {e}")))?,
                        ));
                    } else {
                        let (mu_ln, s) = lognormal_from_mode_var(1e-3, var);
                        coords.push(Coord::LogNormal(
                            LogNormal::new(mu_ln, s)
                                .map_err(|e| Error::InvalidInput(format!("lognormal: {e}")))?,
                        ));
                    }
                }
                for r in 0..b {
                    for (i, c) in coords.iter().enumerate() {
                        out[[r, i]] = match c {
                            Coord::Gamma(g) => g.sample(&mut rng),
                            Coord::LogNormal(l) => l.sample(&mut rng),
                        };
                    }
                }
            }
            DistKind::Empirical { chol, .. } => {
                let mut z = vec![0.0; n];
                for r in 0..b {
                    for zi in z.iter_mut() {
                        *zi = rng.sample(StandardNormal);
                    }
                    for i in 0..n {
                        let mut s = self.mean[i];
                        for j in 0..=i {
                            s += chol[[i, j]] * z[j];
                        }
                        out[[r, i]] = s;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Gaussian stretched along the inter-attractor axis: u = (a−b)/‖a−b‖,
/// Σ = σ_B²I + (σ_A²−σ_B²)uuᵀ, mean at the midpoint until the caller moves
/// it onto the separatrix.
pub fn anisotropic_from_attractors(
    a: &[f64],
    b: &[f64],
    sigma_a: f64,
    sigma_b: f64,
    seed: u64,
) -> Result<Distribution> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("attractor dimension mismatch".into()));
    }
    let diff: Array1<f64> = Array1::from_iter(a.iter().zip(b).map(|(x, y)| x - y));
    if diff.dot(&diff).sqrt() < 1e-12 {
        return Err(Error::InvalidInput("attractors coincide; no axis defined".into()));
    }
    let mid = Array1::from_iter(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
    Distribution::anisotropic(mid, diff, sigma_a, sigma_b, seed)
}

/// Draws n samples, evolves each for t_fwd, and returns an
/// empirical-covariance Gaussian over the evolved points. The covariance is
/// ridge-regularized with 1e-6·tr(Σ̃)/N since evolved samples can collapse
/// onto a low-dimensional attractor set.
pub fn forward_invariant_adjust(
    d: &Distribution,
    s: &SystemSpec,
    t_fwd: f64,
    n: usize,
) -> Result<Distribution> {
    if t_fwd <= 0.0 {
        return Err(Error::InvalidInput("t_fwd must be > 0".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    if d.dim() != s.n {
        return Err(Error::InvalidInput("distribution/system dimension mismatch".into()));
    }
    let x0 = d.sample(n, ADJUST_CALL)?;
    let results = par::map_indexed(n, |i| {
        dynamics::integrate(s, x0.row(i).as_slice().unwrap(), t_fwd, s.dt)
    });
    let evolved: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let lost = n - evolved.len();
    if lost * 10 > n {
        return Err(Error::NoConvergence(format!(
            "forward adjustment lost {lost}/{n} samples to blow-up"
        )));
    }
    let m = evolved.len();
    let dim = s.n;
    let mut mean = Array1::zeros(dim);
    for p in &evolved {
        for i in 0..dim {
            mean[i] += p[i] / m as f64;
        }
    }
    let mut cov = Array2::zeros((dim, dim));
    for p in &evolved {
        for i in 0..dim {
            for j in 0..dim {
                cov[[i, j]] += (p[i] - mean[i]) * (p[j] - mean[j]) / (m - 1) as f64;
            }
        }
    }
    let trace: f64 = (0..dim).map(|i| cov[[i, i]]).sum();
    let ridge = 1e-6 * trace / dim as f64;
    for i in 0..dim {
        cov[[i, i]] += ridge;
    }
    Distribution::empirical(mean, cov, d.seed)
}

/// Fraction of `n` samples classified into each attractor's basin.
/// Unresolved and blown-up samples count toward no basin.
pub fn basin_coverage(
    d: &Distribution,
    s: &SystemSpec,
    attractors: &[Attractor],
    n: usize,
    call: u64,
) -> Result<Vec<f64>> {
    let x = d.sample(n, call)?;
    let labels = par::map_indexed(n, |i| {
        dynamics::classify_basin(s, x.row(i).as_slice().unwrap(), attractors)
    });
    let mut counts = vec![0usize; attractors.len()];
    for l in labels {
        if let Some(id) = l.id() {
            counts[id] += 1;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / n as f64).collect())
}

/// Per-system default distribution ladders. Systems whose recipe needs
/// run-time information (loaded RNNs) have no default and must be
/// configured explicitly.
pub fn default_distributions(s: &SystemSpec, seed: u64) -> Result<Vec<Distribution>> {
    let sd = |j: usize| seed.wrapping_add(j as u64);
    match s.name.as_str() {
        // variances 1 and 3
        "bistable1d" => Ok(vec![
            Distribution::isotropic(Array1::zeros(1), 1.0, sd(0))?,
            Distribution::isotropic(Array1::zeros(1), 3.0_f64.sqrt(), sd(1))?,
        ]),
        "duffing2d" => [0.1, 0.5, 1.0, 2.0]
            .iter()
            .enumerate()
            .map(|(j, &sig)| Distribution::isotropic(Array1::zeros(2), sig, sd(j)))
            .collect(),
        // Separatrix is the circle r=2; these widths put at least 20% of
        // the mass in each basin (outer-basin mass is e^{−2/σ²}).
        "two_limit_cycles" => [1.4, 1.7, 2.0]
            .iter()
            .enumerate()
            .map(|(j, &sig)| Distribution::isotropic(Array1::zeros(2), sig, sd(j)))
            .collect(),
        "glv" => {
            let Some(att) = &s.known_attractors else {
                return Err(Error::InvalidInput(
                    "gLV defaults need known attractors to anchor the Gamma modes".into(),
                ));
            };
            if att.len() != 2 {
                return Err(Error::InvalidInput("gLV defaults expect two attractors".into()));
            }
            // Midpoint of the attractors; on the separatrix for the
            // symmetric instances these defaults target.
            let mode = Array1::from_iter(
                att[0].iter().zip(&att[1]).map(|(a, b)| 0.5 * (a + b)),
            );
            [0.01, 0.1, 0.3, 1.0]
                .iter()
                .enumerate()
                .map(|(j, &sig)| Distribution::gamma_per_coord(mode.clone(), sig, sd(j)))
                .collect()
        }
        "embedded_bistable" => [0.5, 1.0, 2.0]
            .iter()
            .enumerate()
            .map(|(j, &sig)| Distribution::isotropic(Array1::zeros(s.n), sig, sd(j)))
            .collect(),
        other => Err(Error::InvalidInput(format!(
            "no default distributions for system {other:?}; configure them explicitly"
        ))),
    }
}
