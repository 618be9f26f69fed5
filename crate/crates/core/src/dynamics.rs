//! Vector fields, fixed-step RK4 integration, attractor discovery, and basin
//! classification.

use crate::error::{Error, Result};
use crate::io::BlockFile;
use crate::par;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;
use std::sync::Arc;

/// States with squared norm beyond this count as blown up.
const BLOWUP_NORM2: f64 = 1e12;
/// Endpoint speed below this marks a fixed-point candidate.
const MOVING_TOL: f64 = 1e-3;

#[derive(Clone)]
enum Field {
    Bistable1d,
    Duffing2d { delta: f64 },
    TwoLimitCycles,
    Glv { r: Array1<f64>, a: Array2<f64> },
    /// f(x) = Q g(Qᵀx) with g the bistable normal form in the first
    /// coordinate and plain contraction in the rest.
    Embedded { q: Array2<f64> },
    Rnn { w: Array2<f64>, b: Array1<f64> },
    Custom(Arc<dyn Fn(&[f64], &mut [f64]) + Sync + Send>),
}

/// A named autonomous vector field ẋ = f(x) with integration defaults.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub n: usize,
    pub dt: f64,
    pub t_max: f64,
    /// Convergence radius for attractor clustering and basin commitment.
    pub attractor_tol: f64,
    pub known_attractors: Option<Vec<Vec<f64>>>,
    /// Box from which attractor-discovery seeds are drawn.
    pub ic_box: (Vec<f64>, Vec<f64>),
    field: Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttractorKind {
    FixedPoint,
    LimitCycle,
}

#[derive(Debug, Clone)]
pub struct Attractor {
    pub id: usize,
    pub representative: Vec<f64>,
    pub kind: AttractorKind,
    /// Mean ‖x‖ along the orbit; meaningful for limit cycles only.
    pub radius: f64,
}

/// Outcome of a basin query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasinLabel {
    Attractor(usize),
    Unresolved,
    Blowup,
}

impl BasinLabel {
    pub fn id(self) -> Option<usize> {
        match self {
            BasinLabel::Attractor(i) => Some(i),
            _ => None,
        }
    }
}

impl SystemSpec {
    /// Evaluates f(x) into `out`.
    pub fn f(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n, "dimension mismatch: got {}", x.len());
        assert_eq!(out.len(), self.n);
        match &self.field {
            Field::Bistable1d => {
                out[0] = x[0] - x[0] * x[0] * x[0];
            }
            Field::Duffing2d { delta } => {
                out[0] = x[1];
                out[1] = -delta * x[1] + x[0] - x[0] * x[0] * x[0];
            }
            Field::TwoLimitCycles => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r < 1e-12 {
                    out[0] = 0.0;
                    out[1] = 0.0;
                } else {
                    let s = r - 2.0;
                    let rdot = s - s * s * s;
                    out[0] = rdot / r * x[0] - x[1];
                    out[1] = rdot / r * x[1] + x[0];
                }
            }
            Field::Glv { r, a } => {
                for i in 0..self.n {
                    let mut growth = r[i];
                    for j in 0..self.n {
                        growth += a[[i, j]] * x[j];
                    }
                    out[i] = x[i] * growth;
                }
            }
            Field::Embedded { q } => {
                // u = Qᵀx; g(u) = (u₁−u₁³, −u₂, ..., −u_N); f = Q g(u)
                let n = self.n;
                let mut u = vec![0.0; n];
                for j in 0..n {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += q[[i, j]] * x[i];
                    }
                    u[j] = s;
                }
                let mut g = vec![0.0; n];
                g[0] = u[0] - u[0] * u[0] * u[0];
                for j in 1..n {
                    g[j] = -u[j];
                }
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += q[[i, j]] * g[j];
                    }
                    out[i] = s;
                }
            }
            Field::Rnn { w, b } => {
                for i in 0..self.n {
                    let mut s = b[i] - x[i];
                    for j in 0..self.n {
                        s += w[[i, j]] * x[j].tanh();
                    }
                    out[i] = s;
                }
            }
            Field::Custom(f) => f(x, out),
        }
    }

    pub fn f_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.f(x, &mut out);
        out
    }

    /// Arbitrary field for tests and oracles.
    pub fn custom(
        name: &str,
        n: usize,
        dt: f64,
        t_max: f64,
        attractor_tol: f64,
        f: impl Fn(&[f64], &mut [f64]) + Sync + Send + 'static,
    ) -> Self {
        SystemSpec {
            name: name.to_string(),
            n,
            dt,
            t_max,
            attractor_tol,
            known_attractors: None,
            ic_box: (vec![-2.0; n], vec![2.0; n]),
            field: Field::Custom(Arc::new(f)),
        }
    }
}

/// ẋ = x − x³; attractors ±1, separatrix {0}.
pub fn bistable1d() -> SystemSpec {
    SystemSpec {
        name: "bistable1d".into(),
        n: 1,
        dt: 0.01,
        t_max: 50.0,
        attractor_tol: 1e-3,
        known_attractors: Some(vec![vec![-1.0], vec![1.0]]),
        ic_box: (vec![-3.0], vec![3.0]),
        field: Field::Bistable1d,
    }
}

/// ẋ = y, ẏ = −δy + x − x³ with δ = 0.5; attractors (±1, 0).
pub fn duffing2d() -> SystemSpec {
    SystemSpec {
        name: "duffing2d".into(),
        n: 2,
        dt: 0.01,
        t_max: 50.0,
        attractor_tol: 0.05,
        known_attractors: Some(vec![vec![-1.0, 0.0], vec![1.0, 0.0]]),
        ic_box: (vec![-2.5, -2.5], vec![2.5, 2.5]),
        field: Field::Duffing2d { delta: 0.5 },
    }
}

/// Polar ṙ = (r−2) − (r−2)³, θ̇ = 1 in Cartesian coordinates: stable limit
/// cycles at r = 1 and r = 3 separated by the unstable circle r = 2.
pub fn two_limit_cycles() -> SystemSpec {
    SystemSpec {
        name: "two_limit_cycles".into(),
        n: 2,
        dt: 0.01,
        t_max: 50.0,
        attractor_tol: 0.05,
        known_attractors: None,
        ic_box: (vec![-4.0, -4.0], vec![4.0, 4.0]),
        field: Field::TwoLimitCycles,
    }
}

/// ẋ_i = x_i (r_i + Σ_j A_ij x_j).
pub fn glv(r: Array1<f64>, a: Array2<f64>) -> Result<SystemSpec> {
    let n = r.len();
    if a.dim() != (n, n) {
        return Err(Error::InvalidInput("interaction matrix must be N×N".into()));
    }
    if r.iter().chain(a.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gLV parameters".into()));
    }
    Ok(SystemSpec {
        name: "glv".into(),
        n,
        dt: 0.01,
        t_max: 50.0,
        attractor_tol: 1e-3,
        known_attractors: None,
        ic_box: (vec![0.0; n], vec![2.0; n]),
        field: Field::Glv { r, a },
    })
}

/// Bundled two-species symmetric competition instance: r = (1,1),
/// A = [[−1,−1.5],[−1.5,−1]]. Stable states (1,0) and (0,1); the diagonal
/// x₁ = x₂ is the separatrix.
pub fn glv_test_instance() -> SystemSpec {
    let r = Array1::from_vec(vec![1.0, 1.0]);
    let a = Array2::from_shape_vec((2, 2), vec![-1.0, -1.5, -1.5, -1.0]).unwrap();
    let mut s = glv(r, a).unwrap();
    s.known_attractors = Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    s
}

/// Parses the gLV parameter CSV: first row the r values, then N rows of A.
pub fn glv_from_file(path: &Path) -> Result<SystemSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pd = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split(',') {
            let tok = tok.trim();
            row.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                path: pd.clone(),
                line: i + 1,
                msg: format!("bad number {tok:?}"),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{pd}: empty gLV parameter file")));
    }
    let n = rows[0].len();
    if rows.len() != n + 1 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!(
            "{pd}: expected 1 r-row plus {n}×{n} A-rows"
        )));
    }
    let r = Array1::from_vec(rows[0].clone());
    let flat: Vec<f64> = rows[1..].iter().flatten().copied().collect();
    let a = Array2::from_shape_vec((n, n), flat).unwrap();
    glv(r, a)
}

/// Random orthogonal matrix by modified Gram-Schmidt on a seeded Gaussian
/// matrix (re-orthogonalized once for stability).
fn random_orthogonal(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Array2::from_shape_fn((n, n), |_| rng.sample::<f64, _>(StandardNormal));
    for j in 0..n {
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = (0..n).map(|k| q[[k, i]] * q[[k, j]]).sum();
                for k in 0..n {
                    q[[k, j]] -= dot * q[[k, i]];
                }
            }
        }
        let norm: f64 = (0..n).map(|k| q[[k, j]] * q[[k, j]]).sum::<f64>().sqrt();
        for k in 0..n {
            q[[k, j]] /= norm;
        }
    }
    q
}

/// Synthetic high-dimensional benchmark f(x) = Q g(Qᵀx): a hidden bistable
/// coordinate u₁ = q₁·x with plain contraction elsewhere. Exact separatrix
/// {q₁·x = 0}; attractors ±q₁.
pub fn embedded_bistable(n: usize, seed: u64) -> Result<SystemSpec> {
    if n < 1 {
        return Err(Error::InvalidInput("embedded_bistable needs n >= 1".into()));
    }
    embedded_bistable_from_q(random_orthogonal(n, seed))
}

/// Same system with a caller-supplied orthogonal basis (tests use Q = I).
pub fn embedded_bistable_from_q(q: Array2<f64>) -> Result<SystemSpec> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(Error::InvalidInput("Q must be square".into()));
    }
    let q1: Vec<f64> = (0..n).map(|i| q[[i, 0]]).collect();
    let neg: Vec<f64> = q1.iter().map(|v| -v).collect();
    Ok(SystemSpec {
        name: "embedded_bistable".into(),
        n,
        dt: 0.01,
        t_max: 50.0,
        attractor_tol: 1e-3,
        known_attractors: Some(vec![q1, neg]),
        ic_box: (vec![-2.0; n], vec![2.0; n]),
        field: Field::Embedded { q },
    })
}

/// ẋ = −x + W tanh(x) + b with (W, b) from a weight file:
/// header `RNN v1 N=<n>`, then `BLOCK W n n` and `BLOCK b n 1`.
pub fn loaded_rnn(path: &Path) -> Result<SystemSpec> {
    let f = BlockFile::read(path)?;
    let parts: Vec<&str> = f.header.split_whitespace().collect();
    let bad = || Error::InvalidInput(format!("bad RNN header {:?}", f.header));
    if parts.len() != 3 || parts[0] != "RNN" || parts[1] != "v1" {
        return Err(bad());
    }
    let n: usize = parts[2].strip_prefix("N=").ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let wb = f.block("W")?;
    let bb = f.block("b")?;
    if wb.rows != n || wb.cols != n || bb.rows != n {
        return Err(Error::InvalidInput("RNN block shape mismatch".into()));
    }
    let w = Array2::from_shape_vec((n, n), wb.data.clone()).unwrap();
    let b = Array1::from_vec(bb.data.clone());
    if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("RNN weights".into()));
    }
    Ok(SystemSpec {
        name: "loaded_rnn".into(),
        n,
        dt: 0.01,
        t_max: 50.0,
        attractor_tol: 1e-2,
        known_attractors: None,
        ic_box: (vec![-2.0; n], vec![2.0; n]),
        field: Field::Rnn { w, b },
    })
}

/// Optional parameters for [`builtin_system`].
pub enum SystemParams<'a> {
    None,
    File(&'a Path),
    Embedded { n: usize, seed: u64 },
}

/// Name-keyed constructor used by the CLI layer.
pub fn builtin_system(name: &str, params: SystemParams) -> Result<SystemSpec> {
    match (name, params) {
        ("bistable1d", SystemParams::None) => Ok(bistable1d()),
        ("duffing2d", SystemParams::None) => Ok(duffing2d()),
        ("two_limit_cycles", SystemParams::None) => Ok(two_limit_cycles()),
        ("glv", SystemParams::File(p)) => glv_from_file(p),
        ("glv", SystemParams::None) => Ok(glv_test_instance()),
        ("embedded_bistable", SystemParams::Embedded { n, seed }) => embedded_bistable(n, seed),
        ("loaded_rnn", SystemParams::File(p)) => loaded_rnn(p),
        ("glv" | "loaded_rnn", _) => {
            Err(Error::InvalidInput(format!("system {name} needs a parameter file")))
        }
        ("embedded_bistable", _) => {
            Err(Error::InvalidInput("embedded_bistable needs n and seed".into()))
        }
        (other, _) => Err(Error::InvalidInput(format!("unknown system {other:?}"))),
    }
}

/// ‖f(x)‖², the kinetic energy; zero exactly at fixed points.
pub fn kinetic_energy(s: &SystemSpec, x: &[f64]) -> f64 {
    s.f_vec(x).iter().map(|v| v * v).sum()
}

fn rk4_step(s: &SystemSpec, x: &mut [f64], dt: f64, scratch: &mut [Vec<f64>]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = scratch else { panic!("need 5 scratch vectors") };
    s.f(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    s.f(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    s.f(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    s.f(tmp, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn new_scratch(n: usize) -> [Vec<f64>; 5] {
    [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]]
}

fn blown_up(x: &[f64]) -> bool {
    let mut n2 = 0.0;
    for &v in x {
        if !v.is_finite() {
            return true;
        }
        n2 += v * v;
    }
    n2 > BLOWUP_NORM2
}

/// Classical RK4 with fixed step `dt`; the last partial step is shortened so
/// the endpoint lands exactly at time `t`.
pub fn integrate(s: &SystemSpec, x0: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    if t < 0.0 || dt <= 0.0 {
        return Err(Error::InvalidInput("integrate needs t >= 0 and dt > 0".into()));
    }
    let mut x = x0.to_vec();
    let mut scratch = new_scratch(s.n);
    let mut elapsed = 0.0;
    while elapsed < t {
        let step = dt.min(t - elapsed);
        rk4_step(s, &mut x, step, &mut scratch);
        elapsed += step;
        if blown_up(&x) {
            return Err(Error::Blowup { t: elapsed });
        }
    }
    Ok(x)
}

/// Integrates while handing each post-step state to `visit`; stops early if
/// `visit` returns false. Returns the final state.
pub fn integrate_observed(
    s: &SystemSpec,
    x0: &[f64],
    t: f64,
    dt: f64,
    mut visit: impl FnMut(f64, &[f64]) -> bool,
) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut scratch = new_scratch(s.n);
    let mut elapsed = 0.0;
    while elapsed < t {
        let step = dt.min(t - elapsed);
        rk4_step(s, &mut x, step, &mut scratch);
        elapsed += step;
        if blown_up(&x) {
            return Err(Error::Blowup { t: elapsed });
        }
        if !visit(elapsed, &x) {
            break;
        }
    }
    Ok(x)
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Solves A x = b in place by partial-pivot LU; A is destroyed.
fn lu_solve(a: &mut Array2<f64>, b: &mut [f64]) -> Result<()> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[[r, col]].abs() > a[[piv, col]].abs() {
                piv = r;
            }
        }
        if a[[piv, col]].abs() < 1e-14 {
            return Err(Error::NoConvergence("singular Jacobian in Newton refinement".into()));
        }
        if piv != col {
            for c in 0..n {
                let t = a[[col, c]];
                a[[col, c]] = a[[piv, c]];
                a[[piv, c]] = t;
            }
            b.swap(col, piv);
        }
        for r in (col + 1)..n {
            let m = a[[r, col]] / a[[col, col]];
            a[[r, col]] = 0.0;
            for c in (col + 1)..n {
                a[[r, c]] -= m * a[[col, c]];
            }
            b[r] -= m * b[col];
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in (r + 1)..n {
            s -= a[[r, c]] * b[c];
        }
        b[r] = s / a[[r, r]];
    }
    Ok(())
}

/// Damped Newton iteration on f; returns a point with ‖f‖ < 1e-6 or None.
fn newton_refine(s: &SystemSpec, x0: &[f64]) -> Option<Vec<f64>> {
    let n = s.n;
    let mut x = x0.to_vec();
    let h = 1e-6;
    for _ in 0..50 {
        let fx = s.f_vec(&x);
        let fnorm = norm2(&fx).sqrt();
        if fnorm < 1e-12 {
            break;
        }
        let mut jac = Array2::zeros((n, n));
        let mut xp = x.clone();
        for j in 0..n {
            let xj = x[j];
            xp[j] = xj + h;
            let fp = s.f_vec(&xp);
            xp[j] = xj - h;
            let fm = s.f_vec(&xp);
            xp[j] = xj;
            for i in 0..n {
                jac[[i, j]] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let mut step = fx.clone();
        if lu_solve(&mut jac, &mut step).is_err() {
            return None;
        }
        let mut damp = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(&xi, &si)| xi - damp * si).collect();
            if norm2(&s.f_vec(&cand)).sqrt() < fnorm {
                x = cand;
                accepted = true;
                break;
            }
            damp *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm2(&s.f_vec(&x)).sqrt() < 1e-6 {
        Some(x)
    } else {
        None
    }
}

/// Mean ‖x‖ over a time window; used as the limit-cycle signature.
fn mean_radius_window(s: &SystemSpec, x0: &[f64], t: f64, dt: f64) -> Result<(f64, Vec<f64>)> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let end = integrate_observed(s, x0, t, dt, |_, x| {
        sum += norm2(x).sqrt();
        count += 1;
        true
    })?;
    Ok((sum / count as f64, end))
}

/// Simulates `n_seeds` random initial conditions for `t_max`, clusters the
/// endpoints, refines fixed points by damped Newton, and detects limit
/// cycles as still-moving endpoints whose mean radius has stabilized.
pub fn find_attractors(s: &SystemSpec, n_seeds: usize, seed: u64) -> Result<Vec<Attractor>> {
    if n_seeds < 1 {
        return Err(Error::InvalidInput("n_seeds must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<Vec<f64>> = (0..n_seeds)
        .map(|_| {
            (0..s.n)
                .map(|i| rng.gen_range(s.ic_box.0[i]..s.ic_box.1[i]))
                .collect()
        })
        .collect();
    let endpoints = par::map_indexed(n_seeds, |i| integrate(s, &seeds[i], s.t_max, s.dt));

    let mut fixed: Vec<Vec<f64>> = Vec::new();
    let mut cycles: Vec<(f64, Vec<f64>)> = Vec::new(); // (mean radius, representative)
    for end in endpoints.into_iter().flatten() {
        let speed = kinetic_energy(s, &end).sqrt();
        if speed < MOVING_TOL {
            let Some(refined) = newton_refine(s, &end) else { continue };
            if !fixed.iter().any(|p| dist2(p, &refined).sqrt() < s.attractor_tol) {
                fixed.push(refined);
            }
        } else {
            // Limit-cycle candidate: the mean radius over two successive
            // windows must agree.
            let window = s.t_max / 10.0;
            let Ok((r1, mid)) = mean_radius_window(s, &end, window, s.dt) else { continue };
            let Ok((r2, rep)) = mean_radius_window(s, &mid, window, s.dt) else { continue };
            if (r1 - r2).abs() < 1e-3 && !cycles.iter().any(|(r, _)| (r - r2).abs() < 0.2) {
                cycles.push((r2, rep));
            }
        }
    }
    if fixed.is_empty() && cycles.is_empty() {
        return Err(Error::NoConvergence(format!(
            "no trajectory of {} converged within t_max={}",
            s.name, s.t_max
        )));
    }
    fixed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cycles.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out = Vec::new();
    for p in fixed {
        let radius = norm2(&p).sqrt();
        out.push(Attractor { id: out.len(), representative: p, kind: AttractorKind::FixedPoint, radius });
    }
    for (r, rep) in cycles {
        out.push(Attractor { id: out.len(), representative: rep, kind: AttractorKind::LimitCycle, radius: r });
    }
    Ok(out)
}

/// Integrates until the state commits to an attractor: within attractor_tol
/// of a fixed-point representative, or (at the horizon) inside a limit
/// cycle's radius band |‖x‖ − r| < 0.2. Blow-up is reported distinctly.
pub fn classify_basin(s: &SystemSpec, x0: &[f64], attractors: &[Attractor]) -> BasinLabel {
    assert!(!attractors.is_empty(), "classify_basin needs attractors");
    let tol2 = s.attractor_tol * s.attractor_tol;
    let fixed: Vec<&Attractor> =
        attractors.iter().filter(|a| a.kind == AttractorKind::FixedPoint).collect();
    for a in &fixed {
        if dist2(x0, &a.representative) < tol2 {
            return BasinLabel::Attractor(a.id);
        }
    }
    let mut hit = None;
    let end = integrate_observed(s, x0, s.t_max, s.dt, |_, x| {
        for a in &fixed {
            if dist2(x, &a.representative) < tol2 {
                hit = Some(a.id);
                return false;
            }
        }
        true
    });
    let end = match end {
        Err(Error::Blowup { .. }) => return BasinLabel::Blowup,
        Err(_) => return BasinLabel::Unresolved,
        Ok(x) => x,
    };
    if let Some(id) = hit {
        return BasinLabel::Attractor(id);
    }
    let r_end = norm2(&end).sqrt();
    for a in attractors {
        if a.kind == AttractorKind::LimitCycle && (r_end - a.radius).abs() < 0.2 {
            return BasinLabel::Attractor(a.id);
        }
    }
    BasinLabel::Unresolved
}
