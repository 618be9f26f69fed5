//! Closed-form references and brute-force ground truth: the analytic 1D
//! eigenfunction and its separable 2D family, the power-rule consistency
//! check, and grid-based basin maps for comparing learned zero sets.

use crate::autodiff::ScalarField;
use crate::dynamics::{self, Attractor, BasinLabel, SystemSpec};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::par;
use ndarray::Array2;

/// Inputs this close to the singular set {x = ±1} are rejected.
const SINGULAR_GUARD: f64 = 1e-9;

/// ψ(x) = x/√|1−x²|, the closed-form eigenfunction of ẋ = x − x³ with unit
/// eigenvalue. Sign continuation across |x| = 1 keeps ψ odd and increasing.
pub fn analytic_kef_1d(x: f64) -> Result<f64> {
    let w = 1.0 - x * x;
    if w.abs() < SINGULAR_GUARD {
        return Err(Error::InvalidInput(format!("x={x} is on the singular set |x|=1")));
    }
    Ok(x / w.abs().sqrt())
}

/// dψ/dx: (1−x²)^(−3/2) inside the unit interval, −(x²−1)^(−3/2) outside.
pub fn analytic_kef_1d_deriv(x: f64) -> Result<f64> {
    let w = 1.0 - x * x;
    if w.abs() < SINGULAR_GUARD {
        return Err(Error::InvalidInput(format!("x={x} is on the singular set |x|=1")));
    }
    let d = w.abs().powf(-1.5);
    Ok(if w > 0.0 { d } else { -d })
}

/// The analytic eigenfunction as a scalar field with exact derivatives.
/// Singular inputs evaluate to NaN; callers stay off {|x| = 1}.
pub struct AnalyticKef1d;

impl ScalarField for AnalyticKef1d {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64]) -> f64 {
        analytic_kef_1d(x[0]).unwrap_or(f64::NAN)
    }

    fn directional_derivative(&self, x: &[f64], v: &[f64]) -> f64 {
        match analytic_kef_1d_deriv(x[0]) {
            Ok(d) => d * v[0],
            Err(_) => f64::NAN,
        }
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        vec![self.directional_derivative(x, &[1.0])]
    }
}

/// ψ(x,y) = A(x)^μ A(y)^(1−μ) for the product system
/// (ẋ, ẏ) = (x−x³, y−y³), restricted to points where both factors are
/// nonnegative. Every member has unit eigenvalue.
pub fn separable_family_2d(mu: f64, x: f64, y: f64) -> Result<f64> {
    let a = analytic_kef_1d(x)?;
    let b = analytic_kef_1d(y)?;
    if a < 0.0 || b < 0.0 {
        return Err(Error::InvalidInput(format!(
            "separable family needs nonnegative factors, got A={a}, B={b}"
        )));
    }
    let v = a.powf(mu) * b.powf(1.0 - mu);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("separable family at mu={mu}, x={x}, y={y}")));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy)]
pub struct PowerRuleReport {
    pub max_rel_residual: f64,
    /// Least-squares fit of ∇(ψ^α)·f against ψ^α over the probes.
    pub effective_eigenvalue: f64,
}

/// Verifies that ψ^α satisfies the eigenfunction equation with eigenvalue
/// αλ on the probe points. ψ must be one-signed and nonzero there; an
/// all-negative ψ is negated first (the negation is an eigenfunction with
/// the same eigenvalue).
pub fn power_rule_check(
    field: &(impl ScalarField + ?Sized),
    system: &SystemSpec,
    lambda: f64,
    alpha: f64,
    probes: &Array2<f64>,
) -> Result<PowerRuleReport> {
    if probes.nrows() == 0 {
        return Err(Error::InvalidInput("power rule check needs probe points".into()));
    }
    let mut psi: Vec<f64> = Vec::with_capacity(probes.nrows());
    let mut dd: Vec<f64> = Vec::with_capacity(probes.nrows());
    for row in probes.rows() {
        let x = row.as_slice().unwrap();
        let v = system.f_vec(x);
        psi.push(field.eval(x));
        dd.push(field.directional_derivative(x, &v));
    }
    if psi.iter().any(|p| !p.is_finite() || p.abs() < 1e-12) {
        return Err(Error::InvalidInput("probe set touches the zero set of the field".into()));
    }
    let sign = psi[0].signum();
    if psi.iter().any(|p| p.signum() != sign) {
        return Err(Error::InvalidInput(
            "field changes sign on the probe set; power is undefined".into(),
        ));
    }
    if sign < 0.0 {
        for p in psi.iter_mut() {
            *p = -*p;
        }
        for d in dd.iter_mut() {
            *d = -*d;
        }
    }
    let mut max_rel = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&p, &d) in psi.iter().zip(&dd) {
        let powered = p.powf(alpha);
        let lhs = alpha * p.powf(alpha - 1.0) * d;
        let target = alpha * lambda * powered;
        let rel = (lhs - target).abs() / target.abs().max(1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
        num += lhs * powered;
        den += powered * powered;
    }
    Ok(PowerRuleReport { max_rel_residual: max_rel, effective_eigenvalue: num / den })
}

/// Basin labels on an n×n grid over a 2D box (possibly an affine slice of a
/// higher-dimensional state space).
pub struct BasinMap2D {
    pub bbox: ([f64; 2], [f64; 2]),
    pub n: usize,
    /// Row-major with x fastest: labels[iy*n + ix].
    pub labels: Vec<BasinLabel>,
    pub attractors: Vec<Attractor>,
}

impl BasinMap2D {
    pub fn label(&self, ix: usize, iy: usize) -> BasinLabel {
        self.labels[iy * self.n + ix]
    }

    pub fn node(&self, ix: usize, iy: usize) -> [f64; 2] {
        let (lo, hi) = self.bbox;
        let h0 = (hi[0] - lo[0]) / (self.n - 1) as f64;
        let h1 = (hi[1] - lo[1]) / (self.n - 1) as f64;
        [lo[0] + ix as f64 * h0, lo[1] + iy as f64 * h1]
    }

    pub fn cell_size(&self) -> [f64; 2] {
        let (lo, hi) = self.bbox;
        [
            (hi[0] - lo[0]) / (self.n - 1) as f64,
            (hi[1] - lo[1]) / (self.n - 1) as f64,
        ]
    }

    /// Midpoints of grid edges whose endpoints carry different labels; the
    /// separatrix passes within half a cell of each.
    pub fn boundary_points(&self) -> Vec<[f64; 2]> {
        let mut pts = Vec::new();
        for iy in 0..self.n {
            for ix in 0..self.n {
                let here = self.label(ix, iy);
                if ix + 1 < self.n && self.label(ix + 1, iy) != here {
                    let a = self.node(ix, iy);
                    let b = self.node(ix + 1, iy);
                    pts.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
                }
                if iy + 1 < self.n && self.label(ix, iy + 1) != here {
                    let a = self.node(ix, iy);
                    let b = self.node(ix, iy + 1);
                    pts.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
                }
            }
        }
        pts
    }

    /// Integer label grid, one row per line: attractor id, −1 unresolved,
    /// −2 blow-up.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for iy in 0..self.n {
            for ix in 0..self.n {
                if ix > 0 {
                    out.push(',');
                }
                let code = match self.label(ix, iy) {
                    BasinLabel::Attractor(id) => id as i64,
                    BasinLabel::Unresolved => -1,
                    BasinLabel::Blowup => -2,
                };
                out.push_str(&code.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Attractor representatives as a JSON sidecar for the label grid.
    pub fn attractor_sidecar(&self) -> String {
        let mut out = String::from("{\"attractors\":[");
        for (i, a) in self.attractors.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let coords: Vec<String> = a.representative.iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&format!(
                "{{\"id\":{},\"kind\":\"{}\",\"point\":[{}]}}",
                a.id,
                match a.kind {
                    dynamics::AttractorKind::FixedPoint => "fixed_point",
                    dynamics::AttractorKind::LimitCycle => "limit_cycle",
                },
                coords.join(",")
            ));
        }
        out.push_str("]}");
        out
    }
}

/// Classifies every node of an n×n grid over `bbox` by forward simulation.
pub fn brute_force_basin_map(
    s: &SystemSpec,
    attractors: &[Attractor],
    bbox: ([f64; 2], [f64; 2]),
    n: usize,
) -> Result<BasinMap2D> {
    if s.n != 2 {
        return Err(Error::InvalidInput(format!(
            "direct basin map needs a 2D system, got {}D; use the slice variant",
            s.n
        )));
    }
    let origin = vec![0.0, 0.0];
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    brute_force_basin_map_slice(s, attractors, &origin, &e1, &e2, bbox, n)
}

/// Basin map over the affine slice {origin + a·e1 + b·e2 : (a,b) ∈ bbox}.
/// Grid coordinates are the slice coordinates (a, b).
pub fn brute_force_basin_map_slice(
    s: &SystemSpec,
    attractors: &[Attractor],
    origin: &[f64],
    e1: &[f64],
    e2: &[f64],
    bbox: ([f64; 2], [f64; 2]),
    n: usize,
) -> Result<BasinMap2D> {
    if n < 2 {
        return Err(Error::InvalidInput("grid needs n >= 2".into()));
    }
    if origin.len() != s.n || e1.len() != s.n || e2.len() != s.n {
        return Err(Error::InvalidInput("slice frame dimension mismatch".into()));
    }
    if attractors.is_empty() {
        return Err(Error::InvalidInput("basin map needs attractors".into()));
    }
    let (lo, hi) = bbox;
    if lo[0] >= hi[0] || lo[1] >= hi[1] {
        return Err(Error::InvalidInput("empty bounding box".into()));
    }
    let h0 = (hi[0] - lo[0]) / (n - 1) as f64;
    let h1 = (hi[1] - lo[1]) / (n - 1) as f64;
    let labels = par::map_indexed(n * n, |idx| {
        let ix = idx % n;
        let iy = idx / n;
        let a = lo[0] + ix as f64 * h0;
        let b = lo[1] + iy as f64 * h1;
        let x: Vec<f64> = (0..s.n).map(|i| origin[i] + a * e1[i] + b * e2[i]).collect();
        dynamics::classify_basin(s, &x, attractors)
    });
    if labels.iter().all(|l| l.id().is_none()) {
        return Err(Error::NoConvergence("every grid node failed to classify".into()));
    }
    Ok(BasinMap2D { bbox, n, labels, attractors: attractors.to_vec() })
}

/// Stable manifold of the Duffing saddle at the origin, computed by
/// backward integration from ±1e-4 along the stable eigenvector. Returns a
/// dense polyline clipped to `bbox` (with the saddle itself included).
pub fn duffing_stable_manifold(bbox: ([f64; 2], [f64; 2]), dt: f64) -> Result<Vec<[f64; 2]>> {
    let duffing = dynamics::duffing2d();
    let backward = SystemSpec::custom("duffing_backward", 2, dt, 50.0, 1e-6, move |x, out| {
        duffing.f(x, out);
        out[0] = -out[0];
        out[1] = -out[1];
    });
    // Stable eigenvalue of the saddle linearization: (−δ − √(δ²+4))/2.
    let delta = 0.5_f64;
    let lam_s = (-delta - (delta * delta + 4.0).sqrt()) / 2.0;
    let norm = (1.0 + lam_s * lam_s).sqrt();
    let v = [1.0 / norm, lam_s / norm];
    let (lo, hi) = bbox;
    let inside = |p: &[f64]| {
        p[0] >= lo[0] - 0.05 && p[0] <= hi[0] + 0.05 && p[1] >= lo[1] - 0.05 && p[1] <= hi[1] + 0.05
    };
    let mut pts: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    for sign in [1.0, -1.0] {
        let x0 = [sign * 1e-4 * v[0], sign * 1e-4 * v[1]];
        integrate_collect(&backward, &x0, 30.0, dt, &inside, &mut pts)?;
    }
    Ok(pts)
}

fn integrate_collect(
    s: &SystemSpec,
    x0: &[f64],
    t: f64,
    dt: f64,
    inside: &impl Fn(&[f64]) -> bool,
    pts: &mut Vec<[f64; 2]>,
) -> Result<()> {
    dynamics::integrate_observed(s, x0, t, dt, |_, x| {
        if inside(x) {
            pts.push([x[0], x[1]]);
            true
        } else {
            false
        }
    })?;
    Ok(())
}

/// Symmetric Hausdorff distance between two nonempty 2D point sets.
pub fn hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "hausdorff needs nonempty sets");
    let one_sided = |from: &[[f64; 2]], to: &[[f64; 2]]| {
        let worst = par::map_indexed(from.len(), |i| {
            let p = from[i];
            to.iter()
                .map(|q| {
                    let dx = p[0] - q[0];
                    let dy = p[1] - q[1];
                    dx * dx + dy * dy
                })
                .fold(f64::INFINITY, f64::min)
        });
        worst.into_iter().fold(0.0, f64::max)
    };
    one_sided(a, b).max(one_sided(b, a)).sqrt()
}

/// Central difference (f(x+h) − f(x−h)) / 2h.
pub fn fd_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central difference of f along v: approximates ∇f(x)·v.
pub fn fd_directional(f: impl Fn(&[f64]) -> f64, x: &[f64], v: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}
