//! Separatrix work built on a scalar field and a simulator: bisection
//! seeding, randomized Hermite validation curves, zero-crossing extraction,
//! 2D level-set tracing, and minimal-perturbation design.

use crate::autodiff::ScalarField;
use crate::dynamics::{classify_basin, Attractor, BasinLabel, SystemSpec};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::par;
use crate::training::{adam_step, AdamParams, AdamState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Retry offsets (in units of the current bracket) used when a bisection
/// midpoint fails to classify.
const NUDGES: [f64; 8] = [1e-3, -1e-3, 2e-3, -2e-3, 4e-3, -4e-3, 8e-3, -8e-3];

fn classify_resolved(
    s: &SystemSpec,
    attractors: &[Attractor],
    x: &[f64],
) -> Result<usize> {
    match classify_basin(s, x, attractors) {
        BasinLabel::Attractor(id) => Ok(id),
        other => Err(Error::NoConvergence(format!("point {x:?} classified as {other:?}"))),
    }
}

fn lerp(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Classifies a point on the α-parameterized path, nudging α slightly when
/// the classification is unresolved. Returns (α actually used, label).
fn classify_on_path(
    s: &SystemSpec,
    attractors: &[Attractor],
    path: &impl Fn(f64) -> Vec<f64>,
    alpha: f64,
    width: f64,
) -> Result<(f64, usize)> {
    if let BasinLabel::Attractor(id) = classify_basin(s, &path(alpha), attractors) {
        return Ok((alpha, id));
    }
    for d in NUDGES {
        let a = alpha + d * width;
        if !(0.0..=1.0).contains(&a) {
            continue;
        }
        if let BasinLabel::Attractor(id) = classify_basin(s, &path(a), attractors) {
            return Ok((a, id));
        }
    }
    Err(Error::NoConvergence(format!(
        "basin unresolved near path parameter {alpha} after {} retries",
        NUDGES.len()
    )))
}

/// Bisection for the basin boundary along a parameterized path with
/// endpoints in different basins. Returns (α_lo, α_hi, boundary α).
fn bisect_on_path(
    s: &SystemSpec,
    attractors: &[Attractor],
    path: &impl Fn(f64) -> Vec<f64>,
    mut lo: f64,
    mut hi: f64,
    label_lo: usize,
    label_hi: usize,
    tol_alpha: f64,
) -> Result<(f64, f64)> {
    assert_ne!(label_lo, label_hi);
    let lab_lo = label_lo;
    while hi - lo > tol_alpha {
        let mid = 0.5 * (lo + hi);
        let (a, lab) = classify_on_path(s, attractors, path, mid, hi - lo)?;
        if lab == lab_lo {
            lo = a;
        } else if lab == label_hi {
            hi = a;
        } else {
            // a third basin appeared inside the bracket; chase the boundary
            // between it and the lower endpoint's basin
            return bisect_on_path(s, attractors, path, lo, a, lab_lo, lab, tol_alpha);
        }
    }
    Ok((lo, hi))
}

/// Binary search for a separatrix point on the segment from a to b, whose
/// endpoints must classify into different basins. The bracket endpoints
/// stay in different basins throughout; the midpoint of the final bracket
/// (shorter than `tol`) is returned.
pub fn find_separatrix_point(
    s: &SystemSpec,
    attractors: &[Attractor],
    a: &[f64],
    b: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    if tol <= 0.0 {
        return Err(Error::InvalidInput("tol must be > 0".into()));
    }
    if a.len() != s.n || b.len() != s.n {
        return Err(Error::InvalidInput("endpoint dimension mismatch".into()));
    }
    let la = classify_resolved(s, attractors, a)?;
    let lb = classify_resolved(s, attractors, b)?;
    if la == lb {
        return Err(Error::InvalidInput(format!(
            "both endpoints classify into basin {la}; bisection needs a basin change"
        )));
    }
    let seg = norm(&a.iter().zip(b).map(|(x, y)| y - x).collect::<Vec<_>>());
    if seg < 1e-12 {
        return Err(Error::InvalidInput("endpoints coincide".into()));
    }
    let path = |alpha: f64| lerp(a, b, alpha);
    let tol_alpha = tol / seg;
    let (lo, hi) = bisect_on_path(s, attractors, &path, 0.0, 1.0, la, lb, tol_alpha)?;
    Ok(path(0.5 * (lo + hi)))
}

/// Cubic Hermite curve with randomized tangents; H(0) = x and H(1) = y by
/// construction of the basis.
#[derive(Debug, Clone)]
pub struct HermiteCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub m_x: Vec<f64>,
    pub m_y: Vec<f64>,
}

/// Basis (h00, h10, h01, h11) at α.
pub fn hermite_basis(alpha: f64) -> (f64, f64, f64, f64) {
    let a2 = alpha * alpha;
    let a3 = a2 * alpha;
    (
        2.0 * a3 - 3.0 * a2 + 1.0,
        a3 - 2.0 * a2 + alpha,
        -2.0 * a3 + 3.0 * a2,
        a3 - a2,
    )
}

/// H(α) = h00·x + h10·m_x + h01·y + h11·m_y for α ∈ [0, 1].
pub fn hermite_eval(c: &HermiteCurve, alpha: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&alpha), "alpha {alpha} outside [0,1]");
    let (h00, h10, h01, h11) = hermite_basis(alpha);
    (0..c.x.len())
        .map(|i| h00 * c.x[i] + h10 * c.m_x[i] + h01 * c.y[i] + h11 * c.m_y[i])
        .collect()
}

/// Draws curves between x and y with tangents (y−x)+ε, ε ~ N(0, σ²I),
/// rejecting curves that violate `constraint` at 100 points along the
/// curve. The redraw budget is 100 per requested curve.
pub fn make_curves(
    x: &[f64],
    y: &[f64],
    sigma: f64,
    n_curves: usize,
    seed: u64,
    constraint: Option<&dyn Fn(&[f64]) -> bool>,
) -> Result<Vec<HermiteCurve>> {
    if n_curves < 1 {
        return Err(Error::InvalidInput("n_curves must be >= 1".into()));
    }
    if x.len() != y.len() {
        return Err(Error::InvalidInput("endpoint dimension mismatch".into()));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidInput("sigma must be >= 0".into()));
    }
    let base: Vec<f64> = y.iter().zip(x).map(|(b, a)| b - a).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_curves);
    let mut budget = 100 * n_curves;
    while out.len() < n_curves {
        if budget == 0 {
            return Err(Error::NoConvergence(format!(
                "curve rejection budget exhausted with {}/{n_curves} curves accepted",
                out.len()
            )));
        }
        budget -= 1;
        let mut draw = |b: &Vec<f64>| -> Vec<f64> {
            b.iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        };
        let c = HermiteCurve {
            x: x.to_vec(),
            y: y.to_vec(),
            m_x: draw(&base),
            m_y: draw(&base),
        };
        let ok = match constraint {
            None => true,
            Some(f) => (0..100).all(|k| f(&hermite_eval(&c, k as f64 / 99.0))),
        };
        if ok {
            out.push(c);
        }
    }
    Ok(out)
}

/// Ground truth vs. field prediction of where a curve crosses the
/// separatrix.
#[derive(Debug, Clone)]
pub struct CurveCrossing {
    pub id: usize,
    /// Basin-change location, bisection-refined on the curve.
    pub alpha_true: f64,
    /// First ψ sign change (linear interpolation); None when ψ is
    /// one-signed along the curve, which counts as a miss.
    pub alpha_pred: Option<f64>,
    /// Total ψ sign changes along the grid; > 1 marks a multiple crossing.
    pub psi_sign_changes: usize,
    pub alphas: Vec<f64>,
    pub psi: Vec<f64>,
    pub labels: Vec<BasinLabel>,
}

/// Walks `n_grid` points along the curve, locating the true basin change by
/// simulation (refined by bisection in α) and the predicted change as the
/// first ψ sign crossing.
pub fn curve_crossings(
    s: &SystemSpec,
    attractors: &[Attractor],
    field: &(impl ScalarField + ?Sized),
    curve: &HermiteCurve,
    id: usize,
    n_grid: usize,
) -> Result<CurveCrossing> {
    if n_grid < 2 {
        return Err(Error::InvalidInput("n_grid must be >= 2".into()));
    }
    let alphas: Vec<f64> = (0..n_grid).map(|k| k as f64 / (n_grid - 1) as f64).collect();
    let labels = par::map_indexed(n_grid, |k| {
        classify_basin(s, &hermite_eval(curve, alphas[k]), attractors)
    });
    let psi: Vec<f64> = alphas.iter().map(|&a| field.eval(&hermite_eval(curve, a))).collect();

    let first = labels
        .iter()
        .find_map(|l| l.id())
        .ok_or_else(|| Error::Geometry("no point on the curve classified".into()))?;
    let mut change: Option<(usize, usize)> = None; // grid indices bracketing the change
    let mut prev_resolved = (0usize, first);
    for (k, l) in labels.iter().enumerate() {
        if let Some(lab) = l.id() {
            if lab != prev_resolved.1 {
                change = Some((prev_resolved.0, k));
                break;
            }
            prev_resolved = (k, lab);
        }
    }
    let Some((k_lo, k_hi)) = change else {
        return Err(Error::Geometry(
            "no basin change along the curve; endpoints may share a basin".into(),
        ));
    };
    let path = |a: f64| hermite_eval(curve, a);
    let lab_lo = labels[k_lo].id().unwrap();
    let lab_hi = labels[k_hi].id().unwrap();
    let (lo, hi) = bisect_on_path(
        s,
        attractors,
        &path,
        alphas[k_lo],
        alphas[k_hi],
        lab_lo,
        lab_hi,
        1e-5,
    )?;
    let alpha_true = 0.5 * (lo + hi);

    let mut alpha_pred = None;
    let mut sign_changes = 0;
    for k in 1..n_grid {
        let (p0, p1) = (psi[k - 1], psi[k]);
        if !p0.is_finite() || !p1.is_finite() {
            continue;
        }
        if (p0 >= 0.0) != (p1 >= 0.0) {
            sign_changes += 1;
            if alpha_pred.is_none() {
                let t = p0 / (p0 - p1);
                alpha_pred = Some(alphas[k - 1] + t * (alphas[k] - alphas[k - 1]));
            }
        }
    }
    Ok(CurveCrossing {
        id,
        alpha_true,
        alpha_pred,
        psi_sign_changes: sign_changes,
        alphas,
        psi,
        labels,
    })
}

/// R² of α_pred against α_true over crossings that produced a prediction.
pub fn curve_r2(crossings: &[CurveCrossing]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = crossings
        .iter()
        .filter_map(|c| c.alpha_pred.map(|p| (c.alpha_true, p)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 predicted crossings".into()));
    }
    let mean_true = pairs.iter().map(|(t, _)| t).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|(t, _)| (t - mean_true) * (t - mean_true)).sum();
    if ss_tot < 1e-12 {
        return Err(Error::InvalidInput(
            "alpha_true values are degenerate; R² undefined".into(),
        ));
    }
    let ss_res: f64 = pairs.iter().map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `curve_id, alpha, psi, basin_label` rows, one per grid point per curve.
pub fn crossings_detail_csv(crossings: &[CurveCrossing]) -> String {
    let mut out = String::from("curve_id,alpha,psi,basin_label\n");
    for c in crossings {
        for k in 0..c.alphas.len() {
            let lab = match c.labels[k] {
                BasinLabel::Attractor(i) => i as i64,
                BasinLabel::Unresolved => -1,
                BasinLabel::Blowup => -2,
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.id,
                fmt_f64(c.alphas[k]),
                fmt_f64(c.psi[k]),
                lab
            ));
        }
    }
    out
}

/// `curve_id, alpha_true, alpha_pred` summary (missing predictions print
/// an empty field).
pub fn crossings_summary_csv(crossings: &[CurveCrossing]) -> String {
    let mut out = String::from("curve_id,alpha_true,alpha_pred\n");
    for c in crossings {
        let pred = c.alpha_pred.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!("{},{},{pred}\n", c.id, fmt_f64(c.alpha_true)));
    }
    out
}

/// A 2D slice {origin + a·u + b·v} of a higher-dimensional field.
pub struct SliceField<'a, F: ScalarField + ?Sized> {
    base: &'a F,
    origin: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl<'a, F: ScalarField + ?Sized> SliceField<'a, F> {
    pub fn new(base: &'a F, origin: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = base.dim();
        if origin.len() != n || u.len() != n || v.len() != n {
            return Err(Error::InvalidInput("slice frame dimension mismatch".into()));
        }
        Ok(SliceField { base, origin, u, v })
    }

    pub fn embed(&self, a: f64, b: f64) -> Vec<f64> {
        (0..self.origin.len())
            .map(|i| self.origin[i] + a * self.u[i] + b * self.v[i])
            .collect()
    }
}

impl<F: ScalarField + ?Sized> ScalarField for SliceField<'_, F> {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.base.eval(&self.embed(x[0], x[1]))
    }

    fn directional_derivative(&self, x: &[f64], v: &[f64]) -> f64 {
        let dir: Vec<f64> = (0..self.origin.len())
            .map(|i| v[0] * self.u[i] + v[1] * self.v[i])
            .collect();
        self.base.directional_derivative(&self.embed(x[0], x[1]), &dir)
    }
}

/// Zero level set of a 2D field by marching squares with linear edge
/// interpolation; ambiguous cells are split by the sign at the cell center.
/// Returns polylines (closed loops do not repeat their first point).
pub fn trace_zero_level_2d(
    field: &(impl ScalarField + ?Sized),
    bbox: ([f64; 2], [f64; 2]),
    n: usize,
) -> Result<Vec<Vec<[f64; 2]>>> {
    if field.dim() != 2 {
        return Err(Error::InvalidInput("level-set tracing needs a 2D field".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("grid needs n >= 2".into()));
    }
    let (lo, hi) = bbox;
    let hx = (hi[0] - lo[0]) / (n - 1) as f64;
    let hy = (hi[1] - lo[1]) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo[0] + i as f64 * hx).collect();
    let ys: Vec<f64> = (0..n).map(|i| lo[1] + i as f64 * hy).collect();
    let vals = par::map_indexed(n * n, |idx| field.eval(&[xs[idx % n], ys[idx / n]]));
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field value on the level-set grid".into()));
    }
    let pos = |v: f64| v >= 0.0;
    let at = |ix: usize, iy: usize| vals[iy * n + ix];

    // edge id: (horizontal?, ix, iy). A crossing point lives on the edge
    // from node (ix,iy) to (ix+1,iy) or (ix,iy+1).
    let mut point_of: HashMap<(bool, usize, usize), usize> = HashMap::new();
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut adj: Vec<Vec<usize>> = Vec::new();
    let mut segments: Vec<(usize, usize)> = Vec::new();

    let mut edge_point = |horiz: bool, ix: usize, iy: usize| -> usize {
        *point_of.entry((horiz, ix, iy)).or_insert_with(|| {
            let (v0, p0, p1) = if horiz {
                (at(ix, iy), [xs[ix], ys[iy]], [xs[ix + 1], ys[iy]])
            } else {
                (at(ix, iy), [xs[ix], ys[iy]], [xs[ix], ys[iy + 1]])
            };
            let v1 = if horiz { at(ix + 1, iy) } else { at(ix, iy + 1) };
            let t = v0 / (v0 - v1);
            points.push([p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])]);
            adj.push(Vec::new());
            points.len() - 1
        })
    };

    for iy in 0..n - 1 {
        for ix in 0..n - 1 {
            let a = pos(at(ix, iy));
            let b = pos(at(ix + 1, iy));
            let c = pos(at(ix + 1, iy + 1));
            let d = pos(at(ix, iy + 1));
            let bottom = a != b;
            let right = b != c;
            let top = d != c;
            let left = a != d;
            let crossing_edges = [bottom, right, top, left].iter().filter(|e| **e).count();
            let mut push_seg = |e1: (bool, usize, usize), e2: (bool, usize, usize)| {
                let p1 = edge_point(e1.0, e1.1, e1.2);
                let p2 = edge_point(e2.0, e2.1, e2.2);
                segments.push((p1, p2));
            };
            let e_bottom = (true, ix, iy);
            let e_top = (true, ix, iy + 1);
            let e_left = (false, ix, iy);
            let e_right = (false, ix + 1, iy);
            match crossing_edges {
                0 => {}
                2 => {
                    let mut es = Vec::with_capacity(2);
                    if bottom {
                        es.push(e_bottom);
                    }
                    if right {
                        es.push(e_right);
                    }
                    if top {
                        es.push(e_top);
                    }
                    if left {
                        es.push(e_left);
                    }
                    push_seg(es[0], es[1]);
                }
                4 => {
                    // saddle cell: split by the field sign at the center
                    let cx = 0.5 * (xs[ix] + xs[ix + 1]);
                    let cy = 0.5 * (ys[iy] + ys[iy + 1]);
                    let center = pos(field.eval(&[cx, cy]));
                    if center == a {
                        // band through the a–c diagonal: isolate b and d
                        push_seg(e_bottom, e_right);
                        push_seg(e_top, e_left);
                    } else {
                        push_seg(e_bottom, e_left);
                        push_seg(e_top, e_right);
                    }
                }
                _ => unreachable!("odd crossing count"),
            }
        }
    }
    if segments.is_empty() {
        return Err(Error::Geometry("field has no sign change in the bounding box".into()));
    }
    for &(p1, p2) in &segments {
        adj[p1].push(p2);
        adj[p2].push(p1);
    }
    // walk open chains first (degree-1 endpoints), then closed loops
    let mut used = vec![false; points.len()];
    let mut polylines = Vec::new();
    let walk = |start: usize, used: &mut Vec<bool>| -> Vec<[f64; 2]> {
        let mut line = vec![points[start]];
        used[start] = true;
        let mut prev = usize::MAX;
        let mut here = start;
        loop {
            let next = adj[here].iter().copied().find(|&q| q != prev && !used[q]);
            match next {
                Some(q) => {
                    line.push(points[q]);
                    used[q] = true;
                    prev = here;
                    here = q;
                }
                None => break,
            }
        }
        line
    };
    for start in 0..points.len() {
        if !used[start] && adj[start].len() == 1 {
            polylines.push(walk(start, &mut used));
        }
    }
    for start in 0..points.len() {
        if !used[start] {
            polylines.push(walk(start, &mut used));
        }
    }
    Ok(polylines)
}

/// `polyline_id, x, y` rows.
pub fn levelset_csv(polylines: &[Vec<[f64; 2]>]) -> String {
    let mut out = String::from("polyline_id,x,y\n");
    for (i, line) in polylines.iter().enumerate() {
        for p in line {
            out.push_str(&format!("{i},{},{}\n", fmt_f64(p[0]), fmt_f64(p[1])));
        }
    }
    out
}

/// Smallest state perturbation that moves x_base across the field's zero
/// set into the target basin. Penalty continuation on
/// ‖Δ‖² + ρ·ψ(x_base+Δ)² with Adam (lr 1e-2), ρ ∈ {1, 10, 100, 1000},
/// 500 steps each; Δ starts at 0.9 of the vector to a bisection separatrix
/// point. The returned Δ* is verified by classifying x_base + 1.01·Δ*.
pub fn min_perturbation(
    field: &(impl ScalarField + ?Sized),
    s: &SystemSpec,
    attractors: &[Attractor],
    x_base: &[f64],
    target: usize,
) -> Result<Vec<f64>> {
    if target >= attractors.len() {
        return Err(Error::InvalidInput(format!("no attractor with id {target}")));
    }
    let base_label = classify_resolved(s, attractors, x_base)?;
    if base_label == target {
        return Err(Error::InvalidInput(
            "x_base already lies in the target basin".into(),
        ));
    }
    let seed_point = find_separatrix_point(
        s,
        attractors,
        x_base,
        &attractors[target].representative,
        1e-3,
    )?;
    let n = s.n;
    let mut delta: Vec<f64> =
        seed_point.iter().zip(x_base).map(|(p, x)| 0.9 * (p - x)).collect();
    let mut state = AdamState::new(n);
    let adam = AdamParams { lr: 1e-2, ..AdamParams::default() };
    let mut x = vec![0.0; n];
    for rho in [1.0, 10.0, 100.0, 1000.0] {
        for _ in 0..500 {
            for i in 0..n {
                x[i] = x_base[i] + delta[i];
            }
            let psi = field.eval(&x);
            let grad_psi = field.grad(&x);
            if !psi.is_finite() || grad_psi.iter().any(|g| !g.is_finite()) {
                return Err(Error::NoConvergence(
                    "perturbation optimizer diverged into a non-finite region".into(),
                ));
            }
            let g: Vec<f64> = (0..n)
                .map(|i| 2.0 * delta[i] + rho * 2.0 * psi * grad_psi[i])
                .collect();
            adam_step(&mut delta, &g, &mut state, &adam)?;
            if delta.iter().any(|d| !d.is_finite()) {
                return Err(Error::NoConvergence("perturbation optimizer diverged".into()));
            }
        }
    }
    let probe: Vec<f64> =
        x_base.iter().zip(&delta).map(|(x, d)| x + 1.01 * d).collect();
    match classify_basin(s, &probe, attractors) {
        BasinLabel::Attractor(id) if id == target => Ok(delta),
        other => Err(Error::Verification(format!(
            "overshoot landed in {other:?}, expected basin {target}"
        ))),
    }
}

/// Separatrix points found by bisection along k random directions from
/// x_base toward the target basin; the baseline set for perturbation
/// comparisons.
pub fn random_separatrix_targets(
    s: &SystemSpec,
    attractors: &[Attractor],
    x_base: &[f64],
    target: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let base_label = classify_resolved(s, attractors, x_base)?;
    if base_label == target {
        return Err(Error::InvalidInput("x_base already in the target basin".into()));
    }
    let scale = norm(
        &x_base
            .iter()
            .zip(&attractors[target].representative)
            .map(|(x, r)| r - x)
            .collect::<Vec<_>>(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    let mut budget = 40 * k;
    while out.len() < k {
        if budget == 0 {
            return Err(Error::NoConvergence(format!(
                "found only {}/{k} random separatrix targets",
                out.len()
            )));
        }
        budget -= 1;
        let mut dir: Vec<f64> =
            (0..s.n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let dn = norm(&dir);
        if dn < 1e-9 {
            continue;
        }
        for d in dir.iter_mut() {
            *d /= dn;
        }
        let mut hit = None;
        for t in [0.5, 1.0, 2.0, 4.0] {
            let p: Vec<f64> =
                x_base.iter().zip(&dir).map(|(x, d)| x + t * scale * d).collect();
            if classify_basin(s, &p, attractors) == BasinLabel::Attractor(target) {
                hit = Some(p);
                break;
            }
        }
        let Some(p) = hit else { continue };
        if let Ok(sp) = find_separatrix_point(s, attractors, x_base, &p, 1e-3) {
            out.push(sp);
        }
    }
    Ok(out)
}

/// Empirical sign-change check at extracted zero crossings: for each point,
/// offsets ±ε along the normalized finite-difference gradient must classify
/// into different basins. Returns the passing fraction.
pub fn sign_change_fraction(
    field: &(impl ScalarField + ?Sized),
    s: &SystemSpec,
    attractors: &[Attractor],
    points: &[Vec<f64>],
    eps: f64,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no crossing points supplied".into()));
    }
    let hits = par::map_indexed(points.len(), |i| {
        let p = &points[i];
        let h = 1e-6;
        let g: Vec<f64> = (0..s.n)
            .map(|k| {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus[k] += h;
                minus[k] -= h;
                (field.eval(&plus) - field.eval(&minus)) / (2.0 * h)
            })
            .collect();
        let gn = norm(&g);
        if gn < 1e-12 || !gn.is_finite() {
            return false;
        }
        let side = |sign: f64| {
            let q: Vec<f64> =
                p.iter().zip(&g).map(|(x, gi)| x + sign * eps * gi / gn).collect();
            classify_basin(s, &q, attractors)
        };
        match (side(1.0), side(-1.0)) {
            (BasinLabel::Attractor(a), BasinLabel::Attractor(b)) => a != b,
            _ => false,
        }
    });
    Ok(hits.iter().filter(|h| **h).count() as f64 / points.len() as f64)
}
