//! Differentiation plumbing: flat parameter vectors with named block layouts,
//! scalar dual numbers for forward-mode closures, batched dual carriers, and
//! the gradient entry point that reverse-accumulates through the forward-mode
//! tangent pass of a model.

use crate::error::{Error, Result};
use crate::models::KefModel;
use ndarray::{Array1, Array2};
use std::sync::Arc;

/// One named parameter block inside a flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Ordered block layout; stable for the lifetime of a model.
#[derive(Debug, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<BlockSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn build(blocks: &[(&str, usize, usize)]) -> Arc<ParamLayout> {
        let mut out = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for &(name, rows, cols) in blocks {
            out.push(BlockSpec { name: name.to_string(), rows, cols, offset });
            offset += rows * cols;
        }
        Arc::new(ParamLayout { blocks: out, total: offset })
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn find(&self, name: &str) -> Option<&BlockSpec> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Flat parameter vector tied to a layout.
#[derive(Debug, Clone)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let n = layout.total_len();
        ParamVector { values: vec![0.0; n], layout }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), layout.total_len(), "value count does not match layout");
        ParamVector { values, layout }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> &[f64] {
        let b = self.layout.find(name).unwrap_or_else(|| panic!("no block named {name}"));
        &self.values[b.offset..b.offset + b.len()]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [f64] {
        let b = self
            .layout
            .find(name)
            .unwrap_or_else(|| panic!("no block named {name}"))
            .clone();
        &mut self.values[b.offset..b.offset + b.len()]
    }

    /// Elementwise `self += other`; layouts must be the same object or equal.
    pub fn add_assign(&mut self, other: &ParamVector) {
        assert!(
            Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout,
            "layout mismatch"
        );
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }

    /// Name of the first block containing a non-finite entry, if any.
    pub fn first_non_finite_block(&self) -> Option<&str> {
        for b in self.layout.blocks() {
            if self.values[b.offset..b.offset + b.len()].iter().any(|v| !v.is_finite()) {
                return Some(&b.name);
            }
        }
        None
    }
}

/// Batch of points with one tangent direction per sample (rows are samples).
#[derive(Debug, Clone)]
pub struct DualBatch {
    pub primal: Array2<f64>,
    pub tangent: Array2<f64>,
}

impl DualBatch {
    pub fn new(primal: Array2<f64>, tangent: Array2<f64>) -> Self {
        assert_eq!(primal.dim(), tangent.dim(), "primal and tangent shapes differ");
        DualBatch { primal, tangent }
    }

    pub fn n_samples(&self) -> usize {
        self.primal.nrows()
    }

    pub fn dim(&self) -> usize {
        self.primal.ncols()
    }
}

/// Scalar dual number for forward-mode derivatives of closed-form fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub x: f64,
    pub dx: f64,
}

impl Dual {
    pub fn var(x: f64, dx: f64) -> Self {
        Dual { x, dx }
    }

    pub fn constant(x: f64) -> Self {
        Dual { x, dx: 0.0 }
    }

    pub fn tanh(self) -> Self {
        let t = self.x.tanh();
        Dual { x: t, dx: (1.0 - t * t) * self.dx }
    }

    pub fn exp(self) -> Self {
        let e = self.x.exp();
        Dual { x: e, dx: e * self.dx }
    }

    pub fn sqrt(self) -> Self {
        let s = self.x.sqrt();
        Dual { x: s, dx: self.dx / (2.0 * s) }
    }

    pub fn powi(self, n: i32) -> Self {
        let p = self.x.powi(n - 1);
        Dual { x: p * self.x, dx: n as f64 * p * self.dx }
    }

    /// x^p for real p; requires x > 0.
    pub fn powf(self, p: f64) -> Self {
        let v = self.x.powf(p);
        Dual { x: v, dx: p * self.x.powf(p - 1.0) * self.dx }
    }
}

impl std::ops::Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { x: self.x + o.x, dx: self.dx + o.dx }
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { x: self.x - o.x, dx: self.dx - o.dx }
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { x: self.x * o.x, dx: self.x * o.dx + self.dx * o.x }
    }
}

impl std::ops::Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { x: self.x / o.x, dx: (self.dx * o.x - self.x * o.dx) / (o.x * o.x) }
    }
}

impl std::ops::Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { x: -self.x, dx: -self.dx }
    }
}

impl std::ops::Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, c: f64) -> Dual {
        Dual { x: self.x * c, dx: self.dx * c }
    }
}

impl std::ops::Add<f64> for Dual {
    type Output = Dual;
    fn add(self, c: f64) -> Dual {
        Dual { x: self.x + c, dx: self.dx }
    }
}

impl std::ops::Sub<f64> for Dual {
    type Output = Dual;
    fn sub(self, c: f64) -> Dual {
        Dual { x: self.x - c, dx: self.dx }
    }
}

/// A differentiable scalar field over R^d: trained models, analytic
/// references, and test closures all implement this.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;

    /// ψ(x); pure and reproducible for fixed state.
    fn eval(&self, x: &[f64]) -> f64;

    /// ∇ψ(x)·v via a single forward-mode pass (no full Jacobian).
    fn directional_derivative(&self, x: &[f64], v: &[f64]) -> f64;

    /// ∇ψ(x). Default: central finite differences, h=1e-6. Implementations
    /// with exact derivatives override this.
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let mut xp = x.to_vec();
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() {
            let xi = x[i];
            xp[i] = xi + h;
            let fp = self.eval(&xp);
            xp[i] = xi - h;
            let fm = self.eval(&xp);
            xp[i] = xi;
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }
}

/// Scalar field defined by a dual-number closure; the forward-mode machinery
/// supplies exact directional derivatives of whatever the closure computes.
pub struct ClosureField<F> {
    pub d: usize,
    pub f: F,
}

impl<F> ClosureField<F>
where
    F: Fn(&[Dual]) -> Dual + Sync,
{
    pub fn new(d: usize, f: F) -> Self {
        ClosureField { d, f }
    }
}

impl<F> ScalarField for ClosureField<F>
where
    F: Fn(&[Dual]) -> Dual + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.d, "dimension mismatch");
        let args: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
        (self.f)(&args).x
    }

    fn directional_derivative(&self, x: &[f64], v: &[f64]) -> f64 {
        assert_eq!(x.len(), self.d, "dimension mismatch");
        assert_eq!(v.len(), self.d, "dimension mismatch");
        let args: Vec<Dual> = x.iter().zip(v).map(|(&a, &b)| Dual::var(a, b)).collect();
        (self.f)(&args).dx
    }
}

/// Computes a scalar loss over a batch and its parameter gradient.
///
/// The loss head sees the batch values ψ_i and D_i = ∇ψ(x_i)·v_i and returns
/// `(value, ∂loss/∂ψ, ∂loss/∂D)`; the gradient is then reverse-accumulated
/// through the model's forward-mode tangent pass. Sample accumulation order
/// is fixed, so the result is deterministic for fixed inputs.
pub fn loss_gradient<F>(model: &KefModel, batch: &DualBatch, head: F) -> Result<(f64, ParamVector)>
where
    F: FnOnce(&Array1<f64>, &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>),
{
    let (psi, dpsi, trace) = model.forward_dual_batch(batch);
    if let Some(i) = psi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("model output psi[{i}]")));
    }
    if let Some(i) = dpsi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("directional derivative dpsi[{i}]")));
    }
    let (value, psi_bar, dpsi_bar) = head(&psi, &dpsi);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    if psi_bar.iter().chain(dpsi_bar.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss seed (∂loss/∂psi or ∂loss/∂dpsi)".into()));
    }
    let grad = model.backward_batch(&trace, &psi_bar, &dpsi_bar);
    if let Some(name) = grad.first_non_finite_block() {
        return Err(Error::NonFinite(format!("parameter gradient block {name}")));
    }
    Ok((value, grad))
}
