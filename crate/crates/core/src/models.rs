//! KEF model families: a padded residual network with tanh blocks and a
//! Gaussian radial-basis-function layer. Both provide batched primal+tangent
//! forward passes and reverse accumulation through the tangent pass, so a
//! loss over (ψ_i, ∇ψ(x_i)·v_i) differentiates in one backward sweep.

use crate::autodiff::{DualBatch, ParamLayout, ParamVector, ScalarField};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, BlockFile};
use crate::par;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;

const GRAD_CHUNK: usize = 128;

/// Residual network ψ(x) = W_out x^(L) + b_out with
/// x^(0) = Pad(a·x) and x^(ℓ+1) = x^(ℓ) + tanh(W^(ℓ)x^(ℓ) + b^(ℓ)).
/// `l_layers` counts layers as a depth hyperparameter: there are
/// `l_layers − 1` residual updates, and `l_layers = 1` applies the output
/// head directly to the padded input.
pub struct ResNetKef {
    pub d_in: usize,
    pub d_hid: usize,
    pub l_layers: usize,
    /// Fixed input scale chosen so entries of x^(0) are O(1); not trained.
    pub a: f64,
    w: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
    w_out: Array1<f64>,
    b_out: f64,
    layout: Arc<ParamLayout>,
}

/// ψ(x) = Σ_i a_i exp(−ε_i²‖x−c_i‖²). All of (weights, centers, shapes)
/// are trained.
pub struct RbfKef {
    pub d_in: usize,
    pub m: usize,
    centers: Array2<f64>,
    shapes: Array1<f64>,
    weights: Array1<f64>,
    layout: Arc<ParamLayout>,
}

pub enum KefModel {
    ResNet(ResNetKef),
    Rbf(RbfKef),
}

/// Model shape request for [`init_model`].
#[derive(Debug, Clone, Copy)]
pub enum ModelShape {
    ResNet { d_hid: usize, l_layers: usize },
    Rbf { m: usize },
}

/// Reserved sample-stream index for drawing `init_model` preview batches;
/// keeps initialization draws disjoint from training and evaluation batches.
pub const INIT_PREVIEW_CALL: u64 = u64::MAX - 4;

/// Cached intermediates from a forward pass, consumed by `backward_batch`.
pub enum Trace {
    ResNet {
        p_in: Vec<Array2<f64>>,
        t_in: Vec<Array2<f64>>,
        s: Vec<Array2<f64>>,
        u: Vec<Array2<f64>>,
        p_last: Array2<f64>,
        t_last: Array2<f64>,
    },
    Rbf {
        x: Array2<f64>,
        v: Array2<f64>,
    },
}

fn resnet_layout(d_hid: usize, l_layers: usize) -> Arc<ParamLayout> {
    let mut blocks: Vec<(String, usize, usize)> = Vec::new();
    for l in 1..l_layers {
        blocks.push((format!("w{l}"), d_hid, d_hid));
        blocks.push((format!("b{l}"), d_hid, 1));
    }
    blocks.push(("w_out".into(), 1, d_hid));
    blocks.push(("b_out".into(), 1, 1));
    let refs: Vec<(&str, usize, usize)> =
        blocks.iter().map(|(n, r, c)| (n.as_str(), *r, *c)).collect();
    ParamLayout::build(&refs)
}

fn rbf_layout(m: usize, d_in: usize) -> Arc<ParamLayout> {
    ParamLayout::build(&[("centers", m, d_in), ("shapes", m, 1), ("weights", m, 1)])
}

impl ResNetKef {
    pub fn new(
        d_in: usize,
        d_hid: usize,
        l_layers: usize,
        a: f64,
        w: Vec<Array2<f64>>,
        b: Vec<Array1<f64>>,
        w_out: Array1<f64>,
        b_out: f64,
    ) -> Result<Self> {
        if d_hid <= d_in {
            return Err(Error::InvalidInput(format!(
                "d_hid={d_hid} must exceed d_in={d_in} for zero padding"
            )));
        }
        if l_layers < 1 {
            return Err(Error::InvalidInput("l_layers must be >= 1".into()));
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidInput(format!("input scale a={a} must be positive")));
        }
        if w.len() != l_layers - 1 || b.len() != l_layers - 1 {
            return Err(Error::InvalidInput("expected l_layers-1 weight/bias blocks".into()));
        }
        for (i, wi) in w.iter().enumerate() {
            if wi.dim() != (d_hid, d_hid) || b[i].len() != d_hid {
                return Err(Error::InvalidInput(format!("block {} has wrong shape", i + 1)));
            }
        }
        if w_out.len() != d_hid {
            return Err(Error::InvalidInput("w_out length must equal d_hid".into()));
        }
        let all_finite = w.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && b.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && w_out.iter().all(|v| v.is_finite())
            && b_out.is_finite();
        if !all_finite {
            return Err(Error::NonFinite("residual net parameters".into()));
        }
        let layout = resnet_layout(d_hid, l_layers);
        Ok(ResNetKef { d_in, d_hid, l_layers, a, w, b, w_out, b_out, layout })
    }

    pub fn zeros(d_in: usize, d_hid: usize, l_layers: usize, a: f64) -> Result<Self> {
        let w = (1..l_layers).map(|_| Array2::zeros((d_hid, d_hid))).collect();
        let b = (1..l_layers).map(|_| Array1::zeros(d_hid)).collect();
        Self::new(d_in, d_hid, l_layers, a, w, b, Array1::zeros(d_hid), 0.0)
    }

    /// x^(0) = Pad(a·x), one row per sample.
    fn pad_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.d_in, "dimension mismatch: got {}", x.ncols());
        let mut p = Array2::zeros((x.nrows(), self.d_hid));
        p.slice_mut(ndarray::s![.., ..self.d_in]).assign(&(x * self.a));
        p
    }

    fn pad_single(&self, x: &[f64]) -> Array1<f64> {
        assert_eq!(x.len(), self.d_in, "dimension mismatch: got {}", x.len());
        let mut p = Array1::zeros(self.d_hid);
        for (i, &xi) in x.iter().enumerate() {
            p[i] = self.a * xi;
        }
        p
    }

    fn eval_single(&self, x: &[f64]) -> f64 {
        let mut p = self.pad_single(x);
        for (w, b) in self.w.iter().zip(&self.b) {
            let z = w.dot(&p) + b;
            p += &z.mapv(f64::tanh);
        }
        self.w_out.dot(&p) + self.b_out
    }

    fn dual_single(&self, x: &[f64], v: &[f64]) -> (f64, f64) {
        assert_eq!(v.len(), self.d_in, "dimension mismatch: got {}", v.len());
        let mut p = self.pad_single(x);
        let mut t = self.pad_single(v);
        for (w, b) in self.w.iter().zip(&self.b) {
            let z = w.dot(&p) + b;
            let s = z.mapv(f64::tanh);
            let u = w.dot(&t);
            Zip::from(&mut t).and(&s).and(&u).for_each(|t, &s, &u| *t += (1.0 - s * s) * u);
            p += &s;
        }
        (self.w_out.dot(&p) + self.b_out, self.w_out.dot(&t))
    }

    fn grad_input_single(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.pad_single(x);
        let n_blocks = self.w.len();
        let mut p_hist = Vec::with_capacity(n_blocks);
        let mut s_hist = Vec::with_capacity(n_blocks);
        for (w, b) in self.w.iter().zip(&self.b) {
            let s = (w.dot(&p) + b).mapv(f64::tanh);
            p_hist.push(p.clone());
            s_hist.push(s.clone());
            p += &s;
        }
        let mut p_bar = self.w_out.clone();
        for l in (0..n_blocks).rev() {
            // z_bar = (1 - s^2) ⊙ p_bar; p_bar += W^T z_bar
            let z_bar =
                Zip::from(&s_hist[l]).and(&p_bar).map_collect(|&s, &pb| (1.0 - s * s) * pb);
            p_bar += &self.w[l].t().dot(&z_bar);
        }
        let _ = p_hist;
        (0..self.d_in).map(|i| self.a * p_bar[i]).collect()
    }

    fn forward_dual_batch(&self, batch: &DualBatch) -> (Array1<f64>, Array1<f64>, Trace) {
        let n_blocks = self.w.len();
        let mut p = self.pad_batch(&batch.primal);
        let mut t = self.pad_batch(&batch.tangent);
        let mut p_in = Vec::with_capacity(n_blocks);
        let mut t_in = Vec::with_capacity(n_blocks);
        let mut s_hist = Vec::with_capacity(n_blocks);
        let mut u_hist = Vec::with_capacity(n_blocks);
        for (w, b) in self.w.iter().zip(&self.b) {
            let mut z = p.dot(&w.t());
            z += b;
            let s = z.mapv_into(f64::tanh);
            let u = t.dot(&w.t());
            p_in.push(p.clone());
            t_in.push(t.clone());
            p += &s;
            Zip::from(&mut t).and(&s).and(&u).for_each(|t, &s, &u| *t += (1.0 - s * s) * u);
            s_hist.push(s);
            u_hist.push(u);
        }
        let psi = p.dot(&self.w_out) + self.b_out;
        let dpsi = t.dot(&self.w_out);
        let trace = Trace::ResNet {
            p_in,
            t_in,
            s: s_hist,
            u: u_hist,
            p_last: p,
            t_last: t,
        };
        (psi, dpsi, trace)
    }

    fn backward_batch(
        &self,
        trace: &Trace,
        psi_bar: &Array1<f64>,
        dpsi_bar: &Array1<f64>,
    ) -> ParamVector {
        let Trace::ResNet { p_in, t_in, s, u, p_last, t_last } = trace else {
            panic!("trace kind does not match model kind");
        };
        let n_blocks = self.w.len();
        let mut grad = ParamVector::zeros(self.layout.clone());

        let w_out_bar = p_last.t().dot(psi_bar) + t_last.t().dot(dpsi_bar);
        grad.block_mut("w_out").copy_from_slice(w_out_bar.as_slice().unwrap());
        grad.block_mut("b_out")[0] = psi_bar.sum();

        let pb_col = psi_bar.view().insert_axis(Axis(1));
        let db_col = dpsi_bar.view().insert_axis(Axis(1));
        let wo_row = self.w_out.view().insert_axis(Axis(0));
        let mut p_bar: Array2<f64> = &pb_col * &wo_row;
        let mut t_bar: Array2<f64> = &db_col * &wo_row;

        for l in (0..n_blocks).rev() {
            // g = (1−s²)⊙t̄ ; z̄ = (1−s²)⊙(p̄ − 2s⊙u⊙t̄)
            let g = Zip::from(&s[l]).and(&t_bar).map_collect(|&s, &tb| (1.0 - s * s) * tb);
            let z_bar = Zip::from(&s[l])
                .and(&u[l])
                .and(&p_bar)
                .and(&t_bar)
                .map_collect(|&s, &u, &pb, &tb| (1.0 - s * s) * (pb - 2.0 * s * u * tb));
            let w_bar = z_bar.t().dot(&p_in[l]) + g.t().dot(&t_in[l]);
            let b_bar = z_bar.sum_axis(Axis(0));
            grad.block_mut(&format!("w{}", l + 1))
                .copy_from_slice(w_bar.as_slice().unwrap());
            grad.block_mut(&format!("b{}", l + 1))
                .copy_from_slice(b_bar.as_slice().unwrap());
            p_bar += &z_bar.dot(&self.w[l]);
            t_bar += &g.dot(&self.w[l]);
        }
        grad
    }

    fn params(&self) -> ParamVector {
        let mut p = ParamVector::zeros(self.layout.clone());
        for (l, (w, b)) in self.w.iter().zip(&self.b).enumerate() {
            p.block_mut(&format!("w{}", l + 1)).copy_from_slice(w.as_slice().unwrap());
            p.block_mut(&format!("b{}", l + 1)).copy_from_slice(b.as_slice().unwrap());
        }
        p.block_mut("w_out").copy_from_slice(self.w_out.as_slice().unwrap());
        p.block_mut("b_out")[0] = self.b_out;
        p
    }

    fn set_params(&mut self, p: &ParamVector) {
        assert!(p.layout().as_ref() == self.layout.as_ref(), "layout mismatch");
        for l in 0..self.w.len() {
            self.w[l]
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(p.block(&format!("w{}", l + 1)));
            self.b[l]
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(p.block(&format!("b{}", l + 1)));
        }
        self.w_out.as_slice_mut().unwrap().copy_from_slice(p.block("w_out"));
        self.b_out = p.block("b_out")[0];
    }

    #[cfg(test)]
    fn hidden_states(&self, x: &[f64]) -> Vec<Array1<f64>> {
        let mut p = self.pad_single(x);
        let mut states = vec![p.clone()];
        for (w, b) in self.w.iter().zip(&self.b) {
            let z = w.dot(&p) + b;
            p += &z.mapv(f64::tanh);
            states.push(p.clone());
        }
        states
    }
}

impl RbfKef {
    pub fn new(
        centers: Array2<f64>,
        shapes: Array1<f64>,
        weights: Array1<f64>,
    ) -> Result<Self> {
        let m = centers.nrows();
        let d_in = centers.ncols();
        if m == 0 || d_in == 0 {
            return Err(Error::InvalidInput("RBF needs at least one unit and dimension".into()));
        }
        if shapes.len() != m || weights.len() != m {
            return Err(Error::InvalidInput("shapes/weights length must equal unit count".into()));
        }
        if shapes.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::InvalidInput("shape parameters must be positive".into()));
        }
        if centers.iter().chain(weights.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RBF parameters".into()));
        }
        let layout = rbf_layout(m, d_in);
        Ok(RbfKef { d_in, m, centers, shapes, weights, layout })
    }

    fn eval_single(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.d_in, "dimension mismatch: got {}", x.len());
        let mut acc = 0.0;
        for i in 0..self.m {
            let c = self.centers.row(i);
            let q: f64 = x.iter().zip(c).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let e = self.shapes[i];
            acc += self.weights[i] * (-e * e * q).exp();
        }
        acc
    }

    fn dual_single(&self, x: &[f64], v: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.d_in, "dimension mismatch: got {}", x.len());
        assert_eq!(v.len(), self.d_in, "dimension mismatch: got {}", v.len());
        let mut psi = 0.0;
        let mut dpsi = 0.0;
        for i in 0..self.m {
            let c = self.centers.row(i);
            let mut q = 0.0;
            let mut dq = 0.0;
            for k in 0..self.d_in {
                let r = x[k] - c[k];
                q += r * r;
                dq += 2.0 * r * v[k];
            }
            let e = self.shapes[i];
            let phi = (-e * e * q).exp();
            psi += self.weights[i] * phi;
            dpsi += self.weights[i] * (-e * e * dq) * phi;
        }
        (psi, dpsi)
    }

    fn grad_input_single(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d_in];
        for i in 0..self.m {
            let c = self.centers.row(i);
            let q: f64 = x.iter().zip(c).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let e = self.shapes[i];
            let scale = self.weights[i] * (-e * e * q).exp() * (-2.0 * e * e);
            for k in 0..self.d_in {
                g[k] += scale * (x[k] - c[k]);
            }
        }
        g
    }

    fn forward_dual_batch(&self, batch: &DualBatch) -> (Array1<f64>, Array1<f64>, Trace) {
        let b = batch.n_samples();
        assert_eq!(batch.dim(), self.d_in, "dimension mismatch: got {}", batch.dim());
        let pairs = par::map_indexed(b, |i| {
            let x = batch.primal.row(i);
            let v = batch.tangent.row(i);
            self.dual_single(x.as_slice().unwrap(), v.as_slice().unwrap())
        });
        let psi = Array1::from_iter(pairs.iter().map(|p| p.0));
        let dpsi = Array1::from_iter(pairs.iter().map(|p| p.1));
        let trace = Trace::Rbf { x: batch.primal.clone(), v: batch.tangent.clone() };
        (psi, dpsi, trace)
    }

    fn backward_batch(
        &self,
        trace: &Trace,
        psi_bar: &Array1<f64>,
        dpsi_bar: &Array1<f64>,
    ) -> ParamVector {
        let Trace::Rbf { x, v } = trace else {
            panic!("trace kind does not match model kind");
        };
        let n = x.nrows();
        let d = self.d_in;
        let mut grad = ParamVector::zeros(self.layout.clone());
        // Per-chunk partials folded in chunk order keep the sum deterministic.
        par::fold_chunks(
            n,
            GRAD_CHUNK,
            |range| {
                let mut gc = vec![0.0; self.m * d]; // centers
                let mut ge = vec![0.0; self.m]; // shapes
                let mut ga = vec![0.0; self.m]; // weights
                for bi in range {
                    let xr = x.row(bi);
                    let vr = v.row(bi);
                    let alpha = psi_bar[bi];
                    let beta = dpsi_bar[bi];
                    for i in 0..self.m {
                        let c = self.centers.row(i);
                        let mut q = 0.0;
                        let mut dq = 0.0;
                        for k in 0..d {
                            let r = xr[k] - c[k];
                            q += r * r;
                            dq += 2.0 * r * vr[k];
                        }
                        let e = self.shapes[i];
                        let e2 = e * e;
                        let phi = (-e2 * q).exp();
                        let a_i = self.weights[i];
                        ga[i] += alpha * phi + beta * (-e2 * dq) * phi;
                        let phi_bar = alpha * a_i + beta * a_i * (-e2 * dq);
                        let dq_bar = beta * a_i * (-e2) * phi;
                        let q_bar = phi_bar * (-e2) * phi;
                        ge[i] += -2.0 * e * (phi_bar * q * phi + beta * a_i * dq * phi);
                        for k in 0..d {
                            let r = xr[k] - c[k];
                            gc[i * d + k] += -2.0 * (q_bar * r + dq_bar * vr[k]);
                        }
                    }
                }
                (gc, ge, ga)
            },
            |(gc, ge, ga)| {
                for (dst, src) in grad.block_mut("centers").iter_mut().zip(&gc) {
                    *dst += src;
                }
                for (dst, src) in grad.block_mut("shapes").iter_mut().zip(&ge) {
                    *dst += src;
                }
                for (dst, src) in grad.block_mut("weights").iter_mut().zip(&ga) {
                    *dst += src;
                }
            },
        );
        grad
    }

    fn params(&self) -> ParamVector {
        let mut p = ParamVector::zeros(self.layout.clone());
        p.block_mut("centers").copy_from_slice(self.centers.as_slice().unwrap());
        p.block_mut("shapes").copy_from_slice(self.shapes.as_slice().unwrap());
        p.block_mut("weights").copy_from_slice(self.weights.as_slice().unwrap());
        p
    }

    fn set_params(&mut self, p: &ParamVector) {
        assert!(p.layout().as_ref() == self.layout.as_ref(), "layout mismatch");
        self.centers.as_slice_mut().unwrap().copy_from_slice(p.block("centers"));
        self.shapes.as_slice_mut().unwrap().copy_from_slice(p.block("shapes"));
        self.weights.as_slice_mut().unwrap().copy_from_slice(p.block("weights"));
    }
}

impl KefModel {
    pub fn d_in(&self) -> usize {
        match self {
            KefModel::ResNet(m) => m.d_in,
            KefModel::Rbf(m) => m.d_in,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            KefModel::ResNet(_) => "resnet",
            KefModel::Rbf(_) => "rbf",
        }
    }

    /// Evaluates ψ on every row of `x` (primal only).
    pub fn eval_batch(&self, x: &Array2<f64>) -> Array1<f64> {
        match self {
            KefModel::ResNet(m) => {
                let mut p = m.pad_batch(x);
                for (w, b) in m.w.iter().zip(&m.b) {
                    let mut z = p.dot(&w.t());
                    z += b;
                    p += &z.mapv_into(f64::tanh);
                }
                p.dot(&m.w_out) + m.b_out
            }
            KefModel::Rbf(m) => {
                let vals = par::map_indexed(x.nrows(), |i| {
                    m.eval_single(x.row(i).as_slice().unwrap())
                });
                Array1::from_vec(vals)
            }
        }
    }

    /// Batched primal+tangent forward pass; the trace feeds `backward_batch`.
    pub fn forward_dual_batch(&self, batch: &DualBatch) -> (Array1<f64>, Array1<f64>, Trace) {
        match self {
            KefModel::ResNet(m) => m.forward_dual_batch(batch),
            KefModel::Rbf(m) => m.forward_dual_batch(batch),
        }
    }

    /// Reverse accumulation through the tangent pass: given ∂loss/∂ψ_i and
    /// ∂loss/∂D_i (D_i the per-sample directional derivative), returns
    /// ∂loss/∂θ. Deterministic for fixed inputs at any thread count.
    pub fn backward_batch(
        &self,
        trace: &Trace,
        psi_bar: &Array1<f64>,
        dpsi_bar: &Array1<f64>,
    ) -> ParamVector {
        match self {
            KefModel::ResNet(m) => m.backward_batch(trace, psi_bar, dpsi_bar),
            KefModel::Rbf(m) => m.backward_batch(trace, psi_bar, dpsi_bar),
        }
    }

    /// Exact ∇ψ(x) with respect to the input, by reverse accumulation.
    pub fn grad_input(&self, x: &[f64]) -> Vec<f64> {
        match self {
            KefModel::ResNet(m) => m.grad_input_single(x),
            KefModel::Rbf(m) => m.grad_input_single(x),
        }
    }

    pub fn layout(&self) -> Arc<ParamLayout> {
        match self {
            KefModel::ResNet(m) => m.layout.clone(),
            KefModel::Rbf(m) => m.layout.clone(),
        }
    }

    pub fn params(&self) -> ParamVector {
        match self {
            KefModel::ResNet(m) => m.params(),
            KefModel::Rbf(m) => m.params(),
        }
    }

    pub fn set_params(&mut self, p: &ParamVector) {
        match self {
            KefModel::ResNet(m) => m.set_params(p),
            KefModel::Rbf(m) => m.set_params(p),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BlockFile::new(&format!("KEFMODEL v1 {}", self.kind_name()));
        match self {
            KefModel::ResNet(m) => {
                f.push_scalar("d_in", m.d_in.to_string());
                f.push_scalar("d_hid", m.d_hid.to_string());
                f.push_scalar("l_layers", m.l_layers.to_string());
                f.push_scalar("a", fmt_f64(m.a));
                for (l, (w, b)) in m.w.iter().zip(&m.b).enumerate() {
                    f.push_block(&format!("w{}", l + 1), m.d_hid, m.d_hid, w.iter().copied().collect());
                    f.push_block(&format!("b{}", l + 1), m.d_hid, 1, b.to_vec());
                }
                f.push_block("w_out", 1, m.d_hid, m.w_out.to_vec());
                f.push_block("b_out", 1, 1, vec![m.b_out]);
            }
            KefModel::Rbf(m) => {
                f.push_scalar("d_in", m.d_in.to_string());
                f.push_scalar("m", m.m.to_string());
                f.push_block("centers", m.m, m.d_in, m.centers.iter().copied().collect());
                // Shapes enter the model only as ε²; persist the canonical
                // positive representative so the ε>0 invariant survives.
                f.push_block("shapes", m.m, 1, m.shapes.iter().map(|e| e.abs()).collect());
                f.push_block("weights", m.m, 1, m.weights.to_vec());
            }
        }
        f.write(path)
    }

    pub fn load(path: &Path) -> Result<KefModel> {
        let f = BlockFile::read(path)?;
        let parts: Vec<&str> = f.header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "KEFMODEL" || parts[1] != "v1" {
            return Err(Error::InvalidInput(format!("bad checkpoint header {:?}", f.header)));
        }
        match parts[2] {
            "resnet" => {
                let d_in = f.scalar_usize("d_in")?;
                let d_hid = f.scalar_usize("d_hid")?;
                let l_layers = f.scalar_usize("l_layers")?;
                let a = f.scalar_f64("a")?;
                let mut w = Vec::new();
                let mut b = Vec::new();
                for l in 1..l_layers {
                    let wb = f.block(&format!("w{l}"))?;
                    let bb = f.block(&format!("b{l}"))?;
                    w.push(Array2::from_shape_vec((wb.rows, wb.cols), wb.data.clone()).unwrap());
                    b.push(Array1::from_vec(bb.data.clone()));
                }
                let wo = f.block("w_out")?;
                let bo = f.block("b_out")?;
                let net = ResNetKef::new(
                    d_in,
                    d_hid,
                    l_layers,
                    a,
                    w,
                    b,
                    Array1::from_vec(wo.data.clone()),
                    bo.data[0],
                )?;
                Ok(KefModel::ResNet(net))
            }
            "rbf" => {
                let d_in = f.scalar_usize("d_in")?;
                let m = f.scalar_usize("m")?;
                let cb = f.block("centers")?;
                if cb.rows != m || cb.cols != d_in {
                    return Err(Error::InvalidInput("centers block shape mismatch".into()));
                }
                let eb = f.block("shapes")?;
                let ab = f.block("weights")?;
                let rbf = RbfKef::new(
                    Array2::from_shape_vec((m, d_in), cb.data.clone()).unwrap(),
                    Array1::from_vec(eb.data.clone()),
                    Array1::from_vec(ab.data.clone()),
                )?;
                Ok(KefModel::Rbf(rbf))
            }
            other => Err(Error::InvalidInput(format!("unknown model kind {other:?}"))),
        }
    }
}

impl ScalarField for KefModel {
    fn dim(&self) -> usize {
        self.d_in()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            KefModel::ResNet(m) => m.eval_single(x),
            KefModel::Rbf(m) => m.eval_single(x),
        }
    }

    fn directional_derivative(&self, x: &[f64], v: &[f64]) -> f64 {
        match self {
            KefModel::ResNet(m) => m.dual_single(x, v).1,
            KefModel::Rbf(m) => m.dual_single(x, v).1,
        }
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.grad_input(x)
    }
}

/// Builds a model with data-informed initialization: ResNet weights and
/// biases uniform in ±1/√d_hid (nonzero biases stop first-layer units from
/// collapsing onto one odd function of a low-dimensional input) and input
/// scale a = 1/RMS over all preview coordinates; RBF centers drawn from the
/// preview, one shared shape 1/(median pairwise center distance), weights
/// uniform in ±1/√M. Deterministic per seed.
pub fn init_model(
    shape: ModelShape,
    d_in: usize,
    seed: u64,
    sample_preview: &Array2<f64>,
) -> Result<KefModel> {
    if sample_preview.nrows() == 0 {
        return Err(Error::InvalidInput("empty preview batch".into()));
    }
    if sample_preview.ncols() != d_in {
        return Err(Error::InvalidInput("preview dimension mismatch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match shape {
        ModelShape::ResNet { d_hid, l_layers } => {
            let bound = 1.0 / (d_hid as f64).sqrt();
            let mut w = Vec::new();
            let mut b = Vec::new();
            for _ in 1..l_layers {
                w.push(Array2::from_shape_fn((d_hid, d_hid), |_| {
                    rng.gen_range(-bound..bound)
                }));
                b.push(Array1::from_shape_fn(d_hid, |_| rng.gen_range(-bound..bound)));
            }
            let w_out = Array1::from_shape_fn(d_hid, |_| rng.gen_range(-bound..bound));
            let b_out = rng.gen_range(-bound..bound);
            let ms: f64 = sample_preview.iter().map(|&v| v * v).sum::<f64>()
                / (sample_preview.len() as f64);
            let rms = ms.sqrt();
            let a = if rms > 1e-12 { 1.0 / rms } else { 1.0 };
            Ok(KefModel::ResNet(ResNetKef::new(d_in, d_hid, l_layers, a, w, b, w_out, b_out)?))
        }
        ModelShape::Rbf { m } => {
            if m == 0 {
                return Err(Error::InvalidInput("RBF needs at least one unit".into()));
            }
            let n = sample_preview.nrows();
            let mut centers = Array2::zeros((m, d_in));
            if n >= m {
                let idx = rand::seq::index::sample(&mut rng, n, m);
                for (row, i) in idx.into_iter().enumerate() {
                    centers.row_mut(row).assign(&sample_preview.row(i));
                }
            } else {
                for row in 0..m {
                    let i = rng.gen_range(0..n);
                    centers.row_mut(row).assign(&sample_preview.row(i));
                }
            }
            // Duplicate centers (possible when the preview has fewer rows
            // than m) would drag the median to zero and collapse the shape
            // scale to the guard floor, leaving delta-spike units; only
            // positive distances vote.
            let mut dists: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
            for i in 0..m {
                for j in (i + 1)..m {
                    let d2: f64 = centers
                        .row(i)
                        .iter()
                        .zip(centers.row(j))
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum();
                    if d2 > 0.0 {
                        dists.push(d2.sqrt());
                    }
                }
            }
            let eps = if dists.is_empty() {
                1.0
            } else {
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = dists[dists.len() / 2];
                1.0 / median.max(1e-6)
            };
            let bound = 1.0 / (m as f64).sqrt();
            let weights = Array1::from_shape_fn(m, |_| rng.gen_range(-bound..bound));
            let shapes = Array1::from_elem(m, eps);
            Ok(KefModel::Rbf(RbfKef::new(centers, shapes, weights)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seeded_resnet(d_in: usize, d_hid: usize, l_layers: usize, seed: u64) -> KefModel {
        let preview = Array2::from_shape_fn((64, d_in), |(i, j)| {
            ((i * 31 + j * 7) as f64 * 0.37).sin() * 2.0
        });
        init_model(ModelShape::ResNet { d_hid, l_layers }, d_in, seed, &preview).unwrap()
    }

    #[test]
    fn zero_net_returns_output_bias_everywhere() {
        let mut net = ResNetKef::zeros(2, 8, 5, 1.0).unwrap();
        net.b_out = -0.75;
        let model = KefModel::ResNet(net);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            assert_eq!(model.eval(&x), -0.75);
        }
    }

    #[test]
    fn padding_definition() {
        // d_in=2, d_hid=4, a=0.5, x=(2,−2) → x^(0)=(1,−1,0,0)
        let net = ResNetKef::zeros(2, 4, 3, 0.5).unwrap();
        let p = net.pad_single(&[2.0, -2.0]);
        assert_eq!(p.to_vec(), vec![1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn depth_one_applies_head_to_padded_input() {
        let mut net = ResNetKef::zeros(1, 3, 1, 2.0).unwrap();
        net.w_out = array![3.0, 5.0, 7.0];
        net.b_out = 0.25;
        let model = KefModel::ResNet(net);
        // ψ(x) = w_out·(2x, 0, 0) + b_out = 6x + 0.25
        assert_eq!(model.eval(&[1.5]), 9.25);
    }

    #[test]
    fn residual_blocks_do_not_affect_earlier_states() {
        let KefModel::ResNet(mut net) = seeded_resnet(2, 6, 4, 9) else { unreachable!() };
        let x = [0.4, -1.1];
        let before = net.hidden_states(&x);
        net.w[2][[3, 1]] += 0.5;
        net.b[2][0] -= 0.2;
        let after = net.hidden_states(&x);
        for l in 0..=2 {
            assert_eq!(before[l], after[l], "state {l} changed");
        }
        assert_ne!(before[3], after[3]);
    }

    #[test]
    fn rbf_unit_values() {
        let one = RbfKef::new(array![[0.3, -0.4]], array![1.7], array![1.0]).unwrap();
        let m = KefModel::Rbf(one);
        assert_eq!(m.eval(&[0.3, -0.4]), 1.0);

        let unit = RbfKef::new(array![[0.0]], array![1.0], array![1.0]).unwrap();
        let m = KefModel::Rbf(unit);
        let got = m.eval(&[1.0]);
        assert!((got - (-1.0f64).exp()).abs() < 1e-15, "{got}");

        let pair =
            RbfKef::new(array![[0.5, 0.5], [0.5, 0.5]], array![1.0, 1.0], array![1.0, -1.0])
                .unwrap();
        let m = KefModel::Rbf(pair);
        assert_eq!(m.eval(&[2.0, -1.0]), 0.0);
    }

    #[test]
    fn rbf_rejects_nonpositive_shapes() {
        let r = RbfKef::new(array![[0.0]], array![0.0], array![1.0]);
        assert!(r.is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = seeded_resnet(2, 8, 4, 42).params();
        let b = seeded_resnet(2, 8, 4, 42).params();
        assert_eq!(a.values, b.values);
        let c = seeded_resnet(2, 8, 4, 43).params();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn init_input_scale_is_inverse_rms() {
        let preview = Array2::from_elem((10, 3), 4.0); // RMS = 4
        let m = init_model(ModelShape::ResNet { d_hid: 8, l_layers: 3 }, 3, 0, &preview).unwrap();
        let KefModel::ResNet(net) = m else { unreachable!() };
        assert!((net.a - 0.25).abs() < 1e-15);
    }

    #[test]
    fn init_rbf_shapes_equal_and_positive() {
        let preview = Array2::from_shape_fn((50, 2), |(i, j)| (i as f64) * 0.1 + (j as f64));
        let m = init_model(ModelShape::Rbf { m: 10 }, 2, 3, &preview).unwrap();
        let KefModel::Rbf(rbf) = m else { unreachable!() };
        let e0 = rbf.shapes[0];
        assert!(e0 > 0.0);
        assert!(rbf.shapes.iter().all(|&e| e == e0));
    }

    #[test]
    fn init_rejects_empty_preview() {
        let preview = Array2::zeros((0, 2));
        assert!(init_model(ModelShape::Rbf { m: 4 }, 2, 0, &preview).is_err());
    }

    #[test]
    fn batch_eval_matches_single_sample_paths() {
        let model = seeded_resnet(3, 10, 5, 7);
        let xb = Array2::from_shape_fn((17, 3), |(i, j)| ((i + 2 * j) as f64 * 0.21).cos());
        let vb = Array2::from_shape_fn((17, 3), |(i, j)| ((i * j + 1) as f64 * 0.13).sin());
        let batch = DualBatch::new(xb.clone(), vb.clone());
        let (psi, dpsi, _) = model.forward_dual_batch(&batch);
        let psi2 = model.eval_batch(&xb);
        for i in 0..17 {
            let x = xb.row(i).to_vec();
            let v = vb.row(i).to_vec();
            assert!((psi[i] - model.eval(&x)).abs() < 1e-14);
            assert!((psi[i] - psi2[i]).abs() < 1e-14);
            let dd = model.directional_derivative(&x, &v);
            assert!((dpsi[i] - dd).abs() < 1e-13, "{} vs {}", dpsi[i], dd);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("kef_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();

        let model = seeded_resnet(2, 6, 4, 11);
        let p1 = dir.join("resnet.ckpt");
        model.save(&p1).unwrap();
        let back = KefModel::load(&p1).unwrap();
        assert_eq!(model.params().values, back.params().values);
        let KefModel::ResNet(orig) = &model else { unreachable!() };
        let KefModel::ResNet(loaded) = &back else { unreachable!() };
        assert_eq!(orig.a.to_bits(), loaded.a.to_bits());

        let preview = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 3 + j) as f64 * 0.7).sin());
        let rbf = init_model(ModelShape::Rbf { m: 12 }, 2, 5, &preview).unwrap();
        let p2 = dir.join("rbf.ckpt");
        rbf.save(&p2).unwrap();
        let back = KefModel::load(&p2).unwrap();
        assert_eq!(rbf.params().values, back.params().values);
    }

    #[test]
    fn params_set_params_round_trip() {
        let mut model = seeded_resnet(1, 5, 3, 2);
        let mut p = model.params();
        for v in p.values.iter_mut() {
            *v += 0.01;
        }
        model.set_params(&p);
        assert_eq!(model.params().values, p.values);
    }
}
