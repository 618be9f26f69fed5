//! Eigenfunction training: shuffle-normalized PDE loss, balance
//! regularizer, Adam, and the loop that sums both losses over every
//! training distribution before each parameter update.

use crate::autodiff::{loss_gradient, DualBatch, ParamVector, ScalarField};
use crate::dynamics::{self, SystemSpec};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::models::KefModel;
use crate::par;
use crate::sampling::{basin_coverage, Distribution};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::time::Instant;

/// Denominator guard used by both losses.
pub const EPS_GUARD: f64 = 1e-12;

/// Generator streams reserved so that batch draws (stream = call index)
/// never collide with permutation or coverage draws.
const PERM_STREAM: u64 = u64::MAX - 1;
const EVAL_PERM_STREAM: u64 = u64::MAX - 2;
const COVERAGE_CALL: u64 = u64::MAX - 3;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Koopman eigenvalue λ > 0 (units 1/time).
    pub lambda: f64,
    /// Balance regularizer weight γ ≥ 0.
    pub gamma_bal: f64,
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub eps_guard: f64,
    pub distributions: Vec<Distribution>,
    pub seed: u64,
    /// Warn when a distribution puts < 20% of its mass in some basin.
    pub coverage_check: bool,
    pub checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(lambda: f64, distributions: Vec<Distribution>) -> Self {
        TrainConfig {
            lambda,
            gamma_bal: 0.05,
            batch: 1000,
            iters: 1000,
            lr: 1e-4,
            weight_decay: 1e-5,
            eps_guard: EPS_GUARD,
            distributions,
            seed: 0,
            coverage_check: true,
            checkpoint: None,
        }
    }

    pub fn validate(&self, d_in: usize) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.gamma_bal >= 0.0 && self.gamma_bal.is_finite()) {
            return Err(Error::InvalidInput("gamma_bal must be >= 0".into()));
        }
        if self.batch < 2 {
            return Err(Error::InvalidInput("batch must be >= 2 (shuffle needs a permutation)".into()));
        }
        if self.iters < 1 {
            return Err(Error::InvalidInput("iters must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps_guard > 0.0) {
            return Err(Error::InvalidInput("weight_decay >= 0 and eps_guard > 0 required".into()));
        }
        if self.distributions.is_empty() {
            return Err(Error::InvalidInput("at least one training distribution required".into()));
        }
        for (j, d) in self.distributions.iter().enumerate() {
            if d.dim() != d_in {
                return Err(Error::InvalidInput(format!(
                    "distribution {j} has dimension {}, model expects {d_in}",
                    d.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Per-system defaults (λ, γ, B, T); σ ladders come from
/// `sampling::default_distributions`.
pub fn default_config(system: &SystemSpec, distributions: Vec<Distribution>, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(1.0, distributions);
    cfg.seed = seed;
    match system.name.as_str() {
        "two_limit_cycles" => cfg.gamma_bal = 0.0,
        "glv" => {
            cfg.lambda = 0.1;
            cfg.batch = 5000;
            cfg.iters = 5000;
        }
        "loaded_rnn" => cfg.lambda = 0.02,
        _ => {}
    }
    cfg
}

/// LHS_i = ∇ψ(x_i)·f(x_i) and RHS_i = λψ(x_i) for every row of the batch.
pub fn pde_terms(
    field: &(impl ScalarField + ?Sized),
    batch: &Array2<f64>,
    system: &SystemSpec,
    lambda: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if batch.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let rows = par::map_indexed(batch.nrows(), |i| {
        let x = batch.row(i);
        let x = x.as_slice().unwrap();
        let v = system.f_vec(x);
        if v.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("f(x) at batch row {i}")));
        }
        Ok((field.directional_derivative(x, &v), lambda * field.eval(x)))
    });
    let mut lhs = Array1::zeros(batch.nrows());
    let mut rhs = Array1::zeros(batch.nrows());
    for (i, r) in rows.into_iter().enumerate() {
        let (l, r) = r?;
        lhs[i] = l;
        rhs[i] = r;
    }
    Ok((lhs, rhs))
}

fn assert_permutation(perm: &[usize], b: usize) {
    assert_eq!(perm.len(), b, "permutation length mismatch");
    let mut seen = vec![false; b];
    for &p in perm {
        assert!(p < b && !seen[p], "not a bijection on 0..{b}");
        seen[p] = true;
    }
}

/// Σ(LHS_i−RHS_i)² / (Σ(LHS_i−RHS_π(i))² + ε). The shuffled denominator
/// scales like the batch variance, so exact eigenfunctions score ~0 and
/// constant (collapsed) ones score ~1.
pub fn ratio_loss(lhs: &Array1<f64>, rhs: &Array1<f64>, perm: &[usize], eps: f64) -> f64 {
    let b = lhs.len();
    assert_eq!(rhs.len(), b);
    assert_permutation(perm, b);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..b {
        let d = lhs[i] - rhs[i];
        num += d * d;
        let s = lhs[i] - rhs[perm[i]];
        den += s * s;
    }
    num / (den + eps)
}

/// mean(ψ)² / (population variance(ψ) + ε); large when all samples share a
/// sign, zero when the batch mean vanishes.
pub fn balance_loss(psi: &Array1<f64>, eps: f64) -> f64 {
    let b = psi.len();
    assert!(b >= 2, "balance loss needs at least 2 samples");
    let mean = psi.sum() / b as f64;
    let var = psi.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / b as f64;
    mean * mean / (var + eps)
}

/// Uniform random permutation of 0..b, redrawn while it is the identity.
pub fn random_non_identity_permutation(rng: &mut impl Rng, b: usize) -> Vec<usize> {
    assert!(b >= 2);
    let mut perm: Vec<usize> = (0..b).collect();
    loop {
        for i in (1..b).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            return perm;
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam update. L2 regularization enters through the
/// gradient (g + weight_decay·θ). θ is untouched when the gradient is
/// rejected as non-finite.
pub fn adam_step(
    theta: &mut [f64],
    g: &[f64],
    state: &mut AdamState,
    p: &AdamParams,
) -> Result<()> {
    if theta.len() != g.len() || state.m.len() != theta.len() {
        return Err(Error::InvalidInput("adam shape mismatch".into()));
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    state.t += 1;
    let bc1 = 1.0 - p.beta1.powi(state.t as i32);
    let bc2 = 1.0 - p.beta2.powi(state.t as i32);
    for i in 0..theta.len() {
        let gi = g[i] + p.weight_decay * theta[i];
        state.m[i] = p.beta1 * state.m[i] + (1.0 - p.beta1) * gi;
        state.v[i] = p.beta2 * state.v[i] + (1.0 - p.beta2) * gi * gi;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        theta[i] -= p.lr * mhat / (vhat.sqrt() + p.eps);
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainRecord {
    pub l_total: Vec<f64>,
    /// l_ratio[t][j]: ratio loss of distribution j at iteration t.
    pub l_ratio: Vec<Vec<f64>>,
    pub l_bal: Vec<Vec<f64>>,
    pub wall_secs: f64,
    pub checkpoint_path: Option<PathBuf>,
    pub coverage_warnings: Vec<String>,
    /// 1-based iteration whose update hit a non-finite loss; the returned
    /// model keeps the parameters from before that iteration.
    pub aborted_at: Option<usize>,
}

impl TrainRecord {
    /// `iter, L_total, L_ratio_j1.., L_bal_j1..`
    pub fn to_csv(&self) -> String {
        let j = self.l_ratio.first().map_or(0, |r| r.len());
        let mut out = String::from("iter,L_total");
        for k in 1..=j {
            out.push_str(&format!(",L_ratio_j{k}"));
        }
        for k in 1..=j {
            out.push_str(&format!(",L_bal_j{k}"));
        }
        out.push('\n');
        for (t, total) in self.l_total.iter().enumerate() {
            out.push_str(&format!("{},{}", t + 1, fmt_f64(*total)));
            for v in &self.l_ratio[t] {
                out.push_str(&format!(",{}", fmt_f64(*v)));
            }
            for v in &self.l_bal[t] {
                out.push_str(&format!(",{}", fmt_f64(*v)));
            }
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutcome {
    pub model: KefModel,
    pub record: TrainRecord,
}

pub struct BatchLosses {
    /// L_ratio + γ·L_bal.
    pub loss: f64,
    pub l_ratio: f64,
    pub l_bal: f64,
    pub grad: ParamVector,
}

/// Ratio + balance loss and their full parameter gradient for one explicit
/// batch: states `x`, field values `fx`, and shuffle permutation `perm`.
/// The training loop sums this over distributions; tests difference it
/// against finite-difference gradients.
pub fn batch_loss_gradient(
    model: &KefModel,
    x: Array2<f64>,
    fx: Array2<f64>,
    perm: &[usize],
    cfg: &TrainConfig,
) -> Result<BatchLosses> {
    let b = x.nrows();
    let mut inv = vec![0usize; b];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let lambda = cfg.lambda;
    let gamma = cfg.gamma_bal;
    let eps = cfg.eps_guard;
    let mut out_ratio = 0.0;
    let mut out_bal = 0.0;
    let batch = DualBatch::new(x, fx);
    let (loss, grad) = loss_gradient(model, &batch, |psi, dpsi| {
        let bf = b as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..b {
            let d = dpsi[i] - lambda * psi[i];
            num += d * d;
            let s = dpsi[i] - lambda * psi[perm[i]];
            den += s * s;
        }
        let den_g = den + eps;
        let l_ratio = num / den_g;

        let mean = psi.sum() / bf;
        let var = psi.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / bf;
        let var_g = var + eps;
        let l_bal = mean * mean / var_g;

        let mut psi_bar = Array1::zeros(b);
        let mut dpsi_bar = Array1::zeros(b);
        for i in 0..b {
            let r_i = dpsi[i] - lambda * psi[i];
            let s_i = dpsi[i] - lambda * psi[perm[i]];
            let s_at_inv = dpsi[inv[i]] - lambda * psi[i];
            dpsi_bar[i] = (2.0 * r_i - l_ratio * 2.0 * s_i) / den_g;
            let d_ratio = (-2.0 * lambda * r_i + l_ratio * 2.0 * lambda * s_at_inv) / den_g;
            let d_bal = (2.0 * mean / bf - l_bal * 2.0 * (psi[i] - mean) / bf) / var_g;
            psi_bar[i] = d_ratio + gamma * d_bal;
        }
        out_ratio = l_ratio;
        out_bal = l_bal;
        (l_ratio + gamma * l_bal, psi_bar, dpsi_bar)
    })?;
    Ok(BatchLosses { loss, l_ratio: out_ratio, l_bal: out_bal, grad })
}

fn field_rows(system: &SystemSpec, x: &Array2<f64>) -> Result<Array2<f64>> {
    let b = x.nrows();
    let rows = par::map_indexed(b, |i| system.f_vec(x.row(i).as_slice().unwrap()));
    let mut fx = Array2::zeros((b, system.n));
    for (i, row) in rows.into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("f(x) at batch row {i}")));
        }
        for (k, v) in row.into_iter().enumerate() {
            fx[[i, k]] = v;
        }
    }
    Ok(fx)
}

/// Algorithm: per iteration, for each distribution j draw a fresh batch,
/// shuffle with a fresh non-identity permutation, accumulate
/// L_ratio + γ·L_bal and its gradient by plain summation over j, then take
/// one Adam step. A non-finite loss aborts, keeping the parameters from the
/// last completed iteration.
pub fn train(mut model: KefModel, system: &SystemSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(model.d_in())?;
    if model.d_in() != system.n {
        return Err(Error::InvalidInput(format!(
            "model expects {}D inputs but system {} is {}D",
            model.d_in(),
            system.name,
            system.n
        )));
    }
    let j_count = cfg.distributions.len();
    let mut record = TrainRecord {
        l_total: Vec::with_capacity(cfg.iters),
        l_ratio: Vec::with_capacity(cfg.iters),
        l_bal: Vec::with_capacity(cfg.iters),
        wall_secs: 0.0,
        checkpoint_path: None,
        coverage_warnings: Vec::new(),
        aborted_at: None,
    };

    if cfg.coverage_check {
        match dynamics::find_attractors(system, 24, cfg.seed) {
            Ok(att) => {
                for (j, d) in cfg.distributions.iter().enumerate() {
                    match basin_coverage(d, system, &att, 200, COVERAGE_CALL) {
                        Ok(freq) => {
                            let worst =
                                freq.iter().cloned().fold(f64::INFINITY, f64::min);
                            if worst < 0.2 {
                                record.coverage_warnings.push(format!(
                                    "distribution {j}: basin frequencies {freq:?} fall below 20%"
                                ));
                            }
                        }
                        Err(e) => record
                            .coverage_warnings
                            .push(format!("distribution {j}: coverage check failed: {e}")),
                    }
                }
            }
            Err(e) => record
                .coverage_warnings
                .push(format!("coverage check skipped (attractor search failed: {e})")),
        }
    }

    let start = Instant::now();
    let mut perm_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    perm_rng.set_stream(PERM_STREAM);
    let mut theta = model.params();
    let mut state = AdamState::new(theta.len());
    let adam = AdamParams { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamParams::default() };

    'iters: for t in 1..=cfg.iters {
        let mut l_total = 0.0;
        let mut ratios = Vec::with_capacity(j_count);
        let mut bals = Vec::with_capacity(j_count);
        let mut total_grad: Option<ParamVector> = None;
        for (j, dist) in cfg.distributions.iter().enumerate() {
            let call = ((t - 1) * j_count + j) as u64;
            let x = dist.sample(cfg.batch, call)?;
            let perm = random_non_identity_permutation(&mut perm_rng, cfg.batch);
            let step = field_rows(system, &x)
                .and_then(|fx| batch_loss_gradient(&model, x, fx, &perm, cfg));
            let losses = match step {
                Ok(l) => l,
                Err(Error::NonFinite(_)) => {
                    record.aborted_at = Some(t);
                    break 'iters;
                }
                Err(e) => return Err(e),
            };
            l_total += losses.loss;
            ratios.push(losses.l_ratio);
            bals.push(losses.l_bal);
            match &mut total_grad {
                None => total_grad = Some(losses.grad),
                Some(g) => g.add_assign(&losses.grad),
            }
        }
        let g = total_grad.expect("at least one distribution");
        if adam_step(&mut theta.values, &g.values, &mut state, &adam).is_err() {
            record.aborted_at = Some(t);
            break 'iters;
        }
        model.set_params(&theta);
        record.l_total.push(l_total);
        record.l_ratio.push(ratios);
        record.l_bal.push(bals);
    }
    record.wall_secs = start.elapsed().as_secs_f64();
    if let Some(path) = &cfg.checkpoint {
        model.save(path)?;
        record.checkpoint_path = Some(path.clone());
    }
    Ok(TrainOutcome { model, record })
}

/// Mean ratio loss over fresh batches (one per distribution per round),
/// drawn at call indices past those the training loop consumed.
pub fn eval_l_ratio(
    model: &KefModel,
    system: &SystemSpec,
    cfg: &TrainConfig,
    rounds: usize,
) -> Result<f64> {
    if rounds < 1 {
        return Err(Error::InvalidInput("rounds must be >= 1".into()));
    }
    let j_count = cfg.distributions.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(EVAL_PERM_STREAM);
    let mut sum = 0.0;
    for k in 0..rounds {
        for (j, dist) in cfg.distributions.iter().enumerate() {
            let call = ((cfg.iters + k) * j_count + j) as u64;
            let x = dist.sample(cfg.batch, call)?;
            let (lhs, rhs) = pde_terms(model, &x, system, cfg.lambda)?;
            let perm = random_non_identity_permutation(&mut rng, cfg.batch);
            sum += ratio_loss(&lhs, &rhs, &perm, cfg.eps_guard);
        }
    }
    Ok(sum / (rounds * j_count) as f64)
}

/// Fractions of a batch with ψ < 0 and ψ > 0.
pub fn sign_fractions(model: &KefModel, x: &Array2<f64>) -> (f64, f64) {
    let psi = model.eval_batch(x);
    let b = psi.len() as f64;
    let neg = psi.iter().filter(|v| **v < 0.0).count() as f64 / b;
    let pos = psi.iter().filter(|v| **v > 0.0).count() as f64 / b;
    (neg, pos)
}
