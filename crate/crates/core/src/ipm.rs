//! Robust short-step interior point method.
//!
//! The solver follows the central path of `min c^T x + t Phi(x)` over
//! `A^T x = b`. Each step descends the soft-max centrality potential
//! `Psi = sum_i exp(lambda gamma_i)` with a step that is correct only in
//! expectation: in sketched mode the Gram matrix is a leverage-score sample,
//! the feasibility correction is multiplied by a random block sampling
//! matrix, and the primal and slack points used for the direction are lazily
//! maintained approximations.
//!
//! Initialization starts exactly central for a modified cost `c + theta o`
//! whose offset is annealed away with `theta = (t / t0)^2`.

use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::barrier::Barrier;
use crate::dynsparsifier::{DecrementalConfig, DynamicSparsifier, RowId};
use crate::error::{ErmError, Result};
use crate::frontend::ErmInstance;
use crate::levscore::{sample_sparsifier, SamplingConfig};
use crate::linalg::{axpy, cholesky, gram, norm, norm_sq, sym_eigen, DenseMatrix, SpdFactorization};
use crate::maintenance::{
    build_valid_r, L2SampleTree, PrimalTracker, SampleMatrix, SlackConfig, SlackMaintainer, TreeSampler,
    ValidSampleParams,
};
use crate::rng::derive_seed;
use crate::sketch::HhConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exact Gram, `R = I`, `x_bar = x`, `s_bar = s`.
    Exact,
    /// Sampled Gram, random `R`, maintained `x_bar` and `s_bar`.
    Sketched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Step parameters tied together as in the analysis; steps are tiny.
    Faithful,
    /// Step size decoupled from `lambda` so that desk-scale solves finish.
    Aggressive,
}

impl FromStr for Mode {
    type Err = ErmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "sketched" => Ok(Mode::Sketched),
            _ => Err(ErmError::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

impl FromStr for Profile {
    type Err = ErmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "faithful" => Ok(Profile::Faithful),
            "aggressive" => Ok(Profile::Aggressive),
            _ => Err(ErmError::InvalidArgument(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IpmConfig {
    pub mode: Mode,
    pub profile: Profile,
    /// Centrality radius: blocks must keep `gamma_i <= eps^2`.
    pub eps: f64,
    pub c_center: f64,
    pub c_var: f64,
    pub c_k: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    /// Stop once `c_gap * t <= eps_target`.
    pub c_gap: f64,
    pub max_iters: Option<usize>,
    pub seed: u64,
    /// Check centrality, feasibility, potential and step-size bounds every iteration.
    pub instrumented: bool,
    /// Abort on the first violated check instead of recording it.
    pub strict: bool,
    /// Potential ceiling is `m n^c_center + psi_extra n^2`.
    pub psi_extra: f64,
    /// Accuracy of the sampled Gram in sketched mode.
    pub sparsifier_eps: f64,
    /// Constant `C` of the valid-sample draw count.
    pub r_count_factor: f64,
    pub slack_horizon_log2: usize,
    pub dyn_cfg: DecrementalConfig,
    pub record_diagnostics: bool,
}

impl IpmConfig {
    /// Parameters for a problem with `n` coordinates and total barrier parameter `nu`.
    pub fn new(profile: Profile, mode: Mode, n: usize, nu: f64) -> Self {
        let c_center = 2.0;
        let c_k = 4.0;
        let ln_n = (n.max(2) as f64).ln();
        let (eps, alpha, beta) = match profile {
            Profile::Faithful => {
                let eps = 0.01;
                let lambda = c_center * ln_n / (eps * eps);
                let alpha = eps / (c_k * lambda);
                (eps, alpha, 10.0 * alpha)
            }
            Profile::Aggressive => (0.05, 0.5, 0.01),
        };
        let lambda = match profile {
            Profile::Faithful => c_center * ln_n / (eps * eps),
            Profile::Aggressive => 2.0 * ln_n / (eps * eps),
        };
        let eta = eps * alpha / (c_center * nu.sqrt());
        IpmConfig {
            mode,
            profile,
            eps,
            c_center,
            c_var: 4.0,
            c_k,
            lambda,
            alpha,
            beta,
            eta,
            c_gap: 8.0 * nu,
            max_iters: None,
            seed: 0,
            instrumented: false,
            strict: false,
            psi_extra: 1.0,
            sparsifier_eps: alpha / 2.0,
            r_count_factor: 32.0,
            slack_horizon_log2: 10,
            dyn_cfg: DecrementalConfig::default(),
            record_diagnostics: false,
        }
    }

    pub fn for_instance(inst: &ErmInstance, profile: Profile, mode: Mode) -> Self {
        Self::new(profile, mode, inst.n(), inst.nu())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn instrumented(mut self, on: bool) -> Self {
        self.instrumented = on;
        self
    }
}

/// `s_i / t + grad phi_i(x_i)`.
pub fn mu_block(b: &dyn Barrier, x: &[f64], s: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(ErmError::InvalidArgument(format!("path parameter must be positive, got {t}")));
    }
    let e = b.eval(x)?;
    Ok(s.iter().zip(&e.grad).map(|(si, gi)| si / t + gi).collect())
}

/// `||mu_i||^2` in the inverse Hessian norm.
pub fn gamma_block(b: &dyn Barrier, x: &[f64], s: &[f64], t: f64) -> Result<f64> {
    let mu = mu_block(b, x, s, t)?;
    let e = b.eval(x)?;
    Ok(cholesky(&e.hess)?.inv_quad(&mu))
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// `ln Psi` for centrality errors `gamma` at weight `lambda`.
pub fn log_psi(gammas: &[f64], lambda: f64) -> f64 {
    log_sum_exp(gammas.iter().map(|g| lambda * g))
}

pub fn psi(gammas: &[f64], lambda: f64) -> f64 {
    log_psi(gammas, lambda).exp()
}

/// Block weights `exp(lambda gamma_i) / (sum_j exp(2 lambda gamma_j))^{1/2}`.
pub fn gradient_weights(gammas: &[f64], lambda: f64) -> Vec<f64> {
    let half = 0.5 * log_sum_exp(gammas.iter().map(|g| 2.0 * lambda * g));
    gammas.iter().map(|g| (lambda * g - half).exp()).collect()
}

/// Barrier derivatives at one block point.
#[derive(Clone, Debug)]
struct Local {
    grad: Vec<f64>,
    hinv_sqrt: DenseMatrix,
    hinv: DenseMatrix,
}

fn local(b: &dyn Barrier, x: &[f64], block: usize) -> Result<Local> {
    let e = b.eval(x).map_err(|err| match err {
        ErmError::NotInterior { detail, .. } => ErmError::NotInterior { block, detail },
        other => other,
    })?;
    let eig = sym_eigen(&e.hess)?;
    if !(eig.min() > 0.0) {
        return Err(ErmError::Numerical(format!("barrier Hessian of block {block} is not positive definite")));
    }
    Ok(Local {
        grad: e.grad,
        hinv_sqrt: eig.map(|v| 1.0 / v.sqrt()),
        hinv: eig.map(|v| 1.0 / v),
    })
}

fn locals_at(inst: &ErmInstance, x: &[f64]) -> Result<Vec<Local>> {
    (0..inst.m()).map(|i| local(inst.barrier(i), inst.block(i, x), i)).collect()
}

/// Rows `Phi''(x_i)^{-1/2} A_i` for every block.
fn scaled_rows(inst: &ErmInstance, locals: &[Local]) -> DenseMatrix {
    let mut v = DenseMatrix::zeros(inst.n(), inst.d());
    for (i, l) in locals.iter().enumerate() {
        write_block_rows(inst, i, &l.hinv_sqrt, &mut v);
    }
    v
}

fn write_block_rows(inst: &ErmInstance, i: usize, d: &DenseMatrix, out: &mut DenseMatrix) {
    let r = inst.layout.range(i);
    for (p, row) in r.clone().enumerate() {
        let mut acc = vec![0.0; inst.d()];
        for (q, src) in r.clone().enumerate() {
            axpy(d[(p, q)], inst.a.row(src), &mut acc);
        }
        out.set_row(row, &acc);
    }
}

fn apply_block(m: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    m.matvec(v).expect("block sized")
}

/// Per-block scaled centrality `Phi''^{-1/2} mu` and errors `gamma`.
fn centrality(inst: &ErmInstance, locals: &[Local], s: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; inst.n()];
    let mut gam = vec![0.0; inst.m()];
    for (i, l) in locals.iter().enumerate() {
        let r = inst.layout.range(i);
        let mu: Vec<f64> = s[r.clone()].iter().zip(&l.grad).map(|(si, gi)| si / t + gi).collect();
        let vi = apply_block(&l.hinv_sqrt, &mu);
        gam[i] = norm_sq(&vi);
        v[r].copy_from_slice(&vi);
    }
    (v, gam)
}

/// One row of the per-iteration diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub t: f64,
    pub max_gamma: f64,
    pub psi: f64,
    pub feasibility: f64,
    pub g_norm: f64,
    pub h_mode: &'static str,
    pub r_support: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub iter: usize,
    pub check: &'static str,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SketchStats {
    pub x_refreshes: usize,
    pub s_refreshes: usize,
    pub slack_rebuilds: usize,
    pub h_rows: usize,
    pub r_support: usize,
    pub sparsifier_batches: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub mode: Mode,
    pub profile: Profile,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    /// Duality-gap bound `c_gap * t` at the final path parameter.
    pub gap_bound: f64,
    pub t_final: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    /// `||A^T x - b||_2` of the returned point.
    pub residual: f64,
    pub max_gamma: f64,
    pub violations: Vec<Violation>,
    pub sketch: Option<SketchStats>,
}

pub struct IpmState {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub theta: f64,
    pub iter: usize,
}

struct SketchEngine {
    dyn_sp: DynamicSparsifier,
    row_ids: Vec<Vec<RowId>>,
    kappa_dyn: f64,
    x_bar: Vec<f64>,
    locals: Vec<Local>,
    vbar: DenseMatrix,
    tracker: PrimalTracker,
    slack: SlackMaintainer,
    tree: L2SampleTree,
    t_ref: f64,
    c_step: f64,
    rng_h: ChaCha8Rng,
    rng_r: ChaCha8Rng,
    stats: SketchStats,
}

pub struct Solver<'a> {
    inst: &'a ErmInstance,
    cfg: IpmConfig,
    state: IpmState,
    t0: f64,
    offset: Vec<f64>,
    engine: Option<SketchEngine>,
    diagnostics: Vec<IterRecord>,
    violations: Vec<Violation>,
    max_gamma_seen: f64,
    log_psi_ceiling: f64,
}

/// Dikin-norm floor covering rounding in `A^T x - b`.
fn rounding_floor(inst: &ErmInstance, x: &[f64], f: &SpdFactorization) -> f64 {
    let mut e: Vec<f64> = inst.b.iter().map(|v| v.abs()).collect();
    for (i, xi) in x.iter().enumerate() {
        for (ej, aij) in e.iter_mut().zip(inst.a.row(i)) {
            *ej += (aij * xi).abs();
        }
    }
    64.0 * f64::EPSILON * f.inv_quad(&e).sqrt()
}

fn residual(inst: &ErmInstance, x: &[f64]) -> Vec<f64> {
    let mut r = inst.a.tr_matvec(x).expect("sized");
    for (ri, bi) in r.iter_mut().zip(&inst.b) {
        *ri -= bi;
    }
    r
}

fn max_interior_fraction(inst: &ErmInstance, x: &[f64], dx: &[f64]) -> f64 {
    let mut s = 1.0;
    for _ in 0..80 {
        let trial: Vec<f64> = x.iter().zip(dx).map(|(a, b)| a + s * b).collect();
        if inst.is_interior(&trial) {
            return s;
        }
        s *= 0.5;
    }
    0.0
}

/// Interior point with `A^T x = b`, close to the analytic center.
fn initial_point(inst: &ErmInstance) -> Result<Vec<f64>> {
    let mut x = inst.start_point();
    if !inst.is_interior(&x) {
        return Err(ErmError::validation("/anchor", "start point is not interior"));
    }
    let n = inst.n();
    let mut feasible = false;
    for it in 0..500 {
        let locals = locals_at(inst, &x)?;
        let v = scaled_rows(inst, &locals);
        let g = gram(&v, 0.0);
        let f = cholesky(&g)?;
        let r = residual(inst, &x);
        // dx = -H^{-1}(grad + A w) with A^T dx = -r
        let mut hinv_grad = vec![0.0; n];
        for (i, l) in locals.iter().enumerate() {
            let rg = inst.layout.range(i);
            hinv_grad[rg].copy_from_slice(&apply_block(&l.hinv, &l.grad));
        }
        let at_hg = inst.a.tr_matvec(&hinv_grad)?;
        let rhs: Vec<f64> = r.iter().zip(&at_hg).map(|(a, b)| a - b).collect();
        let w = f.solve(&rhs)?;
        let aw = inst.a.matvec(&w)?;
        let mut dx = vec![0.0; n];
        for (i, l) in locals.iter().enumerate() {
            let rg = inst.layout.range(i);
            let v: Vec<f64> = l.grad.iter().zip(&aw[rg.clone()]).map(|(a, b)| -(a + b)).collect();
            dx[rg].copy_from_slice(&apply_block(&l.hinv, &v));
        }
        let mut dec = 0.0;
        for (i, l) in locals.iter().enumerate() {
            let rg = inst.layout.range(i);
            dec += cholesky(&l.hinv)?.inv_quad(&dx[rg]);
        }
        let dec = dec.sqrt();
        let floor = rounding_floor(inst, &x, &f);
        let infeasible = f.inv_quad(&r).sqrt() > floor.max(1e-12);
        if !infeasible {
            feasible = true;
            if dec < 1e-9 {
                return Ok(x);
            }
        }
        let step = if infeasible {
            let frac = max_interior_fraction(inst, &x, &dx);
            if frac == 1.0 {
                // full step lands feasible; keep a margin if it hugs the boundary
                1.0 / (1.0 + 0.0f64.max(dec - 1.0))
            } else {
                0.9 * frac
            }
        } else {
            1.0 / (1.0 + dec)
        };
        if step < 1e-12 {
            break;
        }
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + step * b).collect();
        if !inst.is_interior(&trial) {
            break;
        }
        x = trial;
        log::trace!("init iter {it}: decrement {dec:.3e}, step {step:.3e}");
    }
    if !feasible {
        return Err(ErmError::validation(
            "/b",
            "no strictly feasible interior point was found for A^T x = b",
        ));
    }
    Err(ErmError::validation(
        "/blocks",
        "analytic center did not converge; the feasible region may be unbounded",
    ))
}

impl<'a> Solver<'a> {
    /// Exactly central, exactly feasible start at `t0 = max(1, ||c|| kappa)`.
    pub fn new(inst: &'a ErmInstance, cfg: IpmConfig) -> Result<Self> {
        inst.validate()?;
        let x = initial_point(inst)?;
        let locals = locals_at(inst, &x)?;
        let t0 = (norm(&inst.c) * inst.kappa).max(1.0);
        let n = inst.n();
        let mut s0 = vec![0.0; n];
        for (i, l) in locals.iter().enumerate() {
            for (k, c) in inst.layout.range(i).enumerate() {
                s0[c] = -t0 * l.grad[k];
            }
        }
        // y0 minimizes ||c - s0 - A y||_{Phi''^{-1}}
        let v = scaled_rows(inst, &locals);
        let f = cholesky(&gram(&v, 0.0))?;
        let mut wdiff = vec![0.0; n];
        for (i, l) in locals.iter().enumerate() {
            let r = inst.layout.range(i);
            let diff: Vec<f64> = r.clone().map(|c| inst.c[c] - s0[c]).collect();
            wdiff[r].copy_from_slice(&apply_block(&l.hinv, &diff));
        }
        let y = f.solve(&inst.a.tr_matvec(&wdiff)?)?;
        let ay = inst.a.matvec(&y)?;
        let offset: Vec<f64> = (0..n).map(|c| s0[c] + ay[c] - inst.c[c]).collect();
        let s = s0;
        let m = inst.m() as f64;
        let nn = n.max(2) as f64;
        let log_psi_ceiling = (m * nn.powf(cfg.c_center) + cfg.psi_extra * nn * nn).ln();
        let mut solver = Solver {
            inst,
            state: IpmState {
                x,
                s,
                y,
                t: t0,
                theta: 1.0,
                iter: 0,
            },
            t0,
            offset,
            engine: None,
            diagnostics: Vec::new(),
            violations: Vec::new(),
            max_gamma_seen: 0.0,
            log_psi_ceiling,
            cfg,
        };
        if solver.cfg.mode == Mode::Sketched {
            solver.engine = Some(solver.build_engine(locals)?);
        }
        Ok(solver)
    }

    pub fn state(&self) -> &IpmState {
        &self.state
    }

    pub fn config(&self) -> &IpmConfig {
        &self.cfg
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn diagnostics(&self) -> &[IterRecord] {
        &self.diagnostics
    }

    /// Modified cost `c + theta o`.
    pub fn current_cost(&self) -> Vec<f64> {
        self.inst
            .c
            .iter()
            .zip(&self.offset)
            .map(|(c, o)| c + self.state.theta * o)
            .collect()
    }

    fn dual_slack(&self, y: &[f64], theta: f64) -> Vec<f64> {
        let ay = self.inst.a.matvec(y).expect("sized");
        (0..self.inst.n())
            .map(|c| self.inst.c[c] + theta * self.offset[c] - ay[c])
            .collect()
    }

    fn build_engine(&self, locals: Vec<Local>) -> Result<SketchEngine> {
        let inst = self.inst;
        let cfg = &self.cfg;
        let vbar = scaled_rows(inst, &locals);
        let max_row = (0..inst.n()).map(|r| norm_sq(vbar.row(r))).fold(0.0, f64::max);
        let lmin = sym_eigen(&gram(&vbar, 0.0))?.min().max(1e-300);
        let kappa_dyn = (4.0 * max_row).max(1e4 / lmin).max(2.0).min(1e12);
        let (dyn_sp, row_ids) = Self::fresh_sparsifier(inst, &vbar, kappa_dyn, cfg)?;
        let hinv: Vec<DenseMatrix> = locals.iter().map(|l| l.hinv_sqrt.clone()).collect();
        let c_step = 2.0 * cfg.alpha * cfg.eps;
        let slack = self.fresh_slack(&locals, self.state.t, c_step)?;
        let tree = L2SampleTree::new(
            inst.a.clone(),
            inst.layout.clone(),
            hinv,
            1.0 / (100.0 * (inst.m().max(2) as f64).ln()),
            derive_seed(cfg.seed, "l2-tree"),
        )?;
        Ok(SketchEngine {
            dyn_sp,
            row_ids,
            kappa_dyn,
            x_bar: self.state.x.clone(),
            locals,
            vbar,
            tracker: PrimalTracker::new(inst.layout.clone(), cfg.beta),
            slack,
            tree,
            t_ref: self.state.t,
            c_step,
            rng_h: rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "gram-sample")),
            rng_r: rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "valid-sample")),
            stats: SketchStats::default(),
        })
    }

    fn fresh_sparsifier(
        inst: &ErmInstance,
        vbar: &DenseMatrix,
        kappa_dyn: f64,
        cfg: &IpmConfig,
    ) -> Result<(DynamicSparsifier, Vec<Vec<RowId>>)> {
        let mut sp = DynamicSparsifier::new(inst.d(), kappa_dyn, derive_seed(cfg.seed, "sparsifier"), cfg.dyn_cfg.clone())?;
        let rows: Vec<Vec<f64>> = (0..inst.n()).map(|r| vbar.row(r).to_vec()).collect();
        let ids = sp.insert_batch(&rows)?;
        let row_ids = (0..inst.m()).map(|i| inst.layout.range(i).map(|r| ids[r]).collect()).collect();
        Ok((sp, row_ids))
    }

    /// Slack maintainer over `[A | o]` with `D_i = Phi''(x_bar_i)^{-1/2} / (c_step t_ref)`.
    fn fresh_slack(&self, locals: &[Local], t_ref: f64, c_step: f64) -> Result<SlackMaintainer> {
        let inst = self.inst;
        let d = inst.d();
        let mut a_ext = DenseMatrix::zeros(inst.n(), d + 1);
        for r in 0..inst.n() {
            let row = a_ext.row_mut(r);
            row[..d].copy_from_slice(inst.a.row(r));
            row[d] = self.offset[r];
        }
        let ds = locals.iter().map(|l| l.hinv_sqrt.scaled(1.0 / (c_step * t_ref))).collect();
        let cfg = SlackConfig {
            eps: self.cfg.beta / (2.0 * c_step),
            horizon_log2: self.cfg.slack_horizon_log2,
            hh: HhConfig::default(),
            seed: derive_seed(self.cfg.seed, &format!("slack-{t_ref:e}")),
        };
        SlackMaintainer::new(a_ext, inst.layout.clone(), ds, self.state.s.clone(), &cfg)
    }

    fn violate(&mut self, check: &'static str, value: f64, bound: f64) -> Result<()> {
        let v = Violation {
            iter: self.state.iter,
            check,
            value,
            bound,
        };
        log::warn!("iteration {}: {check} = {value:.3e} exceeds {bound:.3e}", v.iter);
        self.violations.push(v);
        if self.cfg.strict {
            return Err(ErmError::Invariant(format!("{check} = {value:e} exceeds {bound:e}")));
        }
        Ok(())
    }

    /// Checks well-centeredness of the current exact state.
    fn check_state(&mut self, after_step: bool) -> Result<f64> {
        let inst = self.inst;
        let locals = locals_at(inst, &self.state.x)?;
        let (_, gam) = centrality(inst, &locals, &self.state.s, self.state.t);
        let mg = gam.iter().copied().fold(0.0, f64::max);
        self.max_gamma_seen = self.max_gamma_seen.max(mg);
        let eps2 = self.cfg.eps * self.cfg.eps;
        if mg > eps2 * (1.0 + 1e-9) {
            self.violate("centrality", mg, eps2)?;
        }
        let lp = log_psi(&gam, self.cfg.lambda);
        if lp > self.log_psi_ceiling {
            self.violate("potential", lp.exp(), self.log_psi_ceiling.exp())?;
        }
        let f = cholesky(&gram(&scaled_rows(inst, &locals), 0.0))?;
        let r = residual(inst, &self.state.x);
        let feas = f.inv_quad(&r).sqrt();
        let floor = rounding_floor(inst, &self.state.x, &f);
        let ae = self.cfg.alpha * self.cfg.eps;
        if feas > ae + floor {
            self.violate("feasibility_pre", feas, ae + floor)?;
        }
        let a2 = self.cfg.alpha * self.cfg.alpha;
        if after_step && feas > a2 + floor {
            self.violate("feasibility_post", feas, a2 + floor)?;
        }
        let s_ref = self.dual_slack(&self.state.y, self.state.theta);
        let scale = self.state.s.iter().chain(&s_ref).fold(1.0f64, |m, v| m.max(v.abs()));
        let dual = self
            .state
            .s
            .iter()
            .zip(&s_ref)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if dual > 1e-9 * scale {
            self.violate("dual_feasibility", dual, 1e-9 * scale)?;
        }
        Ok(mg)
    }

    /// One short step.
    pub fn step(&mut self) -> Result<()> {
        if self.cfg.instrumented {
            self.check_state(self.state.iter > 0)?;
        }
        match self.cfg.mode {
            Mode::Exact => self.step_exact(),
            Mode::Sketched => self.step_sketched(),
        }
    }

    fn check_steps(&mut self, g: &[f64], d1: &[f64], d2: &[f64]) -> Result<()> {
        let ae = self.cfg.alpha * self.cfg.eps;
        let e = self.cfg.eps;
        let (gn, n1, n2) = (norm(g), norm(d1), norm(d2));
        if gn > ae * (1.0 + 1e-9) {
            self.violate("step_g", gn, ae)?;
        }
        if n1 > ae * e.exp() * (1.0 + 1e-9) {
            self.violate("step_delta1", n1, ae * e.exp())?;
        }
        if n2 > ae * (1.5 * e).exp() * (1.0 + 1e-9) {
            self.violate("step_delta2", n2, ae * (1.5 * e).exp())?;
        }
        Ok(())
    }

    fn advance_t(&mut self) {
        self.state.iter += 1;
        self.state.t = self.t0 * (1.0 - self.cfg.eta).powi(self.state.iter as i32);
        let ratio = self.state.t / self.t0;
        self.state.theta = ratio * ratio;
    }

    fn step_exact(&mut self) -> Result<()> {
        let inst = self.inst;
        let t = self.state.t;
        let locals = locals_at(inst, &self.state.x)?;
        let (v, gam) = centrality(inst, &locals, &self.state.s, t);
        self.max_gamma_seen = gam.iter().copied().fold(self.max_gamma_seen, f64::max);
        let w = gradient_weights(&gam, self.cfg.lambda);
        let mut g = vec![0.0; inst.n()];
        for i in 0..inst.m() {
            for c in inst.layout.range(i) {
                g[c] = self.cfg.alpha * w[i] * v[c];
            }
        }
        let vm = scaled_rows(inst, &locals);
        let f = cholesky(&gram(&vm, 0.0))?;
        let r = residual(inst, &self.state.x);
        let w1 = f.solve(&vm.tr_matvec(&g)?)?;
        let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
        let w2 = f.solve(&neg_r)?;
        let d1 = vm.matvec(&w1)?;
        let d2 = vm.matvec(&w2)?;
        if self.cfg.instrumented {
            self.check_steps(&g, &d1, &d2)?;
        }
        let mut x_new = self.state.x.clone();
        for (i, l) in locals.iter().enumerate() {
            let rg = inst.layout.range(i);
            let step: Vec<f64> = rg.clone().map(|c| g[c] - d1[c] - d2[c]).collect();
            let dx = apply_block(&l.hinv_sqrt, &step);
            for (k, c) in rg.enumerate() {
                x_new[c] -= dx[k];
            }
        }
        if !inst.is_interior(&x_new) {
            return Err(ErmError::Numerical(format!(
                "step {} left the domain; centrality was lost",
                self.state.iter
            )));
        }
        let feas = f.inv_quad(&r).sqrt();
        self.state.x = x_new;
        axpy(t, &w1, &mut self.state.y);
        self.advance_t();
        self.state.s = self.dual_slack(&self.state.y, self.state.theta);
        if self.cfg.record_diagnostics {
            self.diagnostics.push(IterRecord {
                iter: self.state.iter,
                t,
                max_gamma: gam.iter().copied().fold(0.0, f64::max),
                psi: psi(&gam, self.cfg.lambda),
                feasibility: feas,
                g_norm: norm(&g),
                h_mode: "exact",
                r_support: inst.m(),
            });
        }
        Ok(())
    }

    fn step_sketched(&mut self) -> Result<()> {
        let inst = self.inst;
        let t = self.state.t;
        let cfg = self.cfg.clone();
        let mut eng = self.engine.take().expect("sketched engine");
        let result = self.sketched_inner(&mut eng, t, &cfg);
        self.engine = Some(eng);
        let (gam, g, d1, d2, feas_h, support) = result?;
        if cfg.instrumented {
            self.check_steps(&g, &d1, &d2)?;
        }
        if cfg.record_diagnostics {
            self.diagnostics.push(IterRecord {
                iter: self.state.iter,
                t,
                max_gamma: gam.iter().copied().fold(0.0, f64::max),
                psi: psi(&gam, cfg.lambda),
                feasibility: feas_h,
                g_norm: norm(&g),
                h_mode: "sampled",
                r_support: support,
            });
        }
        let _ = inst;
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn sketched_inner(
        &mut self,
        eng: &mut SketchEngine,
        t: f64,
        cfg: &IpmConfig,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64, usize)> {
        let inst = self.inst;
        let n = inst.n();
        let s_bar = eng.slack.s_bar().to_vec();
        let (v, gam) = centrality(inst, &eng.locals, &s_bar, t);
        let w = gradient_weights(&gam, cfg.lambda);
        let mut g = vec![0.0; n];
        for i in 0..inst.m() {
            for c in inst.layout.range(i) {
                g[c] = cfg.alpha * w[i] * v[c];
            }
        }

        // H from leverage-score sampling of the rows Phi''(x_bar)^{-1/2} A
        let mut weights = vec![0.0; n];
        let mut block_tau = vec![0.0; inst.m()];
        for i in 0..inst.m() {
            for (k, c) in inst.layout.range(i).enumerate() {
                let tau = eng.dyn_sp.overestimate(eng.row_ids[i][k]).expect("live row");
                weights[c] = 2.0 * tau.min(1.0);
                block_tau[i] += tau.min(1.0);
            }
        }
        let scfg = SamplingConfig::default();
        let mut f = None;
        for _ in 0..4 {
            let sample = sample_sparsifier(&eng.vbar, &weights, cfg.sparsifier_eps, &mut eng.rng_h, &scfg)?;
            eng.stats.h_rows = sample.distinct();
            if let Ok(fac) = cholesky(&sample.gram(&eng.vbar, 0.0)) {
                f = Some(fac);
                break;
            }
        }
        let f = f.ok_or_else(|| ErmError::Numerical("sampled Gram matrix is singular".into()))?;

        let r = residual(inst, &self.state.x);
        let w1 = f.solve(&eng.vbar.tr_matvec(&g)?)?;
        let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
        let w2 = f.solve(&neg_r)?;
        let wsum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let d1 = eng.vbar.matvec(&w1)?;
        let d2 = eng.vbar.matvec(&w2)?;
        let dr: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        let block_norm: Vec<f64> = (0..inst.m()).map(|i| norm_sq(&dr[inst.layout.range(i)])).collect();
        let params = ValidSampleParams {
            alpha: cfg.alpha,
            gamma: cfg.eps,
            count_factor: cfg.r_count_factor,
            log_n: (n.max(2) as f64).ln(),
            max_individual_draws: 1 << 16,
        };
        let rmat: SampleMatrix = {
            let mut sampler = TreeSampler {
                tree: &mut eng.tree,
                h: &wsum,
            };
            build_valid_r(&block_norm, &block_tau, &params, &mut sampler, &mut eng.rng_r)?
        };
        let rdr = rmat.apply(&inst.layout, &dr);
        let support = rmat.support();
        eng.stats.r_support = support;

        let mut x_new = self.state.x.clone();
        for (i, l) in eng.locals.iter().enumerate() {
            let rg = inst.layout.range(i);
            let step: Vec<f64> = rg.clone().map(|c| g[c] - rdr[c]).collect();
            let dx = apply_block(&l.hinv_sqrt, &step);
            for (k, c) in rg.enumerate() {
                x_new[c] -= dx[k];
            }
        }
        if !inst.is_interior(&x_new) {
            return Err(ErmError::Numerical(format!(
                "step {} left the domain; centrality was lost",
                self.state.iter
            )));
        }
        let feas_h = f.inv_quad(&r).sqrt();
        self.state.x = x_new;
        let theta_old = self.state.theta;
        let y_old = self.state.y.clone();
        axpy(t, &w1, &mut self.state.y);
        self.advance_t();

        // slack moves by -A (t w1) + (theta_new - theta_old) o
        let d = inst.d();
        let mut h = vec![0.0; d + 1];
        for j in 0..d {
            h[j] = -(self.state.y[j] - y_old[j]);
        }
        h[d] = self.state.theta - theta_old;
        if self.state.t < 0.5 * eng.t_ref {
            eng.t_ref = self.state.t;
            self.state.s = self.dual_slack(&self.state.y, self.state.theta);
            eng.slack = self.fresh_slack(&eng.locals, eng.t_ref, eng.c_step)?;
            eng.stats.slack_rebuilds += 1;
        } else {
            let nrm = eng.slack.step_norm(&h)?;
            let pieces = nrm.ceil().max(1.0) as usize;
            let part: Vec<f64> = h.iter().map(|v| v / pieces as f64).collect();
            for _ in 0..pieces {
                let changed = eng.slack.update_slack(&part)?;
                eng.stats.s_refreshes += changed.len();
            }
            self.state.s = eng.slack.s().to_vec();
        }

        // primal approximation
        let refreshed = eng.tracker.update(&g, &rdr);
        if !refreshed.is_empty() {
            eng.stats.x_refreshes += refreshed.len();
            let mut new_rows = Vec::new();
            let mut old = Vec::new();
            for &i in &refreshed {
                let rg = inst.layout.range(i);
                eng.x_bar[rg.clone()].copy_from_slice(&self.state.x[rg.clone()]);
                let l = local(inst.barrier(i), &self.state.x[rg.clone()], i)?;
                write_block_rows(inst, i, &l.hinv_sqrt, &mut eng.vbar);
                eng.tree.update_scaling(i, l.hinv_sqrt.clone())?;
                eng.slack
                    .update_scaling(i, l.hinv_sqrt.scaled(1.0 / (eng.c_step * eng.t_ref)))?;
                eng.locals[i] = l;
                old.extend(eng.row_ids[i].drain(..));
                for r in rg {
                    new_rows.push(eng.vbar.row(r).to_vec());
                }
            }
            eng.dyn_sp.delete_batch(&old)?;
            let ids = match eng.dyn_sp.insert_batch(&new_rows) {
                Ok(ids) => ids,
                Err(ErmError::RowNormBound { .. }) => {
                    eng.kappa_dyn *= 16.0;
                    log::info!("rebuilding sparsifier with kappa {:.3e}", eng.kappa_dyn);
                    let (sp, ids) = Self::fresh_sparsifier(inst, &eng.vbar, eng.kappa_dyn, cfg)?;
                    eng.dyn_sp = sp;
                    eng.row_ids = ids;
                    Vec::new()
                }
                Err(e) => return Err(e),
            };
            if !ids.is_empty() {
                let mut it = ids.into_iter();
                for &i in &refreshed {
                    eng.row_ids[i] = inst.layout.range(i).map(|_| it.next().expect("id")).collect();
                }
            }
            eng.stats.sparsifier_batches = eng.dyn_sp.batches().len();
        }
        Ok((gam, g, d1, d2, feas_h, support))
    }

    /// Projects `x` onto `A^T x = b` in the local norm.
    pub fn finalize(&self) -> Result<Vec<f64>> {
        let inst = self.inst;
        let x = &self.state.x;
        let locals = locals_at(inst, x)?;
        let vm = scaled_rows(inst, &locals);
        let f = cholesky(&gram(&vm, 0.0))?;
        let r = residual(inst, x);
        let feas = f.inv_quad(&r).sqrt();
        if feas > 0.5 {
            return Err(ErmError::Numerical(format!(
                "final point is not centered: feasibility norm {feas:.3e}"
            )));
        }
        let w = f.solve(&r)?;
        let aw = inst.a.matvec(&w)?;
        let mut out = x.clone();
        for (i, l) in locals.iter().enumerate() {
            let rg = inst.layout.range(i);
            let dx = apply_block(&l.hinv, &aw[rg.clone()]);
            for (k, c) in rg.enumerate() {
                out[c] -= dx[k];
            }
        }
        if !inst.is_interior(&out) {
            return Err(ErmError::Numerical("final projection left the domain".into()));
        }
        Ok(out)
    }

    /// Iterations needed to reach `c_gap * t <= eps_target`.
    pub fn planned_iterations(&self, eps_target: f64) -> usize {
        let ratio = self.cfg.c_gap * self.t0 / eps_target;
        if ratio <= 1.0 {
            return 0;
        }
        (ratio.ln() / -(1.0 - self.cfg.eta).ln()).ceil() as usize
    }

    /// Runs short steps until the gap bound reaches `eps_target`, then finalizes.
    pub fn run(self, eps_target: f64) -> Result<SolveReport> {
        self.run_keeping_diagnostics(eps_target).0
    }

    /// Like [`Solver::run`], but returns the diagnostics recorded so far even on failure.
    pub fn run_keeping_diagnostics(mut self, eps_target: f64) -> (Result<SolveReport>, Vec<IterRecord>) {
        let res = self.iterate(eps_target);
        let diag = std::mem::take(&mut self.diagnostics);
        match res {
            Ok(converged) => match self.into_report(converged) {
                Ok(r) => (Ok(r), diag),
                Err(e) => (Err(e), diag),
            },
            Err(e) => (Err(e), diag),
        }
    }

    fn iterate(&mut self, eps_target: f64) -> Result<bool> {
        if !(eps_target > 0.0) {
            return Err(ErmError::InvalidArgument(format!("eps_target must be positive, got {eps_target}")));
        }
        let planned = self.planned_iterations(eps_target);
        let cap = self.cfg.max_iters.unwrap_or(planned + 10);
        let mut converged = true;
        while self.cfg.c_gap * self.state.t > eps_target {
            if self.state.iter >= cap {
                converged = false;
                log::warn!("iteration cap {cap} reached at t = {:.3e}", self.state.t);
                break;
            }
            self.step()?;
        }
        if self.cfg.instrumented {
            self.check_state(self.state.iter > 0)?;
        }
        Ok(converged)
    }

    fn into_report(self, converged: bool) -> Result<SolveReport> {
        let x = self.finalize()?;
        let y = self.state.y.clone();
        let s = self.dual_slack(&y, 0.0);
        let res = norm(&residual(self.inst, &x));
        Ok(SolveReport {
            mode: self.cfg.mode,
            profile: self.cfg.profile,
            converged,
            iterations: self.state.iter,
            objective: self.inst.objective(&x),
            gap_bound: self.cfg.c_gap * self.state.t,
            t_final: self.state.t,
            x,
            y,
            s,
            residual: res,
            max_gamma: self.max_gamma_seen,
            violations: self.violations,
            sketch: self.engine.map(|e| e.stats),
        })
    }
}

/// Solves `inst` to gap bound `eps_target`.
pub fn solve(inst: &ErmInstance, eps_target: f64, cfg: IpmConfig) -> Result<SolveReport> {
    Solver::new(inst, cfg)?.run(eps_target)
}

/// [`solve`] that also returns the per-iteration records.
pub fn solve_with_diagnostics(
    inst: &ErmInstance,
    eps_target: f64,
    cfg: IpmConfig,
) -> (Result<SolveReport>, Vec<IterRecord>) {
    match Solver::new(inst, cfg) {
        Ok(s) => s.run_keeping_diagnostics(eps_target),
        Err(e) => (Err(e), Vec::new()),
    }
}

/// Writes per-iteration diagnostics as CSV.
pub fn write_diagnostics(path: &std::path::Path, records: &[IterRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ErmError::Io(e.into()))?;
    for r in records {
        w.serialize(r).map_err(|e| ErmError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the report summary (without diagnostics) as JSON.
pub fn write_report(out: &mut dyn Write, report: &SolveReport) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, report).map_err(|e| ErmError::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BarrierKind;

    fn box_lp() -> ErmInstance {
        let a = DenseMatrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let barriers = (0..3)
            .map(|_| BarrierKind::Box { lower: vec![0.0], upper: vec![1.0] }.into())
            .collect();
        ErmInstance::new(a, vec![1.5], vec![1.0, 2.0, 3.0], barriers, 10.0).unwrap()
    }

    #[test]
    fn orthant_gamma_example() {
        let b = BarrierKind::NonnegOrthant { dim: 1 };
        // x = 1, s/t = 1.05 gives mu = 0.05
        let g = gamma_block(&b, &[1.0], &[1.05], 1.0).unwrap();
        assert!((g - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn psi_of_centered_state_is_m() {
        assert!((psi(&[0.0; 7], 1e4) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn single_block_gradient_norm() {
        let w = gradient_weights(&[0.0004], 5e4);
        assert!((w[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn start_is_exactly_central() {
        let inst = box_lp();
        let cfg = IpmConfig::for_instance(&inst, Profile::Aggressive, Mode::Exact);
        let s = Solver::new(&inst, cfg).unwrap();
        let locals = locals_at(&inst, &s.state.x).unwrap();
        let (_, gam) = centrality(&inst, &locals, &s.state.s, s.state.t);
        assert!(gam.iter().all(|&g| g < 1e-20), "{gam:?}");
        assert!((s.state.x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_lp_solves() {
        let inst = box_lp();
        let cfg = IpmConfig::for_instance(&inst, Profile::Aggressive, Mode::Exact).instrumented(true);
        let rep = solve(&inst, 1e-7, cfg).unwrap();
        // optimum fills the cheapest coordinates: x = (1, 0.5, 0)
        assert!((rep.objective - 2.0).abs() < 1e-6, "{}", rep.objective);
        assert!(rep.violations.is_empty(), "{:?}", rep.violations);
        assert!(rep.converged);
    }
}
