//! Lazily updated approximations of the iterates.
//!
//! * [`SlackMaintainer`] keeps `s_bar` with `||D_i (s_i - s_bar_i)|| <= eps`
//!   while `s` moves by `A h` per step, using dyadic windows of heavy-hitter
//!   sketches to find blocks that drifted.
//! * [`L2SampleTree`] samples blocks with probability proportional to
//!   `||D_i A_i h||^2`.
//! * [`build_valid_r`] draws the block-diagonal sampling matrix `R` used in
//!   the short step.
//! * [`PrimalTracker`] decides when a block of `x_bar` must be refreshed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::BlockLayout;
use crate::error::{ErmError, Result};
use crate::levscore::multinomial;
use crate::linalg::{axpy, norm_sq, DenseMatrix};
use crate::sketch::{jl_out_dim, HhConfig, HhSketch, JlSketch};

fn block_product(d: &DenseMatrix, a: &DenseMatrix, lo: usize) -> DenseMatrix {
    let n = d.rows();
    let mut out = DenseMatrix::zeros(n, a.cols());
    for r in 0..n {
        for c in 0..n {
            let w = d[(r, c)];
            if w != 0.0 {
                axpy(w, a.row(lo + c), out.row_mut(r));
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SlackConfig {
    /// Target accuracy `eps` of the maintained slack.
    pub eps: f64,
    /// Updates per epoch are `2^horizon_log2`; the window levels cover the epoch.
    pub horizon_log2: usize,
    pub hh: HhConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct SlackStats {
    pub updates: usize,
    pub refreshes: usize,
    pub candidates: usize,
    pub scanned_windows: usize,
    pub sketched_windows: usize,
    pub epochs: usize,
}

struct SlackLevel {
    sketch: Option<HhSketch>,
    prod: Option<DenseMatrix>,
    masked: Vec<bool>,
}

/// Maintains `s_bar` for `s = s0 + A * sum h`.
pub struct SlackMaintainer {
    a: DenseMatrix,
    layout: BlockLayout,
    coord_block: Vec<usize>,
    d_blocks: Vec<DenseMatrix>,
    da: DenseMatrix,
    s: Vec<f64>,
    s_bar: Vec<f64>,
    t: usize,
    prefix: Vec<Vec<f64>>,
    eps: f64,
    eps_bar: f64,
    levels: Vec<SlackLevel>,
    pub stats: SlackStats,
}

impl SlackMaintainer {
    pub fn new(
        a: DenseMatrix,
        layout: BlockLayout,
        d_blocks: Vec<DenseMatrix>,
        s0: Vec<f64>,
        cfg: &SlackConfig,
    ) -> Result<Self> {
        let n = a.rows();
        if layout.total() != n || s0.len() != n || d_blocks.len() != layout.blocks() {
            return Err(ErmError::dims(
                "slack maintainer",
                format!("{n} coordinates, {} blocks", layout.blocks()),
                format!("{} slack entries, {} scalings", s0.len(), d_blocks.len()),
            ));
        }
        for (i, d) in d_blocks.iter().enumerate() {
            if d.shape() != (layout.size(i), layout.size(i)) {
                return Err(ErmError::dims("scaling block", layout.size(i), d.rows()));
            }
        }
        if !(cfg.eps > 0.0) {
            return Err(ErmError::InvalidArgument("slack accuracy must be positive".into()));
        }
        let mut coord_block = vec![0; n];
        let mut da = DenseMatrix::zeros(n, a.cols());
        for i in 0..layout.blocks() {
            let r = layout.range(i);
            let p = block_product(&d_blocks[i], &a, r.start);
            for (j, c) in r.clone().enumerate() {
                coord_block[c] = i;
                da.set_row(c, p.row(j));
            }
        }
        let k_levels = cfg.horizon_log2.max(1);
        let eps_bar = cfg.eps / (2.0 * k_levels as f64);
        let m_block = layout.max_size().max(1) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut levels = Vec::with_capacity(k_levels + 1);
        for k in 0..=k_levels {
            let eps_k = eps_bar / (5.0 * m_block * (1u64 << k) as f64);
            let (sketch, prod) = if cfg.hh.sketchable(eps_k, n) {
                let q = HhSketch::new(eps_k, n, &mut rng, &cfg.hh)?;
                let p = q.apply_rows(&da)?;
                (Some(q), Some(p))
            } else {
                (None, None)
            };
            levels.push(SlackLevel {
                sketch,
                prod,
                masked: vec![false; layout.blocks()],
            });
        }
        let d = a.cols();
        Ok(SlackMaintainer {
            s_bar: s0.clone(),
            s: s0,
            a,
            layout,
            coord_block,
            d_blocks,
            da,
            t: 0,
            prefix: vec![vec![0.0; d]],
            eps: cfg.eps,
            eps_bar,
            levels,
            stats: SlackStats::default(),
        })
    }

    pub fn s_bar(&self) -> &[f64] {
        &self.s_bar
    }

    /// Exact slack, kept as a shadow copy.
    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn horizon(&self) -> usize {
        1 << (self.levels.len() - 1)
    }

    /// `||D_i A_i h||`-weighted norm of a step, `||D A h||`.
    pub fn step_norm(&self, h: &[f64]) -> Result<f64> {
        Ok(norm_sq(&self.da.matvec(h)?).sqrt())
    }

    /// Largest `||D_i (s_i - s_bar_i)||` over blocks.
    pub fn max_error(&self) -> f64 {
        (0..self.layout.blocks())
            .map(|i| self.block_error(i))
            .fold(0.0, f64::max)
    }

    fn block_error(&self, i: usize) -> f64 {
        let r = self.layout.range(i);
        let diff: Vec<f64> = r.clone().map(|c| self.s[c] - self.s_bar[c]).collect();
        norm_sq(&self.d_blocks[i].matvec(&diff).expect("sized")).sqrt()
    }

    fn refresh(&mut self, i: usize) {
        for c in self.layout.range(i) {
            self.s_bar[c] = self.s[c];
        }
    }

    fn window_norm(&self, i: usize, w: &[f64]) -> f64 {
        self.layout
            .range(i)
            .map(|c| {
                let v = crate::linalg::dot(self.da.row(c), w);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Applies `s <- s + A h`; requires `||D A h|| <= 1`. Returns refreshed blocks.
    pub fn update_slack(&mut self, h: &[f64]) -> Result<Vec<usize>> {
        if h.len() != self.a.cols() {
            return Err(ErmError::dims("update_slack", self.a.cols(), h.len()));
        }
        let step = self.step_norm(h)?;
        if step > 1.0 + 1e-9 {
            return Err(ErmError::InvalidArgument(format!(
                "slack step has scaled norm {step:.3e} > 1"
            )));
        }
        let ah = self.a.matvec(h)?;
        axpy(1.0, &ah, &mut self.s);
        self.t += 1;
        self.stats.updates += 1;
        let mut p = self.prefix.last().unwrap().clone();
        axpy(1.0, h, &mut p);
        self.prefix.push(p);

        let t = self.t;
        let m = self.layout.blocks();
        let mut changed = vec![false; m];
        for k in 0..self.levels.len() {
            let len = 1usize << k;
            if t % len != 0 {
                continue;
            }
            let w: Vec<f64> = self.prefix[t]
                .iter()
                .zip(&self.prefix[t - len])
                .map(|(a, b)| a - b)
                .collect();
            let level = &self.levels[k];
            let mut cand: Vec<usize> = Vec::new();
            match (&level.sketch, &level.prod) {
                (Some(q), Some(prod)) => {
                    self.stats.sketched_windows += 1;
                    let y = prod.matvec(&w)?;
                    for c in q.recover(&y) {
                        cand.push(self.coord_block[c]);
                    }
                    cand.sort_unstable();
                    cand.dedup();
                }
                _ => {
                    self.stats.scanned_windows += 1;
                    cand.extend(0..m);
                }
            }
            self.stats.candidates += cand.len();
            for i in cand {
                if !self.levels[k].masked[i] && !changed[i] && self.window_norm(i, &w) >= self.eps_bar {
                    changed[i] = true;
                }
            }
            self.unmask_level(k);
        }
        for i in 0..m {
            if changed[i] {
                self.refresh(i);
            }
        }
        if t == self.horizon() {
            self.stats.epochs += 1;
            for i in 0..m {
                self.refresh(i);
                changed[i] = true;
            }
            self.t = 0;
            let d = self.a.cols();
            self.prefix = vec![vec![0.0; d]];
        }
        let out: Vec<usize> = (0..m).filter(|&i| changed[i]).collect();
        self.stats.refreshes += out.len();
        Ok(out)
    }

    fn unmask_level(&mut self, k: usize) {
        let level = &mut self.levels[k];
        for i in 0..level.masked.len() {
            if level.masked[i] {
                level.masked[i] = false;
                if let (Some(q), Some(prod)) = (&level.sketch, &mut level.prod) {
                    for c in self.layout.range(i) {
                        q.add_row(prod, c, self.da.row(c), 1.0);
                    }
                }
            }
        }
    }

    /// Replaces `D_i`; `s_bar_i` is reset to `s_i`.
    pub fn update_scaling(&mut self, i: usize, d_new: DenseMatrix) -> Result<()> {
        if i >= self.layout.blocks() {
            return Err(ErmError::IndexOutOfRange { index: i, len: self.layout.blocks() });
        }
        let r = self.layout.range(i);
        if d_new.shape() != (r.len(), r.len()) {
            return Err(ErmError::dims("update_scaling", r.len(), d_new.rows()));
        }
        for level in &mut self.levels {
            if !level.masked[i] {
                level.masked[i] = true;
                if let (Some(q), Some(prod)) = (&level.sketch, &mut level.prod) {
                    for c in r.clone() {
                        q.add_row(prod, c, self.da.row(c), -1.0);
                    }
                }
            }
        }
        let p = block_product(&d_new, &self.a, r.start);
        for (j, c) in r.enumerate() {
            self.da.set_row(c, p.row(j));
        }
        self.d_blocks[i] = d_new;
        self.refresh(i);
        Ok(())
    }
}

struct TreeNode {
    lo: usize,
    hi: usize,
    children: Option<(usize, usize)>,
    /// JL matrix over the node's coordinates, or `None` for exact storage.
    jl: Option<DenseMatrix>,
    proj: DenseMatrix,
}

#[derive(Clone, Debug, Default)]
pub struct TreeStats {
    pub samples: usize,
    pub restarts: usize,
    pub min_accept: f64,
    pub max_accept: f64,
    /// Leaves whose acceptance probability fell outside `(1/4, 1)`.
    pub out_of_range: usize,
}

/// Balanced tree over blocks with JL-compressed `D_I A_I` at each node.
pub struct L2SampleTree {
    a: DenseMatrix,
    layout: BlockLayout,
    d_blocks: Vec<DenseMatrix>,
    nodes: Vec<TreeNode>,
    leaf_of: Vec<usize>,
    pub stats: TreeStats,
}

impl L2SampleTree {
    /// `jl_eps` is the node sketch accuracy; nodes whose sketch would not be smaller than
    /// the node are stored exactly.
    pub fn new(
        a: DenseMatrix,
        layout: BlockLayout,
        d_blocks: Vec<DenseMatrix>,
        jl_eps: f64,
        seed: u64,
    ) -> Result<Self> {
        let m = layout.blocks();
        if m == 0 || layout.total() != a.rows() || d_blocks.len() != m {
            return Err(ErmError::dims("l2 tree", a.rows(), layout.total()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = jl_out_dim(m, jl_eps, 8.0);
        let mut tree = L2SampleTree {
            a,
            layout,
            d_blocks,
            nodes: Vec::new(),
            leaf_of: vec![0; m],
            stats: TreeStats {
                min_accept: f64::INFINITY,
                ..TreeStats::default()
            },
        };
        tree.build(0, m, k, &mut rng);
        Ok(tree)
    }

    fn node_rows(&self, lo: usize, hi: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(0, self.a.cols());
        for i in lo..hi {
            let p = block_product(&self.d_blocks[i], &self.a, self.layout.range(i).start);
            for r in 0..p.rows() {
                out.push_row(p.row(r)).expect("width");
            }
        }
        out
    }

    fn build(&mut self, lo: usize, hi: usize, k: usize, rng: &mut ChaCha8Rng) -> usize {
        let rows = self.node_rows(lo, hi);
        let (jl, proj) = if k < rows.rows() {
            let s = JlSketch::new(k, rows.rows(), rng);
            let p = s.apply_matrix(&rows).expect("sized");
            (Some(s.matrix().clone()), p)
        } else {
            (None, rows)
        };
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            lo,
            hi,
            children: None,
            jl,
            proj,
        });
        if hi - lo == 1 {
            self.leaf_of[lo] = id;
        } else {
            let mid = lo + (hi - lo) / 2;
            let l = self.build(lo, mid, k, rng);
            let r = self.build(mid, hi, k, rng);
            self.nodes[id].children = Some((l, r));
        }
        id
    }

    /// Replaces `D_i` and updates every node containing block `i`.
    pub fn update_scaling(&mut self, i: usize, d_new: DenseMatrix) -> Result<()> {
        let r = self.layout.range(i);
        if d_new.shape() != (r.len(), r.len()) {
            return Err(ErmError::dims("tree update_scaling", r.len(), d_new.rows()));
        }
        let old = block_product(&self.d_blocks[i], &self.a, r.start);
        let new = block_product(&d_new, &self.a, r.start);
        self.d_blocks[i] = d_new;
        let mut id = 0;
        loop {
            let node = &mut self.nodes[id];
            let offset: usize = (node.lo..i).map(|b| self.layout.size(b)).sum();
            match &node.jl {
                None => {
                    for j in 0..new.rows() {
                        node.proj.set_row(offset + j, new.row(j));
                    }
                }
                Some(s) => {
                    for j in 0..new.rows() {
                        let diff: Vec<f64> = new.row(j).iter().zip(old.row(j)).map(|(a, b)| a - b).collect();
                        for rr in 0..s.rows() {
                            let w = s[(rr, offset + j)];
                            axpy(w, &diff, node.proj.row_mut(rr));
                        }
                    }
                }
            }
            match node.children {
                None => break,
                Some((l, rgt)) => {
                    id = if i < self.nodes[l].hi { l } else { rgt };
                }
            }
        }
        Ok(())
    }

    fn node_value(&self, id: usize, h: &[f64]) -> f64 {
        norm_sq(&self.nodes[id].proj.matvec(h).expect("sized"))
    }

    /// Exact `||D_i A_i h||^2`.
    pub fn block_value(&self, i: usize, h: &[f64]) -> f64 {
        let leaf = self.leaf_of[i];
        if self.nodes[leaf].jl.is_none() {
            return self.node_value(leaf, h);
        }
        let p = block_product(&self.d_blocks[i], &self.a, self.layout.range(i).start);
        norm_sq(&p.matvec(h).expect("sized"))
    }

    /// Draws block `i` with probability `||D_i A_i h||^2 / ||D A h||^2`.
    pub fn sample(&mut self, h: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        let root = self.node_value(0, h);
        if !(root > 0.0) {
            return Err(ErmError::InvalidArgument("l2 tree sample of a zero vector".into()));
        }
        for _ in 0..10_000 {
            let mut id = 0;
            let mut path = 1.0;
            while let Some((l, r)) = self.nodes[id].children {
                let el = self.node_value(l, h);
                let er = self.node_value(r, h);
                let tot = el + er;
                if !(tot > 0.0) {
                    break;
                }
                if rng.gen::<f64>() * tot < el {
                    path *= el / tot;
                    id = l;
                } else {
                    path *= er / tot;
                    id = r;
                }
            }
            if self.nodes[id].children.is_some() {
                self.stats.restarts += 1;
                continue;
            }
            let i = self.nodes[id].lo;
            let p = self.block_value(i, h) / (2.0 * root * path);
            self.stats.min_accept = self.stats.min_accept.min(p);
            self.stats.max_accept = self.stats.max_accept.max(p);
            if !(p > 0.25 && p < 1.0) {
                self.stats.out_of_range += 1;
            }
            if rng.gen::<f64>() < p {
                self.stats.samples += 1;
                return Ok(i);
            }
            self.stats.restarts += 1;
        }
        Err(ErmError::Numerical("l2 tree sampling did not accept within 10000 attempts".into()))
    }
}

/// Source of blocks drawn proportionally to `||delta_i||^2`.
pub trait BlockSampler {
    fn sample_block(&mut self, rng: &mut dyn RngCore) -> Result<usize>;
}

/// Inverse-CDF sampler over explicit block masses.
pub struct CategoricalSampler {
    cdf: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new(mass: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = mass
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        CategoricalSampler { cdf }
    }
}

impl BlockSampler for CategoricalSampler {
    fn sample_block(&mut self, rng: &mut dyn RngCore) -> Result<usize> {
        let tot = *self.cdf.last().unwrap_or(&0.0);
        if !(tot > 0.0) {
            return Err(ErmError::InvalidArgument("categorical sampler has no mass".into()));
        }
        let u = rng.gen::<f64>() * tot;
        Ok(self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1))
    }
}

/// Samples with an [`L2SampleTree`] for a fixed `h`.
pub struct TreeSampler<'a> {
    pub tree: &'a mut L2SampleTree,
    pub h: &'a [f64],
}

impl BlockSampler for TreeSampler<'_> {
    fn sample_block(&mut self, rng: &mut dyn RngCore) -> Result<usize> {
        self.tree.sample(self.h, rng)
    }
}

#[derive(Clone, Debug)]
pub struct ValidSampleParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Draw count constant `C` in `K' = C (alpha gamma)^-2 log n * K`.
    pub count_factor: f64,
    /// `log n` of the problem.
    pub log_n: f64,
    pub max_individual_draws: u64,
}

/// Block-diagonal sampling matrix with `R = r_i I` on block `i`.
#[derive(Clone, Debug)]
pub struct SampleMatrix {
    pub r: Vec<f64>,
    pub draws: u64,
}

impl SampleMatrix {
    pub fn identity(m: usize) -> Self {
        SampleMatrix { r: vec![1.0; m], draws: 0 }
    }

    pub fn support(&self) -> usize {
        self.r.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn apply(&self, layout: &BlockLayout, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for i in 0..layout.blocks() {
            for c in layout.range(i) {
                out[c] *= self.r[i];
            }
        }
        out
    }
}

/// Block probabilities `p_i = (sqrt(m) (q_i + 1/m) + tau_i) / K` with `K = 2 sqrt(m) + sum tau`.
pub fn valid_sample_probabilities(block_norm_sq: &[f64], tau: &[f64]) -> (Vec<f64>, f64) {
    let m = block_norm_sq.len() as f64;
    let total: f64 = block_norm_sq.iter().sum();
    let k = 2.0 * m.sqrt() + tau.iter().sum::<f64>();
    let p = block_norm_sq
        .iter()
        .zip(tau)
        .map(|(&b, &t)| {
            let q = if total > 0.0 { b / total } else { 1.0 / m };
            (m.sqrt() * (q + 1.0 / m) + t) / k
        })
        .collect();
    (p, k)
}

/// Draws `R` as a sum of `K'` rescaled block indicators. `block_norm_sq[i] = ||delta_i||^2`
/// and `tau` are per-block leverage overestimates. When `K'` is above the individual draw
/// limit, the `l2` component is drawn as multinomial counts from the exact block masses.
pub fn build_valid_r(
    block_norm_sq: &[f64],
    tau: &[f64],
    params: &ValidSampleParams,
    sampler: &mut dyn BlockSampler,
    rng: &mut dyn RngCore,
) -> Result<SampleMatrix> {
    let m = block_norm_sq.len();
    if tau.len() != m {
        return Err(ErmError::dims("build_valid_r", m, tau.len()));
    }
    let total: f64 = block_norm_sq.iter().sum();
    if m == 0 || total == 0.0 {
        return Ok(SampleMatrix::identity(m));
    }
    let (p, k) = valid_sample_probabilities(block_norm_sq, tau);
    let raw = params.count_factor * params.log_n.max(1.0) * k / (params.alpha * params.gamma).powi(2);
    let draws = if raw >= 1e18 { 1e18 as u64 } else { (raw.ceil() as u64).max(1) };

    let sm = (m as f64).sqrt();
    let tau_sum: f64 = tau.iter().sum();
    let split = multinomial(&[sm / k, sm / k, tau_sum / k], draws, rng, 0)?;
    let mut counts = vec![0u64; m];
    let l2_mass: Vec<f64> = block_norm_sq.iter().map(|b| b / total).collect();
    if split[0] <= params.max_individual_draws {
        for _ in 0..split[0] {
            counts[sampler.sample_block(rng)?] += 1;
        }
    } else {
        let c = multinomial(&l2_mass, split[0], rng, 0)?;
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    let uniform = vec![1.0 / m as f64; m];
    let c = multinomial(&uniform, split[1], rng, params.max_individual_draws)?;
    counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    if tau_sum > 0.0 {
        let tw: Vec<f64> = tau.iter().map(|t| t / tau_sum).collect();
        let c = multinomial(&tw, split[2], rng, params.max_individual_draws)?;
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    let r = counts
        .iter()
        .zip(&p)
        .map(|(&c, &pi)| c as f64 / (pi * draws as f64))
        .collect();
    Ok(SampleMatrix { r, draws })
}

/// Accumulates primal steps per block and flags blocks whose `x_bar` must move.
pub struct PrimalTracker {
    layout: BlockLayout,
    threshold: f64,
    g_acc: Vec<f64>,
    r_acc: Vec<f64>,
    pub refreshes: usize,
}

impl PrimalTracker {
    /// Blocks are refreshed once either accumulated part exceeds `beta / 3`.
    pub fn new(layout: BlockLayout, beta: f64) -> Self {
        let n = layout.total();
        PrimalTracker {
            layout,
            threshold: beta / 3.0,
            g_acc: vec![0.0; n],
            r_acc: vec![0.0; n],
            refreshes: 0,
        }
    }

    /// Records one step `x <- x - D (g - r_step)` in scaled coordinates; returns blocks to
    /// refresh, whose accumulators are cleared.
    pub fn update(&mut self, g: &[f64], r_step: &[f64]) -> Vec<usize> {
        axpy(1.0, g, &mut self.g_acc);
        axpy(1.0, r_step, &mut self.r_acc);
        let mut out = Vec::new();
        for i in 0..self.layout.blocks() {
            let r = self.layout.range(i);
            let gn = norm_sq(&self.g_acc[r.clone()]).sqrt();
            let rn = norm_sq(&self.r_acc[r.clone()]).sqrt();
            if gn > self.threshold || rn > self.threshold {
                self.reset_block(i);
                out.push(i);
            }
        }
        self.refreshes += out.len();
        out
    }

    pub fn reset_block(&mut self, i: usize) {
        for c in self.layout.range(i) {
            self.g_acc[c] = 0.0;
            self.r_acc[c] = 0.0;
        }
    }

    /// Accumulated displacement `||sum (g - r_step)||` of block `i` in scaled coordinates.
    pub fn drift(&self, i: usize) -> f64 {
        self.layout
            .range(i)
            .map(|c| (self.g_acc[c] - self.r_acc[c]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
