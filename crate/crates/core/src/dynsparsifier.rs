//! Leverage-score overestimates under adaptive row updates.
//!
//! [`DecrementalSparsifier`] supports halving rows. Halvings are buffered until
//! their estimated removed leverage exceeds a small constant, then a batch is
//! flushed: a fresh spectral sparsifier and JL checker are drawn, the halved
//! rows are re-estimated, and a heavy-hitter query over dyadic windows of
//! earlier checkers finds every other row whose estimate may have gone stale.
//! [`DynamicSparsifier`] adds insertions and deletions by binary bucketing of
//! decremental instances.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{ErmError, Result};
use crate::levscore::{lev_overestimate, sample_sparsifier, LevChecker, SamplingConfig};
use crate::linalg::{cholesky, gram, loewner_approx, norm_sq, sym_eigen, DenseMatrix};
use crate::rng::derive_seed;
use crate::sketch::{jl_out_dim, HeavyHitterSet, HhConfig, JlSketch};

#[derive(Clone, Debug)]
pub struct DecrementalConfig {
    /// Replace sampled Grams and JL checkers with exact ones.
    pub exact_oracle: bool,
    /// Compute exact removed leverage, overestimate violations and batch spectral checks.
    pub instrumented: bool,
    /// Expected number of batches; defaults to `batch_factor * d * ln(n d kappa)`.
    pub q_max: Option<usize>,
    pub batch_factor: f64,
    /// Checker JL accuracy and constant.
    pub jl_eps: f64,
    pub jl_c: f64,
    /// Estimates are `d/n + est_factor * ||Z a||^2`.
    pub est_factor: f64,
    /// Sampling weights for the next sparsifier are `prev_weight_factor * tau`.
    pub prev_weight_factor: f64,
    /// A batch is flushed once buffered removed leverage exceeds this.
    pub flush_threshold: f64,
    /// Rows with squared norm below `kappa^-dead_exponent` are set to zero.
    pub dead_exponent: f64,
    pub sampling: SamplingConfig,
    pub hh: HhConfig,
}

impl Default for DecrementalConfig {
    fn default() -> Self {
        DecrementalConfig {
            exact_oracle: false,
            instrumented: false,
            q_max: None,
            batch_factor: 10.0,
            jl_eps: 0.5,
            jl_c: 8.0,
            est_factor: 10.0,
            prev_weight_factor: 10.0,
            flush_threshold: 0.01,
            dead_exponent: 10.0,
            sampling: SamplingConfig::default(),
            hh: HhConfig::default(),
        }
    }
}

/// Per-batch diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct BatchRecord {
    pub q: usize,
    pub halvings: usize,
    pub sparsifier_rows: usize,
    pub removed_estimate: f64,
    pub removed_exact: Option<f64>,
    pub sum_tau: f64,
    pub candidates_checked: usize,
    pub recomputed: usize,
    pub psd_clamped: usize,
    /// Closing Gram within a factor 10 of the opening Gram.
    pub spectral_ok: Option<bool>,
    /// Live rows whose overestimate fell below the exact leverage.
    pub violations: Option<usize>,
}

pub struct DecrementalSparsifier {
    a: DenseMatrix,
    kappa: f64,
    cfg: DecrementalConfig,
    tau: Vec<f64>,
    halvings: Vec<u32>,
    buffer: Vec<usize>,
    buffer_est: f64,
    q: usize,
    q_max: usize,
    eps_checker: f64,
    /// Inverse sparsifier Grams for every batch so far.
    ginv: Vec<DenseMatrix>,
    checker: LevChecker,
    hh: HeavyHitterSet,
    rng_checker: ChaCha8Rng,
    open_gram: Option<DenseMatrix>,
    open_rows: HashMap<usize, Vec<f64>>,
    records: Vec<BatchRecord>,
    warned_q: bool,
}

fn ln_floor(x: f64) -> f64 {
    x.max(2.0).ln()
}

impl DecrementalSparsifier {
    /// `seed` drives both the checker stream (sparsifiers, JL matrices) and the
    /// independent locator stream (heavy-hitter hashing and query projections).
    pub fn new(a: DenseMatrix, kappa: f64, seed: u64, cfg: DecrementalConfig) -> Result<Self> {
        Self::with_seeds(
            a,
            kappa,
            derive_seed(seed, "checker"),
            derive_seed(seed, "locator"),
            cfg,
        )
    }

    pub fn with_seeds(
        a: DenseMatrix,
        kappa: f64,
        checker_seed: u64,
        locator_seed: u64,
        cfg: DecrementalConfig,
    ) -> Result<Self> {
        if !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(ErmError::InvalidArgument(format!("kappa must be >= 1, got {kappa}")));
        }
        let (n, d) = a.shape();
        if d == 0 {
            return Err(ErmError::InvalidArgument("rows must have positive width".into()));
        }
        for i in 0..n {
            let ns = norm_sq(a.row(i));
            if !(ns <= kappa) {
                return Err(ErmError::RowNormBound { row: i, norm_sq: ns, kappa });
            }
        }
        let q_max = cfg.q_max.unwrap_or_else(|| {
            (cfg.batch_factor * d as f64 * ln_floor(n as f64 * d as f64 * kappa)).ceil() as usize
        });
        let q_max = q_max.max(1);
        let eps_checker = 0.1 / q_max as f64;
        let g0 = gram(&a, 1.0 / kappa);
        let ginv0 = cholesky(&g0)?.inverse();
        let mut rng_checker = ChaCha8Rng::seed_from_u64(checker_seed);
        let checker = if cfg.exact_oracle {
            LevChecker::exact(&g0)?
        } else {
            let s = JlSketch::new(jl_out_dim(n, cfg.jl_eps, cfg.jl_c), d, &mut rng_checker);
            LevChecker::sketched(&g0, &s)?
        };
        let tau = (0..n)
            .map(|i| lev_overestimate(&checker, a.row(i), n, cfg.est_factor))
            .collect();
        let hh = HeavyHitterSet::new(a.clone(), locator_seed, &cfg.hh)?;
        let open_gram = cfg.instrumented.then(|| g0.clone());
        Ok(DecrementalSparsifier {
            tau,
            halvings: vec![0; n],
            buffer: Vec::new(),
            buffer_est: 0.0,
            q: 0,
            q_max,
            eps_checker,
            ginv: vec![ginv0],
            checker,
            hh,
            rng_checker,
            open_gram,
            open_rows: HashMap::new(),
            records: Vec::new(),
            warned_q: false,
            a,
            kappa,
            cfg,
        })
    }

    pub fn len(&self) -> usize {
        self.a.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn rows(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.a.row(i)
    }

    /// Current overestimates; valid for the current rows.
    pub fn overestimates(&self) -> &[f64] {
        &self.tau
    }

    pub fn halving_counts(&self) -> &[u32] {
        &self.halvings
    }

    pub fn batches(&self) -> &[BatchRecord] {
        &self.records
    }

    pub fn batch_count(&self) -> usize {
        self.q
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn eps_checker(&self) -> f64 {
        self.eps_checker
    }

    pub fn pending_halvings(&self) -> usize {
        self.buffer.len()
    }

    /// Halves row `i`; returns the batch record if this halving triggered a flush.
    pub fn halve(&mut self, i: usize) -> Result<Option<BatchRecord>> {
        self.halve_deferred(i)?;
        if self.buffer_est > self.cfg.flush_threshold {
            return self.flush().map(Some);
        }
        Ok(None)
    }

    /// Flushes only if the buffered removed leverage exceeds the threshold.
    pub fn flush_if_due(&mut self) -> Result<Option<BatchRecord>> {
        if self.buffer_est > self.cfg.flush_threshold {
            return self.flush().map(Some);
        }
        Ok(None)
    }

    /// Halves row `i` and buffers it without flushing.
    pub fn halve_deferred(&mut self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(ErmError::IndexOutOfRange { index: i, len: self.len() });
        }
        let before = self.a.row(i).to_vec();
        if self.cfg.instrumented {
            self.open_rows.entry(i).or_insert_with(|| before.clone());
        }
        let est = 0.75 * self.checker.norm_sq(&before);
        let mut after: Vec<f64> = before.iter().map(|x| 0.5 * x).collect();
        if norm_sq(&after) < self.kappa.powf(-self.cfg.dead_exponent) {
            after.iter_mut().for_each(|x| *x = 0.0);
        }
        self.a.set_row(i, &after);
        self.halvings[i] += 1;
        self.buffer.push(i);
        self.buffer_est += est;
        Ok(())
    }

    /// Flushes pending halvings as a batch even if the threshold was not reached.
    pub fn flush_pending(&mut self) -> Result<Option<BatchRecord>> {
        if self.buffer.is_empty() {
            return Ok(None);
        }
        self.flush().map(Some)
    }

    fn flush(&mut self) -> Result<BatchRecord> {
        self.q += 1;
        let q = self.q;
        if q > self.q_max && !self.warned_q {
            log::warn!("batch count {q} exceeded the planned {}; checker accuracy no longer covers the run", self.q_max);
            self.warned_q = true;
        }
        let (n, d) = self.a.shape();
        let ridge = 1.0 / self.kappa;

        // Sparsifier of the current rows, sampled with the previous overestimates.
        let (gt, sparsifier_rows) = if self.cfg.exact_oracle {
            (gram(&self.a, ridge), n)
        } else {
            let w: Vec<f64> = (0..n)
                .map(|i| {
                    if norm_sq(self.a.row(i)) == 0.0 {
                        0.0
                    } else {
                        self.cfg.prev_weight_factor * self.tau[i]
                    }
                })
                .collect();
            let s = sample_sparsifier(&self.a, &w, self.eps_checker, &mut self.rng_checker, &self.cfg.sampling)?;
            (s.gram(&self.a, ridge), s.distinct())
        };
        let gt_inv = cholesky(&gt)?.inverse();

        let jl = if self.cfg.exact_oracle {
            None
        } else {
            Some(JlSketch::new(jl_out_dim(n, self.cfg.jl_eps, self.cfg.jl_c), d, &mut self.rng_checker))
        };
        let checker = match &jl {
            None => LevChecker::exact(&gt)?,
            Some(s) => LevChecker::sketched(&gt, s)?,
        };

        let mut distinct: Vec<usize> = self.buffer.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let mut fresh = vec![false; n];
        for &i in &distinct {
            self.hh.modify(i, self.a.row(i))?;
            self.tau[i] = lev_overestimate(&checker, self.a.row(i), n, self.cfg.est_factor);
            fresh[i] = true;
        }
        self.ginv.push(gt_inv);

        let ln_n = ln_floor(n as f64);
        let loc_thr = d as f64 / (20.0 * n as f64 * ln_n);
        let recompute_thr = d as f64 / (10.0 * n as f64 * ln_n);
        let mut candidates = 0;
        let mut recomputed = distinct.len();
        let mut psd_clamped = 0;
        let ec = self.eps_checker;
        let mut j = 0;
        while q % (1 << j) == 0 {
            let qh = q - (1 << j);
            let mut delta = self.ginv[q].scaled(1.0 + ec);
            delta.add_scaled(-(1.0 - ec), &self.ginv[qh])?;
            delta.symmetrize();
            let e = sym_eigen(&delta)?;
            psd_clamped += e.values.iter().filter(|&&v| v < 0.0).count();
            let dsqrt = e.map(|v| v.max(0.0).sqrt());
            let window = match &jl {
                None => LevChecker::from_z(&dsqrt),
                Some(s) => LevChecker::from_z(&s.apply_matrix(&dsqrt)?),
            };
            let found = self.hh.query(window.form(), loc_thr)?;
            candidates += self.hh.last_stats.candidates;
            for i in found {
                if !fresh[i] && window.norm_sq(self.a.row(i)) >= recompute_thr {
                    self.tau[i] = lev_overestimate(&checker, self.a.row(i), n, self.cfg.est_factor);
                    fresh[i] = true;
                    recomputed += 1;
                }
            }
            if 1usize << (j + 1) > q {
                break;
            }
            j += 1;
        }

        let mut record = BatchRecord {
            q,
            halvings: self.buffer.len(),
            sparsifier_rows,
            removed_estimate: self.buffer_est,
            removed_exact: None,
            sum_tau: self.tau.iter().sum(),
            candidates_checked: candidates,
            recomputed,
            psd_clamped,
            spectral_ok: None,
            violations: None,
        };
        if self.cfg.instrumented {
            let close = gram(&self.a, ridge);
            let f = cholesky(&close)?;
            let mut removed = 0.0;
            for (i, old) in self.open_rows.drain() {
                removed += f.inv_quad(&old) - f.inv_quad(self.a.row(i));
            }
            record.removed_exact = Some(removed);
            if let Some(open) = &self.open_gram {
                record.spectral_ok = Some(loewner_approx(open, &close, 10f64.ln())?);
            }
            let violations = (0..n)
                .filter(|&i| self.tau[i] < f.inv_quad(self.a.row(i)) * (1.0 - 1e-12))
                .count();
            record.violations = Some(violations);
            self.open_gram = Some(close);
        }
        self.checker = checker;
        self.buffer.clear();
        self.buffer_est = 0.0;
        self.records.push(record.clone());
        log::debug!("batch {q}: candidates {candidates}, recomputed {recomputed}");
        Ok(record)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RowId(pub u64);

struct Level {
    sp: DecrementalSparsifier,
    ids: Vec<Option<RowId>>,
}

/// Fully dynamic overestimates by binary bucketing of decremental instances.
pub struct DynamicSparsifier {
    d: usize,
    kappa: f64,
    seed: u64,
    cfg: DecrementalConfig,
    levels: Vec<Option<Level>>,
    index: HashMap<RowId, (usize, usize)>,
    counter: u64,
    next_id: u64,
    records: Vec<BatchRecord>,
}

impl DynamicSparsifier {
    pub fn new(d: usize, kappa: f64, seed: u64, cfg: DecrementalConfig) -> Result<Self> {
        if d == 0 {
            return Err(ErmError::InvalidArgument("rows must have positive width".into()));
        }
        if !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(ErmError::InvalidArgument(format!("kappa must be >= 1, got {kappa}")));
        }
        Ok(DynamicSparsifier {
            d,
            kappa,
            seed,
            cfg,
            levels: Vec::new(),
            index: HashMap::new(),
            counter: 0,
            next_id: 0,
            records: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Halvings applied per deletion, `ceil(10 log2 kappa)`.
    pub fn deletion_halvings(&self) -> usize {
        (10.0 * self.kappa.log2()).ceil().max(1.0) as usize
    }

    /// Inserts a batch of rows; levels below the lowest set bit of the batch counter are
    /// merged with the new rows into one fresh decremental instance.
    pub fn insert_batch(&mut self, rows: &[Vec<f64>]) -> Result<Vec<RowId>> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != self.d {
                return Err(ErmError::dims("insert_batch", self.d, r.len()));
            }
            let ns = norm_sq(r);
            if !(ns <= self.kappa) {
                return Err(ErmError::RowNormBound { row: i, norm_sq: ns, kappa: self.kappa });
            }
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        self.counter += 1;
        let level = self.counter.trailing_zeros() as usize;
        if self.levels.len() <= level {
            self.levels.resize_with(level + 1, || None);
        }
        let mut ids = Vec::new();
        let mut data = DenseMatrix::zeros(0, self.d);
        for lv in 0..=level {
            if let Some(old) = self.levels[lv].take() {
                for (i, id) in old.ids.iter().enumerate() {
                    if let Some(id) = id {
                        ids.push(Some(*id));
                        data.push_row(old.sp.row(i))?;
                    }
                }
            }
        }
        let mut new_ids = Vec::with_capacity(rows.len());
        for r in rows {
            let id = RowId(self.next_id);
            self.next_id += 1;
            ids.push(Some(id));
            new_ids.push(id);
            data.push_row(r)?;
        }
        let seed = derive_seed(self.seed, &format!("level-{}", self.counter));
        let sp = DecrementalSparsifier::new(data, self.kappa, seed, self.cfg.clone())?;
        for (i, id) in ids.iter().enumerate() {
            self.index.insert(id.expect("live"), (level, i));
        }
        self.levels[level] = Some(Level { sp, ids });
        Ok(new_ids)
    }

    /// Deletes a row by halving it `ceil(10 log2 kappa)` times in its decremental instance.
    pub fn delete(&mut self, id: RowId) -> Result<()> {
        self.delete_batch(&[id])
    }

    /// Deletes rows; all halvings of the batch are buffered and each touched level is
    /// flushed at most once.
    pub fn delete_batch(&mut self, ids: &[RowId]) -> Result<()> {
        let k = self.deletion_halvings();
        let mut touched = Vec::new();
        for id in ids {
            let (lv, i) = self
                .index
                .remove(id)
                .ok_or_else(|| ErmError::InvalidArgument(format!("unknown row id {}", id.0)))?;
            let level = self.levels[lv].as_mut().expect("indexed level");
            for _ in 0..k {
                level.sp.halve_deferred(i)?;
                if norm_sq(level.sp.row(i)) == 0.0 {
                    break;
                }
            }
            level.ids[i] = None;
            touched.push(lv);
        }
        touched.sort_unstable();
        touched.dedup();
        for lv in touched {
            let level = self.levels[lv].as_mut().expect("indexed level");
            if let Some(r) = level.sp.flush_if_due()? {
                self.records.push(r);
            }
        }
        Ok(())
    }

    pub fn contains(&self, id: RowId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn overestimate(&self, id: RowId) -> Option<f64> {
        let &(lv, i) = self.index.get(&id)?;
        Some(self.levels[lv].as_ref()?.sp.overestimates()[i])
    }

    pub fn row(&self, id: RowId) -> Option<&[f64]> {
        let &(lv, i) = self.index.get(&id)?;
        Some(self.levels[lv].as_ref()?.sp.row(i))
    }

    /// Live rows with their overestimates, sorted by id.
    pub fn live(&self) -> Vec<(RowId, f64)> {
        let mut out: Vec<(RowId, f64)> = self
            .index
            .keys()
            .map(|&id| (id, self.overestimate(id).expect("indexed")))
            .collect();
        out.sort_by_key(|p| p.0);
        out
    }

    /// Batch records flushed during deletions.
    pub fn batches(&self) -> &[BatchRecord] {
        &self.records
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels
            .iter()
            .map(|l| l.as_ref().map_or(0, |l| l.ids.iter().filter(|x| x.is_some()).count()))
            .collect()
    }
}

/// Update stream driving a sparsifier benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Halve the live row with the largest overestimate.
    MaxLev,
    /// Halve a uniformly random live row.
    Random,
    /// Delete a random row and insert a fresh one.
    Churn,
}

impl std::str::FromStr for Adversary {
    type Err = ErmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxlev" => Ok(Adversary::MaxLev),
            "random" => Ok(Adversary::Random),
            "churn" => Ok(Adversary::Churn),
            _ => Err(ErmError::InvalidArgument(format!("unknown adversary {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub n: usize,
    pub d: usize,
    pub kappa: f64,
    pub adversary: Adversary,
    pub updates: usize,
    pub seed: u64,
    pub sparsifier: DecrementalConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchSummary {
    pub updates: usize,
    pub batches: usize,
    /// `10 d ln(n d kappa)`.
    pub batch_bound: f64,
    pub final_sum_tau: f64,
    pub max_sum_tau: f64,
    /// `50 d ln^2(n kappa)`.
    pub sum_tau_bound: f64,
    /// Batches after which some live row was underestimated.
    pub violating_batches: usize,
    /// Total underestimated rows summed over batches.
    pub violations: usize,
    pub spectral_failures: usize,
}

/// Random rows with squared norms spread over `[kappa^-1/4, kappa^1/4]` times `d`.
pub fn bench_rows(n: usize, d: usize, kappa: f64, rng: &mut impl rand::Rng) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(n, d);
    for i in 0..n {
        out.set_row(i, &bench_row(d, kappa, rng));
    }
    out
}

fn bench_row(d: usize, kappa: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    let scale = kappa.powf(rng.gen_range(-0.125..0.125));
    let mut r: Vec<f64> = (0..d).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    let ns = norm_sq(&r);
    if ns > kappa {
        let f = (kappa / ns).sqrt();
        r.iter_mut().for_each(|x| *x *= f);
    }
    r
}

/// Runs an update stream and summarizes the flushed batches.
pub fn run_bench(cfg: &BenchConfig) -> Result<(BenchSummary, Vec<BatchRecord>)> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "bench-rows"));
    let a = bench_rows(cfg.n, cfg.d, cfg.kappa, &mut rng);
    let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "bench-adversary"));
    let mut max_sum = 0.0f64;
    let records = match cfg.adversary {
        Adversary::MaxLev | Adversary::Random => {
            let mut sp = DecrementalSparsifier::new(a, cfg.kappa, cfg.seed, cfg.sparsifier.clone())?;
            max_sum = max_sum.max(sp.overestimates().iter().sum());
            for _ in 0..cfg.updates {
                let live: Vec<usize> = (0..sp.len()).filter(|&i| norm_sq(sp.row(i)) > 0.0).collect();
                if live.is_empty() {
                    break;
                }
                let i = match cfg.adversary {
                    Adversary::MaxLev => *live
                        .iter()
                        .max_by(|&&x, &&y| sp.overestimates()[x].total_cmp(&sp.overestimates()[y]))
                        .expect("nonempty"),
                    _ => live[pick.gen_range(0..live.len())],
                };
                if sp.halve(i)?.is_some() {
                    max_sum = max_sum.max(sp.overestimates().iter().sum());
                }
            }
            sp.flush_pending()?;
            max_sum = max_sum.max(sp.overestimates().iter().sum());
            sp.batches().to_vec()
        }
        Adversary::Churn => {
            let mut sp = DynamicSparsifier::new(cfg.d, cfg.kappa, cfg.seed, cfg.sparsifier.clone())?;
            let rows: Vec<Vec<f64>> = (0..cfg.n).map(|i| a.row(i).to_vec()).collect();
            let mut ids = sp.insert_batch(&rows)?;
            for _ in 0..cfg.updates {
                let k = pick.gen_range(0..ids.len());
                sp.delete(ids.swap_remove(k))?;
                let fresh = bench_row(cfg.d, cfg.kappa, &mut rng);
                ids.extend(sp.insert_batch(&[fresh])?);
                max_sum = max_sum.max(sp.live().iter().map(|p| p.1).sum());
            }
            sp.batches().to_vec()
        }
    };
    let final_sum = records.last().map_or(max_sum, |r| r.sum_tau);
    let (n, d) = (cfg.n as f64, cfg.d as f64);
    let summary = BenchSummary {
        updates: cfg.updates,
        batches: records.len(),
        batch_bound: 10.0 * d * (n * d * cfg.kappa).ln(),
        final_sum_tau: final_sum,
        max_sum_tau: records.iter().map(|r| r.sum_tau).fold(max_sum, f64::max),
        sum_tau_bound: 50.0 * d * (n * cfg.kappa).ln().powi(2),
        violating_batches: records.iter().filter(|r| r.violations.unwrap_or(0) > 0).count(),
        violations: records.iter().map(|r| r.violations.unwrap_or(0)).sum(),
        spectral_failures: records.iter().filter(|r| r.spectral_ok == Some(false)).count(),
    };
    Ok((summary, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_row_major(n, d, data).unwrap()
    }

    #[test]
    fn rejects_rows_above_kappa() {
        let a = DenseMatrix::from_rows(&[vec![10.0, 0.0]]).unwrap();
        assert!(matches!(
            DecrementalSparsifier::new(a, 4.0, 1, DecrementalConfig::default()),
            Err(ErmError::RowNormBound { row: 0, .. })
        ));
    }

    #[test]
    fn overestimates_hold_under_halvings() {
        let a = random_rows(60, 3, 1);
        let cfg = DecrementalConfig {
            instrumented: true,
            ..DecrementalConfig::default()
        };
        let mut sp = DecrementalSparsifier::new(a, 1e4, 5, cfg).unwrap();
        for step in 0..150 {
            let i = (step * 7) % 60;
            sp.halve(i).unwrap();
        }
        sp.flush_pending().unwrap();
        assert!(sp.batch_count() > 0);
        for r in sp.batches() {
            assert_eq!(r.violations, Some(0), "batch {}", r.q);
            assert_eq!(r.spectral_ok, Some(true));
        }
    }

    #[test]
    fn zero_row_halving_is_idle() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut sp = DecrementalSparsifier::new(a, 10.0, 1, DecrementalConfig::default()).unwrap();
        assert!(sp.halve(0).unwrap().is_none());
        assert_eq!(sp.batch_count(), 0);
    }

    #[test]
    fn dynamic_ids_survive_merges() {
        let mut ds = DynamicSparsifier::new(2, 100.0, 3, DecrementalConfig::default()).unwrap();
        let a = ds.insert_batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = ds.insert_batch(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(ds.level_sizes(), vec![0, 3]);
        ds.delete(a[0]).unwrap();
        assert!(!ds.contains(a[0]));
        assert_eq!(ds.row(b[0]).unwrap(), &[1.0, 1.0]);
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn bench_with_no_updates_has_no_batches() {
        let cfg = BenchConfig {
            n: 30,
            d: 3,
            kappa: 100.0,
            adversary: Adversary::MaxLev,
            updates: 0,
            seed: 1,
            sparsifier: DecrementalConfig::default(),
        };
        let (s, r) = run_bench(&cfg).unwrap();
        assert_eq!(s.batches, 0);
        assert!(r.is_empty());
    }
}
