//! Johnson-Lindenstrauss projections and count-sketch heavy hitters.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ErmError, Result};
use crate::linalg::{dot, norm_sq, DenseMatrix};

/// Output dimension `ceil(c ln n / eps^2)`, at least 1.
pub fn jl_out_dim(n: usize, eps: f64, c: f64) -> usize {
    let ln = (n.max(2) as f64).ln();
    ((c * ln / (eps * eps)).ceil() as usize).max(1)
}

/// Dense Gaussian projection with `N(0, 1/k)` entries.
#[derive(Clone, Debug)]
pub struct JlSketch {
    s: DenseMatrix,
}

impl JlSketch {
    pub fn new(k: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (k as f64).sqrt();
        let data = (0..k * dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        JlSketch {
            s: DenseMatrix::from_row_major(k, dim, data).expect("sized"),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.s.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.s.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.s
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.s.matvec(v)
    }

    /// `S B`.
    pub fn apply_matrix(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.s.matmul(b)
    }
}

#[derive(Clone, Debug)]
pub struct HhConfig {
    /// Buckets per repetition are `ceil(bucket_factor / eps^2)`.
    pub bucket_factor: f64,
    /// Repetitions are the smallest odd number at least `rep_factor * ln n`.
    pub rep_factor: f64,
    /// Sketches that would need more than `max_bucket_factor * n` buckets fall back to
    /// an exact scan.
    pub max_bucket_factor: f64,
    /// Recovery output is capped at `recover_cap_factor / eps^2` indices.
    pub recover_cap_factor: f64,
    /// Queries over at most this many rows evaluate every quadratic form directly.
    pub direct_query_rows: usize,
}

impl Default for HhConfig {
    fn default() -> Self {
        HhConfig {
            bucket_factor: 16.0,
            rep_factor: 1.0,
            max_bucket_factor: 1.0,
            recover_cap_factor: 16.0,
            direct_query_rows: 1024,
        }
    }
}

impl HhConfig {
    pub fn buckets_for(&self, eps: f64) -> usize {
        ((self.bucket_factor / (eps * eps)).ceil() as usize).max(1)
    }

    pub fn reps_for(&self, n: usize) -> usize {
        let r = (self.rep_factor * (n.max(2) as f64).ln()).ceil() as usize;
        r.max(1) | 1
    }

    /// True when a sketch at accuracy `eps` is smaller than the bucket cap.
    pub fn sketchable(&self, eps: f64, n: usize) -> bool {
        eps > 0.0 && (self.buckets_for(eps) as f64) <= self.max_bucket_factor * n as f64
    }
}

/// Count sketch `Q` with `reps` independent hash rows of `buckets` buckets.
///
/// `recover` returns every index `i` with `|x_i| >= eps * ||x||_2` with high probability.
#[derive(Clone, Debug)]
pub struct HhSketch {
    n: usize,
    eps: f64,
    buckets: usize,
    reps: usize,
    bucket: Vec<u32>,
    sign: Vec<f64>,
    cap: usize,
}

impl HhSketch {
    pub fn new(eps: f64, n: usize, rng: &mut impl Rng, cfg: &HhConfig) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(ErmError::InvalidArgument(format!(
                "heavy hitter eps must lie in (0, 1], got {eps}"
            )));
        }
        let buckets = cfg.buckets_for(eps);
        let reps = cfg.reps_for(n);
        let mut bucket = Vec::with_capacity(reps * n);
        let mut sign = Vec::with_capacity(reps * n);
        for _ in 0..reps * n {
            bucket.push(rng.gen_range(0..buckets) as u32);
            sign.push(if rng.gen::<bool>() { 1.0 } else { -1.0 });
        }
        let cap = ((cfg.recover_cap_factor / (eps * eps)).ceil() as usize).max(1);
        Ok(HhSketch {
            n,
            eps,
            buckets,
            reps,
            bucket,
            sign,
            cap,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of rows of `Q`.
    pub fn rows(&self) -> usize {
        self.buckets * self.reps
    }

    /// Nonzeros `(row, sign)` of column `i` of `Q`.
    pub fn column(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.reps).map(move |r| {
            let k = r * self.n + i;
            (r * self.buckets + self.bucket[k] as usize, self.sign[k])
        })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(ErmError::dims("hh apply", self.n, x.len()));
        }
        let mut y = vec![0.0; self.rows()];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (row, s) in self.column(i) {
                    y[row] += s * xi;
                }
            }
        }
        Ok(y)
    }

    /// `Q A` for an `n x d` matrix.
    pub fn apply_rows(&self, a: &DenseMatrix) -> Result<DenseMatrix> {
        if a.rows() != self.n {
            return Err(ErmError::dims("hh apply_rows", self.n, a.rows()));
        }
        let mut out = DenseMatrix::zeros(self.rows(), a.cols());
        for i in 0..self.n {
            self.add_row(&mut out, i, a.row(i), 1.0);
        }
        Ok(out)
    }

    /// `prod += w * Q e_i v^T`.
    pub fn add_row(&self, prod: &mut DenseMatrix, i: usize, v: &[f64], w: f64) {
        for (row, s) in self.column(i) {
            crate::linalg::axpy(w * s, v, prod.row_mut(row));
        }
    }

    /// Median-of-repetitions estimate of `x_i` from `y = Q x`.
    pub fn estimate(&self, y: &[f64], i: usize) -> f64 {
        let mut buf = [0.0; 32];
        if self.reps <= buf.len() {
            for (slot, (row, s)) in buf.iter_mut().zip(self.column(i)) {
                *slot = s * y[row];
            }
            return median(&mut buf[..self.reps]);
        }
        let mut v: Vec<f64> = self.column(i).map(|(row, s)| s * y[row]).collect();
        median(&mut v)
    }

    /// Median-of-repetitions estimate of `||x||_2` from `y = Q x`.
    pub fn norm_estimate(&self, y: &[f64]) -> f64 {
        let mut v: Vec<f64> = (0..self.reps)
            .map(|r| norm_sq(&y[r * self.buckets..(r + 1) * self.buckets]).sqrt())
            .collect();
        median(&mut v)
    }

    /// Indices whose estimate reaches `eps/2` of the estimated norm, largest first.
    pub fn recover(&self, y: &[f64]) -> Vec<usize> {
        let norm = self.norm_estimate(y);
        if norm == 0.0 {
            return Vec::new();
        }
        let thr = 0.5 * self.eps * norm;
        let mut hits: Vec<(usize, f64)> = (0..self.n)
            .filter_map(|i| {
                let e = self.estimate(y, i).abs();
                (e >= thr).then_some((i, e))
            })
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1));
        hits.truncate(self.cap);
        hits.into_iter().map(|(i, _)| i).collect()
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// One accuracy level of a [`HeavyHitterSet`], holding `Q A`.
#[derive(Clone, Debug)]
struct Rung {
    sketch: HhSketch,
    qa: DenseMatrix,
}

#[derive(Clone, Debug, Default)]
pub struct QueryStats {
    /// Indices returned by sketch recovery or exact scans before verification.
    pub candidates: usize,
    /// Projection columns answered by exact scan instead of a sketch.
    pub scanned_columns: usize,
}

/// Rows `a_i` with a query returning `{ i : a_i^T M a_i >= delta }`.
#[derive(Clone, Debug)]
pub struct HeavyHitterSet {
    rows: DenseMatrix,
    rungs: Vec<Rung>,
    jl_eps: f64,
    jl_c: f64,
    direct_rows: usize,
    rng: rand_chacha::ChaCha8Rng,
    pub last_stats: QueryStats,
}

impl HeavyHitterSet {
    /// Builds sketches at accuracies `0.9^j` down to the bucket cap.
    pub fn new(rows: DenseMatrix, seed: u64, cfg: &HhConfig) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rows.rows();
        let mut rungs = Vec::new();
        let mut eps = 0.9;
        while cfg.sketchable(eps, n) {
            let sketch = HhSketch::new(eps, n, &mut rng, cfg)?;
            let qa = sketch.apply_rows(&rows)?;
            rungs.push(Rung { sketch, qa });
            eps *= 0.9;
        }
        Ok(HeavyHitterSet {
            rows,
            rungs,
            jl_eps: 0.5,
            jl_c: 8.0,
            direct_rows: cfg.direct_query_rows,
            rng,
            last_stats: QueryStats::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn rows(&self) -> &DenseMatrix {
        &self.rows
    }

    pub fn rung_count(&self) -> usize {
        self.rungs.len()
    }

    /// Replaces row `i`.
    pub fn modify(&mut self, i: usize, v: &[f64]) -> Result<()> {
        if i >= self.len() {
            return Err(ErmError::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        if v.len() != self.rows.cols() {
            return Err(ErmError::dims("hh modify", self.rows.cols(), v.len()));
        }
        let diff: Vec<f64> = v.iter().zip(self.rows.row(i)).map(|(a, b)| a - b).collect();
        for rung in &mut self.rungs {
            rung.sketch.add_row(&mut rung.qa, i, &diff, 1.0);
        }
        self.rows.set_row(i, v);
        Ok(())
    }

    /// Maximum deviation between maintained `Q A` products and a recomputation.
    pub fn product_drift(&self) -> f64 {
        self.rungs
            .iter()
            .map(|r| {
                let fresh = r.sketch.apply_rows(&self.rows).expect("sized");
                fresh
                    .data()
                    .iter()
                    .zip(r.qa.data())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0, f64::max)
    }

    /// All `i` with `a_i^T M a_i >= delta` for symmetric PSD `M`.
    pub fn query(&mut self, m: &DenseMatrix, delta: f64) -> Result<Vec<usize>> {
        let d = self.rows.cols();
        if m.shape() != (d, d) {
            return Err(ErmError::dims("hh query", format!("{d}x{d}"), format!("{:?}", m.shape())));
        }
        if !(delta > 0.0) {
            return Err(ErmError::InvalidArgument(format!("query threshold must be positive, got {delta}")));
        }
        let n = self.len();
        let mut stats = QueryStats::default();
        if n <= self.direct_rows {
            stats.candidates = n;
            self.last_stats = stats;
            return Ok((0..n).filter(|&i| m.quad_form(self.rows.row(i)) >= delta).collect());
        }
        let (msqrt, _) = crate::linalg::sqrt_psd(m)?;
        let k = jl_out_dim(n, self.jl_eps, self.jl_c);
        let s = JlSketch::new(k, d, &mut self.rng);
        // columns of N = M^{1/2} S^T
        let nmat = msqrt.matmul(&s.matrix().transpose())?;
        let col_thr = (delta * (1.0 - self.jl_eps) / k as f64).sqrt();
        let mut flagged = vec![false; n];
        for j in 0..k {
            let nj = nmat.column(j);
            let mut handled = false;
            if let Some(top) = self.rungs.first() {
                let y0 = top.qa.matvec(&nj)?;
                let scale = 1.25 * top.sketch.norm_estimate(&y0);
                if scale == 0.0 {
                    continue;
                }
                let need = col_thr / scale;
                if let Some(r) = self.rungs.iter().find(|r| r.sketch.eps() <= need) {
                    let y = r.qa.matvec(&nj)?;
                    for i in r.sketch.recover(&y) {
                        stats.candidates += 1;
                        flagged[i] = true;
                    }
                    handled = true;
                }
            }
            if !handled {
                stats.scanned_columns += 1;
                for (i, f) in flagged.iter_mut().enumerate() {
                    if dot(self.rows.row(i), &nj).abs() >= col_thr {
                        stats.candidates += 1;
                        *f = true;
                    }
                }
            }
        }
        let out = (0..n)
            .filter(|&i| flagged[i] && m.quad_form(self.rows.row(i)) >= delta)
            .collect();
        self.last_stats = stats;
        Ok(out)
    }
}
