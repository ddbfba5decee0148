//! Leverage-score sampling and JL-based leverage estimates.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{ErmError, Result};
use crate::linalg::{gram, inv_sqrt, DenseMatrix};
use crate::sketch::JlSketch;

#[derive(Clone, Debug)]
pub struct SamplingConfig {
    /// Sample count is `ceil(count_factor * eps^-2 * log n * sum w)`.
    pub count_factor: f64,
    /// Above this many draws the multinomial counts are drawn directly.
    pub max_individual_draws: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            count_factor: 100.0,
            max_individual_draws: 1 << 16,
        }
    }
}

/// Number of draws for a sparsifier at accuracy `eps`. `log n` is floored at 1.
pub fn sample_count(n: usize, eps: f64, sum_w: f64, cfg: &SamplingConfig) -> u64 {
    let ln = (n as f64).ln().max(1.0);
    let t = (cfg.count_factor * ln * sum_w / (eps * eps)).ceil();
    if t >= u64::MAX as f64 / 4.0 {
        u64::MAX / 4
    } else {
        (t as u64).max(1)
    }
}

/// With-replacement sample stored as `(row, multiplicity, probability)` triples.
#[derive(Clone, Debug)]
pub struct WeightedSample {
    pub draws: u64,
    pub picks: Vec<(usize, u64, f64)>,
}

impl WeightedSample {
    /// Gram weight `multiplicity / (p * T)` of each pick.
    pub fn weights(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let t = self.draws as f64;
        self.picks
            .iter()
            .map(move |&(i, mult, p)| (i, mult as f64 / (p * t)))
    }

    pub fn distinct(&self) -> usize {
        self.picks.len()
    }

    /// `sum_j w_j a_j a_j^T + ridge I`.
    pub fn gram(&self, a: &DenseMatrix, ridge: f64) -> DenseMatrix {
        let d = a.cols();
        let mut g = DenseMatrix::zeros(d, d);
        for (i, w) in self.weights() {
            g.add_outer(w, a.row(i));
        }
        g.add_diag(ridge);
        g
    }

    /// Rescaled rows `sqrt(w_j) a_j`, one per distinct pick.
    pub fn to_matrix(&self, a: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(0, a.cols());
        for (i, w) in self.weights() {
            let r: Vec<f64> = a.row(i).iter().map(|x| x * w.sqrt()).collect();
            out.push_row(&r).expect("width");
        }
        out
    }
}

/// Draws `T` rows with probabilities proportional to `w`, scaling row `i` by `(p_i T)^{-1/2}`.
///
/// If `w_i` upper-bounds the leverage of `a_i`, `A~^T A~` approximates `A^T A` within `eps`
/// with high probability.
pub fn sample_sparsifier(
    a: &DenseMatrix,
    w: &[f64],
    eps: f64,
    rng: &mut (impl Rng + ?Sized),
    cfg: &SamplingConfig,
) -> Result<WeightedSample> {
    if w.len() != a.rows() {
        return Err(ErmError::dims("sample_sparsifier", a.rows(), w.len()));
    }
    if !(eps > 0.0) {
        return Err(ErmError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if let Some(i) = w.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(ErmError::InvalidArgument(format!(
            "sampling weight {i} is {}",
            w[i]
        )));
    }
    let sum: f64 = w.iter().sum();
    if sum == 0.0 {
        return Ok(WeightedSample {
            draws: 0,
            picks: Vec::new(),
        });
    }
    let draws = sample_count(a.rows(), eps, sum, cfg);
    let probs: Vec<f64> = w.iter().map(|x| x / sum).collect();
    let counts = multinomial(&probs, draws, rng, cfg.max_individual_draws)?;
    let picks = counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .map(|(i, c)| (i, c, probs[i]))
        .collect();
    Ok(WeightedSample { draws, picks })
}

/// Multinomial counts of `draws` categorical draws. Inverse-CDF sampling is used when
/// `draws` is at most `max_individual` and at most a few per category; otherwise the
/// equivalent chain of conditional binomials.
pub fn multinomial(
    probs: &[f64],
    draws: u64,
    rng: &mut (impl Rng + ?Sized),
    max_individual: u64,
) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; probs.len()];
    if probs.is_empty() || draws == 0 {
        return Ok(counts);
    }
    if draws <= max_individual && draws <= 4 * probs.len() as u64 {
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in probs {
            acc += p;
            cdf.push(acc);
        }
        for _ in 0..draws {
            let u = rng.gen::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
            counts[i] += 1;
        }
        return Ok(counts);
    }
    let last = match probs.iter().rposition(|&p| p > 0.0) {
        Some(l) => l,
        None => return Ok(counts),
    };
    let mut remaining = draws;
    let mut mass: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate().take(last + 1) {
        if remaining == 0 {
            break;
        }
        if p <= 0.0 {
            continue;
        }
        if i == last || mass <= p {
            counts[i] = remaining;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let c = binomial(remaining, q, rng)?;
        counts[i] = c;
        remaining -= c;
        mass -= p;
    }
    Ok(counts)
}

/// `Binomial(n, q)`, drawn through the smaller tail probability.
fn binomial(n: u64, q: f64, rng: &mut (impl Rng + ?Sized)) -> Result<u64> {
    let small = q.min(1.0 - q);
    let k = if small <= 0.0 {
        0
    } else if (n as f64) * small < 10.0 && n > i32::MAX as u64 {
        // inversion; the library sampler breaks for large n with small mean
        let s = small / (1.0 - small);
        let a = (n as f64 + 1.0) * s;
        let mut r = ((n as f64) * (-small).ln_1p()).exp();
        let mut u: f64 = rng.gen();
        let mut x = 0u64;
        while u > r && x < n {
            u -= r;
            x += 1;
            r *= a / x as f64 - s;
        }
        x
    } else {
        Binomial::new(n, small)
            .map_err(|e| ErmError::Numerical(format!("binomial({n}, {small}): {e}")))?
            .sample(rng)
    };
    Ok(if q > 0.5 { n - k } else { k })
}

/// Quadratic form `Z^T Z` of a leverage checker `Z` (`Z = S G^{-1/2}` or `G^{-1/2}`).
#[derive(Clone, Debug)]
pub struct LevChecker {
    form: DenseMatrix,
    rows: usize,
}

impl LevChecker {
    /// `Z = S G^{-1/2}` with a JL matrix `S`.
    pub fn sketched(g: &DenseMatrix, s: &JlSketch) -> Result<Self> {
        let z = s.apply_matrix(&inv_sqrt(g)?)?;
        Ok(Self::from_z(&z))
    }

    /// `Z = G^{-1/2}`, so `||Z a||^2` is the exact leverage.
    pub fn exact(g: &DenseMatrix) -> Result<Self> {
        let gi = crate::linalg::cholesky(g)?.inverse();
        Ok(LevChecker {
            form: gi,
            rows: g.rows(),
        })
    }

    pub fn from_z(z: &DenseMatrix) -> Self {
        let mut form = gram(z, 0.0);
        form.symmetrize();
        LevChecker {
            form,
            rows: z.rows(),
        }
    }

    /// Number of rows of `Z`.
    pub fn sketch_rows(&self) -> usize {
        self.rows
    }

    pub fn form(&self) -> &DenseMatrix {
        &self.form
    }

    /// `||Z a||^2`.
    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.form.quad_form(a).max(0.0)
    }
}

/// Overestimate `d/n + c * ||Z a||^2` of a leverage score.
pub fn lev_overestimate(checker: &LevChecker, a: &[f64], n: usize, c: f64) -> f64 {
    a.len() as f64 / n.max(1) as f64 + c * checker.norm_sq(a)
}
