//! Self-concordant barriers for the convex blocks `K_i`.
//!
//! Built-in kinds cover the nonnegative orthant, boxes, Euclidean balls and
//! the epigraph of a scaled squared norm. Other sets plug in through the
//! [`Barrier`] trait.

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ErmError, Result};
use crate::linalg::{cholesky, norm_sq, DenseMatrix};

/// Value, gradient and Hessian at one interior point.
#[derive(Clone, Debug)]
pub struct BarrierEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DenseMatrix,
}

pub trait Barrier: Debug + Send + Sync {
    fn dim(&self) -> usize;
    /// Self-concordance parameter.
    fn nu(&self) -> f64;
    fn is_interior(&self, x: &[f64]) -> bool;
    /// Fails with [`ErmError::NotInterior`] outside the domain.
    fn eval(&self, x: &[f64]) -> Result<BarrierEval>;
    /// A fixed interior point, used as the default starting point.
    fn anchor(&self) -> Vec<f64>;
    fn sample_interior(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    /// Upper bound on the largest eigenvalue of the inverse Hessian over the domain.
    fn inverse_hessian_bound(&self) -> Option<f64> {
        None
    }
    fn name(&self) -> String;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "barrier", content = "params", rename_all = "snake_case")]
pub enum BarrierKind {
    /// `-sum log x_j` on `x >= 0`.
    NonnegOrthant { dim: usize },
    /// `-sum log(x_j - l_j) + log(u_j - x_j)` on `l <= x <= u`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `-log(r^2 - ||x||^2)`.
    Ball { dim: usize, radius: f64 },
    /// `-log(t - q ||z||^2)` on `(z, t)`, plus `-log(cap - t)` when capped.
    EpigraphSquare {
        dim: usize,
        scale: f64,
        #[serde(default)]
        cap: Option<f64>,
    },
}

impl BarrierKind {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            BarrierKind::NonnegOrthant { dim } if *dim == 0 => Err("dim must be positive".into()),
            BarrierKind::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err("lower and upper must be nonempty and of equal length".into());
                }
                for (j, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if !(l.is_finite() && u.is_finite() && l < u) {
                        return Err(format!("coordinate {j}: need finite lower < upper"));
                    }
                }
                Ok(())
            }
            BarrierKind::Ball { dim, radius } => {
                if *dim == 0 || !(radius.is_finite() && *radius > 0.0) {
                    Err("need dim > 0 and finite radius > 0".into())
                } else {
                    Ok(())
                }
            }
            BarrierKind::EpigraphSquare { dim, scale, cap } => {
                if *dim == 0 || !(scale.is_finite() && *scale > 0.0) {
                    return Err("need dim > 0 and finite scale > 0".into());
                }
                if let Some(c) = cap {
                    if !(c.is_finite() && *c > 0.0) {
                        return Err("cap must be finite and positive".into());
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn not_interior(detail: impl Into<String>) -> ErmError {
    ErmError::NotInterior {
        block: usize::MAX,
        detail: detail.into(),
    }
}

impl Barrier for BarrierKind {
    fn dim(&self) -> usize {
        match self {
            BarrierKind::NonnegOrthant { dim } => *dim,
            BarrierKind::Box { lower, .. } => lower.len(),
            BarrierKind::Ball { dim, .. } => *dim,
            BarrierKind::EpigraphSquare { dim, .. } => dim + 1,
        }
    }

    fn nu(&self) -> f64 {
        match self {
            BarrierKind::NonnegOrthant { dim } => *dim as f64,
            BarrierKind::Box { lower, .. } => 2.0 * lower.len() as f64,
            BarrierKind::Ball { .. } => 1.0,
            BarrierKind::EpigraphSquare { cap, .. } => {
                if cap.is_some() {
                    2.0
                } else {
                    1.0
                }
            }
        }
    }

    fn is_interior(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            BarrierKind::NonnegOrthant { .. } => x.iter().all(|&v| v > 0.0),
            BarrierKind::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&v, (&l, &u))| v > l && v < u),
            BarrierKind::Ball { radius, .. } => norm_sq(x) < radius * radius,
            BarrierKind::EpigraphSquare { dim, scale, cap } => {
                let t = x[*dim];
                t - scale * norm_sq(&x[..*dim]) > 0.0 && cap.map_or(true, |c| t < c)
            }
        }
    }

    fn eval(&self, x: &[f64]) -> Result<BarrierEval> {
        if !self.is_interior(x) {
            return Err(not_interior(format!("{} at {:?}", self.name(), x)));
        }
        let n = x.len();
        let mut grad = vec![0.0; n];
        let mut hess = DenseMatrix::zeros(n, n);
        let value = match self {
            BarrierKind::NonnegOrthant { .. } => {
                let mut v = 0.0;
                for j in 0..n {
                    v -= x[j].ln();
                    grad[j] = -1.0 / x[j];
                    hess[(j, j)] = 1.0 / (x[j] * x[j]);
                }
                v
            }
            BarrierKind::Box { lower, upper } => {
                let mut v = 0.0;
                for j in 0..n {
                    let a = x[j] - lower[j];
                    let b = upper[j] - x[j];
                    v -= a.ln() + b.ln();
                    grad[j] = -1.0 / a + 1.0 / b;
                    hess[(j, j)] = 1.0 / (a * a) + 1.0 / (b * b);
                }
                v
            }
            BarrierKind::Ball { radius, .. } => {
                let w = radius * radius - norm_sq(x);
                for j in 0..n {
                    grad[j] = 2.0 * x[j] / w;
                }
                hess.add_outer(4.0 / (w * w), x);
                hess.add_diag(2.0 / w);
                -w.ln()
            }
            BarrierKind::EpigraphSquare { dim, scale, cap } => {
                let k = *dim;
                let q = *scale;
                let t = x[k];
                let w = t - q * norm_sq(&x[..k]);
                // grad w = (-2 q z, 1)
                let mut gw = vec![0.0; n];
                for j in 0..k {
                    gw[j] = -2.0 * q * x[j];
                }
                gw[k] = 1.0;
                for j in 0..n {
                    grad[j] = -gw[j] / w;
                }
                hess.add_outer(1.0 / (w * w), &gw);
                for j in 0..k {
                    hess[(j, j)] += 2.0 * q / w;
                }
                let mut v = -w.ln();
                if let Some(c) = cap {
                    let s = c - t;
                    v -= s.ln();
                    grad[k] += 1.0 / s;
                    hess[(k, k)] += 1.0 / (s * s);
                }
                v
            }
        };
        Ok(BarrierEval { value, grad, hess })
    }

    fn anchor(&self) -> Vec<f64> {
        match self {
            BarrierKind::NonnegOrthant { dim } => vec![1.0; *dim],
            BarrierKind::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
            }
            BarrierKind::Ball { dim, .. } => vec![0.0; *dim],
            BarrierKind::EpigraphSquare { dim, cap, .. } => {
                let mut v = vec![0.0; dim + 1];
                v[*dim] = cap.map_or(1.0, |c| 0.5 * c);
                v
            }
        }
    }

    fn sample_interior(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        match self {
            BarrierKind::NonnegOrthant { dim } => {
                (0..*dim).map(|_| rng.gen_range(-2.0f64..2.0).exp()).collect()
            }
            BarrierKind::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.gen_range(0.05..0.95))
                .collect(),
            BarrierKind::Ball { dim, radius } => {
                let g: Vec<f64> = (0..*dim).map(|_| rng.sample(StandardNormal)).collect();
                let nrm = norm_sq(&g).sqrt().max(1e-300);
                let r = radius * rng.gen_range(0.0..0.9);
                g.iter().map(|v| v / nrm * r).collect()
            }
            BarrierKind::EpigraphSquare { dim, scale, cap } => {
                let spread = cap.map_or(1.0, |c| (0.4 * c / scale).sqrt() / (*dim as f64).sqrt());
                let mut z: Vec<f64> = (0..*dim)
                    .map(|_| spread * rng.sample::<f64, _>(StandardNormal).clamp(-1.0, 1.0))
                    .collect();
                let base = scale * norm_sq(&z);
                let t = match cap {
                    Some(c) => {
                        if base >= 0.9 * c {
                            z.iter_mut().for_each(|v| *v = 0.0);
                        }
                        let base = scale * norm_sq(&z);
                        base + (c - base) * rng.gen_range(0.05..0.95)
                    }
                    None => base + rng.gen_range(-2.0f64..1.0).exp(),
                };
                z.push(t);
                z
            }
        }
    }

    fn inverse_hessian_bound(&self) -> Option<f64> {
        match self {
            BarrierKind::NonnegOrthant { .. } => None,
            BarrierKind::Box { lower, upper } => Some(
                lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| (u - l) * (u - l) / 8.0)
                    .fold(0.0, f64::max),
            ),
            BarrierKind::Ball { radius, .. } => Some(radius * radius / 2.0),
            BarrierKind::EpigraphSquare { .. } => None,
        }
    }

    fn name(&self) -> String {
        match self {
            BarrierKind::NonnegOrthant { .. } => "nonneg_orthant".into(),
            BarrierKind::Box { .. } => "box".into(),
            BarrierKind::Ball { .. } => "ball".into(),
            BarrierKind::EpigraphSquare { .. } => "epigraph_square".into(),
        }
    }
}

/// A block barrier: built-in kind or user-provided implementation.
#[derive(Clone, Debug)]
pub enum BarrierDescriptor {
    Builtin(BarrierKind),
    Custom(Arc<dyn Barrier>),
}

impl From<BarrierKind> for BarrierDescriptor {
    fn from(k: BarrierKind) -> Self {
        BarrierDescriptor::Builtin(k)
    }
}

impl BarrierDescriptor {
    pub fn as_barrier(&self) -> &dyn Barrier {
        match self {
            BarrierDescriptor::Builtin(k) => k,
            BarrierDescriptor::Custom(b) => b.as_ref(),
        }
    }

    pub fn builtin(&self) -> Option<&BarrierKind> {
        match self {
            BarrierDescriptor::Builtin(k) => Some(k),
            BarrierDescriptor::Custom(_) => None,
        }
    }
}

/// Results of randomized self-concordance and derivative checks.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ScReport {
    pub barrier: String,
    pub trials: usize,
    /// Max of `grad^T H^{-1} grad / nu`; must stay at or below 1.
    pub max_nu_ratio: f64,
    /// Max of `|D^3 phi[u,u,u]| / (2 (u^T H u)^{3/2})`; must stay at or below 1.
    pub max_third_ratio: f64,
    /// Max relative error of the gradient against central differences of the value.
    pub grad_fd_rel: f64,
    /// Max relative error of the Hessian against central differences of the gradient.
    pub hess_fd_rel: f64,
}

impl ScReport {
    pub fn passes(&self, fd_tol: f64) -> bool {
        self.max_nu_ratio <= 1.0 + 1e-9
            && self.max_third_ratio <= 1.1
            && self.grad_fd_rel <= fd_tol
            && self.hess_fd_rel <= fd_tol
    }
}

fn shifted(x: &[f64], u: &[f64], h: f64) -> Vec<f64> {
    x.iter().zip(u).map(|(a, b)| a + h * b).collect()
}

/// Checks the barrier at `trials` random interior points.
pub fn check_barrier(b: &dyn Barrier, trials: usize, rng: &mut dyn rand::RngCore) -> Result<ScReport> {
    let mut rep = ScReport {
        barrier: b.name(),
        trials,
        ..ScReport::default()
    };
    let n = b.dim();
    for _ in 0..trials {
        let x = b.sample_interior(rng);
        let e = b.eval(&x)?;
        let f = cholesky(&e.hess)?;
        rep.max_nu_ratio = rep.max_nu_ratio.max(f.inv_quad(&e.grad) / b.nu());

        let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let uhu = e.hess.quad_form(&u);
        // keep the probe inside the Dikin ellipsoid
        let unit: Vec<f64> = u.iter().map(|v| v / uhu.sqrt()).collect();
        let h = 1e-4;
        let hp = b.eval(&shifted(&x, &unit, h))?.hess.quad_form(&unit);
        let hm = b.eval(&shifted(&x, &unit, -h))?.hess.quad_form(&unit);
        let third = (hp - hm) / (2.0 * h);
        rep.max_third_ratio = rep.max_third_ratio.max(third.abs() / 2.0);

        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let step = 1e-6 * scale;
        let gnorm = e.grad.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let hnorm = e.hess.max_abs().max(1.0);
        for j in 0..n {
            let mut ej = vec![0.0; n];
            ej[j] = 1.0;
            let ep = b.eval(&shifted(&x, &ej, step))?;
            let em = b.eval(&shifted(&x, &ej, -step))?;
            let gfd = (ep.value - em.value) / (2.0 * step);
            rep.grad_fd_rel = rep.grad_fd_rel.max((gfd - e.grad[j]).abs() / gnorm);
            for k in 0..n {
                let hfd = (ep.grad[k] - em.grad[k]) / (2.0 * step);
                rep.hess_fd_rel = rep.hess_fd_rel.max((hfd - e.hess[(k, j)]).abs() / hnorm);
            }
        }
    }
    Ok(rep)
}

/// Built-in kinds with representative parameters, for self-checks.
pub fn builtin_catalog() -> Vec<BarrierKind> {
    vec![
        BarrierKind::NonnegOrthant { dim: 3 },
        BarrierKind::Box {
            lower: vec![-1.0, 0.0],
            upper: vec![1.0, 3.0],
        },
        BarrierKind::Ball { dim: 3, radius: 2.0 },
        BarrierKind::EpigraphSquare {
            dim: 2,
            scale: 0.25,
            cap: None,
        },
        BarrierKind::EpigraphSquare {
            dim: 1,
            scale: 0.25,
            cap: Some(50.0),
        },
    ]
}

/// Block partition of the coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayout {
    starts: Vec<usize>,
}

impl BlockLayout {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut starts = vec![0];
        for &s in sizes {
            if s == 0 {
                return Err(ErmError::InvalidArgument("empty block".into()));
            }
            starts.push(starts.last().unwrap() + s);
        }
        Ok(BlockLayout { starts })
    }

    pub fn blocks(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.starts.last().unwrap()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.starts[i]..self.starts[i + 1]
    }

    pub fn size(&self, i: usize) -> usize {
        self.starts[i + 1] - self.starts[i]
    }

    pub fn max_size(&self) -> usize {
        (0..self.blocks()).map(|i| self.size(i)).max().unwrap_or(0)
    }
}
