//! Problem statements: the internal [`ErmInstance`], primal ERM descriptions
//! and their dual conversion, and the JSON instance format.

mod dualize;
mod io;

pub use dualize::{dualize, primal_objective, square_loss_cap, LossDescriptor, PrimalBlock, PrimalErmSpec};
pub use io::{instance_from_json, primal_spec_from_json, instance_to_json, load_instance, save_instance};

use crate::barrier::{Barrier, BarrierDescriptor, BarrierKind, BlockLayout};
use crate::error::{ErmError, Result};
use crate::linalg::{gram, sym_eigen, DenseMatrix};

/// Largest block size accepted.
pub const MAX_BLOCK: usize = 4;

/// `min c^T x` subject to `A^T x = b`, `x_i` in `K_i` for every block.
#[derive(Clone, Debug)]
pub struct ErmInstance {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub barriers: Vec<BarrierDescriptor>,
    pub layout: BlockLayout,
    pub kappa: f64,
    /// Optional interior starting point.
    pub anchor: Option<Vec<f64>>,
    pub name: Option<String>,
}

impl ErmInstance {
    pub fn new(
        a: DenseMatrix,
        b: Vec<f64>,
        c: Vec<f64>,
        barriers: Vec<BarrierDescriptor>,
        kappa: f64,
    ) -> Result<Self> {
        let sizes: Vec<usize> = barriers.iter().map(|b| b.as_barrier().dim()).collect();
        let layout = BlockLayout::from_sizes(&sizes)?;
        let inst = ErmInstance {
            a,
            b,
            c,
            barriers,
            layout,
            kappa,
            anchor: None,
            name: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }

    pub fn m(&self) -> usize {
        self.barriers.len()
    }

    pub fn nu(&self) -> f64 {
        self.barriers.iter().map(|b| b.as_barrier().nu()).sum()
    }

    pub fn barrier(&self, i: usize) -> &dyn Barrier {
        self.barriers[i].as_barrier()
    }

    pub fn block<'a>(&self, i: usize, v: &'a [f64]) -> &'a [f64] {
        &v[self.layout.range(i)]
    }

    pub fn is_interior(&self, x: &[f64]) -> bool {
        (0..self.m()).all(|i| self.barrier(i).is_interior(self.block(i, x)))
    }

    /// Anchor point: the instance anchor if present, otherwise per-block anchors.
    pub fn start_point(&self) -> Vec<f64> {
        if let Some(a) = &self.anchor {
            return a.clone();
        }
        let mut x = Vec::with_capacity(self.n());
        for b in &self.barriers {
            x.extend(b.as_barrier().anchor());
        }
        x
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.c, x)
    }

    /// Checks dimensions, finiteness, `A^T A >= I/kappa`, entry and parameter magnitudes
    /// at most `kappa`, and block sizes.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.a.shape();
        if d == 0 || n == 0 {
            return Err(ErmError::validation("/A", "A must have at least one row and column"));
        }
        if self.layout.total() != n {
            return Err(ErmError::validation(
                "/blocks",
                format!("blocks cover {} coordinates but A has {n} rows", self.layout.total()),
            ));
        }
        if self.b.len() != d {
            return Err(ErmError::validation("/b", format!("expected length {d}, found {}", self.b.len())));
        }
        if self.c.len() != n {
            return Err(ErmError::validation("/c", format!("expected length {n}, found {}", self.c.len())));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(ErmError::validation("/kappa", "kappa must be finite and at least 1"));
        }
        let k = self.kappa;
        let check = |loc: String, v: &[f64]| -> Result<()> {
            for (j, x) in v.iter().enumerate() {
                if !x.is_finite() {
                    return Err(ErmError::validation(format!("{loc}/{j}"), "entry is not finite"));
                }
                if x.abs() > k {
                    return Err(ErmError::validation(
                        format!("{loc}/{j}"),
                        format!("magnitude {x:e} exceeds kappa {k:e}"),
                    ));
                }
            }
            Ok(())
        };
        check("/A/data".into(), self.a.data())?;
        check("/b".into(), &self.b)?;
        check("/c".into(), &self.c)?;
        for (i, bd) in self.barriers.iter().enumerate() {
            let loc = format!("/blocks/{i}");
            if self.layout.size(i) > MAX_BLOCK {
                return Err(ErmError::validation(
                    loc,
                    format!("block size {} exceeds the limit {MAX_BLOCK}", self.layout.size(i)),
                ));
            }
            if let Some(kind) = bd.builtin() {
                kind.validate()
                    .map_err(|m| ErmError::validation(format!("{loc}/params"), m))?;
                let params: Vec<f64> = match kind {
                    BarrierKind::Box { lower, upper } => lower.iter().chain(upper).copied().collect(),
                    BarrierKind::Ball { radius, .. } => vec![*radius],
                    BarrierKind::EpigraphSquare { scale, cap, .. } => {
                        let mut v = vec![*scale];
                        v.extend(cap);
                        v
                    }
                    BarrierKind::NonnegOrthant { .. } => vec![],
                };
                check(format!("{loc}/params"), &params)?;
            }
        }
        let g = gram(&self.a, 0.0);
        let lmin = sym_eigen(&g)?.min();
        if !(lmin >= 1.0 / k) {
            return Err(ErmError::validation(
                "/A",
                format!("smallest eigenvalue of A^T A is {lmin:e}, below 1/kappa = {:e}", 1.0 / k),
            ));
        }
        if let Some(a) = &self.anchor {
            if a.len() != n {
                return Err(ErmError::validation("/anchor", format!("expected length {n}, found {}", a.len())));
            }
            for i in 0..self.m() {
                if !self.barrier(i).is_interior(self.block(i, a)) {
                    return Err(ErmError::validation("/anchor", format!("not interior to block {i}")));
                }
            }
        }
        Ok(())
    }
}
