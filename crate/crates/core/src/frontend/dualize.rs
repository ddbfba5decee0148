//! Dual conversion of `min_y sum_i f_i(A_i y - c_i)`.
//!
//! By conjugacy the problem equals `-min { sum_i c_i^T x_i + f_i^*(x_i) : sum_i A_i^T x_i = 0 }`.
//! Each conjugate is lifted into its epigraph with a scalar `x_i^obj`, giving blocks
//! `(x_i, x_i^obj)`, cost `(c_i, 1)` and `b = 0`.

use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierDescriptor, BarrierKind};
use crate::error::{ErmError, Result};
use crate::linalg::{dot, gram, norm_sq, sym_eigen, DenseMatrix};

use super::ErmInstance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossDescriptor {
    /// `f(z) = ||z||^2`, with `f^*(w) = ||w||^2 / 4`.
    Square,
    /// `f(z) = sum_j sqrt(z_j^2 + mu^2)`. No conjugate ships with it.
    SmoothedAbs { mu: f64 },
    /// A loss given only through a barrier for the epigraph `{(w, s) : s >= f^*(w)}`,
    /// whose last coordinate is `s`.
    Declared { barrier: BarrierKind },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalBlock {
    /// Rows of `A_i`.
    pub a: Vec<Vec<f64>>,
    pub shift: Vec<f64>,
    pub loss: LossDescriptor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalErmSpec {
    pub dim: usize,
    pub blocks: Vec<PrimalBlock>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub name: Option<String>,
}

impl PrimalErmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(ErmError::validation("/dim", "dimension must be positive"));
        }
        if self.blocks.is_empty() {
            return Err(ErmError::validation("/blocks", "at least one block is required"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let loc = format!("/blocks/{i}");
            if b.a.is_empty() {
                return Err(ErmError::validation(format!("{loc}/a"), "block has no rows"));
            }
            if b.shift.len() != b.a.len() {
                return Err(ErmError::validation(
                    format!("{loc}/shift"),
                    format!("expected length {}, found {}", b.a.len(), b.shift.len()),
                ));
            }
            for (r, row) in b.a.iter().enumerate() {
                if row.len() != self.dim {
                    return Err(ErmError::validation(
                        format!("{loc}/a/{r}"),
                        format!("expected length {}, found {}", self.dim, row.len()),
                    ));
                }
                if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                    return Err(ErmError::validation(format!("{loc}/a/{r}/{j}"), "entry is not finite"));
                }
            }
            if let Some(j) = b.shift.iter().position(|v| !v.is_finite()) {
                return Err(ErmError::validation(format!("{loc}/shift/{j}"), "entry is not finite"));
            }
        }
        Ok(())
    }

    fn stacked(&self) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = self.blocks.iter().flat_map(|b| b.a.iter().cloned()).collect();
        DenseMatrix::from_rows(&rows).expect("validated widths")
    }
}

/// Epigraph cap for square-loss blocks; `x_i^obj` at the optimum is at most `sum_j ||c_j||^2`.
pub fn square_loss_cap(spec: &PrimalErmSpec) -> f64 {
    4.0 * (1.0 + spec.blocks.iter().map(|b| norm_sq(&b.shift)).sum::<f64>())
}

/// Standard-form instance whose optimal value is minus the primal optimum.
pub fn dualize(spec: &PrimalErmSpec) -> Result<ErmInstance> {
    spec.validate()?;
    let d = spec.dim;
    let cap = square_loss_cap(spec);
    let mut rows = Vec::new();
    let mut c = Vec::new();
    let mut barriers: Vec<BarrierDescriptor> = Vec::new();
    let mut anchor = Vec::new();
    for (i, b) in spec.blocks.iter().enumerate() {
        let ni = b.a.len();
        let kind = match &b.loss {
            LossDescriptor::Square => BarrierKind::EpigraphSquare {
                dim: ni,
                scale: 0.25,
                cap: Some(cap),
            },
            LossDescriptor::SmoothedAbs { .. } => {
                return Err(ErmError::validation(
                    format!("/blocks/{i}/loss"),
                    "loss has no conjugate descriptor; declare its epigraph barrier",
                ))
            }
            LossDescriptor::Declared { barrier } => {
                barrier
                    .validate()
                    .map_err(|m| ErmError::validation(format!("/blocks/{i}/loss/barrier"), m))?;
                let bd = BarrierDescriptor::from(barrier.clone());
                let dim = bd.as_barrier().dim();
                if dim != ni + 1 {
                    return Err(ErmError::validation(
                        format!("/blocks/{i}/loss/barrier"),
                        format!("epigraph barrier must have dimension {}, found {dim}", ni + 1),
                    ));
                }
                barrier.clone()
            }
        };
        let bd = BarrierDescriptor::from(kind);
        anchor.extend(bd.as_barrier().anchor());
        barriers.push(bd);
        rows.extend(b.a.iter().cloned());
        rows.push(vec![0.0; d]);
        c.extend(&b.shift);
        c.push(1.0);
    }
    let a = DenseMatrix::from_rows(&rows)?;
    let kappa = match spec.kappa {
        Some(k) => k,
        None => {
            let lmin = sym_eigen(&gram(&spec.stacked(), 0.0))?.min();
            if !(lmin > 0.0) {
                return Err(ErmError::validation("/blocks", "stacked A_i does not have full column rank"));
            }
            let mut k = (1.0 / lmin).max(a.max_abs()).max(cap).max(1.0);
            for v in c.iter() {
                k = k.max(v.abs());
            }
            k * (1.0 + 1e-12)
        }
    };
    let mut inst = ErmInstance {
        a,
        b: vec![0.0; d],
        c,
        layout: crate::barrier::BlockLayout::from_sizes(
            &barriers.iter().map(|b| b.as_barrier().dim()).collect::<Vec<_>>(),
        )?,
        barriers,
        kappa,
        anchor: None,
        name: spec.name.clone(),
    };
    if inst.is_interior(&anchor) {
        inst.anchor = Some(anchor);
    }
    inst.validate()?;
    Ok(inst)
}

/// `sum_i f_i(A_i y - c_i)`.
pub fn primal_objective(spec: &PrimalErmSpec, y: &[f64]) -> Result<f64> {
    if y.len() != spec.dim {
        return Err(ErmError::dims("primal_objective", spec.dim, y.len()));
    }
    let mut total = 0.0;
    for (i, b) in spec.blocks.iter().enumerate() {
        let z: Vec<f64> = b.a.iter().zip(&b.shift).map(|(row, ci)| dot(row, y) - ci).collect();
        total += match &b.loss {
            LossDescriptor::Square => norm_sq(&z),
            LossDescriptor::SmoothedAbs { mu } => z.iter().map(|v| (v * v + mu * mu).sqrt()).sum(),
            LossDescriptor::Declared { .. } => {
                return Err(ErmError::InvalidArgument(format!(
                    "block {i} declares only a conjugate; its primal loss cannot be evaluated"
                )))
            }
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_block(a: f64, c: f64) -> PrimalErmSpec {
        PrimalErmSpec {
            dim: 1,
            blocks: vec![PrimalBlock {
                a: vec![vec![a]],
                shift: vec![c],
                loss: LossDescriptor::Square,
            }],
            kappa: None,
            name: None,
        }
    }

    #[test]
    fn dimensions_add_one_per_block() {
        let mut spec = one_block(1.0, 0.5);
        spec.blocks.push(PrimalBlock {
            a: vec![vec![2.0], vec![-1.0]],
            shift: vec![0.0, 1.0],
            loss: LossDescriptor::Square,
        });
        let inst = dualize(&spec).unwrap();
        assert_eq!(inst.n(), 2 + 3);
        assert_eq!(inst.m(), 2);
        assert_eq!(inst.c, vec![0.5, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(inst.b, vec![0.0]);
    }

    #[test]
    fn smoothed_abs_needs_declared_conjugate() {
        let mut spec = one_block(1.0, 0.0);
        spec.blocks[0].loss = LossDescriptor::SmoothedAbs { mu: 0.1 };
        let err = dualize(&spec).unwrap_err();
        assert!(matches!(err, ErmError::Validation { ref location, .. } if location == "/blocks/0/loss"));
    }

    #[test]
    fn square_loss_primal_value() {
        let spec = one_block(2.0, 1.0);
        assert_eq!(primal_objective(&spec, &[1.0]).unwrap(), 1.0);
    }
}
