use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{acts_equivalent, Variant};
use crate::error::{Error, Result};
use crate::kinematics::length_split_jacobians;
use crate::model::{SystemDescription, TaskState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulabilityReport {
    pub variant: Variant,
    /// w_s, product of the nonzero singular values of J_norm.
    pub index: f64,
    /// 1/w_s (lower is better).
    pub inverse: f64,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Row weights `diag(1.., l₁, l₁, l₂, l₂, ..)` that turn angular cable rates
/// into exit-point speeds.
fn normalize(j: &DMatrix<f64>, dof: usize, task: &TaskState) -> DMatrix<f64> {
    let mut out = j.clone();
    for (i, c) in task.cables.iter().enumerate() {
        out.row_mut(dof + 2 * i).scale_mut(c.length);
        out.row_mut(dof + 2 * i + 1).scale_mut(c.length);
    }
    out
}

/// Manipulability of the task-rate map. ACTS uses the zero-offset system with
/// lengths frozen; VACTS adds the length rates as joints.
pub fn manipulability(sys: &SystemDescription, task: &TaskState, variant: Variant) -> Result<ManipulabilityReport> {
    let j = match variant {
        Variant::Acts => length_split_jacobians(&acts_equivalent(sys)?, task)?.fixed_length,
        Variant::Vacts => length_split_jacobians(sys, task)?.actuated_length,
    };
    let jn = normalize(&j, sys.payload_dof(), task);
    let sv = jn.singular_values();
    let smax = sv.max();
    let cutoff = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let mut singular_values: Vec<f64> = sv.iter().copied().filter(|&s| s > cutoff).collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let rank = singular_values.len();
    let expected = jn.nrows().min(jn.ncols());
    if rank == 0 {
        return Err(Error::RankDeficient {
            what: "normalized Jacobian",
            rank,
            expected,
        });
    }
    let index: f64 = singular_values.iter().product();
    Ok(ManipulabilityReport {
        variant,
        index,
        inverse: 1.0 / index,
        rank,
        singular_values,
    })
}
