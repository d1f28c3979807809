use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::PowerFlowError;
use crate::grid::GridGraph;

/// Linearized flow solution. Everything is per unit / radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcFlowSolution {
    pub theta: Vec<f64>,
    /// Flow from `branch.from` to `branch.to`.
    pub flow: Vec<f64>,
    /// Injections after the slack absorbed the residual.
    pub p_balanced: Vec<f64>,
}

/// Solves `B θ = P` with the slack angle pinned to zero. The slack
/// injection is replaced by minus the sum of all others.
pub fn solve_dc_power_flow(grid: &GridGraph, p_inj: &[f64]) -> Result<DcFlowSolution, PowerFlowError> {
    let n = grid.n_buses();
    if p_inj.len() != n {
        return Err(PowerFlowError::Dimension(format!(
            "p_inj has {} entries for {n} buses",
            p_inj.len()
        )));
    }
    let slack = grid.slack();
    let mut p = p_inj.to_vec();
    p[slack] = 0.0;
    p[slack] = -p.iter().sum::<f64>();

    let reduced: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in reduced.iter().enumerate() {
        pos[i] = k;
    }
    let m = reduced.len();
    let mut b = DMatrix::<f64>::zeros(m, m);
    for br in grid.branches() {
        let y = 1.0 / br.x;
        let (f, t) = (pos[br.from], pos[br.to]);
        if f != usize::MAX {
            b[(f, f)] += y;
        }
        if t != usize::MAX {
            b[(t, t)] += y;
        }
        if f != usize::MAX && t != usize::MAX {
            b[(f, t)] -= y;
            b[(t, f)] -= y;
        }
    }
    let rhs = DVector::from_iterator(m, reduced.iter().map(|&i| p[i]));
    let sol = if m == 0 {
        DVector::zeros(0)
    } else {
        b.lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|x| x.is_finite()))
            .ok_or(PowerFlowError::SingularB)?
    };
    let mut theta = vec![0.0; n];
    for (k, &i) in reduced.iter().enumerate() {
        theta[i] = sol[k];
    }
    let flow = grid
        .branches()
        .iter()
        .map(|br| (theta[br.from] - theta[br.to]) / br.x)
        .collect();
    Ok(DcFlowSolution {
        theta,
        flow,
        p_balanced: p,
    })
}
