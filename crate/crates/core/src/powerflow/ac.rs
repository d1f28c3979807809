//! Newton–Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ybus::{build_ybus, series_admittance, AdmittanceMatrix};
use super::{PowerFlowError, BASE_MVA};
use crate::grid::{BusKind, GridGraph};

/// Specified bus injections in physical units. Generation is positive.
/// `v_setpoint` is read at pv buses and the slack; the slack's `p_inj` and
/// `q_inj` and the pv buses' `q_inj` are free and ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSet {
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub v_setpoint: Vec<f64>,
}

impl InjectionSet {
    pub fn flat(n: usize) -> Self {
        InjectionSet {
            p_inj: vec![0.0; n],
            q_inj: vec![0.0; n],
            v_setpoint: vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Convergence threshold on the max absolute mismatch (p.u.).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    /// Degrees.
    pub v_ang: Vec<f64>,
    /// Net injection, MW.
    pub p: Vec<f64>,
    /// Net injection, MVAr.
    pub q: Vec<f64>,
    pub p_from: Vec<f64>,
    pub q_from: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
    pub loading_pct: Vec<f64>,
    pub iterations: usize,
    /// Max mismatch (p.u.) at the start and after every accepted Newton step.
    pub mismatch_history: Vec<f64>,
}

impl PowerFlowSolution {
    pub fn final_mismatch(&self) -> f64 {
        *self.mismatch_history.last().unwrap_or(&0.0)
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| Complex64::from_polar(m, a.to_radians()))
            .collect()
    }

    /// Total active losses (MW), summed over branches.
    pub fn branch_losses_mw(&self) -> f64 {
        self.p_from.iter().zip(&self.p_to).map(|(f, t)| f + t).sum()
    }
}

/// Complex power injections `V ∘ conj(Y V)` in per unit.
pub fn power_injections(ybus: &AdmittanceMatrix, v: &[Complex64]) -> Vec<Complex64> {
    ybus.mul_vec(v)
        .iter()
        .zip(v)
        .map(|(i, v)| v * i.conj())
        .collect()
}

struct Layout {
    pvpq: Vec<usize>,
    pq: Vec<usize>,
    theta_pos: Vec<Option<usize>>,
    vm_pos: Vec<Option<usize>>,
}

impl Layout {
    fn new(grid: &GridGraph) -> Self {
        let n = grid.n_buses();
        let pvpq: Vec<usize> = (0..n)
            .filter(|&i| grid.buses()[i].kind != BusKind::Slack)
            .collect();
        let pq: Vec<usize> = (0..n)
            .filter(|&i| grid.buses()[i].kind == BusKind::Pq)
            .collect();
        let mut theta_pos = vec![None; n];
        let mut vm_pos = vec![None; n];
        for (k, &i) in pvpq.iter().enumerate() {
            theta_pos[i] = Some(k);
        }
        for (k, &i) in pq.iter().enumerate() {
            vm_pos[i] = Some(pvpq.len() + k);
        }
        Layout {
            pvpq,
            pq,
            theta_pos,
            vm_pos,
        }
    }

    fn dim(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }
}

fn mismatch(
    ybus: &AdmittanceMatrix,
    v: &[Complex64],
    spec: &[Complex64],
    layout: &Layout,
) -> (Vec<f64>, Vec<Complex64>) {
    let s = power_injections(ybus, v);
    let mut f = Vec::with_capacity(layout.dim());
    f.extend(layout.pvpq.iter().map(|&i| s[i].re - spec[i].re));
    f.extend(layout.pq.iter().map(|&i| s[i].im - spec[i].im));
    (f, s)
}

fn norm_inf(f: &[f64]) -> f64 {
    f.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn jacobian(ybus: &AdmittanceMatrix, v: &[Complex64], layout: &Layout) -> DMatrix<f64> {
    let m = layout.dim();
    let ibus = ybus.mul_vec(v);
    let j = Complex64::i();
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for i in 0..ybus.n() {
        let (row_p, row_q) = (layout.theta_pos[i], layout.vm_pos[i]);
        if row_p.is_none() {
            continue;
        }
        let vi = v[i];
        let vi_unit = vi / vi.norm();
        for (k, y) in ybus.row(i) {
            let vk = v[k];
            let mut ds_dtheta = j * vi * (-(y * vk)).conj();
            let mut ds_dvm = vi * (y * vk / vk.norm()).conj();
            if k == i {
                ds_dtheta += j * vi * ibus[i].conj();
                ds_dvm += ibus[i].conj() * vi_unit;
            }
            for (row, part) in [(row_p, 0), (row_q, 1)] {
                let Some(r) = row else { continue };
                let pick = |z: Complex64| if part == 0 { z.re } else { z.im };
                if let Some(c) = layout.theta_pos[k] {
                    jac[(r, c)] += pick(ds_dtheta);
                }
                if let Some(c) = layout.vm_pos[k] {
                    jac[(r, c)] += pick(ds_dvm);
                }
            }
        }
    }
    jac
}

fn apply_step(v: &[Complex64], dx: &[f64], alpha: f64, layout: &Layout) -> Vec<Complex64> {
    v.iter()
        .enumerate()
        .map(|(i, vi)| {
            let mut ang = vi.arg();
            let mut mag = vi.norm();
            if let Some(k) = layout.theta_pos[i] {
                ang += alpha * dx[k];
            }
            if let Some(k) = layout.vm_pos[i] {
                mag += alpha * dx[k];
            }
            Complex64::from_polar(mag, ang)
        })
        .collect()
}

/// Solves the AC power flow from a flat start (1.0 p.u. at pq buses, 0 rad).
///
/// Each Newton step is accepted only if it lowers the max mismatch; otherwise
/// the step is halved (up to 20 times) before giving up on that direction.
pub fn solve_ac_power_flow(
    grid: &GridGraph,
    inj: &InjectionSet,
    opts: &SolverOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = grid.n_buses();
    for (name, len) in [
        ("p_inj", inj.p_inj.len()),
        ("q_inj", inj.q_inj.len()),
        ("v_setpoint", inj.v_setpoint.len()),
    ] {
        if len != n {
            return Err(PowerFlowError::Dimension(format!(
                "{name} has {len} entries for {n} buses"
            )));
        }
    }
    let ybus = build_ybus(grid);
    let layout = Layout::new(grid);
    let spec: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(inj.p_inj[i], inj.q_inj[i]) / BASE_MVA)
        .collect();
    let mut v: Vec<Complex64> = grid
        .buses()
        .iter()
        .map(|b| match b.kind {
            BusKind::Pq => Complex64::new(1.0, 0.0),
            _ => Complex64::new(inj.v_setpoint[b.id], 0.0),
        })
        .collect();

    let (mut f, _) = mismatch(&ybus, &v, &spec, &layout);
    let mut norm = norm_inf(&f);
    let mut history = vec![norm];
    let mut iterations = 0;
    while norm > opts.tol {
        if iterations >= opts.max_iter {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                final_mismatch: norm,
            });
        }
        iterations += 1;
        let jac = jacobian(&ybus, &v, &layout);
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|x| -x));
        let dx = jac
            .lu()
            .solve(&rhs)
            .filter(|d| d.iter().all(|x| x.is_finite()))
            .ok_or(PowerFlowError::SingularJacobian {
                iteration: iterations,
            })?;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=20 {
            let trial = apply_step(&v, dx.as_slice(), alpha, &layout);
            let (tf, _) = mismatch(&ybus, &trial, &spec, &layout);
            let tn = norm_inf(&tf);
            if tn < norm {
                accepted = Some((trial, tf, tn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((nv, nf, nn)) = accepted else {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                final_mismatch: norm,
            });
        };
        v = nv;
        f = nf;
        norm = nn;
        history.push(norm);
    }

    Ok(assemble_solution(grid, &ybus, &v, iterations, history))
}

fn assemble_solution(
    grid: &GridGraph,
    ybus: &AdmittanceMatrix,
    v: &[Complex64],
    iterations: usize,
    mismatch_history: Vec<f64>,
) -> PowerFlowSolution {
    let s = power_injections(ybus, v);
    let nb = grid.n_branches();
    let mut sol = PowerFlowSolution {
        v_mag: v.iter().map(|x| x.norm()).collect(),
        v_ang: v.iter().map(|x| x.arg().to_degrees()).collect(),
        p: s.iter().map(|x| x.re * BASE_MVA).collect(),
        q: s.iter().map(|x| x.im * BASE_MVA).collect(),
        p_from: Vec::with_capacity(nb),
        q_from: Vec::with_capacity(nb),
        p_to: Vec::with_capacity(nb),
        q_to: Vec::with_capacity(nb),
        loading_pct: Vec::with_capacity(nb),
        iterations,
        mismatch_history,
    };
    for br in grid.branches() {
        let y = series_admittance(br.r, br.x);
        let (vf, vt) = (v[br.from], v[br.to]);
        let s_from = vf * (y * (vf - vt)).conj() * BASE_MVA;
        let s_to = vt * (y * (vt - vf)).conj() * BASE_MVA;
        sol.p_from.push(s_from.re);
        sol.q_from.push(s_from.im);
        sol.p_to.push(s_to.re);
        sol.q_to.push(s_to.im);
        sol.loading_pct
            .push(100.0 * s_from.norm().max(s_to.norm()) / br.rating_mva);
    }
    sol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::{branch, bus, path};
    use crate::grid::GridGraph;

    #[test]
    fn flat_no_load_solution() {
        let g = path(4, 0.01, 0.1);
        let sol = solve_ac_power_flow(&g, &InjectionSet::flat(4), &SolverOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.v_mag.iter().all(|&m| (m - 1.0).abs() < 1e-15));
        assert!(sol.v_ang.iter().all(|&a| a.abs() < 1e-15));
        assert!(sol.p_from.iter().chain(&sol.q_to).all(|&f| f.abs() < 1e-12));
        assert!(sol.loading_pct.iter().all(|&l| l.abs() < 1e-12));
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let g = path(2, 0.01, 0.1);
        let mut inj = InjectionSet::flat(2);
        inj.p_inj[1] = -100.0;
        inj.q_inj[1] = -20.0;
        let sol = solve_ac_power_flow(&g, &inj, &SolverOptions::default()).unwrap();

        // |V2|^4 + (2(RP + XQ) - |V1|^2)|V2|^2 + (R^2 + X^2)(P^2 + Q^2) = 0
        let (r, x, p, q): (f64, f64, f64, f64) = (0.01, 0.1, 1.0, 0.2);
        let b = 2.0 * (r * p + x * q) - 1.0;
        let c = (r * r + x * x) * (p * p + q * q);
        let u2 = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        let u = u2.sqrt();
        let zs = Complex64::new(r, x) * Complex64::new(p, -q);
        let delta = -(Complex64::new(u, 0.0) + zs / u).arg();
        assert!((sol.v_mag[1] - u).abs() < 1e-6, "{} vs {u}", sol.v_mag[1]);
        assert!((sol.v_ang[1].to_radians() - delta).abs() < 1e-6);
        assert!(sol.iterations <= 10);
        assert!(sol.final_mismatch() <= 1e-8);
    }

    #[test]
    fn infeasible_load_fails() {
        let g = GridGraph::new(
            vec![bus(0, BusKind::Slack), bus(1, BusKind::Pq)],
            vec![branch(0, 1, 0.0, 0.1)],
            vec![],
        )
        .unwrap();
        let mut inj = InjectionSet::flat(2);
        inj.p_inj[1] = -1e6;
        let err = solve_ac_power_flow(&g, &inj, &SolverOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            PowerFlowError::NonConvergence { .. } | PowerFlowError::SingularJacobian { .. }
        ));
    }

    #[test]
    fn residual_reproduces_injections() {
        let g = path(5, 0.02, 0.15);
        let mut inj = InjectionSet::flat(5);
        for i in 1..5 {
            inj.p_inj[i] = -10.0 * i as f64;
            inj.q_inj[i] = -3.0;
        }
        let sol = solve_ac_power_flow(&g, &inj, &SolverOptions::default()).unwrap();
        let s = power_injections(&build_ybus(&g), &sol.voltages());
        for i in 1..5 {
            assert!((s[i].re - inj.p_inj[i] / BASE_MVA).abs() <= 1e-8);
            assert!((s[i].im - inj.q_inj[i] / BASE_MVA).abs() <= 1e-8);
        }
        let windows = sol.mismatch_history.windows(2);
        assert!(windows.into_iter().all(|w| w[1] < w[0]));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut g = path(4, 0.03, 0.2);
        let mut buses = g.buses().to_vec();
        buses[2].kind = BusKind::Pv;
        g = GridGraph::new(buses, g.branches().to_vec(), vec![]).unwrap();
        let ybus = build_ybus(&g);
        let layout = Layout::new(&g);
        let spec = vec![Complex64::new(0.0, 0.0); 4];
        let v: Vec<Complex64> = [(1.0, 0.0), (0.97, -0.05), (1.02, -0.08), (0.95, -0.12)]
            .iter()
            .map(|&(m, a)| Complex64::from_polar(m, a))
            .collect();
        let jac = jacobian(&ybus, &v, &layout);
        let h = 1e-7;
        for c in 0..layout.dim() {
            let mut dx = vec![0.0; layout.dim()];
            dx[c] = h;
            let (fp, _) = mismatch(&ybus, &apply_step(&v, &dx, 1.0, &layout), &spec, &layout);
            let (fm, _) = mismatch(&ybus, &apply_step(&v, &dx, -1.0, &layout), &spec, &layout);
            for r in 0..layout.dim() {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!((fd - jac[(r, c)]).abs() < 1e-6, "({r},{c}): {fd} vs {}", jac[(r, c)]);
            }
        }
    }

    #[test]
    fn loading_is_direction_invariant() {
        let fwd = path(2, 0.01, 0.1);
        let rev = GridGraph::new(
            vec![bus(0, BusKind::Slack), bus(1, BusKind::Pq)],
            vec![branch(1, 0, 0.01, 0.1)],
            vec![],
        )
        .unwrap();
        let mut inj = InjectionSet::flat(2);
        inj.p_inj[1] = -50.0;
        inj.q_inj[1] = -10.0;
        let a = solve_ac_power_flow(&fwd, &inj, &SolverOptions::default()).unwrap();
        let b = solve_ac_power_flow(&rev, &inj, &SolverOptions::default()).unwrap();
        assert!((a.loading_pct[0] - b.loading_pct[0]).abs() < 1e-9);
        assert!((a.p_from[0] - b.p_to[0]).abs() < 1e-9);
    }

    #[test]
    fn nonconvergence_reports_iterations() {
        let g = path(2, 0.01, 0.1);
        let mut inj = InjectionSet::flat(2);
        inj.p_inj[1] = -100.0;
        let opts = SolverOptions { tol: 1e-8, max_iter: 1 };
        match solve_ac_power_flow(&g, &inj, &opts) {
            Err(PowerFlowError::NonConvergence { iterations, final_mismatch }) => {
                assert_eq!(iterations, 1);
                assert!(final_mismatch > 1e-8);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
