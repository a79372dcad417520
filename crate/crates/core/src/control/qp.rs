//! Dense strictly convex QP, `min ½ zᵀHz + gᵀz` subject to `A z ≤ b` and
//! box bounds, solved by the Goldfarb-Idnani dual active-set method.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Entries may be `-∞` / `+∞` for unbounded variables.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z)
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.shape() != (n, n)
            || self.a.ncols() != n
            || self.a.nrows() != self.b.len()
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return invalid("QP dimensions are inconsistent");
        }
        Ok(())
    }

    /// Every constraint as `nᵢᵀz ≥ cᵢ`: general rows first, then finite
    /// lower bounds, then finite upper bounds.
    fn standard_rows(&self) -> Vec<(DVector<f64>, f64)> {
        let n = self.dim();
        let mut rows: Vec<(DVector<f64>, f64)> =
            (0..self.a.nrows()).map(|i| (-self.a.row(i).transpose(), -self.b[i])).collect();
        for j in 0..n {
            if self.lower[j].is_finite() {
                rows.push((DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 }), self.lower[j]));
            }
        }
        for j in 0..n {
            if self.upper[j].is_finite() {
                rows.push((DVector::from_fn(n, |i, _| if i == j { -1.0 } else { 0.0 }), -self.upper[j]));
            }
        }
        rows
    }

    /// Largest violation over all constraints (zero when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        self.standard_rows().iter().map(|(nrm, c)| (c - nrm.dot(z)).max(0.0)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Indices into the general rows `A` of the constraints active at the solution.
    pub active_rows: Vec<usize>,
    pub objective: f64,
    /// Norm of `Hx + g + Aᵀλ` including bound multipliers.
    pub kkt_residual: f64,
}

const FEAS_TOL: f64 = 1e-10;

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    problem.check()?;
    let n = problem.dim();
    let chol = problem
        .hessian
        .clone()
        .cholesky()
        .ok_or(Error::NumericalFailure("QP Hessian is not positive definite".into()))?;
    let l = chol.l();
    let rows = problem.standard_rows();
    let w: Vec<DVector<f64>> = rows
        .iter()
        .map(|(nrm, _)| l.solve_lower_triangular(nrm).expect("Cholesky factor is nonsingular"))
        .collect();
    let lt = l.transpose();
    let to_primal = |v: &DVector<f64>| lt.solve_upper_triangular(v).expect("Cholesky factor is nonsingular");

    let mut x = -chol.solve(&problem.gradient);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let max_iter = 10 * (n + rows.len()) + 50;
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        let mut worst: Option<(usize, f64)> = None;
        for (i, (nrm, c)) in rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = (nrm.dot(&x) - c) / nrm.norm().max(1e-300);
            if s < -FEAS_TOL * (1.0 + c.abs()) && worst.is_none_or(|(_, ws)| s < ws) {
                worst = Some((i, s));
            }
        }
        let Some((p, _)) = worst else { break };
        let (np, cp) = &rows[p];
        let mut u_plus = u.clone();
        u_plus.push(0.0);
        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::MaxIterations;
                break 'outer;
            }
            let q = active.len();
            let r: DVector<f64> = if q == 0 {
                DVector::zeros(0)
            } else {
                let wa = DMatrix::from_fn(n, q, |i, j| w[active[j]][i]);
                let m = wa.transpose() * &wa;
                let rhs = wa.transpose() * &w[p];
                match m.clone().cholesky() {
                    Some(c) => c.solve(&rhs),
                    None => m.lu().solve(&rhs).ok_or(Error::NumericalFailure("active constraints are dependent".into()))?,
                }
            };
            let mut v = w[p].clone();
            for (j, &a) in active.iter().enumerate() {
                v.axpy(-r[j], &w[a], 1.0);
            }
            let primal_step = v.norm() > 1e-12 * w[p].norm();
            let s_p = np.dot(&x) - cp;
            let t2 = if primal_step { -s_p / v.dot(&w[p]) } else { f64::INFINITY };
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..q {
                if r[j] > 1e-14 {
                    let ratio = u_plus[j] / r[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                status = QpStatus::Infeasible;
                break 'outer;
            }
            for j in 0..q {
                u_plus[j] = (u_plus[j] - t * r[j]).max(0.0);
            }
            u_plus[q] += t;
            if primal_step {
                x += t * to_primal(&v);
            }
            if primal_step && t2 <= t1 {
                active.push(p);
                u = u_plus;
                continue 'outer;
            }
            let k = drop.expect("a blocking constraint exists when t1 is finite");
            active.remove(k);
            u_plus.remove(k);
        }
    }

    let mut stationarity = &problem.hessian * &x + &problem.gradient;
    for (j, &a) in active.iter().enumerate() {
        stationarity.axpy(-u[j], &rows[a].0, 1.0);
    }
    let m_general = problem.a.nrows();
    let mut active_rows: Vec<usize> = active.iter().copied().filter(|&a| a < m_general).collect();
    active_rows.sort_unstable();
    Ok(QpSolution {
        objective: problem.objective(&x),
        kkt_residual: if status == QpStatus::Optimal { stationarity.norm() } else { f64::NAN },
        x,
        status,
        iterations,
        active_rows,
    })
}

/// Slow reference: accelerated projected-gradient ascent on the dual
/// `max_{λ≥0} −½ (g + Cᵀλ)ᵀ H⁻¹ (g + Cᵀλ) − dᵀλ` over all constraints in
/// `C z ≤ d` form. Returns the primal point recovered from the final
/// multipliers and the dual objective, a lower bound on the optimum.
pub fn solve_qp_reference(problem: &QpProblem, max_iter: usize) -> Result<(DVector<f64>, f64)> {
    problem.check()?;
    let chol = problem
        .hessian
        .clone()
        .cholesky()
        .ok_or(Error::NumericalFailure("QP Hessian is not positive definite".into()))?;
    let rows = problem.standard_rows();
    let n = problem.dim();
    let m = rows.len();
    let c = DMatrix::from_fn(m, n, |i, j| -rows[i].0[j]);
    let d = DVector::from_fn(m, |i, _| -rows[i].1);
    let primal = |lam: &DVector<f64>| -chol.solve(&(&problem.gradient + c.transpose() * lam));
    let dual = |lam: &DVector<f64>| {
        let x = primal(lam);
        -0.5 * x.dot(&(&problem.hessian * &x)) - d.dot(lam)
    };
    if m == 0 {
        let x = primal(&DVector::zeros(0));
        let obj = problem.objective(&x);
        return Ok((x, obj));
    }
    let hinv_ct = chol.solve(&c.transpose());
    let lip = (&c * &hinv_ct).symmetric_eigenvalues().max().max(1e-300);
    let step = 1.0 / lip;
    let mut lam = DVector::zeros(m);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    let mut best = dual(&lam);
    for _ in 0..max_iter {
        let grad = &c * primal(&y) - &d;
        let next = (&y + step * grad).map(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let val = dual(&next);
        if val < best {
            // adaptive restart
            y = lam.clone();
            t = 1.0;
            continue;
        }
        let delta = (&next - &lam).norm();
        y = &next + ((t - 1.0) / t_next) * (&next - &lam);
        lam = next;
        t = t_next;
        best = val;
        if delta < 1e-15 * (1.0 + lam.norm()) {
            break;
        }
    }
    Ok((primal(&lam), best))
}
