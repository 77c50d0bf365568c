//! Small dense log-barrier interior-point method.
//!
//! Minimises either a linear objective or `-sum_i log(sigma_i x_i)` subject to
//! linear inequalities `G x <= h` and convex quadratic inequalities
//! `sum_{k in idx} x_k^2 + a.x <= b`. A phase-I problem (minimise the largest
//! constraint value) supplies a strictly feasible start or an infeasibility
//! certificate.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub idx: Vec<usize>,
    pub lin: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl QuadConstraint {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.idx.iter().map(|&k| x[k] * x[k]).sum::<f64>()
            + self.lin.iter().map(|&(k, a)| a * x[k]).sum::<f64>()
            - self.rhs
    }

    fn grad(&self, x: &DVector<f64>, dim: usize) -> DVector<f64> {
        let mut g = DVector::zeros(dim);
        for &k in &self.idx {
            g[k] += 2.0 * x[k];
        }
        for &(k, a) in &self.lin {
            g[k] += a;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Linear(DVector<f64>),
    /// Minimise `-sum log(sign * x[index])`.
    NegLogSum(Vec<(usize, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierProblem {
    pub dim: usize,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub quad: Vec<QuadConstraint>,
    pub objective: Objective,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSettings {
    /// Stop when the barrier duality gap `m / t` falls below this.
    pub gap_tol: f64,
    pub mu: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        BarrierSettings { gap_tol: 1e-8, mu: 20.0, newton_tol: 1e-12, max_newton: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierStatus {
    Optimal,
    /// No strictly feasible point; carries the constraint (linear rows first,
    /// then quadratic, then log-domain) with the largest phase-I multiplier.
    Infeasible { constraint: usize },
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSolution {
    pub x: DVector<f64>,
    pub status: BarrierStatus,
    /// Multipliers of the linear rows.
    pub lin_duals: DVector<f64>,
    pub quad_duals: Vec<f64>,
    pub gap: f64,
    /// Infinity norm of the Lagrangian gradient.
    pub stationarity: f64,
    pub newton_steps: usize,
}

impl BarrierProblem {
    fn constraint_count(&self) -> usize {
        self.h.len() + self.quad.len()
    }

    fn slacks(&self, x: &DVector<f64>) -> Option<(DVector<f64>, Vec<f64>)> {
        let lin = &self.h - &self.g * x;
        if lin.iter().any(|&d| !(d > 0.0)) {
            return None;
        }
        let quad: Vec<f64> = self.quad.iter().map(|c| -c.value(x)).collect();
        if quad.iter().any(|&d| !(d > 0.0)) {
            return None;
        }
        if let Objective::NegLogSum(terms) = &self.objective {
            if terms.iter().any(|&(k, s)| !(s * x[k] > 0.0)) {
                return None;
            }
        }
        Some((lin, quad))
    }

    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        match &self.objective {
            Objective::Linear(c) => c.dot(x),
            Objective::NegLogSum(terms) => -terms.iter().map(|&(k, s)| (s * x[k]).ln()).sum::<f64>(),
        }
    }

    /// `t f0(x) - sum log(slack)`, or `None` outside the domain.
    fn barrier_value(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let (lin, quad) = self.slacks(x)?;
        Some(t * self.objective_value(x) - lin.iter().map(|d| d.ln()).sum::<f64>() - quad.iter().map(|d| d.ln()).sum::<f64>())
    }

    fn barrier_derivatives(&self, x: &DVector<f64>, t: f64, lin: &DVector<f64>, quad: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim;
        let inv = lin.map(|d| 1.0 / d);
        let mut grad = self.g.transpose() * &inv;
        let scaled = DMatrix::from_fn(self.g.nrows(), n, |i, j| self.g[(i, j)] * inv[i]);
        let mut hess = scaled.transpose() * &scaled;
        for (c, &d) in self.quad.iter().zip(quad) {
            let gc = c.grad(x, n);
            grad += &gc / d;
            hess += &gc * gc.transpose() / (d * d);
            for &k in &c.idx {
                hess[(k, k)] += 2.0 / d;
            }
        }
        match &self.objective {
            Objective::Linear(c) => grad += c * t,
            Objective::NegLogSum(terms) => {
                for &(k, _) in terms {
                    grad[k] -= t / x[k];
                    hess[(k, k)] += t / (x[k] * x[k]);
                }
            }
        }
        (grad, hess)
    }

    fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
        let n = hess.nrows();
        let scale = hess.diagonal().amax().max(1.0);
        let mut reg = 0.0;
        for _ in 0..8 {
            let mut h = hess.clone();
            for i in 0..n {
                h[(i, i)] += reg;
            }
            if let Some(ch) = h.cholesky() {
                let dx = ch.solve(&(-grad));
                if dx.iter().all(|v| v.is_finite()) {
                    return Some(dx);
                }
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        None
    }

    /// Newton centering at fixed `t`. Returns false when the step budget is exhausted.
    fn center(&self, x: &mut DVector<f64>, t: f64, settings: &BarrierSettings, steps: &mut usize, stop: &dyn Fn(&DVector<f64>) -> bool) -> bool {
        loop {
            if *steps >= settings.max_newton {
                return false;
            }
            let Some((lin, quad)) = self.slacks(x) else { return false };
            let (grad, hess) = self.barrier_derivatives(x, t, &lin, &quad);
            let Some(dx) = Self::newton_direction(hess, &grad) else { return true };
            let slope = grad.dot(&dx);
            if -slope / 2.0 <= settings.newton_tol {
                return true;
            }
            *steps += 1;
            let f0 = self.barrier_value(x, t).unwrap_or(f64::INFINITY);
            let mut step = 1.0;
            loop {
                let trial = &*x + &dx * step;
                if let Some(f) = self.barrier_value(&trial, t) {
                    if f <= f0 + 0.01 * step * slope {
                        let moved = (&trial - &*x).amax();
                        *x = trial;
                        if moved <= f64::EPSILON * (1.0 + x.amax()) {
                            // no representable progress left at this t
                            return true;
                        }
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-20 {
                    return true;
                }
            }
            if stop(x) {
                return true;
            }
        }
    }

    fn duals(&self, x: &DVector<f64>, t: f64) -> (DVector<f64>, Vec<f64>) {
        match self.slacks(x) {
            Some((lin, quad)) => (lin.map(|d| 1.0 / (t * d)), quad.iter().map(|d| 1.0 / (t * d)).collect()),
            None => (DVector::zeros(self.h.len()), vec![0.0; self.quad.len()]),
        }
    }

    fn stationarity(&self, x: &DVector<f64>, lin_duals: &DVector<f64>, quad_duals: &[f64]) -> f64 {
        let mut g = self.g.transpose() * lin_duals;
        for (c, &lam) in self.quad.iter().zip(quad_duals) {
            g += c.grad(x, self.dim) * lam;
        }
        match &self.objective {
            Objective::Linear(c) => g += c,
            Objective::NegLogSum(terms) => {
                for &(k, _) in terms {
                    g[k] -= 1.0 / x[k];
                }
            }
        }
        g.amax()
    }

    /// Strictly feasible point via phase I, starting from `x0`.
    fn phase_one(&self, x0: &DVector<f64>, settings: &BarrierSettings, steps: &mut usize) -> Result<DVector<f64>, BarrierStatus> {
        let n = self.dim;
        let domain: Vec<(usize, f64)> = match &self.objective {
            Objective::NegLogSum(terms) => terms.clone(),
            Objective::Linear(_) => Vec::new(),
        };
        let m_lin = self.h.len();
        let rows = m_lin + domain.len();
        let mut g = DMatrix::zeros(rows, n + 1);
        let mut h = DVector::zeros(rows);
        for i in 0..m_lin {
            for j in 0..n {
                g[(i, j)] = self.g[(i, j)];
            }
            g[(i, n)] = -1.0;
            h[i] = self.h[i];
        }
        for (r, &(k, s)) in domain.iter().enumerate() {
            g[(m_lin + r, k)] = -s;
            g[(m_lin + r, n)] = -1.0;
        }
        let quad = self
            .quad
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.lin.push((n, -1.0));
                c
            })
            .collect();
        let mut c = DVector::zeros(n + 1);
        c[n] = 1.0;
        let aux = BarrierProblem { dim: n + 1, g, h, quad, objective: Objective::Linear(c) };

        let worst = (&self.g * x0 - &self.h)
            .iter()
            .copied()
            .chain(self.quad.iter().map(|c| c.value(x0)))
            .chain(domain.iter().map(|&(k, s)| -s * x0[k]))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = DVector::zeros(n + 1);
        z.rows_mut(0, n).copy_from(x0);
        z[n] = worst.max(0.0) + 1.0;

        let target = -1e-3;
        let stop = |z: &DVector<f64>| z[n] < target;
        let m = aux.constraint_count() as f64;
        let mut t = 1.0;
        loop {
            let ok = aux.center(&mut z, t, settings, steps, &stop);
            let s = z[n];
            if s < target || (s < 0.0 && m / t < s.abs() * 0.1) {
                return Ok(z.rows(0, n).into_owned());
            }
            if !ok {
                return Err(BarrierStatus::MaxIter);
            }
            // s - m/t bounds the phase-I optimum from below
            if m / t < 1e-10 || (s > 0.0 && m / t < 0.5 * s) {
                if s < 0.0 {
                    return Ok(z.rows(0, n).into_owned());
                }
                let (lin, quad) = aux.duals(&z, t);
                let all: Vec<f64> = lin.iter().take(m_lin).copied().chain(quad).chain(lin.iter().skip(m_lin).copied()).collect();
                let constraint = all
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                return Err(BarrierStatus::Infeasible { constraint });
            }
            t *= settings.mu;
        }
    }

    pub fn solve(&self, x0: &DVector<f64>, settings: &BarrierSettings) -> BarrierSolution {
        let mut steps = 0;
        let fail = |status, x: DVector<f64>, steps| BarrierSolution {
            lin_duals: DVector::zeros(self.h.len()),
            quad_duals: vec![0.0; self.quad.len()],
            x,
            status,
            gap: f64::INFINITY,
            stationarity: f64::INFINITY,
            newton_steps: steps,
        };
        let mut x = if self.slacks(x0).is_some() {
            x0.clone()
        } else {
            match self.phase_one(x0, settings, &mut steps) {
                Ok(x) => x,
                Err(status) => return fail(status, x0.clone(), steps),
            }
        };

        let m = self.constraint_count().max(1) as f64;
        let mut t = 1.0;
        let never = |_: &DVector<f64>| false;
        loop {
            if !self.center(&mut x, t, settings, &mut steps, &never) {
                return fail(BarrierStatus::MaxIter, x, steps);
            }
            if m / t < settings.gap_tol {
                break;
            }
            t *= settings.mu;
        }
        let (lin_duals, quad_duals) = self.duals(&x, t);
        let stationarity = self.stationarity(&x, &lin_duals, &quad_duals);
        BarrierSolution {
            x,
            status: BarrierStatus::Optimal,
            lin_duals,
            quad_duals,
            gap: m / t,
            stationarity,
            newton_steps: steps,
        }
    }
}
