//! Log-barrier interior-point method for small dense convex QCQPs with
//! simple bounds:
//!
//! `min 0.5 y'Py + c'y  s.t.  0.5 y'A_k y + b_k'y + d_k <= 0,  lo < y < hi`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Newton decrement target `lambda^2 / 2` for one centering.
const CENTERING_TOL: f64 = 1e-12;
const MAX_NEWTON: usize = 200;
/// Barrier parameter growth per outer step.
const MU: f64 = 10.0;

#[derive(Debug, Clone)]
pub(crate) struct QuadConstr {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d: f64,
}

impl QuadConstr {
    pub fn value(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.a * y)) + self.b.dot(y) + self.d
    }

    pub fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.a * y + &self.b
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub cons: Vec<QuadConstr>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Program {
    pub fn num_inequalities(&self) -> usize {
        self.cons.len()
            + self.lo.iter().filter(|v| v.is_finite()).count()
            + self.hi.iter().filter(|v| v.is_finite()).count()
    }

    fn strictly_feasible(&self, y: &DVector<f64>) -> bool {
        y.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (l, h))| *l < *v && *v < *h)
            && self.cons.iter().all(|c| c.value(y) < 0.0)
    }

    /// Change of `t * objective - sum log(slacks)` from `y` to `y + s d`,
    /// computed from the exact quadratic increments so that large values
    /// never cancel. `None` when the new point leaves the interior.
    fn barrier_change(&self, y: &DVector<f64>, d: &DVector<f64>, s: f64, t: f64) -> Option<f64> {
        let pd = &self.p * d;
        let mut change = t * (s * (&self.p * y + &self.c).dot(d) + 0.5 * s * s * d.dot(&pd));
        for c in &self.cons {
            let slack = -c.value(y);
            let dh = s * c.gradient(y).dot(d) + 0.5 * s * s * d.dot(&(&c.a * d));
            if !(slack - dh > 0.0) {
                return None;
            }
            change -= (-dh / slack).ln_1p();
        }
        for (j, (&yj, &dj)) in y.iter().zip(d.iter()).enumerate() {
            if self.lo[j].is_finite() {
                let slack = yj - self.lo[j];
                if !(slack + s * dj > 0.0) {
                    return None;
                }
                change -= (s * dj / slack).ln_1p();
            }
            if self.hi[j].is_finite() {
                let slack = self.hi[j] - yj;
                if !(slack - s * dj > 0.0) {
                    return None;
                }
                change -= (-s * dj / slack).ln_1p();
            }
        }
        change.is_finite().then_some(change)
    }

    fn newton_system(&self, y: &DVector<f64>, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let mut grad = (&self.p * y + &self.c) * t;
        let mut hess = &self.p * t;
        for c in &self.cons {
            let s = -c.value(y);
            let g = c.gradient(y);
            grad.axpy(1.0 / s, &g, 1.0);
            hess += &c.a * (1.0 / s);
            hess.ger(1.0 / (s * s), &g, &g, 1.0);
        }
        for (j, &yj) in y.iter().enumerate() {
            if self.lo[j].is_finite() {
                let s = yj - self.lo[j];
                grad[j] -= 1.0 / s;
                hess[(j, j)] += 1.0 / (s * s);
            }
            if self.hi[j].is_finite() {
                let s = self.hi[j] - yj;
                grad[j] += 1.0 / s;
                hess[(j, j)] += 1.0 / (s * s);
            }
        }
        (grad, hess)
    }

    /// Multipliers `1 / (t * slack)` of the quadratic constraints.
    pub fn multipliers(&self, y: &DVector<f64>, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.cons.len(), self.cons.iter().map(|c| 1.0 / (t * -c.value(y))))
    }

    /// Newton's method on the barrier function for a fixed `t`. Stops early
    /// when `stop` returns true.
    pub fn center(&self, mut y: DVector<f64>, t: f64, stop: &dyn Fn(&DVector<f64>) -> bool) -> Result<DVector<f64>> {
        if !self.strictly_feasible(&y) {
            return Err(Error::InvalidProblem("barrier start is not strictly feasible".into()));
        }
        for _ in 0..MAX_NEWTON {
            let (grad, hess) = self.newton_system(&y, t);
            let step = solve_spd(hess, &grad)?;
            let decrement = -grad.dot(&step);
            if decrement / 2.0 <= CENTERING_TOL {
                break;
            }
            let mut s = 1.0;
            let mut moved = false;
            for _ in 0..80 {
                let cand = &y + &step * s;
                let accept = self.strictly_feasible(&cand)
                    && self
                        .barrier_change(&y, &step, s, t)
                        .is_some_and(|c| c <= -0.25 * s * decrement);
                if accept {
                    y = cand;
                    moved = true;
                    break;
                }
                s *= 0.5;
            }
            if !moved {
                // remaining decrease is below rounding
                break;
            }
            if stop(&y) {
                break;
            }
        }
        Ok(y)
    }

    /// Follows the central path from `y` starting at `t0` until the duality
    /// gap bound `m / t` drops below `gap`. Returns the final point and `t`.
    pub fn solve(&self, y: DVector<f64>, t0: f64, gap: f64) -> Result<(DVector<f64>, f64)> {
        let m = self.num_inequalities().max(1) as f64;
        let mut t = t0;
        let mut y = self.center(y, t, &|_| false)?;
        while m / t > gap {
            t *= MU;
            y = self.center(y, t, &|_| false)?;
        }
        Ok((y, t))
    }

    /// One more outer step of the path following.
    pub fn advance(&self, y: DVector<f64>, t: f64) -> Result<(DVector<f64>, f64)> {
        let t = t * MU;
        Ok((self.center(y, t, &|_| false)?, t))
    }
}

fn solve_spd(mut h: DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mut shift = 0.0;
    for _ in 0..8 {
        if let Some(chol) = h.clone().cholesky() {
            return Ok(-chol.solve(g));
        }
        let add = if shift == 0.0 { 1e-14 * scale } else { shift * 9.0 };
        for j in 0..h.nrows() {
            h[(j, j)] += add;
        }
        shift += add;
    }
    Err(Error::NonFinite("barrier Newton system"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_linear_program() {
        // min -y s.t. y^2/2 - 2 <= 0, y in (-10, 10): y* = 2
        let prog = Program {
            p: DMatrix::zeros(1, 1),
            c: DVector::from_element(1, -1.0),
            cons: vec![QuadConstr {
                a: DMatrix::from_element(1, 1, 1.0),
                b: DVector::zeros(1),
                d: -2.0,
            }],
            lo: DVector::from_element(1, -10.0),
            hi: DVector::from_element(1, 10.0),
        };
        let (y, t) = prog.solve(DVector::zeros(1), 1.0, 1e-8).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-8);
        // multiplier of y^2/2 <= 2 is 1/y* = 0.5
        assert!((prog.multipliers(&y, t)[0] - 0.5).abs() < 1e-6);
    }
}
