//! Euclidean projection onto the capped simplex `{x : sum x = 1, 0 <= x_i <= tau}`.

use nalgebra::DVector;

use crate::error::{Error, Result};


#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CappedSimplex {
    n: usize,
    tau: f64,
}

impl CappedSimplex {
    pub fn new(n: usize, tau: f64) -> Result<Self> {
        // a hair of slack so that e.g. n = 3, tau = 1/3 is accepted
        if n == 0 || !(tau > 0.0) || (n as f64) * tau < 1.0 - 1e-12 {
            return Err(Error::Infeasible { n, tau });
        }
        Ok(CappedSimplex { n, tau })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// The point with all coordinates equal to `1/n`.
    pub fn center(&self) -> DVector<f64> {
        DVector::from_element(self.n, 1.0 / self.n as f64)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.n
            && (x.sum() - 1.0).abs() <= tol
            && x.iter().all(|&v| v >= -tol && v <= self.tau + tol)
    }

    /// Projects `v` as `x_i = clamp(v_i - mu, 0, tau)`, with `mu` found
    /// exactly by sweeping the breakpoints of the piecewise-linear map
    /// `mu -> sum_i clamp(v_i - mu, 0, tau)`.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n {
            return Err(Error::dim("projection input", self.n, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection input"));
        }
        // (position, slope change): going down in mu, a coordinate turns
        // free at v_i and saturates at v_i - tau
        let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * self.n);
        for &x in v.iter() {
            events.push((x, 1));
            events.push((x - self.tau, -1));
        }
        events.sort_unstable_by(|p, q| q.0.total_cmp(&p.0));

        let mut mu = events[0].0;
        let mut total = 0.0;
        let mut slope = 0i32;
        for &(point, change) in &events {
            let reached = total + slope as f64 * (mu - point);
            if reached >= 1.0 && slope > 0 {
                mu -= (1.0 - total) / slope as f64;
                return Ok(self.clamp_shifted(v, mu));
            }
            total = reached;
            mu = point;
            slope += change;
        }
        // sum reaches exactly n * tau = 1 only at the last breakpoint
        Ok(self.clamp_shifted(v, mu))
    }

    fn clamp_shifted(&self, v: &DVector<f64>, mu: f64) -> DVector<f64> {
        // Recompute mu from the free coordinates so the sum is exact up to
        // rounding of that one average.
        let (mut free_sum, mut free, mut capped) = (0.0, 0usize, 0usize);
        for &x in v.iter() {
            let t = x - mu;
            if t >= self.tau {
                capped += 1;
            } else if t > 0.0 {
                free += 1;
                free_sum += x;
            }
        }
        let mu = if free > 0 {
            (free_sum + capped as f64 * self.tau - 1.0) / free as f64
        } else {
            mu
        };
        v.map(|x| (x - mu).clamp(0.0, self.tau))
    }
}
