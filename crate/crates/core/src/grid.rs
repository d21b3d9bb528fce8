//! Uniform time partitions of [0, T] and the triangular index domain
//! {(t, s) : t <= s} that two-parameter integrands live on.

use crate::error::{Error, Result};

/// Hard cap on refinement so dyadic ladders cannot overflow.
pub const MAX_STEPS: usize = 1 << 26;

/// Uniform partition of [0, T] into `steps` intervals.
///
/// Points are always computed as `k * T / N`, never by accumulating
/// increments, so refined grids nest exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be at least 1".into()));
        }
        if steps > MAX_STEPS {
            return Err(Error::InvalidGrid(format!(
                "steps {steps} exceeds cap {MAX_STEPS}"
            )));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// k-th grid point; the last point is the horizon exactly.
    pub fn point(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.point(k)).collect()
    }

    /// Same horizon, doubled step count. Every old point is a new point.
    pub fn refine(&self) -> Result<Self> {
        if self.steps > MAX_STEPS / 2 {
            return Err(Error::RefinementOverflow { max: MAX_STEPS });
        }
        Ok(TimeGrid {
            horizon: self.horizon,
            steps: self.steps * 2,
        })
    }

    /// True when `self`'s points are a subset of `finer`'s points.
    pub fn nests_into(&self, finer: &TimeGrid) -> bool {
        self.horizon == finer.horizon && finer.steps % self.steps == 0
    }

    pub fn triangle_points(&self) -> Vec<TrianglePoint> {
        let n = self.steps;
        let mut pts = Vec::with_capacity(triangle_len(n));
        for outer in 0..=n {
            for inner in outer..=n {
                pts.push(TrianglePoint { outer, inner });
            }
        }
        pts
    }
}

/// Index pair (i, j) with i <= j, the grid trace of the triangle domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TrianglePoint {
    pub outer: usize,
    pub inner: usize,
}

/// (N+1)(N+2)/2 pairs.
pub fn triangle_len(steps: usize) -> usize {
    (steps + 1) * (steps + 2) / 2
}
