//! Discrete Brownian drivers and conditional expectation operators.
//!
//! Three backends share one interface:
//!
//! * `Lattice` - recombining binomial walk, increment +-sqrt(dt) with
//!   probability 1/2. A function adapted at step k is a function of W(t_k)
//!   and is stored as k+1 node values. Exact arithmetic for payoffs of the
//!   terminal state, scales to large step counts.
//! * `PathTree` - the full binary tree of 2^N paths. Everything is exact,
//!   including path dependent payoffs and the predictable representation
//!   property, at the price of exponential size (capped).
//! * `MonteCarlo` - seeded ensemble of Gaussian paths with least squares
//!   regression on polynomials of W(t_k) standing in for E[. | F_{t_k}].
//!
//! On the lattice and the path tree every node has exactly two successors,
//! so one-step conditional expectations are plain two-point averages and the
//! tower property holds bit-for-bit by construction.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::Stream;

/// Default cap on path-tree depth (2^22 leaves).
pub const PATH_TREE_STEP_CAP: usize = 22;

/// Backend selection for `DriverState::build`.
#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Lattice,
    PathTree,
    MonteCarlo {
        paths: usize,
        seed: u64,
        basis_degree: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Lattice,
    PathTree,
    MonteCarlo,
}

impl BackendKind {
    /// Backends on which conditional expectations are exact.
    pub fn is_exact(self) -> bool {
        !matches!(self, BackendKind::MonteCarlo)
    }
}

/// Values attached to the nodes of one time step.
///
/// The value layout depends on the backend: `step + 1` entries on the
/// lattice (indexed by the number of up moves), `2^step` on the path tree
/// (indexed by the move bits, low bit first, 1 = up), one entry per path for
/// Monte Carlo. `adapted` records whether the values are claimed to depend
/// only on information up to `step`; position fields at the terminal step
/// carry `adapted = false`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFunction {
    step: usize,
    values: Vec<f64>,
    adapted: bool,
}

impl NodeFunction {
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_adapted(&self) -> bool {
        self.adapted
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &NodeFunction) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodeFunction {
        NodeFunction {
            step: self.step,
            values: self.values.iter().map(|&v| f(v)).collect(),
            adapted: self.adapted,
        }
    }

    pub fn zip_with(&self, other: &NodeFunction, f: impl Fn(f64, f64) -> f64) -> NodeFunction {
        debug_assert_eq!(self.step, other.step);
        debug_assert_eq!(self.values.len(), other.values.len());
        NodeFunction {
            step: self.step,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            adapted: self.adapted && other.adapted,
        }
    }

    pub fn shift(&self, c: f64) -> NodeFunction {
        self.map(|v| v + c)
    }

    pub fn scale(&self, c: f64) -> NodeFunction {
        self.map(|v| c * v)
    }

    pub(crate) fn from_parts(step: usize, values: Vec<f64>, adapted: bool) -> NodeFunction {
        NodeFunction {
            step,
            values,
            adapted,
        }
    }
}

enum BackendData {
    Lattice,
    PathTree,
    MonteCarlo {
        /// w[path][k] = W(t_k), w[path][0] = 0.
        w: Vec<Vec<f64>>,
        basis_degree: usize,
        seed: u64,
    },
}

/// A materialized driver: grid plus backend state.
pub struct DriverState {
    grid: TimeGrid,
    kind: BackendKind,
    data: BackendData,
    sqrt_dt: f64,
}

impl DriverState {
    pub fn build(grid: TimeGrid, spec: BackendSpec) -> Result<Self> {
        let sqrt_dt = grid.dt().sqrt();
        match spec {
            BackendSpec::Lattice => Ok(DriverState {
                grid,
                kind: BackendKind::Lattice,
                data: BackendData::Lattice,
                sqrt_dt,
            }),
            BackendSpec::PathTree => {
                if grid.steps() > PATH_TREE_STEP_CAP {
                    return Err(Error::PathTreeTooLarge {
                        steps: grid.steps(),
                        cap: PATH_TREE_STEP_CAP,
                    });
                }
                Ok(DriverState {
                    grid,
                    kind: BackendKind::PathTree,
                    data: BackendData::PathTree,
                    sqrt_dt,
                })
            }
            BackendSpec::MonteCarlo {
                paths,
                seed,
                basis_degree,
            } => {
                if paths < 2 {
                    return Err(Error::TooFewPaths(paths));
                }
                let n = grid.steps();
                let dt_sqrt = sqrt_dt;
                // each path is a pure function of (seed, index), so the
                // parallel generation is bit-identical to a sequential one
                let w: Vec<Vec<f64>> = (0..paths)
                    .into_par_iter()
                    .map(|p| {
                        let mut stream = Stream::new(seed, p as u64);
                        let mut path = Vec::with_capacity(n + 1);
                        let mut acc = 0.0;
                        path.push(acc);
                        for _ in 0..n {
                            acc += dt_sqrt * stream.normal();
                            path.push(acc);
                        }
                        path
                    })
                    .collect();
                Ok(DriverState {
                    grid,
                    kind: BackendKind::MonteCarlo,
                    data: BackendData::MonteCarlo {
                        w,
                        basis_degree,
                        seed,
                    },
                    sqrt_dt,
                })
            }
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        match &self.data {
            BackendData::MonteCarlo { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    /// Number of nodes carrying values at `step`.
    pub fn node_count(&self, step: usize) -> usize {
        debug_assert!(step <= self.grid.steps());
        match &self.data {
            BackendData::Lattice => step + 1,
            BackendData::PathTree => 1usize << step,
            BackendData::MonteCarlo { w, .. } => w.len(),
        }
    }

    /// W(t_step) per node.
    pub fn w_values(&self, step: usize) -> Vec<f64> {
        match &self.data {
            BackendData::Lattice => (0..=step)
                .map(|m| (2.0 * m as f64 - step as f64) * self.sqrt_dt)
                .collect(),
            BackendData::PathTree => (0..1usize << step)
                .map(|p| {
                    let ups = (p as u64).count_ones() as f64;
                    (2.0 * ups - step as f64) * self.sqrt_dt
                })
                .collect(),
            BackendData::MonteCarlo { w, .. } => w.iter().map(|path| path[step]).collect(),
        }
    }

    /// max_{k <= step} W(t_k) per node; path information is required.
    pub fn running_max_values(&self, step: usize) -> Result<Vec<f64>> {
        match &self.data {
            BackendData::Lattice => Err(Error::LatticeUnsupported(
                "running maximum of the path".into(),
            )),
            BackendData::PathTree => Ok((0..1usize << step)
                .map(|p| {
                    let mut w = 0.0;
                    let mut best: f64 = 0.0;
                    for b in 0..step {
                        w += if (p >> b) & 1 == 1 {
                            self.sqrt_dt
                        } else {
                            -self.sqrt_dt
                        };
                        best = best.max(w);
                    }
                    best
                })
                .collect()),
            BackendData::MonteCarlo { w, .. } => Ok(w
                .iter()
                .map(|path| path[..=step].iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
                .collect()),
        }
    }

    pub fn constant(&self, step: usize, c: f64) -> NodeFunction {
        NodeFunction::from_parts(step, vec![c; self.node_count(step)], true)
    }

    /// Adapted field built from per-node (index, W-value) data.
    pub fn from_fn(&self, step: usize, f: impl Fn(usize, f64) -> f64) -> NodeFunction {
        let values = self
            .w_values(step)
            .into_iter()
            .enumerate()
            .map(|(i, w)| f(i, w))
            .collect();
        NodeFunction::from_parts(step, values, true)
    }

    /// Terminal field W(T), flagged terminal-measurable.
    pub fn terminal_w(&self) -> NodeFunction {
        let n = self.grid.steps();
        NodeFunction::from_parts(n, self.w_values(n), false)
    }

    pub fn node_function(&self, step: usize, values: Vec<f64>, adapted: bool) -> Result<NodeFunction> {
        let expected = self.node_count(step);
        if values.len() != expected {
            return Err(Error::NodeCountMismatch {
                expected,
                found: values.len(),
            });
        }
        Ok(NodeFunction::from_parts(step, values, adapted))
    }

    fn check_step(&self, f: &NodeFunction) -> Result<()> {
        let expected = self.node_count(f.step);
        if f.values.len() != expected {
            return Err(Error::NodeCountMismatch {
                expected,
                found: f.values.len(),
            });
        }
        Ok(())
    }

    /// E[f | F_{t_k}] for one step back (f at k+1, result at k).
    pub fn one_step_expectation(&self, f: &NodeFunction) -> NodeFunction {
        debug_assert!(f.step >= 1);
        let k = f.step - 1;
        match &self.data {
            BackendData::Lattice => {
                let v: Vec<f64> = (0..=k)
                    .map(|m| 0.5 * (f.values[m + 1] + f.values[m]))
                    .collect();
                NodeFunction::from_parts(k, v, true)
            }
            BackendData::PathTree => {
                // bit k of a step k+1 index is the newest move: up child is
                // p | 1 << k, down child is p
                let up = 1usize << k;
                let v: Vec<f64> = (0..up)
                    .map(|p| 0.5 * (f.values[p | up] + f.values[p]))
                    .collect();
                NodeFunction::from_parts(k, v, true)
            }
            BackendData::MonteCarlo { .. } => self.regress(k, &f.values),
        }
    }

    /// E[f | F_{t_to}] for f at any later step.
    ///
    /// On the exact backends this iterates one-step averages, so composing
    /// expectations reproduces the direct call bit-for-bit. On Monte Carlo
    /// it is a single regression at the target step: iterating one-step
    /// regressions would project through intermediate bases and lose
    /// information that is measurable at the target.
    pub fn conditional_expectation(&self, f: &NodeFunction, to: usize) -> Result<NodeFunction> {
        self.check_step(f)?;
        if to > f.step {
            return Err(Error::StepMismatch {
                expected: f.step,
                found: to,
            });
        }
        if let BackendData::MonteCarlo { .. } = &self.data {
            if to == f.step {
                return Ok(f.clone());
            }
            return Ok(self.regress(to, &f.values));
        }
        let mut cur = f.clone();
        while cur.step > to {
            cur = self.one_step_expectation(&cur);
        }
        cur.adapted = true;
        Ok(cur)
    }

    /// Plain expectation E[f].
    pub fn expectation(&self, f: &NodeFunction) -> Result<f64> {
        match &self.data {
            BackendData::MonteCarlo { .. } => {
                Ok(f.values.iter().sum::<f64>() / f.values.len() as f64)
            }
            _ => Ok(self.conditional_expectation(f, 0)?.values[0]),
        }
    }

    /// Discrete martingale representation integrand
    /// Z_k = E[f dW | F_{t_k}] / dt for f at step k+1.
    ///
    /// On a binary branch this is (f_up - f_down) / (2 sqrt(dt)), the unique
    /// integrand reproducing f from its one-step mean.
    pub fn increment_projection(&self, f: &NodeFunction) -> NodeFunction {
        debug_assert!(f.step >= 1);
        let k = f.step - 1;
        let half = 0.5 / self.sqrt_dt;
        match &self.data {
            BackendData::Lattice => {
                let v: Vec<f64> = (0..=k)
                    .map(|m| (f.values[m + 1] - f.values[m]) * half)
                    .collect();
                NodeFunction::from_parts(k, v, true)
            }
            BackendData::PathTree => {
                let up = 1usize << k;
                let v: Vec<f64> = (0..up)
                    .map(|p| (f.values[p | up] - f.values[p]) * half)
                    .collect();
                NodeFunction::from_parts(k, v, true)
            }
            BackendData::MonteCarlo { w, .. } => {
                let dt = self.grid.dt();
                let targets: Vec<f64> = f
                    .values
                    .iter()
                    .enumerate()
                    .map(|(p, &v)| v * (w[p][k + 1] - w[p][k]) / dt)
                    .collect();
                self.regress(k, &targets)
            }
        }
    }

    /// gamma_hat * ln E[exp(f / gamma_hat) | F_{t_k}] one step back.
    ///
    /// The max is factored out of the two-point average so the value stays
    /// finite for any field magnitude.
    pub fn one_step_log_mean_exp(&self, f: &NodeFunction, gamma_hat: f64) -> NodeFunction {
        debug_assert!(f.step >= 1);
        debug_assert!(gamma_hat > 0.0);
        let k = f.step - 1;
        let pair = |a: f64, b: f64| {
            let m = a.max(b);
            m + gamma_hat * (0.5 * (((a - m) / gamma_hat).exp() + ((b - m) / gamma_hat).exp())).ln()
        };
        match &self.data {
            BackendData::Lattice => {
                let v: Vec<f64> = (0..=k)
                    .map(|m| pair(f.values[m + 1], f.values[m]))
                    .collect();
                NodeFunction::from_parts(k, v, true)
            }
            BackendData::PathTree => {
                let up = 1usize << k;
                let v: Vec<f64> = (0..up)
                    .map(|p| pair(f.values[p | up], f.values[p]))
                    .collect();
                NodeFunction::from_parts(k, v, true)
            }
            BackendData::MonteCarlo { .. } => {
                // regression already carries sampling error, so exponentiate,
                // project, and take the log of the positive part
                let m = f.values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = f.values.iter().map(|&v| ((v - m) / gamma_hat).exp()).collect();
                let fitted = self.regress(k, &exps);
                fitted.map(|v| m + gamma_hat * v.max(1e-300).ln())
            }
        }
    }

    /// Extend an adapted field at `f.step` to a later step without changing
    /// its information content. Impossible on the lattice, which forgets the
    /// path.
    pub fn extend_to_step(&self, f: &NodeFunction, to: usize) -> Result<NodeFunction> {
        self.check_step(f)?;
        if to < f.step {
            return Err(Error::StepMismatch {
                expected: f.step,
                found: to,
            });
        }
        if to == f.step {
            return Ok(f.clone());
        }
        match &self.data {
            BackendData::Lattice => Err(Error::LatticeUnsupported(
                "adapted extension to a later step".into(),
            )),
            BackendData::PathTree => {
                // the step-f.step ancestor of a step-to node keeps the low
                // bits: new moves occupy the high bits
                let mask = (1usize << f.step) - 1;
                let v: Vec<f64> = (0..1usize << to).map(|p| f.values[p & mask]).collect();
                Ok(NodeFunction::from_parts(to, v, true))
            }
            BackendData::MonteCarlo { .. } => {
                Ok(NodeFunction::from_parts(to, f.values.clone(), true))
            }
        }
    }

    /// Brownian increment W(t_{k+1}) - W(t_k) as a step k+1 field.
    ///
    /// A lattice node does not remember which branch it came from, so the
    /// increment is path data there.
    pub fn increment(&self, k: usize) -> Result<NodeFunction> {
        match &self.data {
            BackendData::Lattice => Err(Error::LatticeUnsupported(
                "the Brownian increment as a node field".into(),
            )),
            BackendData::PathTree => {
                let v: Vec<f64> = (0..1usize << (k + 1))
                    .map(|p| {
                        if (p >> k) & 1 == 1 {
                            self.sqrt_dt
                        } else {
                            -self.sqrt_dt
                        }
                    })
                    .collect();
                Ok(NodeFunction::from_parts(k + 1, v, true))
            }
            BackendData::MonteCarlo { w, .. } => {
                let v: Vec<f64> = w.iter().map(|path| path[k + 1] - path[k]).collect();
                Ok(NodeFunction::from_parts(k + 1, v, true))
            }
        }
    }

    /// Least squares projection of per-path targets onto polynomials of
    /// W(t_step). Degenerate columns (step 0, say) fall back to the mean.
    fn regress(&self, step: usize, targets: &[f64]) -> NodeFunction {
        let (w, degree) = match &self.data {
            BackendData::MonteCarlo { w, basis_degree, .. } => (w, *basis_degree),
            _ => unreachable!("regression is a monte carlo operation"),
        };
        let paths = w.len();
        debug_assert_eq!(targets.len(), paths);
        let t_scale = self.grid.point(step).sqrt().max(self.sqrt_dt);
        let xs: Vec<f64> = w.iter().map(|path| path[step] / t_scale).collect();
        let dim = degree + 1;

        // normal equations on the scaled monomial basis
        let mut ata = vec![0.0; dim * dim];
        let mut atb = vec![0.0; dim];
        let mut basis = vec![0.0; dim];
        for (p, &x) in xs.iter().enumerate() {
            let mut pw = 1.0;
            for b in basis.iter_mut() {
                *b = pw;
                pw *= x;
            }
            for i in 0..dim {
                atb[i] += basis[i] * targets[p];
                for j in 0..dim {
                    ata[i * dim + j] += basis[i] * basis[j];
                }
            }
        }
        let coef = solve_spd_with_pruning(&mut ata, &mut atb, dim);
        let fitted: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let mut acc = 0.0;
                let mut pw = 1.0;
                for &c in &coef {
                    acc += c * pw;
                    pw *= x;
                }
                acc
            })
            .collect();
        NodeFunction::from_parts(step, fitted, true)
    }
}

/// Gaussian elimination with partial pivoting; near-singular pivots zero the
/// corresponding coefficient, which drops collinear basis columns.
fn solve_spd_with_pruning(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    let scale = a
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = scale * 1e-12;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut dropped = vec![false; n];
    for col in 0..n {
        let (mut best_row, mut best_val) = (col, 0.0);
        for row in col..n {
            let v = a[perm[row] * n + col].abs();
            if v > best_val {
                best_val = v;
                best_row = row;
            }
        }
        if best_val <= tol {
            dropped[col] = true;
            continue;
        }
        perm.swap(col, best_row);
        let prow = perm[col];
        for row in (col + 1)..n {
            let r = perm[row];
            let factor = a[r * n + col] / a[prow * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= factor * a[prow * n + j];
            }
            b[r] -= factor * b[prow];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        if dropped[col] {
            continue;
        }
        let prow = perm[col];
        let mut acc = b[prow];
        for j in (col + 1)..n {
            acc -= a[prow * n + j] * x[j];
        }
        x[col] = acc / a[prow * n + col];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize) -> DriverState {
        DriverState::build(TimeGrid::uniform(1.0, n).unwrap(), BackendSpec::Lattice).unwrap()
    }

    fn tree(n: usize) -> DriverState {
        DriverState::build(TimeGrid::uniform(1.0, n).unwrap(), BackendSpec::PathTree).unwrap()
    }

    #[test]
    fn lattice_node_counts() {
        let d = lattice(2);
        assert_eq!(d.node_count(0) + d.node_count(1) + d.node_count(2), 6);
    }

    #[test]
    fn path_tree_leaves_and_cap() {
        let d = tree(3);
        assert_eq!(d.node_count(3), 8);
        let grid = TimeGrid::uniform(1.0, PATH_TREE_STEP_CAP + 1).unwrap();
        assert!(matches!(
            DriverState::build(grid, BackendSpec::PathTree),
            Err(Error::PathTreeTooLarge { .. })
        ));
    }

    #[test]
    fn lattice_w_symmetric_and_moment_exact() {
        // dyadic grid so every W value and square is exactly representable
        let d = lattice(4);
        for k in 0..=4 {
            let w = d.w_values(k);
            let flipped: Vec<f64> = w.iter().rev().map(|v| -v).collect();
            assert_eq!(w, flipped);
        }
        // one-step mean of dW is 0, of dW^2 is dt, exactly
        let wk = d.node_function(3, d.w_values(3), true).unwrap();
        let wk1 = d.node_function(4, d.w_values(4), true).unwrap();
        let e = d.one_step_expectation(&wk1);
        assert_eq!(e.values(), wk.values());
        let dt = d.grid().dt();
        let sq = d.from_fn(4, |_, w| w * w);
        let esq = d.one_step_expectation(&sq);
        for (m, &v) in esq.values().iter().enumerate() {
            let w = wk.values()[m];
            assert_eq!(v, w * w + dt);
        }
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let spec = BackendSpec::MonteCarlo {
            paths: 128,
            seed: 7,
            basis_degree: 3,
        };
        let a = DriverState::build(TimeGrid::uniform(1.0, 10).unwrap(), spec.clone()).unwrap();
        let b = DriverState::build(TimeGrid::uniform(1.0, 10).unwrap(), spec).unwrap();
        for k in 0..=10 {
            assert_eq!(a.w_values(k), b.w_values(k));
        }
    }

    #[test]
    fn monte_carlo_rejects_tiny_ensembles() {
        let spec = BackendSpec::MonteCarlo {
            paths: 1,
            seed: 1,
            basis_degree: 2,
        };
        assert!(matches!(
            DriverState::build(TimeGrid::uniform(1.0, 4).unwrap(), spec),
            Err(Error::TooFewPaths(1))
        ));
    }

    #[test]
    fn constants_pass_through_expectation() {
        for d in [lattice(6), tree(6)] {
            let c = d.constant(6, 2.5);
            let e = d.conditional_expectation(&c, 2).unwrap();
            assert!(e.values().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn terminal_w_has_zero_mean_exactly() {
        for d in [lattice(8), tree(8)] {
            let wt = d.terminal_w();
            assert_eq!(d.expectation(&wt).unwrap(), 0.0);
        }
    }

    #[test]
    fn squared_terminal_conditional_expectation_is_closed_form() {
        // E_t[W(T)^2] = W(t)^2 + (T - t), exact on the path tree; the
        // closed form is itself cross-checked by brute-force summation
        // over all continuations of one node
        let n = 6;
        let d = tree(n);
        let f = d.terminal_w().map(|w| w * w);
        for k in 0..=n {
            let e = d.conditional_expectation(&f, k).unwrap();
            let wk = d.w_values(k);
            let tk = d.grid().point(k);
            for (p, &v) in e.values().iter().enumerate() {
                assert!((v - (wk[p] * wk[p] + (1.0 - tk))).abs() < 1e-12);
            }
        }
        let k = 2;
        let node = 0b01usize;
        let sqrt_dt = d.grid().dt().sqrt();
        let w_node = d.w_values(k)[node];
        let mut acc = 0.0;
        let tails = 1usize << (n - k);
        for tail in 0..tails {
            let w_t: f64 = w_node
                + (0..(n - k))
                    .map(|b| if (tail >> b) & 1 == 1 { sqrt_dt } else { -sqrt_dt })
                    .sum::<f64>();
            acc += w_t * w_t;
        }
        let brute = acc / tails as f64;
        let direct = d.conditional_expectation(&f, k).unwrap().values()[node];
        assert!((brute - direct).abs() < 1e-13);
    }

    #[test]
    fn increment_projection_examples() {
        let d = lattice(5);
        // constants have zero integrand
        let c = d.constant(3, 4.0);
        assert!(d.increment_projection(&c).values().iter().all(|&z| z == 0.0));
        // W itself has unit integrand
        let w = d.from_fn(3, |_, w| w);
        assert!(d
            .increment_projection(&w)
            .values()
            .iter()
            .all(|&z| (z - 1.0).abs() < 1e-13));
        // W^2 at step k projects to 2 W(t_k)
        let sq = d.from_fn(3, |_, w| w * w);
        let z = d.increment_projection(&sq);
        let wk = d.w_values(2);
        for (m, &v) in z.values().iter().enumerate() {
            assert!((v - 2.0 * wk[m]).abs() < 1e-12);
        }
    }

    #[test]
    fn log_mean_exp_matches_direct_computation() {
        let d = lattice(4);
        let f = d.from_fn(3, |_, w| w);
        let lme = d.one_step_log_mean_exp(&f, 1.0);
        let direct = d.one_step_expectation(&f.map(|v| v.exp())).map(|v| v.ln());
        assert!(lme.max_abs_diff(&direct) < 1e-13);
        // stays finite where naive exponentiation overflows
        let big = d.from_fn(3, |_, w| 500.0 + w);
        let safe = d.one_step_log_mean_exp(&big, 1.0);
        assert!(safe.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn extension_is_rejected_on_lattice_and_exact_on_tree() {
        let d = lattice(4);
        let f = d.constant(1, 1.0);
        assert!(d.extend_to_step(&f, 3).is_err());
        let d = tree(4);
        let f = d.from_fn(1, |_, w| 3.0 * w);
        let g = d.extend_to_step(&f, 3).unwrap();
        for p in 0..d.node_count(3) {
            assert_eq!(g.values()[p], f.values()[p & 1]);
        }
    }

    #[test]
    fn regression_reproduces_polynomials_in_span() {
        let d = DriverState::build(
            TimeGrid::uniform(1.0, 8).unwrap(),
            BackendSpec::MonteCarlo {
                paths: 4096,
                seed: 11,
                basis_degree: 4,
            },
        )
        .unwrap();
        // an adapted cubic of W(t_4), replicated at step 6, comes back unchanged
        let w4 = d.w_values(4);
        let target: Vec<f64> = w4.iter().map(|&x| 1.0 + x - 0.5 * x * x * x).collect();
        let f = d.node_function(6, target.clone(), true).unwrap();
        let e = d.conditional_expectation(&f, 4).unwrap();
        let worst = e
            .values()
            .iter()
            .zip(&target)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst < 1e-8, "regression error {worst}");
    }
}
