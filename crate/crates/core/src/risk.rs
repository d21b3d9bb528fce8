//! Dynamic risk measures for position processes.
//!
//! A position process psi carries terminal-time information at every date,
//! so valuing it through a family of ordinary backward equations is time
//! inconsistent. The time-consistent valuation solves the Volterra equation
//! with free term -psi:
//!
//! ```text
//! rho(t; psi) = Y(t),   Y(t) = -psi(t) + int_t^T g(t,s,Y(s),Z(t,s)) ds
//!                              - int_t^T Z(t,s) dW(s)
//! ```
//!
//! with g(t,s,y,z) = r(s) y + g0(t,s,z), r a nonnegative deterministic
//! discount rate. Convexity of g0 in z makes rho convex; positive
//! homogeneity plus subadditivity make it coherent. The axiom checker
//! evaluates each defining identity over a seeded family of positions and
//! reports the worst violation; which axioms are asserted is decided by the
//! declared flags of g0, never inferred numerically.

use crate::bsde::{solve_bsde, BsdeSolution, SolveOptions};
use crate::bsvie::{solve_type1_general, Type1Solution};
use crate::driver::{DriverState, NodeFunction};
use crate::error::{Error, Result};
use crate::generator::{self, Generator};
use crate::rng::Stream;

/// Default per-axiom tolerance on the exact backends.
pub const AXIOM_TOL_EXACT: f64 = 1e-7;
/// Default per-axiom tolerance on the Monte Carlo backend.
pub const AXIOM_TOL_MC: f64 = 1e-4;

/// Deterministic nonnegative discount rate.
#[derive(Clone, Debug)]
pub enum Rate {
    Zero,
    Constant(f64),
}

impl Rate {
    fn value(&self) -> f64 {
        match self {
            Rate::Zero => 0.0,
            Rate::Constant(r) => *r,
        }
    }

    /// exp(int_t^T r ds) for the translation factor.
    fn discount_factor(&self, t: f64, horizon: f64) -> f64 {
        (self.value() * (horizon - t)).exp()
    }
}

/// A risk measure specification: discount rate plus z-generator.
#[derive(Clone, Debug)]
pub struct RiskMeasureSpec {
    pub rate: Rate,
    pub g0_name: String,
    pub convex: bool,
    pub coherent: bool,
    assembled: Generator,
}

impl RiskMeasureSpec {
    pub fn new(rate: Rate, g0: &Generator) -> Result<Self> {
        if rate.value() < 0.0 {
            return Err(Error::Invalid(format!(
                "discount rate must be nonnegative, got {}",
                rate.value()
            )));
        }
        if g0.uses_y || g0.uses_zprime {
            return Err(Error::Invalid(
                "the risk generator g0 must depend on (t, s, z) only".into(),
            ));
        }
        let assembled = match rate.value() {
            r if r > 0.0 => generator::discounted(r, g0)?,
            _ => g0.clone(),
        };
        Ok(RiskMeasureSpec {
            rate,
            g0_name: g0.name().to_string(),
            convex: g0.convex_in_z,
            coherent: g0.coherent_in_z,
            assembled,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.assembled
    }
}

/// rho(t_i; psi) per grid time, with the underlying solve attached.
#[derive(Clone, Debug)]
pub struct RiskValues {
    pub rho: Vec<NodeFunction>,
    pub solution: Type1Solution,
}

/// Equilibrium valuation of a position field.
pub fn rho(
    driver: &DriverState,
    spec: &RiskMeasureSpec,
    psi: &[NodeFunction],
    opts: &SolveOptions,
) -> Result<RiskValues> {
    let negated: Vec<NodeFunction> = psi.iter().map(|f| f.scale(-1.0)).collect();
    let solution = solve_type1_general(driver, spec.generator(), &negated, opts)?;
    Ok(RiskValues {
        rho: solution.y.clone(),
        solution,
    })
}

/// Classical valuation of a terminal payoff through the ordinary backward
/// equation with free term -xi. Cross-validates the Volterra route: for a
/// t-constant position and a y-free t-independent generator the two agree
/// at every grid time.
pub fn classical_bsde_rho(
    driver: &DriverState,
    g: &Generator,
    xi: &NodeFunction,
    opts: &SolveOptions,
) -> Result<BsdeSolution> {
    if g.uses_y {
        return Err(Error::Invalid(
            "the classical construction takes a generator of (s, z) only".into(),
        ));
    }
    if !g.convex_in_z {
        return Err(Error::Invalid(
            "the classical construction requires g convex in z".into(),
        ));
    }
    solve_bsde(driver, g, &xi.scale(-1.0), opts)
}

// ---------------------------------------------------------------------------
// axiom checks
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axiom {
    PastIndependence,
    Monotonicity,
    TranslationInvariance,
    Convexity,
    PositiveHomogeneity,
    Subadditivity,
}

impl Axiom {
    pub fn name(self) -> &'static str {
        match self {
            Axiom::PastIndependence => "past_independence",
            Axiom::Monotonicity => "monotonicity",
            Axiom::TranslationInvariance => "translation_invariance",
            Axiom::Convexity => "convexity",
            Axiom::PositiveHomogeneity => "positive_homogeneity",
            Axiom::Subadditivity => "subadditivity",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AxiomVerdict {
    pub axiom: Axiom,
    /// whether the spec's flags claim this axiom (informational otherwise).
    pub asserted: bool,
    pub worst_violation: f64,
    pub instances: usize,
    pub witness: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RiskReport {
    pub seed: u64,
    pub tolerance: f64,
    pub verdicts: Vec<AxiomVerdict>,
}

impl RiskReport {
    pub fn verdict(&self, axiom: Axiom) -> &AxiomVerdict {
        self.verdicts
            .iter()
            .find(|v| v.axiom == axiom)
            .expect("all axioms are reported")
    }

    /// True when every asserted axiom holds within tolerance.
    pub fn ok(&self) -> bool {
        self.verdicts
            .iter()
            .all(|v| !v.asserted || v.worst_violation <= self.tolerance)
    }
}

#[derive(Clone, Debug)]
pub struct AxiomCheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub shift: f64,
    pub homogeneity_scales: Vec<f64>,
}

impl AxiomCheckConfig {
    pub fn new(instances: usize, seed: u64, tolerance: f64) -> Self {
        AxiomCheckConfig {
            instances,
            seed,
            tolerance,
            shift: 1.0,
            homogeneity_scales: vec![0.5, 2.0, 3.0],
        }
    }
}

/// Seeded bounded position instances for the axiom suites:
/// a t W(T) + b cos(W(T)) + c with coefficients in [-1, 1].
pub fn seeded_instances(
    driver: &DriverState,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<NodeFunction>>> {
    let n = driver.grid().steps();
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let mut stream = Stream::new(seed, idx as u64);
        let a = stream.uniform_in(-1.0, 1.0);
        let b = stream.uniform_in(-1.0, 1.0);
        let c = stream.uniform_in(-1.0, 1.0);
        let w = driver.terminal_w();
        let field: Vec<NodeFunction> = (0..=n)
            .map(|i| {
                let t = driver.grid().point(i);
                w.map(|wt| a * t * wt + b * wt.cos() + c)
            })
            .collect();
        out.push(field);
    }
    Ok(out)
}

fn rho_values(
    driver: &DriverState,
    spec: &RiskMeasureSpec,
    psi: &[NodeFunction],
    opts: &SolveOptions,
) -> Result<Vec<NodeFunction>> {
    Ok(rho(driver, spec, psi, opts)?.rho)
}

/// Evaluate every defining identity over the instance set.
pub fn check_axioms(
    driver: &DriverState,
    spec: &RiskMeasureSpec,
    instances: &[Vec<NodeFunction>],
    config: &AxiomCheckConfig,
    opts: &SolveOptions,
) -> Result<RiskReport> {
    if instances.is_empty() {
        return Err(Error::Invalid("axiom checks need at least one instance".into()));
    }
    let grid = driver.grid();
    let n = grid.steps();
    let horizon = grid.horizon();
    let mut stream = Stream::new(config.seed, 0xa10a);

    let base: Result<Vec<Vec<NodeFunction>>> = instances
        .iter()
        .map(|psi| rho_values(driver, spec, psi, opts))
        .collect();
    let base = base?;

    let mut worst_past = (0.0f64, None);
    let mut worst_mono = (0.0f64, None);
    let mut worst_trans = (0.0f64, None);
    let mut worst_convex = (0.0f64, None);
    let mut worst_homog = (0.0f64, None);
    let mut worst_subadd = (0.0f64, None);

    for (idx, psi) in instances.iter().enumerate() {
        let rho0 = &base[idx];

        // (i) perturb the position strictly before a cut date; values from
        // the cut on must not move
        let cut = 1 + stream.index(n.max(1));
        let mut perturbed = psi.to_vec();
        for (i, field) in perturbed.iter_mut().enumerate().take(cut) {
            let bump = stream.uniform_in(-1.0, 1.0);
            let slope = stream.uniform_in(-1.0, 1.0);
            *field = field.zip_with(&driver.terminal_w(), |v, w| v + bump + slope * w);
            let _ = i;
        }
        let rho_pert = rho_values(driver, spec, &perturbed, opts)?;
        for i in cut..=n {
            let d = rho0[i].max_abs_diff(&rho_pert[i]);
            if d > worst_past.0 {
                worst_past = (d, Some(format!("instance {idx}, cut {cut}, time {i}")));
            }
        }

        // (ii) dominate the position from the cut on; rho must not increase
        // from the cut on
        let mut dominated = psi.to_vec();
        let lift = stream.uniform_in(0.1, 1.0);
        let kink = stream.uniform_in(0.0, 1.0);
        for field in dominated.iter_mut().skip(cut) {
            *field = field.zip_with(&driver.terminal_w(), |v, w| v + lift + kink * w.abs());
        }
        let rho_dom = rho_values(driver, spec, &dominated, opts)?;
        for i in cut..=n {
            let v = rho_dom[i]
                .values()
                .iter()
                .zip(rho0[i].values())
                .fold(f64::NEG_INFINITY, |m, (&a, &b)| m.max(a - b));
            if v > worst_mono.0 {
                worst_mono = (v, Some(format!("instance {idx}, cut {cut}, time {i}")));
            }
        }

        // (iii) rho(t; psi + c) + c exp(int_t^T r) - rho(t; psi) = 0
        let c = config.shift;
        let shifted: Vec<NodeFunction> = psi.iter().map(|f| f.shift(c)).collect();
        let rho_shift = rho_values(driver, spec, &shifted, opts)?;
        for i in 0..=n {
            let factor = spec.rate.discount_factor(grid.point(i), horizon);
            let d = rho_shift[i]
                .values()
                .iter()
                .zip(rho0[i].values())
                .fold(0.0f64, |m, (&a, &b)| m.max((a + c * factor - b).abs()));
            if d > worst_trans.0 {
                worst_trans = (d, Some(format!("instance {idx}, time {i}, shift {c}")));
            }
        }

        // (iv) convex mix with the next instance
        let other = &instances[(idx + 1) % instances.len()];
        let rho_other = &base[(idx + 1) % instances.len()];
        let lambda = stream.uniform_in(0.0, 1.0);
        let mixed: Vec<NodeFunction> = psi
            .iter()
            .zip(other)
            .map(|(a, b)| a.zip_with(b, |x, y| lambda * x + (1.0 - lambda) * y))
            .collect();
        let rho_mixed = rho_values(driver, spec, &mixed, opts)?;
        for i in 0..=n {
            let v = rho_mixed[i]
                .values()
                .iter()
                .zip(rho0[i].values().iter().zip(rho_other[i].values()))
                .fold(f64::NEG_INFINITY, |m, (&mix, (&a, &b))| {
                    m.max(mix - lambda * a - (1.0 - lambda) * b)
                });
            if v > worst_convex.0 {
                worst_convex = (
                    v,
                    Some(format!("instance {idx}, time {i}, lambda {lambda:.4}")),
                );
            }
        }

        // (v) positive homogeneity at the configured scales
        for &lam in &config.homogeneity_scales {
            let scaled: Vec<NodeFunction> = psi.iter().map(|f| f.scale(lam)).collect();
            let rho_scaled = rho_values(driver, spec, &scaled, opts)?;
            for i in 0..=n {
                let d = rho_scaled[i]
                    .values()
                    .iter()
                    .zip(rho0[i].values())
                    .fold(0.0f64, |m, (&a, &b)| m.max((a - lam * b).abs()));
                if d > worst_homog.0 {
                    worst_homog = (d, Some(format!("instance {idx}, time {i}, lambda {lam}")));
                }
            }
        }

        // (vi) pairwise subadditivity with the next instance
        let summed: Vec<NodeFunction> = psi
            .iter()
            .zip(other)
            .map(|(a, b)| a.zip_with(b, |x, y| x + y))
            .collect();
        let rho_sum = rho_values(driver, spec, &summed, opts)?;
        for i in 0..=n {
            let v = rho_sum[i]
                .values()
                .iter()
                .zip(rho0[i].values().iter().zip(rho_other[i].values()))
                .fold(f64::NEG_INFINITY, |m, (&s, (&a, &b))| m.max(s - a - b));
            if v > worst_subadd.0 {
                worst_subadd = (v, Some(format!("instance {idx}, time {i}")));
            }
        }
    }

    let verdicts = vec![
        AxiomVerdict {
            axiom: Axiom::PastIndependence,
            asserted: true,
            worst_violation: worst_past.0,
            instances: instances.len(),
            witness: worst_past.1,
        },
        AxiomVerdict {
            axiom: Axiom::Monotonicity,
            asserted: true,
            worst_violation: worst_mono.0.max(0.0),
            instances: instances.len(),
            witness: worst_mono.1,
        },
        AxiomVerdict {
            axiom: Axiom::TranslationInvariance,
            asserted: true,
            worst_violation: worst_trans.0,
            instances: instances.len(),
            witness: worst_trans.1,
        },
        AxiomVerdict {
            axiom: Axiom::Convexity,
            asserted: spec.convex,
            worst_violation: worst_convex.0.max(0.0),
            instances: instances.len(),
            witness: worst_convex.1,
        },
        AxiomVerdict {
            axiom: Axiom::PositiveHomogeneity,
            asserted: spec.coherent,
            worst_violation: worst_homog.0,
            instances: instances.len(),
            witness: worst_homog.1,
        },
        AxiomVerdict {
            axiom: Axiom::Subadditivity,
            asserted: spec.coherent,
            worst_violation: worst_subadd.0.max(0.0),
            instances: instances.len(),
            witness: worst_subadd.1,
        },
    ];

    Ok(RiskReport {
        seed: config.seed,
        tolerance: config.tolerance,
        verdicts,
    })
}
