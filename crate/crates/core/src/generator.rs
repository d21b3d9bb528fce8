//! Generators g(t, s, y, z, z') with declared growth certificates.
//!
//! A certificate states the constants the solvers and bound checks rely on:
//!
//! * |g(t,s,y,z,z')| <= L (1 + |y|) + (gamma / 2) z^2, with no growth in z',
//! * |g(..y1,z1,z1') - g(..y2,z2,z2')| <= L (|y1-y2| + (1+|z1|+|z2|)|z1-z2| + |z1'-z2'|),
//! * optionally |g(t,..) - g(t',..)| <= rho(|t-t'|) (1 + |y| + z^2).
//!
//! Certificates are declared by the constructor and spot-checked by seeded
//! sampling, not proved. `z_structure` additionally declares when the
//! z-dependence is exactly `coeff * z^2`; the solvers integrate such terms
//! through an exponential transform, which is what makes the closed-form
//! oracles reproducible to machine precision.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Stream;

type EvalFn = dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync;
type RealFn = dyn Fn(f64) -> f64 + Send + Sync;

/// How the z-argument enters the generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZStructure {
    /// g(t,s,y,z,z') = coeff * z^2 + g(t,s,y,0,z'), exactly.
    PureQuadratic { coeff: f64 },
    /// anything else; the solvers evaluate g at the projected integrand
    General,
}

/// Declared growth data (constants of the quadratic regime).
#[derive(Clone)]
pub struct GrowthCertificate {
    /// Lipschitz and linear-growth constant L.
    pub lipschitz: f64,
    /// Lipschitz constant in y alone (<= lipschitz); gates implicit steps.
    pub lipschitz_y: f64,
    /// quadratic coefficient gamma in (gamma/2) z^2.
    pub gamma: f64,
    /// linear rate beta in the exponential a priori bound.
    pub beta: f64,
    /// integrable bound h(.) on [0, T].
    pub h: Arc<RealFn>,
    /// modulus of continuity in t, when declared.
    pub modulus: Option<Arc<RealFn>>,
}

impl std::fmt::Debug for GrowthCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrowthCertificate")
            .field("lipschitz", &self.lipschitz)
            .field("lipschitz_y", &self.lipschitz_y)
            .field("gamma", &self.gamma)
            .field("beta", &self.beta)
            .field("modulus", &self.modulus.is_some())
            .finish()
    }
}

impl GrowthCertificate {
    pub fn new(lipschitz: f64, lipschitz_y: f64, gamma: f64, beta: f64, h0: f64) -> Self {
        GrowthCertificate {
            lipschitz,
            lipschitz_y,
            gamma,
            beta,
            h: Arc::new(move |_| h0),
            modulus: None,
        }
    }

    pub fn with_modulus(mut self, rho: Arc<RealFn>) -> Self {
        self.modulus = Some(rho);
        self
    }
}

/// A generator with its certificate and classification flags.
#[derive(Clone)]
pub struct Generator {
    name: String,
    eval: Arc<EvalFn>,
    pub uses_y: bool,
    pub uses_z: bool,
    pub uses_zprime: bool,
    pub uses_outer_time: bool,
    /// y -> g nondecreasing (comparison hypothesis).
    pub monotone_in_y: bool,
    /// z -> g convex (declared, drives risk classification).
    pub convex_in_z: bool,
    /// z -> g positively homogeneous and subadditive (declared).
    pub coherent_in_z: bool,
    pub z_structure: ZStructure,
    pub certificate: GrowthCertificate,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("name", &self.name)
            .field("uses_y", &self.uses_y)
            .field("uses_z", &self.uses_z)
            .field("uses_zprime", &self.uses_zprime)
            .field("z_structure", &self.z_structure)
            .finish()
    }
}

impl Generator {
    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, t: f64, s: f64, y: f64, z: f64, zp: f64) -> f64 {
        (self.eval)(t, s, y, z, zp)
    }

    /// Evaluation with the z-slot zeroed; for pure-quadratic structure this
    /// is exactly the non-quadratic remainder.
    #[inline]
    pub fn eval_rest(&self, t: f64, s: f64, y: f64, zp: f64) -> f64 {
        (self.eval)(t, s, y, 0.0, zp)
    }

    /// Pointwise sum. Certificates add; monotonicity survives only when both
    /// parts have it; the quadratic structure survives when the z-dependence
    /// stays exactly quadratic.
    pub fn sum(a: &Generator, b: &Generator) -> Generator {
        let ae = a.eval.clone();
        let be = b.eval.clone();
        let ah = a.certificate.h.clone();
        let bh = b.certificate.h.clone();
        let z_structure = match (a.z_structure, b.z_structure, a.uses_z, b.uses_z) {
            (ZStructure::PureQuadratic { coeff: ca }, ZStructure::PureQuadratic { coeff: cb }, _, _) => {
                ZStructure::PureQuadratic { coeff: ca + cb }
            }
            (ZStructure::PureQuadratic { coeff }, _, _, false) => ZStructure::PureQuadratic { coeff },
            (_, ZStructure::PureQuadratic { coeff }, false, _) => ZStructure::PureQuadratic { coeff },
            _ => ZStructure::General,
        };
        Generator {
            name: format!("{} + {}", a.name, b.name),
            eval: Arc::new(move |t, s, y, z, zp| ae(t, s, y, z, zp) + be(t, s, y, z, zp)),
            uses_y: a.uses_y || b.uses_y,
            uses_z: a.uses_z || b.uses_z,
            uses_zprime: a.uses_zprime || b.uses_zprime,
            uses_outer_time: a.uses_outer_time || b.uses_outer_time,
            monotone_in_y: a.monotone_in_y && b.monotone_in_y,
            convex_in_z: a.convex_in_z && b.convex_in_z,
            coherent_in_z: a.coherent_in_z && b.coherent_in_z && !a.uses_y && !b.uses_y,
            z_structure,
            certificate: GrowthCertificate {
                lipschitz: a.certificate.lipschitz + b.certificate.lipschitz,
                lipschitz_y: a.certificate.lipschitz_y + b.certificate.lipschitz_y,
                gamma: a.certificate.gamma + b.certificate.gamma,
                beta: a.certificate.beta + b.certificate.beta,
                h: Arc::new(move |s| ah(s) + bh(s)),
                modulus: match (&a.certificate.modulus, &b.certificate.modulus) {
                    (Some(ra), Some(rb)) => {
                        let (ra, rb) = (ra.clone(), rb.clone());
                        Some(Arc::new(move |u| ra(u) + rb(u)))
                    }
                    _ => None,
                },
            },
        }
    }
}

// ---------------------------------------------------------------------------
// catalog
// ---------------------------------------------------------------------------

fn identity_modulus() -> Arc<RealFn> {
    Arc::new(|u| u)
}

/// g = 0.
pub fn zero() -> Generator {
    Generator {
        name: "zero".into(),
        eval: Arc::new(|_, _, _, _, _| 0.0),
        uses_y: false,
        uses_z: false,
        uses_zprime: false,
        uses_outer_time: false,
        monotone_in_y: true,
        convex_in_z: true,
        coherent_in_z: true,
        z_structure: ZStructure::General,
        certificate: GrowthCertificate::new(0.0, 0.0, 0.0, 0.0, 0.0)
            .with_modulus(identity_modulus()),
    }
}

/// g = a * y.
pub fn linear_y(a: f64) -> Generator {
    Generator {
        name: format!("linear_y({a})"),
        eval: Arc::new(move |_, _, y, _, _| a * y),
        uses_y: a != 0.0,
        uses_z: false,
        uses_zprime: false,
        uses_outer_time: false,
        monotone_in_y: a >= 0.0,
        convex_in_z: true,
        coherent_in_z: false,
        z_structure: ZStructure::General,
        certificate: GrowthCertificate::new(a.abs(), a.abs(), 0.0, a.abs(), 0.0)
            .with_modulus(identity_modulus()),
    }
}

/// g = z^2 / 2.
pub fn quadratic_half() -> Generator {
    Generator {
        name: "quadratic_half".into(),
        eval: Arc::new(|_, _, _, z, _| 0.5 * z * z),
        uses_y: false,
        uses_z: true,
        uses_zprime: false,
        uses_outer_time: false,
        monotone_in_y: true,
        convex_in_z: true,
        coherent_in_z: false,
        z_structure: ZStructure::PureQuadratic { coeff: 0.5 },
        certificate: GrowthCertificate::new(0.5, 0.0, 1.0, 0.0, 0.0)
            .with_modulus(identity_modulus()),
    }
}

/// g = z^2 / (2 gamma); the generator of the entropic utility with risk
/// tolerance gamma.
pub fn entropic(gamma: f64) -> Result<Generator> {
    if gamma <= 0.0 {
        return Err(Error::Generator(format!(
            "entropic requires gamma > 0, got {gamma}"
        )));
    }
    let c = 1.0 / (2.0 * gamma);
    Ok(Generator {
        name: format!("entropic({gamma})"),
        eval: Arc::new(move |_, _, _, z, _| c * z * z),
        uses_y: false,
        uses_z: true,
        uses_zprime: false,
        uses_outer_time: false,
        monotone_in_y: true,
        convex_in_z: true,
        coherent_in_z: false,
        z_structure: ZStructure::PureQuadratic { coeff: c },
        certificate: GrowthCertificate::new(c, 0.0, 2.0 * c, 0.0, 0.0)
            .with_modulus(identity_modulus()),
    })
}

/// g0 = gbar * |z|; positively homogeneous and subadditive in z.
pub fn coherent_abs(gbar: f64) -> Result<Generator> {
    nonneg_weight(gbar)?;
    Ok(Generator {
        name: format!("coherent_abs({gbar})"),
        eval: Arc::new(move |_, _, _, z, _| gbar * z.abs()),
        uses_y: false,
        uses_z: gbar != 0.0,
        uses_zprime: false,
        uses_outer_time: false,
        monotone_in_y: true,
        convex_in_z: true,
        coherent_in_z: true,
        z_structure: ZStructure::General,
        certificate: GrowthCertificate::new(gbar.max(0.5 * gbar), 0.0, gbar, 0.0, 0.5 * gbar)
            .with_modulus(identity_modulus()),
    })
}

/// g0 = gbar * sqrt(1 + z^2); convex in z.
pub fn convex_sqrt(gbar: f64) -> Result<Generator> {
    nonneg_weight(gbar)?;
    Ok(Generator {
        name: format!("convex_sqrt({gbar})"),
        eval: Arc::new(move |_, _, _, z, _| gbar * (1.0 + z * z).sqrt()),
        uses_y: false,
        uses_z: gbar != 0.0,
        uses_zprime: false,
        uses_outer_time: false,
        monotone_in_y: true,
        convex_in_z: true,
        coherent_in_z: false,
        z_structure: ZStructure::General,
        certificate: GrowthCertificate::new(1.5 * gbar, 0.0, gbar, 0.0, gbar)
            .with_modulus(identity_modulus()),
    })
}

/// g0 = gbar * z^2; the entropy-type weight.
pub fn entropic_weighted(gbar: f64) -> Result<Generator> {
    nonneg_weight(gbar)?;
    Ok(Generator {
        name: format!("entropic_weighted({gbar})"),
        eval: Arc::new(move |_, _, _, z, _| gbar * z * z),
        uses_y: false,
        uses_z: gbar != 0.0,
        uses_zprime: false,
        uses_outer_time: false,
        monotone_in_y: true,
        convex_in_z: true,
        coherent_in_z: false,
        z_structure: if gbar > 0.0 {
            ZStructure::PureQuadratic { coeff: gbar }
        } else {
            ZStructure::General
        },
        certificate: GrowthCertificate::new(gbar, 0.0, 2.0 * gbar, 0.0, 0.0)
            .with_modulus(identity_modulus()),
    })
}

/// g = r(s) y + g0(t,s,z) with a nonnegative deterministic rate.
pub fn discounted(rate: f64, g0: &Generator) -> Result<Generator> {
    if rate < 0.0 {
        return Err(Error::Generator(format!(
            "discount rate must be nonnegative, got {rate}"
        )));
    }
    if g0.uses_y || g0.uses_zprime {
        return Err(Error::Generator(
            "discounted expects a z-only generator for g0".into(),
        ));
    }
    Ok(Generator::sum(&linear_y(rate), g0))
}

/// Fully custom generator. The declared certificate is trusted except for
/// the z' growth, which is sampled at construction: a generator whose
/// z'-dependence grows without bound is rejected.
#[allow(clippy::too_many_arguments)]
pub fn custom(
    name: &str,
    eval: Arc<EvalFn>,
    uses_y: bool,
    uses_z: bool,
    uses_zprime: bool,
    uses_outer_time: bool,
    monotone_in_y: bool,
    z_structure: ZStructure,
    certificate: GrowthCertificate,
) -> Result<Generator> {
    let g = Generator {
        name: name.into(),
        eval,
        uses_y,
        uses_z,
        uses_zprime,
        uses_outer_time,
        monotone_in_y,
        convex_in_z: false,
        coherent_in_z: false,
        z_structure,
        certificate,
    };
    if uses_zprime {
        check_zprime_bounded(&g)?;
    }
    Ok(g)
}

fn nonneg_weight(gbar: f64) -> Result<()> {
    if gbar < 0.0 {
        Err(Error::Generator(format!(
            "weight must be nonnegative, got {gbar}"
        )))
    } else {
        Ok(())
    }
}

/// The growth bound carries no z' term, so g must stay within it for any z'.
fn check_zprime_bounded(g: &Generator) -> Result<()> {
    let l = g.certificate.lipschitz;
    let gamma = g.certificate.gamma;
    let mut stream = Stream::new(0x5eed_2b0c, 0);
    for _ in 0..64 {
        let t = stream.uniform();
        let s = t + (1.0 - t) * stream.uniform();
        let y = stream.uniform_in(-3.0, 3.0);
        let z = stream.uniform_in(-3.0, 3.0);
        for zp in [-1.0e4, -1.0e2, 0.0, 1.0e2, 1.0e4] {
            let v = g.eval(t, s, y, z, zp).abs();
            let h = (g.certificate.h)(s);
            let bound = h + l * (1.0 + y.abs()) + 0.5 * gamma * z * z;
            if v > bound + 1e-9 {
                return Err(Error::Generator(format!(
                    "z' dependence escapes the declared growth bound at \
                     (t={t:.3}, s={s:.3}, y={y:.3}, z={z:.3}, z'={zp:.1}): |g| = {v:.3e} > {bound:.3e}"
                )));
            }
        }
    }
    Ok(())
}

/// Catalog lookup by name, the CLI-facing constructor.
pub fn from_name(name: &str, params: &std::collections::BTreeMap<String, f64>) -> Result<Generator> {
    let get = |key: &str| -> Result<f64> {
        params
            .get(key)
            .copied()
            .ok_or_else(|| Error::Generator(format!("{name} needs parameter '{key}'")))
    };
    match name {
        "zero" => Ok(zero()),
        "linear_y" => Ok(linear_y(get("a")?)),
        "quadratic_half" => Ok(quadratic_half()),
        "entropic" => entropic(get("gamma")?),
        "coherent_abs" => coherent_abs(get("gbar")?),
        "convex_sqrt" => convex_sqrt(get("gbar")?),
        "entropic_weighted" => entropic_weighted(get("gbar")?),
        other => Err(Error::Generator(format!("unknown catalog name '{other}'"))),
    }
}

// ---------------------------------------------------------------------------
// certificate validation
// ---------------------------------------------------------------------------

/// Ranges and sample counts for certificate spot checks.
#[derive(Clone, Debug)]
pub struct SampleSpec {
    pub horizon: f64,
    pub y_range: f64,
    pub z_range: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            horizon: 1.0,
            y_range: 5.0,
            z_range: 5.0,
            samples: 10_000,
            seed: 0xcafe,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Violation {
    pub kind: &'static str,
    pub point: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Spot-check the declared growth, Lipschitz and monotonicity bounds on
/// seeded samples. Violations are report entries, not errors.
pub fn validate_certificate(g: &Generator, spec: &SampleSpec) -> ValidationReport {
    let mut report = ValidationReport {
        samples: spec.samples,
        ..Default::default()
    };
    let mut stream = Stream::new(spec.seed, 0);
    let cert = &g.certificate;
    let tol = 1e-9;
    for _ in 0..spec.samples {
        let t = stream.uniform_in(0.0, spec.horizon);
        let s = t + (spec.horizon - t) * stream.uniform();
        let y = stream.uniform_in(-spec.y_range, spec.y_range);
        let z = stream.uniform_in(-spec.z_range, spec.z_range);
        let zp = stream.uniform_in(-spec.z_range, spec.z_range);

        let v = g.eval(t, s, y, z, zp);
        let growth = (cert.h)(s) + cert.lipschitz * (1.0 + y.abs()) + 0.5 * cert.gamma * z * z;
        if v.abs() > growth + tol {
            report.violations.push(Violation {
                kind: "growth",
                point: format!("(t={t:.4}, s={s:.4}, y={y:.4}, z={z:.4}, z'={zp:.4})"),
                lhs: v.abs(),
                rhs: growth,
            });
        }

        let y2 = stream.uniform_in(-spec.y_range, spec.y_range);
        let z2 = stream.uniform_in(-spec.z_range, spec.z_range);
        let zp2 = stream.uniform_in(-spec.z_range, spec.z_range);
        let dv = (g.eval(t, s, y, z, zp) - g.eval(t, s, y2, z2, zp2)).abs();
        let lip = cert.lipschitz
            * ((y - y2).abs()
                + (1.0 + z.abs() + z2.abs()) * (z - z2).abs()
                + (zp - zp2).abs());
        if dv > lip + tol {
            report.violations.push(Violation {
                kind: "lipschitz",
                point: format!(
                    "(t={t:.4}, s={s:.4}, y={y:.4}->{y2:.4}, z={z:.4}->{z2:.4}, z'={zp:.4}->{zp2:.4})"
                ),
                lhs: dv,
                rhs: lip,
            });
        }

        if g.monotone_in_y {
            let dy = 1e-4 * spec.y_range;
            let diff = g.eval(t, s, y + dy, z, zp) - g.eval(t, s, y, z, zp);
            if diff < -tol {
                report.violations.push(Violation {
                    kind: "monotonicity",
                    point: format!("(t={t:.4}, s={s:.4}, y={y:.4}, z={z:.4})"),
                    lhs: diff,
                    rhs: 0.0,
                });
            }
        }
    }
    report
}

/// Worst ratio |g(t,..) - g(t',..)| / (rho(|t-t'|) (1 + |y| + z^2)) over the
/// sample; at most 1 means the declared modulus is consistent there.
pub fn continuity_modulus_probe(
    g: &Generator,
    t_pairs: &[(f64, f64)],
    spec: &SampleSpec,
) -> Result<f64> {
    let rho = g
        .certificate
        .modulus
        .clone()
        .ok_or_else(|| Error::Generator(format!("{} declares no modulus", g.name)))?;
    let mut stream = Stream::new(spec.seed, 1);
    let mut worst: f64 = 0.0;
    for &(t1, t2) in t_pairs {
        if t1 == t2 {
            continue;
        }
        for _ in 0..spec.samples.max(1) {
            let s = stream.uniform_in(t1.max(t2), spec.horizon.max(t1.max(t2)));
            let y = stream.uniform_in(-spec.y_range, spec.y_range);
            let z = stream.uniform_in(-spec.z_range, spec.z_range);
            let num = (g.eval(t1, s, y, z, 0.0) - g.eval(t2, s, y, z, 0.0)).abs();
            let den = rho((t1 - t2).abs()) * (1.0 + y.abs() + z * z);
            if den > 0.0 {
                worst = worst.max(num / den);
            } else if num > 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(worst)
}
