//! Energy functional, expansion constants, interaction coefficients and the
//! reduced energy F(r, λ) with its critical point.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, BubbleConfig};
use crate::config::{Potential, SystemConfig};
use crate::error::{Error, Result};
use crate::fit::{linear_fit, power_law_fit, LinearFit};
use crate::ground_state::{DecayCase, GroundState};
use crate::quadrature::angular_moment;
use crate::sector::{SectorResolution, SectorRule};

/// Value with a two-level refinement error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub error: f64,
}

/// Quadrature samples of a pair (u, v) with gradients; weights carry the
/// cell volumes. Points and gradients are row-major with `dim` entries each.
#[derive(Debug, Clone, Default)]
pub struct QuadratureSamples {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub grad_u: Option<Vec<f64>>,
    pub grad_v: Option<Vec<f64>>,
}

/// Reduced jet (value, (∂₁, ∂₂, ∂_s)) of a symmetric field.
pub type Jet = (f64, [f64; 3]);

impl QuadratureSamples {
    /// Samples a symmetric pair on a sector rule, embedding reduced points
    /// and gradients as (y₁, y₂, s, 0, …).
    pub fn from_sector(rule: &SectorRule, field: impl Fn(&[f64; 3]) -> (Jet, Jet)) -> Self {
        let dim = rule.n;
        let mut s = QuadratureSamples {
            dim,
            grad_u: Some(Vec::new()),
            grad_v: Some(Vec::new()),
            ..Default::default()
        };
        let embed = |x: &[f64; 3], out: &mut Vec<f64>| {
            out.extend_from_slice(x);
            out.extend(std::iter::repeat(0.0).take(dim - 3));
        };
        rule.for_each(|z, w| {
            let ((u, gu), (v, gv)) = field(z);
            embed(z, &mut s.points);
            s.weights.push(w);
            s.u.push(u);
            s.v.push(v);
            embed(&gu, s.grad_u.as_mut().unwrap());
            embed(&gv, s.grad_v.as_mut().unwrap());
        });
        s
    }
}

fn functional_value(s: &QuadratureSamples, config: &SystemConfig, mu: f64) -> Result<f64> {
    let (gu, gv) = match (&s.grad_u, &s.grad_v) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::MissingGradient),
    };
    let (p, q) = (config.p(), config.q());
    let d = s.dim;
    let mut total = 0.0;
    for i in 0..s.weights.len() {
        let y = &s.points[i * d..(i + 1) * d];
        let rad = y.iter().map(|x| x * x).sum::<f64>().sqrt() / mu;
        let grad: f64 = gu[i * d..(i + 1) * d]
            .iter()
            .zip(&gv[i * d..(i + 1) * d])
            .map(|(a, b)| a * b)
            .sum();
        let k1 = config.potential1().value(rad);
        let k2 = config.potential2().value(rad);
        let f = grad
            - k1 * s.v[i].abs().powf(p + 1.0) / (p + 1.0)
            - k2 * s.u[i].abs().powf(q + 1.0) / (q + 1.0);
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        total += s.weights[i] * f;
    }
    Ok(total)
}

/// I(u, v) = ∫∇u·∇v - ∫K₁(|y|/μ)|v|^{p+1}/(p+1) - ∫K₂(|y|/μ)|u|^{q+1}/(q+1)
/// on each refinement level; the value comes from the last level and the
/// error from the last two.
pub fn energy_functional(
    levels: &[QuadratureSamples],
    config: &SystemConfig,
    mu: f64,
) -> Result<EnergyEstimate> {
    if levels.is_empty() {
        return Err(Error::EmptyField);
    }
    let vals = levels
        .iter()
        .map(|s| functional_value(s, config, mu))
        .collect::<Result<Vec<_>>>()?;
    let value = *vals.last().unwrap();
    let error = if vals.len() > 1 {
        (value - vals[vals.len() - 2]).abs()
    } else {
        f64::NAN
    };
    Ok(EnergyEstimate { value, error })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConstants {
    pub n: usize,
    /// Exponent of the K₁ well and of the K₂ well (None for K ≡ 1).
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub a: f64,
    /// Coefficient of (λμ)^{-m₂}, from K₂ and U^{q+1}.
    pub bbar1: f64,
    /// Coefficient of (λμ)^{-m₁}, from K₁ and V^{p+1}.
    pub bbar2: f64,
    pub btilde1: f64,
    pub btilde2: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub lambda0: f64,
}

impl ExpansionConstants {
    /// Leading exponent m = m₁ and whether m₁ = m₂.
    pub fn leading(&self) -> Option<(f64, bool)> {
        match (self.m1, self.m2) {
            (Some(a), Some(b)) => Some((a.min(b), (a - b).abs() < 1e-12)),
            (Some(a), None) => Some((a, false)),
            (None, Some(b)) => Some((b, false)),
            (None, None) => None,
        }
    }

    /// Well coefficient of λ^{-m}μ^{-m} in the chosen branch.
    pub fn bbar(&self) -> f64 {
        match (self.m1, self.m2) {
            (Some(a), Some(b)) if (a - b).abs() < 1e-12 => self.bbar1 + self.bbar2,
            (Some(_), _) => self.bbar2,
            (None, Some(_)) => self.bbar1,
            _ => 0.0,
        }
    }

    pub fn btilde(&self) -> f64 {
        match (self.m1, self.m2) {
            (Some(a), Some(b)) if (a - b).abs() < 1e-12 => self.btilde1 + self.btilde2,
            (Some(_), _) => self.btilde2,
            (None, Some(_)) => self.btilde1,
            _ => 0.0,
        }
    }

    /// Sets B₂ and B₃, then B₄ = B₂B₃ and λ₀ (when a well is configured).
    pub fn with_interaction(mut self, b2: f64, b3: f64, r0: Option<f64>) -> Self {
        self.b2 = b2;
        self.b3 = b3;
        self.b4 = b2 * b3;
        self.lambda0 = match (self.leading(), r0) {
            (Some((m, _)), Some(r0)) => {
                lambda_star_raw(self.n, m, self.b4, self.bbar(), r0).unwrap_or(f64::NAN)
            }
            _ => f64::NAN,
        };
        self
    }
}

fn well_terms(gs: &GroundState, pot: &Potential, use_v: bool) -> Result<(Option<f64>, f64, f64)> {
    let Some(spec) = pot.spec() else {
        return Ok((None, 0.0, 0.0));
    };
    let (n, nf) = (gs.n(), gs.nf());
    let (m, c) = (spec.m(), spec.c());
    let e = if use_v { gs.p() + 1.0 } else { gs.q() + 1.0 };
    let decay = if use_v {
        nf - 2.0
    } else {
        gs.decay_exponent_u()
    };
    if decay * e <= nf + m {
        return Err(Error::InsufficientDecay(format!(
            "moment {m} of a power {e} profile diverges"
        )));
    }
    let bbar = c / e * angular_moment(n, m) * gs.power_integral(use_v, e, m);
    let btilde = if m <= 1.0 {
        if (m - 1.0).abs() < 1e-15 {
            0.0
        } else {
            return Err(Error::InsufficientDecay(format!(
                "moment {} is not locally integrable",
                m - 2.0
            )));
        }
    } else {
        c * m * (m - 1.0) / (2.0 * e)
            * angular_moment(n, m - 2.0)
            * gs.power_integral(use_v, e, m - 2.0)
    };
    Ok((Some(m), bbar, btilde))
}

/// A = (2/N)∫U^{q+1}.
pub fn energy_constant_a(gs: &GroundState) -> f64 {
    2.0 / gs.nf() * gs.power_integral(false, gs.q() + 1.0, 0.0)
}

/// A, the well constants B̄ᵢ, B̃ᵢ and the analytic limit B₁ = a∫U^q. B₂ is
/// set to B₁ and B₃ to its large-k limit until they are fitted.
pub fn expansion_constants(gs: &GroundState, config: &SystemConfig) -> Result<ExpansionConstants> {
    let (m1, bbar2, btilde2) = well_terms(gs, config.potential1(), true)?;
    let (m2, bbar1, btilde1) = well_terms(gs, config.potential2(), false)?;
    let b1 = gs.a() * gs.power_integral(false, gs.q(), 0.0);
    let c = ExpansionConstants {
        n: gs.n(),
        m1,
        m2,
        a: energy_constant_a(gs),
        bbar1,
        bbar2,
        btilde1,
        btilde2,
        b1,
        b2: f64::NAN,
        b3: f64::NAN,
        b4: f64::NAN,
        lambda0: f64::NAN,
    };
    Ok(c.with_interaction(b1, b3_limit(gs.n()), config.r0()))
}

/// Riemann zeta for s > 1 (direct sum with an Euler–Maclaurin tail).
pub fn zeta(s: f64) -> f64 {
    let j = 64usize;
    let head: f64 = (1..j).map(|i| (i as f64).powf(-s)).sum();
    let jf = j as f64;
    head + jf.powf(1.0 - s) / (s - 1.0) + 0.5 * jf.powf(-s) + s / 12.0 * jf.powf(-s - 1.0)
        - s * (s + 1.0) * (s + 2.0) / 720.0 * jf.powf(-s - 3.0)
}

/// lim_k Σ_{j≥2}|x_j - x₁|^{2-N}·r^{N-2}/k^{N-2} = 2ζ(N-2)/(2π)^{N-2}.
pub fn b3_limit(n: usize) -> f64 {
    let s = n as f64 - 2.0;
    2.0 * zeta(s) / (2.0 * std::f64::consts::PI).powf(s)
}

/// Σ_{j=2}^k (2r sin((j-1)π/k))^{2-N}.
pub fn chord_sum(k: usize, r: f64, n: usize) -> f64 {
    let e = 2.0 - n as f64;
    (1..k)
        .map(|j| (2.0 * r * (std::f64::consts::PI * j as f64 / k as f64).sin()).powf(e))
        .sum()
}

/// Chord sum and the effective ring constant sum·r^{N-2}/k^{N-2}.
pub fn interaction_sum(k: usize, r: f64, n: usize) -> Result<(f64, f64)> {
    if k < 2 || !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "interaction sum needs k >= 2 and r > 0 (k={k})"
        )));
    }
    let s = chord_sum(k, r, n);
    Ok((s, s * r.powi(n as i32 - 2) / (k as f64).powi(n as i32 - 2)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct B3Sweep {
    /// Slope of log(sum·r^{N-2}) against log k.
    pub slope: f64,
    /// Effective constant at the largest k.
    pub b3_last: f64,
    pub b3_limit: f64,
    pub points: Vec<(usize, f64)>,
}

pub fn b3_sweep(n: usize, ks: &[usize]) -> Result<B3Sweep> {
    let points = ks
        .iter()
        .map(|&k| Ok((k, interaction_sum(k, 1.0, n)?.0)))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (_, slope, _) = power_law_fit(&xs, &ys);
    let last = points.last().unwrap();
    Ok(B3Sweep {
        slope,
        b3_last: last.1 / (last.0 as f64).powi(n as i32 - 2),
        b3_limit: b3_limit(n),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionFit {
    /// λ^{N-2}·lim d^{N-2}J(d), extrapolated in d^{-2}.
    pub b1: f64,
    /// Free log-log slope of J(d).
    pub slope: f64,
    pub residual: f64,
    pub samples: Vec<(f64, f64)>,
}

/// J(d) = ∫U_{0,λ}^q U_{de₁,λ}, integrated as the symmetric pair on the half
/// space closer to the origin.
pub fn interaction_integral(gs: &GroundState, lambda: f64, d: f64, res: SectorResolution) -> f64 {
    let q = gs.q();
    let r = 0.5 * d;
    let rule = SectorRule::new(gs.n(), 2, r, lambda, res);
    let half = rule.integrate(|z| {
        let rho1 = ((z[0] - r).powi(2) + z[1] * z[1] + z[2] * z[2]).sqrt();
        let rho2 = ((z[0] + r).powi(2) + z[1] * z[1] + z[2] * z[2]).sqrt();
        let u1 = gs.bubble_radial(lambda, rho1).u;
        let u2 = gs.bubble_radial(lambda, rho2).u;
        u1.powf(q) * u2 + u2.powf(q) * u1
    });
    0.5 * half
}

/// Slope tolerance of the interaction fit.
pub const INTERACTION_SLOPE_TOL: f64 = 0.05;

/// J(d) at each separation with the free log-log slope and the d^{-2}
/// extrapolated limit, without the slope check.
pub fn interaction_fit(
    gs: &GroundState,
    lambda: f64,
    separations: &[f64],
) -> Result<InteractionFit> {
    if gs.decay_case() != DecayCase::Super {
        return Err(Error::NotSuperCase);
    }
    if separations.len() < 3 {
        return Err(Error::InvalidArgument(
            "need at least three separations".into(),
        ));
    }
    let nf = gs.nf();
    let samples: Vec<(f64, f64)> = separations
        .iter()
        .map(|&d| {
            (
                d,
                interaction_integral(gs, lambda, d, SectorResolution::default()),
            )
        })
        .collect();
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (_, s, fit) = power_law_fit(&xs, &ys);
    let scaled: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(d, j)| (d.powi(-2), d.powf(nf - 2.0) * j))
        .collect();
    let lim = linear_fit(&scaled);
    Ok(InteractionFit {
        b1: lim.intercept * lambda.powf(nf - 2.0),
        slope: -s,
        residual: fit.rms,
        samples,
    })
}

/// [`interaction_fit`] with |s - (N-2)| <= [`INTERACTION_SLOPE_TOL`] enforced.
pub fn interaction_coefficient(
    gs: &GroundState,
    lambda: f64,
    separations: &[f64],
) -> Result<InteractionFit> {
    let fit = interaction_fit(gs, lambda, separations)?;
    let expected = gs.nf() - 2.0;
    if (fit.slope - expected).abs() > INTERACTION_SLOPE_TOL {
        return Err(Error::SlopeOutOfTolerance {
            slope: fit.slope,
            expected,
        });
    }
    Ok(fit)
}

/// Integrand of I(W₁, W₂) minus the k single-bubble energies.
fn ansatz_difference(an: &Ansatz<'_>, config: &SystemConfig, mu: f64, z: &[f64; 3]) -> f64 {
    let (p, q) = (config.p(), config.q());
    let (mut gu, mut gv) = ([0.0; 3], [0.0; 3]);
    let (mut w1, mut w2, mut selfgrad, mut su, mut sv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, c) in an.centers().iter().enumerate() {
        let rho = an.distance(j, z);
        let b = an.gs.bubble_radial(an.cfg.lambda, rho);
        if rho > 0.0 {
            let d = [(z[0] - c[0]) / rho, (z[1] - c[1]) / rho, z[2] / rho];
            for i in 0..3 {
                gu[i] += b.du * d[i];
                gv[i] += b.dv * d[i];
            }
        }
        selfgrad += b.du * b.dv;
        w1 += b.u;
        w2 += b.v;
        su += b.u.powf(q + 1.0);
        sv += b.v.powf(p + 1.0);
    }
    let rad = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt() / mu;
    let k1 = config.potential1().value(rad);
    let k2 = config.potential2().value(rad);
    let cross = gu[0] * gv[0] + gu[1] * gv[1] + gu[2] * gv[2] - selfgrad;
    cross - (k1 * w2.powf(p + 1.0) - sv) / (p + 1.0) - (k2 * w1.powf(q + 1.0) - su) / (q + 1.0)
}

/// I(W₁, W₂) - kA on one quadrature level.
pub fn ansatz_energy_excess(
    gs: &GroundState,
    cfg: &BubbleConfig,
    config: &SystemConfig,
    res: SectorResolution,
) -> f64 {
    let an = Ansatz::new(gs, cfg);
    let rule = SectorRule::new(gs.n(), cfg.k, cfg.r, cfg.lambda, res);
    rule.integrate(|z| ansatz_difference(&an, config, cfg.mu, z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnsatzEnergy {
    pub value: f64,
    pub error: f64,
    /// I - kA.
    pub excess: f64,
    /// Quadrature error larger than the excess being measured.
    pub inconclusive: bool,
}

/// I(W₁, W₂) by the sector rule at the given and the refined level.
pub fn ansatz_energy_with(
    gs: &GroundState,
    cfg: &BubbleConfig,
    config: &SystemConfig,
    res: SectorResolution,
) -> Result<AnsatzEnergy> {
    let e0 = ansatz_energy_excess(gs, cfg, config, res);
    let e1 = ansatz_energy_excess(gs, cfg, config, res.refined());
    if !e0.is_finite() || !e1.is_finite() {
        return Err(Error::NonFinite("ansatz energy integrand".into()));
    }
    let error = (e1 - e0).abs();
    let a = energy_constant_a(gs);
    Ok(AnsatzEnergy {
        value: cfg.k as f64 * a + e1,
        error,
        excess: e1,
        inconclusive: error > e1.abs(),
    })
}

pub fn ansatz_energy(
    gs: &GroundState,
    cfg: &BubbleConfig,
    config: &SystemConfig,
) -> Result<AnsatzEnergy> {
    ansatz_energy_with(gs, cfg, config, SectorResolution::default())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct B2Fit {
    pub b2: f64,
    pub correction: f64,
    pub fit: LinearFit,
    /// (d, A - I/2, quadrature error of I/2).
    pub samples: Vec<(f64, f64, f64)>,
}

/// Fits A - I(W)/2 = B₂ d^{2-N}(1 + c d^{-2}) from two-bubble energies with
/// K ≡ 1 and λ = 1.
pub fn fit_b2(gs: &GroundState, separations: &[f64]) -> Result<B2Fit> {
    let nf = gs.nf();
    let flat = SystemConfig::flat(gs.n(), gs.p())?;
    let mut samples = Vec::new();
    for &d in separations {
        let cfg = BubbleConfig::new(gs.n(), 2, 0.5 * d, 1.0, 1.0)?;
        let e = ansatz_energy(gs, &cfg, &flat)?;
        samples.push((d, -0.5 * e.excess, 0.5 * e.error));
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(d, e, _)| (d.powi(-2), d.powf(nf - 2.0) * e))
        .collect();
    let fit = linear_fit(&pts);
    Ok(B2Fit {
        b2: fit.intercept,
        correction: fit.slope / fit.intercept,
        fit,
        samples,
    })
}

/// Main-order reduced energy
/// F = k(A + B̄/(λμ)^m - B₄/(λ^{N-2}r₀^{N-2}μ^m) + B̃(μr₀ - r)²/(λ^{m-2}μ^m)).
pub fn reduced_energy(
    consts: &ExpansionConstants,
    cfg: &BubbleConfig,
    config: &SystemConfig,
) -> Result<f64> {
    let kf = cfg.k as f64;
    let Some((m, _)) = consts.leading() else {
        return Ok(kf * consts.a);
    };
    let r0 = config.r0().expect("windowed potential has r0");
    let (l, mu) = (cfg.lambda, cfg.mu);
    let nf = config.nf();
    let mum = mu.powf(m);
    let well = consts.bbar() / l.powf(m) / mum;
    let inter = consts.b4 / (l.powf(nf - 2.0) * r0.powf(nf - 2.0) * mum);
    let quad = consts.btilde() / (l.powf(m - 2.0) * mum) * (mu * r0 - cfg.r).powi(2);
    Ok(kf * (consts.a + well - inter + quad))
}

/// Gradient and Hessian of the main-order F in (r, λ).
pub fn reduced_energy_derivatives(
    consts: &ExpansionConstants,
    cfg: &BubbleConfig,
    config: &SystemConfig,
) -> (Vector2<f64>, Matrix2<f64>) {
    let Some((m, _)) = consts.leading() else {
        return (Vector2::zeros(), Matrix2::zeros());
    };
    let r0 = config.r0().expect("windowed potential has r0");
    let (l, mu, nf) = (cfg.lambda, cfg.mu, config.nf());
    let s = cfg.k as f64 * mu.powf(-m);
    let (bb, bt) = (consts.bbar(), consts.btilde());
    let b4 = consts.b4 * r0.powf(2.0 - nf);
    let t = mu * r0 - cfg.r;
    let fr = -2.0 * s * bt * l.powf(2.0 - m) * t;
    let fl = s
        * (-m * bb * l.powf(-m - 1.0)
            + (nf - 2.0) * b4 * l.powf(1.0 - nf)
            + (2.0 - m) * bt * l.powf(1.0 - m) * t * t);
    let frr = 2.0 * s * bt * l.powf(2.0 - m);
    let frl = -2.0 * s * bt * (2.0 - m) * l.powf(1.0 - m) * t;
    let fll = s
        * (m * (m + 1.0) * bb * l.powf(-m - 2.0) - (nf - 2.0) * (nf - 1.0) * b4 * l.powf(-nf)
            + (2.0 - m) * (1.0 - m) * bt * l.powf(-m) * t * t);
    (Vector2::new(fr, fl), Matrix2::new(frr, frl, frl, fll))
}

fn lambda_star_raw(n: usize, m: f64, b4: f64, bbar: f64, r0: f64) -> Result<f64> {
    let nf = n as f64;
    if m >= nf - 2.0 {
        return Err(Error::ExponentOutOfRange(format!(
            "m={m} must be below N-2={}",
            nf - 2.0
        )));
    }
    let base = b4 * (nf - 2.0) / (m * bbar * r0.powf(nf - 2.0));
    if !(base > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda0 base {base} is not positive"
        )));
    }
    Ok(base.powf(1.0 / (nf - 2.0 - m)))
}

/// λ₀ = (B₄(N-2)/(m B̄ r₀^{N-2}))^{1/(N-2-m)}, with B̄ = B̄₂ or B̄₁ + B̄₂.
pub fn lambda_star(consts: &ExpansionConstants, config: &SystemConfig) -> Result<f64> {
    let (m, _) = consts
        .leading()
        .ok_or_else(|| Error::InvalidArgument("no windowed potential".into()))?;
    let r0 = config.r0().expect("windowed potential has r0");
    lambda_star_raw(config.n(), m, consts.b4, consts.bbar(), r0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub r_lo: f64,
    pub r_hi: f64,
    pub l_lo: f64,
    pub l_hi: f64,
}

impl Rect {
    /// r within μ^{-θ̄} of μr₀, λ within μ^{-2θ̄/3} of λ₀.
    pub fn around(mu: f64, r0: f64, lambda0: f64, theta_bar: f64) -> Rect {
        let dr = mu.powf(-theta_bar);
        let dl = mu.powf(-2.0 * theta_bar / 3.0);
        Rect {
            r_lo: mu * r0 - dr,
            r_hi: mu * r0 + dr,
            l_lo: lambda0 - dl,
            l_hi: lambda0 + dl,
        }
    }

    fn contains(&self, r: f64, l: f64) -> bool {
        r >= self.r_lo && r <= self.r_hi && l >= self.l_lo && l <= self.l_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub r: f64,
    pub lambda: f64,
    pub gradient_norm: f64,
    /// Eigenvalues of the Hessian of F in (r, λ).
    pub hessian_eigenvalues: [f64; 2],
    pub iterations: usize,
}

/// Stationary point of the main-order F by damped Newton on ∇F.
pub fn locate_critical_point(
    consts: &ExpansionConstants,
    config: &SystemConfig,
    k: usize,
    mu: f64,
    rect: &Rect,
) -> Result<CriticalPoint> {
    let n = config.n();
    let grad_hess = |r: f64, l: f64| {
        let cfg = BubbleConfig {
            n,
            k,
            r,
            lambda: l,
            mu,
        };
        reduced_energy_derivatives(consts, &cfg, config)
    };
    let scale = Vector2::new(rect.r_hi - rect.r_lo, rect.l_hi - rect.l_lo);
    let (mut r, mut l) = (0.5 * (rect.r_lo + rect.r_hi), 0.5 * (rect.l_lo + rect.l_hi));
    for it in 0..100 {
        let (g, h) = grad_hess(r, l);
        let step = h.lu().solve(&g).ok_or(Error::NoStationaryPoint)?;
        let scaled = (step[0] / scale[0]).abs().max((step[1] / scale[1]).abs());
        let damp = if scaled > 0.25 { 0.25 / scaled } else { 1.0 };
        r -= damp * step[0];
        l -= damp * step[1];
        if !rect.contains(r, l) {
            return Err(Error::NoStationaryPoint);
        }
        if (step[0] / scale[0]).abs() < 1e-12 && (step[1] / scale[1]).abs() < 1e-12 {
            let (g, h) = grad_hess(r, l);
            let eig = h.symmetric_eigenvalues();
            return Ok(CriticalPoint {
                r,
                lambda: l,
                gradient_norm: g.norm(),
                hessian_eigenvalues: [eig[0].min(eig[1]), eig[0].max(eig[1])],
                iterations: it + 1,
            });
        }
    }
    Err(Error::NoStationaryPoint)
}

/// Stationary abscissa of sampled data: a least-squares cubic through the
/// samples around the first sign change of the discrete slope.
pub fn stationary_point(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 4 {
        return None;
    }
    let slopes: Vec<f64> = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    let i = slopes
        .windows(2)
        .position(|s| s[0].signum() != s[1].signum())?
        + 1;
    let lo = i.saturating_sub(3);
    let hi = (i + 4).min(xs.len());
    let x0 = xs[i];
    let rows = hi - lo;
    if rows < 4 {
        return None;
    }
    let a = DMatrix::from_fn(rows, 4, |r, c| (xs[lo + r] - x0).powi(c as i32));
    let b = DVector::from_fn(rows, |r, _| ys[lo + r]);
    let coef = a.svd(true, true).solve(&b, 1e-14).ok()?;
    // derivative c1 + 2c2 t + 3c3 t² = 0, root nearest 0
    let (c1, c2, c3) = (coef[1], coef[2], coef[3]);
    let mut t = -c1 / (2.0 * c2);
    for _ in 0..50 {
        let d = c1 + 2.0 * c2 * t + 3.0 * c3 * t * t;
        let dd = 2.0 * c2 + 6.0 * c3 * t;
        let step = d / dd;
        t -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    let x = x0 + t;
    (x >= xs[lo] && x <= xs[hi - 1]).then_some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaSample {
    pub lambda: f64,
    pub reduced: f64,
    /// I(W) - kA by quadrature on one level (NaN when not computed).
    pub numeric_excess: f64,
}

/// F(μr₀, λ) and, if `numeric`, the quadrature excess I(W) - kA along a λ grid.
pub fn sweep_lambda(
    gs: &GroundState,
    consts: &ExpansionConstants,
    config: &SystemConfig,
    k: usize,
    lambdas: &[f64],
    numeric: Option<SectorResolution>,
) -> Result<Vec<LambdaSample>> {
    lambdas
        .iter()
        .map(|&l| {
            let cfg = BubbleConfig::at_well(config, k, l)?;
            let reduced = reduced_energy(consts, &cfg, config)?;
            let numeric_excess = match numeric {
                Some(res) => ansatz_energy_excess(gs, &cfg, config, res),
                None => f64::NAN,
            };
            Ok(LambdaSample {
                lambda: l,
                reduced,
                numeric_excess,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{OutsideModel, PotentialSpec};
    use crate::ground_state::solve_ground_state;
    use crate::quadrature::{radial_integral, sphere_area};
    use std::sync::OnceLock;

    fn gs() -> &'static GroundState {
        static GS: OnceLock<GroundState> = OnceLock::new();
        GS.get_or_init(|| {
            solve_ground_state(&SystemConfig::flat(5, 7.0 / 3.0).unwrap(), 1e-8).unwrap()
        })
    }

    fn closed_u(r: f64) -> f64 {
        (1.0 + r * r / 15.0).powf(-1.5)
    }

    /// (2/5)∫U^{10/3} for the closed-form bubble, by 1-D radial quadrature.
    fn oracle_a() -> f64 {
        0.4 * sphere_area(5)
            * radial_integral(|r| closed_u(r).powf(10.0 / 3.0), 4.0, 1e4, Some(10.0))
    }

    fn closed_bubble_samples(lambda: f64, res: SectorResolution) -> QuadratureSamples {
        let rule = SectorRule::new(5, 1, 0.0, lambda, res);
        QuadratureSamples::from_sector(&rule, |z| {
            let rho = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
            let s = lambda.powf(1.5);
            let u = s * closed_u(lambda * rho);
            let du = s
                * lambda
                * (-1.5)
                * (1.0 + (lambda * rho).powi(2) / 15.0).powf(-2.5)
                * 2.0
                * lambda
                * rho
                / 15.0;
            let g = if rho > 0.0 {
                [du * z[0] / rho, du * z[1] / rho, du * z[2] / rho]
            } else {
                [0.0; 3]
            };
            ((u, g), (u, g))
        })
    }

    #[test]
    fn functional_examples() {
        let flat = SystemConfig::flat(5, 7.0 / 3.0).unwrap();
        let mut zero = closed_bubble_samples(1.0, SectorResolution::coarse());
        zero.u.iter_mut().for_each(|x| *x = 0.0);
        zero.v.iter_mut().for_each(|x| *x = 0.0);
        zero.grad_u
            .as_mut()
            .unwrap()
            .iter_mut()
            .for_each(|x| *x = 0.0);
        zero.grad_v
            .as_mut()
            .unwrap()
            .iter_mut()
            .for_each(|x| *x = 0.0);
        assert_eq!(
            energy_functional(&[zero.clone()], &flat, 1.0)
                .unwrap()
                .value,
            0.0
        );
        zero.grad_u = None;
        assert!(matches!(
            energy_functional(&[zero], &flat, 1.0),
            Err(Error::MissingGradient)
        ));

        let a = oracle_a();
        // 15^{5/2}·B(5/2, 5/2)/2·ω₄·(2/5)
        assert!((a - 337.8).abs() < 0.5, "a={a}");
        for lam in [0.5, 1.0, 2.0] {
            let res = SectorResolution::coarse();
            let levels = [
                closed_bubble_samples(lam, res),
                closed_bubble_samples(lam, res.refined()),
            ];
            let e = energy_functional(&levels, &flat, 1.0).unwrap();
            assert!(
                (e.value / a - 1.0).abs() < 1e-6,
                "lam={lam} I={} A={a}",
                e.value
            );
            assert!(e.error < 1e-4 * a);
        }
    }

    #[test]
    fn constants_examples() {
        let gs = gs();
        let flat = SystemConfig::flat(5, 7.0 / 3.0).unwrap();
        let c = expansion_constants(gs, &flat).unwrap();
        assert!((c.a / oracle_a() - 1.0).abs() < 1e-6);
        assert!(c.m1.is_none() && c.bbar1 == 0.0 && c.bbar2 == 0.0);
        // m = 2: B̃ = c·∫V^{p+1}/(p+1), and the |y₁|² moment is 1/N of the |y|² moment
        let spec = PotentialSpec::new(1.5, 0.5, 2.0, 0.5, 1.2, OutsideModel::Clamp).unwrap();
        let cfg = flat
            .with_potentials(Potential::Window(spec.clone()), Potential::Flat)
            .unwrap();
        let c = expansion_constants(gs, &cfg).unwrap();
        let p1 = gs.p() + 1.0;
        let int_v = gs.power_integral(true, p1, 0.0);
        assert!((c.btilde2 - 0.5 / p1 * int_v).abs() < 1e-9 * int_v);
        let second = gs.power_integral(true, p1, 2.0);
        assert!((c.bbar2 - 0.5 / p1 * second / 5.0).abs() < 1e-9 * second);
        assert!(c.bbar1 == 0.0 && c.m2.is_none());
        assert!(c.a > 0.0 && c.bbar2 > 0.0 && c.btilde2 > 0.0 && c.b1 > 0.0);
    }

    #[test]
    fn chord_sums() {
        let (s, _) = interaction_sum(2, 3.0, 5).unwrap();
        assert!((s - 6f64.powi(-3)).abs() < 1e-16);
        let (s, _) = interaction_sum(4, 1.0, 5).unwrap();
        let oracle = 2.0 * 2f64.sqrt().powi(-3) + 0.125;
        assert!((s - oracle).abs() < 1e-14 && (s - 0.8321).abs() < 1e-4);
        assert!(interaction_sum(1, 1.0, 5).is_err());
        let ks: Vec<usize> = (0..=4).map(|i| 64 << i).collect();
        let sw = b3_sweep(5, &ks).unwrap();
        assert!((sw.slope - 3.0).abs() < 0.02, "slope={}", sw.slope);
        assert!((sw.b3_last / sw.b3_limit - 1.0).abs() < 1e-3);
        assert!((zeta(3.0) - 1.202_056_903_159_594).abs() < 1e-12);
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12);
    }

    fn manual_constants(b4: f64, bbar2: f64) -> ExpansionConstants {
        ExpansionConstants {
            n: 5,
            m1: Some(2.0),
            m2: None,
            a: 10.0,
            bbar1: 0.0,
            bbar2,
            btilde1: 0.0,
            btilde2: 0.7,
            b1: 1.0,
            b2: b4,
            b3: 1.0,
            b4,
            lambda0: f64::NAN,
        }
    }

    fn well_config(r0: f64) -> SystemConfig {
        let spec = PotentialSpec::new(r0, 0.5, 2.0, 0.5, 0.5, OutsideModel::Clamp).unwrap();
        SystemConfig::flat(5, 7.0 / 3.0)
            .unwrap()
            .with_potentials(Potential::Window(spec), Potential::Flat)
            .unwrap()
    }

    #[test]
    fn lambda_star_examples() {
        let cfg = well_config(1.0);
        // B₄(N-2) = m B̄ r₀^{N-2}
        let c = manual_constants(2.0, 3.0);
        assert!((lambda_star(&c, &cfg).unwrap() - 1.0).abs() < 1e-14);
        let c = manual_constants(1.0, 1.0);
        assert!((lambda_star(&c, &cfg).unwrap() - 1.5).abs() < 1e-14);
        let c2 = manual_constants(2.0, 1.0);
        assert!((lambda_star(&c2, &cfg).unwrap() / 1.5 - 2.0).abs() < 1e-14);
        let c3 = manual_constants(7.0, 7.0);
        assert!((lambda_star(&c3, &cfg).unwrap() - 1.5).abs() < 1e-14);
        assert!(lambda_star_raw(5, 3.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn reduced_energy_examples() {
        let config = well_config(2.0);
        let c = manual_constants(4.0, 1.5);
        let l0 = lambda_star(&c, &config).unwrap();
        let mu = 3.0;
        let at = |r: f64, l: f64| {
            reduced_energy(&c, &BubbleConfig::new(5, 4, r, l, mu).unwrap(), &config).unwrap()
        };
        assert!((at(mu * 2.0, 1e8) - 4.0 * c.a).abs() < 1e-10);
        let h = 1e-5;
        let d = (at(6.0, l0 + h) - at(6.0, l0 - h)) / (2.0 * h);
        assert!(d.abs() < 1e-8, "dF={d}");
        for (r, l) in [(5.5, 1.3), (6.4, 0.8)] {
            let lhs = at(r, l) - at(mu * 2.0, l);
            let rhs = 4.0 * c.btilde2 / (l.powf(0.0) * mu * mu) * (mu * 2.0 - r).powi(2);
            assert!((lhs - rhs).abs() < 1e-12);
        }
        // sign change of ∂F/∂λ at λ₀ only
        let grid: Vec<f64> = (0..200).map(|i| 0.2 + 4.8 * i as f64 / 199.0).collect();
        let slopes: Vec<f64> = grid
            .windows(2)
            .map(|w| at(6.0, w[1]) - at(6.0, w[0]))
            .collect();
        let changes = slopes
            .windows(2)
            .filter(|s| s[0].signum() != s[1].signum())
            .count();
        assert_eq!(changes, 1);
    }

    #[test]
    fn critical_point_examples() {
        let config = well_config(2.0);
        let c = manual_constants(4.0, 1.5);
        let l0 = lambda_star(&c, &config).unwrap();
        let mu = 3.0;
        let rect = Rect::around(mu, 2.0, l0, 0.1);
        let cp = locate_critical_point(&c, &config, 4, mu, &rect).unwrap();
        assert!((cp.r - mu * 2.0).abs() < 1e-8);
        assert!((cp.lambda - l0).abs() < 1e-10);
        // min in r, max in λ
        assert!(cp.hessian_eigenvalues[0] < 0.0 && cp.hessian_eigenvalues[1] > 0.0);
        // +10% on B̄ moves λ by about -10%/(N-2-m)
        let c2 = ExpansionConstants {
            bbar2: 1.1 * c.bbar2,
            ..c
        };
        let l1 = lambda_star(&c2, &config).unwrap();
        let cp2 =
            locate_critical_point(&c2, &config, 4, mu, &Rect::around(mu, 2.0, l1, 0.1)).unwrap();
        let rel = cp2.lambda / cp.lambda - 1.0;
        assert!((rel + 0.1).abs() < 0.01, "rel={rel}");
        let far = Rect {
            r_lo: 7.0,
            r_hi: 8.0,
            l_lo: 3.0,
            l_hi: 4.0,
        };
        assert!(matches!(
            locate_critical_point(&c, &config, 4, mu, &far),
            Err(Error::NoStationaryPoint)
        ));
    }

    #[test]
    fn stationary_point_of_cubic() {
        let xs: Vec<f64> = (0..20).map(|i| 0.5 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| -(x - 1.234f64).powi(2) + 0.3 * (x - 1.234f64).powi(3))
            .collect();
        let x = stationary_point(&xs, &ys).unwrap();
        assert!((x - 1.234).abs() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lambda_star_homogeneous(b4 in 0.1f64..10.0, bbar in 0.1f64..10.0, s in 0.1f64..10.0) {
                let cfg = well_config(1.3);
                let a = lambda_star(&manual_constants(b4, bbar), &cfg).unwrap();
                let b = lambda_star(&manual_constants(s * b4, s * bbar), &cfg).unwrap();
                prop_assert!((a / b - 1.0).abs() < 1e-12);
            }
        }
    }
}
