//! Problem instances: exponents on the critical hyperbola, radial potentials
//! and the concentration scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the hyperbola identity.
pub const HYPERBOLA_TOL: f64 = 1e-12;

/// The Sobolev exponent (N+2)/(N-2).
pub fn critical_exponent(n: usize) -> f64 {
    (n as f64 + 2.0) / (n as f64 - 2.0)
}

/// Signed defect 1/(p+1) + 1/(q+1) - (N-2)/N.
pub fn hyperbola_defect(n: usize, p: f64, q: f64) -> f64 {
    let nf = n as f64;
    1.0 / (p + 1.0) + 1.0 / (q + 1.0) - (nf - 2.0) / nf
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperbolaReport {
    pub defect: f64,
    pub critical: f64,
}

pub fn validate_hyperbola(n: usize, p: f64, q: f64) -> Result<HyperbolaReport> {
    if n < 3 {
        return Err(Error::DimensionTooSmall(n));
    }
    if !(p > 1.0 && q > 1.0) || !p.is_finite() || !q.is_finite() {
        return Err(Error::ExponentOutOfRange(format!(
            "need p, q > 1 (p={p}, q={q})"
        )));
    }
    let defect = hyperbola_defect(n, p, q);
    if defect.abs() > HYPERBOLA_TOL {
        return Err(Error::OffHyperbola { defect });
    }
    let crit = critical_exponent(n);
    // the hyperbola tolerance also covers the symmetric point computed in floating point
    if p > crit + HYPERBOLA_TOL || q < crit - HYPERBOLA_TOL {
        return Err(Error::OrderingViolated { p, q, crit });
    }
    Ok(HyperbolaReport {
        defect,
        critical: crit,
    })
}

/// The exponent paired with `p` on the hyperbola, for any p > 2/(N-2).
pub fn hyperbola_partner(n: usize, p: f64) -> Result<f64> {
    let nf = n as f64;
    let s = (nf - 2.0) / nf - 1.0 / (p + 1.0);
    if !(s > 0.0) || !(p > 0.0) {
        return Err(Error::ExponentOutOfRange(format!(
            "p={p} has no partner for N={n}"
        )));
    }
    Ok(1.0 / s - 1.0)
}

/// Partner q >= (N+2)/(N-2) of an admissible p in (1, (N+2)/(N-2)].
pub fn partner_exponent(n: usize, p: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::DimensionTooSmall(n));
    }
    let crit = critical_exponent(n);
    if !(p > 1.0 && p <= crit + HYPERBOLA_TOL) {
        return Err(Error::ExponentOutOfRange(format!(
            "p={p} outside (1, {crit}]"
        )));
    }
    let q = hyperbola_partner(n, p)?;
    if q < crit && crit - q < HYPERBOLA_TOL {
        return Ok(crit);
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionPReport {
    /// Exclusive lower bound for p.
    pub lower: f64,
    /// Inclusive upper bound for p.
    pub upper: f64,
    /// Exclusive upper bound for m from the potential assumption.
    pub m_bound: f64,
    pub p_ok: bool,
    pub m_ok: bool,
    pub pass: bool,
}

/// Admissibility of (p, m) for the multi-bubble construction.
pub fn check_assumption_p(n: usize, p: f64, m: f64) -> AssumptionPReport {
    let nf = n as f64;
    let upper = critical_exponent(n);
    let lower = if n == 5 {
        13.0 / 6.0
    } else {
        let a = (nf + 1.0) / (nf - 2.0);
        let d = (nf - 2.0) * (nf - 2.0) - (nf - 2.0 - m);
        let b = if d > 0.0 {
            nf * (nf - 2.0) / d
        } else {
            f64::INFINITY
        };
        a.max(b)
    };
    let m_bound = (2.0 * p - 1.0) * (nf - 2.0) - 8.0;
    let p_ok = n >= 5 && p > lower && p <= upper + HYPERBOLA_TOL;
    let m_ok = m < m_bound;
    AssumptionPReport {
        lower,
        upper,
        m_bound,
        p_ok,
        m_ok,
        pass: p_ok && m_ok,
    }
}

/// μ = k^{(N-2)/(N-2-m)}.
pub fn scaling_parameter(k: usize, n: usize, m: f64) -> Result<f64> {
    let nf = n as f64;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if m >= nf - 2.0 {
        return Err(Error::ExponentOutOfRange(format!(
            "m={m} must be below N-2={}",
            nf - 2.0
        )));
    }
    Ok((k as f64).powf((nf - 2.0) / (nf - 2.0 - m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutsideModel {
    Clamp,
    SmoothDecay,
}

/// K(r) = 1 - c|r - r0|^m on |r - r0| < delta, continued outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPotential", into = "RawPotential")]
pub struct PotentialSpec {
    r0: f64,
    c: f64,
    m: f64,
    theta: f64,
    delta: f64,
    outside: OutsideModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawPotential {
    r0: f64,
    c: f64,
    m: f64,
    theta: f64,
    delta: f64,
    outside: OutsideModel,
}

impl TryFrom<RawPotential> for PotentialSpec {
    type Error = Error;
    fn try_from(r: RawPotential) -> Result<Self> {
        PotentialSpec::new(r.r0, r.c, r.m, r.theta, r.delta, r.outside)
    }
}

impl From<PotentialSpec> for RawPotential {
    fn from(s: PotentialSpec) -> Self {
        RawPotential {
            r0: s.r0,
            c: s.c,
            m: s.m,
            theta: s.theta,
            delta: s.delta,
            outside: s.outside,
        }
    }
}

impl PotentialSpec {
    pub fn new(
        r0: f64,
        c: f64,
        m: f64,
        theta: f64,
        delta: f64,
        outside: OutsideModel,
    ) -> Result<Self> {
        let bad = |what: &str| Err(Error::InvalidPotential(what.to_string()));
        if !(r0 > 0.0 && r0.is_finite()) {
            return bad("r0 must be positive");
        }
        if !(c > 0.0 && c.is_finite()) {
            return bad("c must be positive");
        }
        if !(m >= 2.0 && m.is_finite()) {
            return bad("m must be at least 2");
        }
        if !(theta > 0.0) {
            return bad("theta must be positive");
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return bad("delta must be positive");
        }
        let spec = PotentialSpec {
            r0,
            c,
            m,
            theta,
            delta,
            outside,
        };
        let floor = spec.far_value();
        if !(floor > 0.0) {
            return Err(Error::InvalidPotential(format!(
                "potential reaches non-positive value {floor} outside the window"
            )));
        }
        Ok(spec)
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn outside(&self) -> OutsideModel {
        self.outside
    }

    fn edge_value(&self) -> f64 {
        1.0 - self.c * self.delta.powf(self.m)
    }

    fn edge_slope(&self) -> f64 {
        -self.m * self.c * self.delta.powf(self.m - 1.0)
    }

    /// Smallest value of K, attained far from r0.
    pub fn far_value(&self) -> f64 {
        match self.outside {
            OutsideModel::Clamp => self.edge_value(),
            OutsideModel::SmoothDecay => 0.5 * self.edge_value(),
        }
    }

    fn blend_length(&self) -> f64 {
        self.edge_value() / self.edge_slope().abs()
    }

    /// Value and derivative in the distance d = |r - r0|.
    fn profile(&self, d: f64) -> (f64, f64) {
        if d < self.delta {
            let dm1 = if d > 0.0 { d.powf(self.m - 1.0) } else { 0.0 };
            return (1.0 - self.c * dm1 * d, -self.m * self.c * dm1);
        }
        match self.outside {
            OutsideModel::Clamp => (self.edge_value(), 0.0),
            OutsideModel::SmoothDecay => {
                // Hermite blend to half the edge value over edge/|slope|; the
                // slope ratio is 2, so the blend is monotone.
                let len = self.blend_length();
                let x = (d - self.delta) / len;
                if x >= 1.0 {
                    return (self.far_value(), 0.0);
                }
                let (y0, s0, y1) = (self.edge_value(), self.edge_slope(), self.far_value());
                let x2 = x * x;
                let x3 = x2 * x;
                let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
                let h10 = x3 - 2.0 * x2 + x;
                let h01 = -2.0 * x3 + 3.0 * x2;
                let v = h00 * y0 + h10 * len * s0 + h01 * y1;
                let dv = ((6.0 * x2 - 6.0 * x) * y0
                    + (3.0 * x2 - 4.0 * x + 1.0) * len * s0
                    + (-6.0 * x2 + 6.0 * x) * y1)
                    / len;
                (v, dv)
            }
        }
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if r < 0.0 {
            return Err(Error::InvalidArgument(format!("negative radius {r}")));
        }
        Ok(self.value(r))
    }

    /// K(r) for r >= 0 (negative r is reflected).
    pub fn value(&self, r: f64) -> f64 {
        self.profile((r.abs() - self.r0).abs()).0
    }

    /// dK/dr.
    pub fn derivative(&self, r: f64) -> f64 {
        let s = r.abs() - self.r0;
        let (_, dd) = self.profile(s.abs());
        if s >= 0.0 {
            dd
        } else {
            -dd
        }
    }

    /// ΔK - r(ΔK + ½(ΔK)') at r = r0, where Δ is the radial Laplacian in R^N.
    /// Undefined (`None`) when the third derivative of |r - r0|^m is singular at r0.
    pub fn nondegeneracy_value(&self, n: usize) -> Option<f64> {
        let nf = n as f64;
        if self.m == 2.0 {
            Some(self.c * (2.0 * self.r0 + nf - 3.0))
        } else if self.m > 3.0 {
            Some(0.0)
        } else {
            None
        }
    }
}

pub fn eval_potential(spec: &PotentialSpec, r: f64) -> Result<f64> {
    spec.eval(r)
}

/// A potential K_i: identically one, or the windowed profile.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Potential {
    #[default]
    Flat,
    Window(PotentialSpec),
}

impl Potential {
    pub fn value(&self, r: f64) -> f64 {
        match self {
            Potential::Flat => 1.0,
            Potential::Window(s) => s.value(r),
        }
    }
    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            Potential::Flat => 0.0,
            Potential::Window(s) => s.derivative(r),
        }
    }
    pub fn spec(&self) -> Option<&PotentialSpec> {
        match self {
            Potential::Flat => None,
            Potential::Window(s) => Some(s),
        }
    }
    pub fn is_flat(&self) -> bool {
        matches!(self, Potential::Flat)
    }
}

/// A validated problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct SystemConfig {
    n: usize,
    p: f64,
    q: f64,
    potential1: Potential,
    potential2: Potential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawConfig {
    #[serde(rename = "N")]
    n: usize,
    p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    potential1: Option<PotentialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    potential2: Option<PotentialSpec>,
}

impl TryFrom<RawConfig> for SystemConfig {
    type Error = Error;
    fn try_from(r: RawConfig) -> Result<Self> {
        let q = match r.q {
            Some(q) => q,
            None => {
                if r.n < 3 {
                    return Err(Error::DimensionTooSmall(r.n));
                }
                partner_exponent(r.n, r.p)?
            }
        };
        let wrap = |s: Option<PotentialSpec>| s.map(Potential::Window).unwrap_or(Potential::Flat);
        SystemConfig::new(r.n, r.p, q, wrap(r.potential1), wrap(r.potential2))
    }
}

impl From<SystemConfig> for RawConfig {
    fn from(c: SystemConfig) -> Self {
        RawConfig {
            n: c.n,
            p: c.p,
            q: Some(c.q),
            potential1: c.potential1.spec().cloned(),
            potential2: c.potential2.spec().cloned(),
        }
    }
}

impl SystemConfig {
    pub fn new(
        n: usize,
        p: f64,
        q: f64,
        potential1: Potential,
        potential2: Potential,
    ) -> Result<Self> {
        if n < 5 {
            return Err(Error::DimensionTooSmall(n));
        }
        validate_hyperbola(n, p, q)?;
        let nf = n as f64;
        for pot in [&potential1, &potential2] {
            if let Some(s) = pot.spec() {
                if s.m() >= nf - 2.0 {
                    return Err(Error::InvalidPotential(format!(
                        "m={} must lie in [2, N-2) = [2, {})",
                        s.m(),
                        nf - 2.0
                    )));
                }
            }
        }
        if let (Some(a), Some(b)) = (potential1.spec(), potential2.spec()) {
            if a.r0() != b.r0() {
                return Err(Error::InvalidPotential(
                    "both potentials must share r0".into(),
                ));
            }
            if b.m() < a.m() {
                return Err(Error::InvalidPotential(format!(
                    "m2={} < m1={} is not supported; swap the roles of the potentials",
                    b.m(),
                    a.m()
                )));
            }
        }
        Ok(SystemConfig {
            n,
            p,
            q,
            potential1,
            potential2,
        })
    }

    /// Both potentials identically one.
    pub fn flat(n: usize, p: f64) -> Result<Self> {
        let q = partner_exponent(n, p)?;
        SystemConfig::new(n, p, q, Potential::Flat, Potential::Flat)
    }

    pub fn with_potentials(&self, potential1: Potential, potential2: Potential) -> Result<Self> {
        SystemConfig::new(self.n, self.p, self.q, potential1, potential2)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<RawConfig>(text)
            .map_err(|e| Error::Format(e.to_string()))
            .and_then(SystemConfig::try_from)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RawConfig::from(self.clone())).expect("config serializes")
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn nf(&self) -> f64 {
        self.n as f64
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn potential1(&self) -> &Potential {
        &self.potential1
    }
    pub fn potential2(&self) -> &Potential {
        &self.potential2
    }

    /// m = min(m1, m2) over the windowed potentials.
    pub fn m(&self) -> Option<f64> {
        let ms: Vec<f64> = [&self.potential1, &self.potential2]
            .iter()
            .filter_map(|p| p.spec().map(|s| s.m()))
            .collect();
        ms.into_iter().reduce(f64::min)
    }

    pub fn r0(&self) -> Option<f64> {
        self.potential1
            .spec()
            .or(self.potential2.spec())
            .map(|s| s.r0())
    }

    /// N/(q+1), the scaling exponent of U.
    pub fn alpha_u(&self) -> f64 {
        self.nf() / (self.q + 1.0)
    }
    /// N/(p+1), the scaling exponent of V.
    pub fn alpha_v(&self) -> f64 {
        self.nf() / (self.p + 1.0)
    }
}
