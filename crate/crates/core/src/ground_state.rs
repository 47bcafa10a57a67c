//! Radial ground state of -ΔU = V^p, -ΔV = U^q with U(0) = 1.
//!
//! The ODE is integrated in t = ln r for (U, rU', V, rV') with classical RK4,
//! the free value V(0) is bisected on the zero-crossing dichotomy, and the
//! profiles are replaced by their power-law asymptotes beyond `r_match`.

use std::io::{BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::quadrature::{radial_integral, sphere_area};

/// Smallest tabulated radius; below it the Taylor series at the origin is used.
const R_START: f64 = 1e-3;
/// Integration horizon used to classify a shooting trajectory.
const R_HORIZON: f64 = 1e7;
/// Relative gap between the two bracketing trajectories that ends the table.
const DIVERGENCE_GAP: f64 = 1e-7;
/// Relative gap between step sizes h and h/2 that ends the table.
const STEP_GAP: f64 = 1e-5;
/// Far-field switch: V < FAR_RATIO·V(0).
const FAR_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayCase {
    Sub,
    Log,
    Super,
}

impl DecayCase {
    pub fn classify(n: usize, p: f64) -> DecayCase {
        let t = n as f64 / (n as f64 - 2.0);
        if (p - t).abs() <= 1e-12 {
            DecayCase::Log
        } else if p < t {
            DecayCase::Sub
        } else {
            DecayCase::Super
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DecayCase::Sub => "sub",
            DecayCase::Log => "log",
            DecayCase::Super => "super",
        }
    }
}

/// Values and r-derivatives of the profiles at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub u: f64,
    pub v: f64,
    pub du: f64,
    pub dv: f64,
    pub d2u: f64,
    pub d2v: f64,
}

/// Decay constants with their extrapolation error estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayConstants {
    pub a: f64,
    pub b: f64,
    pub a_err: f64,
    pub b_err: f64,
    pub case: DecayCase,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    n: usize,
    p: f64,
    q: f64,
    tol: f64,
    v0: f64,
    // tabulated on r > 0, log grid
    t: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    pu: Vec<f64>,
    pv: Vec<f64>,
    decay: DecayConstants,
    r_match: f64,
    residual: f64,
    uniform_h: Option<f64>,
}

fn spow(x: f64, e: f64) -> f64 {
    if x >= 0.0 {
        x.powf(e)
    } else {
        -(-x).powf(e)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Fate {
    UCrosses,
    VCrosses,
    Undecided,
}

struct Shooter {
    nf: f64,
    p: f64,
    q: f64,
    h: f64,
}

type State = [f64; 4];

impl Shooter {
    fn rhs(&self, t: f64, y: &State) -> State {
        let r2 = (2.0 * t).exp();
        [
            y[1],
            -(self.nf - 2.0) * y[1] - r2 * spow(y[2], self.p),
            y[3],
            -(self.nf - 2.0) * y[3] - r2 * spow(y[0], self.q),
        ]
    }

    fn step(&self, t: f64, y: &State) -> State {
        let h = self.h;
        let k1 = self.rhs(t, y);
        let y2: State = std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]);
        let k2 = self.rhs(t + 0.5 * h, &y2);
        let y3: State = std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]);
        let k3 = self.rhs(t + 0.5 * h, &y3);
        let y4: State = std::array::from_fn(|i| y[i] + h * k3[i]);
        let k4 = self.rhs(t + h, &y4);
        std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// Taylor coefficients at the origin: U = 1 + u2 r² + u4 r⁴, V = s + v2 r² + v4 r⁴.
    fn series(&self, s: f64) -> [f64; 4] {
        series_coefficients(self.nf, self.p, self.q, s)
    }

    fn initial(&self, s: f64) -> State {
        let [u2, u4, v2, v4] = self.series(s);
        let r = R_START;
        let r2 = r * r;
        [
            1.0 + u2 * r2 + u4 * r2 * r2,
            2.0 * u2 * r2 + 4.0 * u4 * r2 * r2,
            s + v2 * r2 + v4 * r2 * r2,
            2.0 * v2 * r2 + 4.0 * v4 * r2 * r2,
        ]
    }

    fn steps_to(&self, r_end: f64) -> usize {
        ((r_end.ln() - R_START.ln()) / self.h).ceil() as usize
    }

    fn classify(&self, s: f64) -> Fate {
        let mut y = self.initial(s);
        let t0 = R_START.ln();
        for i in 0..self.steps_to(R_HORIZON) {
            y = self.step(t0 + i as f64 * self.h, &y);
            if y[0] <= 0.0 {
                return Fate::UCrosses;
            }
            if y[2] <= 0.0 {
                return Fate::VCrosses;
            }
        }
        Fate::Undecided
    }

    /// Trajectory on the uniform t-grid, stopped at a zero crossing.
    fn trajectory(&self, s: f64, r_end: f64) -> Vec<State> {
        let mut y = self.initial(s);
        let t0 = R_START.ln();
        let n = self.steps_to(r_end);
        let mut out = Vec::with_capacity(n + 1);
        out.push(y);
        for i in 0..n {
            y = self.step(t0 + i as f64 * self.h, &y);
            if y[0] <= 0.0 || y[2] <= 0.0 {
                break;
            }
            out.push(y);
        }
        out
    }

    /// Bisection on V(0); returns the bracket (s_lo, s_hi).
    fn shoot(&self) -> Result<(f64, f64)> {
        let s = 1.0;
        let fate = self.classify(s);
        if fate == Fate::Undecided {
            return Ok((s, s));
        }
        // expand until the fate flips
        let factor = if fate == Fate::UCrosses { 0.5 } else { 2.0 };
        let mut other = s;
        let mut found = None;
        for _ in 0..60 {
            other *= factor;
            let f = self.classify(other);
            if f != fate {
                found = Some(f);
                break;
            }
        }
        let Some(other_fate) = found else {
            return Err(Error::NoBracket);
        };
        if other_fate == Fate::Undecided {
            return Ok((other, other));
        }
        let (mut lo, mut hi) = if fate == Fate::UCrosses {
            (other, s)
        } else {
            (s, other)
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match self.classify(mid) {
                Fate::UCrosses => hi = mid,
                Fate::VCrosses => lo = mid,
                Fate::Undecided => return Ok((mid, mid)),
            }
        }
        Ok((lo, hi))
    }
}

fn series_coefficients(nf: f64, p: f64, q: f64, s: f64) -> [f64; 4] {
    let u2 = -s.powf(p) / (2.0 * nf);
    let v2 = -1.0 / (2.0 * nf);
    let u4 = -p * s.powf(p - 1.0) * v2 / (4.0 * (nf + 2.0));
    let v4 = -q * u2 / (4.0 * (nf + 2.0));
    [u2, u4, v2, v4]
}

/// Sixth-order central first derivative on a uniform grid, interior points only.
fn central_derivative(f: &[f64], h: f64, i: usize) -> f64 {
    const C: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
    let mut d = 0.0;
    for (k, c) in C.iter().enumerate() {
        d += c * (f[i + k + 1] - f[i - k - 1]);
    }
    d / h
}

/// Richardson estimate of lim f(r) given f = L + C r^{-alpha} + ..., from three
/// radii in ratio 2. Returns (limit, error estimate).
fn richardson_limit(f1: f64, f2: f64, f3: f64, alpha: f64) -> (f64, f64) {
    let g = 2f64.powf(alpha);
    let l12 = (g * f2 - f1) / (g - 1.0);
    let l23 = (g * f3 - f2) / (g - 1.0);
    (
        l23,
        (l23 - l12).abs() / (g - 1.0).max(1.0) + 1e-15 * l23.abs(),
    )
}

pub fn solve_ground_state(config: &SystemConfig, tol: f64) -> Result<GroundState> {
    if !(tol > 1e-12 && tol < 1e-3) {
        return Err(Error::InvalidArgument(format!(
            "tol={tol} outside (1e-12, 1e-3)"
        )));
    }
    let mut h = 0.01;
    let mut last = f64::INFINITY;
    for _ in 0..6 {
        let gs = solve_with_step(config, tol, h)?;
        if gs.residual <= tol {
            return Ok(gs);
        }
        last = gs.residual;
        h *= 0.5;
    }
    Err(Error::ToleranceNotReached {
        tol,
        achieved: last,
    })
}

fn solve_with_step(config: &SystemConfig, tol: f64, h: f64) -> Result<GroundState> {
    let (n, p, q) = (config.n(), config.p(), config.q());
    // The discrete trajectory leaves a small constant mode behind in the far
    // field; step doubling locates where it starts to matter.
    let coarse = Shooter {
        nf: n as f64,
        p,
        q,
        h,
    };
    let (clo, chi) = coarse.shoot()?;
    let reference = coarse.trajectory(0.5 * (clo + chi), R_HORIZON);
    let sh = Shooter {
        nf: n as f64,
        p,
        q,
        h: 0.5 * h,
    };
    let (lo, hi) = sh.shoot()?;
    let s = 0.5 * (lo + hi);
    let mid = sh.trajectory(s, R_HORIZON);
    let mut end = mid.len();
    let v_cut = FAR_RATIO * s;
    if let Some(i) = mid.iter().position(|y| y[2] < v_cut) {
        end = end.min(i + 1);
    }
    let rel_gap = |a: &State, b: &State, m: &State| {
        ((a[0] - b[0]).abs() / m[0]).max((a[2] - b[2]).abs() / m[2])
    };
    let m = (reference.len() - 1) * 2 + 1;
    let step_gap = (0..reference.len().min(mid.len().div_ceil(2)))
        .position(|i| rel_gap(&reference[i], &mid[2 * i], &mid[2 * i]) > STEP_GAP)
        .map(|i| 2 * i);
    end = end.min(step_gap.unwrap_or(m));
    if hi > lo {
        let a = sh.trajectory(lo, R_HORIZON);
        let b = sh.trajectory(hi, R_HORIZON);
        let m = a.len().min(b.len()).min(mid.len());
        let gap = (0..m).position(|i| rel_gap(&a[i], &b[i], &mid[i]) > DIVERGENCE_GAP);
        end = end.min(gap.unwrap_or(m));
    }
    let h = sh.h;
    if end < 50 {
        return Err(Error::TailTooShort(format!("only {end} tabulated points")));
    }
    let t0 = R_START.ln();
    let states = &mid[..end];
    let t: Vec<f64> = (0..end).map(|i| t0 + i as f64 * h).collect();
    let r: Vec<f64> = t.iter().map(|t| t.exp()).collect();
    let mut gs = GroundState {
        n,
        p,
        q,
        tol,
        v0: s,
        u: states.iter().map(|y| y[0]).collect(),
        pu: states.iter().map(|y| y[1]).collect(),
        v: states.iter().map(|y| y[2]).collect(),
        pv: states.iter().map(|y| y[3]).collect(),
        r_match: *r.last().unwrap(),
        t,
        r,
        decay: DecayConstants {
            a: f64::NAN,
            b: f64::NAN,
            a_err: 0.0,
            b_err: 0.0,
            case: DecayCase::classify(n, p),
        },
        residual: 0.0,
        uniform_h: Some(h),
    };
    gs.check_monotone()?;
    gs.residual = gs.ode_residual_grid();
    gs.decay = gs.extract_decay()?;
    Ok(gs)
}

impl GroundState {
    /// Assemble a ground state from tabulated data (rows with r > 0 plus V(0)).
    /// Used for table files and synthetic inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn from_table(
        n: usize,
        p: f64,
        q: f64,
        tol: f64,
        v0: f64,
        r: Vec<f64>,
        u: Vec<f64>,
        v: Vec<f64>,
        du: Vec<f64>,
        dv: Vec<f64>,
        decay: DecayConstants,
        r_match: f64,
    ) -> Result<GroundState> {
        let m = r.len();
        if m < 8
            || [u.len(), v.len(), du.len(), dv.len()]
                .iter()
                .any(|&l| l != m)
        {
            return Err(Error::Format(
                "ground-state table columns have inconsistent lengths".into(),
            ));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) || r[0] <= 0.0 {
            return Err(Error::Format(
                "ground-state radii must be positive and increasing".into(),
            ));
        }
        let t: Vec<f64> = r.iter().map(|r| r.ln()).collect();
        let pu = r.iter().zip(&du).map(|(r, d)| r * d).collect();
        let pv = r.iter().zip(&dv).map(|(r, d)| r * d).collect();
        let mut gs = GroundState {
            n,
            p,
            q,
            tol,
            v0,
            t,
            r,
            u,
            v,
            pu,
            pv,
            decay,
            r_match,
            residual: 0.0,
            uniform_h: None,
        };
        gs.residual = gs.ode_residual_grid();
        Ok(gs)
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
    pub fn tol(&self) -> f64 {
        self.tol
    }
    /// V(0); U(0) = 1 by normalization.
    pub fn v0(&self) -> f64 {
        self.v0
    }
    pub fn a(&self) -> f64 {
        self.decay.a
    }
    pub fn b(&self) -> f64 {
        self.decay.b
    }
    pub fn decay(&self) -> DecayConstants {
        self.decay
    }
    pub fn decay_case(&self) -> DecayCase {
        self.decay.case
    }
    pub fn r_match(&self) -> f64 {
        self.r_match
    }
    /// Max-norm ODE residual over the interior of the table.
    pub fn residual(&self) -> f64 {
        self.residual
    }
    /// N/(q+1).
    pub fn alpha_u(&self) -> f64 {
        self.nf() / (self.q + 1.0)
    }
    /// N/(p+1).
    pub fn alpha_v(&self) -> f64 {
        self.nf() / (self.p + 1.0)
    }

    /// Table rows (r, U, V, U', V') including the origin.
    pub fn rows(&self) -> Vec<[f64; 5]> {
        let mut out = vec![[0.0, 1.0, self.v0, 0.0, 0.0]];
        for i in 0..self.r.len() {
            let r = self.r[i];
            out.push([r, self.u[i], self.v[i], self.pu[i] / r, self.pv[i] / r]);
        }
        out
    }

    fn check_monotone(&self) -> Result<()> {
        let ok = self.u.iter().chain(&self.v).all(|&x| x > 0.0)
            && self.pu.iter().chain(&self.pv).all(|&x| x < 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Divergence(
                "profiles are not positive and decreasing".into(),
            ))
        }
    }

    fn ode_residual_grid(&self) -> f64 {
        let Some(h) = self.uniform_h else {
            return self.ode_residual_sampled();
        };
        let nf = self.nf();
        let mut worst: f64 = 0.0;
        for i in 3..self.r.len().saturating_sub(3) {
            let r2 = self.r[i] * self.r[i];
            let dpu = central_derivative(&self.pu, h, i);
            let dpv = central_derivative(&self.pv, h, i);
            let ru = (dpu + (nf - 2.0) * self.pu[i]) / r2 + self.v[i].powf(self.p);
            let rv = (dpv + (nf - 2.0) * self.pv[i]) / r2 + self.u[i].powf(self.q);
            worst = worst.max(ru.abs()).max(rv.abs());
        }
        worst
    }

    /// Residual for non-uniform tables: second differences of U' on the nodes.
    fn ode_residual_sampled(&self) -> f64 {
        let nf = self.nf();
        let mut worst: f64 = 0.0;
        for i in 1..self.r.len().saturating_sub(1) {
            let (tl, tc, tr) = (self.t[i - 1], self.t[i], self.t[i + 1]);
            let d = |f: &[f64]| {
                let (hl, hr) = (tc - tl, tr - tc);
                (f[i + 1] * hl * hl - f[i - 1] * hr * hr + f[i] * (hr * hr - hl * hl))
                    / (hl * hr * (hl + hr))
            };
            let r2 = self.r[i] * self.r[i];
            let ru = (d(&self.pu) + (nf - 2.0) * self.pu[i]) / r2 + self.v[i].max(0.0).powf(self.p);
            let rv = (d(&self.pv) + (nf - 2.0) * self.pv[i]) / r2 + self.u[i].max(0.0).powf(self.q);
            worst = worst.max(ru.abs()).max(rv.abs());
        }
        worst
    }

    /// Far-field decay exponent of U.
    pub fn decay_exponent_u(&self) -> f64 {
        match self.decay.case {
            DecayCase::Sub => (self.nf() - 2.0) * self.p - 2.0,
            _ => self.nf() - 2.0,
        }
    }

    fn correction_exponents(&self) -> (f64, f64) {
        let nf = self.nf();
        let alpha_u = match self.decay.case {
            DecayCase::Super => (nf - 2.0) * self.p - nf,
            DecayCase::Sub => nf - 2.0 - self.decay_exponent_u(),
            DecayCase::Log => 1.0,
        };
        let alpha_v = self.decay_exponent_u() * self.q - nf;
        (alpha_u, alpha_v)
    }

    /// Decay constants by Richardson extrapolation over the tabulated tail.
    pub fn extract_decay(&self) -> Result<DecayConstants> {
        let r3 = self.r_match;
        let r1 = r3 / 4.0;
        if r1 < 20.0 {
            return Err(Error::TailTooShort(format!(
                "r_match={r3} leaves no asymptotic range"
            )));
        }
        let nf = self.nf();
        let (alpha_u, alpha_v) = self.correction_exponents();
        let radii = [r1, 2.0 * r1, r3];
        let fv: Vec<f64> = radii
            .iter()
            .map(|&r| r.powf(nf - 2.0) * self.table_profile(r).v)
            .collect();
        let (b, b_err) = richardson_limit(fv[0], fv[1], fv[2], alpha_v);
        let (a, a_err) = match self.decay.case {
            DecayCase::Log => {
                // r^{N-2} U = a ln r + A + O(r^{-1}): slopes in ln r, then Richardson
                let f: Vec<f64> = radii
                    .iter()
                    .map(|&r| r.powf(nf - 2.0) * self.table_profile(r).u)
                    .collect();
                let s1 = (f[1] - f[0]) / 2f64.ln();
                let s2 = (f[2] - f[1]) / 2f64.ln();
                (s2, (s2 - s1).abs())
            }
            _ => {
                let beta = self.decay_exponent_u();
                let f: Vec<f64> = radii
                    .iter()
                    .map(|&r| r.powf(beta) * self.table_profile(r).u)
                    .collect();
                richardson_limit(f[0], f[1], f[2], alpha_u)
            }
        };
        if !(b > 0.0) || (self.decay.case == DecayCase::Super && !(a > 0.0)) {
            return Err(Error::TailTooShort(format!(
                "non-positive decay constants a={a}, b={b}"
            )));
        }
        Ok(DecayConstants {
            a,
            b,
            a_err,
            b_err,
            case: self.decay.case,
        })
    }

    /// Least-squares slope of ln V against ln r on [r_match/10, r_match].
    pub fn tail_slope(&self) -> f64 {
        let lo = self.r_match / 10.0;
        let pts: Vec<(f64, f64)> = self
            .r
            .iter()
            .zip(&self.v)
            .filter(|(r, _)| **r >= lo)
            .map(|(r, v)| (r.ln(), v.ln()))
            .collect();
        crate::fit::linear_fit(&pts).slope
    }

    /// Both sides of b^p = a((N-2)p-2)(N-(N-2)p), reported only.
    pub fn decay_relation(&self) -> (f64, f64) {
        let nf = self.nf();
        (
            self.b().powf(self.p),
            self.a() * ((nf - 2.0) * self.p - 2.0) * (nf - (nf - 2.0) * self.p),
        )
    }

    fn locate(&self, t: f64) -> usize {
        let m = self.t.len();
        let i = match self.uniform_h {
            Some(h) => ((t - self.t[0]) / h).floor() as isize,
            None => self.t.partition_point(|&x| x <= t) as isize - 1,
        };
        i.clamp(0, m as isize - 2) as usize
    }

    /// Interpolated profile on the tabulated range.
    fn table_profile(&self, r: f64) -> Profile {
        let nf = self.nf();
        let t = r.ln();
        let i = self.locate(t);
        let (ta, tb) = (self.t[i], self.t[i + 1]);
        let h = tb - ta;
        let x = (t - ta) / h;
        let x2 = x * x;
        let x3 = x2 * x;
        let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
        let h10 = x3 - 2.0 * x2 + x;
        let h01 = -2.0 * x3 + 3.0 * x2;
        let h11 = x3 - x2;
        let (ra, rb) = (self.r[i], self.r[i + 1]);
        let herm =
            |fa: f64, ga: f64, fb: f64, gb: f64| h00 * fa + h10 * h * ga + h01 * fb + h11 * h * gb;
        let dpu = |j: usize, rr: f64| {
            -(nf - 2.0) * self.pu[j] - rr * rr * self.v[j].max(0.0).powf(self.p)
        };
        let dpv = |j: usize, rr: f64| {
            -(nf - 2.0) * self.pv[j] - rr * rr * self.u[j].max(0.0).powf(self.q)
        };
        let u = herm(self.u[i], self.pu[i], self.u[i + 1], self.pu[i + 1]);
        let v = herm(self.v[i], self.pv[i], self.v[i + 1], self.pv[i + 1]);
        let pu = herm(self.pu[i], dpu(i, ra), self.pu[i + 1], dpu(i + 1, rb));
        let pv = herm(self.pv[i], dpv(i, ra), self.pv[i + 1], dpv(i + 1, rb));
        self.complete(r, u, v, pu / r, pv / r)
    }

    fn complete(&self, r: f64, u: f64, v: f64, du: f64, dv: f64) -> Profile {
        let nf = self.nf();
        let (d2u, d2v) = if r > 0.0 {
            (
                -v.max(0.0).powf(self.p) - (nf - 1.0) * du / r,
                -u.max(0.0).powf(self.q) - (nf - 1.0) * dv / r,
            )
        } else {
            (-self.v0.powf(self.p) / nf, -1.0 / nf)
        };
        Profile {
            u,
            v,
            du,
            dv,
            d2u,
            d2v,
        }
    }

    fn series_profile(&self, r: f64) -> Profile {
        let [u2, u4, v2, v4] = series_coefficients(self.nf(), self.p, self.q, self.v0);
        let r2 = r * r;
        let u = 1.0 + u2 * r2 + u4 * r2 * r2;
        let v = self.v0 + v2 * r2 + v4 * r2 * r2;
        let du = 2.0 * u2 * r + 4.0 * u4 * r2 * r;
        let dv = 2.0 * v2 * r + 4.0 * v4 * r2 * r;
        if r > 0.0 {
            self.complete(r, u, v, du, dv)
        } else {
            self.complete(0.0, 1.0, self.v0, 0.0, 0.0)
        }
    }

    /// Asymptotic form beyond r_match, matched to the table by continuity.
    fn tail_profile(&self, r: f64) -> Profile {
        let nf = self.nf();
        let rm = self.r_match;
        let m = self.table_profile(rm);
        let (alpha_u, alpha_v) = self.correction_exponents();
        let (a, b) = (self.a(), self.b());
        let s = rm / r;
        // V = r^{2-N}[b + (f(rm) - b) s^alpha]
        let power_law = |beta: f64, lim: f64, f_m: f64, alpha: f64| {
            let c = f_m - lim;
            let val = r.powf(-beta) * (lim + c * s.powf(alpha));
            let d = r.powf(-beta - 1.0) * (-beta * lim - (beta + alpha) * c * s.powf(alpha));
            (val, d)
        };
        let (v, dv) = power_law(nf - 2.0, b, rm.powf(nf - 2.0) * m.v, alpha_v);
        let (u, du) = match self.decay.case {
            DecayCase::Log => {
                let c = rm.powf(nf - 2.0) * m.u - a * rm.ln();
                let val = r.powf(2.0 - nf) * (a * r.ln() + c);
                let d = r.powf(1.0 - nf) * (a - (nf - 2.0) * (a * r.ln() + c));
                (val, d)
            }
            _ => {
                let beta = self.decay_exponent_u();
                power_law(beta, a, rm.powf(beta) * m.u, alpha_u)
            }
        };
        self.complete(r, u, v, du, dv)
    }

    /// U, V and their first two r-derivatives at radius r >= 0.
    pub fn profile(&self, r: f64) -> Profile {
        let r = r.abs();
        if r < self.r[0] {
            self.series_profile(r)
        } else if r <= self.r_match {
            self.table_profile(r)
        } else {
            self.tail_profile(r)
        }
    }

    pub fn u(&self, r: f64) -> f64 {
        self.profile(r).u
    }
    pub fn v(&self, r: f64) -> f64 {
        self.profile(r).v
    }

    /// Scaled bubble as a function of ρ = |y - ξ|: values and ρ-derivatives of
    /// (λ^{N/(q+1)} U(λρ), λ^{N/(p+1)} V(λρ)).
    pub fn bubble_radial(&self, lambda: f64, rho: f64) -> Profile {
        let pr = self.profile(lambda * rho);
        let su = lambda.powf(self.alpha_u());
        let sv = lambda.powf(self.alpha_v());
        Profile {
            u: su * pr.u,
            v: sv * pr.v,
            du: su * lambda * pr.du,
            dv: sv * lambda * pr.dv,
            d2u: su * lambda * lambda * pr.d2u,
            d2v: sv * lambda * lambda * pr.d2v,
        }
    }

    /// Green-representation residuals (for a and b) in the super case.
    pub fn green_consistency(&self) -> Result<(f64, f64)> {
        if self.decay.case != DecayCase::Super {
            return Err(Error::NotSuperCase);
        }
        let nf = self.nf();
        let w = sphere_area(self.n);
        let rmax = self.r_match;
        let int_vp = w * radial_integral(
            |r| self.v(r).max(0.0).powf(self.p),
            nf - 1.0,
            rmax,
            Some((nf - 2.0) * self.p),
        );
        let int_uq = w * radial_integral(
            |r| self.u(r).max(0.0).powf(self.q),
            nf - 1.0,
            rmax,
            Some((nf - 2.0) * self.q),
        );
        let ea = self.a() * (nf - 2.0) * w;
        let eb = self.b() * (nf - 2.0) * w;
        Ok(((ea - int_vp).abs() / ea, (eb - int_uq).abs() / eb))
    }

    /// ∫_{R^N} U^e (or V^e) by radial quadrature with the asymptotic tail.
    pub fn power_integral(&self, which_v: bool, e: f64, moment: f64) -> f64 {
        let nf = self.nf();
        let decay = if which_v {
            nf - 2.0
        } else {
            self.decay_exponent_u()
        };
        let rmax = self.r_match;
        let f = |r: f64| {
            let pr = self.profile(r);
            let x = if which_v { pr.v } else { pr.u };
            x.max(0.0).powf(e)
        };
        sphere_area(self.n) * radial_integral(f, nf - 1.0 + moment, rmax, Some(decay * e))
    }
}

/// Version tag written into ground-state tables.
pub const TABLE_FORMAT_VERSION: u32 = 1;

impl GroundState {
    /// `# key=value` header lines followed by CSV columns r,U,V,dU,dV (r > 0).
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.decay;
        let header = [
            ("format_version", TABLE_FORMAT_VERSION.to_string()),
            ("N", self.n.to_string()),
            ("p", format!("{:.17e}", self.p)),
            ("q", format!("{:.17e}", self.q)),
            ("tol", format!("{:.17e}", self.tol)),
            ("v0", format!("{:.17e}", self.v0)),
            ("a", format!("{:.17e}", d.a)),
            ("b", format!("{:.17e}", d.b)),
            ("a_err", format!("{:.17e}", d.a_err)),
            ("b_err", format!("{:.17e}", d.b_err)),
            ("decay_case", d.case.as_str().to_string()),
            ("r_match", format!("{:.17e}", self.r_match)),
        ];
        for (k, v) in header {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "U", "V", "dU", "dV"])?;
        for row in &self.rows()[1..] {
            w.write_record(row.iter().map(|x| format!("{x:.17e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_table<R: Read>(input: R) -> Result<GroundState> {
        let mut text = String::new();
        BufReader::new(input).read_to_string(&mut text)?;
        let mut meta = std::collections::HashMap::new();
        for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
            if let Some((k, v)) = line.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Format(format!("table header lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("{k}: {e}")))
        };
        let version: u32 = get("format_version")?
            .parse()
            .map_err(|e| Error::Format(format!("format_version: {e}")))?;
        if version != TABLE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported table format_version {version}"
            )));
        }
        let n: usize = get("N")?
            .parse()
            .map_err(|e| Error::Format(format!("N: {e}")))?;
        let case = match get("decay_case")?.as_str() {
            "sub" => DecayCase::Sub,
            "log" => DecayCase::Log,
            "super" => DecayCase::Super,
            other => return Err(Error::Format(format!("unknown decay_case {other}"))),
        };
        let decay = DecayConstants {
            a: num("a")?,
            b: num("b")?,
            a_err: num("a_err")?,
            b_err: num("b_err")?,
            case,
        };
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut cols: [Vec<f64>; 5] = Default::default();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::Format("ground-state rows need 5 columns".into()));
            }
            for (c, s) in cols.iter_mut().zip(rec.iter()) {
                c.push(
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("{e}: {s:?}")))?,
                );
            }
        }
        let [r, u, v, du, dv] = cols;
        GroundState::from_table(
            n,
            num("p")?,
            num("q")?,
            num("tol")?,
            num("v0")?,
            r,
            u,
            v,
            du,
            dv,
            decay,
            num("r_match")?,
        )
    }
}

pub fn extract_decay_constants(gs: &GroundState) -> Result<DecayConstants> {
    gs.extract_decay()
}

pub fn green_consistency(gs: &GroundState) -> Result<(f64, f64)> {
    gs.green_consistency()
}

fn norm_diff(y: &[f64], xi: &[f64]) -> f64 {
    y.iter()
        .zip(xi)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// (U_{ξ,λ}(y), V_{ξ,λ}(y)).
pub fn eval_bubble(gs: &GroundState, xi: &[f64], lambda: f64, y: &[f64]) -> (f64, f64) {
    let b = gs.bubble_radial(lambda, norm_diff(y, xi));
    (b.u, b.v)
}

/// Derivatives of a bubble with respect to its ring radius (Y₁, Z₁) and its
/// concentration (Y₂, Z₂).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubbleDerivatives {
    pub y1: f64,
    pub y2: f64,
    pub z1: f64,
    pub z2: f64,
}

/// The centre moves along ξ/|ξ| when r changes (along e₁ if ξ = 0).
pub fn bubble_derivatives(
    gs: &GroundState,
    xi: &[f64],
    lambda: f64,
    y: &[f64],
) -> BubbleDerivatives {
    let rho = norm_diff(y, xi);
    let xn = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let proj = if rho > 0.0 {
        let dot: f64 = if xn > 0.0 {
            y.iter().zip(xi).map(|(a, b)| (a - b) * b).sum::<f64>() / xn
        } else {
            y[0] - xi[0]
        };
        dot / rho
    } else {
        0.0
    };
    let b = gs.bubble_radial(lambda, rho);
    BubbleDerivatives {
        y1: -b.du * proj,
        y2: (gs.alpha_u() * b.u + rho * b.du) / lambda,
        z1: -b.dv * proj,
        z2: (gs.alpha_v() * b.v + rho * b.dv) / lambda,
    }
}

/// Kernel directions of the linearized limit system: the dilation pair
/// (rU' + N U/(q+1), rV' + N V/(p+1)) and the translation profiles (U', V').
pub struct KernelBasis<'a> {
    gs: &'a GroundState,
}

pub fn kernel_basis(gs: &GroundState) -> KernelBasis<'_> {
    KernelBasis { gs }
}

impl KernelBasis<'_> {
    pub fn dilation(&self, r: f64) -> (f64, f64) {
        let pr = self.gs.profile(r);
        (
            r * pr.du + self.gs.alpha_u() * pr.u,
            r * pr.dv + self.gs.alpha_v() * pr.v,
        )
    }

    pub fn translation(&self, r: f64) -> (f64, f64) {
        let pr = self.gs.profile(r);
        (pr.du, pr.dv)
    }

    /// Tabulation on the ground-state grid: rows (r, Ψ⁰, Φ⁰, Ψ¹, Φ¹).
    pub fn tabulate(&self) -> Vec<[f64; 5]> {
        self.gs
            .rows()
            .iter()
            .map(|row| {
                let (a, b) = self.dilation(row[0]);
                let (c, d) = self.translation(row[0]);
                [row[0], a, b, c, d]
            })
            .collect()
    }
}

/// Angular mode of a radial profile pair: 0 for radial fields, 1 for fields
/// of the form f(r) y_i/r.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngularMode {
    Radial,
    Dipole,
}

/// Max-norm residuals of (-Δψ - pV^{p-1}φ, -Δφ - qU^{q-1}ψ) for the pair
/// (ψ, φ)(r) on the uniform grid r_lo + i·h ⊂ [r_lo, r_hi], second-order
/// central differences.
pub fn linearized_radial_residual(
    gs: &GroundState,
    mode: AngularMode,
    pair: &dyn Fn(f64) -> (f64, f64),
    h: f64,
    r_lo: f64,
    r_hi: f64,
) -> (f64, f64) {
    let nf = gs.nf();
    let ell = match mode {
        AngularMode::Radial => 0.0,
        AngularMode::Dipole => nf - 1.0,
    };
    let m = ((r_hi - r_lo) / h).round() as usize;
    let mut worst = (0.0f64, 0.0f64);
    for i in 1..m {
        let r = r_lo + i as f64 * h;
        let (a0, b0) = pair(r - h);
        let (a1, b1) = pair(r);
        let (a2, b2) = pair(r + h);
        let lap = |f0: f64, f1: f64, f2: f64| {
            (f2 - 2.0 * f1 + f0) / (h * h) + (nf - 1.0) / r * (f2 - f0) / (2.0 * h)
                - ell * f1 / (r * r)
        };
        let pr = gs.profile(r);
        let r1 = -lap(a0, a1, a2) - gs.p * pr.v.powf(gs.p - 1.0) * b1;
        let r2 = -lap(b0, b1, b2) - gs.q * pr.u.powf(gs.q - 1.0) * a1;
        worst.0 = worst.0.max(r1.abs());
        worst.1 = worst.1.max(r2.abs());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelResidual {
    pub h: f64,
    pub dilation: (f64, f64),
    pub translation: (f64, f64),
}

impl KernelResidual {
    pub fn max(&self) -> f64 {
        self.dilation
            .0
            .max(self.dilation.1)
            .max(self.translation.0)
            .max(self.translation.1)
    }
}

/// Kernel residuals on [0.5, 20] with grid spacing h.
pub fn kernel_residual(gs: &GroundState, basis: &KernelBasis<'_>, h: f64) -> KernelResidual {
    let (lo, hi) = (0.5, 20.0);
    KernelResidual {
        h,
        dilation: linearized_radial_residual(
            gs,
            AngularMode::Radial,
            &|r| basis.dilation(r),
            h,
            lo,
            hi,
        ),
        translation: linearized_radial_residual(
            gs,
            AngularMode::Dipole,
            &|r| basis.translation(r),
            h,
            lo,
            hi,
        ),
    }
}
