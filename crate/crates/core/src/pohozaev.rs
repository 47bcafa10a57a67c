//! Local Pohozaev identities for a solution pair (v₁, v₂) of
//! -Δv₁ = K₁v₂^p, -Δv₂ = K₂v₁^q and a linearized pair (ξ₁, ξ₂) of
//! -Δξ₁ = pK₁v₂^{p-1}ξ₂, -Δξ₂ = qK₂v₁^{q-1}ξ₁,
//! evaluated by boundary and volume quadrature on balls, annuli and the
//! sector cell {|θ| <= π/k} ∩ B_R.
//!
//! Translation identity along e_i:
//!   -∮(∂_νv₁∂_iξ₂ + ∂_iv₁∂_νξ₂ + ∂_νv₂∂_iξ₁ + ∂_iv₂∂_νξ₁)
//!   + ∮(∇v₁·∇ξ₂ + ∇v₂·∇ξ₁)ν_i - ∮(K₁v₂^pξ₂ + K₂v₁^qξ₁)ν_i
//!   = -∫(∂_iK₁ v₂^pξ₂ + ∂_iK₂ v₁^qξ₁).
//! Dilation identity about x₀ with X = y - x₀:
//!   ∮(∂_νv₁ X·∇ξ₂ + ∂_νξ₁ X·∇v₂ + ∂_νv₂ X·∇ξ₁ + ∂_νξ₂ X·∇v₁)
//!   - ∮(∇v₁·∇ξ₂ + ∇v₂·∇ξ₁)X·ν + ∮(K₁v₂^pξ₂ + K₂v₁^qξ₁)X·ν
//!   + ∮(N/(p+1)(ξ₂∂_νv₁ + v₂∂_νξ₁) + N/(q+1)(ξ₁∂_νv₂ + v₁∂_νξ₂))
//!   = ∫(X·∇K₁ v₂^pξ₂ + X·∇K₂ v₁^qξ₁).
//!
//! For pairs that solve the systems only up to residuals e, f the difference
//! lhs - rhs equals a volume integral of the residuals; [`PohozaevReport`]
//! carries that defect and its absolute bound.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::ansatz::{BubbleConfig, SampledField};
use crate::config::{hyperbola_defect, Potential, SystemConfig};
use crate::error::{Error, Result};
use crate::ground_state::GroundState;
use crate::quadrature::{gauss_legendre, sphere_area};

/// Values, gradients and Laplacians of a field pair at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldJet {
    pub value: [f64; 2],
    pub grad: [Vec<f64>; 2],
    pub laplacian: [f64; 2],
}

pub trait PairField {
    fn jet(&self, y: &[f64]) -> FieldJet;
}

impl<F: Fn(&[f64]) -> FieldJet> PairField for F {
    fn jet(&self, y: &[f64]) -> FieldJet {
        self(y)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn offset(y: &[f64], c: &[f64]) -> (Vec<f64>, f64) {
    let d: Vec<f64> = y.iter().zip(c).map(|(a, b)| a - b).collect();
    let r = dot(&d, &d).sqrt();
    (d, r)
}

/// Σ_j (U_{c_j,λ}, V_{c_j,λ}).
pub struct BubbleField<'a> {
    pub gs: &'a GroundState,
    pub centers: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl<'a> BubbleField<'a> {
    pub fn new(gs: &'a GroundState, centers: Vec<Vec<f64>>, lambda: f64) -> Self {
        BubbleField {
            gs,
            centers,
            lambda,
        }
    }

    /// The polygon ansatz (W₁, W₂) of a configuration.
    pub fn ansatz(gs: &'a GroundState, cfg: &BubbleConfig) -> Self {
        let centers = cfg
            .centers()
            .iter()
            .map(|c| {
                let mut x = vec![0.0; cfg.n];
                x[..2].copy_from_slice(c);
                x
            })
            .collect();
        BubbleField::new(gs, centers, cfg.lambda)
    }
}

impl PairField for BubbleField<'_> {
    fn jet(&self, y: &[f64]) -> FieldJet {
        let n = y.len();
        let (p, q) = (self.gs.p(), self.gs.q());
        let mut out = FieldJet {
            value: [0.0; 2],
            grad: [vec![0.0; n], vec![0.0; n]],
            laplacian: [0.0; 2],
        };
        for c in &self.centers {
            let (d, rho) = offset(y, c);
            let b = self.gs.bubble_radial(self.lambda, rho);
            out.value[0] += b.u;
            out.value[1] += b.v;
            if rho > 0.0 {
                for i in 0..n {
                    out.grad[0][i] += b.du * d[i] / rho;
                    out.grad[1][i] += b.dv * d[i] / rho;
                }
            }
            out.laplacian[0] -= b.v.powf(p);
            out.laplacian[1] -= b.u.powf(q);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelMode {
    /// λ∂_λ of each bubble.
    Dilation,
    /// Motion of every centre c_j along the given vector d_j.
    Translation(Vec<Vec<f64>>),
}

/// Σ_j of a kernel pair of the linearization at each bubble.
pub struct KernelField<'a> {
    pub bubbles: BubbleField<'a>,
    pub mode: KernelMode,
}

impl<'a> KernelField<'a> {
    pub fn dilation(bubbles: BubbleField<'a>) -> Self {
        KernelField {
            bubbles,
            mode: KernelMode::Dilation,
        }
    }

    /// All centres moved along e_axis.
    pub fn translation(bubbles: BubbleField<'a>, axis: usize) -> Self {
        let n = bubbles.centers.first().map_or(0, |c| c.len());
        let mut e = vec![0.0; n];
        e[axis] = 1.0;
        let dirs = vec![e; bubbles.centers.len()];
        KernelField {
            bubbles,
            mode: KernelMode::Translation(dirs),
        }
    }

    /// Every centre moved radially in the (y₁, y₂) plane.
    pub fn ring(bubbles: BubbleField<'a>) -> Self {
        let dirs = bubbles
            .centers
            .iter()
            .map(|c| {
                let r = c[0].hypot(c[1]);
                let mut e = vec![0.0; c.len()];
                if r > 0.0 {
                    e[0] = c[0] / r;
                    e[1] = c[1] / r;
                } else {
                    e[0] = 1.0;
                }
                e
            })
            .collect();
        KernelField {
            bubbles,
            mode: KernelMode::Translation(dirs),
        }
    }
}

impl PairField for KernelField<'_> {
    fn jet(&self, y: &[f64]) -> FieldJet {
        let n = y.len();
        let gs = self.bubbles.gs;
        let (p, q) = (gs.p(), gs.q());
        let (au, av) = (gs.alpha_u(), gs.alpha_v());
        let mut out = FieldJet {
            value: [0.0; 2],
            grad: [vec![0.0; n], vec![0.0; n]],
            laplacian: [0.0; 2],
        };
        for (j, c) in self.bubbles.centers.iter().enumerate() {
            let (d, rho) = offset(y, c);
            let b = gs.bubble_radial(self.bubbles.lambda, rho);
            let unit: Vec<f64> = if rho > 0.0 {
                d.iter().map(|x| x / rho).collect()
            } else {
                vec![0.0; n]
            };
            match &self.mode {
                KernelMode::Dilation => {
                    let psi = au * b.u + rho * b.du;
                    let phi = av * b.v + rho * b.dv;
                    let dpsi = (au + 1.0) * b.du + rho * b.d2u;
                    let dphi = (av + 1.0) * b.dv + rho * b.d2v;
                    out.value[0] += psi;
                    out.value[1] += phi;
                    for i in 0..n {
                        out.grad[0][i] += dpsi * unit[i];
                        out.grad[1][i] += dphi * unit[i];
                    }
                    out.laplacian[0] -= p * b.v.powf(p - 1.0) * phi;
                    out.laplacian[1] -= q * b.u.powf(q - 1.0) * psi;
                }
                KernelMode::Translation(dirs) => {
                    let e = &dirs[j];
                    let t = dot(&unit, e);
                    out.value[0] -= b.du * t;
                    out.value[1] -= b.dv * t;
                    // U'(ρ)/ρ -> U''(0) at the centre
                    let (su, sv) = if rho > 0.0 {
                        (b.du / rho, b.dv / rho)
                    } else {
                        (b.d2u, b.d2v)
                    };
                    for i in 0..n {
                        out.grad[0][i] -= b.d2u * t * unit[i] + su * (e[i] - t * unit[i]);
                        out.grad[1][i] -= b.d2v * t * unit[i] + sv * (e[i] - t * unit[i]);
                    }
                    out.laplacian[0] += p * b.v.powf(p - 1.0) * b.dv * t;
                    out.laplacian[1] += q * b.u.powf(q - 1.0) * b.du * t;
                }
            }
        }
        out
    }
}

/// Weights of the C¹ cubic Hermite interpolant with three-point slopes on a
/// non-uniform axis: (index, w, w', w'') for the four stencil nodes.
fn hermite_weights(nodes: &[f64], x: f64) -> [(usize, f64, f64, f64); 4] {
    let n = nodes.len();
    let i = match nodes.partition_point(|v| *v <= x) {
        0 => 0,
        k => k - 1,
    }
    .clamp(1, n - 3);
    let slope = |c: usize| {
        let (hm, hp) = (nodes[c] - nodes[c - 1], nodes[c + 1] - nodes[c]);
        [
            -hp / (hm * (hm + hp)),
            (hp - hm) / (hm * hp),
            hm / (hp * (hm + hp)),
        ]
    };
    let h = nodes[i + 1] - nodes[i];
    let t = (x - nodes[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    // Hermite basis and its t-derivatives
    let h00 = [
        2.0 * t3 - 3.0 * t2 + 1.0,
        6.0 * t2 - 6.0 * t,
        12.0 * t - 6.0,
    ];
    let h10 = [t3 - 2.0 * t2 + t, 3.0 * t2 - 4.0 * t + 1.0, 6.0 * t - 4.0];
    let h01 = [-2.0 * t3 + 3.0 * t2, -6.0 * t2 + 6.0 * t, -12.0 * t + 6.0];
    let h11 = [t3 - t2, 3.0 * t2 - 2.0 * t, 6.0 * t - 2.0];
    let (si, sj) = (slope(i), slope(i + 1));
    let mut w = [[0.0; 3]; 4];
    for d in 0..3 {
        let scale = h.powi(-(d as i32));
        w[1][d] += h00[d] * scale;
        w[2][d] += h01[d] * scale;
        for (a, s) in si.iter().enumerate() {
            w[a][d] += h10[d] * h * s * scale;
        }
        for (a, s) in sj.iter().enumerate() {
            w[a + 1][d] += h11[d] * h * s * scale;
        }
    }
    [0, 1, 2, 3].map(|a| (i - 1 + a, w[a][0], w[a][1], w[a][2]))
}

/// An axis with even reflections at the lower (and optionally upper) end.
struct Mirrored {
    nodes: Vec<f64>,
    source: Vec<usize>,
}

impl Mirrored {
    fn new(centers: &[f64], lower: Option<f64>, upper: Option<f64>) -> Self {
        let n = centers.len();
        let mut nodes = Vec::new();
        let mut source = Vec::new();
        if let Some(a) = lower {
            for i in (0..n.min(2)).rev() {
                nodes.push(2.0 * a - centers[i]);
                source.push(i);
            }
        }
        for (i, c) in centers.iter().enumerate() {
            nodes.push(*c);
            source.push(i);
        }
        if let Some(b) = upper {
            for i in (n.saturating_sub(2)..n).rev() {
                nodes.push(2.0 * b - centers[i]);
                source.push(i);
            }
        }
        Mirrored { nodes, source }
    }

    fn weights(&self, x: f64) -> [(usize, f64, f64, f64); 4] {
        hermite_weights(&self.nodes, x).map(|(i, a, b, c)| (self.source[i], a, b, c))
    }
}

/// W + φ with φ interpolated from its values on the symmetry-cell grid.
pub struct GridField<'a> {
    ansatz: Option<BubbleField<'a>>,
    n: usize,
    k: usize,
    shape: (usize, usize, usize),
    rho: Mirrored,
    theta: Mirrored,
    s: Mirrored,
    values: [Vec<f64>; 2],
}

fn unique_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    v
}

impl<'a> GridField<'a> {
    /// `field` holds φ at the cell centres of a tensor grid in (ρ, θ, |y''|);
    /// with `ansatz` set, the bubble sum of that configuration is added.
    pub fn from_sampled(
        field: &SampledField,
        k: usize,
        ansatz: Option<BubbleField<'a>>,
    ) -> Result<Self> {
        let n = field.dim;
        if field.is_empty() || field.values2.is_none() {
            return Err(Error::EmptyField);
        }
        let coords: Vec<[f64; 3]> = (0..field.len())
            .map(|i| {
                let y = field.point(i);
                let s = y[2..].iter().map(|x| x * x).sum::<f64>().sqrt();
                [y[0].hypot(y[1]), y[1].atan2(y[0]), s]
            })
            .collect();
        let rho = unique_sorted(coords.iter().map(|c| c[0]).collect());
        let theta = unique_sorted(coords.iter().map(|c| c[1]).collect());
        let s = unique_sorted(coords.iter().map(|c| c[2]).collect());
        let shape = (rho.len(), theta.len(), s.len());
        if shape.0 * shape.1 * shape.2 != field.len() || shape.0 < 4 || shape.1 < 2 || shape.2 < 4 {
            return Err(Error::Format(
                "samples do not form a tensor grid in (rho, theta, s)".into(),
            ));
        }
        let locate = |axis: &[f64], x: f64| {
            axis.iter()
                .position(|a| (a - x).abs() <= 1e-12 * a.abs().max(1.0))
                .ok_or_else(|| Error::Format("sample off the tensor grid".into()))
        };
        let mut values = [vec![0.0; field.len()], vec![0.0; field.len()]];
        let v2 = field.values2.as_ref().unwrap();
        for (c, co) in coords.iter().enumerate() {
            let idx = (locate(&rho, co[0])? * shape.1 + locate(&theta, co[1])?) * shape.2
                + locate(&s, co[2])?;
            values[0][idx] = field.values1[c];
            values[1][idx] = v2[c];
        }
        let half = PI / k as f64;
        Ok(GridField {
            ansatz,
            n,
            k,
            shape,
            rho: Mirrored::new(&rho, None, None),
            theta: Mirrored::new(&theta, Some(0.0), Some(half)),
            s: Mirrored::new(&s, Some(0.0), None),
            values,
        })
    }
}

impl PairField for GridField<'_> {
    fn jet(&self, y: &[f64]) -> FieldJet {
        let n = self.n;
        let rho = y[0].hypot(y[1]);
        let theta0 = y[1].atan2(y[0]);
        let s = y[2..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let sector = 2.0 * PI / self.k as f64;
        let mut t = theta0.rem_euclid(sector);
        let mut sign = 1.0;
        if t > 0.5 * sector {
            t = sector - t;
            sign = -1.0;
        }
        let (wr, wt, ws) = (
            self.rho.weights(rho),
            self.theta.weights(t),
            self.s.weights(s),
        );
        let mut out = FieldJet {
            value: [0.0; 2],
            grad: [vec![0.0; n], vec![0.0; n]],
            laplacian: [0.0; 2],
        };
        let (ct, st) = (theta0.cos(), theta0.sin());
        for comp in 0..2 {
            let vals = &self.values[comp];
            // f, f_ρ, f_θ, f_s, f_ρρ, f_θθ, f_ss
            let mut d = [0.0; 7];
            for a in &wr {
                for b in &wt {
                    for c in &ws {
                        let f = vals[(a.0 * self.shape.1 + b.0) * self.shape.2 + c.0];
                        d[0] += a.1 * b.1 * c.1 * f;
                        d[1] += a.2 * b.1 * c.1 * f;
                        d[2] += a.1 * b.2 * c.1 * f;
                        d[3] += a.1 * b.1 * c.2 * f;
                        d[4] += a.3 * b.1 * c.1 * f;
                        d[5] += a.1 * b.3 * c.1 * f;
                        d[6] += a.1 * b.1 * c.3 * f;
                    }
                }
            }
            let ft = sign * d[2];
            out.value[comp] = d[0];
            out.grad[comp][0] = d[1] * ct - ft * st / rho;
            out.grad[comp][1] = d[1] * st + ft * ct / rho;
            if s > 0.0 {
                for i in 2..n {
                    out.grad[comp][i] = d[3] * y[i] / s;
                }
            }
            let radial_s = if s > 1e-12 {
                (n as f64 - 3.0) * d[3] / s
            } else {
                (n as f64 - 3.0) * d[6]
            };
            out.laplacian[comp] = d[4] + d[1] / rho + d[5] / (rho * rho) + d[6] + radial_s;
        }
        if let Some(w) = &self.ansatz {
            let j = w.jet(y);
            for comp in 0..2 {
                out.value[comp] += j.value[comp];
                out.laplacian[comp] += j.laplacian[comp];
                for i in 0..n {
                    out.grad[comp][i] += j.grad[comp][i];
                }
            }
        }
        out
    }
}

/// K₁(|y|/μ), K₂(|y|/μ) with the exponents of the system.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub k1: Potential,
    pub k2: Potential,
    pub mu: f64,
}

impl Coefficients {
    pub fn new(config: &SystemConfig, mu: f64) -> Result<Self> {
        let (n, p, q) = (config.n(), config.p(), config.q());
        let nf = n as f64;
        // N/(p+1) + N/(q+1) = N - 2 is what closes the dilation identity
        let gap = nf / (p + 1.0) + nf / (q + 1.0) - (nf - 2.0);
        if gap.abs() > 1e-10 {
            return Err(Error::OffHyperbola {
                defect: hyperbola_defect(n, p, q),
            });
        }
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("mu={mu} must be positive")));
        }
        Ok(Coefficients {
            n,
            p,
            q,
            k1: config.potential1().clone(),
            k2: config.potential2().clone(),
            mu,
        })
    }

    /// (K, ∇K) for both potentials.
    pub fn eval(&self, y: &[f64]) -> ([f64; 2], [Vec<f64>; 2]) {
        let mut grads = [vec![0.0; y.len()], vec![0.0; y.len()]];
        let vals = self.eval_into(y, &mut grads);
        (vals, grads)
    }

    fn eval_into(&self, y: &[f64], grads: &mut [Vec<f64>; 2]) -> [f64; 2] {
        let r = dot(y, y).sqrt();
        let mut vals = [0.0; 2];
        for (i, k) in [&self.k1, &self.k2].into_iter().enumerate() {
            vals[i] = k.value(r / self.mu);
            let d = if r > 0.0 && !k.is_flat() {
                k.derivative(r / self.mu) / (self.mu * r)
            } else {
                0.0
            };
            grads[i].iter_mut().zip(y).for_each(|(g, x)| *g = d * x);
        }
        vals
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PohozaevDomain {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
    /// {y : |θ(y₁, y₂)| <= π/k, |y| <= radius}.
    SectorCell {
        k: usize,
        ring: f64,
        radius: f64,
    },
}

impl PohozaevDomain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("radius must be positive".into()));
        }
        Ok(PohozaevDomain::Ball { center, radius })
    }

    pub fn annulus(center: Vec<f64>, inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner) {
            return Err(Error::InvalidArgument("need 0 < inner < outer".into()));
        }
        Ok(PohozaevDomain::Annulus {
            center,
            inner,
            outer,
        })
    }

    pub fn sector_cell(k: usize, ring: f64, radius: f64) -> Result<Self> {
        if k < 2 || !(radius > 0.0) || !(ring >= 0.0) {
            return Err(Error::InvalidArgument(
                "sector cell needs k >= 2 and a positive radius".into(),
            ));
        }
        Ok(PohozaevDomain::SectorCell { k, ring, radius })
    }

    /// Opening angle of the sector cell.
    pub fn angle(&self) -> Option<f64> {
        match self {
            PohozaevDomain::SectorCell { k, .. } => Some(2.0 * PI / *k as f64),
            _ => None,
        }
    }

    fn with_dim(&self, n: usize) -> Result<Self> {
        let fix = |c: &Vec<f64>| -> Result<Vec<f64>> {
            match c.len() {
                1 if c[0] == 0.0 => Ok(vec![0.0; n]),
                l if l == n => Ok(c.clone()),
                _ => Err(Error::InvalidArgument(format!(
                    "centre has {} coordinates, expected {n}",
                    c.len()
                ))),
            }
        };
        Ok(match self {
            PohozaevDomain::Ball { center, radius } => PohozaevDomain::Ball {
                center: fix(center)?,
                radius: *radius,
            },
            PohozaevDomain::Annulus {
                center,
                inner,
                outer,
            } => PohozaevDomain::Annulus {
                center: fix(center)?,
                inner: *inner,
                outer: *outer,
            },
            d => d.clone(),
        })
    }
}

impl fmt::Display for PohozaevDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            PohozaevDomain::Ball { center, radius } => write!(f, "ball:{}:{radius}", c(center)),
            PohozaevDomain::Annulus {
                center,
                inner,
                outer,
            } => write!(f, "annulus:{}:{inner}:{outer}", c(center)),
            PohozaevDomain::SectorCell { k, ring, radius } => {
                write!(f, "sector:{k}:{ring}:{radius}")
            }
        }
    }
}

/// `ball:C:R`, `annulus:C:R1:R2` or `sector:K:RING:R`, with C a comma list or `0`.
impl FromStr for PohozaevDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number '{t}' in domain '{s}'")))
        };
        let center = |t: &str| t.split(',').map(num).collect::<Result<Vec<f64>>>();
        match parts.as_slice() {
            ["ball", c, r] => PohozaevDomain::ball(center(c)?, num(r)?),
            ["annulus", c, a, b] => PohozaevDomain::annulus(center(c)?, num(a)?, num(b)?),
            ["sector", k, ring, r] => {
                let k = k
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad k in domain '{s}'")))?;
                PohozaevDomain::sector_cell(k, num(ring)?, num(r)?)
            }
            _ => Err(Error::InvalidArgument(format!("unrecognized domain '{s}'"))),
        }
    }
}

/// Panels per unit interval of each quadrature coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PohozaevResolution {
    pub radial_panels: usize,
    pub angular_panels: usize,
    pub order: usize,
}

impl Default for PohozaevResolution {
    fn default() -> Self {
        PohozaevResolution {
            radial_panels: 4,
            angular_panels: 2,
            order: 6,
        }
    }
}

impl PohozaevResolution {
    pub fn refined(&self) -> Self {
        PohozaevResolution {
            radial_panels: 2 * self.radial_panels,
            angular_panels: 2 * self.angular_panels,
            ..*self
        }
    }
}

type Nodes = Vec<(f64, f64)>;

fn panels(a: f64, b: f64, count: usize, order: usize) -> Nodes {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / count as f64;
    let mut out = Vec::with_capacity(count * order);
    for i in 0..count {
        let mid = a + (i as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((mid + 0.5 * h * xi, 0.5 * h * wi));
        }
    }
    out
}

/// Product rule on the unit sphere S^{d-1} ⊂ R^d.
fn sphere_rule(d: usize, res: &PohozaevResolution) -> Vec<(Vec<f64>, f64)> {
    if d == 1 {
        return vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)];
    }
    if d == 2 {
        // periodic trapezoid
        let m = 2 * res.angular_panels * res.order;
        let h = 2.0 * PI / m as f64;
        return (0..m)
            .map(|j| {
                let (s, c) = (h * (j as f64 + 0.5)).sin_cos();
                (vec![c, s], h)
            })
            .collect();
    }
    let inner = sphere_rule(d - 1, res);
    let mut out = Vec::new();
    for (t, wt) in panels(0.0, PI, res.angular_panels, res.order) {
        let (st, ct) = t.sin_cos();
        let w = wt * st.powi(d as i32 - 2);
        for (eta, we) in &inner {
            let mut x = Vec::with_capacity(d);
            x.push(ct);
            x.extend(eta.iter().map(|e| st * e));
            out.push((x, w * we));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Outer,
    Inner,
    /// The flat face θ = +π/k.
    WedgeUpper,
    /// The flat face θ = -π/k.
    WedgeLower,
}

/// Sector-cell points y = τ(cos a (cos θ, sin θ), sin a η): nodes in (a, θ, η)
/// with weight cos a sin^{N-3}a.
fn cap_rule(n: usize, half: f64, res: &PohozaevResolution) -> Vec<(Vec<f64>, f64)> {
    let eta = sphere_rule(n - 2, res);
    let mut out = Vec::new();
    for (a, wa) in panels(0.0, 0.5 * PI, res.angular_panels, res.order) {
        let (sa, ca) = a.sin_cos();
        for (t, wt) in panels(-half, half, res.angular_panels, res.order) {
            let w = wa * wt * ca * sa.powi(n as i32 - 3);
            for (e, we) in &eta {
                let mut x = Vec::with_capacity(n);
                x.push(ca * t.cos());
                x.push(ca * t.sin());
                x.extend(e.iter().map(|v| sa * v));
                out.push((x, w * we));
            }
        }
    }
    out
}

fn radial_panels(a: f64, b: f64, res: &PohozaevResolution) -> Nodes {
    let count = ((b - a) * res.radial_panels as f64).ceil().max(1.0) as usize;
    panels(a, b, count, res.order)
}

/// Calls `f(y, ν, w, face)` for every boundary node.
fn for_each_boundary(
    domain: &PohozaevDomain,
    n: usize,
    res: &PohozaevResolution,
    f: &mut dyn FnMut(&[f64], &[f64], f64, Face),
) {
    let mut y = vec![0.0; n];
    let mut sphere =
        |c: &[f64], r: f64, face: Face, sign: f64, f: &mut dyn FnMut(&[f64], &[f64], f64, Face)| {
            for (x, w) in sphere_rule(n, res) {
                for i in 0..n {
                    y[i] = c[i] + r * x[i];
                }
                let nu: Vec<f64> = x.iter().map(|a| sign * a).collect();
                f(&y, &nu, w * r.powi(n as i32 - 1), face);
            }
        };
    match domain {
        PohozaevDomain::Ball { center, radius } => sphere(center, *radius, Face::Outer, 1.0, f),
        PohozaevDomain::Annulus {
            center,
            inner,
            outer,
        } => {
            sphere(center, *outer, Face::Outer, 1.0, f);
            sphere(center, *inner, Face::Inner, -1.0, f);
        }
        PohozaevDomain::SectorCell { k, radius, .. } => {
            let half = PI / *k as f64;
            let mut y = vec![0.0; n];
            for (x, w) in cap_rule(n, half, res) {
                for i in 0..n {
                    y[i] = radius * x[i];
                }
                f(&y, &x, w * radius.powi(n as i32 - 1), Face::Outer);
            }
            // half-balls in the planes θ = ±π/k: t(cos b e_θ, sin b η)
            let eta = sphere_rule(n - 2, res);
            for (face, th) in [(Face::WedgeUpper, half), (Face::WedgeLower, -half)] {
                let e = [th.cos(), th.sin()];
                let sgn = th.signum();
                let mut normal = vec![0.0; n];
                normal[0] = -sgn * e[1];
                normal[1] = sgn * e[0];
                for (t, wt) in radial_panels(0.0, *radius, res) {
                    for (b, wb) in panels(0.0, 0.5 * PI, res.angular_panels, res.order) {
                        let (sb, cb) = b.sin_cos();
                        let w = wt * wb * t.powi(n as i32 - 2) * sb.powi(n as i32 - 3);
                        for (et, we) in &eta {
                            y[0] = t * cb * e[0];
                            y[1] = t * cb * e[1];
                            for i in 2..n {
                                y[i] = t * sb * et[i - 2];
                            }
                            f(&y, &normal, w * we, face);
                        }
                    }
                }
            }
        }
    }
}

/// Calls `f(y, w)` for every volume node.
fn for_each_volume(
    domain: &PohozaevDomain,
    n: usize,
    res: &PohozaevResolution,
    f: &mut dyn FnMut(&[f64], f64),
) {
    let mut y = vec![0.0; n];
    let mut shell = |c: &[f64], a: f64, b: f64, dirs: &[(Vec<f64>, f64)]| {
        for (t, wt) in radial_panels(a, b, res) {
            let wr = wt * t.powi(n as i32 - 1);
            for (x, w) in dirs {
                for i in 0..n {
                    y[i] = c[i] + t * x[i];
                }
                f(&y, wr * w);
            }
        }
    };
    match domain {
        PohozaevDomain::Ball { center, radius } => {
            shell(center, 0.0, *radius, &sphere_rule(n, res))
        }
        PohozaevDomain::Annulus {
            center,
            inner,
            outer,
        } => shell(center, *inner, *outer, &sphere_rule(n, res)),
        PohozaevDomain::SectorCell { k, radius, .. } => shell(
            &vec![0.0; n],
            0.0,
            *radius,
            &cap_rule(n, PI / *k as f64, res),
        ),
    }
}

/// Value and two-level error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// ∮ g(y, ν, face) dS.
pub fn boundary_quadrature(
    domain: &PohozaevDomain,
    n: usize,
    res: &PohozaevResolution,
    mut g: impl FnMut(&[f64], &[f64], Face) -> f64,
) -> Result<Estimate> {
    let domain = domain.with_dim(n)?;
    let mut level = |r: &PohozaevResolution| -> Result<f64> {
        let mut s = 0.0;
        let mut bad = None;
        for_each_boundary(&domain, n, r, &mut |y, nu, w, face| {
            let v = g(y, nu, face);
            if !v.is_finite() && bad.is_none() {
                bad = Some(format!("{y:?}"));
            }
            s += w * v;
        });
        match bad {
            Some(at) => Err(Error::NonFinite(at)),
            None => Ok(s),
        }
    };
    let coarse = level(res)?;
    let fine = level(&res.refined())?;
    Ok(Estimate {
        value: fine,
        error: (fine - coarse).abs(),
    })
}

/// One named contribution to either side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    pub face: Option<Face>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PohozaevReport {
    pub identity: String,
    pub domain: PohozaevDomain,
    pub lhs: f64,
    pub rhs: f64,
    /// |lhs - rhs|.
    pub residual: f64,
    pub quadrature_error: f64,
    pub lhs_terms: Vec<Term>,
    pub rhs_terms: Vec<Term>,
    /// The volume integral of the system residuals that lhs - rhs must equal.
    pub defect: f64,
    /// Its absolute-value bound ∫|residual|·|weight|.
    pub defect_bound: f64,
}

impl PohozaevReport {
    pub fn term(&self, name: &str, face: Option<Face>) -> f64 {
        self.lhs_terms
            .iter()
            .chain(&self.rhs_terms)
            .filter(|t| t.name == name && (face.is_none() || t.face == face))
            .map(|t| t.value)
            .sum()
    }
}

#[derive(Clone, Copy)]
enum Identity<'a> {
    Translation(usize),
    Dilation(&'a [f64]),
}

const TERMS: [&str; 4] = [
    "normal_cross",
    "gradient_flux",
    "potential_flux",
    "exponent_flux",
];
const FACES: [Face; 4] = [Face::Outer, Face::Inner, Face::WedgeUpper, Face::WedgeLower];

struct Accum {
    /// Indexed by term, then face; None until a node contributes.
    lhs: [[Option<f64>; 4]; 4],
    rhs: f64,
    defect: f64,
    bound: f64,
}

impl Accum {
    fn add(&mut self, term: usize, face: Face, v: f64) {
        let f = FACES.iter().position(|x| *x == face).unwrap_or(0);
        *self.lhs[term][f].get_or_insert(0.0) += v;
    }

    fn lhs_sum(&self) -> f64 {
        self.lhs.iter().flatten().flatten().sum()
    }

    fn lhs_scale(&self) -> f64 {
        self.lhs.iter().flatten().flatten().map(|v| v.abs()).sum()
    }

    fn terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        for (t, row) in self.lhs.iter().enumerate() {
            for (f, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    out.push(Term {
                        name: TERMS[t].to_string(),
                        face: Some(FACES[f]),
                        value: *v,
                    });
                }
            }
        }
        out
    }
}

fn evaluate(
    v: &dyn PairField,
    xi: &dyn PairField,
    coef: &Coefficients,
    domain: &PohozaevDomain,
    id: Identity<'_>,
    res: &PohozaevResolution,
) -> Result<Accum> {
    let n = coef.n;
    let (p, q) = (coef.p, coef.q);
    let nf = n as f64;
    let (cp, cq) = (nf / (p + 1.0), nf / (q + 1.0));
    let mut acc = Accum {
        lhs: [[None; 4]; 4],
        rhs: 0.0,
        defect: 0.0,
        bound: 0.0,
    };
    let mut kg = [vec![0.0; n], vec![0.0; n]];
    let mut xv = vec![0.0; n];
    let mut bad: Option<String> = None;
    let mut check = |x: f64, y: &[f64]| {
        if !x.is_finite() && bad.is_none() {
            bad = Some(format!("{y:?}"));
        }
        x
    };
    for_each_boundary(domain, n, res, &mut |y, nu, w, f| {
        let a = v.jet(y);
        let b = xi.jet(y);
        let kv = coef.eval_into(y, &mut kg);
        let dn = |g: &[f64]| dot(g, nu);
        let source = kv[0] * a.value[1].max(0.0).powf(p) * b.value[1]
            + kv[1] * a.value[0].max(0.0).powf(q) * b.value[0];
        let cross = dot(&a.grad[0], &b.grad[1]) + dot(&a.grad[1], &b.grad[0]);
        match id {
            Identity::Translation(i) => {
                let t = -(dn(&a.grad[0]) * b.grad[1][i]
                    + a.grad[0][i] * dn(&b.grad[1])
                    + dn(&a.grad[1]) * b.grad[0][i]
                    + a.grad[1][i] * dn(&b.grad[0]));
                acc.add(0, f, w * check(t, y));
                acc.add(1, f, w * check(cross * nu[i], y));
                acc.add(2, f, -w * check(source * nu[i], y));
            }
            Identity::Dilation(x0) => {
                xv.iter_mut()
                    .zip(y.iter().zip(x0))
                    .for_each(|(x, (s, t))| *x = s - t);
                let xn = dot(&xv, nu);
                let t = dn(&a.grad[0]) * dot(&xv, &b.grad[1])
                    + dn(&b.grad[0]) * dot(&xv, &a.grad[1])
                    + dn(&a.grad[1]) * dot(&xv, &b.grad[0])
                    + dn(&b.grad[1]) * dot(&xv, &a.grad[0]);
                acc.add(0, f, w * check(t, y));
                acc.add(1, f, -w * check(cross * xn, y));
                acc.add(2, f, w * check(source * xn, y));
                let e = cp * (b.value[1] * dn(&a.grad[0]) + a.value[1] * dn(&b.grad[0]))
                    + cq * (b.value[0] * dn(&a.grad[1]) + a.value[0] * dn(&b.grad[1]));
                acc.add(3, f, w * check(e, y));
            }
        }
    });
    for_each_volume(domain, n, res, &mut |y, w| {
        let a = v.jet(y);
        let b = xi.jet(y);
        let kv = coef.eval_into(y, &mut kg);
        let (v1, v2) = (a.value[0].max(0.0), a.value[1].max(0.0));
        let (v2p1, v1q1) = (v2.powf(p - 1.0), v1.powf(q - 1.0));
        let (v2p, v1q) = (v2 * v2p1, v1 * v1q1);
        let (s1, s2) = (v2p * b.value[1], v1q * b.value[0]);
        // e = -Δv - Kv^p, f = -Δξ - pKv^{p-1}ξ
        let e1 = -a.laplacian[0] - kv[0] * v2p;
        let e2 = -a.laplacian[1] - kv[1] * v1q;
        let f1 = -b.laplacian[0] - p * kv[0] * v2p1 * b.value[1];
        let f2 = -b.laplacian[1] - q * kv[1] * v1q1 * b.value[0];
        let (rhs, terms) = match id {
            Identity::Translation(i) => (
                -(kg[0][i] * s1 + kg[1][i] * s2),
                [b.grad[1][i], a.grad[1][i], b.grad[0][i], a.grad[0][i]],
            ),
            Identity::Dilation(x0) => {
                xv.iter_mut()
                    .zip(y.iter().zip(x0))
                    .for_each(|(x, (s, t))| *x = s - t);
                (
                    dot(&kg[0], &xv) * s1 + dot(&kg[1], &xv) * s2,
                    [
                        -(dot(&xv, &b.grad[1]) + cp * b.value[1]),
                        -(dot(&xv, &a.grad[1]) + cp * a.value[1]),
                        -(dot(&xv, &b.grad[0]) + cq * b.value[0]),
                        -(dot(&xv, &a.grad[0]) + cq * a.value[0]),
                    ],
                )
            }
        };
        let res_terms = [e1, f1, e2, f2];
        acc.rhs += w * check(rhs, y);
        for (r, t) in res_terms.iter().zip(terms) {
            acc.defect += w * check(r * t, y);
            acc.bound += w * (r * t).abs();
        }
    });
    match bad {
        Some(at) => Err(Error::NonFinite(at)),
        None => Ok(acc),
    }
}

fn report(
    v: &dyn PairField,
    xi: &dyn PairField,
    coef: &Coefficients,
    domain: &PohozaevDomain,
    id: Identity<'_>,
    res: &PohozaevResolution,
) -> Result<PohozaevReport> {
    let domain = domain.with_dim(coef.n)?;
    let coarse = evaluate(v, xi, coef, &domain, id, res)?;
    let fine = evaluate(v, xi, coef, &domain, id, &res.refined())?;
    let (lhs, rhs) = (fine.lhs_sum(), fine.rhs);
    let err = (lhs - coarse.lhs_sum()).abs().max((rhs - coarse.rhs).abs());
    let scale = fine.lhs_scale() + rhs.abs();
    if err > 1e-2 * scale && err > 1e-12 {
        return Err(Error::QuadratureNotConverged(format!(
            "two-level difference {err:.3e} against term scale {scale:.3e}"
        )));
    }
    let name = match id {
        Identity::Translation(i) => format!("translation_{}", i + 1),
        Identity::Dilation(_) => "dilation".to_string(),
    };
    Ok(PohozaevReport {
        identity: name,
        domain,
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        quadrature_error: err,
        lhs_terms: fine.terms(),
        rhs_terms: vec![Term {
            name: "potential_gradient".into(),
            face: None,
            value: rhs,
        }],
        defect: fine.defect,
        defect_bound: fine.bound,
    })
}

/// The translation identity along axis `axis` (0-based).
pub fn pohozaev_translation(
    v: &dyn PairField,
    xi: &dyn PairField,
    coef: &Coefficients,
    domain: &PohozaevDomain,
    axis: usize,
    res: &PohozaevResolution,
) -> Result<PohozaevReport> {
    if axis >= coef.n {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    report(v, xi, coef, domain, Identity::Translation(axis), res)
}

/// The dilation identity about x₀.
pub fn pohozaev_dilation(
    v: &dyn PairField,
    xi: &dyn PairField,
    coef: &Coefficients,
    domain: &PohozaevDomain,
    x0: &[f64],
    res: &PohozaevResolution,
) -> Result<PohozaevReport> {
    if x0.len() != coef.n {
        return Err(Error::InvalidArgument("x0 has the wrong dimension".into()));
    }
    report(v, xi, coef, domain, Identity::Dilation(x0), res)
}

/// Surface area of the sphere of radius r in R^n, for checks.
pub fn sphere_surface(n: usize, r: f64) -> f64 {
    sphere_area(n) * r.powi(n as i32 - 1)
}
