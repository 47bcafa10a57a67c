//! Polygonal bubble configurations, the ansatz (W₁, W₂), sampled fields, the
//! weighted sup-norms and the symmetry class of fields invariant under the
//! 2π/k rotation of the (y₁, y₂) plane and even in y₂, …, y_N.
//!
//! Every field built from bubbles centred in the first plane depends on
//! y'' = (y₃, …, y_N) only through s = |y''|, so evaluation works in the
//! reduced coordinates (y₁, y₂, s).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::{scaling_parameter, SystemConfig};
use crate::error::{Error, Result};
use crate::ground_state::{GroundState, Profile};

pub const DEFAULT_L0: f64 = 0.2;
pub const DEFAULT_L1: f64 = 5.0;
pub const DEFAULT_THETA_BAR: f64 = 0.1;
pub const DEFAULT_ETA_BAR: f64 = 0.05;

/// Exponents of the weighted norms: σ̄ = (N-2)/2 + τ, τ = 1 + η̄.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub eta: f64,
    pub tau: f64,
    pub sigma: f64,
}

impl NormParams {
    pub fn new(n: usize, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eta={eta} must be positive"
            )));
        }
        let tau = 1.0 + eta;
        Ok(NormParams {
            eta,
            tau,
            sigma: (n as f64 - 2.0) / 2.0 + tau,
        })
    }

    pub fn default_for(n: usize) -> Self {
        NormParams::new(n, DEFAULT_ETA_BAR).expect("default eta is positive")
    }
}

/// Reduced coordinates (y₁, y₂, |y''|) of a point in R^N.
pub fn reduce_point(y: &[f64]) -> [f64; 3] {
    let s = y[2..].iter().map(|x| x * x).sum::<f64>().sqrt();
    [y[0], y[1], s]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleConfig {
    pub n: usize,
    pub k: usize,
    pub r: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl BubbleConfig {
    pub fn new(n: usize, k: usize, r: f64, lambda: f64, mu: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(r >= 0.0 && r.is_finite()) || !(lambda > 0.0) || !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid bubble data r={r}, lambda={lambda}, mu={mu}"
            )));
        }
        if n < 3 {
            return Err(Error::DimensionTooSmall(n));
        }
        Ok(BubbleConfig {
            n,
            k,
            r,
            lambda,
            mu,
        })
    }

    /// k bubbles on the ring r = μ r₀ of the configured potentials.
    pub fn at_well(config: &SystemConfig, k: usize, lambda: f64) -> Result<Self> {
        let m = config
            .m()
            .ok_or_else(|| Error::InvalidArgument("no windowed potential configured".into()))?;
        let r0 = config.r0().expect("windowed potential has r0");
        let mu = scaling_parameter(k, config.n(), m)?;
        BubbleConfig::new(config.n(), k, mu * r0, lambda, mu)
    }

    /// Warnings for (r, λ) outside the reduction window.
    pub fn window_warnings(
        &self,
        r0: Option<f64>,
        theta_bar: f64,
        l0: f64,
        l1: f64,
    ) -> Vec<String> {
        let mut w = Vec::new();
        if let Some(r0) = r0 {
            let dev = (self.r - self.mu * r0).abs();
            let allowed = self.mu.powf(-theta_bar);
            if dev > allowed {
                w.push(format!(
                    "|r - mu r0| = {dev:.3e} exceeds mu^-theta = {allowed:.3e}"
                ));
            }
        }
        if self.lambda < l0 || self.lambda > l1 {
            w.push(format!("lambda = {} outside [{l0}, {l1}]", self.lambda));
        }
        w
    }

    /// Centres in the first plane.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.k)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / self.k as f64;
                [self.r * a.cos(), self.r * a.sin()]
            })
            .collect()
    }

    /// |x₂ - x₁| = 2r sin(π/k), or +∞ for a single bubble.
    pub fn min_separation(&self) -> f64 {
        if self.k == 1 {
            f64::INFINITY
        } else {
            2.0 * self.r * (PI / self.k as f64).sin()
        }
    }
}

/// x_j = (r cos(2(j-1)π/k), r sin(2(j-1)π/k), 0, …).
pub fn polygon_points(k: usize, r: f64, n: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 || !(r > 0.0) || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "polygon needs k >= 1, r > 0 (k={k}, r={r})"
        )));
    }
    Ok((0..k)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / k as f64;
            let mut x = vec![0.0; n];
            x[0] = r * a.cos();
            x[1] = r * a.sin();
            x
        })
        .collect())
}

/// The ansatz with its centres precomputed.
pub struct Ansatz<'a> {
    pub gs: &'a GroundState,
    pub cfg: BubbleConfig,
    centers: Vec<[f64; 2]>,
}

impl<'a> Ansatz<'a> {
    pub fn new(gs: &'a GroundState, cfg: &BubbleConfig) -> Self {
        Ansatz {
            gs,
            cfg: cfg.clone(),
            centers: cfg.centers(),
        }
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    /// Distance from reduced point z to centre j.
    pub fn distance(&self, j: usize, z: &[f64; 3]) -> f64 {
        let c = self.centers[j];
        ((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2) + z[2] * z[2]).sqrt()
    }

    /// Calls `f(j, ρ_j, bubble profile)` for every centre.
    pub fn for_each_bubble(&self, z: &[f64; 3], mut f: impl FnMut(usize, f64, &Profile)) {
        for j in 0..self.centers.len() {
            let rho = self.distance(j, z);
            let b = self.gs.bubble_radial(self.cfg.lambda, rho);
            f(j, rho, &b);
        }
    }

    /// (W₁, W₂) at a reduced point.
    pub fn eval_reduced(&self, z: &[f64; 3]) -> (f64, f64) {
        let (mut w1, mut w2) = (0.0, 0.0);
        self.for_each_bubble(z, |_, _, b| {
            w1 += b.u;
            w2 += b.v;
        });
        (w1, w2)
    }

    pub fn eval(&self, y: &[f64]) -> (f64, f64) {
        self.eval_reduced(&reduce_point(y))
    }

    /// Values and reduced gradients (∂₁, ∂₂, ∂_s) of W₁ and W₂.
    pub fn jet_reduced(&self, z: &[f64; 3]) -> ((f64, [f64; 3]), (f64, [f64; 3])) {
        let mut a = (0.0, [0.0; 3]);
        let mut b = (0.0, [0.0; 3]);
        for (j, c) in self.centers.iter().enumerate() {
            let d = [z[0] - c[0], z[1] - c[1], z[2]];
            let rho = self.distance(j, z);
            let p = self.gs.bubble_radial(self.cfg.lambda, rho);
            a.0 += p.u;
            b.0 += p.v;
            if rho > 0.0 {
                for i in 0..3 {
                    a.1[i] += p.du * d[i] / rho;
                    b.1[i] += p.dv * d[i] / rho;
                }
            }
        }
        (a, b)
    }

    /// Σ_j (1 + |y - x_j|)^{-exponent}.
    pub fn weight(&self, z: &[f64; 3], exponent: f64) -> f64 {
        (0..self.centers.len())
            .map(|j| (1.0 + self.distance(j, z)).powf(-exponent))
            .sum()
    }
}

pub fn eval_ansatz(gs: &GroundState, cfg: &BubbleConfig, y: &[f64]) -> (f64, f64) {
    Ansatz::new(gs, cfg).eval(y)
}

/// Samples of a scalar or pair-valued field on points of R^N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledField {
    pub dim: usize,
    /// Row-major coordinates, `dim` per point.
    pub points: Vec<f64>,
    pub values1: Vec<f64>,
    pub values2: Option<Vec<f64>>,
    /// The point set is closed under the symmetry group.
    pub symmetric: bool,
    pub source: Option<BubbleConfig>,
}

impl SampledField {
    pub fn new(
        dim: usize,
        points: Vec<f64>,
        values1: Vec<f64>,
        values2: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = values1.len();
        if dim == 0 || points.len() != n * dim || values2.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::Format(
                "sampled field dimensions do not match".into(),
            ));
        }
        if values1
            .iter()
            .chain(values2.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("sampled field values".into()));
        }
        Ok(SampledField {
            dim,
            points,
            values1,
            values2,
            symmetric: false,
            source: None,
        })
    }

    /// Samples `f` at the given points.
    pub fn from_fn(
        dim: usize,
        points: &[Vec<f64>],
        f: impl Fn(&[f64]) -> (f64, Option<f64>),
    ) -> Result<Self> {
        let mut flat = Vec::with_capacity(points.len() * dim);
        let mut v1 = Vec::with_capacity(points.len());
        let mut v2 = Vec::with_capacity(points.len());
        let mut pair = true;
        for p in points {
            flat.extend_from_slice(p);
            let (a, b) = f(p);
            v1.push(a);
            match b {
                Some(b) => v2.push(b),
                None => pair = false,
            }
        }
        SampledField::new(
            dim,
            flat,
            v1,
            if pair && !points.is_empty() {
                Some(v2)
            } else {
                None
            },
        )
    }

    pub fn len(&self) -> usize {
        self.values1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values1.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn with_source(mut self, cfg: &BubbleConfig) -> Self {
        self.source = Some(cfg.clone());
        self
    }

    /// Pointwise linear combination a·self + b·other on the same points.
    pub fn combine(&self, a: f64, other: &SampledField, b: f64) -> Result<SampledField> {
        if other.points != self.points {
            return Err(Error::InvalidArgument(
                "fields live on different points".into(),
            ));
        }
        let lin = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y)
                .map(|(x, y)| a * x + b * y)
                .collect::<Vec<_>>()
        };
        let v2 = match (&self.values2, &other.values2) {
            (Some(x), Some(y)) => Some(lin(x, y)),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidArgument(
                    "mixing scalar and pair fields".into(),
                ))
            }
        };
        let mut out = SampledField::new(
            self.dim,
            self.points.clone(),
            lin(&self.values1, &other.values1),
            v2,
        )?;
        out.symmetric = self.symmetric && other.symmetric;
        out.source = self.source.clone();
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> SampledField {
        let mut out = self.clone();
        out.values1.iter_mut().for_each(|v| *v *= c);
        if let Some(v) = out.values2.as_mut() {
            v.iter_mut().for_each(|v| *v *= c);
        }
        out
    }

    /// CSV with columns y1..yN, value1[, value2]; lines starting with '#' are comments.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("y{i}")).collect();
        header.push("value1".into());
        if self.values2.is_some() {
            header.push("value2".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.point(i).iter().map(|x| format!("{x:.17e}")).collect();
            rec.push(format!("{:.17e}", self.values1[i]));
            if let Some(v) = &self.values2 {
                rec.push(format!("{:.17e}", v[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<SampledField> {
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let header = rd.headers()?.clone();
        let dim = header.iter().filter(|h| h.starts_with('y')).count();
        let pair = header.iter().any(|h| h == "value2");
        if dim == 0 || header.len() != dim + 1 + pair as usize {
            return Err(Error::Format(format!("unexpected field header {header:?}")));
        }
        let (mut pts, mut v1, mut v2) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("{e}: {s:?}")))
                })
                .collect::<Result<_>>()?;
            if nums.len() != header.len() {
                return Err(Error::Format("ragged field row".into()));
            }
            pts.extend_from_slice(&nums[..dim]);
            v1.push(nums[dim]);
            if pair {
                v2.push(nums[dim + 1]);
            }
        }
        SampledField::new(dim, pts, v1, if pair { Some(v2) } else { None })
    }
}

/// Weighted sup of one component and the index attaining it.
fn weighted_sup(
    field: &SampledField,
    centers: &[[f64; 2]],
    exponent: f64,
    values: &[f64],
) -> (f64, usize) {
    let mut best = (0.0, 0usize);
    for (i, v) in values.iter().enumerate() {
        let z = reduce_point(field.point(i));
        let w: f64 = centers
            .iter()
            .map(|c| {
                (1.0 + ((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2) + z[2] * z[2]).sqrt())
                    .powf(-exponent)
            })
            .sum();
        let ratio = v.abs() / w;
        if ratio > best.0 {
            best = (ratio, i);
        }
    }
    best
}

/// Norm value with the sample index attaining it, per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub value: f64,
    pub component1: f64,
    pub component2: f64,
    pub argmax1: usize,
    pub argmax2: usize,
}

fn weighted_norm(field: &SampledField, cfg: &BubbleConfig, exponent: f64) -> Result<NormReport> {
    if field.is_empty() {
        return Err(Error::EmptyField);
    }
    let centers = cfg.centers();
    let (c1, a1) = weighted_sup(field, &centers, exponent, &field.values1);
    let (c2, a2) = match &field.values2 {
        Some(v) => weighted_sup(field, &centers, exponent, v),
        None => (0.0, 0),
    };
    Ok(NormReport {
        value: c1 + c2,
        component1: c1,
        component2: c2,
        argmax1: a1,
        argmax2: a2,
    })
}

/// ‖u‖_* (sum of the component norms for pair fields).
pub fn weighted_norm_star(
    field: &SampledField,
    cfg: &BubbleConfig,
    np: &NormParams,
) -> Result<f64> {
    Ok(weighted_norm(field, cfg, np.sigma)?.value)
}

/// ‖f‖_** (exponent σ̄ + 2).
pub fn weighted_norm_dstar(
    field: &SampledField,
    cfg: &BubbleConfig,
    np: &NormParams,
) -> Result<f64> {
    Ok(weighted_norm(field, cfg, np.sigma + 2.0)?.value)
}

pub fn weighted_norm_star_report(
    field: &SampledField,
    cfg: &BubbleConfig,
    np: &NormParams,
) -> Result<NormReport> {
    weighted_norm(field, cfg, np.sigma)
}

pub fn weighted_norm_dstar_report(
    field: &SampledField,
    cfg: &BubbleConfig,
    np: &NormParams,
) -> Result<NormReport> {
    weighted_norm(field, cfg, np.sigma + 2.0)
}

/// Generators of the symmetry group acting on R^N: the 2π/k rotation of the
/// first plane and the sign flips of y₂, …, y_N.
pub fn group_generators(k: usize, n: usize) -> Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> {
    let mut gens: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> = Vec::new();
    let a = 2.0 * PI / k as f64;
    let (c, s) = (a.cos(), a.sin());
    gens.push(Box::new(move |y: &[f64]| {
        let mut z = y.to_vec();
        z[0] = c * y[0] - s * y[1];
        z[1] = s * y[0] + c * y[1];
        z
    }));
    for h in 1..n {
        gens.push(Box::new(move |y: &[f64]| {
            let mut z = y.to_vec();
            z[h] = -z[h];
            z
        }));
    }
    gens
}

fn point_key(y: &[f64]) -> Vec<i64> {
    y.iter().map(|x| (x * 1e8).round() as i64).collect()
}

/// Orbit closure of a point set under the symmetry group.
pub fn symmetric_closure(points: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = points.first().map_or(0, |p| p.len());
    let gens = group_generators(k, n);
    let mut seen: HashMap<Vec<i64>, ()> = HashMap::new();
    let mut out = Vec::new();
    let mut stack: Vec<Vec<f64>> = points.to_vec();
    while let Some(p) = stack.pop() {
        if seen.insert(point_key(&p), ()).is_some() {
            continue;
        }
        for g in &gens {
            stack.push(g(&p));
        }
        out.push(p);
    }
    out
}

/// max over generators g and samples y of |u(g·y) - u(y)|.
pub fn check_symmetry(field: &SampledField, k: usize) -> Result<f64> {
    if field.is_empty() {
        return Err(Error::EmptyField);
    }
    let index: HashMap<Vec<i64>, usize> = (0..field.len())
        .map(|i| (point_key(field.point(i)), i))
        .collect();
    let gens = group_generators(k, field.dim);
    let mut defect: f64 = 0.0;
    for i in 0..field.len() {
        for g in &gens {
            let img = g(field.point(i));
            let Some(&j) = index.get(&point_key(&img)) else {
                return Err(Error::NotGroupClosed(format!(
                    "image of sample {i} is missing"
                )));
            };
            defect = defect.max((field.values1[j] - field.values1[i]).abs());
            if let Some(v) = &field.values2 {
                defect = defect.max((v[j] - v[i]).abs());
            }
        }
    }
    Ok(defect)
}

/// The structured sample set used for sup-norms, in the fundamental domain
/// 0 <= θ <= π/k, y₂ >= 0, y'' = (s, 0, …):
/// log-radial shells around x₁, the bisector ray between x₁ and x₂ and a
/// coarse far-field lattice out to 10μ.
pub fn sample_points(cfg: &BubbleConfig) -> Vec<Vec<f64>> {
    let n = cfg.n;
    let kf = cfg.k as f64;
    let half = PI / kf;
    let far = 10.0 * cfg.mu.max(cfg.r).max(1.0);
    let in_domain = |z: &[f64; 3]| {
        let th = z[1].atan2(z[0]);
        z[1] >= -1e-12 && th <= half + 1e-12 && th >= -1e-12
    };
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let shell_max = if cfg.k == 1 {
        far
    } else {
        0.5 * cfg.min_separation()
    };
    let shell_min = 0.02 / cfg.lambda;
    let nr = 28;
    let mut radii = vec![0.0];
    for i in 0..nr {
        radii.push(shell_min * (shell_max / shell_min).powf(i as f64 / (nr - 1) as f64));
    }
    let x1 = [cfg.r, 0.0];
    for &rho in &radii {
        for ia in 0..=12 {
            let a = PI * ia as f64 / 12.0;
            for ib in 0..=4 {
                let b = 0.5 * PI * ib as f64 / 4.0;
                let z = [
                    x1[0] + rho * a.cos(),
                    rho * a.sin() * b.cos(),
                    rho * a.sin() * b.sin(),
                ];
                if in_domain(&z) {
                    pts.push(z);
                }
                if rho == 0.0 {
                    break;
                }
            }
            if rho == 0.0 {
                break;
            }
        }
    }
    if cfg.k > 1 {
        let (c, s) = (half.cos(), half.sin());
        for i in 0..=40 {
            let t = 2.0 * cfg.r * i as f64 / 40.0;
            for &h in &[0.0, 1.0, 3.0] {
                pts.push([t * c, t * s, h]);
            }
        }
        for i in 0..=20 {
            // segment from x₁ to the midpoint of x₁x₂
            let m = [
                0.5 * (cfg.r + cfg.r * (2.0 * half).cos()),
                0.5 * cfg.r * (2.0 * half).sin(),
            ];
            let t = i as f64 / 20.0;
            pts.push([x1[0] + t * (m[0] - x1[0]), t * m[1], 0.0]);
        }
    }
    let mut lat = vec![0.0];
    for i in 0..16 {
        lat.push((far).powf(i as f64 / 15.0));
    }
    for &rr in &lat {
        for &s in &lat {
            for it in 0..=2 {
                let th = half * it as f64 / 2.0;
                pts.push([rr * th.cos(), rr * th.sin(), s]);
            }
        }
    }
    pts.into_iter()
        .map(|z| {
            let mut y = vec![0.0; n];
            y[0] = z[0];
            y[1] = z[1];
            if n > 2 {
                y[2] = z[2];
            }
            y
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::ground_state::solve_ground_state;
    use std::sync::OnceLock;

    fn gs() -> &'static GroundState {
        static GS: OnceLock<GroundState> = OnceLock::new();
        GS.get_or_init(|| {
            solve_ground_state(&SystemConfig::flat(5, 7.0 / 3.0).unwrap(), 1e-8).unwrap()
        })
    }

    #[test]
    fn polygon_examples() {
        let p = polygon_points(1, 5.0, 5).unwrap();
        assert_eq!(p, vec![vec![5.0, 0.0, 0.0, 0.0, 0.0]]);
        let p = polygon_points(4, 1.0, 5).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (x, e) in p.iter().zip(expect) {
            assert!((x[0] - e[0]).abs() < 1e-15 && (x[1] - e[1]).abs() < 1e-15);
        }
        let p = polygon_points(6, 1.0, 5).unwrap();
        let mut dmin = f64::INFINITY;
        for i in 0..6 {
            for j in 0..i {
                let d: f64 = p[i]
                    .iter()
                    .zip(&p[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                dmin = dmin.min(d);
            }
        }
        assert!((dmin - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ansatz_examples() {
        let gs = gs();
        let lam = 1.4;
        let cfg = BubbleConfig::new(5, 1, 3.0, lam, 1.0).unwrap();
        let (w1, w2) = eval_ansatz(gs, &cfg, &[3.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((w1 - lam.powf(1.5)).abs() < 1e-14);
        assert!((w2 - lam.powf(1.5) * gs.v0()).abs() < 1e-14);
        let cfg2 = BubbleConfig::new(5, 2, 4.0, 1.0, 1.0).unwrap();
        let (w1, _) = eval_ansatz(gs, &cfg2, &[0.0; 5]);
        assert!((w1 - 2.0 * gs.u(4.0)).abs() < 1e-14);
    }

    #[test]
    fn rotation_invariance() {
        use rand::{Rng, SeedableRng};
        let gs = gs();
        let cfg = BubbleConfig::new(5, 6, 7.0, 1.0, 1.0).unwrap();
        let an = Ansatz::new(gs, &cfg);
        let gens = group_generators(6, 5);
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let w = an.eval(&y);
            for g in &gens {
                let wg = an.eval(&g(&y));
                assert!((wg.0 - w.0).abs() <= 1e-12 && (wg.1 - w.1).abs() <= 1e-12);
            }
        }
    }

    fn random_field(seed: u64, cfg: &BubbleConfig) -> SampledField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let pts = sample_points(cfg);
        let vals: Vec<(f64, f64)> = pts
            .iter()
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let flat = pts.concat();
        SampledField::new(
            cfg.n,
            flat,
            vals.iter().map(|v| v.0).collect(),
            Some(vals.iter().map(|v| v.1).collect()),
        )
        .unwrap()
    }

    #[test]
    fn norm_examples() {
        let cfg = BubbleConfig::new(5, 3, 6.0, 1.0, 1.0).unwrap();
        let np = NormParams::default_for(5);
        let an_w = |e: f64| {
            let pts = sample_points(&cfg);
            let centers = cfg.centers();
            SampledField::from_fn(5, &pts, |y| {
                let z = reduce_point(y);
                let w: f64 = centers
                    .iter()
                    .map(|c| {
                        (1.0 + ((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2) + z[2] * z[2]).sqrt())
                            .powf(-e)
                    })
                    .sum();
                (w, None)
            })
            .unwrap()
        };
        let w = an_w(np.sigma);
        assert!((weighted_norm_star(&w, &cfg, &np).unwrap() - 1.0).abs() < 1e-14);
        assert!((weighted_norm_star(&w.scaled(2.0), &cfg, &np).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(weighted_norm_star(&w.scaled(0.0), &cfg, &np).unwrap(), 0.0);
        let w2 = an_w(np.sigma + 2.0);
        assert!((weighted_norm_dstar(&w2, &cfg, &np).unwrap() - 1.0).abs() < 1e-14);
        assert!((weighted_norm_dstar(&w2.scaled(-3.0), &cfg, &np).unwrap() - 3.0).abs() < 1e-13);
        let empty = SampledField::new(5, vec![], vec![], None).unwrap();
        assert!(matches!(
            weighted_norm_star(&empty, &cfg, &np),
            Err(Error::EmptyField)
        ));
    }

    #[test]
    fn single_bubble_norm_attained_near_core() {
        let gs = gs();
        let np = NormParams::default_for(5);
        for lam in [0.5, 1.0, 2.0] {
            let cfg = BubbleConfig::new(5, 1, 10.0, lam, 10.0).unwrap();
            let pts = sample_points(&cfg);
            let f = SampledField::from_fn(5, &pts, |y| (eval_ansatz(gs, &cfg, y).0, None)).unwrap();
            let rep = weighted_norm_star_report(&f, &cfg, &np).unwrap();
            assert!(rep.value.is_finite() && rep.value > 0.0);
            let y = f.point(rep.argmax1);
            let d = ((y[0] - 10.0).powi(2) + y[1..].iter().map(|x| x * x).sum::<f64>()).sqrt();
            // the bubble width is sqrt(N(N-2)) in the U(0) = 1 normalization
            assert!(d <= 2.0 * 15f64.sqrt() / lam, "lam={lam} d={d}");
        }
    }

    #[test]
    fn symmetry_examples() {
        let gs = gs();
        let cfg = BubbleConfig::new(5, 3, 4.0, 1.0, 1.0).unwrap();
        let seed: Vec<Vec<f64>> = vec![
            vec![1.0, 0.5, 0.3, -0.2, 0.7],
            vec![4.2, 0.1, 0.0, 1.0, 0.0],
            vec![-2.0, 3.0, 1.0, 0.0, 0.5],
        ];
        let pts = symmetric_closure(&seed, 3);
        let w = SampledField::from_fn(5, &pts, |y| {
            let (a, b) = eval_ansatz(gs, &cfg, y);
            (a, Some(b))
        })
        .unwrap();
        assert!(check_symmetry(&w, 3).unwrap() <= 1e-12);
        let odd = SampledField::from_fn(5, &pts, |y| (y[1], None)).unwrap();
        let max_y2 = pts.iter().map(|p| p[1].abs()).fold(0.0, f64::max);
        assert!((check_symmetry(&odd, 3).unwrap() - 2.0 * max_y2).abs() < 1e-12);
        let radial = SampledField::from_fn(5, &pts, |y| {
            (y.iter().map(|x| x * x).sum::<f64>().sqrt(), None)
        })
        .unwrap();
        assert!(check_symmetry(&radial, 3).unwrap() <= 1e-12);
        let partial = SampledField::from_fn(5, &seed, |y| (y[0], None)).unwrap();
        assert!(matches!(
            check_symmetry(&partial, 3),
            Err(Error::NotGroupClosed(_))
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let cfg = BubbleConfig::new(5, 2, 3.0, 1.0, 1.0).unwrap();
        let f = random_field(1, &cfg);
        let mut buf = Vec::new();
        f.write_csv(&mut buf, Some("manifest: x.json")).unwrap();
        let g = SampledField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(f.points, g.points);
        assert_eq!(f.values1, g.values1);
        assert_eq!(f.values2, g.values2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn norms_are_seminorms(s1 in 0u64..1000, s2 in 0u64..1000, c in -5.0f64..5.0) {
                let cfg = BubbleConfig::new(5, 4, 5.0, 1.0, 1.0).unwrap();
                let np = NormParams::default_for(5);
                let f = random_field(s1, &cfg);
                let g = random_field(s2 + 1000, &cfg);
                for norm in [weighted_norm_star, weighted_norm_dstar] {
                    let nf = norm(&f, &cfg, &np).unwrap();
                    let ng = norm(&g, &cfg, &np).unwrap();
                    let sum = norm(&f.combine(1.0, &g, 1.0).unwrap(), &cfg, &np).unwrap();
                    prop_assert!(sum <= nf + ng + 1e-12 * (nf + ng));
                    let sc = norm(&f.scaled(c), &cfg, &np).unwrap();
                    prop_assert!((sc - c.abs() * nf).abs() <= 1e-12 * nf.max(1.0));
                }
            }

            #[test]
            fn norm_invariant_under_group(seed in 0u64..1000, which in 0usize..5) {
                use rand::{Rng, SeedableRng};
                let cfg = BubbleConfig::new(5, 4, 5.0, 1.0, 1.0).unwrap();
                let np = NormParams::default_for(5);
                let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
                let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.gen_range(-8.0..8.0)).collect()).collect();
                let vals: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let f = SampledField::new(5, pts.concat(), vals.clone(), None).unwrap();
                let g = &group_generators(4, 5)[which];
                let moved: Vec<Vec<f64>> = pts.iter().map(|p| g(p)).collect();
                let h = SampledField::new(5, moved.concat(), vals, None).unwrap();
                let a = weighted_norm_star(&f, &cfg, &np).unwrap();
                let b = weighted_norm_star(&h, &cfg, &np).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a);
            }
        }
    }
}
