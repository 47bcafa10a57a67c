//! Finite-volume grid on the symmetry cell and its fast Poisson solver.
//!
//! Cells are boxes in (ρ, θ, s) with y₁ = ρ cos θ, y₂ = ρ sin θ, |y''| = s,
//! 0 <= θ <= π/k. The measure is ρ dρ dθ s^{N-3} ds, so the discrete
//! operator is L = T_ρ⊗M_θ⊗M_s + D_ρ⊗T_θ⊗M_s + M_ρ⊗M_θ⊗T_s with Neumann
//! faces at θ = 0, π/k and at the axes, and a Robin face
//! (∂_n + (N-2)/R)φ = 0 at ρ = R and s = R.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::ansatz::{BubbleConfig, SampledField};
use crate::error::{Error, Result};
use crate::quadrature::sphere_area;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    /// Cell size at the bubble core, in units of 1/λ.
    pub h_core: f64,
    pub growth: f64,
    /// Outer radius; 10μ when absent.
    pub r_out: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            h_core: 0.5,
            growth: 1.2,
            r_out: None,
        }
    }
}

impl GridSpec {
    /// Halved core size and the square root of the growth factor.
    pub fn refined(&self) -> Self {
        GridSpec {
            h_core: 0.5 * self.h_core,
            growth: self.growth.sqrt(),
            r_out: self.r_out,
        }
    }
}

/// Faces on [lo, hi] graded geometrically away from `focus`.
fn graded_faces(lo: f64, hi: f64, focus: f64, h: f64, g: f64) -> Vec<f64> {
    let focus = focus.clamp(lo, hi);
    let mut up = vec![focus];
    let mut step = h;
    while *up.last().unwrap() < hi {
        let next = up.last().unwrap() + step;
        up.push(next.min(hi));
        step *= g;
    }
    let mut down = vec![];
    let mut x = focus;
    step = h;
    while x > lo {
        x = (x - step).max(lo);
        down.push(x);
        step *= g;
    }
    down.reverse();
    let mut faces = down;
    faces.extend(up);
    faces.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * (1.0 + b.abs()));
    // merge a sliver at either end into its neighbour
    let n = faces.len();
    if n > 3 && faces[n - 1] - faces[n - 2] < 0.3 * (faces[n - 2] - faces[n - 3]) {
        faces.remove(n - 2);
    }
    if faces.len() > 3 && faces[1] - faces[0] < 0.3 * (faces[2] - faces[1]) {
        faces.remove(1);
    }
    faces
}

#[derive(Debug, Clone)]
pub struct Axis {
    pub faces: Vec<f64>,
    pub centers: Vec<f64>,
}

impl Axis {
    fn new(faces: Vec<f64>) -> Axis {
        let centers = faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Axis { faces, centers }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Generalised eigenpairs T q = λ M q with Qᵀ M Q = I, for diagonal M.
struct ModalBasis {
    q: DMatrix<f64>,
    /// Qᵀ M
    qt_m: DMatrix<f64>,
    values: Vec<f64>,
}

impl ModalBasis {
    fn new(t: &DMatrix<f64>, m: &[f64]) -> ModalBasis {
        let n = m.len();
        let is = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / m[i].sqrt() } else { 0.0 });
        let a = &is * t * &is;
        let a = 0.5 * (&a + a.transpose());
        let eig = SymmetricEigen::new(a);
        let q = &is * &eig.eigenvectors;
        let qt_m = DMatrix::from_fn(n, n, |i, j| q[(j, i)] * m[j]);
        ModalBasis {
            q,
            qt_m,
            values: eig.eigenvalues.iter().copied().collect(),
        }
    }
}

/// Stiffness matrix of a 1-D FV axis with face weights `w` (interior faces)
/// and an optional Robin coefficient at the last face.
fn stiffness(centers: &[f64], face_weight: impl Fn(usize) -> f64, robin_last: f64) -> DMatrix<f64> {
    let n = centers.len();
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        let c = face_weight(i + 1) / (centers[i + 1] - centers[i]);
        t[(i, i)] += c;
        t[(i + 1, i + 1)] += c;
        t[(i, i + 1)] -= c;
        t[(i + 1, i)] -= c;
    }
    t[(n - 1, n - 1)] += robin_last;
    t
}

#[derive(Debug, Clone)]
struct Tridiag {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

/// Grid on the symmetry cell with precomputed modal bases.
pub struct SectorGrid {
    pub n: usize,
    pub k: usize,
    pub r_out: f64,
    pub rho: Axis,
    pub theta: Axis,
    pub s: Axis,
    m_rho: Vec<f64>,
    d_rho: Vec<f64>,
    t_rho: Tridiag,
    m_theta: Vec<f64>,
    m_s: Vec<f64>,
    basis_theta: ModalBasis,
    basis_s: ModalBasis,
    /// Whole-space volume represented by each cell.
    volumes: Vec<f64>,
}

impl SectorGrid {
    pub fn new(
        n: usize,
        k: usize,
        ring: f64,
        lambda: f64,
        r_out: f64,
        spec: &GridSpec,
    ) -> Result<SectorGrid> {
        if n < 4 || k == 0 || !(r_out > 0.0) || !(spec.h_core > 0.0) || !(spec.growth >= 1.0) {
            return Err(Error::InvalidArgument("invalid grid parameters".into()));
        }
        let h = spec.h_core / lambda;
        if r_out < ring + 4.0 * h {
            return Err(Error::GridTooSmall(format!(
                "outer radius {r_out} does not enclose the ring {ring}"
            )));
        }
        let g = spec.growth;
        let rho = Axis::new(graded_faces(0.0, r_out, ring, h, g));
        let half = PI / k as f64;
        let h_theta = (h / ring.max(h)).min(half / 8.0);
        let theta = Axis::new(graded_faces(0.0, half, 0.0, h_theta, g));
        let s = Axis::new(graded_faces(0.0, r_out, 0.0, h, g));
        if rho.len() < 3 || theta.len() < 2 || s.len() < 3 {
            return Err(Error::GridTooSmall(
                "fewer than three cells on an axis".into(),
            ));
        }
        let beta = (n as f64 - 2.0) / r_out;
        let e = n as f64 - 3.0;

        let m_rho: Vec<f64> = rho
            .faces
            .windows(2)
            .map(|w| 0.5 * (w[1] * w[1] - w[0] * w[0]))
            .collect();
        let d_rho: Vec<f64> = rho
            .faces
            .windows(2)
            .zip(&rho.centers)
            .map(|(w, c)| (w[1] - w[0]) / c)
            .collect();
        let t_rho_full = stiffness(&rho.centers, |f| rho.faces[f], beta * r_out);
        let nr = rho.len();
        let t_rho = Tridiag {
            lower: (0..nr)
                .map(|i| if i > 0 { t_rho_full[(i, i - 1)] } else { 0.0 })
                .collect(),
            diag: (0..nr).map(|i| t_rho_full[(i, i)]).collect(),
            upper: (0..nr)
                .map(|i| {
                    if i + 1 < nr {
                        t_rho_full[(i, i + 1)]
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        let m_theta: Vec<f64> = theta.faces.windows(2).map(|w| w[1] - w[0]).collect();
        let t_theta = stiffness(&theta.centers, |_| 1.0, 0.0);
        let m_s: Vec<f64> = s
            .faces
            .windows(2)
            .map(|w| (w[1].powf(e + 1.0) - w[0].powf(e + 1.0)) / (e + 1.0))
            .collect();
        let t_s = stiffness(&s.centers, |f| s.faces[f].powf(e), beta * r_out.powf(e));
        let basis_theta = ModalBasis::new(&t_theta, &m_theta);
        let basis_s = ModalBasis::new(&t_s, &m_s);

        let factor = 2.0 * k as f64 * sphere_area(n - 2);
        let mut volumes = Vec::with_capacity(nr * theta.len() * s.len());
        for mr in &m_rho {
            for mt in &m_theta {
                for ms in &m_s {
                    volumes.push(factor * mr * mt * ms);
                }
            }
        }
        Ok(SectorGrid {
            n,
            k,
            r_out,
            rho,
            theta,
            s,
            m_rho,
            d_rho,
            t_rho,
            m_theta,
            m_s,
            basis_theta,
            basis_s,
            volumes,
        })
    }

    /// The grid for a bubble configuration: ring at r, core size h/λ, R = 10μ
    /// unless the `GridSpec` overrides it.
    pub fn for_config(cfg: &BubbleConfig, spec: &GridSpec) -> Result<SectorGrid> {
        let r_out = spec.r_out.unwrap_or(10.0 * cfg.mu);
        SectorGrid::new(cfg.n, cfg.k, cfg.r, cfg.lambda, r_out, spec)
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rho.len(), self.theta.len(), self.s.len())
    }

    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.theta.len() + j) * self.s.len() + l
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Reduced point (y₁, y₂, s) of a cell centre.
    pub fn reduced_point(&self, c: usize) -> [f64; 3] {
        let (nt, ns) = (self.theta.len(), self.s.len());
        let (i, j, l) = (c / (nt * ns), (c / ns) % nt, c % ns);
        let (r, t) = (self.rho.centers[i], self.theta.centers[j]);
        [r * t.cos(), r * t.sin(), self.s.centers[l]]
    }

    pub fn reduced_points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|c| self.reduced_point(c)).collect()
    }

    /// Cell centre embedded in R^N.
    pub fn point(&self, c: usize) -> Vec<f64> {
        let z = self.reduced_point(c);
        let mut y = vec![0.0; self.n];
        y[..3].copy_from_slice(&z);
        y
    }

    /// Sampled field on the cell centres.
    pub fn to_field(&self, v1: &[f64], v2: Option<&[f64]>) -> Result<SampledField> {
        let pts: Vec<f64> = (0..self.len()).flat_map(|c| self.point(c)).collect();
        SampledField::new(self.n, pts, v1.to_vec(), v2.map(|v| v.to_vec()))
    }

    /// Σ_cells vol·f·g, the whole-space inner product of symmetric fields.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.volumes
            .iter()
            .zip(f)
            .zip(g)
            .map(|((v, a), b)| v * a * b)
            .sum()
    }

    /// Applies L (without the mass) to u.
    fn apply_stiffness(&self, u: &[f64]) -> Vec<f64> {
        let (nr, nt, ns) = self.shape();
        let mut out = vec![0.0; u.len()];
        let e = self.n as f64 - 3.0;
        let beta = (self.n as f64 - 2.0) / self.r_out;
        for i in 0..nr {
            for j in 0..nt {
                for l in 0..ns {
                    let c = self.index(i, j, l);
                    let mut acc = 0.0;
                    // ρ
                    let mtms = self.m_theta[j] * self.m_s[l];
                    let tr = &self.t_rho;
                    acc += mtms * tr.diag[i] * u[c];
                    if i > 0 {
                        acc += mtms * tr.lower[i] * u[self.index(i - 1, j, l)];
                    }
                    if i + 1 < nr {
                        acc += mtms * tr.upper[i] * u[self.index(i + 1, j, l)];
                    }
                    // θ
                    let dm = self.d_rho[i] * self.m_s[l];
                    if j > 0 {
                        let w = dm / (self.theta.centers[j] - self.theta.centers[j - 1]);
                        acc += w * (u[c] - u[self.index(i, j - 1, l)]);
                    }
                    if j + 1 < nt {
                        let w = dm / (self.theta.centers[j + 1] - self.theta.centers[j]);
                        acc += w * (u[c] - u[self.index(i, j + 1, l)]);
                    }
                    // s
                    let mm = self.m_rho[i] * self.m_theta[j];
                    if l > 0 {
                        let w = mm * self.s.faces[l].powf(e)
                            / (self.s.centers[l] - self.s.centers[l - 1]);
                        acc += w * (u[c] - u[self.index(i, j, l - 1)]);
                    }
                    if l + 1 < ns {
                        let w = mm * self.s.faces[l + 1].powf(e)
                            / (self.s.centers[l + 1] - self.s.centers[l]);
                        acc += w * (u[c] - u[self.index(i, j, l + 1)]);
                    } else {
                        acc += mm * beta * self.s.faces[l + 1].powf(e) * u[c];
                    }
                    out[c] = acc;
                }
            }
        }
        out
    }

    /// Discrete -Δu at every cell.
    pub fn neg_laplacian(&self, u: &[f64]) -> Vec<f64> {
        let (_, nt, ns) = self.shape();
        let lu = self.apply_stiffness(u);
        lu.iter()
            .enumerate()
            .map(|(c, x)| {
                let (i, j, l) = (c / (nt * ns), (c / ns) % nt, c % ns);
                x / (self.m_rho[i] * self.m_theta[j] * self.m_s[l])
            })
            .collect()
    }

    /// Solves -Δ_h u = f with the Robin truncation (the discrete Newtonian potential).
    pub fn solve_poisson(&self, f: &[f64]) -> Vec<f64> {
        let (nr, nt, ns) = self.shape();
        let bt = &self.basis_theta;
        let bs = &self.basis_s;
        let ms_p = {
            // (PᵀM_s)ᵀ = M_s P
            bs.qt_m.transpose()
        };
        let mut hat = vec![0.0; f.len()];
        for i in 0..nr {
            let x = DMatrix::from_fn(nt, ns, |j, l| f[self.index(i, j, l)] * self.m_rho[i]);
            let y = &bt.qt_m * x * &ms_p;
            for j in 0..nt {
                for l in 0..ns {
                    hat[self.index(i, j, l)] = y[(j, l)];
                }
            }
        }
        let mut col = vec![0.0; nr];
        let mut cp = vec![0.0; nr];
        for a in 0..nt {
            for b in 0..ns {
                let (la, lb) = (bt.values[a], bs.values[b]);
                // Thomas algorithm on T_ρ + la D_ρ + lb M_ρ
                let tr = &self.t_rho;
                let mut prev_c = 0.0;
                let mut prev_d = 0.0;
                for i in 0..nr {
                    let diag = tr.diag[i] + la * self.d_rho[i] + lb * self.m_rho[i];
                    let lo = tr.lower[i];
                    let denom = diag - lo * prev_c;
                    let ci = tr.upper[i] / denom;
                    let di = (hat[self.index(i, a, b)] - lo * prev_d) / denom;
                    cp[i] = ci;
                    col[i] = di;
                    prev_c = ci;
                    prev_d = di;
                }
                for i in (0..nr.saturating_sub(1)).rev() {
                    col[i] -= cp[i] * col[i + 1];
                }
                for i in 0..nr {
                    hat[self.index(i, a, b)] = col[i];
                }
            }
        }
        let mut out = vec![0.0; f.len()];
        let pt = bs.q.transpose();
        for i in 0..nr {
            let x = DMatrix::from_fn(nt, ns, |j, l| hat[self.index(i, j, l)]);
            let y = &bt.q * x * &pt;
            for j in 0..nt {
                for l in 0..ns {
                    out[self.index(i, j, l)] = y[(j, l)];
                }
            }
        }
        out
    }
}
