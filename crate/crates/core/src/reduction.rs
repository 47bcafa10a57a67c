//! Error term R_k, nonlinearity N_k, the linearized operator L_k, the
//! projected linear solve and the contraction for the correction (φ₁, φ₂).
//!
//! All grid solves run on the symmetry cell of [`SectorGrid`]. The Green
//! operator is the discrete inverse of -Δ with the Robin truncation, so it
//! carries the Newtonian normalization 1/((N-2)ω_{N-1}).

use nalgebra::Matrix2;
use serde::Serialize;

use crate::ansatz::{
    reduce_point, sample_points, weighted_norm_dstar, Ansatz, BubbleConfig, NormParams,
    SampledField,
};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, SectorGrid};
use crate::ground_state::GroundState;
use crate::krylov::gmres;

fn residual_reduced(an: &Ansatz<'_>, config: &SystemConfig, mu: f64, z: &[f64; 3]) -> (f64, f64) {
    let (p, q) = (config.p(), config.q());
    let (mut w1, mut w2, mut svp, mut suq) = (0.0, 0.0, 0.0, 0.0);
    an.for_each_bubble(z, |_, _, b| {
        w1 += b.u;
        w2 += b.v;
        svp += b.v.powf(p);
        suq += b.u.powf(q);
    });
    let rad = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt() / mu;
    (
        config.potential1().value(rad) * w2.powf(p) - svp,
        config.potential2().value(rad) * w1.powf(q) - suq,
    )
}

/// R_k = (K₁W₂^p - ΣV_j^p, K₂W₁^q - ΣU_j^q) at y.
pub fn residual_rk(
    gs: &GroundState,
    cfg: &BubbleConfig,
    config: &SystemConfig,
    y: &[f64],
) -> (f64, f64) {
    residual_reduced(&Ansatz::new(gs, cfg), config, cfg.mu, &reduce_point(y))
}

/// ‖R_k‖_** over the structured sample set.
pub fn dstar_norm_rk(gs: &GroundState, cfg: &BubbleConfig, config: &SystemConfig) -> Result<f64> {
    let an = Ansatz::new(gs, cfg);
    let pts = sample_points(cfg);
    let f = SampledField::from_fn(cfg.n, &pts, |y| {
        let (a, b) = residual_reduced(&an, config, cfg.mu, &reduce_point(y));
        (a, Some(b))
    })?;
    weighted_norm_dstar(&f, cfg, &NormParams::default_for(cfg.n))
}

/// K((w + φ)^p - w^p - p w^{p-1} φ); a negative base is clamped to zero and flagged.
pub fn nonlinear_term(k: f64, w: f64, phi: f64, p: f64) -> (f64, bool) {
    let base = w + phi;
    let clamped = base < 0.0;
    let b = base.max(0.0);
    (
        k * (b.powf(p) - w.powf(p) - p * w.powf(p - 1.0) * phi),
        clamped,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NkValue {
    pub n1: f64,
    pub n2: f64,
    pub clamped: bool,
}

/// (N₁ₖ(φ₂), N₂ₖ(φ₁)) at y for the given correction values there.
pub fn nonlinearity_nk(
    gs: &GroundState,
    cfg: &BubbleConfig,
    config: &SystemConfig,
    phi: (f64, f64),
    y: &[f64],
) -> NkValue {
    let (w1, w2) = Ansatz::new(gs, cfg).eval(y);
    let rad = y.iter().map(|x| x * x).sum::<f64>().sqrt() / cfg.mu;
    let (n1, c1) = nonlinear_term(config.potential1().value(rad), w2, phi.1, config.p());
    let (n2, c2) = nonlinear_term(config.potential2().value(rad), w1, phi.0, config.q());
    NkValue {
        n1,
        n2,
        clamped: c1 || c2,
    }
}

/// Newtonian potential of f on the grid; f must be negligible near the outer boundary.
pub fn green_convolve(grid: &SectorGrid, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != grid.len() {
        return Err(Error::InvalidArgument(
            "field does not live on the grid".into(),
        ));
    }
    let fmax = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if fmax == 0.0 {
        return Ok(vec![0.0; f.len()]);
    }
    let half = 0.5 * grid.r_out;
    let mut edge: f64 = 0.0;
    for (c, v) in f.iter().enumerate() {
        let z = grid.reduced_point(c);
        let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
        if r > half {
            edge = edge.max(v.abs() * r * r);
        }
    }
    if edge > 1e-2 * fmax {
        return Err(Error::InsufficientDecay(format!(
            "|f||y|^2 = {edge:.3e} beyond R/2"
        )));
    }
    Ok(grid.solve_poisson(f))
}

type Pair = (Vec<f64>, Vec<f64>);

/// Per-configuration state on the grid.
pub struct ReductionWorkspace<'a> {
    pub gs: &'a GroundState,
    pub cfg: BubbleConfig,
    pub config: &'a SystemConfig,
    pub grid: SectorGrid,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    /// p K₁ W₂^{p-1} and q K₂ W₁^{q-1}.
    pub coupling: Pair,
    pub rk: Pair,
    /// Σ_j (Y_{j,l}, Z_{j,l}) for l = r, λ.
    pub kernel: [Pair; 2],
    /// Σ_j (p V_j^{p-1} Z_{j,l}, q U_j^{q-1} Y_{j,l}).
    pub directions: [Pair; 2],
    green_dirs: [Pair; 2],
    col_scale: [f64; 2],
    row_scale: [f64; 2],
    weight_star: Vec<f64>,
    weight_dstar: Vec<f64>,
    pub norms: NormParams,
    pub gmres_tol: f64,
}

fn add_scaled(a: &mut [f64], s: f64, b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
}

impl<'a> ReductionWorkspace<'a> {
    pub fn new(
        gs: &'a GroundState,
        cfg: &BubbleConfig,
        config: &'a SystemConfig,
        spec: &GridSpec,
    ) -> Result<Self> {
        let grid = SectorGrid::for_config(cfg, spec)?;
        let an = Ansatz::new(gs, cfg);
        let (p, q) = (config.p(), config.q());
        let lam = cfg.lambda;
        let (au, av) = (gs.alpha_u(), gs.alpha_v());
        let np = NormParams::default_for(cfg.n);
        let nc = grid.len();
        let mut ws = ReductionWorkspace {
            gs,
            cfg: cfg.clone(),
            config,
            w1: vec![0.0; nc],
            w2: vec![0.0; nc],
            k1: vec![0.0; nc],
            k2: vec![0.0; nc],
            coupling: (vec![0.0; nc], vec![0.0; nc]),
            rk: (vec![0.0; nc], vec![0.0; nc]),
            kernel: [
                (vec![0.0; nc], vec![0.0; nc]),
                (vec![0.0; nc], vec![0.0; nc]),
            ],
            directions: [
                (vec![0.0; nc], vec![0.0; nc]),
                (vec![0.0; nc], vec![0.0; nc]),
            ],
            green_dirs: [(vec![], vec![]), (vec![], vec![])],
            col_scale: [1.0; 2],
            row_scale: [1.0; 2],
            weight_star: vec![0.0; nc],
            weight_dstar: vec![0.0; nc],
            norms: np,
            gmres_tol: 1e-10,
            grid,
        };
        let centers = an.centers().to_vec();
        for c in 0..nc {
            let z = ws.grid.reduced_point(c);
            let (mut w1, mut w2, mut svp, mut suq) = (0.0, 0.0, 0.0, 0.0);
            let (mut ws_, mut wd) = (0.0, 0.0);
            for (j, xc) in centers.iter().enumerate() {
                let rho = an.distance(j, &z);
                let b = gs.bubble_radial(lam, rho);
                w1 += b.u;
                w2 += b.v;
                svp += b.v.powf(p);
                suq += b.u.powf(q);
                ws_ += (1.0 + rho).powf(-np.sigma);
                wd += (1.0 + rho).powf(-np.sigma - 2.0);
                // the centre moves along x_j/|x_j| (e₁ when r = 0)
                let xn = (xc[0] * xc[0] + xc[1] * xc[1]).sqrt();
                let e = if xn > 0.0 {
                    [xc[0] / xn, xc[1] / xn]
                } else {
                    [1.0, 0.0]
                };
                let proj = if rho > 0.0 {
                    ((z[0] - xc[0]) * e[0] + (z[1] - xc[1]) * e[1]) / rho
                } else {
                    0.0
                };
                let y1 = -b.du * proj;
                let z1 = -b.dv * proj;
                let y2 = (au * b.u + rho * b.du) / lam;
                let z2 = (av * b.v + rho * b.dv) / lam;
                let vp = p * b.v.powf(p - 1.0);
                let uq = q * b.u.powf(q - 1.0);
                ws.kernel[0].0[c] += y1;
                ws.kernel[0].1[c] += z1;
                ws.kernel[1].0[c] += y2;
                ws.kernel[1].1[c] += z2;
                ws.directions[0].0[c] += vp * z1;
                ws.directions[0].1[c] += uq * y1;
                ws.directions[1].0[c] += vp * z2;
                ws.directions[1].1[c] += uq * y2;
            }
            let rad = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt() / cfg.mu;
            let k1 = config.potential1().value(rad);
            let k2 = config.potential2().value(rad);
            ws.w1[c] = w1;
            ws.w2[c] = w2;
            ws.k1[c] = k1;
            ws.k2[c] = k2;
            ws.coupling.0[c] = p * k1 * w2.powf(p - 1.0);
            ws.coupling.1[c] = q * k2 * w1.powf(q - 1.0);
            ws.rk.0[c] = k1 * w2.powf(p) - svp;
            ws.rk.1[c] = k2 * w1.powf(q) - suq;
            ws.weight_star[c] = ws_;
            ws.weight_dstar[c] = wd;
        }
        for l in 0..2 {
            let g = (
                ws.grid.solve_poisson(&ws.directions[l].0),
                ws.grid.solve_poisson(&ws.directions[l].1),
            );
            let cmax = g.0.iter().chain(&g.1).fold(0.0f64, |a, b| a.max(b.abs()));
            ws.col_scale[l] = if cmax > 0.0 { cmax } else { 1.0 };
            let d = ws.pair_inner(&ws.directions[l], (&g.0, &g.1)).abs() / ws.col_scale[l];
            ws.row_scale[l] = if d > 0.0 { d } else { 1.0 };
            ws.green_dirs[l] = g;
        }
        Ok(ws)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    fn pair_inner(&self, a: &Pair, b: (&[f64], &[f64])) -> f64 {
        self.grid.inner(&a.0, b.0) + self.grid.inner(&a.1, b.1)
    }

    /// ‖·‖_* of a pair on the grid.
    pub fn star_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        let m = |v: &[f64]| {
            v.iter()
                .zip(&self.weight_star)
                .fold(0.0f64, |acc, (x, w)| acc.max(x.abs() / w))
        };
        m(a) + m(b)
    }

    /// ‖·‖_** of a pair on the grid.
    pub fn dstar_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        let m = |v: &[f64]| {
            v.iter()
                .zip(&self.weight_dstar)
                .fold(0.0f64, |acc, (x, w)| acc.max(x.abs() / w))
        };
        m(a) + m(b)
    }

    /// L_k(φ₁, φ₂) with the FV Laplacian.
    pub fn apply_lk(&self, phi1: &[f64], phi2: &[f64]) -> Pair {
        let mut a = self.grid.neg_laplacian(phi1);
        let mut b = self.grid.neg_laplacian(phi2);
        for c in 0..a.len() {
            a[c] -= self.coupling.0[c] * phi2[c];
            b[c] -= self.coupling.1[c] * phi1[c];
        }
        (a, b)
    }

    /// (N₁ₖ(φ₂), N₂ₖ(φ₁)) and the number of clamped cells.
    pub fn nonlinearity(&self, phi1: &[f64], phi2: &[f64]) -> (Pair, usize) {
        let (p, q) = (self.config.p(), self.config.q());
        let mut clamped = 0;
        let mut a = vec![0.0; phi1.len()];
        let mut b = vec![0.0; phi1.len()];
        for c in 0..a.len() {
            let (x, f1) = nonlinear_term(self.k1[c], self.w2[c], phi2[c], p);
            let (y, f2) = nonlinear_term(self.k2[c], self.w1[c], phi1[c], q);
            a[c] = x;
            b[c] = y;
            clamped += (f1 || f2) as usize;
        }
        ((a, b), clamped)
    }

    /// |⟨E_l, φ⟩| relative to Σ vol|E_l|·max|φ|.
    pub fn orthogonality_defects(&self, phi1: &[f64], phi2: &[f64]) -> [f64; 2] {
        let pmax = phi1.iter().chain(phi2).fold(0.0f64, |a, b| a.max(b.abs()));
        let mut out = [0.0; 2];
        for (l, o) in out.iter_mut().enumerate() {
            let d = &self.directions[l];
            let mass: f64 = self
                .grid
                .volumes()
                .iter()
                .enumerate()
                .map(|(c, v)| v * (d.0[c].abs() + d.1[c].abs()))
                .sum();
            let ip = self.pair_inner(d, (phi1, phi2));
            *o = if pmax > 0.0 {
                ip.abs() / (mass * pmax)
            } else {
                0.0
            };
        }
        out
    }

    /// ⟨L_kφ, (Z_{1,l}, Y_{1,l})⟩ over R^N, using the symmetric sum over bubbles.
    pub fn projection_of_lk(&self, phi1: &[f64], phi2: &[f64]) -> [f64; 2] {
        let (a, b) = self.apply_lk(phi1, phi2);
        let kf = self.cfg.k as f64;
        [0, 1].map(|l| {
            (self.grid.inner(&a, &self.kernel[l].1) + self.grid.inner(&b, &self.kernel[l].0)) / kf
        })
    }

    /// Solves L_kφ = h + Σ ℓ_l E_l with ⟨E_l, φ⟩ = 0 in the fixed-point form
    /// φ = G[Mφ + h + Σℓ_l E_l] by bordered GMRES.
    pub fn solve_projected(
        &self,
        h1: &[f64],
        h2: &[f64],
        start: Option<(&[f64], &[f64])>,
    ) -> Result<LinearSolution> {
        let nc = self.len();
        let gram = Matrix2::from_fn(|l, m| {
            self.pair_inner(
                &self.directions[l],
                (&self.green_dirs[m].0, &self.green_dirs[m].1),
            )
        });
        let sv = gram.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-10 * smax) {
            return Err(Error::SingularSystem { sigma_min: smin });
        }
        let gh1 = self.grid.solve_poisson(h1);
        let gh2 = self.grid.solve_poisson(h2);
        let mut rhs = Vec::with_capacity(2 * nc + 2);
        rhs.extend_from_slice(&gh1);
        rhs.extend_from_slice(&gh2);
        rhs.extend_from_slice(&[0.0, 0.0]);
        let mut x = vec![0.0; 2 * nc + 2];
        if let Some((a, b)) = start {
            x[..nc].copy_from_slice(a);
            x[nc..2 * nc].copy_from_slice(b);
        }
        let mut apply = |x: &[f64]| -> Vec<f64> {
            let (f1, f2) = (&x[..nc], &x[nc..2 * nc]);
            let m1: Vec<f64> = (0..nc).map(|c| self.coupling.0[c] * f2[c]).collect();
            let m2: Vec<f64> = (0..nc).map(|c| self.coupling.1[c] * f1[c]).collect();
            let g1 = self.grid.solve_poisson(&m1);
            let g2 = self.grid.solve_poisson(&m2);
            let mut out = Vec::with_capacity(x.len());
            out.extend((0..nc).map(|c| f1[c] - g1[c]));
            out.extend((0..nc).map(|c| f2[c] - g2[c]));
            for l in 0..2 {
                let t = x[2 * nc + l] / self.col_scale[l];
                add_scaled(&mut out[..nc], -t, &self.green_dirs[l].0);
                add_scaled(&mut out[nc..2 * nc], -t, &self.green_dirs[l].1);
            }
            for l in 0..2 {
                out.push(self.pair_inner(&self.directions[l], (f1, f2)) / self.row_scale[l]);
            }
            out
        };
        let out = gmres(&mut apply, &rhs, &mut x, 80, 800, self.gmres_tol);
        if !out.converged || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "GMRES stalled at relative residual {:.3e} after {} iterations",
                out.relative_residual, out.iterations
            )));
        }
        let ell = [
            x[2 * nc] / self.col_scale[0],
            x[2 * nc + 1] / self.col_scale[1],
        ];
        Ok(LinearSolution {
            phi1: x[..nc].to_vec(),
            phi2: x[nc..2 * nc].to_vec(),
            multipliers: ell,
            iterations: out.iterations,
            relative_residual: out.relative_residual,
        })
    }

    /// L_kφ - N(φ) - R_k - Σℓ_l E_l in ‖·‖_**.
    pub fn equation_residual(&self, phi1: &[f64], phi2: &[f64], ell: [f64; 2]) -> f64 {
        let (mut a, mut b) = self.apply_lk(phi1, phi2);
        let ((n1, n2), _) = self.nonlinearity(phi1, phi2);
        for c in 0..a.len() {
            a[c] -= n1[c] + self.rk.0[c];
            b[c] -= n2[c] + self.rk.1[c];
            for l in 0..2 {
                a[c] -= ell[l] * self.directions[l].0[c];
                b[c] -= ell[l] * self.directions[l].1[c];
            }
        }
        self.dstar_norm(&a, &b)
    }

    pub fn to_field(&self, phi1: &[f64], phi2: &[f64]) -> Result<SampledField> {
        Ok(self.grid.to_field(phi1, Some(phi2))?.with_source(&self.cfg))
    }
}

/// Output of one projected solve.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub multipliers: [f64; 2],
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionResult {
    #[serde(skip)]
    pub phi: SampledField,
    /// ℓ₁ (ring radius) and ℓ₂ (concentration).
    pub multipliers: [f64; 2],
    pub star_norm: f64,
    pub iterations: usize,
    pub contraction_history: Vec<f64>,
    /// Largest ratio of successive differences after the first step.
    pub contraction_factor: f64,
    /// ‖φ‖_* <= μ^{-m/2}.
    pub in_contraction_set: bool,
    pub orthogonality_defects: [f64; 2],
    pub gmres_iterations: Vec<usize>,
    pub equation_residual: f64,
    pub rk_dstar: f64,
    pub projection_of_lk: [f64; 2],
    pub clamped_cells: usize,
    pub k: usize,
    pub r: f64,
    pub lambda: f64,
    pub mu: f64,
    pub cells: usize,
}

impl ReductionResult {
    pub fn phi1(&self) -> &[f64] {
        &self.phi.values1
    }

    pub fn phi2(&self) -> &[f64] {
        self.phi.values2.as_deref().unwrap_or(&[])
    }
}

fn leading_m(config: &SystemConfig) -> f64 {
    config.m().unwrap_or(2.0)
}

fn finish(
    ws: &ReductionWorkspace<'_>,
    sol: &LinearSolution,
    history: Vec<f64>,
    gmres_iterations: Vec<usize>,
    clamped: usize,
) -> Result<ReductionResult> {
    let star = ws.star_norm(&sol.phi1, &sol.phi2);
    let factor = history
        .windows(2)
        .skip(1)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    let mu = ws.cfg.mu;
    Ok(ReductionResult {
        phi: ws.to_field(&sol.phi1, &sol.phi2)?,
        multipliers: sol.multipliers,
        star_norm: star,
        iterations: history.len(),
        contraction_factor: factor,
        in_contraction_set: star <= mu.powf(-leading_m(ws.config) / 2.0),
        orthogonality_defects: ws.orthogonality_defects(&sol.phi1, &sol.phi2),
        gmres_iterations,
        equation_residual: ws.equation_residual(&sol.phi1, &sol.phi2, sol.multipliers),
        rk_dstar: ws.dstar_norm(&ws.rk.0, &ws.rk.1),
        projection_of_lk: ws.projection_of_lk(&sol.phi1, &sol.phi2),
        clamped_cells: clamped,
        contraction_history: history,
        k: ws.cfg.k,
        r: ws.cfg.r,
        lambda: ws.cfg.lambda,
        mu,
        cells: ws.len(),
    })
}

/// The projected linear solve for a given right-hand side h on the grid.
pub fn solve_projected_linear(
    ws: &ReductionWorkspace<'_>,
    h1: &[f64],
    h2: &[f64],
) -> Result<ReductionResult> {
    let sol = ws.solve_projected(h1, h2, None)?;
    let d = ws.star_norm(&sol.phi1, &sol.phi2);
    finish(ws, &sol, vec![d], vec![sol.iterations], 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionOptions {
    pub grid: GridSpec,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ContractionOptions {
    fn default() -> Self {
        ContractionOptions {
            grid: GridSpec::default(),
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

/// Iterates φ ← 𝕃(N(φ) + R_k) from `initial` (zero when absent).
pub fn contraction_from(
    ws: &ReductionWorkspace<'_>,
    initial: Option<(&[f64], &[f64])>,
    tol: f64,
    max_iter: usize,
) -> Result<ReductionResult> {
    let nc = ws.len();
    let (mut phi1, mut phi2) = match initial {
        Some((a, b)) => (a.to_vec(), b.to_vec()),
        None => (vec![0.0; nc], vec![0.0; nc]),
    };
    let mut history = Vec::new();
    let mut its = Vec::new();
    for _ in 0..max_iter {
        let ((n1, n2), clamped) = ws.nonlinearity(&phi1, &phi2);
        let h1: Vec<f64> = (0..nc).map(|c| n1[c] + ws.rk.0[c]).collect();
        let h2: Vec<f64> = (0..nc).map(|c| n2[c] + ws.rk.1[c]).collect();
        let sol = ws.solve_projected(&h1, &h2, Some((&phi1, &phi2)))?;
        let d1: Vec<f64> = sol.phi1.iter().zip(&phi1).map(|(a, b)| a - b).collect();
        let d2: Vec<f64> = sol.phi2.iter().zip(&phi2).map(|(a, b)| a - b).collect();
        let diff = ws.star_norm(&d1, &d2);
        history.push(diff);
        its.push(sol.iterations);
        let norm = ws.star_norm(&sol.phi1, &sol.phi2);
        phi1.clone_from(&sol.phi1);
        phi2.clone_from(&sol.phi2);
        if history.len() >= 3 {
            let n = history.len();
            if history[n - 1] >= history[n - 2] {
                return Err(Error::NotContracting {
                    factor: history[n - 1] / history[n - 2],
                });
            }
        }
        if diff <= tol * norm || diff == 0.0 {
            return finish(ws, &sol, history, its, clamped);
        }
    }
    Err(Error::MaxIterations(max_iter))
}

pub fn solve_nonlinear_contraction_with(
    gs: &GroundState,
    cfg: &BubbleConfig,
    config: &SystemConfig,
    opts: &ContractionOptions,
) -> Result<ReductionResult> {
    let ws = ReductionWorkspace::new(gs, cfg, config, &opts.grid)?;
    contraction_from(&ws, None, opts.tol, opts.max_iter)
}

pub fn solve_nonlinear_contraction(
    gs: &GroundState,
    cfg: &BubbleConfig,
    config: &SystemConfig,
) -> Result<ReductionResult> {
    solve_nonlinear_contraction_with(gs, cfg, config, &ContractionOptions::default())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub pass: bool,
    /// max |φᵢ|/Wᵢ over samples and components.
    pub max_ratio: f64,
    pub margin: f64,
    pub witness: Option<Vec<f64>>,
    /// Slope of log|φ| against log Σ_j(1+|y-x_j|)^{2-N} away from the cores.
    pub tail_exponent: f64,
}

/// |φᵢ| <= ½Wᵢ at every sample plus the tail regression.
pub fn verify_decay_bound(
    result: &ReductionResult,
    gs: &GroundState,
    cfg: &BubbleConfig,
) -> DecayReport {
    let an = Ansatz::new(gs, cfg);
    let field = &result.phi;
    let nf = cfg.n as f64;
    let mut worst = (0.0f64, None);
    let mut tail = Vec::new();
    for i in 0..field.len() {
        let y = field.point(i);
        let z = reduce_point(y);
        let (w1, w2) = an.eval_reduced(&z);
        let a = field.values1[i].abs();
        let b = field.values2.as_ref().map_or(0.0, |v| v[i].abs());
        let ratio = (a / w1).max(b / w2);
        if ratio > worst.0 {
            worst = (ratio, Some(i));
        }
        let dmin = (0..an.centers().len())
            .map(|j| an.distance(j, &z))
            .fold(f64::INFINITY, f64::min);
        let amp = a.max(b);
        if dmin > 5.0 / cfg.lambda && amp > 0.0 {
            tail.push((an.weight(&z, nf - 2.0).ln(), amp.ln()));
        }
    }
    let tail_exponent = if tail.len() >= 3 {
        crate::fit::linear_fit(&tail).slope
    } else {
        f64::NAN
    };
    DecayReport {
        pass: worst.0 <= 0.5,
        max_ratio: worst.0,
        margin: 0.5 - worst.0,
        witness: if worst.0 > 0.5 {
            worst.1.map(|i| field.point(i).to_vec())
        } else {
            None
        },
        tail_exponent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{OutsideModel, Potential, PotentialSpec};
    use crate::ground_state::solve_ground_state;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::sync::OnceLock;

    fn gs() -> &'static GroundState {
        static GS: OnceLock<GroundState> = OnceLock::new();
        GS.get_or_init(|| {
            solve_ground_state(&SystemConfig::flat(5, 7.0 / 3.0).unwrap(), 1e-8).unwrap()
        })
    }

    fn flat() -> SystemConfig {
        SystemConfig::flat(5, 7.0 / 3.0).unwrap()
    }

    fn windowed(c: f64) -> SystemConfig {
        let spec = PotentialSpec::new(1.5, c, 2.0, 0.5, 1.2, OutsideModel::Clamp).unwrap();
        flat()
            .with_potentials(Potential::Window(spec.clone()), Potential::Window(spec))
            .unwrap()
    }

    fn norm3(z: &[f64; 3]) -> f64 {
        (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt()
    }

    // closed-form N=5, p=q=7/3 profile
    fn aubin(r: f64) -> f64 {
        (1.0 + r * r / 15.0).powf(-1.5)
    }

    #[test]
    fn residual_vanishes_for_single_flat_bubble() {
        let config = flat();
        let cfg = BubbleConfig::new(5, 1, 0.0, 1.3, 1.0).unwrap();
        for y in [
            [0.0; 5],
            [0.3, -1.0, 2.0, 0.0, 0.5],
            [40.0, 0.0, 0.0, 0.0, 0.0],
        ] {
            assert_eq!(residual_rk(gs(), &cfg, &config, &y), (0.0, 0.0));
        }
        assert_eq!(dstar_norm_rk(gs(), &cfg, &config).unwrap(), 0.0);
    }

    #[test]
    fn residual_vanishes_at_well_bottom() {
        let config = windowed(0.5);
        let mu = 20.0;
        let cfg = BubbleConfig::new(5, 1, 1.5 * mu, 1.0, mu).unwrap();
        let (a, b) = residual_rk(gs(), &cfg, &config, &[1.5 * mu, 0.0, 0.0, 0.0, 0.0]);
        assert!(a.abs() < 1e-14 && b.abs() < 1e-14, "{a} {b}");
    }

    #[test]
    fn two_bubble_residual_matches_cross_term() {
        let config = flat();
        let p = 7.0 / 3.0;
        let r = 10.0;
        let cfg = BubbleConfig::new(5, 2, r, 1.0, 1.0).unwrap();
        let (a, _) = residual_rk(gs(), &cfg, &config, &[r, 0.0, 0.0, 0.0, 0.0]);
        let cross = p * aubin(0.0).powf(p - 1.0) * aubin(2.0 * r);
        assert!(a > 0.0);
        assert!((a / cross - 1.0).abs() < 1e-2, "{a} vs {cross}");
    }

    #[test]
    fn residual_norm_is_linear_in_potential_depth() {
        let mu: f64 = 30.0;
        let r = 1.5 * mu + mu.powf(-0.1);
        let cfg = BubbleConfig::new(5, 1, r, 1.0, mu).unwrap();
        let a = dstar_norm_rk(gs(), &cfg, &windowed(0.25)).unwrap();
        let b = dstar_norm_rk(gs(), &cfg, &windowed(0.5)).unwrap();
        assert!((b / a - 2.0).abs() < 0.2, "ratio {}", b / a);
    }

    #[test]
    fn nonlinear_term_examples() {
        let (v, c) = nonlinear_term(1.0, 1.0, 0.1, 2.0);
        assert!((v - 0.01).abs() < 1e-15 && !c);
        assert_eq!(nonlinear_term(0.7, 0.4, 0.0, 7.0 / 3.0).0, 0.0);
        let (_, c) = nonlinear_term(1.0, 0.1, -0.5, 2.0);
        assert!(c);
        let cfg = BubbleConfig::new(5, 2, 5.0, 1.0, 1.0).unwrap();
        let v = nonlinearity_nk(gs(), &cfg, &flat(), (0.0, 0.0), &[1.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!((v.n1, v.n2, v.clamped), (0.0, 0.0, false));
    }

    #[test]
    fn nonlinearity_is_quadratically_small() {
        let (cfg, config) = (BubbleConfig::new(5, 2, 6.0, 1.0, 1.0).unwrap(), flat());
        let spec = GridSpec {
            r_out: Some(200.0),
            ..Default::default()
        };
        let ws = ReductionWorkspace::new(gs(), &cfg, &config, &spec).unwrap();
        let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&t| {
                let a: Vec<f64> = ws.w1.iter().map(|w| t * w).collect();
                let b: Vec<f64> = ws.w2.iter().map(|w| t * w).collect();
                let ((n1, n2), clamped) = ws.nonlinearity(&a, &b);
                assert_eq!(clamped, 0);
                ws.dstar_norm(&n1, &n2) / (t * t)
            })
            .collect();
        for r in &ratios[1..] {
            assert!((r / ratios[0] - 1.0).abs() < 0.2, "{ratios:?}");
        }
    }

    #[test]
    fn green_convolve_examples() {
        let grid = SectorGrid::new(5, 1, 0.0, 1.0, 4000.0, &GridSpec::default()).unwrap();
        let zero = vec![0.0; grid.len()];
        assert!(green_convolve(&grid, &zero)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));

        // -ΔU = V^p, second order under refinement
        let p = 7.0 / 3.0;
        let recover = |grid: &SectorGrid| {
            let f: Vec<f64> = (0..grid.len())
                .map(|c| aubin(norm3(&grid.reduced_point(c))).powf(p))
                .collect();
            let u = green_convolve(grid, &f).unwrap();
            (0..grid.len())
                .map(|c| (u[c] - aubin(norm3(&grid.reduced_point(c)))).abs())
                .fold(0.0, f64::max)
        };
        let fine = SectorGrid::new(5, 1, 0.0, 1.0, 4000.0, &GridSpec::default().refined()).unwrap();
        let (e0, e1) = (recover(&grid), recover(&fine));
        assert!(e1 < 1e-2 && e0 / e1 > 3.0, "errors {e0} {e1}");
        let radius = |c: usize| norm3(&grid.reduced_point(c));

        // decay exponent min{σ, N-2} with σ = 1.5
        let f: Vec<f64> = (0..grid.len())
            .map(|c| (1.0 + radius(c)).powf(-3.5))
            .collect();
        let u = green_convolve(&grid, &f).unwrap();
        let tail: Vec<(f64, f64)> = (0..grid.len())
            .filter(|&c| radius(c) > 20.0 && radius(c) < 400.0)
            .map(|c| ((1.0 + radius(c)).ln(), u[c].ln()))
            .collect();
        let slope = crate::fit::linear_fit(&tail).slope;
        assert!((slope + 1.5).abs() < 0.1, "slope={slope}");

        let slow: Vec<f64> = (0..grid.len())
            .map(|c| (1.0 + radius(c)).powf(-1.0))
            .collect();
        assert!(matches!(
            green_convolve(&grid, &slow),
            Err(Error::InsufficientDecay(_))
        ));
    }

    fn two_bubble_ws(spec: &GridSpec) -> ReductionWorkspace<'static> {
        static CONFIG: OnceLock<SystemConfig> = OnceLock::new();
        let config = CONFIG.get_or_init(|| windowed(0.5));
        let cfg = BubbleConfig::at_well(config, 2, 1.0).unwrap();
        ReductionWorkspace::new(gs(), &cfg, config, spec).unwrap()
    }

    #[test]
    fn lk_is_linear_and_kills_the_equation() {
        let config = flat();
        let cfg = BubbleConfig::new(5, 1, 0.0, 1.0, 1.0).unwrap();
        let spec = GridSpec {
            r_out: Some(100.0),
            ..Default::default()
        };
        let ws = ReductionWorkspace::new(gs(), &cfg, &config, &spec).unwrap();
        let ws2 = two_bubble_ws(&GridSpec::default());
        let n = ws2.len();
        let a: Vec<f64> = (0..n).map(|c| (c as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..n).map(|c| (c as f64 * 0.11).cos()).collect();
        let (la1, la2) = ws2.apply_lk(&a, &b);
        let (lb1, lb2) = ws2.apply_lk(&b, &a);
        let mix1: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let mix2: Vec<f64> = b.iter().zip(&a).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let (lm1, lm2) = ws2.apply_lk(&mix1, &mix2);
        let scale = lm1.iter().chain(&lm2).fold(1.0f64, |s, v| s.max(v.abs()));
        for c in 0..n {
            assert!((lm1[c] - 2.0 * la1[c] + 3.0 * lb1[c]).abs() < 1e-12 * scale);
            assert!((lm2[c] - 2.0 * la2[c] + 3.0 * lb2[c]).abs() < 1e-12 * scale);
        }
        // L(U, V) = ((1-p)V^p, (1-q)U^q) up to discretization
        let p = 7.0 / 3.0;
        let (r1, r2) = ws.apply_lk(&ws.w1, &ws.w2);
        let mut err: f64 = 0.0;
        for c in 0..ws.len() {
            err = err.max((r1[c] - (1.0 - p) * ws.w2[c].powf(p)).abs());
            err = err.max((r2[c] - (1.0 - p) * ws.w1[c].powf(p)).abs());
        }
        assert!(err < 0.05, "err={err}");
    }

    #[test]
    fn projected_solve_recovers_manufactured_pair() {
        let ws = two_bubble_ws(&GridSpec::default());
        let n = ws.len();
        let centers = ws.cfg.centers();
        let bump = |c: usize, w: f64| {
            let z = ws.grid.reduced_point(c);
            centers
                .iter()
                .map(|x| (-((z[0] - x[0]).powi(2) + (z[1] - x[1]).powi(2) + z[2] * z[2]) / w).exp())
                .sum::<f64>()
        };
        let mut psi1: Vec<f64> = (0..n).map(|c| bump(c, 4.0)).collect();
        let mut psi2: Vec<f64> = (0..n).map(|c| 0.5 * bump(c, 9.0)).collect();
        let gram = Matrix2::from_fn(|l, m| {
            ws.pair_inner(&ws.directions[l], (&ws.kernel[m].0, &ws.kernel[m].1))
        });
        let rhs =
            nalgebra::Vector2::from_fn(|l, _| ws.pair_inner(&ws.directions[l], (&psi1, &psi2)));
        let coef = gram.lu().solve(&rhs).unwrap();
        for m in 0..2 {
            add_scaled(&mut psi1, -coef[m], &ws.kernel[m].0);
            add_scaled(&mut psi2, -coef[m], &ws.kernel[m].1);
        }
        let (h1, h2) = ws.apply_lk(&psi1, &psi2);
        let res = solve_projected_linear(&ws, &h1, &h2).unwrap();
        let scale = psi1.iter().chain(&psi2).fold(0.0f64, |s, v| s.max(v.abs()));
        let err = res
            .phi1()
            .iter()
            .zip(&psi1)
            .chain(res.phi2().iter().zip(&psi2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-7 * scale, "err={err}");
        assert!(
            res.multipliers.iter().all(|l| l.abs() < 1e-7),
            "{:?}",
            res.multipliers
        );
        assert!(res.orthogonality_defects.iter().all(|d| *d < 1e-9));
    }

    #[test]
    fn aligned_source_is_absorbed_by_multiplier() {
        let ws = two_bubble_ws(&GridSpec::default());
        let (h1, h2) = ws.directions[0].clone();
        let res = solve_projected_linear(&ws, &h1, &h2).unwrap();
        assert!(
            (res.multipliers[0] + 1.0).abs() < 1e-7,
            "{:?}",
            res.multipliers
        );
        assert!(res.multipliers[1].abs() < 1e-7);
        assert!(res.star_norm < 1e-6, "{}", res.star_norm);
    }

    fn stability_constant(ws: &ReductionWorkspace<'_>, seed: u64) -> f64 {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        // smooth random sources: a few low modes times the ** weight
        let draw = |rng: &mut rand::rngs::StdRng| -> Vec<f64> {
            let modes: Vec<[f64; 4]> = (0..4)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(0.0..0.5),
                        rng.gen_range(0.0..0.5),
                        rng.gen_range(0.0..6.3),
                    ]
                })
                .collect();
            (0..ws.len())
                .map(|c| {
                    let z = ws.grid.reduced_point(c);
                    let m: f64 = modes
                        .iter()
                        .map(|a| a[0] * (a[1] * z[0] + a[2] * z[1] + a[3]).cos())
                        .sum();
                    ws.weight_dstar[c] * m
                })
                .collect()
        };
        for _ in 0..10 {
            let h1 = draw(&mut rng);
            let h2 = draw(&mut rng);
            let res = solve_projected_linear(ws, &h1, &h2).unwrap();
            worst = worst.max(res.star_norm / ws.dstar_norm(&h1, &h2));
        }
        worst
    }

    #[test]
    fn projected_solve_is_stable_under_refinement() {
        let coarse = stability_constant(&two_bubble_ws(&GridSpec::default()), 7);
        let fine = stability_constant(&two_bubble_ws(&GridSpec::default().refined()), 7);
        assert!(coarse.is_finite() && fine.is_finite());
        assert!(
            (fine / coarse).max(coarse / fine) < 2.0,
            "C: coarse {coarse}, fine {fine}"
        );
    }

    #[test]
    fn single_flat_bubble_is_a_fixed_point() {
        let config = flat();
        let cfg = BubbleConfig::new(5, 1, 0.0, 1.0, 1.0).unwrap();
        let opts = ContractionOptions {
            grid: GridSpec {
                r_out: Some(100.0),
                ..Default::default()
            },
            ..Default::default()
        };
        let res = solve_nonlinear_contraction_with(gs(), &cfg, &config, &opts).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.phi1().iter().chain(res.phi2()).all(|v| *v == 0.0));
        let report = verify_decay_bound(&res, gs(), &cfg);
        assert!(report.pass && report.witness.is_none());
    }

    #[test]
    fn two_bubble_contraction_and_restart() {
        let ws = two_bubble_ws(&GridSpec::default());
        let res = contraction_from(&ws, None, 1e-8, 50).unwrap();
        assert!(res.contraction_factor < 1.0);
        for w in res.contraction_history.windows(2).skip(1) {
            assert!(w[1] < w[0]);
        }
        assert!(res.equation_residual < 1e-5 * res.rk_dstar);
        let report = verify_decay_bound(&res, gs(), &ws.cfg);
        assert!(report.pass, "{report:?}");

        let d1: Vec<f64> = res.phi1().iter().map(|v| 2.0 * v).collect();
        let d2: Vec<f64> = res.phi2().iter().map(|v| 2.0 * v).collect();
        let again = contraction_from(&ws, Some((&d1, &d2)), 1e-8, 50).unwrap();
        let e1: Vec<f64> = again
            .phi1()
            .iter()
            .zip(res.phi1())
            .map(|(a, b)| a - b)
            .collect();
        let e2: Vec<f64> = again
            .phi2()
            .iter()
            .zip(res.phi2())
            .map(|(a, b)| a - b)
            .collect();
        assert!(ws.star_norm(&e1, &e2) < 1e-6 * res.star_norm);
    }

    #[test]
    fn decay_bound_finds_a_violation() {
        let ws = two_bubble_ws(&GridSpec::default());
        let sol = LinearSolution {
            phi1: ws.w1.clone(),
            phi2: vec![0.0; ws.len()],
            multipliers: [0.0; 2],
            iterations: 0,
            relative_residual: 0.0,
        };
        let res = finish(&ws, &sol, vec![1.0], vec![0], 0).unwrap();
        let report = verify_decay_bound(&res, gs(), &ws.cfg);
        assert!(!report.pass);
        assert!((report.max_ratio - 1.0).abs() < 1e-12);
        assert_eq!(report.witness.unwrap().len(), 5);
    }

    proptest! {
        #[test]
        fn binomial_remainder_is_nonnegative(w in 0.01f64..5.0, t in -0.9f64..3.0, p in 1.2f64..4.0) {
            let (v, c) = nonlinear_term(1.0, w, t * w, p);
            prop_assert!(!c);
            prop_assert!(v >= -1e-12 * w.powf(p));
        }
    }
}
