//! Quadrature over R^N for integrands invariant under the polygon symmetry
//! group that depend on y'' only through |y''|.
//!
//! The fundamental wedge 0 <= θ <= π/k (θ the polar angle of (y₁, y₂)) is
//! parametrised by spherical coordinates about x₁ = (r, 0, …):
//! y = x₁ + ρ(cos a, sin a cos b, sin a sin b·η), η ∈ S^{N-3},
//! with a ∈ [0, π], b ∈ [0, π/2] and every ray cut at the bisector plane
//! between x₁ and x₂. The whole-space integral is 2k times the wedge integral.
//! For k >= 2 the rule needs r > 0.

use std::f64::consts::PI;

use crate::quadrature::{sphere_area, Rule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorResolution {
    /// First radial break, in units of 1/λ.
    pub rho_first: f64,
    /// Ratio of consecutive radial breaks.
    pub ratio: f64,
    pub radial_order: usize,
    pub a_panels: usize,
    pub b_panels: usize,
    pub angular_order: usize,
    /// Rays stop at far_factor·(r + 20/λ).
    pub far_factor: f64,
}

impl Default for SectorResolution {
    fn default() -> Self {
        SectorResolution {
            rho_first: 0.05,
            ratio: 1.3,
            radial_order: 8,
            a_panels: 8,
            b_panels: 4,
            angular_order: 8,
            far_factor: 100.0,
        }
    }
}

impl SectorResolution {
    /// A cheap rule for tests and previews.
    pub fn coarse() -> Self {
        SectorResolution {
            ratio: 1.6,
            radial_order: 6,
            a_panels: 4,
            b_panels: 2,
            angular_order: 6,
            ..Default::default()
        }
    }

    /// Every panel split in two.
    pub fn refined(&self) -> Self {
        SectorResolution {
            ratio: self.ratio.sqrt(),
            a_panels: 2 * self.a_panels,
            b_panels: 2 * self.b_panels,
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
pub struct SectorRule {
    pub n: usize,
    pub k: usize,
    pub r: f64,
    pub lambda: f64,
    pub res: SectorResolution,
}

impl SectorRule {
    pub fn new(n: usize, k: usize, r: f64, lambda: f64, res: SectorResolution) -> Self {
        SectorRule {
            n,
            k,
            r,
            lambda,
            res,
        }
    }

    pub fn far_radius(&self) -> f64 {
        self.res.far_factor * (self.r + 20.0 / self.lambda)
    }

    fn radial_breaks(&self) -> Vec<f64> {
        let far = self.far_radius();
        let mut b = vec![0.0];
        let mut x = self.res.rho_first / self.lambda;
        while x < far {
            b.push(x);
            x *= self.res.ratio;
        }
        b.push(far);
        b
    }

    /// Calls `f(z, w)` for reduced points z = (y₁, y₂, |y''|) with weights
    /// such that Σ w·g(z) approximates ∫_{R^N} g.
    pub fn for_each(&self, mut f: impl FnMut(&[f64; 3], f64)) {
        let nf = self.n as f64;
        let factor = 2.0 * self.k as f64 * sphere_area(self.n - 2);
        let breaks_a: Vec<f64> = (0..=self.res.a_panels)
            .map(|i| PI * i as f64 / self.res.a_panels as f64)
            .collect();
        let breaks_b: Vec<f64> = (0..=self.res.b_panels)
            .map(|i| 0.5 * PI * i as f64 / self.res.b_panels as f64)
            .collect();
        let ra = Rule::composite(&breaks_a, self.res.angular_order);
        let rb = Rule::composite(&breaks_b, self.res.angular_order);
        let base = self.radial_breaks();
        let (gl_x, gl_w) = crate::quadrature::gauss_legendre(self.res.radial_order);
        let half = PI / self.k as f64;
        let (sh, ch) = (half.sin(), half.cos());
        let mut breaks = Vec::with_capacity(base.len() + 1);
        for (&a, &wa) in ra.nodes.iter().zip(&ra.weights) {
            let (sa, ca) = a.sin_cos();
            for (&b, &wb) in rb.nodes.iter().zip(&rb.weights) {
                let (sb, cb) = b.sin_cos();
                let dir = [ca, sa * cb, sa * sb];
                let wang =
                    factor * wa * wb * sa.powi(self.n as i32 - 2) * sb.powi(self.n as i32 - 3);
                let cg = sh * dir[0] - ch * dir[1];
                let rho_max = if self.k >= 2 && cg < 0.0 {
                    (-sh * self.r / cg).min(*base.last().unwrap())
                } else {
                    *base.last().unwrap()
                };
                breaks.clear();
                for &x in &base {
                    if x < rho_max {
                        breaks.push(x);
                    }
                }
                breaks.push(rho_max);
                for w in breaks.windows(2) {
                    let (lo, hi) = (w[0], w[1]);
                    let (mid, hw) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                    for (&x, &wx) in gl_x.iter().zip(&gl_w) {
                        let rho = mid + hw * x;
                        let z = [self.r + rho * dir[0], rho * dir[1], rho * dir[2]];
                        f(&z, wang * hw * wx * rho.powf(nf - 1.0));
                    }
                }
            }
        }
    }

    pub fn integrate(&self, mut g: impl FnMut(&[f64; 3]) -> f64) -> f64 {
        let mut s = 0.0;
        self.for_each(|z, w| s += w * g(z));
        s
    }

    pub fn len(&self) -> usize {
        let mut c = 0;
        self.for_each(|_, _| c += 1);
        c
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_gaussians_and_wedge_volumes() {
        // ∫ exp(-|y|²) = π^{N/2}
        for k in [1usize] {
            let rule = SectorRule::new(5, k, 0.0, 1.0, SectorResolution::default());
            let v = rule.integrate(|z| (-(z[0] * z[0] + z[1] * z[1] + z[2] * z[2])).exp());
            assert!((v / PI.powf(2.5) - 1.0).abs() < 1e-10, "k={k} v={v}");
        }
        // off-centre Gaussian around x₁ summed over the polygon
        for (k, r) in [(2usize, 2.0), (4, 3.0), (7, 5.0)] {
            let rule = SectorRule::new(5, k, r, 1.0, SectorResolution::default());
            let v = rule.integrate(|z| {
                (0..k)
                    .map(|j| {
                        let t = 2.0 * PI * j as f64 / k as f64;
                        let d2 = (z[0] - r * t.cos()).powi(2)
                            + (z[1] - r * t.sin()).powi(2)
                            + z[2] * z[2];
                        (-d2).exp()
                    })
                    .sum()
            });
            assert!(
                (v / (k as f64 * PI.powf(2.5)) - 1.0).abs() < 1e-9,
                "k={k} v={v}"
            );
        }
    }
}
