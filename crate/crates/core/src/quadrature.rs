//! Gauss rules, sphere constants and radial integrals.

use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// A 1-D rule as (node, weight) pairs.
#[derive(Debug, Clone, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Composite Gauss–Legendre rule with `order` points on each panel.
    pub fn composite(breaks: &[f64], order: usize) -> Rule {
        let (x, w) = gauss_legendre(order);
        let mut rule = Rule::default();
        for win in breaks.windows(2) {
            let (a, b) = (win[0], win[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (xi, wi) in x.iter().zip(&w) {
                rule.nodes.push(mid + half * xi);
                rule.weights.push(half * wi);
            }
        }
        rule
    }

    pub fn gauss(a: f64, b: f64, order: usize) -> Rule {
        Rule::composite(&[a, b], order)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Surface area ω_{d-1} of the unit sphere in R^d.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * (h * PI.ln() - ln_gamma(h)).exp()
}

/// Mean of |ω₁|^m over the unit sphere in R^d.
pub fn angular_moment(d: usize, m: f64) -> f64 {
    let h = d as f64 / 2.0;
    (ln_gamma(h) + ln_gamma((m + 1.0) / 2.0) - 0.5 * PI.ln() - ln_gamma((d as f64 + m) / 2.0)).exp()
}

/// ∫₀^R r^power f(r) dr on log-spaced Gauss panels, plus an optional power-law
/// tail f(r) ~ f(R)(R/r)^decay integrated analytically beyond R.
pub fn radial_integral(
    f: impl Fn(f64) -> f64,
    power: f64,
    r_max: f64,
    tail_decay: Option<f64>,
) -> f64 {
    let r_min = 1e-4_f64.min(r_max / 10.0);
    let head = Rule::gauss(0.0, r_min, 12).integrate(|r| r.powf(power) * f(r));
    let (t0, t1) = (r_min.ln(), r_max.ln());
    let panels = ((t1 - t0) / 0.1).ceil().max(1.0) as usize;
    let breaks: Vec<f64> = (0..=panels)
        .map(|i| t0 + (t1 - t0) * i as f64 / panels as f64)
        .collect();
    let body = Rule::composite(&breaks, 8).integrate(|t| {
        let r = t.exp();
        r.powf(power + 1.0) * f(r)
    });
    let tail = match tail_decay {
        Some(g) if g > power + 1.0 => f(r_max) * r_max.powf(power + 1.0) / (g - power - 1.0),
        _ => 0.0,
    };
    head + body + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_exact_for_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let num: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(xi, wi)| wi * xi.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((num - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn sphere_constants() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-13);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
        for d in 3..9 {
            assert!((angular_moment(d, 2.0) - 1.0 / d as f64).abs() < 1e-14);
            assert!((angular_moment(d, 0.0) - 1.0).abs() < 1e-14);
        }
        // E|x|^4 on S^2 = 1/5
        assert!((angular_moment(3, 4.0) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn radial_integral_with_tail() {
        // ∫₀^∞ r^4 (1+r²)^{-5} dr = B(5/2, 5/2)/2 = 3π/256
        let exact = 3.0 * PI / 256.0;
        let num = radial_integral(|r| (1.0 + r * r).powi(-5), 4.0, 1e3, Some(10.0));
        assert!((num - exact).abs() < 1e-12 * exact.max(1.0));
    }
}
