//! Gauss–Legendre rules and product integration against logarithmic kernels.
//!
//! Near-field integrals `∫ p(t) log(c − t) dt` over `[-1, 1]` for polynomial
//! `p` are computed from closed-form monomial moments; far-field ones fall back
//! to an oversampled Gauss rule.

use num_complex::Complex64;
use std::sync::OnceLock;

#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> GaussRule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `∫_{-1}^{1} t^m dt`.
pub fn monomial_integral(m: usize) -> f64 {
    if m % 2 == 0 {
        2.0 / (m as f64 + 1.0)
    } else {
        0.0
    }
}

/// Bernstein ellipse parameter of `c` relative to `[-1, 1]` (1 on the interval).
pub fn bernstein_rho(c: Complex64) -> f64 {
    let one = Complex64::new(1.0, 0.0);
    let s = (c - one).sqrt() * (c + one).sqrt();
    (c + s).norm().max((c - s).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    /// `log(c − t)`
    CMinusT,
    /// `log(t − c)`
    TMinusC,
}

/// Panel-level rule: interpolation nodes plus the data needed for product
/// integration of degree `n − 1` polynomials against log kernels.
#[derive(Debug)]
pub struct PanelRule {
    pub gauss: GaussRule,
    fine: GaussRule,
}

impl PanelRule {
    pub fn new(n: usize) -> Self {
        let gauss = gauss_legendre(n);
        PanelRule {
            gauss,
            fine: gauss_legendre(3 * n),
        }
    }

    pub fn n(&self) -> usize {
        self.gauss.nodes.len()
    }

    /// Moments `∫ t^k L(t) dt`, `k < n`, of `L = log(c − t)` or `log(t − c)`.
    pub fn log_moments(&self, c: Complex64, kind: LogKind, out: &mut [Complex64]) {
        let n = self.n();
        if bernstein_rho(c) > 2.0 {
            out[..n].iter_mut().for_each(|m| *m = Complex64::new(0.0, 0.0));
            for (&t, &w) in self.fine.nodes.iter().zip(&self.fine.weights) {
                let l = match kind {
                    LogKind::CMinusT => Complex64::new(c.re - t, c.im).ln(),
                    LogKind::TMinusC => Complex64::new(t - c.re, -c.im).ln(),
                };
                let mut tk = w;
                for m in out[..n].iter_mut() {
                    *m += l * tk;
                    tk *= t;
                }
            }
            return;
        }
        let (l_hi, l_lo) = match kind {
            LogKind::CMinusT => (
                Complex64::new(c.re - 1.0, c.im),
                Complex64::new(c.re + 1.0, c.im),
            ),
            LogKind::TMinusC => (
                Complex64::new(1.0 - c.re, -c.im),
                Complex64::new(-1.0 - c.re, -c.im),
            ),
        };
        let log_hi = l_hi.ln();
        let log_lo = l_lo.ln();
        let hi_zero = l_hi.norm() == 0.0;
        let lo_zero = l_lo.norm() == 0.0;
        let mut ck = Complex64::new(1.0, 0.0); // c^(k+1) built incrementally
        let mut sign = -1.0; // (-1)^(k+1)
        // running sum S_k = Σ_{m=0}^{k} c^{k-m} μ_m = c·S_{k-1} + μ_k
        let mut s = Complex64::new(0.0, 0.0);
        for (k, m) in out[..n].iter_mut().enumerate() {
            ck *= c;
            let kp1 = (k + 1) as f64;
            let mut b = Complex64::new(0.0, 0.0);
            if !hi_zero {
                b += (Complex64::new(1.0, 0.0) - ck) * log_hi;
            }
            if !lo_zero {
                b -= (Complex64::new(sign, 0.0) - ck) * log_lo;
            }
            s = s * c + monomial_integral(k);
            *m = (b - s) / kp1;
            sign = -sign;
        }
    }

    /// Product weights `λ_i` with `Σ λ_i p(t_i) = ∫ p(t) L(t) dt` for all
    /// polynomials of degree below `n`, given the moments of `L`. Solves the
    /// transposed Vandermonde system by Björck–Pereyra, which stays accurate
    /// where multiplying by the explicit inverse does not.
    pub fn weights_from_moments(&self, moments: &[Complex64], out: &mut [Complex64]) {
        let x = &self.gauss.nodes;
        let n = x.len();
        out[..n].copy_from_slice(&moments[..n]);
        let b = &mut out[..n];
        for k in 0..n - 1 {
            for i in (k + 1..n).rev() {
                b[i] = b[i] - b[i - 1] * x[k];
            }
        }
        for k in (0..n - 1).rev() {
            for i in k + 1..n {
                b[i] /= x[i] - x[i - k - 1];
            }
            for i in k..n - 1 {
                b[i] = b[i] - b[i + 1];
            }
        }
    }
}

/// Shared 16-point panel rule.
pub fn panel_rule() -> &'static PanelRule {
    static RULE: OnceLock<PanelRule> = OnceLock::new();
    RULE.get_or_init(|| PanelRule::new(16))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Gauss–Kronrod-free reference: composite Gauss on a geometric
    /// mesh refined toward the real projection of `c`.
    fn brute(f: impl Fn(f64) -> Complex64, c_re: f64) -> Complex64 {
        let g = gauss_legendre(20);
        let mut breaks = vec![-1.0, 1.0];
        let p = c_re.clamp(-1.0, 1.0);
        for k in 0..40 {
            let d = 2f64.powi(-k);
            for q in [p - d, p + d] {
                if q > -1.0 && q < 1.0 {
                    breaks.push(q);
                }
            }
        }
        breaks.push(p);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        let mut acc = Complex64::new(0.0, 0.0);
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (m, h) = ((a + b) / 2.0, (b - a) / 2.0);
            for (&x, &wt) in g.nodes.iter().zip(&g.weights) {
                acc += f(m + h * x) * (wt * h);
            }
        }
        acc
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let g = gauss_legendre(16);
        for m in 0..32 {
            let q: f64 = g
                .nodes
                .iter()
                .zip(&g.weights)
                .map(|(t, w)| w * t.powi(m as i32))
                .sum();
            assert!((q - monomial_integral(m)).abs() < 1e-14, "m={m}");
        }
        let sum: f64 = g.weights.iter().sum();
        assert!((sum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn moments_match_brute_force() {
        let rule = panel_rule();
        let cs = [
            Complex64::new(0.3, 0.01),
            Complex64::new(0.3, -0.2),
            Complex64::new(-0.999, 1e-6),
            Complex64::new(1.2, 0.3),
            Complex64::new(0.5, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(3.0, 2.0),
            Complex64::new(-1.6, 0.0),
        ];
        let mut m = vec![Complex64::new(0.0, 0.0); 16];
        for &c in &cs {
            for kind in [LogKind::CMinusT, LogKind::TMinusC] {
                rule.log_moments(c, kind, &mut m);
                for k in 0..16 {
                    let f = |t: f64| {
                        let l = match kind {
                            LogKind::CMinusT => Complex64::new(c.re - t, c.im).ln(),
                            LogKind::TMinusC => Complex64::new(t - c.re, -c.im).ln(),
                        };
                        l * t.powi(k as i32)
                    };
                    let r = brute(f, c.re);
                    assert!(
                        (m[k] - r).norm() < 1e-12 * (1.0 + r.norm()),
                        "c={c} kind={kind:?} k={k}: {} vs {}",
                        m[k],
                        r
                    );
                }
            }
        }
    }

    #[test]
    fn product_weights_integrate_smooth_density() {
        let rule = panel_rule();
        let dens = |t: f64| (1.3 * t).cos() + 0.2 * t * t;
        let vals: Vec<f64> = rule.gauss.nodes.iter().map(|&t| dens(t)).collect();
        let mut m = vec![Complex64::new(0.0, 0.0); 16];
        let mut lam = vec![Complex64::new(0.0, 0.0); 16];
        for c in [
            Complex64::new(0.1, 1e-3),
            Complex64::new(-0.7, -0.05),
            Complex64::new(0.95, 1e-8),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.4, 0.9),
        ] {
            rule.log_moments(c, LogKind::CMinusT, &mut m);
            rule.weights_from_moments(&m, &mut lam);
            let q: Complex64 = lam.iter().zip(&vals).map(|(l, v)| l * v).sum();
            let r = brute(|t| Complex64::new(c.re - t, c.im).ln() * dens(t), c.re);
            assert!((q - r).norm() < 2e-14, "{q} vs {r}");
        }
    }

    #[test]
    fn bernstein_parameter() {
        assert!((bernstein_rho(Complex64::new(0.0, 0.0)) - 1.0).abs() < 1e-15);
        let c = Complex64::new(0.0, 0.75);
        assert!((bernstein_rho(c) - 2.0).abs() < 1e-14);
        assert!((bernstein_rho(Complex64::new(1.25, 0.0)) - 2.0).abs() < 1e-14);
    }
}
