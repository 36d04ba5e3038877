//! Graded panel layout on each slit.
//!
//! Each slit is cut into panels whose lengths follow a local feature scale
//! `ℓ(x) = min_k (s_k + |x − x_k|)` built from attractors: the foot of the
//! pole, the tips (limited by the mirror image at distance `2y` and by nearby
//! slits) and the projections of other slits' tips. End panels carry the
//! square-root tip substitution.

use crate::geometry::{Slit, SlitVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PanelKind {
    /// `x = m + (h/2) t`
    Interior,
    /// `x = a + h ((1 + t)/2)²`, tip at `a`
    LeftTip,
    /// `x = b − h ((1 + t)/2)²`, tip at `b`
    RightTip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub slit: usize,
    pub kind: PanelKind,
    pub a: f64,
    pub b: f64,
    pub y: f64,
}

impl Panel {
    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    /// Physical abscissa of reference point `t ∈ [-1, 1]`.
    pub fn x_at(&self, t: f64) -> f64 {
        let h = self.b - self.a;
        match self.kind {
            PanelKind::Interior => 0.5 * (self.a + self.b) + 0.5 * h * t,
            PanelKind::LeftTip => {
                let u = 0.5 * (1.0 + t);
                self.a + h * u * u
            }
            PanelKind::RightTip => {
                let u = 0.5 * (1.0 + t);
                self.b - h * u * u
            }
        }
    }

    /// Distance from `z` to the panel segment placed at height `y_line`.
    pub fn dist(&self, z: Complex64, y_line: f64) -> f64 {
        Slit {
            y: y_line,
            x: self.a,
            xr: self.b,
        }
        .dist(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutParams {
    /// Panel length relative to the local feature scale.
    pub eta: f64,
    /// Upper bound on a panel's share of its slit.
    pub max_frac: f64,
}

struct Attractor {
    x: f64,
    s: f64,
}

fn attractors(s: &SlitVector, xi: f64, j: usize) -> Vec<Attractor> {
    let sl = s.slit(j);
    let pole = Complex64::new(xi, 0.0);
    let mut out = vec![Attractor {
        x: xi.clamp(sl.x, sl.xr),
        s: sl.dist(pole),
    }];
    let tip_scale = |tip: Complex64| {
        let mut sc = (2.0 * sl.y).min(sl.len()).min((tip - pole).norm());
        for (k, other) in s.slits().iter().enumerate() {
            let mirror = Slit {
                y: -other.y,
                ..*other
            };
            if k != j {
                sc = sc.min(other.dist(tip));
            }
            sc = sc.min(mirror.dist(tip));
        }
        sc
    };
    let sa = tip_scale(sl.left());
    let sb = tip_scale(sl.right());
    out.push(Attractor { x: sl.x, s: sa });
    out.push(Attractor { x: sl.xr, s: sb });
    for (k, other) in s.slits().iter().enumerate() {
        if k == j {
            continue;
        }
        for tip in [other.left(), other.right()] {
            for t in [tip, tip.conj()] {
                out.push(Attractor {
                    x: t.re.clamp(sl.x, sl.xr),
                    s: sl.dist(t),
                });
            }
        }
    }
    out
}

fn local_scale(att: &[Attractor], x: f64) -> f64 {
    att.iter()
        .map(|a| a.s + (x - a.x).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Breakpoints `a = x_0 < … < x_n = b` for slit `j`.
pub fn breakpoints(s: &SlitVector, xi: f64, j: usize, p: LayoutParams) -> Vec<f64> {
    let sl = s.slit(j);
    let (a, b) = (sl.x, sl.xr);
    let len = b - a;
    let att = attractors(s, xi, j);
    let hmax = p.max_frac * len;
    let step = |x: f64| (p.eta * local_scale(&att, x) / (1.0 + p.eta)).min(hmax);
    // (full steps before reaching b, fraction of the last step used)
    let march = |lam: f64, max_steps: usize| -> (usize, f64) {
        let mut x = a;
        for k in 0..max_steps {
            let h = lam * step(x);
            if x + h >= b {
                return (k, (b - x) / h);
            }
            x += h;
        }
        (max_steps, f64::INFINITY)
    };
    let (k0, frac) = march(1.0, 100_000);
    let n = (k0 + usize::from(frac > 1e-9)).max(2);
    // shrink the step factor until exactly n panels fit
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (k, _) = march(mid, n + 1);
        if k >= n {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let lam = hi;
    let mut pts = Vec::with_capacity(n + 1);
    let mut x = a;
    pts.push(a);
    for _ in 0..n - 1 {
        x += lam * step(x);
        if x >= b {
            break;
        }
        pts.push(x);
    }
    pts.push(b);
    pts
}

pub fn layout(s: &SlitVector, xi: f64, p: LayoutParams) -> Vec<Panel> {
    let mut panels = Vec::new();
    for j in 0..s.n() {
        let pts = breakpoints(s, xi, j, p);
        let n = pts.len() - 1;
        let y = s.slit(j).y;
        for k in 0..n {
            let kind = if k == 0 {
                PanelKind::LeftTip
            } else if k == n - 1 {
                PanelKind::RightTip
            } else {
                PanelKind::Interior
            };
            panels.push(Panel {
                slit: j,
                kind,
                a: pts[k],
                b: pts[k + 1],
                y,
            });
        }
    }
    panels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LayoutParams {
        LayoutParams {
            eta: 2.0,
            max_frac: 0.5,
        }
    }

    #[test]
    fn far_slit_gets_two_panels() {
        let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
        let pts = breakpoints(&s, 0.0, 0, params());
        assert!(pts.len() >= 3);
        assert_eq!(pts[0], -1.0);
        assert_eq!(*pts.last().unwrap(), 1.0);
    }

    #[test]
    fn low_slit_is_graded_toward_foot_and_tips() {
        let s = SlitVector::validate(&[1e-3, -1.0, 1.0]).unwrap();
        let pts = breakpoints(&s, 0.0, 0, params());
        let widths: Vec<f64> = pts.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(widths[0] < 0.01, "tip panel {}", widths[0]);
        assert!(*widths.last().unwrap() < 0.01);
        let near_foot = widths
            .iter()
            .zip(pts.iter())
            .filter(|(_, &x)| x.abs() < 0.01)
            .count();
        assert!(near_foot >= 1);
        assert!(pts.len() < 200);
    }

    #[test]
    fn layout_is_scale_and_translation_covariant() {
        let s = SlitVector::validate(&[0.3, 0.7, -1.0, -0.2, 1.0, 0.9]).unwrap();
        let base = layout(&s, 0.1, params());
        let moved = layout(&s.scale(2.0).translate(0.5), 0.1 * 2.0 + 0.5, params());
        assert_eq!(base.len(), moved.len());
        for (p, q) in base.iter().zip(&moved) {
            assert_eq!(p.kind, q.kind);
            assert!((2.0 * p.a + 0.5 - q.a).abs() < 1e-12);
            assert!((2.0 * p.b + 0.5 - q.b).abs() < 1e-12);
        }
    }

    #[test]
    fn breakpoints_increase() {
        let s = SlitVector::validate(&[0.05, 0.06, -1.0, -0.5, 1.0, 2.0]).unwrap();
        for j in 0..2 {
            let pts = breakpoints(&s, 0.2, j, params());
            assert!(pts.windows(2).all(|w| w[1] > w[0]));
        }
    }
}
