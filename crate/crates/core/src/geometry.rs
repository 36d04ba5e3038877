//! Horizontal slit configurations and the standard slit domain they bound.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for on-slit membership and geometric degeneracy tests.
pub const EPS_GEOM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("slit {0} has nonpositive height")]
    NonpositiveHeight(usize),
    #[error("slit {0} is empty (left endpoint not below right endpoint)")]
    EmptySlit(usize),
    #[error("slits {0} and {1} overlap at equal height")]
    OverlapAtEqualHeight(usize, usize),
    #[error("raw slit vector length {0} is not a multiple of 3")]
    BadLength(usize),
    #[error("slit {0} has a non-finite coordinate")]
    NonFinite(usize),
}

/// One horizontal segment `[x + iy, xr + iy]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slit {
    pub y: f64,
    pub x: f64,
    pub xr: f64,
}

impl Slit {
    pub fn left(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }

    pub fn right(&self) -> Complex64 {
        Complex64::new(self.xr, self.y)
    }

    pub fn len(&self) -> f64 {
        self.xr - self.x
    }

    /// Euclidean distance from `z` to the closed segment.
    pub fn dist(&self, z: Complex64) -> f64 {
        let dx = if z.re < self.x {
            self.x - z.re
        } else if z.re > self.xr {
            z.re - self.xr
        } else {
            0.0
        };
        dx.hypot(z.im - self.y)
    }

    /// Distance between two closed horizontal segments.
    pub fn dist_to(&self, other: &Slit) -> f64 {
        let gap = (other.x - self.xr).max(self.x - other.xr).max(0.0);
        gap.hypot(self.y - other.y)
    }
}

/// A point of the configuration space: N pairwise disjoint horizontal slits in
/// the upper half-plane. Indices in errors are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Slit>")]
pub struct SlitVector {
    slits: Vec<Slit>,
}

impl From<SlitVector> for Vec<Slit> {
    fn from(s: SlitVector) -> Self {
        s.slits
    }
}

impl<'de> Deserialize<'de> for SlitVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<Slit>::deserialize(d)?;
        SlitVector::from_slits(raw).map_err(serde::de::Error::custom)
    }
}

impl SlitVector {
    pub fn empty() -> Self {
        SlitVector { slits: Vec::new() }
    }

    pub fn from_slits(slits: Vec<Slit>) -> Result<Self, GeometryError> {
        for (j, sl) in slits.iter().enumerate() {
            if !(sl.y.is_finite() && sl.x.is_finite() && sl.xr.is_finite()) {
                return Err(GeometryError::NonFinite(j + 1));
            }
            if sl.y <= 0.0 {
                return Err(GeometryError::NonpositiveHeight(j + 1));
            }
            if sl.x >= sl.xr {
                return Err(GeometryError::EmptySlit(j + 1));
            }
        }
        for j in 0..slits.len() {
            for k in j + 1..slits.len() {
                let (a, b) = (&slits[j], &slits[k]);
                if a.y == b.y && !(a.xr < b.x || b.xr < a.x) {
                    return Err(GeometryError::OverlapAtEqualHeight(j + 1, k + 1));
                }
            }
        }
        Ok(SlitVector { slits })
    }

    /// Validates the packed coordinates `(y_1..y_N, x_1..x_N, xr_1..xr_N)`.
    pub fn validate(raw: &[f64]) -> Result<Self, GeometryError> {
        if raw.len() % 3 != 0 {
            return Err(GeometryError::BadLength(raw.len()));
        }
        let n = raw.len() / 3;
        let slits = (0..n)
            .map(|j| Slit {
                y: raw[j],
                x: raw[n + j],
                xr: raw[2 * n + j],
            })
            .collect();
        Self::from_slits(slits)
    }

    pub fn n(&self) -> usize {
        self.slits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slits.is_empty()
    }

    pub fn slits(&self) -> &[Slit] {
        &self.slits
    }

    pub fn slit(&self, j: usize) -> &Slit {
        &self.slits[j]
    }

    /// Packed coordinates in the order heights, left ends, right ends.
    pub fn to_vec(&self) -> Vec<f64> {
        let n = self.n();
        let mut v = vec![0.0; 3 * n];
        for (j, sl) in self.slits.iter().enumerate() {
            v[j] = sl.y;
            v[n + j] = sl.x;
            v[2 * n + j] = sl.xr;
        }
        v
    }

    pub fn min_height(&self) -> f64 {
        self.slits.iter().map(|s| s.y).fold(f64::INFINITY, f64::min)
    }

    /// Distance from the boundary point `xi` to the nearest slit.
    pub fn distance_r(&self, xi: f64) -> f64 {
        let z = Complex64::new(xi, 0.0);
        self.slits
            .iter()
            .map(|s| s.dist(z))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest distance between two distinct slits (infinite for N < 2).
    pub fn min_separation(&self) -> f64 {
        let mut m = f64::INFINITY;
        for j in 0..self.n() {
            for k in j + 1..self.n() {
                m = m.min(self.slits[j].dist_to(&self.slits[k]));
            }
        }
        m
    }

    pub fn translate(&self, c: f64) -> SlitVector {
        SlitVector {
            slits: self
                .slits
                .iter()
                .map(|s| Slit {
                    y: s.y,
                    x: s.x + c,
                    xr: s.xr + c,
                })
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> SlitVector {
        assert!(c > 0.0, "scale factor must be positive");
        SlitVector {
            slits: self
                .slits
                .iter()
                .map(|s| Slit {
                    y: s.y * c,
                    x: s.x * c,
                    xr: s.xr * c,
                })
                .collect(),
        }
    }

    /// Dilation by `c` about the real point `x0`.
    pub fn scale_about(&self, c: f64, x0: f64) -> SlitVector {
        assert!(c > 0.0, "scale factor must be positive");
        SlitVector {
            slits: self
                .slits
                .iter()
                .map(|s| Slit {
                    y: s.y * c,
                    x: x0 + (s.x - x0) * c,
                    xr: x0 + (s.xr - x0) * c,
                })
                .collect(),
        }
    }

    /// Membership in the slit domain: upper half-plane minus the closed slits.
    pub fn contains(&self, z: Complex64) -> bool {
        z.im > EPS_GEOM && self.slits.iter().all(|s| s.dist(z) > EPS_GEOM)
    }

    /// Distance from `z` to the nearest slit or mirrored slit.
    pub fn dist_to_slits_and_mirrors(&self, z: Complex64) -> f64 {
        let zc = z.conj();
        self.slits
            .iter()
            .map(|s| s.dist(z).min(s.dist(zc)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest distance between two endpoints (zero for N = 0).
    pub fn diameter(&self) -> f64 {
        let pts: Vec<Complex64> = self
            .slits
            .iter()
            .flat_map(|s| [s.left(), s.right()])
            .collect();
        let mut d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    /// Largest modulus of a slit point.
    pub fn extent(&self) -> f64 {
        self.slits
            .iter()
            .map(|s| s.left().norm().max(s.right().norm()))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> SlitVector {
        SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap()
    }

    #[test]
    fn validation_examples() {
        assert!(SlitVector::validate(&[1.0, -1.0, 1.0]).is_ok());
        assert!(SlitVector::validate(&[1.0, 1.0, -2.0, 0.5, -0.5, 2.0]).is_ok());
        assert_eq!(
            SlitVector::validate(&[1.0, 1.0, -1.0, 0.0, 0.5, 2.0]),
            Err(GeometryError::OverlapAtEqualHeight(1, 2))
        );
        assert_eq!(
            SlitVector::validate(&[0.0, -1.0, 1.0]),
            Err(GeometryError::NonpositiveHeight(1))
        );
        assert_eq!(
            SlitVector::validate(&[1.0, 1.0, 1.0]),
            Err(GeometryError::EmptySlit(1))
        );
        assert_eq!(
            SlitVector::validate(&[1.0, 2.0]),
            Err(GeometryError::BadLength(2))
        );
    }

    #[test]
    fn nested_slits_allowed() {
        assert!(SlitVector::validate(&[1.0, 2.0, -1.0, -1.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn distance_examples() {
        let s = one();
        assert_eq!(s.distance_r(0.0), 1.0);
        assert!((s.distance_r(2.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn translate_and_scale_examples() {
        let s = one();
        assert_eq!(s.translate(2.0).to_vec(), vec![1.0, 1.0, 3.0]);
        assert_eq!(s.scale(2.0).to_vec(), vec![2.0, -2.0, 2.0]);
        assert_eq!(s.scale(1.0), s);
    }

    #[test]
    fn membership() {
        let s = one();
        assert!(s.contains(Complex64::new(0.0, 2.0)));
        assert!(!s.contains(Complex64::new(0.0, 1.0)));
        assert!(!s.contains(Complex64::new(0.0, -1.0)));
        assert!(!s.contains(Complex64::new(5.0, 0.0)));
    }

    #[test]
    fn json_round_trip_validates() {
        let s = one();
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(js, r#"[{"y":1.0,"x":-1.0,"xr":1.0}]"#);
        let back: SlitVector = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        let bad = r#"[{"y":1.0,"x":-1.0,"xr":0.5},{"y":1.0,"x":0.0,"xr":2.0}]"#;
        assert!(serde_json::from_str::<SlitVector>(bad).is_err());
    }
}
