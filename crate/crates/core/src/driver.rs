//! Deterministic driving functions `t ↦ ξ(t)`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DriverError {
    #[error("driver table times must be strictly increasing (index {0})")]
    NonIncreasing(usize),
    #[error("driver table needs at least one sample and matching lengths")]
    BadTable,
    #[error("driver table starts at {0}, not at t = 0")]
    LateStart(f64),
}

/// Closed-form or tabulated driver. Tables are piecewise linear and held
/// constant beyond their last sample.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeterministicDriver {
    Constant {
        value: f64,
    },
    Linear {
        xi0: f64,
        rate: f64,
    },
    /// `offset + amplitude · sin(omega t + phase)`
    Sine {
        offset: f64,
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    /// `c · base(t / c²)`, the driver of a configuration scaled by `c`.
    Scaled {
        c: f64,
        base: Box<DeterministicDriver>,
    },
    /// `base(t) + c`
    Shifted {
        c: f64,
        base: Box<DeterministicDriver>,
    },
    #[serde(skip)]
    Closure(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for DeterministicDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeterministicDriver::Closure(_) => write!(f, "Closure(..)"),
            DeterministicDriver::Constant { value } => write!(f, "Constant({value})"),
            DeterministicDriver::Linear { xi0, rate } => write!(f, "Linear({xi0} + {rate} t)"),
            DeterministicDriver::Sine {
                offset,
                amplitude,
                omega,
                phase,
            } => write!(f, "Sine({offset} + {amplitude} sin({omega} t + {phase}))"),
            DeterministicDriver::Table { times, .. } => write!(f, "Table({} samples)", times.len()),
            DeterministicDriver::Scaled { c, base } => write!(f, "Scaled({c}, {base:?})"),
            DeterministicDriver::Shifted { c, base } => write!(f, "Shifted({c}, {base:?})"),
        }
    }
}

impl DeterministicDriver {
    pub fn constant(value: f64) -> Self {
        DeterministicDriver::Constant { value }
    }

    pub fn table(times: Vec<f64>, values: Vec<f64>) -> Result<Self, DriverError> {
        let d = DeterministicDriver::Table { times, values };
        d.validate()?;
        Ok(d)
    }

    pub fn closure(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        DeterministicDriver::Closure(Arc::new(f))
    }

    pub fn scaled(self, c: f64) -> Self {
        DeterministicDriver::Scaled { c, base: Box::new(self) }
    }

    pub fn shifted(self, c: f64) -> Self {
        DeterministicDriver::Shifted { c, base: Box::new(self) }
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        match self {
            DeterministicDriver::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(DriverError::BadTable);
                }
                if times[0] > 0.0 {
                    return Err(DriverError::LateStart(times[0]));
                }
                for k in 1..times.len() {
                    if times[k] <= times[k - 1] {
                        return Err(DriverError::NonIncreasing(k));
                    }
                }
                Ok(())
            }
            DeterministicDriver::Scaled { base, .. } | DeterministicDriver::Shifted { base, .. } => {
                base.validate()
            }
            _ => Ok(()),
        }
    }

    pub fn xi(&self, t: f64) -> f64 {
        match self {
            DeterministicDriver::Constant { value } => *value,
            DeterministicDriver::Linear { xi0, rate } => xi0 + rate * t,
            DeterministicDriver::Sine {
                offset,
                amplitude,
                omega,
                phase,
            } => offset + amplitude * (omega * t + phase).sin(),
            DeterministicDriver::Table { times, values } => interp_linear(times, values, t),
            DeterministicDriver::Scaled { c, base } => c * base.xi(t / (c * c)),
            DeterministicDriver::Shifted { c, base } => base.xi(t) + c,
            DeterministicDriver::Closure(f) => f(t),
        }
    }
}

impl DeterministicDriver {
    /// `ξ'(t)`. Tables return the slope of the segment to the right of `t`
    /// (left if `right` is false); closures use a central difference.
    pub fn xi_dot(&self, t: f64, right: bool) -> f64 {
        match self {
            DeterministicDriver::Constant { .. } => 0.0,
            DeterministicDriver::Linear { rate, .. } => *rate,
            DeterministicDriver::Sine {
                amplitude,
                omega,
                phase,
                ..
            } => amplitude * omega * (omega * t + phase).cos(),
            DeterministicDriver::Table { times, values } => slope_linear(times, values, t, right),
            DeterministicDriver::Scaled { c, base } => base.xi_dot(t / (c * c), right) / c,
            DeterministicDriver::Shifted { base, .. } => base.xi_dot(t, right),
            DeterministicDriver::Closure(f) => {
                let h = 1e-5 * (1.0 + t.abs());
                (f(t + h) - f(t - h)) / (2.0 * h)
            }
        }
    }
}

fn slope_linear(times: &[f64], values: &[f64], t: f64, right: bool) -> f64 {
    let n = times.len();
    if n < 2 || t < times[0] || t > times[n - 1] || (right && t == times[n - 1]) || (!right && t == times[0]) {
        return 0.0;
    }
    let k = if right {
        times.partition_point(|&s| s <= t) - 1
    } else {
        times.partition_point(|&s| s < t) - 1
    };
    (values[k + 1] - values[k]) / (times[k + 1] - times[k])
}

/// Piecewise-linear interpolation, constant outside the sampled range.
pub fn interp_linear(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let k = times.partition_point(|&s| s <= t) - 1;
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    values[k] + w * (values[k + 1] - values[k])
}
