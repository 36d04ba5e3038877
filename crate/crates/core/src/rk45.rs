//! Dormand–Prince 5(4) stepping with FSAL and cubic Hermite dense output.
//!
//! The stepper is driven externally one accepted step at a time, so callers
//! can run event checks (explosion, swallowing) between steps. A failing
//! right-hand side or an inadmissible trial state counts as a rejected step.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Rk45Options {
            rtol: 1e-8,
            atol: 1e-10,
            h_min: 1e-12,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Outcome of [`Rk45::step`].
#[derive(Debug)]
pub enum StepError<E> {
    /// Step size fell below `h_min`; carries the last right-hand-side error
    /// if rejections were caused by one.
    Underflow { t: f64, h: f64, last: Option<E> },
}

#[derive(Debug, Clone)]
pub struct Rk45 {
    pub opts: Rk45Options,
    pub t: f64,
    pub y: Vec<f64>,
    /// derivative at `(t, y)`
    pub f: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 6],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    fnew: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Rk45 {
    pub fn new(t: f64, y: Vec<f64>, f: Vec<f64>, h0: f64, opts: Rk45Options) -> Self {
        let n = y.len();
        Rk45 {
            opts,
            t,
            f,
            h: h0,
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            fnew: vec![0.0; n],
            y,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Heuristic starting step from the scale of `y` and `f`.
    pub fn initial_step(y: &[f64], f: &[f64], opts: &Rk45Options, cap: f64) -> f64 {
        let sc = |i: usize| opts.atol + opts.rtol * y[i].abs();
        let n = y.len().max(1) as f64;
        let d0 = (y.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (f.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(cap).max(opts.h_min)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Attempts steps until one is accepted. `cap` bounds the step size,
    /// `weights` selects components that enter the error norm (all if None),
    /// and `admissible` vets each trial state.
    pub fn step<E>(
        &mut self,
        rhs: &mut impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
        cap: f64,
        t_end: f64,
        weights: Option<&[bool]>,
        admissible: &mut impl FnMut(f64, &[f64]) -> bool,
    ) -> Result<(), StepError<E>> {
        let n = self.y.len();
        let mut last_err = None;
        loop {
            let mut h = self.h.min(cap);
            let mut last_step = false;
            if self.t + h >= t_end {
                h = t_end - self.t;
                last_step = true;
            }
            if h < self.opts.h_min && !last_step {
                return Err(StepError::Underflow {
                    t: self.t,
                    h,
                    last: last_err,
                });
            }
            match self.trial(rhs, h, admissible) {
                Err(e) => {
                    last_err = e;
                    self.rejected += 1;
                    self.h = 0.25 * h;
                    continue;
                }
                Ok(()) => {}
            }
            let mut err_sum = 0.0;
            let mut count = 0usize;
            for i in 0..n {
                if weights.is_some_and(|w| !w[i]) {
                    continue;
                }
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.fnew[i]);
                let sc = self.opts.atol + self.opts.rtol * self.y[i].abs().max(self.ynew[i].abs());
                err_sum += (e / sc).powi(2);
                count += 1;
            }
            let err = if count > 0 { (err_sum / count as f64).sqrt() } else { 0.0 };
            if err <= 1.0 {
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                self.t = if last_step { t_end } else { self.t + h };
                std::mem::swap(&mut self.y, &mut self.ynew);
                std::mem::swap(&mut self.f, &mut self.fnew);
                self.h = if last_step { self.h } else { h * fac };
                self.accepted += 1;
                return Ok(());
            }
            self.rejected += 1;
            self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }

    /// Computes stages and the fifth-order proposal into `ynew`/`fnew`.
    /// `Err(Some(e))` on a failing right-hand side, `Err(None)` when a
    /// trial state is inadmissible.
    fn trial<E>(
        &mut self,
        rhs: &mut impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
        h: f64,
        admissible: &mut impl FnMut(f64, &[f64]) -> bool,
    ) -> Result<(), Option<E>> {
        let n = self.y.len();
        let t = self.t;
        let y = &self.y;
        self.k[0].copy_from_slice(&self.f);
        let stages: [(f64, &[f64]); 5] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
        ];
        for (s, (c, a)) in stages.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, aj) in a.iter().enumerate() {
                    acc += aj * self.k[j][i];
                }
                self.ytmp[i] = y[i] + h * acc;
            }
            if !admissible(t + c * h, &self.ytmp) {
                return Err(None);
            }
            let (head, tail) = self.k.split_at_mut(s + 1);
            let _ = head;
            rhs(t + c * h, &self.ytmp, &mut tail[0]).map_err(Some)?;
        }
        for i in 0..n {
            self.ynew[i] = y[i]
                + h * (B1 * self.k[0][i]
                    + B3 * self.k[2][i]
                    + B4 * self.k[3][i]
                    + B5 * self.k[4][i]
                    + B6 * self.k[5][i]);
        }
        if !admissible(t + h, &self.ynew) {
            return Err(None);
        }
        rhs(t + h, &self.ynew, &mut self.fnew).map_err(Some)?;
        Ok(())
    }
}

/// Cubic Hermite interpolation between `(t0, y0, f0)` and `(t1, y1, f1)`.
pub fn hermite(t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64], t: f64, out: &mut [f64]) {
    let h = t1 - t0;
    if h == 0.0 {
        out.copy_from_slice(y0);
        return;
    }
    let s = (t - t0) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    for i in 0..out.len() {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(
        mut rhs: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), ()>,
        y0: Vec<f64>,
        t_end: f64,
    ) -> Rk45 {
        let mut f0 = vec![0.0; y0.len()];
        rhs(0.0, &y0, &mut f0).unwrap();
        let opts = Rk45Options::default();
        let h0 = Rk45::initial_step(&y0, &f0, &opts, 1.0);
        let mut st = Rk45::new(0.0, y0, f0, h0, opts);
        while st.t < t_end {
            st.step(&mut rhs, f64::INFINITY, t_end, None, &mut |_, _| true).unwrap();
        }
        st
    }

    #[test]
    fn exponential_decay() {
        let st = integrate(
            |_, y, d| {
                d[0] = -y[0];
                Ok(())
            },
            vec![1.0],
            2.0,
        );
        assert!((st.y[0] - (-2.0f64).exp()).abs() < 1e-9);
        assert_eq!(st.t, 2.0);
    }

    #[test]
    fn harmonic_oscillator() {
        let st = integrate(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
                Ok(())
            },
            vec![1.0, 0.0],
            10.0,
        );
        assert!((st.y[0] - 10f64.cos()).abs() < 1e-7);
        assert!((st.y[1] + 10f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn inadmissible_states_shrink_the_step() {
        let mut f0 = vec![-1.0];
        let mut rhs = |_: f64, _: &[f64], d: &mut [f64]| -> Result<(), ()> {
            d[0] = -1.0;
            Ok(())
        };
        rhs(0.0, &[1.0], &mut f0).unwrap();
        let mut st = Rk45::new(0.0, vec![1.0], f0, 10.0, Rk45Options::default());
        st.step(&mut rhs, f64::INFINITY, 10.0, None, &mut |_, y| y[0] > 0.0)
            .unwrap();
        assert!(st.y[0] > 0.0 && st.rejected > 0);
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let p = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t * t * t;
        let dp = |t: f64| 2.0 - 2.0 * t + 1.5 * t * t;
        let mut out = [0.0];
        hermite(0.5, &[p(0.5)], &[dp(0.5)], 2.0, &[p(2.0)], &[dp(2.0)], 1.3, &mut out);
        assert!((out[0] - p(1.3)).abs() < 1e-14);
    }
}
