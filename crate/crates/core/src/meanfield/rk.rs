//! Dormand-Prince 5(4) embedded Runge-Kutta pair with FSAL and a standard
//! proportional step-size controller.

use crate::error::{Error, Result};

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControls {
    pub atol: f64,
    pub rtol: f64,
    /// Smallest step accepted before giving up, relative to `max(1, |t|)`.
    pub h_min_rel: f64,
    pub max_steps: usize,
}

impl Default for StepControls {
    fn default() -> Self {
        Self { atol: 1e-10, rtol: 1e-8, h_min_rel: 1e-13, max_steps: 50_000_000 }
    }
}

/// Integrator state; `f(t, y, dy)` writes the derivative into `dy`.
pub struct Dopri5<F: FnMut(f64, &[f64], &mut [f64])> {
    f: F,
    controls: StepControls,
    pub t: f64,
    pub y: Vec<f64>,
    k: [Vec<f64>; 7],
    ynew: Vec<f64>,
    h: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> Dopri5<F> {
    pub fn new(mut f: F, t0: f64, y0: Vec<f64>, controls: StepControls) -> Self {
        let n = y0.len();
        let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
        f(t0, &y0, &mut k[0]);
        let h = initial_step(&y0, &k[0], &controls);
        Self { f, controls, t: t0, y: y0, k, ynew: vec![0.0; n], h, accepted: 0, rejected: 0 }
    }

    fn error_norm(&self, h: f64) -> f64 {
        let n = self.y.len();
        if n == 0 {
            return 0.0;
        }
        let k = &self.k;
        let mut acc = 0.0;
        for i in 0..n {
            let e = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = self.controls.atol + self.controls.rtol * self.y[i].abs().max(self.ynew[i].abs());
            acc += (e / sc).powi(2);
        }
        (acc / n as f64).sqrt()
    }

    /// Computes the stages for step `h`; leaves the candidate in `ynew` and
    /// its derivative in `k[6]`.
    fn try_step(&mut self, h: f64) {
        let n = self.y.len();
        let t = self.t;
        let mut tmp = vec![0.0; n];
        macro_rules! stage {
            ($dst:expr, $c:expr, [$(($a:expr, $j:expr)),*]) => {{
                for i in 0..n {
                    tmp[i] = self.y[i] + h * (0.0 $(+ $a * self.k[$j][i])*);
                }
                let mut out = std::mem::take(&mut self.k[$dst]);
                (self.f)(t + $c * h, &tmp, &mut out);
                self.k[$dst] = out;
            }};
        }
        stage!(1, C2, [(A21, 0)]);
        stage!(2, C3, [(A31, 0), (A32, 1)]);
        stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
        stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
        stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
        for i in 0..n {
            self.ynew[i] = self.y[i]
                + h * (A71 * self.k[0][i]
                    + A73 * self.k[2][i]
                    + A74 * self.k[3][i]
                    + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        let mut out = std::mem::take(&mut self.k[6]);
        (self.f)(t + h, &self.ynew, &mut out);
        self.k[6] = out;
    }

    /// Advances exactly to `t_end` (which must not precede `t`).
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            if self.accepted + self.rejected >= self.controls.max_steps {
                return Err(Error::Stiffness { t: self.t, h: self.h });
            }
            let remaining = t_end - self.t;
            let last = self.h >= remaining * (1.0 - 1e-12);
            let h = if last { remaining } else { self.h };
            let h_min = self.controls.h_min_rel * self.t.abs().max(1.0);
            if h < h_min && !last {
                return Err(Error::Stiffness { t: self.t, h });
            }
            self.try_step(h);
            let err = self.error_norm(h);
            if !err.is_finite() {
                self.rejected += 1;
                self.h = h * 0.2;
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                self.t = if last { t_end } else { self.t + h };
                std::mem::swap(&mut self.y, &mut self.ynew);
                self.k.swap(0, 6);
                self.accepted += 1;
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.rejected += 1;
                self.h = h * factor.min(1.0);
            }
        }
        Ok(())
    }

    /// Replaces the state after an external modification (clamping),
    /// refreshing the cached derivative.
    pub fn reset_state(&mut self, y: Vec<f64>) {
        self.y = y;
        (self.f)(self.t, &self.y, &mut self.k[0]);
    }
}

fn initial_step(y: &[f64], dy: &[f64], c: &StepControls) -> f64 {
    let n = y.len().max(1) as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (a, b) in y.iter().zip(dy) {
        let sc = c.atol + c.rtol * a.abs();
        d0 += (a / sc).powi(2);
        d1 += (b / sc).powi(2);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut rk = Dopri5::new(|_, y, dy| dy[0] = -2.0 * y[0], 0.0, vec![1.0], StepControls::default());
        rk.advance_to(3.0).unwrap();
        assert_eq!(rk.t, 3.0);
        assert!((rk.y[0] - (-6.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_keeps_energy() {
        let controls = StepControls { atol: 1e-12, rtol: 1e-12, ..StepControls::default() };
        let mut rk = Dopri5::new(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            vec![1.0, 0.0],
            controls,
        );
        rk.advance_to(std::f64::consts::TAU).unwrap();
        assert!((rk.y[0] - 1.0).abs() < 1e-9 && rk.y[1].abs() < 1e-9);
    }

    #[test]
    fn step_cap_reports_stiffness() {
        let controls = StepControls { max_steps: 10, ..StepControls::default() };
        let mut rk = Dopri5::new(|_, y, dy| dy[0] = -1e6 * y[0], 0.0, vec![1.0], controls);
        assert!(matches!(rk.advance_to(1.0), Err(Error::Stiffness { .. })));
    }

    #[test]
    fn time_dependent_field() {
        let mut rk = Dopri5::new(|t, _, dy| dy[0] = t.cos(), 0.0, vec![0.0], StepControls::default());
        rk.advance_to(2.0).unwrap();
        assert!((rk.y[0] - 2.0f64.sin()).abs() < 1e-8);
    }
}
