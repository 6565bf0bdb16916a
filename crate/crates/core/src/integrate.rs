//! Explicit Runge-Kutta steppers: classical fixed-step RK4 and the
//! Dormand-Prince 5(4) pair with embedded error estimate.

/// Scratch buffers for [`rk4_step`].
#[derive(Clone, Debug)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Rk4Workspace {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// Advances `x` by one RK4 step of size `h` for the autonomous field `f`.
/// Returns whatever `f` reported at the first stage.
pub fn rk4_step<R>(f: &mut impl FnMut(&[f64], &mut [f64]) -> R, x: &mut [f64], h: f64, w: &mut Rk4Workspace) -> R {
    let n = x.len();
    let r = f(x, &mut w.k1);
    for i in 0..n {
        w.tmp[i] = x[i] + 0.5 * h * w.k1[i];
    }
    f(&w.tmp, &mut w.k2);
    for i in 0..n {
        w.tmp[i] = x[i] + 0.5 * h * w.k2[i];
    }
    f(&w.tmp, &mut w.k3);
    for i in 0..n {
        w.tmp[i] = x[i] + h * w.k3[i];
    }
    f(&w.tmp, &mut w.k4);
    for i in 0..n {
        x[i] += h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    }
    r
}

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

/// Adaptive Dormand-Prince 5(4) stepper with FSAL reuse.
#[derive(Clone, Debug)]
pub struct Dopri5 {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_min: f64,
    pub h_max: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    fsal_valid: bool,
}

impl Dopri5 {
    pub fn new(n: usize, abs_tol: f64, rel_tol: f64, h_max: f64) -> Self {
        Dopri5 {
            abs_tol,
            rel_tol,
            h_min: 1e-12,
            h_max,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            fsal_valid: false,
        }
    }

    /// Forgets the cached first stage (call after the field or state changes
    /// discontinuously).
    pub fn reset(&mut self) {
        self.fsal_valid = false;
    }

    /// Attempts steps from `x` until one of size at most `h` is accepted.
    /// Returns `(step taken, suggested next step)`, or `None` when the step
    /// size fell below `h_min`.
    pub fn step(
        &mut self,
        f: &mut impl FnMut(&[f64], &mut [f64]),
        x: &mut [f64],
        mut h: f64,
    ) -> Option<(f64, f64)> {
        let n = x.len();
        if !self.fsal_valid {
            f(x, &mut self.k[0]);
            self.fsal_valid = true;
        }
        loop {
            if h < self.h_min {
                return None;
            }
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let tmp = &mut self.tmp;
            for i in 0..n {
                tmp[i] = x[i] + h * A21 * k1[i];
            }
            f(tmp, k2);
            for i in 0..n {
                tmp[i] = x[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(tmp, k3);
            for i in 0..n {
                tmp[i] = x[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(tmp, k4);
            for i in 0..n {
                tmp[i] = x[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(tmp, k5);
            for i in 0..n {
                tmp[i] = x[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(tmp, k6);
            for i in 0..n {
                tmp[i] = x[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            f(tmp, k7);
            let mut err = 0.0;
            for i in 0..n {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.abs_tol + self.rel_tol * x[i].abs().max(tmp[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / n as f64).sqrt();
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 && err.is_finite() {
                x.copy_from_slice(tmp);
                self.k.swap(0, 6);
                return Some((h, (h * factor).min(self.h_max)));
            }
            h *= if err.is_finite() { factor.min(1.0) } else { 0.2 };
        }
    }
}
