//! Primary control laws of a grid-forming inverter.
//!
//! * angle droop: `w = w0 - k_p i_oD - k_I delta + chi`
//! * DC voltage PI: `I_dc = -Lambda_P (V_dc - v_dcr) - Lambda_I zeta`, `d(zeta)/dt = V_dc - v_dcr`
//! * AC voltage/current cascade:
//!   `I_ref = -c_p (V_o - T(delta) e V_n - n_q e2 I_o) - c_I beta`,
//!   `m = -lambda_P (I v_dcr - I_ref V_dc) - lambda_I xi`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inverter::{InverterState, ModulationSignal};
use crate::network::{finite, positive};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyGains {
    /// Droop gain (rad/s per A).
    pub k_p: f64,
    /// Angle damping gain (1/s).
    pub k_i: f64,
    /// Frequency setpoint offset (rad/s); initial value when secondary control runs.
    pub chi: f64,
}

impl Default for FrequencyGains {
    fn default() -> Self {
        FrequencyGains {
            k_p: 0.06,
            k_i: 40.0,
            chi: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcGains {
    /// Proportional gain (A/V).
    pub lambda_p: f64,
    /// Integral gain (A/(V s)).
    pub lambda_i: f64,
    /// DC voltage reference (V).
    pub v_dc_ref: f64,
}

impl Default for DcGains {
    fn default() -> Self {
        DcGains {
            lambda_p: 1.0,
            lambda_i: 10.0,
            v_dc_ref: 1000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcGains {
    /// Outer voltage loop proportional gain (A/V).
    pub c_p: f64,
    /// Outer voltage loop integral gain (A/(V s)).
    pub c_i: f64,
    /// Inner loop proportional gain (1/W).
    pub lambda_p: f64,
    /// Inner loop integral gain (1/(W s)).
    pub lambda_i: f64,
    /// Voltage droop gain on the quadrature output current (ohm).
    pub n_q: f64,
    /// Nominal voltage amplitude (V).
    pub v_nominal: f64,
}

impl Default for AcGains {
    fn default() -> Self {
        AcGains {
            c_p: 1.0,
            c_i: 10.0,
            lambda_p: 1.0 / 1000.0,
            lambda_i: 25.0 / 1000.0,
            n_q: 0.078,
            v_nominal: 311.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControllerGains {
    pub frequency: FrequencyGains,
    pub dc: DcGains,
    pub ac: AcGains,
    /// Magnitude limit on the inner-loop current reference (A); `None` disables it.
    pub i_max: Option<f64>,
}

impl ControllerGains {
    /// Componentwise `self + t (other - self)`. The current limit switches to
    /// `other`'s only at `t = 1`.
    pub fn blend(&self, other: &Self, t: f64) -> Self {
        let l = |a: f64, b: f64| a + t * (b - a);
        let (f, g) = (&self.frequency, &other.frequency);
        let (d, e) = (&self.dc, &other.dc);
        let (a, b) = (&self.ac, &other.ac);
        ControllerGains {
            frequency: FrequencyGains {
                k_p: l(f.k_p, g.k_p),
                k_i: l(f.k_i, g.k_i),
                chi: l(f.chi, g.chi),
            },
            dc: DcGains {
                lambda_p: l(d.lambda_p, e.lambda_p),
                lambda_i: l(d.lambda_i, e.lambda_i),
                v_dc_ref: l(d.v_dc_ref, e.v_dc_ref),
            },
            ac: AcGains {
                c_p: l(a.c_p, b.c_p),
                c_i: l(a.c_i, b.c_i),
                lambda_p: l(a.lambda_p, b.lambda_p),
                lambda_i: l(a.lambda_i, b.lambda_i),
                n_q: l(a.n_q, b.n_q),
                v_nominal: l(a.v_nominal, b.v_nominal),
            },
            i_max: if t >= 1.0 { other.i_max } else { self.i_max },
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = &self.frequency;
        positive(&format!("{prefix}.k_p"), f.k_p)?;
        if !(f.k_i.is_finite() && f.k_i >= 0.0) {
            return Err(Error::param(format!("{prefix}.k_i"), "must be non-negative"));
        }
        finite(&format!("{prefix}.chi"), f.chi)?;
        positive(&format!("{prefix}.dc.lambda_p"), self.dc.lambda_p)?;
        positive(&format!("{prefix}.dc.lambda_i"), self.dc.lambda_i)?;
        positive(&format!("{prefix}.dc.v_dc_ref"), self.dc.v_dc_ref)?;
        let a = &self.ac;
        positive(&format!("{prefix}.ac.c_p"), a.c_p)?;
        positive(&format!("{prefix}.ac.c_i"), a.c_i)?;
        positive(&format!("{prefix}.ac.lambda_p"), a.lambda_p)?;
        positive(&format!("{prefix}.ac.lambda_i"), a.lambda_i)?;
        positive(&format!("{prefix}.ac.v_nominal"), a.v_nominal)?;
        if !(a.n_q.is_finite() && a.n_q >= 0.0) {
            return Err(Error::param(format!("{prefix}.ac.n_q"), "must be non-negative"));
        }
        if let Some(i_max) = self.i_max {
            positive(&format!("{prefix}.i_max"), i_max)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControllerState {
    /// DC integrator (V s).
    pub zeta: f64,
    /// Outer voltage loop integrator (V s).
    pub beta: Vector2<f64>,
    /// Inner power-balance integrator (W s).
    pub xi: Vector2<f64>,
}

pub fn frequency_law(i_o: Vector2<f64>, delta: f64, chi: f64, omega0: f64, g: &FrequencyGains) -> f64 {
    omega0 - g.k_p * i_o.x - g.k_i * delta + chi
}

/// Inertia and damping of the equivalent swing equation
/// `M d(delta)/dt = -D delta - i_oD + M chi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingForm {
    pub inertia: f64,
    pub damping: f64,
}

impl SwingForm {
    /// `d(delta)/dt` from the swing form.
    pub fn angle_rate(&self, i_o: Vector2<f64>, delta: f64, chi: f64) -> f64 {
        (-self.damping * delta - i_o.x + self.inertia * chi) / self.inertia
    }
}

pub fn swing_form(g: &FrequencyGains) -> Result<SwingForm> {
    positive("k_p", g.k_p)?;
    Ok(SwingForm {
        inertia: 1.0 / g.k_p,
        damping: g.k_i / g.k_p,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcOutput {
    pub i_dc: f64,
    pub zeta_dot: f64,
}

pub fn dc_law(v_dc: f64, zeta: f64, g: &DcGains) -> DcOutput {
    let err = v_dc - g.v_dc_ref;
    DcOutput {
        i_dc: -g.lambda_p * err - g.lambda_i * zeta,
        zeta_dot: err,
    }
}

/// Outer-loop error `V_o - T(delta) e V_n - n_q e2 I_o`.
pub fn voltage_error(state: &InverterState, g: &AcGains) -> Vector2<f64> {
    let (s, c) = state.delta.sin_cos();
    state.v_o - Vector2::new(c, s) * g.v_nominal - Vector2::new(g.n_q * state.i_o.y, 0.0)
}

/// Inner-loop power imbalance `I v_dcr - I_ref V_dc`.
pub fn power_imbalance(i: Vector2<f64>, i_ref: Vector2<f64>, v_dc: f64, v_dc_ref: f64) -> Vector2<f64> {
    i * v_dc_ref - i_ref * v_dc
}

/// Scales `i_ref` onto the disc of radius `i_max`; reports whether it was clamped.
pub fn current_limit(i_ref: Vector2<f64>, i_max: f64) -> (Vector2<f64>, bool) {
    let mag = i_ref.norm();
    if mag <= i_max {
        (i_ref, false)
    } else {
        (i_ref * (i_max / mag), true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcOutput {
    pub m: ModulationSignal,
    pub beta_dot: Vector2<f64>,
    pub xi_dot: Vector2<f64>,
    pub i_ref: Vector2<f64>,
    /// True when the current limit clamped the reference (outer integrator frozen).
    pub limited: bool,
}

pub fn ac_voltage_law(
    state: &InverterState,
    ctrl: &ControllerState,
    g: &AcGains,
    v_dc_ref: f64,
    i_max: Option<f64>,
) -> AcOutput {
    let err = voltage_error(state, g);
    let raw = -err * g.c_p - ctrl.beta * g.c_i;
    let (i_ref, limited) = match i_max {
        Some(lim) => current_limit(raw, lim),
        None => (raw, false),
    };
    let imbalance = power_imbalance(state.i, i_ref, state.v_dc, v_dc_ref);
    AcOutput {
        m: ModulationSignal(-imbalance * g.lambda_p - ctrl.xi * g.lambda_i),
        beta_dot: if limited { Vector2::zeros() } else { err },
        xi_dot: imbalance,
        i_ref,
        limited,
    }
}
