//! Average model of a grid-forming inverter in the common DQ frame: DC bus,
//! LC filter and coupling inductor.
//!
//! ```text
//! d(delta)/dt = w - w0
//! C_dc dV_dc/dt = -G_dc V_dc + I_dc - 1/2 I^T m
//! L_f  dI/dt    = (-R_f + w0 L_f J) I + 1/2 V_dc m - V_o
//! C_f  dV_o/dt  = (-G_s + w0 C_f J) V_o + I - I_o
//! L_c  dI_o/dt  = (-R_c + w0 L_c J) I_o + V_o - V_b
//! ```

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::j_mul;
use crate::network::positive;

/// Physical states per inverter: angle, DC voltage and three 2-vectors.
pub const PHYSICAL_STATES: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverterParams {
    /// Filter resistance (ohm).
    pub rf: f64,
    /// Filter inductance (H).
    pub lf: f64,
    /// Filter capacitance (F).
    pub cf: f64,
    /// Filter capacitor shunt conductance (S).
    pub gs: f64,
    /// Coupling resistance (ohm).
    pub rc: f64,
    /// Coupling inductance (H).
    pub lc: f64,
    /// DC-link capacitance (F).
    pub cdc: f64,
    /// DC-link conductance (S).
    pub gdc: f64,
}

impl Default for InverterParams {
    fn default() -> Self {
        InverterParams {
            rf: 0.1,
            lf: 5e-3,
            cf: 50e-6,
            gs: 3e-3,
            rc: 0.2,
            lc: 2e-3,
            cdc: 10e-3,
            gdc: 10e-3,
        }
    }
}

impl InverterParams {
    /// Componentwise `self + t (other - self)`.
    pub fn blend(&self, other: &Self, t: f64) -> Self {
        let l = |a: f64, b: f64| a + t * (b - a);
        InverterParams {
            rf: l(self.rf, other.rf),
            lf: l(self.lf, other.lf),
            cf: l(self.cf, other.cf),
            gs: l(self.gs, other.gs),
            rc: l(self.rc, other.rc),
            lc: l(self.lc, other.lc),
            cdc: l(self.cdc, other.cdc),
            gdc: l(self.gdc, other.gdc),
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (name, v) in [
            ("rf", self.rf),
            ("lf", self.lf),
            ("cf", self.cf),
            ("gs", self.gs),
            ("rc", self.rc),
            ("lc", self.lc),
            ("cdc", self.cdc),
            ("gdc", self.gdc),
        ] {
            positive(&format!("{prefix}.{name}"), v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InverterState {
    /// Frame angle (rad).
    pub delta: f64,
    /// DC-link voltage (V).
    pub v_dc: f64,
    /// Filter inductor current (A).
    pub i: Vector2<f64>,
    /// Filter capacitor voltage (V).
    pub v_o: Vector2<f64>,
    /// Output current (A).
    pub i_o: Vector2<f64>,
}

/// Time derivatives, same shape as [`InverterState`].
pub type InverterDerivatives = InverterState;

/// Modulation index in the DQ frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModulationSignal(pub Vector2<f64>);

impl ModulationSignal {
    pub fn magnitude(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_overmodulated(&self) -> bool {
        self.magnitude() > 1.0
    }
}

pub fn inverter_derivatives(
    state: &InverterState,
    m: ModulationSignal,
    i_dc: f64,
    v_bus: Vector2<f64>,
    omega: f64,
    omega0: f64,
    p: &InverterParams,
) -> InverterDerivatives {
    let m = m.0;
    let (i, v_o, i_o) = (state.i, state.v_o, state.i_o);
    InverterState {
        delta: omega - omega0,
        v_dc: (-p.gdc * state.v_dc + i_dc - 0.5 * i.dot(&m)) / p.cdc,
        i: (-i * p.rf + j_mul(i) * (omega0 * p.lf) + m * (0.5 * state.v_dc) - v_o) / p.lf,
        v_o: (-v_o * p.gs + j_mul(v_o) * (omega0 * p.cf) + i - i_o) / p.cf,
        i_o: (-i_o * p.rc + j_mul(i_o) * (omega0 * p.lc) + v_o - v_bus) / p.lc,
    }
}

/// Power drawn from the DC link by the switching stage, `v_dc * (1/2 i^T m)`.
pub fn dc_port_power(state: &InverterState, m: ModulationSignal) -> f64 {
    state.v_dc * 0.5 * state.i.dot(&m.0)
}

/// Power delivered into the filter inductor port, `(1/2 v_dc m)^T i`.
pub fn ac_port_power(state: &InverterState, m: ModulationSignal) -> f64 {
    (m.0 * (0.5 * state.v_dc)).dot(&state.i)
}

/// Stacks physical inverter states as `[delta, V_dc, I, V_o, I_o]` blocks.
pub fn stack_inverters(states: &[InverterState], expected: usize) -> Result<Vec<f64>> {
    if states.len() != expected {
        return Err(Error::Dimension(format!(
            "{} inverter states for {expected} inverters",
            states.len()
        )));
    }
    let n = states.len();
    let mut x = vec![0.0; PHYSICAL_STATES * n];
    for (k, s) in states.iter().enumerate() {
        x[k] = s.delta;
        x[n + k] = s.v_dc;
        for (off, v) in [(2 * n, s.i), (4 * n, s.v_o), (6 * n, s.i_o)] {
            x[off + 2 * k] = v.x;
            x[off + 2 * k + 1] = v.y;
        }
    }
    Ok(x)
}

pub fn unstack_inverters(x: &[f64]) -> Result<Vec<InverterState>> {
    if x.len() % PHYSICAL_STATES != 0 {
        return Err(Error::Dimension(format!(
            "stacked inverter vector of length {} is not a multiple of {PHYSICAL_STATES}",
            x.len()
        )));
    }
    let n = x.len() / PHYSICAL_STATES;
    let v = |off: usize, k: usize| Vector2::new(x[off + 2 * k], x[off + 2 * k + 1]);
    Ok((0..n)
        .map(|k| InverterState {
            delta: x[k],
            v_dc: x[n + k],
            i: v(2 * n, k),
            v_o: v(4 * n, k),
            i_o: v(6 * n, k),
        })
        .collect())
}
