//! The monolithic closed-loop vector field: inverters, primary controllers,
//! secondary layer and network.
//!
//! State layout for `n` active inverters, `b` buses and `e` lines:
//!
//! ```text
//! [ delta(n) zeta(n) V_dc(n) I(2n) V_o(2n) I_o(2n) beta(2n) xi(2n) | chi(n) | V_b(2b) I_line(2e) I_load(2b) I_cpl(2b) ]
//! ```
//!
//! The first `13n` entries follow the ordering of the linearized inverter
//! model.

use nalgebra::{DMatrix, Vector2};

use crate::controllers::{ac_voltage_law, dc_law, frequency_law, ControllerGains, ControllerState};
use crate::error::{Error, Result};
use crate::inverter::{inverter_derivatives, InverterParams, InverterState, ModulationSignal};
use crate::linalg::{get2, put2};
use crate::model::{InverterSpec, MicrogridSpec};
use crate::network::{network_rhs, NetworkParams, NetworkState};
use crate::secondary::secondary_rhs;

/// States per inverter in the linearized ordering.
pub const UNIT_STATES: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateLayout {
    pub inverters: usize,
    pub buses: usize,
    pub edges: usize,
}

impl StateLayout {
    pub fn len(&self) -> usize {
        14 * self.inverters + 6 * self.buses + 2 * self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delta(&self, k: usize) -> usize {
        k
    }
    pub fn zeta(&self, k: usize) -> usize {
        self.inverters + k
    }
    pub fn v_dc(&self, k: usize) -> usize {
        2 * self.inverters + k
    }
    pub fn i(&self, k: usize) -> usize {
        3 * self.inverters + 2 * k
    }
    pub fn v_o(&self, k: usize) -> usize {
        5 * self.inverters + 2 * k
    }
    pub fn i_o(&self, k: usize) -> usize {
        7 * self.inverters + 2 * k
    }
    pub fn beta(&self, k: usize) -> usize {
        9 * self.inverters + 2 * k
    }
    pub fn xi(&self, k: usize) -> usize {
        11 * self.inverters + 2 * k
    }
    pub fn chi(&self, k: usize) -> usize {
        13 * self.inverters + k
    }
    /// Offset of the network block.
    pub fn network(&self) -> usize {
        14 * self.inverters
    }
    pub fn v_bus(&self, b: usize) -> usize {
        self.network() + 2 * b
    }
    pub fn i_line(&self, z: usize) -> usize {
        self.network() + 2 * self.buses + 2 * z
    }
    pub fn i_load(&self, b: usize) -> usize {
        self.network() + 2 * self.buses + 2 * self.edges + 2 * b
    }
    pub fn i_cpl(&self, b: usize) -> usize {
        self.network() + 4 * self.buses + 2 * self.edges + 2 * b
    }

    /// Human-readable name of state `idx` (1-based element numbers).
    pub fn state_name(&self, idx: usize) -> String {
        let n = self.inverters;
        let pair = |base: usize, name: &str| {
            let off = idx - base;
            format!("{name}{}[{}]", if off % 2 == 0 { "_D" } else { "_Q" }, off / 2 + 1)
        };
        let single = |base: usize, name: &str| format!("{name}[{}]", idx - base + 1);
        let net = self.network();
        match idx {
            _ if idx < n => single(0, "delta"),
            _ if idx < 2 * n => single(n, "zeta"),
            _ if idx < 3 * n => single(2 * n, "v_dc"),
            _ if idx < 5 * n => pair(3 * n, "i"),
            _ if idx < 7 * n => pair(5 * n, "v_o"),
            _ if idx < 9 * n => pair(7 * n, "i_o"),
            _ if idx < 11 * n => pair(9 * n, "beta"),
            _ if idx < 13 * n => pair(11 * n, "xi"),
            _ if idx < 14 * n => single(13 * n, "chi"),
            _ if idx < self.i_line(0) => pair(net, "v_bus"),
            _ if idx < self.i_load(0) => pair(self.i_line(0), "i_line"),
            _ if idx < self.i_cpl(0) => pair(self.i_load(0), "i_load"),
            _ if idx < self.len() => pair(self.i_cpl(0), "i_cpl"),
            _ => format!("out-of-range[{idx}]"),
        }
    }
}

/// Inverter, controller and secondary states of one unit.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UnitState {
    pub inverter: InverterState,
    pub controller: ControllerState,
    pub chi: f64,
}

impl UnitState {
    /// `[delta, zeta, V_dc, I, V_o, I_o, beta, xi]`.
    pub fn to_local(&self) -> [f64; UNIT_STATES] {
        let (s, c) = (&self.inverter, &self.controller);
        [
            s.delta, c.zeta, s.v_dc, s.i.x, s.i.y, s.v_o.x, s.v_o.y, s.i_o.x, s.i_o.y, c.beta.x, c.beta.y,
            c.xi.x, c.xi.y,
        ]
    }

    pub fn from_local(x: &[f64; UNIT_STATES], chi: f64) -> Self {
        UnitState {
            inverter: InverterState {
                delta: x[0],
                v_dc: x[2],
                i: Vector2::new(x[3], x[4]),
                v_o: Vector2::new(x[5], x[6]),
                i_o: Vector2::new(x[7], x[8]),
            },
            controller: ControllerState {
                zeta: x[1],
                beta: Vector2::new(x[9], x[10]),
                xi: Vector2::new(x[11], x[12]),
            },
            chi,
        }
    }
}

/// A full closed-loop state vector together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub layout: StateLayout,
    pub x: Vec<f64>,
}

impl SystemState {
    pub fn zeros(layout: StateLayout) -> Self {
        SystemState {
            layout,
            x: vec![0.0; layout.len()],
        }
    }

    pub fn unit(&self, k: usize) -> UnitState {
        read_unit(&self.layout, &self.x, k)
    }

    pub fn set_unit(&mut self, k: usize, u: &UnitState) {
        let l = self.layout;
        let x = &mut self.x;
        x[l.delta(k)] = u.inverter.delta;
        x[l.zeta(k)] = u.controller.zeta;
        x[l.v_dc(k)] = u.inverter.v_dc;
        for (off, v) in [
            (l.i(k), u.inverter.i),
            (l.v_o(k), u.inverter.v_o),
            (l.i_o(k), u.inverter.i_o),
            (l.beta(k), u.controller.beta),
            (l.xi(k), u.controller.xi),
        ] {
            x[off] = v.x;
            x[off + 1] = v.y;
        }
        x[l.chi(k)] = u.chi;
    }

    pub fn units(&self) -> Vec<UnitState> {
        (0..self.layout.inverters).map(|k| self.unit(k)).collect()
    }

    pub fn v_bus(&self, b: usize) -> Vector2<f64> {
        get2(&self.x[self.layout.v_bus(b)..], 0)
    }

    pub fn network(&self, params: &NetworkParams) -> Result<NetworkState> {
        NetworkState::from_slice(params, &self.x[self.layout.network()..])
    }

    pub fn set_network(&mut self, net: &NetworkState) {
        let off = self.layout.network();
        let v = net.to_vec();
        self.x[off..off + v.len()].copy_from_slice(&v);
    }
}

pub(crate) fn read_unit(l: &StateLayout, x: &[f64], k: usize) -> UnitState {
    let v = |off: usize| Vector2::new(x[off], x[off + 1]);
    UnitState {
        inverter: InverterState {
            delta: x[l.delta(k)],
            v_dc: x[l.v_dc(k)],
            i: v(l.i(k)),
            v_o: v(l.v_o(k)),
            i_o: v(l.i_o(k)),
        },
        controller: ControllerState {
            zeta: x[l.zeta(k)],
            beta: v(l.beta(k)),
            xi: v(l.xi(k)),
        },
        chi: x[l.chi(k)],
    }
}

/// Algebraic signals of a unit at a given state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UnitOutputs {
    pub omega: f64,
    pub m: ModulationSignal,
    pub i_dc: f64,
    pub i_ref: Vector2<f64>,
    pub limited: bool,
    /// Active output power `V_o . I_o` (W).
    pub p: f64,
    /// Reactive output power `v_oQ i_oD - v_oD i_oQ` (var).
    pub q: f64,
}

/// Inverter plus primary-controller field of one unit for a given bus voltage.
/// The `chi` entry of the returned derivative is zero (set by the secondary layer).
pub fn unit_field(
    params: &InverterParams,
    gains: &ControllerGains,
    omega0: f64,
    u: &UnitState,
    v_bus: Vector2<f64>,
) -> (UnitState, UnitOutputs) {
    let s = &u.inverter;
    let omega = frequency_law(s.i_o, s.delta, u.chi, omega0, &gains.frequency);
    let dc = dc_law(s.v_dc, u.controller.zeta, &gains.dc);
    let ac = ac_voltage_law(s, &u.controller, &gains.ac, gains.dc.v_dc_ref, gains.i_max);
    let d = inverter_derivatives(s, ac.m, dc.i_dc, v_bus, omega, omega0, params);
    let deriv = UnitState {
        inverter: d,
        controller: ControllerState {
            zeta: dc.zeta_dot,
            beta: ac.beta_dot,
            xi: ac.xi_dot,
        },
        chi: 0.0,
    };
    let out = UnitOutputs {
        omega,
        m: ac.m,
        i_dc: dc.i_dc,
        i_ref: ac.i_ref,
        limited: ac.limited,
        p: s.v_o.dot(&s.i_o),
        q: s.v_o.y * s.i_o.x - s.v_o.x * s.i_o.y,
    };
    (deriv, out)
}

/// Diagnostic counts from one vector-field evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RhsInfo {
    pub overmodulated: usize,
    pub cpl_clamped: usize,
    pub current_limited: usize,
}

#[derive(Clone, Debug)]
struct SecondaryLayer {
    alpha: f64,
    laplacian: DMatrix<f64>,
}

/// Closed-loop vector field for a fixed set of active inverters.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    network: NetworkParams,
    units: Vec<InverterSpec>,
    ids: Vec<usize>,
    secondary: Option<SecondaryLayer>,
    layout: StateLayout,
    bus_units: Vec<Vec<usize>>,
}

impl ClosedLoop {
    /// Builds the field for `active` inverters of `spec` (indices into
    /// `spec.inverters`), with or without the secondary layer.
    pub fn new(spec: &MicrogridSpec, active: &[usize], secondary_on: bool) -> Result<Self> {
        Self::with_network(spec, spec.network.clone(), active, secondary_on)
    }

    /// As [`ClosedLoop::new`] but with network parameters replacing those of `spec`.
    pub fn with_network(
        spec: &MicrogridSpec,
        network: NetworkParams,
        active: &[usize],
        secondary_on: bool,
    ) -> Result<Self> {
        if active.is_empty() {
            return Err(Error::EmptySystem);
        }
        let mut units = Vec::with_capacity(active.len());
        for &k in active {
            let inv = spec.inverters.get(k).ok_or(Error::OutOfRange {
                what: "inverter",
                index: k,
                count: spec.inverters.len(),
            })?;
            units.push(inv.clone());
        }
        let mut bus_units = vec![Vec::new(); network.bus_count()];
        for (k, u) in units.iter().enumerate() {
            bus_units[u.bus].push(k);
        }
        let secondary = if secondary_on {
            Some(SecondaryLayer {
                alpha: spec.secondary.alpha,
                laplacian: spec.comm_laplacian(active)?,
            })
        } else {
            None
        };
        let layout = StateLayout {
            inverters: units.len(),
            buses: network.bus_count(),
            edges: network.graph.edge_count(),
        };
        Ok(ClosedLoop {
            network,
            units,
            ids: active.to_vec(),
            secondary,
            layout,
            bus_units,
        })
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    /// Indices into the spec's inverter list, in state order.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn units(&self) -> &[InverterSpec] {
        &self.units
    }

    pub fn network(&self) -> &NetworkParams {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut NetworkParams {
        &mut self.network
    }

    pub fn secondary_active(&self) -> bool {
        self.secondary.is_some()
    }

    pub fn omega0(&self) -> f64 {
        self.network.omega0
    }

    pub fn rhs(&self, x: &[f64], dx: &mut [f64]) -> RhsInfo {
        let l = &self.layout;
        let n = l.inverters;
        let mut info = RhsInfo::default();
        let w0 = self.network.omega0;
        let net_off = l.network();
        for (k, spec) in self.units.iter().enumerate() {
            let u = read_unit(l, x, k);
            let v_bus = get2(&x[l.v_bus(spec.bus)..], 0);
            let (d, out) = unit_field(&spec.params, &spec.gains, w0, &u, v_bus);
            info.overmodulated += out.m.is_overmodulated() as usize;
            info.current_limited += out.limited as usize;
            dx[l.delta(k)] = d.inverter.delta;
            dx[l.zeta(k)] = d.controller.zeta;
            dx[l.v_dc(k)] = d.inverter.v_dc;
            put2(&mut dx[l.i(k)..], 0, d.inverter.i);
            put2(&mut dx[l.v_o(k)..], 0, d.inverter.v_o);
            put2(&mut dx[l.i_o(k)..], 0, d.inverter.i_o);
            put2(&mut dx[l.beta(k)..], 0, d.controller.beta);
            put2(&mut dx[l.xi(k)..], 0, d.controller.xi);
        }
        let (chi_dx, net_dx) = dx[13 * n..].split_at_mut(n);
        match &self.secondary {
            Some(sec) => secondary_rhs(
                &x[13 * n..14 * n],
                |j| self.units[j].gains.frequency.k_i * x[j],
                sec.alpha,
                &sec.laplacian,
                chi_dx,
            ),
            None => chi_dx.fill(0.0),
        }
        info.cpl_clamped = network_rhs(
            &self.network,
            &x[net_off..],
            |b| {
                self.bus_units[b]
                    .iter()
                    .map(|&k| get2(&x[l.i_o(k)..], 0))
                    .sum()
            },
            net_dx,
        );
        info
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        self.rhs(x, &mut dx);
        dx
    }

    /// Storage weights: `1` for angles and integrators, `C`/`L` for physical states.
    pub fn mass(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut m = vec![1.0; l.len()];
        for (k, u) in self.units.iter().enumerate() {
            m[l.v_dc(k)] = u.params.cdc;
            m[l.i(k)..l.i(k) + 2].fill(u.params.lf);
            m[l.v_o(k)..l.v_o(k) + 2].fill(u.params.cf);
            m[l.i_o(k)..l.i_o(k) + 2].fill(u.params.lc);
        }
        m[l.network()..].copy_from_slice(&self.network.mass());
        m
    }

    /// Euclidean norm of the mass-weighted derivative.
    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        self.eval(x)
            .iter()
            .zip(self.mass())
            .map(|(d, m)| (d * m) * (d * m))
            .sum::<f64>()
            .sqrt()
    }

    pub fn outputs(&self, x: &[f64], k: usize) -> UnitOutputs {
        let spec = &self.units[k];
        let u = read_unit(&self.layout, x, k);
        let v_bus = get2(&x[self.layout.v_bus(spec.bus)..], 0);
        unit_field(&spec.params, &spec.gains, self.network.omega0, &u, v_bus).1
    }

    /// Flat start: nominal voltages, zero currents and integrators, DC links at
    /// their references, `chi` at the configured setpoints.
    pub fn flat_start(&self) -> SystemState {
        let mut s = SystemState::zeros(self.layout);
        for (k, spec) in self.units.iter().enumerate() {
            s.set_unit(k, &flat_unit(spec));
        }
        for b in 0..self.layout.buses {
            let off = self.layout.v_bus(b);
            s.x[off] = self.network.nominal_voltage;
        }
        s
    }
}

pub(crate) fn flat_unit(spec: &InverterSpec) -> UnitState {
    UnitState {
        inverter: InverterState {
            v_dc: spec.gains.dc.v_dc_ref,
            v_o: Vector2::new(spec.gains.ac.v_nominal, 0.0),
            ..Default::default()
        },
        chi: spec.gains.frequency.chi,
        ..Default::default()
    }
}
