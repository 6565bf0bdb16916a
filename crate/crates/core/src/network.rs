//! Electrical network: graph topology, pi-model lines, RL loads and
//! constant-power loads in the common DQ frame.
//!
//! ```text
//! C_l dV_b/dt  = (-G_l + w0 C_l J) V_b + I_o - I_load - B I_line
//! L_l dI_line/dt = (-R_l + w0 L_l J) I_line + B^T V_b
//! L_load dI_load/dt = (-R_load + w0 L_load J) I_load + V_b
//! ```
//!
//! Constant-power draws are added to the load current at each bus. Their
//! current follows `i = (P I + Q J) v / max(|v|^2, (floor V_n)^2)`, either
//! instantaneously or through a first-order lag.

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{dq_impedance, get2, j_mul, kron_i2, put2};

/// Buses `0..bus_count` joined by directed edges `(source, sink)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MicrogridGraph {
    bus_count: usize,
    edges: Vec<(usize, usize)>,
    incident: Vec<Vec<(usize, f64)>>,
}

impl MicrogridGraph {
    /// Builds a graph. Parallel edges are allowed; self-loops and
    /// out-of-range endpoints are rejected. Connectivity is checked separately
    /// by [`MicrogridGraph::is_connected`].
    pub fn new(bus_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if bus_count == 0 {
            return Err(Error::EmptySystem);
        }
        let mut incident = vec![Vec::new(); bus_count];
        for (z, &(a, b)) in edges.iter().enumerate() {
            for bus in [a, b] {
                if bus >= bus_count {
                    return Err(Error::OutOfRange {
                        what: "bus",
                        index: bus,
                        count: bus_count,
                    });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            incident[a].push((z, 1.0));
            incident[b].push((z, -1.0));
        }
        Ok(MicrogridGraph {
            bus_count,
            edges,
            incident,
        })
    }

    /// Ring `0-1-...-(n-1)-0` (a single edge for `n = 2`, none for `n = 1`).
    pub fn ring(n: usize) -> Result<Self> {
        let edges = match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..n).map(|k| (k, (k + 1) % n)).collect(),
        };
        Self::new(n, edges)
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Edges touching `bus` with their incidence sign (+1 source, -1 sink).
    pub fn incident_edges(&self, bus: usize) -> &[(usize, f64)] {
        &self.incident[bus]
    }

    pub fn neighbors(&self, bus: usize) -> impl Iterator<Item = usize> + '_ {
        self.incident[bus].iter().map(move |&(z, _)| {
            let (a, b) = self.edges[z];
            if a == bus {
                b
            } else {
                a
            }
        })
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.bus_count];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(b) = queue.pop_front() {
            for nb in self.neighbors(b) {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Subgraph induced by `keep`, relabelled to `0..keep.len()` in order.
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let mut map = vec![usize::MAX; self.bus_count];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.bus_count {
                return Err(Error::OutOfRange {
                    what: "bus",
                    index: old,
                    count: self.bus_count,
                });
            }
            map[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| map[a] != usize::MAX && map[b] != usize::MAX)
            .map(|&(a, b)| (map[a], map[b]))
            .collect();
        Self::new(keep.len(), edges)
    }

    /// `n x |E|` incidence matrix, +1 at the source and -1 at the sink.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.bus_count, self.edges.len());
        for (z, &(src, dst)) in self.edges.iter().enumerate() {
            b[(src, z)] = 1.0;
            b[(dst, z)] = -1.0;
        }
        b
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let b = self.incidence_matrix();
        &b * b.transpose()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    /// Series resistance (ohm).
    pub resistance: f64,
    /// Series inductance (H).
    pub inductance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuntParams {
    /// Lumped shunt capacitance at the bus (F).
    pub capacitance: f64,
    /// Lumped shunt conductance at the bus (S).
    pub conductance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    /// RL load resistance (ohm).
    pub resistance: f64,
    /// RL load inductance (H).
    pub inductance: f64,
    /// Constant active power draw (W).
    #[serde(default)]
    pub power: f64,
    /// Constant reactive power draw (var).
    #[serde(default)]
    pub reactive_power: f64,
}

/// Dynamics of the constant-power part of a load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConstantPowerModel {
    /// Current follows the power law algebraically.
    Instantaneous,
    /// Current tracks the power law through a first-order lag.
    Filtered { time_constant: f64 },
}

impl Default for ConstantPowerModel {
    fn default() -> Self {
        ConstantPowerModel::Filtered {
            time_constant: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub graph: MicrogridGraph,
    /// Nominal angular frequency (rad/s).
    pub omega0: f64,
    /// Nominal voltage amplitude (V), used for the constant-power floor.
    pub nominal_voltage: f64,
    pub lines: Vec<LineParams>,
    pub shunts: Vec<ShuntParams>,
    pub loads: Vec<LoadParams>,
    pub cpl_model: ConstantPowerModel,
    /// Voltage floor of constant-power loads as a fraction of the nominal voltage.
    pub cpl_floor: f64,
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.bus_count();
        if self.lines.len() != self.graph.edge_count() {
            return Err(Error::Dimension(format!(
                "{} line parameter sets for {} edges",
                self.lines.len(),
                self.graph.edge_count()
            )));
        }
        if self.shunts.len() != n || self.loads.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} shunt and load entries, got {} and {}",
                self.shunts.len(),
                self.loads.len()
            )));
        }
        positive("omega0", self.omega0)?;
        positive("nominal_voltage", self.nominal_voltage)?;
        for (z, l) in self.lines.iter().enumerate() {
            positive(&format!("lines[{z}].resistance"), l.resistance)?;
            positive(&format!("lines[{z}].inductance"), l.inductance)?;
        }
        for (j, s) in self.shunts.iter().enumerate() {
            positive(&format!("buses[{j}].capacitance"), s.capacitance)?;
            positive(&format!("buses[{j}].conductance"), s.conductance)?;
        }
        for (j, l) in self.loads.iter().enumerate() {
            positive(&format!("loads[{j}].resistance"), l.resistance)?;
            positive(&format!("loads[{j}].inductance"), l.inductance)?;
            finite(&format!("loads[{j}].power"), l.power)?;
            finite(&format!("loads[{j}].reactive_power"), l.reactive_power)?;
        }
        if let ConstantPowerModel::Filtered { time_constant } = self.cpl_model {
            positive("constant_power.time_constant", time_constant)?;
        }
        if !(self.cpl_floor > 0.0 && self.cpl_floor < 1.0) {
            return Err(Error::param("constant_power.floor", "must lie in (0, 1)"));
        }
        if !self.graph.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(())
    }

    pub fn bus_count(&self) -> usize {
        self.graph.bus_count()
    }

    pub fn has_constant_power(&self) -> bool {
        self.loads
            .iter()
            .any(|l| l.power != 0.0 || l.reactive_power != 0.0)
    }

    /// Diagonal of the storage/mass matrix in the state order
    /// `[V_b, I_line, I_load, I_cpl]`.
    pub fn mass(&self) -> Vec<f64> {
        let mut m = Vec::with_capacity(self.state_len());
        for s in &self.shunts {
            m.extend([s.capacitance; 2]);
        }
        for l in &self.lines {
            m.extend([l.inductance; 2]);
        }
        for l in &self.loads {
            m.extend([l.inductance; 2]);
        }
        let tau = match self.cpl_model {
            ConstantPowerModel::Filtered { time_constant } => time_constant,
            ConstantPowerModel::Instantaneous => 1.0,
        };
        m.extend(std::iter::repeat(tau).take(2 * self.bus_count()));
        m
    }

    pub fn state_len(&self) -> usize {
        6 * self.bus_count() + 2 * self.graph.edge_count()
    }
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be strictly positive, got {v}")))
    }
}

pub(crate) fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite, got {v}")))
    }
}

/// Current drawn by a constant-power load at bus voltage `v`, and whether the
/// voltage floor was active.
pub fn constant_power_current(p: f64, q: f64, v: Vector2<f64>, v_floor: f64) -> (Vector2<f64>, bool) {
    let mag2 = v.norm_squared();
    let floor2 = v_floor * v_floor;
    let clamped = mag2 < floor2;
    let denom = if clamped { floor2 } else { mag2 };
    ((v * p + j_mul(v) * q) / denom, clamped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub v_bus: Vec<Vector2<f64>>,
    pub i_line: Vec<Vector2<f64>>,
    pub i_load: Vec<Vector2<f64>>,
    /// Constant-power load currents (used by the filtered model).
    pub i_cpl: Vec<Vector2<f64>>,
}

impl NetworkState {
    pub fn zeros(params: &NetworkParams) -> Self {
        let n = params.bus_count();
        NetworkState {
            v_bus: vec![Vector2::zeros(); n],
            i_line: vec![Vector2::zeros(); params.graph.edge_count()],
            i_load: vec![Vector2::zeros(); n],
            i_cpl: vec![Vector2::zeros(); n],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.v_bus
            .iter()
            .chain(&self.i_line)
            .chain(&self.i_load)
            .chain(&self.i_cpl)
            .flat_map(|v| [v.x, v.y])
            .collect()
    }

    pub fn from_slice(params: &NetworkParams, x: &[f64]) -> Result<Self> {
        if x.len() != params.state_len() {
            return Err(Error::Dimension(format!(
                "network state has {} entries, expected {}",
                x.len(),
                params.state_len()
            )));
        }
        let n = params.bus_count();
        let e = params.graph.edge_count();
        let take = |off: usize, k: usize| (0..k).map(|i| get2(&x[off..], i)).collect::<Vec<_>>();
        Ok(NetworkState {
            v_bus: take(0, n),
            i_line: take(2 * n, e),
            i_load: take(2 * n + 2 * e, n),
            i_cpl: take(4 * n + 2 * e, n),
        })
    }
}

/// Time derivatives, same shape as [`NetworkState`].
pub type NetworkDerivatives = NetworkState;

/// Evaluates the network vector field for a given per-bus current injection.
pub fn network_derivatives(
    state: &NetworkState,
    injected: &[Vector2<f64>],
    params: &NetworkParams,
) -> Result<NetworkDerivatives> {
    let n = params.bus_count();
    if injected.len() != n
        || state.v_bus.len() != n
        || state.i_load.len() != n
        || state.i_cpl.len() != n
        || state.i_line.len() != params.graph.edge_count()
    {
        return Err(Error::Dimension(
            "network state or injection does not match the graph".to_string(),
        ));
    }
    let x = state.to_vec();
    let mut dx = vec![0.0; x.len()];
    let clamped = network_rhs(params, &x, |b| injected[b], &mut dx);
    if clamped > 0 {
        log::debug!("{clamped} constant-power load(s) below the voltage floor");
    }
    NetworkState::from_slice(params, &dx)
}

/// Slice form of the network field. `x` and `dx` use the layout
/// `[V_b, I_line, I_load, I_cpl]`; returns the number of clamped
/// constant-power loads.
pub(crate) fn network_rhs(
    p: &NetworkParams,
    x: &[f64],
    injection: impl Fn(usize) -> Vector2<f64>,
    dx: &mut [f64],
) -> usize {
    let n = p.bus_count();
    let e = p.graph.edge_count();
    let (vb, rest) = x.split_at(2 * n);
    let (il, rest) = rest.split_at(2 * e);
    let (iload, icpl) = rest.split_at(2 * n);
    let (dvb, drest) = dx.split_at_mut(2 * n);
    let (dil, drest) = drest.split_at_mut(2 * e);
    let (diload, dicpl) = drest.split_at_mut(2 * n);
    let w0 = p.omega0;
    let floor = p.cpl_floor * p.nominal_voltage;
    let mut clamped = 0;

    for (z, (&(a, b), line)) in p.graph.edges().iter().zip(&p.lines).enumerate() {
        let i = get2(il, z);
        let d = -i * line.resistance + j_mul(i) * (w0 * line.inductance) + get2(vb, a) - get2(vb, b);
        put2(dil, z, d / line.inductance);
    }

    for j in 0..n {
        let v = get2(vb, j);
        let load = &p.loads[j];
        let il_j = get2(iload, j);
        let d = -il_j * load.resistance + j_mul(il_j) * (w0 * load.inductance) + v;
        put2(diload, j, d / load.inductance);

        let mut i_cp = Vector2::zeros();
        if load.power != 0.0 || load.reactive_power != 0.0 {
            let (target, c) = constant_power_current(load.power, load.reactive_power, v, floor);
            clamped += c as usize;
            match p.cpl_model {
                ConstantPowerModel::Instantaneous => {
                    i_cp = target;
                    put2(dicpl, j, Vector2::zeros());
                }
                ConstantPowerModel::Filtered { time_constant } => {
                    let cur = get2(icpl, j);
                    i_cp = cur;
                    put2(dicpl, j, (target - cur) / time_constant);
                }
            }
        } else {
            let cur = get2(icpl, j);
            match p.cpl_model {
                ConstantPowerModel::Filtered { time_constant } => {
                    i_cp = cur;
                    put2(dicpl, j, -cur / time_constant);
                }
                ConstantPowerModel::Instantaneous => put2(dicpl, j, Vector2::zeros()),
            }
        }

        let s = &p.shunts[j];
        let mut d = -v * s.conductance + j_mul(v) * (w0 * s.capacitance) + injection(j) - il_j - i_cp;
        for &(z, sign) in p.graph.incident_edges(j) {
            d -= get2(il, z) * sign;
        }
        put2(dvb, j, d / s.capacitance);
    }
    clamped
}

/// `Y_1 = (G - w0 C J) + (R_load - w0 L_load J)^-1 + B (R_line - w0 L_line J)^-1 B^T`
/// over all buses (2n x 2n).
pub fn network_admittance(params: &NetworkParams) -> Result<DMatrix<f64>> {
    let n = params.bus_count();
    let w0 = params.omega0;
    let mut y = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        let s = &params.shunts[j];
        let l = &params.loads[j];
        let z_load = dq_impedance(l.resistance, l.inductance, w0);
        let y_load = z_load
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("load impedance at bus {}", j + 1)))?;
        let block = dq_impedance(s.conductance, s.capacitance, w0) + y_load;
        y.fixed_view_mut::<2, 2>(2 * j, 2 * j).copy_from(&block);
    }
    if params.graph.edge_count() > 0 {
        let b = kron_i2(&params.graph.incidence_matrix());
        let mut y_lines = DMatrix::zeros(b.ncols(), b.ncols());
        for (z, line) in params.lines.iter().enumerate() {
            let yz: Matrix2<f64> = dq_impedance(line.resistance, line.inductance, w0)
                .try_inverse()
                .ok_or_else(|| Error::Singular(format!("impedance of line {}", z + 1)))?;
            y_lines.fixed_view_mut::<2, 2>(2 * z, 2 * z).copy_from(&yz);
        }
        y += &b * y_lines * b.transpose();
    }
    Ok(y)
}

/// Quadratic storage `1/2 x~^T diag(C, L_line, L_load) x~` about `reference`.
pub fn network_storage(params: &NetworkParams, state: &NetworkState, reference: &NetworkState) -> f64 {
    let sq = |a: &[Vector2<f64>], b: &[Vector2<f64>], w: &dyn Fn(usize) -> f64| -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (x, y))| w(k) * (x - y).norm_squared())
            .sum()
    };
    0.5 * (sq(&state.v_bus, &reference.v_bus, &|k| params.shunts[k].capacitance)
        + sq(&state.i_line, &reference.i_line, &|k| params.lines[k].inductance)
        + sq(&state.i_load, &reference.i_load, &|k| params.loads[k].inductance))
}
