//! Time-domain simulation of the closed loop with scheduled events.

use nalgebra::Vector2;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::integrate::{rk4_step, Dopri5, Rk4Workspace};
use crate::linearize::{solve_closed_loop, EquilibriumOptions};
use crate::model::MicrogridSpec;
use crate::system::{read_unit, ClosedLoop, RhsInfo, StateLayout, SystemState, UnitState};

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    /// Adds `power` (W) and `reactive_power` (var) to the constant-power draw at `bus`.
    LoadStep {
        bus: usize,
        power: f64,
        reactive_power: f64,
    },
    InverterConnect {
        inverter: usize,
    },
    InverterDisconnect {
        inverter: usize,
    },
    SecondaryEnable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegratorMethod {
    Rk4,
    Dopri5,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSettings {
    pub method: IntegratorMethod,
    /// Fixed step for RK4, upper bound for the adaptive method (s).
    pub step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Spacing of recorded samples (s).
    pub output_interval: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            method: IntegratorMethod::Rk4,
            step: 5e-6,
            abs_tol: 1e-6,
            rel_tol: 1e-4,
            output_interval: 5e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    Flat,
    /// Solve for the equilibrium of the initial configuration first.
    Equilibrium,
    State(SystemState),
}

/// How a connecting inverter's states are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnectInit {
    /// Angle aligned with the bus voltage, capacitor voltage equal to the bus
    /// voltage, and integrators set so that the unit is at rest with zero
    /// output current.
    Idle,
    /// Angle aligned with the bus voltage, capacitor voltage equal to the bus
    /// voltage, all currents and integrators zero, DC link at its reference.
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub spec: MicrogridSpec,
    pub events: Vec<Event>,
    pub horizon: f64,
    pub integrator: IntegratorSettings,
    pub initial: InitialCondition,
    pub connect_init: ConnectInit,
    /// Steady-state windows `(start, end)` used by reports (s).
    pub windows: Vec<(f64, f64)>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, spec: MicrogridSpec, horizon: f64) -> Self {
        Scenario {
            name: name.into(),
            spec,
            events: Vec::new(),
            horizon,
            integrator: IntegratorSettings::default(),
            initial: InitialCondition::Flat,
            connect_init: ConnectInit::Zero,
            windows: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::param("simulation.horizon", "must be positive"));
        }
        let s = &self.integrator;
        for (name, v) in [
            ("integrator.step", s.step),
            ("integrator.abs_tol", s.abs_tol),
            ("integrator.rel_tol", s.rel_tol),
            ("outputs.interval", s.output_interval),
        ] {
            crate::network::positive(name, v)?;
        }
        for (k, e) in self.events.iter().enumerate() {
            if !(e.time >= 0.0 && e.time <= self.horizon) {
                return Err(Error::param(
                    format!("events[{k}].time"),
                    format!("{} lies outside [0, {}]", e.time, self.horizon),
                ));
            }
            let n_inv = self.spec.inverters.len();
            match e.kind {
                EventKind::LoadStep { bus, power, reactive_power } => {
                    if bus >= self.spec.network.bus_count() {
                        return Err(Error::param(format!("events[{k}].bus"), "no such bus"));
                    }
                    crate::network::finite(&format!("events[{k}].power"), power)?;
                    crate::network::finite(&format!("events[{k}].reactive_power"), reactive_power)?;
                }
                EventKind::InverterConnect { inverter } | EventKind::InverterDisconnect { inverter } => {
                    if inverter >= n_inv {
                        return Err(Error::param(format!("events[{k}].inverter"), "no such inverter"));
                    }
                }
                EventKind::SecondaryEnable => {}
            }
        }
        for (k, &(a, b)) in self.windows.iter().enumerate() {
            if !(a >= 0.0 && b > a && b <= self.horizon + 1e-12) {
                return Err(Error::param(format!("outputs.windows[{k}]"), "must satisfy 0 <= start < end <= horizon"));
            }
        }
        Ok(())
    }

    /// Events in time order, including the scheduled secondary activation.
    pub fn schedule(&self) -> Vec<Event> {
        let mut ev = self.events.clone();
        let sec = &self.spec.secondary;
        if sec.enabled && sec.activation_time > 0.0 && sec.activation_time <= self.horizon {
            ev.push(Event {
                time: sec.activation_time,
                kind: EventKind::SecondaryEnable,
            });
        }
        ev.sort_by(|a, b| a.time.total_cmp(&b.time));
        ev
    }

    fn secondary_at_start(&self) -> bool {
        self.spec.secondary.enabled && self.spec.secondary.activation_time <= 0.0
    }
}

/// Active configuration between two events.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// First sample index of the segment.
    pub start: usize,
    pub start_time: f64,
    pub active: Vec<usize>,
    pub secondary: bool,
    pub layout: StateLayout,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// First time each inverter's angle left `(-pi/2, pi/2)`.
    pub angle_violations: Vec<(usize, f64)>,
    pub overmodulated_steps: usize,
    pub cpl_clamped_steps: usize,
    pub current_limited_steps: usize,
    pub steps: usize,
    pub events: Vec<(f64, String)>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub time: Vec<f64>,
    pub channel_names: Vec<String>,
    /// One row of channel values per sample.
    pub rows: Vec<Vec<f64>>,
    /// Raw state per sample (layout given by the enclosing segment).
    pub states: Vec<Vec<f64>>,
    pub segments: Vec<Segment>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    pub fn channel(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.channel_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn segment_of(&self, sample: usize) -> &Segment {
        let pos = self.segments.partition_point(|s| s.start <= sample);
        &self.segments[pos.saturating_sub(1)]
    }

    pub fn state(&self, sample: usize) -> SystemState {
        SystemState {
            layout: self.segment_of(sample).layout,
            x: self.states[sample].clone(),
        }
    }

    pub fn final_state(&self) -> SystemState {
        self.state(self.time.len() - 1)
    }

    pub fn final_segment(&self) -> &Segment {
        self.segments.last().expect("trajectory has at least one segment")
    }
}

/// Channel names for a spec with `n` inverters and `b` buses (1-based labels).
pub fn channel_names(spec: &MicrogridSpec) -> Vec<String> {
    let mut names = Vec::new();
    for j in 1..=spec.inverters.len() {
        for c in CHANNELS {
            names.push(format!("{c}_{j}"));
        }
    }
    for b in 1..=spec.network.bus_count() {
        names.push(format!("vb_{b}"));
    }
    names
}

const CHANNELS: [&str; 13] = ["delta", "omega", "f", "vdc", "p", "q", "vo", "vod", "voq", "iod", "ioq", "chi", "m"];

fn sample_row(cl: &ClosedLoop, spec: &MicrogridSpec, x: &[f64]) -> Vec<f64> {
    let l = cl.layout();
    let mut row = vec![f64::NAN; CHANNELS.len() * spec.inverters.len() + l.buses];
    for (k, &id) in cl.ids().iter().enumerate() {
        let s = read_unit(&l, x, k);
        let out = cl.outputs(x, k);
        let base = CHANNELS.len() * id;
        let vals = [
            s.inverter.delta,
            out.omega,
            out.omega / (2.0 * PI),
            s.inverter.v_dc,
            out.p,
            out.q,
            s.inverter.v_o.norm(),
            s.inverter.v_o.x,
            s.inverter.v_o.y,
            s.inverter.i_o.x,
            s.inverter.i_o.y,
            s.chi,
            out.m.magnitude(),
        ];
        row[base..base + CHANNELS.len()].copy_from_slice(&vals);
    }
    let off = CHANNELS.len() * spec.inverters.len();
    for b in 0..l.buses {
        let i = l.v_bus(b);
        row[off + b] = Vector2::new(x[i], x[i + 1]).norm();
    }
    row
}

/// Initial state of an inverter joining at a bus with voltage `v_bus`.
pub fn connect_state(spec: &MicrogridSpec, inverter: usize, v_bus: Vector2<f64>, omega0: f64, mode: ConnectInit) -> UnitState {
    let inv = &spec.inverters[inverter];
    let g = &inv.gains;
    let p = &inv.params;
    let delta = v_bus.y.atan2(v_bus.x);
    let v_dc = g.dc.v_dc_ref;
    let mut u = UnitState {
        inverter: crate::inverter::InverterState {
            delta,
            v_dc,
            v_o: v_bus,
            ..Default::default()
        },
        chi: g.frequency.chi,
        ..Default::default()
    };
    if mode == ConnectInit::Idle {
        // Capacitor current that holds V_o with zero output current.
        let i = crate::linalg::dq_impedance(p.gs, p.cf, omega0) * v_bus;
        // Modulation that holds the filter current.
        let m = (v_bus + crate::linalg::dq_impedance(p.rf, p.lf, omega0) * i) * (2.0 / v_dc);
        let err = crate::controllers::voltage_error(&u.inverter, &g.ac);
        u.inverter.i = i;
        u.controller.beta = -(err * g.ac.c_p + i) / g.ac.c_i;
        u.controller.xi = -m / g.ac.lambda_i;
        u.controller.zeta = -(p.gdc * v_dc + 0.5 * i.dot(&m)) / g.dc.lambda_i;
    }
    u
}

struct Runner<'a> {
    scenario: &'a Scenario,
    cl: ClosedLoop,
    active: Vec<usize>,
    secondary: bool,
    x: Vec<f64>,
    t: f64,
    traj: Trajectory,
    next_sample: usize,
}

impl<'a> Runner<'a> {
    fn record(&mut self) {
        let row = sample_row(&self.cl, &self.scenario.spec, &self.x);
        self.traj.time.push(self.t);
        self.traj.rows.push(row);
        self.traj.states.push(self.x.clone());
        self.next_sample += 1;
    }

    fn sample_time(&self, k: usize) -> f64 {
        k as f64 * self.scenario.integrator.output_interval
    }

    fn push_segment(&mut self) {
        self.traj.segments.push(Segment {
            start: self.traj.time.len(),
            start_time: self.t,
            active: self.active.clone(),
            secondary: self.secondary,
            layout: self.cl.layout(),
        });
    }

    fn check(&mut self, info: RhsInfo) -> Result<()> {
        let d = &mut self.traj.diagnostics;
        d.steps += 1;
        d.overmodulated_steps += (info.overmodulated > 0) as usize;
        d.cpl_clamped_steps += (info.cpl_clamped > 0) as usize;
        d.current_limited_steps += (info.current_limited > 0) as usize;
        if let Some(i) = self.x.iter().position(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(Error::Diverged {
                time: self.t,
                detail: format!("state {} = {}", self.cl.layout().state_name(i), self.x[i]),
            });
        }
        for (k, &id) in self.active.iter().enumerate() {
            let delta = self.x[k];
            if delta.abs() >= FRAC_PI_2 && !d.angle_violations.iter().any(|&(j, _)| j == id) {
                log::warn!("inverter {} angle {delta:.3} left (-pi/2, pi/2) at t = {:.4}", id + 1, self.t);
                d.angle_violations.push((id, self.t));
            }
        }
        Ok(())
    }

    /// Integrates up to `t_end`, recording samples on the output grid.
    fn advance(&mut self, t_end: f64) -> Result<()> {
        let settings = self.scenario.integrator;
        let h = settings.step;
        let eps = 1e-9 * h;
        let n = self.x.len();
        let mut rk4 = Rk4Workspace::new(n);
        let mut dopri = Dopri5::new(n, settings.abs_tol, settings.rel_tol, settings.step.max(settings.output_interval));
        let mut h_adapt = h.min(1e-6);
        let cl = self.cl.clone();
        loop {
            let next_sample = self.sample_time(self.next_sample);
            if next_sample <= self.t + eps && next_sample <= t_end + eps {
                self.t = self.t.max(next_sample);
                self.record();
                continue;
            }
            if self.t >= t_end - eps {
                self.t = t_end;
                return Ok(());
            }
            let target = t_end.min(next_sample);
            match settings.method {
                IntegratorMethod::Rk4 => {
                    let step = h.min(target - self.t);
                    let mut f = |x: &[f64], dx: &mut [f64]| cl.rhs(x, dx);
                    let info = rk4_step(&mut f, &mut self.x, step, &mut rk4);
                    self.t = if target - self.t <= h { target } else { self.t + step };
                    self.check(info)?;
                }
                IntegratorMethod::Dopri5 => {
                    let mut info = RhsInfo::default();
                    let mut f = |x: &[f64], dx: &mut [f64]| {
                        let i = cl.rhs(x, dx);
                        info.overmodulated = info.overmodulated.max(i.overmodulated);
                        info.cpl_clamped = info.cpl_clamped.max(i.cpl_clamped);
                        info.current_limited = info.current_limited.max(i.current_limited);
                    };
                    let want = h_adapt.min(target - self.t);
                    let (taken, next) = dopri.step(&mut f, &mut self.x, want).ok_or_else(|| Error::Diverged {
                        time: self.t,
                        detail: "adaptive step size underflow".to_string(),
                    })?;
                    self.t = if (target - self.t - taken).abs() <= eps { target } else { self.t + taken };
                    if taken >= want * (1.0 - 1e-12) && want < h_adapt {
                        // Clipped to a boundary: keep the previous step suggestion.
                    } else {
                        h_adapt = next;
                    }
                    self.check(info)?;
                }
            }
        }
    }

    fn rebuild(&mut self, new_active: Vec<usize>, secondary: bool, init: impl Fn(usize, &ClosedLoop, &[f64]) -> Option<UnitState>) -> Result<()> {
        let spec = &self.scenario.spec;
        let new_cl = ClosedLoop::with_network(spec, self.cl.network().clone(), &new_active, secondary)?;
        let old_l = self.cl.layout();
        let new_l = new_cl.layout();
        let mut s = SystemState::zeros(new_l);
        for (k, &id) in new_active.iter().enumerate() {
            let u = match self.active.iter().position(|&a| a == id) {
                Some(old_k) => read_unit(&old_l, &self.x, old_k),
                None => init(id, &self.cl, &self.x).ok_or_else(|| Error::param("events", format!("cannot initialize inverter {}", id + 1)))?,
            };
            s.set_unit(k, &u);
        }
        let net = self.x[old_l.network()..].to_vec();
        s.x[new_l.network()..].copy_from_slice(&net);
        self.cl = new_cl;
        self.active = new_active;
        self.secondary = secondary;
        self.x = s.x;
        Ok(())
    }

    fn apply(&mut self, event: &Event) -> Result<()> {
        let spec = &self.scenario.spec;
        let label = match &event.kind {
            EventKind::LoadStep { bus, power, reactive_power } => {
                let load = &mut self.cl.network_mut().loads[*bus];
                load.power += power;
                load.reactive_power += reactive_power;
                format!("load step {power} W / {reactive_power} var at bus {}", bus + 1)
            }
            EventKind::SecondaryEnable => {
                if !self.secondary {
                    self.rebuild(self.active.clone(), true, |_, _, _| None)?;
                }
                "secondary control enabled".to_string()
            }
            EventKind::InverterConnect { inverter } => {
                let id = *inverter;
                if self.active.contains(&id) {
                    return Err(Error::param("events", format!("inverter {} is already connected", id + 1)));
                }
                let mut act = self.active.clone();
                act.push(id);
                act.sort_unstable();
                let mode = self.scenario.connect_init;
                let w0 = spec.omega0();
                self.rebuild(act, self.secondary, |id, cl, x| {
                    let b = spec.inverters[id].bus;
                    let i = cl.layout().v_bus(b);
                    Some(connect_state(spec, id, Vector2::new(x[i], x[i + 1]), w0, mode))
                })?;
                format!("inverter {} connected", id + 1)
            }
            EventKind::InverterDisconnect { inverter } => {
                let id = *inverter;
                if !self.active.contains(&id) {
                    return Err(Error::param("events", format!("inverter {} is not connected", id + 1)));
                }
                let act: Vec<usize> = self.active.iter().copied().filter(|&a| a != id).collect();
                if act.is_empty() {
                    return Err(Error::param("events", "cannot disconnect the last inverter"));
                }
                self.rebuild(act, self.secondary, |_, _, _| None)?;
                format!("inverter {} disconnected", id + 1)
            }
        };
        log::info!("t = {:.4} s: {label}", self.t);
        self.traj.diagnostics.events.push((self.t, label));
        Ok(())
    }
}

pub fn simulate(scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let spec = &scenario.spec;
    let active = spec.initially_active();
    let secondary = scenario.secondary_at_start();
    let cl = ClosedLoop::new(spec, &active, secondary)?;
    let x = match &scenario.initial {
        InitialCondition::Flat => cl.flat_start().x,
        InitialCondition::Equilibrium => solve_closed_loop(&cl, None, &EquilibriumOptions::default())?.state.x,
        InitialCondition::State(s) => {
            if s.layout != cl.layout() {
                return Err(Error::Dimension(format!(
                    "initial state has {} entries, expected {}",
                    s.x.len(),
                    cl.layout().len()
                )));
            }
            s.x.clone()
        }
    };
    let mut run = Runner {
        scenario,
        cl,
        active,
        secondary,
        x,
        t: 0.0,
        traj: Trajectory {
            time: Vec::new(),
            channel_names: channel_names(spec),
            rows: Vec::new(),
            states: Vec::new(),
            segments: Vec::new(),
            diagnostics: Diagnostics::default(),
        },
        next_sample: 0,
    };
    run.push_segment();
    for event in scenario.schedule() {
        run.advance(event.time)?;
        run.apply(&event)?;
        if run.traj.segments.last().map(|s| s.start) == Some(run.traj.time.len()) {
            run.traj.segments.pop();
        }
        run.push_segment();
    }
    run.advance(scenario.horizon)?;
    let d = &run.traj.diagnostics;
    if d.overmodulated_steps > 0 {
        log::warn!("modulation magnitude exceeded 1 on {} steps", d.overmodulated_steps);
    }
    if d.cpl_clamped_steps > 0 {
        log::warn!("constant-power loads clamped at the voltage floor on {} steps", d.cpl_clamped_steps);
    }
    Ok(run.traj)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    pub max_deviation: f64,
    pub settled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteadyStateReport {
    pub start: f64,
    pub end: f64,
    pub samples: usize,
    pub channels: Vec<ChannelStats>,
}

impl SteadyStateReport {
    pub fn get(&self, name: &str) -> Option<&ChannelStats> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.get(name).map(|c| c.mean)
    }

    pub fn unsettled(&self) -> impl Iterator<Item = &ChannelStats> {
        self.channels.iter().filter(|c| !c.settled)
    }
}

/// Relative deviation threshold used to flag unsettled channels.
pub const SETTLE_REL: f64 = 1e-3;
const SETTLE_ABS: f64 = 1e-6;

/// Means and maximum deviations over `[start, end]`. Channels that are
/// inactive anywhere in the window are reported as NaN and not settled.
pub fn window_report(traj: &Trajectory, start: f64, end: f64, rel_threshold: f64) -> SteadyStateReport {
    let idx: Vec<usize> = (0..traj.time.len())
        .filter(|&i| traj.time[i] >= start - 1e-12 && traj.time[i] <= end + 1e-12)
        .collect();
    let channels = traj
        .channel_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let vals: Vec<f64> = idx.iter().map(|&i| traj.rows[i][c]).collect();
            if vals.is_empty() || vals.iter().any(|v| !v.is_finite()) {
                return ChannelStats {
                    name: name.clone(),
                    mean: f64::NAN,
                    max_deviation: f64::NAN,
                    settled: false,
                };
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let dev = vals.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
            ChannelStats {
                name: name.clone(),
                mean,
                max_deviation: dev,
                settled: dev <= rel_threshold * mean.abs().max(SETTLE_ABS / rel_threshold),
            }
        })
        .collect();
    SteadyStateReport {
        start,
        end,
        samples: idx.len(),
        channels,
    }
}

/// Report over the final `window` seconds of the trajectory.
pub fn steady_state_report(traj: &Trajectory, window: f64) -> SteadyStateReport {
    let end = *traj.time.last().unwrap_or(&0.0);
    window_report(traj, end - window, end, SETTLE_REL)
}
