//! Scenario files: TOML documents with `schema_version = 1`.
//!
//! All values are plain SI units. Bus and inverter numbers in files are
//! 1-based; everything in memory is 0-based. Unknown keys are rejected.
//!
//! ```toml
//! schema_version = 1
//! name = "example"
//!
//! [network]
//! omega0 = 314.159       # rad/s
//! nominal_voltage = 311  # V
//!
//! [graph]
//! buses = 2
//! edges = [[1, 2]]
//!
//! [[lines]]              # one entry per edge, same order
//! resistance = 0.2       # ohm
//! inductance = 4e-3      # H
//!
//! [[shunts]]             # one entry per bus
//! capacitance = 1e-7     # F
//! conductance = 1e-3     # S
//!
//! [[loads]]              # one entry per bus
//! bus = 1
//! resistance = 20.0      # ohm
//! inductance = 0.03      # H
//! power = 0.0            # W, constant-power part
//! reactive_power = 0.0   # var
//!
//! [[inverters]]
//! name = "DG1"
//! bus = 1
//! ```
//!
//! Optional sections: `[constant_power]` (`model`, `time_constant`,
//! `floor`), `[filter]` and `[gains]` (defaults for every inverter, with
//! sub-tables `frequency`, `dc`, `ac` and key `i_max`), per-inverter
//! `params`, `frequency`, `dc`, `ac`, `i_max`, `connected`, `[secondary]`,
//! `[[events]]`, `[integrator]`, `[outputs]` and `[simulation]`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use toml::Table;

use crate::controllers::{AcGains, ControllerGains, DcGains, FrequencyGains};
use crate::error::{Error, Result};
use crate::inverter::InverterParams;
use crate::model::{InverterSpec, MicrogridSpec};
use crate::network::{ConstantPowerModel, LineParams, LoadParams, MicrogridGraph, NetworkParams, ShuntParams};
use crate::secondary::SecondaryConfig;
use crate::sim::{
    ConnectInit, Event, EventKind, InitialCondition, IntegratorMethod, IntegratorSettings, Scenario,
};
use crate::system::{StateLayout, SystemState, UnitState};

pub const SCHEMA_VERSION: u32 = 1;

/// Bundled scenario files, by name.
pub const BUNDLED: [(&str, &str); 3] = [
    ("table1_5bus", include_str!("../scenarios/table1_5bus.toml")),
    ("table2_2inv", include_str!("../scenarios/table2_2inv.toml")),
    ("plugplay_3inv", include_str!("../scenarios/plugplay_3inv.toml")),
];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    name: String,
    network: NetworkSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constant_power: Option<ConstantPowerSection>,
    graph: GraphSection,
    lines: Vec<LineParams>,
    shunts: Vec<ShuntParams>,
    loads: Vec<LoadEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gains: Option<GainTables>,
    inverters: Vec<InverterEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    secondary: Option<SecondarySection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    events: Vec<EventEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    integrator: Option<IntegratorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outputs: Option<OutputsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulation: Option<SimulationSection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    omega0: f64,
    nominal_voltage: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantPowerSection {
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    time_constant: Option<f64>,
    #[serde(default)]
    floor: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSection {
    buses: usize,
    edges: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadEntry {
    bus: usize,
    resistance: f64,
    inductance: f64,
    #[serde(default)]
    power: f64,
    #[serde(default)]
    reactive_power: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainTables {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frequency: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dc: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ac: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    i_max: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InverterEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    bus: usize,
    #[serde(default = "yes")]
    connected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frequency: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dc: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ac: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    i_max: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SecondarySection {
    #[serde(default)]
    enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default)]
    activation_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    comm_edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventEntry {
    time: f64,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bus: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reactive_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inverter: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntegratorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rel_tol: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    windows: Vec<[f64; 2]>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_state: Option<StateFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    connect_init: Option<String>,
}

/// Result of parsing a scenario: the scenario plus any unit warnings.
#[derive(Clone, Debug)]
pub struct ParsedScenario {
    pub scenario: Scenario,
    pub warnings: Vec<String>,
}

fn de_err(path: &str, e: impl std::fmt::Display) -> Error {
    Error::schema(path, e.to_string().trim().to_string())
}

/// Deserializes `T` from the defaults of `T` overlaid by each table in turn.
fn layered<T>(path: &str, layers: &[Option<&Table>]) -> Result<T>
where
    T: Default + Serialize + for<'de> Deserialize<'de>,
{
    let mut merged = Table::new();
    for layer in layers.iter().flatten() {
        for (k, v) in layer.iter() {
            merged.insert(k.clone(), v.clone());
        }
    }
    T::deserialize(merged).map_err(|e| de_err(path, e))
}

fn one_based(path: &str, value: usize, count: usize) -> Result<usize> {
    if value == 0 || value > count {
        return Err(Error::schema(path, format!("{value} is not in 1..={count}")));
    }
    Ok(value - 1)
}

/// Parses scenario text. Validation errors carry the path of the offending field.
pub fn parse_scenario(text: &str) -> Result<ParsedScenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| de_err("<document>", e))?;
    from_file(file)
}

pub fn parse_scenario_file(path: impl AsRef<Path>) -> Result<ParsedScenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// Parses one of the [`BUNDLED`] scenarios.
pub fn bundled(name: &str) -> Result<ParsedScenario> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::schema("<bundled>", format!("no bundled scenario named `{name}`")))?;
    parse_scenario(text)
}

fn from_file(f: ScenarioFile) -> Result<ParsedScenario> {
    if f.schema_version != SCHEMA_VERSION {
        return Err(Error::schema(
            "schema_version",
            format!("unsupported version {} (expected {SCHEMA_VERSION})", f.schema_version),
        ));
    }
    let buses = f.graph.buses;
    let mut edges = Vec::with_capacity(f.graph.edges.len());
    for (z, &[a, b]) in f.graph.edges.iter().enumerate() {
        let p = format!("graph.edges[{z}]");
        edges.push((one_based(&p, a, buses)?, one_based(&p, b, buses)?));
    }
    let graph = MicrogridGraph::new(buses, edges).map_err(|e| Error::schema("graph", e.to_string()))?;
    if f.lines.len() != graph.edge_count() {
        return Err(Error::schema(
            "lines",
            format!("{} entries for {} edges", f.lines.len(), graph.edge_count()),
        ));
    }
    if f.shunts.len() != buses {
        return Err(Error::schema("shunts", format!("{} entries for {buses} buses", f.shunts.len())));
    }
    let mut loads: Vec<Option<LoadParams>> = vec![None; buses];
    for (k, l) in f.loads.iter().enumerate() {
        let b = one_based(&format!("loads[{k}].bus"), l.bus, buses)?;
        if loads[b].is_some() {
            return Err(Error::schema(format!("loads[{k}].bus"), format!("bus {} already has a load", l.bus)));
        }
        loads[b] = Some(LoadParams {
            resistance: l.resistance,
            inductance: l.inductance,
            power: l.power,
            reactive_power: l.reactive_power,
        });
    }
    let loads = loads
        .into_iter()
        .enumerate()
        .map(|(b, l)| l.ok_or_else(|| Error::schema("loads", format!("bus {} has no load entry", b + 1))))
        .collect::<Result<Vec<_>>>()?;

    let cp = f.constant_power.unwrap_or_default();
    let cpl_model = match cp.model.as_deref() {
        None | Some("filtered") => ConstantPowerModel::Filtered {
            time_constant: cp.time_constant.unwrap_or(1e-3),
        },
        Some("instantaneous") => {
            if cp.time_constant.is_some() {
                return Err(Error::schema("constant_power.time_constant", "only valid for the filtered model"));
            }
            ConstantPowerModel::Instantaneous
        }
        Some(other) => {
            return Err(Error::schema(
                "constant_power.model",
                format!("unknown model `{other}` (expected `filtered` or `instantaneous`)"),
            ))
        }
    };
    let network = NetworkParams {
        graph,
        omega0: f.network.omega0,
        nominal_voltage: f.network.nominal_voltage,
        lines: f.lines,
        shunts: f.shunts,
        loads,
        cpl_model,
        cpl_floor: cp.floor.unwrap_or(0.4),
    };

    let g = f.gains.unwrap_or_default();
    let mut inverters = Vec::with_capacity(f.inverters.len());
    for (k, e) in f.inverters.iter().enumerate() {
        let p = format!("inverters[{k}]");
        let params: InverterParams = layered(&format!("{p}.params"), &[f.filter.as_ref(), e.params.as_ref()])?;
        let frequency: FrequencyGains =
            layered(&format!("{p}.frequency"), &[g.frequency.as_ref(), e.frequency.as_ref()])?;
        let dc: DcGains = layered(&format!("{p}.dc"), &[g.dc.as_ref(), e.dc.as_ref()])?;
        let ac: AcGains = layered(&format!("{p}.ac"), &[g.ac.as_ref(), e.ac.as_ref()])?;
        inverters.push(InverterSpec {
            name: e.name.clone().unwrap_or_else(|| format!("DG{}", k + 1)),
            bus: one_based(&format!("{p}.bus"), e.bus, buses)?,
            params,
            gains: ControllerGains {
                frequency,
                dc,
                ac,
                i_max: e.i_max.or(g.i_max),
            },
            connected: e.connected,
        });
    }
    let n_inv = inverters.len();

    let secondary = match f.secondary {
        None => SecondaryConfig::default(),
        Some(s) => {
            let comm_edges = match s.comm_edges {
                None => None,
                Some(list) => {
                    let mut out = Vec::with_capacity(list.len());
                    for (z, &[a, b]) in list.iter().enumerate() {
                        let p = format!("secondary.comm_edges[{z}]");
                        out.push((one_based(&p, a, n_inv)?, one_based(&p, b, n_inv)?));
                    }
                    Some(out)
                }
            };
            SecondaryConfig {
                enabled: s.enabled,
                alpha: s.alpha.unwrap_or(SecondaryConfig::default().alpha),
                activation_time: s.activation_time,
                comm_edges,
            }
        }
    };
    let spec = MicrogridSpec {
        network,
        inverters,
        secondary,
    };

    let mut events = Vec::with_capacity(f.events.len());
    for (k, e) in f.events.iter().enumerate() {
        let p = format!("events[{k}]");
        let need_bus = || {
            e.bus
                .ok_or_else(|| Error::schema(format!("{p}.bus"), "required for this event kind"))
                .and_then(|b| one_based(&format!("{p}.bus"), b, buses))
        };
        let need_inv = || {
            e.inverter
                .ok_or_else(|| Error::schema(format!("{p}.inverter"), "required for this event kind"))
                .and_then(|i| one_based(&format!("{p}.inverter"), i, n_inv))
        };
        let kind = match e.kind.as_str() {
            "load-step" => EventKind::LoadStep {
                bus: need_bus()?,
                power: e.power.unwrap_or(0.0),
                reactive_power: e.reactive_power.unwrap_or(0.0),
            },
            "inverter-connect" => EventKind::InverterConnect { inverter: need_inv()? },
            "inverter-disconnect" => EventKind::InverterDisconnect { inverter: need_inv()? },
            "secondary-enable" => EventKind::SecondaryEnable,
            other => {
                return Err(Error::schema(
                    format!("{p}.kind"),
                    format!(
                        "unknown event `{other}` (expected load-step, inverter-connect, inverter-disconnect or secondary-enable)"
                    ),
                ))
            }
        };
        let allowed: &[&str] = match kind {
            EventKind::LoadStep { .. } => &["bus", "power", "reactive_power"],
            EventKind::InverterConnect { .. } | EventKind::InverterDisconnect { .. } => &["inverter"],
            EventKind::SecondaryEnable => &[],
        };
        for (key, present) in [
            ("bus", e.bus.is_some()),
            ("power", e.power.is_some()),
            ("reactive_power", e.reactive_power.is_some()),
            ("inverter", e.inverter.is_some()),
        ] {
            if present && !allowed.contains(&key) {
                return Err(Error::schema(format!("{p}.{key}"), format!("not valid for `{}` events", e.kind)));
            }
        }
        events.push(Event { time: e.time, kind });
    }

    let defaults = IntegratorSettings::default();
    let is = f.integrator.unwrap_or_default();
    let method = match is.method.as_deref() {
        None | Some("rk4") => IntegratorMethod::Rk4,
        Some("dopri5") => IntegratorMethod::Dopri5,
        Some(other) => {
            return Err(Error::schema(
                "integrator.method",
                format!("unknown method `{other}` (expected `rk4` or `dopri5`)"),
            ))
        }
    };
    let outputs = f.outputs.unwrap_or_default();
    let integrator = IntegratorSettings {
        method,
        step: is.step.unwrap_or(defaults.step),
        abs_tol: is.abs_tol.unwrap_or(defaults.abs_tol),
        rel_tol: is.rel_tol.unwrap_or(defaults.rel_tol),
        output_interval: outputs.interval.unwrap_or(defaults.output_interval),
    };

    let sim = f.simulation.unwrap_or_default();
    let initial = match (sim.initial.as_deref(), sim.initial_state) {
        (None | Some("flat"), None) => InitialCondition::Flat,
        (Some("equilibrium"), None) => InitialCondition::Equilibrium,
        (None | Some("state"), Some(state)) => {
            let layout = StateLayout {
                inverters: spec.initially_active().len(),
                buses,
                edges: spec.network.graph.edge_count(),
            };
            InitialCondition::State(state_from_file(state, layout, "simulation.initial_state")?)
        }
        (Some(other), None) => {
            return Err(Error::schema(
                "simulation.initial",
                format!("unknown initial condition `{other}` (expected flat, equilibrium or state)"),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(Error::schema("simulation.initial", "conflicts with simulation.initial_state"))
        }
    };
    let connect_init = match sim.connect_init.as_deref() {
        None | Some("zero") => ConnectInit::Zero,
        Some("idle") => ConnectInit::Idle,
        Some(other) => {
            return Err(Error::schema(
                "simulation.connect_init",
                format!("unknown mode `{other}` (expected `zero` or `idle`)"),
            ))
        }
    };

    let scenario = Scenario {
        name: f.name,
        spec,
        events,
        horizon: sim.horizon.unwrap_or(1.0),
        integrator,
        initial,
        connect_init,
        windows: outputs.windows.iter().map(|&[a, b]| (a, b)).collect(),
    };
    scenario.validate().map_err(|e| to_schema(e, &scenario.spec))?;
    let warnings = unit_warnings(&scenario.spec);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ParsedScenario { scenario, warnings })
}

/// Turns a validation failure into a schema error, naming the inverter when
/// the offending field belongs to one.
fn to_schema(e: Error, spec: &MicrogridSpec) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => {
            let who = name
                .strip_prefix("inverters[")
                .and_then(|r| r.split(']').next())
                .and_then(|k| k.parse::<usize>().ok())
                .and_then(|k| spec.inverters.get(k))
                .map(|inv| format!(" (inverter `{}`)", inv.name))
                .unwrap_or_default();
            Error::schema(name, format!("{reason}{who}"))
        }
        Error::Schema { .. } | Error::Io(_) => e,
        other => Error::schema("<document>", other.to_string()),
    }
}

/// Flags values whose magnitude suggests a unit slip.
pub fn unit_warnings(spec: &MicrogridSpec) -> Vec<String> {
    let mut w = Vec::new();
    let mut check = |path: String, v: f64, max: f64, unit: &str| {
        if v > max {
            w.push(format!("`{path}` = {v} {unit} looks suspiciously large"));
        }
    };
    for (j, s) in spec.network.shunts.iter().enumerate() {
        check(format!("shunts[{j}].capacitance"), s.capacitance, 1.0, "F");
    }
    for (z, l) in spec.network.lines.iter().enumerate() {
        check(format!("lines[{z}].inductance"), l.inductance, 1.0, "H");
    }
    for (j, l) in spec.network.loads.iter().enumerate() {
        check(format!("loads[{j}].inductance"), l.inductance, 10.0, "H");
    }
    for (k, inv) in spec.inverters.iter().enumerate() {
        let p = &inv.params;
        check(format!("inverters[{k}].params.cf"), p.cf, 1.0, "F");
        check(format!("inverters[{k}].params.cdc"), p.cdc, 1.0, "F");
        check(format!("inverters[{k}].params.lf"), p.lf, 1.0, "H");
        check(format!("inverters[{k}].params.lc"), p.lc, 1.0, "H");
    }
    w
}

fn table_of<T: Serialize>(v: &T) -> Table {
    Table::try_from(v).expect("plain structs serialize to tables")
}

/// Emits a scenario with every value written out explicitly.
pub fn emit_scenario(s: &Scenario) -> Result<String> {
    let spec = &s.spec;
    let net = &spec.network;
    let (model, time_constant) = match net.cpl_model {
        ConstantPowerModel::Instantaneous => ("instantaneous", None),
        ConstantPowerModel::Filtered { time_constant } => ("filtered", Some(time_constant)),
    };
    let state = match &s.initial {
        InitialCondition::State(st) => Some(state_to_file(st, &s.name, None)),
        _ => None,
    };
    let file = ScenarioFile {
        schema_version: SCHEMA_VERSION,
        name: s.name.clone(),
        network: NetworkSection {
            omega0: net.omega0,
            nominal_voltage: net.nominal_voltage,
        },
        constant_power: Some(ConstantPowerSection {
            model: Some(model.to_string()),
            time_constant,
            floor: Some(net.cpl_floor),
        }),
        graph: GraphSection {
            buses: net.bus_count(),
            edges: net.graph.edges().iter().map(|&(a, b)| [a + 1, b + 1]).collect(),
        },
        lines: net.lines.clone(),
        shunts: net.shunts.clone(),
        loads: net
            .loads
            .iter()
            .enumerate()
            .map(|(b, l)| LoadEntry {
                bus: b + 1,
                resistance: l.resistance,
                inductance: l.inductance,
                power: l.power,
                reactive_power: l.reactive_power,
            })
            .collect(),
        filter: None,
        gains: None,
        inverters: spec
            .inverters
            .iter()
            .map(|inv| InverterEntry {
                name: Some(inv.name.clone()),
                bus: inv.bus + 1,
                connected: inv.connected,
                params: Some(table_of(&inv.params)),
                frequency: Some(table_of(&inv.gains.frequency)),
                dc: Some(table_of(&inv.gains.dc)),
                ac: Some(table_of(&inv.gains.ac)),
                i_max: inv.gains.i_max,
            })
            .collect(),
        secondary: Some(SecondarySection {
            enabled: spec.secondary.enabled,
            alpha: Some(spec.secondary.alpha),
            activation_time: spec.secondary.activation_time,
            comm_edges: spec
                .secondary
                .comm_edges
                .as_ref()
                .map(|e| e.iter().map(|&(a, b)| [a + 1, b + 1]).collect()),
        }),
        events: s
            .events
            .iter()
            .map(|e| {
                let mut entry = EventEntry {
                    time: e.time,
                    kind: String::new(),
                    bus: None,
                    power: None,
                    reactive_power: None,
                    inverter: None,
                };
                match e.kind {
                    EventKind::LoadStep { bus, power, reactive_power } => {
                        entry.kind = "load-step".into();
                        entry.bus = Some(bus + 1);
                        entry.power = Some(power);
                        entry.reactive_power = Some(reactive_power);
                    }
                    EventKind::InverterConnect { inverter } => {
                        entry.kind = "inverter-connect".into();
                        entry.inverter = Some(inverter + 1);
                    }
                    EventKind::InverterDisconnect { inverter } => {
                        entry.kind = "inverter-disconnect".into();
                        entry.inverter = Some(inverter + 1);
                    }
                    EventKind::SecondaryEnable => entry.kind = "secondary-enable".into(),
                }
                entry
            })
            .collect(),
        integrator: Some(IntegratorSection {
            method: Some(
                match s.integrator.method {
                    IntegratorMethod::Rk4 => "rk4",
                    IntegratorMethod::Dopri5 => "dopri5",
                }
                .into(),
            ),
            step: Some(s.integrator.step),
            abs_tol: Some(s.integrator.abs_tol),
            rel_tol: Some(s.integrator.rel_tol),
        }),
        outputs: Some(OutputsSection {
            interval: Some(s.integrator.output_interval),
            windows: s.windows.iter().map(|&(a, b)| [a, b]).collect(),
        }),
        simulation: Some(SimulationSection {
            horizon: Some(s.horizon),
            initial: match s.initial {
                InitialCondition::Flat => Some("flat".into()),
                InitialCondition::Equilibrium => Some("equilibrium".into()),
                InitialCondition::State(_) => None,
            },
            initial_state: state,
            connect_init: Some(
                match s.connect_init {
                    ConnectInit::Zero => "zero",
                    ConnectInit::Idle => "idle",
                }
                .into(),
            ),
        }),
    };
    toml::to_string(&file).map_err(|e| de_err("<emit>", e))
}

/// Serialized closed-loop state: the format written by the `equilibrium`
/// subcommand and accepted as `[simulation.initial_state]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_norm: Option<f64>,
    pub inverters: Vec<UnitEntry>,
    pub network: NetworkEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEntry {
    pub delta: f64,
    pub zeta: f64,
    pub v_dc: f64,
    pub i: [f64; 2],
    pub v_o: [f64; 2],
    pub i_o: [f64; 2],
    pub beta: [f64; 2],
    pub xi: [f64; 2],
    pub chi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkEntry {
    pub v_bus: Vec<[f64; 2]>,
    pub i_line: Vec<[f64; 2]>,
    pub i_load: Vec<[f64; 2]>,
    pub i_cpl: Vec<[f64; 2]>,
}

fn pairs(x: &[f64]) -> Vec<[f64; 2]> {
    x.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn state_to_file(s: &SystemState, scenario: &str, residual: Option<f64>) -> StateFile {
    let l = s.layout;
    let v = |p: nalgebra::Vector2<f64>| [p.x, p.y];
    let o = l.network();
    let b = l.buses;
    let e = l.edges;
    StateFile {
        schema_version: SCHEMA_VERSION,
        scenario: Some(scenario.to_string()),
        residual_norm: residual,
        inverters: s
            .units()
            .iter()
            .map(|u| UnitEntry {
                delta: u.inverter.delta,
                zeta: u.controller.zeta,
                v_dc: u.inverter.v_dc,
                i: v(u.inverter.i),
                v_o: v(u.inverter.v_o),
                i_o: v(u.inverter.i_o),
                beta: v(u.controller.beta),
                xi: v(u.controller.xi),
                chi: u.chi,
            })
            .collect(),
        network: NetworkEntry {
            v_bus: pairs(&s.x[o..o + 2 * b]),
            i_line: pairs(&s.x[o + 2 * b..o + 2 * b + 2 * e]),
            i_load: pairs(&s.x[o + 2 * b + 2 * e..o + 4 * b + 2 * e]),
            i_cpl: pairs(&s.x[o + 4 * b + 2 * e..o + 6 * b + 2 * e]),
        },
    }
}

fn state_from_file(f: StateFile, layout: StateLayout, path: &str) -> Result<SystemState> {
    if f.schema_version != SCHEMA_VERSION {
        return Err(Error::schema(
            format!("{path}.schema_version"),
            format!("unsupported version {}", f.schema_version),
        ));
    }
    let counts = [
        ("inverters", f.inverters.len(), layout.inverters),
        ("network.v_bus", f.network.v_bus.len(), layout.buses),
        ("network.i_line", f.network.i_line.len(), layout.edges),
        ("network.i_load", f.network.i_load.len(), layout.buses),
        ("network.i_cpl", f.network.i_cpl.len(), layout.buses),
    ];
    for (name, got, want) in counts {
        if got != want {
            return Err(Error::schema(format!("{path}.{name}"), format!("{got} entries, expected {want}")));
        }
    }
    let mut s = SystemState::zeros(layout);
    let v = |a: [f64; 2]| nalgebra::Vector2::new(a[0], a[1]);
    for (k, u) in f.inverters.iter().enumerate() {
        let unit = UnitState {
            inverter: crate::inverter::InverterState {
                delta: u.delta,
                v_dc: u.v_dc,
                i: v(u.i),
                v_o: v(u.v_o),
                i_o: v(u.i_o),
            },
            controller: crate::controllers::ControllerState {
                zeta: u.zeta,
                beta: v(u.beta),
                xi: v(u.xi),
            },
            chi: u.chi,
        };
        s.set_unit(k, &unit);
    }
    let net: Vec<f64> = [&f.network.v_bus, &f.network.i_line, &f.network.i_load, &f.network.i_cpl]
        .into_iter()
        .flat_map(|list| list.iter().flat_map(|p| p.iter().copied()))
        .collect();
    let o = layout.network();
    s.x[o..].copy_from_slice(&net);
    Ok(s)
}

/// Writes a closed-loop state (e.g. a solved equilibrium) as TOML.
pub fn emit_state(state: &SystemState, scenario: &str, residual_norm: Option<f64>) -> Result<String> {
    toml::to_string(&state_to_file(state, scenario, residual_norm)).map_err(|e| de_err("<emit>", e))
}

/// Reads a state file written by [`emit_state`] for the given layout.
pub fn parse_state(text: &str, layout: StateLayout) -> Result<SystemState> {
    let f: StateFile = toml::from_str(text).map_err(|e| de_err("<state>", e))?;
    state_from_file(f, layout, "<state>")
}

/// Inverter filter parameters and controller gains drawn uniformly from the
/// benchmark ranges, on the bundled 5-bus network. `k_I` is drawn from `(0, 50)`.
pub fn random_scenario(seed: u64) -> Result<Scenario> {
    let mut s = bundled("table1_5bus")?.scenario;
    s.name = format!("random_{seed}");
    s.events.clear();
    s.windows.clear();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inv in &mut s.spec.inverters {
        let p = &mut inv.params;
        p.rf = rng.random_range(0.05..=1.5);
        p.lf = rng.random_range(0.08e-3..=8e-3);
        p.cf = rng.random_range(20e-6..=150e-6);
        p.lc = rng.random_range(0.1e-3..=30e-3);
        p.rc = rng.random_range(0.03..=2.0);
        let g = &mut inv.gains;
        g.frequency.k_p = rng.random_range(0.006..=0.06);
        g.frequency.k_i = rng.random_range(0.0..50.0);
        g.ac.n_q = rng.random_range(0.0..=0.078);
        g.ac.c_p = rng.random_range(1.0..=5.0);
        g.ac.c_i = rng.random_range(10.0..=50.0);
        g.ac.lambda_p = rng.random_range(1e-3..=0.1);
        g.ac.lambda_i = rng.random_range(2.5e-3..=2.5);
    }
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "one-bus"
lines = []

[network]
omega0 = 314.1592653589793
nominal_voltage = 311.0

[graph]
buses = 1
edges = []

[[shunts]]
capacitance = 1e-7
conductance = 1e-3

[[loads]]
bus = 1
resistance = 20.0
inductance = 0.03

[[inverters]]
bus = 1
"#;

    #[test]
    fn minimal_file_is_valid() {
        let p = parse_scenario(MINIMAL).unwrap();
        let s = &p.scenario;
        assert_eq!(s.spec.inverters.len(), 1);
        assert_eq!(s.spec.inverters[0].name, "DG1");
        assert_eq!(s.spec.inverters[0].params, InverterParams::default());
        assert_eq!(s.spec.inverters[0].gains, ControllerGains::default());
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!("colour = \"red\"\n{MINIMAL}");
        assert!(matches!(parse_scenario(&bad), Err(Error::Schema { .. })));
        let bad = format!("{MINIMAL}colour = \"red\"\n");
        assert!(matches!(parse_scenario(&bad), Err(Error::Schema { .. })));
        let bad = MINIMAL.replace("[[inverters]]\nbus = 1", "[[inverters]]\nbus = 1\n[inverters.params]\nrff = 1.0");
        let err = parse_scenario(&bad).unwrap_err();
        assert!(err.to_string().contains("inverters[0].params"), "{err}");
    }

    #[test]
    fn negative_filter_resistance_names_inverter() {
        let bad = MINIMAL.replace("[[inverters]]\nbus = 1", "[[inverters]]\nname = \"west\"\nbus = 1\n[inverters.params]\nrf = -0.1");
        let err = parse_scenario(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Schema { .. }));
        assert!(msg.contains("inverters[0]") && msg.contains("west"), "{msg}");
    }

    #[test]
    fn out_of_range_bus_is_schema_error() {
        let bad = MINIMAL.replace("[[inverters]]\nbus = 1", "[[inverters]]\nbus = 2");
        assert!(matches!(parse_scenario(&bad), Err(Error::Schema { path, .. }) if path == "inverters[0].bus"));
    }

    #[test]
    fn large_capacitance_warns() {
        let text = MINIMAL.replace("capacitance = 1e-7", "capacitance = 2.0");
        let p = parse_scenario(&text).unwrap();
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn gains_section_sets_defaults_and_inverter_overrides() {
        let text = format!(
            "{MINIMAL}\n[[inverters]]\nbus = 1\n[inverters.frequency]\nk_p = 0.03\n\n[gains.frequency]\nk_i = 20.0\n"
        );
        let s = parse_scenario(&text).unwrap().scenario;
        assert_eq!(s.spec.inverters[0].gains.frequency.k_i, 20.0);
        assert_eq!(s.spec.inverters[0].gains.frequency.k_p, 0.06);
        assert_eq!(s.spec.inverters[1].gains.frequency.k_i, 20.0);
        assert_eq!(s.spec.inverters[1].gains.frequency.k_p, 0.03);
    }

    #[test]
    fn bundled_files_round_trip() {
        for (name, _) in BUNDLED {
            let a = bundled(name).unwrap().scenario;
            let text = emit_scenario(&a).unwrap();
            let b = parse_scenario(&text).unwrap().scenario;
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn table1_shape() {
        let s = bundled("table1_5bus").unwrap().scenario;
        assert_eq!(s.spec.inverters.len(), 5);
        assert_eq!(s.spec.network.graph.edge_count(), 5);
        assert!(s.spec.network.graph.edges().iter().zip(MicrogridGraph::ring(5).unwrap().edges()).all(|(a, b)| a == b));
        assert!(s.spec.inverters.iter().all(|i| i.gains.frequency.k_p == 0.06));
    }

    #[test]
    fn state_round_trip() {
        let l = StateLayout {
            inverters: 2,
            buses: 3,
            edges: 2,
        };
        let mut s = SystemState::zeros(l);
        for (i, v) in s.x.iter_mut().enumerate() {
            *v = (i as f64).sin() * 1e3 + 1.0 / 3.0;
        }
        let text = emit_state(&s, "t", Some(1e-9)).unwrap();
        assert_eq!(parse_state(&text, l).unwrap(), s);
        let wrong = StateLayout { inverters: 1, ..l };
        assert!(parse_state(&text, wrong).is_err());
    }

    #[test]
    fn random_scenarios_are_valid_and_reproducible() {
        let a = random_scenario(7).unwrap();
        let b = random_scenario(7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_scenario(8).unwrap());
        let p = &a.spec.inverters[2].params;
        assert!((0.05..=1.5).contains(&p.rf));
    }
}
