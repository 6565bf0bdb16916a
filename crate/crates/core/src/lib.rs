//! Grid-forming inverter microgrids: averaged models, angle-droop control,
//! linearization, passivity and secondary-control stability certificates.

pub mod certificate;
pub mod certify;
pub mod controllers;
pub mod error;
pub mod frames;
pub mod integrate;
pub mod inverter;
pub mod linalg;
pub mod linearize;
pub mod model;
pub mod network;
pub mod passivity;
pub mod scenario;
pub mod secondary;
pub mod sim;
pub mod system;

pub use error::{Error, Result};
pub use certificate::{Certificate, CertificateKind};
pub use certify::{theorem3_certificate, ReducedModel, Theorem3Report};
pub use controllers::ControllerGains;
pub use inverter::{InverterParams, InverterState};
pub use linearize::{build_linearized, solve_equilibrium, Equilibrium, LinearizedInverter};
pub use model::{InverterSpec, MicrogridSpec};
pub use network::{MicrogridGraph, NetworkParams};
pub use passivity::{certify_inverters, certify_passivity, SweepOptions};
pub use scenario::{bundled, parse_scenario, parse_scenario_file};
pub use sim::{simulate, Scenario, Trajectory};
pub use system::{StateLayout, SystemState};
