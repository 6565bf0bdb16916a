//! Complete description of a microgrid: network, inverters and their
//! controllers, and the secondary layer.

use nalgebra::DMatrix;

use crate::controllers::ControllerGains;
use crate::error::{Error, Result};
use crate::inverter::InverterParams;
use crate::network::{MicrogridGraph, NetworkParams};
use crate::secondary::SecondaryConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct InverterSpec {
    pub name: String,
    /// Bus the inverter is attached to (0-based).
    pub bus: usize,
    pub params: InverterParams,
    pub gains: ControllerGains,
    /// Whether the inverter is part of the system at `t = 0`.
    pub connected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicrogridSpec {
    pub network: NetworkParams,
    pub inverters: Vec<InverterSpec>,
    pub secondary: SecondaryConfig,
}

impl MicrogridSpec {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.inverters.is_empty() {
            return Err(Error::EmptySystem);
        }
        let buses = self.network.bus_count();
        for (k, inv) in self.inverters.iter().enumerate() {
            let prefix = format!("inverters[{k}]");
            if inv.bus >= buses {
                return Err(Error::param(
                    format!("{prefix}.bus"),
                    format!("bus {} does not exist ({buses} buses)", inv.bus + 1),
                ));
            }
            inv.params.validate(&prefix)?;
            inv.gains.validate(&prefix)?;
        }
        self.secondary.validate(self.inverters.len())?;
        self.comm_graph()?;
        Ok(())
    }

    pub fn omega0(&self) -> f64 {
        self.network.omega0
    }

    pub fn initially_active(&self) -> Vec<usize> {
        (0..self.inverters.len())
            .filter(|&k| self.inverters[k].connected)
            .collect()
    }

    pub fn all_inverters(&self) -> Vec<usize> {
        (0..self.inverters.len()).collect()
    }

    /// Communication graph over inverters. Defaults to the electrical graph:
    /// inverters on adjacent buses are linked, and inverters sharing a bus are
    /// chained.
    pub fn comm_graph(&self) -> Result<MicrogridGraph> {
        let n = self.inverters.len();
        if let Some(edges) = &self.secondary.comm_edges {
            return MicrogridGraph::new(n, edges.clone());
        }
        let mut edges = Vec::new();
        for &(a, b) in self.network.graph.edges() {
            for (k, ik) in self.inverters.iter().enumerate() {
                for (l, il) in self.inverters.iter().enumerate() {
                    if ik.bus == a && il.bus == b {
                        edges.push((k, l));
                    }
                }
            }
        }
        for k in 0..n {
            if let Some(l) = (k + 1..n).find(|&l| self.inverters[l].bus == self.inverters[k].bus) {
                edges.push((k, l));
            }
        }
        MicrogridGraph::new(n, edges)
    }

    /// Laplacian of the communication graph induced on `active`.
    pub fn comm_laplacian(&self, active: &[usize]) -> Result<DMatrix<f64>> {
        let g = self.comm_graph()?.induced(active)?;
        if !g.is_connected() {
            return Err(Error::Hypothesis(
                "communication graph among active inverters is not connected".to_string(),
            ));
        }
        Ok(g.laplacian())
    }

    /// Gains ratio `k_I / k_p` if it is the same for all listed inverters.
    pub fn uniform_tau(&self, active: &[usize]) -> Option<f64> {
        let taus: Vec<f64> = active
            .iter()
            .map(|&k| {
                let f = &self.inverters[k].gains.frequency;
                f.k_i / f.k_p
            })
            .collect();
        let t0 = *taus.first()?;
        taus.iter()
            .all(|t| (t - t0).abs() <= 1e-9 * t0.abs().max(1.0))
            .then_some(t0)
    }
}
