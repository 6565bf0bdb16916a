//! Distributed secondary control `d(chi)/dt = -alpha L chi + alpha L k_I delta`
//! and the steady-state power-sharing check.

use nalgebra::DMatrix;

use crate::certificate::{Certificate, CertificateKind};
use crate::error::{Error, Result};
use crate::linearize::Equilibrium;
use crate::network::positive;

#[derive(Clone, Debug, PartialEq)]
pub struct SecondaryConfig {
    pub enabled: bool,
    /// Consensus gain (1/s).
    pub alpha: f64,
    /// Time at which the secondary layer switches on (s).
    pub activation_time: f64,
    /// Communication edges between inverters (0-based); `None` follows the
    /// electrical graph.
    pub comm_edges: Option<Vec<(usize, usize)>>,
}

impl Default for SecondaryConfig {
    fn default() -> Self {
        SecondaryConfig {
            enabled: false,
            alpha: 667.0,
            activation_time: 0.0,
            comm_edges: None,
        }
    }
}

impl SecondaryConfig {
    pub fn validate(&self, inverters: usize) -> Result<()> {
        positive("secondary.alpha", self.alpha)?;
        if !(self.activation_time.is_finite() && self.activation_time >= 0.0) {
            return Err(Error::param("secondary.activation_time", "must be non-negative"));
        }
        if let Some(edges) = &self.comm_edges {
            for (z, &(a, b)) in edges.iter().enumerate() {
                if a >= inverters || b >= inverters || a == b {
                    return Err(Error::param(
                        format!("secondary.comm_edges[{z}]"),
                        "must join two distinct existing inverters",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `d(chi)/dt`, evaluated row by row so that entry `i` only reads neighbours
/// of `i` (nonzeros of row `i` of the Laplacian).
pub fn secondary_derivative(
    chi: &[f64],
    delta: &[f64],
    k_i: &[f64],
    alpha: f64,
    laplacian: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let n = chi.len();
    if delta.len() != n || k_i.len() != n || laplacian.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "secondary law with {n} agents got delta {}, k_I {}, Laplacian {:?}",
            delta.len(),
            k_i.len(),
            laplacian.shape()
        )));
    }
    let mut out = vec![0.0; n];
    secondary_rhs(chi, |j| k_i[j] * delta[j], alpha, laplacian, &mut out);
    Ok(out)
}

pub(crate) fn secondary_rhs(
    chi: &[f64],
    damping_term: impl Fn(usize) -> f64,
    alpha: f64,
    laplacian: &DMatrix<f64>,
    out: &mut [f64],
) {
    let n = chi.len();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            let l = laplacian[(i, j)];
            if l != 0.0 {
                acc += l * (chi[j] - damping_term(j));
            }
        }
        out[i] = -alpha * acc;
    }
}

/// Power sharing from steady-state direct output currents and voltages.
pub fn power_sharing_certificate(i_od: &[f64], v_od: &[f64], k_p: &[f64], tol_rel: f64) -> Certificate {
    let kind = CertificateKind::PowerSharing;
    if i_od.is_empty() || i_od.len() != k_p.len() || v_od.len() != i_od.len() {
        return Certificate::failed(kind, "inconsistent input lengths");
    }
    let weighted: Vec<f64> = i_od.iter().zip(k_p).map(|(i, k)| i * k).collect();
    let max = weighted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = weighted.iter().copied().fold(f64::INFINITY, f64::min);
    let denom = weighted.iter().map(|w| w.abs()).fold(f64::INFINITY, f64::min);
    let deviation = if max == min { 0.0 } else { (max - min) / denom };
    let powers: Vec<f64> = i_od.iter().zip(v_od).map(|(i, v)| i * v).collect();
    let ratios: Vec<f64> = powers.iter().map(|p| p / powers[0]).collect();
    let margin = tol_rel - deviation;
    Certificate::new(kind, deviation.is_finite() && margin >= 0.0, margin)
        .with_scalar("max_relative_deviation", deviation)
        .with_scalar("tolerance", tol_rel)
        .with_value("kp_iod", weighted)
        .with_value("active_power", powers)
        .with_value("power_ratio_to_first", ratios)
}

/// Checks `k_p,j I*_oD,j` equal across the active inverters of a solved equilibrium.
pub fn check_power_sharing(eq: &Equilibrium, k_p: &[f64], tol_rel: f64) -> Certificate {
    if !eq.converged {
        return Certificate::failed(CertificateKind::PowerSharing, "equilibrium not converged");
    }
    let units = eq.units();
    let i_od: Vec<f64> = units.iter().map(|u| u.inverter.i_o.x).collect();
    let v_od: Vec<f64> = units.iter().map(|u| u.inverter.v_o.x).collect();
    let mut cert = power_sharing_certificate(&i_od, &v_od, k_p, tol_rel);
    if !eq.secondary {
        cert = cert.with_note("equilibrium solved without secondary control");
    }
    cert
}
