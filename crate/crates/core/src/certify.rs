//! Reduced static model of the inverter network on the secondary-control
//! timescale, and the convergence certificate built on it.
//!
//! Chain of constructions at an equilibrium `delta*`:
//! `Y_1` (bus admittance), `Y_2 = (Z_c + S Y_1^-1 S^T - n_q e2)^-1`,
//! `F(delta*) = e^T Y_2 J^T T(delta*) e`,
//! `M(delta*) = I + k_I (k_I k_p^-1 + F V_n)^-1 k_p^-1`,
//! and the reduced law `d(chi~)/dt = -alpha L M(delta*) chi~`.

use nalgebra::{DMatrix, DVector, Matrix2};
use std::f64::consts::FRAC_PI_2;

use crate::certificate::{Certificate, CertificateKind};
use crate::error::{Error, Result};
use crate::frames::{block_rotation, e2_matrix};
use crate::linalg::{big_e, big_j, blkdiag, condition_number, dq_impedance, eigenvalues, spd_sqrt, spectral_norm};
use crate::linearize::Equilibrium;
use crate::model::MicrogridSpec;
use crate::network::{network_admittance, NetworkParams};

/// Relative threshold below which an eigenvalue counts as zero.
pub const ZERO_EIG_REL: f64 = 1e-9;

/// `Y_1` with the constant-power loads linearized about the bus voltages
/// `v_bus` (pairs per bus). Without voltages the loads are omitted.
pub fn bus_admittance(network: &NetworkParams, v_bus: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let mut y = network_admittance(network)?;
    let Some(v) = v_bus else {
        return Ok(y);
    };
    let floor2 = (network.cpl_floor * network.nominal_voltage).powi(2);
    for (b, load) in network.loads.iter().enumerate() {
        if load.power == 0.0 && load.reactive_power == 0.0 {
            continue;
        }
        let vb = nalgebra::Vector2::new(v[2 * b], v[2 * b + 1]);
        let pq = Matrix2::new(load.power, load.reactive_power, -load.reactive_power, load.power);
        let mag2 = vb.norm_squared();
        let block = if mag2 > floor2 {
            pq / mag2 - pq * vb * vb.transpose() * (2.0 / (mag2 * mag2))
        } else {
            pq / floor2
        };
        let mut view = y.fixed_view_mut::<2, 2>(2 * b, 2 * b);
        view += block;
    }
    Ok(y)
}

/// `Y_2` for the inverters `active` given a bus admittance `y1`.
pub fn build_y2(spec: &MicrogridSpec, active: &[usize], y1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = active.len();
    let buses = spec.network.bus_count();
    if y1.shape() != (2 * buses, 2 * buses) {
        return Err(Error::Dimension(format!("Y_1 is {:?} for {buses} buses", y1.shape())));
    }
    let w0 = spec.omega0();
    let mut sel = DMatrix::zeros(2 * n, 2 * buses);
    let mut zc = Vec::with_capacity(n);
    let mut nq = Vec::with_capacity(n);
    for (k, &id) in active.iter().enumerate() {
        let inv = &spec.inverters[id];
        sel[(2 * k, 2 * inv.bus)] = 1.0;
        sel[(2 * k + 1, 2 * inv.bus + 1)] = 1.0;
        zc.push(dq_impedance(inv.params.rc, inv.params.lc, w0));
        nq.push(e2_matrix() * inv.gains.ac.n_q);
    }
    let y1_inv = y1
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("bus admittance Y_1".to_string()))?;
    let inner = blkdiag(&zc) + &sel * y1_inv * sel.transpose() - blkdiag(&nq);
    inner
        .try_inverse()
        .ok_or_else(|| Error::Singular("Z_c + Y_1^-1 - n_q (inner factor of Y_2)".to_string()))
}

/// `F(delta) = e^T Y_2 J^T T(delta) e`.
pub fn build_f(y2: &DMatrix<f64>, delta: &[f64]) -> Result<DMatrix<f64>> {
    let n = delta.len();
    if y2.shape() != (2 * n, 2 * n) {
        return Err(Error::Dimension(format!("Y_2 is {:?} for {n} angles", y2.shape())));
    }
    if let Some(d) = delta.iter().find(|d| !(d.abs() < FRAC_PI_2)) {
        return Err(Error::Hypothesis(format!("|delta*| = {} is not below pi/2", d.abs())));
    }
    let e = big_e(n);
    Ok(e.transpose() * y2 * big_j(n).transpose() * block_rotation(delta)? * e)
}

/// `M = I + k_I (k_I k_p^-1 + F diag(V_n))^-1 k_p^-1`.
pub fn build_m(f: &DMatrix<f64>, k_p: &[f64], k_i: &[f64], v_n: &[f64]) -> Result<DMatrix<f64>> {
    build_m_signed(f, k_p, k_i, v_n, 1.0)
}

/// Variant with the opposite sign of the correction term,
/// `I - k_I (k_I k_p^-1 + F V_n)^-1 k_p^-1`, which is what linearizing the
/// frequency law `omega = omega0 - k_p i_oD - k_I delta + chi` produces.
pub fn build_m_consistent(f: &DMatrix<f64>, k_p: &[f64], k_i: &[f64], v_n: &[f64]) -> Result<DMatrix<f64>> {
    build_m_signed(f, k_p, k_i, v_n, -1.0)
}

fn build_m_signed(f: &DMatrix<f64>, k_p: &[f64], k_i: &[f64], v_n: &[f64], sign: f64) -> Result<DMatrix<f64>> {
    let n = k_p.len();
    if f.shape() != (n, n) || k_i.len() != n || v_n.len() != n {
        return Err(Error::Dimension(format!(
            "F {:?}, k_p {n}, k_I {}, V_n {}",
            f.shape(),
            k_i.len(),
            v_n.len()
        )));
    }
    if k_p.iter().any(|&k| !(k > 0.0)) || k_i.iter().any(|&k| !(k >= 0.0)) {
        return Err(Error::param("gains", "need k_p > 0 and k_I >= 0"));
    }
    let ki = DMatrix::from_diagonal(&DVector::from_column_slice(k_i));
    let kp_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, k_p.iter().map(|k| 1.0 / k)));
    let vn = DMatrix::from_diagonal(&DVector::from_column_slice(v_n));
    let inner = &ki * &kp_inv + f * vn;
    let inv = inner
        .try_inverse()
        .ok_or_else(|| Error::Singular("k_I k_p^-1 + F V_n (inner factor of M)".to_string()))?;
    Ok(DMatrix::identity(n, n) + ki * inv * kp_inv * sign)
}

/// `I + (I + F V_n / tau)^-1`, equal to [`build_m`] when `k_I / k_p = tau` for all units.
pub fn build_m_uniform(f: &DMatrix<f64>, tau: f64, v_n: &[f64]) -> Result<DMatrix<f64>> {
    let n = v_n.len();
    let vn = DMatrix::from_diagonal(&DVector::from_column_slice(v_n));
    let inner = DMatrix::identity(n, n) + f * vn / tau;
    let inv = inner
        .try_inverse()
        .ok_or_else(|| Error::Singular("I + F V_n / tau".to_string()))?;
    Ok(DMatrix::identity(n, n) + inv)
}

#[derive(Clone, Debug)]
pub struct ReducedModel {
    pub active: Vec<usize>,
    pub delta_star: Vec<f64>,
    pub k_p: Vec<f64>,
    pub k_i: Vec<f64>,
    pub v_n: Vec<f64>,
    pub y1: DMatrix<f64>,
    pub y2: DMatrix<f64>,
    pub f_star: DMatrix<f64>,
    pub f_zero: DMatrix<f64>,
    pub m_star: DMatrix<f64>,
    pub m_zero: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    /// `L M(0)`.
    pub h_hat: DMatrix<f64>,
    pub alpha: f64,
}

impl ReducedModel {
    /// Builds the reduced model at a solved equilibrium. Constant-power loads
    /// enter `Y_1` linearized about the equilibrium bus voltages.
    pub fn new(spec: &MicrogridSpec, eq: &Equilibrium) -> Result<Self> {
        let active = eq.active.clone();
        let l = eq.state.layout;
        let o = l.network();
        let v_bus = &eq.state.x[o..o + 2 * l.buses];
        let y1 = bus_admittance(&spec.network, Some(v_bus))?;
        let y2 = build_y2(spec, &active, &y1)?;
        let delta_star = eq.delta_star();
        let gains = |f: fn(&crate::controllers::ControllerGains) -> f64| -> Vec<f64> {
            active.iter().map(|&id| f(&spec.inverters[id].gains)).collect()
        };
        let k_p = gains(|g| g.frequency.k_p);
        let k_i = gains(|g| g.frequency.k_i);
        let v_n = gains(|g| g.ac.v_nominal);
        let f_star = build_f(&y2, &delta_star)?;
        let f_zero = build_f(&y2, &vec![0.0; active.len()])?;
        let m_star = build_m(&f_star, &k_p, &k_i, &v_n)?;
        let m_zero = build_m(&f_zero, &k_p, &k_i, &v_n)?;
        let laplacian = spec.comm_laplacian(&active)?;
        let h_hat = &laplacian * &m_zero;
        Ok(ReducedModel {
            active,
            delta_star,
            k_p,
            k_i,
            v_n,
            y1,
            y2,
            f_star,
            f_zero,
            m_star,
            m_zero,
            laplacian,
            h_hat,
            alpha: spec.secondary.alpha,
        })
    }

    pub fn n(&self) -> usize {
        self.active.len()
    }

    /// `Delta = L (M(delta*) - M(0))`.
    pub fn delta_matrix(&self) -> DMatrix<f64> {
        &self.laplacian * (&self.m_star - &self.m_zero)
    }

    /// `-alpha L M(delta*)`, the reduced state matrix.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        -(&self.laplacian * &self.m_star) * self.alpha
    }

    /// Same as [`Self::system_matrix`] with [`build_m_consistent`].
    pub fn consistent_system_matrix(&self) -> Result<DMatrix<f64>> {
        let m = build_m_consistent(&self.f_star, &self.k_p, &self.k_i, &self.v_n)?;
        Ok(-(&self.laplacian * m) * self.alpha)
    }

    /// Steady angle shift `delta~ = -(k_I k_p^-1 + F V_n)^-1 k_p^-1 chi~`.
    pub fn static_angle_response(&self, chi: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        let ki = DMatrix::from_diagonal(&DVector::from_column_slice(&self.k_i));
        let kp_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, self.k_p.iter().map(|k| 1.0 / k)));
        let vn = DMatrix::from_diagonal(&DVector::from_column_slice(&self.v_n));
        let inner = ki * &kp_inv + &self.f_star * vn;
        let x = inner
            .lu()
            .solve(&(kp_inv * chi))
            .ok_or_else(|| Error::Singular("k_I k_p^-1 + F V_n".to_string()))?;
        Ok(-x)
    }

    /// Steady output-current shift `I~_oDQ = Y_2 J^T T(delta*) e V_n delta~`.
    pub fn static_current_response(&self, delta: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        let vn = DMatrix::from_diagonal(&DVector::from_column_slice(&self.v_n));
        Ok(&self.y2 * big_j(n).transpose() * block_rotation(&self.delta_star)? * big_e(n) * vn * delta)
    }
}

/// Eigenvalues of a matrix known to have a real spectrum, descending.
fn real_spectrum_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = eigenvalues(m).iter().map(|z| z.re).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Eigenbasis of a diagonalizable matrix with real spectrum, one null-space
/// block per cluster of equal eigenvalues. Columns have unit length.
fn raw_eigenbasis(m: &DMatrix<f64>, spectrum: &[f64]) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let scale = spectrum.iter().map(|l| l.abs()).fold(0.0, f64::max).max(1e-300);
    let cluster_tol = 1e-7 * scale;
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut i = 0;
    while i < spectrum.len() {
        let mut j = i + 1;
        while j < spectrum.len() && (spectrum[j] - spectrum[i]).abs() <= cluster_tol {
            j += 1;
        }
        let mult = j - i;
        let mean = spectrum[i..j].iter().sum::<f64>() / mult as f64;
        let shifted = m - DMatrix::identity(n, n) * mean;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        for &k in idx.iter().take(mult) {
            cols.push(v_t.row(k).transpose().normalize());
        }
        i = j;
    }
    Some(DMatrix::from_columns(&cols))
}

/// Largest-eigenvalue-first spectrum, zero count and the diagonalizing bases.
#[derive(Clone, Debug, PartialEq)]
pub struct Theorem3Report {
    pub tau: f64,
    pub eigenvalues_h_hat: Vec<f64>,
    pub lambda_n_minus_1: f64,
    pub k_symmetric: Option<f64>,
    pub k_raw: Option<f64>,
    pub k: f64,
    pub delta_norm: f64,
    pub bound: f64,
    pub margin: f64,
    /// Eigenvalues of `L M(delta*)` (real, imaginary parts).
    pub sharp_spectrum: Vec<(f64, f64)>,
    pub sharp_zero_count: usize,
    pub sharp_pass: bool,
}

/// Condition-number bound `||Delta|| < lambda_{n-1}(H^) / K` together with the
/// direct spectrum of `L M(delta*)`.
pub fn theorem3_report(spec: &MicrogridSpec, model: &ReducedModel) -> Result<Theorem3Report> {
    let tau = spec.uniform_tau(&model.active).ok_or_else(|| {
        Error::Hypothesis("k_I / k_p must be the same for every inverter (uniform tau)".to_string())
    })?;
    if let Some(d) = model.delta_star.iter().find(|d| !(d.abs() < FRAC_PI_2)) {
        return Err(Error::Hypothesis(format!("|delta*| = {} is not below pi/2", d.abs())));
    }
    let n = model.n();
    if n < 2 {
        return Err(Error::Hypothesis("needs at least two inverters".to_string()));
    }
    let spectrum = real_spectrum_desc(&model.h_hat);
    let lambda_n_minus_1 = spectrum[n - 2];

    let m0 = &model.m_zero;
    let asym = (m0 - m0.transpose()).amax() / m0.amax();
    let k_symmetric = if asym <= 1e-9 {
        let (s, s_inv) = spd_sqrt(m0)?;
        let sym = &s * &model.laplacian * &s;
        let q = ((&sym + sym.transpose()) * 0.5).symmetric_eigen().eigenvectors;
        Some(condition_number(&(s_inv * q)))
    } else {
        None
    };
    let k_raw = raw_eigenbasis(&model.h_hat, &spectrum)
        .map(|psi| condition_number(&psi))
        .filter(|k| k.is_finite());
    let k = match (k_symmetric, k_raw) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return Err(Error::Eigen("no diagonalizing basis for L M(0)".to_string())),
    };
    let delta_norm = spectral_norm(&model.delta_matrix());
    let bound = lambda_n_minus_1 / k;

    let lm = &model.laplacian * &model.m_star;
    let sharp: Vec<(f64, f64)> = {
        let mut ev: Vec<(f64, f64)> = eigenvalues(&lm).iter().map(|z| (z.re, z.im)).collect();
        ev.sort_by(|a, b| b.0.total_cmp(&a.0));
        ev
    };
    let scale = sharp.iter().map(|&(r, i)| r.hypot(i)).fold(0.0, f64::max);
    let zero = |&(r, i): &(f64, f64)| r.hypot(i) < ZERO_EIG_REL * scale;
    let sharp_zero_count = sharp.iter().filter(|z| zero(z)).count();
    let sharp_pass = sharp_zero_count == 1 && sharp.iter().filter(|z| !zero(z)).all(|z| z.0 > 0.0);

    Ok(Theorem3Report {
        tau,
        eigenvalues_h_hat: spectrum,
        lambda_n_minus_1,
        k_symmetric,
        k_raw,
        k,
        delta_norm,
        bound,
        margin: bound - delta_norm,
        sharp_spectrum: sharp,
        sharp_zero_count,
        sharp_pass,
    })
}

/// Certificate for convergence of the secondary layer at `eq`.
pub fn theorem3_certificate(spec: &MicrogridSpec, eq: &Equilibrium) -> Result<Certificate> {
    let model = ReducedModel::new(spec, eq)?;
    let r = theorem3_report(spec, &model)?;
    let mut cert = Certificate::new(CertificateKind::Theorem3, r.margin > 0.0, r.margin)
        .with_scalar("tau", r.tau)
        .with_scalar("delta_norm", r.delta_norm)
        .with_scalar("bound", r.bound)
        .with_scalar("condition_number", r.k)
        .with_scalar("lambda_n_minus_1", r.lambda_n_minus_1)
        .with_scalar("sharp_zero_eigenvalues", r.sharp_zero_count as f64)
        .with_scalar("sharp_pass", if r.sharp_pass { 1.0 } else { 0.0 })
        .with_value("eigenvalues_h_hat", r.eigenvalues_h_hat.clone())
        .with_value("spectrum_lm_re", r.sharp_spectrum.iter().map(|z| z.0).collect::<Vec<_>>())
        .with_value("spectrum_lm_im", r.sharp_spectrum.iter().map(|z| z.1).collect::<Vec<_>>())
        .with_value("delta_star", model.delta_star.clone());
    if let Some(k) = r.k_symmetric {
        cert = cert.with_scalar("condition_number_symmetric", k);
    }
    if let Some(k) = r.k_raw {
        cert = cert.with_scalar("condition_number_raw", k);
    }
    if !cert.pass {
        cert = cert.with_reason("||Delta||_2 is not below lambda_{n-1}(H^) / K");
    }
    if !r.sharp_pass {
        cert = cert.with_note("direct spectrum of L M(delta*) does not have exactly one zero eigenvalue with the rest positive");
    }
    if !eq.converged {
        cert = cert.with_note("equilibrium not converged");
    }
    Ok(cert)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedTrajectory {
    pub time: Vec<f64>,
    /// `chi~` per sample.
    pub chi: Vec<Vec<f64>>,
    /// Consensus limit `c M^-1 1`, with `c` fixed by the conserved sum.
    pub predicted_limit: Vec<f64>,
}

/// Exact solution `exp(t A) chi0` of `d(chi~)/dt = A chi~` on `samples` points of `[0, horizon]`.
pub fn simulate_linear(a: &DMatrix<f64>, chi0: &[f64], horizon: f64, samples: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.nrows();
    if chi0.len() != n {
        return Err(Error::Dimension(format!("chi0 has {} entries for {n} inverters", chi0.len())));
    }
    if samples < 2 || !(horizon > 0.0) {
        return Err(Error::param("samples", "need at least two samples on a positive horizon"));
    }
    let dt = horizon / (samples - 1) as f64;
    let step = (a * dt).exp();
    let mut x = DVector::from_column_slice(chi0);
    let mut time = Vec::with_capacity(samples);
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        time.push(k as f64 * dt);
        out.push(x.iter().copied().collect());
        x = &step * x;
    }
    Ok((time, out))
}

/// Integrates the reduced secondary dynamics from the deviation `chi0`.
pub fn reduced_secondary_simulate(
    spec: &MicrogridSpec,
    eq: &Equilibrium,
    chi0: &[f64],
    horizon: f64,
    samples: usize,
) -> Result<ReducedTrajectory> {
    let model = ReducedModel::new(spec, eq)?;
    let (time, chi) = simulate_linear(&model.system_matrix(), chi0, horizon, samples)?;
    Ok(ReducedTrajectory {
        time,
        chi,
        predicted_limit: consensus_limit(&model.m_star, chi0)?,
    })
}

/// Kernel direction `M^-1 1` of `L M` scaled so that the sum matches `chi0`.
pub fn consensus_limit(m: &DMatrix<f64>, chi0: &[f64]) -> Result<Vec<f64>> {
    let n = m.nrows();
    let w = m
        .clone()
        .lu()
        .solve(&DVector::from_element(n, 1.0))
        .ok_or_else(|| Error::Singular("M".to_string()))?;
    let c = chi0.iter().sum::<f64>() / w.sum();
    Ok(w.iter().map(|x| x * c).collect())
}

/// Structural properties of `M(delta*)` and `M(0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixProperties {
    pub m_star_row_dominant: bool,
    pub m_star_column_dominant: bool,
    pub m_zero_asymmetry: f64,
    pub m_zero_min_eigenvalue: f64,
}

pub fn matrix_properties(m_star: &DMatrix<f64>, m_zero: &DMatrix<f64>) -> MatrixProperties {
    let sym = (m_zero + m_zero.transpose()) * 0.5;
    MatrixProperties {
        m_star_row_dominant: crate::linalg::row_dominant_positive(m_star),
        m_star_column_dominant: crate::linalg::column_dominant_positive(m_star),
        m_zero_asymmetry: (m_zero - m_zero.transpose()).amax() / m_zero.amax(),
        m_zero_min_eigenvalue: sym.symmetric_eigenvalues().min(),
    }
}
