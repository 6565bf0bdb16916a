//! Frequency-domain passivity certification of the linearized inverters.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::certificate::{Certificate, CertificateKind};
use crate::error::{Error, Result};
use crate::linalg::{logspace, min_hermitian_part_eigenvalue};
use crate::linearize::{build_linearized_unit, solve_equilibrium, Equilibrium, LinearizedInverter};
use crate::model::MicrogridSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    /// Golden-section refinement around the grid minimum.
    pub refine: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            omega_min: 1e-2,
            omega_max: 1e6,
            points: 1000,
            refine: true,
        }
    }
}

impl SweepOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_min > 0.0 && self.omega_max > self.omega_min && self.omega_max.is_finite()) {
            return Err(Error::param("omega range", "need 0 < omega_min < omega_max"));
        }
        if self.points < 2 {
            return Err(Error::param("points", "need at least two grid points"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassivitySweep {
    /// Strictly increasing grid (rad/s).
    pub omega: Vec<f64>,
    /// Smallest eigenvalue of `G(jw) + G(jw)^*` per grid point (NaN when skipped).
    pub min_eigenvalues: Vec<f64>,
    /// Minimum over the grid, lowered by refinement when enabled.
    pub overall_margin: f64,
    pub argmin_omega: f64,
    /// Grid points where the resolvent was singular.
    pub skipped: Vec<f64>,
    /// Largest real part among the eigenvalues of `A_cl`.
    pub spectral_abscissa: f64,
}

impl PassivitySweep {
    pub fn is_stable(&self) -> bool {
        self.spectral_abscissa < 0.0
    }
}

/// Smallest eigenvalue of the Hermitian part `G(jw) + G(jw)^*`.
pub fn hermitian_margin(lin: &LinearizedInverter, omega: f64) -> Result<f64> {
    let g = lin.transfer_function(omega)?;
    Ok(min_hermitian_part_eigenvalue(&g))
}

/// Evaluates the Hermitian-part eigenvalue over a log grid. Stability of
/// `A_cl` is reported, not assumed; see [`certify_passivity`].
pub fn passivity_sweep(lin: &LinearizedInverter, opts: &SweepOptions) -> Result<PassivitySweep> {
    opts.validate()?;
    let omega = logspace(opts.omega_min, opts.omega_max, opts.points);
    let mut vals = Vec::with_capacity(omega.len());
    let mut skipped = Vec::new();
    for &w in &omega {
        match hermitian_margin(lin, w) {
            Ok(v) => vals.push(v),
            Err(Error::SingularResolvent { omega }) => {
                log::warn!("resolvent singular at omega = {omega}; point skipped");
                skipped.push(omega);
                vals.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }
    let (imin, _) = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Hypothesis("no grid point could be evaluated".to_string()))?;
    let (mut margin, mut arg) = (vals[imin], omega[imin]);
    if opts.refine {
        let lo = omega[imin.saturating_sub(1)].ln();
        let hi = omega[(imin + 1).min(omega.len() - 1)].ln();
        let f = |x: f64| hermitian_margin(lin, x.exp()).unwrap_or(f64::INFINITY);
        let (x, v) = golden_section(f, lo, hi, 1e-10);
        if v < margin {
            margin = v;
            arg = x.exp();
        }
    }
    Ok(PassivitySweep {
        omega,
        min_eigenvalues: vals,
        overall_margin: margin,
        argmin_omega: arg,
        skipped,
        spectral_abscissa: lin.spectral_abscissa(),
    })
}

/// Minimizes a unimodal `f` on `[a, b]`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .unwrap()
}

/// Pass iff `A_cl` is Hurwitz and the sweep margin is strictly positive.
pub fn certify_passivity(lin: &LinearizedInverter, opts: &SweepOptions) -> Result<(Certificate, Option<PassivitySweep>)> {
    let kind = CertificateKind::Passivity;
    let abscissa = lin.spectral_abscissa();
    if abscissa >= 0.0 {
        let cert = Certificate::new(kind, false, -abscissa)
            .with_reason("not asymptotically stable")
            .with_scalar("spectral_abscissa", abscissa);
        return Ok((cert, None));
    }
    let sweep = passivity_sweep(lin, opts)?;
    let mut cert = Certificate::new(kind, sweep.overall_margin > 0.0, sweep.overall_margin)
        .with_scalar("argmin_omega", sweep.argmin_omega)
        .with_scalar("spectral_abscissa", abscissa)
        .with_scalar("omega_min", opts.omega_min)
        .with_scalar("omega_max", opts.omega_max)
        .with_scalar("points", opts.points as f64);
    if !cert.pass {
        cert = cert.with_reason("Hermitian part of G(jw) not positive definite");
    }
    if !sweep.skipped.is_empty() {
        cert = cert.with_note(format!("{} grid points skipped (singular resolvent)", sweep.skipped.len()));
    }
    Ok((cert, Some(sweep)))
}

/// Per-inverter result of [`certify_inverters`].
#[derive(Clone, Debug)]
pub struct InverterPassivity {
    /// Index into `spec.inverters`.
    pub inverter: usize,
    pub certificate: Certificate,
    pub sweep: Option<PassivitySweep>,
}

/// Certifies every active inverter of a solved equilibrium separately.
pub fn certify_inverters(eq: &Equilibrium, spec: &MicrogridSpec, opts: &SweepOptions) -> Result<Vec<InverterPassivity>> {
    eq.active
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let lin = build_linearized_unit(eq, spec, k)?;
            let (certificate, sweep) = certify_passivity(&lin, opts)?;
            Ok(InverterPassivity {
                inverter: id,
                certificate: certificate.with_note(format!("inverter {}", spec.inverters[id].name)),
                sweep,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KiSearch {
    /// `(k_I, margin)`; the margin is `-inf` where no equilibrium was found.
    pub curve: Vec<(f64, f64)>,
    /// Candidates with a passing certificate.
    pub passing: Vec<f64>,
    /// Largest margin change between adjacent finite candidates.
    pub max_jump: f64,
}

/// Scans `k_I` of one inverter over `[lo, hi]`, re-solving the equilibrium and
/// re-certifying that inverter for each candidate.
pub fn find_passive_k_i(
    spec: &MicrogridSpec,
    inverter: usize,
    range: (f64, f64),
    steps: usize,
    opts: &SweepOptions,
) -> Result<KiSearch> {
    let (lo, hi) = range;
    if inverter >= spec.inverters.len() {
        return Err(Error::OutOfRange {
            what: "inverter",
            index: inverter,
            count: spec.inverters.len(),
        });
    }
    if !(lo >= 0.0 && hi >= lo && hi.is_finite()) || steps == 0 {
        return Err(Error::param("k_I range", "need 0 <= lo <= hi and at least one step"));
    }
    let candidates: Vec<f64> = if steps == 1 || lo == hi {
        vec![lo]
    } else {
        (0..steps).map(|s| lo + (hi - lo) * s as f64 / (steps - 1) as f64).collect()
    };
    let mut curve = Vec::with_capacity(candidates.len());
    for k_i in candidates {
        let mut s = spec.clone();
        s.inverters[inverter].gains.frequency.k_i = k_i;
        let margin = match solve_equilibrium(&s, None) {
            Ok(eq) if eq.converged => match eq.active.iter().position(|&a| a == inverter) {
                Some(k) => certify_passivity(&build_linearized_unit(&eq, &s, k)?, opts)?.0.margin,
                None => return Err(Error::param("inverter", "is not connected at t = 0")),
            },
            _ => f64::NEG_INFINITY,
        };
        log::debug!("k_I = {k_i}: margin {margin:.4e}");
        curve.push((k_i, margin));
    }
    let passing = curve.iter().filter(|(_, m)| *m > 0.0).map(|(k, _)| *k).collect();
    let max_jump = curve
        .windows(2)
        .filter(|w| w[0].1.is_finite() && w[1].1.is_finite())
        .map(|w| (w[1].1 - w[0].1).abs())
        .fold(0.0, f64::max);
    Ok(KiSearch {
        curve,
        passing,
        max_jump,
    })
}

/// Assembles the block matrix
/// `[[P A + A^T P + eps P, P B_u - C^T], [B_u^T P - C, -(D + D^T)]]`.
pub fn kyp_lmi_matrix(lin: &LinearizedInverter, p: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    let a = &lin.a_cl;
    let dim = a.nrows();
    let m = lin.b_u.ncols();
    if p.shape() != (dim, dim) {
        return Err(Error::Dimension(format!("P is {:?}, A_cl is {dim}x{dim}", p.shape())));
    }
    let sigma = p * a + a.transpose() * p + p * epsilon;
    let off = p * &lin.b_u - lin.c.transpose();
    let d = -(&lin.d_u + lin.d_u.transpose());
    let mut out = DMatrix::zeros(dim + m, dim + m);
    out.view_mut((0, 0), (dim, dim)).copy_from(&sigma);
    out.view_mut((0, dim), (dim, m)).copy_from(&off);
    out.view_mut((dim, 0), (m, dim)).copy_from(&off.transpose());
    out.view_mut((dim, dim), (m, m)).copy_from(&d);
    Ok(out)
}

/// Largest eigenvalue of [`kyp_lmi_matrix`]; `<= 0` certifies passivity for `P`.
pub fn kyp_lmi_residual(lin: &LinearizedInverter, p: &DMatrix<f64>, epsilon: f64) -> Result<f64> {
    let m = kyp_lmi_matrix(lin, p, epsilon)?;
    let sym = (&m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.max())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `G(s) = 1 / (s + 1)` as a one-state realization.
    fn first_order() -> LinearizedInverter {
        let one = DMatrix::from_element(1, 1, 1.0);
        LinearizedInverter {
            n: 1,
            gamma: one.clone(),
            a_hat: -one.clone(),
            b_hat: one.clone(),
            a: -one.clone(),
            b: one.clone(),
            b_u: one.clone(),
            c: one.clone(),
            c_delta: one.clone(),
            d_u: DMatrix::zeros(1, 1),
            k_hat: DMatrix::zeros(1, 1),
            k_p: vec![0.0],
            k_i: vec![0.0],
            a_cl: -one,
        }
    }

    #[test]
    fn siso_positive_real() {
        let lin = first_order();
        let opts = SweepOptions {
            points: 200,
            ..Default::default()
        };
        let s = passivity_sweep(&lin, &opts).unwrap();
        for (w, v) in s.omega.iter().zip(&s.min_eigenvalues) {
            let exact = 2.0 / (1.0 + w * w);
            assert!((v - exact).abs() < 1e-12 * exact.max(1e-300) + 1e-15, "{w}: {v} vs {exact}");
        }
        assert!(s.omega.windows(2).all(|w| w[1] > w[0]));
        assert!(s.overall_margin > 0.0);
        assert!((s.argmin_omega - 1e6).abs() / 1e6 < 1e-6);
        let (c, _) = certify_passivity(&lin, &opts).unwrap();
        assert!(c.pass);
    }

    #[test]
    fn unstable_realization_fails_immediately() {
        let mut lin = first_order();
        lin.a_cl[(0, 0)] = 0.5;
        let (c, sweep) = certify_passivity(&lin, &SweepOptions::default()).unwrap();
        assert!(!c.pass);
        assert!(sweep.is_none());
        assert_eq!(c.reason.as_deref(), Some("not asymptotically stable"));
        let p = DMatrix::identity(1, 1);
        assert!(kyp_lmi_residual(&lin, &p, 0.1).unwrap() > 0.0);
    }

    #[test]
    fn kyp_residual_for_valid_storage() {
        let lin = first_order();
        let p = DMatrix::identity(1, 1);
        let m = kyp_lmi_matrix(&lin, &p, 0.5).unwrap();
        assert!((&m - m.transpose()).amax() < 1e-12);
        assert!(kyp_lmi_residual(&lin, &p, 0.5).unwrap() <= 1e-12);
        assert!(kyp_lmi_residual(&lin, &(p * 3.0), 0.5).unwrap() > 0.0);
        assert!(kyp_lmi_residual(&lin, &DMatrix::identity(2, 2), 0.5).is_err());
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, v) = golden_section(|x| (x - 0.3) * (x - 0.3) + 1.0, -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bad_grid_rejected() {
        let lin = first_order();
        let opts = SweepOptions {
            omega_min: 10.0,
            omega_max: 1.0,
            ..Default::default()
        };
        assert!(passivity_sweep(&lin, &opts).is_err());
    }
}
