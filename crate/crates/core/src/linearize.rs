//! Closed-loop equilibria and the linearized inverter model
//!
//! ```text
//! d(x~)/dt = (A - C_d^T k_p e^T C - C_d^T k_I C_d - B K) x~ + B_u u~,   y~ = C x~
//! ```
//!
//! with `A = Gamma^-1 A^`, `B = Gamma^-1 B^`, `B_u = Gamma^-1 C^T`, input
//! `u = -V_b` and output `y = I_o`. States per inverter follow
//! `[delta, zeta, V_dc, I, V_o, I_o, beta, xi]`, stacked block-wise.

use nalgebra::{Complex, DMatrix, DVector, Matrix2, Vector2};
use std::f64::consts::FRAC_PI_2;

use crate::controllers::ControllerGains;
use crate::error::{Error, Result};
use crate::frames::{e2_matrix, j_matrix, rotation};
use crate::integrate::{rk4_step, Rk4Workspace};
use crate::inverter::{InverterParams, ModulationSignal};
use crate::linalg::{dq_impedance, Complex64};
use crate::model::MicrogridSpec;
use crate::network::ConstantPowerModel;
use crate::system::{unit_field, ClosedLoop, StateLayout, SystemState, UnitState, UNIT_STATES};

#[derive(Clone, Debug)]
pub struct EquilibriumOptions {
    /// Target for the mass-weighted residual norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Fall back to time-domain relaxation when Newton fails from the guess.
    pub simulate_fallback: bool,
    /// Longest relaxation run (s).
    pub fallback_horizon: f64,
    /// Residual at which relaxation hands over to Newton.
    pub fallback_threshold: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            tol: 1e-8,
            max_iter: 60,
            simulate_fallback: true,
            fallback_horizon: 30.0,
            fallback_threshold: 1e-4,
        }
    }
}

/// Algebraic inputs of one inverter at the equilibrium.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibriumInputs {
    pub i_dc: f64,
    pub m: ModulationSignal,
    pub v_bus: Vector2<f64>,
    pub omega: f64,
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub state: SystemState,
    /// Indices of the active inverters, in state order.
    pub active: Vec<usize>,
    pub secondary: bool,
    pub inputs: Vec<EquilibriumInputs>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl Equilibrium {
    pub fn units(&self) -> Vec<UnitState> {
        self.state.units()
    }

    pub fn unit(&self, k: usize) -> UnitState {
        self.state.unit(k)
    }

    pub fn delta_star(&self) -> Vec<f64> {
        self.units().iter().map(|u| u.inverter.delta).collect()
    }
}

/// Solves for the equilibrium of the initially connected inverters, with the
/// secondary layer included when the spec enables it.
pub fn solve_equilibrium(spec: &MicrogridSpec, initial_guess: Option<&SystemState>) -> Result<Equilibrium> {
    let cl = ClosedLoop::new(spec, &spec.initially_active(), spec.secondary.enabled)?;
    solve_closed_loop(&cl, initial_guess, &EquilibriumOptions::default())
}

/// Tracks an equilibrium from `from` (solved as `start`) to `to` by blending
/// the inverter parameters and gains in `steps` equal increments, each solve
/// seeded with the previous one. Both specs must share the network and the
/// set of connected inverters.
pub fn continue_equilibrium(from: &MicrogridSpec, start: &Equilibrium, to: &MicrogridSpec, steps: usize) -> Result<Equilibrium> {
    let same_units = from.inverters.len() == to.inverters.len()
        && from
            .inverters
            .iter()
            .zip(&to.inverters)
            .all(|(a, b)| a.bus == b.bus && a.connected == b.connected);
    if from.network != to.network || !same_units || from.secondary.enabled != to.secondary.enabled {
        return Err(Error::param(
            "continuation",
            "endpoints must share the network, inverter placement and secondary layer",
        ));
    }
    if steps == 0 {
        return Err(Error::param("steps", "need at least one continuation step"));
    }
    let mut eq = start.clone();
    for k in 1..=steps {
        let t = k as f64 / steps as f64;
        let mut spec = from.clone();
        for (inv, target) in spec.inverters.iter_mut().zip(&to.inverters) {
            inv.params = inv.params.blend(&target.params, t);
            inv.gains = inv.gains.blend(&target.gains, t);
        }
        eq = solve_equilibrium(&spec, Some(&eq.state))?;
    }
    Ok(eq)
}

pub fn solve_closed_loop(
    cl: &ClosedLoop,
    initial_guess: Option<&SystemState>,
    opts: &EquilibriumOptions,
) -> Result<Equilibrium> {
    let guess = match initial_guess {
        Some(g) if g.layout == cl.layout() => g.x.clone(),
        Some(g) => {
            return Err(Error::Dimension(format!(
                "initial guess has {} states, system has {}",
                g.x.len(),
                cl.layout().len()
            )))
        }
        None => cl.flat_start().x,
    };
    let mut total_iter = 0;
    let first = newton(cl, &guess, opts);
    let (x, iterations) = match first {
        Ok(r) => r,
        Err((best, iters)) if opts.simulate_fallback => {
            total_iter += iters;
            log::info!("Newton failed from the initial guess (residual {best:.3e}); relaxing in time");
            let relaxed = relax(cl, &guess, opts)?;
            newton(cl, &relaxed, opts).map_err(|(residual, iterations)| Error::NonConvergence {
                iterations: total_iter + iterations,
                residual,
            })?
        }
        Err((residual, iterations)) => return Err(Error::NonConvergence { iterations, residual }),
    };
    total_iter += iterations;
    let state = SystemState { layout: cl.layout(), x };
    let residual_norm = cl.residual_norm(&state.x);
    let mut warnings = Vec::new();
    let inputs = (0..cl.layout().inverters)
        .map(|k| {
            let out = cl.outputs(&state.x, k);
            let bus = cl.units()[k].bus;
            if out.limited {
                warnings.push(format!("inverter {} current reference is limited", cl.ids()[k] + 1));
            }
            EquilibriumInputs {
                i_dc: out.i_dc,
                m: out.m,
                v_bus: state.v_bus(bus),
                omega: out.omega,
            }
        })
        .collect();
    for (k, u) in state.units().iter().enumerate() {
        if u.inverter.delta.abs() >= FRAC_PI_2 {
            warnings.push(format!(
                "|delta*| of inverter {} is {:.4} >= pi/2",
                cl.ids()[k] + 1,
                u.inverter.delta.abs()
            ));
        }
    }
    Ok(Equilibrium {
        state,
        active: cl.ids().to_vec(),
        secondary: cl.secondary_active(),
        inputs,
        residual_norm,
        iterations: total_iter,
        converged: residual_norm <= opts.tol,
        warnings,
    })
}

/// Residual used by Newton: mass-weighted field with the singular directions
/// replaced by conservation/pinning equations.
fn newton_residual(cl: &ClosedLoop, x: &[f64], anchor: &[f64], mass: &[f64]) -> Vec<f64> {
    let l = cl.layout();
    let mut r = cl.eval(x);
    for (ri, m) in r.iter_mut().zip(mass) {
        *ri *= m;
    }
    let n = l.inverters;
    if cl.secondary_active() {
        // The consensus law conserves the sum of chi.
        let s: f64 = (0..n).map(|k| x[l.chi(k)] - anchor[l.chi(k)]).sum();
        r[l.chi(n - 1)] = s;
    } else {
        for k in 0..n {
            r[l.chi(k)] = x[l.chi(k)] - anchor[l.chi(k)];
        }
    }
    if cl.network().cpl_model == ConstantPowerModel::Instantaneous {
        for b in 0..l.buses {
            let i = l.i_cpl(b);
            r[i] = x[i];
            r[i + 1] = x[i + 1];
        }
    }
    r
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton with a central-difference Jacobian. On failure returns the
/// best residual and the iteration count.
fn newton(cl: &ClosedLoop, x0: &[f64], opts: &EquilibriumOptions) -> std::result::Result<(Vec<f64>, usize), (f64, usize)> {
    let mass = cl.mass();
    let anchor = x0.to_vec();
    let mut x = x0.to_vec();
    let mut r = newton_residual(cl, &x, &anchor, &mass);
    let mut rn = norm(&r);
    let dim = x.len();
    for it in 0..opts.max_iter {
        if rn.is_finite() && rn <= opts.tol && cl.residual_norm(&x) <= opts.tol {
            return Ok((x, it));
        }
        let mut jac = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut xp = x.clone();
            xp[k] += h;
            let fp = newton_residual(cl, &xp, &anchor, &mass);
            xp[k] -= 2.0 * h;
            let fm = newton_residual(cl, &xp, &anchor, &mass);
            for i in 0..dim {
                jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(dim, r.iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err((rn, it));
        };
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let tr = newton_residual(cl, &trial, &anchor, &mass);
            let tn = norm(&tr);
            if tn.is_finite() && tn < (1.0 - 1e-4 * t) * rn {
                x = trial;
                r = tr;
                rn = tn;
                break;
            }
            t *= 0.5;
            if t < 1e-8 {
                if rn <= 10.0 * opts.tol && cl.residual_norm(&x) <= opts.tol {
                    return Ok((x, it));
                }
                return Err((rn, it));
            }
        }
    }
    if rn <= opts.tol && cl.residual_norm(&x) <= opts.tol {
        Ok((x, opts.max_iter))
    } else {
        Err((rn, opts.max_iter))
    }
}

/// Integrates the closed loop until its residual drops below the threshold.
fn relax(cl: &ClosedLoop, x0: &[f64], opts: &EquilibriumOptions) -> Result<Vec<f64>> {
    let h = 5e-6;
    let mut x = x0.to_vec();
    let mut w = Rk4Workspace::new(x.len());
    let mut f = |x: &[f64], dx: &mut [f64]| {
        cl.rhs(x, dx);
    };
    let check_every = 1000;
    let max_steps = (opts.fallback_horizon / h) as usize;
    for step in 1..=max_steps {
        rk4_step(&mut f, &mut x, h, &mut w);
        if step % check_every == 0 {
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged {
                    time: step as f64 * h,
                    detail: "relaxation towards equilibrium".to_string(),
                });
            }
            if cl.residual_norm(&x) < opts.fallback_threshold {
                return Ok(x);
            }
        }
    }
    Ok(x)
}

/// Data needed to linearize one inverter.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatingPoint {
    pub params: InverterParams,
    pub gains: ControllerGains,
    pub omega0: f64,
    pub state: UnitState,
    pub v_bus: Vector2<f64>,
}

impl OperatingPoint {
    /// Unit vector field in local ordering, with `V_b` and `chi` held fixed.
    pub fn field(&self, x: &[f64; UNIT_STATES]) -> [f64; UNIT_STATES] {
        let u = UnitState::from_local(x, self.state.chi);
        unit_field(&self.params, &self.gains, self.omega0, &u, self.v_bus)
            .0
            .to_local()
    }
}

pub fn operating_points(eq: &Equilibrium, spec: &MicrogridSpec) -> Vec<OperatingPoint> {
    eq.active
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let inv = &spec.inverters[id];
            OperatingPoint {
                params: inv.params,
                gains: inv.gains,
                omega0: spec.omega0(),
                state: eq.unit(k),
                v_bus: eq.state.v_bus(inv.bus),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct LinearizedInverter {
    pub n: usize,
    pub gamma: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub c_delta: DMatrix<f64>,
    pub d_u: DMatrix<f64>,
    pub k_hat: DMatrix<f64>,
    pub k_p: Vec<f64>,
    pub k_i: Vec<f64>,
    pub a_cl: DMatrix<f64>,
}

/// Position of local state `li` of unit `k` in the stacked `13n` vector.
pub fn stacked_index(n: usize, k: usize, li: usize) -> usize {
    let l = StateLayout {
        inverters: n,
        buses: 0,
        edges: 0,
    };
    match li {
        0 => l.delta(k),
        1 => l.zeta(k),
        2 => l.v_dc(k),
        3 | 4 => l.i(k) + li - 3,
        5 | 6 => l.v_o(k) + li - 5,
        7 | 8 => l.i_o(k) + li - 7,
        9 | 10 => l.beta(k) + li - 9,
        11 | 12 => l.xi(k) + li - 11,
        _ => panic!("local state index {li} out of range"),
    }
}

/// Linearizes every active inverter of the equilibrium into one stacked model.
pub fn build_linearized(eq: &Equilibrium, spec: &MicrogridSpec) -> Result<LinearizedInverter> {
    linearize_points(&operating_points(eq, spec))
}

/// Linearizes the `k`-th active inverter of the equilibrium on its own.
pub fn build_linearized_unit(eq: &Equilibrium, spec: &MicrogridSpec, k: usize) -> Result<LinearizedInverter> {
    let points = operating_points(eq, spec);
    let p = points.get(k).ok_or(Error::OutOfRange {
        what: "active inverter",
        index: k,
        count: points.len(),
    })?;
    linearize_points(std::slice::from_ref(p))
}

fn set2(m: &mut DMatrix<f64>, r: usize, c: usize, b: &Matrix2<f64>) {
    for i in 0..2 {
        for j in 0..2 {
            m[(r + i, c + j)] = b[(i, j)];
        }
    }
}

fn setcol(m: &mut DMatrix<f64>, r: usize, c: usize, v: &Vector2<f64>) {
    m[(r, c)] = v.x;
    m[(r + 1, c)] = v.y;
}

pub fn linearize_points(points: &[OperatingPoint]) -> Result<LinearizedInverter> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptySystem);
    }
    let dim = UNIT_STATES * n;
    let mut gamma = DMatrix::identity(dim, dim);
    let mut a_hat = DMatrix::zeros(dim, dim);
    let mut b_hat = DMatrix::zeros(dim, 2 * n);
    let mut k_hat = DMatrix::zeros(2 * n, dim);
    let mut c = DMatrix::zeros(2 * n, dim);
    let mut c_delta = DMatrix::zeros(n, dim);
    let i2 = Matrix2::identity();
    let j = j_matrix();
    let e2 = e2_matrix();
    let l = StateLayout {
        inverters: n,
        buses: 0,
        edges: 0,
    };

    for (k, op) in points.iter().enumerate() {
        let p = &op.params;
        let g = &op.gains;
        let w0 = op.omega0;
        let s = &op.state.inverter;
        let out = unit_field(p, g, w0, &op.state, op.v_bus).1;
        let m = out.m.0;
        let i_ref = out.i_ref;
        let (dk, zk, vk, ik, vok, iok, bk, xk) = (
            l.delta(k),
            l.zeta(k),
            l.v_dc(k),
            l.i(k),
            l.v_o(k),
            l.i_o(k),
            l.beta(k),
            l.xi(k),
        );

        gamma[(vk, vk)] = p.cdc;
        set2(&mut gamma, ik, ik, &(i2 * p.lf));
        set2(&mut gamma, vok, vok, &(i2 * p.cf));
        set2(&mut gamma, iok, iok, &(i2 * p.lc));

        // zeta: V_dc - v_dcr
        a_hat[(zk, vk)] = 1.0;
        // V_dc: -G_dc V_dc + I_dc - 1/2 I^T m
        a_hat[(vk, zk)] = -g.dc.lambda_i;
        a_hat[(vk, vk)] = -(p.gdc + g.dc.lambda_p);
        a_hat[(vk, ik)] = -0.5 * m.x;
        a_hat[(vk, ik + 1)] = -0.5 * m.y;
        // I: (-R_f + w0 L_f J) I + 1/2 V_dc m - V_o
        setcol(&mut a_hat, ik, vk, &(m * 0.5));
        set2(&mut a_hat, ik, ik, &-dq_impedance(p.rf, p.lf, w0));
        set2(&mut a_hat, ik, vok, &-i2);
        // V_o: (-G_s + w0 C_f J) V_o + I - I_o
        set2(&mut a_hat, vok, ik, &i2);
        set2(&mut a_hat, vok, vok, &-dq_impedance(p.gs, p.cf, w0));
        set2(&mut a_hat, vok, iok, &-i2);
        // I_o: (-R_c + w0 L_c J) I_o + V_o - V_b
        set2(&mut a_hat, iok, vok, &i2);
        set2(&mut a_hat, iok, iok, &-dq_impedance(p.rc, p.lc, w0));
        // beta: V_o - T(delta) e V_n - n_q e2 I_o
        let jte = j * rotation(s.delta).matrix().column(0).into_owned() * g.ac.v_nominal;
        setcol(&mut a_hat, bk, dk, &jte);
        set2(&mut a_hat, bk, vok, &i2);
        set2(&mut a_hat, bk, iok, &(-e2 * g.ac.n_q));
        // xi: I v_dcr - I_ref V_dc
        let cpv = g.ac.c_p * s.v_dc;
        setcol(&mut a_hat, xk, dk, &(jte * cpv));
        setcol(&mut a_hat, xk, vk, &-i_ref);
        set2(&mut a_hat, xk, ik, &(i2 * g.dc.v_dc_ref));
        set2(&mut a_hat, xk, vok, &(i2 * cpv));
        set2(&mut a_hat, xk, iok, &(-e2 * (cpv * g.ac.n_q)));
        set2(&mut a_hat, xk, bk, &(i2 * (g.ac.c_i * s.v_dc)));

        // m enters the V_dc and I rows.
        b_hat[(vk, 2 * k)] = -0.5 * s.i.x;
        b_hat[(vk, 2 * k + 1)] = -0.5 * s.i.y;
        set2(&mut b_hat, ik, 2 * k, &(i2 * (0.5 * s.v_dc)));

        // m = -lambda_P (xi-row expression) - lambda_I xi
        for col in 0..dim {
            k_hat[(2 * k, col)] = g.ac.lambda_p * a_hat[(xk, col)];
            k_hat[(2 * k + 1, col)] = g.ac.lambda_p * a_hat[(xk + 1, col)];
        }
        k_hat[(2 * k, xk)] += g.ac.lambda_i;
        k_hat[(2 * k + 1, xk + 1)] += g.ac.lambda_i;

        c[(2 * k, iok)] = 1.0;
        c[(2 * k + 1, iok + 1)] = 1.0;
        c_delta[(k, dk)] = 1.0;
    }

    let gamma_inv = DMatrix::from_diagonal(&gamma.diagonal().map(|g| 1.0 / g));
    let a = &gamma_inv * &a_hat;
    let b = &gamma_inv * &b_hat;
    let b_u = &gamma_inv * c.transpose();
    let k_p: Vec<f64> = points.iter().map(|p| p.gains.frequency.k_p).collect();
    let k_i: Vec<f64> = points.iter().map(|p| p.gains.frequency.k_i).collect();
    let kp = DMatrix::from_diagonal(&DVector::from_vec(k_p.clone()));
    let ki = DMatrix::from_diagonal(&DVector::from_vec(k_i.clone()));
    let mut e_t = DMatrix::zeros(n, 2 * n);
    for k in 0..n {
        e_t[(k, 2 * k)] = 1.0;
    }
    let a_cl = &a - c_delta.transpose() * &kp * &e_t * &c - c_delta.transpose() * &ki * &c_delta - &b * &k_hat;
    Ok(LinearizedInverter {
        n,
        gamma,
        a_hat,
        b_hat,
        a,
        b,
        b_u,
        c,
        c_delta,
        d_u: DMatrix::zeros(2 * n, 2 * n),
        k_hat,
        k_p,
        k_i,
        a_cl,
    })
}

impl LinearizedInverter {
    /// `G(jw) = C (jw I - A_cl)^-1 B_u + D_u`.
    pub fn transfer_function(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let dim = self.a_cl.nrows();
        let mut m: DMatrix<Complex64> = self.a_cl.map(|v| Complex::new(-v, 0.0));
        for i in 0..dim {
            m[(i, i)] += Complex::new(0.0, omega);
        }
        let rhs: DMatrix<Complex64> = self.b_u.map(|v| Complex::new(v, 0.0));
        let x = m
            .lu()
            .solve(&rhs)
            .filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
            .ok_or(Error::SingularResolvent { omega })?;
        let c: DMatrix<Complex64> = self.c.map(|v| Complex::new(v, 0.0));
        Ok(c * x + self.d_u.map(|v| Complex::new(v, 0.0)))
    }

    /// `G(0) = -C A_cl^-1 B_u`.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        let x = self
            .a_cl
            .clone()
            .lu()
            .solve(&self.b_u)
            .ok_or_else(|| Error::Singular("A_cl".to_string()))?;
        Ok(-(&self.c * x) + &self.d_u)
    }

    pub fn spectral_abscissa(&self) -> f64 {
        crate::linalg::spectral_abscissa(&self.a_cl)
    }
}

/// Central-difference Jacobian of one unit's field in local ordering.
pub fn unit_jacobian_fd(point: &OperatingPoint, h_rel: f64) -> DMatrix<f64> {
    let x0 = point.state.to_local();
    let mut jac = DMatrix::zeros(UNIT_STATES, UNIT_STATES);
    for k in 0..UNIT_STATES {
        let h = h_rel * x0[k].abs().max(1.0);
        let mut xp = x0;
        xp[k] += h;
        let fp = point.field(&xp);
        let mut xm = x0;
        xm[k] -= h;
        let fm = point.field(&xm);
        for i in 0..UNIT_STATES {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Central-difference Jacobian of all units, arranged in stacked order.
pub fn stacked_jacobian_fd(points: &[OperatingPoint], h_rel: f64) -> DMatrix<f64> {
    let n = points.len();
    let mut out = DMatrix::zeros(UNIT_STATES * n, UNIT_STATES * n);
    for (k, p) in points.iter().enumerate() {
        let jk = unit_jacobian_fd(p, h_rel);
        for r in 0..UNIT_STATES {
            for c in 0..UNIT_STATES {
                out[(stacked_index(n, k, r), stacked_index(n, k, c))] = jk[(r, c)];
            }
        }
    }
    out
}
