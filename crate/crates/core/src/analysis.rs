//! Equilibria, energy function and linearization of the pure-L closed loop.
//!
//! The loop is the dc source PI, the hybrid angle law and a fixed
//! modulation magnitude, connected to a stiff grid through one series RL
//! branch. Everything here works in the unit system of its inputs.

use nalgebra::{Complex, DMatrix, DVector};

use crate::control::{dc_link_closed_loop, DcPidGains, HacGains, HacVariant};
use crate::error::{Error, Result};
use crate::plant::{rhs_dq_l, ModInput, PlantParams, SysState, POWER_SCALE};

/// Controller data of the pure-L closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopGains {
    pub dc: DcPidGains,
    pub hac: HacGains,
    pub mu: f64,
}

/// Converter frequency and dc source current at `x`.
pub fn closed_loop_inputs(x: &SysState, g: &PlantParams, lg: &LoopGains) -> (f64, f64) {
    let (s, c) = x.delta.sin_cos();
    let i_s = POWER_SCALE * lg.mu * (x.i_d * c + x.i_q * s);
    let (_, i_dc) = dc_link_closed_loop(x.v_dc, x.zeta, i_s, g.v_dc_r, g.c_dc, g.g_dc, &lg.dc);
    let p = POWER_SCALE * g.v0 * x.i_d;
    (lg.hac.omega(x.v_dc, x.delta, p), i_dc)
}

/// Right-hand side of the closed loop in the frame of a grid at `ω0`.
pub fn closed_loop_rhs(x: &SysState, g: &PlantParams, lg: &LoopGains) -> Result<SysState> {
    let (omega, i_dc) = closed_loop_inputs(x, g, lg);
    rhs_dq_l(x, ModInput { mu: lg.mu, i_dc }, g, omega, g.omega0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub delta: f64,
    pub zeta: f64,
    pub v_dc: f64,
    pub i_d: f64,
    pub i_q: f64,
    /// 1 for `δ★ = δ_r`, 2 for `δ★ = δ_r + 2π`.
    pub branch: u8,
}

impl Equilibrium {
    pub fn state(&self) -> SysState {
        SysState { delta: self.delta, zeta: self.zeta, v_dc: self.v_dc, i_d: self.i_d, i_q: self.i_q }
    }

    fn from_state(x: &SysState, branch: u8) -> Self {
        Self { delta: x.delta, zeta: x.zeta, v_dc: x.v_dc, i_d: x.i_d, i_q: x.i_q, branch }
    }

    pub fn current_sq(&self) -> f64 {
        self.i_d * self.i_d + self.i_q * self.i_q
    }
}

fn angle_synchronized(variant: HacVariant) -> bool {
    matches!(variant, HacVariant::Exact | HacVariant::Energy { power_sync: false })
}

/// Both operating points of the angle-synchronized loop. They share the
/// currents and the integrator value and differ by 2π in the angle.
pub fn equilibria_closed_form(g: &PlantParams, lg: &LoopGains) -> Result<[Equilibrium; 2]> {
    if !angle_synchronized(lg.hac.variant) {
        return Err(Error::DegenerateParams("closed-form equilibria need angle synchronization"));
    }
    let x = g.l * g.omega0;
    let den = g.r * g.r + x * x;
    if den == 0.0 {
        return Err(Error::DegenerateImpedance);
    }
    if !(lg.dc.kappa_i > 0.0) {
        return Err(Error::DegenerateParams("integral gain of the dc source must be positive"));
    }
    let delta = lg.hac.delta_r;
    let v = g.v_dc_r;
    let (s, c) = delta.sin_cos();
    let mv = lg.mu * v;
    let i_d = (mv * (g.r * c + x * s) - g.r * g.v0) / den;
    let i_q = (mv * (g.r * s - x * c) + x * g.v0) / den;
    let zeta = (-g.g_dc * v - POWER_SCALE * lg.mu * (i_d * c + i_q * s)) / lg.dc.kappa_i;
    let first = Equilibrium { delta, zeta, v_dc: v, i_d, i_q, branch: 1 };
    let second = Equilibrium { delta: delta + 2.0 * std::f64::consts::PI, branch: 2, ..first };
    Ok([first, second])
}

/// Damped Newton iteration on `f(x) = 0` with a central-difference
/// Jacobian. `scale` sets the size of the difference step per entry.
pub fn newton_solve<F>(mut f: F, x0: &[f64], scale: &[f64], max_iter: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = f(&x)?;
    let norm = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>().sqrt();
    let mut r_norm = norm(&r);
    for iter in 0..max_iter {
        let jac = fd_jacobian(&mut f, &x, scale)?;
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let dx = match jac.lu().solve(&rhs) {
            Some(dx) if dx.iter().all(|v| v.is_finite()) => dx,
            _ => return Err(Error::NoConvergence { iterations: iter, residual: r_norm }),
        };
        let mut alpha = 1.0;
        let (mut x_new, mut r_new, mut n_new);
        loop {
            x_new = x.iter().zip(dx.iter()).map(|(a, d)| a + alpha * d).collect::<Vec<_>>();
            r_new = f(&x_new)?;
            n_new = norm(&r_new);
            if n_new < r_norm || alpha < 1e-3 {
                break;
            }
            alpha *= 0.5;
        }
        let small_step = dx
            .iter()
            .zip(x_new.iter().zip(scale))
            .all(|(d, (xi, s))| (alpha * d).abs() <= 1e-14 * xi.abs().max(*s));
        let stalled = n_new >= r_norm;
        if n_new <= r_norm {
            x = x_new;
            r = r_new;
            r_norm = n_new;
        }
        if r_norm == 0.0 || small_step || (stalled && iter > 0) {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: r_norm })
}

/// Central-difference Jacobian with power-of-two steps, so that entries
/// of affine rows come out exact.
pub fn fd_jacobian<F>(f: &mut F, x: &[f64], scale: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 2f64.powi((1e-6 * x[j].abs().max(scale[j])).log2().round() as i32);
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        for i in 0..fp.len() {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Typical magnitude of each state entry, used for difference steps.
fn state_scale(g: &PlantParams) -> [f64; 5] {
    let i_typ = g.v0 / (g.l * g.omega0).hypot(g.r);
    [1.0, g.v_dc_r * 1e-3, g.v_dc_r, i_typ * 1e-2, i_typ * 1e-2]
}

/// Stationary point of the closed loop by Newton iteration from `x0`.
pub fn newton_equilibrium(g: &PlantParams, lg: &LoopGains, x0: &SysState) -> Result<Equilibrium> {
    let mut f = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(closed_loop_rhs(&SysState::from_slice(x), g, lg)?.to_array().to_vec())
    };
    let sol = newton_solve(&mut f, &x0.to_array(), &state_scale(g), 100)?;
    let x = SysState::from_slice(&sol);
    let rel = steady_state_relative_residuals(&x, g, lg);
    let worst = rel.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if !(worst < 1e-9) {
        return Err(Error::NoConvergence { iterations: 100, residual: worst });
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let k = ((x.delta - lg.hac.delta_r) / two_pi).round() as i64;
    let branch = if k.rem_euclid(2) == 0 { 1 } else { 2 };
    Ok(Equilibrium::from_state(&x, branch))
}

/// Default starting point: references with zero currents.
pub fn default_guess(g: &PlantParams, lg: &LoopGains) -> SysState {
    SysState { delta: lg.hac.delta_r, zeta: 0.0, v_dc: g.v_dc_r, i_d: 0.0, i_q: 0.0 }
}

/// Residual of each stationary equation divided by its largest term.
pub fn steady_state_relative_residuals(x: &SysState, g: &PlantParams, lg: &LoopGains) -> [f64; 5] {
    let (s, c) = x.delta.sin_cos();
    let (omega, i_dc) = closed_loop_inputs(x, g, lg);
    let i_s = POWER_SCALE * lg.mu * (x.i_d * c + x.i_q * s);
    let mv = lg.mu * x.v_dc;
    let xl = g.omega0 * g.l;
    let rel = |terms: &[f64], sum: f64| {
        let big = terms.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if big == 0.0 {
            0.0
        } else {
            sum / big
        }
    };
    [
        rel(&[omega, g.omega0], omega - g.omega0),
        rel(&[x.v_dc, g.v_dc_r], x.v_dc - g.v_dc_r),
        rel(&[i_dc, g.g_dc * x.v_dc, i_s], i_dc - g.g_dc * x.v_dc - i_s),
        rel(&[mv * c, g.r * x.i_d, xl * x.i_q, g.v0], mv * c - g.r * x.i_d + xl * x.i_q - g.v0),
        rel(&[mv * s, g.r * x.i_q, xl * x.i_d], mv * s - g.r * x.i_q - xl * x.i_d),
    ]
}

/// Lower bound on `κ_ac/κ_dc` for the energy-function certificate.
pub fn rho_critical(g: &PlantParams, eq: &Equilibrium, mu: f64, kappa_p: f64) -> Result<f64> {
    if !(g.r > 0.0) {
        return Err(Error::DegenerateParams("series resistance must be positive"));
    }
    let gk = g.g_dc + kappa_p;
    if !(gk > 0.0) {
        return Err(Error::DegenerateParams("G_dc + kappa_p must be positive"));
    }
    let mu2 = mu * mu;
    Ok(1.0 / gk + mu2 * eq.current_sq() / gk + mu2 * eq.v_dc * eq.v_dc / g.r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub rho: f64,
    pub rho_critical: f64,
    pub margin: f64,
    pub satisfied: bool,
}

pub fn stability_report(g: &PlantParams, eq: &Equilibrium, lg: &LoopGains) -> Result<StabilityReport> {
    let rho_critical = rho_critical(g, eq, lg.mu, lg.dc.kappa_p)?;
    let rho = if lg.hac.kappa_dc > 0.0 { lg.hac.kappa_ac / lg.hac.kappa_dc } else { f64::INFINITY };
    let margin = rho - rho_critical;
    Ok(StabilityReport { rho, rho_critical, margin, satisfied: margin > 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapCoeffs {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl LyapCoeffs {
    pub fn new(g: &PlantParams, lg: &LoopGains) -> Result<Self> {
        if !(lg.hac.kappa_dc > 0.0) {
            return Err(Error::DegenerateParams("energy function needs a positive kappa_dc"));
        }
        if !(lg.dc.kappa_i > 0.0) {
            return Err(Error::DegenerateParams("energy function needs a positive kappa_i"));
        }
        Ok(Self {
            c1: 4.0 / lg.hac.kappa_dc,
            c2: lg.dc.kappa_i / 2.0,
            c3: g.c_dc / 2.0,
            c4: g.l / 2.0,
            c5: g.l / 2.0,
        })
    }
}

pub fn lyapunov_value(x: &SysState, eq: &Equilibrium, c: &LyapCoeffs) -> f64 {
    let dd = x.delta - eq.delta;
    let dz = x.zeta - eq.zeta;
    let dv = x.v_dc - eq.v_dc;
    let di = x.i_d - eq.i_d;
    let dq = x.i_q - eq.i_q;
    c.c1 * (1.0 - (0.5 * dd).cos()) + c.c2 * dz * dz + c.c3 * dv * dv + c.c4 * di * di + c.c5 * dq * dq
}

/// Time derivative of [`lyapunov_value`] along the closed loop.
pub fn lyapunov_derivative(
    x: &SysState,
    eq: &Equilibrium,
    c: &LyapCoeffs,
    g: &PlantParams,
    lg: &LoopGains,
) -> Result<f64> {
    let dx = closed_loop_rhs(x, g, lg)?;
    Ok(0.5 * c.c1 * (0.5 * (x.delta - eq.delta)).sin() * dx.delta
        + 2.0 * c.c2 * (x.zeta - eq.zeta) * dx.zeta
        + 2.0 * c.c3 * (x.v_dc - eq.v_dc) * dx.v_dc
        + 2.0 * c.c4 * (x.i_d - eq.i_d) * dx.i_d
        + 2.0 * c.c5 * (x.i_q - eq.i_q) * dx.i_q)
}

/// Jacobian of the closed loop at `x`.
pub fn closed_loop_jacobian(g: &PlantParams, lg: &LoopGains, x: &SysState) -> Result<DMatrix<f64>> {
    let mut f = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(closed_loop_rhs(&SysState::from_slice(x), g, lg)?.to_array().to_vec())
    };
    fd_jacobian(&mut f, &x.to_array(), &state_scale(g))
}

/// Eigenvalues of the linearization at `eq`, real part descending.
pub fn jacobian_eigenvalues(g: &PlantParams, lg: &LoopGains, eq: &Equilibrium) -> Result<Vec<Complex<f64>>> {
    let jac = closed_loop_jacobian(g, lg, &eq.state())?;
    let mut ev: Vec<Complex<f64>> = jac.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}
