//! Controller laws: dc source PID, the hybrid angle control family, ac
//! voltage/current PI loops and first-order measurement filters.
//!
//! Every function here is a pure map from (state, measurement, gains) to
//! outputs. Integrator states are advanced by the caller, either
//! continuously through the returned derivatives or in discrete time with
//! [`PiDq::advance`] and [`lpf_step`].

use crate::error::{Error, Result};
use crate::frames::{abc_to_alphabeta, Dq, ThreePhase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcPidGains {
    pub kappa_p: f64,
    pub kappa_i: f64,
    pub kappa_d: f64,
}

impl DcPidGains {
    pub fn table1() -> Self {
        Self { kappa_p: 10.0, kappa_i: 500.0, kappa_d: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_p >= 0.0 && self.kappa_i >= 0.0 && self.kappa_d >= 0.0) {
            return Err(Error::config("dc source gains must be non-negative"));
        }
        Ok(())
    }
}

/// dc source current; positive when the source injects into the dc link.
pub fn dc_source_pid(v_dc: f64, v_dc_r: f64, zeta: f64, dv_dc: f64, g: &DcPidGains) -> f64 {
    -g.kappa_p * (v_dc - v_dc_r) - g.kappa_i * zeta - g.kappa_d * dv_dc
}

/// dc-link voltage derivative and source current with the PID closed
/// around the capacitor. The derivative term adds `kappa_d` to the
/// effective capacitance.
pub fn dc_link_closed_loop(
    v_dc: f64,
    zeta: f64,
    i_s: f64,
    v_dc_r: f64,
    c_dc: f64,
    g_dc: f64,
    g: &DcPidGains,
) -> (f64, f64) {
    let i_static = dc_source_pid(v_dc, v_dc_r, zeta, 0.0, g);
    let dv = (i_static - g_dc * v_dc - i_s) / (c_dc + g.kappa_d);
    (dv, i_static - g.kappa_d * dv)
}

/// Which synchronization term (and dc term) the frequency law uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HacVariant {
    /// `-κ_ac sin((δ - δ_r)/2)`
    Exact,
    /// `-κ̄_ac (p - p_r)`
    Power,
    /// `-κ_ac1 atan(κ_ac2 (p - p_r))`
    Arctan,
    /// Quadratic dc term `κ_dc/(2 v_dc_r) (v_dc² - v_dc_r²)` with the angle
    /// (`power_sync = false`) or power synchronization term.
    Energy { power_sync: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HacGains {
    pub omega0: f64,
    /// rad/s per V
    pub kappa_dc: f64,
    /// rad/s, angle form
    pub kappa_ac: f64,
    /// rad/s per W, power form
    pub kappa_ac_bar: f64,
    /// rad/s
    pub kappa_ac1: f64,
    /// 1/W
    pub kappa_ac2: f64,
    pub delta_r: f64,
    pub p_r: f64,
    pub v_dc_r: f64,
    pub variant: HacVariant,
}

impl HacGains {
    pub fn validate(&self) -> Result<()> {
        let sync_gain = match self.variant {
            HacVariant::Exact | HacVariant::Energy { power_sync: false } => self.kappa_ac,
            HacVariant::Power | HacVariant::Energy { power_sync: true } => self.kappa_ac_bar,
            HacVariant::Arctan => self.kappa_ac1 * self.kappa_ac2,
        };
        let gains = [self.kappa_dc, self.kappa_ac, self.kappa_ac_bar, self.kappa_ac1, self.kappa_ac2];
        if gains.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::config("HAC gains must be finite and non-negative"));
        }
        if self.kappa_dc == 0.0 && sync_gain == 0.0 {
            return Err(Error::config("HAC dc and ac gains cannot both be zero"));
        }
        if !(self.v_dc_r > 0.0) {
            return Err(Error::config("HAC dc voltage reference must be positive"));
        }
        Ok(())
    }

    /// Gain of the quadratic dc term that matches the linear term to first
    /// order at the reference.
    pub fn kappa_dc_energy(&self) -> f64 {
        self.kappa_dc / (2.0 * self.v_dc_r)
    }

    /// Converter frequency for the configured variant.
    pub fn omega(&self, v_dc: f64, delta: f64, p_filt: f64) -> f64 {
        match self.variant {
            HacVariant::Exact => hac_exact(v_dc, delta, self),
            HacVariant::Power => hac_power(v_dc, p_filt, self),
            HacVariant::Arctan => hac_arctan(v_dc, p_filt, self),
            HacVariant::Energy { .. } => hac_energy(v_dc, delta, p_filt, self),
        }
    }

    pub fn uses_power(&self) -> bool {
        matches!(
            self.variant,
            HacVariant::Power | HacVariant::Arctan | HacVariant::Energy { power_sync: true }
        )
    }
}

pub fn hac_exact(v_dc: f64, delta: f64, g: &HacGains) -> f64 {
    g.omega0 + g.kappa_dc * (v_dc - g.v_dc_r) - g.kappa_ac * (0.5 * (delta - g.delta_r)).sin()
}

pub fn hac_power(v_dc: f64, p_filt: f64, g: &HacGains) -> f64 {
    g.omega0 + g.kappa_dc * (v_dc - g.v_dc_r) - g.kappa_ac_bar * (p_filt - g.p_r)
}

pub fn hac_arctan(v_dc: f64, p_filt: f64, g: &HacGains) -> f64 {
    g.omega0 + g.kappa_dc * (v_dc - g.v_dc_r) - g.kappa_ac1 * (g.kappa_ac2 * (p_filt - g.p_r)).atan()
}

pub fn hac_energy(v_dc: f64, delta: f64, p_filt: f64, g: &HacGains) -> f64 {
    let dc = g.kappa_dc_energy() * (v_dc * v_dc - g.v_dc_r * g.v_dc_r);
    let ac = match g.variant {
        HacVariant::Energy { power_sync: true } => g.kappa_ac_bar * (p_filt - g.p_r),
        _ => g.kappa_ac * (0.5 * (delta - g.delta_r)).sin(),
    };
    g.omega0 + dc - ac
}

/// Linearized angle-power map `δ ≈ α p` of two voltage sources behind the
/// series reactance `(l + l_g) ω0`, with phase-peak magnitudes.
pub fn angle_per_power(l_total: f64, omega0: f64, v_s: f64, v_g: f64) -> f64 {
    l_total * omega0 / (1.5 * v_s * v_g)
}

/// Builds `sin((δ - δ_r)/2)` from the modulation signal and the measured
/// grid voltage, without ever forming δ itself.
///
/// The half angle is recovered from `(sin δ, cos δ)` and kept on the branch
/// closest to the previous sample, so δ may wind through any multiple of 2π
/// as long as it moves less than π between calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncTermEstimator {
    sin_half: f64,
    cos_half: f64,
    sin_half_r: f64,
    cos_half_r: f64,
    v0: f64,
}

impl SyncTermEstimator {
    pub fn new(delta_r: f64, v0: f64, delta_init: f64) -> Self {
        let (sin_half_r, cos_half_r) = (0.5 * delta_r).sin_cos();
        let (sin_half, cos_half) = (0.5 * delta_init).sin_cos();
        Self { sin_half, cos_half, sin_half_r, cos_half_r, v0 }
    }

    /// Current half-angle estimate `(sin δ/2, cos δ/2)`.
    pub fn half_angle(&self) -> (f64, f64) {
        (self.sin_half, self.cos_half)
    }

    pub fn update(&mut self, m_abc: ThreePhase, v_g_abc: ThreePhase) -> Result<f64> {
        let m = abc_to_alphabeta(m_abc);
        let vg = abc_to_alphabeta(v_g_abc);
        let vg_mag = vg.magnitude();
        if vg_mag < 0.01 * self.v0 {
            return Err(Error::DegenerateGridVoltage { magnitude: vg_mag, nominal: self.v0 });
        }
        let m_mag = m.magnitude();
        if m_mag == 0.0 {
            return Err(Error::DegenerateParams("modulation signal is zero"));
        }
        let (cos_t, sin_t) = (m.alpha / m_mag, m.beta / m_mag);
        let (cos_g, sin_g) = (vg.alpha / vg_mag, vg.beta / vg_mag);
        let sin_d = sin_t * cos_g - cos_t * sin_g;
        let cos_d = (cos_t * cos_g + sin_t * sin_g).clamp(-1.0, 1.0);

        // well-conditioned half-angle formulas on either side of |δ| = π/2
        let (s, c) = if cos_d >= 0.0 {
            let c = (0.5 * (1.0 + cos_d)).sqrt();
            (sin_d / (2.0 * c), c)
        } else {
            let s = (0.5 * (1.0 - cos_d)).sqrt();
            (s, sin_d / (2.0 * s))
        };
        if s * self.sin_half + c * self.cos_half >= 0.0 {
            self.sin_half = s;
            self.cos_half = c;
        } else {
            self.sin_half = -s;
            self.cos_half = -c;
        }
        Ok(self.sin_half * self.cos_half_r - self.cos_half * self.sin_half_r)
    }
}

/// One-shot form of [`SyncTermEstimator::update`].
pub fn hac_sync_term_from_measurements(
    tracker: &mut SyncTermEstimator,
    m_abc: ThreePhase,
    v_g_abc: ThreePhase,
) -> Result<f64> {
    tracker.update(m_abc, v_g_abc)
}

/// Constant modulation magnitude from the ac and dc voltage references.
pub fn feedforward_mu(v_r: f64, v_dc_r: f64) -> Result<f64> {
    if !(v_dc_r > 0.0) {
        return Err(Error::config(format!("dc voltage reference must be positive, got {v_dc_r}")));
    }
    if !(v_r >= 0.0) {
        return Err(Error::config(format!("ac voltage reference must be non-negative, got {v_r}")));
    }
    let mu = v_r / v_dc_r;
    if mu > 1.0 {
        return Err(Error::ModulationOverflow { mu });
    }
    Ok(mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
    /// Bound on the integral contribution `|ki ξ|` per axis.
    pub limit: f64,
}

impl PiGains {
    fn validate(&self, name: &str) -> Result<()> {
        if !(self.kp >= 0.0 && self.ki >= 0.0 && self.limit > 0.0) {
            return Err(Error::config(format!("{name} PI gains must be non-negative with a positive limit")));
        }
        if self.kp == 0.0 && self.ki == 0.0 {
            return Err(Error::config(format!("{name} PI loop has zero gains")));
        }
        Ok(())
    }

    fn integ_bound(&self) -> f64 {
        if self.ki > 0.0 {
            self.limit / self.ki
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeGains {
    pub voltage: PiGains,
    pub current: PiGains,
    pub ff_grid_current: bool,
    pub ff_cap_current: bool,
    pub ff_pcc_voltage: bool,
    pub decoupling: bool,
}

impl CascadeGains {
    pub fn validate(&self) -> Result<()> {
        self.voltage.validate("ac voltage")?;
        self.current.validate("current")
    }
}

/// dq PI integrator with clamping anti-windup.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiDq {
    pub integ: Dq,
}

impl PiDq {
    /// Integrator derivative, frozen on any axis sitting at its bound and
    /// pushed further outwards.
    pub fn derivative(&self, err: Dq, g: &PiGains) -> Dq {
        let bound = g.integ_bound();
        let axis = |x: f64, e: f64| if (x >= bound && e > 0.0) || (x <= -bound && e < 0.0) { 0.0 } else { e };
        Dq::new(axis(self.integ.d, err.d), axis(self.integ.q, err.q))
    }

    pub fn advance(&mut self, err: Dq, h: f64, g: &PiGains) {
        let bound = g.integ_bound();
        self.integ.d = (self.integ.d + h * err.d).clamp(-bound, bound);
        self.integ.q = (self.integ.q + h * err.q).clamp(-bound, bound);
    }

    pub fn output(&self, err: Dq, g: &PiGains) -> Dq {
        err * g.kp + self.integ * g.ki
    }
}

/// Modulation magnitude from a PI on the per-unit PCC voltage magnitude
/// error, added to the feedforward value `mu_ff`. Returns the clamped
/// magnitude and the per-unit error that drives the integrator.
pub fn pi_voltage_magnitude(v_mag: f64, v_ref: f64, mu_ff: f64, integ: f64, g: &PiGains) -> (f64, f64) {
    let err = (v_ref - v_mag) / v_ref;
    let mu = mu_ff + g.kp * err + g.ki * integ;
    (mu.clamp(0.0, 1.0), err)
}

/// Scalar counterpart of [`PiDq::advance`].
pub fn pi_integrate(integ: f64, err: f64, h: f64, g: &PiGains) -> f64 {
    let bound = g.integ_bound();
    (integ + h * err).clamp(-bound, bound)
}

/// Scalar counterpart of [`PiDq::derivative`].
pub fn pi_integrator_rate(integ: f64, err: f64, g: &PiGains) -> f64 {
    let bound = g.integ_bound();
    if (integ >= bound && err > 0.0) || (integ <= -bound && err < 0.0) {
        0.0
    } else {
        err
    }
}

/// Measurements fed forward by the ac voltage loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageFeedforward {
    pub i_g: Dq,
    pub omega: f64,
    pub c_f: f64,
}

/// Filter-current reference from the PCC voltage error. Returns the
/// reference and the integrator derivative.
pub fn pi_ac_voltage(
    v_meas: Dq,
    v_ref: Dq,
    state: &PiDq,
    gains: &CascadeGains,
    ff: &VoltageFeedforward,
) -> (Dq, Dq) {
    let err = v_ref - v_meas;
    let mut i_ref = state.output(err, &gains.voltage);
    if gains.ff_grid_current {
        i_ref += ff.i_g;
    }
    if gains.ff_cap_current {
        i_ref += v_meas.j() * (ff.omega * ff.c_f);
    }
    (i_ref, state.derivative(err, &gains.voltage))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentFeedforward {
    pub v_pcc: Dq,
    pub omega: f64,
    pub l: f64,
}

/// Converter voltage reference from the filter-current error, with PCC
/// voltage feedforward and `jωL i` decoupling.
pub fn pi_current(
    i_meas: Dq,
    i_ref: Dq,
    state: &PiDq,
    gains: &CascadeGains,
    ff: &CurrentFeedforward,
) -> (Dq, Dq) {
    let err = i_ref - i_meas;
    let mut v_ref = state.output(err, &gains.current);
    if gains.ff_pcc_voltage {
        v_ref += ff.v_pcc;
    }
    if gains.decoupling {
        v_ref += i_meas.j() * (ff.omega * ff.l);
    }
    (v_ref, state.derivative(err, &gains.current))
}

/// First-order low-pass filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lpf1 {
    pub state: f64,
    pub omega_c: f64,
}

impl Lpf1 {
    pub fn new(initial: f64, omega_c: f64) -> Result<Self> {
        if !(omega_c > 0.0 && omega_c.is_finite()) {
            return Err(Error::config(format!("filter cutoff must be positive, got {omega_c}")));
        }
        Ok(Self { state: initial, omega_c })
    }

    pub fn derivative(&self, u: f64) -> f64 {
        self.omega_c * (u - self.state)
    }
}

/// Exact zero-order-hold update over one period `h`.
pub fn lpf_step(f: Lpf1, u: f64, h: f64) -> Result<Lpf1> {
    if !(h > 0.0) {
        return Err(Error::config(format!("filter step must be positive, got {h}")));
    }
    let a = 1.0 - (-f.omega_c * h).exp();
    Ok(Lpf1 { state: f.state + a * (u - f.state), ..f })
}

/// Forward-Euler update; unstable for `ω_c h ≥ 2`.
pub fn lpf_step_euler(f: Lpf1, u: f64, h: f64) -> Result<Lpf1> {
    if !(h > 0.0) || f.omega_c * h >= 2.0 {
        return Err(Error::config(format!(
            "Euler filter update needs 0 < omega_c h < 2, got {}",
            f.omega_c * h
        )));
    }
    Ok(Lpf1 { state: f.state + f.omega_c * h * (u - f.state), ..f })
}
