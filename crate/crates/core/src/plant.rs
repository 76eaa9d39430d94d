//! Averaged converter plant models.
//!
//! All dq models use the amplitude-invariant frame of [`crate::frames`], so
//! every dc/ac power exchange carries the factor [`POWER_SCALE`]. A frame
//! rotating at `ω_f` contributes `-j ω_f L i` to inductor and `-j ω_f C v`
//! to capacitor dynamics.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::frames::{Dq, ThreePhase};

/// `m_abcᵀ i_abc = 3/2 (m_dq · i_dq)` for balanced sets.
pub const POWER_SCALE: f64 = 1.5;

/// Electrical constants of converter, filter and grid, in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    pub c_dc: f64,
    pub g_dc: f64,
    pub l: f64,
    pub r: f64,
    /// Filter capacitance; zero for pure-L models.
    pub c_f: f64,
    pub l_g: f64,
    pub r_g: f64,
    pub omega0: f64,
    /// Grid phase-peak voltage.
    pub v0: f64,
    pub v_dc_r: f64,
}

impl PlantParams {
    /// Baseline values of the 500 kVA / 60 Hz hardware-in-the-loop setup.
    ///
    /// The filter series resistance is not part of the published table; it
    /// defaults to X/R = 10 at 60 Hz. The dc conductance is read as 0.01 S.
    pub fn table1() -> Self {
        let omega0 = 2.0 * PI * 60.0;
        let l = 0.12e-3;
        let v0 = 326.59;
        Self {
            c_dc: 0.01,
            g_dc: 0.01,
            l,
            r: omega0 * l / 10.0,
            c_f: 0.13e-3,
            l_g: 0.56e-3,
            r_g: 0.064,
            omega0,
            v0,
            v_dc_r: 3.0 * v0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let strictly_positive = [
            ("c_dc", self.c_dc),
            ("l", self.l),
            ("r", self.r),
            ("omega0", self.omega0),
            ("v0", self.v0),
            ("v_dc_r", self.v_dc_r),
        ];
        for (name, v) in strictly_positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("plant parameter {name} must be positive, got {v}")));
            }
        }
        let non_negative = [("g_dc", self.g_dc), ("c_f", self.c_f), ("l_g", self.l_g), ("r_g", self.r_g)];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("plant parameter {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Filter and grid impedance merged into one series branch, as used by
    /// the pure-L closed-loop model.
    pub fn merged_series(&self) -> Self {
        Self {
            l: self.l + self.l_g,
            r: self.r + self.r_g,
            l_g: 0.0,
            r_g: 0.0,
            ..*self
        }
    }

    pub fn stiff_grid(&self) -> Self {
        Self { l_g: 0.0, r_g: 0.0, ..*self }
    }
}

/// State of the pure-L closed loop: relative angle, dc-PI integrator, dc
/// voltage and dq currents in the grid-aligned frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SysState {
    pub delta: f64,
    pub zeta: f64,
    pub v_dc: f64,
    pub i_d: f64,
    pub i_q: f64,
}

impl SysState {
    pub const LEN: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [self.delta, self.zeta, self.v_dc, self.i_d, self.i_q]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self { delta: x[0], zeta: x[1], v_dc: x[2], i_d: x[3], i_q: x[4] }
    }

    pub fn current(&self) -> Dq {
        Dq::new(self.i_d, self.i_q)
    }
}

/// Modulation magnitude and dc source current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModInput {
    pub mu: f64,
    pub i_dc: f64,
}

/// Lossless averaged switch: `i_s = mᵀ i`, `v_s = v_dc m`.
pub fn averaged_switch(m: ThreePhase, i: ThreePhase, v_dc: f64) -> (f64, ThreePhase) {
    (m.dot(&i), m.scale(v_dc))
}

fn ensure_positive_dc(v_dc: f64) -> Result<()> {
    if v_dc > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPhysicalState { t: f64::NAN, v_dc })
    }
}

/// dq dynamics of the converter behind a series RL branch to a stiff grid,
/// in a frame aligned with the grid angle. Grid voltage is `(v0, 0)`.
pub fn rhs_dq_l(x: &SysState, u: ModInput, g: &PlantParams, omega_cmd: f64, omega_g: f64) -> Result<SysState> {
    ensure_positive_dc(x.v_dc)?;
    let (s, c) = x.delta.sin_cos();
    let i_s = POWER_SCALE * u.mu * (x.i_d * c + x.i_q * s);
    let v_s = u.mu * x.v_dc;
    Ok(SysState {
        delta: omega_cmd - omega_g,
        zeta: x.v_dc - g.v_dc_r,
        v_dc: (u.i_dc - g.g_dc * x.v_dc - i_s) / g.c_dc,
        i_d: (v_s * c - g.r * x.i_d + omega_g * g.l * x.i_q - g.v0) / g.l,
        i_q: (v_s * s - g.r * x.i_q - omega_g * g.l * x.i_d) / g.l,
    })
}

/// Derivatives of the three-phase model: `(dv_dc/dt, di_abc/dt)`.
pub fn rhs_abc_l(
    v_dc: f64,
    i_abc: ThreePhase,
    m: ThreePhase,
    i_dc: f64,
    v_g: ThreePhase,
    g: &PlantParams,
) -> Result<(f64, ThreePhase)> {
    ensure_positive_dc(v_dc)?;
    let (i_s, v_s) = averaged_switch(m, i_abc, v_dc);
    let dv = (i_dc - g.g_dc * v_dc - i_s) / g.c_dc;
    let di = ThreePhase::new(
        (v_s.a - g.r * i_abc.a - v_g.a) / g.l,
        (v_s.b - g.r * i_abc.b - v_g.b) / g.l,
        (v_s.c - g.r * i_abc.c - v_g.c) / g.l,
    );
    Ok((dv, di))
}

/// Converter with LC output filter; all vectors in the system frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LcState {
    pub delta: f64,
    pub zeta: f64,
    pub v_dc: f64,
    /// Converter-side filter current.
    pub i_f: Dq,
    /// Filter capacitor (PCC) voltage.
    pub v_c: Dq,
}

impl LcState {
    pub const LEN: usize = 7;

    pub fn write(&self, x: &mut [f64]) {
        x[..7].copy_from_slice(&[
            self.delta, self.zeta, self.v_dc, self.i_f.d, self.i_f.q, self.v_c.d, self.v_c.q,
        ]);
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            delta: x[0],
            zeta: x[1],
            v_dc: x[2],
            i_f: Dq::new(x[3], x[4]),
            v_c: Dq::new(x[5], x[6]),
        }
    }
}

/// Inputs of the LC converter: modulation vector in the converter's own
/// frame (angle `delta` ahead of the system frame) and dc source current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcInput {
    pub m: Dq,
    pub i_dc: f64,
}

/// Switched dc current and ac voltage of the LC converter in the system frame.
pub fn lc_switch(x: &LcState, m_conv: Dq) -> (f64, Dq) {
    let m = m_conv.rotate(x.delta);
    (POWER_SCALE * m.dot(&x.i_f), m * x.v_dc)
}

/// Converter, dc link and LC filter with a given current `i_out` drawn from
/// the capacitor node.
pub fn lc_filter_rhs(
    x: &LcState,
    u: LcInput,
    i_out: Dq,
    g: &PlantParams,
    omega_cmd: f64,
    omega_frame: f64,
) -> Result<LcState> {
    ensure_positive_dc(x.v_dc)?;
    if !(g.c_f > 0.0) {
        return Err(Error::config("LC model requires a positive filter capacitance"));
    }
    let (i_s, v_s) = lc_switch(x, u.m);
    let di_f = (v_s - x.i_f * g.r - x.v_c - x.i_f.j() * (omega_frame * g.l)) * (1.0 / g.l);
    let dv_c = (x.i_f - i_out - x.v_c.j() * (omega_frame * g.c_f)) * (1.0 / g.c_f);
    Ok(LcState {
        delta: omega_cmd - omega_frame,
        zeta: x.v_dc - g.v_dc_r,
        v_dc: (u.i_dc - g.g_dc * x.v_dc - i_s) / g.c_dc,
        i_f: di_f,
        v_c: dv_c,
    })
}

/// `di/dt` of a series RL branch from node `v_from` to node `v_to`.
pub fn rl_branch_rhs(i: Dq, v_from: Dq, v_to: Dq, l: f64, r: f64, omega_frame: f64) -> Dq {
    (v_from - v_to - i * r - i.j() * (omega_frame * l)) * (1.0 / l)
}

/// LC converter connected through the grid impedance to a stiff grid, in
/// the grid-aligned frame. Returns converter derivatives and `di_g/dt`.
pub fn rhs_dq_lc(
    x: &LcState,
    i_g: Dq,
    u: LcInput,
    g: &PlantParams,
    omega_cmd: f64,
    omega_g: f64,
) -> Result<(LcState, Dq)> {
    if !(g.l_g > 0.0) {
        return Err(Error::config("grid-connected LC model requires a positive grid inductance"));
    }
    let dx = lc_filter_rhs(x, u, i_g, g, omega_cmd, omega_g)?;
    let di_g = rl_branch_rhs(i_g, x.v_c, Dq::new(g.v0, 0.0), g.l_g, g.r_g, omega_g);
    Ok((dx, di_g))
}

/// Active and reactive power of a dq voltage/current pair.
pub fn pcc_power(v: Dq, i: Dq) -> (f64, f64) {
    (
        POWER_SCALE * (v.d * i.d + v.q * i.q),
        POWER_SCALE * (v.q * i.d - v.d * i.q),
    )
}

/// RL line pair joined at a middle bus with a resistive load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineParams {
    pub r: f64,
    pub l: f64,
}

/// Two LC converters feeding a resistive load through two RL lines, in a
/// common frame rotating at `omega_frame`. Line currents flow from each
/// converter's capacitor node towards the middle bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoConverterState {
    pub conv: [LcState; 2],
    pub i_line: [Dq; 2],
}

pub fn middle_bus_voltage(i_line: &[Dq; 2], r_load: f64) -> Dq {
    (i_line[0] + i_line[1]) * r_load
}

#[allow(clippy::too_many_arguments)]
pub fn rhs_two_converter(
    x: &TwoConverterState,
    u: [LcInput; 2],
    omega_cmd: [f64; 2],
    lines: [LineParams; 2],
    r_load: f64,
    params: [&PlantParams; 2],
    omega_frame: f64,
) -> Result<TwoConverterState> {
    if !(r_load > 0.0) {
        return Err(Error::config(format!("load resistance must be positive, got {r_load}")));
    }
    let v_mid = middle_bus_voltage(&x.i_line, r_load);
    let mut out = *x;
    for k in 0..2 {
        out.conv[k] = lc_filter_rhs(&x.conv[k], u[k], x.i_line[k], params[k], omega_cmd[k], omega_frame)?;
        out.i_line[k] = rl_branch_rhs(x.i_line[k], x.conv[k].v_c, v_mid, lines[k].l, lines[k].r, omega_frame);
    }
    Ok(out)
}

/// Stored dc energy and the power flows that change it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub e_p: f64,
    pub de_p: f64,
    pub p_dc: f64,
    pub p_ac: f64,
    /// Power dissipated in the dc conductance.
    pub loss: f64,
}

impl EnergyReport {
    pub fn from_dc_link(v_dc: f64, i_dc: f64, i_s: f64, g: &PlantParams) -> Self {
        let p_dc = v_dc * i_dc;
        let p_ac = v_dc * i_s;
        let loss = g.g_dc * v_dc * v_dc;
        let dv = (i_dc - g.g_dc * v_dc - i_s) / g.c_dc;
        Self {
            e_p: 0.5 * g.c_dc * v_dc * v_dc,
            de_p: g.c_dc * v_dc * dv,
            p_dc,
            p_ac,
            loss,
        }
    }

    pub fn imbalance(&self) -> f64 {
        self.de_p - (self.p_dc - self.loss - self.p_ac)
    }
}

pub fn energy_report(x: &SysState, i_dc: f64, mu: f64, g: &PlantParams) -> EnergyReport {
    let (s, c) = x.delta.sin_cos();
    let i_s = POWER_SCALE * mu * (x.i_d * c + x.i_q * s);
    EnergyReport::from_dc_link(x.v_dc, i_dc, i_s, g)
}
