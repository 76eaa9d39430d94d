//! Plants wired to their controllers as [`System`]s for the simulator.

use crate::analysis::{closed_loop_inputs, lyapunov_value, Equilibrium, LoopGains, LyapCoeffs};
use crate::control::{
    angle_per_power, dc_link_closed_loop, lpf_step, pi_ac_voltage, pi_current, pi_integrate, pi_integrator_rate,
    pi_voltage_magnitude, CascadeGains, CurrentFeedforward, DcPidGains, HacGains, Lpf1, PiDq, PiGains,
    VoltageFeedforward,
};
use crate::error::{Error, Result};
use crate::frames::{abc_to_dq, Dq, ThreePhase};
use crate::plant::{
    averaged_switch, lc_filter_rhs, lc_switch, pcc_power, rhs_abc_l, rhs_dq_l, rl_branch_rhs, LcInput, LcState, LineParams, ModInput,
    PlantParams, SysState, POWER_SCALE,
};
use crate::sim::{Action, System};

const BASE_COLUMNS: [&str; 9] = ["delta", "zeta", "v_dc", "i_d", "i_q", "omega", "p", "q", "V"];

fn non_physical(t: f64, v_dc: f64) -> Result<()> {
    if v_dc > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPhysicalState { t, v_dc })
    }
}

/// Applies a `set_gain` path shared by all closed loops. Returns false for
/// paths it does not know.
fn set_common_gain(hac: &mut HacGains, dc: &mut DcPidGains, path: &str, value: f64) -> bool {
    let slot = match path {
        "hac.kappa_dc" => &mut hac.kappa_dc,
        "hac.kappa_ac" => &mut hac.kappa_ac,
        "hac.kappa_ac_bar" => &mut hac.kappa_ac_bar,
        "hac.kappa_ac1" => &mut hac.kappa_ac1,
        "hac.kappa_ac2" => &mut hac.kappa_ac2,
        "hac.delta_r" => &mut hac.delta_r,
        "dc_source.kappa_p" => &mut dc.kappa_p,
        "dc_source.kappa_i" => &mut dc.kappa_i,
        "dc_source.kappa_d" => &mut dc.kappa_d,
        _ => return false,
    };
    *slot = value;
    true
}

fn unknown_gain(path: &str) -> Error {
    Error::config(format!("unknown gain path `{path}`"))
}

/// Pure-L converter on a stiff grid (filter and grid impedance merged),
/// with fixed modulation magnitude.
#[derive(Debug, Clone)]
pub struct LFilterSystem {
    pub plant: PlantParams,
    pub gains: LoopGains,
    pub omega_g: f64,
    /// Angle per watt used to move δ_r with the power reference.
    pub alpha: f64,
    pub lyapunov: Option<(Equilibrium, LyapCoeffs)>,
}

impl LFilterSystem {
    pub fn new(plant: PlantParams, gains: LoopGains) -> Self {
        let alpha = angle_per_power(plant.l, plant.omega0, plant.v0, plant.v0);
        Self { omega_g: plant.omega0, plant, gains, alpha, lyapunov: None }
    }

    fn omega(&self, x: &SysState, held: Option<&[f64]>) -> (f64, f64) {
        let (omega, i_dc) = closed_loop_inputs(x, &self.plant, &self.gains);
        (held.map_or(omega, |u| u[0]), i_dc)
    }
}

impl System for LFilterSystem {
    fn dim(&self) -> usize {
        SysState::LEN
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn columns(&self) -> Vec<String> {
        BASE_COLUMNS.iter().map(|s| s.to_string()).collect()
    }

    fn sample(&mut self, _t: f64, x: &mut [f64], _period: f64, u: &mut [f64]) -> Result<()> {
        u[0] = self.omega(&SysState::from_slice(x), None).0;
        Ok(())
    }

    fn rhs(&self, _t: f64, x: &[f64], held: Option<&[f64]>, dx: &mut [f64]) -> Result<()> {
        let s = SysState::from_slice(x);
        let (omega, i_dc) = self.omega(&s, held);
        let d = rhs_dq_l(&s, ModInput { mu: self.gains.mu, i_dc }, &self.plant, omega, self.omega_g)?;
        dx.copy_from_slice(&d.to_array());
        Ok(())
    }

    fn observe(&self, _t: f64, x: &[f64], held: Option<&[f64]>) -> Vec<f64> {
        let s = SysState::from_slice(x);
        let (omega, _) = self.omega(&s, held);
        let (p, q) = pcc_power(Dq::new(self.plant.v0, 0.0), s.current());
        let v = self.lyapunov.as_ref().map_or(f64::NAN, |(eq, c)| lyapunov_value(&s, eq, c));
        vec![s.delta, s.zeta, s.v_dc, s.i_d, s.i_q, omega, p, q, v]
    }

    fn apply(&mut self, action: &Action, _x: &mut [f64]) -> Result<()> {
        match action {
            Action::SetPowerRef(p) => {
                self.gains.hac.p_r = *p;
                self.gains.hac.delta_r = self.alpha * p;
            }
            Action::SetGridFrequency(w) => self.omega_g = *w,
            Action::SetDcVoltageRef(v) => {
                self.plant.v_dc_r = *v;
                self.gains.hac.v_dc_r = *v;
            }
            Action::SetGain { path, value } => {
                if !set_common_gain(&mut self.gains.hac, &mut self.gains.dc, path, *value) {
                    return Err(unknown_gain(path));
                }
            }
            Action::SetLoad(_) => return Err(Error::config("the grid-connected L model has no load")),
        }
        Ok(())
    }

    fn check_state(&self, t: f64, x: &[f64]) -> Result<()> {
        non_physical(t, x[2])
    }
}

/// The pure-L loop in stationary phase coordinates: states are the
/// absolute converter angle, ζ, v_dc and the three phase currents. The
/// grid angle is `omega_g t`.
#[derive(Debug, Clone)]
pub struct AbcLSystem {
    pub plant: PlantParams,
    pub gains: LoopGains,
    pub omega_g: f64,
}

impl AbcLSystem {
    pub fn new(plant: PlantParams, gains: LoopGains) -> Self {
        Self { omega_g: plant.omega0, plant, gains }
    }

    /// State at grid angle zero matching a dq state.
    pub fn state_from_dq(x: &SysState) -> Vec<f64> {
        let i = crate::frames::dq_to_abc(x.current(), 0.0);
        vec![x.delta, x.zeta, x.v_dc, i.a, i.b, i.c]
    }

    fn as_dq(&self, t: f64, x: &[f64]) -> SysState {
        let theta_g = self.omega_g * t;
        let i = abc_to_dq(ThreePhase::new(x[3], x[4], x[5]), theta_g);
        SysState { delta: x[0] - theta_g, zeta: x[1], v_dc: x[2], i_d: i.d, i_q: i.q }
    }
}

impl System for AbcLSystem {
    fn dim(&self) -> usize {
        6
    }

    fn columns(&self) -> Vec<String> {
        BASE_COLUMNS.iter().map(|s| s.to_string()).collect()
    }

    fn rhs(&self, t: f64, x: &[f64], _held: Option<&[f64]>, dx: &mut [f64]) -> Result<()> {
        let g = &self.plant;
        let s = self.as_dq(t, x);
        let i_abc = ThreePhase::new(x[3], x[4], x[5]);
        let m = ThreePhase::balanced(self.gains.mu, x[0]);
        let (i_s, _) = averaged_switch(m, i_abc, s.v_dc);
        let (_, i_dc) = dc_link_closed_loop(s.v_dc, s.zeta, i_s, g.v_dc_r, g.c_dc, g.g_dc, &self.gains.dc);
        let p = POWER_SCALE * g.v0 * s.i_d;
        let omega = self.gains.hac.omega(s.v_dc, s.delta, p);
        let v_g = ThreePhase::balanced(g.v0, self.omega_g * t);
        let (dv, di) = rhs_abc_l(s.v_dc, i_abc, m, i_dc, v_g, g)?;
        dx.copy_from_slice(&[omega, s.v_dc - g.v_dc_r, dv, di.a, di.b, di.c]);
        Ok(())
    }

    fn observe(&self, t: f64, x: &[f64], _held: Option<&[f64]>) -> Vec<f64> {
        let s = self.as_dq(t, x);
        let (omega, _) = closed_loop_inputs(&s, &self.plant, &self.gains);
        let (p, q) = pcc_power(Dq::new(self.plant.v0, 0.0), s.current());
        vec![s.delta, s.zeta, s.v_dc, s.i_d, s.i_q, omega, p, q, f64::NAN]
    }

    fn apply(&mut self, action: &Action, _x: &mut [f64]) -> Result<()> {
        match action {
            Action::SetDcVoltageRef(v) => {
                self.plant.v_dc_r = *v;
                self.gains.hac.v_dc_r = *v;
                Ok(())
            }
            Action::SetGain { path, value } if set_common_gain(&mut self.gains.hac, &mut self.gains.dc, path, *value) => {
                Ok(())
            }
            other => Err(Error::config(format!("action {other:?} is not supported by the phase-coordinate model"))),
        }
    }

    fn check_state(&self, t: f64, x: &[f64]) -> Result<()> {
        non_physical(t, x[2])
    }
}

/// How the PCC voltage of an LC unit is regulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcVoltageControl {
    /// PI on the per-unit voltage magnitude setting the modulation
    /// magnitude around `v_ref / v_dc_r`; the modulation angle is the
    /// converter angle. The limit bounds the integral part of μ.
    Magnitude(PiGains),
    /// dq voltage loop feeding a dq current loop.
    Cascade(CascadeGains),
}

impl AcVoltageControl {
    pub fn validate(&self) -> Result<()> {
        match self {
            AcVoltageControl::Magnitude(g) => {
                if !(g.kp >= 0.0 && g.ki >= 0.0 && g.limit > 0.0) || (g.kp == 0.0 && g.ki == 0.0) {
                    return Err(Error::config("ac voltage PI needs non-negative, not all zero gains and a positive limit"));
                }
                Ok(())
            }
            AcVoltageControl::Cascade(c) => c.validate(),
        }
    }
}

/// Controller states of one LC unit, stored after its plant states. The
/// magnitude controller uses only the first voltage integrator entry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct UnitCtrl {
    p_f: f64,
    xi_v: PiDq,
    xi_i: PiDq,
    /// Filtered PCC voltage magnitude.
    v_f: f64,
}

impl UnitCtrl {
    fn from_slice(x: &[f64]) -> Self {
        Self {
            p_f: x[0],
            xi_v: PiDq { integ: Dq::new(x[1], x[2]) },
            xi_i: PiDq { integ: Dq::new(x[3], x[4]) },
            v_f: x[5],
        }
    }

    fn write(&self, x: &mut [f64]) {
        x[..6].copy_from_slice(&[
            self.p_f,
            self.xi_v.integ.d,
            self.xi_v.integ.q,
            self.xi_i.integ.d,
            self.xi_i.integ.q,
            self.v_f,
        ]);
    }
}

struct UnitLaw {
    omega: f64,
    m: Dq,
    p: f64,
    q: f64,
    /// Integrator inputs, before any clamping.
    err_v: Dq,
    err_i: Dq,
}

/// LC-filtered converter with dc source PI, hybrid angle law and an ac
/// voltage controller acting in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverterUnit {
    pub plant: PlantParams,
    pub dc: DcPidGains,
    pub hac: HacGains,
    pub ac: AcVoltageControl,
    /// Cutoff in rad/s of the filters on measured power and PCC voltage magnitude.
    pub lpf_omega_c: f64,
    /// PCC voltage magnitude reference, phase peak.
    pub v_ref: f64,
    /// Angle per watt used to move δ_r with the power reference.
    pub alpha: f64,
}

impl ConverterUnit {
    pub const LEN: usize = LcState::LEN + 6;
    pub const HELD: usize = 3;

    /// Plant at rated PCC voltage in phase with the frame, controllers at zero.
    pub fn flat_start(&self, i_out: Dq) -> Vec<f64> {
        let mut x = vec![0.0; Self::LEN];
        let s = LcState {
            delta: 0.0,
            zeta: 0.0,
            v_dc: self.plant.v_dc_r,
            i_f: i_out,
            v_c: Dq::new(self.v_ref, 0.0),
        };
        s.write(&mut x);
        let (p, _) = pcc_power(s.v_c, i_out);
        UnitCtrl { p_f: p, v_f: self.v_ref, ..Default::default() }.write(&mut x[LcState::LEN..]);
        x
    }

    fn law(&self, s: &LcState, c: &UnitCtrl, i_out: Dq) -> UnitLaw {
        let (p, q) = pcc_power(s.v_c, i_out);
        let omega = self.hac.omega(s.v_dc, s.delta, c.p_f);
        match &self.ac {
            AcVoltageControl::Magnitude(g) => {
                let mu_ff = self.v_ref / self.hac.v_dc_r;
                let (mu, err) = pi_voltage_magnitude(c.v_f, self.v_ref, mu_ff, c.xi_v.integ.d, g);
                UnitLaw { omega, m: Dq::new(mu, 0.0), p, q, err_v: Dq::new(err, 0.0), err_i: Dq::ZERO }
            }
            AcVoltageControl::Cascade(gains) => {
                let rot = -s.delta;
                let v_c = s.v_c.rotate(rot);
                let i_f = s.i_f.rotate(rot);
                let i_o = i_out.rotate(rot);
                let vff = VoltageFeedforward { i_g: i_o, omega, c_f: self.plant.c_f };
                let (i_ref, _) = pi_ac_voltage(v_c, Dq::new(self.v_ref, 0.0), &c.xi_v, gains, &vff);
                let cff = CurrentFeedforward { v_pcc: v_c, omega, l: self.plant.l };
                let (v_s_ref, _) = pi_current(i_f, i_ref, &c.xi_i, gains, &cff);
                let mut m = v_s_ref * (1.0 / s.v_dc);
                let mag = m.magnitude();
                if mag > 1.0 {
                    m = m * (1.0 / mag);
                }
                UnitLaw {
                    omega,
                    m,
                    p,
                    q,
                    err_v: Dq::new(self.v_ref, 0.0) - v_c,
                    err_i: i_ref - i_f,
                }
            }
        }
    }

    fn integrator_rates(&self, c: &UnitCtrl, law: &UnitLaw) -> (Dq, Dq) {
        match &self.ac {
            AcVoltageControl::Magnitude(g) => {
                (Dq::new(pi_integrator_rate(c.xi_v.integ.d, law.err_v.d, g), 0.0), Dq::ZERO)
            }
            AcVoltageControl::Cascade(gains) => {
                (c.xi_v.derivative(law.err_v, &gains.voltage), c.xi_i.derivative(law.err_i, &gains.current))
            }
        }
    }

    fn sample(&self, x: &mut [f64], i_out: Dq, period: f64, u: &mut [f64]) -> Result<()> {
        let s = LcState::from_slice(x);
        let mut c = UnitCtrl::from_slice(&x[LcState::LEN..]);
        let law = self.law(&s, &c, i_out);
        u.copy_from_slice(&[law.omega, law.m.d, law.m.q]);
        c.p_f = lpf_step(Lpf1 { state: c.p_f, omega_c: self.lpf_omega_c }, law.p, period)?.state;
        c.v_f = lpf_step(Lpf1 { state: c.v_f, omega_c: self.lpf_omega_c }, s.v_c.magnitude(), period)?.state;
        match &self.ac {
            AcVoltageControl::Magnitude(g) => {
                c.xi_v.integ.d = pi_integrate(c.xi_v.integ.d, law.err_v.d, period, g);
            }
            AcVoltageControl::Cascade(gains) => {
                c.xi_v.advance(law.err_v, period, &gains.voltage);
                c.xi_i.advance(law.err_i, period, &gains.current);
            }
        }
        c.write(&mut x[LcState::LEN..]);
        Ok(())
    }

    fn rhs(&self, x: &[f64], i_out: Dq, held: Option<&[f64]>, omega_frame: f64, dx: &mut [f64]) -> Result<()> {
        let s = LcState::from_slice(x);
        let (omega, m) = match held {
            Some(u) => {
                dx[LcState::LEN..Self::LEN].fill(0.0);
                (u[0], Dq::new(u[1], u[2]))
            }
            None => {
                let c = UnitCtrl::from_slice(&x[LcState::LEN..]);
                let law = self.law(&s, &c, i_out);
                let (dxi_v, dxi_i) = self.integrator_rates(&c, &law);
                let rates = UnitCtrl {
                    p_f: self.lpf_omega_c * (law.p - c.p_f),
                    xi_v: PiDq { integ: dxi_v },
                    xi_i: PiDq { integ: dxi_i },
                    v_f: self.lpf_omega_c * (s.v_c.magnitude() - c.v_f),
                };
                rates.write(&mut dx[LcState::LEN..]);
                (law.omega, law.m)
            }
        };
        let (i_s, _) = lc_switch(&s, m);
        let g = &self.plant;
        let (_, i_dc) = dc_link_closed_loop(s.v_dc, s.zeta, i_s, g.v_dc_r, g.c_dc, g.g_dc, &self.dc);
        let d = lc_filter_rhs(&s, LcInput { m, i_dc }, i_out, g, omega, omega_frame)?;
        d.write(&mut dx[..LcState::LEN]);
        Ok(())
    }

    /// delta, zeta, v_dc, i_d, i_q, omega, p, q for the log.
    fn observe(&self, x: &[f64], i_out: Dq, held: Option<&[f64]>) -> [f64; 8] {
        let s = LcState::from_slice(x);
        let c = UnitCtrl::from_slice(&x[LcState::LEN..]);
        let law = self.law(&s, &c, i_out);
        let omega = held.map_or(law.omega, |u| u[0]);
        [s.delta, s.zeta, s.v_dc, i_out.d, i_out.q, omega, law.p, law.q]
    }

    fn apply(&mut self, action: &Action) -> Result<bool> {
        match action {
            Action::SetPowerRef(p) => {
                self.hac.p_r = *p;
                self.hac.delta_r = self.alpha * p;
            }
            Action::SetDcVoltageRef(v) => {
                self.plant.v_dc_r = *v;
                self.hac.v_dc_r = *v;
            }
            Action::SetGain { path, value } => {
                if set_common_gain(&mut self.hac, &mut self.dc, path, *value) {
                    return Ok(true);
                }
                let slot = match (path.as_str(), &mut self.ac) {
                    ("ac_voltage.kappa_p", AcVoltageControl::Magnitude(g)) => &mut g.kp,
                    ("ac_voltage.kappa_i", AcVoltageControl::Magnitude(g)) => &mut g.ki,
                    ("ac_voltage.kappa_p", AcVoltageControl::Cascade(c)) => &mut c.voltage.kp,
                    ("ac_voltage.kappa_i", AcVoltageControl::Cascade(c)) => &mut c.voltage.ki,
                    ("current.kappa_p", AcVoltageControl::Cascade(c)) => &mut c.current.kp,
                    ("current.kappa_i", AcVoltageControl::Cascade(c)) => &mut c.current.ki,
                    _ => return Err(unknown_gain(path)),
                };
                *slot = *value;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// What the PCC of a single LC unit is connected to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pcc {
    /// Stiff grid behind `l_g`, `r_g`; the frame follows the grid.
    Grid { omega_g: f64 },
    /// Resistive load; the frame rotates at `omega0`.
    Islanded { r_load: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcSystem {
    pub unit: ConverterUnit,
    pub pcc: Pcc,
}

impl LcSystem {
    pub fn flat_start(&self) -> Vec<f64> {
        match self.pcc {
            Pcc::Grid { .. } => {
                let mut x = self.unit.flat_start(Dq::ZERO);
                x.extend([0.0, 0.0]);
                x
            }
            Pcc::Islanded { r_load } => self.unit.flat_start(Dq::new(self.unit.v_ref / r_load, 0.0)),
        }
    }

    fn frame(&self) -> f64 {
        match self.pcc {
            Pcc::Grid { omega_g } => omega_g,
            Pcc::Islanded { .. } => self.unit.plant.omega0,
        }
    }

    fn i_out(&self, x: &[f64]) -> Dq {
        match self.pcc {
            Pcc::Grid { .. } => Dq::new(x[ConverterUnit::LEN], x[ConverterUnit::LEN + 1]),
            Pcc::Islanded { r_load } => Dq::new(x[5], x[6]) * (1.0 / r_load),
        }
    }
}

impl System for LcSystem {
    fn dim(&self) -> usize {
        match self.pcc {
            Pcc::Grid { .. } => ConverterUnit::LEN + 2,
            Pcc::Islanded { .. } => ConverterUnit::LEN,
        }
    }

    fn control_dim(&self) -> usize {
        ConverterUnit::HELD
    }

    fn columns(&self) -> Vec<String> {
        let mut c: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
        c.extend(["v_d", "v_q", "i_fd", "i_fq", "p_f"].map(String::from));
        c
    }

    fn sample(&mut self, _t: f64, x: &mut [f64], period: f64, u: &mut [f64]) -> Result<()> {
        let i_out = self.i_out(x);
        self.unit.sample(x, i_out, period, u)
    }

    fn rhs(&self, _t: f64, x: &[f64], held: Option<&[f64]>, dx: &mut [f64]) -> Result<()> {
        let i_out = self.i_out(x);
        let frame = self.frame();
        self.unit.rhs(x, i_out, held, frame, dx)?;
        if let Pcc::Grid { omega_g } = self.pcc {
            let g = &self.unit.plant;
            let v_c = Dq::new(x[5], x[6]);
            let di = rl_branch_rhs(i_out, v_c, Dq::new(g.v0, 0.0), g.l_g, g.r_g, omega_g);
            dx[ConverterUnit::LEN] = di.d;
            dx[ConverterUnit::LEN + 1] = di.q;
        }
        Ok(())
    }

    fn observe(&self, _t: f64, x: &[f64], held: Option<&[f64]>) -> Vec<f64> {
        let i_out = self.i_out(x);
        let mut row = self.unit.observe(x, i_out, held).to_vec();
        row.push(f64::NAN);
        row.extend([x[5], x[6], x[3], x[4], x[LcState::LEN]]);
        row
    }

    fn apply(&mut self, action: &Action, _x: &mut [f64]) -> Result<()> {
        match (action, &mut self.pcc) {
            (Action::SetLoad(r), Pcc::Islanded { r_load }) => {
                if !(*r > 0.0) {
                    return Err(Error::config(format!("load resistance must be positive, got {r}")));
                }
                *r_load = *r;
            }
            (Action::SetGridFrequency(w), Pcc::Grid { omega_g }) => *omega_g = *w,
            (a, _) => {
                if !self.unit.apply(a)? {
                    return Err(Error::config(format!("action {a:?} does not apply to this network")));
                }
            }
        }
        Ok(())
    }

    fn check_state(&self, t: f64, x: &[f64]) -> Result<()> {
        non_physical(t, x[2])
    }
}

/// Two LC units feeding a shared resistive load through RL lines, in a
/// frame rotating at `omega0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoConverterSystem {
    pub units: [ConverterUnit; 2],
    pub lines: [LineParams; 2],
    pub r_load: f64,
}

impl TwoConverterSystem {
    const LINE_OFFSET: usize = 2 * ConverterUnit::LEN;

    pub fn flat_start(&self) -> Vec<f64> {
        let i_line = Dq::new(self.units[0].v_ref / (2.0 * self.r_load), 0.0);
        let mut x = self.units[0].flat_start(i_line);
        x.extend(self.units[1].flat_start(i_line));
        x.extend([i_line.d, i_line.q, i_line.d, i_line.q]);
        x
    }

    fn i_line(&self, x: &[f64]) -> [Dq; 2] {
        let o = Self::LINE_OFFSET;
        [Dq::new(x[o], x[o + 1]), Dq::new(x[o + 2], x[o + 3])]
    }

    fn unit_slice(k: usize) -> std::ops::Range<usize> {
        k * ConverterUnit::LEN..(k + 1) * ConverterUnit::LEN
    }

    fn held_slice(k: usize) -> std::ops::Range<usize> {
        k * ConverterUnit::HELD..(k + 1) * ConverterUnit::HELD
    }
}

impl System for TwoConverterSystem {
    fn dim(&self) -> usize {
        Self::LINE_OFFSET + 4
    }

    fn control_dim(&self) -> usize {
        2 * ConverterUnit::HELD
    }

    fn columns(&self) -> Vec<String> {
        let mut c = Vec::new();
        for k in 1..=2 {
            c.extend(BASE_COLUMNS[..8].iter().map(|s| format!("{s}_{k}")));
        }
        c.push("V".into());
        c.extend(["p_f_1", "p_f_2"].map(String::from));
        c
    }

    fn sample(&mut self, _t: f64, x: &mut [f64], period: f64, u: &mut [f64]) -> Result<()> {
        let i_line = self.i_line(x);
        for k in 0..2 {
            self.units[k].sample(&mut x[Self::unit_slice(k)], i_line[k], period, &mut u[Self::held_slice(k)])?;
        }
        Ok(())
    }

    fn rhs(&self, _t: f64, x: &[f64], held: Option<&[f64]>, dx: &mut [f64]) -> Result<()> {
        let i_line = self.i_line(x);
        let omega0 = self.units[0].plant.omega0;
        let v_mid = (i_line[0] + i_line[1]) * self.r_load;
        for k in 0..2 {
            let h = held.map(|u| &u[Self::held_slice(k)]);
            self.units[k].rhs(&x[Self::unit_slice(k)], i_line[k], h, omega0, &mut dx[Self::unit_slice(k)])?;
            let v_c = Dq::new(x[k * ConverterUnit::LEN + 5], x[k * ConverterUnit::LEN + 6]);
            let di = rl_branch_rhs(i_line[k], v_c, v_mid, self.lines[k].l, self.lines[k].r, omega0);
            dx[Self::LINE_OFFSET + 2 * k] = di.d;
            dx[Self::LINE_OFFSET + 2 * k + 1] = di.q;
        }
        Ok(())
    }

    fn observe(&self, _t: f64, x: &[f64], held: Option<&[f64]>) -> Vec<f64> {
        let i_line = self.i_line(x);
        let mut row = Vec::with_capacity(19);
        for k in 0..2 {
            let h = held.map(|u| &u[Self::held_slice(k)]);
            row.extend(self.units[k].observe(&x[Self::unit_slice(k)], i_line[k], h));
        }
        row.push(f64::NAN);
        row.extend([x[LcState::LEN], x[ConverterUnit::LEN + LcState::LEN]]);
        row
    }

    fn apply(&mut self, action: &Action, _x: &mut [f64]) -> Result<()> {
        match action {
            Action::SetLoad(r) => {
                if !(*r > 0.0) {
                    return Err(Error::config(format!("load resistance must be positive, got {r}")));
                }
                self.r_load = *r;
            }
            Action::SetGridFrequency(_) => return Err(Error::config("the two-converter network has no grid")),
            a => {
                for u in &mut self.units {
                    u.apply(a)?;
                }
            }
        }
        Ok(())
    }

    fn check_state(&self, t: f64, x: &[f64]) -> Result<()> {
        non_physical(t, x[2])?;
        non_physical(t, x[ConverterUnit::LEN + 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::HacVariant;
    use crate::sim::{simulate, CtrlMode, Event, SimOptions};
    use std::f64::consts::PI;

    const P_B: f64 = 500e3;

    fn unit(kappa_bar: f64) -> ConverterUnit {
        let plant = PlantParams::table1();
        let alpha = angle_per_power(plant.l + plant.l_g, plant.omega0, plant.v0, plant.v0);
        ConverterUnit {
            plant,
            dc: DcPidGains::table1(),
            hac: HacGains {
                omega0: plant.omega0,
                kappa_dc: 0.18,
                kappa_ac: 2.0 * kappa_bar / alpha,
                kappa_ac_bar: kappa_bar,
                kappa_ac1: 0.0,
                kappa_ac2: 0.0,
                delta_r: 0.0,
                p_r: 0.0,
                v_dc_r: plant.v_dc_r,
                variant: HacVariant::Power,
            },
            ac: AcVoltageControl::Magnitude(PiGains { kp: 0.1, ki: 20.0, limit: 0.1 }),
            lpf_omega_c: 2.0 * PI * 10.0,
            v_ref: plant.v0,
            alpha,
        }
    }

    fn opts(t_stop: f64, mode: CtrlMode) -> SimOptions {
        SimOptions { t_stop, mode, ..Default::default() }
    }

    #[test]
    fn islanded_flat_start_is_steady_at_matching_power() {
        let u = unit(18.84 / P_B);
        let r_load = 1.5 * u.v_ref * u.v_ref / (0.5 * P_B);
        let mut sys = LcSystem { unit: u, pcc: Pcc::Islanded { r_load } };
        sys.unit.hac.p_r = 0.5 * P_B;
        let x0 = sys.flat_start();
        let res = simulate(&mut sys, &x0, &[], &opts(0.3, CtrlMode::Discrete)).unwrap();
        let p = res.log.last("p").unwrap();
        assert!((p / (0.5 * P_B) - 1.0).abs() < 1e-3, "{p}");
        let w = res.log.last("omega").unwrap();
        assert!((w - sys.unit.plant.omega0).abs() < 0.05, "{w}");
    }

    #[test]
    fn grid_connected_settles_at_reference_power() {
        let mut sys = LcSystem { unit: unit(18.84 / P_B), pcc: Pcc::Grid { omega_g: 2.0 * PI * 60.0 } };
        let x0 = sys.flat_start();
        let ev = [Event::new(0.05, Action::SetPowerRef(0.5 * P_B))];
        let res = simulate(&mut sys, &x0, &ev, &opts(1.5, CtrlMode::Discrete)).unwrap();
        let p = res.log.last("p").unwrap();
        assert!((p - 0.5 * P_B).abs() < 0.005 * P_B, "{p}");
    }

    #[test]
    fn unknown_gain_path_is_rejected() {
        let mut sys = LcSystem { unit: unit(18.84 / P_B), pcc: Pcc::Grid { omega_g: 377.0 } };
        let mut x = sys.flat_start();
        let a = Action::SetGain { path: "hac.nope".into(), value: 1.0 };
        assert!(sys.apply(&a, &mut x).is_err());
        let a = Action::SetGain { path: "hac.kappa_dc".into(), value: 0.0 };
        sys.apply(&a, &mut x).unwrap();
        assert_eq!(sys.unit.hac.kappa_dc, 0.0);
        assert!(sys.apply(&Action::SetLoad(1.0), &mut x).is_err());
    }

    #[test]
    fn two_converter_flat_start_shares_load() {
        let u = unit(18.84 / P_B);
        let r_load = 1.5 * u.v_ref * u.v_ref / (0.5 * P_B);
        let line = LineParams { r: u.plant.r_g, l: u.plant.l_g };
        let mut units = [u.clone(), u];
        units[0].hac.p_r = 0.25 * P_B;
        units[1].hac.p_r = 0.25 * P_B;
        let mut sys = TwoConverterSystem { units, lines: [line; 2], r_load };
        let x0 = sys.flat_start();
        let res = simulate(&mut sys, &x0, &[], &opts(0.5, CtrlMode::Discrete)).unwrap();
        let (p1, p2) = (res.log.last("p_1").unwrap(), res.log.last("p_2").unwrap());
        assert!((p1 - p2).abs() < 1e-3 * P_B, "{p1} {p2}");
        assert_eq!(res.log.columns.len(), 1 + 16 + 1 + 2);
    }

    fn linearized(sys: &LcSystem, x: &[f64]) -> Vec<nalgebra::Complex<f64>> {
        let n = x.len();
        let mut f = |x: &[f64]| -> Result<Vec<f64>> {
            let mut d = vec![0.0; n];
            sys.rhs(0.0, x, None, &mut d)?;
            Ok(d)
        };
        let scale: Vec<f64> = x.iter().map(|v| v.abs().max(1.0)).collect();
        let j = crate::analysis::fd_jacobian(&mut f, x, &scale).unwrap();
        let mut ev: Vec<_> = j.complex_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.re.total_cmp(&a.re));
        ev
    }

    #[test]
    fn grid_connected_linearization_is_stable() {
        let mut sys = LcSystem { unit: unit(18.84 / P_B), pcc: Pcc::Grid { omega_g: 2.0 * PI * 60.0 } };
        sys.unit.hac.p_r = 0.5 * P_B;
        let x0 = sys.flat_start();
        let res = simulate(&mut sys, &x0, &[], &opts(1.0, CtrlMode::Continuous)).unwrap();
        let ev = linearized(&sys, &res.x);
        // the magnitude controller leaves three integrator slots idle
        let (idle, active): (Vec<nalgebra::Complex<f64>>, Vec<_>) = ev.iter().partition(|c| c.norm() < 1e-6);
        assert_eq!(idle.len(), 3, "{ev:?}");
        assert!(active.iter().all(|c| c.re < -1.0), "{ev:?}");
    }
}
