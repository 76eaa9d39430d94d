//! TOML run configuration with the 500 kVA baseline as defaults.
//!
//! Keys carry their unit as a suffix (`_f`, `_h`, `_ohm`, `_pu`, ...).
//! Optional keys left out are derived from the others; [`Config::resolved`]
//! fills them in so a snapshot shows every value actually used.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::closed_loop::{AcVoltageControl, ConverterUnit};
use crate::control::{angle_per_power, CascadeGains, DcPidGains, HacGains, HacVariant, PiGains};
use crate::error::{Error, Result};
use crate::frames::PerUnitBase;
use crate::plant::{LineParams, PlantParams};
use crate::sim::{CtrlMode, SimOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseSection {
    pub p_b_va: f64,
    pub f_b_hz: f64,
}

impl Default for BaseSection {
    fn default() -> Self {
        Self { p_b_va: 500e3, f_b_hz: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub c_dc_f: f64,
    pub g_dc_s: f64,
    pub l_h: f64,
    /// Defaults to X/R = 10 at the base frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_ohm: Option<f64>,
    pub c_f_f: f64,
    pub l_g_h: f64,
    pub r_g_ohm: f64,
    /// Phase-peak grid voltage.
    pub v0_v: f64,
    /// Defaults to three times `v0_v`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_dc_r_v: Option<f64>,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            c_dc_f: 0.01,
            g_dc_s: 0.01,
            l_h: 0.12e-3,
            r_ohm: None,
            c_f_f: 0.13e-3,
            l_g_h: 0.56e-3,
            r_g_ohm: 0.064,
            v0_v: 326.59,
            v_dc_r_v: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcSourceSection {
    /// A/V
    pub kappa_p: f64,
    /// A/(V s)
    pub kappa_i: f64,
    /// A s/V
    pub kappa_d: f64,
}

impl Default for DcSourceSection {
    fn default() -> Self {
        let g = DcPidGains::table1();
        Self { kappa_p: g.kappa_p, kappa_i: g.kappa_i, kappa_d: g.kappa_d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Exact,
    Power,
    Arctan,
    Energy,
    EnergyPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HacSection {
    pub variant: VariantName,
    /// rad/s per V
    pub kappa_dc: f64,
    /// rad/s per p.u. power
    pub kappa_ac_bar_pu: f64,
    /// rad/s; defaults to the value giving the same small-signal droop as
    /// `kappa_ac_bar_pu`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_ac: Option<f64>,
    /// rad/s; defaults to `kappa_ac_bar_pu`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_ac1: Option<f64>,
    /// 1/p.u.; defaults to 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_ac2_pu: Option<f64>,
    /// Power and voltage measurement filter cutoff.
    pub lpf_cutoff_hz: f64,
}

impl Default for HacSection {
    fn default() -> Self {
        Self {
            variant: VariantName::Power,
            kappa_dc: 0.18,
            kappa_ac_bar_pu: 18.84,
            kappa_ac: None,
            kappa_ac1: None,
            kappa_ac2_pu: None,
            lpf_cutoff_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcMode {
    Magnitude,
    Cascade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcVoltageSection {
    pub mode: AcMode,
    /// Per-unit error gain in magnitude mode, A/V in cascade mode.
    pub kappa_p: f64,
    pub kappa_i: f64,
    /// Bound on the integral part: modulation index in magnitude mode,
    /// amperes in cascade mode (default 1.5 base currents).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    /// Phase-peak PCC voltage reference; defaults to `plant.v0_v`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_ref_v: Option<f64>,
}

impl Default for AcVoltageSection {
    fn default() -> Self {
        Self { mode: AcMode::Magnitude, kappa_p: 0.1, kappa_i: 20.0, limit: None, v_ref_v: None }
    }
}

/// Inner current loop, used only in cascade mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurrentSection {
    /// V/A; defaults to a 500 Hz loop, `2π·500·L`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_p: Option<f64>,
    /// V/(A s); defaults to `2π·500·R`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_i: Option<f64>,
    /// Bound on the integral part in volts; defaults to `v0_v`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_v: Option<f64>,
    pub ff_grid_current: bool,
    pub ff_cap_current: bool,
    pub ff_pcc_voltage: bool,
    pub decoupling: bool,
}

impl Default for CurrentSection {
    fn default() -> Self {
        Self {
            kappa_p: None,
            kappa_i: None,
            limit_v: None,
            ff_grid_current: true,
            ff_cap_current: true,
            ff_pcc_voltage: true,
            decoupling: true,
        }
    }
}

/// Operating points and event sizes of the scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Power reference before the event where the scenario does not step it.
    pub p_r_pu: f64,
    /// Size of power reference steps.
    pub p_r_step_pu: f64,
    /// Islanded / shared load at rated voltage before the event.
    pub load_pu: f64,
    pub load_step_pu: f64,
    /// Relative grid frequency step.
    pub grid_freq_step: f64,
    /// Relative dc voltage reference step.
    pub v_dc_r_step: f64,
    /// Relative droop gain spread between the two converters.
    pub droop_spread: f64,
    /// Line impedances of the two-converter network; default to the grid impedance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_r_ohm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_l_h: Option<f64>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            p_r_pu: 0.5,
            p_r_step_pu: 0.5,
            load_pu: 0.5,
            load_step_pu: 0.5,
            grid_freq_step: 0.05,
            v_dc_r_step: 0.02,
            droop_spread: 0.02,
            line_r_ohm: None,
            line_l_h: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtrlModeName {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub t_stop_s: f64,
    pub h_s: f64,
    pub ctrl_rate_hz: f64,
    pub decimation: usize,
    pub ctrl_mode: CtrlModeName,
    pub event_time_s: f64,
    /// Length of the unlogged run from a flat start that precedes every
    /// scenario.
    pub settle_s: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            t_stop_s: 2.0,
            h_s: 20e-6,
            ctrl_rate_hz: 5e3,
            decimation: 10,
            ctrl_mode: CtrlModeName::Discrete,
            event_time_s: 0.1,
            settle_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovSection {
    pub samples: usize,
    pub seed: u64,
    pub t_stop_s: f64,
    pub delta_spread_rad: f64,
    /// Relative to the dc voltage reference.
    pub v_dc_spread: f64,
    pub current_spread_pu: f64,
    /// Target ratio ρ/ρ_critical; κ_dc is lowered until it holds.
    pub rho_ratio: f64,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 7,
            t_stop_s: 2.0,
            delta_spread_rad: 0.3,
            v_dc_spread: 0.05,
            current_spread_pu: 0.2,
            rho_ratio: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub base: BaseSection,
    pub plant: PlantSection,
    pub dc_source: DcSourceSection,
    pub hac: HacSection,
    pub ac_voltage: AcVoltageSection,
    pub current: CurrentSection,
    pub network: NetworkSection,
    pub sim: SimSection,
    pub lyapunov: LyapunovSection,
}

/// Parses a configuration; unspecified keys take their defaults.
pub fn parse_config(text: &str) -> Result<Config> {
    let cfg: Config = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `text` after applying `path=value` overrides such as
/// `hac.kappa_dc=0`. Values are read as TOML scalars, falling back to a
/// bare string.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<Config> {
    if overrides.is_empty() {
        return parse_config(text);
    }
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{item}` is not of the form path=value")))?;
        set_path(&mut table, path.trim(), parse_scalar(raw.trim()))?;
    }
    let cfg: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("malformed override path `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override path `{path}`: `{k}` is not a section")))?;
    }
    // integers given for float keys are widened by serde
    let value = match value {
        toml::Value::Integer(i) if cur.get(*last).is_some_and(|v| v.is_float()) => toml::Value::Float(i as f64),
        v => v,
    };
    cur.insert(last.to_string(), value);
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {v}")))
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.per_unit()?;
        self.plant_params().validate()?;
        self.dc_gains().validate()?;
        self.hac_gains(0.0)?.validate()?;
        self.ac_control().validate()?;
        positive("hac.lpf_cutoff_hz", self.hac.lpf_cutoff_hz)?;
        positive("network.load_pu", self.network.load_pu)?;
        positive("network.load_pu + network.load_step_pu", self.network.load_pu + self.network.load_step_pu)?;
        if let Some(v) = self.ac_voltage.v_ref_v {
            positive("ac_voltage.v_ref_v", v)?;
        }
        let lines = self.lines();
        positive("network.line_l_h", lines.l)?;
        if !(lines.r >= 0.0) {
            return Err(Error::config("network.line_r_ohm must be non-negative"));
        }
        self.sim_options().validate()?;
        positive("sim.event_time_s", self.sim.event_time_s)?;
        if !(self.sim.settle_s >= 0.0) {
            return Err(Error::config("sim.settle_s must be non-negative"));
        }
        positive("lyapunov.t_stop_s", self.lyapunov.t_stop_s)?;
        positive("lyapunov.rho_ratio", self.lyapunov.rho_ratio)?;
        Ok(())
    }

    pub fn per_unit(&self) -> Result<PerUnitBase> {
        PerUnitBase::new(self.base.p_b_va, self.base.f_b_hz, self.plant.v0_v)
    }

    pub fn omega0(&self) -> f64 {
        2.0 * PI * self.base.f_b_hz
    }

    pub fn plant_params(&self) -> PlantParams {
        let p = &self.plant;
        let omega0 = self.omega0();
        PlantParams {
            c_dc: p.c_dc_f,
            g_dc: p.g_dc_s,
            l: p.l_h,
            r: p.r_ohm.unwrap_or(omega0 * p.l_h / 10.0),
            c_f: p.c_f_f,
            l_g: p.l_g_h,
            r_g: p.r_g_ohm,
            omega0,
            v0: p.v0_v,
            v_dc_r: p.v_dc_r_v.unwrap_or(3.0 * p.v0_v),
        }
    }

    pub fn dc_gains(&self) -> DcPidGains {
        let d = &self.dc_source;
        DcPidGains { kappa_p: d.kappa_p, kappa_i: d.kappa_i, kappa_d: d.kappa_d }
    }

    /// Angle per watt of the converter-to-grid branch, filter plus grid.
    pub fn alpha(&self) -> f64 {
        let g = self.plant_params();
        angle_per_power(g.l + g.l_g, g.omega0, g.v0, g.v0)
    }

    /// Angle law gains with the power reference `p_r` in watts.
    pub fn hac_gains(&self, p_r: f64) -> Result<HacGains> {
        let h = &self.hac;
        let g = self.plant_params();
        let p_b = self.base.p_b_va;
        let alpha = self.alpha();
        let kappa_ac_bar = h.kappa_ac_bar_pu / p_b;
        let variant = match h.variant {
            VariantName::Exact => HacVariant::Exact,
            VariantName::Power => HacVariant::Power,
            VariantName::Arctan => HacVariant::Arctan,
            VariantName::Energy => HacVariant::Energy { power_sync: false },
            VariantName::EnergyPower => HacVariant::Energy { power_sync: true },
        };
        Ok(HacGains {
            omega0: g.omega0,
            kappa_dc: h.kappa_dc,
            kappa_ac: h.kappa_ac.unwrap_or(2.0 * kappa_ac_bar / alpha),
            kappa_ac_bar,
            kappa_ac1: h.kappa_ac1.unwrap_or(h.kappa_ac_bar_pu),
            kappa_ac2: h.kappa_ac2_pu.unwrap_or(1.0) / p_b,
            delta_r: alpha * p_r,
            p_r,
            v_dc_r: g.v_dc_r,
            variant,
        })
    }

    pub fn v_ref(&self) -> f64 {
        self.ac_voltage.v_ref_v.unwrap_or(self.plant.v0_v)
    }

    pub fn ac_control(&self) -> AcVoltageControl {
        let a = &self.ac_voltage;
        match a.mode {
            AcMode::Magnitude => AcVoltageControl::Magnitude(PiGains {
                kp: a.kappa_p,
                ki: a.kappa_i,
                limit: a.limit.unwrap_or(0.1),
            }),
            AcMode::Cascade => {
                let g = self.plant_params();
                let i_base = (2.0 / 3.0) * self.base.p_b_va / g.v0;
                let c = &self.current;
                let w_cc = 2.0 * PI * 500.0;
                AcVoltageControl::Cascade(CascadeGains {
                    voltage: PiGains { kp: a.kappa_p, ki: a.kappa_i, limit: a.limit.unwrap_or(1.5 * i_base) },
                    current: PiGains {
                        kp: c.kappa_p.unwrap_or(w_cc * g.l),
                        ki: c.kappa_i.unwrap_or(w_cc * g.r),
                        limit: c.limit_v.unwrap_or(g.v0),
                    },
                    ff_grid_current: c.ff_grid_current,
                    ff_cap_current: c.ff_cap_current,
                    ff_pcc_voltage: c.ff_pcc_voltage,
                    decoupling: c.decoupling,
                })
            }
        }
    }

    /// LC converter unit at power reference `p_r` (W).
    pub fn unit(&self, p_r: f64) -> Result<ConverterUnit> {
        Ok(ConverterUnit {
            plant: self.plant_params(),
            dc: self.dc_gains(),
            hac: self.hac_gains(p_r)?,
            ac: self.ac_control(),
            lpf_omega_c: 2.0 * PI * self.hac.lpf_cutoff_hz,
            v_ref: self.v_ref(),
            alpha: self.alpha(),
        })
    }

    pub fn lines(&self) -> LineParams {
        LineParams {
            r: self.network.line_r_ohm.unwrap_or(self.plant.r_g_ohm),
            l: self.network.line_l_h.unwrap_or(self.plant.l_g_h),
        }
    }

    /// Load resistance drawing `p_pu` at the rated PCC voltage.
    pub fn load_resistance(&self, p_pu: f64) -> f64 {
        let v = self.v_ref();
        1.5 * v * v / (p_pu * self.base.p_b_va)
    }

    pub fn ctrl_mode(&self) -> CtrlMode {
        match self.sim.ctrl_mode {
            CtrlModeName::Discrete => CtrlMode::Discrete,
            CtrlModeName::Continuous => CtrlMode::Continuous,
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            t_start: 0.0,
            t_stop: self.sim.t_stop_s,
            h: self.sim.h_s,
            ctrl_rate: self.sim.ctrl_rate_hz,
            decimation: self.sim.decimation,
            mode: self.ctrl_mode(),
        }
    }

    /// Copy with every derived default written out.
    pub fn resolved(&self) -> Config {
        let mut c = self.clone();
        let g = self.plant_params();
        c.plant.r_ohm = Some(g.r);
        c.plant.v_dc_r_v = Some(g.v_dc_r);
        if let Ok(h) = self.hac_gains(0.0) {
            c.hac.kappa_ac = Some(h.kappa_ac);
            c.hac.kappa_ac1 = Some(h.kappa_ac1);
            c.hac.kappa_ac2_pu = Some(h.kappa_ac2 * self.base.p_b_va);
        }
        c.ac_voltage.v_ref_v = Some(self.v_ref());
        match self.ac_control() {
            AcVoltageControl::Magnitude(p) => c.ac_voltage.limit = Some(p.limit),
            AcVoltageControl::Cascade(cg) => {
                c.ac_voltage.limit = Some(cg.voltage.limit);
                c.current.kappa_p = Some(cg.current.kp);
                c.current.kappa_i = Some(cg.current.ki);
                c.current.limit_v = Some(cg.current.limit);
            }
        }
        let lines = self.lines();
        c.network.line_r_ohm = Some(lines.r);
        c.network.line_l_h = Some(lines.l);
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}
