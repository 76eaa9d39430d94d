//! Named scenarios: build a system from a [`Config`], run it, reduce the
//! trajectory to headline metrics and write CSV, plots and a report.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    default_guess, equilibria_closed_form, fd_jacobian, jacobian_eigenvalues, newton_equilibrium, rho_critical,
    stability_report, steady_state_relative_residuals, LoopGains, LyapCoeffs,
};
use crate::closed_loop::{LFilterSystem, LcSystem, Pcc, TwoConverterSystem};
use crate::config::{Config, VariantName};
use crate::control::feedforward_mu;
use crate::error::{Error, Result};
use crate::plot::emit_plots;
use crate::plant::SysState;
use crate::sim::{simulate, Action, CtrlMode, Event, SimOptions, System, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    IslandedLoadStep,
    GridConnectedSetpoint,
    GridFreqStep,
    TwoConverterSharing,
    MatchingOnly,
    DroopOnly,
    LyapunovDecay,
    EquilibriumReport,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 8] = [
        ScenarioName::IslandedLoadStep,
        ScenarioName::GridConnectedSetpoint,
        ScenarioName::GridFreqStep,
        ScenarioName::TwoConverterSharing,
        ScenarioName::MatchingOnly,
        ScenarioName::DroopOnly,
        ScenarioName::LyapunovDecay,
        ScenarioName::EquilibriumReport,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::IslandedLoadStep => "islanded_load_step",
            ScenarioName::GridConnectedSetpoint => "grid_connected_setpoint",
            ScenarioName::GridFreqStep => "grid_freq_step",
            ScenarioName::TwoConverterSharing => "two_converter_sharing",
            ScenarioName::MatchingOnly => "matching_only",
            ScenarioName::DroopOnly => "droop_only",
            ScenarioName::LyapunovDecay => "lyapunov_decay",
            ScenarioName::EquilibriumReport => "equilibrium_report",
        }
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario `{s}`")))
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub key: String,
    pub value: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: ScenarioName,
    /// Resolved configuration as TOML.
    pub config: String,
    pub files: Vec<PathBuf>,
    pub metrics: Vec<Metric>,
}

impl RunReport {
    fn new(scenario: ScenarioName, cfg: &Config) -> Self {
        Self { scenario, config: cfg.resolved().to_toml(), files: Vec::new(), metrics: Vec::new() }
    }

    fn push(&mut self, key: &str, value: f64, label: &str) {
        self.metrics.push(Metric { key: key.into(), value, label: label.into() });
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.key == key).map(|m| m.value)
    }

    /// One `key=value` line per entry.
    pub fn key_values(&self) -> String {
        let mut s = format!("scenario={}\n", self.scenario);
        for m in &self.metrics {
            s.push_str(&format!("{}={}\n", m.key, m.value));
        }
        for (i, f) in self.files.iter().enumerate() {
            s.push_str(&format!("file.{i}={}\n", f.display()));
        }
        s
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}", self.scenario)?;
        let width = self.metrics.iter().map(|m| m.label.len()).max().unwrap_or(0);
        for m in &self.metrics {
            writeln!(f, "  {:<width$}  {:.6e}", m.label, m.value)?;
        }
        if !self.files.is_empty() {
            writeln!(f, "wrote")?;
            for p in &self.files {
                writeln!(f, "  {}", p.display())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: RunReport,
    /// Logged trajectory; the first perturbed run for `lyapunov_decay`,
    /// absent for `equilibrium_report`.
    pub log: Option<TrajectoryLog>,
}

/// Where to write outputs, if anywhere.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub dir: Option<PathBuf>,
    pub plots: bool,
}

/// Value before an event, the settled final value and the settling instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub before: f64,
    pub final_value: f64,
    pub t_settle: f64,
}

/// Settling analysis of `y(t)` after an event at `t_event`.
///
/// The reference is the mean of the final 10% of samples and the band is
/// ±2% of the change from the last pre-event sample (2% of the reference
/// when there is no change). The settling instant is the sample after the
/// last excursion from that band; the final value averages the samples
/// after both the settling instant and the start of the final window.
pub fn steady_state(t: &[f64], y: &[f64], t_event: f64) -> Result<SteadyState> {
    let n = t.len();
    if n < 2 || y.len() != n {
        return Err(Error::EmptyLog);
    }
    let w = n - (n / 10).max(1);
    let reference = mean(&y[w..]);
    let k_event = t.iter().position(|&ti| ti >= t_event).unwrap_or(n - 1);
    let before = y[k_event.saturating_sub(1)];
    let step = (reference - before).abs();
    let scale = reference.abs().max(before.abs());
    let band = if step > 1e-9 * scale { 0.02 * step } else { 0.02 * reference.abs() };
    let last_out = (k_event..n).rev().find(|&k| (y[k] - reference).abs() > band);
    let k_settle = match last_out {
        Some(k) => (k + 1).min(n - 1),
        None => k_event,
    };
    let k_from = k_settle.max(w);
    Ok(SteadyState { before, final_value: mean(&y[k_from..]), t_settle: t[k_settle] })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn column(log: &TrajectoryLog, name: &str) -> Result<Vec<f64>> {
    log.column(name).ok_or_else(|| Error::config(format!("log has no column `{name}`")))
}

fn settle(log: &TrajectoryLog, name: &str, t_event: f64) -> Result<SteadyState> {
    steady_state(&log.times(), &column(log, name)?, t_event)
}

/// Runs the unlogged pre-roll from `x0`, then the logged run with `events`.
fn run_system<S: System>(sys: &mut S, x0: &[f64], events: &[Event], cfg: &Config) -> Result<(TrajectoryLog, Vec<f64>)> {
    let opts = cfg.sim_options();
    let mut x = x0.to_vec();
    if cfg.sim.settle_s > 0.0 {
        let pre = SimOptions { t_start: -cfg.sim.settle_s, t_stop: 0.0, ..opts };
        x = simulate(sys, &x, &[], &pre)?.x;
    }
    let res = simulate(sys, &x, events, &opts)?;
    Ok((res.log, res.x))
}

/// Largest real part of the continuous-time linearization at `x`,
/// ignoring eigenvalues of integrator slots the controller leaves idle.
pub fn spectral_abscissa<S: System>(sys: &S, x: &[f64]) -> Result<f64> {
    let n = x.len();
    let mut f = |x: &[f64]| -> Result<Vec<f64>> {
        let mut d = vec![0.0; n];
        sys.rhs(0.0, x, None, &mut d)?;
        Ok(d)
    };
    let scale: Vec<f64> = x.iter().map(|v| v.abs().max(1.0)).collect();
    let j = fd_jacobian(&mut f, x, &scale)?;
    Ok(j.complex_eigenvalues()
        .iter()
        .filter(|c| c.norm() > 1e-6)
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn run_scenario(name: ScenarioName, cfg: &Config, out: &OutputOptions) -> Result<ScenarioRun> {
    cfg.validate()?;
    let mut run = match name {
        ScenarioName::IslandedLoadStep => islanded_load_step(cfg)?,
        ScenarioName::GridConnectedSetpoint => grid_setpoint(cfg, name)?,
        ScenarioName::GridFreqStep => grid_freq_step(cfg)?,
        ScenarioName::TwoConverterSharing => two_converter_sharing(cfg)?,
        ScenarioName::MatchingOnly => matching_only(cfg)?,
        ScenarioName::DroopOnly => grid_setpoint(cfg, name)?,
        ScenarioName::LyapunovDecay => return lyapunov_decay(cfg, out),
        ScenarioName::EquilibriumReport => return equilibrium_report(cfg, out),
    };
    if let (Some(dir), Some(log)) = (&out.dir, &run.log) {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join("trajectory.csv");
        log.save_csv(&csv)?;
        run.report.files.push(csv);
        if out.plots {
            let channels = plot_channels(name);
            run.report.files.extend(emit_plots(log, &channels, dir)?);
        }
        write_report(&mut run.report, dir)?;
    }
    Ok(run)
}

fn plot_channels(name: ScenarioName) -> Vec<&'static str> {
    match name {
        ScenarioName::TwoConverterSharing => {
            vec!["omega_pu_1", "omega_pu_2", "p_pu_1", "p_pu_2", "v_dc_pu_1", "v_dc_pu_2"]
        }
        _ => vec!["omega_pu", "p_pu", "v_dc_pu"],
    }
}

fn write_report(report: &mut RunReport, dir: &Path) -> Result<()> {
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, &report.config)?;
    report.files.push(cfg_path);
    let kv = dir.join("report.kv");
    let txt = dir.join("report.txt");
    report.files.push(kv.clone());
    report.files.push(txt.clone());
    std::fs::write(&kv, report.key_values())?;
    std::fs::write(&txt, report.to_string())?;
    Ok(())
}

fn finish_log(log: &mut TrajectoryLog, cfg: &Config) -> Result<()> {
    log.add_per_unit(&cfg.per_unit()?, cfg.plant_params().v_dc_r);
    Ok(())
}

fn islanded_load_step(cfg: &Config) -> Result<ScenarioRun> {
    let p_b = cfg.base.p_b_va;
    let omega0 = cfg.omega0();
    let t_ev = cfg.sim.event_time_s;
    let unit = cfg.unit(cfg.network.p_r_pu * p_b)?;
    let v_dc_r = unit.plant.v_dc_r;
    let mut sys = LcSystem { unit, pcc: Pcc::Islanded { r_load: cfg.load_resistance(cfg.network.load_pu) } };
    let x0 = sys.flat_start();
    let r_after = cfg.load_resistance(cfg.network.load_pu + cfg.network.load_step_pu);
    let (mut log, _) = run_system(&mut sys, &x0, &[Event::new(t_ev, Action::SetLoad(r_after))], cfg)?;
    finish_log(&mut log, cfg)?;

    let w = settle(&log, "omega", t_ev)?;
    let p = settle(&log, "p", t_ev)?;
    let v = settle(&log, "v_dc", t_ev)?;
    let mut r = RunReport::new(ScenarioName::IslandedLoadStep, cfg);
    r.push("delta_omega_rad_s", w.final_value - omega0, "steady frequency deviation [rad/s]");
    r.push("delta_omega_rel", (w.final_value - omega0) / omega0, "steady frequency deviation / omega0");
    r.push("omega_final_pu", w.final_value / cfg.per_unit()?.omega_b(), "final frequency [p.u.]");
    r.push("delta_p_pu", (p.final_value - p.before) / p_b, "active power change [p.u.]");
    r.push("v_dc_error_rel", (v.final_value - v_dc_r) / v_dc_r, "final dc voltage error / v_dc_r");
    r.push("settling_time_s", w.t_settle - t_ev, "frequency settling time, 2% band [s]");
    Ok(ScenarioRun { report: r, log: Some(log) })
}

/// Set-point step, and its droop-only reduction with `kappa_dc = 0`.
fn grid_setpoint(cfg: &Config, name: ScenarioName) -> Result<ScenarioRun> {
    let mut cfg = cfg.clone();
    if name == ScenarioName::DroopOnly {
        cfg.hac.kappa_dc = 0.0;
    }
    let cfg = &cfg;
    let p_b = cfg.base.p_b_va;
    let omega0 = cfg.omega0();
    let t_ev = cfg.sim.event_time_s;
    let p_r = cfg.network.p_r_step_pu * p_b;
    let mut sys = LcSystem { unit: cfg.unit(0.0)?, pcc: Pcc::Grid { omega_g: omega0 } };
    let x0 = sys.flat_start();
    let (mut log, x) = run_system(&mut sys, &x0, &[Event::new(t_ev, Action::SetPowerRef(p_r))], cfg)?;
    finish_log(&mut log, cfg)?;

    let p = settle(&log, "p", t_ev)?;
    let w = settle(&log, "omega", t_ev)?;
    let mut r = RunReport::new(name, cfg);
    r.push("p_ref_pu", p_r / p_b, "power reference after the step [p.u.]");
    r.push("delta_p_pu", (p.final_value - p.before) / p_b, "active power change [p.u.]");
    r.push("p_error_pu", (p.final_value - p_r) / p_b, "steady power error [p.u.]");
    r.push("omega_error_rel", (w.final_value - omega0) / omega0, "steady frequency error / omega0");
    r.push("settling_time_s", p.t_settle - t_ev, "power settling time, 2% band [s]");
    r.push("stability_margin", -spectral_abscissa(&sys, &x)?, "decay rate of the slowest mode [1/s]");
    Ok(ScenarioRun { report: r, log: Some(log) })
}

fn grid_freq_step(cfg: &Config) -> Result<ScenarioRun> {
    let p_b = cfg.base.p_b_va;
    let omega0 = cfg.omega0();
    let t_ev = cfg.sim.event_time_s;
    let omega_g = (1.0 + cfg.network.grid_freq_step) * omega0;
    let mut sys = LcSystem { unit: cfg.unit(cfg.network.p_r_pu * p_b)?, pcc: Pcc::Grid { omega_g: omega0 } };
    let v_dc_r = sys.unit.plant.v_dc_r;
    let x0 = sys.flat_start();
    let (mut log, x) = run_system(&mut sys, &x0, &[Event::new(t_ev, Action::SetGridFrequency(omega_g))], cfg)?;
    finish_log(&mut log, cfg)?;

    let p = settle(&log, "p", t_ev)?;
    let w = settle(&log, "omega", t_ev)?;
    let v = settle(&log, "v_dc", t_ev)?;
    let mut r = RunReport::new(ScenarioName::GridFreqStep, cfg);
    r.push("delta_p_pu", (p.final_value - p.before) / p_b, "active power change [p.u.]");
    r.push("delta_omega_rel", (w.final_value - omega0) / omega0, "steady frequency change / omega0");
    r.push("sync_error_rel", (w.final_value - omega_g) / omega0, "converter minus grid frequency / omega0");
    r.push("v_dc_error_rel", (v.final_value - v_dc_r) / v_dc_r, "final dc voltage error / v_dc_r");
    r.push("settling_time_s", p.t_settle - t_ev, "power settling time, 2% band [s]");
    r.push("stability_margin", -spectral_abscissa(&sys, &x)?, "decay rate of the slowest mode [1/s]");
    Ok(ScenarioRun { report: r, log: Some(log) })
}

fn two_converter_sharing(cfg: &Config) -> Result<ScenarioRun> {
    let p_b = cfg.base.p_b_va;
    let omega0 = cfg.omega0();
    let t_ev = cfg.sim.event_time_s;
    let s = cfg.network.droop_spread;
    let base = cfg.unit(0.5 * cfg.network.p_r_pu * p_b)?;
    let mut units = [base.clone(), base];
    for (u, k) in units.iter_mut().zip([1.0 - s, 1.0 + s]) {
        u.hac.kappa_ac_bar *= k;
        u.hac.kappa_ac *= k;
        u.hac.kappa_ac1 *= k;
    }
    let mut sys = TwoConverterSystem {
        units,
        lines: [cfg.lines(); 2],
        r_load: cfg.load_resistance(cfg.network.load_pu),
    };
    let x0 = sys.flat_start();
    let r_after = cfg.load_resistance(cfg.network.load_pu + cfg.network.load_step_pu);
    let (mut log, _) = run_system(&mut sys, &x0, &[Event::new(t_ev, Action::SetLoad(r_after))], cfg)?;
    finish_log(&mut log, cfg)?;

    let p1 = settle(&log, "p_1", t_ev)?;
    let p2 = settle(&log, "p_2", t_ev)?;
    let w1 = settle(&log, "omega_1", t_ev)?;
    let w2 = settle(&log, "omega_2", t_ev)?;
    let (dp1, dp2) = (p1.final_value - p1.before, p2.final_value - p2.before);
    let mut r = RunReport::new(ScenarioName::TwoConverterSharing, cfg);
    r.push("delta_p1_pu", dp1 / p_b, "power change of converter 1 [p.u.]");
    r.push("delta_p2_pu", dp2 / p_b, "power change of converter 2 [p.u.]");
    r.push("share_ratio", dp1 / dp2, "power change ratio 1/2");
    r.push("share_ratio_expected", (1.0 + s) / (1.0 - s), "inverse droop gain ratio");
    r.push("sync_error_rel", (w1.final_value - w2.final_value).abs() / omega0, "|omega_1 - omega_2| / omega0");
    r.push("delta_omega_rel", (w1.final_value - omega0) / omega0, "steady frequency deviation / omega0");
    r.push("settling_time_s", p1.t_settle.max(p2.t_settle) - t_ev, "power settling time, 2% band [s]");
    Ok(ScenarioRun { report: r, log: Some(log) })
}

/// Matching reduction: no power synchronization and a proportional-only dc
/// source, so the dc voltage can only reach its reference through the
/// frequency locking onto the grid.
fn matching_only(cfg: &Config) -> Result<ScenarioRun> {
    let mut cfg = cfg.clone();
    cfg.hac.kappa_ac_bar_pu = 0.0;
    cfg.hac.kappa_ac = Some(0.0);
    cfg.hac.kappa_ac1 = Some(0.0);
    cfg.dc_source.kappa_i = 0.0;
    let cfg = &cfg;
    let omega0 = cfg.omega0();
    let t_ev = cfg.sim.event_time_s;
    let mut sys = LcSystem { unit: cfg.unit(0.0)?, pcc: Pcc::Grid { omega_g: omega0 } };
    let v_dc_new = (1.0 + cfg.network.v_dc_r_step) * sys.unit.plant.v_dc_r;
    feedforward_mu(sys.unit.v_ref, v_dc_new)?;
    let x0 = sys.flat_start();
    let (mut log, x) = run_system(&mut sys, &x0, &[Event::new(t_ev, Action::SetDcVoltageRef(v_dc_new))], cfg)?;
    finish_log(&mut log, cfg)?;

    let v = settle(&log, "v_dc", t_ev)?;
    let w = settle(&log, "omega", t_ev)?;
    let mut r = RunReport::new(ScenarioName::MatchingOnly, cfg);
    r.push("v_dc_ref_v", v_dc_new, "dc voltage reference after the step [V]");
    r.push("v_dc_error_rel", (v.final_value - v_dc_new) / v_dc_new, "final dc voltage error / v_dc_r");
    r.push("omega_error_rel", (w.final_value - omega0) / omega0, "steady frequency error / omega0");
    r.push("settling_time_s", v.t_settle - t_ev, "dc voltage settling time, 2% band [s]");
    r.push("stability_margin", -spectral_abscissa(&sys, &x)?, "decay rate of the slowest mode [1/s]");
    Ok(ScenarioRun { report: r, log: Some(log) })
}

/// Pure-L loop with the angle-based law, used by the analysis scenarios.
pub struct LModel {
    pub system: LFilterSystem,
    pub rho_critical: f64,
}

/// Builds the merged-branch L loop at `p_r_pu`. With `certify`, κ_dc is
/// lowered (never raised) so that ρ ≥ `rho_ratio` ρ_critical.
pub fn l_model(cfg: &Config, certify: bool) -> Result<LModel> {
    let mut cfg = cfg.clone();
    if !matches!(cfg.hac.variant, VariantName::Exact | VariantName::Energy) {
        cfg.hac.variant = VariantName::Exact;
    }
    let plant = cfg.plant_params().merged_series();
    let mu = feedforward_mu(cfg.v_ref(), plant.v_dc_r)?;
    let hac = cfg.hac_gains(cfg.network.p_r_pu * cfg.base.p_b_va)?;
    let mut gains = LoopGains { dc: cfg.dc_gains(), hac, mu };
    let eq = equilibria_closed_form(&plant, &gains)?[0];
    let rho_crit = rho_critical(&plant, &eq, mu, gains.dc.kappa_p)?;
    if certify {
        let target = gains.hac.kappa_ac / (cfg.lyapunov.rho_ratio * rho_crit);
        gains.hac.kappa_dc = gains.hac.kappa_dc.min(target);
    }
    let mut system = LFilterSystem::new(plant, gains);
    system.alpha = cfg.alpha();
    if gains.hac.kappa_dc > 0.0 && gains.dc.kappa_i > 0.0 {
        system.lyapunov = Some((eq, LyapCoeffs::new(&plant, &gains)?));
    }
    Ok(LModel { system, rho_critical: rho_crit })
}

/// Summary of one perturbed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRun {
    pub v_initial: f64,
    pub v_final: f64,
    /// Fraction of logged steps over which V did not increase.
    pub monotone_fraction: f64,
}

/// Seeded perturbations of the equilibrium of the certified L loop.
pub fn perturbed_starts(cfg: &Config, model: &LModel) -> Result<Vec<SysState>> {
    let (eq, _) = model.system.lyapunov.ok_or(Error::DegenerateParams("energy function unavailable"))?;
    let l = &cfg.lyapunov;
    let i_base = cfg.per_unit()?.i_base();
    let v_r = model.system.plant.v_dc_r;
    let mut rng = ChaCha8Rng::seed_from_u64(l.seed);
    let mut u = |a: f64| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
    Ok((0..l.samples)
        .map(|_| {
            let mut x = eq.state();
            x.delta += u(l.delta_spread_rad);
            x.v_dc += u(l.v_dc_spread * v_r);
            x.i_d += u(l.current_spread_pu * i_base);
            x.i_q += u(l.current_spread_pu * i_base);
            x
        })
        .collect())
}

pub fn decay_run(model: &LModel, x0: &SysState, opts: &SimOptions) -> Result<(DecayRun, TrajectoryLog)> {
    let mut sys = model.system.clone();
    let res = simulate(&mut sys, &x0.to_array(), &[], opts)?;
    let v = column(&res.log, "V")?;
    let rises = v.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12)).count();
    let run = DecayRun {
        v_initial: v[0],
        v_final: *v.last().expect("log has samples"),
        monotone_fraction: 1.0 - rises as f64 / (v.len() - 1).max(1) as f64,
    };
    Ok((run, res.log))
}

fn lyapunov_decay(cfg: &Config, out: &OutputOptions) -> Result<ScenarioRun> {
    let model = l_model(cfg, true)?;
    let report = stability_report(&model.system.plant, &model.system.lyapunov.expect("certified model").0, &model.system.gains)?;
    let starts = perturbed_starts(cfg, &model)?;
    let opts = SimOptions { t_stop: cfg.lyapunov.t_stop_s, mode: CtrlMode::Continuous, ..cfg.sim_options() };
    let mut runs = Vec::with_capacity(starts.len());
    let mut first_log = None;
    for x0 in &starts {
        let (run, log) = decay_run(&model, x0, &opts)?;
        runs.push(run);
        first_log.get_or_insert(log);
    }
    let ratios: Vec<f64> = runs.iter().map(|r| r.v_final / r.v_initial).collect();
    let converged = ratios.iter().filter(|&&q| q < 1e-6).count();
    let mut r = RunReport::new(ScenarioName::LyapunovDecay, cfg);
    r.push("kappa_dc", model.system.gains.hac.kappa_dc, "kappa_dc used [rad/s per V]");
    r.push("rho", report.rho, "kappa_ac / kappa_dc");
    r.push("rho_critical", report.rho_critical, "certificate bound on rho");
    r.push("stability_margin", report.margin, "rho - rho_critical");
    r.push("samples", runs.len() as f64, "perturbed starts");
    r.push("converged", converged as f64, "starts with final V < 1e-6 initial V");
    r.push("max_v_ratio", ratios.iter().copied().fold(0.0, f64::max), "largest final/initial V");
    r.push(
        "min_monotone_fraction",
        runs.iter().map(|r| r.monotone_fraction).fold(1.0, f64::min),
        "smallest fraction of non-increasing V steps",
    );
    let mut log = first_log.ok_or(Error::EmptyLog)?;
    finish_log(&mut log, cfg)?;
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("decay_runs.csv");
        let mut s = String::from("sample,v_initial,v_final,monotone_fraction\n");
        for (i, d) in runs.iter().enumerate() {
            s.push_str(&format!("{i},{:.8e},{:.8e},{:.8e}\n", d.v_initial, d.v_final, d.monotone_fraction));
        }
        std::fs::write(&path, s)?;
        r.files.push(path);
        let csv = dir.join("trajectory.csv");
        log.save_csv(&csv)?;
        r.files.push(csv);
        if out.plots {
            r.files.extend(emit_plots(&log, &["omega_pu", "p_pu", "v_dc_pu", "V"], dir)?);
        }
        write_report(&mut r, dir)?;
    }
    Ok(ScenarioRun { report: r, log: Some(log) })
}

fn equilibrium_report(cfg: &Config, out: &OutputOptions) -> Result<ScenarioRun> {
    let model = l_model(cfg, false)?;
    let (g, lg) = (&model.system.plant, &model.system.gains);
    let [eq1, eq2] = equilibria_closed_form(g, lg)?;
    let newton = newton_equilibrium(g, lg, &default_guess(g, lg))?;
    let a = eq1.state().to_array();
    let b = newton.state().to_array();
    let scales = [1.0, eq1.zeta.abs().max(1.0), g.v_dc_r, 1.0, 1.0];
    let i_mag = eq1.current_sq().sqrt().max(1.0);
    let rel = a
        .iter()
        .zip(&b)
        .zip(scales)
        .enumerate()
        .map(|(k, ((x, y), s))| (x - y).abs() / if k >= 3 { i_mag } else { s.max(x.abs()) })
        .fold(0.0, f64::max);
    let residual = steady_state_relative_residuals(&eq1.state(), g, lg).into_iter().fold(0.0, f64::max);
    let st = stability_report(g, &eq1, lg)?;
    let ev = jacobian_eigenvalues(g, lg, &eq1)?;
    let mut r = RunReport::new(ScenarioName::EquilibriumReport, cfg);
    for (k, v) in ["delta", "zeta", "v_dc", "i_d", "i_q"].iter().zip(a) {
        r.push(&format!("eq.{k}"), v, &format!("equilibrium {k}"));
    }
    r.push("eq2.delta", eq2.delta, "second-branch equilibrium angle");
    r.push("newton_max_rel_diff", rel, "closed form vs Newton, max relative difference");
    r.push("max_rel_residual", residual, "largest relative steady-state residual");
    r.push("rho", st.rho, "kappa_ac / kappa_dc");
    r.push("rho_critical", st.rho_critical, "certificate bound on rho");
    r.push("stability_margin", st.margin, "rho - rho_critical");
    r.push("certificate_satisfied", if st.satisfied { 1.0 } else { 0.0 }, "rho > rho_critical");
    r.push("spectral_abscissa", ev[0].re, "largest eigenvalue real part [1/s]");
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("eigenvalues.csv");
        let mut s = String::from("re,im\n");
        for c in &ev {
            s.push_str(&format!("{:.8e},{:.8e}\n", c.re, c.im));
        }
        std::fs::write(&path, s)?;
        r.files.push(path);
        write_report(&mut r, dir)?;
    }
    Ok(ScenarioRun { report: r, log: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
        }
        assert!("islanded".parse::<ScenarioName>().unwrap_err().is_config());
    }

    #[test]
    fn steady_state_of_a_first_order_step() {
        let t: Vec<f64> = (0..=1000).map(|k| k as f64 * 1e-3).collect();
        let y: Vec<f64> = t.iter().map(|&t| if t < 0.1 { 1.0 } else { 3.0 - 2.0 * (-(t - 0.1) / 0.05).exp() }).collect();
        let s = steady_state(&t, &y, 0.1).unwrap();
        assert_eq!(s.before, 1.0);
        assert!((s.final_value - 3.0).abs() < 1e-6);
        // 2% of a step of 2 is reached after ln(50) time constants
        assert!((s.t_settle - 0.1 - 0.05 * 50f64.ln()).abs() < 2e-3, "{}", s.t_settle);
    }

    #[test]
    fn steady_state_of_a_constant() {
        let t = [0.0, 0.1, 0.2, 0.3];
        let s = steady_state(&t, &[5.0; 4], 0.1).unwrap();
        assert_eq!(s.final_value, 5.0);
        assert_eq!(s.t_settle, 0.1);
        assert!(matches!(steady_state(&[0.0], &[1.0], 0.0), Err(Error::EmptyLog)));
    }

    #[test]
    fn report_key_values_list_every_metric() {
        let mut r = RunReport::new(ScenarioName::GridFreqStep, &Config::default());
        r.push("delta_p_pu", -1.0, "x");
        r.files.push("a/b.csv".into());
        let kv = r.key_values();
        assert_eq!(kv, "scenario=grid_freq_step\ndelta_p_pu=-1\nfile.0=a/b.csv\n");
        assert_eq!(r.metric("delta_p_pu"), Some(-1.0));
        assert!(r.to_string().contains("grid_freq_step"));
    }

    #[test]
    fn perturbations_are_seeded_and_bounded() {
        let cfg = Config::default();
        let m = l_model(&cfg, true).unwrap();
        let a = perturbed_starts(&cfg, &m).unwrap();
        assert_eq!(a, perturbed_starts(&cfg, &m).unwrap());
        assert_eq!(a.len(), 100);
        let eq = m.system.lyapunov.unwrap().0;
        assert!(a.iter().all(|x| (x.delta - eq.delta).abs() <= 0.3 && (x.zeta - eq.zeta) == 0.0));
        assert!(m.system.gains.hac.kappa_ac / m.system.gains.hac.kappa_dc >= 2.0 * m.rho_critical * (1.0 - 1e-12));
    }
}
