//! Fixed-step RK4 integration with zero-order-hold controllers, timed
//! events and decimated logging.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frames::PerUnitBase;

/// Classical fourth-order Runge-Kutta step of `dx/dt = f(t, x)`.
pub fn rk4_step<F>(mut f: F, x: &[f64], t: f64, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut ws = Rk4::new(x.len());
    let mut out = x.to_vec();
    ws.step(&mut f, &mut out, t, h)?;
    Ok(out)
}

/// Scratch buffers for repeated RK4 steps.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n] }
    }

    /// Advances `x` in place from `t` to `t + h`.
    pub fn step<F>(&mut self, f: &mut F, x: &mut [f64], t: f64, h: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        if !(h > 0.0) {
            return Err(Error::config(format!("step size must be positive, got {h}")));
        }
        let n = x.len();
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;

        f(t, x, k1)?;
        check_finite(k1, t)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, tmp, k2)?;
        check_finite(k2, t)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, tmp, k3)?;
        check_finite(k3, t)?;
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        f(t + h, tmp, k4)?;
        check_finite(k4, t)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

fn check_finite(dx: &[f64], t: f64) -> Result<()> {
    if dx.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteDerivative { t })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Load resistance in ohm.
    SetLoad(f64),
    /// Active power reference in W.
    SetPowerRef(f64),
    /// Grid frequency in rad/s.
    SetGridFrequency(f64),
    /// dc voltage reference in V.
    SetDcVoltageRef(f64),
    SetGain { path: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub action: Action,
}

impl Event {
    pub fn new(t: f64, action: Action) -> Self {
        Self { t, action }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrlMode {
    /// Controller sampled at the control rate, outputs held in between.
    Discrete,
    /// Controller law evaluated inside every RK stage.
    Continuous,
}

/// A plant with its controller, flattened into one state vector.
///
/// Discrete controller states live in the state vector too; their
/// derivative is zero in discrete mode and they change only in
/// [`System::sample`].
pub trait System {
    fn dim(&self) -> usize;

    /// Number of held controller outputs in discrete mode.
    fn control_dim(&self) -> usize {
        0
    }

    /// Logged channel names, excluding time.
    fn columns(&self) -> Vec<String>;

    /// Controller tick: writes the held outputs to `u` and advances the
    /// discrete controller states over one `period`.
    fn sample(&mut self, _t: f64, _x: &mut [f64], _period: f64, _u: &mut [f64]) -> Result<()> {
        Ok(())
    }

    /// State derivative. `held` is `None` in continuous mode.
    fn rhs(&self, t: f64, x: &[f64], held: Option<&[f64]>, dx: &mut [f64]) -> Result<()>;

    /// One log row matching [`System::columns`].
    fn observe(&self, t: f64, x: &[f64], held: Option<&[f64]>) -> Vec<f64>;

    fn apply(&mut self, action: &Action, x: &mut [f64]) -> Result<()>;

    fn check_state(&self, _t: f64, _x: &[f64]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub t_start: f64,
    pub t_stop: f64,
    pub h: f64,
    /// Controller rate in Hz.
    pub ctrl_rate: f64,
    pub decimation: usize,
    pub mode: CtrlMode,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { t_start: 0.0, t_stop: 2.0, h: 20e-6, ctrl_rate: 5e3, decimation: 10, mode: CtrlMode::Discrete }
    }
}

impl SimOptions {
    /// Returns (plant steps, plant steps per controller period).
    pub fn validate(&self) -> Result<(usize, usize)> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config(format!("step size must be positive, got {}", self.h)));
        }
        let span = self.t_stop - self.t_start;
        if !(span > 0.0) {
            return Err(Error::config("t_stop must be greater than t_start"));
        }
        if self.decimation == 0 {
            return Err(Error::config("decimation must be at least 1"));
        }
        let n_steps = (span / self.h - 1e-9).ceil() as usize;
        if !(self.ctrl_rate > 0.0) {
            return Err(Error::config("controller rate must be positive"));
        }
        let ratio = 1.0 / (self.ctrl_rate * self.h);
        let n_sub = ratio.round();
        if n_sub < 1.0 || (ratio - n_sub).abs() > 1e-6 * ratio {
            return Err(Error::config(format!(
                "step {} s does not divide the controller period {} s",
                self.h,
                1.0 / self.ctrl_rate
            )));
        }
        Ok((n_steps, n_sub as usize))
    }
}

/// Uniformly sampled trajectory; column 0 is time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryLog {
    pub fn new(channels: Vec<String>) -> Self {
        let mut columns = vec!["t".to_string()];
        columns.extend(channels);
        Self { columns, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index_of(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        let i = self.index_of(name)?;
        self.rows.last().map(|r| r[i])
    }

    /// Appends per-unit copies of the frequency, power and dc voltage
    /// channels. `v_dc_base` normalizes the dc voltage.
    pub fn add_per_unit(&mut self, base: &PerUnitBase, v_dc_base: f64) {
        let scales: Vec<(usize, String, f64)> = self
            .columns
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let (stem, suffix) = match c.rsplit_once('_') {
                    Some((s, n)) if n.chars().all(|ch| ch.is_ascii_digit()) => (s, format!("_{n}")),
                    _ => (c.as_str(), String::new()),
                };
                let scale = match stem {
                    "omega" => base.omega_b(),
                    "p" | "q" => base.p_b,
                    "v_dc" => v_dc_base,
                    _ => return None,
                };
                Some((i, format!("{stem}_pu{suffix}"), scale))
            })
            .collect();
        for (_, name, _) in &scales {
            self.columns.push(name.clone());
        }
        for row in &mut self.rows {
            for (i, _, scale) in &scales {
                let v = row[*i] / scale;
                row.push(v);
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.8e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub log: TrajectoryLog,
    pub x: Vec<f64>,
    pub held: Vec<f64>,
}

/// Runs `system` from `x0` over `opts`, applying `events` at the step
/// boundary nearest to their time stamp. Events sharing a boundary with a
/// controller tick are applied first.
pub fn simulate<S: System>(system: &mut S, x0: &[f64], events: &[Event], opts: &SimOptions) -> Result<SimResult> {
    let (n_steps, n_sub) = opts.validate()?;
    if x0.len() != system.dim() {
        return Err(Error::config(format!("initial state has {} entries, system needs {}", x0.len(), system.dim())));
    }
    let mut scheduled: Vec<(usize, &Event)> = Vec::with_capacity(events.len());
    for e in events {
        if !(e.t >= opts.t_start) || !e.t.is_finite() {
            return Err(Error::config(format!("event time {} lies before the start of the run", e.t)));
        }
        let k = ((e.t - opts.t_start) / opts.h).round() as usize;
        if k <= n_steps {
            scheduled.push((k, e));
        }
    }
    // stable: simultaneous events keep their given order
    scheduled.sort_by_key(|(k, _)| *k);

    let mut x = x0.to_vec();
    let mut held = vec![0.0; system.control_dim()];
    let mut log = TrajectoryLog::new(system.columns());
    let mut ws = Rk4::new(x.len());
    let period = n_sub as f64 * opts.h;
    let mut next_event = 0;

    system.check_state(opts.t_start, &x)?;
    for k in 0..=n_steps {
        let t = opts.t_start + k as f64 * opts.h;
        while next_event < scheduled.len() && scheduled[next_event].0 == k {
            system.apply(&scheduled[next_event].1.action, &mut x)?;
            next_event += 1;
        }
        let discrete = opts.mode == CtrlMode::Discrete;
        if discrete && k % n_sub == 0 {
            system.sample(t, &mut x, period, &mut held)?;
        }
        let held_ref = if discrete { Some(held.as_slice()) } else { None };
        if k % opts.decimation == 0 {
            let mut row = Vec::with_capacity(log.columns.len());
            row.push(t);
            row.extend(system.observe(t, &x, held_ref));
            log.rows.push(row);
        }
        if k == n_steps {
            break;
        }
        let sys: &S = system;
        let mut f = |t: f64, x: &[f64], dx: &mut [f64]| sys.rhs(t, x, held_ref, dx);
        ws.step(&mut f, &mut x, t, opts.h)?;
        system.check_state(t + opts.h, &x)?;
    }
    Ok(SimResult { log, x, held })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_single_step() {
        let x = rk4_step(|_, x, dx| { dx[0] = -x[0]; Ok(()) }, &[1.0], 0.0, 0.1).unwrap();
        assert!((x[0] - 0.904_837_500_000_000_1).abs() < 1e-15);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let x0 = [1.5, -2.0, 3.25];
        let x = rk4_step(|_, _, dx| { dx.fill(0.0); Ok(()) }, &x0, 0.3, 0.01).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn non_finite_derivative_is_reported() {
        let r = rk4_step(|_, _, dx| { dx[0] = f64::NAN; Ok(()) }, &[1.0], 0.0, 0.1);
        assert!(matches!(r, Err(Error::NonFiniteDerivative { .. })));
    }

    fn exp_error(h: f64) -> f64 {
        let n = (1.0 / h).round() as usize;
        let mut ws = Rk4::new(1);
        let mut x = [1.0];
        let mut f = |_: f64, x: &[f64], dx: &mut [f64]| { dx[0] = -x[0]; Ok(()) };
        for k in 0..n {
            ws.step(&mut f, &mut x, k as f64 * h, h).unwrap();
        }
        (x[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn fourth_order_convergence() {
        let ratio = exp_error(0.1) / exp_error(0.05);
        assert!(ratio.log2() > 3.9, "{ratio}");
    }

    /// dx/dt = u with u = k (r - x) sampled at the control rate.
    struct Tracker {
        r: f64,
        ticks: usize,
        applied: Vec<(f64, f64)>,
    }

    impl System for Tracker {
        fn dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn columns(&self) -> Vec<String> {
            vec!["x".into(), "u".into()]
        }
        fn sample(&mut self, _t: f64, x: &mut [f64], _p: f64, u: &mut [f64]) -> Result<()> {
            self.ticks += 1;
            u[0] = 50.0 * (self.r - x[0]);
            Ok(())
        }
        fn rhs(&self, _t: f64, x: &[f64], held: Option<&[f64]>, dx: &mut [f64]) -> Result<()> {
            dx[0] = match held {
                Some(u) => u[0],
                None => 50.0 * (self.r - x[0]),
            };
            Ok(())
        }
        fn observe(&self, _t: f64, x: &[f64], held: Option<&[f64]>) -> Vec<f64> {
            vec![x[0], held.map_or(f64::NAN, |u| u[0])]
        }
        fn apply(&mut self, a: &Action, x: &mut [f64]) -> Result<()> {
            if let Action::SetPowerRef(r) = a {
                self.applied.push((*r, x[0]));
                self.r = *r;
            }
            Ok(())
        }
    }

    fn tracker() -> Tracker {
        Tracker { r: 0.0, ticks: 0, applied: Vec::new() }
    }

    fn opts(mode: CtrlMode) -> SimOptions {
        SimOptions { t_start: 0.0, t_stop: 0.2, h: 1e-4, ctrl_rate: 1e3, decimation: 10, mode }
    }

    #[test]
    fn equilibrium_hold() {
        let mut s = tracker();
        let res = simulate(&mut s, &[0.0], &[], &opts(CtrlMode::Discrete)).unwrap();
        assert!(res.log.column("x").unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(res.log.len(), 201);
        assert_eq!(s.ticks, 201);
    }

    #[test]
    fn zero_order_hold_between_ticks() {
        let mut s = tracker();
        let ev = [Event::new(0.0, Action::SetPowerRef(1.0))];
        let o = SimOptions { decimation: 1, ..opts(CtrlMode::Discrete) };
        let res = simulate(&mut s, &[0.0], &ev, &o).unwrap();
        let x = res.log.column("x").unwrap();
        // first period: constant slope 50
        for (k, v) in x.iter().take(11).enumerate() {
            assert!((v - 50.0 * k as f64 * 1e-4).abs() < 1e-12);
        }
        // discrete map x+ = x + 0.05 (1 - x): geometric decay 0.95^k
        assert!((x[20] - (1.0 - 0.95f64.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn events_snap_and_apply_once_before_step() {
        let mut s = tracker();
        let ev = [
            Event::new(0.1, Action::SetPowerRef(1.0)),
            Event::new(0.150_04, Action::SetPowerRef(2.0)),
            Event::new(5.0, Action::SetPowerRef(3.0)),
        ];
        let res = simulate(&mut s, &[0.0], &ev, &SimOptions { decimation: 1, ..opts(CtrlMode::Continuous) }).unwrap();
        assert_eq!(s.applied.len(), 2);
        let x = res.log.column("x").unwrap();
        // nothing moves before the first event boundary, and the step right after it does
        assert_eq!(x[1000], 0.0);
        assert!(x[1001] > 0.0);
        assert!((s.applied[1].1 - res.log.rows[1500][1]).abs() < 1e-15);
        assert!(simulate(&mut tracker(), &[0.0], &[Event::new(-1.0, Action::SetLoad(1.0))], &opts(CtrlMode::Discrete)).is_err());
    }

    #[test]
    fn continuous_mode_matches_exponential() {
        let mut s = tracker();
        s.r = 1.0;
        let res = simulate(&mut s, &[0.0], &[], &opts(CtrlMode::Continuous)).unwrap();
        let xf = res.x[0];
        assert!((xf - (1.0 - (-50.0f64 * 0.2).exp())).abs() < 1e-9);
        assert!(res.log.last("u").unwrap().is_nan());
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = tracker();
            let ev = [Event::new(0.05, Action::SetPowerRef(1.0))];
            simulate(&mut s, &[0.3], &ev, &opts(CtrlMode::Discrete)).unwrap().log
        };
        let (a, b) = (run(), run());
        let bits = |l: &TrajectoryLog| l.rows.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn options_validation() {
        let bad = SimOptions { h: 3e-4, ..opts(CtrlMode::Discrete) };
        assert!(bad.validate().is_err());
        assert!(SimOptions { t_stop: 0.0, ..opts(CtrlMode::Discrete) }.validate().is_err());
        assert_eq!(SimOptions::default().validate().unwrap(), (100_000, 10));
    }

    #[test]
    fn csv_format_and_per_unit() {
        let mut log = TrajectoryLog::new(vec!["omega".into(), "p_1".into(), "v_dc".into(), "delta".into()]);
        log.rows.push(vec![0.0, 376.991_118_430_775_2, 250e3, 979.77, f64::NAN]);
        log.add_per_unit(&PerUnitBase::new(500e3, 60.0, 326.59).unwrap(), 979.77);
        assert_eq!(log.columns[5..], ["omega_pu", "p_pu_1", "v_dc_pu"]);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,omega,p_1,v_dc,delta,omega_pu,p_pu_1,v_dc_pu");
        assert_eq!(
            lines.next().unwrap(),
            "0.00000000e0,3.76991118e2,2.50000000e5,9.79770000e2,NaN,1.00000000e0,5.00000000e-1,1.00000000e0"
        );
    }
}
