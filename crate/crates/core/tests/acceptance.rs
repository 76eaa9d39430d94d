//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and fails the process if any criterion fails.

use std::time::Instant;

use hac_core::analysis::{
    default_guess, equilibria_closed_form, lyapunov_derivative, lyapunov_value, newton_equilibrium,
    steady_state_relative_residuals, LoopGains,
};
use hac_core::closed_loop::{AbcLSystem, LFilterSystem};
use hac_core::config::Config;
use hac_core::control::{angle_per_power, DcPidGains, HacGains, HacVariant};
use hac_core::plant::{PlantParams, SysState};
use hac_core::scenario::{decay_run, l_model, perturbed_starts};
use hac_core::sim::{rk4_step, simulate, CtrlMode, SimOptions};
use hac_core::{run_scenario, OutputOptions, ScenarioName};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric(name: ScenarioName, key: &str) -> Result<f64, String> {
    let run = run_scenario(name, &Config::default(), &OutputOptions::default()).map_err(|e| format!("{name}: {e}"))?;
    run.report.metric(key).ok_or_else(|| format!("{name}: no metric {key}"))
}

fn metrics(name: ScenarioName, keys: &[&str]) -> Result<Vec<f64>, String> {
    let run = run_scenario(name, &Config::default(), &OutputOptions::default()).map_err(|e| format!("{name}: {e}"))?;
    keys.iter().map(|k| run.report.metric(k).ok_or_else(|| format!("{name}: no metric {k}"))).collect()
}

fn islanded_load_step() -> Outcome {
    let start = Instant::now();
    let m = metrics(ScenarioName::IslandedLoadStep, &["delta_omega_rel", "v_dc_error_rel"])?;
    let secs = start.elapsed().as_secs_f64();
    let (dw, dv) = (m[0], m[1]);
    check(
        (dw + 0.025).abs() <= 0.001 && dv.abs() < 1e-3 && secs < 10.0,
        format!("dw/w0 = {:.4}%, v_dc error = {dv:.2e}, runtime {secs:.2} s", 100.0 * dw),
    )
}

fn grid_freq_step() -> Outcome {
    let m = metrics(ScenarioName::GridFreqStep, &["delta_p_pu", "sync_error_rel"])?;
    check(
        (m[0] + 1.0).abs() <= 0.05 && m[1].abs() < 1e-6,
        format!("dp = {:.4} p.u., |w - w_g|/w0 = {:.1e}", m[0], m[1].abs()),
    )
}

fn grid_setpoint() -> Outcome {
    let m = metrics(ScenarioName::GridConnectedSetpoint, &["p_error_pu", "omega_error_rel"])?;
    check(
        m[0].abs() < 0.005 && m[1].abs() < 1e-4,
        format!("|p - p_r| = {:.1e} p.u., |w - w0|/w0 = {:.1e}", m[0].abs(), m[1].abs()),
    )
}

fn two_converter_sharing() -> Outcome {
    let m = metrics(ScenarioName::TwoConverterSharing, &["share_ratio", "sync_error_rel"])?;
    let expected = 1.02 / 0.98;
    check(
        (m[0] / expected - 1.0).abs() < 0.01 && m[1] < 1e-6,
        format!("ratio {:.5} (expected {expected:.5}), |w1 - w2|/w0 = {:.1e}", m[0], m[1]),
    )
}

fn random_loop(rng: &mut ChaCha8Rng) -> (PlantParams, LoopGains) {
    let omega0 = 2.0 * std::f64::consts::PI * rng.gen_range(50.0..=60.0);
    let v0 = rng.gen_range(200.0..=400.0);
    let l = rng.gen_range(0.2e-3..=2e-3);
    let g = PlantParams {
        c_dc: rng.gen_range(2e-3..=20e-3),
        g_dc: rng.gen_range(1e-3..=0.05),
        l,
        r: omega0 * l / rng.gen_range(2.0..=20.0),
        c_f: 0.0,
        l_g: 0.0,
        r_g: 0.0,
        omega0,
        v0,
        v_dc_r: v0 * rng.gen_range(2.5..=3.5),
    };
    let p_b = rng.gen_range(100e3..=1e6);
    let p_r = rng.gen_range(-0.8..=0.8) * p_b;
    let alpha = angle_per_power(g.l, omega0, v0, v0);
    let kappa_bar = rng.gen_range(5.0..=40.0) / p_b;
    let hac = HacGains {
        omega0,
        kappa_dc: rng.gen_range(0.01..=1.0),
        kappa_ac: 2.0 * kappa_bar / alpha,
        kappa_ac_bar: kappa_bar,
        kappa_ac1: 0.0,
        kappa_ac2: 0.0,
        delta_r: (alpha * p_r).clamp(-1.2, 1.2),
        p_r,
        v_dc_r: g.v_dc_r,
        variant: HacVariant::Exact,
    };
    let dc = DcPidGains { kappa_p: rng.gen_range(1.0..=30.0), kappa_i: rng.gen_range(50.0..=2000.0), kappa_d: 0.0 };
    (g, LoopGains { dc, hac, mu: v0 / g.v_dc_r })
}

fn equilibrium_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_diff, mut worst_res) = (0.0f64, 0.0f64);
    for k in 0..100 {
        let (g, lg) = random_loop(&mut rng);
        let eq = equilibria_closed_form(&g, &lg).map_err(|e| format!("draw {k}: {e}"))?[0];
        let n = newton_equilibrium(&g, &lg, &default_guess(&g, &lg)).map_err(|e| format!("draw {k}: {e}"))?;
        let i_scale = eq.current_sq().sqrt().max(1e-9);
        let diffs = [
            (n.delta - eq.delta).abs() / eq.delta.abs().max(1e-9),
            (n.zeta - eq.zeta).abs() / eq.zeta.abs().max(1e-9),
            (n.v_dc - eq.v_dc).abs() / eq.v_dc,
            (n.i_d - eq.i_d).abs() / i_scale,
            (n.i_q - eq.i_q).abs() / i_scale,
        ];
        worst_diff = diffs.iter().fold(worst_diff, |a, &b| a.max(b));
        for r in steady_state_relative_residuals(&eq.state(), &g, &lg) {
            worst_res = worst_res.max(r.abs());
        }
    }
    check(
        worst_diff <= 1e-9 && worst_res < 1e-9,
        format!("100 draws, max relative difference {worst_diff:.1e}, max residual {worst_res:.1e}"),
    )
}

fn lyapunov_certificate() -> Outcome {
    let cfg = Config::default();
    let model = l_model(&cfg, true).map_err(|e| e.to_string())?;
    let (eq, coeffs) = model.system.lyapunov.ok_or("no energy function")?;
    let rho = model.system.gains.hac.kappa_ac / model.system.gains.hac.kappa_dc;
    if !(rho > model.rho_critical) {
        return Err(format!("rho {rho:.3e} not above rho_critical {:.3e}", model.rho_critical));
    }
    let starts = perturbed_starts(&cfg, &model).map_err(|e| e.to_string())?;
    let opts = SimOptions { t_stop: cfg.lyapunov.t_stop_s, mode: CtrlMode::Continuous, ..SimOptions::default() };
    let (g, lg) = (model.system.plant, model.system.gains);
    let (mut converged, mut worst_ratio) = (0, 0.0f64);
    let (mut err2, mut ref2) = (0.0, 0.0);
    for (k, x0) in starts.iter().enumerate() {
        let (run, log) = decay_run(&model, x0, &opts).map_err(|e| e.to_string())?;
        let ratio = run.v_final / run.v_initial;
        worst_ratio = worst_ratio.max(ratio);
        if ratio < 1e-6 {
            converged += 1;
        }
        if k % 10 == 0 {
            // directional central difference of V along the vector field
            let idx: Vec<usize> = ["delta", "zeta", "v_dc", "i_d", "i_q"].iter().map(|c| log.index_of(c).unwrap()).collect();
            for row in log.rows.iter().take(2000) {
                let x = SysState::from_slice(&idx.iter().map(|&i| row[i]).collect::<Vec<_>>());
                let dx = hac_core::analysis::closed_loop_rhs(&x, &g, &lg).map_err(|e| e.to_string())?.to_array();
                let eps = 1e-7;
                let shift = |s: f64| {
                    let a = x.to_array();
                    SysState::from_slice(&std::array::from_fn::<f64, 5, _>(|i| a[i] + s * eps * dx[i]))
                };
                let fd = (lyapunov_value(&shift(1.0), &eq, &coeffs) - lyapunov_value(&shift(-1.0), &eq, &coeffs)) / (2.0 * eps);
                let an = lyapunov_derivative(&x, &eq, &coeffs, &g, &lg).map_err(|e| e.to_string())?;
                err2 += (an - fd) * (an - fd);
                ref2 += an * an;
            }
        }
    }
    let rel_rms = (err2 / ref2).sqrt();
    check(
        converged == starts.len() && rel_rms < 1e-4,
        format!(
            "{converged}/{} converged (worst V ratio {worst_ratio:.1e}), dV/dt relative RMS {rel_rms:.1e}",
            starts.len()
        ),
    )
}

fn frame_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let g = PlantParams::table1().merged_series();
    let base = l_model(&Config::default(), false).map_err(|e| e.to_string())?.system.gains;
    for _ in 0..3 {
        let mut lg = base;
        lg.hac.kappa_dc = rng.gen_range(0.05..=0.5);
        lg.hac.delta_r = rng.gen_range(-0.5..=0.5);
        let eq = equilibria_closed_form(&g, &lg).map_err(|e| e.to_string())?[0];
        let mut x0 = eq.state();
        x0.delta += rng.gen_range(-0.3..=0.3);
        x0.v_dc *= 1.0 + rng.gen_range(-0.05..=0.05);
        x0.i_d += rng.gen_range(-200.0..=200.0);
        x0.i_q += rng.gen_range(-200.0..=200.0);
        let opts = SimOptions { t_stop: 0.3, h: 10e-6, mode: CtrlMode::Continuous, ..SimOptions::default() };
        let dq = simulate(&mut LFilterSystem::new(g, lg), &x0.to_array(), &[], &opts).map_err(|e| e.to_string())?;
        let abc =
            simulate(&mut AbcLSystem::new(g, lg), &AbcLSystem::state_from_dq(&x0), &[], &opts).map_err(|e| e.to_string())?;
        for ch in ["delta", "zeta", "v_dc"] {
            let a = dq.log.column(ch).unwrap();
            let b = abc.log.column(ch).unwrap();
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            worst = worst.max(diff / scale);
        }
        let cur = |log: &hac_core::sim::TrajectoryLog| {
            let d = log.column("i_d").unwrap();
            let q = log.column("i_q").unwrap();
            d.into_iter().zip(q).collect::<Vec<_>>()
        };
        let (a, b) = (cur(&dq.log), cur(&abc.log));
        let scale = a.iter().fold(0.0f64, |m, (d, q)| m.max(d.hypot(*q)));
        let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x.0 - y.0).hypot(x.1 - y.1)));
        worst = worst.max(diff / scale);
    }
    check(worst < 1e-6, format!("3 random runs, max relative deviation {worst:.1e}"))
}

fn reductions() -> Outcome {
    let dv = metric(ScenarioName::MatchingOnly, "v_dc_error_rel")?;
    let dp = metric(ScenarioName::DroopOnly, "p_error_pu")?;
    check(
        dv.abs() < 1e-3 && dp.abs() < 0.005,
        format!("matching |v_dc - v_dc_r|/v_dc_r = {:.1e}, droop |p - p_r| = {:.1e} p.u.", dv.abs(), dp.abs()),
    )
}

fn rk4_order() -> Outcome {
    let lambda = -2.0;
    let err = |n: usize| -> Result<f64, String> {
        let h = 1.0 / n as f64;
        let mut x = vec![1.0];
        for k in 0..n {
            x = rk4_step(
                |_t, x: &[f64], dx: &mut [f64]| {
                    dx[0] = lambda * x[0];
                    Ok(())
                },
                &x,
                k as f64 * h,
                h,
            )
            .map_err(|e| e.to_string())?;
        }
        Ok((x[0] - lambda.exp()).abs())
    };
    let errs = [err(10)?, err(20)?, err(40)?, err(80)?];
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    check(min >= 3.9, format!("observed orders {orders:.3?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 islanded load step", islanded_load_step),
        ("2 grid frequency step", grid_freq_step),
        ("3 grid-connected set-point step", grid_setpoint),
        ("4 two-converter sharing", two_converter_sharing),
        ("5 equilibrium oracle equivalence", equilibrium_oracle),
        ("6 energy-function certificate", lyapunov_certificate),
        ("7 frame equivalence", frame_equivalence),
        ("8 matching and droop reductions", reductions),
        ("9 RK4 convergence order", rk4_order),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
