use std::collections::HashMap;
use std::path::Path;

use hac_core::config::CtrlModeName;
use hac_core::scenario::steady_state;
use hac_core::{run_scenario, Config, OutputOptions, ScenarioName};

fn read_kv(path: &Path) -> HashMap<String, String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i]).collect()
}

#[test]
fn report_metrics_follow_from_written_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::default();
    let out = OutputOptions { dir: Some(dir.path().to_path_buf()), plots: true };
    run_scenario(ScenarioName::IslandedLoadStep, &cfg, &out).unwrap();

    let kv = read_kv(&dir.path().join("report.kv"));
    assert_eq!(kv["scenario"], "islanded_load_step");
    let (header, rows) = read_csv(&dir.path().join("trajectory.csv"));
    assert_eq!(header[0], "t");
    let t = col(&header, &rows, "t");
    let t_ev = cfg.sim.event_time_s;
    let omega0 = cfg.omega0();

    // the csv keeps 9 significant digits
    let w = steady_state(&t, &col(&header, &rows, "omega"), t_ev).unwrap();
    let reported: f64 = kv["delta_omega_rel"].parse().unwrap();
    assert!(((w.final_value - omega0) / omega0 - reported).abs() < 1e-7, "{reported}");

    let p = steady_state(&t, &col(&header, &rows, "p_pu"), t_ev).unwrap();
    let reported: f64 = kv["delta_p_pu"].parse().unwrap();
    assert!((p.final_value - p.before - reported).abs() < 1e-6, "{reported}");

    let settle: f64 = kv["settling_time_s"].parse().unwrap();
    assert!((w.t_settle - t_ev - settle).abs() < 1e-6);

    for f in ["omega_pu.svg", "p_pu.svg", "v_dc_pu.svg", "config.toml", "report.txt"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let written = hac_core::parse_config(&std::fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(written.resolved(), cfg.resolved());
}

#[test]
fn continuous_and_discrete_control_agree() {
    let mut cfg = Config::default();
    cfg.sim.ctrl_mode = CtrlModeName::Discrete;
    let d = run_scenario(ScenarioName::IslandedLoadStep, &cfg, &OutputOptions::default()).unwrap();
    cfg.sim.ctrl_mode = CtrlModeName::Continuous;
    let c = run_scenario(ScenarioName::IslandedLoadStep, &cfg, &OutputOptions::default()).unwrap();
    let (ld, lc) = (d.log.unwrap(), c.log.unwrap());
    assert_eq!(ld.len(), lc.len());
    for ch in ["omega", "p", "v_dc"] {
        let (a, b) = (ld.column(ch).unwrap(), lc.column(ch).unwrap());
        let rms = |v: &mut dyn Iterator<Item = f64>| {
            let (s, n) = v.fold((0.0, 0), |(s, n), x| (s + x * x, n + 1));
            (s / n as f64).sqrt()
        };
        let diff = rms(&mut a.iter().zip(&b).map(|(x, y)| x - y));
        let scale = rms(&mut b.iter().copied());
        assert!(diff / scale < 5e-3, "{ch}: relative RMS difference {}", diff / scale);
    }
}

#[test]
fn every_scenario_runs_from_defaults() {
    let mut cfg = Config::default();
    cfg.sim.t_stop_s = 0.3;
    cfg.sim.settle_s = 0.2;
    cfg.lyapunov.samples = 3;
    cfg.lyapunov.t_stop_s = 0.3;
    for name in ScenarioName::ALL {
        let dir = tempfile::tempdir().unwrap();
        let run = run_scenario(name, &cfg, &OutputOptions { dir: Some(dir.path().to_path_buf()), plots: false })
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!run.report.metrics.is_empty(), "{name}");
        assert!(run.report.metrics.iter().all(|m| m.value.is_finite()), "{name}");
        assert!(dir.path().join("report.kv").is_file(), "{name}");
        let svgs = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
            .count();
        assert_eq!(svgs, 0, "{name}");
    }
}
