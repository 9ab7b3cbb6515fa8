use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join(format!("{}.txt", args[0]));
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_epistrata"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_owned).collect()).collect()
}

const SIM: &str = "regions = 2\nages = 2\nweeks = 24\n";

#[test]
fn simulate_is_reproducible_per_seed() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&run(d.path(), &["simulate", "--seed", "5", "--out-dir", out], SIM)), 0);
    }
    assert_eq!(code(&run(d.path(), &["simulate", "--seed", "6", "--out-dir", "c"], SIM)), 0);
    let read = |o: &str| fs::read_to_string(d.path().join(o).join("panel.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let resolved = fs::read_to_string(d.path().join("a/config.resolved.txt")).unwrap();
    assert!(resolved.contains("seed = 5"));
}

#[test]
fn configuration_problems_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["simulate"], "variant = sir\n")), 2);
    assert_eq!(code(&run(d.path(), &["simulate"], "weekz = 3\n")), 2);
    assert_eq!(code(&run(d.path(), &["simulate"], "regions = 2\nages = 2\npopulation = 1, 2, 3\n")), 2);
    // nothing half-written is left behind
    let out = d.path().join("out");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn reduced_without_known_contact_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["simulate", "--out-dir", "sim"], SIM)), 0);
    let o = run(d.path(), &["fit", "--out-dir", "f"], "panel = sim\nvariant = reduced\n");
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fit_forecast_score_and_diagnose() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &["simulate", "--out-dir", "sim"], SIM)), 0);
    let fit = "panel = sim\ntrain_weeks = 20\nchains = 2\nwarmup = 100\nsamples = 100\n\
               known_contact = sim/contact.csv\nrhat_threshold = 100\n";
    for (name, variant) in [("full", "full"), ("reduced", "reduced")] {
        let o = run(p, &["fit", "--out-dir", name], &format!("{fit}variant = {variant}\n"));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(p.join(name).join("draws").is_dir());
    }

    // truth must reach past the horizon
    let o = run(p, &["forecast", "--out-dir", "x"], "fit = full\nhorizon = 5\nscore = true\n");
    assert_eq!(code(&o), 2);

    for name in ["full", "reduced"] {
        let cfg = format!("fit = {name}\nhorizon = 3\nscore = true\ndataset = d1\nmax_draws = 60\n");
        let o = run(p, &["forecast", "--out-dir", &format!("fc_{name}")], &cfg);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let scores = csv_rows(&p.join("fc_full/scores.csv"));
    assert_eq!(scores.len(), 3);
    assert!(scores.iter().all(|r| r[4].parse::<f64>().unwrap().is_finite()));
    // 3 horizons x 2 x 2 cells
    assert_eq!(csv_rows(&p.join("fc_full/forecast_summary.csv")).len(), 12);

    let o = run(p, &["score", "--out-dir", "sc"], "scores = fc_full/scores.csv, fc_reduced/scores.csv\n");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = csv_rows(&p.join("sc/score_table.csv"));
    assert_eq!(table.len(), 3);
    assert_eq!((table[0][0].as_str(), table[0][1].as_str()), ("full", "reduced"));

    // a model compared with itself differs by exactly zero
    let o = run(p, &["score", "--out-dir", "self"], "scores = fc_full/scores.csv\nmodel_a = full\nmodel_b = full\n");
    assert_eq!(code(&o), 0);
    for r in csv_rows(&p.join("self/score_table.csv")) {
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
    }

    // diagnose reproduces the fit's summary
    let o = run(p, &["diagnose", "--out-dir", "dg"], "draws = full\nrhat_threshold = 100\n");
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read_to_string(p.join("dg/summary.csv")).unwrap(),
        fs::read_to_string(p.join("full/summary.csv")).unwrap()
    );
    let o = run(p, &["diagnose", "--out-dir", "dg2"], "draws = full\nrhat_threshold = 1.0\n");
    assert_eq!(code(&o), 3);
}

#[test]
fn prior_check_matches_contact_hyperparameters() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "regions = 2\nages = 3\ndraws = 20000\npredictive_draws = 20\nweeks = 4\n";
    let o = run(d.path(), &["prior-check", "--out-dir", "pc"], cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&d.path().join("pc/contact_prior.csv"));
    assert_eq!(rows.len(), 9);
    let hyper = epistrata::ContactPriorHyper::assortative(3);
    let want = hyper.expected_diagonal(3);
    for r in rows.iter().filter(|r| r[0] == r[1]) {
        let mean: f64 = r[2].parse().unwrap();
        assert!((mean - want).abs() < 0.01, "diagonal mean {mean} vs {want}");
    }
    let summary = csv_rows(&d.path().join("pc/prior_summary.csv"));
    assert!(summary.iter().all(|r| !r[0].starts_with("z[")));
}
