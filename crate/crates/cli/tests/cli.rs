use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use toml::{Table, Value};

use tsfl::estimate::BoundParams;
use tsfl::fedsim::Mode;
use tsfl::plan::{CostModel, Objective};
use tsfl::profiles::{DeviceProfile, SystemProfile};

/// Five identical Pi 3A class servers on Wi-Fi, two labels each.
const BASE: &str = r#"
seed = 3

[dataset]
source = "synthetic"
classes = 5
dim = 10
per_class = 40
margin = 2.0

[partition]
labels_per_server = 2

[system]
zeta = 0.2
u = 0.2

[[system.devices]]
a = 1.568e-5
b = 7e-5
beta = 0.01
count = 5

[run]
mode = "sync"
epochs = 20
batch = 500
schedule = { mode = "experimental", eta0 = 0.5, decay = 1.0 }
target_loss = 0.7
max_rounds = 1500
"#;

/// Three servers, one of them much slower.
const HETERO: &str = r#"
seed = 5

[dataset]
source = "synthetic"
classes = 4
dim = 6
per_class = 60
margin = 2.0
seed = 3

[partition]
labels_per_server = 3
seed = 3

[system]
zeta = 0.2
u = 0.2

[[system.devices]]
a = 1.568e-5
b = 1.4e-5
beta = 5.2e-4
count = 2

[[system.devices]]
a = 1.568e-4
b = 7e-5
beta = 0.01

[run]
mode = "sync"
epochs = 8
batch = 2
schedule = { mode = "experimental", eta0 = 0.2, decay = 0.9999 }
target_loss = 0.65
max_rounds = 20000
"#;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn file(&self, name: &str, content: &str) -> PathBuf {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).unwrap();
        }
        fs::write(&p, content).unwrap();
        p
    }

    fn run(&self, cmd: &str, config: &Path, out: &str, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tsfl"))
            .arg(cmd)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(self.path(out))
            .args(extra)
            .output()
            .unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(out: &Output) {
    assert_eq!(code(out), 0, "stderr: {}", stderr(out));
}

fn read_table(path: &Path) -> Table {
    toml::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn float(v: &Value) -> f64 {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .unwrap()
}

/// `(axis_value, time, rounds)` rows of a sweep summary.
fn summary(path: &Path) -> Vec<(usize, Option<f64>, Option<u64>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("axis_value,time_to_target_s,rounds_to_target"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 3, "{l}");
            (f[0].parse().unwrap(), f[1].parse().ok(), f[2].parse().ok())
        })
        .collect()
}

#[test]
fn simulate_writes_trace_and_metadata() {
    let env = Env::new();
    let cfg = env.file("sim.toml", BASE);
    let out = env.run("simulate", &cfg, "o", &[]);
    ok(&out);
    let trace = fs::read_to_string(env.path("o/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("round,wallclock_s,loss,accuracy,slowest_server"));
    assert!(lines.count() > 1);
    assert!(!trace.contains('\r'));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(env.path("o/trace.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_is_byte_reproducible() {
    let env = Env::new();
    let cfg = env.file("sim.toml", BASE);
    ok(&env.run("simulate", &cfg, "a", &[]));
    ok(&env.run("simulate", &cfg, "b", &[]));
    for name in ["trace.csv", "trace.csv.meta.json"] {
        let a = fs::read(env.path("a").join(name)).unwrap();
        let b = fs::read(env.path("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let env = Env::new();
    let cfg = env.file("sim.toml", BASE);
    ok(&env.run("simulate", &cfg, "a", &[]));
    ok(&env.run("simulate", &cfg, "b", &["--seed", "11"]));
    let meta = |d: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(env.path(d).join("trace.csv.meta.json")).unwrap())
            .unwrap()
    };
    assert_eq!(meta("b")["seed"], 11);
    assert_ne!(meta("a")["config_sha256"], meta("b")["config_sha256"]);
    assert_ne!(
        fs::read(env.path("a/trace.csv")).unwrap(),
        fs::read(env.path("b/trace.csv")).unwrap()
    );
}

#[test]
fn missing_seed_is_a_config_error() {
    let env = Env::new();
    let cfg = env.file("sim.toml", &BASE.replace("seed = 3", ""));
    let out = env.run("simulate", &cfg, "o", &[]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("seed"));
    ok(&env.run("simulate", &cfg, "o", &["--seed", "3"]));
}

#[test]
fn missing_dataset_file_exits_3() {
    let env = Env::new();
    let text = BASE.replace(
        "source = \"synthetic\"",
        "source = \"idx\"\nimages = \"nope-images.idx\"\nlabels = \"nope-labels.idx\"",
    );
    let text = text
        .lines()
        .filter(|l| !["classes", "dim ", "per_class", "margin"].iter().any(|k| l.starts_with(k)))
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = env.file("sim.toml", &text);
    let out = env.run("simulate", &cfg, "o", &[]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("nope-images.idx"));
}

#[test]
fn malformed_config_exits_3() {
    let env = Env::new();
    let cfg = env.file("sim.toml", &format!("{BASE}\nunknown_key = 1\n"));
    assert_eq!(code(&env.run("simulate", &cfg, "o", &[])), 3);
    let cfg = env.file("bad.toml", "seed = [");
    assert_eq!(code(&env.run("simulate", &cfg, "o", &[])), 3);
    let none = env.path("absent.toml");
    assert_eq!(code(&env.run("simulate", &none, "o", &[])), 3);
}

#[test]
fn divergence_exits_2_and_keeps_trace() {
    let env = Env::new();
    let cfg = env.file("sim.toml", &BASE.replace("eta0 = 0.5", "eta0 = 1e308"));
    let out = env.run("simulate", &cfg, "o", &[]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("divergence"));
    assert!(env.path("o/trace.csv").exists());
}

#[test]
fn includes_compose_and_the_includer_wins() {
    let env = Env::new();
    env.file("parts/base.toml", BASE);
    let cfg = env.file(
        "exp.toml",
        "include = [\"parts/base.toml\"]\nseed = 4\n[run]\nmax_rounds = 3\ntarget_loss = 0.01\n",
    );
    let out = env.run("simulate", &cfg, "o", &[]);
    ok(&out);
    let trace = fs::read_to_string(env.path("o/trace.csv")).unwrap();
    // Round 0 plus three rounds; the rest of [run] comes from the include.
    assert_eq!(trace.lines().count(), 5);
    let meta = fs::read_to_string(env.path("o/trace.csv.meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 4"));
}

#[test]
fn include_cycle_is_rejected() {
    let env = Env::new();
    env.file("a.toml", "include = [\"b.toml\"]\n");
    let cfg = env.file("b.toml", "include = [\"a.toml\"]\n");
    let out = env.run("simulate", &cfg, "o", &[]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("cycle"));
}

#[test]
fn estimate_fits_every_constant() {
    let env = Env::new();
    let cfg = env.file(
        "est.toml",
        &format!(
            "{HETERO}\n[estimate]\nprobes = [[2, 4], [8, 2], [20, 8], [4, 32]]\nf_a = 0.9\nf_b = 0.65\nf_star_slack = 0.1\n"
        ),
    );
    let out = env.run("estimate", &cfg, "o", &[]);
    ok(&out);
    let obs = fs::read_to_string(env.path("o/observations.csv")).unwrap();
    assert!(obs.starts_with("probe_id,e,n,R_a,R_b,cbar_server0,cbar_server1,cbar_server2\n"));
    assert_eq!(obs.lines().count(), 5);
    assert!(env.path("o/observations.csv.meta.json").exists());

    let text = fs::read_to_string(env.path("o/fitted.toml")).unwrap();
    assert!(text.starts_with("# config_sha256 = "));
    let fitted = read_table(&env.path("o/fitted.toml"));
    let fitted = fitted["fitted"].as_table().unwrap();
    let bound = fitted["bounds"].as_array().unwrap()[0].as_table().unwrap();
    for key in ["a", "b", "c", "d"] {
        assert!(float(&bound[key]) >= 0.0, "{key}");
    }
    assert!(float(&bound["a"]) + float(&bound["b"]) + float(&bound["c"]) > 0.0);
    // Probe round times come straight from the timing model, so the fit
    // recovers the configured overhead.
    let timing = fitted["timing"].as_table().unwrap();
    let overhead = float(&timing["zeta"]) + float(&timing["u"]);
    assert!((overhead - 0.4).abs() < 1e-6, "{overhead}");
    let beta = timing["beta"].as_array().unwrap();
    assert!((float(&beta[2]) - 0.01).abs() < 1e-6);
}

#[test]
fn estimate_with_one_probe_exits_4() {
    let env = Env::new();
    let cfg = env.file(
        "est.toml",
        &format!("{HETERO}\n[estimate]\nprobes = [[5, 16]]\nf_a = 0.9\nf_b = 0.65\n"),
    );
    let out = env.run("estimate", &cfg, "o", &[]);
    assert_eq!(code(&out), 4, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("not informative"));
}

/// Fitted fragment with per-subset bounds for the three-server system.
fn fragment(bounds: &[(f64, f64, f64, f64)]) -> String {
    let mut s = String::from(
        "[fitted]\nf_star = 0.3\nreference = [8, 2]\n\n[fitted.timing]\nzeta = 0.2\nu = 0.2\n\
         alpha = [2.968e-5, 2.968e-5, 2.268e-4]\nbeta = [5.2e-4, 5.2e-4, 0.01]\nresidual = 0.0\n",
    );
    for (a, b, c, d) in bounds {
        s.push_str(&format!(
            "\n[[fitted.bounds]]\na = {a:?}\nb = {b:?}\nc = {c:?}\nd = {d:?}\nvariant = \"sync\"\n"
        ));
    }
    s
}

fn hetero_system() -> SystemProfile {
    let mut devices = vec![
        DeviceProfile::new(0, 1.568e-5, 1.4e-5, 5.2e-4, 0.0, 0.0),
        DeviceProfile::new(1, 1.568e-5, 1.4e-5, 5.2e-4, 0.0, 0.0),
        DeviceProfile::new(2, 1.568e-4, 7e-5, 0.01, 0.0, 0.0),
    ];
    for d in &mut devices {
        d.p = 1.0 / 3.0;
    }
    SystemProfile {
        zeta: 0.2,
        u: 0.2,
        devices,
    }
}

#[test]
fn plan_matches_grid_search() {
    let env = Env::new();
    let bounds = [(5.0, 0.001, 40.0, 0.002), (8.0, 0.002, 60.0, 0.01)];
    env.file("hetero.toml", HETERO);
    env.file("fitted.toml", &fragment(&bounds));
    let cfg = env.file(
        "plan.toml",
        "include = [\"hetero.toml\", \"fitted.toml\"]\n[plan]\nepsilon = 0.05\ne = [1, 60]\nn = [1, 300]\n",
    );
    let out = env.run("plan", &cfg, "o", &[]);
    ok(&out);
    let plan = read_table(&env.path("o/plan.toml"));
    let got = float(&plan["predicted_seconds"]);

    let cost = CostModel::from_system(&hetero_system());
    let mut best = f64::INFINITY;
    for (drops, &(a, b, c, d)) in bounds.iter().enumerate() {
        let members: Vec<usize> = [2, 0, 1][drops..].to_vec();
        let obj = Objective {
            bound: BoundParams::new(a, b, c, d),
            cost: cost.clone(),
            epsilon: 0.05,
            mode: Mode::Sync,
            pairs: vec![],
        };
        for e in 1..=60 {
            for n in 1..=300 {
                best = best.min(obj.predicted(e, n, &members).unwrap());
            }
        }
    }
    assert!((got - best).abs() <= 1e-9 * best, "plan {got} vs grid {best}");
    let e = plan["e"].as_integer().unwrap();
    let n = plan["n"].as_integer().unwrap();
    assert!((1..=60).contains(&e) && (1..=300).contains(&n));
    assert!(!plan["selected"].as_array().unwrap().is_empty());
    assert_eq!(plan["candidates"].as_array().unwrap().len(), 2);
    assert!((float(&plan["target_loss"]) - 0.35).abs() < 1e-12);

    let sim = read_table(&env.path("o/simulate.toml"));
    let run = sim["run"].as_table().unwrap();
    assert_eq!(run["epochs"].as_integer(), Some(e));
    assert_eq!(run["batch"].as_integer(), Some(n));
    assert!(!sim.contains_key("fitted") && !sim.contains_key("plan"));
}

#[test]
fn infeasible_plan_exits_5_with_listing() {
    let env = Env::new();
    env.file("hetero.toml", HETERO);
    env.file("fitted.toml", &fragment(&[(5.0, 0.001, 40.0, 0.2), (5.0, 0.001, 40.0, 0.3)]));
    let cfg = env.file(
        "plan.toml",
        "include = [\"hetero.toml\", \"fitted.toml\"]\n[plan]\nepsilon = 0.1\n",
    );
    let out = env.run("plan", &cfg, "o", &[]);
    assert_eq!(code(&out), 5, "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("drop 0: D = 0.2") && err.contains("drop 1: D = 0.3"), "{err}");
}

#[test]
fn plan_then_simulate_closes_the_loop() {
    let env = Env::new();
    env.file("hetero.toml", HETERO);
    let est = env.file(
        "est.toml",
        "include = [\"hetero.toml\"]\n[estimate]\nprobes = [[2, 4], [8, 2], [20, 8], [4, 32]]\n\
         f_a = 0.9\nf_b = 0.65\nf_star_slack = 0.1\n",
    );
    ok(&env.run("estimate", &est, "est", &[]));
    let plan = env.file(
        "plan.toml",
        "include = [\"hetero.toml\", \"est/fitted.toml\"]\n[plan]\nepsilon = 0.2\ne = [1, 60]\nn = [1, 64]\n",
    );
    ok(&env.run("plan", &plan, "plan", &[]));
    let planned = read_table(&env.path("plan/plan.toml"));
    let target = float(&planned["target_loss"]);
    let predicted = float(&planned["predicted_seconds"]);

    // A deliberately poor choice on the same subset for comparison.
    let sim_path = env.path("plan/simulate.toml");
    let mut poor = read_table(&sim_path);
    let run = poor.get_mut("run").unwrap().as_table_mut().unwrap();
    run.insert("epochs".into(), Value::Integer(1));
    run.insert("batch".into(), Value::Integer(64));
    let poor_path = env.file("poor.toml", &toml::to_string(&poor).unwrap());

    let fitted = read_table(&env.path("est/fitted.toml"));
    let selected: Vec<usize> = planned["selected"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_integer().unwrap() as usize)
        .collect();
    let timing = fitted["fitted"]["timing"].as_table().unwrap();
    let fit = tsfl::estimate::TimingFit {
        zeta: float(&timing["zeta"]),
        u: float(&timing["u"]),
        alpha: timing["alpha"].as_array().unwrap().iter().map(float).collect(),
        beta: timing["beta"].as_array().unwrap().iter().map(float).collect(),
        residual: 0.0,
    };
    let drops = 3 - selected.len();
    let bd = fitted["fitted"]["bounds"][drops].as_table().unwrap();
    let obj = Objective {
        bound: BoundParams::new(float(&bd["a"]), float(&bd["b"]), float(&bd["c"]), float(&bd["d"])),
        cost: CostModel::from_fit(&fit, &hetero_system()).unwrap(),
        epsilon: 0.2,
        mode: Mode::Sync,
        pairs: vec![],
    };
    let poor_predicted = obj.predicted(1, 64, &selected).unwrap();
    assert!(predicted < poor_predicted);

    let time_of = |cfg: &Path, out: &str| -> f64 {
        ok(&env.run("simulate", cfg, out, &[]));
        let trace = fs::read_to_string(env.path(out).join("trace.csv")).unwrap();
        trace
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .find(|r| r[2] <= target)
            .map(|r| r[1])
            .expect("target reached")
    };
    let good = time_of(&sim_path, "good");
    let bad = time_of(&poor_path, "bad");
    assert!(good < bad, "planned {good} s vs poor {bad} s");
}

fn sweep_config(env: &Env, axis: &str, values: &str, epochs: usize) -> PathBuf {
    env.file(
        "sweep.toml",
        &format!(
            "{}\n[sweep]\naxis = \"{axis}\"\nvalues = {values}\n",
            BASE.replace("epochs = 20", &format!("epochs = {epochs}"))
        ),
    )
}

#[test]
fn sweep_over_e_has_interior_minimum() {
    let env = Env::new();
    let cfg = sweep_config(&env, "e", "[10, 20, 30, 40, 50, 60]", 20);
    ok(&env.run("sweep", &cfg, "o", &[]));
    let rows = summary(&env.path("o/summary.csv"));
    let times: Vec<f64> = rows.iter().map(|r| r.1.expect("every point reaches the target")).collect();
    let best = (0..times.len()).min_by(|&a, &b| times[a].total_cmp(&times[b])).unwrap();
    assert!(best > 0 && best < times.len() - 1, "{times:?}");
    for v in [10, 20, 30, 40, 50, 60] {
        assert!(env.path(&format!("o/trace_e_{v}.csv")).exists());
        assert!(env.path(&format!("o/trace_e_{v}.csv.meta.json")).exists());
    }
}

#[test]
fn sweep_over_n_grows_linearly() {
    let env = Env::new();
    let cfg = sweep_config(&env, "n", "[50, 100, 200, 400, 800, 1600]", 50);
    ok(&env.run("sweep", &cfg, "o", &[]));
    let rows = summary(&env.path("o/summary.csv"));
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.0 as f64, r.1.unwrap())).collect();
    assert!(pts.windows(2).all(|w| w[1].1 > w[0].1), "{pts:?}");
    let m = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / m,
        pts.iter().map(|p| p.1).sum::<f64>() / m,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(r2 > 0.99, "R^2 = {r2}");
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let env = Env::new();
    let cfg = sweep_config(&env, "drops", "[0, 1, 2, 3]", 20);
    ok(&env.run("sweep", &cfg, "one", &["--jobs", "1"]));
    ok(&env.run("sweep", &cfg, "three", &["--jobs", "3"]));
    for name in ["summary.csv", "trace_drops_2.csv"] {
        assert_eq!(
            fs::read(env.path("one").join(name)).unwrap(),
            fs::read(env.path("three").join(name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(summary(&env.path("one/summary.csv")).len(), 4);
}

#[test]
fn empty_sweep_axis_exits_3() {
    let env = Env::new();
    let cfg = sweep_config(&env, "e", "[]", 20);
    let out = env.run("sweep", &cfg, "o", &[]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no values"));
}

#[test]
fn bad_arguments_exit_3() {
    let out = Command::new(env!("CARGO_BIN_EXE_tsfl"))
        .args(["simulate", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}
