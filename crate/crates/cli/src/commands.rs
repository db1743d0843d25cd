use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use toml::{Table, Value};

use tsfl::datagen::{self, Dataset};
use tsfl::estimate::{self, BoundVariant};
use tsfl::fedsim::{self, Mode, RunTrace, SimError, Target};
use tsfl::plan::{self, CostModel, Domain, SelectConfig};
use tsfl::profiles::{ForwardPair, SystemProfile};

use crate::config::{self, Axis, Experiment, Fitted};
use crate::error::CliError;

pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: usize,
}

/// A loaded experiment plus everything needed to label its outputs.
pub struct Context {
    table: Table,
    exp: Experiment,
    hash: String,
    out: PathBuf,
    jobs: usize,
}

impl Context {
    pub fn load(opts: &Options) -> Result<Self, CliError> {
        let mut table = config::load_merged(&opts.config)?;
        if let Some(seed) = opts.seed {
            let seed = i64::try_from(seed)
                .map_err(|_| CliError::Config(format!("seed {seed} does not fit in TOML")))?;
            table.insert("seed".into(), Value::Integer(seed));
        }
        if !table.contains_key("seed") {
            return Err(CliError::Config(
                "seed is mandatory (set `seed` or pass --seed)".into(),
            ));
        }
        let exp = Experiment::from_table(&table)?;
        let out = opts
            .out
            .clone()
            .or_else(|| exp.out.clone())
            .ok_or_else(|| CliError::Config("no output directory (set `out` or pass --out)".into()))?;
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        Ok(Self {
            hash: config::config_hash(&table),
            table,
            exp,
            out,
            jobs: opts.jobs,
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, content: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Writes a CSV file with a `<name>.meta.json` sidecar.
    fn write_csv(&self, name: &str, content: &str) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Meta<'a> {
            file: &'a str,
            config_sha256: &'a str,
            seed: u64,
            tsfl_version: &'a str,
        }
        let meta = Meta {
            file: name,
            config_sha256: &self.hash,
            seed: self.exp.seed,
            tsfl_version: env!("CARGO_PKG_VERSION"),
        };
        let mut json = serde_json::to_string_pretty(&meta).expect("plain struct");
        json.push('\n');
        self.write(&format!("{name}.meta.json"), &json)?;
        self.write(name, content)
    }

    /// Writes a TOML file whose leading comments carry the config hash and
    /// seed.
    fn write_toml(&self, name: &str, body: &impl Serialize) -> Result<PathBuf, CliError> {
        let text = toml::to_string(body)
            .map_err(|e| CliError::Config(format!("cannot serialise {name}: {e}")))?;
        let content = format!(
            "# config_sha256 = {}\n# seed = {}\n# tsfl {}\n\n{text}",
            self.hash,
            self.exp.seed,
            env!("CARGO_PKG_VERSION")
        );
        self.write(name, &content)
    }
}

struct Setup {
    data: Dataset,
    parts: Vec<Vec<usize>>,
    system: SystemProfile,
}

fn setup(exp: &Experiment) -> Result<Setup, CliError> {
    let data = exp.dataset.load(exp.seed)?;
    let k = exp.system.num_servers();
    let spec = exp.partition.spec(k, data.num_classes(), exp.seed);
    let parts = datagen::partition(&data, &spec)?.indices;
    let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
    let system = exp.system.build(&sizes)?;
    Ok(Setup {
        data,
        parts,
        system,
    })
}

/// Servers in slowest-first order at `(e, n)`.
fn speed_order(system: &SystemProfile, (e, n): (usize, usize)) -> Vec<usize> {
    let all: Vec<usize> = (0..system.len()).collect();
    CostModel::from_system(system).slowest_first(&all, e as f64, n as f64)
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn target_of(trace: &RunTrace, target: Option<f64>) -> (Option<f64>, Option<u64>) {
    match target {
        Some(eps) => (
            fedsim::time_to_target(trace, Target::Loss(eps)),
            fedsim::rounds_to_target(trace, Target::Loss(eps)),
        ),
        None => (None, None),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let s = setup(&ctx.exp)?;
    let cfg = ctx.exp.run.to_run_config(s.system.len(), ctx.exp.seed);
    let (trace, failure) = match fedsim::run(&cfg, &s.system, &s.parts, &s.data) {
        Ok(trace) => (trace, None),
        Err(SimError::Divergence { wallclock, trace }) => {
            let err = SimError::Divergence {
                wallclock,
                trace: trace.clone(),
            };
            (*trace, Some(err))
        }
        Err(e) => return Err(e.into()),
    };
    let path = ctx.write_csv("trace.csv", &trace.to_csv())?;
    if let Some(err) = failure {
        return Err(err.into());
    }
    let last = trace.records.last().expect("traces start with round 0");
    let (t, r) = target_of(&trace, ctx.exp.run.target_loss);
    println!(
        "{}: {} records, final loss {:.6}, accuracy {:.4}, {:.3} s",
        path.display(),
        trace.records.len(),
        last.loss,
        last.accuracy,
        last.wallclock
    );
    if let (Some(t), Some(r)) = (t, r) {
        println!("target reached after {r} rounds, {t:.3} s");
    } else if ctx.exp.run.target_loss.is_some() {
        println!("target not reached");
    }
    Ok(())
}

pub fn estimate(ctx: &Context) -> Result<(), CliError> {
    let exp = &ctx.exp;
    let est = exp
        .estimate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [estimate] section".into()))?;
    let s = setup(exp)?;
    let reference = est.reference.unwrap_or((exp.run.epochs, exp.run.batch));
    let order = speed_order(&s.system, reference);
    if est.max_drops >= order.len() {
        return Err(CliError::Config(format!(
            "max_drops = {} leaves no server out of {}",
            est.max_drops,
            order.len()
        )));
    }
    let template = exp.run.to_run_config(s.system.len(), exp.seed);
    let sets = ctx.pool()?.install(|| {
        (0..=est.max_drops)
            .into_par_iter()
            .map(|drops| {
                let mut cfg = template.clone();
                cfg.plan.selected = sorted(order[drops..].to_vec());
                estimate::probe(&s.system, &s.parts, &s.data, &cfg, &est.probes, est.f_a, est.f_b)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let f_star = est.f_star.unwrap_or_else(|| {
        let min = sets.iter().map(|p| p.min_loss).fold(f64::INFINITY, f64::min);
        min - est.f_star_slack
    });
    let variant = match exp.run.mode {
        Mode::Sync => BoundVariant::Sync,
        Mode::Async => BoundVariant::Async,
    };
    let mut bounds = Vec::with_capacity(sets.len());
    for (drops, set) in sets.iter().enumerate() {
        let name = match drops {
            0 => "observations.csv".to_string(),
            d => format!("observations_drop{d}.csv"),
        };
        ctx.write_csv(&name, &estimate::observations_csv(&set.observations))?;
        let mut b = estimate::fit_bound(&set.observations, est.f_a, est.f_b, f_star)?;
        b.variant = variant;
        bounds.push(b);
    }
    let timing = estimate::fit_timing(&sets[0].observations, est.split)?;

    #[derive(Serialize)]
    struct Fragment<'a> {
        fitted: &'a Fitted,
    }
    let fitted = Fitted {
        f_star,
        reference,
        timing,
        bounds,
    };
    let path = ctx.write_toml("fitted.toml", &Fragment { fitted: &fitted })?;
    println!("{}: F* = {f_star:.6}, zeta + u = {:.6}", path.display(), fitted.timing.overhead());
    for (drops, b) in fitted.bounds.iter().enumerate() {
        println!(
            "  drop {drops}: A = {:.6e}, B = {:.6e}, C = {:.6e}, D = {:.6e}",
            b.a, b.b, b.c, b.d
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanFile {
    mode: Mode,
    e: usize,
    n: usize,
    selected: Vec<usize>,
    predicted_seconds: f64,
    target_loss: f64,
    acs_iterations: usize,
    pairs: Vec<ForwardPair>,
    candidates: Vec<CandidateRow>,
}

#[derive(Serialize)]
struct CandidateRow {
    drops: usize,
    d: f64,
    feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    e: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_seconds: Option<f64>,
}

pub fn plan(ctx: &Context) -> Result<(), CliError> {
    let exp = &ctx.exp;
    let section = exp
        .plan
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [plan] section".into()))?;
    let fitted = exp
        .fitted
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [fitted] section; include the estimate output".into()))?;
    let s = setup(exp)?;
    let cost = if section.use_system_timing {
        CostModel::from_system(&s.system)
    } else {
        CostModel::from_fit(&fitted.timing, &s.system)?
    };
    let select = SelectConfig {
        epsilon: section.epsilon,
        mode: exp.run.mode,
        domain: Domain {
            e: section.e,
            n: section.n,
        },
        theta: section.theta,
        reference: fitted.reference,
    };
    let selection = plan::select_servers(&cost, &fitted.bounds, &select)?;
    let best = &selection.best;
    let target_loss = fitted.f_star + section.epsilon;

    let file = PlanFile {
        mode: exp.run.mode,
        e: best.e,
        n: best.n,
        selected: best.selected.clone(),
        predicted_seconds: best.predicted_seconds,
        target_loss,
        acs_iterations: best.acs_iterations,
        pairs: best.pairs.clone(),
        candidates: selection
            .candidates
            .iter()
            .map(|c| CandidateRow {
                drops: c.drops,
                d: c.d,
                feasible: c.plan.is_some(),
                e: c.plan.as_ref().map(|p| p.e),
                n: c.plan.as_ref().map(|p| p.n),
                predicted_seconds: c.plan.as_ref().map(|p| p.predicted_seconds),
            })
            .collect(),
    };
    let plan_path = ctx.write_toml("plan.toml", &file)?;

    let mut sim = ctx.table.clone();
    for key in ["out", "estimate", "fitted", "plan", "sweep"] {
        sim.remove(key);
    }
    let Some(Value::Table(run)) = sim.get_mut("run") else {
        unreachable!("validated config has a [run] table");
    };
    let as_int = |v: usize| Value::Integer(v as i64);
    run.insert("epochs".into(), as_int(best.e));
    run.insert("batch".into(), as_int(best.n));
    run.insert(
        "selected".into(),
        Value::Array(best.selected.iter().map(|&k| as_int(k)).collect()),
    );
    run.insert("target_loss".into(), Value::Float(target_loss));
    run.insert(
        "tau".into(),
        Value::try_from(section.tau).expect("tau serialises"),
    );
    run.insert(
        "pairs".into(),
        Value::try_from(&best.pairs).expect("pairs serialise"),
    );
    let sim_path = ctx.write_toml("simulate.toml", &sim)?;

    println!(
        "{}: e = {}, n = {}, servers {:?}, predicted {:.3} s",
        plan_path.display(),
        best.e,
        best.n,
        best.selected,
        best.predicted_seconds
    );
    for c in &file.candidates {
        match c.predicted_seconds {
            Some(t) => println!("  drop {}: D = {:.6e}, predicted {t:.3} s", c.drops, c.d),
            None => println!("  drop {}: D = {:.6e}, infeasible", c.drops, c.d),
        }
    }
    println!("{}: ready to simulate", sim_path.display());
    Ok(())
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let exp = &ctx.exp;
    let section = exp
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
    if section.values.is_empty() {
        return Err(CliError::Config("sweep axis has no values".into()));
    }
    let s = setup(exp)?;
    let k = s.system.len();
    let order = speed_order(&s.system, (exp.run.epochs, exp.run.batch));
    let mut configs = Vec::with_capacity(section.values.len());
    for &v in &section.values {
        let mut cfg = exp.run.to_run_config(k, exp.seed);
        match section.axis {
            Axis::E => cfg.plan.epochs = vec![v; k],
            Axis::N => cfg.plan.batch = vec![v; k],
            Axis::Drops => {
                if v >= k {
                    return Err(CliError::Config(format!(
                        "cannot drop {v} of {k} servers"
                    )));
                }
                cfg.plan.selected = sorted(order[v..].to_vec());
            }
        }
        configs.push(cfg);
    }
    let results: Vec<Result<RunTrace, SimError>> = ctx.pool()?.install(|| {
        configs
            .par_iter()
            .map(|cfg| match fedsim::run(cfg, &s.system, &s.parts, &s.data) {
                Err(SimError::Divergence { trace, .. }) => Ok(*trace),
                other => other,
            })
            .collect()
    });

    let mut summary = String::from("axis_value,time_to_target_s,rounds_to_target\n");
    for (&v, result) in section.values.iter().zip(results) {
        let trace = result?;
        ctx.write_csv(&format!("trace_{}_{v}.csv", section.axis.name()), &trace.to_csv())?;
        let (t, r) = target_of(&trace, exp.run.target_loss);
        writeln!(summary, "{v},{},{}", opt(t), opt(r)).expect("string write");
    }
    let path = ctx.write_csv("summary.csv", &summary)?;
    println!("{}: {} points over {}", path.display(), section.values.len(), section.axis.name());
    print!("{summary}");
    Ok(())
}
