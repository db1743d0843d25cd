//! Deterministic execution of synchronous and staleness-bounded asynchronous
//! federated training under the per-round timing model.
//!
//! Wall-clock time is simulated: every coordination round of a server costs
//! exactly its modelled round time, while the training itself is real SGD on
//! the server's partition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;
use crate::learner::{self, GradWorkspace, LearnerError, LrSchedule, ModelParams};
use crate::profiles::{self, ProfileError, Staleness, SystemProfile, TrainPlan};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("divergence: global loss became non-finite at {wallclock} s")]
    Divergence { wallclock: f64, trace: Box<RunTrace> },
    #[error("staleness deadlock: every server is blocked")]
    StalenessDeadlock,
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    /// Stop once the global loss is at most this value.
    pub target_loss: Option<f64>,
    /// Coordination rounds (sync) or aggregated uploads per selected server
    /// (async).
    pub max_rounds: Option<u64>,
    /// Simulated seconds.
    pub max_wallclock: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub plan: TrainPlan,
    pub schedule: LrSchedule,
    pub stop: StopCriteria,
    pub seed: u64,
    /// Rounds between global evaluations (sync).
    pub eval_every: u64,
    /// Seconds between global evaluations (async); defaults to the fastest
    /// selected server's round time.
    pub eval_interval: Option<f64>,
}

impl RunConfig {
    pub fn new(mode: Mode, plan: TrainPlan, schedule: LrSchedule, stop: StopCriteria) -> Self {
        Self {
            mode,
            plan,
            schedule,
            stop,
            seed: 0,
            eval_every: 1,
            eval_interval: None,
        }
    }

    fn validate(&self, system: &SystemProfile, partitions: &[Vec<usize>]) -> Result<()> {
        system.validate()?;
        self.plan.validate(system)?;
        self.schedule.validate()?;
        if partitions.len() != system.len() {
            return Err(SimError::InvalidConfig(format!(
                "{} partitions for {} servers",
                partitions.len(),
                system.len()
            )));
        }
        if let Some(&k) = self.plan.selected.iter().find(|&&k| partitions[k].is_empty()) {
            return Err(SimError::InvalidConfig(format!(
                "selected server {k} has no data"
            )));
        }
        if self.stop.max_rounds.is_none() && self.stop.max_wallclock.is_none() {
            return Err(SimError::InvalidConfig(
                "either max_rounds or max_wallclock must bound the run".into(),
            ));
        }
        if let Some(eps) = self.stop.target_loss {
            if !(eps > 0.0) {
                return Err(SimError::InvalidConfig(format!("target loss {eps} must be positive")));
            }
        }
        if self.eval_every == 0 {
            return Err(SimError::InvalidConfig("eval_every must be positive".into()));
        }
        if let Some(dt) = self.eval_interval {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(SimError::InvalidConfig(format!("eval interval {dt}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Coordination round (sync) or number of aggregated uploads (async).
    pub round: u64,
    pub wallclock: f64,
    pub loss: f64,
    pub accuracy: f64,
    /// Slowest server of the round (sync) or the server with the fewest
    /// aggregated uploads (async).
    pub slowest_server: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub final_model: ModelParams,
    /// Coordination rounds completed per server id (0 for unselected).
    pub rounds_per_server: Vec<u64>,
    pub slowest_per_round: Vec<usize>,
    /// Largest ledger gap observed (async).
    pub max_gap: u64,
}

impl RunTrace {
    /// CSV with header `round,wallclock_s,loss,accuracy,slowest_server`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,wallclock_s,loss,accuracy,slowest_server\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.round, r.wallclock, r.loss, r.accuracy, r.slowest_server
            ));
        }
        out
    }
}

/// What to wait for in a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Loss(f64),
    Accuracy(f64),
}

impl Target {
    fn reached(&self, r: &TraceRecord) -> bool {
        match *self {
            Target::Loss(eps) => r.loss <= eps,
            Target::Accuracy(acc) => r.accuracy >= acc,
        }
    }
}

/// First recorded wall-clock time at which `target` holds.
pub fn time_to_target(trace: &RunTrace, target: Target) -> Option<f64> {
    trace
        .records
        .iter()
        .find(|r| target.reached(r))
        .map(|r| r.wallclock)
}

/// First recorded round index at which `target` holds.
pub fn rounds_to_target(trace: &RunTrace, target: Target) -> Option<u64> {
    trace
        .records
        .iter()
        .find(|r| target.reached(r))
        .map(|r| r.round)
}

/// Mini-batch stream of server `server` for a run seeded with `seed`.
pub fn server_stream(seed: u64, server: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(server as u64 + 1);
    rng
}

/// Draws `n` indices uniformly with replacement from `partition`.
pub fn sample_batch(rng: &mut ChaCha8Rng, partition: &[usize], n: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..n).map(|_| partition[rng.random_range(0..partition.len())]));
}

/// Aggregation weights renormalised over `members` (uniform if they all
/// carry zero weight).
pub fn renormalized_weights(system: &SystemProfile, members: &[usize]) -> Vec<f64> {
    let total: f64 = members.iter().map(|&k| system.devices[k].p).sum();
    if total > 0.0 {
        members.iter().map(|&k| system.devices[k].p / total).collect()
    } else {
        vec![1.0 / members.len() as f64; members.len()]
    }
}

/// Evaluates `sum_k p_k F_k(w)` over every server holding data, with weights
/// renormalised over those servers. Accuracy is weighted the same way.
pub struct Evaluator<'a> {
    data: &'a Dataset,
    parts: Vec<(f64, &'a [usize])>,
}

impl<'a> Evaluator<'a> {
    pub fn new(system: &SystemProfile, partitions: &'a [Vec<usize>], data: &'a Dataset) -> Self {
        let holders: Vec<usize> = (0..partitions.len())
            .filter(|&k| !partitions[k].is_empty())
            .collect();
        let weights = renormalized_weights(system, &holders);
        let parts = holders
            .iter()
            .zip(weights)
            .map(|(&k, w)| (w, partitions[k].as_slice()))
            .collect();
        Self { data, parts }
    }

    pub fn evaluate(&self, params: &ModelParams) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut acc = 0.0;
        for &(w, idx) in &self.parts {
            if w == 0.0 {
                continue;
            }
            let (l, a) = learner::loss_and_accuracy(params, self.data, idx)?;
            loss += w * l;
            acc += w * a;
        }
        Ok((loss, acc))
    }
}

/// State handed to observers after each synchronous aggregation.
pub struct SyncRound<'a> {
    pub round: u64,
    pub members: &'a [usize],
    pub weights: &'a [f64],
    /// Global model at the start of the round.
    pub start: &'a ModelParams,
    /// Local model of each member after its local iterations.
    pub locals: &'a [ModelParams],
    pub aggregated: &'a ModelParams,
}

/// State handed to observers after each asynchronous aggregation.
pub struct AggregationEvent<'a> {
    pub wallclock: f64,
    /// Server whose data produced the update.
    pub owner: usize,
    /// Server that ran the local iterations.
    pub executor: usize,
    pub ledger: &'a AggregationLedger,
    pub global: &'a ModelParams,
}

/// Hooks into a run for tests and instrumentation.
pub trait Observer {
    fn on_sync_round(&mut self, _round: &SyncRound<'_>) {}
    fn on_aggregation(&mut self, _event: &AggregationEvent<'_>) {}
}

impl Observer for () {}

/// Per-server count of local updates aggregated into the global model.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationLedger {
    members: Vec<usize>,
    counts: Vec<u64>,
}

impl AggregationLedger {
    pub fn new(num_servers: usize, members: &[usize]) -> Self {
        Self {
            members: members.to_vec(),
            counts: vec![0; num_servers],
        }
    }

    pub fn count(&self, server: usize) -> u64 {
        self.counts[server]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn min(&self) -> u64 {
        self.members.iter().map(|&k| self.counts[k]).min().unwrap_or(0)
    }

    pub fn max(&self) -> u64 {
        self.members.iter().map(|&k| self.counts[k]).max().unwrap_or(0)
    }

    pub fn gap(&self) -> u64 {
        self.max() - self.min()
    }

    /// Member with the fewest aggregated updates; lowest id on ties.
    pub fn laggard(&self) -> usize {
        let mut ids = self.members.clone();
        ids.sort_unstable();
        ids.into_iter()
            .min_by_key(|&k| self.counts[k])
            .unwrap_or(0)
    }

    /// Whether `extra` more updates from `owner` keep the gap within `tau`.
    pub fn allows(&self, owner: usize, extra: u64, tau: Staleness) -> bool {
        let bumped = self.counts[owner] + extra;
        let min = self
            .members
            .iter()
            .map(|&k| if k == owner { bumped } else { self.counts[k] })
            .min()
            .unwrap_or(0);
        tau.allows(bumped - min)
    }

    fn record(&mut self, owner: usize) {
        self.counts[owner] += 1;
    }
}

/// Runs `e` local SGD iterations from `start` on `partition`.
#[allow(clippy::too_many_arguments)]
fn local_training(
    start: &ModelParams,
    data: &Dataset,
    partition: &[usize],
    epochs: usize,
    batch_size: usize,
    schedule: &LrSchedule,
    round: u64,
    rng: &mut ChaCha8Rng,
    scratch: &mut Scratch,
) -> Result<ModelParams> {
    let mut w = start.clone();
    for step in 0..epochs {
        sample_batch(rng, partition, batch_size, &mut scratch.batch);
        learner::gradient_into(&w, data, &scratch.batch, &mut scratch.grad, &mut scratch.ws)?;
        let eta = schedule.eta(round, round * epochs as u64 + step as u64);
        w.add_scaled(-eta, &scratch.grad);
    }
    Ok(w)
}

struct Scratch {
    batch: Vec<usize>,
    grad: ModelParams,
    ws: GradWorkspace,
}

impl Scratch {
    fn new(data: &Dataset) -> Self {
        Self {
            batch: Vec::new(),
            grad: ModelParams::zeros(data.input_dim(), data.num_classes()),
            ws: GradWorkspace::default(),
        }
    }
}

pub fn run(
    config: &RunConfig,
    system: &SystemProfile,
    partitions: &[Vec<usize>],
    data: &Dataset,
) -> Result<RunTrace> {
    match config.mode {
        Mode::Sync => run_sync(config, system, partitions, data),
        Mode::Async => run_async(config, system, partitions, data),
    }
}

pub fn run_sync(
    config: &RunConfig,
    system: &SystemProfile,
    partitions: &[Vec<usize>],
    data: &Dataset,
) -> Result<RunTrace> {
    run_sync_observed(config, system, partitions, data, &mut ())
}

/// Synchronous coordination: every selected server trains from the same
/// global model, the coordinator waits for all of them and averages.
pub fn run_sync_observed(
    config: &RunConfig,
    system: &SystemProfile,
    partitions: &[Vec<usize>],
    data: &Dataset,
    observer: &mut dyn Observer,
) -> Result<RunTrace> {
    config.validate(system, partitions)?;
    let plan = &config.plan;
    let mut members = plan.selected.clone();
    members.sort_unstable();
    let weights = renormalized_weights(system, &members);
    let round_time = profiles::round_time_sync(system, plan)?;
    let evaluator = Evaluator::new(system, partitions, data);
    let mut rngs: Vec<ChaCha8Rng> = members.iter().map(|&k| server_stream(config.seed, k)).collect();
    let mut scratch = Scratch::new(data);

    let mut global = ModelParams::zeros(data.input_dim(), data.num_classes());
    let mut trace = RunTrace {
        records: Vec::new(),
        final_model: global.clone(),
        rounds_per_server: vec![0; system.len()],
        slowest_per_round: Vec::new(),
        max_gap: 0,
    };
    let (loss, accuracy) = evaluator.evaluate(&global)?;
    trace.records.push(TraceRecord {
        round: 0,
        wallclock: 0.0,
        loss,
        accuracy,
        slowest_server: round_time.slowest,
    });
    if !loss.is_finite() {
        return Err(divergence(0.0, trace, global));
    }
    let reached = |loss: f64| config.stop.target_loss.is_some_and(|eps| loss <= eps);
    if reached(loss) {
        trace.final_model = global;
        return Ok(trace);
    }

    let mut wallclock = 0.0;
    let mut round = 0u64;
    loop {
        if config.stop.max_rounds.is_some_and(|m| round >= m) {
            break;
        }
        if config
            .stop
            .max_wallclock
            .is_some_and(|m| wallclock + round_time.seconds > m)
        {
            break;
        }
        let mut locals = Vec::with_capacity(members.len());
        for (i, &k) in members.iter().enumerate() {
            locals.push(local_training(
                &global,
                data,
                &partitions[k],
                plan.epochs[k],
                plan.batch[k],
                &config.schedule,
                round,
                &mut rngs[i],
                &mut scratch,
            )?);
        }
        let mut aggregated = ModelParams::zeros(data.input_dim(), data.num_classes());
        for (w, local) in weights.iter().zip(&locals) {
            aggregated.add_scaled(*w, local);
        }
        round += 1;
        wallclock += round_time.seconds;
        observer.on_sync_round(&SyncRound {
            round,
            members: &members,
            weights: &weights,
            start: &global,
            locals: &locals,
            aggregated: &aggregated,
        });
        global = aggregated;
        for &k in &members {
            trace.rounds_per_server[k] += 1;
        }
        trace.slowest_per_round.push(round_time.slowest);

        let last_round = config.stop.max_rounds.is_some_and(|m| round >= m)
            || config
                .stop
                .max_wallclock
                .is_some_and(|m| wallclock + round_time.seconds > m);
        if round.is_multiple_of(config.eval_every) || last_round || !global.is_finite() {
            let (loss, accuracy) = evaluator.evaluate(&global)?;
            trace.records.push(TraceRecord {
                round,
                wallclock,
                loss,
                accuracy,
                slowest_server: round_time.slowest,
            });
            if !loss.is_finite() {
                return Err(divergence(wallclock, trace, global));
            }
            if reached(loss) {
                break;
            }
        }
    }
    trace.final_model = global;
    Ok(trace)
}

fn divergence(wallclock: f64, mut trace: RunTrace, global: ModelParams) -> SimError {
    trace.final_model = global;
    SimError::Divergence {
        wallclock,
        trace: Box::new(trace),
    }
}

pub fn run_async(
    config: &RunConfig,
    system: &SystemProfile,
    partitions: &[Vec<usize>],
    data: &Dataset,
) -> Result<RunTrace> {
    run_async_observed(config, system, partitions, data, &mut ())
}

/// A unit of local work: `epochs` iterations on `owner`'s data run by
/// `executor`.
struct Job {
    owner: usize,
    start: ModelParams,
    local: ModelParams,
    finish: f64,
}

enum ExecState {
    Running(Job),
    /// Finished, waiting for the staleness gate.
    Blocked(Job),
    Idle,
}

struct Helper {
    slow: usize,
    /// Helper rounds per own round.
    ratio: f64,
    credit: f64,
}

/// Staleness-bounded asynchronous coordination with optional load
/// forwarding.
///
/// Each server uploads as soon as it finishes its local iterations; the
/// coordinator adds `p'_k * (w_local - w_start)` to the global model and
/// returns the fresh model. An upload that would push the ledger gap past
/// `tau` waits until the laggard catches up. Completions at the same instant
/// are handled together: uploads in id order, then every uploader starts its
/// next round from the resulting model.
///
/// For a pair `(k, k', alpha)`, the fast server `k'` interleaves helper
/// rounds on `k`'s data at `alpha * Gamma_k / Gamma_k'` helper rounds per own
/// round, each costing `c_{k,k'}`. Helper updates count toward `k`.
pub fn run_async_observed(
    config: &RunConfig,
    system: &SystemProfile,
    partitions: &[Vec<usize>],
    data: &Dataset,
    observer: &mut dyn Observer,
) -> Result<RunTrace> {
    config.validate(system, partitions)?;
    let plan = &config.plan;
    let tau = plan.tau;
    let k_total = system.len();
    let mut members = plan.selected.clone();
    members.sort_unstable();
    let mut weight = vec![0.0; k_total];
    for (&k, w) in members.iter().zip(renormalized_weights(system, &members)) {
        weight[k] = w;
    }

    let mut own_cost = vec![0.0; k_total];
    for &k in &members {
        own_cost[k] = system.server_round_time(k, plan.batch[k], plan.epochs[k])?;
        if own_cost[k] <= 0.0 {
            return Err(SimError::InvalidConfig(format!(
                "server {k} has zero round time; asynchronous time cannot advance"
            )));
        }
    }
    let mut helpers: Vec<Option<Helper>> = (0..k_total).map(|_| None).collect();
    let mut helped_cost = vec![0.0; k_total];
    for pair in &plan.pairs {
        helped_cost[pair.slow] =
            system.helped_round_time(pair.slow, pair.fast, plan.batch[pair.slow], plan.epochs[pair.slow])?;
        if pair.alpha > 0.0 {
            if helped_cost[pair.slow] <= 0.0 {
                return Err(SimError::InvalidConfig(format!(
                    "pair ({}, {}) has zero forwarding round time",
                    pair.slow, pair.fast
                )));
            }
            let ratio = pair.alpha * plan.round_budget(pair.slow) as f64
                / plan.round_budget(pair.fast) as f64;
            helpers[pair.fast] = Some(Helper {
                slow: pair.slow,
                ratio,
                credit: 0.0,
            });
        }
    }

    let eval_interval = match config.eval_interval {
        Some(dt) => dt,
        None => members
            .iter()
            .map(|&k| own_cost[k])
            .fold(f64::INFINITY, f64::min),
    };
    let evaluator = Evaluator::new(system, partitions, data);
    let mut rngs: Vec<ChaCha8Rng> = (0..k_total).map(|k| server_stream(config.seed, k)).collect();
    let mut scratch = Scratch::new(data);
    let mut ledger = AggregationLedger::new(k_total, &members);
    let mut dispatched = vec![0u64; k_total];
    let mut inflight = vec![0u64; k_total];
    let mut execs: Vec<ExecState> = (0..k_total).map(|_| ExecState::Idle).collect();
    let max_uploads = config
        .stop
        .max_rounds
        .map(|r| r.saturating_mul(members.len() as u64));

    let mut global = ModelParams::zeros(data.input_dim(), data.num_classes());
    let mut trace = RunTrace {
        records: Vec::new(),
        final_model: global.clone(),
        rounds_per_server: vec![0; k_total],
        slowest_per_round: Vec::new(),
        max_gap: 0,
    };
    let mut uploads = 0u64;
    let (loss, accuracy) = evaluator.evaluate(&global)?;
    trace.records.push(TraceRecord {
        round: 0,
        wallclock: 0.0,
        loss,
        accuracy,
        slowest_server: ledger.laggard(),
    });
    if !loss.is_finite() {
        return Err(divergence(0.0, trace, global));
    }
    let reached = |loss: f64| config.stop.target_loss.is_some_and(|eps| loss <= eps);
    if reached(loss) {
        trace.final_model = global;
        return Ok(trace);
    }

    // Starts the next job on `exec` from the current global model.
    let mut dispatch = |exec: usize,
                        now: f64,
                        global: &ModelParams,
                        ledger: &AggregationLedger,
                        inflight: &mut Vec<u64>,
                        execs: &mut Vec<ExecState>,
                        helpers: &mut Vec<Option<Helper>>|
     -> Result<()> {
        let mut owner = exec;
        let mut cost = own_cost[exec];
        if let Some(h) = helpers[exec].as_mut() {
            if h.credit >= 1.0 && ledger.allows(h.slow, inflight[h.slow] + 1, tau) {
                h.credit -= 1.0;
                owner = h.slow;
                cost = helped_cost[h.slow];
            } else {
                h.credit += h.ratio;
            }
        }
        let round = dispatched[owner];
        dispatched[owner] += 1;
        inflight[owner] += 1;
        let local = local_training(
            global,
            data,
            &partitions[owner],
            plan.epochs[owner],
            plan.batch[owner],
            &config.schedule,
            round,
            &mut rngs[owner],
            &mut scratch,
        )?;
        execs[exec] = ExecState::Running(Job {
            owner,
            start: global.clone(),
            local,
            finish: now + cost,
        });
        Ok(())
    };

    for &k in &members {
        dispatch(k, 0.0, &global, &ledger, &mut inflight, &mut execs, &mut helpers)?;
    }

    let mut next_eval = eval_interval;
    let mut last_record = 0.0;
    loop {
        let now = members
            .iter()
            .filter_map(|&k| match &execs[k] {
                ExecState::Running(job) => Some(job.finish),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min);
        if !now.is_finite() {
            return Err(SimError::StalenessDeadlock);
        }
        let horizon = config.stop.max_wallclock.unwrap_or(f64::INFINITY);

        // Grid evaluations strictly before this event.
        let mut stop = false;
        while next_eval < now && next_eval <= horizon {
            let (loss, accuracy) = evaluator.evaluate(&global)?;
            trace.records.push(TraceRecord {
                round: uploads,
                wallclock: next_eval,
                loss,
                accuracy,
                slowest_server: ledger.laggard(),
            });
            last_record = next_eval;
            if !loss.is_finite() {
                return Err(divergence(next_eval, trace, global));
            }
            next_eval += eval_interval;
            if reached(loss) {
                stop = true;
                break;
            }
        }
        if stop || now > horizon {
            break;
        }

        for &k in &members {
            if let ExecState::Running(job) = &execs[k] {
                if job.finish == now {
                    let ExecState::Running(job) = std::mem::replace(&mut execs[k], ExecState::Idle)
                    else {
                        unreachable!()
                    };
                    execs[k] = ExecState::Blocked(job);
                }
            }
        }

        let mut uploaded_now = Vec::new();
        let mut progress = true;
        while progress {
            progress = false;
            for &k in &members {
                let owner = match &execs[k] {
                    ExecState::Blocked(job) => job.owner,
                    _ => continue,
                };
                if !ledger.allows(owner, 1, tau) {
                    continue;
                }
                let ExecState::Blocked(job) = std::mem::replace(&mut execs[k], ExecState::Idle)
                else {
                    unreachable!()
                };
                let mut delta = job.local;
                delta.add_scaled(-1.0, &job.start);
                global.add_scaled(weight[owner], &delta);
                ledger.record(owner);
                inflight[owner] -= 1;
                uploads += 1;
                trace.max_gap = trace.max_gap.max(ledger.gap());
                debug_assert!(tau.allows(ledger.gap()));
                observer.on_aggregation(&AggregationEvent {
                    wallclock: now,
                    owner,
                    executor: k,
                    ledger: &ledger,
                    global: &global,
                });
                uploaded_now.push(k);
                progress = true;
            }
        }
        if uploaded_now.is_empty()
            && members
                .iter()
                .all(|&k| !matches!(execs[k], ExecState::Running(_)))
        {
            return Err(SimError::StalenessDeadlock);
        }

        let diverged = !global.is_finite();
        let budget_spent = max_uploads.is_some_and(|m| uploads >= m);
        if diverged || budget_spent {
            let (loss, accuracy) = evaluator.evaluate(&global)?;
            if now > last_record {
                trace.records.push(TraceRecord {
                    round: uploads,
                    wallclock: now,
                    loss,
                    accuracy,
                    slowest_server: ledger.laggard(),
                });
            }
            if !loss.is_finite() {
                return Err(divergence(now, trace, global));
            }
            break;
        }

        uploaded_now.sort_unstable();
        for k in uploaded_now {
            dispatch(k, now, &global, &ledger, &mut inflight, &mut execs, &mut helpers)?;
        }
    }

    for &k in &members {
        trace.rounds_per_server[k] = ledger.count(k);
    }
    trace.final_model = global;
    Ok(trace)
}
