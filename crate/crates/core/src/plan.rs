//! Predicted training time and its minimisation over the local epoch count
//! `e`, the mini-batch size `n`, the server subset and the forwarding
//! fractions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{BoundParams, TimingFit};
use crate::fedsim::Mode;
use crate::profiles::{self, ForwardPair, Staleness, SystemProfile, TrainPlan};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("infeasible: D = {d} is not below the target precision {epsilon}")]
    Infeasible { d: f64, epsilon: f64 },
    #[error("no feasible server subset for precision {epsilon}: {}", listing(.d_by_drops))]
    NoFeasibleSubset {
        epsilon: f64,
        /// `D` of the subset obtained by dropping `i` slowest servers.
        d_by_drops: Vec<f64>,
    },
    #[error("invalid planning input: {0}")]
    Invalid(String),
}

fn listing(d: &[f64]) -> String {
    d.iter()
        .enumerate()
        .map(|(i, d)| format!("drop {i}: D = {d}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = PlanError> = std::result::Result<T, E>;

/// Per-server timing coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerCost {
    /// Seconds per sample-iteration, upload plus compute.
    pub alpha: f64,
    /// Seconds per iteration.
    pub beta: f64,
    /// Upload seconds per sample-iteration.
    pub upload: f64,
    /// Forwarding seconds per sample-iteration.
    pub forward: f64,
}

/// Round-time model used by the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// `zeta + u`.
    pub overhead: f64,
    pub servers: Vec<ServerCost>,
}

impl CostModel {
    pub fn from_system(system: &SystemProfile) -> Self {
        Self {
            overhead: system.zeta + system.u,
            servers: system
                .devices
                .iter()
                .map(|d| ServerCost {
                    alpha: d.a + d.b,
                    beta: d.beta,
                    upload: d.a,
                    forward: d.lambda,
                })
                .collect(),
        }
    }

    /// Fitted timing with the upload and forwarding coefficients taken from
    /// `system` (round times alone cannot separate them).
    pub fn from_fit(fit: &TimingFit, system: &SystemProfile) -> Result<Self> {
        if fit.alpha.len() != system.len() || fit.beta.len() != system.len() {
            return Err(PlanError::Invalid(format!(
                "timing fit covers {} servers, system has {}",
                fit.alpha.len(),
                system.len()
            )));
        }
        Ok(Self {
            overhead: fit.overhead(),
            servers: system
                .devices
                .iter()
                .enumerate()
                .map(|(k, d)| ServerCost {
                    alpha: fit.alpha[k],
                    beta: fit.beta[k],
                    upload: d.a.min(fit.alpha[k]),
                    forward: d.lambda,
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.servers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.servers.is_empty()
    }

    /// `zeta + alpha_k e n + beta_k e + u`.
    pub fn round_time(&self, k: usize, e: f64, n: f64) -> f64 {
        let s = &self.servers[k];
        self.overhead + s.alpha * e * n + s.beta * e
    }

    /// Round time of `slow`'s work when trained by `fast`: upload to `slow`,
    /// forward to `fast`, compute on `fast`.
    pub fn helped_round_time(&self, slow: usize, fast: usize, e: f64, n: f64) -> f64 {
        let s = &self.servers[slow];
        let f = &self.servers[fast];
        let compute = (f.alpha - f.upload).max(0.0);
        self.overhead + (s.upload + s.forward + compute) * e * n + f.beta * e
    }

    /// Slowest member's round time.
    pub fn sync_round_time(&self, members: &[usize], e: f64, n: f64) -> f64 {
        members
            .iter()
            .map(|&k| self.round_time(k, e, n))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Members sorted slowest first at `(e, n)`; ties keep id order.
    pub fn slowest_first(&self, members: &[usize], e: f64, n: f64) -> Vec<usize> {
        let mut order = members.to_vec();
        order.sort_by(|&a, &b| {
            self.round_time(b, e, n)
                .total_cmp(&self.round_time(a, e, n))
                .then(a.cmp(&b))
        });
        order
    }
}

/// What the planner minimises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub bound: BoundParams,
    pub cost: CostModel,
    pub epsilon: f64,
    pub mode: Mode,
    /// `(slow, fast)` forwarding pairs, asynchronous mode only.
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
}

impl Objective {
    fn gap(&self) -> Result<f64> {
        let gap = self.epsilon - self.bound.d;
        if gap > 0.0 {
            Ok(gap)
        } else {
            Err(PlanError::Infeasible {
                d: self.bound.d,
                epsilon: self.epsilon,
            })
        }
    }

    /// Predicted seconds at `(e, n)` for `members`; asynchronous mode uses
    /// [`forwarding_alpha`] for every pair.
    pub fn predicted(&self, e: usize, n: usize, members: &[usize]) -> Result<f64> {
        match self.mode {
            Mode::Sync => predicted_time_sync(e, n, members, self),
            Mode::Async => {
                let pairs: Vec<ForwardPair> = self
                    .pairs
                    .iter()
                    .map(|&(slow, fast)| ForwardPair {
                        slow,
                        fast,
                        alpha: forwarding_alpha(&self.cost, slow, fast, e as f64, n as f64),
                    })
                    .collect();
                predicted_time_async(e, n, members, &pairs, self)
            }
        }
    }
}

fn check_inputs(e: usize, n: usize, members: &[usize], cost: &CostModel) -> Result<()> {
    if e == 0 || n == 0 {
        return Err(PlanError::Invalid("e and n must be at least 1".into()));
    }
    if members.is_empty() {
        return Err(PlanError::Invalid("no servers selected".into()));
    }
    if let Some(&k) = members.iter().find(|&&k| k >= cost.len()) {
        return Err(PlanError::Invalid(format!("unknown server {k}")));
    }
    Ok(())
}

/// `c_M(e, n) / (e (eps - D)) * (A / n + B e^2 + C)` with `c_M` the slowest
/// member's round time.
pub fn predicted_time_sync(e: usize, n: usize, members: &[usize], obj: &Objective) -> Result<f64> {
    check_inputs(e, n, members, &obj.cost)?;
    let gap = obj.gap()?;
    let (e, n) = (e as f64, n as f64);
    let c = obj.cost.sync_round_time(members, e, n);
    Ok(c / (e * gap) * obj.bound.numerator(e, n))
}

/// `(A / n + B e^2 + C) / (eps - D) * ((1 - alpha) c_k + alpha c_{k,k'}) / e`
/// at the unit with the largest per-round cost, where a unit is a pair
/// `(k, k', alpha)` or an unpaired member (with `alpha = 0`).
pub fn predicted_time_async(
    e: usize,
    n: usize,
    members: &[usize],
    pairs: &[ForwardPair],
    obj: &Objective,
) -> Result<f64> {
    check_inputs(e, n, members, &obj.cost)?;
    let gap = obj.gap()?;
    let (ef, nf) = (e as f64, n as f64);
    let mut worst = f64::NEG_INFINITY;
    for pair in pairs {
        if !members.contains(&pair.slow) || !members.contains(&pair.fast) {
            return Err(PlanError::Invalid(format!(
                "pair ({}, {}) is not within the selected servers",
                pair.slow, pair.fast
            )));
        }
        if !(0.0..=1.0).contains(&pair.alpha) {
            return Err(PlanError::Invalid(format!("alpha {} outside [0, 1]", pair.alpha)));
        }
        let c = obj.cost.round_time(pair.slow, ef, nf);
        let helped = obj.cost.helped_round_time(pair.slow, pair.fast, ef, nf);
        worst = worst.max((1.0 - pair.alpha) * c + pair.alpha * helped);
    }
    for &k in members {
        if !pairs.iter().any(|p| p.slow == k || p.fast == k) {
            worst = worst.max(obj.cost.round_time(k, ef, nf));
        }
    }
    Ok(obj.bound.numerator(ef, nf) / gap * worst / ef)
}

/// Forwarded fraction the planner uses for a pair: the branch-balancing
/// fraction when forwarding makes a round cheaper (`c_{k,k'} < c_k`), else 0.
pub fn forwarding_alpha(cost: &CostModel, slow: usize, fast: usize, e: f64, n: f64) -> f64 {
    let c_slow = cost.round_time(slow, e, n);
    let c_fast = cost.round_time(fast, e, n);
    let helped = cost.helped_round_time(slow, fast, e, n);
    if helped < c_slow {
        profiles::optimal_alpha(1.0, c_slow, 1.0, c_fast, helped)
    } else {
        0.0
    }
}

/// Pairs the slowest with the fastest, the second slowest with the second
/// fastest and so on; a middle server is left unpaired when the count is odd.
/// `costs` holds `(server id, round time)`.
pub fn pair_by_cost(costs: &[(usize, f64)]) -> Vec<(usize, usize)> {
    let mut order = costs.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let half = order.len() / 2;
    (0..half)
        .map(|i| (order[i].0, order[order.len() - 1 - i].0))
        .collect()
}

/// Slow/fast pairs among `selected` by their round time at `(e, n)`.
pub fn build_pairs(cost: &CostModel, selected: &[usize], e: f64, n: f64) -> Vec<(usize, usize)> {
    let costs: Vec<(usize, f64)> = selected
        .iter()
        .map(|&k| (k, cost.round_time(k, e, n)))
        .collect();
    pair_by_cost(&costs)
}

/// Inclusive integer search intervals for `e` and `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub e: (usize, usize),
    pub n: (usize, usize),
}

impl Domain {
    fn validate(&self) -> Result<()> {
        if self.e.0 == 0 || self.n.0 == 0 || self.e.0 > self.e.1 || self.n.0 > self.n.1 {
            return Err(PlanError::Invalid(format!("bad search domain {self:?}")));
        }
        Ok(())
    }

    fn midpoint(&self) -> (usize, usize) {
        ((self.e.0 + self.e.1) / 2, (self.n.0 + self.n.1) / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsResult {
    pub e: usize,
    pub n: usize,
    pub value: f64,
    /// Completed sweeps (one `e` step and one `n` step each).
    pub iterations: usize,
    /// Objective after the start point and after every half step.
    pub trajectory: Vec<f64>,
    /// Whether any one-dimensional search fell back to a full scan.
    pub used_scan: bool,
}

/// Minimiser of `f` over `lo..=hi`, lowest argument on ties. Integer
/// ternary search, valid for discretely convex `f`; if the result is not a
/// local minimum the whole interval is scanned.
fn argmin_1d(lo: usize, hi: usize, f: &mut impl FnMut(usize) -> f64) -> (usize, f64, bool) {
    let (mut a, mut b) = (lo, hi);
    while b - a > 2 {
        let third = (b - a) / 3;
        let (m1, m2) = (a + third, b - third);
        let (f1, f2) = (f(m1), f(m2));
        if f1 < f2 {
            b = m2 - 1;
        } else if f1 > f2 {
            a = m1 + 1;
        } else {
            a = m1;
            b = m2;
        }
    }
    let mut best = (a, f(a));
    for x in a + 1..=b {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let left_ok = best.0 == lo || f(best.0 - 1) >= best.1;
    let right_ok = best.0 == hi || f(best.0 + 1) >= best.1;
    if left_ok && right_ok && best.1.is_finite() {
        return (best.0, best.1, false);
    }
    let mut best = (lo, f(lo));
    for x in lo + 1..=hi {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    (best.0, best.1, true)
}

/// Alternate search over `e` and `n`: exact one-dimensional minimisation in
/// `e` with `n` fixed, then in `n` with `e` fixed, until a sweep improves the
/// objective by less than `theta`.
pub fn acs_optimize(
    mut f: impl FnMut(usize, usize) -> f64,
    domain: Domain,
    start: (usize, usize),
    theta: f64,
) -> Result<AcsResult> {
    domain.validate()?;
    if !(theta > 0.0) {
        return Err(PlanError::Invalid(format!("theta {theta} must be positive")));
    }
    let (mut e, mut n) = (
        start.0.clamp(domain.e.0, domain.e.1),
        start.1.clamp(domain.n.0, domain.n.1),
    );
    let mut value = f(e, n);
    let mut trajectory = vec![value];
    let mut iterations = 0;
    let mut used_scan = false;
    loop {
        let before = value;
        let (e_new, v, scan) = argmin_1d(domain.e.0, domain.e.1, &mut |x| f(x, n));
        used_scan |= scan;
        if v < value {
            e = e_new;
            value = v;
        }
        trajectory.push(value);
        let (n_new, v, scan) = argmin_1d(domain.n.0, domain.n.1, &mut |x| f(e, x));
        used_scan |= scan;
        if v < value {
            n = n_new;
            value = v;
        }
        trajectory.push(value);
        iterations += 1;
        if !(before - value >= theta) {
            break;
        }
    }
    Ok(AcsResult {
        e,
        n,
        value,
        iterations,
        trajectory,
        used_scan,
    })
}

/// Chosen configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub e: usize,
    pub n: usize,
    pub selected: Vec<usize>,
    pub pairs: Vec<ForwardPair>,
    pub predicted_seconds: f64,
    pub acs_iterations: usize,
    pub trajectory: Vec<f64>,
}

impl PlanResult {
    /// Plan runnable by the simulator on `num_servers` servers.
    pub fn to_train_plan(&self, num_servers: usize, tau: Staleness) -> TrainPlan {
        let mut plan = TrainPlan::uniform(num_servers, self.e, self.n);
        plan.selected = self.selected.clone();
        plan.pairs = self.pairs.clone();
        plan.tau = tau;
        plan
    }
}

/// Optimises `(e, n)` for a fixed subset.
pub fn plan_subset(obj: &Objective, members: &[usize], domain: Domain, theta: f64) -> Result<PlanResult> {
    obj.gap()?;
    check_inputs(domain.e.0.max(1), domain.n.0.max(1), members, &obj.cost)?;
    let acs = acs_optimize(
        |e, n| obj.predicted(e, n, members).unwrap_or(f64::INFINITY),
        domain,
        domain.midpoint(),
        theta,
    )?;
    let pairs = match obj.mode {
        Mode::Sync => Vec::new(),
        Mode::Async => obj
            .pairs
            .iter()
            .map(|&(slow, fast)| ForwardPair {
                slow,
                fast,
                alpha: forwarding_alpha(&obj.cost, slow, fast, acs.e as f64, acs.n as f64),
            })
            .collect(),
    };
    let mut selected = members.to_vec();
    selected.sort_unstable();
    Ok(PlanResult {
        e: acs.e,
        n: acs.n,
        selected,
        pairs,
        predicted_seconds: acs.value,
        acs_iterations: acs.iterations,
        trajectory: acs.trajectory,
    })
}

/// One candidate of the dropping search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropCandidate {
    pub drops: usize,
    pub d: f64,
    /// Absent when `D >= epsilon`.
    pub plan: Option<PlanResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: PlanResult,
    pub candidates: Vec<DropCandidate>,
}

impl Selection {
    /// Predicted seconds per drop count; infinite for infeasible subsets.
    pub fn predicted_curve(&self) -> Vec<f64> {
        self.candidates
            .iter()
            .map(|c| c.plan.as_ref().map_or(f64::INFINITY, |p| p.predicted_seconds))
            .collect()
    }
}

/// Settings for [`select_servers`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub epsilon: f64,
    pub mode: Mode,
    pub domain: Domain,
    pub theta: f64,
    /// `(e, n)` at which servers are ranked by speed.
    pub reference: (usize, usize),
}

/// Tries the subsets obtained by dropping the `i` slowest servers, where
/// `bounds[i]` holds that subset's constants, and keeps the fastest
/// predicted plan. Ties go to the larger subset.
pub fn select_servers(cost: &CostModel, bounds: &[BoundParams], config: &SelectConfig) -> Result<Selection> {
    if bounds.is_empty() || bounds.len() > cost.len() {
        return Err(PlanError::Invalid(format!(
            "need between 1 and {} subset bounds, got {}",
            cost.len(),
            bounds.len()
        )));
    }
    let all: Vec<usize> = (0..cost.len()).collect();
    let (re, rn) = (config.reference.0 as f64, config.reference.1 as f64);
    let order = cost.slowest_first(&all, re, rn);
    let mut candidates = Vec::with_capacity(bounds.len());
    let mut best: Option<PlanResult> = None;
    for (drops, bound) in bounds.iter().enumerate() {
        let members = &order[drops..];
        if bound.d >= config.epsilon {
            candidates.push(DropCandidate {
                drops,
                d: bound.d,
                plan: None,
            });
            continue;
        }
        let pairs = match config.mode {
            Mode::Sync => Vec::new(),
            Mode::Async => build_pairs(cost, members, re, rn),
        };
        let obj = Objective {
            bound: *bound,
            cost: cost.clone(),
            epsilon: config.epsilon,
            mode: config.mode,
            pairs,
        };
        let plan = plan_subset(&obj, members, config.domain, config.theta)?;
        if best
            .as_ref()
            .is_none_or(|b| plan.predicted_seconds < b.predicted_seconds)
        {
            best = Some(plan.clone());
        }
        candidates.push(DropCandidate {
            drops,
            d: bound.d,
            plan: Some(plan),
        });
    }
    match best {
        Some(best) => Ok(Selection { best, candidates }),
        None => Err(PlanError::NoFeasibleSubset {
            epsilon: config.epsilon,
            d_by_drops: bounds.iter().map(|b| b.d).collect(),
        }),
    }
}
