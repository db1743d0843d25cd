//! Probe runs and least-squares fits of the convergence-bound constants and
//! the per-server timing constants.
//!
//! The bound being fitted says that after `R` rounds of `e` local iterations
//! with mini-batch `n`,
//!
//! ```text
//! F(w_R) - F* <= (A / n + B e^2 + C) / (e R) + D
//! ```
//!
//! so the rounds needed to reach a level `F_x` are
//! `R_x = S(e, n) / (e (F_x - F* - D))` with `S = A / n + B e^2 + C`.
//! `A` is the coefficient of `1/n` summed over the participating servers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;
use crate::fedsim::{self, Mode, RunConfig, SimError, Target};
use crate::profiles::{ProfileError, SystemProfile};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("probe set not informative: {0}; use more diverse (e, n) pairs")]
    NotInformative(String),
    #[error("probe {probe} (e={e}, n={n}) did not reach loss {target} within the round budget")]
    ProbeFailed {
        probe: usize,
        e: usize,
        n: usize,
        target: f64,
    },
    #[error("invalid estimation input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

pub type Result<T, E = EstimateError> = std::result::Result<T, E>;

/// Outcome of one probe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeObservation {
    pub e: usize,
    pub n: usize,
    /// First round at which the global loss is at most `F_a` (at least 1).
    pub r_a: f64,
    /// First round at which the global loss is at most `F_b`.
    pub r_b: f64,
    /// Mean per-round time of every server at this `(e, n)`.
    pub cbar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub observations: Vec<ProbeObservation>,
    /// Smallest global loss recorded across all probes.
    pub min_loss: f64,
}

impl ProbeSet {
    /// Reference optimum: the smallest loss seen minus `slack`.
    pub fn default_f_star(&self, slack: f64) -> f64 {
        self.min_loss - slack
    }
}

/// Observations as CSV: `probe_id,e,n,R_a,R_b,cbar_server0,...`.
pub fn observations_csv(observations: &[ProbeObservation]) -> String {
    let servers = observations.first().map_or(0, |o| o.cbar.len());
    let mut out = String::from("probe_id,e,n,R_a,R_b");
    for k in 0..servers {
        out.push_str(&format!(",cbar_server{k}"));
    }
    out.push('\n');
    for (i, o) in observations.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{}", o.e, o.n, o.r_a, o.r_b));
        for c in &o.cbar {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    out
}

/// Runs one simulation per `(e, n)` probe, each until the loss reaches
/// `f_b`, and records the rounds to `f_a` and `f_b`.
///
/// `template` supplies the mode, selected servers, schedule, seed and round
/// budget; its `(e, n)` and loss target are overridden per probe. In
/// asynchronous mode the round count is the number of aggregations divided
/// by the number of selected servers, rounded up.
pub fn probe(
    system: &SystemProfile,
    partitions: &[Vec<usize>],
    data: &Dataset,
    template: &RunConfig,
    probes: &[(usize, usize)],
    f_a: f64,
    f_b: f64,
) -> Result<ProbeSet> {
    if !(f_a > f_b) {
        return Err(EstimateError::Invalid(format!(
            "F_a ({f_a}) must exceed F_b ({f_b})"
        )));
    }
    let members = template.plan.selected.len() as u64;
    let mut observations = Vec::with_capacity(probes.len());
    let mut min_loss = f64::INFINITY;
    for (i, &(e, n)) in probes.iter().enumerate() {
        let mut cfg = template.clone();
        cfg.plan.epochs = vec![e; system.len()];
        cfg.plan.batch = vec![n; system.len()];
        cfg.stop.target_loss = Some(f_b);
        let trace = fedsim::run(&cfg, system, partitions, data)?;
        min_loss = trace
            .records
            .iter()
            .map(|r| r.loss)
            .fold(min_loss, f64::min);
        let to_rounds = |r: u64| match cfg.mode {
            Mode::Sync => r,
            Mode::Async => r.div_ceil(members),
        };
        let failed = EstimateError::ProbeFailed {
            probe: i,
            e,
            n,
            target: f_b,
        };
        let r_b = fedsim::rounds_to_target(&trace, Target::Loss(f_b)).ok_or(failed)?;
        let r_a = fedsim::rounds_to_target(&trace, Target::Loss(f_a)).unwrap_or(r_b);
        let cbar = (0..system.len())
            .map(|k| system.server_round_time(k, n, e))
            .collect::<Result<Vec<_>, _>>()?;
        observations.push(ProbeObservation {
            e,
            n,
            r_a: to_rounds(r_a).max(1) as f64,
            r_b: to_rounds(r_b).max(1) as f64,
            cbar,
        });
    }
    Ok(ProbeSet {
        observations,
        min_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundVariant {
    Sync,
    Async,
}

/// Fitted convergence-bound constants for one server subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub variant: BoundVariant,
}

impl BoundParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self {
            a,
            b,
            c,
            d,
            variant: BoundVariant::Sync,
        }
    }

    /// `A / n + B e^2 + C`.
    pub fn numerator(&self, e: f64, n: f64) -> f64 {
        self.a / n + self.b * e * e + self.c
    }

    /// Rounds the bound needs to reach `F* + gap`; infinite if `gap <= D`.
    pub fn rounds_to_gap(&self, e: f64, n: f64, gap: f64) -> f64 {
        if gap <= self.d {
            return f64::INFINITY;
        }
        self.numerator(e, n) / (e * (gap - self.d))
    }

    /// Round counts `(R_a, R_b)` predicted for a probe at `(e, n)`.
    pub fn predict_rounds(&self, e: usize, n: usize, f_a: f64, f_b: f64, f_star: f64) -> (f64, f64) {
        let (e, n) = (e as f64, n as f64);
        (
            self.rounds_to_gap(e, n, f_a - f_star),
            self.rounds_to_gap(e, n, f_b - f_star),
        )
    }
}

/// Ratio `e_i (R_b_i - R_a_i) / (e_j (R_b_j - R_a_j))`.
pub fn chi(oi: &ProbeObservation, oj: &ProbeObservation) -> f64 {
    (oi.e as f64 * (oi.r_b - oi.r_a)) / (oj.e as f64 * (oj.r_b - oj.r_a))
}

/// Relative threshold below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-9;

/// Singular values and right singular vectors (as columns), sorted by
/// ascending singular value.
fn sorted_svd(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let cols = m.ncols();
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(cols, cols);
    for (j, &i) in order.iter().enumerate() {
        v.set_column(j, &v_t.row(i).transpose());
    }
    // A wide matrix has extra null directions that the decomposition omits.
    while values.len() < cols {
        values.insert(0, 0.0);
    }
    (values, v)
}

/// Scales every column to unit norm; returns the scale factors.
fn normalize_columns(m: &mut DMatrix<f64>) -> Result<Vec<f64>> {
    let mut scales = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(EstimateError::NotInformative(
                "a design column is identically zero".into(),
            ));
        }
        col /= norm;
        scales.push(norm);
    }
    Ok(scales)
}

/// Least squares with a rank check on the column-normalised design.
fn solve_lsq(mut m: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let scales = normalize_columns(&mut m)?;
    let svd = m.svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if svd.singular_values.len() < scales.len() || min <= RANK_TOL * max {
        return Err(EstimateError::NotInformative(format!("{what} is rank deficient")));
    }
    let x = svd
        .solve(rhs, 0.0)
        .map_err(|e| EstimateError::NotInformative(e.to_string()))?;
    Ok(DVector::from_iterator(
        x.len(),
        x.iter().zip(&scales).map(|(v, s)| v / s),
    ))
}

fn check_observations(observations: &[ProbeObservation]) -> Result<()> {
    if observations.len() < 3 {
        return Err(EstimateError::NotInformative(format!(
            "{} probes given, at least 3 needed",
            observations.len()
        )));
    }
    for (i, o) in observations.iter().enumerate() {
        if o.e == 0 || o.n == 0 {
            return Err(EstimateError::Invalid(format!("probe {i} has e or n equal to 0")));
        }
        if !(o.r_b > o.r_a && o.r_a >= 1.0) {
            return Err(EstimateError::Invalid(format!(
                "probe {i} needs R_b > R_a >= 1 (got R_a={}, R_b={})",
                o.r_a, o.r_b
            )));
        }
        if o.cbar.iter().any(|c| !(*c >= 0.0)) {
            return Err(EstimateError::Invalid(format!("probe {i} has a negative round time")));
        }
    }
    Ok(())
}

/// Direction of `(A, B, C)` from the pairwise ratio equations, each row
/// scaled by `weight(i, j, chi_ij)`. Sign fixed so that the bound numerators
/// are positive on balance; negative entries are clamped to zero.
fn ratio_direction(
    observations: &[ProbeObservation],
    weight: impl Fn(usize, usize, f64) -> f64,
) -> Result<Vec<f64>> {
    let m = observations.len();
    let mut rows = Vec::with_capacity(m * (m - 1) / 2 * 3);
    for i in 0..m {
        for j in i + 1..m {
            let (oi, oj) = (&observations[i], &observations[j]);
            let x = chi(oi, oj);
            let (ei, ej) = (oi.e as f64, oj.e as f64);
            let (ni, nj) = (oi.n as f64, oj.n as f64);
            let w = weight(i, j, x);
            rows.extend([
                w * (1.0 / ni - x / nj),
                w * (ei * ei - x * ej * ej),
                w * (1.0 - x),
            ]);
        }
    }
    let mut design = DMatrix::from_row_slice(rows.len() / 3, 3, &rows);
    let scales = normalize_columns(&mut design)?;
    let (sv, v) = sorted_svd(design);
    if sv[1] <= RANK_TOL * sv[2] {
        return Err(EstimateError::NotInformative(
            "ratio equations leave more than one direction free".into(),
        ));
    }
    let mut dir: Vec<f64> = (0..3).map(|j| v[(j, 0)] / scales[j]).collect();
    let balance: f64 = observations
        .iter()
        .map(|o| dir[0] / o.n as f64 + dir[1] * (o.e as f64).powi(2) + dir[2])
        .sum();
    if balance < 0.0 {
        dir.iter_mut().for_each(|d| *d = -*d);
    }
    dir.iter_mut().for_each(|d| *d = d.max(0.0));
    if dir.iter().all(|&d| d == 0.0) {
        return Err(EstimateError::NotInformative(
            "no non-negative solution to the ratio equations".into(),
        ));
    }
    Ok(dir)
}

/// Fits `A, B, C, D` from probe observations.
///
/// Each pair of probes gives a homogeneous equation
/// `A (1/n_i - chi/n_j) + B (e_i^2 - chi e_j^2) + C (1 - chi) = 0`; the
/// smallest right singular vector of the stacked system fixes the direction
/// of `(A, B, C)` (negative entries clamped to zero), re-solved once with
/// rows normalised by their estimated magnitude. The overall scale and
/// a provisional `D` come from regressing `F_x - F*` on `S_i / (e_i R_x_i)`
/// over both levels; the returned `D` is the probe average of
/// `F_b - F* - S_i / (e_i R_b_i)`, clamped to be non-negative.
pub fn fit_bound(
    observations: &[ProbeObservation],
    f_a: f64,
    f_b: f64,
    f_star: f64,
) -> Result<BoundParams> {
    check_observations(observations)?;
    if !(f_a > f_b && f_b > f_star) {
        return Err(EstimateError::Invalid(format!(
            "need F_a > F_b > F* (got {f_a}, {f_b}, {f_star})"
        )));
    }
    let m = observations.len();
    let s_of = |dir: &[f64], o: &ProbeObservation| {
        dir[0] / o.n as f64 + dir[1] * (o.e as f64).powi(2) + dir[2]
    };
    // First pass weights rows by 1 / (1 + chi); the second divides each row
    // by its first-pass `chi S_j` so every residual is a relative ratio error.
    let mut dir = ratio_direction(observations, |_, _, x| 1.0 / (1.0 + x))?;
    let s_hat: Vec<f64> = observations.iter().map(|o| s_of(&dir, o)).collect();
    if s_hat.iter().all(|&v| v > 0.0) {
        dir = ratio_direction(observations, |_, j, x| 1.0 / (x * s_hat[j]))?;
    }

    let mut design = DMatrix::zeros(2 * m, 2);
    let mut rhs = DVector::zeros(2 * m);
    for (i, o) in observations.iter().enumerate() {
        for (row, (r, level)) in [(o.r_a, f_a), (o.r_b, f_b)].into_iter().enumerate() {
            let idx = 2 * i + row;
            design[(idx, 0)] = s_of(&dir, o) / (o.e as f64 * r);
            design[(idx, 1)] = 1.0;
            rhs[idx] = level - f_star;
        }
    }
    let sol = solve_lsq(design, &rhs, "scale regression")?;
    let scale = sol[0];
    if !(scale > 0.0) {
        return Err(EstimateError::NotInformative(
            "fitted bound scale is not positive".into(),
        ));
    }
    let (a, b, c) = (scale * dir[0], scale * dir[1], scale * dir[2]);
    let mut params = BoundParams::new(a, b, c, 0.0);
    let d = observations
        .iter()
        .map(|o| f_b - f_star - params.numerator(o.e as f64, o.n as f64) / (o.e as f64 * o.r_b))
        .sum::<f64>()
        / m as f64;
    params.d = d.max(0.0);
    Ok(params)
}

/// How to split the identifiable sum `zeta + u`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "pin", content = "value", rename_all = "lowercase")]
pub enum OverheadSplit {
    #[default]
    Even,
    Zeta(f64),
    Upload(f64),
}

/// Fitted timing constants: `c_k(e, n) = zeta + alpha_k e n + beta_k e + u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFit {
    pub zeta: f64,
    pub u: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Euclidean norm of the fit residual.
    pub residual: f64,
}

impl TimingFit {
    pub fn overhead(&self) -> f64 {
        self.zeta + self.u
    }

    pub fn round_time(&self, k: usize, e: f64, n: f64) -> f64 {
        self.overhead() + self.alpha[k] * e * n + self.beta[k] * e
    }
}

/// Joint least-squares fit of a shared `zeta + u` and per-server
/// `alpha_k`, `beta_k` from the measured round times. Rows are weighted by
/// the inverse round time, so the fit minimises relative error. Coefficients
/// that come out negative are fixed at zero and the rest re-fitted.
pub fn fit_timing(observations: &[ProbeObservation], split: OverheadSplit) -> Result<TimingFit> {
    check_observations(observations)?;
    let k = observations[0].cbar.len();
    if k == 0 || observations.iter().any(|o| o.cbar.len() != k) {
        return Err(EstimateError::Invalid(
            "every probe needs one round time per server".into(),
        ));
    }
    let m = observations.len();
    let cols = 1 + 2 * k;
    let mut full = DMatrix::zeros(m * k, cols);
    let mut rhs = DVector::zeros(m * k);
    for (i, o) in observations.iter().enumerate() {
        let (e, n) = (o.e as f64, o.n as f64);
        for s in 0..k {
            let row = i * k + s;
            full[(row, 0)] = 1.0;
            full[(row, 1 + 2 * s)] = e * n;
            full[(row, 2 + 2 * s)] = e;
            rhs[row] = o.cbar[s];
        }
    }

    let mut weighted = full.clone();
    let mut weighted_rhs = rhs.clone();
    for (row, c) in rhs.iter().enumerate() {
        if *c > 0.0 {
            weighted.row_mut(row).scale_mut(1.0 / c);
            weighted_rhs[row] = 1.0;
        }
    }

    let mut active: Vec<usize> = (0..cols).collect();
    let coef = loop {
        let design = weighted.select_columns(&active);
        let sol = solve_lsq(design, &weighted_rhs, "timing system")?;
        let worst = sol
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1));
        match worst {
            Some((pos, _)) => {
                active.remove(pos);
                if active.is_empty() {
                    break vec![0.0; cols];
                }
            }
            None => {
                let mut coef = vec![0.0; cols];
                for (&c, v) in active.iter().zip(sol.iter()) {
                    coef[c] = *v;
                }
                break coef;
            }
        }
    };
    let fitted = &full * DVector::from_column_slice(&coef);
    let residual = (fitted - &rhs).norm();
    let overhead = coef[0];
    let (zeta, u) = match split {
        OverheadSplit::Even => (overhead / 2.0, overhead / 2.0),
        OverheadSplit::Zeta(z) => (z, (overhead - z).max(0.0)),
        OverheadSplit::Upload(u) => ((overhead - u).max(0.0), u),
    };
    Ok(TimingFit {
        zeta,
        u,
        alpha: (0..k).map(|s| coef[1 + 2 * s]).collect(),
        beta: (0..k).map(|s| coef[2 + 2 * s]).collect(),
        residual,
    })
}
