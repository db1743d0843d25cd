//! Per-server timing model.
//!
//! Every coordination round of a server is split into four steps: model
//! distribution (`zeta`), data uploading from the collecting devices (`q`),
//! local training (`nu`) and model uploading (`u`). All costs are in seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coefficients measured on the reference hardware.
pub mod presets {
    /// Model distribution time over the shared Wi-Fi link.
    pub const ZETA: f64 = 0.2;
    /// Model uploading time.
    pub const UPLOAD: f64 = 0.2;
    /// Data arrival rate at a high-performance server (bytes/s).
    pub const WIFI_RATE: f64 = 50e6;
    /// Data arrival rate at a low-performance server (bytes/s).
    pub const BLUETOOTH_RATE: f64 = 5e6;
    /// A 28x28 single-byte image.
    pub const MNIST_SAMPLE_BYTES: f64 = 784.0;

    /// `(b, beta)` for a Raspberry Pi 4B on MNIST.
    pub const PI4B_MNIST: (f64, f64) = (1.4e-5, 5.2e-4);
    /// `(b, beta)` for a Raspberry Pi 4B on the traffic dataset.
    pub const PI4B_TRAFFIC: (f64, f64) = (1.7e-5, 0.03);
    /// `(b, beta)` for a Raspberry Pi 3A on MNIST.
    pub const PI3A_MNIST: (f64, f64) = (7e-5, 0.01);
    /// `(b, beta)` for a Raspberry Pi 3A on the traffic dataset.
    pub const PI3A_TRAFFIC: (f64, f64) = (8.6e-5, 0.57);
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("no participating servers")]
    NoParticipants,
    #[error("unknown server id {0}")]
    UnknownServer(usize),
    #[error("server id {found} at position {position}; ids must be 0..K in order")]
    IdOrder { position: usize, found: usize },
    #[error("invalid device {id}: {reason}")]
    InvalidDevice { id: usize, reason: String },
    #[error("invalid system profile: {0}")]
    InvalidSystem(String),
    #[error("aggregation weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("forwarding pair ({slow}, {fast}) references a server outside the selected set")]
    PairNotSelected { slow: usize, fast: usize },
}

/// Seconds per uploaded sample given a link rate and a per-sample size.
pub fn upload_coefficient(bytes_per_sample: f64, bytes_per_second: f64) -> f64 {
    bytes_per_sample / bytes_per_second
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: usize,
    /// Seconds per uploaded data sample.
    pub a: f64,
    /// Seconds per processed sample per local iteration.
    pub b: f64,
    /// Per-iteration SGD overhead in seconds.
    pub beta: f64,
    /// Seconds per forwarded sample.
    pub lambda: f64,
    /// Aggregation weight.
    pub p: f64,
    /// Which dataset the `(b, beta)` pair was measured on.
    #[serde(default)]
    pub dataset_kind: String,
}

impl DeviceProfile {
    pub fn new(id: usize, a: f64, b: f64, beta: f64, lambda: f64, p: f64) -> Self {
        Self {
            id,
            a,
            b,
            beta,
            lambda,
            p,
            dataset_kind: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let coeffs = [
            ("a", self.a),
            ("b", self.b),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ];
        for (name, v) in coeffs {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ProfileError::InvalidDevice {
                    id: self.id,
                    reason: format!("{name} = {v} must be finite and non-negative"),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(ProfileError::InvalidDevice {
                id: self.id,
                reason: format!("p = {} outside [0, 1]", self.p),
            });
        }
        Ok(())
    }
}

/// Data uploading time `a_k * n * e`.
pub fn upload_time(dev: &DeviceProfile, n: usize, e: usize) -> f64 {
    dev.a * n as f64 * e as f64
}

/// Local training time `e * (b_k * n + beta_k)`.
pub fn compute_time(dev: &DeviceProfile, n: usize, e: usize) -> f64 {
    e as f64 * (dev.b * n as f64 + dev.beta)
}

/// Time to ship `n * e` samples to a partner server.
pub fn forward_time(dev: &DeviceProfile, n: usize, e: usize) -> f64 {
    dev.lambda * n as f64 * e as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemProfile {
    /// Model distribution time.
    pub zeta: f64,
    /// Model uploading time.
    pub u: f64,
    pub devices: Vec<DeviceProfile>,
}

impl SystemProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.zeta.is_finite() && self.zeta >= 0.0) {
            return Err(ProfileError::InvalidSystem(format!("zeta = {}", self.zeta)));
        }
        if !(self.u.is_finite() && self.u >= 0.0) {
            return Err(ProfileError::InvalidSystem(format!("u = {}", self.u)));
        }
        if self.devices.is_empty() {
            return Err(ProfileError::InvalidSystem("no devices".into()));
        }
        for (position, dev) in self.devices.iter().enumerate() {
            if dev.id != position {
                return Err(ProfileError::IdOrder {
                    position,
                    found: dev.id,
                });
            }
            dev.validate()?;
        }
        let total: f64 = self.devices.iter().map(|d| d.p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ProfileError::WeightsNotNormalized(total));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn device(&self, id: usize) -> Result<&DeviceProfile, ProfileError> {
        self.devices.get(id).ok_or(ProfileError::UnknownServer(id))
    }

    /// Replaces every weight with one proportional to `sizes`.
    pub fn set_weights_proportional(&mut self, sizes: &[usize]) -> Result<(), ProfileError> {
        if sizes.len() != self.devices.len() {
            return Err(ProfileError::InvalidSystem(format!(
                "{} partition sizes for {} devices",
                sizes.len(),
                self.devices.len()
            )));
        }
        let total: usize = sizes.iter().sum();
        if total == 0 {
            return Err(ProfileError::InvalidSystem("all partitions are empty".into()));
        }
        for (dev, &size) in self.devices.iter_mut().zip(sizes) {
            dev.p = size as f64 / total as f64;
        }
        Ok(())
    }

    pub fn set_weights_uniform(&mut self) {
        let k = self.devices.len() as f64;
        for dev in &mut self.devices {
            dev.p = 1.0 / k;
        }
    }

    /// Standalone round time `c_k = zeta + q_k + nu_k + u`.
    pub fn server_round_time(&self, id: usize, n: usize, e: usize) -> Result<f64, ProfileError> {
        let dev = self.device(id)?;
        Ok(self.zeta + upload_time(dev, n, e) + compute_time(dev, n, e) + self.u)
    }

    /// Round time `c_{k,k'}` of the fast server `fast` training a batch
    /// forwarded by `slow`, using the slow server's `(n, e)`.
    pub fn helped_round_time(
        &self,
        slow: usize,
        fast: usize,
        n: usize,
        e: usize,
    ) -> Result<f64, ProfileError> {
        let slow_dev = self.device(slow)?;
        let fast_dev = self.device(fast)?;
        Ok(self.zeta
            + upload_time(slow_dev, n, e)
            + forward_time(slow_dev, n, e)
            + compute_time(fast_dev, n, e)
            + self.u)
    }
}

/// Staleness cap in aggregated uploads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Staleness {
    Bounded(u64),
    Unbounded,
}

impl Staleness {
    pub fn allows(&self, gap: u64) -> bool {
        match *self {
            Staleness::Bounded(tau) => gap <= tau,
            Staleness::Unbounded => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardPair {
    pub slow: usize,
    pub fast: usize,
    pub alpha: f64,
}

/// Decision variables of a training run. `epochs`, `batch` and `rounds`
/// are indexed by server id and cover every device, selected or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub selected: Vec<usize>,
    pub epochs: Vec<usize>,
    pub batch: Vec<usize>,
    #[serde(default)]
    pub pairs: Vec<ForwardPair>,
    pub tau: Staleness,
    /// Per-server round budget; only its ratios matter for forwarding.
    #[serde(default)]
    pub rounds: Vec<u64>,
}

impl TrainPlan {
    /// Same `e` and `n` on all `num_servers` servers, every server selected.
    pub fn uniform(num_servers: usize, epochs: usize, batch: usize) -> Self {
        Self {
            selected: (0..num_servers).collect(),
            epochs: vec![epochs; num_servers],
            batch: vec![batch; num_servers],
            pairs: Vec::new(),
            tau: Staleness::Unbounded,
            rounds: vec![1; num_servers],
        }
    }

    pub fn with_selected(mut self, selected: Vec<usize>) -> Self {
        self.selected = selected;
        self
    }

    pub fn is_selected(&self, id: usize) -> bool {
        self.selected.contains(&id)
    }

    pub fn validate(&self, sys: &SystemProfile) -> Result<(), ProfileError> {
        let k = sys.len();
        if self.selected.is_empty() {
            return Err(ProfileError::NoParticipants);
        }
        if self.epochs.len() != k || self.batch.len() != k {
            return Err(ProfileError::InvalidPlan(format!(
                "epochs/batch must have one entry per device ({k})"
            )));
        }
        if !self.rounds.is_empty() && self.rounds.len() != k {
            return Err(ProfileError::InvalidPlan(format!(
                "rounds must be empty or have one entry per device ({k})"
            )));
        }
        let mut seen = vec![false; k];
        for &id in &self.selected {
            if id >= k {
                return Err(ProfileError::UnknownServer(id));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(ProfileError::InvalidPlan(format!("server {id} selected twice")));
            }
            if self.epochs[id] == 0 || self.batch[id] == 0 {
                return Err(ProfileError::InvalidPlan(format!(
                    "server {id} needs positive epochs and batch size"
                )));
            }
        }
        if let Staleness::Bounded(0) = self.tau {
            return Err(ProfileError::InvalidPlan("tau must be at least 1".into()));
        }
        let mut paired = vec![false; k];
        for pair in &self.pairs {
            if pair.slow == pair.fast || !self.is_selected(pair.slow) || !self.is_selected(pair.fast)
            {
                return Err(ProfileError::PairNotSelected {
                    slow: pair.slow,
                    fast: pair.fast,
                });
            }
            if !(0.0..=1.0).contains(&pair.alpha) {
                return Err(ProfileError::InvalidPlan(format!(
                    "alpha {} outside [0, 1]",
                    pair.alpha
                )));
            }
            for id in [pair.slow, pair.fast] {
                if std::mem::replace(&mut paired[id], true) {
                    return Err(ProfileError::InvalidPlan(format!(
                        "server {id} appears in more than one pair"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Round budget of server `id`, defaulting to 1 when unset.
    pub fn round_budget(&self, id: usize) -> u64 {
        self.rounds.get(id).copied().unwrap_or(1).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTime {
    pub seconds: f64,
    pub slowest: usize,
}

/// Synchronous round time: the slowest selected server dominates. Ties go to
/// the lowest id.
pub fn round_time_sync(sys: &SystemProfile, plan: &TrainPlan) -> Result<RoundTime, ProfileError> {
    let mut ids = plan.selected.clone();
    ids.sort_unstable();
    let mut best: Option<RoundTime> = None;
    for id in ids {
        let n = *plan.batch.get(id).ok_or(ProfileError::UnknownServer(id))?;
        let e = *plan.epochs.get(id).ok_or(ProfileError::UnknownServer(id))?;
        let seconds = sys.server_round_time(id, n, e)?;
        match best {
            Some(b) if b.seconds >= seconds => {}
            _ => best = Some(RoundTime { seconds, slowest: id }),
        }
    }
    best.ok_or(ProfileError::NoParticipants)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTimes {
    pub slow_branch: f64,
    pub fast_branch: f64,
}

impl PairTimes {
    pub fn overall(&self) -> f64 {
        self.slow_branch.max(self.fast_branch)
    }
}

/// Branch times of a forwarding pair over round budgets `rounds_slow` and
/// `rounds_fast`.
pub fn pair_times(
    sys: &SystemProfile,
    plan: &TrainPlan,
    pair: &ForwardPair,
    rounds_slow: f64,
    rounds_fast: f64,
) -> Result<PairTimes, ProfileError> {
    if !plan.is_selected(pair.slow) || !plan.is_selected(pair.fast) || pair.slow == pair.fast {
        return Err(ProfileError::PairNotSelected {
            slow: pair.slow,
            fast: pair.fast,
        });
    }
    if !(0.0..=1.0).contains(&pair.alpha) {
        return Err(ProfileError::InvalidPlan(format!(
            "alpha {} outside [0, 1]",
            pair.alpha
        )));
    }
    let (k, kf) = (pair.slow, pair.fast);
    let c_slow = sys.server_round_time(k, plan.batch[k], plan.epochs[k])?;
    let c_fast = sys.server_round_time(kf, plan.batch[kf], plan.epochs[kf])?;
    let c_helped = sys.helped_round_time(k, kf, plan.batch[k], plan.epochs[k])?;
    Ok(branch_times(
        rounds_slow,
        c_slow,
        rounds_fast,
        c_fast,
        c_helped,
        pair.alpha,
    ))
}

/// Branch times from raw per-round costs.
pub fn branch_times(
    rounds_slow: f64,
    c_slow: f64,
    rounds_fast: f64,
    c_fast: f64,
    c_helped: f64,
    alpha: f64,
) -> PairTimes {
    PairTimes {
        slow_branch: rounds_slow * (1.0 - alpha) * c_slow,
        fast_branch: rounds_fast * c_fast + rounds_slow * alpha * c_helped,
    }
}

/// Forwarded fraction that equalises both branches of a pair, clamped to
/// `[0, 1]`.
pub fn optimal_alpha(
    rounds_slow: f64,
    c_slow: f64,
    rounds_fast: f64,
    c_fast: f64,
    c_helped: f64,
) -> f64 {
    let alpha =
        (rounds_slow * c_slow - rounds_fast * c_fast) / (rounds_slow * (c_slow + c_helped));
    if alpha.is_nan() {
        return 0.0;
    }
    alpha.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(id: usize, a: f64, b: f64, beta: f64) -> DeviceProfile {
        DeviceProfile::new(id, a, b, beta, 0.0, 0.0)
    }

    fn system(devs: Vec<DeviceProfile>) -> SystemProfile {
        let mut sys = SystemProfile {
            zeta: presets::ZETA,
            u: presets::UPLOAD,
            devices: devs,
        };
        sys.set_weights_uniform();
        sys
    }

    #[test]
    fn upload_time_examples() {
        assert_eq!(upload_time(&dev(0, 1e-3, 0.0, 0.0), 100, 10), 1.0);
        assert_eq!(upload_time(&dev(0, 0.2, 0.0, 0.0), 0, 5), 0.0);
        let a = upload_coefficient(presets::MNIST_SAMPLE_BYTES, presets::BLUETOOTH_RATE);
        assert!((a - 1.568e-4).abs() < 1e-18);
        assert!((upload_time(&dev(0, a, 0.0, 0.0), 400, 10) - 0.6272).abs() < 1e-12);
    }

    #[test]
    fn compute_time_examples() {
        let (b, beta) = presets::PI4B_MNIST;
        let t = compute_time(&dev(0, 0.0, b, beta), 400, 10);
        assert!((t - 0.0612).abs() < 1e-12);
        assert!((t - 0.0618).abs() / 0.0618 < 0.01);
        let (b, beta) = presets::PI3A_MNIST;
        assert!((compute_time(&dev(0, 0.0, b, beta), 1000, 20) - 1.6).abs() < 1e-12);
        assert_eq!(compute_time(&dev(0, 0.0, 3.0, 7.0), 123, 0), 0.0);
    }

    #[test]
    fn compute_time_is_linear_in_each_argument() {
        let d = dev(0, 0.0, 7e-5, 0.01);
        for n in [1usize, 50, 400] {
            let base = compute_time(&d, n, 1);
            for e in 1..20 {
                assert!((compute_time(&d, n, e) - e as f64 * base).abs() < 1e-12);
            }
        }
        for e in [1usize, 10, 30] {
            let slope = compute_time(&d, 1, e) - compute_time(&d, 0, e);
            for n in 0..50 {
                let expect = compute_time(&d, 0, e) + n as f64 * slope;
                assert!((compute_time(&d, n, e) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_time_examples() {
        let mut d = dev(0, 0.0, 0.0, 0.0);
        d.lambda = 1e-4;
        assert!((forward_time(&d, 400, 10) - 0.4).abs() < 1e-15);
        d.lambda = 0.0;
        assert_eq!(forward_time(&d, 400, 10), 0.0);
        d.lambda = 1.568e-4;
        assert!((forward_time(&d, 1000, 20) - 3.136).abs() < 1e-12);
    }

    #[test]
    fn round_time_sync_single_server_sums_steps() {
        let a = upload_coefficient(presets::MNIST_SAMPLE_BYTES, presets::BLUETOOTH_RATE);
        let (b, beta) = presets::PI4B_MNIST;
        let sys = system(vec![dev(0, a, b, beta)]);
        let plan = TrainPlan::uniform(1, 10, 400);
        let rt = round_time_sync(&sys, &plan).unwrap();
        assert!((rt.seconds - 1.0884).abs() < 1e-12);
        assert_eq!(rt.slowest, 0);
    }

    #[test]
    fn round_time_sync_takes_max_and_lowest_id_on_ties() {
        let mut sys = system(vec![dev(0, 0.0, 0.0, 0.06), dev(1, 0.0, 0.0, 0.21)]);
        sys.zeta = 0.2;
        sys.u = 0.2;
        let plan = TrainPlan::uniform(2, 10, 1);
        let rt = round_time_sync(&sys, &plan).unwrap();
        assert!((rt.seconds - 2.5).abs() < 1e-12);
        assert_eq!(rt.slowest, 1);

        let sys = system(vec![dev(0, 0.0, 1e-4, 0.0); 3]
            .into_iter()
            .enumerate()
            .map(|(i, mut d)| {
                d.id = i;
                d
            })
            .collect());
        let plan = TrainPlan::uniform(3, 5, 100);
        let rt = round_time_sync(&sys, &plan).unwrap();
        assert_eq!(rt.slowest, 0);
        assert_eq!(rt.seconds, sys.server_round_time(2, 100, 5).unwrap());
    }

    #[test]
    fn round_time_sync_rejects_empty_selection() {
        let sys = system(vec![dev(0, 0.0, 0.0, 0.0)]);
        let plan = TrainPlan::uniform(1, 1, 1).with_selected(vec![]);
        let err = round_time_sync(&sys, &plan).unwrap_err();
        assert_eq!(err.to_string(), "no participating servers");
    }

    #[test]
    fn dropping_slowest_never_increases_round_time() {
        let sys = system(
            (0..5)
                .map(|i| dev(i, 1e-5 * i as f64, 1e-5 * (5 - i) as f64, 0.01))
                .collect(),
        );
        let mut plan = TrainPlan::uniform(5, 10, 200);
        while plan.selected.len() > 1 {
            let before = round_time_sync(&sys, &plan).unwrap();
            plan.selected.retain(|&id| id != before.slowest);
            let after = round_time_sync(&sys, &plan).unwrap();
            assert!(after.seconds <= before.seconds);
        }
    }

    #[test]
    fn pair_branch_examples() {
        let t = branch_times(10.0, 2.0, 10.0, 1.0, 1.5, 0.0);
        assert_eq!((t.slow_branch, t.fast_branch), (20.0, 10.0));
        let t = branch_times(10.0, 2.0, 10.0, 1.0, 1.5, 1.0);
        assert_eq!((t.slow_branch, t.fast_branch), (0.0, 25.0));
        let alpha = optimal_alpha(10.0, 2.0, 10.0, 1.0, 1.5);
        assert!((alpha - 2.0 / 7.0).abs() < 1e-15);
        let t = branch_times(10.0, 2.0, 10.0, 1.0, 1.5, alpha);
        assert!((t.slow_branch - 100.0 / 7.0).abs() < 1e-12);
        assert!((t.slow_branch - t.fast_branch).abs() < 1e-12);
    }

    #[test]
    fn optimal_alpha_clamps() {
        assert_eq!(optimal_alpha(10.0, 1.0, 10.0, 2.0, 1.5), 0.0);
        assert_eq!(optimal_alpha(5.0, 1.0, 5.0, 1.0, 1.0), 0.0);
        assert_eq!(optimal_alpha(10.0, 2.0, 10.0, 1.0, f64::INFINITY), 0.0);
        assert!(optimal_alpha(10.0, 2.0, 10.0, 1.0, 1e12) < 1e-11);
    }

    #[test]
    fn pair_times_uses_slow_batch_on_fast_coefficients() {
        let mut slow = dev(0, 1e-4, 1e-3, 0.01);
        slow.lambda = 2e-4;
        let fast = dev(1, 1e-5, 1e-4, 0.001);
        let sys = system(vec![slow.clone(), fast.clone()]);
        let mut plan = TrainPlan::uniform(2, 4, 50);
        plan.epochs[1] = 9;
        plan.batch[1] = 7;
        let pair = ForwardPair {
            slow: 0,
            fast: 1,
            alpha: 0.25,
        };
        let t = pair_times(&sys, &plan, &pair, 8.0, 12.0).unwrap();
        let c_slow = 0.4 + 1e-4 * 200.0 + 4.0 * (1e-3 * 50.0 + 0.01);
        let c_fast = 0.4 + 1e-5 * 63.0 + 9.0 * (1e-4 * 7.0 + 0.001);
        let c_helped = 0.4 + 1e-4 * 200.0 + 2e-4 * 200.0 + 4.0 * (1e-4 * 50.0 + 0.001);
        assert!((t.slow_branch - 8.0 * 0.75 * c_slow).abs() < 1e-12);
        assert!((t.fast_branch - (12.0 * c_fast + 8.0 * 0.25 * c_helped)).abs() < 1e-12);

        let plan = plan.with_selected(vec![0]);
        assert!(matches!(
            pair_times(&sys, &plan, &pair, 1.0, 1.0),
            Err(ProfileError::PairNotSelected { .. })
        ));
    }

    #[test]
    fn validate_rejects_bad_profiles() {
        let mut sys = system(vec![dev(0, 0.0, 0.0, 0.0), dev(1, 0.0, 0.0, 0.0)]);
        assert!(sys.validate().is_ok());
        sys.devices[1].p = 0.7;
        assert!(matches!(sys.validate(), Err(ProfileError::WeightsNotNormalized(_))));
        sys.set_weights_uniform();
        sys.devices[0].b = -1.0;
        assert!(matches!(sys.validate(), Err(ProfileError::InvalidDevice { .. })));
        sys.devices[0].b = 0.0;
        sys.devices[1].id = 5;
        assert!(matches!(sys.validate(), Err(ProfileError::IdOrder { .. })));
    }

    #[test]
    fn plan_validation() {
        let sys = system(vec![dev(0, 0.0, 0.0, 0.0), dev(1, 0.0, 0.0, 0.0), dev(2, 0.0, 0.0, 0.0)]);
        let mut plan = TrainPlan::uniform(3, 2, 2);
        assert!(plan.validate(&sys).is_ok());
        plan.pairs.push(ForwardPair {
            slow: 0,
            fast: 0,
            alpha: 0.5,
        });
        assert!(plan.validate(&sys).is_err());
        plan.pairs[0].fast = 1;
        assert!(plan.validate(&sys).is_ok());
        plan.pairs[0].alpha = 1.5;
        assert!(plan.validate(&sys).is_err());
        plan.pairs[0].alpha = 0.5;
        plan.tau = Staleness::Bounded(0);
        assert!(plan.validate(&sys).is_err());
    }
}
