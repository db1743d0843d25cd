//! Multinomial logistic regression trained with mini-batch SGD.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;

const CHECKPOINT_MAGIC: &[u8; 4] = b"FTMP";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("dimension mismatch: model expects {expected} features/classes, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("invalid learning-rate schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid theory constants: {0}")]
    InvalidConstants(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = LearnerError> = std::result::Result<T, E>;

/// Weights are stored row-major as `input_dim x num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    input_dim: usize,
    num_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            num_classes,
            weights: vec![0.0; input_dim * num_classes],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn from_parts(
        input_dim: usize,
        num_classes: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != input_dim * num_classes {
            return Err(LearnerError::DimensionMismatch {
                expected: input_dim * num_classes,
                found: weights.len(),
            });
        }
        if bias.len() != num_classes {
            return Err(LearnerError::DimensionMismatch {
                expected: num_classes,
                found: bias.len(),
            });
        }
        Ok(Self {
            input_dim,
            num_classes,
            weights,
            bias,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self, feature: usize, class: usize) -> f64 {
        self.weights[feature * self.num_classes + class]
    }

    /// All coordinates, weights first.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.num_classes == other.num_classes
    }

    pub fn fill(&mut self, value: f64) {
        self.iter_mut().for_each(|v| *v = value);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Convex combination `t * a + (1 - t) * b`.
    pub fn lerp(a: &Self, b: &Self, t: f64) -> Self {
        let mut out = a.clone();
        for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b.iter())) {
            *o = t * x + (1.0 - t) * y;
        }
        out
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.input_dim() != self.input_dim {
            return Err(LearnerError::DimensionMismatch {
                expected: self.input_dim,
                found: data.input_dim(),
            });
        }
        if data.num_classes() > self.num_classes {
            return Err(LearnerError::DimensionMismatch {
                expected: self.num_classes,
                found: data.num_classes(),
            });
        }
        Ok(())
    }

    /// `logits[c] = b[c] + sum_j x[j] * W[j][c]`.
    pub fn logits_into(&self, x: &[f64], logits: &mut [f64]) {
        logits.copy_from_slice(&self.bias);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let row = &self.weights[j * self.num_classes..(j + 1) * self.num_classes];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += xj * w;
            }
        }
    }

    /// Writes a little-endian checkpoint: magic, version, dims, then the
    /// weights row-major followed by the bias.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u64::<LittleEndian>(self.input_dim as u64)?;
        out.write_u64::<LittleEndian>(self.num_classes as u64)?;
        for &v in self.iter() {
            out.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(LearnerError::Checkpoint(format!("unexpected magic {magic:?}")));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(LearnerError::Checkpoint(format!("unsupported version {version}")));
        }
        let input_dim = input.read_u64::<LittleEndian>()? as usize;
        let num_classes = input.read_u64::<LittleEndian>()? as usize;
        let mut params = Self::zeros(input_dim, num_classes);
        for v in params.iter_mut() {
            *v = input.read_f64::<LittleEndian>()?;
        }
        Ok(params)
    }
}

/// Log-softmax normaliser, computed stably.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln()
}

fn check_batch(params: &ModelParams, data: &Dataset, batch: &[usize]) -> Result<()> {
    params.check_data(data)?;
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= data.len()) {
        return Err(LearnerError::IndexOutOfRange(bad));
    }
    Ok(())
}

/// Mean cross-entropy of the samples `batch` of `data`.
pub fn loss(params: &ModelParams, data: &Dataset, batch: &[usize]) -> Result<f64> {
    check_batch(params, data, batch)?;
    let mut logits = vec![0.0; params.num_classes];
    let mut total = 0.0;
    for &i in batch {
        params.logits_into(data.features(i), &mut logits);
        total += log_sum_exp(&logits) - logits[data.label(i)];
    }
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy over the whole dataset.
pub fn dataset_loss(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    loss(params, data, &all)
}

/// Reusable buffers for [`gradient_into`].
#[derive(Debug, Default)]
pub struct GradWorkspace {
    logits: Vec<f64>,
}

/// Mean gradient of the cross-entropy over `batch`, written into `grad`.
pub fn gradient_into(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    grad: &mut ModelParams,
    ws: &mut GradWorkspace,
) -> Result<()> {
    check_batch(params, data, batch)?;
    if !grad.same_shape(params) {
        *grad = ModelParams::zeros(params.input_dim, params.num_classes);
    } else {
        grad.fill(0.0);
    }
    let c = params.num_classes;
    ws.logits.resize(c, 0.0);
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let x = data.features(i);
        params.logits_into(x, &mut ws.logits);
        let lse = log_sum_exp(&ws.logits);
        for l in ws.logits.iter_mut() {
            *l = (*l - lse).exp() * scale;
        }
        ws.logits[data.label(i)] -= scale;
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let row = &mut grad.weights[j * c..(j + 1) * c];
            for (g, r) in row.iter_mut().zip(&ws.logits) {
                *g += xj * r;
            }
        }
        for (g, r) in grad.bias.iter_mut().zip(&ws.logits) {
            *g += r;
        }
    }
    Ok(())
}

pub fn gradient(params: &ModelParams, data: &Dataset, batch: &[usize]) -> Result<ModelParams> {
    let mut grad = ModelParams::zeros(params.input_dim, params.num_classes);
    gradient_into(params, data, batch, &mut grad, &mut GradWorkspace::default())?;
    Ok(grad)
}

/// `params - eta * grad`.
pub fn sgd_step(params: &ModelParams, grad: &ModelParams, eta: f64) -> ModelParams {
    let mut next = params.clone();
    next.add_scaled(-eta, grad);
    next
}

/// Index of the largest logit; ties go to the lowest class.
pub fn predict(params: &ModelParams, x: &[f64], logits: &mut [f64]) -> usize {
    params.logits_into(x, logits);
    let mut best = 0;
    for (c, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = c;
        }
    }
    best
}

/// Fraction of `indices` classified correctly.
pub fn accuracy_on(params: &ModelParams, data: &Dataset, indices: &[usize]) -> Result<f64> {
    check_batch(params, data, indices)?;
    let mut logits = vec![0.0; params.num_classes];
    let correct = indices
        .iter()
        .filter(|&&i| predict(params, data.features(i), &mut logits) == data.label(i))
        .count();
    Ok(correct as f64 / indices.len() as f64)
}

/// Mean loss and accuracy over `indices` in a single pass.
pub fn loss_and_accuracy(
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, f64)> {
    check_batch(params, data, indices)?;
    let mut logits = vec![0.0; params.num_classes];
    let mut total = 0.0;
    let mut correct = 0usize;
    for &i in indices {
        let label = data.label(i);
        if predict(params, data.features(i), &mut logits) == label {
            correct += 1;
        }
        total += log_sum_exp(&logits) - logits[label];
    }
    let n = indices.len() as f64;
    Ok((total / n, correct as f64 / n))
}

pub fn accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    accuracy_on(params, data, &all)
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LrSchedule {
    /// `eta0 * decay^round`.
    Experimental { eta0: f64, decay: f64 },
    /// `2 / (mu * (gamma + t))` with `t` the local iteration index.
    Theoretical { mu: f64, gamma: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Experimental {
            eta0: 0.01,
            decay: 0.995,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Experimental { eta0, decay } => {
                if !(eta0 > 0.0 && eta0.is_finite()) {
                    return Err(LearnerError::InvalidSchedule(format!("eta0 = {eta0}")));
                }
                if !(decay > 0.0 && decay <= 1.0) {
                    return Err(LearnerError::InvalidSchedule(format!("decay = {decay}")));
                }
            }
            LrSchedule::Theoretical { mu, gamma } => {
                if !(mu > 0.0 && gamma > 0.0 && mu.is_finite() && gamma.is_finite()) {
                    return Err(LearnerError::InvalidSchedule(format!(
                        "mu = {mu}, gamma = {gamma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Step size for local iteration `iteration` of coordination round `round`.
    pub fn eta(&self, round: u64, iteration: u64) -> f64 {
        match *self {
            LrSchedule::Experimental { eta0, decay } => eta0 * decay.powf(round as f64),
            LrSchedule::Theoretical { mu, gamma } => 2.0 / (mu * (gamma + iteration as f64)),
        }
    }

    /// Checks `eta_t <= 2 * eta_{t + h + tau}` for all `t < horizon`, where `t`
    /// indexes iterations (theoretical) or rounds (experimental).
    pub fn satisfies_staleness_condition(&self, h: u64, tau: u64, horizon: u64) -> bool {
        (0..horizon).all(|t| {
            let (now, later) = match self {
                LrSchedule::Experimental { .. } => (self.eta(t, 0), self.eta(t + h + tau, 0)),
                LrSchedule::Theoretical { .. } => (self.eta(0, t), self.eta(0, t + h + tau)),
            };
            now <= 2.0 * later
        })
    }
}

/// Problem constants of a `mu`-strongly convex, `L`-smooth objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub mu: f64,
    pub l: f64,
    pub g2: f64,
    pub sigma2: Vec<f64>,
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        let all_pos = [self.mu, self.l, self.g2]
            .iter()
            .chain(self.sigma2.iter())
            .all(|v| *v > 0.0 && v.is_finite());
        if !all_pos {
            return Err(LearnerError::InvalidConstants("all constants must be positive".into()));
        }
        if self.kappa() < 1.0 {
            return Err(LearnerError::InvalidConstants(format!(
                "kappa = {} < 1 (L must be at least mu)",
                self.kappa()
            )));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    /// `max(8 kappa, e)` for synchronous coordination.
    pub fn gamma_sync(&self, epochs: u64) -> f64 {
        (8.0 * self.kappa()).max(epochs as f64)
    }

    /// `max(8 kappa, tau + H)` for staleness-bounded coordination.
    pub fn gamma_async(&self, tau: u64, max_epochs: u64) -> f64 {
        (8.0 * self.kappa()).max((tau + max_epochs) as f64)
    }

    pub fn schedule(&self, gamma: f64) -> LrSchedule {
        LrSchedule::Theoretical { mu: self.mu, gamma }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Dataset {
        let features: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Dataset::new(features, labels, dim, classes).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, dim: usize, classes: usize, scale: f64) -> ModelParams {
        let mut p = ModelParams::zeros(dim, classes);
        for v in p.iter_mut() {
            *v = scale * (rng.random::<f64>() * 2.0 - 1.0);
        }
        p
    }

    /// Per-sample loop written without shared helpers.
    fn naive_loss(p: &ModelParams, data: &Dataset, batch: &[usize]) -> f64 {
        let mut total = 0.0;
        for &i in batch {
            let x = data.features(i);
            let z: Vec<f64> = (0..p.num_classes())
                .map(|c| p.bias[c] + (0..p.input_dim()).map(|j| x[j] * p.weight(j, c)).sum::<f64>())
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            total += -(z[data.label(i)].exp() / denom).ln();
        }
        total / batch.len() as f64
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn zero_model_has_uniform_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_dataset(&mut rng, 17, 4, 10);
        let idx: Vec<usize> = (0..17).collect();
        let l = loss(&ModelParams::zeros(4, 10), &data, &idx).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((l - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn separated_logits_drive_loss_to_zero() {
        let data = Dataset::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2, 2).unwrap();
        let mut p = ModelParams::zeros(2, 2);
        let mut last = f64::INFINITY;
        for margin in [1.0, 10.0, 100.0] {
            p.weights = vec![margin, -margin, -margin, margin];
            let l = loss(&p, &data, &[0, 1]).unwrap();
            assert!(l < last && l >= 0.0);
            last = l;
        }
        assert!(last < 1e-80);
    }

    #[test]
    fn loss_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let data = random_dataset(&mut rng, 30, 6, 5);
            let p = random_params(&mut rng, 6, 5, 2.0);
            let batch: Vec<usize> = (0..12).map(|_| rng.random_range(0..30)).collect();
            let fast = loss(&p, &data, &batch).unwrap();
            assert!((fast - naive_loss(&p, &data, &batch)).abs() < 1e-10);
        }
    }

    #[test]
    fn loss_rejects_mismatch_and_empty() {
        let data = Dataset::new(vec![0.5; 6], vec![0, 1], 3, 2).unwrap();
        assert!(matches!(
            loss(&ModelParams::zeros(4, 2), &data, &[0]),
            Err(LearnerError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            loss(&ModelParams::zeros(3, 2), &data, &[]),
            Err(LearnerError::EmptyBatch)
        ));
        assert!(matches!(
            gradient(&ModelParams::zeros(3, 2), &data, &[2]),
            Err(LearnerError::IndexOutOfRange(2))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_dataset(&mut rng, 20, 3, 4);
        let p = random_params(&mut rng, 3, 4, 1.0);
        let batch: Vec<usize> = (0..8).collect();
        let g = gradient(&p, &data, &batch).unwrap();
        let h = 1e-5;
        for (k, &gk) in g.iter().enumerate() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            *plus.iter_mut().nth(k).unwrap() += h;
            *minus.iter_mut().nth(k).unwrap() -= h;
            let fd = (loss(&plus, &data, &batch).unwrap() - loss(&minus, &data, &batch).unwrap())
                / (2.0 * h);
            assert!((fd - gk).abs() <= 1e-5 * fd.abs().max(gk.abs()).max(1e-3));
        }
    }

    #[test]
    fn single_sample_and_duplicated_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_dataset(&mut rng, 10, 4, 3);
        let p = random_params(&mut rng, 4, 3, 1.0);
        let g1 = gradient(&p, &data, &[7]).unwrap();
        let g1b = gradient(&p, &data, &[7, 7, 7]).unwrap();
        assert!(g1.max_abs_diff(&g1b) < 1e-15);

        let batch = [1, 4, 6];
        let dup = [1, 1, 4, 4, 6, 6];
        let ga = gradient(&p, &data, &batch).unwrap();
        let gb = gradient(&p, &data, &dup).unwrap();
        assert!(ga.max_abs_diff(&gb) < 1e-14);
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 3, 2, 1.0);
        let zero = ModelParams::zeros(3, 2);
        assert_eq!(sgd_step(&p, &zero, 0.5), p);
        let g = random_params(&mut rng, 3, 2, 1.0);
        let stepped = sgd_step(&zero, &g, 1.0);
        for (s, gv) in stepped.iter().zip(g.iter()) {
            assert_eq!(*s, -gv);
        }
    }

    #[test]
    fn sgd_decreases_scalar_quadratic() {
        // f(w) = L/2 * w^2 with L = 4: any eta < 2/L contracts.
        let l = 4.0;
        for eta in [0.05, 0.2, 0.45] {
            let mut w = ModelParams::from_parts(1, 1, vec![3.0], vec![0.0]).unwrap();
            let mut prev = 0.5 * l * 9.0;
            for _ in 0..50 {
                let g = ModelParams::from_parts(1, 1, vec![l * w.weights[0]], vec![0.0]).unwrap();
                w = sgd_step(&w, &g, eta);
                let f = 0.5 * l * w.weights[0] * w.weights[0];
                assert!(f <= prev);
                prev = f;
            }
        }
    }

    #[test]
    fn accuracy_cases() {
        let data = Dataset::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.1], vec![0, 1, 0], 2, 2).unwrap();
        let p = ModelParams::from_parts(2, 2, vec![5.0, -5.0, -5.0, 5.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(accuracy(&p, &data).unwrap(), 1.0);

        let single = Dataset::new(vec![0.3, 0.9, 0.2, 0.1], vec![1, 1], 2, 2).unwrap();
        let always_one = ModelParams::from_parts(2, 2, vec![0.0; 4], vec![0.0, 1.0]).unwrap();
        assert_eq!(accuracy(&always_one, &single).unwrap(), 1.0);

        // All-zero logits tie; the lowest class wins.
        assert_eq!(accuracy(&ModelParams::zeros(2, 2), &single).unwrap(), 0.0);
        assert!(matches!(
            accuracy_on(&p, &data, &[]),
            Err(LearnerError::EmptyBatch)
        ));
    }

    #[test]
    fn random_weights_are_at_chance() {
        let mut accs = Vec::new();
        for seed in 0..5 {
            let data = crate::datagen::synth_classification(10, 20, 300, 3.0, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let p = random_params(&mut rng, 20, 10, 0.01);
            accs.push(accuracy(&p, &data).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.10).abs() <= 0.03, "mean accuracy {mean}");
    }

    #[test]
    fn schedules() {
        let s = LrSchedule::default();
        assert_eq!(s.eta(0, 0), 0.01);
        let mut prev = f64::INFINITY;
        for r in 0..500 {
            let eta = s.eta(r, 0);
            assert!(eta > 0.0 && eta < prev);
            prev = eta;
        }
        let c = TheoryConstants {
            mu: 0.5,
            l: 2.0,
            g2: 1.0,
            sigma2: vec![1.0],
        };
        c.validate().unwrap();
        for (h, tau) in [(5u64, 1u64), (20, 4), (50, 50)] {
            let sched = c.schedule(c.gamma_async(tau, h));
            assert!(sched.satisfies_staleness_condition(h, tau, 10_000));
            let mut prev = f64::INFINITY;
            for t in 0..1000 {
                let eta = sched.eta(0, t);
                assert!(eta <= prev);
                prev = eta;
            }
        }
        // Too small a gamma breaks the condition at t = 0.
        let bad = LrSchedule::Theoretical { mu: 1.0, gamma: 1.0 };
        assert!(!bad.satisfies_staleness_condition(10, 10, 5));
        assert!(LrSchedule::Experimental { eta0: 0.1, decay: 1.5 }.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 5, 3, 1.0);
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 8 * 18);
        assert_eq!(ModelParams::read_checkpoint(&buf[..]).unwrap(), p);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(ModelParams::read_checkpoint(&bad[..]).is_err());
        assert!(ModelParams::read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }
}
