use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{argmax, backward, forward, init_network, loss, predict, NetworkState, ParamSet};
use super::spec::NetworkSpec;
use super::CnnError;
use crate::exec::Exec;
use crate::grid::ImageGrid;

/// Floor applied by the learning-rate limiter so the rate never reaches 0.
pub const MIN_LEARNING_RATE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1.0,
            epochs: 10,
            batch_size: 3,
            init_seed: 1,
            shuffle_seed: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if !(self.initial_lr > 0.0 && self.initial_lr <= 1.0) {
            return Err(CnnError::InvalidConfig(format!(
                "initial learning rate {} outside (0, 1]",
                self.initial_lr
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CnnError::InvalidConfig("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrState {
    pub current: f64,
    pub iteration: usize,
}

impl LrState {
    pub fn new(initial: f64) -> Self {
        Self {
            current: limit_rate(initial),
            iteration: 0,
        }
    }
}

/// Linear limiter onto (0, 1].
fn limit_rate(v: f64) -> f64 {
    if v.is_nan() {
        return MIN_LEARNING_RATE;
    }
    v.clamp(MIN_LEARNING_RATE, 1.0)
}

/// `a_n = g(a_{n-1} / (floor(n / (N/2)) + 1) + e_n)` for iteration `n = previous + 1`.
pub fn next_learning_rate(state: LrState, epoch_error: f64, total_epochs: usize) -> LrState {
    let n = state.iteration + 1;
    let half = total_epochs.max(1) as f64 / 2.0;
    let divisor = (n as f64 / half).floor() + 1.0;
    LrState {
        current: limit_rate(state.current / divisor + epoch_error),
        iteration: n,
    }
}

/// One network input with its class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: ImageGrid,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Misclassification rate over the epoch's forward passes.
    pub train_error: f64,
    /// Misclassification rate on the held-out samples after the epoch, if any.
    pub test_error: Option<f64>,
    /// Rate used for the updates of this epoch.
    pub learning_rate: f64,
    /// Mean per-sample squared-error loss over the epoch.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub history: Vec<EpochRecord>,
}

fn check_samples(samples: &[Sample], spec: &NetworkSpec) -> Result<(), CnnError> {
    let expected = (spec.input_side, spec.input_side, spec.input_channels);
    for s in samples {
        if s.input.shape() != expected {
            return Err(CnnError::ShapeMismatch {
                expected: format!("{}x{}x{}", expected.0, expected.1, expected.2),
                got: format!("{:?}", s.input.shape()),
            });
        }
        if s.label >= spec.classes {
            return Err(CnnError::BadLabel {
                label: s.label,
                classes: spec.classes,
            });
        }
    }
    Ok(())
}

/// Misclassification rate under argmax.
pub fn error_rate(
    samples: &[Sample],
    spec: &NetworkSpec,
    state: &NetworkState,
    exec: Exec,
) -> Result<f64, CnnError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let preds = exec.map(samples, |s| predict(&s.input, spec, state).map(|(c, _)| c));
    let mut wrong = 0usize;
    for (p, s) in preds.into_iter().zip(samples) {
        if p? != s.label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / samples.len() as f64)
}

/// Summed gradient, loss and misclassifications over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStep {
    pub gradient: ParamSet,
    pub loss_sum: f64,
    pub wrong: usize,
}

/// Per-sample forward and backward passes over `batch` (indices into
/// `samples`), reduced in index order.
pub fn batch_gradient(
    samples: &[Sample],
    batch: &[usize],
    spec: &NetworkSpec,
    state: &NetworkState,
    exec: Exec,
) -> Result<BatchStep, CnnError> {
    let results = exec.map(batch, |&i| -> Result<_, CnnError> {
        let s = &samples[i];
        let (scores, cache) = forward(&s.input, spec, state)?;
        let g = backward(&cache, s.label, spec, state)?;
        Ok((g, loss(&scores, s.label), argmax(&scores) != s.label))
    });
    let mut step = BatchStep {
        gradient: ParamSet::zeros(spec)?,
        loss_sum: 0.0,
        wrong: 0,
    };
    for r in results {
        let (g, l, miss) = r?;
        step.gradient.add_scaled(&g, 1.0);
        step.loss_sum += l;
        step.wrong += usize::from(miss);
    }
    Ok(step)
}

/// Mini-batch gradient descent with the adaptive learning rate.
///
/// Each epoch shuffles with the seeded generator, takes batches of
/// `batch_size` (the last one may be short) and steps by `-lr * mean gradient`.
/// The rate is updated once per epoch from that epoch's training error.
/// Per-sample gradients are reduced in sample order, so results do not
/// depend on the execution strategy.
pub fn train(
    train_set: &[Sample],
    test_set: &[Sample],
    spec: &NetworkSpec,
    config: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome, CnnError> {
    config.validate()?;
    spec.plan()?;
    check_samples(train_set, spec)?;
    check_samples(test_set, spec)?;
    for class in 0..spec.classes {
        if !train_set.iter().any(|s| s.label == class) {
            return Err(CnnError::EmptyClass(class));
        }
    }

    let mut state = init_network(spec, config.init_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = LrState::new(config.initial_lr);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let rate = lr.current;
        let mut wrong = 0usize;
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let step = batch_gradient(train_set, batch, spec, &state, exec)?;
            loss_sum += step.loss_sum;
            wrong += step.wrong;
            state.params.add_scaled(&step.gradient, -rate / batch.len() as f64);
        }
        if !state.params.all_finite() {
            return Err(CnnError::Diverged { epoch });
        }
        let n = train_set.len() as f64;
        let train_error = wrong as f64 / n;
        let test_error = if test_set.is_empty() {
            None
        } else {
            Some(error_rate(test_set, spec, &state, exec)?)
        };
        history.push(EpochRecord {
            epoch,
            train_error,
            test_error,
            learning_rate: rate,
            loss: loss_sum / n,
        });
        log::info!(
            "epoch {epoch}: train_error={train_error:.4} test_error={} lr={rate:.6} loss={:.6}",
            test_error.map_or("-".to_string(), |e| format!("{e:.4}")),
            loss_sum / n
        );
        lr = next_learning_rate(lr, train_error, config.epochs);
    }
    Ok(TrainOutcome { state, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::spec::ActivationSpec;

    #[test]
    fn schedule_matches_hand_recurrence() {
        let expected = [1.0, 1.0, 1.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.03125 / 3.0];
        let mut s = LrState::new(1.0);
        for (n, want) in expected.iter().enumerate() {
            s = next_learning_rate(s, 0.0, 10);
            assert_eq!(s.iteration, n + 1);
            assert!((s.current - want).abs() < 1e-12, "n={} got {}", n + 1, s.current);
        }
        assert!((s.current - 0.010417).abs() < 1e-6);
    }

    #[test]
    fn schedule_clamps() {
        let s = next_learning_rate(LrState::new(1.0), 5.0, 10);
        assert_eq!(s.current, 1.0);
        let mut s = LrState::new(1e-6);
        for _ in 0..50 {
            s = next_learning_rate(s, 0.0, 4);
            assert!(s.current > 0.0 && s.current <= 1.0);
        }
        assert_eq!(s.current, MIN_LEARNING_RATE);
    }

    fn bright_dark(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let base = if label == 0 { -0.8 } else { 0.8 };
                let jitter = ((i * 37) % 11) as f64 / 55.0;
                Sample {
                    input: ImageGrid::from_fn(8, 8, 1, |y, x, _| base + jitter * (((y + x) % 3) as f64 - 1.0)),
                    label,
                }
            })
            .collect()
    }

    fn small_spec() -> NetworkSpec {
        NetworkSpec::from_stages(8, 1, &[(2, 3, 2)], 2, ActivationSpec::default())
    }

    #[test]
    fn separable_classes_are_learned() {
        let data = bright_dark(12);
        let spec = small_spec();
        let config = TrainConfig {
            epochs: 20,
            init_seed: 42,
            shuffle_seed: 42,
            ..TrainConfig::default()
        };
        let out = train(&data, &[], &spec, &config, Exec::Sequential).unwrap();
        let last = out.history.last().unwrap();
        assert!(last.train_error < 0.05, "{:?}", out.history);
        assert!(out.history[9].loss < out.history[0].loss);
        for s in &data {
            assert_eq!(predict(&s.input, &spec, &out.state).unwrap().0, s.label);
        }
    }

    #[test]
    fn single_sample_is_memorised() {
        let data = vec![Sample {
            input: ImageGrid::from_fn(8, 8, 1, |y, x, _| (y as f64 - x as f64) / 8.0),
            label: 0,
        }];
        let spec = NetworkSpec::from_stages(8, 1, &[(2, 3, 2)], 1, ActivationSpec::default());
        let config = TrainConfig {
            epochs: 5,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let out = train(&data, &data, &spec, &config, Exec::Sequential).unwrap();
        assert_eq!(out.history.last().unwrap().test_error, Some(0.0));
    }

    #[test]
    fn identical_seeds_are_bit_identical_across_strategies() {
        let data = bright_dark(10);
        let spec = small_spec();
        let config = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let a = train(&data, &data, &spec, &config, Exec::Sequential).unwrap();
        let b = train(&data, &data, &spec, &config, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 4);
    }

    #[test]
    fn missing_class_is_rejected() {
        let data: Vec<Sample> = bright_dark(6).into_iter().filter(|s| s.label == 0).collect();
        let err = train(&data, &[], &small_spec(), &TrainConfig::default(), Exec::Sequential).unwrap_err();
        assert_eq!(err, CnnError::EmptyClass(1));
    }

    #[test]
    fn invalid_rate_is_rejected() {
        let config = TrainConfig {
            initial_lr: 1.5,
            ..TrainConfig::default()
        };
        assert!(matches!(config.validate(), Err(CnnError::InvalidConfig(_))));
    }
}
