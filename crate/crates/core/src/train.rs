//! Mini-batch Adam training against squared error, and gradient checking.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::model::Tln;
use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad("patience must be between 1 and max_epochs");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Wall-clock seconds elapsed at the end of each epoch.
    pub elapsed_seconds: Vec<f64>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub wall_seconds: f64,
    /// Fingerprint of the returned parameters.
    pub snapshot_id: String,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from_json)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for (e, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            w.write_record([(e + 1).to_string(), t.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Mean squared error over all entries and its gradient `2(pred − target)/n`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let diff = pred.sub(target)?;
    let n = T::of(diff.len() as f64);
    let loss = diff.as_slice().iter().fold(T::zero(), |acc, &d| acc + d * d) / n;
    let grad = diff.scale(T::of(2.0) / n)?;
    Ok((loss, grad))
}

/// Step count and moment estimates, one vector per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(block_sizes: impl IntoIterator<Item = usize>) -> Self {
        let first_moment: Vec<Vec<T>> = block_sizes.into_iter().map(|n| vec![T::zero(); n]).collect();
        AdamState {
            step: 0,
            second_moment: first_moment.clone(),
            first_moment,
        }
    }
}

/// One bias-corrected Adam update applied in place.
///
/// `names` labels each block for error reporting; a non-finite gradient
/// leaves every parameter and the state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    names: &[String],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let blocks = params.len();
    if grads.len() != blocks || names.len() != blocks || state.first_moment.len() != blocks {
        return Err(Error::shape(
            "adam_step",
            format!("{blocks} parameter blocks"),
            format!("{} gradient blocks, {} state blocks", grads.len(), state.first_moment.len()),
        ));
    }
    for (b, ((p, g), name)) in params.iter().zip(grads).zip(names).enumerate() {
        if p.len() != g.len() || state.first_moment[b].len() != p.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: {} parameters", p.len()),
                format!("{} gradients", g.len()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }

    state.step += 1;
    let beta1 = T::of(cfg.adam_beta1);
    let beta2 = T::of(cfg.adam_beta2);
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.adam_epsilon);
    let t = state.step as i32;
    let correction1 = T::one() - beta1.powi(t);
    let correction2 = T::one() - beta2.powi(t);
    for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[b];
        let v = &mut state.second_moment[b];
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (T::one() - beta1) * g[i];
            v[i] = beta2 * v[i] + (T::one() - beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean per-sample MSE of `model` over `data`.
pub fn evaluate_loss<T: Scalar>(model: &Tln<T>, data: &WindowedDataset<T>) -> Result<T> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut total = T::zero();
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        total = total + mse_loss(&model.forward(x)?, y)?.0;
    }
    Ok(total / T::of(data.len() as f64))
}

/// Mean loss and summed-then-averaged gradients over `batch` (indices into
/// `data`), accumulated in the order given.
fn batch_gradient<T: Scalar>(model: &Tln<T>, data: &WindowedDataset<T>, batch: &[usize]) -> Result<(T, Vec<Vec<T>>)> {
    let mut acc: Vec<Vec<T>> = model.named_blocks().iter().map(|(_, b)| vec![T::zero(); b.len()]).collect();
    let mut loss = T::zero();
    for &i in batch {
        let (l, g) = mse_loss(&model.forward(&data.inputs[i])?, &data.targets[i])?;
        loss = loss + l;
        let (grads, _) = model.backward(&data.inputs[i], &g)?;
        let blocks = crate::model::named_blocks(&grads);
        for (a, (_, gb)) in acc.iter_mut().zip(blocks) {
            for (x, &y) in a.iter_mut().zip(gb) {
                *x = *x + y;
            }
        }
    }
    let n = T::of(batch.len() as f64);
    for a in &mut acc {
        for x in a.iter_mut() {
            *x = *x / n;
        }
    }
    Ok((loss / n, acc))
}

/// Trains `model` with Adam and early stopping on validation loss, returning
/// the parameters of the best validation epoch.
///
/// Each epoch shuffles the training samples with a generator seeded from
/// `cfg.seed` and drops the incomplete tail batch. A training set smaller
/// than `batch_size` is used as one full batch.
pub fn fit<T: Scalar>(
    model: &Tln<T>,
    train: &WindowedDataset<T>,
    val: &WindowedDataset<T>,
    cfg: &TrainConfig,
) -> Result<(Tln<T>, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    for data in [train, val] {
        let (x, y) = (&data.inputs[0], &data.targets[0]);
        if x.shape() != model.input_shape() || y.shape() != model.output_shape() {
            return Err(Error::shape(
                "fit",
                format!("model {:?} -> {:?}", model.input_shape(), model.output_shape()),
                format!("samples {} -> {}", x.shape_str(), y.shape_str()),
            ));
        }
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = model.clone();
    let names: Vec<String> = current.named_blocks().into_iter().map(|(n, _)| n).collect();
    let mut state = AdamState::new(current.named_blocks().iter().map(|(_, b)| b.len()));
    let batch_size = cfg.batch_size.min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = (current.clone(), T::infinity(), 0usize);
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        elapsed_seconds: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        epochs_run: 0,
        wall_seconds: 0.0,
        snapshot_id: String::new(),
    };
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let diverged = |e: Error| Error::Training {
            epoch,
            message: e.to_string(),
        };
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        let batches = order.len() / batch_size;
        for batch in order.chunks_exact(batch_size) {
            let (loss, grads) = batch_gradient(&current, train, batch).map_err(diverged)?;
            if !loss.is_finite() {
                return Err(diverged(Error::NonFinite("training loss".into())));
            }
            epoch_loss = epoch_loss + loss;
            let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
            let mut params = current.blocks_mut();
            adam_step(&mut params, &grad_refs, &names, &mut state, cfg).map_err(diverged)?;
            if params.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
                return Err(diverged(Error::NonFinite("parameters after update".into())));
            }
        }
        let train_loss = epoch_loss / T::of(batches as f64);
        let val_loss = evaluate_loss(&current, val).map_err(diverged)?;
        if !val_loss.is_finite() {
            return Err(diverged(Error::NonFinite("validation loss".into())));
        }
        report.train_loss.push(train_loss.as_f64());
        report.val_loss.push(val_loss.as_f64());
        report.elapsed_seconds.push(start.elapsed().as_secs_f64());
        report.epochs_run = epoch;
        log::debug!("epoch {epoch}: train {train_loss} val {val_loss}");

        if val_loss < best.1 {
            best = (current.clone(), val_loss, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop at epoch {epoch}; best epoch {}", best.2);
                break;
            }
        }
    }

    let (best_model, best_loss, best_epoch) = best;
    report.best_epoch = best_epoch;
    report.best_val_loss = best_loss.as_f64();
    report.wall_seconds = start.elapsed().as_secs_f64();
    report.snapshot_id = fingerprint(&best_model);
    Ok((best_model, report))
}

/// FNV-1a over the bit patterns of every parameter.
fn fingerprint<T: Scalar>(model: &Tln<T>) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for (_, block) in model.named_blocks() {
        for v in block {
            for byte in v.as_f64().to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    format!("{hash:016x}")
}

/// Relative error below which gradients are treated as absolute: the loss
/// is evaluated in floating point, so central differences carry an absolute
/// error of roughly `ε·loss/step` regardless of the gradient's size.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-4;

/// Largest relative disagreement between back-propagated gradients and
/// central finite differences of the MSE loss on one sample, over every
/// parameter.
///
/// Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, GRADIENT_CHECK_FLOOR)`.
pub fn gradient_check<T: Scalar>(model: &Tln<T>, input: &Tensor<T>, target: &Tensor<T>, step: T) -> Result<T> {
    if !(step > T::zero()) {
        return Err(Error::Config("gradient check step must be positive".into()));
    }
    let loss_at = |m: &Tln<T>| -> Result<T> { Ok(mse_loss(&m.forward(input)?, target)?.0) };
    let (_, g) = mse_loss(&model.forward(input)?, target)?;
    let (grads, _) = model.backward(input, &g)?;
    let analytic: Vec<T> = crate::model::named_blocks(&grads)
        .into_iter()
        .flat_map(|(_, b)| b.iter().copied())
        .collect();

    let mut probe = model.clone();
    let floor = T::of(GRADIENT_CHECK_FLOOR);
    let mut worst = T::zero();
    let mut flat_index = 0;
    let block_count = probe.blocks_mut().len();
    for b in 0..block_count {
        let len = probe.blocks_mut()[b].len();
        for i in 0..len {
            let original = probe.blocks_mut()[b][i];
            probe.blocks_mut()[b][i] = original + step;
            let plus = loss_at(&probe)?;
            probe.blocks_mut()[b][i] = original - step;
            let minus = loss_at(&probe)?;
            probe.blocks_mut()[b][i] = original;
            let numeric = (plus - minus) / (step + step);
            let a = analytic[flat_index];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            flat_index += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TlnConfig;
    use rand::Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    /// Random parameters everywhere, so kernels and biases all get exercised.
    fn randomized(model: &Tln<f64>, seed: u64) -> Tln<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = model.clone();
        for block in m.blocks_mut() {
            for v in block.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        m
    }

    fn dataset(inputs: Vec<Tensor<f64>>, targets: Vec<Tensor<f64>>) -> WindowedDataset<f64> {
        WindowedDataset::from_samples(inputs, targets).unwrap()
    }

    #[test]
    fn mse_loss_examples() {
        let a = Tensor::column(&[1.0, 2.0]).unwrap();
        let (l, g) = mse_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);

        let (l, g) = mse_loss(&Tensor::column(&[1.0, 1.0]).unwrap(), &Tensor::column(&[0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.as_slice(), &[1.0, 1.0]);

        let (l, _) = mse_loss(&Tensor::column(&[2.0, 2.0, 2.0]).unwrap(), &Tensor::column(&[1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert!((l - 2.0f64 / 3.0).abs() < 1e-15);

        assert!(matches!(
            mse_loss(&Tensor::column(&[1.0]).unwrap(), &a),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn adam_first_step() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.0f64];
        let mut state = AdamState::new([1]);
        adam_step(&mut [&mut p[..]], &[&[1.0]], &["w".into()], &mut state, &cfg).unwrap();
        // m̂ = 1 and v̂ = 1 after bias correction at t = 1.
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18, "{}", p[0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.5f64, -2.0];
        let mut state = AdamState::new([2]);
        adam_step(&mut [&mut p[..]], &[&[1.0, -1.0]], &["w".into()], &mut state, &cfg).unwrap();
        let after_first = p.clone();
        let m1 = state.first_moment[0].clone();
        adam_step(&mut [&mut p[..]], &[&[0.0, 0.0]], &["w".into()], &mut state, &cfg).unwrap();
        // Moments decay; the bias-corrected first moment is non-zero, so the
        // parameter still moves on the second step. A fresh state does not.
        assert!(state.first_moment[0][0].abs() < m1[0].abs());
        assert_ne!(p, after_first);

        let mut q = vec![0.5f64];
        let mut fresh = AdamState::new([1]);
        adam_step(&mut [&mut q[..]], &[&[0.0]], &["w".into()], &mut fresh, &cfg).unwrap();
        assert_eq!(q, vec![0.5]);
    }

    #[test]
    fn adam_blocks_are_independent() {
        let cfg = TrainConfig::default();
        let mut a = vec![1.0f64];
        let mut b = vec![1.0f64, 2.0];
        let mut state = AdamState::new([1, 2]);
        adam_step(
            &mut [&mut a[..], &mut b[..]],
            &[&[0.0], &[3.0, -3.0]],
            &["a".into(), "b".into()],
            &mut state,
            &cfg,
        )
        .unwrap();
        assert_eq!(a, vec![1.0]);
        assert!(b[0] < 1.0 && b[1] > 2.0);
    }

    #[test]
    fn adam_names_non_finite_block() {
        let cfg = TrainConfig::default();
        let mut a = vec![1.0f64];
        let mut b = vec![1.0f64];
        let mut state = AdamState::new([1, 1]);
        let err = adam_step(
            &mut [&mut a[..], &mut b[..]],
            &[&[0.1], &[f64::NAN]],
            &["layer0.a".into(), "layer0.b".into()],
            &mut state,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "layer0.b"));
        assert_eq!((a[0], b[0], state.step), (1.0, 1.0, 0));
    }

    #[test]
    fn small_step_does_not_increase_batch_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..10 {
            let base = Tln::<f64>::build(TlnConfig::new(5, 2, 2, 1).with_seed(trial)).unwrap();
            let model = randomized(&base, trial + 100);
            let inputs: Vec<_> = (0..8).map(|_| random_tensor(&mut rng, 5, 2)).collect();
            let targets: Vec<_> = (0..8).map(|_| random_tensor(&mut rng, 2, 1)).collect();
            let data = dataset(inputs, targets);
            let batch: Vec<usize> = (0..8).collect();
            let (before, grads) = batch_gradient(&model, &data, &batch).unwrap();
            let cfg = TrainConfig {
                learning_rate: 1e-6,
                ..TrainConfig::default()
            };
            let mut stepped = model.clone();
            let names: Vec<String> = stepped.named_blocks().into_iter().map(|(n, _)| n).collect();
            let mut state = AdamState::new(grads.iter().map(Vec::len));
            let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(&mut stepped.blocks_mut(), &refs, &names, &mut state, &cfg).unwrap();
            let (after, _) = batch_gradient(&stepped, &data, &batch).unwrap();
            assert!(after <= before, "trial {trial}: {after} > {before}");
        }
    }

    #[test]
    fn gradient_check_random_two_layer_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..4 {
            let cfg = TlnConfig::new(4, 2, 4, 2).with_hidden_shapes(vec![(4, 3)]).with_seed(seed);
            let model = randomized(&Tln::<f64>::build(cfg).unwrap(), seed);
            let x = random_tensor(&mut rng, 4, 2);
            let y = random_tensor(&mut rng, 4, 2);
            let err = gradient_check(&model, &x, &y, 1e-6).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn gradient_check_zero_loss_sample() {
        let model = Tln::<f64>::build(TlnConfig::new(4, 2, 2, 1).with_seed(1)).unwrap();
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(2), 4, 2);
        let y = model.forward(&x).unwrap();
        let (_, g) = mse_loss(&model.forward(&x).unwrap(), &y).unwrap();
        let (grads, _) = model.backward(&x, &g).unwrap();
        assert!(crate::model::named_blocks(&grads).iter().all(|(_, b)| b.iter().all(|&v| v == 0.0)));
        assert!(gradient_check(&model, &x, &y, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn fit_rejects_empty_data() {
        let model = Tln::<f64>::build(TlnConfig::new(3, 1, 1, 1)).unwrap();
        let empty = WindowedDataset::<f64>::from_samples(vec![], vec![]).unwrap();
        let one = dataset(vec![Tensor::zeros(3, 1).unwrap()], vec![Tensor::zeros(1, 1).unwrap()]);
        assert!(matches!(fit(&model, &empty, &one, &TrainConfig::default()), Err(Error::Config(_))));
        assert!(matches!(fit(&model, &one, &empty, &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn fit_zero_target_decreases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inputs: Vec<_> = (0..64).map(|_| random_tensor(&mut rng, 6, 1)).collect();
        let targets: Vec<_> = (0..64).map(|_| Tensor::zeros(2, 1).unwrap()).collect();
        let train = dataset(inputs.clone(), targets.clone());
        let model = Tln::<f64>::build(TlnConfig::new(6, 1, 2, 1).with_seed(3)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 2e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 200,
            ..TrainConfig::default()
        };
        let (trained, report) = fit(&model, &train, &train, &cfg).unwrap();
        let initial = evaluate_loss(&model, &train).unwrap();
        assert_eq!(report.epochs_run, 200);
        assert!(
            report.val_loss.windows(2).all(|w| w[1] <= w[0] + 1e-6 * initial),
            "{:?}",
            report.val_loss
        );
        assert!(report.best_val_loss < 1e-2 * initial);
        assert!(trained.named_blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn fit_learns_window_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut make = |n: usize| {
            let inputs: Vec<_> = (0..n).map(|_| random_tensor(&mut rng, 10, 1)).collect();
            let targets = inputs
                .iter()
                .map(|x| Tensor::column(&[x.as_slice().iter().sum::<f64>() / 10.0]).unwrap())
                .collect();
            dataset(inputs, targets)
        };
        let train = make(500);
        let val = make(100);
        let model = Tln::<f64>::build(TlnConfig::new(10, 1, 1, 1).with_seed(1)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            ..TrainConfig::default()
        };
        let (_, report) = fit(&model, &train, &val, &cfg).unwrap();
        assert!(report.best_val_loss < 1e-4, "{}", report.best_val_loss);
        assert!(report.best_epoch <= report.epochs_run);
        assert!(report.elapsed_seconds.windows(2).all(|w| w[1] >= w[0]));
        assert!(report.wall_seconds >= 0.0);
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs: Vec<_> = (0..40).map(|_| random_tensor(&mut rng, 5, 2)).collect();
        let targets: Vec<_> = (0..40).map(|_| random_tensor(&mut rng, 3, 1)).collect();
        let train = dataset(inputs[..30].to_vec(), targets[..30].to_vec());
        let val = dataset(inputs[30..].to_vec(), targets[30..].to_vec());
        let model = Tln::<f64>::build(TlnConfig::new(5, 2, 3, 1).with_seed(2)).unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 5,
            patience: 5,
            seed: 77,
            ..TrainConfig::default()
        };
        let (m1, r1) = fit(&model, &train, &val, &cfg).unwrap();
        let (m2, r2) = fit(&model, &train, &val, &cfg).unwrap();
        assert_eq!(r1.train_loss, r2.train_loss);
        assert_eq!(r1.val_loss, r2.val_loss);
        assert_eq!(r1.snapshot_id, r2.snapshot_id);
        assert_eq!(m1, m2);
    }

    #[test]
    fn report_csv_has_one_row_per_epoch() {
        let report = TrainReport {
            train_loss: vec![0.5, 0.25],
            val_loss: vec![0.4, 0.3],
            elapsed_seconds: vec![0.1, 0.2],
            best_epoch: 2,
            best_val_loss: 0.3,
            epochs_run: 2,
            wall_seconds: 0.2,
            snapshot_id: "0".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        report.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,train_loss,val_loss\n1,0.5,0.4\n2,0.25,0.3\n");
        let back: TrainReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }
}
