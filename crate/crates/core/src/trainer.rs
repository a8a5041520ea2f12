//! Training loop, validation metrics and the metrics CSV.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint;
use crate::data::{class_frequencies, enet_class_weights, ENET_C};
use crate::data::{generate, Dataset};
use crate::error::{Error, Result};
use crate::layers::xent::predict;
use crate::layers::{weighted_softmax_xent, LabelMap};
use crate::memory;
use crate::network::{LambdaStats, Network, NetworkSpec, NormMode, Phase};
use crate::optim::config::{ExperimentConfig, TrainConfig};
use crate::optim::gems::{active_counts, gems_rescale_filters};
use crate::optim::sgd::SgdState;
use crate::rng::{streams, Rng};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 16;

pub const CSV_HEADER: &str =
    "epoch,train_loss,val_loss,val_pixel_error,max_step_loss,wall_time_s,peak_bytes";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Mean step loss over the epoch; for epoch 0, the evaluated loss at init.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_pixel_error: f64,
    /// Largest single-step loss in the epoch, to make training spikes visible.
    pub max_step_loss: f64,
    pub wall_time_s: f64,
    /// Largest transient allocation of any training step in the epoch.
    pub peak_bytes: i64,
    /// Empty unless the network uses AGC.
    pub lambda: Vec<LambdaStats>,
}

/// Fraction of pixels whose labels differ.
pub fn pixel_error(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "label maps {:?} and {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let wrong = pred
        .data()
        .iter()
        .zip(truth.data())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// ENet weights from the pixel class frequencies of `set`, normalized to mean 1.
pub fn dataset_class_weights(set: &Dataset) -> Result<Vec<f64>> {
    enet_class_weights(&class_frequencies(set)?, ENET_C)
}

/// Eval-mode `(mean loss, pixel error)` over a whole split.
pub fn evaluate<T: Real>(
    network: &mut Network<T>,
    set: &Dataset,
    class_weights: &[T],
) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let mut loss_sum = 0.0;
    let mut wrong = 0.0;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (images, labels) = set.batch::<T>(chunk)?;
        let logits = network.predict(&images)?;
        let (loss, _) = weighted_softmax_xent(&logits, &labels, class_weights)?;
        // every pixel of the synthetic set is labelled, so chunk means weight by sample count
        loss_sum += loss.to_f64() * chunk.len() as f64;
        wrong += pixel_error(&predict(&logits)?, &labels)? * chunk.len() as f64;
    }
    Ok((loss_sum / set.len() as f64, wrong / set.len() as f64))
}

fn lambda_or_empty<T: Real>(network: &Network<T>) -> Result<Vec<LambdaStats>> {
    if network.mode() == NormMode::Agc {
        network.lambda_stats()
    } else {
        Ok(Vec::new())
    }
}

/// Trains `network` in place for `config.epochs` epochs. `on_epoch` sees each
/// record as soon as it is complete, starting with the epoch-0 evaluation.
pub fn train<T: Real>(
    network: &mut Network<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let spec = network.spec();
    if train_set.classes != spec.classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, network predicts {}",
            train_set.classes, spec.classes
        )));
    }
    spec.check_input(
        crate::data::IMAGE_CHANNELS,
        train_set.height,
        train_set.width,
    )?;

    let weights_f64 = dataset_class_weights(train_set)?;
    let weights: Vec<T> = weights_f64.iter().map(|&w| T::from_f64(w)).collect();
    let mut sgd = SgdState::<T>::new(config.effective_lr(), config.momentum)?;
    let mut shuffle_rng = Rng::derive(config.seed, streams::SHUFFLE);
    let timing = |start: Instant| {
        if config.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };

    let mut records = Vec::with_capacity(config.epochs + 1);
    let start = Instant::now();
    let (train_loss, _) = evaluate(network, train_set, &weights)?;
    let (val_loss, val_pixel_error) = evaluate(network, val_set, &weights)?;
    let record = MetricsRecord {
        epoch: 0,
        train_loss,
        val_loss,
        val_pixel_error,
        max_step_loss: train_loss,
        wall_time_s: timing(start),
        peak_bytes: 0,
        lambda: lambda_or_empty(network)?,
    };
    on_epoch(&record);
    records.push(record);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut max_step_loss = f64::NEG_INFINITY;
        let mut peak = 0i64;
        let batches: Vec<&[usize]> = order.chunks(config.minibatch_size).collect();
        for (step, batch) in batches.iter().enumerate() {
            let (loss, transient) = train_step(
                network,
                &mut sgd,
                train_set,
                batch,
                &weights,
                config.gems_enabled,
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    step,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            loss_sum += loss;
            max_step_loss = max_step_loss.max(loss);
            peak = peak.max(transient);
        }
        let (val_loss, val_pixel_error) = evaluate(network, val_set, &weights)?;
        let record = MetricsRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_loss,
            val_pixel_error,
            max_step_loss,
            wall_time_s: timing(start),
            peak_bytes: peak,
            lambda: lambda_or_empty(network)?,
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} err {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_pixel_error
        );
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

/// One forward/backward/update on the samples `batch`. Returns the loss and
/// the transient bytes allocated by the step on top of what was live before.
/// A non-finite loss is returned without updating anything.
pub fn train_step<T: Real>(
    network: &mut Network<T>,
    sgd: &mut SgdState<T>,
    set: &Dataset,
    batch: &[usize],
    class_weights: &[T],
    gems: bool,
) -> Result<(f64, i64)> {
    let base = memory::live_bytes();
    memory::reset_peak();
    let loss = {
        let (images, labels) = set.batch::<T>(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(images);
        let pass = network.forward(&mut tape, x, Phase::Train)?;
        let loss_var = tape.softmax_xent(pass.logits, &labels, class_weights)?;
        let loss = tape.value(loss_var).item()?.to_f64();
        if !loss.is_finite() {
            return Ok((loss, memory::peak_bytes() - base));
        }
        // activations are released during backward, so count first
        let counts = if gems {
            pass.activations
                .iter()
                .map(|a| a.map(|v| active_counts(tape.value(v))).transpose())
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut grads = tape.backward(loss_var)?;
        drop(tape);
        let mut g: Vec<Tensor<T>> = pass
            .params
            .iter()
            .map(|&v| {
                grads
                    .take(v)
                    .ok_or_else(|| Error::Tape("missing parameter gradient".into()))
            })
            .collect::<Result<_>>()?;
        for (unit, count) in counts.iter().enumerate() {
            if let Some((active, total)) = count {
                gems_rescale_filters(&mut g[pass.weight_params[unit]], active, *total)?;
            }
        }
        sgd.step(&mut network.params_mut(), &g)?;
        loss
    };
    Ok((loss, memory::peak_bytes() - base))
}

/// Header line for a network's metrics CSV.
pub fn csv_header(lambda_layers: &[String]) -> String {
    let mut h = CSV_HEADER.to_string();
    for l in lambda_layers {
        write!(h, ",lambda_{l}_min,lambda_{l}_mean,lambda_{l}_max").unwrap();
    }
    h
}

pub fn csv_row(r: &MetricsRecord) -> String {
    let mut s = format!(
        "{},{},{},{},{},{},{}",
        r.epoch,
        r.train_loss,
        r.val_loss,
        r.val_pixel_error,
        r.max_step_loss,
        r.wall_time_s,
        r.peak_bytes
    );
    for l in &r.lambda {
        write!(s, ",{},{},{}", l.min, l.mean, l.max).unwrap();
    }
    s
}

/// Full CSV text (header plus one row per record, newline terminated).
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let layers: Vec<String> = records
        .first()
        .map(|r| r.lambda.iter().map(|l| l.layer.clone()).collect())
        .unwrap_or_default();
    let mut out = csv_header(&layers);
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

/// λ trajectory of one layer: `(epoch, min, mean, max)` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTrajectory {
    pub layer: String,
    pub points: Vec<(usize, f64, f64, f64)>,
}

/// Extracts the λ columns of a metrics CSV.
pub fn lambda_trajectories(csv: &str) -> Result<Vec<LambdaTrajectory>> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty metrics file".into()))?
        .split(',')
        .collect();
    if header.first() != Some(&"epoch") {
        return Err(Error::Format(
            "metrics header must start with 'epoch'".into(),
        ));
    }
    let mut layers = Vec::new();
    for (i, col) in header.iter().enumerate() {
        if let Some(layer) = col
            .strip_prefix("lambda_")
            .and_then(|c| c.strip_suffix("_min"))
        {
            let mean = format!("lambda_{layer}_mean");
            let max = format!("lambda_{layer}_max");
            if header.get(i + 1) != Some(&mean.as_str()) || header.get(i + 2) != Some(&max.as_str())
            {
                return Err(Error::Format(format!(
                    "incomplete lambda columns for '{layer}'"
                )));
            }
            layers.push((
                i,
                LambdaTrajectory {
                    layer: layer.to_string(),
                    points: Vec::new(),
                },
            ));
        }
    }
    if layers.is_empty() {
        return Err(Error::Format(
            "no lambda columns; was this an AGC run?".into(),
        ));
    }
    for (lineno, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Format(format!(
                "row {} has {} cells, header has {}",
                lineno + 2,
                cells.len(),
                header.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i].parse().map_err(|_| {
                Error::Format(format!("row {}: bad number '{}'", lineno + 2, cells[i]))
            })
        };
        let epoch = cells[0]
            .parse()
            .map_err(|_| Error::Format(format!("row {}: bad epoch", lineno + 2)))?;
        for (i, t) in &mut layers {
            t.points.push((epoch, num(*i)?, num(*i + 1)?, num(*i + 2)?));
        }
    }
    Ok(layers.into_iter().map(|(_, t)| t).collect())
}

/// Result of [`run_experiment`].
#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub network: Network<f32>,
}

/// Generates the data, builds the network and trains it, all from `cfg`.
/// With `out_dir`, writes `metrics.csv`, `config.txt` and `final.ckpt` there,
/// flushing the CSV after every epoch.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = generate(&cfg.data)?;
    let spec =
        NetworkSpec::encoder_decoder(crate::data::IMAGE_CHANNELS, cfg.data.classes, &cfg.widths);
    let mut init_rng = Rng::derive(cfg.train.seed, streams::INIT);
    let mut network = Network::<f32>::build(
        &spec,
        cfg.train.norm_mode,
        &mut init_rng,
        cfg.train.identity_init,
    )?;

    let mut csv = String::new();
    let mut write_err = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    }
    let records = train(&mut network, &train_set, &val_set, &cfg.train, |r| {
        if csv.is_empty() {
            let layers: Vec<String> = r.lambda.iter().map(|l| l.layer.clone()).collect();
            csv = csv_header(&layers) + "\n";
        }
        csv.push_str(&csv_row(r));
        csv.push('\n');
        if let Some(dir) = out_dir {
            if let Err(e) = std::fs::write(dir.join("metrics.csv"), &csv) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if let Some(dir) = out_dir {
        checkpoint::save(&dir.join("final.ckpt"), &network.state())?;
    }
    Ok(RunOutcome { records, network })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetSpec;

    fn maps(a: &[u8], b: &[u8]) -> (LabelMap, LabelMap) {
        (
            LabelMap::new([1, 3, a.len() / 3], a.to_vec()).unwrap(),
            LabelMap::new([1, 3, b.len() / 3], b.to_vec()).unwrap(),
        )
    }

    #[test]
    fn pixel_error_examples() {
        let (a, b) = maps(&[0; 12], &[0; 12]);
        assert_eq!(pixel_error(&a, &b).unwrap(), 0.0);
        let (a, b) = maps(&[0; 12], &[1; 12]);
        assert_eq!(pixel_error(&a, &b).unwrap(), 1.0);
        let mut t = [2u8; 12];
        t[0] = 0;
        t[5] = 1;
        t[11] = 4;
        let (a, b) = maps(&[2; 12], &t);
        assert_eq!(pixel_error(&a, &b).unwrap(), 0.25);
        let (a, b) = maps(&[0; 12], &[0; 9]);
        assert!(pixel_error(&a, &b).is_err());
    }

    fn small_cfg(norm: NormMode) -> ExperimentConfig {
        ExperimentConfig {
            widths: vec![4, 6],
            data: DatasetSpec {
                height: 16,
                width: 16,
                n_train: 8,
                n_val: 4,
                pool_depth: 2,
                ..DatasetSpec::default()
            },
            train: TrainConfig {
                norm_mode: norm,
                minibatch_size: 2,
                epochs: 2,
                record_timing: false,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn zero_epochs_gives_initial_record_only() {
        let mut cfg = small_cfg(NormMode::Agc);
        cfg.train.epochs = 0;
        let out = run_experiment(&cfg, None).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].epoch, 0);
        assert_eq!(out.records[0].lambda.len(), 8);
    }

    #[test]
    fn records_are_sane_for_all_modes() {
        for mode in [NormMode::Agc, NormMode::Bn, NormMode::None] {
            let out = run_experiment(&small_cfg(mode), None).unwrap();
            assert_eq!(out.records.len(), 3);
            for r in &out.records {
                assert!((0.0..=1.0).contains(&r.val_pixel_error));
                assert!(r.train_loss.is_finite() && r.val_loss.is_finite());
                assert_eq!(r.lambda.is_empty(), mode != NormMode::Agc);
            }
            assert!(out.records[1].peak_bytes > 0);
        }
    }

    #[test]
    fn csv_round_trip_of_lambda_columns() {
        let out = run_experiment(&small_cfg(NormMode::Agc), None).unwrap();
        let csv = metrics_csv(&out.records);
        assert!(csv.starts_with(CSV_HEADER));
        let traj = lambda_trajectories(&csv).unwrap();
        assert_eq!(traj.len(), 8);
        assert_eq!(traj[0].layer, "enc1_conv1");
        assert_eq!(traj[0].points.len(), 3);
        assert_eq!(traj[0].points[0], (0, 1.0, 1.0, 1.0));

        let bn = run_experiment(&small_cfg(NormMode::Bn), None).unwrap();
        assert!(lambda_trajectories(&metrics_csv(&bn.records)).is_err());
    }

    #[test]
    fn diverging_run_reports_context() {
        let mut cfg = small_cfg(NormMode::None);
        cfg.train.base_lr = 1e6;
        match run_experiment(&cfg, None) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn gems_run_is_finite() {
        let mut cfg = small_cfg(NormMode::Agc);
        cfg.train.gems_enabled = true;
        let out = run_experiment(&cfg, None).unwrap();
        assert!(out.records.iter().all(|r| r.train_loss.is_finite()));
    }
}
