//! Paired AGC/BN training-step benchmark.
//!
//! Both modes share the network spec, the init seed and one fixed batch of
//! synthetic data. Each mode runs its warmup and timed steps back to back
//! on the calling thread; the normalization mode is the only difference.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{generate, DatasetSpec};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec, NormMode};
use crate::optim::sgd::SgdState;
use crate::rng::{streams, Rng};
use crate::trainer::{dataset_class_weights, train_step};

pub const MIN_TIMED_STEPS: usize = 30;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub minibatch: usize,
    /// Timed steps per mode; at least [`MIN_TIMED_STEPS`].
    pub steps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub widths: Vec<usize>,
    pub learning_rate: f64,
    /// Transient bytes a single step may use; exceeding it counts as out of memory.
    pub memory_limit: Option<i64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            minibatch: 8,
            steps: MIN_TIMED_STEPS,
            warmup: 3,
            seed: 0,
            height: 64,
            width: 64,
            classes: 5,
            widths: vec![16, 32, 64, 64],
            learning_rate: 0.02,
            memory_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModeOutcome {
    Completed {
        mean_step_ms: f64,
        median_step_ms: f64,
        peak_transient_bytes: i64,
    },
    OutOfMemory {
        step: usize,
        requested_bytes: i64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: NormMode,
    pub outcome: ModeOutcome,
}

impl ModeReport {
    pub fn mean_step_ms(&self) -> Option<f64> {
        match self.outcome {
            ModeOutcome::Completed { mean_step_ms, .. } => Some(mean_step_ms),
            ModeOutcome::OutOfMemory { .. } => None,
        }
    }

    pub fn peak_transient_bytes(&self) -> Option<i64> {
        match self.outcome {
            ModeOutcome::Completed {
                peak_transient_bytes,
                ..
            } => Some(peak_transient_bytes),
            ModeOutcome::OutOfMemory { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub minibatch: usize,
    pub steps: usize,
    pub warmup: usize,
    pub agc: ModeReport,
    pub bn: ModeReport,
}

pub const CSV_HEADER: &str =
    "minibatch,steps,agc_step_ms,bn_step_ms,agc_peak_bytes,bn_peak_bytes,speedup,memory_ratio";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "oom".to_string(), |v| v.to_string())
}

impl BenchReport {
    /// BN mean step time divided by AGC's; above 1 means AGC is faster.
    pub fn speedup(&self) -> Option<f64> {
        Some(self.bn.mean_step_ms()? / self.agc.mean_step_ms()?)
    }

    /// AGC peak transient bytes divided by BN's; below 1 means AGC uses less.
    pub fn memory_ratio(&self) -> Option<f64> {
        Some(self.agc.peak_transient_bytes()? as f64 / self.bn.peak_transient_bytes()? as f64)
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        writeln!(s, "minibatch={}", self.minibatch).unwrap();
        writeln!(s, "steps={}", self.steps).unwrap();
        writeln!(s, "warmup={}", self.warmup).unwrap();
        for m in [&self.agc, &self.bn] {
            match &m.outcome {
                ModeOutcome::Completed {
                    mean_step_ms,
                    median_step_ms,
                    peak_transient_bytes,
                } => {
                    writeln!(s, "{}.status=ok", m.mode).unwrap();
                    writeln!(s, "{}.mean_step_ms={mean_step_ms:.4}", m.mode).unwrap();
                    writeln!(s, "{}.median_step_ms={median_step_ms:.4}", m.mode).unwrap();
                    writeln!(s, "{}.peak_transient_bytes={peak_transient_bytes}", m.mode).unwrap();
                }
                ModeOutcome::OutOfMemory {
                    step,
                    requested_bytes,
                } => {
                    writeln!(s, "{}.status=oom", m.mode).unwrap();
                    writeln!(s, "{}.oom_step={step}", m.mode).unwrap();
                    writeln!(s, "{}.oom_requested_bytes={requested_bytes}", m.mode).unwrap();
                }
            }
        }
        writeln!(
            s,
            "speedup={}",
            opt(self.speedup().map(|v| format!("{v:.4}")))
        )
        .unwrap();
        writeln!(
            s,
            "memory_ratio={}",
            opt(self.memory_ratio().map(|v| format!("{v:.4}")))
        )
        .unwrap();
        s
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.minibatch,
            self.steps,
            opt(self.agc.mean_step_ms().map(|v| format!("{v:.4}"))),
            opt(self.bn.mean_step_ms().map(|v| format!("{v:.4}"))),
            opt(self.agc.peak_transient_bytes()),
            opt(self.bn.peak_transient_bytes()),
            opt(self.speedup().map(|v| format!("{v:.4}"))),
            opt(self.memory_ratio().map(|v| format!("{v:.4}"))),
        )
    }
}

fn run_mode(cfg: &BenchConfig, spec: &NetworkSpec, mode: NormMode) -> Result<ModeReport> {
    let data = DatasetSpec {
        height: cfg.height,
        width: cfg.width,
        classes: cfg.classes,
        n_train: cfg.minibatch,
        n_val: 0,
        seed: cfg.seed,
        pool_depth: cfg.widths.len(),
    };
    let (set, _) = generate(&data)?;
    let weights: Vec<f32> = dataset_class_weights(&set)?
        .iter()
        .map(|&w| w as f32)
        .collect();
    let mut network =
        Network::<f32>::build(spec, mode, &mut Rng::derive(cfg.seed, streams::INIT), false)?;
    let mut sgd = SgdState::new(cfg.learning_rate, 0.9)?;
    let batch: Vec<usize> = (0..cfg.minibatch).collect();

    let mut times = Vec::with_capacity(cfg.steps);
    let mut peak = 0;
    for step in 0..cfg.warmup + cfg.steps {
        let start = Instant::now();
        let (loss, transient) = train_step(&mut network, &mut sgd, &set, &batch, &weights, false)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "{mode} bench loss at step {step}"
            )));
        }
        if cfg.memory_limit.is_some_and(|limit| transient > limit) {
            return Ok(ModeReport {
                mode,
                outcome: ModeOutcome::OutOfMemory {
                    step,
                    requested_bytes: transient,
                },
            });
        }
        if step >= cfg.warmup {
            times.push(elapsed);
            peak = peak.max(transient);
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    Ok(ModeReport {
        mode,
        outcome: ModeOutcome::Completed {
            mean_step_ms: mean,
            median_step_ms: median,
            peak_transient_bytes: peak,
        },
    })
}

/// Runs AGC, then BN, on identical data and initial weights.
pub fn bench_pair(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.steps < MIN_TIMED_STEPS {
        return Err(Error::invalid(format!(
            "need at least {MIN_TIMED_STEPS} timed steps, got {}",
            cfg.steps
        )));
    }
    if cfg.minibatch == 0 {
        return Err(Error::invalid("minibatch must be at least 1"));
    }
    let spec = NetworkSpec::encoder_decoder(crate::data::IMAGE_CHANNELS, cfg.classes, &cfg.widths);
    spec.validate()?;
    spec.check_input(crate::data::IMAGE_CHANNELS, cfg.height, cfg.width)?;
    Ok(BenchReport {
        minibatch: cfg.minibatch,
        steps: cfg.steps,
        warmup: cfg.warmup,
        agc: run_mode(cfg, &spec, NormMode::Agc)?,
        bn: run_mode(cfg, &spec, NormMode::Bn)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            minibatch: 2,
            height: 8,
            width: 8,
            widths: vec![2, 3],
            warmup: 1,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn too_few_steps_rejected() {
        assert!(bench_pair(&BenchConfig {
            steps: 0,
            ..small()
        })
        .is_err());
        assert!(bench_pair(&BenchConfig {
            steps: 29,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn small_pair_reports_both_modes() {
        let r = bench_pair(&small()).unwrap();
        assert_eq!(r.agc.mode, NormMode::Agc);
        assert_eq!(r.bn.mode, NormMode::Bn);
        assert!(r.speedup().unwrap() > 0.0);
        assert!(r.memory_ratio().unwrap() < 1.0);
        let kv = r.to_key_value();
        assert!(kv.contains("agc.mean_step_ms=") && kv.contains("bn.peak_transient_bytes="));
        assert_eq!(
            r.csv_row().split(',').count(),
            CSV_HEADER.split(',').count()
        );
    }

    #[test]
    fn memory_limit_reports_oom() {
        let r = bench_pair(&BenchConfig {
            memory_limit: Some(1),
            ..small()
        })
        .unwrap();
        assert!(matches!(
            r.agc.outcome,
            ModeOutcome::OutOfMemory { step: 0, .. }
        ));
        assert_eq!(r.speedup(), None);
        assert!(r.csv_row().contains("oom"));
    }
}
