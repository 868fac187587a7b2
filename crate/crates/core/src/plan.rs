//! Training arithmetic: parallel layout, learning-rate schedule and the
//! fine-tuning hyper-parameter grid. Nothing here launches training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub gpus: u64,
    pub model_parallel: u64,
    pub data_parallel: u64,
    pub micro_batch: u64,
    pub grad_accum: u64,
    pub global_batch: u64,
}

impl TrainPlan {
    pub fn check(&self) -> Result<()> {
        if self.model_parallel * self.data_parallel != self.gpus {
            return Err(Error::Layout(format!(
                "model_parallel x data_parallel = {} x {} != gpus = {}",
                self.model_parallel, self.data_parallel, self.gpus
            )));
        }
        if self.data_parallel * self.micro_batch * self.grad_accum != self.global_batch {
            return Err(Error::Layout(format!(
                "data_parallel x micro_batch x grad_accum = {} x {} x {} != global_batch = {}",
                self.data_parallel, self.micro_batch, self.grad_accum, self.global_batch
            )));
        }
        Ok(())
    }
}

/// Derives data parallelism and gradient accumulation; both divisions must be exact.
pub fn plan_parallelism(
    gpus: u64,
    model_parallel: u64,
    micro_batch: u64,
    global_batch: u64,
) -> Result<TrainPlan> {
    for (name, v) in [
        ("gpus", gpus),
        ("model_parallel", model_parallel),
        ("micro_batch", micro_batch),
        ("global_batch", global_batch),
    ] {
        if v == 0 {
            return Err(Error::Layout(format!("{name} must be positive")));
        }
    }
    if !gpus.is_multiple_of(model_parallel) {
        return Err(Error::Layout(format!(
            "model_parallel {model_parallel} does not divide gpus {gpus}"
        )));
    }
    let data_parallel = gpus / model_parallel;
    let per_step = data_parallel * micro_batch;
    if !global_batch.is_multiple_of(per_step) {
        return Err(Error::Layout(format!(
            "data_parallel x micro_batch = {per_step} does not divide global_batch {global_batch}"
        )));
    }
    let plan = TrainPlan {
        gpus,
        model_parallel,
        data_parallel,
        micro_batch,
        grad_accum: global_batch / per_step,
        global_batch,
    };
    plan.check()?;
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupShape {
    /// Hold `init_lr` through warmup.
    #[default]
    Constant,
    /// Ramp linearly from `init_lr / warmup_steps` to `init_lr`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub init_lr: f64,
    pub warmup_steps: u64,
    pub warmup: WarmupShape,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            init_lr: 0.005,
            warmup_steps: 10_000,
            warmup: WarmupShape::Constant,
        }
    }
}

impl LrSchedule {
    /// Inverse square-root decay after warmup: `init_lr * sqrt(warmup / step)`.
    pub fn learning_rate(&self, step: i64) -> Result<f64> {
        if step <= 0 {
            return Err(Error::InvalidInput(format!("step must be >= 1, got {step}")));
        }
        let step = step as u64;
        if step <= self.warmup_steps {
            return Ok(match self.warmup {
                WarmupShape::Constant => self.init_lr,
                WarmupShape::Linear => self.init_lr * step as f64 / self.warmup_steps as f64,
            });
        }
        Ok(self.init_lr * (self.warmup_steps as f64 / step as f64).sqrt())
    }
}

pub fn learning_rate(schedule: &LrSchedule, step: i64) -> Result<f64> {
    schedule.learning_rate(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduler {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: u32,
    pub scheduler: LrScheduler,
    pub dropout: f64,
    pub max_epochs: u32,
}

pub const GRID_LEARNING_RATES: [f64; 4] = [5e-5, 1e-4, 2e-4, 1e-3];
pub const GRID_BATCH_SIZES: [u32; 4] = [8, 16, 32, 64];
pub const GRID_SCHEDULERS: [LrScheduler; 2] = [LrScheduler::Constant, LrScheduler::Cosine];
pub const GRID_DROPOUTS: [f64; 4] = [0.1, 0.15, 0.2, 0.3];
pub const GRID_MAX_EPOCHS: u32 = 120;

/// Full cross product of the fine-tuning search space, learning rate outermost.
pub fn hyperparam_grid() -> Vec<FinetuneConfig> {
    let mut grid = Vec::with_capacity(128);
    for &learning_rate in &GRID_LEARNING_RATES {
        for &batch_size in &GRID_BATCH_SIZES {
            for &scheduler in &GRID_SCHEDULERS {
                for &dropout in &GRID_DROPOUTS {
                    grid.push(FinetuneConfig {
                        learning_rate,
                        batch_size,
                        scheduler,
                        dropout,
                        max_epochs: GRID_MAX_EPOCHS,
                    });
                }
            }
        }
    }
    grid
}

/// Plan and schedule bundle emitted for external training stacks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub plan: TrainPlan,
    pub schedule: LrSchedule,
    /// `(step, lr)` samples of the schedule.
    pub lr_samples: Vec<(u64, f64)>,
}

impl PlanReport {
    pub fn new(plan: TrainPlan, schedule: LrSchedule, steps: &[u64]) -> Result<Self> {
        let lr_samples = steps
            .iter()
            .map(|&s| Ok((s, schedule.learning_rate(s as i64)?)))
            .collect::<Result<_>>()?;
        Ok(PlanReport {
            plan,
            schedule,
            lr_samples,
        })
    }
}
