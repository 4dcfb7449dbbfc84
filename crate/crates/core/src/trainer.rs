//! Stochastic alternation between the supervised task and the pretext task.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{SelfSupSource, SupervisedKind, TrainConfig, TrainingRatio};
use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::image::{stack_batch, ImageTensor, ValueRange};
use crate::model::{Gradients, Model};
use crate::nn::Tensor;
use crate::optim::Sgd;
use crate::pretext::{Pretext, PretextSample};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskChoice {
    Supervised,
    SelfSup,
}

impl TaskChoice {
    pub fn name(self) -> &'static str {
        match self {
            TaskChoice::Supervised => "supervised",
            TaskChoice::SelfSup => "selfsup",
        }
    }
}

impl fmt::Display for TaskChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Picks the supervised task with probability R/(R+1).
pub fn sample_task(rng: &mut impl Rng, ratio: TrainingRatio) -> Result<TaskChoice> {
    match ratio {
        TrainingRatio::Baseline => Ok(TaskChoice::Supervised),
        TrainingRatio::Ratio(0) => Err(Error::invalid("training ratio must be at least 1")),
        TrainingRatio::Ratio(r) => {
            let p = r as f64 / (r as f64 + 1.0);
            Ok(if rng.random::<f64>() < p {
                TaskChoice::Supervised
            } else {
                TaskChoice::SelfSup
            })
        }
    }
}

/// Expected per-step objective of the alternating scheme for fixed task losses.
pub fn expected_step_objective(ratio: TrainingRatio, omega: f64, sup_loss: f64, selfsup_loss: f64) -> f64 {
    match ratio {
        TrainingRatio::Baseline => sup_loss,
        TrainingRatio::Ratio(r) => {
            let r = r as f64;
            (r * sup_loss + omega * selfsup_loss) / (r + 1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub step: usize,
    pub task: TaskChoice,
    /// Supervised cross-entropy, or ω × pretext cross-entropy.
    pub loss: f32,
    pub wall_ms: f64,
}

/// Images in model input range plus per-pixel or per-image targets.
#[derive(Clone, Debug)]
pub struct SupervisedBatch {
    pub input: Tensor,
    pub targets: Vec<usize>,
}

impl SupervisedBatch {
    pub fn from_samples(samples: &[&LabeledSample], kind: SupervisedKind) -> Result<Self> {
        let images: Vec<ImageTensor> = samples.iter().map(|s| s.image.to_range(ValueRange::Centered)).collect();
        let input = stack_batch(&images.iter().collect::<Vec<_>>())?;
        let targets = match kind {
            SupervisedKind::Segmentation => samples
                .iter()
                .flat_map(|s| s.mask.labels.iter().map(|&l| l as usize))
                .collect(),
            SupervisedKind::Classification => samples.iter().map(|s| s.class_label as usize).collect(),
        };
        Ok(Self { input, targets })
    }
}

fn diverged(step: usize, task: TaskChoice, loss: f32) -> Error {
    Error::Diverged {
        step,
        task: task.name(),
        loss,
        last_checkpoint: None,
    }
}

fn check_finite(step: usize, task: TaskChoice, loss: f32, grads: &Gradients) -> Result<()> {
    if !loss.is_finite() {
        return Err(diverged(step, task, loss));
    }
    if !grads.is_finite() {
        return Err(diverged(step, task, f32::NAN));
    }
    Ok(())
}

/// One update of `theta_a` and `theta_b` on a labeled batch.
pub fn supervised_step(
    model: &mut Model,
    optimizer: &mut Sgd,
    batch: &SupervisedBatch,
    step: usize,
) -> Result<StepResult> {
    let start = Instant::now();
    let (loss, grads) = model.supervised_loss_and_grads(&batch.input, &batch.targets)?;
    check_finite(step, TaskChoice::Supervised, loss, &grads)?;
    optimizer.step(model, &grads);
    Ok(StepResult {
        step,
        task: TaskChoice::Supervised,
        loss,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One update of `theta_a` and `theta_c` minimizing ω × pretext cross-entropy.
pub fn selfsup_step(
    model: &mut Model,
    optimizer: &mut Sgd,
    batch: &[PretextSample],
    omega: f32,
    step: usize,
) -> Result<StepResult> {
    let start = Instant::now();
    if batch.is_empty() {
        return Err(Error::invalid("empty pretext batch"));
    }
    let input = stack_batch(&batch.iter().map(|s| &s.image).collect::<Vec<_>>())?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let (loss, _, grads) = model.selfsup_loss_and_grads(&input, &labels, omega)?;
    check_finite(step, TaskChoice::SelfSup, loss, &grads)?;
    optimizer.step(model, &grads);
    Ok(StepResult {
        step,
        task: TaskChoice::SelfSup,
        loss,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Endless shuffled pass over `0..n`, reshuffled each epoch.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Assembles the self-supervised image pool for the configured source.
pub fn selfsup_pool(
    source: SelfSupSource,
    train: &[LabeledSample],
    extra: Option<&[ImageTensor]>,
) -> Result<Vec<ImageTensor>> {
    let extra = extra.unwrap_or_default();
    if source != SelfSupSource::Same && extra.is_empty() {
        return Err(Error::invalid(format!(
            "selfsup_source = {source} needs a non-empty unlabeled pool"
        )));
    }
    let centered = |img: &ImageTensor| img.to_range(ValueRange::Centered);
    let mut pool = Vec::new();
    if source != SelfSupSource::Extra {
        pool.extend(train.iter().map(|s| centered(&s.image)));
    }
    if source != SelfSupSource::Same {
        pool.extend(extra.iter().map(centered));
    }
    Ok(pool)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub history: Vec<StepResult>,
    /// Periodic snapshots, the last one taken after the final update.
    pub checkpoints: Vec<Checkpoint>,
    pub selfsup_pool_size: usize,
    pub wall_ms: f64,
}

impl TrainOutput {
    pub fn count(&self, task: TaskChoice) -> usize {
        self.history.iter().filter(|s| s.task == task).count()
    }
}

/// Runs exactly `config.total_steps` updates, drawing the task for each step.
///
/// The task sequence depends only on `config.seed`; supervised batches, pretext
/// images and pretext transforms each draw from their own seeded stream.
pub fn run_cotraining(
    config: &TrainConfig,
    train: &[LabeledSample],
    extra: Option<&[ImageTensor]>,
) -> Result<TrainOutput> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("supervised dataset is empty"));
    }
    let hash = config.hash();
    let mut model = Model::new(config.model_config())?;
    let mut optimizer = Sgd::new(config.learning_rate, config.momentum);
    let pretext = config.pretext()?;
    let pool = match config.ratio {
        TrainingRatio::Baseline => Vec::new(),
        TrainingRatio::Ratio(_) => selfsup_pool(config.selfsup_source, train, extra)?,
    };

    let mut task_rng = stream_rng(config.seed, "task-choice");
    let mut sup_sampler = EpochSampler::new(train.len(), stream_rng(config.seed, "supervised-data"));
    let mut self_sampler = EpochSampler::new(pool.len(), stream_rng(config.seed, "selfsup-data"));
    let mut transform_rng = stream_rng(config.seed, "pretext-transform");

    let started = Instant::now();
    let mut history = Vec::with_capacity(config.total_steps);
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    for step in 0..config.total_steps {
        let task = sample_task(&mut task_rng, config.ratio)?;
        let result = match task {
            TaskChoice::Supervised => {
                let start = Instant::now();
                let samples: Vec<&LabeledSample> = (0..config.batch_size)
                    .map(|_| &train[sup_sampler.next_index()])
                    .collect();
                let batch = SupervisedBatch::from_samples(&samples, config.supervised_task)?;
                supervised_step(&mut model, &mut optimizer, &batch, step).map(|r| StepResult {
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    ..r
                })
            }
            TaskChoice::SelfSup => {
                let start = Instant::now();
                let batch = make_pretext_batch(
                    &pool,
                    &pretext,
                    config.selfsup_batch_size,
                    &mut self_sampler,
                    &mut transform_rng,
                )?;
                selfsup_step(&mut model, &mut optimizer, &batch, config.omega, step).map(|r| StepResult {
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    ..r
                })
            }
        };
        let result = match result {
            Err(Error::Diverged { step, task, loss, .. }) => {
                log::error!("{task} loss became {loss} at step {step}");
                return Err(Error::Diverged {
                    step,
                    task,
                    loss,
                    last_checkpoint: checkpoints.pop().map(Box::new),
                });
            }
            other => other?,
        };
        history.push(result);
        let done = step + 1;
        if done % config.checkpoint_every == 0 || done == config.total_steps {
            checkpoints.push(Checkpoint::capture(&model, done, &hash));
            log::debug!("checkpoint at step {done}");
        }
    }
    Ok(TrainOutput {
        model,
        history,
        checkpoints,
        selfsup_pool_size: pool.len(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Trains only the pretext branch (`theta_a`, `theta_c`) for `config.total_steps`
/// updates on `images`, ignoring the ratio.
pub fn run_selfsup_only(config: &TrainConfig, images: &[ImageTensor]) -> Result<TrainOutput> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("self-supervised pool is empty"));
    }
    let hash = config.hash();
    let mut model = Model::new(config.model_config())?;
    let mut optimizer = Sgd::new(config.learning_rate, config.momentum);
    let pretext = config.pretext()?;
    let pool: Vec<ImageTensor> = images.iter().map(|i| i.to_range(ValueRange::Centered)).collect();
    let mut sampler = EpochSampler::new(pool.len(), stream_rng(config.seed, "selfsup-data"));
    let mut transform_rng = stream_rng(config.seed, "pretext-transform");
    let started = Instant::now();
    let mut history = Vec::with_capacity(config.total_steps);
    let mut checkpoints = Vec::new();
    for step in 0..config.total_steps {
        let start = Instant::now();
        let batch = make_pretext_batch(
            &pool,
            &pretext,
            config.selfsup_batch_size,
            &mut sampler,
            &mut transform_rng,
        )?;
        let r = selfsup_step(&mut model, &mut optimizer, &batch, config.omega, step)?;
        history.push(StepResult {
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            ..r
        });
        let done = step + 1;
        if done % config.checkpoint_every == 0 || done == config.total_steps {
            checkpoints.push(Checkpoint::capture(&model, done, &hash));
        }
    }
    Ok(TrainOutput {
        model,
        history,
        checkpoints,
        selfsup_pool_size: pool.len(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Draws `batch_size` pool images and transforms each with its own seed.
pub fn make_pretext_batch(
    pool: &[ImageTensor],
    pretext: &Pretext,
    batch_size: usize,
    sampler: &mut EpochSampler,
    rng: &mut impl RngCore,
) -> Result<Vec<PretextSample>> {
    if pool.is_empty() {
        return Err(Error::invalid("self-supervised pool is empty"));
    }
    (0..batch_size)
        .map(|_| pretext.make_sample(&pool[sampler.next_index()], rng.next_u64()))
        .collect()
}

/// Writes `step,task,loss,wall_ms` rows.
pub fn write_history(path: &Path, history: &[StepResult]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,task,loss,wall_ms")?;
    for r in history {
        writeln!(w, "{},{},{},{:.3}", r.step, r.task, r.loss, r.wall_ms)?;
    }
    w.flush()?;
    Ok(())
}
