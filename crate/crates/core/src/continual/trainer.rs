//! The C0-C4 training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{split_tasks, Dataset, TaskSplit};
use super::metrics::AccuracyMatrix;
use super::tasks::TaskSchedule;
use crate::budget::{
    budget_penalty, controller_update, spike_rate, BudgetConfig, BudgetControllerState, BudgetLogEntry,
};
use crate::encoding::SpikeTensor;
use crate::error::{Error, Result};
use crate::network::{clip_gradients, predict, ByteReader, Checkpoint, Dims, FcSnn, OptimizerState, RngState};
use crate::neuron::{LifParams, DEFAULT_SLOPE};
use crate::replay::{compose_batch, ClassPartition, ReplayBuffer};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const ENCODE_STREAM: u64 = 2;
const REPLAY_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;
const EVAL_CHUNK: usize = 256;

/// Named ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigId {
    C0,
    C1,
    C2,
    C3,
    C4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub replay: bool,
    pub learnable_lif: bool,
    pub scheduler: bool,
}

impl ConfigId {
    pub const ALL: [ConfigId; 5] = [ConfigId::C0, ConfigId::C1, ConfigId::C2, ConfigId::C3, ConfigId::C4];

    pub fn flags(self) -> Flags {
        let (replay, learnable_lif, scheduler) = match self {
            ConfigId::C0 => (false, false, false),
            ConfigId::C1 => (true, false, false),
            ConfigId::C2 => (true, true, false),
            ConfigId::C3 => (true, false, true),
            ConfigId::C4 => (true, true, true),
        };
        Flags { replay, learnable_lif, scheduler }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConfigId::C0 => "C0",
            ConfigId::C1 => "C1",
            ConfigId::C2 => "C2",
            ConfigId::C3 => "C3",
            ConfigId::C4 => "C4",
        }
    }
}

impl std::str::FromStr for ConfigId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConfigId::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown configuration `{s}`")))
    }
}

impl std::fmt::Display for ConfigId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// When current-task samples are offered to the replay buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertTiming {
    /// Each batch of the task's last epoch, after its optimizer step.
    FinalEpoch,
    /// One pass over the task's training set once training on it ends.
    AfterTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub config: ConfigId,
    pub seed: u64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub timesteps: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub beta_init: f64,
    pub vthr_init: f64,
    pub surrogate_slope: f64,
    pub max_grad_norm: f64,
    pub budget: BudgetConfig,
    pub buffer_capacity: usize,
    /// Replay draws per step; `None` matches the current batch size.
    pub replay_batch: Option<usize>,
    /// Store raw samples and re-encode them on replay.
    pub reencode: bool,
    pub insert_timing: InsertTiming,
}

impl RunConfig {
    pub fn new(config: ConfigId, seed: u64) -> Self {
        Self {
            config,
            seed,
            epochs_per_task: 5,
            batch_size: 64,
            timesteps: 25,
            learning_rate: 1e-3,
            hidden: 128,
            beta_init: 0.9,
            vthr_init: 1.0,
            surrogate_slope: DEFAULT_SLOPE,
            max_grad_norm: 1.0,
            budget: BudgetConfig::FRAME,
            buffer_capacity: 2000,
            replay_batch: None,
            reencode: true,
            insert_timing: InsertTiming::AfterTask,
        }
    }

    pub fn flags(&self) -> Flags {
        self.config.flags()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.epochs_per_task == 0 {
            return bad("epochs_per_task must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.timesteps == 0 {
            return bad("timesteps must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        if !(self.surrogate_slope > 0.0) {
            return bad("surrogate_slope must be positive");
        }
        LifParams::<f32>::new(self.beta_init as f32, self.vthr_init as f32, false)?;
        self.budget.validate()
    }
}

/// Outcome of one run. `budget_log` and `wall_time_s` are not part of the
/// JSON record; the log is written as its own CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub config_id: ConfigId,
    pub seed: u64,
    pub schedule: String,
    pub acc: f64,
    pub forgetting: Option<f64>,
    pub bwt: Option<f64>,
    pub mean_spike_rate: f64,
    pub accuracy_matrix: AccuracyMatrix,
    /// Accuracy on the pooled test set of all classes seen after each task.
    pub seen_class_accuracy: Vec<f64>,
    pub lif_raw_start: [f32; 2],
    pub lif_raw_end: [f32; 2],
    pub final_beta: f32,
    pub final_vthr: f32,
    pub optimizer_steps: u64,
    pub config: RunConfig,
    #[serde(skip)]
    pub budget_log: Vec<BudgetLogEntry>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// A replay-buffer entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Memory {
    /// Index into the training pool; re-encoded with fresh noise on replay.
    Index(usize),
    Encoded(SpikeTensor),
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Counts correct argmax predictions over `indices` of `pool`, restricted to
/// the network's active classes.
pub fn evaluate(
    net: &FcSnn<f32>,
    data: &Dataset,
    indices: &[usize],
    timesteps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    let out = net.dims().output;
    let mut correct = 0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let encoded =
            chunk.iter().map(|&i| data.test[i].encode(data.kind, timesteps, rng)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&SpikeTensor> = encoded.iter().collect();
        let batch = SpikeTensor::stack(&refs)?;
        let rec = net.forward(&batch)?;
        for (row, &i) in rec.logits.chunks(out).zip(chunk) {
            if predict(row, net.active_classes()) == Some(data.test[i].label) {
                correct += 1;
            }
        }
    }
    Ok((correct, indices.len()))
}

pub fn accuracy(correct: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Resumable training state for one run.
pub struct Trainer<'d> {
    cfg: RunConfig,
    schedule: TaskSchedule,
    data: &'d Dataset,
    splits: Vec<TaskSplit>,
    net: FcSnn<f32>,
    opt: OptimizerState<f32>,
    controller: BudgetControllerState,
    buffer: ReplayBuffer<Memory>,
    shuffle_rng: ChaCha8Rng,
    encode_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    matrix: AccuracyMatrix,
    seen_acc: Vec<f64>,
    log: Vec<BudgetLogEntry>,
    lif_raw_start: [f32; 2],
    tasks_done: usize,
    elapsed_s: f64,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: RunConfig, schedule: TaskSchedule, data: &'d Dataset) -> Result<Self> {
        cfg.validate()?;
        let splits = split_tasks(data, &schedule)?;
        let dims = Dims { input: data.kind.input_dim(), hidden: cfg.hidden, output: data.num_classes };
        let lif = LifParams::new(cfg.beta_init as f32, cfg.vthr_init as f32, cfg.flags().learnable_lif)?
            .with_slope(cfg.surrogate_slope as f32);
        let mut net = FcSnn::new(dims, lif, &mut stream_rng(cfg.seed, INIT_STREAM));
        net.set_active(vec![false; dims.output])?;
        Ok(Self {
            opt: OptimizerState::new(dims, cfg.learning_rate as f32),
            controller: BudgetControllerState::new(&cfg.budget),
            buffer: ReplayBuffer::new(cfg.buffer_capacity, data.num_classes)?,
            shuffle_rng: stream_rng(cfg.seed, SHUFFLE_STREAM),
            encode_rng: stream_rng(cfg.seed, ENCODE_STREAM),
            replay_rng: stream_rng(cfg.seed, REPLAY_STREAM),
            matrix: AccuracyMatrix::new(),
            seen_acc: Vec::new(),
            log: Vec::new(),
            lif_raw_start: [lif.beta_raw, lif.vthr_raw],
            tasks_done: 0,
            elapsed_s: 0.0,
            cfg,
            schedule,
            data,
            splits,
            net,
        })
    }

    pub fn net(&self) -> &FcSnn<f32> {
        &self.net
    }

    pub fn tasks_done(&self) -> usize {
        self.tasks_done
    }

    pub fn num_tasks(&self) -> usize {
        self.splits.len()
    }

    pub fn is_finished(&self) -> bool {
        self.tasks_done == self.splits.len()
    }

    pub fn budget_log(&self) -> &[BudgetLogEntry] {
        &self.log
    }

    pub fn buffer(&self) -> &ReplayBuffer<Memory> {
        &self.buffer
    }

    fn encode_memory(&mut self, m: &Memory, label: usize) -> Result<SpikeTensor> {
        match m {
            Memory::Index(i) => {
                debug_assert_eq!(self.data.train[*i].label, label);
                self.data.train[*i].encode(self.data.kind, self.cfg.timesteps, &mut self.encode_rng)
            }
            Memory::Encoded(t) => Ok(t.clone()),
        }
    }

    fn train_step(&mut self, task: usize, current: &[usize], final_epoch: bool) -> Result<()> {
        let flags = self.cfg.flags();
        let items: Vec<(Memory, usize)> =
            current.iter().map(|&i| (Memory::Index(i), self.data.train[i].label)).collect();
        let composed = if flags.replay {
            match self.cfg.replay_batch {
                None => compose_batch(items, &self.buffer, &mut self.replay_rng)?,
                Some(n) if !self.buffer.is_empty() && n > 0 => {
                    let mut items = items;
                    items.extend(self.buffer.sample(n, &mut self.replay_rng)?);
                    items
                }
                Some(_) => items,
            }
        } else {
            items
        };
        let encoded = composed.iter().map(|(m, l)| self.encode_memory(m, *l)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = composed.iter().map(|(_, l)| *l).collect();
        let refs: Vec<&SpikeTensor> = encoded.iter().collect();
        let batch = SpikeTensor::stack(&refs)?;

        let record = self.net.forward(&batch)?;
        let r_batch = spike_rate(&record.hidden_spikes()?)?;
        let lambda = self.controller.lambda_rate;
        let (penalty, coeff) =
            if flags.scheduler { budget_penalty(r_batch, self.cfg.budget.r_target, lambda) } else { (0.0, 0.0) };
        let bw = self.net.backward(&record, &labels, coeff as f32)?;
        let loss = f64::from(bw.task_loss) + penalty;
        let step = self.opt.step;
        if !loss.is_finite() || !bw.grads.is_finite() {
            return Err(Error::Diverged { task, step: step as usize, loss, rate: r_batch });
        }
        let mut grads = bw.grads;
        clip_gradients(&mut grads, self.cfg.max_grad_norm as f32);
        self.net.apply_adam(&grads, &mut self.opt);

        let r_mean = if flags.scheduler {
            controller_update(&mut self.controller, &self.cfg.budget, r_batch);
            self.controller.window_mean().expect("window is non-empty")
        } else {
            self.controller.observe(&self.cfg.budget, r_batch)
        };
        self.log.push(BudgetLogEntry { step, r_batch, r_mean, lambda_rate: lambda, penalty, loss });

        if flags.replay && final_epoch && self.cfg.insert_timing == InsertTiming::FinalEpoch {
            for (k, &i) in current.iter().enumerate() {
                let mem = if self.cfg.reencode { Memory::Index(i) } else { Memory::Encoded(encoded[k].clone()) };
                self.buffer.insert(mem, self.data.train[i].label, &mut self.replay_rng)?;
            }
        }
        Ok(())
    }

    fn insert_after_task(&mut self, task: usize) -> Result<()> {
        let indices = self.splits[task].train.clone();
        for i in indices {
            let mem = if self.cfg.reencode {
                Memory::Index(i)
            } else {
                Memory::Encoded(self.data.train[i].encode(self.data.kind, self.cfg.timesteps, &mut self.encode_rng)?)
            };
            self.buffer.insert(mem, self.data.train[i].label, &mut self.replay_rng)?;
        }
        Ok(())
    }

    fn evaluate_seen(&mut self, upto: usize) -> Result<()> {
        let mut rng = stream_rng(self.cfg.seed, EVAL_STREAM);
        let mut row = Vec::with_capacity(upto + 1);
        let (mut correct, mut total) = (0, 0);
        for k in 0..=upto {
            let (c, n) = evaluate(&self.net, self.data, &self.splits[k].test, self.cfg.timesteps, &mut rng)?;
            row.push(accuracy(c, n)?);
            correct += c;
            total += n;
        }
        self.matrix.push_row(row)?;
        self.seen_acc.push(accuracy(correct, total)?);
        Ok(())
    }

    /// Trains the next task and evaluates every task seen so far.
    pub fn run_next_task(&mut self) -> Result<()> {
        let task = self.tasks_done;
        if task >= self.splits.len() {
            return Err(Error::InvalidArgument("all tasks already trained".into()));
        }
        let started = Instant::now();
        let classes = self.splits[task].classes.clone();
        self.net.activate(&classes)?;
        let mut order = self.splits[task].train.clone();
        for epoch in 0..self.cfg.epochs_per_task {
            order.shuffle(&mut self.shuffle_rng);
            let final_epoch = epoch + 1 == self.cfg.epochs_per_task;
            for chunk in order.chunks(self.cfg.batch_size) {
                self.train_step(task, chunk, final_epoch)?;
            }
        }
        if self.cfg.flags().replay && self.cfg.insert_timing == InsertTiming::AfterTask {
            self.insert_after_task(task)?;
        }
        self.evaluate_seen(task)?;
        self.tasks_done += 1;
        self.elapsed_s += started.elapsed().as_secs_f64();
        Ok(())
    }

    pub fn finish(self) -> Result<RunResult> {
        if !self.is_finished() {
            return Err(Error::InvalidArgument(format!("{} of {} tasks trained", self.tasks_done, self.splits.len())));
        }
        let mean_spike_rate = if self.log.is_empty() {
            0.0
        } else {
            self.log.iter().map(|e| e.r_batch).sum::<f64>() / self.log.len() as f64
        };
        let lif = self.net.lif();
        let c = lif.constrain();
        Ok(RunResult {
            config_id: self.cfg.config,
            seed: self.cfg.seed,
            schedule: self.schedule.to_string(),
            acc: self.matrix.acc()?,
            forgetting: self.matrix.forgetting(),
            bwt: self.matrix.bwt(),
            mean_spike_rate,
            accuracy_matrix: self.matrix,
            seen_class_accuracy: self.seen_acc,
            lif_raw_start: self.lif_raw_start,
            lif_raw_end: [lif.beta_raw, lif.vthr_raw],
            final_beta: c.beta,
            final_vthr: c.vthr,
            optimizer_steps: self.opt.step,
            config: self.cfg,
            budget_log: self.log,
            wall_time_s: self.elapsed_s,
        })
    }

    /// Snapshot of everything needed to continue this run bit-exactly.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut run = Vec::new();
        let echo = serde_json::to_vec(&(&self.cfg, self.schedule.to_string()))?;
        put_bytes(&mut run, &echo);
        run.extend_from_slice(&(self.tasks_done as u32).to_le_bytes());
        for v in self.lif_raw_start {
            run.extend_from_slice(&v.to_le_bytes());
        }
        run.extend_from_slice(&self.elapsed_s.to_le_bytes());
        run.extend_from_slice(&(self.matrix.num_tasks() as u32).to_le_bytes());
        for (row, seen) in self.matrix.rows().iter().zip(&self.seen_acc) {
            for v in row {
                run.extend_from_slice(&v.to_le_bytes());
            }
            run.extend_from_slice(&seen.to_le_bytes());
        }

        let mut ctl = Vec::new();
        ctl.extend_from_slice(&self.controller.lambda_rate.to_le_bytes());
        ctl.extend_from_slice(&(self.controller.rate_window.len() as u32).to_le_bytes());
        for r in &self.controller.rate_window {
            ctl.extend_from_slice(&r.to_le_bytes());
        }

        let mut log = Vec::new();
        log.extend_from_slice(&(self.log.len() as u32).to_le_bytes());
        for e in &self.log {
            log.extend_from_slice(&e.step.to_le_bytes());
            for v in [e.r_batch, e.r_mean, e.lambda_rate, e.penalty, e.loss] {
                log.extend_from_slice(&v.to_le_bytes());
            }
        }

        let mut replay = Vec::new();
        replay.extend_from_slice(&(self.buffer.capacity() as u64).to_le_bytes());
        replay.extend_from_slice(&(self.buffer.num_classes() as u32).to_le_bytes());
        for part in self.buffer.partitions() {
            replay.extend_from_slice(&part.seen.to_le_bytes());
            replay.extend_from_slice(&(part.items.len() as u32).to_le_bytes());
            for item in &part.items {
                match item {
                    Memory::Index(i) => {
                        replay.push(0);
                        replay.extend_from_slice(&(*i as u64).to_le_bytes());
                    }
                    Memory::Encoded(t) => {
                        replay.push(1);
                        for d in [t.timesteps(), t.batch(), t.units()] {
                            replay.extend_from_slice(&(d as u32).to_le_bytes());
                        }
                        replay.extend_from_slice(t.as_slice());
                    }
                }
            }
        }

        Ok(Checkpoint {
            net: self.net.clone(),
            optimizer: Some(self.opt.clone()),
            rngs: [&self.shuffle_rng, &self.encode_rng, &self.replay_rng].into_iter().map(RngState::capture).collect(),
            sections: vec![
                ("run".into(), run),
                ("controller".into(), ctl),
                ("budget_log".into(), log),
                ("replay".into(), replay),
            ],
        })
    }

    /// Restores a run from [`Trainer::checkpoint`]. The configuration and
    /// schedule must match the ones the checkpoint was taken with.
    pub fn resume(cfg: RunConfig, schedule: TaskSchedule, data: &'d Dataset, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg, schedule, data)?;
        let section =
            |tag: &str| ckpt.section(tag).ok_or_else(|| Error::Checkpoint(format!("missing `{tag}` section")));

        let mut r = ByteReader::new(section("run")?);
        let n = r.len_prefix(1)?;
        let echo = serde_json::to_vec(&(&t.cfg, t.schedule.to_string()))?;
        if r.take(n)? != echo.as_slice() {
            return Err(Error::Checkpoint("configuration differs from the checkpointed run".into()));
        }
        let tasks_done = r.u32()? as usize;
        t.lif_raw_start = [r.f32()?, r.f32()?];
        t.elapsed_s = r.f64()?;
        let rows = r.u32()? as usize;
        if rows != tasks_done || tasks_done > t.splits.len() {
            return Err(Error::Checkpoint("inconsistent task progress".into()));
        }
        for j in 0..rows {
            let row = (0..=j).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            t.matrix.push_row(row)?;
            t.seen_acc.push(r.f64()?);
        }
        t.tasks_done = tasks_done;

        let mut r = ByteReader::new(section("controller")?);
        t.controller.lambda_rate = r.f64()?;
        let n = r.len_prefix(8)?;
        t.controller.rate_window = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;

        let mut r = ByteReader::new(section("budget_log")?);
        let n = r.len_prefix(48)?;
        t.log = (0..n)
            .map(|_| {
                Ok(BudgetLogEntry {
                    step: r.u64()?,
                    r_batch: r.f64()?,
                    r_mean: r.f64()?,
                    lambda_rate: r.f64()?,
                    penalty: r.f64()?,
                    loss: r.f64()?,
                })
            })
            .collect::<Result<_>>()?;

        let mut r = ByteReader::new(section("replay")?);
        let capacity = r.u64()? as usize;
        let classes = r.len_prefix(12)?;
        let mut parts = Vec::with_capacity(classes);
        for _ in 0..classes {
            let seen = r.u64()?;
            let n = r.len_prefix(1)?;
            let items = (0..n)
                .map(|_| match r.u8()? {
                    0 => {
                        let i = r.u64()? as usize;
                        if i >= data.train.len() {
                            return Err(Error::Checkpoint(format!("replay index {i} out of range")));
                        }
                        Ok(Memory::Index(i))
                    }
                    1 => {
                        let (tl, b, u) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
                        let len = tl
                            .checked_mul(b)
                            .and_then(|x| x.checked_mul(u))
                            .ok_or_else(|| Error::Checkpoint("encoded sample too large".into()))?;
                        Ok(Memory::Encoded(SpikeTensor::from_vec(tl, b, u, r.take(len)?.to_vec())?))
                    }
                    tag => Err(Error::Checkpoint(format!("bad replay item tag {tag}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            parts.push(ClassPartition { seen, items });
        }
        t.buffer = ReplayBuffer::from_parts(capacity, parts)?;

        if ckpt.net.dims() != t.net.dims() {
            return Err(Error::Checkpoint("network dimensions differ".into()));
        }
        t.net = ckpt.net;
        t.opt = ckpt.optimizer.ok_or_else(|| Error::Checkpoint("missing optimizer state".into()))?;
        let [shuffle, encode, replay] = ckpt.rngs.as_slice() else {
            return Err(Error::Checkpoint("expected three rng states".into()));
        };
        t.shuffle_rng = shuffle.restore();
        t.encode_rng = encode.restore();
        t.replay_rng = replay.restore();
        Ok(t)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

/// Trains every task of `schedule` under `cfg` and reports the metrics.
pub fn run_config(cfg: &RunConfig, schedule: &TaskSchedule, data: &Dataset) -> Result<RunResult> {
    let mut trainer = Trainer::new(cfg.clone(), schedule.clone(), data)?;
    while !trainer.is_finished() {
        trainer.run_next_task()?;
    }
    trainer.finish()
}
