//! Hybrid-loss truncated-BPTT training: per-string updates, entrywise
//! gradient clipping, Adam, patience-based lr halving, and the
//! sequential vs incremental (curriculum) regimes.

use crate::cells::{CellState, Model, StepSettings};
use crate::datagen::Sample;
use crate::math::{Matrix, ParamStore, RngStream, Tape};
use crate::{Error, Result};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Sequential,
    /// Curriculum: 4 length-quartile stages, equal epoch budget each,
    /// stage s training on the union of stages <= s.
    Incremental,
}

impl TrainMode {
    pub fn id(&self) -> &'static str {
        match self {
            TrainMode::Sequential => "sequential",
            TrainMode::Incremental => "incremental",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(TrainMode::Sequential),
            "incremental" => Ok(TrainMode::Incremental),
            other => Err(Error::Config(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub clip: f64,
    pub bptt_window: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Non-improving validation checks before the lr is halved.
    pub patience: usize,
    pub lr_floor: f64,
    pub mode: TrainMode,
    /// Additive state noise (mu, sigma2); None disables it.
    pub noise: Option<(f64, f64)>,
    pub carry_forward: bool,
    pub seed: u64,
    pub trials: usize,
}

impl TrainConfig {
    /// Grammar-recognition defaults: 30 epochs, lr 2e-3, clip 15, BPTT-50.
    pub fn recognition(seed: u64) -> Self {
        TrainConfig {
            epochs: 30,
            lr: 2e-3,
            clip: 15.0,
            bptt_window: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: 3,
            lr_floor: 1e-5,
            mode: TrainMode::Sequential,
            noise: Some((0.0, 1e-3)),
            carry_forward: true,
            seed,
            trials: 10,
        }
    }

    /// Language-model defaults: 50 epochs, CE-only loss handled by the
    /// caller via [`train_lm`].
    pub fn lm(seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            ..TrainConfig::recognition(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.clip <= 0.0 || self.bptt_window == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "need lr > 0, clip > 0, bptt_window >= 1, epochs >= 1 (got lr={} clip={} bptt={} epochs={})",
                self.lr, self.clip, self.bptt_window, self.epochs
            )));
        }
        if let Some((_, s2)) = self.noise {
            if s2 < 0.0 {
                return Err(Error::Config(format!("noise variance {s2} < 0")));
            }
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        Ok(())
    }

    fn step_settings(&self) -> StepSettings {
        StepSettings::train(self.noise, self.carry_forward)
    }
}

/// Per-run record: epoch traces plus final results.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub family: String,
    pub seed: u64,
    pub epoch_train_loss: Vec<f64>,
    /// Validation accuracy (recognition) or perplexity (LM) per epoch.
    pub valid_metric: Vec<f64>,
    pub lr_trace: Vec<f64>,
    pub best_valid: f64,
    pub best_epoch: usize,
    pub final_test_accuracy: Option<f64>,
    pub diverged: bool,
    pub wall_secs: f64,
}

impl TrainReport {
    /// Empty report for a run that has not trained yet.
    pub fn new(family: &str, seed: u64) -> Self {
        TrainReport {
            family: family.to_string(),
            seed,
            epoch_train_loss: Vec::new(),
            valid_metric: Vec::new(),
            lr_trace: Vec::new(),
            best_valid: f64::NEG_INFINITY,
            best_epoch: 0,
            final_test_accuracy: None,
            diverged: false,
            wall_secs: 0.0,
        }
    }

    /// Line-delimited key=value summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "family={}", self.family);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "epochs_run={}", self.epoch_train_loss.len());
        let _ = writeln!(s, "best_valid={}", self.best_valid);
        let _ = writeln!(s, "best_epoch={}", self.best_epoch);
        if let Some(acc) = self.final_test_accuracy {
            let _ = writeln!(s, "test_accuracy={acc}");
        }
        let _ = writeln!(s, "diverged={}", self.diverged);
        let _ = writeln!(s, "wall_secs={:.3}", self.wall_secs);
        s
    }

    /// CSV epoch trace: epoch, train loss, validation metric, lr.
    pub fn epoch_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,valid_metric,lr\n");
        for i in 0..self.epoch_train_loss.len() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                i, self.epoch_train_loss[i], self.valid_metric[i], self.lr_trace[i]
            );
        }
        s
    }
}

/// Adam with bias correction. Moment buffers are indexed like the
/// parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let shapes: Vec<usize> = store
            .ids()
            .map(|id| store.value(id).data().len())
            .collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the accumulated (pre-clipped) gradients.
    pub fn step(&mut self, store: &mut ParamStore, cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g: Vec<f64> = store.grad(id).to_vec();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let w = store.value_mut(id).data_mut();
            for j in 0..g.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }

    /// Text round-trip for trainer-state sidecars (continuation support).
    pub fn to_text(&self) -> String {
        let mut s = format!("adam t={}\n", self.t);
        for (m, v) in self.m.iter().zip(&self.v) {
            let fmt = |xs: &[f64]| {
                xs.iter()
                    .map(|x| format!("{x:?}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let _ = writeln!(s, "m {}", fmt(m));
            let _ = writeln!(s, "v {}", fmt(v));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines
            .next()
            .ok_or_else(|| Error::Io("empty adam state".into()))?;
        let t: u64 = head
            .strip_prefix("adam t=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Io(format!("bad adam header '{head}'")))?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for line in lines {
            let (tag, rest) = line
                .split_once(' ')
                .ok_or_else(|| Error::Io(format!("bad adam line '{line}'")))?;
            let vals: Vec<f64> = if rest.is_empty() {
                Vec::new()
            } else {
                rest.split(' ')
                    .map(|x| {
                        x.parse()
                            .map_err(|_| Error::Io(format!("bad adam value '{x}'")))
                    })
                    .collect::<Result<_>>()?
            };
            match tag {
                "m" => m.push(vals),
                "v" => v.push(vals),
                other => return Err(Error::Io(format!("bad adam tag '{other}'"))),
            }
        }
        if m.len() != v.len() {
            return Err(Error::Io("adam m/v length mismatch".into()));
        }
        Ok(Adam { m, v, t })
    }
}

/// Entrywise clip of every accumulated gradient to |g| <= clip.
pub fn clip_grads(store: &mut ParamStore, clip: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        for g in store.grad_mut(id) {
            *g = g.clamp(-clip, clip);
        }
    }
}

/// Full-sequence forward loss (no gradients):
/// sum over steps of CE(next symbol) plus, when a label is present,
/// half squared recognition error against the whole-string label.
pub fn sequence_loss(
    model: &Model,
    tokens: &[usize],
    label: Option<bool>,
    eos: usize,
    settings: &StepSettings,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut state = model.initial_state(&mut tape);
    let mut total = 0.0;
    for (t, &x) in tokens.iter().enumerate() {
        let out = model.step(&mut tape, settings, rng, x, &state)?;
        let target = if t + 1 < tokens.len() { tokens[t + 1] } else { eos };
        let ce = tape.ce_logits(out.logits, target);
        total += tape.scalar(ce);
        if let Some(y) = label {
            let mse = tape.half_sq_err(out.y_hat, if y { 1.0 } else { 0.0 });
            total += tape.scalar(mse);
        }
        state = out.state;
    }
    Ok(total)
}

/// Forward + backward over one string with truncated BPTT: gradient flow
/// is cut every `bptt_window` steps while hidden and stack state carry
/// across windows as plain values. Gradients accumulate into the store
/// (not cleared here); returns the total loss.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_sequence_grads(
    model: &mut Model,
    tape: &mut Tape,
    tokens: &[usize],
    label: Option<bool>,
    eos: usize,
    bptt_window: usize,
    settings: &StepSettings,
    rng: &mut RngStream,
) -> Result<f64> {
    let t_len = tokens.len();
    let mut total = 0.0;
    let mut carried: Option<CellState> = None;
    let mut pos = 0;
    while pos < t_len {
        tape.clear();
        let mut state = match &carried {
            Some(cs) => model.attach(tape, cs),
            None => model.initial_state(tape),
        };
        let end = (pos + bptt_window).min(t_len);
        let mut loss = tape.zeros(1);
        for t in pos..end {
            let out = model.step(tape, settings, rng, tokens[t], &state)?;
            let target = if t + 1 < t_len { tokens[t + 1] } else { eos };
            let ce = tape.ce_logits(out.logits, target);
            loss = tape.add(loss, ce);
            if let Some(y) = label {
                let mse = tape.half_sq_err(out.y_hat, if y { 1.0 } else { 0.0 });
                loss = tape.add(loss, mse);
            }
            state = out.state;
        }
        let lv = tape.scalar(loss);
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss on a length-{t_len} string"
            )));
        }
        total += lv;
        tape.backward(loss, &mut model.store)?;
        carried = Some(model.detach(tape, &state));
        pos = end;
    }
    Ok(total)
}

enum Task<'a> {
    Recognize { train: &'a [Sample], valid: &'a [Sample] },
    Lm { train: &'a [Vec<usize>], valid: &'a [Vec<usize>] },
}

impl Task<'_> {
    fn n_train(&self) -> usize {
        match self {
            Task::Recognize { train, .. } => train.len(),
            Task::Lm { train, .. } => train.len(),
        }
    }

    fn length(&self, i: usize) -> usize {
        match self {
            Task::Recognize { train, .. } => train[i].len(),
            Task::Lm { train, .. } => train[i].len(),
        }
    }

    /// Higher is better for accuracy, so perplexity is negated.
    fn valid_metric(&self, model: &Model, eos: usize) -> Result<f64> {
        match self {
            Task::Recognize { valid, .. } => crate::eval::accuracy(model, valid, eos),
            Task::Lm { valid, .. } => Ok(-crate::eval::perplexity(model, valid, eos)?),
        }
    }
}

/// Copy of all parameter values, in store order.
pub fn snapshot_params(store: &ParamStore) -> Vec<Matrix> {
    store.ids().map(|id| store.value(id).clone()).collect()
}

pub fn restore_params(store: &mut ParamStore, snap: &[Matrix]) {
    for (id, m) in store.ids().collect::<Vec<_>>().into_iter().zip(snap) {
        *store.value_mut(id) = m.clone();
    }
}

/// Everything besides the model parameters that a run needs to continue
/// from an epoch boundary.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub adam: Adam,
    pub lr: f64,
    pub since_improve: usize,
    pub best_valid: f64,
    pub best_epoch: usize,
    pub epochs_done: usize,
    /// Parameter values at the best-validation epoch.
    pub best_snap: Vec<Matrix>,
}

impl TrainerState {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Self {
        TrainerState {
            adam: Adam::new(&model.store),
            lr: cfg.lr,
            since_improve: 0,
            best_valid: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_done: 0,
            best_snap: snapshot_params(&model.store),
        }
    }

    /// Scalars and Adam moments; the best-snapshot matrices are persisted
    /// separately as a checkpoint.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "trainer lr={:?} since_improve={} best_valid={:?} best_epoch={} epochs_done={}",
            self.lr, self.since_improve, self.best_valid, self.best_epoch, self.epochs_done
        );
        s.push_str(&self.adam.to_text());
        s
    }

    /// Inverse of [`TrainerState::to_text`]; `best_snap` is taken from
    /// `best_model`.
    pub fn from_text(text: &str, best_model: &Model) -> Result<Self> {
        let (head, rest) = text
            .split_once('\n')
            .ok_or_else(|| Error::Io("empty trainer state".into()))?;
        let fields = head
            .strip_prefix("trainer ")
            .ok_or_else(|| Error::Io(format!("bad trainer header '{head}'")))?;
        let mut lr = None;
        let mut since = None;
        let mut best_valid = None;
        let mut best_epoch = None;
        let mut done = None;
        for kv in fields.split(' ') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Io(format!("bad trainer field '{kv}'")))?;
            let bad = || Error::Io(format!("bad trainer value '{kv}'"));
            match k {
                "lr" => lr = Some(v.parse().map_err(|_| bad())?),
                "since_improve" => since = Some(v.parse().map_err(|_| bad())?),
                "best_valid" => best_valid = Some(v.parse().map_err(|_| bad())?),
                "best_epoch" => best_epoch = Some(v.parse().map_err(|_| bad())?),
                "epochs_done" => done = Some(v.parse().map_err(|_| bad())?),
                other => return Err(Error::Io(format!("unknown trainer field '{other}'"))),
            }
        }
        let missing = || Error::Io("incomplete trainer header".into());
        Ok(TrainerState {
            adam: Adam::from_text(rest)?,
            lr: lr.ok_or_else(missing)?,
            since_improve: since.ok_or_else(missing)?,
            best_valid: best_valid.ok_or_else(missing)?,
            best_epoch: best_epoch.ok_or_else(missing)?,
            epochs_done: done.ok_or_else(missing)?,
            best_snap: snapshot_params(&best_model.store),
        })
    }
}

fn run_epochs(
    model: &mut Model,
    task: &Task,
    eos: usize,
    cfg: &TrainConfig,
    state: &mut TrainerState,
    report: &mut TrainReport,
    n_epochs: usize,
) -> Result<()> {
    cfg.validate()?;
    let start = std::time::Instant::now();

    // curriculum stages: indices sorted by length, split at quartiles
    let n = task.n_train();
    let mut by_len: Vec<usize> = (0..n).collect();
    by_len.sort_by_key(|&i| (task.length(i), i));
    let stage_pool = |stage: usize| -> &[usize] {
        let cut = ((stage + 1) * n).div_ceil(4).min(n);
        &by_len[..cut]
    };

    let base = RngStream::new(cfg.seed);
    let settings = cfg.step_settings();
    let mut tape = Tape::new();

    let last_epoch = (state.epochs_done + n_epochs).min(cfg.epochs);
    for epoch in state.epochs_done..last_epoch {
        let pool: Vec<usize> = match cfg.mode {
            TrainMode::Sequential => (0..n).collect(),
            TrainMode::Incremental => {
                let stage = (epoch * 4 / cfg.epochs).min(3);
                stage_pool(stage).to_vec()
            }
        };
        let mut order = pool;
        let pool_len = order.len().max(1) as f64;
        let mut shuffle_rng = base.derive(2 * epoch as u64 + 1);
        shuffle_rng.shuffle(&mut order);
        let mut noise_rng = base.derive(2 * epoch as u64 + 2);

        let mut epoch_loss = 0.0;
        let mut diverged = false;
        for &i in &order {
            model.store.zero_grads();
            let got = match task {
                Task::Recognize { train, .. } => accumulate_sequence_grads(
                    model,
                    &mut tape,
                    &train[i].tokens,
                    Some(train[i].label),
                    eos,
                    cfg.bptt_window,
                    &settings,
                    &mut noise_rng,
                ),
                Task::Lm { train, .. } => accumulate_sequence_grads(
                    model,
                    &mut tape,
                    &train[i],
                    None,
                    eos,
                    cfg.bptt_window,
                    &settings,
                    &mut noise_rng,
                ),
            };
            match got {
                Ok(l) => epoch_loss += l,
                Err(Error::NonFinite(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            clip_grads(&mut model.store, cfg.clip);
            state.adam.step(&mut model.store, cfg, state.lr);
        }

        if diverged {
            report.diverged = true;
            state.epochs_done = epoch + 1;
            report.wall_secs += start.elapsed().as_secs_f64();
            return Ok(());
        }
        let metric = task.valid_metric(model, eos)?;
        report.epoch_train_loss.push(epoch_loss / pool_len);
        report.valid_metric.push(metric);
        report.lr_trace.push(state.lr);
        if metric > state.best_valid {
            state.best_valid = metric;
            state.best_epoch = epoch;
            state.best_snap = snapshot_params(&model.store);
            state.since_improve = 0;
        } else {
            state.since_improve += 1;
            if state.since_improve >= cfg.patience {
                state.lr = (state.lr / 2.0).max(cfg.lr_floor);
                state.since_improve = 0;
            }
        }
        report.best_valid = state.best_valid;
        report.best_epoch = state.best_epoch;
        state.epochs_done = epoch + 1;
    }

    report.wall_secs += start.elapsed().as_secs_f64();
    Ok(())
}

fn fresh_report(model: &Model, cfg: &TrainConfig) -> TrainReport {
    TrainReport {
        family: model.family.id().to_string(),
        seed: cfg.seed,
        epoch_train_loss: Vec::new(),
        valid_metric: Vec::new(),
        lr_trace: Vec::new(),
        best_valid: f64::NEG_INFINITY,
        best_epoch: 0,
        final_test_accuracy: None,
        diverged: false,
        wall_secs: 0.0,
    }
}

/// Train one recognizer for the full epoch budget; the model ends at its
/// best-validation parameters.
pub fn train_one(
    model: &mut Model,
    train: &[Sample],
    valid: &[Sample],
    eos: usize,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut state = TrainerState::new(model, cfg);
    let mut report = fresh_report(model, cfg);
    run_epochs(
        model,
        &Task::Recognize { train, valid },
        eos,
        cfg,
        &mut state,
        &mut report,
        cfg.epochs,
    )?;
    restore_params(&mut model.store, &state.best_snap);
    Ok(report)
}

/// Continuation entry point: advance an existing run by `n_epochs` from
/// its epoch boundary. The model is left at its latest parameters; use
/// `state.best_snap` for the best-validation ones.
pub fn train_more(
    model: &mut Model,
    train: &[Sample],
    valid: &[Sample],
    eos: usize,
    cfg: &TrainConfig,
    state: &mut TrainerState,
    report: &mut TrainReport,
    n_epochs: usize,
) -> Result<()> {
    run_epochs(
        model,
        &Task::Recognize { train, valid },
        eos,
        cfg,
        state,
        report,
        n_epochs,
    )
}

/// CE-only language-model training with perplexity validation. The
/// reported valid metric is negated perplexity so that higher is better.
pub fn train_lm(
    model: &mut Model,
    train: &[Vec<usize>],
    valid: &[Vec<usize>],
    eos: usize,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut state = TrainerState::new(model, cfg);
    let mut report = fresh_report(model, cfg);
    run_epochs(
        model,
        &Task::Lm { train, valid },
        eos,
        cfg,
        &mut state,
        &mut report,
        cfg.epochs,
    )?;
    restore_params(&mut model.store, &state.best_snap);
    Ok(report)
}

/// Aggregate over independent trials.
#[derive(Debug, Clone)]
pub struct TrialAggregate {
    /// Mean test accuracy over completed trials.
    pub mean: f64,
    /// Best (max) test accuracy.
    pub best: f64,
    pub completed: usize,
    pub failed: usize,
    pub reports: Vec<TrainReport>,
}

/// The per-trial seed for trial `i` of a run seeded with `base_seed`.
pub fn trial_seed(base_seed: u64, i: usize) -> u64 {
    RngStream::new(base_seed).derive(0x7472 + i as u64).seed()
}

/// Run `n` independent trials; `trial` maps a seed to (test accuracy,
/// report). Failures are recorded and excluded from the aggregate.
pub fn run_trials<F>(n: usize, base_seed: u64, mut trial: F) -> Result<TrialAggregate>
where
    F: FnMut(u64) -> Result<(f64, TrainReport)>,
{
    if n == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let mut agg = TrialAggregate {
        mean: 0.0,
        best: 0.0,
        completed: 0,
        failed: 0,
        reports: Vec::new(),
    };
    let mut sum = 0.0;
    for i in 0..n {
        match trial(trial_seed(base_seed, i)) {
            Ok((acc, report)) => {
                sum += acc;
                agg.best = agg.best.max(acc);
                agg.completed += 1;
                agg.reports.push(report);
            }
            Err(_) => agg.failed += 1,
        }
    }
    if agg.completed == 0 {
        return Err(Error::Generation("all trials failed".into()));
    }
    agg.mean = sum / agg.completed as f64;
    Ok(agg)
}
