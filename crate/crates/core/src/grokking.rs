//! Modular-addition grokking harness.
//!
//! Every example is the token sequence `[a, b, =]` with `=` encoded as token
//! `p`, and the model is trained to predict `(a + b) mod p` at the final
//! position. After each epoch the harness evaluates both splits and probes
//! the final-query attention rows of a fixed held-out batch, logging the
//! energy spread of those rows as a specific heat.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::effective_temperature;
use crate::error::{Error, Result};
use crate::nn::{
    attention_cv, attention_entropy, AdamW, AttentionProbe, CvWeighting, LogitRows, NormScope, OptimizerConfig,
    ProbeMode, Scalar, Transformer, TransformerConfig,
};

/// Version tag written as the first line of `metrics.csv`.
pub const METRICS_SCHEMA: &str = "# schema: metrics v1";

pub const METRICS_COLUMNS: [&str; 11] = [
    "epoch",
    "train_loss",
    "val_loss",
    "train_acc",
    "val_acc",
    "cv_weighted",
    "cv_unweighted",
    "weight_norm_sq",
    "t_eff",
    "attn_entropy",
    "timestamp",
];

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n.is_multiple_of(2) {
        return false;
    }
    let mut d = 3;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// One `(a, b)` pair; its label is `(a + b) mod p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModAddDataset {
    pub p: usize,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

impl ModAddDataset {
    pub fn label(&self, e: Example) -> usize {
        (e.a + e.b) % self.p
    }

    pub fn eq_token(&self) -> usize {
        self.p
    }

    pub fn vocab_size(&self) -> usize {
        self.p + 1
    }

    /// Flattened `[a, b, =]` token rows and their labels.
    pub fn encode(&self, examples: &[Example]) -> (Vec<usize>, Vec<usize>) {
        let mut tokens = Vec::with_capacity(examples.len() * 3);
        let mut labels = Vec::with_capacity(examples.len());
        for &e in examples {
            tokens.extend_from_slice(&[e.a, e.b, self.eq_token()]);
            labels.push(self.label(e));
        }
        (tokens, labels)
    }
}

pub fn generate_dataset(p: u64, split_seed: u64) -> Result<ModAddDataset> {
    generate_dataset_with_fraction(p, split_seed, 0.5)
}

/// All `p²` pairs, shuffled by `split_seed`; the first `⌊f·p²⌋` train.
pub fn generate_dataset_with_fraction(p: u64, split_seed: u64, train_fraction: f64) -> Result<ModAddDataset> {
    if !(3..=10_007).contains(&p) {
        return Err(Error::invalid(format!("modulus {p} outside 3..=10007")));
    }
    if !is_prime(p) {
        return Err(Error::NotPrime(p));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must lie in (0, 1)"));
    }
    let p = p as usize;
    let mut all: Vec<Example> = (0..p).flat_map(|a| (0..p).map(move |b| Example { a, b })).collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_train = ((p * p) as f64 * train_fraction).floor() as usize;
    let val = all.split_off(n_train);
    Ok(ModAddDataset { p, split_seed, train_fraction, train: all, val })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Self::F64),
            "f32" => Ok(Self::F32),
            other => Err(Error::invalid(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    /// Evaluate and log every this many epochs (epoch 0 is always logged).
    pub eval_every: usize,
    /// Stop once `val_acc ≥ early_stop_acc` has held for this many epochs.
    pub early_stop_patience: Option<usize>,
    pub early_stop_acc: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self { max_epochs: 30_000, eval_every: 1, early_stop_patience: Some(500), early_stop_acc: 0.99 }
    }
}

impl TrainSchedule {
    /// 30000 epochs up to `p = 37`, 60000 beyond.
    pub fn for_modulus(p: u64) -> Self {
        Self { max_epochs: if p <= 37 { 30_000 } else { 60_000 }, ..Self::default() }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrokConfig {
    pub p: u64,
    pub seed: u64,
    /// Dataset split seed; the run seed when absent.
    pub split_seed: Option<u64>,
    pub train_fraction: f64,
    pub batch_size: usize,
    pub probe_size: usize,
    pub precision: Precision,
    pub norm_scope: NormScope,
    pub memorization_threshold: f64,
    pub generalization_threshold: f64,
    pub smooth_window: usize,
    /// Series used for peak detection.
    pub cv_weighting: CvWeighting,
    pub model: TransformerConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: TrainSchedule,
}

impl Default for GrokConfig {
    fn default() -> Self {
        Self {
            p: 19,
            seed: 0,
            split_seed: None,
            train_fraction: 0.5,
            batch_size: 512,
            probe_size: 256,
            precision: Precision::F64,
            norm_scope: NormScope::QkProjections,
            memorization_threshold: 0.99,
            generalization_threshold: 0.95,
            smooth_window: 5,
            cv_weighting: CvWeighting::RhoWeighted,
            model: TransformerConfig::default(),
            optimizer: OptimizerConfig::default(),
            schedule: TrainSchedule::default(),
        }
    }
}

impl GrokConfig {
    /// Default configuration for modulus `p`.
    pub fn for_modulus(p: u64) -> Self {
        Self { p, schedule: TrainSchedule::for_modulus(p), ..Self::default() }
    }

    /// The reduced pipeline-health configuration: `p = 19`, `d_model = 64`,
    /// 5000 epochs.
    pub fn smoke() -> Self {
        let mut c = Self::for_modulus(19);
        c.model.d_model = 64;
        c.schedule.max_epochs = 5000;
        c
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    /// Model configuration with vocabulary, sequence length and seed filled in.
    pub fn resolved_model(&self) -> TransformerConfig {
        TransformerConfig { vocab_size: self.p as usize + 1, seq_len: 3, seed: self.seed, ..self.model.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !is_prime(self.p) {
            return Err(Error::NotPrime(self.p));
        }
        if self.batch_size == 0 || self.probe_size == 0 {
            return Err(Error::invalid("batch_size and probe_size must be positive"));
        }
        if self.smooth_window == 0 {
            return Err(Error::invalid("smooth_window must be positive"));
        }
        if self.schedule.eval_every == 0 {
            return Err(Error::invalid("eval_every must be positive"));
        }
        for (name, t) in [
            ("memorization_threshold", self.memorization_threshold),
            ("generalization_threshold", self.generalization_threshold),
            ("early_stop_acc", self.schedule.early_stop_acc),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        self.resolved_model().validate()?;
        self.optimizer.validate()
    }
}

/// Metrics logged after one epoch (epoch 0 is the untrained model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub cv_weighted: f64,
    pub cv_unweighted: f64,
    pub weight_norm_sq: f64,
    pub t_eff: f64,
    pub attn_entropy: f64,
    /// Seconds since the run started; absent in reproducible mode.
    pub timestamp: Option<f64>,
}

impl TrainRunRecord {
    pub fn cv(&self, weighting: CvWeighting) -> f64 {
        match weighting {
            CvWeighting::RhoWeighted => self.cv_weighted,
            CvWeighting::Unweighted => self.cv_unweighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum RunStatus {
    Completed,
    EarlyStopped,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub p: u64,
    pub seed: u64,
    pub cv_series: CvWeighting,
    pub cv_peak_epoch: usize,
    /// Smoothed series value at the peak.
    pub cv_peak_value: f64,
    pub generalization_epoch: Option<usize>,
    pub memorization_epoch: Option<usize>,
    pub peak_precedes_generalization: bool,
    pub epochs_run: usize,
    pub final_train_acc: f64,
    pub final_val_acc: f64,
    pub status: RunStatus,
}

/// Centered moving average; near the ends the window shrinks to the
/// available points.
pub fn centered_moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half_lo = (window - 1) / 2;
    let half_hi = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Result of [`detect_transition`], in epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub generalization_epoch: Option<usize>,
    pub cv_peak_epoch: usize,
    pub cv_peak_value: f64,
}

/// Generalization is the first point whose smoothed `val_acc` reaches the
/// threshold; the peak is the argmax of the smoothed specific heat over points
/// before `generalization + window` (all points if there is no
/// generalization), ties going to the earliest.
pub fn detect_transition(
    records: &[TrainRunRecord],
    acc_threshold: f64,
    smooth_window: usize,
    weighting: CvWeighting,
) -> Result<Transition> {
    if smooth_window == 0 {
        return Err(Error::invalid("smooth_window must be positive"));
    }
    if records.len() < smooth_window {
        return Err(Error::invalid(format!(
            "{} records are fewer than the smoothing window {smooth_window}",
            records.len()
        )));
    }
    let acc: Vec<f64> = records.iter().map(|r| r.val_acc).collect();
    let cv: Vec<f64> = records.iter().map(|r| r.cv(weighting)).collect();
    let acc_s = centered_moving_average(&acc, smooth_window);
    let cv_s = centered_moving_average(&cv, smooth_window);
    let gen_idx = acc_s.iter().position(|&a| a >= acc_threshold);
    let limit = gen_idx.map_or(records.len(), |g| (g + smooth_window).min(records.len()));
    let mut best = 0;
    for i in 1..limit {
        if cv_s[i] > cv_s[best] {
            best = i;
        }
    }
    Ok(Transition {
        generalization_epoch: gen_idx.map(|i| records[i].epoch),
        cv_peak_epoch: records[best].epoch,
        cv_peak_value: cv_s[best],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub n: usize,
    pub cv_peak_mean: f64,
    pub cv_peak_std: f64,
    pub precedence_fraction: f64,
}

pub fn aggregate_seeds(summaries: &[RunSummary]) -> Result<SeedAggregate> {
    if summaries.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 summaries, got {}", summaries.len())));
    }
    let n = summaries.len() as f64;
    let mean = summaries.iter().map(|s| s.cv_peak_value).sum::<f64>() / n;
    let var = summaries.iter().map(|s| (s.cv_peak_value - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let preceded = summaries.iter().filter(|s| s.peak_precedes_generalization).count();
    Ok(SeedAggregate {
        n: summaries.len(),
        cv_peak_mean: mean,
        cv_peak_std: var.sqrt(),
        precedence_fraction: preceded as f64 / n,
    })
}

/// Options that affect logging but not the trained model.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Omit wall-clock timestamps so records are byte-reproducible.
    pub reproducible: bool,
}

/// Trains one seed. Divergence is not an `Err`: the run is marked failed and
/// the records logged so far are returned.
pub fn run_experiment(cfg: &GrokConfig, opts: RunOptions) -> Result<(Vec<TrainRunRecord>, RunSummary)> {
    run_experiment_with(cfg, opts, |_| {})
}

/// [`run_experiment`] with a callback invoked on every logged record.
pub fn run_experiment_with(
    cfg: &GrokConfig,
    opts: RunOptions,
    on_record: impl FnMut(&TrainRunRecord),
) -> Result<(Vec<TrainRunRecord>, RunSummary)> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F64 => Trainer::<f64>::new(cfg, opts)?.run(on_record),
        Precision::F32 => Trainer::<f32>::new(cfg, opts)?.run(on_record),
    }
}

struct Split {
    tokens: Vec<usize>,
    labels: Vec<usize>,
}

impl Split {
    fn len(&self) -> usize {
        self.labels.len()
    }
}

struct Eval {
    loss: f64,
    acc: f64,
}

struct Trainer<'a, F: Scalar> {
    cfg: &'a GrokConfig,
    opts: RunOptions,
    model: Transformer<F>,
    opt: AdamW<F>,
    train: Split,
    val: Split,
    /// The probe batch is the first `probe_n` validation examples.
    probe_n: usize,
    shuffle_rng: ChaCha8Rng,
    started: Instant,
}

/// Loss and accuracy of `[n, classes]` logits.
fn score<F: Scalar>(logits: &[F], classes: usize, labels: &[usize]) -> Eval {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (row, &y) in logits.chunks(classes).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        loss += lse - row[y].as_f64();
        // argmax with ties to the lowest class
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == y);
    }
    let n = labels.len() as f64;
    Eval { loss: loss / n, acc: correct as f64 / n }
}

impl<'a, F: Scalar> Trainer<'a, F> {
    fn new(cfg: &'a GrokConfig, opts: RunOptions) -> Result<Self> {
        let data = generate_dataset_with_fraction(cfg.p, cfg.split_seed(), cfg.train_fraction)?;
        let model = Transformer::<F>::new(cfg.resolved_model())?;
        let opt = AdamW::new(cfg.optimizer, model.params())?;
        let split = |ex: &[Example]| {
            let (tokens, labels) = data.encode(ex);
            Split { tokens, labels }
        };
        let probe_n = cfg.probe_size.min(data.val.len());
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(1);
        Ok(Self {
            cfg,
            opts,
            train: split(&data.train),
            val: split(&data.val),
            probe_n,
            model,
            opt,
            shuffle_rng,
            started: Instant::now(),
        })
    }

    fn classes(&self) -> usize {
        self.cfg.p as usize + 1
    }

    fn evaluate(&self, split: &Split) -> Result<Eval> {
        Ok(self.evaluate_probed(split, 0)?.0)
    }

    /// Loss and accuracy over a split. When `probe_n > 0`, also returns the
    /// final-query attention rows of the first `probe_n` examples, taken from
    /// the same forward pass when they fit in its first chunk.
    fn evaluate_probed(&self, split: &Split, probe_n: usize) -> Result<(Eval, Vec<AttentionProbe>)> {
        let mut loss = 0.0;
        let mut acc = 0.0;
        let mut probes = Vec::new();
        let chunk = self.cfg.batch_size.max(1);
        for start in (0..split.len()).step_by(chunk) {
            let end = (start + chunk).min(split.len());
            let probe_here = start == 0 && probe_n > 0 && probe_n <= end;
            let mode = if probe_here { ProbeMode::LastQuery } else { ProbeMode::None };
            let pass =
                self.model.forward_graph(&split.tokens[start * 3..end * 3], end - start, 3, LogitRows::Last, mode)?;
            let e = score(pass.graph.value(pass.logits).data(), self.classes(), &split.labels[start..end]);
            let w = (end - start) as f64;
            loss += e.loss * w;
            acc += e.acc * w;
            if probe_here {
                probes = pass.probes;
                for p in &mut probes {
                    p.rows.retain(|r| r.batch_index < probe_n);
                }
            }
        }
        if probe_n > 0 && probes.is_empty() {
            let pass = self.model.forward_graph(
                &split.tokens[..probe_n * 3],
                probe_n,
                3,
                LogitRows::Last,
                ProbeMode::LastQuery,
            )?;
            probes = pass.probes;
        }
        let n = split.len() as f64;
        Ok((Eval { loss: loss / n, acc: acc / n }, probes))
    }

    /// One shuffled pass over the training split; returns metrics of the
    /// pre-update logits.
    fn train_epoch(&mut self, epoch: usize) -> Result<Eval> {
        let n = self.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        let bs = self.cfg.batch_size.min(n);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        let mut tokens = Vec::with_capacity(bs * 3);
        let mut labels = Vec::with_capacity(bs);
        for batch in order.chunks(bs) {
            tokens.clear();
            labels.clear();
            for &i in batch {
                tokens.extend_from_slice(&self.train.tokens[i * 3..i * 3 + 3]);
                labels.push(self.train.labels[i]);
            }
            let mut pass = self.model.forward_graph(&tokens, batch.len(), 3, LogitRows::Last, ProbeMode::None)?;
            let loss = pass.graph.cross_entropy(pass.logits, &labels)?;
            let loss_value = pass.graph.value(loss).data()[0].as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite { step: epoch, what: "training loss".into() });
            }
            let e = score(pass.graph.value(pass.logits).data(), self.classes(), &labels);
            let grads = pass.graph.backward(loss, self.model.params())?;
            self.opt.step(self.model.params_mut(), &grads)?;
            let w = batch.len() as f64;
            loss_sum += e.loss * w;
            acc_sum += e.acc * w;
        }
        Ok(Eval { loss: loss_sum / n as f64, acc: acc_sum / n as f64 })
    }

    fn record(&self, epoch: usize, train: Eval) -> Result<TrainRunRecord> {
        let (val, probes) = self.evaluate_probed(&self.val, self.probe_n)?;
        let w = self.model.weight_norm_sq(self.cfg.norm_scope);
        Ok(TrainRunRecord {
            epoch,
            train_loss: train.loss,
            val_loss: val.loss,
            train_acc: train.acc,
            val_acc: val.acc,
            cv_weighted: attention_cv(&probes, 1.0, CvWeighting::RhoWeighted)?,
            cv_unweighted: attention_cv(&probes, 1.0, CvWeighting::Unweighted)?,
            weight_norm_sq: w,
            t_eff: effective_temperature(self.model.config().d_k(), w)?,
            attn_entropy: attention_entropy(&probes)?,
            timestamp: (!self.opts.reproducible).then(|| self.started.elapsed().as_secs_f64()),
        })
    }

    fn run(mut self, mut on_record: impl FnMut(&TrainRunRecord)) -> Result<(Vec<TrainRunRecord>, RunSummary)> {
        let sched = self.cfg.schedule.clone();
        let mut records = Vec::new();
        let initial = self.evaluate(&self.train)?;
        let r0 = self.record(0, initial)?;
        on_record(&r0);
        records.push(r0);

        let mut status = RunStatus::Completed;
        let mut above_since: Option<usize> = None;
        let mut epochs_run = 0;
        for epoch in 1..=sched.max_epochs {
            let train = match self.train_epoch(epoch) {
                Ok(t) => t,
                Err(e @ Error::NonFinite { .. }) => {
                    status = RunStatus::Failed(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            };
            epochs_run = epoch;
            if epoch % sched.eval_every != 0 && epoch != sched.max_epochs {
                continue;
            }
            let rec = match self.record(epoch, train) {
                Ok(r) => r,
                Err(e) => {
                    status = RunStatus::Failed(e.to_string());
                    break;
                }
            };
            if !(rec.train_loss.is_finite() && rec.val_loss.is_finite()) {
                status = RunStatus::Failed(format!("non-finite loss at epoch {epoch}"));
                on_record(&rec);
                records.push(rec);
                break;
            }
            let above = rec.val_acc >= sched.early_stop_acc;
            on_record(&rec);
            records.push(rec);
            if above {
                let since = *above_since.get_or_insert(epoch);
                if sched.early_stop_patience.is_some_and(|p| epoch - since >= p) {
                    status = RunStatus::EarlyStopped;
                    break;
                }
            } else {
                above_since = None;
            }
        }
        let summary = summarize(self.cfg, &records, epochs_run, status);
        Ok((records, summary))
    }
}

/// Builds the summary of a finished (or failed) run.
pub fn summarize(cfg: &GrokConfig, records: &[TrainRunRecord], epochs_run: usize, status: RunStatus) -> RunSummary {
    let memorization_epoch = records.iter().find(|r| r.train_acc >= cfg.memorization_threshold).map(|r| r.epoch);
    let window = cfg.smooth_window.min(records.len()).max(1);
    let t = detect_transition(records, cfg.generalization_threshold, window, cfg.cv_weighting)
        .expect("window clamped to record count");
    let last = records.last();
    RunSummary {
        p: cfg.p,
        seed: cfg.seed,
        cv_series: cfg.cv_weighting,
        cv_peak_epoch: t.cv_peak_epoch,
        cv_peak_value: t.cv_peak_value,
        generalization_epoch: t.generalization_epoch,
        memorization_epoch,
        peak_precedes_generalization: t.generalization_epoch.is_some_and(|g| t.cv_peak_epoch <= g),
        epochs_run,
        final_train_acc: last.map_or(0.0, |r| r.train_acc),
        final_val_acc: last.map_or(0.0, |r| r.val_acc),
        status,
    }
}

/// Writes `metrics.csv` with its schema line. Floats use shortest
/// round-trip formatting; a missing timestamp is an empty field.
pub fn write_metrics_csv(records: &[TrainRunRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{METRICS_SCHEMA}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in records {
        let mut row = vec![r.epoch.to_string()];
        row.extend(
            [
                r.train_loss,
                r.val_loss,
                r.train_acc,
                r.val_acc,
                r.cv_weighted,
                r.cv_unweighted,
                r.weight_norm_sq,
                r.t_eff,
                r.attn_entropy,
            ]
            .iter()
            .map(f64::to_string),
        );
        row.push(r.timestamp.map_or_else(String::new, |t| t.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<TrainRunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    if first.trim_end() != METRICS_SCHEMA {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            expected: METRICS_SCHEMA.into(),
            found: first.trim_end().into(),
        });
    }
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            expected: METRICS_COLUMNS.join(","),
            found: header.join(","),
        });
    }
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
