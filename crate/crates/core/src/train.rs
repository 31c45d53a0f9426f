//! Mini-batch training with Adam, warmup plus linear decay, and best-dev
//! model selection.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{resolve, CorpusRecord, Example, LabelInventory, Vocab};
use crate::error::{Error, Result};
use crate::eval::metrics_f1;
use crate::losses::LossReport;
use crate::model::{Model, ModelDims, Staging, Structure, Variant};
use crate::scorer::Params;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    pub seed: u64,
    pub min_count: usize,
    pub dims: ModelDims,
    pub variant: Variant,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    /// Print one metrics line per epoch on standard output.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 5e-3,
            warmup_epochs: 2,
            clip: 5.0,
            seed: 1,
            min_count: 1,
            dims: ModelDims::default(),
            variant: Variant::default(),
            train_path: None,
            dev_path: None,
            model_path: None,
            metrics_path: None,
            verbose: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = &mut self.variant;
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, value)?,
            "clip" => self.clip = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "min_count" => self.min_count = parse_value(key, value)?,
            "d_emb" => self.dims.d_emb = parse_value(key, value)?,
            "window" => self.dims.window = parse_value(key, value)?,
            "hidden" => self.dims.hidden = parse_value(key, value)?,
            "k" => self.dims.k = parse_value(key, value)?,
            "k_label" => self.dims.k_label = parse_value(key, value)?,
            "structure" => {
                v.structure = match value {
                    "lexicalized" => Structure::Lexicalized,
                    "bracketing" => Structure::Bracketing,
                    _ => return Err(Error::Config(format!("unknown structure {value:?}"))),
                }
            }
            "staging" => {
                v.staging = match value {
                    "two_stage_01" => Staging::TwoStageZeroOne,
                    "two_stage" => Staging::TwoStage,
                    "one_stage" => Staging::OneStage,
                    _ => return Err(Error::Config(format!("unknown staging {value:?}"))),
                }
            }
            "head_aware" => v.head_aware = parse_bool(key, value)?,
            "regularize" => v.regularize = parse_bool(key, value)?,
            "parsing" => v.parsing = parse_bool(key, value)?,
            "penalty" => v.penalty = parse_value(key, value)?,
            "decode_penalty" => v.decode_penalty = parse_value(key, value)?,
            "w_tree" => v.w_tree = parse_value(key, value)?,
            "w_label" => v.w_label = parse_value(key, value)?,
            "w_reg" => v.w_reg = parse_value(key, value)?,
            "train" => self.train_path = Some(value.into()),
            "dev" => self.dev_path = Some(value.into()),
            "model" => self.model_path = Some(value.into()),
            "metrics" => self.metrics_path = Some(value.into()),
            "verbose" => self.verbose = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", k + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", k + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs < self.warmup_epochs {
            return Err(Error::Config(
                "epochs must be positive and at least warmup_epochs".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.clip.is_nan() || self.clip < 0.0 {
            return Err(Error::Config("clip must be >= 0".into()));
        }
        self.variant.validate()
    }
}

/// Adam moments and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One Adam update; refuses non-finite gradients without touching the state.
pub fn adam_step(
    params: &mut Params,
    grads: &Params,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Shape(
            "parameter, gradient and optimizer sizes differ".into(),
        ));
    }
    if let Some(tensor) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            tensor: tensor.to_string(),
            step: state.t as usize + 1,
        });
    }
    state.t += 1;
    let b1t = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let b2t = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let g = grads.data();
    for (k, p) in params.data_mut().iter_mut().enumerate() {
        let m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g[k];
        let v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
        state.m[k] = m;
        state.v[k] = v;
        *p -= lr * (m / b1t) / ((v / b2t).sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Linear warmup from 0 to 1 over `warmup` steps, then linear decay to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, warmup: usize) -> f64 {
    let step = step.min(total);
    if step < warmup {
        return step as f64 / warmup as f64;
    }
    if total == warmup {
        return 1.0;
    }
    (total - step) as f64 / (total - warmup) as f64
}

/// Model, optimizer state and the dev score at which they were taken.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub dev_f1: f64,
    pub epoch: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub l_tree: f64,
    pub l_label: f64,
    pub l_reg: f64,
    pub dev_f1: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_head_accuracy: Option<f64>,
    pub dev_shared_heads: usize,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

/// Labeled F1 of a model on annotated records.
pub fn evaluate_model(model: &Model, gold: &[CorpusRecord]) -> Result<crate::eval::EvalReport> {
    let pred = gold
        .iter()
        .map(|r| model.predict_record(&r.tokens))
        .collect::<Result<Vec<_>>>()?;
    metrics_f1(&pred, gold)
}

/// Groups sentence indices of similar length into batches.
fn length_batches(
    examples: &[Example],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| examples[i].sentence.len());
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Trains on `train`, keeping the parameters with the best dev labeled F1.
pub fn train(
    config: &TrainConfig,
    train: &[CorpusRecord],
    dev: &[CorpusRecord],
) -> Result<TrainOutcome> {
    let mut sink: Option<std::io::BufWriter<std::fs::File>> = match &config.metrics_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let verbose = config.verbose;
    train_with(config, train, dev, |m| {
        let line = serde_json::to_string(m).map_err(|e| Error::Internal(e.to_string()))?;
        if verbose {
            writeln!(std::io::stdout().lock(), "{line}")?;
        }
        if let Some(w) = sink.as_mut() {
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        Ok(())
    })
}

pub fn train_with<F>(
    config: &TrainConfig,
    train: &[CorpusRecord],
    dev: &[CorpusRecord],
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochMetrics) -> Result<()>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let labels = LabelInventory::new(
        train
            .iter()
            .chain(dev)
            .flat_map(|r| r.entities.iter().flat_map(|e| e.labels.iter().cloned()))
            .collect(),
    );
    let vocab = Vocab::build(train, config.min_count);
    let examples = resolve(train, &labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::new(
        config.variant.clone(),
        &config.dims,
        vocab,
        labels,
        &mut rng,
    )?;
    let mut adam = AdamState::new(model.scorer.params.len());
    let mut grads = Params::zeros(model.scorer.dims());

    let batches_per_epoch = examples.len().div_ceil(config.batch_size);
    let total = batches_per_epoch * config.epochs;
    let warmup = batches_per_epoch * config.warmup_epochs;
    let mut step = 0;
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut sum = LossReport::default();
        let mut lr = 0.0;
        for batch in length_batches(&examples, config.batch_size, &mut rng) {
            grads.fill(0.0);
            for &i in &batch {
                let r = model.objective(&examples[i], &mut grads)?;
                sum.add(&r);
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.l2_norm();
            if config.clip > 0.0 && norm > config.clip {
                grads.scale(config.clip / norm);
            }
            step += 1;
            lr = config.lr * lr_schedule(step, total, warmup);
            adam_step(&mut model.scorer.params, &grads, &mut adam, lr)?;
        }
        let report = if dev.is_empty() {
            None
        } else {
            Some(evaluate_model(&model, dev)?)
        };
        let dev_f1 = report.as_ref().map_or(0.0, |r| r.f1);
        let count = examples.len() as f64;
        let metrics = EpochMetrics {
            epoch,
            loss: sum.total / count,
            l_tree: sum.l_tree / count,
            l_label: sum.l_label / count,
            l_reg: sum.l_reg / count,
            dev_f1,
            dev_precision: report.as_ref().map_or(0.0, |r| r.precision),
            dev_recall: report.as_ref().map_or(0.0, |r| r.recall),
            dev_head_accuracy: report.as_ref().and_then(|r| r.head_accuracy),
            dev_shared_heads: report.as_ref().map_or(0, |r| r.shared_head_count),
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics)?;
        history.push(metrics);
        if best
            .as_ref()
            .is_none_or(|b| dev_f1 > b.dev_f1 || dev.is_empty())
        {
            best = Some(Checkpoint {
                model: model.clone(),
                adam: adam.clone(),
                dev_f1,
                epoch,
            });
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::ScorerDims;

    fn tiny_dims() -> ScorerDims {
        ScorerDims {
            vocab: 5,
            d_emb: 2,
            window: 0,
            hidden: 2,
            k: 2,
            k_label: 2,
            span_channels: 2,
            label_classes: 1,
        }
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 100, 10), 0.0);
        assert_eq!(lr_schedule(10, 100, 10), 1.0);
        assert_eq!(lr_schedule(100, 100, 10), 0.0);
        assert!((lr_schedule(5, 100, 10) - 0.5).abs() < 1e-15);
        assert!((lr_schedule(55, 100, 10) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let d = tiny_dims();
        let mut p = Params::zeros(&d);
        let mut g = Params::zeros(&d);
        g.data_mut()[0] = 0.3;
        g.data_mut()[1] = -2.0;
        let mut st = AdamState::new(p.len());
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        // m_hat = g and v_hat = g^2 after one step
        let expect = |x: f64| -0.01 * x / (x.abs() + ADAM_EPS);
        assert!((p.data()[0] - expect(0.3)).abs() < 1e-15);
        assert!((p.data()[1] - expect(-2.0)).abs() < 1e-15);
        let before = p.clone();
        let m0 = st.m[0];
        g.fill(0.0);
        adam_step(&mut p, &g, &mut st, 0.0).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.m[0], ADAM_BETA1 * m0);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let d = tiny_dims();
        let mut p = Params::zeros(&d);
        let mut g = Params::zeros(&d);
        g.data_mut()[0] = 0.7;
        let mut st = AdamState::new(p.len());
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.data()[0];
            adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
            last = p.data()[0] - before;
        }
        assert!((last + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_nan() {
        let d = tiny_dims();
        let mut p = Params::zeros(&d);
        let mut g = Params::zeros(&d);
        g.data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(p.len());
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, 0.1),
            Err(Error::NonFiniteGradient { step: 1, .. })
        ));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn config_parsing() {
        let c = TrainConfig::parse(
            "epochs = 4\n# note\nwarmup_epochs=1\nstaging = two_stage\npenalty=0.2\n",
        )
        .unwrap();
        assert_eq!(c.epochs, 4);
        assert_eq!(c.variant.staging, Staging::TwoStage);
        assert_eq!(c.variant.penalty, 0.2);
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("epochs = x").is_err());
        assert!(TrainConfig::parse("epochs = 1\nwarmup_epochs = 2").is_err());
        assert!(TrainConfig::parse("batch_size = 0").is_err());
        assert!(TrainConfig::parse("epochs").is_err());
    }

    #[test]
    fn empty_train_set_is_an_error() {
        assert!(matches!(
            train(&TrainConfig::default(), &[], &[]),
            Err(Error::EmptyInput)
        ));
    }
}
