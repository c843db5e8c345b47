//! Per-utterance SGD for word CTC, phoneme CTC and frame-classifier models.
//!
//! The schedule has two phases. Phase 1 runs at a constant step size; the
//! dev-best phase-1 model then seeds phase 2, whose step size decays
//! geometrically after every epoch. The dev-best model over both phases is
//! returned. Every update clips the global gradient norm.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::ctc::{argmax, ctc_loss_and_gradient, greedy_decode, Vocabulary};
use crate::data::{Corpus, Lexicon};
use crate::error::{Error, Result};
use crate::metrics::{edit_distance, error_rate, EditStats};
use crate::network::{ModelKind, Network, SILENCE_SYMBOL};
use crate::numerics::{clip_global_norm, Mat};

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// label sequence for CTC
    Labels(Vec<usize>),
    /// one class per input frame
    Frames(Vec<usize>),
}

impl Target {
    /// Number of labels the loss is normalized by.
    pub fn label_count(&self) -> usize {
        match self {
            Target::Labels(l) | Target::Frames(l) => l.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Mat,
    pub target: Target,
}

/// Training examples encoded against a fixed output label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: ModelKind,
    /// output labels, excluding the trailing blank / silence class
    pub labels: Vec<String>,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Word-CTC targets: transcripts mapped through `vocab`.
    pub fn word_ctc(corpus: &Corpus, vocab: &Vocabulary) -> Result<Self> {
        let examples = corpus
            .iter()
            .map(|u| {
                Ok(Example {
                    id: u.id.clone(),
                    features: u.features.to_mat(),
                    target: Target::Labels(vocab.encode(&u.words)?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            kind: ModelKind::WordCtc,
            labels: vocab.labels().to_vec(),
            examples,
        })
    }

    /// Phoneme-CTC targets over the lexicon's phoneme inventory.
    pub fn phoneme_ctc(corpus: &Corpus, lexicon: &Lexicon) -> Result<Self> {
        let phonemes = convert_transcripts_to_phonemes(corpus, lexicon)?;
        let vocab = Vocabulary::new(lexicon.phonemes().iter().cloned())?;
        let mut ds = Self::word_ctc(&phonemes, &vocab)?;
        ds.kind = ModelKind::PhonemeCtc;
        Ok(ds)
    }

    /// Per-frame word targets from forced alignments; silence is class `V`.
    pub fn frame_classifier(corpus: &Corpus, vocab: &Vocabulary) -> Result<Self> {
        let silence = vocab.len();
        let examples = corpus
            .iter()
            .map(|u| {
                let align = u.alignment.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("utterance {} has no frame alignment", u.id))
                })?;
                if align.len() != u.features.frames() {
                    return Err(Error::DimensionMismatch {
                        what: "alignment length",
                        expected: u.features.frames(),
                        actual: align.len(),
                    });
                }
                let frames = align
                    .iter()
                    .map(|l| {
                        if l == SILENCE_SYMBOL {
                            Ok(silence)
                        } else {
                            vocab.id(l).ok_or_else(|| Error::UnknownWord(l.clone()))
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(Example {
                    id: u.id.clone(),
                    features: u.features.to_mat(),
                    target: Target::Frames(frames),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            kind: ModelKind::FrameClassifier,
            labels: vocab.labels().to_vec(),
            examples,
        })
    }

    /// Builds the dataset a model of `kind` trains on.
    pub fn for_kind(kind: ModelKind, corpus: &Corpus, words: &Vocabulary, lexicon: Option<&Lexicon>) -> Result<Self> {
        match kind {
            ModelKind::WordCtc => Self::word_ctc(corpus, words),
            ModelKind::FrameClassifier => Self::frame_classifier(corpus, words),
            ModelKind::PhonemeCtc => {
                let lex = lexicon
                    .ok_or_else(|| Error::InvalidArgument("phoneme targets need a lexicon".into()))?;
                Self::phoneme_ctc(corpus, lex)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.cols())
    }

    fn check_model(&self, model: &Network) -> Result<()> {
        if model.kind() != self.kind {
            return Err(Error::InvalidArgument(format!(
                "{} model cannot train on {} targets",
                model.kind(),
                self.kind
            )));
        }
        if model.labels() != self.labels.as_slice() {
            return Err(Error::InvalidArgument(
                "model output labels differ from the dataset's".into(),
            ));
        }
        Ok(())
    }
}

/// Replaces every word with its canonical pronunciation. Alignments are
/// word-level and are dropped.
pub fn convert_transcripts_to_phonemes(corpus: &Corpus, lexicon: &Lexicon) -> Result<Corpus> {
    let utterances = corpus
        .iter()
        .map(|u| {
            let mut out = u.clone();
            out.words = lexicon.to_phonemes(&u.words)?;
            out.alignment = None;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(Corpus::new(utterances))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase1_lr: f64,
    pub phase2_epochs: usize,
    pub phase2_lr: f64,
    /// multiplicative step-size decay after each phase-2 epoch
    pub decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_epochs: 20,
            phase1_lr: 0.05,
            phase2_epochs: 20,
            phase2_lr: 0.0375,
            decay: 0.75,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "phase1_epochs",
    "phase1_lr",
    "phase2_epochs",
    "phase2_lr",
    "decay",
    "clip_norm",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phase1_lr > 0.0 && self.phase2_lr > 0.0) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay {} must lie in (0, 1]", self.decay)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        if self.phase1_epochs == 0 {
            return Err(Error::Config("phase 1 needs at least one epoch".into()));
        }
        Ok(())
    }

    /// Step size for `epoch` (1-based) of `phase` (1 or 2).
    pub fn learning_rate(&self, phase: u8, epoch: usize) -> f64 {
        match phase {
            1 => self.phase1_lr,
            _ => self.phase2_lr * self.decay.powi(epoch.saturating_sub(1) as i32),
        }
    }

    /// Defaults overridden by the keys `cfg` sets; other keys are ignored so
    /// one file can carry model options too.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        cfg.apply("phase1_epochs", &mut c.phase1_epochs)?;
        cfg.apply("phase1_lr", &mut c.phase1_lr)?;
        cfg.apply("phase2_epochs", &mut c.phase2_epochs)?;
        cfg.apply("phase2_lr", &mut c.phase2_lr)?;
        cfg.apply("decay", &mut c.decay)?;
        cfg.apply("clip_norm", &mut c.clip_norm)?;
        cfg.apply("seed", &mut c.seed)?;
        Ok(c)
    }

    pub fn keys() -> &'static [&'static str] {
        TRAIN_KEYS
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub train_perplexity: f64,
    pub dev_metric: f64,
    pub skipped: usize,
    /// updates whose gradient was rescaled
    #[serde(skip)]
    pub clipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// Newline-delimited JSON, one object per epoch, fields in the order
    /// epoch, phase, lr, train_loss, train_perplexity, dev_metric, skipped.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = serde_json::to_string(r).expect("plain struct serializes");
            writeln!(out, "{line}").expect("string write");
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Malformed {
                    file: "train log".into(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ndjson()).map_err(|e| Error::io(path, e))
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.dev_metric <= r.dev_metric => Some(b),
                _ => Some(r),
            })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// dev-best model over all epochs
    pub model: Network,
    pub log: TrainLog,
    /// 1-based global epoch of the returned model
    pub best_epoch: usize,
}

/// Loss of one example and its gradient w.r.t. the output logits.
pub fn example_loss_and_gradient(model: &Network, example: &Example) -> Result<(f64, Mat, crate::network::ForwardTape)> {
    let (lattice, tape) = model.forward(&example.features)?;
    match &example.target {
        Target::Labels(y) => {
            let (loss, grad) = ctc_loss_and_gradient(&lattice, y)?;
            Ok((loss, grad, tape))
        }
        Target::Frames(labels) => {
            if labels.len() != lattice.frames() {
                return Err(Error::DimensionMismatch {
                    what: "frame targets",
                    expected: lattice.frames(),
                    actual: labels.len(),
                });
            }
            let mut grad = Mat::zeros(lattice.frames(), lattice.dim());
            let mut loss = 0.0;
            for (t, &k) in labels.iter().enumerate() {
                let row = lattice.row(t);
                loss -= row[k];
                let g = grad.row_mut(t);
                for (gv, lp) in g.iter_mut().zip(row) {
                    *gv = lp.exp();
                }
                g[k] -= 1.0;
            }
            Ok((loss, grad, tape))
        }
    }
}

/// Outcome of one SGD update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub grad_norm: f64,
    pub clip_factor: f64,
}

/// A single clipped SGD update on one example.
pub fn sgd_update(model: &mut Network, example: &Example, lr: f64, clip_norm: f64) -> Result<StepReport> {
    let (loss, out_grad, tape) = example_loss_and_gradient(model, example)?;
    let (mut grads, _) = model.backward(&tape, &out_grad)?;
    let grad_norm = grads.norm();
    let clip_factor = clip_global_norm(&mut grads.tensors_mut(), clip_norm);
    model.sgd_step(&grads, lr);
    Ok(StepReport {
        loss,
        grad_norm,
        clip_factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// WER / PER for CTC models, FER for frame classifiers, in percent
    pub error_rate: f64,
    /// pooled edit counts (CTC models only)
    pub edits: Option<EditStats>,
}

/// Greedy-decodes (or frame-classifies) every example and pools errors.
pub fn evaluate(model: &Network, data: &Dataset) -> Result<Evaluation> {
    data.check_model(model)?;
    match data.kind {
        ModelKind::FrameClassifier => {
            let (mut wrong, mut total) = (0usize, 0usize);
            for ex in &data.examples {
                let Target::Frames(labels) = &ex.target else {
                    return Err(Error::InvalidArgument("frame classifier needs frame targets".into()));
                };
                let hyp = classify_frames(model, &ex.features)?;
                let (w, n) = crate::metrics::frame_errors(labels, &hyp)?;
                wrong += w;
                total += n;
            }
            if total == 0 {
                return Err(Error::EmptyInput("frame error rate"));
            }
            Ok(Evaluation {
                error_rate: 100.0 * wrong as f64 / total as f64,
                edits: None,
            })
        }
        _ => {
            let mut pooled = EditStats::default();
            for ex in &data.examples {
                let Target::Labels(reference) = &ex.target else {
                    return Err(Error::InvalidArgument("CTC model needs label targets".into()));
                };
                let hyp = decode(model, &ex.features)?;
                pooled += edit_distance(reference, &hyp);
            }
            Ok(Evaluation {
                error_rate: error_rate(&pooled)?,
                edits: Some(pooled),
            })
        }
    }
}

/// Best-path label ids for a CTC model.
pub fn decode(model: &Network, features: &Mat) -> Result<Vec<usize>> {
    let (lattice, _) = model.forward(features)?;
    Ok(greedy_decode(&lattice))
}

/// Arg-max class per input frame for a frame classifier.
pub fn classify_frames(model: &Network, features: &Mat) -> Result<Vec<usize>> {
    let (lattice, _) = model.forward(features)?;
    Ok((0..lattice.frames()).map(|t| argmax(lattice.row(t))).collect())
}

/// Summed cross entropy divided by the number of labels (not frames).
/// Examples whose target is infeasible are left out of both sums.
pub fn training_perplexity(model: &Network, data: &Dataset) -> Result<f64> {
    data.check_model(model)?;
    let (mut loss, mut labels) = (0.0, 0usize);
    for ex in &data.examples {
        match example_loss_and_gradient(model, ex) {
            Ok((l, _, _)) => {
                loss += l;
                labels += ex.target.label_count();
            }
            Err(Error::InfeasibleTarget { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if labels == 0 {
        return Err(Error::EmptyInput("perplexity label count"));
    }
    Ok(loss / labels as f64)
}

struct EpochStats {
    loss: f64,
    labels: usize,
    skipped: usize,
    clipped: usize,
}

fn run_epoch(model: &mut Network, data: &Dataset, order: &[usize], lr: f64, clip: f64) -> Result<EpochStats> {
    let mut stats = EpochStats {
        loss: 0.0,
        labels: 0,
        skipped: 0,
        clipped: 0,
    };
    for &i in order {
        let ex = &data.examples[i];
        match sgd_update(model, ex, lr, clip) {
            Ok(step) => {
                stats.loss += step.loss;
                stats.labels += ex.target.label_count();
                if step.clip_factor < 1.0 {
                    stats.clipped += 1;
                }
            }
            Err(Error::InfeasibleTarget { frames, target_len }) => {
                log::warn!("skipping {}: {target_len} labels do not fit in {frames} frames", ex.id);
                stats.skipped += 1;
            }
            Err(Error::TooShort(frames)) => {
                log::warn!("skipping {}: {frames} frames is too short for the model", ex.id);
                stats.skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if stats.skipped == order.len() {
        return Err(Error::AllInfeasible);
    }
    Ok(stats)
}

/// Runs the two-phase schedule and returns the dev-best model.
pub fn train(model: Network, train_set: &Dataset, dev_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(model, train_set, dev_set, cfg, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with_callback(
    model: Network,
    train_set: &Dataset,
    dev_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::EmptyInput("training or dev set"));
    }
    train_set.check_model(&model)?;
    dev_set.check_model(&model)?;

    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let mut current = model;
    let mut best: Option<(f64, usize, Network)> = None;
    let mut epoch = 0usize;

    for phase in [1u8, 2] {
        let epochs = if phase == 1 { cfg.phase1_epochs } else { cfg.phase2_epochs };
        let mut phase_best: Option<(f64, Network)> = None;
        for e in 1..=epochs {
            epoch += 1;
            let lr = cfg.learning_rate(phase, e);
            order.shuffle(&mut shuffler);
            let stats = run_epoch(&mut current, train_set, &order, lr, cfg.clip_norm)?;
            let dev_metric = evaluate(&current, dev_set)?.error_rate;
            let record = EpochRecord {
                epoch,
                phase,
                lr,
                train_loss: stats.loss,
                train_perplexity: if stats.labels > 0 {
                    stats.loss / stats.labels as f64
                } else {
                    f64::NAN
                },
                dev_metric,
                skipped: stats.skipped,
                clipped: stats.clipped,
            };
            log::info!(
                "epoch {epoch} (phase {phase}) lr {lr:.6} loss {:.3} ppl {:.4} dev {dev_metric:.2}% skipped {}",
                record.train_loss,
                record.train_perplexity,
                record.skipped
            );
            on_epoch(&record);
            log.records.push(record);
            if phase == 1 && phase_best.as_ref().map_or(true, |(m, _)| dev_metric < *m) {
                phase_best = Some((dev_metric, current.clone()));
            }
            if best.as_ref().map_or(true, |(m, _, _)| dev_metric < *m) {
                best = Some((dev_metric, epoch, current.clone()));
            }
        }
        if let Some((_, m)) = phase_best {
            current = m;
        }
    }
    let (_, best_epoch, model) = best.expect("phase 1 runs at least one epoch");
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}
