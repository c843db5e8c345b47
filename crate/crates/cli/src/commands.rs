use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use a2w::analysis::{
    blank_distance_report, frequency_margin_table, overlap_histograms, permutation_test, EmbeddingMatrix,
    OverlapConfig,
};
use a2w::config::KvConfig;
use a2w::data::{
    generate_synthetic, load_corpus, load_lexicon, read_token_table, save_corpus, save_lexicon, subset,
    write_token_table, Corpus, Lexicon, SynthConfig,
};
use a2w::metrics::{edit_distance, frame_errors, write_score_report, EditStats};
use a2w::network::SILENCE_SYMBOL;
use a2w::training::{classify_frames, decode, train_with_callback, Dataset, TrainConfig};
use a2w::{Error, ModelKind, Network, NetworkSpec, Result, Vocabulary};

use crate::outputs::{io_error, Outputs};

pub const MODEL_FILE: &str = "model.a2w";
pub const TRAIN_LOG_FILE: &str = "train_log.ndjson";

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_LAYERS: usize = 4;
pub const DEFAULT_DOWNSAMPLE: usize = 4;
pub const DEFAULT_INIT_LAYERS: usize = 3;

#[derive(Debug, Parser)]
#[command(name = "a2w", version, about = "Acoustics-to-word CTC toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with lexicon and alignments
    Synth(SynthArgs),
    /// Train a word-CTC, phoneme-CTC or frame-classifier model
    Train(TrainArgs),
    /// Greedy-decode a corpus with a trained model
    Decode(DecodeArgs),
    /// Error-rate report from reference and hypothesis tables
    Score(ScoreArgs),
    /// Nearest-neighbour analysis of a model's softmax weights
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// key=value generator settings
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// directory holding train/, dev/ and optionally lexicon.tsv
    #[arg(long)]
    data_dir: PathBuf,
    /// word-ctc, phoneme-ctc or frame-classifier [default: word-ctc]
    #[arg(long)]
    mode: Option<String>,
    /// total frame-rate reduction, a power of two [default: 4]
    #[arg(long)]
    downsample: Option<usize>,
    /// LSTM layers [default: 4]
    #[arg(long)]
    layers: Option<usize>,
    /// units per LSTM layer [default: 32]
    #[arg(long)]
    hidden: Option<usize>,
    /// model whose bottom layers initialize the new one
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// layers copied from --init-from [default: 3]
    #[arg(long)]
    init_layers: Option<usize>,
    /// fraction of the training set to use [default: 1.0]
    #[arg(long)]
    data_fraction: Option<f64>,
    /// epochs at the constant step size [default: 20]
    #[arg(long)]
    phase1_epochs: Option<usize>,
    /// epochs with a decaying step size [default: 20]
    #[arg(long)]
    phase2_epochs: Option<usize>,
    /// key=value settings; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// seeds initialization, shuffling and subsetting [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// corpus directory (with corpus.tsv)
    #[arg(long)]
    data: PathBuf,
    /// lexicon for phoneme references
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    /// per-frame error rate instead of edit distance
    #[arg(long)]
    frames: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    /// lexicon for pronunciation overlap
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// training corpus directory for word counts
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// pronunciation overlap of close vs far neighbours
    #[arg(long)]
    overlap: bool,
    /// blank distance against word-word distances
    #[arg(long)]
    blank: bool,
    /// word frequency against margin
    #[arg(long)]
    margin: bool,
    /// far neighbour ranks as LO-HI [default: 48-50, or the last three]
    #[arg(long)]
    far_band: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    permutations: usize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Score(a) => score(a),
        Command::Analyze(a) => analyze(a),
    }
}

fn load_kv(path: Option<&Path>) -> Result<KvConfig> {
    path.map_or_else(|| Ok(KvConfig::default()), KvConfig::load)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut kv = load_kv(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        kv.set("seed", seed);
    }
    let cfg = SynthConfig::from_kv(&kv)?;
    let corpus = generate_synthetic(&cfg)?;
    let mut out = Outputs::new(&a.out_dir)?;
    for (name, part) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let dir = out.path(name);
        save_corpus(&dir, part)?;
    }
    save_lexicon(out.path("lexicon.tsv"), &corpus.lexicon)?;
    out.write("synth.cfg", cfg.to_kv().to_string())?;
    info!(
        "wrote {} / {} / {} utterances ({} training frames) to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.train.total_frames(),
        a.out_dir.display()
    );
    out.commit();
    Ok(())
}

const MODEL_KEYS: &[&str] = &["mode", "hidden", "layers", "downsample", "data_fraction", "init_layers"];

struct TrainSettings {
    mode: ModelKind,
    hidden: usize,
    layers: usize,
    downsample: usize,
    data_fraction: f64,
    init_layers: usize,
    schedule: TrainConfig,
}

impl TrainSettings {
    fn resolve(a: &TrainArgs) -> Result<(Self, KvConfig)> {
        let mut kv = load_kv(a.config.as_deref())?;
        let known: Vec<&str> = MODEL_KEYS.iter().chain(TrainConfig::keys()).copied().collect();
        kv.reject_unknown(&known)?;
        if let Some(v) = &a.mode {
            kv.set("mode", v);
        }
        let flags: [(&str, Option<String>); 8] = [
            ("hidden", a.hidden.map(|v| v.to_string())),
            ("layers", a.layers.map(|v| v.to_string())),
            ("downsample", a.downsample.map(|v| v.to_string())),
            ("data_fraction", a.data_fraction.map(|v| v.to_string())),
            ("init_layers", a.init_layers.map(|v| v.to_string())),
            ("phase1_epochs", a.phase1_epochs.map(|v| v.to_string())),
            ("phase2_epochs", a.phase2_epochs.map(|v| v.to_string())),
            ("seed", a.seed.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                kv.set(k, v);
            }
        }
        let mode = match kv.raw("mode") {
            Some(m) => m.parse::<ModelKind>().map_err(|e| Error::Config(e.to_string()))?,
            None => ModelKind::WordCtc,
        };
        let s = Self {
            mode,
            hidden: kv.get("hidden")?.unwrap_or(DEFAULT_HIDDEN),
            layers: kv.get("layers")?.unwrap_or(DEFAULT_LAYERS),
            downsample: kv.get("downsample")?.unwrap_or(if mode.is_ctc() { DEFAULT_DOWNSAMPLE } else { 1 }),
            data_fraction: kv.get("data_fraction")?.unwrap_or(1.0),
            init_layers: kv.get("init_layers")?.unwrap_or(DEFAULT_INIT_LAYERS),
            schedule: TrainConfig::from_kv(&kv)?,
        };
        s.schedule.validate()?;
        Ok((s, kv))
    }

    fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("mode", self.mode);
        kv.set("hidden", self.hidden);
        kv.set("layers", self.layers);
        kv.set("downsample", self.downsample);
        kv.set("data_fraction", self.data_fraction);
        kv.set("init_layers", self.init_layers);
        let t = &self.schedule;
        kv.set("phase1_epochs", t.phase1_epochs);
        kv.set("phase1_lr", t.phase1_lr);
        kv.set("phase2_epochs", t.phase2_epochs);
        kv.set("phase2_lr", t.phase2_lr);
        kv.set("decay", t.decay);
        kv.set("clip_norm", t.clip_norm);
        kv.set("seed", t.seed);
        kv
    }
}

/// Words from `lexicon.tsv` when present, else the sorted training words.
fn word_vocabulary(data_dir: &Path, lexicon: Option<&Lexicon>) -> Result<Vocabulary> {
    match lexicon {
        Some(l) => Vocabulary::new(l.words().iter().cloned()),
        None => {
            let train = load_corpus(data_dir.join("train"), None)?;
            let words: BTreeSet<String> = train.iter().flat_map(|u| u.words.iter().cloned()).collect();
            Vocabulary::new(words)
        }
    }
}

fn optional_lexicon(path: &Path) -> Result<Option<Lexicon>> {
    if path.exists() {
        load_lexicon(path).map(Some)
    } else {
        Ok(None)
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let (settings, _) = TrainSettings::resolve(&a)?;
    let lexicon = optional_lexicon(&a.data_dir.join("lexicon.tsv"))?;
    let words = word_vocabulary(&a.data_dir, lexicon.as_ref())?;
    let mut train_corpus = load_corpus(a.data_dir.join("train"), Some(&words))?;
    let dev_corpus = load_corpus(a.data_dir.join("dev"), Some(&words))?;
    if settings.data_fraction < 1.0 {
        train_corpus = subset(&train_corpus, settings.data_fraction, settings.schedule.seed)?;
    }
    let train_set = Dataset::for_kind(settings.mode, &train_corpus, &words, lexicon.as_ref())?;
    let dev_set = Dataset::for_kind(settings.mode, &dev_corpus, &words, lexicon.as_ref())?;
    let input_dim = train_set
        .feature_dim()
        .ok_or(Error::EmptyInput("training corpus"))?;
    let spec = NetworkSpec::new(
        settings.mode,
        input_dim,
        settings.hidden,
        settings.layers,
        settings.downsample,
        train_set.labels.clone(),
    )?;
    let mut model = Network::new(&spec, settings.schedule.seed)?;
    if let Some(src) = &a.init_from {
        let src = Network::load(src)?;
        model.transfer_bottom_layers(&src, settings.init_layers)?;
        info!("initialized bottom {} layers from {}", settings.init_layers, a.init_from.as_ref().unwrap().display());
    }
    info!(
        "training {} on {} utterances ({} parameters)",
        settings.mode,
        train_set.len(),
        model.parameter_count()
    );

    let mut out = Outputs::new(&a.out_dir)?;
    let outcome = train_with_callback(model, &train_set, &dev_set, &settings.schedule, |_| {})?;
    outcome.model.save(out.path(MODEL_FILE))?;
    outcome.log.save(out.path(TRAIN_LOG_FILE))?;
    out.write("train.cfg", settings.to_kv().to_string())?;
    info!(
        "best dev error {:.2}% at epoch {}",
        outcome.log.records[outcome.best_epoch - 1].dev_metric,
        outcome.best_epoch
    );
    out.commit();
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> Result<()> {
    let model = Network::load(&a.model)?;
    let corpus = load_corpus(&a.data, None)?;
    let lexicon = a.lexicon.as_deref().map(load_lexicon).transpose()?;
    let labels = model.labels();
    let mut hyps = Vec::with_capacity(corpus.len());
    let mut refs = Vec::with_capacity(corpus.len());
    for u in corpus.iter() {
        let feats = u.features.to_mat();
        let (hyp, reference) = match model.kind() {
            ModelKind::FrameClassifier => {
                let ids = classify_frames(&model, &feats)?;
                let hyp = ids
                    .iter()
                    .map(|&i| labels.get(i).map_or(SILENCE_SYMBOL.to_string(), Clone::clone))
                    .collect();
                let reference = u.alignment.clone().ok_or_else(|| {
                    Error::InvalidArgument(format!("utterance {} has no frame alignment to score against", u.id))
                })?;
                (hyp, reference)
            }
            ModelKind::WordCtc => (model.vocabulary().decode(&decode(&model, &feats)?), u.words.clone()),
            ModelKind::PhonemeCtc => {
                let lex = lexicon
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("phoneme references need --lexicon".into()))?;
                (model.vocabulary().decode(&decode(&model, &feats)?), lex.to_phonemes(&u.words)?)
            }
        };
        hyps.push((u.id.clone(), hyp));
        refs.push((u.id.clone(), reference));
    }
    let mut out = Outputs::new(&a.out_dir)?;
    write_token_table(out.path("hyp.tsv"), &hyps)?;
    write_token_table(out.path("ref.tsv"), &refs)?;
    info!("decoded {} utterances", hyps.len());
    out.commit();
    Ok(())
}

/// Pairs every reference row with the hypothesis of the same id.
fn pair_tables(
    reference: &Path,
    hypothesis: &Path,
) -> Result<Vec<(String, Vec<String>, Vec<String>)>> {
    let refs = read_token_table(reference)?;
    let hyps = read_token_table(hypothesis)?;
    let mut by_id: std::collections::HashMap<String, Vec<String>> = hyps.into_iter().collect();
    let mut rows = Vec::with_capacity(refs.len());
    for (id, r) in refs {
        let h = by_id.remove(&id).ok_or_else(|| {
            Error::InvalidArgument(format!("no hypothesis for utterance {id} in {}", hypothesis.display()))
        })?;
        rows.push((id, r, h));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(Error::InvalidArgument(format!(
            "hypothesis {extra} has no reference in {}",
            reference.display()
        )));
    }
    Ok(rows)
}

fn score(a: ScoreArgs) -> Result<()> {
    let rows = pair_tables(&a.reference, &a.hyp)?;
    let mut out = Outputs::new(&a.out_dir)?;
    let path = out.path("score.tsv");
    let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    if a.frames {
        use std::io::Write;
        let (mut wrong, mut total) = (0usize, 0usize);
        writeln!(w, "id\tframes\terrors\trate").map_err(|e| io_error(&path, e))?;
        for (id, r, h) in &rows {
            let (e, n) = frame_errors(r, h)?;
            wrong += e;
            total += n;
            writeln!(w, "{id}\t{n}\t{e}\t{:.2}", 100.0 * e as f64 / n.max(1) as f64).map_err(|e| io_error(&path, e))?;
        }
        if total == 0 {
            return Err(Error::EmptyInput("frame error rate"));
        }
        let rate = 100.0 * wrong as f64 / total as f64;
        writeln!(w, "TOTAL\t{total}\t{wrong}\t{rate:.2}").map_err(|e| io_error(&path, e))?;
        w.flush().map_err(|e| io_error(&path, e))?;
        info!("FER {rate:.2}% over {total} frames");
    } else {
        let stats: Vec<(String, EditStats)> = rows
            .iter()
            .map(|(id, r, h)| (id.clone(), edit_distance(r, h)))
            .collect();
        let total = write_score_report(&mut w, &stats).map_err(|e| io_error(&path, e))?;
        std::io::Write::flush(&mut w).map_err(|e| io_error(&path, e))?;
        info!(
            "error rate {:.2}% ({} sub, {} del, {} ins over {} reference tokens)",
            total.error_rate()?,
            total.substitutions,
            total.deletions,
            total.insertions,
            total.reference_len
        );
    }
    out.commit();
    Ok(())
}

fn parse_band(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("neighbour band {s:?} is not LO-HI"));
    let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let model = Network::load(&a.model)?;
    let emb = EmbeddingMatrix::from_network(&model)?;
    let all = !(a.overlap || a.blank || a.margin);
    let mut out = Outputs::new(&a.out_dir)?;

    if all || a.overlap {
        let lexicon = a
            .lexicon
            .as_deref()
            .map(load_lexicon)
            .transpose()?
            .ok_or_else(|| Error::InvalidArgument("overlap analysis needs --lexicon".into()))?;
        let mut cfg = OverlapConfig::for_vocab(emb.word_count());
        cfg.bins = a.bins;
        if let Some(b) = &a.far_band {
            cfg.far = parse_band(b)?;
        }
        let report = overlap_histograms(&emb, &lexicon, &cfg)?;
        let (diff, p) = permutation_test(&report.close_values, &report.far_values, a.permutations, a.seed)?;
        let mut hist = Vec::new();
        report.write_tsv(&mut hist).expect("write to memory");
        out.write("overlap.tsv", hist)?;
        out.write(
            "overlap_summary.tsv",
            format!(
                "close_band\tfar_band\tclose_mean\tfar_mean\tdifference\tp_value\n{}-{}\t{}-{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                cfg.close.0,
                cfg.close.1,
                cfg.far.0,
                cfg.far.1,
                report.close_mean(),
                report.far_mean(),
                diff,
                p
            ),
        )?;
        info!(
            "overlap close {:.3} vs far {:.3}, permutation p = {p:.4}",
            report.close_mean(),
            report.far_mean()
        );
    }
    if all || a.blank {
        let report = blank_distance_report(&emb, a.bins)?;
        let mut buf = Vec::new();
        report.write_tsv(&mut buf).expect("write to memory");
        out.write("blank.tsv", buf)?;
        info!(
            "blank mean distance {:.4}, word-word median {:.4}",
            report.blank_mean, report.median
        );
    }
    if all || a.margin {
        let dir = a
            .transcripts
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("margin analysis needs --transcripts".into()))?;
        let corpus: Corpus = load_corpus(dir, None)?;
        let table = frequency_margin_table(&emb, &corpus)?;
        let mut buf = Vec::new();
        table.write_tsv(&mut buf).expect("write to memory");
        out.write("margin.tsv", buf)?;
        match table.rank_correlation {
            Some(r) => info!("frequency-margin rank correlation {r:.4}"),
            None => info!("frequency-margin rank correlation undefined (constant column)"),
        }
    }
    out.commit();
    Ok(())
}
