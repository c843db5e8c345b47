//! Seeded synthetic corpus standing in for forced-aligned read speech.
//!
//! Every phoneme owns a fixed prototype vector drawn from `N(0, 1)`. A word
//! is realized by repeating each of its phonemes' prototypes for a sampled
//! number of frames; silence is the zero vector. Gaussian noise is added to
//! every frame. Durations come from a normal distribution truncated to at
//! least one frame (by resampling), with its location shifted so that the
//! truncated distribution keeps the configured mean.
//!
//! Randomness comes from a single ChaCha8 stream (`rand_chacha`) seeded with
//! `seed` through `SeedableRng::seed_from_u64`, consumed in this order:
//! phoneme prototypes, pronunciations, then train, dev and test utterances.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StatNormal};

use super::{Corpus, FeatureSequence, Lexicon, Utterance};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::network::SILENCE_SYMBOL;

/// Milliseconds per frame when converting duration statistics.
pub const FRAME_MS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub phonemes: usize,
    pub feature_dim: usize,
    /// frames
    pub phoneme_duration_mean: f64,
    /// frames
    pub phoneme_duration_std: f64,
    pub pron_len_min: usize,
    pub pron_len_max: usize,
    pub noise_scale: f64,
    pub words_min: usize,
    pub words_max: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub silence_prob: f64,
    /// word sampling weight ∝ rank^(-exponent); 0 gives uniform
    pub zipf_exponent: f64,
}

impl Default for SynthConfig {
    /// 50 words over 12 phonemes, roughly 30 minutes of frames at 10 ms.
    /// Phoneme durations average 81.6 ms (sd 46.7 ms).
    fn default() -> Self {
        Self {
            seed: 20_180_101,
            vocab_size: 50,
            phonemes: 12,
            feature_dim: 16,
            phoneme_duration_mean: 81.6 / FRAME_MS,
            phoneme_duration_std: 46.7 / FRAME_MS,
            pron_len_min: 3,
            pron_len_max: 5,
            noise_scale: 0.6,
            words_min: 3,
            words_max: 7,
            train_size: 950,
            dev_size: 100,
            test_size: 50,
            silence_prob: 0.2,
            zipf_exponent: 1.0,
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "vocab_size",
    "phonemes",
    "feature_dim",
    "phoneme_duration_mean",
    "phoneme_duration_std",
    "pron_len_min",
    "pron_len_max",
    "noise_scale",
    "words_min",
    "words_max",
    "train_size",
    "dev_size",
    "test_size",
    "silence_prob",
    "zipf_exponent",
];

impl SynthConfig {
    /// Defaults overridden by whatever keys `cfg` sets.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        cfg.reject_unknown(KEYS)?;
        let mut c = Self::default();
        cfg.apply("seed", &mut c.seed)?;
        cfg.apply("vocab_size", &mut c.vocab_size)?;
        cfg.apply("phonemes", &mut c.phonemes)?;
        cfg.apply("feature_dim", &mut c.feature_dim)?;
        cfg.apply("phoneme_duration_mean", &mut c.phoneme_duration_mean)?;
        cfg.apply("phoneme_duration_std", &mut c.phoneme_duration_std)?;
        cfg.apply("pron_len_min", &mut c.pron_len_min)?;
        cfg.apply("pron_len_max", &mut c.pron_len_max)?;
        cfg.apply("noise_scale", &mut c.noise_scale)?;
        cfg.apply("words_min", &mut c.words_min)?;
        cfg.apply("words_max", &mut c.words_max)?;
        cfg.apply("train_size", &mut c.train_size)?;
        cfg.apply("dev_size", &mut c.dev_size)?;
        cfg.apply("test_size", &mut c.test_size)?;
        cfg.apply("silence_prob", &mut c.silence_prob)?;
        cfg.apply("zipf_exponent", &mut c.zipf_exponent)?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("seed", self.seed);
        kv.set("vocab_size", self.vocab_size);
        kv.set("phonemes", self.phonemes);
        kv.set("feature_dim", self.feature_dim);
        kv.set("phoneme_duration_mean", self.phoneme_duration_mean);
        kv.set("phoneme_duration_std", self.phoneme_duration_std);
        kv.set("pron_len_min", self.pron_len_min);
        kv.set("pron_len_max", self.pron_len_max);
        kv.set("noise_scale", self.noise_scale);
        kv.set("words_min", self.words_min);
        kv.set("words_max", self.words_max);
        kv.set("train_size", self.train_size);
        kv.set("dev_size", self.dev_size);
        kv.set("test_size", self.test_size);
        kv.set("silence_prob", self.silence_prob);
        kv.set("zipf_exponent", self.zipf_exponent);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 || self.phonemes == 0 || self.feature_dim == 0 {
            return fail("vocabulary, phoneme inventory and feature dimension must be at least 1");
        }
        if self.pron_len_min == 0 {
            return fail("pronunciations must be at least one phoneme long");
        }
        if self.pron_len_min > self.pron_len_max || self.words_min == 0 || self.words_min > self.words_max {
            return fail("length ranges must be nonempty and start at 1 or more");
        }
        if self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return fail("train, dev and test sizes must be at least 1");
        }
        if !(self.phoneme_duration_mean >= 1.0) || !(self.phoneme_duration_std >= 0.0) {
            return fail("phoneme durations need mean >= 1 frame and std >= 0");
        }
        if !(self.noise_scale >= 0.0) || !(0.0..1.0).contains(&self.silence_prob) || !(self.zipf_exponent >= 0.0) {
            return fail("noise must be >= 0, silence probability in [0, 1), zipf exponent >= 0");
        }
        let available: f64 = (self.pron_len_min..=self.pron_len_max)
            .map(|l| (self.phonemes as f64).powi(l as i32))
            .sum();
        if available < self.vocab_size as f64 {
            return fail("not enough distinct pronunciations for the vocabulary");
        }
        Ok(())
    }
}

/// Truncated-normal duration sampler over whole frames.
#[derive(Debug, Clone)]
pub(crate) struct DurationSampler {
    normal: Option<Normal<f64>>,
    fixed: usize,
}

/// Draws below this are rejected; rounding then yields at least one frame.
const TRUNCATION: f64 = 0.5;

impl DurationSampler {
    pub(crate) fn new(mean: f64, std: f64) -> Result<Self> {
        if std == 0.0 {
            return Ok(Self {
                normal: None,
                fixed: mean.round().max(1.0) as usize,
            });
        }
        // Solve loc + std·λ((0.5 − loc)/std) = mean, λ the inverse Mills ratio.
        let unit = StatNormal::standard();
        let mut loc = mean;
        for _ in 0..500 {
            let a = (TRUNCATION - loc) / std;
            let tail = 1.0 - unit.cdf(a);
            if tail < 1e-3 {
                return Err(Error::Config(format!(
                    "duration mean {mean} is too small for std {std}"
                )));
            }
            let next = mean - std * unit.pdf(a) / tail;
            if (next - loc).abs() < 1e-12 {
                loc = next;
                break;
            }
            loc = next;
        }
        Ok(Self {
            normal: Some(Normal::new(loc, std).map_err(|e| Error::Config(e.to_string()))?),
            fixed: 0,
        })
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match &self.normal {
            None => self.fixed,
            Some(n) => loop {
                let x = n.sample(rng);
                if x >= TRUNCATION {
                    return x.round() as usize;
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub lexicon: Lexicon,
    /// per-phoneme prototype vectors, `phonemes × feature_dim`
    pub prototypes: Vec<Vec<f64>>,
}

impl SynthCorpus {
    pub fn words(&self) -> &[String] {
        self.lexicon.words()
    }
}

pub fn word_name(i: usize) -> String {
    format!("w{i:03}")
}

pub fn phoneme_name(i: usize) -> String {
    format!("p{i:02}")
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let prototypes: Vec<Vec<f64>> = (0..cfg.phonemes)
        .map(|_| (0..cfg.feature_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();

    let mut lexicon = Lexicon::with_inventory((0..cfg.phonemes).map(phoneme_name));
    let mut prons: Vec<Vec<usize>> = Vec::with_capacity(cfg.vocab_size);
    let mut attempts = 0usize;
    while prons.len() < cfg.vocab_size {
        attempts += 1;
        if attempts > 1000 * cfg.vocab_size + 10_000 {
            return Err(Error::Config("could not draw distinct pronunciations".into()));
        }
        let len = rng.random_range(cfg.pron_len_min..=cfg.pron_len_max);
        let pron: Vec<usize> = (0..len).map(|_| rng.random_range(0..cfg.phonemes)).collect();
        if !prons.contains(&pron) {
            prons.push(pron);
        }
    }
    for (i, pron) in prons.iter().enumerate() {
        let names: Vec<String> = pron.iter().map(|&p| phoneme_name(p)).collect();
        lexicon.insert(&word_name(i), &names)?;
    }

    let weights: Vec<f64> = (1..=cfg.vocab_size)
        .map(|rank| (rank as f64).powf(-cfg.zipf_exponent))
        .collect();
    let word_dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let durations = DurationSampler::new(cfg.phoneme_duration_mean, cfg.phoneme_duration_std)?;
    let noise = if cfg.noise_scale > 0.0 {
        Some(Normal::new(0.0, cfg.noise_scale).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    let make_split = |name: &str, size: usize, rng: &mut ChaCha8Rng| -> Result<Corpus> {
        let mut utterances = Vec::with_capacity(size);
        for n in 0..size {
            let n_words = rng.random_range(cfg.words_min..=cfg.words_max);
            let mut words: Vec<usize> = Vec::with_capacity(n_words);
            let mut frames: Vec<f32> = Vec::new();
            let mut align: Vec<String> = Vec::new();
            let mut emit = |proto: Option<&[f64]>, label: &str, count: usize, rng: &mut ChaCha8Rng| {
                for _ in 0..count {
                    for d in 0..cfg.feature_dim {
                        let base = proto.map_or(0.0, |p| p[d]);
                        let eps = noise.as_ref().map_or(0.0, |n| n.sample(rng));
                        frames.push((base + eps) as f32);
                    }
                    align.push(label.to_string());
                }
            };
            for k in 0..n_words {
                let w = word_dist.sample(rng);
                if k > 0 {
                    // adjacent repeats need silence so the alignment still collapses to the transcript
                    let forced = words.last() == Some(&w);
                    if forced || rng.random_bool(cfg.silence_prob) {
                        let d = durations.sample(rng);
                        emit(None, SILENCE_SYMBOL, d, rng);
                    }
                }
                let label = word_name(w);
                for &p in &prons[w] {
                    let d = durations.sample(rng);
                    emit(Some(&prototypes[p]), &label, d, rng);
                }
                words.push(w);
            }
            let t = align.len();
            let u = Utterance {
                id: format!("{name}-{n:05}"),
                features: FeatureSequence::new(t, cfg.feature_dim, frames)?,
                words: words.iter().map(|&w| word_name(w)).collect(),
                alignment: Some(align),
            };
            utterances.push(u);
        }
        Ok(Corpus::new(utterances))
    };

    let train = make_split("train", cfg.train_size, &mut rng)?;
    let dev = make_split("dev", cfg.dev_size, &mut rng)?;
    let test = make_split("test", cfg.test_size, &mut rng)?;
    Ok(SynthCorpus {
        train,
        dev,
        test,
        lexicon,
        prototypes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            vocab_size: 8,
            phonemes: 5,
            feature_dim: 3,
            train_size: 5,
            dev_size: 2,
            test_size: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_single_phoneme_repeats_prototype() {
        let cfg = SynthConfig {
            vocab_size: 1,
            phonemes: 1,
            pron_len_min: 1,
            pron_len_max: 1,
            words_min: 1,
            words_max: 1,
            phoneme_duration_mean: 6.0,
            phoneme_duration_std: 0.0,
            noise_scale: 0.0,
            train_size: 1,
            dev_size: 1,
            test_size: 1,
            ..SynthConfig::default()
        };
        let c = generate_synthetic(&cfg).unwrap();
        let u = &c.train.utterances[0];
        assert_eq!(u.features.frames(), 6);
        for t in 0..6 {
            let expected: Vec<f32> = c.prototypes[0].iter().map(|&v| v as f32).collect();
            assert_eq!(u.features.frame(t), expected.as_slice());
        }
        assert_eq!(u.words, vec!["w000"]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 99, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn alignments_collapse_to_transcripts() {
        let c = generate_synthetic(&SynthConfig {
            vocab_size: 3,
            train_size: 200,
            zipf_exponent: 3.0,
            ..small()
        })
        .unwrap();
        for u in c.train.iter().chain(c.dev.iter()).chain(c.test.iter()) {
            u.check_alignment().unwrap();
        }
    }

    #[test]
    fn duration_mean_matches_configuration() {
        let cfg = SynthConfig::default();
        assert!((cfg.phoneme_duration_mean - 8.16).abs() < 1e-12);
        let sampler = DurationSampler::new(cfg.phoneme_duration_mean, cfg.phoneme_duration_std).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let draws: Vec<usize> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        assert!(draws.iter().all(|&d| d >= 1));
        let mean = draws.iter().sum::<usize>() as f64 / n as f64;
        assert!((mean / cfg.phoneme_duration_mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn rejects_impossible_configs() {
        for bad in [
            SynthConfig { pron_len_min: 0, ..small() },
            SynthConfig { vocab_size: 0, ..small() },
            SynthConfig { words_min: 4, words_max: 2, ..small() },
            SynthConfig { phonemes: 2, pron_len_min: 1, pron_len_max: 1, vocab_size: 3, ..small() },
            SynthConfig { phoneme_duration_mean: 0.0, ..small() },
            SynthConfig { silence_prob: 1.0, ..small() },
        ] {
            assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn kv_round_trip() {
        let cfg = SynthConfig {
            seed: 3,
            noise_scale: 0.125,
            ..SynthConfig::default()
        };
        assert_eq!(SynthConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let partial = KvConfig::parse("vocab_size = 10").unwrap();
        assert_eq!(SynthConfig::from_kv(&partial).unwrap().vocab_size, 10);
        assert!(SynthConfig::from_kv(&KvConfig::parse("bogus = 1").unwrap()).is_err());
    }
}
