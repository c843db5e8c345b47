//! Corpora, lexicons, on-disk formats and the synthetic corpus generator.

mod io;
mod lexicon;
mod split;
mod synth;

use std::collections::BTreeMap;

pub use io::{
    load_corpus, load_lexicon, read_features, read_token_table, save_corpus, save_lexicon, write_features,
    write_token_table, FEATURE_FORMAT_VERSION, FEATURE_MAGIC,
};
pub use lexicon::Lexicon;
pub use split::{subset, train_dev_split};
pub use synth::{generate_synthetic, SynthConfig, SynthCorpus, FRAME_MS};

use crate::error::{Error, Result};
use crate::network::SILENCE_SYMBOL;
use crate::numerics::Mat;

/// `T × d` acoustic frames, stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::DimensionMismatch {
                what: "feature payload",
                expected: frames * dim,
                actual: data.len(),
            });
        }
        Ok(Self { frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(self.frames, self.dim, self.data.iter().map(|&v| f64::from(v)).collect())
            .expect("shape checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureSequence,
    pub words: Vec<String>,
    /// one word label (or silence) per frame
    pub alignment: Option<Vec<String>>,
}

impl Utterance {
    /// Checks that the alignment covers every frame and that merging runs
    /// and dropping silence reproduces the transcript.
    pub fn check_alignment(&self) -> Result<()> {
        let Some(align) = &self.alignment else {
            return Ok(());
        };
        if align.len() != self.features.frames() {
            return Err(Error::DimensionMismatch {
                what: "alignment length",
                expected: self.features.frames(),
                actual: align.len(),
            });
        }
        let collapsed = collapse_alignment(align);
        if collapsed != self.words {
            return Err(Error::InvalidArgument(format!(
                "alignment of {} collapses to {:?}, transcript is {:?}",
                self.id, collapsed, self.words
            )));
        }
        Ok(())
    }
}

/// Merges runs of identical frame labels, then drops silence.
pub fn collapse_alignment(align: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut prev: Option<&str> = None;
    for label in align {
        if prev != Some(label.as_str()) && label != SILENCE_SYMBOL {
            out.push(label.clone());
        }
        prev = Some(label.as_str());
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Self {
        Self { utterances }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Utterance> {
        self.utterances.iter()
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.features.frames()).sum()
    }

    /// Occurrences of every word across the transcripts.
    pub fn word_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for w in self.utterances.iter().flat_map(|u| &u.words) {
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
        counts
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Utterance;
    type IntoIter = std::slice::Iter<'a, Utterance>;

    fn into_iter(self) -> Self::IntoIter {
        self.utterances.iter()
    }
}
