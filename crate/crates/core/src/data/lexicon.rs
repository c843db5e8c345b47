use std::collections::HashMap;

use crate::error::{Error, Result};

/// Word → pronunciations. The first pronunciation listed for a word is its
/// canonical one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
    prons: Vec<Vec<Vec<String>>>,
    index: HashMap<String, usize>,
    phonemes: Vec<String>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a pronunciation; a repeated word gains an alternative.
    pub fn insert<S: AsRef<str>>(&mut self, word: &str, pronunciation: &[S]) -> Result<()> {
        if pronunciation.is_empty() {
            return Err(Error::InvalidArgument(format!("empty pronunciation for {word:?}")));
        }
        let pron: Vec<String> = pronunciation.iter().map(|p| p.as_ref().to_string()).collect();
        for p in &pron {
            if !self.phonemes.contains(p) {
                self.phonemes.push(p.clone());
            }
        }
        match self.index.get(word) {
            Some(&i) => self.prons[i].push(pron),
            None => {
                self.index.insert(word.to_string(), self.words.len());
                self.words.push(word.to_string());
                self.prons.push(vec![pron]);
            }
        }
        Ok(())
    }

    /// Declares the phoneme inventory order up front.
    pub fn with_inventory<S: Into<String>>(phonemes: impl IntoIterator<Item = S>) -> Self {
        Self {
            phonemes: phonemes.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words in insertion order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn phonemes(&self) -> &[String] {
        &self.phonemes
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn pronunciation(&self, word: &str) -> Option<&[String]> {
        self.index.get(word).map(|&i| self.prons[i][0].as_slice())
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<String>]> {
        self.index.get(word).map(|&i| self.prons[i].as_slice())
    }

    /// Concatenated canonical pronunciations of `words`.
    pub fn to_phonemes<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for w in words {
            let pron = self
                .pronunciation(w.as_ref())
                .ok_or_else(|| Error::OutOfLexicon(w.as_ref().to_string()))?;
            out.extend_from_slice(pron);
        }
        Ok(out)
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (&str, &Vec<String>)> {
        self.words
            .iter()
            .zip(&self.prons)
            .flat_map(|(w, ps)| ps.iter().map(move |p| (w.as_str(), p)))
    }
}
