use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Corpus;
use crate::error::{Error, Result};

fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// `ceil(fraction · n)` with a small tolerance so that e.g. 0.9 · 10 is 9.
fn kept_count(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Seeded partition into `(train, dev)`. The training side gets
/// `ceil(fraction · n)` utterances (so fractional remainders are floored on
/// the dev side); both sides keep the corpus order.
pub fn train_dev_split(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = corpus.len();
    let n_train = kept_count(n, fraction);
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "splitting {n} utterances at {fraction} leaves one side empty"
        )));
    }
    let perm = seeded_permutation(n, seed);
    let mut in_train = vec![false; n];
    for &i in &perm[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut dev) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (u, keep) in corpus.utterances.iter().zip(in_train) {
        if keep {
            train.push(u.clone());
        } else {
            dev.push(u.clone());
        }
    }
    Ok((Corpus::new(train), Corpus::new(dev)))
}

/// Seeded random subset holding `ceil(fraction · n)` utterances, in corpus
/// order. `fraction = 1` returns the whole corpus.
pub fn subset(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "data fraction {fraction} must lie in (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(corpus.clone());
    }
    let keep = kept_count(corpus.len(), fraction);
    if keep == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {} utterances is empty",
            corpus.len()
        )));
    }
    let mut chosen = seeded_permutation(corpus.len(), seed)[..keep].to_vec();
    chosen.sort_unstable();
    Ok(Corpus::new(chosen.into_iter().map(|i| corpus.utterances[i].clone()).collect()))
}
