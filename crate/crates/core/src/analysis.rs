//! Embedding-space analysis over the rows of the softmax weight matrix.
//!
//! Each output class owns one weight row; words and the blank are compared by
//! Euclidean distance between rows. The output bias is not part of the
//! embedding. Neighbour searches only consider word rows.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker, Statistics};

use crate::ctc::Vocabulary;
use crate::data::{Corpus, Lexicon};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::Mat;

/// Word rows followed by one extra row (blank or silence).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    weights: Mat,
    vocab: Vocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

/// Neighbours of one query row, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query: usize,
    pub neighbors: Vec<Neighbor>,
}

impl NeighborList {
    pub fn ids(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.id).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.neighbors.iter().map(|n| n.distance).collect()
    }
}

impl EmbeddingMatrix {
    /// `weights` has one row per vocabulary word plus the extra row last.
    pub fn new(weights: Mat, vocab: Vocabulary) -> Result<Self> {
        if weights.rows() != vocab.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "embedding rows",
                expected: vocab.output_dim(),
                actual: weights.rows(),
            });
        }
        if weights.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "embedding",
                index: weights.as_slice().iter().position(|v| !v.is_finite()).unwrap_or(0),
            });
        }
        Ok(Self { weights, vocab })
    }

    pub fn from_network(net: &Network) -> Result<Self> {
        Self::new(net.output_weight().clone(), net.vocabulary())
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn word_count(&self) -> usize {
        self.vocab.len()
    }

    pub fn blank_id(&self) -> usize {
        self.vocab.blank_id()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.weights.row(id)
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.row(a)
            .iter()
            .zip(self.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    fn lookup(&self, word: &str) -> Result<usize> {
        self.vocab.id(word).ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    /// All other word rows sorted by distance; ties go to the lower id.
    pub fn ranked_by_id(&self, query: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = (0..self.word_count())
            .filter(|&j| j != query)
            .map(|j| Neighbor {
                id: j,
                distance: self.distance(query, j),
            })
            .collect();
        all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        all
    }

    /// The `k` nearest word rows to row `query` (which may be the blank).
    pub fn neighbors_of(&self, query: usize, k: usize) -> Result<NeighborList> {
        if query > self.blank_id() {
            return Err(Error::LabelOutOfRange {
                id: query,
                dim: self.vocab.output_dim(),
            });
        }
        let available = if query == self.blank_id() {
            self.word_count()
        } else {
            self.word_count() - 1
        };
        if k > available {
            return Err(Error::InvalidArgument(format!(
                "asked for {k} neighbours but only {available} other words exist"
            )));
        }
        let mut neighbors = self.ranked_by_id(query);
        neighbors.truncate(k);
        Ok(NeighborList { query, neighbors })
    }

    pub fn neighbors(&self, word: &str, k: usize) -> Result<NeighborList> {
        self.neighbors_of(self.lookup(word)?, k)
    }

    /// Distance to the nearest other word.
    pub fn margin(&self, word: &str) -> Result<f64> {
        self.margin_of(self.lookup(word)?)
    }

    pub fn margin_of(&self, id: usize) -> Result<f64> {
        if self.word_count() < 2 {
            return Err(Error::InvalidArgument("margin needs at least two words".into()));
        }
        Ok(self.neighbors_of(id, 1)?.neighbors[0].distance)
    }
}

/// Shared phoneme tokens (multiset intersection) over the shorter length,
/// using each word's first pronunciation.
pub fn pronunciation_overlap(w1: &str, w2: &str, lexicon: &Lexicon) -> Result<f64> {
    let p1 = canonical(w1, lexicon)?;
    let p2 = canonical(w2, lexicon)?;
    Ok(token_overlap(p1, p2))
}

fn canonical<'a>(word: &str, lexicon: &'a Lexicon) -> Result<&'a [String]> {
    match lexicon.pronunciation(word) {
        Some(p) if !p.is_empty() => Ok(p),
        _ => Err(Error::OutOfLexicon(word.to_string())),
    }
}

pub(crate) fn token_overlap(a: &[String], b: &[String]) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in a {
        *counts.entry(p).or_default() += 1;
    }
    let mut shared = 0usize;
    for p in b {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    shared as f64 / a.len().min(b.len()) as f64
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "histogram needs lo < hi and at least one bin, got [{lo}, {hi}] with {bins}"
            )));
        }
        let edges = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        Ok(Self {
            edges,
            counts: vec![0; bins],
        })
    }

    /// Histogram of `values` with bins spanning their range (or `[v, v+1]`
    /// when all values coincide).
    pub fn spanning(values: &[f64], bins: usize) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return Err(Error::EmptyInput("histogram values"));
        }
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let mut h = Self::uniform(lo, hi, bins)?;
        h.extend(values);
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Values outside the range are clamped into the end bins.
    pub fn add(&mut self, v: f64) {
        let lo = self.edges[0];
        let hi = self.edges[self.bins()];
        let pos = ((v - lo) / (hi - lo) * self.bins() as f64).floor();
        let idx = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(self.bins() - 1)
        };
        self.counts[idx] += 1;
    }

    pub fn extend(&mut self, values: &[f64]) {
        for &v in values {
            self.add(v);
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lo\thi\tcount")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{:.6}\t{:.6}\t{c}", self.edges[i], self.edges[i + 1])?;
        }
        Ok(())
    }
}

/// Inclusive 1-based neighbour rank bands.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapConfig {
    pub close: (usize, usize),
    pub far: (usize, usize),
    pub bins: usize,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            close: (1, 3),
            far: (48, 50),
            bins: 20,
        }
    }
}

impl OverlapConfig {
    /// Default bands, with the far band moved to the last three ranks when
    /// the vocabulary is too small to have a 50th neighbour.
    pub fn for_vocab(words: usize) -> Self {
        let mut cfg = Self::default();
        let last = words.saturating_sub(1);
        if last < cfg.far.1 && last >= 3 {
            cfg.far = (last - 2, last);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub config: OverlapConfig,
    pub close_values: Vec<f64>,
    pub far_values: Vec<f64>,
    pub close: Histogram,
    pub far: Histogram,
}

impl OverlapReport {
    pub fn close_mean(&self) -> f64 {
        mean(&self.close_values)
    }

    pub fn far_mean(&self) -> f64 {
        mean(&self.far_values)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lo\thi\tclose\tfar")?;
        for i in 0..self.close.bins() {
            writeln!(
                w,
                "{:.4}\t{:.4}\t{}\t{}",
                self.close.edges[i],
                self.close.edges[i + 1],
                self.close.counts[i],
                self.far.counts[i]
            )?;
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Overlap between every word and its neighbours in the close and far rank
/// bands, binned on [0, 1].
pub fn overlap_histograms(emb: &EmbeddingMatrix, lexicon: &Lexicon, cfg: &OverlapConfig) -> Result<OverlapReport> {
    for (lo, hi) in [cfg.close, cfg.far] {
        if lo == 0 || lo > hi {
            return Err(Error::InvalidArgument(format!("bad neighbour band {lo}-{hi}")));
        }
    }
    let deepest = cfg.close.1.max(cfg.far.1);
    if emb.word_count() < deepest + 1 {
        return Err(Error::InvalidArgument(format!(
            "a neighbour rank of {deepest} needs at least {} words, have {}",
            deepest + 1,
            emb.word_count()
        )));
    }
    let mut close = Histogram::uniform(0.0, 1.0, cfg.bins)?;
    let mut far = close.clone();
    let (mut close_values, mut far_values) = (Vec::new(), Vec::new());
    let vocab = emb.vocabulary();
    for w in 0..emb.word_count() {
        let word = vocab.label(w).expect("word id in range");
        let list = emb.neighbors_of(w, deepest)?;
        for (band, out) in [(cfg.close, &mut close_values), (cfg.far, &mut far_values)] {
            for n in &list.neighbors[band.0 - 1..band.1] {
                let other = vocab.label(n.id).expect("word id in range");
                out.push(pronunciation_overlap(word, other, lexicon)?);
            }
        }
    }
    close.extend(&close_values);
    far.extend(&far_values);
    Ok(OverlapReport {
        config: cfg.clone(),
        close_values,
        far_values,
        close,
        far,
    })
}

/// One-sided permutation test for `mean(a) > mean(b)`; returns the
/// observed difference and the add-one p-value.
pub fn permutation_test(a: &[f64], b: &[f64], permutations: usize, seed: u64) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("permutation test sample"));
    }
    if permutations == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let observed = mean(a) - mean(b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..permutations {
        pooled.shuffle(&mut rng);
        let (x, y) = pooled.split_at(a.len());
        if mean(x) - mean(y) >= observed - 1e-12 {
            extreme += 1;
        }
    }
    Ok((observed, (extreme + 1) as f64 / (permutations + 1) as f64))
}

pub const BLANK_NEIGHBORS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct BlankDistanceReport {
    /// every word's distances to its nearest neighbours, pooled
    pub word_distances: Vec<f64>,
    pub histogram: Histogram,
    /// per word, the mean distance to its nearest neighbours
    pub word_means: Vec<f64>,
    pub blank_mean: f64,
    pub median: f64,
    pub p99: f64,
}

impl BlankDistanceReport {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lo\thi\tcount")?;
        for (i, c) in self.histogram.counts.iter().enumerate() {
            writeln!(w, "{:.6}\t{:.6}\t{c}", self.histogram.edges[i], self.histogram.edges[i + 1])?;
        }
        writeln!(w, "# blank_mean\t{:.6}", self.blank_mean)?;
        writeln!(w, "# word_median\t{:.6}", self.median)?;
        writeln!(w, "# word_p99\t{:.6}", self.p99)
    }
}

/// Distances from each word (and the blank) to their 25 nearest words.
pub fn blank_distance_report(emb: &EmbeddingMatrix, bins: usize) -> Result<BlankDistanceReport> {
    let k = BLANK_NEIGHBORS;
    if emb.word_count() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "blank analysis needs at least {} words, have {}",
            k + 1,
            emb.word_count()
        )));
    }
    let mut word_distances = Vec::with_capacity(emb.word_count() * k);
    let mut word_means = Vec::with_capacity(emb.word_count());
    for w in 0..emb.word_count() {
        let d = emb.neighbors_of(w, k)?.distances();
        word_means.push(mean(&d));
        word_distances.extend(d);
    }
    let blank_mean = mean(&emb.neighbors_of(emb.blank_id(), k)?.distances());
    let mut data = Data::new(word_distances.clone());
    let median = data.median();
    let p99 = data.quantile(0.99);
    let histogram = Histogram::spanning(&word_distances, bins)?;
    Ok(BlankDistanceReport {
        word_distances,
        histogram,
        word_means,
        blank_mean,
        median,
        p99,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMargin {
    pub word: String,
    pub count: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMarginTable {
    pub rows: Vec<FrequencyMargin>,
    /// Spearman correlation; `None` when either column is constant
    pub rank_correlation: Option<f64>,
}

impl FrequencyMarginTable {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "word\tcount\tmargin")?;
        for r in &self.rows {
            writeln!(w, "{}\t{}\t{:.6}", r.word, r.count, r.margin)?;
        }
        match self.rank_correlation {
            Some(rho) => writeln!(w, "# spearman\t{rho:.6}"),
            None => writeln!(w, "# spearman\tundefined"),
        }
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "spearman samples",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Ok(None);
    }
    let rx = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    let (sx, sy) = ((&rx).std_dev(), (&ry).std_dev());
    if !(sx > 0.0 && sy > 0.0) {
        return Ok(None);
    }
    Ok(Some((&rx).covariance(&ry) / (sx * sy)))
}

/// Training-set count and margin for every word in the vocabulary.
pub fn frequency_margin_table(emb: &EmbeddingMatrix, transcripts: &Corpus) -> Result<FrequencyMarginTable> {
    let counts = transcripts.word_counts();
    let rows = (0..emb.word_count())
        .map(|id| {
            let word = emb.vocabulary().label(id).expect("word id in range").to_string();
            Ok(FrequencyMargin {
                count: counts.get(&word).copied().unwrap_or(0),
                margin: emb.margin_of(id)?,
                word,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let c: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
    let m: Vec<f64> = rows.iter().map(|r| r.margin).collect();
    let rank_correlation = spearman(&c, &m)?;
    Ok(FrequencyMarginTable {
        rows,
        rank_correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Mat;
    use proptest::prelude::*;
    use rand::Rng;

    fn emb(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        let words = (0..rows.len() - 1).map(|i| format!("w{i}"));
        EmbeddingMatrix::new(Mat::from_rows(rows).unwrap(), Vocabulary::new(words).unwrap()).unwrap()
    }

    fn toy() -> EmbeddingMatrix {
        emb(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 0.0], vec![9.0, 9.0]])
    }

    #[test]
    fn hand_geometry() {
        let e = toy();
        let n = e.neighbors("w0", 2).unwrap();
        assert_eq!(n.ids(), vec![1, 2]);
        assert_eq!(n.distances(), vec![1.0, 5.0]);
        assert_eq!(e.margin("w0").unwrap(), 1.0);
        assert!(e.neighbors("w0", 3).is_err());
        assert!(matches!(e.neighbors("zz", 1), Err(Error::UnknownWord(_))));
    }

    #[test]
    fn duplicates_come_first_with_zero_margin() {
        let e = emb(&[vec![1.0, 1.0], vec![3.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]]);
        let n = e.neighbors("w0", 2).unwrap();
        assert_eq!(n.neighbors[0], Neighbor { id: 2, distance: 0.0 });
        assert_eq!(e.margin("w0").unwrap(), 0.0);
    }

    #[test]
    fn brute_force_scan_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (v, d) = (1000, 64);
        let rows: Vec<Vec<f64>> = (0..=v)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let e = emb(&rows);
        for q in (0..v).step_by(97) {
            let got = e.neighbors_of(q, 10).unwrap();
            let mut best: Vec<(f64, usize)> = (0..v)
                .filter(|&j| j != q)
                .map(|j| {
                    let s: f64 = rows[q].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum();
                    (s.sqrt(), j)
                })
                .collect();
            best.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got.ids(), best[..10].iter().map(|p| p.1).collect::<Vec<_>>());
            assert_eq!(e.margin_of(q).unwrap(), got.neighbors[0].distance);
        }
    }

    fn lex(entries: &[(&str, &[&str])]) -> Lexicon {
        let mut l = Lexicon::new();
        for (w, p) in entries {
            l.insert(w, p).unwrap();
        }
        l
    }

    #[test]
    fn overlap_definition() {
        let l = lex(&[
            ("CAT", &["K", "AE", "T"]),
            ("BAT", &["B", "AE", "T"]),
            ("OX", &["AA", "K", "S"]),
            ("ZOO", &["Z", "UW"]),
            ("TOT", &["T", "AA", "T"]),
            ("AT", &["AE", "T"]),
        ]);
        assert!((pronunciation_overlap("CAT", "BAT", &l).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pronunciation_overlap("CAT", "CAT", &l).unwrap(), 1.0);
        assert_eq!(pronunciation_overlap("ZOO", "CAT", &l).unwrap(), 0.0);
        // repeated T counts once against CAT's single T
        assert!((pronunciation_overlap("TOT", "CAT", &l).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pronunciation_overlap("AT", "CAT", &l).unwrap(), 1.0);
        assert!(matches!(pronunciation_overlap("CAT", "DOG", &l), Err(Error::OutOfLexicon(_))));
    }

    proptest! {
        #[test]
        fn overlap_symmetric_and_bounded(
            a in proptest::collection::vec(0u8..5, 1..6),
            b in proptest::collection::vec(0u8..5, 1..6),
        ) {
            let a: Vec<String> = a.iter().map(|x| x.to_string()).collect();
            let b: Vec<String> = b.iter().map(|x| x.to_string()).collect();
            let ab = token_overlap(&a, &b);
            prop_assert_eq!(ab, token_overlap(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(token_overlap(&a, &a), 1.0);
        }

        #[test]
        fn distinct_rows_have_positive_margin(rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 3..8)) {
            let e = emb(&rows);
            let distinct = (0..e.word_count()).all(|i| (0..e.word_count()).all(|j| i == j || rows[i] != rows[j]));
            prop_assume!(distinct);
            for w in 0..e.word_count() {
                prop_assert!(e.margin_of(w).unwrap() > 0.0);
            }
        }
    }

    fn clustered(words: usize, blank_far: bool, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = (0..words)
            .map(|_| (0..4).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect();
        rows.push(if blank_far { vec![100.0; 4] } else { vec![0.0; 4] });
        emb(&rows)
    }

    #[test]
    fn identical_pronunciations_fill_top_bin() {
        let e = clustered(52, false, 1);
        let mut l = Lexicon::new();
        for w in e.vocabulary().labels() {
            l.insert(w, &["a", "b"]).unwrap();
        }
        let r = overlap_histograms(&e, &l, &OverlapConfig::default()).unwrap();
        assert_eq!(r.close.counts[19], r.close.total());
        assert_eq!(r.close.total(), 52 * 3);
        assert!(overlap_histograms(&clustered(50, false, 1), &l, &OverlapConfig::default()).is_err());
    }

    #[test]
    fn random_baseline_is_not_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = clustered(60, false, 2);
        let mut l = Lexicon::new();
        for w in e.vocabulary().labels() {
            let p: Vec<String> = (0..3).map(|_| format!("p{}", rng.random_range(0..8))).collect();
            l.insert(w, &p).unwrap();
        }
        let r = overlap_histograms(&e, &l, &OverlapConfig::default()).unwrap();
        let (_, p) = permutation_test(&r.close_values, &r.far_values, 2000, 3).unwrap();
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn permutation_test_detects_shift() {
        let a: Vec<f64> = (0..50).map(|i| 1.0 + (i % 5) as f64 * 0.01).collect();
        let b: Vec<f64> = (0..50).map(|i| (i % 5) as f64 * 0.01).collect();
        let (diff, p) = permutation_test(&a, &b, 999, 0).unwrap();
        assert!((diff - 1.0).abs() < 1e-12);
        assert!(p <= 0.001 + 1e-12);
    }

    #[test]
    fn blank_far_from_cluster() {
        let r = blank_distance_report(&clustered(40, true, 5), 20).unwrap();
        assert!(r.blank_mean > r.p99);
        assert_eq!(r.word_distances.len(), 40 * 25);
        assert_eq!(r.histogram.total(), 40 * 25);

        let same = emb(&vec![vec![0.5, 0.5]; 30]);
        let r = blank_distance_report(&same, 20).unwrap();
        assert!(r.word_distances.iter().all(|&d| d == 0.0));
        assert_eq!(r.blank_mean, 0.0);
        assert!(blank_distance_report(&clustered(25, true, 5), 20).is_err());
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        let x = [3.0, 10.0, 1.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        assert!((spearman(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
    }

    fn corpus_with_counts(counts: &[usize]) -> Corpus {
        use crate::data::{FeatureSequence, Utterance};
        let words: Vec<String> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat(format!("w{i}")).take(c))
            .collect();
        Corpus::new(vec![Utterance {
            id: "u".into(),
            features: FeatureSequence::new(1, 2, vec![0.0; 2]).unwrap(),
            words,
            alignment: None,
        }])
    }

    #[test]
    fn frequency_margin_cases() {
        let e = emb(&[vec![0.0], vec![1.0], vec![-2.0], vec![50.0], vec![-60.0]]);
        let t = frequency_margin_table(&e, &corpus_with_counts(&[3, 3, 3, 3])).unwrap();
        assert_eq!(t.rank_correlation, None);
        assert_eq!(t.rows.len(), 4);

        let e = emb(&[vec![0.0], vec![10.0], vec![30.0], vec![70.0], vec![-999.0]]);
        let margins: Vec<f64> = (0..4).map(|i| e.margin_of(i).unwrap()).collect();
        assert_eq!(margins, vec![10.0, 10.0, 20.0, 40.0]);
        let t = frequency_margin_table(&e, &corpus_with_counts(&[1, 1, 2, 4])).unwrap();
        assert!((t.rank_correlation.unwrap() - 1.0).abs() < 1e-12);
        let mut out = Vec::new();
        t.write_tsv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("word\tcount\tmargin\nw0\t1\t10.000000\n"));
    }

    #[test]
    fn histogram_edges() {
        let mut h = Histogram::uniform(0.0, 1.0, 20).unwrap();
        h.extend(&[0.0, 0.05, 1.0, 0.999, -3.0]);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 2);
        assert_eq!(h.total(), 5);
        assert!(Histogram::uniform(1.0, 1.0, 3).is_err());
    }
}
