//! Connectionist temporal classification: the collapse map, its exhaustive
//! pre-image (a test oracle), the likelihood and its gradient via the
//! forward-backward recursions, and best-path decoding.
//!
//! The blank symbol always sits at the last output index, so a lattice with
//! `V + 1` columns models `V` labels plus blank.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{log_add, log_softmax_in_place, Mat};

/// Frame bound for [`enumerate_preimage`].
pub const ORACLE_MAX_FRAMES: usize = 10;
const ORACLE_MAX_PATHS: u64 = 50_000_000;

pub const BLANK_SYMBOL: &str = "<blank>";

/// Ordered label inventory; the blank id is `len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label == BLANK_SYMBOL {
                return Err(Error::InvalidArgument(format!(
                    "{BLANK_SYMBOL} is reserved and cannot be a vocabulary entry"
                )));
            }
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary entry {label:?} is empty or contains whitespace"
                )));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary entry {label:?}"
                )));
            }
        }
        Ok(Self { labels, index })
    }

    /// Number of labels, excluding blank.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn blank_id(&self) -> usize {
        self.labels.len()
    }

    /// `V + 1`
    pub fn output_dim(&self) -> usize {
        self.labels.len() + 1
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        if id == self.blank_id() {
            Some(BLANK_SYMBOL)
        } else {
            self.labels.get(id).map(String::as_str)
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Maps words to ids, failing on the first unknown word.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                self.id(w.as_ref())
                    .ok_or_else(|| Error::UnknownWord(w.as_ref().to_string()))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.label(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// Per-frame log-probabilities over `V` labels plus blank (last column).
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbLattice {
    log_probs: Mat,
}

impl LogProbLattice {
    /// Row-wise log-softmax of unnormalized scores.
    pub fn from_logits(logits: &Mat) -> Result<Self> {
        if logits.cols() == 0 {
            return Err(Error::EmptyInput("lattice columns"));
        }
        if let Some(index) = logits.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "logits",
                index,
            });
        }
        let mut log_probs = logits.clone();
        for r in 0..log_probs.rows() {
            log_softmax_in_place(log_probs.row_mut(r));
        }
        Ok(Self { log_probs })
    }

    /// Wraps log-probabilities, checking that every row normalizes within 1e-9.
    pub fn from_log_probs(log_probs: Mat) -> Result<Self> {
        if log_probs.cols() == 0 {
            return Err(Error::EmptyInput("lattice columns"));
        }
        for (t, row) in log_probs.iter_rows().enumerate() {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidArgument(format!(
                    "lattice row {t} sums to {total}, not 1"
                )));
            }
        }
        Ok(Self { log_probs })
    }

    pub(crate) fn from_log_probs_unchecked(log_probs: Mat) -> Self {
        Self { log_probs }
    }

    pub fn frames(&self) -> usize {
        self.log_probs.rows()
    }

    /// `V + 1`
    pub fn dim(&self) -> usize {
        self.log_probs.cols()
    }

    pub fn blank(&self) -> usize {
        self.log_probs.cols() - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.log_probs.row(t)
    }

    pub fn as_mat(&self) -> &Mat {
        &self.log_probs
    }

    pub fn into_mat(self) -> Mat {
        self.log_probs
    }

    /// Sum of per-frame log-probabilities along one path.
    pub fn path_log_score(&self, path: &[usize]) -> f64 {
        path.iter()
            .enumerate()
            .map(|(t, &k)| self.log_probs.get(t, k))
            .sum()
    }
}

/// Merges runs of identical symbols, then deletes blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(path.len());
    collapse_into(path, blank, &mut out);
    out
}

fn collapse_into(path: &[usize], blank: usize, out: &mut Vec<usize>) {
    out.clear();
    let mut prev = None;
    for &z in path {
        if Some(z) != prev && z != blank {
            out.push(z);
        }
        prev = Some(z);
    }
}

/// Minimum number of frames any alignment of `target` needs: one per label
/// plus a separating blank between adjacent repeats.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// All length-`frames` paths over `labels + 1` symbols that collapse to
/// `target`, in lexicographic order. Exhaustive; meant for tests.
pub fn enumerate_preimage(target: &[usize], frames: usize, labels: usize) -> Result<Vec<Vec<usize>>> {
    enumerate_preimage_bounded(target, frames, labels, ORACLE_MAX_FRAMES)
}

pub fn enumerate_preimage_bounded(
    target: &[usize],
    frames: usize,
    labels: usize,
    max_frames: usize,
) -> Result<Vec<Vec<usize>>> {
    if frames > max_frames {
        return Err(Error::OracleBound(format!(
            "{frames} frames exceeds the oracle bound of {max_frames}"
        )));
    }
    let symbols = labels + 1;
    let count = (symbols as u64).checked_pow(frames as u32);
    if count.map_or(true, |c| c > ORACLE_MAX_PATHS) {
        return Err(Error::OracleBound(format!(
            "{symbols}^{frames} paths is too many to enumerate"
        )));
    }
    validate_target(target, labels)?;

    let mut found = Vec::new();
    let mut path = vec![0usize; frames];
    let mut scratch = Vec::with_capacity(frames);
    loop {
        collapse_into(&path, labels, &mut scratch);
        if scratch == target {
            found.push(path.clone());
        }
        // odometer increment, last position fastest
        let mut pos = frames;
        loop {
            if pos == 0 {
                return Ok(found);
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < symbols {
                break;
            }
            path[pos] = 0;
        }
    }
}

fn validate_target(target: &[usize], blank: usize) -> Result<()> {
    for &y in target {
        if y == blank {
            return Err(Error::BlankInTarget(blank));
        }
        if y > blank {
            return Err(Error::LabelOutOfRange {
                id: y,
                dim: blank + 1,
            });
        }
    }
    Ok(())
}

/// Label at position `s` of the blank-interleaved state sequence.
#[inline]
fn state_label(target: &[usize], blank: usize, s: usize) -> usize {
    if s % 2 == 0 {
        blank
    } else {
        target[s / 2]
    }
}

#[inline]
fn can_skip(target: &[usize], blank: usize, s: usize) -> bool {
    s >= 2 && s % 2 == 1 && state_label(target, blank, s) != state_label(target, blank, s - 2)
}

/// Forward variables, `T × (2K + 1)`, each including the emission at its frame.
fn forward(lattice: &LogProbLattice, target: &[usize]) -> Mat {
    let blank = lattice.blank();
    let frames = lattice.frames();
    let states = 2 * target.len() + 1;
    let mut alpha = Mat::filled(frames, states, f64::NEG_INFINITY);
    if frames == 0 {
        return alpha;
    }
    alpha.set(0, 0, lattice.row(0)[blank]);
    if states > 1 {
        alpha.set(0, 1, lattice.row(0)[target[0]]);
    }
    for t in 1..frames {
        let emit = lattice.row(t);
        // reachable window: a state can't be ahead of 2t+1 or hopelessly behind.
        let lo = states.saturating_sub(2 * (frames - t));
        let hi = (2 * t + 2).min(states);
        for s in lo..hi {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            if can_skip(target, blank, s) {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            if acc != f64::NEG_INFINITY {
                alpha.set(t, s, acc + emit[state_label(target, blank, s)]);
            }
        }
    }
    alpha
}

/// Backward variables, `T × (2K + 1)`, excluding the emission at their frame.
fn backward(lattice: &LogProbLattice, target: &[usize]) -> Mat {
    let blank = lattice.blank();
    let frames = lattice.frames();
    let states = 2 * target.len() + 1;
    let mut beta = Mat::filled(frames, states, f64::NEG_INFINITY);
    if frames == 0 {
        return beta;
    }
    beta.set(frames - 1, states - 1, 0.0);
    if states > 1 {
        beta.set(frames - 1, states - 2, 0.0);
    }
    for t in (0..frames - 1).rev() {
        let emit = lattice.row(t + 1);
        for s in 0..states {
            let mut acc = beta.get(t + 1, s) + emit[state_label(target, blank, s)];
            if s + 1 < states {
                acc = log_add(
                    acc,
                    beta.get(t + 1, s + 1) + emit[state_label(target, blank, s + 1)],
                );
            }
            if s + 2 < states && can_skip(target, blank, s + 2) {
                acc = log_add(
                    acc,
                    beta.get(t + 1, s + 2) + emit[state_label(target, blank, s + 2)],
                );
            }
            beta.set(t, s, acc);
        }
    }
    beta
}

fn total_from_alpha(alpha: &Mat, target: &[usize]) -> f64 {
    let frames = alpha.rows();
    if frames == 0 {
        return if target.is_empty() { 0.0 } else { f64::NEG_INFINITY };
    }
    let states = alpha.cols();
    let last = alpha.row(frames - 1);
    if states > 1 {
        log_add(last[states - 1], last[states - 2])
    } else {
        last[0]
    }
}

/// `log p(y | x)`, the log of the summed probability of every alignment that
/// collapses to `target`. Returns `-inf` when no alignment fits.
pub fn ctc_log_likelihood(lattice: &LogProbLattice, target: &[usize]) -> Result<f64> {
    validate_target(target, lattice.blank())?;
    if lattice.frames() < min_frames(target) {
        return Ok(f64::NEG_INFINITY);
    }
    let alpha = forward(lattice, target);
    Ok(total_from_alpha(&alpha, target))
}

/// Negative log-likelihood and its gradient with respect to the logits that
/// produced `lattice` (softmax folded in): `softmax - posterior occupancy`.
pub fn ctc_loss_and_gradient(lattice: &LogProbLattice, target: &[usize]) -> Result<(f64, Mat)> {
    validate_target(target, lattice.blank())?;
    let frames = lattice.frames();
    let infeasible = Error::InfeasibleTarget {
        frames,
        target_len: target.len(),
    };
    if frames < min_frames(target) {
        return Err(infeasible);
    }
    let alpha = forward(lattice, target);
    let log_p = total_from_alpha(&alpha, target);
    if log_p == f64::NEG_INFINITY {
        return Err(infeasible);
    }
    let beta = backward(lattice, target);
    let blank = lattice.blank();
    let dim = lattice.dim();
    let mut grad = Mat::zeros(frames, dim);
    for t in 0..frames {
        let g = grad.row_mut(t);
        for (gk, lp) in g.iter_mut().zip(lattice.row(t)) {
            *gk = lp.exp();
        }
        let (a, b) = (alpha.row(t), beta.row(t));
        for s in 0..a.len() {
            let occ = a[s] + b[s];
            if occ != f64::NEG_INFINITY {
                g[state_label(target, blank, s)] -= (occ - log_p).exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// Gradient of `-log p(y | x)` with respect to the pre-softmax logits.
pub fn ctc_gradient(lattice: &LogProbLattice, target: &[usize]) -> Result<Mat> {
    ctc_loss_and_gradient(lattice, target).map(|(_, g)| g)
}

/// Per-frame argmax (lowest index wins ties, so blank loses them), then collapse.
pub fn greedy_decode(lattice: &LogProbLattice) -> Vec<usize> {
    let path = best_path(lattice);
    collapse(&path, lattice.blank())
}

pub fn best_path(lattice: &LogProbLattice) -> Vec<usize> {
    (0..lattice.frames()).map(|t| argmax(lattice.row(t))).collect()
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const A: usize = 0;
    const B: usize = 1;

    fn uniform(frames: usize, dim: usize) -> LogProbLattice {
        LogProbLattice::from_logits(&Mat::zeros(frames, dim)).unwrap()
    }

    fn random_lattice(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> (Mat, LogProbLattice) {
        let mut logits = Mat::zeros(frames, dim);
        for v in logits.as_mut_slice() {
            *v = rng.random_range(-3.0..3.0);
        }
        let lattice = LogProbLattice::from_logits(&logits).unwrap();
        (logits, lattice)
    }

    #[test]
    fn collapse_examples() {
        let blank = 2;
        assert_eq!(collapse(&[A, A, blank, B, blank, B], blank), vec![A, B, B]);
        assert_eq!(collapse(&[blank, blank, blank], blank), Vec::<usize>::new());
        assert_eq!(collapse(&[A, blank, A], blank), vec![A, A]);
        assert_eq!(collapse(&[], blank), Vec::<usize>::new());
    }

    #[test]
    fn preimage_examples() {
        // One label a, blank = 1.
        let paths = enumerate_preimage(&[A], 2, 1).unwrap();
        assert_eq!(paths, vec![vec![0, 0], vec![0, 1], vec![1, 0]]);
        assert!(enumerate_preimage(&[A, A], 2, 1).unwrap().is_empty());
        assert_eq!(enumerate_preimage(&[], 3, 1).unwrap(), vec![vec![1, 1, 1]]);
        assert!(matches!(
            enumerate_preimage(&[A], 11, 1),
            Err(Error::OracleBound(_))
        ));
        assert!(matches!(
            enumerate_preimage(&[1], 3, 1),
            Err(Error::BlankInTarget(1))
        ));
    }

    #[test]
    fn preimage_duality() {
        for labels in 1..=3usize {
            for frames in 1..=6usize {
                let symbols = labels + 1;
                let total = symbols.pow(frames as u32);
                for code in 0..total {
                    let mut c = code;
                    let path: Vec<usize> = (0..frames)
                        .map(|_| {
                            let z = c % symbols;
                            c /= symbols;
                            z
                        })
                        .collect();
                    let y = collapse(&path, labels);
                    let pre = enumerate_preimage(&y, frames, labels).unwrap();
                    assert!(pre.binary_search(&path).is_ok(), "{path:?} missing");
                }
            }
        }
    }

    #[test]
    fn monotone_feasibility() {
        for y in [vec![], vec![A], vec![A, A], vec![A, B, A], vec![B, B, B]] {
            for frames in 1..7 {
                let now = !enumerate_preimage(&y, frames, 2).unwrap().is_empty();
                let next = !enumerate_preimage(&y, frames + 1, 2).unwrap().is_empty();
                assert!(!now || next);
                assert_eq!(now, frames >= min_frames(&y));
            }
        }
    }

    #[test]
    fn likelihood_uniform_two_frames() {
        let lattice = uniform(2, 2);
        let ll = ctc_log_likelihood(&lattice, &[A]).unwrap();
        // three alignments, each (1/2)^2
        assert!((ll - 0.75f64.ln()).abs() < 1e-14);
        assert!((ll + 0.287_682_072_451_780_9).abs() < 1e-12);
    }

    #[test]
    fn likelihood_empty_target_is_all_blank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, lattice) = random_lattice(&mut rng, 5, 4);
        let expected: f64 = (0..5).map(|t| lattice.row(t)[3]).sum();
        let ll = ctc_log_likelihood(&lattice, &[]).unwrap();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn likelihood_edge_cases() {
        let empty = LogProbLattice::from_logits(&Mat::zeros(0, 3)).unwrap();
        assert_eq!(ctc_log_likelihood(&empty, &[A]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(ctc_log_likelihood(&empty, &[]).unwrap(), 0.0);
        let lattice = uniform(2, 3);
        assert_eq!(
            ctc_log_likelihood(&lattice, &[A, A]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(matches!(
            ctc_log_likelihood(&lattice, &[2]),
            Err(Error::BlankInTarget(2))
        ));
        assert!(matches!(
            ctc_gradient(&lattice, &[A, A]),
            Err(Error::InfeasibleTarget { .. })
        ));
    }

    #[test]
    fn likelihood_matches_enumeration_on_random_lattices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let frames = rng.random_range(1..=6);
            let labels = 3;
            let len = rng.random_range(0..=3);
            let y: Vec<usize> = (0..len).map(|_| rng.random_range(0..labels)).collect();
            let (_, lattice) = random_lattice(&mut rng, frames, labels + 1);
            let paths = enumerate_preimage(&y, frames, labels).unwrap();
            let brute: f64 = paths.iter().map(|p| lattice.path_log_score(p).exp()).sum();
            let ll = ctc_log_likelihood(&lattice, &y).unwrap();
            assert!((ll.exp() - brute).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_single_frame_is_softmax_minus_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, lattice) = random_lattice(&mut rng, 1, 3);
        let g = ctc_gradient(&lattice, &[B]).unwrap();
        for k in 0..3 {
            let expected = lattice.row(0)[k].exp() - if k == B { 1.0 } else { 0.0 };
            assert!((g.get(0, k) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_empty_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, lattice) = random_lattice(&mut rng, 4, 3);
        let g = ctc_gradient(&lattice, &[]).unwrap();
        for t in 0..4 {
            for k in 0..3 {
                let expected = lattice.row(t)[k].exp() - if k == 2 { 1.0 } else { 0.0 };
                assert!((g.get(t, k) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let step = 1e-6;
        for _ in 0..10 {
            let frames = rng.random_range(3..=7);
            let y: Vec<usize> = (0..rng.random_range(0..=3))
                .map(|_| rng.random_range(0..3))
                .collect();
            if frames < min_frames(&y) {
                continue;
            }
            let (logits, lattice) = random_lattice(&mut rng, frames, 4);
            let g = ctc_gradient(&lattice, &y).unwrap();
            for t in 0..frames {
                let row_sum: f64 = g.row(t).iter().sum();
                assert!(row_sum.abs() < 1e-9);
                for k in 0..4 {
                    let nll = |delta: f64| {
                        let mut l = logits.clone();
                        l.set(t, k, l.get(t, k) + delta);
                        let lat = LogProbLattice::from_logits(&l).unwrap();
                        -ctc_log_likelihood(&lat, &y).unwrap()
                    };
                    let fd = (nll(step) - nll(-step)) / (2.0 * step);
                    let an = g.get(t, k);
                    let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
                    assert!(rel < 1e-5, "t={t} k={k} fd={fd} an={an}");
                }
            }
        }
    }

    #[test]
    fn greedy_examples() {
        // argmaxes a, a, blank, b with blank = 2
        let rows = [[0.9, 0.05, 0.05], [0.8, 0.1, 0.1], [0.1, 0.1, 0.8], [0.1, 0.7, 0.2]];
        let logp: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p: &f64| p.ln()).collect()).collect();
        let lattice = LogProbLattice::from_log_probs(Mat::from_rows(&logp).unwrap()).unwrap();
        assert_eq!(greedy_decode(&lattice), vec![A, B]);

        let blanks: Vec<Vec<f64>> = (0..3).map(|_| vec![0.1f64.ln(), 0.1f64.ln(), 0.8f64.ln()]).collect();
        let lattice = LogProbLattice::from_log_probs(Mat::from_rows(&blanks).unwrap()).unwrap();
        assert!(greedy_decode(&lattice).is_empty());

        // exact tie between a label and blank goes to the label
        let tie = uniform(1, 2);
        assert_eq!(greedy_decode(&tie), vec![A]);
    }

    #[test]
    fn greedy_matches_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (_, lattice) = random_lattice(&mut rng, 12, 5);
            let mut expected = Vec::new();
            let mut prev = usize::MAX;
            for t in 0..12 {
                let row = lattice.row(t);
                let mut best = 0;
                for k in 0..5 {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                if best != prev && best != 4 {
                    expected.push(best);
                }
                prev = best;
            }
            assert_eq!(greedy_decode(&lattice), expected);
        }
    }

    #[test]
    fn vocabulary_rules() {
        let v = Vocabulary::new(["CAT", "BAT"]).unwrap();
        assert_eq!(v.blank_id(), 2);
        assert_eq!(v.output_dim(), 3);
        assert_eq!(v.encode(&["BAT", "CAT"]).unwrap(), vec![1, 0]);
        assert!(matches!(v.encode(&["DOG"]), Err(Error::UnknownWord(w)) if w == "DOG"));
        assert!(Vocabulary::new(["A", "A"]).is_err());
        assert!(Vocabulary::new([BLANK_SYMBOL]).is_err());
    }
}
