//! Levenshtein-based error rates (WER / PER) and frame error rate.

use std::io::Write;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `100 · (S + D + I) / N`; may exceed 100.
    pub fn error_rate(&self) -> Result<f64> {
        error_rate(self)
    }
}

impl Add for EditStats {
    type Output = EditStats;

    fn add(self, rhs: EditStats) -> EditStats {
        EditStats {
            substitutions: self.substitutions + rhs.substitutions,
            deletions: self.deletions + rhs.deletions,
            insertions: self.insertions + rhs.insertions,
            reference_len: self.reference_len + rhs.reference_len,
        }
    }
}

impl AddAssign for EditStats {
    fn add_assign(&mut self, rhs: EditStats) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for EditStats {
    fn sum<I: Iterator<Item = EditStats>>(iter: I) -> EditStats {
        iter.fold(EditStats::default(), Add::add)
    }
}

/// Minimal-cost alignment of `hypothesis` against `reference`. When several
/// alignments tie, the backtrace prefers a diagonal step (match or
/// substitution), then an insertion, then a deletion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditStats {
    let (n, m) = (reference.len(), hypothesis.len());
    let width = m + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        cost[i * width] = i;
        for j in 1..=m {
            let sub = cost[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = cost[i * width + j - 1] + 1;
            let del = cost[(i - 1) * width + j] + 1;
            cost[i * width + j] = sub.min(ins).min(del);
        }
    }

    let mut stats = EditStats {
        reference_len: n,
        ..EditStats::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hypothesis[j - 1];
            if here == cost[(i - 1) * width + j - 1] + usize::from(mismatch) {
                stats.substitutions += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == cost[i * width + j - 1] + 1 {
            stats.insertions += 1;
            j -= 1;
        } else {
            stats.deletions += 1;
            i -= 1;
        }
    }
    stats
}

pub fn error_rate(stats: &EditStats) -> Result<f64> {
    if stats.reference_len == 0 {
        return Err(Error::EmptyInput("error rate reference"));
    }
    Ok(100.0 * stats.errors() as f64 / stats.reference_len as f64)
}

/// Percentage of positions where the two frame-label sequences disagree.
pub fn frame_error_rate<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    let (errors, total) = frame_errors(reference, hypothesis)?;
    if total == 0 {
        return Err(Error::EmptyInput("frame error rate"));
    }
    Ok(100.0 * errors as f64 / total as f64)
}

/// `(mismatches, frames)`, for pooling over a corpus.
pub fn frame_errors<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<(usize, usize)> {
    if reference.len() != hypothesis.len() {
        return Err(Error::DimensionMismatch {
            what: "frame label sequence",
            expected: reference.len(),
            actual: hypothesis.len(),
        });
    }
    let errors = reference.iter().zip(hypothesis).filter(|(r, h)| r != h).count();
    Ok((errors, reference.len()))
}

/// Per-utterance rows followed by a pooled `TOTAL` row, tab-separated with
/// a header line.
pub fn write_score_report<W: Write>(mut out: W, rows: &[(String, EditStats)]) -> std::io::Result<EditStats> {
    writeln!(out, "id\tref_len\tsub\tdel\tins\terrors\trate")?;
    for (id, s) in rows {
        writeln!(out, "{id}\t{}", format_stats(s))?;
    }
    let total: EditStats = rows.iter().map(|(_, s)| *s).sum();
    writeln!(out, "TOTAL\t{}", format_stats(&total))?;
    Ok(total)
}

fn format_stats(s: &EditStats) -> String {
    let rate = error_rate(s).map_or_else(|_| "nan".to_string(), |r| format!("{r:.2}"));
    format!(
        "{}\t{}\t{}\t{}\t{}\t{rate}",
        s.reference_len,
        s.substitutions,
        s.deletions,
        s.insertions,
        s.errors()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let s = edit_distance(&['a', 'b', 'c'], &['a', 'c']);
        assert_eq!((s.substitutions, s.deletions, s.insertions), (0, 1, 0));
        let s = edit_distance(&[1, 2, 3], &[1, 2, 3]);
        assert_eq!(s.errors(), 0);
        assert_eq!(s.reference_len, 3);
        let s = edit_distance::<u8>(&[], &[1, 2]);
        assert_eq!(s.insertions, 2);
        // equal cost: substitution preferred over insertion + deletion
        let s = edit_distance(&['a'], &['b']);
        assert_eq!((s.substitutions, s.deletions, s.insertions), (1, 0, 0));
    }

    #[test]
    fn rates() {
        let s = EditStats {
            deletions: 1,
            reference_len: 3,
            ..Default::default()
        };
        assert!((error_rate(&s).unwrap() - 33.333_333_333_333_336).abs() < 1e-12);
        let zero = EditStats {
            reference_len: 4,
            ..Default::default()
        };
        assert_eq!(error_rate(&zero).unwrap(), 0.0);
        assert!(error_rate(&EditStats::default()).is_err());
        let over = edit_distance(&['a'], &['b', 'c', 'd']);
        assert_eq!(error_rate(&over).unwrap(), 300.0);
    }

    #[test]
    fn corpus_rate_pools_counts() {
        // 1 error in 1 word, 0 errors in 9 words: pooled 10%, mean of rates 50%.
        let a = edit_distance(&["x"], &["y"]);
        let b = edit_distance(&["w"; 9], &["w"; 9]);
        let pooled = error_rate(&(a + b)).unwrap();
        let mean = (error_rate(&a).unwrap() + error_rate(&b).unwrap()) / 2.0;
        assert_eq!(pooled, 10.0);
        assert_eq!(mean, 50.0);
    }

    #[test]
    fn frame_rates() {
        assert_eq!(frame_error_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(frame_error_rate(&[1, 2, 3, 4], &[1, 2, 0, 4]).unwrap(), 25.0);
        assert!(frame_error_rate(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn random_frame_rate_is_near_chance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let k = 5;
        let a: Vec<u8> = (0..100_000).map(|_| rng.random_range(0..k)).collect();
        let b: Vec<u8> = (0..100_000).map(|_| rng.random_range(0..k)).collect();
        let fer = frame_error_rate(&a, &b).unwrap();
        assert!((fer - 80.0).abs() < 1.0, "{fer}");
    }

    /// Exhaustive search over every alignment: recursive minimum.
    fn brute_force(r: &[u8], h: &[u8]) -> usize {
        match (r.split_first(), h.split_first()) {
            (None, _) => h.len(),
            (_, None) => r.len(),
            (Some((a, rr)), Some((b, hh))) => {
                let diag = brute_force(rr, hh) + usize::from(a != b);
                let del = brute_force(rr, h) + 1;
                let ins = brute_force(r, hh) + 1;
                diag.min(del).min(ins)
            }
        }
    }

    #[test]
    fn matches_exhaustive_search_on_small_pairs() {
        for n in 0..=4usize {
            for m in 0..=4usize {
                for rc in 0..3usize.pow(n as u32) {
                    for hc in 0..3usize.pow(m as u32) {
                        let digits = |mut c: usize, len: usize| -> Vec<u8> {
                            (0..len).map(|_| { let d = (c % 3) as u8; c /= 3; d }).collect()
                        };
                        let (r, h) = (digits(rc, n), digits(hc, m));
                        assert_eq!(edit_distance(&r, &h).errors(), brute_force(&r, &h));
                    }
                }
            }
        }
    }

    #[test]
    fn score_report_layout() {
        let rows = vec![
            ("u1".to_string(), edit_distance(&[1, 2, 3], &[1, 3])),
            ("u2".to_string(), edit_distance(&[1], &[1])),
        ];
        let mut buf = Vec::new();
        let total = write_score_report(&mut buf, &rows).unwrap();
        assert_eq!(total.errors(), 1);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id\tref_len\tsub\tdel\tins\terrors\trate");
        assert_eq!(lines[1], "u1\t3\t0\t1\t0\t1\t33.33");
        assert_eq!(lines[3], "TOTAL\t4\t0\t1\t0\t1\t25.00");
    }

    proptest! {
        #[test]
        fn symmetric_with_swapped_insertions(
            a in prop::collection::vec(0u8..3, 0..8),
            b in prop::collection::vec(0u8..3, 0..8),
        ) {
            let ab = edit_distance(&a, &b);
            let ba = edit_distance(&b, &a);
            prop_assert_eq!(ab.errors(), ba.errors());
            prop_assert_eq!(
                ab.insertions as i64 - ab.deletions as i64,
                ba.deletions as i64 - ba.insertions as i64
            );
            prop_assert!(ab.substitutions + ab.deletions <= ab.reference_len);
            // counts are a valid alignment: |hyp| = N - D + I
            prop_assert_eq!(b.len() + ab.deletions, a.len() + ab.insertions);
            prop_assert_eq!(edit_distance(&a, &a).errors(), 0);
        }

        #[test]
        fn triangle_inequality(
            a in prop::collection::vec(0u8..3, 0..7),
            b in prop::collection::vec(0u8..3, 0..7),
            c in prop::collection::vec(0u8..3, 0..7),
        ) {
            let ac = edit_distance(&a, &c).errors();
            let ab = edit_distance(&a, &b).errors();
            let bc = edit_distance(&b, &c).errors();
            prop_assert!(ac <= ab + bc);
        }
    }
}
