//! On-disk formats.
//!
//! * `.feat`: little-endian binary. 4-byte magic `A2WF`, then `u32` version,
//!   `u32` frame count `T`, `u32` dimension `d`, then `T·d` `f32` values,
//!   row-major.
//! * `corpus.tsv`: `id<TAB>feature path<TAB>space-separated transcript`.
//!   Feature paths are relative to the directory holding `corpus.tsv`.
//! * `align.tsv`: `id<TAB>space-separated per-frame word labels`.
//! * `lexicon.tsv`: `word<TAB>space-separated phonemes`; repeated words add
//!   alternative pronunciations.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Corpus, FeatureSequence, Lexicon, Utterance};
use crate::ctc::Vocabulary;
use crate::error::{Error, Result};
use crate::network::SILENCE_SYMBOL;

pub const FEATURE_MAGIC: &[u8; 4] = b"A2WF";
pub const FEATURE_FORMAT_VERSION: u32 = 1;
const FEATURE_HEADER_LEN: usize = 16;

pub fn write_features(path: impl AsRef<Path>, features: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * features.as_slice().len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_FORMAT_VERSION.to_le_bytes());
    for v in [features.frames(), features.dim()] {
        let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit a u32 header field")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in features.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::BadHeader {
        file: path.to_path_buf(),
        message,
    };
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(bad(format!(
            "header needs {FEATURE_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("not a feature file (magic mismatch)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FEATURE_FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (frames, dim) = (word(8) as usize, word(12) as usize);
    let expected = FEATURE_HEADER_LEN as u64 + 4 * frames as u64 * dim as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            file: path.to_path_buf(),
            offset: bytes.len() as u64,
            expected,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(bad(format!(
            "{} bytes of payload beyond the {frames}×{dim} header",
            bytes.len() as u64 - expected
        )));
    }
    let data = bytes[FEATURE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FeatureSequence::new(frames, dim, data)
}

fn feature_file_name(id: &str) -> String {
    format!("feats/{id}.feat")
}

/// Writes `corpus.tsv`, `feats/*.feat` and, when any utterance carries one,
/// `align.tsv` under `dir`.
pub fn save_corpus(dir: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("feats")).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut align = String::new();
    for u in corpus {
        check_id(&u.id)?;
        let rel = feature_file_name(&u.id);
        write_features(dir.join(&rel), &u.features)?;
        manifest.push_str(&format!("{}\t{}\t{}\n", u.id, rel, u.words.join(" ")));
        if let Some(a) = &u.alignment {
            align.push_str(&format!("{}\t{}\n", u.id, a.join(" ")));
        }
    }
    let manifest_path = dir.join("corpus.tsv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    if !align.is_empty() {
        let p = dir.join("align.tsv");
        fs::write(&p, align).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '/', '\\']) || id.chars().any(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!("utterance id {id:?} is not file-safe")));
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn malformed(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a corpus directory written by [`save_corpus`]. With a vocabulary,
/// every transcript word and alignment label must belong to it.
pub fn load_corpus(dir: impl AsRef<Path>, vocab: Option<&Vocabulary>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest = dir.join("corpus.tsv");
    let text = read_text(&manifest)?;
    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(&manifest, line_no, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(malformed(&manifest, line_no, format!("duplicate utterance id {id:?}")));
        }
        let words: Vec<String> = fields[2].split_whitespace().map(str::to_string).collect();
        if let Some(v) = vocab {
            if let Some(w) = words.iter().find(|w| v.id(w).is_none()) {
                return Err(Error::UnknownLabel {
                    label: w.clone(),
                    file: manifest.clone(),
                    line: line_no,
                });
            }
        }
        let feat_path: PathBuf = dir.join(fields[1]);
        let features = read_features(&feat_path)?;
        utterances.push(Utterance {
            id,
            features,
            words,
            alignment: None,
        });
    }

    let align_path = dir.join("align.tsv");
    if align_path.exists() {
        let text = read_text(&align_path)?;
        let position: HashMap<String, usize> =
            utterances.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (id, labels) = line
                .split_once('\t')
                .ok_or_else(|| malformed(&align_path, line_no, "expected id<TAB>labels"))?;
            let &idx = position
                .get(id)
                .ok_or_else(|| malformed(&align_path, line_no, format!("unknown utterance {id:?}")))?;
            let labels: Vec<String> = labels.split_whitespace().map(str::to_string).collect();
            if let Some(v) = vocab {
                if let Some(l) = labels.iter().find(|l| l.as_str() != SILENCE_SYMBOL && v.id(l).is_none()) {
                    return Err(Error::UnknownLabel {
                        label: l.clone(),
                        file: align_path.clone(),
                        line: line_no,
                    });
                }
            }
            let u = &mut utterances[idx];
            if labels.len() != u.features.frames() {
                return Err(malformed(
                    &align_path,
                    line_no,
                    format!("{} labels for {} frames", labels.len(), u.features.frames()),
                ));
            }
            u.alignment = Some(labels);
        }
    }
    Ok(Corpus::new(utterances))
}

pub fn save_lexicon(path: impl AsRef<Path>, lexicon: &Lexicon) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (word, pron) in lexicon.entries() {
        text.push_str(&format!("{word}\t{}\n", pron.join(" ")));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lex = Lexicon::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (word, pron) = line
            .split_once('\t')
            .ok_or_else(|| malformed(path, i + 1, "expected word<TAB>phonemes"))?;
        let phones: Vec<&str> = pron.split_whitespace().collect();
        if word.trim().is_empty() || phones.is_empty() {
            return Err(malformed(path, i + 1, "empty word or pronunciation"));
        }
        lex.insert(word.trim(), &phones)?;
    }
    Ok(lex)
}

/// `id<TAB>space-separated tokens` per line; used for hypotheses and
/// references.
pub fn write_token_table(path: impl AsRef<Path>, rows: &[(String, Vec<String>)]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (id, toks) in rows {
        writeln!(f, "{id}\t{}", toks.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads `id<TAB>tokens`. Lines with three fields (a corpus manifest) use
/// the last field as the token list.
pub fn read_token_table(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<String>)>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let toks = match fields.len() {
            2 => fields[1],
            3 => fields[2],
            n => return Err(malformed(path, i + 1, format!("expected 2 or 3 tab-separated fields, found {n}"))),
        };
        rows.push((fields[0].to_string(), toks.split_whitespace().map(str::to_string).collect()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, frames: usize) -> Utterance {
        let data = (0..frames * 2).map(|i| i as f32 * 0.1 - 0.3).collect();
        Utterance {
            id: id.into(),
            features: FeatureSequence::new(frames, 2, data).unwrap(),
            words: vec!["A".into(), "B".into()],
            alignment: Some(
                ["A", SILENCE_SYMBOL, "B"]
                    .iter()
                    .cycle()
                    .take(frames)
                    .map(|s| s.to_string())
                    .collect(),
            ),
        }
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::new(vec![utt("a1", 3), utt("a2", 3)]);
        save_corpus(dir.path(), &corpus).unwrap();
        let vocab = Vocabulary::new(["A", "B"]).unwrap();
        assert_eq!(load_corpus(dir.path(), Some(&vocab)).unwrap(), corpus);
    }

    #[test]
    fn unknown_word_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &Corpus::new(vec![utt("a1", 3)])).unwrap();
        let vocab = Vocabulary::new(["A"]).unwrap();
        match load_corpus(dir.path(), Some(&vocab)) {
            Err(Error::UnknownLabel { label, line, .. }) => {
                assert_eq!(label, "B");
                assert_eq!(line, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_feature_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.feat");
        write_features(&p, &FeatureSequence::new(3, 2, vec![1.0; 6]).unwrap()).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        fs::write(&p, &bytes[..30]).unwrap();
        match read_features(&p) {
            Err(Error::Truncated { offset, expected, .. }) => {
                assert_eq!(offset, 30);
                assert_eq!(expected, 40);
            }
            other => panic!("{other:?}"),
        }
        fs::write(&p, &bytes[..10]).unwrap();
        assert!(matches!(read_features(&p), Err(Error::BadHeader { .. })));
        let mut wrong = bytes.clone();
        wrong[0] = b'Z';
        fs::write(&p, &wrong).unwrap();
        assert!(matches!(read_features(&p), Err(Error::BadHeader { .. })));
    }

    #[test]
    fn malformed_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lexicon.tsv");
        fs::write(&p, "CAT\tK AE T\nBAT\n").unwrap();
        assert!(matches!(load_lexicon(&p), Err(Error::Malformed { line: 2, .. })));
        fs::write(dir.path().join("corpus.tsv"), "only-one-field\n").unwrap();
        assert!(matches!(load_corpus(dir.path(), None), Err(Error::Malformed { line: 1, .. })));
    }

    #[test]
    fn lexicon_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lexicon.tsv");
        let mut lex = Lexicon::new();
        lex.insert("CAT", &["K", "AE", "T"]).unwrap();
        lex.insert("CAT", &["K", "AA", "T"]).unwrap();
        lex.insert("BAT", &["B", "AE", "T"]).unwrap();
        save_lexicon(&p, &lex).unwrap();
        assert_eq!(load_lexicon(&p).unwrap(), lex);
    }

    #[test]
    fn token_tables() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hyp.tsv");
        let rows = vec![("u1".to_string(), vec!["A".to_string(), "B".to_string()]), ("u2".to_string(), vec![])];
        write_token_table(&p, &rows).unwrap();
        assert_eq!(read_token_table(&p).unwrap(), rows);
    }
}
