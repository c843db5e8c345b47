//! Single-file model format.
//!
//! ```text
//! magic        8 bytes  "A2WMODEL"
//! version      u32
//! kind         u8       0 word-ctc, 1 phoneme-ctc, 2 frame-classifier
//! layers       u32
//! input_dim    u32
//! hidden_dim   u32 × layers
//! halvings     u32 × layers   (down-sampling before each layer)
//! lookahead    u32
//! output_dim   u32
//! labels       u32 count, then per label: u32 byte length + UTF-8 bytes
//! parameters   f64 little-endian, per layer: input weights, recurrent
//!              weights, bias (row-major); then output weights, output bias
//! ```
//!
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use super::{LstmLayer, ModelKind, Network};
use crate::error::{Error, Result};
use crate::numerics::Mat;

pub const MODEL_MAGIC: &[u8; 8] = b"A2WMODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.parameter_count());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.tag());
        put_u32(&mut out, self.layers.len());
        put_u32(&mut out, self.input_dim());
        for l in &self.layers {
            put_u32(&mut out, l.hidden_dim());
        }
        for &d in &self.downsample {
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_u32(&mut out, self.lookahead());
        put_u32(&mut out, self.output_dim());
        put_u32(&mut out, self.labels.len());
        for label in &self.labels {
            put_u32(&mut out, label.len());
            out.extend_from_slice(label.as_bytes());
        }
        for t in self.parameters() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(8, "magic")? != MODEL_MAGIC {
            return Err(r.bad("not a model file (magic mismatch)"));
        }
        let version = r.u32("version")?;
        if version != MODEL_FORMAT_VERSION {
            return Err(r.bad(&format!("unsupported format version {version}")));
        }
        let tag = r.take(1, "kind")?[0];
        let kind = ModelKind::from_tag(tag).ok_or_else(|| r.bad(&format!("unknown kind tag {tag}")))?;
        let n_layers = r.u32("layer count")? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(r.bad(&format!("implausible layer count {n_layers}")));
        }
        let input_dim = r.u32("input dim")? as usize;
        let hidden: Vec<usize> = (0..n_layers)
            .map(|_| r.u32("hidden dim").map(|v| v as usize))
            .collect::<Result<_>>()?;
        let downsample: Vec<u32> = (0..n_layers).map(|_| r.u32("down-sampling")).collect::<Result<_>>()?;
        let lookahead = r.u32("lookahead")? as usize;
        if lookahead != kind.lookahead() {
            return Err(r.bad(&format!("lookahead {lookahead} does not match kind {kind}")));
        }
        let output_dim = r.u32("output dim")? as usize;
        let n_labels = r.u32("label count")? as usize;
        if n_labels + 1 != output_dim {
            return Err(r.bad(&format!(
                "{n_labels} labels inconsistent with output dimension {output_dim}"
            )));
        }
        let mut labels = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            let len = r.u32("label length")? as usize;
            let raw = r.take(len, "label")?;
            let label = std::str::from_utf8(raw).map_err(|_| r.bad("label is not UTF-8"))?;
            labels.push(label.to_string());
        }

        let mut layers = Vec::with_capacity(n_layers);
        let mut in_dim = input_dim;
        for &h in &hidden {
            let wx = r.mat(4 * h, in_dim)?;
            let wh = r.mat(4 * h, h)?;
            let bias = r.f64s(4 * h)?;
            layers.push(LstmLayer::from_parts(wx, wh, bias)?);
            in_dim = h;
        }
        let output_weight = r.mat(output_dim, in_dim)?;
        let output_bias = r.f64s(output_dim)?;
        if r.pos != bytes.len() {
            return Err(r.bad(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Network::from_parts(kind, layers, downsample, output_weight, output_bias, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("dimension fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, message: &str) -> Error {
        Error::BadHeader {
            file: self.origin.to_path_buf(),
            message: format!("{message} (at byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize, _what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                file: self.origin.to_path_buf(),
                offset: self.bytes.len() as u64,
                expected: (self.pos + n) as u64,
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8, "parameters")?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        Mat::from_vec(rows, cols, self.f64s(rows * cols)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;

    fn net(kind: ModelKind, factor: usize) -> Network {
        let labels = vec!["CAT".to_string(), "BAT".to_string(), "Ünï".to_string()];
        Network::new(&NetworkSpec::new(kind, 3, 4, 3, factor, labels).unwrap(), 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (kind, factor) in [
            (ModelKind::WordCtc, 4),
            (ModelKind::PhonemeCtc, 1),
            (ModelKind::FrameClassifier, 1),
        ] {
            let n = net(kind, factor);
            let bytes = n.to_bytes();
            let back = Network::from_bytes(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back, n);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = net(ModelKind::WordCtc, 2).to_bytes();
        let p = Path::new("mem");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Network::from_bytes(&bad, p), Err(Error::BadHeader { .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Network::from_bytes(&bad, p), Err(Error::BadHeader { .. })));
        let cut = &bytes[..bytes.len() - 3];
        match Network::from_bytes(cut, p) {
            Err(Error::Truncated { offset, expected, .. }) => {
                assert_eq!(offset, cut.len() as u64);
                assert_eq!(expected, bytes.len() as u64);
            }
            other => panic!("{other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Network::from_bytes(&long, p), Err(Error::BadHeader { .. })));
    }
}
