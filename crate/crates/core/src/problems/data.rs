//! Dataset ingestion (IDX, LIBSVM), label corruption and synthetic data.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::rng::mix_seed;

const IDX_LABELS: u32 = 0x0000_0801;
const IDX_IMAGES: u32 = 0x0000_0803;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        line: None,
        message: message.into(),
    }
}

/// Contents of an IDX file of unsigned bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// `count` images of `rows x cols` pixels scaled to `[0, 1]`.
    Images {
        rows: usize,
        cols: usize,
        pixels: Vec<Vec<f64>>,
    },
    Labels(Vec<u8>),
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let word = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| parse_err(off, "truncated header"))
    };
    let magic = word(0)?;
    match magic {
        IDX_LABELS => {
            let count = word(4)? as usize;
            let body = &bytes[8..];
            if body.len() < count {
                return Err(parse_err(bytes.len(), format!("expected {count} labels, found {}", body.len())));
            }
            if body.len() > count {
                return Err(parse_err(8 + count, "trailing bytes after label data"));
            }
            Ok(IdxData::Labels(body.to_vec()))
        }
        IDX_IMAGES => {
            let count = word(4)? as usize;
            let rows = word(8)? as usize;
            let cols = word(12)? as usize;
            let size = rows
                .checked_mul(cols)
                .and_then(|p| p.checked_mul(count))
                .ok_or_else(|| parse_err(4, "image dimensions overflow"))?;
            let body = &bytes[16..];
            if body.len() < size {
                return Err(parse_err(bytes.len(), format!("expected {size} pixel bytes, found {}", body.len())));
            }
            if body.len() > size {
                return Err(parse_err(16 + size, "trailing bytes after image data"));
            }
            let per = rows * cols;
            let pixels = (0..count)
                .map(|k| body[k * per..(k + 1) * per].iter().map(|&v| f64::from(v) / 255.0).collect())
                .collect();
            Ok(IdxData::Images { rows, cols, pixels })
        }
        other => Err(parse_err(0, format!("bad magic 0x{other:08x}"))),
    }
}

pub fn load_idx(path: &Path) -> Result<IdxData> {
    parse_idx(&fs::read(path)?)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Pixels are quantised back to bytes (`round(255 v)`).
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[Vec<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    for v in [pixels.len(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for img in pixels {
        out.extend(img.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

/// Sparse rows with 0-based feature indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseData {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<f64>,
    pub dim: usize,
}

impl SparseData {
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(k, x) in &self.rows[i] {
            v[k] = x;
        }
        v
    }
}

/// Parses LIBSVM text. `dims` caps the feature count; without it the
/// largest index seen sets the dimension.
pub fn parse_libsvm(text: &str, dims: Option<usize>) -> Result<SparseData> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    let mut offset = 0usize;
    for (ln, raw) in text.split_inclusive('\n').enumerate() {
        let line_start = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        let content = line.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let err = |col: usize, msg: String| Error::Parse {
            offset: (line_start + col) as u64,
            line: Some(ln + 1),
            message: msg,
        };
        let mut tokens = token_spans(content);
        let (col, label_tok) = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(col, format!("non-numeric label {label_tok:?}")))?;
        let mut row = Vec::new();
        let mut last = 0usize;
        for (col, tok) in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(col, format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(col, format!("non-numeric feature index {idx:?}")))?;
            if idx == 0 {
                return Err(err(col, "feature indices are 1-based".into()));
            }
            if idx <= last {
                return Err(err(col, format!("feature index {idx} not increasing")));
            }
            if let Some(d) = dims {
                if idx > d {
                    return Err(err(col, format!("feature index {idx} exceeds dimension {d}")));
                }
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(col + tok.len() - val.len(), format!("non-numeric value {val:?}")))?;
            last = idx;
            row.push((idx - 1, val));
        }
        max_index = max_index.max(last);
        rows.push(row);
        labels.push(label);
    }
    Ok(SparseData {
        rows,
        labels,
        dim: dims.unwrap_or(max_index),
    })
}

fn token_spans(s: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut pos = 0;
    s.split(|c: char| c == ' ' || c == '\t').filter_map(move |t| {
        let start = pos;
        pos += t.len() + 1;
        (!t.is_empty()).then_some((start, t))
    })
}

pub fn load_libsvm(path: &Path, dims: Option<usize>) -> Result<SparseData> {
    let text = fs::read_to_string(path)?;
    parse_libsvm(&text, dims)
}

pub fn write_libsvm(mut w: impl Write, data: &SparseData) -> Result<()> {
    for (row, label) in data.rows.iter().zip(&data.labels) {
        write!(w, "{label}")?;
        for &(k, v) in row {
            write!(w, " {}:{v}", k + 1)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Replaces each label, with probability `p_tilde`, by a uniform draw from
/// `0..classes` (which may equal the original). Returns the new labels and
/// the flags of replaced positions.
pub fn corrupt_labels(labels: &[u8], p_tilde: f64, classes: u8, seed: u64) -> Result<(Vec<u8>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&p_tilde) {
        return Err(invalid(format!("corruption probability must lie in [0, 1], got {p_tilde}")));
    }
    let mut rng = crate::rng::stream(mix_seed(seed, 0xC0), crate::rng::Stream::UpperSampling);
    let mut out = labels.to_vec();
    let mut flags = vec![false; labels.len()];
    for (l, f) in out.iter_mut().zip(flags.iter_mut()) {
        if rng.random::<f64>() < p_tilde {
            *f = true;
            *l = rng.random_range(0..classes);
        }
    }
    Ok((out, flags))
}

/// Labelled dense samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn take(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            features: self.features[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
        }
    }
}

/// Ten noisy digit-like classes on a `side x side` grid, pixel values in
/// `[0, 1]`. Class prototypes depend only on `side`; `seed` drives the noise.
pub fn synthetic_digits(seed: u64, count: usize, side: usize) -> Dataset {
    let dim = side * side;
    let mut proto_rng = crate::rng::stream(0x5EED_D161 ^ side as u64, crate::rng::Stream::UpperSampling);
    let prototypes: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            // A few bright strokes on a dark background.
            let mut img = vec![0.0; dim];
            for _ in 0..3 {
                let r0 = proto_rng.random_range(0..side);
                let c0 = proto_rng.random_range(0..side);
                let horizontal = proto_rng.random::<bool>();
                for t in 0..side {
                    let (r, c) = if horizontal { (r0, t) } else { (t, c0) };
                    if proto_rng.random::<f64>() < 0.8 {
                        img[r * side + c] = 1.0;
                    }
                }
            }
            img
        })
        .collect();
    let mut rng = crate::rng::stream(mix_seed(seed, 0xD1), crate::rng::Stream::LowerSampling);
    let mut features = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let c = rng.random_range(0..10u8);
        let img = prototypes[c as usize]
            .iter()
            .map(|&p| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                (p + 0.35 * noise).clamp(0.0, 1.0)
            })
            .collect();
        features.push(img);
        labels.push(c);
    }
    Dataset { features, labels }
}

/// Gaussian-mixture classification data: `classes` centres in `dim`
/// dimensions with unit noise; `separation` scales the centres.
pub fn synthetic_classes(seed: u64, count: usize, dim: usize, classes: u8, separation: f64) -> Dataset {
    let mut crng = crate::rng::stream(mix_seed(0xCE17, dim as u64 * 131 + classes as u64), crate::rng::Stream::UpperSampling);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| separation * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut crng) / (dim as f64).sqrt())
                .collect()
        })
        .collect();
    let mut rng = crate::rng::stream(mix_seed(seed, 0xC1), crate::rng::Stream::LowerSampling);
    let mut features = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let c = rng.random_range(0..classes);
        let x: Vec<f64> = centres[c as usize]
            .iter()
            .map(|&m| {
                let e: f64 = StandardNormal.sample(&mut rng);
                m + e / (dim as f64).sqrt()
            })
            .collect();
        features.push(x);
        labels.push(c);
    }
    Dataset { features, labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip() {
        let labels = vec![3u8, 1, 4, 1, 5, 9];
        assert_eq!(parse_idx(&encode_idx_labels(&labels)).unwrap(), IdxData::Labels(labels));
        let pixels = vec![vec![0.0, 1.0, 128.0 / 255.0, 7.0 / 255.0]; 3];
        let back = parse_idx(&encode_idx_images(2, 2, &pixels)).unwrap();
        assert_eq!(
            back,
            IdxData::Images {
                rows: 2,
                cols: 2,
                pixels
            }
        );
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let bytes = encode_idx_images(2, 2, &[vec![0.5; 4]]);
        let e = parse_idx(&bytes[..4]).unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 4, .. }), "{e}");
        let e = parse_idx(&[0, 0, 9, 9, 0, 0, 0, 0]).unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 0, .. }));
        let e = parse_idx(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(e, Error::Parse { offset, .. } if offset == bytes.len() as u64 - 1));
    }

    #[test]
    fn libsvm_fixture() {
        let text = "+1 1:0.5 3:2\n-1 2:1e-1\n# comment\n1 1:1 2:2 3:3 # tail\n";
        let d = parse_libsvm(text, None).unwrap();
        assert_eq!(d.dim, 3);
        assert_eq!(d.labels, vec![1.0, -1.0, 1.0]);
        assert_eq!(d.rows[0], vec![(0, 0.5), (2, 2.0)]);
        assert_eq!(d.rows[1], vec![(1, 0.1)]);
        assert_eq!(d.dense_row(2), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn libsvm_malformed() {
        let e = parse_libsvm("1 1:2\n1 x:3\n", None).unwrap_err();
        assert_eq!(
            e,
            Error::Parse {
                offset: 8,
                line: Some(2),
                message: "non-numeric feature index \"x\"".into()
            }
        );
        let e = parse_libsvm("1 4:1\n", Some(3)).unwrap_err();
        assert!(matches!(e, Error::Parse { line: Some(1), offset: 2, .. }));
        assert!(parse_libsvm("abc 1:1\n", None).is_err());
        assert!(parse_libsvm("1 0:1\n", None).is_err());
        assert!(parse_libsvm("1 2:1 1:1\n", None).is_err());
        assert!(parse_libsvm("1 1:z\n", None).is_err());
    }

    #[test]
    fn libsvm_round_trip() {
        let d = parse_libsvm("1 1:0.25 4:-3\n0 2:7\n", Some(5)).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&mut buf, &d).unwrap();
        assert_eq!(parse_libsvm(std::str::from_utf8(&buf).unwrap(), Some(5)).unwrap(), d);
    }

    #[test]
    fn corruption_extremes() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let (l, f) = corrupt_labels(&labels, 0.0, 10, 1).unwrap();
        assert_eq!(l, labels);
        assert!(f.iter().all(|x| !x));
        let (_, f) = corrupt_labels(&labels, 1.0, 10, 1).unwrap();
        assert!(f.iter().all(|x| *x));
        assert!(corrupt_labels(&labels, 1.5, 10, 1).is_err());
    }

    #[test]
    fn corruption_rate_in_binomial_band() {
        let labels = vec![0u8; 100_000];
        let (_, f) = corrupt_labels(&labels, 0.5, 10, 7).unwrap();
        let k = f.iter().filter(|x| **x).count() as f64;
        let sd = (100_000.0f64 * 0.25).sqrt();
        assert!((k - 50_000.0).abs() <= 4.0 * sd);
    }

    #[test]
    fn synthetic_digits_are_deterministic() {
        let a = synthetic_digits(3, 50, 8);
        assert_eq!(a, synthetic_digits(3, 50, 8));
        assert_ne!(a, synthetic_digits(4, 50, 8));
        assert!(a.features.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.dim(), 64);
    }
}
