//! Binary matrix container and JSON sidecars.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `DEFR`                           |
//! | 4      | 1    | version, always 1                      |
//! | 5      | 1    | dtype: 0 = f32, 1 = i8                 |
//! | 6      | 2    | reserved, zero                         |
//! | 8      | 8    | rows (u64)                             |
//! | 16     | 8    | cols (u64)                             |
//! | 24     | ...  | rows*cols values, row-major            |
//!
//! i8 payloads hold labels and must be +1 or -1. Concurrent writers to one
//! path are a caller error; readers are reentrant.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

pub const MAGIC: [u8; 4] = *b"DEFR";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    I8 = 1,
}

impl Dtype {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::I8),
            c => Err(Error::UnknownDtype(c)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl Payload {
    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::F32(_) => Dtype::F32,
            Payload::I8(_) => Dtype::I8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I8(v) => v.len(),
        }
    }
}

/// A matrix exactly as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub rows: u64,
    pub cols: u64,
    pub payload: Payload,
}

impl RawMatrix {
    /// Checks the shape against the payload length and the value constraints
    /// of the dtype.
    pub fn validate(&self) -> Result<()> {
        let n = element_count(self.rows, self.cols)?;
        if self.payload.len() != n {
            return Err(Error::dims("rows*cols", n, "payload length", self.payload.len()));
        }
        let cols = self.cols.max(1) as usize;
        match &self.payload {
            Payload::F32(v) => {
                if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        row: k / cols,
                        col: k % cols,
                    });
                }
            }
            Payload::I8(v) => {
                if let Some(k) = v.iter().position(|&x| x != 1 && x != -1) {
                    return Err(Error::BadLabel {
                        index: k,
                        value: v[k] as i64,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::I8(v) => v.iter().map(|&x| x as f64).collect(),
        };
        Matrix::from_vec(self.rows as usize, self.cols as usize, data)
            .expect("validated container has consistent shape")
    }
}

fn element_count(rows: u64, cols: u64) -> Result<usize> {
    rows.checked_mul(cols)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Config(format!("matrix shape {rows}x{cols} is too large")))
}

/// Serializes a container into `w`.
pub fn encode<W: Write>(m: &RawMatrix, mut w: W) -> Result<()> {
    m.validate()?;
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&MAGIC);
    header[4] = VERSION;
    header[5] = m.payload.dtype() as u8;
    header[8..16].copy_from_slice(&m.rows.to_le_bytes());
    header[16..24].copy_from_slice(&m.cols.to_le_bytes());
    let io = |e| Error::io("<container>", e);
    w.write_all(&header).map_err(io)?;
    match &m.payload {
        Payload::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        Payload::I8(v) => {
            let bytes: Vec<u8> = v.iter().map(|&x| x as u8).collect();
            w.write_all(&bytes).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads one container from `r`, consuming exactly the header plus the
/// declared payload and nothing more.
pub fn decode<R: Read>(mut r: R) -> Result<RawMatrix> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(&mut r, &mut header)?;
    if got < 4 {
        let mut magic = [0u8; 4];
        magic[..got].copy_from_slice(&header[..got]);
        return Err(Error::BadMagic(magic));
    }
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if got < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: got as u64,
        });
    }
    if header[4] != VERSION {
        return Err(Error::UnsupportedVersion(header[4]));
    }
    let dtype = Dtype::from_code(header[5])?;
    let reserved = u16::from_le_bytes([header[6], header[7]]);
    if reserved != 0 {
        return Err(Error::Reserved(reserved));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let n = element_count(rows, cols)?;
    let expected = n
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::Config(format!("matrix shape {rows}x{cols} is too large")))?;

    // Grow the buffer as bytes arrive so a lying header cannot force a huge
    // allocation up front.
    let mut bytes = Vec::new();
    let found = (&mut r)
        .take(expected as u64)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<container>", e))?;
    if found < expected {
        return Err(Error::Truncated {
            expected: expected as u64,
            found: found as u64,
        });
    }
    let payload = match dtype {
        Dtype::F32 => Payload::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::I8 => Payload::I8(bytes.iter().map(|&b| b as i8).collect()),
    };
    let m = RawMatrix {
        rows,
        cols,
        payload,
    };
    m.validate()?;
    Ok(m)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io("<container>", e)),
        }
    }
    Ok(filled)
}

pub fn write_raw(m: &RawMatrix, path: &Path) -> Result<()> {
    m.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode(m, BufWriter::new(file)).map_err(|e| with_path(e, path))
}

/// Reads a container file, rejecting bytes past the declared payload.
pub fn read_raw(path: &Path) -> Result<RawMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let m = decode(BufReader::new(file)).map_err(|e| with_path(e, path))?;
    let used = HEADER_LEN as u64 + m.rows * m.cols * m.payload.dtype().width() as u64;
    if len > used {
        return Err(Error::TrailingBytes(len - used));
    }
    Ok(m)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Writes `m` with the given dtype. f64 entries are narrowed to f32; for
/// [`Dtype::I8`] every entry must be exactly +1 or -1.
pub fn write_matrix(m: &Matrix, dtype: Dtype, path: &Path) -> Result<()> {
    m.check_finite()?;
    let payload = match dtype {
        Dtype::F32 => {
            let v: Vec<f32> = m.as_slice().iter().map(|&x| x as f32).collect();
            Payload::F32(v)
        }
        Dtype::I8 => {
            let mut v = Vec::with_capacity(m.as_slice().len());
            for (k, &x) in m.as_slice().iter().enumerate() {
                if x != 1.0 && x != -1.0 {
                    return Err(Error::BadLabel {
                        index: k,
                        value: x as i64,
                    });
                }
                v.push(x as i8);
            }
            Payload::I8(v)
        }
    };
    write_raw(
        &RawMatrix {
            rows: m.rows() as u64,
            cols: m.cols() as u64,
            payload,
        },
        path,
    )
}

pub fn read_matrix(path: &Path) -> Result<(Matrix, Dtype)> {
    let raw = read_raw(path)?;
    Ok((raw.to_matrix(), raw.payload.dtype()))
}

/// N×D image features. Finite, no all-zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        m.check_finite()?;
        if let Some(row) = m.iter_rows().position(|r| norm(r) == 0.0) {
            return Err(Error::ZeroNorm {
                what: "feature",
                row,
            });
        }
        Ok(Self(m))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (m, dtype) = read_matrix(path)?;
        if dtype != Dtype::F32 {
            return Err(Error::Config(format!(
                "{}: features must be stored as f32",
                path.display()
            )));
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self(self.0.select_rows(indices))
    }
}

/// N×C multi-label targets in {+1, -1}. Every row has at least one positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("rows*cols", rows * cols, "label data", data.len()));
        }
        if let Some(k) = data.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::BadLabel {
                index: k,
                value: data[k] as i64,
            });
        }
        let m = Self { rows, cols, data };
        if let Some(r) = (0..rows).find(|&r| !m.row(r).contains(&1)) {
            return Err(Error::NoPositive(r));
        }
        Ok(m)
    }

    /// Builds a label matrix from per-image lists of positive class indices.
    pub fn from_positives(cols: usize, positives: &[Vec<usize>]) -> Result<Self> {
        let mut data = vec![-1i8; positives.len() * cols];
        for (r, pos) in positives.iter().enumerate() {
            for &c in pos {
                if c >= cols {
                    return Err(Error::dims("classes", cols, "positive index", c));
                }
                data[r * cols + c] = 1;
            }
        }
        Self::new(positives.len(), cols, data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = read_raw(path)?;
        match raw.payload {
            Payload::I8(v) => Self::new(raw.rows as usize, raw.cols as usize, v),
            Payload::F32(_) => Err(Error::Config(format!(
                "{}: labels must be stored as i8",
                path.display()
            ))),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_raw(&self.to_raw(), path)
    }

    pub fn to_raw(&self) -> RawMatrix {
        RawMatrix {
            rows: self.rows as u64,
            cols: self.cols as u64,
            payload: Payload::I8(self.data.clone()),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_positive(&self, i: usize, class: usize) -> bool {
        self.data[i * self.cols + class] == 1
    }

    pub fn column(&self, class: usize) -> Vec<i8> {
        (0..self.rows).map(|r| self.data[r * self.cols + class]).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Features,
    Labels,
    Embeddings,
    Weights,
}

/// `<file>.meta.json` provenance record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub role: Role,
    pub classes_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Producer-specific keys (encoder name, pooling, ...), kept verbatim.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Sidecar {
    pub fn new(role: Role, classes_sha256: impl Into<String>) -> Self {
        Self {
            role,
            classes_sha256: classes_sha256.into(),
            gamma: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn path_for(matrix_path: &Path) -> PathBuf {
        let mut s = matrix_path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    pub fn write(&self, matrix_path: &Path) -> Result<()> {
        let path = Self::path_for(matrix_path);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Sidecar(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    /// `Ok(None)` when the sidecar file does not exist.
    pub fn read(matrix_path: &Path) -> Result<Option<Self>> {
        let path = Self::path_for(matrix_path);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Sidecar(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_of(m: &RawMatrix) -> Vec<u8> {
        let mut buf = Vec::new();
        encode(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn float_file_size() {
        let m = RawMatrix {
            rows: 2,
            cols: 3,
            payload: Payload::F32(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        };
        let b = bytes_of(&m);
        assert_eq!(b.len(), 48);
        assert_eq!(&b[..8], b"DEFR\x01\x00\x00\x00");
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &3u64.to_le_bytes());
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
    }

    #[test]
    fn label_layout() {
        let m = RawMatrix {
            rows: 1,
            cols: 1,
            payload: Payload::I8(vec![1]),
        };
        let b = bytes_of(&m);
        assert_eq!(b.len(), 25);
        assert_eq!(b[5], 1);
        assert_eq!(*b.last().unwrap(), 0x01);

        let neg = bytes_of(&RawMatrix {
            rows: 1,
            cols: 1,
            payload: Payload::I8(vec![-1]),
        });
        assert_eq!(neg[24], 0xff);
    }

    #[test]
    fn nan_is_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap();
        let err = write_matrix(&m, Dtype::F32, &dir.path().join("x.bin")).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
        let raw = RawMatrix {
            rows: 1,
            cols: 1,
            payload: Payload::F32(vec![f32::INFINITY]),
        };
        assert!(encode(&raw, Vec::new()).is_err());
    }

    #[test]
    fn non_label_values_rejected_for_i8() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let err = write_matrix(&m, Dtype::I8, &dir.path().join("y.bin")).unwrap_err();
        assert!(matches!(err, Error::BadLabel { index: 1, value: 0 }));
    }

    #[test]
    fn bad_magic() {
        let mut b = bytes_of(&RawMatrix {
            rows: 1,
            cols: 1,
            payload: Payload::F32(vec![0.5]),
        });
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&b[..]), Err(Error::BadMagic(m)) if &m == b"XXXX"));
        assert!(matches!(decode(&b"XX"[..]), Err(Error::BadMagic(_))));
    }

    #[test]
    fn bad_version_and_dtype() {
        let good = bytes_of(&RawMatrix {
            rows: 1,
            cols: 1,
            payload: Payload::F32(vec![0.5]),
        });
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(decode(&b[..]), Err(Error::UnsupportedVersion(2))));
        let mut b = good.clone();
        b[5] = 7;
        assert!(matches!(decode(&b[..]), Err(Error::UnknownDtype(7))));
        let mut b = good;
        b[6] = 1;
        assert!(matches!(decode(&b[..]), Err(Error::Reserved(1))));
    }

    #[test]
    fn truncated_payload() {
        let m = RawMatrix {
            rows: 5,
            cols: 10,
            payload: Payload::F32(vec![0.25; 50]),
        };
        let mut b = bytes_of(&m);
        b[8..16].copy_from_slice(&10u64.to_le_bytes());
        match decode(&b[..]) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, 400);
                assert_eq!(found, 200);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(matches!(decode(&b[..10]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn decode_stops_at_declared_length() {
        let m = RawMatrix {
            rows: 1,
            cols: 2,
            payload: Payload::I8(vec![1, -1]),
        };
        let mut b = bytes_of(&m);
        b.extend_from_slice(b"tail");
        let mut cursor = std::io::Cursor::new(&b);
        assert_eq!(decode(&mut cursor).unwrap(), m);
        assert_eq!(cursor.position(), 26);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        std::fs::write(&p, &b).unwrap();
        assert!(matches!(read_raw(&p), Err(Error::TrailingBytes(4))));
    }

    #[test]
    fn i8_out_of_range_on_read() {
        let mut b = bytes_of(&RawMatrix {
            rows: 1,
            cols: 2,
            payload: Payload::I8(vec![1, -1]),
        });
        b[25] = 0;
        assert!(matches!(decode(&b[..]), Err(Error::BadLabel { index: 1, value: 0 })));
    }

    #[test]
    fn label_matrix_requires_a_positive_per_row() {
        assert!(matches!(
            LabelMatrix::new(2, 2, vec![1, -1, -1, -1]),
            Err(Error::NoPositive(1))
        ));
        let l = LabelMatrix::from_positives(3, &[vec![0], vec![1, 2]]).unwrap();
        assert_eq!(l.row(1), &[-1, 1, 1]);
        assert_eq!(l.column(2), vec![-1, 1]);
    }

    #[test]
    fn features_reject_zero_rows() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            FeatureMatrix::new(m),
            Err(Error::ZeroNorm { row: 1, .. })
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        assert_eq!(Sidecar::read(&p).unwrap(), None);
        let mut s = Sidecar::new(Role::Weights, "ab");
        s.gamma = Some(100.0);
        s.extra.insert("encoder_name".into(), "text-encoder".into());
        s.write(&p).unwrap();
        assert!(dir.path().join("w.bin.meta.json").exists());
        assert_eq!(Sidecar::read(&p).unwrap(), Some(s));

        let text = std::fs::read_to_string(dir.path().join("w.bin.meta.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["role"], "weights");
        assert_eq!(v["gamma"], 100.0);
    }
}
