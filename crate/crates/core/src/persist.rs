//! Dense matrix storage and the binary layout shared by every matrix file in
//! a bundle: magic `PVDM`, u32 LE rows, u32 LE cols, then row-major f32 LE.

use std::fs;
use std::path::Path;

pub const MATRIX_MAGIC: &[u8; 4] = b"PVDM";

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {reason}")]
    Corrupt { file: String, reason: String },
    #[error("{file}: checksum mismatch")]
    Checksum { file: String },
    #[error("inconsistent bundle: {0}")]
    Inconsistent(String),
}

impl PersistError {
    pub fn corrupt(file: &str, reason: impl Into<String>) -> Self {
        PersistError::Corrupt {
            file: file.to_string(),
            reason: reason.into(),
        }
    }

    /// Name of the offending file, when the error is tied to one.
    pub fn file(&self) -> Option<&str> {
        match self {
            PersistError::Io { file, .. } | PersistError::Corrupt { file, .. } | PersistError::Checksum { file } => {
                Some(file)
            }
            PersistError::Inconsistent(_) => None,
        }
    }
}

pub(crate) fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>, PersistError> {
    fs::read(dir.join(name)).map_err(|source| PersistError::Io {
        file: name.to_string(),
        source,
    })
}

pub(crate) fn read_text(dir: &Path, name: &str) -> Result<String, PersistError> {
    String::from_utf8(read_file(dir, name)?).map_err(|_| PersistError::corrupt(name, "not valid UTF-8"))
}

pub(crate) fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), PersistError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PersistError::Io {
            file: name.to_string(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| PersistError::Io {
        file: name.to_string(),
        source,
    })
}

/// Row-major `rows x cols` f32 matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], cols: usize) -> Option<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return None;
            }
            data.extend_from_slice(r.as_ref());
        }
        Some(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_matrix(MATRIX_MAGIC, self)
    }

    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self, PersistError> {
        decode_matrix(MATRIX_MAGIC, bytes, file)
    }
}

pub(crate) fn encode_matrix(magic: &[u8; 4], m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + m.data.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_matrix(magic: &[u8; 4], bytes: &[u8], file: &str) -> Result<Matrix, PersistError> {
    let mut r = ByteReader::new(bytes, file);
    r.magic(magic)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows * cols)?;
    r.finish()?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(PersistError::corrupt(file, "non-finite value"));
    }
    Ok(Matrix { rows, cols, data })
}

/// Cursor over a little-endian byte buffer that reports errors against a
/// file name.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], file: &'a str) -> Self {
        ByteReader { bytes, pos: 0, file }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.bytes.len() - self.pos < n {
            return Err(PersistError::corrupt(self.file, "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<(), PersistError> {
        let got = self.take(4)?;
        if got != magic {
            return Err(PersistError::corrupt(
                self.file,
                format!("bad magic bytes, expected {:?}", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, PersistError> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| PersistError::corrupt(self.file, "size overflow"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<(), PersistError> {
        if self.pos != self.bytes.len() {
            return Err(PersistError::corrupt(self.file, "trailing bytes"));
        }
        Ok(())
    }
}

/// One entry per line.
pub(crate) fn lines_to_text<S: AsRef<str>>(items: &[S]) -> String {
    let mut out = String::new();
    for s in items {
        out.push_str(s.as_ref());
        out.push('\n');
    }
    out
}

pub(crate) fn text_to_lines(text: &str) -> Vec<String> {
    text.lines().map(str::to_string).collect()
}
