//! Stage one: dense top-K retrieval of posts by title-vector cosine.

use std::cmp::Ordering;
use std::path::Path;

use crate::persist::{self, Matrix, PersistError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("{vectors} vectors but {ids} post ids")]
    LengthMismatch { vectors: usize, ids: usize },
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    /// Row of the post in the index, which is also its insertion order.
    pub position: usize,
    pub post_id: String,
    pub similarity: f64,
}

/// Anything that can answer top-k cosine queries over the post titles.
pub trait VectorIndex: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    /// Whether results always equal an exhaustive scan.
    fn is_exact(&self) -> bool;

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, RetrievalError>;
}

/// Exhaustive index over unit-normalized rows. A search is one dot product
/// per row; ties keep insertion order and all-zero rows rank last.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    rows: Matrix,
    post_ids: Vec<String>,
    zero_rows: Vec<bool>,
}

fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl DenseIndex {
    pub fn build(vectors: &Matrix, post_ids: Vec<String>) -> Result<Self, RetrievalError> {
        if vectors.rows() != post_ids.len() {
            return Err(RetrievalError::LengthMismatch {
                vectors: vectors.rows(),
                ids: post_ids.len(),
            });
        }
        let dim = vectors.cols();
        let mut data = Vec::with_capacity(vectors.rows() * dim);
        let mut zero_rows = Vec::with_capacity(vectors.rows());
        for row in vectors.iter_rows() {
            match normalize(row) {
                Some(n) => {
                    data.extend_from_slice(&n);
                    zero_rows.push(false);
                }
                None => {
                    data.extend(std::iter::repeat_n(0.0, dim));
                    zero_rows.push(true);
                }
            }
        }
        Ok(DenseIndex {
            rows: Matrix::from_vec(post_ids.len(), dim, data),
            post_ids,
            zero_rows,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], post_ids: Vec<String>) -> Result<Self, RetrievalError> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != dim) {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                found: bad.as_ref().len(),
            });
        }
        let m = Matrix::from_rows(rows, dim).expect("row lengths checked");
        Self::build(&m, post_ids)
    }

    pub fn post_ids(&self) -> &[String] {
        &self.post_ids
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn is_zero_row(&self, position: usize) -> bool {
        self.zero_rows[position]
    }

    pub fn retrieve(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, RetrievalError> {
        if self.post_ids.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.len() != self.rows.cols() {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.rows.cols(),
                found: query.len(),
            });
        }
        let q = normalize(query);
        let mut scored: Vec<(usize, f64)> = (0..self.post_ids.len())
            .map(|i| {
                let sim = match &q {
                    Some(q) if !self.zero_rows[i] => dot64(q, self.rows.row(i)).clamp(-1.0, 1.0),
                    _ => 0.0,
                };
                (i, sim)
            })
            .collect();

        let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            self.zero_rows[a.0]
                .cmp(&self.zero_rows[b.0])
                .then_with(|| b.1.total_cmp(&a.1))
                .then_with(|| a.0.cmp(&b.0))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .map(|(position, similarity)| Hit {
                position,
                post_id: self.post_ids[position].clone(),
                similarity,
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<(), PersistError> {
        persist::write_file(dir, "index.bin", &self.rows.to_bytes())?;
        persist::write_file(dir, "post_ids.txt", persist::lines_to_text(&self.post_ids).as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, PersistError> {
        let rows = Matrix::from_bytes(&persist::read_file(dir, "index.bin")?, "index.bin")?;
        let post_ids = persist::text_to_lines(&persist::read_text(dir, "post_ids.txt")?);
        if rows.rows() != post_ids.len() {
            return Err(PersistError::corrupt(
                "index.bin",
                format!("{} rows but {} post ids", rows.rows(), post_ids.len()),
            ));
        }
        let mut zero_rows = Vec::with_capacity(rows.rows());
        for (i, row) in rows.iter_rows().enumerate() {
            let norm = dot64(row, row).sqrt();
            let is_zero = row.iter().all(|&x| x == 0.0);
            if !is_zero && (norm - 1.0).abs() > 1e-5 {
                return Err(PersistError::corrupt(
                    "index.bin",
                    format!("row {i} is not unit length"),
                ));
            }
            zero_rows.push(is_zero);
        }
        Ok(DenseIndex {
            rows,
            post_ids,
            zero_rows,
        })
    }
}

impl VectorIndex for DenseIndex {
    fn len(&self) -> usize {
        self.post_ids.len()
    }

    fn dim(&self) -> usize {
        self.rows.cols()
    }

    fn is_exact(&self) -> bool {
        true
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, RetrievalError> {
        self.retrieve(query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn index(rows: &[Vec<f32>]) -> DenseIndex {
        DenseIndex::from_rows(rows, ids(rows.len())).unwrap()
    }

    #[test]
    fn rows_are_normalized() {
        let idx = index(&[vec![3.0, 4.0], vec![0.0, 2.0], vec![1.0, 1.0]]);
        assert_eq!(idx.len(), 3);
        for r in idx.rows().iter_rows() {
            assert!((dot64(r, r).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_row_flagged_and_last() {
        let idx = index(&[vec![0.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0]]);
        assert!(idx.is_zero_row(0));
        let hits = idx.retrieve(&[1.0, 0.0], 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.position).collect::<Vec<_>>(), [2, 1, 0]);
        assert_eq!(hits[1].similarity, -1.0);
        assert_eq!(hits[2].similarity, 0.0);
    }

    #[test]
    fn identity_query_first() {
        let rows = vec![vec![0.2, 0.9, -0.1], vec![0.5, 0.5, 0.5], vec![-0.3, 0.1, 0.8]];
        let idx = index(&rows);
        let hits = idx.retrieve(&rows[2], 1).unwrap();
        assert_eq!(hits[0].post_id, "p2");
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k_larger_than_index() {
        let idx = index(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let hits = idx.retrieve(&[0.0, 1.0], 10).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits[0].similarity >= hits[1].similarity);
    }

    #[test]
    fn ties_keep_insertion_order() {
        let idx = index(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, 1.0]]);
        let hits = idx.retrieve(&[1.0, 1.0], 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.position).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            DenseIndex::from_rows(&[vec![1.0]], ids(2)),
            Err(RetrievalError::LengthMismatch { .. })
        ));
        let empty = DenseIndex::build(&Matrix::zeros(0, 4), vec![]).unwrap();
        assert_eq!(empty.retrieve(&[0.0; 4], 1), Err(RetrievalError::EmptyIndex));
        let idx = index(&[vec![1.0, 0.0]]);
        assert!(matches!(
            idx.retrieve(&[1.0], 1),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
        assert_eq!(idx.retrieve(&[1.0, 0.0], 0), Err(RetrievalError::ZeroK));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let rows = vec![vec![0.3, -0.7], vec![0.0, 0.0], vec![5.0, 1.0]];
        let a = index(&rows);
        let b = index(&rows);
        assert_eq!(a.rows().to_bytes(), b.rows().to_bytes());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = index(&[vec![0.3, -0.7], vec![0.0, 0.0], vec![5.0, 1.0]]);
        idx.save(dir.path()).unwrap();
        assert_eq!(DenseIndex::load(dir.path()).unwrap(), idx);
    }
}
