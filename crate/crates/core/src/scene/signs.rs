//! Traffic-sign retrieval by cosine similarity against a database of
//! view-augmented sign embeddings.
//!
//! Binary matrix file: `N` and `dim` as little-endian u32, then
//! `VIEWS_PER_SIGN * N` rows of `dim` little-endian f32. The sidecar table
//! has one `category<TAB>description` line per sign, in row order.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{io_err, SceneError};

pub const SIGN_EMBEDDING_DIM: usize = 512;
/// Original view plus two perspective-transformed views.
pub const VIEWS_PER_SIGN: usize = 3;
pub const DEFAULT_SIGN_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignEntry {
    pub category: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignDatabase {
    entries: Vec<SignEntry>,
    /// `VIEWS_PER_SIGN * entries.len()` unit rows, flattened.
    rows: Vec<f32>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignMatch {
    pub category: String,
    pub description: String,
    pub score: f64,
    pub row: usize,
}

fn normalized(v: &[f32]) -> Result<Vec<f32>, SceneError> {
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(SceneError::ZeroNormEmbedding);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

impl SignDatabase {
    /// `rows` holds `VIEWS_PER_SIGN` embeddings per entry, consecutive.
    /// Rows are unit-normalized here.
    pub fn new(
        entries: Vec<SignEntry>,
        rows: &[Vec<f32>],
        threshold: f64,
    ) -> Result<Self, SceneError> {
        if rows.len() != entries.len() * VIEWS_PER_SIGN {
            return Err(SceneError::Format {
                what: "sign database",
                message: format!(
                    "{} embedding rows for {} signs (expected {} per sign)",
                    rows.len(),
                    entries.len(),
                    VIEWS_PER_SIGN
                ),
            });
        }
        let mut flat = Vec::with_capacity(rows.len() * SIGN_EMBEDDING_DIM);
        for r in rows {
            if r.len() != SIGN_EMBEDDING_DIM {
                return Err(SceneError::EmbeddingDim {
                    expected: SIGN_EMBEDDING_DIM,
                    found: r.len(),
                });
            }
            flat.extend(normalized(r)?);
        }
        Ok(Self {
            entries,
            rows: flat,
            threshold,
        })
    }

    pub fn entries(&self) -> &[SignEntry] {
        &self.entries
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len() / SIGN_EMBEDDING_DIM
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * SIGN_EMBEDDING_DIM..(i + 1) * SIGN_EMBEDDING_DIM]
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

/// Best-matching sign for a crop embedding, if its cosine similarity is
/// strictly above the database threshold. Ties go to the lowest row.
pub fn classify_sign(
    crop_embedding: &[f32],
    db: &SignDatabase,
) -> Result<Option<SignMatch>, SceneError> {
    if crop_embedding.len() != SIGN_EMBEDDING_DIM {
        return Err(SceneError::EmbeddingDim {
            expected: SIGN_EMBEDDING_DIM,
            found: crop_embedding.len(),
        });
    }
    let q = normalized(crop_embedding)?;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..db.num_rows() {
        let score: f64 = db
            .row(i)
            .iter()
            .zip(&q)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        let score = score.clamp(-1.0, 1.0);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    Ok(best.filter(|&(_, s)| s > db.threshold).map(|(row, score)| {
        let entry = &db.entries[row / VIEWS_PER_SIGN];
        SignMatch {
            category: entry.category.clone(),
            description: entry.description.clone(),
            score,
            row,
        }
    }))
}

pub fn write_sign_db(
    db: &SignDatabase,
    matrix_path: impl AsRef<Path>,
    table_path: impl AsRef<Path>,
) -> Result<(), SceneError> {
    let matrix_path = matrix_path.as_ref();
    let table_path = table_path.as_ref();
    let mut out = Vec::with_capacity(8 + db.rows.len() * 4);
    out.extend_from_slice(&(db.entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&(SIGN_EMBEDDING_DIM as u32).to_le_bytes());
    for x in &db.rows {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(matrix_path, out).map_err(io_err(matrix_path))?;
    let mut table = String::new();
    for e in &db.entries {
        table.push_str(&e.category);
        table.push('\t');
        table.push_str(&e.description);
        table.push('\n');
    }
    fs::write(table_path, table).map_err(io_err(table_path))
}

pub fn read_sign_db(
    matrix_path: impl AsRef<Path>,
    table_path: impl AsRef<Path>,
    threshold: f64,
) -> Result<SignDatabase, SceneError> {
    let matrix_path = matrix_path.as_ref();
    let table_path = table_path.as_ref();
    let bytes = fs::read(matrix_path).map_err(io_err(matrix_path))?;
    let bad = |message: String| SceneError::Format {
        what: "sign database",
        message: format!("{}: {message}", matrix_path.display()),
    };
    if bytes.len() < 8 {
        return Err(bad("missing header".into()));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if dim != SIGN_EMBEDDING_DIM {
        return Err(bad(format!(
            "embedding dim {dim}, expected {SIGN_EMBEDDING_DIM}"
        )));
    }
    let expected = n * VIEWS_PER_SIGN * dim * 4;
    if bytes.len() - 8 != expected {
        return Err(bad(format!(
            "expected {expected} data bytes, found {}",
            bytes.len() - 8
        )));
    }
    let rows: Vec<Vec<f32>> = bytes[8..]
        .chunks_exact(dim * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        })
        .collect();

    let text = fs::read_to_string(table_path).map_err(io_err(table_path))?;
    let mut entries = Vec::with_capacity(n);
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let (category, description) = line.split_once('\t').ok_or_else(|| SceneError::Record {
            line: i + 1,
            message: format!(
                "{}: expected category<TAB>description",
                table_path.display()
            ),
        })?;
        entries.push(SignEntry {
            category: category.trim().to_string(),
            description: description.trim().to_string(),
        });
    }
    if entries.len() != n {
        return Err(bad(format!(
            "matrix holds {n} signs but the table lists {}",
            entries.len()
        )));
    }
    SignDatabase::new(entries, &rows, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(i: usize) -> Vec<f32> {
        let mut v = vec![0.0; SIGN_EMBEDDING_DIM];
        v[i] = 1.0;
        v
    }

    fn orthogonal_db(n: usize) -> SignDatabase {
        let entries = (0..n)
            .map(|i| SignEntry {
                category: format!("sign{i}"),
                description: format!("description {i}"),
            })
            .collect();
        let rows: Vec<_> = (0..n * VIEWS_PER_SIGN).map(basis).collect();
        SignDatabase::new(entries, &rows, DEFAULT_SIGN_THRESHOLD).unwrap()
    }

    #[test]
    fn exact_row_query() {
        let db = orthogonal_db(10);
        let m = classify_sign(&basis(5), &db).unwrap().unwrap();
        assert_eq!(m.category, "sign1");
        assert_eq!(m.row, 5);
        assert_eq!(m.score, 1.0);
    }

    #[test]
    fn below_threshold_is_none() {
        let db = orthogonal_db(4);
        // equal mix of two rows: cosine 1/sqrt(2) ~ 0.707 with each
        let mut q = basis(0);
        q[1] = 1.0;
        assert!(classify_sign(&q, &db).unwrap().is_some());
        let db = db.with_threshold(0.75);
        assert!(classify_sign(&q, &db).unwrap().is_none());
        // unrelated direction
        assert!(classify_sign(&basis(400), &orthogonal_db(4))
            .unwrap()
            .is_none());
    }

    #[test]
    fn ties_go_to_lowest_row() {
        let db = orthogonal_db(4).with_threshold(0.1);
        let mut q = basis(7);
        q[2] = 1.0;
        assert_eq!(classify_sign(&q, &db).unwrap().unwrap().row, 2);
    }

    #[test]
    fn bad_queries() {
        let db = orthogonal_db(2);
        assert!(matches!(
            classify_sign(&[0.0; 512], &db),
            Err(SceneError::ZeroNormEmbedding)
        ));
        assert!(matches!(
            classify_sign(&[1.0; 3], &db),
            Err(SceneError::EmbeddingDim { .. })
        ));
    }

    #[test]
    fn rows_are_unit_norm() {
        let entries = vec![SignEntry {
            category: "stop".into(),
            description: "Stop and give way".into(),
        }];
        let rows: Vec<Vec<f32>> = (0..3)
            .map(|k| {
                (0..512)
                    .map(|i| ((i * (k + 3)) % 17) as f32 - 4.0)
                    .collect()
            })
            .collect();
        let db = SignDatabase::new(entries, &rows, 0.6).unwrap();
        for i in 0..db.num_rows() {
            let n: f64 = db.row(i).iter().map(|&x| f64::from(x) * f64::from(x)).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn file_round_trip() {
        let db = orthogonal_db(3);
        let dir = tempfile::tempdir().unwrap();
        let (m, t) = (dir.path().join("signs.bin"), dir.path().join("signs.tsv"));
        write_sign_db(&db, &m, &t).unwrap();
        assert_eq!(read_sign_db(&m, &t, DEFAULT_SIGN_THRESHOLD).unwrap(), db);
        fs::write(&t, "only one\tline\n").unwrap();
        assert!(read_sign_db(&m, &t, DEFAULT_SIGN_THRESHOLD).is_err());
    }

    proptest! {
        #[test]
        fn scale_invariant_and_bounded(
            q in prop::collection::vec(-1.0f32..1.0, SIGN_EMBEDDING_DIM),
            k in 0.01f32..100.0,
        ) {
            prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
            let db = orthogonal_db(10).with_threshold(-2.0);
            let a = classify_sign(&q, &db).unwrap().unwrap();
            let scaled: Vec<f32> = q.iter().map(|x| x * k).collect();
            let b = classify_sign(&scaled, &db).unwrap().unwrap();
            prop_assert_eq!(a.row, b.row);
            prop_assert!((a.score - b.score).abs() < 1e-6);
            prop_assert!((-1.0..=1.0).contains(&a.score));
        }
    }
}
