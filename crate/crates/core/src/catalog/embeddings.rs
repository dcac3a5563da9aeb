use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Catalog;

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read embeddings {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes, expected EMB1")]
    BadMagic,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding file truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("record {0} has an id that is not valid UTF-8")]
    InvalidId(usize),
    #[error("duplicate embedding id `{0}`")]
    DuplicateId(String),
    #[error("embedding for `{0}` has zero or non-finite norm")]
    DegenerateVector(String),
    #[error("no embedding for catalog item `{0}`")]
    MissingEmbedding(String),
}

/// Unit-norm feature vectors, one row per catalog item in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    item_ids: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
}

impl EmbeddingSet {
    /// Joins `(id, vector)` rows onto the catalog. Rows for ids outside the
    /// catalog are ignored (they belong to items the diet filter removed);
    /// catalog items without a row are an error.
    pub fn from_rows<I>(rows: I, dim: usize, catalog: &Catalog) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        if dim == 0 {
            return Err(EmbeddingError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let mut by_id: HashMap<String, Vec<f32>> = HashMap::new();
        for (id, row) in rows {
            if row.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            if by_id.contains_key(&id) {
                return Err(EmbeddingError::DuplicateId(id));
            }
            by_id.insert(id, row);
        }
        let mut vectors = Vec::with_capacity(catalog.len() * dim);
        let mut item_ids = Vec::with_capacity(catalog.len());
        for item in catalog.items() {
            let row = by_id
                .get(&item.id)
                .ok_or_else(|| EmbeddingError::MissingEmbedding(item.id.clone()))?;
            let norm = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(EmbeddingError::DegenerateVector(item.id.clone()));
            }
            vectors.extend(row.iter().map(|&x| (f64::from(x) / norm) as f32));
            item_ids.push(item.id.clone());
        }
        Ok(Self {
            item_ids,
            dim,
            vectors,
        })
    }

    /// Decodes the `EMB1` binary layout and joins it onto the catalog.
    pub fn decode(bytes: &[u8], catalog: &Catalog) -> Result<Self, EmbeddingError> {
        let (dim, rows) = decode_rows(bytes)?;
        Self::from_rows(rows, dim, catalog)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared Euclidean distance, accumulated in f64. Symmetric bit-for-bit.
    pub fn dist_sq(&self, i: usize, j: usize) -> f64 {
        squared_distance(self.row(i), self.row(j))
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist_sq(i, j).sqrt()
    }

    /// Largest deviation of any row norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let n = self.row(i).iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                (n - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Encodes this set in the `EMB1` layout.
    pub fn encode(&self) -> Vec<u8> {
        encode_rows(
            self.dim,
            self.item_ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), self.row(i))),
        )
    }
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// An `(id, vector)` pair as stored on disk.
pub type Row = (String, Vec<f32>);

/// Encodes rows in the `EMB1` layout without any normalization.
pub fn encode_rows<'a, I>(dim: usize, rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a str, &'a [f32])>,
{
    let rows: Vec<_> = rows.into_iter().collect();
    let mut out = Vec::with_capacity(12 + rows.len() * (2 + 16 + 4 * dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for (id, row) in rows {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbeddingError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(EmbeddingError::Truncated(self.pos))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, EmbeddingError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, EmbeddingError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes raw `(id, vector)` rows from the `EMB1` layout.
pub fn decode_rows(bytes: &[u8]) -> Result<(usize, Vec<Row>), EmbeddingError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(EmbeddingError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(EmbeddingError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    for n in 0..count {
        let len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| EmbeddingError::InvalidId(n))?
            .to_string();
        let raw = r.take(4 * dim)?;
        let row = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rows.push((id, row));
    }
    if r.pos != bytes.len() {
        return Err(EmbeddingError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok((dim, rows))
}

/// Reads an `EMB1` file and joins it onto the catalog.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    catalog: &Catalog,
) -> Result<EmbeddingSet, EmbeddingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| EmbeddingError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    EmbeddingSet::decode(&bytes, catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{DietType, Item, NutritionFacts};

    fn catalog(n: usize) -> Catalog {
        let items = (0..n)
            .map(|i| Item {
                id: format!("item{i}"),
                name: String::new(),
                image_url: "u".into(),
                ingredients: vec![],
                nutrition: NutritionFacts {
                    calories: 1.0,
                    protein: 1.0,
                    fat: 1.0,
                },
                diet_tags: Default::default(),
            })
            .collect();
        Catalog::from_items(items, DietType::NoRestrictions).unwrap()
    }

    #[test]
    fn normalizes_three_four() {
        let cat = catalog(1);
        let bytes = encode_rows(2, [("item0", &[3.0f32, 4.0][..])]);
        let set = EmbeddingSet::decode(&bytes, &cat).unwrap();
        assert!((set.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((set.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = encode_rows(1, [("ab", &[1.0f32][..])]);
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..14], &[2, 0]);
        assert_eq!(&bytes[14..16], b"ab");
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20);
    }

    #[test]
    fn missing_row_is_an_error() {
        let cat = catalog(6);
        let rows: Vec<(String, Vec<f32>)> =
            (0..5).map(|i| (format!("item{i}"), vec![1.0, 0.0])).collect();
        let bytes = encode_rows(2, rows.iter().map(|(id, v)| (id.as_str(), v.as_slice())));
        assert!(matches!(
            EmbeddingSet::decode(&bytes, &cat),
            Err(EmbeddingError::MissingEmbedding(id)) if id == "item5"
        ));
    }

    #[test]
    fn duplicate_row_is_an_error() {
        let cat = catalog(1);
        let bytes = encode_rows(1, [("item0", &[1.0f32][..]), ("item0", &[2.0f32][..])]);
        assert!(matches!(
            EmbeddingSet::decode(&bytes, &cat),
            Err(EmbeddingError::DuplicateId(_))
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let cat = catalog(1);
        assert!(matches!(
            EmbeddingSet::decode(b"EMB2\0\0\0\0", &cat),
            Err(EmbeddingError::BadMagic)
        ));
        let bytes = encode_rows(2, [("item0", &[1.0f32, 2.0][..])]);
        assert!(matches!(
            EmbeddingSet::decode(&bytes[..bytes.len() - 1], &cat),
            Err(EmbeddingError::Truncated(_))
        ));
        let mut zero_dim = bytes.clone();
        zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            EmbeddingSet::decode(&zero_dim, &cat),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_vector_rejected() {
        let cat = catalog(1);
        let bytes = encode_rows(2, [("item0", &[0.0f32, 0.0][..])]);
        assert!(matches!(
            EmbeddingSet::decode(&bytes, &cat),
            Err(EmbeddingError::DegenerateVector(_))
        ));
    }

    #[test]
    fn extra_rows_for_filtered_items_ignored() {
        let cat = catalog(1);
        let bytes = encode_rows(1, [("item0", &[2.0f32][..]), ("gone", &[1.0f32][..])]);
        let set = EmbeddingSet::decode(&bytes, &cat).unwrap();
        assert_eq!(set.len(), 1);
    }
}
