use std::ops::Range;

use super::FieldError;

const BLOB_MAGIC: [u8; 4] = *b"ODGP";
const BLOB_VERSION: u32 = 1;
const BLOB_HEADER_LEN: usize = 16;

/// A named, shaped slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    offset: usize,
}

impl Segment {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.size()
    }
}

/// Flat parameter storage with a named segment layout.
///
/// Segments tile `values` contiguously in declaration order, so the total
/// length is always the sum of the segment sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    /// Builds a zero-filled vector from `(name, shape)` pairs.
    pub fn zeros(segments: &[(String, Vec<usize>)]) -> Result<Self, FieldError> {
        let mut layout = Vec::with_capacity(segments.len());
        let mut offset = 0;
        for (name, shape) in segments {
            if layout.iter().any(|s: &Segment| &s.name == name) {
                return Err(FieldError::DuplicateSegment(name.clone()));
            }
            let seg = Segment {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            };
            offset += seg.size();
            layout.push(seg);
        }
        Ok(Self {
            values: vec![0.0; offset],
            layout,
        })
    }

    /// A vector with the same layout and all values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    /// A vector with the same layout holding `values`.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != self.values.len() {
            return Err(FieldError::DimensionMismatch {
                what: "parameter values",
                expected: self.values.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.find(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.find(name)?.range();
        Some(&mut self.values[range])
    }

    fn find(&self, name: &str) -> Option<&Segment> {
        self.layout.iter().find(|s| s.name == name)
    }

    /// Serializes the values as a 16-byte header (magic, version, count)
    /// followed by little-endian `f64`s.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOB_HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(&BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Reads values written by [`ParamVector::to_blob`] into this layout.
    pub fn load_blob(&mut self, blob: &[u8]) -> Result<(), FieldError> {
        let values = decode_blob(blob)?;
        if values.len() != self.values.len() {
            return Err(FieldError::DimensionMismatch {
                what: "parameter blob",
                expected: self.values.len(),
                got: values.len(),
            });
        }
        self.values = values;
        Ok(())
    }
}

pub fn decode_blob(blob: &[u8]) -> Result<Vec<f64>, FieldError> {
    if blob.len() < BLOB_HEADER_LEN {
        return Err(FieldError::Blob("truncated header".into()));
    }
    if blob[0..4] != BLOB_MAGIC {
        return Err(FieldError::Blob("bad magic".into()));
    }
    let version = u32::from_le_bytes(blob[4..8].try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(FieldError::Blob(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(blob[8..16].try_into().unwrap()) as usize;
    let body = &blob[BLOB_HEADER_LEN..];
    if body.len() != 8 * len {
        return Err(FieldError::Blob(format!(
            "header declares {len} values but body holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
