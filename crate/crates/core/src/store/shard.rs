//! `FSB1` shard container.
//!
//! Layout: 4-byte magic `FSB1`, 8-byte little-endian header length `H`,
//! `H` bytes of UTF-8 JSON header, then the payload of little-endian f32
//! rows. Header offsets are relative to the start of the payload.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub const SHARD_MAGIC: &[u8; 4] = b"FSB1";
const PREAMBLE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideLocation {
    pub byte_offset: u64,
    pub row_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ShardHeader {
    feature_dim: usize,
    cases: BTreeMap<String, BTreeMap<String, SlideLocation>>,
}

/// A parsed shard: validated header plus the raw payload bytes.
#[derive(Debug, Clone)]
pub struct ShardFile {
    feature_dim: usize,
    cases: BTreeMap<String, BTreeMap<String, SlideLocation>>,
    payload: Vec<u8>,
}

pub fn shard_for_case(case_id: &str, shard_count: usize) -> usize {
    (fnv1a(case_id.as_bytes()) % shard_count as u64) as usize
}

pub fn shard_file_name(shard: usize) -> String {
    format!("shard_{shard:02}.fsb")
}

impl ShardFile {
    /// Serialize slides (grouped by case) into container bytes.
    pub(crate) fn encode<'a>(
        feature_dim: usize,
        slides: impl IntoIterator<Item = (&'a str, &'a str, &'a Array2<f32>)>,
    ) -> Result<Vec<u8>> {
        let mut cases: BTreeMap<String, BTreeMap<String, SlideLocation>> = BTreeMap::new();
        let mut payload = Vec::new();
        for (case_id, slide_id, features) in slides {
            if features.ncols() != feature_dim {
                return Err(Error::DimensionMismatch { expected: feature_dim, found: features.ncols() });
            }
            let loc = SlideLocation { byte_offset: payload.len() as u64, row_count: features.nrows() as u64 };
            let slot = cases.entry(case_id.to_owned()).or_default();
            if slot.insert(slide_id.to_owned(), loc).is_some() {
                return Err(Error::Format(format!("duplicate slide {case_id}/{slide_id}")));
            }
            for v in features.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&ShardHeader { feature_dim, cases })?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len());
        out.extend_from_slice(SHARD_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parse and validate container bytes. Never panics on malformed input.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..4] != SHARD_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        let header_end = (PREAMBLE as u64)
            .checked_add(header_len)
            .filter(|end| *end <= bytes.len() as u64)
            .ok_or_else(|| Error::Format("header length exceeds file".into()))? as usize;
        let header: ShardHeader = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        if header.feature_dim == 0 {
            return Err(Error::Format("feature_dim is zero".into()));
        }
        let payload = bytes[header_end..].to_vec();
        let row_bytes = (header.feature_dim as u64)
            .checked_mul(4)
            .ok_or_else(|| Error::Format("feature_dim overflow".into()))?;

        let mut spans: Vec<(u64, u64)> = Vec::new();
        for (case_id, slides) in &header.cases {
            for (slide_id, loc) in slides {
                let len = loc
                    .row_count
                    .checked_mul(row_bytes)
                    .ok_or_else(|| Error::Format(format!("{case_id}/{slide_id}: size overflow")))?;
                let end = loc
                    .byte_offset
                    .checked_add(len)
                    .filter(|end| *end <= payload.len() as u64)
                    .ok_or_else(|| Error::Format(format!("{case_id}/{slide_id}: out of bounds")))?;
                if loc.row_count == 0 {
                    return Err(Error::Format(format!("{case_id}/{slide_id}: zero rows")));
                }
                spans.push((loc.byte_offset, end));
            }
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(Error::Format("overlapping slide extents".into()));
        }
        Ok(Self { feature_dim: header.feature_dim, cases: header.cases, payload })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn cases(&self) -> impl Iterator<Item = (&str, impl Iterator<Item = &str>)> {
        self.cases.iter().map(|(c, s)| (c.as_str(), s.keys().map(String::as_str)))
    }

    pub fn location(&self, case_id: &str, slide_id: &str) -> Option<SlideLocation> {
        self.cases.get(case_id)?.get(slide_id).copied()
    }

    pub fn read_slide(&self, case_id: &str, slide_id: &str) -> Result<Array2<f32>> {
        let loc = self.location(case_id, slide_id).ok_or_else(|| Error::MissingFeatures {
            case_id: case_id.to_owned(),
            slide_id: slide_id.to_owned(),
        })?;
        let rows = loc.row_count as usize;
        let start = loc.byte_offset as usize;
        let bytes = &self.payload[start..start + rows * self.feature_dim * 4];
        let values: Vec<f32> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Array2::from_shape_vec((rows, self.feature_dim), values).map_err(|e| Error::Shape(e.to_string()))
    }
}
