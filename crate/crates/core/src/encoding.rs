//! k-hot query encodings.
//!
//! Layout for a vocabulary of `C` classes (length `C + 8`):
//!
//! | bits          | meaning                                              |
//! |---------------|------------------------------------------------------|
//! | `0..C`        | one bit per class label                              |
//! | `C..C+3`      | y-slice one-hot (top, center, bottom), `111` = all    |
//! | `C+3..C+8`    | x-slice one-hot (far-left .. far-right), `11111` = all |
//!
//! The all-ones vector is the reserved standard-detection query.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{XSlice, YSlice};
use crate::querysynth::Query;

/// Number of location bits appended after the label bits.
pub const LOCATION_BITS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryEncoding {
    bits: Vec<u8>,
}

impl QueryEncoding {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Format {
                offset: 0,
                message: "query encoding bits must be 0 or 1".into(),
            });
        }
        Ok(Self { bits })
    }

    pub fn to_real<F: num_traits::Float>(&self) -> Vec<F> {
        self.bits
            .iter()
            .map(|&b| if b == 1 { F::one() } else { F::zero() })
            .collect()
    }
}

pub fn encode_labels<'a>(
    labels: impl IntoIterator<Item = &'a usize>,
    num_classes: usize,
) -> Result<Vec<u8>> {
    let mut bits = vec![0u8; num_classes];
    let mut any = false;
    for &l in labels {
        if l >= num_classes {
            return Err(Error::Domain(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        bits[l] = 1;
        any = true;
    }
    if !any {
        return Err(Error::Domain("cannot encode an empty label set".into()));
    }
    Ok(bits)
}

pub fn encode_location(y: YSlice, x: XSlice) -> [u8; LOCATION_BITS] {
    let mut bits = [0u8; LOCATION_BITS];
    match y {
        YSlice::Top => bits[0] = 1,
        YSlice::Center => bits[1] = 1,
        YSlice::Bottom => bits[2] = 1,
        YSlice::All => bits[..3].fill(1),
    }
    match x {
        XSlice::FarLeft => bits[3] = 1,
        XSlice::Left => bits[4] = 1,
        XSlice::Center => bits[5] = 1,
        XSlice::Right => bits[6] = 1,
        XSlice::FarRight => bits[7] = 1,
        XSlice::All => bits[3..].fill(1),
    }
    bits
}

pub fn encode_query(query: &Query, num_classes: usize) -> Result<QueryEncoding> {
    let mut bits = encode_labels(&query.labels, num_classes)?;
    let (y, x) = query.slices();
    bits.extend_from_slice(&encode_location(y, x));
    Ok(QueryEncoding { bits })
}

/// The reserved all-ones query.
pub fn detection_query(num_classes: usize) -> QueryEncoding {
    QueryEncoding {
        bits: vec![1; num_classes + LOCATION_BITS],
    }
}

fn decode_y(bits: &[u8]) -> Option<YSlice> {
    match bits {
        [1, 0, 0] => Some(YSlice::Top),
        [0, 1, 0] => Some(YSlice::Center),
        [0, 0, 1] => Some(YSlice::Bottom),
        [1, 1, 1] => Some(YSlice::All),
        _ => None,
    }
}

fn decode_x(bits: &[u8]) -> Option<XSlice> {
    match bits {
        [1, 0, 0, 0, 0] => Some(XSlice::FarLeft),
        [0, 1, 0, 0, 0] => Some(XSlice::Left),
        [0, 0, 1, 0, 0] => Some(XSlice::Center),
        [0, 0, 0, 1, 0] => Some(XSlice::Right),
        [0, 0, 0, 0, 1] => Some(XSlice::FarRight),
        [1, 1, 1, 1, 1] => Some(XSlice::All),
        _ => None,
    }
}

pub fn decode_query(bits: &[u8], num_classes: usize) -> Result<Query> {
    let format = |offset: usize, message: String| Error::Format { offset, message };
    if bits.len() != num_classes + LOCATION_BITS {
        return Err(format(
            0,
            format!(
                "expected {} bits for {num_classes} classes, got {}",
                num_classes + LOCATION_BITS,
                bits.len()
            ),
        ));
    }
    if let Some(i) = bits.iter().position(|&b| b > 1) {
        return Err(format(i, format!("bit {i} is {}, expected 0 or 1", bits[i])));
    }
    let labels: Vec<usize> = (0..num_classes).filter(|&i| bits[i] == 1).collect();
    if labels.is_empty() {
        return Err(format(0, "label segment has no set bit".into()));
    }
    let y_bits = &bits[num_classes..num_classes + 3];
    let x_bits = &bits[num_classes + 3..];
    let y = decode_y(y_bits)
        .ok_or_else(|| format(num_classes, format!("illegal y-slice pattern {y_bits:?}")))?;
    let x = decode_x(x_bits)
        .ok_or_else(|| format(num_classes + 3, format!("illegal x-slice pattern {x_bits:?}")))?;
    Ok(Query::new(labels, Some((y, x))))
}
