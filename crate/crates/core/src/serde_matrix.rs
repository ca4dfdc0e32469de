//! Serializes `Array2` as row-major nested arrays (`[[a, b], [c, d]]`).

use ndarray::Array2;
use serde::de::Error as _;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S, T>(m: &Array2<T>, serializer: S) -> Result<S::Ok, S::Error>
where
    S: Serializer,
    T: Serialize,
{
    let mut seq = serializer.serialize_seq(Some(m.nrows()))?;
    for row in m.rows() {
        let row: Vec<&T> = row.iter().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

pub fn deserialize<'de, D, T>(deserializer: D) -> Result<Array2<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de> + Clone,
{
    let rows: Vec<Vec<T>> = Vec::deserialize(deserializer)?;
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(D::Error::custom("matrix rows have unequal lengths"));
    }
    let flat: Vec<T> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, m), flat).map_err(D::Error::custom)
}
