//! File formats: matrix JSON encoding and atomic output writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Serde adapter encoding a `DMatrix<f64>` as
/// `{"rows": r, "cols": c, "data": [row-major entries]}`.
pub mod matrix {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn to_repr(m: &DMatrix<f64>) -> (usize, usize, Vec<f64>) {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        (m.nrows(), m.ncols(), data)
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let (rows, cols, data) = to_repr(m);
        Repr { rows, cols, data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.rows * r.cols != r.data.len() {
            return Err(D::Error::custom(format!(
                "matrix declares {}x{} but has {} entries",
                r.rows,
                r.cols,
                r.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }

    /// Same encoding for optional matrices.
    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            match m {
                Some(m) => super::serialize(m, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
            let r: Option<Repr> = Option::deserialize(d)?;
            match r {
                None => Ok(None),
                Some(r) if r.rows * r.cols == r.data.len() => {
                    Ok(Some(DMatrix::from_row_slice(r.rows, r.cols, &r.data)))
                }
                Some(r) => Err(D::Error::custom(format!(
                    "matrix declares {}x{} but has {} entries",
                    r.rows,
                    r.cols,
                    r.data.len()
                ))),
            }
        }
    }
}

/// Write `bytes` to `path` through a temporary sibling and a rename, so the
/// target is either absent or complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline, written atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}
