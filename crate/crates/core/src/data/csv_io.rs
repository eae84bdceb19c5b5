use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::ProxyDataset;
use crate::error::{Error, Result};
use crate::io::{csv_text, write_atomic};

/// Which CSV columns hold `y` and each block of `a`, `z`, `w`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub y: String,
    pub a: Vec<String>,
    pub z: Vec<String>,
    pub w: Vec<String>,
}

fn block_names(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=d).map(|k| format!("{prefix}{k}")).collect()
    }
}

impl CsvSchema {
    /// `y, a, z1, z2, w1, w2` style names; a one-column block keeps the bare letter.
    pub fn for_dims(d_a: usize, d_z: usize, d_w: usize) -> Self {
        Self {
            y: "y".into(),
            a: block_names("a", d_a),
            z: block_names("z", d_z),
            w: block_names("w", d_w),
        }
    }

    /// Pick `y` plus every column named `a`, `a<k>`, `z`, `z<k>`, `w`, `w<k>`.
    pub fn infer(headers: &[String]) -> Result<Self> {
        let pick = |p: char| -> Vec<String> {
            headers
                .iter()
                .filter(|h| {
                    let mut cs = h.chars();
                    cs.next() == Some(p) && cs.all(|c| c.is_ascii_digit())
                })
                .cloned()
                .collect()
        };
        let schema = Self {
            y: "y".into(),
            a: pick('a'),
            z: pick('z'),
            w: pick('w'),
        };
        if !headers.iter().any(|h| h == "y") {
            return Err(Error::MissingColumn("y".into()));
        }
        for (name, block) in [("a", &schema.a), ("z", &schema.z), ("w", &schema.w)] {
            if block.is_empty() {
                return Err(Error::MissingColumn(name.into()));
            }
        }
        Ok(schema)
    }
}

/// Load a headed, comma-separated file. `schema = None` infers the column names.
pub fn load_csv(path: &Path, schema: Option<&CsvSchema>) -> Result<ProxyDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidArgument(format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => CsvSchema::infer(&headers)?,
    };
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = position(&schema.y)?;
    let blocks = [&schema.a, &schema.z, &schema.w]
        .map(|b| b.iter().map(|n| position(n)).collect::<Result<Vec<_>>>());
    let [a_cols, z_cols, w_cols] = blocks;
    let (a_cols, z_cols, w_cols) = (a_cols?, z_cols?, w_cols?);

    let mut y = Vec::new();
    let mut rows: [Vec<Vec<f64>>; 3] = Default::default();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |c: usize| -> Result<f64> {
            record
                .get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row: r + 1,
                    column: headers[c].clone(),
                })
        };
        y.push(cell(y_col)?);
        for (dst, cols) in rows.iter_mut().zip([&a_cols, &z_cols, &w_cols]) {
            dst.push(cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?);
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyFile);
    }
    let to_mat = |rows: &Vec<Vec<f64>>, d: usize| Mat::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let [ra, rz, rw] = &rows;
    let t = y.len();
    if t < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: t,
        });
    }
    ProxyDataset::new(
        y,
        to_mat(ra, a_cols.len()),
        to_mat(rz, z_cols.len()),
        to_mat(rw, w_cols.len()),
    )
}

/// Write with [`CsvSchema::for_dims`] column names and 17 significant digits.
pub fn write_csv(data: &ProxyDataset, path: &Path) -> Result<()> {
    let schema = CsvSchema::for_dims(data.a.ncols(), data.z.ncols(), data.w.ncols());
    let mut header: Vec<&str> = vec![&schema.y];
    header.extend(schema.a.iter().map(String::as_str));
    header.extend(schema.z.iter().map(String::as_str));
    header.extend(schema.w.iter().map(String::as_str));
    let rows: Vec<Vec<Option<f64>>> = (0..data.len())
        .map(|i| {
            let mut row = vec![Some(data.y[i])];
            for m in [&data.a, &data.z, &data.w] {
                row.extend((0..m.ncols()).map(|j| Some(m[(i, j)])));
            }
            row
        })
        .collect();
    write_atomic(path, csv_text(&header, &rows).as_bytes())
}
