//! CSV ingestion and export.
//!
//! Layout: a header row, then one row per example. Columns are `label` (0/1),
//! `user_id` (non-negative integer), `d_<name>` for dense fields (decimal),
//! `s_<name>` for sparse fields (non-negative integer id), and `q_<name>` for
//! sequence fields ('|'-separated ids, empty cell for an empty sequence).
//! Out-of-vocabulary ids map to padding id 0 and are counted rather than
//! rejected; structural problems (missing columns, non-numeric cells) are
//! errors with the offending row number.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{pad_or_truncate, DataError, Dataset, FeatureSchema};

/// Reads a dataset from any reader. Row numbers in errors are 1-based data
/// rows (the header is row 0).
pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let label_col = col("label")?;
    let user_col = col("user_id")?;
    let dense_cols: Vec<usize> = schema
        .dense
        .iter()
        .map(|n| col(&format!("d_{n}")))
        .collect::<Result<_, _>>()?;
    let sparse_cols: Vec<usize> = schema
        .sparse
        .iter()
        .map(|f| col(&format!("s_{}", f.name)))
        .collect::<Result<_, _>>()?;
    let seq_cols: Vec<usize> = schema
        .sequence
        .iter()
        .map(|f| col(&format!("q_{}", f.name)))
        .collect::<Result<_, _>>()?;

    let mut ds = Dataset::empty(schema.clone());
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |c: usize| record.get(c).unwrap_or("");

        let label: u8 = cell(label_col).trim().parse().map_err(|_| DataError::Parse {
            row,
            msg: format!("label `{}` is not an integer", cell(label_col)),
        })?;
        if label > 1 {
            return Err(DataError::Parse {
                row,
                msg: format!("label {label} is not 0/1"),
            });
        }
        let user: u64 = cell(user_col).trim().parse().map_err(|_| DataError::Parse {
            row,
            msg: format!("user_id `{}` is not a non-negative integer", cell(user_col)),
        })?;

        ds.labels.push(label);
        ds.user_ids.push(user);

        for (j, &c) in dense_cols.iter().enumerate() {
            let v: f64 = cell(c).trim().parse().map_err(|_| DataError::Parse {
                row,
                msg: format!("dense `{}` value `{}` is not a number", schema.dense[j], cell(c)),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    row,
                    msg: format!("dense `{}` value `{v}` is not finite", schema.dense[j]),
                });
            }
            ds.dense.push(v);
        }

        for (f, &c) in sparse_cols.iter().enumerate() {
            let id: u32 = cell(c).trim().parse().map_err(|_| DataError::Parse {
                row,
                msg: format!(
                    "sparse `{}` id `{}` is not a non-negative integer",
                    schema.sparse[f].name,
                    cell(c)
                ),
            })?;
            if (id as usize) < schema.sparse[f].cardinality {
                ds.sparse.push(id);
            } else {
                ds.sparse.push(0);
                ds.oov_mapped += 1;
            }
        }

        for (q, &c) in seq_cols.iter().enumerate() {
            let field = &schema.sequence[q];
            let raw = cell(c).trim();
            let mut items: Vec<u32> = Vec::new();
            if !raw.is_empty() {
                for piece in raw.split('|') {
                    let id: u32 = piece.trim().parse().map_err(|_| DataError::Parse {
                        row,
                        msg: format!(
                            "sequence `{}` item `{piece}` is not a non-negative integer",
                            field.name
                        ),
                    })?;
                    if (id as usize) < field.cardinality {
                        items.push(id);
                    } else {
                        items.push(0);
                        ds.oov_mapped += 1;
                    }
                }
            }
            let (padded, len) = pad_or_truncate(&items, field.max_len);
            ds.sequences.extend_from_slice(&padded);
            ds.seq_lengths.push(len as u32);
        }
    }
    Ok(ds)
}

/// Reads a dataset from a file path.
pub fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let file = File::open(path)?;
    read_csv(file, schema)
}

/// Writes a dataset to any writer in the column layout `read_csv` expects.
/// Floats use the shortest representation that round-trips exactly.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let schema = &dataset.schema;
    let mut w = csv::WriterBuilder::new().from_writer(writer);

    let mut header: Vec<String> = vec!["label".to_string(), "user_id".to_string()];
    header.extend(schema.dense.iter().map(|n| format!("d_{n}")));
    header.extend(schema.sparse.iter().map(|f| format!("s_{}", f.name)));
    header.extend(schema.sequence.iter().map(|f| format!("q_{}", f.name)));
    w.write_record(&header)?;

    let ns = schema.n_sparse();
    let nd = schema.n_dense();
    let nq = schema.n_sequence();
    let slots = schema.seq_slots();
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for r in 0..dataset.len() {
        record.clear();
        record.push(dataset.labels[r].to_string());
        record.push(dataset.user_ids[r].to_string());
        for j in 0..nd {
            record.push(dataset.dense[r * nd + j].to_string());
        }
        for f in 0..ns {
            record.push(dataset.sparse[r * ns + f].to_string());
        }
        for q in 0..nq {
            let len = dataset.seq_lengths[r * nq + q] as usize;
            let off = r * slots + schema.seq_offset(q);
            let items: Vec<String> = dataset.sequences[off..off + len]
                .iter()
                .map(|id| id.to_string())
                .collect();
            record.push(items.join("|"));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a dataset to a file path.
pub fn write_csv_path(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = File::create(path)?;
    write_csv(dataset, file)
}
