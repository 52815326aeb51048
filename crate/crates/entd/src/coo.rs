//! COO tensors on disk: a JSON meta file `{"shape": [...], "kind": "binary" | "count"}`
//! next to a tab-separated body with one entry per line (the `D` coordinates,
//! then the value). Bodies whose name ends in `.gz` are gzip-compressed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use entd_core::{SparseTensor, ValueKind};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub shape: Vec<usize>,
    pub kind: String,
}

impl Meta {
    pub fn of(t: &SparseTensor) -> Self {
        Meta { shape: t.shape().to_vec(), kind: t.kind().as_str().to_string() }
    }

    pub fn value_kind(&self) -> Option<ValueKind> {
        ValueKind::parse(&self.kind)
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// `data.tsv` and `data.tsv.gz` both map to `data.meta.json`.
pub fn default_meta_path(data: &Path) -> PathBuf {
    let mut p = data.to_path_buf();
    if is_gz(&p) {
        p.set_extension("");
    }
    if p.extension().is_some_and(|e| e == "tsv") {
        p.set_extension("");
    }
    let mut name = p.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    p.set_file_name(name);
    p
}

pub fn read_meta(path: &Path) -> Result<Meta> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if meta.value_kind().is_none() {
        return Err(Error::format(path, format!("kind must be \"binary\" or \"count\", got {:?}", meta.kind)));
    }
    if meta.shape.is_empty() || meta.shape.contains(&0) {
        return Err(Error::format(path, "shape must be non-empty with positive sizes"));
    }
    Ok(meta)
}

fn open_body(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let inner: Box<dyn Read> = if is_gz(path) { Box::new(MultiGzDecoder::new(file)) } else { Box::new(file) };
    Ok(Box::new(BufReader::new(inner)))
}

/// Parses one body line into `coords` and returns the value.
fn parse_line(line: &str, meta: &Meta, kind: ValueKind, coords: &mut Vec<usize>) -> std::result::Result<u64, String> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    let d = meta.shape.len();
    if fields.len() != d + 1 {
        return Err(format!("expected {} tab-separated fields, found {}", d + 1, fields.len()));
    }
    for (mode, (field, &size)) in fields[..d].iter().zip(&meta.shape).enumerate() {
        let i: usize = field.parse().map_err(|_| format!("coordinate {field:?} of mode {mode} is not a non-negative integer"))?;
        if i >= size {
            return Err(format!("coordinate {i} out of range for mode {mode} of size {size}"));
        }
        coords.push(i);
    }
    let raw = fields[d];
    let value: i64 = raw.parse().map_err(|_| format!("value {raw:?} is not an integer"))?;
    match kind {
        ValueKind::Binary if value != 0 && value != 1 => Err(format!("value {value} is not valid for a binary tensor")),
        ValueKind::Count if value < 0 => Err(format!("value {value} is not valid for a count tensor")),
        _ => Ok(value as u64),
    }
}

/// Reads a tensor; blank lines are skipped and line order is preserved.
pub fn load_coo(meta_path: &Path, data_path: &Path) -> Result<SparseTensor> {
    let meta = read_meta(meta_path)?;
    let kind = meta.value_kind().expect("validated by read_meta");
    let d = meta.shape.len();
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut first_seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let parse_err = |line: usize, msg: String| Error::Parse { path: data_path.to_path_buf(), line, msg };
    for (k, line) in open_body(data_path)?.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(data_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let start = indices.len();
        let value = parse_line(&line, &meta, kind, &mut indices).map_err(|m| parse_err(lineno, m))?;
        if let Some(prev) = first_seen.insert(indices[start..start + d].to_vec(), lineno) {
            return Err(parse_err(lineno, format!("duplicate index tuple (first seen on line {prev})")));
        }
        values.push(value);
    }
    Ok(SparseTensor::new(meta.shape, indices, values, kind)?)
}

/// Writes the meta file and the body (gzip-compressed when the name ends in `.gz`).
pub fn save_coo(t: &SparseTensor, meta_path: &Path, data_path: &Path) -> Result<()> {
    let meta = serde_json::to_string(&Meta::of(t)).expect("meta serializes");
    std::fs::write(meta_path, meta + "\n").map_err(|e| Error::io(meta_path, e))?;
    let file = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
    let sink: Box<dyn Write> = if is_gz(data_path) {
        Box::new(GzEncoder::new(file, Compression::default()))
    } else {
        Box::new(file)
    };
    let mut w = BufWriter::new(sink);
    write_body(t, &mut w).map_err(|e| Error::io(data_path, e))?;
    w.into_inner().map_err(|e| Error::io(data_path, e.into_error()))?.flush().map_err(|e| Error::io(data_path, e))
}

fn write_body(t: &SparseTensor, w: &mut impl Write) -> std::io::Result<()> {
    for (n, &v) in t.values().iter().enumerate() {
        for i in t.index(n) {
            write!(w, "{i}\t")?;
        }
        writeln!(w, "{v}")?;
    }
    Ok(())
}

/// Reads bare index tuples (one per line, tab-separated) for a tensor of the given order.
pub fn load_indices(path: &Path, shape: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (k, line) in open_body(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: k + 1, msg };
        if fields.len() != shape.len() {
            return Err(err(format!("expected {} coordinates, found {}", shape.len(), fields.len())));
        }
        for (mode, (f, &size)) in fields.iter().zip(shape).enumerate() {
            let i: usize = f.parse().map_err(|_| err(format!("coordinate {f:?} is not a non-negative integer")))?;
            if i >= size {
                return Err(err(format!("coordinate {i} out of range for mode {mode} of size {size}")));
            }
            out.push(i);
        }
    }
    Ok(out)
}
