//! Dataset and split file formats.
//!
//! CSV: optional `#` comment lines, then header `id,label,f0,...,f{d-1}` and
//! one row per sample. Floats are written in shortest round-trip form, so a
//! save/load cycle is exact.
//!
//! Binary: `MFID`, version `u32 = 1`, `n: u64`, `d: u64`, `n*d` row-major
//! `f64`, then `n` label ids as `u32`. All integers and floats little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Samples, Split, SplitMode};
use crate::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"MFID";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// `.bin` selects binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => DataFormat::Binary,
            _ => DataFormat::Csv,
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Csv => load_csv(path),
        DataFormat::Binary => load_binary(path),
    }
}

/// Writes `ds`. For CSV, `comment` (if any) becomes a leading `# ` line.
pub fn save_dataset(ds: &Dataset, path: &Path, format: DataFormat, comment: Option<&str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        DataFormat::Csv => write_csv(ds, &mut w, comment),
        DataFormat::Binary => write_binary(ds, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_csv<W: Write>(ds: &Dataset, w: &mut W, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    out.write_record(&header)?;
    let names = ds.identity_names();
    for (i, row) in ds.samples().rows().enumerate() {
        let mut rec = Vec::with_capacity(row.len() + 2);
        rec.push(i.to_string());
        rec.push(names[ds.labels()[i]].clone());
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        out.write_record(&rec)?;
    }
    out.flush()
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(BufReader::new(file));
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };

    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(parse_err(1, "header must be `id,label,f0,...`".into()));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(1, format!("expected column `f{j}`, found `{name}`")));
        }
    }
    let dim = header.len() - 2;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_err(row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 2 {
            return Err(parse_err(
                row,
                format!("expected {} fields (dimension {dim}), found {}", dim + 2, record.len()),
            ));
        }
        let label = &record[1];
        if label.is_empty() {
            return Err(parse_err(row, "empty label".into()));
        }
        let id = *ids.entry(label.to_string()).or_insert_with(|| {
            names.push(label.to_string());
            names.len() - 1
        });
        labels.push(id);
        for (j, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(row, format!("column f{j}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("column f{j}: non-finite value `{field}`")));
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(parse_err(1, "file contains no samples".into()));
    }
    Dataset::new(Samples::new(data, dim, labels)?, names)
}

fn write_binary<W: Write>(ds: &Dataset, w: &mut W) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.dim() as u64).to_le_bytes())?;
    for v in ds.samples().data() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &l in ds.labels() {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    Ok(())
}

fn load_binary(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = ByteCursor::new(&bytes);
    if cur.take(4)? != BINARY_MAGIC {
        return Err(Error::Format("missing MFID magic".into()));
    }
    let version = cur.u32()?;
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n = cur.u64()? as usize;
    let d = cur.u64()? as usize;
    if n == 0 {
        return Err(Error::Format("file contains no samples".into()));
    }
    let expected = 24usize
        .checked_add(n.checked_mul(d).and_then(|nd| nd.checked_mul(8)).unwrap_or(usize::MAX))
        .and_then(|v| v.checked_add(n * 4))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for n={n}, d={d}, found {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            let v = cur.f64()?;
            if !v.is_finite() {
                return Err(Error::Format(format!("row {i}, column {j}: non-finite value")));
            }
            data.push(v);
        }
    }
    let labels = (0..n).map(|_| cur.u32().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
    Dataset::with_numeric_names(Samples::new(data, d, labels)?)
}

pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!("truncated input at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Writes both sides of a split: a `# mode=... seed=... side=...` header,
/// an optional extra `# ` comment line, then one sample index per line.
pub fn write_split(split: &Split, train_path: &Path, test_path: &Path, comment: Option<&str>) -> Result<()> {
    for (path, side, indices) in [
        (train_path, "train", &split.train),
        (test_path, "test", &split.test),
    ] {
        let mut text = format!("# mode={} seed={} side={side}\n", split.mode, split.seed);
        if let Some(c) = comment {
            text.push_str(&format!("# {c}\n"));
        }
        for i in indices {
            text.push_str(&i.to_string());
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_split(train_path: &Path, test_path: &Path) -> Result<Split> {
    let (mode, seed, train) = read_split_side(train_path)?;
    let (test_mode, test_seed, test) = read_split_side(test_path)?;
    if mode != test_mode || seed != test_seed {
        return Err(Error::Format(format!(
            "split headers disagree: {} vs {}",
            train_path.display(),
            test_path.display()
        )));
    }
    Ok(Split {
        train,
        test,
        mode,
        seed,
    })
}

fn read_split_side(path: &Path) -> Result<(SplitMode, u64, Vec<usize>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| parse_err(1, "empty split file".into()))?;
    let mut mode = None;
    let mut seed = None;
    for field in header.trim_start_matches('#').split_whitespace() {
        match field.split_once('=') {
            Some(("mode", m)) => mode = Some(m.parse::<SplitMode>().map_err(|e| parse_err(1, e))?),
            Some(("seed", s)) => seed = Some(s.parse::<u64>().map_err(|e| parse_err(1, e.to_string()))?),
            _ => {}
        }
    }
    let (Some(mode), Some(seed)) = (mode, seed) else {
        return Err(parse_err(1, "header must name mode and seed".into()));
    };
    let mut indices = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        indices.push(
            line.parse()
                .map_err(|_| parse_err(i + 2, format!("`{line}` is not a sample index")))?,
        );
    }
    Ok((mode, seed, indices))
}
