//! File formats: headerless matrix CSV, the dense binary tensor layout,
//! sparse tensor triplets, model directories, and a day-at-a-time tensor
//! reader for online fits.

use std::borrow::Cow;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{Array2, Array3, Axis};
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};
use crate::ncpd::CpFactors;
use crate::online_ncpd::DocSource;
use crate::online_nmf::SliceSource;
use crate::tensor_core::{Mat, Tensor3};
use crate::vectorizer::{TermTensor, Vocabulary};

/// First eight bytes of a binary tensor file.
pub const TENSOR_MAGIC: &[u8; 8] = b"DYNTNSR1";
const HEADER_LEN: u64 = 8 + 3 * 8;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Row-major, headerless CSV.
pub fn write_matrix_csv(path: &Path, m: &Mat) -> Result<()> {
    let mut w = create(path)?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Mat> {
    let reader = BufReader::new(open(path)?);
    let mut flat = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = flat.len();
        for field in line.split(',') {
            flat.push(field.trim().parse::<f64>().map_err(|e| {
                format_err(path, format!("line {}: {e}", n + 1))
            })?);
        }
        let width = flat.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(format_err(path, format!("line {}: {width} fields, expected {c}", n + 1)));
            }
            _ => {}
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), flat).map_err(|e| format_err(path, e.to_string()))
}

/// Magic, three little-endian `u64` dims, then little-endian `f64` values
/// in row-major (day, term, document) order.
pub fn write_tensor_bin(path: &Path, x: &Tensor3) -> Result<()> {
    let mut w = create(path)?;
    let (a, b, c) = x.dim();
    let io = |e| Error::io(path, e);
    w.write_all(TENSOR_MAGIC).map_err(io)?;
    for d in [a, b, c] {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
    }
    for &v in x.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_header(path: &Path, r: &mut impl Read) -> Result<(usize, usize, usize)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != TENSOR_MAGIC {
        return Err(format_err(path, "not a tensor file"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        *d = usize::try_from(u64::from_le_bytes(buf)).map_err(|_| format_err(path, "dimension overflow"))?;
    }
    Ok((dims[0], dims[1], dims[2]))
}

fn read_f64s(path: &Path, r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")))
        .collect())
}

pub fn read_tensor_bin(path: &Path) -> Result<Tensor3> {
    let mut r = BufReader::new(open(path)?);
    let dims = read_header(path, &mut r)?;
    let values = read_f64s(path, &mut r, dims.0 * dims.1 * dims.2)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(format_err(path, "trailing bytes after tensor values"));
    }
    Array3::from_shape_vec(dims, values).map_err(|e| format_err(path, e.to_string()))
}

/// Loads a term tensor; all-zero document fibers count as padding.
pub fn read_term_tensor(path: &Path) -> Result<TermTensor> {
    TermTensor::from_values(read_tensor_bin(path)?)
}

/// Nonzeros as `t,i,j,value` rows after a `#dims=T,n,L` line and a header.
pub fn write_tensor_triplets(path: &Path, x: &Tensor3) -> Result<()> {
    let mut w = create(path)?;
    let (a, b, c) = x.dim();
    let io = |e| Error::io(path, e);
    writeln!(w, "#dims={a},{b},{c}").map_err(io)?;
    writeln!(w, "t,i,j,value").map_err(io)?;
    for ((t, i, j), &v) in x.indexed_iter() {
        if v != 0.0 {
            writeln!(w, "{t},{i},{j},{}", fmt_f64(v)).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_tensor_triplets(path: &Path) -> Result<Tensor3> {
    let reader = BufReader::new(open(path)?);
    let mut lines = reader.lines().enumerate();
    let dims_line = lines
        .next()
        .ok_or_else(|| format_err(path, "empty triplet file"))?
        .1
        .map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = dims_line
        .strip_prefix("#dims=")
        .ok_or_else(|| format_err(path, "missing #dims line"))?
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| format_err(path, "bad #dims line")))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(format_err(path, "#dims needs three values"));
    }
    let mut x = Array3::zeros((dims[0], dims[1], dims[2]));
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with("t,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || format_err(path, format!("line {}: expected t,i,j,value", n + 1));
        if parts.len() != 4 {
            return Err(bad());
        }
        let t: usize = parts[0].trim().parse().map_err(|_| bad())?;
        let i: usize = parts[1].trim().parse().map_err(|_| bad())?;
        let j: usize = parts[2].trim().parse().map_err(|_| bad())?;
        let v: f64 = parts[3].trim().parse().map_err(|_| bad())?;
        *x.get_mut((t, i, j))
            .ok_or_else(|| format_err(path, format!("line {}: index out of range", n + 1)))? = v;
    }
    Ok(x)
}

/// Binary tensor file read one day at a time.
#[derive(Debug, Clone)]
pub struct TensorFile {
    path: PathBuf,
    dims: (usize, usize, usize),
}

impl TensorFile {
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = open(path)?;
        let dims = read_header(path, &mut f)?;
        let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
        if len != HEADER_LEN + 8 * (dims.0 * dims.1 * dims.2) as u64 {
            return Err(format_err(path, "file length does not match its dims"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            dims,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Full terms × slots slice of day `t`.
    pub fn day_slice(&self, t: usize) -> Result<Mat> {
        let (n1, n2, n3) = self.dims;
        if t >= n1 {
            return Err(Error::invalid(format!("no day {t}")));
        }
        let mut f = open(&self.path)?;
        f.seek(SeekFrom::Start(HEADER_LEN + 8 * (t * n2 * n3) as u64))
            .map_err(|e| Error::io(&self.path, e))?;
        let values = read_f64s(&self.path, &mut BufReader::new(f), n2 * n3)?;
        Ok(Array2::from_shape_vec((n2, n3), values).expect("length checked"))
    }

    /// Day `t` without its all-zero (padding) slots.
    pub fn day_matrix(&self, t: usize) -> Result<Mat> {
        let slice = self.day_slice(t)?;
        let keep: Vec<usize> = (0..slice.ncols())
            .filter(|&j| slice.column(j).iter().any(|&v| v != 0.0))
            .collect();
        Ok(slice.select(Axis(1), &keep))
    }
}

impl SliceSource for TensorFile {
    type Slice<'a> = Cow<'a, Mat>;

    fn num_slices(&self) -> usize {
        self.dims.0
    }

    fn num_terms(&self) -> usize {
        self.dims.1
    }

    fn load(&self, t: usize) -> Result<Cow<'_, Mat>> {
        self.day_matrix(t).map(Cow::Owned)
    }
}

impl DocSource for TensorFile {
    fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    fn select(&self, days: Range<usize>, docs: &[usize]) -> Result<Tensor3> {
        let (_, n2, n3) = self.dims;
        if docs.iter().any(|&j| j >= n3) {
            return Err(Error::invalid("document slot outside the tensor"));
        }
        let mut out = Array3::zeros((days.len(), n2, docs.len()));
        for (d, t) in days.enumerate() {
            let slice = self.day_slice(t)?;
            out.index_axis_mut(Axis(0), d).assign(&slice.select(Axis(1), docs));
        }
        Ok(out)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_text(path, &vocab.to_tsv())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::from_tsv(&read_text(path)?)
}

/// One ISO date per line.
pub fn write_dates(path: &Path, dates: &[NaiveDate]) -> Result<()> {
    let text: String = dates
        .iter()
        .map(|d| format!("{}\n", d.format("%Y-%m-%d")))
        .collect();
    write_text(path, &text)
}

pub fn read_dates(path: &Path) -> Result<Vec<NaiveDate>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            NaiveDate::parse_from_str(l.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes `A.csv`, `B.csv` and `C.csv` into `dir`.
pub fn write_cp_factors(dir: &Path, f: &CpFactors) -> Result<()> {
    write_matrix_csv(&dir.join("A.csv"), &f.a)?;
    write_matrix_csv(&dir.join("B.csv"), &f.b)?;
    write_matrix_csv(&dir.join("C.csv"), &f.c)
}

pub fn read_cp_factors(dir: &Path) -> Result<CpFactors> {
    CpFactors::new(
        read_matrix_csv(&dir.join("A.csv"))?,
        read_matrix_csv(&dir.join("B.csv"))?,
        read_matrix_csv(&dir.join("C.csv"))?,
    )
}
