//! File formats: vector files (fvecs and CSV), the text codebook format, and
//! the binary code-store format.
//!
//! All writers go through a temporary file in the destination directory plus
//! an atomic rename, so readers never observe a half-written file. Commands
//! that rewrite files in place additionally take a [`FileLock`] to keep two
//! concurrent rewrites from losing one of the updates.
//!
//! # Vector files
//!
//! *fvecs*: each record is a little-endian `i32` dimension followed by that
//! many little-endian `f32` components. All records must agree on the
//! dimension. Values widen to `f64` on read and narrow to `f32` on write.
//!
//! *CSV*: one vector per line, components separated by commas, parsed as
//! `f64`. An optional leading integer label column is used by the experiment
//! harness to order streams by class. Blank lines are skipped.
//!
//! # Codebook files (text, line oriented)
//!
//! ```text
//! format_version 1
//! dim 8
//! subspaces 2
//! codewords 4
//! cell 0 0 17 1.2500000000000000e0 ... (sub_dim values)
//! ```
//!
//! Exactly `subspaces * codewords` cell lines must be present, each naming
//! its cell as `cell <subspace> <index> <counter> <components...>` with
//! components printed to 17 significant digits (lossless for `f64`).
//!
//! # Store files (binary, little endian)
//!
//! ```text
//! magic   4 bytes  "OPQS"
//! version u32      1
//! dim     u32
//! subspaces u32
//! codewords u32
//! entries u64
//! ```
//!
//! followed by `entries` records of `id: u64` plus the packed code bytes
//! (one byte per sub-index up to 256 codewords, two bytes beyond). Ids must
//! be strictly increasing, which the writer guarantees; the reader enforces
//! it to catch corruption.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use opq_core::{CodeStore, Codebook, PQConfig, Vector};

/// Everything that can go wrong reading or writing the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: opq_core::Error,
    },
    #[error("{path}: held by another process (stale locks can be removed by hand)")]
    Locked { path: PathBuf },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, detail: String) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        detail,
    }
}

fn invalid_err(path: &Path) -> impl FnOnce(opq_core::Error) -> IoError + '_ {
    move |source| IoError::Invalid {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `content` to `path` atomically: a temporary file in the same
/// directory receives the bytes and is renamed over the destination.
pub(crate) fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<&File>) -> std::io::Result<()>,
) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = tempfile::Builder::new()
        .prefix(".opq-write")
        .tempfile_in(dir.unwrap_or(Path::new(".")))
        .map_err(io_err(path))?;
    {
        let mut writer = BufWriter::new(tmp.as_file());
        write(&mut writer).map_err(io_err(path))?;
        writer.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Vector files
// ---------------------------------------------------------------------------

/// Reads an fvecs file. All records must share one dimension.
pub fn read_fvecs(path: &Path) -> Result<Vec<Vector>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut vectors: Vec<Vector> = Vec::new();
    let mut offset = 0u64;
    let mut dim_header = [0u8; 4];

    loop {
        // Read the header byte by byte so a clean end of file (zero bytes)
        // can be told apart from a torn header (one to three bytes).
        let mut got = 0usize;
        while got < 4 {
            match reader.read(&mut dim_header[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(io_err(path)(e)),
            }
        }
        if got == 0 {
            break;
        }
        if got < 4 {
            return Err(format_err(
                path,
                format!(
                    "record {} at byte {offset}: file ends inside the dimension header",
                    vectors.len()
                ),
            ));
        }
        let dim = i32::from_le_bytes(dim_header);
        if dim <= 0 {
            return Err(format_err(
                path,
                format!("record {} at byte {offset}: dimension {dim} is not positive", vectors.len()),
            ));
        }
        let dim = dim as usize;
        if let Some(first) = vectors.first() {
            let expected = first.len();
            if dim != expected {
                return Err(format_err(
                    path,
                    format!(
                        "record {} at byte {offset}: dimension {dim} does not match first record's {expected}",
                        vectors.len()
                    ),
                ));
            }
        }
        let mut buf = vec![0u8; dim * 4];
        reader.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                format_err(
                    path,
                    format!(
                        "record {} at byte {offset}: file ends inside a {dim}-component record",
                        vectors.len()
                    ),
                )
            } else {
                io_err(path)(e)
            }
        })?;
        let values: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let vector = Vector::new(values).map_err(|e| {
            format_err(path, format!("record {} at byte {offset}: {e}", vectors.len()))
        })?;
        vectors.push(vector);
        offset += 4 + dim as u64 * 4;
    }

    if vectors.is_empty() {
        return Err(format_err(path, "no records".into()));
    }
    Ok(vectors)
}

/// Writes vectors as fvecs, narrowing components to `f32`.
pub fn write_fvecs(path: &Path, vectors: &[Vector]) -> Result<()> {
    write_atomic(path, |w| {
        for v in vectors {
            w.write_all(&(v.len() as i32).to_le_bytes())?;
            for &x in v.as_slice() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    })
}

/// Vectors read from a CSV file plus their labels, if the file had a label
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvData {
    pub vectors: Vec<Vector>,
    pub labels: Option<Vec<i64>>,
}

/// Whether the first CSV column holds integer class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLabels {
    None,
    FirstColumn,
}

/// Reads a CSV vector file. Blank lines are skipped; every data line must
/// have the same number of columns.
pub fn read_csv(path: &Path, labels: CsvLabels) -> Result<CsvData> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut vectors: Vec<Vector> = Vec::new();
    let mut label_values = Vec::new();
    let mut width = None;

    for (line_index, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line_no = line_index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        if labels == CsvLabels::FirstColumn {
            let field = fields.next().unwrap_or("");
            let label: i64 = field.parse().map_err(|_| {
                format_err(path, format!("line {line_no}: label {field:?} is not an integer"))
            })?;
            label_values.push(label);
        }
        let mut values = Vec::new();
        for (col, field) in fields.enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                format_err(
                    path,
                    format!("line {line_no}, column {}: {field:?} is not a number", col + 1),
                )
            })?;
            values.push(value);
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(format_err(
                    path,
                    format!("line {line_no}: {} components where earlier lines had {w}", values.len()),
                ));
            }
            Some(_) => {}
        }
        let vector = Vector::new(values)
            .map_err(|e| format_err(path, format!("line {line_no}: {e}")))?;
        vectors.push(vector);
    }

    if vectors.is_empty() {
        return Err(format_err(path, "no data lines".into()));
    }
    Ok(CsvData {
        vectors,
        labels: (labels == CsvLabels::FirstColumn).then_some(label_values),
    })
}

/// Writes vectors as CSV; `labels`, when given, becomes the first column.
/// Component formatting round-trips `f64` exactly.
pub fn write_csv(path: &Path, vectors: &[Vector], labels: Option<&[i64]>) -> Result<()> {
    if let Some(labels) = labels {
        if labels.len() != vectors.len() {
            return Err(format_err(
                path,
                format!("{} labels for {} vectors", labels.len(), vectors.len()),
            ));
        }
    }
    write_atomic(path, |w| {
        for (i, v) in vectors.iter().enumerate() {
            if let Some(labels) = labels {
                write!(w, "{},", labels[i])?;
            }
            let mut first = true;
            for &x in v.as_slice() {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{x}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Codebook files
// ---------------------------------------------------------------------------

const CODEBOOK_VERSION: u32 = 1;

/// Saves a codebook in the text format, atomically.
pub fn save_codebook(path: &Path, codebook: &Codebook) -> Result<()> {
    let cfg = codebook.config();
    write_atomic(path, |w| {
        writeln!(w, "format_version {CODEBOOK_VERSION}")?;
        writeln!(w, "dim {}", cfg.dim())?;
        writeln!(w, "subspaces {}", cfg.num_subspaces())?;
        writeln!(w, "codewords {}", cfg.num_codewords())?;
        for m in 0..cfg.num_subspaces() {
            for k in 0..cfg.num_codewords() {
                write!(w, "cell {m} {k} {}", codebook.counter(m, k))?;
                for &x in codebook.codeword(m, k) {
                    write!(w, " {x:.16e}")?;
                }
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    })
}

/// Loads a codebook from the text format, validating shape, completeness,
/// and value finiteness. Errors name the first violated rule and its line.
pub fn load_codebook(path: &Path) -> Result<Codebook> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let mut header = |name: &str| -> Result<u64> {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| format_err(path, format!("missing `{name}` header line")))?;
        let line = line.map_err(io_err(path))?;
        let line_no = idx + 1;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(key), Some(value), None) if key == name => value.parse().map_err(|_| {
                format_err(path, format!("line {line_no}: `{name}` value {value:?} is not an integer"))
            }),
            _ => Err(format_err(
                path,
                format!("line {line_no}: expected `{name} <value>`, found {line:?}"),
            )),
        }
    };

    let version = header("format_version")?;
    if version != CODEBOOK_VERSION as u64 {
        return Err(format_err(
            path,
            format!("format_version {version} is not supported (this build reads {CODEBOOK_VERSION})"),
        ));
    }
    let dim = header("dim")? as usize;
    let subspaces = header("subspaces")? as usize;
    let codewords = header("codewords")? as usize;
    let cfg = PQConfig::new(dim, subspaces, codewords).map_err(invalid_err(path))?;

    let d = cfg.sub_dim();
    let mut values = vec![0.0f64; cfg.num_cells() * d];
    let mut counters = vec![0u64; cfg.num_cells()];
    let mut seen = vec![false; cfg.num_cells()];

    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("cell") {
            return Err(format_err(path, format!("line {line_no}: expected a `cell` line")));
        }
        let mut int = |what: &str| -> Result<u64> {
            let field = parts
                .next()
                .ok_or_else(|| format_err(path, format!("line {line_no}: missing {what}")))?;
            field.parse().map_err(|_| {
                format_err(path, format!("line {line_no}: {what} {field:?} is not an integer"))
            })
        };
        let m = int("subspace")? as usize;
        let k = int("codeword index")? as usize;
        let counter = int("counter")?;
        if m >= subspaces || k >= codewords {
            return Err(format_err(
                path,
                format!("line {line_no}: cell ({m}, {k}) is outside a {subspaces}x{codewords} codebook"),
            ));
        }
        let cell = m * codewords + k;
        if seen[cell] {
            return Err(format_err(path, format!("line {line_no}: duplicate cell ({m}, {k})")));
        }
        seen[cell] = true;
        counters[cell] = counter;
        for i in 0..d {
            let field = parts.next().ok_or_else(|| {
                format_err(
                    path,
                    format!("line {line_no}: cell ({m}, {k}) has {i} components where {d} are expected"),
                )
            })?;
            let value: f64 = field.parse().map_err(|_| {
                format_err(path, format!("line {line_no}: component {field:?} is not a number"))
            })?;
            values[cell * d + i] = value;
        }
        if let Some(extra) = parts.next() {
            return Err(format_err(
                path,
                format!("line {line_no}: unexpected trailing field {extra:?}"),
            ));
        }
    }

    if let Some(cell) = seen.iter().position(|&s| !s) {
        return Err(format_err(
            path,
            format!("missing cell ({}, {})", cell / codewords, cell % codewords),
        ));
    }
    Codebook::from_parts(cfg, values, counters).map_err(invalid_err(path))
}

// ---------------------------------------------------------------------------
// Store files
// ---------------------------------------------------------------------------

const STORE_MAGIC: [u8; 4] = *b"OPQS";
const STORE_VERSION: u32 = 1;

/// Size of the fixed store-file header in bytes.
pub const STORE_HEADER_BYTES: u64 = 28;

/// Saves a code store in the binary format, atomically.
pub fn save_store(path: &Path, store: &CodeStore) -> Result<()> {
    let cfg = store.config();
    write_atomic(path, |w| {
        w.write_all(&STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&(cfg.dim() as u32).to_le_bytes())?;
        w.write_all(&(cfg.num_subspaces() as u32).to_le_bytes())?;
        w.write_all(&(cfg.num_codewords() as u32).to_le_bytes())?;
        w.write_all(&(store.len() as u64).to_le_bytes())?;
        for (id, packed) in store.packed_iter() {
            w.write_all(&id.to_le_bytes())?;
            w.write_all(packed)?;
        }
        Ok(())
    })
}

/// Loads a code store from the binary format, validating the header, the
/// entry count, id ordering, and every sub-index.
pub fn load_store(path: &Path) -> Result<CodeStore> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_fully(path, &mut reader, &mut magic, "magic")?;
    if magic != STORE_MAGIC {
        return Err(format_err(
            path,
            format!("bad magic {magic:02x?}, expected {STORE_MAGIC:02x?}"),
        ));
    }
    let version = read_u32(path, &mut reader, "version")?;
    if version != STORE_VERSION {
        return Err(format_err(
            path,
            format!("store version {version} is not supported (this build reads {STORE_VERSION})"),
        ));
    }
    let dim = read_u32(path, &mut reader, "dim")? as usize;
    let subspaces = read_u32(path, &mut reader, "subspaces")? as usize;
    let codewords = read_u32(path, &mut reader, "codewords")? as usize;
    let cfg = PQConfig::new(dim, subspaces, codewords).map_err(invalid_err(path))?;
    let count = read_u64(path, &mut reader, "entry count")?;

    let mut store = CodeStore::new(cfg);
    let mut last_id: Option<u64> = None;
    let mut code_buf = vec![0u8; cfg.code_bytes()];
    for index in 0..count {
        let mut id_buf = [0u8; 8];
        read_fully(path, &mut reader, &mut id_buf, &format!("entry {index} id"))?;
        let id = u64::from_le_bytes(id_buf);
        if let Some(last) = last_id {
            if id <= last {
                return Err(format_err(
                    path,
                    format!("entry {index}: id {id} does not exceed previous id {last}"),
                ));
            }
        }
        last_id = Some(id);
        read_fully(path, &mut reader, &mut code_buf, &format!("entry {index} code"))?;
        let code = opq_core::search::unpack_code(&code_buf, &cfg).map_err(invalid_err(path))?;
        store.insert(id, &code).map_err(invalid_err(path))?;
    }

    let mut rest = [0u8; 1];
    match reader.read(&mut rest) {
        Ok(0) => Ok(store),
        Ok(_) => Err(format_err(
            path,
            format!("trailing bytes after the {count} declared entries"),
        )),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn read_fully(path: &Path, reader: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            format_err(path, format!("file ends inside {what}"))
        } else {
            io_err(path)(e)
        }
    })
}

fn read_u32(path: &Path, reader: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_fully(path, reader, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(path: &Path, reader: &mut impl Read, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_fully(path, reader, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}

// ---------------------------------------------------------------------------
// Locking
// ---------------------------------------------------------------------------

/// Advisory lock for in-place rewrites: creating `<file>.lock` exclusively,
/// removed on drop. A second acquisition fails until the first is dropped.
#[derive(Debug)]
pub struct FileLock {
    lock_path: PathBuf,
}

impl FileLock {
    pub fn acquire(target: &Path) -> Result<FileLock> {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".lock");
        let lock_path = target.with_file_name(name);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&lock_path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(IoError::Locked {
                    path: lock_path.clone(),
                })
            }
            Err(e) => return Err(io_err(&lock_path)(e)),
        };
        let _ = writeln!(file, "pid {}", std::process::id());
        Ok(FileLock { lock_path })
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock_path);
    }
}
