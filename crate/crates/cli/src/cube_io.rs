//! The FTC1 cube format, endmember CSVs and grayscale abundance maps.
//!
//! FTC1 layout, all little-endian:
//!
//! ```text
//! "FTC1" | H: u32 | W: u32 | B: u32 | axis flag: u8
//! [B × f64 wavenumbers, if flag == 1]
//! H·W·B × f32 values, index ((h·W) + w)·B + b
//! ```
//!
//! Values are held as `f64` in memory and stored as `f32`, so a cube
//! survives a write/read cycle bit-for-bit exactly when its values are
//! representable in single precision (see
//! [`HyperCube::to_storage_precision`]).

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use ftir_unmix_core::{AbundanceMap, EndmemberMatrix, HyperCube, WavenumberAxis};

pub const MAGIC: &[u8; 4] = b"FTC1";
const HEADER_LEN: usize = 4 + 3 * 4 + 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("dimension error: {0}")]
    Dimension(String),
}

impl From<ftir_unmix_core::Error> for FormatError {
    fn from(e: ftir_unmix_core::Error) -> Self {
        match e {
            ftir_unmix_core::Error::Dimension(m) => Self::Dimension(m),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Self::Io(io),
            other => Self::Format(format!("{other:?}")),
        }
    }
}

type Result<T> = std::result::Result<T, FormatError>;

/// Serializes a cube into FTC1 bytes.
pub fn encode_cube(cube: &HyperCube) -> Result<Vec<u8>> {
    let (h, w, b) = (cube.height(), cube.width(), cube.bands());
    if h == 0 || w == 0 || b == 0 {
        return Err(FormatError::Dimension(format!(
            "cannot store an empty {h}x{w}x{b} cube"
        )));
    }
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| FormatError::Dimension(format!("dimension {v} exceeds u32")))
    };
    let axis = cube.wavenumbers();
    let mut out =
        Vec::with_capacity(HEADER_LEN + axis.map_or(0, |a| 8 * a.len()) + 4 * cube.data().len());
    out.extend_from_slice(MAGIC);
    for v in [h, w, b] {
        out.extend_from_slice(&dim(v)?.to_le_bytes());
    }
    out.push(u8::from(axis.is_some()));
    if let Some(axis) = axis {
        for v in axis.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &v in cube.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses FTC1 bytes. The payload must be exactly as long as the header
/// says.
pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = &bytes[..bytes.len().min(4)];
        return Err(FormatError::Format(format!(
            "bad magic {:?}, expected \"FTC1\"",
            String::from_utf8_lossy(found)
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Length(format!(
            "header truncated at {} bytes",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, b) = (u32_at(4), u32_at(8), u32_at(12));
    if h == 0 || w == 0 || b == 0 {
        return Err(FormatError::Format(format!(
            "empty dimension in header: {h}x{w}x{b}"
        )));
    }
    let has_axis = match bytes[16] {
        0 => false,
        1 => true,
        f => return Err(FormatError::Format(format!("invalid axis flag {f}"))),
    };
    let axis_len = if has_axis { 8 * b } else { 0 };
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(b))
        .ok_or_else(|| FormatError::Format(format!("{h}x{w}x{b} overflows")))?;
    let expected = n
        .checked_mul(4)
        .and_then(|v| v.checked_add(HEADER_LEN + axis_len))
        .ok_or_else(|| FormatError::Format(format!("{h}x{w}x{b} overflows")))?;
    if bytes.len() != expected {
        return Err(FormatError::Length(format!(
            "expected {expected} bytes for {h}x{w}x{b}, found {}",
            bytes.len()
        )));
    }
    let axis = if has_axis {
        let vals = bytes[HEADER_LEN..HEADER_LEN + axis_len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(WavenumberAxis::new(vals)?)
    } else {
        None
    };
    let payload = &bytes[HEADER_LEN + axis_len..];
    let mut data = Vec::with_capacity(n);
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::Data(format!("non-finite value at index {i}")));
        }
        data.push(f64::from(v));
    }
    Ok(HyperCube::new(h, w, b, data, axis)?)
}

pub fn read_cube(path: &Path) -> Result<HyperCube> {
    decode_cube(&fs::read(path)?)
}

pub fn write_cube(cube: &HyperCube, path: &Path) -> Result<()> {
    let bytes = encode_cube(cube)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn float_text(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per band: wavenumber (or band index), then the K spectra.
pub fn export_endmembers_csv(
    e: &EndmemberMatrix,
    axis: Option<&WavenumberAxis>,
    path: &Path,
) -> Result<()> {
    if let Some(axis) = axis {
        if axis.len() != e.bands {
            return Err(FormatError::Dimension(format!(
                "axis has {} entries for {} bands",
                axis.len(),
                e.bands
            )));
        }
    }
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let mut header = vec![if axis.is_some() {
        "wavenumber".to_string()
    } else {
        "band".to_string()
    }];
    header.extend((0..e.endmembers).map(|k| format!("e{k}")));
    wr.write_record(&header)?;
    for b in 0..e.bands {
        let mut row = vec![match axis {
            Some(a) => a.values()[b].to_string(),
            None => b.to_string(),
        }];
        row.extend((0..e.endmembers).map(|k| float_text(e.get(b, k))));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a CSV written by [`export_endmembers_csv`]; the first column is
/// ignored.
pub fn read_endmembers_csv(path: &Path) -> Result<EndmemberMatrix> {
    let mut rd = csv::Reader::from_path(path)?;
    let k = rd.headers()?.len().saturating_sub(1);
    if k == 0 {
        return Err(FormatError::Format(format!(
            "{}: no endmember columns",
            path.display()
        )));
    }
    let mut data = Vec::new();
    let mut bands = 0;
    for rec in rd.records() {
        let rec = rec?;
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                FormatError::Format(format!("row {}: cannot parse {field:?}", bands + 1))
            })?;
            if !v.is_finite() {
                return Err(FormatError::Data(format!(
                    "row {}: non-finite value",
                    bands + 1
                )));
            }
            data.push(v);
        }
        bands += 1;
    }
    Ok(EndmemberMatrix::new(bands, k, data)?)
}

/// Binary PGM (P5, maxval 255) of one map; values are `round(255·a)`.
pub fn encode_pgm(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|&a| (255.0 * a).round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// Writes `<prefix>_NN.pgm` for every endmember plus `<prefix>_maps.txt`
/// listing the image file names in order. Returns the written paths.
pub fn export_abundance_maps(a: &AbundanceMap, prefix: &Path) -> Result<Vec<PathBuf>> {
    let stem = prefix
        .file_name()
        .ok_or_else(|| FormatError::Format(format!("{} has no file name", prefix.display())))?
        .to_string_lossy()
        .into_owned();
    let dir = prefix.parent().unwrap_or(Path::new(""));
    let mut written = Vec::with_capacity(a.endmembers + 1);
    let mut names = Vec::with_capacity(a.endmembers);
    for k in 0..a.endmembers {
        let name = format!("{stem}_{k:02}.pgm");
        let path = dir.join(&name);
        fs::write(&path, encode_pgm(a.map(k), a.height, a.width))?;
        names.push(name);
        written.push(path);
    }
    let sidecar = dir.join(format!("{stem}_maps.txt"));
    let mut f = BufWriter::new(fs::File::create(&sidecar)?);
    for n in &names {
        writeln!(f, "{n}")?;
    }
    f.flush()?;
    written.push(sidecar);
    Ok(written)
}

/// Parses a P5 image written by [`encode_pgm`]: `(height, width, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(FormatError::Format(format!(
            "unsupported PGM header {fields:?}"
        )));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| FormatError::Format(format!("bad PGM size {s:?}")))
    };
    let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = &bytes[pos + 1..];
    if body.len() != width * height {
        return Err(FormatError::Length(format!(
            "PGM body has {} bytes for {width}x{height}",
            body.len()
        )));
    }
    Ok((height, width, body.to_vec()))
}
