//! Band-weight CSV: `band,[wavenumber,]d_corr,d_rough,d_flat,s,w`.

use std::path::Path;

use ftir_unmix_core::{BandWeights, WavenumberAxis};

use crate::cube_io::FormatError;

fn float_text(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_weights_csv(
    bw: &BandWeights,
    axis: Option<&WavenumberAxis>,
    path: &Path,
) -> Result<(), FormatError> {
    if let Some(a) = axis {
        if a.len() != bw.len() {
            return Err(FormatError::Dimension(format!(
                "axis has {} entries for {} weights",
                a.len(),
                bw.len()
            )));
        }
    }
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let mut header = vec!["band"];
    if axis.is_some() {
        header.push("wavenumber");
    }
    header.extend(["d_corr", "d_rough", "d_flat", "s", "w"]);
    wr.write_record(&header)?;
    let d = &bw.diagnostics;
    for b in 0..bw.len() {
        let mut row = vec![b.to_string()];
        if let Some(a) = axis {
            row.push(a.values()[b].to_string());
        }
        row.extend([d.d_corr[b], d.d_rough[b], d.d_flat[b], d.s[b], bw.w[b]].map(float_text));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// The `w` column of a weights CSV, in band order.
pub fn read_weights_csv(path: &Path) -> Result<Vec<f64>, FormatError> {
    let mut rd = csv::Reader::from_path(path)?;
    let col = rd
        .headers()?
        .iter()
        .position(|h| h.trim() == "w")
        .ok_or_else(|| FormatError::Format(format!("{}: no \"w\" column", path.display())))?;
    let mut w = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = rec
            .get(col)
            .ok_or_else(|| FormatError::Format(format!("row {}: missing w", i + 1)))?;
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| FormatError::Format(format!("row {}: cannot parse {field:?}", i + 1)))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(FormatError::Data(format!(
                "row {}: weight {v} outside [0, 1]",
                i + 1
            )));
        }
        w.push(v);
    }
    if w.is_empty() {
        return Err(FormatError::Length(format!(
            "{}: no weights",
            path.display()
        )));
    }
    Ok(w)
}
