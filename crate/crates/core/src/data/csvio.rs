use std::path::Path;

use crate::error::{Error, Result};

use super::SeriesFrame;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Copy the previous row's value; a gap in the first row is an error.
    #[default]
    ForwardFill,
    Error,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CsvOptions {
    pub missing: MissingPolicy,
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a comma-separated file whose first column is a timestamp and whose
/// remaining columns are numeric variables named by the header row.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let csv_err = |line: u64, msg: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let header = reader.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(csv_err(
            1,
            format!("need a timestamp column and at least one variable, found {} column(s)", header.len()),
        ));
    }
    let index_name = header[0].trim().to_string();
    let names: Vec<String> = header.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let m = names.len();

    let mut timestamps = Vec::new();
    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(csv_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        timestamps.push(record[0].trim().to_string());
        cells.extend(record.iter().skip(1).map(parse_cell));
        lines.push(line);
    }
    let n = timestamps.len();
    if n == 0 {
        return Err(csv_err(1, "no data rows".into()));
    }

    for (j, name) in names.iter().enumerate() {
        if (0..n).all(|t| cells[t * m + j].is_none()) {
            return Err(csv_err(1, format!("column `{name}` has no numeric values")));
        }
    }

    let mut values = Vec::with_capacity(n * m);
    for t in 0..n {
        for j in 0..m {
            let v = match cells[t * m + j] {
                Some(v) => v,
                None if options.missing == MissingPolicy::Error => {
                    return Err(csv_err(lines[t], format!("missing or non-numeric value in column `{}`", names[j])));
                }
                None if t == 0 => {
                    return Err(csv_err(
                        lines[t],
                        format!("column `{}` starts with a missing value, nothing to fill from", names[j]),
                    ));
                }
                None => values[(t - 1) * m + j],
            };
            values.push(v);
        }
    }

    let mut frame = SeriesFrame::new(names, Some(timestamps), values)?;
    frame.index_name = index_name;
    Ok(frame)
}

/// Writes `frame` in the layout `load_csv` reads. Values use the shortest
/// text that parses back to the same `f64`. Frames without timestamps get a
/// row index.
pub fn write_csv(path: impl AsRef<Path>, frame: &SeriesFrame) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Csv {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    };
    let mut writer = csv::Writer::from_path(path).map_err(to_err)?;
    let mut header = vec![frame.index_name.clone()];
    header.extend(frame.names.iter().cloned());
    writer.write_record(&header).map_err(to_err)?;
    let m = frame.n_vars();
    for (t, row) in frame.values().chunks(m).enumerate() {
        let mut record = Vec::with_capacity(m + 1);
        record.push(match &frame.timestamps {
            Some(ts) => ts[t].clone(),
            None => t.to_string(),
        });
        record.extend(row.iter().map(|v| format!("{v}")));
        writer.write_record(&record).map_err(to_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
