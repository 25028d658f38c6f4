//! Aligned plain-text tables and CSV emission.

use std::io;

/// Renders rows under a header with columns padded to the widest cell.
/// Cells that parse as numbers are right-aligned.
pub fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len().max(rows.iter().map(Vec::len).max().unwrap_or(0));
    let mut width = vec![0usize; cols];
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (i, cell) in row.iter().enumerate() {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let line = |row: &[String]| {
        let cells: Vec<String> = (0..cols)
            .map(|i| {
                let cell = row.get(i).map(String::as_str).unwrap_or("");
                if cell.parse::<f64>().is_ok() {
                    format!("{cell:>w$}", w = width[i])
                } else {
                    format!("{cell:<w$}", w = width[i])
                }
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

pub fn csv_string(header: &[String], rows: &[Vec<String>]) -> io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of strings is utf-8"))
}

/// Fixed-precision rendering shared by reports; `-` for absent values.
pub fn num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn aligns_columns() {
        let t = text_table(&s(&["label", "count"]), &[s(&["cmake config", "2"]), s(&["linker", "10"])]);
        assert_eq!(t, "label         count\n------------  -----\ncmake config      2\nlinker           10\n");
    }

    #[test]
    fn csv_quotes() {
        assert_eq!(csv_string(&s(&["a"]), &[s(&["x,y"])]).unwrap(), "a\n\"x,y\"\n");
    }
}
