//! Path CSV format: a `# kind=continuous|stepped` line, a `time,x1,...,xn`
//! header, then one row per sample. A terminal bump is written folded in.

use std::io::{BufRead, Write};

use super::{Path, PathKind};
use crate::error::{Error, Result};

impl Path {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# kind={}", self.kind().as_str())?;
        let header: Vec<String> = std::iter::once("time".to_string())
            .chain((1..=self.dim()).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![format_f64(self.times()[i])];
            row.extend(self.point_at(i).iter().map(|v| format_f64(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Path> {
        let mut kind = PathKind::Continuous;
        let mut dim = None;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(k) = meta.trim().strip_prefix("kind=") {
                    kind = match k.trim() {
                        "continuous" => PathKind::Continuous,
                        "stepped" => PathKind::Stepped,
                        other => return Err(Error::Parse(format!("unknown path kind `{other}`"))),
                    };
                }
                continue;
            }
            if dim.is_none() {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols.first() != Some(&"time") || cols.len() < 2 {
                    return Err(Error::Parse(format!("line {}: expected `time,x1,...` header", lineno + 1)));
                }
                dim = Some(cols.len() - 1);
                continue;
            }
            let n = dim.unwrap();
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if fields.len() != n + 1 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    n + 1,
                    fields.len()
                )));
            }
            times.push(fields[0]);
            values.extend_from_slice(&fields[1..]);
        }
        let dim = dim.ok_or(Error::Empty("path csv"))?;
        Path::new(dim, times, values, kind)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_preserves_samples_and_kind() {
        let p = Path::sample_fn(2, 1.0, 7, |s, out| {
            out[0] = s.sin();
            out[1] = 0.1 * s;
        })
        .unwrap()
        .with_kind(PathKind::Stepped);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# kind=stepped\ntime,x1,x2\n"));
        let q = Path::read_csv(&buf[..]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let text = "time,x1\n0,1\n0.5,1,2\n";
        assert!(matches!(Path::read_csv(text.as_bytes()), Err(Error::Parse(_))));
    }
}
