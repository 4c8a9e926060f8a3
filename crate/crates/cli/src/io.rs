//! Field files: CSV (one row per line, `M` values per row in 2-D) and PGM `P2`/`P5`.

use std::path::Path;

use nlflow_core::grid::{Field, Grid};
use nlflow_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldFormat {
    Csv,
    /// Grey levels are `value · maxval`; `binary` selects `P5` over `P2`.
    Pgm { binary: bool, maxval: u16 },
}

impl FieldFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            FieldFormat::Csv => "csv",
            FieldFormat::Pgm { .. } => "pgm",
        }
    }
}

/// Reads a field and reports the format it was stored in.
pub fn load_field(path: &Path, grid: &Grid) -> Result<(Field, FieldFormat)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let is_pgm = bytes.starts_with(b"P2") || bytes.starts_with(b"P5");
    let by_ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    if is_pgm || by_ext.as_deref() == Some("pgm") {
        parse_pgm(&bytes, grid)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Format("CSV is not valid UTF-8".into()))?;
        Ok((parse_csv(&text, grid)?, FieldFormat::Csv))
    }
}

pub fn save_field(path: &Path, field: &Field, format: FieldFormat) -> Result<()> {
    let bytes = match format {
        FieldFormat::Csv => write_csv(field).into_bytes(),
        FieldFormat::Pgm { binary, maxval } => write_pgm(field, binary, maxval)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Shortest representation that parses back to the same bits.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn parse_csv(text: &str, grid: &Grid) -> Result<Field> {
    let m = grid.points_per_axis();
    let per_row = if grid.dimension() == 1 { 1 } else { m };
    let mut values = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: `{}` is not a number", n + 1, tok.trim())))
            })
            .collect::<Result<_>>()?;
        if row.len() != per_row {
            return Err(Error::DimensionMismatch {
                expected: format!("{per_row} values per row"),
                found: format!("{} on line {}", row.len(), n + 1),
            });
        }
        values.extend(row);
        rows += 1;
    }
    if rows != m {
        return Err(Error::DimensionMismatch {
            expected: format!("{m} rows"),
            found: format!("{rows} rows"),
        });
    }
    Field::new(*grid, values)
}

pub fn write_csv(field: &Field) -> String {
    let grid = field.grid();
    let per_row = if grid.dimension() == 1 { 1 } else { grid.points_per_axis() };
    let mut out = String::new();
    for row in field.values().chunks(per_row) {
        let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

struct Header {
    binary: bool,
    width: usize,
    height: usize,
    maxval: u16,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(Error::Format("missing PGM magic P2 or P5".into())),
    };
    let mut pos = 2;
    let mut tokens = [0usize; 3];
    for slot in tokens.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *slot = tok
            .parse()
            .map_err(|_| Error::Format(format!("bad PGM header token at byte {start}")))?;
    }
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(Error::Format("PGM header must end with whitespace".into()));
    }
    let maxval = tokens[2];
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        binary,
        width: tokens[0],
        height: tokens[1],
        maxval: maxval as u16,
        data_start: pos + 1,
    })
}

/// Rows of the image map to the first grid axis, columns to the second.
pub fn parse_pgm(bytes: &[u8], grid: &Grid) -> Result<(Field, FieldFormat)> {
    let h = parse_header(bytes)?;
    let m = grid.points_per_axis();
    if grid.dimension() != 2 || h.width != m || h.height != m {
        return Err(Error::DimensionMismatch {
            expected: format!("{m}x{m} image on a 2-D grid (grid N = {})", grid.dimension()),
            found: format!("{}x{}", h.width, h.height),
        });
    }
    let count = m * m;
    let data = &bytes[h.data_start.min(bytes.len())..];
    let levels: Vec<u16> = if h.binary {
        let wide = h.maxval > 255;
        let need = if wide { 2 * count } else { count };
        if data.len() < need {
            return Err(Error::Format(format!("PGM raster has {} bytes, need {need}", data.len())));
        }
        if wide {
            data[..need].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            data[..need].iter().map(|&b| b as u16).collect()
        }
    } else {
        let text = std::str::from_utf8(data).map_err(|_| Error::Format("P2 raster is not ASCII".into()))?;
        let levels = text
            .split_ascii_whitespace()
            .map(|t| t.parse::<u16>().map_err(|_| Error::Format(format!("bad grey level `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if levels.len() != count {
            return Err(Error::DimensionMismatch {
                expected: format!("{count} grey levels"),
                found: format!("{}", levels.len()),
            });
        }
        levels
    };
    if let Some(&bad) = levels.iter().find(|&&v| v > h.maxval) {
        return Err(Error::Format(format!("grey level {bad} exceeds maxval {}", h.maxval)));
    }
    let scale = h.maxval as f64;
    let field = Field::new(*grid, levels.iter().map(|&v| v as f64 / scale).collect())?;
    Ok((
        field,
        FieldFormat::Pgm {
            binary: h.binary,
            maxval: h.maxval,
        },
    ))
}

/// Quantizes `[0, 1]` to `0..=maxval`; values outside are clamped.
pub fn write_pgm(field: &Field, binary: bool, maxval: u16) -> Result<Vec<u8>> {
    let grid = field.grid();
    if grid.dimension() != 2 {
        return Err(Error::DimensionMismatch {
            expected: "2-D field".into(),
            found: format!("{}-D field", grid.dimension()),
        });
    }
    if !field.is_finite() {
        return Err(Error::Format("cannot write non-finite values to PGM".into()));
    }
    let m = grid.points_per_axis();
    let scale = maxval as f64;
    let levels: Vec<u16> = field
        .values()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * scale).round() as u16)
        .collect();
    let mut out = format!("{}\n{m} {m}\n{maxval}\n", if binary { "P5" } else { "P2" }).into_bytes();
    if binary {
        for &v in &levels {
            if maxval > 255 {
                out.extend_from_slice(&v.to_be_bytes());
            } else {
                out.push(v as u8);
            }
        }
    } else {
        for row in levels.chunks(m) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = Grid::new(1, 16.0, 256).unwrap();
        let f = Field::from_fn(g, |x| (x[0] * 1.37).sin() * 1e-7 + x[0].powi(3));
        let text = write_csv(&f);
        assert_eq!(text.lines().count(), 256);
        let back = parse_csv(&text, &g).unwrap();
        assert_eq!(back, f);
        assert_eq!(write_csv(&back), text);
    }

    #[test]
    fn csv_2d_rows() {
        let g = Grid::new(2, 8.0, 8).unwrap();
        let f = Field::from_fn(g, |x| x[0] - 2.0 * x[1]);
        assert_eq!(parse_csv(&write_csv(&f), &g).unwrap(), f);
    }

    #[test]
    fn csv_errors() {
        let g = Grid::new(1, 8.0, 8).unwrap();
        assert!(matches!(parse_csv("1\n2\n", &g), Err(Error::DimensionMismatch { .. })));
        let bad = "1\n2\nx\n4\n5\n6\n7\n8\n";
        match parse_csv(bad, &g) {
            Err(Error::Format(m)) => assert!(m.contains("line 3")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn white_p5_is_constant_one() {
        let g = Grid::new(2, 16.0, 64).unwrap();
        let mut bytes = b"P5\n# white\n64 64\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(255u8, 64 * 64));
        let (f, fmt) = parse_pgm(&bytes, &g).unwrap();
        assert_eq!(fmt, FieldFormat::Pgm { binary: true, maxval: 255 });
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_round_trip_is_value_exact() {
        let g = Grid::new(2, 8.0, 8).unwrap();
        for (binary, maxval) in [(true, 255u16), (false, 15), (true, 1000)] {
            let f = Field::new(g, (0..64).map(|i| (i as u16 % (maxval + 1)) as f64 / maxval as f64).collect()).unwrap();
            let bytes = write_pgm(&f, binary, maxval).unwrap();
            let (back, fmt) = parse_pgm(&bytes, &g).unwrap();
            assert_eq!(fmt, FieldFormat::Pgm { binary, maxval });
            assert_eq!(back, f);
            assert_eq!(write_pgm(&back, binary, maxval).unwrap(), bytes);
        }
    }

    #[test]
    fn pgm_dimension_mismatch() {
        let g = Grid::new(2, 8.0, 16).unwrap();
        let f = Field::zeros(Grid::new(2, 8.0, 8).unwrap());
        let bytes = write_pgm(&f, true, 255).unwrap();
        assert!(matches!(parse_pgm(&bytes, &g), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(parse_pgm(b"P6\n1 1\n255\n\0", &g), Err(Error::Format(_))));
    }
}
