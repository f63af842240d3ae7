//! MatrixMarket reading and writing (`coordinate` and `array`, real data).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmFormat {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmSymmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

#[derive(Debug, Clone, Copy)]
struct Header {
    format: MmFormat,
    field: Field,
    symmetry: MmSymmetry,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_header(line: &str) -> Result<Header> {
    let words: Vec<String> = line.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(parse_err(1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    let format = match words[2].as_str() {
        "coordinate" => MmFormat::Coordinate,
        "array" => MmFormat::Array,
        other => return Err(parse_err(1, format!("unsupported format '{other}'"))),
    };
    let field = match words[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(parse_err(1, format!("unsupported field '{other}'"))),
    };
    let symmetry = match words[4].as_str() {
        "general" => MmSymmetry::General,
        "symmetric" => MmSymmetry::Symmetric,
        "skew-symmetric" => MmSymmetry::SkewSymmetric,
        other => return Err(parse_err(1, format!("unsupported symmetry '{other}'"))),
    };
    if format == MmFormat::Array && field == Field::Pattern {
        return Err(parse_err(1, "pattern field requires coordinate format"));
    }
    Ok(Header { format, field, symmetry })
}

fn parse_value(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(line, "missing value"))?;
    tok.parse::<f64>().map_err(|_| parse_err(line, format!("cannot parse value '{tok}'")))
}

fn parse_index(tok: Option<&str>, n: usize, line: usize) -> Result<usize> {
    let tok = tok.ok_or_else(|| parse_err(line, "missing index"))?;
    let idx: usize = tok.parse().map_err(|_| parse_err(line, format!("cannot parse index '{tok}'")))?;
    if idx == 0 || idx > n {
        return Err(parse_err(line, format!("index {idx} outside 1..={n}")));
    }
    Ok(idx - 1)
}

/// Reads a square real matrix.
pub fn read_matrix_market<R: BufRead>(reader: R) -> Result<DenseMatrix> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => parse_header(&line?)?,
        None => return Err(parse_err(1, "empty input")),
    };

    let mut data_lines = lines.filter_map(|(no, line)| match line {
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('%')).then(|| Ok((no + 1, t.to_string())))
        }
        Err(e) => Some(Err(Error::from(e))),
    });

    let (size_line, size) = data_lines.next().ok_or_else(|| parse_err(2, "missing size line"))??;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(size_line, format!("bad size token '{t}'"))))
        .collect::<Result<_>>()?;
    let (rows, cols) = match (header.format, dims.as_slice()) {
        (MmFormat::Coordinate, [r, c, _]) | (MmFormat::Array, [r, c]) => (*r, *c),
        _ => return Err(parse_err(size_line, "wrong number of size entries")),
    };
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(Error::Empty);
    }
    let n = rows;
    let mut m = DenseMatrix::zeros(n);
    let mirror = |m: &mut DenseMatrix, i: usize, j: usize, v: f64| match header.symmetry {
        MmSymmetry::General => {}
        MmSymmetry::Symmetric if i != j => m.set(j, i, v),
        MmSymmetry::SkewSymmetric if i != j => m.set(j, i, -v),
        _ => {}
    };

    match header.format {
        MmFormat::Coordinate => {
            let nnz = dims[2];
            for _ in 0..nnz {
                let (no, line) = data_lines.next().ok_or_else(|| parse_err(0, "fewer entries than declared"))??;
                let mut toks = line.split_whitespace();
                let i = parse_index(toks.next(), n, no)?;
                let j = parse_index(toks.next(), n, no)?;
                let v = match header.field {
                    Field::Pattern => 1.0,
                    _ => parse_value(toks.next(), no)?,
                };
                let total = m.get(i, j) + v;
                m.set(i, j, total);
                mirror(&mut m, i, j, total);
            }
        }
        MmFormat::Array => {
            // column-major; symmetric variants store the lower triangle only
            for j in 0..n {
                let start = match header.symmetry {
                    MmSymmetry::General => 0,
                    MmSymmetry::Symmetric => j,
                    MmSymmetry::SkewSymmetric => j + 1,
                };
                for i in start..n {
                    let (no, line) = data_lines.next().ok_or_else(|| parse_err(0, "fewer entries than declared"))??;
                    let v = parse_value(line.split_whitespace().next(), no)?;
                    m.set(i, j, v);
                    mirror(&mut m, i, j, v);
                }
            }
        }
    }
    if let Some(extra) = data_lines.next() {
        let (no, _) = extra?;
        return Err(parse_err(no, "more entries than declared"));
    }
    Ok(m)
}

pub fn read_matrix_market_file(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_matrix_market(BufReader::new(File::open(path)?))
}

/// Writes `m` with shortest round-trip float formatting, so reading the file
/// back reproduces every value bit for bit. `Symmetric` stores the lower
/// triangle and requires an exactly symmetric matrix.
pub fn write_matrix_market<W: Write>(mut w: W, m: &DenseMatrix, format: MmFormat, symmetry: MmSymmetry) -> Result<()> {
    if symmetry == MmSymmetry::SkewSymmetric {
        return Err(Error::InvalidArgument("writing skew-symmetric matrices is not supported".into()));
    }
    if symmetry == MmSymmetry::Symmetric && !m.is_symmetric() {
        return Err(Error::InvalidArgument("matrix is not exactly symmetric".into()));
    }
    let n = m.n();
    let sym = match symmetry {
        MmSymmetry::General => "general",
        _ => "symmetric",
    };
    let lower = |i: usize, j: usize| symmetry == MmSymmetry::General || i >= j;
    match format {
        MmFormat::Coordinate => {
            let entries: Vec<(usize, usize, f64)> = (0..n)
                .flat_map(|j| (0..n).map(move |i| (i, j)))
                .filter(|&(i, j)| lower(i, j) && m.get(i, j) != 0.0)
                .map(|(i, j)| (i, j, m.get(i, j)))
                .collect();
            writeln!(w, "%%MatrixMarket matrix coordinate real {sym}")?;
            writeln!(w, "{n} {n} {}", entries.len())?;
            for (i, j, v) in entries {
                writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
            }
        }
        MmFormat::Array => {
            writeln!(w, "%%MatrixMarket matrix array real {sym}")?;
            writeln!(w, "{n} {n}")?;
            for j in 0..n {
                for i in 0..n {
                    if lower(i, j) {
                        writeln!(w, "{:e}", m.get(i, j))?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn write_matrix_market_file(path: impl AsRef<Path>, m: &DenseMatrix, format: MmFormat, symmetry: MmSymmetry) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_market(&mut w, m, format, symmetry)?;
    w.flush()?;
    Ok(())
}
