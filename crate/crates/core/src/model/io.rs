//! CSV exchange for grid fields: one row per node, `x2` outer and `x1` inner.

use std::io::{Read, Write};

use super::{Grid, ScalarField, VectorField};
use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip an f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_scalar_csv<W: Write>(u: &ScalarField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x1", "x2", "value"])?;
    for k in 0..u.grid.len() {
        let p = u.grid.point(k);
        w.write_record([fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(u.values[k])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector_csv<W: Write>(g: &VectorField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x1", "x2", "g1", "g2"])?;
    for k in 0..g.grid.len() {
        let p = g.grid.point(k);
        w.write_record([fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(g.g1[k]), fmt_f64(g.g2[k])])?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(input);
    let found: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if found != header {
        return Err(Error::Format(format!("expected header {header:?}, found {found:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Recover the lattice from the first two rows and the row count.
fn infer_grid(rows: &[Vec<f64>]) -> Result<Grid> {
    let n = (rows.len() as f64).sqrt().round() as usize;
    if n < 3 || n * n != rows.len() {
        return Err(Error::Format(format!("{} rows is not a square grid", rows.len())));
    }
    let lo = [rows[0][0], rows[0][1]];
    let h = rows[1][0] - rows[0][0];
    let grid = Grid { lo, h, n };
    for (k, row) in rows.iter().enumerate() {
        let p = grid.point(k);
        if (p[0] - row[0]).abs() > 1e-9 * (1.0 + p[0].abs()) || (p[1] - row[1]).abs() > 1e-9 * (1.0 + p[1].abs()) {
            return Err(Error::Format(format!("row {k} at ({}, {}) is off the grid", row[0], row[1])));
        }
    }
    Ok(grid)
}

pub fn read_scalar_csv<R: Read>(input: R) -> Result<ScalarField> {
    let rows = read_rows(input, &["x1", "x2", "value"])?;
    let grid = infer_grid(&rows)?;
    ScalarField::new(grid, rows.iter().map(|r| r[2]).collect())
}

pub fn read_vector_csv<R: Read>(input: R) -> Result<VectorField> {
    let rows = read_rows(input, &["x1", "x2", "g1", "g2"])?;
    let grid = infer_grid(&rows)?;
    Ok(VectorField { grid, g1: rows.iter().map(|r| r[2]).collect(), g2: rows.iter().map(|r| r[3]).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_round_trip_is_exact() {
        let g = Grid::unit_square(1.0, 9);
        let u = ScalarField::from_fn(g, |x1, x2| (x1 * 3.1).sin() / 7.0 + x2.ln());
        let mut buf = Vec::new();
        write_scalar_csv(&u, &mut buf).unwrap();
        let back = read_scalar_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values, u.values);
        assert_eq!(back.grid.n, 9);
    }

    #[test]
    fn vector_round_trip_is_exact() {
        let g = Grid::unit_square(0.0, 8);
        let v = VectorField::from_fn(g, |x1, x2| [x1 / 3.0, -x2 * 1e-7]);
        let mut buf = Vec::new();
        write_vector_csv(&v, &mut buf).unwrap();
        let back = read_vector_csv(buf.as_slice()).unwrap();
        assert_eq!(back.g1, v.g1);
        assert_eq!(back.g2, v.g2);
    }

    #[test]
    fn row_order_is_x2_outer() {
        let g = Grid::unit_square(0.0, 3);
        let u = ScalarField::from_fn(g, |x1, x2| x1 + 10.0 * x2);
        let mut buf = Vec::new();
        write_scalar_csv(&u, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let second: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(second[0].parse::<f64>().unwrap(), 0.5);
        assert_eq!(second[1].parse::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn bad_header_rejected() {
        let text = "a,b,c\n0,0,0\n";
        assert!(read_scalar_csv(text.as_bytes()).is_err());
    }
}
