//! Plain-text problem dump for triaging failing cases.
//!
//! ```text
//! QP <n> <m>
//!
//! <P, n rows>
//!
//! <q>
//!
//! <A, m rows>
//!
//! <l>
//!
//! <u>
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::QpProblem;
use crate::error::{Error, Result};

fn row(out: &mut String, values: impl Iterator<Item = f64>) {
    let parts: Vec<String> = values.map(|v| format!("{v:e}")).collect();
    out.push_str(&parts.join(" "));
    out.push('\n');
}

pub fn write_dump(problem: &QpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "QP {} {}", problem.n(), problem.m());
    out.push('\n');
    for r in problem.p().row_iter() {
        row(&mut out, r.iter().copied());
    }
    out.push('\n');
    row(&mut out, problem.q().iter().copied());
    out.push('\n');
    for r in problem.a().row_iter() {
        row(&mut out, r.iter().copied());
    }
    out.push('\n');
    row(&mut out, problem.l().iter().copied());
    out.push('\n');
    row(&mut out, problem.u().iter().copied());
    out
}

pub fn parse_dump(text: &str) -> Result<QpProblem> {
    let bad = |msg: &str| Error::ShapeMismatch(format!("QP dump: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty input"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("QP") {
        return Err(bad("missing `QP` header"));
    }
    let mut dim = || -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad dimensions"))
    };
    let (n, m) = (dim()?, dim()?);

    let rows: Vec<Vec<f64>> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // P (n rows), q, A (m rows), l, u; q/l/u lines are absent when empty
    let vec_rows = |len: usize| usize::from(len > 0);
    let expected = n + vec_rows(n) + m + 2 * vec_rows(m);
    if rows.len() != expected {
        return Err(bad("unexpected number of rows"));
    }
    let mut it = rows.into_iter();
    let take_matrix = |r: usize, c: usize, it: &mut std::vec::IntoIter<Vec<f64>>| {
        let mut mat = DMatrix::zeros(r, c);
        for i in 0..r {
            let v = it.next().ok_or_else(|| bad("truncated matrix"))?;
            if v.len() != c {
                return Err(bad("row length"));
            }
            for (j, x) in v.into_iter().enumerate() {
                mat[(i, j)] = x;
            }
        }
        Ok(mat)
    };
    let p = take_matrix(n, n, &mut it)?;
    let take_vec = |len: usize, it: &mut std::vec::IntoIter<Vec<f64>>| -> Result<DVector<f64>> {
        if len == 0 {
            return Ok(DVector::zeros(0));
        }
        let v = it.next().ok_or_else(|| bad("truncated vector"))?;
        if v.len() != len {
            return Err(bad("vector length"));
        }
        Ok(DVector::from_vec(v))
    };
    let q = take_vec(n, &mut it)?;
    let a = take_matrix(m, n, &mut it)?;
    let l = take_vec(m, &mut it)?;
    let u = take_vec(m, &mut it)?;
    QpProblem::new(p, q, a, l, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let problem = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.25, 0.25, 1.0 / 3.0]),
            DVector::from_row_slice(&[-1.5, 1e-17]),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            DVector::from_row_slice(&[-1.0, -2.0, 0.0]),
            DVector::from_row_slice(&[1.0, 2.0, 0.0]),
        )
        .unwrap();
        let text = write_dump(&problem);
        assert!(text.starts_with("QP 2 3\n\n"));
        let back = parse_dump(&text).unwrap();
        assert_eq!(back.p(), problem.p());
        assert_eq!(back.q(), problem.q());
        assert_eq!(back.a(), problem.a());
        assert_eq!(back.l(), problem.l());
        assert_eq!(back.u(), problem.u());
    }

    #[test]
    fn rejects_truncated_dump() {
        assert!(parse_dump("QP 2 1\n\n1 0\n").is_err());
        assert!(parse_dump("LP 1 1").is_err());
    }
}
