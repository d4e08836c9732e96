//! Plain-text file formats for fields, path ensembles and atom lists.
//!
//! Scalar file:
//! ```text
//! # scalar nx=<int> ny=<int> h=<float>
//! <ny rows of nx comma-separated values, row j = 0 first>
//! ```
//! Vector file: `# vector nx=.. ny=.. h=..`, then a `u:` line followed by `ny` rows of
//! `nx + 1` values and a `w:` line followed by `ny + 1` rows of `nx` values.
//!
//! Grids with a nonzero origin (padded grids) append `x0=<float> y0=<float>` to the header.
//! Floats are written with 17 significant digits so files round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use crate::beckmann::Atom;
use crate::error::{Error, Result};
use crate::field::{Grid2D, ScalarField, VectorField};
use crate::moser::{Path, PathEnsemble};
use crate::scalar::Real;

/// Formats a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, x: f64) -> std::io::Result<()> {
        w.write_all(fmt_float(x).as_bytes())
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, x: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(x))
    }
}

/// Serializes to single-line JSON with every float in [`fmt_float`] form, so equal
/// values always give identical bytes. Non-finite floats become `null`.
pub fn to_json<S: serde::Serialize>(value: &S) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats);
    value.serialize(&mut ser).map_err(|e| Error::SolverFailure(format!("cannot serialize report: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn header<T: Real>(kind: &str, g: &Grid2D<T>) -> String {
    let mut s = format!("# {kind} nx={} ny={} h={}", g.nx, g.ny, fmt_float(g.h.as_f64()));
    if g.origin[0] != T::zero() || g.origin[1] != T::zero() {
        let _ = write!(
            s,
            " x0={} y0={}",
            fmt_float(g.origin[0].as_f64()),
            fmt_float(g.origin[1].as_f64())
        );
    }
    s.push('\n');
    s
}

fn push_row<T: Real>(out: &mut String, row: &[T]) {
    for (k, v) in row.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(&fmt_float(v.as_f64()));
    }
    out.push('\n');
}

pub fn scalar_to_string<T: Real>(f: &ScalarField<T>) -> String {
    let g = f.grid;
    let mut out = header("scalar", &g);
    for row in f.values.chunks(g.nx) {
        push_row(&mut out, row);
    }
    out
}

pub fn vector_to_string<T: Real>(v: &VectorField<T>) -> String {
    let g = v.grid;
    let mut out = header("vector", &g);
    out.push_str("u:\n");
    for row in v.u.chunks(g.nx + 1) {
        push_row(&mut out, row);
    }
    out.push_str("w:\n");
    for row in v.w.chunks(g.nx) {
        push_row(&mut out, row);
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate() }
    }

    /// Next non-blank line with its 1-based number.
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        self.inner.by_ref().map(|(k, l)| (k + 1, l.trim())).find(|(_, l)| !l.is_empty())
    }

    fn expect_content(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next_content().ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {what}") })
    }
}

fn parse_header<T: Real>(line_no: usize, line: &str, kind: &str) -> Result<Grid2D<T>> {
    let perr = |msg: String| Error::Parse { line: line_no, msg };
    let rest = line
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|r| r.strip_prefix(kind))
        .ok_or_else(|| perr(format!("expected header `# {kind} nx=.. ny=.. h=..`")))?;
    let (mut nx, mut ny, mut h, mut x0, mut y0) = (None, None, None, 0.0, 0.0);
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| perr(format!("bad header token `{tok}`")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| perr(format!("bad number `{v}`")));
        match k {
            "nx" => nx = Some(v.parse::<usize>().map_err(|_| perr(format!("bad nx `{v}`")))?),
            "ny" => ny = Some(v.parse::<usize>().map_err(|_| perr(format!("bad ny `{v}`")))?),
            "h" => h = Some(num(v)?),
            "x0" => x0 = num(v)?,
            "y0" => y0 = num(v)?,
            _ => return Err(perr(format!("unknown header key `{k}`"))),
        }
    }
    let (nx, ny, h) = match (nx, ny, h) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(perr("header needs nx, ny and h".into())),
    };
    Grid2D::with_origin(nx, ny, T::lit(h), [T::lit(x0), T::lit(y0)])
}

fn parse_row<T: Real>(line_no: usize, line: &str, expect: usize) -> Result<Vec<T>> {
    let vals = line
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map(T::lit).map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad number `{}`", s.trim()),
            })
        })
        .collect::<Result<Vec<T>>>()?;
    if vals.len() != expect {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected {expect} values, found {}", vals.len()),
        });
    }
    Ok(vals)
}

fn parse_block<T: Real>(lines: &mut Lines<'_>, rows: usize, cols: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (n, l) = lines.expect_content("data row")?;
        out.extend(parse_row::<T>(n, l, cols)?);
    }
    Ok(out)
}

fn ensure_end(lines: &mut Lines<'_>) -> Result<()> {
    match lines.next_content() {
        None => Ok(()),
        Some((n, _)) => Err(Error::Parse { line: n, msg: "unexpected trailing data".into() }),
    }
}

pub fn parse_scalar<T: Real>(text: &str) -> Result<ScalarField<T>> {
    let mut lines = Lines::new(text);
    let (n, l) = lines.expect_content("header")?;
    let grid = parse_header::<T>(n, l, "scalar")?;
    let values = parse_block(&mut lines, grid.ny, grid.nx)?;
    ensure_end(&mut lines)?;
    ScalarField::from_values(grid, values)
}

pub fn parse_vector<T: Real>(text: &str) -> Result<VectorField<T>> {
    let mut lines = Lines::new(text);
    let (n, l) = lines.expect_content("header")?;
    let grid = parse_header::<T>(n, l, "vector")?;
    let mut block_tag = |tag: &str| -> Result<()> {
        let (n, l) = lines.expect_content(tag)?;
        if l == tag {
            Ok(())
        } else {
            Err(Error::Parse { line: n, msg: format!("expected `{tag}`") })
        }
    };
    block_tag("u:")?;
    let u = parse_block(&mut lines, grid.ny, grid.nx + 1)?;
    let (n, l) = lines.expect_content("w:")?;
    if l != "w:" {
        return Err(Error::Parse { line: n, msg: "expected `w:`".into() });
    }
    let w = parse_block(&mut lines, grid.ny + 1, grid.nx)?;
    ensure_end(&mut lines)?;
    VectorField::from_faces(grid, u, w)
}

/// `# paths count=<int>` then rows `path_id, weight, point_index, x, y`.
pub fn paths_to_string<T: Real>(q: &PathEnsemble<T>) -> String {
    let mut out = format!("# paths count={}\n", q.len());
    for (id, (p, w)) in q.paths().iter().zip(q.weights()).enumerate() {
        let w = fmt_float(w.as_f64());
        for (k, pt) in p.points().iter().enumerate() {
            let _ = writeln!(
                out,
                "{id},{w},{k},{},{}",
                fmt_float(pt[0].as_f64()),
                fmt_float(pt[1].as_f64())
            );
        }
    }
    out
}

pub fn parse_paths<T: Real>(text: &str) -> Result<PathEnsemble<T>> {
    let mut lines = Lines::new(text);
    let (n, l) = lines.expect_content("header")?;
    let count = l
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|r| r.strip_prefix("paths"))
        .map(str::trim)
        .and_then(|r| r.strip_prefix("count="))
        .and_then(|c| c.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Parse { line: n, msg: "expected `# paths count=<int>`".into() })?;
    let mut paths: Vec<Vec<[T; 2]>> = Vec::with_capacity(count);
    let mut weights: Vec<T> = Vec::with_capacity(count);
    while let Some((n, l)) = lines.next_content() {
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        let perr = |msg: &str| Error::Parse { line: n, msg: msg.to_string() };
        if f.len() != 5 {
            return Err(perr("expected `path_id, weight, point_index, x, y`"));
        }
        let id: usize = f[0].parse().map_err(|_| perr("bad path_id"))?;
        let k: usize = f[2].parse().map_err(|_| perr("bad point_index"))?;
        let num = |s: &str| s.parse::<f64>().map(T::lit).map_err(|_| perr("bad number"));
        let (w, x, y) = (num(f[1])?, num(f[3])?, num(f[4])?);
        if id == paths.len() {
            paths.push(Vec::new());
            weights.push(w);
        } else if id + 1 != paths.len() {
            return Err(perr("path ids must be consecutive starting at 0"));
        }
        let pts = paths.last_mut().expect("path pushed above");
        if k != pts.len() {
            return Err(perr("point indices must be consecutive starting at 0"));
        }
        pts.push([x, y]);
    }
    if paths.len() != count {
        return Err(Error::Parse {
            line: 0,
            msg: format!("header announces {count} paths, found {}", paths.len()),
        });
    }
    let paths = paths.into_iter().map(Path::new).collect::<Result<Vec<_>>>()?;
    PathEnsemble::new(paths, weights)
}

/// CSV rows `x, y, mass`; an optional non-numeric header line is skipped.
pub fn parse_atoms<T: Real>(text: &str) -> Result<Vec<Atom<T>>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: Option<Vec<f64>> = f.iter().map(|s| s.parse::<f64>().ok()).collect();
        match nums {
            Some(v) if v.len() == 3 => {
                out.push(Atom { pos: [T::lit(v[0]), T::lit(v[1])], mass: T::lit(v[2]) })
            }
            None if out.is_empty() && k == 0 => continue,
            _ => {
                return Err(Error::Parse { line: k + 1, msg: "expected `x, y, mass`".into() });
            }
        }
    }
    Ok(out)
}

pub fn atoms_to_string<T: Real>(atoms: &[Atom<T>]) -> String {
    let mut out = String::from("x,y,mass\n");
    for a in atoms {
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_float(a.pos[0].as_f64()),
            fmt_float(a.pos[1].as_f64()),
            fmt_float(a.mass.as_f64())
        );
    }
    out
}

pub fn read_scalar<T: Real>(path: impl AsRef<FsPath>) -> Result<ScalarField<T>> {
    parse_scalar(&fs::read_to_string(path)?)
}

pub fn read_vector<T: Real>(path: impl AsRef<FsPath>) -> Result<VectorField<T>> {
    parse_vector(&fs::read_to_string(path)?)
}

pub fn read_paths<T: Real>(path: impl AsRef<FsPath>) -> Result<PathEnsemble<T>> {
    parse_paths(&fs::read_to_string(path)?)
}

pub fn read_atoms<T: Real>(path: impl AsRef<FsPath>) -> Result<Vec<Atom<T>>> {
    parse_atoms(&fs::read_to_string(path)?)
}

pub fn write_scalar<T: Real>(path: impl AsRef<FsPath>, f: &ScalarField<T>) -> Result<()> {
    Ok(fs::write(path, scalar_to_string(f))?)
}

pub fn write_vector<T: Real>(path: impl AsRef<FsPath>, v: &VectorField<T>) -> Result<()> {
    Ok(fs::write(path, vector_to_string(v))?)
}

pub fn write_paths<T: Real>(path: impl AsRef<FsPath>, q: &PathEnsemble<T>) -> Result<()> {
    Ok(fs::write(path, paths_to_string(q))?)
}

pub fn write_atoms<T: Real>(path: impl AsRef<FsPath>, atoms: &[Atom<T>]) -> Result<()> {
    Ok(fs::write(path, atoms_to_string(atoms))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_floats_are_fixed_width() {
        #[derive(serde::Serialize)]
        struct R {
            a: f64,
            b: u32,
        }
        assert_eq!(to_json(&R { a: 0.1, b: 3 }).unwrap(), r#"{"a":1.0000000000000001e-1,"b":3}"#);
        let back: serde_json::Value = serde_json::from_str(&to_json(&R { a: 0.1, b: 3 }).unwrap()).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
        assert_eq!(to_json(&R { a: f64::NAN, b: 0 }).unwrap(), r#"{"a":null,"b":0}"#);
    }

    #[test]
    fn scalar_format_layout() {
        let g = Grid2D::<f64>::new(3, 2, 0.5).unwrap();
        let f = ScalarField::from_values(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = scalar_to_string(&f);
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "# scalar nx=3 ny=2 h=5.0000000000000000e-1");
        assert!(lines.next().unwrap().starts_with("1.0000000000000000e0,2.0"));
        assert_eq!(lines.count(), 1);
        assert_eq!(parse_scalar::<f64>(&s).unwrap(), f);
    }

    #[test]
    fn vector_round_trip_with_origin() {
        let g = Grid2D::<f64>::unit_square(3).unwrap().padded(2);
        let v = VectorField::from_fn(g, |x, y| [x * 0.1 + 1.0 / 3.0, y.sin()]);
        let s = vector_to_string(&v);
        assert!(s.starts_with("# vector nx=7 ny=7 h="));
        assert!(s.lines().next().unwrap().contains("x0="));
        assert_eq!(parse_vector::<f64>(&s).unwrap(), v);
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(matches!(parse_scalar::<f64>("# vector nx=2 ny=2 h=0.5\n"), Err(Error::Parse { .. })));
        assert!(parse_scalar::<f64>("# scalar nx=2 ny=2 h=0.5\n1,2\n3\n").is_err());
        assert!(parse_scalar::<f64>("# scalar nx=2 ny=2 h=0.5\n1,2\n3,4\n5,6\n").is_err());
        assert!(parse_scalar::<f64>("").is_err());
        assert!(parse_vector::<f64>("# vector nx=2 ny=2 h=0.5\nu:\n1,2,3\n").is_err());
    }

    #[test]
    fn atoms_with_and_without_header() {
        let a = parse_atoms::<f64>("x,y,mass\n0.1, 0.2, 0.5\n0.3,0.4,0.5\n").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].pos, [0.3, 0.4]);
        let b = parse_atoms::<f64>(&atoms_to_string(&a)).unwrap();
        assert_eq!(a, b);
        assert!(parse_atoms::<f64>("0.1,0.2\n").is_err());
        assert!(parse_atoms::<f64>("").unwrap().is_empty());
    }

    #[test]
    fn paths_round_trip() {
        let p1 = Path::new(vec![[0.1, 0.1], [0.2, 0.3], [0.5, 0.5]]).unwrap();
        let p2 = Path::new(vec![[0.9, 0.9], [0.8, 0.8]]).unwrap();
        let q = PathEnsemble::new(vec![p1, p2], vec![0.25, 0.75]).unwrap();
        let s = paths_to_string(&q);
        assert!(s.starts_with("# paths count=2\n0,2.5000000000000000e-1,0,"));
        let back = parse_paths::<f64>(&s).unwrap();
        assert_eq!(back.paths(), q.paths());
        assert_eq!(back.weights(), q.weights());
    }
}
