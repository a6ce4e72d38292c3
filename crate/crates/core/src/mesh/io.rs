//! Plain-text mesh format.
//!
//! ```text
//! DOTMESH v1 <node_count> <element_count> <boundary_edge_count>
//! x y            (one line per node, 17 significant digits)
//! a b c          (one line per element)
//! a b            (one line per boundary edge)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, Point2};
use crate::error::{Error, Result};
use crate::provenance::fmt_f64;

const MAGIC: &str = "DOTMESH";
const VERSION: &str = "v1";

impl Mesh {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(48 * self.node_count());
        let _ = writeln!(
            out,
            "{MAGIC} {VERSION} {} {} {}",
            self.node_count(),
            self.element_count(),
            self.boundary_edges().len()
        );
        for p in self.nodes() {
            let _ = writeln!(out, "{} {}", fmt_f64(p.x), fmt_f64(p.y));
        }
        for [a, b, c] in self.elements() {
            let _ = writeln!(out, "{a} {b} {c}");
        }
        for [a, b] in self.boundary_edges() {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty mesh file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != MAGIC || fields[1] != VERSION {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad header {header:?}"),
            });
        }
        let count = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line: 1,
                msg: e.to_string(),
            })
        };
        let (n, m, b) = (count(fields[2])?, count(fields[3])?, count(fields[4])?);

        let mut nodes = Vec::with_capacity(n);
        let mut elements = Vec::with_capacity(m);
        let mut boundary = Vec::with_capacity(b);
        for _ in 0..n {
            let [x, y] = parse_row::<f64, 2>(lines.next())?;
            nodes.push(Point2::new(x, y));
        }
        for _ in 0..m {
            elements.push(parse_row::<usize, 3>(lines.next())?);
        }
        for _ in 0..b {
            boundary.push(parse_row::<usize, 2>(lines.next())?);
        }
        if let Some((i, _)) = lines.next() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "trailing content after boundary edges".into(),
            });
        }
        Mesh::from_parts(nodes, elements, boundary)
    }

    /// SHA-256 of the text serialization.
    pub fn hash(&self) -> String {
        crate::provenance::sha256_hex(self.to_text().as_bytes())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_row<T, const N: usize>(line: Option<(usize, &str)>) -> Result<[T; N]>
where
    T: std::str::FromStr + Copy + Default,
    T::Err: std::fmt::Display,
{
    let (i, line) = line.ok_or(Error::Parse {
        line: 0,
        msg: "unexpected end of mesh file".into(),
    })?;
    let mut out = [T::default(); N];
    let mut it = line.split_whitespace();
    for slot in out.iter_mut() {
        let tok = it.next().ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected {N} fields"),
        })?;
        *slot = tok.parse().map_err(|e: T::Err| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
    }
    if it.next().is_some() {
        return Err(Error::Parse {
            line: i + 1,
            msg: format!("expected {N} fields"),
        });
    }
    Ok(out)
}
