//! Plain-text mesh format.
//!
//! ```text
//! # comment
//! nodes N
//! <id> <x> <y>                         (N lines, ids 0..N-1 in order)
//! elements M
//! <id> tri3|quad4 <n1> <n2> <n3> [<n4>] <region>
//! facets K                             (optional section)
//! <id> <n1> <n2> <tag>
//! ```
//!
//! Coordinates are written in shortest round-trip form, so a write/parse
//! cycle reproduces them bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::scalar::Real;

use super::{Element, ElementKind, Facet, Mesh, MeshError};

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { line, message: message.into() }
}

fn field<V: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<V, MeshError> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| parse_err(line, format!("bad {what} '{tok}'")))
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), MeshError> {
        let item = self.lines.get(self.pos).copied().ok_or_else(|| parse_err(0, format!("unexpected end of {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    /// Consumes `<name> <count>` if it is the next line.
    fn section(&mut self, name: &str) -> Result<Option<usize>, MeshError> {
        let Some(&(ln, l)) = self.lines.get(self.pos) else {
            return Ok(None);
        };
        let mut it = l.split_whitespace();
        if it.next() != Some(name) {
            return Ok(None);
        }
        self.pos += 1;
        field(it.next(), ln, "count").map(Some)
    }
}

pub fn parse_mesh<T: Real>(text: &str) -> Result<Mesh<T>, MeshError> {
    let mut cur = Cursor {
        lines: text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect(),
        pos: 0,
    };

    let n_nodes = cur.section("nodes")?.ok_or_else(|| parse_err(1, "expected 'nodes <count>'"))?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for expected in 0..n_nodes {
        let (ln, l) = cur.next("node list")?;
        let mut it = l.split_whitespace();
        let id: usize = field(it.next(), ln, "node id")?;
        if id != expected {
            return Err(parse_err(ln, format!("node id {id} out of sequence, expected {expected}")));
        }
        let x: T = field(it.next(), ln, "x coordinate")?;
        let y: T = field(it.next(), ln, "y coordinate")?;
        nodes.push([x, y]);
    }

    let n_elements = cur.section("elements")?.ok_or_else(|| {
        let ln = cur.lines.get(cur.pos).map_or(0, |l| l.0);
        parse_err(ln, "expected 'elements <count>'")
    })?;
    let mut elements = Vec::with_capacity(n_elements);
    for expected in 0..n_elements {
        let (ln, l) = cur.next("element list")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let id: usize = field(toks.first().copied(), ln, "element id")?;
        if id != expected {
            return Err(parse_err(ln, format!("element id {id} out of sequence, expected {expected}")));
        }
        let kind_name = toks.get(1).copied().unwrap_or("");
        let kind = ElementKind::from_name(kind_name)
            .ok_or_else(|| parse_err(ln, format!("unknown element kind '{kind_name}'")))?;
        let n = kind.node_count();
        if toks.len() != n + 3 {
            return Err(parse_err(ln, format!("{} needs {} nodes and a region tag", kind.name(), n)));
        }
        let conn: Vec<usize> =
            toks[2..2 + n].iter().map(|t| field(Some(t), ln, "node index")).collect::<Result<_, _>>()?;
        let region: u32 = field(Some(toks[2 + n]), ln, "region tag")?;
        elements.push(Element::new(kind, &conn, region));
    }

    let mut facets = Vec::new();
    if let Some(n_facets) = cur.section("facets")? {
        for expected in 0..n_facets {
            let (ln, l) = cur.next("facet list")?;
            let mut it = l.split_whitespace();
            let id: usize = field(it.next(), ln, "facet id")?;
            if id != expected {
                return Err(parse_err(ln, format!("facet id {id} out of sequence, expected {expected}")));
            }
            let a = field(it.next(), ln, "facet node")?;
            let b = field(it.next(), ln, "facet node")?;
            let tag = field(it.next(), ln, "facet tag")?;
            facets.push(Facet { nodes: [a, b], tag });
        }
    }
    if let Some(&(ln, _)) = cur.lines.get(cur.pos) {
        return Err(parse_err(ln, "trailing content"));
    }
    Mesh::new(nodes, elements, facets)
}

pub fn write_mesh<T: Real>(mesh: &Mesh<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "nodes {}", mesh.node_count());
    for (i, p) in mesh.nodes().iter().enumerate() {
        let _ = writeln!(s, "{i} {} {}", p[0], p[1]);
    }
    let _ = writeln!(s, "elements {}", mesh.element_count());
    for (i, el) in mesh.elements().iter().enumerate() {
        let _ = write!(s, "{i} {}", el.kind.name());
        for n in el.nodes() {
            let _ = write!(s, " {n}");
        }
        let _ = writeln!(s, " {}", el.region);
    }
    if !mesh.facets().is_empty() {
        let _ = writeln!(s, "facets {}", mesh.facets().len());
        for (i, f) in mesh.facets().iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", f.nodes[0], f.nodes[1], f.tag);
        }
    }
    s
}

pub fn load_mesh<T: Real>(path: impl AsRef<Path>) -> Result<Mesh<T>, MeshError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| MeshError::Io { path: path.display().to_string(), source })?;
    parse_mesh(&text)
}

pub fn save_mesh<T: Real>(mesh: &Mesh<T>, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let path = path.as_ref();
    std::fs::write(path, write_mesh(mesh)).map_err(|source| MeshError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# two triangles\nnodes 4\n0 0 0\n1 1 0\n2 1 1\n3 0 1\nelements 2\n0 tri3 0 1 2 1\n1 tri3 0 2 3 2\nfacets 1\n0 0 1 7\n";

    #[test]
    fn parses_sample() {
        let m: Mesh<f64> = parse_mesh(SAMPLE).unwrap();
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.elements()[1].region, 2);
        assert_eq!(m.facets()[0].tag, 7);
    }

    #[test]
    fn unknown_kind_reports_line() {
        let bad = SAMPLE.replace("1 tri3 0 2 3 2", "1 hex8 0 2 3 2");
        match parse_mesh::<f64>(&bad) {
            Err(MeshError::Parse { line, message }) => {
                assert_eq!(line, 9);
                assert!(message.contains("hex8"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let text = "nodes 3\n0 0.1 0.30000000000000004\n1 1.2345678901234567 0\n2 0.5 0.9999999999999999\nelements 1\n0 tri3 0 1 2 1\n";
        let m: Mesh<f64> = parse_mesh(text).unwrap();
        let again: Mesh<f64> = parse_mesh(&write_mesh(&m)).unwrap();
        for (a, b) in m.nodes().iter().zip(again.nodes()) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }
}
