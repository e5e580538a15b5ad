//! The unique-disjointness circuit `(1 - Σ_{uv ∈ E} x_u x_v)²`.

use std::path::Path;

use crate::circuit::{CircuitBuilder, ProductKind, Reparam};
use crate::error::{Error, Result};
use crate::input::InputFamily;
use crate::squaring::{square, SquaredCircuit};

/// Largest vertex count for which the communication matrix is dumped.
pub const MAX_MATRIX_VERTICES: usize = 16;

/// Undirected simple graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidArgument("graph needs at least one vertex".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(u, v) in &edges {
            if u >= vertex_count || v >= vertex_count {
                return Err(Error::InvalidArgument(format!("edge ({u}, {v}) references a missing vertex")));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop at vertex {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Graph { vertex_count, edges })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Edge-list text: the first non-comment line is the vertex count, each
    /// later line holds one edge `u v` (0-based). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vertex_count = None;
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Ingest { line: Some(line_no), message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("'{s}' is not a vertex index")));
            match (vertex_count, fields.as_slice()) {
                (None, [n]) => vertex_count = Some(num(n)?),
                (None, _) => return Err(err("expected the vertex count".into())),
                (Some(_), [u, v]) => edges.push((num(u)?, num(v)?)),
                (Some(_), _) => return Err(err(format!("expected 'u v', got '{line}'"))),
            }
        }
        let n = vertex_count.ok_or(Error::Ingest { line: None, message: "empty edge list".into() })?;
        Graph::new(n, edges).map_err(|e| Error::Ingest { line: None, message: e.to_string() })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.vertex_count);
        for (u, v) in &self.edges {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }
}

/// Build `c = a - b` and square it. Every vertex has an indicator input
/// over its two states. Unit 0 of the gadget sums is `1[x=0] + 1[x=1]`,
/// so their product `a` is the constant 1; unit `e` keeps only `1[x=1]`
/// at the two endpoints of edge `e` and the constant elsewhere, so its
/// product is `x_u x_v` smoothed over the other variables.
pub fn udisj_circuit(g: &Graph) -> Result<SquaredCircuit> {
    let n = g.vertex_count;
    let e = g.edges.len();
    let mut b = CircuitBuilder::new(n);
    let mut gadgets = Vec::with_capacity(n);
    for v in 0..n {
        let input = b.input(v, InputFamily::Embedding { states: 2 }, 2, false)?;
        let block = b.layer(input).params[0];
        b.params_mut().set_block_effective(block, &[1.0, 0.0, 0.0, 1.0])?;
        let sum = b.sum(input, e + 1, Reparam::Identity)?;
        let mut w = vec![1.0, 1.0];
        for &(x, y) in &g.edges {
            w.extend(if x == v || y == v { [0.0, 1.0] } else { [1.0, 1.0] });
        }
        let block = b.layer(sum).params[0];
        b.params_mut().set_block_effective(block, &w)?;
        gadgets.push(sum);
    }
    let prod = if n == 1 { gadgets[0] } else { b.product(ProductKind::Hadamard, gadgets)? };
    let root = b.sum(prod, 1, Reparam::Identity)?;
    let mut w = vec![-1.0; e + 1];
    w[0] = 1.0;
    let block = b.layer(root).params[0];
    b.params_mut().set_block_effective(block, &w)?;
    square(b.finish(root, None)?)
}

/// Assignments of `n` Boolean variables ordered by the number of ones,
/// then lexicographically by the positions of the ones
/// (`000, 100, 010, 001, 110, 101, 011, 111`).
pub fn assignment_order(n: usize) -> Vec<Vec<u8>> {
    let mut all: Vec<Vec<u8>> = (0..1usize << n)
        .map(|bits| (0..n).map(|i| ((bits >> i) & 1) as u8).collect())
        .collect();
    all.sort_by_key(|x| {
        let ones: Vec<usize> = (0..n).filter(|&i| x[i] == 1).collect();
        (ones.len(), ones)
    });
    all
}

/// Communication matrix of the squared circuit for the split of the
/// vertices into the first `⌊n/2⌋` (rows) and the rest (columns). Entries
/// are integers; a value further than 1e-9 from one is a numeric error.
pub fn communication_matrix(c2: &SquaredCircuit) -> Result<CommunicationMatrix> {
    let n = c2.variable_count();
    if n > MAX_MATRIX_VERTICES {
        return Err(Error::InvalidArgument(format!(
            "communication matrix limited to {MAX_MATRIX_VERTICES} vertices, got {n}"
        )));
    }
    let ny = n / 2;
    let rows = assignment_order(ny);
    let cols = assignment_order(n - ny);
    let ev = c2.evaluator();
    let values = crate::par::try_map(rows.len(), |i| {
        cols.iter()
            .map(|z| {
                let point: Vec<Option<f64>> = rows[i].iter().chain(z).map(|&b| Some(b as f64)).collect();
                let v = ev.value(&point)?.to_linear();
                let k = v.round();
                if (v - k).abs() > 1e-9 {
                    return Err(Error::numeric(format!("non-integer entry {v}")));
                }
                Ok(k as i64)
            })
            .collect::<Result<Vec<i64>>>()
    })?;
    Ok(CommunicationMatrix { rows, cols, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunicationMatrix {
    pub rows: Vec<Vec<u8>>,
    pub cols: Vec<Vec<u8>>,
    pub values: Vec<Vec<i64>>,
}

impl CommunicationMatrix {
    pub fn to_csv(&self) -> String {
        let label = |x: &[u8]| x.iter().map(|b| b.to_string()).collect::<String>();
        let mut s = String::from("y\\z");
        for c in &self.cols {
            s.push(',');
            s.push_str(&label(c));
        }
        s.push('\n');
        for (r, row) in self.rows.iter().zip(&self.values) {
            s.push_str(&label(r));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::squaring::enumerate_assignments;

    fn matching() -> Graph {
        Graph::new(6, vec![(0, 3), (1, 4), (2, 5)]).unwrap()
    }

    #[test]
    fn matching_table() {
        let m = communication_matrix(&udisj_circuit(&matching()).unwrap()).unwrap();
        let want = [
            [1, 1, 1, 1, 1, 1, 1, 1],
            [1, 0, 1, 1, 0, 0, 1, 0],
            [1, 1, 0, 1, 0, 1, 0, 0],
            [1, 1, 1, 0, 1, 0, 0, 0],
            [1, 0, 0, 1, 1, 0, 0, 1],
            [1, 0, 1, 0, 0, 1, 0, 1],
            [1, 1, 0, 0, 0, 0, 1, 1],
            [1, 0, 0, 0, 1, 1, 1, 4],
        ];
        for (got, want) in m.values.iter().zip(want) {
            assert_eq!(got.as_slice(), want.as_slice());
        }
        assert_eq!(m.rows[7], vec![1, 1, 1]);
        assert_eq!(m.values[1][1], 0);
    }

    #[test]
    fn perfect_square_everywhere() {
        let g = Graph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]).unwrap();
        let c2 = udisj_circuit(&g).unwrap();
        let ev = c2.evaluator();
        for x in enumerate_assignments(&[2; 5]) {
            let s: f64 = g.edges().iter().map(|&(u, v)| x[u] * x[v]).sum();
            let point: Vec<Option<f64>> = x.iter().map(|&v| Some(v)).collect();
            let y = ev.value(&point).unwrap();
            assert!(y.sign >= 0.0);
            assert!((y.to_linear() - (1.0 - s).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn order_and_parsing() {
        let o = assignment_order(3);
        let labels: Vec<String> = o.iter().map(|x| x.iter().map(|b| b.to_string()).collect()).collect();
        assert_eq!(labels, ["000", "100", "010", "001", "110", "101", "011", "111"]);
        let g = Graph::parse("# matching\n6\n0 3\n1 4\n\n2 5 # last\n").unwrap();
        assert_eq!(g, matching());
        assert_eq!(Graph::parse(&g.to_text()).unwrap(), g);
        assert!(matches!(Graph::parse("3\n0 x\n"), Err(Error::Ingest { line: Some(2), .. })));
        assert!(Graph::parse("2\n0 1\n1 0\n").is_err());
        assert!(Graph::parse("2\n0 0\n").is_err());
    }
}
