//! Text formats: tree files, series CSV, and fixed-precision numbers.
//!
//! Tree file: a `ghost <length>` header, then one line per node,
//! `id parent edge_length child_rank`, in preorder. The root line reads
//! `0 - <ghost> 0`; child ranks start at 1.

use std::fmt::Write as _;

use thiserror::Error;

use crate::level_set::{LevelSetError, Series};
use crate::tree::{Tree, TreeError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("input is empty")]
    Empty,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Series(#[from] LevelSetError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

/// Rounds to 12 significant digits and prints the shortest representation
/// of the rounded value.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("valid float");
    format!("{rounded:?}")
}

pub fn write_tree(tree: &Tree) -> String {
    let mut out = String::new();
    let Some(ghost) = tree.ghost_edge_length() else {
        return out;
    };
    writeln!(out, "ghost {ghost}").unwrap();
    writeln!(out, "0 - {ghost} 0").unwrap();
    for v in 1..tree.len() {
        let p = tree.parent(v).unwrap();
        let rank = tree.children(p).iter().position(|&c| c == v).unwrap() + 1;
        writeln!(out, "{v} {p} {} {rank}", tree.node(v).length).unwrap();
    }
    out
}

pub fn read_tree(text: &str) -> Result<Tree, IoError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let Some((hl, header)) = lines.next() else {
        return Ok(Tree::empty());
    };
    let ghost: f64 = header
        .strip_prefix("ghost ")
        .ok_or_else(|| parse_err(hl, "expected `ghost <length>` header"))?
        .trim()
        .parse()
        .map_err(|e| parse_err(hl, format!("ghost length: {e}")))?;
    // (id, parent, length, rank)
    let mut rows: Vec<(usize, Option<usize>, f64, usize, usize)> = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(ln, "expected `id parent edge_length child_rank`"));
        }
        let num = |s: &str, what: &str| -> Result<usize, IoError> {
            s.parse().map_err(|e| parse_err(ln, format!("{what}: {e}")))
        };
        let id = num(f[0], "id")?;
        let parent = if f[1] == "-" { None } else { Some(num(f[1], "parent")?) };
        let length: f64 = f[2].parse().map_err(|e| parse_err(ln, format!("edge length: {e}")))?;
        let rank = num(f[3], "child rank")?;
        rows.push((id, parent, length, rank, ln));
    }
    let n = rows.len();
    let mut slot: Vec<Option<usize>> = vec![None; n];
    for (k, r) in rows.iter().enumerate() {
        if r.0 >= n || slot[r.0].replace(k).is_some() {
            return Err(parse_err(r.4, format!("node id {} duplicated or out of range", r.0)));
        }
    }
    let root_row = &rows[slot[0].unwrap()];
    if root_row.1.is_some() {
        return Err(parse_err(root_row.4, "node 0 must be the root (parent `-`)"));
    }
    // Order children by rank, then renumber so that node 0 comes first.
    let mut kids: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for r in &rows {
        match r.1 {
            Some(p) if p < n => kids[p].push((r.3, r.0)),
            Some(p) => return Err(parse_err(r.4, format!("parent {p} does not exist"))),
            None if r.0 != 0 => return Err(parse_err(r.4, "only node 0 may lack a parent")),
            None => {}
        }
    }
    let mut edges = vec![(0usize, 0.0f64); n - 1];
    for (p, list) in kids.iter_mut().enumerate() {
        list.sort_unstable();
        for (k, &(rank, c)) in list.iter().enumerate() {
            if rank != k + 1 {
                let ln = rows[slot[c].unwrap()].4;
                return Err(parse_err(ln, format!("child ranks of node {p} are not 1..k")));
            }
        }
    }
    // Tree::from_edges keeps sibling order from input order, so feed the
    // edges of each parent in rank order with ids remapped densely.
    let mut order = Vec::with_capacity(n);
    for list in &kids {
        for &(_, c) in list {
            order.push(c);
        }
    }
    let mut new_id = vec![0usize; n];
    for (k, &c) in order.iter().enumerate() {
        new_id[c] = k + 1;
    }
    for &c in &order {
        let r = &rows[slot[c].unwrap()];
        edges[new_id[c] - 1] = (new_id[r.1.unwrap()], r.2);
    }
    Ok(Tree::from_edges(&edges, ghost)?)
}

/// Reads one column of values (optional `value` header) or two columns
/// `t,value` with strictly increasing `t`.
pub fn read_series(text: &str) -> Result<Series, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut last_t: Option<f64> = None;
    let mut width: Option<usize> = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if k == 0 && matches!(rec.get(rec.len() - 1), Some("value")) {
            width = Some(rec.len());
            continue;
        }
        match *width.get_or_insert(rec.len()) {
            w if w != rec.len() => return Err(parse_err(line, format!("expected {w} columns"))),
            1 | 2 => {}
            w => return Err(parse_err(line, format!("expected 1 or 2 columns, found {w}"))),
        }
        let num = |s: &str| -> Result<f64, IoError> {
            let x: f64 = s.parse().map_err(|e| parse_err(line, format!("`{s}`: {e}")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(parse_err(line, "value is not finite"))
            }
        };
        if rec.len() == 2 {
            let t = num(&rec[0])?;
            if last_t.is_some_and(|p| t <= p) {
                return Err(parse_err(line, "time column is not strictly increasing"));
            }
            last_t = Some(t);
        }
        values.push(num(&rec[rec.len() - 1])?);
    }
    if values.is_empty() {
        return Err(IoError::Empty);
    }
    Ok(Series::new(values)?)
}

pub fn write_series(s: &Series) -> String {
    let mut out = String::from("value\n");
    for &x in s.values() {
        out.push_str(&fmt_num(x));
        out.push('\n');
    }
    out
}
