//! Line-based text format.
//!
//! ```text
//! # pamlab-tree 1
//! # family=poisson1 seed=42 radius=200
//! 0 -1 0 1 2
//! 1 0 1 0 0
//! ```
//! One vertex per line: `id parent_id depth backbone_flag n_children`.
//! `seed=-` / `radius=-` mark missing values. Frontier vertices are exactly
//! those at depth `radius`.

use std::io::{BufRead, Write};

use super::{Tree, TreeInfo, VertexId};
use crate::error::{Error, Result};

pub const TREE_MAGIC: &str = "# pamlab-tree 1";

pub fn write_tree<W: Write>(tree: &Tree, out: &mut W) -> Result<()> {
    let info = tree.info();
    writeln!(out, "{TREE_MAGIC}")?;
    writeln!(
        out,
        "# family={} seed={} radius={}",
        info.family,
        opt(info.seed),
        opt(info.radius)
    )?;
    for v in 0..tree.len() as VertexId {
        let p = tree.parent(v).map_or(-1, i64::from);
        writeln!(
            out,
            "{v} {p} {} {} {}",
            tree.depth(v),
            u8::from(tree.is_backbone(v)),
            tree.n_children(v)
        )?;
    }
    Ok(())
}

fn opt<T: std::fmt::Display>(x: Option<T>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads a tree, stopping at the first line that is neither a vertex record
/// nor part of the tree header. Returns the tree and the number of lines
/// consumed (the stopping line is handed back, if any).
pub(crate) fn read_tree_prefix<R: BufRead>(input: &mut R) -> Result<(Tree, Option<(usize, String)>)> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((i, l)) => Ok(Some((i, l?))),
            None => Ok(None),
        }
    };
    match next_line()? {
        Some((_, l)) if l.trim_end() == TREE_MAGIC => {}
        Some((i, _)) => return Err(perr(i, "missing tree header")),
        None => return Err(perr(1, "empty input")),
    }
    let (hl, header) = next_line()?.ok_or_else(|| perr(2, "missing metadata line"))?;
    let info = parse_info(hl, &header)?;

    let mut parents = Vec::new();
    let mut backbone = Vec::new();
    let mut depths = Vec::new();
    let mut nkids = Vec::new();
    let mut rest = None;
    while let Some((i, l)) = next_line()? {
        if l.starts_with('#') {
            rest = Some((i, l));
            break;
        }
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 5 {
            return Err(perr(i, "expected 5 fields"));
        }
        let id: usize = f[0].parse().map_err(|_| perr(i, "bad id"))?;
        if id != parents.len() {
            return Err(perr(i, format!("expected id {}", parents.len())));
        }
        let p: i64 = f[1].parse().map_err(|_| perr(i, "bad parent"))?;
        let parent = match p {
            -1 => None,
            p if p >= 0 => Some(p as VertexId),
            _ => return Err(perr(i, "bad parent")),
        };
        parents.push(parent);
        depths.push(f[2].parse::<u32>().map_err(|_| perr(i, "bad depth"))?);
        backbone.push(match f[3] {
            "0" => false,
            "1" => true,
            _ => return Err(perr(i, "bad backbone flag")),
        });
        nkids.push(f[4].parse::<u32>().map_err(|_| perr(i, "bad child count"))?);
    }
    let frontier: Vec<bool> = match info.radius {
        Some(r) => depths.iter().map(|&d| d == r).collect(),
        None => vec![false; depths.len()],
    };
    let tree = Tree::from_parents(&parents, backbone, frontier, info).map_err(|e| perr(0, e.to_string()))?;
    for v in 0..tree.len() {
        if tree.depth(v as VertexId) != depths[v] || tree.n_children(v as VertexId) != nkids[v] {
            return Err(perr(v + 3, "record inconsistent with parent structure"));
        }
    }
    Ok((tree, rest))
}

pub fn read_tree<R: BufRead>(input: &mut R) -> Result<Tree> {
    let (tree, rest) = read_tree_prefix(input)?;
    if let Some((i, _)) = rest {
        return Err(perr(i, "unexpected section after tree"));
    }
    Ok(tree)
}

fn parse_info(line_no: usize, line: &str) -> Result<TreeInfo> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| perr(line_no, "metadata line must start with #"))?;
    let mut info = TreeInfo::default();
    for kv in body.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| perr(line_no, format!("bad metadata item {kv:?}")))?;
        match k {
            "family" => info.family = v.to_string(),
            "seed" if v == "-" => info.seed = None,
            "seed" => info.seed = Some(v.parse().map_err(|_| perr(line_no, "bad seed"))?),
            "radius" if v == "-" => info.radius = None,
            "radius" => info.radius = Some(v.parse().map_err(|_| perr(line_no, "bad radius"))?),
            _ => return Err(perr(line_no, format!("unknown metadata key {k:?}"))),
        }
    }
    Ok(info)
}
