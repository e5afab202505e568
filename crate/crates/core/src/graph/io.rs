use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Result, UNLABELED};

pub const EDGE_FILE: &str = "edges.txt";
pub const FEATURE_FILE: &str = "features.txt";
pub const LABEL_FILE: &str = "labels.txt";
pub const FLAG_FILE: &str = "flags.txt";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Rescale feature rows to unit L1 norm after parsing.
    pub l1_normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { l1_normalize: true }
    }
}

/// What the loader merged or dropped while canonicalizing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub edge_lines: usize,
    pub self_loops_dropped: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    num_classes: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GraphError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| GraphError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse { file: path.display().to_string(), line, message: message.into() }
}

/// Loads a graph from an edge list, a dense feature matrix and a label vector.
///
/// The node count is the number of label lines.
pub fn load_graph(
    edge_file: &Path,
    feature_file: &Path,
    label_file: &Path,
    opts: LoadOptions,
) -> Result<(Graph, LoadReport)> {
    let labels = parse_labels(label_file)?;
    let features = parse_features(feature_file)?;
    if features.nrows() != labels.len() {
        return Err(GraphError::FeatureRowCount { rows: features.nrows(), num_nodes: labels.len() });
    }
    let edges = parse_edges(edge_file)?;
    let edge_lines = edges.len();
    let (g, self_loops) = Graph::from_edges(features, labels, None, edges)?;
    if self_loops > 0 {
        log::warn!("{}: dropped {self_loops} self-loop lines", edge_file.display());
    }
    let g = if opts.l1_normalize { g.l1_normalized() } else { g };
    Ok((g, LoadReport { edge_lines, self_loops_dropped: self_loops }))
}

/// Loads a graph directory written by [`save_graph_dir`] or laid out by hand
/// with `edges.txt`, `features.txt` and `labels.txt`. Optional `flags.txt`
/// (1 = real, 0 = pseudo) and `meta.json` are honored.
///
/// A directory without `edges.txt` but with a `<name>.content` /
/// `<name>.cites` pair is read with [`load_linqs`].
pub fn load_graph_dir(dir: &Path, opts: LoadOptions) -> Result<(Graph, LoadReport)> {
    if !dir.join(EDGE_FILE).exists() {
        if let Some(stem) = linqs_stem(dir) {
            return load_linqs(&dir.join(format!("{stem}.content")), &dir.join(format!("{stem}.cites")), opts);
        }
    }
    let (g, report) = load_graph(&dir.join(EDGE_FILE), &dir.join(FEATURE_FILE), &dir.join(LABEL_FILE), opts)?;
    let meta_path = dir.join(META_FILE);
    let num_classes = if meta_path.exists() {
        let meta: Meta =
            serde_json::from_str(&read(&meta_path)?).map_err(|e| parse_err(&meta_path, 1, e.to_string()))?;
        Some(meta.num_classes.max(g.num_classes()))
    } else {
        None
    };
    let flag_path = dir.join(FLAG_FILE);
    let real = if flag_path.exists() {
        let text = read(&flag_path)?;
        let flags = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| match l.trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(parse_err(&flag_path, i + 1, format!("expected 0 or 1, found {other:?}"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        if flags.len() != g.num_nodes() {
            return Err(parse_err(&flag_path, flags.len(), "flag count differs from node count"));
        }
        Some(flags)
    } else {
        None
    };
    if num_classes.is_none() && real.is_none() {
        return Ok((g, report));
    }
    let edges: Vec<_> = g.edges().collect();
    let real = real.unwrap_or_else(|| vec![true; g.num_nodes()]);
    let (g, _) = Graph::build(g.features.clone(), g.labels.clone(), real, num_classes, edges)?;
    Ok((g, report))
}

/// Writes the canonical text form of `g` into `dir`.
///
/// Loading the result with normalization disabled reproduces `g` exactly.
pub fn save_graph_dir(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GraphError::Io { path: dir.display().to_string(), message: e.to_string() })?;
    let mut edges = String::new();
    for (u, v) in g.edges() {
        writeln!(edges, "{u} {v}").unwrap();
    }
    write(&dir.join(EDGE_FILE), &edges)?;

    let mut feats = String::new();
    for row in g.features().rows() {
        let mut first = true;
        for x in row {
            if !first {
                feats.push(' ');
            }
            write!(feats, "{x}").unwrap();
            first = false;
        }
        feats.push('\n');
    }
    write(&dir.join(FEATURE_FILE), &feats)?;

    let mut labels = String::new();
    for l in g.labels() {
        writeln!(labels, "{}", l.map_or(UNLABELED, |l| l as i64)).unwrap();
    }
    write(&dir.join(LABEL_FILE), &labels)?;

    let flag_path = dir.join(FLAG_FILE);
    if g.num_pseudo() > 0 {
        let flags: String = g.pseudo_flags().iter().map(|&r| if r { "1\n" } else { "0\n" }).collect();
        write(&flag_path, &flags)?;
    } else if flag_path.exists() {
        let _ = fs::remove_file(&flag_path);
    }
    let meta = serde_json::to_string(&Meta { num_classes: g.num_classes() }).unwrap();
    write(&dir.join(META_FILE), &meta)
}

fn linqs_stem(dir: &Path) -> Option<String> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            name.strip_suffix(".content").map(str::to_string)
        })
        .filter(|stem| dir.join(format!("{stem}.cites")).exists())
        .collect();
    stems.sort();
    (stems.len() == 1).then(|| stems.remove(0))
}

/// Reads the LINQS citation layout: `<id> <x_1> .. <x_d> <class>` rows and
/// `<cited> <citing>` pairs. Nodes follow row order; classes are numbered
/// by sorted name. Citations naming unknown ids are dropped.
pub fn load_linqs(content: &Path, cites: &Path, opts: LoadOptions) -> Result<(Graph, LoadReport)> {
    let text = read(content)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 3 {
            return Err(parse_err(content, i + 1, "expected id, features and class"));
        }
        let feats = &toks[1..toks.len() - 1];
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(GraphError::RaggedFeatures { row: ids.len(), expected: w, found: feats.len() })
            }
            _ => {}
        }
        for tok in feats {
            data.push(tok.parse::<f64>().map_err(|_| parse_err(content, i + 1, format!("bad number {tok:?}")))?);
        }
        if ids.insert(toks[0].to_string(), ids.len()).is_some() {
            return Err(parse_err(content, i + 1, format!("duplicate id {:?}", toks[0])));
        }
        class_names.push(toks[toks.len() - 1].to_string());
    }
    let n = ids.len();
    let mut sorted: Vec<&String> = class_names.iter().collect();
    sorted.sort();
    sorted.dedup();
    let labels = class_names.iter().map(|c| Some(sorted.binary_search(&c).unwrap())).collect();
    let features = Array2::from_shape_vec((n, width.unwrap_or(0)), data).expect("rectangular by construction");

    let text = read(cites)?;
    let mut edges = Vec::new();
    let mut edge_lines = 0;
    let mut unknown = 0;
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(parse_err(cites, i + 1, "expected two paper ids"));
        }
        edge_lines += 1;
        match (ids.get(toks[0]), ids.get(toks[1])) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => unknown += 1,
        }
    }
    if unknown > 0 {
        log::warn!("{}: dropped {unknown} citations to unknown ids", cites.display());
    }
    let (g, self_loops) = Graph::from_edges(features, labels, None, edges)?;
    let g = if opts.l1_normalize { g.l1_normalized() } else { g };
    Ok((g, LoadReport { edge_lines, self_loops_dropped: self_loops }))
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = it.next().ok_or_else(|| parse_err(path, i + 1, "expected two node ids"))?;
            tok.parse().map_err(|_| parse_err(path, i + 1, format!("bad node id {tok:?}")))
        };
        let u = next()?;
        let v = next()?;
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_features(path: &Path) -> Result<Array2<f64>> {
    let text = read(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| parse_err(path, i + 1, format!("bad number {tok:?}")))?;
            data.push(x);
        }
        let found = data.len() - before;
        match width {
            None => width = Some(found),
            Some(w) if w != found => {
                return Err(GraphError::RaggedFeatures { row: rows, expected: w, found });
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, width.unwrap_or(0)), data).expect("rectangular by construction"))
}

fn parse_labels(path: &Path) -> Result<Vec<Option<usize>>> {
    let text = read(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let l: i64 = line.parse().map_err(|_| parse_err(path, i + 1, format!("bad label {line:?}")))?;
        labels.push(match l {
            l if l >= 0 => Some(l as usize),
            UNLABELED => None,
            other => return Err(parse_err(path, i + 1, format!("negative label {other}"))),
        });
    }
    Ok(labels)
}
