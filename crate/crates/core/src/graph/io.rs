use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{canonical, AttributedGraph, Edge};
use crate::error::{NoradError, Result};
use crate::tensor::Tensor;

/// Layout of the node attribute file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFormat {
    /// `node_id<TAB>b_1 … b_D`
    Features,
    /// `node_id<TAB>b_1 … b_D<TAB>label`
    Content,
}

/// String node ids mapped to dense indices in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeIndex {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeIndex {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(NoradError::Consistency(format!("duplicate node id {name}")));
            }
        }
        Ok(NodeIndex { names, index })
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeList {
    pub edges: Vec<Edge>,
    pub duplicates: usize,
    pub self_loops: usize,
}

#[derive(Clone, Debug)]
pub struct FeatureTable {
    pub features: Tensor,
    pub nodes: NodeIndex,
    pub labels: Option<Vec<usize>>,
    pub label_names: Option<Vec<String>>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| NoradError::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> NoradError {
    NoradError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads `src<TAB>dst` pairs. Without a node index, ids are dense integers;
/// with one, ids are resolved through it and unknown ids are a consistency
/// error. Output is undirected and deduplicated; self-loops are dropped.
pub fn load_edge_list(path: &Path, nodes: Option<&NodeIndex>) -> Result<EdgeList> {
    let text = read(path)?;
    let mut seen = HashSet::new();
    let mut out = EdgeList {
        edges: Vec::new(),
        duplicates: 0,
        self_loops: 0,
    };
    for (line, content) in data_lines(&text) {
        let mut parts = content.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, line, "expected two node ids"));
        };
        let resolve = |tok: &str| -> Result<usize> {
            match nodes {
                Some(idx) => idx.lookup(tok).ok_or_else(|| {
                    NoradError::Consistency(format!(
                        "{}:{line}: node id {tok} not present in the feature table",
                        path.display()
                    ))
                }),
                None => tok
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("invalid node id {tok:?}"))),
            }
        };
        let (i, j) = (resolve(a)?, resolve(b)?);
        if i == j {
            out.self_loops += 1;
            continue;
        }
        if seen.insert(canonical(i, j)) {
            out.edges.push(canonical(i, j));
        } else {
            out.duplicates += 1;
        }
    }
    if out.self_loops > 0 {
        log::warn!("{}: dropped {} self-loops", path.display(), out.self_loops);
    }
    out.edges.sort_unstable();
    Ok(out)
}

fn parse_binary(path: &Path, line: usize, tok: &str) -> Result<f64> {
    match tok {
        "0" => Ok(0.0),
        "1" => Ok(1.0),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
            Ok(v) => Err(NoradError::Domain(format!(
                "{}:{line}: non-binary feature value {v}",
                path.display()
            ))),
            Err(_) => Err(parse_err(path, line, format!("invalid feature value {other:?}"))),
        },
    }
}

fn load_table(path: &Path, with_label: bool) -> Result<FeatureTable> {
    let text = read(path)?;
    let mut names = Vec::new();
    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width = None;
    for (line, content) in data_lines(&text) {
        let toks: Vec<&str> = content.split_whitespace().collect();
        let min = if with_label { 3 } else { 2 };
        if toks.len() < min {
            return Err(parse_err(path, line, "too few columns"));
        }
        let bits = if with_label {
            &toks[1..toks.len() - 1]
        } else {
            &toks[1..]
        };
        match width {
            None => width = Some(bits.len()),
            Some(w) if w != bits.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {w} feature columns, found {}", bits.len()),
                ))
            }
            _ => {}
        }
        names.push(toks[0].to_string());
        for tok in bits {
            data.push(parse_binary(path, line, tok)?);
        }
        if with_label {
            raw_labels.push(toks[toks.len() - 1].to_string());
        }
    }
    let Some(d) = width else {
        return Err(parse_err(path, 0, "no rows"));
    };
    let nodes = NodeIndex::from_names(names)?;
    let features = Tensor::from_rows(nodes.len(), d, data)?;
    let (labels, label_names) = if with_label {
        let (l, n) = encode_labels(&raw_labels);
        (Some(l), Some(n))
    } else {
        (None, None)
    };
    Ok(FeatureTable {
        features,
        nodes,
        labels,
        label_names,
    })
}

/// Label strings to dense ids, ids assigned in sorted label order.
fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let distinct: BTreeSet<&String> = raw.iter().collect();
    let names: Vec<String> = distinct.into_iter().cloned().collect();
    let ids: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    (raw.iter().map(|r| ids[r.as_str()]).collect(), names)
}

pub fn load_features(path: &Path) -> Result<FeatureTable> {
    load_table(path, false)
}

/// Cora-style content file: id, binary columns, label string.
pub fn load_cora_content(path: &Path) -> Result<FeatureTable> {
    load_table(path, true)
}

/// `node_id<TAB>label` lines; every node in `nodes` needs exactly one label.
pub fn load_labels(path: &Path, nodes: &NodeIndex) -> Result<(Vec<usize>, Vec<String>)> {
    let text = read(path)?;
    let mut raw: Vec<Option<String>> = vec![None; nodes.len()];
    for (line, content) in data_lines(&text) {
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(path, line, "expected node id and label"));
        }
        let i = nodes.lookup(toks[0]).ok_or_else(|| {
            NoradError::Consistency(format!("label for unknown node {}", toks[0]))
        })?;
        if raw[i].replace(toks[1].to_string()).is_some() {
            return Err(NoradError::Consistency(format!("duplicate label for {}", toks[0])));
        }
    }
    let raw: Vec<String> = raw
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| {
                NoradError::Consistency(format!("node {} has no label", nodes.names()[i]))
            })
        })
        .collect::<Result<_>>()?;
    Ok(encode_labels(&raw))
}

/// Loads features (or content) first, then edges resolved through the node
/// ids, then optional labels.
pub fn load_graph(
    edges: &Path,
    features: &Path,
    format: GraphFormat,
    labels: Option<&Path>,
) -> Result<AttributedGraph> {
    let table = match format {
        GraphFormat::Features => load_features(features)?,
        GraphFormat::Content => load_cora_content(features)?,
    };
    let el = load_edge_list(edges, Some(&table.nodes))?;
    let mut g = AttributedGraph::new(table.nodes.len(), el.edges, table.features)?
        .with_node_names(table.nodes.names().to_vec())?;
    if let Some(l) = table.labels {
        g = g.with_labels(l, table.label_names)?;
    }
    if let Some(path) = labels {
        let (l, names) = load_labels(path, &table.nodes)?;
        g = g.with_labels(l, Some(names))?;
    }
    Ok(g)
}

fn node_name(g: &AttributedGraph, i: usize) -> String {
    g.node_names()
        .map(|n| n[i].clone())
        .unwrap_or_else(|| i.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| NoradError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| NoradError::io(path, e))
}

/// Edges written with node names when the graph has them.
pub fn write_edge_list(path: &Path, g: &AttributedGraph, edges: &[Edge]) -> Result<()> {
    let mut s = String::new();
    for &(i, j) in edges {
        s.push_str(&format!("{}\t{}\n", node_name(g, i), node_name(g, j)));
    }
    write_text(path, &s)
}

pub fn write_features(path: &Path, g: &AttributedGraph) -> Result<()> {
    let mut s = String::new();
    for i in 0..g.n() {
        s.push_str(&node_name(g, i));
        for &x in g.features().row(i) {
            s.push('\t');
            s.push(if x == 1.0 { '1' } else { '0' });
        }
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn write_labels(path: &Path, g: &AttributedGraph) -> Result<()> {
    let Some(labels) = g.labels() else {
        return Err(NoradError::Contract("graph has no labels".into()));
    };
    let mut s = String::new();
    for (i, &l) in labels.iter().enumerate() {
        let name = g
            .label_names()
            .and_then(|n| n.get(l).cloned())
            .unwrap_or_else(|| l.to_string());
        s.push_str(&format!("{}\t{}\n", node_name(g, i), name));
    }
    write_text(path, &s)
}

/// `index<TAB>node_id` for every node.
pub fn write_node_map(path: &Path, g: &AttributedGraph) -> Result<()> {
    let mut s = String::new();
    for i in 0..g.n() {
        s.push_str(&format!("{i}\t{}\n", node_name(g, i)));
    }
    write_text(path, &s)
}
