//! The hierarchical document model: a DAG of typed contexts.
//!
//! A parsed document is a tree of containment edges (Document → Section →
//! Text/Table/Figure → … → Sentence) plus, for tables, link edges from each
//! Cell to its owning Row and Column. The extra links are what make the graph
//! a DAG rather than a tree. Documents are immutable after construction and
//! safe to query from multiple threads.

mod align;
mod html;
pub mod queries;
mod text;

pub use align::{align_words, attach_visual, read_sidecar, write_sidecar, SidecarRecord, VisualSidecar};
pub use html::{parse_html, ParseOptions};
pub use text::{segment_sentences, tokenize, Token};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("empty input: document has zero bytes")]
    EmptyInput,
    #[error("encoding error: input is not valid UTF-8 text")]
    EncodingError,
    #[error("sidecar format error at line {line}: {reason}")]
    SidecarFormat { line: usize, reason: String },
    #[error("invalid document: {0}")]
    Invalid(String),
}

/// Index of a node inside its document's node table.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Document,
    Section,
    Text,
    Table,
    Figure,
    Caption,
    Row,
    Column,
    Cell,
    Paragraph,
    Sentence,
}

impl NodeKind {
    /// Containment rules of the data model: which child kinds a parent admits.
    pub fn allowed_children(self) -> &'static [NodeKind] {
        use NodeKind::*;
        match self {
            Document => &[Section],
            Section => &[Text, Table, Figure],
            Table => &[Caption, Row, Column, Cell],
            Figure => &[Caption],
            Text | Cell | Caption => &[Paragraph],
            Paragraph => &[Sentence],
            Row | Column | Sentence => &[],
        }
    }
}

/// A word-level bounding box from a visual rendering of the document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub page: u32,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn center_x(&self) -> f64 {
        (self.x0 + self.x1) / 2.0
    }

    pub fn center_y(&self) -> f64 {
        (self.y0 + self.y1) / 2.0
    }

    pub fn is_valid(&self) -> bool {
        self.page >= 1 && self.x0 <= self.x1 && self.y0 <= self.y1
    }
}

/// Structural attributes captured from the source markup.
///
/// Synthesized nodes (Columns, Paragraphs, Sentences) carry empty defaults;
/// element-backed nodes record their tag, attributes and markup context so
/// structural features never have to re-consult the raw HTML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StructuralAttrs {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attrs: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    /// Index among element siblings in the source markup.
    #[serde(default)]
    pub node_pos: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_sib_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_sib_tag: Option<String>,
    /// Markup tag chain from the topmost element under the root down to this
    /// element, inclusive.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ancestor_tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ancestor_classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ancestor_ids: Vec<String>,
}

/// Tabular attributes; present on Cell nodes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularAttrs {
    pub row_index: usize,
    pub col_index: usize,
    pub row_span: usize,
    pub col_span: usize,
    /// Link to the owning Row node.
    pub row: NodeId,
    /// Link to the owning Column node.
    pub column: NodeId,
    /// Whether the cell was marked as a header (`<th>`) in the markup.
    #[serde(default)]
    pub is_header: bool,
}

/// Sentence payload: aligned word/offset/lemma sequences plus optional
/// per-word bounding boxes from an attached visual sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceAttrs {
    pub words: Vec<String>,
    pub char_offsets: Vec<u32>,
    pub lemmas: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bboxes: Option<Vec<Option<BBox>>>,
}

impl SentenceAttrs {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    pub fn bbox_of(&self, word_idx: usize) -> Option<BBox> {
        self.bboxes.as_ref().and_then(|b| b.get(word_idx).copied().flatten())
    }
}

/// One context in the document DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<NodeId>,
    /// Ordinal among siblings under `parent`.
    pub position: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeId>,
    #[serde(default)]
    pub structural: StructuralAttrs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabular: Option<TabularAttrs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<SentenceAttrs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub name: String,
    pub root: NodeId,
    pub nodes: Vec<ContextNode>,
}

impl Document {
    pub fn node(&self, id: NodeId) -> &ContextNode {
        &self.nodes[id.index()]
    }

    pub fn get(&self, id: NodeId) -> Option<&ContextNode> {
        self.nodes.get(id.index())
    }

    /// All Sentence node ids in depth-first (reading) order.
    pub fn sentences(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = self.node(id);
            if node.kind == NodeKind::Sentence {
                out.push(id);
            }
            for &child in node.children.iter().rev() {
                stack.push(child);
            }
        }
        out
    }

    /// Sentence word stream in reading order, as (sentence id, word index) pairs.
    pub fn word_stream(&self) -> Vec<(NodeId, usize)> {
        let mut out = Vec::new();
        for sid in self.sentences() {
            let n = self.node(sid).sentence.as_ref().expect("sentence attrs");
            for w in 0..n.len() {
                out.push((sid, w));
            }
        }
        out
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Nearest ancestor (or self) of the given kind.
    pub fn ancestor_of_kind(&self, start: NodeId, kind: NodeKind) -> Option<NodeId> {
        let mut cur = Some(start);
        while let Some(id) = cur {
            let node = self.node(id);
            if node.kind == kind {
                return Some(id);
            }
            cur = node.parent;
        }
        None
    }

    /// Chain of ancestors from `start` (inclusive) up to the root.
    pub fn ancestor_chain(&self, start: NodeId) -> Vec<NodeId> {
        let mut chain = vec![start];
        let mut cur = self.node(start).parent;
        while let Some(id) = cur {
            chain.push(id);
            cur = self.node(id).parent;
        }
        chain
    }

    /// Checks every structural invariant of the data model.
    pub fn validate(&self) -> Result<(), DocError> {
        let err = |m: String| Err(DocError::Invalid(m));
        let mut doc_nodes = 0usize;
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                return err(format!("node {} stored at index {}", node.id, i));
            }
            if node.kind == NodeKind::Document {
                doc_nodes += 1;
                if node.parent.is_some() {
                    return err("Document node has a parent".into());
                }
            } else if node.parent.is_none() {
                return err(format!("non-root node {} has no parent", node.id));
            }
            if let Some(parent) = node.parent {
                let pk = self.node(parent).kind;
                if !pk.allowed_children().contains(&node.kind) {
                    return err(format!("{:?} under {:?} at {}", node.kind, pk, node.id));
                }
            }
            // `position` is the ordinal among same-kind siblings, so Row and
            // Column positions can both equal their grid indices.
            let mut per_kind: std::collections::HashMap<NodeKind, usize> =
                std::collections::HashMap::new();
            for &child in &node.children {
                let c = self.node(child);
                if c.parent != Some(node.id) {
                    return err(format!("child {} does not point back to {}", child, node.id));
                }
                let pos = per_kind.entry(c.kind).or_insert(0);
                if c.position != *pos {
                    return err(format!("child {} position {} != {}", child, c.position, pos));
                }
                *pos += 1;
            }
            if let Some(t) = &node.tabular {
                if node.kind != NodeKind::Cell {
                    return err(format!("tabular attrs on {:?} node {}", node.kind, node.id));
                }
                if t.row_span < 1 || t.col_span < 1 {
                    return err(format!("cell {} has zero span", node.id));
                }
                let row = self.node(t.row);
                let col = self.node(t.column);
                if row.kind != NodeKind::Row || col.kind != NodeKind::Column {
                    return err(format!("cell {} linked to non row/column nodes", node.id));
                }
                if row.position != t.row_index || col.position != t.col_index {
                    return err(format!(
                        "cell {} indices ({},{}) disagree with linked nodes ({},{})",
                        node.id, t.row_index, t.col_index, row.position, col.position
                    ));
                }
                if row.parent != node.parent || col.parent != node.parent {
                    return err(format!("cell {} links escape its table", node.id));
                }
            } else if node.kind == NodeKind::Cell {
                return err(format!("cell {} lacks tabular attrs", node.id));
            }
            if let Some(s) = &node.sentence {
                if node.kind != NodeKind::Sentence {
                    return err(format!("sentence attrs on {:?} node {}", node.kind, node.id));
                }
                if s.words.len() != s.char_offsets.len() || s.words.len() != s.lemmas.len() {
                    return err(format!("sentence {} arrays disagree in length", node.id));
                }
                if let Some(b) = &s.bboxes {
                    if b.len() != s.words.len() {
                        return err(format!("sentence {} bbox array length mismatch", node.id));
                    }
                }
                if !s.char_offsets.windows(2).all(|w| w[0] < w[1]) {
                    return err(format!("sentence {} offsets not strictly increasing", node.id));
                }
            } else if node.kind == NodeKind::Sentence {
                return err(format!("sentence {} lacks attrs", node.id));
            }
        }
        if doc_nodes != 1 {
            return err(format!("{} Document nodes, expected exactly 1", doc_nodes));
        }
        if self.node(self.root).kind != NodeKind::Document {
            return err("root is not a Document node".into());
        }
        // Reachability from the root over containment edges.
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if seen[id.index()] {
                continue;
            }
            seen[id.index()] = true;
            stack.extend(self.node(id).children.iter().copied());
        }
        if let Some(unreached) = seen.iter().position(|&v| !v) {
            return err(format!("node n{} unreachable from root", unreached));
        }
        Ok(())
    }

    /// Topological order over containment plus Cell→Row/Column link edges
    /// (links treated as Row/Column-contains-Cell). Errors if a cycle exists.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, DocError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut edges: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for node in &self.nodes {
            for &child in &node.children {
                edges[node.id.index()].push(child);
                indegree[child.index()] += 1;
            }
            if let Some(t) = &node.tabular {
                edges[t.row.index()].push(node.id);
                edges[t.column.index()].push(node.id);
                indegree[node.id.index()] += 2;
            }
        }
        let mut ready: Vec<NodeId> = (0..n as u32).map(NodeId).filter(|id| indegree[id.index()] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = ready.pop() {
            order.push(id);
            for &next in &edges[id.index()] {
                indegree[next.index()] -= 1;
                if indegree[next.index()] == 0 {
                    ready.push(next);
                }
            }
        }
        if order.len() != n {
            return Err(DocError::Invalid("containment + link edges contain a cycle".into()));
        }
        Ok(order)
    }
}

/// Serialize one document per line (JSON records with stable field names).
pub fn write_documents<W: std::io::Write>(mut w: W, docs: &[Document]) -> std::io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_documents<R: std::io::BufRead>(r: R) -> Result<Vec<Document>, DocError> {
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|_| DocError::EncodingError)?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| DocError::Invalid(format!("record {}: {}", i + 1, e)))?;
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_validity() {
        let b = BBox { page: 1, x0: 0.0, y0: 1.0, x1: 2.0, y1: 3.0 };
        assert!(b.is_valid());
        assert!(!BBox { page: 0, ..b }.is_valid());
        assert!(!BBox { x0: 5.0, ..b }.is_valid());
    }

    #[test]
    fn allowed_children_follow_the_model() {
        assert!(NodeKind::Table.allowed_children().contains(&NodeKind::Cell));
        assert!(!NodeKind::Section.allowed_children().contains(&NodeKind::Cell));
        assert!(NodeKind::Sentence.allowed_children().is_empty());
    }
}
