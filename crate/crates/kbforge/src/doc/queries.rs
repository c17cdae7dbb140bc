//! Context queries over mention spans, dispatching on the document DAG.
//!
//! Tabular queries require the span's sentence to live under a Cell and
//! visual queries require attached bounding boxes; when the required modality
//! is absent they return [`QueryError::ModalityUnavailable`], which callers
//! (labeling functions, feature templates) treat as "skip", not "abort".

use super::{BBox, Document, NodeId, NodeKind};
use std::collections::BTreeSet;
use thiserror::Error;

/// Default tolerance in points for visual center alignment.
pub const DEFAULT_VISUAL_TOLERANCE: f64 = 2.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("modality unavailable: {0}")]
    ModalityUnavailable(&'static str),
}

/// A lightweight view of a mention span inside one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanRef {
    pub sentence: NodeId,
    pub word_start: usize,
    pub word_end: usize,
}

/// Ancestor chain of the span's sentence, sentence first, root last.
pub fn ancestors(doc: &Document, span: &SpanRef) -> Vec<NodeId> {
    doc.ancestor_chain(span.sentence)
}

/// Lowest common ancestor of two spans with (min, max) hop counts from the
/// spans' sentence nodes.
pub fn lca(doc: &Document, a: &SpanRef, b: &SpanRef) -> (NodeId, usize, usize) {
    let chain_a = ancestors(doc, a);
    let chain_b = ancestors(doc, b);
    let positions: std::collections::HashMap<NodeId, usize> =
        chain_a.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    for (hops_b, node) in chain_b.iter().enumerate() {
        if let Some(&hops_a) = positions.get(node) {
            return (*node, hops_a.min(hops_b), hops_a.max(hops_b));
        }
    }
    // Both chains end at the root, so this is unreachable for one document.
    unreachable!("spans share a document root")
}

/// Maximum over the two spans of hops to the lowest common ancestor.
pub fn lca_depth(doc: &Document, a: &SpanRef, b: &SpanRef) -> usize {
    lca(doc, a, b).2
}

/// Tags of nodes shared by both spans' paths to the root, closest first.
pub fn common_ancestor_tags(doc: &Document, a: &SpanRef, b: &SpanRef) -> Vec<String> {
    let (lca_node, _, _) = lca(doc, a, b);
    let mut tags = Vec::new();
    let mut cur = Some(lca_node);
    while let Some(id) = cur {
        let node = doc.node(id);
        if !node.structural.tag.is_empty() {
            tags.push(node.structural.tag.clone());
        }
        cur = node.parent;
    }
    tags
}

/// Nearest enclosing Cell of a span's sentence, if any.
pub fn cell_of(doc: &Document, span: &SpanRef) -> Option<NodeId> {
    doc.ancestor_of_kind(span.sentence, NodeKind::Cell)
}

/// Nearest enclosing Table of a span's sentence, if any.
pub fn table_of(doc: &Document, span: &SpanRef) -> Option<NodeId> {
    doc.ancestor_of_kind(span.sentence, NodeKind::Table)
}

/// The element-backed node the mention belongs to (Text, Cell, or Caption).
pub fn element_of(doc: &Document, span: &SpanRef) -> Option<NodeId> {
    let mut cur = Some(span.sentence);
    while let Some(id) = cur {
        let node = doc.node(id);
        if matches!(node.kind, NodeKind::Text | NodeKind::Cell | NodeKind::Caption) {
            return Some(id);
        }
        cur = node.parent;
    }
    None
}

fn lemmas_under(doc: &Document, node: NodeId, out: &mut BTreeSet<String>) {
    let mut stack = vec![node];
    while let Some(id) = stack.pop() {
        let n = doc.node(id);
        if let Some(s) = &n.sentence {
            out.extend(s.lemmas.iter().cloned());
        }
        stack.extend(n.children.iter().copied());
    }
}

fn require_cell(doc: &Document, span: &SpanRef) -> Result<NodeId, QueryError> {
    cell_of(doc, span).ok_or(QueryError::ModalityUnavailable("span is not inside a table cell"))
}

fn table_cells(doc: &Document, table: NodeId) -> impl Iterator<Item = NodeId> + '_ {
    doc.node(table)
        .children
        .iter()
        .copied()
        .filter(move |&c| doc.node(c).kind == NodeKind::Cell)
}

/// Lowercase unigrams of all Sentences in Cells sharing the span's Row,
/// the span's own cell included.
pub fn row_ngrams(doc: &Document, span: &SpanRef) -> Result<BTreeSet<String>, QueryError> {
    let cell = require_cell(doc, span)?;
    let t = doc.node(cell).tabular.as_ref().expect("cell tabular attrs");
    let (table, row) = (doc.node(cell).parent.expect("cell parent"), t.row_index);
    let mut out = BTreeSet::new();
    for c in table_cells(doc, table) {
        if doc.node(c).tabular.as_ref().expect("cell").row_index == row {
            lemmas_under(doc, c, &mut out);
        }
    }
    Ok(out)
}

/// Lowercase unigrams of all Sentences in Cells sharing the span's Column.
pub fn col_ngrams(doc: &Document, span: &SpanRef) -> Result<BTreeSet<String>, QueryError> {
    let cell = require_cell(doc, span)?;
    let t = doc.node(cell).tabular.as_ref().expect("cell tabular attrs");
    let (table, col) = (doc.node(cell).parent.expect("cell parent"), t.col_index);
    let mut out = BTreeSet::new();
    for c in table_cells(doc, table) {
        if doc.node(c).tabular.as_ref().expect("cell").col_index == col {
            lemmas_under(doc, c, &mut out);
        }
    }
    Ok(out)
}

/// Unigrams of the header cells of the span's column: cells in the same
/// column with row index 0 or marked `th` in the markup.
pub fn col_header_ngrams(doc: &Document, span: &SpanRef) -> Result<BTreeSet<String>, QueryError> {
    let cell = require_cell(doc, span)?;
    let t = doc.node(cell).tabular.as_ref().expect("cell tabular attrs");
    let (table, col) = (doc.node(cell).parent.expect("cell parent"), t.col_index);
    let mut out = BTreeSet::new();
    for c in table_cells(doc, table) {
        let ct = doc.node(c).tabular.as_ref().expect("cell");
        if ct.col_index == col && (ct.row_index == 0 || ct.is_header) {
            lemmas_under(doc, c, &mut out);
        }
    }
    Ok(out)
}

/// Unigrams of the header cells of the span's row: cells in the same row
/// with column index 0.
pub fn row_header_ngrams(doc: &Document, span: &SpanRef) -> Result<BTreeSet<String>, QueryError> {
    let cell = require_cell(doc, span)?;
    let t = doc.node(cell).tabular.as_ref().expect("cell tabular attrs");
    let (table, row) = (doc.node(cell).parent.expect("cell parent"), t.row_index);
    let mut out = BTreeSet::new();
    for c in table_cells(doc, table) {
        let ct = doc.node(c).tabular.as_ref().expect("cell");
        if ct.row_index == row && ct.col_index == 0 {
            lemmas_under(doc, c, &mut out);
        }
    }
    Ok(out)
}

/// Union of the span's column-header and row-header unigrams.
pub fn header_ngrams(doc: &Document, span: &SpanRef) -> Result<BTreeSet<String>, QueryError> {
    let mut out = col_header_ngrams(doc, span)?;
    out.extend(row_header_ngrams(doc, span)?);
    Ok(out)
}

/// Unigrams of the span's own cell.
pub fn cell_ngrams(doc: &Document, span: &SpanRef) -> Result<BTreeSet<String>, QueryError> {
    let cell = require_cell(doc, span)?;
    let mut out = BTreeSet::new();
    lemmas_under(doc, cell, &mut out);
    Ok(out)
}

/// Bounding boxes of the span's words that carry visual attributes.
pub fn span_word_boxes(doc: &Document, span: &SpanRef) -> Vec<BBox> {
    let sent = doc.node(span.sentence).sentence.as_ref().expect("sentence attrs");
    (span.word_start..=span.word_end).filter_map(|w| sent.bbox_of(w)).collect()
}

/// Union box over the span's words on the page of its first boxed word.
pub fn span_bbox(doc: &Document, span: &SpanRef) -> Result<BBox, QueryError> {
    let boxes = span_word_boxes(doc, span);
    let first = boxes.first().ok_or(QueryError::ModalityUnavailable("span has no bounding boxes"))?;
    let page = first.page;
    let mut out = *first;
    for b in boxes.iter().filter(|b| b.page == page) {
        out.x0 = out.x0.min(b.x0);
        out.y0 = out.y0.min(b.y0);
        out.x1 = out.x1.max(b.x1);
        out.y1 = out.y1.max(b.y1);
    }
    Ok(out)
}

/// Page of the span's first boxed word.
pub fn page(doc: &Document, span: &SpanRef) -> Result<u32, QueryError> {
    span_bbox(doc, span).map(|b| b.page)
}

/// Unigrams of words on the same page whose vertical or horizontal centers
/// lie within `tolerance` of any of the span's words.
pub fn aligned_ngrams(
    doc: &Document,
    span: &SpanRef,
    tolerance: f64,
) -> Result<BTreeSet<String>, QueryError> {
    let own = span_word_boxes(doc, span);
    if own.is_empty() {
        return Err(QueryError::ModalityUnavailable("span has no bounding boxes"));
    }
    let mut out = BTreeSet::new();
    for sid in doc.sentences() {
        let sent = doc.node(sid).sentence.as_ref().expect("sentence attrs");
        let Some(boxes) = &sent.bboxes else { continue };
        for (w, b) in boxes.iter().enumerate() {
            let Some(b) = b else { continue };
            let aligned = own.iter().any(|o| {
                o.page == b.page
                    && ((o.center_y() - b.center_y()).abs() <= tolerance
                        || (o.center_x() - b.center_x()).abs() <= tolerance)
            });
            if aligned {
                out.insert(sent.lemmas[w].clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{attach_visual, parse_html, ParseOptions, SidecarRecord};

    /// Header row (Parameter/Symbol/Value/Unit) plus a collector-current row.
    fn datasheet() -> Document {
        let html = "<html><body><h1>SMBT3904</h1>\
            <table>\
            <tr><th>Parameter</th><th>Symbol</th><th>Value</th><th>Unit</th></tr>\
            <tr><td>Collector current</td><td>Ic</td><td>200</td><td>mA</td></tr>\
            </table></body></html>";
        let doc = parse_html(html.as_bytes(), &ParseOptions::new("fig1")).unwrap();
        // Lay words out on a grid: row r at y = 100 + 20r, column c at x = 40 + 100c.
        let mut recs = Vec::new();
        let mut emit = |word: &str, x: f64, y: f64| {
            recs.push(SidecarRecord { page: 1, x0: x, y0: y, x1: x + 30.0, y1: y + 10.0, word: word.into() })
        };
        emit("SMBT3904", 40.0, 40.0);
        for (c, w) in ["Parameter", "Symbol", "Value", "Unit"].iter().enumerate() {
            emit(w, 40.0 + 100.0 * c as f64, 100.0);
        }
        emit("Collector", 40.0, 120.0);
        emit("current", 75.0, 120.0);
        emit("Ic", 140.0, 120.0);
        emit("200", 240.0, 120.0);
        emit("mA", 340.0, 120.0);
        attach_visual(doc, &recs)
    }

    fn span_of(doc: &Document, word: &str) -> SpanRef {
        for sid in doc.sentences() {
            let sent = doc.node(sid).sentence.as_ref().unwrap();
            if let Some(i) = sent.words.iter().position(|w| w == word) {
                return SpanRef { sentence: sid, word_start: i, word_end: i };
            }
        }
        panic!("word {word} not found");
    }

    #[test]
    fn row_ngrams_include_row_mates() {
        let doc = datasheet();
        let current = span_of(&doc, "200");
        let grams = row_ngrams(&doc, &current).unwrap();
        assert!(grams.contains("current"));
        assert!(grams.contains("ic"));
        assert!(grams.contains("200"), "own cell is included");
        assert!(!grams.contains("value"));
    }

    #[test]
    fn header_ngrams_see_column_and_row_headers() {
        let doc = datasheet();
        let current = span_of(&doc, "200");
        let grams = header_ngrams(&doc, &current).unwrap();
        assert!(grams.contains("value"), "column header");
        assert!(grams.contains("collector"), "row header");
        assert!(!grams.contains("unit"));
    }

    #[test]
    fn col_ngrams_walk_the_column() {
        let doc = datasheet();
        let current = span_of(&doc, "200");
        let grams = col_ngrams(&doc, &current).unwrap();
        assert_eq!(grams, BTreeSet::from(["value".into(), "200".into()]));
    }

    #[test]
    fn tabular_queries_fail_outside_tables() {
        let doc = datasheet();
        let part = span_of(&doc, "SMBT3904");
        assert_eq!(
            row_ngrams(&doc, &part),
            Err(QueryError::ModalityUnavailable("span is not inside a table cell"))
        );
    }

    #[test]
    fn lca_depth_within_a_paragraph() {
        let doc = parse_html(
            b"<p>First sentence here. Second sentence here.</p>",
            &ParseOptions::new("t"),
        )
        .unwrap();
        let sents = doc.sentences();
        assert_eq!(sents.len(), 2);
        let a = SpanRef { sentence: sents[0], word_start: 0, word_end: 0 };
        let b = SpanRef { sentence: sents[1], word_start: 0, word_end: 0 };
        assert_eq!(lca_depth(&doc, &a, &b), 1);
        assert_eq!(lca_depth(&doc, &a, &a), 0);
    }

    #[test]
    fn aligned_ngrams_follow_visual_centers() {
        let doc = datasheet();
        let current = span_of(&doc, "200");
        let grams = aligned_ngrams(&doc, &current, DEFAULT_VISUAL_TOLERANCE).unwrap();
        assert!(grams.contains("current"), "same visual row");
        assert!(!grams.contains("parameter"), "different row and column");
        assert_eq!(page(&doc, &current), Ok(1));
    }

    #[test]
    fn visual_queries_need_boxes() {
        let doc = parse_html(b"<p>word</p>", &ParseOptions::new("t")).unwrap();
        let s = SpanRef { sentence: doc.sentences()[0], word_start: 0, word_end: 0 };
        assert!(page(&doc, &s).is_err());
        assert!(aligned_ngrams(&doc, &s, 2.0).is_err());
    }
}
