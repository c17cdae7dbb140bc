//! Structural, tabular, and visual feature templates.
//!
//! Features are strings in PREFIX_value form; each one later becomes a bit in
//! the candidate's sparse indicator vector. N-gram templates use unigrams.
//! Templates whose modality is unavailable for a mention (no enclosing cell,
//! no bounding boxes) are silently skipped.

use super::{FeatureOptions, Modality};
use crate::doc::queries::{self, SpanRef};
use crate::doc::{Document, NodeId};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateArity {
    Unary,
    Binary,
}

/// Every implemented template kind: (name prefix, modality, arity).
pub const TEMPLATE_KINDS: &[(&str, Modality, TemplateArity)] = &[
    ("TAG", Modality::Structural, TemplateArity::Unary),
    ("HTML_ATTR", Modality::Structural, TemplateArity::Unary),
    ("PARENT_TAG", Modality::Structural, TemplateArity::Unary),
    ("PREV_SIB_TAG", Modality::Structural, TemplateArity::Unary),
    ("NEXT_SIB_TAG", Modality::Structural, TemplateArity::Unary),
    ("NODE_POS", Modality::Structural, TemplateArity::Unary),
    ("ANCESTOR_CLASS", Modality::Structural, TemplateArity::Unary),
    ("ANCESTOR_TAG", Modality::Structural, TemplateArity::Unary),
    ("ANCESTOR_ID", Modality::Structural, TemplateArity::Unary),
    ("COMMON_ANCESTOR", Modality::Structural, TemplateArity::Binary),
    ("LOWEST_ANCESTOR_DEPTH", Modality::Structural, TemplateArity::Binary),
    ("CELL", Modality::Tabular, TemplateArity::Unary),
    ("ROW_NUM", Modality::Tabular, TemplateArity::Unary),
    ("COL_NUM", Modality::Tabular, TemplateArity::Unary),
    ("ROW_SPAN", Modality::Tabular, TemplateArity::Unary),
    ("COL_SPAN", Modality::Tabular, TemplateArity::Unary),
    ("ROW_HEAD", Modality::Tabular, TemplateArity::Unary),
    ("COL_HEAD", Modality::Tabular, TemplateArity::Unary),
    ("ROW", Modality::Tabular, TemplateArity::Unary),
    ("COL", Modality::Tabular, TemplateArity::Unary),
    ("SAME_TABLE", Modality::Tabular, TemplateArity::Binary),
    ("SAME_TABLE_ROW_DIFF", Modality::Tabular, TemplateArity::Binary),
    ("SAME_TABLE_COL_DIFF", Modality::Tabular, TemplateArity::Binary),
    ("SAME_TABLE_MANHATTAN_DIST", Modality::Tabular, TemplateArity::Binary),
    ("SAME_CELL", Modality::Tabular, TemplateArity::Binary),
    ("WORD_DIFF", Modality::Tabular, TemplateArity::Binary),
    ("CHAR_DIFF", Modality::Tabular, TemplateArity::Binary),
    ("SAME_PHRASE", Modality::Tabular, TemplateArity::Binary),
    ("DIFF_TABLE", Modality::Tabular, TemplateArity::Binary),
    ("DIFF_TABLE_ROW_DIFF", Modality::Tabular, TemplateArity::Binary),
    ("DIFF_TABLE_COL_DIFF", Modality::Tabular, TemplateArity::Binary),
    ("DIFF_TABLE_MANHATTAN_DIST", Modality::Tabular, TemplateArity::Binary),
    ("ALIGNED", Modality::Visual, TemplateArity::Unary),
    ("PAGE", Modality::Visual, TemplateArity::Unary),
    ("SAME_PAGE", Modality::Visual, TemplateArity::Binary),
    ("HORZ_ALIGNED", Modality::Visual, TemplateArity::Binary),
    ("VERT_ALIGNED", Modality::Visual, TemplateArity::Binary),
    ("VERT_ALIGNED_LEFT", Modality::Visual, TemplateArity::Binary),
    ("VERT_ALIGNED_RIGHT", Modality::Visual, TemplateArity::Binary),
    ("VERT_ALIGNED_CENTER", Modality::Visual, TemplateArity::Binary),
];

fn wrap_tags(tags: &[String]) -> String {
    tags.iter().map(|t| format!("<{t}>")).collect::<Vec<_>>().join("_")
}

/// Unary templates for one mention span.
pub fn mention_features(
    doc: &Document,
    span: &SpanRef,
    mention_text: &str,
    opts: &FeatureOptions,
) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if opts.modalities.contains(&Modality::Structural) {
        structural_unary(doc, span, &mut out);
    }
    if opts.modalities.contains(&Modality::Tabular) {
        tabular_unary(doc, span, mention_text, &mut out);
    }
    if opts.modalities.contains(&Modality::Visual) {
        visual_unary(doc, span, opts.visual_tolerance, &mut out);
    }
    out
}

fn structural_unary(doc: &Document, span: &SpanRef, out: &mut BTreeSet<String>) {
    let Some(element) = queries::element_of(doc, span) else { return };
    let s = &doc.node(element).structural;
    out.insert(format!("TAG_<{}>", s.tag));
    for (k, v) in &s.attrs {
        out.insert(format!("HTML_ATTR_{k}:{v}"));
    }
    if let Some(t) = &s.parent_tag {
        out.insert(format!("PARENT_TAG_<{t}>"));
    }
    if let Some(t) = &s.prev_sib_tag {
        out.insert(format!("PREV_SIB_TAG_<{t}>"));
    }
    if let Some(t) = &s.next_sib_tag {
        out.insert(format!("NEXT_SIB_TAG_<{t}>"));
    }
    out.insert(format!("NODE_POS_{}", s.node_pos));
    if !s.ancestor_tags.is_empty() {
        out.insert(format!("ANCESTOR_TAG_{}", wrap_tags(&s.ancestor_tags)));
    }
    if !s.ancestor_classes.is_empty() {
        out.insert(format!("ANCESTOR_CLASS_{}", wrap_tags(&s.ancestor_classes)));
    }
    if !s.ancestor_ids.is_empty() {
        out.insert(format!("ANCESTOR_ID_{}", s.ancestor_ids.join("_")));
    }
}

fn tabular_unary(doc: &Document, span: &SpanRef, mention_text: &str, out: &mut BTreeSet<String>) {
    let Some(cell) = queries::cell_of(doc, span) else { return };
    let t = doc.node(cell).tabular.as_ref().expect("cell tabular attrs");
    out.insert(format!("ROW_NUM_{}", t.row_index));
    out.insert(format!("COL_NUM_{}", t.col_index));
    out.insert(format!("ROW_SPAN_{}", t.row_span));
    out.insert(format!("COL_SPAN_{}", t.col_span));
    if let Ok(grams) = queries::cell_ngrams(doc, span) {
        out.extend(grams.into_iter().map(|g| format!("CELL_{g}")));
    }
    if let Ok(grams) = queries::row_header_ngrams(doc, span) {
        out.extend(grams.into_iter().map(|g| format!("ROW_HEAD_{g}")));
    }
    if let Ok(grams) = queries::col_header_ngrams(doc, span) {
        out.extend(grams.into_iter().map(|g| format!("COL_HEAD_{g}")));
    }
    let mention_key = mention_text.replace(char::is_whitespace, "_");
    if let Ok(grams) = queries::row_ngrams(doc, span) {
        out.extend(grams.into_iter().map(|g| format!("ROW_{mention_key}_{g}")));
    }
    if let Ok(grams) = queries::col_ngrams(doc, span) {
        out.extend(grams.into_iter().map(|g| format!("COL_{mention_key}_{g}")));
    }
}

fn visual_unary(doc: &Document, span: &SpanRef, tolerance: f64, out: &mut BTreeSet<String>) {
    if let Ok(page) = queries::page(doc, span) {
        out.insert(format!("PAGE_{page}"));
    }
    if let Ok(grams) = queries::aligned_ngrams(doc, span, tolerance) {
        out.extend(grams.into_iter().map(|g| format!("ALIGNED_{g}")));
    }
}

/// Binary templates for an unordered mention pair.
pub fn pair_features(
    doc: &Document,
    a: &SpanRef,
    b: &SpanRef,
    opts: &FeatureOptions,
) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if opts.modalities.contains(&Modality::Structural) {
        structural_binary(doc, a, b, &mut out);
    }
    if opts.modalities.contains(&Modality::Tabular) {
        tabular_binary(doc, a, b, &mut out);
    }
    if opts.modalities.contains(&Modality::Visual) {
        visual_binary(doc, a, b, opts.visual_tolerance, &mut out);
    }
    out
}

fn structural_binary(doc: &Document, a: &SpanRef, b: &SpanRef, out: &mut BTreeSet<String>) {
    for tag in queries::common_ancestor_tags(doc, a, b) {
        out.insert(format!("COMMON_ANCESTOR_<{tag}>"));
    }
    let (_, min_hops, _) = queries::lca(doc, a, b);
    out.insert(format!("LOWEST_ANCESTOR_DEPTH_{min_hops}"));
}

/// Word and character offsets of a span within its enclosing cell, counted
/// over the cell's sentences in reading order.
fn offsets_in_cell(doc: &Document, cell: NodeId, span: &SpanRef) -> (usize, usize) {
    let mut words_before = 0usize;
    let mut chars_before = 0usize;
    let mut stack = vec![cell];
    while let Some(id) = stack.pop() {
        let node = doc.node(id);
        if let Some(s) = &node.sentence {
            if id == span.sentence {
                let char_off = s.char_offsets.get(span.word_start).copied().unwrap_or(0) as usize;
                return (words_before + span.word_start, chars_before + char_off);
            }
            words_before += s.len();
            chars_before += s.text().len() + 1;
        }
        for &child in node.children.iter().rev() {
            stack.push(child);
        }
    }
    (span.word_start, 0)
}

fn tabular_binary(doc: &Document, a: &SpanRef, b: &SpanRef, out: &mut BTreeSet<String>) {
    let (Some(cell_a), Some(cell_b)) = (queries::cell_of(doc, a), queries::cell_of(doc, b)) else {
        return;
    };
    let ta = doc.node(cell_a).tabular.as_ref().expect("cell");
    let tb = doc.node(cell_b).tabular.as_ref().expect("cell");
    let row_diff = ta.row_index.abs_diff(tb.row_index);
    let col_diff = ta.col_index.abs_diff(tb.col_index);
    let same_table = doc.node(cell_a).parent == doc.node(cell_b).parent;
    if same_table {
        out.insert("SAME_TABLE".into());
        out.insert(format!("SAME_TABLE_ROW_DIFF_{row_diff}"));
        out.insert(format!("SAME_TABLE_COL_DIFF_{col_diff}"));
        out.insert(format!("SAME_TABLE_MANHATTAN_DIST_{}", row_diff + col_diff));
        if cell_a == cell_b {
            out.insert("SAME_CELL".into());
            let (wa, ca) = offsets_in_cell(doc, cell_a, a);
            let (wb, cb) = offsets_in_cell(doc, cell_b, b);
            out.insert(format!("WORD_DIFF_{}", wa.abs_diff(wb)));
            out.insert(format!("CHAR_DIFF_{}", ca.abs_diff(cb)));
            if a.sentence == b.sentence {
                out.insert("SAME_PHRASE".into());
            }
        }
    } else {
        out.insert("DIFF_TABLE".into());
        out.insert(format!("DIFF_TABLE_ROW_DIFF_{row_diff}"));
        out.insert(format!("DIFF_TABLE_COL_DIFF_{col_diff}"));
        out.insert(format!("DIFF_TABLE_MANHATTAN_DIST_{}", row_diff + col_diff));
    }
}

fn visual_binary(doc: &Document, a: &SpanRef, b: &SpanRef, tol: f64, out: &mut BTreeSet<String>) {
    let (Ok(ba), Ok(bb)) = (queries::span_bbox(doc, a), queries::span_bbox(doc, b)) else {
        return;
    };
    if ba.page != bb.page {
        return;
    }
    out.insert("SAME_PAGE".into());
    if (ba.center_y() - bb.center_y()).abs() <= tol {
        out.insert("HORZ_ALIGNED".into());
    }
    if (ba.center_x() - bb.center_x()).abs() <= tol {
        out.insert("VERT_ALIGNED".into());
        out.insert("VERT_ALIGNED_CENTER".into());
    }
    if (ba.x0 - bb.x0).abs() <= tol {
        out.insert("VERT_ALIGNED_LEFT".into());
    }
    if (ba.x1 - bb.x1).abs() <= tol {
        out.insert("VERT_ALIGNED_RIGHT".into());
    }
}

/// Sanity check used by tests: a feature name's template kind.
pub fn kind_of(name: &str) -> Option<&'static str> {
    let mut best: Option<&'static str> = None;
    for (prefix, _, _) in TEMPLATE_KINDS {
        let matches = *name == **prefix || name.starts_with(&format!("{prefix}_"));
        if matches && best.map_or(true, |b| prefix.len() > b.len()) {
            best = Some(prefix);
        }
    }
    best
}

