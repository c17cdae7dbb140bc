//! Lenient HTML parsing into the document DAG.
//!
//! Table markup (`table`/`tr`/`td`/`th`) maps to Table/Row/Cell nodes with
//! Column nodes synthesized from the occupancy grid; other block elements map
//! to Text → Paragraph → Sentence chains. Malformed markup is recovered by
//! the underlying html5ever tree builder, never rejected.

use super::text::{collapse_whitespace, segment_sentences, tokenize};
use super::{
    ContextNode, DocError, Document, NodeId, NodeKind, SentenceAttrs, StructuralAttrs,
    TabularAttrs,
};
use scraper::node::Node;
use scraper::{ElementRef, Html, Selector};

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub doc_id: String,
    pub name: String,
}

impl ParseOptions {
    pub fn new(doc_id: impl Into<String>) -> Self {
        let doc_id = doc_id.into();
        Self { name: doc_id.clone(), doc_id }
    }
}

const INLINE_TAGS: &[&str] = &[
    "a", "abbr", "b", "big", "br", "cite", "code", "em", "font", "i", "kbd", "mark", "q", "s",
    "samp", "small", "span", "strong", "sub", "sup", "time", "tt", "u", "var", "wbr",
];

const SKIP_TAGS: &[&str] = &["head", "script", "style", "template", "noscript"];

fn is_inline(tag: &str) -> bool {
    INLINE_TAGS.contains(&tag)
}

pub fn parse_html(bytes: &[u8], options: &ParseOptions) -> Result<Document, DocError> {
    if bytes.is_empty() {
        return Err(DocError::EmptyInput);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| DocError::EncodingError)?;
    let html = Html::parse_document(text);

    let mut b = Builder {
        nodes: Vec::new(),
        doc_id: options.doc_id.clone(),
        name: options.name.clone(),
    };
    let root = b.push(NodeKind::Document, None, StructuralAttrs { tag: "html".into(), ..Default::default() });

    let body_sel = Selector::parse("body").expect("static selector");
    if let Some(body) = html.select(&body_sel).next() {
        b.walk_body(body, root);
    }

    let doc = Document { doc_id: b.doc_id, name: b.name, root, nodes: b.nodes };
    debug_assert!(doc.validate().is_ok(), "parser produced an invalid DAG");
    Ok(doc)
}

struct Builder {
    nodes: Vec<ContextNode>,
    doc_id: String,
    name: String,
}

impl Builder {
    fn push(&mut self, kind: NodeKind, parent: Option<NodeId>, structural: StructuralAttrs) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let position = match parent {
            Some(p) => {
                let parent_node = &self.nodes[p.index()];
                let pos = parent_node
                    .children
                    .iter()
                    .filter(|&&c| self.nodes[c.index()].kind == kind)
                    .count();
                self.nodes[p.index()].children.push(id);
                pos
            }
            None => 0,
        };
        self.nodes.push(ContextNode {
            id,
            kind,
            parent,
            position,
            children: Vec::new(),
            structural,
            tabular: None,
            sentence: None,
        });
        id
    }

    fn walk_body(&mut self, body: ElementRef<'_>, root: NodeId) {
        let mut implicit: Option<NodeId> = None;
        let mut run = String::new();
        for child in body.children() {
            match child.value() {
                Node::Text(t) => run.push_str(t),
                Node::Element(_) => {
                    let el = ElementRef::wrap(child).expect("element node");
                    let tag = el.value().name();
                    if SKIP_TAGS.contains(&tag) {
                        continue;
                    }
                    if tag == "section" {
                        if !collapse_whitespace(&run).is_empty() {
                            let target = implicit.unwrap_or_else(|| {
                                self.push(NodeKind::Section, Some(root), structural_of(body))
                            });
                            implicit = Some(target);
                            self.flush_run(&mut run, body, target);
                        } else {
                            run.clear();
                        }
                        let section = self.push(NodeKind::Section, Some(root), structural_of(el));
                        self.walk_container(el, section);
                    } else {
                        let target = implicit.unwrap_or_else(|| {
                            self.push(NodeKind::Section, Some(root), structural_of(body))
                        });
                        implicit = Some(target);
                        self.dispatch_element(el, target, &mut run, body);
                    }
                }
                _ => {}
            }
        }
        if let Some(target) = implicit {
            self.flush_run(&mut run, body, target);
        } else if !collapse_whitespace(&run).is_empty() {
            let target = self.push(NodeKind::Section, Some(root), structural_of(body));
            self.flush_run(&mut run, body, target);
        }
    }

    /// Walk a container element, attaching extracted content to `section`.
    fn walk_container(&mut self, el: ElementRef<'_>, section: NodeId) {
        let mut run = String::new();
        for child in el.children() {
            match child.value() {
                Node::Text(t) => run.push_str(t),
                Node::Element(_) => {
                    let ce = ElementRef::wrap(child).expect("element node");
                    if SKIP_TAGS.contains(&ce.value().name()) {
                        continue;
                    }
                    self.dispatch_element(ce, section, &mut run, el);
                }
                _ => {}
            }
        }
        self.flush_run(&mut run, el, section);
    }

    fn dispatch_element(
        &mut self,
        el: ElementRef<'_>,
        section: NodeId,
        run: &mut String,
        run_src: ElementRef<'_>,
    ) {
        let tag = el.value().name();
        if is_inline(tag) {
            // Recovered markup can foster block content inside inline tags;
            // only flatten an inline element that is pure inline all the way.
            if !has_block_descendant(el) {
                if tag == "br" {
                    run.push(' ');
                }
                run.push_str(&text_of(el));
                return;
            }
        }
        self.flush_run(run, run_src, section);
        if is_inline(tag) {
            self.walk_container(el, section);
            return;
        }
        match tag {
            "table" => self.build_table(el, section),
            "figure" => self.build_figure(el, section),
            "img" => {
                self.push(NodeKind::Figure, Some(section), structural_of(el));
            }
            _ => {
                if is_text_block(el) {
                    self.build_text(el, section);
                } else {
                    // Nested <section> elements are treated as plain containers:
                    // the model only admits Sections directly under the Document.
                    self.walk_container(el, section);
                }
            }
        }
    }

    fn flush_run(&mut self, run: &mut String, src: ElementRef<'_>, section: NodeId) {
        let text = collapse_whitespace(run);
        run.clear();
        if text.is_empty() {
            return;
        }
        let node = self.push(NodeKind::Text, Some(section), structural_of(src));
        self.build_paragraph(&text, node);
    }

    fn build_text(&mut self, el: ElementRef<'_>, section: NodeId) {
        let text = collapse_whitespace(&text_of(el));
        if text.is_empty() {
            return;
        }
        let node = self.push(NodeKind::Text, Some(section), structural_of(el));
        self.build_paragraph(&text, node);
    }

    /// One Paragraph holding the collapsed text, segmented into Sentences.
    fn build_paragraph(&mut self, text: &str, parent: NodeId) {
        if text.is_empty() {
            return;
        }
        let para = self.push(NodeKind::Paragraph, Some(parent), StructuralAttrs::default());
        for (_, sent_text) in segment_sentences(text) {
            let tokens = tokenize(sent_text);
            if tokens.is_empty() {
                continue;
            }
            let id = self.push(NodeKind::Sentence, Some(para), StructuralAttrs::default());
            self.nodes[id.index()].sentence = Some(SentenceAttrs {
                words: tokens.iter().map(|t| t.text.clone()).collect(),
                char_offsets: tokens.iter().map(|t| t.offset).collect(),
                lemmas: tokens.iter().map(|t| t.text.to_lowercase()).collect(),
                bboxes: None,
            });
        }
    }

    fn build_figure(&mut self, el: ElementRef<'_>, section: NodeId) {
        let figure = self.push(NodeKind::Figure, Some(section), structural_of(el));
        for child in el.children() {
            if let Some(ce) = ElementRef::wrap(child) {
                if ce.value().name() == "figcaption" {
                    let caption = self.push(NodeKind::Caption, Some(figure), structural_of(ce));
                    let text = collapse_whitespace(&text_of(ce));
                    self.build_paragraph(&text, caption);
                }
            }
        }
    }

    fn build_table(&mut self, el: ElementRef<'_>, section: NodeId) {
        let table = self.push(NodeKind::Table, Some(section), structural_of(el));

        for child in el.children() {
            if let Some(ce) = ElementRef::wrap(child) {
                if ce.value().name() == "caption" {
                    let caption = self.push(NodeKind::Caption, Some(table), structural_of(ce));
                    let text = collapse_whitespace(&text_of(ce));
                    self.build_paragraph(&text, caption);
                }
            }
        }

        let rows = collect_rows(el);
        // Occupancy grid assigns (row, col) indices while honoring spans.
        let mut grid: Vec<Vec<bool>> = Vec::new();
        let mut placed: Vec<(ElementRef<'_>, usize, usize, usize, usize, bool)> = Vec::new();
        for (r, tr) in rows.iter().enumerate() {
            if grid.len() <= r {
                grid.resize(r + 1, Vec::new());
            }
            let mut col = 0usize;
            for cell in tr.children().filter_map(ElementRef::wrap) {
                let tag = cell.value().name();
                if tag != "td" && tag != "th" {
                    continue;
                }
                while grid[r].get(col).copied().unwrap_or(false) {
                    col += 1;
                }
                let row_span = span_attr(cell, "rowspan");
                let col_span = span_attr(cell, "colspan");
                for rr in r..r + row_span {
                    if grid.len() <= rr {
                        grid.resize(rr + 1, Vec::new());
                    }
                    if grid[rr].len() < col + col_span {
                        grid[rr].resize(col + col_span, false);
                    }
                    for cc in col..col + col_span {
                        grid[rr][cc] = true;
                    }
                }
                placed.push((cell, r, col, row_span, col_span, tag == "th"));
                col += col_span;
            }
        }
        let n_rows = rows.len().max(grid.len());
        let n_cols = grid.iter().map(Vec::len).max().unwrap_or(0);

        let row_ids: Vec<NodeId> = (0..n_rows)
            .map(|r| {
                let structural = rows.get(r).map(|tr| structural_of(*tr)).unwrap_or_default();
                self.push(NodeKind::Row, Some(table), structural)
            })
            .collect();
        let col_ids: Vec<NodeId> = (0..n_cols)
            .map(|_| {
                self.push(
                    NodeKind::Column,
                    Some(table),
                    StructuralAttrs { tag: "col".into(), ..Default::default() },
                )
            })
            .collect();

        for (cell, r, c, row_span, col_span, is_th) in placed {
            let id = self.push(NodeKind::Cell, Some(table), structural_of(cell));
            self.nodes[id.index()].tabular = Some(TabularAttrs {
                row_index: r,
                col_index: c,
                row_span,
                col_span,
                row: row_ids[r],
                column: col_ids[c],
                is_header: is_th,
            });
            let text = collapse_whitespace(&text_of(cell));
            self.build_paragraph(&text, id);
        }
    }
}

fn span_attr(el: ElementRef<'_>, name: &str) -> usize {
    el.value()
        .attr(name)
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(1)
        .max(1)
}

/// `<tr>` elements belonging to this table, skipping nested tables.
fn collect_rows<'a>(el: ElementRef<'a>) -> Vec<ElementRef<'a>> {
    let mut out = Vec::new();
    for child in el.children() {
        if let Some(ce) = ElementRef::wrap(child) {
            match ce.value().name() {
                "tr" => out.push(ce),
                "table" => {}
                _ => out.extend(collect_rows(ce)),
            }
        }
    }
    out
}

/// All text under an element, with `<br>` as a space and skip-tags pruned.
fn text_of(el: ElementRef<'_>) -> String {
    let mut out = String::new();
    collect_text(el, &mut out);
    out
}

fn collect_text(el: ElementRef<'_>, out: &mut String) {
    for child in el.children() {
        match child.value() {
            Node::Text(t) => out.push_str(t),
            Node::Element(e) => {
                let tag = e.name();
                if SKIP_TAGS.contains(&tag) {
                    continue;
                }
                if tag == "br" {
                    out.push(' ');
                }
                if let Some(ce) = ElementRef::wrap(child) {
                    collect_text(ce, out);
                }
                // Block boundaries inside flattened content act as separators.
                if !is_inline(tag) {
                    out.push(' ');
                }
            }
            _ => {}
        }
    }
}

fn has_block_descendant(el: ElementRef<'_>) -> bool {
    el.descendants().skip(1).any(|d| match d.value() {
        Node::Element(e) => !is_inline(e.name()),
        _ => false,
    })
}

/// No block-level descendants and some visible text.
fn is_text_block(el: ElementRef<'_>) -> bool {
    !has_block_descendant(el) && !collapse_whitespace(&text_of(el)).is_empty()
}

fn structural_of(el: ElementRef<'_>) -> StructuralAttrs {
    let v = el.value();
    let tag = v.name().to_string();
    let attrs: Vec<(String, String)> =
        v.attrs().map(|(k, val)| (k.to_string(), val.to_string())).collect();
    let html_id = v.id().map(str::to_string);
    let classes: Vec<String> = v.classes().map(str::to_string).collect();

    let prev_sib_tag = el.prev_siblings().find_map(|n| match n.value() {
        Node::Element(e) => Some(e.name().to_string()),
        _ => None,
    });
    let next_sib_tag = el.next_siblings().find_map(|n| match n.value() {
        Node::Element(e) => Some(e.name().to_string()),
        _ => None,
    });
    let node_pos = el
        .prev_siblings()
        .filter(|n| matches!(n.value(), Node::Element(_)))
        .count();
    let parent_tag = el
        .parent()
        .and_then(ElementRef::wrap)
        .map(|p| p.value().name().to_string());

    // Markup chain from the topmost element under <html> down to this one.
    let mut chain: Vec<ElementRef<'_>> = vec![el];
    let mut cur = el.parent();
    while let Some(node) = cur {
        if let Some(pe) = ElementRef::wrap(node) {
            if pe.value().name() == "html" {
                break;
            }
            chain.push(pe);
        }
        cur = node.parent();
    }
    chain.reverse();
    let ancestor_tags = chain.iter().map(|e| e.value().name().to_string()).collect();
    let ancestor_classes =
        chain.iter().flat_map(|e| e.value().classes().map(str::to_string)).collect();
    let ancestor_ids = chain.iter().filter_map(|e| e.value().id().map(str::to_string)).collect();

    StructuralAttrs {
        tag,
        attrs,
        html_id,
        classes,
        node_pos,
        parent_tag,
        prev_sib_tag,
        next_sib_tag,
        ancestor_tags,
        ancestor_classes,
        ancestor_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(html: &str) -> Document {
        let doc = parse_html(html.as_bytes(), &ParseOptions::new("t")).unwrap();
        doc.validate().unwrap();
        doc
    }

    #[test]
    fn rejects_empty_and_non_utf8() {
        assert!(matches!(
            parse_html(b"", &ParseOptions::new("t")),
            Err(DocError::EmptyInput)
        ));
        assert!(matches!(
            parse_html(&[0xff, 0xfe, 0x00], &ParseOptions::new("t")),
            Err(DocError::EncodingError)
        ));
    }

    #[test]
    fn simple_table_maps_to_grid() {
        let doc = parse("<table><tr><td>A</td><td>B</td></tr></table>");
        assert_eq!(doc.count_kind(NodeKind::Table), 1);
        assert_eq!(doc.count_kind(NodeKind::Row), 1);
        assert_eq!(doc.count_kind(NodeKind::Column), 2);
        assert_eq!(doc.count_kind(NodeKind::Cell), 2);
        assert_eq!(doc.count_kind(NodeKind::Paragraph), 2);
        assert_eq!(doc.count_kind(NodeKind::Sentence), 2);
    }

    #[test]
    fn datasheet_layout_one_section_three_children() {
        let mut rows = String::new();
        for i in 0..10 {
            rows.push_str(&format!("<tr><td>p{i}</td><td>s{i}</td><td>{i}</td><td>u{i}</td></tr>"));
        }
        let html = format!(
            "<html><body><h1>SMBT3904 MMBT3904</h1><p>NPN Silicon Switching Transistor</p>\
             <table>{rows}</table></body></html>"
        );
        let doc = parse(&html);
        assert_eq!(doc.count_kind(NodeKind::Section), 1);
        let section = doc
            .nodes
            .iter()
            .find(|n| n.kind == NodeKind::Section)
            .unwrap();
        let kinds: Vec<NodeKind> =
            section.children.iter().map(|&c| doc.node(c).kind).collect();
        assert_eq!(kinds, vec![NodeKind::Text, NodeKind::Text, NodeKind::Table]);
        assert_eq!(doc.count_kind(NodeKind::Row), 10);
        assert_eq!(doc.count_kind(NodeKind::Column), 4);
    }

    #[test]
    fn rowspan_passthrough_and_links() {
        let doc = parse(
            "<table><tr><td rowspan=\"2\">X</td><td>Y</td></tr><tr><td>Z</td></tr></table>",
        );
        let cells: Vec<&ContextNode> =
            doc.nodes.iter().filter(|n| n.kind == NodeKind::Cell).collect();
        let x = cells.iter().find(|c| {
            c.children.first().map_or(false, |&p| {
                doc.node(doc.node(p).children[0]).sentence.as_ref().unwrap().words == ["X"]
            })
        });
        let t = x.unwrap().tabular.as_ref().unwrap();
        assert_eq!(t.row_span, 2);
        assert_eq!((t.row_index, t.col_index), (0, 0));
        // Z lands in column 1 because X's rowspan occupies (1, 0).
        let z = cells
            .iter()
            .find(|c| c.tabular.as_ref().unwrap().row_index == 1)
            .unwrap();
        assert_eq!(z.tabular.as_ref().unwrap().col_index, 1);
        assert_eq!(doc.node(t.row).kind, NodeKind::Row);
        assert_eq!(doc.node(t.column).kind, NodeKind::Column);
    }

    #[test]
    fn parse_is_deterministic() {
        let html = "<h1>One</h1><p>Two three. Four five.</p><table><tr><th>H</th></tr></table>";
        let a = parse(html);
        let b = parse(html);
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_markup_recovers() {
        let doc = parse("<p>unclosed <b>bold <table><tr><td>cell</table>after");
        assert_eq!(doc.count_kind(NodeKind::Table), 1);
        assert!(doc.count_kind(NodeKind::Sentence) >= 2);
    }

    #[test]
    fn structural_context_is_captured() {
        let doc = parse(
            "<body><div id=\"l1\" class=\"s1\"><h1>Title</h1><p>Body text</p></div></body>",
        );
        let p_text = doc
            .nodes
            .iter()
            .find(|n| n.kind == NodeKind::Text && n.structural.tag == "p")
            .unwrap();
        assert_eq!(p_text.structural.parent_tag.as_deref(), Some("div"));
        assert_eq!(p_text.structural.prev_sib_tag.as_deref(), Some("h1"));
        assert_eq!(p_text.structural.node_pos, 1);
        assert_eq!(p_text.structural.ancestor_tags, vec!["body", "div", "p"]);
        assert_eq!(p_text.structural.ancestor_classes, vec!["s1"]);
        assert_eq!(p_text.structural.ancestor_ids, vec!["l1"]);
    }

    #[test]
    fn dag_is_acyclic() {
        let doc = parse("<table><caption>c</caption><tr><td>a</td><td>b</td></tr></table>");
        let order = doc.topological_order().unwrap();
        assert_eq!(order.len(), doc.nodes.len());
    }

    #[test]
    fn serialization_round_trip_is_identity() {
        let doc = parse("<h1>T</h1><table><tr><td rowspan=2>a</td><td>b</td></tr></table>");
        let mut buf = Vec::new();
        crate::doc::write_documents(&mut buf, std::slice::from_ref(&doc)).unwrap();
        let back = crate::doc::read_documents(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], doc);
    }
}
