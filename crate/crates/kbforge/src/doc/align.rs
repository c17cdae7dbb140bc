//! Word alignment between a document and a converted rendering of it.
//!
//! Words are matched when their characters are equal and the number of
//! identical occurrences strictly before each side agrees. The resulting
//! partial map absorbs insertions and deletions on either side.

use super::{BBox, DocError, Document};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Match words by (string, occurrence-count) identity.
///
/// `original[i]` maps to `converted[j]` iff the strings are equal and the
/// count of identical occurrences strictly before `i` equals the count
/// strictly before `j`. Unmatched indices are absent.
pub fn align_words<S1: AsRef<str>, S2: AsRef<str>>(
    original: &[S1],
    converted: &[S2],
) -> BTreeMap<usize, usize> {
    let mut converted_keys: HashMap<(&str, usize), usize> = HashMap::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (j, word) in converted.iter().enumerate() {
        let w = word.as_ref();
        let occ = counts.entry(w).or_insert(0);
        converted_keys.insert((w, *occ), j);
        *occ += 1;
    }
    let mut mapping = BTreeMap::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (i, word) in original.iter().enumerate() {
        let w = word.as_ref();
        let occ = counts.entry(w).or_insert(0);
        if let Some(&j) = converted_keys.get(&(w, *occ)) {
            mapping.insert(i, j);
        }
        *occ += 1;
    }
    mapping
}

/// One word record of a visual sidecar, in reading order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub page: u32,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub word: String,
}

impl SidecarRecord {
    pub fn bbox(&self) -> BBox {
        BBox { page: self.page, x0: self.x0, y0: self.y0, x1: self.x1, y1: self.y1 }
    }
}

pub type VisualSidecar = Vec<SidecarRecord>;

/// Parse line-delimited sidecar records.
pub fn read_sidecar<R: std::io::BufRead>(r: R) -> Result<VisualSidecar, DocError> {
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| DocError::SidecarFormat { line: i + 1, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SidecarRecord = serde_json::from_str(&line)
            .map_err(|e| DocError::SidecarFormat { line: i + 1, reason: e.to_string() })?;
        if !rec.bbox().is_valid() {
            return Err(DocError::SidecarFormat {
                line: i + 1,
                reason: "bounding box violates page >= 1, x0 <= x1, y0 <= y1".into(),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_sidecar<W: std::io::Write>(mut w: W, records: &[SidecarRecord]) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Attach bounding boxes from a sidecar word stream to the document's words.
///
/// Words are aligned with [`align_words`]; matched words gain the record's
/// box, unmatched words keep whatever they had. Applying the same sidecar
/// twice equals applying it once.
pub fn attach_visual(mut doc: Document, sidecar: &VisualSidecar) -> Document {
    let stream = doc.word_stream();
    let original: Vec<String> = stream
        .iter()
        .map(|&(sid, w)| doc.node(sid).sentence.as_ref().unwrap().words[w].clone())
        .collect();
    let converted: Vec<&str> = sidecar.iter().map(|r| r.word.as_str()).collect();
    let mapping = align_words(&original, &converted);
    for (i, j) in mapping {
        let (sid, w) = stream[i];
        let sent = doc.nodes[sid.index()].sentence.as_mut().unwrap();
        let boxes = sent.bboxes.get_or_insert_with(|| vec![None; sent.words.len()]);
        boxes[w] = Some(sidecar[j].bbox());
    }
    doc
}
