use crate::data::BioTag;

/// A coarse entity span, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaggedSpan {
    pub start: usize,
    pub end: usize,
}

impl TaggedSpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Maximal `B I*` runs. An `I` at the start or right after `O` opens a new
/// span as if it were `B`.
pub fn extract_spans(tags: &[BioTag]) -> Vec<TaggedSpan> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            BioTag::O => {
                if let Some(s) = open.take() {
                    spans.push(TaggedSpan { start: s, end: i - 1 });
                }
            }
            BioTag::B => {
                if let Some(s) = open.replace(i) {
                    spans.push(TaggedSpan { start: s, end: i - 1 });
                }
            }
            BioTag::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(TaggedSpan { start: s, end: tags.len() - 1 });
    }
    spans
}
