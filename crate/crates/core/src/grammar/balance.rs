use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Open/close counts for one tag name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub open: usize,
    pub close: usize,
}

/// Per-tag occurrence counts of `<tag>` and `</tag>` in a text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub per_tag: IndexMap<String, TagCounts>,
    pub balanced: bool,
}

impl BalanceReport {
    /// Tags whose open and close counts differ.
    pub fn unbalanced_tags(&self) -> impl Iterator<Item = &str> {
        self.per_tag
            .iter()
            .filter(|(_, c)| c.open != c.close)
            .map(|(t, _)| t.as_str())
    }
}

/// Counts literal `<tag>` / `</tag>` occurrences for every tag in `tags`.
///
/// Total over any input. `balanced` holds iff every tag has as many closing
/// as opening occurrences; order is not considered.
pub fn check_tag_balance<S: AsRef<str>>(text: &str, tags: &[S]) -> BalanceReport {
    let mut per_tag = IndexMap::with_capacity(tags.len());
    for tag in tags {
        let tag = tag.as_ref();
        let open = text.matches(&format!("<{tag}>")).count();
        let close = text.matches(&format!("</{tag}>")).count();
        per_tag.insert(tag.to_string(), TagCounts { open, close });
    }
    let balanced = per_tag.values().all(|c| c.open == c.close);
    BalanceReport { per_tag, balanced }
}
