use std::fmt;
use std::str::FromStr;

use super::CatalogError;

/// `NAME`, `NAME[:K]`, `NAME[A:B]` or `NAME[A:]`: a split restricted to
/// the half-open episode range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitExpr {
    pub name: String,
    pub start: u64,
    pub end: Option<u64>,
}

impl SplitExpr {
    pub fn whole(name: impl Into<String>) -> SplitExpr {
        SplitExpr {
            name: name.into(),
            start: 0,
            end: None,
        }
    }

    /// The episode range within a split of `total` episodes, clamped.
    pub fn range(&self, total: u64) -> std::ops::Range<u64> {
        let end = self.end.unwrap_or(total).min(total);
        self.start.min(end)..end
    }
}

fn bad(expr: &str, why: &str) -> CatalogError {
    CatalogError::BadSplitExpr(format!("{expr:?}: {why}"))
}

fn index(expr: &str, s: &str) -> Result<u64, CatalogError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad(expr, "indices must be non-negative integers"));
    }
    s.parse().map_err(|_| bad(expr, "index out of range"))
}

impl FromStr for SplitExpr {
    type Err = CatalogError;

    fn from_str(expr: &str) -> Result<SplitExpr, CatalogError> {
        let (name, range) = match expr.split_once('[') {
            None => (expr, None),
            Some((name, rest)) => {
                let inner = rest.strip_suffix(']').ok_or_else(|| bad(expr, "missing closing ']'"))?;
                (name, Some(inner))
            }
        };
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.')) {
            return Err(bad(expr, "split name must be [A-Za-z0-9_.-]+"));
        }
        let Some(range) = range else {
            return Ok(SplitExpr::whole(name));
        };
        let (a, b) = range.split_once(':').ok_or_else(|| bad(expr, "expected [A:B], [:K] or [A:]"))?;
        let start = if a.is_empty() { 0 } else { index(expr, a)? };
        let end = if b.is_empty() {
            if a.is_empty() {
                return Err(bad(expr, "empty range"));
            }
            None
        } else {
            Some(index(expr, b)?)
        };
        if end.is_some_and(|e| start > e) {
            return Err(bad(expr, "range start exceeds end"));
        }
        Ok(SplitExpr {
            name: name.to_string(),
            start,
            end,
        })
    }
}

impl fmt::Display for SplitExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.start, self.end) {
            (0, None) => write!(f, "{}", self.name),
            (0, Some(k)) => write!(f, "{}[:{k}]", self.name),
            (a, Some(b)) => write!(f, "{}[{a}:{b}]", self.name),
            (a, None) => write!(f, "{}[{a}:]", self.name),
        }
    }
}
