//! Plot-ready histogram tables over shared uniform bins.

use serde::Serialize;

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub dataset: String,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

/// Counts each dataset's finite values into `bins` uniform bins spanning
/// the finite range of all datasets together. Bins are half-open except
/// the last, which includes its right edge. A single-valued range is
/// widened to one unit centred on the value. No finite values gives no
/// rows.
pub fn histogram(datasets: &[(String, Vec<f64>)], bins: usize) -> Vec<Row> {
    assert!(bins > 0, "at least one bin");
    let finite = || datasets.iter().flat_map(|(_, v)| v.iter().copied().filter(|x| x.is_finite()));
    let (Some(lo), Some(hi)) = (finite().reduce(f64::min), finite().reduce(f64::max)) else {
        return Vec::new();
    };
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let edge = |i: usize| if i == bins { hi } else { lo + width * i as f64 };
    let mut rows = Vec::with_capacity(datasets.len() * bins);
    for (name, values) in datasets {
        let mut counts = vec![0u64; bins];
        for &x in values.iter().filter(|x| x.is_finite()) {
            let mut i = (((x - lo) / width) as usize).min(bins - 1);
            // Float rounding can put a value one bin off its edges.
            while i > 0 && x < edge(i) {
                i -= 1;
            }
            while i + 1 < bins && x >= edge(i + 1) {
                i += 1;
            }
            counts[i] += 1;
        }
        rows.extend(counts.into_iter().enumerate().map(|(i, count)| Row {
            dataset: name.clone(),
            bin_left: edge(i),
            bin_right: edge(i + 1),
            count,
        }));
    }
    rows
}

/// Tab-separated table with a header line.
pub fn to_table(rows: &[Row]) -> String {
    let mut out = String::from("dataset\tbin_left\tbin_right\tcount\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.dataset, r.bin_left, r.bin_right, r.count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(values: Vec<f64>, bins: usize) -> Vec<Row> {
        histogram(&[("d".into(), values)], bins)
    }

    #[test]
    fn counts_by_edges() {
        let rows = one(vec![0.0, 0.5, 1.0, 1.5, 2.0, 4.0], 4);
        let counts: Vec<u64> = rows.iter().map(|r| r.count).collect();
        assert_eq!(counts, vec![2, 2, 1, 1]);
        assert_eq!((rows[0].bin_left, rows[3].bin_right), (0.0, 4.0));
    }

    #[test]
    fn shared_edges_across_datasets() {
        let rows = histogram(&[("a".into(), vec![0.0, 1.0]), ("b".into(), vec![9.0, 10.0, f64::NAN])], 20);
        assert_eq!(rows.len(), 40);
        assert_eq!(rows[..20].iter().map(|r| r.count).sum::<u64>(), 2);
        assert_eq!(rows[20..].iter().map(|r| r.count).sum::<u64>(), 2);
        assert_eq!(rows[5].bin_left, rows[25].bin_left);
    }

    #[test]
    fn degenerate_ranges() {
        assert!(one(vec![], 20).is_empty());
        let rows = one(vec![3.0, 3.0], 2);
        assert_eq!((rows[0].bin_left, rows[1].bin_right), (2.5, 3.5));
        assert_eq!(rows[1].count, 2);
    }
}
