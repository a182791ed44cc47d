use crate::model::StepRecord;

/// Yields steps up to and including the first one satisfying `cond`.
/// Steps after it are never pulled from the source.
pub fn truncate_after_condition<I, F>(steps: I, cond: F) -> TruncateAfter<I::IntoIter, F>
where
    I: IntoIterator<Item = StepRecord>,
    F: FnMut(&StepRecord) -> bool,
{
    TruncateAfter {
        inner: steps.into_iter(),
        cond,
        done: false,
    }
}

pub struct TruncateAfter<I, F> {
    inner: I,
    cond: F,
    done: bool,
}

impl<I, F> Iterator for TruncateAfter<I, F>
where
    I: Iterator<Item = StepRecord>,
    F: FnMut(&StepRecord) -> bool,
{
    type Item = StepRecord;

    fn next(&mut self) -> Option<StepRecord> {
        if self.done {
            return None;
        }
        let step = self.inner.next()?;
        self.done = (self.cond)(&step);
        Some(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DType, DatasetSchema, FeatureSpec, Tensor};

    fn steps(n: i64) -> Vec<StepRecord> {
        let schema = DatasetSchema::new(FeatureSpec::scalar(DType::I64), FeatureSpec::empty());
        (0..n)
            .map(|i| {
                let mut s = StepRecord::filled(&schema);
                s.observation = Tensor::scalar_i64(i).into();
                s
            })
            .collect()
    }

    fn obs(s: &StepRecord) -> f64 {
        s.observation.as_leaf().unwrap().as_f64().unwrap()
    }

    #[test]
    fn includes_the_matching_step() {
        let out: Vec<_> = truncate_after_condition(steps(10), |s| obs(s) == 3.0).collect();
        assert_eq!(out.len(), 4);
        assert_eq!(obs(out.last().unwrap()), 3.0);
    }

    #[test]
    fn no_match_keeps_everything() {
        assert_eq!(truncate_after_condition(steps(5), |_| false).count(), 5);
    }

    #[test]
    fn does_not_pull_past_the_match() {
        let mut pulled = 0;
        let src = steps(10).into_iter().inspect(|_| pulled += 1);
        let n = truncate_after_condition(src, |s| obs(s) == 1.0).count();
        assert_eq!(n, 2);
        assert_eq!(pulled, 2);
    }
}
