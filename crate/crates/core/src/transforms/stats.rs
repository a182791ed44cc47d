use serde::Serialize;

use super::{EpisodeResult, Result, TransformError};
use crate::model::{Alignment, DType, DatasetSchema, FeatureSpec, StepField, StepRecord, Tensor, TensorData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldStats {
    pub count: u64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Single-pass statistics in f64: Welford's update for the variance and a
/// Neumaier-compensated sum for the reported mean, which stays accurate
/// when positive and negative values nearly cancel.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatsAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
    sum: f64,
    compensation: f64,
    min: f64,
    max: f64,
}

impl StatsAccumulator {
    pub fn new() -> StatsAccumulator {
        StatsAccumulator::default()
    }

    pub fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += 1;
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Statistics so far; every value is NaN when nothing was pushed.
    pub fn finish(&self) -> FieldStats {
        if self.count == 0 {
            return FieldStats {
                count: 0,
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        FieldStats {
            count: self.count,
            mean: (self.sum + self.compensation) / self.count as f64,
            std: (self.m2 / self.count as f64).max(0.0).sqrt(),
            min: self.min,
            max: self.max,
        }
    }
}

/// Resolves `selector` to a numeric (or bool) leaf of the step schema.
fn resolve(schema: &DatasetSchema, selector: &str) -> Result<StepField> {
    let (field, spec) = schema
        .step_field(selector)
        .ok_or_else(|| TransformError::UnknownField(selector.to_string()))?;
    match spec {
        FeatureSpec::Leaf(l) if l.dtype == DType::Bytes => {
            Err(TransformError::UnsupportedDtype(format!("{selector} holds bytes")))
        }
        FeatureSpec::Leaf(_) => Ok(field),
        FeatureSpec::Node(_) => Err(TransformError::UnknownField(format!("{selector} is not a leaf"))),
    }
}

/// The selected tensor of `step`, or `None` where undefined under `alignment`.
fn defined<'a>(step: &'a StepRecord, field: StepField, selector: &str, alignment: Alignment) -> Result<Option<&'a Tensor>> {
    if !alignment.is_defined(field, step.is_first, step.is_last) {
        return Ok(None);
    }
    step.select(selector)
        .and_then(|t| t.as_leaf())
        .map(Some)
        .ok_or_else(|| TransformError::UnknownField(format!("{selector} missing from step")))
}

/// Count, mean, std, min and max over every element of every defined
/// occurrence of `selector` in the dataset. Bool values count as 0/1.
pub fn field_statistics<D>(dataset: D, schema: &DatasetSchema, alignment: Alignment, selector: &str) -> Result<FieldStats>
where
    D: IntoIterator<Item = EpisodeResult>,
{
    let field = resolve(schema, selector)?;
    let mut acc = StatsAccumulator::new();
    for ep in dataset {
        for step in &ep?.steps {
            if let Some(t) = defined(step, field, selector, alignment)? {
                let values = t
                    .data()
                    .to_f64()
                    .ok_or_else(|| TransformError::UnsupportedDtype(format!("{selector} holds bytes")))?;
                values.into_iter().for_each(|x| acc.push(x));
            }
        }
    }
    Ok(acc.finish())
}

/// Sum of all defined reward values of one episode, optionally only up to
/// and including the first step where `cond` holds.
pub fn episode_return<I>(steps: I, alignment: Alignment, cond: Option<&mut dyn FnMut(&StepRecord) -> bool>) -> Result<f64>
where
    I: IntoIterator<Item = StepRecord>,
{
    let mut cond = cond;
    let mut total = 0.0;
    for step in steps {
        if alignment.is_defined(StepField::Reward, step.is_first, step.is_last) {
            for leaf in step.reward.leaves() {
                let values = leaf
                    .1
                    .data()
                    .to_f64()
                    .ok_or_else(|| TransformError::UnsupportedDtype("reward holds bytes".into()))?;
                total += values.iter().sum::<f64>();
            }
        }
        if cond.as_mut().is_some_and(|c| c(&step)) {
            break;
        }
    }
    Ok(total)
}

/// Element-wise f64 sum of the defined occurrences of `selector`.
///
/// Every occurrence must have the same shape. With no defined occurrence
/// the result is zeros shaped like the field's fill.
pub fn sum_field<I>(steps: I, schema: &DatasetSchema, alignment: Alignment, selector: &str) -> Result<Tensor>
where
    I: IntoIterator<Item = StepRecord>,
{
    let field = resolve(schema, selector)?;
    let mut sum: Option<(Vec<usize>, Vec<f64>)> = None;
    for step in steps {
        let Some(t) = defined(&step, field, selector, alignment)? else {
            continue;
        };
        let values = t
            .data()
            .to_f64()
            .ok_or_else(|| TransformError::UnsupportedDtype(format!("{selector} holds bytes")))?;
        match sum.as_mut() {
            None => sum = Some((t.shape().to_vec(), values)),
            Some((shape, acc)) => {
                if shape.as_slice() != t.shape() {
                    return Err(TransformError::InvalidArgument(format!(
                        "{selector} changes shape from {shape:?} to {:?}",
                        t.shape()
                    )));
                }
                acc.iter_mut().zip(values).for_each(|(a, x)| *a += x);
            }
        }
    }
    let (shape, values) = match sum {
        Some(s) => s,
        None => {
            let (_, spec) = schema.step_field(selector).expect("resolved above");
            let fill = crate::model::canonical_fill(spec);
            let shape = fill.as_leaf().expect("leaf selector").shape().to_vec();
            let n = shape.iter().product();
            (shape, vec![0.0; n])
        }
    };
    Ok(Tensor::new(shape, TensorData::F64(values)).expect("shape matches values"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EpisodeRecord, TensorTree};
    use crate::transforms::from_episodes;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            FeatureSpec::node([
                ("grip", FeatureSpec::scalar(DType::Bool)),
                ("name", FeatureSpec::scalar(DType::Bytes)),
                ("pos", FeatureSpec::leaf(DType::F32, &[2])),
            ]),
            FeatureSpec::scalar(DType::I64),
        )
    }

    /// SAR episode with the given rewards on its non-last steps.
    fn episode(rewards: &[f64]) -> EpisodeRecord {
        let s = schema();
        let n = rewards.len() + 1;
        let steps = (0..n)
            .map(|i| {
                let mut step = StepRecord::filled(&s);
                step.is_first = i == 0;
                step.is_last = i + 1 == n;
                if let Some(r) = rewards.get(i) {
                    step.reward = Tensor::scalar_f64(*r).into();
                    step.discount = Tensor::scalar_f64(1.0).into();
                }
                step.observation = TensorTree::node([
                    ("grip", Tensor::scalar_bool(i % 2 == 0).into()),
                    ("name", Tensor::scalar_bytes("x").into()),
                    ("pos", Tensor::vector(TensorData::F32(vec![i as f32, 7.0])).into()),
                ]);
                step
            })
            .collect();
        EpisodeRecord::new(steps, TensorTree::empty())
    }

    #[test]
    fn reward_statistics_exclude_undefined() {
        let st = field_statistics(from_episodes([episode(&[1.0, 2.0, 3.0])]), &schema(), Alignment::Sar, "reward").unwrap();
        assert_eq!(st.count, 3);
        assert_eq!(st.mean, 2.0);
        assert_eq!(st.min, 1.0);
        assert_eq!(st.max, 3.0);
        assert!((st.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_field_has_zero_std() {
        let ds = from_episodes([episode(&[0.1; 7]), episode(&[0.1; 3])]);
        let st = field_statistics(ds, &schema(), Alignment::Sar, "reward").unwrap();
        assert_eq!(st.count, 10);
        assert!((st.mean - 0.1).abs() <= 1e-16);
        assert!(st.std < 1e-16);
    }

    #[test]
    fn bool_promotes_and_bytes_fail() {
        let st = field_statistics(from_episodes([episode(&[0.0, 0.0, 0.0])]), &schema(), Alignment::Sar, "observation/grip")
            .unwrap();
        assert_eq!(st.count, 4);
        assert_eq!(st.mean, 0.5);
        let err = field_statistics(from_episodes([episode(&[0.0])]), &schema(), Alignment::Sar, "observation/name").unwrap_err();
        assert_eq!(err.code(), "UNSUPPORTED_DTYPE");
        let err = field_statistics(from_episodes([episode(&[0.0])]), &schema(), Alignment::Sar, "observation/nope").unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_FIELD");
    }

    #[test]
    fn return_with_and_without_condition() {
        let ep = episode(&[0.0, 0.0, 1.0, 5.0]);
        assert_eq!(episode_return(ep.steps.clone(), Alignment::Sar, None).unwrap(), 6.0);
        let mut cond = |s: &StepRecord| s.reward.as_leaf().unwrap().as_f64() == Some(1.0);
        assert_eq!(episode_return(ep.steps, Alignment::Sar, Some(&mut cond)).unwrap(), 1.0);
    }

    #[test]
    fn sum_of_vector_field() {
        let ep = episode(&[0.0, 0.0]);
        let t = sum_field(ep.steps, &schema(), Alignment::Sar, "observation/pos").unwrap();
        assert_eq!(t, Tensor::vector(TensorData::F64(vec![3.0, 21.0])));
    }

    #[test]
    fn empty_statistics_are_nan() {
        let st = StatsAccumulator::new().finish();
        assert_eq!(st.count, 0);
        assert!(st.mean.is_nan());
    }
}
