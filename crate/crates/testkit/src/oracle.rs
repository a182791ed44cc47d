//! Fully materialized reference versions of the transforms.

use epilogue::model::{
    canonical_fill, Alignment, DType, DatasetSchema, EpisodeRecord, StepField, StepRecord, Tensor, TensorData,
    TensorTree,
};

/// Moves rewards and discounts by index: under RSA, step `t` carries what
/// SAR step `t - 1` carried.
pub fn shift_alignment(episode: &EpisodeRecord, from: Alignment, to: Alignment, schema: &DatasetSchema) -> EpisodeRecord {
    let steps = &episode.steps;
    let n = steps.len();
    let mut out = steps.clone();
    let r0 = canonical_fill(&schema.reward);
    let d0 = canonical_fill(&schema.discount);
    match (from, to) {
        (Alignment::Sar, Alignment::Rsa) => {
            for t in 0..n {
                if t == 0 {
                    out[t].reward = r0.clone();
                    out[t].discount = d0.clone();
                } else {
                    out[t].reward = steps[t - 1].reward.clone();
                    out[t].discount = steps[t - 1].discount.clone();
                }
            }
        }
        (Alignment::Rsa, Alignment::Sar) => {
            for t in 0..n {
                if t + 1 == n {
                    out[t].reward = r0.clone();
                    out[t].discount = d0.clone();
                } else {
                    out[t].reward = steps[t + 1].reward.clone();
                    out[t].discount = steps[t + 1].discount.clone();
                }
            }
        }
        _ => {}
    }
    EpisodeRecord::new(out, episode.metadata.clone())
}

/// Windows starting at every multiple of `shift` below `len`.
pub fn batch_steps(steps: &[StepRecord], size: usize, shift: usize, drop_remainder: bool) -> Vec<Vec<StepRecord>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < steps.len() {
        let end = (start + size).min(steps.len());
        if end - start == size || !drop_remainder {
            out.push(steps[start..end].to_vec());
        }
        start += shift;
    }
    out
}

/// `(o_k, a_k, r_k, d_k, o_{k+1}, terminal_{k+1})` for `k < len - 1`.
pub fn transitions(steps: &[StepRecord]) -> Vec<(TensorTree, TensorTree, TensorTree, TensorTree, TensorTree, bool)> {
    (0..steps.len().saturating_sub(1))
        .map(|k| {
            (
                steps[k].observation.clone(),
                steps[k].action.clone(),
                steps[k].reward.clone(),
                steps[k].discount.clone(),
                steps[k + 1].observation.clone(),
                steps[k + 1].is_terminal,
            )
        })
        .collect()
}

pub fn truncate_after_condition(steps: &[StepRecord], cond: impl Fn(&StepRecord) -> bool) -> Vec<StepRecord> {
    match steps.iter().position(cond) {
        Some(i) => steps[..=i].to_vec(),
        None => steps.to_vec(),
    }
}

pub fn concat_if_terminal(episode: &EpisodeRecord, extra: impl Fn(&StepRecord) -> Vec<StepRecord>) -> EpisodeRecord {
    let mut out = episode.clone();
    if let Some(last) = episode.steps.last() {
        if last.is_terminal {
            out.steps.extend(extra(last));
        }
    }
    out
}

fn with_bit(data: &TensorData, bit: bool) -> TensorData {
    let b = bit as u8;
    match data {
        TensorData::F32(v) => TensorData::F32(v.iter().copied().chain([b as f32]).collect()),
        TensorData::F64(v) => TensorData::F64(v.iter().copied().chain([b as f64]).collect()),
        TensorData::I32(v) => TensorData::I32(v.iter().copied().chain([b as i32]).collect()),
        TensorData::I64(v) => TensorData::I64(v.iter().copied().chain([b as i64]).collect()),
        TensorData::U8(v) => TensorData::U8(v.iter().copied().chain([b]).collect()),
        TensorData::Bool(v) => TensorData::Bool(v.iter().copied().chain([bit]).collect()),
        TensorData::Bytes(_) => panic!("bytes observation"),
    }
}

/// Absorbing form built step by step: regular steps get a 0 bit; a
/// terminal last step is replaced by two absorbing steps (zero
/// observation with bit 1, zero action, flags cleared).
pub fn to_absorbing(episode: &EpisodeRecord) -> EpisodeRecord {
    let mut steps = Vec::new();
    for s in &episode.steps {
        let obs = s.observation.as_leaf().expect("vector observation");
        if s.is_terminal {
            let zero = TensorData::zeros(obs.dtype(), obs.len());
            let absorbing = StepRecord {
                observation: Tensor::new(vec![obs.len() + 1], with_bit(&zero, true)).unwrap().into(),
                action: s.action.zeros_like(),
                reward: s.reward.clone(),
                discount: s.discount.clone(),
                is_first: s.is_first,
                is_last: false,
                is_terminal: false,
                metadata: s.metadata.clone(),
            };
            steps.push(absorbing.clone());
            steps.push(absorbing);
        } else {
            let mut s = s.clone();
            s.observation = Tensor::new(vec![obs.len() + 1], with_bit(obs.data(), false)).unwrap().into();
            steps.push(s);
        }
    }
    EpisodeRecord::new(steps, episode.metadata.clone())
}

pub fn pad_steps(steps: &[StepRecord], count: usize, schema: &DatasetSchema) -> Vec<StepRecord> {
    let mut out = steps.to_vec();
    for _ in 0..count {
        out.push(StepRecord {
            observation: canonical_fill(&schema.observation),
            action: canonical_fill(&schema.action),
            reward: canonical_fill(&schema.reward),
            discount: canonical_fill(&schema.discount),
            is_first: false,
            is_last: false,
            is_terminal: false,
            metadata: canonical_fill(&schema.step_metadata),
        });
    }
    out
}

/// Every defined value of `selector` across the dataset, promoted to f64.
pub fn field_values(episodes: &[EpisodeRecord], alignment: Alignment, selector: &str) -> Vec<f64> {
    let field = StepField::parse(selector.split('/').next().unwrap()).expect("known field");
    let mut values = Vec::new();
    for ep in episodes {
        for s in &ep.steps {
            if !alignment.is_defined(field, s.is_first, s.is_last) {
                continue;
            }
            let t = s.select(selector).and_then(TensorTree::as_leaf).expect("leaf selector");
            assert_ne!(t.dtype(), DType::Bytes);
            values.extend(t.data().to_f64().unwrap());
        }
    }
    values
}

/// Correctly rounded sum using exact partial sums (Shewchuk).
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // The partials are non-overlapping, so summing from the largest down
    // loses at most the final rounding.
    partials.iter().rev().fold(0.0, |acc, p| acc + p)
}

/// Two-pass statistics with exact summation:
/// `(count, mean, population std, min, max)`.
pub fn statistics(values: &[f64]) -> (u64, f64, f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = exact_sum(values.iter().copied()) / n as f64;
    let var = exact_sum(values.iter().map(|x| (x - mean) * (x - mean))) / n as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (n as u64, mean, var.sqrt(), min, max)
}

/// Sum of defined rewards up to and including the first step where
/// `cond` holds.
pub fn episode_return(steps: &[StepRecord], alignment: Alignment, cond: impl Fn(&StepRecord) -> bool) -> f64 {
    let kept = truncate_after_condition(steps, cond);
    let mut total = 0.0;
    for s in &kept {
        if alignment.is_defined(StepField::Reward, s.is_first, s.is_last) {
            for (_, t) in s.reward.leaves() {
                total += t.data().to_f64().unwrap().iter().sum::<f64>();
            }
        }
    }
    total
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Indices into `0..len` chosen by the windowed shuffle, first `k` only.
pub fn sample_order(len: usize, buffer: usize, seed: u64, k: usize) -> Vec<usize> {
    let mut state = seed;
    let mut slots: Vec<usize> = (0..buffer.min(len)).collect();
    let mut next_input = slots.len();
    let mut out = Vec::new();
    while out.len() < k && !slots.is_empty() {
        let r = splitmix(&mut state);
        let i = ((r as u128 * slots.len() as u128) >> 64) as usize;
        out.push(slots[i]);
        if next_input < len {
            slots[i] = next_input;
            next_input += 1;
        } else {
            let last = slots.len() - 1;
            slots[i] = slots[last];
            slots.pop();
        }
    }
    out
}

pub fn sample_episodes(episodes: &[EpisodeRecord], buffer: usize, seed: u64, k: usize) -> Vec<EpisodeRecord> {
    sample_order(episodes.len(), buffer, seed, k)
        .into_iter()
        .map(|i| episodes[i].clone())
        .collect()
}
