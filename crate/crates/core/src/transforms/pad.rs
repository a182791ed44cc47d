use crate::model::StepRecord;

/// Appends `count` copies of `template` with every flag cleared.
///
/// `StepRecord::filled(schema)` gives the usual zero-valued template.
pub fn pad_steps<I>(steps: I, count: usize, template: StepRecord) -> impl Iterator<Item = StepRecord>
where
    I: IntoIterator<Item = StepRecord>,
{
    let mut template = template;
    template.is_first = false;
    template.is_last = false;
    template.is_terminal = false;
    steps.into_iter().chain(std::iter::repeat_n(template, count))
}
