//! Target-guided simulation: reconstruct the copy-and-verify trace for a
//! known output without running a model.
//!
//! Under greedy decoding the model's outputs are fully determined by the
//! target, so each step's acceptance is just the agreement between the
//! drafted document tokens and the target. Matching goes through the same
//! [`ReferenceIndex`] and tie-break generator as the live decoder, so a
//! simulated trace equals the decoder's trace for a model scripted to emit
//! the target.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{ReferenceIndex, TieBreakRng};
use crate::types::{
    ConfigError, DecodeConfig, DecodeTrace, Document, ReferenceSet, StepKind, StepRecord, TokenId,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("index out of range: pos {pos} of {doc_len}, step {step} of {target_len}")]
    IndexOutOfRange {
        pos: usize,
        doc_len: usize,
        step: usize,
        target_len: usize,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot aggregate an empty trace list")]
    EmptyInput,
    #[error("trace file: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace file row {row}: {msg}")]
    BadRow { row: usize, msg: String },
}

/// Length of the common prefix of `doc[pos..]` and `target[step..]`.
pub fn get_matched_tokens(doc: &Document, pos: usize, target: &[TokenId], step: usize) -> Result<usize, SimError> {
    if pos > doc.tokens.len() || step > target.len() {
        return Err(SimError::IndexOutOfRange {
            pos,
            doc_len: doc.tokens.len(),
            step,
            target_len: target.len(),
        });
    }
    Ok(doc.tokens[pos..]
        .iter()
        .zip(&target[step..])
        .take_while(|(a, b)| a == b)
        .count())
}

/// Simulated trace for `target` against `refs` with match length `n`, copy
/// length `k` and tie-break `seed`.
pub fn infer_decode_sequence(
    target: &[TokenId],
    refs: &ReferenceSet,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<DecodeTrace, SimError> {
    DecodeConfig::new(n, k, 1).validate()?;
    let index = ReferenceIndex::build(refs, n);
    infer_with_index(target, &index, k, seed)
}

/// [`infer_decode_sequence`] with a prebuilt index.
pub fn infer_with_index(target: &[TokenId], index: &ReferenceIndex, k: usize, seed: u64) -> Result<DecodeTrace, SimError> {
    if k == 0 {
        return Err(ConfigError::InvalidConfig { field: "copy_len" }.into());
    }
    let mut rng = TieBreakRng::new(seed);
    let mut steps = Vec::new();
    let mut step = 0;
    while step < target.len() {
        let Some(m) = index.match_ngrams(&target[..step], &mut rng) else {
            steps.push(StepRecord::stepwise());
            step += 1;
            continue;
        };
        let doc = &index.refs().docs()[m.doc_index];
        let drafted = index.draft(&m, k).len();
        let matched = get_matched_tokens(doc, m.pos, target, step)?;
        let num_valid = k.min(matched);
        let mut outputs = num_valid + 1;
        let mut accepted = num_valid;
        // the model's own token after a fully accepted tail lies past the target
        let truncated = step + outputs > target.len();
        if truncated {
            outputs = target.len() - step;
            accepted = accepted.min(outputs);
        }
        steps.push(StepRecord::copy(m.doc_id, m.pos, drafted, accepted, outputs, truncated));
        step += outputs;
    }
    Ok(DecodeTrace::from_steps(steps))
}

/// Per-sample means over a set of traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub triggers_per_sample: f64,
    pub accepted_per_sample: f64,
    pub steps_per_sample: f64,
    pub outputs_per_sample: f64,
    /// Mean outputs over mean steps.
    pub compression_ratio: f64,
}

pub fn aggregate_stats<'a, I>(traces: I) -> Result<TraceStats, SimError>
where
    I: IntoIterator<Item = &'a DecodeTrace>,
{
    let mut count = 0usize;
    let (mut triggers, mut accepted, mut steps, mut outputs) = (0usize, 0usize, 0usize, 0usize);
    for t in traces {
        count += 1;
        triggers += t.totals.num_triggers;
        accepted += t.totals.num_accepted;
        steps += t.totals.num_steps;
        outputs += t.totals.num_output_tokens;
    }
    if count == 0 {
        return Err(SimError::EmptyInput);
    }
    let per = |x: usize| x as f64 / count as f64;
    Ok(TraceStats {
        triggers_per_sample: per(triggers),
        accepted_per_sample: per(accepted),
        steps_per_sample: per(steps),
        outputs_per_sample: per(outputs),
        compression_ratio: if steps == 0 { 1.0 } else { outputs as f64 / steps as f64 },
    })
}

/// Column order of the trace export.
pub const TRACE_COLUMNS: [&str; 9] = [
    "sample_id",
    "step_index",
    "kind",
    "input_tokens",
    "output_tokens",
    "accepted",
    "doc_id",
    "pos",
    "truncated",
];

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    sample_id: String,
    step_index: usize,
    kind: StepKind,
    input_tokens: usize,
    output_tokens: usize,
    accepted: Option<usize>,
    doc_id: Option<String>,
    pos: Option<usize>,
    truncated: u8,
}

/// Writes traces as comma-separated rows, one step per row, with a header
/// line in [`TRACE_COLUMNS`] order. Absent fields are left empty.
pub fn write_traces_csv<'a, W, I>(out: W, traces: I) -> Result<(), SimError>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a DecodeTrace)>,
{
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for (sample_id, trace) in traces {
        for (i, s) in trace.steps.iter().enumerate() {
            w.serialize(TraceRow {
                sample_id: sample_id.to_string(),
                step_index: i,
                kind: s.kind,
                input_tokens: s.input_tokens,
                output_tokens: s.output_tokens,
                accepted: s.accepted,
                doc_id: s.doc_id.clone(),
                pos: s.copy_pos,
                truncated: s.truncated as u8,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a trace export back into `(sample_id, trace)` pairs in file order.
///
/// Only step records are stored, so `lm_calls` comes back equal to the step
/// count.
pub fn read_traces_csv<R: Read>(input: R) -> Result<Vec<(String, DecodeTrace)>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<(String, Vec<StepRecord>)> = Vec::new();
    for (row_no, row) in r.deserialize::<TraceRow>().enumerate() {
        let row = row?;
        let expected = match out.last() {
            Some((id, steps)) if *id == row.sample_id => steps.len(),
            _ => {
                out.push((row.sample_id.clone(), Vec::new()));
                0
            }
        };
        if row.step_index != expected {
            return Err(SimError::BadRow {
                row: row_no + 1,
                msg: format!("step_index {} where {} was expected", row.step_index, expected),
            });
        }
        let step = StepRecord {
            kind: row.kind,
            input_tokens: row.input_tokens,
            output_tokens: row.output_tokens,
            doc_id: row.doc_id,
            copy_pos: row.pos,
            accepted: row.accepted,
            truncated: row.truncated != 0,
        };
        step.check().map_err(|msg| SimError::BadRow { row: row_no + 1, msg })?;
        out.last_mut().expect("pushed above").1.push(step);
    }
    Ok(out
        .into_iter()
        .map(|(id, steps)| (id, DecodeTrace::from_steps(steps)))
        .collect())
}
