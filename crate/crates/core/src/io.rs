//! Interchange formats and ingestion.
//!
//! Canonical interchange is line-delimited JSON, one object per line:
//!
//! - raw record: `{"id": 7, "loss": 1.25, "tokens": [{"g": [...D], "h": [...H]}, ...]}`
//! - precomputed record: `{"id": 7, "loss": 1.25, "feature": [...D]}`
//! - coreset entry: `{"id", "order", "weight", "stratum", "min_dist_at_selection"}`
//!
//! Two little-endian binary formats complement JSONL:
//!
//! - `SLAPV1` second-moment state: magic `SLAPV1` (6 bytes), `D: u32`,
//!   `H: u32`, `step: u64`, `beta2: f64`, `epsilon: f64`, then `D*H` f64
//!   values row-major (row = vocabulary index).
//! - `SLAPF1` packed features for large feature files: magic `SLAPF1`
//!   (6 bytes), `D: u32`, `count: u64`, then per record `id: u64`,
//!   `loss: f64`, and `D` f32 feature values. Features are stored at 32-bit
//!   precision; round-tripping costs up to ~1e-6 relative error.
//!
//! Ingestion validates every record and reports the 1-based line number of
//! the first offending one. Empty lines are skipped.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlapError};
use crate::features::{sequence_gradient, FeatureVector, SecondMomentState, TokenGradientInput};
use crate::matrix::Matrix;
use crate::selector::RawSample;
use crate::stratify::{Batch, SampleRecord};

pub const STATE_MAGIC: &[u8; 6] = b"SLAPV1";
pub const FEATURE_MAGIC: &[u8; 6] = b"SLAPF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestMode {
    Precomputed,
    Raw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecomputedRecord {
    pub id: u64,
    pub loss: f64,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenPair {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: u64,
    pub loss: f64,
    pub tokens: Vec<TokenPair>,
}

fn validate_loss(line: usize, id: u64, loss: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(SlapError::schema(line, format!("sample {id} has non-finite loss")));
    }
    Ok(())
}

impl PrecomputedRecord {
    fn into_sample(self, line: usize, declared_dim: &mut Option<usize>) -> Result<SampleRecord> {
        validate_loss(line, self.id, self.loss)?;
        let dim = *declared_dim.get_or_insert(self.feature.len());
        if self.feature.len() != dim {
            return Err(SlapError::schema(
                line,
                format!("feature length {} does not match declared D = {dim}", self.feature.len()),
            ));
        }
        let feature = FeatureVector::new(self.feature)
            .map_err(|e| SlapError::schema(line, e.to_string()))?;
        SampleRecord::new(self.id, self.loss, feature)
    }
}

impl RawRecord {
    fn into_raw_sample(
        self,
        line: usize,
        declared_dims: &mut Option<(usize, usize)>,
    ) -> Result<RawSample> {
        validate_loss(line, self.id, self.loss)?;
        if self.tokens.is_empty() {
            return Err(SlapError::schema(line, format!("sample {} has no tokens", self.id)));
        }
        let tokens: Vec<TokenGradientInput> = self
            .tokens
            .into_iter()
            .map(|t| {
                TokenGradientInput::new(t.g, t.h).map_err(|e| SlapError::schema(line, e.to_string()))
            })
            .collect::<Result<_>>()?;
        let dims = *declared_dims
            .get_or_insert((tokens[0].output_grad.len(), tokens[0].hidden.len()));
        for token in &tokens {
            if token.output_grad.len() != dims.0 || token.hidden.len() != dims.1 {
                return Err(SlapError::schema(
                    line,
                    format!(
                        "token shape {}x{} does not match declared D x H = {}x{}",
                        token.output_grad.len(),
                        token.hidden.len(),
                        dims.0,
                        dims.1
                    ),
                ));
            }
        }
        let gradient =
            sequence_gradient(&tokens).map_err(|e| SlapError::schema(line, e.to_string()))?;
        Ok(RawSample { id: self.id, loss: self.loss, gradient })
    }
}

/// Streaming reader of precomputed records, grouped into batches.
///
/// `batch_size == 0` puts the whole file in one batch. D is pinned by the
/// first record across the entire stream.
pub struct PrecomputedReader<R: BufRead> {
    reader: R,
    batch_size: usize,
    declared_dim: Option<usize>,
    line: usize,
    buffered: Vec<SampleRecord>,
    done: bool,
}

impl<R: BufRead> PrecomputedReader<R> {
    pub fn new(reader: R, batch_size: usize) -> Self {
        Self { reader, batch_size, declared_dim: None, line: 0, buffered: Vec::new(), done: false }
    }

    pub fn next_batch(&mut self) -> Result<Option<Batch>> {
        if self.done {
            return Ok(None);
        }
        let mut line_buf = String::new();
        loop {
            line_buf.clear();
            let read = self.reader.read_line(&mut line_buf)?;
            if read == 0 {
                self.done = true;
                break;
            }
            self.line += 1;
            let trimmed = line_buf.trim();
            if trimmed.is_empty() {
                continue;
            }
            let record: PrecomputedRecord = serde_json::from_str(trimmed)
                .map_err(|e| SlapError::schema(self.line, format!("malformed record: {e}")))?;
            self.buffered.push(record.into_sample(self.line, &mut self.declared_dim)?);
            if self.batch_size > 0 && self.buffered.len() == self.batch_size {
                return Ok(Some(Batch::new(std::mem::take(&mut self.buffered))?));
            }
        }
        if self.buffered.is_empty() {
            Ok(None)
        } else {
            Ok(Some(Batch::new(std::mem::take(&mut self.buffered))?))
        }
    }
}

/// Streaming reader of raw records, grouped into batches of [`RawSample`].
pub struct RawReader<R: BufRead> {
    reader: R,
    batch_size: usize,
    declared_dims: Option<(usize, usize)>,
    line: usize,
    buffered: Vec<RawSample>,
    done: bool,
}

impl<R: BufRead> RawReader<R> {
    pub fn new(reader: R, batch_size: usize) -> Self {
        Self {
            reader,
            batch_size,
            declared_dims: None,
            line: 0,
            buffered: Vec::new(),
            done: false,
        }
    }

    pub fn declared_dims(&self) -> Option<(usize, usize)> {
        self.declared_dims
    }

    pub fn next_batch(&mut self) -> Result<Option<Vec<RawSample>>> {
        if self.done {
            return Ok(None);
        }
        let mut line_buf = String::new();
        loop {
            line_buf.clear();
            let read = self.reader.read_line(&mut line_buf)?;
            if read == 0 {
                self.done = true;
                break;
            }
            self.line += 1;
            let trimmed = line_buf.trim();
            if trimmed.is_empty() {
                continue;
            }
            let record: RawRecord = serde_json::from_str(trimmed)
                .map_err(|e| SlapError::schema(self.line, format!("malformed record: {e}")))?;
            self.buffered.push(record.into_raw_sample(self.line, &mut self.declared_dims)?);
            if self.batch_size > 0 && self.buffered.len() == self.batch_size {
                return Ok(Some(check_unique_ids(std::mem::take(&mut self.buffered))?));
            }
        }
        if self.buffered.is_empty() {
            Ok(None)
        } else {
            Ok(Some(check_unique_ids(std::mem::take(&mut self.buffered))?))
        }
    }
}

fn check_unique_ids(samples: Vec<RawSample>) -> Result<Vec<RawSample>> {
    let mut seen = std::collections::HashSet::with_capacity(samples.len());
    for sample in &samples {
        if !seen.insert(sample.id) {
            return Err(SlapError::Integrity(format!(
                "duplicate sample id {} within a batch",
                sample.id
            )));
        }
    }
    Ok(samples)
}

/// Serialize a coreset as line-delimited JSON, one entry per line.
pub fn coreset_to_jsonl(coreset: &crate::diversify::Coreset) -> String {
    let mut out = String::new();
    for entry in coreset.entries() {
        out.push_str(&serde_json::to_string(entry).expect("coreset entries serialize"));
        out.push('\n');
    }
    out
}

// --- SLAPV1 state persistence -------------------------------------------------

pub fn encode_state(state: &SecondMomentState) -> Vec<u8> {
    let d = state.vocab_dim();
    let h = state.hidden_dim();
    let mut out = Vec::with_capacity(6 + 4 + 4 + 8 + 8 + 8 + 8 * d * h);
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&state.step().to_le_bytes());
    out.extend_from_slice(&state.beta2().to_le_bytes());
    out.extend_from_slice(&state.epsilon().to_le_bytes());
    for &value in state.v().data() {
        out.extend_from_slice(&value.to_le_bytes());
    }
    out
}

pub fn decode_state(bytes: &[u8]) -> Result<SecondMomentState> {
    let header_len = 6 + 4 + 4 + 8 + 8 + 8;
    if bytes.len() < header_len {
        return Err(SlapError::schema(0, "state file too short for SLAPV1 header"));
    }
    if &bytes[..6] != STATE_MAGIC {
        return Err(SlapError::schema(0, "bad magic: not a SLAPV1 state file"));
    }
    let d = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let step = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let beta2 = f64::from_le_bytes(bytes[22..30].try_into().unwrap());
    let epsilon = f64::from_le_bytes(bytes[30..38].try_into().unwrap());
    let expected = header_len + 8 * d * h;
    if bytes.len() != expected {
        return Err(SlapError::schema(
            0,
            format!("state file is {} bytes, expected {expected} for {d}x{h}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(d * h);
    for chunk in bytes[header_len..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let v = Matrix::from_rows(d, h, data)?;
    SecondMomentState::from_parts(v, step, beta2, epsilon)
}

// --- SLAPF1 packed feature files ----------------------------------------------

pub fn encode_feature_file(records: &[PrecomputedRecord]) -> Result<Vec<u8>> {
    let d = records.first().map(|r| r.feature.len()).unwrap_or(0);
    let mut out = Vec::with_capacity(6 + 4 + 8 + records.len() * (8 + 8 + 4 * d));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for record in records {
        if record.feature.len() != d {
            return Err(SlapError::DimensionMismatch(format!(
                "record {} has feature length {}, file declared {d}",
                record.id,
                record.feature.len()
            )));
        }
        out.extend_from_slice(&record.id.to_le_bytes());
        out.extend_from_slice(&record.loss.to_le_bytes());
        for &value in &record.feature {
            out.extend_from_slice(&(value as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<Vec<PrecomputedRecord>> {
    let header_len = 6 + 4 + 8;
    if bytes.len() < header_len {
        return Err(SlapError::schema(0, "feature file too short for SLAPF1 header"));
    }
    if &bytes[..6] != FEATURE_MAGIC {
        return Err(SlapError::schema(0, "bad magic: not a SLAPF1 feature file"));
    }
    let d = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let record_len = 8 + 8 + 4 * d;
    let expected = header_len + count * record_len;
    if bytes.len() != expected {
        return Err(SlapError::schema(
            0,
            format!("feature file is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let mut records = Vec::with_capacity(count);
    let mut offset = header_len;
    for index in 0..count {
        let id = u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        let loss = f64::from_le_bytes(bytes[offset + 8..offset + 16].try_into().unwrap());
        if !loss.is_finite() {
            return Err(SlapError::schema(index + 1, format!("sample {id} has non-finite loss")));
        }
        let mut feature = Vec::with_capacity(d);
        for j in 0..d {
            let at = offset + 16 + 4 * j;
            feature.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64);
        }
        records.push(PrecomputedRecord { id, loss, feature });
        offset += record_len;
    }
    Ok(records)
}

/// True when `bytes` begins with the SLAPF1 magic, for auto-detecting the
/// precomputed input flavor.
pub fn is_feature_file(bytes: &[u8]) -> bool {
    bytes.len() >= 6 && &bytes[..6] == FEATURE_MAGIC
}

/// Convenience used by the CLI: read precomputed batches from either JSONL
/// bytes or a SLAPF1 blob, auto-detected by magic.
pub fn read_precomputed_batches(bytes: &[u8], batch_size: usize) -> Result<Vec<Batch>> {
    if is_feature_file(bytes) {
        let records = decode_feature_file(bytes)?;
        let mut batches = Vec::new();
        let chunk = if batch_size == 0 { records.len().max(1) } else { batch_size };
        let mut declared = Some(
            records.first().map(|r| r.feature.len()).unwrap_or_default(),
        );
        for (index, group) in records.chunks(chunk).enumerate() {
            let samples: Vec<SampleRecord> = group
                .iter()
                .cloned()
                .enumerate()
                .map(|(j, r)| r.into_sample(index * chunk + j + 1, &mut declared))
                .collect::<Result<_>>()?;
            batches.push(Batch::new(samples)?);
        }
        Ok(batches)
    } else {
        let mut reader = PrecomputedReader::new(bytes, batch_size);
        let mut batches = Vec::new();
        while let Some(batch) = reader.next_batch()? {
            batches.push(batch);
        }
        Ok(batches)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversify::{Coreset, CoresetEntry};

    #[test]
    fn empty_input_yields_zero_batches() {
        let mut reader = PrecomputedReader::new(&b""[..], 0);
        assert!(reader.next_batch().unwrap().is_none());
    }

    #[test]
    fn single_record_yields_singleton_batch() {
        let data = br#"{"id": 3, "loss": 0.5, "feature": [1.0, 2.0]}"#;
        let mut reader = PrecomputedReader::new(&data[..], 0);
        let batch = reader.next_batch().unwrap().unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.samples()[0].id, 3);
        assert!(reader.next_batch().unwrap().is_none());
    }

    #[test]
    fn batching_respects_configured_size() {
        let mut data = String::new();
        for i in 0..5 {
            data.push_str(&format!("{{\"id\": {i}, \"loss\": 0.1, \"feature\": [1.0]}}\n"));
        }
        let mut reader = PrecomputedReader::new(data.as_bytes(), 2);
        let sizes: Vec<usize> = std::iter::from_fn(|| reader.next_batch().unwrap())
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn malformed_line_is_named() {
        let data = b"{\"id\": 0, \"loss\": 0.1, \"feature\": [1.0]}\nnot json\n";
        let mut reader = PrecomputedReader::new(&data[..], 0);
        match reader.next_batch() {
            Err(SlapError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn feature_length_mismatch_names_line() {
        let data = b"{\"id\": 0, \"loss\": 0.1, \"feature\": [1.0]}\n{\"id\": 1, \"loss\": 0.2, \"feature\": [1.0, 2.0]}\n";
        let mut reader = PrecomputedReader::new(&data[..], 0);
        match reader.next_batch() {
            Err(SlapError::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("declared D = 1"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_an_integrity_error() {
        let data = b"{\"id\": 7, \"loss\": 0.1, \"feature\": [1.0]}\n{\"id\": 7, \"loss\": 0.2, \"feature\": [1.0]}\n";
        let mut reader = PrecomputedReader::new(&data[..], 0);
        assert!(matches!(reader.next_batch(), Err(SlapError::Integrity(_))));
    }

    #[test]
    fn raw_records_become_summed_gradients() {
        let data = br#"{"id": 1, "loss": 0.3, "tokens": [{"g": [1.0, 0.0], "h": [2.0, 3.0]}, {"g": [0.0, 1.0], "h": [1.0, 1.0]}]}"#;
        let mut reader = RawReader::new(&data[..], 0);
        let batch = reader.next_batch().unwrap().unwrap();
        assert_eq!(batch.len(), 1);
        let g = &batch[0].gradient;
        assert_eq!(g.matrix().row(0), &[2.0, 3.0]);
        assert_eq!(g.matrix().row(1), &[1.0, 1.0]);
        assert_eq!(reader.declared_dims(), Some((2, 2)));
    }

    #[test]
    fn raw_inconsistent_hidden_dim_names_line() {
        let data = b"{\"id\": 1, \"loss\": 0.3, \"tokens\": [{\"g\": [1.0], \"h\": [2.0, 3.0]}]}\n{\"id\": 2, \"loss\": 0.3, \"tokens\": [{\"g\": [1.0], \"h\": [2.0]}]}\n";
        let mut reader = RawReader::new(&data[..], 0);
        match reader.next_batch() {
            Err(SlapError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn raw_empty_token_list_is_schema_error() {
        let data = br#"{"id": 1, "loss": 0.3, "tokens": []}"#;
        let mut reader = RawReader::new(&data[..], 0);
        assert!(matches!(reader.next_batch(), Err(SlapError::Schema { line: 1, .. })));
    }

    #[test]
    fn fuzz_corpus_of_malformed_records_is_rejected() {
        // Each entry: (line content, expects-integrity) — everything else is
        // a schema error naming line 2.
        let good = "{\"id\": 0, \"loss\": 0.1, \"feature\": [1.0]}";
        let corpus: Vec<(&str, bool)> = vec![
            ("not json at all", false),
            ("{\"id\": -4, \"loss\": 0.1, \"feature\": [1.0]}", false), // negative id
            ("{\"loss\": 0.1, \"feature\": [1.0]}", false),             // missing id
            ("{\"id\": 1, \"feature\": [1.0]}", false),                 // missing loss
            ("{\"id\": 1, \"loss\": \"x\", \"feature\": [1.0]}", false), // wrong type
            ("{\"id\": 1, \"loss\": 1e999, \"feature\": [1.0]}", false), // non-finite loss
            ("{\"id\": 1, \"loss\": 0.1, \"feature\": [1.0, 2.0]}", false), // wrong D
            ("{\"id\": 1, \"loss\": 0.1, \"feature\": [-1.0]}", false), // negative feature
            ("{\"id\": 1, \"loss\": 0.1, \"feature\": [1e999]}", false), // non-finite feature
            ("{\"id\": 0, \"loss\": 0.1, \"feature\": [1.0]}", true),   // duplicate id
        ];
        for (bad_line, expect_integrity) in corpus {
            let data = format!("{good}\n{bad_line}\n");
            let mut reader = PrecomputedReader::new(data.as_bytes(), 0);
            let result = reader.next_batch();
            if expect_integrity {
                assert!(
                    matches!(result, Err(SlapError::Integrity(_))),
                    "expected integrity error for {bad_line:?}, got {result:?}"
                );
            } else {
                assert!(
                    matches!(result, Err(SlapError::Schema { line: 2, .. })),
                    "expected schema error at line 2 for {bad_line:?}, got {result:?}"
                );
            }
        }
    }

    #[test]
    fn state_round_trips_bit_exactly() {
        use crate::features::{update_second_moment, SequenceGradient};
        let state = SecondMomentState::new(2, 3, 0.999, 1e-8).unwrap();
        let g = SequenceGradient::from_matrix(
            Matrix::from_rows(2, 3, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap(),
        )
        .unwrap();
        let state = update_second_moment(&state, &g).unwrap();
        let bytes = encode_state(&state);
        let decoded = decode_state(&bytes).unwrap();
        assert_eq!(decoded, state);
        assert_eq!(encode_state(&decoded), bytes);
    }

    #[test]
    fn state_decode_rejects_bad_magic_and_truncation() {
        let state = SecondMomentState::new(1, 1, 0.999, 1e-8).unwrap();
        let mut bytes = encode_state(&state);
        assert!(matches!(decode_state(&bytes[..10]), Err(SlapError::Schema { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_state(&bytes), Err(SlapError::Schema { .. })));
    }

    #[test]
    fn feature_file_round_trips_at_f32_precision() {
        let records = vec![
            PrecomputedRecord { id: 1, loss: 0.75, feature: vec![1.25, 2.5] },
            PrecomputedRecord { id: 2, loss: -0.5, feature: vec![0.0, 3.75] },
        ];
        let bytes = encode_feature_file(&records).unwrap();
        assert!(is_feature_file(&bytes));
        let decoded = decode_feature_file(&bytes).unwrap();
        assert_eq!(decoded.len(), 2);
        for (a, b) in records.iter().zip(&decoded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.loss, b.loss);
            // exactly representable in f32, so exact here
            assert_eq!(a.feature, b.feature);
        }
    }

    #[test]
    fn read_precomputed_batches_handles_both_flavors() {
        let records = vec![
            PrecomputedRecord { id: 1, loss: 0.5, feature: vec![1.0] },
            PrecomputedRecord { id: 2, loss: 1.5, feature: vec![2.0] },
            PrecomputedRecord { id: 3, loss: 2.5, feature: vec![3.0] },
        ];
        let binary = encode_feature_file(&records).unwrap();
        let jsonl: String = records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        let from_binary = read_precomputed_batches(&binary, 2).unwrap();
        let from_jsonl = read_precomputed_batches(jsonl.as_bytes(), 2).unwrap();
        assert_eq!(from_binary.len(), 2);
        assert_eq!(from_binary, from_jsonl);
    }

    #[test]
    fn coreset_jsonl_has_one_line_per_entry_with_null_for_initial_point() {
        let coreset = Coreset::new(vec![
            CoresetEntry { id: 5, order: 0, weight: 1.0, stratum: 0, min_dist_at_selection: None },
            CoresetEntry {
                id: 9,
                order: 1,
                weight: 2.0,
                stratum: 1,
                min_dist_at_selection: Some(1.5),
            },
        ]);
        let text = coreset_to_jsonl(&coreset);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"min_dist_at_selection\":null"));
        assert!(lines[1].contains("\"min_dist_at_selection\":1.5"));
        // round-trip
        let back: CoresetEntry = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(back.id, 9);
    }
}
