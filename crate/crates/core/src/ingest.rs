// SPDX-License-Identifier: MIT OR Apache-2.0

//! File loaders for embedding sequences and gold segmentations, plus an
//! optional HTTP client for embedding services.
//!
//! JSONL rows look like `{"vec": [..], "text": "..", "boundary_after": true}`;
//! only `vec` is required. CSV files hold one observation per row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KcpdError, Result};
use crate::kernels::EmbeddingSequence;
use crate::segmentation::Segmentation;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub seq: EmbeddingSequence,
    pub gold: Option<Segmentation>,
    pub texts: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetEntry {
    pub fn new(seq: EmbeddingSequence, gold: Option<Segmentation>, texts: Option<Vec<String>>) -> Result<Self> {
        if let Some(g) = &gold {
            if g.len() != seq.len() {
                return Err(KcpdError::InvalidSegmentation(format!(
                    "gold segmentation covers {} positions, sequence has {}",
                    g.len(),
                    seq.len()
                )));
            }
        }
        if let Some(t) = &texts {
            if t.len() != seq.len() {
                return Err(KcpdError::DimensionMismatch {
                    expected: seq.len(),
                    found: t.len(),
                });
            }
        }
        Ok(Self { seq, gold, texts })
    }
}

impl Dataset {
    /// Loads every `*.jsonl` file in `dir`, sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let entries = paths.iter().map(load_jsonl).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            entries,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRow {
    vec: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_after: Option<bool>,
}

/// Reads a JSONL sequence. Blank lines are skipped.
///
/// The gold segmentation is present when any row carries `boundary_after`;
/// a flag on the final row marks the end of the sequence and adds no
/// boundary. Texts are kept only when every row has one.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<DatasetEntry> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut data = Vec::new();
    let mut dim = None;
    let mut texts = Vec::new();
    let mut all_texts = true;
    let mut flags = Vec::new();
    let mut any_flag = false;
    let mut rows = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(&line).map_err(|e| KcpdError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let d = *dim.get_or_insert(row.vec.len());
        if row.vec.len() != d || d == 0 {
            return Err(KcpdError::Parse {
                line: line_no,
                msg: format!("vector has dimension {}, expected {d}", row.vec.len()),
            });
        }
        if let Some(col) = row.vec.iter().position(|v| !v.is_finite()) {
            return Err(KcpdError::Parse {
                line: line_no,
                msg: format!("non-finite value in column {}", col + 1),
            });
        }
        data.extend_from_slice(&row.vec);
        match row.text {
            Some(t) => texts.push(t),
            None => all_texts = false,
        }
        any_flag |= row.boundary_after.is_some();
        flags.push(row.boundary_after.unwrap_or(false));
        rows += 1;
    }
    if rows == 0 {
        return Err(KcpdError::invalid(format!(
            "{} contains no rows",
            path.as_ref().display()
        )));
    }
    let seq = EmbeddingSequence::from_flat(data, rows, dim.unwrap_or(0))?;
    let gold = any_flag
        .then(|| {
            let cps = (1..rows).filter(|&tau| flags[tau - 1]).collect();
            Segmentation::new(rows, cps)
        })
        .transpose()?;
    DatasetEntry::new(seq, gold, all_texts.then_some(texts))
}

/// Writes a sequence in the format read by [`load_jsonl`]. Floats use the
/// shortest representation that parses back to the same bits.
pub fn save_jsonl(path: impl AsRef<Path>, entry: &DatasetEntry) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let boundaries = entry.gold.as_ref().map(|g| {
        let mut flags = vec![false; g.len()];
        g.change_points().iter().for_each(|&tau| flags[tau - 1] = true);
        flags
    });
    for (t, row) in entry.seq.rows().enumerate() {
        let line = JsonlRow {
            vec: row.to_vec(),
            text: entry.texts.as_ref().map(|v| v[t].clone()),
            boundary_after: boundaries.as_ref().map(|b| b[t]),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV matrix. Decimal separators are always `.`.
/// Row numbers in errors are 1-based file lines; columns are 1-based.
pub fn load_csv_matrix(path: impl AsRef<Path>, skip_header: bool) -> Result<EmbeddingSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| csv_error(&e))?;
    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        let d = *dim.get_or_insert(record.len());
        if record.len() != d {
            return Err(KcpdError::Csv {
                row: line,
                col: record.len().min(d) + 1,
                msg: format!("row has {} fields, expected {d}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| KcpdError::Csv {
                row: line,
                col: c + 1,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(KcpdError::Csv {
                    row: line,
                    col: c + 1,
                    msg: "non-finite value".into(),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    EmbeddingSequence::from_flat(data, rows, dim.unwrap_or(0))
}

fn csv_error(e: &csv::Error) -> KcpdError {
    match e.kind() {
        csv::ErrorKind::Io(io) => KcpdError::Io(std::io::Error::new(io.kind(), io.to_string())),
        _ => {
            let row = e.position().map_or(0, |p| p.line() as usize);
            KcpdError::Csv {
                row,
                col: 0,
                msg: e.to_string(),
            }
        }
    }
}

/// Writes one row per observation with 17 significant digits, enough to
/// reproduce every value exactly.
pub fn save_csv_matrix(path: impl AsRef<Path>, seq: &EmbeddingSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in seq.rows() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{v:.16e}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Scales every row to unit Euclidean norm; zero rows are rejected.
pub fn normalize_rows(seq: &EmbeddingSequence) -> Result<EmbeddingSequence> {
    seq.normalized()
}

/// Reads one text per line, dropping a trailing empty line.
pub fn load_texts(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    reader.lines().map(|l| l.map_err(KcpdError::from)).collect()
}

#[cfg(feature = "http")]
pub use http::{fetch_embeddings, EmbedServiceConfig};

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};
    use serde_json::Value;

    use crate::error::{KcpdError, Result};

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct EmbedServiceConfig {
        pub endpoint: String,
        pub model: String,
        /// Name of the environment variable holding the bearer token.
        pub token_env: String,
        pub batch_size: usize,
        pub max_retries: u32,
        pub timeout_secs: u64,
        /// Location of each vector in the response; `[i]` marks the input index.
        pub vector_path: String,
        /// First retry delay in milliseconds; doubles on every retry.
        pub backoff_base_ms: u64,
        pub parallel_connections: usize,
    }

    impl Default for EmbedServiceConfig {
        fn default() -> Self {
            Self {
                endpoint: "https://api.openai.com/v1/embeddings".into(),
                model: "text-embedding-3-small".into(),
                token_env: "EMBEDDING_API_KEY".into(),
                batch_size: 100,
                max_retries: 5,
                timeout_secs: 60,
                vector_path: "data[i].embedding".into(),
                backoff_base_ms: 1000,
                parallel_connections: 1,
            }
        }
    }

    impl EmbedServiceConfig {
        pub fn validate(&self) -> Result<()> {
            if self.batch_size == 0 || self.parallel_connections == 0 {
                return Err(KcpdError::invalid(
                    "batch size and parallel connections must be >= 1",
                ));
            }
            VectorPath::parse(&self.vector_path)?;
            Ok(())
        }
    }

    struct VectorPath {
        outer: Vec<String>,
        inner: Vec<String>,
    }

    impl VectorPath {
        fn parse(path: &str) -> Result<Self> {
            let (outer, inner) = path.split_once("[i]").ok_or_else(|| {
                KcpdError::invalid(format!("vector path {path:?} has no [i] index marker"))
            })?;
            if inner.contains("[i]") {
                return Err(KcpdError::invalid("vector path has more than one [i] marker"));
            }
            let keys = |s: &str| -> Vec<String> {
                s.split('.').filter(|k| !k.is_empty()).map(String::from).collect()
            };
            Ok(Self {
                outer: keys(outer),
                inner: keys(inner),
            })
        }

        fn extract(&self, body: &Value) -> Result<Vec<Vec<f64>>> {
            let bad = |what: String| KcpdError::Http(format!("unexpected response shape: {what}"));
            let mut node = body;
            for k in &self.outer {
                node = node.get(k).ok_or_else(|| bad(format!("missing field {k:?}")))?;
            }
            let items = node.as_array().ok_or_else(|| bad("indexed field is not an array".into()))?;
            items
                .iter()
                .map(|item| {
                    let mut v = item;
                    for k in &self.inner {
                        v = v.get(k).ok_or_else(|| bad(format!("missing field {k:?}")))?;
                    }
                    v.as_array()
                        .ok_or_else(|| bad("vector is not an array".into()))?
                        .iter()
                        .map(|x| x.as_f64().ok_or_else(|| bad("vector entry is not a number".into())))
                        .collect()
                })
                .collect()
        }
    }

    fn jitter(batch: usize, attempt: u32) -> f64 {
        // deterministic factor in [0.5, 1)
        let h = crate::simulate::derive_seed(0x6a69_7474_6572, batch as u64, attempt as u64);
        0.5 + 0.5 * (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn post_batch(
        agent: &ureq::Agent,
        config: &EmbedServiceConfig,
        token: &str,
        path: &VectorPath,
        batch_idx: usize,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>> {
        let body = serde_json::json!({ "model": config.model, "input": texts });
        let mut attempt = 0u32;
        loop {
            let outcome = agent
                .post(&config.endpoint)
                .header("Authorization", &format!("Bearer {token}"))
                .header("Content-Type", "application/json")
                .send_json(&body);
            let retry_reason = match outcome {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        let value: Value = resp
                            .body_mut()
                            .read_json()
                            .map_err(|e| KcpdError::Http(format!("invalid JSON response: {e}")))?;
                        let vectors = path.extract(&value)?;
                        if vectors.len() != texts.len() {
                            return Err(KcpdError::CountMismatch {
                                expected: texts.len(),
                                got: vectors.len(),
                            });
                        }
                        return Ok(vectors);
                    }
                    if status != 429 && status < 500 {
                        return Err(KcpdError::Http(format!("HTTP status {status}")));
                    }
                    format!("HTTP status {status}")
                }
                Err(e) => e.to_string(),
            };
            if attempt >= config.max_retries {
                return Err(KcpdError::Http(format!(
                    "batch {batch_idx} failed after {} attempts: {retry_reason}",
                    attempt + 1
                )));
            }
            let delay = config.backoff_base_ms as f64 * 2f64.powi(attempt as i32) * jitter(batch_idx, attempt);
            log::warn!("batch {batch_idx}: {retry_reason}; retrying in {delay:.0} ms");
            std::thread::sleep(Duration::from_micros((delay * 1e3) as u64));
            attempt += 1;
        }
    }

    /// Embeds `texts` in batches, preserving input order. Either every text
    /// gets a vector or the call fails.
    pub fn fetch_embeddings(config: &EmbedServiceConfig, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        config.validate()?;
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let token = std::env::var(&config.token_env)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| KcpdError::MissingToken(config.token_env.clone()))?;
        let path = VectorPath::parse(&config.vector_path)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let batches: Vec<&[String]> = texts.chunks(config.batch_size).collect();
        let mut results: Vec<Option<Vec<Vec<f64>>>> = vec![None; batches.len()];
        for wave in (0..batches.len()).collect::<Vec<_>>().chunks(config.parallel_connections) {
            let outs: Vec<Result<Vec<Vec<f64>>>> = if wave.len() == 1 {
                vec![post_batch(&agent, config, &token, &path, wave[0], batches[wave[0]])]
            } else {
                std::thread::scope(|s| {
                    let handles: Vec<_> = wave
                        .iter()
                        .map(|&b| {
                            let (agent, token, path, batch) = (&agent, &token, &path, batches[b]);
                            s.spawn(move || post_batch(agent, config, token, path, b, batch))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().unwrap_or_else(|_| Err(KcpdError::Http("worker panicked".into()))))
                        .collect()
                })
            };
            for (&b, out) in wave.iter().zip(outs) {
                results[b] = Some(out?);
            }
            log::info!("embedded {} of {} batches", wave.last().map_or(0, |b| b + 1), batches.len());
        }
        let vectors: Vec<Vec<f64>> = results.into_iter().flatten().flatten().collect();
        if vectors.len() != texts.len() {
            return Err(KcpdError::CountMismatch {
                expected: texts.len(),
                got: vectors.len(),
            });
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(KcpdError::Http("service returned empty vectors".into()));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(KcpdError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(vectors)
    }
}
