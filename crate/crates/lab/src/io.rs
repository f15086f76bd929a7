//! On-disk formats: trace sets, checkpoints, and metric tables.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ssa_core::codec::{decode, parse_layout, write_doc, Encoded, Layout, Vocab};
use ssa_core::model::{Model, ModelConfig};

use crate::error::{LabError, Result};

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| LabError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).map_err(LabError::internal)?;
    write_file(path, (text + "\n").as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Internal(format!("{}: {e}", path.display())))
}

pub fn trace_stem(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("{i:05}"))
}

/// Files written for one trace: tokens, layout sidecar, and event log.
pub fn write_trace<E: Serialize>(dir: &Path, i: usize, enc: &Encoded, events: &E) -> Result<Vec<PathBuf>> {
    let stem = trace_stem(dir, i);
    Ok(vec![
        write_file(&stem.with_extension("tok"), (enc.text() + "\n").as_bytes())?,
        write_json(&stem.with_extension("layout.json"), &enc.layout)?,
        write_json(&stem.with_extension("events.json"), events)?,
    ])
}

pub fn vocab_path(dir: &Path) -> PathBuf {
    dir.join("vocab.json")
}

pub fn read_vocab(dir: &Path) -> Result<Vocab> {
    let mut v: Vocab = read_json(&vocab_path(dir))?;
    v.reindex();
    Ok(v)
}

/// Token files in index order.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tok"))
        .collect();
    files.sort();
    Ok(files)
}

/// Parse one token file back to an encoded trace, with roles recovered by
/// decoding, and check it against its layout sidecar.
pub fn read_trace(tok: &Path) -> Result<Encoded> {
    let text = std::fs::read_to_string(tok).map_err(|e| LabError::io(tok, e))?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let bad = |e: String| LabError::Internal(format!("{}: {e}", tok.display()));
    let doc = decode(&tokens).map_err(|e| bad(e.to_string()))?;
    let enc = write_doc(&doc);
    if enc.tokens != tokens {
        return Err(bad("token file does not re-encode to itself".into()));
    }
    let layout = parse_layout(&tokens).map_err(|e| bad(e.to_string()))?;
    let sidecar: Layout = read_json(&tok.with_extension("layout.json"))?;
    if layout != sidecar || layout != enc.layout {
        return Err(bad("layout sidecar disagrees with the token file".into()));
    }
    Ok(enc)
}

pub fn read_traces(dir: &Path) -> Result<(Vocab, Vec<Encoded>)> {
    let vocab = read_vocab(dir)?;
    let traces = trace_files(dir)?.iter().map(|p| read_trace(p)).collect::<Result<Vec<_>>>()?;
    Ok((vocab, traces))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
    params: usize,
}

const CHECKPOINT_FORMAT: &str = "ssa-checkpoint-v1";

/// One JSON header line followed by the parameters as little-endian `f32`.
pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<PathBuf> {
    let header = CheckpointHeader { format: CHECKPOINT_FORMAT.into(), config: model.cfg, params: model.params.len() };
    let mut bytes = serde_json::to_vec(&header).map_err(LabError::internal)?;
    bytes.push(b'\n');
    bytes.reserve(4 * model.params.len());
    for p in &model.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    let bad = |m: &str| LabError::Internal(format!("{}: {m}", path.display()));
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing checkpoint header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(&e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad("unknown checkpoint format"));
    }
    let body = &bytes[nl + 1..];
    if body.len() != 4 * header.params {
        return Err(bad("parameter count does not match the header"));
    }
    let params = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Model::from_params(header.config, params).map_err(|e| bad(&e.to_string()))
}

/// CSV table with a header row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(LabError::internal)?;
    }
    let bytes = w.into_inner().map_err(LabError::internal)?;
    write_file(path, &bytes)
}

/// A CSV file as header plus string rows.
pub fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::Internal(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(LabError::internal)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(LabError::internal)?;
    Ok((header, rows))
}

/// Output format of command summaries on stdout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum OutFormat {
    #[default]
    Csv,
    Json,
}

/// Echo a metric table to stdout in the requested format.
pub fn print_table(path: &Path, format: OutFormat) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match format {
        OutFormat::Csv => {
            let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
            out.write_all(&bytes).map_err(LabError::internal)
        }
        OutFormat::Json => {
            let (header, rows) = read_csv_table(path)?;
            let objs: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .into_iter()
                .map(|r| {
                    header
                        .iter()
                        .cloned()
                        .zip(r.into_iter().map(|v| serde_json::from_str(&v).unwrap_or(serde_json::Value::String(v))))
                        .collect()
                })
                .collect();
            serde_json::to_writer_pretty(&mut out, &objs).map_err(LabError::internal)?;
            writeln!(out).map_err(LabError::internal)
        }
    }
}
