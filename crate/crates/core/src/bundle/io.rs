//! Bundle directory layout.
//!
//! ```text
//! manifest.json
//! train.conll, test.conll
//! pieces.{split}.jsonl            {id, pieces:[...], dropped?}
//! predictions.test.jsonl          {id, pred, probs:[...], loss?}
//! embeddings.{state}.{layer}.jsonl           {id, vec:[...]}
//!   or embeddings.{state}.{layer}.f32 + .index.json   (raw LE f32 rows)
//! projection.test.jsonl           {id, x, y}
//! attention/{sentence}.{state}.json          layers x heads x seq x seq
//! attention_weights.{state}.json             layers x heads x vec
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::labels::{LabelSet, Split, TokenId};
use super::validate::{Rule, Violation};
use super::{
    conll, AttentionDump, AttentionEntry, AttentionStore, AttentionWeights, BundleParts,
    EmbeddingKey, EmbeddingTable, ExtractionBundle, LayerTag, Manifest, Matrix, ModelState,
    PredictionRecord, ProjectionPoint, WordPieces,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct WriteOptions {
    /// Write embeddings as raw little-endian f32 plus a JSON index.
    pub raw_embeddings: bool,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    id: TokenId,
    vec: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct RawIndex {
    dim: usize,
    ids: Vec<TokenId>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        out.push(row);
    }
    Ok(out)
}

fn embedding_paths(dir: &Path, key: EmbeddingKey) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("embeddings.{key}.jsonl")),
        dir.join(format!("embeddings.{key}.f32")),
        dir.join(format!("embeddings.{key}.index.json")),
    )
}

fn read_embeddings(dir: &Path, key: EmbeddingKey) -> Result<EmbeddingTable> {
    let (jsonl, raw, index) = embedding_paths(dir, key);
    if jsonl.exists() {
        let rows: Vec<EmbeddingRow> = read_jsonl(&jsonl)?;
        let ids = rows.iter().map(|r| r.id).collect();
        let vecs: Vec<Vec<f32>> = rows.into_iter().map(|r| r.vec).collect();
        return EmbeddingTable::new(ids, Matrix::from_rows(&vecs)?);
    }
    let idx: RawIndex = read_json(&index)?;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{}: length is not a multiple of 4",
            raw.display()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let rows = idx.ids.len();
    EmbeddingTable::new(idx.ids, Matrix::new(rows, idx.dim, data)?)
}

fn attention_path(root: &Path, sentence: usize, state: ModelState) -> PathBuf {
    root.join("attention")
        .join(format!("{sentence}.{}.json", state.as_str()))
}

fn read_attention(root: &Path, entry: AttentionEntry, state: ModelState) -> Result<AttentionDump> {
    let path = attention_path(root, entry.index, state);
    let nested: Vec<Vec<Vec<Vec<f32>>>> = read_json(&path)?;
    let layers = nested.len();
    let heads = nested.first().map_or(0, |l| l.len());
    let seq = nested
        .first()
        .and_then(|l| l.first())
        .map_or(0, |h| h.len());
    let mut data = Vec::with_capacity(layers * heads * seq * seq);
    for layer in &nested {
        if layer.len() != heads {
            return Err(Error::ShapeMismatch(format!("{}: ragged heads", path.display())));
        }
        for head in layer {
            if head.len() != seq || head.iter().any(|r| r.len() != seq) {
                return Err(Error::ShapeMismatch(format!(
                    "{}: slice is not {seq}x{seq}",
                    path.display()
                )));
            }
            for row in head {
                data.extend_from_slice(row);
            }
        }
    }
    AttentionDump::new(entry.index, state, layers, heads, seq, entry.valid_len, data)
}

/// Reads one sentence's (pretrained, fine-tuned) dumps from a bundle root.
pub fn read_attention_pair(root: &Path, entry: AttentionEntry) -> Result<(AttentionDump, AttentionDump)> {
    Ok((
        read_attention(root, entry, ModelState::Pretrained)?,
        read_attention(root, entry, ModelState::FineTuned)?,
    ))
}

/// Loads a bundle directory. Claimed-but-missing artifacts are IO errors;
/// present-but-unclaimed ones are recorded as manifest violations.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<ExtractionBundle> {
    let dir = dir.as_ref();
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let labels = LabelSet::new(manifest.labels.clone(), &manifest.outside_label)?;
    let art = &manifest.artifacts;
    let mut issues = Vec::new();

    let train = conll::parse_conll(&read_text(&dir.join("train.conll"))?, &labels, Split::Train)?;
    let test = conll::parse_conll(&read_text(&dir.join("test.conll"))?, &labels, Split::Test)?;

    let mut parts = BundleParts {
        train,
        test,
        ..Default::default()
    };

    let unclaimed = |issues: &mut Vec<Violation>, path: PathBuf, what: &str| {
        if path.exists() {
            issues.push(Violation::new(
                Rule::ManifestFlag,
                path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                format!("{what} present but not declared in manifest"),
            ));
        }
    };

    if art.pieces {
        parts.pieces = Some([
            read_jsonl::<WordPieces>(&dir.join("pieces.train.jsonl"))?,
            read_jsonl::<WordPieces>(&dir.join("pieces.test.jsonl"))?,
        ]);
    } else {
        unclaimed(&mut issues, dir.join("pieces.test.jsonl"), "pieces");
    }
    if art.predictions {
        parts.predictions = read_jsonl::<PredictionRecord>(&dir.join("predictions.test.jsonl"))?;
    } else {
        unclaimed(&mut issues, dir.join("predictions.test.jsonl"), "predictions");
    }
    let mut keys = Vec::new();
    for k in &art.embeddings {
        keys.push(k.parse::<EmbeddingKey>()?);
    }
    for state in ModelState::ALL {
        for layer in LayerTag::ALL {
            let key = EmbeddingKey { state, layer };
            if keys.contains(&key) {
                parts.embeddings.insert(key, read_embeddings(dir, key)?);
            } else {
                let (jsonl, raw, _) = embedding_paths(dir, key);
                unclaimed(&mut issues, jsonl, "embeddings");
                unclaimed(&mut issues, raw, "embeddings");
            }
        }
    }
    if art.projection {
        parts.projection = Some(read_jsonl::<ProjectionPoint>(&dir.join("projection.test.jsonl"))?);
    } else {
        unclaimed(&mut issues, dir.join("projection.test.jsonl"), "projection");
    }
    if let Some(index) = &art.attention {
        for entry in &index.sentences {
            for state in ModelState::ALL {
                let p = attention_path(dir, entry.index, state);
                if !p.exists() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "declared attention dump missing"),
                    ));
                }
            }
        }
        parts.attention = Some(AttentionStore::Disk(dir.to_path_buf()));
    } else {
        unclaimed(&mut issues, dir.join("attention"), "attention dumps");
    }
    if art.attention_weights {
        let read = |state: ModelState| -> Result<AttentionWeights> {
            let nested: Vec<Vec<Vec<f32>>> =
                read_json(&dir.join(format!("attention_weights.{}.json", state.as_str())))?;
            AttentionWeights::from_nested(nested)
        };
        parts.attention_weights = Some((read(ModelState::Pretrained)?, read(ModelState::FineTuned)?));
    } else {
        unclaimed(&mut issues, dir.join("attention_weights.finetuned.json"), "attention weights");
    }

    let mut bundle = ExtractionBundle::assemble(manifest, parts)?;
    bundle.load_issues.extend(issues);
    Ok(bundle)
}

struct Out {
    path: PathBuf,
    w: BufWriter<fs::File>,
}

impl Out {
    fn create(path: PathBuf) -> Result<Self> {
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Out {
            w: BufWriter::new(f),
            path,
        })
    }

    fn line<T: Serialize>(&mut self, row: &T) -> Result<()> {
        serde_json::to_writer(&mut self.w, row).map_err(|e| Error::json(&self.path, e))?;
        self.w.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.w.write_all(b).map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let mut out = Out::create(path)?;
    serde_json::to_writer(&mut out.w, value).map_err(|e| Error::json(&out.path, e))?;
    out.bytes(b"\n")?;
    out.finish()
}

/// Writes a bundle directory (created if needed). Output is a pure
/// function of the bundle contents.
pub fn write_bundle(bundle: &ExtractionBundle, dir: impl AsRef<Path>, opts: WriteOptions) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = bundle.manifest.clone();
    manifest.artifacts.pieces = bundle.pieces(Split::Train).is_some();
    manifest.artifacts.predictions = bundle.has_predictions();
    manifest.artifacts.embeddings = bundle.embeddings.keys().map(|k| k.to_string()).collect();
    manifest.artifacts.projection = bundle.projection.is_some();
    manifest.artifacts.attention_weights = bundle.attention_weights.is_some();
    if bundle.attention.is_none() {
        manifest.artifacts.attention = None;
    }
    write_json(dir.join("manifest.json"), &manifest)?;

    for split in Split::ALL {
        let text = conll::serialize_conll(bundle.sentences(split), &bundle.labels);
        fs::write(dir.join(format!("{split}.conll")), text)
            .map_err(|e| Error::io(dir.join(format!("{split}.conll")), e))?;
        if let Some(pieces) = bundle.pieces(split) {
            let mut out = Out::create(dir.join(format!("pieces.{split}.jsonl")))?;
            for wp in pieces.iter().flatten() {
                out.line(wp)?;
            }
            out.finish()?;
        }
    }

    if manifest.artifacts.predictions {
        let mut out = Out::create(dir.join("predictions.test.jsonl"))?;
        for t in bundle.core_tokens(Split::Test) {
            if let (Some(pred), Some(probs)) = (t.predicted_label, &t.probabilities) {
                out.line(&PredictionRecord {
                    id: t.id,
                    pred: bundle.labels.name(pred).to_string(),
                    probs: probs.clone(),
                    loss: t.loss,
                })?;
            }
        }
        out.finish()?;
    }

    for (key, table) in &bundle.embeddings {
        let (jsonl, raw, index) = embedding_paths(dir, *key);
        if opts.raw_embeddings {
            let mut out = Out::create(raw)?;
            for v in table.matrix.data() {
                out.bytes(&v.to_le_bytes())?;
            }
            out.finish()?;
            write_json(
                index,
                &RawIndex {
                    dim: table.matrix.dim(),
                    ids: table.ids.clone(),
                },
            )?;
        } else {
            let mut out = Out::create(jsonl)?;
            for (i, id) in table.ids.iter().enumerate() {
                out.line(&EmbeddingRow {
                    id: *id,
                    vec: table.matrix.row(i).to_vec(),
                })?;
            }
            out.finish()?;
        }
    }

    if let Some(points) = &bundle.projection {
        let mut out = Out::create(dir.join("projection.test.jsonl"))?;
        for p in points {
            out.line(p)?;
        }
        out.finish()?;
    }

    if let (Some(store), Some(index)) = (&bundle.attention, &manifest.artifacts.attention) {
        let adir = dir.join("attention");
        fs::create_dir_all(&adir).map_err(|e| Error::io(&adir, e))?;
        let memory: BTreeMap<usize, (AttentionDump, AttentionDump)> = match store {
            AttentionStore::Memory(m) => m.clone(),
            AttentionStore::Disk(root) => {
                let mut m = BTreeMap::new();
                for e in &index.sentences {
                    m.insert(e.index, read_attention_pair(root, *e)?);
                }
                m
            }
        };
        for (idx, (pre, post)) in &memory {
            write_json(attention_path(dir, *idx, ModelState::Pretrained), &pre.to_nested())?;
            write_json(attention_path(dir, *idx, ModelState::FineTuned), &post.to_nested())?;
        }
    }

    if let Some((pre, post)) = &bundle.attention_weights {
        write_json(dir.join("attention_weights.pretrained.json"), &pre.to_nested())?;
        write_json(dir.join("attention_weights.finetuned.json"), &post.to_nested())?;
    }
    Ok(())
}
