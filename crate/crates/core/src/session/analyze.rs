//! Materializes every session product as files in an output directory.
//! Output is a pure function of the bundle and the session options, so
//! reruns produce identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnalysisSession, QueryError, SessionOptions};
use crate::attention::SimilarityKind;
use crate::behavioural::{aggregate_by_tag, dataset_tokenisation_rate, SilhouetteInfo};
use crate::bundle::{EmbeddingKey, Split};
use crate::error::{Error, Result};
use crate::eval::{Level, ReportOptions};
use crate::repr::representation_shift;
use crate::spans::DecodeMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisManifest {
    pub bundle: String,
    pub options: SessionOptions,
    pub token_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<SilhouetteInfo>,
    pub files: Vec<String>,
    pub notices: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeOutcome {
    pub files: Vec<String>,
    pub notices: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<String>,
    notices: Vec<String>,
}

impl Writer<'_> {
    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, data).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_vec_pretty(value).map_err(|e| Error::json(self.dir.join(name), e))?;
        s.push(b'\n');
        self.bytes(name, &s)
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, &r).map_err(|e| Error::json(self.dir.join(name), e))?;
            buf.push(b'\n');
        }
        self.bytes(name, &buf)
    }

    /// Records a skipped product; other query errors abort.
    fn skip(&mut self, what: &str, err: QueryError) -> Result<()> {
        match err {
            QueryError::Unavailable(m) => {
                self.notices.push(format!("{what} skipped: {m}"));
                Ok(())
            }
            other => Err(Error::InvalidInput(format!("{what}: {other}"))),
        }
    }
}

pub fn write_analysis(session: &AnalysisSession, out: impl AsRef<Path>) -> Result<AnalyzeOutcome> {
    let dir = out.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = Writer {
        dir,
        files: Vec::new(),
        notices: Vec::new(),
    };
    let bundle = session.bundle();
    let labels = &bundle.labels;

    let mut token_rows = 0;
    let mut silhouette = None;
    match session.token_table() {
        Ok(table) => {
            let rows = session.token_rows().expect("token table is available");
            token_rows = rows.len();
            silhouette = table.silhouette.clone();
            if silhouette.is_none() {
                w.notices
                    .push("silhouette skipped: bundle has no fine-tuned final-layer embeddings".into());
            }
            w.jsonl("analysis.tokens.jsonl", rows)?;
            let aggregates = aggregate_by_tag(&table.rows, labels.labels(), true);
            w.json(
                "aggregates.json",
                &serde_json::json!({
                    "tokenisation_rate": {
                        "train": dataset_tokenisation_rate(bundle, Split::Train),
                        "test": dataset_tokenisation_rate(bundle, Split::Test),
                    },
                    "by_tag": aggregates,
                }),
            )?;
            let mut reports = serde_json::Map::new();
            let tok = session.score(Level::Token, DecodeMode::Repair, ReportOptions::default()).map_err(query)?;
            reports.insert("token".into(), serde_json::to_value(&*tok).expect("report serializes"));
            for mode in DecodeMode::ALL {
                let r = session.score(Level::Entity, mode, ReportOptions::default()).map_err(query)?;
                reports.insert(
                    format!("entity.{}", mode.as_str()),
                    serde_json::to_value(&*r).expect("report serializes"),
                );
            }
            w.json("reports.json", &reports)?;
        }
        Err(e) => w.skip("token table, aggregates and reports", e)?,
    }

    let mut alignment = Vec::new();
    for &k in &session.options().cluster_ks {
        match session.cluster_view(k) {
            Ok(view) => {
                w.jsonl(&format!("clusters.k{k}.jsonl"), &view.assignments)?;
                w.json(&format!("centroids.k{k}.json"), &view.centroid_similarity)?;
                for a in &view.alignment {
                    alignment.push(serde_json::json!({
                        "k": k,
                        "family": a.family,
                        "homogeneity": a.homogeneity,
                        "completeness": a.completeness,
                        "v_measure": a.v_measure,
                        "inertia": view.inertia,
                        "headline": a.family.default_k() == k,
                    }));
                }
            }
            Err(e) => w.skip(&format!("clustering k={k}"), e)?,
        }
    }
    if !alignment.is_empty() {
        w.json("alignment.json", &alignment)?;
    }

    match shift_rows(session) {
        Some(report) => w.json("representation_shift.json", &report?)?,
        None => w
            .notices
            .push("representation shift skipped: needs pretrained and fine-tuned final-layer embeddings".into()),
    }

    match session.attention_scores() {
        Ok(s) => w.json(
            "attention.scores.json",
            &serde_json::json!({ "summary": s.0, "sentences": s.1 }),
        )?,
        Err(e) => w.skip("attention score similarity", e)?,
    }
    match session.attention_summary(SimilarityKind::Weights) {
        Ok(m) => w.json("attention.weights.json", &m)?,
        Err(e) => w.skip("attention weight similarity", e)?,
    }

    let mut files = w.files.clone();
    files.push("analysis.manifest.json".into());
    let manifest = AnalysisManifest {
        bundle: bundle.manifest.name.clone(),
        options: session.options().clone(),
        token_rows,
        silhouette,
        files: files.clone(),
        notices: w.notices.clone(),
    };
    w.json("analysis.manifest.json", &manifest)?;
    Ok(AnalyzeOutcome {
        files,
        notices: w.notices,
    })
}

fn query(e: QueryError) -> Error {
    Error::InvalidInput(e.to_string())
}

fn shift_rows(session: &AnalysisSession) -> Option<Result<crate::repr::ShiftReport>> {
    let bundle = session.bundle();
    let pre = bundle.embedding(EmbeddingKey::PRETRAINED_FINAL)?;
    let post = bundle.embedding(EmbeddingKey::FINETUNED_FINAL)?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut surfaces = Vec::new();
    for t in bundle.core_tokens(Split::Test) {
        if let (Some(x), Some(y)) = (pre.vector(&t.id), post.vector(&t.id)) {
            a.push(x);
            b.push(y);
            surfaces.push(t.surface.as_str());
        }
    }
    Some(representation_shift(&a, &b, &surfaces, session.options().shift_top_n))
}
