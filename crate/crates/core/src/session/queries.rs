use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::filter::parse_filter;
use super::table::{canonical_metric, is_categorical, is_numeric, TokenRow};
use super::{AnalysisSession, QueryError, QueryResult};
use crate::attention::{HeadSimilarityMatrix, SimilarityKind};
use crate::behavioural::NUMERIC_METRICS;
use crate::bundle::{EmbeddingKey, ModelState, Split, TokenId, VocabLevel};
use crate::eval::{
    entity_confusion_matrix, support_correlation, token_confusion_matrix, token_label_pairs, ConfusionMatrix, Level,
    ReportOptions, Side, SpanErrorJson, SupportCorrelation,
};
use crate::repr::{alignment_scores, centroid_label_similarity, project_fallback, AlignmentScores, CentroidSimilarity, LabelFamily};
use crate::spans::{decode_labels, find_scheme_violations, DecodeMode, SpanJson};
use crate::stats::{cosine, pearson, spearman};

pub const DEFAULT_PAGE_SIZE: usize = 100;
pub const MAX_PAGE_SIZE: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenPage {
    pub total: usize,
    pub page: usize,
    pub per_page: usize,
    pub pages: usize,
    pub rows: Vec<TokenRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub id: TokenId,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterView {
    pub x: String,
    pub y: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    /// Rows where either coordinate is undefined.
    pub skipped: usize,
    pub points: Vec<ScatterPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedToken {
    pub id: TokenId,
    pub x: f64,
    pub y: f64,
    pub gold: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionView {
    pub state: ModelState,
    /// `bundle` for extractor coordinates, `principal_axes` for the fallback.
    pub source: String,
    pub degenerate: bool,
    pub points: Vec<ProjectedToken>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordView {
    pub id: TokenId,
    pub surface: String,
    pub pieces: Vec<String>,
    pub dropped: bool,
    pub gold: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    pub gold_violation: bool,
    pub pred_violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpans {
    pub gold: Vec<SpanJson>,
    pub pred: Vec<SpanJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceView {
    pub split: Split,
    pub index: usize,
    pub text: String,
    pub words: Vec<WordView>,
    pub spans: BTreeMap<String, ModeSpans>,
    pub has_attention: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDistribution {
    pub surface: String,
    pub train: BTreeMap<String, u32>,
    pub test: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionView {
    pub id: TokenId,
    pub word: LevelDistribution,
    pub core_token: LevelDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarOccurrence {
    pub id: TokenId,
    pub split: Split,
    pub similarity: f64,
    pub context: String,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityView {
    pub id: TokenId,
    pub surface: String,
    pub occurrences: usize,
    pub results: Vec<SimilarOccurrence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub id: TokenId,
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub iterations: usize,
    pub n_init: usize,
    pub assignments: Vec<ClusterAssignment>,
    pub alignment: Vec<AlignmentScores>,
    pub centroid_similarity: CentroidSimilarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationView {
    pub coef: String,
    pub metrics: Vec<String>,
    /// Pairwise coefficients over tokens where both metrics are defined.
    pub matrix: Vec<Vec<Option<f64>>>,
    /// Entity-level per-class support against F1.
    pub support_f1: Option<SupportCorrelation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorListing {
    pub mode: DecodeMode,
    pub total: usize,
    pub records: Vec<SpanErrorJson>,
}

fn parse_id(raw: &str) -> QueryResult<TokenId> {
    raw.parse()
        .map_err(|_| QueryError::Unprocessable(format!("malformed token id `{raw}`")))
}

pub(super) fn projection_view(session: &AnalysisSession, state: ModelState) -> QueryResult<ProjectionView> {
    let bundle = session.bundle();
    let labels = &bundle.labels;
    let tokens = bundle.core_tokens(Split::Test);
    let describe = |id: &TokenId| {
        let t = bundle.core_token(id);
        (
            t.map(|t| labels.name(t.gold_label).to_string()).unwrap_or_default(),
            t.and_then(|t| t.predicted_label).map(|p| labels.name(p).to_string()),
        )
    };
    if state == ModelState::FineTuned {
        if let Some(points) = &bundle.projection {
            return Ok(ProjectionView {
                state,
                source: "bundle".into(),
                degenerate: false,
                points: points
                    .iter()
                    .map(|p| {
                        let (gold, pred) = describe(&p.id);
                        ProjectedToken {
                            id: p.id,
                            x: p.x,
                            y: p.y,
                            gold,
                            pred,
                        }
                    })
                    .collect(),
            });
        }
    }
    let key = EmbeddingKey {
        state,
        layer: crate::bundle::LayerTag::Final,
    };
    let table = bundle
        .embedding(key)
        .ok_or_else(|| QueryError::Unavailable(format!("bundle has neither a projection nor {key} embeddings")))?;
    let with: Vec<(TokenId, &[f32])> = tokens
        .iter()
        .filter_map(|t| table.vector(&t.id).map(|v| (t.id, v)))
        .collect();
    if with.is_empty() {
        return Err(QueryError::Unavailable(format!("no test tokens carry {key} embeddings")));
    }
    let rows: Vec<&[f32]> = with.iter().map(|w| w.1).collect();
    let p = project_fallback(&rows).map_err(|e| QueryError::Unprocessable(e.to_string()))?;
    Ok(ProjectionView {
        state,
        source: "principal_axes".into(),
        degenerate: p.degenerate,
        points: with
            .iter()
            .zip(&p.points)
            .map(|((id, _), xy)| {
                let (gold, pred) = describe(id);
                ProjectedToken {
                    id: *id,
                    x: xy[0],
                    y: xy[1],
                    gold,
                    pred,
                }
            })
            .collect(),
    })
}

impl AnalysisSession {
    pub fn token_page(&self, filter: &str, page: usize, per_page: usize) -> QueryResult<TokenPage> {
        let f = parse_filter(filter)?;
        if page == 0 {
            return Err(QueryError::Unprocessable("pages are numbered from 1".into()));
        }
        let per_page = per_page.clamp(1, MAX_PAGE_SIZE);
        let matching: Vec<&TokenRow> = self.token_rows()?.iter().filter(|r| f.matches(r)).collect();
        let total = matching.len();
        Ok(TokenPage {
            total,
            page,
            per_page,
            pages: total.div_ceil(per_page),
            rows: matching
                .into_iter()
                .skip((page - 1) * per_page)
                .take(per_page)
                .cloned()
                .collect(),
        })
    }

    /// Every row matching a filter, in id order.
    pub fn filter_rows(&self, filter: &str) -> QueryResult<Vec<&TokenRow>> {
        let f = parse_filter(filter)?;
        Ok(self.token_rows()?.iter().filter(|r| f.matches(r)).collect())
    }

    pub fn scatter(&self, x: &str, y: &str, color: Option<&str>) -> QueryResult<ScatterView> {
        for m in [x, y] {
            if !is_numeric(m) {
                return Err(QueryError::Unprocessable(format!("unknown metric `{m}`")));
            }
        }
        if let Some(c) = color {
            if !is_categorical(c) {
                return Err(QueryError::Unprocessable(format!("unknown categorical `{c}`")));
            }
        }
        let rows = self.token_rows()?;
        let mut points = Vec::with_capacity(rows.len());
        let mut skipped = 0;
        for r in rows {
            match (r.numeric(x), r.numeric(y)) {
                (Some(xv), Some(yv)) => points.push(ScatterPoint {
                    id: r.metrics.id,
                    x: xv,
                    y: yv,
                    color: color.and_then(|c| r.categorical(c)),
                }),
                _ => skipped += 1,
            }
        }
        Ok(ScatterView {
            x: canonical_metric(x).to_string(),
            y: canonical_metric(y).to_string(),
            color: color.map(str::to_string),
            skipped,
            points,
        })
    }

    pub fn sentence_view(&self, split: Split, index: usize) -> QueryResult<SentenceView> {
        let bundle = self.bundle();
        let labels = &bundle.labels;
        let sentences = bundle.sentences(split);
        let s = sentences
            .get(index)
            .ok_or_else(|| QueryError::NotFound(format!("no {split} sentence {index}")))?;
        let gold = bundle.sentence_gold(split, index);
        let predicted = split == Split::Test && bundle.has_predictions();
        let pred = bundle.sentence_pred(split, index);
        let gv = find_scheme_violations(&labels.tags_of(&gold), index);
        let pv = if predicted {
            find_scheme_violations(&labels.tags_of(&pred), index)
        } else {
            Vec::new()
        };
        let outside = labels.outside();
        let words = s
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let id = TokenId::new(split, index, w.word_index);
                let wp = bundle.word_pieces(&id);
                let core = bundle.core_token(&id);
                let p = core.and_then(|t| t.predicted_label);
                let outcome = p.filter(|_| predicted).map(|p| {
                    let g = w.gold_label;
                    match (g == outside, p == outside, g == p) {
                        (true, _, true) => "TN",
                        (false, _, true) => "TP",
                        (true, false, false) => "FP",
                        (false, true, false) => "FN",
                        _ => "FP+FN",
                    }
                    .to_string()
                });
                WordView {
                    id,
                    surface: w.surface.clone(),
                    pieces: wp.map(|p| p.pieces.clone()).unwrap_or_else(|| vec![w.surface.clone()]),
                    dropped: bundle.is_dropped(&id),
                    gold: labels.name(w.gold_label).to_string(),
                    pred: p.filter(|_| predicted).map(|p| labels.name(p).to_string()),
                    outcome,
                    gold_violation: gv.iter().any(|v| v.index == i),
                    pred_violation: pv.iter().any(|v| v.index == i),
                }
            })
            .collect();
        let mut spans = BTreeMap::new();
        for mode in DecodeMode::ALL {
            spans.insert(
                mode.as_str().to_string(),
                ModeSpans {
                    gold: decode_labels(labels, &gold, mode, index).iter().map(|s| s.to_json(labels)).collect(),
                    pred: if predicted {
                        decode_labels(labels, &pred, mode, index).iter().map(|s| s.to_json(labels)).collect()
                    } else {
                        Vec::new()
                    },
                },
            );
        }
        let has_attention = split == Split::Test
            && bundle
                .attention_index()
                .is_some_and(|a| a.sentences.iter().any(|e| e.index == index));
        Ok(SentenceView {
            split,
            index,
            text: s.text(),
            words,
            spans,
            has_attention,
        })
    }

    fn word_surface(&self, id: &TokenId) -> QueryResult<(String, Option<String>)> {
        let bundle = self.bundle();
        if let Some(t) = bundle.core_token(id) {
            return Ok((t.surface.clone(), Some(t.core_piece.clone())));
        }
        bundle
            .sentences(id.split)
            .get(id.sentence as usize)
            .and_then(|s| s.words.iter().find(|w| w.word_index == id.word as usize))
            .map(|w| (w.surface.clone(), None))
            .ok_or_else(|| QueryError::NotFound(format!("no token `{id}`")))
    }

    pub fn token_distribution(&self, raw_id: &str) -> QueryResult<DistributionView> {
        let id = parse_id(raw_id)?;
        let (surface, piece) = self.word_surface(&id)?;
        let labels = &self.bundle().labels;
        let vocab = self.vocab();
        let dist = |level: VocabLevel, s: &str| {
            let read = |split: Split| {
                let c = vocab.counts(level, s, split);
                labels
                    .labels()
                    .iter()
                    .zip(c.counts())
                    .filter(|(_, &n)| n > 0)
                    .map(|(l, &n)| (l.clone(), n))
                    .collect()
            };
            LevelDistribution {
                surface: s.to_string(),
                train: read(Split::Train),
                test: read(Split::Test),
            }
        };
        let piece = piece.unwrap_or_else(|| surface.clone());
        Ok(DistributionView {
            id,
            word: dist(VocabLevel::Word, &surface),
            core_token: dist(VocabLevel::CoreToken, &piece),
        })
    }

    /// Occurrences of the query token's surface in both splits, ranked by
    /// cosine between fine-tuned final-layer vectors.
    pub fn token_similarity_query(&self, raw_id: &str, limit: usize) -> QueryResult<SimilarityView> {
        let id = parse_id(raw_id)?;
        let (surface, _) = self.word_surface(&id)?;
        let bundle = self.bundle();
        let table = bundle
            .embedding(EmbeddingKey::FINETUNED_FINAL)
            .ok_or_else(|| QueryError::Unavailable("bundle has no fine-tuned final-layer embeddings".into()))?;
        let occurrences = self.vocab().occurrences(&surface);
        let Some(query) = table.vector(&id) else {
            return Ok(SimilarityView {
                id,
                surface,
                occurrences: occurrences.len(),
                results: Vec::new(),
                notice: Some("query token has no embedding".into()),
            });
        };
        let mut results: Vec<SimilarOccurrence> = occurrences
            .iter()
            .filter_map(|o| {
                let v = table.vector(o)?;
                let sim = if *o == id { 1.0 } else { cosine(query, v)?.clamp(-1.0, 1.0) };
                let sentence = bundle.sentences(o.split).get(o.sentence as usize)?;
                Some(SimilarOccurrence {
                    id: *o,
                    split: o.split,
                    similarity: sim,
                    context: sentence.text(),
                    position: o.word as usize,
                })
            })
            .collect();
        results.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| (b.id == id).cmp(&(a.id == id)))
                .then_with(|| a.id.cmp(&b.id))
        });
        results.truncate(limit.max(1));
        let notice = (!occurrences.is_empty() && results.len() < occurrences.len().min(limit.max(1)))
            .then(|| "some occurrences have no embedding".to_string());
        Ok(SimilarityView {
            id,
            surface,
            occurrences: occurrences.len(),
            results,
            notice,
        })
    }

    pub fn cluster_view(&self, k: usize) -> QueryResult<ClusterView> {
        let c = self.clustering(k)?;
        let (idx, rows, gold) = self.clustered_tokens()?;
        let bundle = self.bundle();
        let tokens = bundle.core_tokens(Split::Test);
        let alignment = LabelFamily::ALL
            .iter()
            .map(|&f| alignment_scores(&bundle.labels, &c.assignments, &gold, f))
            .collect::<crate::Result<Vec<_>>>()
            .map_err(|e| QueryError::Unprocessable(e.to_string()))?;
        let centroid_similarity = centroid_label_similarity(&bundle.labels, &rows, &gold, &c)
            .map_err(|e| QueryError::Unprocessable(e.to_string()))?;
        Ok(ClusterView {
            k,
            seed: c.seed,
            inertia: c.inertia,
            iterations: c.iterations,
            n_init: c.n_init,
            assignments: idx
                .iter()
                .zip(&c.assignments)
                .map(|(&i, &cluster)| ClusterAssignment {
                    id: tokens[i].id,
                    cluster,
                })
                .collect(),
            alignment,
            centroid_similarity,
        })
    }

    pub fn correlations(&self, metrics: &[String], coef: &str) -> QueryResult<CorrelationView> {
        let f: fn(&[f64], &[f64]) -> Option<f64> = match coef {
            "pearson" => pearson,
            "spearman" => spearman,
            other => return Err(QueryError::Unprocessable(format!("unknown coefficient `{other}`"))),
        };
        let metrics: Vec<String> = if metrics.is_empty() {
            NUMERIC_METRICS.iter().map(|m| m.to_string()).collect()
        } else {
            metrics
                .iter()
                .map(|m| {
                    if is_numeric(m) {
                        Ok(canonical_metric(m).to_string())
                    } else {
                        Err(QueryError::Unprocessable(format!("unknown metric `{m}`")))
                    }
                })
                .collect::<QueryResult<_>>()?
        };
        let rows = self.token_rows()?;
        let cols: Vec<Vec<Option<f64>>> = metrics
            .iter()
            .map(|m| rows.iter().map(|r| r.numeric(m)).collect())
            .collect();
        let matrix = (0..metrics.len())
            .map(|a| {
                (0..metrics.len())
                    .map(|b| {
                        let (x, y): (Vec<f64>, Vec<f64>) = cols[a]
                            .iter()
                            .zip(&cols[b])
                            .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                            .unzip();
                        f(&x, &y)
                    })
                    .collect()
            })
            .collect();
        let report = self.score(Level::Entity, DecodeMode::Repair, ReportOptions::default())?;
        let support: Vec<f64> = report.report.classes.iter().map(|c| c.support as f64).collect();
        let f1: Vec<f64> = report.report.classes.iter().map(|c| c.f1).collect();
        let corr = support_correlation(&support, &f1).ok();
        let support_f1 = corr.map(|c| {
            if coef == "pearson" {
                SupportCorrelation { spearman: None, ..c }
            } else {
                SupportCorrelation { pearson: None, ..c }
            }
        });
        Ok(CorrelationView {
            coef: coef.to_string(),
            metrics,
            matrix,
            support_f1,
        })
    }

    pub fn error_listing(&self, mode: DecodeMode, side: Option<&str>, entity_type: Option<&str>) -> QueryResult<ErrorListing> {
        let side = match side.map(|s| s.to_ascii_uppercase()) {
            None => None,
            Some(s) if s == "FP" => Some(Side::FP),
            Some(s) if s == "FN" => Some(Side::FN),
            Some(s) => return Err(QueryError::Unprocessable(format!("unknown side `{s}`"))),
        };
        let labels = &self.bundle().labels;
        let ty = match entity_type {
            None => None,
            Some(t) => Some(
                labels
                    .type_id(t)
                    .ok_or_else(|| QueryError::Unprocessable(format!("unknown entity type `{t}`")))?,
            ),
        };
        let entity = self.entity(mode)?;
        let records: Vec<SpanErrorJson> = entity
            .errors
            .iter()
            .filter(|r| side.is_none_or(|s| r.side == s))
            .filter(|r| ty.is_none_or(|t| r.span.entity_type == t))
            .map(|r| r.to_json(labels))
            .collect();
        Ok(ErrorListing {
            mode,
            total: records.len(),
            records,
        })
    }

    pub fn confusion(&self, level: Level, mode: DecodeMode) -> QueryResult<ConfusionMatrix> {
        self.require_predictions()?;
        let bundle = self.bundle();
        match level {
            Level::Token => {
                let (g, p) = token_label_pairs(bundle);
                token_confusion_matrix(&bundle.labels, &g, &p).map_err(|e| QueryError::Unprocessable(e.to_string()))
            }
            Level::Entity => {
                let e = self.entity(mode)?;
                Ok(entity_confusion_matrix(&bundle.labels, &e.gold, &e.pred, &e.errors))
            }
        }
    }

    pub fn attention_summary(&self, kind: SimilarityKind) -> QueryResult<HeadSimilarityMatrix> {
        match kind {
            SimilarityKind::Scores => Ok(self.attention_scores()?.0.clone()),
            SimilarityKind::Weights => Ok((*self.attention_weights()?).clone()),
        }
    }

    pub fn attention_sentence(&self, index: usize) -> QueryResult<serde_json::Value> {
        let bundle = self.bundle();
        if bundle.attention_index().is_none() {
            return Err(QueryError::Unavailable("bundle has no attention dumps".into()));
        }
        let (pre, post) = bundle
            .attention_pair(index)
            .map_err(|e| QueryError::Unprocessable(e.to_string()))?
            .ok_or_else(|| QueryError::NotFound(format!("sentence {index} has no attention dump")))?;
        let scores = self.attention_scores()?;
        let sim = scores
            .1
            .iter()
            .find(|s| s.sentence == index)
            .cloned()
            .ok_or_else(|| QueryError::NotFound(format!("sentence {index} has no attention dump")))?;
        let mut pieces: Vec<String> = bundle
            .pieces(Split::Test)
            .and_then(|p| p.get(index))
            .map(|words| words.iter().filter(|w| !w.dropped).flat_map(|w| w.pieces.clone()).collect())
            .unwrap_or_default();
        // valid positions include the two special markers around the pieces
        if pieces.len() + 2 == pre.valid_len {
            pieces.insert(0, "[CLS]".into());
            pieces.push("[SEP]".into());
        }
        Ok(serde_json::json!({
            "sentence": index,
            "layers": pre.layers,
            "heads": pre.heads,
            "seq": pre.seq,
            "valid_len": pre.valid_len,
            "pieces": pieces,
            "similarity": sim.cells,
            "pretrained": pre.to_nested(),
            "finetuned": post.to_nested(),
        }))
    }
}
