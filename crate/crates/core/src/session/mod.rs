//! A loaded bundle plus lazily computed, memoized analysis products. Every
//! service response and every `analyze` output file is read from here, so
//! the two never disagree.

mod analyze;
mod filter;
mod queries;
mod summary;
mod table;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::attention::{bundle_score_similarity, weight_similarity, HeadSimilarityMatrix, SentenceSimilarity};
use crate::behavioural::{token_metrics, SilhouetteOptions, TokenTable};
use crate::bundle::{
    build_vocabulary_index, validate_bundle, EmbeddingKey, ExtractionBundle, LabelId, ModelState, Split,
    VocabularyIndex, Violation,
};
use crate::eval::{classify_span_errors, score_bundle, test_spans, Level, ReportOptions, ScoreOutput, SpanErrorRecord};
use crate::exec::Execution;
use crate::repr::{kmeans_cluster, ClusteringResult, KMeansOptions};
use crate::spans::{DecodeMode, Span};

pub use analyze::{write_analysis, AnalysisManifest, AnalyzeOutcome};
pub use filter::{parse_filter, Condition, Filter, Op};
pub use queries::{
    ClusterAssignment, ClusterView, CorrelationView, DistributionView, ErrorListing, LevelDistribution, ModeSpans,
    ProjectedToken, WordView, DEFAULT_PAGE_SIZE, MAX_PAGE_SIZE, ProjectionView, ScatterPoint, ScatterView, SentenceView,
    SimilarOccurrence, SimilarityView, TokenPage,
};
pub use summary::{CategoryCount, CrossTab, NumericSummary, SelectionSummary};
pub use table::{TokenRow, CATEGORICALS};

/// Failure of a session query, mapped onto HTTP statuses by the service.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Unprocessable(String),
    /// The product needs a bundle artifact that is absent.
    #[error("{0}")]
    Unavailable(String),
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::NotFound(_) => "not_found",
            QueryError::Unprocessable(_) => "unprocessable",
            QueryError::Unavailable(_) => "unavailable",
        }
    }
}

pub type QueryResult<T> = std::result::Result<T, QueryError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub seed: u64,
    pub silhouette_cap: usize,
    pub cluster_ks: Vec<usize>,
    pub shift_top_n: usize,
    pub execution: Execution,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            seed: 0,
            silhouette_cap: SilhouetteOptions::default().cap,
            cluster_ks: vec![3, 4, 9],
            shift_top_n: 25,
            execution: Execution::default(),
        }
    }
}

/// Entity spans and error records under one decode mode.
#[derive(Clone, Debug)]
pub struct EntityProducts {
    pub gold: Vec<Span>,
    pub pred: Vec<Span>,
    pub errors: Vec<SpanErrorRecord>,
}

type Cell<T> = OnceLock<QueryResult<Arc<T>>>;
type ScoreKey = (Level, DecodeMode, bool);

/// (token-table row index, fine-tuned vector, gold label) per clustered token.
pub type ClusteredTokens<'a> = (Vec<usize>, Vec<&'a [f32]>, Vec<LabelId>);

fn cached<T>(cell: &Cell<T>, f: impl FnOnce() -> QueryResult<T>) -> QueryResult<Arc<T>> {
    cell.get_or_init(|| f().map(Arc::new)).clone()
}

pub struct AnalysisSession {
    bundle: ExtractionBundle,
    opts: SessionOptions,
    violations: OnceLock<Vec<Violation>>,
    vocab: OnceLock<VocabularyIndex>,
    entity: [Cell<EntityProducts>; 2],
    scores: Mutex<BTreeMap<ScoreKey, Arc<Cell<ScoreOutput>>>>,
    table: OnceLock<(TokenTable, Vec<TokenRow>)>,
    clusters: Mutex<BTreeMap<usize, Arc<Cell<ClusteringResult>>>>,
    projections: [Cell<ProjectionView>; 2],
    attention: Cell<(HeadSimilarityMatrix, Vec<SentenceSimilarity>)>,
    weights: Cell<HeadSimilarityMatrix>,
}

fn mode_slot(mode: DecodeMode) -> usize {
    match mode {
        DecodeMode::Repair => 0,
        DecodeMode::Discard => 1,
    }
}

impl AnalysisSession {
    pub fn new(bundle: ExtractionBundle, opts: SessionOptions) -> Self {
        AnalysisSession {
            bundle,
            opts,
            violations: OnceLock::new(),
            vocab: OnceLock::new(),
            entity: Default::default(),
            scores: Mutex::new(BTreeMap::new()),
            table: OnceLock::new(),
            clusters: Mutex::new(BTreeMap::new()),
            projections: Default::default(),
            attention: OnceLock::new(),
            weights: OnceLock::new(),
        }
    }

    pub fn bundle(&self) -> &ExtractionBundle {
        &self.bundle
    }

    pub fn options(&self) -> &SessionOptions {
        &self.opts
    }

    pub fn violations(&self) -> &[Violation] {
        self.violations.get_or_init(|| validate_bundle(&self.bundle))
    }

    pub fn vocab(&self) -> &VocabularyIndex {
        self.vocab.get_or_init(|| build_vocabulary_index(&self.bundle))
    }

    fn require_predictions(&self) -> QueryResult<()> {
        if self.bundle.has_predictions() {
            Ok(())
        } else {
            Err(QueryError::Unavailable("bundle has no predictions".into()))
        }
    }

    pub fn entity(&self, mode: DecodeMode) -> QueryResult<Arc<EntityProducts>> {
        self.require_predictions()?;
        cached(&self.entity[mode_slot(mode)], || {
            let (gold, pred) = test_spans(&self.bundle, mode);
            let errors = classify_span_errors(&gold, &pred);
            Ok(EntityProducts { gold, pred, errors })
        })
    }

    pub fn score(&self, level: Level, mode: DecodeMode, opts: ReportOptions) -> QueryResult<Arc<ScoreOutput>> {
        self.require_predictions()?;
        // token-level scoring does not depend on the decode mode
        let mode = if level == Level::Token { DecodeMode::Repair } else { mode };
        let cell = self
            .scores
            .lock()
            .expect("score cache poisoned")
            .entry((level, mode, opts.exclude_o))
            .or_default()
            .clone();
        cached(&cell, || {
            score_bundle(&self.bundle, level, mode, opts).map_err(|e| QueryError::Unprocessable(e.to_string()))
        })
    }

    pub fn silhouette_options(&self) -> SilhouetteOptions {
        SilhouetteOptions {
            cap: self.opts.silhouette_cap,
            seed: self.opts.seed,
            execution: self.opts.execution,
        }
    }

    fn table_pair(&self) -> &(TokenTable, Vec<TokenRow>) {
        self.table.get_or_init(|| {
            let t = token_metrics(&self.bundle, self.vocab(), self.silhouette_options());
            let rows = table::build_rows(self, &t);
            (t, rows)
        })
    }

    /// Behavioural metrics of every scored test token.
    pub fn token_table(&self) -> QueryResult<&TokenTable> {
        self.require_predictions()?;
        Ok(&self.table_pair().0)
    }

    /// Token table rows with categorical columns, in id order.
    pub fn token_rows(&self) -> QueryResult<&[TokenRow]> {
        self.require_predictions()?;
        Ok(&self.table_pair().1)
    }

    /// Scored test tokens that carry a fine-tuned final-layer vector.
    pub fn clustered_tokens(&self) -> QueryResult<ClusteredTokens<'_>> {
        let table = self
            .bundle
            .embedding(EmbeddingKey::FINETUNED_FINAL)
            .ok_or_else(|| QueryError::Unavailable("bundle has no fine-tuned final-layer embeddings".into()))?;
        let mut idx = Vec::new();
        let mut rows = Vec::new();
        let mut gold = Vec::new();
        for (i, t) in self.bundle.core_tokens(Split::Test).iter().enumerate() {
            if let Some(r) = t.embedding_ref {
                idx.push(i);
                rows.push(table.matrix.row(r));
                gold.push(t.gold_label);
            }
        }
        Ok((idx, rows, gold))
    }

    pub fn clustering(&self, k: usize) -> QueryResult<Arc<ClusteringResult>> {
        if k == 0 {
            return Err(QueryError::Unprocessable("k must be positive".into()));
        }
        let (_, rows, _) = self.clustered_tokens()?;
        let cell = self
            .clusters
            .lock()
            .expect("cluster cache poisoned")
            .entry(k)
            .or_default()
            .clone();
        cached(&cell, || {
            let mut o = KMeansOptions::new(k, self.opts.seed);
            o.execution = self.opts.execution;
            kmeans_cluster(&rows, o).map_err(|e| QueryError::Unprocessable(e.to_string()))
        })
    }

    pub fn projection(&self, state: ModelState) -> QueryResult<Arc<ProjectionView>> {
        let slot = match state {
            ModelState::Pretrained => 0,
            ModelState::FineTuned => 1,
        };
        cached(&self.projections[slot], || queries::projection_view(self, state))
    }

    pub fn attention_scores(&self) -> QueryResult<Arc<(HeadSimilarityMatrix, Vec<SentenceSimilarity>)>> {
        cached(&self.attention, || {
            bundle_score_similarity(&self.bundle, self.opts.execution)
                .map_err(|e| QueryError::Unprocessable(e.to_string()))?
                .ok_or_else(|| QueryError::Unavailable("bundle has no attention dumps".into()))
        })
    }

    pub fn attention_weights(&self) -> QueryResult<Arc<HeadSimilarityMatrix>> {
        cached(&self.weights, || {
            let (pre, post) = self
                .bundle
                .attention_weights
                .as_ref()
                .ok_or_else(|| QueryError::Unavailable("bundle has no attention weights".into()))?;
            weight_similarity(pre, post).map_err(|e| QueryError::Unprocessable(e.to_string()))
        })
    }

    /// Forces every product the service exposes, so later requests are reads.
    pub fn warm(&self) {
        self.violations();
        self.vocab();
        if self.bundle.has_predictions() {
            self.table_pair();
        }
    }
}
