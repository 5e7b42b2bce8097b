use serde_json::{json, Map, Value};

struct Endpoint {
    method: &'static str,
    path: &'static str,
    summary: &'static str,
    query: &'static [(&'static str, &'static str)],
    path_params: &'static [&'static str],
}

const ENDPOINTS: &[Endpoint] = &[
    Endpoint { method: "get", path: "/manifest", summary: "Bundle manifest and validation status", query: &[], path_params: &[] },
    Endpoint { method: "get", path: "/report", summary: "Classification report", query: &[("level", "token | entity"), ("mode", "repair | strict"), ("exclude_o", "boolean")], path_params: &[] },
    Endpoint { method: "get", path: "/errors", summary: "Span error records and summary", query: &[("side", "FP | FN"), ("type", "entity type"), ("mode", "repair | strict")], path_params: &[] },
    Endpoint { method: "get", path: "/confusion", summary: "Confusion matrix", query: &[("level", "token | entity"), ("mode", "repair | strict")], path_params: &[] },
    Endpoint { method: "get", path: "/lexical/diversity", summary: "Lexical diversity statistics", query: &[("level", "word | token"), ("scope", "train | test | all")], path_params: &[] },
    Endpoint { method: "get", path: "/lexical/oov", summary: "Out-of-vocabulary rates", query: &[("level", "word | token")], path_params: &[] },
    Endpoint { method: "get", path: "/lexical/overlap", summary: "Tag overlap matrix", query: &[("level", "word | token"), ("split", "train | test")], path_params: &[] },
    Endpoint { method: "get", path: "/aggregates", summary: "Behavioural metrics per gold tag", query: &[("split_correctness", "boolean")], path_params: &[] },
    Endpoint { method: "get", path: "/correlations", summary: "Metric correlation matrix", query: &[("metrics", "comma-separated metric names"), ("coef", "pearson | spearman")], path_params: &[] },
    Endpoint { method: "get", path: "/tokens", summary: "Filtered, paginated token table", query: &[("filter", "conditions `field op literal` joined by && or and"), ("page", "1-based page"), ("per_page", "rows per page, default 100")], path_params: &[] },
    Endpoint { method: "get", path: "/tokens/{id}/distribution", summary: "Train/test label counts of a token's surface", query: &[], path_params: &["id"] },
    Endpoint { method: "get", path: "/tokens/{id}/similar", summary: "Same-surface occurrences ranked by embedding cosine", query: &[("limit", "maximum results")], path_params: &["id"] },
    Endpoint { method: "get", path: "/scatter", summary: "Points for a metric scatter plot", query: &[("x", "metric"), ("y", "metric"), ("color", "categorical")], path_params: &[] },
    Endpoint { method: "get", path: "/projection", summary: "2-D token projection", query: &[("state", "pretrained | finetuned")], path_params: &[] },
    Endpoint { method: "post", path: "/selection/summary", summary: "Summary of a selected token set; body {ids, categorical}", query: &[], path_params: &[] },
    Endpoint { method: "get", path: "/sentences/{split}/{idx}", summary: "Instance view of one sentence", query: &[], path_params: &["split", "idx"] },
    Endpoint { method: "get", path: "/attention/summary", summary: "Per-head attention similarity", query: &[("kind", "scores | weights")], path_params: &[] },
    Endpoint { method: "get", path: "/attention/sentence/{idx}", summary: "Attention dumps and similarity for one sentence", query: &[], path_params: &["idx"] },
    Endpoint { method: "get", path: "/clusters", summary: "K-means clustering with label alignment", query: &[("k", "cluster count")], path_params: &[] },
    Endpoint { method: "get", path: "/spec", summary: "This document", query: &[], path_params: &[] },
];

pub fn document() -> Value {
    let mut paths = Map::new();
    for e in ENDPOINTS {
        let mut params: Vec<Value> = e
            .path_params
            .iter()
            .map(|p| json!({"name": p, "in": "path", "required": true, "schema": {"type": "string"}}))
            .collect();
        params.extend(
            e.query
                .iter()
                .map(|(n, d)| json!({"name": n, "in": "query", "required": false, "description": d, "schema": {"type": "string"}})),
        );
        let mut op = json!({
            "summary": e.summary,
            "parameters": params,
            "responses": {
                "200": {"description": "JSON result"},
                "404": {"description": "Unknown id or resource", "content": {"application/json": {"schema": {"$ref": "#/components/schemas/Error"}}}},
                "409": {"description": "Needs a bundle artifact that is absent", "content": {"application/json": {"schema": {"$ref": "#/components/schemas/Error"}}}},
                "422": {"description": "Invalid parameter", "content": {"application/json": {"schema": {"$ref": "#/components/schemas/Error"}}}},
            },
        });
        if e.method == "post" {
            op["requestBody"] = json!({
                "required": true,
                "content": {"application/json": {"schema": {
                    "type": "object",
                    "required": ["ids", "categorical"],
                    "properties": {"ids": {"type": "array", "items": {"type": "string"}}, "categorical": {"type": "string"}},
                }}},
            });
        }
        let entry = paths
            .entry(format!("{}{}", crate::api::PREFIX, e.path))
            .or_insert_with(|| json!({}));
        entry[e.method] = op;
    }
    json!({
        "openapi": "3.0.3",
        "info": {"title": "nerscope analysis API", "version": env!("CARGO_PKG_VERSION")},
        "paths": paths,
        "components": {"schemas": {"Error": {
            "type": "object",
            "required": ["code", "message"],
            "properties": {"code": {"type": "string"}, "message": {"type": "string"}},
        }}},
    })
}
