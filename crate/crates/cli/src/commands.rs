//! Subcommand bodies. Each returns the process exit code and writes to the
//! given streams, so tests can drive them without spawning processes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use nerscope::bundle::{
    corpus_totals, downsample_corpus, generate_fixture, load_bundle, serialize_conll, validate_bundle, write_bundle,
    DownsampleTarget, ExtractionBundle, FixtureSpec, PlantedCase, Split, WriteOptions,
};
use nerscope::eval::{score_bundle, Level, ReportOptions, ScoreOutput};
use nerscope::session::{write_analysis, AnalysisSession, SessionOptions};
use nerscope::spans::DecodeMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NO_PREDICTIONS: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
    Csv,
}

pub struct FixtureArgs {
    pub out: PathBuf,
    pub spec: Option<PathBuf>,
    pub seed: Option<u64>,
    pub train: Option<usize>,
    pub test: Option<usize>,
    pub planted: bool,
    pub no_predictions: bool,
    pub raw_embeddings: bool,
}

pub fn fixture(args: &FixtureArgs, out: &mut dyn Write) -> Result<i32> {
    let mut spec: FixtureSpec = match &args.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => FixtureSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.train {
        spec.train_sentences = n;
    }
    if let Some(n) = args.test {
        spec.test_sentences = n;
    }
    if args.planted {
        spec.planted = PlantedCase::ALL.to_vec();
    }
    if args.no_predictions {
        spec.predictions = false;
    }
    let bundle = generate_fixture(&spec)?;
    write_bundle(
        &bundle,
        &args.out,
        WriteOptions {
            raw_embeddings: args.raw_embeddings,
        },
    )?;
    writeln!(
        out,
        "wrote {} ({} train / {} test sentences)",
        args.out.display(),
        bundle.sentences(Split::Train).len(),
        bundle.sentences(Split::Test).len()
    )?;
    Ok(EXIT_OK)
}

/// Loads a bundle; on a load or validation failure writes the report to
/// `err` and returns `None`.
fn load_valid(path: &Path, err: &mut dyn Write) -> Result<Option<ExtractionBundle>> {
    let bundle = match load_bundle(path) {
        Ok(b) => b,
        Err(e) => {
            writeln!(err, "invalid bundle {}: {e}", path.display())?;
            return Ok(None);
        }
    };
    let violations = validate_bundle(&bundle);
    if violations.is_empty() {
        return Ok(Some(bundle));
    }
    writeln!(err, "invalid bundle {}: {} violation(s)", path.display(), violations.len())?;
    for v in &violations {
        writeln!(err, "  {v}")?;
    }
    Ok(None)
}

pub fn validate(path: &Path, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let bundle = match load_bundle(path) {
        Ok(b) => b,
        Err(e) => {
            if json {
                writeln!(out, "{}", serde_json::json!({"valid": false, "load_error": e.to_string(), "violations": []}))?;
            }
            writeln!(err, "invalid bundle {}: {e}", path.display())?;
            return Ok(EXIT_INVALID);
        }
    };
    let violations = validate_bundle(&bundle);
    if json {
        let v = serde_json::json!({"valid": violations.is_empty(), "violations": violations});
        writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
    } else if violations.is_empty() {
        writeln!(out, "valid: {}", path.display())?;
    } else {
        for v in &violations {
            writeln!(out, "{v}")?;
        }
    }
    if violations.is_empty() {
        Ok(EXIT_OK)
    } else {
        writeln!(err, "{} violation(s)", violations.len())?;
        Ok(EXIT_INVALID)
    }
}

pub fn render_score(s: &ScoreOutput, format: Format) -> Result<String> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(s)? + "\n",
        Format::Csv => s.report.to_csv(),
        Format::Text => {
            let mut t = s.report.to_text();
            t.push_str("\noutcomes\n");
            let width = s.outcomes.classes.iter().map(|c| c.len()).max().unwrap_or(5).max(5);
            writeln!(t, "{:>width$} {:>8} {:>8} {:>8}", "class", "tp", "fp", "fn")?;
            for (class, c) in s.outcomes.iter() {
                writeln!(t, "{class:>width$} {:>8} {:>8} {:>8}", c.tp, c.fp, c.fn_)?;
            }
            if let Some(e) = &s.errors {
                t.push_str("\nerrors\n");
                for (side, kinds) in &e.by_kind {
                    for (kind, n) in kinds {
                        writeln!(t, "{side} {kind:<20} {n}")?;
                    }
                }
            }
            t
        }
    })
}

pub fn score(
    path: &Path,
    level: Level,
    mode: DecodeMode,
    format: Format,
    exclude_o: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let Some(bundle) = load_valid(path, err)? else {
        return Ok(EXIT_INVALID);
    };
    if !bundle.has_predictions() {
        writeln!(err, "bundle {} has no predictions", path.display())?;
        return Ok(EXIT_NO_PREDICTIONS);
    }
    let s = score_bundle(&bundle, level, mode, ReportOptions { exclude_o })?;
    out.write_all(render_score(&s, format)?.as_bytes())?;
    Ok(EXIT_OK)
}

pub fn analyze(path: &Path, dir: &Path, opts: SessionOptions, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let Some(bundle) = load_valid(path, err)? else {
        return Ok(EXIT_INVALID);
    };
    let session = AnalysisSession::new(bundle, opts);
    let result = write_analysis(&session, dir)?;
    for n in &result.notices {
        writeln!(err, "notice: {n}")?;
    }
    writeln!(out, "wrote {} files to {}", result.files.len(), dir.display())?;
    Ok(EXIT_OK)
}

pub struct DownsampleArgs {
    pub bundle: PathBuf,
    pub split: Split,
    pub tokens: usize,
    pub entity_tokens: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn downsample(args: &DownsampleArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let bundle = load_bundle(&args.bundle)?;
    let sentences = bundle.sentences(args.split);
    let target = DownsampleTarget {
        tokens: args.tokens,
        entity_tokens: args.entity_tokens,
    };
    match downsample_corpus(sentences, &bundle.labels, target, args.seed) {
        Ok(kept) => {
            fs::write(&args.out, serialize_conll(&kept, &bundle.labels))
                .with_context(|| format!("writing {}", args.out.display()))?;
            let (t, e) = corpus_totals(&kept, &bundle.labels);
            writeln!(out, "kept {} sentences: {t} tokens, {e} entity tokens", kept.len())?;
            Ok(EXIT_OK)
        }
        Err(e @ nerscope::Error::InfeasibleTarget { .. }) => {
            writeln!(err, "{e}")?;
            Ok(EXIT_INVALID)
        }
        Err(e) => Err(e.into()),
    }
}
