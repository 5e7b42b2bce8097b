//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use nerscope::attention::{sentence_similarity, weight_similarity};
use nerscope::behavioural::{
    ambiguity, consistency, prediction_metrics, silhouette_scores, token_metrics, SilhouetteOptions,
};
use nerscope::bundle::{
    build_vocabulary_index, generate_fixture, write_bundle, AttentionDump, AttentionWeights, FixtureSpec, LabelId,
    LabelSet, ModelState, PlantedCase, Split, VocabLevel, VocabularyIndex, WriteOptions,
};
use nerscope::eval::{
    build_report, classify_span_errors, entity_outcomes, score_bundle, token_outcomes, ClassCounts, ErrorKind, Level,
    OutcomeCounts, ReportOptions, Side,
};
use nerscope::repr::{alignment_scores_raw, kmeans_cluster, representation_shift, KMeansOptions};
use nerscope::spans::{decode_strs, DecodeMode, Span};
use nerscope::stats::{cosine, pearson, spearman};
use nerscope::Execution;

const SCHEME_FLIP_BUDGET: Duration = Duration::from_millis(1);
const AVERAGE_TOL: f64 = 1e-4;
const AMBIGUITY_TOL: f64 = 0.005;
const CONSISTENCY_TOL: f64 = 1e-6;
const TP_SHARE_TOL: f64 = 0.001;
const SILHOUETTE_TOL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-9;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
const ORACLE_POINTS: usize = 200;
const INVARIANT_SEQUENCES: usize = 10_000;
const PERF_TOKENS: usize = 250_000;
const PERF_BUDGET: Duration = Duration::from_secs(10);
const COLD_START_BUDGET: Duration = Duration::from_secs(3);

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol:e})"))
}

fn labels() -> LabelSet {
    LabelSet::default()
}

fn nerscope() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nerscope"))
}

fn counts_of(o: &OutcomeCounts, class: &str) -> ClassCounts {
    o.get(class).copied().unwrap_or_default()
}

fn planted(case: PlantedCase) -> (Vec<&'static str>, Vec<&'static str>) {
    (case.rows().iter().map(|r| r.1).collect(), case.rows().iter().map(|r| r.2).collect())
}

fn outcomes_for(gold: &[&str], pred: &[&str], mode: DecodeMode) -> OutcomeCounts {
    let ls = labels();
    entity_outcomes(&ls, &decode_strs(&ls, gold, mode).unwrap(), &decode_strs(&ls, pred, mode).unwrap())
}

fn scheme_flip() -> Check {
    let run = || {
        let (g, p) = planted(PlantedCase::SchemeFlipGold);
        let a = (outcomes_for(&g, &p, DecodeMode::Repair), outcomes_for(&g, &p, DecodeMode::Discard));
        let (g, p) = planted(PlantedCase::SchemeFlipPred);
        let b = (outcomes_for(&g, &p, DecodeMode::Repair), outcomes_for(&g, &p, DecodeMode::Discard));
        (a, b)
    };
    // best of several runs, so scheduler noise does not count against the bound
    let mut best = Duration::MAX;
    let mut last = None;
    for _ in 0..20 {
        let t = Instant::now();
        let r = run();
        best = best.min(t.elapsed());
        last = Some(r);
    }
    let ((per_r, per_d), (loc_r, loc_d)) = last.unwrap();
    let per_r = counts_of(&per_r, "PER");
    let per_d = counts_of(&per_d, "PER");
    let loc_r = counts_of(&loc_r, "LOC");
    let loc_d = counts_of(&loc_d, "LOC");
    ensure(per_r.tp == 1 && per_r.fp == 0 && per_r.fn_ == 0, || format!("PER repair {per_r:?}"))?;
    ensure(per_d.tp == 0 && per_d.fp == 1, || format!("PER discard {per_d:?}"))?;
    ensure(loc_r.tp == 1 && loc_r.fp == 0 && loc_r.fn_ == 0, || format!("LOC repair {loc_r:?}"))?;
    ensure(loc_d.fn_ == 1 && loc_d.fp == 0 && loc_d.tp == 0, || format!("LOC discard {loc_d:?}"))?;
    ensure(best < SCHEME_FLIP_BUDGET, || format!("took {best:?}"))?;

    // the same pairs planted in a bundle score identically through the CLI path
    let b = generate_fixture(&FixtureSpec::planted_only(&PlantedCase::ALL)).unwrap();
    let r = score_bundle(&b, Level::Entity, DecodeMode::Repair, ReportOptions::default()).unwrap();
    let d = score_bundle(&b, Level::Entity, DecodeMode::Discard, ReportOptions::default()).unwrap();
    let (lr, ld) = (counts_of(&r.outcomes, "LOC"), counts_of(&d.outcomes, "LOC"));
    ensure(lr.tp == 1 && ld.fn_ == 1 && ld.tp == 0, || format!("bundle LOC {lr:?} {ld:?}"))?;
    Ok(format!(
        "PER repair tp=1, discard fp=1 tp=0; LOC repair tp=1, discard fn=1 fp=0; best {:.1} us",
        best.as_secs_f64() * 1e6
    ))
}

fn kinds(gold: &[&str], pred: &[&str], mode: DecodeMode) -> Vec<(Side, ErrorKind)> {
    let ls = labels();
    classify_span_errors(&decode_strs(&ls, gold, mode).unwrap(), &decode_strs(&ls, pred, mode).unwrap())
        .iter()
        .map(|r| (r.side, r.kind))
        .collect()
}

fn fp_kinds(v: &[(Side, ErrorKind)]) -> Vec<ErrorKind> {
    v.iter().filter(|r| r.0 == Side::FP).map(|r| r.1).collect()
}

fn taxonomy() -> Check {
    let (g, p) = planted(PlantedCase::BoundaryToInclusion);
    let r = fp_kinds(&kinds(&g, &p, DecodeMode::Repair));
    ensure(r == [ErrorKind::Boundary], || format!("repair FP kinds {r:?}"))?;
    let d = fp_kinds(&kinds(&g, &p, DecodeMode::Discard));
    ensure(d == [ErrorKind::OInclusion], || format!("discard FP kinds {d:?}"))?;

    let four: [(&str, &[&str], &[&str], ErrorKind); 4] = [
        ("boundary", &["B-LOC", "I-LOC", "I-LOC"], &["B-LOC", "I-LOC", "O"], ErrorKind::Boundary),
        ("entity", &["B-ORG"], &["B-MISC"], ErrorKind::Entity),
        ("entity+boundary", &["B-LOC", "I-LOC", "I-LOC"], &["B-PER", "I-PER", "O"], ErrorKind::EntityAndBoundary),
        ("o-error", &["O"], &["B-LOC"], ErrorKind::OInclusion),
    ];
    for (name, g, p, want) in four {
        for mode in DecodeMode::ALL {
            let got = fp_kinds(&kinds(g, p, mode));
            ensure(got == [want], || format!("{name} ({mode:?}): {got:?}"))?;
        }
    }
    let fn_side = kinds(&["B-LOC"], &["O"], DecodeMode::Repair);
    ensure(fn_side == [(Side::FN, ErrorKind::OExclusion)], || format!("exclusion {fn_side:?}"))?;
    Ok("inclusion pair Boundary -> OInclusion; four named kinds classify exactly".into())
}

fn averaging() -> Check {
    let rows: Vec<(&str, ClassCounts)> = [("LOC", 506, 45, 534), ("MISC", 223, 35, 280), ("ORG", 364, 69, 428), ("PER", 769, 36, 798)]
        .iter()
        .map(|&(n, tp, fp, sup)| {
            (
                n,
                ClassCounts {
                    tp,
                    fp,
                    fn_: sup - tp,
                    tn: None,
                },
            )
        })
        .collect();
    let r = build_report(
        &OutcomeCounts::from_counts(Level::Entity, &rows),
        Some(DecodeMode::Repair),
        "O",
        ReportOptions::default(),
    );
    let a = &r.aggregates;
    close(a.macro_avg.f1, 0.8917, AVERAGE_TOL, "macro F1")?;
    close(a.weighted_avg.f1, 0.9106, AVERAGE_TOL, "weighted F1")?;
    close(a.micro_avg.recall, 0.9127, AVERAGE_TOL, "micro recall")?;
    close(a.micro_avg.precision, 0.9096, AVERAGE_TOL, "micro precision")?;
    Ok(format!(
        "macro F1 {:.4}, weighted F1 {:.4}, micro R {:.4}, micro P {:.4}",
        a.macro_avg.f1, a.weighted_avg.f1, a.micro_avg.recall, a.micro_avg.precision
    ))
}

fn train_counts(pairs: &[(&str, usize)]) -> (VocabularyIndex, LabelSet) {
    let ls = labels();
    let obs: Vec<(Split, &str, LabelId)> = pairs
        .iter()
        .flat_map(|&(l, n)| std::iter::repeat_n((Split::Train, "w", ls.id(l).unwrap()), n))
        .collect();
    (VocabularyIndex::from_observations(ls.len(), obs.clone(), obs), ls)
}

fn behavioural() -> Check {
    let (v, _) = train_counts(&[("I-ORG", 15), ("O", 7)]);
    let amb = ambiguity(v.counts(VocabLevel::Word, "w", Split::Train));
    close(amb, 0.901, AMBIGUITY_TOL, "ambiguity")?;

    let (v, ls) = train_counts(&[("I-PER", 103), ("B-PER", 8), ("I-ORG", 1), ("O", 1), ("I-MISC", 1)]);
    let (cons, _) = consistency(v.counts(VocabLevel::Word, "w", Split::Train), ls.id("I-PER").unwrap());
    close(cons, 103.0 / 114.0, CONSISTENCY_TOL, "consistency")?;

    let n = ls.len();
    let uniform = vec![1.0 / n as f64; n];
    let u = prediction_metrics(&uniform, LabelId(0)).uncertainty;
    ensure(u == 1.0, || format!("uniform uncertainty {u}"))?;
    let mut hot = vec![0.0; n];
    hot[3] = 1.0;
    let loss = prediction_metrics(&hot, LabelId(3)).loss;
    ensure(loss == 0.0, || format!("one-hot loss {loss}"))?;

    let c = OutcomeCounts::from_counts(
        Level::Entity,
        &[(
            "LOC",
            ClassCounts {
                tp: 627,
                fp: 76,
                fn_: 49,
                tn: None,
            },
        )],
    );
    let share = nerscope::eval::outcome_proportions(&c)[0].1.tp_share;
    close(share, 0.834, TP_SHARE_TOL, "LOC tp_share")?;
    Ok(format!(
        "ambiguity {amb:.4} bits, consistency {cons:.6}, uncertainty {u}, loss {loss}, tp_share {share:.4}"
    ))
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect()
}

fn cos64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn brute_silhouette(rows: &[Vec<f32>], labels: &[usize]) -> Vec<f64> {
    let n = rows.len();
    (0..n)
        .map(|i| {
            let mut by: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e = by.entry(labels[j]).or_insert((0.0, 0));
                e.0 += 1.0 - cos64(&rows[i], &rows[j]);
                e.1 += 1;
            }
            let Some(&(sa, na)) = by.get(&labels[i]) else {
                return 0.0;
            };
            let a = sa / na as f64;
            let b = by
                .iter()
                .filter(|(l, _)| **l != labels[i])
                .map(|(_, (s, c))| s / *c as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect()
}

fn entropy(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

fn hcv_oracle(k: &[usize], c: &[usize]) -> (f64, f64, f64) {
    let n = k.len();
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut kc: HashMap<usize, usize> = HashMap::new();
    let mut cc: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in k.iter().zip(c) {
        *table.entry((a, b)).or_default() += 1;
        *kc.entry(a).or_default() += 1;
        *cc.entry(b).or_default() += 1;
    }
    let hc = entropy(cc.values().copied(), n);
    let hk = entropy(kc.values().copied(), n);
    let mut hc_k = 0.0;
    let mut hk_c = 0.0;
    for (&(a, b), &m) in &table {
        let p = m as f64 / n as f64;
        hc_k -= p * (m as f64 / kc[&a] as f64).ln();
        hk_c -= p * (m as f64 / cc[&b] as f64).ln();
    }
    let h = if hc == 0.0 { 1.0 } else { 1.0 - hc_k / hc };
    let cm = if hk == 0.0 { 1.0 } else { 1.0 - hk_c / hk };
    let v = if h + cm == 0.0 { 0.0 } else { 2.0 * h * cm / (h + cm) };
    (h, cm, v)
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn ranks_oracle(x: &[f64]) -> Vec<f64> {
    // rank = 1 + (#smaller) + (#equal - 1) / 2
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let eq = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

const TAGS: [&str; 9] = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC"];

fn random_tags(rng: &mut ChaCha8Rng, len: usize) -> Vec<&'static str> {
    (0..len)
        .map(|_| if rng.random_bool(0.45) { "O" } else { TAGS[rng.random_range(1..TAGS.len())] })
        .collect()
}

/// Independent span reader: (start, end, type) triples.
fn oracle_spans(tags: &[&str], repair: bool) -> BTreeSet<(usize, usize, String)> {
    let mut out = BTreeSet::new();
    let mut cur: Option<(usize, String)> = None;
    for (i, t) in tags.iter().chain(std::iter::once(&"O")).enumerate() {
        let (prefix, ty) = match t.split_once('-') {
            Some((p, ty)) => (p, ty.to_string()),
            None => ("O", String::new()),
        };
        let continues = prefix == "I" && cur.as_ref().is_some_and(|c| c.1 == ty);
        if continues {
            continue;
        }
        if let Some((s, ty)) = cur.take() {
            out.insert((s, i, ty));
        }
        if prefix == "B" || (prefix == "I" && repair) {
            cur = Some((i, ty));
        }
    }
    out
}

fn as_triples(ls: &LabelSet, spans: &[Span]) -> BTreeSet<(usize, usize, String)> {
    spans
        .iter()
        .map(|s| (s.start, s.end, ls.entity_types()[s.entity_type.index()].clone()))
        .collect()
}

fn oracles() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut notes = Vec::new();

    // silhouette
    let t = Instant::now();
    let rows = random_rows(&mut rng, ORACLE_POINTS, 8);
    let labs: Vec<usize> = (0..ORACLE_POINTS).map(|i| (i * 7 + (i % 3)) % 4).collect();
    let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
    let ids: Vec<LabelId> = labs.iter().map(|&l| LabelId(l as u16)).collect();
    let got = silhouette_scores(&refs, &ids, SilhouetteOptions::default());
    let want = brute_silhouette(&rows, &labs);
    let worst = got
        .scores
        .iter()
        .zip(&want)
        .map(|(g, w)| (g.expect("defined") - w).abs())
        .fold(0.0, f64::max);
    ensure(worst <= SILHOUETTE_TOL, || format!("silhouette max err {worst:e}"))?;
    ensure(t.elapsed() < ORACLE_BUDGET, || "silhouette too slow".into())?;
    notes.push(format!("silhouette {worst:.1e}"));

    // homogeneity / completeness / V
    let t = Instant::now();
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let k: Vec<usize> = (0..ORACLE_POINTS).map(|_| rng.random_range(0..(2 + trial % 7))).collect();
        let c: Vec<usize> = (0..ORACLE_POINTS).map(|i| if rng.random_bool(0.7) { k[i] % 3 } else { rng.random_range(0..5) }).collect();
        let (h, cm, v) = alignment_scores_raw(&k, &c);
        let (oh, oc, ov) = hcv_oracle(&k, &c);
        worst = worst.max((h - oh).abs()).max((cm - oc).abs()).max((v - ov).abs());
    }
    ensure(worst <= ORACLE_TOL, || format!("h/c/v max err {worst:e}"))?;
    ensure(t.elapsed() < ORACLE_BUDGET, || "h/c/v too slow".into())?;
    notes.push(format!("hcv {worst:.1e}"));

    // correlations, rounded so ties occur
    let t = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<f64> = (0..ORACLE_POINTS).map(|_| (rng.random_range(0.0..10.0f64)).round()).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.5 + rng.random_range(-3.0..3.0f64)).round()).collect();
        let p = pearson(&x, &y).expect("defined");
        let s = spearman(&x, &y).expect("defined");
        worst = worst
            .max((p - pearson_oracle(&x, &y)).abs())
            .max((s - pearson_oracle(&ranks_oracle(&x), &ranks_oracle(&y))).abs());
    }
    ensure(worst <= ORACLE_TOL, || format!("correlation max err {worst:e}"))?;
    ensure(t.elapsed() < ORACLE_BUDGET, || "correlations too slow".into())?;
    notes.push(format!("corr {worst:.1e}"));

    // attention, flatten-dot over the valid square
    let t = Instant::now();
    let mut worst = 0.0f64;
    for s in 0..20 {
        let (layers, heads, seq) = (2, 3, 12);
        let valid = 5 + s % 7;
        let mk = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..layers * heads * seq * seq).map(|_| rng.random_range(0.0f32..1.0)).collect() };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let pre = AttentionDump::new(s, ModelState::Pretrained, layers, heads, seq, valid, a.clone()).unwrap();
        let post = AttentionDump::new(s, ModelState::FineTuned, layers, heads, seq, valid, b.clone()).unwrap();
        let got = sentence_similarity(&pre, &post).unwrap();
        for l in 0..layers {
            for h in 0..heads {
                let base = (l * heads + h) * seq * seq;
                let flat = |m: &[f32]| -> Vec<f32> {
                    (0..valid).flat_map(|r| m[base + r * seq..base + r * seq + valid].to_vec()).collect()
                };
                let want = cos64(&flat(&a), &flat(&b));
                worst = worst.max((got.cells[l][h].unwrap() - want).abs());
            }
        }
    }
    let vecs = |rng: &mut ChaCha8Rng| -> Vec<Vec<Vec<f32>>> {
        (0..2).map(|_| (0..3).map(|_| (0..40).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect()).collect()
    };
    let (wa, wb) = (vecs(&mut rng), vecs(&mut rng));
    let m = weight_similarity(
        &AttentionWeights::from_nested(wa.clone()).unwrap(),
        &AttentionWeights::from_nested(wb.clone()).unwrap(),
    )
    .unwrap();
    for l in 0..2 {
        for h in 0..3 {
            worst = worst.max((m.cells[l][h].unwrap() - cos64(&wa[l][h], &wb[l][h])).abs());
        }
    }
    ensure(worst <= ORACLE_TOL, || format!("attention max err {worst:e}"))?;
    ensure(t.elapsed() < ORACLE_BUDGET, || "attention too slow".into())?;
    notes.push(format!("attention {worst:.1e}"));

    // outcome counts
    let t = Instant::now();
    let ls = labels();
    for _ in 0..ORACLE_POINTS {
        let len = rng.random_range(1..25);
        let (g, p) = (random_tags(&mut rng, len), random_tags(&mut rng, len));
        let gi: Vec<LabelId> = g.iter().map(|t| ls.id(t).unwrap()).collect();
        let pi: Vec<LabelId> = p.iter().map(|t| ls.id(t).unwrap()).collect();
        let tok = token_outcomes(&ls, &gi, &pi).unwrap();
        for tag in TAGS {
            let tp = g.iter().zip(&p).filter(|(a, b)| **a == tag && **b == tag).count() as u64;
            let fp = g.iter().zip(&p).filter(|(a, b)| **a != tag && **b == tag).count() as u64;
            let fn_ = g.iter().zip(&p).filter(|(a, b)| **a == tag && **b != tag).count() as u64;
            let c = counts_of(&tok, tag);
            ensure((c.tp, c.fp, c.fn_) == (tp, fp, fn_), || format!("token {tag}: {c:?} vs {tp}/{fp}/{fn_}"))?;
        }
        for mode in DecodeMode::ALL {
            let repair = mode == DecodeMode::Repair;
            let (gs, ps) = (decode_strs(&ls, &g, mode).unwrap(), decode_strs(&ls, &p, mode).unwrap());
            let (og, op) = (oracle_spans(&g, repair), oracle_spans(&p, repair));
            ensure(as_triples(&ls, &gs) == og, || format!("decode {g:?} {mode:?}"))?;
            let ent = entity_outcomes(&ls, &gs, &ps);
            for ty in ["PER", "LOC", "ORG", "MISC"] {
                let gt: BTreeSet<_> = og.iter().filter(|s| s.2 == ty).collect();
                let pt: BTreeSet<_> = op.iter().filter(|s| s.2 == ty).collect();
                let tp = gt.intersection(&pt).count() as u64;
                let want = (tp, pt.len() as u64 - tp, gt.len() as u64 - tp);
                let c = counts_of(&ent, ty);
                ensure((c.tp, c.fp, c.fn_) == want, || format!("entity {ty} {mode:?}: {c:?} vs {want:?}"))?;
            }
        }
    }
    ensure(t.elapsed() < ORACLE_BUDGET, || "outcome tallies too slow".into())?;
    notes.push("outcomes exact".into());

    Ok(format!("{} in {:.2} s", notes.join(", "), started.elapsed().as_secs_f64()))
}

fn dir_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ls = labels();

    let mut spans_seen = 0usize;
    for _ in 0..INVARIANT_SEQUENCES {
        let len = rng.random_range(1..30);
        let tags = random_tags(&mut rng, len);
        let r = as_triples(&ls, &decode_strs(&ls, &tags, DecodeMode::Repair).unwrap());
        let d = as_triples(&ls, &decode_strs(&ls, &tags, DecodeMode::Discard).unwrap());
        ensure(d.is_subset(&r), || format!("discard not within repair for {tags:?}"))?;
        spans_seen += r.len();
    }

    for _ in 0..1000 {
        let len = rng.random_range(1..30);
        let (g, p) = (random_tags(&mut rng, len), random_tags(&mut rng, len));
        for mode in DecodeMode::ALL {
            let (gs, ps) = (decode_strs(&ls, &g, mode).unwrap(), decode_strs(&ls, &p, mode).unwrap());
            let recs = classify_span_errors(&gs, &ps);
            let o = entity_outcomes(&ls, &gs, &ps);
            for (ty, c) in o.iter() {
                let t = ls.type_id(ty).unwrap();
                let fp = recs.iter().filter(|r| r.side == Side::FP && r.span.entity_type == t).count() as u64;
                let fn_ = recs.iter().filter(|r| r.side == Side::FN && r.span.entity_type == t).count() as u64;
                ensure((fp, fn_) == (c.fp, c.fn_), || format!("{ty} {mode:?}: records {fp}/{fn_} vs {c:?}"))?;
            }
        }
        let gi: Vec<LabelId> = g.iter().map(|t| ls.id(t).unwrap()).collect();
        let pi: Vec<LabelId> = p.iter().map(|t| ls.id(t).unwrap()).collect();
        let rep = build_report(&token_outcomes(&ls, &gi, &pi).unwrap(), None, "O", ReportOptions::default());
        let m = &rep.aggregates.micro_avg;
        ensure((m.precision - m.recall).abs() < 1e-12 && (m.f1 - m.recall).abs() < 1e-12, || {
            format!("token micro {m:?}")
        })?;
    }

    // positive rescaling leaves every cosine-based metric unchanged; powers
    // of two keep the scaled f32 inputs exact
    let rows = random_rows(&mut rng, 120, 12);
    let scaled: Vec<Vec<f32>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let k = [0.25f32, 4.0, 16.0, 0.0625][i % 4];
            r.iter().map(|v| v * k).collect()
        })
        .collect();
    let rr: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
    let rs: Vec<&[f32]> = scaled.iter().map(|r| r.as_slice()).collect();
    let ids: Vec<LabelId> = (0..rows.len()).map(|i| LabelId((i % 5) as u16)).collect();
    let a = silhouette_scores(&rr, &ids, SilhouetteOptions::default());
    let b = silhouette_scores(&rs, &ids, SilhouetteOptions::default());
    for (x, y) in a.scores.iter().zip(&b.scores) {
        close(x.unwrap(), y.unwrap(), 1e-9, "silhouette under scaling")?;
    }
    for (x, y) in rr.iter().zip(&rs) {
        close(cosine(x, x).unwrap(), cosine(x, y).unwrap(), 1e-9, "cosine under scaling")?;
    }
    let surfaces: Vec<&str> = (0..rows.len()).map(|i| ["a", "b", "c"][i % 3]).collect();
    let shift_a = representation_shift(&rr, &rr[1..].iter().chain(&rr[..1]).copied().collect::<Vec<_>>(), &surfaces, 3).unwrap();
    let shift_b = representation_shift(&rs, &rr[1..].iter().chain(&rr[..1]).copied().collect::<Vec<_>>(), &surfaces, 3).unwrap();
    for (x, y) in shift_a.similarities.iter().zip(&shift_b.similarities) {
        close(x.unwrap(), y.unwrap(), 1e-9, "representation shift under scaling")?;
    }
    let data: Vec<f32> = (0..2 * 2 * 6 * 6).map(|_| rng.random_range(0.0f32..1.0)).collect();
    let other: Vec<f32> = (0..2 * 2 * 6 * 6).map(|_| rng.random_range(0.0f32..1.0)).collect();
    let pre = AttentionDump::new(0, ModelState::Pretrained, 2, 2, 6, 5, data).unwrap();
    let post = AttentionDump::new(0, ModelState::FineTuned, 2, 2, 6, 5, other).unwrap();
    let s1 = sentence_similarity(&pre, &post).unwrap();
    let s2 = sentence_similarity(&pre.scaled(8.0), &post.scaled(0.125)).unwrap();
    for (x, y) in s1.cells.iter().flatten().zip(s2.cells.iter().flatten()) {
        close(x.unwrap(), y.unwrap(), 1e-9, "attention under scaling")?;
    }

    // seeded determinism
    let km = |rows: &[&[f32]]| kmeans_cluster(rows, KMeansOptions::new(4, 3)).unwrap();
    let (k1, k2) = (km(&rr), km(&rr));
    ensure(k1.assignments == k2.assignments && k1.inertia.to_bits() == k2.inertia.to_bits(), || {
        "kmeans differs between runs".into()
    })?;
    let tmp = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        seed: 99,
        planted: PlantedCase::ALL.to_vec(),
        ..FixtureSpec::default()
    };
    for name in ["f1", "f2"] {
        write_bundle(&generate_fixture(&spec).unwrap(), tmp.path().join(name), WriteOptions::default()).unwrap();
    }
    ensure(dir_bytes(&tmp.path().join("f1")) == dir_bytes(&tmp.path().join("f2")), || {
        "fixture bytes differ".into()
    })?;
    let bundle = tmp.path().join("f1");
    let run = |args: &[&str]| nerscope().args(args).arg(&bundle).output().unwrap();
    for args in [
        &["score", "--level", "token", "--format", "csv"][..],
        &["score", "--scheme-mode", "strict", "--format", "json"][..],
        &["score", "--format", "text"][..],
        &["validate", "--json"][..],
    ] {
        let (a, b) = (run(args), run(args));
        ensure(a.status.success() && !a.stdout.is_empty(), || format!("{args:?} failed"))?;
        ensure(a.stdout == b.stdout, || format!("{args:?} output differs"))?;
    }
    for out in ["a1", "a2"] {
        let st = nerscope().arg("analyze").arg(&bundle).arg("--out").arg(tmp.path().join(out)).output().unwrap();
        ensure(st.status.success(), || "analyze failed".into())?;
    }
    ensure(dir_bytes(&tmp.path().join("a1")) == dir_bytes(&tmp.path().join("a2")), || {
        "analyze output differs".into()
    })?;
    Ok(format!(
        "{INVARIANT_SEQUENCES} sequences ({spans_seen} spans) repair contains discard; partition, micro, scaling and determinism hold"
    ))
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http(port: u16, method: &str, path: &str, body: Option<&str>) -> std::io::Result<(u16, String)> {
    let mut s = TcpStream::connect(("127.0.0.1", port))?;
    s.set_read_timeout(Some(Duration::from_secs(60)))?;
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )?;
    let mut raw = String::new();
    s.read_to_string(&mut raw)?;
    let (head, rest) = raw.split_once("\r\n\r\n").unwrap_or((&raw, ""));
    let status = head.split_whitespace().nth(1).and_then(|c| c.parse().ok()).unwrap_or(0);
    Ok((status, rest.to_string()))
}

fn start_server(bundle: &Path) -> Result<(Server, u16, Duration), String> {
    let port = free_port();
    let started = Instant::now();
    let child = nerscope()
        .arg("serve")
        .arg(bundle)
        .env("PORT", port.to_string())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut server = Server(child);
    loop {
        if let Ok((200, _)) = http(port, "GET", "/api/v1/manifest", None) {
            return Ok((server, port, started.elapsed()));
        }
        if let Ok(Some(st)) = server.0.try_wait() {
            return Err(format!("server exited early: {st}"));
        }
        if started.elapsed() > Duration::from_secs(120) {
            return Err("server never became ready".into());
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn performance() -> Check {
    // ten words per sentence on average, plus headroom
    let sentences = PERF_TOKENS / 10 + PERF_TOKENS / 200;
    let spec = FixtureSpec {
        seed: 5,
        train_sentences: sentences * 7 / 10,
        test_sentences: sentences * 3 / 10,
        embedding_dim: Some(64),
        attention: None,
        ..FixtureSpec::default()
    };
    let bundle = generate_fixture(&spec).unwrap();
    let tokens: usize = Split::ALL.iter().map(|&s| bundle.core_tokens(s).len()).sum();
    ensure(tokens >= PERF_TOKENS, || format!("fixture has only {tokens} tokens"))?;

    let t = Instant::now();
    let vocab = build_vocabulary_index(&bundle);
    let table = token_metrics(
        &bundle,
        &vocab,
        SilhouetteOptions {
            execution: Execution::Sequential,
            ..SilhouetteOptions::default()
        },
    );
    score_bundle(&bundle, Level::Token, DecodeMode::Repair, ReportOptions::default()).unwrap();
    for mode in DecodeMode::ALL {
        score_bundle(&bundle, Level::Entity, mode, ReportOptions::default()).unwrap();
    }
    let compute = t.elapsed();
    ensure(table.silhouette.is_some(), || "silhouette not computed".into())?;
    ensure(compute < PERF_BUDGET, || format!("scoring + behavioural took {compute:?}"))?;

    let tmp = tempfile::tempdir().unwrap();
    write_bundle(
        &bundle,
        tmp.path(),
        WriteOptions {
            raw_embeddings: true,
        },
    )
    .unwrap();
    drop(bundle);
    let (_server, _, cold) = start_server(tmp.path())?;
    ensure(cold < COLD_START_BUDGET, || format!("cold start took {cold:?}"))?;
    Ok(format!(
        "{tokens} tokens: scoring + behavioural {:.2} s sequential, cold start {:.2} s",
        compute.as_secs_f64(),
        cold.as_secs_f64()
    ))
}

const E2E_PATHS: &[&str] = &[
    "/api/v1/spec",
    "/api/v1/manifest",
    "/api/v1/report",
    "/api/v1/report?level=token",
    "/api/v1/report?mode=strict",
    "/api/v1/errors",
    "/api/v1/confusion",
    "/api/v1/confusion?level=token",
    "/api/v1/lexical/diversity",
    "/api/v1/lexical/oov",
    "/api/v1/lexical/overlap",
    "/api/v1/aggregates",
    "/api/v1/correlations",
    "/api/v1/tokens",
    "/api/v1/tokens?filter=correct%20%3D%3D%20false",
    "/api/v1/tokens/test:0:0/distribution",
    "/api/v1/tokens/test:0:0/similar",
    "/api/v1/scatter?x=loss&y=confidence&color=outcome",
    "/api/v1/projection",
    "/api/v1/projection?state=pretrained",
    "/api/v1/sentences/test/0",
    "/api/v1/attention/summary",
    "/api/v1/attention/summary?kind=weights",
    "/api/v1/attention/sentence/0",
    "/api/v1/clusters?k=4",
];

fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    let step = |name: &str, cmd: &mut Command| -> Result<Vec<u8>, String> {
        let o = cmd.output().map_err(|e| e.to_string())?;
        ensure(o.status.success(), || format!("{name}: {}", String::from_utf8_lossy(&o.stderr)))?;
        Ok(o.stdout)
    };
    step("fixture", nerscope().args(["fixture", "--planted", "--out"]).arg(&bundle))?;
    step("validate", nerscope().arg("validate").arg(&bundle))?;
    let score = step("score", nerscope().arg("score").arg(&bundle))?;
    let report: Value = serde_json::from_slice(&score).map_err(|e| format!("score json: {e}"))?;
    ensure(report.is_object(), || "score output".into())?;
    let out = tmp.path().join("analysis");
    step("analyze", nerscope().arg("analyze").arg(&bundle).arg("--out").arg(&out))?;
    ensure(out.join("analysis.tokens.jsonl").is_file(), || "analysis.tokens.jsonl missing".into())?;

    let (_server, port, _) = start_server(&bundle)?;
    for path in E2E_PATHS {
        let (status, body) = http(port, "GET", path, None).map_err(|e| format!("{path}: {e}"))?;
        ensure(status == 200, || format!("{path}: HTTP {status} {body}"))?;
        serde_json::from_str::<Value>(&body).map_err(|e| format!("{path}: {e}"))?;
    }
    let (status, body) = http(
        port,
        "POST",
        "/api/v1/selection/summary",
        Some(r#"{"ids":["test:0:0","test:0:1","test:1:0"],"categorical":"gold"}"#),
    )
    .map_err(|e| e.to_string())?;
    ensure(status == 200, || format!("selection: HTTP {status} {body}"))?;
    let v: Value = serde_json::from_str(&body).map_err(|e| e.to_string())?;
    ensure(v["size"] == 3, || format!("selection size {}", v["size"]))?;
    let (status, _) = http(port, "GET", "/api/v1/missing", None).map_err(|e| e.to_string())?;
    ensure(status == 404, || format!("unknown route gave {status}"))?;
    Ok(format!("fixture, validate, score, analyze, serve; {} endpoints answered", E2E_PATHS.len() + 1))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("scheme-flip exactness", scheme_flip),
        ("error-taxonomy exactness", taxonomy),
        ("averaging arithmetic", averaging),
        ("behavioural worked examples", behavioural),
        ("oracle equivalence", oracles),
        ("invariant suites", invariants),
        ("performance", performance),
        ("end-to-end", end_to_end),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
