//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every check compares the library against an independent oracle.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::stub::{completion, Stub};
use common::{random_bundle, random_corpus, rng, scalar_cosine};
use halprobe::corpus::{CategoryId, Corpus, DescriptionEntry, Placement};
use halprobe::embed::{cosine, EmbeddingBundle, EntryKind};
use halprobe::evaluator::{
    mock_respond, run_responder, Cached, EndpointConfig, HallucinationCurve, MockModelConfig,
    RemoteClient, ResponseCache,
};
use halprobe::judge::{
    parse_answer, parse_binary, parse_multi_option, score_run, Counts, EvalReport, ParseStatus,
    ParsedAnswer, Provenance,
};
use halprobe::prompt::{PromptTemplate, TemplateKind};
use halprobe::qa::{generate_qa, Probe, ProbeEntry, ProbeKind, QAItem, QaContext, Truth, YesNo};
use halprobe::scorers::{h_con, h_sim, DistractorCandidate};
use halprobe::search::{
    search_corpus, search_strategy, top_k, ScoredDistractor, SearchConfig, SearchInputs, Strategy,
};
use halprobe::stats::CooccurrenceTable;
use halprobe::synth::{generate, SynthConfig};
use rand::seq::SliceRandom;
use rand::Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let checks: [Criterion; 11] = [
        ("top-k optimality", top_k_optimality),
        ("co-occurrence counts", cooccurrence_counts),
        ("scorer correctness", scorer_correctness),
        ("merge-all contract", merge_all_contract),
        ("gamma monotonicity", gamma_monotonicity),
        ("metrics oracle", metrics_oracle),
        ("run-all determinism", determinism),
        ("content-aware beats random", content_beats_random),
        ("binary recall invariance", recall_invariance),
        ("parser fixtures", parser_fixtures),
        ("evaluator contract", evaluator_contract),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<28} {detail} ({secs:.2}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<28} {detail} ({secs:.2}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- top-k

type RankKey = (i64, u32, Option<String>);

fn rank_key(d: &ScoredDistractor) -> RankKey {
    // scores are multiples of 1/4, so this is exact
    (
        -(d.score * 4.0) as i64,
        d.candidate.category.0,
        d.candidate.phrase.clone(),
    )
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

fn top_k_optimality() -> Check {
    let start = Instant::now();
    let mut r = rng(99);
    for inst in 0..1000 {
        let n = r.gen_range(1..=12usize);
        let k = r.gen_range(1..=4usize);
        let mut used = HashSet::new();
        let mut cands = Vec::new();
        while cands.len() < n {
            let cat = r.gen_range(0..6u32);
            let c = if r.gen_bool(0.5) {
                DistractorCandidate::negative(CategoryId(cat))
            } else {
                let e = DescriptionEntry {
                    object: CategoryId(cat),
                    text: ["red", "old", "tiny"][r.gen_range(0..3)].into(),
                    placement: Placement::Before,
                };
                DistractorCandidate::described(&format!("c{cat}"), &e).unwrap()
            };
            if used.insert((cat, c.phrase.clone())) {
                cands.push(ScoredDistractor {
                    candidate: c,
                    score: r.gen_range(0..5) as f64 / 4.0,
                    strategy: Strategy::Similarity,
                    anchor: None,
                });
            }
        }
        // best subset: largest score sum, ties to the smallest sorted key list
        let mut best: Option<(i64, Vec<RankKey>)> = None;
        for s in subsets(n, k.min(n)) {
            let mut keys: Vec<RankKey> = s.iter().map(|i| rank_key(&cands[*i])).collect();
            keys.sort();
            let sum: i64 = keys.iter().map(|k| k.0).sum();
            if best
                .as_ref()
                .is_none_or(|(bs, bk)| sum < *bs || (sum == *bs && keys < *bk))
            {
                best = Some((sum, keys));
            }
        }
        let got: Vec<RankKey> = top_k(cands, k)
            .map_err(|e| e.to_string())?
            .iter()
            .map(rank_key)
            .collect();
        ensure!(got == best.unwrap().1, "instance {inst} differs");
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(10), "took {t:?}");
    Ok("1000/1000 instances exact".into())
}

// --------------------------------------------------------- co-occurrence

fn cooccurrence_counts() -> Check {
    let mut r = rng(5);
    let corpus = random_corpus(&mut r, 200, 20, 0.25);
    let start = Instant::now();
    let table = CooccurrenceTable::build(&corpus);
    let n = 20;
    let mut single = vec![0u64; n];
    let mut pair = vec![vec![0u64; n]; n];
    for rec in &corpus.records {
        for (a, row) in pair.iter_mut().enumerate() {
            if rec.positives.contains(&CategoryId(a as u32)) {
                single[a] += 1;
                for (b, cell) in row.iter_mut().enumerate() {
                    if rec.positives.contains(&CategoryId(b as u32)) {
                        *cell += 1;
                    }
                }
            }
        }
    }
    for a in 0..n {
        let ca = CategoryId(a as u32);
        ensure!(table.single(ca) == single[a], "single count of {a}");
        for (b, want) in pair[a].iter().enumerate() {
            ensure!(
                table.pair(ca, CategoryId(b as u32)) == *want,
                "pair ({a},{b})"
            );
        }
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(1), "took {t:?}");
    Ok("200 images x 20 categories exact".into())
}

// --------------------------------------------------------------- scorers

fn scorer_correctness() -> Check {
    let start = Instant::now();
    let mut r = rng(8);
    let corpus = random_corpus(&mut r, 60, 12, 0.3);
    let table = CooccurrenceTable::build(&corpus);
    for d in corpus.space.ids() {
        for p in corpus.space.ids() {
            let s = table.h_coo(d, p);
            ensure!((0.0..=1.0).contains(&s), "h_coo {s} out of range");
        }
    }
    let mut keys: Vec<(String, EntryKind)> = corpus
        .space
        .names()
        .iter()
        .map(|n| (n.clone(), EntryKind::Category))
        .collect();
    keys.extend(
        corpus
            .records
            .iter()
            .map(|r| (r.image_id.clone(), EntryKind::Image)),
    );
    let bundle = random_bundle(&mut r, 24, &keys);
    for (k, kind) in &keys {
        let v = bundle.vector_of(k, *kind).unwrap();
        let s = cosine(v, v).unwrap();
        ensure!((s - 1.0).abs() <= 1e-6, "self-similarity of {k} is {s}");
    }
    let space = &corpus.space;
    for a in space.ids() {
        for b in space.ids() {
            let ab = h_sim(&bundle, space, a, b).unwrap();
            ensure!(
                ab == h_sim(&bundle, space, b, a).unwrap(),
                "h_sim asymmetric"
            );
            let va = bundle
                .vector_of(space.name(a), EntryKind::Category)
                .unwrap();
            let vb = bundle
                .vector_of(space.name(b), EntryKind::Category)
                .unwrap();
            ensure!((ab - scalar_cosine(va, vb)).abs() < 1e-6, "h_sim value");
        }
    }
    let argmaxes = |b: &EmbeddingBundle| -> Vec<CategoryId> {
        let mut out = Vec::new();
        for rec in &corpus.records {
            let best = space
                .ids()
                .map(|d| (h_con(b, space, &rec.image_id, d).unwrap(), d))
                .fold((f64::NEG_INFINITY, CategoryId(0)), |acc, x| {
                    if x.0 > acc.0 {
                        x
                    } else {
                        acc
                    }
                });
            out.push(best.1);
        }
        for p in space.ids() {
            let best = space
                .ids()
                .filter(|d| *d != p)
                .map(|d| (h_sim(b, space, d, p).unwrap(), d))
                .fold((f64::NEG_INFINITY, CategoryId(0)), |acc, x| {
                    if x.0 > acc.0 {
                        x
                    } else {
                        acc
                    }
                });
            out.push(best.1);
        }
        out
    };
    let base = argmaxes(&bundle);
    for lambda in [0.5f32, 2.0, 10.0] {
        ensure!(
            argmaxes(&bundle.scaled(lambda)) == base,
            "argmax moved under scaling by {lambda}"
        );
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(1), "took {t:?}");
    Ok("range, self-similarity, symmetry, scaling by 0.5/2/10".into())
}

// ----------------------------------------------------------------- merge

struct World {
    corpus: Corpus,
    table: CooccurrenceTable,
    bundle: EmbeddingBundle,
}

fn world(seed: u64, n_images: usize, n_cats: usize) -> World {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, n_images, n_cats, 0.3);
    let mut keys: Vec<(String, EntryKind)> = corpus
        .space
        .names()
        .iter()
        .map(|n| (n.clone(), EntryKind::Category))
        .collect();
    keys.extend(
        corpus
            .records
            .iter()
            .map(|r| (r.image_id.clone(), EntryKind::Image)),
    );
    let bundle = random_bundle(&mut r, 16, &keys);
    let table = CooccurrenceTable::build(&corpus);
    World {
        corpus,
        table,
        bundle,
    }
}

impl World {
    fn inputs(&self) -> SearchInputs<'_> {
        SearchInputs {
            table: Some(&self.table),
            bundle: Some(&self.bundle),
            ..SearchInputs::new(&self.corpus)
        }
    }
}

/// Walk the lists in precedence order, keeping each category's first entry.
fn reference_merge(lists: &[Vec<(u32, Strategy)>]) -> Vec<(u32, Strategy)> {
    let mut out: Vec<(u32, Strategy)> = Vec::new();
    for list in lists {
        for &(c, s) in list {
            if !out.iter().any(|(oc, _)| *oc == c) {
                out.push((c, s));
            }
        }
    }
    out
}

fn merge_all_contract() -> Check {
    let order = [
        Strategy::Cooccurrence,
        Strategy::Similarity,
        Strategy::ContentAware,
    ];
    let mut trials = 0;
    'outer: for seed in 0.. {
        let w = world(seed, 12, 14);
        let inputs = w.inputs();
        for rec in w.corpus.records.iter().filter(|r| r.is_eligible()) {
            if trials == 500 {
                break 'outer;
            }
            let k = 1 + (seed as usize % 4);
            let cfg = |s| SearchConfig {
                k,
                seed,
                ..SearchConfig::new(s)
            };
            let lists: Vec<Vec<(u32, Strategy)>> = order
                .iter()
                .map(|s| {
                    search_strategy(rec, &cfg(*s), &inputs)
                        .unwrap()
                        .distractors
                        .iter()
                        .map(|d| (d.candidate.category.0, d.strategy))
                        .collect()
                })
                .collect();
            let merged: Vec<(u32, Strategy)> = search_strategy(rec, &cfg(Strategy::All), &inputs)
                .unwrap()
                .distractors
                .iter()
                .map(|d| (d.candidate.category.0, d.strategy))
                .collect();
            let distinct: HashSet<u32> = merged.iter().map(|x| x.0).collect();
            ensure!(
                distinct.len() == merged.len(),
                "duplicate in {}",
                rec.image_id
            );
            let ranks: Vec<usize> = merged
                .iter()
                .map(|(_, s)| order.iter().position(|o| o == s).unwrap())
                .collect();
            ensure!(
                ranks.windows(2).all(|w| w[0] <= w[1]),
                "precedence broken in {}",
                rec.image_id
            );
            ensure!(
                merged == reference_merge(&lists),
                "differs from reference in {}",
                rec.image_id
            );
            trials += 1;
        }
    }
    Ok(format!("{trials} trials exact"))
}

// ----------------------------------------------------------------- gamma

fn gamma_monotonicity() -> Check {
    let strategies = [
        Strategy::Cooccurrence,
        Strategy::Similarity,
        Strategy::ContentAware,
    ];
    let mut instances = 0;
    'outer: for seed in 0.. {
        let w = world(1000 + seed, 10, 24);
        let inputs = w.inputs();
        for rec in w.corpus.records.iter().filter(|r| r.is_eligible()) {
            if instances == 500 {
                break 'outer;
            }
            let s = strategies[instances % 3];
            let top: Vec<f64> = [0.25, 0.5, 1.0]
                .iter()
                .map(|g| {
                    let cfg = SearchConfig {
                        gamma: *g,
                        seed,
                        ..SearchConfig::new(s)
                    };
                    search_strategy(rec, &cfg, &inputs)
                        .unwrap()
                        .distractors
                        .first()
                        .map_or(f64::NEG_INFINITY, |d| d.score)
                })
                .collect();
            ensure!(
                top[0] <= top[1] && top[1] <= top[2],
                "{s} on {}: {top:?}",
                rec.image_id
            );
            instances += 1;
        }
    }
    Ok(format!("{instances} instances nondecreasing"))
}

// --------------------------------------------------------------- metrics

fn probe_entry(kind: ProbeKind, text: &str) -> ProbeEntry {
    ProbeEntry {
        kind,
        category: text.into(),
        description: None,
        text: text.into(),
        score: None,
    }
}

fn random_run(r: &mut impl Rng) -> (Vec<QAItem>, Vec<ParsedAnswer>) {
    let mut items = Vec::new();
    let mut answers = Vec::new();
    for i in 0..r.gen_range(1..40) {
        let strategy = [Strategy::Cooccurrence, Strategy::Similarity][r.gen_range(0..2)];
        let binary = r.gen_bool(0.5);
        let qa_id = format!("q{i}");
        let (kind, probe, truth) = if binary {
            let pos = r.gen_bool(0.5);
            let kind = if pos {
                ProbeKind::Positive
            } else {
                ProbeKind::NegativeCategory
            };
            let t = if pos { YesNo::Yes } else { YesNo::No };
            (
                TemplateKind::Binary,
                Probe::Single(probe_entry(kind, "o")),
                Truth::Binary(t),
            )
        } else {
            let n = r.gen_range(1..6);
            let opts: Vec<ProbeEntry> = (0..n)
                .map(|j| probe_entry(ProbeKind::NegativeCategory, &format!("o{j}")))
                .collect();
            let truth = opts
                .iter()
                .filter(|_| r.gen_bool(0.4))
                .map(|o| o.text.clone())
                .collect();
            (
                TemplateKind::MultiOption,
                Probe::Options(opts),
                Truth::Present(truth),
            )
        };
        let ok = r.gen_bool(0.85);
        let answer = ParsedAnswer {
            qa_id: qa_id.clone(),
            kind,
            binary_value: (binary && ok).then(|| {
                if r.gen_bool(0.5) {
                    YesNo::Yes
                } else {
                    YesNo::No
                }
            }),
            selected: (!binary && ok).then(|| {
                let Probe::Options(o) = &probe else {
                    unreachable!()
                };
                o.iter()
                    .filter(|_| r.gen_bool(0.5))
                    .map(|e| e.text.clone())
                    .collect()
            }),
            parse_status: if ok {
                ParseStatus::Ok
            } else {
                ParseStatus::Unparseable
            },
        };
        items.push(QAItem {
            qa_id,
            image_id: format!("img{i}"),
            image_uri: "u".into(),
            template_kind: kind,
            template_name: kind.as_str().into(),
            prompt: "p".into(),
            probe,
            truth,
            strategy,
            metadata: BTreeMap::new(),
        });
        if r.gen_bool(0.95) {
            answers.push(answer);
        }
    }
    (items, answers)
}

/// (tp, fp, tn, fn including unparseable positives) per group.
fn tally(
    items: &[QAItem],
    answers: &[ParsedAnswer],
) -> BTreeMap<(Strategy, TemplateKind), [u64; 4]> {
    let mut out: BTreeMap<(Strategy, TemplateKind), [u64; 4]> = BTreeMap::new();
    for item in items {
        let c = out
            .entry((item.strategy, item.template_kind))
            .or_insert([0; 4]);
        let a = answers
            .iter()
            .find(|a| a.qa_id == item.qa_id && a.parse_status == ParseStatus::Ok);
        let decisions: Vec<(bool, Option<bool>)> = match (&item.probe, &item.truth) {
            (Probe::Single(_), Truth::Binary(t)) => vec![(
                *t == YesNo::Yes,
                a.map(|a| a.binary_value == Some(YesNo::Yes)),
            )],
            (Probe::Options(opts), Truth::Present(p)) => opts
                .iter()
                .map(|o| {
                    (
                        p.contains(&o.text),
                        a.map(|a| a.selected.as_ref().unwrap().contains(&o.text)),
                    )
                })
                .collect(),
            _ => unreachable!(),
        };
        for d in decisions {
            match d {
                (true, Some(true)) => c[0] += 1,
                (false, Some(true)) => c[1] += 1,
                (false, Some(false)) => c[2] += 1,
                (true, _) => c[3] += 1,
                (false, None) => {}
            }
        }
    }
    out
}

fn metrics_oracle() -> Check {
    let mut r = rng(2024);
    for run in 0..500 {
        let (items, answers) = random_run(&mut r);
        let reports =
            score_run("m", &items, &answers, &Provenance::default()).map_err(|e| e.to_string())?;
        let oracle = tally(&items, &answers);
        ensure!(reports.len() == oracle.len(), "run {run}: group count");
        for rep in &reports {
            let [tp, fp, tn, fnn] = oracle[&(rep.strategy, rep.template_kind)];
            let c = rep.counts;
            ensure!(
                [c.tp, c.fp, c.tn, c.fn_] == [tp, fp, tn, fnn],
                "run {run}: counts differ"
            );
            let (tp, fp, fnn) = (tp as f64, fp as f64, fnn as f64);
            if tp + fp > 0.0 {
                ensure!(
                    (rep.precision.value - tp / (tp + fp)).abs() <= 1e-12,
                    "run {run}: precision"
                );
            }
            if tp + fnn > 0.0 {
                ensure!(
                    (rep.recall.value - tp / (tp + fnn)).abs() <= 1e-12,
                    "run {run}: recall"
                );
            }
            if tp > 0.0 {
                let f1 = 2.0 * tp / (2.0 * tp + fp + fnn);
                ensure!((rep.f1.value - f1).abs() <= 1e-12, "run {run}: f1");
            }
        }
    }
    let worked = EvalReport::from_counts(
        "m",
        Strategy::Cooccurrence,
        TemplateKind::Binary,
        Counts {
            tp: 3,
            fp: 1,
            fn_: 2,
            ..Counts::default()
        },
        Provenance::default(),
    );
    ensure!(worked.precision.value == 0.75, "worked precision");
    ensure!((worked.recall.value - 0.6).abs() <= 1e-12, "worked recall");
    ensure!(
        (worked.f1.value - 2.0 / 3.0).abs() <= 1e-12,
        "worked f1 {}",
        worked.f1.value
    );
    Ok(format!(
        "500 runs exact; worked case P={:.2} R={:.2} F1={:.4}",
        worked.precision.value, worked.recall.value, worked.f1.value
    ))
}

// ----------------------------------------------------------- determinism

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/tiny")
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture().join("run.toml");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_halprobe"))
            .args(["-c", cfg.to_str().unwrap(), "--seed", "1", "--stage-out"])
            .arg(&out)
            .arg("run-all")
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        ensure!(
            o.status.success(),
            "run-all failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        runs.push(out);
    }
    let mut compared = 0;
    for sub in ["search", "qa"] {
        let a = files_under(&runs[0].join(sub));
        let b = files_under(&runs[1].join(sub));
        ensure!(!a.is_empty(), "no {sub} files");
        ensure!(a == b, "{sub} files differ");
        compared += a.len();
    }
    for f in ["report.txt", "report.csv", "report.md"] {
        let a = std::fs::read(runs[0].join(f)).unwrap();
        ensure!(a == std::fs::read(runs[1].join(f)).unwrap(), "{f} differs");
        compared += 1;
    }
    Ok(format!("{compared} files byte-identical"))
}

// -------------------------------------------------- content vs random

/// Per-image (tp, fp) for binary items answered by the mock, with every
/// distractor scored by its content score so both strategies face the same
/// curve.
fn per_image_tally(
    items: &[QAItem],
    mock: &MockModelConfig,
    world: &halprobe::synth::SynthWorld,
) -> HashMap<String, (u64, u64)> {
    let space = &world.corpus.space;
    let mut out: HashMap<String, (u64, u64)> = HashMap::new();
    for item in items {
        let Probe::Single(e) = &item.probe else {
            unreachable!()
        };
        let score = (e.kind != ProbeKind::Positive).then(|| {
            let id = space.id(&e.category).unwrap();
            h_con(&world.bundle, space, &item.image_id, id).unwrap()
        });
        let resp = mock_respond(mock, item, score);
        let said_yes = parse_answer(item, &resp).binary_value == Some(YesNo::Yes);
        let c = out.entry(item.image_id.clone()).or_default();
        if said_yes {
            if e.kind == ProbeKind::Positive {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
    }
    out
}

fn precision_of(images: &[&str], t: &HashMap<String, (u64, u64)>) -> f64 {
    let (mut tp, mut fp) = (0u64, 0u64);
    for i in images {
        let (a, b) = t.get(*i).copied().unwrap_or_default();
        tp += a;
        fp += b;
    }
    tp as f64 / (tp + fp) as f64
}

fn content_beats_random() -> Check {
    let start = Instant::now();
    let world = generate(&SynthConfig {
        num_images: 500,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let inputs = SearchInputs {
        bundle: Some(&world.bundle),
        ..SearchInputs::new(&world.corpus)
    };
    let ctx = QaContext {
        seed: 1,
        gamma: 1.0,
        source_tag: None,
        corpus_hash: world.corpus.content_hash(),
    };
    let mock = MockModelConfig {
        yes_bias_for_positives: 0.9,
        hallucination_curve: HallucinationCurve::Logistic {
            slope: 10.0,
            midpoint: 0.5,
        },
        seed: 1,
    };
    let mut tallies = Vec::new();
    for s in [Strategy::ContentAware, Strategy::Random] {
        let cfg = SearchConfig {
            k: 2,
            m: 2,
            ..SearchConfig::new(s)
        };
        let sets = search_corpus(&cfg, &inputs).map_err(|e| e.to_string())?;
        let items = generate_qa(&world.corpus, &sets, &PromptTemplate::binary(), &ctx)
            .map_err(|e| e.to_string())?;
        ensure!(
            items.len() == 2000,
            "{s}: {} items, wanted 2000",
            items.len()
        );
        tallies.push(per_image_tally(&items, &mock, &world));
    }
    let images: Vec<&str> = world
        .corpus
        .records
        .iter()
        .map(|r| r.image_id.as_str())
        .collect();
    let diff = |imgs: &[&str]| precision_of(imgs, &tallies[1]) - precision_of(imgs, &tallies[0]);
    let observed = diff(&images);
    let p_content = precision_of(&images, &tallies[0]);
    let p_random = precision_of(&images, &tallies[1]);
    let mut r = rng(1);
    let mut boots: Vec<f64> = (0..2000)
        .map(|_| {
            let sample: Vec<&str> = (0..images.len())
                .map(|_| *images.choose(&mut r).unwrap())
                .collect();
            diff(&sample)
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let (lo, hi) = (boots[49], boots[1949]);
    let t = start.elapsed();
    let detail = format!(
        "precision content {:.4} vs random {:.4}, diff {:.4}, 95% CI [{:.4}, {:.4}]",
        p_content, p_random, observed, lo, hi
    );
    ensure!(t < Duration::from_secs(30), "took {t:?}; {detail}");
    ensure!(observed > 0.0 && lo > 0.0, "{detail}");
    Ok(detail)
}

// ------------------------------------------------------ recall invariance

fn recall_invariance() -> Check {
    let world = generate(&SynthConfig {
        num_images: 200,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let table = CooccurrenceTable::build(&world.corpus);
    let inputs = SearchInputs {
        table: Some(&table),
        bundle: Some(&world.bundle),
        ..SearchInputs::new(&world.corpus)
    };
    let ctx = QaContext {
        seed: 1,
        gamma: 1.0,
        source_tag: None,
        corpus_hash: world.corpus.content_hash(),
    };
    let mock = MockModelConfig::default();
    let mut recalls = Vec::new();
    for s in [
        Strategy::Cooccurrence,
        Strategy::Similarity,
        Strategy::ContentAware,
    ] {
        let sets = search_corpus(&SearchConfig::new(s), &inputs).map_err(|e| e.to_string())?;
        let items = generate_qa(&world.corpus, &sets, &PromptTemplate::binary(), &ctx)
            .map_err(|e| e.to_string())?;
        let answers: Vec<ParsedAnswer> = items
            .iter()
            .map(|i| parse_answer(i, &mock_respond(&mock, i, None)))
            .collect();
        let reports = score_run("mock", &items, &answers, &Provenance::default())
            .map_err(|e| e.to_string())?;
        ensure!(reports.len() == 1, "{s}: {} groups", reports.len());
        recalls.push(reports[0].recall.value);
    }
    let bits: BTreeSet<u64> = recalls.iter().map(|r| r.to_bits()).collect();
    ensure!(bits.len() == 1, "recalls differ: {recalls:?}");
    Ok(format!("recall {:.4} on all three strategies", recalls[0]))
}

// --------------------------------------------------------------- parsers

fn parser_fixtures() -> Check {
    #[derive(serde::Deserialize)]
    struct Labeled {
        text: String,
        label: String,
    }
    let fixture = include_str!("../../core/tests/fixtures/binary_responses.jsonl");
    let mut agree = 0;
    let mut total = 0;
    for line in fixture.lines() {
        let l: Labeled = serde_json::from_str(line).unwrap();
        let got = match parse_binary(&l.text) {
            Some(YesNo::Yes) => "yes",
            Some(YesNo::No) => "no",
            None => "unparseable",
        };
        total += 1;
        agree += usize::from(got == l.label);
    }
    ensure!(total == 40, "fixture has {total} lines");
    ensure!(agree >= 38, "binary agreement {agree}/40");
    let nested: &[(&[&str], &str, &[&str])] = &[
        (&["car", "red car"], "a red car", &["red car"]),
        (
            &["car", "red car"],
            "a red car and a car",
            &["car", "red car"],
        ),
        (&["sport car", "car"], "I see a sport car.", &["sport car"]),
        (
            &["hot dog", "dog"],
            "A hot dog, and also a dog.",
            &["hot dog", "dog"],
        ),
        (&["dog", "hot dog"], "hotdog", &[]),
        (&["car", "car seat"], "car seat", &["car seat"]),
        (
            &["red car", "big red car", "car"],
            "one big red car",
            &["big red car"],
        ),
        (&["lamp"], "Lamps everywhere", &[]),
        (
            &["table", "dining table"],
            "Dining table; no other table.",
            &["table", "dining table"],
        ),
    ];
    for (cands, text, want) in nested {
        let cands: Vec<String> = cands.iter().map(|s| s.to_string()).collect();
        let got = parse_multi_option(text, &cands);
        ensure!(
            got.as_deref() == Some(&want.iter().map(|s| s.to_string()).collect::<Vec<_>>()[..]),
            "{text:?}: got {got:?}"
        );
    }
    Ok(format!(
        "binary {agree}/40; nested {}/{} exact",
        nested.len(),
        nested.len()
    ))
}

// ------------------------------------------------------------- evaluator

fn stub_item(i: usize) -> QAItem {
    QAItem {
        qa_id: format!("q{i:03}"),
        image_id: format!("img{i}"),
        image_uri: format!("http://images.invalid/{i}.jpg"),
        template_kind: TemplateKind::Binary,
        template_name: "binary".into(),
        prompt: format!("Is there a thing{i} in the image?"),
        probe: Probe::Single(probe_entry(
            ProbeKind::NegativeCategory,
            &format!("thing{i}"),
        )),
        truth: Truth::Binary(YesNo::No),
        strategy: Strategy::Similarity,
        metadata: BTreeMap::new(),
    }
}

fn evaluator_contract() -> Check {
    let cfg = |stub: &Stub| EndpointConfig {
        initial_backoff_ms: 1,
        ..EndpointConfig::new(stub.base_url.clone(), "stub-model")
    };

    // two server errors, then success
    let stub = Stub::start(Duration::ZERO, |r| match r.prior_for_prompt {
        0 | 1 => (500, "{}".into()),
        _ => (200, completion("Yes.")),
    });
    let client = RemoteClient::new(cfg(&stub)).map_err(|e| e.to_string())?;
    let out = run_responder(&[stub_item(0)], &client, 1).map_err(|e| e.to_string())?;
    ensure!(out[0].attempts == 3, "attempts {}", out[0].attempts);
    ensure!(stub.requests() == 3, "requests {}", stub.requests());

    // bounded parallelism and verbatim capture
    let weird = |p: &str| format!("  No, café \"{}\".\n\t ", p.len());
    let stub = Stub::start(Duration::from_millis(5), move |r| {
        (200, completion(&weird(&r.prompt())))
    });
    let client = RemoteClient::new(cfg(&stub)).map_err(|e| e.to_string())?;
    let items: Vec<QAItem> = (0..60).map(stub_item).collect();
    let out = run_responder(&items, &client, 4).map_err(|e| e.to_string())?;
    ensure!(
        stub.max_in_flight() <= 4,
        "{} in flight",
        stub.max_in_flight()
    );
    for (o, i) in out.iter().zip(&items) {
        ensure!(
            o.raw_text == weird(&i.prompt),
            "text altered for {}",
            i.qa_id
        );
    }

    // cache: a warm cache answers without touching the endpoint
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::new(dir.path()).map_err(|e| e.to_string())?;
    let cached = Cached {
        inner: &client,
        cache: &cache,
    };
    let before = stub.requests();
    let first = run_responder(&items, &cached, 4).map_err(|e| e.to_string())?;
    ensure!(
        stub.requests() == before + 60,
        "cold cache skipped requests"
    );
    let second = run_responder(&items, &cached, 4).map_err(|e| e.to_string())?;
    ensure!(
        stub.requests() == before + 60,
        "warm cache hit the endpoint"
    );
    for ((a, b), c) in first.iter().zip(&second).zip(&out) {
        ensure!(
            a.raw_text == b.raw_text && b.raw_text == c.raw_text,
            "cached text differs"
        );
    }
    Ok(format!(
        "retries 3, max in flight {}/4, cache 60/60 hits, text verbatim",
        stub.max_in_flight()
    ))
}
