//! Pipeline stages. Each stage reads the previous stage's files from the
//! output directory and writes its own, so any stage can be rerun alone.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use halprobe::corpus::{
    apply_filters, load_corpus, write_canonical, Corpus, CorpusFormat, DescriptionIndex, Reviews,
};
use halprobe::embed::EmbeddingBundle;
use halprobe::evaluator::{
    read_responses, run_responder, write_responses, Cached, MockModel, RemoteClient, Responder,
    ResponseCache, ResponsesHeader,
};
use halprobe::judge::{
    parse_answer, render_report, score_run, EvalReport, Provenance, ReportFormat,
};
use halprobe::manifest::ExportManifest;
use halprobe::prompt::TemplateRegistry;
use halprobe::qa::{generate_qa, read_qa, write_qa, QaContext, QaHeader};
use halprobe::search::{
    read_distractor_sets, search_corpus, write_distractor_sets, RunMode, SearchConfig,
    SearchHeader, SearchInputs, Strategy,
};
use halprobe::stats::CooccurrenceTable;
use tracing::info;

use crate::config::RunConfig;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const FILTER_STATS_FILE: &str = "filter_stats.json";
pub const COOCCURRENCE_FILE: &str = "cooccurrence.bin";
pub const MANIFEST_FILE: &str = "export_manifest.json";
pub const SCORES_FILE: &str = "scores.json";

/// Mock answers are cheap; this only bounds thread count.
const MOCK_PARALLEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Stats,
    Search,
    ExportManifest,
    GenQa,
    Evaluate,
    Score,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Stats,
        Stage::Search,
        Stage::ExportManifest,
        Stage::GenQa,
        Stage::Evaluate,
        Stage::Score,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Stats => "stats",
            Stage::Search => "search",
            Stage::ExportManifest => "export-manifest",
            Stage::GenQa => "gen-qa",
            Stage::Evaluate => "evaluate",
            Stage::Score => "score",
            Stage::Report => "report",
        }
    }
}

pub struct Pipeline {
    pub config: RunConfig,
    pub digest: String,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

impl Pipeline {
    pub fn new(config: RunConfig, digest: String) -> Self {
        Pipeline { config, digest }
    }

    pub fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    pub fn search_path(&self, s: Strategy) -> PathBuf {
        self.out(format!("search/{s}.jsonl"))
    }

    pub fn qa_path(&self, s: Strategy, template: &str) -> PathBuf {
        self.out(format!("qa/{s}.{template}.jsonl"))
    }

    pub fn responses_path(&self, s: Strategy, template: &str) -> PathBuf {
        self.out(format!("responses/{s}.{template}.jsonl"))
    }

    pub fn report_path(&self, f: ReportFormat) -> PathBuf {
        self.out(match f {
            ReportFormat::Table => "report.txt",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
        })
    }

    /// Fails with the subcommand that produces `path` when it is absent.
    fn require(&self, path: &Path, producer: Stage) -> Result<()> {
        if !path.exists() {
            bail!(
                "{} not found; run `{}` first",
                path.display(),
                producer.name()
            );
        }
        Ok(())
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        info!(stage = stage.name(), "starting");
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Stats => self.stats(),
            Stage::Search => self.search(),
            Stage::ExportManifest => self.export_manifest(),
            Stage::GenQa => self.gen_qa(),
            Stage::Evaluate => self.evaluate(),
            Stage::Score => self.score(),
            Stage::Report => self.report(),
        }
        .with_context(|| format!("stage `{}` failed", stage.name()))
    }

    pub fn run_all(&self) -> Result<()> {
        for s in Stage::ALL {
            self.run(s)?;
        }
        Ok(())
    }

    fn ingest(&self) -> Result<()> {
        let c = &self.config.corpus;
        let raw = load_corpus(&c.path, c.format)?;
        let (corpus, stats) = apply_filters(&raw, &self.config.filters.resolve())?;
        info!(
            images = stats.samples_kept,
            objects = stats.objects_kept,
            rounds = stats.rounds,
            "filtered corpus"
        );
        fs::create_dir_all(&self.config.output_dir)
            .with_context(|| format!("cannot create {}", self.config.output_dir.display()))?;
        write_canonical(&corpus, &self.out(CORPUS_FILE))?;
        let json = serde_json::to_string_pretty(&stats)? + "\n";
        write(&self.out(FILTER_STATS_FILE), json)
    }

    pub fn corpus(&self) -> Result<Corpus> {
        let path = self.out(CORPUS_FILE);
        self.require(&path, Stage::Ingest)?;
        Ok(load_corpus(&path, CorpusFormat::Canonical)?)
    }

    fn stats(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let table = CooccurrenceTable::build(&corpus);
        write(
            &self.out(COOCCURRENCE_FILE),
            table.to_bytes(&hash_bytes(&corpus)?),
        )
    }

    fn table(&self, corpus: &Corpus) -> Result<CooccurrenceTable> {
        let path = self.out(COOCCURRENCE_FILE);
        self.require(&path, Stage::Stats)?;
        let bytes = fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let (table, hash) = CooccurrenceTable::from_bytes(&bytes)?;
        if hash != hash_bytes(corpus)? {
            bail!(
                "{} was built from a different corpus; rerun `stats`",
                path.display()
            );
        }
        Ok(table)
    }

    fn bundle(&self) -> Result<Option<EmbeddingBundle>> {
        self.config
            .bundle
            .as_deref()
            .map(|dir| {
                EmbeddingBundle::load(dir)
                    .with_context(|| format!("cannot load bundle {}", dir.display()))
            })
            .transpose()
    }

    fn search_config(&self, strategy: Strategy) -> SearchConfig {
        let s = &self.config.search;
        let mut c = SearchConfig::new(strategy);
        c.k = s.k.unwrap_or(c.k);
        c.m = s.m.unwrap_or(c.m);
        c.gamma = s.gamma;
        c.seed = self.config.seed;
        c.mode = s.mode;
        c
    }

    fn search(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let strategies = &self.config.search.strategies;
        let table = if strategies
            .iter()
            .any(|s| matches!(s, Strategy::Cooccurrence | Strategy::All))
        {
            Some(self.table(&corpus)?)
        } else {
            None
        };
        let bundle = self.bundle()?;
        let descriptions = strategies
            .contains(&Strategy::Description)
            .then(|| DescriptionIndex::new(&corpus));
        let reviews = self
            .config
            .corpus
            .reviews
            .as_deref()
            .map(Reviews::load)
            .transpose()?;
        if descriptions.is_some()
            && reviews.is_none()
            && self.config.search.mode == RunMode::VerifiedOnly
        {
            tracing::warn!("verified-only run without a reviews file: no description distractors");
        }
        let inputs = SearchInputs {
            corpus: &corpus,
            table: table.as_ref(),
            bundle: bundle.as_ref(),
            descriptions: descriptions.as_ref(),
            reviews: reviews.as_ref(),
        };
        let header = SearchHeader::new(&self.digest);
        for &s in strategies {
            let sets = search_corpus(&self.search_config(s), &inputs)
                .with_context(|| format!("{s} search"))?;
            info!(strategy = %s, images = sets.len(), "searched");
            write(
                &self.search_path(s),
                write_distractor_sets(&header, &sets, &corpus.space),
            )?;
        }
        Ok(())
    }

    fn export_manifest(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let target = self
            .config
            .bundle
            .clone()
            .unwrap_or_else(|| self.out("bundle"));
        let e = &self.config.export;
        let m = ExportManifest::from_corpus(
            &corpus,
            &e.checkpoint,
            &e.text_template,
            &target.to_string_lossy(),
        )?;
        m.write(&self.out(MANIFEST_FILE))?;
        if let Some(bundle) = self.bundle()? {
            let missing = m.missing_from(&bundle);
            if !missing.is_empty() {
                tracing::warn!(
                    missing = missing.len(),
                    "configured bundle lacks manifest entries"
                );
            }
        }
        Ok(())
    }

    fn registry(&self) -> Result<TemplateRegistry> {
        Ok(match &self.config.qa.registry {
            Some(p) => TemplateRegistry::load(p)?,
            None => TemplateRegistry::default(),
        })
    }

    /// Every (strategy, template) pair the config asks for, in config order.
    fn pairs(&self) -> Vec<(Strategy, &str)> {
        let mut out = Vec::new();
        for &s in &self.config.search.strategies {
            for t in &self.config.qa.templates {
                out.push((s, t.as_str()));
            }
        }
        out
    }

    fn gen_qa(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let registry = self.registry()?;
        let context = QaContext {
            seed: self.config.seed,
            gamma: self.config.search.gamma,
            source_tag: self.source_tag()?,
            corpus_hash: corpus.content_hash(),
        };
        let header = QaHeader::new(&self.digest);
        for (s, t) in self.pairs() {
            let path = self.search_path(s);
            self.require(&path, Stage::Search)?;
            let text = fs::read_to_string(&path)?;
            let (_, sets) = read_distractor_sets(&text, &corpus.space)
                .with_context(|| format!("reading {}", path.display()))?;
            let items = generate_qa(&corpus, &sets, registry.get(t)?, &context)?;
            info!(strategy = %s, template = t, items = items.len(), "generated");
            let out = self.qa_path(s, t);
            ensure_parent(&out)?;
            write_qa(&out, &header, &items)?;
        }
        Ok(())
    }

    fn source_tag(&self) -> Result<Option<String>> {
        Ok(self.bundle()?.map(|b| b.source_tag().to_string()))
    }

    fn responder(&self) -> Result<(Box<dyn Responder>, usize)> {
        let m = &self.config.model;
        if let Some(mock) = &m.mock {
            return Ok((Box::new(MockModel::new(mock.clone())?), MOCK_PARALLEL));
        }
        let endpoint = m.endpoint.clone().ok_or_else(|| {
            anyhow!("no model configured; add [model.mock] or [model.endpoint], or pass --mock")
        })?;
        let parallel = endpoint.max_parallel_requests;
        Ok((Box::new(RemoteClient::new(endpoint)?), parallel))
    }

    fn evaluate(&self) -> Result<()> {
        let (responder, parallel) = self.responder()?;
        let cache = self
            .config
            .model
            .cache_dir
            .as_deref()
            .map(ResponseCache::new)
            .transpose()?;
        for (s, t) in self.pairs() {
            let path = self.qa_path(s, t);
            self.require(&path, Stage::GenQa)?;
            let (_, items) = read_qa(&path)?;
            let responses = match &cache {
                Some(cache) => {
                    let cached = Cached {
                        inner: &BoxedResponder(responder.as_ref()),
                        cache,
                    };
                    run_responder(&items, &cached, parallel)?
                }
                None => run_responder(&items, responder.as_ref(), parallel)?,
            };
            let failed = responses.iter().filter(|r| r.failed).count();
            info!(strategy = %s, template = t, answered = responses.len(), failed, "evaluated");
            let out = self.responses_path(s, t);
            ensure_parent(&out)?;
            write_responses(
                &out,
                &ResponsesHeader::new(responder.model_name(), &self.digest),
                &responses,
            )?;
        }
        Ok(())
    }

    fn score(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let provenance = Provenance {
            corpus_hash: corpus.content_hash(),
            bundle_source_tag: self.source_tag()?,
            seed: self.config.seed,
            config_digest: self.digest.clone(),
        };
        let mut reports: Vec<EvalReport> = Vec::new();
        for (s, t) in self.pairs() {
            let qa = self.qa_path(s, t);
            self.require(&qa, Stage::GenQa)?;
            let resp = self.responses_path(s, t);
            self.require(&resp, Stage::Evaluate)?;
            let (_, items) = read_qa(&qa)?;
            let (header, responses) = read_responses(&resp)?;
            let by_id: std::collections::HashMap<&str, _> =
                items.iter().map(|i| (i.qa_id.as_str(), i)).collect();
            let mut answers = Vec::with_capacity(responses.len());
            for r in &responses {
                let item = by_id.get(r.qa_id.as_str()).ok_or_else(|| {
                    anyhow!(
                        "{} answers unknown qa_id {}; rerun `evaluate`",
                        resp.display(),
                        r.qa_id
                    )
                })?;
                answers.push(parse_answer(item, r));
            }
            reports.extend(score_run(
                &header.model_name,
                &items,
                &answers,
                &provenance,
            )?);
        }
        let json = serde_json::to_string_pretty(&reports)? + "\n";
        write(&self.out(SCORES_FILE), json)
    }

    pub fn load_scores(&self) -> Result<Vec<EvalReport>> {
        let path = self.out(SCORES_FILE);
        self.require(&path, Stage::Score)?;
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))
    }

    fn report(&self) -> Result<()> {
        let reports = self.load_scores()?;
        for &f in &self.config.report.formats {
            write(&self.report_path(f), render_report(&reports, f)?)?;
        }
        Ok(())
    }
}

/// Lets a boxed responder sit behind the generic cache wrapper.
struct BoxedResponder<'a>(&'a dyn Responder);

impl Responder for BoxedResponder<'_> {
    fn model_name(&self) -> &str {
        self.0.model_name()
    }

    fn respond(
        &self,
        item: &halprobe::qa::QAItem,
    ) -> halprobe::Result<halprobe::evaluator::ModelResponse> {
        self.0.respond(item)
    }
}

fn hash_bytes(corpus: &Corpus) -> Result<[u8; 32]> {
    let v = hex::decode(corpus.content_hash())?;
    v.try_into()
        .map_err(|_| anyhow!("corpus hash is not 32 bytes"))
}
