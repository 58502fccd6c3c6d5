use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use salm::baselines::{KnnBaseline, SupervisedBaseline, TfidfForest};
use salm::corpus::{
    load_corpus, read_manifest, save_jsonl, stratified_split, temporal_split, write_manifest, ClassId, Corpus,
    CorpusFormat, SampleKind,
};
use salm::evalviz::{compare_methods, compute_metrics, per_class_table, project_file, EvalReport};
use salm::nn::{load_checkpoint, save_checkpoint, Checkpoint};
use salm::pipeline::{
    build_prototypes, train_stage1, train_stage2, untrained_checkpoint, write_history_csv, PrototypeSet,
    TrainedPipeline, PAYLOAD_CHECKPOINT, PROTOTYPES_FILE, TEXT_CHECKPOINT,
};
use salm::retrieve::{classify_batch, export_embeddings, Prediction};
use salm::synthgen::llm::{HttpTransport, LlmClient, LlmConfig};
use salm::synthgen::{find_duplicates, generate_template_corpus, render_prompt_n, to_records, write_records, GenSpec};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SplitConfig};
use crate::manifest::{write_atomic, DirLock, ManifestBuilder};

pub const DESIGNATED_METHOD: &str = "salm";

/// Loaded experiment plus its output directory lock and manifest.
pub struct Run {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub manifest: ManifestBuilder,
    _lock: DirLock,
}

impl Run {
    pub fn start(command: &str, config: ExperimentConfig, config_path: &Path) -> Result<Self> {
        config.validate()?;
        let out = config.output_dir.clone();
        let lock = DirLock::acquire(&out)?;
        let mut manifest = ManifestBuilder::new(command, config.digest()?, &out);
        manifest.input(config_path)?;
        Ok(Run {
            config,
            out,
            manifest,
            _lock: lock,
        })
    }

    fn finish(self) -> Result<()> {
        let path = self.manifest.finish()?;
        log::info!("manifest written to {}", path.display());
        Ok(())
    }

    fn model_dir(&self) -> PathBuf {
        self.out.join("model")
    }

    fn splits_dir(&self) -> PathBuf {
        self.out.join("splits")
    }

    fn load_dataset(&mut self) -> Result<Corpus> {
        let path = self.config.dataset.path.clone();
        if !path.exists() {
            bail!("dataset {} does not exist", path.display());
        }
        self.manifest.input(&path)?;
        let loaded = load_corpus(&path, self.config.format(), &self.config.load_options()?)
            .with_context(|| format!("cannot load dataset {}", path.display()))?;
        for r in &loaded.rejections {
            log::warn!("record {} rejected: {} ({})", r.index, r.reason, r.category);
        }
        Ok(loaded.corpus)
    }

    fn compute_split(&self, corpus: &Corpus) -> Result<(Corpus, Corpus)> {
        let split = match &self.config.split {
            SplitConfig::Temporal { cutoff } => temporal_split(corpus, *cutoff)?,
            SplitConfig::Stratified { test_fraction, seed } => stratified_split(corpus, *test_fraction, *seed)?,
        };
        Ok((split.train, split.test))
    }

    /// Train and test partitions: from the prepared manifests when present,
    /// otherwise recomputed from the split config.
    fn split(&mut self, corpus: &Corpus) -> Result<(Corpus, Corpus)> {
        let dir = self.splits_dir();
        let (train_m, test_m) = (dir.join("train.jsonl"), dir.join("test.jsonl"));
        if train_m.exists() && test_m.exists() {
            self.manifest.input(&train_m)?;
            self.manifest.input(&test_m)?;
            let ids = |p: &Path| -> Result<Vec<String>> { Ok(read_manifest(p)?) };
            let (train_ids, test_ids) = (ids(&train_m)?, ids(&test_m)?);
            let known: HashSet<&str> = corpus.samples().iter().map(|s| s.id.as_str()).collect();
            if let Some(id) = train_ids.iter().chain(&test_ids).find(|id| !known.contains(id.as_str())) {
                bail!("split manifest names sample {id}, which is not in the dataset; rerun prepare");
            }
            Ok((
                corpus.select_ids(train_ids.iter().map(String::as_str)),
                corpus.select_ids(test_ids.iter().map(String::as_str)),
            ))
        } else {
            log::info!("no prepared split manifests; computing the split from the config");
            self.compute_split(corpus)
        }
    }
}

#[derive(Serialize)]
struct HistogramRow {
    class: String,
    train_descriptions: usize,
    train_payloads: usize,
    test_descriptions: usize,
    test_payloads: usize,
}

fn count(corpus: &Corpus, kind: SampleKind) -> HashMap<ClassId, usize> {
    corpus.histogram(kind).into_iter().collect()
}

pub fn prepare(mut run: Run) -> Result<()> {
    let corpus = run.load_dataset()?;
    let (train, test) = run.compute_split(&corpus)?;
    let dir = run.splits_dir();
    fs::create_dir_all(&dir)?;
    for (name, part) in [("train", &train), ("test", &test)] {
        let path = dir.join(format!("{name}.jsonl"));
        write_manifest(&path, part.samples().iter().map(|s| s.id.as_str()))?;
        run.manifest.artifact(&path)?;
    }
    let (td, tp, sd, sp) = (
        count(&train, SampleKind::Description),
        count(&train, SampleKind::Payload),
        count(&test, SampleKind::Description),
        count(&test, SampleKind::Payload),
    );
    let rows: Vec<HistogramRow> = corpus
        .classes()
        .iter()
        .map(|c| HistogramRow {
            class: c.name.clone(),
            train_descriptions: td.get(&c.id).copied().unwrap_or(0),
            train_payloads: tp.get(&c.id).copied().unwrap_or(0),
            test_descriptions: sd.get(&c.id).copied().unwrap_or(0),
            test_payloads: sp.get(&c.id).copied().unwrap_or(0),
        })
        .collect();
    let hist = dir.join("histogram.json");
    write_atomic(&hist, &serde_json::to_vec_pretty(&rows)?)?;
    run.manifest.artifact(&hist)?;
    eprintln!("train: {} samples, test: {} samples", train.len(), test.len());
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSel {
    One,
    Two,
    Both,
}

pub fn train(mut run: Run, stage: StageSel) -> Result<()> {
    let corpus = run.load_dataset()?;
    let (train_set, _) = run.split(&corpus)?;
    let dir = run.model_dir();
    fs::create_dir_all(&dir)?;
    let cfg = run.config.clone();
    run.manifest.seed("stage1", cfg.stage1.seed);
    run.manifest.seed("stage2", cfg.stage2.seed);
    run.manifest.seed("text_init", cfg.model.text_seed);
    run.manifest.seed("payload_init", cfg.model.payload_seed);

    let text_path = dir.join(TEXT_CHECKPOINT);
    if matches!(stage, StageSel::One | StageSel::Both) {
        run.manifest.phase("stage1");
        let s1 = train_stage1(&train_set, cfg.model.text_featurizer, cfg.model.text_encoder()?, &cfg.stage1)?;
        save_checkpoint(&s1.checkpoint, &text_path)?;
        let hist = dir.join("history_stage1.csv");
        write_history_csv(&s1.history, &hist)?;
        run.manifest.artifact(&text_path)?;
        run.manifest.artifact(&hist)?;
        eprintln!(
            "stage 1: best epoch {} of {}",
            s1.checkpoint.metadata.epoch,
            s1.history.len() - 1
        );
    }
    if matches!(stage, StageSel::Two | StageSel::Both) {
        if !text_path.exists() {
            bail!(
                "stage 2 needs the stage-1 text encoder at {}; run `train --stage 1` first",
                text_path.display()
            );
        }
        run.manifest.phase("stage2");
        let teacher = load_checkpoint(&text_path)?;
        run.manifest.input(&text_path)?;
        let report = salm::corpus::build_pairs(&train_set);
        if !report.orphans.is_empty() {
            log::warn!("{} payload(s) without a linked description skipped", report.orphans.len());
        }
        let student = cfg.model.payload_encoder(&teacher)?;
        let s2 = train_stage2(&train_set, &report.pairs, &teacher, student, cfg.model.payload_featurizer, &cfg.stage2)?;
        let payload_path = dir.join(PAYLOAD_CHECKPOINT);
        save_checkpoint(&s2.checkpoint, &payload_path)?;
        let hist = dir.join("history_stage2.csv");
        write_history_csv(&s2.history, &hist)?;
        let (prototypes, warnings) = build_prototypes(&teacher, corpus.classes())?;
        for w in warnings {
            log::warn!("{w}");
        }
        let proto_path = dir.join(PROTOTYPES_FILE);
        prototypes.save(&proto_path)?;
        for p in [&payload_path, &hist, &proto_path] {
            run.manifest.artifact(p)?;
        }
        eprintln!(
            "stage 2: best epoch {} of {}",
            s2.checkpoint.metadata.epoch,
            s2.history.len() - 1
        );
    }
    run.finish()
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub class_id: ClassId,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranking: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub class_id: ClassId,
    pub distance: f64,
}

fn retrieval_line(id: &str, p: &Prediction) -> PredictionLine {
    PredictionLine {
        id: id.to_string(),
        class_id: p.class_id,
        class: p.class_name.clone(),
        distance: Some(p.distance),
        ranking: p
            .ranking
            .iter()
            .map(|&(class_id, distance)| RankEntry { class_id, distance })
            .collect(),
    }
}

fn write_predictions(path: &Path, lines: &[PredictionLine]) -> Result<()> {
    let mut buf = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut buf, l)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    let raw = fs::read_to_string(path).with_context(|| format!("cannot read predictions {}", path.display()))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: bad prediction line", path.display(), n + 1)))
        .collect()
}

fn load_model(dir: &Path) -> Result<TrainedPipeline> {
    for f in [TEXT_CHECKPOINT, PAYLOAD_CHECKPOINT, PROTOTYPES_FILE] {
        if !dir.join(f).exists() {
            bail!("model file {} is missing; run `train` first", dir.join(f).display());
        }
    }
    Ok(TrainedPipeline::load(dir)?)
}

fn salm_predictions(model: &TrainedPipeline, corpus: &Corpus) -> Result<Vec<PredictionLine>> {
    let payloads: Vec<_> = corpus.payloads().collect();
    let raws: Vec<&[u8]> = payloads.iter().map(|p| p.text.as_slice()).collect();
    let preds = classify_batch(&raws, &model.payload, &model.prototypes)?;
    Ok(payloads.iter().zip(&preds).map(|(s, p)| retrieval_line(&s.id, p)).collect())
}

pub fn classify(mut run: Run, input: &Path, model_dir: Option<&Path>, out: Option<&Path>) -> Result<()> {
    if !input.exists() {
        bail!("input {} does not exist", input.display());
    }
    let model_dir = model_dir.map(Path::to_path_buf).unwrap_or_else(|| run.model_dir());
    let model = load_model(&model_dir)?;
    run.manifest.input(input)?;
    let mut options = run.config.load_options()?;
    options.classes = merged_classes(&options.classes, &model.prototypes);
    let loaded = load_corpus(input, CorpusFormat::from_path(input), &options)?;
    for r in &loaded.rejections {
        log::warn!("input record {} rejected: {}", r.index, r.reason);
    }
    let lines = salm_predictions(&model, &loaded.corpus)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.out.join("predictions").join("classify.jsonl"));
    write_predictions(&path, &lines)?;
    run.manifest.artifact(&path)?;
    eprintln!("{} predictions written to {}", lines.len(), path.display());
    run.finish()
}

/// Input class table extended with classes known only to the prototype set
/// (zero-shot additions).
fn merged_classes(base: &[salm::corpus::VulnClass], prototypes: &PrototypeSet) -> Vec<salm::corpus::VulnClass> {
    let mut classes = base.to_vec();
    for p in &prototypes.entries {
        if !classes.iter().any(|c| c.id == p.class_id) && classes.len() + 1 == p.class_id.0 as usize {
            classes.push(salm::corpus::VulnClass {
                id: p.class_id,
                name: p.name.clone(),
                generic_label: p.label.clone(),
            });
        }
    }
    classes
}

fn report_for(
    method: &str,
    test: &Corpus,
    predicted: &HashMap<&str, ClassId>,
) -> Result<EvalReport> {
    let payloads: Vec<_> = test.payloads().collect();
    if payloads.is_empty() {
        bail!("the test split holds no payloads");
    }
    let mut truths = Vec::with_capacity(payloads.len());
    let mut preds = Vec::with_capacity(payloads.len());
    for p in &payloads {
        let guess = predicted
            .get(p.id.as_str())
            .ok_or_else(|| anyhow!("no prediction for test payload {}", p.id))?;
        truths.push(p.class_id);
        preds.push(*guess);
    }
    if predicted.len() != payloads.len() {
        let test_ids: HashSet<&str> = payloads.iter().map(|p| p.id.as_str()).collect();
        let extra = predicted.keys().find(|k| !test_ids.contains(*k)).copied().unwrap_or("?");
        bail!("prediction for {extra}, which is not a test payload");
    }
    Ok(compute_metrics(&truths, &preds, test.classes().len())?.labeled(method, "test"))
}

fn write_report(run: &mut Run, report: &EvalReport) -> Result<()> {
    let path = run.out.join("reports").join(format!("{}.json", report.method));
    write_atomic(&path, report.to_json()?.as_bytes())?;
    run.manifest.artifact(&path)?;
    eprintln!(
        "{}: accuracy {:.1}%, macro F1 {:.1}% over {} payloads",
        report.method,
        report.accuracy * 100.0,
        report.macro_f1 * 100.0,
        report.samples
    );
    Ok(())
}

/// Rebuilds the comparison tables from every report in the output directory.
fn refresh_comparison(run: &mut Run, classes: &[(ClassId, String)]) -> Result<()> {
    let dir = run.out.join("reports");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let reports: Vec<EvalReport> = paths
        .iter()
        .map(|p| Ok(serde_json::from_slice(&fs::read(p)?)?))
        .collect::<Result<_>>()?;
    // Method order: the designated method first, then alphabetical.
    let mut reports = reports;
    reports.sort_by_key(|r| (r.method != DESIGNATED_METHOD, r.method.clone()));
    if reports.len() < 2 || reports[0].method != DESIGNATED_METHOD {
        return Ok(());
    }
    let table = compare_methods(&reports, DESIGNATED_METHOD)?;
    let cmp = run.out.join("comparison");
    for (name, body) in [
        ("table.csv", table.to_csv()?),
        ("table.json", table.to_json()?),
        ("per_class_f1.csv", per_class_table(&reports, classes)?),
    ] {
        let path = cmp.join(name);
        write_atomic(&path, body.as_bytes())?;
        run.manifest.artifact(&path)?;
    }
    Ok(())
}

fn class_names(corpus: &Corpus) -> Vec<(ClassId, String)> {
    corpus.classes().iter().map(|c| (c.id, c.name.clone())).collect()
}

pub fn evaluate(mut run: Run, predictions: Option<&Path>, method: &str) -> Result<()> {
    let corpus = run.load_dataset()?;
    let (_, test) = run.split(&corpus)?;
    let lines = match predictions {
        Some(p) => {
            run.manifest.input(p)?;
            read_predictions(p)?
        }
        None => {
            let model_dir = run.model_dir();
            let model = load_model(&model_dir)?;
            let lines = salm_predictions(&model, &test)?;
            let path = run.out.join("predictions").join(format!("{method}.jsonl"));
            write_predictions(&path, &lines)?;
            run.manifest.artifact(&path)?;
            lines
        }
    };
    let mut seen = HashSet::new();
    if let Some(l) = lines.iter().find(|l| !seen.insert(l.id.as_str())) {
        bail!("sample {} is predicted twice", l.id);
    }
    let predicted: HashMap<&str, ClassId> = lines.iter().map(|l| (l.id.as_str(), l.class_id)).collect();
    let report = report_for(method, &test, &predicted)?;
    write_report(&mut run, &report)?;
    refresh_comparison(&mut run, &class_names(&corpus))?;
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineMethod {
    TfidfRf,
    Supervised,
    Knn,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::TfidfRf => "tfidf-rf",
            BaselineMethod::Supervised => "supervised",
            BaselineMethod::Knn => "knn",
        }
    }
}

pub fn baseline(mut run: Run, method: BaselineMethod) -> Result<()> {
    let corpus = run.load_dataset()?;
    let (train_set, test) = run.split(&corpus)?;
    let cfg = run.config.clone();
    let dir = run.out.join("baselines");
    fs::create_dir_all(&dir)?;
    let test_payloads: Vec<_> = test.payloads().collect();
    let raws: Vec<&[u8]> = test_payloads.iter().map(|p| p.text.as_slice()).collect();
    run.manifest.phase("train");
    let preds: Vec<ClassId> = match method {
        BaselineMethod::TfidfRf => {
            run.manifest.seed("forest", cfg.baselines.forest_seed);
            let model = TfidfForest::train(&train_set, cfg.baselines.tfidf, cfg.baselines.forest, cfg.baselines.forest_seed)?;
            let path = dir.join("tfidf-rf.json");
            model.save(&path)?;
            run.manifest.artifact(&path)?;
            run.manifest.phase("predict");
            model.predict(&raws)?
        }
        BaselineMethod::Supervised => {
            run.manifest.seed("supervised", cfg.baselines.supervised.seed);
            run.manifest.seed("payload_init", cfg.model.payload_seed);
            let encoder = salm::nn::Encoder::new(cfg.model.payload_encoder_config())?;
            let (model, outcome) =
                SupervisedBaseline::train(&train_set, cfg.model.payload_featurizer, encoder, &cfg.baselines.supervised)?;
            let path = dir.join("supervised.json");
            model.save(&path)?;
            let hist = dir.join("history_supervised.csv");
            write_history_csv(&outcome.history, &hist)?;
            run.manifest.artifact(&path)?;
            run.manifest.artifact(&hist)?;
            run.manifest.phase("predict");
            model.predict(&raws)?
        }
        BaselineMethod::Knn => {
            run.manifest.seed("payload_init", cfg.model.payload_seed);
            run.manifest.seed("hnsw", cfg.baselines.hnsw.seed);
            let encoder = salm::nn::Encoder::new(cfg.model.payload_encoder_config())?;
            let ckpt: Checkpoint = untrained_checkpoint(encoder, cfg.model.payload_featurizer);
            let model = KnnBaseline::build(&train_set, ckpt, cfg.baselines.knn_k, cfg.baselines.hnsw)?;
            let path = dir.join("knn");
            model.save(&path)?;
            for f in ["encoder.ckpt", "index.hnsw", "k.txt"] {
                run.manifest.artifact(&path.join(f))?;
            }
            run.manifest.phase("predict");
            model.predict(&raws)?
        }
    };
    let lines: Vec<PredictionLine> = test_payloads
        .iter()
        .zip(&preds)
        .map(|(s, &c)| PredictionLine {
            id: s.id.clone(),
            class_id: c,
            class: corpus.class(c).map(|k| k.name.clone()).unwrap_or_default(),
            distance: None,
            ranking: Vec::new(),
        })
        .collect();
    let path = run.out.join("predictions").join(format!("{}.jsonl", method.name()));
    write_predictions(&path, &lines)?;
    run.manifest.artifact(&path)?;
    let predicted: HashMap<&str, ClassId> = lines.iter().map(|l| (l.id.as_str(), l.class_id)).collect();
    let report = report_for(method.name(), &test, &predicted)?;
    write_report(&mut run, &report)?;
    refresh_comparison(&mut run, &class_names(&corpus))?;
    run.finish()
}

pub fn project(mut run: Run, embeddings: Option<&Path>, all: bool) -> Result<()> {
    let model_dir = run.model_dir();
    let model = load_model(&model_dir)?;
    let emb_path = match embeddings {
        Some(p) => {
            if !p.exists() {
                bail!("embedding file {} does not exist", p.display());
            }
            run.manifest.input(p)?;
            p.to_path_buf()
        }
        None => {
            let corpus = run.load_dataset()?;
            let part = if all { corpus } else { run.split(&corpus)?.1 };
            let path = run.out.join("projection").join("embeddings.csv");
            fs::create_dir_all(path.parent().expect("has parent"))?;
            export_embeddings(&model, &part, &path)?;
            run.manifest.artifact(&path)?;
            path
        }
    };
    let out = run.out.join("projection").join("pca.csv");
    let rows = project_file(&emb_path, &out, Some(&model.prototypes))?;
    run.manifest.artifact(&out)?;
    eprintln!("{} projected rows written to {}", rows.len(), out.display());
    run.finish()
}

pub struct TemplateArgs<'a> {
    pub samples_per_class: usize,
    pub seed: u64,
    pub classes: &'a [String],
    pub out: &'a Path,
}

/// Writes the template fixture. A `.jsonl` target receives the full corpus
/// (descriptions, dates, threat links); anything else receives the payload
/// records as a JSON array. The class table is written alongside.
pub fn synth_template(args: TemplateArgs<'_>) -> Result<()> {
    let mut spec = GenSpec::new(args.samples_per_class, args.seed);
    if !args.classes.is_empty() {
        let names: Vec<&str> = args.classes.iter().map(String::as_str).collect();
        spec = spec.with_classes(&names)?;
    }
    let corpus = generate_template_corpus(&spec)?;
    let root = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(if root.as_os_str().is_empty() { Path::new(".") } else { &root })?;
    let mut manifest = ManifestBuilder::new("synthgen", crate::manifest::sha256_hex(format!("{spec:?}").as_bytes()), &root);
    manifest.seed("template", args.seed);
    let format = CorpusFormat::from_path(args.out);
    let written = match format {
        CorpusFormat::Jsonl => {
            save_jsonl(&corpus, args.out)?;
            corpus.len()
        }
        CorpusFormat::JsonArray => {
            let records = to_records(&corpus);
            write_records(&records, args.out)?;
            records.len()
        }
    };
    // Load-back check against the generated class table.
    let options = salm::corpus::LoadOptions {
        classes: corpus.classes().to_vec(),
        strict: true,
        ..Default::default()
    };
    let back = load_corpus(args.out, format, &options)?;
    if !back.rejections.is_empty() {
        bail!("{} generated record(s) failed to load back", back.rejections.len());
    }
    manifest.artifact(args.out)?;
    let table = classes_sidecar(args.out);
    write_atomic(&table, &serde_json::to_vec_pretty(corpus.classes())?)?;
    manifest.artifact(&table)?;
    manifest.finish()?;
    eprintln!("{written} records written to {}", args.out.display());
    Ok(())
}

/// `data/fixture.jsonl` -> `data/fixture.classes.json`.
pub fn classes_sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.classes.json"))
}

pub struct LlmArgs<'a> {
    pub config: Option<&'a Path>,
    pub class: &'a str,
    pub ioc_files: &'a [String],
    pub samples: usize,
    pub prompts: usize,
    pub out: &'a Path,
}

pub fn synth_llm(args: LlmArgs<'_>) -> Result<()> {
    let config: LlmConfig = match args.config {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("cannot read {}", p.display()))?)?,
        None => LlmConfig::default(),
    };
    let transport = std::sync::Arc::new(HttpTransport::new(std::time::Duration::from_secs(config.timeout_secs)));
    let client = LlmClient::from_env(config, transport)?;
    let files: Vec<&str> = args.ioc_files.iter().map(String::as_str).collect();
    let prompt = render_prompt_n(args.class, &files, args.samples);
    let prompts = vec![prompt; args.prompts.max(1)];
    let mut records = Vec::new();
    let mut errors = BTreeMap::new();
    for (i, result) in client.generate_many(&prompts).into_iter().enumerate() {
        match result {
            Ok(g) => {
                for r in &g.rejected {
                    log::warn!("prompt {i}: record {} rejected: {:?}", r.index, r.violations);
                }
                records.extend(g.samples);
            }
            Err(e) => {
                errors.insert(i, e.to_string());
            }
        }
    }
    for (i, e) in &errors {
        log::error!("prompt {i} failed: {e}");
    }
    if records.is_empty() {
        bail!("no samples were generated");
    }
    let dups = find_duplicates(&records);
    let drop: HashSet<usize> = dups.iter().map(|d| d.1).collect();
    if !drop.is_empty() {
        log::warn!("{} duplicate payload(s) dropped", drop.len());
    }
    let records: Vec<_> = records
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, r)| r)
        .collect();
    write_records(&records, args.out)?;
    eprintln!("{} samples written to {}", records.len(), args.out.display());
    if !errors.is_empty() {
        bail!("{} of {} prompt(s) failed", errors.len(), prompts.len());
    }
    Ok(())
}
