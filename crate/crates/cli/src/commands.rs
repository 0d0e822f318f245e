use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use moralchain::corpus::{emit_corpus, validate_corpus, EmitMeta};
use moralchain::dataset::{
    compute_stats, filter_full_agreement, ingest, read_records_jsonl, shuffled_order, synthetic_dataset,
    write_records_csv, write_records_jsonl, ColumnSchema, DatasetStats, IngestOutput, MicRecord,
};
use moralchain::evalkit::{
    best_of_seeds, fmt3, parse_prediction, pooled_perplexity, render_report, render_table, CellKey,
    EvalReport, Layout, Prediction, RawPrediction,
};
use moralchain::intervene::{run_batch, summarize, write_outcomes_jsonl, InterventionSummary};
use moralchain::prompts::{build_input, render};
use moralchain::teacher::stub::{StubCell, StubModel, StubTeacher};
use moralchain::teacher::{generate_chain, ScoreRequest, TeacherError};
use moralchain::{
    CompletionClient, Endpoint, EndpointConfig, HttpEndpoint, InferenceChain, ResponseCache, Setting,
    TaskKind,
};
use serde::{Deserialize, Serialize};

use crate::config::Loaded;
use crate::manifest::{read_json, read_jsonl, write_json, write_jsonl, Tracker};

pub struct Ctx {
    pub cfg: Loaded,
    pub stub: bool,
    pub command: String,
    pub args: Vec<String>,
}

/// One grid cell: the model fine-tuned on `task`/`setting` with `size`
/// records and sampling seed `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub task: TaskKind,
    pub setting: Setting,
    pub size: usize,
    pub seed: u64,
}

impl Cell {
    fn stem(&self) -> String {
        format!("{}_{}_{}_s{}", self.task.name(), self.setting.name(), self.size, self.seed)
    }

    fn key(&self, model: &str) -> CellKey {
        CellKey { model: model.to_string(), task: self.task, setting: self.setting, size: self.size }
    }
}

/// Optional narrowing of the configured grid from the command line.
#[derive(Debug, Clone, Default)]
pub struct CellFilter {
    pub task: Option<TaskKind>,
    pub setting: Option<Setting>,
    pub size: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainFailure {
    id: String,
    reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainLine {
    id: String,
    #[serde(flatten)]
    chain: InferenceChain,
}

#[derive(Debug, Serialize, Deserialize)]
struct InterventionFile {
    model: String,
    size: usize,
    seed: u64,
    summary: InterventionSummary,
}

impl Ctx {
    fn out(&self, sub: &str) -> PathBuf {
        self.cfg.out_dir().join(sub)
    }

    fn tracker(&self) -> Tracker {
        Tracker::new(&self.cfg.base, &self.command, self.args.clone(), &self.cfg.digest, self.stub)
    }

    fn cells(&self, f: &CellFilter) -> Vec<Cell> {
        let g = &self.cfg.config.grid;
        let mut out = Vec::new();
        let tasks = f.task.map(|t| vec![t]).unwrap_or_else(|| g.tasks.clone());
        let settings = f.setting.map(|s| vec![s]).unwrap_or_else(|| g.settings.clone());
        let sizes = f.size.map(|s| vec![s]).unwrap_or_else(|| g.sizes.clone());
        let seeds = f.seed.map(|s| vec![s]).unwrap_or_else(|| g.seeds.clone());
        for &task in &tasks {
            for &setting in &settings {
                for &size in &sizes {
                    for &seed in &seeds {
                        out.push(Cell { task, setting, size, seed });
                    }
                }
            }
        }
        out
    }

    fn train_path(&self) -> PathBuf {
        self.out("data").join("train.jsonl")
    }

    fn eval_path(&self) -> PathBuf {
        self.out("data").join("eval.jsonl")
    }

    fn load_split(&self, path: &Path, tracker: &mut Tracker) -> Result<Vec<MicRecord>> {
        if !path.exists() {
            bail!("{} not found; run `ingest` first", path.display());
        }
        tracker.input(path)?;
        Ok(read_records_jsonl(path)?)
    }

    fn teacher_client(&self) -> Result<CompletionClient> {
        let endpoint: Arc<dyn Endpoint> = if self.stub {
            Arc::new(StubTeacher)
        } else {
            let cfg =
                self.cfg.config.teacher.clone().ok_or_else(|| anyhow!("no [teacher] endpoint configured"))?;
            Arc::new(HttpEndpoint::new(cfg))
        };
        self.client(endpoint, "teacher")
    }

    fn model_client(&self, cell: Cell, situations: &[MicRecord]) -> Result<CompletionClient> {
        let endpoint: Arc<dyn Endpoint> = if self.stub {
            let c = StubCell { task: cell.task, setting: cell.setting, size: cell.size, seed: cell.seed };
            Arc::new(StubModel::new(situations, c))
        } else {
            let base =
                self.cfg.config.model.clone().ok_or_else(|| anyhow!("no [model] endpoint configured"))?;
            let (size, seed) = (cell.size.to_string(), cell.seed.to_string());
            let model = render(
                &base.model,
                &[
                    ("task", cell.task.name()),
                    ("setting", cell.setting.name()),
                    ("size", &size),
                    ("seed", &seed),
                ],
            );
            Arc::new(HttpEndpoint::new(EndpointConfig { model, ..base }))
        };
        self.client(endpoint, "model")
    }

    fn client(&self, endpoint: Arc<dyn Endpoint>, sub: &str) -> Result<CompletionClient> {
        let cache = ResponseCache::on_disk(self.cfg.cache_dir().join(sub))?;
        Ok(CompletionClient::new(endpoint, cache, self.cfg.config.client.clone()))
    }
}

pub fn ingest_cmd(ctx: &Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.config;
    let mut tracker = ctx.tracker();
    let schema = match &c.dataset.schema {
        Some(p) => {
            let p = ctx.cfg.resolve(p);
            tracker.input(&p)?;
            ColumnSchema::from_toml_file(&p)?
        }
        None => ColumnSchema::default(),
    };
    let dir = ctx.out("data");
    fs::create_dir_all(&dir)?;

    let mut warnings = Vec::new();
    let mut read = |path: &Path, tracker: &mut Tracker| -> Result<(Vec<MicRecord>, IngestOutput)> {
        tracker.input(path)?;
        let out = ingest(path, &schema)?;
        for w in &out.warnings {
            warn!("{}: {w}", path.display());
            warnings.push(format!("{}: {w}", path.display()));
        }
        Ok((filter_full_agreement(&out.records), out))
    };

    let (train, main) = read(&ctx.cfg.resolve(&c.dataset.path), &mut tracker)?;
    let rejects_path = dir.join("rejects.jsonl");
    let mut rejects = Vec::new();
    main.write_rejects(&mut rejects)?;
    fs::write(&rejects_path, rejects)?;
    tracker.output(&rejects_path)?;
    let eval = match &c.dataset.eval_path {
        Some(p) => read(&ctx.cfg.resolve(p), &mut tracker)?.0,
        None => train.clone(),
    };
    let (parsed, rejected) = (main.records.len(), main.rejects.len());
    for (path, records) in [(ctx.train_path(), &train), (ctx.eval_path(), &eval)] {
        let mut buf = Vec::new();
        write_records_jsonl(records, &mut buf)?;
        fs::write(&path, buf)?;
        tracker.output(&path)?;
    }
    let stats = compute_stats(&train);
    let stats_path = dir.join("stats.json");
    write_json(&stats_path, &stats)?;
    tracker.output(&stats_path)?;
    tracker.finish(&dir)?;
    info!("ingested {parsed} rows, {rejected} rejected, {} kept", train.len());
    Ok(serde_json::json!({
        "rows_parsed": parsed,
        "rows_rejected": rejected,
        "train_records": train.len(),
        "eval_records": eval.len(),
        "warnings": warnings,
    }))
}

fn chains_path(ctx: &Ctx, task: TaskKind) -> PathBuf {
    ctx.out("chains").join(format!("{}.jsonl", task.name()))
}

fn failed_path(ctx: &Ctx, task: TaskKind) -> PathBuf {
    ctx.out("chains").join(format!("{}.failed.jsonl", task.name()))
}

/// Generates chains for every task in the grid, walking each seed's
/// sampling order until the largest grid size has a chain.
pub fn gen_chains_cmd(ctx: &Ctx, task: Option<TaskKind>) -> Result<serde_json::Value> {
    let mut tracker = ctx.tracker();
    let train = ctx.load_split(&ctx.train_path(), &mut tracker)?;
    let client = ctx.teacher_client()?;
    let g = &ctx.cfg.config.grid;
    let needed = g.sizes.iter().copied().max().unwrap_or(0).min(train.len());
    let tasks = task.map(|t| vec![t]).unwrap_or_else(|| g.tasks.clone());
    let mut summary = BTreeMap::new();

    for task in tasks {
        let mut done: BTreeMap<String, Result<InferenceChain, String>> = BTreeMap::new();
        for &seed in &g.seeds {
            let order = shuffled_order(train.len(), seed);
            let (mut pos, mut ok) = (0, 0);
            loop {
                while pos < order.len() && ok < needed {
                    match done.get(&train[order[pos]].id) {
                        Some(res) => {
                            ok += usize::from(res.is_ok());
                            pos += 1;
                        }
                        None => break,
                    }
                }
                if ok >= needed || pos >= order.len() {
                    break;
                }
                let batch: Vec<&MicRecord> = order[pos..]
                    .iter()
                    .map(|&i| &train[i])
                    .filter(|r| !done.contains_key(&r.id))
                    .take(needed - ok)
                    .collect();
                let params = ctx.cfg.config.decoding.clone();
                let results = client.map_bounded(&batch, |r| {
                    generate_chain(&client, r, task, ctx.cfg.config.max_regens, &params)
                });
                for (r, res) in batch.iter().zip(results) {
                    let entry = match res {
                        Ok(chain) => Ok(chain),
                        Err(TeacherError::ChainGenerationFailed { reason, .. }) => Err(reason),
                        Err(e) => return Err(e).with_context(|| format!("chain generation for {}", r.id)),
                    };
                    done.insert(r.id.clone(), entry);
                }
            }
        }
        let chains: Vec<ChainLine> = done
            .iter()
            .filter_map(|(id, r)| r.as_ref().ok().map(|c| ChainLine { id: id.clone(), chain: c.clone() }))
            .collect();
        let failures: Vec<ChainFailure> = done
            .iter()
            .filter_map(|(id, r)| {
                r.as_ref().err().map(|e| ChainFailure { id: id.clone(), reason: e.clone() })
            })
            .collect();
        write_jsonl(&chains_path(ctx, task), &chains)?;
        write_jsonl(&failed_path(ctx, task), &failures)?;
        tracker.output(&chains_path(ctx, task))?;
        tracker.output(&failed_path(ctx, task))?;
        summary.insert(task.name(), serde_json::json!({"chains": chains.len(), "failed": failures.len()}));
    }
    tracker.finish(&ctx.out("chains"))?;
    Ok(serde_json::json!({ "tasks": summary, "network_calls": client.network_calls() }))
}

pub fn emit_corpus_cmd(ctx: &Ctx, filter: &CellFilter) -> Result<serde_json::Value> {
    let mut tracker = ctx.tracker();
    let train = ctx.load_split(&ctx.train_path(), &mut tracker)?;
    let dir = ctx.out("corpus");
    let mut chain_cache: HashMap<TaskKind, ChainSet> = HashMap::new();
    let mut emitted = Vec::new();

    for cell in ctx.cells(filter) {
        let (chains, failed) = if cell.setting == Setting::Ours {
            let (c, f) = match chain_cache.entry(cell.task) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(load_chains(ctx, cell.task, &mut tracker)?),
            };
            (c.clone(), f.clone())
        } else {
            (HashMap::new(), HashSet::new())
        };
        let ordered: Vec<MicRecord> =
            shuffled_order(train.len(), cell.seed).into_iter().map(|i| train[i].clone()).collect();
        let sel = moralchain::corpus::select_records(&ordered, cell.size, cell.setting, &failed);
        let path = dir.join(format!("{}.jsonl", cell.stem()));
        let meta = EmitMeta { size_requested: Some(cell.size), seed: cell.seed, skipped: sel.skipped.len() };
        let manifest = emit_corpus(&sel.records, cell.task, cell.setting, &chains, &path, meta)?;
        let report = validate_corpus(&path)?;
        if report.failure_count() > 0 {
            bail!("corpus {} failed validation: {:?}", path.display(), report.counts());
        }
        tracker.output(&path)?;
        tracker.output(&moralchain::corpus::manifest_path(&path))?;
        emitted.push(serde_json::json!({
            "corpus": path.file_name().unwrap().to_string_lossy(),
            "records": manifest.size_emitted,
            "digest": manifest.digest,
        }));
    }
    tracker.finish(&dir)?;
    Ok(serde_json::json!({ "emitted": emitted }))
}

type ChainSet = (HashMap<String, InferenceChain>, HashSet<String>);

fn load_chains(ctx: &Ctx, task: TaskKind, tracker: &mut Tracker) -> Result<ChainSet> {
    let cp = chains_path(ctx, task);
    let fp = failed_path(ctx, task);
    if !cp.exists() {
        bail!("{} not found; run `gen-chains` first", cp.display());
    }
    tracker.input(&cp)?;
    let chains: Vec<ChainLine> = read_jsonl(&cp)?;
    let failed: Vec<ChainFailure> = if fp.exists() {
        tracker.input(&fp)?;
        read_jsonl(&fp)?
    } else {
        Vec::new()
    };
    Ok((chains.into_iter().map(|c| (c.id, c.chain)).collect(), failed.into_iter().map(|f| f.id).collect()))
}

fn training_stats(ctx: &Ctx, tracker: &mut Tracker) -> Result<DatasetStats> {
    let p = ctx.out("data").join("stats.json");
    tracker.input(&p)?;
    read_json(&p)
}

fn write_report(
    ctx: &Ctx,
    tracker: &mut Tracker,
    cell: Cell,
    report: &EvalReport,
    preds: &[Prediction],
) -> Result<()> {
    let dir = ctx.out("eval");
    let rp = dir.join(format!("{}.report.json", cell.stem()));
    let pp = dir.join(format!("{}.predictions.jsonl", cell.stem()));
    write_json(&rp, report)?;
    write_jsonl(&pp, preds)?;
    tracker.output(&rp)?;
    tracker.output(&pp)
}

/// Scores a predictions file for one cell, or queries the model endpoint
/// for every configured cell when no file is given.
pub fn eval_cmd(ctx: &Ctx, filter: &CellFilter, predictions: Option<&Path>) -> Result<serde_json::Value> {
    let mut tracker = ctx.tracker();
    let golds = ctx.load_split(&ctx.eval_path(), &mut tracker)?;
    let stats = training_stats(ctx, &mut tracker)?;
    let label = ctx.cfg.config.model_label.clone();
    let mode = ctx.cfg.config.eval.scoring;
    let mut summary = Vec::new();

    let cells = match predictions {
        Some(_) => {
            let g = &ctx.cfg.config.grid;
            let task = filter.task.ok_or_else(|| anyhow!("--task is required with --predictions"))?;
            let setting =
                filter.setting.ok_or_else(|| anyhow!("--setting is required with --predictions"))?;
            vec![Cell {
                task,
                setting,
                size: filter.size.unwrap_or(g.sizes[0]),
                seed: filter.seed.unwrap_or(g.seeds[0]),
            }]
        }
        None => ctx.cells(filter),
    };
    for cell in cells {
        let preds: Vec<Prediction> = match predictions {
            Some(path) => {
                tracker.input(path)?;
                read_jsonl::<RawPrediction>(path)?
                    .iter()
                    .map(|p| parse_prediction(&p.id, &p.raw, cell.task))
                    .collect()
            }
            None => {
                let client = ctx.model_client(cell, &golds)?;
                let reqs: Vec<_> = golds
                    .iter()
                    .map(|r| {
                        client
                            .request(build_input(r, cell.task, cell.setting), ctx.cfg.config.decoding.clone())
                    })
                    .collect();
                let outs = client.complete_many(&reqs);
                golds
                    .iter()
                    .zip(outs)
                    .map(|(r, out)| {
                        out.map(|raw| parse_prediction(&r.id, &raw, cell.task))
                            .with_context(|| format!("{}: completing {}", cell.stem(), r.id))
                    })
                    .collect::<Result<_>>()?
            }
        };
        let report = EvalReport::evaluate(cell.key(&label), cell.seed, &preds, &golds, Some(&stats), mode)?;
        write_report(ctx, &mut tracker, cell, &report, &preds)?;
        summary.push(serde_json::json!({
            "cell": cell.stem(),
            "headline": report.headline(),
            "unparsable": report.unparsable,
        }));
    }
    tracker.finish(&ctx.out("eval"))?;
    Ok(serde_json::json!({ "reports": summary }))
}

/// Ground-truth intervention with the joint-task `ours` model of every
/// configured size and seed.
pub fn intervene_cmd(ctx: &Ctx, filter: &CellFilter) -> Result<serde_json::Value> {
    let mut tracker = ctx.tracker();
    let golds = ctx.load_split(&ctx.eval_path(), &mut tracker)?;
    let dir = ctx.out("intervene");
    let f = CellFilter { task: Some(TaskKind::Joint), setting: Some(Setting::Ours), ..filter.clone() };
    let mut out = Vec::new();
    for cell in ctx.cells(&f) {
        let client = ctx.model_client(cell, &golds)?;
        let (outcomes, failed) = run_batch(&client, &golds, &ctx.cfg.config.decoding);
        for (id, e) in &failed {
            warn!("{}: {id}: {e}", cell.stem());
        }
        if outcomes.is_empty() && !golds.is_empty() {
            bail!("{}: every intervention failed", cell.stem());
        }
        let summary = summarize(&outcomes, &golds, failed.len());
        let log = dir.join(format!("{}.outcomes.jsonl", cell.stem()));
        let sp = dir.join(format!("{}.summary.json", cell.stem()));
        fs::create_dir_all(&dir)?;
        write_outcomes_jsonl(&log, &outcomes)?;
        let file = InterventionFile {
            model: ctx.cfg.config.model_label.clone(),
            size: cell.size,
            seed: cell.seed,
            summary: summary.clone(),
        };
        write_json(&sp, &file)?;
        tracker.output(&log)?;
        tracker.output(&sp)?;
        out.push(serde_json::json!({ "cell": cell.stem(), "summary": summary }));
    }
    tracker.finish(&dir)?;
    Ok(serde_json::json!({ "interventions": out }))
}

fn ppl_texts(ctx: &Ctx, tracker: &mut Tracker, golds: &[MicRecord]) -> Result<Vec<String>> {
    let files = &ctx.cfg.config.ppl.texts;
    if files.is_empty() {
        return Ok(golds.iter().map(|r| format!("{} {}", r.prompt, r.reply)).collect());
    }
    let mut texts = Vec::new();
    for f in files {
        let p = ctx.cfg.resolve(f);
        tracker.input(&p)?;
        let body = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        texts.extend(body.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
    }
    Ok(texts)
}

pub fn ppl_cmd(ctx: &Ctx, filter: &CellFilter, text: Option<&str>) -> Result<serde_json::Value> {
    let mut tracker = ctx.tracker();
    let golds = ctx.load_split(&ctx.eval_path(), &mut tracker)?;
    let texts = match text {
        Some(t) => vec![t.to_string()],
        None => ppl_texts(ctx, &mut tracker, &golds)?,
    };
    let (window, stride) = (ctx.cfg.config.ppl.window, ctx.cfg.config.ppl.stride);
    let dir = ctx.out("ppl");
    let mut out = Vec::new();
    for cell in ctx.cells(filter) {
        let client = ctx.model_client(cell, &golds)?;
        let scored =
            client.map_bounded(&texts, |t| client.score(&ScoreRequest { text: t.clone(), window, stride }));
        let scored = scored.into_iter().collect::<Result<Vec<Vec<f64>>, _>>()?;
        let value = pooled_perplexity(scored.iter().map(Vec::as_slice))?;
        let report = EvalReport {
            cell: cell.key(&ctx.cfg.config.model_label),
            seed: cell.seed,
            n_items: texts.len(),
            unparsable: 0,
            mfc: None,
            judgment_accuracy: None,
            foundation_wise: None,
            perplexity: Some(value),
            seeds: vec![cell.seed],
            aggregation: "single".into(),
        };
        let p = dir.join(format!("{}.ppl.json", cell.stem()));
        write_json(&p, &report)?;
        tracker.output(&p)?;
        out.push(serde_json::json!({ "cell": cell.stem(), "perplexity": value }));
    }
    tracker.finish(&dir)?;
    Ok(serde_json::json!({ "perplexity": out }))
}

fn read_dir_sorted(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    paths.sort();
    Ok(paths)
}

fn group_best(reports: Vec<EvalReport>) -> Result<Vec<EvalReport>> {
    let mut groups: Vec<(CellKey, Vec<EvalReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|(k, _)| *k == r.cell) {
            Some((_, v)) => v.push(r),
            None => groups.push((r.cell.clone(), vec![r])),
        }
    }
    groups.into_iter().map(|(_, v)| best_of_seeds(&v).map_err(Into::into)).collect()
}

/// Aggregates evaluation, perplexity and intervention results into tables
/// (`.txt`) and full-precision CSVs.
pub fn report_cmd(ctx: &Ctx) -> Result<serde_json::Value> {
    let mut tracker = ctx.tracker();
    let mut evals = Vec::new();
    for p in read_dir_sorted(&ctx.out("eval"), ".report.json")? {
        tracker.input(&p)?;
        evals.push(read_json::<EvalReport>(&p)?);
    }
    let best = group_best(evals)?;

    // Perplexity of the seed picked for accuracy, else of the lowest seed.
    let mut ppl_by_cell: BTreeMap<String, Vec<EvalReport>> = BTreeMap::new();
    for p in read_dir_sorted(&ctx.out("ppl"), ".ppl.json")? {
        tracker.input(&p)?;
        let r: EvalReport = read_json(&p)?;
        ppl_by_cell.entry(format!("{:?}", r.cell)).or_default().push(r);
    }
    let mut ppl = Vec::new();
    for (_, mut v) in ppl_by_cell {
        v.sort_by_key(|r| r.seed);
        let seeds: Vec<u64> = v.iter().map(|r| r.seed).collect();
        let chosen = best.iter().find(|b| b.cell == v[0].cell).map(|b| b.seed);
        let mut pick = v.iter().find(|r| Some(r.seed) == chosen).unwrap_or(&v[0]).clone();
        pick.seeds = seeds;
        pick.aggregation = if chosen.is_some() { "accuracy-selected seed" } else { "lowest seed" }.into();
        ppl.push(pick);
    }

    let dir = ctx.out("report");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let layouts = [
        ("mfc", Layout::MfcTable, &best),
        ("judgment", Layout::JudgmentTable, &best),
        ("judgment_vs_joint", Layout::JudgmentVsJoint, &best),
        ("foundation_wise", Layout::FoundationWise, &best),
        ("perplexity", Layout::Perplexity, &ppl),
    ];
    for (name, layout, reports) in layouts {
        let r = render_report(reports, layout);
        for (ext, body) in [("txt", &r.text), ("csv", &r.csv)] {
            let p = dir.join(format!("{name}.{ext}"));
            fs::write(&p, body)?;
            tracker.output(&p)?;
            written.push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }

    let mut rows = Vec::new();
    for p in read_dir_sorted(&ctx.out("intervene"), ".summary.json")? {
        tracker.input(&p)?;
        rows.push(read_json::<InterventionFile>(&p)?);
    }
    let header: Vec<String> = ["Model", "Size", "Seed", "N", "Changed", "Original", "Intervened", "Delta"]
        .map(String::from)
        .to_vec();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                r.model.clone(),
                r.size.to_string(),
                r.seed.to_string(),
                s.n.to_string(),
                s.changed.to_string(),
                fmt3(s.original_accuracy),
                fmt3(s.intervened_accuracy),
                fmt3(s.delta),
            ]
        })
        .collect();
    let text = render_table(&header, &table);
    let mut csv = String::from("model,size,seed,n,changed,failed,original,intervened,delta\n");
    for r in &rows {
        let s = &r.summary;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.model,
            r.size,
            r.seed,
            s.n,
            s.changed,
            s.failed,
            s.original_accuracy,
            s.intervened_accuracy,
            s.delta
        ));
    }
    for (ext, body) in [("txt", &text), ("csv", &csv)] {
        let p = dir.join(format!("intervention.{ext}"));
        fs::write(&p, body)?;
        tracker.output(&p)?;
        written.push(p.file_name().unwrap().to_string_lossy().into_owned());
    }
    tracker.finish(&dir)?;
    Ok(serde_json::json!({ "written": written }))
}

/// Writes the synthetic mini-dataset as CSV.
pub fn synth_cmd(n: usize, seed: u64, out: &Path) -> Result<serde_json::Value> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let records = synthetic_dataset(n, seed);
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_records_csv(&records, file)?;
    Ok(serde_json::json!({ "records": n, "path": out }))
}
