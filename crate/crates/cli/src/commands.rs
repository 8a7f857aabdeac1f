use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use annotsvc::{RoundStatus, Service};
use dialsec::annotate::{AnnotationTask, Annotator, SimulatedAnnotator, TaskKind};
use dialsec::bootstrap::{bootstrap_corpus, write_labels, Provenance};
use dialsec::corpus::{generate_synthetic_corpus, ingest_corpus, write_corpus, write_ground_truth, SynthConfig};
use dialsec::metrics::{
    render_sentence_table, render_turn_table, report_metrics, summarize_runs, turn_model_eval, MeanStd, TurnEvalReport,
};
use dialsec::model::{read_model, train_turn_model, write_model, ModelArtifact};
use dialsec::refine::{RefineContext, RoundMetrics, RoundState, RoundStore};
use dialsec::weakrules::{weak_label, TurnLabelDataset};
use dialsec::{seeds, ClusterVerdict, Error, SectionLabel};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{ProjectConfig, FILE_NAME, TEMPLATE};
use crate::error::{CliError, Kind};
use crate::project::{load_gold, open_input, write_json, write_text, write_with, Project};

type Out = Result<Value, CliError>;

pub fn init(dir: &Path, force: bool) -> Out {
    let path = dir.join(FILE_NAME);
    if path.exists() && !force {
        return Err(CliError::data("exists", format!("{} already exists; pass --force to overwrite", path.display())));
    }
    write_text(&path, TEMPLATE)?;
    Ok(json!({ "config": path }))
}

pub fn synth(config: &Path, out: &Path, seed: u64) -> Out {
    let text = std::fs::read_to_string(config).map_err(|e| CliError::input(config, e))?;
    let cfg: SynthConfig = toml::from_str(&text).map_err(|e| CliError::data("config", e.to_string()).context(config))?;
    let (corpus, gold) = generate_synthetic_corpus(&cfg, seed)?;
    let corpus_path = out.join("corpus.jsonl");
    let gold_path = out.join("gold.jsonl");
    write_with(&corpus_path, |w| write_corpus(&corpus, w))?;
    write_with(&gold_path, |w| write_ground_truth(&gold, w))?;
    let distribution: BTreeMap<SectionLabel, f64> = SectionLabel::ALL.into_iter().zip(gold.distribution()).collect();
    let summary = json!({
        "seed": seed,
        "corpus": corpus_path,
        "gold": gold_path,
        "dialogues": corpus.len(),
        "professional_sentences": corpus.professional_sentence_count(),
        "distribution": distribution,
    });
    write_json(&out.join("synth.json"), &json!({ "summary": summary, "config": cfg }))?;
    Ok(summary)
}

pub fn ingest(p: &Project, source: Option<&Path>) -> Out {
    let source = source.map_or_else(|| p.config.corpus.clone(), Path::to_path_buf);
    if !source.exists() {
        return Err(CliError::missing(&source, "corpus to ingest"));
    }
    let corpus = ingest_corpus(&source)?;
    let gold = p.gold(None, &corpus)?;
    write_with(&p.paths.corpus(), |w| write_corpus(&corpus, w))?;
    let turns: usize = corpus.dialogues().iter().map(|d| d.turns.len()).sum();
    let index = json!({
        "source": source,
        "seed": p.seed,
        "dialogues": corpus.len(),
        "turns": turns,
        "professional_turns": corpus.professional_turns().count(),
        "professional_sentences": corpus.professional_sentence_count(),
        "gold_sentences": gold.as_ref().map(|g| g.len()),
    });
    write_json(&p.paths.index(), &index)?;
    Ok(index)
}

#[derive(Deserialize)]
struct VerdictLine {
    task_id: String,
    verdict: ClusterVerdict,
}

/// Verdicts read from a JSONL file. Tasks without one are remembered and
/// answered `Mixed` so the run can finish and list every missing task.
struct FileAnnotator {
    verdicts: BTreeMap<String, ClusterVerdict>,
    missing: Mutex<Vec<AnnotationTask>>,
}

impl FileAnnotator {
    fn load(path: &Path) -> Result<Self, CliError> {
        let mut verdicts = BTreeMap::new();
        for (i, line) in open_input(path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: VerdictLine = serde_json::from_str(&line)
                .map_err(|e| CliError::data("data_error", format!("{}:{}: {e}", path.display(), i + 1)))?;
            verdicts.insert(v.task_id, v.verdict);
        }
        Ok(Self {
            verdicts,
            missing: Mutex::new(Vec::new()),
        })
    }
}

impl Annotator for FileAnnotator {
    fn id(&self) -> &str {
        "verdict-file"
    }

    fn judge(&self, task: &AnnotationTask) -> dialsec::Result<ClusterVerdict> {
        match self.verdicts.get(&task.task_id) {
            Some(&v) => Ok(v),
            None => {
                self.missing.lock().unwrap_or_else(|p| p.into_inner()).push(task.clone());
                Ok(ClusterVerdict::Mixed)
            }
        }
    }
}

fn no_annotator() -> CliError {
    CliError::data(
        "no_annotator",
        "the simulated annotator needs ground truth: pass --gold or set `gold` in the project config",
    )
}

pub fn weak_label_cmd(p: &Project, gold_path: Option<&Path>, verdicts: Option<&Path>) -> Out {
    let corpus = p.corpus()?;
    let provider = p.provider()?;
    let cfg = p.pipeline();
    let gold = match verdicts {
        Some(_) => None,
        None => Some(p.gold(gold_path, &corpus)?.ok_or_else(no_annotator)?),
    };
    let file = verdicts.map(FileAnnotator::load).transpose()?;
    let sim;
    let annotator: &dyn Annotator = match (&file, &gold) {
        (Some(f), _) => f,
        (None, Some(g)) => {
            sim = SimulatedAnnotator::new(g, p.config.annotator.tau);
            &sim
        }
        (None, None) => unreachable!("gold loaded above"),
    };
    let outcome = weak_label::<f32>(&corpus, &provider, annotator, &cfg.weak, seeds::derive(cfg.seed, "weak", 0))?;
    let tasks_path = p.paths.weak_tasks();
    if let Some(file) = &file {
        let missing = std::mem::take(&mut *file.missing.lock().unwrap_or_else(|e| e.into_inner()));
        if !missing.is_empty() {
            // Turn tasks depend on which clusters came back mixed, so they
            // wait until every cluster has a verdict.
            let clusters: Vec<&AnnotationTask> = missing.iter().filter(|t| t.kind == TaskKind::TurnCluster).collect();
            let export: Vec<&AnnotationTask> = if clusters.is_empty() { missing.iter().collect() } else { clusters };
            write_with(&tasks_path, |w| {
                for t in &export {
                    serde_json::to_writer(&mut *w, t)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })?;
            let ids: Vec<&str> = export.iter().map(|t| t.task_id.as_str()).collect();
            return Err(CliError::new(
                Kind::Pending,
                "pending_verdicts",
                format!("{} weak-labeling tasks need verdicts; see {}", ids.len(), tasks_path.display()),
            )
            .with_details(json!({ "tasks_file": tasks_path, "pending_tasks": ids })));
        }
    }
    if tasks_path.exists() {
        std::fs::remove_file(&tasks_path)?;
    }
    write_with(&p.paths.weak_dataset(), |w| outcome.dataset.write_jsonl(w))?;
    write_json(
        &p.paths.weak_outcome(),
        &json!({ "seed": p.seed, "annotator": annotator.id(), "outcome": &outcome }),
    )?;
    let counts: BTreeMap<SectionLabel, usize> = SectionLabel::ALL.into_iter().zip(outcome.dataset.label_counts()).collect();
    Ok(json!({
        "seed": p.seed,
        "turns": outcome.dataset.len(),
        "label_counts": counts,
        "clusters": outcome.clusters.len(),
        "mixed_clusters": outcome.cluster_verdicts.iter().filter(|v| v.is_mixed()).count(),
        "turn_tasks": outcome.turn_tasks.len(),
        "rule_hits": outcome.rule_hits.len(),
    }))
}

pub fn train_turn(p: &Project) -> Out {
    let dataset_path = p.paths.weak_dataset();
    p.require(&dataset_path, "weak-label")?;
    let corpus = p.corpus()?;
    let provider = p.provider()?;
    let cfg = p.pipeline();
    let dataset = TurnLabelDataset::read_jsonl(open_input(&dataset_path)?)?;
    let (model, report) = train_turn_model::<f32>(&dataset, &corpus, &provider, &cfg.turn_train)?;
    let eval = match p.gold(None, &corpus)? {
        Some(g) => Some(turn_model_eval(&model, &corpus, &provider, &g)?),
        None => None,
    };
    let artifact = ModelArtifact::Turn(model);
    write_with(&p.paths.turn_model(), |w| write_model(&artifact, w))?;
    let out = json!({
        "seed": p.seed,
        "examples": dataset.len(),
        "steps": report.steps,
        "epoch_losses": report.epoch_losses,
        "eval": eval,
    });
    write_json(&p.paths.turn_report(), &out)?;
    Ok(out)
}

pub fn bootstrap(p: &Project) -> Out {
    let model_path = p.paths.turn_model();
    p.require(&model_path, "train-turn")?;
    let corpus = p.corpus()?;
    let provider = p.provider()?;
    let cfg = p.pipeline();
    let model = match read_model::<f32, _>(open_input(&model_path)?)? {
        ModelArtifact::Turn(m) => m,
        ModelArtifact::Sentence(_) => {
            return Err(CliError::data("model_kind", format!("{} holds a sentence model", model_path.display())))
        }
    };
    let labels = bootstrap_corpus(&model, &corpus, &provider, &cfg.thresholds)?;
    write_with(&p.paths.bootstrap(), |w| write_labels(&labels, w))?;
    let mut counts: BTreeMap<ClusterVerdict, usize> = BTreeMap::new();
    for l in &labels {
        *counts.entry(l.label).or_default() += 1;
    }
    let gold = p.gold(None, &corpus)?;
    let ctx = RefineContext::<f32>::new(&corpus, &provider, gold.as_ref(), cfg.refine.clone())?;
    let state = ctx.initial_state(labels)?;
    p.store().save_state(&state, cfg.refine.seed)?;
    let out = json!({ "seed": p.seed, "label_counts": counts, "round": round_summary(&state) });
    write_json(&p.paths.bootstrap_report(), &out)?;
    Ok(out)
}

fn round_summary(state: &RoundState<f32>) -> Value {
    json!({
        "round": state.round,
        "labels": state.labels.len(),
        "mixed": state.labels.iter().filter(|l| l.label.is_mixed()).count(),
        "clusters": state.clusters.len(),
        "moved": state.relabel_log.moved(),
        "model_accuracy": state.metrics.as_ref().map(|m| m.model_eval.accuracy),
    })
}

/// Fails unless round `k - 1` is complete.
fn check_previous(store: &RoundStore, k: usize) -> Result<(), CliError> {
    let prev = k - 1;
    if store.is_complete(prev) {
        return Ok(());
    }
    if store.path(prev, RoundStore::CLUSTERS).exists() {
        let mut pending = store.load_pending::<f32>(prev)?;
        pending.apply_log(&store.event_log(prev)?)?;
        let ids = pending.board.pending_clusters();
        let mut err = if ids.is_empty() {
            CliError::new(Kind::Pending, "pending_finalize", "all clusters are judged but the round is not finalized")
        } else {
            CliError::from(Error::PendingVerdicts(ids))
        };
        err.message = format!("round {prev}: {}", err.message);
        return Err(err);
    }
    let step = if prev == 0 { "dialsec bootstrap".to_string() } else { format!("dialsec round run {prev}") };
    Err(Error::RoundOrder(format!("round {prev} has not been run; run `{step}` first")).into())
}

/// Completed state `upto`, rebuilt from the store. Warm starts need the
/// whole chain of models.
fn restore_chain(ctx: &RefineContext<'_, f32>, store: &RoundStore, upto: usize) -> Result<RoundState<f32>, CliError> {
    if !ctx.config.warm_start {
        return Ok(ctx.restore_state(store, upto, None)?);
    }
    let mut prev: Option<RoundState<f32>> = None;
    for k in 0..=upto {
        prev = Some(ctx.restore_state(store, k, prev.as_ref())?);
    }
    Ok(prev.expect("chain starts at round 0"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum AnnotatorMode {
    Simulated,
    Serve,
}

pub fn round_run(p: &Project, k: usize, mode: AnnotatorMode, addr: SocketAddr, gold_path: Option<&Path>) -> Out {
    if k == 0 {
        return Err(CliError::usage("round 0 is written by `dialsec bootstrap`"));
    }
    let store = p.store();
    check_previous(&store, k)?;
    if mode == AnnotatorMode::Serve {
        return serve(p, k, addr, true);
    }
    let corpus = p.corpus()?;
    let provider = p.provider()?;
    let cfg = p.pipeline();
    let gold = p.gold(gold_path, &corpus)?.ok_or_else(no_annotator)?;
    let ctx = RefineContext::<f32>::new(&corpus, &provider, Some(&gold), cfg.refine.clone())?;
    let prev = restore_chain(&ctx, &store, k - 1)?;
    let mut log = store.event_log(k)?;
    let mut pending = ctx.prepare_round(&prev)?;
    store.save_pending(&pending)?;
    let annotator = SimulatedAnnotator::new(&gold, p.config.annotator.tau);
    ctx.collect_verdicts(&mut pending, &annotator, &mut log)?;
    let state = ctx.finalize_round(pending, &prev, Provenance::Propagated)?;
    store.save_state(&state, cfg.refine.seed)?;
    Ok(round_summary(&state))
}

/// Serves round `k`, training and saving the next state when annotators
/// finalize it. With `until_finalized` the call returns after that.
pub fn serve(p: &Project, k: usize, addr: SocketAddr, until_finalized: bool) -> Out {
    let store = p.store();
    let corpus = Arc::new(p.corpus()?);
    let provider = p.provider()?;
    let cfg = p.pipeline();
    let gold = p.gold(None, &corpus)?;
    let ctx = RefineContext::<f32>::new(&corpus, &provider, gold.as_ref(), cfg.refine.clone())?;
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
    let svc = Service::open(corpus.clone(), store.clone(), p.config.service.clone())?.with_finalize_channel(tx);

    let mut prev = None;
    if store.is_complete(k) {
        if until_finalized {
            return Ok(json!({ "round": k, "status": "complete" }));
        }
    } else {
        if k == 0 {
            return Err(CliError::usage("round 0 has no clusters to review"));
        }
        check_previous(&store, k)?;
        let st = restore_chain(&ctx, &store, k - 1)?;
        let open = svc.round_infos()?.iter().any(|r| r.round == k && r.status == RoundStatus::Open);
        if !open {
            svc.open_round(ctx.prepare_round(&st)?)?;
        }
        prev = Some(st);
    }
    let svc = Arc::new(svc);

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::new(Kind::Internal, "bind", format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr()?;
        {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", json!({ "listening": local.to_string(), "round": k }))?;
            out.flush()?;
        }
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(annotsvc::serve_listener(svc.clone(), listener, async move {
            let _ = stop_rx.await;
        }));
        let mut outcome = json!({ "round": k, "status": "stopped" });
        loop {
            tokio::select! {
                msg = rx.recv() => {
                    let Some(pending) = msg else { break };
                    let base = prev.as_ref().expect("an open round has a previous state");
                    let state = ctx.finalize_round(pending, base, Provenance::Human)?;
                    store.save_state(&state, cfg.refine.seed)?;
                    svc.close_round(k);
                    outcome = round_summary(&state);
                    tracing::info!(round = k, "finalized round trained and saved");
                    if until_finalized {
                        break;
                    }
                }
                _ = tokio::signal::ctrl_c() => break,
            }
        }
        let _ = stop_tx.send(());
        server
            .await
            .map_err(|e| CliError::new(Kind::Internal, "internal", e.to_string()))??;
        Ok(outcome)
    })
}

pub fn evaluate(p: &Project, k: usize, gold_path: &Path) -> Out {
    let store = p.store();
    if !store.is_complete(k) {
        return Err(Error::RoundOrder(format!("round {k} is not complete")).into());
    }
    let corpus = p.corpus()?;
    let gold = load_gold(gold_path, &corpus)?;
    let provider = p.provider()?;
    let cfg = p.pipeline();
    let ctx = RefineContext::<f32>::new(&corpus, &provider, Some(&gold), cfg.refine.clone())?;
    let state = restore_chain(&ctx, &store, k)?;
    let metrics = state.metrics.expect("context has ground truth");
    let turn_model = if p.paths.turn_model().exists() {
        match read_model::<f32, _>(open_input(&p.paths.turn_model())?)? {
            ModelArtifact::Turn(m) => Some(turn_model_eval(&m, &corpus, &provider, &gold)?),
            ModelArtifact::Sentence(_) => None,
        }
    } else {
        None
    };
    let path = p.paths.eval(k);
    write_json(
        &path,
        &json!({ "round": k, "seed": p.seed, "gold": gold_path, "metrics": metrics, "turn_model": turn_model }),
    )?;
    let f1: BTreeMap<SectionLabel, f64> = metrics.model_eval.per_class.iter().map(|(&l, s)| (l, s.f1)).collect();
    Ok(json!({
        "round": k,
        "seed": p.seed,
        "model_accuracy": metrics.model_eval.accuracy,
        "model_f1": f1,
        "label_accuracy": metrics.label_eval.accuracy,
        "mixed_fraction": metrics.mixed_fraction,
        "turn_binary_accuracy": metrics.turn_eval.binary_accuracy,
        "output": path,
    }))
}

struct Run {
    name: String,
    project: Project,
}

fn metrics_of(run: &Run, k: usize) -> Result<RoundMetrics, CliError> {
    run.project.store().load_metrics(k)?.ok_or_else(|| {
        CliError::data(
            "no_metrics",
            format!("round {k} of {} was run without ground truth; use `dialsec evaluate`", run.name),
        )
    })
}

fn exact(m: BTreeMap<String, f64>) -> BTreeMap<String, MeanStd> {
    m.into_iter().map(|(k, v)| (k, MeanStd { mean: v, std: 0.0 })).collect()
}

fn summarize(maps: Vec<BTreeMap<String, f64>>) -> Result<BTreeMap<String, MeanStd>, CliError> {
    if maps.len() == 1 {
        return Ok(exact(maps.into_iter().next().expect("one run")));
    }
    Ok(summarize_runs(&maps)?)
}

pub fn report(p: &Project, run_dirs: &[PathBuf]) -> Result<String, CliError> {
    let mut runs = Vec::new();
    if run_dirs.is_empty() {
        runs.push(Run {
            name: p.paths.work.display().to_string(),
            project: Project::new(p.config.clone(), Some(p.seed)),
        });
    }
    for dir in run_dirs {
        let cfg = ProjectConfig::load(&dir.join(FILE_NAME))?;
        runs.push(Run {
            name: dir.display().to_string(),
            project: Project::new(cfg, None),
        });
    }
    let mut rounds = Vec::new();
    while runs.iter().all(|r| r.project.store().is_complete(rounds.len())) {
        rounds.push(rounds.len());
    }
    if rounds.is_empty() {
        return Err(Error::RoundOrder("no completed rounds to report; run `dialsec bootstrap` first".into()).into());
    }

    let mut model_rows = Vec::new();
    let mut label_rows = Vec::new();
    let mut turn_rows: Vec<(String, TurnEvalReport)> = Vec::new();
    let first = &runs[0];
    if first.project.paths.turn_report().exists() {
        let v: Value = serde_json::from_reader(open_input(&first.project.paths.turn_report())?)?;
        if let Some(e) = v.get("eval").filter(|e| !e.is_null()) {
            turn_rows.push(("M_turn".into(), serde_json::from_value(e.clone())?));
        }
    }
    for &k in &rounds {
        let metrics = runs.iter().map(|r| metrics_of(r, k)).collect::<Result<Vec<_>, _>>()?;
        model_rows.push((format!("M{}", k + 1), summarize(metrics.iter().map(|m| report_metrics(&m.model_eval)).collect())?));
        label_rows.push((format!("L{k}"), summarize(metrics.iter().map(|m| report_metrics(&m.label_eval)).collect())?));
        turn_rows.push((format!("M{} (max)", k + 1), metrics[0].turn_eval.clone()));
    }

    let mut s = String::new();
    let seeds: Vec<String> = runs
        .iter()
        .map(|r| r.project.store().load_summary(0).map(|x| x.seed.to_string()))
        .collect::<Result<_, _>>()?;
    let _ = writeln!(s, "# Section labeling report\n");
    let _ = writeln!(s, "Runs: {} (refinement seeds {})", runs.len(), seeds.join(", "));
    let _ = writeln!(s, "Rounds: 0..={}\n", rounds.len() - 1);
    let _ = writeln!(s, "## Sentence models\n\nPer-class F1 and four-class accuracy of the model trained on each round's labels.\n");
    let _ = writeln!(s, "```text\n{}```\n", render_sentence_table(&model_rows));
    let _ = writeln!(s, "## Round labels\n\nNon-mixed labels of each round against ground truth.\n");
    let _ = writeln!(s, "```text\n{}```\n", render_sentence_table(&label_rows));
    let _ = writeln!(s, "## Turn level\n\nSentence predictions max-pooled per turn ({}).\n", first.name);
    let _ = writeln!(s, "```text\n{}```\n", render_turn_table(&turn_rows));
    if rounds.len() > 1 {
        let _ = writeln!(s, "## Cluster verdicts ({})\n", first.name);
        for &k in &rounds[1..] {
            let log = first.project.store().load_relabel_log(k)?;
            let mixed = log.entries.iter().filter(|e| e.verdict.is_mixed()).count();
            let _ = writeln!(s, "### Round {k}\n\n{} clusters, {} relabeled, {} mixed\n", log.entries.len(), log.moved(), mixed);
            let _ = writeln!(s, "```text\n{}```\n", log.render());
        }
    }
    write_text(&p.paths.report(), &s)?;
    Ok(s)
}
