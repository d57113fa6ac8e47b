//! Suite evaluation and the SR / LC / Exec / GD / TC metrics.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use btforge_core::bt::validate_structure;
use btforge_core::sim::{run, SimOutcome};
use serde::{Deserialize, Serialize};

use crate::schemes::{generate, GenContext, GenerationResult, PlannerKind, SchemeId};
use crate::task::Task;

/// Metrics of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    /// The reply followed the regulated format and resolves against the domain.
    pub exec: bool,
    /// The (leniently parsed) tree reaches the goal in simulation.
    pub lc: bool,
    /// `exec && lc`.
    pub sr: bool,
    pub gd_seconds: f64,
    pub tc_tokens: u64,
    pub iterations: u32,
    pub outcome: Option<SimOutcome>,
    pub error: Option<String>,
}

impl TaskRecord {
    fn failed(task: &Task, error: String) -> Self {
        TaskRecord {
            task_id: task.id.clone(),
            exec: false,
            lc: false,
            sr: false,
            gd_seconds: 0.0,
            tc_tokens: 0,
            iterations: 0,
            outcome: None,
            error: Some(error),
        }
    }

    /// Scores a generation result against its task.
    pub fn score(task: &Task, result: &GenerationResult, ctx: &GenContext) -> Self {
        let (exec, outcome) = match &result.tree {
            Some(tree) => {
                let exec = result.strict_ok && validate_structure(tree, &ctx.domain).executable;
                let report = run(
                    tree,
                    &task.initial,
                    &ctx.domain,
                    &task.goal,
                    ctx.tick_budget,
                );
                (exec, Some(report.outcome))
            }
            None => (false, None),
        };
        let lc = outcome == Some(SimOutcome::GoalReached);
        TaskRecord {
            task_id: task.id.clone(),
            exec,
            lc,
            sr: exec && lc,
            gd_seconds: result.duration_seconds,
            tc_tokens: result.tokens,
            iterations: result.iterations,
            outcome,
            error: result.error.clone(),
        }
    }
}

/// Counts out of `n` and means, recomputable from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub sr: usize,
    pub lc: usize,
    pub exec: usize,
    pub mean_gd_seconds: f64,
    pub mean_tc_tokens: f64,
}

impl Aggregates {
    pub fn from_records(records: &[TaskRecord]) -> Self {
        let n = records.len();
        let count = |f: fn(&TaskRecord) -> bool| records.iter().filter(|r| f(r)).count();
        let mean = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };
        Aggregates {
            n,
            sr: count(|r| r.sr),
            lc: count(|r| r.lc),
            exec: count(|r| r.exec),
            mean_gd_seconds: mean(records.iter().map(|r| r.gd_seconds).sum()),
            mean_tc_tokens: mean(records.iter().map(|r| r.tc_tokens as f64).sum()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub scheme: SchemeId,
    pub planner: PlannerKind,
    pub records: Vec<TaskRecord>,
    pub aggregates: Aggregates,
}

impl SuiteReport {
    pub fn new(scheme: SchemeId, planner: PlannerKind, records: Vec<TaskRecord>) -> Self {
        let aggregates = Aggregates::from_records(&records);
        SuiteReport {
            scheme,
            planner,
            records,
            aggregates,
        }
    }

    /// Scheme label used in tables, e.g. `recursive` or `recursive-llm`.
    pub fn label(&self) -> String {
        match (self.scheme, self.planner) {
            (SchemeId::Recursive, PlannerKind::Llm) => "recursive-llm".to_owned(),
            (scheme, _) => scheme.to_string(),
        }
    }
}

/// Runs the scheme on one task. Provider and scheme errors become a
/// failed record.
pub fn evaluate_task(
    scheme: SchemeId,
    planner: PlannerKind,
    task: &Task,
    ctx: &GenContext,
) -> TaskRecord {
    match generate(scheme, planner, task, ctx) {
        Ok(result) => TaskRecord::score(task, &result, ctx),
        Err(e) => TaskRecord::failed(task, e.to_string()),
    }
}

/// Evaluates every task in order.
pub fn evaluate_suite(
    scheme: SchemeId,
    planner: PlannerKind,
    tasks: &[Task],
    ctx: &GenContext,
) -> SuiteReport {
    let records = tasks
        .iter()
        .map(|t| evaluate_task(scheme, planner, t, ctx))
        .collect();
    SuiteReport::new(scheme, planner, records)
}

/// [`evaluate_suite`] on `jobs` worker threads; records keep suite order.
/// Only meaningful for order-independent providers (replay, recursive
/// oracle); GD then includes contention between workers.
pub fn evaluate_suite_parallel(
    scheme: SchemeId,
    planner: PlannerKind,
    tasks: &[Task],
    ctx: &GenContext,
    jobs: usize,
) -> SuiteReport {
    if jobs <= 1 {
        return evaluate_suite(scheme, planner, tasks, ctx);
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TaskRecord>>> = Mutex::new(vec![None; tasks.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let record = evaluate_task(scheme, planner, task, ctx);
                slots.lock().expect("record slots lock")[i] = Some(record);
            });
        }
    });
    let records = slots
        .into_inner()
        .expect("record slots lock")
        .into_iter()
        .map(|r| r.expect("every task evaluated"))
        .collect();
    SuiteReport::new(scheme, planner, records)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

pub const CSV_HEADER: [&str; 6] = ["scheme", "SR", "LC", "Exec", "GD", "TC"];

/// One summary row: counts as `k/n`, GD in seconds and TC as means.
pub fn report_csv(report: &SuiteReport) -> String {
    let a = &report.aggregates;
    let frac = |k: usize| format!("{k}/{}", a.n);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    w.write_record([
        report.label(),
        frac(a.sr),
        frac(a.lc),
        frac(a.exec),
        format!("{:.2}", a.mean_gd_seconds),
        format!("{:.2}", a.mean_tc_tokens),
    ])
    .expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn report_json(report: &SuiteReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    text
}

pub fn write_report(
    report: &SuiteReport,
    path: &Path,
    format: ReportFormat,
) -> std::io::Result<()> {
    let text = match format {
        ReportFormat::Json => report_json(report),
        ReportFormat::Csv => report_csv(report),
    };
    std::fs::write(path, text)
}
