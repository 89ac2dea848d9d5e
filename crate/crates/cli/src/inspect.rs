use std::collections::BTreeMap;
use std::fmt::Write as _;

use capcal::calibration::{decode, CalibratedRanking, Method};
use capcal::RerankTask;
use serde::Serialize;

use crate::args::{ExplainArgs, InspectArgs, MethodArg};
use crate::config::{FileConfig, Settings};
use crate::rerank::load_tasks;
use crate::CliError;

/// JSON document printed by `capcal prior --json`.
#[derive(Debug, Serialize)]
pub struct PriorReport {
    pub query_id: String,
    pub prior_mode: String,
    pub placeholder: String,
    pub steps: Vec<PriorStep>,
}

/// One decoding step. `labels`, `p_prior` and `deviation` are parallel
/// arrays over the candidates still unranked at this step.
#[derive(Debug, Serialize)]
pub struct PriorStep {
    pub step: usize,
    pub labels: Vec<String>,
    /// Content-free probabilities renormalized over `labels`.
    pub p_prior: Vec<f64>,
    /// `p_prior - 1/len(labels)`.
    pub deviation: Vec<f64>,
    /// Label the main stream emitted at this step.
    pub chosen: String,
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn decode_one(args: &InspectArgs, file: FileConfig, method: MethodArg) -> Result<(Settings, RerankTask, CalibratedRanking), CliError> {
    let settings = Settings::resolve(file, &args.model)?;
    let tasks = load_tasks(&args.tasks, &settings)?;
    let task = tasks
        .into_iter()
        .find(|t| t.query.id == args.query)
        .ok_or_else(|| CliError::UnknownQuery(args.query.clone()))?;
    let method = match method {
        MethodArg::Base => Method::Base,
        MethodArg::Capcal => settings.capcal(),
        MethodArg::Psc => return Err(CliError::Config("explain shows a single decode; use base or capcal".into())),
    };
    let backend = settings.build_backend(std::slice::from_ref(&task))?;
    let out = decode(backend.as_ref(), &task, &settings.template, &method).map_err(|source| CliError::Decode {
        query_id: task.query.id.clone(),
        source,
    })?;
    Ok((settings, task, out))
}

pub fn prior_report(task: &RerankTask, settings: &Settings, ranking: &CalibratedRanking) -> PriorReport {
    let steps = ranking
        .trace
        .iter()
        .map(|s| {
            let prior = s.p_prior.clone().unwrap_or_default();
            let mass: f64 = s.remaining.iter().map(|i| prior.get(i).copied().unwrap_or(0.0)).sum();
            let uniform = 1.0 / s.remaining.len() as f64;
            let p: Vec<f64> = s
                .remaining
                .iter()
                .map(|i| {
                    if mass > settings.calibration.epsilon {
                        prior.get(i).copied().unwrap_or(0.0) / mass
                    } else {
                        uniform
                    }
                })
                .collect();
            PriorStep {
                step: s.step_index,
                labels: s.remaining.iter().map(|&i| task.label(i)).collect(),
                deviation: p.iter().map(|v| v - uniform).collect(),
                p_prior: p,
                chosen: task.label(s.chosen),
            }
        })
        .collect();
    PriorReport {
        query_id: task.query.id.clone(),
        prior_mode: snake(&settings.calibration.prior_mode),
        placeholder: snake(&settings.placeholder.kind),
        steps,
    }
}

pub fn prior_text(report: &PriorReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "query {}  prior_mode {}  placeholder {}",
        report.query_id, report.prior_mode, report.placeholder
    )
    .expect("write to String");
    writeln!(out, "{:>4}  {:>6}  {:>8}  {:>9}", "step", "label", "p_prior", "deviation").expect("write to String");
    for s in &report.steps {
        for (i, label) in s.labels.iter().enumerate() {
            let mark = if *label == s.chosen { " *" } else { "" };
            writeln!(
                out,
                "{:>4}  {:>6}  {:>8.4}  {:>+9.4}{mark}",
                s.step,
                format!("[{label}]"),
                s.p_prior[i],
                s.deviation[i]
            )
            .expect("write to String");
        }
    }
    out
}

pub fn cmd_prior(args: &InspectArgs, file: FileConfig) -> Result<String, CliError> {
    let (settings, task, ranking) = decode_one(args, file, MethodArg::Capcal)?;
    let report = prior_report(&task, &settings, &ranking);
    Ok(if args.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        prior_text(&report)
    })
}

#[derive(Serialize)]
struct ExplainReport<'a> {
    query_id: &'a str,
    method: &'static str,
    ranking: Vec<&'a str>,
    #[serde(flatten)]
    decode: &'a CalibratedRanking,
}

pub fn cmd_explain(args: &ExplainArgs, file: FileConfig) -> Result<String, CliError> {
    let (_, task, ranking) = decode_one(&args.inspect, file, args.method)?;
    if args.inspect.json {
        let report = ExplainReport {
            query_id: &task.query.id,
            method: if args.method == MethodArg::Base { "base" } else { "capcal" },
            ranking: ranking.permutation.doc_ids(&task),
            decode: &ranking,
        };
        return Ok(serde_json::to_string_pretty(&report).expect("report serializes") + "\n");
    }
    let mut out = String::new();
    let ids = ranking.permutation.doc_ids(&task);
    writeln!(out, "query {}  ranking {}", task.query.id, ids.join(" ")).expect("write to String");
    for s in &ranking.trace {
        writeln!(
            out,
            "step {}  H {:.4}  alpha {:.4}  chose [{}] {}",
            s.step_index,
            s.entropy_h,
            s.alpha_k,
            task.label(s.chosen),
            task.candidate(s.chosen).doc_id
        )
        .expect("write to String");
        let empty = BTreeMap::new();
        let prior = s.p_prior.as_ref().unwrap_or(&empty);
        writeln!(out, "  {:>6}  {:>8}  {:>8}  {:>8}", "label", "p_main", "p_prior", "score").expect("write to String");
        for i in &s.remaining {
            let p = prior.get(i).map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            writeln!(
                out,
                "  {:>6}  {:>8.4}  {:>8}  {:>8.4}",
                format!("[{}]", task.label(*i)),
                s.p_main[i],
                p,
                s.scores[i]
            )
            .expect("write to String");
        }
    }
    Ok(out)
}
