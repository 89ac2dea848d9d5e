use std::collections::HashSet;
use std::path::Path;

use capcal::evaluation::{compare_methods, ndcg_at_k, parse_qrels, parse_run, EvalReport, Qrels};

use crate::args::{CompareArgs, EvalArgs};
use crate::CliError;

/// Cutoff of an `ndcg@K` metric name.
pub fn parse_metric(metric: &str) -> Result<usize, CliError> {
    metric
        .strip_prefix("ndcg@")
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|&k| k >= 1)
        .ok_or_else(|| CliError::Config(format!("unsupported metric `{metric}`; expected ndcg@K")))
}

fn evaluate(run_path: &Path, qrels: &Qrels, k: usize) -> Result<EvalReport, CliError> {
    let run = parse_run(run_path)?;
    let mut report = ndcg_at_k(&run, qrels, k);
    if report.method_tag.is_empty() {
        report.method_tag = stem(run_path);
    }
    Ok(report)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let k = parse_metric(&args.metric)?;
    let qrels = parse_qrels(&args.qrels)?;
    let report = evaluate(&args.run, &qrels, k)?;
    Ok(if args.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        report.to_text()
    })
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    let k = parse_metric(&args.metric)?;
    let qrels = parse_qrels(&args.qrels)?;
    let mut reports = Vec::with_capacity(args.runs.len());
    let mut seen = HashSet::new();
    for path in &args.runs {
        let mut r = evaluate(path, &qrels, k)?;
        // Two runs with the same tag would collapse into one row.
        if !seen.insert(r.method_tag.clone()) {
            r.method_tag = format!("{} ({})", r.method_tag, path.display());
            seen.insert(r.method_tag.clone());
        }
        reports.push(r);
    }
    let table = compare_methods(&reports)?;
    Ok(if args.json {
        serde_json::to_string_pretty(&table).expect("table serializes") + "\n"
    } else {
        table.to_text()
    })
}
