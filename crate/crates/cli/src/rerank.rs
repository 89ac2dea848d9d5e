use std::path::{Path, PathBuf};

use capcal::baselines::psc_rerank;
use capcal::calibration::{sliding_window_rerank, ListwiseRanker, LlmRanker, Method};
use capcal::evaluation::{read_tasks, write_run, RunFile, TaskRecord};
use capcal::{Permutation, RerankTask};
use rayon::prelude::*;

use crate::args::{MethodArg, RerankArgs};
use crate::config::{FileConfig, Settings};
use crate::CliError;

/// What to run on each query.
#[derive(Debug, Clone)]
pub enum RunMethod {
    Llm(Method),
    Psc(Method),
}

impl RunMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            RunMethod::Llm(m) => m.tag(),
            RunMethod::Psc(_) => "psc",
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Run-file scores: `N - rank + 1`, plus `0.5 * sigmoid(s)` when the decoder
/// reported the score `s` it chose the document with. Strictly decreasing in
/// rank either way.
pub fn run_scores(n: usize, chosen: Option<&[f64]>) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let base = (n - i) as f64;
            match chosen {
                Some(s) => base + 0.5 * sigmoid(s[i]),
                None => base,
            }
        })
        .collect()
}

pub fn load_tasks(path: &Path, settings: &Settings) -> Result<Vec<RerankTask>, CliError> {
    let records = read_tasks(path)?;
    records.iter().map(|r| to_task(r, settings)).collect()
}

fn to_task(record: &TaskRecord, settings: &Settings) -> Result<RerankTask, CliError> {
    record
        .to_task(settings.scheme, &settings.placeholder, usize::MAX)
        .map_err(|source| CliError::Task {
            query_id: record.query_id.clone(),
            source,
        })
}

/// Ranks one task. Returns `(doc_id, score)` best first.
pub fn rank_task(
    task: &RerankTask,
    settings: &Settings,
    ranker: &LlmRanker<'_>,
    method: &RunMethod,
) -> Result<Vec<(String, f64)>, CliError> {
    let n = task.len();
    let decode_err = |source| CliError::Decode {
        query_id: task.query.id.clone(),
        source,
    };
    let window = settings.window;
    let windowed = |t: &RerankTask| -> Result<Permutation, capcal::calibration::DecodeError> {
        sliding_window_rerank(t, &window, ranker)
    };
    let inner: &dyn ListwiseRanker = if n > window.size { &windowed } else { ranker };

    let (perm, chosen) = match method {
        RunMethod::Llm(_) if n <= window.size => {
            let out = ranker.decode(task).map_err(decode_err)?;
            let by_slot = out.chosen_scores();
            let chosen: Vec<f64> = out.permutation.order.iter().map(|s| by_slot[s]).collect();
            (out.permutation, Some(chosen))
        }
        RunMethod::Llm(_) => (inner.rank(task).map_err(decode_err)?, None),
        RunMethod::Psc(_) => (psc_rerank(task, &settings.psc, inner).map_err(decode_err)?.permutation, None),
    };
    let scores = run_scores(n, chosen.as_deref());
    Ok(perm
        .doc_ids(task)
        .into_iter()
        .map(str::to_string)
        .zip(scores)
        .collect())
}

/// Ranks every task on a pool of `settings.workers` threads. Output order
/// follows the task file regardless of scheduling.
pub fn rank_all(
    tasks: &[RerankTask],
    settings: &Settings,
    method: &RunMethod,
    tag: &str,
) -> Result<RunFile, CliError> {
    let backend = settings.build_backend(tasks)?;
    let decoder_method = match method {
        RunMethod::Llm(m) | RunMethod::Psc(m) => m,
    };
    let ranker = LlmRanker {
        backend: backend.as_ref(),
        template: &settings.template,
        method: decoder_method,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<Vec<(String, f64)>, CliError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let r = rank_task(t, settings, &ranker, method);
                match &r {
                    Ok(_) => log::info!("query {}: ranked {} candidates", t.query.id, t.len()),
                    Err(e) => log::error!("{e}"),
                }
                r
            })
            .collect()
    });
    let mut rankings = Vec::with_capacity(tasks.len());
    for (t, r) in tasks.iter().zip(results) {
        rankings.push((t.query.id.as_str(), r?));
    }
    Ok(RunFile::from_rankings(rankings, tag))
}

/// `runs/capcal.run` with β 0.5 becomes `runs/capcal.beta0.5.run`.
pub fn sweep_path(out: &Path, beta: f64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.beta{beta}.{}", ext.to_string_lossy()),
        None => format!("{stem}.beta{beta}"),
    };
    out.with_file_name(name)
}

pub fn cmd_rerank(args: &RerankArgs, file: FileConfig) -> Result<(), CliError> {
    let settings = Settings::resolve(file, &args.model)?;
    let tasks = load_tasks(&args.tasks, &settings)?;

    let mut jobs: Vec<(RunMethod, String, PathBuf)> = Vec::new();
    match (&args.sweep_beta, args.method) {
        (Some(betas), MethodArg::Capcal) => {
            if betas.is_empty() {
                return Err(CliError::Config("--sweep-beta needs at least one value".into()));
            }
            for &b in betas {
                let mut cfg = settings.calibration.clone();
                cfg.beta = b;
                cfg.validate().map_err(CliError::Config)?;
                let tag = format!("{}-beta{b}", args.tag.as_deref().unwrap_or("capcal"));
                jobs.push((RunMethod::Llm(Method::CapCal(cfg)), tag, sweep_path(&args.out, b)));
            }
        }
        (Some(_), _) => return Err(CliError::Config("--sweep-beta applies to --method capcal only".into())),
        (None, m) => {
            let method = match m {
                MethodArg::Base => RunMethod::Llm(Method::Base),
                MethodArg::Capcal => RunMethod::Llm(settings.capcal()),
                MethodArg::Psc => RunMethod::Psc(settings.inner_method()),
            };
            let tag = args.tag.clone().unwrap_or_else(|| method.tag().to_string());
            jobs.push((method, tag, args.out.clone()));
        }
    }

    for (method, tag, out) in jobs {
        let run = rank_all(&tasks, &settings, &method, &tag)?;
        write_run(&run, &out)?;
        log::info!("wrote {} ({} queries)", out.display(), tasks.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_decrease_with_rank() {
        for chosen in [None, Some(vec![0.9, -3.0, 40.0, 0.1])] {
            let s = run_scores(4, chosen.as_deref());
            assert!(s.windows(2).all(|w| w[0] > w[1]), "{s:?}");
        }
        assert_eq!(run_scores(3, None), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn sweep_names() {
        assert_eq!(sweep_path(Path::new("r/c.run"), 0.5), Path::new("r/c.beta0.5.run"));
        assert_eq!(sweep_path(Path::new("c"), 1.0), Path::new("c.beta1"));
    }
}
