//! Settings resolution. Each value comes from the first source that sets it:
//! command-line flag, `CAPCAL_*` environment variable, TOML config file,
//! built-in default. Relative paths in the config file are resolved against
//! the file's directory.

use std::path::{Path, PathBuf};

use capcal::backend::{HttpBackend, HttpConfig, HttpMode, ScoringBackend, SimulatedLm, SimulatedSpec};
use capcal::baselines::{Aggregation, PscConfig};
use capcal::calibration::{CalibrationConfig, Method, PriorMode, WindowConfig};
use capcal::prompting::{PlaceholderKind, PlaceholderPolicy, PromptTemplate, DEFAULT_PLACEHOLDER_TEXT};
use capcal::{IdentifierScheme, RerankTask};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::args::ModelArgs;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Simulated,
}

/// The ranker PSC runs on each shuffled copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    #[default]
    Base,
    Capcal,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub backend: BackendSection,
    pub prompt: PromptSection,
    pub calibration: CalibrationConfig,
    pub psc: PscSection,
    pub window: WindowConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<BackendKind>,
    /// Simulator spec (JSON).
    pub spec: Option<PathBuf>,
    pub http: Option<HttpConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub template: Option<PathBuf>,
    pub scheme: Option<IdentifierScheme>,
    pub placeholder: Option<PlaceholderKind>,
    pub placeholder_text: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PscSection {
    pub k_permutations: Option<usize>,
    pub aggregation: Option<Aggregation>,
    pub inner: Option<InnerMethod>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&src).map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = dir.join(&*p);
            }
        };
        rebase(&mut cfg.backend.spec);
        rebase(&mut cfg.prompt.template);
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub enum BackendChoice {
    Simulated(SimulatedSpec),
    Http(HttpConfig),
}

/// Fully resolved settings for commands that talk to a model.
#[derive(Debug, Clone)]
pub struct Settings {
    pub backend: BackendChoice,
    pub template: PromptTemplate,
    pub scheme: IdentifierScheme,
    pub placeholder: PlaceholderPolicy,
    pub calibration: CalibrationConfig,
    pub psc: PscConfig,
    pub psc_inner: InnerMethod,
    pub window: WindowConfig,
    pub workers: usize,
}

impl Settings {
    pub fn resolve(file: FileConfig, args: &ModelArgs) -> Result<Self, CliError> {
        let backend = resolve_backend(file.backend, args)?;

        let template_path = args.template.clone().or(file.prompt.template);
        let template = match template_path {
            Some(p) => {
                let src = std::fs::read_to_string(&p)
                    .map_err(|e| CliError::Config(format!("template {}: {e}", p.display())))?;
                PromptTemplate::from_sections(&src)
                    .map_err(|e| CliError::Config(format!("template {}: {e}", p.display())))?
            }
            None => PromptTemplate::default(),
        };
        template
            .validate()
            .map_err(|e| CliError::Config(format!("template: {e}")))?;

        let seed = args.seed.or(file.seed).unwrap_or(0);
        let placeholder = PlaceholderPolicy {
            kind: args.placeholder.or(file.prompt.placeholder).unwrap_or_default(),
            fixed_text: args
                .placeholder_text
                .clone()
                .or(file.prompt.placeholder_text)
                .unwrap_or_else(|| DEFAULT_PLACEHOLDER_TEXT.to_string()),
            rng_seed: seed,
        };

        let mut calibration = file.calibration;
        if let Some(b) = args.beta {
            calibration.beta = b;
        }
        if let Some(m) = args.prior_mode {
            calibration.prior_mode = m.into();
        }
        calibration.validate().map_err(CliError::Config)?;

        let psc = PscConfig {
            k_permutations: args.psc_k.or(file.psc.k_permutations).unwrap_or(10),
            seed,
            aggregation: args.psc_aggregation.or(file.psc.aggregation).unwrap_or_default(),
        };
        if psc.k_permutations == 0 {
            return Err(CliError::Config("psc k_permutations must be at least 1".into()));
        }

        let mut window = file.window;
        if let Some(w) = args.window_size {
            window.size = w;
        }
        if let Some(s) = args.window_stride {
            window.stride = s;
        }
        window.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let workers = args.workers.or(file.workers).unwrap_or(4);
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }

        Ok(Self {
            backend,
            template,
            scheme: args.scheme.or(file.prompt.scheme).unwrap_or_default(),
            placeholder,
            calibration,
            psc,
            psc_inner: args.psc_inner.or(file.psc.inner).unwrap_or_default(),
            window,
            workers,
        })
    }

    pub fn capcal(&self) -> Method {
        Method::CapCal(self.calibration.clone())
    }

    pub fn inner_method(&self) -> Method {
        match self.psc_inner {
            InnerMethod::Base => Method::Base,
            InnerMethod::Capcal => self.capcal(),
        }
    }

    /// Builds the scoring backend. A simulator learns the given tasks so it
    /// can recognize their prompts.
    pub fn build_backend(&self, tasks: &[RerankTask]) -> Result<Box<dyn ScoringBackend>, CliError> {
        Ok(match &self.backend {
            BackendChoice::Simulated(spec) => Box::new(
                SimulatedLm::from_spec(spec)
                    .map_err(|e| CliError::Config(format!("simulator spec: {e}")))?
                    .with_template(&self.template)
                    .map_err(|e| CliError::Config(format!("template: {e}")))?
                    .with_tasks(tasks),
            ),
            BackendChoice::Http(cfg) => Box::new(HttpBackend::new(cfg.clone())),
        })
    }
}

fn resolve_backend(file: BackendSection, args: &ModelArgs) -> Result<BackendChoice, CliError> {
    let spec = args.sim_spec.clone().or(file.spec);
    let endpoint = args.endpoint.clone();
    let http_given = endpoint.is_some() || file.http.is_some();
    let kind = match args.backend.or(file.kind) {
        Some(k) => k,
        None => match (spec.is_some(), http_given) {
            (true, false) => BackendKind::Simulated,
            (false, true) => BackendKind::Http,
            (true, true) => {
                return Err(CliError::Config(
                    "both a simulator spec and an HTTP endpoint are configured; set the backend kind".into(),
                ))
            }
            (false, false) => {
                return Err(CliError::Config(
                    "no backend configured; pass --endpoint or --sim-spec".into(),
                ))
            }
        },
    };
    match kind {
        BackendKind::Simulated => {
            let path = spec.ok_or_else(|| CliError::Config("simulated backend needs a spec file".into()))?;
            let src = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("simulator spec {}: {e}", path.display())))?;
            let spec: SimulatedSpec = serde_json::from_str(&src)
                .map_err(|e| CliError::Config(format!("simulator spec {}: {e}", path.display())))?;
            if !(spec.temperature > 0.0) {
                return Err(CliError::Config("simulator temperature must be positive".into()));
            }
            Ok(BackendChoice::Simulated(spec))
        }
        BackendKind::Http => {
            let mut cfg = file.http.unwrap_or_default();
            if let Some(e) = endpoint {
                cfg.base_url = e;
            }
            if let Some(m) = args.http_mode {
                cfg.mode = match m {
                    HttpModeArg::Score => HttpMode::Score,
                    HttpModeArg::Echo => HttpMode::Echo,
                };
            }
            if let Some(m) = &args.model {
                cfg.model = Some(m.clone());
            }
            if let Some(a) = &args.auth_env {
                cfg.auth_env = Some(a.clone());
            }
            if let Some(r) = args.retries {
                cfg.retries = r;
            }
            if cfg.base_url.is_empty() {
                return Err(CliError::Config("HTTP backend needs an endpoint".into()));
            }
            Ok(BackendChoice::Http(cfg))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HttpModeArg {
    Score,
    Echo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorModeArg {
    Lockstep,
    Static,
}

impl From<PriorModeArg> for PriorMode {
    fn from(m: PriorModeArg) -> Self {
        match m {
            PriorModeArg::Lockstep => PriorMode::Lockstep,
            PriorModeArg::Static => PriorMode::StaticRenormalized,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_config_schema() {
        let cfg: FileConfig = toml::from_str(
            r#"
            seed = 7
            workers = 2
            [backend]
            kind = "http"
            [backend.http]
            base_url = "http://localhost:9"
            mode = "echo"
            [prompt]
            scheme = "alphabetic"
            placeholder = "random_x20"
            [calibration]
            beta = 0.5
            prior_mode = "static_renormalized"
            [psc]
            k_permutations = 3
            aggregation = "median_rank"
            inner = "capcal"
            [window]
            size = 10
            stride = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.backend.http.unwrap().mode, HttpMode::Echo);
        assert_eq!(cfg.calibration.beta, 0.5);
        assert_eq!(cfg.psc.aggregation, Some(Aggregation::MedianRank));
        assert_eq!(cfg.window.size, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[calibration]\nbta = 1.0\n").is_err());
    }
}
