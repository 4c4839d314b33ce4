use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::ValueEnum;
use mdforge_core::agent::{SessionContext, SessionDeps, TrajectoryPool};
use mdforge_core::config::{Config, ConfigError};
use mdforge_core::exec::{ExecError, Executor, RunnerProfile};
use mdforge_core::llm::{
    BackendError, ChatBackend, ChatParams, ChatRequest, CodeWriter, DimensionJudge, FnBackend, HttpBackend,
    HttpBackendConfig, LlmClient, QueryRewriter,
};
use mdforge_core::potentials::{scan_registry, DisabledFetcher, HttpFetcher, Registry, RegistryError, RegistryHandle};
use mdforge_core::script::{CatalogError, CommandCatalog};
use serde::Serialize;
use thiserror::Error;

/// Which runner and model backend a command talks to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Subprocess LAMMPS runner and the configured HTTP backend.
    Real,
    /// Synthesizing stub runner and the configured HTTP backend.
    Stub,
    /// Stub runner and a canned offline writer; no judge.
    Mock,
}

impl Profile {
    /// The flag if given, else `MDFORGE_RUNNER_PROFILE`, else `stub`.
    pub fn resolve(flag: Option<Profile>) -> Profile {
        flag.or_else(|| {
            RunnerProfile::from_env().map(|p| match p {
                RunnerProfile::Real => Profile::Real,
                RunnerProfile::Stub => Profile::Stub,
            })
        })
        .unwrap_or(Profile::Stub)
    }

    pub fn runner(self) -> RunnerProfile {
        match self {
            Profile::Real => RunnerProfile::Real,
            Profile::Stub | Profile::Mock => RunnerProfile::Stub,
        }
    }
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("model backend: {0}")]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// The script the mock writer hands back for every task.
pub const MOCK_SCRIPT: &str = "\
units lj
atom_style atomic
lattice fcc 0.8442
region box block 0 6 0 6 0 6
create_box 1 box
create_atoms 1 box
mass 1 1.0
velocity all create 1.0 87287 loop geom
pair_style lj/cut 2.5
pair_coeff 1 1 1.0 1.0 2.5
neighbor 0.3 bin
fix 1 all nvt temp 1.0 1.0 0.5
thermo_style custom step temp pe etotal press
thermo 100
run 1000
";

fn mock_reply(req: &ChatRequest) -> String {
    match req.purpose.as_str() {
        "rewriter" => format!("Write a complete LAMMPS input script for: {}", req.user_text().lines().next().unwrap_or("")),
        _ => {
            let answer = serde_json::json!({ "lammps_code": MOCK_SCRIPT });
            format!("<think>Offline template.</think>\n<answer>{answer}</answer>")
        }
    }
}

/// Offline backend used by the mock profile.
pub fn mock_backend() -> Arc<dyn ChatBackend> {
    Arc::new(FnBackend::new(|req, _| Ok(mock_reply(req))))
}

fn http_client(cfg: &Config, http: &HttpBackendConfig) -> Result<LlmClient, AppError> {
    let backend = HttpBackend::new(http.clone())?;
    let secrets: Vec<String> = backend.secret().map(str::to_string).into_iter().collect();
    Ok(LlmClient::new(Arc::new(backend))
        .with_retry(cfg.backend.retry.clone())
        .with_max_in_flight(cfg.backend.max_in_flight)
        .with_redactions(secrets))
}

/// The writer's client for `profile`.
pub fn writer_client(cfg: &Config, profile: Profile) -> Result<LlmClient, AppError> {
    match profile {
        Profile::Mock => Ok(LlmClient::new(mock_backend())),
        _ => http_client(cfg, &cfg.backend.http),
    }
}

/// The judge's client, if the profile and config use one.
pub fn judge_client(cfg: &Config, profile: Profile) -> Result<Option<LlmClient>, AppError> {
    if profile == Profile::Mock || !cfg.judge.enabled {
        return Ok(None);
    }
    http_client(cfg, cfg.judge.backend.as_ref().unwrap_or(&cfg.backend.http)).map(Some)
}

/// Scans the potentials directory. A missing directory yields an empty
/// registry so sessions can still run; `strict` turns that into an error.
pub fn load_registry(cfg: &Config, strict: bool) -> Result<Registry, AppError> {
    let dir = &cfg.registry.potentials_dir;
    let table = cfg.registry.extension_table();
    if !dir.is_dir() && !strict {
        tracing::warn!(dir = %dir.display(), "potentials directory not found, using an empty registry");
        return Ok(Registry::empty(dir.clone(), table));
    }
    Ok(scan_registry(dir, &table)?)
}

/// Everything a session needs, wired from `cfg` for `profile`.
pub fn build_deps(cfg: &Config, profile: Profile) -> Result<SessionDeps, AppError> {
    let registry = Arc::new(RegistryHandle::new(load_registry(cfg, false)?));
    let executor = Executor::for_profile(profile.runner(), cfg.runner.clone())?.with_registry(registry.clone());
    let mut deps = SessionDeps::new(writer_client(cfg, profile)?, Arc::new(executor), registry);
    deps.judge_llm = judge_client(cfg, profile)?;
    if !cfg.registry.fetch_endpoints.is_empty() {
        deps.fetcher = Arc::new(HttpFetcher::new(
            cfg.registry.fetch_endpoints.clone(),
            Duration::from_secs_f64(cfg.registry.fetch_timeout_s),
        ));
    } else {
        deps.fetcher = Arc::new(DisabledFetcher);
    }
    if let Some(path) = &cfg.catalog.path {
        deps.catalog = Arc::new(CommandCatalog::load(path)?);
    }
    deps.reward = cfg.reward.clone();
    deps.tolerance = cfg.tolerance.clone();
    deps.similarity = cfg.registry.similarity;
    deps.top_k = cfg.registry.top_k;
    deps.pool = Some(Arc::new(TrajectoryPool::new(cfg.pool_path.clone())));
    let params = ChatParams { temperature: cfg.backend.temperature, max_tokens: cfg.backend.max_tokens, ..ChatParams::default() };
    deps.writer = CodeWriter { params: params.clone(), required_fields: cfg.reward.required_answer_fields.clone() };
    deps.judge = DimensionJudge { params: ChatParams { temperature: 0.0, ..params.clone() } };
    deps.rewriter = QueryRewriter { params: ChatParams { temperature: QueryRewriter::default().params.temperature, ..params } };
    Ok(deps)
}

/// Per-session copy of `deps` whose model traffic is also logged to the
/// session directory when `backend.log_requests` is set.
pub fn session_deps(base: &SessionDeps, cfg: &Config, session_id: &str) -> Result<SessionDeps, AppError> {
    let mut deps = base.clone();
    if cfg.backend.log_requests {
        let dir = deps.session_dir(session_id);
        std::fs::create_dir_all(&dir).map_err(|source| AppError::Io { path: dir.clone(), source })?;
        let log = |client: &LlmClient, name: &str| {
            let path = dir.join(name);
            client.with_log_file(&path).map_err(|source| AppError::Io { path, source })
        };
        deps.llm = log(&base.llm, "llm.jsonl")?;
        if let Some(judge) = &base.judge_llm {
            deps.judge_llm = Some(log(judge, "judge.jsonl")?);
        }
    }
    Ok(deps)
}

pub fn read_text(path: &Path) -> Result<String, AppError> {
    std::fs::read_to_string(path).map_err(|source| AppError::Io { path: path.to_path_buf(), source })
}

pub fn new_session_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

/// Per-session deps plus a context whose events are mirrored to the
/// session directory.
pub fn open_session(base: &SessionDeps, cfg: &Config, id: &str) -> Result<(SessionDeps, SessionContext), AppError> {
    let deps = session_deps(base, cfg, id)?;
    let ctx = SessionContext::persistent(id, &deps).map_err(|source| AppError::Io { path: deps.session_dir(id), source })?;
    Ok((deps, ctx))
}
