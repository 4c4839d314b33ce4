use std::path::{Path, PathBuf};
use std::sync::Arc;

use mdforge_core::agent::SessionDeps;
use mdforge_core::exec::{Executor, RunConfig, StubRunner};
use mdforge_core::llm::{BackendError, ChatRequest, FnBackend, LlmClient};
use mdforge_core::potentials::{scan_registry, RegistryHandle};
use mdforge_core::reward::Dimension;
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn answer(script: &str) -> String {
    format!("<think>draft</think><answer>{}</answer>", json!({ "lammps_code": script }))
}

pub fn judge_answer(all_satisfied: bool) -> String {
    let body: serde_json::Map<String, Value> = Dimension::JUDGED
        .iter()
        .map(|d| (d.key().to_string(), json!({ "satisfied": all_satisfied, "rationale": "scripted" })))
        .collect();
    format!("<think>judging</think><answer>{}</answer>", Value::Object(body))
}

pub fn client(f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> LlmClient {
    LlmClient::new(Arc::new(FnBackend::new(move |req: &ChatRequest, _| Ok::<_, BackendError>(f(req)))))
}

/// Stub-runner deps over the fixture potentials.
pub fn stub_deps(root: &Path, llm: LlmClient) -> SessionDeps {
    let registry =
        Arc::new(RegistryHandle::new(scan_registry(&fixtures().join("potentials"), &Default::default()).unwrap()));
    let cfg = RunConfig { workdir_root: root.to_path_buf(), ..RunConfig::default() };
    let executor = Executor::new(Arc::new(StubRunner::default()), cfg).unwrap().with_registry(registry.clone());
    SessionDeps::new(llm, Arc::new(executor), registry)
}

/// The task text from a writer prompt.
pub fn task_of(req: &ChatRequest) -> &str {
    let user = &req.messages.last().unwrap().content;
    let body = user.strip_prefix("Task:\n").unwrap_or(user);
    body.split("\n\nYour previous script:").next().unwrap_or(body).trim()
}

/// The previous script and its problem list from a writer repair prompt.
pub fn previous_of(req: &ChatRequest) -> Option<(String, String)> {
    let user = &req.messages.last().unwrap().content;
    let (_, rest) = user.split_once("Your previous script:\n")?;
    let (script, rest) = rest.split_once("\n\nProblems found with it:\n")?;
    let problems = rest.split("\n\nRevise the script").next().unwrap_or(rest);
    Some((script.to_string(), problems.to_string()))
}
