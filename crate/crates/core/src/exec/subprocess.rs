use std::fs::File;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{io_err, ExecError, RawOutcome, RunConfig, Runner, INPUT_FILE, LOG_FILE, STDERR_FILE, STDOUT_FILE};

const POLL: Duration = Duration::from_millis(20);

/// Runs the configured command (optionally inside the sandbox wrapper) in
/// its own process group, killing the whole group on timeout.
#[derive(Debug, Clone)]
pub struct SubprocessRunner {
    cfg: RunConfig,
}

impl SubprocessRunner {
    pub fn new(cfg: RunConfig) -> Self {
        Self { cfg }
    }

    /// Expanded argument vector for a workdir.
    pub fn argv(&self, workdir: &Path) -> Vec<String> {
        let expand = |t: &str| {
            t.replace("{input}", &workdir.join(INPUT_FILE).to_string_lossy())
                .replace("{logfile}", &workdir.join(LOG_FILE).to_string_lossy())
                .replace("{workdir}", &workdir.to_string_lossy())
        };
        let command: Vec<String> = self.cfg.command_template.iter().map(|t| expand(t)).collect();
        match &self.cfg.sandbox_template {
            None => command,
            Some(wrapper) => wrapper
                .iter()
                .flat_map(|t| if t == "{command}" { command.clone() } else { vec![expand(t)] })
                .collect(),
        }
    }
}

impl Runner for SubprocessRunner {
    fn name(&self) -> &'static str {
        "subprocess"
    }

    fn run(&self, workdir: &Path, timeout: Duration) -> Result<RawOutcome, ExecError> {
        if let Some(wrapper) = self.cfg.sandbox_template.as_ref().and_then(|w| w.first()) {
            if find_on_path(wrapper).is_none() {
                return Err(ExecError::SandboxUnavailable(wrapper.clone()));
            }
        }
        let argv = self.argv(workdir);
        let stdout_path = workdir.join(STDOUT_FILE);
        let stderr_path = workdir.join(STDERR_FILE);
        let stdout = File::create(&stdout_path).map_err(io_err(&stdout_path))?;
        let stderr = File::create(&stderr_path).map_err(io_err(&stderr_path))?;

        let started = Instant::now();
        let spawned = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(workdir)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .process_group(0)
            .spawn();
        let mut child = match spawned {
            Ok(child) => child,
            Err(e) => {
                return Ok(RawOutcome {
                    exit_code: None,
                    timed_out: false,
                    wall_time_s: started.elapsed().as_secs_f64(),
                    launch_error: Some(format!("cannot launch `{}`: {e}", argv[0])),
                })
            }
        };
        let pgid = child.id() as i32;

        loop {
            match child.try_wait() {
                Ok(Some(status)) => {
                    return Ok(RawOutcome {
                        exit_code: Some(status.code().unwrap_or(-1)),
                        timed_out: false,
                        wall_time_s: started.elapsed().as_secs_f64(),
                        launch_error: None,
                    })
                }
                Ok(None) if started.elapsed() >= timeout => {
                    // SAFETY: pgid is the group created for this child.
                    unsafe {
                        libc::kill(-pgid, libc::SIGKILL);
                    }
                    let _ = child.wait();
                    return Ok(RawOutcome {
                        exit_code: None,
                        timed_out: true,
                        wall_time_s: started.elapsed().as_secs_f64(),
                        launch_error: None,
                    });
                }
                Ok(None) => std::thread::sleep(POLL),
                Err(e) => return Err(ExecError::Io { path: workdir.to_path_buf(), source: e }),
            }
        }
    }
}

/// Resolves a program name against `PATH` (or checks it directly when it
/// contains a slash).
pub(crate) fn find_on_path(program: &str) -> Option<PathBuf> {
    use std::os::unix::fs::PermissionsExt;
    let executable = |p: &Path| p.metadata().is_ok_and(|m| m.is_file() && m.permissions().mode() & 0o111 != 0);
    if program.contains('/') {
        let p = PathBuf::from(program);
        return executable(&p).then_some(p);
    }
    std::env::split_paths(&std::env::var_os("PATH")?)
        .map(|dir| dir.join(program))
        .find(|p| executable(p))
}
