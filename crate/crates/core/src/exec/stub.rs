use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io_err, ExecError, RawOutcome, Runner, INPUT_FILE, LOG_FILE, STDERR_FILE, STDOUT_FILE};
use crate::script::{parse_script, Command, CommandCatalog, ScriptDocument};
use crate::thermo::from_fixes;
use crate::util::sha256_hex;

/// Pre-recorded output for one exact script text.
#[derive(Debug, Clone, PartialEq)]
pub struct CannedRun {
    pub log: String,
    pub stderr: String,
    pub exit_code: i32,
    /// Simulated duration; longer than the timeout means the run times out.
    pub sim_seconds: f64,
}

impl CannedRun {
    pub fn success(log: impl Into<String>) -> Self {
        Self { log: log.into(), stderr: String::new(), exit_code: 0, sim_seconds: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubSettings {
    /// Simulated wall-clock cost of one MD step.
    pub seconds_per_step: f64,
    pub startup_s: f64,
    pub max_rows_per_run: usize,
    pub max_frames_per_dump: usize,
    pub natoms: u64,
}

impl Default for StubSettings {
    fn default() -> Self {
        Self { seconds_per_step: 1e-3, startup_s: 0.05, max_rows_per_run: 200, max_frames_per_dump: 50, natoms: 4000 }
    }
}

/// Desk-side stand-in for LAMMPS. Scripts with a canned entry (keyed by
/// SHA-256 of the text) replay it; everything else is synthesized from the
/// script on a simulated clock, so timeouts are deterministic and instant.
///
/// The synthesizer reproduces the failure modes the agent loop reacts to:
/// unknown commands, potential files absent from the workdir, and unstable
/// timesteps that heat up and lose atoms.
#[derive(Debug, Clone, Default)]
pub struct StubRunner {
    settings: StubSettings,
    canned: HashMap<String, CannedRun>,
    catalog: CommandCatalog,
}

impl StubRunner {
    pub fn new(settings: StubSettings) -> Self {
        Self { settings, ..Self::default() }
    }

    pub fn with_canned(mut self, script: &str, run: CannedRun) -> Self {
        self.canned.insert(sha256_hex(script), run);
        self
    }

    pub fn settings(&self) -> &StubSettings {
        &self.settings
    }
}

impl Runner for StubRunner {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn run(&self, workdir: &Path, timeout: Duration) -> Result<RawOutcome, ExecError> {
        let input = workdir.join(INPUT_FILE);
        let script = std::fs::read_to_string(&input).map_err(io_err(&input))?;
        let cutoff = timeout.as_secs_f64();
        let write = |name: &str, body: &str| {
            let p = workdir.join(name);
            std::fs::write(&p, body).map_err(io_err(&p))
        };

        if let Some(canned) = self.canned.get(&sha256_hex(&script)) {
            let timed_out = canned.sim_seconds > cutoff;
            write(LOG_FILE, &canned.log)?;
            write(STDOUT_FILE, &canned.log)?;
            write(STDERR_FILE, &canned.stderr)?;
            return Ok(RawOutcome {
                exit_code: (!timed_out).then_some(canned.exit_code),
                timed_out,
                wall_time_s: canned.sim_seconds.min(cutoff),
                launch_error: None,
            });
        }

        let doc = parse_script(&script);
        let seed = u64::from_le_bytes(hex::decode(&sha256_hex(&script)[..16]).expect("hex digest")[..8].try_into().expect("8 bytes"));
        let timeline = Synth::new(&self.settings, &self.catalog, workdir, seed).run(&doc);

        let mut log = String::new();
        let mut files: BTreeMap<String, String> = BTreeMap::new();
        for (t, event) in &timeline.events {
            if *t > cutoff {
                break;
            }
            match event {
                Event::Line(l) => {
                    log.push_str(l);
                    log.push('\n');
                }
                Event::Create(f, body) => {
                    files.insert(f.clone(), body.clone());
                }
                Event::Frame(f, step, natoms) => {
                    let body = files.entry(f.clone()).or_default();
                    let _ = write!(body, "ITEM: TIMESTEP\n{step}\nITEM: NUMBER OF ATOMS\n{natoms}\nITEM: BOX BOUNDS pp pp pp\n0 1\n0 1\n0 1\nITEM: ATOMS id type x y z\n");
                }
            }
        }
        for (name, body) in &files {
            let path = workdir.join(name);
            let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
            f.write_all(body.as_bytes()).map_err(io_err(&path))?;
        }
        let timed_out = timeline.end > cutoff;
        write(LOG_FILE, &log)?;
        write(STDOUT_FILE, &log)?;
        write(STDERR_FILE, "")?;
        Ok(RawOutcome {
            exit_code: (!timed_out).then_some(timeline.exit_code),
            timed_out,
            wall_time_s: timeline.end.min(cutoff),
            launch_error: None,
        })
    }
}

enum Event {
    Line(String),
    Create(String, String),
    Frame(String, u64, u64),
}

struct Timeline {
    events: Vec<(f64, Event)>,
    end: f64,
    exit_code: i32,
}

struct Synth<'a> {
    s: &'a StubSettings,
    catalog: &'a CommandCatalog,
    workdir: &'a Path,
    rng: ChaCha8Rng,
    events: Vec<(f64, Event)>,
    clock: f64,
    step: u64,
    units: String,
    dt: Option<f64>,
    thermo_every: u64,
    columns: Vec<String>,
    fixes: BTreeMap<String, Command>,
    dumps: BTreeMap<String, (String, u64, usize)>,
    velocity_temp: Option<f64>,
    vars: HashMap<String, String>,
}

const KB_METAL: f64 = 8.617e-5;
const DEFAULT_COLUMNS: [&str; 6] = ["step", "temp", "epair", "emol", "etotal", "press"];

enum Halt {
    Error(String),
}

impl<'a> Synth<'a> {
    fn new(s: &'a StubSettings, catalog: &'a CommandCatalog, workdir: &'a Path, seed: u64) -> Self {
        Self {
            s,
            catalog,
            workdir,
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: Vec::new(),
            clock: s.startup_s,
            step: 0,
            units: "lj".into(),
            dt: None,
            thermo_every: 0,
            columns: DEFAULT_COLUMNS.map(String::from).to_vec(),
            fixes: BTreeMap::new(),
            dumps: BTreeMap::new(),
            velocity_temp: None,
            vars: HashMap::new(),
        }
    }

    fn line(&mut self, text: impl Into<String>) {
        self.events.push((self.clock, Event::Line(text.into())));
    }

    fn run(mut self, doc: &ScriptDocument) -> Timeline {
        self.line("LAMMPS (stub runner)");
        for (idx, cmd) in doc.commands.iter().enumerate() {
            for raw in cmd.raw.lines() {
                self.line(raw.to_string());
            }
            if let Err(Halt::Error(msg)) = self.command(doc, idx, cmd) {
                self.line(msg);
                self.line("Last command: ".to_string() + cmd.raw.lines().next().unwrap_or(""));
                return Timeline { end: self.clock, exit_code: 1, events: self.events };
            }
        }
        let total = self.clock.round() as u64;
        self.line(format!("Total wall time: {}:{:02}:{:02}", total / 3600, total / 60 % 60, total % 60));
        Timeline { end: self.clock, exit_code: 0, events: self.events }
    }

    fn resolve(&self, token: &str) -> String {
        let mut out = token.to_string();
        for (name, value) in &self.vars {
            out = out.replace(&format!("${{{name}}}"), value);
            if name.len() == 1 {
                out = out.replace(&format!("${name}"), value);
            }
        }
        out
    }

    fn command(&mut self, doc: &ScriptDocument, idx: usize, cmd: &Command) -> Result<(), Halt> {
        if !self.catalog.contains(&cmd.name) {
            let text = std::iter::once(cmd.name.as_str()).chain(cmd.args.iter().map(String::as_str)).collect::<Vec<_>>().join(" ");
            return Err(Halt::Error(format!("ERROR: Unknown command: {text} (src/input.cpp:314)")));
        }
        let cmd = Command { args: cmd.args.iter().map(|a| self.resolve(a)).collect(), ..cmd.clone() };
        let num = |i: usize| cmd.arg(i).and_then(|a| a.parse::<f64>().ok());
        match cmd.name.as_str() {
            "variable" => {
                if let (Some(name), Some(style), Some(value), None) = (cmd.arg(0), cmd.arg(1), cmd.arg(2), cmd.arg(3)) {
                    if matches!(style, "equal" | "index" | "string") && value.parse::<f64>().is_ok() {
                        self.vars.insert(name.to_string(), value.to_string());
                    }
                }
            }
            "units" => self.units = cmd.arg(0).unwrap_or("lj").to_string(),
            "timestep" => self.dt = num(0),
            "thermo" => self.thermo_every = num(0).map_or(0, |v| v.max(0.0) as u64),
            "thermo_style" => match cmd.arg(0) {
                Some("custom") => self.columns = cmd.args[1..].to_vec(),
                _ => self.columns = DEFAULT_COLUMNS.map(String::from).to_vec(),
            },
            "pair_coeff" => {
                for r in doc.potential_refs.iter().filter(|r| r.command_index == idx) {
                    if !self.workdir.join(&r.file_name).is_file() {
                        let style = r.pair_style.as_deref().unwrap_or("");
                        let label = if style.starts_with("eam") {
                            "EAM".to_string()
                        } else {
                            let base = style.split('/').next().unwrap_or("");
                            let mut c = base.chars();
                            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_else(|| "potential".into())
                        };
                        return Err(Halt::Error(format!("ERROR: Cannot open {label} potential file {}", r.file_name)));
                    }
                }
            }
            "fix" => {
                if let Some(id) = cmd.arg(0) {
                    self.fixes.insert(id.to_string(), cmd.clone());
                }
            }
            "unfix" => {
                if let Some(id) = cmd.arg(0) {
                    self.fixes.remove(id);
                }
            }
            "velocity" if cmd.arg(1) == Some("create") => self.velocity_temp = num(2),
            "dump" => {
                if let (Some(id), Some(file)) = (cmd.arg(0), cmd.arg(4)) {
                    let every = num(3).map_or(0, |v| v.max(0.0) as u64);
                    self.events.push((self.clock, Event::Create(file.to_string(), String::new())));
                    self.dumps.insert(id.to_string(), (file.to_string(), every, 0));
                }
            }
            "undump" => {
                if let Some(id) = cmd.arg(0) {
                    self.dumps.remove(id);
                }
            }
            "write_data" | "write_restart" | "write_dump" => {
                let file = if cmd.name == "write_dump" { cmd.arg(2) } else { cmd.arg(0) };
                if let Some(file) = file {
                    let body = format!("LAMMPS data file (stub runner)\n\n{} atoms\n", self.s.natoms);
                    self.events.push((self.clock, Event::Create(file.to_string(), body)));
                }
            }
            "run" => {
                let n = num(0).map_or(0, |v| v.max(0.0) as u64);
                self.simulate(n, false)?;
            }
            "minimize" => {
                let n = num(2).map_or(100, |v| (v.max(1.0) as u64).min(1000));
                self.simulate(n, true)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn stable_dt_limit(&self) -> Option<(f64, f64)> {
        // (default timestep, largest timestep the stub treats as stable)
        match self.units.as_str() {
            "metal" => Some((0.001, 0.005)),
            "real" => Some((1.0, 5.0)),
            "lj" => Some((0.005, 0.02)),
            _ => None,
        }
    }

    fn simulate(&mut self, n: u64, minimize: bool) -> Result<(), Halt> {
        let active: BTreeMap<&str, &Command> = self.fixes.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let sim = from_fixes(&active);
        let target = sim.target_temp.or(self.velocity_temp).unwrap_or(300.0);
        let start_temp = if sim.ramped { self.velocity_temp.unwrap_or(target) } else { target };
        let target_press = sim.target_press;
        let unstable = !minimize
            && match (self.stable_dt_limit(), self.dt) {
                (Some((_, limit)), Some(dt)) => dt > limit,
                _ => false,
            };
        let fail_frac = 0.3 + 0.3 * self.rng.random::<f64>();
        let natoms = self.s.natoms as f64;
        let base_pe = -3.54 * natoms;

        let start = self.step;
        let mut steps: Vec<u64> = if self.thermo_every == 0 {
            vec![start, start + n]
        } else {
            let first = start.div_ceil(self.thermo_every) * self.thermo_every;
            std::iter::once(start)
                .chain((first..=start + n).step_by(self.thermo_every as usize))
                .chain(std::iter::once(start + n))
                .collect()
        };
        steps.dedup();
        if steps.len() > self.s.max_rows_per_run {
            let m = self.s.max_rows_per_run;
            let len = steps.len();
            steps = (0..m).map(|i| steps[i * (len - 1) / (m - 1)]).collect();
            steps.dedup();
        }

        self.line("Per MPI rank memory allocation (min/avg/max) = 3.1 | 3.1 | 3.1 Mbytes");
        let header: Vec<String> = self.columns.iter().map(|c| column_header(c)).collect();
        self.line(header.iter().map(|h| format!("{h:>14}")).collect::<String>());

        // dump frames on multiples of each dump's interval
        let dump_ids: Vec<String> = self.dumps.keys().cloned().collect();
        for id in dump_ids {
            let (file, every, written) = self.dumps[&id].clone();
            let mut count = written;
            let mut s = if every == 0 { start } else { start.div_ceil(every) * every };
            while s <= start + n && count < self.s.max_frames_per_dump {
                let t = self.clock + (s - start) as f64 * self.s.seconds_per_step;
                self.events.push((t, Event::Frame(file.clone(), s, self.s.natoms)));
                count += 1;
                if every == 0 {
                    break;
                }
                s += every;
            }
            self.dumps.get_mut(&id).expect("dump present").2 = count;
        }

        for &s in &steps {
            let x = if n == 0 { 0.0 } else { (s - start) as f64 / n as f64 };
            let t = self.clock + (s - start) as f64 * self.s.seconds_per_step;
            if unstable && x >= fail_frac {
                let lost = 1 + (self.rng.random::<f64>() * 20.0) as u64;
                let msg = format!("ERROR: Lost atoms: original {} current {}", self.s.natoms, self.s.natoms - lost);
                // nothing after the failure point happened
                self.events.retain(|(et, _)| *et <= t);
                self.events.sort_by(|a, b| a.0.total_cmp(&b.0));
                self.clock = t;
                return Err(Halt::Error(msg));
            }
            let noise = |rng: &mut ChaCha8Rng| 2.0 * rng.random::<f64>() - 1.0;
            let (temp, pe) = if minimize {
                (0.0, base_pe * (1.0 + 0.02 * (-(8.0 * x)).exp()) + base_pe * 1e-6 * noise(&mut self.rng))
            } else {
                let mut temp = (start_temp + (target - start_temp) * x) * (1.0 + 0.01 * noise(&mut self.rng));
                if unstable && x > fail_frac / 2.0 {
                    temp *= (20f64.ln() * (x - fail_frac / 2.0) / (fail_frac / 2.0)).exp();
                }
                (temp, base_pe * (1.0 + 2e-5 * noise(&mut self.rng)))
            };
            let ke = 1.5 * natoms * KB_METAL * temp;
            let press = target_press.unwrap_or(0.0) + 50.0 * noise(&mut self.rng);
            let volume = natoms * 11.8;
            let values: Vec<f64> = self
                .columns
                .iter()
                .map(|c| match c.as_str() {
                    "step" => s as f64,
                    "temp" => temp,
                    "pe" | "epair" => pe,
                    "ke" => ke,
                    "etotal" => pe + ke,
                    "press" => press,
                    "vol" => volume,
                    "lx" | "ly" | "lz" => volume.cbrt(),
                    "atoms" => natoms,
                    "cpu" => t,
                    _ => 0.0,
                })
                .collect();
            let row: String = values
                .iter()
                .zip(&self.columns)
                .map(|(v, c)| if c == "step" || c == "atoms" { format!("{:>14}", *v as u64) } else { format!("{v:>14.6}") })
                .collect();
            self.events.push((t, Event::Line(row)));
        }
        self.clock += n as f64 * self.s.seconds_per_step;
        self.step = start + n;
        self.events.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.line(format!("Loop time of {:.3} on 1 procs for {n} steps with {} atoms", n as f64 * self.s.seconds_per_step, self.s.natoms));
        Ok(())
    }
}

fn column_header(keyword: &str) -> String {
    match keyword {
        "step" => "Step".into(),
        "temp" => "Temp".into(),
        "pe" => "PotEng".into(),
        "ke" => "KinEng".into(),
        "etotal" => "TotEng".into(),
        "epair" => "E_pair".into(),
        "emol" => "E_mol".into(),
        "press" => "Press".into(),
        "vol" => "Volume".into(),
        "lx" => "Lx".into(),
        "ly" => "Ly".into(),
        "lz" => "Lz".into(),
        "atoms" => "Atoms".into(),
        "cpu" => "CPU".into(),
        other => other.to_string(),
    }
}
