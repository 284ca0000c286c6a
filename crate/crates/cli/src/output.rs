use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sandpile_lab::experiments::Checks;
use sandpile_lab::tails::TailEstimate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{CliError, CliResult, OUT_DIR_ENV};

pub const TAIL_SCHEMA: &str = "sandpile-lab/tail-csv/1";
pub const RECORD_SCHEMA: &str = "sandpile-lab/records/1";
pub const RESULT_SCHEMA: &str = "sandpile-lab/result/1";
pub const MANIFEST_SCHEMA: &str = "sandpile-lab/manifest/1";

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Output directory of one command run, with the list of files written.
pub struct OutDir {
    pub dir: PathBuf,
    pub files: Vec<String>,
    started: Instant,
}

impl OutDir {
    pub fn resolve(flag: Option<&Path>) -> CliResult<Self> {
        let dir = match flag {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
        };
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(OutDir { dir, files: Vec::new(), started: Instant::now() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.path(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Pretty JSON wrapped with a schema tag.
    pub fn write_json<T: Serialize>(&mut self, name: &str, schema: &str, value: &T) -> CliResult<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            schema: &'a str,
            data: &'a T,
        }
        let wrapped = Wrapped { schema, data: value };
        let mut text = serde_json::to_string_pretty(&wrapped).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// JSON lines: a schema line, then one line per item.
    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> CliResult<()> {
        let mut text = serde_json::json!({ "schema": RECORD_SCHEMA }).to_string();
        text.push('\n');
        for it in items {
            text.push_str(&serde_json::to_string(it).map_err(|e| CliError::Config(e.to_string()))?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn write_tail(&mut self, name: &str, t: &TailEstimate) -> CliResult<()> {
        self.write(name, tail_csv(t).as_bytes())
    }
}

pub fn tail_csv(t: &TailEstimate) -> String {
    let mut s = format!(
        "# schema: {TAIL_SCHEMA} observable={} d={} L={} seed={}\nthreshold,survivors,replicas,se\n",
        t.observable, t.dim, t.half_side, t.seed
    );
    for ((th, sv), se) in t.thresholds.iter().zip(t.survivors()).zip(t.standard_errors()) {
        s.push_str(&format!("{th},{sv},{},{se}\n", t.replicas));
    }
    s
}

/// Reads a tail CSV back. Without nesting information the survivors are
/// taken to be nested, which holds for every table this tool writes.
pub fn read_tail_csv(path: &Path) -> CliResult<TailEstimate> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut observable = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (mut th, mut sv) = (Vec::new(), Vec::new());
    let mut replicas = None;
    let bad = |line: usize, what: &str| CliError::Config(format!("{}:{line}: {what}", path.display()));
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if let Some(meta) = line.strip_prefix('#') {
            if let Some(o) = meta.split_whitespace().find_map(|w| w.strip_prefix("observable=")) {
                observable = o.to_string();
            }
            continue;
        }
        if line.is_empty() || line.starts_with("threshold") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(bad(i + 1, "expected threshold,survivors,replicas[,se]"));
        }
        th.push(cols[0].parse::<f64>().map_err(|_| bad(i + 1, "bad threshold"))?);
        sv.push(cols[1].parse::<u64>().map_err(|_| bad(i + 1, "bad survivor count"))?);
        let r = cols[2].parse::<u64>().map_err(|_| bad(i + 1, "bad replica count"))?;
        if replicas.is_some_and(|x| x != r) {
            return Err(bad(i + 1, "replica count changes between rows"));
        }
        replicas = Some(r);
    }
    let replicas = replicas.ok_or_else(|| CliError::Config(format!("{}: no data rows", path.display())))?;
    Ok(TailEstimate::from_survivors(&observable, th, &sv, replicas)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicaSpan {
    pub start: u64,
    pub end: u64,
    /// Replicas taken from a checkpoint.
    pub resumed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub command: String,
    pub version: String,
    pub config: Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Random stream families; replica `i` of a family uses stream `i`.
    pub streams: Vec<String>,
    pub workers: usize,
    pub replicas: Option<ReplicaSpan>,
    pub wall_time_seconds: f64,
    pub checks: Checks,
    pub observations: Checks,
    pub outputs: Vec<String>,
    pub status: String,
}

/// The failed checks, for error messages.
pub fn print_checks(c: &Checks) -> String {
    c.0.iter()
        .filter(|(_, v)| v.failed > 0)
        .map(|(k, v)| format!("{k}: {}/{} failed", v.failed, v.checked))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn flush_stdout() {
    let _ = std::io::stdout().flush();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_csv_round_trips() {
        let mut t = TailEstimate::new("radius", vec![1.0, 2.0, 4.0], true, 5, 2, 8).unwrap();
        for v in [0.5, 1.0, 3.0, 4.0, 9.0] {
            t.record_value(v);
        }
        let dir = tempfile::TempDir::new().unwrap();
        let mut out = OutDir::resolve(Some(dir.path())).unwrap();
        out.write_tail("radius.csv", &t).unwrap();
        assert_eq!(out.files, vec!["radius.csv"]);
        let text = fs::read_to_string(dir.path().join("radius.csv")).unwrap();
        assert!(text.starts_with("# schema: sandpile-lab/tail-csv/1 observable=radius d=2 L=8 seed=5\n"));
        let back = read_tail_csv(&dir.path().join("radius.csv")).unwrap();
        assert_eq!(back.observable, "radius");
        assert_eq!(back.survivors(), vec![4, 3, 2]);
        assert_eq!(back.replicas, 5);
        assert!(!dir.path().join("radius.partial").exists());
    }

    #[test]
    fn malformed_tail_csv_is_a_config_error() {
        let dir = tempfile::TempDir::new().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "threshold,survivors,replicas\n1,5,10\n2,7,10\n").unwrap();
        assert!(matches!(read_tail_csv(&p), Err(CliError::Config(_))));
        fs::write(&p, "1,5,10\n2,3,11\n").unwrap();
        assert!(matches!(read_tail_csv(&p), Err(CliError::Config(_))));
    }

    #[test]
    fn only_failed_checks_are_listed() {
        let mut c = Checks::default();
        c.record("a", true);
        c.record("b", false);
        assert_eq!(print_checks(&c), "b: 1/1 failed");
    }
}
