//! Checkpoints of replicated runs.
//!
//! A checkpoint stores the accumulated state after replicas `0..done`.
//! Replica streams are addressed by index, so continuing at `done` gives
//! exactly the result of an uninterrupted run. The file is one header line
//! `sandpile-checkpoint/1 sha256=<hex>` followed by the JSON payload; the
//! digest covers the payload bytes.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::McOpts;
use crate::output::{io_err, write_atomic};
use crate::{CliError, CliResult};

const HEADER: &str = "sandpile-checkpoint/1";

/// Keys that may change between a checkpoint and its resumption.
const UNHASHED: &[&str] = &["replicas", "checkpoint", "checkpoint_every", "resume", "window"];

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub done: u64,
    pub state: T,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn strip(v: &mut Value) {
    if let Value::Object(m) = v {
        for k in UNHASHED {
            m.remove(*k);
        }
        for x in m.values_mut() {
            strip(x);
        }
    }
}

/// Digest of everything in the configuration that determines the streams
/// and the accumulated state.
pub fn config_hash(command: &str, config: &Value) -> String {
    let mut v = config.clone();
    strip(&mut v);
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(v.to_string().as_bytes());
    h.update([0]);
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    hex(&h.finalize())
}

pub fn save<T: Serialize>(path: &Path, cp: &Checkpoint<T>) -> CliResult<()> {
    let payload = serde_json::to_string(cp).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let digest = hex(&Sha256::digest(payload.as_bytes()));
    write_atomic(path, format!("{HEADER} sha256={digest}\n{payload}").as_bytes())
}

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<Checkpoint<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (head, payload) = text
        .split_once('\n')
        .ok_or_else(|| CliError::Checkpoint(format!("{}: truncated checkpoint", path.display())))?;
    let digest = head
        .strip_prefix(HEADER)
        .and_then(|r| r.trim().strip_prefix("sha256="))
        .ok_or_else(|| CliError::Checkpoint(format!("{}: not a checkpoint file", path.display())))?;
    if hex(&Sha256::digest(payload.as_bytes())) != digest {
        return Err(CliError::Checkpoint(format!("{}: checksum mismatch", path.display())));
    }
    serde_json::from_str(payload).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Runs replicas `0..mc.replicas` in chunks, resuming and checkpointing as
/// configured. Returns the state and the number of resumed replicas.
pub fn run_checkpointed<T, F, M>(
    mc: &McOpts,
    command: &str,
    config: &Value,
    mut run: F,
    merge: M,
) -> CliResult<(T, u64)>
where
    T: Serialize + DeserializeOwned,
    F: FnMut(Range<u64>) -> sandpile_lab::Result<T>,
    M: Fn(T, T) -> sandpile_lab::Result<T>,
{
    if mc.replicas == 0 {
        return Err(CliError::Config("--replicas must be at least 1".into()));
    }
    let hash = config_hash(command, config);
    let (mut state, mut done) = match &mc.resume {
        Some(p) => {
            let cp: Checkpoint<T> = load(p)?;
            if cp.version != env!("CARGO_PKG_VERSION") {
                return Err(CliError::Checkpoint(format!("checkpoint written by version {}", cp.version)));
            }
            if cp.command != command || cp.config_hash != hash {
                return Err(CliError::Checkpoint("checkpoint was written for a different configuration".into()));
            }
            if cp.done > mc.replicas {
                return Err(CliError::Checkpoint(format!(
                    "checkpoint holds {} replicas, more than the requested {}",
                    cp.done, mc.replicas
                )));
            }
            (Some(cp.state), cp.done)
        }
        None => (None, 0),
    };
    let resumed = done;
    let chunk = if mc.checkpoint.is_some() { mc.checkpoint_every.max(1) } else { mc.replicas };
    while done < mc.replicas || state.is_none() {
        let end = (done + chunk).min(mc.replicas);
        let part = run(done..end)?;
        state = Some(match state {
            Some(s) => merge(s, part)?,
            None => part,
        });
        done = end;
        if let Some(p) = &mc.checkpoint {
            let cp = Checkpoint {
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                config_hash: hash.clone(),
                done,
                state: state.take().expect("state was just set"),
            };
            save(p, &cp)?;
            state = Some(cp.state);
        }
    }
    Ok((state.expect("at least one chunk ran"), resumed))
}
