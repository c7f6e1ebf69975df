//! Line protocol for oracles living in another process.
//!
//! Each request is one line `STEP x_1 … x_n ν_1 … ν_m d_1 … d_p`; the answer is
//! either `OK x'_1 … x'_n` or `ERR message`. Requests may be pipelined: answers
//! come back in request order.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crate::model::{BlackBoxSystem, Oracle, OracleError, Query};

/// Requests written before answers are collected.
const BATCH: usize = 1024;

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    /// Set once the stream is out of step; every later call fails with it.
    broken: Option<OracleError>,
}

/// Oracle backed by a subprocess speaking the line protocol on stdin/stdout.
pub struct ExternalOracle {
    command: String,
    timeout: Duration,
    channel: Mutex<Channel>,
}

impl std::fmt::Debug for ExternalOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalOracle")
            .field("command", &self.command)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl ExternalOracle {
    pub fn spawn(command: &str, args: &[String], timeout: Duration) -> Result<Self, OracleError> {
        let mut child = Command::new(command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OracleError::Io(format!("cannot start {command}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| OracleError::Io("child has no stdout".into()))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            timeout,
            channel: Mutex::new(Channel {
                child,
                stdin,
                lines: rx,
                broken: None,
            }),
        })
    }

    fn exchange(
        &self,
        ch: &mut Channel,
        queries: &[Query],
    ) -> Result<Vec<Result<Vec<f64>, OracleError>>, OracleError> {
        let stdin = ch
            .stdin
            .as_mut()
            .ok_or_else(|| OracleError::Io("oracle input is closed".into()))?;
        let mut buf = String::new();
        for q in queries {
            buf.push_str(&format_request(q));
            buf.push('\n');
        }
        stdin
            .write_all(buf.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| OracleError::Io(format!("writing to {}: {e}", self.command)))?;
        let mut out = Vec::with_capacity(queries.len());
        for _ in queries {
            let line = match ch.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => {
                    return Err(OracleError::Io(format!(
                        "reading from {}: {e}",
                        self.command
                    )))
                }
                Err(RecvTimeoutError::Timeout) => return Err(OracleError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(OracleError::Protocol(format!(
                        "{} closed its output",
                        self.command
                    )))
                }
            };
            out.push(parse_response(&line));
        }
        Ok(out)
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            ch.stdin.take();
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

impl Oracle for ExternalOracle {
    fn step(
        &self,
        state: &[f64],
        input: &[f64],
        disturbance: &[f64],
    ) -> Result<Vec<f64>, OracleError> {
        let q = Query {
            state: state.to_vec(),
            input: input.to_vec(),
            disturbance: disturbance.to_vec(),
        };
        Ok(self.step_batch(std::slice::from_ref(&q))?.remove(0))
    }

    fn step_batch(&self, queries: &[Query]) -> Result<Vec<Vec<f64>>, OracleError> {
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| OracleError::Io("oracle channel poisoned".into()))?;
        if let Some(e) = &ch.broken {
            return Err(e.clone());
        }
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(BATCH) {
            let answers = match self.exchange(&mut ch, chunk) {
                Ok(a) => a,
                Err(e) => {
                    ch.broken = Some(e.clone());
                    return Err(e);
                }
            };
            for a in answers {
                out.push(a?);
            }
        }
        Ok(out)
    }
}

pub fn format_request(q: &Query) -> String {
    let mut s = String::from("STEP");
    for v in q.state.iter().chain(&q.input).chain(&q.disturbance) {
        s.push(' ');
        s.push_str(&v.to_string());
    }
    s
}

pub fn parse_response(line: &str) -> Result<Vec<f64>, OracleError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(OracleError::Protocol("empty response".into()));
    }
    let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    match head {
        "ERR" => Err(OracleError::Remote(rest.trim().to_string())),
        "OK" => {
            let vals = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| OracleError::Protocol(format!("malformed response {line:?}")))?;
            if vals.is_empty() {
                return Err(OracleError::Protocol("response carries no values".into()));
            }
            Ok(vals)
        }
        _ => Err(OracleError::Protocol(format!(
            "malformed response {line:?}"
        ))),
    }
}

fn answer(sys: &BlackBoxSystem, line: &str, strict: bool) -> String {
    let sig = sys.signature();
    let (n, m, p) = (sig.state_dim, sig.input_dim(), sig.disturbance_dim);
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("STEP") {
        return format!("ERR unknown request {:?}", line.trim());
    }
    let vals: Vec<f64> = match tokens.map(str::parse::<f64>).collect() {
        Ok(v) => v,
        Err(e) => return format!("ERR bad number: {e}"),
    };
    if vals.len() != n + m + p {
        return format!("ERR expected {} values, got {}", n + m + p, vals.len());
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return "ERR non-finite value".into();
    }
    let (x, rest) = vals.split_at(n);
    let (u, d) = rest.split_at(m);
    if strict
        && (!sig.state_box.contains(x)
            || !sig.inputs.contains(u)
            || !sig.disturbance_box.contains(d))
    {
        return "ERR out-of-domain".into();
    }
    match sys.query(x, u, d) {
        Ok(next) => {
            let mut s = String::from("OK");
            for v in next {
                s.push(' ');
                s.push_str(&v.to_string());
            }
            s
        }
        Err(e) => format!("ERR {e}"),
    }
}

/// Answers requests from `input` until end of stream; returns the number served.
/// With `strict`, requests outside `X × U × D` get `ERR out-of-domain`.
pub fn serve<R: BufRead, W: Write>(
    sys: &BlackBoxSystem,
    input: R,
    mut output: W,
    strict: bool,
) -> std::io::Result<usize> {
    let mut served = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", answer(sys, &line, strict))?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}
