//! Backend running as a child process speaking the framed protocol on its
//! standard streams.

use std::io::{BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::Value;

use super::protocol::{read_frame, write_frame, Request, Response, WireError};
use super::{BackendError, Endpoint};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

type Frame = std::io::Result<Option<Vec<u8>>>;

pub struct ProcessEndpoint {
    command: String,
    child: Child,
    stdin: BufWriter<ChildStdin>,
    replies: Receiver<Frame>,
    reader: Option<JoinHandle<()>>,
    next_id: u64,
    timeout: Duration,
}

impl ProcessEndpoint {
    /// Starts `command_line`, split with POSIX shell quoting rules.
    pub fn spawn(command_line: &str, timeout: Duration) -> Result<Self, BackendError> {
        let argv = shlex::split(command_line)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| BackendError::Protocol(format!("cannot parse command line {command_line:?}")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            loop {
                let frame = read_frame(&mut r);
                let stop = !matches!(frame, Ok(Some(_)));
                if tx.send(frame).is_err() || stop {
                    break;
                }
            }
        });
        Ok(ProcessEndpoint {
            command: command_line.to_string(),
            child,
            stdin,
            replies: rx,
            reader: Some(reader),
            next_id: 1,
            timeout,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl ProcessEndpoint {
    /// Sends `request` (any JSON object; `id` is filled in) and returns the
    /// reply object after checking that it answers this request.
    pub fn call_raw(&mut self, mut request: Value) -> Result<Value, BackendError> {
        let id = self.next_id;
        self.next_id += 1;
        let obj = request
            .as_object_mut()
            .ok_or_else(|| BackendError::Protocol("request must be a JSON object".into()))?;
        obj.insert("id".into(), Value::from(id));
        let body = serde_json::to_vec(&request).expect("json value");
        write_frame(&mut self.stdin, &body)?;
        let frame = match self.replies.recv_timeout(self.timeout) {
            Ok(frame) => frame?,
            Err(RecvTimeoutError::Timeout) => return Err(BackendError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => None,
        };
        let frame = frame.ok_or_else(|| {
            BackendError::Protocol(format!("`{}` closed its output", self.command))
        })?;
        let reply: Value = serde_json::from_slice(&frame)
            .map_err(|e| BackendError::Protocol(format!("reply is not JSON: {e}")))?;
        if reply.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(BackendError::Protocol(format!(
                "reply id {} does not match request id {id}",
                reply.get("id").unwrap_or(&Value::Null)
            )));
        }
        Ok(reply)
    }
}

impl Endpoint for ProcessEndpoint {
    fn call(&mut self, request: &Request) -> Result<Response, BackendError> {
        let body = serde_json::to_value(request)
            .map_err(|e| BackendError::Protocol(format!("encoding request: {e}")))?;
        let mut reply = self.call_raw(body)?;
        match reply.get("ok").and_then(Value::as_bool) {
            Some(true) => {
                if let Some(obj) = reply.as_object_mut() {
                    obj.remove("id");
                    obj.remove("ok");
                }
                Response::from_payload(request.op(), reply)
            }
            Some(false) => Err(decode_error(&reply)),
            None => Err(BackendError::Protocol("reply lacks boolean `ok`".into())),
        }
    }
}

/// The structured error of an `"ok": false` reply.
pub fn decode_error(reply: &Value) -> BackendError {
    match reply
        .get("error")
        .cloned()
        .and_then(|e| serde_json::from_value::<WireError>(e).ok())
    {
        Some(err) => BackendError::Remote {
            code: err.code,
            message: err.message,
        },
        None => BackendError::Protocol("error reply lacks `error`".into()),
    }
}

impl Drop for ProcessEndpoint {
    fn drop(&mut self) {
        let _ = self.stdin.flush();
        let _ = self.child.kill();
        let _ = self.child.wait();
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}
