//! Backend side of the protocol: answers framed requests on a byte stream.

use std::io::{self, BufRead, Write};

use serde_json::Value;

use super::protocol::{encode_error, encode_ok, read_frame, write_frame, Request, WireError, KNOWN_OPS};
use super::{BackendError, Endpoint};

fn wire_error(code: &str, message: impl Into<String>) -> WireError {
    WireError {
        code: code.to_string(),
        message: message.into(),
    }
}

/// Answers every request read from `input` until end of stream. Each request
/// gets exactly one reply carrying its `id`; malformed or unknown requests
/// get a structured error reply instead.
pub fn serve<R: BufRead, W: Write>(handler: &mut dyn Endpoint, input: &mut R, output: &mut W) -> io::Result<()> {
    while let Some(frame) = read_frame(input)? {
        let reply = answer(handler, &frame);
        write_frame(output, &reply)?;
    }
    Ok(())
}

fn answer(handler: &mut dyn Endpoint, frame: &[u8]) -> Vec<u8> {
    let value: Value = match serde_json::from_slice(frame) {
        Ok(v) => v,
        Err(e) => return encode_error(None, &wire_error("bad_request", format!("invalid JSON: {e}"))),
    };
    let Some(id) = value.get("id").and_then(Value::as_u64) else {
        return encode_error(None, &wire_error("bad_request", "missing numeric `id`"));
    };
    let op = value.get("op").and_then(Value::as_str).unwrap_or("");
    if !KNOWN_OPS.contains(&op) {
        return encode_error(Some(id), &wire_error("unknown_op", format!("unknown op `{op}`")));
    }
    let request: Request = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return encode_error(Some(id), &wire_error("bad_request", e.to_string())),
    };
    match handler.call(&request) {
        Ok(resp) => encode_ok(id, &resp),
        Err(BackendError::Remote { code, message }) => encode_error(Some(id), &wire_error(&code, message)),
        Err(e) => encode_error(Some(id), &wire_error("internal", e.to_string())),
    }
}
