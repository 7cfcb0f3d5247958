//! Framed binary messages exchanged with remote generators.
//!
//! Request body:
//!
//! ```text
//! u32 LE header length | UTF-8 JSON header | [init: W*H*3 f32 LE][validity: W*H u8 0/1] | [condition: W*H u8 0/255]
//! ```
//!
//! Response body:
//!
//! ```text
//! u32 LE header length | JSON {"status":"ok"} or {"status":"error","message":...} | [W*H*3 f32 LE when ok]
//! ```

use serde::{Deserialize, Serialize};

use super::{GenInput, GenMode};
use crate::error::{Error, Result};
use crate::guidance::EdgeMap;
use crate::scene::Frame;

/// Largest accepted message body.
pub const MAX_BODY_BYTES: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestHeader {
    pub width: usize,
    pub height: usize,
    pub t0: f64,
    pub prompt: String,
    pub seed: u64,
    pub mode: String,
    pub has_init: bool,
    pub has_condition: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

fn frame_image_bytes(frame: &Frame, out: &mut Vec<u8>) {
    for p in &frame.pixels {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
}

fn read_image(bytes: &[u8], width: usize, height: usize) -> Vec<[f64; 3]> {
    bytes
        .chunks_exact(12)
        .take(width * height)
        .map(|px| {
            let c = |k: usize| f32::from_le_bytes(px[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            [c(0), c(1), c(2)]
        })
        .collect()
}

fn frame_with_header(header: &[u8], payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + header.len() + payload_len);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out
}

/// Splits a body into its JSON header bytes and the remaining payload.
fn split_header(body: &[u8]) -> Result<(&[u8], &[u8])> {
    if body.len() > MAX_BODY_BYTES {
        return Err(Error::Protocol(format!(
            "body of {} bytes exceeds the {} byte limit",
            body.len(),
            MAX_BODY_BYTES
        )));
    }
    if body.len() < 4 {
        return Err(Error::Protocol(format!(
            "body of {} bytes has no length prefix",
            body.len()
        )));
    }
    let len = u32::from_le_bytes(body[..4].try_into().unwrap()) as usize;
    if len > body.len() - 4 {
        return Err(Error::Protocol(format!(
            "header length {len} exceeds the {} bytes that follow",
            body.len() - 4
        )));
    }
    Ok((&body[4..4 + len], &body[4 + len..]))
}

pub fn request_header(input: &GenInput) -> RequestHeader {
    let (width, height) = input.dims();
    RequestHeader {
        width,
        height,
        t0: input.t0,
        prompt: input.prompt.clone(),
        seed: input.seed,
        mode: input.mode.as_str().into(),
        has_init: input.init.is_some(),
        has_condition: true,
    }
}

pub fn encode_request(input: &GenInput) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&request_header(input))
        .map_err(|e| Error::Protocol(format!("cannot encode header: {e}")))?;
    let (w, h) = input.dims();
    let mut out = frame_with_header(&header, w * h * 14);
    if let Some(init) = &input.init {
        if init.dims() != (w, h) {
            return Err(Error::Shape(format!(
                "init is {:?} but condition is {:?}",
                init.dims(),
                (w, h)
            )));
        }
        frame_image_bytes(init, &mut out);
        out.extend((0..w * h).map(|i| init.is_valid(i) as u8));
    }
    out.extend_from_slice(&input.condition.to_bytes());
    Ok(out)
}

/// Inverse of [`encode_request`]. The condition is required.
pub fn decode_request(body: &[u8]) -> Result<GenInput> {
    let (header, payload) = split_header(body)?;
    let header: RequestHeader = serde_json::from_slice(header)
        .map_err(|e| Error::Protocol(format!("malformed request header: {e}")))?;
    let mode = match header.mode.as_str() {
        "first" => GenMode::First,
        "propagate" => GenMode::Propagate,
        other => return Err(Error::Protocol(format!("unknown mode {other:?}"))),
    };
    if !header.has_condition {
        return Err(Error::Protocol("request carries no condition".into()));
    }
    let n = header
        .width
        .checked_mul(header.height)
        .filter(|&n| n <= MAX_BODY_BYTES)
        .ok_or_else(|| Error::Protocol("image dimensions are too large".into()))?;
    let expected = n + if header.has_init { n * 13 } else { 0 };
    if payload.len() != expected {
        return Err(Error::Protocol(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let (init, cond) = if header.has_init {
        let pixels = read_image(&payload[..n * 12], header.width, header.height);
        let valid = payload[n * 12..n * 13].iter().map(|&b| b != 0).collect();
        let frame = Frame::new(header.width, header.height, pixels).with_validity(valid);
        (Some(frame), &payload[n * 13..])
    } else {
        (None, payload)
    };
    Ok(GenInput {
        init,
        condition: EdgeMap::from_bytes(header.width, header.height, cond)?,
        prompt: header.prompt,
        t0: header.t0,
        seed: header.seed,
        mode,
    })
}

pub fn encode_ok_response(frame: &Frame) -> Vec<u8> {
    let header = br#"{"status":"ok"}"#;
    let mut out = frame_with_header(header, frame.pixels.len() * 12);
    frame_image_bytes(frame, &mut out);
    out
}

pub fn encode_error_response(message: &str) -> Vec<u8> {
    let header = serde_json::to_vec(&ResponseHeader {
        status: "error".into(),
        message: Some(message.into()),
    })
    .expect("response header serializes");
    frame_with_header(&header, 0)
}

/// Decodes a response for a `width` x `height` request. A well-formed error
/// response becomes [`Error::Remote`] carrying the server's message.
pub fn decode_response(body: &[u8], width: usize, height: usize) -> Result<Frame> {
    let (header, payload) = split_header(body)?;
    let header: ResponseHeader = serde_json::from_slice(header)
        .map_err(|e| Error::Protocol(format!("malformed response header: {e}")))?;
    match header.status.as_str() {
        "ok" => {
            let expected = width * height * 12;
            if payload.len() != expected {
                return Err(Error::Protocol(format!(
                    "response image has {} bytes, expected {expected}",
                    payload.len()
                )));
            }
            Ok(Frame::new(
                width,
                height,
                read_image(payload, width, height),
            ))
        }
        "error" => Err(Error::Remote(
            header
                .message
                .unwrap_or_else(|| "unspecified server error".into()),
        )),
        other => Err(Error::Protocol(format!(
            "unknown response status {other:?}"
        ))),
    }
}
