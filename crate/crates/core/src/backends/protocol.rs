//! Wire messages exchanged with backend processes.
//!
//! Every message is one UTF-8 JSON document preceded by its byte length in
//! ASCII decimal and a newline. Requests carry `id` and `op`; replies echo
//! `id` and carry `ok`. See `docs/PROTOCOL.md` for the field list.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::geometry::{BBox, BinaryMask, Keypoint};
use crate::imaging::{CropTransform, Image};
use crate::prompting::PromptSet;

use super::BackendError;

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on a single frame.
pub const MAX_FRAME_BYTES: usize = 256 << 20;

pub const KNOWN_OPS: [&str; 4] = ["handshake", "detect", "pose", "segment"];

mod b64png {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::imaging::Image;

    pub fn serialize<S: Serializer>(img: &Image, s: S) -> Result<S::Ok, S::Error> {
        let text = img.to_base64_png().map_err(serde::ser::Error::custom)?;
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Image, D::Error> {
        let text = String::deserialize(d)?;
        Image::from_base64(&text).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Handshake {
        protocol_version: u32,
        skeletons: Vec<String>,
    },
    Detect {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image_id: Option<String>,
        #[serde(with = "b64png")]
        image: Image,
    },
    /// `image` is the conditioned crop; `bbox` is in full-image coordinates.
    Pose {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image_id: Option<String>,
        #[serde(with = "b64png")]
        image: Image,
        transform: CropTransform,
        bbox: [f64; 4],
        skeleton: String,
    },
    Segment {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image_id: Option<String>,
        #[serde(with = "b64png")]
        image: Image,
        positives: Vec<[f64; 2]>,
        #[serde(default)]
        negatives: Vec<[f64; 2]>,
        #[serde(default)]
        bbox: Option<[f64; 4]>,
    },
}

impl Request {
    pub fn op(&self) -> &'static str {
        match self {
            Request::Handshake { .. } => "handshake",
            Request::Detect { .. } => "detect",
            Request::Pose { .. } => "pose",
            Request::Segment { .. } => "segment",
        }
    }

    pub fn segment(image_id: Option<String>, image: Image, prompts: &PromptSet) -> Self {
        Request::Segment {
            image_id,
            image,
            positives: prompts.positives.iter().map(|&(x, y)| [x, y]).collect(),
            negatives: prompts.negatives.iter().map(|&(x, y)| [x, y]).collect(),
            bbox: prompts.bbox.map(|b| b.xywh()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeInfo {
    pub protocol_version: u32,
    pub skeletons: Vec<String>,
    #[serde(default)]
    pub emits_masks: bool,
    #[serde(default)]
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(with = "xywh")]
    pub bbox: BBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<BinaryMask>,
}

mod xywh {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::geometry::BBox;

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(b.xywh())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        Ok(BBox::from_xywh(<[f64; 4]>::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Handshake(HandshakeInfo),
    Detections(Vec<Detection>),
    /// Keypoints in crop coordinates.
    Keypoints(Vec<Keypoint>),
    Mask { mask: BinaryMask, score: f64 },
}

impl Response {
    /// Payload fields merged into the reply object.
    pub fn to_payload(&self) -> Value {
        match self {
            Response::Handshake(info) => serde_json::to_value(info).expect("plain data"),
            Response::Detections(d) => json!({ "detections": d }),
            Response::Keypoints(k) => {
                json!({ "keypoints": k.iter().map(|k| [k.x, k.y, k.confidence]).collect::<Vec<_>>() })
            }
            Response::Mask { mask, score } => json!({ "mask": mask, "score": score }),
        }
    }

    /// Decodes a successful reply to a request of kind `op`.
    pub fn from_payload(op: &str, payload: Value) -> Result<Self, BackendError> {
        fn field<T: for<'de> Deserialize<'de>>(v: &Value, name: &str) -> Result<T, BackendError> {
            let raw = v
                .get(name)
                .ok_or_else(|| BackendError::Protocol(format!("reply lacks `{name}`")))?;
            serde_json::from_value(raw.clone())
                .map_err(|e| BackendError::Protocol(format!("field `{name}`: {e}")))
        }
        Ok(match op {
            "handshake" => Response::Handshake(
                serde_json::from_value(payload)
                    .map_err(|e| BackendError::Protocol(format!("handshake reply: {e}")))?,
            ),
            "detect" => Response::Detections(field(&payload, "detections")?),
            "pose" => {
                let raw: Vec<[f64; 3]> = field(&payload, "keypoints")?;
                Response::Keypoints(raw.iter().map(|k| Keypoint::new(k[0], k[1], k[2])).collect())
            }
            "segment" => Response::Mask {
                mask: field(&payload, "mask")?,
                score: field(&payload, "score")?,
            },
            other => return Err(BackendError::Protocol(format!("unknown op `{other}`"))),
        })
    }
}

/// Structured error carried by an `"ok": false` reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

pub fn encode_request(id: u64, request: &Request) -> Result<Vec<u8>, BackendError> {
    let mut v = serde_json::to_value(request)
        .map_err(|e| BackendError::Protocol(format!("encoding request: {e}")))?;
    v["id"] = json!(id);
    Ok(serde_json::to_vec(&v).expect("json value"))
}

pub fn encode_ok(id: u64, response: &Response) -> Vec<u8> {
    let mut v = response.to_payload();
    v["id"] = json!(id);
    v["ok"] = json!(true);
    serde_json::to_vec(&v).expect("json value")
}

pub fn encode_error(id: Option<u64>, error: &WireError) -> Vec<u8> {
    serde_json::to_vec(&json!({ "id": id, "ok": false, "error": error })).expect("json value")
}

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    writeln!(w, "{}", body.len())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on clean end of stream.
pub fn read_frame<R: BufRead>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut header = String::new();
    if r.read_line(&mut header)? == 0 {
        return Ok(None);
    }
    let len: usize = header
        .trim_end_matches(['\n', '\r'])
        .parse()
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, format!("bad frame header {header:?}")))?;
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{\"a\":1}").unwrap();
        write_frame(&mut buf, "{\"é\":2}".as_bytes()).unwrap();
        let mut r = io::Cursor::new(buf);
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"{\"a\":1}");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), "{\"é\":2}".as_bytes());
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn bad_header() {
        let mut r = io::Cursor::new(b"abc\n{}".to_vec());
        assert!(read_frame(&mut r).is_err());
        let mut r = io::Cursor::new(b"10\n{}".to_vec());
        assert!(read_frame(&mut r).is_err());
    }

    #[test]
    fn request_layout() {
        let img = Image::filled(2, 2, [9, 9, 9]);
        let bytes = encode_request(
            3,
            &Request::Detect {
                image_id: None,
                image: img.clone(),
            },
        )
        .unwrap();
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["id"], 3);
        assert_eq!(v["op"], "detect");
        let back: Request = serde_json::from_value(v).unwrap();
        assert_eq!(back, Request::Detect { image_id: None, image: img });
    }

    #[test]
    fn reply_payload_roundtrip() {
        let mut m = BinaryMask::empty(4, 3);
        m.set(1, 1, true);
        let resp = Response::Detections(vec![Detection {
            bbox: BBox::new(1.0, 1.0, 1.0, 1.0),
            score: 0.5,
            mask: Some(m),
        }]);
        let v: Value = serde_json::from_slice(&encode_ok(9, &resp)).unwrap();
        assert_eq!(v["ok"], true);
        assert_eq!(Response::from_payload("detect", v).unwrap(), resp);
        let kp = Response::Keypoints(vec![Keypoint::new(1.0, 2.0, 0.5)]);
        assert_eq!(Response::from_payload("pose", kp.to_payload()).unwrap(), kp);
        assert!(Response::from_payload("detect", json!({"x": 1})).is_err());
    }

    #[test]
    fn coordinates_survive_the_wire_exactly() {
        let mut x = 0.1f64;
        let kps: Vec<Keypoint> = (0..200)
            .map(|i| {
                x = (x * 7.31 + i as f64 / 3.0) % 500.0;
                Keypoint::new(x, 54.52000000000001 + x / 7.0, 0.9)
            })
            .collect();
        let resp = Response::Keypoints(kps);
        let bytes = encode_ok(1, &resp);
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(Response::from_payload("pose", v).unwrap(), resp);
    }
}
