//! Contract checks run against a backend process: framing, ids, error
//! replies and the shape of each op's answer.

use std::time::Duration;

use serde_json::{json, Value};

use super::process::{decode_error, ProcessEndpoint};
use super::protocol::{Request, Response, PROTOCOL_VERSION};
use super::{BackendError, Endpoint};
use crate::geometry::BBox;
use crate::imaging::{crop_expand, Image};
use crate::prompting::PromptSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Detector,
    Pose,
    Segmenter,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Detector, Role::Pose, Role::Segmenter];

    pub fn op(self) -> &'static str {
        match self {
            Role::Detector => "detect",
            Role::Pose => "pose",
            Role::Segmenter => "segment",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detector" | "detect" => Ok(Role::Detector),
            "pose" => Ok(Role::Pose),
            "segmenter" | "segment" => Ok(Role::Segmenter),
            _ => Err(format!("unknown role `{s}`")),
        }
    }
}

/// Input the checks send. `image_id` is passed through for backends that
/// look scenes up by id.
#[derive(Debug, Clone)]
pub struct Probe {
    pub image: Image,
    pub image_id: Option<String>,
    pub skeleton: String,
    pub keypoints: usize,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub outcome: Result<(), String>,
}

/// Runs every check that applies to `roles` against a fresh process.
pub fn check_process(command: &str, roles: &[Role], probe: &Probe, timeout: Duration) -> Vec<Check> {
    let mut ep = match ProcessEndpoint::spawn(command, timeout) {
        Ok(ep) => ep,
        Err(e) => {
            return vec![Check {
                name: "spawn".into(),
                outcome: Err(e.to_string()),
            }]
        }
    };
    let mut checks = Vec::new();
    let mut run = |name: &str, f: &mut dyn FnMut(&mut ProcessEndpoint) -> Result<(), String>| {
        checks.push(Check {
            name: name.to_string(),
            outcome: f(&mut ep),
        });
    };
    run("handshake", &mut |ep| handshake(ep, roles, probe));
    run("ids answered in order", &mut |ep| {
        for _ in 0..3 {
            ep.call_raw(handshake_body(probe)).map_err(|e| e.to_string())?;
        }
        Ok(())
    });
    run("unknown op rejected", &mut |ep| expect_error(ep, json!({ "op": "juggle" }), Some("unknown_op")));
    run("request without op rejected", &mut |ep| expect_error(ep, json!({}), None));
    for &role in roles {
        match role {
            Role::Detector => {
                run("detect answers with valid detections", &mut |ep| detect(ep, probe, &probe.image));
                run("detect on a black image finds nobody", &mut |ep| {
                    let black = Image::filled(probe.image.width(), probe.image.height(), [0, 0, 0]);
                    match typed(ep, Request::Detect { image_id: probe.image_id.clone(), image: black })? {
                        Response::Detections(d) if d.is_empty() => Ok(()),
                        Response::Detections(d) => Err(format!("{} detections", d.len())),
                        other => Err(format!("unexpected reply {other:?}")),
                    }
                });
            }
            Role::Pose => run("pose answers one keypoint per skeleton entry", &mut |ep| pose(ep, probe)),
            Role::Segmenter => {
                run("segment answers with an image-sized mask", &mut |ep| segment(ep, probe));
                run("segment without prompts rejected", &mut |ep| {
                    let mut body = serde_json::to_value(Request::segment(
                        probe.image_id.clone(),
                        probe.image.clone(),
                        &PromptSet::default(),
                    ))
                    .expect("plain data");
                    body["positives"] = json!([]);
                    expect_error(ep, body, None)
                });
            }
        }
    }
    run("still serving after errors", &mut |ep| handshake(ep, roles, probe));
    checks
}

fn handshake_body(probe: &Probe) -> Value {
    json!({ "op": "handshake", "protocol_version": PROTOCOL_VERSION, "skeletons": [probe.skeleton] })
}

fn typed(ep: &mut ProcessEndpoint, request: Request) -> Result<Response, String> {
    ep.call(&request).map_err(|e| e.to_string())
}

fn handshake(ep: &mut ProcessEndpoint, roles: &[Role], probe: &Probe) -> Result<(), String> {
    let req = Request::Handshake {
        protocol_version: PROTOCOL_VERSION,
        skeletons: vec![probe.skeleton.clone()],
    };
    let Response::Handshake(info) = typed(ep, req)? else {
        return Err("handshake reply has the wrong shape".into());
    };
    if info.protocol_version != PROTOCOL_VERSION {
        return Err(format!("protocol version {}", info.protocol_version));
    }
    if roles.contains(&Role::Pose) && !info.skeletons.contains(&probe.skeleton) {
        return Err(format!("skeleton `{}` not offered ({:?})", probe.skeleton, info.skeletons));
    }
    if !info.ops.is_empty() {
        if let Some(r) = roles.iter().find(|r| !info.ops.iter().any(|o| o == r.op())) {
            return Err(format!("`{}` missing from advertised ops {:?}", r.op(), info.ops));
        }
    }
    Ok(())
}

fn expect_error(ep: &mut ProcessEndpoint, body: Value, code: Option<&str>) -> Result<(), String> {
    let reply = ep.call_raw(body).map_err(|e| e.to_string())?;
    if reply.get("ok") != Some(&Value::Bool(false)) {
        return Err(format!("expected an error reply, got {reply}"));
    }
    match (decode_error(&reply), code) {
        (BackendError::Remote { code: got, .. }, Some(want)) if got != want => {
            Err(format!("error code `{got}`, expected `{want}`"))
        }
        (BackendError::Remote { .. }, _) => Ok(()),
        (other, _) => Err(other.to_string()),
    }
}

fn detect(ep: &mut ProcessEndpoint, probe: &Probe, image: &Image) -> Result<(), String> {
    let req = Request::Detect {
        image_id: probe.image_id.clone(),
        image: image.clone(),
    };
    let Response::Detections(dets) = typed(ep, req)? else {
        return Err("detect reply has the wrong shape".into());
    };
    for (i, d) in dets.iter().enumerate() {
        let b = d.bbox;
        if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) || b.w < 0.0 || b.h < 0.0 {
            return Err(format!("detection {i}: bad box {:?}", b.xywh()));
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(format!("detection {i}: score {}", d.score));
        }
        if let Some(m) = &d.mask {
            if (m.width(), m.height()) != (image.width(), image.height()) {
                return Err(format!("detection {i}: mask is {}x{}", m.width(), m.height()));
            }
        }
    }
    Ok(())
}

fn pose(ep: &mut ProcessEndpoint, probe: &Probe) -> Result<(), String> {
    let (w, h) = (probe.image.width() as f64, probe.image.height() as f64);
    let bbox = BBox::new(w / 4.0, h / 4.0, w / 2.0, h / 2.0);
    let (crop, transform) = crop_expand(&probe.image, &bbox, 0.25, 0.75).map_err(|e| e.to_string())?;
    let req = Request::Pose {
        image_id: probe.image_id.clone(),
        image: crop,
        transform,
        bbox: bbox.xywh(),
        skeleton: probe.skeleton.clone(),
    };
    let Response::Keypoints(kps) = typed(ep, req)? else {
        return Err("pose reply has the wrong shape".into());
    };
    if kps.len() != probe.keypoints {
        return Err(format!("{} keypoints, expected {}", kps.len(), probe.keypoints));
    }
    if kps.iter().any(|k| !k.x.is_finite() || !k.y.is_finite()) {
        return Err("non-finite keypoint".into());
    }
    Ok(())
}

fn segment(ep: &mut ProcessEndpoint, probe: &Probe) -> Result<(), String> {
    let (w, h) = (probe.image.width(), probe.image.height());
    let prompts = PromptSet {
        positives: vec![(w as f64 / 2.0, h as f64 / 2.0)],
        ..Default::default()
    };
    let req = Request::segment(probe.image_id.clone(), probe.image.clone(), &prompts);
    let Response::Mask { mask, score } = typed(ep, req)? else {
        return Err("segment reply has the wrong shape".into());
    };
    if (mask.width(), mask.height()) != (w, h) {
        return Err(format!("mask is {}x{}, image is {w}x{h}", mask.width(), mask.height()));
    }
    if !score.is_finite() {
        return Err(format!("score {score}"));
    }
    Ok(())
}
