use std::io::Cursor;
use std::time::Duration;

use bmp_core::backends::protocol::{encode_request, read_frame, write_frame};
use bmp_core::backends::server::serve;
use bmp_core::backends::{
    BackendError, BackendSet, Endpoint, ProcessEndpoint, Request, Response, SyntheticBackend,
};
use bmp_core::geometry::BBox;
use bmp_core::imaging::{crop_expand, CropTransform};
use bmp_core::prompting::PromptSet;
use bmp_core::scenegen::occlusion_pair;
use serde_json::{json, Value};

fn frames(bodies: &[Vec<u8>]) -> Cursor<Vec<u8>> {
    let mut buf = Vec::new();
    for b in bodies {
        write_frame(&mut buf, b).unwrap();
    }
    Cursor::new(buf)
}

fn replies(out: Vec<u8>) -> Vec<Value> {
    let mut r = Cursor::new(out);
    let mut v = Vec::new();
    while let Some(f) = read_frame(&mut r).unwrap() {
        v.push(serde_json::from_slice(&f).unwrap());
    }
    v
}

#[test]
fn every_request_answered_once_in_order() {
    let (scene, _) = occlusion_pair(1, 0.7);
    let image = scene.render();
    let (crop, transform) = crop_expand(&image, &BBox::new(100.0, 40.0, 60.0, 150.0), 0.25, 0.75).unwrap();
    let requests = [
        Request::Handshake { protocol_version: 1, skeletons: vec!["coco".into()] },
        Request::Detect { image_id: None, image: image.clone() },
        Request::Pose {
            image_id: None,
            image: crop,
            transform,
            bbox: [100.0, 40.0, 60.0, 150.0],
            skeleton: "coco".into(),
        },
        Request::segment(None, image, &PromptSet { positives: vec![(160.0, 60.0)], ..Default::default() }),
    ];
    let mut bodies: Vec<Vec<u8>> = requests
        .iter()
        .enumerate()
        .map(|(i, r)| encode_request(10 + i as u64, r).unwrap())
        .collect();
    bodies.push(serde_json::to_vec(&json!({"id": 20, "op": "train"})).unwrap());
    bodies.push(b"{not json".to_vec());
    bodies.push(serde_json::to_vec(&json!({"op": "detect"})).unwrap());
    bodies.push(serde_json::to_vec(&json!({"id": 21, "op": "detect", "image": "!!"})).unwrap());
    let mut input = frames(&bodies);
    let mut out = Vec::new();
    let mut backend = SyntheticBackend::single(scene);
    serve(&mut backend, &mut input, &mut out).unwrap();
    let r = replies(out);
    assert_eq!(r.len(), bodies.len());
    for (i, op) in ["handshake", "detect", "pose", "segment"].iter().enumerate() {
        assert_eq!(r[i]["id"], 10 + i as u64);
        assert_eq!(r[i]["ok"], true, "{op}: {}", r[i]);
        let mut payload = r[i].clone();
        payload.as_object_mut().unwrap().remove("id");
        Response::from_payload(op, payload).unwrap();
    }
    assert_eq!(r[4]["id"], 20);
    assert_eq!(r[4]["ok"], false);
    assert_eq!(r[4]["error"]["code"], "unknown_op");
    assert_eq!(r[5]["error"]["code"], "bad_request");
    assert_eq!(r[5]["id"], Value::Null);
    assert_eq!(r[6]["error"]["code"], "bad_request");
    assert_eq!(r[7]["id"], 21);
    assert_eq!(r[7]["error"]["code"], "bad_request");
}

#[test]
fn remote_errors_carry_their_code() {
    let (scene, _) = occlusion_pair(1, 0.7);
    let body = encode_request(
        1,
        &Request::Detect { image_id: Some("nope".into()), image: scene.render() },
    )
    .unwrap();
    let mut out = Vec::new();
    serve(&mut SyntheticBackend::single(scene), &mut frames(&[body]), &mut out).unwrap();
    let r = replies(out);
    assert_eq!(r[0]["error"]["code"], "unknown_scene");
}

#[test]
fn identity_transform_round_trip() {
    let t = CropTransform::identity(50, 40);
    assert_eq!(t.to_image(12.25, 7.5), (12.25, 7.5));
    let t = CropTransform { x0: -5, y0: 9, width: 10, height: 10 };
    let (u, v) = t.to_crop(3.5, 12.0);
    assert_eq!(t.to_image(u, v), (3.5, 12.0));
}

#[test]
fn missing_program_is_a_transport_error() {
    let err = ProcessEndpoint::spawn("/definitely/not/here --flag", Duration::from_secs(1)).err().unwrap();
    assert!(matches!(err, BackendError::Transport(_)));
    assert!(ProcessEndpoint::spawn("'unterminated", Duration::from_secs(1)).is_err());
    assert!(ProcessEndpoint::spawn("", Duration::from_secs(1)).is_err());
}

#[test]
fn echoing_process_is_a_protocol_error() {
    // `cat` sends the request back: right id, but no `ok` field.
    let mut ep = ProcessEndpoint::spawn("cat", Duration::from_secs(5)).unwrap();
    let err = ep
        .call(&Request::Handshake { protocol_version: 1, skeletons: vec![] })
        .unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err}");
}

#[test]
fn silent_process_times_out() {
    let mut ep = ProcessEndpoint::spawn("sleep 5", Duration::from_millis(200)).unwrap();
    let err = ep
        .call(&Request::Handshake { protocol_version: 1, skeletons: vec![] })
        .unwrap_err();
    assert!(matches!(err, BackendError::Timeout(_)), "{err}");
}

#[test]
fn exiting_process_is_reported() {
    let mut ep = ProcessEndpoint::spawn("true", Duration::from_secs(5)).unwrap();
    let err = ep
        .call(&Request::Handshake { protocol_version: 1, skeletons: vec![] })
        .unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_) | BackendError::Transport(_)), "{err}");
}

#[test]
fn handshake_checks_skeleton_and_version() {
    let (scene, _) = occlusion_pair(1, 0.7);
    let b = SyntheticBackend::single(scene);
    assert!(BackendSet::synthetic(b.clone(), "coco").is_ok());
    assert!(BackendSet::synthetic(b.clone(), "merged22").is_ok());
    let err = BackendSet::synthetic(b, "mpii").err().unwrap();
    assert!(err.to_string().contains("mpii"));

    struct OldBackend;
    impl Endpoint for OldBackend {
        fn call(&mut self, _: &Request) -> Result<Response, BackendError> {
            Ok(Response::Handshake(bmp_core::backends::HandshakeInfo {
                protocol_version: 0,
                skeletons: vec!["coco".into()],
                emits_masks: false,
                ops: vec![],
            }))
        }
    }
    assert!(BackendSet::connect(Box::new(OldBackend), Box::new(OldBackend), Box::new(OldBackend), "coco").is_err());
}
