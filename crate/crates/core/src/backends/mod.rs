//! Detector, pose estimator and segmenter endpoints.
//!
//! The engine talks to every model through [`Endpoint::call`] with typed
//! [`Request`]/[`Response`] values. External models run as child processes
//! speaking the framed JSON protocol in [`protocol`]; the synthetic backend
//! answers the same requests in-process from a scene description.

pub mod conformance;
pub mod process;
pub mod protocol;
pub mod server;
pub mod synthetic;

use thiserror::Error;

pub use process::ProcessEndpoint;
pub use protocol::{Detection, HandshakeInfo, Request, Response, WireError, PROTOCOL_VERSION};
pub use synthetic::{SceneInstance, SceneLibrary, SyntheticBackend, SyntheticScene};

use crate::geometry::{BBox, BinaryMask, Keypoint};
use crate::imaging::{CropTransform, Image};
use crate::prompting::PromptSet;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("no reply within {0:?}")]
    Timeout(std::time::Duration),
    #[error("backend reported {code}: {message}")]
    Remote { code: String, message: String },
}

impl From<std::io::Error> for BackendError {
    fn from(e: std::io::Error) -> Self {
        BackendError::Transport(e)
    }
}

impl BackendError {
    /// Whether the endpoint is still usable after this error.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, BackendError::Remote { .. })
    }

    pub fn remote(code: &str, message: impl Into<String>) -> Self {
        BackendError::Remote {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

/// One model behind the request/reply protocol.
pub trait Endpoint: Send {
    fn call(&mut self, request: &Request) -> Result<Response, BackendError>;
}

fn unexpected(op: &str, got: &Response) -> BackendError {
    BackendError::Protocol(format!("reply to `{op}` has the wrong shape: {got:?}"))
}

/// The three models used by the loop, handshaken and ready.
pub struct BackendSet {
    detector: Box<dyn Endpoint>,
    pose: Box<dyn Endpoint>,
    segmenter: Box<dyn Endpoint>,
    detector_info: HandshakeInfo,
    image_id: Option<String>,
}

impl BackendSet {
    /// Handshakes with all three endpoints and checks that the pose endpoint
    /// serves `skeleton`.
    pub fn connect(
        mut detector: Box<dyn Endpoint>,
        mut pose: Box<dyn Endpoint>,
        mut segmenter: Box<dyn Endpoint>,
        skeleton: &str,
    ) -> Result<Self, BackendError> {
        let mut infos = Vec::with_capacity(3);
        for (role, ep) in [
            ("detector", &mut detector),
            ("pose", &mut pose),
            ("segmenter", &mut segmenter),
        ] {
            let info = handshake(ep.as_mut(), skeleton)?;
            if role == "pose" && !info.skeletons.iter().any(|s| s == skeleton) {
                return Err(BackendError::Protocol(format!(
                    "pose backend does not serve skeleton `{skeleton}` (offers {:?})",
                    info.skeletons
                )));
            }
            infos.push(info);
        }
        Ok(BackendSet {
            detector,
            pose,
            segmenter,
            detector_info: infos.swap_remove(0),
            image_id: None,
        })
    }

    /// All three roles served by one synthetic backend.
    pub fn synthetic(backend: SyntheticBackend, skeleton: &str) -> Result<Self, BackendError> {
        BackendSet::connect(
            Box::new(backend.clone()),
            Box::new(backend.clone()),
            Box::new(backend),
            skeleton,
        )
    }

    pub fn detector_emits_masks(&self) -> bool {
        self.detector_info.emits_masks
    }

    /// Tags subsequent requests with an image identifier.
    pub fn set_image_id(&mut self, id: Option<String>) {
        self.image_id = id;
    }

    pub fn detect(&mut self, image: &Image) -> Result<Vec<Detection>, BackendError> {
        let req = Request::Detect {
            image_id: self.image_id.clone(),
            image: image.clone(),
        };
        match self.detector.call(&req)? {
            Response::Detections(d) => Ok(d),
            other => Err(unexpected("detect", &other)),
        }
    }

    /// Keypoints for one crop, returned in full-image coordinates.
    pub fn pose(
        &mut self,
        crop: &Image,
        transform: &CropTransform,
        bbox: &BBox,
        skeleton: &str,
    ) -> Result<Vec<Keypoint>, BackendError> {
        let req = Request::Pose {
            image_id: self.image_id.clone(),
            image: crop.clone(),
            transform: *transform,
            bbox: bbox.xywh(),
            skeleton: skeleton.to_string(),
        };
        match self.pose.call(&req)? {
            Response::Keypoints(kps) => Ok(kps
                .into_iter()
                .map(|k| {
                    let (x, y) = transform.to_image(k.x, k.y);
                    Keypoint::new(x, y, k.confidence)
                })
                .collect()),
            other => Err(unexpected("pose", &other)),
        }
    }

    pub fn segment(
        &mut self,
        image: &Image,
        prompts: &PromptSet,
    ) -> Result<(BinaryMask, f64), BackendError> {
        let req = Request::segment(self.image_id.clone(), image.clone(), prompts);
        match self.segmenter.call(&req)? {
            Response::Mask { mask, score } => {
                if mask.width() != image.width() || mask.height() != image.height() {
                    return Err(BackendError::Protocol(format!(
                        "segment mask is {}x{}, image is {}x{}",
                        mask.width(),
                        mask.height(),
                        image.width(),
                        image.height()
                    )));
                }
                Ok((mask, score))
            }
            other => Err(unexpected("segment", &other)),
        }
    }
}

fn handshake(ep: &mut dyn Endpoint, skeleton: &str) -> Result<HandshakeInfo, BackendError> {
    let req = Request::Handshake {
        protocol_version: PROTOCOL_VERSION,
        skeletons: vec![skeleton.to_string()],
    };
    match ep.call(&req)? {
        Response::Handshake(info) if info.protocol_version == PROTOCOL_VERSION => Ok(info),
        Response::Handshake(info) => Err(BackendError::Protocol(format!(
            "protocol version {} not supported (expected {PROTOCOL_VERSION})",
            info.protocol_version
        ))),
        other => Err(unexpected("handshake", &other)),
    }
}
