//! Remote completion backends over HTTP.
//!
//! One request per call: `POST /complete` with a JSON body
//!
//! ```text
//! { "mode": "partial" | "full",
//!   "image": <PNG base64>,            // partial mode: the current completion g_i
//!   "instance_mask": <PNG base64>,
//!   "occluder_mask"?, "deoccluded_mask"?, "background"?, "init"?: <PNG base64>,
//!   "text"?: string, "strength"?: number, "seed": integer }
//! ```
//!
//! answered by `{ "rgba": <PNG base64>, "mask": <PNG base64> }`. Masks are
//! single-channel PNGs holding exactly 0 or 255.
//!
//! Servers may also answer `GET /capabilities` with a [`Capabilities`] object;
//! [`RemoteBackend::probe`] uses it, [`RemoteBackend::new`] does not.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::backend::{BackendError, Capabilities, Completion, CompletionBackend, FullRequest, PartialRequest};
use crate::diffusion::Mode;
use crate::mask::{decode_rgba_png, encode_mask_png, encode_rgba_png, BinaryMask, RgbaImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub mode: Mode,
    pub image: String,
    pub instance_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluder_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deoccluded_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub rgba: String,
    pub mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireError {
    error: String,
}

pub fn mask_to_b64(m: &BinaryMask) -> String {
    B64.encode(encode_mask_png(m))
}

pub fn rgba_to_b64(img: &RgbaImage) -> String {
    B64.encode(encode_rgba_png(img))
}

/// Strict: gray levels other than 0 and 255 are rejected.
pub fn mask_from_b64(s: &str) -> Result<BinaryMask, BackendError> {
    let bytes = B64.decode(s).map_err(|e| BackendError::new(format!("base64: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| BackendError::new(format!("png: {e}")))?;
    let gray = img.as_luma8().ok_or_else(|| BackendError::new("mask png must be 8-bit grayscale"))?;
    if let Some(v) = gray.pixels().map(|p| p[0]).find(|v| *v != 0 && *v != 255) {
        return Err(BackendError::new(format!("mask png holds gray level {v}; only 0 and 255 are allowed")));
    }
    Ok(BinaryMask::from_fn(gray.width(), gray.height(), |x, y| gray.get_pixel(x, y)[0] == 255))
}

pub fn rgba_from_b64(s: &str) -> Result<RgbaImage, BackendError> {
    let bytes = B64.decode(s).map_err(|e| BackendError::new(format!("base64: {e}")))?;
    decode_rgba_png(&bytes).map_err(|e| BackendError::new(e.to_string()))
}

impl WireRequest {
    pub fn from_partial(r: &PartialRequest) -> Self {
        Self {
            mode: Mode::Partial,
            image: rgba_to_b64(&r.current),
            instance_mask: mask_to_b64(&r.instance),
            occluder_mask: Some(mask_to_b64(&r.occluder)),
            deoccluded_mask: Some(mask_to_b64(&r.deoccluded)),
            background: Some(rgba_to_b64(&r.background)),
            init: None,
            text: None,
            strength: None,
            seed: r.seed,
        }
    }

    /// `region` is dropped.
    pub fn from_full(r: &FullRequest) -> Self {
        Self {
            mode: Mode::Full,
            image: rgba_to_b64(&r.image),
            instance_mask: mask_to_b64(&r.instance),
            occluder_mask: None,
            deoccluded_mask: None,
            background: None,
            init: r.init.as_ref().map(rgba_to_b64),
            text: r.text.clone(),
            strength: r.strength,
            seed: r.seed,
        }
    }

    pub fn to_partial(&self) -> Result<PartialRequest, BackendError> {
        let need = |f: &Option<String>, name: &str| f.clone().ok_or_else(|| BackendError::new(format!("partial request lacks {name}")));
        Ok(PartialRequest {
            current: rgba_from_b64(&self.image)?,
            instance: mask_from_b64(&self.instance_mask)?,
            occluder: mask_from_b64(&need(&self.occluder_mask, "occluder_mask")?)?,
            deoccluded: mask_from_b64(&need(&self.deoccluded_mask, "deoccluded_mask")?)?,
            background: rgba_from_b64(&need(&self.background, "background")?)?,
            seed: self.seed,
        })
    }

    pub fn to_full(&self) -> Result<FullRequest, BackendError> {
        let mut r = FullRequest::new(rgba_from_b64(&self.image)?, mask_from_b64(&self.instance_mask)?, self.seed);
        r.text = self.text.clone();
        r.strength = self.strength;
        r.init = self.init.as_deref().map(rgba_from_b64).transpose()?;
        Ok(r)
    }
}

impl WireResponse {
    pub fn from_completion(c: &Completion) -> Self {
        Self { rgba: rgba_to_b64(&c.rgba), mask: mask_to_b64(&c.mask) }
    }

    pub fn to_completion(&self) -> Result<Completion, BackendError> {
        Ok(Completion { rgba: rgba_from_b64(&self.rgba)?, mask: mask_from_b64(&self.mask)? })
    }
}

/// Client for a server speaking the protocol above.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base: String,
    caps: Capabilities,
    single_flight: bool,
    agent: ureq::Agent,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into()
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, caps: Capabilities, timeout: Duration) -> Self {
        Self { base: base_url.into().trim_end_matches('/').to_string(), caps, single_flight: false, agent: agent(timeout) }
    }

    /// Asks the server for its capabilities.
    pub fn probe(base_url: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let mut b = Self::new(base_url, Capabilities::default(), timeout);
        let mut resp = b.agent.get(format!("{}/capabilities", b.base)).call().map_err(|e| BackendError::new(format!("connect {}: {e}", b.base)))?;
        if !resp.status().is_success() {
            return Err(BackendError::new(format!("{}/capabilities answered {}", b.base, resp.status())));
        }
        b.caps = resp.body_mut().read_json().map_err(|e| BackendError::new(format!("capabilities: {e}")))?;
        Ok(b)
    }

    /// Serialize calls, for servers that hold one model and one queue.
    pub fn single_flight(mut self, on: bool) -> Self {
        self.single_flight = on;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn complete(&self, body: &WireRequest) -> Result<Completion, BackendError> {
        let url = format!("{}/complete", self.base);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| BackendError::new(format!("connect {url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            let msg = serde_json::from_str::<WireError>(&text).map(|e| e.error).unwrap_or(text);
            return Err(BackendError::new(format!("{url} answered {status}: {msg}")));
        }
        let wire: WireResponse = resp.body_mut().read_json().map_err(|e| BackendError::new(format!("response: {e}")))?;
        wire.to_completion()
    }
}

impl CompletionBackend for RemoteBackend {
    fn identity(&self) -> String {
        format!("remote({})", self.base)
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn single_flight(&self) -> bool {
        self.single_flight
    }

    fn partial(&self, req: &PartialRequest) -> Result<Completion, BackendError> {
        self.complete(&WireRequest::from_partial(req))
    }

    fn full(&self, req: &FullRequest) -> Result<Completion, BackendError> {
        self.complete(&WireRequest::from_full(req))
    }
}

type Shared = Arc<dyn CompletionBackend>;

fn fail(status: StatusCode, e: impl std::fmt::Display) -> (StatusCode, Json<WireError>) {
    (status, Json(WireError { error: e.to_string() }))
}

async fn complete(State(b): State<Shared>, Json(req): Json<WireRequest>) -> Result<Json<WireResponse>, (StatusCode, Json<WireError>)> {
    let done = tokio::task::spawn_blocking(move || -> Result<Result<Completion, BackendError>, BackendError> {
        Ok(match req.mode {
            Mode::Partial => {
                let r = req.to_partial()?;
                super::backend::call_partial(b.as_ref(), &r)
            }
            Mode::Full => {
                let r = req.to_full()?;
                super::backend::call_full(b.as_ref(), &r)
            }
        })
    })
    .await
    .map_err(|e| fail(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    match done {
        Err(bad) => Err(fail(StatusCode::BAD_REQUEST, bad)),
        Ok(Err(e)) => Err(fail(StatusCode::BAD_GATEWAY, e)),
        Ok(Ok(c)) => Ok(Json(WireResponse::from_completion(&c))),
    }
}

async fn capabilities(State(b): State<Shared>) -> Json<Capabilities> {
    Json(b.capabilities())
}

/// Exposes any backend over the protocol.
pub fn completion_router(backend: Shared) -> Router {
    Router::new().route("/complete", post(complete)).route("/capabilities", get(capabilities)).with_state(backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::OracleBackend;

    fn spawn(backend: Shared) -> String {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || rt.block_on(async move { axum::serve(listener, completion_router(backend)).await.unwrap() }));
        format!("http://{addr}")
    }

    fn truth() -> RgbaImage {
        RgbaImage::from_fn(16, 16, |x, y| if (3..12).contains(&x) && (4..10).contains(&y) { [x as u8 * 9, y as u8 * 7, 200, 255] } else { [0; 4] })
    }

    #[test]
    fn wire_round_trip_is_exact() {
        let t = truth();
        let inst = BinaryMask::rect(16, 16, 3, 4, 8, 10);
        let req = PartialRequest { current: t.clone(), instance: inst.clone(), occluder: inst.complement(), deoccluded: BinaryMask::empty(16, 16), background: t.clone(), seed: 9 };
        assert_eq!(WireRequest::from_partial(&req).to_partial().unwrap(), req);
        let mut f = FullRequest::new(t.clone(), inst, 4);
        f.text = Some("blob".into());
        f.strength = Some(0.5);
        f.init = Some(t);
        let json = serde_json::to_string(&WireRequest::from_full(&f)).unwrap();
        assert!(json.contains("\"mode\":\"full\"") && !json.contains("occluder_mask"));
        assert_eq!(serde_json::from_str::<WireRequest>(&json).unwrap().to_full().unwrap(), f);
    }

    #[test]
    fn gray_masks_rejected() {
        let gray = image::GrayImage::from_fn(2, 2, |x, _| image::Luma([if x == 0 { 128 } else { 0 }]));
        let mut buf = std::io::Cursor::new(Vec::new());
        gray.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        assert!(mask_from_b64(&B64.encode(buf.into_inner())).is_err());
    }

    #[test]
    fn remote_oracle_matches_local() {
        let t = truth();
        let oracle = OracleBackend::new(vec![t.clone()]);
        let url = spawn(Arc::new(oracle.clone()));
        let remote = RemoteBackend::probe(&url, Duration::from_secs(10)).unwrap();
        assert_eq!(remote.capabilities(), oracle.capabilities());
        let inst = BinaryMask::rect(16, 16, 3, 4, 8, 10);
        let req = FullRequest::new(t.clone(), inst.clone(), 1);
        assert_eq!(remote.full(&req).unwrap(), oracle.full(&req).unwrap());
        let occ = BinaryMask::rect(16, 16, 8, 0, 16, 16);
        let p = PartialRequest { current: crate::mask::apply_mask(&t, &inst).unwrap(), instance: inst, occluder: occ, deoccluded: BinaryMask::empty(16, 16), background: RgbaImage::transparent(16, 16), seed: 0 };
        assert_eq!(remote.partial(&p).unwrap(), oracle.partial(&p).unwrap());
        // backend failure surfaces with the server's message
        let miss = FullRequest::new(t, BinaryMask::full(16, 16), 1);
        let e = remote.full(&miss).unwrap_err();
        assert!(e.0.contains("502") && e.0.contains("no ground truth"), "{e}");
    }

    #[test]
    fn unreachable_server_is_an_error() {
        let r = RemoteBackend::new("http://127.0.0.1:9", Capabilities { partial: true, full: true, init: false }, Duration::from_secs(2));
        let e = r.full(&FullRequest::new(truth(), BinaryMask::empty(16, 16), 0)).unwrap_err();
        assert!(e.0.contains("connect"));
    }
}
