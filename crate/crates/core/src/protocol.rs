//! HTTP client for remote denoiser, upscaler and scorer backends.
//!
//! Every request and response is a JSON object. Tensors travel as
//! [`TensorPayload`]: base64 of little-endian `f32` values in channel-major,
//! row-major order with shape `[channels, height, width]`. Both directions
//! carry the header `x-msbd-proto: 1`.
//!
//! | endpoint          | request                                   | response                     |
//! |-------------------|-------------------------------------------|------------------------------|
//! | `POST /v1/denoise` | tensor, `t`, `alpha_bar`, prompt, guidance | tensor                       |
//! | `POST /v1/upscale` | tensor, `target_w`, `target_h`             | tensor                       |
//! | `POST /v1/score`   | tensor, prompt                             | `{"score": f}`               |
//! | `GET /v1/health`   |                                            | `{"status": "ok", "native_resolution": n}` |

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::denoiser::{Conditioning, DenoiserBackend, MixtureOracle, MixtureSpec, NoiseLevel};
use crate::error::{Error, Result};
use crate::noise::{NoiseStream, Purpose};
use crate::rerank::ScorerBackend;
use crate::schedule::NoiseSchedule;
use crate::upscaler::UpscalerBackend;

pub const PROTOCOL_HEADER: &str = "x-msbd-proto";
pub const PROTOCOL_VERSION: &str = "1";
/// Environment variable holding the remote backend base URL.
pub const BACKEND_URL_ENV: &str = "MSBD_BACKEND_URL";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorPayload {
    pub tensor: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

impl TensorPayload {
    /// Encode as `f32`; values are rounded to the nearest `f32`.
    pub fn encode(image: &ImageBuffer) -> Self {
        let mut bytes = Vec::with_capacity(image.len() * 4);
        for &v in image.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let (c, h, w) = image.shape();
        Self {
            tensor: B64.encode(bytes),
            shape: vec![c, h, w],
            dtype: "f32".into(),
        }
    }

    pub fn decode(&self) -> Result<ImageBuffer> {
        if self.dtype != "f32" {
            return Err(Error::Protocol(format!("unsupported dtype '{}'", self.dtype)));
        }
        let [c, h, w] = self.shape[..] else {
            return Err(Error::Protocol(format!(
                "shape must have 3 entries, got {:?}",
                self.shape
            )));
        };
        let bytes = B64
            .decode(&self.tensor)
            .map_err(|e| Error::Protocol(format!("bad base64 tensor: {e}")))?;
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::Protocol("shape overflows".into()))?;
        if bytes.len() != 4 * n {
            return Err(Error::Protocol(format!(
                "tensor has {} bytes, shape {:?} needs {}",
                bytes.len(),
                self.shape,
                4 * n
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("tensor contains non-finite values".into()));
        }
        ImageBuffer::new(w, h, c, data).map_err(|e| Error::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiseRequest {
    #[serde(flatten)]
    pub tensor: TensorPayload,
    pub t: usize,
    pub alpha_bar: f64,
    pub prompt: String,
    pub guidance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpscaleRequest {
    #[serde(flatten)]
    pub tensor: TensorPayload,
    pub target_w: usize,
    pub target_h: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(flatten)]
    pub tensor: TensorPayload,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub native_resolution: usize,
}

/// Client for a protocol-speaking server. Usable as denoiser, upscaler and
/// scorer at once; safe to share between threads.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    native_resolution: usize,
}

impl RemoteBackend {
    /// Connect and run a health check.
    pub fn connect(base_url: &str) -> Result<Self> {
        Self::connect_with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(base_url: &str, timeout: Duration) -> Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let mut backend = Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            native_resolution: 0,
        };
        let health = backend.health()?;
        if health.status != "ok" {
            return Err(Error::Backend(format!("server reports status '{}'", health.status)));
        }
        backend.native_resolution = health.native_resolution;
        Ok(backend)
    }

    /// Connect to the URL in `MSBD_BACKEND_URL`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(BACKEND_URL_ENV).map_err(|_| Error::Config(format!("{BACKEND_URL_ENV} is not set")))?;
        Self::connect(&url)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let req = self
            .agent
            .get(&format!("{}/v1/health", self.base_url))
            .set(PROTOCOL_HEADER, PROTOCOL_VERSION);
        self.finish(req.call(), "/v1/health")
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let req = self
            .agent
            .post(&format!("{}{path}", self.base_url))
            .set(PROTOCOL_HEADER, PROTOCOL_VERSION);
        self.finish(req.send_json(body), path)
    }

    fn finish<R: DeserializeOwned>(
        &self,
        result: std::result::Result<ureq::Response, ureq::Error>,
        path: &str,
    ) -> Result<R> {
        let resp = match result {
            Ok(resp) => resp,
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                return Err(Error::Backend(format!("{path}: HTTP {code}: {}", body.trim())));
            }
            Err(e) => return Err(Error::Backend(format!("{path}: {e}"))),
        };
        match resp.header(PROTOCOL_HEADER) {
            Some(PROTOCOL_VERSION) => {}
            other => {
                return Err(Error::Protocol(format!(
                    "{path}: expected {PROTOCOL_HEADER}: {PROTOCOL_VERSION}, got {other:?}"
                )))
            }
        }
        resp.into_json()
            .map_err(|e| Error::Protocol(format!("{path}: malformed response: {e}")))
    }

    /// Decode a tensor response and insist on `shape`.
    fn expect_tensor(payload: TensorPayload, shape: (usize, usize, usize), path: &str) -> Result<ImageBuffer> {
        let image = payload.decode()?;
        if image.shape() != shape {
            return Err(Error::Protocol(format!(
                "{path}: response shape {:?}, expected {shape:?}",
                image.shape()
            )));
        }
        Ok(image)
    }
}

impl DenoiserBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn native_resolution(&self) -> usize {
        self.native_resolution
    }

    fn predict_eps(&self, x_t: &ImageBuffer, level: NoiseLevel, cond: &Conditioning) -> Result<ImageBuffer> {
        let body = DenoiseRequest {
            tensor: TensorPayload::encode(x_t),
            t: level.t,
            alpha_bar: level.alpha_bar,
            prompt: cond.prompt.clone(),
            guidance: cond.guidance,
        };
        let resp: TensorPayload = self.post("/v1/denoise", &body)?;
        Self::expect_tensor(resp, x_t.shape(), "/v1/denoise")
    }
}

impl UpscalerBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn enlarge(&self, image: &ImageBuffer, target_w: usize, target_h: usize) -> Result<ImageBuffer> {
        let body = UpscaleRequest {
            tensor: TensorPayload::encode(image),
            target_w,
            target_h,
        };
        let resp: TensorPayload = self.post("/v1/upscale", &body)?;
        let out = resp.decode()?;
        if out.channels() != image.channels() || out.width() < image.width() || out.height() < image.height() {
            return Err(Error::Protocol(format!(
                "/v1/upscale: response shape {:?} for input {:?}",
                out.shape(),
                image.shape()
            )));
        }
        Ok(out)
    }
}

impl ScorerBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn score(&self, image: &ImageBuffer, prompt: &str) -> Result<f64> {
        let body = ScoreRequest {
            tensor: TensorPayload::encode(image),
            prompt: prompt.to_string(),
        };
        let resp: ScoreResponse = self.post("/v1/score", &body)?;
        if !resp.score.is_finite() {
            return Err(Error::Protocol(format!("/v1/score: non-finite score {}", resp.score)));
        }
        Ok(resp.score)
    }
}

/// One denoiser input with the oracle's expected output.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenCase {
    pub name: String,
    pub x_t: ImageBuffer,
    pub t: usize,
    pub alpha_bar: f64,
    pub eps: ImageBuffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GoldenEntry {
    name: String,
    shape: [usize; 3],
    t: usize,
    alpha_bar: f64,
    /// Offsets in f32 elements into the binary file.
    input_offset: usize,
    expected_offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GoldenManifest {
    version: u32,
    dtype: String,
    binary: String,
    mixture: MixtureSpec,
    native_resolution: usize,
    cases: Vec<GoldenEntry>,
}

pub const GOLDEN_BINARY: &str = "golden.f32";
pub const GOLDEN_MANIFEST: &str = "golden.json";

/// Oracle outputs for a spread of shapes and noise levels. Inputs are
/// rounded to `f32` first so a server sees exactly the tensors the
/// expectations were computed from.
pub fn golden_cases(oracle: &MixtureOracle, schedule: &NoiseSchedule, seed: u64) -> Result<Vec<GoldenCase>> {
    let levels = [1, schedule.t_train() / 4, schedule.t_train() / 2, schedule.t_train()];
    let shapes = [(1, 1, 1), (3, 4, 5), (1, 8, 8), (3, 2, 7)];
    let stream = NoiseStream::new(seed, 0, 0);
    let mut cases = Vec::new();
    for (i, &(c, h, w)) in shapes.iter().enumerate() {
        for (j, &t) in levels.iter().enumerate() {
            let t = t.max(1);
            let raw = stream.key(i, j, Purpose::Aux).normal(w, h, c).map(|v| 0.5 + 0.8 * v);
            let x_t = raw.map(|v| v as f32 as f64);
            let alpha_bar = schedule.alpha_bar(t);
            let level = NoiseLevel { t, alpha_bar };
            let eps = oracle.predict_eps(&x_t, level, &Conditioning::unconditional())?;
            cases.push(GoldenCase {
                name: format!("shape{c}x{h}x{w}_t{t}"),
                x_t,
                t,
                alpha_bar,
                eps,
            });
        }
    }
    Ok(cases)
}

/// Write `golden.f32` and `golden.json` into `dir`.
pub fn write_golden_vectors(dir: &Path, oracle: &MixtureOracle, cases: &[GoldenCase]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut bin = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    let mut push = |img: &ImageBuffer, bin: &mut Vec<u8>| {
        let start = offset;
        for &v in img.data() {
            bin.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += img.len();
        start
    };
    for case in cases {
        let (c, h, w) = case.x_t.shape();
        let input_offset = push(&case.x_t, &mut bin);
        let expected_offset = push(&case.eps, &mut bin);
        entries.push(GoldenEntry {
            name: case.name.clone(),
            shape: [c, h, w],
            t: case.t,
            alpha_bar: case.alpha_bar,
            input_offset,
            expected_offset,
        });
    }
    let manifest = GoldenManifest {
        version: 1,
        dtype: "f32".into(),
        binary: GOLDEN_BINARY.into(),
        mixture: oracle.mixture().clone(),
        native_resolution: oracle.native_resolution(),
        cases: entries,
    };
    std::fs::File::create(dir.join(GOLDEN_BINARY))?.write_all(&bin)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Protocol(e.to_string()))?;
    std::fs::write(dir.join(GOLDEN_MANIFEST), json + "\n")?;
    Ok(())
}

/// Read back a golden-vector directory, with the mixture it was made from.
pub fn read_golden_vectors(dir: &Path) -> Result<(MixtureSpec, Vec<GoldenCase>)> {
    let text = std::fs::read_to_string(dir.join(GOLDEN_MANIFEST))?;
    let manifest: GoldenManifest =
        serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("golden manifest: {e}")))?;
    if manifest.version != 1 || manifest.dtype != "f32" {
        return Err(Error::Protocol(format!(
            "unsupported golden manifest version {} / dtype {}",
            manifest.version, manifest.dtype
        )));
    }
    let bytes = std::fs::read(dir.join(&manifest.binary))?;
    let floats: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let slice = |offset: usize, [c, h, w]: [usize; 3]| -> Result<ImageBuffer> {
        let data = floats
            .get(offset..offset + c * h * w)
            .ok_or_else(|| Error::Protocol("golden binary is truncated".into()))?;
        ImageBuffer::new(w, h, c, data.to_vec())
    };
    let cases = manifest
        .cases
        .iter()
        .map(|e| {
            Ok(GoldenCase {
                name: e.name.clone(),
                x_t: slice(e.input_offset, e.shape)?,
                t: e.t,
                alpha_bar: e.alpha_bar,
                eps: slice(e.expected_offset, e.shape)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest.mixture, cases))
}
