//! Minimal protocol server on a background thread, for driving the client.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use msbd::denoiser::{Conditioning, DenoiserBackend, MixtureOracle, NoiseLevel};
use msbd::protocol::{
    DenoiseRequest, HealthResponse, ScoreRequest, ScoreResponse, TensorPayload, UpscaleRequest, PROTOCOL_HEADER,
    PROTOCOL_VERSION,
};
use msbd::upscaler::{BicubicUpscaler, UpscalerBackend};
use tiny_http::{Header, Response, Server};

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Behaviour {
    Oracle,
    /// Always predicts zero noise.
    Stub,
    /// Answers with a protocol version the client does not speak.
    WrongVersion,
    /// Fails every tensor endpoint with HTTP 500.
    Failing,
    /// Returns a denoise tensor of the wrong shape.
    WrongShape,
}

pub struct MockServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn header(version: &str) -> Header {
    Header::from_bytes(PROTOCOL_HEADER.as_bytes(), version.as_bytes()).unwrap()
}

fn json<T: serde::Serialize>(value: &T, version: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(serde_json::to_vec(value).unwrap())
        .with_header(header(version))
        .with_header(Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap())
}

fn handle(oracle: &MixtureOracle, behaviour: Behaviour, url: &str, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let version = if behaviour == Behaviour::WrongVersion {
        "99"
    } else {
        PROTOCOL_VERSION
    };
    if url == "/v1/health" {
        let health = HealthResponse {
            status: "ok".into(),
            native_resolution: oracle.native_resolution(),
        };
        return json(&health, version);
    }
    if behaviour == Behaviour::Failing {
        return Response::from_string("model exploded")
            .with_status_code(500)
            .with_header(header(version));
    }
    let bad = |e: String| {
        Response::from_string(e)
            .with_status_code(400)
            .with_header(header(version))
    };
    match url {
        "/v1/denoise" => {
            let req: DenoiseRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return bad(e.to_string()),
            };
            let x = req.tensor.decode().unwrap();
            let eps = match behaviour {
                Behaviour::Stub => msbd::ImageBuffer::zeros_like(&x),
                Behaviour::WrongShape => msbd::ImageBuffer::zeros(1, 1, 1),
                _ => {
                    let level = NoiseLevel {
                        t: req.t,
                        alpha_bar: req.alpha_bar,
                    };
                    let cond = Conditioning::new(req.prompt, req.guidance).unwrap();
                    oracle.predict_eps(&x, level, &cond).unwrap()
                }
            };
            json(&TensorPayload::encode(&eps), version)
        }
        "/v1/upscale" => {
            let req: UpscaleRequest = serde_json::from_str(body).unwrap();
            let out = BicubicUpscaler::default()
                .enlarge(&req.tensor.decode().unwrap(), req.target_w, req.target_h)
                .unwrap();
            json(&TensorPayload::encode(&out), version)
        }
        "/v1/score" => {
            let req: ScoreRequest = serde_json::from_str(body).unwrap();
            let img = req.tensor.decode().unwrap();
            let score = img.data().iter().sum::<f64>() / img.len() as f64;
            json(&ScoreResponse { score }, version)
        }
        _ => Response::from_string("not found")
            .with_status_code(404)
            .with_header(header(version)),
    }
}

pub fn spawn(oracle: MixtureOracle, behaviour: Behaviour) -> MockServer {
    let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let (srv, count) = (Arc::clone(&server), Arc::clone(&requests));
    let thread = std::thread::spawn(move || {
        for mut request in srv.incoming_requests() {
            count.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            let _ = request.as_reader().read_to_string(&mut body);
            let response = handle(&oracle, behaviour, request.url(), &body);
            let _ = request.respond(response);
        }
    });
    MockServer {
        url,
        requests,
        server,
        thread: Some(thread),
    }
}
