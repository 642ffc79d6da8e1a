//! Drive the pipeline through the HTTP protocol. Starts a small oracle
//! server on a local port unless `MSBD_BACKEND_URL` points at one already.

use msbd::denoiser::{Conditioning, DenoiserBackend, MixtureOracle, MixtureSpec, NoiseLevel};
use msbd::pipeline::{run_pipeline, PipelineConfig};
use msbd::protocol::{
    DenoiseRequest, HealthResponse, RemoteBackend, TensorPayload, BACKEND_URL_ENV, PROTOCOL_HEADER, PROTOCOL_VERSION,
};
use msbd::upscaler::BicubicUpscaler;
use msbd::{ImageBuffer, MaskBuffer};
use tiny_http::{Header, Response, Server};

fn oracle() -> anyhow::Result<MixtureOracle> {
    Ok(MixtureOracle::new(
        MixtureSpec::scalar(&[(0.5, 0.3, 0.1), (0.5, 0.7, 0.1)])?,
        16,
    ))
}

/// Serve `/v1/health` and `/v1/denoise` from the oracle.
fn serve() -> anyhow::Result<String> {
    let server = Server::http("127.0.0.1:0").map_err(|e| anyhow::anyhow!(e))?;
    let url = format!("http://{}", server.server_addr().to_ip().expect("tcp listener"));
    let oracle = oracle()?;
    std::thread::spawn(move || {
        let proto = Header::from_bytes(PROTOCOL_HEADER, PROTOCOL_VERSION).expect("valid header");
        for mut req in server.incoming_requests() {
            let body = match req.url() {
                "/v1/health" => serde_json::to_vec(&HealthResponse {
                    status: "ok".into(),
                    native_resolution: oracle.native_resolution(),
                }),
                _ => {
                    let r: DenoiseRequest = serde_json::from_reader(req.as_reader()).expect("denoise request");
                    let x = r.tensor.decode().expect("tensor");
                    let level = NoiseLevel {
                        t: r.t,
                        alpha_bar: r.alpha_bar,
                    };
                    let eps = oracle
                        .predict_eps(&x, level, &Conditioning::unconditional())
                        .expect("oracle");
                    serde_json::to_vec(&TensorPayload::encode(&eps))
                }
            };
            let _ = req.respond(Response::from_data(body.expect("json")).with_header(proto.clone()));
        }
    });
    Ok(url)
}

fn main() -> anyhow::Result<()> {
    let url = match std::env::var(BACKEND_URL_ENV) {
        Ok(url) => url,
        Err(_) => serve()?,
    };
    let remote = RemoteBackend::connect(&url)?;
    println!("connected to {url}: {:?}", remote.health()?);

    let image = ImageBuffer::from_fn(48, 48, 3, |c, y, x| {
        (0.2 + 0.01 * (x + y) as f64 + 0.1 * c as f64).min(1.0)
    });
    let mask = MaskBuffer::from_fn(48, 48, |y, x| {
        if (16..32).contains(&x) && (16..32).contains(&y) {
            1.0
        } else {
            0.0
        }
    });
    let cfg = PipelineConfig {
        sampler_steps: 10,
        batch_b: 2,
        repaint_r: 1,
        margin: 8,
        pixel_space_mode: true,
        ..Default::default()
    };
    let upscaler = BicubicUpscaler::default();
    let over_http = run_pipeline(&cfg, &remote, &upscaler, &image, &mask, "a window")?;
    let local = run_pipeline(&cfg, &oracle()?, &upscaler, &image, &mask, "a window")?;
    println!(
        "{} remote denoiser calls; max difference to in-process run {:.2e}",
        over_http.denoiser_calls,
        over_http.image.max_abs_diff(&local.image)?
    );
    Ok(())
}
