mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::server::{spawn, Behaviour};
use common::{box_mask, oracle, scene};
use msbd::pipeline::PipelineConfig;
use msbd::png_io::{read_image, write_image, BitDepth};

const BIN: &str = env!("CARGO_BIN_EXE_msbd");

struct Inputs {
    dir: tempfile::TempDir,
}

impl Inputs {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_image(dir.path().join("in.png"), &scene(48, 36, 3), BitDepth::Eight).unwrap();
        let mask = box_mask(48, 36, 16, 10, 34, 26);
        write_image(dir.path().join("mask.png"), mask.as_image(), BitDepth::Eight).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// `edit` on the inputs with only `extra` added.
    fn bare(&self, out: &str, extra: &[&str]) -> Output {
        Command::new(BIN)
            .arg("edit")
            .arg("--image")
            .arg(self.path("in.png"))
            .arg("--mask")
            .arg(self.path("mask.png"))
            .arg("--out")
            .arg(self.path(out))
            .args(extra)
            .output()
            .unwrap()
    }

    /// `edit` with small, fast settings plus `extra`.
    fn edit(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec!["--prompt", "a lamp", "--steps", "8", "--batch", "2", "--repaint", "1"];
        args.extend(["--margin", "4", "--native", "16"]);
        args.extend(extra);
        self.bare(out, &args)
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let io = Inputs::new();
    let a = io.edit("a.png", &["--seed", "7"]);
    let b = io.edit("b.png", &["--seed", "7", "--jobs", "1"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    assert_eq!(read(&io.path("a.png")), read(&io.path("b.png")));

    let c = io.edit("c.png", &["--seed", "8"]);
    assert_eq!(code(&c), 0);
    assert_ne!(read(&io.path("a.png")), read(&io.path("c.png")));
}

#[test]
fn output_keeps_input_shape_and_bit_depth() {
    let io = Inputs::new();
    let out = io.edit("o.png", &["--bit-depth", "16", "--pixel-space"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bytes = read(&io.path("o.png"));
    assert_eq!(bytes[24], 16, "IHDR bit depth");
    let img = read_image(io.path("o.png")).unwrap();
    assert_eq!(img.shape(), (3, 36, 48));
}

#[test]
fn missing_input_exits_1() {
    let io = Inputs::new();
    let out = Command::new(BIN)
        .args([
            "edit",
            "--image",
            "/nonexistent.png",
            "--mask",
            "/nonexistent.png",
            "--out",
        ])
        .arg(io.path("x.png"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    std::fs::write(io.path("junk.png"), b"not a png").unwrap();
    let out = Command::new(BIN)
        .arg("edit")
        .arg("--image")
        .arg(io.path("junk.png"))
        .arg("--mask")
        .arg(io.path("mask.png"))
        .arg("--out")
        .arg(io.path("x.png"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn unknown_flag_exits_1() {
    let out = Command::new(BIN).args(["edit", "--frobnicate"]).output().unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn mismatched_mask_exits_1() {
    let io = Inputs::new();
    write_image(io.path("mask.png"), &scene(10, 10, 1), BitDepth::Eight).unwrap();
    let out = io.edit("x.png", &[]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn unreachable_backend_exits_2() {
    let io = Inputs::new();
    let srv = spawn(oracle(16), Behaviour::Oracle);
    let url = srv.url.clone();
    drop(srv);
    let out = Command::new(BIN)
        .env("MSBD_BACKEND_URL", url)
        .arg("edit")
        .arg("--image")
        .arg(io.path("in.png"))
        .arg("--mask")
        .arg(io.path("mask.png"))
        .arg("--out")
        .arg(io.path("x.png"))
        .args(["--backend", "remote"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn failing_backend_exits_2() {
    let io = Inputs::new();
    let srv = spawn(oracle(16), Behaviour::Failing);
    let mut cmd = Command::new(BIN);
    cmd.env("MSBD_BACKEND_URL", &srv.url);
    let out = cmd
        .arg("edit")
        .arg("--image")
        .arg(io.path("in.png"))
        .arg("--mask")
        .arg(io.path("mask.png"))
        .arg("--out")
        .arg(io.path("x.png"))
        .args(["--backend", "remote", "--steps", "4"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("500"));
}

#[test]
fn remote_backend_edits() {
    let io = Inputs::new();
    let srv = spawn(oracle(16), Behaviour::Oracle);
    let out = Command::new(BIN)
        .env("MSBD_BACKEND_URL", &srv.url)
        .arg("edit")
        .arg("--image")
        .arg(io.path("in.png"))
        .arg("--mask")
        .arg(io.path("mask.png"))
        .arg("--out")
        .arg(io.path("x.png"))
        .args([
            "--backend",
            "remote",
            "--steps",
            "4",
            "--batch",
            "2",
            "--repaint",
            "0",
            "--margin",
            "4",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(io.path("x.png").exists());
}

#[test]
fn config_errors_exit_3() {
    let io = Inputs::new();
    std::fs::write(io.path("bad.toml"), "batch_b = 2\nunknown_knob = 1\n").unwrap();
    let cfg = io.path("bad.toml");
    let out = io.edit("x.png", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    assert_eq!(code(&io.bare("x.png", &["--batch", "0"])), 3);
    assert_eq!(code(&io.edit("x.png", &["--mode", "ablation"])), 3);
    assert_eq!(code(&io.edit("x.png", &["--mode", "ablation", "--ablation", "z"])), 3);
    assert_eq!(code(&io.edit("x.png", &["--ablation", "c"])), 3);
    let out = Command::new(BIN)
        .env_remove("MSBD_BACKEND_URL")
        .arg("edit")
        .arg("--image")
        .arg(io.path("in.png"))
        .arg("--mask")
        .arg(io.path("mask.png"))
        .arg("--out")
        .arg(io.path("x.png"))
        .args(["--backend", "remote"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn config_file_and_flag_precedence() {
    let io = Inputs::new();
    let cfg = PipelineConfig {
        seed: 3,
        sampler_steps: 8,
        batch_b: 2,
        repaint_r: 1,
        margin: 4,
        ..Default::default()
    };
    std::fs::write(io.path("cfg.toml"), cfg.to_toml_string()).unwrap();
    let path = io.path("cfg.toml");
    let path = path.to_str().unwrap();
    assert_eq!(code(&io.edit("from_file.png", &["--config", path])), 0);
    assert_eq!(code(&io.edit("from_flag.png", &["--seed", "3"])), 0);
    assert_eq!(read(&io.path("from_file.png")), read(&io.path("from_flag.png")));
    assert_eq!(code(&io.edit("override.png", &["--config", path, "--seed", "4"])), 0);
    assert_ne!(read(&io.path("from_file.png")), read(&io.path("override.png")));
}

#[test]
fn ablation_modes_run() {
    let io = Inputs::new();
    for extra in [
        &["--mode", "ablation", "--upscale-only", "bilinear"][..],
        &["--mode", "ablation", "--upscale-only", "sr"],
        &["--mode", "ablation", "--ablation", "c"],
        &["--mode", "ablation", "--ablation", "e"],
    ] {
        let out = io.edit("ab.png", extra);
        assert_eq!(code(&out), 0, "{extra:?}: {}", stderr(&out));
    }
}

#[test]
fn intermediates_are_dumped_in_order() {
    let io = Inputs::new();
    let dir = io.path("dump");
    let out = io.edit("x.png", &["--dump-intermediates", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.first().map(String::as_str), Some("00_crop.png"));
    assert!(names.last().unwrap().ends_with("_final_composite.png"), "{names:?}");
    assert!(names.iter().any(|n| n.ends_with("_stage1_selected.png")));
}

#[test]
fn mixture_demo_writes_statistics() {
    let io = Inputs::new();
    let out = Command::new(BIN)
        .args([
            "edit",
            "--demo",
            "mixture",
            "--samples",
            "500",
            "--steps",
            "20",
            "--out",
        ])
        .arg(io.path("stats.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stats: serde_json::Value = serde_json::from_slice(&read(&io.path("stats.json"))).unwrap();
    assert_eq!(stats["samples"], 500);
    let modes = stats["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 2);
    for m in modes {
        assert!((m["mass"].as_f64().unwrap() - 0.5).abs() < 0.1, "{m}");
    }
}

#[test]
fn defaults_subcommand_prints_loadable_toml() {
    let out = Command::new(BIN).arg("defaults").output().unwrap();
    assert_eq!(code(&out), 0);
    let cfg = PipelineConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
}
