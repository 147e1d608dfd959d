#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use himosa::data::{save_image, ImageBuffer};
use himosa::train::{save_state, RunConfig, TrainState};

pub fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn himosa(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_himosa"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("HIMOSA_THREADS", t),
        None => cmd.env_remove("HIMOSA_THREADS"),
    };
    cmd.output().expect("spawn himosa")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Smooth, deterministic test picture.
pub fn picture(w: usize, h: usize) -> ImageBuffer {
    let data = (0..w * h * 3)
        .map(|i| {
            let (p, c) = (i / 3, i % 3);
            let (y, x) = ((p / w) as f64, (p % w) as f64);
            (127.5 + 100.0 * ((x * 0.21 + c as f64).sin() * (y * 0.13).cos())) as u8
        })
        .collect();
    ImageBuffer::new(w, h, data).unwrap()
}

/// A manifest listing one `side`×`side` HR image; LR is made by bicubic.
pub fn single_image_manifest(dir: &Path, side: usize) -> PathBuf {
    save_image(&picture(side, side), dir.join("hr.png")).unwrap();
    let m = dir.join("manifest.tsv");
    std::fs::write(&m, "# one image\nhr.png\n").unwrap();
    m
}

/// `base` with the given keys replaced or added.
pub fn config_with(dir: &Path, name: &str, base: &str, overrides: &[(&str, &str)]) -> PathBuf {
    let original = std::fs::read_to_string(repo_file(base)).unwrap();
    let key_of = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let mut text: String = original
        .lines()
        .filter(|l| !overrides.iter().any(|(k, _)| key_of(l) == *k))
        .map(|l| format!("{l}\n"))
        .collect();
    for (k, v) in overrides {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Freshly initialised checkpoint for the run in `config`.
pub fn fresh_checkpoint(config: &Path, out: &Path) {
    let run = RunConfig::load(config).unwrap();
    let state = TrainState::<f64>::new(run).unwrap();
    save_state(&state, out).unwrap();
}
