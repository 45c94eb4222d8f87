#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn burnscar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_burnscar"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

/// Runs a subcommand with a config written from `lines`; returns the exit code.
pub fn run_with(dir: &Path, cmd: &str, config: &str, out: &str, extra: &[&str]) -> i32 {
    let cfg = format!("{out}.cfg");
    fs::write(dir.join(&cfg), config).unwrap();
    let mut args = vec![cmd, "--config", cfg.as_str(), "--out", out];
    args.extend_from_slice(extra);
    let o = burnscar(dir, &args);
    if !o.status.success() {
        eprintln!("{cmd} stderr: {}", String::from_utf8_lossy(&o.stderr));
    }
    o.status.code().unwrap_or(-1)
}

/// Every file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn small_dataset(dir: &Path, name: &str, noise: f64, seed: u64) {
    let cfg = format!("events = 10\npatch_size = 32\nradius = 3, 8\nnoise = {noise}\n");
    let code = run_with(dir, "synth", &cfg, name, &["--seed", &seed.to_string()]);
    assert_eq!(code, 0);
}
