#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stlcbf::scenario::ScenarioConfig;

pub fn stlcbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stlcbf"))
        .args(args)
        .env("STLCBF_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The built-in scenario with a small network, written to `dir`.
pub fn small_config(dir: &Path) -> PathBuf {
    let mut sc = ScenarioConfig::reference();
    sc.network.hidden = vec![8, 8];
    write_config(dir, "small.toml", &sc)
}

pub fn write_config(dir: &Path, name: &str, sc: &ScenarioConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, sc.to_toml()).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
