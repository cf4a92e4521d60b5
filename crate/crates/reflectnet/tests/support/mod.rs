#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reflectnet::imageio::write_image;
use reflectnet_core::Image;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_reflectnet"));
    c.env("REFLECTNET_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Smooth scene: gradients and a soft disc.
pub fn scene(h: usize, w: usize, seed: u64) -> Image {
    let k = seed as f32 * 0.37;
    Image::from_fn(h, w, |y, x| {
        let (fy, fx) = (y as f32 / h as f32, x as f32 / w as f32);
        let d = ((fy - 0.5).powi(2) + (fx - 0.4 - 0.1 * k.sin()).powi(2)).sqrt();
        let disc = if d < 0.25 { 0.3 } else { 0.0 };
        [
            (0.2 + 0.5 * fx + disc).min(1.0),
            (0.25 + 0.4 * fy + 0.1 * (k + fx * 6.0).sin()).clamp(0.0, 1.0),
            (0.6 - 0.3 * fx * fy + disc * 0.5).clamp(0.0, 1.0),
        ]
    })
    .unwrap()
}

/// High-contrast pattern for reflections: stripes and blocks.
pub fn pattern(h: usize, w: usize, seed: u64) -> Image {
    let period = 3 + (seed as usize % 5);
    Image::from_fn(h, w, |y, x| {
        let stripe = ((x + y * (seed as usize % 3)) / period) % 2 == 0;
        let block = (y / (2 * period) + x / (3 * period)) % 2 == 0;
        let v = if stripe { 0.85 } else { 0.15 };
        [v, if block { 0.9 } else { v * 0.6 }, 0.5 * v + 0.2]
    })
    .unwrap()
}

/// Transmission and reflection source directories with `n` images each.
pub fn sources(root: &Path, n: usize, (h, w): (usize, usize), reflection_size: (usize, usize)) -> (PathBuf, PathBuf) {
    let (t, r) = (root.join("t"), root.join("r"));
    fs::create_dir_all(&t).unwrap();
    fs::create_dir_all(&r).unwrap();
    for i in 0..n {
        write_image(&t.join(format!("scene{i:02}.png")), &scene(h, w, i as u64)).unwrap();
        write_image(
            &r.join(format!("refl{i:02}.png")),
            &pattern(reflection_size.0, reflection_size.1, i as u64),
        )
        .unwrap();
    }
    (t, r)
}

/// Relative path -> bytes for every file under `dir`.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Output trees equal apart from the config echo, which records the output path.
pub fn assert_same_outputs(a: &Path, b: &Path) {
    let strip = |m: BTreeMap<String, Vec<u8>>| -> BTreeMap<String, Vec<u8>> {
        m.into_iter().filter(|(k, _)| !k.ends_with(".toml")).collect()
    };
    let (ta, tb) = (strip(tree(a)), strip(tree(b)));
    let names = |t: &BTreeMap<String, Vec<u8>>| t.keys().cloned().collect::<Vec<_>>();
    assert_eq!(names(&ta), names(&tb));
    let differ: Vec<&String> = ta.iter().filter(|(k, v)| tb[*k] != **v).map(|(k, _)| k).collect();
    assert!(differ.is_empty(), "files differ: {differ:?}");
}

pub fn files_with_suffix(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    v.sort();
    v
}

/// Small networks and patches so CLI tests train in about a second.
pub const TINY_CONFIG: &str = "\
[model]
width = 8
reduction = 2
disc_width = 8
disc_stages = 2

[train]
epochs = 2
batch_size = 2
patch_size = 16
seed = 5
";

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

/// `key=value` lines of an eval `.kv` file.
pub fn read_kv(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
