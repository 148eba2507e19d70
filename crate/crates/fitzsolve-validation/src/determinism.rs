use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crate::Check;

pub fn demo_configs() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../fitzsolve-cli/configs");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .expect("demo configs")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn run(config: &Path, out: &Path) -> ExitCode {
    let args = [
        "fitzsolve".as_ref(),
        "run".as_ref(),
        config.as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
        "--quiet".as_ref(),
    ];
    fitzsolve_cli::main_with(args)
}

/// Output files by name; the manifest's wall-time line is dropped.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().into_string().unwrap();
            let mut bytes = std::fs::read(e.path()).unwrap();
            if name == "manifest.toml" {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.starts_with("wall_time_s"))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            (name, bytes)
        })
        .collect();
    v.sort();
    v
}

pub fn reruns_identical() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    for cfg in demo_configs() {
        let stem = cfg.file_stem().unwrap().to_string_lossy().into_owned();
        let (a, b) = (
            tmp.path().join(format!("{stem}-a")),
            tmp.path().join(format!("{stem}-b")),
        );
        let (ca, cb) = (run(&cfg, &a), run(&cfg, &b));
        if ca != cb {
            parts.push((format!("{stem}: exit codes differ"), false));
            continue;
        }
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        let csvs = sa.iter().filter(|f| f.0.ends_with(".csv")).count();
        parts.push((
            format!("{stem}: {csvs} CSV files identical"),
            csvs > 0 && sa == sb,
        ));
    }
    Check::all(parts)
}
