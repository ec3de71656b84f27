//! Compiles and runs a small C program against the generated header and
//! the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "skyrelay.h"

int main(void) {
    SkyrelayConfig *cfg = NULL;
    if (skyrelay_config_new(&cfg) != SKYRELAY_STATUS_OK) return 1;
    uint32_t scenarios[] = { SKYRELAY_SCENARIO_BFA };
    uint32_t vehicles[] = { 6 };
    uint32_t fps[] = { 30 };
    uint64_t seeds[] = { 1 };
    skyrelay_config_set_scenarios(cfg, scenarios, 1);
    skyrelay_config_set_vehicles(cfg, vehicles, 1);
    skyrelay_config_set_fps(cfg, fps, 1);
    skyrelay_config_set_seeds(cfg, seeds, 1);
    skyrelay_config_set_time(cfg, 1.0, 0.1);

    SkyrelaySweep *sweep = NULL;
    if (skyrelay_sweep_run(cfg, &sweep) != SKYRELAY_STATUS_OK) return 2;
    if (skyrelay_sweep_len(sweep) != 1) return 3;
    SkyrelayRecord rec;
    if (skyrelay_sweep_get(sweep, 0, &rec) != SKYRELAY_STATUS_OK) return 4;
    if (rec.scenario != SKYRELAY_SCENARIO_BFA || rec.n_vehicles != 6) return 5;
    if (!(rec.latency_l1_s < rec.latency_l2_s)) return 6;
    if (skyrelay_sweep_get(sweep, 1, &rec) != SKYRELAY_STATUS_OUT_OF_RANGE) return 7;
    if (skyrelay_last_error() == NULL) return 8;
    printf("%s %.6f %.4f\n", skyrelay_version(), rec.latency_total_s * 1e3, rec.reliability);
    skyrelay_sweep_free(sweep);
    skyrelay_config_free(cfg);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps/
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn find_cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/skyrelay.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in [
        "typedef struct SkyrelayConfig SkyrelayConfig",
        "typedef struct SkyrelaySweep SkyrelaySweep",
        "SKYRELAY_STATUS_OK = 0",
        "SkyrelayRecord",
        "skyrelay_sweep_run",
        "skyrelay_last_error",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = find_cc() else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    let lib = target_dir().join("libskyrelay_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
