//! Compiles and runs a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// `target/<profile>`, two levels above the test executable in `deps/`.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(manifest_dir().join("include/ldp.h")).unwrap();
    for name in [
        "ldp_qmatrix_new",
        "ldp_qmatrix_free",
        "ldp_qmatrix_n",
        "ldp_qmatrix_killing",
        "ldp_principal_eigenvalue",
        "ldp_expm_apply",
        "ldp_survival_probability",
        "ldp_balance",
        "ldp_rate",
        "ldp_survival_rate_variational",
        "ldp_last_error",
        "ldp_version",
        "LDP_STATUS_NOT_CONVERGED",
        "typedef struct LdpQMatrix LdpQMatrix",
    ] {
        assert!(h.contains(name), "missing {name}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = profile_dir().join("libldp_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(manifest_dir().join("tests/c_smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.starts_with(&format!("ok {} ", env!("CARGO_PKG_VERSION"))),
        "{text}"
    );
}
