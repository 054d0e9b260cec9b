//! Compiles `tests/smoke.c` against the generated header and the static
//! library, then runs it on freshly written checkpoints.

use std::path::{Path, PathBuf};
use std::process::Command;

use embedsafe::checkpoint::ModelCheckpoint;
use embedsafe::embedding::{EmbeddingArch, EmbeddingNet};

fn target_dir() -> PathBuf {
    // target/<profile>/deps/c_smoke-<hash>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn find_staticlib(dir: &Path) -> Option<PathBuf> {
    let p = dir.join("libembedsafe_ffi.a");
    p.exists().then_some(p)
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = find_staticlib(&target_dir()).expect("libembedsafe_ffi.a next to the test binary");
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run C compiler");
    assert!(status.success(), "C compile failed");

    let arch = EmbeddingArch {
        input_width: 12,
        input_height: 12,
        conv1_channels: 2,
        conv2_channels: 2,
        hidden_units: 6,
        embedding_dim: 5,
        ..EmbeddingArch::mnist()
    };
    let net = EmbeddingNet::<f32>::init(arch.clone(), 1).unwrap();
    let ep = dir.path().join("e.ckpt");
    let gp = dir.path().join("g.ckpt");
    ModelCheckpoint::from_embedding(&net, serde_json::Value::Null)
        .save(&ep)
        .unwrap();
    ModelCheckpoint::identity(arch.input_shape()).save(&gp).unwrap();

    let out = Command::new(&exe).arg(&ep).arg(&gp).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout}{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.starts_with("ok "), "{stdout}");
}
