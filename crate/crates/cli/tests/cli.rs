use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_silrig"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn silrig")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Shared {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

/// One fixture and one reconstruction reused across tests.
fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let o = run(&[
            "fixture",
            "make",
            "plain_tpose",
            "--out",
            p(&root.join("fx")),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = run(&[
            "reconstruct",
            "--fixture",
            p(&root.join("fx/plain_tpose")),
            "--out",
            p(&root.join("rec")),
            "--keep-intermediates",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Shared { _dir: dir, root }
    })
}

fn write_mask(path: &Path, f: impl Fn(usize, usize) -> bool) {
    // 8-bit grayscale PNG through the core crate's writer
    let m = silrig::RasterMap::mask_from_fn(256, 256, f);
    m.save_png(path).unwrap();
}

#[test]
fn reconstruct_writes_outputs() {
    let s = shared();
    let rec = s.root.join("rec");
    for f in [
        "mesh.gltf",
        "mesh.bin",
        "mesh.png",
        "mesh.json",
        "report.json",
        "manifest.json",
        "config.toml",
        "labels.fmap",
    ] {
        assert!(rec.join(f).is_file(), "missing {f}");
    }
    assert!(rec.join("intermediates/occlusion.fmap").is_file());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rec.join("report.json")).unwrap()).unwrap();
    assert!(report["iou"].as_f64().unwrap() >= 0.98);
    assert_eq!(report["closed"], true);
    assert!(report["timings"].as_array().unwrap().len() >= 4);
}

#[test]
fn runs_are_byte_identical() {
    let s = shared();
    let again = s.root.join("rec2");
    let o = run(&[
        "reconstruct",
        "--fixture",
        p(&s.root.join("fx/plain_tpose")),
        "--out",
        p(&again),
        "--seed",
        "0",
    ]);
    assert_eq!(code(&o), 0);
    let a = std::fs::read(s.root.join("rec/mesh.json")).unwrap();
    let b = std::fs::read(again.join("mesh.json")).unwrap();
    assert!(a == b, "mesh dumps differ");
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.png");
    write_mask(&empty, |_, _| false);
    let o = run(&[
        "reconstruct",
        "--mask",
        p(&empty),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("input"));
    let o = run(&[
        "reconstruct",
        "--mask",
        p(&dir.path().join("missing.png")),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    let o = run(&[
        "reconstruct",
        "--mask",
        p(&empty),
        "--set",
        "params.no_such_key=1",
    ]);
    assert_eq!(code(&o), 2);
    let o = run(&[
        "reconstruct",
        "--mask",
        p(&empty),
        "--set",
        "params.seam_band=0",
    ]);
    assert_eq!(code(&o), 2);
    let o = run(&["fixture", "make", "no_such_fixture", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    let o = run(&["no-such-command"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn degenerate_silhouette_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let line = dir.path().join("line.png");
    write_mask(&line, |x, y| y == 128 && (60..200).contains(&x));
    let o = run(&[
        "reconstruct",
        "--mask",
        p(&line),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_file_and_overrides() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let fx = s.root.join("fx/plain_tpose");
    std::fs::write(
        &cfg,
        format!(
            "[input]\nfixture = \"{}\"\n[params]\nback_mode = \"inpaint\"\n",
            p(&fx)
        ),
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "reconstruct",
        "--config",
        p(&cfg),
        "--set",
        "params.smoothing_iterations=1",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("smoothing_iterations = 1"));
    assert!(written.contains("back_mode = \"inpaint\""));
    assert!(out.join("back_provenance.json").is_file());
}

#[test]
fn animate_and_texture() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let rot = serde_json::json!({ "root": [std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2, 0.0] });
    let clip =
        serde_json::json!({ "fps": 10.0, "frames": [{ "rotations": {} }, { "rotations": rot }] });
    let cp = dir.path().join("clip.json");
    std::fs::write(&cp, clip.to_string()).unwrap();
    let out = dir.path().join("anim");
    let o = run(&[
        "animate",
        "--mesh",
        p(&s.root.join("rec")),
        "--clip",
        p(&cp),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("animated.gltf").is_file());
    let f0: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("frames/frame_0000.json")).unwrap())
            .unwrap();
    let mesh: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(s.root.join("rec/mesh.json")).unwrap())
            .unwrap();
    let (a, b) = (&f0["vertices"][17], &mesh["vertices"][17]);
    for k in 0..3 {
        assert!((a[k].as_f64().unwrap() - b[k].as_f64().unwrap()).abs() < 1e-6);
    }
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"fps": 10.0, "frames": [{"rotations": {"tail": [1, 0, 0, 0]}}]}"#,
    )
    .unwrap();
    let o = run(&[
        "animate",
        "--mesh",
        p(&s.root.join("rec")),
        "--clip",
        p(&bad),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 2);

    let tex = dir.path().join("tex");
    let o = run(&[
        "texture",
        "--fixture",
        p(&s.root.join("fx/plain_tpose")),
        "--mode",
        "inpaint",
        "--out",
        p(&tex),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["front.png", "back.png", "atlas.png", "provenance.json"] {
        assert!(tex.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn template_render() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["template", "render", "--size", "64", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("front/manifest.json").is_file());
    assert!(dir.path().join("back_silhouette.png").is_file());
}

fn http(addr: &str, request: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).unwrap();
    let status = buf.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = buf
        .split_once("\r\n\r\n")
        .map(|x| x.1.to_string())
        .unwrap_or_default();
    (status, body)
}

#[test]
fn serve_endpoints() {
    let s = shared();
    let dir = s.root.join("rec");
    let mut child = bin()
        .args(["serve", "--out", p(&dir), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .trim_start_matches("listening on http://")
        .to_string();
    let get = |path: &str| {
        http(
            &addr,
            &format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n"),
        )
    };
    let post = |body: &str| {
        http(
            &addr,
            &format!("POST /pose HTTP/1.1\r\nHost: x\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()),
        )
    };
    let (st, body) = get("/manifest.json");
    assert_eq!(st, 200);
    assert!(body.contains("\"mesh\""));
    assert_eq!(get("/nothing-here").0, 404);
    assert_eq!(get("/../Cargo.toml").0, 404);
    let (st, _) =
        post(r#"{"rotations": {"elbow_r": [0.7071067811865476, 0.0, 0.0, 0.7071067811865476]}}"#);
    assert_eq!(st, 200);
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("pose.json")).unwrap()).unwrap();
    assert!(saved["rotations"]["elbow_r"].is_array());
    assert_eq!(post(r#"{"rotations": {"tail": [1, 0, 0, 0]}}"#).0, 400);
    assert_eq!(post("not json").0, 400);
    child.kill().unwrap();
    child.wait().unwrap();
}
