use std::path::Path;
use std::process::{Command, Output};

fn diip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diip"))
        .args(args)
        .env_remove("DIIP_SEED")
        .output()
        .expect("spawn diip")
}

fn ok(args: &[&str]) -> String {
    let o = diip(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn degrade_echo_reproduces_the_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["degrade", "--out", s(&a), "--images", "4", "--seed", "3"]);
    let manifest = std::fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);

    let echo = std::fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(echo.starts_with("# diip "));
    assert!(echo.contains("layout = cycle"));
    ok(&["degrade", "--config", s(&a.join("config.txt")), "--out", s(&b)]);
    for name in ["manifest.csv", "clean_000.dimg", "degraded_002_02_gaussian_blur.dimg"] {
        assert_eq!(read(a.join(name)), read(b.join(name)), "{name}");
    }
}

#[test]
fn restore_round_trip_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["train", "--out", s(&p.join("m")), "--model", "gmm"]);
    ok(&["degrade", "--out", s(&p.join("d")), "--images", "1", "--kinds", "gaussian_blur", "--seed", "2"]);
    let ckpt = p.join("m/model.ckpt");
    let clean = p.join("d/clean_000.dimg");

    // A clean input is reproduced and its flattening loss trips the high rule.
    let r1 = p.join("r1");
    let text = ok(&[
        "restore", "--out", s(&r1), "--checkpoint", s(&ckpt), "--input", s(&clean), "--reference", s(&clean),
        "--max-iters", "300",
    ]);
    assert!(text.contains("criterion = high"), "{text}");
    for f in ["restored.dimg", "restored.png", "report.txt", "trajectory.csv", "config.txt"] {
        assert!(r1.join(f).exists(), "{f}");
    }

    let r2 = p.join("r2");
    ok(&["restore", "--config", s(&r1.join("config.txt")), "--out", s(&r2)]);
    assert_eq!(read(r1.join("restored.dimg")), read(r2.join("restored.dimg")));
    assert_eq!(read(r1.join("report.txt")), read(r2.join("report.txt")));

    let rep = p.join("rep");
    let traj = r1.join("trajectory.csv");
    ok(&["report", "--out", s(&rep), "--trajectories", s(&traj)]);
    for f in ["delta.png", "lap_var.png", "psnr.png", "minima.csv"] {
        assert!(rep.join(f).exists(), "{f}");
    }
    let minima = std::fs::read_to_string(rep.join("minima.csv")).unwrap();
    assert!(minima.starts_with("trajectory,k_min_delta,min_delta,k_max_lap_var,k_max_psnr"));
    assert_eq!(minima.lines().count(), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let missing = p.join("nope.ckpt");
    let input = p.join("in.dimg");
    let cases: Vec<Vec<&str>> = vec![
        vec!["restore", "--out", s(p), "--checkpoint", s(&missing), "--input", s(&input)],
        vec!["report", "--out", s(p)],
        vec!["degrade", "--out", s(p), "--imagse", "3"],
        vec!["degrade", "--out", s(p), "--kinds", "fog"],
        vec!["sharpen", "--out", s(p)],
        vec!["train", "--out", s(p), "--model", "unet"],
    ];
    for args in cases {
        let o = diip(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "), "{args:?}");
    }
}
