mod common;

use common::*;
use himosa::data::load_image;

#[test]
fn unknown_flag_prints_usage() {
    let o = himosa(&["flops", "--bogus"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = himosa(&["frobnicate"], None);
    assert!(!o.status.success());
}

#[test]
fn errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "channels = banana\n").unwrap();
    let missing = dir.path().join("missing.cfg");
    for args in [
        vec!["flops", "--config", missing.to_str().unwrap()],
        vec!["flops", "--config", bad.to_str().unwrap()],
        vec!["eval", "--config", bad.to_str().unwrap(), "--ckpt", "x", "--data", "y"],
    ] {
        let o = himosa(&args, None);
        assert_eq!(o.status.code(), Some(1));
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }
    let o = himosa(&["check", "--suite", "oracle"], Some("lots"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("HIMOSA_THREADS"));
}

#[test]
fn flops_reports_paper_totals() {
    let cfg = repo_file("configs/paper.cfg");
    let o = himosa(&["flops", "--config", cfg.to_str().unwrap(), "--size", "256x256"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("total\t4059288\t"), "{out}");
    assert!(out.contains("139.58G"));
    assert_eq!(out.lines().filter(|l| l.contains(".attn\t")).count(), 24);
}

#[test]
fn sr_upscales_by_the_model_factor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config_with(d, "x4.cfg", "configs/tiny.cfg", &[("scale", "4")]);
    let ckpt = d.join("init.himo");
    fresh_checkpoint(&cfg, &ckpt);
    himosa::data::save_image(&picture(64, 64), d.join("in.png")).unwrap();
    let out = d.join("out.png");
    let args = ["sr", "--config", cfg.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(), "--in"];
    let o = himosa(&[&args[..], &[d.join("in.png").to_str().unwrap(), "--out", out.to_str().unwrap(), "--scale", "4"]].concat(), None);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = load_image(&out).unwrap();
    assert_eq!((img.width(), img.height()), (256, 256));

    let o = himosa(&[&args[..], &[d.join("in.png").to_str().unwrap(), "--out", out.to_str().unwrap(), "--scale", "2"]].concat(), None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--scale 2"));

    let fixture = repo_file("crates/cli/tests/fixtures/rgb_2x2.png");
    let small = d.join("small.ppm");
    let o = himosa(&[&args[..], &[fixture.to_str().unwrap(), "--out", small.to_str().unwrap()]].concat(), None);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = load_image(&small).unwrap();
    assert_eq!((img.width(), img.height()), (8, 8));
}

#[test]
fn train_eval_routes_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = single_image_manifest(d, 32);
    let cfg = config_with(d, "short.cfg", "configs/tiny.cfg", &[
        ("total_iters", "3"),
        ("decay_points", ""),
        ("warmup_iters", "1"),
        ("patch", "8"),
        ("checkpoint_every", "2"),
    ]);
    let out = d.join("run");
    let c = cfg.to_str().unwrap();
    let o = himosa(&["train", "--config", c, "--data", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()], Some("1"));
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(out.join("ckpt_00000002.himo").is_file());
    let last = out.join("last.himo");

    let o = himosa(&["eval", "--config", c, "--ckpt", last.to_str().unwrap(), "--data", manifest.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.starts_with("image\tpsnr_db\tssim"), "{table}");
    assert!(table.lines().any(|l| l.starts_with("mean\t")));

    let lr = d.join("lr.png");
    himosa::data::save_image(&picture(12, 10), &lr).unwrap();
    let masks = d.join("masks");
    let o = himosa(&["routes", "--config", c, "--ckpt", last.to_str().unwrap(), "--in", lr.to_str().unwrap(), "--out", masks.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(&masks).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let want: Vec<String> = (0..3).flat_map(|l| (0..2).map(move |e| format!("b0_l{l}_e{e}.png"))).collect();
    assert_eq!(names, want);
    let mask = load_image(masks.join("b0_l1_e0.png")).unwrap();
    assert_eq!((mask.width(), mask.height()), (12, 10));
}
