use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use varblur::io::{write_png, BitDepth};
use varblur::scene::natural_scene;
use varblur::Image;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_varblur"));
    c.env_remove("VARBLUR_SEED");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Sharp test image, a label map and a blurred-half mask.
fn inputs(dir: &Path) {
    let img = natural_scene(48, 48, 3, 21).unwrap();
    write_png(dir.join("u.png"), &img, BitDepth::Sixteen).unwrap();
    fs::create_dir_all(dir.join("sharp")).unwrap();
    fs::create_dir_all(dir.join("labels")).unwrap();
    write_png(dir.join("sharp/a.png"), &img, BitDepth::Eight).unwrap();
    let labels = Image::from_fn(48, 48, 1, |_, y, x| {
        if x < 20 {
            0.0
        } else if y < 24 {
            1.0 / 255.0
        } else {
            2.0 / 255.0
        }
    })
    .unwrap();
    write_png(dir.join("labels/a.png"), &labels, BitDepth::Eight).unwrap();
}

fn pipeline(dir: &Path, jobs: &str) {
    inputs(dir);
    let j = ["--jobs", jobs];
    run_in(
        dir,
        &[
            &j[..],
            &[
                "gen-kernels",
                "--count",
                "3",
                "--k",
                "9",
                "--seed",
                "4",
                "--out",
                "k.vbk1",
            ],
        ]
        .concat(),
    );
    run_in(
        dir,
        &[
            &j[..],
            &[
                "blur",
                "--input",
                "u.png",
                "--kernels",
                "k.vbk1",
                "--sigma",
                "0.01",
                "--seed",
                "2",
                "--out",
                "v.png",
            ],
        ]
        .concat(),
    );
    run_in(
        dir,
        &[
            &j[..],
            &[
                "deblur",
                "--input",
                "v.png",
                "--kernels",
                "k.vbk1",
                "--sigma",
                "0.01",
                "--out",
                "x.png",
                "--diag",
                "d.csv",
            ],
        ]
        .concat(),
    );
    run_in(
        dir,
        &[
            &j[..],
            &[
                "deblur",
                "--input",
                "v.png",
                "--kernels",
                "k.vbk1",
                "--saturated",
                "--out",
                "xs.png",
            ],
        ]
        .concat(),
    );
    run_in(
        dir,
        &[
            &j[..],
            &[
                "synth",
                "--sharp-dir",
                "sharp",
                "--labels-dir",
                "labels",
                "--out-dir",
                "synth",
                "--count",
                "3",
                "--k",
                "9",
                "--seed",
                "8",
                "--light-streaks",
            ],
        ]
        .concat(),
    );
    run_in(
        dir,
        &[
            &j[..],
            &[
                "detect",
                "--kernels",
                "synth/sample_00001.vbs1",
                "--out",
                "map.png",
            ],
        ]
        .concat(),
    );
    fs::create_dir_all(dir.join("m")).unwrap();
    let m = run_in(
        dir,
        &[
            "metrics",
            "--restored",
            "x.png",
            "--gt",
            "u.png",
            "--shift",
            "3",
            "--json",
            "m/full.json",
        ],
    );
    fs::write(dir.join("metrics_full.csv"), m.stdout).unwrap();
    let m = run_in(
        dir,
        &[
            "metrics",
            "--no-ref",
            "x.png",
            "--si-realizations",
            "8",
            "--seed",
            "7",
            "--json",
            "m/noref.json",
        ],
    );
    fs::write(dir.join("metrics_noref.csv"), m.stdout).unwrap();
    run_in(
        dir,
        &[
            "report",
            "--dir",
            "m",
            "--out",
            "report.csv",
            "--html",
            "report.html",
        ],
    );
}

fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(all_files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn pipelines_are_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "4");
    let fa = all_files(a.path());
    let fb = all_files(b.path());
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() >= 20, "{fa:?}");
    for (pa, pb) in fa.iter().zip(&fb) {
        assert_eq!(
            pa.strip_prefix(a.path()).unwrap(),
            pb.strip_prefix(b.path()).unwrap()
        );
        assert!(
            fs::read(pa).unwrap() == fs::read(pb).unwrap(),
            "{} differs",
            pa.display()
        );
    }
}

fn csv_field(line: &str, idx: usize) -> f64 {
    line.trim().split(',').nth(idx).unwrap().parse().unwrap()
}

#[test]
fn deblur_improves_on_the_blurred_input() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    inputs(d);
    run_in(
        d,
        &[
            "gen-kernels",
            "--count",
            "1",
            "--k",
            "11",
            "--seed",
            "3",
            "--out",
            "k.vbk1",
        ],
    );
    run_in(
        d,
        &[
            "blur",
            "--input",
            "u.png",
            "--kernels",
            "k.vbk1",
            "--sigma",
            "0",
            "--out",
            "v.png",
        ],
    );
    run_in(
        d,
        &[
            "deblur",
            "--input",
            "v.png",
            "--kernels",
            "k.vbk1",
            "--sigma",
            "0.005",
            "--out",
            "x.png",
        ],
    );
    let blurred = stdout(&run_in(
        d,
        &[
            "metrics",
            "--restored",
            "v.png",
            "--gt",
            "u.png",
            "--shift",
            "0",
        ],
    ));
    let restored = stdout(&run_in(
        d,
        &[
            "metrics",
            "--restored",
            "x.png",
            "--gt",
            "u.png",
            "--shift",
            "0",
        ],
    ));
    let (pb, pr) = (csv_field(&blurred, 1), csv_field(&restored, 1));
    assert!(pr > pb + 1.0, "{pb} -> {pr}");
}

#[test]
fn identical_files_report_the_psnr_sentinel() {
    let t = tempfile::tempdir().unwrap();
    inputs(t.path());
    let out = stdout(&run_in(
        t.path(),
        &[
            "metrics",
            "--restored",
            "u.png",
            "--gt",
            "u.png",
            "--header",
            "--json",
            "s.json",
        ],
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("file,psnr,ssim,dx,dy"));
    assert_eq!(csv_field(lines[1], 1), 99.0);
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(t.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(json["psnr"], 99.0);
}

#[test]
fn report_has_one_row_per_json() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::create_dir_all(d.join("r")).unwrap();
    for (i, p) in [30.5, 12.25, 99.0].iter().enumerate() {
        fs::write(
            d.join(format!("r/{i}.json")),
            format!("{{\"file\":\"f{i}\",\"psnr\":{p}}}"),
        )
        .unwrap();
    }
    fs::write(d.join("r/notes.txt"), "ignored").unwrap();
    let out = stdout(&run_in(d, &["report", "--dir", "r"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(
        lines[0],
        "file,psnr,ssim,dx,dy,intensity_scale,blur_strength,cpbd,cpbd_no_edges,sharpness_index,sharpness_index_se"
    );
    assert_eq!(lines[2], "f1,12.25,,,,,,,,,");
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    inputs(d);
    let code = |args: &[&str]| {
        bin()
            .current_dir(d)
            .args(args)
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(code(&["--version"]), Some(0));
    assert_eq!(code(&["blur", "--bogus"]), Some(1));
    assert_eq!(code(&["metrics"]), Some(1));
    assert_eq!(
        code(&[
            "blur",
            "--input",
            "missing.png",
            "--kernels",
            "k",
            "--out",
            "o.png"
        ]),
        Some(2)
    );
    fs::write(d.join("bad.vbk1"), b"VBK1\x01").unwrap();
    assert_eq!(
        code(&["detect", "--kernels", "bad.vbk1", "--out", "o.png"]),
        Some(2)
    );
    // a 48x48 field applied to a 24x24 latent image
    run_in(
        d,
        &[
            "synth",
            "--sharp-dir",
            "sharp",
            "--out-dir",
            "s",
            "--k",
            "5",
        ],
    );
    let small = natural_scene(24, 24, 3, 1).unwrap();
    write_png(d.join("small.png"), &small, BitDepth::Eight).unwrap();
    let out = bin()
        .current_dir(d)
        .args([
            "deblur",
            "--input",
            "small.png",
            "--kernels",
            "s/sample_00000.vbk1",
            "--out",
            "o.png",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("48x48"));
}

#[test]
fn seed_sources_and_config_precedence() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    inputs(d);
    run_in(
        d,
        &["gen-kernels", "--count", "1", "--k", "5", "--out", "k.vbk1"],
    );
    let blur = |extra: &[&str], env: Option<&str>, out: &str| {
        let mut c = bin();
        if let Some(s) = env {
            c.env("VARBLUR_SEED", s);
        }
        let args = [
            &[
                "blur",
                "--input",
                "u.png",
                "--kernels",
                "k.vbk1",
                "--sigma",
                "0.05",
                "--out",
                out,
            ][..],
            extra,
        ]
        .concat();
        assert!(c.current_dir(d).args(&args).status().unwrap().success());
        fs::read(d.join(out)).unwrap()
    };
    let flag = blur(&["--seed", "5"], None, "a.png");
    assert_eq!(blur(&[], Some("5"), "b.png"), flag);
    assert_ne!(blur(&[], None, "c.png"), flag);
    assert_eq!(blur(&["--seed", "5"], Some("9"), "d.png"), flag);

    fs::write(d.join("c.cfg"), "seed = 5\n[blur]\nsigma = 0.05\n").unwrap();
    let cfg = run_in(
        d,
        &[
            "--config",
            "c.cfg",
            "blur",
            "--input",
            "u.png",
            "--kernels",
            "k.vbk1",
            "--out",
            "e.png",
        ],
    );
    assert!(cfg.status.success());
    assert_eq!(fs::read(d.join("e.png")).unwrap(), flag);
    run_in(
        d,
        &[
            "--config",
            "c.cfg",
            "blur",
            "--input",
            "u.png",
            "--kernels",
            "k.vbk1",
            "--out",
            "f.png",
            "--seed",
            "6",
        ],
    );
    assert_eq!(
        fs::read(d.join("f.png")).unwrap(),
        blur(&["--seed", "6"], None, "g.png")
    );

    fs::write(d.join("bad.cfg"), "[blur]\nnot-a-flag = 1\n").unwrap();
    let out = bin()
        .current_dir(d)
        .args([
            "--config",
            "bad.cfg",
            "blur",
            "--input",
            "u.png",
            "--kernels",
            "k.vbk1",
            "--out",
            "h.png",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
