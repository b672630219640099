//! End-to-end runs of the `dsslic` binary on tiny synthetic data.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsslic::codec::{BackendRegistry, Codec, ParseMode};
use dsslic::networks::{DsslicNetworks, NetworkConfig, Variant};
use dsslic::training::write_synthetic_dataset;
use tempfile::TempDir;

fn dsslic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsslic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    with_seg: PathBuf,
    no_seg: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_dataset(&dir.path().join("data"), 3, 32, 40, 4, 7).unwrap();
        let cfg = |use_segmentation| NetworkConfig {
            num_labels: 4,
            alpha: 4,
            base_filters: 4,
            res_blocks: 1,
            disc_filters: 4,
            use_segmentation,
        };
        let with_seg = dir.path().join("withseg.dssw");
        let no_seg = dir.path().join("noseg.dssw");
        DsslicNetworks::new(cfg(true), 1).unwrap().save(&with_seg, Variant::WithSeg).unwrap();
        DsslicNetworks::new(cfg(false), 2).unwrap().save(&no_seg, Variant::NoSeg).unwrap();
        Self { dir, with_seg, no_seg }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn image(&self) -> PathBuf {
        self.path("data/images/scene000.png")
    }

    fn labels(&self) -> PathBuf {
        self.path("data/labels/scene000.png")
    }

    fn encode(&self, out: &Path, extra: &[&str]) -> Output {
        let (image, labels) = (self.image(), self.labels());
        let mut args = vec![
            "encode",
            s(&image),
            "-o",
            s(out),
            "--weights",
            s(&self.with_seg),
            "--labels",
            s(&labels),
        ];
        args.extend_from_slice(extra);
        dsslic(&args)
    }
}

/// `(layer, bytes)` rows of the encode report.
fn layer_rows(report: &str) -> Vec<(String, usize)> {
    report
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split_whitespace();
            (f.next().unwrap().to_string(), f.next().unwrap().parse().unwrap())
        })
        .collect()
}

#[test]
fn encode_decode_roundtrip_matches_the_library() {
    let fx = Fixture::new();
    let bin = fx.path("a.dssl");
    let out = fx.encode(&bin, &["--quality", "6"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let rows = layer_rows(&stdout(&out));
    let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["header", "segmentation", "compact", "residual", "total"]);
    let file_len = std::fs::metadata(&bin).unwrap().len() as usize;
    assert_eq!(rows[4].1, file_len);
    assert_eq!(rows[..4].iter().map(|r| r.1).sum::<usize>(), file_len);
    assert!(rows[3].1 > 0);

    let png = fx.path("a.png");
    let dec = dsslic(&["decode", s(&bin), "-o", s(&png), "--weights", s(&fx.with_seg)]);
    assert!(dec.status.success(), "{}", stderr(&dec));
    let got = image::open(&png).unwrap().into_rgb8();

    let (nets, v) = DsslicNetworks::load(&fx.with_seg).unwrap();
    let codec = Codec::new(nets, v, BackendRegistry::builtin()).unwrap();
    let want = codec
        .decode(&std::fs::read(&bin).unwrap(), ParseMode::Strict)
        .unwrap()
        .image;
    assert_eq!(got, want);
    assert_eq!(got.dimensions(), (40, 32));
}

#[test]
fn no_residual_leaves_the_layer_empty() {
    let fx = Fixture::new();
    let bin = fx.path("b.dssl");
    let out = fx.encode(&bin, &["--no-residual"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = layer_rows(&stdout(&out));
    assert_eq!(rows[3], ("residual".to_string(), 0));
    assert_eq!(rows[4].1, std::fs::metadata(&bin).unwrap().len() as usize);
}

#[test]
fn truncated_container_needs_resilient_mode() {
    let fx = Fixture::new();
    let bin = fx.path("c.dssl");
    assert!(fx.encode(&bin, &["--quality", "12"]).status.success());
    let bytes = std::fs::read(&bin).unwrap();
    let cut = fx.path("cut.dssl");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let png = fx.path("cut.png");

    let strict = dsslic(&["decode", s(&cut), "-o", s(&png), "--weights", s(&fx.with_seg)]);
    assert_eq!(strict.status.code(), Some(2));
    assert!(stderr(&strict).contains("truncated"));

    let res = dsslic(&["decode", s(&cut), "-o", s(&png), "--weights", s(&fx.with_seg), "--resilient"]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(stderr(&res).contains("residual"));
    assert!(png.is_file());
}

#[test]
fn no_seg_weights_encode_without_labels() {
    let fx = Fixture::new();
    let bin = fx.path("d.dssl");
    let out = dsslic(&["encode", s(&fx.image()), "-o", s(&bin), "--weights", s(&fx.no_seg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(layer_rows(&stdout(&out))[1].1, 0);
}

#[test]
fn eval_writes_reproducible_curves_and_plots() {
    let fx = Fixture::new();
    let data = fx.path("data");
    let run = |out: &Path, jobs: &str| {
        dsslic(&[
            "eval",
            "--dataset",
            s(&data),
            "-o",
            s(out),
            "--weights",
            s(&fx.with_seg),
            "--codec",
            "dsslic:0,12,24",
            "--codec",
            "jpeg:20,50,80",
            "--jobs",
            jobs,
        ])
    };
    let (a, b) = (fx.path("eval_a"), fx.path("eval_b"));
    let oa = run(&a, "1");
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(run(&b, "2").status.success());
    for f in ["rd.csv", "rd_dsslic.csv", "rd_jpeg.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("rd.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    for f in ["rd_psnr.svg", "rd_msssim.svg"] {
        assert!(std::fs::read_to_string(a.join(f)).unwrap().contains("<svg"));
    }
}

#[test]
fn eval_reports_a_backend_error_when_every_codec_fails() {
    let fx = Fixture::new();
    let out = dsslic(&[
        "eval",
        "--dataset",
        s(&fx.path("data")),
        "-o",
        s(&fx.path("eval_webp")),
        "--codec",
        "webp:50",
        "--baseline-bin",
        "webp=/nonexistent/cwebp,/nonexistent/dwebp",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn ablate_writes_variants_as_columns() {
    let fx = Fixture::new();
    let out_dir = fx.path("ablate");
    let out = dsslic(&[
        "ablate",
        "--dataset",
        s(&fx.path("data")),
        "-o",
        s(&out_dir),
        "--weights",
        &format!("withSeg={}", s(&fx.with_seg)),
        "--weights",
        &format!("noSeg={}", s(&fx.no_seg)),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "metric,upComp,noSeg,withSeg");
    assert!(lines[1].starts_with("BPP,"));
    assert!(lines[2].starts_with("PSNR,"));
    assert!(lines[3].starts_with("MS-SSIM,"));
    assert!(lines.iter().any(|l| l.starts_with("# synth")));
}

#[test]
fn train_runs_one_tiny_epoch() {
    let fx = Fixture::new();
    let out_dir = fx.path("run");
    let root = format!("dataset.root=\"{}\"", s(&fx.path("data")));
    let out = dsslic(&[
        "train",
        "-o",
        s(&out_dir),
        "--alpha",
        "4",
        "--seed",
        "3",
        "--set",
        "epochs_total=1",
        "--set",
        "epochs_lr_fixed=1",
        "--set",
        "epochs_no_perceptual_tail=0",
        "--set",
        "max_steps_per_epoch=1",
        "--set",
        "network.base_filters=4",
        "--set",
        "network.res_blocks=1",
        "--set",
        "network.disc_filters=4",
        "--set",
        &root,
        "--set",
        "dataset.resize=none",
        "--set",
        "dataset.num_labels=4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("weights.dssw").is_file());
    assert!(out_dir.join("loss.csv").is_file());
    assert!(out_dir.join("checkpoints/epoch_0000.dssw").is_file());
    let (nets, v) = DsslicNetworks::load(&out_dir.join("weights.dssw")).unwrap();
    assert_eq!(v, Variant::WithSeg);
    assert_eq!(nets.config().alpha, 4);
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    let code = |args: &[&str]| dsslic(args).status.code();

    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&[]), Some(1));
    assert_eq!(code(&["encode", "--bogus"]), Some(1));
    assert_eq!(code(&["decode", "x", "-o", "y", "--weights", "w", "--strict", "--resilient"]), Some(1));
    // missing input
    let missing = fx.path("missing.png");
    assert_eq!(
        code(&["encode", s(&missing), "-o", s(&fx.path("m.dssl")), "--weights", s(&fx.with_seg)]),
        Some(1)
    );
    // bad override is a configuration error
    assert_eq!(code(&["train", "--set", "epochs_total=0"]), Some(1));

    // corrupt container
    let junk = fx.path("junk.dssl");
    std::fs::write(&junk, b"DSSLnot a container").unwrap();
    let out = dsslic(&["decode", s(&junk), "-o", s(&fx.path("j.png")), "--weights", s(&fx.with_seg)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    // variant the weights cannot run
    let out = dsslic(&[
        "encode",
        s(&fx.image()),
        "-o",
        s(&fx.path("v.dssl")),
        "--weights",
        s(&fx.no_seg),
        "--variant",
        "withSeg",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // segmentation program that does not exist
    let out = dsslic(&[
        "encode",
        s(&fx.image()),
        "-o",
        s(&fx.path("seg.dssl")),
        "--weights",
        s(&fx.with_seg),
        "--segmenter",
        "/nonexistent/segment {input} {output}",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}
