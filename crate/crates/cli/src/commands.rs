use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use dsslic::codec::{BackendRegistry, BpgCodec, Codec, FlifCodec, ParseMode, ResidualSetting};
use dsslic::evaluation::{
    ablation_table, bpp, plot_svg, sweep_rd, write_rd_csv, BaselineCodec, BaselineKind,
    CodecPipeline, DsslicPipeline, EvalImage, Metric, RdCurve,
};
use dsslic::networks::{CommandSegmenter, DsslicNetworks, PrecomputedMaps, Segmenter, Variant};
use dsslic::training::{train, TrainingConfig};
use dsslic::{Error, SegmentationMap};
use image::RgbImage;

use crate::{AblateArgs, Cli, Command, DecodeArgs, EncodeArgs, EvalArgs, ModelArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or a missing input path.
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 1,
            CliError::Core(Error::Backend { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} is not a directory", path.display())))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let registry = registry(&cli)?;
    match cli.command {
        Command::Train(ref a) => cmd_train(a, cli.seed),
        Command::Encode(ref a) => cmd_encode(a, registry),
        Command::Decode(ref a) => cmd_decode(a, registry),
        Command::Eval(ref a) => cmd_eval(a, &cli, registry),
        Command::Ablate(ref a) => cmd_ablate(a, registry),
    }
}

/// `bpgenc`/`bpgdec` paths from `--backend-bpg`, which names either their
/// directory or the encoder itself.
fn bpg_programs(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join("bpgenc"), path.join("bpgdec"))
    } else {
        let dec = path.with_file_name("bpgdec");
        (path.to_path_buf(), dec)
    }
}

fn registry(cli: &Cli) -> Result<BackendRegistry> {
    let mut r = BackendRegistry::builtin();
    if let Some(p) = &cli.backend_flif {
        require_file(p, "flif executable")?;
        r.flif = Some(FlifCodec::with_program(p));
    }
    if let Some(p) = &cli.backend_bpg {
        let (enc, dec) = bpg_programs(p);
        require_file(&enc, "bpg encoder")?;
        r.bpg = Some(BpgCodec::with_programs(enc, dec));
    }
    Ok(r)
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p, "config")?;
            TrainingConfig::load(p)?
        }
        None => TrainingConfig::default(),
    };
    let mut overrides = a.overrides.clone();
    if let Some(v) = a.variant {
        overrides.push(format!("variant=\"{v}\""));
    }
    if let Some(alpha) = a.alpha {
        overrides.push(format!("network.alpha={alpha}"));
    }
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    cfg = cfg.with_overrides(&overrides)?;
    if let Some(out) = &a.output {
        cfg.output_dir = out.clone();
    }
    if let Some(r) = &a.resume {
        require_file(r, "checkpoint")?;
    }
    require_dir(&cfg.dataset.root, "dataset")?;
    let outcome = train(&cfg, a.resume.as_deref())?;
    if let Some(last) = outcome.history.last() {
        println!("epoch {} step {}: {}", last.epoch, last.step, last.report);
    }
    println!("weights: {}", outcome.paths.weights.display());
    println!("loss history: {}", outcome.paths.loss_csv.display());
    println!("checkpoints: {}", outcome.checkpoints.len());
    Ok(())
}

/// Loads the weights and builds a codec for the requested variant.
fn load_codec(m: &ModelArgs, registry: BackendRegistry) -> Result<Codec> {
    require_file(&m.weights, "weights")?;
    let (nets, trained) = DsslicNetworks::load(&m.weights)?;
    let variant = m.variant.unwrap_or(trained);
    if variant.weights_variant() != trained && variant != trained {
        return Err(Error::WeightsMismatch(format!(
            "weights were trained as {trained}, {variant} needs {}",
            variant.weights_variant()
        ))
        .into());
    }
    if let Some(alpha) = m.alpha {
        if alpha != nets.config().alpha {
            return Err(Error::WeightsMismatch(format!(
                "--alpha {alpha} but the weights use {}",
                nets.config().alpha
            ))
            .into());
        }
    }
    Ok(Codec::new(nets, variant, registry)?)
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(Error::from)?.into_rgb8())
}

fn cmd_encode(a: &EncodeArgs, registry: BackendRegistry) -> Result<()> {
    require_file(&a.input, "input")?;
    if a.quality > dsslic::codec::container::MAX_QUALITY {
        return Err(usage(format!(
            "--quality {} is above {}",
            a.quality,
            dsslic::codec::container::MAX_QUALITY
        )));
    }
    let codec = load_codec(&a.model, registry)?;
    let image = open_rgb(&a.input)?;
    let num_labels = codec.networks().config().num_labels;
    let seg = if !codec.variant().uses_segmentation() {
        None
    } else if let Some(p) = &a.labels {
        require_file(p, "label map")?;
        Some(SegmentationMap::load(p, num_labels)?)
    } else if let Some(cmd) = &a.segmenter {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| usage("--segmenter is empty"))?;
        let seg = CommandSegmenter::new(program, parts.collect(), num_labels);
        let id = a.input.to_string_lossy();
        Some(seg.segment(&id, &dsslic::ImagePlane::from_rgb8(&image))?)
    } else {
        return Err(usage(format!(
            "variant {} needs --labels or --segmenter",
            codec.variant()
        )));
    };
    let residual = if a.no_residual {
        ResidualSetting::Skip
    } else {
        ResidualSetting::Code {
            backend: codec.backends().preferred_lossy(),
            quality: a.quality,
        }
    };
    let enc = codec.encode(&image, seg.as_ref(), residual)?;
    let bytes = enc.bitstream.serialize()?;
    write_file(&a.output, &bytes)?;

    let (w, h) = image.dimensions();
    let sizes = enc.bitstream.layer_sizes();
    let row = |name: &str, n: usize| -> Result<()> {
        println!("{name:<13}{n:>10}{:>12.5}", bpp(n, h as usize, w as usize, 3)?);
        Ok(())
    };
    println!("{:<13}{:>10}{:>12}", "layer", "bytes", "bpp");
    row("header", sizes.header)?;
    row("segmentation", sizes.segmentation)?;
    row("compact", sizes.compact)?;
    row("residual", sizes.residual)?;
    row("total", bytes.len())?;
    Ok(())
}

fn cmd_decode(a: &DecodeArgs, registry: BackendRegistry) -> Result<()> {
    require_file(&a.input, "input")?;
    let codec = load_codec(&a.model, registry)?;
    let bytes = std::fs::read(&a.input).map_err(|source| Error::Io {
        path: a.input.clone(),
        source,
    })?;
    let mode = if a.resilient {
        ParseMode::Resilient
    } else {
        ParseMode::Strict
    };
    let dec = codec.decode(&bytes, mode)?;
    for w in &dec.warnings {
        eprintln!("warning: {w}");
    }
    if !dec.dropped_layers.is_empty() {
        eprintln!("warning: dropped layers: {}", dec.dropped_layers.join(", "));
    }
    dec.image.save(&a.output).map_err(Error::from)?;
    let (w, h) = dec.image.dimensions();
    println!("{}: {w}×{h}", a.output.display());
    Ok(())
}

/// Images under `dir`, sorted by file name, keyed by their stem.
fn load_images(dir: &Path) -> Result<Vec<(String, RgbImage)>> {
    require_dir(dir, "image directory")?;
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((id, open_rgb(&p)?));
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", dir.display())).into());
    }
    Ok(out)
}

fn default_qualities(name: &str) -> Vec<u32> {
    match name {
        "dsslic" => vec![6, 12, 18, 24, 30],
        "jpeg2000" => vec![160, 80, 40, 20, 10],
        "bpg" => vec![42, 37, 32, 27, 22],
        _ => vec![10, 30, 50, 70, 90],
    }
}

/// `NAME[:Q1,Q2,...]`
fn parse_codec_spec(spec: &str) -> Result<(String, Vec<u32>)> {
    let (name, qs) = match spec.split_once(':') {
        Some((n, q)) => (n.to_ascii_lowercase(), Some(q)),
        None => (spec.to_ascii_lowercase(), None),
    };
    if name != "dsslic" && name.parse::<BaselineKind>().is_err() {
        return Err(usage(format!("unknown codec {name:?}")));
    }
    let qualities = match qs {
        None => default_qualities(&name),
        Some(q) => q
            .split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|_| usage(format!("bad quality {t:?} in {spec:?}"))))
            .collect::<Result<_>>()?,
    };
    if qualities.is_empty() {
        return Err(usage(format!("no qualities in {spec:?}")));
    }
    Ok((name, qualities))
}

fn default_programs(kind: BaselineKind) -> (PathBuf, PathBuf) {
    let (e, d) = match kind {
        BaselineKind::Jpeg2000 => ("opj_compress", "opj_decompress"),
        BaselineKind::Webp => ("cwebp", "dwebp"),
        _ => ("bpgenc", "bpgdec"),
    };
    (e.into(), d.into())
}

fn cmd_eval(a: &EvalArgs, cli: &Cli, registry: BackendRegistry) -> Result<()> {
    require_dir(&a.dataset, "dataset")?;
    let images = load_images(&a.dataset.join("images"))?;
    let dataset_name = a
        .dataset
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());

    let mut specs: Vec<(String, Vec<u32>)> =
        a.codecs.iter().map(|s| parse_codec_spec(s)).collect::<Result<_>>()?;
    if specs.is_empty() {
        if a.weights.is_some() {
            specs.push(("dsslic".into(), default_qualities("dsslic")));
        }
        specs.push(("jpeg".into(), default_qualities("jpeg")));
    }

    let mut bins: BTreeMap<String, (PathBuf, PathBuf)> = BTreeMap::new();
    if let Some(p) = &cli.backend_bpg {
        bins.insert("bpg".into(), bpg_programs(p));
    }
    for b in &a.baseline_bins {
        let (kind, progs) = b
            .split_once('=')
            .ok_or_else(|| usage(format!("--baseline-bin {b:?} is not KIND=ENC,DEC")))?;
        let (enc, dec) = progs
            .split_once(',')
            .ok_or_else(|| usage(format!("--baseline-bin {b:?} is not KIND=ENC,DEC")))?;
        let kind: BaselineKind = kind.parse()?;
        bins.insert(kind.name().into(), (enc.into(), dec.into()));
    }

    let dsslic_codec = if specs.iter().any(|(n, _)| n == "dsslic") {
        let weights = a.weights.clone().ok_or_else(|| usage("codec dsslic needs --weights"))?;
        let m = ModelArgs {
            weights,
            variant: a.variant,
            alpha: None,
        };
        Some(load_codec(&m, registry)?)
    } else {
        None
    };
    let maps = dsslic_codec
        .as_ref()
        .map(|c| PrecomputedMaps::new(a.dataset.join("labels"), c.networks().config().num_labels));

    create_dir(&a.output)?;
    let mut curves: Vec<RdCurve> = Vec::new();
    let mut last_error = None;
    for (name, qualities) in &specs {
        let baseline;
        let dsslic_pipeline;
        let pipeline: &dyn CodecPipeline = if name == "dsslic" {
            let codec = dsslic_codec.as_ref().expect("loaded above");
            dsslic_pipeline = DsslicPipeline {
                codec,
                segmenter: maps.as_ref().expect("loaded above"),
                residual: codec.backends().preferred_lossy(),
            };
            &dsslic_pipeline
        } else {
            let kind: BaselineKind = name.parse()?;
            baseline = if kind == BaselineKind::Jpeg {
                BaselineCodec::jpeg()
            } else {
                let (enc, dec) = bins.get(name).cloned().unwrap_or_else(|| default_programs(kind));
                BaselineCodec::external(kind, enc, dec)?
            };
            &baseline
        };
        let sweep = sweep_rd(&dataset_name, &images, pipeline, qualities, cli.jobs);
        for f in &sweep.failures {
            eprintln!("warning: {name} failed on {} at quality {}: {}", f.image, f.quality, f.message);
        }
        if sweep.curve.points.is_empty() {
            eprintln!("warning: {name} produced no points");
            last_error = sweep.failures.last().map(|f| f.message.clone());
            continue;
        }
        for p in &sweep.curve.points {
            println!(
                "{:<16} q={:<4} bpp={:.4} psnr={:.2} ms-ssim={:.4}",
                p.codec, p.quality, p.bpp, p.psnr, p.msssim
            );
        }
        write_rd_csv(&a.output.join(format!("rd_{name}.csv")), std::slice::from_ref(&sweep.curve))?;
        curves.push(sweep.curve);
    }
    if curves.is_empty() {
        let msg = last_error.unwrap_or_else(|| "no codec produced a point".into());
        return Err(Error::Backend {
            backend: "eval".into(),
            message: msg,
        }
        .into());
    }
    write_rd_csv(&a.output.join("rd.csv"), &curves)?;
    for (metric, file, label) in [
        (Metric::Psnr, "rd_psnr.svg", "PSNR"),
        (Metric::MsSsim, "rd_msssim.svg", "MS-SSIM"),
    ] {
        let svg = plot_svg(&curves, metric, &format!("{dataset_name}: {label} vs bpp"))?;
        write_file(&a.output.join(file), svg.as_bytes())?;
    }
    println!("results in {}", a.output.display());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, registry: BackendRegistry) -> Result<()> {
    require_dir(&a.dataset, "dataset")?;
    let mut paths: BTreeMap<Variant, PathBuf> = BTreeMap::new();
    for w in &a.weights {
        let (v, p) = w
            .split_once('=')
            .ok_or_else(|| usage(format!("--weights {w:?} is not VARIANT=PATH")))?;
        let v: Variant = v.parse().map_err(|e: Error| usage(e.to_string()))?;
        require_file(Path::new(p), "weights")?;
        paths.insert(v, p.into());
    }
    if let Some(p) = paths.get(&Variant::WithSeg).cloned() {
        paths.entry(Variant::UpComp).or_insert(p);
    }

    let mut codecs = BTreeMap::new();
    for (&v, p) in &paths {
        let m = ModelArgs {
            weights: p.clone(),
            variant: Some(v),
            alpha: None,
        };
        codecs.insert(v, load_codec(&m, registry.clone())?);
    }
    let num_labels = {
        let mut seg_labels = codecs
            .values()
            .filter(|c| c.variant().uses_segmentation())
            .map(|c| c.networks().config().num_labels);
        let first = seg_labels.next();
        if let Some(n) = first {
            if let Some(other) = seg_labels.find(|&m| m != n) {
                return Err(Error::WeightsMismatch(format!(
                    "weights disagree on the label count ({n} vs {other})"
                ))
                .into());
            }
        }
        first
    };

    let labels_dir = a.dataset.join("labels");
    let mut images = Vec::new();
    for (id, image) in load_images(&a.dataset.join("images"))? {
        let segmentation = match num_labels {
            Some(n) => Some(PrecomputedMaps::new(&labels_dir, n).segment(&id, &dsslic::ImagePlane::from_rgb8(&image))?),
            None => None,
        };
        images.push(EvalImage {
            id,
            image,
            segmentation,
        });
    }

    let refs: BTreeMap<Variant, &Codec> = codecs.iter().map(|(&v, c)| (v, c)).collect();
    let table = ablation_table(&images, &refs)?;
    let csv = table.to_csv();
    create_dir(&a.output)?;
    write_file(&a.output.join("ablation.csv"), csv.as_bytes())?;
    print!("{csv}");
    if let (Some(n), Some(s)) = (table.get(Variant::NoSeg), table.get(Variant::Synth)) {
        if n.psnr > s.psnr {
            println!(
                "note: noSeg is {:.2} dB above synth; synth trades PSNR for perceptual terms",
                n.psnr - s.psnr
            );
        }
    }
    Ok(())
}
