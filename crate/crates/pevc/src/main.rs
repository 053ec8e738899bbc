use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pevc::checkpoint::Checkpoint;
use pevc::outputs::{self, RunManifest, Versions};
use pevc::video_io::{self, VideoFormat, VideoSequence};
use pevc::{report, synthesize, Style, SynthSpec};
use pevc_core::adapt::{adapt, AdaptConfig};
use pevc_core::adapter::Variant;
use pevc_core::codec::config::LADDER_LEN;
use pevc_core::codec::sequence::to_pixels;
use pevc_core::codec::train::{pretrain, PretrainConfig};
use pevc_core::codec::{decode_sequence, encode_sequence, extract_payload, CodecConfig, EncodeOptions, Scope};
use pevc_core::metrics::{bd_rate, QualityAxis, RdCurve};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Parser, Debug)]
#[command(
    name = "pevc",
    version,
    about = "Desk-scale neural video codec with instance adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic clip.
    Synth(SynthArgs),
    /// Train a codec on a directory of clips.
    Pretrain(PretrainArgs),
    /// Fine-tune on one video and write the adapted stream.
    Adapt(AdaptArgs),
    /// Compress a video into a container.
    Encode(EncodeArgs),
    /// Reconstruct frames from a container.
    Decode(DecodeArgs),
    /// Score a decoded sequence; writes an RD point and a per-frame trace.
    Eval(EvalArgs),
    /// Signed BD-rate of `test` against `anchor`, in percent.
    Bdrate(BdrateArgs),
    /// Re-run the job recorded in a manifest.
    Replay { manifest: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Raw,
    Png,
}

impl From<Format> for VideoFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Raw => VideoFormat::Raw,
            Format::Png => VideoFormat::PngDir,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Repeat,
    Extended,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Decoder,
    Encdec,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Psnr,
    Msssim,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long = "spec", value_parser = parse_style)]
    style: Style,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    /// WxH
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pixels per frame of the dominant motion.
    #[arg(long, default_value_t = 1.0)]
    magnitude: f64,
    #[arg(long, value_enum, default_value = "raw")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// A clip, or a directory whose subdirectories are clips.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lambda_index: Option<u8>,
    /// Train every ladder rung; outputs are `<out stem>-l<i>.pevcmodl`.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    intra_steps: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    scope: Option<ScopeArg>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated, first decoder layer first.
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    gop_train: Option<usize>,
    #[arg(long)]
    gop_test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// A stream produced by `adapt`; its weight update is reused.
    #[arg(long)]
    adapted: Option<PathBuf>,
    #[arg(long)]
    video: PathBuf,
    #[arg(long, default_value_t = 12)]
    gop: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "png")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    orig: PathBuf,
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Per-frame trace; defaults to `<csv stem>.frames.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    /// Add the point to an existing RD file instead of replacing it.
    #[arg(long)]
    append: bool,
}

#[derive(Args, Debug)]
struct BdrateArgs {
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value = "psnr")]
    metric: Metric,
}

fn parse_style(s: &str) -> Result<Style, String> {
    s.parse()
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

/// A fully resolved command: what the manifest records and replays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
enum Job {
    Synth {
        spec: SynthSpec,
        format: Format,
        out: PathBuf,
    },
    Pretrain {
        data: PathBuf,
        all: bool,
        codec: CodecConfig,
        train: PretrainConfig,
        out: PathBuf,
    },
    Adapt {
        model: PathBuf,
        video: PathBuf,
        adapt: AdaptConfig,
        out: PathBuf,
        report: PathBuf,
    },
    Encode {
        model: PathBuf,
        adapted: Option<PathBuf>,
        video: PathBuf,
        gop: usize,
        out: PathBuf,
    },
    Decode {
        model: PathBuf,
        input: PathBuf,
        format: Format,
        out: PathBuf,
    },
    Eval {
        orig: PathBuf,
        recon: PathBuf,
        stream: PathBuf,
        csv: PathBuf,
        trace: PathBuf,
        label: String,
        append: bool,
    },
}

impl Job {
    fn name(&self) -> &'static str {
        match self {
            Job::Synth { .. } => "synth",
            Job::Pretrain { .. } => "pretrain",
            Job::Adapt { .. } => "adapt",
            Job::Encode { .. } => "encode",
            Job::Decode { .. } => "decode",
            Job::Eval { .. } => "eval",
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Job::Synth { spec, .. } => spec.seed,
            Job::Pretrain { train, .. } => train.seed,
            Job::Adapt { adapt, .. } => adapt.seed,
            _ => 0,
        }
    }

    fn primary_output(&self) -> &Path {
        match self {
            Job::Synth { out, .. }
            | Job::Pretrain { out, .. }
            | Job::Adapt { out, .. }
            | Job::Encode { out, .. }
            | Job::Decode { out, .. } => out,
            Job::Eval { csv, .. } => csv,
        }
    }
}

/// JSON config file: optional `codec`, `pretrain` and `adapt` objects
/// holding any subset of the respective fields.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    codec: Option<Value>,
    pretrain: Option<Value>,
    adapt: Option<Value>,
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Overlay the fields present in `patch` on `base`.
fn overlay<T: Serialize + DeserializeOwned>(base: T, patch: Option<&Value>, what: &str) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(base);
    };
    let mut value = serde_json::to_value(base)?;
    let (Value::Object(dst), Value::Object(src)) = (&mut value, patch) else {
        bail!("config section `{what}` must be an object");
    };
    for (k, v) in src {
        ensure!(dst.contains_key(k), "unknown field `{k}` in config section `{what}`");
        dst.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).with_context(|| format!("config section `{what}`"))
}

fn resolve(command: Command) -> Result<Option<Job>> {
    Ok(Some(match command {
        Command::Synth(a) => Job::Synth {
            spec: SynthSpec {
                style: a.style,
                frames: a.frames,
                width: a.size.0,
                height: a.size.1,
                magnitude: a.magnitude,
                seed: a.seed,
            },
            format: a.format,
            out: a.out,
        },
        Command::Pretrain(a) => {
            let file = read_config(a.config.as_deref())?;
            let codec = overlay(CodecConfig::default(), file.codec.as_ref(), "codec")?;
            let mut train = overlay(PretrainConfig::default(), file.pretrain.as_ref(), "pretrain")?;
            macro_rules! set {
                ($($f:ident),*) => { $(if let Some(v) = a.$f { train.$f = v; })* };
            }
            set!(lambda_index, intra_steps, steps, batch, crop, lr, seed);
            Job::Pretrain {
                data: a.data,
                all: a.all,
                codec,
                train,
                out: a.out,
            }
        }
        Command::Adapt(a) => {
            let file = read_config(a.config.as_deref())?;
            let mut cfg = overlay(AdaptConfig::default(), file.adapt.as_ref(), "adapt")?;
            macro_rules! set {
                ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
            }
            set!(epochs, beta, ranks, batch, gop_train, gop_test, seed);
            if let Some(lr) = a.lr {
                cfg.lr = Some(lr);
            }
            if let Some(v) = a.variant {
                cfg.variant = match v {
                    VariantArg::Repeat => Variant::Repeat,
                    VariantArg::Extended => Variant::Extended,
                };
            }
            if let Some(s) = a.scope {
                cfg.scope = match s {
                    ScopeArg::Decoder => Scope::DecoderOnly,
                    ScopeArg::Encdec => Scope::EncoderAndDecoder,
                    ScopeArg::Full => Scope::FullFineTune,
                };
            }
            // The rung is fixed by the checkpoint.
            cfg.lambda_index = Checkpoint::load(&a.model)?.lambda_index;
            Job::Adapt {
                model: a.model,
                video: a.video,
                adapt: cfg,
                out: a.out,
                report: a.report,
            }
        }
        Command::Encode(a) => Job::Encode {
            model: a.model,
            adapted: a.adapted,
            video: a.video,
            gop: a.gop,
            out: a.out,
        },
        Command::Decode(a) => Job::Decode {
            model: a.model,
            input: a.input,
            format: a.format,
            out: a.out,
        },
        Command::Eval(a) => {
            let trace = a.trace.unwrap_or_else(|| {
                let stem = a
                    .csv
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                a.csv.with_file_name(format!("{stem}.frames.csv"))
            });
            let label = a.label.unwrap_or_else(|| {
                a.stream
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            Job::Eval {
                orig: a.orig,
                recon: a.recon,
                stream: a.stream,
                csv: a.csv,
                trace,
                label,
                append: a.append,
            }
        }
        Command::Bdrate(a) => {
            let axis = match a.metric {
                Metric::Psnr => QualityAxis::Psnr,
                Metric::Msssim => QualityAxis::MsSsim,
            };
            let anchor = RdCurve::new("anchor", outputs::read_rd_csv(&a.anchor)?);
            let test = RdCurve::new("test", outputs::read_rd_csv(&a.test)?);
            let pct = bd_rate(&anchor, &test, axis)?;
            // Adding zero folds -0.0 into 0.0.
            println!("{:.2}", pct + 0.0);
            eprintln!(
                "bd-rate {} vs {}: {:+.2}% ({} / {} points)",
                a.test.display(),
                a.anchor.display(),
                pct,
                test.points.len(),
                anchor.points.len()
            );
            return Ok(None);
        }
        Command::Replay { manifest } => {
            let text = std::fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let m: RunManifest =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest.display()))?;
            let job: Job = serde_json::from_value(m.config).context("manifest job")?;
            job
        }
    }))
}

fn load_video(path: &Path) -> Result<VideoSequence> {
    let seq = video_io::load_sequence(path, None).with_context(|| format!("loading {}", path.display()))?;
    Ok(seq.padded_for_codec())
}

fn load_clips(data: &Path) -> Result<Vec<Vec<pevc_core::Tensor<f32>>>> {
    if let Ok(seq) = video_io::load_sequence(data, None) {
        return Ok(vec![seq.padded_for_codec().frames]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)
        .with_context(|| format!("reading {}", data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let clips = dirs
        .iter()
        .map(|d| load_video(d).map(|s| s.frames))
        .collect::<Result<Vec<_>>>()?;
    ensure!(!clips.is_empty(), "no clips found under {}", data.display());
    Ok(clips)
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    pevc::fsutil::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn rung_path(out: &Path, index: u8) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    out.with_file_name(format!("{stem}-l{index}.pevcmodl"))
}

fn run(job: &Job) -> Result<Vec<PathBuf>> {
    match job {
        Job::Synth { spec, format, out } => {
            let seq = synthesize(spec);
            match format {
                Format::Raw => video_io::write_raw(out, &seq)?,
                Format::Png => video_io::write_png_dir(out, &seq)?,
            }
            eprintln!(
                "synth {:?}: {} frames {}x{} seed {} -> {}",
                spec.style,
                spec.frames,
                spec.width,
                spec.height,
                spec.seed,
                out.display()
            );
            Ok(vec![out.clone()])
        }
        Job::Pretrain {
            data,
            all,
            codec,
            train,
            out,
        } => {
            let clips = load_clips(data)?;
            let rungs: Vec<u8> = if *all {
                (0..LADDER_LEN as u8).collect()
            } else {
                vec![train.lambda_index]
            };
            let mut written = Vec::new();
            for index in rungs {
                let cfg = PretrainConfig {
                    lambda_index: index,
                    ..*train
                };
                let total = cfg.intra_steps + cfg.steps;
                let model = pretrain(&clips, *codec, &cfg, |s| {
                    if (s.step + 1) % 100 == 0 || s.step + 1 == total {
                        eprintln!(
                            "pretrain l{index} step {}/{total} lr {:.1e} loss {:.4} mse {:.2} bpp {:.4}",
                            s.step + 1,
                            s.lr,
                            s.loss,
                            s.mse,
                            s.bpp
                        );
                    }
                })?;
                let path = if *all { rung_path(out, index) } else { out.clone() };
                Checkpoint {
                    lambda_index: index,
                    model,
                }
                .save(&path)?;
                eprintln!("pretrain l{index} -> {}", path.display());
                written.push(path);
            }
            Ok(written)
        }
        Job::Adapt {
            model,
            video,
            adapt: cfg,
            out,
            report,
        } => {
            let ck = load_model(model)?;
            ensure!(
                ck.lambda_index == cfg.lambda_index,
                "model was trained for lambda index {}, config asks for {}",
                ck.lambda_index,
                cfg.lambda_index
            );
            let seq = load_video(video)?;
            let (payload, rep) = adapt(&ck.model, &seq.frames, cfg, |e| {
                eprintln!(
                    "adapt epoch {} lr {:.1e} loss {:.4} mse {:.2} latent bpp {:.4} weight bits {:.0}",
                    e.epoch, e.lr, e.loss, e.distortion, e.latent_bpp, e.weight_bits
                );
            })?;
            let opts = EncodeOptions {
                gop: cfg.gop_test,
                lambda_index: cfg.lambda_index,
                display: Some(seq.display),
            };
            let stream = encode_sequence(&ck.model, &seq.frames, &opts, Some(&payload))?;
            write_bytes(out, &stream.bytes)?;
            let mut lines: Vec<Value> = rep.epochs.iter().map(|e| tagged("epoch", e)).collect::<Result<_>>()?;
            let mut summary = rep.clone();
            summary.epochs.clear();
            lines.push(tagged("summary", &summary)?);
            outputs::write_jsonl(report, &lines)?;
            eprintln!(
                "adapt {}/{}: {} trainable, payload {} B; rd loss {:.4} -> {:.4}, psnr {:.2} -> {:.2} dB, bpp {:.4} -> {:.4}",
                rep.variant.map_or_else(|| "full".to_string(), |v| format!("{v:?}").to_lowercase()),
                rep.scope.name(),
                rep.trainable_params,
                rep.payload_bytes,
                rep.pre.rd_loss,
                rep.post.rd_loss,
                rep.pre.psnr,
                rep.post.psnr,
                rep.pre.total_bpp,
                rep.post.total_bpp
            );
            Ok(vec![out.clone(), report.clone()])
        }
        Job::Encode {
            model,
            adapted,
            video,
            gop,
            out,
        } => {
            let ck = load_model(model)?;
            let seq = load_video(video)?;
            ensure!(*gop >= 1 && *gop <= u8::MAX as usize, "gop must be in 1..=255");
            let payload = match adapted {
                Some(p) => {
                    let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    Some(
                        extract_payload(&bytes)?
                            .with_context(|| format!("{} carries no weight update", p.display()))?,
                    )
                }
                None => None,
            };
            let opts = EncodeOptions {
                gop: *gop,
                lambda_index: ck.lambda_index,
                display: Some(seq.display),
            };
            let stream = encode_sequence(&ck.model, &seq.frames, &opts, payload.as_ref())?;
            write_bytes(out, &stream.bytes)?;
            let (w, h) = seq.display;
            eprintln!(
                "encode {} frames {}x{} gop {}: {} B ({} B weights), {:.4} bpp -> {}",
                seq.len(),
                w,
                h,
                gop,
                stream.bytes.len(),
                stream.weight_bytes,
                8.0 * stream.bytes.len() as f64 / (seq.len() * w * h) as f64,
                out.display()
            );
            Ok(vec![out.clone()])
        }
        Job::Decode {
            model,
            input,
            format,
            out,
        } => {
            let ck = load_model(model)?;
            let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
            let dec = decode_sequence(&ck.model, &bytes)?;
            let (dw, dh) = (dec.header.display_width as usize, dec.header.display_height as usize);
            let frames = dec
                .recon
                .iter()
                .map(|r| video_io::crop_frame(&to_pixels(r), dw, dh))
                .collect();
            let seq = VideoSequence::from_frames(frames, 30.0, input.display().to_string())?;
            match format {
                Format::Raw => video_io::write_raw(out, &seq)?,
                Format::Png => video_io::write_png_dir(out, &seq)?,
            }
            eprintln!("decode {} frames {}x{} -> {}", seq.len(), dw, dh, out.display());
            Ok(vec![out.clone()])
        }
        Job::Eval {
            orig,
            recon,
            stream,
            csv,
            trace,
            label,
            append,
        } => {
            let o = video_io::load_sequence(orig, None).with_context(|| format!("loading {}", orig.display()))?;
            let r = video_io::load_sequence(recon, None).with_context(|| format!("loading {}", recon.display()))?;
            let bytes = std::fs::read(stream).with_context(|| format!("reading {}", stream.display()))?;
            let stats = report::stream_stats(&bytes)?;
            let (point, rows) = report::score(label, &o.frames, &r.frames, &stats)?;
            let mut points = if *append && csv.exists() {
                outputs::read_rd_csv(csv)?
            } else {
                Vec::new()
            };
            eprintln!(
                "eval {label}: {:.4} bpp, {:.2} dB PSNR, {:.4} MS-SSIM over {} frames",
                point.bpp,
                point.psnr,
                point.msssim,
                rows.len()
            );
            points.push(point);
            outputs::write_rd_csv(csv, &points)?;
            outputs::write_trace_csv(trace, &rows)?;
            Ok(vec![csv.clone(), trace.clone()])
        }
    }
}

fn tagged<T: Serialize>(kind: &str, value: &T) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    if let Value::Object(map) = &mut v {
        map.insert("kind".into(), Value::String(kind.into()));
    }
    Ok(v)
}

fn main_inner() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let Some(job) = resolve(cli.command)? else {
        return Ok(());
    };
    let outputs = run(&job)?;
    let manifest = RunManifest {
        command: job.name().into(),
        args,
        seed: job.seed(),
        config: serde_json::to_value(&job)?,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        versions: Versions::default(),
    };
    outputs::write_json(&RunManifest::manifest_path(job.primary_output()), &manifest)?;
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
