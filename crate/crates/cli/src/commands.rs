use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use splatcodec::codec::{self, StorageMode};
use splatcodec::init::InitStrategy;
use splatcodec::io::{load_image, quantize_8bit, save_image, save_sample_scatter, save_weight_map, write_history_csv};
use splatcodec::metrics::{evaluate, QualityReport};
use splatcodec::model::BYTES_PER_PRIMITIVE;
use splatcodec::pipeline::{decode_render, encode_image, AblationVariant};
use splatcodec::{EncoderConfig, Error, RenderOptions};

use crate::args::{AblateArgs, DecodeArgs, EncodeArgs, EncoderArgs, EvalArgs, InitChoice, ModeChoice};
use crate::manifest::{BudgetRecord, ConfigRecord, Quality, RunManifest, Timings};

/// Marker printed in the MS-SSIM column when the image is too small for it.
pub const MS_SSIM_FALLBACK: &str = "ssim-fallback";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn build_config(a: &EncoderArgs) -> Result<EncoderConfig, Error> {
    let d = EncoderConfig::default();
    let cfg = EncoderConfig {
        lambda_m: a.lambda_m.unwrap_or(d.lambda_m),
        lambda_g: a.lambda_g.unwrap_or(d.lambda_g),
        lambda_l: a.lambda_l.unwrap_or(d.lambda_l),
        k_neighbors: a.k.unwrap_or(d.k_neighbors),
        tile_size: a.tile_size.unwrap_or(d.tile_size),
        iterations: a.iters,
        seed: a.seed,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub fn encode(args: &EncodeArgs) -> Result<(), Error> {
    let config = build_config(&args.encoder)?;
    let image = load_image(&args.input)?;
    let (h, w) = image.dims();
    let output = args.output.clone().unwrap_or_else(|| with_extension(&args.input, "ssplat"));
    let manifest_path = args.manifest.clone().unwrap_or_else(|| with_extension(&output, "json"));
    let strategy = match args.init {
        InitChoice::Smart => InitStrategy::FULL,
        InitChoice::Random => InitStrategy::RANDOM,
    };
    let mode = match args.mode {
        ModeChoice::Float => StorageMode::Float,
        ModeChoice::Quant => StorageMode::Quantized,
    };

    let verbose = args.verbose;
    let outcome = encode_image(&image, args.encoder.cr, &config, strategy, |p| {
        if verbose {
            if let Some(psnr) = p.psnr {
                eprintln!("step {:>6}  loss {:.6}  psnr {psnr:.2} dB", p.step - 1, p.loss);
            }
        }
    })?;

    if let Some(path) = &args.dump_weights {
        if outcome.init.weight_maps.is_empty() {
            eprintln!("note: random initialization computes no weight map; {} not written", path.display());
        } else {
            save_weight_map(&outcome.init.plan, &outcome.init.weight_maps, h, w, path)?;
        }
    }
    if let Some(path) = &args.dump_samples {
        save_sample_scatter(&image, &outcome.init.samples, path)?;
    }
    if let Some(path) = &args.history {
        let file = File::create(path).map_err(io_err(path))?;
        write_history_csv(&outcome.state, BufWriter::new(file)).map_err(io_err(path))?;
    }

    let t = Instant::now();
    let bytes = codec::encode_file(&output, &outcome.set, h, w, mode)?;
    let encode_s = t.elapsed().as_secs_f64();

    let decoded = codec::decode_file(&output)?;
    let recon = decode_render(&decoded.set, h, w, 1.0, RenderOptions::default())?;
    let quality = evaluate(&image, &quantize_8bit(&recon))?;

    let manifest = RunManifest {
        input: args.input.clone(),
        output: output.clone(),
        height: h,
        width: w,
        config: ConfigRecord::new(
            &config,
            match args.init {
                InitChoice::Smart => "smart",
                InitChoice::Random => "random",
            },
            match args.mode {
                ModeChoice::Float => "float",
                ModeChoice::Quant => "quant",
            },
        ),
        budget: BudgetRecord::from(&outcome.budget),
        nominal_ratio: (3 * h * w) as f64 / (BYTES_PER_PRIMITIVE * outcome.budget.n_g as f64),
        achieved_ratio: codec::achieved_ratio(h, w, bytes),
        bytes,
        final_loss: outcome.state.final_loss(),
        timings: Timings {
            init_s: outcome.timings.initialize.as_secs_f64(),
            train_s: outcome.timings.train.as_secs_f64(),
            encode_s,
        },
        quality: Quality::from(quality),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;

    println!(
        "{}: {} primitives, {bytes} bytes (ratio {:.1}, nominal {:.1}), PSNR {:.2} dB",
        output.display(),
        outcome.budget.n_g,
        manifest.achieved_ratio,
        manifest.nominal_ratio,
        quality.psnr
    );
    Ok(())
}

pub fn decode(args: &DecodeArgs) -> Result<(), Error> {
    let t = Instant::now();
    let decoded = codec::decode_file(&args.input)?;
    let image = decode_render(&decoded.set, decoded.height, decoded.width, args.scale, RenderOptions::default())?;
    let secs = t.elapsed().as_secs_f64();
    let output = args.output.clone().unwrap_or_else(|| with_extension(&args.input, "png"));
    save_image(&image, &output)?;
    println!(
        "{}: {}x{} from {} primitives in {:.1} ms ({:.1} fps)",
        output.display(),
        image.width(),
        image.height(),
        decoded.set.len(),
        secs * 1e3,
        1.0 / secs.max(1e-9)
    );
    Ok(())
}

fn ms_ssim_cell(q: &QualityReport) -> String {
    q.ms_ssim.map_or_else(|| MS_SSIM_FALLBACK.to_string(), |m| format!("{m:.6}"))
}

pub fn eval(args: &EvalArgs) -> Result<(), Error> {
    let a = load_image(&args.original)?;
    let b = load_image(&args.reconstruction)?;
    let q = evaluate(&a, &b)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let res = if args.csv {
        writeln!(out, "psnr,ssim,ms_ssim").and_then(|_| writeln!(out, "{:.4},{:.6},{}", q.psnr, q.ssim, ms_ssim_cell(&q)))
    } else {
        let ms = match q.ms_ssim {
            Some(m) => format!("{m:.6}"),
            None => format!("{MS_SSIM_FALLBACK} (image below the 5-scale minimum; see SSIM)"),
        };
        writeln!(out, "PSNR     {:.4} dB\nSSIM     {:.6}\nMS-SSIM  {ms}", q.psnr, q.ssim)
    };
    res.map_err(io_err(Path::new("<stdout>")))
}

pub fn ablate(args: &AblateArgs) -> Result<(), Error> {
    let config = build_config(&args.encoder)?;
    let mut variants = Vec::new();
    for name in &args.variants {
        let v = AblationVariant::parse(name.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {name:?} (expected random, means, scales or full)")))?;
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    if variants.is_empty() {
        return Err(Error::InvalidArgument("no variants selected".into()));
    }
    let image = load_image(&args.input)?;
    let (h, w) = image.dims();
    let mut rows = Vec::new();
    for v in variants {
        let t = Instant::now();
        let outcome = encode_image(&image, args.encoder.cr, &config, v.strategy(), |_| {})?;
        let recon = decode_render(&outcome.set, h, w, 1.0, RenderOptions::default())?;
        let q = evaluate(&image, &recon)?;
        eprintln!("{}: {:.1}s", v.name(), t.elapsed().as_secs_f64());
        rows.push((v, q));
    }
    if args.csv {
        println!("variant,psnr,ssim,ms_ssim");
        for (v, q) in &rows {
            println!("{},{:.4},{:.6},{}", v.name(), q.psnr, q.ssim, ms_ssim_cell(q));
        }
    } else {
        println!("{:<8} {:>10} {:>9} {:>14}", "variant", "PSNR (dB)", "SSIM", "MS-SSIM");
        for (v, q) in &rows {
            println!("{:<8} {:>10.4} {:>9.6} {:>14}", v.name(), q.psnr, q.ssim, ms_ssim_cell(q));
        }
    }
    Ok(())
}
