use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fetalnet_core::data::{load_clip, load_manifest, read_frame, read_mask, PixelSpacing};
use fetalnet_core::geometry::{
    find_contours, measure_detailed, postprocess, BiometryResult, BinaryMask, Measurement,
    DEFAULT_THRESHOLD,
};
use fetalnet_core::metrics::MetricReport;
use fetalnet_core::model::{load_checkpoint, save_checkpoint, Pass};
use fetalnet_core::phantom::{generate_suite, load_ground_truth, ClassMix, SuiteOptions, GROUND_TRUTH_FILE};
use fetalnet_core::train::{
    evaluate, load_train_config, prepare_clips, run_ablation, write_ablation_csv, EpochLog, TrainConfig,
};
use fetalnet_core::{ClassLabel, Error, Plane};
use serde::{Deserialize, Serialize};

use crate::overlay::{Canvas, GREEN, RED};
use crate::{AblateArgs, EvalArgs, InferArgs, MeasureArgs, SynthArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_config(path: &Path, epochs: Option<usize>) -> Result<TrainConfig> {
    if !path.is_file() {
        return Err(Error::Config(format!("config file {} not found", path.display())).into());
    }
    let mut cfg = load_train_config(path)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required(p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::Config(format!("`{key}` is required")).into())
}

fn loss_and_report_header() -> Vec<&'static str> {
    let mut h = vec!["epoch", "train_loss", "train_dice_loss", "train_ce"];
    h.extend(MetricReport::CSV_HEADER);
    h
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = read_config(&a.config, a.epochs)?;
    let train_m = load_manifest(&required(&cfg.train_manifest, "train_manifest")?)?;
    let train_clips = prepare_clips(&train_m, &cfg)?;
    let val_clips = match &cfg.val_manifest {
        Some(p) => prepare_clips(&load_manifest(p)?, &cfg)?,
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    // Absolute manifest paths keep the saved config usable from its new directory.
    let mut saved = cfg.clone();
    for p in [&mut saved.train_manifest, &mut saved.val_manifest].into_iter().flatten() {
        *p = std::path::absolute(&*p)?;
    }
    std::fs::write(a.out.join("config.toml"), saved.to_toml_string())?;

    let mut jsonl = BufWriter::new(File::create(a.out.join("metrics.jsonl"))?);
    let mut table = csv::Writer::from_path(a.out.join("metrics.csv"))?;
    table.write_record(loss_and_report_header())?;
    let mut log_error: Option<anyhow::Error> = None;
    let mut record = |log: &EpochLog| -> Result<()> {
        serde_json::to_writer(&mut jsonl, log)?;
        jsonl.write_all(b"\n")?;
        jsonl.flush()?;
        let l = log.train_loss;
        let mut row = vec![log.epoch.to_string(), format!("{:.6}", l.total), format!("{:.6}", l.dice), format!("{:.6}", l.ce)];
        row.extend(log.val.clone().unwrap_or_default().csv_row());
        table.write_record(&row)?;
        table.flush()?;
        Ok(())
    };
    let outcome = fetalnet_core::train::train(&cfg, &train_clips, &val_clips, |log| {
        if !a.quiet {
            let val = log
                .val
                .as_ref()
                .map(|v| format!(" val dice {} acc {}", fmt_opt(v.dice), fmt_opt(v.accuracy)))
                .unwrap_or_default();
            eprintln!("epoch {:>4}  loss {:.4}{val}", log.epoch, log.train_loss.total);
        }
        if log_error.is_none() {
            log_error = record(log).err();
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    let ck = a.out.join("checkpoint.bin");
    save_checkpoint(&ck, &cfg.net, &outcome.params)?;
    println!("{} epochs; checkpoint written to {}", outcome.history.len(), ck.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn print_report(r: &MetricReport) {
    println!("IoU {}  Dice {}  Accuracy {}  Precision {}  Recall {}  F1 {}",
        fmt_opt(r.iou), fmt_opt(r.dice), fmt_opt(r.accuracy), fmt_opt(r.precision), fmt_opt(r.recall), fmt_opt(r.f1));
    for (name, mean, std, n) in [
        ("head (HC)", r.adf_head_mean, r.adf_head_std, r.adf_head_count),
        ("abdomen (AC)", r.adf_abdomen_mean, r.adf_abdomen_std, r.adf_abdomen_count),
        ("femur (FL)", r.adf_femur_mean, r.adf_femur_std, r.adf_femur_count),
    ] {
        match (mean, std) {
            (Some(m), Some(s)) => println!("ADF {name:<13} {m:.2} ± {s:.2} mm  (n={n})"),
            _ => println!("ADF {name:<13} -"),
        }
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (net, params) = load_checkpoint(&a.checkpoint)?;
    let m = load_manifest(&a.manifest)?;
    let clips = fetalnet_core::data::load_samples(&m, net.config().input_size, a.letterbox)?;
    let sidecar = a.ground_truth.clone().or_else(|| {
        let p = m.root.join(GROUND_TRUTH_FILE);
        p.is_file().then_some(p)
    });
    let reference = sidecar.as_deref().map(load_ground_truth).transpose()?;
    let result = evaluate(&net, &params, &clips, reference.as_ref(), true)?;
    print_report(&result.report);

    if let Some(out) = &a.out {
        create_dir(out)?;
        std::fs::write(out.join("report.json"), result.report.to_json())?;
        let mut w = csv::Writer::from_path(out.join("report.csv"))?;
        w.write_record(MetricReport::CSV_HEADER)?;
        w.write_record(result.report.csv_row())?;
        w.flush()?;
        let mut w = csv::Writer::from_path(out.join("frames.csv"))?;
        w.write_record(["frame_id", "true_label", "predicted_label", "iou", "dice", "measured_mm", "reference_mm"])?;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for fe in &result.frames {
            w.write_record([
                fe.frame_id.clone(),
                fe.true_label.to_string(),
                fe.predicted_label.map(|l| l.to_string()).unwrap_or_default(),
                f(fe.iou),
                f(fe.dice),
                f(fe.measured.as_ref().and_then(BiometryResult::primary_mm)),
                f(fe.reference.as_ref().and_then(BiometryResult::primary_mm)),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct ClipMeta {
    pixel_spacing_mm: PixelSpacing,
}

/// Serialized inference output; `schema/inference.schema.json` describes it.
#[derive(Serialize)]
struct InferOutput {
    checkpoint: String,
    clip_dir: String,
    pixel_spacing_mm: f64,
    frames: Vec<InferFrame>,
}

#[derive(Serialize)]
struct InferFrame {
    index: usize,
    file: String,
    label: ClassLabel,
    /// Softmax over head, abdomen, femur, background.
    class_probabilities: Option<[f64; 4]>,
    measurement: Option<BiometryResult>,
    overlay: String,
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn softmax(l: [f64; 4]) -> [f64; 4] {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = l.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn draw_measurement(canvas: &mut Canvas, m: &Measurement, color: [u8; 3]) {
    if let Some(e) = &m.ellipse {
        canvas.ellipse(e, color);
    } else if let Some(r) = &m.rect {
        canvas.rect(r, color);
    } else if let Some(c) = &m.contour {
        canvas.polyline(c, true, color);
    }
}

pub fn infer(a: InferArgs) -> Result<()> {
    let (net, params) = load_checkpoint(&a.checkpoint)?;
    let has_cls = net.config().classification_branch;
    if !has_cls && a.label.is_none() {
        return Err(Error::Config("checkpoint has no classification branch; pass --label".into()).into());
    }
    let spacing = match a.spacing {
        Some(s) => s,
        None => {
            let meta = a.clip_dir.join("clip.json");
            let text = std::fs::read_to_string(&meta)
                .map_err(|_| Error::InvalidInput(format!("no --spacing given and {} is missing", meta.display())))?;
            let meta: ClipMeta = serde_json::from_str(&text).with_context(|| format!("parsing {}", meta.display()))?;
            meta.pixel_spacing_mm
                .mm()
                .ok_or_else(|| Error::InvalidInput("anisotropic pixel spacing is not supported".into()))?
        }
    };
    if !(spacing > 0.0) {
        return Err(Error::InvalidInput(format!("pixel spacing must be positive, got {spacing}")).into());
    }
    let files = png_files(&a.clip_dir)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no PNG frames in {}", a.clip_dir.display())).into());
    }
    let frames = files.iter().map(|f| read_frame(f)).collect::<fetalnet_core::Result<Vec<Plane>>>()?;
    let (w, h) = (frames[0].width(), frames[0].height());
    if let Some(f) = frames.iter().find(|f| (f.width(), f.height()) != (w, h)) {
        return Err(Error::InvalidInput(format!("frames differ in size: {w}x{h} and {}x{}", f.width(), f.height())).into());
    }
    let size = net.config().input_size;
    let side = w.max(h);
    let inputs: Vec<Plane> = frames.iter().map(|f| f.letterbox().0.resize_bilinear(size, size)).collect();
    let (ox, oy) = ((side - w) / 2, (side - h) / 2);

    let preds = net.forward_clip(&params, &inputs, &mut Pass::eval())?;
    create_dir(&a.out)?;
    let mut out = Vec::new();
    for (t, (pred, file)) in preds.iter().zip(&files).enumerate() {
        let label = match (pred.predicted_class(), a.label) {
            (Some(i), _) => ClassLabel::from_index(i)?,
            (None, Some(l)) => l,
            (None, None) => unreachable!("checked above"),
        };
        let prob = pred.seg_prob.resize_bilinear(side, side).crop(ox, oy, w, h);
        let mut canvas = Canvas::from_plane(&frames[t]);
        let name = file.file_name().unwrap().to_string_lossy().into_owned();
        if let Some(dir) = &a.masks {
            let p = dir.join(&name);
            if p.is_file() {
                let gt = BinaryMask::from_plane(&read_mask(&p)?, 0.5, spacing)?;
                let m = measure_detailed(label, &gt);
                if m.ellipse.is_some() || m.rect.is_some() {
                    draw_measurement(&mut canvas, &m, RED);
                } else if let Some(c) = find_contours(&gt).first() {
                    canvas.polyline(&c.points, true, RED);
                }
            }
        }
        let measurement = if label.is_foreground() {
            let mask = postprocess(&prob, (w, h), DEFAULT_THRESHOLD, spacing)?;
            let m = measure_detailed(label, &mask);
            draw_measurement(&mut canvas, &m, GREEN);
            Some(m.result.with_frame_id(name.clone()))
        } else {
            None
        };
        let overlay = format!("overlay_{name}");
        canvas.save(&a.out.join(&overlay))?;
        out.push(InferFrame {
            index: t,
            file: name,
            label,
            class_probabilities: pred.class_logits.map(softmax),
            measurement,
            overlay,
        });
    }
    let doc = InferOutput {
        checkpoint: a.checkpoint.display().to_string(),
        clip_dir: a.clip_dir.display().to_string(),
        pixel_spacing_mm: spacing,
        frames: out,
    };
    let path = a.out.join("predictions.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    for f in &doc.frames {
        let value = f.measurement.as_ref().and_then(BiometryResult::primary_mm);
        println!("{:>4} {:<24} {:<10} {}", f.index, f.file, f.label, value.map_or("-".into(), |v| format!("{v:.2} mm")));
    }
    Ok(())
}

/// Print to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

pub fn measure(a: MeasureArgs) -> Result<()> {
    if let Some(path) = &a.mask {
        let label = a.label.ok_or_else(|| Error::Config("--label is required with --mask".into()))?;
        let spacing = a.spacing.ok_or_else(|| Error::Config("--spacing is required with --mask".into()))?;
        let plane = read_frame(path)?;
        let mask = postprocess(&plane, (plane.width(), plane.height()), a.threshold, spacing)?;
        let m = measure_detailed(label, &mask);
        if let Some(o) = &a.overlay {
            let mut canvas = Canvas::from_plane(&plane);
            draw_measurement(&mut canvas, &m, GREEN);
            canvas.save(o)?;
        }
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        emit(&serde_json::to_string_pretty(&m.result.with_frame_id(name))?)?;
        return Ok(());
    }
    let manifest = load_manifest(a.manifest.as_ref().expect("clap enforces one source"))?;
    let mut results = Vec::new();
    for i in 0..manifest.entries.len() {
        let clip = load_clip(&manifest, i)?;
        for t in 0..clip.len() {
            let label = clip.labels[t];
            if !label.is_foreground() {
                continue;
            }
            let p = &clip.masks[t];
            let mask = postprocess(p, (p.width(), p.height()), a.threshold, clip.spacing_mm[t])?;
            results.push(measure_detailed(label, &mask).result.with_frame_id(clip.frame_ids[t].clone()));
        }
    }
    emit(&serde_json::to_string_pretty(&results)?)?;
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = read_config(&a.config, a.epochs)?;
    let train_clips = prepare_clips(&load_manifest(&required(&cfg.train_manifest, "train_manifest")?)?, &cfg)?;
    let val_clips = prepare_clips(&load_manifest(&required(&cfg.val_manifest, "val_manifest")?)?, &cfg)?;
    create_dir(&a.out)?;
    let rows = run_ablation(&cfg, &train_clips, &val_clips, |v| eprintln!("training {v}"))?;
    write_ablation_csv(&a.out.join("ablation.csv"), &rows)?;
    std::fs::write(a.out.join("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
    println!("{:<18} {:>8} {:>8} {:>9}", "variant", "IoU", "Dice", "Accuracy");
    for r in &rows {
        println!("{:<18} {:>8} {:>8} {:>9}", r.variant, fmt_opt(r.report.iou), fmt_opt(r.report.dice), fmt_opt(r.report.accuracy));
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mix = match a.mix.as_deref() {
        Some(&[head, abdomen, femur, background]) => ClassMix { head, abdomen, femur, background },
        Some(v) => {
            return Err(Error::Config(format!("--mix takes four weights, got {}", v.len())).into());
        }
        None => ClassMix::default(),
    };
    let opts = SuiteOptions {
        size: a.size,
        clip_len: a.clip_len,
        noise_sigma: a.noise,
        ..SuiteOptions::default()
    };
    let m = generate_suite(&a.out, a.clips, mix, &opts, a.seed)?;
    let mut per_class: HashMap<ClassLabel, usize> = HashMap::new();
    for e in &m.entries {
        *per_class.entry(e.frames[0].label).or_default() += 1;
    }
    let counts: Vec<String> = ClassLabel::ALL
        .iter()
        .map(|l| format!("{l} {}", per_class.get(l).copied().unwrap_or(0)))
        .collect();
    println!("{} clips ({}) written to {}", m.entries.len(), counts.join(", "), a.out.display());
    Ok(())
}
