use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fusenet::audio::{spectrogram_images, StftConfig};
use fusenet::autograd::{checkpoint_precision, Checkpoint, Scalar};
use fusenet::dataset::{
    container_precision, decode_container, gen_synthetic, pack_container, pair_modalities, save_container,
    split_halves, Dataset, Split, SyntheticSpec,
};
use fusenet::train::{
    compare_strategies, config_hash, evaluate, metrics_csv, train, two_stage_finetune, CompareConfig, Precision,
    StageSchedule, TrainConfig,
};
use fusenet::viz::{filter_grid, RgbImage};
use fusenet::zoo::{Modality, NetKind, Network, StreamConfig};

use crate::args::{
    Command, CompareArgs, CurveColumn, CurvesArgs, DatasetBuildArgs, DatasetSynthArgs, EvalArgs, Finetune2Args,
    SpectrogramArgs, SplitChoice, TrainCmdArgs, VizArgs,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Spectrogram(a) => spectrogram(a),
        Command::DatasetBuild(a) => dataset_build(a),
        Command::DatasetSynth(a) => dataset_synth(a),
        Command::Train(a) => with_data(&a.data.clone(), |d| train_cmd(&a, d), |d| train_cmd(&a, d)),
        Command::Eval(a) => with_data(&a.data.clone(), |d| eval_cmd(&a, d), |d| eval_cmd(&a, d)),
        Command::Finetune2(a) => with_data(&a.data.clone(), |d| finetune_cmd(&a, d), |d| finetune_cmd(&a, d)),
        Command::Compare(a) => with_data(&a.data.clone(), |d| compare_cmd(&a, d), |d| compare_cmd(&a, d)),
        Command::VizFilters(a) => viz_filters(a),
        Command::Curves(a) => curves(a),
    }
}

/// Prints the resolved settings of a run, one `key = value` per line.
fn print_resolved(pairs: &[(&str, String)]) {
    println!("# resolved config");
    for (k, v) in pairs {
        println!("{k} = {v}");
    }
}

fn print_kv(text: &str) {
    print!("{text}");
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Loads a container at whatever precision it was written in.
fn with_data(
    path: &Path,
    f32_run: impl FnOnce(Dataset<f32>) -> Result<()>,
    f64_run: impl FnOnce(Dataset<f64>) -> Result<()>,
) -> Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let ctx = || format!("loading {}", path.display());
    match container_precision(&bytes) {
        Some(64) => f64_run(decode_container(&bytes).with_context(ctx)?),
        _ => f32_run(decode_container(&bytes).with_context(ctx)?),
    }
}

fn precision_of<T: Scalar>() -> Precision {
    if T::BITS == 64 {
        Precision::F64
    } else {
        Precision::F32
    }
}

fn stream_config<T: Scalar>(profile: fusenet::zoo::ScaleProfile, data: &Dataset<T>) -> Result<StreamConfig> {
    let cfg = StreamConfig::for_profile(profile, data.class_count());
    if let Some([_, h, _]) = data.sample_shape() {
        if h != cfg.input_hw {
            bail!(
                "dataset images are {h}x{h} but profile {profile} expects {0}x{0}",
                cfg.input_hw
            );
        }
    }
    Ok(cfg)
}

fn spectrogram(a: SpectrogramArgs) -> Result<()> {
    let cfg = StftConfig {
        window_size: a.window,
        overlap: a.overlap,
        segment_seconds: a.segment_sec,
        band_low_hz: a.band_low,
        band_high_hz: a.band_high,
    };
    cfg.validate()?;
    print_resolved(&[
        ("in_dir", a.in_dir.display().to_string()),
        ("out_dir", a.out_dir.display().to_string()),
        ("sample_rate", a.sample_rate.to_string()),
        ("window", a.window.to_string()),
        ("overlap", a.overlap.to_string()),
        ("band_low", a.band_low.to_string()),
        ("band_high", a.band_high.to_string()),
        ("segment_sec", a.segment_sec.to_string()),
        ("seed", "none (deterministic)".into()),
    ]);
    // (class, path) for flat files and one level of class folders
    let mut inputs: Vec<(String, PathBuf)> = Vec::new();
    for entry in sorted_entries(&a.in_dir)? {
        if entry.is_dir() {
            let class = file_name(&entry);
            for f in sorted_entries(&entry)? {
                if has_ext(&f, &["wav"]) {
                    inputs.push((class.clone(), f));
                }
            }
        } else if has_ext(&entry, &["wav"]) {
            inputs.push((String::new(), entry));
        }
    }
    if inputs.is_empty() {
        bail!("no WAV files under {}", a.in_dir.display());
    }
    let mut fragment = String::from("spectrogram_path,class,source\n");
    let (mut ok, mut images) = (0usize, 0usize);
    for (class, path) in &inputs {
        let rendered = fs::read(path)
            .map_err(anyhow::Error::from)
            .and_then(|b| spectrogram_images(&b, &cfg, a.sample_rate).map_err(anyhow::Error::from));
        let rendered = match rendered {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        ok += 1;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (k, r) in rendered.iter().enumerate() {
            let rel = Path::new(class).join(format!("{stem}_{k:03}.png"));
            write(&a.out_dir.join(&rel), RgbImage::from(r).to_png())?;
            writeln!(fragment, "{},{},{}", rel.display(), class, path.display())?;
            images += 1;
        }
    }
    if ok == 0 {
        bail!("all {} input files failed", inputs.len());
    }
    write(&a.out_dir.join("spectrograms.csv"), fragment)?;
    println!("rendered {images} images from {ok} of {} files", inputs.len());
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .is_some_and(|e| exts.contains(&e.as_str()))
}

fn index_images(root: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut out = BTreeMap::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let files: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|f| has_ext(f, &["png", "ppm"]))
            .collect();
        out.insert(file_name(&dir), files);
    }
    Ok(out)
}

fn dataset_build(a: DatasetBuildArgs) -> Result<()> {
    print_resolved(&[
        ("images", a.images.display().to_string()),
        ("spectrograms", a.spectrograms.display().to_string()),
        ("out", a.out.display().to_string()),
        ("hw", a.hw.to_string()),
        ("precision", a.precision.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    let images = index_images(&a.images)?;
    let audio = index_images(&a.spectrograms)?;
    let (paired, report) = pair_modalities(&images, &audio, a.seed)?;
    for c in &report.missing_audio {
        log::warn!("dropping class `{c}`: no spectrograms");
    }
    for c in &report.missing_images {
        log::warn!("dropping class `{c}`: no images");
    }
    let (manifest, warnings) = split_halves(&paired, a.seed);
    for w in &warnings {
        log::warn!("class `{}` has a single sample; kept in the training half", w.class);
    }
    fs::create_dir_all(&a.out)?;
    manifest.save(a.out.join("manifest.csv"))?;
    let container = a.out.join("dataset.fzds");
    let n = match a.precision {
        Precision::F32 => pack_container::<f32>(&manifest, Path::new(""), a.hw, &container)?.len(),
        Precision::F64 => pack_container::<f64>(&manifest, Path::new(""), a.hw, &container)?.len(),
    };
    let dropped: Vec<&str> = report.dropped().collect();
    println!(
        "{n} samples in {} classes; dropped classes: {}",
        manifest.classes.len(),
        if dropped.is_empty() { "none".to_string() } else { dropped.join(", ") }
    );
    Ok(())
}

fn dataset_synth(a: DatasetSynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        image_factors: a.image_factors,
        audio_factors: a.audio_factors,
        samples_per_class: a.samples_per_class,
        noise_sigma: a.noise_sigma,
        hw: a.hw,
        seed: a.seed,
    };
    print_resolved(&[
        ("out", a.out.display().to_string()),
        ("image_factors", a.image_factors.to_string()),
        ("audio_factors", a.audio_factors.to_string()),
        ("samples_per_class", a.samples_per_class.to_string()),
        ("noise_sigma", a.noise_sigma.to_string()),
        ("hw", a.hw.to_string()),
        ("precision", a.precision.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    let n = match a.precision {
        Precision::F32 => {
            let ds = gen_synthetic::<f32>(&spec)?;
            save_container(&a.out, &ds)?;
            ds.len()
        }
        Precision::F64 => {
            let ds = gen_synthetic::<f64>(&spec)?;
            save_container(&a.out, &ds)?;
            ds.len()
        }
    };
    println!("{n} samples in {} classes", spec.class_count());
    Ok(())
}

fn resolved_run(kind: NetKind, stream: &StreamConfig, tc: &TrainConfig) {
    println!("# resolved config");
    println!("net = {kind}");
    print_kv(&stream.to_kv().to_text());
    print_kv(&tc.to_kv().to_text());
}

fn run_config_text(kind: NetKind, stream: &StreamConfig, tc: &TrainConfig) -> String {
    format!("net = {kind}\n{}{}", stream.to_kv().to_text(), tc.to_kv().to_text())
}

fn train_cmd<T: Scalar>(a: &TrainCmdArgs, data: Dataset<T>) -> Result<()> {
    let stream = stream_config(a.train.profile, &data)?;
    let tc = a.train.resolve(a.net, precision_of::<T>())?;
    resolved_run(a.net, &stream, &tc);
    let mut net = Network::<T>::build(a.net, &stream, tc.seed)?;
    let outcome = train(&mut net, &data, &tc)?;
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
    write(&a.out.join("model.fznt"), outcome.checkpoint.to_bytes())?;
    write(&a.out.join("run.kv"), run_config_text(a.net, &stream, &tc))?;
    if let Some(m) = outcome.metrics.last() {
        match m.test_accuracy {
            Some(acc) => println!("final loss {:.6}, test accuracy {acc:.4}", m.loss),
            None => println!("final loss {:.6}, no test samples", m.loss),
        }
    }
    Ok(())
}

fn load_params<T: Scalar>(net: &mut Network<T>, ckpt: Checkpoint<T>) -> Result<()> {
    let want: BTreeSet<&str> = net.params.names().collect();
    let have: BTreeSet<&str> = ckpt.params.names().collect();
    if want != have {
        let missing: Vec<_> = want.difference(&have).collect();
        let extra: Vec<_> = have.difference(&want).collect();
        bail!("checkpoint does not fit {}: missing {missing:?}, unexpected {extra:?}", net.kind);
    }
    let names: Vec<String> = want.iter().map(|s| s.to_string()).collect();
    net.params.copy_from(&ckpt.params, names.iter().map(String::as_str))?;
    Ok(())
}

fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Checkpoint::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn eval_cmd<T: Scalar>(a: &EvalArgs, data: Dataset<T>) -> Result<()> {
    let stream = stream_config(a.profile, &data)?;
    print_resolved(&[
        ("data", a.data.display().to_string()),
        ("checkpoint", a.checkpoint.display().to_string()),
        ("net", a.net.to_string()),
        ("profile", a.profile.to_string()),
        ("split", format!("{:?}", a.split).to_lowercase()),
        ("seed", "none (deterministic)".into()),
    ]);
    let mut net = Network::<T>::build(a.net, &stream, 0)?;
    load_params(&mut net, read_checkpoint(&a.checkpoint)?)?;
    let subset = match a.split {
        SplitChoice::Train => data.split(Split::Train),
        SplitChoice::Test => data.split(Split::Test),
        SplitChoice::All => data,
    };
    let ev = evaluate(&net, &subset)?;
    if let Some(path) = &a.dump {
        write(path, ev.dump_csv())?;
    }
    println!("accuracy {:.4} over {} samples", ev.accuracy, subset.len());
    Ok(())
}

fn finetune_cmd<T: Scalar>(a: &Finetune2Args, data: Dataset<T>) -> Result<()> {
    let NetKind::Fusion(strategy) = a.strategy else {
        bail!("finetune2 needs a fusion strategy, got `{}`", a.strategy);
    };
    let stream = stream_config(a.train.profile, &data)?;
    let p = precision_of::<T>();
    let sched = StageSchedule {
        strategy,
        image: a.train.resolve(NetKind::Unimodal(Modality::Image), p)?,
        audio: a.train.resolve(NetKind::Unimodal(Modality::Audio), p)?,
        stage2: if a.skip_stage2 {
            None
        } else {
            Some(a.train.resolve(a.strategy, p)?)
        },
    };
    println!("# resolved config");
    println!("strategy = {strategy}");
    print_kv(&stream.to_kv().to_text());
    println!("# stage 1");
    print_kv(&sched.image.to_kv().to_text());
    match &sched.stage2 {
        Some(c) => {
            println!("# stage 2");
            print_kv(&c.to_kv().to_text());
        }
        None => println!("# stage 2 skipped"),
    }
    let out = two_stage_finetune(&sched, &stream, &data)?;
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("image_metrics.csv"), metrics_csv(&out.image_metrics))?;
    write(&a.out.join("audio_metrics.csv"), metrics_csv(&out.audio_metrics))?;
    if sched.stage2.is_some() {
        write(&a.out.join("stage2_metrics.csv"), metrics_csv(&out.stage2_metrics))?;
    }
    let stage2 = sched.stage2.clone().unwrap_or_else(|| sched.image.clone());
    let fused = Checkpoint {
        epoch: sched.stage2.as_ref().map_or(0, |c| c.epochs as u32),
        config_hash: config_hash(a.strategy, &stream, &stage2),
        params: out.fused.params.clone(),
    };
    write(&a.out.join("fused.fznt"), fused.to_bytes())?;
    let mut digests = String::from("layer,before,after,trainable\n");
    let trainable: BTreeSet<&str> = out
        .trainable
        .iter()
        .map(|n| n.rsplit_once('.').map_or(n.as_str(), |(l, _)| l))
        .collect();
    for (layer, before) in &out.digests_before {
        let after = &out.digests_after[layer];
        writeln!(digests, "{layer},{before},{after},{}", trainable.contains(layer.as_str()))?;
    }
    write(&a.out.join("layer_digests.csv"), digests)?;
    println!(
        "stage 1: image {:.4}, audio {:.4}; fused {strategy}: {:.4}",
        out.image_accuracy, out.audio_accuracy, out.fused_accuracy
    );
    Ok(())
}

fn compare_cmd<T: Scalar>(a: &CompareArgs, data: Dataset<T>) -> Result<()> {
    let stream = stream_config(a.train.profile, &data)?;
    let p = precision_of::<T>();
    let cfg = CompareConfig {
        unimodal: a.train.resolve(NetKind::Unimodal(Modality::Image), p)?,
        multimodal: a.train.resolve(NetKind::ALL[2], p)?,
        seed: a.train.seed,
    };
    println!("# resolved config");
    print_kv(&stream.to_kv().to_text());
    println!("# unimodal");
    print_kv(&cfg.unimodal.to_kv().to_text());
    println!("# multimodal");
    print_kv(&cfg.multimodal.to_kv().to_text());
    let report = compare_strategies(&data, &stream, &cfg)?;
    fs::create_dir_all(a.out.join("curves"))?;
    write(&a.out.join("compare.csv"), report.to_csv())?;
    write(&a.out.join("compare.txt"), report.to_text())?;
    for r in &report.rows {
        write(&a.out.join("curves").join(format!("{}.csv", r.kind)), metrics_csv(&r.metrics))?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn viz_filters(a: VizArgs) -> Result<()> {
    print_resolved(&[
        ("checkpoint", a.checkpoint.display().to_string()),
        ("layer", a.layer.clone()),
        ("out", a.out.display().to_string()),
        ("seed", "none (deterministic)".into()),
    ]);
    let bytes = fs::read(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let img = match checkpoint_precision(&bytes) {
        Some(64) => grid_for::<f64>(&bytes, &a.layer)?,
        _ => grid_for::<f32>(&bytes, &a.layer)?,
    };
    write(&a.out, img.to_png())?;
    println!("{}x{} grid written to {}", img.width, img.height, a.out.display());
    Ok(())
}

fn grid_for<T: Scalar>(bytes: &[u8], layer: &str) -> Result<RgbImage> {
    let ckpt = Checkpoint::<T>::from_bytes(bytes)?;
    let name = if layer.ends_with(".weight") {
        layer.to_string()
    } else {
        format!("{layer}.weight")
    };
    let t = ckpt.params.tensor(&name).map_err(|_| {
        let convs: Vec<&str> = ckpt
            .params
            .names()
            .filter(|n| n.ends_with(".weight") && ckpt.params.tensor(n).is_ok_and(|t| t.rank() == 4))
            .map(|n| n.trim_end_matches(".weight"))
            .collect();
        anyhow!("unknown layer `{layer}`; convolution layers: {}", convs.join(", "))
    })?;
    if t.rank() != 4 {
        bail!("layer `{layer}` is not convolutional (shape {:?})", t.shape());
    }
    Ok(filter_grid(t)?)
}

fn curves(a: CurvesArgs) -> Result<()> {
    let column = match a.column {
        CurveColumn::Loss => 1,
        CurveColumn::TestAccuracy => 2,
    };
    print_resolved(&[
        ("out", a.out.display().to_string()),
        ("column", if column == 1 { "loss" } else { "test_accuracy" }.into()),
        ("seed", "none (deterministic)".into()),
    ]);
    let mut names = Vec::new();
    let mut series: Vec<BTreeMap<usize, String>> = Vec::new();
    for path in &a.inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        if lines.next() != Some(fusenet::train::METRICS_HEADER) {
            bail!("{} is not a metrics CSV", path.display());
        }
        let mut s = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                bail!("{} line {}: expected 3 fields", path.display(), i + 2);
            }
            let epoch: usize = fields[0]
                .parse()
                .with_context(|| format!("{} line {}: bad epoch", path.display(), i + 2))?;
            s.insert(epoch, fields[column].to_string());
        }
        names.push(path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        series.push(s);
    }
    let epochs: BTreeSet<usize> = series.iter().flat_map(|s| s.keys().copied()).collect();
    let mut out = format!("epoch,{}\n", names.join(","));
    for e in epochs {
        let row: Vec<&str> = series.iter().map(|s| s.get(&e).map_or("", String::as_str)).collect();
        writeln!(out, "{e},{}", row.join(","))?;
    }
    write(&a.out, out)?;
    println!("merged {} curves into {}", names.len(), a.out.display());
    Ok(())
}
