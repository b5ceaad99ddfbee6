//! Subcommand pipelines. Each validates its inputs before doing any work.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use denoisenet::data::{load_gray, read_manifest, save_gray, GrayImage, ManifestEntry};
use denoisenet::diagnose::{monotone_fraction, LayerTrace};
use denoisenet::eval::{emit_report, psnr, Analytics, EvalRecord};
use denoisenet::model::DenoiseNet;
use denoisenet::optim::{finetune, train, TrainConfig, TrainObserver, TrainOutcome};
use denoisenet::rng::derive_key;

use crate::config::RunConfig;
use crate::log::RunLog;

/// Stream under the run seed that initializes new models.
const INIT_STREAM: u64 = 0x1A17;

#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Bad configuration or inputs; nothing was computed.
    Validation(String),
    /// The run started and then failed.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

/// Library errors about argument values are validation failures; all others
/// are runtime failures.
fn lib_err(e: denoisenet::Error) -> Failure {
    use denoisenet::Error as E;
    match e {
        E::InvalidArgument(_) | E::ShapeMismatch { .. } => Failure::Validation(e.to_string()),
        e => Failure::Runtime(e.to_string()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn required<'a, T>(value: &'a Option<T>, key: &str, command: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| invalid(format!("{command} needs `{key}`")))
}

fn existing_file<'a>(value: &'a Option<PathBuf>, key: &str, command: &str) -> Result<&'a Path, Failure> {
    let path = required(value, key, command)?;
    if !path.is_file() {
        return Err(invalid(format!("{key} file not found: {}", path.display())));
    }
    Ok(path)
}

fn existing_dir<'a>(path: &'a Path, key: &str) -> Result<&'a Path, Failure> {
    if !path.is_dir() {
        return Err(invalid(format!("{key} directory not found: {}", path.display())));
    }
    Ok(path)
}

fn load_model(path: &Path) -> Result<DenoiseNet, Failure> {
    DenoiseNet::load(path).map_err(|e| invalid(format!("cannot load model: {e}")))
}

fn load_image(path: &Path) -> Result<GrayImage, Failure> {
    load_gray(path).map_err(|e| invalid(format!("cannot load image: {e}")))
}

pub fn dispatch(command: &str, config: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    match command {
        "train" => run_train(config, log, false),
        "finetune" => run_train(config, log, true),
        "denoise" => run_denoise(config, log),
        "eval" => run_eval(config, log),
        "diagnose" => run_diagnose(config, log),
        other => Err(invalid(format!("unknown subcommand {other:?}"))),
    }
}

fn attach(log: &mut RunLog, out_dir: &Path) -> Result<(), Failure> {
    log.attach(out_dir).map_err(|e| io_err(&out_dir.join("run.log"), e))
}

fn out_dir<'a>(config: &'a RunConfig, command: &str, log: &mut RunLog) -> Result<&'a Path, Failure> {
    let dir = required(&config.out_dir, "out_dir", command)?;
    attach(log, dir)?;
    Ok(dir)
}

/// Loss CSV, console progress and checkpoint files for one training run.
struct Progress<'a> {
    log: &'a mut RunLog,
    loss: BufWriter<std::fs::File>,
    loss_path: PathBuf,
    model_dir: PathBuf,
    log_every: usize,
    total: usize,
    io_error: Option<Failure>,
}

impl TrainObserver for Progress<'_> {
    fn on_step(&mut self, step: usize, loss: f64) {
        if let Err(e) = writeln!(self.loss, "{step},{loss}") {
            self.io_error.get_or_insert_with(|| io_err(&self.loss_path, e));
        }
        if self.log_every > 0 && (step.is_multiple_of(self.log_every) || step == self.total) {
            self.log.info(format!("step {step}/{} loss {loss:.6}", self.total));
        }
    }

    fn on_checkpoint(&mut self, step: usize, model: &DenoiseNet) -> denoisenet::Result<()> {
        let path = self.model_dir.join(format!("checkpoint_{step}.dnet"));
        model.save(&path)?;
        self.log.info(format!("checkpoint {}", path.display()));
        Ok(())
    }
}

fn training_images(entries: &[ManifestEntry], class: Option<&str>, patch: usize) -> Result<Vec<GrayImage>, Failure> {
    let selected: Vec<&ManifestEntry> = entries
        .iter()
        .filter(|e| class.is_none_or(|c| e.class.as_deref() == Some(c)))
        .collect();
    if selected.is_empty() {
        return Err(invalid(match class {
            Some(c) => format!("manifest has no images of class {c:?}"),
            None => "manifest lists no images".into(),
        }));
    }
    for e in &selected {
        if !e.path.is_file() {
            return Err(invalid(format!("training image not found: {}", e.path.display())));
        }
    }
    let mut images = Vec::with_capacity(selected.len());
    for e in selected {
        let img = load_image(&e.path)?;
        if img.height() < patch || img.width() < patch {
            return Err(invalid(format!(
                "training image {} is {}x{}, smaller than patch_size {patch}",
                e.path.display(),
                img.height(),
                img.width()
            )));
        }
        images.push(img);
    }
    Ok(images)
}

fn run_train(config: &RunConfig, log: &mut RunLog, is_finetune: bool) -> Result<(), Failure> {
    let command = if is_finetune { "finetune" } else { "train" };
    let seed = *required(&config.seed, "seed", command)?;
    let model_config = config.model_config();
    model_config.validate().map_err(lib_err)?;
    let train_config: TrainConfig = config.train_config(seed);
    train_config.validate().map_err(lib_err)?;
    let manifest = existing_file(&config.train_manifest, "train_manifest", command)?;
    let pretrained = if is_finetune {
        let path = existing_file(&config.model, "model", command)?;
        let model = load_model(path)?;
        if model.config() != model_config {
            return Err(invalid(format!(
                "model {} has depth {} and feature_channels {}, but the config says {} and {}",
                path.display(),
                model.config().depth,
                model.config().feature_channels,
                model_config.depth,
                model_config.feature_channels
            )));
        }
        Some(model)
    } else {
        None
    };
    let entries = read_manifest(manifest).map_err(|e| invalid(format!("cannot read manifest: {e}")))?;
    let class = if is_finetune { config.class.as_deref() } else { None };
    let images = training_images(&entries, class, config.patch_size)?;

    let out = out_dir(config, command, log)?;
    let (model_dir, report_dir) = (out.join("model"), out.join("reports"));
    for dir in [&model_dir, &report_dir] {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let resolved = report_dir.join("config.json");
    let json = serde_json::to_string_pretty(config).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(&resolved, json + "\n").map_err(|e| io_err(&resolved, e))?;
    log.info(format!(
        "{command}: {} images, depth {}, {} features, {} parameters, {} steps, seed {seed}",
        images.len(),
        model_config.depth,
        model_config.feature_channels,
        model_config.param_count(),
        config.steps
    ));

    let loss_path = report_dir.join("loss.csv");
    let file = std::fs::File::create(&loss_path).map_err(|e| io_err(&loss_path, e))?;
    let mut progress = Progress {
        log,
        loss: BufWriter::new(file),
        loss_path: loss_path.clone(),
        model_dir: model_dir.clone(),
        log_every: config.log_every,
        total: config.steps,
        io_error: None,
    };
    writeln!(progress.loss, "step,loss").map_err(|e| io_err(&loss_path, e))?;
    let outcome: TrainOutcome = match pretrained {
        Some(model) => finetune(model, model_config, &images, &train_config, &mut progress),
        None => {
            let model = DenoiseNet::init(model_config, derive_key(seed, INIT_STREAM)).map_err(lib_err)?;
            train(model, &images, &train_config, &mut progress)
        }
    }
    .map_err(|e| Failure::Runtime(e.to_string()))?;
    progress.loss.flush().map_err(|e| io_err(&loss_path, e))?;
    if let Some(e) = progress.io_error.take() {
        return Err(e);
    }
    let model_path = model_dir.join("model.dnet");
    outcome.model.save(&model_path).map_err(lib_err)?;
    log.info(format!("wrote {}", model_path.display()));
    Ok(())
}

fn run_denoise(config: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    let model_path = existing_file(&config.model, "model", "denoise")?;
    let input = existing_file(&config.input, "input", "denoise")?;
    let output = required(&config.output, "output", "denoise")?;
    let model = load_model(model_path)?;
    let noisy = load_image(input)?;
    match &config.out_dir {
        Some(dir) => attach(log, dir)?,
        None => {
            let parent = output.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            attach(log, parent)?;
        }
    }
    let denoised = model.denoise_image(&noisy.to_tensor()).map_err(lib_err)?;
    let img = GrayImage::from_tensor(&denoised).map_err(lib_err)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    save_gray(output, &img).map_err(lib_err)?;
    log.info(format!("denoised {} -> {}", input.display(), output.display()));
    Ok(())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pgm"))
}

/// Ground-truth images as `(id, class, path)`, sorted by id.
fn ground_truth(config: &RunConfig) -> Result<Vec<(String, Option<String>, PathBuf)>, Failure> {
    let mut out = Vec::new();
    if let Some(manifest) = &config.eval_manifest {
        let manifest = existing_file(&Some(manifest.clone()), "eval_manifest", "eval")?.to_path_buf();
        for e in read_manifest(&manifest).map_err(|e| invalid(format!("cannot read manifest: {e}")))? {
            let name = e.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            out.push((name, e.class, e.path));
        }
    } else {
        let dir = required(&config.clean_dir, "clean_dir or eval_manifest", "eval")?;
        let dir = existing_dir(dir, "clean_dir")?;
        let listing = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        for entry in listing {
            let path = entry.map_err(|e| io_err(dir, e))?.path();
            if path.is_file() && is_image(&path) {
                let name = path.file_name().expect("listed file").to_string_lossy().into_owned();
                out.push((name, None, path));
            }
        }
    }
    if out.is_empty() {
        return Err(invalid("no ground-truth images to evaluate"));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(invalid(format!("ground-truth file name {:?} appears twice", w[0].0)));
    }
    Ok(out)
}

/// `name=path` or a bare path whose last component names the denoiser.
fn denoiser_dirs(config: &RunConfig) -> Result<Vec<(String, PathBuf)>, Failure> {
    if config.denoised_dirs.is_empty() {
        return Err(invalid("eval needs at least one entry in `denoised_dirs`"));
    }
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for entry in &config.denoised_dirs {
        let (name, path) = match entry.split_once('=') {
            Some((n, p)) if !n.is_empty() => (n.to_string(), PathBuf::from(p)),
            _ => {
                let path = PathBuf::from(entry);
                let name = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .ok_or_else(|| invalid(format!("cannot name denoiser directory {entry:?}; use name=path")))?;
                (name, path)
            }
        };
        existing_dir(&path, "denoised")?;
        if out.iter().any(|(n, _)| *n == name) {
            return Err(invalid(format!("denoiser id {name:?} given twice")));
        }
        out.push((name, path));
    }
    Ok(out)
}

fn run_eval(config: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    let truth = ground_truth(config)?;
    let denoisers = denoiser_dirs(config)?;
    for (id, _, path) in &truth {
        if !path.is_file() {
            return Err(invalid(format!("ground-truth image not found: {}", path.display())));
        }
        for (name, dir) in &denoisers {
            if !dir.join(id).is_file() {
                return Err(invalid(format!("denoiser {name:?} has no image {}", dir.join(id).display())));
            }
        }
    }
    let profile = match (&config.profile_denoiser, &config.profile_baseline) {
        (Some(d), Some(b)) => {
            for id in [d, b] {
                if !denoisers.iter().any(|(n, _)| n == id) {
                    return Err(invalid(format!("profile denoiser {id:?} is not among the evaluated denoisers")));
                }
            }
            Some((d.as_str(), b.as_str()))
        }
        (None, None) => None,
        _ => return Err(invalid("set both profile_denoiser and profile_baseline, or neither")),
    };
    let out = out_dir(config, "eval", log)?;

    let mut records = Vec::new();
    for (id, class, path) in &truth {
        let clean = load_image(path)?.to_tensor();
        for (name, dir) in &denoisers {
            let denoised = load_image(&dir.join(id))?.to_tensor();
            let score = psnr(&denoised, &clean).map_err(|e| invalid(format!("{id} ({name}): {e}")))?;
            records.push(EvalRecord {
                image_id: id.clone(),
                class_label: class.clone(),
                denoiser_id: name.clone(),
                psnr_db: score,
            });
        }
    }
    let analytics = Analytics::compute(&records, profile).map_err(lib_err)?;
    let files = emit_report(&records, &analytics, &out.join("reports")).map_err(lib_err)?;
    for (name, _) in &denoisers {
        let scores: Vec<f64> = records.iter().filter(|r| &r.denoiser_id == name).map(|r| r.psnr_db).collect();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let wins = analytics.wins.as_ref().and_then(|w| w.get(name)).copied().unwrap_or(0.0);
        log.info(format!("{name}: mean psnr {mean:.3} dB over {} images, wins {:.1}%", scores.len(), 100.0 * wins));
    }
    log.info(format!("wrote {} report files to {}", files.len(), out.join("reports").display()));
    Ok(())
}

fn run_diagnose(config: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    let model_path = existing_file(&config.model, "model", "diagnose")?;
    let input = existing_file(&config.input, "input", "diagnose")?;
    let clean_path = match &config.clean {
        Some(_) => Some(existing_file(&config.clean, "clean", "diagnose")?),
        None => None,
    };
    let model = load_model(model_path)?;
    let noisy = load_image(input)?.to_tensor();
    let truth = clean_path.map(load_image).transpose()?.map(|g| g.to_tensor());
    if let Some(t) = &truth {
        if t.shape() != noisy.shape() {
            return Err(invalid(format!("clean image {:?} and input {:?} differ in size", t.shape(), noisy.shape())));
        }
    }
    let out = out_dir(config, "diagnose", log)?;
    let trace = LayerTrace::from_image(&model, &noisy, truth).map_err(lib_err)?;
    let trace_dir = out.join("trace");
    let files = trace.export(&trace_dir).map_err(lib_err)?;
    log.info(format!("wrote {} trace files to {}", files.len(), trace_dir.display()));
    if config.dump_tensors {
        let dir = trace_dir.join("tensors");
        let decomposition = denoisenet::model::NoiseDecomposition { residuals: trace.residuals().to_vec() };
        let dumps = decomposition.write_dumps(&dir).map_err(lib_err)?;
        log.info(format!("wrote {} tensor dumps to {}", dumps.len(), dir.display()));
    }
    if trace.truth().is_some() {
        let curve = trace.layer_rmse_curve().map_err(lib_err)?;
        log.info(format!(
            "rmse {:.5} -> {:.5} over {} layers; monotone-decreasing fraction {:.2}",
            curve[0],
            curve[curve.len() - 1],
            trace.depth(),
            monotone_fraction(&curve)
        ));
    }
    Ok(())
}
