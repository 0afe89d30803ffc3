use std::path::{Path, PathBuf};

use stiction_core::evaluation::{self, evaluate_samples, export_trace, metrics, read_trace, trace_confusion};
use stiction_core::labeling::{
    ground_truth_labels, read_ground_truth, read_labels, slope_ratio_labels, t2_labels, write_ground_truth, write_labels, LabelMethod,
    LabeledWindow,
};
use stiction_core::loopsim::make_dataset;
use stiction_core::models::{train_model, ModelError, ModelKind, TrainedModel};
use stiction_core::series::{merge_op_pv, parse_raw, SignalKind, UniformSeries};
use stiction_core::windowing::{pair_detect_lookahead, segment_detection_samples, split_normalize, DatasetMode, WindowDataset, WindowSpec};

use crate::config::{episodes, ConfigFile};
use crate::error::CliError;
use crate::output::{file_sha256, sidecar, Run, RunManifest};
use crate::{Cli, Command, Split};

pub fn dispatch(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out } => simulate(argv, &config, &out),
        Command::Ingest { op, pv, out } => ingest(argv, &op, &pv, &out),
        Command::Label(args) => label(argv, args),
        Command::Dataset(args) => dataset(argv, args),
        Command::Train(args) => train(argv, args),
        Command::Detect(args) => classify(argv, "detect", DatasetMode::Detect, args),
        Command::Predict(args) => classify(argv, "predict", DatasetMode::Predict, args),
        Command::Heatmap(args) => heatmap(argv, args),
        Command::Evaluate { trace, out } => evaluate(argv, &trace, &out),
        Command::Rerun { manifest, check } => rerun(&manifest, check),
    }
}

fn load_config(run: &mut Run, path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let cfg = match path {
        None => ConfigFile::default(),
        Some(p) => {
            let bytes = run.read_input(p)?;
            let text = String::from_utf8(bytes).map_err(|_| CliError::usage("InvalidConfig", format!("{} is not UTF-8", p.display())))?;
            toml::from_str(&text)?
        }
    };
    Ok(cfg)
}

fn read_series(run: &mut Run, path: &Path) -> Result<UniformSeries, CliError> {
    let bytes = run.read_input(path)?;
    Ok(UniformSeries::read_csv(bytes.as_slice())?)
}

fn read_label_file(run: &mut Run, path: &Path, series: &UniformSeries) -> Result<Vec<LabeledWindow>, CliError> {
    let bytes = run.read_input(path)?;
    Ok(read_labels(bytes.as_slice(), series.t0)?)
}

fn read_dataset(run: &mut Run, path: &Path) -> Result<WindowDataset, CliError> {
    let bytes = run.read_input(path)?;
    Ok(WindowDataset::read_from(bytes.as_slice())?)
}

fn read_model(run: &mut Run, path: &Path) -> Result<TrainedModel, CliError> {
    let bytes = run.read_input(path)?;
    Ok(TrainedModel::read_from(bytes.as_slice())?)
}

fn simulate(argv: Vec<String>, config: &Path, out: &Path) -> Result<(), CliError> {
    let mut run = Run::new("simulate", argv);
    let cfg = load_config(&mut run, Some(config))?;
    let schedule = episodes(&cfg)?;
    let sim = make_dataset(&schedule)?;
    run.record_config("simulation", &cfg);
    run.seed = cfg.loop_.as_ref().and_then(|l| l.seed);
    run.note("minutes", sim.series.len() as i64);
    run.note("episodes", schedule.len() as i64);
    run.note("sticky_minutes", sim.ground_truth.iter().filter(|&&g| g).count() as i64);

    let mut table = Vec::new();
    sim.series.write_csv(&mut table)?;
    let mut truth = Vec::new();
    write_ground_truth(&sim.ground_truth, sim.series.t0, &mut truth)?;
    let mut op = Vec::new();
    sim.series.write_signal(SignalKind::Op, &mut op)?;
    let mut pv = Vec::new();
    sim.series.write_signal(SignalKind::Pv, &mut pv)?;
    run.write(&out.join("series.csv"), &table)?;
    run.write(&out.join("ground_truth.csv"), &truth)?;
    run.write(&out.join("op.csv"), &op)?;
    run.write(&out.join("pv.csv"), &pv)?;
    run.finish(&out.join("manifest.toml"))
}

fn ingest(argv: Vec<String>, op: &Path, pv: &Path, out: &Path) -> Result<(), CliError> {
    let mut run = Run::new("ingest", argv);
    let op_raw = parse_raw(run.read_input(op)?.as_slice(), SignalKind::Op)?;
    let pv_raw = parse_raw(run.read_input(pv)?.as_slice(), SignalKind::Pv)?;
    for (name, raw) in [("op", &op_raw), ("pv", &pv_raw)] {
        if !raw.diagnostics.is_empty() {
            log::warn!("{name}: skipped {} unparseable rows (first: {:?})", raw.diagnostics.len(), raw.diagnostics[0]);
        }
        run.note(&format!("{name}_points"), raw.points.len() as i64);
        run.note(&format!("{name}_skipped_rows"), raw.diagnostics.len() as i64);
    }
    let series = merge_op_pv(&op_raw, &pv_raw)?;
    run.note("minutes", series.len() as i64);
    let mut table = Vec::new();
    series.write_csv(&mut table)?;
    run.write(out, &table)?;
    run.finish(&sidecar(out, ".manifest.toml"))
}

fn label(argv: Vec<String>, a: crate::LabelArgs) -> Result<(), CliError> {
    let mut run = Run::new("label", argv);
    let cfg = load_config(&mut run, a.config.as_deref())?;
    let series = read_series(&mut run, &a.input)?;
    let mut section = cfg.labeling.clone().unwrap_or_default();
    section.window_minutes = a.window.or(section.window_minutes);
    section.n_consecutive = a.n.or(section.n_consecutive);
    section.percentile = a.percentile.or(section.percentile);
    section.pv_slope_epsilon = a.epsilon.or(section.pv_slope_epsilon);
    let method: LabelMethod =
        a.method.parse().map_err(|e: stiction_core::labeling::LabelError| CliError::usage("InvalidMethod", e.to_string()))?;
    let labels = match method {
        LabelMethod::SlopeRatio => {
            let c = section.slope_ratio();
            run.record_config(
                "slope_ratio",
                &toml::toml! {
                    window_minutes = (c.window_minutes as i64)
                    n_consecutive = (c.n_consecutive as i64)
                    pv_slope_epsilon = (c.pv_slope_epsilon)
                },
            );
            slope_ratio_labels(&series, &c)?
        }
        LabelMethod::HotellingT2 => {
            let c = section.t2()?;
            let ridge = match c.ridge {
                stiction_core::labeling::Ridge::Auto => toml::Value::from("auto"),
                stiction_core::labeling::Ridge::Fixed(v) => toml::Value::from(v),
            };
            run.record_config(
                "hotelling_t2",
                &toml::toml! {
                    window_minutes = (c.window_minutes as i64)
                    percentile = (c.percentile_p)
                    ridge = ridge
                },
            );
            t2_labels(&series, &c)?
        }
        LabelMethod::GroundTruth => {
            let path = a
                .ground_truth
                .as_deref()
                .ok_or_else(|| CliError::usage("MissingArgument", "--method ground_truth needs --ground-truth FILE"))?;
            let (t0, flags) = read_ground_truth(run.read_input(path)?.as_slice())?;
            if t0 != series.t0 || flags.len() != series.len() {
                return Err(CliError::data("Misaligned", "ground truth does not cover the series minute for minute"));
            }
            let w = section.window_minutes.unwrap_or(60);
            run.record_config("ground_truth", &toml::toml! { window_minutes = (w as i64) });
            ground_truth_labels(&flags, w)
        }
    };
    run.note("method", method.as_str());
    run.note("windows", labels.len() as i64);
    run.note("stiction_windows", labels.iter().filter(|w| w.label == 1).count() as i64);
    run.note("warmup_windows", labels.iter().filter(|w| w.warmup).count() as i64);
    let mut buf = Vec::new();
    write_labels(&labels, series.t0, &mut buf)?;
    run.write(&a.out, &buf)?;
    run.finish(&sidecar(&a.out, ".manifest.toml"))
}

fn window_spec(cfg: &ConfigFile, model_len: Option<usize>, d: usize, k: usize) -> WindowSpec {
    let section = cfg.windowing.clone().unwrap_or_default();
    let base = section.base_minutes.unwrap_or(60);
    WindowSpec {
        base_minutes: base,
        stride_minutes: base,
        model_len_l: model_len.or(section.model_len).unwrap_or(24),
        detect_windows_d: d,
        lookahead_windows_k: k,
    }
}

fn spec_table(spec: &WindowSpec) -> toml::Table {
    toml::toml! {
        base_minutes = (spec.base_minutes as i64)
        model_len = (spec.model_len_l as i64)
        detect_windows = (spec.detect_windows_d as i64)
        lookahead_windows = (spec.lookahead_windows_k as i64)
    }
}

fn dataset(argv: Vec<String>, a: crate::DatasetArgs) -> Result<(), CliError> {
    let mut run = Run::new("dataset", argv);
    let cfg = load_config(&mut run, a.config.as_deref())?;
    let series = read_series(&mut run, &a.series)?;
    let labels = read_label_file(&mut run, &a.labels, &series)?;
    let mode = match a.mode.as_str() {
        "detect" => DatasetMode::Detect,
        _ => DatasetMode::Predict,
    };
    let (d, k) = match mode {
        DatasetMode::Detect => {
            if a.detect.unwrap_or(1) != 1 || a.lookahead.unwrap_or(1) != 1 {
                return Err(CliError::usage("InvalidSpec", "detect mode uses single windows; drop --detect/--lookahead"));
            }
            (1, 1)
        }
        DatasetMode::Predict => (a.detect.unwrap_or(1), a.lookahead.unwrap_or(1)),
    };
    let spec = window_spec(&cfg, a.model_len, d, k);
    let samples = match mode {
        DatasetMode::Detect => segment_detection_samples(&series, &labels, &spec)?,
        DatasetMode::Predict => pair_detect_lookahead(&series, &labels, &spec)?,
    };
    let ds = split_normalize(samples, spec, mode, series.t0)?;
    run.record_config("windowing", &spec_table(&spec));
    run.note("mode", mode.as_str());
    run.note("samples", ds.samples.len() as i64);
    run.note("train", ds.train().len() as i64);
    run.note("validation", ds.val().len() as i64);
    run.note("test", ds.test().len() as i64);
    run.note("stiction_samples", ds.samples.iter().filter(|s| s.label == 1).count() as i64);
    run.note("input_rows", ds.input_shape().0 as i64);
    run.note("normalization_mean_pv_op", toml::Value::Array(ds.normalization.mean.iter().map(|&v| v.into()).collect()));
    run.note("normalization_std_pv_op", toml::Value::Array(ds.normalization.std.iter().map(|&v| v.into()).collect()));
    let mut buf = Vec::new();
    ds.write_to(&mut buf)?;
    run.write(&a.out, &buf)?;
    run.finish(&sidecar(&a.out, ".manifest.toml"))
}

fn parse_kind(arch: &str) -> Result<ModelKind, CliError> {
    arch.parse().map_err(|e: ModelError| CliError::usage("UnknownKind", e.to_string()))
}

fn train(argv: Vec<String>, a: crate::TrainArgs) -> Result<(), CliError> {
    let mut run = Run::new("train", argv);
    let cfg = load_config(&mut run, a.config.as_deref())?;
    let kind = parse_kind(&a.arch)?;
    let ds = read_dataset(&mut run, &a.dataset)?;
    let arch = cfg.architecture.clone().unwrap_or_default().spec(kind, a.reduce);
    let train_cfg = cfg.train.clone().unwrap_or_default().resolve(a.seed, a.epochs, ds.train())?;
    let svm_cfg = cfg.svm.clone().unwrap_or_default().resolve(train_cfg.seed);
    record_training(&mut run, &arch, &train_cfg, &svm_cfg);
    run.seed = Some(train_cfg.seed);

    let model = train_model(&arch, &ds, &train_cfg, &svm_cfg)?;
    let history = model.history();
    run.note("epochs", history.epochs.len() as i64);
    run.note("best_epoch", history.best_epoch as i64);
    run.note("stopped_early", history.stopped_early);
    if let Some(best) = history.epochs.iter().find(|e| e.epoch == history.best_epoch) {
        run.note("best_val_loss", best.val_loss);
    }
    let mut buf = Vec::new();
    model.write_to(&mut buf)?;
    run.write(&a.out, &buf)?;
    run.write(&sidecar(&a.out, ".history.csv"), history.to_csv().as_bytes())?;
    run.finish(&sidecar(&a.out, ".manifest.toml"))
}

fn record_training(
    run: &mut Run,
    arch: &stiction_core::models::ArchitectureSpec,
    t: &stiction_core::neural::TrainConfig,
    s: &stiction_core::models::SvmConfig,
) {
    let widths = |v: &[usize]| toml::Value::Array(v.iter().map(|&x| (x as i64).into()).collect());
    run.record_config(
        "architecture",
        &toml::toml! {
            kind = (arch.kind.as_str())
            conv_filters = (widths(&arch.conv_filters))
            cnn_dense = (widths(&arch.cnn_dense))
            lstm_units = (widths(&arch.lstm_units))
            lstm_dense = (arch.lstm_dense as i64)
            pooling = (arch.pooling)
        },
    );
    run.record_config(
        "train",
        &toml::toml! {
            max_epochs = (t.max_epochs as i64)
            learning_rate = (t.learning_rate)
            patience = (t.patience as i64)
            batch_size = (t.batch_size as i64)
            seed = (t.seed as i64)
            class_weight = (t.class_weight)
        },
    );
    if arch.kind == ModelKind::CnnSvm {
        let mut svm = toml::toml! {
            c = (s.c)
            tol = (s.tol)
            max_iterations = (s.max_iterations as i64)
            max_train_rows = (s.max_train_rows as i64)
            seed = (s.seed as i64)
        };
        if let Some(g) = s.gamma {
            svm.insert("gamma".into(), g.into());
        }
        run.record_config("svm", &svm);
    }
}

fn classify(argv: Vec<String>, command: &'static str, mode: DatasetMode, a: crate::ClassifyArgs) -> Result<(), CliError> {
    let mut run = Run::new(command, argv);
    let model = read_model(&mut run, &a.model)?;
    let ds = read_dataset(&mut run, &a.dataset)?;
    if ds.mode != mode {
        return Err(CliError::usage("ModeMismatch", format!("`{command}` needs a {} dataset, got {}", mode.as_str(), ds.mode.as_str())));
    }
    if model.input_shape() != ds.input_shape() {
        return Err(CliError::data(
            "ShapeMismatch",
            format!("model expects {:?} inputs, dataset holds {:?}", model.input_shape(), ds.input_shape()),
        ));
    }
    let samples = match a.split {
        Split::Train => ds.train(),
        Split::Val => ds.val(),
        Split::Test => ds.test(),
        Split::All => &ds.samples[..],
    };
    let trace = evaluate_samples(&model, &ds, samples)?;
    let report = metrics(&trace_confusion(&trace)?);
    run.record_config("evaluation", &toml::toml! { split = (a.split.as_str()) model = (model.kind().as_str()) });
    run.note("samples", trace.len() as i64);
    run.note("accuracy", (report.accuracy * 1e4).round() / 1e4);
    let mut buf = Vec::new();
    export_trace(&trace, &mut buf)?;
    let report_path = a.report.clone().unwrap_or_else(|| sidecar(&a.out, ".metrics.txt"));
    run.write(&a.out, &buf)?;
    run.write(&report_path, report.to_text().as_bytes())?;
    run.finish(&sidecar(&a.out, ".manifest.toml"))
}

fn heatmap(argv: Vec<String>, a: crate::HeatmapArgs) -> Result<(), CliError> {
    let mut run = Run::new("heatmap", argv);
    let cfg = load_config(&mut run, a.config.as_deref())?;
    let kind = parse_kind(&a.arch)?;
    let series = read_series(&mut run, &a.input)?;
    let labels = read_label_file(&mut run, &a.labels, &series)?;
    let base = window_spec(&cfg, a.model_len, 1, 1);
    let arch = cfg.architecture.clone().unwrap_or_default().spec(kind, a.reduce);
    let train_section = cfg.train.clone().unwrap_or_default();
    let svm_section = cfg.svm.clone().unwrap_or_default();
    // Surface configuration mistakes once, before any cell trains.
    let probe = train_section.resolve(Some(a.seed), a.epochs, &[])?;
    record_training(&mut run, &arch, &probe, &svm_section.resolve(a.seed));
    run.record_config("windowing", &spec_table(&base));
    run.seed = Some(a.seed);

    let grid = evaluation::heatmap(&series, &labels, base, a.seed, |ds, seed| {
        let t = train_section.resolve(Some(seed), a.epochs, ds.train()).map_err(|e| ModelError::InvalidInput(e.message))?;
        train_model(&arch, ds, &t, &svm_section.resolve(seed))
    });
    let mut absent = 0;
    for (d, row) in grid.cells.iter().enumerate() {
        for (k, cell) in row.iter().enumerate() {
            if let Err(e) = cell {
                absent += 1;
                log::warn!("cell D={} K={} absent: {e}", d + 1, k + 1);
            }
        }
    }
    run.note("absent_cells", absent as i64);
    run.write(&a.out, grid.to_csv().as_bytes())?;
    run.write(&sidecar(&a.out, ".cells.csv"), grid.metadata().as_bytes())?;
    run.finish(&sidecar(&a.out, ".manifest.toml"))
}

fn evaluate(argv: Vec<String>, trace: &Path, out: &Path) -> Result<(), CliError> {
    let mut run = Run::new("evaluate", argv);
    let rows = read_trace(run.read_input(trace)?.as_slice())?;
    let report = metrics(&trace_confusion(&rows)?);
    run.note("samples", rows.len() as i64);
    run.write(out, report.to_text().as_bytes())?;
    run.finish(&sidecar(out, ".manifest.toml"))
}

/// Re-runs the stage recorded in a manifest; `check` then compares outputs byte for byte.
fn rerun(manifest_path: &Path, check: bool) -> Result<(), CliError> {
    let manifest = RunManifest::read(manifest_path)?;
    for input in &manifest.inputs {
        let now = file_sha256(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::data("InputChanged", format!("{} differs from the recorded checksum", input.path)));
        }
    }
    if manifest.command == "rerun" {
        return Err(CliError::usage("InvalidManifest", "manifest records a rerun"));
    }
    std::env::set_current_dir(&manifest.working_dir)
        .map_err(|e| CliError::data("Io", format!("cannot enter {}: {e}", manifest.working_dir)))?;
    let cli = <Cli as clap::Parser>::try_parse_from(&manifest.argv)
        .map_err(|e| CliError::data("InvalidManifest", format!("recorded arguments no longer parse: {}", e.kind())))?;
    dispatch(cli, manifest.argv.clone())?;
    if check {
        for output in &manifest.outputs {
            let now = file_sha256(&PathBuf::from(&output.path))?;
            if now != output.sha256 {
                return Err(CliError::data("NotReproducible", format!("{} differs from the recorded output", output.path)));
            }
        }
    }
    Ok(())
}
