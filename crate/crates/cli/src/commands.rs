use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use forecal::calibrators::{load_calibrator, save_calibrator, CalibrationError, CalibratorBundle, FitOptions, Method};
use forecal::metrics::{
    class_probabilities, diagram_export, evaluate, reliability_table, CalibrationReport, write_diagram_csv, ConfidenceBinning, DiagramSelection,
    EvalOptions, RateBinning, ReliabilityTable,
};
use forecal::synth::{generate, SynthScenario, LABELS_FILE, LEAD_TIMES_FILE, LOGITS_FILE, SCENARIO_FILE};
use forecal::{read_tensor, validate_dataset, write_tensor, Dataset, Tensor};

use crate::runinfo::{bundle_files, file_digest, files_digest, manifest_for_file, RunRecorder, RUN_MANIFEST};
use crate::{ApplyArgs, BinningArgs, DiagramArgs, EvalArgs, FitArgs, RuleArg, SynthArgs, UsageError};

struct LoadedData {
    dir: PathBuf,
    logits: Tensor,
    labels: Tensor,
    lead_times: Tensor,
    digest: String,
}

impl LoadedData {
    fn load(dir: &Path) -> Result<Self> {
        let files: Vec<PathBuf> = [LOGITS_FILE, LABELS_FILE, LEAD_TIMES_FILE]
            .iter()
            .map(|f| dir.join(f))
            .collect();
        let logits = read_tensor(&files[0])?;
        let labels = read_tensor(&files[1])?;
        let lead_times = read_tensor(&files[2])?;
        validate_dataset(&logits, &labels, &lead_times)
            .with_context(|| format!("validating dataset {}", dir.display()))?;
        Ok(LoadedData {
            dir: dir.to_path_buf(),
            digest: files_digest(dir, &files)?,
            logits,
            labels,
            lead_times,
        })
    }

    fn dataset(&self) -> Result<Dataset> {
        Ok(Dataset::new(&self.logits, &self.labels, &self.lead_times)?)
    }

    fn lead_indices(&self) -> Vec<usize> {
        self.lead_times
            .as_i64()
            .expect("validated")
            .iter()
            .map(|&v| v as usize)
            .collect()
    }

    /// Probability dataset: `probs` when given, softmax of the logits otherwise.
    fn probabilities(&self, probs: Option<&Path>, run: &mut RunRecorder) -> Result<Dataset> {
        let p = match probs {
            Some(path) => {
                run.input("probs", path, file_digest(path)?);
                let t = read_tensor(path)?;
                if t.shape() != self.logits.shape() {
                    return Err(forecal::DatasetError::Shape {
                        tensor: "probs",
                        expected: format!("{:?} (the logits shape)", self.logits.shape()),
                        found: t.shape().to_vec(),
                    }
                    .into());
                }
                t
            }
            None => class_probabilities(&self.logits)?,
        };
        Ok(Dataset::from_probabilities(&p, &self.labels, &self.lead_times)?)
    }
}

fn rate_binning(args: &BinningArgs, classes: usize) -> Result<RateBinning> {
    let binning = match &args.rate_edges {
        Some(edges) => RateBinning::new(edges.clone())?,
        None => RateBinning::for_classes(classes)?,
    };
    if binning.classes() != classes {
        return Err(UsageError(format!(
            "{} rate edges define {} classes, data has {classes}",
            binning.edges().len(),
            binning.classes()
        ))
        .into());
    }
    Ok(binning)
}

fn reliability(
    probs: &Dataset,
    binning: &BinningArgs,
    f1_threshold: Option<f64>,
    rule: RuleArg,
) -> Result<(CalibrationReport, ReliabilityTable)> {
    let rate = rate_binning(binning, probs.dims().classes)?;
    let f1_threshold_mm_h = match f1_threshold {
        Some(t) => {
            rate.threshold_index(t)?;
            Some(t)
        }
        None if rate.threshold_index(1.0).is_ok() => Some(1.0),
        None => {
            log::warn!("1.0 mm/h is not a class edge; F1 omitted (set --f1-threshold)");
            None
        }
    };
    let options = EvalOptions {
        rate_binning: rate,
        conf_binning: ConfidenceBinning::new(binning.bins)?,
        f1_threshold_mm_h,
        f1_rule: rule.into(),
    };
    Ok(evaluate(probs, &options)?)
}

fn create_file(path: &Path) -> Result<io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(io::BufWriter::new(f))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut run = RunRecorder::new("synth", args);
    run.seed(args.seed);
    let scenario = SynthScenario::new(
        args.samples,
        args.height,
        args.width,
        args.classes,
        args.lead_times,
        args.distortion.clone(),
        args.seed,
    );
    let set = generate(&scenario)?;
    set.write_to(&args.out, &scenario)?;
    for f in [LOGITS_FILE, LABELS_FILE, LEAD_TIMES_FILE, SCENARIO_FILE] {
        run.output(&args.out.join(f));
    }
    log::info!(
        "wrote {} samples to {} (planted corruption rate {:.3})",
        args.samples,
        args.out.display(),
        set.corruption_rate()
    );
    run.finish(&args.out.join(RUN_MANIFEST))
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut run = RunRecorder::new("eval", args);
    let data = LoadedData::load(&args.data)?;
    run.input("dataset", &data.dir, data.digest.clone());
    let probs = data.probabilities(args.probs.as_deref(), &mut run)?;
    let (report, table) = reliability(&probs, &args.binning, args.f1_threshold, args.f1_rule)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    let diagram_rows = match &args.diagram {
        Some(_) => Some(diagram_export(&table, DiagramSelection::default())?),
        None => None,
    };
    let mut outputs = Vec::new();
    match &args.out {
        Some(path) => {
            create_file(path)?.write_all(json.as_bytes())?;
            outputs.push(path.clone());
        }
        None => io::stdout().write_all(json.as_bytes())?,
    }
    if let (Some(path), Some(rows)) = (&args.diagram, diagram_rows) {
        let mut w = create_file(path)?;
        write_diagram_csv(&rows, &mut w)?;
        w.flush()?;
        outputs.push(path.clone());
    }
    if let Some(first) = outputs.first() {
        for o in &outputs {
            run.output(o);
        }
        run.finish(&manifest_for_file(first))?;
    }
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let mut run = RunRecorder::new("fit", args);
    run.seed(args.seed);
    let method: Method = args.method.into();
    if method != Method::Lts && !args.conditioned {
        log::warn!("--conditioned only applies to lts; ignored for {method}");
    }
    let data = LoadedData::load(&args.data)?;
    run.input("dataset", &data.dir, data.digest.clone());
    let ds = data.dataset()?;
    let options = FitOptions {
        conditioned: args.conditioned,
        epochs: args.epochs,
        seed: args.seed,
    };
    let mut bundle = CalibratorBundle::fit(&ds, method, &options)?;
    bundle.metadata.dataset_digest = Some(data.digest.clone());
    save_calibrator(&bundle, &args.out)?;
    log::info!(
        "{method}: loss {:.6} -> {:.6}, {} parameters",
        bundle.metadata.initial_loss,
        bundle.metadata.final_loss,
        bundle.metadata.parameter_count
    );
    for f in bundle_files(&args.out)? {
        run.output(&f);
    }
    run.finish(&args.out.join(RUN_MANIFEST))
}

pub fn apply(args: &ApplyArgs) -> Result<()> {
    let mut run = RunRecorder::new("apply", args);
    let bundle = load_calibrator(&args.bundle)?;
    let files = bundle_files(&args.bundle)?;
    run.input("bundle", &args.bundle, files_digest(&args.bundle, &files)?);
    let data = LoadedData::load(&args.data)?;
    run.input("dataset", &data.dir, data.digest.clone());
    if bundle.metadata.dataset_digest.as_deref() == Some(data.digest.as_str()) {
        log::warn!(
            "{} is the dataset this calibrator was fitted on; calibration measured on it is optimistic",
            args.data.display()
        );
    }
    let classes = data.logits.shape()[1];
    if bundle.metadata.classes != classes {
        return Err(CalibrationError::ClassMismatch {
            expected: bundle.metadata.classes,
            found: classes,
        }
        .into());
    }
    let probs = bundle.calibrator.apply(&data.logits, &data.lead_indices())?;
    write_tensor(&probs, &args.out)?;
    run.output(&args.out);
    run.finish(&manifest_for_file(&args.out))
}

pub fn diagram(args: &DiagramArgs) -> Result<()> {
    let mut run = RunRecorder::new("diagram", args);
    let data = LoadedData::load(&args.data)?;
    run.input("dataset", &data.dir, data.digest.clone());
    let probs = data.probabilities(args.probs.as_deref(), &mut run)?;
    let rate = rate_binning(&args.binning, probs.dims().classes)?;
    let table = reliability_table(&probs, &rate, &ConfidenceBinning::new(args.binning.bins)?)?;
    let rows = diagram_export(
        &table,
        DiagramSelection {
            threshold_mm_h: args.threshold,
            lead_time: args.lead_time,
        },
    )?;
    match &args.out {
        Some(path) => {
            let mut w = create_file(path)?;
            write_diagram_csv(&rows, &mut w)?;
            w.flush()?;
            run.output(path);
            run.finish(&manifest_for_file(path))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_diagram_csv(&rows, &mut lock)?;
            Ok(())
        }
    }
}
