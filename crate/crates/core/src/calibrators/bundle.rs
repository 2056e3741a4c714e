use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lts::{apply_lts, fit_lts, LtsOptions, LtsRegressor};
use super::selective::{apply_ss, fit_ss, SelectiveScaler, SsOptions, HELD_OUT_RATIO};
use super::temperature::{apply_temperature, fit_temperature, mean_nll, GlobalTemperature};
use super::CalibrationError;
use crate::dataset::Dataset;
use crate::diffnet::{load_network, save_network};
use crate::tensor::Tensor;

pub const BUNDLE_MANIFEST: &str = "manifest.json";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const NETWORK_DIR: &str = "network";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ts,
    Lts,
    Ss,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ts => "ts",
            Method::Lts => "lts",
            Method::Ss => "ss",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ts" => Ok(Method::Ts),
            "lts" => Ok(Method::Lts),
            "ss" => Ok(Method::Ss),
            other => Err(format!("unknown method {other:?}, expected ts, lts or ss")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Calibrator {
    Temperature(GlobalTemperature),
    Lts(LtsRegressor),
    Selective(SelectiveScaler),
}

impl Calibrator {
    pub fn method(&self) -> Method {
        match self {
            Calibrator::Temperature(_) => Method::Ts,
            Calibrator::Lts(_) => Method::Lts,
            Calibrator::Selective(_) => Method::Ss,
        }
    }

    /// Calibrated class probabilities, [N,K,H,W].
    pub fn apply(&self, logits: &Tensor, lead_times: &[usize]) -> Result<Tensor, CalibrationError> {
        match self {
            Calibrator::Temperature(c) => apply_temperature(c, logits),
            Calibrator::Lts(c) => apply_lts(c, logits, lead_times),
            Calibrator::Selective(c) => apply_ss(c, logits, lead_times),
        }
    }

    /// Class count the calibrator was fitted for; temperature scaling works for any.
    pub fn classes(&self) -> Option<usize> {
        match self {
            Calibrator::Temperature(_) => None,
            Calibrator::Lts(c) => Some(c.classes()),
            Calibrator::Selective(c) => Some(c.classes()),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Calibrator::Temperature(_) => 1,
            Calibrator::Lts(c) => c.network.parameter_count(),
            Calibrator::Selective(c) => c.network.parameter_count() + 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub samples: usize,
    pub pixels: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub lead_times: usize,
    pub parameter_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioned: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_samples: Option<usize>,
    /// Mean NLL (TS, LTS) or weighted BCE (SS) before fitting.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Identity of the fitting data, filled in by callers that know it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratorBundle {
    pub calibrator: Calibrator,
    pub metadata: FitMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub conditioned: bool,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            conditioned: true,
            epochs: LtsOptions::default().epochs,
            seed: 0,
        }
    }
}

impl CalibratorBundle {
    /// Fits `method` on `ds` with default optimizer settings.
    pub fn fit(ds: &Dataset, method: Method, options: &FitOptions) -> Result<Self, CalibrationError> {
        let d = ds.dims();
        let mut metadata = FitMetadata {
            samples: d.samples,
            pixels: d.total_pixels(),
            classes: d.classes,
            height: d.height,
            width: d.width,
            lead_times: d.lead_times,
            parameter_count: 0,
            conditioned: None,
            seed: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            held_out_samples: None,
            initial_loss: 0.0,
            final_loss: 0.0,
            dataset_digest: None,
        };
        let calibrator = match method {
            Method::Ts => {
                let c = fit_temperature(ds)?;
                metadata.initial_loss = mean_nll(ds, 1.0);
                metadata.final_loss = mean_nll(ds, c.temperature);
                Calibrator::Temperature(c)
            }
            Method::Lts => {
                let opts = LtsOptions {
                    conditioned: options.conditioned,
                    epochs: options.epochs,
                    seed: options.seed,
                    ..LtsOptions::default()
                };
                let (c, summary) = fit_lts(ds, &opts)?;
                metadata.conditioned = Some(opts.conditioned);
                metadata.seed = Some(opts.seed);
                metadata.epochs = Some(opts.epochs);
                metadata.batch_size = Some(opts.batch_size);
                metadata.learning_rate = Some(opts.learning_rate);
                metadata.initial_loss = summary.initial_loss;
                metadata.final_loss = summary.final_loss;
                Calibrator::Lts(c)
            }
            Method::Ss => {
                let opts = SsOptions {
                    epochs: options.epochs,
                    seed: options.seed,
                    ..SsOptions::default()
                };
                let (c, summary) = fit_ss(ds, &opts)?;
                metadata.conditioned = Some(true);
                metadata.seed = Some(opts.seed);
                metadata.epochs = Some(opts.epochs);
                metadata.batch_size = Some(opts.batch_size);
                metadata.learning_rate = Some(opts.learning_rate);
                metadata.held_out_samples =
                    Some(((d.samples as f64 / HELD_OUT_RATIO as f64).round() as usize).max(1));
                metadata.initial_loss = summary.initial_loss;
                metadata.final_loss = summary.final_loss;
                Calibrator::Selective(c)
            }
        };
        metadata.parameter_count = calibrator.parameter_count();
        Ok(CalibratorBundle { calibrator, metadata })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    method: Method,
    /// TS: the temperature. SS: the derived selective temperature, for reading only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    temperature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale_parameter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<String>,
    metadata: FitMetadata,
}

/// 17 significant digits, enough to round-trip any f64.
fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_exact(field: &str, v: Option<&String>) -> Result<f64, CalibrationError> {
    let v = v.ok_or_else(|| CalibrationError::Manifest(format!("missing field {field:?}")))?;
    v.parse()
        .map_err(|_| CalibrationError::Manifest(format!("field {field:?} is not a number: {v:?}")))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CalibrationError + '_ {
    move |source| CalibrationError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_calibrator(bundle: &CalibratorBundle, dir: impl AsRef<Path>) -> Result<(), CalibrationError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = Manifest {
        format_version: BUNDLE_FORMAT_VERSION,
        method: bundle.calibrator.method(),
        temperature: None,
        threshold: None,
        scale_parameter: None,
        network: None,
        metadata: bundle.metadata.clone(),
    };
    match &bundle.calibrator {
        Calibrator::Temperature(c) => manifest.temperature = Some(exact(c.temperature)),
        Calibrator::Lts(c) => {
            save_network(&c.network, dir.join(NETWORK_DIR))?;
            manifest.network = Some(NETWORK_DIR.into());
        }
        Calibrator::Selective(c) => {
            save_network(&c.network, dir.join(NETWORK_DIR))?;
            manifest.network = Some(NETWORK_DIR.into());
            manifest.threshold = Some(exact(c.threshold));
            manifest.scale_parameter = Some(exact(c.scale_parameter));
            manifest.temperature = Some(exact(c.temperature()));
        }
    }
    let path = dir.join(BUNDLE_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn load_calibrator(dir: impl AsRef<Path>) -> Result<CalibratorBundle, CalibrationError> {
    let dir = dir.as_ref();
    let path = dir.join(BUNDLE_MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CalibrationError::Manifest(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CalibrationError::Manifest("missing format_version".into()))?;
    if version != BUNDLE_FORMAT_VERSION as u64 {
        return Err(CalibrationError::VersionMismatch {
            found: version.try_into().unwrap_or(u32::MAX),
            expected: BUNDLE_FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| CalibrationError::Manifest(e.to_string()))?;
    let network = || -> Result<_, CalibrationError> {
        let sub = manifest
            .network
            .as_ref()
            .ok_or_else(|| CalibrationError::Manifest("missing field \"network\"".into()))?;
        Ok(load_network(dir.join(sub))?)
    };
    let calibrator = match manifest.method {
        Method::Ts => {
            let temperature = parse_exact("temperature", manifest.temperature.as_ref())?;
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(CalibrationError::Manifest(format!("temperature {temperature} must be > 0")));
            }
            Calibrator::Temperature(GlobalTemperature { temperature })
        }
        Method::Lts => Calibrator::Lts(LtsRegressor { network: network()? }),
        Method::Ss => {
            let threshold = parse_exact("threshold", manifest.threshold.as_ref())?;
            let scale_parameter = parse_exact("scale_parameter", manifest.scale_parameter.as_ref())?;
            Calibrator::Selective(SelectiveScaler {
                network: network()?,
                threshold,
                scale_parameter,
            })
        }
    };
    Ok(CalibratorBundle {
        calibrator,
        metadata: manifest.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Distortion, SynthScenario};

    fn synth(seed: u64) -> Dataset {
        let set = generate(&SynthScenario::new(12, 8, 8, 6, 2, Distortion::planted_default(), seed)).unwrap();
        Dataset::new(&set.logits, &set.labels, &set.lead_times).unwrap()
    }

    fn fit_all(ds: &Dataset) -> Vec<CalibratorBundle> {
        let opts = FitOptions {
            conditioned: true,
            epochs: 1,
            seed: 4,
        };
        [Method::Ts, Method::Lts, Method::Ss]
            .iter()
            .map(|&m| CalibratorBundle::fit(ds, m, &opts).unwrap())
            .collect()
    }

    #[test]
    fn save_load_is_exact() {
        let ds = synth(1);
        let dir = tempfile::tempdir().unwrap();
        for (i, bundle) in fit_all(&ds).into_iter().enumerate() {
            let path = dir.path().join(i.to_string());
            save_calibrator(&bundle, &path).unwrap();
            let back = load_calibrator(&path).unwrap();
            assert_eq!(back, bundle);
            let logits = ds.scores_tensor();
            let a = bundle.calibrator.apply(&logits, ds.lead_times()).unwrap();
            let b = back.calibrator.apply(&logits, ds.lead_times()).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes());
        }
    }

    #[test]
    fn temperature_text_round_trips() {
        for t in [0.1 + 0.2, std::f64::consts::PI, 1.0 / 3.0, 19.999999999999996] {
            assert_eq!(exact(t).parse::<f64>().unwrap(), t);
        }
    }

    #[test]
    fn corrupt_or_foreign_manifests_fail() {
        let ds = synth(2);
        let bundle = CalibratorBundle::fit(&ds, Method::Ts, &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_calibrator(&bundle, dir.path()).unwrap();
        let path = dir.path().join(BUNDLE_MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
        assert!(matches!(
            load_calibrator(dir.path()),
            Err(CalibrationError::VersionMismatch { found: 2, .. })
        ));
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_calibrator(dir.path()), Err(CalibrationError::Manifest(_))));
    }

    #[test]
    fn missing_network_tensor_fails() {
        let ds = synth(3);
        let opts = FitOptions {
            epochs: 1,
            ..FitOptions::default()
        };
        let bundle = CalibratorBundle::fit(&ds, Method::Lts, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_calibrator(&bundle, dir.path()).unwrap();
        fs::remove_file(dir.path().join(NETWORK_DIR).join("layer0.weight.fct1")).unwrap();
        assert!(load_calibrator(dir.path()).is_err());
    }

    #[test]
    fn refitting_gives_identical_bytes() {
        let ds = synth(5);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for (i, (x, y)) in fit_all(&ds).iter().zip(fit_all(&ds)).enumerate() {
            save_calibrator(x, a.path().join(i.to_string())).unwrap();
            save_calibrator(&y, b.path().join(i.to_string())).unwrap();
        }
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(&entry).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
        }
    }

    fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }
}
