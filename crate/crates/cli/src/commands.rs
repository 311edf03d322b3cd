use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tagc::bench::{
    comm_report, comm_report_csv, roundtrip, CommRow, RoundtripReport, RoundtripSpec,
};
use tagc::codec::{IndexWidth, Ratio};
use tagc::collectives::{ExecMode, World};
use tagc::hook::{
    classification_report, min_theta, ClassificationReport, CompressionConfig, LayerSpec,
    OPERATING_POINTS,
};
use tagc::trainer::{
    run_experiment, Corpus, GradientPath, RunMetrics, RunStatus, TinyModelConfig, TrainRunConfig,
    DATA_STREAM,
};

use crate::args::{ClassifyArgs, CommreportArgs, Preset, RoundtripArgs, TrainArgs};
use crate::error::CliError;

/// What a command produced: a human-readable summary, report files keyed by
/// their fixed names, and the exit status.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub files: Vec<(&'static str, Vec<u8>)>,
    pub invariant_failed: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.invariant_failed)
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, b)| b.as_slice())
    }
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("reports serialize");
    out.push(b'\n');
    out
}

fn ratio(factor: u32) -> Result<Ratio, CliError> {
    match Ratio::try_from(factor) {
        Ok(Ratio::Bypass) | Err(_) => Err(CliError::Usage(format!(
            "ratio must be 2, 4 or 10, got {factor}"
        ))),
        Ok(r) => Ok(r),
    }
}

fn width(bits: u32) -> Result<IndexWidth, CliError> {
    IndexWidth::try_from(bits)
        .map_err(|_| CliError::Usage(format!("index width must be 1 or 4, got {bits}")))
}

pub fn cmd_roundtrip(a: &RoundtripArgs) -> Result<Outcome, CliError> {
    let mut config =
        CompressionConfig::new(a.theta, ratio(a.ratio)?, width(a.width)?).with_seed(a.seed);
    config.allow_below_table = a.allow_below_table;
    config.validate_for_world(a.world_size)?;
    if a.n == 0 || a.trials == 0 {
        return Err(CliError::Usage(
            "--n and --trials must be at least 1".into(),
        ));
    }
    let spec = RoundtripSpec {
        config,
        n: a.n,
        world_size: a.world_size,
        trials: a.trials,
        seed: a.seed,
        values: a.values.into(),
    };
    let report = roundtrip(&spec, a.mode.into())?;
    Ok(Outcome {
        stdout: roundtrip_text(&report),
        invariant_failed: !report.passed(),
        files: vec![("roundtrip.json", json(&report))],
    })
}

fn roundtrip_text(r: &RoundtripReport) -> String {
    let c = &r.spec.config;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "theta {} ratio {} width {} n {} W {} trials {} values {:?}",
        c.theta,
        c.ratio,
        c.index_width.bits(),
        r.spec.n,
        r.spec.world_size,
        r.spec.trials,
        r.spec.values
    );
    let _ = writeln!(s, "support per trial      {}", r.support);
    let _ = writeln!(s, "mean peeled fraction   {:.6}", r.mean_peeled_fraction);
    let _ = writeln!(s, "min peeled fraction    {:.6}", r.min_peeled_fraction);
    let _ = writeln!(
        s,
        "fully peeled trials    {}/{}",
        r.fully_peeled_trials, r.spec.trials
    );
    let _ = writeln!(s, "unresolved positions   {}", r.unresolved_total);
    let _ = writeln!(s, "max abs error          {:e}", r.max_abs_error);
    let _ = writeln!(s, "max rel error (peeled) {:e}", r.max_rel_error_peeled);
    let _ = writeln!(s, "index lost/spurious    {}/{}", r.lost, r.spurious);
    if r.invariants.is_empty() {
        let _ = writeln!(
            s,
            "below the operating point for {}: invariants not checked",
            c.ratio
        );
    }
    for i in &r.invariants {
        let _ = writeln!(s, "{} {}", if i.pass { "PASS" } else { "FAIL" }, i.name);
    }
    s
}

fn parse_config_spec(spec: &str, seed: u64) -> Result<CompressionConfig, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "config `{spec}` is not WIDTH:RATIO or WIDTH:RATIO:THETA"
        ))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(bad());
    }
    let w = width(parts[0].parse().map_err(|_| bad())?)?;
    let r = ratio(parts[1].parse().map_err(|_| bad())?)?;
    let theta = match parts.get(2) {
        Some(t) => t.parse().map_err(|_| bad())?,
        None => min_theta(r),
    };
    Ok(CompressionConfig::new(theta, r, w).with_seed(seed))
}

#[derive(Serialize)]
struct CommReportFile<'a> {
    world_size: usize,
    seed: u64,
    rows: &'a [CommRow],
}

pub fn cmd_commreport(a: &CommreportArgs) -> Result<Outcome, CliError> {
    let mut configs = a
        .configs
        .iter()
        .map(|s| parse_config_spec(s, a.seed))
        .collect::<Result<Vec<_>, _>>()?;
    if a.table {
        for w in [IndexWidth::One, IndexWidth::Four] {
            for (theta, r) in OPERATING_POINTS {
                configs.push(CompressionConfig::new(theta, r, w).with_seed(a.seed));
            }
        }
    }
    if configs.is_empty() {
        return Err(CliError::Usage(
            "commreport needs at least one config or --table".into(),
        ));
    }
    let rows = comm_report(&configs, a.world_size, a.mode.into())?;
    let mut s = format!(
        "{:>6} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9}\n",
        "theta",
        "ratio",
        "width",
        "index",
        "sketch",
        "total",
        "factor",
        "lhc",
        "lhc_fac",
        "measured"
    );
    for r in &rows {
        let _ = writeln!(
            s,
            "{:>6} {:>5} {:>5} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>9}",
            r.theta,
            r.ratio.to_string(),
            r.index_width.bits(),
            r.model.index_bits,
            r.model.sketch_bits,
            r.model.total_bits,
            r.model.factor,
            r.lhc_model.total_bits,
            r.lhc_model.factor,
            if r.matches { "match" } else { "MISMATCH" }
        );
    }
    let failed = rows.iter().any(|r| !r.matches);
    Ok(Outcome {
        stdout: s,
        invariant_failed: failed,
        files: vec![
            ("comm_report.csv", comm_report_csv(&rows).into_bytes()),
            (
                "comm_report.json",
                json(&CommReportFile {
                    world_size: a.world_size,
                    seed: a.seed,
                    rows: &rows,
                }),
            ),
        ],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub model: u64,
    pub data: u64,
    pub sketch: Option<u64>,
}

/// Everything needed to repeat a training run, plus its results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub run: TrainRunConfig,
    pub seeds: Seeds,
    pub corpus_sha256: String,
    pub results: RunMetrics,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Parse {
        path: path.to_owned(),
        message: e.to_string().trim_end().to_owned(),
    }
}

#[derive(Deserialize)]
struct ManifestRun {
    run: TrainRunConfig,
    corpus_sha256: String,
}

/// Reads a TOML run config, or the run section of a JSON manifest after
/// checking that it was produced on the same corpus.
pub fn load_run_config(path: &Path) -> Result<TrainRunConfig, CliError> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: ManifestRun = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
        let sha = Corpus::bundled().sha256();
        if m.corpus_sha256 != sha {
            return Err(parse_error(
                path,
                format!(
                    "manifest corpus {} differs from bundled {sha}",
                    m.corpus_sha256
                ),
            ));
        }
        Ok(m.run)
    } else {
        toml::from_str(&text).map_err(|e| parse_error(path, e))
    }
}

pub fn train(run: &TrainRunConfig, mode: ExecMode) -> Result<Manifest, CliError> {
    run.validate()?;
    let world = World::new(run.world_size, mode).map_err(tagc::Error::from)?;
    let results = run_experiment(run, &world)?;
    Ok(Manifest {
        tool: format!("tagc {}", env!("CARGO_PKG_VERSION")),
        run: run.clone(),
        seeds: Seeds {
            model: run.seed,
            data: run.seed ^ DATA_STREAM,
            sketch: match &run.path {
                GradientPath::Baseline => None,
                GradientPath::Tagc(c) => Some(c.seed),
            },
        },
        corpus_sha256: Corpus::bundled().sha256(),
        results,
    })
}

pub fn cmd_train(a: &TrainArgs) -> Result<Outcome, CliError> {
    let mut run = load_run_config(&a.config)?;
    if let Some(steps) = a.steps {
        run.steps = steps;
    }
    let m = train(&run, a.mode.into())?;
    let r = &m.results;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} parameters, {} on the compressed path",
        r.total_params, r.compressed_params
    );
    for p in &r.val_loss {
        let _ = writeln!(s, "step {:>6}  val {:.6}", p.step, p.loss);
    }
    match &r.status {
        RunStatus::Completed => {
            let _ = writeln!(s, "completed {} steps", r.steps_completed);
        }
        RunStatus::Diverged { step, reason } => {
            let _ = writeln!(s, "diverged at step {step}: {reason}");
        }
    }
    if r.exchange.exchanges > 0 {
        let _ = writeln!(
            s,
            "peeled fraction {:.6}, index collision rate {:.6}",
            r.exchange.peeled_fraction(),
            r.exchange.collision_rate()
        );
    }
    let consistent = r.ledger_consistent();
    let _ = writeln!(
        s,
        "compressed traffic predicted {} bits, ledger {} bits: {}",
        r.predicted_compressed_bits,
        r.measured_compressed_bits,
        if consistent { "match" } else { "MISMATCH" }
    );
    Ok(Outcome {
        stdout: s,
        invariant_failed: !consistent || r.status != RunStatus::Completed,
        files: vec![
            ("loss.csv", r.loss_csv().into_bytes()),
            ("manifest.json", json(&m)),
        ],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    layer: Vec<LayerSpec>,
}

fn load_layers(path: &Path) -> Result<Vec<LayerSpec>, CliError> {
    let text = read(path)?;
    let value: toml::Table = toml::from_str(&text).map_err(|e| parse_error(path, e))?;
    if value.contains_key("layer") {
        let f: LayerFile = toml::from_str(&text).map_err(|e| parse_error(path, e))?;
        Ok(f.layer)
    } else {
        let c: TinyModelConfig = toml::from_str(&text).map_err(|e| parse_error(path, e))?;
        c.validate().map_err(|e| parse_error(path, e))?;
        Ok(c.layer_specs())
    }
}

pub fn cmd_classify(a: &ClassifyArgs) -> Result<Outcome, CliError> {
    let layers = match &a.model {
        Some(p) => load_layers(p)?,
        None => match a.preset {
            Preset::Gpt2Small => TinyModelConfig::gpt2_small().layer_specs(),
            Preset::Tiny => TinyModelConfig::default().layer_specs(),
        },
    };
    let report = classification_report(&layers, a.policy.into(), !a.exclude_out_proj)?;
    Ok(Outcome {
        stdout: classify_text(&report),
        invariant_failed: false,
        files: vec![("classify.json", json(&report))],
    })
}

fn classify_text(r: &ClassificationReport) -> String {
    let mut s = format!("{:<22} {:>12} {:>12}\n", "kind", "params", "compressed");
    for k in &r.per_kind {
        let _ = writeln!(
            s,
            "{:<22} {:>12} {:>12}",
            k.kind.as_str(),
            k.params,
            k.flagged_params
        );
    }
    let _ = writeln!(
        s,
        "{:<22} {:>12} {:>12}",
        "total", r.total_params, r.flagged_params
    );
    let _ = writeln!(s, "compressed share {:.4}", r.flagged_share);
    s
}
