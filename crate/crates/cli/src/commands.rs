use std::path::{Path, PathBuf};
use std::time::Instant;

use rpn3d::detector::{infer, prepare_samples, train, HeadParams, TrainReport};
use rpn3d::experiment::evaluate_split;
use rpn3d::geometry::Detection;
use rpn3d::metrics::{evaluate, format_table, EvalResult};
use rpn3d::phantom::{generate, plan_dataset};
use rpn3d::prior::{fit_prior, PriorModel};
use rpn3d::volume::{write_volume, VolumeHeader};
use rpn3d::{Landmark, NUM_LANDMARKS};
use serde::{Deserialize, Serialize};

use crate::cli::{AblateArgs, Command, DetectArgs, EvalArgs, FitPriorArgs, SynthArgs, TrainArgs};
use crate::config::RunConfig;
use crate::dataset::{
    ground_truths, load_features, load_volume, prepare_output_dir, read_text, to_json, write_text, Manifest, Split,
};
use crate::error::{CliError, Result};

pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::FitPrior(a) => fit_prior_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Detect(a) => detect(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

/// `--config` when given, else the configuration the dataset was made with.
fn base_config(config: Option<&Path>, manifest: Option<&Manifest>) -> Result<RunConfig> {
    match (config, manifest) {
        (Some(p), _) => RunConfig::load(Some(p)),
        (None, Some(m)) => Ok(m.config.clone()),
        (None, None) => Ok(RunConfig::default()),
    }
}

/// `params.json` → `params.config.json`.
fn config_copy_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.config.json"))
}

fn load_params(path: &Path) -> Result<HeadParams> {
    let text = read_text(path, "head parameters", "train them with `rpn3d train --data <dir> --params <file>`")?;
    Ok(HeadParams::from_json(&text)?)
}

fn load_prior(path: &Path) -> Result<PriorModel> {
    let text = read_text(path, "prior", "fit one with `rpn3d fit-prior --data <dir> --out <file>`")?;
    Ok(PriorModel::from_json(&text)?)
}

fn synth(a: &SynthArgs) -> Result<String> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(d) = &a.dims {
        cfg.dims = match d.as_slice() {
            [e] => [*e; 3],
            [x, y, z] => [*x, *y, *z],
            _ => return Err(CliError::Config("--dims takes one or three values".into())),
        };
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.test.is_some() {
        cfg.test = a.test;
    }
    cfg.validate()?;
    prepare_output_dir(&a.out, a.force)?;

    let test = cfg.test.unwrap_or_else(|| rpn3d::phantom::default_test_count(cfg.n)).min(cfg.n);
    let plan = plan_dataset(cfg.n, (cfg.n - test, test), cfg.seed)?;
    for spec in plan.train.iter().chain(&plan.test) {
        let p = generate(&cfg.template, cfg.dims, spec.seed)?;
        write_volume(&a.out, &spec.name, &p.volume, &VolumeHeader::new(&p.volume, &p.gt, Some(spec.seed)))?;
    }
    let manifest = Manifest { seed: cfg.seed, dims: cfg.dims, train: plan.train, test: plan.test, config: cfg };
    write_text(&Manifest::path(&a.out), &to_json(&manifest)?)?;
    Ok(format!(
        "wrote {} volumes ({} train, {} test) to {}",
        manifest.train.len() + manifest.test.len(),
        manifest.train.len(),
        manifest.test.len(),
        a.out.display()
    ))
}

fn fit_prior_cmd(a: &FitPriorArgs) -> Result<String> {
    let manifest = Manifest::load(&a.data)?;
    let cfg = base_config(a.config.config.as_deref(), Some(&manifest))?;
    let gts = ground_truths(&a.data, &manifest.names(Split::Train))?;
    let points: Vec<_> = gts.iter().map(|g| g.landmarks).collect();
    let prior = fit_prior(&points, &cfg.graph)?;
    let mut text = prior.to_json()?;
    text.push('\n');
    write_text(&a.out, &text)?;
    Ok(format!("fitted {} ratios on {} volumes → {}", prior.params.len(), points.len(), a.out.display()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainRecord {
    pub config: RunConfig,
    pub volumes: usize,
    pub report: TrainReport,
}

fn train_config(a: &TrainArgs, manifest: &Manifest) -> Result<RunConfig> {
    let mut cfg = base_config(a.config.config.as_deref(), Some(manifest))?;
    if let Some(t) = a.iou_balance {
        cfg.train.iou_balance = t.on();
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_on(data: &Path, manifest: &Manifest, cfg: &RunConfig) -> Result<(HeadParams, TrainReport)> {
    let names = manifest.names(Split::Train);
    let volumes = names.iter().map(|n| load_volume(data, n)).collect::<Result<Vec<_>>>()?;
    let samples = prepare_samples(&volumes, &cfg.extractor(), &cfg.anchors, &cfg.train.matching)?;
    drop(volumes);
    Ok(train(&samples, &cfg.anchors, &cfg.train)?)
}

fn train_cmd(a: &TrainArgs) -> Result<String> {
    let manifest = Manifest::load(&a.data)?;
    let cfg = train_config(a, &manifest)?;
    let (params, report) = train_on(&a.data, &manifest, &cfg)?;
    write_text(&a.params, &params.to_json()?)?;
    write_text(&config_copy_path(&a.params), &cfg.to_json()?)?;
    let first = report.cls_loss_window(50, false);
    let last = report.cls_loss_window(50, true);
    if let Some(path) = &a.report {
        let record = TrainRecord { config: cfg, volumes: manifest.train.len(), report };
        write_text(path, &to_json(&record)?)?;
    }
    Ok(format!("trained heads written to {} (cls loss {first:.3} → {last:.3})", a.params.display()))
}

/// One entry of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub class: Landmark,
    #[serde(rename = "box")]
    pub bbox: [f64; 6],
    pub score: f64,
    pub landmark_mm: [f64; 3],
}

impl DetectionRecord {
    pub fn new(d: &Detection, spacing_mm: f64) -> Self {
        DetectionRecord {
            class: d.class,
            bbox: d.bbox.to_array(),
            score: d.score,
            landmark_mm: d.center().map(|c| c * spacing_mm),
        }
    }
}

fn detect(a: &DetectArgs) -> Result<String> {
    let manifest = Manifest::load(&a.data)?;
    let mut cfg = base_config(a.config.config.as_deref(), Some(&manifest))?;
    if let Some(t) = a.prior_filter {
        cfg.infer.prior_filter = t.on();
    }
    cfg.validate()?;
    let params = load_params(&a.params)?;
    let prior = load_prior(&a.prior)?;
    prepare_output_dir(&a.out, a.force)?;
    let extractor = cfg.extractor();
    let names = manifest.names(a.split);
    for name in &names {
        let (v, _) = load_volume(&a.data, name)?;
        let inf = infer(&v, &extractor, &params, &prior, &cfg.infer)?;
        let records: Vec<DetectionRecord> = inf.detections.iter().map(|d| DetectionRecord::new(d, v.spacing_mm)).collect();
        write_text(&a.out.join(format!("{name}.detections.json")), &to_json(&records)?)?;
    }
    write_text(&a.out.join("config.json"), &cfg.to_json()?)?;
    Ok(format!("wrote detections for {} volumes to {}", names.len(), a.out.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub split: Split,
    pub oracle: bool,
    pub result: EvalResult,
    /// Left/right eye swaps among the final selections.
    pub swap_rate: Option<f64>,
    /// The same for the best-score selection over the same candidates.
    pub score_only_swap_rate: Option<f64>,
    /// Volumes where some landmark had no candidate.
    pub failures: usize,
    pub table: String,
}

fn oracle_predictions(gts: &[rpn3d::GroundTruth]) -> Vec<Vec<Detection>> {
    gts.iter()
        .map(|gt| {
            Landmark::ALL
                .iter()
                .map(|&l| {
                    let mut class_scores = [0.0; rpn3d::NUM_CLASSES];
                    class_scores[l.class_id()] = 1.0;
                    Detection { bbox: gt.bbox(l), class: l, score: 1.0, class_scores, anchor_index: l.index() }
                })
                .collect()
        })
        .collect()
}

fn eval(a: &EvalArgs) -> Result<String> {
    let manifest = Manifest::load(&a.data)?;
    let mut cfg = base_config(a.config.config.as_deref(), Some(&manifest))?;
    if let Some(t) = a.prior_filter {
        cfg.infer.prior_filter = t.on();
    }
    cfg.validate()?;
    let names = manifest.names(a.split);
    if names.is_empty() {
        return Err(CliError::Config(format!("the {:?} split is empty", a.split)));
    }

    let report = if a.oracle {
        let gts = ground_truths(&a.data, &names)?;
        let spacing = rpn3d::volume::read_header(&a.data, names[0])?.spacing_mm[0];
        let anns: Vec<_> = gts.iter().map(|g| g.annotations()).collect();
        let result = evaluate(&oracle_predictions(&gts), &anns, spacing)?;
        EvalReport {
            table: format_table(&[("oracle".to_string(), &result)]),
            config: cfg,
            split: a.split,
            oracle: true,
            result,
            swap_rate: None,
            score_only_swap_rate: None,
            failures: 0,
        }
    } else {
        let params = load_params(a.params.as_deref().expect("required by clap"))?;
        let prior = load_prior(a.prior.as_deref().expect("required by clap"))?;
        let start = Instant::now();
        let (features, spacing) = load_features(&a.data, &names, &cfg.extractor())?;
        let extract_ms = start.elapsed().as_secs_f64() * 1000.0 / names.len() as f64;
        let (mut result, _, swap, plain_swap, failures) = evaluate_split(&features, &params, &prior, &cfg.infer, spacing)?;
        result.time_ms = result.time_ms.map(|t| t + extract_ms);
        let label = method_label(cfg.train.iou_balance, cfg.infer.prior_filter);
        EvalReport {
            table: format_table(&[(label, &result)]),
            config: cfg,
            split: a.split,
            oracle: false,
            result,
            swap_rate: Some(swap),
            score_only_swap_rate: Some(plain_swap),
            failures,
        }
    };
    if let Some(path) = &a.report {
        write_text(path, &to_json(&report)?)?;
    }
    Ok(report.table)
}

pub fn method_label(iou_balance: bool, prior: bool) -> String {
    match (iou_balance, prior) {
        (false, false) => "RPN".into(),
        (true, false) => "RPN + IoU-balance".into(),
        (false, true) => "RPN + graph prior".into(),
        (true, true) => "IG-RPN".into(),
    }
}

pub fn parse_grid(spec: &str) -> Result<Vec<(bool, bool)>> {
    if spec == "full" {
        return Ok(vec![(false, false), (true, false), (false, true), (true, true)]);
    }
    let toggle = |s: &str| match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(CliError::Config(format!("grid entries use on/off, got `{s}`"))),
    };
    let mut cells = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (ib, pf) = item
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("grid entry `{item}` is not iou_balance:prior_filter")))?;
        let cell = (toggle(ib)?, toggle(pf)?);
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    if cells.is_empty() {
        return Err(CliError::Config("empty ablation grid".into()));
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub iou_balance: bool,
    pub prior_filter: bool,
    pub result: EvalResult,
    pub swap_rate: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: RunConfig,
    pub rows: Vec<AblationRow>,
    pub table: String,
}

fn ablate(a: &AblateArgs) -> Result<String> {
    let manifest = Manifest::load(&a.data)?;
    let mut cfg = base_config(a.config.config.as_deref(), Some(&manifest))?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let grid = parse_grid(&a.grid)?;
    prepare_output_dir(&a.out, a.force)?;

    let points: Vec<[[f64; 3]; NUM_LANDMARKS]> =
        ground_truths(&a.data, &manifest.names(Split::Train))?.iter().map(|g| g.landmarks).collect();
    let prior = fit_prior(&points, &cfg.graph)?;
    let mut prior_text = prior.to_json()?;
    prior_text.push('\n');
    write_text(&a.out.join("prior.json"), &prior_text)?;

    let names = manifest.names(Split::Test);
    let start = Instant::now();
    let (test, spacing) = load_features(&a.data, &names, &cfg.extractor())?;
    let extract_ms = start.elapsed().as_secs_f64() * 1000.0 / names.len().max(1) as f64;

    let mut rows = Vec::new();
    for ib in [false, true] {
        if !grid.iter().any(|(g, _)| *g == ib) {
            continue;
        }
        let mut run_cfg = cfg.clone();
        run_cfg.train.iou_balance = ib;
        let (params, report) = train_on(&a.data, &manifest, &run_cfg)?;
        let dir = a.out.join(if ib { "iou_balance_on" } else { "iou_balance_off" });
        write_text(&dir.join("params.json"), &params.to_json()?)?;
        write_text(&dir.join("train_report.json"), &to_json(&TrainRecord { config: run_cfg.clone(), volumes: manifest.train.len(), report })?)?;
        for pf in [false, true] {
            if !grid.contains(&(ib, pf)) {
                continue;
            }
            let mut infer_cfg = run_cfg.infer.clone();
            infer_cfg.prior_filter = pf;
            let (mut result, _, swap, _, failures) = evaluate_split(&test, &params, &prior, &infer_cfg, spacing)?;
            result.time_ms = result.time_ms.map(|t| t + extract_ms);
            rows.push(AblationRow { method: method_label(ib, pf), iou_balance: ib, prior_filter: pf, result, swap_rate: swap, failures });
        }
    }
    rows.sort_by_key(|r| grid.iter().position(|c| *c == (r.iou_balance, r.prior_filter)));
    let table = format_table(&rows.iter().map(|r| (r.method.clone(), &r.result)).collect::<Vec<_>>());
    let report = AblationReport { config: cfg, rows, table: table.clone() };
    write_text(&a.out.join("ablation.json"), &to_json(&report)?)?;
    write_text(&a.out.join("ablation.txt"), &table)?;
    write_text(&a.out.join("config.json"), &report.config.to_json()?)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("full").unwrap().len(), 4);
        assert_eq!(parse_grid("on:on, off:off,on:on").unwrap(), vec![(true, true), (false, false)]);
        assert!(parse_grid("on").is_err());
        assert!(parse_grid("yes:no").is_err());
        assert!(parse_grid(" , ").is_err());
    }

    #[test]
    fn config_copy_sits_next_to_params() {
        assert_eq!(config_copy_path(Path::new("out/heads.json")), PathBuf::from("out/heads.config.json"));
        assert_eq!(config_copy_path(Path::new("heads")), PathBuf::from("heads.config.json"));
    }

    #[test]
    fn labels_cover_the_grid() {
        let labels: Vec<String> = parse_grid("full").unwrap().into_iter().map(|(a, b)| method_label(a, b)).collect();
        assert_eq!(labels, ["RPN", "RPN + IoU-balance", "RPN + graph prior", "IG-RPN"]);
    }
}
