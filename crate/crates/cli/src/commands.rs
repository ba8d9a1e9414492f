use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use clap::ValueEnum;
use ordshap::games::{generate_synthetic_dataset, parse_toy_items, Nonlinearity};
use ordshap::gateway::{grouped_positions, EndpointConfig, GatewayStats, Transport};
use ordshap::metrics::{inclusion_exclusion_auc, insertion_deletion_auc, pi_permutation_curve, MaskMode};
use ordshap::{
    exact_attribution, least_squares_estimate, sampling_estimate, AttributionResult, EvalCurve, ExactReport, Gateway,
    GatewayConfig, LeastSquaresConfig, MaskingPolicy, MetricConfig, ModelGame, OrderedGame, PositionIndex,
    SamplingConfig, SeededSampler, SequenceSample, SyntheticModelConfig, SyntheticTokenModel, Token, ToyOrderGame,
};
use serde::{Deserialize, Serialize};

use crate::manifest::{write_file, write_json, Recorder, RunManifest};
use crate::{
    CliError, EvaluateArgs, ExactArgs, ExplainArgs, GameKind, Method, Metric, ModelArgs, NonlinearityArg, SampleArgs,
    SynthArgs, TransportArg,
};

/// On-disk sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFile {
    pub tokens: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Token>,
}

impl SampleFile {
    fn into_sequence(self) -> SequenceSample {
        let mut s = SequenceSample::new(self.tokens);
        if let Some(g) = self.groups {
            s = s.with_groups(g);
        }
        if let Some(b) = self.baseline {
            s = s.with_policy(MaskingPolicy::SingleBaseline { baseline_token: b });
        }
        s
    }
}

#[derive(Serialize)]
struct AttributionFile<'a> {
    #[serde(flatten)]
    result: &'a AttributionResult,
    tokens: &'a [String],
    manifest: RunManifest,
}

#[derive(Serialize)]
struct ExactFile<'a> {
    #[serde(flatten)]
    report: &'a ExactReport,
    tokens: &'a [String],
    manifest: RunManifest,
}

#[derive(Serialize)]
struct EvaluateSummary {
    samples: usize,
    auc: BTreeMap<String, f64>,
    manifest: RunManifest,
}

struct Prepared {
    game: Box<dyn OrderedGame>,
    labels: Vec<String>,
    index: PositionIndex,
    gateway: Option<Arc<Gateway>>,
}

impl Prepared {
    fn stats(&self) -> GatewayStats {
        self.gateway.as_ref().map(|g| g.stats()).unwrap_or_default()
    }
}

fn nonlinearity(n: NonlinearityArg) -> Nonlinearity {
    match n {
        NonlinearityArg::Linear => Nonlinearity::Linear,
        NonlinearityArg::Sigmoid => Nonlinearity::Sigmoid,
    }
}

fn token_label(t: &Token) -> String {
    match t {
        Token::Text(s) => s.clone(),
        Token::Vector(v) => format!("<vector of {}>", v.len()),
    }
}

fn load_sample(rec: &mut Recorder, args: &SampleArgs) -> Result<Option<SampleFile>, CliError> {
    let mut sample: Option<SampleFile> = match &args.sample {
        Some(path) => Some(rec.read_json(path)?),
        None => None,
    };
    if let Some(s) = sample.as_mut() {
        if args.groups.is_some() {
            s.groups.clone_from(&args.groups);
        }
        if let Some(b) = &args.baseline {
            s.baseline = Some(Token::text(b.as_str()));
        }
    }
    Ok(sample)
}

fn synthetic_model(
    rec: &mut Recorder,
    args: &ModelArgs,
    length: Option<usize>,
) -> Result<SyntheticTokenModel, CliError> {
    let config = match &args.model_config {
        Some(path) => rec.read_json(path)?,
        None => {
            let mut c = SyntheticModelConfig::default_with(nonlinearity(args.nonlinearity));
            if let Some(n) = length {
                c.length = n;
            }
            c
        }
    };
    Ok(SyntheticTokenModel::new(config)?)
}

fn gateway_config(args: &ModelArgs) -> GatewayConfig {
    GatewayConfig {
        cache: !args.no_cache,
        jobs: args.jobs,
        retries: args.retries,
        ..GatewayConfig::default()
    }
}

fn remote_gateway(args: &ModelArgs) -> Result<Arc<Gateway>, CliError> {
    let address = args.endpoint.clone().filter(|e| !e.trim().is_empty()).ok_or_else(|| {
        CliError::Usage("no model to query: pass --endpoint, set ORDSHAP_ENDPOINT, or choose a built-in --game".into())
    })?;
    let endpoint = EndpointConfig {
        transport: match args.transport {
            TransportArg::Pipe => Transport::PipeJsonl,
            TransportArg::Http => Transport::HttpJson,
        },
        address,
        batch_limit: args.batch_limit,
        timeout: Duration::from_millis(args.timeout_ms),
        class_count: args.classes,
    }
    .connect()?;
    Ok(Arc::new(Gateway::new(endpoint, gateway_config(args))?))
}

fn prepare(
    rec: &mut Recorder,
    model: &ModelArgs,
    sample_args: &SampleArgs,
    class_index: usize,
    seed: u64,
) -> Result<Prepared, CliError> {
    let sample = load_sample(rec, sample_args)?;
    if let Some(GameKind::Toy) = model.game {
        let game = match &sample {
            None => ToyOrderGame::reference_sample(),
            Some(s) => {
                if s.baseline.is_some() {
                    return Err(CliError::Usage(
                        "the toy game deletes features, a baseline does not apply".into(),
                    ));
                }
                let words = s
                    .tokens
                    .iter()
                    .map(|t| match t {
                        Token::Text(w) => Ok(w.as_str()),
                        Token::Vector(_) => Err(CliError::Usage("toy items must be text tokens".into())),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ToyOrderGame::new(parse_toy_items(&words)?)?
            }
        };
        let groups = sample
            .as_ref()
            .and_then(|s| s.groups.clone())
            .or_else(|| sample_args.groups.clone());
        let index = PositionIndex::for_sample(game.players(), groups.as_deref())?;
        return Ok(Prepared {
            labels: game.items().iter().map(|i| i.to_string()).collect(),
            game: Box::new(game),
            index,
            gateway: None,
        });
    }

    let (gateway, sequence) = match model.game {
        Some(GameKind::Synthetic) => {
            let synth = synthetic_model(rec, model, sample.as_ref().map(|s| s.tokens.len()))?;
            let sequence = match sample {
                Some(s) => s.into_sequence(),
                None => {
                    let words = generate_synthetic_dataset(&mut SeededSampler::new(seed), 1, &synth).remove(0);
                    let mut s = SampleFile {
                        tokens: words.iter().map(|w| Token::text(w.as_str())).collect(),
                        groups: sample_args.groups.clone(),
                        baseline: None,
                    };
                    s.baseline = sample_args.baseline.as_deref().map(Token::text);
                    s.into_sequence()
                }
            };
            (Arc::new(Gateway::in_process(synth, gateway_config(model))?), sequence)
        }
        _ => {
            let gateway = remote_gateway(model)?;
            let sequence = sample
                .ok_or_else(|| CliError::Usage("--sample is required when querying a model endpoint".into()))?
                .into_sequence();
            (gateway, sequence)
        }
    };
    let index = grouped_positions(&sequence)?;
    let labels = sequence.tokens.iter().map(token_label).collect();
    let game = ModelGame::new(gateway.clone(), sequence, class_index)?;
    Ok(Prepared {
        game: Box::new(game),
        labels,
        index,
        gateway: Some(gateway),
    })
}

fn fmt_cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn attribution_csv(result: &AttributionResult, labels: &[String]) -> String {
    let mut out = String::from("feature,token,vi,pi");
    if result.gamma.is_some() {
        for p in &result.meta.positions {
            let _ = write!(out, ",gamma_{p}");
        }
    }
    out.push('\n');
    for i in 0..result.features() {
        let _ = write!(
            out,
            "{},{},{},{}",
            i + 1,
            csv_field(&labels[i]),
            result.vi[i],
            result.pi[i]
        );
        if let Some(g) = &result.gamma {
            for cell in &g[i] {
                let _ = write!(out, ",{}", fmt_cell(*cell));
            }
        }
        out.push('\n');
    }
    out
}

fn print_table(labels: &[String], vi: &[f64], pi: &[f64]) {
    println!("{:>7}  {:<12} {:>12} {:>12}", "feature", "token", "vi", "pi");
    for i in 0..vi.len() {
        println!("{:>7}  {:<12} {:>12.6} {:>12.6}", i + 1, labels[i], vi[i], pi[i]);
    }
}

pub fn explain(args: &ExplainArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("explain", args, Some(args.seed));
    let p = prepare(&mut rec, &args.model, &args.sample, args.class_index, args.seed)?;
    let n = p.game.players();
    let mut result = match args.method {
        Method::Exact => exact_attribution(p.game.as_ref(), &p.index)?,
        Method::Sampling => {
            let cfg = SamplingConfig {
                k: args.k,
                l: args.l,
                seed: args.seed,
            };
            sampling_estimate(p.game.as_ref(), &cfg, &p.index)?
        }
        Method::Ls => {
            if args.eliminated_feature == 0 || args.eliminated_feature > n {
                return Err(CliError::Usage(format!(
                    "--eliminated-feature must be between 1 and {n}, got {}",
                    args.eliminated_feature
                )));
            }
            let cfg = LeastSquaresConfig {
                eliminated_feature: args.eliminated_feature - 1,
                ridge: args.ridge,
                ..LeastSquaresConfig::new(args.k, args.l, args.seed)
            };
            least_squares_estimate(p.game.as_ref(), &cfg, &p.index)?
        }
    };
    if !args.emit_gamma && args.method != Method::Exact {
        result.gamma = None;
    }
    let manifest = rec.finish(p.stats());
    write_json(
        &args.out,
        "attribution.json",
        &AttributionFile {
            result: &result,
            tokens: &p.labels,
            manifest,
        },
    )?;
    write_file(
        &args.out,
        "attribution.csv",
        attribution_csv(&result, &p.labels).as_bytes(),
    )?;
    print_table(&p.labels, &result.vi, &result.pi);
    Ok(())
}

pub fn exact(args: &ExactArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("exact", args, None);
    let p = prepare(&mut rec, &args.model, &args.sample, args.class_index, 0)?;
    let report = ExactReport::compute(p.game.as_ref(), &p.index)?;
    let manifest = rec.finish(p.stats());
    write_json(
        &args.out,
        "exact.json",
        &ExactFile {
            report: &report,
            tokens: &p.labels,
            manifest,
        },
    )?;

    let mut csv = String::from("feature,token,vi,pi,shapley_identity,shapley_averaged,sb");
    for label in report.matrix.index.column_labels() {
        let _ = write!(csv, ",gamma_{label}");
    }
    csv.push('\n');
    for i in 0..report.vi.len() {
        let _ = write!(
            csv,
            "{},{},{},{},{},{},{}",
            i + 1,
            csv_field(&p.labels[i]),
            report.vi[i],
            report.pi[i],
            report.shapley_identity[i],
            report.shapley_averaged[i],
            report.sb[i]
        );
        for g in &report.matrix.gamma[i] {
            let _ = write!(csv, ",{g}");
        }
        csv.push('\n');
    }
    write_file(&args.out, "exact.csv", csv.as_bytes())?;
    print_table(&p.labels, &report.vi, &report.pi);
    Ok(())
}

fn metric_name(m: Metric) -> String {
    m.to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default()
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("evaluate", args, Some(args.seed));
    let samples: Vec<SampleFile> = rec.read_json(&args.samples)?;
    let raw: serde_json::Value = rec.read_json(&args.attributions)?;
    let attributions: Vec<AttributionResult> = if raw.is_array() {
        serde_json::from_value(raw)
    } else {
        serde_json::from_value(raw).map(|a| vec![a])
    }
    .map_err(|source| CliError::Parse {
        path: args.attributions.clone(),
        source,
    })?;
    if samples.is_empty() {
        return Err(CliError::Usage("the sample file is empty".into()));
    }
    if samples.len() != attributions.len() {
        return Err(CliError::Usage(format!(
            "{} samples but {} attributions",
            samples.len(),
            attributions.len()
        )));
    }
    for (k, (s, a)) in samples.iter().zip(&attributions).enumerate() {
        if s.tokens.len() != a.features() {
            return Err(CliError::Usage(format!(
                "sample {} has {} tokens but its attribution has {} features",
                k + 1,
                s.tokens.len(),
                a.features()
            )));
        }
    }

    let gateway = match args.model.game {
        Some(GameKind::Toy) => {
            return Err(CliError::Usage(
                "metrics need a sequence model: use --game synthetic or a model endpoint".into(),
            ))
        }
        Some(GameKind::Synthetic) => {
            let synth = synthetic_model(&mut rec, &args.model, Some(samples[0].tokens.len()))?;
            Arc::new(Gateway::in_process(synth, gateway_config(&args.model))?)
        }
        None => remote_gateway(&args.model)?,
    };
    let cfg = MetricConfig {
        permutations_per_k: args.permutations,
        permute: !args.no_permute,
        seed: args.seed,
        ..MetricConfig::default()
    };
    cfg.validate()?;

    let sequences: Vec<SequenceSample> = samples.into_iter().map(SampleFile::into_sequence).collect();
    let vi: Vec<Vec<f64>> = attributions.iter().map(|a| a.vi.clone()).collect();
    let mut metrics = if args.metric.is_empty() {
        Metric::value_variants().to_vec()
    } else {
        args.metric.clone()
    };
    metrics.sort();
    metrics.dedup();

    let mut auc = BTreeMap::new();
    for metric in metrics {
        let curve = match metric {
            Metric::PiCurve => {
                let mut total = vec![0.0; cfg.k_grid.len()];
                for (s, a) in sequences.iter().zip(&attributions) {
                    let c = pi_permutation_curve(&gateway, s, &a.pi, &cfg)?;
                    for (t, v) in total.iter_mut().zip(c.scores) {
                        *t += v;
                    }
                }
                let count = sequences.len() as f64;
                EvalCurve::new(cfg.k_grid.clone(), total.into_iter().map(|t| t / count).collect())?
            }
            Metric::Inc => inclusion_exclusion_auc(&gateway, &sequences, &vi, MaskMode::Inclusion, &cfg)?,
            Metric::Exc => inclusion_exclusion_auc(&gateway, &sequences, &vi, MaskMode::Exclusion, &cfg)?,
            Metric::Ins => insertion_deletion_auc(&gateway, &sequences, &vi, MaskMode::Inclusion, &cfg)?,
            Metric::Del => insertion_deletion_auc(&gateway, &sequences, &vi, MaskMode::Exclusion, &cfg)?,
        };
        let name = metric_name(metric);
        write_file(&args.out, &format!("{name}.csv"), curve.to_csv().as_bytes())?;
        println!("{name:<9} auc {:.6}", curve.auc);
        auc.insert(name, curve.auc);
    }
    let summary = EvaluateSummary {
        samples: sequences.len(),
        auc,
        manifest: rec.finish(gateway.stats()),
    };
    write_json(&args.out, "summary.json", &summary)?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let rec = Recorder::start("synth", args, Some(args.seed));
    let config = SyntheticModelConfig {
        length: args.length,
        seed: args.seed,
        ..SyntheticModelConfig::default_with(nonlinearity(args.nonlinearity))
    };
    let model = SyntheticTokenModel::new(config.clone())?;
    let dataset: Vec<SampleFile> = generate_synthetic_dataset(&mut SeededSampler::new(args.seed), args.count, &model)
        .into_iter()
        .map(|words| SampleFile {
            tokens: words.into_iter().map(Token::Text).collect(),
            groups: None,
            baseline: None,
        })
        .collect();
    write_json(&args.out, "dataset.json", &dataset)?;
    write_json(&args.out, "model.json", &config)?;
    write_json(&args.out, "manifest.json", &rec.finish(GatewayStats::default()))?;
    println!(
        "{} sequences of length {} over {} tokens",
        dataset.len(),
        args.length,
        config.tokens.len()
    );
    Ok(())
}
