//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use riskboot::export::step_json;
use riskboot::{
    aalen_johansen, break_ties, build_risk_table, calibrate_rates, confidence_band, coverage_study,
    diagnose_conditions, ingest_csv, kaplan_meier, nelson_aalen, one_sample_ks, pointwise_ci,
    precompute_z, size_power_study, two_sample_tests, Adjust, BandConfig, BandType, Cause, Cohort,
    ConfidenceBand, CoverageConfig, CsvSchema, DiagnosticThresholds, Error, MixTarget, Result,
    SizePowerConfig, StepFunction, TestKind, TestResult, Transform, TwoSampleConfig,
};

use crate::output::{json_bytes, write_output, Meta};
use crate::{
    AdjustArg, BandTypeArg, Command, FormatArg, InputArgs, IntervalArgs, KindArg, SchemeArg,
    SimulateCommand, StochasticArgs, TransformArg,
};

impl BandTypeArg {
    fn to_core(self) -> BandType {
        match self {
            BandTypeArg::Hw => BandType::HallWellner,
            BandTypeArg::Ep => BandType::EqualPrecision,
        }
    }

    fn name(self) -> &'static str {
        match self {
            BandTypeArg::Hw => "hw",
            BandTypeArg::Ep => "ep",
        }
    }
}

impl TransformArg {
    fn to_core(self) -> Transform {
        match self {
            TransformArg::Loglog => Transform::LogLog,
            TransformArg::Identity => Transform::Identity,
        }
    }

    fn name(self) -> &'static str {
        match self {
            TransformArg::Loglog => "loglog",
            TransformArg::Identity => "identity",
        }
    }
}

impl KindArg {
    fn to_core(self) -> TestKind {
        match self {
            KindArg::Ks => TestKind::Ks,
            KindArg::Cvm => TestKind::Cvm,
        }
    }

    fn name(self) -> &'static str {
        match self {
            KindArg::Ks => "ks",
            KindArg::Cvm => "cvm",
        }
    }
}

impl AdjustArg {
    fn to_core(self) -> Adjust {
        match self {
            AdjustArg::None => Adjust::None,
            AdjustArg::Count => Adjust::Count,
            AdjustArg::Risk => Adjust::Risk,
        }
    }

    fn name(self) -> &'static str {
        match self {
            AdjustArg::None => "none",
            AdjustArg::Count => "count",
            AdjustArg::Risk => "risk",
        }
    }
}

fn load_cohort(input: &InputArgs) -> Result<Cohort<f64>> {
    let cohort: Cohort<f64> = ingest_csv(&input.input, &CsvSchema::default())?;
    if cohort.event_count() == 0 {
        eprintln!(
            "warning: no events of either cause in {}; estimators are degenerate",
            input.input.display()
        );
    }
    Ok(cohort)
}

fn parse_interval(args: &IntervalArgs) -> Result<(f64, f64)> {
    match args.interval.as_slice() {
        [t1, t2] => Ok((*t1, *t2)),
        _ => Err(Error::Invalid("--interval takes exactly two values".into())),
    }
}

/// Reference step function from a two-column CSV with a header row. Columns
/// named `time`/`value` are used when present, otherwise the first two.
fn load_reference(path: &Path) -> Result<StepFunction<f64>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Invalid(format!("cannot read header: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::Invalid(
            "reference file needs at least two columns".into(),
        ));
    }
    let col = |name: &str, fallback: usize| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .unwrap_or(fallback)
    };
    let (tc, vc) = (col("time", 0), col("value", 1));
    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Invalid(format!("reference file: {e}")))?;
        let parse = |idx: usize| -> Result<f64> {
            record
                .get(idx)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Invalid("reference file: malformed row".into()))
        };
        times.push(parse(tc)?);
        values.push(parse(vc)?);
    }
    if !times.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Invalid(
            "reference file times must be strictly increasing".into(),
        ));
    }
    Ok(StepFunction::new(times, values, 0.0))
}

fn stochastic_meta(meta: &mut Meta, args: &StochasticArgs, seed: u64) {
    meta.push("scheme", args.scheme.name());
    meta.push("reps", args.replicates);
    meta.push("alpha", args.alpha);
    meta.push("seed", seed);
}

fn band_csv(meta: &Meta, band: &ConfidenceBand<f64>) -> Vec<u8> {
    let mut text = meta.csv_header();
    text.push_str("time,estimate,lower,upper\n");
    for k in 0..band.grid.len() {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            band.grid[k], band.estimate[k], band.lower[k], band.upper[k]
        );
    }
    text.into_bytes()
}

fn band_json(meta: &Meta, band: &ConfidenceBand<f64>) -> serde_json::Value {
    serde_json::json!({
        "meta": meta.json(),
        "grid": band.grid,
        "estimate": band.estimate,
        "lower": band.lower,
        "upper": band.upper,
    })
}

fn test_result_json(meta: &Meta, result: &TestResult<f64>) -> serde_json::Value {
    serde_json::json!({
        "meta": meta.json(),
        "statistic": result.statistic,
        "critical_value": result.critical_value,
        "alpha": result.alpha,
        "reject": result.reject,
        "p_value": result.p_value,
    })
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate {
            input,
            out_dir,
            format,
            output,
        } => estimate(input, out_dir, format, output),
        Command::Band {
            input,
            interval,
            stochastic,
            band_type,
            transform,
            format,
            output,
        } => band(
            input, interval, stochastic, band_type, transform, format, output,
        ),
        Command::Ci {
            input,
            stochastic,
            at,
            output,
        } => ci(input, stochastic, at, output),
        Command::Test1 {
            input,
            interval,
            stochastic,
            reference,
            band_type,
            transform,
            output,
        } => test1(
            input, interval, stochastic, reference, band_type, transform, output,
        ),
        Command::Test2 {
            input,
            interval,
            stochastic,
            input2,
            kind,
            adjust,
            output,
        } => test2(input, interval, stochastic, input2, kind, adjust, output),
        Command::Diagnose {
            input,
            scheme,
            output,
        } => diagnose(input, scheme, output),
        Command::Simulate(sim) => simulate(sim),
    }
}

fn estimate(
    input: InputArgs,
    out_dir: PathBuf,
    format: FormatArg,
    output: Option<PathBuf>,
) -> Result<()> {
    let cohort = load_cohort(&input)?;
    let cohort = break_ties(&cohort);
    let rt = build_risk_table(&cohort);
    let tables = [
        ("km", "survival", kaplan_meier(&rt)),
        ("na1", "cum_hazard_1", nelson_aalen(&rt, Cause::One)),
        ("na2", "cum_hazard_2", nelson_aalen(&rt, Cause::Two)),
        ("cif1", "cif_1", aalen_johansen(&rt, Cause::One)),
        ("cif2", "cif_2", aalen_johansen(&rt, Cause::Two)),
    ];

    let mut meta = Meta::new("estimate");
    meta.push("input", input.input.display());
    meta.push("n", cohort.n());

    match format {
        FormatArg::Csv => {
            std::fs::create_dir_all(&out_dir).map_err(|source| Error::Io {
                path: out_dir.display().to_string(),
                source,
            })?;
            for (name, label, step) in &tables {
                let mut text = meta.csv_header();
                text.push_str(&format!("time,{label}\n"));
                for (&t, &v) in step.times().iter().zip(step.values()) {
                    let _ = writeln!(text, "{t},{v}");
                }
                let path = out_dir.join(format!("{name}.csv"));
                write_output(Some(&path), text.as_bytes())?;
            }
            Ok(())
        }
        FormatArg::Json => {
            let mut doc = serde_json::Map::new();
            doc.insert("meta".into(), meta.json());
            for (name, _, step) in &tables {
                doc.insert((*name).into(), step_json(step));
            }
            write_output(
                output.as_ref(),
                &json_bytes(&serde_json::Value::Object(doc)),
            )
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn band(
    input: InputArgs,
    interval: IntervalArgs,
    stochastic: StochasticArgs,
    band_type: BandTypeArg,
    transform: TransformArg,
    format: FormatArg,
    output: Option<PathBuf>,
) -> Result<()> {
    let cohort = load_cohort(&input)?;
    let interval = parse_interval(&interval)?;
    let seed = stochastic.resolve_seed();
    let cfg = BandConfig {
        scheme: stochastic.scheme.to_scheme(),
        band_type: band_type.to_core(),
        transform: transform.to_core(),
        replicates: stochastic.replicates,
        alpha: stochastic.alpha,
        seed,
    };
    let band = confidence_band(&cohort, interval, &cfg)?;

    let mut meta = Meta::new("band");
    meta.push("input", input.input.display());
    meta.push("interval", format!("{} {}", interval.0, interval.1));
    meta.push("type", band_type.name());
    meta.push("transform", transform.name());
    stochastic_meta(&mut meta, &stochastic, seed);
    meta.push("quantile", band.quantile);
    meta.push("area", band.area);

    match format {
        FormatArg::Csv => write_output(output.as_ref(), &band_csv(&meta, &band)),
        FormatArg::Json => {
            let mut doc = band_json(&meta, &band);
            doc["quantile"] = band.quantile.into();
            doc["area"] = band.area.into();
            write_output(output.as_ref(), &json_bytes(&doc))
        }
    }
}

fn ci(
    input: InputArgs,
    stochastic: StochasticArgs,
    at: f64,
    output: Option<PathBuf>,
) -> Result<()> {
    let cohort = load_cohort(&input)?;
    let seed = stochastic.resolve_seed();
    let cfg = BandConfig {
        scheme: stochastic.scheme.to_scheme(),
        band_type: BandType::EqualPrecision,
        transform: Transform::LogLog,
        replicates: stochastic.replicates,
        alpha: stochastic.alpha,
        seed,
    };
    let ci = pointwise_ci(&cohort, at, &cfg)?;

    let mut meta = Meta::new("ci");
    meta.push("input", input.input.display());
    meta.push("at", at);
    stochastic_meta(&mut meta, &stochastic, seed);

    let doc = serde_json::json!({
        "meta": meta.json(),
        "at": at,
        "estimate": ci.estimate[0],
        "lower": ci.lower[0],
        "upper": ci.upper[0],
    });
    write_output(output.as_ref(), &json_bytes(&doc))
}

#[allow(clippy::too_many_arguments)]
fn test1(
    input: InputArgs,
    interval: IntervalArgs,
    stochastic: StochasticArgs,
    reference: PathBuf,
    band_type: BandTypeArg,
    transform: TransformArg,
    output: Option<PathBuf>,
) -> Result<()> {
    let cohort = load_cohort(&input)?;
    let interval = parse_interval(&interval)?;
    let f_ref = load_reference(&reference)?;
    let seed = stochastic.resolve_seed();
    let cfg = BandConfig {
        scheme: stochastic.scheme.to_scheme(),
        band_type: band_type.to_core(),
        transform: transform.to_core(),
        replicates: stochastic.replicates,
        alpha: stochastic.alpha,
        seed,
    };
    let result = one_sample_ks(&cohort, &f_ref, interval, &cfg)?;

    let mut meta = Meta::new("test1");
    meta.push("input", input.input.display());
    meta.push("reference", reference.display());
    meta.push("interval", format!("{} {}", interval.0, interval.1));
    meta.push("type", band_type.name());
    meta.push("transform", transform.name());
    stochastic_meta(&mut meta, &stochastic, seed);

    write_output(
        output.as_ref(),
        &json_bytes(&test_result_json(&meta, &result)),
    )
}

#[allow(clippy::too_many_arguments)]
fn test2(
    input: InputArgs,
    interval: IntervalArgs,
    stochastic: StochasticArgs,
    input2: Option<PathBuf>,
    kind: KindArg,
    adjust: AdjustArg,
    output: Option<PathBuf>,
) -> Result<()> {
    let interval = parse_interval(&interval)?;
    let (cohort1, cohort2) = match &input2 {
        Some(path2) => {
            let c1 = load_cohort(&input)?;
            let c2: Cohort<f64> = ingest_csv(path2, &CsvSchema::default())?;
            (c1, c2)
        }
        None => {
            let all: Cohort<f64> = ingest_csv(&input.input, &CsvSchema::default())?;
            let (c1, c2) = all.split_by_group();
            if c1.is_empty() || c2.is_empty() {
                return Err(Error::Invalid(
                    "single-input two-sample test needs both groups present in the group column"
                        .into(),
                ));
            }
            (c1, c2)
        }
    };

    let seed = stochastic.resolve_seed();
    let cfg = TwoSampleConfig {
        scheme: stochastic.scheme.to_scheme(),
        replicates: stochastic.replicates,
        alpha: stochastic.alpha,
        seed,
        adjust: adjust.to_core(),
    };
    let result = two_sample_tests(
        &cohort1,
        &cohort2,
        interval,
        |_| 1.0,
        &cfg,
        &[kind.to_core()],
    )?
    .pop()
    .unwrap();

    // Echo the resolved adjustment factor.
    let factor = {
        let b1 = break_ties(&cohort1);
        let b2 = break_ties(&cohort2);
        let z1 = precompute_z(&build_risk_table(&b1), &b1);
        let z2 = precompute_z(&build_risk_table(&b2), &b2);
        riskboot::engine::adjust_factor(adjust.to_core(), &z1, &z2, interval.1)?
    };

    let mut meta = Meta::new("test2");
    meta.push("input", input.input.display());
    if let Some(p2) = &input2 {
        meta.push("input2", p2.display());
    }
    meta.push("interval", format!("{} {}", interval.0, interval.1));
    meta.push("kind", kind.name());
    meta.push("adjust", adjust.name());
    meta.push("adjust_factor", factor);
    meta.push("n1", cohort1.n());
    meta.push("n2", cohort2.n());
    stochastic_meta(&mut meta, &stochastic, seed);

    write_output(
        output.as_ref(),
        &json_bytes(&test_result_json(&meta, &result)),
    )
}

fn diagnose(input: InputArgs, scheme: SchemeArg, output: Option<PathBuf>) -> Result<()> {
    let cohort = load_cohort(&input)?;
    let cohort = break_ties(&cohort);
    let rt = build_risk_table(&cohort);
    let report = diagnose_conditions(
        scheme.to_scheme(),
        &rt,
        &cohort,
        &DiagnosticThresholds::default(),
    );

    let mut meta = Meta::new("diagnose");
    meta.push("input", input.input.display());
    meta.push("scheme", scheme.name());
    meta.push("n", cohort.n());

    let doc = serde_json::json!({
        "meta": meta.json(),
        "report": serde_json::to_value(&report).expect("report serialization"),
    });
    write_output(output.as_ref(), &json_bytes(&doc))
}

fn simulate(sim: SimulateCommand) -> Result<()> {
    match sim {
        SimulateCommand::Coverage {
            n_list,
            schemes,
            bands,
            nsim,
            replicates,
            interval,
            alpha,
            seed,
            mix,
            admin_end,
            format,
            output,
        } => {
            let interval = parse_interval(&interval)?;
            let seed = seed.unwrap_or(0);
            let target = MixTarget {
                event1_pct: mix[0],
                event2_pct: mix[1],
                censored_pct: mix[2],
            };
            let rates = calibrate_rates(&target, admin_end, None)?;
            let cfg = CoverageConfig {
                rates,
                admin_end,
                n_list: n_list.clone(),
                schemes: schemes.iter().map(|s| s.to_scheme()).collect(),
                band_types: bands.iter().map(|b| b.to_core()).collect(),
                transform: Transform::LogLog,
                n_sim: nsim,
                replicates,
                interval,
                alpha,
                seed,
            };
            let report = coverage_study(&cfg)?;

            let mut meta = Meta::new("simulate coverage");
            meta.push(
                "n_list",
                n_list
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            meta.push(
                "schemes",
                schemes
                    .iter()
                    .map(|s| s.name())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            meta.push(
                "bands",
                bands.iter().map(|b| b.name()).collect::<Vec<_>>().join(","),
            );
            meta.push("nsim", nsim);
            meta.push("reps", replicates);
            meta.push("interval", format!("{} {}", interval.0, interval.1));
            meta.push("alpha", alpha);
            meta.push("seed", seed);
            meta.push("mix", format!("{},{},{}", mix[0], mix[1], mix[2]));
            meta.push("admin_end", admin_end);
            meta.push(
                "rates",
                format!(
                    "hazard1={} hazard2={} censor={}",
                    rates.hazard1, rates.hazard2, rates.censor_rate
                ),
            );

            match format {
                FormatArg::Csv => {
                    let mut text = meta.csv_header();
                    for row in &report.event_mix {
                        text.push_str(&format!(
                            "# event_mix n={}: type1={} type2={} censored={}\n",
                            row.n, row.event1_pct, row.event2_pct, row.censored_pct
                        ));
                    }
                    text.push_str("n,scheme,band,coverage_pct,mean_area,nsim,failed_runs\n");
                    for cell in &report.cells {
                        let _ = writeln!(
                            text,
                            "{},{},{},{},{},{},{}",
                            cell.n,
                            cell.scheme.name(),
                            cell.band_type.name(),
                            cell.coverage_pct,
                            cell.mean_area,
                            cell.n_sim,
                            cell.failed_runs
                        );
                    }
                    write_output(output.as_ref(), text.as_bytes())
                }
                FormatArg::Json => {
                    let doc = serde_json::json!({
                        "meta": meta.json(),
                        "report": serde_json::to_value(&report).expect("report serialization"),
                    });
                    write_output(output.as_ref(), &json_bytes(&doc))
                }
            }
        }
        SimulateCommand::Power {
            n1,
            n2,
            hazard_scale,
            nsim,
            replicates,
            interval,
            alpha,
            seed,
            scheme,
            adjust,
            mix,
            admin_end,
            format,
            output,
        } => {
            let interval = parse_interval(&interval)?;
            let seed = seed.unwrap_or(0);
            let target = MixTarget {
                event1_pct: mix[0],
                event2_pct: mix[1],
                censored_pct: mix[2],
            };
            let null_rates = calibrate_rates(&target, admin_end, None)?;
            let mut alt_rates = null_rates;
            alt_rates.hazard1 *= hazard_scale;
            let cfg = SizePowerConfig {
                null_rates,
                alt_rates,
                admin_end,
                n1,
                n2,
                kinds: vec![TestKind::Ks, TestKind::Cvm],
                scheme: scheme.to_scheme(),
                adjust: adjust.to_core(),
                n_sim: nsim,
                replicates,
                interval,
                alpha,
                seed,
            };
            let report = size_power_study(&cfg)?;

            let mut meta = Meta::new("simulate power");
            meta.push("n1", n1);
            meta.push("n2", n2);
            meta.push("hazard_scale", hazard_scale);
            meta.push("nsim", nsim);
            meta.push("reps", replicates);
            meta.push("interval", format!("{} {}", interval.0, interval.1));
            meta.push("alpha", alpha);
            meta.push("seed", seed);
            meta.push("scheme", scheme.name());
            meta.push("adjust", adjust.name());

            match format {
                FormatArg::Csv => {
                    let mut text = meta.csv_header();
                    text.push_str("kind,size_pct,power_pct\n");
                    for row in &report.rows {
                        let _ = writeln!(
                            text,
                            "{},{},{}",
                            row.kind.name(),
                            row.size_pct,
                            row.power_pct
                        );
                    }
                    write_output(output.as_ref(), text.as_bytes())
                }
                FormatArg::Json => {
                    let doc = serde_json::json!({
                        "meta": meta.json(),
                        "report": serde_json::to_value(&report).expect("report serialization"),
                    });
                    write_output(output.as_ref(), &json_bytes(&doc))
                }
            }
        }
    }
}
