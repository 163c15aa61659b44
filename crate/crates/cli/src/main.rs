use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankiv::datamodel::{load_dataset, write_dataset, write_sessions, Dataset, SchemaMap};
use rankiv::estimator::{aggregate_effect, estimate, fit_items, Classification, FitResult, ItemFit};
use rankiv::prepare::{aggregate_sessions, sample_one_per_request, slice_by_item, top_items};
use rankiv::report::{
    fits_csv, format_number, forest_svg, grouped_bars_svg, render_table, Bar, ForestRow,
};
use rankiv::simulator::{simulate, SimConfig};
use rankiv::specs::{builtin_spec, parse_spec, Level, ModelSpec};
use rankiv::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "rankiv", version, about = "Position effects from ranking experiments")]
struct Cli {
    /// Overrides the seed of the config (simulate) or of row sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON with simulator settings and an optional `schema_map` object.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for written artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// What to print on stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Simulate,
    /// Sample, slice or aggregate a dataset.
    Prepare(PrepareArgs),
    /// Fit one or more specifications.
    Estimate(EstimateArgs),
    /// Per-item first-stage forest plot.
    Diagnose(DiagnoseArgs),
    /// Grouped bar chart and system-level effect from per-item fits.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[arg(long)]
    data: PathBuf,
    /// Keep one random row per request.
    #[arg(long)]
    sample: bool,
    /// Keep only this item's rows.
    #[arg(long)]
    item: Option<u64>,
    /// Aggregate to one row per request.
    #[arg(long)]
    sessions: bool,
    #[arg(long, default_value_t = 4)]
    top_cut: u32,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Built-in name (spec1..spec7, specA1, specA2) or path to a JSON spec. Repeatable.
    #[arg(long = "spec", required = true)]
    specs: Vec<String>,
    /// Fit on the given item's slice. Repeatable.
    #[arg(long = "item")]
    items: Vec<u64>,
    /// Fit on the slices of the `n` most frequent items.
    #[arg(long)]
    top_n: Option<usize>,
    /// Top-spot cut for session-level specs.
    #[arg(long, default_value_t = 4)]
    top_cut: u32,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 30)]
    top_n: usize,
    #[arg(long = "spec", default_value = "spec2")]
    spec: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// JSON arrays of per-item fits written by `estimate --format json`. Repeatable.
    #[arg(long = "fits", required = true)]
    fits: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    k1: u32,
    #[arg(long, default_value_t = 2)]
    k2: u32,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io { path, source: e })
}

fn to_json<T: serde::Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Config file split into simulator settings and the schema map.
fn load_config(path: Option<&Path>) -> Result<(Option<SimConfig>, SchemaMap)> {
    let Some(path) = path else {
        return Ok((None, SchemaMap::default()));
    };
    let parse = |e: serde_json::Error| Error::Parse(format!("{}: {e}", path.display()));
    let mut value: serde_json::Value = serde_json::from_str(&read(path)?).map_err(parse)?;
    let object = value
        .as_object_mut()
        .ok_or_else(|| Error::Parse(format!("{}: expected a JSON object", path.display())))?;
    let schema = match object.remove("schema_map") {
        Some(v) => serde_json::from_value(v).map_err(parse)?,
        None => SchemaMap::default(),
    };
    let sim = if object.is_empty() {
        None
    } else {
        Some(serde_json::from_value(value).map_err(parse)?)
    };
    Ok((sim, schema))
}

fn resolve_spec(arg: &str) -> Result<ModelSpec> {
    if let Some(s) = builtin_spec(arg) {
        return Ok(s);
    }
    let path = Path::new(arg);
    if path.exists() {
        return parse_spec(&read(path)?);
    }
    Err(Error::InvalidSpec(format!(
        "`{arg}` is neither a built-in spec nor a file"
    )))
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    format: Option<Format>,
    schema: SchemaMap,
    sim: Option<SimConfig>,
}

fn cmd_simulate(ctx: &Ctx) -> Result<String> {
    let cfg = SimConfig {
        seed: ctx.seed,
        ..ctx.sim.clone().unwrap_or_default()
    };
    let (ds, truth) = simulate(&cfg)?;
    ensure_dir(&ctx.out)?;
    write_dataset(&ds, ctx.out.join("dataset.csv"))?;
    write(&ctx.out, "truth.json", &to_json(&truth))?;
    Ok(format!(
        "simulated {} rows over {} requests (seed {}); clipped probabilities {:.4}%\n",
        ds.len(),
        ds.n_requests(),
        cfg.seed,
        100.0 * truth.clip_rate
    ))
}

fn cmd_prepare(ctx: &Ctx, args: &PrepareArgs) -> Result<String> {
    let mut ds = load_dataset(&args.data, &ctx.schema)?;
    if let Some(item) = args.item {
        ds = slice_by_item(&ds, item)?;
    }
    if args.sample {
        ds = sample_one_per_request(&ds, ctx.seed);
    }
    ensure_dir(&ctx.out)?;
    let provenance = if args.sessions {
        let s = aggregate_sessions(&ds, args.top_cut);
        write_sessions(&s, ctx.out.join("sessions.csv"))?;
        s.provenance
    } else {
        write_dataset(&ds, ctx.out.join("prepared.csv"))?;
        ds.provenance().clone()
    };
    Ok(format!(
        "{} (dropped {} invalid, {} duplicate rows)\n",
        provenance.lineage, provenance.dropped_rows, provenance.duplicate_rows
    ))
}

fn warn(fit: &FitResult, context: &str) {
    for w in &fit.warnings {
        eprintln!("warning: {context}{w}");
    }
}

fn fit_whole(ds: &Dataset, spec: &ModelSpec, top_cut: u32) -> Result<FitResult> {
    match spec.level {
        Level::Edge => estimate(ds, spec),
        Level::Session => estimate(&aggregate_sessions(ds, top_cut), spec),
    }
}

fn cmd_estimate(ctx: &Ctx, args: &EstimateArgs) -> Result<String> {
    let specs: Vec<ModelSpec> = args.specs.iter().map(|s| resolve_spec(s)).collect::<Result<_>>()?;
    let ds = load_dataset(&args.data, &ctx.schema)?;
    let format = ctx.format.unwrap_or(Format::Text);

    if args.items.is_empty() && args.top_n.is_none() {
        let fits: Vec<FitResult> = specs
            .iter()
            .map(|s| fit_whole(&ds, s, args.top_cut))
            .collect::<Result<_>>()?;
        for f in &fits {
            warn(f, &format!("{}: ", f.spec));
        }
        let refs: Vec<&FitResult> = fits.iter().collect();
        let table = render_table(&refs);
        let json = to_json(&fits);
        write(&ctx.out, "table.txt", &table)?;
        write(&ctx.out, "fits.json", &json)?;
        return Ok(match format {
            Format::Json => json,
            Format::Csv => fits_csv(&refs),
            Format::Text | Format::Svg => table,
        });
    }

    // Per-item fits use one row per request so that observations are independent.
    let sampled = sample_one_per_request(&ds, ctx.seed);
    let mut items = args.items.clone();
    if let Some(n) = args.top_n {
        items.extend(top_items(&sampled, n));
    }
    items.sort_unstable();
    items.dedup();
    let mut all: Vec<ItemFit> = Vec::new();
    let mut text = String::new();
    let mut failures = Vec::new();
    for spec in &specs {
        if spec.level == Level::Session {
            return Err(Error::InvalidSpec(format!(
                "{}: per-item fits need an edge-level spec",
                spec.name
            )));
        }
        for (item_id, fit) in fit_items(&sampled, &items, spec) {
            match fit {
                Ok(fit) => {
                    warn(&fit, &format!("{} item {item_id}: ", spec.name));
                    all.push(ItemFit { item_id, fit });
                }
                Err(e) if e.is_input_error() => return Err(e),
                Err(e) => {
                    eprintln!("error: {} item {item_id}: {e}", spec.name);
                    failures.push(e);
                }
            }
        }
    }
    if all.is_empty() {
        return Err(failures.into_iter().next().unwrap_or(Error::EmptyInput));
    }
    for item in &items {
        let fits: Vec<&FitResult> = all
            .iter()
            .filter(|f| f.item_id == *item)
            .map(|f| &f.fit)
            .collect();
        if !fits.is_empty() {
            text.push_str(&format!("item {item}\n"));
            text.push_str(&render_table(&fits));
            text.push('\n');
        }
    }
    let json = to_json(&all);
    write(&ctx.out, "item_fits.json", &json)?;
    write(&ctx.out, "item_tables.txt", &text)?;
    Ok(match format {
        Format::Json => json,
        Format::Csv => fits_csv(&all.iter().map(|f| &f.fit).collect::<Vec<_>>()),
        Format::Text | Format::Svg => text,
    })
}

fn cmd_diagnose(ctx: &Ctx, args: &DiagnoseArgs) -> Result<String> {
    let spec = resolve_spec(&args.spec)?;
    let ds = load_dataset(&args.data, &ctx.schema)?;
    let sampled = sample_one_per_request(&ds, ctx.seed);
    let items = top_items(&sampled, args.top_n);
    let mut rows = Vec::new();
    let mut csv = String::from("item,coef,se,class\n");
    for (item_id, fit) in fit_items(&sampled, &items, &spec) {
        let fit = match fit {
            Ok(f) => f,
            Err(e) if e.is_input_error() => return Err(e),
            Err(e) => {
                eprintln!("error: item {item_id}: {e}");
                continue;
            }
        };
        let Some(eq) = fit.first_stage.as_ref().and_then(|r| r.equations.first()) else {
            return Err(Error::InvalidSpec(format!(
                "{}: diagnostics need an IV spec",
                spec.name
            )));
        };
        let class = eq.classification.unwrap_or(Classification::Null);
        csv.push_str(&format!(
            "{item_id},{},{},{}\n",
            eq.coefficients[0],
            eq.std_errors[0],
            class.as_str()
        ));
        rows.push((item_id, ForestRow {
            label: format!("item {item_id}"),
            estimate: eq.coefficients[0],
            ci_low: eq.ci_low,
            ci_high: eq.ci_high,
            class,
        }));
    }
    // Most frequent item on top, as ranked by `top_items`.
    rows.sort_by_key(|(id, _)| items.iter().position(|i| i == id));
    let rows: Vec<ForestRow> = rows.into_iter().map(|(_, r)| r).collect();
    let svg = forest_svg(
        "Treatment effect on position",
        "first-stage coefficient of the arm (95% CI)",
        &rows,
    );
    write(&ctx.out, "first_stage.csv", &csv)?;
    write(&ctx.out, "forest.svg", &svg)?;
    let count = |c: Classification| rows.iter().filter(|r| r.class == c).count();
    let summary = format!(
        "{} items: {} negative, {} null, {} positive\n",
        rows.len(),
        count(Classification::Negative),
        count(Classification::Null),
        count(Classification::Positive)
    );
    Ok(match ctx.format.unwrap_or(Format::Text) {
        Format::Csv => csv,
        Format::Svg => svg,
        Format::Json | Format::Text => summary,
    })
}

fn cmd_report(ctx: &Ctx, args: &ReportArgs) -> Result<String> {
    let mut bars = Vec::new();
    let mut csv = String::from("item,spec,coef,se\n");
    let mut summary = String::new();
    let mut by_spec: Vec<(String, Vec<ItemFit>)> = Vec::new();
    for path in &args.fits {
        let fits: Vec<ItemFit> = serde_json::from_str(&read(path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        for f in fits {
            match by_spec.iter_mut().find(|(s, _)| *s == f.fit.spec) {
                Some((_, v)) => v.push(f),
                None => by_spec.push((f.fit.spec.clone(), vec![f])),
            }
        }
    }
    if by_spec.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut items: Vec<u64> = by_spec
        .iter()
        .flat_map(|(_, v)| v.iter().map(|f| f.item_id))
        .collect();
    items.sort_unstable();
    items.dedup();
    for item in &items {
        for (spec, fits) in &by_spec {
            if let Some(f) = fits.iter().find(|f| f.item_id == *item) {
                let coef = f.fit.coefficient("position")?;
                let se = f.fit.std_error("position")?;
                csv.push_str(&format!("{item},{spec},{coef},{se}\n"));
                bars.push(Bar {
                    group: format!("item {item}"),
                    series: spec.clone(),
                    value: coef,
                });
            }
        }
    }
    for (spec, fits) in &by_spec {
        let e = aggregate_effect(fits, args.k1, args.k2)?;
        let se = e.se.map_or_else(|| "n/a".to_owned(), format_number);
        summary.push_str(&format!(
            "{spec}: tau_hat({}, {}) = {} (SE {se}) over {} items\n",
            e.k1,
            e.k2,
            format_number(e.tau_hat),
            e.n_items
        ));
    }
    let svg = grouped_bars_svg("Position coefficient by item", "position coefficient", &bars);
    write(&ctx.out, "effects.csv", &csv)?;
    write(&ctx.out, "effects.svg", &svg)?;
    write(&ctx.out, "summary.txt", &summary)?;
    Ok(match ctx.format.unwrap_or(Format::Text) {
        Format::Csv => csv,
        Format::Svg => svg,
        Format::Json | Format::Text => summary,
    })
}

fn run(cli: &Cli) -> Result<String> {
    let (sim, schema) = load_config(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(0),
        out: cli.out.clone(),
        format: cli.format,
        schema,
        sim,
    };
    match &cli.command {
        Command::Simulate => {
            let ctx = Ctx {
                seed: cli.seed.unwrap_or_else(|| ctx.sim.as_ref().map_or(0, |c| c.seed)),
                ..ctx
            };
            cmd_simulate(&ctx)
        }
        Command::Prepare(a) => cmd_prepare(&ctx, a),
        Command::Estimate(a) => cmd_estimate(&ctx, a),
        Command::Diagnose(a) => cmd_diagnose(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
