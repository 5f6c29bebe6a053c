use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dualconv::bench::{bench_layer, bench_model};
use dualconv::conv::{ConvKind, ConvSpec};
use dualconv::cost::{human_units, model_cost};
use dualconv::report;
use dualconv::tensor::Shape4;
use dualconv::train::{end_to_end_gradcheck, train, SyntheticTask, TrainConfig};
use dualconv::verify;
use dualconv::zoo::{
    apply_policy, build, emit_config, parse_config, tables, ModelConfig, PolicyRule,
    ReplacementPolicy,
};

/// Convolution-operator engine: analytic cost model, operator verification,
/// gradient checks, micro-benchmarks and toy training.
#[derive(Parser)]
#[command(name = "dualconv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer FLOP/parameter report for a model, optionally after a
    /// replacement policy; `--paper-tables` audits every embedded
    /// published row.
    Analyze(AnalyzeArgs),
    /// Randomized operator sweeps: fast paths vs the direct oracle,
    /// dual decomposition, degeneracies, cross-channel communication,
    /// linearity, and the MAC-counter cross-check.
    Verify(VerifyArgs),
    /// Gradient checks against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Wall-clock layer / model benchmarks (single-threaded).
    Bench(BenchArgs),
    /// Train a small dual-convolution network on the pinned separable
    /// synthetic task.
    TrainDemo(TrainDemoArgs),
    /// Print a built-in model as config text.
    EmitConfig(EmitConfigArgs),
}

#[derive(Args)]
struct PolicyArgs {
    /// Rewrite eligible layers to dual convolution.
    #[arg(long, conflicts_with_all = ["group", "het"])]
    dual: bool,
    /// Rewrite eligible layers to group convolution.
    #[arg(long, conflicts_with = "het")]
    group: bool,
    /// Rewrite eligible layers to heterogeneous convolution.
    #[arg(long)]
    het: bool,
    /// Group count G for --dual / --group.
    #[arg(long, value_name = "G")]
    g: Option<usize>,
    /// Part ratio P for --het.
    #[arg(long, value_name = "P")]
    p: Option<usize>,
    /// Replacement rule: std3x3, std3x3-s1, ds-merge, ir-merge
    /// (defaults to the model's published rule).
    #[arg(long)]
    rule: Option<String>,
}

impl PolicyArgs {
    fn policy(&self, model: &str, variant: &str) -> Result<Option<ReplacementPolicy>> {
        let kind = match (self.dual, self.group, self.het) {
            (false, false, false) => return Ok(None),
            (true, _, _) => ConvKind::Dual,
            (_, true, _) => ConvKind::Group,
            (_, _, true) => ConvKind::Het,
        };
        let alpha = match kind {
            ConvKind::Het => self.p.context("--het requires --p")?,
            _ => self.g.context("--dual/--group require --g")?,
        };
        let rule = match &self.rule {
            Some(id) => PolicyRule::from_id(id)?,
            None => ReplacementPolicy::default_rule(model, variant),
        };
        Ok(Some(ReplacementPolicy::new(kind, alpha, rule)?))
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Built-in model name (vgg16, resnet50, mobilenet_v1, mobilenet_v2,
    /// yolov3_backbone).
    model: Option<String>,
    /// Dataset geometry variant (cifar10, cifar100, imagenet, voc-416, ...).
    #[arg(long, default_value = "cifar")]
    variant: String,
    /// Analyze a config file instead of a built-in model.
    #[arg(long, value_name = "PATH", conflicts_with = "model")]
    config: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Audit every embedded published table row and print PASS/FAIL.
    #[arg(long)]
    paper_tables: bool,
    /// With --paper-tables: exit nonzero if any gated row fails.
    #[arg(long)]
    strict: bool,
    /// Write the CSV report here (a .json mirror is written next to it).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cases in the randomized sweep.
    #[arg(long, default_value_t = 200)]
    cases: usize,
    /// Run the sweep in double precision (tolerance 1e-12 instead of 1e-5).
    #[arg(long = "f64")]
    use_f64: bool,
    /// Restrict the equivalence sweep to these kinds
    /// (comma-separated: std,dsc,group,het,dual).
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    /// With --kinds dual: also print the G=1 degeneracy identity check.
    #[arg(long)]
    g: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// tiny-dual, tiny-mixed, pointwise, or layers (per-kind layer sweep).
    #[arg(long, default_value = "tiny-dual")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark a built-in model end to end instead of the layer set.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "cifar")]
    variant: String,
    /// Benchmark a config file end to end.
    #[arg(long, value_name = "PATH", conflicts_with = "model")]
    config: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input spatial extent for the layer comparison set.
    #[arg(long, default_value_t = 28)]
    d: usize,
    /// Channels for the layer comparison set.
    #[arg(long, default_value_t = 256)]
    channels: usize,
    /// Write CSV here (a .json mirror is written next to it).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainDemoArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Write the trajectory CSV here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Held-out accuracy the run must reach.
    #[arg(long, default_value_t = 0.95)]
    threshold: f64,
}

#[derive(Args)]
struct EmitConfigArgs {
    model: String,
    variant: String,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Bench(args) => cmd_bench(args),
        Command::TrainDemo(args) => cmd_train_demo(args),
        Command::EmitConfig(args) => cmd_emit_config(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_model(model: &Option<String>, variant: &str, config: &Option<PathBuf>) -> Result<ModelConfig> {
    match (model, config) {
        (Some(name), None) => Ok(build(name, variant)?),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Ok(parse_config(&text)?)
        }
        (None, None) => bail!("pass a model name or --config PATH"),
        (Some(_), Some(_)) => unreachable!("clap forbids both"),
    }
}

fn write_reports(out: &Option<PathBuf>, csv: &str, json: &str) -> Result<()> {
    if let Some(path) = out {
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
        let json_path = path.with_extension("json");
        std::fs::write(&json_path, json)
            .with_context(|| format!("writing {}", json_path.display()))?;
        println!("wrote {} and {}", path.display(), json_path.display());
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<bool> {
    if args.paper_tables {
        return cmd_paper_tables(&args);
    }
    let model_name = args.model.clone();
    let mut config = load_model(&args.model, &args.variant, &args.config)?;
    let policy = match &model_name {
        Some(name) => args.policy.policy(name, &args.variant)?,
        None => args.policy.policy("", "")?,
    };
    if let Some(p) = &policy {
        config = apply_policy(&config, p)?;
    }
    let cost = model_cost(&config)?;
    println!("model: {}", cost.model);
    println!("{:<18} {:>16} {:>14}", "layer", "flops(MAC)", "params");
    for row in &cost.rows {
        if row.flops == 0 && row.params == 0 {
            continue;
        }
        println!("{:<18} {:>16} {:>14}", row.name, row.flops, row.params);
    }
    println!(
        "total: {} FLOPs / {} params ({} / {})",
        cost.total.flops,
        cost.total.params,
        human_units(cost.total.flops),
        human_units(cost.total.params)
    );

    // Compare against any embedded published row this (model, variant,
    // policy) reconstructs.
    let mut all_pass = true;
    if let Some(name) = &model_name {
        let wanted_policy = policy.map(|p| (p.kind, p.alpha));
        for row in tables::ROWS {
            let row_policy = row.policy.map(|(k, a, _)| (k, a));
            if row.model == *name
                && (row.variant == args.variant
                    || (args.variant == "cifar" && row.variant.starts_with("cifar")))
                && row_policy == wanted_policy
            {
                let cmp = tables::evaluate_row(row)?;
                let status = if cmp.pass { "PASS" } else { "FAIL" };
                println!(
                    "published row [{}] {}: {} / {} -> {} (dev {:.3}% / {:.3}%)",
                    row.table,
                    row.label,
                    human_units(cmp.computed.flops),
                    human_units(cmp.computed.params),
                    status,
                    cmp.flops_deviation * 100.0,
                    cmp.params_deviation * 100.0
                );
                if row.gated && !cmp.pass {
                    all_pass = false;
                }
            }
        }
    }
    write_reports(&args.out, &report::cost_csv(&cost), &report::cost_json(&cost)?)?;
    Ok(all_pass)
}

fn cmd_paper_tables(args: &AnalyzeArgs) -> Result<bool> {
    let rows = tables::evaluate_all()?;
    let mut gated_failures = 0usize;
    println!(
        "{:<6} {:<20} {:>11} {:>11} {:>11} {:>11} {:>9} {:>9}  status",
        "table", "row", "flops", "published", "params", "published", "dev_f%", "dev_p%"
    );
    for c in &rows {
        let status = if !c.row.gated {
            "reference"
        } else if c.pass {
            "PASS"
        } else {
            gated_failures += 1;
            "FAIL"
        };
        println!(
            "{:<6} {:<20} {:>11} {:>11} {:>11} {:>11} {:>9.3} {:>9.3}  {}",
            c.row.table,
            c.row.label,
            human_units(c.computed.flops),
            human_units(c.row.flops as u128),
            human_units(c.computed.params),
            human_units(c.row.params as u128),
            c.flops_deviation * 100.0,
            c.params_deviation * 100.0,
            status
        );
    }
    let gated = rows.iter().filter(|c| c.row.gated).count();
    println!(
        "{} gated rows, {} failures ({} reference-only rows reported)",
        gated,
        gated_failures,
        rows.len() - gated
    );
    write_reports(&args.out, &report::comparison_csv(&rows), &report::comparison_json(&rows)?)?;
    if args.strict && gated_failures > 0 {
        return Ok(false);
    }
    Ok(true)
}

fn parse_kinds(tokens: &[String]) -> Result<Vec<ConvKind>> {
    if tokens.is_empty() {
        return Ok(verify::ALL_KINDS.to_vec());
    }
    tokens
        .iter()
        .map(|t| match t.as_str() {
            "std" => Ok(ConvKind::Standard),
            "dsc" => Ok(ConvKind::DepthwiseSeparable),
            "group" => Ok(ConvKind::Group),
            "het" => Ok(ConvKind::Het),
            "dual" => Ok(ConvKind::Dual),
            other => bail!("unknown kind '{other}'"),
        })
        .collect()
}

fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let kinds = parse_kinds(&args.kinds)?;
    let tol = if args.use_f64 { 1e-12 } else { 1e-5 };
    let mut ok = true;

    let eq = if args.use_f64 {
        equivalence_filtered::<f64>(args.seed, args.cases, tol, &kinds)?
    } else {
        equivalence_filtered::<f32>(args.seed, args.cases, tol, &kinds)?
    };
    println!(
        "operator equivalence ({} cases, {}): max abs diff {:.3e} (tol {:.0e}) {}",
        eq.cases,
        if args.use_f64 { "f64" } else { "f32" },
        eq.max_abs_diff,
        eq.tolerance,
        pass_str(eq.pass)
    );
    ok &= eq.pass;

    let dec = verify::decomposition_sweep::<f64>(args.seed, (args.cases / 4).max(10), 1e-12)?;
    println!(
        "dual decomposition ({} cases): max abs diff {:.3e} {}",
        dec.cases,
        dec.max_abs_diff,
        pass_str(dec.pass)
    );
    ok &= dec.pass;

    let deg = verify::degeneracy_sweep::<f64>(args.seed, (args.cases / 4).max(10), 1e-12)?;
    println!(
        "degeneracy identities G=1/P=1 ({} cases): max abs diff {:.3e} {}",
        deg.cases,
        deg.max_abs_diff,
        pass_str(deg.pass)
    );
    ok &= deg.pass;

    let lin = verify::linearity_sweep(args.seed, (args.cases / 4).max(10), 1e-10)?;
    println!(
        "linearity ({} cases): max abs diff {:.3e} {}",
        lin.cases,
        lin.max_abs_diff,
        pass_str(lin.pass)
    );
    ok &= lin.pass;

    let com = verify::communication_sweep::<f64>(args.seed, (args.cases / 8).max(5))?;
    let com_pass = com.dual_always_responds && com.group_never_responds;
    println!(
        "cross-channel communication ({} cases): dual responds {}, group isolated {} {}",
        com.cases,
        com.dual_always_responds,
        com.group_never_responds,
        pass_str(com_pass)
    );
    ok &= com_pass;

    let counted = verify::counting_sweep(args.seed, (args.cases / 2).max(20))?;
    println!("MAC counter vs cost model: {counted} specs exact PASS");

    Ok(ok)
}

fn equivalence_filtered<E: dualconv::Element>(
    seed: u64,
    cases: usize,
    tol: f64,
    kinds: &[ConvKind],
) -> Result<verify::SweepReport> {
    use dualconv::conv::{forward, reference_direct, FilterBank};
    use dualconv::tensor::{max_abs_diff, Tensor};
    let mut worst = 0.0f64;
    let list = verify::sweep_cases_of(seed, cases, kinds);
    for case in &list {
        let input = Tensor::<E>::seeded_random(case.input_shape, case.seed)?;
        let bank = FilterBank::<E>::seeded(&case.spec, case.seed ^ 0xabcd)?;
        let fast = forward(&input, &bank, &case.spec)?;
        let oracle = reference_direct(&input, &bank, &case.spec)?;
        worst = worst.max(max_abs_diff(&fast, &oracle)?);
    }
    Ok(verify::SweepReport { cases: list.len(), max_abs_diff: worst, tolerance: tol, pass: worst <= tol })
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn gradcheck_config(name: &str) -> Result<(ModelConfig, f64)> {
    let text = match name {
        "pointwise" => {
            "model pointwise input 1 3 4 4\n\
             conv c1 kind=std M=3 N=2 K=1 s=1 p=0 act=none\n\
             pool p avg k=4 s=4\n\
             fc out in=2 out=2\n"
        }
        "tiny-dual" => {
            "model tiny-dual input 1 2 8 8\n\
             conv c1 kind=dual M=2 N=8 K=3 s=1 p=1 G=2\n\
             conv c2 kind=dual M=8 N=8 K=3 s=1 p=1 G=4\n\
             pool p avg k=8 s=8\n\
             fc out in=8 out=2 bias\n"
        }
        "tiny-mixed" => {
            "model tiny-mixed input 1 4 8 8\n\
             conv c1 kind=dual M=4 N=8 K=3 s=1 p=1 G=2\n\
             conv c2 kind=group M=8 N=8 K=3 s=1 p=1 G=4\n\
             conv c3 kind=dsc M=8 N=6 K=3 s=2 p=1\n\
             pool p avg k=4 s=4\n\
             fc out in=6 out=3 bias\n"
        }
        other => bail!("unknown gradcheck model '{other}' (pointwise, tiny-dual, tiny-mixed, layers)"),
    };
    let tol = if name == "pointwise" { 1e-7 } else { 1e-6 };
    Ok((parse_config(text)?, tol))
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool> {
    if args.model == "layers" {
        let worst = verify::gradient_sweep(args.seed, 1)?;
        let pass = worst <= 1e-6;
        println!("layer-level gradient sweep: max rel error {worst:.3e} (tol 1e-6) {}", pass_str(pass));
        return Ok(pass);
    }
    let (config, tol) = gradcheck_config(&args.model)?;
    let worst = end_to_end_gradcheck(&config, args.seed)?;
    let pass = worst <= tol;
    println!(
        "end-to-end gradcheck [{}]: max rel error {worst:.3e} (tol {tol:.0e}) {}",
        args.model,
        pass_str(pass)
    );
    Ok(pass)
}

fn cmd_bench(args: BenchArgs) -> Result<bool> {
    if args.model.is_some() || args.config.is_some() {
        let model_name = args.model.clone();
        let mut config = load_model(&args.model, &args.variant, &args.config)?;
        if let Some(p) = match &model_name {
            Some(name) => args.policy.policy(name, &args.variant)?,
            None => args.policy.policy("", "")?,
        } {
            config = apply_policy(&config, &p)?;
        }
        let (layers, total) = bench_model(&config, args.warmup, args.runs, args.seed)?;
        println!("{:<44} {:>12} {:>12} {:>12}", "layer", "median_ns", "mad_ns", "MAC/s");
        for r in &layers {
            println!(
                "{:<44} {:>12} {:>12} {:>12.3e}",
                r.id, r.median_ns, r.mad_ns, r.macs_per_sec
            );
        }
        println!(
            "{:<44} {:>12} {:>12} {:>12.3e}",
            total.id, total.median_ns, total.mad_ns, total.macs_per_sec
        );
        let mut all = layers;
        all.push(total);
        write_reports(&args.out, &report::bench_csv(&all), &report::bench_json(&all)?)?;
        return Ok(true);
    }

    // Layer comparison set: standard vs dual at increasing G, the speed
    // comparison the operator design is about.
    let c = args.channels;
    let shape = Shape4::new(1, c, args.d, args.d)?;
    let mut results = Vec::new();
    let std_spec = ConvSpec::standard(c, c, 3, 1, 1)?;
    results.push(bench_layer(&std_spec, shape, args.warmup, args.runs, args.seed)?);
    for g in [4usize, 8, 16, 32] {
        if c % g != 0 {
            continue;
        }
        let spec = ConvSpec::dual(c, c, 3, 1, 1, g)?;
        results.push(bench_layer(&spec, shape, args.warmup, args.runs, args.seed)?);
    }
    println!("{:<40} {:>12} {:>12} {:>14} {:>12}", "spec", "median_ns", "mad_ns", "MACs", "MAC/s");
    for r in &results {
        println!(
            "{:<40} {:>12} {:>12} {:>14} {:>12.3e}",
            r.id, r.median_ns, r.mad_ns, r.macs, r.macs_per_sec
        );
    }
    let std_median = results[0].median_ns;
    let mut ok = true;
    for r in &results[1..] {
        let g = r.id.contains("G=4") || r.id.contains("G=8");
        if g {
            let faster = r.median_ns < std_median;
            println!(
                "{} vs standard: {} ({} vs {} ns)",
                r.id,
                if faster { "faster PASS" } else { "slower FAIL" },
                r.median_ns,
                std_median
            );
            ok &= faster;
        }
    }
    if let (Some(g16), Some(g32)) = (
        results.iter().find(|r| r.id.contains("G=16")),
        results.iter().find(|r| r.id.contains("G=32")),
    ) {
        // Reported, not asserted: larger G means more memory traffic per
        // MAC, so G=32 is not always faster than G=16.
        println!(
            "G=16 vs G=32 ordering: {} ({} vs {} ns)",
            if g32.median_ns < g16.median_ns { "G=32 faster" } else { "G=32 not faster" },
            g16.median_ns,
            g32.median_ns
        );
    }
    write_reports(&args.out, &report::bench_csv(&results), &report::bench_json(&results)?)?;
    Ok(ok)
}

fn cmd_train_demo(args: TrainDemoArgs) -> Result<bool> {
    let text = "model demo-dual input 1 2 8 8\n\
                conv c1 kind=dual M=2 N=8 K=3 s=1 p=1 G=2\n\
                conv c2 kind=dual M=8 N=8 K=3 s=1 p=1 G=4\n\
                pool p avg k=2 s=2\n\
                fc out in=128 out=2 bias\n";
    let config = parse_config(text)?;
    let task = SyntheticTask::pinned();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        lr_decay_factor: 0.1,
        decay_every: 50,
        weight_decay: 5e-4,
        epochs: args.epochs,
        batch: 16,
        seed: args.seed,
        freeze_pointwise: false,
    };
    let report_out = train::<f64>(&config, &task, &cfg)?;
    for e in &report_out.trajectory {
        println!(
            "epoch {:>3}  lr {:<8} loss {:<10.6} test acc {:.3}",
            e.epoch, e.lr, e.train_loss, e.test_accuracy
        );
    }
    let pass = report_out.final_accuracy >= args.threshold;
    println!(
        "final held-out accuracy: {:.3} (threshold {:.2}) {}",
        report_out.final_accuracy,
        args.threshold,
        pass_str(pass)
    );
    if let Some(path) = &args.out {
        std::fs::write(path, report::trajectory_csv(&report_out.trajectory))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(pass)
}

fn cmd_emit_config(args: EmitConfigArgs) -> Result<bool> {
    let config = build(&args.model, &args.variant)?;
    let text = emit_config(&config);
    // Emitted text must re-parse to the identical structure.
    let back = parse_config(&text)?;
    if back != config {
        bail!("emitted config failed the round-trip check");
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(true)
}
