use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use rwloss::analysis::{self, PROP_TOL_PER_PIXEL};
use rwloss::loss::{self, LossKind, Target};
use rwloss::metrics;
use rwloss::rwg::{self, ElementType, GridFile};
use rwloss::rwmaps::MapSpec;
use rwloss::trainer::{self, LossChoice, RunConfig};
use rwloss::{one_hot, Geometry, LabelGrid, LogitField};

/// Loss-side gradients must match finite differences to this relative error.
const LOSS_GRAD_TOL: f64 = 1e-6;
/// End-to-end (network parameter) gradient tolerance.
const NET_GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const NET_FD_STEP: f64 = 1e-5;
const CDF_STEPS: usize = 100;

#[derive(Parser)]
#[command(name = "rwloss", version, about = "Region-wise loss toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a region-wise map from a label file.
    Maps(MapsArgs),
    /// Gradient-sign analysis.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Check the binary-case equivalences on random instances.
    Verify(VerifyArgs),
    /// Per-class Dice and Hausdorff distance between two label files.
    Metrics(MetricsArgs),
    /// Train the toy network from a config file.
    Train(TrainArgs),
    /// Convergence CDF over run summaries.
    Cdf(CdfArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MapKind {
    Ac,
    Boundary,
    Rrw,
    Hd,
    Cao,
}

#[derive(Args)]
struct MapsArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum)]
    kind: MapKind,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Sweep the probability simplex for a fixed penalty vector.
    Simplex(SimplexArgs),
    /// Count negative gradient components per pixel.
    Negcount(NegcountArgs),
}

#[derive(Args)]
struct SimplexArgs {
    #[arg(long, allow_hyphen_values = true, value_parser = parse_csv_f64)]
    z: CsvVec,
    #[arg(long, default_value_t = analysis::DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NegcountKind {
    Ac,
    Boundary,
    Rrw,
    Hd,
}

#[derive(Args)]
struct NegcountArgs {
    #[arg(long)]
    labels: PathBuf,
    /// RWG field of logits with one channel per class.
    #[arg(long)]
    logits: PathBuf,
    #[arg(long, value_enum)]
    kind: NegcountKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Proposition number 1 to 5, or `all`.
    #[arg(long, value_parser = parse_prop)]
    prop: PropSel,
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Voxel spacing in mm, one value per axis; overrides the files.
    #[arg(long, value_parser = parse_csv_f64)]
    spacing: Option<CsvVec>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct CdfArgs {
    /// Glob matching run summary CSVs.
    #[arg(long)]
    runs: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// A training loss name, `rw2`, or `net` for the end-to-end check.
    #[arg(long)]
    loss: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Debug)]
struct CsvVec(Vec<f64>);

fn parse_csv_f64(s: &str) -> Result<CsvVec, String> {
    let v = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite number"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CsvVec(v))
}

#[derive(Clone, Debug)]
struct PropSel(Vec<u8>);

fn parse_prop(s: &str) -> Result<PropSel, String> {
    if s == "all" {
        return Ok(PropSel((1..=5).collect()));
    }
    match s.parse::<u8>() {
        Ok(p @ 1..=5) => Ok(PropSel(vec![p])),
        _ => Err(format!("expected 1..5 or `all`, got `{s}`")),
    }
}

/// Prints the resolved configuration as `# key = value` lines.
struct Header(Vec<(String, String)>);

impl Header {
    fn new(command: &str) -> Self {
        Header(vec![("command".into(), command.into())])
    }

    fn set(mut self, key: &str, value: impl Display) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    fn print(&self) {
        for (k, v) in &self.0 {
            println!("# {k} = {v}");
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("-".into(), |p| p.display().to_string())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    rwg::write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    CheckFailed,
}

fn cmd_maps(a: MapsArgs) -> anyhow::Result<Status> {
    let spec = match a.kind {
        MapKind::Ac => MapSpec::Ac,
        MapKind::Boundary => MapSpec::Boundary,
        MapKind::Rrw => MapSpec::Rrw,
        MapKind::Hd => MapSpec::Hd {
            alpha: a.alpha.unwrap_or(MapSpec::DEFAULT_HD_ALPHA),
        },
        MapKind::Cao => match (a.alpha, a.beta) {
            (Some(alpha), Some(beta)) => MapSpec::Cao { alpha, beta },
            _ => bail!("cao maps need both --alpha and --beta"),
        },
    };
    let mut header = Header::new("maps")
        .set("labels", a.labels.display())
        .set("kind", spec.name());
    match spec {
        MapSpec::Hd { alpha } => header = header.set("alpha", alpha),
        MapSpec::Cao { alpha, beta } => header = header.set("alpha", alpha).set("beta", beta),
        _ => {}
    }
    header
        .set("out", a.out.display())
        .set("seed", "none")
        .print();

    let grid = rwg::read_labels(&a.labels, None)
        .with_context(|| format!("reading {}", a.labels.display()))?;
    let map = spec.build(&grid)?;
    rwg::write_field(&a.out, &map, ElementType::F64)?;
    println!(
        "wrote {} map: dims {:?}, {} channels",
        spec.name(),
        map.dims(),
        map.channels()
    );
    Ok(Status::Ok)
}

fn cmd_simplex(a: SimplexArgs) -> anyhow::Result<Status> {
    let z = a.z.0;
    Header::new("analyze simplex")
        .set("z", fmt_vec(&z))
        .set("resolution", a.resolution)
        .set("out", opt_path(&a.out))
        .set("seed", "none")
        .print();
    if z.iter().all(|&v| v == z[0]) {
        warn!("uniform map yields zero gradients");
        println!("warning: uniform map yields zero gradients");
    }
    let sweep = analysis::simplex_sweep(&z, a.resolution)?;
    println!("interior points: {}", sweep.interior_count());
    println!(
        "points with >=2 negative components: {}",
        sweep.multi_negative_count()
    );
    println!("fraction: {:.6}", sweep.multi_negative_fraction());
    if let Some(out) = &a.out {
        write_text(out, &sweep.to_csv())?;
    }
    Ok(Status::Ok)
}

fn cmd_negcount(a: NegcountArgs) -> anyhow::Result<Status> {
    let spec = match a.kind {
        NegcountKind::Ac => MapSpec::Ac,
        NegcountKind::Boundary => MapSpec::Boundary,
        NegcountKind::Rrw => MapSpec::Rrw,
        NegcountKind::Hd => MapSpec::Hd {
            alpha: MapSpec::DEFAULT_HD_ALPHA,
        },
    };
    let mut header = Header::new("analyze negcount")
        .set("labels", a.labels.display())
        .set("logits", a.logits.display())
        .set("kind", spec.name());
    if let MapSpec::Hd { alpha } = spec {
        header = header.set("alpha", alpha);
    }
    header
        .set("out", opt_path(&a.out))
        .set("seed", "none")
        .print();

    let grid = rwg::read_labels(&a.labels, None)?;
    let logits: LogitField = match rwg::read_grid(&a.logits, None)? {
        GridFile::Field(data) => data.into_field()?,
        GridFile::Labels(_) => bail!("{} holds labels, not logits", a.logits.display()),
    };
    let z = spec.build(&grid)?;
    let report = analysis::negcount(&loss::softmax(&logits), &z)?;
    for (c, n) in report.histogram.iter().enumerate() {
        println!("pixels with {c} negative components: {n}");
    }
    println!("fraction with >=2: {:.6}", report.multi_negative_fraction());
    if let Some(out) = &a.out {
        write_text(out, &report.to_csv())?;
    }
    Ok(Status::Ok)
}

fn cmd_verify(a: VerifyArgs) -> anyhow::Result<Status> {
    Header::new("verify")
        .set(
            "prop",
            a.prop
                .0
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("instances", a.instances)
        .set("seed", a.seed)
        .set("tolerance", format!("{PROP_TOL_PER_PIXEL:e} per pixel"))
        .print();
    let mut status = Status::Ok;
    for &p in &a.prop.0 {
        let report = analysis::verify_batch(p, a.instances, a.seed)?;
        for (idx, why) in &report.skipped {
            println!("prop {p}: skipped degenerate instance {idx}: {why}");
        }
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "prop {p}: checked {}, skipped {}, max discrepancy {:e}, max per pixel {:e}, failures {}: {verdict}",
            report.checked,
            report.skipped.len(),
            report.max_discrepancy,
            report.max_per_pixel,
            report.failures
        );
        if !report.passed() {
            status = Status::CheckFailed;
        }
    }
    Ok(status)
}

fn cmd_metrics(a: MetricsArgs) -> anyhow::Result<Status> {
    let spacing = a.spacing.map(|s| s.0);
    Header::new("metrics")
        .set("pred", a.pred.display())
        .set("gt", a.gt.display())
        .set(
            "spacing",
            spacing.as_deref().map_or("from files".into(), fmt_vec),
        )
        .set("seed", "none")
        .print();
    let mut pred = rwg::read_labels(&a.pred, None)?;
    let mut gt = rwg::read_labels(&a.gt, Some(pred.num_classes()))?;
    if let Some(s) = spacing {
        pred = pred.with_spacing(s.clone())?;
        gt = gt.with_spacing(s)?;
    }
    let rows = metrics::compare_labels(&pred, &gt)?;
    let run_id = a
        .pred
        .file_stem()
        .map_or("pred".into(), |s| s.to_string_lossy().into_owned());
    let tagged: Vec<_> = rows.into_iter().map(|r| (run_id.clone(), r)).collect();
    print!("{}", metrics::metrics_csv(&tagged));
    Ok(Status::Ok)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<Status> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))?;
    let cfg = RunConfig::parse(&text)?;
    let stem = a.config.with_extension("");
    let dice_path = PathBuf::from(format!("{}.dice.csv", stem.display()));
    let summary_path = PathBuf::from(format!("{}.summary.csv", stem.display()));
    Header::new("train")
        .set("config", a.config.display())
        .set("seed", cfg.seed)
        .set("dice_out", dice_path.display())
        .set("summary_out", summary_path.display())
        .print();
    for line in cfg.to_text().lines() {
        println!("# {line}");
    }
    let data = trainer::generate_task(&cfg.task, cfg.train_count, cfg.val_count)?;
    let record = trainer::train_run(&cfg, &data)?;
    for (e, loss) in record.train_loss.iter().enumerate() {
        let d = &record.dice[e];
        let fg = d[1..].iter().sum::<f64>() / (d.len() - 1) as f64;
        println!("epoch {e}: loss {loss:.6}, foreground dice {fg:.4}");
    }
    for c in &record.sign_checks {
        println!(
            "sign check epoch {}: {} of {} pixels with >=2 negative components",
            c.epoch, c.multi_negative, c.pixels
        );
    }
    if let Some(why) = &record.diverged {
        println!("diverged: {why}");
    }
    println!(
        "final dice {:.4}, converged {}",
        record.final_dice, record.converged
    );
    let records = [record];
    write_text(&dice_path, &trainer::records_csv(&records))?;
    write_text(&summary_path, &trainer::summary_csv(&records))?;
    Ok(Status::Ok)
}

/// Loss label of a run id such as `dice+rw-gradual-s3`.
fn loss_of_run(run_id: &str) -> &str {
    run_id.rsplit_once("-s").map_or(run_id, |(l, _)| l)
}

fn cmd_cdf(a: CdfArgs) -> anyhow::Result<Status> {
    Header::new("cdf")
        .set("runs", &a.runs)
        .set("out", a.out.display())
        .set("seed", "none")
        .print();
    let mut paths: Vec<PathBuf> = glob::glob(&a.runs)
        .with_context(|| format!("bad glob `{}`", a.runs))?
        .collect::<Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no files match `{}`", a.runs);
    }
    let mut finals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for path in &paths {
        let mut reader =
            csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .with_context(|| format!("{} has no `{name}` column", path.display()))
        };
        let (id_col, dice_col) = (col("run_id")?, col("final_dice")?);
        for row in reader.records() {
            let row = row?;
            let dice: f64 = row[dice_col]
                .parse()
                .with_context(|| format!("bad final_dice in {}", path.display()))?;
            finals
                .entry(loss_of_run(&row[id_col]).to_string())
                .or_default()
                .push(dice);
        }
    }
    let grid = trainer::dice_grid(CDF_STEPS);
    let mut out = String::from("loss,dice,cdf\n");
    for (label, values) in &finals {
        println!("{label}: {} runs", values.len());
        for (d, c) in trainer::final_dice_cdf(values, &grid)? {
            out.push_str(&format!("{label},{d},{c}\n"));
        }
    }
    write_text(&a.out, &out)?;
    Ok(Status::Ok)
}

fn rw2_gradcheck(seed: u64) -> anyhow::Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (h, w, k) = (6, 8, 3);
    let labels: Vec<u8> = (0..h * w).map(|i| ((i % w) * k / w) as u8).collect();
    let geom = Geometry::unit(vec![h, w])?;
    let grid = LabelGrid::new(geom.clone(), labels, k)?;
    let onehot = one_hot(&grid);
    let z = MapSpec::Hd {
        alpha: MapSpec::DEFAULT_HD_ALPHA,
    }
    .build(&grid)?;
    let logits = LogitField::new(
        geom,
        k,
        (0..h * w * k).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    )?;
    let target = Target {
        onehot: &onehot,
        map: Some(&z),
        weights: None,
    };
    Ok(loss::check_gradient(
        &LossKind::Rw2,
        &logits,
        &target,
        FD_STEP,
    )?)
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<Status> {
    let header = Header::new("gradcheck")
        .set("loss", &a.loss)
        .set("seed", a.seed);
    let (err, tol) = match a.loss.as_str() {
        "net" => {
            header
                .set("step", NET_FD_STEP)
                .set("tolerance", NET_GRAD_TOL)
                .print();
            (
                trainer::end_to_end_gradcheck(a.seed, 12, 256, NET_FD_STEP)?,
                NET_GRAD_TOL,
            )
        }
        "rw2" => {
            header
                .set("step", FD_STEP)
                .set("tolerance", LOSS_GRAD_TOL)
                .print();
            (rw2_gradcheck(a.seed)?, LOSS_GRAD_TOL)
        }
        name => {
            let kind = LossChoice::parse(name)?;
            header
                .set("step", FD_STEP)
                .set("tolerance", LOSS_GRAD_TOL)
                .print();
            (
                trainer::loss_gradcheck(kind, a.seed, 48, 4, FD_STEP)?,
                LOSS_GRAD_TOL,
            )
        }
    };
    let verdict = if err < tol { "PASS" } else { "FAIL" };
    println!("max relative error {err:e}: {verdict}");
    Ok(if err < tol {
        Status::Ok
    } else {
        Status::CheckFailed
    })
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::Maps(a) => cmd_maps(a),
        Command::Analyze(AnalyzeCommand::Simplex(a)) => cmd_simplex(a),
        Command::Analyze(AnalyzeCommand::Negcount(a)) => cmd_negcount(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Train(a) => cmd_train(a),
        Command::Cdf(a) => cmd_cdf(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_vectors() {
        assert_eq!(parse_csv_f64("12,4,-3").unwrap().0, vec![12.0, 4.0, -3.0]);
        assert!(parse_csv_f64("1,,2").is_err());
        assert!(parse_csv_f64("1,nan").is_err());
    }

    #[test]
    fn prop_selection() {
        assert_eq!(parse_prop("all").unwrap().0, vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_prop("3").unwrap().0, vec![3]);
        assert!(parse_prop("6").is_err());
    }

    #[test]
    fn run_id_loss() {
        assert_eq!(loss_of_run("dice+rw-gradual-s3"), "dice+rw-gradual");
        assert_eq!(loss_of_run("rrw-s12"), "rrw");
    }
}
