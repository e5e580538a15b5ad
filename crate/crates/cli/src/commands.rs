use std::path::{Path, PathBuf};

use pcsq::config::{ContinuousFamily, ModelConfig};
use pcsq::data::{generate_synthetic, ingest_csv, ColumnKind, CsvSchema, Dataset};
use pcsq::diagnostics::{log_space_probe, step_probe};
use pcsq::inference::{density_grid, log_likelihood, sample as draw_samples};
use pcsq::learning::{train as fit, InitScheme, Optimizer, TrainConfig};
use pcsq::reductions::{
    communication_matrix, mps_to_circuit, psd_to_circuit, udisj_circuit, CpConfig, Graph, MpsFactorization, PsdModel,
};
use pcsq::squaring::{enumerate_assignments, square};
use pcsq::{Error, Model, ModelDocument, ProductKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Core(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Core(e) => match e {
                Error::InvalidArgument(_)
                | Error::UnsupportedStructure(_)
                | Error::UnsupportedOperation(_)
                | Error::PreconditionViolation(_) => 2,
                Error::Ingest { .. } | Error::Domain { .. } | Error::Io(_) | Error::Serialization(_) => 3,
                Error::Numeric { .. } => 4,
                Error::DegenerateModel(_) => 5,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::from(e))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Core(Error::Io(e.to_string()))
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn config_err(message: impl Into<String>) -> Failure {
    Failure::Config(message.into())
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let bins: usize = cfg.get("data.bins")?;
    let mut data = match cfg.str("data.source") {
        "synthetic" => {
            let kind = cfg.str("data.name").parse().map_err(|e: Error| config_err(e.to_string()))?;
            generate_synthetic(
                kind,
                cfg.get("data.n_train")?,
                cfg.get("data.n_val")?,
                cfg.get("data.n_test")?,
                cfg.get("seed")?,
                None,
            )?
        }
        "csv" => {
            let path = cfg.path("data.path").ok_or_else(|| config_err("data.path is required for csv data"))?;
            let kinds = cfg
                .list::<String>("data.columns")?
                .iter()
                .map(|k| parse_kind(k))
                .collect::<Result<Vec<_>>>()?;
            let schema = CsvSchema {
                kinds,
                val_fraction: cfg.get("data.val_fraction")?,
                test_fraction: cfg.get("data.test_fraction")?,
                standardize: cfg.get("data.standardize")?,
            };
            ingest_csv(&path, &schema)?
        }
        other => return Err(config_err(format!("data.source '{other}' is not synthetic or csv"))),
    };
    if bins > 0 {
        data.discretize(bins)?;
    }
    Ok(data)
}

fn parse_kind(s: &str) -> Result<ColumnKind> {
    match s.split_once(':') {
        None if s == "continuous" => Ok(ColumnKind::Continuous),
        Some(("discrete", m)) => m
            .parse()
            .map(|states| ColumnKind::Discrete { states })
            .map_err(|_| config_err(format!("bad state count in '{s}'"))),
        _ => Err(config_err(format!("column kind '{s}' is not continuous or discrete:M"))),
    }
}

fn model_config(cfg: &RunConfig) -> Result<ModelConfig> {
    let family = match cfg.str("model.family") {
        "gaussian" => ContinuousFamily::Gaussian,
        "spline" => ContinuousFamily::Spline { order: cfg.get("model.spline_order")?, knots: cfg.get("model.spline_knots")? },
        other => return Err(config_err(format!("model.family '{other}' is not gaussian or spline"))),
    };
    let product = match cfg.str("model.product") {
        "hadamard" => ProductKind::Hadamard,
        "kronecker" => ProductKind::Kronecker,
        other => return Err(config_err(format!("model.product '{other}' is not hadamard or kronecker"))),
    };
    let err = |e: Error| config_err(e.to_string());
    Ok(ModelConfig {
        kind: cfg.str("model.kind").parse().map_err(err)?,
        region_graph: cfg.str("model.region_graph").parse().map_err(err)?,
        width: cfg.get("model.width")?,
        product,
        family,
        domain_padding: cfg.get("model.domain_padding")?,
    })
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let optimizer = match cfg.str("train.optimizer") {
        "adam" => Optimizer::adam(),
        "sgd" => Optimizer::Sgd,
        other => return Err(config_err(format!("train.optimizer '{other}' is not adam or sgd"))),
    };
    let init = match cfg.str("train.init") {
        "uniform" => InitScheme::Uniform { low: cfg.get("train.init_low")?, high: cfg.get("train.init_high")? },
        "normal" => InitScheme::Normal { mean: cfg.get("train.init_mean")?, std: cfg.get("train.init_std")? },
        other => return Err(config_err(format!("train.init '{other}' is not uniform or normal"))),
    };
    let tc = TrainConfig {
        batch_size: cfg.get("train.batch_size")?,
        learning_rate: cfg.get("train.learning_rate")?,
        max_epochs: cfg.get("train.max_epochs")?,
        patience: cfg.get("train.patience")?,
        optimizer,
        init,
        seed: cfg.get("seed")?,
        l2: cfg.get("train.l2")?,
    };
    tc.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(tc)
}

fn model_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.path("model.path").unwrap_or_else(|| out.join("model.json"))
}

fn load_model(cfg: &RunConfig, out: &Path) -> Result<Model> {
    Ok(Model::from_document(&ModelDocument::read(&model_path(cfg, out))?)?)
}

fn write_model(model: &Model, out: &Path) -> Result<()> {
    model.to_document().write(&out.join("model.json"))?;
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let mc = model_config(cfg)?;
    let tc = train_config(cfg)?;
    let mut model = mc.build(&data, tc.init, tc.seed)?;
    let report = fit(&mut model, &data.train_rows(), &data.val_rows(), &tc)?;
    write_model(&model, out)?;
    std::fs::write(out.join("train_report.csv"), report.to_csv())?;
    println!(
        "trained {} steps over {} epochs; best epoch {} with validation LL {:.6}",
        report.steps,
        report.epochs.len(),
        report.best_epoch,
        report.best_val_ll
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let model = load_model(cfg, out)?;
    if model.variable_count() != data.column_count() {
        return Err(config_err(format!(
            "model has {} variables, data has {} columns",
            model.variable_count(),
            data.column_count()
        )));
    }
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
    w.write_record(["split", "rows", "mean_ll", "std_error", "ll_low", "ll_high"])?;
    for (name, idx) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        if idx.is_empty() {
            continue;
        }
        let ll = log_likelihood(&model, &data.split(idx))?;
        let (lo, hi) = (ll.mean - 2.0 * ll.std_error, ll.mean + 2.0 * ll.std_error);
        w.write_record([name.to_string(), ll.rows.to_string(), ll.mean.to_string(), ll.std_error.to_string(), lo.to_string(), hi.to_string()])?;
        println!("{name}: {:.6} ± {:.6}", ll.mean, 2.0 * ll.std_error);
    }
    w.flush()?;
    Ok(())
}

pub fn sample(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg, out)?;
    let n: usize = cfg.get("sample.count")?;
    let xs = draw_samples(&model, n, cfg.get("seed")?)?;
    let mut w = csv::Writer::from_path(out.join("samples.csv"))?;
    w.write_record((1..=model.variable_count()).map(|v| format!("x{v}")))?;
    for x in &xs {
        w.write_record(x.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    println!("wrote {n} samples");
    Ok(())
}

pub fn grid(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg, out)?;
    if model.variable_count() != 2 {
        return Err(config_err("grid needs a two-variable model"));
    }
    let size: usize = cfg.get("grid.size")?;
    if size < 2 {
        return Err(config_err("grid.size must be at least 2"));
    }
    let mut data = None;
    let mut axes = Vec::new();
    for (v, (lo_key, hi_key)) in [("grid.x_min", "grid.x_max"), ("grid.y_min", "grid.y_max")].into_iter().enumerate() {
        let family = model.circuit().family_of(v).ok_or_else(|| config_err(format!("no input over variable {v}")))?;
        if let Some(m) = family.states() {
            axes.push((0..m).map(|s| s as f64).collect::<Vec<f64>>());
            continue;
        }
        let (lo, hi) = match (cfg.opt::<f64>(lo_key)?, cfg.opt::<f64>(hi_key)?) {
            (Some(lo), Some(hi)) => (lo, hi),
            (lo, hi) => {
                if data.is_none() {
                    data = Some(load_data(cfg)?);
                }
                let (dlo, dhi) = data.as_ref().expect("loaded").padded_range(v, cfg.get("model.domain_padding")?);
                (lo.unwrap_or(dlo), hi.unwrap_or(dhi))
            }
        };
        if !(lo < hi) {
            return Err(config_err(format!("grid range [{lo}, {hi}] is empty")));
        }
        axes.push((0..size).map(|i| lo + (hi - lo) * i as f64 / (size - 1) as f64).collect());
    }
    let rows = density_grid(&model, [&axes[0], &axes[1]])?;
    let mut w = csv::Writer::from_path(out.join("grid.csv"))?;
    w.write_record(["x1", "x2", "log_density"])?;
    for r in &rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    println!("wrote {} grid points", rows.len());
    Ok(())
}

pub fn reduce_psd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let seed: u64 = cfg.get("seed")?;
    let psd = match cfg.path("psd.input") {
        Some(p) => PsdModel::from_json(&std::fs::read_to_string(&p)?).map_err(|e| match e {
            Error::Serialization(m) => Error::Ingest { line: None, message: m },
            other => other,
        })?,
        None => PsdModel::random(cfg.get("psd.anchors")?, cfg.get("psd.dimension")?, cfg.get("psd.bandwidth")?, seed)?,
    };
    let c2 = psd_to_circuit(&psd)?;
    let model = Model::Squared(c2);
    let ev = model.evaluator();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let dim = psd.dimension();
    let mut w = csv::Writer::from_path(out.join("verification.csv"))?;
    w.write_record(["point", "direct", "circuit", "rel_error"])?;
    let mut worst: f64 = 0.0;
    for i in 0..cfg.get::<usize>("psd.points")? {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let direct = psd.evaluate(&x);
        let point: Vec<Option<f64>> = x.iter().map(|&v| Some(v)).collect();
        let got = ev.value(&point)?.to_linear();
        let rel = (got - direct).abs() / direct.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        w.write_record([i.to_string(), direct.to_string(), got.to_string(), rel.to_string()])?;
    }
    w.flush()?;
    write_model(&model, out)?;
    println!("PSD circuit of size {}: max relative error {worst:e}", model_size(&model));
    Ok(())
}

fn model_size(model: &Model) -> usize {
    match model {
        Model::Plain(c) => c.size(),
        Model::Squared(c2) => c2.size(),
    }
}

pub fn reduce_mps(cfg: &RunConfig, out: &Path) -> Result<()> {
    let seed: u64 = cfg.get("seed")?;
    let mps = match cfg.path("mps.input") {
        Some(p) => MpsFactorization::read(&p)?,
        None => {
            let mps = MpsFactorization::random(cfg.get("mps.variables")?, cfg.get("mps.states")?, cfg.get("mps.rank")?, seed)?;
            mps.write(&out.join("mps.bin"))?;
            mps
        }
    };
    let cp_rank: usize = cfg.get("mps.cp_rank")?;
    let cp = CpConfig {
        rank: (cp_rank > 0).then_some(cp_rank),
        max_iters: cfg.get("mps.cp_iters")?,
        tol: cfg.get("mps.cp_tol")?,
        restarts: cfg.get("mps.cp_restarts")?,
        seed,
    };
    let red = mps_to_circuit(&mps, &cp)?;
    let mut w = csv::Writer::from_path(out.join("cp_report.csv"))?;
    w.write_record(["core", "rank", "rel_error"])?;
    for (j, (k, e)) in red.ranks.iter().zip(&red.cp_errors).enumerate() {
        w.write_record([(j + 2).to_string(), k.to_string(), e.to_string()])?;
    }
    w.flush()?;

    let (d, m) = (mps.variable_count(), mps.states());
    let enumerable = (m as f64).powi(d as i32) <= 65536.0;
    let xs: Vec<Vec<usize>> = if enumerable {
        enumerate_assignments(&vec![m; d]).into_iter().map(|x| x.iter().map(|&v| v as usize).collect()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        (0..1000).map(|_| (0..d).map(|_| rng.random_range(0..m)).collect()).collect()
    };
    let plain = red.circuit.clone();
    let model = Model::Squared(square(red.circuit)?);
    let ev = model.evaluator();
    let mut w = csv::Writer::from_path(out.join("verification.csv"))?;
    w.write_record(["assignment", "tensor", "circuit", "abs_error", "born", "squared_circuit"])?;
    let mut worst: f64 = 0.0;
    for x in &xs {
        let t = mps.contract(x)?;
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let got = plain.evaluate_linear(&xf)?;
        let point: Vec<Option<f64>> = xf.iter().map(|&v| Some(v)).collect();
        let sq = ev.value(&point)?.to_linear();
        worst = worst.max((got - t).abs());
        let label: String = x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        w.write_record([label, t.to_string(), got.to_string(), (got - t).abs().to_string(), (t * t).to_string(), sq.to_string()])?;
    }
    w.flush()?;
    write_model(&model, out)?;
    println!("MPS circuit: max abs error {worst:e} over {} assignments", xs.len());
    Ok(())
}

pub fn udisj(cfg: &RunConfig, out: &Path) -> Result<()> {
    let graph = match cfg.path("udisj.graph") {
        Some(p) => Graph::read(&p)?,
        None => {
            let n: usize = cfg.get("udisj.matching")?;
            Graph::new(2 * n, (0..n).map(|i| (i, n + i)).collect())?
        }
    };
    let c2 = udisj_circuit(&graph)?;
    if graph.vertex_count() <= pcsq::reductions::udisj::MAX_MATRIX_VERTICES {
        let matrix = communication_matrix(&c2)?;
        std::fs::write(out.join("matrix.csv"), matrix.to_csv())?;
        println!("wrote {}x{} communication matrix", matrix.rows.len(), matrix.cols.len());
    } else {
        println!("{} vertices: communication matrix skipped", graph.vertex_count());
    }
    write_model(&Model::Squared(c2), out)?;
    Ok(())
}

/// Peak resident set size of this process in kB, where the platform
/// reports it.
fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

pub fn bench(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let base = model_config(cfg)?;
    let tc = train_config(cfg)?;
    let steps: usize = cfg.get("bench.steps")?;
    let rows = data.train_rows();
    let mut w = csv::Writer::from_path(out.join("bench.csv"))?;
    w.write_record([
        "section", "width", "batch_size", "variables", "depth", "steps", "seconds_per_step", "z_per_step",
        "peak_rss_kb", "log_z", "linear_z", "linear_overflow",
    ])?;
    let rss = || peak_rss_kb().map(|v| v.to_string()).unwrap_or_default();
    for &k in &cfg.list::<usize>("bench.widths")? {
        for &b in &cfg.list::<usize>("bench.batch_sizes")? {
            let mc = ModelConfig { width: k, ..base };
            let mut model = mc.build(&data, tc.init, tc.seed)?;
            let p = step_probe(&mut model, &rows, &TrainConfig { batch_size: b, ..tc.clone() }, steps)?;
            w.write_record([
                "train_step".into(), k.to_string(), b.to_string(), data.column_count().to_string(), String::new(),
                p.steps.to_string(), p.seconds_per_step.to_string(), p.z_per_step.to_string(), rss(),
                String::new(), String::new(), String::new(),
            ])?;
            println!("K={k} batch={b}: {:.4}s/step, {} Z evaluations per step", p.seconds_per_step, p.z_per_step);
        }
    }
    for &width in &cfg.list::<usize>("bench.scaling_widths")? {
        let mut crossover = None;
        for &v in &cfg.list::<usize>("bench.scaling_variables")? {
            let p = log_space_probe(v, width, tc.seed)?;
            if p.linear_failed() && crossover.is_none() {
                crossover = Some(v);
            }
            w.write_record([
                "log_space".into(), width.to_string(), String::new(), v.to_string(), p.depth.to_string(),
                String::new(), String::new(), String::new(), rss(), p.log_z.to_string(), p.linear_z.to_string(),
                p.linear_failed().to_string(),
            ])?;
        }
        match crossover {
            Some(v) => println!("K={width}: float-64 partition function first fails at {v} variables"),
            None => println!("K={width}: float-64 partition function stayed finite for every size"),
        }
    }
    w.flush()?;
    Ok(())
}
