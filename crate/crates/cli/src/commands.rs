use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use suffcast::factors::{select_num_factors, NumFactorsSelection};
use suffcast::forecaster::OrderPolicy;
use suffcast::panel::{load_csv, LoadedPanel};
use suffcast::sdr::{build_kernel, default_c_t};
use suffcast::{fit_factors, make_h_step_target, monte_carlo_study, rolling_evaluate, select_dimension, slice, standardize};

use crate::config::{
    input_spec, output_dir, ConfigError, FactorsConfig, ForecastConfig, SelectConfig, SimulateConfig,
};

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    match threads {
        Some(0) => Err(ConfigError("threads must be at least 1".into()).into()),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the worker pool")?;
            Ok(())
        }
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// The resolved configuration, with the output directory filled in.
fn write_resolved<T: Serialize>(dir: &Path, config: &T) -> anyhow::Result<()> {
    let mut value = serde_json::to_value(config)?;
    value["output_dir"] = serde_json::Value::String(dir.display().to_string());
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    write_text(&dir.join("config.json"), &text)
}

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load(
    input: &Option<std::path::PathBuf>,
    target: &Option<String>,
    time_column: &Option<String>,
    delimiter: char,
    strict: bool,
) -> anyhow::Result<LoadedPanel> {
    let spec = input_spec(input, target, time_column, delimiter, strict)?;
    let loaded = load_csv(&spec.path, &spec.target, &spec.options)?;
    if loaded.drop_count() > 0 {
        eprintln!(
            "warning: dropped {} row(s) with missing values from {}",
            loaded.drop_count(),
            spec.path.display()
        );
    }
    Ok(loaded)
}

fn criterion_csv(sel: &NumFactorsSelection) -> String {
    let mut out = String::from("k,log_residual,penalty,criterion\n");
    for k in 0..=sel.k_max {
        let _ = writeln!(
            out,
            "{k},{},{},{}",
            sel.log_residual[k], sel.penalty_term[k], sel.criterion[k]
        );
    }
    out
}

pub fn simulate(cfg: SimulateConfig) -> anyhow::Result<()> {
    init_threads(cfg.threads)?;
    let dir = output_dir(&cfg.output_dir);
    let study = cfg.study();
    let start = Instant::now();
    let table = monte_carlo_study(&study)?;
    let runtime = start.elapsed().as_secs_f64();
    prepare_dir(&dir)?;
    table.write_dir(&dir, runtime)?;
    write_resolved(&dir, &cfg)?;
    let pct = |c: Option<suffcast::simulation::CellStats>| match c {
        Some(c) => format!("{:.1}", 100.0 * c.median),
        None => "-".into(),
    };
    for row in &table.rows {
        println!(
            "{:<6} R2(phi1)={} R2(phi2)={} oos R2={} ok={} failed={}",
            row.method.label(),
            pct(row.r2_phi1),
            pct(row.r2_phi2),
            pct(row.oos_r2),
            row.n_ok,
            row.n_failed
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn forecast(cfg: ForecastConfig) -> anyhow::Result<()> {
    init_threads(cfg.threads)?;
    let loaded = load(&cfg.input, &cfg.target, &cfg.time_column, cfg.delimiter, cfg.strict)?;
    let t_len = loaded.panel.t_len();
    if cfg.window + cfg.horizon > t_len {
        return Err(ConfigError(format!(
            "window {} plus horizon {} needs more than the {t_len} usable observations in the input",
            cfg.window, cfg.horizon
        ))
        .into());
    }
    let report = rolling_evaluate(&loaded.panel, &cfg.rolling())?;
    let dir = output_dir(&cfg.output_dir);
    prepare_dir(&dir)?;
    report.write_dir(&dir)?;
    write_resolved(&dir, &cfg)?;
    println!("{}", report.one_line());
    Ok(())
}

#[derive(Serialize)]
struct SelectionReport {
    k_hat: usize,
    k_used: usize,
    l_hat: usize,
    c_t: f64,
    k_c: usize,
    tau: usize,
    kernel_eigenvalues: Vec<f64>,
    dropped_rows: usize,
}

pub fn select(cfg: SelectConfig) -> anyhow::Result<()> {
    init_threads(cfg.threads)?;
    let kernel_method = cfg
        .method
        .kernel()
        .ok_or_else(|| ConfigError(format!("method {} has no kernel; use sir, dr, tm or ens", cfg.method)))?;
    let loaded = load(&cfg.input, &cfg.target, &cfg.time_column, cfg.delimiter, cfg.strict)?;
    let mut panel = loaded.panel;
    let (p, t) = (panel.p(), panel.t_len());
    if cfg.standardize {
        panel = standardize(&panel, 0..t)?.0;
    }
    let k_max = cfg.k_max.min(p).min(t);
    let sel = select_num_factors(&panel.x, k_max, cfg.penalty)?;
    let k = match cfg.k {
        OrderPolicy::Auto => sel.k_hat.max(1),
        OrderPolicy::Fixed(k) => k,
    };
    let fit = fit_factors(&panel.x, k)?;
    let targets = make_h_step_target(&panel.y, cfg.horizon)?;
    let n = targets.len();
    let train = fit.factors.rows(0, n).into_owned();
    let slices = slice(&targets, cfg.slices)?;
    let kernel = build_kernel(kernel_method, &train, &slices, cfg.variance_mode)?;
    let c_t = cfg.c_t_multiplier * default_c_t(kernel_method, k, p, n);
    let dim = select_dimension(&kernel, n, cfg.c_censor, c_t)?;

    let dir = output_dir(&cfg.output_dir);
    prepare_dir(&dir)?;
    write_text(&dir.join("factor_criterion.csv"), &criterion_csv(&sel))?;
    let mut g = String::from("l,objective\n");
    for (i, v) in dim.objective.iter().enumerate() {
        let _ = writeln!(g, "{},{v}", i + 1);
    }
    write_text(&dir.join("dimension_objective.csv"), &g)?;
    kernel.write_dir(&dir.join("kernel"), Some(&dim))?;
    let report = SelectionReport {
        k_hat: sel.k_hat,
        k_used: k,
        l_hat: dim.l_hat,
        c_t: dim.c_t,
        k_c: dim.k_c,
        tau: dim.tau,
        kernel_eigenvalues: kernel.eigenvalues.iter().copied().collect(),
        dropped_rows: loaded.dropped_rows.len(),
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_text(&dir.join("selection.json"), &text)?;
    write_resolved(&dir, &cfg)?;
    println!("K_hat={} L_hat={} (kernel on K={k}, C_T={:.4})", sel.k_hat, dim.l_hat, dim.c_t);
    Ok(())
}

pub fn factors(cfg: FactorsConfig) -> anyhow::Result<()> {
    init_threads(cfg.threads)?;
    let loaded = load(&cfg.input, &cfg.target, &cfg.time_column, cfg.delimiter, cfg.strict)?;
    let mut panel = loaded.panel;
    let (p, t) = (panel.p(), panel.t_len());
    if cfg.standardize {
        panel = standardize(&panel, 0..t)?.0;
    }
    let dir = output_dir(&cfg.output_dir);
    prepare_dir(&dir)?;
    let k = match cfg.k {
        OrderPolicy::Fixed(k) => k,
        OrderPolicy::Auto => {
            let sel = select_num_factors(&panel.x, cfg.k_max.min(p).min(t), cfg.penalty)?;
            write_text(&dir.join("factor_criterion.csv"), &criterion_csv(&sel))?;
            sel.k_hat.max(1)
        }
    };
    let fit = fit_factors(&panel.x, k)?;
    fit.write_dir(&dir)?;
    write_resolved(&dir, &cfg)?;
    println!("K={k} p={p} T={t}; wrote {}", dir.display());
    Ok(())
}
