//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, Job, OutputFormat, RunConfig};
use crate::error::{Error, Result};
use crate::fit::{fit_parameters, FitOptions, FreeParam, TransmissionDataset};
use crate::model::{cooperativity, SystemParams};
use crate::sweeps::{
    default_axes, default_laser_axis, default_theta_axis, empty_cavity_nbar, find_special_angles, qd_linewidth_ghz,
    run_sweep, AxisName, SweepResult, SweepSpec,
};

#[derive(Debug, Parser)]
#[command(name = "polqed", version, about = "Two-polarization cavity QED simulator")]
pub struct Cli {
    /// Worker threads for parameter sweeps.
    #[arg(long, global = true, env = "POLQED_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Polarizer-resolved transmission over laser detuning and θ_out.
    TransmissionMap(Common),
    /// g²(0) over common QD offset and θ_out.
    G2Map(Common),
    /// g²(τ) at one setting, raw and convolved with detector jitter.
    G2Trace(Common),
    /// Post-selected photon-number distribution versus θ_out.
    PhotonNumber(Common),
    /// Maximal g²(0) across cavity decay rates at fixed empty-cavity photon number.
    KappaSweep(Common),
    /// g²(0) map with the Y transition switched off.
    Ablation(Common),
    /// Maximal g²(0) for modified g, κ and γ*.
    DephasingStudy(Common),
    /// Fit system parameters to transmission spectra.
    Fit(FitArgs),
    /// Polarizer angles that suppress single-photon transmission near each QD line.
    SpecialAngles(Common),
    /// Print cooperativity and derived quantities.
    ParamsReport(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled parameter set (qd_a or qd_b).
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fock-space truncation per cavity mode.
    #[arg(long)]
    pub n_fock: Option<usize>,
    /// Detector jitter FWHM values in ps, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub jitter: Option<Vec<f64>>,
    /// Output format: csv or json.
    #[arg(long)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Transmission CSV (theta_out_deg, detuning_ghz, transmission).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Free parameters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub free: Option<Vec<FreeParam>>,
    /// Seed for the randomized simplex restarts.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    fn job(&self) -> Job {
        match self {
            Command::TransmissionMap(_) => Job::TransmissionMap,
            Command::G2Map(_) => Job::G2Map,
            Command::G2Trace(_) => Job::G2Trace,
            Command::PhotonNumber(_) => Job::PhotonNumber,
            Command::KappaSweep(_) => Job::KappaSweep,
            Command::Ablation(_) => Job::Ablation,
            Command::DephasingStudy(_) => Job::DephasingStudy,
            Command::Fit(_) => Job::Fit,
            Command::SpecialAngles(_) => Job::SpecialAngles,
            Command::ParamsReport(_) => Job::ParamsReport,
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Fit(f) => &f.common,
            Command::TransmissionMap(c)
            | Command::G2Map(c)
            | Command::G2Trace(c)
            | Command::PhotonNumber(c)
            | Command::KappaSweep(c)
            | Command::Ablation(c)
            | Command::DephasingStudy(c)
            | Command::SpecialAngles(c)
            | Command::ParamsReport(c) => c,
        }
    }
}

/// Parses arguments, runs the job and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the run configuration from the config file or preset and the
/// command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let job = cli.command.job();
    let common = cli.command.common();
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset("qd_a")?,
    };
    if let Some(s) = cfg.scenario {
        if s != job {
            return Err(Error::Config(format!("config is for `{s}`, not `{job}`")));
        }
    }
    cfg.scenario = Some(job);
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(n) = common.n_fock {
        cfg.n_fock = Some(n);
    }
    if let Some(j) = &common.jitter {
        cfg.jitter_ps = j.clone();
    }
    if let Some(f) = common.format {
        cfg.format = f;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Command::Fit(f) = &cli.command {
        let mut section = cfg.fit.clone().unwrap_or_else(|| crate::config::FitSection {
            data: PathBuf::new(),
            free: FreeParam::ALL.to_vec(),
            seed: 0,
            restarts: 3,
            profile_scales: true,
        });
        if let Some(d) = &f.data {
            section.data = d.clone();
        }
        if let Some(free) = &f.free {
            section.free = free.clone();
        }
        if let Some(s) = f.seed {
            section.seed = s;
        }
        if section.data.as_os_str().is_empty() {
            return Err(Error::Config("fit needs --data or a [fit] data entry".into()));
        }
        cfg.fit = Some(section);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Sweep definition for a sweep job.
pub fn sweep_spec(cfg: &RunConfig, job: Job) -> Result<SweepSpec> {
    let scenario = job
        .scenario()
        .ok_or_else(|| Error::Config(format!("`{job}` is not a sweep")))?;
    let mut spec = SweepSpec::new(scenario, cfg.resolved_params());
    spec.axes = cfg.axes.clone().unwrap_or_else(|| default_axes(scenario));
    spec.theta_out = cfg.theta_out_deg;
    if let Some(s) = cfg.search {
        spec.search = s;
    }
    if let Some(p) = cfg.propagation {
        spec.propagation = p;
    }
    if let Some(v) = &cfg.variants {
        spec.variants = v.clone();
    }
    spec.jitters_ps = cfg.jitter_ps.clone();
    spec.validate()?;
    Ok(spec)
}

/// `cfg` with every sweep default made explicit, for output headers.
fn resolved_sweep_config(cfg: &RunConfig, spec: &SweepSpec) -> RunConfig {
    let mut c = cfg.clone();
    c.axes = Some(spec.axes.clone());
    c.search = Some(spec.search);
    c.propagation = Some(spec.propagation);
    c.variants = Some(spec.variants.clone());
    c
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let job = cli.command.job();
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = cfg.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?
    };
    pool.install(|| run_job(&cfg, job))
}

fn run_job(cfg: &RunConfig, job: Job) -> Result<()> {
    match job {
        Job::ParamsReport => {
            print!("{}", params_report(&cfg.resolved_params())?);
            Ok(())
        }
        Job::SpecialAngles => {
            let p = cfg.resolved_params();
            let axes = cfg.axes.clone().unwrap_or_default();
            let pick = |name: AxisName, default| axes.iter().copied().find(|a| a.name == name).unwrap_or(default);
            let angles = find_special_angles(
                &p,
                &pick(AxisName::ThetaOut, default_theta_axis()),
                &pick(AxisName::FLaser, default_laser_axis()),
            )?;
            let path = output_path(cfg, "special_angles")?;
            let mut w = create(&path)?;
            match cfg.format {
                OutputFormat::Json => write_json(&mut w, &path, &angles)?,
                OutputFormat::Csv => {
                    write_header(&mut w, &path, cfg)?;
                    let rows = angles
                        .iter()
                        .map(|a| vec![a.qd_line_ghz, a.theta_out, a.laser_detuning, a.transmission]);
                    write_rows(
                        &mut w,
                        &path,
                        &["qd_line_ghz", "theta_out_deg", "laser_detuning_ghz", "T_raw"],
                        rows,
                    )?;
                }
            }
            for a in &angles {
                println!(
                    "line {:+.3} GHz: theta_out = {:.2} deg at laser {:+.3} GHz",
                    a.qd_line_ghz, a.theta_out, a.laser_detuning
                );
            }
            finish(w, &path)
        }
        Job::Fit => {
            let section = cfg.fit.as_ref().expect("resolved fit section");
            let p = cfg.resolved_params();
            let data = TransmissionDataset::from_csv_path(&section.data, p.theta_in)?;
            let opts = FitOptions {
                seed: section.seed,
                restarts: section.restarts,
                profile_scales: section.profile_scales,
                ..FitOptions::default()
            };
            let result = fit_parameters(&data, &p, &section.free, &opts)?;
            let path = output_path(cfg, "fit_result")?.with_extension("json");
            let mut w = create(&path)?;
            write_json(&mut w, &path, &result)?;
            println!(
                "sse {:.4e} after {} evaluations (converged: {})",
                result.sse, result.n_evals, result.converged
            );
            for f in &result.free {
                println!("{} = {:.6}", f.name(), f.get(&result.params));
            }
            finish(w, &path)
        }
        _ => {
            let spec = sweep_spec(cfg, job)?;
            let result = run_sweep(&spec)?;
            let cfg = &resolved_sweep_config(cfg, &spec);
            let path = output_path(cfg, &job.name().replace('-', "_"))?;
            let mut w = create(&path)?;
            match cfg.format {
                OutputFormat::Json => write_json(&mut w, &path, &result)?,
                OutputFormat::Csv => {
                    write_header(&mut w, &path, cfg)?;
                    write_sweep_csv(&mut w, &path, job, &result)?;
                }
            }
            summarize(job, &result);
            finish(w, &path)
        }
    }
}

/// Cooperativity and derived rates as `key = value` lines.
pub fn params_report(p: &SystemParams) -> Result<String> {
    p.validate()?;
    let c = cooperativity(p)?;
    let tau = std::f64::consts::TAU;
    let mut s = String::new();
    let mut line = |k: &str, v: f64| s.push_str(&format!("{k} = {v:.6}\n"));
    line("cooperativity", c);
    line("kappa_per_ns", p.kappa);
    line("g_x_per_ns", p.g_x);
    line("g_y_per_ns", p.g_y);
    line("gamma_par_per_ns", p.gamma_par);
    line("gamma_star_per_ns", p.gamma_star);
    line("gamma_total_per_ns", p.gamma_par / 2.0 + p.gamma_star);
    line("cavity_fwhm_ghz", p.kappa / tau);
    line("purcell_rate_per_ns", 4.0 * p.g_x * p.g_x / p.kappa);
    line("qd_fwhm_ghz", qd_linewidth_ghz(p));
    line("qd_splitting_ghz", p.f_qd_y - p.f_qd_x);
    line("empty_cavity_nbar", empty_cavity_nbar(p));
    s.push_str(&format!("n_fock = {}\n", p.n_fock));
    Ok(s)
}

fn output_path(cfg: &RunConfig, stem: &str) -> Result<PathBuf> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = match cfg.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    Ok(dir.join(format!("{stem}.{ext}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::io(path, e.into()))?;
    writeln!(w).map_err(|e| Error::io(path, e))
}

/// Commented header: code version and the resolved configuration as TOML.
fn write_header(w: &mut impl Write, path: &Path, cfg: &RunConfig) -> Result<()> {
    let mut text = format!("polqed {}\n", env!("CARGO_PKG_VERSION"));
    text.push_str(&cfg.to_toml());
    for l in text.lines() {
        writeln!(w, "# {l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn write_rows<I>(w: &mut impl Write, path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    };
    out.write_record(header).map_err(err)?;
    for row in rows {
        out.write_record(row.iter().map(|&v| fmt_num(v))).map_err(err)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Shortest round-trip form, in exponent notation for very small or large
/// magnitudes.
fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e7).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn write_sweep_csv(w: &mut impl Write, path: &Path, job: Job, r: &SweepResult) -> Result<()> {
    let keys: Vec<&str> = r.axis_names.iter().map(AxisName::key).collect();
    match job {
        Job::TransmissionMap => {
            let header: Vec<&str> = keys.iter().copied().chain(["T_raw", "T_colnorm"]).collect();
            let rows = r.cells.iter().map(|c| {
                let mut v = c.coords.clone();
                v.extend([c.t_raw, c.t_colnorm]);
                v
            });
            write_rows(w, path, &header, rows)
        }
        Job::G2Map | Job::Ablation => {
            let header: Vec<&str> = keys.iter().copied().chain(["g2_zero"]).collect();
            let rows = r.cells.iter().map(|c| {
                let mut v = c.coords.clone();
                v.push(c.g2_zero);
                v
            });
            write_rows(w, path, &header, rows)
        }
        Job::PhotonNumber => {
            let n = r
                .cells
                .iter()
                .filter_map(|c| c.pn.as_ref().map(Vec::len))
                .max()
                .unwrap_or(0);
            let p_names: Vec<String> = (0..n).map(|k| format!("p{k}")).collect();
            let header: Vec<&str> = keys.iter().copied().chain(p_names.iter().map(String::as_str)).collect();
            let rows = r.cells.iter().map(|c| {
                let mut v = c.coords.clone();
                match &c.pn {
                    Some(p) => v.extend(p.iter().copied()),
                    None => v.extend(std::iter::repeat_n(f64::NAN, n)),
                }
                v
            });
            write_rows(w, path, &header, rows)
        }
        Job::KappaSweep => {
            let header = [
                "kappa_per_ns",
                "eta_per_ns",
                "g2_max",
                "laser_detuning_ghz",
                "theta_out_deg",
            ];
            let rows = r.cells.iter().map(|c| {
                let (a, t) = c.argmax.unwrap_or((f64::NAN, f64::NAN));
                vec![c.coords[0], c.eta.unwrap_or(f64::NAN), c.g2_zero, a, t]
            });
            write_rows(w, path, &header, rows)
        }
        Job::DephasingStudy => {
            let mut out = csv::Writer::from_writer(w);
            let err = |e: csv::Error| Error::Config(e.to_string());
            out.write_record(["variant", "value", "g2_max", "laser_detuning_ghz", "theta_out_deg"])
                .map_err(err)?;
            for c in &r.cells {
                let (a, t) = c.argmax.unwrap_or((f64::NAN, f64::NAN));
                let value = c.coords.first().copied().unwrap_or(f64::NAN);
                let label = c.label.clone().unwrap_or_default();
                out.write_record([label, fmt_num(value), fmt_num(c.g2_zero), fmt_num(a), fmt_num(t)])
                    .map_err(err)?;
            }
            out.flush().map_err(|e| Error::io(path, e))
        }
        Job::G2Trace => {
            let raw = r
                .traces
                .first()
                .ok_or_else(|| Error::NotFound("no trace computed".into()))?;
            let names: Vec<String> = r.traces[1..]
                .iter()
                .map(|t| format!("g2_conv_{}ps", t.convolved_with.unwrap_or(f64::NAN)))
                .collect();
            let header: Vec<&str> = ["tau_ns", "g2_raw"]
                .into_iter()
                .chain(names.iter().map(String::as_str))
                .collect();
            if r.traces.iter().any(|t| t.tau.len() != raw.tau.len()) {
                return Err(Error::DimensionMismatch {
                    expected: raw.tau.len(),
                    found: r
                        .traces
                        .iter()
                        .map(|t| t.tau.len())
                        .find(|&n| n != raw.tau.len())
                        .unwrap_or(0),
                });
            }
            let rows = (0..raw.tau.len()).map(|k| {
                let mut v = vec![raw.tau[k]];
                v.extend(r.traces.iter().map(|t| t.g2[k]));
                v
            });
            write_rows(w, path, &header, rows)
        }
        Job::Fit | Job::SpecialAngles | Job::ParamsReport => unreachable!("not a sweep"),
    }
}

fn summarize(job: Job, r: &SweepResult) {
    let m = &r.metadata;
    println!(
        "{job}: {} cells, {} failed, max residual {:.2e}, hash {}",
        r.cells.len(),
        m.n_failed,
        m.max_residual,
        m.params_hash
    );
    match job {
        Job::TransmissionMap => {
            if let Some(c) = r.max_transmission() {
                println!("max T_raw = {:.6e} at {:?}", c.t_raw, c.coords);
            }
        }
        Job::G2Trace => {
            for t in &r.traces {
                let label = t.convolved_with.map_or("raw".to_string(), |j| format!("{j} ps"));
                println!("g2 peak ({label}) = {:.4}", t.peak());
            }
        }
        Job::PhotonNumber => {}
        _ => {
            for c in &r.cells {
                if let Some((a, t)) = c.argmax {
                    println!(
                        "{} {:?}: g2_max = {:.4} at ({a:.3}, {t:.2} deg)",
                        c.label.as_deref().unwrap_or(""),
                        c.coords,
                        c.g2_zero
                    );
                }
            }
            if matches!(job, Job::G2Map | Job::Ablation) {
                if let Some(c) = r.max_g2() {
                    println!("max g2(0) = {:.4} at {:?}", c.g2_zero, c.coords);
                }
            }
        }
    }
}
