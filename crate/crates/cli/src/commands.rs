//! Subcommands. Each returns the text for stdout plus named output files; nothing here
//! touches the filesystem except reading potential tables.

use std::fmt::Write as _;

use ggr_core::diagrams::{enumerate_diagrams, enumerate_ggraphs, VertexCounts};
use ggr_core::energy::assemble;
use ggr_core::evaluation::ConvergenceInputs;
use ggr_core::expansion::{
    convergence_monitor, graded_csv, graded_partial_sums, normalization_constant, normalization_csv, reduced_density, Caps,
    TrialStateSpec, SERIES_CSV_HEADER,
};
use ggr_core::oracle::Oracle;
use ggr_core::polyhedron::{dirichlet_l1, FermiPolyhedron, Monomial, MomentumSet, DEFAULT_PRIMES};
use ggr_core::scattering::{cutoff_energy_integral, solve_with_cutoff, Channel, ScatteringSolution, Weight};
use ggr_core::torus::{Momentum, Torus};
use ggr_core::GgrError;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

/// Version stamped into every output header.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] GgrError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(GgrError::CapExceeded { .. } | GgrError::Budget(_)) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Scattering,
    Polyhedron,
    Diagrams,
    Expand,
    Energy,
    Verify,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub files: Vec<(String, String)>,
    /// 0 success, 1 tolerance failure
    pub exit: i32,
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    match cmd {
        Command::Scattering => scattering(cfg),
        Command::Polyhedron => polyhedron(cfg),
        Command::Diagrams => diagrams(cfg),
        Command::Expand => expand(cfg),
        Command::Energy => energy(cfg),
        Command::Verify => verify(cfg),
    }
}

/// Hash of the canonical config, leaving out keys that only say where and how fast to run.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical: String = cfg
        .print()
        .lines()
        .filter(|l| !l.starts_with("out ") && !l.starts_with("threads "))
        .map(|l| format!("{l}\n"))
        .collect();
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn caps(cfg: &RunConfig) -> Caps {
    Caps { max_internal: cfg.max_internal, max_k: cfg.k_max, max_ng: cfg.n_g_max, budget: cfg.budget }
}

fn torus(cfg: &RunConfig) -> Result<Torus, CliError> {
    Ok(Torus::new(cfg.l, cfg.grid_m)?)
}

fn solution(cfg: &RunConfig, torus: &Torus) -> Result<ScatteringSolution, CliError> {
    let v = cfg.potential.to_potential()?;
    let sol = solve_with_cutoff(&v, cfg.b, torus)?;
    Ok(if cfg.p_wave { sol } else { sol.without_p_wave() })
}

fn polyhedra(cfg: &RunConfig) -> Result<(FermiPolyhedron, FermiPolyhedron), CliError> {
    let up = FermiPolyhedron::build(cfg.s_up, DEFAULT_PRIMES, cfg.kf_up_ratio, cfg.l)?;
    let dn = FermiPolyhedron::build(cfg.s_dn, DEFAULT_PRIMES, cfg.kf_dn_ratio, cfg.l)?;
    Ok((up, dn))
}

fn momentum_set(cfg: &RunConfig, explicit: &Option<Vec<[i64; 3]>>, s: usize, kf: num_rational::Ratio<i64>) -> Result<MomentumSet, CliError> {
    Ok(match explicit {
        Some(pts) => MomentumSet::new(cfg.l, pts.iter().map(|&p| Momentum(p)).collect())?,
        None => FermiPolyhedron::build(s, DEFAULT_PRIMES, kf, cfg.l)?.momenta,
    })
}

pub fn trial_state(cfg: &RunConfig) -> Result<TrialStateSpec, CliError> {
    let torus = torus(cfg)?;
    let sol = solution(cfg, &torus)?;
    let up = momentum_set(cfg, &cfg.momenta_up, cfg.s_up, cfg.kf_up_ratio)?;
    let dn = momentum_set(cfg, &cfg.momenta_dn, cfg.s_dn, cfg.kf_dn_ratio)?;
    Ok(TrialStateSpec::new(torus, up, dn, cfg.s_up.max(cfg.s_dn), sol)?)
}

fn header(kind: &str, cfg: &RunConfig) -> String {
    format!("# ggr {kind} v{SCHEMA_VERSION} config {}\n", config_hash(cfg))
}

fn scattering(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let t = torus(cfg)?;
    let sol = solution(cfg, &t)?;
    let mut csv = header("scattering", cfg);
    let _ = writeln!(csv, "# a={} a_p={} b={}", sol.a, sol.a_p, sol.b);
    csv.push_str("r,f_s,f_p,g_s,g_p\n");
    let samples = 200;
    for i in 0..=samples {
        let r = 1.25 * sol.b * i as f64 / samples as f64;
        let _ = writeln!(csv, "{r:.9e},{:.12e},{:.12e},{:.12e},{:.12e}", sol.f_s(r), sol.f_p(r), sol.g_s(r), sol.g_p(r));
    }
    let mut stdout = String::new();
    let _ = writeln!(stdout, "a = {:.12e}", sol.a);
    let _ = writeln!(stdout, "a_p = {:.12e}", sol.a_p);
    let _ = writeln!(stdout, "energy_s = {:.12e}", cutoff_energy_integral(&sol, Channel::S, Weight::One));
    let _ = writeln!(stdout, "energy_p = {:.12e}", cutoff_energy_integral(&sol, Channel::P, Weight::One));
    Ok(Outcome { stdout, files: vec![("scattering.csv".into(), csv)], exit: 0 })
}

fn polyhedron(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (up, dn) = polyhedra(cfg)?;
    let t = torus(cfg)?;
    let diag = |pf: &FermiPolyhedron| {
        let l1 = dirichlet_l1(&pf.momenta, Monomial::One, &t, pf.s()).ok();
        json!({
            "n": pf.n(),
            "s": pf.s(),
            "volume": pf.unit.volume(),
            "density": pf.density(),
            "density_ratio": pf.density_ratio(),
            "kinetic_energy": pf.momenta.kinetic_energy(),
            "kinetic_reference": pf.kinetic_reference(),
            "boundary_margin": pf.boundary_margin,
            "dirichlet_l1": l1.map(|r| r.l1),
            "dirichlet_comparison": l1.map(|r| r.comparison),
        })
    };
    let report = json!({
        "schema": format!("ggr-polyhedron/{SCHEMA_VERSION}"),
        "config_hash": config_hash(cfg),
        "up": diag(&up),
        "dn": diag(&dn),
    });
    let text = serde_json::to_string_pretty(&report).expect("json") + "\n";
    let stdout = format!("N_up = {}\nN_dn = {}\n", up.n(), dn.n());
    Ok(Outcome {
        stdout,
        files: vec![
            ("polyhedron_up.txt".into(), up.to_text()),
            ("polyhedron_dn.txt".into(), dn.to_text()),
            ("polyhedron.json".into(), text),
        ],
        exit: 0,
    })
}

fn diagrams(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let [p, q, n, m] = cfg.counts;
    let counts = VertexCounts::new(p, q, n, m);
    let graphs = enumerate_ggraphs(counts, cfg.vertex_cap)?;
    let ds = enumerate_diagrams(counts, cfg.linked_only, cfg.vertex_cap)?;
    let mut dump = header("diagrams", cfg);
    for d in &ds {
        dump.push_str(&d.dump());
        dump.push('\n');
    }
    let stdout = format!("counts = {p} {q} {n} {m}\ngraphs = {}\ndiagrams = {}\n", graphs.len(), ds.len());
    Ok(Outcome { stdout, files: vec![("diagrams.txt".into(), dump)], exit: 0 })
}

/// External grid indices: `n` up positions then `m` down positions, cycling through the
/// configured points.
fn external_indices(cfg: &RunConfig, t: &Torus, count: usize) -> Result<Vec<usize>, CliError> {
    if cfg.externals.len() < count {
        return Err(ConfigError::Invalid(format!("need {count} external points, `externals` has {}", cfg.externals.len())).into());
    }
    Ok(cfg.externals[..count].iter().map(|x| t.snap(x)).collect())
}

fn expand(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = trial_state(cfg)?;
    let k = spec.kernels()?;
    let caps = caps(cfg);
    let norm = normalization_constant(&k, &caps)?;
    let mut csv = header("series", cfg);
    let _ = writeln!(csv, "# finite_sum={:.12e} linked_exp={:.12e} tail={:.12e} gap={:.12e}", norm.finite_sum, norm.linked_exp, norm.tail, norm.gap);
    let (n, m) = cfg.target;
    let mut stdout = format!("finite_sum = {:.12e}\nlinked_exp = {:.12e}\n", norm.finite_sum, norm.linked_exp);
    let mut rows = normalization_csv(&norm);
    if n + m > 0 {
        let ext = external_indices(cfg, &spec.torus, n + m)?;
        let rho = reduced_density(&k, n, m, &ext, &caps)?;
        let table = graded_partial_sums(&k, n, m, &ext, &caps, &spec.grading_params())?;
        let _ = writeln!(csv, "# rho({n};{m})={:.12e} raw={:.12e} tail={:.12e} fitted_c={:.12e}", rho.value, rho.raw_value, rho.tail, table.fitted_c);
        let _ = writeln!(stdout, "rho({n};{m}) = {:.12e}", rho.value);
        rows.push_str(&graded_csv(&table));
    }
    csv.push_str(SERIES_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&rows);
    let inputs = ConvergenceInputs::compute(&spec.up, &spec.dn, Some(&spec.scattering), cfg.grid_m)?;
    let g = spec.grading_params();
    let mon = convergence_monitor(&inputs, g.s, g.n_total, g.a, g.b, g.rho, cfg.threshold);
    let _ = writeln!(stdout, "monitor kernel_product = {:.6e} schedule_product = {:.6e} pass = {}", mon.kernel_product, mon.schedule_product, mon.pass);
    Ok(Outcome { stdout, files: vec![("series.csv".into(), csv)], exit: 0 })
}

fn energy(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = trial_state(cfg)?;
    let breakdown = assemble(&spec, cfg.order_k)?;
    let report = json!({
        "schema": format!("ggr-energy/{SCHEMA_VERSION}"),
        "config_hash": config_hash(cfg),
        "caps": { "K": cfg.order_k, "k_max": cfg.k_max, "n_g_max": cfg.n_g_max, "vertex_cap": cfg.vertex_cap },
        "fitted_constants_note": "fitted from measured low-order data",
        "breakdown": breakdown,
    });
    let text = serde_json::to_string_pretty(&report).expect("json") + "\n";
    Ok(Outcome { stdout: text.clone(), files: vec![("energy.json".into(), text)], exit: 0 })
}

struct VerifyRow {
    target: String,
    expansion: f64,
    oracle: f64,
    tolerance: f64,
}

fn verify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = trial_state(cfg)?;
    let k = spec.kernels()?;
    let caps = caps(cfg);
    let oracle = Oracle::from_solution(spec.torus, spec.up.clone(), spec.dn.clone(), &spec.scattering)?;
    let (nu, nd) = (spec.up.len(), spec.dn.len());
    let mut rows = vec![];
    let norm = normalization_constant(&k, &caps)?;
    let c = oracle.brute_normalization(cfg.budget)?;
    rows.push(VerifyRow { target: "C_N".into(), expansion: norm.finite_sum, oracle: c, tolerance: cfg.tolerance * c.abs() + norm.tail });
    let t = &spec.torus;
    let pts: Vec<usize> = cfg.externals.iter().map(|x| t.snap(x)).collect();
    let mut targets = vec![];
    if nu >= 1 {
        targets.push((1, 0));
    }
    if nd >= 1 {
        targets.push((0, 1));
    }
    if pts.len() >= 2 {
        if nu >= 1 && nd >= 1 {
            targets.push((1, 1));
        }
        if nu >= 2 {
            targets.push((2, 0));
        }
        if nd >= 2 {
            targets.push((0, 2));
        }
    }
    for (n, m) in targets {
        let ext = &pts[..n + m];
        let e = reduced_density(&k, n, m, ext, &caps)?;
        let o = oracle.brute_reduced_density(n, m, ext, c, cfg.budget)?;
        rows.push(VerifyRow { target: format!("rho({n};{m})"), expansion: e.value, oracle: o, tolerance: cfg.tolerance * o.abs() + e.tail });
    }
    let mut table = header("verify", cfg);
    table.push_str("target,expansion,oracle,residual,tolerance,status\n");
    let mut failed = false;
    for r in &rows {
        let residual = (r.expansion - r.oracle).abs();
        let ok = residual <= r.tolerance;
        failed |= !ok;
        let _ = writeln!(
            table,
            "{},{:.12e},{:.12e},{:.6e},{:.6e},{}",
            r.target,
            r.expansion,
            r.oracle,
            residual,
            r.tolerance,
            if ok { "pass" } else { "FAIL" }
        );
    }
    Ok(Outcome { stdout: table.clone(), files: vec![("verify.csv".into(), table)], exit: failed as i32 })
}
