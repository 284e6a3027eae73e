//! Command line front end.
//!
//! Settings come from built-in defaults, then an optional flat TOML file
//! (`--config`), then command-line flags. Every output file starts with a
//! provenance line carrying the version, the seed and a SHA-256 hash of the
//! resolved settings, so a run can be repeated exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{
    correspondence_ladder, ito_ladder, orthonormality_error, picard_check, recurrence_errors,
    translation_cross_check, CovariationMode, LadderConfig,
};
use crate::fields::{set_c_check, CoeffField, Polynomial, SetCMode, SetCSpec};
use crate::functions::FunctionSpec;
use crate::hermite::{Basis, BasisSpec};
use crate::lab::{
    localized_norm_check, norm_estimate_check, run_ensemble, write_observable_csv, EnsembleConfig, Observable,
    Scenario, StatReport, Thresholds, XiMixture,
};
use crate::sde::{
    simulate_ensemble, InitialLaw, PolynomialCoefficients, QuarticLaw, SdeProblem, CUBIC_EXIT_LEVEL,
    LIPSCHITZ_EXIT_LEVEL,
};
use crate::sobolev::{tau_poly_bound, translation_matrix, write_coeff_csv, SobolevVector, TranslationMethod};
use crate::stats::{mean, variance};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HSLIFT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "hs-lift", version, about = "Hermite-Sobolev lifting of finite-dimensional SDEs")]
pub struct Cli {
    /// Flat TOML file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Base seed of every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a function or distribution in the Hermite basis.
    Expand(ExpandArgs),
    /// Sobolev norms of an expansion across truncation levels.
    Norms(NormsArgs),
    /// Translate an expansion by a point.
    Translate(TranslateArgs),
    /// Euler-Maruyama ensemble of the finite-dimensional SDE.
    Sde(SdeArgs),
    /// Lifted against Galerkin trajectories across a step-size ladder.
    Correspondence(CorrespondenceArgs),
    /// Residual of the discrete Itô formula for translates.
    ItoCheck(ItoArgs),
    /// Stationarity battery of the lifted process.
    Stationarity(StationarityArgs),
    /// Run the built-in property checks.
    Selftest(SelftestArgs),
}

/// Settings shared by the simulation commands.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// ou, quartic, zero or custom.
    #[arg(long)]
    pub example: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Truncation degree.
    #[arg(long = "N")]
    pub n: Option<u32>,
    /// Regularity index.
    #[arg(long, allow_hyphen_values = true)]
    pub p: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Horizon.
    #[arg(long = "T")]
    pub t: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Comma-separated initial conditions, e.g. `psi1,psi2`.
    #[arg(long)]
    pub xi: Option<String>,
    /// Comma-separated mixture weights matching `--xi`.
    #[arg(long)]
    pub mix: Option<String>,
    /// Fixed start `Z_0` in place of the example's stationary law.
    #[arg(long, allow_hyphen_values = true)]
    pub z0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long = "fn")]
    pub function: String,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<u32>,
    /// Tag of the expansion.
    #[arg(long, allow_hyphen_values = true)]
    pub p: Option<f64>,
    /// Comma-separated indices for the norm table.
    #[arg(long, allow_hyphen_values = true)]
    pub norms: Option<String>,
}

#[derive(Debug, Args)]
pub struct NormsArgs {
    #[arg(long = "fn")]
    pub function: String,
    /// Comma-separated indices.
    #[arg(long, allow_hyphen_values = true)]
    pub p: Option<String>,
    /// Comma-separated truncation degrees.
    #[arg(long = "N")]
    pub n: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Exp,
    Quadrature,
    Both,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long = "fn")]
    pub function: String,
    /// Comma-separated shift coordinates.
    #[arg(long, allow_hyphen_values = true)]
    pub x: String,
    #[arg(long = "N")]
    pub n: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    pub p: Option<f64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pub method: MethodArg,
}

#[derive(Debug, Args)]
pub struct SdeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of recording times after 0.
    #[arg(long, default_value_t = 10)]
    pub records: usize,
}

#[derive(Debug, Args)]
pub struct CorrespondenceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub halvings: Option<usize>,
    /// Largest accepted relative distance at the coarsest step.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariationArg {
    Bracket,
    Realized,
}

#[derive(Debug, Args)]
pub struct ItoArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub halvings: Option<usize>,
    #[arg(long, value_enum, default_value_t = CovariationArg::Bracket)]
    pub covariation: CovariationArg,
}

#[derive(Debug, Args)]
pub struct StationarityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated recording times; the first is compared with the rest.
    #[arg(long)]
    pub times: Option<String>,
    /// Comma-separated observables, e.g. `h0,h2,norm(1)`.
    #[arg(long)]
    pub observables: Option<String>,
    #[arg(long)]
    pub z_max: Option<f64>,
    #[arg(long)]
    pub ks_c: Option<f64>,
    /// Skip the norm-estimate ensemble.
    #[arg(long)]
    pub no_norm_check: bool,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Reduced sizes.
    #[arg(long)]
    pub quick: bool,
}

/// Flat configuration file. Every key is optional; flags override it.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub example: Option<String>,
    pub d: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<u32>,
    pub p: Option<f64>,
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub xi: Option<Vec<String>>,
    pub mix: Option<Vec<f64>>,
    pub z0: Option<f64>,
    pub times: Option<Vec<f64>>,
    pub observables: Option<Vec<String>>,
    pub z_max: Option<f64>,
    pub ks_c: Option<f64>,
    pub halvings: Option<usize>,
    pub tolerance: Option<f64>,
    pub output_dir: Option<PathBuf>,
    /// Univariate coefficients (constant first) of `σ`, `b`, `f`, `g` for
    /// `example = "custom"` in one dimension.
    pub custom_sigma: Option<Vec<f64>>,
    pub custom_b: Option<Vec<f64>>,
    pub custom_f: Option<Vec<f64>>,
    pub custom_g: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

/// Provenance of one run, written at the top of every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    fn new<S: Serialize>(command: &str, seed: u64, settings: &S) -> Self {
        let json = serde_json::to_string(settings).expect("settings serialize");
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(b"\n");
        h.update(json.as_bytes());
        let config_hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Provenance {
            version: VERSION.to_string(),
            command: command.to_string(),
            seed,
            config_hash,
        }
    }

    pub fn header_line(&self) -> String {
        format!(
            "# hs-lift {} command={} seed={} config={}",
            self.version, self.command, self.seed, self.config_hash
        )
    }
}

/// Everything a command needs besides its own flags.
struct Context {
    file: FileConfig,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn write(&self, name: &str, prov: &Provenance, body: &[u8]) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let mut f = fs::File::create(&path)?;
        writeln!(f, "{}", prov.header_line())?;
        f.write_all(body)?;
        Ok(path)
    }

    /// Coefficient files keep their JSON header first so they load back;
    /// the provenance line follows it.
    fn write_coeffs(&self, name: &str, prov: &Provenance, v: &SobolevVector) -> Result<PathBuf> {
        let mut buf = Vec::new();
        write_coeff_csv(v, &mut buf)?;
        let split = buf.iter().position(|b| *b == b'\n').map_or(buf.len(), |k| k + 1);
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(&buf[..split])?;
        writeln!(f, "{}", prov.header_line())?;
        f.write_all(&buf[split..])?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, prov: &Provenance, report: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            provenance: &'a Provenance,
            report: &'a T,
        }
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(&Wrapped { provenance: prov, report })
            .map_err(|e| Error::InvalidArgument(format!("report serialization: {e}")))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} '{t}'")))
        })
        .collect()
}

/// Split on commas that are not inside parentheses.
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// Simulation settings after merging defaults, file and flags.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    example: String,
    d: usize,
    n: u32,
    p: f64,
    dt: f64,
    t: f64,
    paths: usize,
    xi: Vec<String>,
    mix: Vec<f64>,
    z0: Option<f64>,
    custom: Option<[Vec<f64>; 4]>,
}

struct Defaults {
    example: &'static str,
    n: u32,
    p: f64,
    dt: f64,
    t: f64,
    paths: usize,
    xi: &'static str,
}

fn resolve(common: &Common, file: &FileConfig, def: Defaults) -> Result<Resolved> {
    let example = common
        .example
        .clone()
        .or_else(|| file.example.clone())
        .unwrap_or_else(|| def.example.to_string())
        .to_ascii_lowercase();
    if !matches!(example.as_str(), "ou" | "quartic" | "zero" | "custom") {
        return Err(Error::InvalidArgument(format!("unknown example '{example}'")));
    }
    let xi = match (&common.xi, &file.xi) {
        (Some(s), _) => split_top_level(s),
        (None, Some(v)) => v.clone(),
        (None, None) => split_top_level(def.xi),
    };
    let mix = match (&common.mix, &file.mix) {
        (Some(s), _) => parse_list(s, "weight")?,
        (None, Some(v)) => v.clone(),
        (None, None) => vec![1.0; xi.len()],
    };
    let custom = if example == "custom" {
        match (&file.custom_sigma, &file.custom_b, &file.custom_f, &file.custom_g) {
            (Some(s), Some(b), Some(f), Some(g)) => Some([s.clone(), b.clone(), f.clone(), g.clone()]),
            _ => {
                return Err(Error::InvalidArgument(
                    "example = custom needs custom_sigma, custom_b, custom_f and custom_g".into(),
                ))
            }
        }
    } else {
        None
    };
    let d = common.d.or(file.d).unwrap_or(1);
    if d == 0 || (custom.is_some() && d != 1) {
        return Err(Error::InvalidArgument(format!("dimension {d} not supported here")));
    }
    Ok(Resolved {
        example,
        d,
        n: common.n.or(file.n).unwrap_or(def.n),
        p: common.p.or(file.p).unwrap_or(def.p),
        dt: positive("dt", common.dt.or(file.dt).unwrap_or(def.dt))?,
        t: positive("T", common.t.or(file.t).unwrap_or(def.t))?,
        paths: common.paths.or(file.paths).unwrap_or(def.paths).max(1),
        xi,
        mix,
        z0: common.z0.or(file.z0),
        custom,
    })
}

impl Resolved {
    fn basis(&self) -> Arc<Basis> {
        Basis::new(BasisSpec::new(self.d, self.n))
    }

    fn field(&self, basis: &Arc<Basis>) -> Result<CoeffField> {
        match self.example.as_str() {
            "ou" => CoeffField::ou(basis, self.p),
            "quartic" => CoeffField::quartic(basis, self.p),
            "zero" => CoeffField::zero(basis, self.p),
            _ => {
                let c = self.custom.as_ref().expect("custom coefficients resolved");
                CoeffField::from_polynomials(
                    basis,
                    self.p,
                    vec![Polynomial::univariate(&c[0])],
                    vec![Polynomial::univariate(&c[1])],
                )
            }
        }
    }

    fn exit_level(&self) -> f64 {
        match &self.custom {
            Some(c) if c[1].len() > 2 || c[0].len() > 2 => CUBIC_EXIT_LEVEL,
            Some(_) => LIPSCHITZ_EXIT_LEVEL,
            None if self.example == "quartic" => CUBIC_EXIT_LEVEL,
            None => LIPSCHITZ_EXIT_LEVEL,
        }
    }

    fn scenario(&self) -> Scenario {
        let base = match self.example.as_str() {
            "ou" => Scenario::ou(self.d),
            "quartic" => Scenario::quartic(self.d),
            "zero" => Scenario::zero(self.d),
            _ => {
                let c = self.custom.as_ref().expect("custom coefficients resolved");
                Scenario {
                    name: "custom".into(),
                    problem: SdeProblem::new(
                        Arc::new(PolynomialCoefficients {
                            f: vec![Polynomial::univariate(&c[2])],
                            g: vec![Polynomial::univariate(&c[3])],
                        }),
                        self.exit_level(),
                    ),
                    law: InitialLaw::Point(vec![0.0]),
                }
            }
        };
        match self.z0 {
            Some(z) => base.with_start(vec![z; self.d]),
            None => base,
        }
    }

    fn mixture(&self) -> Result<XiMixture> {
        let members = self
            .xi
            .iter()
            .map(|s| s.parse::<FunctionSpec>())
            .collect::<Result<Vec<_>>>()?;
        XiMixture::new(members, self.mix.clone())
    }

    fn first_xi(&self, basis: &Arc<Basis>) -> Result<SobolevVector> {
        let f: FunctionSpec = self
            .xi
            .first()
            .ok_or_else(|| Error::InvalidArgument("no initial condition given".into()))?
            .parse()?;
        f.coefficients(basis, self.p)
    }

    fn start(&self) -> Vec<f64> {
        vec![self.z0.unwrap_or(0.0); self.d]
    }
}

/// Run the parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli
        .out
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context { file, seed, out };
    match &cli.command {
        Command::Expand(a) => cmd_expand(&ctx, a),
        Command::Norms(a) => cmd_norms(&ctx, a),
        Command::Translate(a) => cmd_translate(&ctx, a),
        Command::Sde(a) => cmd_sde(&ctx, a),
        Command::Correspondence(a) => cmd_correspondence(&ctx, a),
        Command::ItoCheck(a) => cmd_ito(&ctx, a),
        Command::Stationarity(a) => cmd_stationarity(&ctx, a),
        Command::Selftest(a) => cmd_selftest(&ctx, a),
    }
}

fn file_stem(spec: &str) -> String {
    spec.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Warn when a distribution is expanded at a tag where it does not belong.
fn regularity_warning(f: &FunctionSpec, d: usize, p: f64) -> Option<String> {
    let t = f.tag_threshold(d)?;
    (p >= -t).then(|| format!("warning: {f} lies in S_q only for q < -{t}; tag {p} is above that threshold"))
}

fn cmd_expand(ctx: &Context, a: &ExpandArgs) -> Result<Outcome> {
    #[derive(Serialize)]
    struct S<'a> {
        function: &'a str,
        d: usize,
        n: u32,
        p: f64,
        norms: Vec<f64>,
    }
    let f: FunctionSpec = a.function.parse()?;
    let d = a.d.or(ctx.file.d).unwrap_or(1);
    let n = a.n.or(ctx.file.n).unwrap_or(40);
    let p = a.p.or(ctx.file.p).unwrap_or(0.0);
    let norms: Vec<f64> = match &a.norms {
        Some(s) => parse_list(s, "index")?,
        None => vec![p - 1.0, p, p + 1.0],
    };
    let settings = S {
        function: &a.function,
        d,
        n,
        p,
        norms: norms.clone(),
    };
    let prov = Provenance::new("expand", ctx.seed, &settings);
    if let Some(w) = regularity_warning(&f, d, p) {
        eprintln!("{w}");
    }
    let basis = Basis::new(BasisSpec::new(d, n));
    let v = f.coefficients(&basis, p)?;
    let stem = file_stem(&a.function);
    let coeff_path = ctx.write_coeffs(&format!("expand_{stem}.csv"), &prov, &v)?;
    let mut table = String::from("q,norm\n");
    println!("{}", prov.header_line());
    println!("{:>8}  {:>24}", "q", "norm");
    for q in &norms {
        let nv = v.norm(*q);
        table += &format!("{q},{nv:.17e}\n");
        println!("{q:>8}  {nv:>24.12e}");
    }
    ctx.write(&format!("expand_{stem}_norms.csv"), &prov, table.as_bytes())?;
    println!("coefficients: {}", coeff_path.display());
    Ok(Outcome::Pass)
}

fn cmd_norms(ctx: &Context, a: &NormsArgs) -> Result<Outcome> {
    #[derive(Serialize)]
    struct S<'a> {
        function: &'a str,
        p: Vec<f64>,
        n: Vec<u32>,
    }
    let f: FunctionSpec = a.function.parse()?;
    let ps: Vec<f64> = match &a.p {
        Some(s) => parse_list(s, "index")?,
        None => vec![-2.0, -1.0, 0.0, 1.0],
    };
    let ns: Vec<u32> = match &a.n {
        Some(s) => parse_list(s, "degree")?,
        None => vec![10, 20, 40, 80, 160],
    };
    let prov = Provenance::new(
        "norms",
        ctx.seed,
        &S {
            function: &a.function,
            p: ps.clone(),
            n: ns.clone(),
        },
    );
    let mut table = String::from("N,q,norm\n");
    println!("{}", prov.header_line());
    for &n in &ns {
        let basis = Basis::one_dim(n);
        let v = f.coefficients(&basis, 0.0)?;
        for &q in &ps {
            let nv = v.norm(q);
            table += &format!("{n},{q},{nv:.17e}\n");
            println!("N={n:<6} q={q:<6} {nv:.12e}");
        }
    }
    let path = ctx.write(&format!("norms_{}.csv", file_stem(&a.function)), &prov, table.as_bytes())?;
    println!("table: {}", path.display());
    Ok(Outcome::Pass)
}

fn cmd_translate(ctx: &Context, a: &TranslateArgs) -> Result<Outcome> {
    #[derive(Serialize)]
    struct S<'a> {
        function: &'a str,
        x: Vec<f64>,
        n: u32,
        p: f64,
        method: MethodArg,
    }
    let f: FunctionSpec = a.function.parse()?;
    let x: Vec<f64> = parse_list(&a.x, "coordinate")?;
    let n = a.n.or(ctx.file.n).unwrap_or(40);
    let p = a.p.or(ctx.file.p).unwrap_or(1.0);
    let prov = Provenance::new(
        "translate",
        ctx.seed,
        &S {
            function: &a.function,
            x: x.clone(),
            n,
            p,
            method: a.method,
        },
    );
    let basis = Basis::new(BasisSpec::new(x.len(), n));
    let v = f.coefficients(&basis, p)?;
    let exp = translation_matrix(&x, &basis, TranslationMethod::Exp)?.apply(&v, p)?;
    println!("{}", prov.header_line());
    println!("||f||_{p} = {:.12e}", v.norm(p));
    println!("||tau_x f||_{p} = {:.12e}", exp.norm(p));
    let chosen = match a.method {
        MethodArg::Quadrature => translation_matrix(&x, &basis, TranslationMethod::Quadrature)?.apply(&v, p)?,
        _ => exp.clone(),
    };
    if a.method == MethodArg::Both {
        let quad = translation_matrix(&x, &basis, TranslationMethod::Quadrature)?.apply(&v, p)?;
        let diff = exp.sub(&quad)?.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        println!("max |exp - quadrature| coefficient difference = {diff:.3e}");
    }
    let path = ctx.write_coeffs(&format!("translate_{}.csv", file_stem(&a.function)), &prov, &chosen)?;
    println!("coefficients: {}", path.display());
    Ok(Outcome::Pass)
}

fn cmd_sde(ctx: &Context, a: &SdeArgs) -> Result<Outcome> {
    let r = resolve(
        &a.common,
        &ctx.file,
        Defaults {
            example: "ou",
            n: 40,
            p: 1.0,
            dt: 1e-3,
            t: 1.0,
            paths: 1000,
            xi: "psi2",
        },
    )?;
    #[derive(Serialize)]
    struct S<'a> {
        resolved: &'a Resolved,
        records: usize,
    }
    let prov = Provenance::new("sde", ctx.seed, &S { resolved: &r, records: a.records });
    let scenario = r.scenario();
    let steps = (r.t / r.dt).round() as usize;
    let results = simulate_ensemble(&scenario.problem, &scenario.law, ctx.seed, r.paths, r.dt, steps);
    let mut paths = Vec::with_capacity(results.len());
    for res in results {
        paths.push(res?);
    }
    let exploded = paths.iter().filter(|p| p.exploded).count();
    let records = a.records.max(1);
    let mut table = String::from("t,observable,value,std_err\n");
    for j in 0..=records {
        let k = steps * j / records;
        let xs: Vec<f64> = paths.iter().filter_map(|p| p.state(k).map(|s| s[0])).collect();
        let t = k as f64 * r.dt;
        let se = (variance(&xs) / xs.len() as f64).sqrt();
        table += &format!("{t},mean(z1),{:.17e},{se:.17e}\n", mean(&xs));
        table += &format!("{t},var(z1),{:.17e},\n", variance(&xs));
    }
    println!("{}", prov.header_line());
    println!("paths {} exploded {exploded}", paths.len());
    let summary = ctx.write("sde_summary.csv", &prov, table.as_bytes())?;
    let mut first = Vec::new();
    paths[0].write_csv(&mut first)?;
    ctx.write("sde_path0.csv", &prov, &first)?;
    println!("summary: {}", summary.display());
    Ok(Outcome::Pass)
}

fn cmd_correspondence(ctx: &Context, a: &CorrespondenceArgs) -> Result<Outcome> {
    let r = resolve(
        &a.common,
        &ctx.file,
        Defaults {
            example: "ou",
            n: 40,
            p: 1.0,
            dt: 1e-3,
            t: 0.5,
            paths: 128,
            xi: "psi2",
        },
    )?;
    let halvings = a.halvings.or(ctx.file.halvings).unwrap_or(3);
    let tolerance = a.tolerance.or(ctx.file.tolerance).unwrap_or(0.05);
    #[derive(Serialize)]
    struct S<'a> {
        resolved: &'a Resolved,
        halvings: usize,
        tolerance: f64,
    }
    let prov = Provenance::new(
        "correspondence",
        ctx.seed,
        &S {
            resolved: &r,
            halvings,
            tolerance,
        },
    );
    let basis = r.basis();
    let field = r.field(&basis)?;
    let xi = r.first_xi(&basis)?;
    let cfg = LadderConfig {
        dt: r.dt,
        halvings,
        horizon: r.t,
        n_paths: r.paths,
        seed: ctx.seed,
    };
    let ladder = correspondence_ladder(&field, &xi, &r.start(), r.exit_level(), &cfg)?;
    let mut buf = Vec::new();
    ladder.write_csv(&mut buf)?;
    let path = ctx.write("correspondence.csv", &prov, &buf)?;
    println!("{}", prov.header_line());
    for rung in &ladder.rungs {
        println!("dt {:.6e}  relative distance {:.6e}", rung.dt, rung.value);
    }
    println!("slope {:.4}  excluded paths {}", ladder.slope, ladder.excluded);
    let coarse = ladder.rungs[0].value;
    let all_zero = ladder.rungs.iter().all(|r| r.value == 0.0);
    let ok = coarse <= tolerance && (all_zero || ladder.strictly_decreasing());
    println!("ladder: {}", path.display());
    println!("verdict: {}", if ok { "pass" } else { "fail" });
    Ok(Outcome::from_bool(ok))
}

fn cmd_ito(ctx: &Context, a: &ItoArgs) -> Result<Outcome> {
    let r = resolve(
        &a.common,
        &ctx.file,
        Defaults {
            example: "ou",
            n: 40,
            p: 1.0,
            dt: 2f64.powi(-7),
            t: 1.0,
            paths: 16,
            xi: "psi1",
        },
    )?;
    let halvings = a.halvings.or(ctx.file.halvings).unwrap_or(4);
    #[derive(Serialize)]
    struct S<'a> {
        resolved: &'a Resolved,
        halvings: usize,
        covariation: CovariationArg,
    }
    let prov = Provenance::new(
        "ito-check",
        ctx.seed,
        &S {
            resolved: &r,
            halvings,
            covariation: a.covariation,
        },
    );
    let basis = r.basis();
    let xi = r.first_xi(&basis)?;
    let scenario = r.scenario();
    let mode = match a.covariation {
        CovariationArg::Bracket => CovariationMode::Bracket,
        CovariationArg::Realized => CovariationMode::Realized,
    };
    let cfg = LadderConfig {
        dt: r.dt,
        halvings,
        horizon: r.t,
        n_paths: r.paths,
        seed: ctx.seed,
    };
    let ladder = ito_ladder(&scenario.problem, &xi, r.p, &r.start(), mode, &cfg)?;
    let mut buf = Vec::new();
    ladder.write_csv(&mut buf)?;
    let path = ctx.write("ito.csv", &prov, &buf)?;
    println!("{}", prov.header_line());
    for rung in &ladder.rungs {
        println!("dt {:.6e}  mean max residual {:.6e}", rung.dt, rung.value);
    }
    // realized covariation converges at first order, so only the lower end applies
    let (lo, hi) = match mode {
        CovariationMode::Bracket => (0.35, 0.65),
        CovariationMode::Realized => (0.35, f64::INFINITY),
    };
    let ok = ladder.slope >= lo && ladder.slope <= hi;
    println!("slope {:.4} (window [{lo}, {hi}])", ladder.slope);
    println!("ladder: {}", path.display());
    println!("verdict: {}", if ok { "pass" } else { "fail" });
    Ok(Outcome::from_bool(ok))
}

fn cmd_stationarity(ctx: &Context, a: &StationarityArgs) -> Result<Outcome> {
    let r = resolve(
        &a.common,
        &ctx.file,
        Defaults {
            example: "ou",
            n: 40,
            p: 1.0,
            dt: 1e-3,
            t: 1.0,
            paths: 10_000,
            xi: "psi2",
        },
    )?;
    let times: Vec<f64> = match (&a.times, &ctx.file.times) {
        (Some(s), _) => parse_list(s, "time")?,
        (None, Some(v)) => v.clone(),
        (None, None) => vec![0.0, 0.5, 1.0, 2.0],
    };
    if times.len() < 2 {
        return Err(Error::InvalidArgument("need at least two recording times".into()));
    }
    let observables: Vec<String> = match (&a.observables, &ctx.file.observables) {
        (Some(s), _) => split_top_level(s),
        (None, Some(v)) => v.clone(),
        (None, None) => vec!["h0".into(), "h2".into(), format!("norm({})", r.p)],
    };
    let th = Thresholds {
        z_max: a.z_max.or(ctx.file.z_max).unwrap_or(3.0),
        ks_c: a.ks_c.or(ctx.file.ks_c).unwrap_or(1.36),
    };
    #[derive(Serialize)]
    struct S<'a> {
        resolved: &'a Resolved,
        times: &'a [f64],
        observables: &'a [String],
        thresholds: Thresholds,
        norm_check: bool,
    }
    let prov = Provenance::new(
        "stationarity",
        ctx.seed,
        &S {
            resolved: &r,
            times: &times,
            observables: &observables,
            thresholds: th,
            norm_check: !a.no_norm_check,
        },
    );
    let scenario = r.scenario();
    let obs = observables
        .iter()
        .map(|s| s.parse::<Observable>())
        .collect::<Result<Vec<_>>>()?;
    let config = EnsembleConfig {
        max_degree: r.n,
        p: r.p,
        dt: r.dt,
        times: times.clone(),
        n_paths: r.paths,
        seed: ctx.seed,
        xi: r.mixture()?,
        observables: obs,
        track_sup: None,
    };
    let ens = run_ensemble(&scenario, &config)?;
    let pairs: Vec<(usize, usize)> = (1..times.len()).map(|j| (0, j)).collect();
    let reference = match (r.example.as_str(), r.d) {
        ("ou", 1) => Some((0.0, 0.5)),
        ("quartic", 1) => Some((0.0, QuarticLaw::STATIONARY.second_moment())),
        _ => None,
    };
    let mut report = StatReport::build(&ens, &pairs, &th, reference)?;
    if !a.no_norm_check && r.d == 1 {
        let norm_cfg = EnsembleConfig {
            times: vec![0.0, r.t],
            n_paths: r.paths.min(2000),
            seed: ctx.seed.wrapping_add(1),
            observables: vec![Observable::Norm(r.p)],
            track_sup: Some(3.0),
            ..config.clone()
        };
        let norm_ens = run_ensemble(&scenario, &norm_cfg)?;
        let radii: Vec<f64> = (0..=16).map(|k| 0.5 * k as f64).collect();
        let (envelope, _) = tau_poly_bound(r.p, &radii, &r.basis(), 0.05)?;
        let estimate = norm_estimate_check(&norm_ens, &envelope)?;
        let localized = localized_norm_check(&norm_ens, &envelope)?;
        report = report.with_norm_checks(estimate, localized);
    }
    let json = ctx.write_json("stationarity_report.json", &prov, &report)?;
    let mut buf = Vec::new();
    write_observable_csv(&ens, &mut buf)?;
    ctx.write("stationarity_observables.csv", &prov, &buf)?;
    println!("{}", prov.header_line());
    for v in &report.verdicts {
        println!(
            "{:<12} t={:<5} s={:<5} mean_z={:+.3} var_z={:+.3} ks={:.4}/{:.4} {}",
            v.observable,
            v.t,
            v.s,
            v.mean_z,
            v.variance_z,
            v.ks,
            v.ks_critical,
            if v.pass { "pass" } else { "FAIL" }
        );
    }
    for m in &report.marginals {
        println!(
            "z1 marginal t={:<5} mean_z={:+.3} var_z={:+.3} {}",
            m.t,
            m.mean_z,
            m.variance_z,
            if m.pass { "pass" } else { "FAIL" }
        );
    }
    if let (Some(e), Some(l)) = (&report.norm_estimate, &report.localized) {
        println!(
            "norm estimate: ratio {:.4} structural {:.4}; localized violations {}",
            e.ratio,
            e.structural,
            l.violations.len()
        );
    }
    println!("valid {} excluded {}", report.valid, report.excluded);
    println!("report: {}", json.display());
    println!("verdict: {}", if report.pass { "pass" } else { "fail" });
    Ok(Outcome::from_bool(report.pass))
}

/// One row of the self-test table.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: String,
    pub pass: bool,
}

fn row(name: &str, value: f64, tolerance: String, pass: bool) -> CheckRow {
    CheckRow {
        name: name.to_string(),
        value,
        tolerance,
        pass,
    }
}

/// The self-test battery; `quick` shrinks sizes.
pub fn selftest_rows(seed: u64, quick: bool) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let n1 = if quick { 15 } else { 30 };
    let e = orthonormality_error(1, n1)?;
    rows.push(row(&format!("orthonormality d=1 N={n1}"), e, "<= 1e-10".into(), e <= 1e-10));
    let n2 = if quick { 6 } else { 12 };
    let e = orthonormality_error(2, n2)?;
    rows.push(row(&format!("orthonormality d=2 N={n2}"), e, "<= 1e-9".into(), e <= 1e-9));

    let grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.1).collect();
    let rec = recurrence_errors(n1, &grid, 1e-3)?;
    rows.push(row("derivative recurrence", rec.derivative, "<= 1e-6".into(), rec.derivative <= 1e-6));
    rows.push(row(
        "multiplication recurrence",
        rec.multiplication,
        "<= 1e-6".into(),
        rec.multiplication <= 1e-6,
    ));

    let tr = translation_cross_check(40, 30, &[-1.0, 0.5, 1.0])?;
    rows.push(row("translation exp vs quadrature |x|<=1", tr.worst(), "<= 1e-6".into(), tr.worst() <= 1e-6));
    rows.push(row("translation orthogonality", tr.orthogonality, "<= 1e-10".into(), tr.orthogonality <= 1e-10));

    let basis = Basis::one_dim(60);
    let quartic = CoeffField::quartic(&basis, 2.0)?;
    let spec = SetCSpec::fixed_point_of(&quartic, 1e-10)?;
    for f in [FunctionSpec::Psi1, FunctionSpec::Psi2] {
        let psi = f.coefficients(&basis, 2.0)?;
        let rep = set_c_check(&psi, &quartic, &spec, &SetCMode::Polynomial)?;
        rows.push(row(&format!("set C membership {f}"), rep.max_residual, "<= 1e-10".into(), rep.member));
    }

    let ito_basis = Basis::one_dim(40);
    let xi = FunctionSpec::Psi1.coefficients(&ito_basis, 1.0)?;
    let cfg = LadderConfig {
        dt: 2f64.powi(-7),
        halvings: if quick { 2 } else { 4 },
        horizon: 1.0,
        n_paths: if quick { 8 } else { 16 },
        seed,
    };
    let ladder = ito_ladder(&SdeProblem::ou(1), &xi, 1.0, &[0.0], CovariationMode::Bracket, &cfg)?;
    rows.push(row(
        "Ito residual slope",
        ladder.slope,
        "in [0.35, 0.65]".into(),
        (0.35..=0.65).contains(&ladder.slope),
    ));

    let pc = picard_check(
        &SdeProblem::ou(1),
        &[0.0],
        1.0,
        2f64.powi(-8),
        8,
        if quick { 64 } else { 256 },
        seed,
        1.0,
        1.0,
        &[],
    )?;
    rows.push(row(
        "Picard envelope worst ratio",
        pc.fitted_worst_ratio.max(pc.structural_worst_ratio),
        "<= 1".into(),
        pc.envelope_holds(),
    ));
    Ok(rows)
}

fn cmd_selftest(ctx: &Context, a: &SelftestArgs) -> Result<Outcome> {
    #[derive(Serialize)]
    struct S {
        quick: bool,
    }
    let prov = Provenance::new("selftest", ctx.seed, &S { quick: a.quick });
    let rows = selftest_rows(ctx.seed, a.quick)?;
    println!("{}", prov.header_line());
    println!("{:<42} {:>14}  {:<16} status", "check", "value", "tolerance");
    for r in &rows {
        println!(
            "{:<42} {:>14.6e}  {:<16} {}",
            r.name,
            r.value,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let ok = rows.iter().all(|r| r.pass);
    println!("verdict: {}", if ok { "pass" } else { "fail" });
    Ok(Outcome::from_bool(ok))
}
