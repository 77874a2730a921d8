use std::io::Write as _;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use wlax::diffalg::{DiffPoly, GenId};
use wlax::hierarchy::{run_flow, Example, HierError};
use wlax::liealg::CatalogTag;
use wlax::matpsdo::MatrixPDO;
use wlax::pva::Cutoffs;
use wlax::rational::Rational;
use wlax::wlax::{build_template, eps_id, generic_lax, WlaxError};
use wlax::{suites, worked};

use wlax_cli::payload::{DensityPayload, FlowPayload, OperatorPayload};

#[derive(Parser)]
#[command(name = "wlax", version, about = "Lax operators and integrable hierarchies for classical W-algebras")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    /// Shorthand for --format latex.
    #[arg(long, global = true)]
    latex: bool,
    /// Write output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<std::path::PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Latex,
}

#[derive(Subcommand)]
enum Cmd {
    /// Lax operator of a catalog tag.
    Build {
        tag: String,
        #[arg(long)]
        n: usize,
        #[arg(long, env = "WLAX_FLOOR", default_value_t = -16, allow_hyphen_values = true)]
        floor: i32,
        /// on, off, or a rational value p/q substituted for ε.
        #[arg(long, default_value = "on")]
        epsilon: String,
        /// Also emit the quasideterminant in the raw affine coordinates.
        #[arg(long)]
        generic: bool,
    },
    /// Flows and conserved densities of a worked example.
    Flow {
        example: String,
        #[arg(long)]
        n: i32,
        /// Defaults to the example's own floor.
        #[arg(long, env = "WLAX_FLOOR", allow_hyphen_values = true)]
        floor: Option<i32>,
        /// Use the Miura (modified) operator.
        #[arg(long)]
        modified: bool,
    },
    /// Run a verification suite; exit code 1 if any check fails.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 3)]
        max_n: usize,
        #[arg(long, env = "WLAX_FLOOR", default_value_t = -16, allow_hyphen_values = true)]
        floor: i32,
        #[arg(long, default_value_t = -6, allow_hyphen_values = true)]
        cutoff_z: i32,
        #[arg(long, default_value_t = -6, allow_hyphen_values = true)]
        cutoff_w: i32,
        /// Seconds per crosscheck case before deepening stops.
        #[arg(long, default_value_t = 6)]
        budget: u64,
    },
    /// List catalog tags and worked examples.
    List,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Adler,
    Examples,
    Crosscheck,
    ScalarTable,
}

enum Failure {
    Usage(String),
    Window(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Window(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Window(m) | Failure::Other(m) => m,
        }
    }
}

impl From<WlaxError> for Failure {
    fn from(e: WlaxError) -> Self {
        match e {
            e if e.is_window() => Failure::Window(e.to_string()),
            WlaxError::Lie(_) | WlaxError::BadTag(_) | WlaxError::BadSize(_) => Failure::Usage(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<HierError> for Failure {
    fn from(e: HierError) -> Self {
        match e {
            e if e.is_window() => Failure::Window(e.to_string()),
            HierError::Wlax(w) => w.into(),
            HierError::BadSpec(m) => Failure::Usage(m),
            e => Failure::Other(e.to_string()),
        }
    }
}

/// Text produced by a command and whether every check in it passed.
struct Output {
    body: String,
    passed: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = if cli.latex { Format::Latex } else { cli.format };
    let result = match cli.cmd {
        Cmd::Build { tag, n, floor, epsilon, generic } => cmd_build(&tag, n, floor, &epsilon, generic, format),
        Cmd::Flow { example, n, floor, modified } => cmd_flow(&example, n, floor, modified, format),
        Cmd::Verify { suite, max_n, floor, cutoff_z, cutoff_w, budget } => {
            cmd_verify(suite, max_n, floor, Cutoffs::new(cutoff_z, cutoff_w), Duration::from_secs(budget), format)
        }
        Cmd::List => Ok(cmd_list(format)),
    };
    match result {
        Ok(out) => {
            if let Err(e) = emit(&out.body, cli.out.as_deref()) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            ExitCode::from(if out.passed { 0 } else { 1 })
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn emit(body: &str, out: Option<&std::path::Path>) -> std::io::Result<()> {
    match out {
        Some(p) => std::fs::write(p, body),
        None => std::io::stdout().write_all(body.as_bytes()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("payload serializes");
    s.push('\n');
    s
}

fn render_op(op: &MatrixPDO, format: Format) -> String {
    match format {
        Format::Latex => op.to_latex(),
        _ => op.to_string(),
    }
}

fn render_poly(p: &DiffPoly, format: Format) -> String {
    match format {
        Format::Latex => p.to_latex(),
        _ => p.to_string(),
    }
}

fn render_gen(g: &GenId, format: Format) -> String {
    match format {
        Format::Latex => g.latex(),
        _ => g.text(),
    }
}

fn parse_epsilon(s: &str) -> Result<(bool, Option<Rational>), Failure> {
    match s {
        "on" => Ok((true, None)),
        "off" => Ok((false, None)),
        v => v
            .parse::<Rational>()
            .map(|r| (true, Some(r)))
            .map_err(|_| Failure::Usage(format!("--epsilon expects on, off or p/q, got {v}"))),
    }
}

fn cmd_build(tag: &str, n: usize, floor: i32, epsilon: &str, generic: bool, format: Format) -> Result<Output, Failure> {
    let t = CatalogTag::parse(tag).ok_or_else(|| {
        let names: Vec<&str> = CatalogTag::ALL.iter().map(|t| t.name()).collect();
        Failure::Usage(format!("unknown tag {tag}; expected one of {}", names.join(", ")))
    })?;
    if n == 0 {
        return Err(Failure::Usage("size must be positive".into()));
    }
    let (eps_on, value) = parse_epsilon(epsilon)?;
    let set_eps = |op: MatrixPDO| match &value {
        None => op,
        Some(v) => {
            let map = [(eps_id(), DiffPoly::constant(v.clone()))].into_iter().collect();
            op.map_entries(|e| e.map_coeffs(|c| c.substitute(&map)))
        }
    };
    let (nd, lax) = build_template(t, n, eps_on, floor)?;
    let template = set_eps(lax.op.clone());
    let generic_op = if generic { Some(set_eps(generic_lax(&nd, eps_on, floor)?.op)) } else { None };
    let body = match format {
        Format::Json => json(&OperatorPayload {
            tag: t.name().to_string(),
            n,
            floor,
            epsilon: epsilon.to_string(),
            algebra: nd.algebra.label(),
            template: template.clone(),
            generic: generic_op.clone(),
        }),
        _ => {
            let mut s = format!("{} n={} ({}) floor={}\nL = {}\n", t.name(), n, nd.algebra.label(), floor, render_op(&template, format));
            if let Some(g) = &generic_op {
                s.push_str(&format!("generic = {}\n", render_op(g, format)));
            }
            s
        }
    };
    Ok(Output { body, passed: true })
}

fn cmd_flow(id: &str, n: i32, floor: Option<i32>, modified: bool, format: Format) -> Result<Output, Failure> {
    let ex = Example::parse(id).ok_or_else(|| Failure::Usage(format!("unknown example {id}")))?;
    if n < 1 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let r = run_flow(&ex, n, floor, modified)?;
    let payload = FlowPayload {
        example: r.example.clone(),
        n,
        floor: r.floor,
        modified,
        method: format!("{:?}", r.method).to_lowercase(),
        flows: r.flows.iter().map(|(g, p)| (g.text(), p.clone())).collect(),
        flows_text: r.flows.iter().map(|(g, p)| (g.text(), p.to_string())).collect(),
        densities: r.densities.iter().map(|d| DensityPayload { n: d.n, h: d.h.clone(), text: d.h.to_string() }).collect(),
    };
    let body = match format {
        Format::Json => json(&payload),
        _ => {
            let mut s = format!("{} t{} (floor {}, {})\n", payload.example, n, payload.floor, payload.method);
            for (g, p) in &r.flows {
                s.push_str(&format!("d{}/dt = {}\n", render_gen(g, format), render_poly(p, format)));
            }
            for d in &r.densities {
                s.push_str(&format!("h{} = {}\n", d.n, render_poly(&d.h, format)));
            }
            s
        }
    };
    Ok(Output { body, passed: true })
}

fn cmd_verify(suite: Suite, max_n: usize, floor: i32, cut: Cutoffs, budget: Duration, format: Format) -> Result<Output, Failure> {
    let want = |s: Suite| suite == Suite::All || suite == s;
    let mut lines: Vec<String> = Vec::new();
    let mut reports = serde_json::Map::new();
    let mut passed = true;
    let mut line = |ok: bool, text: String| {
        passed &= ok;
        lines.push(format!("{} {text}", if ok { "PASS" } else { "FAIL" }));
    };
    if want(Suite::Examples) {
        let r = worked::run(&worked::checks());
        for c in &r {
            let extra = if c.passed { String::new() } else { format!(": {}", c.detail) };
            line(c.passed, format!("examples/{}/{}{extra}", c.group, c.id));
        }
        reports.insert("examples".into(), serde_json::to_value(&r).unwrap());
    }
    if want(Suite::ScalarTable) {
        let r = suites::scalar_table_suite(cut);
        for row in &r {
            line(
                row.ok(),
                format!(
                    "scalar-table/{} [{}] on {}/{} off-rejected {}/{}",
                    row.label, row.condition, row.on_passed, row.on_total, row.off_rejected, row.off_total
                ),
            );
        }
        reports.insert("scalar-table".into(), serde_json::to_value(&r).unwrap());
    }
    if want(Suite::Adler) {
        let r = suites::adler_suite(cut, max_n);
        for c in &r {
            let controls: Vec<String> = c.controls.iter().map(|(n, ok)| format!("{n}:{}", if *ok { "rejected" } else { "accepted" })).collect();
            let err = c.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default();
            line(
                c.ok(),
                format!(
                    "adler/{} (α,β,γ)=({},{},{}) compared={} identity={} expansions={} controls=[{}]{err}",
                    c.label,
                    c.params.0,
                    c.params.1,
                    c.params.2,
                    c.compared,
                    c.identity_holds,
                    c.expansions_agree,
                    controls.join(" ")
                ),
            );
        }
        reports.insert("adler".into(), serde_json::to_value(&r).unwrap());
    }
    if want(Suite::Crosscheck) {
        let r = suites::crosscheck_suite(floor, cut.z.max(floor), budget);
        for c in &r {
            let reached = c.verified_floor.map_or("none".to_string(), |f| f.to_string());
            let err = c.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default();
            line(
                c.ok(),
                format!(
                    "crosscheck/{}-{} verified to {reached} of {}{} slice@{}={}{err}",
                    c.tag,
                    c.size,
                    c.target_floor,
                    if c.stopped_by_budget { " (budget)" } else { "" },
                    c.slice_floor,
                    c.slice_ok
                ),
            );
        }
        reports.insert("crosscheck".into(), serde_json::to_value(&r).unwrap());
    }
    let body = match format {
        Format::Json => {
            reports.insert("passed".into(), serde_json::Value::Bool(passed));
            json(&serde_json::Value::Object(reports))
        }
        _ => {
            let total = lines.len();
            let ok = lines.iter().filter(|l| l.starts_with("PASS")).count();
            // timing fields stay out of text output so reruns are byte-identical
            format!("{}\n{ok}/{total} passed\n", lines.join("\n"))
        }
    };
    Ok(Output { body, passed })
}

fn cmd_list(format: Format) -> Output {
    let tags: Vec<(String, [usize; 2])> = CatalogTag::ALL.iter().map(|t| (t.name().to_string(), t.small_sizes())).collect();
    let examples: Vec<String> = Example::catalog().into_iter().map(|e| e.id).collect();
    let body = match format {
        Format::Json => json(&serde_json::json!({ "tags": tags, "examples": examples })),
        _ => {
            let mut s = String::from("tags (smallest sizes):\n");
            for (t, n) in &tags {
                s.push_str(&format!("  {t} {} {}\n", n[0], n[1]));
            }
            s.push_str("examples:\n");
            for e in &examples {
                s.push_str(&format!("  {e}\n"));
            }
            s
        }
    };
    Output { body, passed: true }
}
