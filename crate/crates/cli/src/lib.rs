//! Experiment harness: sweeps solver configurations over assembled or
//! imported saddle-point systems and renders the results as Markdown or CSV.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use saddlekit::{
    assemble, import_system, solve_stokes, solve_stokes_2x2, Approach, AugParams, Direction,
    Domain, GmresOptions, Grid, ImportedSystem, QChoice, Stokes2x2System, Stokes3x3System,
    Strategy,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid experiment: {0}")]
    BadSpec(String),
    #[error("bad table data at line {line}: {reason}")]
    BadTable { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Assembly(#[from] saddlekit::AssemblyError),
    #[error(transparent)]
    SysIo(#[from] saddlekit::SysIoError),
    #[error(transparent)]
    Spectra(#[from] saddlekit::SpectraError),
    #[error(transparent)]
    Solve(#[from] saddlekit::AlError),
}

/// What to solve: a built-in family at some refinement level, or a system
/// loaded from a manifest on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Problem {
    Cavity,
    Step,
    Manifest(PathBuf),
}

impl Problem {
    /// `cavity` and `step` name the built-in families; anything else is
    /// treated as a manifest path.
    pub fn parse(text: &str) -> Problem {
        match text {
            "cavity" => Problem::Cavity,
            "step" => Problem::Step,
            other => Problem::Manifest(PathBuf::from(other)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub problem: Problem,
    pub levels: Vec<u32>,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub directions: Vec<Direction>,
    pub approaches: Vec<Approach>,
    pub tol: f64,
    pub maxit: usize,
    pub seed: u64,
    pub q_choice: QChoice,
    pub inner_tol: f64,
    pub inner_maxit: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            problem: Problem::Cavity,
            levels: vec![2],
            gammas: vec![1e-4, 1e-2],
            alphas: vec![10.0],
            strategies: vec![Strategy::ThreeByThree],
            directions: vec![Direction::X],
            approaches: vec![Approach::Independent, Approach::Global],
            tol: 1e-7,
            maxit: 500,
            seed: 1234,
            q_choice: QChoice::Identity,
            inner_tol: 1e-6,
            inner_maxit: 100,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.levels.is_empty() && !matches!(self.problem, Problem::Manifest(_)) {
            return Err(CliError::BadSpec("no levels requested".into()));
        }
        for (name, len) in [
            ("gamma", self.gammas.len()),
            ("alpha", self.alphas.len()),
            ("strategy", self.strategies.len()),
            ("direction", self.directions.len()),
            ("approach", self.approaches.len()),
        ] {
            if len == 0 {
                return Err(CliError::BadSpec(format!("no {name} values requested")));
            }
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(CliError::BadSpec(format!(
                "tol must lie in (0, 1), got {}",
                self.tol
            )));
        }
        if self.maxit == 0 {
            return Err(CliError::BadSpec("maxit must be positive".into()));
        }
        Ok(())
    }
}

/// One solved (or failed) configuration. `direction` and `approach` are "-"
/// where the block 2x2 strategy leaves no such choice.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub problem: String,
    pub n_total: usize,
    pub strategy: String,
    pub direction: String,
    pub approach: String,
    pub tag: String,
    pub gamma: f64,
    pub alpha: f64,
    pub iter: usize,
    pub cpu_seconds: f64,
    pub err: Option<f64>,
    pub res: Option<f64>,
    pub inner_mean: f64,
    pub inner_max: usize,
    pub inner_total: usize,
    pub converged: bool,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
}

enum Instance {
    Three(Stokes3x3System),
    Two(Stokes2x2System),
}

impl Instance {
    fn label(&self) -> &str {
        match self {
            Instance::Three(s) => &s.label,
            Instance::Two(s) => &s.label,
        }
    }

    fn total_dim(&self) -> usize {
        match self {
            Instance::Three(s) => s.total_dim(),
            Instance::Two(s) => s.total_dim(),
        }
    }

    fn residual(&self, x: &[f64]) -> f64 {
        let (b, ax) = match self {
            Instance::Three(s) => (s.original_rhs(), s.apply_original(x)),
            Instance::Two(s) => (s.original_rhs(), s.apply_original(x)),
        };
        let num = norm_diff(&b, &ax);
        let den = norm(&b);
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    fn error(&self, x: &[f64]) -> Option<f64> {
        let star = match self {
            Instance::Three(s) => s.x_star.as_ref()?,
            Instance::Two(s) => s.x_star.as_ref()?,
        };
        let den = norm(star);
        Some(if den == 0.0 {
            norm_diff(star, x)
        } else {
            norm_diff(star, x) / den
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sanitize(note: &str) -> String {
    note.replace([',', '\n'], ";")
}

fn direction_letter(d: Direction) -> &'static str {
    match d {
        Direction::X => "x",
        Direction::Y => "y",
    }
}

fn approach_name(a: Approach) -> &'static str {
    match a {
        Approach::Independent => "independent",
        Approach::Global => "global",
    }
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::ThreeByThree => "3x3",
        Strategy::TwoByTwo => "2x2",
    }
}

/// Loads every problem instance the experiment asks for. Failures become
/// `Err` entries so the sweep can record them without stopping.
fn load_instances(spec: &ExperimentSpec) -> Vec<Result<Instance, (String, String)>> {
    match &spec.problem {
        Problem::Manifest(path) => {
            let label = path.display().to_string();
            vec![match import_system(path) {
                Ok(ImportedSystem::ThreeByThree(mut sys)) => {
                    sys.set_manufactured_rhs(spec.seed);
                    Ok(Instance::Three(sys))
                }
                Ok(ImportedSystem::TwoByTwo(mut sys)) => {
                    sys.set_manufactured_rhs(spec.seed);
                    Ok(Instance::Two(sys))
                }
                Err(e) => Err((label, e.to_string())),
            }]
        }
        builtin => {
            let domain = match builtin {
                Problem::Cavity => Domain::Cavity,
                _ => Domain::Channel,
            };
            spec.levels
                .iter()
                .map(|&level| {
                    let label = format!("{}-l{}", domain.label(), level);
                    Grid::new(domain, level)
                        .and_then(|g| assemble(&g))
                        .map(|mut sys| {
                            sys.set_manufactured_rhs(spec.seed);
                            Instance::Three(sys)
                        })
                        .map_err(|e| (label, e.to_string()))
                })
                .collect()
        }
    }
}

/// One cell of the configuration grid. The block 2x2 strategy carries no
/// direction or approach choice; the stored values are placeholders there.
#[derive(Debug, Clone, Copy)]
struct RowConfig {
    strategy: Strategy,
    direction: Direction,
    approach: Approach,
    gamma: f64,
    alpha: f64,
}

impl RowConfig {
    fn direction_text(&self) -> &'static str {
        match self.strategy {
            Strategy::ThreeByThree => direction_letter(self.direction),
            Strategy::TwoByTwo => "-",
        }
    }

    fn approach_text(&self) -> &'static str {
        match self.strategy {
            Strategy::ThreeByThree => approach_name(self.approach),
            Strategy::TwoByTwo => "-",
        }
    }

    fn tag(&self) -> String {
        match self.strategy {
            Strategy::TwoByTwo => "P2".to_string(),
            Strategy::ThreeByThree => {
                let app = match self.approach {
                    Approach::Independent => "I",
                    Approach::Global => "G",
                };
                format!("P[{};{}]", direction_letter(self.direction), app)
            }
        }
    }
}

/// The configuration grid in emission order.
fn configs(spec: &ExperimentSpec) -> Vec<RowConfig> {
    let mut grid = Vec::new();
    for &gamma in &spec.gammas {
        for &alpha in &spec.alphas {
            for &strategy in &spec.strategies {
                let cell = |direction, approach| RowConfig {
                    strategy,
                    direction,
                    approach,
                    gamma,
                    alpha,
                };
                match strategy {
                    Strategy::TwoByTwo => grid.push(cell(Direction::X, Approach::Independent)),
                    Strategy::ThreeByThree => {
                        for &d in &spec.directions {
                            for &a in &spec.approaches {
                                grid.push(cell(d, a));
                            }
                        }
                    }
                }
            }
        }
    }
    grid
}

fn failed_row(label: &str, cfg: &RowConfig, note: &str) -> ResultRow {
    ResultRow {
        problem: label.to_string(),
        n_total: 0,
        strategy: strategy_name(cfg.strategy).to_string(),
        direction: cfg.direction_text().to_string(),
        approach: cfg.approach_text().to_string(),
        tag: cfg.tag(),
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        iter: 0,
        cpu_seconds: 0.0,
        err: None,
        res: None,
        inner_mean: 0.0,
        inner_max: 0,
        inner_total: 0,
        converged: false,
        note: sanitize(note),
    }
}

fn solve_one(inst: &Instance, cfg: &RowConfig, spec: &ExperimentSpec) -> ResultRow {
    let params = AugParams {
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        direction: cfg.direction,
        approach: cfg.approach,
        q_choice: spec.q_choice,
        inner_tol: spec.inner_tol,
        inner_maxit: spec.inner_maxit,
        ..AugParams::default()
    };
    let opts = GmresOptions {
        tol: spec.tol,
        maxit: spec.maxit,
        ..GmresOptions::default()
    };
    let start = Instant::now();
    let solved = match inst {
        Instance::Three(sys) => solve_stokes(sys, cfg.strategy, &params, &opts),
        Instance::Two(sys) => solve_stokes_2x2(sys, &params, &opts),
    };
    let cpu_seconds = start.elapsed().as_secs_f64();
    match solved {
        Ok((x, rep)) => ResultRow {
            problem: inst.label().to_string(),
            n_total: inst.total_dim(),
            strategy: strategy_name(cfg.strategy).to_string(),
            direction: cfg.direction_text().to_string(),
            approach: cfg.approach_text().to_string(),
            tag: cfg.tag(),
            gamma: cfg.gamma,
            alpha: cfg.alpha,
            iter: rep.outer_iters,
            cpu_seconds,
            err: inst.error(&x),
            res: Some(inst.residual(&x)),
            inner_mean: rep.inner_mean,
            inner_max: rep.inner_max,
            inner_total: rep.inner_iters_total,
            converged: rep.converged,
            note: if rep.converged {
                String::new()
            } else {
                "did not reach tol within maxit".to_string()
            },
        },
        Err(e) => {
            let mut row = failed_row(inst.label(), cfg, &e.to_string());
            row.n_total = inst.total_dim();
            row.cpu_seconds = cpu_seconds;
            row
        }
    }
}

/// Runs the whole sweep. Individual failures land in the table as
/// non-converged rows; only a malformed spec aborts.
pub fn run(spec: &ExperimentSpec) -> Result<ResultTable, CliError> {
    spec.validate()?;
    let grid = configs(spec);
    let mut rows = Vec::new();
    for loaded in load_instances(spec) {
        match loaded {
            Err((label, note)) => {
                rows.extend(grid.iter().map(|cfg| failed_row(&label, cfg, &note)));
            }
            Ok(inst) => {
                for cfg in &grid {
                    if cfg.strategy == Strategy::ThreeByThree && matches!(inst, Instance::Two(_)) {
                        let mut row = failed_row(
                            inst.label(),
                            cfg,
                            "manifest provides a 2x2 system; 3x3 unavailable",
                        );
                        row.n_total = inst.total_dim();
                        rows.push(row);
                    } else {
                        rows.push(solve_one(&inst, cfg, spec));
                    }
                }
            }
        }
    }
    Ok(ResultTable { rows })
}

pub fn emit(table: &ResultTable, format: Format) -> String {
    match format {
        Format::Markdown => emit_markdown(table),
        Format::Csv => emit_csv(table),
    }
}

const MD_HEADER: &str = "| problem | N | gamma | alpha | prec | Iter (CPU s) | Err | Res | Iter_pcg (mean/max/total) |\n|---|---|---|---|---|---|---|---|---|\n";

fn opt_sci(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.1e}"),
        None => "-".to_string(),
    }
}

/// Markdown in the two-panel style: one table per (strategy, approach) pair
/// in first-appearance order, non-converged rows starred and footnoted.
fn emit_markdown(table: &ResultTable) -> String {
    let mut out = String::new();
    if table.rows.is_empty() {
        out.push_str(MD_HEADER);
        return out;
    }
    let mut panels: Vec<(String, String)> = Vec::new();
    for row in &table.rows {
        let key = (row.strategy.clone(), row.approach.clone());
        if !panels.contains(&key) {
            panels.push(key);
        }
    }
    for (strategy, approach) in panels {
        if approach == "-" {
            let _ = writeln!(out, "### Block {strategy}\n");
        } else {
            let _ = writeln!(out, "### Block {strategy}, approach {approach}\n");
        }
        out.push_str(MD_HEADER);
        let mut notes: Vec<String> = Vec::new();
        for row in table
            .rows
            .iter()
            .filter(|r| r.strategy == strategy && r.approach == approach)
        {
            let star = if row.converged { "" } else { "*" };
            let _ = writeln!(
                out,
                "| {} | {} | {:.0e} | {:.0e} | {} | {}{} ({:.2}) | {} | {} | {:.1}/{}/{} |",
                row.problem,
                row.n_total,
                row.gamma,
                row.alpha,
                row.tag,
                row.iter,
                star,
                row.cpu_seconds,
                opt_sci(row.err),
                opt_sci(row.res),
                row.inner_mean,
                row.inner_max,
                row.inner_total,
            );
            if !row.converged {
                let reason = if row.note.is_empty() {
                    "did not converge"
                } else {
                    &row.note
                };
                notes.push(format!(
                    "- (*) {} {} gamma={:.0e}: {}",
                    row.problem, row.tag, row.gamma, reason
                ));
            }
        }
        out.push('\n');
        for n in notes {
            let _ = writeln!(out, "{n}");
        }
    }
    out
}

const CSV_HEADER: &str = "problem,n,strategy,direction,approach,tag,gamma,alpha,iter,cpu_seconds,err,res,inner_mean,inner_max,inner_total,converged,note";

fn opt_f64(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Flat CSV, one line per row. Floats use the shortest representation that
/// parses back to the same bits, so emit/parse round-trips exactly.
fn emit_csv(table: &ResultTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.problem,
            r.n_total,
            r.strategy,
            r.direction,
            r.approach,
            r.tag,
            r.gamma,
            r.alpha,
            r.iter,
            r.cpu_seconds,
            opt_f64(r.err),
            opt_f64(r.res),
            r.inner_mean,
            r.inner_max,
            r.inner_total,
            r.converged,
            sanitize(&r.note),
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<ResultTable, CliError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => {
            return Err(CliError::BadTable {
                line: 1,
                reason: "missing or unrecognized header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 17 {
            return Err(CliError::BadTable {
                line: idx + 1,
                reason: format!("expected 17 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| CliError::BadTable {
            line: idx + 1,
            reason: format!("unparseable {what}"),
        };
        let opt = |s: &str, what: &str| -> Result<Option<f64>, CliError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(what))
            }
        };
        rows.push(ResultRow {
            problem: fields[0].to_string(),
            n_total: fields[1].parse().map_err(|_| bad("n"))?,
            strategy: fields[2].to_string(),
            direction: fields[3].to_string(),
            approach: fields[4].to_string(),
            tag: fields[5].to_string(),
            gamma: fields[6].parse().map_err(|_| bad("gamma"))?,
            alpha: fields[7].parse().map_err(|_| bad("alpha"))?,
            iter: fields[8].parse().map_err(|_| bad("iter"))?,
            cpu_seconds: fields[9].parse().map_err(|_| bad("cpu_seconds"))?,
            err: opt(fields[10], "err")?,
            res: opt(fields[11], "res")?,
            inner_mean: fields[12].parse().map_err(|_| bad("inner_mean"))?,
            inner_max: fields[13].parse().map_err(|_| bad("inner_max"))?,
            inner_total: fields[14].parse().map_err(|_| bad("inner_total"))?,
            converged: fields[15].parse().map_err(|_| bad("converged"))?,
            note: fields[16].to_string(),
        });
    }
    Ok(ResultTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> ResultRow {
        ResultRow {
            problem: "cavity-l2".into(),
            n_total: 122,
            strategy: "3x3".into(),
            direction: "x".into(),
            approach: "independent".into(),
            tag: "P[x;I]".into(),
            gamma: 1e-4,
            alpha: 10.0,
            iter: 28,
            cpu_seconds: 0.1 + 0.2,
            err: Some(2.13e-4),
            res: Some(f64::MIN_POSITIVE),
            inner_mean: 9.142857142857142,
            inner_max: 12,
            inner_total: 256,
            converged: true,
            note: String::new(),
        }
    }

    #[test]
    fn problem_strings_parse() {
        assert_eq!(Problem::parse("cavity"), Problem::Cavity);
        assert_eq!(Problem::parse("step"), Problem::Step);
        assert_eq!(
            Problem::parse("out/sys/manifest.txt"),
            Problem::Manifest(PathBuf::from("out/sys/manifest.txt"))
        );
    }

    #[test]
    fn validation_rejects_empty_lists_and_bad_tol() {
        let no_gammas = ExperimentSpec {
            gammas: Vec::new(),
            ..ExperimentSpec::default()
        };
        assert!(no_gammas.validate().is_err());

        for tol in [0.0, 1.5] {
            let spec = ExperimentSpec {
                tol,
                ..ExperimentSpec::default()
            };
            assert!(spec.validate().is_err());
        }
        assert!(ExperimentSpec::default().validate().is_ok());
    }

    #[test]
    fn empty_table_emits_only_headers() {
        let table = ResultTable::default();
        assert_eq!(emit(&table, Format::Csv), format!("{CSV_HEADER}\n"));
        assert_eq!(emit(&table, Format::Markdown), MD_HEADER);
    }

    #[test]
    fn one_row_table_has_one_csv_data_line() {
        let table = ResultTable {
            rows: vec![sample_row()],
        };
        let text = emit(&table, Format::Csv);
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn csv_round_trips_every_field() {
        let mut failed = sample_row();
        failed.converged = false;
        failed.err = None;
        failed.res = None;
        failed.note = "inner solve stalled; see log".into();
        let table = ResultTable {
            rows: vec![sample_row(), failed],
        };
        let back = parse_csv(&emit(&table, Format::Csv)).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn parse_rejects_malformed_lines() {
        assert!(matches!(
            parse_csv("nonsense\n"),
            Err(CliError::BadTable { line: 1, .. })
        ));
        let text = format!("{CSV_HEADER}\na,b,c\n");
        assert!(matches!(
            parse_csv(&text),
            Err(CliError::BadTable { line: 2, .. })
        ));
    }

    #[test]
    fn notes_lose_their_commas() {
        assert_eq!(sanitize("a, b,\nc"), "a; b;;c");
    }

    #[test]
    fn markdown_groups_rows_into_panels() {
        let mut global = sample_row();
        global.approach = "global".into();
        global.tag = "P[x;G]".into();
        let table = ResultTable {
            rows: vec![sample_row(), global],
        };
        let text = emit(&table, Format::Markdown);
        assert!(text.contains("### Block 3x3, approach independent"));
        assert!(text.contains("### Block 3x3, approach global"));
        assert!(text.contains("| cavity-l2 | 122 |"));
    }
}
