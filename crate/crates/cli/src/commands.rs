use std::fs;
use std::path::{Path, PathBuf};

use afie_core::pruner::{audit_plan, PlanIssue};
use afie_core::{
    allocator, apply_plan, make_plan, plan_stats, report, AfieReport, AllocationInput,
    AllocationResult, PlanStats, PruningPlan, TensorArchive, Violation,
};
use serde_json::json;

use crate::output::{emit, fixed, write_atomic, Table};
use crate::{Cli, CliError, Command, Format};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Inspect => inspect(cli),
        Command::Plan => plan(cli),
        Command::Prune => prune(cli),
        Command::Verify => verify(cli),
    }
}

// ── Loading ─────────────────────────────────────────────────────────────────

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_archive(path: &Path) -> Result<TensorArchive, CliError> {
    let bytes = read_bytes(path)?;
    TensorArchive::from_bytes(&bytes).map_err(|e| CliError::core(path.display().to_string(), e))
}

fn load_override(path: &Path, archive: &TensorArchive) -> Result<AfieReport, CliError> {
    let bytes = read_bytes(path)?;
    let values: Vec<f64> = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Usage(format!(
            "{}: expected a JSON list of AFIE values: {e}",
            path.display()
        ))
    })?;
    if values.len() != archive.len() {
        return Err(CliError::Usage(format!(
            "{}: {} AFIE values for {} layers",
            path.display(),
            values.len(),
            archive.len()
        )));
    }
    let filters: Vec<usize> = archive.tensors().iter().map(|t| t.filter_count()).collect();
    let sizes: Vec<usize> = archive
        .tensors()
        .iter()
        .map(|t| t.shape().in_channels.min(t.shape().out_channels))
        .collect();
    AfieReport::from_afie_values(&values, &filters, &sizes)
        .map_err(|e| CliError::core(path.display().to_string(), e))
}

fn global_ratio(cli: &Cli) -> Result<f64, CliError> {
    match cli.ratio {
        Some(r) if r > 0.0 && r < 1.0 => Ok(r),
        Some(r) => Err(CliError::Usage(format!(
            "--ratio must be in (0, 1), got {r}"
        ))),
        None => Err(CliError::Usage("--ratio is required".into())),
    }
}

fn allocation_input(cli: &Cli, report: &AfieReport, ratio: f64) -> AllocationInput {
    AllocationInput::new(report.afie_values(), report.filter_counts(), ratio)
        .with_clamp_ceiling(cli.clamp)
        .with_min_keep(cli.min_keep)
}

// ── inspect ─────────────────────────────────────────────────────────────────

fn inspect(cli: &Cli) -> Result<(), CliError> {
    let archive = load_archive(&cli.archive)?;
    let rep = report(&archive).map_err(|e| CliError::core("scoring", e))?;
    let mut table = Table::new(vec![
        "name",
        "in_channels",
        "out_channels",
        "spectrum_size",
        "total_entropy",
        "afie",
    ]);
    for (t, s) in archive.tensors().iter().zip(&rep.scores) {
        table.push(vec![
            t.name().to_owned(),
            t.shape().in_channels.to_string(),
            t.shape().out_channels.to_string(),
            s.spectrum_size.to_string(),
            fixed(s.total_entropy),
            fixed(s.afie),
        ]);
    }
    let text = table.render(cli.format, || {
        let layers: Vec<_> = archive
            .tensors()
            .iter()
            .zip(&rep.scores)
            .map(|(t, s)| {
                json!({
                    "name": t.name(),
                    "in_channels": t.shape().in_channels,
                    "out_channels": t.shape().out_channels,
                    "spectrum_size": s.spectrum_size,
                    "total_entropy": s.total_entropy,
                    "afie": s.afie,
                })
            })
            .collect();
        json!({
            "layers": layers,
            "max_afie": rep.max_afie,
            "argmax_layer": rep.argmax_layer,
        })
    });
    emit(cli.out.as_deref(), &text)
}

// ── plan / prune ────────────────────────────────────────────────────────────

struct Planned {
    archive: TensorArchive,
    result: AllocationResult,
    plan: PruningPlan,
}

fn build_plan(cli: &Cli) -> Result<Planned, CliError> {
    let ratio = global_ratio(cli)?;
    let archive = load_archive(&cli.archive)?;
    let rep = match &cli.afie_override {
        Some(path) => load_override(path, &archive)?,
        None => report(&archive).map_err(|e| CliError::core("scoring", e))?,
    };
    let input = allocation_input(cli, &rep, ratio);
    let result = allocator::solve(&input).map_err(|e| CliError::core("allocation", e))?;
    if result.infeasible_tight {
        eprintln!(
            "afie: warning: pinned layers exhaust the budget; remaining layers are left unpruned"
        );
    }
    let plan = make_plan(&archive, &rep, &input, &result, cli.seed)
        .map_err(|e| CliError::core("planning", e))?;
    Ok(Planned {
        archive,
        result,
        plan,
    })
}

fn ratio_table(planned: &Planned, format: Format) -> String {
    let plan = &planned.plan;
    let mut table = Table::new(vec!["name", "filters", "afie", "ratio", "removed", "kept"]);
    for (lp, s) in plan.per_layer.iter().zip(&plan.afie_report.scores) {
        table.push(vec![
            lp.name.clone(),
            lp.filter_count.to_string(),
            fixed(s.afie),
            fixed(lp.ratio),
            lp.removed_count.to_string(),
            lp.kept_indices.len().to_string(),
        ]);
    }
    table.render(format, || {
        let layers: Vec<_> = plan
            .per_layer
            .iter()
            .zip(&plan.afie_report.scores)
            .map(|(lp, s)| {
                json!({
                    "name": lp.name,
                    "filters": lp.filter_count,
                    "afie": s.afie,
                    "ratio": lp.ratio,
                    "removed": lp.removed_count,
                    "kept": lp.kept_indices.len(),
                })
            })
            .collect();
        json!({
            "global_ratio": plan.global_ratio,
            "lambda_min": planned.result.lambda_min,
            "clamped": planned.result.clamped,
            "target_budget": planned.result.target_budget,
            "achieved_budget": planned.result.achieved_budget,
            "layers": layers,
        })
    })
}

fn plan_json(plan: &PruningPlan) -> Result<String, CliError> {
    let mut text = plan.to_json().map_err(|e| CliError::core("plan", e))?;
    text.push('\n');
    Ok(text)
}

fn plan(cli: &Cli) -> Result<(), CliError> {
    let planned = build_plan(cli)?;
    let text = plan_json(&planned.plan)?;
    let table = ratio_table(&planned, cli.format);
    match &cli.out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            print!("{table}");
        }
        None => {
            print!("{text}");
            eprint!("{table}");
        }
    }
    Ok(())
}

/// Plan file written alongside a pruned archive: `<out>.plan.json`.
pub fn plan_path_for(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".plan.json");
    PathBuf::from(name)
}

fn stats_table(stats: &PlanStats, format: Format) -> String {
    let mut table = Table::new(vec!["metric", "value"]);
    table.push(vec![
        "params_before".into(),
        stats.params_before.to_string(),
    ]);
    table.push(vec!["params_after".into(), stats.params_after.to_string()]);
    table.push(vec![
        "filters_before".into(),
        stats.filters_before.to_string(),
    ]);
    table.push(vec![
        "filters_after".into(),
        stats.filters_after.to_string(),
    ]);
    table.push(vec![
        "achieved_global_ratio".into(),
        fixed(stats.achieved_global_ratio),
    ]);
    table.render(format, || serde_json::to_value(stats).expect("stats"))
}

fn prune(cli: &Cli) -> Result<(), CliError> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("prune needs --out for the pruned archive".into()))?;
    let planned = build_plan(cli)?;
    let plan_path = plan_path_for(out);
    write_atomic(&plan_path, plan_json(&planned.plan)?.as_bytes())?;

    let pruned = apply_plan(&planned.archive, &planned.plan).map_err(|e| {
        CliError::core(format!("surgery (plan kept at {})", plan_path.display()), e)
    })?;
    let bytes = pruned
        .to_bytes()
        .map_err(|e| CliError::core("encoding", e))?;
    write_atomic(out, &bytes)?;

    let stats =
        plan_stats(&planned.plan, &planned.archive).map_err(|e| CliError::core("stats", e))?;
    print!("{}", stats_table(&stats, cli.format));
    Ok(())
}

// ── verify ──────────────────────────────────────────────────────────────────

/// Rebuilds the allocator's view of a plan so its checks can be re-run.
fn reconstruct(cli: &Cli, plan: &PruningPlan) -> (AllocationInput, AllocationResult) {
    let rep = &plan.afie_report;
    let input = AllocationInput::new(
        rep.afie_values(),
        plan.per_layer.iter().map(|l| l.filter_count).collect(),
        plan.global_ratio,
    )
    .with_clamp_ceiling(cli.clamp)
    .with_min_keep(cli.min_keep);
    let ratios: Vec<f64> = plan.per_layer.iter().map(|l| l.ratio).collect();
    let clamped: Vec<usize> = ratios
        .iter()
        .enumerate()
        .filter(|(_, r)| **r >= cli.clamp)
        .map(|(l, _)| l)
        .collect();
    let clamped_load: f64 = clamped
        .iter()
        .map(|l| cli.clamp * input.filters[*l] as f64)
        .sum();
    let unclamped_left = clamped.len() < ratios.len();
    let infeasible_tight = unclamped_left && clamped_load >= input.target_filters();
    let lambda_min = ratios.get(rep.argmax_layer).copied().unwrap_or(0.0);
    let result = AllocationResult {
        achieved_budget: ratios
            .iter()
            .zip(&input.filters)
            .map(|(r, c)| allocator::floor_count(*r, *c))
            .sum(),
        target_budget: input.target_filters().round() as usize,
        ratios,
        lambda_min,
        clamped,
        iterations: 0,
        infeasible_tight,
    };
    (input, result)
}

enum Finding {
    Allocation(Violation),
    Plan(PlanIssue),
    Report(String),
}

impl Finding {
    fn source(&self) -> &'static str {
        match self {
            Self::Allocation(_) => "allocation",
            Self::Plan(_) => "masks",
            Self::Report(_) => "report",
        }
    }

    fn message(&self) -> String {
        match self {
            Self::Allocation(v) => v.to_string(),
            Self::Plan(p) => p.to_string(),
            Self::Report(s) => s.clone(),
        }
    }
}

fn verify(cli: &Cli) -> Result<(), CliError> {
    let plan_file = cli
        .plan
        .as_deref()
        .ok_or_else(|| CliError::Usage("verify needs --plan".into()))?;
    let archive = load_archive(&cli.archive)?;
    let text = String::from_utf8(read_bytes(plan_file)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", plan_file.display())))?;
    let plan = PruningPlan::from_json(&text)
        .map_err(|e| CliError::core(plan_file.display().to_string(), e))?;

    let mut findings: Vec<Finding> = audit_plan(&plan, &archive, cli.min_keep)
        .into_iter()
        .map(Finding::Plan)
        .collect();
    let rep = &plan.afie_report;
    if rep.scores.len() != plan.per_layer.len() {
        findings.push(Finding::Report(format!(
            "report covers {} layers, plan has {}",
            rep.scores.len(),
            plan.per_layer.len()
        )));
    } else {
        let (input, result) = reconstruct(cli, &plan);
        if let Err(e) = input.validate() {
            findings.push(Finding::Report(e.to_string()));
        } else {
            findings.extend(
                allocator::verify(&input, &result)
                    .into_iter()
                    .map(Finding::Allocation),
            );
        }
    }

    let mut table = Table::new(vec!["check", "violation"]);
    for f in &findings {
        table.push(vec![f.source().into(), f.message()]);
    }
    let rendered = match (cli.format, findings.is_empty()) {
        (Format::Table, true) => "ok: no violations\n".to_owned(),
        _ => table.render(cli.format, || {
            let items: Vec<_> = findings
                .iter()
                .map(|f| json!({ "check": f.source(), "violation": f.message() }))
                .collect();
            json!({ "ok": findings.is_empty(), "violations": items })
        }),
    };
    emit(cli.out.as_deref(), &rendered)?;
    if findings.is_empty() {
        Ok(())
    } else {
        Err(CliError::Violations(findings.len()))
    }
}
