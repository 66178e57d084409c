//! Sweep plans: declarative grids of checks over a function catalog,
//! executed deterministically and serialized as JSON lines plus a CSV
//! digest.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::catalog::{CatalogEntry, CatalogFunction};
use crate::error::{Error, Result};
use crate::estimate::{BackendKind, Estimator};
use crate::functions::LogCurvature;
use crate::gaussian::{BlockCovariance, GaussianSampler};
use crate::verify::{
    check_block_holder, check_chain, check_entropy_laplacian, check_entropy_stein,
    check_integration_by_parts, check_log_sobolev_sandwich, check_sqrt_moment,
    InequalityVerdict, VerdictStatus,
};

/// The check families a plan can enumerate.
pub const KNOWN_CHECKS: &[&str] = &[
    "sqrt-moment",
    "chain",
    "block-holder",
    "entropy-stein",
    "entropy-laplacian",
    "integration-by-parts",
    "log-sobolev",
];

/// Parameter grids; a check consumes the axes it understands and
/// ignores the rest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Grids {
    #[serde(default)]
    pub s: Vec<f64>,
    #[serde(default)]
    pub t: Vec<f64>,
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Budgets {
    #[serde(default = "default_mc_samples")]
    pub mc_samples: u64,
    #[serde(default = "default_mc_batches")]
    pub mc_batches: u32,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
}

fn default_mc_samples() -> u64 {
    1_000_000
}

fn default_mc_batches() -> u32 {
    100
}

fn default_quad_nodes() -> usize {
    64
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            mc_samples: default_mc_samples(),
            mc_batches: default_mc_batches(),
            quad_nodes: default_quad_nodes(),
        }
    }
}

/// A declarative sweep: which checks, over which grids, on which
/// functions, with which budgets. The seed is mandatory so sampling
/// backends stay reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPlan {
    pub checks: Vec<String>,
    #[serde(default)]
    pub grids: Grids,
    pub catalog: Vec<CatalogEntry>,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub backend: BackendKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl SweepPlan {
    pub fn from_json(text: &str) -> Result<SweepPlan> {
        let plan: SweepPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    /// Structural validation: known check ids, grid values inside the
    /// documented domains, sane budgets. Pure (no instantiation).
    pub fn validate(&self) -> Result<()> {
        for check in &self.checks {
            if !KNOWN_CHECKS.contains(&check.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "unknown check {check:?}; known: {KNOWN_CHECKS:?}"
                )));
            }
        }
        for &s in &self.grids.s {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "grid value s={s} outside [0, inf)"
                )));
            }
        }
        for &t in &self.grids.t {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!(
                    "grid value t={t} outside [-1, 1]"
                )));
            }
        }
        for &n in &self.grids.n {
            if !(2..=64).contains(&n) {
                return Err(Error::InvalidParameter(format!(
                    "grid value n={n} outside [2, 64]"
                )));
            }
        }
        for &k in &self.grids.k {
            if !(1..=16).contains(&k) {
                return Err(Error::InvalidParameter(format!(
                    "grid value k={k} outside [1, 16]"
                )));
            }
        }
        if self.budgets.mc_samples == 0
            || self.budgets.mc_batches == 0
            || self.budgets.quad_nodes == 0
        {
            return Err(Error::InvalidParameter("budgets must be positive".into()));
        }
        if self.catalog.is_empty() && !self.checks.is_empty() {
            return Err(Error::InvalidParameter(
                "plan has checks but an empty catalog".into(),
            ));
        }
        Ok(())
    }

    fn grid_s(&self) -> Vec<f64> {
        if self.grids.s.is_empty() {
            vec![0.5]
        } else {
            self.grids.s.clone()
        }
    }

    fn grid_t(&self) -> Vec<f64> {
        if self.grids.t.is_empty() {
            vec![0.5]
        } else {
            self.grids.t.clone()
        }
    }

    fn grid_n(&self) -> Vec<usize> {
        if self.grids.n.is_empty() {
            vec![2]
        } else {
            self.grids.n.clone()
        }
    }

    fn grid_k(&self) -> Vec<usize> {
        if self.grids.k.is_empty() {
            vec![1]
        } else {
            self.grids.k.clone()
        }
    }
}

/// Aggregate counters of a finished sweep.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SweepSummary {
    pub holds: usize,
    pub violated: usize,
    pub indeterminate: usize,
    pub vacuous: usize,
}

impl SweepSummary {
    pub fn tally(verdicts: &[InequalityVerdict]) -> Self {
        let mut out = SweepSummary::default();
        for v in verdicts {
            match v.status {
                VerdictStatus::Holds => out.holds += 1,
                VerdictStatus::Violated => out.violated += 1,
                VerdictStatus::Indeterminate => out.indeterminate += 1,
                VerdictStatus::Vacuous => out.vacuous += 1,
            }
        }
        out
    }
}

/// Runs every applicable (check x function x grid point) combination in
/// plan order. Item-level errors that mark a claim vacuous are already
/// folded into verdicts; anything else aborts with the first hard error.
pub fn run_sweep(plan: &SweepPlan) -> Result<Vec<InequalityVerdict>> {
    plan.validate()?;
    let mut functions: Vec<CatalogFunction> = Vec::new();
    for (i, entry) in plan.catalog.iter().enumerate() {
        functions.extend(entry.instantiate(i)?);
    }

    let mut verdicts = Vec::new();
    let mut item = 0u64;
    for check in &plan.checks {
        match check.as_str() {
            "sqrt-moment" => {
                for f in &functions {
                    let Some(claim) = f.effective_claim() else {
                        continue;
                    };
                    for &s in &plan.grid_s() {
                        let est = estimator_for(plan, item);
                        item += 1;
                        let mut v = check_sqrt_moment(&est, &f.model, s, claim)?;
                        tag(&mut v, f);
                        verdicts.push(v);
                    }
                }
            }
            "chain" => {
                for f in &functions {
                    if !certified_log_concave(f) {
                        continue;
                    }
                    for &n in &plan.grid_n() {
                        for &t in &plan.grid_t() {
                            if !(0.0..=1.0).contains(&t) {
                                continue;
                            }
                            for &k in &plan.grid_k() {
                                if f.model.dim() != k {
                                    continue;
                                }
                                let est = estimator_for(plan, item);
                                item += 1;
                                let pair = check_chain(&est, &f.model, n, t, k)?;
                                for mut v in pair {
                                    tag(&mut v, f);
                                    verdicts.push(v);
                                }
                            }
                        }
                    }
                }
            }
            "block-holder" => {
                for f in &functions {
                    for &n in &plan.grid_n() {
                        for &t in &plan.grid_t() {
                            if t < -1.0 / (n as f64 - 1.0) {
                                continue;
                            }
                            for &k in &plan.grid_k() {
                                if f.model.dim() != k {
                                    continue;
                                }
                                let est = estimator_for(plan, item);
                                item += 1;
                                let factors: Vec<_> =
                                    (0..n).map(|_| f.model.clone()).collect();
                                let pair = check_block_holder(&est, &factors, n, t, k)?;
                                for mut v in pair {
                                    tag(&mut v, f);
                                    verdicts.push(v);
                                }
                            }
                        }
                    }
                }
            }
            "entropy-stein" => {
                for f in &functions {
                    let Some(claim) = f.effective_claim() else {
                        continue;
                    };
                    if !f.model.supports_derivatives() {
                        continue;
                    }
                    let est = estimator_for(plan, item);
                    item += 1;
                    let mut v = check_entropy_stein(&est, &f.model, claim)?;
                    tag(&mut v, f);
                    verdicts.push(v);
                }
            }
            "entropy-laplacian" => {
                for f in &functions {
                    let Some(claim) = f.effective_claim() else {
                        continue;
                    };
                    if !f.model.supports_derivatives() {
                        continue;
                    }
                    let est = estimator_for(plan, item);
                    item += 1;
                    let mut v = check_entropy_laplacian(&est, &f.model, claim)?;
                    tag(&mut v, f);
                    verdicts.push(v);
                }
            }
            "integration-by-parts" => {
                for f in &functions {
                    if !f.model.supports_derivatives() {
                        continue;
                    }
                    let est = estimator_for(plan, item);
                    item += 1;
                    let cov = BlockCovariance::constant_correlation(1, f.model.dim(), 0.0)?;
                    let mut v = check_integration_by_parts(&est, &f.model, &cov)?;
                    tag(&mut v, f);
                    verdicts.push(v);
                }
            }
            "log-sobolev" => {
                for f in &functions {
                    if !certified_log_concave(f) || !f.model.supports_derivatives() {
                        continue;
                    }
                    let est = estimator_for(plan, item);
                    item += 1;
                    let pair = check_log_sobolev_sandwich(&est, &f.model)?;
                    for mut v in pair {
                        tag(&mut v, f);
                        verdicts.push(v);
                    }
                }
            }
            other => {
                return Err(Error::InvalidParameter(format!("unknown check {other:?}")));
            }
        }
    }
    Ok(verdicts)
}

fn certified_log_concave(f: &CatalogFunction) -> bool {
    f.model
        .exponent_class()
        .certifies(LogCurvature::LogConcave)
}

fn tag(v: &mut InequalityVerdict, f: &CatalogFunction) {
    v.params.insert("fn".into(), json!(f.id));
}

/// Per-item estimator: same budgets, a distinct sampler stream block.
fn estimator_for(plan: &SweepPlan, item: u64) -> Estimator {
    Estimator {
        backend: plan.backend,
        quad_nodes: plan.budgets.quad_nodes,
        mc_samples: plan.budgets.mc_samples,
        mc_batches: plan.budgets.mc_batches,
        sampler: GaussianSampler::new(plan.seed, item.wrapping_shl(48), 0),
    }
}

/// Report header, the only line carrying wall-clock state. Determinism
/// guarantees start from the second line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportHeader {
    pub seed: u64,
    pub checks: Vec<String>,
    pub started_unix: u64,
}

impl ReportHeader {
    pub fn for_plan(plan: &SweepPlan) -> Self {
        ReportHeader {
            seed: plan.seed,
            checks: plan.checks.clone(),
            started_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Writes the JSON-lines report: one `{"meta": ...}` header line, then
/// one verdict object per line, in plan order.
pub fn write_jsonl_report<W: Write>(
    mut w: W,
    header: &ReportHeader,
    verdicts: &[InequalityVerdict],
) -> Result<()> {
    writeln!(w, "{}", serde_json::to_string(&json!({ "meta": header }))?)?;
    for v in verdicts {
        writeln!(w, "{}", serde_json::to_string(v)?)?;
    }
    Ok(())
}

/// Writes the CSV digest: `check,params,slack,status`.
pub fn write_csv_digest<W: Write>(mut w: W, verdicts: &[InequalityVerdict]) -> Result<()> {
    writeln!(w, "check,params,slack,status")?;
    for v in verdicts {
        let params = serde_json::to_string(&v.params)?;
        let status = serde_json::to_value(v.status)?;
        writeln!(
            w,
            "{},{},{},{}",
            v.check,
            csv_escape(&params),
            v.slack,
            status.as_str().unwrap_or("unknown")
        )?;
    }
    Ok(())
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::FunctionSpec;

    fn tiny_plan() -> SweepPlan {
        SweepPlan {
            checks: vec!["sqrt-moment".into()],
            grids: Grids {
                s: vec![0.5, 1.0, 2.0],
                ..Grids::default()
            },
            catalog: vec![CatalogEntry {
                spec: FunctionSpec::GaussExp {
                    k: 1,
                    curvature: vec![vec![1.0]],
                    a: vec![0.0],
                    c: 0.0,
                },
                id: Some("std".into()),
                claim: None,
            }],
            budgets: Budgets::default(),
            backend: BackendKind::ClosedForm,
            seed: 11,
            out: None,
        }
    }

    #[test]
    fn empty_plan_runs_empty() {
        let plan = SweepPlan {
            checks: vec![],
            grids: Grids::default(),
            catalog: vec![],
            budgets: Budgets::default(),
            backend: BackendKind::Auto,
            seed: 0,
            out: None,
        };
        assert!(run_sweep(&plan).unwrap().is_empty());
    }

    #[test]
    fn tiny_sweep_all_hold() {
        let verdicts = run_sweep(&tiny_plan()).unwrap();
        assert_eq!(verdicts.len(), 3);
        let summary = SweepSummary::tally(&verdicts);
        assert_eq!(summary.holds, 3);
        assert_eq!(summary.violated, 0);
        for v in &verdicts {
            assert_eq!(v.params.get("fn").unwrap(), "std");
        }
    }

    #[test]
    fn mismatched_probe_is_flagged() {
        let mut plan = tiny_plan();
        plan.grids.s = vec![0.5];
        plan.catalog.push(CatalogEntry {
            spec: FunctionSpec::GaussExp {
                k: 1,
                curvature: vec![vec![-0.5]],
                a: vec![0.0],
                c: 0.0,
            },
            id: Some("probe".into()),
            claim: Some(LogCurvature::LogConcave),
        });
        let verdicts = run_sweep(&plan).unwrap();
        let summary = SweepSummary::tally(&verdicts);
        assert_eq!(summary.violated, 1);
        let bad = verdicts
            .iter()
            .find(|v| v.status == VerdictStatus::Violated)
            .unwrap();
        assert_eq!(bad.params.get("fn").unwrap(), "probe");
    }

    #[test]
    fn validation_rejects_bad_grids_and_checks() {
        let mut plan = tiny_plan();
        plan.checks = vec!["made-up".into()];
        assert!(plan.validate().is_err());

        let mut plan = tiny_plan();
        plan.grids.t = vec![1.5];
        assert!(plan.validate().is_err());

        let mut plan = tiny_plan();
        plan.grids.s = vec![-0.1];
        assert!(plan.validate().is_err());

        let mut plan = tiny_plan();
        plan.budgets.mc_samples = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn plan_json_round_trip() {
        let text = r#"{
            "checks": ["sqrt-moment", "log-sobolev"],
            "grids": {"s": [0.0, 0.5, 1.0]},
            "catalog": [
                {"kind": "gauss_exp", "k": 1, "A": [[1.0]], "a": [0.0], "c": 0.0}
            ],
            "budgets": {"mc_samples": 1000, "quad_nodes": 32},
            "backend": "auto",
            "seed": 5
        }"#;
        let plan = SweepPlan::from_json(text).unwrap();
        assert_eq!(plan.checks.len(), 2);
        assert_eq!(plan.budgets.mc_samples, 1000);
        assert_eq!(plan.budgets.mc_batches, 100);
        let verdicts = run_sweep(&plan).unwrap();
        assert!(!verdicts.is_empty());
    }

    #[test]
    fn jsonl_report_is_deterministic_after_header() {
        let plan = tiny_plan();
        let render = || {
            let verdicts = run_sweep(&plan).unwrap();
            let header = ReportHeader {
                seed: plan.seed,
                checks: plan.checks.clone(),
                started_unix: 0,
            };
            let mut buf = Vec::new();
            write_jsonl_report(&mut buf, &header, &verdicts).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = render();
        let b = render();
        let a_body: Vec<&str> = a.lines().skip(1).collect();
        let b_body: Vec<&str> = b.lines().skip(1).collect();
        assert_eq!(a_body, b_body);
        assert!(a.lines().next().unwrap().contains("\"meta\""));
    }

    #[test]
    fn csv_digest_quotes_params() {
        let verdicts = run_sweep(&tiny_plan()).unwrap();
        let mut buf = Vec::new();
        write_csv_digest(&mut buf, &verdicts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check,params,slack,status"));
        assert_eq!(text.lines().count(), 4);
        // params field is a quoted JSON object
        assert!(text.lines().nth(1).unwrap().contains("\"{\"\"claim\"\""));
    }

    #[test]
    fn sweep_with_monte_carlo_is_reproducible() {
        let mut plan = tiny_plan();
        plan.backend = BackendKind::MonteCarlo;
        plan.budgets.mc_samples = 20_000;
        plan.grids.s = vec![1.0, 2.0];
        let a = run_sweep(&plan).unwrap();
        let b = run_sweep(&plan).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(
                serde_json::to_string(x).unwrap(),
                serde_json::to_string(y).unwrap()
            );
        }
    }
}
