//! Aggregation of sweep cells into CSV tables and a Markdown summary with
//! trend verdicts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fstar_core::ao::BaselineKind;

use crate::error::{BenchError, Result};
use crate::sweep::{Cell, SweepParam};

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub value: f64,
    pub scheme: BaselineKind,
    pub feasible: usize,
    pub total: usize,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn values(cells: &[Cell]) -> Vec<f64> {
    let mut v: Vec<f64> = cells.iter().map(|c| c.value).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn schemes(cells: &[Cell]) -> Vec<BaselineKind> {
    let mut v: Vec<BaselineKind> = cells.iter().map(|c| c.scheme).collect();
    v.sort();
    v.dedup();
    v
}

/// Mean and spread per `(value, scheme)` over the feasible seeds.
pub fn summarize(cells: &[Cell]) -> Vec<Summary> {
    let mut out = Vec::new();
    for value in values(cells) {
        for scheme in schemes(cells) {
            let group: Vec<&Cell> = cells.iter().filter(|c| c.value == value && c.scheme == scheme).collect();
            let rates: Vec<f64> = group.iter().filter_map(|c| c.rate()).collect();
            let (mean, std) = mean_std(&rates);
            out.push(Summary {
                value,
                scheme,
                feasible: rates.len(),
                total: group.len(),
                mean,
                std,
            });
        }
    }
    out
}

/// Means per scheme at `value` over the seeds on which every scheme succeeded.
pub fn paired_means(cells: &[Cell], value: f64) -> BTreeMap<BaselineKind, f64> {
    let at: Vec<&Cell> = cells.iter().filter(|c| c.value == value).collect();
    let kinds = schemes(cells);
    let mut seeds: Vec<u64> = at.iter().map(|c| c.seed).collect();
    seeds.sort();
    seeds.dedup();
    let common: Vec<u64> = seeds
        .into_iter()
        .filter(|&s| kinds.iter().all(|&k| at.iter().any(|c| c.seed == s && c.scheme == k && c.rate().is_some())))
        .collect();
    kinds
        .into_iter()
        .map(|k| {
            let rates: Vec<f64> = at
                .iter()
                .filter(|c| c.scheme == k && common.contains(&c.seed))
                .filter_map(|c| c.rate())
                .collect();
            (k, mean_std(&rates).0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub claim: String,
    pub holds: bool,
    pub detail: String,
}

/// Non-decreasing means per scheme along the parameter (when more of it
/// should help) and the scheme ordering at every value.
pub fn verdicts(cells: &[Cell], parameter: SweepParam) -> Vec<Verdict> {
    let mut out = Vec::new();
    let vals = values(cells);
    let paired: Vec<BTreeMap<BaselineKind, f64>> = vals.iter().map(|&v| paired_means(cells, v)).collect();
    if parameter.rate_should_grow() && vals.len() > 1 {
        for scheme in schemes(cells) {
            let means: Vec<f64> = summarize(cells)
                .into_iter()
                .filter(|s| s.scheme == scheme)
                .map(|s| s.mean)
                .collect();
            let finite: Vec<f64> = means.iter().copied().filter(|m| m.is_finite()).collect();
            out.push(Verdict {
                claim: format!("{scheme} rate non-decreasing in {}", parameter.name()),
                holds: finite.windows(2).all(|w| w[1] >= w[0]),
                detail: means.iter().map(|&m| fmt_mean(m)).collect::<Vec<_>>().join(" → "),
            });
        }
    }
    for (v, means) in vals.iter().zip(&paired) {
        let ordered: Vec<(BaselineKind, f64)> = means.iter().map(|(&k, &m)| (k, m)).collect();
        if ordered.len() < 2 || ordered.iter().any(|(_, m)| !m.is_finite()) {
            continue;
        }
        let holds = ordered.windows(2).all(|w| w[0].1 >= w[1].1);
        out.push(Verdict {
            claim: format!(
                "{} at {} = {v}",
                ordered.iter().map(|(k, _)| k.to_string()).collect::<Vec<_>>().join(" ≥ "),
                parameter.name()
            ),
            holds,
            detail: ordered.iter().map(|(k, m)| format!("{k} {m:.4}")).collect::<Vec<_>>().join(", "),
        });
    }
    if parameter == SweepParam::PowerDbm {
        if let Some(i) = vals.iter().position(|&v| (v - 15.0).abs() < 1e-9) {
            if let (Some(f), Some(t)) = (paired[i].get(&BaselineKind::FStar), paired[i].get(&BaselineKind::TStar)) {
                out.push(Verdict {
                    claim: "f-star / t-star at 15 dBm ≥ 1.05".into(),
                    holds: f / t >= 1.05,
                    detail: format!("measured ratio {:.4}", f / t),
                });
            }
        }
    }
    out
}

/// Mean with `n/a` for points where no run was feasible.
fn fmt_mean(m: f64) -> String {
    if m.is_finite() {
        format!("{m:.4}")
    } else {
        "n/a".into()
    }
}

pub fn results_csv(cells: &[Cell], parameter: SweepParam) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cells {
        w.serialize(c.row(parameter))?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Sweep(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn summary_csv(cells: &[Cell], parameter: SweepParam) -> String {
    let mut s = format!("{},scheme,feasible,total,mean_rate,std_rate\n", parameter.name());
    for r in summarize(cells) {
        let _ = writeln!(s, "{},{},{},{},{:.9},{:.9}", r.value, r.scheme, r.feasible, r.total, r.mean, r.std);
    }
    s
}

pub fn markdown(cells: &[Cell], parameter: SweepParam) -> String {
    let kinds = schemes(cells);
    let mut s = format!("# Sweep over {}\n\n", parameter.name());
    let _ = write!(s, "| {} |", parameter.name());
    for k in &kinds {
        let _ = write!(s, " {k} |");
    }
    s.push_str("\n|---|");
    for _ in &kinds {
        s.push_str("---|");
    }
    s.push('\n');
    let summary = summarize(cells);
    for v in values(cells) {
        let _ = write!(s, "| {v} |");
        for k in &kinds {
            let r = summary.iter().find(|r| r.value == v && r.scheme == *k).expect("summary covers the grid");
            let _ = write!(s, " {:.3} ± {:.3} ({}/{}) |", r.mean, r.std, r.feasible, r.total);
        }
        s.push('\n');
    }
    s.push_str("\nRates in bps/Hz, mean ± std over feasible seeds (feasible/total).\n\n## Trends\n\n");
    for v in verdicts(cells, parameter) {
        let _ = writeln!(s, "- [{}] {}: {}", if v.holds { "pass" } else { "FAIL" }, v.claim, v.detail);
    }
    s
}

/// Writes `results.csv`, `summary.csv` and `summary.md` into `dir`.
pub fn write_report(cells: &[Cell], parameter: SweepParam, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| BenchError::io(p, e))
    };
    put("results.csv", results_csv(cells, parameter)?)?;
    put("summary.csv", summary_csv(cells, parameter))?;
    put("summary.md", markdown(cells, parameter))
}
