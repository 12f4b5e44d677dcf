//! Plain-text rendering of a conic problem for offline inspection.

use std::fmt::Write as _;
use std::path::Path;

use super::{AffineExpr, ConicProblem};

fn render(expr: &AffineExpr) -> String {
    let mut s = format!("{:e}", expr.constant);
    for &(i, c) in &expr.simplified().terms {
        let _ = write!(s, " {i}:{c:e}");
    }
    s
}

impl ConicProblem {
    /// Standard-form listing: variable count, objective, equalities, then every
    /// cone block with one affine row per line (`constant var:coeff ...`).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vars {}", self.num_vars);
        let mut obj = AffineExpr::constant(self.objective_constant);
        for (i, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                obj.push(i, c);
            }
        }
        let _ = writeln!(out, "minimize {}", render(&obj));
        for e in &self.equalities {
            let _ = writeln!(out, "eq {}", render(e));
        }
        for b in &self.blocks {
            let _ = writeln!(out, "cone {} {} {}", b.kind, b.rows.len(), b.label);
            for r in &b.rows {
                let _ = writeln!(out, "  {}", render(r));
            }
        }
        if let Some(w) = &self.warm_start {
            let vals: Vec<String> = w.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "warm {}", vals.join(" "));
        }
        out
    }

    pub fn write_dump(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.dump())
    }
}
