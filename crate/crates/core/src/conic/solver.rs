//! Primal log-barrier path following with a uniform-shift phase I.

use nalgebra::{DMatrix, DVector};

use super::{ConeBlock, ConeKind, ConicProblem, ConicSolution, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative duality-gap target.
    pub tolerance: f64,
    /// Barrier parameter growth per outer step.
    pub growth: f64,
    pub max_newton_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: 1e-7,
            growth: 10.0,
            max_newton_steps: 600,
        }
    }
}

struct Compiled {
    kind: ConeKind,
    vars: Vec<usize>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Compiled {
    fn new(block: &ConeBlock, shift: Option<usize>) -> Self {
        let mut vars: Vec<usize> = block
            .rows
            .iter()
            .flat_map(|e| e.terms.iter().map(|&(i, _)| i))
            .collect();
        vars.sort_unstable();
        vars.dedup();
        if let Some(s) = shift {
            vars.push(s);
        }
        let dim = block.rows.len();
        let mut a = DMatrix::zeros(dim, vars.len());
        let mut b = DVector::zeros(dim);
        for (r, e) in block.rows.iter().enumerate() {
            b[r] = e.constant;
            for &(i, c) in &e.terms {
                let col = vars.binary_search(&i).unwrap_or(0);
                a[(r, col)] += c;
            }
        }
        if shift.is_some() {
            let col = vars.len() - 1;
            let e = identity_direction(block.kind, dim);
            for r in 0..dim {
                a[(r, col)] += e[r];
            }
        }
        Compiled {
            kind: block.kind,
            vars,
            a,
            b,
        }
    }

    fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        let local = DVector::from_iterator(self.vars.len(), self.vars.iter().map(|&i| x[i]));
        &self.a * local + &self.b
    }

    fn degree(&self) -> f64 {
        self.kind.degree(self.b.len())
    }
}

/// Interior direction used for phase-I shifts.
fn identity_direction(kind: ConeKind, dim: usize) -> DVector<f64> {
    match kind {
        ConeKind::NonNeg => DVector::from_element(dim, 1.0),
        ConeKind::SecondOrder => {
            let mut e = DVector::zeros(dim);
            e[0] = 1.0;
            e
        }
        ConeKind::Psd(n) => DVector::from_fn(dim, |r, _| if r % n == r / n { 1.0 } else { 0.0 }),
        ConeKind::Exponential => DVector::from_column_slice(&[-1.0, 1.0, 1.0]),
    }
}

fn symmetric_matrix(n: usize, s: &DVector<f64>) -> DMatrix<f64> {
    let m = DMatrix::from_column_slice(n, n, s.as_slice());
    (&m + m.transpose()) * 0.5
}

fn exp_psi(s: &DVector<f64>) -> Option<f64> {
    let (x, y, z) = (s[0], s[1], s[2]);
    if !(y > 0.0 && z > 0.0) {
        return None;
    }
    let psi = y * (z / y).ln() - x;
    (psi > 0.0 && psi.is_finite()).then_some(psi)
}

fn is_interior(kind: ConeKind, s: &DVector<f64>) -> bool {
    barrier_value(kind, s).is_some()
}

fn barrier_value(kind: ConeKind, s: &DVector<f64>) -> Option<f64> {
    match kind {
        ConeKind::NonNeg => {
            if s.iter().all(|&v| v > 0.0) {
                Some(-s.iter().map(|v| v.ln()).sum::<f64>())
            } else {
                None
            }
        }
        ConeKind::SecondOrder => {
            let t = s[0];
            let d = t * t - s.rows(1, s.len() - 1).norm_squared();
            (t > 0.0 && d > 0.0).then(|| -d.ln())
        }
        ConeKind::Psd(n) => {
            let m = symmetric_matrix(n, s);
            let chol = m.cholesky()?;
            let l = chol.l_dirty();
            let mut v = 0.0;
            for i in 0..n {
                let d = l[(i, i)];
                if !(d > 0.0) {
                    return None;
                }
                v -= 2.0 * d.ln();
            }
            v.is_finite().then_some(v)
        }
        ConeKind::Exponential => {
            let psi = exp_psi(s)?;
            Some(-psi.ln() - s[1].ln() - s[2].ln())
        }
    }
}

/// Gradient and Hessian of the block barrier with respect to its local variables.
fn local_derivatives(block: &Compiled, s: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let a = &block.a;
    match block.kind {
        ConeKind::NonNeg => {
            if s.iter().any(|&v| !(v > 0.0)) {
                return None;
            }
            let inv = s.map(|v| 1.0 / v);
            let g = -(a.transpose() * &inv);
            let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] * inv[r]);
            Some((g, scaled.transpose() * scaled))
        }
        ConeKind::SecondOrder => {
            let t = s[0];
            let d = t * t - s.rows(1, s.len() - 1).norm_squared();
            if !(t > 0.0 && d > 0.0) {
                return None;
            }
            let mut js = -s.clone();
            js[0] = t;
            // ∇φ = -2Js/d, ∇²φ = -2J/d + 4 (Js)(Js)ᵀ/d²
            let g = a.transpose() * (&js * (-2.0 / d));
            let ajs = a.transpose() * &js;
            let mut ja = -a.clone();
            ja.row_mut(0).copy_from(&a.row(0));
            let h = (a.transpose() * ja) * (-2.0 / d) + (&ajs * ajs.transpose()) * (4.0 / (d * d));
            Some((g, h))
        }
        ConeKind::Psd(n) => {
            let m = symmetric_matrix(n, s);
            let chol = m.cholesky()?;
            let inv = chol.inverse();
            let nv = a.ncols();
            let mut g = DVector::zeros(nv);
            let mut prods = Vec::with_capacity(nv);
            let mut mats = Vec::with_capacity(nv);
            for j in 0..nv {
                let mj = DMatrix::from_column_slice(n, n, a.column(j).as_slice());
                g[j] = -inv.dot(&mj);
                prods.push(&inv * &mj * &inv);
                mats.push(mj);
            }
            let mut h = DMatrix::zeros(nv, nv);
            for i in 0..nv {
                for j in i..nv {
                    let v = mats[i].dot(&prods[j]);
                    h[(i, j)] = v;
                    h[(j, i)] = v;
                }
            }
            Some((g, h))
        }
        ConeKind::Exponential => {
            let psi = exp_psi(s)?;
            let (y, z) = (s[1], s[2]);
            let dpsi = DVector::from_column_slice(&[-1.0, (z / y).ln() - 1.0, y / z]);
            let mut d2 = DMatrix::zeros(3, 3);
            d2[(1, 1)] = -1.0 / y;
            d2[(1, 2)] = 1.0 / z;
            d2[(2, 1)] = 1.0 / z;
            d2[(2, 2)] = -y / (z * z);
            let mut gs = -&dpsi / psi;
            gs[1] -= 1.0 / y;
            gs[2] -= 1.0 / z;
            let mut hs = (&dpsi * dpsi.transpose()) / (psi * psi) - d2 / psi;
            hs[(1, 1)] += 1.0 / (y * y);
            hs[(2, 2)] += 1.0 / (z * z);
            Some((a.transpose() * gs, a.transpose() * hs * a))
        }
    }
}

/// Smallest shift `σ` along the cone's interior direction making `s + σe` feasible.
fn needed_shift(kind: ConeKind, s: &DVector<f64>) -> f64 {
    match kind {
        ConeKind::NonNeg => -s.min(),
        ConeKind::SecondOrder => s.rows(1, s.len() - 1).norm() - s[0],
        ConeKind::Psd(n) => {
            let m = symmetric_matrix(n, s);
            -m.symmetric_eigenvalues().min()
        }
        ConeKind::Exponential => {
            let e = identity_direction(kind, 3);
            let inside = |sig: f64| is_interior(kind, &(s + &e * sig));
            let scale = s.amax().max(1.0);
            let (mut lo, mut hi);
            if inside(0.0) {
                hi = 0.0;
                lo = -scale;
                let mut n = 0;
                while inside(lo) && n < 200 {
                    hi = lo;
                    lo *= 2.0;
                    n += 1;
                }
            } else {
                lo = 0.0;
                hi = scale;
                let mut n = 0;
                while !inside(hi) && n < 200 {
                    lo = hi;
                    hi *= 2.0;
                    n += 1;
                }
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    }
}

/// Distance outside the (closed) cone, 0 when inside.
pub(crate) fn cone_violation(kind: ConeKind, s: &DVector<f64>) -> f64 {
    match kind {
        ConeKind::Exponential => {
            let (x, y, z) = (s[0], s[1], s[2]);
            if y > 0.0 && z > 0.0 {
                (x - y * (z / y).ln()).max(0.0)
            } else {
                (-y).max(-z).max(if y.abs() < 1e-300 { x } else { f64::INFINITY }).max(0.0)
            }
        }
        _ => needed_shift(kind, s).max(0.0),
    }
}

struct Program {
    c: DVector<f64>,
    blocks: Vec<Compiled>,
    eq: Option<DMatrix<f64>>,
    nu: f64,
}

enum Centering {
    Centered,
    Stopped,
    Stalled,
    Budget,
}

impl Program {
    fn barrier(&self, x: &DVector<f64>) -> Option<f64> {
        let mut v = 0.0;
        for b in &self.blocks {
            v += barrier_value(b.kind, &b.slack(x))?;
        }
        Some(v)
    }

    fn derivatives(&self, x: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for b in &self.blocks {
            let (gl, hl) = local_derivatives(b, &b.slack(x))?;
            for (p, &i) in b.vars.iter().enumerate() {
                g[i] += gl[p];
                for (q, &j) in b.vars.iter().enumerate() {
                    h[(i, j)] += hl[(p, q)];
                }
            }
        }
        Some((g, h))
    }

    fn direction(&self, grad: &DVector<f64>, h: DMatrix<f64>) -> Option<DVector<f64>> {
        let n = grad.len();
        let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        if let Some(e) = &self.eq {
            let p = e.nrows();
            let mut kkt = DMatrix::zeros(n + p, n + p);
            kkt.view_mut((0, 0), (n, n)).copy_from(&h);
            for i in 0..n {
                kkt[(i, i)] += 1e-14 * scale;
            }
            kkt.view_mut((n, 0), (p, n)).copy_from(e);
            kkt.view_mut((0, n), (n, p)).copy_from(&e.transpose());
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-grad));
            let sol = kkt.lu().solve(&rhs)?;
            let d = sol.rows(0, n).into_owned();
            return d.iter().all(|v| v.is_finite()).then_some(d);
        }
        let mut ridge = 0.0;
        for _ in 0..12 {
            let mut m = h.clone();
            for i in 0..n {
                m[(i, i)] += ridge;
            }
            if let Some(ch) = m.cholesky() {
                let d = ch.solve(&(-grad));
                if d.iter().all(|v| v.is_finite()) {
                    return Some(d);
                }
            }
            ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
        }
        None
    }

    /// Newton centering at barrier weight `t`; `stop` is checked after every step.
    fn center(
        &self,
        x: &mut DVector<f64>,
        t: f64,
        budget: &mut usize,
        stop: &dyn Fn(&DVector<f64>) -> bool,
    ) -> Centering {
        loop {
            if *budget == 0 {
                return Centering::Budget;
            }
            *budget -= 1;
            let Some((gb, h)) = self.derivatives(x) else {
                return Centering::Stalled;
            };
            let grad = &self.c * t + gb;
            let Some(dx) = self.direction(&grad, h) else {
                return Centering::Stalled;
            };
            let dec = -grad.dot(&dx);
            let Some(f0) = self.barrier(x).map(|b| b + t * self.c.dot(x)) else {
                return Centering::Stalled;
            };
            // below this the Armijo test is lost in round-off of f
            if dec / 2.0 <= 1e-9 || dec <= 1e-13 * f0.abs() {
                return Centering::Centered;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial = &*x + &dx * alpha;
                if let Some(b) = self.barrier(&trial) {
                    let f = b + t * self.c.dot(&trial);
                    if f <= f0 - 0.25 * alpha * dec {
                        if trial == *x {
                            return Centering::Centered;
                        }
                        *x = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return if dec < 1e-6 {
                    Centering::Centered
                } else {
                    Centering::Stalled
                };
            }
            if stop(x) {
                return Centering::Stopped;
            }
        }
    }

    /// Initial barrier weight balancing objective and barrier gradients.
    fn initial_weight(&self, x: &DVector<f64>) -> f64 {
        let Some((gb, h)) = self.derivatives(x) else {
            return 1.0;
        };
        let (Some(d1), Some(d2)) = (self.direction(&self.c, h.clone()), self.direction(&gb, h)) else {
            return 1.0;
        };
        // t = -cᵀH⁻¹g / cᵀH⁻¹c, with d = -H⁻¹v.
        let t = -self.c.dot(&d2) / self.c.dot(&d1);
        if t.is_finite() && t > 0.0 {
            t.clamp(1e-8, 1e8)
        } else {
            1.0
        }
    }
}

fn failure(status: SolveStatus, x: Vec<f64>, problem: &ConicProblem, binding: Option<String>) -> ConicSolution {
    ConicSolution {
        status,
        objective: problem.objective_value(&x),
        x,
        gap: f64::INFINITY,
        newton_steps: 0,
        binding,
    }
}

/// Solves `problem`; numerical trouble is reported through the status, never a panic.
pub fn solve_conic(problem: &ConicProblem, settings: &SolverSettings) -> ConicSolution {
    let n = problem.num_vars;
    if let Err(e) = problem.validate() {
        return failure(SolveStatus::NumericalFailure, vec![0.0; n], problem, Some(e.to_string()));
    }
    let mut x = DVector::from_vec(problem.warm_start.clone().unwrap_or_else(|| vec![0.0; n]));
    let eq = if problem.equalities.is_empty() {
        None
    } else {
        let p = problem.equalities.len();
        let mut e = DMatrix::zeros(p, n);
        let mut f = DVector::zeros(p);
        for (r, ex) in problem.equalities.iter().enumerate() {
            f[r] = -ex.constant;
            for &(i, c) in &ex.terms {
                e[(r, i)] += c;
            }
        }
        let resid = &f - &e * &x;
        let svd = e.clone().svd(true, true);
        let Ok(corr) = svd.solve(&resid, 1e-12) else {
            return failure(SolveStatus::NumericalFailure, x.as_slice().to_vec(), problem, None);
        };
        x += corr;
        if (&e * &x - &f).amax() > 1e-8 * (1.0 + f.amax()) {
            return failure(
                SolveStatus::Infeasible,
                x.as_slice().to_vec(),
                problem,
                Some("equality".into()),
            );
        }
        Some(e)
    };

    let mut budget = settings.max_newton_steps;
    let originals: Vec<Compiled> = problem.blocks.iter().map(|b| Compiled::new(b, None)).collect();
    let all_inside = |x: &DVector<f64>| originals.iter().all(|b| is_interior(b.kind, &b.slack(x)));

    if !all_inside(&x) {
        let mut radius = 1e3 * (1.0 + x.amax());
        loop {
            match phase_one(problem, &originals, &x, radius, eq.as_ref(), settings, &mut budget) {
                Ok(x1) => {
                    x = x1;
                    break;
                }
                Err((SolveStatus::Infeasible, _, Some(label)))
                    if label == BALL_LABEL && radius < 1e12 =>
                {
                    radius *= 1e3;
                }
                Err((status, x1, binding)) => {
                    let mut sol = failure(status, x1.as_slice().to_vec(), problem, binding);
                    sol.newton_steps = settings.max_newton_steps - budget;
                    return sol;
                }
            }
        }
    }

    let prog = Program {
        c: DVector::from_column_slice(&problem.objective),
        nu: originals.iter().map(|b| b.degree()).sum::<f64>(),
        blocks: originals,
        eq,
    };
    if prog.nu == 0.0 {
        return failure(SolveStatus::NumericalFailure, x.as_slice().to_vec(), problem, Some("no cone constraints".into()));
    }
    let mut t = prog.initial_weight(&x);
    let never = |_: &DVector<f64>| false;
    let status = loop {
        match prog.center(&mut x, t, &mut budget, &never) {
            Centering::Centered | Centering::Stopped => {}
            Centering::Stalled => {
                let gap = prog.nu / t;
                let obj = problem.objective_value(x.as_slice());
                break if gap <= 1e3 * settings.tolerance * obj.abs().max(1.0) {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericalFailure
                };
            }
            Centering::Budget => break SolveStatus::MaxIter,
        }
        let obj = problem.objective_value(x.as_slice());
        if prog.nu / t <= settings.tolerance * obj.abs().max(1.0) {
            break SolveStatus::Optimal;
        }
        t *= settings.growth;
    };
    ConicSolution {
        status,
        objective: problem.objective_value(x.as_slice()),
        gap: prog.nu / t,
        x: x.as_slice().to_vec(),
        newton_steps: settings.max_newton_steps - budget,
        binding: None,
    }
}

type PhaseOneFailure = (SolveStatus, DVector<f64>, Option<String>);

const BALL_LABEL: &str = "phase-one search ball";

/// Minimizes a uniform cone shift `s` inside a ball around `x0`; the ball keeps
/// the auxiliary barrier bounded when the feasible set is not.
fn phase_one(
    problem: &ConicProblem,
    originals: &[Compiled],
    x0: &DVector<f64>,
    radius: f64,
    eq: Option<&DMatrix<f64>>,
    settings: &SolverSettings,
    budget: &mut usize,
) -> Result<DVector<f64>, PhaseOneFailure> {
    let n = problem.num_vars;
    let worst = |x: &DVector<f64>| -> (f64, usize) {
        originals
            .iter()
            .enumerate()
            .map(|(i, b)| (needed_shift(b.kind, &b.slack(x)), i))
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
    };
    let (need, _) = worst(x0);
    let s0 = need + need.abs().max(1.0);
    let mut blocks: Vec<Compiled> = problem.blocks.iter().map(|b| Compiled::new(b, Some(n))).collect();
    // s ≥ -floor keeps the auxiliary problem bounded below.
    let floor = s0.max(1.0);
    blocks.push(Compiled {
        kind: ConeKind::NonNeg,
        vars: vec![n],
        a: DMatrix::from_element(1, 1, 1.0),
        b: DVector::from_element(1, floor),
    });
    let mut ball_a = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        ball_a[(i + 1, i)] = 1.0;
    }
    let mut ball_b = DVector::zeros(n + 1);
    ball_b[0] = radius;
    ball_b.rows_mut(1, n).copy_from(&(-x0));
    blocks.push(Compiled {
        kind: ConeKind::SecondOrder,
        vars: (0..n).collect(),
        a: ball_a,
        b: ball_b,
    });
    let eq1 = eq.map(|e| {
        let mut m = DMatrix::zeros(e.nrows(), n + 1);
        m.view_mut((0, 0), (e.nrows(), n)).copy_from(e);
        m
    });
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let prog = Program {
        nu: blocks.iter().map(|b| b.degree()).sum(),
        c,
        blocks,
        eq: eq1,
    };
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    z[n] = s0;
    let feasible = |z: &DVector<f64>| {
        z[n] < 0.0 && {
            let x = z.rows(0, n).into_owned();
            originals.iter().all(|b| is_interior(b.kind, &b.slack(&x)))
        }
    };
    let mut t = prog.initial_weight(&z);
    let ball_index = prog.blocks.len() - 1;
    let binding = |z: &DVector<f64>| {
        let x = z.rows(0, n).into_owned();
        let ball = &prog.blocks[ball_index];
        let slack = ball.slack(&x);
        if slack[0] - slack.rows(1, n).norm() < 1e-3 * radius {
            return Some(BALL_LABEL.to_string());
        }
        Some(problem.blocks[worst(&x).1].label.clone())
    };
    loop {
        let outcome = prog.center(&mut z, t, budget, &feasible);
        let x = z.rows(0, n).into_owned();
        match outcome {
            Centering::Stopped => return Ok(x),
            Centering::Budget => return Err((SolveStatus::MaxIter, x, None)),
            Centering::Stalled => {
                let gap = prog.nu / t;
                if z[n] > 0.0 && gap < settings.tolerance * z[n].abs().max(1.0) * 1e3 {
                    return Err((SolveStatus::Infeasible, x, binding(&z)));
                }
                return Err((SolveStatus::NumericalFailure, x, binding(&z)));
            }
            Centering::Centered => {}
        }
        let gap = prog.nu / t;
        if z[n] - gap > 0.0 || gap <= settings.tolerance * floor.max(1.0) {
            return Err((SolveStatus::Infeasible, x, binding(&z)));
        }
        t *= settings.growth;
    }
}
