//! Exact minimization of the dual objective over the `(lambda1 >= 0,
//! lambda2)` half-plane for fixed `(xi, Q)`, i.e. evaluation of `f(xi, Q)`.
//!
//! With the curvature pinned at `a = xi`, each sample's regime changes only
//! across cut lines `lambda2 = 2 lambda1 x_i + beta_j`, where the `beta_j`
//! are the intercepts of the active case. Inside a cell of the arrangement
//! the objective is a fixed convex quadratic, so the method starts at the
//! arrangement vertex with the smallest objective value and alternates
//!
//! * region descent: minimize the cell's quadratic in closed form and move
//!   toward that minimizer from an interior anchor, clipping at the first
//!   crossed line, and
//! * ray descent: walk the incident lines segment by segment to a point of
//!   zero directional derivative,
//!
//! until neither descends. Joint convexity makes the stopping point the
//! global minimum and bounds the traversal at one visit per cell and
//! segment, which keeps the evaluation at `O(n^2)` arithmetic.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::inner_eval::{self, Intercepts};
use crate::model::{CaseId, DualPoint, ValidatedInstance};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DdError {
    #[error("xi must be positive, got {xi}")]
    NonpositiveXi { xi: f64 },
    /// Safety net; the convexity argument says the descent never needs this
    /// many steps.
    #[error("descent exceeded its iteration budget of {budget} steps")]
    IterationBudgetExceeded { budget: usize },
    /// The objective decreases without bound: the moment targets are not
    /// reachable inside the transport ball, so the worst-case problem is
    /// infeasible and its dual diverges.
    #[error("dual objective is unbounded below at xi = {xi}")]
    Unbounded { xi: f64 },
}

/// One cut line `lambda2 = slope * lambda1 + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutLine {
    pub sample_index: usize,
    /// Which intercept (1..=4) this line carries.
    pub intercept_index: u8,
    /// Always `2 * x_i`.
    pub slope: f64,
    pub intercept: f64,
}

/// The cut-line arrangement for one `(xi, Q)` evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneGeometry {
    pub case: CaseId,
    pub intercepts: Intercepts,
    pub lines: Vec<CutLine>,
    /// Pairwise line intersections with `lambda1 >= 0` plus every line's
    /// intersection with the `lambda1 = 0` axis, deduplicated.
    pub vertices: Vec<(f64, f64)>,
}

/// Result of one exact inner minimization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DdResult {
    pub lambda1_star: f64,
    pub lambda2_star: f64,
    pub f_value: f64,
    pub visited_regions: usize,
    pub visited_rays: usize,
    pub steps: usize,
    /// Iterate trail, starting vertex first.
    pub path: Vec<(f64, f64)>,
}

/// Builds the cut lines and vertex set for fixed `(xi, Q)`.
///
/// Only the intercepts that bound regions of the active case are
/// instantiated: `beta4` in Case 1, `beta2`/`beta3` in Case 3, and the
/// analogous sets in the two vacuous cases.
pub fn build_geometry(
    inst: &ValidatedInstance,
    xi: f64,
    q: f64,
) -> Result<PlaneGeometry, DdError> {
    if !(xi > 0.0) {
        return Err(DdError::NonpositiveXi { xi });
    }
    let costs = inst.costs();
    let (case, betas) = inner_eval::classify_case(&costs, xi, q)
        .expect("positive xi implies positive curvature");
    let intercept_set: &[(u8, f64)] = match case {
        CaseId::Case1 => &[(4, betas.beta4)],
        CaseId::Case2 => &[(2, betas.beta2), (3, betas.beta3), (4, betas.beta4)],
        CaseId::Case3 => &[(2, betas.beta2), (3, betas.beta3)],
        CaseId::Case4 => &[(1, betas.beta1)],
    };
    let mut lines = Vec::with_capacity(inst.n() * intercept_set.len());
    for (i, &x) in inst.samples().iter().enumerate() {
        for &(j, beta) in intercept_set {
            lines.push(CutLine {
                sample_index: i,
                intercept_index: j,
                slope: 2.0 * x,
                intercept: beta,
            });
        }
    }

    let mut vertices: Vec<(f64, f64)> = Vec::new();
    let push = |v: (f64, f64), vertices: &mut Vec<(f64, f64)>| {
        if v.0 >= 0.0
            && v.0.is_finite()
            && v.1.is_finite()
            && !vertices
                .iter()
                .any(|w| (w.0 - v.0).abs() <= 1e-12 && (w.1 - v.1).abs() <= 1e-12)
        {
            vertices.push(v);
        }
    };
    for a in 0..lines.len() {
        push((0.0, lines[a].intercept), &mut vertices);
        for b in (a + 1)..lines.len() {
            let ds = lines[a].slope - lines[b].slope;
            if ds.abs() <= 1e-14 * (1.0 + lines[a].slope.abs()) {
                continue; // parallel lines never intersect
            }
            let l1 = (lines[b].intercept - lines[a].intercept) / ds;
            let l2 = lines[a].slope * l1 + lines[a].intercept;
            push((l1, l2), &mut vertices);
        }
    }
    Ok(PlaneGeometry { case, intercepts: betas, lines, vertices })
}

/// Evaluates `f(xi, Q) = min F` over the half-plane by directional descent.
pub fn dd_minimize(
    inst: &ValidatedInstance,
    xi: f64,
    q: f64,
) -> Result<DdResult, DdError> {
    let geometry = build_geometry(inst, xi, q)?;
    let descent = Descent::new(inst, xi, q, &geometry);
    descent.run()
}

/// Re-derives the stopping test at a point: true when no adjacent region or
/// incident ray descends, i.e. the point is the constrained minimum.
pub fn audit_optimum(
    inst: &ValidatedInstance,
    xi: f64,
    q: f64,
    lambda1: f64,
    lambda2: f64,
) -> Result<bool, DdError> {
    let geometry = build_geometry(inst, xi, q)?;
    let descent = Descent::new(inst, xi, q, &geometry);
    let p = [lambda1, lambda2];
    let f_p = descent.eval(p);
    let mut rejected = HashSet::new();
    Ok(descent.find_descent(p, f_p, &mut rejected)?.is_none())
}

const REL_EPS: f64 = 1e-9;
const T_EPS: f64 = 1e-12;

struct Descent<'a> {
    inst: &'a ValidatedInstance,
    xi: f64,
    q: f64,
    case: CaseId,
    lines: &'a [CutLine],
    vertices: &'a [(f64, f64)],
    // Fixed coefficients of the objective: linear baseline plus per-regime
    // quadratic contributions assembled on demand.
    delta_term: f64,
    mu: f64,
    const_base: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Quad {
    qa: f64,
    qb: f64,
    qc: f64,
    qd: f64,
    qe: f64,
    qf: f64,
}

impl Quad {
    fn value(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        self.qa * x * x + self.qb * x * y + self.qc * y * y + self.qd * x + self.qe * y + self.qf
    }

    fn grad(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        [
            2.0 * self.qa * x + self.qb * y + self.qd,
            self.qb * x + 2.0 * self.qc * y + self.qe,
        ]
    }
}

enum RegionTarget {
    /// Finite stationary point of the region quadratic.
    Point([f64; 2]),
    /// Improving direction along which the quadratic is affine.
    Dir([f64; 2]),
    /// Flat: nothing to gain inside this region.
    Flat,
}

type Step = ([f64; 2], f64);

impl<'a> Descent<'a> {
    fn new(
        inst: &'a ValidatedInstance,
        xi: f64,
        q: f64,
        geometry: &'a PlaneGeometry,
    ) -> Self {
        let m = inst.moments();
        let m2 = m.second_raw_moment();
        let mut sxx_w = 0.0;
        for (i, &x) in inst.samples().iter().enumerate() {
            sxx_w += inst.psi_weight(i) * x * x;
        }
        Self {
            inst,
            xi,
            q,
            case: geometry.case,
            lines: &geometry.lines,
            vertices: &geometry.vertices,
            delta_term: inst.delta() - m2 - sxx_w,
            mu: m.mu,
            const_base: xi * m2,
        }
    }

    fn eval(&self, p: [f64; 2]) -> f64 {
        let lambda = DualPoint::new(p[0], p[1], self.xi - p[0]);
        inner_eval::eval_f(&lambda, self.q, self.inst)
            .expect("curvature is xi > 0 by construction")
    }

    fn run(&self) -> Result<DdResult, DdError> {
        let n = self.inst.n();
        let budget = 10 * (n * n + n) + 16;

        let mut p = self.vertices[0];
        let mut f_p = self.eval([p.0, p.1]);
        for &v in &self.vertices[1..] {
            let f = self.eval([v.0, v.1]);
            if f < f_p {
                f_p = f;
                p = v;
            }
        }
        let mut point = [p.0, p.1];
        let mut path = vec![p];
        let mut rejected: HashSet<Vec<i8>> = HashSet::new();
        let mut visited_regions: HashSet<Vec<i8>> = HashSet::new();
        let mut visited_rays = 0usize;
        let mut steps = 0usize;

        for _ in 0..budget {
            if f_p < -1e250 {
                return Err(DdError::Unbounded { xi: self.xi });
            }
            match self.find_descent(point, f_p, &mut rejected)? {
                Some((next, f_next, region_key)) => {
                    match region_key {
                        Some(key) => {
                            visited_regions.insert(key);
                        }
                        None => visited_rays += 1,
                    }
                    debug_assert!(f_next < f_p, "descent steps must strictly decrease F");
                    point = next;
                    f_p = f_next;
                    steps += 1;
                    path.push((point[0], point[1]));
                }
                None => {
                    return Ok(DdResult {
                        lambda1_star: point[0],
                        lambda2_star: point[1],
                        f_value: f_p,
                        visited_regions: visited_regions.len(),
                        visited_rays,
                        steps,
                        path,
                    });
                }
            }
        }
        Err(DdError::IterationBudgetExceeded { budget })
    }

    /// One probe round: incident rays first, then adjacent regions. Returns
    /// the accepted move, or `None` when the point is optimal.
    ///
    /// Rays run first so each cut line gets slid to its one-dimensional
    /// minimum before region moves bounce across it; a line whose global
    /// 1-D minimum was reached can never host another descent, which caps
    /// the traversal at one slide per line and keeps the step count at the
    /// arrangement size instead of a zigzag between close walls.
    #[allow(clippy::type_complexity)]
    fn find_descent(
        &self,
        p: [f64; 2],
        f_p: f64,
        rejected: &mut HashSet<Vec<i8>>,
    ) -> Result<Option<([f64; 2], f64, Option<Vec<i8>>)>, DdError> {
        let tol_dec = 1e-11 * (1.0 + f_p.abs());
        let on_axis = p[0] <= 1e-12 * (1.0 + p[1].abs());
        let incident = self.incident_lines(p);
        let base_sides = self.sides_at(p);
        let eps = REL_EPS * (1.0 + (p[0] * p[0] + p[1] * p[1]).sqrt());

        // Ray descent along incident lines (and the axis, when on it).
        let mut ray_dirs: Vec<[f64; 2]> = Vec::new();
        for &li in &incident {
            let s = self.lines[li].slope;
            let norm = (1.0 + s * s).sqrt();
            ray_dirs.push([1.0 / norm, s / norm]);
            ray_dirs.push([-1.0 / norm, -s / norm]);
        }
        if on_axis {
            ray_dirs.push([0.0, 1.0]);
            ray_dirs.push([0.0, -1.0]);
        }
        for d in ray_dirs {
            if on_axis && d[0] < -1e-15 {
                continue; // stay inside the half-plane
            }
            if let Some(t_star) = self.ray_minimum(p, d)? {
                let z = [(p[0] + t_star * d[0]).max(0.0), p[1] + t_star * d[1]];
                if let Some((q_new, f_new)) = self.accept_point(z, f_p, tol_dec) {
                    return Ok(Some((q_new, f_new, None)));
                }
            }
        }

        for d in self.sector_directions(p, &incident, on_axis) {
            let sides = self.sector_sides(&base_sides, &incident, d);
            if rejected.contains(&sides) {
                continue;
            }
            let quad = self.region_quad(&sides);
            let anchor = [(p[0] + eps * d[0]).max(0.0), p[1] + eps * d[1]];
            match self.region_target(&quad, anchor) {
                RegionTarget::Point(z) => {
                    if quad.value(z) < f_p - tol_dec {
                        if let Some((q_new, f_new)) =
                            self.clipped_move(anchor, z, f_p, tol_dec, eps)
                        {
                            return Ok(Some((q_new, f_new, Some(sides))));
                        }
                    } else {
                        // The region's global quadratic minimum cannot beat
                        // the current value; F only decreases from here, so
                        // this region never needs another probe.
                        rejected.insert(sides);
                    }
                }
                RegionTarget::Dir(dir) => {
                    match self.first_crossing(anchor, dir, f64::INFINITY) {
                        Some(t) => {
                            // A crossing at the anchor-offset scale means the
                            // improving direction immediately leaves the
                            // sector; the boundary rays own that descent.
                            if t > 10.0 * eps {
                                let z = [anchor[0] + t * dir[0], anchor[1] + t * dir[1]];
                                if let Some((q_new, f_new)) =
                                    self.accept_point(z, f_p, tol_dec)
                                {
                                    return Ok(Some((q_new, f_new, Some(sides))));
                                }
                            }
                        }
                        None => return Err(DdError::Unbounded { xi: self.xi }),
                    }
                }
                RegionTarget::Flat => {
                    rejected.insert(sides);
                }
            }
        }
        Ok(None)
    }

    fn accept_point(&self, z: [f64; 2], f_p: f64, tol_dec: f64) -> Option<Step> {
        let z = [z[0].max(0.0), z[1]];
        let f_new = self.eval(z);
        (f_new < f_p - tol_dec).then_some((z, f_new))
    }

    /// Moves from `anchor` toward `target`, stopping at the first crossed
    /// cut line or the axis, and accepts only strict improvement over a
    /// step meaningfully longer than the anchor offset.
    fn clipped_move(
        &self,
        anchor: [f64; 2],
        target: [f64; 2],
        f_p: f64,
        tol_dec: f64,
        eps: f64,
    ) -> Option<Step> {
        let d = [target[0] - anchor[0], target[1] - anchor[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if len <= 0.0 {
            return None;
        }
        let t_take = self.first_crossing(anchor, d, 1.0).unwrap_or(1.0).min(1.0);
        if t_take * len <= 10.0 * eps {
            return None;
        }
        let z = [anchor[0] + t_take * d[0], anchor[1] + t_take * d[1]];
        self.accept_point(z, f_p, tol_dec)
    }

    /// First parameter `t in (T_EPS, t_max]` at which the ray from `p`
    /// along `d` crosses a cut line or the axis.
    fn first_crossing(&self, p: [f64; 2], d: [f64; 2], t_max: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut consider = |t: f64| {
            if t > T_EPS && t <= t_max && best.map_or(true, |b| t < b) {
                best = Some(t);
            }
        };
        for line in self.lines {
            let denom = d[1] - line.slope * d[0];
            if denom.abs() <= 1e-300 {
                continue;
            }
            let t = (line.slope * p[0] + line.intercept - p[1]) / denom;
            consider(t);
        }
        if d[0] < 0.0 {
            consider(-p[0] / d[0]);
        }
        best
    }

    /// All crossings beyond the local noise floor, sorted ascending. `t` is
    /// a distance here (unit directions), so the floor scales with `p`.
    fn crossings(&self, p: [f64; 2], d: [f64; 2]) -> Vec<f64> {
        let t_eps = T_EPS * (1.0 + (p[0] * p[0] + p[1] * p[1]).sqrt());
        let mut ts = Vec::new();
        for line in self.lines {
            let denom = d[1] - line.slope * d[0];
            if denom.abs() <= 1e-300 {
                continue;
            }
            let t = (line.slope * p[0] + line.intercept - p[1]) / denom;
            if t > t_eps {
                ts.push(t);
            }
        }
        if d[0] < 0.0 {
            let t = -p[0] / d[0];
            if t > t_eps {
                ts.push(t);
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= t_eps);
        ts
    }

    /// 1-D minimization of F along `p + t d`, walking the piecewise
    /// quadratic segment by segment. Returns the minimizing `t`, `None`
    /// when the direction does not descend, or `Unbounded` when F decreases
    /// forever along it.
    fn ray_minimum(&self, p: [f64; 2], d: [f64; 2]) -> Result<Option<f64>, DdError> {
        let scale = 1.0 + (p[0] * p[0] + p[1] * p[1]).sqrt();
        let boundaries = self.crossings(p, d);
        let axis_stop = if d[0] < 0.0 { Some(-p[0] / d[0]) } else { None };

        let mut ta = 0.0;
        let mut idx = 0;
        loop {
            let tb = boundaries.get(idx).copied().unwrap_or(f64::INFINITY);
            let mid_t = if tb.is_finite() { (ta + tb) / 2.0 } else { ta + scale.max(ta) };
            let mid = [p[0] + mid_t * d[0], p[1] + mid_t * d[1]];
            if mid[0] < -T_EPS {
                // Walked past the axis; the previous boundary was the stop.
                return Ok((ta > T_EPS).then_some(ta));
            }
            let sides = self.sides_at(mid);
            let quad = self.region_quad(&sides);
            let aa = (quad.qa * d[0] * d[0] + quad.qb * d[0] * d[1] + quad.qc * d[1] * d[1])
                .max(0.0);
            let g = quad.grad(p);
            let bb = g[0] * d[0] + g[1] * d[1];
            let slope_at_a = 2.0 * aa * ta + bb;
            let tol_slope = 1e-12 * (1.0 + bb.abs());
            if slope_at_a >= -tol_slope {
                return Ok((ta > T_EPS).then_some(ta));
            }
            if aa > 1e-300 {
                let t_root = -bb / (2.0 * aa);
                if t_root <= tb {
                    let t_root = axis_stop.map_or(t_root, |s| t_root.min(s));
                    return Ok(Some(t_root));
                }
            } else if !tb.is_finite() {
                return if axis_stop.is_some() {
                    Ok(Some(axis_stop.unwrap()))
                } else {
                    Err(DdError::Unbounded { xi: self.xi })
                };
            }
            if let Some(stop) = axis_stop {
                if tb >= stop {
                    // The half-plane boundary cuts the walk short.
                    return Ok(Some(stop));
                }
            }
            ta = tb;
            idx += 1;
        }
    }

    fn incident_lines(&self, p: [f64; 2]) -> Vec<usize> {
        let mut out = Vec::new();
        for (k, line) in self.lines.iter().enumerate() {
            let r = p[1] - line.slope * p[0] - line.intercept;
            let scale = 1.0 + p[1].abs() + (line.slope * p[0]).abs() + line.intercept.abs();
            if r.abs() <= REL_EPS * scale {
                out.push(k);
            }
        }
        out
    }

    /// Residual signs of every cut line at a point; ties count as `+1`,
    /// matching the closed-form region tie-breaks.
    fn sides_at(&self, p: [f64; 2]) -> Vec<i8> {
        self.lines
            .iter()
            .map(|line| {
                if p[1] - line.slope * p[0] - line.intercept >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect()
    }

    /// Signs for the sector reached by leaving `p` in direction `d`:
    /// incident lines take the sign of their residual growth along `d`,
    /// everything else keeps its sign at `p`. Exact, no epsilon probing.
    fn sector_sides(&self, base: &[i8], incident: &[usize], d: [f64; 2]) -> Vec<i8> {
        let mut sides = base.to_vec();
        for &k in incident {
            let growth = d[1] - self.lines[k].slope * d[0];
            sides[k] = if growth >= 0.0 { 1 } else { -1 };
        }
        sides
    }

    /// Unit directions into every sector around `p`, ordered by angle.
    fn sector_directions(
        &self,
        p: [f64; 2],
        incident: &[usize],
        on_axis: bool,
    ) -> Vec<[f64; 2]> {
        let mut angles: Vec<f64> = Vec::new();
        for &k in incident {
            let s = self.lines[k].slope;
            let a = s.atan2(1.0);
            angles.push(a);
            angles.push(a + std::f64::consts::PI);
        }
        if on_axis {
            angles.push(std::f64::consts::FRAC_PI_2);
            angles.push(-std::f64::consts::FRAC_PI_2);
        }
        if angles.is_empty() {
            // Interior point: probe the containing region along no offset;
            // a zero direction keeps the anchor at p itself.
            return vec![[0.0, 0.0]];
        }
        let tau = std::f64::consts::TAU;
        for a in angles.iter_mut() {
            *a = a.rem_euclid(tau);
        }
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        let m = angles.len();
        let mut dirs = Vec::with_capacity(m);
        for k in 0..m {
            let next = if k + 1 == m { angles[0] + tau } else { angles[k + 1] };
            let midpoint = (angles[k] + next) / 2.0;
            let d = [midpoint.cos(), midpoint.sin()];
            if on_axis && d[0] < 1e-12 {
                continue;
            }
            if p[0] <= 0.0 && d[0] < 0.0 {
                continue;
            }
            dirs.push(d);
        }
        dirs
    }

    /// Per-sample regime (0, 1, or 2) inside the region described by the
    /// cut-line signs.
    fn regimes(&self, sides: &[i8]) -> Vec<u8> {
        let n = self.inst.n();
        let mut regimes = vec![2u8; n];
        // Collect each sample's line signs by intercept index.
        let mut s1 = vec![0i8; n];
        let mut s2 = vec![0i8; n];
        let mut s3 = vec![0i8; n];
        let mut s4 = vec![0i8; n];
        for (k, line) in self.lines.iter().enumerate() {
            let slot = match line.intercept_index {
                1 => &mut s1,
                2 => &mut s2,
                3 => &mut s3,
                _ => &mut s4,
            };
            slot[line.sample_index] = sides[k];
        }
        for i in 0..n {
            regimes[i] = match self.case {
                CaseId::Case1 => {
                    if s4[i] > 0 {
                        0
                    } else {
                        2
                    }
                }
                CaseId::Case2 => {
                    if s4[i] > 0 {
                        0
                    } else if s2[i] < 0 && s3[i] > 0 {
                        1
                    } else {
                        2
                    }
                }
                CaseId::Case3 => {
                    if s2[i] > 0 {
                        0
                    } else if s3[i] > 0 {
                        1
                    } else {
                        2
                    }
                }
                CaseId::Case4 => {
                    if s1[i] > 0 {
                        0
                    } else {
                        2
                    }
                }
            };
        }
        regimes
    }

    /// Assembles the convex quadratic that F restricts to inside a region.
    fn region_quad(&self, sides: &[i8]) -> Quad {
        let regimes = self.regimes(sides);
        let costs = self.inst.costs();
        let xi = self.xi;
        let mut quad = Quad {
            qd: self.delta_term,
            qe: self.mu,
            qf: self.const_base,
            ..Quad::default()
        };
        for (i, &x) in self.inst.samples().iter().enumerate() {
            let w = self.inst.psi_weight(i);
            match regimes[i] {
                0 => quad.qf += w * costs.c2 * self.q,
                r => {
                    // Vertex regimes contribute w * (2 x l1 - l2 + s)^2 / (4 xi)
                    // with s = -c2 (lower) or +c1 (upper).
                    let (s, cq) = if r == 1 {
                        (-costs.c2, costs.c2 * self.q)
                    } else {
                        (costs.c1, -costs.c1 * self.q)
                    };
                    let k = w / (4.0 * xi);
                    quad.qa += k * 4.0 * x * x;
                    quad.qb += -k * 4.0 * x;
                    quad.qc += k;
                    quad.qd += k * 4.0 * x * s;
                    quad.qe += -k * 2.0 * s;
                    quad.qf += k * s * s + w * cq;
                }
            }
        }
        quad
    }

    fn region_target(&self, quad: &Quad, p: [f64; 2]) -> RegionTarget {
        let h11 = 2.0 * quad.qa;
        let h12 = quad.qb;
        let h22 = 2.0 * quad.qc;
        let det = h11 * h22 - h12 * h12;
        let scale = (h11.abs() + h12.abs()) * (h22.abs() + h12.abs());
        if det > 1e-12 * scale.max(1e-300) {
            let z1 = (-quad.qd * h22 + quad.qe * h12) / det;
            let z2 = (h12 * quad.qd - h11 * quad.qe) / det;
            return RegionTarget::Point([z1, z2]);
        }
        // Rank-deficient Hessian. The gradient component along the null
        // direction is constant over the plane; a nonzero component means
        // the quadratic is affine and decreasing along that direction.
        let c = [quad.qd, quad.qe];
        let u = if h11.abs().max(h12.abs()) > 1e-300 {
            let norm = (h12 * h12 + h11 * h11).sqrt();
            [h12 / norm, -h11 / norm]
        } else if h22.abs() > 1e-300 {
            [1.0, 0.0]
        } else {
            // Fully flat Hessian: F is affine here.
            let norm = (c[0] * c[0] + c[1] * c[1]).sqrt();
            if norm <= 1e-300 {
                return RegionTarget::Flat;
            }
            return RegionTarget::Dir([-c[0] / norm, -c[1] / norm]);
        };
        let su = u[0] * c[0] + u[1] * c[1];
        if su.abs() > 1e-12 * (1.0 + c[0].abs() + c[1].abs()) {
            let sign = -su.signum();
            return RegionTarget::Dir([sign * u[0], sign * u[1]]);
        }
        // Minimize along the curved direction only.
        let v = {
            let norm = (h11 * h11 + h12 * h12).sqrt();
            if norm > 1e-300 {
                [h11 / norm, h12 / norm]
            } else {
                let norm = (h12 * h12 + h22 * h22).sqrt();
                [h12 / norm, h22 / norm]
            }
        };
        let alpha = 0.5 * (v[0] * (h11 * v[0] + h12 * v[1]) + v[1] * (h12 * v[0] + h22 * v[1]));
        if alpha <= 1e-300 {
            return RegionTarget::Flat;
        }
        let g = quad.grad(p);
        let beta = g[0] * v[0] + g[1] * v[1];
        let t = -beta / (2.0 * alpha);
        RegionTarget::Point([p[0] + t * v[0], p[1] + t * v[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostParams, MomentSpec, ProblemInstance};
    use crate::oracle::{grid_minimize, GridSpec};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn costs(c1: f64, c2: f64) -> CostParams {
        CostParams::new(c1, c2).unwrap()
    }

    #[test]
    fn geometry_single_sample_case1() {
        let inst = ProblemInstance::new(vec![2.0], 0.5, costs(1.0, 1.0))
            .validate()
            .unwrap();
        let g = build_geometry(&inst, 1.0, 0.1).unwrap();
        assert_eq!(g.case, CaseId::Case1);
        assert!(g.lines.len() <= 4);
        // Every line's axis intercept shows up as a vertex.
        for line in &g.lines {
            assert!(g
                .vertices
                .iter()
                .any(|v| v.0 == 0.0 && (v.1 - line.intercept).abs() <= 1e-12));
        }
    }

    #[test]
    fn geometry_parallel_lines_never_intersect() {
        let inst = ProblemInstance::new(vec![3.0, 1.0], 0.5, costs(1.0, 1.0))
            .validate()
            .unwrap();
        let g = build_geometry(&inst, 1.0, 2.0).unwrap();
        assert_eq!(g.case, CaseId::Case3);
        // Same-sample lines are parallel; intersections only pair lines of
        // different slopes, all at lambda1 >= 0.
        for v in &g.vertices {
            assert!(v.0 >= 0.0);
        }
        let distinct_slopes: Vec<f64> = vec![6.0, 2.0];
        for line in &g.lines {
            assert!(distinct_slopes.contains(&line.slope));
        }
    }

    #[test]
    fn geometry_vertex_count_matches_exhaustive_pairing() {
        let inst = ProblemInstance::new(vec![3.0, 2.0, 1.0], 0.5, costs(1.0, 1.0))
            .validate()
            .unwrap();
        let g = build_geometry(&inst, 1.0, 2.0).unwrap();
        let l = g.lines.len();
        // Candidate count: all pairs plus one axis point per line, before
        // positivity filtering and deduplication.
        let candidates = l * (l - 1) / 2 + l;
        assert!(g.vertices.len() <= candidates);
        assert!(!g.vertices.is_empty());
    }

    #[test]
    fn geometry_rejects_nonpositive_xi() {
        let inst = ProblemInstance::new(vec![1.0], 0.5, costs(1.0, 1.0))
            .validate()
            .unwrap();
        assert!(matches!(
            build_geometry(&inst, 0.0, 1.0),
            Err(DdError::NonpositiveXi { .. })
        ));
    }

    fn feasible_instance(samples: Vec<f64>, delta: f64, c: CostParams) -> ValidatedInstance {
        // Empirical moments keep the worst-case problem feasible for any
        // delta >= 0.
        ProblemInstance::new(samples, delta, c).validate().unwrap()
    }

    #[test]
    fn dd_matches_grid_on_single_sample() {
        let inst = feasible_instance(vec![1.0], 0.5, costs(1.0, 1.0));
        let dd = dd_minimize(&inst, 1.0, 0.5).unwrap();
        let grid = grid_minimize(&inst, 1.0, 0.5, &GridSpec::for_instance(&inst).with_passes(4))
            .unwrap();
        let tol = 1e-4 * (1.0 + grid.f_value.abs());
        assert!(
            (dd.f_value - grid.f_value).abs() <= tol,
            "dd {} vs grid {}",
            dd.f_value,
            grid.f_value
        );
        assert!(dd.f_value <= grid.f_value + tol);
    }

    #[test]
    fn dd_matches_grid_on_random_small_instances() {
        let mut rng = StdRng::seed_from_u64(11);
        for trial in 0..12 {
            let n = rng.gen_range(1..=6);
            let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let c = costs(rng.gen_range(0.5..20.0), rng.gen_range(0.5..20.0));
            let delta = rng.gen_range(0.1..4.0);
            let inst = feasible_instance(samples, delta, c);
            let xi = rng.gen_range(0.2..3.0);
            let q = rng.gen_range(0.0..12.0);
            let dd = dd_minimize(&inst, xi, q).unwrap();
            let grid =
                grid_minimize(&inst, xi, q, &GridSpec::for_instance(&inst).with_passes(4))
                    .unwrap();
            let tol = 1e-3 * (1.0 + grid.f_value.abs());
            assert!(
                (dd.f_value - grid.f_value).abs() <= tol,
                "trial {trial}: dd {} vs grid {} (xi={xi}, q={q})",
                dd.f_value,
                grid.f_value
            );
        }
    }

    #[test]
    fn dd_result_reevaluates_exactly() {
        let inst = feasible_instance(vec![4.0, 2.0, 7.0], 1.0, costs(5.0, 3.0));
        let dd = dd_minimize(&inst, 0.8, 3.0).unwrap();
        let lambda = DualPoint::new(dd.lambda1_star, dd.lambda2_star, 0.8 - dd.lambda1_star);
        let again = inner_eval::eval_f(&lambda, 3.0, &inst).unwrap();
        assert_eq!(dd.f_value, again);
        assert!(dd.lambda1_star >= 0.0);
    }

    #[test]
    fn dd_large_delta_pins_lambda1_to_axis() {
        let inst = feasible_instance(vec![3.0, 1.0], 1e9, costs(2.0, 1.0));
        let dd = dd_minimize(&inst, 1.0, 2.0).unwrap();
        assert!(dd.lambda1_star.abs() <= 1e-6, "lambda1 = {}", dd.lambda1_star);
        // Cross-check against a 1-D sweep over lambda2 on the axis.
        let mut best = f64::INFINITY;
        let mut l2 = -30.0;
        while l2 <= 30.0 {
            let f = inner_eval::eval_f(&DualPoint::new(0.0, l2, 1.0), 2.0, &inst).unwrap();
            best = best.min(f);
            l2 += 1e-3;
        }
        assert!((dd.f_value - best).abs() <= 1e-4 * (1.0 + best.abs()));
    }

    #[test]
    fn dd_detects_unbounded_dual_when_moments_unreachable() {
        // Point mass at zero cannot produce mean 1 and second moment 2
        // within a transport budget of 0.5, so the dual diverges.
        let inst = ProblemInstance::new(vec![0.0], 0.5, costs(1.0, 1.0))
            .with_moments(MomentSpec::new(1.0, 1.0).unwrap())
            .validate()
            .unwrap();
        let r = dd_minimize(&inst, 1.0, 0.0);
        assert!(matches!(r, Err(DdError::Unbounded { .. })), "got {r:?}");
    }

    #[test]
    fn dd_descent_is_monotone_and_within_visit_bound() {
        let inst = feasible_instance(vec![5.0, 3.0, 2.0, 1.0], 0.7, costs(4.0, 2.0));
        let dd = dd_minimize(&inst, 1.3, 2.5).unwrap();
        let mut prev = f64::INFINITY;
        for &(l1, l2) in &dd.path {
            let f = inner_eval::eval_f(&DualPoint::new(l1, l2, 1.3 - l1), 2.5, &inst).unwrap();
            assert!(f < prev + 1e-9, "path must descend");
            prev = f;
        }
        let l = 2 * inst.n() + 1; // cut lines plus the axis
        let regions_bound = 1 + l + l * (l - 1) / 2;
        let rays_bound = 2 * l * (l + 1);
        assert!(dd.visited_regions + dd.visited_rays <= regions_bound + rays_bound);
    }

    #[test]
    fn dd_endpoint_passes_optimality_audit() {
        let inst = feasible_instance(vec![6.0, 2.0], 1.5, costs(3.0, 2.0));
        let dd = dd_minimize(&inst, 0.9, 4.0).unwrap();
        assert!(audit_optimum(&inst, 0.9, 4.0, dd.lambda1_star, dd.lambda2_star).unwrap());
    }
}
