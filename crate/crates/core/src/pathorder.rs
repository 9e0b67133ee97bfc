//! Parametrized paths and the path-ordered exponential.
//!
//! The ordering convention is fixed by the defining ODE
//! dU/ds = U . A_mu(x(s)) dx^mu/ds, U(s0) = I: new factors multiply on the
//! RIGHT, so concatenating paths concatenates factors left to right and
//! reversing a path inverts the result. All composition laws downstream
//! follow from this one choice.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{HolonomyError, Result};
use crate::forms::{ChartDomain, MatrixValued1Form};
use crate::liecore::{exp_raw, unitary_polar_factor, CMatrix, GroupElement, GroupTag};

/// Closure tolerance for closed paths.
pub const TOL_PATH: f64 = 1e-10;

/// Parallel sample precomputation kicks in above this many evaluations.
const PAR_CUTOFF: usize = 512;

type PosFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Smooth curve s -> x(s) in a chart, with a velocity sampler.
#[derive(Clone)]
pub struct ParamPath {
    pub domain: ChartDomain,
    pub s_range: (f64, f64),
    position: PosFn,
    velocity: PosFn,
    pub closed: bool,
}

impl ParamPath {
    pub fn new<P, V>(
        domain: ChartDomain,
        s_range: (f64, f64),
        position: P,
        velocity: V,
        closed: bool,
    ) -> Result<Self>
    where
        P: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        V: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        let path = Self {
            domain,
            s_range,
            position: Arc::new(position),
            velocity: Arc::new(velocity),
            closed,
        };
        path.validate()?;
        Ok(path)
    }

    /// Velocity from central differences of the position sampler.
    pub fn with_fd_velocity<P>(
        domain: ChartDomain,
        s_range: (f64, f64),
        position: P,
        closed: bool,
    ) -> Result<Self>
    where
        P: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        let pos = Arc::new(position);
        let pos2 = pos.clone();
        let h = 1e-6 * (s_range.1 - s_range.0);
        let velocity = move |s: f64| -> Vec<f64> {
            let p = pos2(s + h);
            let m = pos2(s - h);
            p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        };
        let path = Self {
            domain,
            s_range,
            position: pos,
            velocity: Arc::new(velocity),
            closed,
        };
        path.validate()?;
        Ok(path)
    }

    fn validate(&self) -> Result<()> {
        if !(self.s_range.0 < self.s_range.1) {
            return Err(HolonomyError::Precondition("empty parameter range".into()));
        }
        let start = self.point_at(self.s_range.0);
        let end = self.point_at(self.s_range.1);
        self.domain.check(&start)?;
        self.domain.check(&end)?;
        if self.closed && self.endpoint_gap() > TOL_PATH {
            return Err(HolonomyError::Precondition(format!(
                "closed path endpoints differ by {:.3e}",
                self.endpoint_gap()
            )));
        }
        Ok(())
    }

    /// Euclidean distance between the chart coordinates of the endpoints.
    /// Nonzero for closed paths only when a coordinate wraps.
    pub fn endpoint_gap(&self) -> f64 {
        self.start()
            .iter()
            .zip(&self.end())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Loop in a chart with a wrapping (circle-valued) coordinate: counts
    /// as closed without the endpoint-coincidence check. The caller
    /// guarantees that every potential evaluated along it is periodic
    /// across the wrap.
    pub fn periodic<P, V>(
        domain: ChartDomain,
        s_range: (f64, f64),
        position: P,
        velocity: V,
    ) -> Result<Self>
    where
        P: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        V: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        let path = Self {
            domain,
            s_range,
            position: Arc::new(position),
            velocity: Arc::new(velocity),
            closed: true,
        };
        if !(path.s_range.0 < path.s_range.1) {
            return Err(HolonomyError::Precondition("empty parameter range".into()));
        }
        path.domain.check(&path.start())?;
        path.domain.check(&path.end())?;
        Ok(path)
    }

    pub fn point_at(&self, s: f64) -> Vec<f64> {
        (self.position)(s)
    }

    pub fn velocity_at(&self, s: f64) -> Vec<f64> {
        (self.velocity)(s)
    }

    pub fn start(&self) -> Vec<f64> {
        self.point_at(self.s_range.0)
    }

    pub fn end(&self) -> Vec<f64> {
        self.point_at(self.s_range.1)
    }

    /// Straight segment with unit-interval parameter.
    pub fn segment(domain: ChartDomain, from: Vec<f64>, to: Vec<f64>) -> Result<Self> {
        let dir: Vec<f64> = from.iter().zip(&to).map(|(a, b)| b - a).collect();
        let d2 = dir.clone();
        let f2 = from.clone();
        Self::new(
            domain,
            (0.0, 1.0),
            move |s| f2.iter().zip(&d2).map(|(a, d)| a + s * d).collect(),
            move |_| dir.clone(),
            false,
        )
    }

    /// Circle of radius r in the (i, j) coordinate plane around `center`,
    /// parametrized by angle in [0, 2 pi].
    pub fn circle(
        domain: ChartDomain,
        center: Vec<f64>,
        r: f64,
        plane: (usize, usize),
    ) -> Result<Self> {
        let c2 = center.clone();
        let c3 = center.clone();
        Self::new(
            domain,
            (0.0, std::f64::consts::TAU),
            move |s| {
                let mut p = c2.clone();
                p[plane.0] += r * s.cos();
                p[plane.1] += r * s.sin();
                p
            },
            move |s| {
                let mut v = vec![0.0; c3.len()];
                v[plane.0] = -r * s.sin();
                v[plane.1] = r * s.cos();
                v
            },
            true,
        )
    }

    /// Same curve traversed backwards.
    pub fn reversed(&self) -> Self {
        let (s0, s1) = self.s_range;
        let pos = self.position.clone();
        let vel = self.velocity.clone();
        Self {
            domain: self.domain.clone(),
            s_range: self.s_range,
            position: Arc::new(move |s| pos(s0 + s1 - s)),
            velocity: Arc::new(move |s| vel(s0 + s1 - s).iter().map(|v| -v).collect()),
            closed: self.closed,
        }
    }

    /// `self` followed by `other`; endpoints must match.
    pub fn concat(&self, other: &ParamPath) -> Result<Self> {
        let gap = self
            .end()
            .iter()
            .zip(&other.start())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if gap > TOL_PATH {
            return Err(HolonomyError::Precondition(format!(
                "concat endpoints differ by {gap:.3e}"
            )));
        }
        let l1 = self.s_range.1 - self.s_range.0;
        let l2 = other.s_range.1 - other.s_range.0;
        let (a0, b0) = (self.s_range.0, other.s_range.0);
        let (p1, v1) = (self.position.clone(), self.velocity.clone());
        let (p2, v2) = (other.position.clone(), other.velocity.clone());
        let closed = {
            let start = self.start();
            let end = other.end();
            start
                .iter()
                .zip(&end)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                <= TOL_PATH
        };
        Self::new(
            self.domain.clone(),
            (0.0, l1 + l2),
            move |s| {
                if s <= l1 {
                    p1(a0 + s)
                } else {
                    p2(b0 + (s - l1))
                }
            },
            move |s| {
                if s <= l1 {
                    v1(a0 + s)
                } else {
                    v2(b0 + (s - l1))
                }
            },
            closed,
        )
    }

    /// Reparametrize by a smooth monotone map tau -> s over [0, 1].
    pub fn reparametrized<F, G>(&self, map: F, map_deriv: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let pos = self.position.clone();
        let vel = self.velocity.clone();
        let map = Arc::new(map);
        let map2 = map.clone();
        Self {
            domain: self.domain.clone(),
            s_range: (0.0, 1.0),
            position: Arc::new(move |t| pos(map(t))),
            velocity: Arc::new(move |t| {
                let ds = map_deriv(t);
                vel(map2(t)).iter().map(|v| v * ds).collect()
            }),
            closed: self.closed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Per-step exponential of the trapezoidal average; every factor lies
    /// exactly in the group for unitary tags. Second order.
    ProductIntegral,
    /// Classic RK4 on the linear matrix ODE with per-step polar
    /// re-projection for unitary tags. Fourth order.
    Rk4OnGroup,
    /// Two-term Magnus step with Gauss-Legendre nodes. Fourth order.
    Magnus2,
}

#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions {
    pub steps: usize,
    pub scheme: Scheme,
    /// When set, refine (doubling steps) until the result moves less than
    /// this, up to `max_refinements` doublings.
    pub tolerance: Option<f64>,
    pub max_refinements: usize,
}

impl IntegratorOptions {
    pub fn product(steps: usize) -> Self {
        Self { steps, scheme: Scheme::ProductIntegral, tolerance: None, max_refinements: 0 }
    }

    pub fn rk4(steps: usize) -> Self {
        Self { steps, scheme: Scheme::Rk4OnGroup, tolerance: None, max_refinements: 0 }
    }

    pub fn magnus2(steps: usize) -> Self {
        Self { steps, scheme: Scheme::Magnus2, tolerance: None, max_refinements: 0 }
    }

    pub fn with_tolerance(mut self, tol: f64, max_refinements: usize) -> Self {
        self.tolerance = Some(tol);
        self.max_refinements = max_refinements;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(HolonomyError::Precondition("integrator needs steps >= 2".into()));
        }
        Ok(())
    }
}

/// Result of a path-ordered integration.
#[derive(Clone, Debug)]
pub struct Holonomy {
    pub value: GroupElement,
    pub scheme: Scheme,
    pub steps: usize,
    /// Frobenius distance to the next refinement level, when one was run.
    pub estimated_error: Option<f64>,
}

fn is_unitary_tag(tag: GroupTag) -> bool {
    matches!(tag, GroupTag::Unitary(_) | GroupTag::SpecialUnitary(_) | GroupTag::AbelianU1)
}

fn sample(gen: &(dyn Fn(f64) -> CMatrix + Sync), points: &[f64]) -> Result<Vec<CMatrix>> {
    let values: Vec<CMatrix> = if points.len() >= PAR_CUTOFF {
        points.par_iter().map(|&s| gen(s)).collect()
    } else {
        points.iter().map(|&s| gen(s)).collect()
    };
    for v in &values {
        if !v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(HolonomyError::NonFinite("path-ordered generator sample".into()));
        }
    }
    Ok(values)
}

fn run_scheme(
    gen: &(dyn Fn(f64) -> CMatrix + Sync),
    s0: f64,
    s1: f64,
    steps: usize,
    scheme: Scheme,
    tag: GroupTag,
) -> Result<CMatrix> {
    let n = steps;
    let h = (s1 - s0) / n as f64;
    if !h.is_finite() || h.abs() < f64::MIN_POSITIVE {
        return Err(HolonomyError::Precondition("step underflow".into()));
    }
    let dim = tag.matrix_dim();
    let mut u = CMatrix::identity(dim, dim);
    match scheme {
        Scheme::ProductIntegral => {
            let nodes: Vec<f64> = (0..=n).map(|j| s0 + h * j as f64).collect();
            let b = sample(gen, &nodes)?;
            let half_h = Complex64::new(0.5 * h, 0.0);
            for j in 0..n {
                let omega = (&b[j] + &b[j + 1]) * half_h;
                u *= exp_raw(&omega)?;
            }
        }
        Scheme::Rk4OnGroup => {
            // Stage values of the linear ODE only involve B at the nodes and
            // midpoints, so the half grid covers all stages.
            let halves: Vec<f64> = (0..=2 * n).map(|j| s0 + 0.5 * h * j as f64).collect();
            let b = sample(gen, &halves)?;
            let project = is_unitary_tag(tag);
            let ch = Complex64::new(h, 0.0);
            for j in 0..n {
                let b0 = &b[2 * j];
                let bm = &b[2 * j + 1];
                let b1 = &b[2 * j + 2];
                let k1 = &u * b0;
                let k2 = (&u + &k1 * (ch * 0.5)) * bm;
                let k3 = (&u + &k2 * (ch * 0.5)) * bm;
                let k4 = (&u + &k3 * ch) * b1;
                let two = Complex64::new(2.0, 0.0);
                u += (k1 + k2 * two + k3 * two + k4) * (ch / 6.0);
                if project {
                    u = unitary_polar_factor(&u)?;
                }
            }
        }
        Scheme::Magnus2 => {
            let off = 0.5 * h * (3.0_f64.sqrt() / 3.0);
            let mut pts = Vec::with_capacity(2 * n);
            for j in 0..n {
                let mid = s0 + h * (j as f64 + 0.5);
                pts.push(mid - off);
                pts.push(mid + off);
            }
            let b = sample(gen, &pts)?;
            let half_h = Complex64::new(0.5 * h, 0.0);
            // Right-multiplication convention flips the commutator term
            // relative to the usual left-convention Magnus step.
            let comm_coeff = Complex64::new(h * h * 3.0_f64.sqrt() / 12.0, 0.0);
            for j in 0..n {
                let b1 = &b[2 * j];
                let b2 = &b[2 * j + 1];
                let omega = (b1 + b2) * half_h + (b1 * b2 - b2 * b1) * comm_coeff;
                u *= exp_raw(&omega)?;
            }
        }
    }
    Ok(u)
}

/// Path-ordered exponential of an already-contracted generator
/// s -> A_mu(x(s)) dx^mu/ds over [s0, s1].
pub fn pexp_sampled(
    gen: &(dyn Fn(f64) -> CMatrix + Sync),
    s0: f64,
    s1: f64,
    opts: &IntegratorOptions,
    tag: GroupTag,
) -> Result<Holonomy> {
    opts.validate()?;
    let mut steps = opts.steps;
    let mut u = run_scheme(gen, s0, s1, steps, opts.scheme, tag)?;
    let mut estimated_error = None;
    if let Some(tol) = opts.tolerance {
        for _ in 0..opts.max_refinements {
            let finer = run_scheme(gen, s0, s1, steps * 2, opts.scheme, tag)?;
            let delta = (&finer - &u).norm();
            estimated_error = Some(delta);
            steps *= 2;
            u = finer;
            if delta <= tol {
                break;
            }
        }
    }
    Ok(Holonomy {
        value: GroupElement::with_tolerance(u, tag, f64::INFINITY)?,
        scheme: opts.scheme,
        steps,
        estimated_error,
    })
}

/// Partial ordered products of the trapezoidal product integral at every
/// grid node: out[j] = P exp over [s0, s_j]; out[0] = I.
pub fn pexp_partials(
    gen: &(dyn Fn(f64) -> CMatrix + Sync),
    s0: f64,
    s1: f64,
    steps: usize,
    tag: GroupTag,
) -> Result<Vec<CMatrix>> {
    pexp_partials_scheme(gen, s0, s1, steps, Scheme::ProductIntegral, tag)
}

/// Partial ordered products at every node of a uniform grid, stepping with
/// the requested scheme. Nested quadratures use these so the conjugators
/// carry the same convergence order as the outer integrator.
pub fn pexp_partials_scheme(
    gen: &(dyn Fn(f64) -> CMatrix + Sync),
    s0: f64,
    s1: f64,
    steps: usize,
    scheme: Scheme,
    tag: GroupTag,
) -> Result<Vec<CMatrix>> {
    let h = (s1 - s0) / steps as f64;
    let dim = tag.matrix_dim();
    let mut out = Vec::with_capacity(steps + 1);
    let mut u = CMatrix::identity(dim, dim);
    out.push(u.clone());
    match scheme {
        Scheme::ProductIntegral => {
            let nodes: Vec<f64> = (0..=steps).map(|j| s0 + h * j as f64).collect();
            let b = sample(gen, &nodes)?;
            let half_h = Complex64::new(0.5 * h, 0.0);
            for j in 0..steps {
                let omega = (&b[j] + &b[j + 1]) * half_h;
                u *= exp_raw(&omega)?;
                out.push(u.clone());
            }
        }
        Scheme::Rk4OnGroup => {
            let halves: Vec<f64> = (0..=2 * steps).map(|j| s0 + 0.5 * h * j as f64).collect();
            let b = sample(gen, &halves)?;
            let project = is_unitary_tag(tag);
            let ch = Complex64::new(h, 0.0);
            let two = Complex64::new(2.0, 0.0);
            for j in 0..steps {
                let b0 = &b[2 * j];
                let bm = &b[2 * j + 1];
                let b1 = &b[2 * j + 2];
                let k1 = &u * b0;
                let k2 = (&u + &k1 * (ch * 0.5)) * bm;
                let k3 = (&u + &k2 * (ch * 0.5)) * bm;
                let k4 = (&u + &k3 * ch) * b1;
                u += (k1 + k2 * two + k3 * two + k4) * (ch / 6.0);
                if project {
                    u = unitary_polar_factor(&u)?;
                }
                out.push(u.clone());
            }
        }
        Scheme::Magnus2 => {
            let off = 0.5 * h * (3.0_f64.sqrt() / 3.0);
            let mut pts = Vec::with_capacity(2 * steps);
            for j in 0..steps {
                let mid = s0 + h * (j as f64 + 0.5);
                pts.push(mid - off);
                pts.push(mid + off);
            }
            let b = sample(gen, &pts)?;
            let half_h = Complex64::new(0.5 * h, 0.0);
            let comm_coeff = Complex64::new(h * h * 3.0_f64.sqrt() / 12.0, 0.0);
            for j in 0..steps {
                let b1 = &b[2 * j];
                let b2 = &b[2 * j + 1];
                let omega = (b1 + b2) * half_h + (b1 * b2 - b2 * b1) * comm_coeff;
                u *= exp_raw(&omega)?;
                out.push(u.clone());
            }
        }
    }
    Ok(out)
}

fn contracted_generator(a: &MatrixValued1Form, path: &ParamPath) -> impl Fn(f64) -> CMatrix + Sync {
    let a = a.clone();
    let path = path.clone();
    let n = a.tag.matrix_dim();
    move |s: f64| {
        let x = path.point_at(s);
        let v = path.velocity_at(s);
        let comps = a.eval_unchecked(&x);
        let mut out = CMatrix::zeros(n, n);
        for (mu, c) in comps.iter().enumerate() {
            if v[mu] != 0.0 {
                out += c * Complex64::new(v[mu], 0.0);
            }
        }
        out
    }
}

fn check_path_in_domain(a: &MatrixValued1Form, path: &ParamPath, probes: usize) -> Result<()> {
    for j in 0..=probes {
        let s = path.s_range.0 + (path.s_range.1 - path.s_range.0) * j as f64 / probes as f64;
        a.domain.check(&path.point_at(s))?;
    }
    Ok(())
}

/// P exp of the potential `a` along `path`.
pub fn pexp(a: &MatrixValued1Form, path: &ParamPath, opts: &IntegratorOptions) -> Result<Holonomy> {
    check_path_in_domain(a, path, opts.steps.min(64))?;
    let gen = contracted_generator(a, path);
    pexp_sampled(&gen, path.s_range.0, path.s_range.1, opts, a.tag.group())
}

/// Holonomy of a closed loop.
pub fn holonomy_loop(
    a: &MatrixValued1Form,
    path: &ParamPath,
    opts: &IntegratorOptions,
) -> Result<Holonomy> {
    if !path.closed {
        return Err(HolonomyError::Precondition("holonomy_loop requires a closed path".into()));
    }
    pexp(a, path, opts)
}

/// One chart's contribution to a multi-chart loop.
#[derive(Clone)]
pub struct ChartPiece {
    pub potential: MatrixValued1Form,
    pub segment: ParamPath,
}

/// Alternating product P exp(piece_1) g_1 P exp(piece_2) g_2 ... g_{n-1}
/// P exp(piece_n) over a chart cover of a loop; `transitions[k]` is the
/// structure transition evaluated at the crossing point between piece k
/// and piece k+1.
pub fn holonomy_multichart(
    pieces: &[ChartPiece],
    transitions: &[CMatrix],
    opts: &IntegratorOptions,
) -> Result<Holonomy> {
    if pieces.is_empty() {
        return Err(HolonomyError::Precondition("no chart pieces".into()));
    }
    if transitions.len() + 1 != pieces.len() {
        return Err(HolonomyError::Precondition(format!(
            "need one transition per interior crossing: {} pieces, {} transitions",
            pieces.len(),
            transitions.len()
        )));
    }
    for w in pieces.windows(2) {
        let gap = w[0]
            .segment
            .end()
            .iter()
            .zip(&w[1].segment.start())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if gap > 1e-9 {
            return Err(HolonomyError::Precondition(format!(
                "consecutive chart pieces do not share endpoints (gap {gap:.3e})"
            )));
        }
    }
    let tag = pieces[0].potential.tag.group();
    let dim = tag.matrix_dim();
    let mut total = CMatrix::identity(dim, dim);
    for (k, piece) in pieces.iter().enumerate() {
        let hol = pexp(&piece.potential, &piece.segment, opts)?;
        total *= hol.value.matrix();
        if k < transitions.len() {
            total *= &transitions[k];
        }
    }
    Ok(Holonomy {
        value: GroupElement::with_tolerance(total, tag, f64::INFINITY)?,
        scheme: opts.scheme,
        steps: opts.steps,
        estimated_error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{curvature, gauge_transform, GaugeFunction};
    use crate::liecore::{frob_distance, paulis, u2_basis, AlgebraTag, I};

    fn chart2() -> ChartDomain {
        ChartDomain::from_bounds(vec![(-1.0, 1.0), (-1.0, 1.0)]).unwrap()
    }

    fn smooth_u2(domain: &ChartDomain, amp: f64) -> MatrixValued1Form {
        let basis = u2_basis();
        MatrixValued1Form::new(domain.clone(), AlgebraTag::Unitary(2), move |p| {
            let f = [
                amp * ((2.0 * p[0]).sin() + 0.4 * (3.0 * p[1]).cos()),
                amp * (0.7 * (p[0] + 2.0 * p[1]).cos()),
                amp * (0.5 * (p[0] * p[1]).sin() + 0.2),
                amp * (0.3 * (2.0 * p[1] - p[0]).sin()),
            ];
            let g = [
                amp * (0.6 * (p[0] - p[1]).cos()),
                amp * (0.2 * (3.0 * p[0]).sin()),
                amp * (0.4 * (p[1]).cos() - 0.1),
                amp * (0.5 * (p[0] + 0.5).sin()),
            ];
            let mut a0 = CMatrix::zeros(2, 2);
            let mut a1 = CMatrix::zeros(2, 2);
            for k in 0..4 {
                a0 += &basis[k] * Complex64::new(f[k], 0.0);
                a1 += &basis[k] * Complex64::new(g[k], 0.0);
            }
            vec![a0, a1]
        })
    }

    fn unit_circle(domain: &ChartDomain, r: f64) -> ParamPath {
        ParamPath::circle(domain.clone(), vec![0.0, 0.0], r, (0, 1)).unwrap()
    }

    #[test]
    fn pexp_of_zero_potential_is_identity() {
        let domain = chart2();
        let a = MatrixValued1Form::zero(domain.clone(), AlgebraTag::Unitary(2));
        let path = unit_circle(&domain, 0.5);
        for scheme in [Scheme::ProductIntegral, Scheme::Rk4OnGroup, Scheme::Magnus2] {
            let opts = IntegratorOptions { steps: 50, scheme, tolerance: None, max_refinements: 0 };
            let hol = pexp(&a, &path, &opts).unwrap();
            assert!((hol.value.matrix() - CMatrix::identity(2, 2)).norm() < 1e-13);
        }
    }

    #[test]
    fn abelian_segment_integrates_exactly() {
        // A = i kappa dx^0 along a straight segment of length L -> exp(i kappa L).
        let domain = chart2();
        let kappa = 0.83;
        let a = MatrixValued1Form::new(domain.clone(), AlgebraTag::AbelianU1, move |_p| {
            vec![CMatrix::from_row_slice(1, 1, &[I * kappa]), CMatrix::zeros(1, 1)]
        });
        let path = ParamPath::segment(domain, vec![-0.5, 0.2], vec![0.4, 0.2]).unwrap();
        let hol = pexp(&a, &path, &IntegratorOptions::product(200)).unwrap();
        let expected = (I * (kappa * 0.9)).exp();
        assert!((hol.value.matrix()[(0, 0)] - expected).norm() < 1e-10);
    }

    #[test]
    fn product_integral_matches_fine_oracle() {
        // N = 2000 against a 10^6-step oracle with a Richardson sanity check.
        let domain = chart2();
        let a = smooth_u2(&domain, 0.6);
        let path = unit_circle(&domain, 0.7);
        let hol = pexp(&a, &path, &IntegratorOptions::product(2000)).unwrap();
        let oracle = pexp(&a, &path, &IntegratorOptions::product(1_000_000)).unwrap();
        let half = pexp(&a, &path, &IntegratorOptions::product(500_000)).unwrap();
        let richardson = frob_distance(half.value.matrix(), oracle.value.matrix());
        assert!(richardson < 1e-9, "oracle not converged: {richardson:.3e}");
        let d = frob_distance(hol.value.matrix(), oracle.value.matrix());
        assert!(d <= 1e-6, "N=2000 vs oracle distance {d:.3e}");
    }

    #[test]
    fn unitarity_is_preserved_by_exact_factor_scheme() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.9);
        let path = unit_circle(&domain, 0.8);
        for steps in [37, 500, 4001] {
            let hol = pexp(&a, &path, &IntegratorOptions::product(steps)).unwrap();
            let u = hol.value.matrix();
            assert!((u.adjoint() * u - CMatrix::identity(2, 2)).norm() <= 1e-12);
        }
    }

    #[test]
    fn convergence_orders_match_schemes() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.8);
        let path = unit_circle(&domain, 0.75);
        // The reference must sit far below the finest measured error, which
        // rules out a second-order reference run.
        let reference = pexp(&a, &path, &IntegratorOptions::rk4(60_000))
            .unwrap()
            .value
            .into_matrix();
        let slope = |scheme: Scheme, ns: [usize; 4]| {
            let mut pts = Vec::new();
            for &n in &ns {
                let opts =
                    IntegratorOptions { steps: n, scheme, tolerance: None, max_refinements: 0 };
                let u = pexp(&a, &path, &opts).unwrap().value.into_matrix();
                let err = (&u - &reference).norm().max(1e-300);
                pts.push(((n as f64).ln(), err.ln()));
            }
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            (n * sxy - sx * sy) / (n * sxx - sx * sx)
        };
        let s_prod = slope(Scheme::ProductIntegral, [200, 400, 800, 1600]);
        assert!((-2.3..=-1.7).contains(&s_prod), "product integral slope {s_prod}");
        // The fourth-order schemes reach the reference's roundoff floor
        // around N ~ 10^3, so their slopes are measured at coarser N.
        let s_rk4 = slope(Scheme::Rk4OnGroup, [50, 100, 200, 400]);
        assert!((-4.4..=-3.6).contains(&s_rk4), "rk4 slope {s_rk4}");
        let s_mag = slope(Scheme::Magnus2, [50, 100, 200, 400]);
        assert!(s_mag < -3.6, "magnus2 slope {s_mag}");
    }

    #[test]
    fn rk4_projection_keeps_unitarity() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.9);
        let path = unit_circle(&domain, 0.8);
        let hol = pexp(&a, &path, &IntegratorOptions::rk4(300)).unwrap();
        let u = hol.value.matrix();
        assert!((u.adjoint() * u - CMatrix::identity(2, 2)).norm() <= 1e-12);
    }

    #[test]
    fn reversal_inverts_and_concat_multiplies() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.7);
        let c1 = ParamPath::segment(domain.clone(), vec![-0.6, -0.2], vec![0.1, 0.4]).unwrap();
        let c2 = ParamPath::segment(domain.clone(), vec![0.1, 0.4], vec![0.6, -0.3]).unwrap();
        let opts = IntegratorOptions::product(4000);

        let u1 = pexp(&a, &c1, &opts).unwrap().value.into_matrix();
        let u1_rev = pexp(&a, &c1.reversed(), &opts).unwrap().value.into_matrix();
        assert!((&u1 * &u1_rev - CMatrix::identity(2, 2)).norm() < 1e-8);

        // Concatenation identity on two arcs of one smooth curve, so the
        // junction carries no velocity kink and the joined grid (at doubled
        // step count) samples the same generator values.
        let arc = |lo: f64, hi: f64| {
            ParamPath::new(
                domain.clone(),
                (lo, hi),
                |s| vec![0.7 * s.cos(), 0.7 * s.sin()],
                |s| vec![-0.7 * s.sin(), 0.7 * s.cos()],
                false,
            )
            .unwrap()
        };
        let d1 = arc(0.0, 1.1);
        let d2 = arc(1.1, 2.6);
        let w1 = pexp(&a, &d1, &IntegratorOptions::product(1100)).unwrap().value.into_matrix();
        let w2 = pexp(&a, &d2, &IntegratorOptions::product(1500)).unwrap().value.into_matrix();
        let joined = d1.concat(&d2).unwrap();
        let w12 = pexp(&a, &joined, &IntegratorOptions::product(2600)).unwrap().value.into_matrix();
        assert!(
            (&w1 * &w2 - &w12).norm() < 1e-8,
            "concat residual {:.3e}",
            (&w1 * &w2 - &w12).norm()
        );
    }

    #[test]
    fn reparametrization_leaves_holonomy_unchanged() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.4);
        let path = unit_circle(&domain, 0.6);
        let opts = IntegratorOptions::product(20000);
        let base = pexp(&a, &path, &opts).unwrap().value.into_matrix();
        let tau = std::f64::consts::TAU;
        // Smooth monotone map [0,1] -> [0, 2 pi] with non-constant speed.
        let remapped = path.reparametrized(
            move |t| tau * t + 0.15 * (tau * t).sin(),
            move |t| tau + 0.15 * tau * (tau * t).cos(),
        );
        let again = pexp(&a, &remapped, &opts).unwrap().value.into_matrix();
        assert!(
            (&base - &again).norm() <= 1e-8,
            "reparametrization moved holonomy by {:.3e}",
            (&base - &again).norm()
        );
    }

    #[test]
    fn loop_requires_closed_path() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.5);
        let open = ParamPath::segment(domain, vec![0.0, 0.0], vec![0.5, 0.0]).unwrap();
        assert!(holonomy_loop(&a, &open, &IntegratorOptions::product(100)).is_err());
    }

    #[test]
    fn constant_loop_gives_identity() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.8);
        let path =
            ParamPath::new(domain, (0.0, 1.0), |_s| vec![0.3, -0.2], |_s| vec![0.0, 0.0], true)
                .unwrap();
        let hol = holonomy_loop(&a, &path, &IntegratorOptions::product(100)).unwrap();
        assert!((hol.value.matrix() - CMatrix::identity(2, 2)).norm() < 1e-13);
    }

    #[test]
    fn abelian_loop_satisfies_stokes() {
        // u(1) holonomy around a circle equals exp of the curvature flux,
        // with the flux from 2D quadrature of F over the disk.
        let domain = chart2();
        let a = MatrixValued1Form::new(domain.clone(), AlgebraTag::AbelianU1, |p| {
            vec![
                CMatrix::from_row_slice(1, 1, &[I * (0.4 * p[1] + 0.3 * (2.0 * p[1]).sin())]),
                CMatrix::from_row_slice(1, 1, &[I * (0.9 * p[0] * p[0])]),
            ]
        });
        let r = 0.55;
        let path = unit_circle(&domain, r);
        let hol = holonomy_loop(&a, &path, &IntegratorOptions::product(4000)).unwrap();

        // Quadrature of F_{01} over the enclosed disk (polar grid).
        let f = curvature(&a);
        let (nr, nt) = (400, 400);
        let mut flux = Complex64::new(0.0, 0.0);
        for ir in 0..nr {
            let rho = r * (ir as f64 + 0.5) / nr as f64;
            for it in 0..nt {
                let th = std::f64::consts::TAU * (it as f64 + 0.5) / nt as f64;
                let p = [rho * th.cos(), rho * th.sin()];
                let table = f.eval_unchecked(&p);
                let da = r / nr as f64 * std::f64::consts::TAU / nt as f64 * rho;
                flux += table[0][1][(0, 0)] * Complex64::new(da, 0.0);
            }
        }
        let expected = flux.exp();
        let got = hol.value.matrix()[(0, 0)];
        assert!(
            (got - expected).norm() <= 1e-6,
            "stokes mismatch {:.3e}",
            (got - expected).norm()
        );
    }

    #[test]
    fn loop_holonomy_conjugates_under_gauge_transformations() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.6);
        let gauge = GaugeFunction::new(domain.clone(), |p| {
            let [sx, sy, _] = paulis();
            (sx * (I * (0.4 * p[1])) + sy * (I * (0.5 * p[0] + 0.2))).exp()
        });
        let a_prime = gauge_transform(&a, &gauge).unwrap();
        let path = unit_circle(&domain, 0.65);
        let opts = IntegratorOptions::product(24000);
        let hol = holonomy_loop(&a, &path, &opts).unwrap().value.into_matrix();
        let hol_prime = holonomy_loop(&a_prime, &path, &opts).unwrap().value.into_matrix();
        let g0 = gauge.eval(&path.start());
        let expected = g0.clone().try_inverse().unwrap() * &hol * &g0;
        assert!(
            (&hol_prime - &expected).norm() <= 1e-7,
            "gauge conjugation residual {:.3e}",
            (&hol_prime - &expected).norm()
        );
    }

    #[test]
    fn multichart_with_trivial_transitions_matches_single_chart() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.7);
        let circle = unit_circle(&domain, 0.7);
        let opts = IntegratorOptions::product(3000);
        let whole = holonomy_loop(&a, &circle, &opts).unwrap().value.into_matrix();

        // Cut the same loop into two halves with an identity transition.
        let half1 = ParamPath::new(
            domain.clone(),
            (0.0, std::f64::consts::PI),
            |s| vec![0.7 * s.cos(), 0.7 * s.sin()],
            |s| vec![-0.7 * s.sin(), 0.7 * s.cos()],
            false,
        )
        .unwrap();
        let half2 = ParamPath::new(
            domain.clone(),
            (std::f64::consts::PI, std::f64::consts::TAU),
            |s| vec![0.7 * s.cos(), 0.7 * s.sin()],
            |s| vec![-0.7 * s.sin(), 0.7 * s.cos()],
            false,
        )
        .unwrap();
        let pieces = vec![
            ChartPiece { potential: a.clone(), segment: half1 },
            ChartPiece { potential: a.clone(), segment: half2 },
        ];
        let opts_half = IntegratorOptions::product(1500);
        let glued = holonomy_multichart(&pieces, &[CMatrix::identity(2, 2)], &opts_half)
            .unwrap()
            .value
            .into_matrix();
        assert!((&whole - &glued).norm() < 1e-7);
    }

    #[test]
    fn abelian_two_chart_loop_is_crossing_point_independent() {
        // u(1) loop split across two charts related by g = exp(i chi(x)):
        // the assembled holonomy must not depend on where the chart change
        // is placed.
        let domain = chart2();
        let a1 = MatrixValued1Form::new(domain.clone(), AlgebraTag::AbelianU1, |p| {
            vec![
                CMatrix::from_row_slice(1, 1, &[I * (0.6 * p[1] + 0.2)]),
                CMatrix::from_row_slice(1, 1, &[I * (0.8 * p[0] * p[0])]),
            ]
        });
        let chi = |p: &[f64]| 0.7 * p[0] + 0.4 * p[1] * p[1];
        let gauge = GaugeFunction::new(domain.clone(), move |p| {
            CMatrix::from_row_slice(1, 1, &[(I * chi(p)).exp()])
        });
        let a2 = gauge_transform(&a1, &gauge).unwrap();
        let r = 0.6;
        let arc = |lo: f64, hi: f64| {
            ParamPath::new(
                domain.clone(),
                (lo, hi),
                move |s| vec![r * s.cos(), r * s.sin()],
                move |s| vec![-r * s.sin(), r * s.cos()],
                false,
            )
            .unwrap()
        };
        let opts = IntegratorOptions::product(4000);
        let mut results = Vec::new();
        for cross in [0.9_f64, 1.6, 2.4, 3.3, 4.1] {
            let pieces = vec![
                ChartPiece { potential: a1.clone(), segment: arc(0.0, cross) },
                ChartPiece { potential: a2.clone(), segment: arc(cross, 5.1) },
                ChartPiece { potential: a1.clone(), segment: arc(5.1, std::f64::consts::TAU) },
            ];
            let x_cross = [r * cross.cos(), r * cross.sin()];
            let x_back = [r * 5.1_f64.cos(), r * 5.1_f64.sin()];
            let transitions = vec![
                gauge.eval(&x_cross),
                gauge.eval(&x_back).try_inverse().unwrap(),
            ];
            let hol = holonomy_multichart(&pieces, &transitions, &opts).unwrap();
            results.push(hol.value.into_matrix());
        }
        for r in &results[1..] {
            assert!(
                (r - &results[0]).norm() <= 1e-8,
                "crossing dependence {:.3e}",
                (r - &results[0]).norm()
            );
        }
    }

    #[test]
    fn multichart_rejects_mismatched_segments() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.5);
        let s1 = ParamPath::segment(domain.clone(), vec![0.0, 0.0], vec![0.5, 0.0]).unwrap();
        let s2 = ParamPath::segment(domain.clone(), vec![0.4, 0.1], vec![0.0, 0.0]).unwrap();
        let pieces = vec![
            ChartPiece { potential: a.clone(), segment: s1 },
            ChartPiece { potential: a, segment: s2 },
        ];
        let err = holonomy_multichart(
            &pieces,
            &[CMatrix::identity(2, 2)],
            &IntegratorOptions::product(50),
        );
        assert!(err.is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(8))]
        /// Reversal inverts the ordered exponential and unitarity holds for
        /// arbitrary step counts (exact-factor scheme).
        #[test]
        fn reversal_and_unitarity_hold_for_random_segments(
            steps in 11usize..400,
            x0 in -0.7f64..0.0,
            y0 in -0.7f64..0.0,
            x1 in 0.0f64..0.7,
            y1 in 0.0f64..0.7,
        ) {
            let domain = chart2();
            let a = smooth_u2(&domain, 0.8);
            let seg = ParamPath::segment(domain, vec![x0, y0], vec![x1, y1]).unwrap();
            let opts = IntegratorOptions::product(steps);
            let u = pexp(&a, &seg, &opts).unwrap().value.into_matrix();
            proptest::prop_assert!(
                (u.adjoint() * &u - CMatrix::identity(2, 2)).norm() <= 1e-12
            );
            let u_rev = pexp(&a, &seg.reversed(), &opts).unwrap().value.into_matrix();
            // Mirrored trapezoid factors cancel exactly up to rounding.
            proptest::prop_assert!((&u * &u_rev - CMatrix::identity(2, 2)).norm() <= 1e-10);
        }
    }

    #[test]
    fn refinement_reports_error_estimate() {
        let domain = chart2();
        let a = smooth_u2(&domain, 0.8);
        let path = unit_circle(&domain, 0.7);
        let opts = IntegratorOptions::product(250).with_tolerance(5e-7, 8);
        let hol = pexp(&a, &path, &opts).unwrap();
        assert!(hol.steps > 250);
        assert!(hol.estimated_error.unwrap() <= 5e-7);
    }
}
