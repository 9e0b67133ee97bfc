//! Matrix-valued differential forms on chart domains.
//!
//! 1-forms are closures `point -> [A_mu]`, one Lie-algebra matrix per
//! coordinate direction; 2-forms carry the full antisymmetric component
//! table. Derivatives are second-order central differences by default,
//! with analytic callbacks for scenarios that can supply them. Mixed
//! objects on a product chart M x R keep the dx / dy blocks separate.

use std::sync::Arc;

use nalgebra::try_invert_to;
use num_complex::Complex64;

use crate::error::{HolonomyError, Result};
use crate::liecore::{commutator_raw, AlgebraTag, CMatrix};

/// Default relative step for central differences: h = 1e-4 * range.
pub const DEFAULT_H_REL: f64 = 1e-4;

/// A rectangular coordinate chart.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartDomain {
    bounds: Vec<(f64, f64)>,
    labels: Vec<String>,
}

impl ChartDomain {
    pub fn new(bounds: Vec<(f64, f64)>, labels: Vec<String>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(HolonomyError::Dimension("chart must have dim >= 1".into()));
        }
        if labels.len() != bounds.len() {
            return Err(HolonomyError::Dimension("one label per coordinate".into()));
        }
        if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(HolonomyError::Domain("empty coordinate interval".into()));
        }
        Ok(Self { bounds, labels })
    }

    /// Unlabelled chart with coordinates named x0, x1, ...
    pub fn from_bounds(bounds: Vec<(f64, f64)>) -> Result<Self> {
        let labels = (0..bounds.len()).map(|i| format!("x{i}")).collect();
        Self::new(bounds, labels)
    }

    /// Unit cube [0,1]^dim.
    pub fn unit(dim: usize) -> Self {
        Self::from_bounds(vec![(0.0, 1.0); dim]).expect("unit chart")
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(&self.bounds)
                .all(|(p, (lo, hi))| *p >= lo - 1e-12 && *p <= hi + 1e-12)
    }

    pub fn check(&self, point: &[f64]) -> Result<()> {
        if self.contains(point) {
            Ok(())
        } else {
            Err(HolonomyError::Domain(format!("point {point:?} outside {:?}", self.bounds)))
        }
    }

    /// Central-difference step for coordinate `mu` at relative size `h_rel`.
    pub fn fd_step(&self, mu: usize, h_rel: f64) -> f64 {
        let (lo, hi) = self.bounds[mu];
        h_rel * (hi - lo)
    }

    /// Chart for the product of two domains (x block first, then y block).
    pub fn product(&self, other: &ChartDomain) -> ChartDomain {
        let mut bounds = self.bounds.clone();
        bounds.extend_from_slice(&other.bounds);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        ChartDomain { bounds, labels }
    }

    /// Uniform sampling grid, `per_dim` points per coordinate (inclusive of
    /// a margin so central differences stay inside the chart).
    pub fn interior_grid(&self, per_dim: usize, margin_rel: f64) -> Vec<Vec<f64>> {
        let mut pts: Vec<Vec<f64>> = vec![vec![]];
        for (lo, hi) in &self.bounds {
            let span = hi - lo;
            let a = lo + margin_rel * span;
            let b = hi - margin_rel * span;
            let mut next = Vec::with_capacity(pts.len() * per_dim);
            for p in &pts {
                for k in 0..per_dim {
                    let t = if per_dim == 1 { 0.5 } else { k as f64 / (per_dim - 1) as f64 };
                    let mut q = p.clone();
                    q.push(a + t * (b - a));
                    next.push(q);
                }
            }
            pts = next;
        }
        pts
    }
}

type ComponentFn = Arc<dyn Fn(&[f64]) -> Vec<CMatrix> + Send + Sync>;
type PartialsFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<CMatrix>> + Send + Sync>;
type TableFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<CMatrix>> + Send + Sync>;

/// How a form's coordinate derivatives are obtained.
#[derive(Clone)]
pub enum DerivativeMode {
    /// Second-order central differences with step h_rel * coordinate range.
    CentralDifference { h_rel: f64 },
    /// Caller-supplied partials: point -> table [mu][nu] = d_mu A_nu.
    Analytic(PartialsFn),
}

impl Default for DerivativeMode {
    fn default() -> Self {
        DerivativeMode::CentralDifference { h_rel: DEFAULT_H_REL }
    }
}

/// Gauge potential A: point -> one algebra matrix per coordinate direction.
#[derive(Clone)]
pub struct MatrixValued1Form {
    pub domain: ChartDomain,
    pub tag: AlgebraTag,
    components: ComponentFn,
    derivative: DerivativeMode,
}

impl MatrixValued1Form {
    pub fn new<F>(domain: ChartDomain, tag: AlgebraTag, components: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<CMatrix> + Send + Sync + 'static,
    {
        Self { domain, tag, components: Arc::new(components), derivative: DerivativeMode::default() }
    }

    pub fn with_derivative_mode(mut self, mode: DerivativeMode) -> Self {
        self.derivative = mode;
        self
    }

    pub fn with_analytic_partials<F>(mut self, partials: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<Vec<CMatrix>> + Send + Sync + 'static,
    {
        self.derivative = DerivativeMode::Analytic(Arc::new(partials));
        self
    }

    /// Zero potential.
    pub fn zero(domain: ChartDomain, tag: AlgebraTag) -> Self {
        let dim = domain.dim();
        let n = tag.matrix_dim();
        Self::new(domain, tag, move |_| vec![CMatrix::zeros(n, n); dim])
            .with_analytic_partials(move |_| vec![vec![CMatrix::zeros(n, n); dim]; dim])
    }

    /// Constant components.
    pub fn constant(domain: ChartDomain, tag: AlgebraTag, comps: Vec<CMatrix>) -> Self {
        let dim = domain.dim();
        let n = tag.matrix_dim();
        assert_eq!(comps.len(), dim, "one component per coordinate");
        Self::new(domain, tag, move |_| comps.clone())
            .with_analytic_partials(move |_| vec![vec![CMatrix::zeros(n, n); dim]; dim])
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<CMatrix>> {
        self.domain.check(point)?;
        let comps = (self.components)(point);
        if comps.len() != self.domain.dim() {
            return Err(HolonomyError::Dimension(format!(
                "1-form returned {} components on a dim-{} chart",
                comps.len(),
                self.domain.dim()
            )));
        }
        Ok(comps)
    }

    /// Evaluation without the bounds check, for inner loops.
    pub fn eval_unchecked(&self, point: &[f64]) -> Vec<CMatrix> {
        (self.components)(point)
    }

    /// Partial-derivative table [mu][nu] = d_mu A_nu.
    pub fn partials(&self, point: &[f64]) -> Result<Vec<Vec<CMatrix>>> {
        self.domain.check(point)?;
        match &self.derivative {
            DerivativeMode::Analytic(f) => Ok(f(point)),
            DerivativeMode::CentralDifference { h_rel } => {
                let dim = self.domain.dim();
                let mut table = Vec::with_capacity(dim);
                let mut shifted = point.to_vec();
                for mu in 0..dim {
                    let h = self.domain.fd_step(mu, *h_rel);
                    shifted[mu] = point[mu] + h;
                    self.domain.check(&shifted)?;
                    let plus = (self.components)(&shifted);
                    shifted[mu] = point[mu] - h;
                    self.domain.check(&shifted)?;
                    let minus = (self.components)(&shifted);
                    shifted[mu] = point[mu];
                    let row: Vec<CMatrix> = plus
                        .into_iter()
                        .zip(minus)
                        .map(|(p, m)| (p - m) / Complex64::new(2.0 * h, 0.0))
                        .collect();
                    table.push(row);
                }
                Ok(table)
            }
        }
    }

    /// Membership and component-count validation on a sampling grid.
    /// Returns the worst algebra residual observed.
    pub fn validate_on_grid(&self, per_dim: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in self.domain.interior_grid(per_dim, 0.05) {
            let comps = self.eval(&p)?;
            for c in &comps {
                worst = worst.max(self.tag.residual(c));
            }
        }
        Ok(worst)
    }
}

/// Curvature-like object: point -> antisymmetric table F[mu][nu].
#[derive(Clone)]
pub struct MatrixValued2Form {
    pub domain: ChartDomain,
    pub tag: AlgebraTag,
    components: TableFn,
}

impl MatrixValued2Form {
    pub fn new<F>(domain: ChartDomain, tag: AlgebraTag, components: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<Vec<CMatrix>> + Send + Sync + 'static,
    {
        Self { domain, tag, components: Arc::new(components) }
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<Vec<CMatrix>>> {
        self.domain.check(point)?;
        Ok((self.components)(point))
    }

    pub fn eval_unchecked(&self, point: &[f64]) -> Vec<Vec<CMatrix>> {
        (self.components)(point)
    }

    /// Worst antisymmetry defect F_{nu mu} + F_{mu nu} over a grid.
    pub fn antisymmetry_residual(&self, per_dim: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in self.domain.interior_grid(per_dim, 0.05) {
            let f = self.eval(&p)?;
            for mu in 0..f.len() {
                for nu in 0..f.len() {
                    worst = worst.max((&f[mu][nu] + &f[nu][mu]).norm());
                }
            }
        }
        Ok(worst)
    }

    /// Pointwise Frobenius norm over all components.
    pub fn norm_at(&self, point: &[f64]) -> Result<f64> {
        let f = self.eval(point)?;
        Ok(f.iter().flatten().map(|m| m.norm_squared()).sum::<f64>().sqrt())
    }
}

/// (dA)_{mu nu} = d_mu A_nu - d_nu A_mu.
pub fn exterior_derivative(a: &MatrixValued1Form) -> MatrixValued2Form {
    let inner = a.clone();
    MatrixValued2Form::new(a.domain.clone(), a.tag, move |p| {
        let parts = inner.partials(p).expect("exterior_derivative stencil");
        let dim = parts.len();
        let mut f = vec![vec![CMatrix::zeros(0, 0); dim]; dim];
        for mu in 0..dim {
            for nu in 0..dim {
                f[mu][nu] = &parts[mu][nu] - &parts[nu][mu];
            }
        }
        f
    })
}

/// (A wedge B)_{mu nu} = A_mu B_nu - A_nu B_mu, matrix product order kept.
pub fn wedge(a: &MatrixValued1Form, b: &MatrixValued1Form) -> Result<MatrixValued2Form> {
    if a.domain != b.domain {
        return Err(HolonomyError::Dimension("wedge of forms on different charts".into()));
    }
    let fa = a.clone();
    let fb = b.clone();
    Ok(MatrixValued2Form::new(a.domain.clone(), a.tag, move |p| {
        let av = fa.eval_unchecked(p);
        let bv = fb.eval_unchecked(p);
        let dim = av.len();
        let mut f = vec![vec![CMatrix::zeros(0, 0); dim]; dim];
        for mu in 0..dim {
            for nu in 0..dim {
                f[mu][nu] = &av[mu] * &bv[nu] - &av[nu] * &bv[mu];
            }
        }
        f
    }))
}

/// F = dA + A wedge A.
pub fn curvature(a: &MatrixValued1Form) -> MatrixValued2Form {
    let inner = a.clone();
    MatrixValued2Form::new(a.domain.clone(), a.tag, move |p| {
        let parts = inner.partials(p).expect("curvature stencil");
        let av = inner.eval_unchecked(p);
        let dim = av.len();
        let mut f = vec![vec![CMatrix::zeros(0, 0); dim]; dim];
        for mu in 0..dim {
            for nu in 0..dim {
                f[mu][nu] = &parts[mu][nu] - &parts[nu][mu] + &av[mu] * &av[nu] - &av[nu] * &av[mu];
            }
        }
        f
    })
}

type TransversalFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<CMatrix> + Send + Sync>;
type TransversalPartialsFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<Vec<CMatrix>> + Send + Sync>;

/// How the x-derivatives of a transversal form are obtained.
#[derive(Clone)]
pub enum TransversalDerivMode {
    CentralDifference { h_rel: f64 },
    /// (x, y) -> table [mu][a] = d_{x^mu} W_a.
    Analytic(TransversalPartialsFn),
}

type FusedFn =
    Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [CMatrix], &mut [CMatrix]) + Send + Sync>;

/// 1-form on M x R with dy-components only: W = W_a(x, y) dy^a,
/// the shape of a transversal potential in the gauge of decomposition.
#[derive(Clone)]
pub struct TransversalForm {
    pub m_chart: ChartDomain,
    pub r_chart: ChartDomain,
    pub tag: AlgebraTag,
    components: TransversalFn,
    x_derivative: TransversalDerivMode,
    /// Optional fused (value, directional x-derivative) evaluator for hot
    /// nested-quadrature loops; must agree with the separate paths.
    fused: Option<FusedFn>,
}

impl TransversalForm {
    pub fn new<F>(m_chart: ChartDomain, r_chart: ChartDomain, tag: AlgebraTag, components: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<CMatrix> + Send + Sync + 'static,
    {
        Self {
            m_chart,
            r_chart,
            tag,
            components: Arc::new(components),
            x_derivative: TransversalDerivMode::CentralDifference { h_rel: DEFAULT_H_REL },
            fused: None,
        }
    }

    /// Install an allocation-free fused evaluator writing the value and
    /// directional x-derivative into caller scratch; must agree with the
    /// separate evaluation paths.
    pub fn with_fused_evaluator<F>(mut self, fused: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [CMatrix], &mut [CMatrix]) + Send + Sync + 'static,
    {
        self.fused = Some(Arc::new(fused));
        self
    }

    /// Value and directional x-derivative written into scratch, through the
    /// fused evaluator when one is installed.
    pub fn value_and_directional_into(
        &self,
        x: &[f64],
        y: &[f64],
        dir: &[f64],
        w_out: &mut [CMatrix],
        dw_out: &mut [CMatrix],
    ) {
        if let Some(f) = &self.fused {
            f(x, y, dir, w_out, dw_out);
            return;
        }
        for (o, v) in w_out.iter_mut().zip(self.eval_unchecked(x, y)) {
            *o = v;
        }
        for (o, v) in dw_out.iter_mut().zip(self.x_directional(x, y, dir)) {
            *o = v;
        }
    }

    pub fn with_analytic_x_partials<F>(mut self, partials: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<Vec<CMatrix>> + Send + Sync + 'static,
    {
        self.x_derivative = TransversalDerivMode::Analytic(Arc::new(partials));
        self
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<Vec<CMatrix>> {
        self.m_chart.check(x)?;
        self.r_chart.check(y)?;
        Ok((self.components)(x, y))
    }

    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> Vec<CMatrix> {
        (self.components)(x, y)
    }

    /// [mu][a] = d_{x^mu} W_a.
    pub fn x_partials(&self, x: &[f64], y: &[f64]) -> Vec<Vec<CMatrix>> {
        match &self.x_derivative {
            TransversalDerivMode::Analytic(f) => f(x, y),
            TransversalDerivMode::CentralDifference { h_rel } => {
                let dim_m = self.m_chart.dim();
                let mut shifted = x.to_vec();
                let mut table = Vec::with_capacity(dim_m);
                for mu in 0..dim_m {
                    let h = self.m_chart.fd_step(mu, *h_rel);
                    shifted[mu] = x[mu] + h;
                    let plus = (self.components)(&shifted, y);
                    shifted[mu] = x[mu] - h;
                    let minus = (self.components)(&shifted, y);
                    shifted[mu] = x[mu];
                    table.push(
                        plus.into_iter()
                            .zip(minus)
                            .map(|(p, m)| (p - m) / Complex64::new(2.0 * h, 0.0))
                            .collect(),
                    );
                }
                table
            }
        }
    }

    /// Directional x-derivative sum_mu dir^mu d_{x^mu} W_a with a single
    /// stencil pair, the form consumed by the ordered integrators.
    pub fn x_directional(&self, x: &[f64], y: &[f64], dir: &[f64]) -> Vec<CMatrix> {
        match &self.x_derivative {
            TransversalDerivMode::Analytic(f) => {
                let table = f(x, y);
                let dim_r = self.r_chart.dim();
                let n = self.tag.matrix_dim();
                let mut out = vec![CMatrix::zeros(n, n); dim_r];
                for (mu, row) in table.iter().enumerate() {
                    if dir[mu] != 0.0 {
                        let c = Complex64::new(dir[mu], 0.0);
                        for a in 0..dim_r {
                            out[a]
                                .iter_mut()
                                .zip(row[a].iter())
                                .for_each(|(o, r)| *o += c * r);
                        }
                    }
                }
                out
            }
            TransversalDerivMode::CentralDifference { h_rel } => {
                let speed = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
                if speed == 0.0 {
                    let n = self.tag.matrix_dim();
                    return vec![CMatrix::zeros(n, n); self.r_chart.dim()];
                }
                let scale = self.m_chart.fd_step(0, *h_rel);
                let h = scale / speed;
                let plus: Vec<f64> = x.iter().zip(dir).map(|(xi, d)| xi + h * d).collect();
                let minus: Vec<f64> = x.iter().zip(dir).map(|(xi, d)| xi - h * d).collect();
                let wp = (self.components)(&plus, y);
                let wm = (self.components)(&minus, y);
                wp.into_iter()
                    .zip(wm)
                    .map(|(p, m)| (p - m) / Complex64::new(2.0 * h, 0.0))
                    .collect()
            }
        }
    }

    /// Freeze x and view the result as a 1-form over the R chart.
    pub fn at_x(&self, x: &[f64]) -> MatrixValued1Form {
        let inner = self.clone();
        let x = x.to_vec();
        MatrixValued1Form::new(self.r_chart.clone(), self.tag, move |y| {
            inner.eval_unchecked(&x, y)
        })
    }
}

/// Mixed 2-form on M x R with dx^mu wedge dy^a components.
#[derive(Clone)]
pub struct MixedTwoForm {
    pub m_chart: ChartDomain,
    pub r_chart: ChartDomain,
    pub tag: AlgebraTag,
    components: TransversalPartialsFn,
}

impl MixedTwoForm {
    pub fn new<F>(m_chart: ChartDomain, r_chart: ChartDomain, tag: AlgebraTag, components: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<Vec<CMatrix>> + Send + Sync + 'static,
    {
        Self { m_chart, r_chart, tag, components: Arc::new(components) }
    }

    /// [mu][a] block at (x, y).
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<Vec<Vec<CMatrix>>> {
        self.m_chart.check(x)?;
        self.r_chart.check(y)?;
        Ok((self.components)(x, y))
    }

    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> Vec<Vec<CMatrix>> {
        (self.components)(x, y)
    }

    pub fn norm_at(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let f = self.eval(x, y)?;
        Ok(f.iter().flatten().map(|m| m.norm_squared()).sum::<f64>().sqrt())
    }
}

/// (D_P W)_{mu a} = d_{x^mu} W_a + [A_{P mu}(x), W_a(x, y)].
pub fn covariant_differential(a_p: &MatrixValued1Form, w: &TransversalForm) -> Result<MixedTwoForm> {
    if a_p.domain != w.m_chart {
        return Err(HolonomyError::Dimension(
            "covariant differential: structure potential chart differs from the form's x chart".into(),
        ));
    }
    let a_p = a_p.clone();
    let w_inner = w.clone();
    Ok(MixedTwoForm::new(
        w.m_chart.clone(),
        w.r_chart.clone(),
        w.tag,
        move |x, y| {
            let ap = a_p.eval_unchecked(x);
            let wv = w_inner.eval_unchecked(x, y);
            let mut table = w_inner.x_partials(x, y);
            for (mu, row) in table.iter_mut().enumerate() {
                for (a, entry) in row.iter_mut().enumerate() {
                    *entry += commutator_raw(&ap[mu], &wv[a]);
                }
            }
            table
        },
    ))
}

type MapFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type JacFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<Vec<f64>> + Send + Sync>;

/// Family of chart automorphisms phi_y: M -> M with Jacobians, the local
/// shape of the torsion maps.
#[derive(Clone)]
pub struct DiffeoFamily {
    pub m_chart: ChartDomain,
    pub r_chart: ChartDomain,
    map: MapFn,
    /// [nu][mu] = d phi^nu / d x^mu, analytic if supplied.
    jac_x: Option<JacFn>,
    /// [nu][a] = d phi^nu / d y^a, analytic if supplied.
    jac_y: Option<JacFn>,
    h_rel: f64,
}

impl DiffeoFamily {
    pub fn new<F>(m_chart: ChartDomain, r_chart: ChartDomain, map: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            m_chart,
            r_chart,
            map: Arc::new(map),
            jac_x: None,
            jac_y: None,
            h_rel: DEFAULT_H_REL,
        }
    }

    pub fn identity(m_chart: ChartDomain, r_chart: ChartDomain) -> Self {
        let dim_m = m_chart.dim();
        let dim_r = r_chart.dim();
        Self::new(m_chart, r_chart, |x, _| x.to_vec())
            .with_analytic_jacobians(
                move |_, _| {
                    (0..dim_m)
                        .map(|i| (0..dim_m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                        .collect()
                },
                move |_, _| vec![vec![0.0; dim_r]; dim_m],
            )
    }

    pub fn with_analytic_jacobians<FX, FY>(mut self, jac_x: FX, jac_y: FY) -> Self
    where
        FX: Fn(&[f64], &[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
        FY: Fn(&[f64], &[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    {
        self.jac_x = Some(Arc::new(jac_x));
        self.jac_y = Some(Arc::new(jac_y));
        self
    }

    pub fn apply(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        (self.map)(x, y)
    }

    pub fn jacobian_x(&self, x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
        if let Some(j) = &self.jac_x {
            return j(x, y);
        }
        let dim_m = self.m_chart.dim();
        let mut out = vec![vec![0.0; dim_m]; dim_m];
        let mut shifted = x.to_vec();
        for mu in 0..dim_m {
            let h = self.m_chart.fd_step(mu, self.h_rel);
            shifted[mu] = x[mu] + h;
            let plus = (self.map)(&shifted, y);
            shifted[mu] = x[mu] - h;
            let minus = (self.map)(&shifted, y);
            shifted[mu] = x[mu];
            for nu in 0..dim_m {
                out[nu][mu] = (plus[nu] - minus[nu]) / (2.0 * h);
            }
        }
        out
    }

    pub fn jacobian_y(&self, x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
        if let Some(j) = &self.jac_y {
            return j(x, y);
        }
        let dim_m = self.m_chart.dim();
        let dim_r = self.r_chart.dim();
        let mut out = vec![vec![0.0; dim_r]; dim_m];
        let mut shifted = y.to_vec();
        for a in 0..dim_r {
            let h = self.r_chart.fd_step(a, self.h_rel);
            shifted[a] = y[a] + h;
            let plus = (self.map)(x, &shifted);
            shifted[a] = y[a] - h;
            let minus = (self.map)(x, &shifted);
            shifted[a] = y[a];
            for nu in 0..dim_m {
                out[nu][a] = (plus[nu] - minus[nu]) / (2.0 * h);
            }
        }
        out
    }
}

/// Pullback of a 1-form on M x R along (x, y) -> (phi_y(x), y):
/// (phi* A)_mu = A_nu(phi(x), y) dphi^nu/dx^mu and
/// (phi* A)_a  = A_nu(phi(x), y) dphi^nu/dy^a + A_a(phi(x), y).
///
/// `a` lives on the combined chart (x block of dim M first, then y block).
pub fn pullback_potential(a: &MatrixValued1Form, phi: &DiffeoFamily) -> Result<MatrixValued1Form> {
    let dim_m = phi.m_chart.dim();
    let dim_r = phi.r_chart.dim();
    if a.domain.dim() != dim_m + dim_r {
        return Err(HolonomyError::Dimension(
            "pullback: form must live on the combined M x R chart".into(),
        ));
    }
    let inner = a.clone();
    let phi = phi.clone();
    let tag = a.tag;
    let domain = phi.m_chart.product(&phi.r_chart);
    Ok(MatrixValued1Form::new(domain, tag, move |z| {
        let (x, y) = z.split_at(dim_m);
        let target = phi.apply(x, y);
        let mut mapped = target.clone();
        mapped.extend_from_slice(y);
        let av = inner.eval_unchecked(&mapped);
        let jx = phi.jacobian_x(x, y);
        let jy = phi.jacobian_y(x, y);
        let n = tag.matrix_dim();
        let mut out = Vec::with_capacity(dim_m + dim_r);
        for mu in 0..dim_m {
            let mut c = CMatrix::zeros(n, n);
            for nu in 0..dim_m {
                if jx[nu][mu] != 0.0 {
                    c += &av[nu] * Complex64::new(jx[nu][mu], 0.0);
                }
            }
            out.push(c);
        }
        for aix in 0..dim_r {
            let mut c = av[dim_m + aix].clone();
            for nu in 0..dim_m {
                if jy[nu][aix] != 0.0 {
                    c += &av[nu] * Complex64::new(jy[nu][aix], 0.0);
                }
            }
            out.push(c);
        }
        out
    }))
}

type GaugeFn = Arc<dyn Fn(&[f64]) -> CMatrix + Send + Sync>;

/// A smooth group-valued function used for gauge transformations.
#[derive(Clone)]
pub struct GaugeFunction {
    pub domain: ChartDomain,
    g: GaugeFn,
    h_rel: f64,
}

impl GaugeFunction {
    pub fn new<F>(domain: ChartDomain, g: F) -> Self
    where
        F: Fn(&[f64]) -> CMatrix + Send + Sync + 'static,
    {
        Self { domain, g: Arc::new(g), h_rel: DEFAULT_H_REL }
    }

    pub fn eval(&self, point: &[f64]) -> CMatrix {
        (self.g)(point)
    }

    /// d_mu g by central differences.
    pub fn partial(&self, point: &[f64], mu: usize) -> CMatrix {
        let h = self.domain.fd_step(mu, self.h_rel);
        let mut shifted = point.to_vec();
        shifted[mu] = point[mu] + h;
        let plus = (self.g)(&shifted);
        shifted[mu] = point[mu] - h;
        let minus = (self.g)(&shifted);
        (plus - minus) / Complex64::new(2.0 * h, 0.0)
    }
}

/// A' = g^{-1} A g + g^{-1} dg.
pub fn gauge_transform(a: &MatrixValued1Form, gauge: &GaugeFunction) -> Result<MatrixValued1Form> {
    if a.domain != gauge.domain {
        return Err(HolonomyError::Dimension("gauge function on a different chart".into()));
    }
    let inner = a.clone();
    let gauge = gauge.clone();
    Ok(MatrixValued1Form::new(a.domain.clone(), a.tag, move |p| {
        let g = gauge.eval(p);
        let n = g.nrows();
        let mut ginv = CMatrix::zeros(n, n);
        if !try_invert_to(g.clone(), &mut ginv) {
            panic!("gauge function not invertible at {p:?}");
        }
        inner
            .eval_unchecked(p)
            .into_iter()
            .enumerate()
            .map(|(mu, amu)| &ginv * amu * &g + &ginv * gauge.partial(p, mu))
            .collect()
    }))
}

/// Pure-gauge potential g^{-1} dg.
pub fn pure_gauge(gauge: &GaugeFunction, tag: AlgebraTag) -> MatrixValued1Form {
    let zero = MatrixValued1Form::zero(gauge.domain.clone(), tag);
    gauge_transform(&zero, gauge).expect("same chart by construction")
}
