//! Vierbein gravity as a composite connection: metric, Christoffel and
//! spin-connection conversions, the Cartan potential on vierbein classes,
//! the transversal potential on spacetime, the closed-form intertwining
//! curvature, and two-worldline spinor transport.
//!
//! Index conventions (the paper leaves matrix orientation implicit):
//!  - vierbein matrix `e[(a, mu)]` = e^A_mu: row = flat Lorentz index A,
//!    column = spacetime index mu;
//!  - inverse `inv[(mu, a)]` = e^mu_A, so inv * e = id on spacetime indices;
//!  - raised vierbein e^{A mu} = eta^{AB} e^mu_B, stored as
//!    `raised[(a, mu)]`;
//!  - metric `g[(mu, nu)]`; Christoffel tables `gamma[rho][(mu, nu)]`
//!    = Gamma^mu_{rho nu} (rho the derivative index); spin connection
//!    tables `omega[rho][(a, b)]` = omega^{AB}_rho (real coefficients).

use std::sync::Arc;

use nalgebra::Matrix4;
use num_complex::Complex64;

use crate::composite::{CompositeConnection, SectionPath};
use crate::error::{HolonomyError, Result};
use crate::forms::{ChartDomain, MatrixValued1Form, TransversalForm, DEFAULT_H_REL};
use crate::liecore::{
    CMatrix, DiracAlgebra, GroupElement, LorentzGenerators, LorentzRep, Signature,
    AlgebraTag, DET_FLOOR,
};
use crate::pathorder::{pexp, IntegratorOptions, ParamPath};

pub type M4 = Matrix4<f64>;

fn eta_m4(sig: Signature) -> M4 {
    M4::from_diagonal(&nalgebra::Vector4::from(sig.diag()))
}

type FieldFn = Arc<dyn Fn(&[f64]) -> M4 + Send + Sync>;
type FieldDerivFn = Arc<dyn Fn(&[f64], usize) -> M4 + Send + Sync>;
type TableFn = Arc<dyn Fn(&[f64]) -> [M4; 4] + Send + Sync>;

/// Frame field e^A_mu over a chart. The chart may be the spacetime patch
/// or a parameter space of vierbein classes (boost angle, scale, ...);
/// the matrix is always 4x4.
#[derive(Clone)]
pub struct VierbeinField {
    pub chart: ChartDomain,
    pub signature: Signature,
    e: FieldFn,
    de: Option<FieldDerivFn>,
    h_rel: f64,
}

impl VierbeinField {
    pub fn new<F>(chart: ChartDomain, signature: Signature, e: F) -> Self
    where
        F: Fn(&[f64]) -> M4 + Send + Sync + 'static,
    {
        Self { chart, signature, e: Arc::new(e), de: None, h_rel: DEFAULT_H_REL }
    }

    pub fn with_analytic_derivative<D>(mut self, de: D) -> Self
    where
        D: Fn(&[f64], usize) -> M4 + Send + Sync + 'static,
    {
        self.de = Some(Arc::new(de));
        self
    }

    /// Override the central-difference step (relative to coordinate range).
    pub fn with_fd_step(mut self, h_rel: f64) -> Self {
        self.h_rel = h_rel;
        self
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.de.is_some()
    }

    pub fn flat(chart: ChartDomain, signature: Signature) -> Self {
        Self::new(chart, signature, |_| M4::identity()).with_analytic_derivative(|_, _| M4::zeros())
    }

    pub fn e_at(&self, x: &[f64]) -> M4 {
        (self.e)(x)
    }

    pub fn inverse_at(&self, x: &[f64]) -> Result<M4> {
        let e = self.e_at(x);
        if e.determinant().abs() <= DET_FLOOR {
            return Err(HolonomyError::Singular(format!("vierbein singular at {x:?}")));
        }
        e.try_inverse()
            .ok_or_else(|| HolonomyError::Singular(format!("vierbein singular at {x:?}")))
    }

    /// Raised vierbein e^{A mu} = eta^{AB} e^mu_B.
    pub fn raised_at(&self, x: &[f64]) -> Result<M4> {
        Ok(eta_m4(self.signature) * self.inverse_at(x)?.transpose())
    }

    /// d_rho e by the analytic callback or central differences.
    pub fn de_at(&self, x: &[f64], rho: usize) -> M4 {
        if let Some(de) = &self.de {
            return de(x, rho);
        }
        let h = self.chart.fd_step(rho, self.h_rel);
        let mut shifted = x.to_vec();
        shifted[rho] = x[rho] + h;
        let plus = (self.e)(&shifted);
        shifted[rho] = x[rho] - h;
        let minus = (self.e)(&shifted);
        (plus - minus) / (2.0 * h)
    }

    /// d_rho of the raised vierbein, through d(e^{-1}) = -e^{-1} de e^{-1}.
    pub fn draised_at(&self, x: &[f64], rho: usize) -> Result<M4> {
        let inv = self.inverse_at(x)?;
        let de = self.de_at(x, rho);
        Ok(eta_m4(self.signature) * (-(&inv * de * &inv)).transpose())
    }

    /// Worst residual of the two inverse identities over a grid.
    pub fn inverse_residual(&self, per_dim: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for x in self.chart.interior_grid(per_dim, 0.05) {
            let e = self.e_at(&x);
            let inv = self.inverse_at(&x)?;
            worst = worst.max((inv * e - M4::identity()).norm());
            worst = worst.max((e * inv - M4::identity()).norm());
        }
        Ok(worst)
    }
}

/// Metric g_mu nu over a spacetime chart.
#[derive(Clone)]
pub struct MetricField {
    pub chart: ChartDomain,
    pub signature: Signature,
    g: FieldFn,
    dg: Option<FieldDerivFn>,
    h_rel: f64,
}

impl MetricField {
    pub fn new<F>(chart: ChartDomain, signature: Signature, g: F) -> Self
    where
        F: Fn(&[f64]) -> M4 + Send + Sync + 'static,
    {
        Self { chart, signature, g: Arc::new(g), dg: None, h_rel: DEFAULT_H_REL }
    }

    pub fn with_analytic_derivative<D>(mut self, dg: D) -> Self
    where
        D: Fn(&[f64], usize) -> M4 + Send + Sync + 'static,
    {
        self.dg = Some(Arc::new(dg));
        self
    }

    pub fn g_at(&self, x: &[f64]) -> M4 {
        (self.g)(x)
    }

    pub fn inverse_at(&self, x: &[f64]) -> Result<M4> {
        self.g_at(x)
            .try_inverse()
            .ok_or_else(|| HolonomyError::Singular(format!("metric singular at {x:?}")))
    }

    pub fn dg_at(&self, x: &[f64], rho: usize) -> M4 {
        if let Some(dg) = &self.dg {
            return dg(x, rho);
        }
        let h = self.chart.fd_step(rho, self.h_rel);
        let mut shifted = x.to_vec();
        shifted[rho] = x[rho] + h;
        let plus = (self.g)(&shifted);
        shifted[rho] = x[rho] - h;
        let minus = (self.g)(&shifted);
        (plus - minus) / (2.0 * h)
    }

    pub fn symmetry_residual(&self, per_dim: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for x in self.chart.interior_grid(per_dim, 0.05) {
            let g = self.g_at(&x);
            worst = worst.max((g - g.transpose()).norm());
        }
        worst
    }
}

/// Christoffel symbols Gamma^mu_{rho nu}, tables indexed by rho.
#[derive(Clone)]
pub struct LinearConnectionField {
    pub chart: ChartDomain,
    gamma: TableFn,
}

impl LinearConnectionField {
    pub fn new<F>(chart: ChartDomain, gamma: F) -> Self
    where
        F: Fn(&[f64]) -> [M4; 4] + Send + Sync + 'static,
    {
        Self { chart, gamma: Arc::new(gamma) }
    }

    pub fn zero(chart: ChartDomain) -> Self {
        Self::new(chart, |_| [M4::zeros(); 4])
    }

    /// [rho][(mu, nu)] = Gamma^mu_{rho nu}.
    pub fn gamma_at(&self, x: &[f64]) -> [M4; 4] {
        (self.gamma)(x)
    }

    /// Worst lower-index asymmetry Gamma^mu_{rho nu} - Gamma^mu_{nu rho}.
    pub fn torsion_residual(&self, per_dim: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for x in self.chart.interior_grid(per_dim, 0.05) {
            let gam = self.gamma_at(&x);
            for rho in 0..4 {
                for mu in 0..4 {
                    for nu in 0..4 {
                        worst = worst.max((gam[rho][(mu, nu)] - gam[nu][(mu, rho)]).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Spin connection omega^{AB}_rho, real coefficient tables indexed by rho.
#[derive(Clone)]
pub struct SpinConnectionField {
    pub chart: ChartDomain,
    pub signature: Signature,
    omega: TableFn,
}

impl SpinConnectionField {
    pub fn new<F>(chart: ChartDomain, signature: Signature, omega: F) -> Self
    where
        F: Fn(&[f64]) -> [M4; 4] + Send + Sync + 'static,
    {
        Self { chart, signature, omega: Arc::new(omega) }
    }

    pub fn omega_at(&self, x: &[f64]) -> [M4; 4] {
        (self.omega)(x)
    }

    /// Worst flat-index symmetry defect omega^{BA} + omega^{AB}.
    pub fn antisymmetry_residual(&self, per_dim: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for x in self.chart.interior_grid(per_dim, 0.05) {
            for t in self.omega_at(&x) {
                worst = worst.max((t + t.transpose()).norm());
            }
        }
        worst
    }

    /// The h-valued 1-form sum_{AB} omega^{AB}_rho M_AB dx^rho in the given
    /// representation.
    pub fn as_form(&self, rep: LorentzRep) -> MatrixValued1Form {
        let gens = LorentzGenerators::new(rep, self.signature);
        let inner = self.clone();
        MatrixValued1Form::new(
            self.chart.clone(),
            AlgebraTag::Lorentz(rep, self.signature),
            move |x| {
                let tables = inner.omega_at(x);
                tables
                    .iter()
                    .map(|t| {
                        let mut out = CMatrix::zeros(4, 4);
                        for a in 0..4 {
                            for b in 0..4 {
                                let c = t[(a, b)];
                                if c != 0.0 {
                                    out += gens.get(a, b) * Complex64::new(c, 0.0);
                                }
                            }
                        }
                        out
                    })
                    .collect()
            },
        )
    }
}

/// g_{mu nu} = e^A_mu e^B_nu eta_AB, i.e. g = e^T eta e, with the analytic
/// derivative propagated when the vierbein has one.
pub fn metric_from_vierbein(vf: &VierbeinField) -> MetricField {
    let inner = vf.clone();
    let eta = eta_m4(vf.signature);
    let m = MetricField::new(vf.chart.clone(), vf.signature, move |x| {
        let e = inner.e_at(x);
        e.transpose() * eta * e
    });
    if vf.de.is_some() {
        let inner = vf.clone();
        let eta = eta_m4(vf.signature);
        m.with_analytic_derivative(move |x, rho| {
            let e = inner.e_at(x);
            let de = inner.de_at(x, rho);
            de.transpose() * eta * &e + e.transpose() * eta * de
        })
    } else {
        m
    }
}

/// Torsion-free metric-compatible symbols
/// Gamma^mu_{rho nu} = 1/2 g^{mu sigma} (d_rho g_{sigma nu}
/// + d_nu g_{sigma rho} - d_sigma g_{rho nu}).
pub fn levi_civita(metric: &MetricField) -> LinearConnectionField {
    let m = metric.clone();
    LinearConnectionField::new(metric.chart.clone(), move |x| {
        let ginv = m.inverse_at(x).expect("metric invertible on chart");
        let dg: Vec<M4> = (0..4).map(|rho| m.dg_at(x, rho)).collect();
        let mut out = [M4::zeros(); 4];
        for rho in 0..4 {
            for mu in 0..4 {
                for nu in 0..4 {
                    let mut sum = 0.0;
                    for sigma in 0..4 {
                        sum += 0.5
                            * ginv[(mu, sigma)]
                            * (dg[rho][(sigma, nu)] + dg[nu][(sigma, rho)] - dg[sigma][(rho, nu)]);
                    }
                    out[rho][(mu, nu)] = sum;
                }
            }
        }
        out
    })
}

/// Metric-compatibility residual max || nabla_rho g || over a grid.
pub fn metric_compatibility_residual(
    metric: &MetricField,
    gamma: &LinearConnectionField,
    per_dim: usize,
) -> f64 {
    let mut worst: f64 = 0.0;
    for x in metric.chart.interior_grid(per_dim, 0.05) {
        let g = metric.g_at(&x);
        let gam = gamma.gamma_at(&x);
        for rho in 0..4 {
            let dg = metric.dg_at(&x, rho);
            for mu in 0..4 {
                for nu in 0..4 {
                    let mut v = dg[(mu, nu)];
                    for sigma in 0..4 {
                        v -= gam[rho][(sigma, mu)] * g[(sigma, nu)]
                            + gam[rho][(sigma, nu)] * g[(mu, sigma)];
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    worst
}

/// omega^{AB}_rho = e^A_mu d_rho e^{B mu} + e^A_mu Gamma^mu_{rho nu} e^{B nu}.
pub fn spin_connection_from(
    vf: &VierbeinField,
    gamma: &LinearConnectionField,
) -> SpinConnectionField {
    let v = vf.clone();
    let g = gamma.clone();
    SpinConnectionField::new(vf.chart.clone(), vf.signature, move |x| {
        let e = v.e_at(x);
        let q = v.raised_at(x).expect("vierbein invertible");
        let gam = g.gamma_at(x);
        let mut out = [M4::zeros(); 4];
        for rho in 0..4 {
            let dq = v.draised_at(x, rho).expect("vierbein invertible");
            out[rho] = e * dq.transpose() + e * gam[rho] * q.transpose();
        }
        out
    })
}

/// Gamma^mu_{rho nu} = e^mu_A d_rho e^A_nu + e^mu_A omega^{AB}_rho e_{B nu},
/// the inverse of the previous conversion.
pub fn christoffel_from(vf: &VierbeinField, omega: &SpinConnectionField) -> LinearConnectionField {
    let v = vf.clone();
    let w = omega.clone();
    let eta = eta_m4(vf.signature);
    LinearConnectionField::new(vf.chart.clone(), move |x| {
        let e = v.e_at(x);
        let inv = v.inverse_at(x).expect("vierbein invertible");
        let lowered = eta * e; // e_{B nu}
        let om = w.omega_at(x);
        let mut out = [M4::zeros(); 4];
        for rho in 0..4 {
            let de = v.de_at(x, rho);
            out[rho] = inv * de + inv * om[rho] * lowered;
        }
        out
    })
}

/// Cartan potential A_G = e^A_mu d e^{B mu} M_AB on a chart of vierbein
/// classes, valued in the Lorentz algebra of the chosen representation.
pub fn cartan_potential(family: &VierbeinField, rep: LorentzRep) -> MatrixValued1Form {
    let gens = LorentzGenerators::new(rep, family.signature);
    let fam = family.clone();
    let dim = family.chart.dim();
    MatrixValued1Form::new(
        family.chart.clone(),
        AlgebraTag::Lorentz(rep, family.signature),
        move |lam| {
            let e = fam.e_at(lam);
            (0..dim)
                .map(|k| {
                    let dq = fam.draised_at(lam, k).expect("vierbein family invertible");
                    let coeff = e * dq.transpose(); // [A][B] = e^A_mu d_k e^{B mu}
                    contract_generators(&coeff, &gens)
                })
                .collect()
        },
    )
}

fn contract_generators(coeff: &M4, gens: &LorentzGenerators) -> CMatrix {
    let mut out = CMatrix::zeros(4, 4);
    for a in 0..4 {
        for b in 0..4 {
            let c = coeff[(a, b)];
            if c != 0.0 {
                out += gens.get(a, b) * Complex64::new(c, 0.0);
            }
        }
    }
    out
}

/// Transversal potential of a fixed vierbein class:
/// A_Q(x) = e^A_mu Gamma^mu_{rho nu}(x) e^{B nu} M_AB dx^rho.
pub fn transversal_potential(
    e_fixed: &M4,
    signature: Signature,
    gamma: &LinearConnectionField,
    rep: LorentzRep,
) -> Result<MatrixValued1Form> {
    let gens = LorentzGenerators::new(rep, signature);
    let e = *e_fixed;
    let q = eta_m4(signature)
        * e.try_inverse()
            .ok_or_else(|| HolonomyError::Singular("fixed vierbein".into()))?
            .transpose();
    let g = gamma.clone();
    Ok(MatrixValued1Form::new(
        gamma.chart.clone(),
        AlgebraTag::Lorentz(rep, signature),
        move |x| {
            let gam = g.gamma_at(x);
            (0..4)
                .map(|rho| {
                    let coeff = e * gam[rho] * q.transpose();
                    contract_generators(&coeff, &gens)
                })
                .collect()
        },
    ))
}

/// The transversal potential as a function of the vierbein-class point:
/// (lambda, x) -> A_{Q e(lambda)}(x), the y-block of the gravity composite
/// connection in the gauge of decomposition.
pub fn transversal_family(
    family: &VierbeinField,
    gamma: &LinearConnectionField,
    rep: LorentzRep,
) -> TransversalForm {
    let gens = LorentzGenerators::new(rep, family.signature);
    let fam = family.clone();
    let g = gamma.clone();
    TransversalForm::new(
        family.chart.clone(),
        gamma.chart.clone(),
        AlgebraTag::Lorentz(rep, family.signature),
        move |lam, x| {
            let e = fam.e_at(lam);
            let q = fam.raised_at(lam).expect("vierbein family invertible");
            let gam = g.gamma_at(x);
            (0..4)
                .map(|rho| {
                    let coeff = e * gam[rho] * q.transpose();
                    contract_generators(&coeff, &gens)
                })
                .collect()
        },
    )
}

/// The gravity composite connection (Cartan block over the class chart,
/// transversal block over spacetime).
pub fn gravity_composite(
    family: &VierbeinField,
    gamma: &LinearConnectionField,
    rep: LorentzRep,
) -> Result<CompositeConnection> {
    CompositeConnection::new(
        cartan_potential(family, rep),
        transversal_family(family, gamma, rep),
    )
}

/// Residual of sigma* A_+ = omega over a grid: the section x -> e(x)H pulls
/// the composite potential back to the spin connection. The class chart is
/// parametrized by the spacetime point itself and the section is the
/// identity, so the pullback is the sum of the two blocks evaluated along
/// the diagonal.
///
/// The continuum statement is an algebraic identity, so with analytic
/// vierbein derivatives the two sides agree to rounding. In
/// finite-difference mode the spin-connection side is rebuilt with a
/// different stencil step, making the residual measure the stencil
/// consistency of the whole pipeline instead of comparing an expression
/// with itself.
pub fn section_pullback_check(
    vf: &VierbeinField,
    gamma: &LinearConnectionField,
    rep: LorentzRep,
    per_dim: usize,
) -> Result<f64> {
    let a_g = cartan_potential(vf, rep);
    let a_q = transversal_family(vf, gamma, rep);
    let vf_alt = if vf.has_analytic_derivative() {
        vf.clone()
    } else {
        vf.clone().with_fd_step(0.63 * DEFAULT_H_REL)
    };
    let omega_form = spin_connection_from(&vf_alt, gamma).as_form(rep);
    let mut worst: f64 = 0.0;
    for x in vf.chart.interior_grid(per_dim, 0.05) {
        let cartan = a_g.eval(&x)?;
        let trans = a_q.eval(&x, &x)?;
        let om = omega_form.eval(&x)?;
        for rho in 0..4 {
            worst = worst.max((&cartan[rho] + &trans[rho] - &om[rho]).norm());
        }
    }
    Ok(worst)
}

/// Closed-form intertwining curvature of gravity:
/// D_G A_Q = (e^B_mu de^A_lambda g^{lambda nu}
///            - e^{B nu} de^{A lambda} g_{lambda mu})틀
///           wedge Gamma^mu_{rho nu} dx^rho M_AB,
/// a mixed 2-form with the class-chart leg first.
pub fn intertwining_gravity_closed_form(
    family: &VierbeinField,
    gamma: &LinearConnectionField,
    rep: LorentzRep,
) -> crate::forms::MixedTwoForm {
    let gens = LorentzGenerators::new(rep, family.signature);
    let fam = family.clone();
    let g = gamma.clone();
    let dim_m = family.chart.dim();
    let eta = eta_m4(family.signature);
    crate::forms::MixedTwoForm::new(
        family.chart.clone(),
        gamma.chart.clone(),
        AlgebraTag::Lorentz(rep, family.signature),
        move |lam, x| {
            let e = fam.e_at(lam);
            let q = fam.raised_at(lam).expect("vierbein family invertible");
            let metric = e.transpose() * eta * e;
            let ginv = metric.try_inverse().expect("class metric invertible");
            let gam = g.gamma_at(x);
            (0..dim_m)
                .map(|k| {
                    let de = fam.de_at(lam, k);
                    let dq = fam.draised_at(lam, k).expect("vierbein family invertible");
                    (0..4)
                        .map(|rho| {
                            // term1[A][B] = de_k^A_lam g^{lam nu} Gamma^mu_{rho nu} e^B_mu
                            let term1 = de * ginv * gam[rho].transpose() * e.transpose();
                            // term2[A][B] = dq_k^{A lam} g_{lam mu} Gamma^mu_{rho nu} e^{B nu}
                            let term2 = dq * metric * gam[rho] * q.transpose();
                            contract_generators(&(term1 - term2), &gens)
                        })
                        .collect()
                })
                .collect()
        },
    )
}

/// Spinor parallel transport along a worldline: solves
/// d psi/ds = -omega^{AB}_mu(x(s)) dx^mu/ds D(M_AB) psi by classic RK4.
pub fn spinor_transport(
    omega: &SpinConnectionField,
    path: &ParamPath,
    psi0: &nalgebra::DVector<Complex64>,
    steps: usize,
) -> nalgebra::DVector<Complex64> {
    let dirac = DiracAlgebra::new(omega.signature);
    let gens = LorentzGenerators::new(LorentzRep::Spinor, omega.signature);
    let _ = dirac;
    let gen_at = |s: f64| -> CMatrix {
        let x = path.point_at(s);
        let v = path.velocity_at(s);
        let tables = omega.omega_at(&x);
        let mut out = CMatrix::zeros(4, 4);
        for (mu, t) in tables.iter().enumerate() {
            if v[mu] == 0.0 {
                continue;
            }
            for a in 0..4 {
                for b in 0..4 {
                    let c = t[(a, b)] * v[mu];
                    if c != 0.0 {
                        out += gens.get(a, b) * Complex64::new(c, 0.0);
                    }
                }
            }
        }
        out
    };
    let (s0, s1) = path.s_range;
    let h = (s1 - s0) / steps as f64;
    let mut psi = psi0.clone();
    let two = Complex64::new(2.0, 0.0);
    for j in 0..steps {
        let s = s0 + h * j as f64;
        let b0 = gen_at(s);
        let bm = gen_at(s + 0.5 * h);
        let b1 = gen_at(s + h);
        let k1 = -(&b0 * &psi);
        let k2 = -(&bm * (&psi + &k1 * Complex64::new(0.5 * h, 0.0)));
        let k3 = -(&bm * (&psi + &k2 * Complex64::new(0.5 * h, 0.0)));
        let k4 = -(&b1 * (&psi + &k3 * Complex64::new(h, 0.0)));
        psi += (k1 + k2 * two + k3 * two + k4) * Complex64::new(h / 6.0, 0.0);
    }
    psi
}

/// Dirac bilinear psi-bar psi = psi^H gamma^0 psi, the invariant of spinor
/// transport (the Euclidean norm is not preserved under boosts).
pub fn dirac_bilinear(psi: &nalgebra::DVector<Complex64>, signature: Signature) -> Complex64 {
    let dirac = DiracAlgebra::new(signature);
    (psi.adjoint() * &dirac.gamma[0] * psi)[(0, 0)]
}

/// Outcome of transporting one spinor along two worldlines.
#[derive(Clone, Debug)]
pub struct SpinorTransportReport {
    pub psi_a: nalgebra::DVector<Complex64>,
    pub psi_b: nalgebra::DVector<Complex64>,
    /// Spinor-representation holonomy of the loop (a reversed, then b).
    pub loop_holonomy: CMatrix,
    /// || psi_a - Hol psi_b ||.
    pub relation_residual: f64,
    /// Max |psi-bar psi| drift across both transports.
    pub bilinear_drift: f64,
}

/// Transport psi0 along both worldlines and verify
/// psi_a = Hol(C_b o C_a^{-1}) psi_b, with the loop holonomy integrated
/// independently of the transports. Worldlines share both endpoints.
pub fn spinor_transport_compare(
    omega: &SpinConnectionField,
    c_a: &ParamPath,
    c_b: &ParamPath,
    psi0: &nalgebra::DVector<Complex64>,
    opts: &IntegratorOptions,
) -> Result<SpinorTransportReport> {
    let start_gap: f64 = c_a
        .start()
        .iter()
        .zip(&c_b.start())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let end_gap: f64 = c_a
        .end()
        .iter()
        .zip(&c_b.end())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    if start_gap > 1e-10 || end_gap > 1e-10 {
        return Err(HolonomyError::Precondition(
            "worldlines must share start and end points".into(),
        ));
    }
    let psi_a = spinor_transport(omega, c_a, psi0, opts.steps);
    let psi_b = spinor_transport(omega, c_b, psi0, opts.steps);

    // Loop x1 -> (a backwards) -> x0 -> (b forwards) -> x1, assembled as
    // pexp(C_a)^{-1} pexp(C_b) so the integrator never steps across the
    // velocity kink at the junction.
    let form = omega.as_form(LorentzRep::Spinor);
    let hol_a = pexp(&form, c_a, opts)?.value.into_matrix();
    let hol_b = pexp(&form, c_b, opts)?.value.into_matrix();
    let hol = hol_a
        .try_inverse()
        .ok_or_else(|| HolonomyError::Singular("worldline holonomy".into()))?
        * hol_b;

    let relation_residual = (&psi_a - &hol * &psi_b).norm();
    let b0 = dirac_bilinear(psi0, omega.signature);
    let drift_a = (dirac_bilinear(&psi_a, omega.signature) - b0).norm();
    let drift_b = (dirac_bilinear(&psi_b, omega.signature) - b0).norm();
    Ok(SpinorTransportReport {
        psi_a,
        psi_b,
        loop_holonomy: hol,
        relation_residual,
        bilinear_drift: drift_a.max(drift_b),
    })
}

/// The two-worldline loop as a section path of the gravity composite
/// (identity lift: the class chart is parametrized by the spacetime point).
pub fn worldline_section(c_a: &ParamPath, c_b: &ParamPath, class_chart: ChartDomain) -> Result<SectionPath> {
    let loop_path = c_a.reversed().concat(c_b)?;
    SectionPath::new(loop_path, class_chart, |x| x.to_vec())
}

/// Decomposition defect || lhs - rhs || of the gravity composite over the
/// two-worldline loop: the three-factor split of the Lorentz holonomy into
/// intertwining x transversal x Cartan factors.
pub fn gravity_split_defect(
    family: &VierbeinField,
    gamma: &LinearConnectionField,
    c_a: &ParamPath,
    c_b: &ParamPath,
    rep: LorentzRep,
    opts: &IntegratorOptions,
) -> Result<(f64, GroupElement, GroupElement)> {
    let cc = gravity_composite(family, gamma, rep)?;
    let sp = worldline_section(c_a, c_b, family.chart.clone())?;
    let lhs = crate::composite::theorem1_lhs(&cc, &sp, opts)?;
    let rhs = crate::composite::theorem1_rhs(&cc, &sp, opts)?;
    let d = (lhs.matrix() - rhs.matrix()).norm();
    Ok((d, lhs, rhs))
}

/// Built-in vierbein catalog.
pub mod catalog {
    use super::*;

    /// Spacetime patch used by the shipped scenarios.
    pub fn default_chart() -> ChartDomain {
        ChartDomain::from_bounds(vec![(0.0, 1.0), (1.0, 2.0), (0.2, 1.2), (0.0, 1.0)]).unwrap()
    }

    /// Flat vierbein e = id on the default chart.
    pub fn flat(signature: Signature) -> VierbeinField {
        VierbeinField::flat(default_chart(), signature)
    }

    /// Flat spacetime in a cylindrical-like chart (t, r, phi, z):
    /// nonzero connection, zero curvature.
    pub fn curvilinear_flat(signature: Signature) -> VierbeinField {
        VierbeinField::new(default_chart(), signature, |x| {
            let (s, c) = x[2].sin_cos();
            let r = x[1];
            M4::new(
                1.0, 0.0, 0.0, 0.0, //
                0.0, c, -r * s, 0.0, //
                0.0, s, r * c, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            )
        })
        .with_analytic_derivative(|x, rho| {
            let (s, c) = x[2].sin_cos();
            let r = x[1];
            match rho {
                1 => M4::new(
                    0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, -s, 0.0, //
                    0.0, 0.0, c, 0.0, //
                    0.0, 0.0, 0.0, 0.0,
                ),
                2 => M4::new(
                    0.0, 0.0, 0.0, 0.0, //
                    0.0, -s, -r * c, 0.0, //
                    0.0, c, -r * s, 0.0, //
                    0.0, 0.0, 0.0, 0.0,
                ),
                _ => M4::zeros(),
            }
        })
    }

    /// Conformally flat vierbein e = Omega(x) id with
    /// Omega = 1 + amp * sin(x0) cos(x1) type profile.
    pub fn conformally_flat(signature: Signature, amp: f64) -> VierbeinField {
        let omega = move |x: &[f64]| 1.0 + amp * (x[0] + 0.5 * x[1]).sin() * (0.7 * x[2]).cos();
        let domega = move |x: &[f64], rho: usize| match rho {
            0 => amp * (x[0] + 0.5 * x[1]).cos() * (0.7 * x[2]).cos(),
            1 => 0.5 * amp * (x[0] + 0.5 * x[1]).cos() * (0.7 * x[2]).cos(),
            2 => -0.7 * amp * (x[0] + 0.5 * x[1]).sin() * (0.7 * x[2]).sin(),
            _ => 0.0,
        };
        VierbeinField::new(default_chart(), signature, move |x| M4::identity() * omega(x))
            .with_analytic_derivative(move |x, rho| M4::identity() * domega(x, rho))
    }

    /// Conformal factor of `conformally_flat`, exposed for the analytic
    /// Levi-Civita oracle.
    pub fn conformal_profile(amp: f64) -> (impl Fn(&[f64]) -> f64, impl Fn(&[f64], usize) -> f64) {
        let omega = move |x: &[f64]| 1.0 + amp * (x[0] + 0.5 * x[1]).sin() * (0.7 * x[2]).cos();
        let domega = move |x: &[f64], rho: usize| match rho {
            0 => amp * (x[0] + 0.5 * x[1]).cos() * (0.7 * x[2]).cos(),
            1 => 0.5 * amp * (x[0] + 0.5 * x[1]).cos() * (0.7 * x[2]).cos(),
            2 => -0.7 * amp * (x[0] + 0.5 * x[1]).sin() * (0.7 * x[2]).sin(),
            _ => 0.0,
        };
        (omega, domega)
    }

    /// Diagonal weak-field vierbein e^A_mu = delta^A_mu (1 + eps phi(x))
    /// with a genuinely curved metric.
    pub fn weak_field(signature: Signature, eps: f64) -> VierbeinField {
        let phi = move |x: &[f64]| (x[1] - 1.5) * (x[2] - 0.7) + 0.5 * (x[0] * 2.0).sin() * x[3];
        let dphi = move |x: &[f64], rho: usize| match rho {
            0 => (x[0] * 2.0).cos() * x[3],
            1 => x[2] - 0.7,
            2 => x[1] - 1.5,
            3 => 0.5 * (x[0] * 2.0).sin(),
            _ => 0.0,
        };
        VierbeinField::new(default_chart(), signature, move |x| {
            M4::identity() * (1.0 + eps * phi(x))
        })
        .with_analytic_derivative(move |x, rho| M4::identity() * (eps * dphi(x, rho)))
    }

    /// One-parameter boost family of vierbein classes over a 1-D chart.
    pub fn boost_family(signature: Signature, plane: (usize, usize)) -> VierbeinField {
        let chart = ChartDomain::from_bounds(vec![(-0.8, 0.8)]).unwrap();
        let gen = boost_generator(plane);
        VierbeinField::new(chart, signature, move |lam| (gen * lam[0]).exp())
            .with_analytic_derivative(move |lam, _| gen * (gen * lam[0]).exp())
    }

    pub fn boost_generator(plane: (usize, usize)) -> M4 {
        let mut k = M4::zeros();
        k[(plane.0, plane.1)] = 1.0;
        k[(plane.1, plane.0)] = 1.0;
        k
    }

    /// Smooth multi-parameter family mixing a boost, a rotation and a
    /// scale, for the generic closed-form checks.
    pub fn mixed_family(signature: Signature) -> VierbeinField {
        let chart = ChartDomain::from_bounds(vec![(-0.5, 0.5), (-0.5, 0.5)]).unwrap();
        let boost = boost_generator((0, 1));
        let mut rot = M4::zeros();
        rot[(1, 2)] = -1.0;
        rot[(2, 1)] = 1.0;
        let gen_at = move |lam: &[f64]| boost * lam[0] + rot * (0.7 * lam[1]) + M4::identity() * (0.2 * lam[0] * lam[1]);
        VierbeinField::new(chart, signature, move |lam| gen_at(lam).exp())
    }
}
