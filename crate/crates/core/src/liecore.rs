//! Matrix Lie group/algebra arithmetic.
//!
//! Everything downstream works with square complex matrices tagged by the
//! algebra/group they are supposed to live in. Membership is checked
//! numerically at construction time; the hot integration loops operate on
//! raw matrices and re-validate at API boundaries only.

use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;

use crate::error::{HolonomyError, Result};

/// Square complex matrix, the working representation for all algebra and
/// group values.
pub type CMatrix = DMatrix<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default tolerance for algebra-membership residuals.
pub const TOL_ALG: f64 = 1e-10;
/// Default tolerance for group-membership residuals.
pub const TOL_GRP: f64 = 1e-8;
/// |det| floor below which a GL(n,R) element counts as singular.
pub const DET_FLOOR: f64 = 1e-12;

/// Minkowski signature convention. `MostlyMinus` is diag(+,-,-,-).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Signature {
    #[default]
    MostlyMinus,
    MostlyPlus,
}

impl Signature {
    pub fn diag(self) -> [f64; 4] {
        match self {
            Signature::MostlyMinus => [1.0, -1.0, -1.0, -1.0],
            Signature::MostlyPlus => [-1.0, 1.0, 1.0, 1.0],
        }
    }

    pub fn eta(self, a: usize, b: usize) -> f64 {
        if a == b {
            self.diag()[a]
        } else {
            0.0
        }
    }
}

/// Representation used for so(3,1) values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LorentzRep {
    /// 4x4 real matrices acting on tangent indices.
    Vector,
    /// Dirac spinor representation, generators 1/4 [gamma_A, gamma_B].
    Spinor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgebraTag {
    /// u(N): anti-hermitian N x N.
    Unitary(usize),
    /// su(N): anti-hermitian traceless.
    SpecialUnitary(usize),
    /// so(3,1) in the given representation.
    Lorentz(LorentzRep, Signature),
    /// gl(n,R): real n x n, no further constraint.
    GeneralLinear(usize),
    /// abelian u(1): 1 x 1 imaginary.
    AbelianU1,
}

impl AlgebraTag {
    pub fn matrix_dim(&self) -> usize {
        match *self {
            AlgebraTag::Unitary(n) | AlgebraTag::SpecialUnitary(n) | AlgebraTag::GeneralLinear(n) => n,
            AlgebraTag::Lorentz(..) => 4,
            AlgebraTag::AbelianU1 => 1,
        }
    }

    pub fn group(&self) -> GroupTag {
        match *self {
            AlgebraTag::Unitary(n) => GroupTag::Unitary(n),
            AlgebraTag::SpecialUnitary(n) => GroupTag::SpecialUnitary(n),
            AlgebraTag::Lorentz(rep, sig) => GroupTag::Lorentz(rep, sig),
            AlgebraTag::GeneralLinear(n) => GroupTag::GeneralLinear(n),
            AlgebraTag::AbelianU1 => GroupTag::AbelianU1,
        }
    }

    /// Membership residual of `m` with respect to this algebra. Zero for a
    /// perfect member.
    pub fn residual(&self, m: &CMatrix) -> f64 {
        let n = self.matrix_dim();
        if m.nrows() != n || m.ncols() != n {
            return f64::INFINITY;
        }
        match *self {
            AlgebraTag::Unitary(_) | AlgebraTag::AbelianU1 => (m + m.adjoint()).norm(),
            AlgebraTag::SpecialUnitary(_) => (m + m.adjoint()).norm() + m.trace().norm(),
            AlgebraTag::GeneralLinear(_) => imag_norm(m),
            AlgebraTag::Lorentz(rep, sig) => {
                let gens = LorentzGenerators::new(rep, sig);
                gens.span_residual(m)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupTag {
    Unitary(usize),
    SpecialUnitary(usize),
    Lorentz(LorentzRep, Signature),
    GeneralLinear(usize),
    AbelianU1,
}

impl GroupTag {
    pub fn matrix_dim(&self) -> usize {
        match *self {
            GroupTag::Unitary(n) | GroupTag::SpecialUnitary(n) | GroupTag::GeneralLinear(n) => n,
            GroupTag::Lorentz(..) => 4,
            GroupTag::AbelianU1 => 1,
        }
    }

    /// Membership residual of `m` with respect to this group.
    pub fn residual(&self, m: &CMatrix) -> f64 {
        let n = self.matrix_dim();
        if m.nrows() != n || m.ncols() != n {
            return f64::INFINITY;
        }
        let id = CMatrix::identity(n, n);
        match *self {
            GroupTag::Unitary(_) | GroupTag::AbelianU1 => (m.adjoint() * m - &id).norm(),
            GroupTag::SpecialUnitary(_) => {
                (m.adjoint() * m - &id).norm() + (m.determinant() - ONE).norm()
            }
            GroupTag::GeneralLinear(_) => {
                let im = imag_norm(m);
                let det = m.determinant().norm();
                if det > DET_FLOOR {
                    im
                } else {
                    f64::INFINITY
                }
            }
            GroupTag::Lorentz(rep, sig) => match rep {
                // Lambda^T eta Lambda = eta.
                LorentzRep::Vector => {
                    let eta = eta_matrix(sig);
                    (m.transpose() * &eta * m - &eta).norm() + imag_norm(m)
                }
                // S^H gamma^0 S = gamma^0 (pseudo-unitarity); boosts are
                // non-unitary so this is the conserved form to test.
                LorentzRep::Spinor => {
                    let dirac = DiracAlgebra::new(sig);
                    let g0 = &dirac.gamma[0];
                    (m.adjoint() * g0 * m - g0).norm()
                }
            },
        }
    }
}

fn imag_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.im * z.im).sum::<f64>().sqrt()
}

fn eta_matrix(sig: Signature) -> CMatrix {
    let d = sig.diag();
    CMatrix::from_fn(4, 4, |i, j| if i == j { Complex64::new(d[i], 0.0) } else { ZERO })
}

/// A matrix known to lie (within `TOL_ALG`) in the tagged Lie algebra.
#[derive(Clone, Debug)]
pub struct AlgebraElement {
    matrix: CMatrix,
    tag: AlgebraTag,
}

impl AlgebraElement {
    pub fn new(matrix: CMatrix, tag: AlgebraTag) -> Result<Self> {
        Self::with_tolerance(matrix, tag, TOL_ALG)
    }

    pub fn with_tolerance(matrix: CMatrix, tag: AlgebraTag, tol: f64) -> Result<Self> {
        if !matrix.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(HolonomyError::NonFinite("algebra element".into()));
        }
        let r = tag.residual(&matrix);
        if r > tol {
            return Err(HolonomyError::Membership(format!(
                "algebra residual {r:.3e} exceeds tolerance {tol:.1e} for {tag:?}"
            )));
        }
        Ok(Self { matrix, tag })
    }

    pub fn zero(tag: AlgebraTag) -> Self {
        let n = tag.matrix_dim();
        Self { matrix: CMatrix::zeros(n, n), tag }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn tag(&self) -> AlgebraTag {
        self.tag
    }
}

/// A matrix known to lie (within `TOL_GRP`) in the tagged Lie group.
#[derive(Clone, Debug)]
pub struct GroupElement {
    matrix: CMatrix,
    tag: GroupTag,
}

impl GroupElement {
    pub fn new(matrix: CMatrix, tag: GroupTag) -> Result<Self> {
        Self::with_tolerance(matrix, tag, TOL_GRP)
    }

    pub fn with_tolerance(matrix: CMatrix, tag: GroupTag, tol: f64) -> Result<Self> {
        if !matrix.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(HolonomyError::NonFinite("group element".into()));
        }
        let r = tag.residual(&matrix);
        if r > tol {
            return Err(HolonomyError::Membership(format!(
                "group residual {r:.3e} exceeds tolerance {tol:.1e} for {tag:?}"
            )));
        }
        Ok(Self { matrix, tag })
    }

    pub fn identity(tag: GroupTag) -> Self {
        let n = tag.matrix_dim();
        Self { matrix: CMatrix::identity(n, n), tag }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn try_inverse(&self) -> Result<GroupElement> {
        let inv = self
            .matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| HolonomyError::Singular("group element inverse".into()))?;
        Ok(GroupElement { matrix: inv, tag: self.tag })
    }
}

/// [a, b] = ab - ba.
pub fn commutator(a: &AlgebraElement, b: &AlgebraElement) -> Result<AlgebraElement> {
    if a.tag != b.tag {
        return Err(HolonomyError::Dimension(format!(
            "commutator of mismatched tags {:?} vs {:?}",
            a.tag, b.tag
        )));
    }
    Ok(AlgebraElement {
        matrix: commutator_raw(&a.matrix, &b.matrix),
        tag: a.tag,
    })
}

/// Raw commutator without tag bookkeeping, for inner loops.
pub fn commutator_raw(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Matrix exponential into the group (scaling-and-squaring Pade).
pub fn group_exp(a: &AlgebraElement) -> Result<GroupElement> {
    let m = exp_raw(&a.matrix)?;
    Ok(GroupElement { matrix: m, tag: a.tag.group() })
}

pub fn exp_raw(m: &CMatrix) -> Result<CMatrix> {
    if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(HolonomyError::NonFinite("matrix exponential input".into()));
    }
    Ok(m.exp())
}

/// g^{-1} a g.
pub fn adjoint_conjugate(g: &GroupElement, a: &AlgebraElement) -> Result<AlgebraElement> {
    if g.matrix.nrows() != a.matrix.nrows() {
        return Err(HolonomyError::Dimension("adjoint_conjugate shape mismatch".into()));
    }
    let ginv = g
        .matrix
        .clone()
        .try_inverse()
        .ok_or_else(|| HolonomyError::Singular("adjoint_conjugate".into()))?;
    Ok(AlgebraElement {
        matrix: &ginv * &a.matrix * &g.matrix,
        tag: a.tag,
    })
}

/// Closest unitary to `m` (polar factor via SVD). Used to re-project group
/// integrators that drift off U(N).
pub fn unitary_polar_factor(m: &CMatrix) -> Result<CMatrix> {
    let svd = SVD::new(m.clone(), true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(HolonomyError::Singular("polar factor SVD".into())),
    }
}

/// Frobenius distance between two matrices.
pub fn frob_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm()
}

/// The Pauli matrices sigma_x, sigma_y, sigma_z.
pub fn paulis() -> [CMatrix; 3] {
    let sx = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
    let sy = CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]);
    let sz = CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]);
    [sx, sy, sz]
}

/// Anti-hermitian basis (i/2){I, sigma_x, sigma_y, sigma_z} of u(2).
pub fn u2_basis() -> [CMatrix; 4] {
    let [sx, sy, sz] = paulis();
    let id = CMatrix::identity(2, 2);
    [id * (I * 0.5), sx * (I * 0.5), sy * (I * 0.5), sz * (I * 0.5)]
}

/// Generators M_AB of the Lorentz algebra in a fixed representation,
/// stored as the antisymmetric index table M[a][b] = -M[b][a].
#[derive(Clone, Debug)]
pub struct LorentzGenerators {
    pub rep: LorentzRep,
    pub signature: Signature,
    m: Vec<Vec<CMatrix>>,
}

impl LorentzGenerators {
    pub fn new(rep: LorentzRep, signature: Signature) -> Self {
        let m = match rep {
            LorentzRep::Vector => {
                let d = signature.diag();
                let mut table = vec![vec![CMatrix::zeros(4, 4); 4]; 4];
                for a in 0..4 {
                    for b in 0..4 {
                        // (M_AB)^C_D = delta^C_A eta_BD - delta^C_B eta_AD
                        let mut g = CMatrix::zeros(4, 4);
                        g[(a, b)] += Complex64::new(d[b], 0.0);
                        g[(b, a)] -= Complex64::new(d[a], 0.0);
                        table[a][b] = g;
                    }
                }
                table
            }
            LorentzRep::Spinor => DiracAlgebra::new(signature).d_of_m,
        };
        Self { rep, signature, m }
    }

    pub fn get(&self, a: usize, b: usize) -> &CMatrix {
        &self.m[a][b]
    }

    /// The six independent generators M_AB with a < b.
    pub fn independent(&self) -> Vec<((usize, usize), &CMatrix)> {
        let mut out = Vec::with_capacity(6);
        for a in 0..4 {
            for b in (a + 1)..4 {
                out.push(((a, b), &self.m[a][b]));
            }
        }
        out
    }

    /// Contract an antisymmetric coefficient table c[a][b] with the
    /// generators: sum_{a,b} c^{ab} M_ab.
    pub fn contract(&self, coeff: &[[f64; 4]; 4]) -> CMatrix {
        let mut out = CMatrix::zeros(4, 4);
        for a in 0..4 {
            for b in 0..4 {
                if coeff[a][b] != 0.0 {
                    out += &self.m[a][b] * Complex64::new(coeff[a][b], 0.0);
                }
            }
        }
        out
    }

    /// Residual of `x` against the real span of the six generators.
    pub fn span_residual(&self, x: &CMatrix) -> f64 {
        self.fit(x).1
    }

    /// Least-squares fit of `x` over the six generators with real
    /// coefficients; returns the coefficients and the unfit residual norm.
    pub fn fit(&self, x: &CMatrix) -> (Vec<f64>, f64) {
        let basis = self.independent();
        let k = basis.len();
        // Real least squares on the stacked [Re; Im] vectorization.
        let rows = 32;
        let mut a = DMatrix::<f64>::zeros(rows, k);
        for (col, (_, g)) in basis.iter().enumerate() {
            for (idx, z) in g.iter().enumerate() {
                a[(idx, col)] = z.re;
                a[(idx + 16, col)] = z.im;
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(rows, 1);
        for (idx, z) in x.iter().enumerate() {
            rhs[(idx, 0)] = z.re;
            rhs[(idx + 16, 0)] = z.im;
        }
        let svd = SVD::new(a.clone(), true, true);
        let sol = svd.solve(&rhs, 1e-14).expect("lorentz span fit");
        let resid = (&a * &sol - &rhs).norm();
        (sol.column(0).iter().copied().collect(), resid)
    }

    /// Max residual of [M_AB, M_CD] = -eta_BD M_AC + eta_BC M_AD
    /// + eta_AD M_BC - eta_AC M_BD over all index pairs.
    pub fn bracket_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let lhs = commutator_raw(&self.m[a][b], &self.m[c][d]);
                        let rhs = &self.m[a][c] * Complex64::new(-self.signature.eta(b, d), 0.0)
                            + &self.m[a][d] * Complex64::new(self.signature.eta(b, c), 0.0)
                            + &self.m[b][c] * Complex64::new(self.signature.eta(a, d), 0.0)
                            + &self.m[b][d] * Complex64::new(-self.signature.eta(a, c), 0.0);
                        worst = worst.max((lhs - rhs).norm());
                    }
                }
            }
        }
        worst
    }
}

/// Dirac gamma matrices in the standard (gamma^0 diagonal) basis and the
/// spinor generators 1/4 [gamma_A, gamma_B] built from them. The
/// representation is pluggable: any set satisfying the anticommutation
/// relation works downstream.
#[derive(Clone, Debug)]
pub struct DiracAlgebra {
    pub signature: Signature,
    pub gamma: Vec<CMatrix>,
    pub d_of_m: Vec<Vec<CMatrix>>,
}

impl DiracAlgebra {
    pub fn new(signature: Signature) -> Self {
        let [sx, sy, sz] = paulis();
        let mut g0 = CMatrix::zeros(4, 4);
        g0[(0, 0)] = ONE;
        g0[(1, 1)] = ONE;
        g0[(2, 2)] = -ONE;
        g0[(3, 3)] = -ONE;
        let block = |s: &CMatrix| {
            let mut g = CMatrix::zeros(4, 4);
            for i in 0..2 {
                for j in 0..2 {
                    g[(i, j + 2)] = s[(i, j)];
                    g[(i + 2, j)] = -s[(i, j)];
                }
            }
            g
        };
        let mut gamma = vec![g0, block(&sx), block(&sy), block(&sz)];
        if signature == Signature::MostlyPlus {
            // {i gamma, i gamma} = -{gamma, gamma} flips the signature.
            for g in &mut gamma {
                *g *= I;
            }
        }
        let mut d_of_m = vec![vec![CMatrix::zeros(4, 4); 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                d_of_m[a][b] =
                    (&gamma[a] * &gamma[b] - &gamma[b] * &gamma[a]) * Complex64::new(0.25, 0.0);
            }
        }
        Self { signature, gamma, d_of_m }
    }

    /// Max residual of {gamma_A, gamma_B} = 2 eta_AB I.
    pub fn anticommutation_residual(&self) -> f64 {
        let id = CMatrix::identity(4, 4);
        let mut worst: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let anti = &self.gamma[a] * &self.gamma[b] + &self.gamma[b] * &self.gamma[a];
                let expected = &id * Complex64::new(2.0 * self.signature.eta(a, b), 0.0);
                worst = worst.max((anti - expected).norm());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn su2_generator(k: usize) -> AlgebraElement {
        let p = paulis();
        AlgebraElement::new(p[k].clone() * (I * 0.5), AlgebraTag::SpecialUnitary(2)).unwrap()
    }

    #[test]
    fn commutator_of_element_with_itself_vanishes() {
        let a = su2_generator(0);
        let c = commutator(&a, &a).unwrap();
        assert!(c.matrix().norm() < 1e-15);
    }

    #[test]
    fn commutator_matches_direct_product_for_pauli_generators() {
        // [i sx/2, i sy/2] against the plain matrix-product evaluation.
        let a = su2_generator(0);
        let b = su2_generator(1);
        let c = commutator(&a, &b).unwrap();
        let direct = a.matrix() * b.matrix() - b.matrix() * a.matrix();
        assert!((c.matrix() - &direct).norm() < 1e-15);
        // [sx, sy] = 2i sz, so [i sx/2, i sy/2] = -(i/2) sz.
        let expected = paulis()[2].clone() * (I * -0.5);
        assert!((c.matrix() - &expected).norm() < 1e-15);
    }

    #[test]
    fn commutator_rejects_shape_mismatch() {
        let a = su2_generator(0);
        let b = AlgebraElement::zero(AlgebraTag::Unitary(3));
        assert!(commutator(&a, &b).is_err());
    }

    #[test]
    fn commutator_satisfies_jacobi() {
        let a = su2_generator(0).into_matrix();
        let b = su2_generator(1).into_matrix();
        let c = su2_generator(2).into_matrix();
        let jac = commutator_raw(&a, &commutator_raw(&b, &c))
            + commutator_raw(&b, &commutator_raw(&c, &a))
            + commutator_raw(&c, &commutator_raw(&a, &b));
        assert!(jac.norm() < TOL_ALG);
    }

    #[test]
    fn lorentz_bracket_example_m01_m12() {
        // Expanding the bracket relation for (A,B,C,D) = (0,1,1,2): the only
        // surviving term is +eta_11 M_02, i.e. -M_02 with mostly-minus
        // signature.
        let gens = LorentzGenerators::new(LorentzRep::Vector, Signature::MostlyMinus);
        let lhs = commutator_raw(gens.get(0, 1), gens.get(1, 2));
        let rhs = -gens.get(0, 2).clone();
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn lorentz_brackets_hold_in_both_reps_and_signatures() {
        for sig in [Signature::MostlyMinus, Signature::MostlyPlus] {
            for rep in [LorentzRep::Vector, LorentzRep::Spinor] {
                let gens = LorentzGenerators::new(rep, sig);
                assert!(
                    gens.bracket_residual() < 1e-12,
                    "bracket residual too large for {rep:?} {sig:?}"
                );
                for (_, g) in gens.independent() {
                    assert!(gens.span_residual(g) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lorentz_table_is_antisymmetric() {
        let gens = LorentzGenerators::new(LorentzRep::Spinor, Signature::MostlyMinus);
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(gens.get(a, b).clone(), -gens.get(b, a).clone());
            }
        }
    }

    #[test]
    fn dirac_anticommutation_residual_is_tiny() {
        for sig in [Signature::MostlyMinus, Signature::MostlyPlus] {
            let d = DiracAlgebra::new(sig);
            assert!(d.anticommutation_residual() <= 1e-12);
        }
    }

    #[test]
    fn spinor_generators_are_quarter_commutators_by_construction() {
        let d = DiracAlgebra::new(Signature::MostlyMinus);
        for a in 0..4 {
            for b in 0..4 {
                let direct = (&d.gamma[a] * &d.gamma[b] - &d.gamma[b] * &d.gamma[a])
                    * Complex64::new(0.25, 0.0);
                assert_eq!(d.d_of_m[a][b], direct);
            }
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let a = AlgebraElement::zero(AlgebraTag::Unitary(3));
        let g = group_exp(&a).unwrap();
        assert!((g.matrix() - CMatrix::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn exp_of_diagonal_is_elementwise() {
        let theta = 0.7;
        let m = CMatrix::from_row_slice(2, 2, &[I * theta, ZERO, ZERO, -I * theta]);
        let a = AlgebraElement::new(m, AlgebraTag::SpecialUnitary(2)).unwrap();
        let g = group_exp(&a).unwrap();
        let expected =
            CMatrix::from_row_slice(2, 2, &[(I * theta).exp(), ZERO, ZERO, (-I * theta).exp()]);
        assert!((g.matrix() - &expected).norm() < 1e-14);
    }

    #[test]
    fn exp_matches_taylor_series_oracle() {
        // Fixed su(2) element against a 200-term Taylor sum.
        let m = paulis()[0].clone() * (I * 0.31)
            + paulis()[1].clone() * (I * -0.44)
            + paulis()[2].clone() * (I * 0.12);
        let a = AlgebraElement::new(m.clone(), AlgebraTag::SpecialUnitary(2)).unwrap();
        let g = group_exp(&a).unwrap();

        let mut taylor = CMatrix::identity(2, 2);
        let mut term = CMatrix::identity(2, 2);
        for k in 1..200 {
            term = &term * &m / Complex64::new(k as f64, 0.0);
            taylor += &term;
        }
        assert!((g.matrix() - &taylor).norm() < 1e-12);
    }

    #[test]
    fn exp_inverse_identity() {
        let m = paulis()[1].clone() * (I * 0.9);
        let a = AlgebraElement::new(m.clone(), AlgebraTag::SpecialUnitary(2)).unwrap();
        let b = AlgebraElement::new(-m, AlgebraTag::SpecialUnitary(2)).unwrap();
        let prod = group_exp(&a).unwrap().matrix() * group_exp(&b).unwrap().matrix();
        assert!((prod - CMatrix::identity(2, 2)).norm() < TOL_GRP);
    }

    #[test]
    fn exp_rejects_non_finite() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = Complex64::new(f64::NAN, 0.0);
        assert!(exp_raw(&m).is_err());
    }

    #[test]
    fn adjoint_conjugate_trivial_cases() {
        let a = su2_generator(2);
        let id = GroupElement::identity(GroupTag::SpecialUnitary(2));
        let out = adjoint_conjugate(&id, &a).unwrap();
        assert!((out.matrix() - a.matrix()).norm() < 1e-15);

        let zero = AlgebraElement::zero(AlgebraTag::SpecialUnitary(2));
        let g = group_exp(&su2_generator(0)).unwrap();
        let out = adjoint_conjugate(&g, &zero).unwrap();
        assert!(out.matrix().norm() < 1e-15);
    }

    #[test]
    fn adjoint_conjugate_preserves_anti_hermiticity() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut draw = || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let raw = CMatrix::from_fn(2, 2, |_, _| draw());
            let anti = (&raw - raw.adjoint()) * Complex64::new(0.5, 0.0);
            let a = AlgebraElement::new(anti.clone(), AlgebraTag::Unitary(2)).unwrap();
            let g = group_exp(
                &AlgebraElement::new(
                    (&raw - raw.adjoint()) * Complex64::new(0.3, 0.0),
                    AlgebraTag::Unitary(2),
                )
                .unwrap(),
            )
            .unwrap();
            let out = adjoint_conjugate(&g, &a).unwrap();
            assert!(AlgebraTag::Unitary(2).residual(out.matrix()) < 1e-12);
        }
    }

    #[test]
    fn membership_validation_rejects_bad_algebra_elements() {
        let m = CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ONE]);
        assert!(AlgebraElement::new(m, AlgebraTag::Unitary(2)).is_err());
        let m = CMatrix::from_row_slice(2, 2, &[I, ZERO, ZERO, I]);
        assert!(AlgebraElement::new(m.clone(), AlgebraTag::Unitary(2)).is_ok());
        // nonzero trace fails su(2)
        assert!(AlgebraElement::new(m, AlgebraTag::SpecialUnitary(2)).is_err());
    }

    #[test]
    fn lorentz_span_membership() {
        let gens = LorentzGenerators::new(LorentzRep::Spinor, Signature::MostlyMinus);
        let mut x = CMatrix::zeros(4, 4);
        x += gens.get(0, 1) * Complex64::new(0.3, 0.0);
        x += gens.get(2, 3) * Complex64::new(-1.1, 0.0);
        assert!(gens.span_residual(&x) < 1e-12);
        let tag = AlgebraTag::Lorentz(LorentzRep::Spinor, Signature::MostlyMinus);
        assert!(AlgebraElement::new(x.clone(), tag).is_ok());
        x[(0, 0)] += Complex64::new(0.2, 0.0);
        assert!(AlgebraElement::new(x, tag).is_err());
    }

    #[test]
    fn bch_second_order_slope_of_group_commutator() {
        // exp(ta) exp(tb) exp(-ta) exp(-tb) = exp(t^2 [a,b] + O(t^3));
        // the log-log slope of the residual against t should be close to 3.
        let a = paulis()[0].clone() * (I * 0.5);
        let b = paulis()[1].clone() * (I * 0.5);
        let comm = commutator_raw(&a, &b);
        let mut points = Vec::new();
        for &t in &[1e-1, 1e-2, 1e-3] {
            let ta = (&a * Complex64::new(t, 0.0)).exp();
            let tb = (&b * Complex64::new(t, 0.0)).exp();
            let ta_inv = (&a * Complex64::new(-t, 0.0)).exp();
            let tb_inv = (&b * Complex64::new(-t, 0.0)).exp();
            let lhs = &ta * &tb * &ta_inv * &tb_inv;
            let rhs = (&comm * Complex64::new(t * t, 0.0)).exp();
            let err = (lhs - rhs).norm().max(1e-300);
            points.push((t.ln(), err.ln()));
        }
        let slope = (points[0].1 - points[2].1) / (points[0].0 - points[2].0);
        assert!(
            (2.7..=3.3).contains(&slope),
            "BCH residual slope {slope} outside [2.7, 3.3]"
        );
    }

    #[test]
    fn unitary_polar_projection_restores_membership() {
        let m = (paulis()[2].clone() * (I * 0.4)).exp() * Complex64::new(1.001, 0.0);
        let p = unitary_polar_factor(&m).unwrap();
        assert!(GroupTag::Unitary(2).residual(&p) < 1e-12);
    }

    proptest::proptest! {
        /// Membership survives the public constructors and operations for
        /// arbitrary coefficient draws.
        #[test]
        fn membership_closed_under_ops(
            c in proptest::array::uniform4(-2.0f64..2.0),
            d in proptest::array::uniform4(-2.0f64..2.0),
        ) {
            let basis = u2_basis();
            let mk = |co: [f64; 4]| {
                let mut m = CMatrix::zeros(2, 2);
                for k in 0..4 {
                    m += &basis[k] * Complex64::new(co[k], 0.0);
                }
                AlgebraElement::new(m, AlgebraTag::Unitary(2)).unwrap()
            };
            let a = mk(c);
            let b = mk(d);
            let comm = commutator(&a, &b).unwrap();
            proptest::prop_assert!(AlgebraTag::Unitary(2).residual(comm.matrix()) < TOL_ALG);
            let g = group_exp(&a).unwrap();
            proptest::prop_assert!(GroupTag::Unitary(2).residual(g.matrix()) < TOL_GRP);
            let conj = adjoint_conjugate(&g, &b).unwrap();
            proptest::prop_assert!(AlgebraTag::Unitary(2).residual(conj.matrix()) < 1e-12);
        }
    }
}
