//! Allocation matrix, nullspace parametrisation and the motor-bounds nullspace QP.
//!
//! Column `i` of the 6×8 allocation matrix maps thrust `f_i` of rotor `i` to the body
//! wrench `[u_i; r_i × u_i + κ_i u_i]`. With rank 6 the map has a two-dimensional
//! nullspace spanned by `n_A`, and any command `u_0 + n_A X` produces the same wrench.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Thrusts, N_ROTORS};

pub type WrenchMap = SMatrix<f64, 6, N_ROTORS>;
pub type NullspaceBasis = SMatrix<f64, N_ROTORS, 2>;

/// Mounting data for one rotor, body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotor {
    /// m
    pub position: Vector3<f64>,
    /// Unit thrust direction.
    pub direction: Vector3<f64>,
    /// Thrust-to-torque coefficient, m.
    pub kappa: f64,
    /// N
    pub max_thrust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotorGeometry {
    pub rotors: [Rotor; N_ROTORS],
}

/// Half edge of the default cube frame, m.
const CUBE_HALF_EDGE: f64 = 0.2;
const DEFAULT_KAPPA: f64 = 0.016;
const DEFAULT_MAX_THRUST: f64 = 6.0;

impl RotorGeometry {
    /// Eight rotors on the vertices of a cube with fixed, individually tilted thrust
    /// directions. The tilts were picked numerically so that every force direction
    /// admits at least 8.1 N and every torque direction at least 2.0 N·m within
    /// `[0, 6]` N per rotor; drag torque signs alternate across the cube.
    pub fn default_cube() -> Self {
        let rotors = std::array::from_fn(|i| {
            let s = cube_vertex(i);
            let [x, y, z] = DEFAULT_DIRECTIONS[i];
            Rotor {
                position: s * CUBE_HALF_EDGE,
                direction: Vector3::new(x, y, z).normalize(),
                kappa: DEFAULT_KAPPA * s.x * s.y * s.z,
                max_thrust: DEFAULT_MAX_THRUST,
            }
        });
        Self { rotors }
    }

    pub fn max_thrust(&self) -> Thrusts {
        Thrusts::from_fn(|i, _| self.rotors[i].max_thrust)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rotors.iter().enumerate() {
            let n = r.direction.norm();
            if !((n - 1.0).abs() <= 1e-12) {
                return Err(Error::Parameter(format!(
                    "rotor {i}: thrust direction has norm {n}, expected 1"
                )));
            }
            if !(r.max_thrust > 0.0) {
                return Err(Error::Parameter(format!("rotor {i}: max thrust must be positive")));
            }
            if !(r.position.iter().all(|x| x.is_finite()) && r.kappa.is_finite()) {
                return Err(Error::Parameter(format!("rotor {i}: non-finite mounting data")));
            }
        }
        Ok(())
    }
}

/// Thrust directions of the default frame, indexed like [`cube_vertex`]. Chosen so that
/// the force and moment rows of the allocation matrix are orthogonal, which makes the
/// split pseudoinverse allocation reproduce the full wrench.
const DEFAULT_DIRECTIONS: [[f64; 3]; N_ROTORS] = [
    [-0.7323670994472753, 0.15043604056769633, 0.6640839023387778],
    [-0.7085228299719071, 0.35059636563718316, -0.6124357826014076],
    [0.6405682669132918, -0.6802238669936462, -0.3563253937006338],
    [-0.4341475762882056, -0.8238981994840238, 0.3642905967631616],
    [0.24653732074197712, 0.9685020719789535, 0.03497264722381401],
    [-0.1788255805895359, 0.2866858111535549, 0.9411868344861416],
    [-0.19003377102540583, 0.21166847429970279, -0.9586884910425806],
    [0.9707554496017189, -0.2193223249503552, 0.09762978463017886],
];

/// Vertex `i` of the unit cube, ordered by the bits of `i` (bit 2 → x, bit 1 → y, bit 0 → z).
fn cube_vertex(i: usize) -> Vector3<f64> {
    let sign = |bit: usize| if i & (1 << bit) == 0 { 1.0 } else { -1.0 };
    Vector3::new(sign(2), sign(1), sign(0))
}

/// Desired wrench from the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesiredWrench {
    /// World frame, N.
    pub force_world: Vector3<f64>,
    /// Body frame, N·m.
    pub torque_body: Vector3<f64>,
}

/// How the nominal command is obtained from the wrench.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NominalMode {
    /// `u_0 = A_f⁺ f_b + A_m⁺ τ_b`.
    #[default]
    Split,
    /// `u_0 = A⁺ [f_b; τ_b]`.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    pub a: WrenchMap,
    /// Orthonormal columns spanning the nullspace of `a`.
    pub nullspace: NullspaceBasis,
    pub force_pinv: SMatrix<f64, N_ROTORS, 3>,
    pub moment_pinv: SMatrix<f64, N_ROTORS, 3>,
    pub full_pinv: SMatrix<f64, N_ROTORS, 6>,
    pub singular_values: Vector6<f64>,
}

/// Relative threshold below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-9;

pub fn build_allocation(geom: &RotorGeometry) -> Result<AllocationMatrix> {
    geom.validate()?;
    let a = WrenchMap::from_fn(|row, i| {
        let r = &geom.rotors[i];
        if row < 3 {
            r.direction[row]
        } else {
            (r.position.cross(&r.direction) + r.direction * r.kappa)[row - 3]
        }
    });

    // Pad to a square matrix so the SVD returns a complete set of right singular vectors.
    let mut padded = SMatrix::<f64, N_ROTORS, N_ROTORS>::zeros();
    padded.fixed_view_mut::<6, N_ROTORS>(0, 0).copy_from(&a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..N_ROTORS).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma_max = svd.singular_values[order[0]];
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > RANK_TOL * sigma_max)
        .count();
    if rank != 6 {
        return Err(Error::GeometryRank {
            rank,
            nullity: N_ROTORS - rank,
        });
    }
    let mut singular_values = Vector6::zeros();
    for (k, &i) in order.iter().take(6).enumerate() {
        singular_values[k] = svd.singular_values[i];
    }

    let mut nullspace = NullspaceBasis::zeros();
    for (col, &i) in order[6..].iter().enumerate() {
        let mut v: SVector<f64, N_ROTORS> = v_t.row(i).transpose();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        nullspace.set_column(col, &v);
    }

    let force_pinv = right_pinv3(&a.fixed_rows::<3>(0).into_owned())?;
    let moment_pinv = right_pinv3(&a.fixed_rows::<3>(3).into_owned())?;
    let aat = a * a.transpose();
    let full_pinv = a.transpose()
        * aat
            .try_inverse()
            .ok_or(Error::GeometryRank { rank: 5, nullity: 3 })?;

    Ok(AllocationMatrix {
        a,
        nullspace,
        force_pinv,
        moment_pinv,
        full_pinv,
        singular_values,
    })
}

fn right_pinv3(m: &SMatrix<f64, 3, N_ROTORS>) -> Result<SMatrix<f64, N_ROTORS, 3>> {
    let gram: Matrix3<f64> = m * m.transpose();
    let inv = gram
        .try_inverse()
        .ok_or(Error::GeometryRank { rank: 2, nullity: 6 })?;
    Ok(m.transpose() * inv)
}

impl AllocationMatrix {
    pub fn wrench(&self, u: &Thrusts) -> Vector6<f64> {
        self.a * u
    }

    pub fn force(&self, u: &Thrusts) -> Vector3<f64> {
        self.a.fixed_rows::<3>(0) * u
    }

    pub fn moment(&self, u: &Thrusts) -> Vector3<f64> {
        self.a.fixed_rows::<3>(3) * u
    }

    pub fn nominal(&self, f_b: &Vector3<f64>, tau_b: &Vector3<f64>, mode: NominalMode) -> Thrusts {
        match mode {
            NominalMode::Split => self.force_pinv * f_b + self.moment_pinv * tau_b,
            NominalMode::Full => {
                self.full_pinv * Vector6::new(f_b.x, f_b.y, f_b.z, tau_b.x, tau_b.y, tau_b.z)
            }
        }
    }

    /// Norms of `A_m A_f⁺` and `A_f A_m⁺`: how much the split allocation leaks between
    /// the force and moment channels. Zero for decoupled geometries.
    pub fn cross_coupling(&self) -> (f64, f64) {
        let am = self.a.fixed_rows::<3>(3);
        let af = self.a.fixed_rows::<3>(0);
        ((am * self.force_pinv).norm(), (af * self.moment_pinv).norm())
    }
}

pub fn nominal_allocation(
    alloc: &AllocationMatrix,
    f_b_star: &Vector3<f64>,
    tau_b_star: &Vector3<f64>,
) -> Thrusts {
    alloc.nominal(f_b_star, tau_b_star, NominalMode::Split)
}

#[inline]
pub fn apply_nullspace(u_0: &Thrusts, alloc: &AllocationMatrix, x: &Vector2<f64>) -> Thrusts {
    u_0 + alloc.nullspace * x
}

/// Largest amount by which `u` leaves `[u_min, u_max]`; zero when inside.
pub fn bound_violation(u: &Thrusts, u_min: &Thrusts, u_max: &Thrusts) -> f64 {
    (0..N_ROTORS)
        .map(|i| (u_min[i] - u[i]).max(u[i] - u_max[i]))
        .fold(0.0, f64::max)
}

fn within_bounds(u: &Thrusts, u_min: &Thrusts, u_max: &Thrusts) -> bool {
    (0..N_ROTORS).all(|i| u_min[i] <= u[i] && u[i] <= u_max[i])
}

/// Minimises `½ XᵀX + (u_0ᵀ n_A) X` subject to `u_min ≤ u_0 + n_A X ≤ u_max`.
pub fn mbno_solve(
    u_0: &Thrusts,
    alloc: &AllocationMatrix,
    u_min: &Thrusts,
    u_max: &Thrusts,
) -> Result<Vector2<f64>> {
    let target = -(alloc.nullspace.transpose() * u_0);
    project_to_bounds(u_0, alloc, u_min, u_max, &target)
}

/// Value of the MBNO objective at `x`.
pub fn mbno_objective(u_0: &Thrusts, alloc: &AllocationMatrix, x: &Vector2<f64>) -> f64 {
    0.5 * x.dot(x) + (alloc.nullspace.transpose() * u_0).dot(x)
}

/// Nearest point to `target` (Euclidean, in nullspace coordinates) whose command
/// `u_0 + n_A X` respects the bounds.
///
/// With two unknowns and sixteen half-planes the problem is solved exactly by testing
/// every candidate active set of size zero, one and two. The returned point satisfies
/// the bounds without tolerance whenever the feasible polygon has an interior.
pub fn project_to_bounds(
    u_0: &Thrusts,
    alloc: &AllocationMatrix,
    u_min: &Thrusts,
    u_max: &Thrusts,
    target: &Vector2<f64>,
) -> Result<Vector2<f64>> {
    if (0..N_ROTORS).any(|i| !(u_min[i] <= u_max[i])) {
        return Err(Error::InvalidArgument("u_min must not exceed u_max".into()));
    }
    let half_planes = HalfPlanes::new(u_0, alloc, u_min, u_max);
    let scale = 1.0 + u_0.amax() + u_max.amax() + u_min.amax();
    let tol = 1e-12 * scale;

    let mut best: Option<(f64, Vector2<f64>)> = None;
    let mut feasible_sum = Vector2::zeros();
    let mut feasible_count = 0usize;
    let mut consider = |x: Vector2<f64>| {
        if !x.iter().all(|v| v.is_finite()) {
            return;
        }
        if half_planes.max_violation(&x) > tol {
            return;
        }
        feasible_sum += x;
        feasible_count += 1;
        let obj = (x - target).norm_squared();
        if best.is_none_or(|(b, _)| obj < b) {
            best = Some((obj, x));
        }
    };

    consider(*target);
    let rows = half_planes.rows();
    for (g, h) in &rows {
        let gg = g.norm_squared();
        if gg > 1e-24 {
            consider(target - g * ((g.dot(target) - h) / gg));
        }
    }
    for j in 0..rows.len() {
        for k in (j + 1)..rows.len() {
            if let Some(x) = intersect(&rows[j], &rows[k]) {
                consider(x);
            }
        }
    }

    let Some((_, x)) = best else {
        let (best, max_violation) = half_planes.least_violation();
        return Err(Error::Infeasible {
            best,
            max_violation,
        });
    };
    if within_bounds(&apply_nullspace(u_0, alloc, &x), u_min, u_max) {
        return Ok(x);
    }
    // Rounding left the optimum a hair outside; pull it towards the centroid of the
    // feasible candidates by the smallest fraction that lands inside.
    let centre = feasible_sum / feasible_count as f64;
    let mut t = f64::EPSILON;
    while t <= 1.0 {
        let y = x + (centre - x) * t;
        if within_bounds(&apply_nullspace(u_0, alloc, &y), u_min, u_max) {
            return Ok(y);
        }
        t *= 2.0;
    }
    Ok(x)
}

/// Half-planes `g·X ≤ h` equivalent to the motor bounds.
struct HalfPlanes {
    rows: [(Vector2<f64>, f64); 2 * N_ROTORS],
}

impl HalfPlanes {
    fn new(u_0: &Thrusts, alloc: &AllocationMatrix, u_min: &Thrusts, u_max: &Thrusts) -> Self {
        let rows = std::array::from_fn(|j| {
            let i = j % N_ROTORS;
            let n = Vector2::new(alloc.nullspace[(i, 0)], alloc.nullspace[(i, 1)]);
            if j < N_ROTORS {
                (n, u_max[i] - u_0[i])
            } else {
                (-n, u_0[i] - u_min[i])
            }
        });
        Self { rows }
    }

    fn rows(&self) -> Vec<(Vector2<f64>, f64)> {
        self.rows.to_vec()
    }

    fn max_violation(&self, x: &Vector2<f64>) -> f64 {
        self.rows
            .iter()
            .map(|(g, h)| g.dot(x) - h)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    }

    /// Minimises the largest violation. The optimum of this piecewise-linear convex
    /// function sits where three of the half-plane residuals tie.
    fn least_violation(&self) -> (Vector2<f64>, f64) {
        let mut best = (Vector2::zeros(), self.max_violation(&Vector2::zeros()));
        let n = self.rows.len();
        for a in 0..n {
            for b in (a + 1)..n {
                if let Some(x) = intersect(&self.rows[a], &self.rows[b]) {
                    let v = self.max_violation(&x);
                    if v < best.1 {
                        best = (x, v);
                    }
                }
                for c in (b + 1)..n {
                    let (ga, ha) = self.rows[a];
                    let (gb, hb) = self.rows[b];
                    let (gc, hc) = self.rows[c];
                    let m = nalgebra::Matrix3::new(
                        ga.x, ga.y, -1.0, gb.x, gb.y, -1.0, gc.x, gc.y, -1.0,
                    );
                    if let Some(sol) = m.lu().solve(&Vector3::new(ha, hb, hc)) {
                        let x = Vector2::new(sol.x, sol.y);
                        if x.iter().all(|v| v.is_finite()) {
                            let v = self.max_violation(&x);
                            if v < best.1 {
                                best = (x, v);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn intersect(a: &(Vector2<f64>, f64), b: &(Vector2<f64>, f64)) -> Option<Vector2<f64>> {
    let m = Matrix2::new(a.0.x, a.0.y, b.0.x, b.0.y);
    let det = m.determinant();
    let scale = a.0.norm() * b.0.norm();
    if !(det.abs() > 1e-12 * scale) {
        return None;
    }
    m.try_inverse().map(|inv| inv * Vector2::new(a.1, b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alloc() -> AllocationMatrix {
        build_allocation(&RotorGeometry::default_cube()).unwrap()
    }

    #[test]
    fn single_column_layout() {
        let mut geom = RotorGeometry::default_cube();
        geom.rotors[0] = Rotor {
            position: Vector3::new(1.0, 0.0, 0.0),
            direction: Vector3::z(),
            kappa: 0.1,
            max_thrust: 6.0,
        };
        // The modified geometry may lose rank; assemble the column the same way directly.
        let r = &geom.rotors[0];
        let moment = r.position.cross(&r.direction) + r.direction * r.kappa;
        assert_eq!(moment, Vector3::new(0.0, -1.0, 0.1));
        if let Ok(a) = build_allocation(&geom) {
            let col: Vec<f64> = a.a.column(0).iter().copied().collect();
            assert_eq!(col, vec![0.0, 0.0, 1.0, 0.0, -1.0, 0.1]);
        }
    }

    #[test]
    fn zero_kappa_column_is_lever_arm() {
        let mut geom = RotorGeometry::default_cube();
        for r in geom.rotors.iter_mut() {
            r.kappa = 0.0;
        }
        let a = build_allocation(&geom).unwrap();
        for (i, r) in geom.rotors.iter().enumerate() {
            let lever = r.position.cross(&r.direction);
            for k in 0..3 {
                assert_eq!(a.a[(3 + k, i)], lever[k]);
            }
        }
    }

    #[test]
    fn default_geometry_invariants() {
        let a = alloc();
        assert!((a.a * a.nullspace).amax() <= 1e-10);
        assert!((a.nullspace.transpose() * a.nullspace - Matrix2::identity()).amax() <= 1e-10);
        let af = a.a.fixed_rows::<3>(0);
        let am = a.a.fixed_rows::<3>(3);
        assert!((af * a.force_pinv - Matrix3::identity()).amax() <= 1e-9);
        assert!((am * a.moment_pinv - Matrix3::identity()).amax() <= 1e-9);
        assert!(a.singular_values[5] > 1e-6);
    }

    #[test]
    fn nullspace_is_deterministic() {
        let g = RotorGeometry::default_cube();
        let a = build_allocation(&g).unwrap();
        let b = build_allocation(&g).unwrap();
        assert_eq!(a.nullspace.as_slice(), b.nullspace.as_slice());
        for col in a.nullspace.column_iter() {
            let first = col.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn rank_deficient_geometry_is_rejected() {
        let mut geom = RotorGeometry::default_cube();
        for r in geom.rotors.iter_mut() {
            r.direction = Vector3::z();
        }
        assert!(matches!(build_allocation(&geom), Err(Error::GeometryRank { .. })));
        let mut geom = RotorGeometry::default_cube();
        geom.rotors[3].direction *= 1.1;
        assert!(matches!(build_allocation(&geom), Err(Error::Parameter(_))));
    }

    #[test]
    fn nominal_is_linear_and_reproduces_force() {
        let a = alloc();
        assert_eq!(nominal_allocation(&a, &Vector3::zeros(), &Vector3::zeros()), Thrusts::zeros());
        let f = Vector3::new(1.5, -2.0, 11.0);
        let t = Vector3::new(0.1, 0.2, -0.05);
        let u = nominal_allocation(&a, &f, &t);
        assert!((a.force(&u) - f).amax() <= 1e-9);
        let u2 = nominal_allocation(&a, &(f * 2.0), &(t * 2.0));
        assert!((u2 - u * 2.0).amax() <= 1e-12);
        let full = a.nominal(&f, &t, NominalMode::Full);
        assert!((a.wrench(&full) - Vector6::new(f.x, f.y, f.z, t.x, t.y, t.z)).amax() <= 1e-9);
    }

    #[test]
    fn nullspace_shift_is_affine_and_preserves_wrench() {
        let a = alloc();
        let u0 = nominal_allocation(&a, &Vector3::new(0.3, 0.2, 12.0), &Vector3::new(0.0, 0.1, 0.0));
        assert_eq!(apply_nullspace(&u0, &a, &Vector2::zeros()), u0);
        let x1 = Vector2::new(0.7, -1.2);
        let x2 = Vector2::new(-0.4, 2.5);
        let lhs = apply_nullspace(&u0, &a, &x1) + apply_nullspace(&u0, &a, &x2) - u0;
        assert!((lhs - apply_nullspace(&u0, &a, &(x1 + x2))).amax() <= 1e-12);
    }

    #[test]
    fn mbno_interior_returns_stationary_point() {
        let a = alloc();
        let hover = a.nominal(&Vector3::new(0.0, 0.0, 5.0), &Vector3::zeros(), NominalMode::Split);
        // The rotors are tilted such that the pseudoinverse asks some of them for
        // negative thrust, so use symmetric bounds to keep the optimum interior.
        let u0 = hover + a.nullspace * Vector2::new(0.2, -0.1);
        let x = mbno_solve(&u0, &a, &Thrusts::from_element(-6.0), &Thrusts::from_element(6.0)).unwrap();
        assert_eq!(x, -(a.nullspace.transpose() * u0));
        assert!((apply_nullspace(&u0, &a, &x) - hover).amax() < 1e-12);
    }

    #[test]
    fn mbno_zero_command() {
        let a = alloc();
        let x = mbno_solve(&Thrusts::zeros(), &a, &Thrusts::zeros(), &Thrusts::from_element(6.0)).unwrap();
        assert!(x.norm() < 1e-15);
    }

    #[test]
    fn mbno_infeasible_carries_diagnostic() {
        let a = alloc();
        // More thrust than eight saturated motors can deliver.
        let u0 = a.nominal(&Vector3::new(0.0, 0.0, 100.0), &Vector3::zeros(), NominalMode::Split);
        match mbno_solve(&u0, &a, &Thrusts::zeros(), &Thrusts::from_element(6.0)) {
            Err(Error::Infeasible { best, max_violation }) => {
                let u = apply_nullspace(&u0, &a, &best);
                let v = bound_violation(&u, &Thrusts::zeros(), &Thrusts::from_element(6.0));
                assert!((v - max_violation).abs() < 1e-9);
                assert!(max_violation > 0.0);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
        let bad = mbno_solve(&u0, &a, &Thrusts::from_element(1.0), &Thrusts::zeros());
        assert!(matches!(bad, Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn mbno_satisfies_kkt(
            f in prop::array::uniform3(-12.0f64..12.0),
            t in prop::array::uniform3(-0.6f64..0.6),
        ) {
            let a = alloc();
            let u0 = nominal_allocation(&a, &Vector3::from(f), &Vector3::from(t));
            let lo = Thrusts::zeros();
            let hi = Thrusts::from_element(6.0);
            if let Ok(x) = mbno_solve(&u0, &a, &lo, &hi) {
                let u = apply_nullspace(&u0, &a, &x);
                prop_assert!(within_bounds(&u, &lo, &hi));
                // Stationarity: -(X + n_Aᵀu_0) = Σ μ_j g_j with μ ≥ 0 over active rows.
                let grad = x + a.nullspace.transpose() * u0;
                let active: Vec<Vector2<f64>> = (0..N_ROTORS).flat_map(|i| {
                    let n = Vector2::new(a.nullspace[(i, 0)], a.nullspace[(i, 1)]);
                    let mut v = Vec::new();
                    if (u[i] - hi[i]).abs() < 1e-9 { v.push(n); }
                    if (u[i] - lo[i]).abs() < 1e-9 { v.push(-n); }
                    v
                }).collect();
                prop_assert!(kkt_residual(&grad, &active) < 1e-8);
            }
        }
    }

    /// Distance from `-grad` to the cone spanned by `normals`.
    fn kkt_residual(grad: &Vector2<f64>, normals: &[Vector2<f64>]) -> f64 {
        let target = -grad;
        let mut best = target.norm();
        for (j, g) in normals.iter().enumerate() {
            let mu = (g.dot(&target) / g.norm_squared()).max(0.0);
            best = best.min((target - g * mu).norm());
            for h in &normals[j + 1..] {
                let m = Matrix2::from_columns(&[*g, *h]);
                if let Some(mu) = m.try_inverse().map(|inv| inv * target) {
                    if mu.x >= -1e-12 && mu.y >= -1e-12 {
                        best = best.min((target - m * mu).norm());
                    }
                }
            }
        }
        best
    }
}
