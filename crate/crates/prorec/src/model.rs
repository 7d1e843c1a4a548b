//! Shared numerical types: the sparse interaction matrix, the embedding
//! factor model, and the cost matrix, plus the scoring/objective primitives
//! every other module consumes.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Sparse user–item interaction matrix.
///
/// Only nonzero entries are stored; absent pairs mean 0. Stored values must
/// lie in `(0, 1]`. A freshly loaded dataset is binary (all stored values are
/// exactly 1); the blend update produces real values on the original support.
///
/// Both row-major (per-user) and column-major (per-item) adjacency are kept so
/// that alternating solves can scan either side without rebuilding indices.
/// The type is immutable after construction; updates go through
/// [`InteractionMatrix::map_values`], which returns a new matrix.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    /// Per user: `(item index, value)` sorted by item index.
    rows: Vec<Vec<(u32, f64)>>,
    /// Per item: `(user index, value)` sorted by user index.
    cols: Vec<Vec<(u32, f64)>>,
    nnz: usize,
    binary: bool,
}

impl InteractionMatrix {
    /// Builds a binary matrix from `(user, item)` pairs (each value 1.0).
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(u32, u32)]) -> Result<Self> {
        let triplets: Vec<(u32, u32, f64)> = pairs.iter().map(|&(i, j)| (i, j, 1.0)).collect();
        Self::from_triplets(n_users, n_items, &triplets)
    }

    /// Builds a matrix from `(user, item, value)` triplets.
    ///
    /// Values must lie in `(0, 1]`; indices must be in range; duplicate pairs
    /// are rejected.
    pub fn from_triplets(
        n_users: usize,
        n_items: usize,
        triplets: &[(u32, u32, f64)],
    ) -> Result<Self> {
        if n_users == 0 || n_items == 0 {
            return Err(Error::InvalidArgument(format!(
                "interaction matrix needs positive dimensions, got {n_users}x{n_items}"
            )));
        }
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_users];
        for &(i, j, v) in triplets {
            if (i as usize) >= n_users || (j as usize) >= n_items {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) out of range for {n_users}x{n_items} matrix"
                )));
            }
            if !v.is_finite() || v <= 0.0 || v > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) has value {v}; stored values must lie in (0, 1]"
                )));
            }
            rows[i as usize].push((j, v));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(j, _)| j);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate (user, item) pair in row {i}"
                )));
            }
        }
        Ok(Self::from_sorted_rows(n_users, n_items, rows))
    }

    /// Internal constructor from validated, per-user sorted adjacency.
    fn from_sorted_rows(n_users: usize, n_items: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_items];
        let mut nnz = 0usize;
        let mut binary = true;
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j as usize].push((i as u32, v));
                nnz += 1;
                if v != 1.0 {
                    binary = false;
                }
            }
        }
        // Rows are visited in ascending user order, so each column is already
        // sorted by user index.
        InteractionMatrix {
            n_users,
            n_items,
            rows,
            cols,
            nnz,
            binary,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    /// True when every stored value is exactly 1.
    pub fn is_binary(&self) -> bool {
        self.binary
    }

    /// Stored entries of one user, `(item index, value)` sorted by item.
    pub fn row(&self, user: usize) -> &[(u32, f64)] {
        &self.rows[user]
    }

    /// Stored entries of one item, `(user index, value)` sorted by user.
    pub fn col(&self, item: usize) -> &[(u32, f64)] {
        &self.cols[item]
    }

    /// Value at `(user, item)`; 0.0 when the pair is absent.
    pub fn get(&self, user: usize, item: usize) -> f64 {
        match self.rows[user].binary_search_by_key(&(item as u32), |&(j, _)| j) {
            Ok(pos) => self.rows[user][pos].1,
            Err(_) => 0.0,
        }
    }

    /// Iterates stored entries as `(user, item, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, v)| (i as u32, j, v)))
    }

    /// Squared Frobenius norm of the stored entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.iter().map(|(_, _, v)| v * v).sum()
    }

    /// Dense copy; intended for small instances and tests.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_users, self.n_items));
        for (i, j, v) in self.iter() {
            out[[i as usize, j as usize]] = v;
        }
        out
    }

    /// Returns a new matrix with the same support and transformed values.
    ///
    /// Entries mapped to exactly 0.0 are dropped (support may shrink, never
    /// grow); all other new values must lie in `(0, 1]`.
    pub fn map_values(&self, mut f: impl FnMut(u32, u32, f64) -> f64) -> Result<Self> {
        let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(self.n_users);
        for (i, row) in self.rows.iter().enumerate() {
            let mut new_row = Vec::with_capacity(row.len());
            for &(j, v) in row {
                let nv = f(i as u32, j, v);
                if nv == 0.0 {
                    continue;
                }
                if !nv.is_finite() || nv < 0.0 || nv > 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "mapped value {nv} at ({i}, {j}) outside [0, 1]"
                    )));
                }
                new_row.push((j, nv));
            }
            rows.push(new_row);
        }
        Ok(Self::from_sorted_rows(self.n_users, self.n_items, rows))
    }
}

/// Where a cost matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostProvenance {
    /// Built as the negated inner-product scores of a factor model.
    InnerProduct,
    /// Supplied by an external predictor.
    External,
}

/// Dense user–item cost matrix (lower cost = stronger predicted match).
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    pub provenance: CostProvenance,
}

impl CostMatrix {
    /// Wraps an externally produced cost matrix, checking finiteness.
    pub fn external(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "cost_matrix",
                detail: "external cost matrix contains non-finite entries".into(),
            });
        }
        // Solvers slice the backing buffer row-major, so normalize the layout
        // here (a transposed or otherwise strided input would break them).
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(CostMatrix {
            values,
            provenance: CostProvenance::External,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.values.shape();
        (s[0], s[1])
    }
}

/// User and item embeddings with their ridge weight.
///
/// `u` is M×d, `v` is N×d; the model predicts scores as `U Vᵀ`. All entries
/// stay finite after every update; construction validates this.
#[derive(Debug, Clone)]
pub struct FactorModel {
    u: Array2<f64>,
    v: Array2<f64>,
    zeta: f64,
}

impl FactorModel {
    pub fn new(u: Array2<f64>, v: Array2<f64>, zeta: f64) -> Result<Self> {
        if u.ncols() != v.ncols() || u.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                context: "factor model",
                expected: (u.nrows(), u.ncols().max(1)),
                got: (v.nrows(), v.ncols()),
            });
        }
        if !zeta.is_finite() || zeta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "regularization weight must be finite and >= 0, got {zeta}"
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                context: "factor model",
                detail: "embedding matrices contain non-finite entries".into(),
            });
        }
        Ok(FactorModel { u, v, zeta })
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Embedding dimension d.
    pub fn d(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.v.nrows()
    }

    /// Crate-internal accessor used by the alternating solver.
    pub(crate) fn parts_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.u, &mut self.v)
    }

    /// Prediction scores `U Vᵀ`; entry `(i, j)` is the inner product of user
    /// `i` and item `j` embeddings.
    pub fn predict_scores(&self) -> Result<Array2<f64>> {
        if self.u.ncols() != self.v.ncols() {
            return Err(Error::ShapeMismatch {
                context: "predict_scores",
                expected: (self.u.nrows(), self.u.ncols()),
                got: (self.v.nrows(), self.v.ncols()),
            });
        }
        Ok(self.u.dot(&self.v.t()))
    }

    /// Cost matrix `-U Vᵀ` (low cost marks a strongly matched pair).
    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        let mut values = self.predict_scores()?;
        values.mapv_inplace(|x| -x);
        Ok(CostMatrix {
            values,
            provenance: CostProvenance::InnerProduct,
        })
    }

    /// Regularized reconstruction objective
    /// `||X - U Vᵀ||_F² + ζ (||U||_F² + ||V||_F²)`.
    ///
    /// The Frobenius term is expanded as
    /// `||X||² - 2⟨X, UVᵀ⟩ + ⟨UᵀU, VᵀV⟩` so the dense product is never
    /// materialized; the reconstruction part is clamped at 0 against rounding.
    pub fn objective(&self, x: &InteractionMatrix) -> Result<f64> {
        if x.n_users() != self.u.nrows() || x.n_items() != self.v.nrows() {
            return Err(Error::ShapeMismatch {
                context: "objective",
                expected: (self.u.nrows(), self.v.nrows()),
                got: (x.n_users(), x.n_items()),
            });
        }
        let gram_u = self.u.t().dot(&self.u);
        let gram_v = self.v.t().dot(&self.v);
        let cross: f64 = gram_u
            .iter()
            .zip(gram_v.iter())
            .map(|(a, b)| a * b)
            .sum();
        let mut inner = 0.0;
        for i in 0..x.n_users() {
            let ui = self.u.row(i);
            for &(j, v) in x.row(i) {
                inner += v * dot(ui, self.v.row(j as usize));
            }
        }
        let recon = (x.frobenius_sq() - 2.0 * inner + cross).max(0.0);
        let norms: f64 = self.u.iter().map(|x| x * x).sum::<f64>()
            + self.v.iter().map(|x| x * x).sum::<f64>();
        Ok(recon + self.zeta * norms)
    }
}

fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(m: usize, n: usize, d: usize, zeta: f64, seed: u64) -> FactorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Array2::from_shape_fn((m, d), |_| rng.gen_range(-1.0..1.0));
        let v = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        FactorModel::new(u, v, zeta).unwrap()
    }

    /// Naive triple-loop matmul oracle.
    fn matmul_oracle(u: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        let (m, d) = (u.nrows(), u.ncols());
        let n = v.nrows();
        let mut out = Array2::zeros((m, n));
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..d {
                    s += u[[i, k]] * v[[j, k]];
                }
                out[[i, j]] = s;
            }
        }
        out
    }

    #[test]
    fn predict_orthogonal_vectors_give_zero() {
        let m = FactorModel::new(array![[1.0, 0.0]], array![[0.0, 1.0]], 0.0).unwrap();
        let s = m.predict_scores().unwrap();
        assert_eq!(s, array![[0.0]]);
    }

    #[test]
    fn predict_identity_factors_give_identity() {
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        let m = FactorModel::new(eye.clone(), eye, 0.0).unwrap();
        let s = m.predict_scores().unwrap();
        assert_eq!(s, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn predict_matches_naive_matmul_oracle() {
        let m = random_model(3, 4, 2, 0.0, 11);
        let s = m.predict_scores().unwrap();
        let oracle = matmul_oracle(m.u(), m.v());
        for (a, b) in s.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn cost_is_negated_identity_for_identity_factors() {
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        let m = FactorModel::new(eye.clone(), eye, 0.0).unwrap();
        let c = m.cost_matrix().unwrap();
        assert_eq!(c.values, array![[-1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(c.provenance, CostProvenance::InnerProduct);
    }

    #[test]
    fn cost_of_zero_factors_is_zero() {
        let m = FactorModel::new(Array2::zeros((2, 3)), Array2::zeros((4, 3)), 0.0).unwrap();
        let c = m.cost_matrix().unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cost_plus_predict_is_zero_elementwise() {
        let m = random_model(5, 6, 3, 0.1, 3);
        let s = m.predict_scores().unwrap();
        let c = m.cost_matrix().unwrap();
        for (a, b) in s.iter().zip(c.values.iter()) {
            assert_eq!(a + b, 0.0);
        }
    }

    #[test]
    fn objective_zero_at_perfect_reconstruction() {
        // X = UVᵀ with U = V = I₂ gives X = I₂.
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        let m = FactorModel::new(eye.clone(), eye, 0.0).unwrap();
        let x = InteractionMatrix::from_pairs(2, 2, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(m.objective(&x).unwrap(), 0.0);
    }

    #[test]
    fn objective_of_identity_factors_on_zero_matrix_is_two() {
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        let m = FactorModel::new(eye.clone(), eye, 0.0).unwrap();
        let x = InteractionMatrix::from_pairs(2, 2, &[]).unwrap();
        assert!((m.objective(&x).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_double_loop_oracle() {
        let m = random_model(4, 3, 2, 0.05, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut triplets = Vec::new();
        for i in 0..4u32 {
            for j in 0..3u32 {
                if rng.gen_bool(0.6) {
                    triplets.push((i, j, rng.gen_range(0.1..1.0)));
                }
            }
        }
        let x = InteractionMatrix::from_triplets(4, 3, &triplets).unwrap();
        // Direct double-loop sum over every cell.
        let scores = matmul_oracle(m.u(), m.v());
        let mut expected = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                let r = x.get(i, j) - scores[[i, j]];
                expected += r * r;
            }
        }
        expected += m.zeta()
            * (m.u().iter().map(|x| x * x).sum::<f64>()
                + m.v().iter().map(|x| x * x).sum::<f64>());
        let got = m.objective(&x).unwrap();
        assert!(
            (got - expected).abs() <= 1e-12 * expected.max(1.0),
            "{got} vs {expected}"
        );
    }

    #[test]
    fn objective_invariant_under_joint_rotation() {
        // Rotate both embedding spaces by the same orthonormal Q.
        let m = random_model(4, 5, 2, 0.2, 23);
        let x = InteractionMatrix::from_pairs(4, 5, &[(0, 1), (1, 4), (2, 2), (3, 0)]).unwrap();
        let theta: f64 = 0.731;
        let q = array![
            [theta.cos(), theta.sin()],
            [-theta.sin(), theta.cos()]
        ];
        let rotated =
            FactorModel::new(m.u().dot(&q), m.v().dot(&q), m.zeta()).unwrap();
        let a = m.objective(&x).unwrap();
        let b = rotated.objective(&x).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn objective_at_least_ridge_term() {
        let m = random_model(3, 3, 2, 0.7, 29);
        let x = InteractionMatrix::from_pairs(3, 3, &[(0, 0), (2, 1)]).unwrap();
        let norms: f64 = m.u().iter().map(|x| x * x).sum::<f64>()
            + m.v().iter().map(|x| x * x).sum::<f64>();
        assert!(m.objective(&x).unwrap() >= m.zeta() * norms);
    }

    #[test]
    fn interaction_matrix_rejects_bad_input() {
        assert!(InteractionMatrix::from_pairs(2, 2, &[(2, 0)]).is_err());
        assert!(InteractionMatrix::from_triplets(2, 2, &[(0, 0, 0.0)]).is_err());
        assert!(InteractionMatrix::from_triplets(2, 2, &[(0, 0, 1.5)]).is_err());
        assert!(InteractionMatrix::from_pairs(2, 2, &[(0, 0), (0, 0)]).is_err());
        assert!(InteractionMatrix::from_pairs(0, 2, &[]).is_err());
    }

    #[test]
    fn interaction_matrix_roundtrip_and_accessors() {
        let x = InteractionMatrix::from_triplets(2, 3, &[(0, 2, 0.5), (1, 0, 1.0)]).unwrap();
        assert_eq!(x.nnz(), 2);
        assert!(!x.is_binary());
        assert_eq!(x.get(0, 2), 0.5);
        assert_eq!(x.get(0, 0), 0.0);
        assert_eq!(x.row(1), &[(0, 1.0)]);
        assert_eq!(x.col(0), &[(1, 1.0)]);
        let dense = x.to_dense();
        assert_eq!(dense[[0, 2]], 0.5);
        assert_eq!(dense[[1, 0]], 1.0);
    }

    #[test]
    fn map_values_drops_exact_zeros_and_validates() {
        let x = InteractionMatrix::from_pairs(1, 3, &[(0, 0), (0, 1), (0, 2)]).unwrap();
        let y = x
            .map_values(|_, j, v| if j == 1 { 0.0 } else { 0.5 * v })
            .unwrap();
        assert_eq!(y.nnz(), 2);
        assert_eq!(y.get(0, 1), 0.0);
        assert_eq!(y.get(0, 0), 0.5);
        assert!(x.map_values(|_, _, _| 2.0).is_err());
    }
}
