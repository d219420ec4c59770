//! Structure-preserving parametrization of linear pH-DAE models
//! `E ẋ = (J − R) Q x + G u`, `y = Gᵀ Q x`.
//!
//! Free parameters live in masked factor matrices: `J = ½(M − Mᵀ)`,
//! `R = L_R L_Rᵀ`, `E = L_E L_Eᵀ`, with `Q = I`. Every parameter vector
//! therefore assembles to a model with a skew-symmetric `J` and symmetric
//! positive semidefinite `R` and `E`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};
use crate::scalar::Scalar;

/// Which entries of a factor matrix are free (`true`) or frozen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralMask {
    rows: usize,
    cols: usize,
    free: Vec<bool>,
}

impl StructuralMask {
    pub fn all_frozen(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            free: vec![false; rows * cols],
        }
    }

    pub fn all_free(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            free: vec![true; rows * cols],
        }
    }

    /// Lower triangle including the diagonal.
    pub fn lower_triangular(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    pub fn strictly_lower(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j < i)
    }

    /// Only the listed diagonal positions are free.
    pub fn diagonal(n: usize, free_diag: &[usize]) -> Self {
        Self::from_fn(n, n, |i, j| i == j && free_diag.contains(&i))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let free = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, free }
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.free[i * self.cols + j]
    }

    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Flat row-major indices of the free entries.
    pub fn free_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.free
            .iter()
            .enumerate()
            .filter_map(|(k, &f)| f.then_some(k))
    }
}

impl Serialize for StructuralMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[bool]> = self.free.chunks(self.cols.max(1)).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StructuralMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<bool>>::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(serde::de::Error::custom("ragged mask rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            free: rows.into_iter().flatten().collect(),
        })
    }
}

/// A factor matrix together with its mask. Frozen entries keep the value
/// they were constructed with; only free entries are ever written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedMatrix<T: Scalar> {
    pub mask: StructuralMask,
    #[serde(rename = "values")]
    value: Matrix<T>,
}

impl<T: Scalar> MaskedMatrix<T> {
    pub fn new(value: Matrix<T>, mask: StructuralMask) -> Result<Self> {
        if value.shape() != mask.shape() {
            return Err(Error::dims(format!(
                "mask {:?} for a {:?} matrix",
                mask.shape(),
                value.shape()
            )));
        }
        Ok(Self { mask, value })
    }

    pub fn frozen(value: Matrix<T>) -> Self {
        let (r, c) = value.shape();
        Self {
            mask: StructuralMask::all_frozen(r, c),
            value,
        }
    }

    pub fn value(&self) -> &Matrix<T> {
        &self.value
    }

    pub fn n_free(&self) -> usize {
        self.mask.n_free()
    }

    fn gather(&self, out: &mut Vec<T>) {
        let data = self.value.as_slice();
        out.extend(self.mask.free_indices().map(|k| data[k]));
    }

    fn scatter(&mut self, theta: &[T]) {
        let idx: Vec<usize> = self.mask.free_indices().collect();
        let data = self.value.as_mut_slice();
        for (k, &v) in idx.into_iter().zip(theta) {
            data[k] = v;
        }
    }
}

/// Free parameters of a pH-DAE model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhDaeParams<T: Scalar> {
    pub m_j: MaskedMatrix<T>,
    pub l_r: MaskedMatrix<T>,
    pub l_e: MaskedMatrix<T>,
    pub g: MaskedMatrix<T>,
}

impl<T: Scalar> PhDaeParams<T> {
    pub fn new(
        m_j: MaskedMatrix<T>,
        l_r: MaskedMatrix<T>,
        l_e: MaskedMatrix<T>,
        g: MaskedMatrix<T>,
    ) -> Result<Self> {
        let n = m_j.value.rows();
        for (name, mm) in [("M_J", &m_j), ("L_R", &l_r), ("L_E", &l_e)] {
            if mm.value.shape() != (n, n) {
                return Err(Error::dims(format!(
                    "{name} is {:?}, expected {n}x{n}",
                    mm.value.shape()
                )));
            }
        }
        if g.value.rows() != n {
            return Err(Error::dims(format!("G has {} rows, expected {n}", g.value.rows())));
        }
        Ok(Self { m_j, l_r, l_e, g })
    }

    /// Generic model: strictly lower `M_J`, lower-triangular `L_R` and
    /// `L_E`, all free; `G` frozen at the given value.
    pub fn unstructured(g: Matrix<T>) -> Self {
        let n = g.rows();
        Self {
            m_j: MaskedMatrix::new(Matrix::zeros(n, n), StructuralMask::strictly_lower(n)).unwrap(),
            l_r: MaskedMatrix::new(Matrix::zeros(n, n), StructuralMask::lower_triangular(n))
                .unwrap(),
            l_e: MaskedMatrix::new(Matrix::zeros(n, n), StructuralMask::lower_triangular(n))
                .unwrap(),
            g: MaskedMatrix::frozen(g),
        }
    }

    pub fn n(&self) -> usize {
        self.m_j.value.rows()
    }

    pub fn m(&self) -> usize {
        self.g.value.cols()
    }

    /// Number of free entries, the length of θ.
    pub fn n_free(&self) -> usize {
        self.parts().iter().map(|p| p.n_free()).sum()
    }

    pub(crate) fn parts(&self) -> [&MaskedMatrix<T>; 4] {
        [&self.m_j, &self.l_r, &self.l_e, &self.g]
    }

    fn parts_mut(&mut self) -> [&mut MaskedMatrix<T>; 4] {
        [&mut self.m_j, &mut self.l_r, &mut self.l_e, &mut self.g]
    }

    /// Positions in θ of the free diagonal entries of `L_R` and `L_E`.
    pub fn factor_diagonal_positions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut offset = self.m_j.n_free();
        for f in [&self.l_r, &self.l_e] {
            let cols = f.value.cols();
            out.extend(
                f.mask
                    .free_indices()
                    .enumerate()
                    .filter(|&(_, k)| k / cols == k % cols)
                    .map(|(i, _)| offset + i),
            );
            offset += f.n_free();
        }
        out
    }

    /// θ: free entries of `M_J`, `L_R`, `L_E`, `G` in that order, each
    /// row-major.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_free());
        for p in self.parts() {
            p.gather(&mut out);
        }
        out
    }

    pub fn set_theta(&mut self, theta: &[T]) -> Result<()> {
        if theta.len() != self.n_free() {
            return Err(Error::dims(format!(
                "theta has {} entries, {} free parameters",
                theta.len(),
                self.n_free()
            )));
        }
        let mut offset = 0;
        for p in self.parts_mut() {
            let k = p.n_free();
            p.scatter(&theta[offset..offset + k]);
            offset += k;
        }
        Ok(())
    }

    /// Copy of `self` carrying θ in its free entries.
    pub fn unflatten(&self, theta: &[T]) -> Result<Self> {
        let mut p = self.clone();
        p.set_theta(theta)?;
        Ok(p)
    }

    /// Reshapes a θ-sized vector (e.g. a gradient) into the four factor
    /// shapes, with zeros at frozen positions.
    pub fn scatter_full(&self, v: &[T]) -> Result<[Matrix<T>; 4]> {
        let mut zeroed = self.clone();
        for p in zeroed.parts_mut() {
            p.value = Matrix::zeros(p.value.rows(), p.value.cols());
        }
        zeroed.set_theta(v)?;
        let [a, b, c, d] = zeroed.parts_mut();
        Ok([
            a.value.clone(),
            b.value.clone(),
            c.value.clone(),
            d.value.clone(),
        ])
    }

    /// Draws the free entries: diagonal entries of the `L` factors uniform
    /// in `[0.1, 1.0]`, all other free entries normal with std 0.1.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let n = self.n();
        for (which, p) in self.parts_mut().into_iter().enumerate() {
            let is_factor = which == 1 || which == 2;
            let idx: Vec<usize> = p.mask.free_indices().collect();
            let cols = p.value.cols();
            let data = p.value.as_mut_slice();
            for k in idx {
                let diag = k / cols == k % cols && k / cols < n;
                let v = if is_factor && diag {
                    rng.random_range(0.1..=1.0)
                } else {
                    normal.sample(rng)
                };
                data[k] = T::lit(v);
            }
        }
    }

    pub fn assemble(&self) -> PhDaeModel<T> {
        let n = self.n();
        let half = T::lit(0.5);
        let m = &self.m_j.value;
        let mut j = Matrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                j[(r, c)] = half * (m[(r, c)] - m[(c, r)]);
            }
        }
        PhDaeModel {
            e: gram(&self.l_e.value),
            j,
            r: gram(&self.l_r.value),
            q: Matrix::identity(n),
            g: self.g.value.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PhDaeParams<U> {
        let c = |p: &MaskedMatrix<T>| MaskedMatrix {
            mask: p.mask.clone(),
            value: p.value.cast(),
        };
        PhDaeParams {
            m_j: c(&self.m_j),
            l_r: c(&self.l_r),
            l_e: c(&self.l_e),
            g: c(&self.g),
        }
    }
}

/// `L Lᵀ`, exactly symmetric.
fn gram<T: Scalar>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = dot(l.row(i), l.row(j));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Assembled system matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhDaeModel<T: Scalar> {
    pub e: Matrix<T>,
    pub j: Matrix<T>,
    pub r: Matrix<T>,
    pub q: Matrix<T>,
    pub g: Matrix<T>,
}

impl<T: Scalar> PhDaeModel<T> {
    pub fn n(&self) -> usize {
        self.e.rows()
    }

    pub fn m(&self) -> usize {
        self.g.cols()
    }

    pub fn check_dims(&self) -> Result<()> {
        let n = self.n();
        for (name, a) in [("E", &self.e), ("J", &self.j), ("R", &self.r), ("Q", &self.q)] {
            if a.shape() != (n, n) {
                return Err(Error::dims(format!("{name} is {:?}, expected {n}x{n}", a.shape())));
            }
        }
        if self.g.rows() != n {
            return Err(Error::dims(format!("G has {} rows, expected {n}", self.g.rows())));
        }
        Ok(())
    }

    /// Stored energy `½ xᵀ Qᵀ E x`.
    pub fn hamiltonian(&self, x: &[T]) -> Result<T> {
        let qx = self.q.matvec(x)?;
        let ex = self.e.matvec(x)?;
        Ok(T::lit(0.5) * dot(&qx, &ex))
    }

    /// Port output `Gᵀ Q x`, or `S x` when a selector `S` is given.
    pub fn output(&self, x: &[T], selector: Option<&Matrix<T>>) -> Result<Vec<T>> {
        match selector {
            Some(s) => s.matvec(x),
            None => {
                let qx = self.q.matvec(x)?;
                let mut y = vec![T::zero(); self.m()];
                self.g.matvec_t_into(&qx, &mut y);
                Ok(y)
            }
        }
    }

    /// Indices of rows where `E` vanishes identically (algebraic equations).
    pub fn algebraic_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.e.row(i).iter().all(|&v| v == T::zero()))
            .collect()
    }
}

/// Measured channels: the port output `Gᵀ Q x`, optionally followed by
/// extra state channels `S x` picked by a fixed selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMap<T: Scalar> {
    pub selector: Option<Matrix<T>>,
}

impl<T: Scalar> Default for OutputMap<T> {
    fn default() -> Self {
        Self { selector: None }
    }
}

impl<T: Scalar> OutputMap<T> {
    pub fn port_only() -> Self {
        Self::default()
    }

    pub fn with_selector(selector: Matrix<T>) -> Self {
        Self {
            selector: Some(selector),
        }
    }

    /// Selector rows picking the listed state indices.
    pub fn picking(n: usize, states: &[usize]) -> Self {
        let mut s = Matrix::zeros(states.len(), n);
        for (row, &i) in states.iter().enumerate() {
            s[(row, i)] = T::one();
        }
        Self::with_selector(s)
    }

    /// Number of channels for a model with `m` ports.
    pub fn channels(&self, m: usize) -> usize {
        m + self.selector.as_ref().map_or(0, |s| s.rows())
    }

    /// Unchecked [`observe`](Self::observe) into `y`; `qx` is scratch of
    /// length `n`.
    pub(crate) fn observe_into(&self, model: &PhDaeModel<T>, x: &[T], qx: &mut [T], y: &mut [T]) {
        let m = model.m();
        model.q.matvec_into(x, qx);
        model.g.matvec_t_into(qx, &mut y[..m]);
        if let Some(s) = &self.selector {
            s.matvec_into(x, &mut y[m..]);
        }
    }

    pub fn observe(&self, model: &PhDaeModel<T>, x: &[T]) -> Result<Vec<T>> {
        let mut y = model.output(x, None)?;
        if let Some(s) = &self.selector {
            y.extend(s.matvec(x)?);
        }
        Ok(y)
    }
}

/// Model file contents: the assembled matrices plus the parametrization
/// they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "E")]
    pub e: Matrix<f64>,
    #[serde(rename = "J")]
    pub j: Matrix<f64>,
    #[serde(rename = "R")]
    pub r: Matrix<f64>,
    #[serde(rename = "Q")]
    pub q: Matrix<f64>,
    #[serde(rename = "G")]
    pub g: Matrix<f64>,
    pub params: PhDaeParams<f64>,
}

impl ModelDocument {
    pub fn from_params(params: &PhDaeParams<f64>) -> Self {
        let model = params.assemble();
        Self {
            n: model.n(),
            m: model.m(),
            e: model.e,
            j: model.j,
            r: model.r,
            q: model.q,
            g: model.g,
            params: params.clone(),
        }
    }

    pub fn model(&self) -> PhDaeModel<f64> {
        PhDaeModel {
            e: self.e.clone(),
            j: self.j.clone(),
            r: self.r.clone(),
            q: self.q.clone(),
            g: self.g.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::symmetric_eigenvalues;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_2x2(m_j: Matrix<f64>, l_r: Matrix<f64>, l_e: Matrix<f64>) -> PhDaeParams<f64> {
        PhDaeParams::new(
            MaskedMatrix::frozen(m_j),
            MaskedMatrix::frozen(l_r),
            MaskedMatrix::frozen(l_e),
            MaskedMatrix::frozen(Matrix::column(&[1.0, 0.0])),
        )
        .unwrap()
    }

    #[test]
    fn assembly_examples() {
        let p = params_2x2(
            Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]),
            Matrix::diag(&[2.0, 0.0]),
            Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]),
        );
        let model = p.assemble();
        assert_eq!(model.j, Matrix::from_rows(&[[0.0, -0.5], [0.5, 0.0]]));
        assert_eq!(model.r, Matrix::diag(&[4.0, 0.0]));
        assert_eq!(model.e, Matrix::from_rows(&[[1.0, 1.0], [1.0, 2.0]]));
        let ev = symmetric_eigenvalues(&model.e).unwrap();
        assert!(ev[0] > 0.0);
        assert_eq!(model.q, Matrix::identity(2));
    }

    #[test]
    fn hamiltonian_and_output() {
        let p = params_2x2(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            Matrix::diag(&[2.0, 1.0]),
        );
        let model = p.assemble();
        assert_eq!(model.hamiltonian(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(model.hamiltonian(&[1.0, 1.0]).unwrap(), 0.5 * (4.0 + 1.0));
        assert!(model.hamiltonian(&[1.0]).is_err());
        assert_eq!(model.output(&[0.25, 3.0], None).unwrap(), vec![0.25]);
        assert_eq!(model.output(&[0.0, 0.0], None).unwrap(), vec![0.0]);

        let sel = Matrix::from_rows(&[
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0],
        ]);
        let model5 = PhDaeParams::unstructured(Matrix::<f64>::zeros(5, 1)).assemble();
        let y = model5.output(&[0.0, 2.0, 3.0, 1.0, 0.0], Some(&sel)).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
        assert!(model5.output(&[1.0], Some(&sel)).is_err());
    }

    #[test]
    fn flatten_round_trip_and_counts() {
        let p = params_2x2(Matrix::zeros(2, 2), Matrix::zeros(2, 2), Matrix::zeros(2, 2));
        assert_eq!(p.flatten().len(), 0);
        assert_eq!(p.unflatten(&[]).unwrap(), p);
        assert!(p.unflatten(&[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PhDaeParams::unstructured(Matrix::column(&[1.0, 0.0, 0.0]));
        p.randomize(&mut rng);
        // 3 strictly lower + 6 + 6.
        assert_eq!(p.n_free(), 15);
        let theta = p.flatten();
        assert_eq!(p.unflatten(&theta).unwrap(), p);
    }

    #[test]
    fn factor_diagonal_positions_skip_off_diagonals() {
        let p = PhDaeParams::<f64>::unstructured(Matrix::column(&[1.0, 0.0, 0.0]));
        // θ = 3 entries of M_J, then two row-major lower triangles of 6.
        assert_eq!(p.factor_diagonal_positions(), vec![3, 5, 8, 9, 11, 14]);
        let frozen = params_2x2(Matrix::zeros(2, 2), Matrix::zeros(2, 2), Matrix::zeros(2, 2));
        assert!(frozen.factor_diagonal_positions().is_empty());
    }

    #[test]
    fn randomize_respects_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = PhDaeParams::unstructured(Matrix::column(&[1.0, 0.0, 0.0, 0.0]));
        p.randomize(&mut rng);
        for l in [&p.l_e, &p.l_r] {
            for i in 0..4 {
                let d = l.value()[(i, i)];
                assert!((0.1..=1.0).contains(&d));
            }
        }
        assert_eq!(p.m_j.value()[(0, 1)], 0.0);
    }

    #[test]
    fn scatter_full_zeroes_frozen() {
        let p = PhDaeParams::new(
            MaskedMatrix::frozen(Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]])),
            MaskedMatrix::new(Matrix::diag(&[3.0, 3.0]), StructuralMask::diagonal(2, &[1])).unwrap(),
            MaskedMatrix::new(Matrix::diag(&[5.0, 5.0]), StructuralMask::diagonal(2, &[0])).unwrap(),
            MaskedMatrix::frozen(Matrix::column(&[1.0, 0.0])),
        )
        .unwrap();
        let [mj, lr, le, g] = p.scatter_full(&[7.0, 8.0]).unwrap();
        assert_eq!(mj, Matrix::zeros(2, 2));
        assert_eq!(lr, Matrix::diag(&[0.0, 7.0]));
        assert_eq!(le, Matrix::diag(&[8.0, 0.0]));
        assert_eq!(g, Matrix::zeros(2, 1));
    }

    #[test]
    fn document_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = PhDaeParams::unstructured(Matrix::column(&[1.0, 0.0, 0.0]));
        p.randomize(&mut rng);
        let doc = ModelDocument::from_params(&p);
        let text = serde_json::to_string_pretty(&doc).unwrap();
        let back: ModelDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.model(), p.assemble());
    }

    proptest! {
        #[test]
        fn assembled_structure_holds(seed in any::<u64>(), n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = PhDaeParams::unstructured(Matrix::<f64>::zeros(n, 1));
            p.randomize(&mut rng);
            let theta: Vec<f64> = p.flatten().iter().map(|_| rng.random_range(-3.0..3.0)).collect();
            let model = p.unflatten(&theta).unwrap().assemble();
            prop_assert_eq!(model.j.clone(), model.j.transpose().scale(-1.0));
            prop_assert_eq!(model.r.clone(), model.r.transpose());
            prop_assert!(symmetric_eigenvalues(&model.r).unwrap()[0] >= -1e-10);
            prop_assert!(symmetric_eigenvalues(&model.e).unwrap()[0] >= -1e-10);
            for _ in 0..50 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
                prop_assert!(model.hamiltonian(&x).unwrap() >= -1e-12);
            }
        }
    }
}
