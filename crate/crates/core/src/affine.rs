//! Affine expressions `terms · p + offset` of a decision vector `p`, used to
//! substitute tube parameterizations into the transition constraints.

use nalgebra::DVector;

/// Each output component is a sparse row over decision variables plus a constant.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub terms: Vec<Vec<(usize, f64)>>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    /// Identity on the variable block `start..start + len`.
    pub fn variables(start: usize, len: usize) -> Self {
        Self { terms: (0..len).map(|k| vec![(start + k, 1.0)]).collect(), offset: DVector::zeros(len) }
    }

    pub fn constant(value: DVector<f64>) -> Self {
        Self { terms: vec![Vec::new(); value.len()], offset: value }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn eval(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |r, _| self.offset[r] + self.terms[r].iter().map(|&(c, v)| v * p[c]).sum::<f64>())
    }

    /// `self + s·other`.
    pub fn add_scaled(mut self, other: &AffineMap, s: f64) -> Self {
        assert_eq!(self.dim(), other.dim());
        for (r, row) in other.terms.iter().enumerate() {
            self.terms[r].extend(row.iter().map(|&(c, v)| (c, s * v)));
        }
        self.offset += &other.offset * s;
        self
    }

    /// `s · self`.
    pub fn scaled(mut self, s: f64) -> Self {
        for row in &mut self.terms {
            for e in row.iter_mut() {
                e.1 *= s;
            }
        }
        self.offset *= s;
        self
    }
}

/// Collects `Σ coeff · map` contributions into one linear row plus constant.
#[derive(Default)]
pub(crate) struct RowSum {
    pub row: Vec<(usize, f64)>,
    pub constant: f64,
}

impl RowSum {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    /// Adds `Σ_k coeffs[k] · map[k]`.
    pub(crate) fn add_map<'a, I>(&mut self, coeffs: I, map: &AffineMap)
    where
        I: IntoIterator<Item = &'a f64>,
    {
        for (k, &c) in coeffs.into_iter().enumerate() {
            if c != 0.0 {
                self.add_component(map, k, c);
            }
        }
    }

    pub(crate) fn add_component(&mut self, map: &AffineMap, k: usize, c: f64) {
        self.row.extend(map.terms[k].iter().map(|&(col, v)| (col, c * v)));
        self.constant += c * map.offset[k];
    }

    pub(crate) fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }
}
