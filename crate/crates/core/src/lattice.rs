//! Tensor-product evaluation lattices in `(t, x_1, .., x_d)`.

use crate::field::{linspace, Axis, AxisRole, FieldError, SampledField};
use serde::{Deserialize, Serialize};

/// Nodes of a uniform axis, as given in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl AxisSpec {
    pub fn nodes(&self) -> Vec<f64> {
        linspace(self.lo, self.hi, self.n)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n.max(2) - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    strides: Vec<usize>,
}

impl Lattice {
    pub fn new(t: Vec<f64>, x: Vec<Vec<f64>>) -> Self {
        let mut shape = vec![t.len()];
        shape.extend(x.iter().map(|a| a.len()));
        let mut strides = vec![1usize; shape.len()];
        for j in (0..shape.len() - 1).rev() {
            strides[j] = strides[j + 1] * shape[j + 1];
        }
        Self { t, x, strides }
    }

    /// Uniform time nodes on `[t_a, t_b]` with spacing at most `dt`.
    pub fn uniform_in_time(t_a: f64, t_b: f64, dt: f64, x: Vec<Vec<f64>>) -> Self {
        let n = (((t_b - t_a) / dt - 1e-9).ceil() as usize).max(1) + 1;
        Self::new(linspace(t_a, t_b, n), x)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.t.len()];
        s.extend(self.x.iter().map(|a| a.len()));
        s
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.t.len() * self.space_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial nodes per time slice.
    pub fn space_len(&self) -> usize {
        self.x.iter().map(|a| a.len()).product()
    }

    /// `(t index, multi-index of x)` of node `flat`.
    pub fn index(&self, flat: usize) -> (usize, Vec<usize>) {
        let mut rem = flat;
        let kt = rem / self.strides[0];
        rem %= self.strides[0];
        let mut ix = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            ix.push(rem / self.strides[j + 1]);
            rem %= self.strides[j + 1];
        }
        (kt, ix)
    }

    pub fn flat(&self, kt: usize, ix: &[usize]) -> usize {
        kt * self.strides[0]
            + ix
                .iter()
                .enumerate()
                .map(|(j, i)| i * self.strides[j + 1])
                .sum::<usize>()
    }

    /// Coordinates of node `flat`.
    pub fn coords(&self, flat: usize) -> (f64, Vec<f64>) {
        let (kt, ix) = self.index(flat);
        (
            self.t[kt],
            ix.iter().enumerate().map(|(j, &i)| self.x[j][i]).collect(),
        )
    }

    pub fn axes(&self) -> Vec<Axis> {
        let mut axes = vec![Axis::new(AxisRole::Time, self.t.clone())];
        for (k, a) in self.x.iter().enumerate() {
            axes.push(Axis::new(AxisRole::Space(k), a.clone()));
        }
        axes
    }

    pub fn space_axes(&self) -> Vec<Axis> {
        self.x
            .iter()
            .enumerate()
            .map(|(k, a)| Axis::new(AxisRole::Space(k), a.clone()))
            .collect()
    }

    pub fn field(&self, names: Vec<String>, values: Vec<Vec<f64>>) -> Result<SampledField, FieldError> {
        SampledField::with_names(self.axes(), names, values)
    }

    /// Largest spatial spacing.
    pub fn max_spacing(&self) -> f64 {
        self.x
            .iter()
            .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let l = Lattice::new(vec![0.0, 0.5, 1.0], vec![vec![0.0, 1.0], vec![0.0, 0.5, 1.0]]);
        assert_eq!(l.len(), 18);
        for f in 0..l.len() {
            let (kt, ix) = l.index(f);
            assert_eq!(l.flat(kt, &ix), f);
        }
        assert_eq!(l.coords(17), (1.0, vec![1.0, 1.0]));
        let u = Lattice::uniform_in_time(0.0, 0.3, 0.1, vec![vec![0.0, 1.0]]);
        assert_eq!(u.t.len(), 4);
    }
}
