//! Linear initial-state encoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Affine map from a window of past data to the state at the window end:
/// `x̂_τ = W z + b` with `z = [u_{τ−n} … u_{τ−1}, y_{τ−n} … y_τ]`.
///
/// The output window holds one sample more than the input window. Each
/// window channel is divided by its entry in `input_scale` or
/// `output_scale` (empty means unscaled), so the weights act on signals of
/// comparable size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEncoder<T: Scalar> {
    pub n_lag: usize,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    #[serde(default)]
    pub input_scale: Vec<T>,
    #[serde(default)]
    pub output_scale: Vec<T>,
}

impl<T: Scalar> LinearEncoder<T> {
    pub fn zeros(n_states: usize, n_lag: usize, n_inputs: usize, n_outputs: usize) -> Self {
        let width = Self::window_width(n_lag, n_inputs, n_outputs);
        Self {
            n_lag,
            n_inputs,
            n_outputs,
            weight: Matrix::zeros(n_states, width),
            bias: vec![T::zero(); n_states],
            input_scale: Vec::new(),
            output_scale: Vec::new(),
        }
    }

    /// Normal weights with std `scale / sqrt(width)`, zero bias.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_lag: usize,
        n_inputs: usize,
        n_outputs: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut enc = Self::zeros(n_states, n_lag, n_inputs, n_outputs);
        let std = scale / (enc.weight.cols().max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in enc.weight.as_mut_slice() {
            *w = T::lit(normal.sample(rng));
        }
        enc
    }

    /// Sets per-channel window scales, typically the signal standard
    /// deviations of the training data. Non-positive entries become 1.
    pub fn with_scales(mut self, input_scale: &[T], output_scale: &[T]) -> Result<Self> {
        if input_scale.len() != self.n_inputs || output_scale.len() != self.n_outputs {
            return Err(Error::dims("one scale per input and output channel"));
        }
        let fix = |v: &[T]| v.iter().map(|&s| if s > T::zero() && s.is_finite() { s } else { T::one() }).collect();
        self.input_scale = fix(input_scale);
        self.output_scale = fix(output_scale);
        Ok(self)
    }

    pub fn window_width(n_lag: usize, n_inputs: usize, n_outputs: usize) -> usize {
        n_lag * (n_inputs + n_outputs) + n_outputs
    }

    pub fn n_states(&self) -> usize {
        self.weight.rows()
    }

    pub fn n_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    /// η: weights row-major, then bias.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = self.weight.as_slice().to_vec();
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn set_params(&mut self, eta: &[T]) -> Result<()> {
        if eta.len() != self.n_params() {
            return Err(Error::dims(format!(
                "encoder expects {} parameters, got {}",
                self.n_params(),
                eta.len()
            )));
        }
        let nw = self.weight.rows() * self.weight.cols();
        self.weight.as_mut_slice().copy_from_slice(&eta[..nw]);
        self.bias.copy_from_slice(&eta[nw..]);
        Ok(())
    }

    pub fn with_params(&self, eta: &[T]) -> Result<Self> {
        let mut e = self.clone();
        e.set_params(eta)?;
        Ok(e)
    }

    /// Stacks the window into `z`.
    pub fn window<U: AsRef<[T]>, Y: AsRef<[T]>>(
        &self,
        past_inputs: &[U],
        past_outputs: &[Y],
    ) -> Result<Vec<T>> {
        if past_inputs.len() != self.n_lag || past_outputs.len() != self.n_lag + 1 {
            return Err(Error::dims(format!(
                "encoder window needs {} inputs and {} outputs, got {} and {}",
                self.n_lag,
                self.n_lag + 1,
                past_inputs.len(),
                past_outputs.len()
            )));
        }
        let mut z = Vec::with_capacity(self.weight.cols());
        for u in past_inputs {
            let u = u.as_ref();
            if u.len() != self.n_inputs {
                return Err(Error::dims("encoder input sample width"));
            }
            if self.input_scale.is_empty() {
                z.extend_from_slice(u);
            } else {
                z.extend(u.iter().zip(&self.input_scale).map(|(&v, &s)| v / s));
            }
        }
        for y in past_outputs {
            let y = y.as_ref();
            if y.len() != self.n_outputs {
                return Err(Error::dims("encoder output sample width"));
            }
            if self.output_scale.is_empty() {
                z.extend_from_slice(y);
            } else {
                z.extend(y.iter().zip(&self.output_scale).map(|(&v, &s)| v / s));
            }
        }
        Ok(z)
    }

    pub fn encode<U: AsRef<[T]>, Y: AsRef<[T]>>(
        &self,
        past_inputs: &[U],
        past_outputs: &[Y],
    ) -> Result<Vec<T>> {
        let z = self.window(past_inputs, past_outputs)?;
        Ok(self.apply(&z))
    }

    pub(crate) fn apply(&self, z: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.n_states()];
        self.weight.matvec_into(z, &mut x);
        for (xi, &b) in x.iter_mut().zip(&self.bias) {
            *xi = *xi + b;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_returns_bias() {
        let mut enc = LinearEncoder::<f64>::zeros(2, 2, 1, 1);
        enc.bias = vec![0.5, -1.0];
        let x = enc
            .encode(&[[3.0], [4.0]], &[[1.0], [2.0], [5.0]])
            .unwrap();
        assert_eq!(x, vec![0.5, -1.0]);
        enc.weight = Matrix::from_vec(2, 5, (0..10).map(f64::from).collect()).unwrap();
        let x = enc.encode(&[[0.0], [0.0]], &[[0.0], [0.0], [0.0]]).unwrap();
        assert_eq!(x, vec![0.5, -1.0]);
    }

    #[test]
    fn projection_on_last_output() {
        let mut enc = LinearEncoder::<f64>::zeros(3, 2, 1, 1);
        // z = [u0, u1, y0, y1, y2]; pick y2 into every state.
        for i in 0..3 {
            enc.weight[(i, 4)] = 1.0;
        }
        let x = enc.encode(&[[9.0], [8.0]], &[[1.0], [2.0], [7.0]]).unwrap();
        assert_eq!(x, vec![7.0; 3]);
    }

    #[test]
    fn window_shape_checked() {
        let enc = LinearEncoder::<f64>::zeros(3, 2, 1, 1);
        assert!(enc.encode(&[[1.0]], &[[1.0], [2.0], [3.0]]).is_err());
        assert!(enc.encode(&[[1.0], [1.0]], &[[1.0], [2.0]]).is_err());
        assert!(enc.encode(&[[1.0, 2.0], [1.0, 2.0]], &[[1.0], [2.0], [3.0]]).is_err());
    }

    #[test]
    fn scales_divide_window_channels() {
        let enc = LinearEncoder::<f64>::zeros(1, 1, 1, 1)
            .with_scales(&[2.0], &[0.0])
            .unwrap();
        let z = enc.window(&[[4.0]], &[[3.0], [5.0]]).unwrap();
        assert_eq!(z, vec![2.0, 3.0, 5.0]);
        assert!(LinearEncoder::<f64>::zeros(1, 1, 1, 1).with_scales(&[1.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let enc = LinearEncoder::<f64>::zeros(2, 3, 1, 2);
        assert_eq!(enc.weight.cols(), 3 * 3 + 2);
        let eta: Vec<f64> = (0..enc.n_params()).map(|i| i as f64 * 0.5).collect();
        let e2 = enc.with_params(&eta).unwrap();
        assert_eq!(e2.flatten(), eta);
        assert!(enc.with_params(&eta[1..]).is_err());
    }
}
