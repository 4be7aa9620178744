//! Dense derivative tensors and the oracle interface that produces them.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("derivative of order {requested} requested, oracle provides up to {available}")]
    OrderUnavailable { requested: usize, available: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no oracle supplied for {0}")]
    Missing(&'static str),
}

/// `∇^k h(x)` for `h: R^d -> R^m`, stored row-major as `m × d^k`.
///
/// Entry `(i, j1, .., jk)` is `∂^k h_i / ∂x_{j1} .. ∂x_{jk}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    out_dim: usize,
    in_dim: usize,
    order: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(out_dim: usize, in_dim: usize, order: usize, data: Vec<f64>) -> Result<Self, OracleError> {
        let expected = out_dim * in_dim.pow(order as u32);
        if data.len() != expected {
            return Err(OracleError::Dimension {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            out_dim,
            in_dim,
            order,
            data,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize, order: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            order,
            data: vec![0.0; out_dim * in_dim.pow(order as u32)],
        }
    }

    /// Order-`k` tensor of a scalar function of one variable.
    pub fn scalar(order: usize, value: f64) -> Self {
        Self {
            out_dim: 1,
            in_dim: 1,
            order,
            data: vec![value],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, out: usize, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.order);
        let mut flat = out;
        for &j in idx {
            flat = flat * self.in_dim + j;
        }
        self.data[flat]
    }

    /// Max-norm of all entries.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Full contraction `∇^k h(v1, .., vk)`, returning a vector of length `out_dim`.
    pub fn apply(&self, args: &[&[f64]]) -> Result<Vec<f64>, OracleError> {
        if args.len() != self.order {
            return Err(OracleError::Dimension {
                expected: self.order,
                got: args.len(),
            });
        }
        if self.in_dim == 1 {
            let prod: f64 = args.iter().map(|a| a[0]).product();
            return Ok(self.data.iter().map(|v| v * prod).collect());
        }
        let mut current = self.data.clone();
        let d = self.in_dim;
        for arg in args.iter().rev() {
            if arg.len() != d {
                return Err(OracleError::Dimension {
                    expected: d,
                    got: arg.len(),
                });
            }
            current = current
                .chunks_exact(d)
                .map(|row| row.iter().zip(arg.iter()).map(|(a, b)| a * b).sum())
                .collect();
        }
        Ok(current)
    }
}

/// Evaluator of `∇^k h(x)` as dense tensors.
pub trait DerivativeOracle: Send + Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Highest order the oracle can produce; `None` means unbounded.
    fn max_order(&self) -> Option<usize> {
        None
    }

    fn derivative(&self, order: usize, x: &[f64]) -> Result<Tensor, OracleError>;
}

pub(crate) fn check_order(oracle: &dyn DerivativeOracle, order: usize) -> Result<(), OracleError> {
    match oracle.max_order() {
        Some(available) if order > available => Err(OracleError::OrderUnavailable {
            requested: order,
            available,
        }),
        _ => Ok(()),
    }
}

/// `h / μ`, the nonlinearity of the time-rescaled problem.
pub struct ScaledOracle {
    inner: Arc<dyn DerivativeOracle>,
    factor: f64,
}

impl ScaledOracle {
    pub fn new(inner: Arc<dyn DerivativeOracle>, mu: f64) -> Self {
        Self {
            inner,
            factor: 1.0 / mu,
        }
    }
}

impl DerivativeOracle for ScaledOracle {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn max_order(&self) -> Option<usize> {
        self.inner.max_order()
    }

    fn derivative(&self, order: usize, x: &[f64]) -> Result<Tensor, OracleError> {
        let mut t = self.inner.derivative(order, x)?;
        t.data.iter_mut().for_each(|v| *v *= self.factor);
        Ok(t)
    }
}

/// Orders precomputed eagerly by [`AnchoredDerivatives`].
pub const ANCHOR_CACHE_ORDERS: usize = 16;

/// Derivatives of one oracle at a fixed point, cached for low orders.
///
/// Every boundary mark of a tree is evaluated at the same `x0`, so the
/// Monte Carlo loop only ever asks for tensors at this point.
pub struct AnchoredDerivatives<'a> {
    oracle: &'a dyn DerivativeOracle,
    x0: Vec<f64>,
    cache: Vec<Tensor>,
}

impl<'a> AnchoredDerivatives<'a> {
    pub fn new(oracle: &'a dyn DerivativeOracle, x0: &[f64]) -> Result<Self, OracleError> {
        if x0.len() != oracle.input_dim() {
            return Err(OracleError::Dimension {
                expected: oracle.input_dim(),
                got: x0.len(),
            });
        }
        let top = oracle
            .max_order()
            .map_or(ANCHOR_CACHE_ORDERS, |m| m.min(ANCHOR_CACHE_ORDERS));
        let cache = (0..=top)
            .map(|k| oracle.derivative(k, x0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            oracle,
            x0: x0.to_vec(),
            cache,
        })
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn output_dim(&self) -> usize {
        self.oracle.output_dim()
    }

    pub fn oracle(&self) -> &'a dyn DerivativeOracle {
        self.oracle
    }

    /// Applies `∇^k h(x0)` to `args`, with `k = args.len()`.
    pub fn apply(&self, args: &[&[f64]]) -> Result<Vec<f64>, OracleError> {
        let order = args.len();
        match self.cache.get(order) {
            Some(t) => t.apply(args),
            None => {
                check_order(self.oracle, order)?;
                self.oracle.derivative(order, &self.x0)?.apply(args)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_contracts_every_input_index() {
        // h(x) = (x0 x1, x0^2) has second derivative with nonzero mixed entries
        let data = vec![0.0, 1.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0];
        let t = Tensor::new(2, 2, 2, data).unwrap();
        let v = [1.0, 2.0];
        let w = [3.0, -1.0];
        let out = t.apply(&[&v, &w]).unwrap();
        // component 0: v0 w1 + v1 w0 = -1 + 6, component 1: 2 v0 w0 = 6
        assert_eq!(out, vec![5.0, 6.0]);
        assert_eq!(t.get(0, &[0, 1]), 1.0);
    }

    #[test]
    fn order_zero_apply_is_the_value() {
        let t = Tensor::new(2, 2, 0, vec![3.0, 4.0]).unwrap();
        assert_eq!(t.apply(&[]).unwrap(), vec![3.0, 4.0]);
        assert!(t.apply(&[&[1.0, 1.0]]).is_err());
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert_eq!(Tensor::zeros(3, 2, 3).data().len(), 24);
    }
}
