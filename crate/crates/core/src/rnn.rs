//! Random neural network: state, product-form stationary distribution and the
//! fixed-point solver for neuron excitation probabilities.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default max-norm tolerance of the fixed-point solver.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration cap of the fixed-point solver.
pub const DEFAULT_MAX_ITER: usize = 10_000;

const ROW_SUM_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RnnError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },
    #[error("degenerate distribution: q[{0}] = 1")]
    DegenerateDistribution(usize),
    #[error("degenerate row {0}: all outgoing weights are zero")]
    DegenerateRow(usize),
}

/// Dense square matrix stored row-major. Serialized as a list of rows.
#[derive(Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Every off-diagonal entry set to `value`, diagonal zero.
    pub fn off_diagonal(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[(i, j)] = value;
                }
            }
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, RnnError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(RnnError::InvalidDimension(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl Serialize for SquareMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.rows())
    }
}

impl<'de> Deserialize<'de> for SquareMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        SquareMatrix::from_rows(rows).map_err(D::Error::custom)
    }
}

/// How firing rates are set when a network is created.
#[derive(Debug, Clone, PartialEq)]
pub enum RatePolicy {
    /// r(i) is the total outgoing weight of neuron i.
    SumOfWeights,
    Explicit(Vec<f64>),
}

/// Result of a successful fixed-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub q: Vec<f64>,
    pub iterations: usize,
    /// Max-norm change of the final iteration.
    pub residual: f64,
}

/// The neural critic. One neuron per candidate path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RnnStateRepr")]
pub struct RnnState {
    n: usize,
    w_plus: SquareMatrix,
    w_minus: SquareMatrix,
    r: Vec<f64>,
    lambda_plus_ext: Vec<f64>,
    lambda_minus_ext: Vec<f64>,
    q: Vec<f64>,
}

#[derive(Deserialize)]
struct RnnStateRepr {
    n: usize,
    w_plus: SquareMatrix,
    w_minus: SquareMatrix,
    r: Vec<f64>,
    lambda_plus_ext: Vec<f64>,
    lambda_minus_ext: Vec<f64>,
    q: Vec<f64>,
}

impl TryFrom<RnnStateRepr> for RnnState {
    type Error = RnnError;

    fn try_from(repr: RnnStateRepr) -> Result<Self, RnnError> {
        let state = RnnState {
            n: repr.n,
            w_plus: repr.w_plus,
            w_minus: repr.w_minus,
            r: repr.r,
            lambda_plus_ext: repr.lambda_plus_ext,
            lambda_minus_ext: repr.lambda_minus_ext,
            q: repr.q,
        };
        state.validate()?;
        Ok(state)
    }
}

impl RnnState {
    /// Uniform off-diagonal weights `init_weight` in both matrices, Λ = 1,
    /// λ = 0 and q = 0.5 everywhere.
    pub fn new(n: usize, init_weight: f64, policy: RatePolicy) -> Result<Self, RnnError> {
        if n < 2 {
            return Err(RnnError::InvalidDimension(format!(
                "a network needs at least 2 neurons, got {n}"
            )));
        }
        if !(init_weight > 0.0 && init_weight.is_finite()) {
            return Err(RnnError::InvalidParameter(format!(
                "init_weight must be positive, got {init_weight}"
            )));
        }
        let w_plus = SquareMatrix::off_diagonal(n, init_weight);
        let w_minus = SquareMatrix::off_diagonal(n, init_weight);
        let r = match policy {
            RatePolicy::SumOfWeights => (0..n)
                .map(|i| {
                    w_plus.row(i).iter().sum::<f64>() + w_minus.row(i).iter().sum::<f64>()
                })
                .collect(),
            RatePolicy::Explicit(r) => r,
        };
        let state = RnnState {
            n,
            w_plus,
            w_minus,
            r,
            lambda_plus_ext: vec![1.0; n],
            lambda_minus_ext: vec![0.0; n],
            q: vec![0.5; n],
        };
        state.validate()?;
        Ok(state)
    }

    /// Builds a state from explicit parameters. q starts at 0.5.
    pub fn from_parts(
        w_plus: SquareMatrix,
        w_minus: SquareMatrix,
        r: Vec<f64>,
        lambda_plus_ext: Vec<f64>,
        lambda_minus_ext: Vec<f64>,
    ) -> Result<Self, RnnError> {
        let n = w_plus.n();
        let state = RnnState {
            n,
            w_plus,
            w_minus,
            r,
            lambda_plus_ext,
            lambda_minus_ext,
            q: vec![0.5; n],
        };
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<(), RnnError> {
        let n = self.n;
        if n == 0 {
            return Err(RnnError::InvalidDimension("empty network".into()));
        }
        if self.w_plus.n() != n || self.w_minus.n() != n {
            return Err(RnnError::InvalidDimension(
                "weight matrices do not match n".into(),
            ));
        }
        for (name, v) in [
            ("r", &self.r),
            ("lambda_plus_ext", &self.lambda_plus_ext),
            ("lambda_minus_ext", &self.lambda_minus_ext),
            ("q", &self.q),
        ] {
            if v.len() != n {
                return Err(RnnError::InvalidDimension(format!(
                    "{name} has length {}, expected {n}",
                    v.len()
                )));
            }
        }
        for i in 0..n {
            if self.w_plus[(i, i)] != 0.0 || self.w_minus[(i, i)] != 0.0 {
                return Err(RnnError::InvalidParameter(format!(
                    "self-loop weight on neuron {i}"
                )));
            }
            if !(self.r[i] > 0.0 && self.r[i].is_finite()) {
                return Err(RnnError::InvalidParameter(format!(
                    "firing rate r[{i}] = {} must be positive",
                    self.r[i]
                )));
            }
            if !(self.lambda_plus_ext[i] >= 0.0 && self.lambda_minus_ext[i] >= 0.0) {
                return Err(RnnError::InvalidParameter(format!(
                    "negative exogenous rate on neuron {i}"
                )));
            }
            if !(0.0..=1.0).contains(&self.q[i]) {
                return Err(RnnError::InvalidParameter(format!(
                    "q[{i}] = {} outside [0, 1]",
                    self.q[i]
                )));
            }
            for j in 0..n {
                let (wp, wm) = (self.w_plus[(i, j)], self.w_minus[(i, j)]);
                if !(wp >= 0.0 && wm >= 0.0 && wp.is_finite() && wm.is_finite()) {
                    return Err(RnnError::InvalidParameter(format!(
                        "weight ({i}, {j}) must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w_plus(&self) -> &SquareMatrix {
        &self.w_plus
    }

    pub fn w_minus(&self) -> &SquareMatrix {
        &self.w_minus
    }

    pub fn rates(&self) -> &[f64] {
        &self.r
    }

    pub fn lambda_plus_ext(&self) -> &[f64] {
        &self.lambda_plus_ext
    }

    pub fn lambda_minus_ext(&self) -> &[f64] {
        &self.lambda_minus_ext
    }

    /// Excitation probabilities from the last successful solve.
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn set_exogenous(
        &mut self,
        lambda_plus_ext: Vec<f64>,
        lambda_minus_ext: Vec<f64>,
    ) -> Result<(), RnnError> {
        let (old_plus, old_minus) = (
            std::mem::replace(&mut self.lambda_plus_ext, lambda_plus_ext),
            std::mem::replace(&mut self.lambda_minus_ext, lambda_minus_ext),
        );
        if let Err(e) = self.validate() {
            self.lambda_plus_ext = old_plus;
            self.lambda_minus_ext = old_minus;
            return Err(e);
        }
        Ok(())
    }

    /// Both weight matrices for in-place updates. Callers must keep entries
    /// non-negative and the diagonal at zero.
    pub(crate) fn weights_mut(&mut self) -> (&mut SquareMatrix, &mut SquareMatrix) {
        (&mut self.w_plus, &mut self.w_minus)
    }

    /// Total outgoing weight r*(i) of neuron i.
    pub fn outgoing_weight(&self, i: usize) -> f64 {
        self.w_plus
            .row(i)
            .iter()
            .zip(self.w_minus.row(i))
            .map(|(p, m)| p + m)
            .sum()
    }

    /// One Jacobi step of the clamped fixed-point map, written into `out`.
    pub fn fixed_point_step(&self, q: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut excit = self.lambda_plus_ext[i];
            let mut inhib = self.lambda_minus_ext[i];
            for (j, &qj) in q.iter().enumerate() {
                excit += qj * self.w_plus[(j, i)];
                inhib += qj * self.w_minus[(j, i)];
            }
            out[i] = (excit / (self.r[i] + inhib)).min(1.0);
        }
    }

    /// Solves q_i = min(1, λ⁺_i / (r_i + λ⁻_i)) by fixed-point iteration from
    /// q = 0.5, stopping when the max-norm change drops below `tol`. The
    /// converged vector is cached in the state.
    pub fn solve_fixed_point(&mut self, tol: f64, max_iter: usize) -> Result<FixedPoint, RnnError> {
        if !(tol > 0.0) {
            return Err(RnnError::InvalidParameter(format!("tol must be positive, got {tol}")));
        }
        let mut current = vec![0.5; self.n];
        let mut next = vec![0.0; self.n];
        let mut residual = f64::INFINITY;
        for iteration in 1..=max_iter {
            self.fixed_point_step(&current, &mut next);
            debug_assert!(next.iter().all(|q| (0.0..=1.0).contains(q)));
            residual = current
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            std::mem::swap(&mut current, &mut next);
            if residual < tol {
                self.q.clone_from(&current);
                return Ok(FixedPoint {
                    q: current,
                    iterations: iteration,
                    residual,
                });
            }
        }
        Err(RnnError::NonConvergence {
            iterations: max_iter,
            residual,
            last_iterate: current,
        })
    }

    /// Product-form probability of the joint state `k` under the cached q.
    pub fn stationary_probability(&self, k: &[u32]) -> Result<f64, RnnError> {
        product_form_probability(&self.q, k)
    }

    /// Rescales every row so that its total outgoing weight equals r(i).
    pub fn renormalize(&mut self) -> Result<(), RnnError> {
        for i in 0..self.n {
            let total = self.outgoing_weight(i);
            if !(total > 0.0) {
                return Err(RnnError::DegenerateRow(i));
            }
            let scale = self.r[i] / total;
            self.w_plus.row_mut(i).iter_mut().for_each(|w| *w *= scale);
            self.w_minus.row_mut(i).iter_mut().for_each(|w| *w *= scale);
        }
        debug_assert!((0..self.n).all(|i| {
            (self.outgoing_weight(i) - self.r[i]).abs() <= ROW_SUM_REL_TOL * self.r[i]
        }));
        Ok(())
    }
}

/// p(k) = Π (1 − q_i) q_i^{k_i}.
pub fn product_form_probability(q: &[f64], k: &[u32]) -> Result<f64, RnnError> {
    if q.len() != k.len() {
        return Err(RnnError::InvalidDimension(format!(
            "state vector has length {}, expected {}",
            k.len(),
            q.len()
        )));
    }
    let mut p = 1.0;
    for (i, (&qi, &ki)) in q.iter().zip(k).enumerate() {
        if qi >= 1.0 {
            return Err(RnnError::DegenerateDistribution(i));
        }
        p *= (1.0 - qi) * qi.powi(ki as i32);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decoupled(lp: Vec<f64>, lm: Vec<f64>, r: Vec<f64>) -> RnnState {
        let n = r.len();
        RnnState::from_parts(SquareMatrix::zeros(n), SquareMatrix::zeros(n), r, lp, lm).unwrap()
    }

    #[test]
    fn new_uses_row_sums_as_rates() {
        let s = RnnState::new(3, 1.0, RatePolicy::SumOfWeights).unwrap();
        assert_eq!(s.rates(), &[4.0, 4.0, 4.0]);
        assert_eq!(s.q(), &[0.5, 0.5, 0.5]);
        assert_eq!(s.lambda_plus_ext(), &[1.0; 3]);
        assert_eq!(s.lambda_minus_ext(), &[0.0; 3]);

        let s = RnnState::new(2, 0.5, RatePolicy::SumOfWeights).unwrap();
        assert_eq!(s.rates(), &[1.0, 1.0]);
        assert_eq!(s.w_plus()[(0, 1)], 0.5);
        assert_eq!(s.w_minus()[(0, 1)], 0.5);
        assert_eq!(s.w_plus()[(0, 0)], 0.0);
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(matches!(
            RnnState::new(1, 1.0, RatePolicy::SumOfWeights),
            Err(RnnError::InvalidDimension(_))
        ));
        assert!(RnnState::new(3, 0.0, RatePolicy::SumOfWeights).is_err());
        assert!(RnnState::new(2, 1.0, RatePolicy::Explicit(vec![1.0, -1.0])).is_err());
        assert!(RnnState::new(2, 1.0, RatePolicy::Explicit(vec![1.0])).is_err());
    }

    #[test]
    fn decoupled_solution_is_closed_form() {
        let mut s = decoupled(vec![2.0, 0.0], vec![0.0, 0.0], vec![4.0, 4.0]);
        let fp = s.solve_fixed_point(DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(fp.q, vec![0.5, 0.0]);
        assert_eq!(s.q(), &[0.5, 0.0]);
    }

    #[test]
    fn saturated_neuron_is_clamped() {
        let mut s = decoupled(vec![5.0, 1.0], vec![0.0, 1.0], vec![4.0, 1.0]);
        let fp = s.solve_fixed_point(DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(fp.q[0], 1.0);
        assert_eq!(fp.q[1], 0.5);
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let mut s = RnnState::new(4, 1.0, RatePolicy::SumOfWeights).unwrap();
        let before = s.q().to_vec();
        match s.solve_fixed_point(1e-15, 2) {
            Err(RnnError::NonConvergence {
                iterations,
                last_iterate,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last_iterate.len(), 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert_eq!(s.q(), &before[..]);
    }

    #[test]
    fn residual_of_one_more_step_is_below_tol() {
        let mut s = RnnState::new(6, 0.7, RatePolicy::SumOfWeights).unwrap();
        s.solve_fixed_point(1e-9, 10_000).unwrap();
        let mut next = vec![0.0; 6];
        s.fixed_point_step(s.q(), &mut next);
        let res = s.q().iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(res < 1e-9);
    }

    #[test]
    fn product_form_values() {
        assert_eq!(product_form_probability(&[0.5], &[3]).unwrap(), 0.0625);
        let q = [0.2, 0.7];
        assert!((product_form_probability(&q, &[0, 0]).unwrap() - 0.8 * 0.3).abs() < 1e-15);
        assert!(matches!(
            product_form_probability(&[0.3, 1.0], &[0, 0]),
            Err(RnnError::DegenerateDistribution(1))
        ));
    }

    #[test]
    fn product_form_sums_to_one_on_large_grid() {
        let q = [0.9, 0.6];
        let mut total = 0.0;
        for a in 0..=200 {
            for b in 0..=200 {
                total += product_form_probability(&q, &[a, b]).unwrap();
            }
        }
        assert!(total >= 0.999, "total = {total}");
    }

    #[test]
    fn renormalize_is_identity_on_normalized_rows() {
        let mut s = RnnState::new(4, 0.3, RatePolicy::SumOfWeights).unwrap();
        let before = s.clone();
        s.renormalize().unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn renormalize_halves_doubled_row() {
        let mut s = RnnState::new(3, 1.0, RatePolicy::SumOfWeights).unwrap();
        {
            let (wp, wm) = s.weights_mut();
            wp.row_mut(0).iter_mut().for_each(|w| *w *= 2.0);
            wm.row_mut(0).iter_mut().for_each(|w| *w *= 2.0);
        }
        assert_eq!(s.outgoing_weight(0), 8.0);
        s.renormalize().unwrap();
        assert_eq!(s.w_plus().row(0), &[0.0, 1.0, 1.0]);
        assert_eq!(s.w_minus().row(0), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn renormalize_rejects_zero_row() {
        let mut s = RnnState::new(3, 1.0, RatePolicy::SumOfWeights).unwrap();
        {
            let (wp, wm) = s.weights_mut();
            wp.row_mut(2).fill(0.0);
            wm.row_mut(2).fill(0.0);
        }
        assert_eq!(s.renormalize(), Err(RnnError::DegenerateRow(2)));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut s = RnnState::new(3, 1.0, RatePolicy::SumOfWeights).unwrap();
        s.solve_fixed_point(DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"w_plus\":[[0.0,1.0,1.0]"));
        let back: RnnState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);

        let bad = json.replace("\"w_plus\":[[0.0", "\"w_plus\":[[2.0");
        assert!(serde_json::from_str::<RnnState>(&bad).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn renormalize_restores_row_sum_and_ratios(
            row in proptest::collection::vec(0.01f64..10.0, 6),
            target in 0.1f64..20.0,
        ) {
            // 4 neurons, row 0 carries the random weights.
            let mut wp = SquareMatrix::off_diagonal(4, 1.0);
            let mut wm = SquareMatrix::off_diagonal(4, 1.0);
            for k in 0..3 {
                wp[(0, k + 1)] = row[k];
                wm[(0, k + 1)] = row[k + 3];
            }
            let mut s = RnnState::from_parts(wp, wm, vec![target, 6.0, 6.0, 6.0], vec![1.0; 4], vec![0.0; 4]).unwrap();
            let before_p = s.w_plus().row(0).to_vec();
            let before_m = s.w_minus().row(0).to_vec();
            s.renormalize().unwrap();
            prop_assert!((s.outgoing_weight(0) - target).abs() <= 1e-12 * target);
            let scale = s.w_plus()[(0, 1)] / before_p[1];
            for k in 1..4 {
                prop_assert!((s.w_plus()[(0, k)] - before_p[k] * scale).abs() <= 1e-12 * s.w_plus()[(0, k)].max(1.0));
                prop_assert!((s.w_minus()[(0, k)] - before_m[k] * scale).abs() <= 1e-12 * s.w_minus()[(0, k)].max(1.0));
            }
        }

        #[test]
        fn solve_is_deterministic_and_bounded(seed_w in proptest::collection::vec(0.0f64..3.0, 25)) {
            let n = 5;
            let mut wp = SquareMatrix::zeros(n);
            let mut wm = SquareMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        wp[(i, j)] = seed_w[i * n + j];
                        wm[(i, j)] = seed_w[(j * n + i) % 25];
                    }
                }
            }
            let r: Vec<f64> = (0..n).map(|i| wp.row(i).iter().sum::<f64>() + wm.row(i).iter().sum::<f64>() + 0.5).collect();
            let mut a = RnnState::from_parts(wp, wm, r, vec![1.0; n], vec![0.2; n]).unwrap();
            let mut b = a.clone();
            let qa = a.solve_fixed_point(1e-9, 10_000).unwrap();
            let qb = b.solve_fixed_point(1e-9, 10_000).unwrap();
            prop_assert!(qa.q.iter().all(|q| (0.0..=1.0).contains(q)));
            prop_assert_eq!(qa.q.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), qb.q.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
