//! Mean-variance portfolio algebra and CAPM beta decomposition.
//!
//! Linear systems are solved through a Cholesky factorization of the
//! covariance matrix, which doubles as the positive-definiteness check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;

/// Expected returns and covariance of a set of risky assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetUniverse<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<Vec<T>>,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio<T> {
    pub weights: Vec<T>,
    pub mu_p: T,
    pub sigma_p: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapmDecomposition<T> {
    pub beta: T,
    pub systematic_var: T,
    pub idiosyncratic_var: T,
    pub market_var: T,
    pub total_var: T,
}

/// Lower-triangular Cholesky factor, row-major.
struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors `a - shift * I`; `None` unless the shifted matrix is positive definite.
    fn factor(a: &[Vec<T>], shift: T) -> Option<Self> {
        let n = a.len();
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i][j];
                if i == j {
                    s = s - shift;
                }
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > T::zero()) {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Scalars of the two-constraint frontier problem.
struct Frontier<T> {
    inv_ones: Vec<T>,
    inv_mu: Vec<T>,
    a: T,
    b: T,
    c: T,
}

impl<T: Scalar> AssetUniverse<T> {
    pub fn new(mu: Vec<T>, sigma: Vec<Vec<T>>, labels: Vec<String>) -> Result<Self> {
        let u = Self { mu, sigma, labels };
        u.validate()?;
        Ok(u)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.factor().map(|_| ())
    }

    fn factor(&self) -> Result<Cholesky<T>> {
        let n = self.mu.len();
        if n == 0 {
            return Err(Error::invalid("asset universe is empty"));
        }
        if self.sigma.len() != n || self.sigma.iter().any(|row| row.len() != n) {
            return Err(Error::invalid(format!(
                "covariance must be {n}x{n} to match the return vector"
            )));
        }
        if !self.labels.is_empty() && self.labels.len() != n {
            return Err(Error::invalid(format!("expected {n} labels, got {}", self.labels.len())));
        }
        let tol = T::lit(1e-12);
        for i in 0..n {
            for j in (i + 1)..n {
                let (x, y) = (self.sigma[i][j], self.sigma[j][i]);
                if (x - y).abs() > tol * T::one().max(x.abs()) {
                    return Err(Error::invalid(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let trace: T = (0..n).map(|i| self.sigma[i][i]).sum();
        let shift = T::lit(1e-10) * trace / T::from_usize_lossy(n);
        if !(shift >= T::zero()) || Cholesky::factor(&self.sigma, shift).is_none() {
            return Err(Error::invalid("covariance is not positive definite"));
        }
        Cholesky::factor(&self.sigma, T::zero())
            .ok_or_else(|| Error::invalid("covariance is not positive definite"))
    }

    fn frontier(&self) -> Result<Frontier<T>> {
        let chol = self.factor()?;
        let ones = vec![T::one(); self.len()];
        let inv_ones = chol.solve(&ones);
        let inv_mu = chol.solve(&self.mu);
        Ok(Frontier {
            a: inv_ones.iter().copied().sum(),
            b: inv_mu.iter().copied().sum(),
            c: dot(&self.mu, &inv_mu),
            inv_ones,
            inv_mu,
        })
    }

    pub fn portfolio(&self, weights: Vec<T>) -> Result<Portfolio<T>> {
        if weights.len() != self.len() {
            return Err(Error::invalid("weight vector length differs from universe size"));
        }
        let mu_p = dot(&weights, &self.mu);
        let var: T = (0..self.len())
            .map(|i| weights[i] * dot(&self.sigma[i], &weights))
            .sum();
        Ok(Portfolio {
            sigma_p: var.max(T::zero()).sqrt(),
            mu_p,
            weights,
        })
    }

    pub fn from_json(text: &str) -> Result<Self>
    where
        T: serde::de::DeserializeOwned,
    {
        let u: Self = serde_json::from_str(text)?;
        u.validate()?;
        Ok(u)
    }
}

impl<T: Scalar> Portfolio<T> {
    pub fn sharpe(&self, r_f: T) -> T {
        (self.mu_p - r_f) / self.sigma_p
    }
}

fn degenerate_tol<T: Scalar>() -> T {
    T::epsilon() * T::lit(1e4)
}

/// Minimum-variance fully invested portfolio with expected return `mu_target`.
/// Short positions are allowed.
pub fn min_variance_portfolio<T: Scalar>(u: &AssetUniverse<T>, mu_target: T) -> Result<Portfolio<T>> {
    let f = u.frontier()?;
    let d = f.a * f.c - f.b * f.b;
    if d <= degenerate_tol::<T>() * (f.a * f.c).abs() {
        // every asset has the same expected return
        let common = f.b / f.a;
        if (mu_target - common).abs() > degenerate_tol::<T>() * T::one().max(common.abs()) {
            return Err(Error::numerical(format!(
                "singular frontier: all assets return {common}, target {mu_target} unattainable"
            )));
        }
        let w = f.inv_ones.iter().map(|&x| x / f.a).collect();
        return u.portfolio(w);
    }
    let lambda = (f.a * mu_target - f.b) / d;
    let gamma = (f.c - f.b * mu_target) / d;
    let w = f
        .inv_mu
        .iter()
        .zip(&f.inv_ones)
        .map(|(&m, &o)| lambda * m + gamma * o)
        .collect();
    u.portfolio(w)
}

/// Minimum-variance portfolios along a list of target returns.
pub fn efficient_frontier<T: Scalar>(u: &AssetUniverse<T>, targets: &[T]) -> Result<Vec<Portfolio<T>>> {
    targets.iter().map(|&t| min_variance_portfolio(u, t)).collect()
}

/// Fully invested portfolio of maximum Sharpe ratio against `r_f`.
pub fn tangency_portfolio<T: Scalar>(u: &AssetUniverse<T>, r_f: T) -> Result<Portfolio<T>> {
    let f = u.frontier()?;
    let z: Vec<T> = f
        .inv_mu
        .iter()
        .zip(&f.inv_ones)
        .map(|(&m, &o)| m - r_f * o)
        .collect();
    let total = f.b - f.a * r_f;
    let reference = f
        .inv_mu
        .iter()
        .zip(&f.inv_ones)
        .fold(T::min_positive_value(), |acc, (&m, &o)| acc.max(m.abs()).max((r_f * o).abs()));
    if total.abs() <= degenerate_tol::<T>() * reference {
        return Err(Error::numerical("no tangency portfolio: excess returns sum to zero"));
    }
    u.portfolio(z.into_iter().map(|x| x / total).collect())
}

/// Expected return on the capital market line at volatility `sigma_p`.
pub fn cml<T: Scalar>(r_f: T, tangency: &Portfolio<T>, sigma_p: T) -> Result<T> {
    if !(tangency.sigma_p > T::zero()) {
        return Err(Error::numerical("tangency portfolio has zero volatility"));
    }
    if sigma_p < T::zero() {
        return Err(Error::invalid("sigma_p must be nonnegative"));
    }
    Ok(r_f + (tangency.mu_p - r_f) / tangency.sigma_p * sigma_p)
}

/// Population-moment beta of `r_i` on `r_m` and the induced split of
/// `Var(r_i)` into systematic and idiosyncratic parts.
pub fn beta<T: Scalar>(r_i: &[T], r_m: &[T]) -> Result<CapmDecomposition<T>> {
    if r_i.len() != r_m.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} asset returns vs {} market returns",
            r_i.len(),
            r_m.len()
        )));
    }
    if r_i.len() < 2 {
        return Err(Error::invalid("beta needs at least two observations"));
    }
    let market_var = stats::pop_variance(r_m).expect("nonempty");
    if !(market_var > T::zero()) {
        return Err(Error::numerical("market return variance is zero"));
    }
    let total_var = stats::pop_variance(r_i).expect("nonempty");
    let beta = stats::pop_covariance(r_i, r_m).expect("equal lengths") / market_var;
    let systematic_var = beta * beta * market_var;
    let (mi, mm) = (stats::mean(r_i).expect("nonempty"), stats::mean(r_m).expect("nonempty"));
    let residuals: Vec<T> = r_i
        .iter()
        .zip(r_m)
        .map(|(&a, &m)| (a - mi) - beta * (m - mm))
        .collect();
    Ok(CapmDecomposition {
        beta,
        systematic_var,
        idiosyncratic_var: stats::pop_variance(&residuals).expect("nonempty"),
        market_var,
        total_var,
    })
}
