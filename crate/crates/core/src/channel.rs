//! Per-link channel synthesis: one-ring azimuth/elevation covariances,
//! Karhunen-Loeve sampling, deterministic single-path channels,
//! pilot-contaminated covariance estimates, and effective (post-filter)
//! eigenbases.
//!
//! One-ring correlations follow the `E[a a^H]` convention: the azimuth entry
//! `(n1, n2)` is the mean of `exp(-j 2 pi D (n2-n1) sin(phi+alpha) sin(theta))`
//! over the scatter ring, and the vertical response phase is
//! `2 pi D n cos(theta)`, so the elevation integrand uses `cos(theta+alpha)`.
//! Matrices are Hermitian Toeplitz with exact unit diagonal.

use nalgebra::DVector;
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geometry::LinkGeometry;
use crate::linalg::{fast_mul, hermitian_eig, kron, CMat, CVec, EigenBasis, LinalgError};
use crate::num::{cis, cmod, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("quadrature did not converge below {tol:e} within {cap} nodes (last change {last:e})")]
    QuadratureNotConverged { tol: f64, cap: usize, last: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Node-doubling control for the one-ring quadrature.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec<T: Real> {
    pub start_nodes: usize,
    pub max_nodes: usize,
    pub tol: T,
}

impl<T: Real> Default for QuadratureSpec<T> {
    fn default() -> Self {
        // 1e-10 is the convergence target at f64; clamp to what the scalar
        // can actually resolve so an f32 instantiation still terminates.
        QuadratureSpec {
            start_nodes: 33,
            max_nodes: 1025,
            tol: T::lit(1e-10).max(T::default_epsilon() * T::lit(100.0)),
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let nf = T::of_usize(n);
    for i in 0..n.div_ceil(2) {
        // Newton iteration from the Chebyshev-based initial guess.
        let mut x = (T::pi() * (T::of_usize(i) + T::lit(0.75)) / (nf + T::lit(0.5))).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let step = p / d;
            x -= step;
            if step.abs() <= T::default_epsilon() * T::lit(4.0) {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = T::lit(2.0) / ((T::one() - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let mid = n / 2;
        let (_, d) = legendre_with_derivative(n, T::zero());
        nodes[mid] = T::zero();
        weights[mid] = T::lit(2.0) / (d * d);
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n(x)` and its derivative by the three-term
/// recurrence.
fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    if n == 0 {
        return (T::one(), T::zero());
    }
    for k in 2..=n {
        let kf = T::of_usize(k);
        let p2 = ((T::lit(2.0) * kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = T::of_usize(n) * (x * p1 - p0) / (x * x - T::one());
    (p1, d)
}

/// Correlation lags `c(delta) = mean_alpha exp(-j 2 pi spacing delta u(alpha))`
/// for `delta = 0..n-1`, where `alpha` is uniform over `[lo, hi]` and
/// `u(alpha)` is the spatial frequency map of the array axis.
///
/// Gauss-Legendre with node doubling; each node contributes a unit-modulus
/// base phasor whose powers generate all lags, so the diagonal is exactly 1.
fn correlation_lags<T: Real>(
    n: usize,
    spacing_wl: T,
    lo: T,
    hi: T,
    u_of_alpha: impl Fn(T) -> T,
    spec: &QuadratureSpec<T>,
) -> Result<Vec<Complex<T>>, ChannelError> {
    if hi <= lo {
        return Err(ChannelError::InvalidParameter(format!(
            "empty angular range [{}, {}]",
            lo.as_f64(),
            hi.as_f64()
        )));
    }
    let eval = |nodes: usize| -> Vec<Complex<T>> {
        let (xs, ws) = gauss_legendre::<T>(nodes);
        let half_span = (hi - lo) * T::lit(0.5);
        let mid = (hi + lo) * T::lit(0.5);
        let mut lags = vec![Complex::new(T::zero(), T::zero()); n];
        for (x, w) in xs.iter().zip(ws.iter()) {
            let alpha = mid + half_span * *x;
            let u = u_of_alpha(alpha);
            let base = cis(-T::two_pi() * spacing_wl * u);
            // normalized weight: GL weights sum to 2 over [-1, 1]
            let wn = Complex::new(*w * T::lit(0.5), T::zero());
            let mut z = Complex::new(T::one(), T::zero());
            for lag in lags.iter_mut() {
                *lag += wn * z;
                z *= base;
            }
        }
        lags
    };

    let mut nodes = spec.start_nodes.max(3);
    let mut current = eval(nodes);
    loop {
        if nodes >= spec.max_nodes {
            // no finer rule left to compare against
            return Err(ChannelError::QuadratureNotConverged {
                tol: spec.tol.as_f64(),
                cap: spec.max_nodes,
                last: f64::NAN,
            });
        }
        let next_nodes = (2 * nodes - 1).min(spec.max_nodes);
        let next = eval(next_nodes);
        let mut change = T::zero();
        for (a, b) in current.iter().zip(next.iter()) {
            change = change.max(cmod(a - b));
        }
        if change < spec.tol {
            return Ok(next);
        }
        if next_nodes >= spec.max_nodes {
            return Err(ChannelError::QuadratureNotConverged {
                tol: spec.tol.as_f64(),
                cap: spec.max_nodes,
                last: change.as_f64(),
            });
        }
        nodes = next_nodes;
        current = next;
    }
}

/// Hermitian Toeplitz matrix from its first-row lags.
pub fn toeplitz_from_lags<T: Real>(lags: &[Complex<T>]) -> CMat<T> {
    let n = lags.len();
    CMat::<T>::from_fn(n, n, |r, c| {
        if c >= r {
            lags[c - r]
        } else {
            lags[r - c].conj()
        }
    })
}

/// Azimuth one-ring correlation matrix for a horizontal ULA of `n_h`
/// elements: uniform arrival over `phi +- delta_a` at the link's nominal
/// elevation.
pub fn one_ring_az_cov<T: Real>(
    geom: &LinkGeometry<T>,
    delta_a: T,
    n_h: usize,
    spacing_wl: T,
) -> Result<CMat<T>, ChannelError> {
    one_ring_az_cov_with(geom, delta_a, n_h, spacing_wl, &QuadratureSpec::default())
}

pub fn one_ring_az_cov_with<T: Real>(
    geom: &LinkGeometry<T>,
    delta_a: T,
    n_h: usize,
    spacing_wl: T,
    spec: &QuadratureSpec<T>,
) -> Result<CMat<T>, ChannelError> {
    Ok(toeplitz_from_lags(&one_ring_az_lags(
        geom, delta_a, n_h, spacing_wl, spec,
    )?))
}

/// First-row lags of the azimuth one-ring correlation.
pub fn one_ring_az_lags<T: Real>(
    geom: &LinkGeometry<T>,
    delta_a: T,
    n_h: usize,
    spacing_wl: T,
    spec: &QuadratureSpec<T>,
) -> Result<Vec<Complex<T>>, ChannelError> {
    if delta_a <= T::zero() || n_h == 0 {
        return Err(ChannelError::InvalidParameter(
            "delta_a must be positive and n_h >= 1".into(),
        ));
    }
    let phi = geom.phi;
    let sin_theta = geom.theta.sin();
    correlation_lags(
        n_h,
        spacing_wl,
        -delta_a,
        delta_a,
        |alpha| (phi + alpha).sin() * sin_theta,
        spec,
    )
}

/// Elevation one-ring correlation matrix for a vertical ULA of `n_v`
/// elements: uniform arrival over `theta +- delta_e`.
pub fn one_ring_el_cov<T: Real>(
    geom: &LinkGeometry<T>,
    delta_e: T,
    n_v: usize,
    spacing_wl: T,
) -> Result<CMat<T>, ChannelError> {
    one_ring_el_cov_with(geom, delta_e, n_v, spacing_wl, &QuadratureSpec::default())
}

pub fn one_ring_el_cov_with<T: Real>(
    geom: &LinkGeometry<T>,
    delta_e: T,
    n_v: usize,
    spacing_wl: T,
    spec: &QuadratureSpec<T>,
) -> Result<CMat<T>, ChannelError> {
    Ok(toeplitz_from_lags(&one_ring_el_lags(
        geom, delta_e, n_v, spacing_wl, spec,
    )?))
}

/// First-row lags of the elevation one-ring correlation.
pub fn one_ring_el_lags<T: Real>(
    geom: &LinkGeometry<T>,
    delta_e: T,
    n_v: usize,
    spacing_wl: T,
    spec: &QuadratureSpec<T>,
) -> Result<Vec<Complex<T>>, ChannelError> {
    if delta_e <= T::zero() || n_v == 0 {
        return Err(ChannelError::InvalidParameter(
            "delta_e must be positive and n_v >= 1".into(),
        ));
    }
    elevation_band_lags_with(n_v, spacing_wl, geom.theta - delta_e, geom.theta + delta_e, spec)
}

/// Elevation correlation of a uniform angular band `[theta_lo, theta_hi]`,
/// the building block shared by the one-ring elevation matrix, the rank-law
/// checks, and the augmented-dimension interference model.
pub fn elevation_band_cov<T: Real>(
    n_v: usize,
    spacing_wl: T,
    theta_lo: T,
    theta_hi: T,
) -> Result<CMat<T>, ChannelError> {
    elevation_band_cov_with(n_v, spacing_wl, theta_lo, theta_hi, &QuadratureSpec::default())
}

pub fn elevation_band_cov_with<T: Real>(
    n_v: usize,
    spacing_wl: T,
    theta_lo: T,
    theta_hi: T,
    spec: &QuadratureSpec<T>,
) -> Result<CMat<T>, ChannelError> {
    let lags = elevation_band_lags_with(n_v, spacing_wl, theta_lo, theta_hi, spec)?;
    Ok(toeplitz_from_lags(&lags))
}

/// First-row lags of a uniform elevation band correlation.
pub fn elevation_band_lags_with<T: Real>(
    n_v: usize,
    spacing_wl: T,
    theta_lo: T,
    theta_hi: T,
    spec: &QuadratureSpec<T>,
) -> Result<Vec<Complex<T>>, ChannelError> {
    correlation_lags(n_v, spacing_wl, theta_lo, theta_hi, |alpha| alpha.cos(), spec)
}

/// Azimuth and elevation correlation factors of one link.
#[derive(Debug, Clone)]
pub struct AzElCovariance<T: Real> {
    /// `N_H x N_H` azimuth correlation.
    pub r_az: CMat<T>,
    /// `N_V x N_V` elevation correlation.
    pub r_el: CMat<T>,
}

impl<T: Real> AzElCovariance<T> {
    pub fn one_ring(
        geom: &LinkGeometry<T>,
        delta_a: T,
        delta_e: T,
        n_v: usize,
        n_h: usize,
        spacing_wl: T,
    ) -> Result<Self, ChannelError> {
        Ok(AzElCovariance {
            r_az: one_ring_az_cov(geom, delta_a, n_h, spacing_wl)?,
            r_el: one_ring_el_cov(geom, delta_e, n_v, spacing_wl)?,
        })
    }

    pub fn n_h(&self) -> usize {
        self.r_az.nrows()
    }

    pub fn n_v(&self) -> usize {
        self.r_el.nrows()
    }
}

/// Truncated eigen-structure of one link, with the large-scale gain folded
/// in as a scalar.
#[derive(Debug, Clone)]
pub struct ChannelEigen<T: Real> {
    pub az: EigenBasis<T>,
    pub el: EigenBasis<T>,
    /// Linear power gain (path loss) of the link.
    pub gain: T,
}

/// One instantaneous channel: the innovation vector and the synthesized
/// array response.
#[derive(Debug, Clone)]
pub struct ChannelRealization<T: Real> {
    /// White innovation, length `r_A * r_E`.
    pub w: CVec<T>,
    /// Full channel, length `N_V * N_H`, azimuth-major.
    pub h: CVec<T>,
}

impl<T: Real> ChannelEigen<T> {
    /// Eigen-structure of a link covariance with ranks cut at
    /// `value >= eps_rel * value_max` per factor.
    pub fn from_covariance(
        cov: &AzElCovariance<T>,
        gain: T,
        eps_rel: T,
    ) -> Result<Self, ChannelError> {
        let az = hermitian_eig(&cov.r_az)?.truncated(eps_rel);
        let el = hermitian_eig(&cov.r_el)?.truncated(eps_rel);
        Ok(ChannelEigen { az, el, gain })
    }

    pub fn r_az(&self) -> usize {
        self.az.rank()
    }

    pub fn r_el(&self) -> usize {
        self.el.rank()
    }

    /// Deterministic synthesis `h = sqrt(gain) (U^A L_A^1/2 kron U^E L_E^1/2) w`.
    pub fn synthesize(&self, w: &CVec<T>) -> ChannelRealization<T> {
        let fa = self.az.sqrt_factor();
        let fe = self.el.sqrt_factor();
        let mut h = kron_mul_vec(&fa, &fe, w);
        let s = Complex::new(self.gain.sqrt(), T::zero());
        h *= s;
        ChannelRealization { w: w.clone(), h }
    }

    /// Karhunen-Loeve draw: `w ~ CN(0, I)` i.i.d. per entry.
    pub fn kl_sample<R: Rng>(&self, rng: &mut R) -> ChannelRealization<T> {
        let r = self.r_az() * self.r_el();
        let w = standard_complex_vector(r, rng);
        self.synthesize(&w)
    }

    /// Gain-inclusive scaled innovation
    /// `w_bar = sqrt(gain) (L_A^1/2 kron L_E^1/2) w`, the coordinate vector
    /// of `h` in the `(U^A kron U^E)` basis: `h = (U^A kron U^E) w_bar`.
    pub fn scaled_innovation(&self, w: &CVec<T>) -> CVec<T> {
        let ra = self.r_az();
        let re = self.r_el();
        assert_eq!(w.len(), ra * re, "innovation length");
        let root_gain = self.gain.sqrt();
        let mut out = CVec::<T>::zeros(ra * re);
        for a in 0..ra {
            let sa = self.az.values[a].max(T::zero()).sqrt();
            for e in 0..re {
                let se = self.el.values[e].max(T::zero()).sqrt();
                out[a * re + e] = w[a * re + e] * Complex::new(root_gain * sa * se, T::zero());
            }
        }
        out
    }

    /// `U^A kron U^E`, the basis the scaled innovation lives in.
    pub fn kron_basis(&self) -> CMat<T> {
        kron(&self.az.vectors, &self.el.vectors)
    }
}

/// `(A kron B) x` without materializing the Kronecker product, for
/// azimuth-major stacking (`x` index = `a * cols(B) + e`).
pub fn kron_mul_vec<T: Real>(a: &CMat<T>, b: &CMat<T>, x: &CVec<T>) -> CVec<T> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    assert_eq!(x.len(), ca * cb, "kron operand length");
    // X[e, a] = x[a*cb + e]; result Y = B X A^T, y[a*rb + e] = Y[e, a]
    let xm = CMat::<T>::from_fn(cb, ca, |e, col| x[col * cb + e]);
    let y = fast_mul(&fast_mul(b, &xm), &a.transpose());
    let mut out = CVec::<T>::zeros(ra * rb);
    for col in 0..ra {
        for e in 0..rb {
            out[col * rb + e] = y[(e, col)];
        }
    }
    out
}

/// i.i.d. circularly-symmetric complex normal vector, unit variance per
/// entry (real and imaginary parts are `N(0, 1/2)`).
pub fn standard_complex_vector<T: Real, R: Rng>(len: usize, rng: &mut R) -> CVec<T> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    DVector::from_iterator(
        len,
        (0..len).map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex::new(T::lit(re * scale), T::lit(im * scale))
        }),
    )
}

/// Azimuth array response: entry `m = exp(j 2 pi spacing m sin(phi) sin(theta))`.
pub fn steering_az<T: Real>(phi: T, theta: T, n_h: usize, spacing_wl: T) -> CVec<T> {
    let u = phi.sin() * theta.sin();
    CVec::<T>::from_fn(n_h, |m, _| cis(T::two_pi() * spacing_wl * T::of_usize(m) * u))
}

/// Elevation array response: entry `n = exp(j 2 pi spacing n cos(theta))`.
pub fn steering_el<T: Real>(theta: T, n_v: usize, spacing_wl: T) -> CVec<T> {
    let u = theta.cos();
    CVec::<T>::from_fn(n_v, |n, _| cis(T::two_pi() * spacing_wl * T::of_usize(n) * u))
}

/// Deterministic single-path channel
/// `h = rho^1/2 beta a_A(phi, theta) kron a_E(phi, theta)` together with the
/// equivalent rank-1 eigen-structure (`r_A = r_E = 1`, unit-diagonal
/// correlation factors carry eigenvalues `N_H` and `N_V`).
pub fn single_path_channel<T: Real>(
    geom: &LinkGeometry<T>,
    beta: Complex<T>,
    n_v: usize,
    n_h: usize,
    spacing_wl: T,
) -> (ChannelRealization<T>, ChannelEigen<T>) {
    let eigen = single_path_eigen(geom, n_v, n_h, spacing_wl);
    let w = CVec::<T>::from_vec(vec![beta]);
    let real = eigen.synthesize(&w);
    (real, eigen)
}

/// Rank-1 eigen-structure of a single-path link: eigenvectors are the
/// normalized steering vectors, eigenvalues `N_H` / `N_V` keep the
/// correlation factors unit-diagonal.
pub fn single_path_eigen<T: Real>(
    geom: &LinkGeometry<T>,
    n_v: usize,
    n_h: usize,
    spacing_wl: T,
) -> ChannelEigen<T> {
    let a_az = steering_az(geom.phi, geom.theta, n_h, spacing_wl);
    let a_el = steering_el(geom.theta, n_v, spacing_wl);
    let inv_h = Complex::new(T::one() / T::of_usize(n_h).sqrt(), T::zero());
    let inv_v = Complex::new(T::one() / T::of_usize(n_v).sqrt(), T::zero());
    let az = EigenBasis {
        vectors: CMat::<T>::from_fn(n_h, 1, |r, _| a_az[r] * inv_h),
        values: vec![T::of_usize(n_h)],
    };
    let el = EigenBasis {
        vectors: CMat::<T>::from_fn(n_v, 1, |r, _| a_el[r] * inv_v),
        values: vec![T::of_usize(n_v)],
    };
    ChannelEigen {
        az,
        el,
        gain: geom.rho,
    }
}

/// Pilot-contaminated covariance estimate: the serving link plus every
/// co-pilot link, both as the exact full-space sum and as separately summed
/// Kronecker factors (each factor weighted by `sqrt(gain)` so a single link
/// reproduces its full covariance exactly).
#[derive(Debug, Clone)]
pub struct ContaminatedCovariance<T: Real> {
    /// `Sum_b gain_b (R^A_b kron R^E_b)` - ground truth, `N x N`.
    pub full: CMat<T>,
    /// `Sum_b sqrt(gain_b) R^A_b`.
    pub az_factor: CMat<T>,
    /// `Sum_b sqrt(gain_b) R^E_b`.
    pub el_factor: CMat<T>,
}

pub fn contaminated_covariance<T: Real>(
    serving: (&AzElCovariance<T>, T),
    copilot: &[(&AzElCovariance<T>, T)],
) -> Result<ContaminatedCovariance<T>, ChannelError> {
    let (scov, sgain) = serving;
    let (n_h, n_v) = (scov.n_h(), scov.n_v());
    let mut az_factor = CMat::<T>::zeros(n_h, n_h);
    let mut el_factor = CMat::<T>::zeros(n_v, n_v);
    let mut full = CMat::<T>::zeros(n_h * n_v, n_h * n_v);
    let mut add = |cov: &AzElCovariance<T>, gain: T| -> Result<(), ChannelError> {
        if cov.n_h() != n_h || cov.n_v() != n_v {
            return Err(ChannelError::DimensionMismatch(format!(
                "co-pilot covariance is {}x{}, serving is {}x{}",
                cov.n_h(),
                cov.n_v(),
                n_h,
                n_v
            )));
        }
        let rg = Complex::new(gain.sqrt(), T::zero());
        az_factor += &cov.r_az * rg;
        el_factor += &cov.r_el * rg;
        full += kron(&cov.r_az, &cov.r_el) * Complex::new(gain, T::zero());
        Ok(())
    };
    add(scov, sgain)?;
    for (cov, gain) in copilot {
        add(cov, *gain)?;
    }
    Ok(ContaminatedCovariance {
        full,
        az_factor,
        el_factor,
    })
}

/// Effective eigen-structure after the elevation null-space filter:
/// azimuth basis unchanged, elevation basis projected through `U^NI`.
#[derive(Debug, Clone)]
pub struct EffectiveEigen<T: Real> {
    /// `U^A`, unchanged by the first layer.
    pub u_az: CMat<T>,
    /// `U_bar^E = (U^NI)^H U^E`, `r_NI x r_E`.
    pub u_el_eff: CMat<T>,
}

impl<T: Real> EffectiveEigen<T> {
    /// `U_bar = U^A kron U_bar^E`.
    pub fn u_eff(&self) -> CMat<T> {
        kron(&self.u_az, &self.u_el_eff)
    }

    pub fn r_az(&self) -> usize {
        self.u_az.ncols()
    }

    pub fn r_el(&self) -> usize {
        self.u_el_eff.ncols()
    }
}

pub fn effective_eigen<T: Real>(
    ce: &ChannelEigen<T>,
    null_basis: &CMat<T>,
) -> Result<EffectiveEigen<T>, ChannelError> {
    if null_basis.nrows() != ce.el.dim() {
        return Err(ChannelError::DimensionMismatch(format!(
            "null basis has {} rows, elevation space is {}-dimensional",
            null_basis.nrows(),
            ce.el.dim()
        )));
    }
    Ok(EffectiveEigen {
        u_az: ce.az.vectors.clone(),
        u_el_eff: null_basis.adjoint() * &ce.el.vectors,
    })
}

/// Gaussian channel draw straight from the correlation factors through
/// jittered Cholesky square roots; used by the harness for links whose
/// eigen-structure is never needed. Covariance matches
/// `gain (R^A kron R^E)` up to the `1e-12` diagonal jitter.
pub fn sample_from_covariance<T: Real, R: Rng>(
    cov: &AzElCovariance<T>,
    gain: T,
    rng: &mut R,
) -> Result<CVec<T>, ChannelError> {
    let la = jittered_cholesky(&cov.r_az)?;
    let le = jittered_cholesky(&cov.r_el)?;
    let z = standard_complex_vector(cov.n_h() * cov.n_v(), rng);
    let mut h = kron_mul_vec(&la, &le, &z);
    h *= Complex::new(gain.sqrt(), T::zero());
    Ok(h)
}

fn jittered_cholesky<T: Real>(m: &CMat<T>) -> Result<CMat<T>, ChannelError> {
    let n = m.nrows();
    let mut trace = T::zero();
    for i in 0..n {
        trace += m[(i, i)].re;
    }
    let jitter = (trace / T::of_usize(n)).max(T::lit(1e-30)) * T::lit(1e-12);
    let shifted = m + CMat::<T>::identity(n, n) * Complex::new(jitter, T::zero());
    shifted
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| ChannelError::InvalidParameter("covariance not PSD".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Cx64;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    fn geom(phi_deg: f64, theta_deg: f64) -> LinkGeometry<f64> {
        LinkGeometry {
            d: 50.0,
            phi: deg(phi_deg),
            theta: deg(theta_deg),
            rho: 1.0,
        }
    }

    /// Composite-Simpson reference quadrature, independent of the
    /// Gauss-Legendre production path.
    fn simpson_entry(
        spacing: f64,
        lo: f64,
        hi: f64,
        delta_ant: i64,
        u: impl Fn(f64) -> f64,
    ) -> Cx64 {
        let n = 20_001usize; // odd
        let h = (hi - lo) / (n - 1) as f64;
        let f = |alpha: f64| {
            let phase = -2.0 * PI * spacing * delta_ant as f64 * u(alpha);
            Cx64::new(phase.cos(), phase.sin())
        };
        let mut acc = f(lo) + f(hi);
        for i in 1..n - 1 {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += f(lo + i as f64 * h) * w;
        }
        acc * Cx64::new(h / 3.0 / (hi - lo), 0.0)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre::<f64>(5);
        // degree-7 polynomial integrated exactly by a 5-point rule
        let integral: f64 = x
            .iter()
            .zip(&w)
            .map(|(xi, wi)| wi * (3.0 * xi.powi(7) + xi.powi(4) - 2.0 * xi + 1.0))
            .sum();
        let exact = 2.0 / 5.0 + 2.0; // odd terms vanish
        assert!((integral - exact).abs() < 1e-13);
        let sum_w: f64 = w.iter().sum();
        assert!((sum_w - 2.0).abs() < 1e-13);
    }

    #[test]
    fn one_ring_unit_diagonal_and_hermitian() {
        let g = geom(25.0, 105.0);
        let m = one_ring_az_cov(&g, deg(5.0), 8, 0.5).unwrap();
        for i in 0..8 {
            assert!((m[(i, i)] - Cx64::new(1.0, 0.0)).norm() < 1e-14);
        }
        assert!((&m - m.adjoint()).norm() < 1e-14);
        // Toeplitz: entries depend on the lag only
        for i in 0..7 {
            assert!((m[(i, i + 1)] - m[(0, 1)]).norm() < 1e-14);
        }
    }

    #[test]
    fn one_ring_psd() {
        let g = geom(-40.0, 112.0);
        let m = one_ring_az_cov(&g, deg(5.0), 16, 0.5).unwrap();
        let eig = hermitian_eig(&m).unwrap();
        let min = eig.values.last().copied().unwrap();
        assert!(min > -1e-9 * eig.values[0], "min eigenvalue {min}");
    }

    #[test]
    fn one_ring_tiny_spread_is_rank_one() {
        let g = geom(30.0, 100.0);
        let m = one_ring_az_cov(&g, 1e-9, 6, 0.5).unwrap();
        let expected = |d: usize| {
            let phase = -2.0 * PI * 0.5 * d as f64 * g.phi.sin() * g.theta.sin();
            Cx64::new(phase.cos(), phase.sin())
        };
        for d in 0..6 {
            assert!((m[(0, d)] - expected(d)).norm() < 1e-7, "lag {d}");
        }
        let eig = hermitian_eig(&m).unwrap();
        assert!(eig.values[0] > 5.999);
        assert!(eig.values[1].abs() < 1e-6);
    }

    #[test]
    fn one_ring_az_matches_simpson_oracle() {
        let g = geom(37.3, 104.2);
        let da = deg(4.1);
        let m = one_ring_az_cov(&g, da, 8, 0.5).unwrap();
        let sin_t = g.theta.sin();
        for d in 0..8 {
            let oracle = simpson_entry(0.5, -da, da, d as i64, |a| (g.phi + a).sin() * sin_t);
            assert!((m[(0, d)] - oracle).norm() < 1e-9, "lag {d}");
        }
    }

    #[test]
    fn one_ring_el_matches_simpson_oracle() {
        let g = geom(0.0, 100.0);
        let de = deg(3.0);
        let m = one_ring_el_cov(&g, de, 16, 0.5).unwrap();
        for d in [0usize, 1, 5, 15] {
            let oracle =
                simpson_entry(0.5, g.theta - de, g.theta + de, d as i64, |a| a.cos());
            assert!((m[(0, d)] - oracle).norm() < 1e-9, "lag {d}");
        }
    }

    #[test]
    fn one_ring_el_tiny_spread_phases() {
        let g = geom(0.0, 100.0);
        let m = one_ring_el_cov(&g, 1e-9, 5, 0.5).unwrap();
        for d in 0..5 {
            let phase = -2.0 * PI * 0.5 * d as f64 * g.theta.cos();
            assert!((m[(0, d)] - Cx64::new(phase.cos(), phase.sin())).norm() < 1e-7);
        }
    }

    #[test]
    fn quadrature_cap_errors_out() {
        let g = geom(10.0, 150.0);
        let spec = QuadratureSpec {
            start_nodes: 5,
            max_nodes: 9,
            tol: 1e-14,
        };
        // 256 antennas with a wide ring cannot converge with 9 nodes
        let err = one_ring_az_cov_with(&g, deg(20.0), 256, 0.5, &spec).unwrap_err();
        assert!(matches!(err, ChannelError::QuadratureNotConverged { .. }));
    }

    #[test]
    fn covariance_eigen_ranks() {
        let g = geom(12.0, 108.0);
        // rank-1 azimuth input
        let cov = AzElCovariance {
            r_az: {
                let a = steering_az(g.phi, g.theta, 6, 0.5);
                let outer = &a * a.adjoint();
                outer / Cx64::new(6.0, 0.0)
            },
            r_el: CMat::<f64>::identity(4, 4),
        };
        let ce = ChannelEigen::from_covariance(&cov, 1.0, 1e-3).unwrap();
        assert_eq!(ce.r_az(), 1);
        assert_eq!(ce.r_el(), 4);
    }

    #[test]
    fn kl_sample_norm_identity_rank_one() {
        let g = geom(20.0, 110.0);
        let eigen = single_path_eigen(&g, 3, 4, 0.5);
        let mut rng = StdRng::seed_from_u64(5);
        let real = eigen.kl_sample(&mut rng);
        // rank-1, unit-norm eigenvectors scaled by sqrt(N): |h| = sqrt(rho N) |w|
        let expect = (g.rho * 12.0).sqrt() * real.w[0].norm();
        assert!((real.h.norm() - expect).abs() < 1e-12);
    }

    #[test]
    fn kl_zero_innovation_gives_zero_channel() {
        let g = geom(20.0, 110.0);
        let cov = AzElCovariance::one_ring(&g, deg(5.0), deg(3.0), 6, 4, 0.5).unwrap();
        let ce = ChannelEigen::from_covariance(&cov, 0.7, 1e-3).unwrap();
        let w = CVec::<f64>::zeros(ce.r_az() * ce.r_el());
        let real = ce.synthesize(&w);
        assert!(real.h.norm() == 0.0);
    }

    #[test]
    fn kl_second_moment_matches_covariance() {
        let g = geom(33.0, 107.0);
        let cov = AzElCovariance::one_ring(&g, deg(8.0), deg(5.0), 3, 2, 0.5).unwrap();
        let gain = 0.6;
        let ce = ChannelEigen::from_covariance(&cov, gain, 1e-9).unwrap();
        let n = 6;
        let mut acc = CMat::<f64>::zeros(n, n);
        let mut rng = StdRng::seed_from_u64(77);
        let draws = 100_000;
        for _ in 0..draws {
            let r = ce.kl_sample(&mut rng);
            acc += &r.h * r.h.adjoint();
        }
        acc /= Cx64::new(draws as f64, 0.0);
        let target = kron(&cov.r_az, &cov.r_el) * Cx64::new(gain, 0.0);
        let tol = 5.0 * gain / (draws as f64).sqrt();
        let max_err = (acc - target).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(max_err < tol, "max entry error {max_err:e} vs {tol:e}");
    }

    #[test]
    fn scaled_innovation_consistency() {
        let g = geom(10.0, 103.0);
        let cov = AzElCovariance::one_ring(&g, deg(6.0), deg(4.0), 4, 3, 0.5).unwrap();
        let ce = ChannelEigen::from_covariance(&cov, 0.3, 1e-6).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        let real = ce.kl_sample(&mut rng);
        let wbar = ce.scaled_innovation(&real.w);
        let back = ce.kron_basis() * &wbar;
        assert!((back - &real.h).norm() < 1e-12);
        assert!((wbar.norm() - real.h.norm()).abs() < 1e-12);
    }

    #[test]
    fn single_path_properties() {
        let g = LinkGeometry {
            d: 60.0,
            phi: 0.0,
            theta: deg(107.0),
            rho: 0.25,
        };
        let beta = Cx64::new(0.6, -0.8);
        let (real, eigen) = single_path_channel(&g, beta, 5, 4, 0.5);
        // norm identity: |h|^2 = rho |beta|^2 N
        let n = 20.0;
        assert!((real.h.norm_squared() - g.rho * beta.norm_sqr() * n).abs() < 1e-12);
        // phi = 0: azimuth response all ones
        let a = steering_az(0.0, g.theta, 4, 0.5);
        for m in 0..4 {
            assert!((a[m] - Cx64::new(1.0, 0.0)).norm() < 1e-15);
        }
        // zero path gain
        let (real0, _) = single_path_channel(&g, Cx64::new(0.0, 0.0), 5, 4, 0.5);
        assert_eq!(real0.h.norm(), 0.0);
        assert_eq!(eigen.r_az(), 1);
        assert_eq!(eigen.r_el(), 1);
    }

    #[test]
    fn contaminated_covariance_cases() {
        let g = geom(14.0, 109.0);
        let cov = AzElCovariance::one_ring(&g, deg(5.0), deg(3.0), 3, 2, 0.5).unwrap();
        // no co-pilot users: factors reproduce the full covariance exactly
        let c = contaminated_covariance((&cov, 0.5), &[]).unwrap();
        let recovered = kron(&c.az_factor, &c.el_factor);
        assert!((&recovered - &c.full).norm() < 1e-12);
        assert!((&c.full - kron(&cov.r_az, &cov.r_el) * Cx64::new(0.5, 0.0)).norm() < 1e-12);

        // zero-gain co-pilot changes nothing
        let g2 = geom(-60.0, 95.0);
        let cov2 = AzElCovariance::one_ring(&g2, deg(5.0), deg(3.0), 3, 2, 0.5).unwrap();
        let c2 = contaminated_covariance((&cov, 0.5), &[(&cov2, 0.0)]).unwrap();
        assert!((&c2.full - &c.full).norm() < 1e-13);

        // two identical users double the sum exactly
        let c3 = contaminated_covariance((&cov, 0.5), &[(&cov, 0.5)]).unwrap();
        assert!((&c3.full - &c.full * Cx64::new(2.0, 0.0)).norm() < 1e-12);

        // dimension mismatch
        let bad = AzElCovariance {
            r_az: CMat::<f64>::identity(4, 4),
            r_el: CMat::<f64>::identity(2, 2),
        };
        assert!(contaminated_covariance((&cov, 1.0), &[(&bad, 1.0)]).is_err());
    }

    #[test]
    fn effective_eigen_cases() {
        let g = geom(22.0, 112.0);
        let cov = AzElCovariance::one_ring(&g, deg(5.0), deg(3.0), 6, 3, 0.5).unwrap();
        let ce = ChannelEigen::from_covariance(&cov, 1.0, 1e-3).unwrap();

        // identity null basis: unchanged elevation basis
        let id = CMat::<f64>::identity(6, 6);
        let eff = effective_eigen(&ce, &id).unwrap();
        assert!((&eff.u_el_eff - &ce.el.vectors).norm() < 1e-14);

        // basis fully containing U^E: isometry preserved
        let gram = eff.u_el_eff.adjoint() * &eff.u_el_eff;
        assert!((gram - CMat::<f64>::identity(ce.r_el(), ce.r_el())).norm() < 1e-9);

        // orthogonal basis: projection vanishes
        let full = hermitian_eig(&(&ce.el.vectors * ce.el.vectors.adjoint())).unwrap();
        let complement = full
            .vectors
            .columns(ce.r_el(), 6 - ce.r_el())
            .into_owned();
        let eff0 = effective_eigen(&ce, &complement).unwrap();
        assert!(eff0.u_el_eff.norm() < 1e-9);

        // wrong row count
        let bad = CMat::<f64>::identity(5, 5);
        assert!(effective_eigen(&ce, &bad).is_err());
    }

    #[test]
    fn cholesky_sampler_second_moment() {
        let g = geom(18.0, 106.0);
        let cov = AzElCovariance::one_ring(&g, deg(7.0), deg(4.0), 3, 2, 0.5).unwrap();
        let gain = 0.8;
        let mut rng = StdRng::seed_from_u64(31);
        let n = 6;
        let mut acc = CMat::<f64>::zeros(n, n);
        let draws = 60_000;
        for _ in 0..draws {
            let h = sample_from_covariance(&cov, gain, &mut rng).unwrap();
            acc += &h * h.adjoint();
        }
        acc /= Cx64::new(draws as f64, 0.0);
        let target = kron(&cov.r_az, &cov.r_el) * Cx64::new(gain, 0.0);
        let tol = 5.0 * gain / (draws as f64).sqrt();
        let max_err = (acc - target).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(max_err < tol, "max entry error {max_err:e}");
    }

    #[test]
    fn steering_vector_decay_outside_ring() {
        // Quadratic form u_x^H R^A u_x for a direction 3 spreads away:
        // nonincreasing in N_H, Fejer-kernel small at 256. The exact value
        // at half-wavelength spacing and 15 degrees separation is ~1.4e-2.
        let g = geom(0.0, 100.0);
        let da = deg(5.0);
        let phi_x = deg(15.0);
        let mut last = f64::INFINITY;
        for n_h in [16usize, 64, 256] {
            let r = one_ring_az_cov(&g, da, n_h, 0.5).unwrap();
            let ux = steering_az(phi_x, g.theta, n_h, 0.5)
                / Cx64::new((n_h as f64).sqrt(), 0.0);
            let q = (ux.adjoint() * &r * &ux)[(0, 0)].re;
            assert!(q <= last * (1.0 + 1e-12), "q({n_h}) = {q}");
            last = q;
            if n_h == 256 {
                assert!(q < 0.015, "q(256) = {q}");
            }
        }
        // wider separation or wider spacing pushes it below 1e-2
        let r = one_ring_az_cov(&g, da, 256, 0.5).unwrap();
        let ux = steering_az(deg(20.0), g.theta, 256, 0.5) / Cx64::new(16.0, 0.0);
        let q = (ux.adjoint() * &r * &ux)[(0, 0)].re;
        assert!(q < 0.01, "q(256, 20deg) = {q}");
    }

    #[test]
    fn elevation_band_cov_horizon_range() {
        let m = elevation_band_cov(8, 0.5, FRAC_PI_2, FRAC_PI_2 + deg(20.0)).unwrap();
        for i in 0..8 {
            assert!((m[(i, i)] - Cx64::new(1.0, 0.0)).norm() < 1e-13);
        }
        assert!((&m - m.adjoint()).norm() < 1e-13);
    }
}
