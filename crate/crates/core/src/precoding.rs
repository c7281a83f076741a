//! The three-layer precoder, its augmented-vertical-dimension variant, and
//! the baseline precoders (conjugate beamforming, single-cell zero-forcing).
//!
//! Layer 1 projects the elevation dimension onto the null space of the
//! averaged out-of-cell interference covariance and is kept in factored form
//! `I_{N_H} kron U^NI`. Layer 2 concatenates the users' effective eigen
//! matrices. Layer 3 zero-forces the effective channels; the diagonal
//! normalization starts from the closed-form `[ (H^H H)^-1_{kk} ]^{-1/2}`
//! and the composed columns are then re-checked and re-scaled to exact unit
//! norm, so the published power constraint holds at any dimension.

use num_complex::Complex;
use rand::Rng;
use thiserror::Error;

use crate::channel::{
    effective_eigen, elevation_band_cov, kron_mul_vec, one_ring_el_lags, steering_el,
    toeplitz_from_lags, ChannelError, EffectiveEigen,
};
use crate::geometry::{drop_users, link_geometry, CellLayout, GeometryError};
use crate::linalg::{
    fast_mul, hermitian_eig, split_by_threshold, zf_direction, CMat, CVec, LinalgError,
};
use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrecodingError {
    #[error("interference covariance has full numerical rank; null space is empty")]
    EmptyNullSpace,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("zero-forcing needs {needed} dimensions but only {available} are available")]
    InsufficientDimensions { needed: usize, available: usize },
    #[error("estimated channel is zero; cannot beamform")]
    ZeroChannel,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Averaged elevation interference covariance of one BS (Eq.-(11)-style
/// statistic).
#[derive(Debug, Clone)]
pub struct InterferenceCov<T: Real> {
    /// `N_V x N_V` Hermitian PSD average.
    pub r_i: CMat<T>,
    pub realizations_used: usize,
}

/// Channel-model inputs needed to synthesize interferer elevation
/// covariances during the averaging pass.
#[derive(Debug, Clone, Copy)]
pub struct InterferenceModel<T: Real> {
    pub n_v: usize,
    pub spacing_wl: T,
    /// One-ring elevation spread; ignored for single-path links.
    pub delta_e: T,
    pub pl_exponent: T,
    pub d_ref: T,
    pub d_min: T,
    /// Weight each interferer covariance by its link path loss.
    pub include_path_loss: bool,
    /// Rank-1 steering outer products instead of one-ring integrals.
    pub single_path: bool,
}

/// Average the elevation covariance of the channels from BS `center_cell`
/// to the scheduled users of every other cell, over independent user drops.
pub fn avg_interference_cov<T: Real, R: Rng>(
    layout: &CellLayout<T>,
    model: &InterferenceModel<T>,
    center_cell: usize,
    n_realizations: usize,
    k_per_cell: usize,
    rng: &mut R,
) -> Result<InterferenceCov<T>, PrecodingError> {
    if n_realizations == 0 || k_per_cell == 0 {
        return Err(PrecodingError::InvalidParameter(
            "n_realizations and k_per_cell must be >= 1".into(),
        ));
    }
    let n_v = model.n_v;
    let bs = layout.bs_positions[center_cell];
    // One-ring matrices are Toeplitz, so the average is assembled from
    // averaged lags; single-path terms are rank-1 and accumulate as scaled
    // steering columns squared once at the end.
    let mut lag_acc = vec![Complex::new(T::zero(), T::zero()); n_v];
    let mut col_acc: Vec<CVec<T>> = Vec::new();
    let quad = crate::channel::QuadratureSpec::default();
    for _ in 0..n_realizations {
        let users = drop_users(layout, k_per_cell, model.d_min, rng);
        for u in users.iter().filter(|u| u.cell_index != center_cell) {
            let geom = link_geometry(&bs, layout.h_bs, &u.xy, model.pl_exponent, model.d_ref)?;
            let w = if model.include_path_loss {
                geom.rho
            } else {
                T::one()
            };
            if model.single_path {
                let a = steering_el(geom.theta, n_v, model.spacing_wl);
                col_acc.push(a * Complex::new(w.sqrt(), T::zero()));
            } else {
                let lags =
                    one_ring_el_lags(&geom, model.delta_e, n_v, model.spacing_wl, &quad)?;
                let ww = Complex::new(w, T::zero());
                for (acc, l) in lag_acc.iter_mut().zip(lags.iter()) {
                    *acc += ww * l;
                }
            }
        }
    }
    // mean over (realization, user) pairs; the sum over cells is implicit
    let scale = Complex::new(T::one() / T::of_usize(n_realizations * k_per_cell), T::zero());
    let mut r_i = if model.single_path {
        if col_acc.is_empty() {
            CMat::<T>::zeros(n_v, n_v)
        } else {
            let mut m = CMat::<T>::zeros(n_v, col_acc.len());
            for (j, c) in col_acc.iter().enumerate() {
                m.set_column(j, c);
            }
            fast_mul(&m, &m.adjoint())
        }
    } else {
        toeplitz_from_lags(&lag_acc)
    };
    r_i *= scale;
    Ok(InterferenceCov {
        r_i,
        realizations_used: n_realizations,
    })
}

/// First precoding layer in factored form: `F1 = I_{N_H} kron null_basis`.
#[derive(Debug, Clone)]
pub struct Layer1<T: Real> {
    /// `N_V x r_NI`, orthonormal columns spanning the transmit subspace.
    pub null_basis: CMat<T>,
}

impl<T: Real> Layer1<T> {
    pub fn identity(n_v: usize) -> Self {
        Layer1 {
            null_basis: CMat::<T>::identity(n_v, n_v),
        }
    }

    pub fn n_v(&self) -> usize {
        self.null_basis.nrows()
    }

    pub fn r_ni(&self) -> usize {
        self.null_basis.ncols()
    }

    /// `F1^H h`: channel seen through the filter, azimuth-major stacking.
    pub fn filter_channel(&self, h: &CVec<T>, n_h: usize) -> CVec<T> {
        let id = CMat::<T>::identity(n_h, n_h);
        kron_mul_vec(&id, &self.null_basis.adjoint(), h)
    }

    /// `F1 x`: expand a filtered vector back to the full array.
    pub fn expand(&self, x: &CVec<T>, n_h: usize) -> CVec<T> {
        let id = CMat::<T>::identity(n_h, n_h);
        kron_mul_vec(&id, &self.null_basis, x)
    }

    /// Materialized `I_{N_H} kron U^NI`; test/analysis use only.
    pub fn materialize(&self, n_h: usize) -> CMat<T> {
        crate::linalg::kron(&CMat::<T>::identity(n_h, n_h), &self.null_basis)
    }
}

/// Null-space filter from the averaged interference covariance.
pub fn layer1<T: Real>(r_i: &InterferenceCov<T>, eps_rel: T) -> Result<Layer1<T>, PrecodingError> {
    let n_v = r_i.r_i.nrows();
    let eig = hermitian_eig(&r_i.r_i)?;
    let split = split_by_threshold(&eig, n_v, eps_rel)?;
    if split.null_rank() == 0 {
        return Err(PrecodingError::EmptyNullSpace);
    }
    Ok(Layer1 {
        null_basis: split.null_basis,
    })
}

/// Effective rank of the averaged interference covariance at the given
/// relative threshold.
pub fn interference_rank<T: Real>(r_i: &InterferenceCov<T>, eps_rel: T) -> Result<usize, PrecodingError> {
    Ok(hermitian_eig(&r_i.r_i)?.truncated(eps_rel).rank())
}

/// Modified first layer with augmented vertical dimensions: estimate the
/// maximum interference elevation angle from the rank-angle law, rebuild the
/// interference covariance over the reduced band
/// `[pi/2, theta_I - delta_ext]`, and take its null space.
///
/// Returns the filter and the estimated `theta_I`.
pub fn augmented_layer1<T: Real>(
    r_i: &InterferenceCov<T>,
    n_v: usize,
    spacing_wl: T,
    delta_ext: T,
    eps_rel: T,
) -> Result<(Layer1<T>, T), PrecodingError> {
    if delta_ext < T::zero() {
        return Err(PrecodingError::InvalidParameter(
            "delta_ext must be nonnegative".into(),
        ));
    }
    let rank = interference_rank(r_i, eps_rel)?;
    let ratio = T::of_usize(rank) / (T::of_usize(n_v) * spacing_wl);
    if ratio > T::one() {
        return Err(PrecodingError::InvalidParameter(format!(
            "interference rank {} exceeds the aperture N_V * D = {}",
            rank,
            (T::of_usize(n_v) * spacing_wl).as_f64()
        )));
    }
    let theta_i = (-ratio).acos();
    let hi = theta_i - delta_ext;
    let lo = T::frac_pi_2();
    if hi <= lo {
        return Err(PrecodingError::InvalidParameter(format!(
            "empty interference range: theta_I - delta_ext = {} <= pi/2",
            hi.as_f64()
        )));
    }
    let modified = elevation_band_cov(n_v, spacing_wl, lo, hi)?;
    let eig = hermitian_eig(&modified)?;
    let split = split_by_threshold(&eig, n_v, eps_rel)?;
    if split.null_rank() == 0 {
        return Err(PrecodingError::EmptyNullSpace);
    }
    Ok((
        Layer1 {
            null_basis: split.null_basis,
        },
        theta_i,
    ))
}

/// Asymptotic rank of a one-ring correlation over an elevation band:
/// `N D (cos(theta_min) - cos(theta_max))`.
pub fn rank_angle_law<T: Real>(n: usize, spacing_wl: T, theta_min: T, theta_max: T) -> T {
    T::of_usize(n) * spacing_wl * (theta_min.cos() - theta_max.cos())
}

/// Second layer: horizontal concatenation of the users' effective eigen
/// matrices. All users must share the filtered elevation dimension.
pub fn layer2<T: Real>(effectives: &[EffectiveEigen<T>]) -> Result<CMat<T>, PrecodingError> {
    if effectives.is_empty() {
        return Err(PrecodingError::InvalidParameter("no users".into()));
    }
    let r_ni = effectives[0].u_el_eff.nrows();
    for e in effectives {
        if e.u_el_eff.nrows() != r_ni {
            return Err(PrecodingError::DimensionMismatch(
                "users disagree on the filtered elevation dimension".into(),
            ));
        }
    }
    let blocks: Vec<CMat<T>> = effectives.iter().map(|e| e.u_eff()).collect();
    layer2_from_blocks(&blocks)
}

/// Horizontal concatenation of per-user effective basis blocks; the blocks
/// must agree on the effective dimension.
pub fn layer2_from_blocks<T: Real>(blocks: &[CMat<T>]) -> Result<CMat<T>, PrecodingError> {
    if blocks.is_empty() {
        return Err(PrecodingError::InvalidParameter("no users".into()));
    }
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut f2 = CMat::<T>::zeros(rows, cols);
    let mut col = 0;
    for b in blocks {
        if b.nrows() != rows {
            return Err(PrecodingError::DimensionMismatch(
                "users disagree on the effective dimension".into(),
            ));
        }
        f2.columns_mut(col, b.ncols()).copy_from(b);
        col += b.ncols();
    }
    Ok(f2)
}

/// Effective channels `h_bar_k = [G_(k,1), ..., G_(k,K)]^H w_bar_k` stacked
/// as columns, built from the pairwise effective Gram blocks.
pub fn effective_channels<T: Real>(
    effectives: &[EffectiveEigen<T>],
    innovations: &[CVec<T>],
) -> Result<CMat<T>, PrecodingError> {
    let k = effectives.len();
    if innovations.len() != k {
        return Err(PrecodingError::DimensionMismatch(format!(
            "{} effective bases but {} innovations",
            k,
            innovations.len()
        )));
    }
    let sizes: Vec<usize> = effectives.iter().map(|e| e.r_az() * e.r_el()).collect();
    let total: usize = sizes.iter().sum();
    let mut h = CMat::<T>::zeros(total, k);
    let u_effs: Vec<CMat<T>> = effectives.iter().map(|e| e.u_eff()).collect();
    for (col, (e_k, w_k)) in u_effs.iter().zip(innovations.iter()).enumerate() {
        if w_k.len() != sizes[col] {
            return Err(PrecodingError::DimensionMismatch(format!(
                "user {} innovation has {} entries, effective rank product is {}",
                col,
                w_k.len(),
                sizes[col]
            )));
        }
        // v = U_bar_k w_bar_k once, then each row block is G_(r,k) w_bar_k
        let v = e_k * w_k;
        let mut row = 0;
        for (r, e_r) in u_effs.iter().enumerate() {
            let block = e_r.adjoint() * &v;
            for i in 0..sizes[r] {
                h[(row + i, col)] = block[i];
            }
            row += sizes[r];
        }
    }
    Ok(h)
}

/// Zero-forcing third layer with the closed-form diagonal normalization
/// `ups_k = [ (H^H H)^{-1}_{kk} ]^{-1/2}`.
pub fn layer3<T: Real>(h_eff: &CMat<T>) -> Result<(CMat<T>, Vec<T>), PrecodingError> {
    let k = h_eff.ncols();
    if h_eff.nrows() < k {
        return Err(PrecodingError::InsufficientDimensions {
            needed: k,
            available: h_eff.nrows(),
        });
    }
    let directions = zf_direction(h_eff)?;
    let gram_inv = (h_eff.adjoint() * h_eff)
        .try_inverse()
        .ok_or(PrecodingError::Linalg(LinalgError::RankDeficient {
            cond: f64::INFINITY,
        }))?;
    let mut f3 = directions;
    let mut upsilon = Vec::with_capacity(k);
    for j in 0..k {
        let u = T::one() / gram_inv[(j, j)].re.sqrt();
        upsilon.push(u);
        let s = Complex::new(u, T::zero());
        for i in 0..f3.nrows() {
            f3[(i, j)] *= s;
        }
    }
    Ok((f3, upsilon))
}

/// The assembled three-layer precoder.
#[derive(Debug, Clone)]
pub struct PrecoderStack<T: Real> {
    pub f1: Layer1<T>,
    /// `(N_H r_NI) x sum_k r_k`.
    pub f2: CMat<T>,
    /// `sum_k r_k x K`, normalization folded in.
    pub f3: CMat<T>,
    /// Final per-user amplitudes (desired signal gain of each stream).
    pub upsilon: Vec<T>,
    /// `N x K` composed precoder `(I kron U^NI) F2 F3`, unit-norm columns.
    pub composed: CMat<T>,
}

/// Tolerance above which a composed column norm triggers a re-scale.
const COLUMN_NORM_SLACK: f64 = 1e-12;

impl<T: Real> PrecoderStack<T> {
    /// Compose the layers, verify the power constraint, and re-scale the
    /// third-layer columns (and amplitudes) when roundoff pushed a column
    /// norm away from one. Fails with `InsufficientDimensions` when the
    /// zero-forcing condition `N_H r_NI >= sum_k r_k` is violated.
    pub fn build(
        f1: Layer1<T>,
        f2: CMat<T>,
        h_eff: &CMat<T>,
        n_h: usize,
    ) -> Result<Self, PrecodingError> {
        if f2.nrows() != n_h * f1.r_ni() {
            return Err(PrecodingError::DimensionMismatch(format!(
                "F2 has {} rows, expected N_H r_NI = {}",
                f2.nrows(),
                n_h * f1.r_ni()
            )));
        }
        if f2.nrows() < f2.ncols() {
            return Err(PrecodingError::InsufficientDimensions {
                needed: f2.ncols(),
                available: f2.nrows(),
            });
        }
        if h_eff.nrows() != f2.ncols() {
            return Err(PrecodingError::DimensionMismatch(format!(
                "effective channels have {} rows, F2 has {} columns",
                h_eff.nrows(),
                f2.ncols()
            )));
        }
        let (mut f3, mut upsilon) = layer3(h_eff)?;
        let k = f3.ncols();
        let x = fast_mul(&f2, &f3); // (N_H r_NI) x K
        let mut composed = CMat::<T>::zeros(f1.n_v() * n_h, k);
        for j in 0..k {
            let col = f1.expand(&x.column(j).into_owned(), n_h);
            // F1 is semi-unitary so |F x| = |x|, but measure on the final
            // vector anyway: this is the published constraint.
            let norm = col.norm();
            if norm <= T::zero() {
                return Err(PrecodingError::ZeroChannel);
            }
            let off = (norm - T::one()).abs();
            let inv = Complex::new(T::one() / norm, T::zero());
            if off.as_f64() > COLUMN_NORM_SLACK {
                upsilon[j] /= norm;
                for i in 0..f3.nrows() {
                    f3[(i, j)] *= inv;
                }
            }
            let fixed = col * inv;
            composed.set_column(j, &fixed);
        }
        Ok(PrecoderStack {
            f1,
            f2,
            f3,
            upsilon,
            composed,
        })
    }

    pub fn k_users(&self) -> usize {
        self.composed.ncols()
    }
}

/// Conjugate beamforming on (contaminated) channel estimates: each column
/// beamforms along its estimate, normalized to unit power.
pub fn conjugate_beamforming<T: Real>(est_channels: &[CVec<T>]) -> Result<CMat<T>, PrecodingError> {
    if est_channels.is_empty() {
        return Err(PrecodingError::InvalidParameter("no users".into()));
    }
    let n = est_channels[0].len();
    let mut f = CMat::<T>::zeros(n, est_channels.len());
    for (j, h) in est_channels.iter().enumerate() {
        if h.len() != n {
            return Err(PrecodingError::DimensionMismatch(
                "estimated channels disagree on the array size".into(),
            ));
        }
        let norm = h.norm();
        if norm <= T::zero() {
            return Err(PrecodingError::ZeroChannel);
        }
        let inv = Complex::new(T::one() / norm, T::zero());
        for i in 0..n {
            f[(i, j)] = h[i] * inv;
        }
    }
    Ok(f)
}

/// Single-cell zero-forcing baseline on (contaminated) channel estimates,
/// columns normalized to unit power.
pub fn zf_baseline<T: Real>(est_channels: &[CVec<T>]) -> Result<CMat<T>, PrecodingError> {
    if est_channels.is_empty() {
        return Err(PrecodingError::InvalidParameter("no users".into()));
    }
    let n = est_channels[0].len();
    let k = est_channels.len();
    if k > n {
        return Err(PrecodingError::InsufficientDimensions {
            needed: k,
            available: n,
        });
    }
    let mut h = CMat::<T>::zeros(n, k);
    for (j, hj) in est_channels.iter().enumerate() {
        if hj.len() != n {
            return Err(PrecodingError::DimensionMismatch(
                "estimated channels disagree on the array size".into(),
            ));
        }
        h.set_column(j, hj);
    }
    let mut d = zf_direction(&h)?;
    for j in 0..k {
        let norm = d.column(j).norm();
        if norm <= T::zero() {
            return Err(PrecodingError::ZeroChannel);
        }
        let inv = Complex::new(T::one() / norm, T::zero());
        for i in 0..n {
            d[(i, j)] *= inv;
        }
    }
    Ok(d)
}

/// Clean-pipeline construction of the effective bases for a set of users:
/// the convenience path used by tests and the single-cell harness route.
pub fn effective_bases<T: Real>(
    layer1: &Layer1<T>,
    eigens: &[crate::channel::ChannelEigen<T>],
) -> Result<Vec<EffectiveEigen<T>>, PrecodingError> {
    eigens
        .iter()
        .map(|ce| effective_eigen(ce, &layer1.null_basis).map_err(PrecodingError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{one_ring_el_cov, AzElCovariance, ChannelEigen};
    use crate::geometry::{build_hex_layout, build_single_cell, LinkGeometry};
    use crate::linalg::khatri_rao_block;
    use crate::Cx64;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    fn model(n_v: usize) -> InterferenceModel<f64> {
        InterferenceModel {
            n_v,
            spacing_wl: 0.5,
            delta_e: deg(3.0),
            pl_exponent: 3.5,
            d_ref: 1.0,
            d_min: 10.0,
            include_path_loss: true,
            single_path: false,
        }
    }

    #[test]
    fn avg_interference_single_cell_is_zero() {
        let layout = build_single_cell(100.0, 35.0).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let cov = avg_interference_cov(&layout, &model(8), 0, 3, 5, &mut rng).unwrap();
        assert_eq!(cov.r_i.norm(), 0.0);
        assert_eq!(cov.realizations_used, 3);
    }

    #[test]
    fn avg_interference_symmetric_cells() {
        // Full 7-cell ring: by symmetry every BS sees statistically the same
        // interference; compare BS 1 and BS 4 (opposite neighbors).
        let layout = build_hex_layout(100.0, 35.0).unwrap();
        let m = model(8);
        let mut rng_a = StdRng::seed_from_u64(100);
        let a = avg_interference_cov(&layout, &m, 1, 3000, 4, &mut rng_a).unwrap();
        let mut rng_b = StdRng::seed_from_u64(200);
        let b = avg_interference_cov(&layout, &m, 4, 3000, 4, &mut rng_b).unwrap();
        let rel = (&a.r_i - &b.r_i).norm() / a.r_i.norm();
        assert!(rel < 0.05, "relative asymmetry {rel}");
    }

    #[test]
    fn layer1_zero_interference_gives_identity() {
        let cov = InterferenceCov {
            r_i: CMat::<f64>::zeros(5, 5),
            realizations_used: 1,
        };
        let l1 = layer1(&cov, 1e-3).unwrap();
        assert_eq!(l1.r_ni(), 5);
        let q = &l1.null_basis * l1.null_basis.adjoint();
        assert!((q - CMat::<f64>::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn layer1_rank_one_interference() {
        let mut r = CMat::<f64>::zeros(4, 4);
        r[(0, 0)] = Cx64::new(1.0, 0.0);
        let cov = InterferenceCov {
            r_i: r,
            realizations_used: 1,
        };
        let l1 = layer1(&cov, 1e-3).unwrap();
        assert_eq!(l1.r_ni(), 3);
        // null basis orthogonal to e1
        for j in 0..3 {
            assert!(l1.null_basis[(0, j)].norm_sqr() < 1e-20);
        }
    }

    #[test]
    fn layer1_full_rank_errors() {
        let cov = InterferenceCov {
            r_i: CMat::<f64>::identity(4, 4),
            realizations_used: 1,
        };
        assert_eq!(layer1(&cov, 1e-3).unwrap_err(), PrecodingError::EmptyNullSpace);
    }

    #[test]
    fn layer1_filters_interference_below_threshold() {
        // after projection, residual interference eigenvalues stay below
        // eps_rel * lambda_1
        let g = LinkGeometry {
            d: 150.0,
            phi: 0.3,
            theta: deg(102.0),
            rho: 1.0,
        };
        let r = one_ring_el_cov(&g, deg(3.0), 16, 0.5).unwrap();
        let cov = InterferenceCov {
            r_i: r.clone(),
            realizations_used: 1,
        };
        let eps = 1e-3;
        let l1 = layer1(&cov, eps).unwrap();
        let filtered = l1.null_basis.adjoint() * &r * &l1.null_basis;
        let top_all = hermitian_eig(&r).unwrap().values[0];
        let top_res = hermitian_eig(&filtered).unwrap().values[0];
        assert!(top_res <= eps * top_all * (1.0 + 1e-6), "residual {top_res}");
    }

    fn clean_effectives(
        n_v: usize,
        n_h: usize,
        k: usize,
        seed: u64,
    ) -> (Layer1<f64>, Vec<ChannelEigen<f64>>, Vec<EffectiveEigen<f64>>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let layout = build_single_cell(100.0, 35.0).unwrap();
        let users = drop_users(&layout, k, 10.0, &mut rng);
        let eigens: Vec<ChannelEigen<f64>> = users
            .iter()
            .map(|u| {
                let g = link_geometry(&layout.bs_positions[0], 35.0, &u.xy, 3.5, 1.0).unwrap();
                let cov =
                    AzElCovariance::one_ring(&g, deg(5.0), deg(3.0), n_v, n_h, 0.5).unwrap();
                ChannelEigen::from_covariance(&cov, g.rho, 1e-3).unwrap()
            })
            .collect();
        // a nontrivial filter: null space of one synthetic interferer band
        let band = elevation_band_cov(n_v, 0.5, deg(92.0), deg(100.0)).unwrap();
        let cov = InterferenceCov {
            r_i: band,
            realizations_used: 1,
        };
        let l1 = layer1(&cov, 1e-3).unwrap();
        let eff = effective_bases(&l1, &eigens).unwrap();
        (l1, eigens, eff)
    }

    #[test]
    fn layer2_shapes_and_orthonormal_case() {
        let (l1, eigens, eff) = clean_effectives(12, 6, 3, 42);
        let f2 = layer2(&eff).unwrap();
        let cols: usize = eigens.iter().map(|e| e.r_az() * e.r_el()).sum();
        assert_eq!(f2.shape(), (6 * l1.r_ni(), cols));

        // identity filter and a single user: F2^H F2 = I exactly
        let id = Layer1::identity(12);
        let eff1 = effective_bases(&id, &eigens[..1]).unwrap();
        let f2 = layer2(&eff1).unwrap();
        let gram = f2.adjoint() * &f2;
        let n = gram.nrows();
        assert!((gram - CMat::<f64>::identity(n, n)).norm() < 1e-9);
    }

    #[test]
    fn effective_channels_dual_route() {
        let (_, eigens, eff) = clean_effectives(12, 6, 3, 43);
        let mut rng = StdRng::seed_from_u64(44);
        let (ws, wbars): (Vec<_>, Vec<_>) = eigens
            .iter()
            .map(|ce| {
                let r = ce.kl_sample(&mut rng);
                let wbar = ce.scaled_innovation(&r.w);
                (r.w, wbar)
            })
            .unzip();
        drop(ws);
        let h1 = effective_channels(&eff, &wbars).unwrap();
        // second route: F2^H F2 W (ranks differ per user, so the ragged
        // block-diagonal builder applies)
        let f2 = layer2(&eff).unwrap();
        let w = crate::linalg::block_diag_columns(&wbars);
        let h2 = f2.adjoint() * &f2 * w;
        assert!((h1 - h2).norm() < 1e-10);
    }

    #[test]
    fn effective_channels_orthonormal_f2_returns_w() {
        let (_, eigens, _) = clean_effectives(12, 6, 2, 45);
        let id = Layer1::<f64>::identity(12);
        // orthogonalize across users by keeping only the first user's basis
        // twice is NOT orthogonal; instead use disjoint elevation bands via
        // two synthetic rank-1 bases
        let mut e1 = CMat::<f64>::zeros(12, 1);
        e1[(0, 0)] = Cx64::new(1.0, 0.0);
        let mut e2 = CMat::<f64>::zeros(12, 1);
        e2[(1, 0)] = Cx64::new(1.0, 0.0);
        let mk = |el: CMat<f64>| EffectiveEigen {
            u_az: eigens[0].az.vectors.clone(),
            u_el_eff: el,
        };
        let eff = vec![mk(e1), mk(e2)];
        let _ = id;
        let r = eigens[0].r_az();
        let mut rng = StdRng::seed_from_u64(46);
        let wbars: Vec<CVec<f64>> = (0..2)
            .map(|_| crate::channel::standard_complex_vector(r, &mut rng))
            .collect();
        let h = effective_channels(&eff, &wbars).unwrap();
        let w = khatri_rao_block(&wbars).unwrap();
        assert!((h - w).norm() < 1e-10);
    }

    #[test]
    fn layer3_identity_case() {
        let h = CMat::<f64>::identity(3, 3);
        let (f3, ups) = layer3(&h).unwrap();
        assert!((f3 - CMat::<f64>::identity(3, 3)).norm() < 1e-12);
        for u in ups {
            assert!((u - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer3_insufficient_dimensions() {
        let h = CMat::<f64>::zeros(2, 3);
        assert!(matches!(
            layer3(&h),
            Err(PrecodingError::InsufficientDimensions { .. })
        ));
    }

    #[test]
    fn stack_build_power_constraint_and_identities() {
        let (l1, eigens, eff) = clean_effectives(16, 8, 4, 47);
        let mut rng = StdRng::seed_from_u64(48);
        let mut wbars = Vec::new();
        let mut channels = Vec::new();
        for ce in &eigens {
            let r = ce.kl_sample(&mut rng);
            wbars.push(ce.scaled_innovation(&r.w));
            channels.push(r.h);
        }
        let f2 = layer2(&eff).unwrap();
        let h_eff = effective_channels(&eff, &wbars).unwrap();
        let stack = PrecoderStack::build(l1, f2, &h_eff, 8).unwrap();

        // unit column norms
        for j in 0..stack.k_users() {
            let n = stack.composed.column(j).norm();
            assert!((n - 1.0).abs() < 1e-9, "column {j} norm {n}");
        }
        // desired amplitude = upsilon, intra-cell nulling exact
        for (k, h) in channels.iter().enumerate() {
            let row = h.adjoint() * &stack.composed;
            let desired = row[(0, k)];
            assert!(
                (desired.re - stack.upsilon[k]).abs() < 1e-9 * stack.upsilon[k].max(1.0),
                "amplitude {} vs upsilon {}",
                desired.re,
                stack.upsilon[k]
            );
            assert!(desired.im.abs() < 1e-9);
            for m in 0..stack.k_users() {
                if m != k {
                    let leak = row[(0, m)].norm_sqr();
                    assert!(
                        leak <= 1e-18 * desired.norm_sqr(),
                        "intra-cell leak {leak:e}"
                    );
                }
            }
        }
    }

    #[test]
    fn stack_semiunitary_f2_gives_wbar_amplitude() {
        // identity filter, single user: F2 semi-unitary, so ups = |w_bar|
        let (_, eigens, _) = clean_effectives(12, 6, 1, 49);
        let id = Layer1::identity(12);
        let eff = effective_bases(&id, &eigens[..1]).unwrap();
        let mut rng = StdRng::seed_from_u64(50);
        let r = eigens[0].kl_sample(&mut rng);
        let wbar = eigens[0].scaled_innovation(&r.w);
        let f2 = layer2(&eff).unwrap();
        let h_eff = effective_channels(&eff, &[wbar.clone()]).unwrap();
        let stack = PrecoderStack::build(id, f2, &h_eff, 6).unwrap();
        assert!((stack.upsilon[0] - wbar.norm()).abs() < 1e-10);
    }

    #[test]
    fn augmented_layer1_cases() {
        // zero interference: rank 0, theta_I = pi/2, empty range
        let zero = InterferenceCov {
            r_i: CMat::<f64>::zeros(8, 8),
            realizations_used: 1,
        };
        assert!(matches!(
            augmented_layer1(&zero, 8, 0.5, deg(6.0), 1e-3),
            Err(PrecodingError::InvalidParameter(_))
        ));

        // horizon-anchored band at a production-size vertical array: the
        // extended design must enlarge the transmit subspace. (At small N_V
        // the threshold transition band is comparable to the trimmed angle
        // and the ordering is not guaranteed.)
        let n_v = 100;
        let band = elevation_band_cov(n_v, 0.5, deg(90.3), deg(112.0)).unwrap();
        let cov = InterferenceCov {
            r_i: band,
            realizations_used: 1,
        };
        let plain = layer1(&cov, 1e-3).unwrap();
        let (aug0, theta_i) = augmented_layer1(&cov, n_v, 0.5, 0.0, 1e-3).unwrap();
        let (aug, _) = augmented_layer1(&cov, n_v, 0.5, deg(6.0), 1e-3).unwrap();
        assert!(theta_i > deg(105.0) && theta_i < deg(130.0), "theta_I {theta_i}");
        assert!(
            aug.r_ni() >= plain.r_ni(),
            "aug {} < plain {}",
            aug.r_ni(),
            plain.r_ni()
        );
        // delta_ext = 0 rebuild spans a comparable band: ranks stay close
        let diff = (aug0.r_ni() as i64 - plain.r_ni() as i64).abs();
        assert!(diff <= 5, "plain {} vs rebuilt {}", plain.r_ni(), aug0.r_ni());
    }

    #[test]
    fn rank_angle_law_values() {
        let v = rank_angle_law(256, 0.5, deg(90.0), deg(120.0));
        assert!((v - 64.0).abs() < 1e-9);
        assert_eq!(rank_angle_law(64, 0.5, 1.0, 1.0), 0.0);
        let a = rank_angle_law(100, 0.5, deg(95.0), deg(110.0));
        let b = rank_angle_law(200, 0.5, deg(95.0), deg(110.0));
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn conjugate_beamforming_cases() {
        let mut rng = StdRng::seed_from_u64(51);
        let h = crate::channel::standard_complex_vector::<f64, _>(6, &mut rng);
        let f = conjugate_beamforming(&[h.clone()]).unwrap();
        // beamforms exactly along the channel: desired power = |h|^2
        let gain = (h.adjoint() * f.column(0).into_owned())[(0, 0)];
        assert!((gain.norm() - h.norm()).abs() < 1e-12);
        assert!((f.column(0).norm() - 1.0).abs() < 1e-12);

        assert!(matches!(
            conjugate_beamforming(&[CVec::<f64>::zeros(4)]),
            Err(PrecodingError::ZeroChannel)
        ));
    }

    #[test]
    fn cb_orthogonal_contamination_preserves_projection() {
        let mut h = CVec::<f64>::zeros(4);
        h[0] = Cx64::new(1.0, 0.0);
        let mut contaminant = CVec::<f64>::zeros(4);
        contaminant[1] = Cx64::new(1.0, 0.0);
        let est = &h + &contaminant;
        let f_clean = conjugate_beamforming(&[h.clone()]).unwrap();
        let f_cont = conjugate_beamforming(&[est]).unwrap();
        let p_clean = (h.adjoint() * f_clean.column(0).into_owned())[(0, 0)].norm_sqr();
        let p_cont = (h.adjoint() * f_cont.column(0).into_owned())[(0, 0)].norm_sqr();
        // orthogonal contaminant only costs the normalization split
        assert!((p_cont - p_clean / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zf_baseline_cases() {
        // orthogonal estimated channels: reduces to conjugate beamforming
        let mut h1 = CVec::<f64>::zeros(4);
        h1[0] = Cx64::new(2.0, 0.0);
        let mut h2 = CVec::<f64>::zeros(4);
        h2[2] = Cx64::new(0.0, -1.5);
        let zf = zf_baseline(&[h1.clone(), h2.clone()]).unwrap();
        let cb = conjugate_beamforming(&[h1.clone(), h2.clone()]).unwrap();
        assert!((&zf - &cb).norm() < 1e-12);

        // residual identity pre-normalization: H^H D = I
        let mut rng = StdRng::seed_from_u64(52);
        let hs: Vec<CVec<f64>> = (0..3)
            .map(|_| crate::channel::standard_complex_vector(8, &mut rng))
            .collect();
        let mut h = CMat::<f64>::zeros(8, 3);
        for (j, hj) in hs.iter().enumerate() {
            h.set_column(j, hj);
        }
        let d = zf_direction(&h).unwrap();
        let res = h.adjoint() * &d - CMat::<f64>::identity(3, 3);
        assert!(res.norm() < 1e-9);

        // unit column norms on the baseline
        let zf = zf_baseline(&hs).unwrap();
        for j in 0..3 {
            assert!((zf.column(j).norm() - 1.0).abs() < 1e-9);
        }
        // nulling property survives normalization
        for (k, hk) in hs.iter().enumerate() {
            for m in 0..3 {
                if m != k {
                    let leak = (hk.adjoint() * zf.column(m).into_owned())[(0, 0)].norm_sqr();
                    assert!(leak < 1e-18);
                }
            }
        }
    }
}
