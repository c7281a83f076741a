//! Rate computations: direct SINR with separated components, the
//! closed-form multi-layer rate, the single-user upper bound, the cell-edge
//! lower bound, the conjugate-beamforming ceiling, link-budget arithmetic,
//! and CDF aggregation.

use thiserror::Error;

use crate::linalg::{block_diag_columns, hermitian_eig, CMat, CVec, ZF_CONDITION_LIMIT};
use crate::num::{cmod, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("effective Gram matrix numerically singular")]
    RankDeficient,
    #[error("no interferers: conjugate-beamforming ceiling is unbounded")]
    NoInterferers,
    #[error("empty input")]
    EmptyInput,
}

/// Thermal noise power in linear milliwatt scale:
/// `-174 dBm/Hz + 10 log10(BW) + NF`.
pub fn noise_power<T: Real>(bandwidth_hz: T, noise_figure_db: T) -> Result<T, RateError> {
    if bandwidth_hz <= T::zero() {
        return Err(RateError::InvalidParameter(
            "bandwidth must be positive".into(),
        ));
    }
    let dbm = T::lit(-174.0) + T::lit(10.0) * bandwidth_hz.log10() + noise_figure_db;
    Ok(db_to_linear(dbm))
}

pub fn db_to_linear<T: Real>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

pub fn linear_to_db<T: Real>(lin: T) -> T {
    T::lit(10.0) * lin.log10()
}

/// Transmit-side link budget; power in dBm, noise from the bandwidth and
/// receiver noise figure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget<T: Real> {
    pub tx_power_dbm: T,
    pub bandwidth_hz: T,
    pub noise_figure_db: T,
    pub k_users: usize,
    /// `SNR = P / (K sigma^2)`, linear.
    pub snr_per_stream: T,
}

impl<T: Real> LinkBudget<T> {
    pub fn new(
        tx_power_dbm: T,
        bandwidth_hz: T,
        noise_figure_db: T,
        k_users: usize,
    ) -> Result<Self, RateError> {
        if k_users == 0 {
            return Err(RateError::InvalidParameter("k_users must be >= 1".into()));
        }
        let sigma2 = noise_power(bandwidth_hz, noise_figure_db)?;
        let p_lin = db_to_linear(tx_power_dbm);
        Ok(LinkBudget {
            tx_power_dbm,
            bandwidth_hz,
            noise_figure_db,
            k_users,
            snr_per_stream: p_lin / (T::of_usize(k_users) * sigma2),
        })
    }
}

/// The three powers entering the SINR, kept separate so interference
/// leakage is a first-class observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrComponents<T: Real> {
    pub desired: T,
    pub intra_cell: T,
    pub inter_cell: T,
    /// `1 / SNR`, the normalized noise term.
    pub noise: T,
}

impl<T: Real> SinrComponents<T> {
    pub fn sinr(&self) -> T {
        self.desired / (self.intra_cell + self.inter_cell + self.noise)
    }

    pub fn rate(&self) -> T {
        (T::one() + self.sinr()).log2()
    }

    /// SINR with the inter-cell term removed (single-cell view).
    pub fn sinr_intra_only(&self) -> T {
        self.desired / (self.intra_cell + self.noise)
    }
}

/// Direct evaluation of the downlink SINR for one user: desired power from
/// the serving precoder column, intra-cell power from the remaining columns,
/// inter-cell power from every other BS's full precoder.
pub fn sinr_direct<T: Real>(
    own_channel: &CVec<T>,
    own_precoder: &CMat<T>,
    user_col: usize,
    other_cells: &[(&CVec<T>, &CMat<T>)],
    snr: T,
) -> Result<SinrComponents<T>, RateError> {
    if own_channel.len() != own_precoder.nrows() {
        return Err(RateError::DimensionMismatch(format!(
            "channel has {} entries, precoder {} rows",
            own_channel.len(),
            own_precoder.nrows()
        )));
    }
    if user_col >= own_precoder.ncols() {
        return Err(RateError::DimensionMismatch(format!(
            "user column {} out of {} precoder columns",
            user_col,
            own_precoder.ncols()
        )));
    }
    let row = own_channel.adjoint() * own_precoder; // 1 x K
    let desired = cmod(row[(0, user_col)]).powi(2);
    let mut intra = T::zero();
    for m in 0..own_precoder.ncols() {
        if m != user_col {
            intra += cmod(row[(0, m)]).powi(2);
        }
    }
    let mut inter = T::zero();
    for (h, f) in other_cells {
        if h.len() != f.nrows() {
            return Err(RateError::DimensionMismatch(
                "inter-cell channel/precoder dims".into(),
            ));
        }
        let r = h.adjoint() * *f;
        for m in 0..r.ncols() {
            inter += cmod(r[(0, m)]).powi(2);
        }
    }
    Ok(SinrComponents {
        desired,
        intra_cell: intra,
        inter_cell: inter,
        noise: T::one() / snr,
    })
}

/// Closed-form per-user rates of the three-layer precoder, from the second
/// layer and the scaled innovations alone.
///
/// With `A = F2^H F2`, `W` the block-diagonal innovation matrix, and
/// `B = A W`, the exactly power-normalized precoder delivers amplitude
/// `ups_k` with `ups_k^2 = 1 / [G^-1 (B^H A B) G^-1]_kk`, `G = B^H B`;
/// the rate is `log2(1 + SNR ups_k^2)`. (When `A = I` this reduces to the
/// single-user rate `log2(1 + SNR |w_k|^2)`.)
pub fn rate_lemma1<T: Real>(
    f2: &CMat<T>,
    w_list: &[CVec<T>],
    snr: T,
) -> Result<Vec<T>, RateError> {
    Ok(lemma1_amplitudes(f2, w_list)?
        .into_iter()
        .map(|u| (T::one() + snr * u * u).log2())
        .collect())
}

/// The exact per-user normalization amplitudes `ups_k` of the composed
/// precoder, derived from `(F2, W)` without building layer 3.
pub fn lemma1_amplitudes<T: Real>(f2: &CMat<T>, w_list: &[CVec<T>]) -> Result<Vec<T>, RateError> {
    let k = w_list.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let total: usize = w_list.iter().map(|w| w.len()).sum();
    if f2.ncols() != total {
        return Err(RateError::DimensionMismatch(format!(
            "F2 has {} columns, innovations stack to {}",
            f2.ncols(),
            total
        )));
    }
    let w = block_diag_columns(w_list);
    let a = f2.adjoint() * f2; // Hermitian
    let b = &a * &w; // (sum r) x K
    let gram = b.adjoint() * &b; // W^H A^2 W
    let m3 = b.adjoint() * (&a * &b); // W^H A^3 W
    let eig = hermitian_eig(&gram).map_err(|_| RateError::RankDeficient)?;
    let top = eig.values[0];
    let bottom = eig.values[k - 1];
    if bottom <= T::zero() || top / bottom > T::lit(ZF_CONDITION_LIMIT) {
        return Err(RateError::RankDeficient);
    }
    let gram_inv = gram.try_inverse().ok_or(RateError::RankDeficient)?;
    let sandwich = &gram_inv * m3 * &gram_inv;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let denom = sandwich[(i, i)].re;
        if denom <= T::zero() {
            return Err(RateError::RankDeficient);
        }
        out.push(T::one() / denom.sqrt());
    }
    Ok(out)
}

/// Interference-free single-user rate `log2(1 + SNR |w_bar|^2)`.
pub fn single_user_rate<T: Real>(w_bar: &CVec<T>, snr: T) -> T {
    single_user_rate_from_power(w_bar.norm_squared(), snr)
}

/// Same bound from a precomputed effective channel power (`|w_bar|^2`, or
/// `|h|^2` for single-path channels).
pub fn single_user_rate_from_power<T: Real>(power: T, snr: T) -> T {
    (T::one() + snr * power).log2()
}

/// Pilot-contamination ceiling of conjugate beamforming:
/// `log2(1 + SNR rho_own^2 / sum_b rho_b^2)`.
pub fn cb_ceiling<T: Real>(
    rho_serving: T,
    rho_interferers: &[T],
    snr: T,
) -> Result<T, RateError> {
    let denom: T = rho_interferers
        .iter()
        .fold(T::zero(), |acc, r| acc + *r * *r);
    if denom <= T::zero() {
        return Err(RateError::NoInterferers);
    }
    Ok((T::one() + snr * rho_serving * rho_serving / denom).log2())
}

/// Cell-edge lower bound `log2(1 + SNR |w_bar|^2 sigma_min^2(U_bar^E))`.
pub fn edge_lower_bound<T: Real>(w_bar: &CVec<T>, u_el_eff: &CMat<T>, snr: T) -> T {
    edge_lower_bound_from_power(w_bar.norm_squared(), min_singular_value(u_el_eff), snr)
}

/// Same bound from a precomputed channel power and minimum singular value.
pub fn edge_lower_bound_from_power<T: Real>(power: T, sigma_min: T, snr: T) -> T {
    (T::one() + snr * power * sigma_min * sigma_min).log2()
}

/// Smallest singular value of a complex matrix seen as an operator on its
/// column space; zero when there are more columns than rows.
pub fn min_singular_value<T: Real>(m: &CMat<T>) -> T {
    if m.ncols() == 0 {
        return T::zero();
    }
    if m.ncols() > m.nrows() {
        return T::zero();
    }
    let sv = m.clone().singular_values();
    sv.iter().fold(T::max_value().unwrap(), |acc, s| acc.min(*s))
}

/// Empirical CDF sampled on an evenly spaced rate grid from 0 to the
/// sample maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSeries<T: Real> {
    /// `(rate, cumulative fraction)` pairs, grid ascending.
    pub points: Vec<(T, T)>,
}

impl<T: Real> CdfSeries<T> {
    /// Empirical CDF value at `x` (fraction of samples `<= x`), evaluated on
    /// the underlying step function, not the grid.
    pub fn percentile_value(&self, p: T) -> T {
        // smallest grid rate whose cdf reaches p
        for (x, c) in &self.points {
            if *c >= p {
                return *x;
            }
        }
        self.points.last().map(|(x, _)| *x).unwrap_or_else(T::zero)
    }
}

pub fn cdf_series<T: Real>(values: &[T], grid: usize) -> Result<CdfSeries<T>, RateError> {
    if values.is_empty() || grid < 2 {
        return Err(RateError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    let max = *sorted.last().unwrap();
    let n = T::of_usize(values.len());
    let mut points = Vec::with_capacity(grid);
    for j in 0..grid {
        let x = max * T::of_usize(j) / T::of_usize(grid - 1);
        let count = sorted.partition_point(|v| *v <= x);
        points.push((x, T::of_usize(count) / n));
    }
    Ok(CdfSeries { points })
}

/// Nearest-rank percentile (`p` in `[0, 1]`) of an unsorted sample.
pub fn percentile<T: Real>(values: &[T], p: T) -> Result<T, RateError> {
    if values.is_empty() {
        return Err(RateError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    let n = sorted.len();
    let rank = (p * T::of_usize(n)).ceil().as_f64() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}
