//! Experiment pipeline: layout, covariance averaging, user drops and
//! scheduling, pilot contamination, precoding for every enabled scheme,
//! per-user rates, and aggregation, with deterministic seeding and
//! parallel trials.
//!
//! Seeding discipline: the averaged interference covariance uses a stream
//! disjoint from the trials; every trial derives its seed from
//! `(master seed, trial index)`, and every link stream from
//! `(trial seed, bs, cell, user)`, so results are reproducible and
//! independent of worker count or execution order.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{
    one_ring_az_lags, one_ring_el_lags, sample_from_covariance, single_path_eigen,
    standard_complex_vector, toeplitz_from_lags, AzElCovariance, ChannelEigen, ChannelError,
    QuadratureSpec,
};
use crate::geometry::{
    angular_separation_ok, build_hex_layout, build_single_cell, drop_users, link_geometry,
    CellLayout, GeometryError, LinkGeometry, UserPlacement,
};
use crate::linalg::{fast_adjoint_mul, fast_mul, low_rank_eigh, CMat, CVec, EigenBasis, LinalgError};
use crate::precoding::{
    augmented_layer1, avg_interference_cov, conjugate_beamforming, layer1, layer2_from_blocks,
    InterferenceCov, InterferenceModel, Layer1, PrecoderStack, PrecodingError,
};
use crate::linalg::zf_direction;
use crate::rate::{
    cb_ceiling, cdf_series, edge_lower_bound_from_power, min_singular_value, percentile,
    single_user_rate_from_power, CdfSeries, LinkBudget, RateError, SinrComponents,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Precoding(#[from] PrecodingError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelModel {
    OneRing,
    SinglePath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerPolicy {
    Random,
    Separated,
}

/// Precoding schemes the harness can evaluate side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scheme {
    Mlp,
    MlpAugmented,
    Cb,
    Zf,
    SingleUser,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Mlp,
        Scheme::MlpAugmented,
        Scheme::Cb,
        Scheme::Zf,
        Scheme::SingleUser,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Mlp => "mlp",
            Scheme::MlpAugmented => "mlp_augmented",
            Scheme::Cb => "cb",
            Scheme::Zf => "zf",
            Scheme::SingleUser => "single_user",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Scheme::ALL.iter().copied().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    pub n_v: usize,
    pub n_h: usize,
    pub spacing_wl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutConfig {
    pub r_cell_m: f64,
    pub h_bs_m: f64,
    pub d_min_m: f64,
    /// 1 (isolated test cell) or 7 (single-tier ring).
    pub cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    pub delta_a_rad: f64,
    pub delta_e_rad: f64,
    pub pl_exponent: f64,
    pub carrier_ghz: f64,
    pub d_ref_m: f64,
    /// Weight interferer covariances by their link path loss.
    pub interferer_path_loss: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetConfig {
    pub tx_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub k_users: usize,
    pub pool_per_cell: usize,
    pub trials: usize,
    pub cov_realizations: usize,
    pub eps_rel: f64,
    /// Extension angle of the augmented first layer.
    pub delta_ext_rad: f64,
    pub scheduler: SchedulerPolicy,
    pub seed: u64,
    /// 0 means "let the runtime decide".
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub array: ArrayConfig,
    pub layout: LayoutConfig,
    pub channel: ChannelConfig,
    pub budget: BudgetConfig,
    pub run: RunConfig,
    pub schemes: Vec<Scheme>,
}

impl Default for ScenarioConfig {
    /// Experiment defaults: 100x40 UPA at half-wavelength spacing, 7 cells
    /// of 100 m radius with 35 m BS height, one-ring spreads of 5/3 degrees,
    /// 4 GHz carrier, 10 MHz bandwidth, 7 dB noise figure, K = 20 users,
    /// 40 covariance realizations, extension angle twice the elevation
    /// spread.
    fn default() -> Self {
        ScenarioConfig {
            array: ArrayConfig {
                n_v: 100,
                n_h: 40,
                spacing_wl: 0.5,
            },
            layout: LayoutConfig {
                r_cell_m: 100.0,
                h_bs_m: 35.0,
                d_min_m: 10.0,
                cells: 7,
            },
            channel: ChannelConfig {
                model: ChannelModel::OneRing,
                delta_a_rad: 5f64.to_radians(),
                delta_e_rad: 3f64.to_radians(),
                pl_exponent: 3.5,
                carrier_ghz: 4.0,
                d_ref_m: 1.0,
                interferer_path_loss: true,
            },
            budget: BudgetConfig {
                tx_power_dbm: 35.0,
                bandwidth_hz: 10e6,
                noise_figure_db: 7.0,
            },
            run: RunConfig {
                k_users: 20,
                pool_per_cell: 40,
                trials: 50,
                cov_realizations: 40,
                eps_rel: 1e-3,
                delta_ext_rad: 6f64.to_radians(),
                scheduler: SchedulerPolicy::Random,
                seed: 1,
                workers: 0,
            },
            schemes: vec![
                Scheme::Mlp,
                Scheme::MlpAugmented,
                Scheme::Cb,
                Scheme::Zf,
                Scheme::SingleUser,
            ],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.array.n_v == 0 || self.array.n_h == 0 {
            return bad("array dimensions must be >= 1".into());
        }
        if self.array.spacing_wl <= 0.0 {
            return bad("element spacing must be positive".into());
        }
        if self.layout.cells != 1 && self.layout.cells != 7 {
            return bad(format!("cells must be 1 or 7, got {}", self.layout.cells));
        }
        if self.layout.r_cell_m <= 0.0 || self.layout.h_bs_m <= 0.0 {
            return bad("cell radius and BS height must be positive".into());
        }
        if self.layout.d_min_m < 0.0 || self.layout.d_min_m >= self.layout.r_cell_m {
            return bad("d_min must satisfy 0 <= d_min < r_cell".into());
        }
        if self.channel.model == ChannelModel::OneRing
            && (self.channel.delta_a_rad <= 0.0 || self.channel.delta_e_rad <= 0.0)
        {
            return bad("one-ring angular spreads must be positive".into());
        }
        if self.channel.delta_a_rad < 0.0 || self.channel.delta_e_rad < 0.0 {
            return bad("angular spreads must be nonnegative".into());
        }
        if self.channel.pl_exponent <= 0.0 || self.channel.d_ref_m <= 0.0 {
            return bad("path-loss exponent and reference distance must be positive".into());
        }
        if self.budget.bandwidth_hz <= 0.0 {
            return bad("bandwidth must be positive".into());
        }
        if self.run.k_users == 0 || self.run.pool_per_cell == 0 || self.run.trials == 0 {
            return bad("k_users, pool size, and trials must be >= 1".into());
        }
        if self.run.k_users > self.run.pool_per_cell {
            return bad(format!(
                "k_users = {} exceeds pool size {}",
                self.run.k_users, self.run.pool_per_cell
            ));
        }
        if self.run.cov_realizations == 0 {
            return bad("covariance realizations must be >= 1".into());
        }
        if !(0.0 < self.run.eps_rel && self.run.eps_rel < 1.0) {
            return bad("eps_rel must lie in (0, 1)".into());
        }
        if self.run.delta_ext_rad < 0.0 {
            return bad("delta_ext must be nonnegative".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme must be enabled".into());
        }
        Ok(())
    }

    pub fn has_scheme(&self, s: Scheme) -> bool {
        self.schemes.contains(&s)
    }
}

// ---------------------------------------------------------------------------
// deterministic stream derivation

const SALT_COVARIANCE: u64 = 0x636f_7661_7269_616e;
const SALT_TRIAL: u64 = 0x7472_6961_6c73_2121;
const SALT_DROP: u64 = 0x6472_6f70_7321_2121;
const SALT_SCHED: u64 = 0x7363_6865_6475_6c65;
const SALT_LINK: u64 = 0x6c69_6e6b_7374_7265;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix2(a: u64, b: u64) -> u64 {
    splitmix(splitmix(a).wrapping_add(b.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    mix2(mix2(master, SALT_TRIAL), trial as u64)
}

fn link_rng(trial: u64, bs: usize, cell: usize, user: usize) -> ChaCha8Rng {
    let id = mix2(
        mix2(mix2(trial, SALT_LINK), ((bs as u64) << 32) | cell as u64),
        user as u64,
    );
    ChaCha8Rng::seed_from_u64(id)
}

// ---------------------------------------------------------------------------
// results

/// Everything measured for one scheduled center-cell user in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub trial: usize,
    pub cell: usize,
    pub user: usize,
    pub d_m: f64,
    pub phi_rad: f64,
    pub theta_rad: f64,
    /// Spectral efficiency per enabled scheme, bits/s/Hz.
    pub rates: BTreeMap<Scheme, f64>,
    /// Inter-cell interference power seen by this user, per transmitting
    /// scheme (normalized like the SINR terms).
    pub leakage: BTreeMap<Scheme, f64>,
    /// Pilot-contamination ceiling of conjugate beamforming; `None` when
    /// there is no interfering cell.
    pub cb_ceiling: Option<f64>,
    /// `|h|^2`, the channel power entering the single-user bound.
    pub channel_power: f64,
    /// Cell-edge lower bound on the multi-layer rate (one-ring model only).
    pub edge_bound: Option<f64>,
    /// Pairwise angular separation against all co-scheduled center users.
    pub separation_ok: bool,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub records: Vec<UserRecord>,
    /// Users a BS dropped to keep zero-forcing feasible (all cells).
    pub feasibility_drops: usize,
    /// Scheduled center-cell users violating the separation target.
    pub separation_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeAggregate {
    pub mean: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
    pub mean_leakage: f64,
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub records: Vec<UserRecord>,
    pub schemes: Vec<Scheme>,
    pub aggregates: BTreeMap<Scheme, SchemeAggregate>,
    pub feasibility_drops: usize,
    pub separation_violations: usize,
}

impl RateReport {
    pub fn rates_of(&self, scheme: Scheme) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.rates.get(&scheme).copied())
            .collect()
    }

    pub fn leakage_of(&self, scheme: Scheme) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.leakage.get(&scheme).copied())
            .collect()
    }

    pub fn cdf_of(&self, scheme: Scheme, grid: usize) -> Result<CdfSeries<f64>, RateError> {
        cdf_series(&self.rates_of(scheme), grid)
    }

    fn from_trials(schemes: &[Scheme], mut trials: Vec<TrialResult>) -> Self {
        trials.sort_by_key(|t| t.trial);
        let mut records = Vec::new();
        let mut drops = 0;
        let mut violations = 0;
        for t in trials {
            drops += t.feasibility_drops;
            violations += t.separation_violations;
            records.extend(t.records);
        }
        let mut aggregates = BTreeMap::new();
        for &s in schemes {
            let rates: Vec<f64> = records
                .iter()
                .filter_map(|r| r.rates.get(&s).copied())
                .collect();
            if rates.is_empty() {
                continue;
            }
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            let leak: Vec<f64> = records
                .iter()
                .filter_map(|r| r.leakage.get(&s).copied())
                .collect();
            let mean_leakage = if leak.is_empty() {
                0.0
            } else {
                leak.iter().sum::<f64>() / leak.len() as f64
            };
            aggregates.insert(
                s,
                SchemeAggregate {
                    mean,
                    p05: percentile(&rates, 0.05).unwrap_or(0.0),
                    p50: percentile(&rates, 0.50).unwrap_or(0.0),
                    p95: percentile(&rates, 0.95).unwrap_or(0.0),
                    mean_leakage,
                },
            );
        }
        RateReport {
            records,
            schemes: schemes.to_vec(),
            aggregates,
            feasibility_drops: drops,
            separation_violations: violations,
        }
    }
}

// ---------------------------------------------------------------------------
// scenario setup

/// Per-scenario state shared read-only across trials.
#[derive(Debug, Clone)]
pub struct SharedScenario {
    pub layout: CellLayout<f64>,
    pub budget: LinkBudget<f64>,
    pub interference: Vec<InterferenceCov<f64>>,
    /// Plain null-space filter per cell (when the plain scheme is enabled).
    pub plain_layer1: Vec<Layer1<f64>>,
    /// Augmented filter and interference edge angle per cell.
    pub augmented_layer1: Vec<(Layer1<f64>, f64)>,
}

fn interference_model(cfg: &ScenarioConfig) -> InterferenceModel<f64> {
    InterferenceModel {
        n_v: cfg.array.n_v,
        spacing_wl: cfg.array.spacing_wl,
        delta_e: cfg.channel.delta_e_rad,
        pl_exponent: cfg.channel.pl_exponent,
        d_ref: cfg.channel.d_ref_m,
        d_min: cfg.layout.d_min_m,
        include_path_loss: cfg.channel.interferer_path_loss,
        single_path: cfg.channel.model == ChannelModel::SinglePath,
    }
}

/// Build the layout, link budget, and per-cell first-layer filters from
/// dedicated covariance-realization draws (stream disjoint from trials).
pub fn prepare_scenario(cfg: &ScenarioConfig) -> Result<SharedScenario, HarnessError> {
    cfg.validate()?;
    let layout = if cfg.layout.cells == 1 {
        build_single_cell(cfg.layout.r_cell_m, cfg.layout.h_bs_m)?
    } else {
        build_hex_layout(cfg.layout.r_cell_m, cfg.layout.h_bs_m)?
    };
    let budget = LinkBudget::new(
        cfg.budget.tx_power_dbm,
        cfg.budget.bandwidth_hz,
        cfg.budget.noise_figure_db,
        cfg.run.k_users,
    )?;
    let needs_plain = cfg.has_scheme(Scheme::Mlp);
    let needs_aug = cfg.has_scheme(Scheme::MlpAugmented);
    let mut interference = Vec::new();
    let mut plain = Vec::new();
    let mut augmented = Vec::new();
    if needs_plain || needs_aug {
        let model = interference_model(cfg);
        for cell in 0..layout.cells() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix2(mix2(cfg.run.seed, SALT_COVARIANCE), cell as u64));
            let cov = avg_interference_cov(
                &layout,
                &model,
                cell,
                cfg.run.cov_realizations,
                cfg.run.k_users,
                &mut rng,
            )?;
            if needs_plain {
                plain.push(if cov.r_i.norm() == 0.0 {
                    Layer1::identity(cfg.array.n_v)
                } else {
                    layer1(&cov, cfg.run.eps_rel)?
                });
            }
            if needs_aug {
                augmented.push(if cov.r_i.norm() == 0.0 {
                    (Layer1::identity(cfg.array.n_v), std::f64::consts::FRAC_PI_2)
                } else {
                    augmented_layer1(
                        &cov,
                        cfg.array.n_v,
                        cfg.array.spacing_wl,
                        cfg.run.delta_ext_rad,
                        cfg.run.eps_rel,
                    )?
                });
            }
            interference.push(cov);
        }
    }
    Ok(SharedScenario {
        layout,
        budget,
        interference,
        plain_layer1: plain,
        augmented_layer1: augmented,
    })
}

// ---------------------------------------------------------------------------
// scheduling

/// Select `k` users from a cell's pool given their own-BS link geometry.
/// `Random` draws uniformly without replacement; `Separated` greedily
/// enforces pairwise angular separation and falls back to random fill,
/// reporting how many selections violate it.
pub fn schedule_users<R: rand::Rng>(
    own_geometry: &[LinkGeometry<f64>],
    k: usize,
    policy: SchedulerPolicy,
    delta_a: f64,
    delta_e: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, usize), HarnessError> {
    let pool = own_geometry.len();
    if k > pool {
        return Err(HarnessError::InvalidConfig(format!(
            "cannot schedule {k} users from a pool of {pool}"
        )));
    }
    // partial Fisher-Yates shuffle fixes the visiting order for both policies
    let mut order: Vec<usize> = (0..pool).collect();
    for i in 0..pool.saturating_sub(1) {
        let j = i + (rng.random::<u64>() as usize) % (pool - i);
        order.swap(i, j);
    }
    match policy {
        SchedulerPolicy::Random => Ok((order[..k].to_vec(), 0)),
        SchedulerPolicy::Separated => {
            let mut chosen: Vec<usize> = Vec::with_capacity(k);
            let mut rejected: Vec<usize> = Vec::new();
            for &cand in &order {
                if chosen.len() == k {
                    break;
                }
                let ok = chosen.iter().all(|&c| {
                    angular_separation_ok(&own_geometry[cand], &own_geometry[c], delta_a, delta_e)
                });
                if ok {
                    chosen.push(cand);
                } else {
                    rejected.push(cand);
                }
            }
            let mut violations = 0;
            for &cand in &rejected {
                if chosen.len() == k {
                    break;
                }
                chosen.push(cand);
                violations += 1;
            }
            Ok((chosen, violations))
        }
    }
}

// ---------------------------------------------------------------------------
// per-trial pipeline

/// Per-pilot estimation state at one BS: the contaminated instantaneous
/// channel sum plus the covariance structure of every link sharing the
/// pilot. The estimated covariance is the Kronecker sum
/// `Sum_c g_c (R^A_c kron R^E_c)`; its effective eigenbasis is extracted
/// *after* the first-layer filter, which kills whole interferer terms and
/// is what decontaminates the estimate.
struct PilotEstimate {
    h_hat: CVec<f64>,
    links: Vec<LinkStat>,
}

/// Covariance factors of one pilot-sharing link, kept in compact form.
struct LinkStat {
    gain: f64,
    /// Eigen-structure of the azimuth factor, truncated at the relative
    /// threshold within the link.
    az: EigenBasis<f64>,
    el: ElStat,
}

enum ElStat {
    /// First-column lags of the Toeplitz one-ring elevation factor.
    Lags(Vec<num_complex::Complex<f64>>),
    /// Unit-modulus elevation steering vector of a single-path link.
    Steering(CVec<f64>),
}

impl ElStat {
    fn toeplitz(lags: &[num_complex::Complex<f64>]) -> CMat<f64> {
        let n = lags.len();
        CMat::<f64>::from_fn(n, n, |r, c| {
            if c >= r {
                lags[c - r]
            } else {
                lags[r - c].conj()
            }
        })
    }

    /// `tr(U^NI^H R^E U^NI)`, an upper bound on the strongest filtered
    /// eigenvalue, in O(N_V) from precomputed projector diagonal sums.
    fn filtered_trace(&self, filter: &FilterContext) -> f64 {
        match self {
            ElStat::Lags(lags) => {
                let mut acc = lags[0].re * filter.diag_sums[0].re;
                for d in 1..lags.len() {
                    acc += 2.0 * (lags[d] * filter.diag_sums[d]).re;
                }
                acc.max(0.0)
            }
            ElStat::Steering(a) => {
                let p = filter.null_basis.adjoint() * a;
                p.norm_squared()
            }
        }
    }

    /// Exact eigen-structure of the filtered factor `U^NI^H R^E U^NI`,
    /// expressed in filtered coordinates.
    fn filtered_eigen(
        &self,
        filter: &FilterContext,
        eps_rel: f64,
    ) -> Result<EigenBasis<f64>, LinalgError> {
        match self {
            ElStat::Lags(lags) => {
                let t = Self::toeplitz(lags);
                let half = fast_adjoint_mul(filter.null_basis, &t);
                let proj = fast_mul(&half, filter.null_basis);
                Ok(crate::linalg::hermitian_eig(&proj)?.truncated(eps_rel))
            }
            ElStat::Steering(a) => {
                let p = filter.null_basis.adjoint() * a;
                Ok(low_rank_eigh(&[p])?.truncated(eps_rel))
            }
        }
    }
}

/// A first-layer filter together with the projector diagonal sums used by
/// the cheap trace screen: `diag_sums[d] = Sum_m P[m+d, m]`, `P = U U^H`.
struct FilterContext<'a> {
    null_basis: &'a CMat<f64>,
    diag_sums: Vec<num_complex::Complex<f64>>,
}

impl<'a> FilterContext<'a> {
    fn new(l1: &'a Layer1<f64>) -> Self {
        let p = fast_mul(&l1.null_basis, &l1.null_basis.adjoint());
        let n = p.nrows();
        let mut diag_sums = Vec::with_capacity(n);
        for d in 0..n {
            let mut acc = num_complex::Complex::new(0.0, 0.0);
            for m in 0..n - d {
                acc += p[(m + d, m)];
            }
            diag_sums.push(acc);
        }
        FilterContext {
            null_basis: &l1.null_basis,
            diag_sums,
        }
    }
}

/// Effective eigen block of one pilot: the dominant eigen-structure of the
/// filtered covariance sum `Sum_c g_c R^A_c kron (U^NI^H R^E_c U^NI)`,
/// assembled from the per-term Kronecker eigenpairs.
///
/// Links whose filtered strength upper bound falls below the relative
/// threshold are pruned before their exact filtered eigen-structure is ever
/// computed (the trace bounds the largest eigenvalue, so pruning is safe).
/// Kept eigenpairs are collected across links, sorted by weight, and
/// orthonormalized.
fn effective_basis(
    links: &[LinkStat],
    filter: &FilterContext,
    eps_rel: f64,
) -> Result<CMat<f64>, HarnessError> {
    // order links by the cheap strength bound, strongest first
    let mut order: Vec<(f64, usize)> = links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let top_az = l.az.values.first().copied().unwrap_or(0.0);
            (l.gain * top_az * l.el.filtered_trace(filter), i)
        })
        .collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite strengths").then(a.1.cmp(&b.1)));

    struct Candidate {
        weight: f64,
        link: usize,
        az_idx: usize,
        el: CVec<f64>,
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut s_max = 0.0f64;
    for &(bound, i) in &order {
        if bound <= 0.0 || (s_max > 0.0 && bound < eps_rel * s_max) {
            continue; // upper bound already below the cut: term cannot matter
        }
        let link = &links[i];
        let el_eig = link.el.filtered_eigen(filter, eps_rel)?;
        if el_eig.rank() == 0 {
            continue;
        }
        let top_az = link.az.values.first().copied().unwrap_or(0.0);
        s_max = s_max.max(link.gain * top_az * el_eig.values[0]);
        for (ai, av) in link.az.values.iter().enumerate() {
            for (ei, ev) in el_eig.values.iter().enumerate() {
                let weight = link.gain * av * ev;
                if weight >= eps_rel * s_max {
                    candidates.push(Candidate {
                        weight,
                        link: i,
                        az_idx: ai,
                        el: el_eig.vectors.column(ei).into_owned(),
                    });
                }
            }
        }
    }
    // the running maximum can only grow, so re-apply the final cut
    candidates.retain(|c| c.weight >= eps_rel * s_max);
    candidates.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .expect("finite weights")
            .then(a.link.cmp(&b.link))
            .then(a.az_idx.cmp(&b.az_idx))
    });

    let r_ni = filter.null_basis.ncols();
    let n_h = links
        .first()
        .map(|l| l.az.vectors.nrows())
        .unwrap_or(0);
    let rows = n_h * r_ni;
    let max_cols = candidates.len().min(rows);
    // columns from a single term are a Kronecker product of orthonormal
    // sets, so orthonormalization is only needed across terms
    let single_term = candidates
        .windows(2)
        .all(|w| w[0].link == w[1].link);
    let mut basis = CMat::<f64>::zeros(rows, max_cols);
    let mut kept = 0;
    for cand in &candidates {
        if kept == max_cols {
            break;
        }
        // kron(u_az, el), azimuth-major
        let u_az = links[cand.link].az.vectors.column(cand.az_idx);
        let mut col = CVec::<f64>::zeros(rows);
        for a in 0..n_h {
            let s = u_az[a];
            for e in 0..r_ni {
                col[a * r_ni + e] = s * cand.el[e];
            }
        }
        if !single_term {
            // two-pass modified Gram-Schmidt against the kept columns
            for _ in 0..2 {
                for j in 0..kept {
                    let q = basis.column(j);
                    let coeff = q.dotc(&col);
                    col.axpy(-coeff, &q, num_complex::Complex::new(1.0, 0.0));
                }
            }
        }
        let norm = col.norm();
        if norm * norm > 1e-6 {
            col /= num_complex::Complex::new(norm, 0.0);
            basis.set_column(kept, &col);
            kept += 1;
        }
    }
    Ok(basis.columns(0, kept).into_owned())
}

/// Clean per-link data kept only for center-cell serving links.
struct ServingLink {
    geom: LinkGeometry<f64>,
    eigen: ChannelEigen<f64>,
    h: CVec<f64>,
}

/// Build one BS's multi-layer precoder from its pilot estimates, dropping
/// users (weakest effective channel first) until zero-forcing is feasible.
/// Returns the composed `N x K` precoder with zero columns for dropped
/// users, the per-user amplitudes, and the drop count.
fn mlp_precoder(
    l1: &Layer1<f64>,
    estimates: &[PilotEstimate],
    n_h: usize,
    eps_rel: f64,
) -> Result<(CMat<f64>, Vec<f64>, usize), HarnessError> {
    let k = estimates.len();
    let n = l1.n_v() * n_h;
    let filter = FilterContext::new(l1);
    let blocks: Vec<CMat<f64>> = estimates
        .iter()
        .map(|e| effective_basis(&e.links, &filter, eps_rel))
        .collect::<Result<_, _>>()?;
    let filtered: Vec<CVec<f64>> = estimates
        .iter()
        .map(|e| l1.filter_channel(&e.h_hat, n_h))
        .collect();

    let mut active: Vec<usize> = (0..k).collect();
    loop {
        if active.is_empty() {
            return Ok((CMat::<f64>::zeros(n, k), vec![0.0; k], k));
        }
        let active_blocks: Vec<CMat<f64>> =
            active.iter().map(|&i| blocks[i].clone()).collect();
        let f2 = layer2_from_blocks(&active_blocks)?;
        // effective channels through layers 1-2: F2^H (F1^H h_hat), batched
        let mut filtered_mat = CMat::<f64>::zeros(f2.nrows(), active.len());
        for (col, &i) in active.iter().enumerate() {
            filtered_mat.set_column(col, &filtered[i]);
        }
        let h_eff = fast_adjoint_mul(&f2, &filtered_mat);
        match PrecoderStack::build(l1.clone(), f2, &h_eff, n_h) {
            Ok(stack) => {
                let mut composed = CMat::<f64>::zeros(n, k);
                let mut upsilon = vec![0.0; k];
                for (col, &i) in active.iter().enumerate() {
                    composed.set_column(i, &stack.composed.column(col));
                    upsilon[i] = stack.upsilon[col];
                }
                return Ok((composed, upsilon, k - active.len()));
            }
            Err(
                PrecodingError::InsufficientDimensions { .. }
                | PrecodingError::Linalg(LinalgError::RankDeficient { .. }),
            ) => {
                let (pos, _) = active
                    .iter()
                    .enumerate()
                    .map(|(pos, &i)| (pos, filtered[i].norm()))
                    .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite norms"))
                    .expect("nonempty active set");
                active.remove(pos);
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Single-cell zero-forcing with the same drop-to-feasibility policy.
fn zf_precoder(est: &[CVec<f64>]) -> Result<(CMat<f64>, usize), HarnessError> {
    let k = est.len();
    let n = est[0].len();
    let mut active: Vec<usize> = (0..k).collect();
    loop {
        if active.is_empty() {
            return Ok((CMat::<f64>::zeros(n, k), k));
        }
        let mut h = CMat::<f64>::zeros(n, active.len());
        for (col, &i) in active.iter().enumerate() {
            h.set_column(col, &est[i]);
        }
        match zf_direction(&h) {
            Ok(d) => {
                let mut f = CMat::<f64>::zeros(n, k);
                for (col, &i) in active.iter().enumerate() {
                    let norm = d.column(col).norm();
                    if norm > 0.0 {
                        let scaled = d.column(col) / num_complex::Complex::new(norm, 0.0);
                        f.set_column(i, &scaled);
                    }
                }
                return Ok((f, k - active.len()));
            }
            Err(LinalgError::RankDeficient { .. }) => {
                let (pos, _) = active
                    .iter()
                    .enumerate()
                    .map(|(pos, &i)| (pos, est[i].norm()))
                    .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite norms"))
                    .expect("nonempty active set");
                active.remove(pos);
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Run one trial end to end: drop users, schedule, synthesize channels,
/// estimate with pilot contamination, build every enabled precoder, and
/// measure rates for the center-cell users.
pub fn run_trial(
    cfg: &ScenarioConfig,
    shared: &SharedScenario,
    trial: usize,
) -> Result<TrialResult, HarnessError> {
    let seed = trial_seed(cfg.run.seed, trial);
    let layout = &shared.layout;
    let cells = layout.cells();
    let k = cfg.run.k_users;
    let n_v = cfg.array.n_v;
    let n_h = cfg.array.n_h;
    let n = n_v * n_h;
    let snr = shared.budget.snr_per_stream;
    let single_path = cfg.channel.model == ChannelModel::SinglePath;

    // user drops and scheduling
    let mut drop_rng = ChaCha8Rng::seed_from_u64(mix2(seed, SALT_DROP));
    let pool = drop_users(layout, cfg.run.pool_per_cell, cfg.layout.d_min_m, &mut drop_rng);
    let mut scheduled: Vec<Vec<UserPlacement<f64>>> = Vec::with_capacity(cells);
    let mut separation_violations = 0;
    for c in 0..cells {
        let cell_pool: Vec<&UserPlacement<f64>> =
            pool.iter().filter(|u| u.cell_index == c).collect();
        let geoms: Vec<LinkGeometry<f64>> = cell_pool
            .iter()
            .map(|u| {
                link_geometry(
                    &layout.bs_positions[c],
                    layout.h_bs,
                    &u.xy,
                    cfg.channel.pl_exponent,
                    cfg.channel.d_ref_m,
                )
            })
            .collect::<Result<_, _>>()?;
        let mut sched_rng = ChaCha8Rng::seed_from_u64(mix2(mix2(seed, SALT_SCHED), c as u64));
        let (idx, violations) = schedule_users(
            &geoms,
            k,
            cfg.run.scheduler,
            cfg.channel.delta_a_rad,
            cfg.channel.delta_e_rad,
            &mut sched_rng,
        )?;
        if c == 0 {
            separation_violations = violations;
        }
        scheduled.push(idx.into_iter().map(|i| cell_pool[i].clone()).collect());
    }

    // channel synthesis and pilot-contaminated estimation, per BS and pilot
    let mut estimates: Vec<Vec<PilotEstimate>> = Vec::with_capacity(cells);
    let mut serving: Vec<ServingLink> = Vec::with_capacity(k);
    let mut center_links: Vec<Vec<CVec<f64>>> = vec![Vec::with_capacity(k); cells];

    let needs_estimates = cfg.schemes.iter().any(|s| *s != Scheme::SingleUser);
    for b in 0..cells {
        let mut per_pilot = Vec::with_capacity(k);
        for pilot in 0..k {
            let mut links = Vec::with_capacity(cells);
            let mut h_hat = CVec::<f64>::zeros(n);
            for c in 0..cells {
                let user = &scheduled[c][pilot];
                let geom = link_geometry(
                    &layout.bs_positions[b],
                    layout.h_bs,
                    &user.xy,
                    cfg.channel.pl_exponent,
                    cfg.channel.d_ref_m,
                )?;
                let mut rng = link_rng(seed, b, c, pilot);
                let h = if single_path {
                    let eigen = single_path_eigen(&geom, n_v, n_h, cfg.array.spacing_wl);
                    let beta = standard_complex_vector(1, &mut rng);
                    let real = eigen.synthesize(&beta);
                    links.push(LinkStat {
                        gain: geom.rho,
                        az: eigen.az.clone(),
                        el: ElStat::Steering(
                            eigen.el.vectors.column(0).into_owned()
                                * num_complex::Complex::new((n_v as f64).sqrt(), 0.0),
                        ),
                    });
                    if b == 0 && c == 0 {
                        serving.push(ServingLink {
                            geom,
                            eigen,
                            h: real.h.clone(),
                        });
                    }
                    real.h
                } else {
                    let quad = QuadratureSpec::default();
                    let az_lags = one_ring_az_lags(
                        &geom,
                        cfg.channel.delta_a_rad,
                        n_h,
                        cfg.array.spacing_wl,
                        &quad,
                    )?;
                    let el_lags = one_ring_el_lags(
                        &geom,
                        cfg.channel.delta_e_rad,
                        n_v,
                        cfg.array.spacing_wl,
                        &quad,
                    )?;
                    let cov = AzElCovariance {
                        r_az: toeplitz_from_lags(&az_lags),
                        r_el: toeplitz_from_lags(&el_lags),
                    };
                    if needs_estimates {
                        let az = crate::linalg::hermitian_eig(&cov.r_az)?
                            .truncated(cfg.run.eps_rel);
                        links.push(LinkStat {
                            gain: geom.rho,
                            az,
                            el: ElStat::Lags(el_lags),
                        });
                    }
                    if b == 0 && c == 0 {
                        // eigen route: the serving channel lies exactly in
                        // its own covariance subspace
                        let eigen =
                            ChannelEigen::from_covariance(&cov, geom.rho, cfg.run.eps_rel)?;
                        let real = eigen.kl_sample(&mut rng);
                        let h = real.h.clone();
                        serving.push(ServingLink { geom, eigen, h: real.h });
                        h
                    } else {
                        sample_from_covariance(&cov, geom.rho, &mut rng)?
                    }
                };
                if c == 0 {
                    center_links[b].push(h.clone());
                }
                h_hat += h;
            }
            per_pilot.push(PilotEstimate { h_hat, links });
        }
        estimates.push(per_pilot);
    }

    // precoders per BS per scheme
    let mut precoders: BTreeMap<Scheme, Vec<CMat<f64>>> = BTreeMap::new();
    let mut feasibility_drops = 0;
    for &scheme in &cfg.schemes {
        match scheme {
            Scheme::Mlp | Scheme::MlpAugmented => {
                let mut per_bs = Vec::with_capacity(cells);
                for b in 0..cells {
                    let l1 = if scheme == Scheme::Mlp {
                        &shared.plain_layer1[b]
                    } else {
                        &shared.augmented_layer1[b].0
                    };
                    let (f, _ups, drops) = mlp_precoder(l1, &estimates[b], n_h, cfg.run.eps_rel)?;
                    feasibility_drops += drops;
                    per_bs.push(f);
                }
                precoders.insert(scheme, per_bs);
            }
            Scheme::Cb => {
                let mut per_bs = Vec::with_capacity(cells);
                for est in estimates.iter() {
                    let hs: Vec<CVec<f64>> = est.iter().map(|e| e.h_hat.clone()).collect();
                    per_bs.push(conjugate_beamforming(&hs)?);
                }
                precoders.insert(scheme, per_bs);
            }
            Scheme::Zf => {
                let mut per_bs = Vec::with_capacity(cells);
                for est in estimates.iter() {
                    let hs: Vec<CVec<f64>> = est.iter().map(|e| e.h_hat.clone()).collect();
                    let (f, drops) = zf_precoder(&hs)?;
                    feasibility_drops += drops;
                    per_bs.push(f);
                }
                precoders.insert(scheme, per_bs);
            }
            Scheme::SingleUser => {}
        }
    }

    // rates for the center cell only; cross powers batched per (scheme, BS)
    let needs_edge_bound = !single_path && cfg.has_scheme(Scheme::Mlp);
    let mut center_mats: Vec<CMat<f64>> = Vec::with_capacity(cells);
    for b in 0..cells {
        let mut m = CMat::<f64>::zeros(n, k);
        for (j, h) in center_links[b].iter().enumerate() {
            m.set_column(j, h);
        }
        center_mats.push(m);
    }
    // cross[scheme][b][(u, m)] = h_{b,0,u}^H F_b[:, m]
    let mut cross: BTreeMap<Scheme, Vec<CMat<f64>>> = BTreeMap::new();
    for (&scheme, per_bs) in &precoders {
        let mats: Vec<CMat<f64>> = (0..cells)
            .map(|b| fast_adjoint_mul(&center_mats[b], &per_bs[b]))
            .collect();
        cross.insert(scheme, mats);
    }
    let mut records = Vec::with_capacity(k);
    for user in 0..k {
        let link = &serving[user];
        let mut rates = BTreeMap::new();
        let mut leakage = BTreeMap::new();
        for &scheme in &cfg.schemes {
            if scheme == Scheme::SingleUser {
                rates.insert(
                    scheme,
                    single_user_rate_from_power(link.h.norm_squared(), snr),
                );
                continue;
            }
            let mats = &cross[&scheme];
            let desired = mats[0][(user, user)].norm_sqr();
            let mut intra = 0.0;
            for m in 0..k {
                if m != user {
                    intra += mats[0][(user, m)].norm_sqr();
                }
            }
            let mut inter = 0.0;
            for mat in mats.iter().skip(1) {
                for m in 0..k {
                    inter += mat[(user, m)].norm_sqr();
                }
            }
            let comps = SinrComponents {
                desired,
                intra_cell: intra,
                inter_cell: inter,
                noise: 1.0 / snr,
            };
            rates.insert(scheme, comps.rate());
            leakage.insert(scheme, comps.inter_cell);
        }
        let cb_ceil = if cells > 1 {
            let rho_int: Vec<f64> = (1..cells)
                .map(|b| {
                    link_geometry(
                        &layout.bs_positions[b],
                        layout.h_bs,
                        &scheduled[0][user].xy,
                        cfg.channel.pl_exponent,
                        cfg.channel.d_ref_m,
                    )
                    .map(|g| g.rho)
                })
                .collect::<Result<_, _>>()?;
            Some(cb_ceiling(link.geom.rho, &rho_int, snr)?)
        } else {
            None
        };
        let edge_bound = if needs_edge_bound {
            let u_eff = shared.plain_layer1[0].null_basis.adjoint() * &link.eigen.el.vectors;
            let s_min = min_singular_value(&u_eff);
            Some(edge_lower_bound_from_power(
                link.h.norm_squared(),
                s_min,
                snr,
            ))
        } else {
            None
        };
        let separation_ok = (0..k).all(|m| {
            m == user
                || angular_separation_ok(
                    &serving[user].geom,
                    &serving[m].geom,
                    cfg.channel.delta_a_rad,
                    cfg.channel.delta_e_rad,
                )
        });
        records.push(UserRecord {
            trial,
            cell: 0,
            user,
            d_m: link.geom.d,
            phi_rad: link.geom.phi,
            theta_rad: link.geom.theta,
            rates,
            leakage,
            cb_ceiling: cb_ceil,
            channel_power: link.h.norm_squared(),
            edge_bound,
            separation_ok,
        });
    }

    Ok(TrialResult {
        trial,
        records,
        feasibility_drops,
        separation_violations,
    })
}

/// Run the whole scenario: shared statistics once, then all trials
/// (parallel when workers permit), merged in trial order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RateReport, HarnessError> {
    let shared = prepare_scenario(cfg)?;
    let trials: Vec<Result<TrialResult, HarnessError>> = if cfg.run.workers == 1 {
        (0..cfg.run.trials)
            .map(|t| run_trial(cfg, &shared, t))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers) // 0 = rayon default
            .build()
            .map_err(|e| HarnessError::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| {
            (0..cfg.run.trials)
                .into_par_iter()
                .map(|t| run_trial(cfg, &shared, t))
                .collect()
        })
    };
    let trials: Vec<TrialResult> = trials.into_iter().collect::<Result<_, _>>()?;
    Ok(RateReport::from_trials(&cfg.schemes, trials))
}

/// Parameter axes the sweep command can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NV,
    NH,
    HBs,
    RCell,
    TxPower,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::NV => "n_v",
            SweepAxis::NH => "n_h",
            SweepAxis::HBs => "h_bs",
            SweepAxis::RCell => "r_cell",
            SweepAxis::TxPower => "tx_power",
        }
    }

    pub fn parse(s: &str) -> Option<SweepAxis> {
        [
            SweepAxis::NV,
            SweepAxis::NH,
            SweepAxis::HBs,
            SweepAxis::RCell,
            SweepAxis::TxPower,
        ]
        .into_iter()
        .find(|a| a.name() == s)
    }

    pub fn apply(&self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig, HarnessError> {
        let mut out = cfg.clone();
        match self {
            SweepAxis::NV => out.array.n_v = positive_count(value, "n_v")?,
            SweepAxis::NH => out.array.n_h = positive_count(value, "n_h")?,
            SweepAxis::HBs => out.layout.h_bs_m = value,
            SweepAxis::RCell => out.layout.r_cell_m = value,
            SweepAxis::TxPower => out.budget.tx_power_dbm = value,
        }
        Ok(out)
    }
}

fn positive_count(value: f64, what: &str) -> Result<usize, HarnessError> {
    if value < 1.0 || value.fract() != 0.0 {
        return Err(HarnessError::InvalidConfig(format!(
            "{what} must be a positive integer, got {value}"
        )));
    }
    Ok(value as usize)
}

/// One sweep row: the axis value, the per-scheme aggregates, and the full
/// report behind them.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub aggregates: BTreeMap<Scheme, SchemeAggregate>,
    pub report: RateReport,
}

/// Re-run the scenario for each value of the swept axis under the same seed
/// discipline, so only the swept parameter changes between rows.
pub fn sweep(
    cfg: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::InvalidConfig("sweep needs values".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let cfg_v = axis.apply(cfg, v)?;
        let report = run_scenario(&cfg_v)?;
        rows.push(SweepRow {
            value: v,
            aggregates: report.aggregates.clone(),
            report,
        });
    }
    Ok(rows)
}
