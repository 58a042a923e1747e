//! Ingredients of the three-block Hamiltonian
//!
//! ```text
//!         | H1    V1    0   |
//!     H = | V1^T  Htr   V2^T|
//!         | 0     V2    H2  |
//! ```
//!
//! `H1`, `H2` are independent GOE matrices of dimension `N`, `Htr` is the real
//! symmetric `k x k` transition-space Hamiltonian and `V1`, `V2` are `N x k`
//! couplings. Each GOE space is attached to its own set of open channels through
//! a `Lambda x N` matrix `W` whose rows are mutually orthogonal.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Coupling singular values above this fraction of `lambda` trigger a warning.
pub const WEAK_COUPLING_RATIO: f64 = 0.5;
/// Transition levels farther than this fraction of `lambda` from `E = 0` trigger a warning.
pub const BAND_CENTER_RATIO: f64 = 0.5;
/// Relative agreement at which two squared singular values count as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;
/// Relative reconstruction residual above which a decomposition is rejected.
pub const DECOMPOSITION_TOL: f64 = 1e-10;

/// How the transition-space Hamiltonian is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HtrSpec {
    /// Row-major real symmetric `k x k` matrix.
    Matrix(Vec<Vec<f64>>),
    /// Eigenvalues; the matrix is taken diagonal in the transition basis.
    Eigenvalues(Vec<f64>),
}

/// Resonance-overlap regimes for the built-in parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Level spacing ten times the typical width.
    Isolated,
    /// Level spacing half the typical width.
    Overlapping,
}

impl Preset {
    /// Spacing of the transition levels in units of the typical width.
    pub fn spacing_ratio(self) -> f64 {
        match self {
            Preset::Isolated => 10.0,
            Preset::Overlapping => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Isolated => "isolated",
            Preset::Overlapping => "overlapping",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolated" => Ok(Preset::Isolated),
            "overlapping" => Ok(Preset::Overlapping),
            other => Err(Error::InvalidArgument(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_dim: usize,
    pub k_trans: usize,
    pub lambda: f64,
    /// `v_a^2` for the channels attached to space 1.
    pub channel_strengths_1: Vec<f64>,
    /// `v_b^2` for the channels attached to space 2.
    pub channel_strengths_2: Vec<f64>,
    pub htr_spec: HtrSpec,
    /// Singular values of `V1`.
    pub sv_1: Vec<f64>,
    /// Singular values of `V2`.
    pub sv_2: Vec<f64>,
    /// Seed for the fixed part of the model (transition-space frames, and the
    /// channel matrices and left frames when those are not resampled).
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfigWarning {
    /// `max(sv) / lambda` exceeds [`WEAK_COUPLING_RATIO`].
    StrongCoupling { side: usize, ratio: f64 },
    /// A transition level lies outside `|E| <= BAND_CENTER_RATIO * lambda`.
    OffCenterLevel { index: usize, energy: f64 },
}

impl std::fmt::Display for ConfigWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigWarning::StrongCoupling { side, ratio } => {
                write!(f, "coupling singular values of side {side} reach {ratio:.3} lambda")
            }
            ConfigWarning::OffCenterLevel { index, energy } => {
                write!(
                    f,
                    "transition level {index} at E = {energy} is far from the band center"
                )
            }
        }
    }
}

/// `v^2` that makes a channel perfectly matched at the band center (`pi v^2 / lambda = 1`).
pub fn matched_strength(lambda: f64) -> f64 {
    lambda / PI
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(Preset::Isolated)
    }
}

impl ModelConfig {
    /// `N = 400`, `k = 3`, `lambda = 1`, 25 matched channels per side.
    pub fn preset(preset: Preset) -> Self {
        Self::preset_with(preset, 400, 3, 1.0, 25, 25)
    }

    /// Builds a preset for arbitrary sizes. Coupling singular values fall linearly
    /// from `0.1 lambda` to `0.03 lambda`; transition levels are equally spaced
    /// around `E = 0` at `spacing_ratio * gamma_typ`.
    pub fn preset_with(
        preset: Preset,
        n_dim: usize,
        k_trans: usize,
        lambda: f64,
        channels_1: usize,
        channels_2: usize,
    ) -> Self {
        let sv = preset_singular_values(k_trans, lambda);
        let mut cfg = ModelConfig {
            n_dim,
            k_trans,
            lambda,
            channel_strengths_1: vec![matched_strength(lambda); channels_1],
            channel_strengths_2: vec![matched_strength(lambda); channels_2],
            htr_spec: HtrSpec::Eigenvalues(Vec::new()),
            sv_1: sv.clone(),
            sv_2: sv,
            seed: 42,
        };
        cfg.apply_preset_levels(preset);
        cfg
    }

    /// Typical resonance width `(<sv_1^2> + <sv_2^2>) / lambda`, with `<.>` the
    /// mean over the `k` singular values.
    pub fn gamma_typ(&self) -> f64 {
        let mean_sq = |sv: &[f64]| {
            if sv.is_empty() {
                0.0
            } else {
                sv.iter().map(|s| s * s).sum::<f64>() / sv.len() as f64
            }
        };
        (mean_sq(&self.sv_1) + mean_sq(&self.sv_2)) / self.lambda
    }

    /// Replaces the transition spectrum by the equally spaced levels of `preset`.
    pub fn apply_preset_levels(&mut self, preset: Preset) {
        let spacing = preset.spacing_ratio() * self.gamma_typ();
        let center = (self.k_trans as f64 - 1.0) / 2.0;
        self.htr_spec = HtrSpec::Eigenvalues((0..self.k_trans).map(|m| (m as f64 - center) * spacing).collect());
    }

    /// Checks every invariant and returns all violations at once; soft
    /// conditions come back as warnings.
    pub fn validate(&self) -> Result<Vec<ConfigWarning>> {
        let mut errors = Vec::new();
        let k = self.k_trans;
        if self.n_dim == 0 {
            errors.push("n_dim must be positive".to_string());
        }
        if k == 0 {
            errors.push("k_trans must be positive".to_string());
        }
        if k > self.n_dim {
            errors.push(format!("k_trans ({k}) must not exceed n_dim ({})", self.n_dim));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            errors.push(format!("lambda must be positive and finite, got {}", self.lambda));
        }
        for (side, strengths) in [(1, &self.channel_strengths_1), (2, &self.channel_strengths_2)] {
            if strengths.is_empty() {
                errors.push(format!("channel_strengths_{side} must list at least one channel"));
            }
            if strengths.len() > self.n_dim {
                errors.push(format!(
                    "channel_strengths_{side} has {} channels, more than n_dim ({})",
                    strengths.len(),
                    self.n_dim
                ));
            }
            if strengths.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                errors.push(format!("channel_strengths_{side} must be positive and finite"));
            }
        }
        for (side, sv) in [(1, &self.sv_1), (2, &self.sv_2)] {
            if sv.len() != k {
                errors.push(format!("sv_{side} has {} values, expected k_trans = {k}", sv.len()));
            }
            if sv.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                errors.push(format!("sv_{side} must be nonnegative and finite"));
            }
        }
        match &self.htr_spec {
            HtrSpec::Eigenvalues(e) => {
                if e.len() != k {
                    errors.push(format!("htr eigenvalues: {} given, expected k_trans = {k}", e.len()));
                }
                if e.iter().any(|v| !v.is_finite()) {
                    errors.push("htr eigenvalues must be finite".to_string());
                }
            }
            HtrSpec::Matrix(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    errors.push(format!("htr matrix must be {k}x{k}"));
                } else {
                    for (i, row) in rows.iter().enumerate() {
                        for (j, &x) in row.iter().enumerate().take(i) {
                            if x != rows[j][i] {
                                errors.push(format!("htr matrix is not symmetric at ({i}, {j})"));
                            }
                        }
                    }
                }
            }
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }

        let mut warnings = Vec::new();
        for (side, sv) in [(1, &self.sv_1), (2, &self.sv_2)] {
            let ratio = sv.iter().fold(0.0f64, |m, v| m.max(*v)) / self.lambda;
            if ratio > WEAK_COUPLING_RATIO {
                warnings.push(ConfigWarning::StrongCoupling { side, ratio });
            }
        }
        for (index, energy) in self.htr_levels()?.into_iter().enumerate() {
            if energy.abs() > BAND_CENTER_RATIO * self.lambda {
                warnings.push(ConfigWarning::OffCenterLevel { index, energy });
            }
        }
        Ok(warnings)
    }

    pub fn htr_matrix(&self) -> Mat<f64> {
        match &self.htr_spec {
            HtrSpec::Eigenvalues(e) => Mat::from_fn(e.len(), e.len(), |i, j| if i == j { e[i] } else { 0.0 }),
            HtrSpec::Matrix(rows) => Mat::from_fn(rows.len(), rows.len(), |i, j| rows[i][j]),
        }
    }

    /// Eigenvalues of `Htr` in nondecreasing order.
    pub fn htr_levels(&self) -> Result<Vec<f64>> {
        match &self.htr_spec {
            HtrSpec::Eigenvalues(e) => {
                let mut e = e.clone();
                e.sort_by(f64::total_cmp);
                Ok(e)
            }
            HtrSpec::Matrix(_) => Ok(linalg::symmetric_eigen(self.htr_matrix().as_ref())?.0),
        }
    }
}

fn preset_singular_values(k: usize, lambda: f64) -> Vec<f64> {
    if k == 1 {
        return vec![0.1 * lambda];
    }
    (0..k)
        .map(|m| 0.1 * lambda * (1.0 - 0.7 * m as f64 / (k - 1) as f64))
        .collect()
}

/// One GOE draw: off-diagonal variance `lambda^2 / N`, diagonal variance `2 lambda^2 / N`.
#[derive(Debug, Clone)]
pub struct GoeSample {
    pub matrix: Mat<f64>,
    pub lambda: f64,
}

pub fn sample_goe<R: Rng + ?Sized>(n_dim: usize, lambda: f64, rng: &mut R) -> GoeSample {
    let off = lambda / (n_dim as f64).sqrt();
    let diag = off * std::f64::consts::SQRT_2;
    let mut matrix = Mat::<f64>::zeros(n_dim, n_dim);
    for j in 0..n_dim {
        for i in 0..=j {
            let z: f64 = StandardNormal.sample(rng);
            if i == j {
                matrix[(i, i)] = diag * z;
            } else {
                matrix[(i, j)] = off * z;
                matrix[(j, i)] = off * z;
            }
        }
    }
    GoeSample { matrix, lambda }
}

/// Channel couplings `W` (`Lambda x N`) with `W W^T = diag(v^2)`.
#[derive(Debug, Clone)]
pub struct ChannelMatrix {
    pub rows: Mat<f64>,
    pub strengths: Vec<f64>,
}

impl ChannelMatrix {
    pub fn n_channels(&self) -> usize {
        self.rows.nrows()
    }

    /// `max |W W^T - diag(v^2)|`.
    pub fn gram_defect(&self) -> f64 {
        let g = &self.rows * self.rows.transpose();
        let mut m = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { self.strengths[i] } else { 0.0 };
                m = m.max((g[(i, j)] - target).abs());
            }
        }
        m
    }
}

/// Orthonormalizes `Lambda` Gaussian vectors in dimension `N` and scales row `a`
/// by `sqrt(v_a^2)`.
pub fn sample_channel_matrix<R: Rng + ?Sized>(n_dim: usize, strengths: &[f64], rng: &mut R) -> Result<ChannelMatrix> {
    let frame = linalg::random_orthonormal_columns(n_dim, strengths.len(), rng)?;
    let rows = Mat::from_fn(strengths.len(), n_dim, |a, mu| strengths[a].sqrt() * frame[(mu, a)]);
    Ok(ChannelMatrix {
        rows,
        strengths: strengths.to_vec(),
    })
}

/// `V = left_frame * diag(singular_values) * right_frame^T`.
#[derive(Debug, Clone)]
pub struct CouplingBlock {
    pub v_matrix: Mat<f64>,
    pub left_frame: Mat<f64>,
    pub singular_values: Vec<f64>,
    pub right_frame: Mat<f64>,
}

impl CouplingBlock {
    pub fn from_frames(left_frame: Mat<f64>, singular_values: Vec<f64>, right_frame: Mat<f64>) -> Result<Self> {
        let k = singular_values.len();
        if left_frame.ncols() != k || right_frame.nrows() != k || right_frame.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "frames {}x{} and {}x{} do not match {k} singular values",
                left_frame.nrows(),
                left_frame.ncols(),
                right_frame.nrows(),
                right_frame.ncols()
            )));
        }
        let n = left_frame.nrows();
        let mut v_matrix = Mat::<f64>::zeros(n, k);
        for m in 0..k {
            for mp in 0..k {
                let c = singular_values[mp] * right_frame[(m, mp)];
                if c == 0.0 {
                    continue;
                }
                for mu in 0..n {
                    v_matrix[(mu, m)] += left_frame[(mu, mp)] * c;
                }
            }
        }
        Ok(CouplingBlock {
            v_matrix,
            left_frame,
            singular_values,
            right_frame,
        })
    }

    pub fn n_dim(&self) -> usize {
        self.v_matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.v_matrix.ncols()
    }

    /// Transition-space vectors `z_{j,m} = Z_{j,m} / sqrt(lambda)` as rows:
    /// `(z_m)_{m'} = sv_m * right_frame[m', m] / sqrt(lambda)`.
    pub fn z_rows(&self, lambda: f64) -> Mat<f64> {
        transition_vectors(&self.singular_values, self.right_frame.as_ref(), lambda)
    }

    /// `max |V - L diag(sv) R^T| / max |V|`.
    pub fn reconstruction_residual(&self) -> f64 {
        let rebuilt = CouplingBlock::from_frames(
            self.left_frame.clone(),
            self.singular_values.clone(),
            self.right_frame.clone(),
        )
        .map(|b| b.v_matrix);
        match rebuilt {
            Ok(r) => {
                let scale = linalg::max_abs(self.v_matrix.as_ref()).max(f64::MIN_POSITIVE);
                let mut m = 0.0f64;
                for j in 0..r.ncols() {
                    for i in 0..r.nrows() {
                        m = m.max((r[(i, j)] - self.v_matrix[(i, j)]).abs());
                    }
                }
                m / scale
            }
            Err(_) => f64::INFINITY,
        }
    }
}

/// Rows `z_m = sv_m * R[:, m] / sqrt(lambda)`.
pub fn transition_vectors(singular_values: &[f64], right_frame: MatRef<'_, f64>, lambda: f64) -> Mat<f64> {
    let k = singular_values.len();
    let s = lambda.sqrt();
    Mat::from_fn(k, k, |m, mp| singular_values[m] * right_frame[(mp, m)] / s)
}

/// Random left frame (`N x k`, orthonormal columns) and random orthogonal right
/// frame (`k x k`) around the given singular values.
pub fn synthesize_coupling<R: Rng + ?Sized>(
    n_dim: usize,
    singular_values: &[f64],
    rng: &mut R,
) -> Result<CouplingBlock> {
    let k = singular_values.len();
    if k > n_dim {
        return Err(Error::DimensionMismatch(format!("k = {k} exceeds N = {n_dim}")));
    }
    if singular_values.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("singular values must be nonnegative".into()));
    }
    let left = linalg::random_orthonormal_columns(n_dim, k, rng)?;
    let right = linalg::random_orthonormal_columns(k, k, rng)?;
    CouplingBlock::from_frames(left, singular_values.to_vec(), right)
}

#[derive(Debug, Clone)]
pub struct CouplingDecomposition {
    pub block: CouplingBlock,
    /// Two squared singular values agree within [`DEGENERACY_TOL`]; the right
    /// frame is then not unique.
    pub degenerate: bool,
    /// `max_m |W_m^2 - V_m^2|` between the spectra of `V^T V` and `V V^T`,
    /// relative to the largest eigenvalue.
    pub eigenvalue_mismatch: f64,
    pub residual: f64,
}

/// Recovers `V = O diag(sv) O_tr^T` from the two Gram matrices `V^T V` (`k x k`)
/// and `V V^T` (`N x N`). Singular values come out nonnegative and in
/// descending order.
pub fn decompose_coupling(v_matrix: MatRef<'_, f64>) -> Result<CouplingDecomposition> {
    let (n, k) = (v_matrix.nrows(), v_matrix.ncols());
    if k > n {
        return Err(Error::DimensionMismatch(format!("V is {n}x{k}; need N >= k")));
    }
    let vtv = v_matrix.transpose() * v_matrix;
    let vvt = v_matrix * v_matrix.transpose();
    let (w_sq_asc, otr_asc) = linalg::symmetric_eigen(vtv.as_ref())?;
    let (v_sq_asc, o_asc) = linalg::symmetric_eigen(vvt.as_ref())?;

    let top = w_sq_asc.last().copied().unwrap_or(0.0).max(0.0);
    // Gram eigenvalues at roundoff level carry no information about the singular value.
    let floor = (n.max(1) as f64) * f64::EPSILON * top;
    let clamp = |x: f64| if x <= floor { 0.0 } else { x };

    let w_sq: Vec<f64> = w_sq_asc.iter().rev().map(|&x| clamp(x)).collect();
    let v_sq: Vec<f64> = v_sq_asc.iter().rev().take(k).map(|&x| clamp(x)).collect();
    let eigenvalue_mismatch = w_sq
        .iter()
        .zip(&v_sq)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / top.max(f64::MIN_POSITIVE);

    let singular_values: Vec<f64> = w_sq.iter().map(|x| x.sqrt()).collect();
    let right_frame = Mat::from_fn(k, k, |i, j| otr_asc[(i, k - 1 - j)]);

    let degenerate = w_sq
        .windows(2)
        .any(|p| (p[0] - p[1]).abs() <= DEGENERACY_TOL * p[0].abs().max(p[1].abs()));

    // Columns with a nonzero singular value follow from O^T V O_tr = diag(sv);
    // the rest are completed from the null-space eigenvectors of V V^T.
    let vr = v_matrix * &right_frame;
    let mut left = Mat::<f64>::zeros(n, k);
    let mut filled = 0;
    for m in 0..k {
        if singular_values[m] > 0.0 {
            for mu in 0..n {
                left[(mu, m)] = vr[(mu, m)] / singular_values[m];
            }
            filled += 1;
        }
    }
    if filled < k {
        let mut candidates = (0..n).rev().map(|c| o_asc.col(c));
        for m in 0..k {
            if singular_values[m] > 0.0 {
                continue;
            }
            loop {
                let Some(cand) = candidates.next() else {
                    return Err(Error::NonDecomposable {
                        residual: f64::INFINITY,
                    });
                };
                let mut x: Vec<f64> = (0..n).map(|i| cand[i]).collect();
                for _pass in 0..2 {
                    for p in 0..k {
                        if p == m || (singular_values[p] == 0.0 && p > m) {
                            continue;
                        }
                        let dot: f64 = (0..n).map(|i| left[(i, p)] * x[i]).sum();
                        for (i, xi) in x.iter_mut().enumerate() {
                            *xi -= dot * left[(i, p)];
                        }
                    }
                }
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.5 {
                    for (i, xi) in x.iter().enumerate() {
                        left[(i, m)] = xi / norm;
                    }
                    break;
                }
            }
        }
    }

    let block = CouplingBlock {
        v_matrix: v_matrix.to_owned(),
        left_frame: left,
        singular_values,
        right_frame,
    };
    let residual = if linalg::max_abs(v_matrix) == 0.0 {
        0.0
    } else {
        block.reconstruction_residual()
    };
    if residual > DECOMPOSITION_TOL {
        return Err(Error::NonDecomposable { residual });
    }
    Ok(CouplingDecomposition {
        block,
        degenerate,
        eigenvalue_mismatch,
        residual,
    })
}

/// Real symmetric positive-semidefinite width matrix.
#[derive(Debug, Clone)]
pub struct WidthMatrix {
    pub gamma: Mat<f64>,
}

impl WidthMatrix {
    pub fn trace(&self) -> f64 {
        (0..self.gamma.nrows()).map(|i| self.gamma[(i, i)]).sum()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(linalg::symmetric_eigen(self.gamma.as_ref())?
            .0
            .first()
            .copied()
            .unwrap_or(0.0))
    }

    /// Block-diagonal `diag(Gamma1, 0_k, Gamma2)`.
    pub fn total(gamma_1: &WidthMatrix, k: usize, gamma_2: &WidthMatrix) -> WidthMatrix {
        let n1 = gamma_1.gamma.nrows();
        let n2 = gamma_2.gamma.nrows();
        let dim = n1 + k + n2;
        let mut gamma = Mat::<f64>::zeros(dim, dim);
        for j in 0..n1 {
            for i in 0..n1 {
                gamma[(i, j)] = gamma_1.gamma[(i, j)];
            }
        }
        let off = n1 + k;
        for j in 0..n2 {
            for i in 0..n2 {
                gamma[(off + i, off + j)] = gamma_2.gamma[(i, j)];
            }
        }
        WidthMatrix { gamma }
    }
}

/// `Gamma = 2 pi W^T W`.
pub fn width_matrix(w: &ChannelMatrix) -> WidthMatrix {
    let mut gamma = w.rows.transpose() * &w.rows;
    for j in 0..gamma.ncols() {
        for i in 0..gamma.nrows() {
            gamma[(i, j)] *= 2.0 * PI;
        }
    }
    WidthMatrix { gamma }
}

/// One sampled `(H1, H2, Htr, V1, V2, W1, W2)`.
#[derive(Debug, Clone)]
pub struct RealizationModel {
    pub h1: GoeSample,
    pub h2: GoeSample,
    pub htr: Mat<f64>,
    pub v1: CouplingBlock,
    pub v2: CouplingBlock,
    pub w1: ChannelMatrix,
    pub w2: ChannelMatrix,
}

impl RealizationModel {
    pub fn n_dim(&self) -> usize {
        self.h1.matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.htr.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.h1.lambda
    }

    pub fn channels_1(&self) -> usize {
        self.w1.n_channels()
    }

    pub fn channels_2(&self) -> usize {
        self.w2.n_channels()
    }

    /// Dimension `2N + k` of the full Hamiltonian.
    pub fn full_dim(&self) -> usize {
        2 * self.n_dim() + self.k()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.n_dim();
        let k = self.k();
        let mut problems = Vec::new();
        if self.h2.matrix.nrows() != n || self.h2.matrix.ncols() != n || self.h1.matrix.ncols() != n {
            problems.push(format!("H1 and H2 must both be {n}x{n}"));
        }
        if self.htr.ncols() != k {
            problems.push("Htr must be square".to_string());
        }
        for (name, v) in [("V1", &self.v1), ("V2", &self.v2)] {
            if v.v_matrix.nrows() != n || v.v_matrix.ncols() != k {
                problems.push(format!(
                    "{name} is {}x{}, expected {n}x{k}",
                    v.v_matrix.nrows(),
                    v.v_matrix.ncols()
                ));
            }
        }
        for (name, w) in [("W1", &self.w1), ("W2", &self.w2)] {
            if w.rows.ncols() != n {
                problems.push(format!("{name} has {} columns, expected {n}", w.rows.ncols()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(problems.join("; ")))
        }
    }

    /// Copy of the model with both transition couplings switched off.
    pub fn decoupled(&self) -> RealizationModel {
        let mut m = self.clone();
        m.v1.v_matrix = Mat::zeros(self.n_dim(), self.k());
        m.v2.v_matrix = Mat::zeros(self.n_dim(), self.k());
        m
    }

    /// `(Lambda1 + Lambda2) x (2N + k)` coupling of all channels to the full space.
    pub fn full_channel_coupling(&self) -> Mat<f64> {
        let n = self.n_dim();
        let off = n + self.k();
        let l1 = self.channels_1();
        let mut w = Mat::<f64>::zeros(l1 + self.channels_2(), self.full_dim());
        for mu in 0..n {
            for a in 0..l1 {
                w[(a, mu)] = self.w1.rows[(a, mu)];
            }
            for b in 0..self.channels_2() {
                w[(l1 + b, off + mu)] = self.w2.rows[(b, mu)];
            }
        }
        w
    }

    pub fn total_width(&self) -> WidthMatrix {
        WidthMatrix::total(&width_matrix(&self.w1), self.k(), &width_matrix(&self.w2))
    }
}

/// Full `(2N + k)`-dimensional Hamiltonian; space 1 occupies indices `0..N`,
/// the transition space `N..N+k`, space 2 `N+k..2N+k`.
pub fn assemble_full_hamiltonian(model: &RealizationModel) -> Result<Mat<f64>> {
    model.check_dimensions()?;
    let n = model.n_dim();
    let k = model.k();
    let off = n + k;
    let mut h = Mat::<f64>::zeros(model.full_dim(), model.full_dim());
    for j in 0..n {
        for i in 0..n {
            h[(i, j)] = model.h1.matrix[(i, j)];
            h[(off + i, off + j)] = model.h2.matrix[(i, j)];
        }
    }
    for m in 0..k {
        for mp in 0..k {
            h[(n + m, n + mp)] = model.htr[(m, mp)];
        }
        for mu in 0..n {
            let v1 = model.v1.v_matrix[(mu, m)];
            h[(mu, n + m)] = v1;
            h[(n + m, mu)] = v1;
            let v2 = model.v2.v_matrix[(mu, m)];
            h[(off + mu, n + m)] = v2;
            h[(n + m, off + mu)] = v2;
        }
    }
    Ok(h)
}

/// The part of a model that stays fixed across an ensemble: transition
/// spectrum, transition-space frames and, unless resampled, the left frames and
/// channel matrices.
#[derive(Debug, Clone)]
pub struct ModelTemplate {
    pub config: ModelConfig,
    pub htr: Mat<f64>,
    pub right_1: Mat<f64>,
    pub right_2: Mat<f64>,
    pub left_1: Mat<f64>,
    pub left_2: Mat<f64>,
    pub w1: ChannelMatrix,
    pub w2: ChannelMatrix,
}

impl ModelTemplate {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (n, k) = (config.n_dim, config.k_trans);
        let right_1 = linalg::random_orthonormal_columns(k, k, &mut rng)?;
        let right_2 = linalg::random_orthonormal_columns(k, k, &mut rng)?;
        let left_1 = linalg::random_orthonormal_columns(n, k, &mut rng)?;
        let left_2 = linalg::random_orthonormal_columns(n, k, &mut rng)?;
        let w1 = sample_channel_matrix(n, &config.channel_strengths_1, &mut rng)?;
        let w2 = sample_channel_matrix(n, &config.channel_strengths_2, &mut rng)?;
        Ok(ModelTemplate {
            config: config.clone(),
            htr: config.htr_matrix(),
            right_1,
            right_2,
            left_1,
            left_2,
            w1,
            w2,
        })
    }

    pub fn z1(&self) -> Mat<f64> {
        transition_vectors(&self.config.sv_1, self.right_1.as_ref(), self.config.lambda)
    }

    pub fn z2(&self) -> Mat<f64> {
        transition_vectors(&self.config.sv_2, self.right_2.as_ref(), self.config.lambda)
    }

    /// Draws fresh `H1`, `H2` and, when `resample_frames` is set, fresh left
    /// frames and channel matrices.
    pub fn sample<R: Rng + ?Sized>(&self, resample_frames: bool, rng: &mut R) -> Result<RealizationModel> {
        let cfg = &self.config;
        let h1 = sample_goe(cfg.n_dim, cfg.lambda, rng);
        let h2 = sample_goe(cfg.n_dim, cfg.lambda, rng);
        let (left_1, left_2, w1, w2) = if resample_frames {
            (
                linalg::random_orthonormal_columns(cfg.n_dim, cfg.k_trans, rng)?,
                linalg::random_orthonormal_columns(cfg.n_dim, cfg.k_trans, rng)?,
                sample_channel_matrix(cfg.n_dim, &cfg.channel_strengths_1, rng)?,
                sample_channel_matrix(cfg.n_dim, &cfg.channel_strengths_2, rng)?,
            )
        } else {
            (
                self.left_1.clone(),
                self.left_2.clone(),
                self.w1.clone(),
                self.w2.clone(),
            )
        };
        Ok(RealizationModel {
            h1,
            h2,
            htr: self.htr.clone(),
            v1: CouplingBlock::from_frames(left_1, cfg.sv_1.clone(), self.right_1.clone())?,
            v2: CouplingBlock::from_frames(left_2, cfg.sv_2.clone(), self.right_2.clone())?,
            w1,
            w2,
        })
    }
}
